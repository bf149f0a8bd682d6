//! Position-plane slices of a six-dimensional cover at fixed velocities.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use serde::Serialize;

use safeset_core::cbf::{barrier_value, CbfParams, PairState};
use safeset_core::{CellId, CellLookup, CoverLattice};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SliceSpec {
    /// `(v0x, v0y, v1x, v1y)`.
    pub velocities: [f64; 4],
    /// Grid points per position axis.
    pub resolution: usize,
}

impl SliceSpec {
    pub fn validate(&self, params: &CbfParams) -> Result<(), CliError> {
        if self.velocities.iter().any(|v| !(v.is_finite() && v.abs() <= params.v_max)) {
            return Err(CliError::Config(format!(
                "slice velocities {:?} must lie in [-{}, {}]",
                self.velocities, params.v_max, params.v_max
            )));
        }
        if self.resolution < 2 {
            return Err(CliError::Config("slice resolution must be >= 2".into()));
        }
        Ok(())
    }

    /// File stem `slice_<v0x>_<v0y>_<v1x>_<v1y>`.
    pub fn stem(&self) -> String {
        let parts: Vec<String> = self.velocities.iter().map(|v| format!("{v:.2}")).collect();
        format!("slice_{}", parts.join("_"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridPoint {
    pub px: f64,
    pub py: f64,
    pub in_failure: bool,
    /// Barrier value, `None` at coincident positions.
    pub h: Option<f64>,
    pub safe: bool,
    pub band: bool,
}

/// Per-side cell counts for one slice.
///
/// A side is receding when `dp · dv > 0` at the cell centroid. An unsafe
/// cell beyond the contour is one that is not in the cover, is not a failure
/// cell and has `h > 0`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct SideCounts {
    pub cells: usize,
    pub band: usize,
    pub unsafe_beyond_contour: usize,
}

impl SideCounts {
    pub fn ratio(&self) -> f64 {
        if self.band == 0 {
            if self.unsafe_beyond_contour == 0 {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            self.unsafe_beyond_contour as f64 / self.band as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SliceSummary {
    pub velocities: [f64; 4],
    pub receding: SideCounts,
    pub approaching: SideCounts,
}

pub struct Slice {
    pub spec: SliceSpec,
    pub points: Vec<GridPoint>,
    pub summary: SliceSummary,
    limit: f64,
    d_s: f64,
}

fn state(px: f64, py: f64, v: &[f64; 4]) -> [f64; 6] {
    [px, py, v[0], v[1], v[2], v[3]]
}

fn barrier(s: &[f64; 6], params: &CbfParams) -> Option<f64> {
    PairState::from_slice(s).ok().and_then(|p| barrier_value(&p, params).ok())
}

/// Evaluates a slice. `band` is the cover's critical band.
pub fn compute_slice(
    cover: &CoverLattice,
    band: &BTreeSet<CellId>,
    params: &CbfParams,
    spec: SliceSpec,
) -> Result<Slice, CliError> {
    spec.validate(params)?;
    let lat = cover.lattice();
    if lat.dim() != 6 {
        return Err(CliError::Config(format!("slice needs a 6-dimensional cover, got {}", lat.dim())));
    }
    let l = params.pos_limit;
    let v = spec.velocities;
    let n = spec.resolution;
    let mut points = Vec::with_capacity(n * n);
    for j in 0..n {
        for i in 0..n {
            let px = -l + (i as f64 + 0.5) * 2.0 * l / n as f64;
            let py = -l + (j as f64 + 0.5) * 2.0 * l / n as f64;
            let s = state(px, py, &v);
            let (safe, in_band) = match cover.cell_of(&s) {
                CellLookup::Active(id) => (true, band.contains(&id)),
                _ => (false, false),
            };
            points.push(GridPoint {
                px,
                py,
                in_failure: px.hypot(py) < params.d_s,
                h: barrier(&s, params),
                safe,
                band: in_band,
            });
        }
    }

    // one lattice cell per position index, at the velocity cell holding v
    let anchor = lat
        .locate(&state(0.0, 0.0, &v))
        .ok_or_else(|| CliError::Config("slice velocities outside the lattice".into()))?;
    let idx = lat.index(anchor);
    let dv = [v[2] - v[0], v[3] - v[1]];
    let mut summary = SliceSummary { velocities: v, receding: SideCounts::default(), approaching: SideCounts::default() };
    for i0 in 0..lat.counts()[0] {
        for i1 in 0..lat.counts()[1] {
            let mut cell = idx.clone();
            cell.0[0] = i0;
            cell.0[1] = i1;
            let id = lat.id(&cell).expect("index inside lattice");
            let c = lat.centroid(id);
            let (px, py) = (c[0], c[1]);
            if px.hypot(py) < params.d_s {
                continue;
            }
            let closing = px * dv[0] + py * dv[1];
            let side = if closing > 0.0 { &mut summary.receding } else { &mut summary.approaching };
            side.cells += 1;
            if cover.is_active(id) {
                side.band += band.contains(&id) as usize;
            } else if barrier(&state(px, py, &v), params).is_some_and(|h| h > 0.0) {
                side.unsafe_beyond_contour += 1;
            }
        }
    }
    Ok(Slice { spec, points, summary, limit: l, d_s: params.d_s })
}

impl Slice {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("px,py,in_failure,h,safe,band\n");
        for p in &self.points {
            let h = p.h.map(|h| format!("{h}")).unwrap_or_default();
            let _ = writeln!(out, "{},{},{},{},{},{}", p.px, p.py, p.in_failure as u8, h, p.safe as u8, p.band as u8);
        }
        out
    }

    /// Heatmap of cell status with the failure disc and the `h = 0` contour.
    pub fn to_svg(&self) -> String {
        let n = self.spec.resolution;
        let size = 600.0;
        let px = size / n as f64;
        let l = self.limit;
        let to_screen = |x: f64, y: f64| ((x + l) / (2.0 * l) * size, (l - y) / (2.0 * l) * size);
        let mut svg = String::new();
        let _ = writeln!(
            svg,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#,
            w = size,
            h = size + 40.0
        );
        for (k, p) in self.points.iter().enumerate() {
            let (i, j) = (k % n, k / n);
            let color = if p.in_failure {
                "#d62728"
            } else if p.band {
                "#6baed6"
            } else if p.safe {
                "#2171b5"
            } else {
                "#e0e0e0"
            };
            let _ = writeln!(
                svg,
                r#"<rect x="{:.3}" y="{:.3}" width="{:.3}" height="{:.3}" fill="{color}"/>"#,
                i as f64 * px,
                size - (j + 1) as f64 * px,
                px + 0.05,
                px + 0.05
            );
        }
        let (cx, cy) = to_screen(0.0, 0.0);
        let _ = writeln!(
            svg,
            r##"<circle cx="{cx:.3}" cy="{cy:.3}" r="{:.3}" fill="none" stroke="#7f0000" stroke-width="1.5"/>"##,
            self.d_s / (2.0 * l) * size
        );
        let mut path = String::new();
        for ((x0, y0), (x1, y1)) in self.contour() {
            let (a, b) = to_screen(x0, y0);
            let (c, d) = to_screen(x1, y1);
            let _ = write!(path, "M{a:.2},{b:.2}L{c:.2},{d:.2}");
        }
        let _ = writeln!(svg, r##"<path d="{path}" fill="none" stroke="#000000" stroke-width="1.5"/>"##);
        let v = self.spec.velocities;
        let _ = writeln!(
            svg,
            r#"<text x="8" y="{:.0}" font-family="monospace" font-size="13">v0=({:.2},{:.2}) v1=({:.2},{:.2})  receding {}/{}  approaching {}/{}</text>"#,
            size + 26.0,
            v[0],
            v[1],
            v[2],
            v[3],
            self.summary.receding.unsafe_beyond_contour,
            self.summary.receding.band,
            self.summary.approaching.unsafe_beyond_contour,
            self.summary.approaching.band
        );
        svg.push_str("</svg>\n");
        svg
    }

    /// Marching-squares segments of `h = 0` over the grid.
    fn contour(&self) -> Vec<((f64, f64), (f64, f64))> {
        let n = self.spec.resolution;
        let at = |i: usize, j: usize| &self.points[j * n + i];
        let mut segs = Vec::new();
        for j in 0..n - 1 {
            for i in 0..n - 1 {
                let corners = [at(i, j), at(i + 1, j), at(i + 1, j + 1), at(i, j + 1)];
                let Some(h) = corners.iter().map(|p| p.h).collect::<Option<Vec<f64>>>() else {
                    continue;
                };
                let mut cross = Vec::new();
                for e in 0..4 {
                    let (a, b) = (e, (e + 1) % 4);
                    if (h[a] > 0.0) != (h[b] > 0.0) {
                        let t = h[a] / (h[a] - h[b]);
                        let (pa, pb) = (corners[a], corners[b]);
                        cross.push((pa.px + t * (pb.px - pa.px), pa.py + t * (pb.py - pa.py)));
                    }
                }
                for pair in cross.chunks_exact(2) {
                    segs.push((pair[0], pair[1]));
                }
            }
        }
        segs
    }
}
