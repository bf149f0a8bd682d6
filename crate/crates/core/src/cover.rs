//! Extended δ-covering sets over box domains and the δ-disk graph.
//!
//! A [`CoverLattice`] tiles the domain with a regular grid of axis-aligned
//! cells. Per dimension there are `m_i = ceil((hi_i - lo_i) / (2 δ_i))` cells
//! of width `(hi_i - lo_i) / m_i <= 2 δ_i`, so every cell is contained in the
//! extended δ-neighbourhood of its centroid and every centroid lies inside the
//! domain. Cells are half-open `[c - w/2, c + w/2)` except the last one in each
//! dimension, which is closed, so each in-domain point has exactly one cell.
//!
//! Cells are addressed either by their integer multi-index ([`CellIndex`]) or
//! by the mixed-radix linear key ([`CellId`]) used internally.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;
use std::io::{BufRead, Write};

use fixedbitset::FixedBitSet;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scenario::{DomainBox, ExitHandling, FailureRegion};

/// Largest lattice (before exclusion) a cover may address.
pub const MAX_LATTICE_CELLS: u64 = 1 << 30;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DeltaVector(Vec<f64>);

impl DeltaVector {
    pub fn new(delta: Vec<f64>) -> Result<Self> {
        if delta.is_empty() || delta.iter().any(|d| !(d.is_finite() && *d > 0.0)) {
            return Err(Error::Config(format!("delta must be finite and positive, got {delta:?}")));
        }
        Ok(Self(delta))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Integer multi-index of a lattice cell.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CellIndex(pub Vec<u64>);

impl fmt::Display for CellIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, x) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{x}")?;
        }
        write!(f, ")")
    }
}

/// Linear key of a cell within one lattice.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CellId(pub u64);

/// Grid geometry shared by covers and exclusion levels.
#[derive(Debug, Clone, PartialEq)]
pub struct Lattice {
    domain: DomainBox,
    counts: Vec<u64>,
    strides: Vec<u64>,
    width: Vec<f64>,
    total: u64,
}

fn cells_for(width: f64, delta: f64) -> u64 {
    // tolerate representation error in widths that are exact multiples of 2δ
    let x = width / (2.0 * delta);
    let m = (x - 1e-9 * x.max(1.0)).ceil();
    (m.max(1.0)) as u64
}

impl Lattice {
    pub fn new(domain: DomainBox, counts: Vec<u64>) -> Result<Self> {
        let n = domain.dim();
        if counts.len() != n {
            return Err(Error::Dimension {
                what: "lattice counts",
                expected: n,
                got: counts.len(),
            });
        }
        if counts.contains(&0) {
            return Err(Error::Config("lattice counts must be positive".into()));
        }
        let mut strides = vec![0u64; n];
        let mut total: u64 = 1;
        for i in (0..n).rev() {
            strides[i] = total;
            total = total
                .checked_mul(counts[i])
                .ok_or_else(|| Error::Resource("lattice index space overflows u64".into()))?;
        }
        if total > MAX_LATTICE_CELLS {
            return Err(Error::Resource(format!(
                "lattice has {total} cells, limit is {MAX_LATTICE_CELLS}"
            )));
        }
        let width = (0..n).map(|i| domain.width(i) / counts[i] as f64).collect();
        Ok(Self {
            domain,
            counts,
            strides,
            width,
            total,
        })
    }

    pub fn for_delta(domain: DomainBox, delta: &DeltaVector) -> Result<Self> {
        let d = delta.as_slice();
        if d.len() != domain.dim() {
            return Err(Error::Dimension {
                what: "delta",
                expected: domain.dim(),
                got: d.len(),
            });
        }
        let counts = (0..domain.dim()).map(|i| cells_for(domain.width(i), d[i])).collect();
        Self::new(domain, counts)
    }

    pub fn domain(&self) -> &DomainBox {
        &self.domain
    }

    pub fn dim(&self) -> usize {
        self.counts.len()
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    /// Cell widths per dimension.
    pub fn widths(&self) -> &[f64] {
        &self.width
    }

    pub fn total_cells(&self) -> u64 {
        self.total
    }

    pub fn id(&self, index: &CellIndex) -> Option<CellId> {
        if index.0.len() != self.dim() {
            return None;
        }
        let mut key = 0u64;
        for (i, &x) in index.0.iter().enumerate() {
            if x >= self.counts[i] {
                return None;
            }
            key += x * self.strides[i];
        }
        Some(CellId(key))
    }

    pub fn index(&self, id: CellId) -> CellIndex {
        CellIndex((0..self.dim()).map(|i| self.coord(id, i)).collect())
    }

    #[inline]
    pub fn coord(&self, id: CellId, i: usize) -> u64 {
        (id.0 / self.strides[i]) % self.counts[i]
    }

    pub fn centroid(&self, id: CellId) -> Vec<f64> {
        (0..self.dim())
            .map(|i| self.domain.lo()[i] + (self.coord(id, i) as f64 + 0.5) * self.width[i])
            .collect()
    }

    /// Cell containing `s` under the half-open convention, or `None` when `s`
    /// is outside the domain.
    pub fn locate(&self, s: &[f64]) -> Option<CellId> {
        if s.len() != self.dim() {
            return None;
        }
        let mut key = 0u64;
        for (i, &x) in s.iter().enumerate() {
            let (lo, hi) = (self.domain.lo()[i], self.domain.hi()[i]);
            if !(x >= lo && x <= hi) {
                return None;
            }
            let m = self.counts[i];
            let k = (((x - lo) / self.width[i]).floor() as u64).min(m - 1);
            key += k * self.strides[i];
        }
        Some(CellId(key))
    }

    /// Offset the cell by `delta` in dimension `i`, if it stays in the lattice.
    #[inline]
    pub fn shifted(&self, id: CellId, i: usize, delta: i64) -> Option<CellId> {
        let c = self.coord(id, i) as i64 + delta;
        if c < 0 || c >= self.counts[i] as i64 {
            return None;
        }
        Some(CellId((id.0 as i64 + delta * self.strides[i] as i64) as u64))
    }

    /// Stencil radius (in cells) per dimension for a ∞-distance budget.
    pub fn stencil_radius(&self, reach: &[f64]) -> Vec<i64> {
        (0..self.dim())
            .map(|i| (reach[i] / self.width[i] + 0.5 + 1e-12).floor() as i64)
            .collect()
    }

    /// All lattice cells other than `id` whose box lies within ∞-distance
    /// `reach` (element-wise) of `id`'s centroid.
    pub fn neighbours_within(&self, id: CellId, reach: &[f64]) -> Vec<CellId> {
        let radius = self.stencil_radius(reach);
        let mut out = Vec::new();
        let mut cur = vec![id];
        for i in 0..self.dim() {
            let mut next = Vec::with_capacity(cur.len() * (2 * radius[i] as usize + 1));
            for &c in &cur {
                for d in -radius[i]..=radius[i] {
                    if let Some(s) = self.shifted(c, i, d) {
                        next.push(s);
                    }
                }
            }
            cur = next;
        }
        for c in cur {
            if c != id {
                out.push(c);
            }
        }
        out
    }

    /// Whether the centroid of `id` is within `reach` of the domain exterior.
    pub fn near_exterior(&self, id: CellId, reach: &[f64]) -> bool {
        self.near_exterior_in(id, reach, |_| true)
    }

    /// As [`Lattice::near_exterior`], looking only at dimensions where `open(i)`.
    pub fn near_exterior_in(&self, id: CellId, reach: &[f64], open: impl Fn(usize) -> bool) -> bool {
        (0..self.dim()).filter(|&i| open(i)).any(|i| {
            let c = self.domain.lo()[i] + (self.coord(id, i) as f64 + 0.5) * self.width[i];
            c - self.domain.lo()[i] <= reach[i] || self.domain.hi()[i] - c <= reach[i]
        })
    }
}

/// Result of a point lookup in a cover.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CellLookup {
    Active(CellId),
    Inactive(CellId),
    Outside,
}

/// A set of active lattice cells: the finite union of their neighbourhoods is
/// the covered region.
#[derive(Debug, Clone)]
pub struct CoverLattice {
    lattice: Lattice,
    delta: DeltaVector,
    active: FixedBitSet,
    count: usize,
}

impl PartialEq for CoverLattice {
    fn eq(&self, other: &Self) -> bool {
        self.lattice == other.lattice && self.active == other.active
    }
}

impl CoverLattice {
    /// An empty cover at resolution `delta`.
    pub fn empty(domain: DomainBox, delta: DeltaVector) -> Result<Self> {
        let lattice = Lattice::for_delta(domain, &delta)?;
        let active = FixedBitSet::with_capacity(lattice.total_cells() as usize);
        Ok(Self {
            lattice,
            delta,
            active,
            count: 0,
        })
    }

    pub fn lattice(&self) -> &Lattice {
        &self.lattice
    }

    pub fn delta(&self) -> &DeltaVector {
        &self.delta
    }

    pub fn len(&self) -> usize {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    #[inline]
    pub fn is_active(&self, id: CellId) -> bool {
        self.active.contains(id.0 as usize)
    }

    /// Active cells in ascending key order.
    pub fn active(&self) -> impl Iterator<Item = CellId> + '_ {
        self.active.ones().map(|k| CellId(k as u64))
    }

    pub fn activate(&mut self, id: CellId) -> bool {
        let k = id.0 as usize;
        if self.active.contains(k) {
            return false;
        }
        self.active.insert(k);
        self.count += 1;
        true
    }

    pub fn deactivate(&mut self, id: CellId) -> bool {
        let k = id.0 as usize;
        if !self.active.contains(k) {
            return false;
        }
        self.active.set(k, false);
        self.count -= 1;
        true
    }

    pub fn centroid(&self, id: CellId) -> Vec<f64> {
        self.lattice.centroid(id)
    }

    pub fn cell_of(&self, s: &[f64]) -> CellLookup {
        match self.lattice.locate(s) {
            None => CellLookup::Outside,
            Some(id) if self.is_active(id) => CellLookup::Active(id),
            Some(id) => CellLookup::Inactive(id),
        }
    }

    /// Whether both covers address the same lattice.
    pub fn same_resolution(&self, other: &CoverLattice) -> bool {
        self.lattice == other.lattice
    }

    /// Drops every active cell whose centroid satisfies `pred`. Returns the
    /// removed cells.
    pub fn retain_centroids(&mut self, mut keep: impl FnMut(&[f64]) -> bool) -> Vec<CellId> {
        let ids: Vec<CellId> = self.active().collect();
        let mut removed = Vec::new();
        for id in ids {
            if !keep(&self.centroid(id)) {
                self.deactivate(id);
                removed.push(id);
            }
        }
        removed
    }

    /// Writes one row per active cell: index tuple, centroid tuple, status.
    pub fn write_csv<W: Write>(&self, band: &BTreeSet<CellId>, mut w: W) -> Result<()> {
        let n = self.lattice.dim();
        let mut header: Vec<String> = (0..n).map(|i| format!("i{i}")).collect();
        header.extend((0..n).map(|i| format!("c{i}")));
        header.push("status".into());
        writeln!(w, "{}", header.join(","))?;
        for id in self.active() {
            let idx = self.lattice.index(id);
            let c = self.centroid(id);
            let mut row: Vec<String> = idx.0.iter().map(|x| x.to_string()).collect();
            row.extend(c.iter().map(|x| format!("{x}")));
            row.push(if band.contains(&id) { "band" } else { "active" }.into());
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }

    /// Rebuilds a cover from a CSV snapshot at the given resolution.
    pub fn read_csv<R: BufRead>(domain: DomainBox, delta: DeltaVector, r: R) -> Result<Self> {
        let mut cover = Self::empty(domain, delta)?;
        let n = cover.lattice.dim();
        for (lineno, line) in r.lines().enumerate() {
            let line = line?;
            if lineno == 0 || line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 2 * n + 1 {
                return Err(Error::Config(format!(
                    "cover csv line {}: expected {} fields, got {}",
                    lineno + 1,
                    2 * n + 1,
                    fields.len()
                )));
            }
            let idx = fields[..n]
                .iter()
                .map(|f| f.trim().parse::<u64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::Config(format!("cover csv line {}: {e}", lineno + 1)))?;
            let id = cover.lattice.id(&CellIndex(idx)).ok_or_else(|| {
                Error::Config(format!("cover csv line {}: index outside lattice", lineno + 1))
            })?;
            cover.activate(id);
        }
        Ok(cover)
    }
}

/// Activates every lattice cell whose centroid is outside both the failure
/// region and the excluded region.
pub fn build_cover(
    domain: &DomainBox,
    delta: &DeltaVector,
    failure: &dyn FailureRegion,
    excluded: &ExcludedRegion,
) -> Result<CoverLattice> {
    let mut cover = CoverLattice::empty(domain.clone(), delta.clone())?;
    for k in 0..cover.lattice.total_cells() {
        let id = CellId(k);
        let c = cover.lattice.centroid(id);
        if !failure.contains(&c) && !excluded.contains(&c) {
            cover.activate(id);
        }
    }
    if cover.is_empty() {
        log::warn!("cover at delta {:?} is empty after exclusions", delta.as_slice());
    }
    Ok(cover)
}

/// Splits every active cell into `prod(factors)` children; children inherit
/// the active status and tile their parent exactly.
pub fn refine(cover: &CoverLattice, factors: &[u64]) -> Result<CoverLattice> {
    let n = cover.lattice.dim();
    if factors.len() != n {
        return Err(Error::Dimension {
            what: "refinement factors",
            expected: n,
            got: factors.len(),
        });
    }
    if factors.contains(&0) {
        return Err(Error::Config("refinement factors must be >= 1".into()));
    }
    let mut counts = Vec::with_capacity(n);
    for i in 0..n {
        counts.push(
            cover.lattice.counts[i]
                .checked_mul(factors[i])
                .ok_or_else(|| Error::Resource("refined index space overflows".into()))?,
        );
    }
    let lattice = Lattice::new(cover.lattice.domain.clone(), counts)?;
    let delta = DeltaVector(
        cover
            .delta
            .as_slice()
            .iter()
            .zip(factors)
            .map(|(d, f)| d / *f as f64)
            .collect(),
    );
    let mut out = CoverLattice {
        active: FixedBitSet::with_capacity(lattice.total_cells() as usize),
        lattice,
        delta,
        count: 0,
    };
    let children: u64 = factors.iter().product();
    for parent in cover.active() {
        let base: Vec<u64> = (0..n).map(|i| cover.lattice.coord(parent, i) * factors[i]).collect();
        for code in 0..children {
            let mut c = code;
            let mut key = 0u64;
            for i in (0..n).rev() {
                let r = c % factors[i];
                c /= factors[i];
                key += (base[i] + r) * out.lattice.strides[i];
            }
            out.activate(CellId(key));
        }
    }
    Ok(out)
}

/// Integer factors taking `cover` to the lattice implied by `delta`.
pub fn refinement_factors(cover: &CoverLattice, delta: &DeltaVector) -> Result<Vec<u64>> {
    let target = Lattice::for_delta(cover.lattice.domain.clone(), delta)?;
    let mut factors = Vec::with_capacity(target.dim());
    for i in 0..target.dim() {
        let (from, to) = (cover.lattice.counts[i], target.counts[i]);
        if to % from != 0 {
            return Err(Error::Config(format!(
                "dimension {i}: {to} cells is not a refinement of {from} cells (delta {} -> {})",
                cover.delta.as_slice()[i],
                delta.as_slice()[i]
            )));
        }
        factors.push(to / from);
    }
    Ok(factors)
}

/// Refines to the lattice implied by `delta`, keeping `delta` as the nominal
/// resolution.
pub fn refine_to(cover: &CoverLattice, delta: &DeltaVector) -> Result<CoverLattice> {
    let factors = refinement_factors(cover, delta)?;
    let mut out = refine(cover, &factors)?;
    out.delta = delta.clone();
    Ok(out)
}

/// Directed δ-disk graph over cells.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DiskGraph {
    succ: BTreeMap<CellId, BTreeSet<CellId>>,
    pred: BTreeMap<CellId, BTreeSet<CellId>>,
    self_loops_rejected: usize,
}

impl DiskGraph {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds `from -> to`. Self-loops are rejected and counted; duplicates are
    /// ignored. Returns whether a new edge was inserted.
    pub fn add_edge(&mut self, from: CellId, to: CellId) -> bool {
        if from == to {
            self.self_loops_rejected += 1;
            return false;
        }
        let fresh = self.succ.entry(from).or_default().insert(to);
        if fresh {
            self.pred.entry(to).or_default().insert(from);
        }
        fresh
    }

    pub fn has_edge(&self, from: CellId, to: CellId) -> bool {
        self.succ.get(&from).is_some_and(|s| s.contains(&to))
    }

    pub fn edge_count(&self) -> usize {
        self.succ.values().map(|s| s.len()).sum()
    }

    pub fn self_loops_rejected(&self) -> usize {
        self.self_loops_rejected
    }

    pub fn edges(&self) -> impl Iterator<Item = (CellId, CellId)> + '_ {
        self.succ.iter().flat_map(|(a, bs)| bs.iter().map(move |b| (*a, *b)))
    }

    /// `targets` together with every vertex that has a directed path into
    /// one of them.
    pub fn ancestors(&self, targets: &BTreeSet<CellId>) -> BTreeSet<CellId> {
        let mut seen = targets.clone();
        let mut queue: VecDeque<CellId> = targets.iter().copied().collect();
        while let Some(v) = queue.pop_front() {
            if let Some(ps) = self.pred.get(&v) {
                for &p in ps {
                    if seen.insert(p) {
                        queue.push_back(p);
                    }
                }
            }
        }
        seen
    }

    /// Drops every edge incident to `v`.
    pub fn remove_vertex(&mut self, v: CellId) {
        if let Some(out) = self.succ.remove(&v) {
            for t in out {
                if let Some(p) = self.pred.get_mut(&t) {
                    p.remove(&v);
                    if p.is_empty() {
                        self.pred.remove(&t);
                    }
                }
            }
        }
        if let Some(inc) = self.pred.remove(&v) {
            for s in inc {
                if let Some(o) = self.succ.get_mut(&s) {
                    o.remove(&v);
                    if o.is_empty() {
                        self.succ.remove(&s);
                    }
                }
            }
        }
    }

    pub fn clear(&mut self) {
        self.succ.clear();
        self.pred.clear();
    }
}

/// Cells known to lead to failure, kept at the resolution they were found.
#[derive(Debug, Clone, PartialEq)]
pub struct ExcludedRegion {
    domain: DomainBox,
    levels: Vec<(Lattice, BTreeSet<CellId>)>,
}

impl ExcludedRegion {
    pub fn new(domain: DomainBox) -> Self {
        Self {
            domain,
            levels: Vec::new(),
        }
    }

    pub fn domain(&self) -> &DomainBox {
        &self.domain
    }

    pub fn add(&mut self, lattice: &Lattice, cells: impl IntoIterator<Item = CellId>) {
        debug_assert_eq!(lattice.domain(), &self.domain);
        let pos = match self.levels.iter().position(|(l, _)| l == lattice) {
            Some(p) => p,
            None => {
                self.levels.push((lattice.clone(), BTreeSet::new()));
                self.levels.len() - 1
            }
        };
        self.levels[pos].1.extend(cells);
    }

    pub fn contains(&self, s: &[f64]) -> bool {
        self.levels
            .iter()
            .any(|(l, cells)| l.locate(s).is_some_and(|id| cells.contains(&id)))
    }

    /// Total number of boxes over all resolutions.
    pub fn len(&self) -> usize {
        self.levels.iter().map(|(_, c)| c.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `(counts, cell index)` of every stored box.
    pub fn boxes(&self) -> impl Iterator<Item = (&[u64], CellIndex)> + '_ {
        self.levels
            .iter()
            .flat_map(|(l, cells)| cells.iter().map(move |c| (l.counts(), l.index(*c))))
    }
}

/// Deactivates `cells`, drops their edges and records them as excluded.
pub fn remove_cells(
    cover: &mut CoverLattice,
    graph: &mut DiskGraph,
    cells: &BTreeSet<CellId>,
    excluded: &mut ExcludedRegion,
) -> Result<()> {
    if let Some(c) = cells.iter().find(|c| !cover.is_active(**c)) {
        return Err(Error::Precondition(format!(
            "cell {} is not active",
            cover.lattice.index(*c)
        )));
    }
    for &c in cells {
        cover.deactivate(c);
        graph.remove_vertex(c);
    }
    excluded.add(&cover.lattice, cells.iter().copied());
    Ok(())
}

/// Whether an active cell belongs to the s̄-critical band: its centroid is
/// within ∞-distance `reach` (element-wise) of the uncovered complement
/// (domain exterior, inactive cells, or the failure region).
///
/// With `exits` given, the exterior only counts in dimensions where leaving
/// the domain ends the run; a saturated face cannot be crossed.
pub fn is_band_cell(
    cover: &CoverLattice,
    id: CellId,
    reach: &[f64],
    failure: Option<&dyn FailureRegion>,
    exits: Option<&[ExitHandling]>,
) -> bool {
    let lat = &cover.lattice;
    let open = |i: usize| exits.is_none_or(|e| e[i] == ExitHandling::ExitTerminatesRun);
    if lat.near_exterior_in(id, reach, open) {
        return true;
    }
    if lat
        .neighbours_within(id, reach)
        .into_iter()
        .any(|nb| !cover.is_active(nb))
    {
        return true;
    }
    match failure {
        Some(f) => f.intersects_box(&lat.centroid(id), reach),
        None => false,
    }
}

/// The s̄-critical band of the cover.
pub fn critical_band(
    cover: &CoverLattice,
    step_bound: &[f64],
    failure: Option<&dyn FailureRegion>,
    exits: Option<&[ExitHandling]>,
) -> BTreeSet<CellId> {
    let w = cover.lattice.widths();
    if step_bound.iter().zip(cover.delta.as_slice()).any(|(s, d)| s < d) {
        log::debug!("step bound {step_bound:?} smaller than delta {:?}", cover.delta.as_slice());
    }
    debug_assert_eq!(w.len(), step_bound.len());
    cover
        .active()
        .filter(|&id| is_band_cell(cover, id, step_bound, failure, exits))
        .collect()
}
