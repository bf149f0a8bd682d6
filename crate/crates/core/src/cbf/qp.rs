//! Dense strictly convex QP `min |a - a_ref|^2` over a box and a few affine
//! constraints, solved with the Goldfarb–Idnani dual active-set method.
//!
//! With an identity Hessian the method's basis is just a QR factorisation of
//! the active normals, recomputed from scratch at each step (at most 4×4).

use super::barrier::LinearConstraint;

const N: usize = 4;
const ZERO: f64 = 1e-12;
const VIOLATION: f64 = 1e-10;
const MAX_ITER: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QpFailure {
    Infeasible,
    IterationLimit,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub a: [f64; N],
    /// Indices of active constraints; box faces follow the general ones.
    pub active: Vec<usize>,
    pub iterations: usize,
}

/// `lo <= a <= hi` and every `constraint`.
pub fn solve_qp(
    a_ref: &[f64; N],
    constraints: &[LinearConstraint],
    lo: &[f64; N],
    hi: &[f64; N],
) -> Result<QpSolution, QpFailure> {
    if lo.iter().zip(hi).any(|(l, h)| l > h) {
        return Err(QpFailure::Infeasible);
    }
    let rows = all_rows(constraints, lo, hi);
    let mut x = *a_ref;
    let mut active: Vec<usize> = Vec::new();
    let mut u: Vec<f64> = Vec::new();

    for iter in 0..MAX_ITER {
        let Some(p) = most_violated(&rows, &x, &active) else {
            clamp(&mut x, lo, hi);
            return Ok(QpSolution { a: x, active, iterations: iter });
        };
        let np = rows[p].0;
        let mut u_plus = u.clone();
        u_plus.push(0.0);
        let mut inner = 0;
        loop {
            inner += 1;
            if inner > MAX_ITER {
                return Err(QpFailure::IterationLimit);
            }
            let q = active.len();
            let normals: Vec<[f64; N]> = active.iter().map(|&i| rows[i].0).collect();
            let (qm, r) = householder_qr(&normals);
            let d: [f64; N] = std::array::from_fn(|k| (0..N).map(|i| qm[i][k] * np[i]).sum());
            let z: [f64; N] = std::array::from_fn(|i| (q..N).map(|k| qm[i][k] * d[k]).sum());
            let rv = back_substitute(&r, &d[..q]);

            let mut t1 = f64::INFINITY;
            let mut drop = None;
            for j in 0..q {
                if rv[j] > ZERO {
                    let t = u_plus[j] / rv[j];
                    if t < t1 {
                        t1 = t;
                        drop = Some(j);
                    }
                }
            }
            let zz = dot(&z, &np);
            let t2 = if norm(&z) > ZERO && zz > ZERO {
                -slack(&rows[p], &x) / zz
            } else {
                f64::INFINITY
            };
            let t = t1.min(t2);
            if !t.is_finite() {
                return Err(QpFailure::Infeasible);
            }
            for j in 0..q {
                u_plus[j] -= t * rv[j];
            }
            u_plus[q] += t;
            if t2.is_finite() {
                for i in 0..N {
                    x[i] += t * z[i];
                }
            }
            if t2 <= t1 {
                active.push(p);
                u = u_plus;
                break;
            }
            let l = drop.expect("partial step has a blocking constraint");
            active.remove(l);
            u_plus.remove(l);
        }
    }
    Err(QpFailure::IterationLimit)
}

fn all_rows(constraints: &[LinearConstraint], lo: &[f64; N], hi: &[f64; N]) -> Vec<([f64; N], f64)> {
    let mut rows: Vec<([f64; N], f64)> = constraints.iter().map(|c| (c.row, c.bound)).collect();
    for i in 0..N {
        let mut e = [0.0; N];
        e[i] = 1.0;
        rows.push((e, lo[i]));
        e[i] = -1.0;
        rows.push((e, -hi[i]));
    }
    rows
}

fn most_violated(rows: &[([f64; N], f64)], x: &[f64; N], active: &[usize]) -> Option<usize> {
    let mut worst = None;
    let mut worst_s = -VIOLATION;
    for (i, row) in rows.iter().enumerate() {
        if active.contains(&i) {
            continue;
        }
        let scale = norm(&row.0).max(ZERO);
        let s = slack(row, x) / scale;
        if s < worst_s {
            worst_s = s;
            worst = Some(i);
        }
    }
    worst
}

fn slack(row: &([f64; N], f64), x: &[f64; N]) -> f64 {
    dot(&row.0, x) - row.1
}

fn dot(a: &[f64; N], b: &[f64; N]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64; N]) -> f64 {
    dot(a, a).sqrt()
}

fn clamp(x: &mut [f64; N], lo: &[f64; N], hi: &[f64; N]) {
    for i in 0..N {
        x[i] = x[i].clamp(lo[i], hi[i]);
    }
}

/// Full `Q` (columns orthonormal) and upper-triangular `R` with
/// `[c_1 .. c_q] = Q[:, ..q] R`.
fn householder_qr(cols: &[[f64; N]]) -> ([[f64; N]; N], Vec<Vec<f64>>) {
    let q = cols.len();
    let mut a: [[f64; N]; N] = [[0.0; N]; N];
    for (j, c) in cols.iter().enumerate() {
        for i in 0..N {
            a[i][j] = c[i];
        }
    }
    let mut qm: [[f64; N]; N] = std::array::from_fn(|i| std::array::from_fn(|j| (i == j) as u8 as f64));
    for k in 0..q.min(N) {
        let sgn = if a[k][k] >= 0.0 { 1.0 } else { -1.0 };
        let alpha = -sgn * (k..N).map(|i| a[i][k] * a[i][k]).sum::<f64>().sqrt();
        let mut v = [0.0; N];
        for i in k..N {
            v[i] = a[i][k];
        }
        v[k] -= alpha;
        let vv: f64 = v.iter().map(|x| x * x).sum();
        if vv <= ZERO * ZERO {
            continue;
        }
        for j in 0..N {
            let s: f64 = (k..N).map(|i| v[i] * a[i][j]).sum::<f64>() * 2.0 / vv;
            for i in k..N {
                a[i][j] -= s * v[i];
            }
        }
        // Q <- Q H
        for i in 0..N {
            let s: f64 = (k..N).map(|l| qm[i][l] * v[l]).sum::<f64>() * 2.0 / vv;
            for l in k..N {
                qm[i][l] -= s * v[l];
            }
        }
    }
    let r = (0..q).map(|i| (0..q).map(|j| if j >= i { a[i][j] } else { 0.0 }).collect()).collect();
    (qm, r)
}

fn back_substitute(r: &[Vec<f64>], d: &[f64]) -> Vec<f64> {
    let q = d.len();
    let mut x = vec![0.0; q];
    for i in (0..q).rev() {
        let s: f64 = (i + 1..q).map(|j| r[i][j] * x[j]).sum();
        x[i] = (d[i] - s) / r[i][i];
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;

    const LO: [f64; 4] = [-1.0; 4];
    const HI: [f64; 4] = [1.0; 4];

    #[test]
    fn feasible_reference_is_returned() {
        let c = LinearConstraint { row: [1.0, 0.0, 0.0, 0.0], bound: -5.0 };
        let a = [0.3, -0.2, 0.1, 0.9];
        let sol = solve_qp(&a, &[c], &LO, &HI).unwrap();
        assert_eq!(sol.a, a);
        assert_eq!(sol.iterations, 0);
    }

    #[test]
    fn half_space_projection() {
        let c = LinearConstraint { row: [1.0, 1.0, 0.0, 0.0], bound: 1.0 };
        let a = [0.0, 0.0, 0.2, 0.2];
        let sol = solve_qp(&a, &[c], &LO, &HI).unwrap();
        // a + ((b - c.a)/|c|^2) c = (0.5, 0.5, 0.2, 0.2)
        for (x, y) in sol.a.iter().zip([0.5, 0.5, 0.2, 0.2]) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn box_clipping_only() {
        let sol = solve_qp(&[3.0, -3.0, 0.5, 0.0], &[], &LO, &HI).unwrap();
        assert_eq!(sol.a, [1.0, -1.0, 0.5, 0.0]);
    }

    #[test]
    fn infeasible_is_reported() {
        let c = LinearConstraint { row: [1.0, 0.0, 0.0, 0.0], bound: 2.0 };
        assert_eq!(solve_qp(&[0.0; 4], &[c], &LO, &HI), Err(QpFailure::Infeasible));
        assert_eq!(solve_qp(&[0.0; 4], &[], &HI, &LO), Err(QpFailure::Infeasible));
    }

    #[test]
    fn qr_reconstructs() {
        let cols = [[1.0, 2.0, 0.0, -1.0], [0.5, 0.0, 3.0, 1.0]];
        let (q, r) = householder_qr(&cols);
        for (j, c) in cols.iter().enumerate() {
            for i in 0..N {
                let v: f64 = (0..2).map(|k| q[i][k] * r[k][j]).sum();
                assert!((v - c[i]).abs() < 1e-12);
            }
        }
        for a in 0..N {
            for b in 0..N {
                let v: f64 = (0..N).map(|i| q[i][a] * q[i][b]).sum();
                assert!((v - (a == b) as u8 as f64).abs() < 1e-12);
            }
        }
    }
}
