//! Pairwise braking-distance barrier and its affine action constraint.

use serde::{Deserialize, Serialize};

use super::CbfParams;
use crate::error::{Error, Result};

/// Below this clearance the square-root term has no usable derivative.
const SINGULAR_CLEARANCE: f64 = 1e-9;

/// Relative state: `dp = p1 - p0` with the subject at the origin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairState {
    pub dp: [f64; 2],
    pub v0: [f64; 2],
    pub v1: [f64; 2],
}

impl PairState {
    pub fn from_slice(s: &[f64]) -> Result<Self> {
        if s.len() != 6 {
            return Err(Error::Dimension {
                what: "pair state",
                expected: 6,
                got: s.len(),
            });
        }
        Ok(Self {
            dp: [s[0], s[1]],
            v0: [s[2], s[3]],
            v1: [s[4], s[5]],
        })
    }

    pub fn to_vec(&self) -> Vec<f64> {
        vec![self.dp[0], self.dp[1], self.v0[0], self.v0[1], self.v1[0], self.v1[1]]
    }

    pub fn dv(&self) -> [f64; 2] {
        [self.v1[0] - self.v0[0], self.v1[1] - self.v0[1]]
    }

    pub fn distance(&self) -> f64 {
        self.dp[0].hypot(self.dp[1])
    }
}

/// `row · [a0; a1] >= bound`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearConstraint {
    pub row: [f64; 4],
    pub bound: f64,
}

impl LinearConstraint {
    pub fn slack(&self, a: &[f64]) -> f64 {
        self.row.iter().zip(a).map(|(r, x)| r * x).sum::<f64>() - self.bound
    }

    pub fn satisfied(&self, a: &[f64], tol: f64) -> bool {
        self.slack(a) >= -tol
    }
}

/// `h = sqrt(2 a_br max(d - D_s, 0)) + dp·dv / d`.
pub fn barrier_value(pair: &PairState, params: &CbfParams) -> Result<f64> {
    let d = pair.distance();
    if d == 0.0 {
        return Err(Error::Singular("robots coincide".into()));
    }
    let dv = pair.dv();
    let closing = (pair.dp[0] * dv[0] + pair.dp[1] * dv[1]) / d;
    Ok((2.0 * params.a_br * (d - params.d_s).max(0.0)).sqrt() + closing)
}

/// Gradient of `h` with respect to `[dp, v0, v1]`.
pub fn barrier_gradient(pair: &PairState, params: &CbfParams) -> Result<[f64; 6]> {
    let d = pair.distance();
    let clearance = d - params.d_s;
    if d == 0.0 || clearance.abs() <= SINGULAR_CLEARANCE {
        return Err(Error::Singular(format!("barrier not differentiable at distance {d}")));
    }
    let n = [pair.dp[0] / d, pair.dp[1] / d];
    let dv = pair.dv();
    let proj = pair.dp[0] * dv[0] + pair.dp[1] * dv[1];
    let radial = if clearance > 0.0 {
        params.a_br / (2.0 * params.a_br * clearance).sqrt()
    } else {
        0.0
    };
    let mut g = [0.0; 6];
    for i in 0..2 {
        g[i] = radial * n[i] + dv[i] / d - proj * pair.dp[i] / (d * d * d);
        g[2 + i] = -n[i];
        g[4 + i] = n[i];
    }
    Ok(g)
}

/// `dh/dt + gamma h^3 >= 0` as an affine constraint on `[a0; a1]`.
pub fn cbf_constraint(pair: &PairState, params: &CbfParams) -> Result<LinearConstraint> {
    let h = barrier_value(pair, params)?;
    let g = barrier_gradient(pair, params)?;
    let dv = pair.dv();
    let drift = g[0] * dv[0] + g[1] * dv[1];
    Ok(LinearConstraint {
        row: [g[2], g[3], g[4], g[5]],
        bound: -params.gamma * h * h * h - drift,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pair(dp: [f64; 2], v0: [f64; 2], v1: [f64; 2]) -> PairState {
        PairState { dp, v0, v1 }
    }

    #[test]
    fn barrier_examples() {
        let p = CbfParams::default();
        assert!((barrier_value(&pair([2.0, 0.0], [0.0; 2], [0.0; 2]), &p).unwrap() - 2.0).abs() < 1e-12);
        assert!((barrier_value(&pair([1.0, 0.0], [0.0; 2], [-0.5, 0.0]), &p).unwrap() + 0.5).abs() < 1e-12);
        assert_eq!(barrier_value(&pair([0.0, 1.0], [0.3; 2], [0.3; 2]), &p).unwrap(), 0.0);
        assert!(barrier_value(&pair([0.0, 0.0], [0.0; 2], [0.0; 2]), &p).is_err());
    }

    #[test]
    fn far_apart_constraint_is_slack() {
        let p = CbfParams::default();
        let c = cbf_constraint(&pair([8.0, 3.0], [0.5, 0.0], [-0.5, 0.0]), &p).unwrap();
        assert!(c.bound < 0.0);
        assert!(c.satisfied(&[0.0; 4], 0.0));
    }

    #[test]
    fn head_on_row_is_antisymmetric() {
        let p = CbfParams::default();
        let c = cbf_constraint(&pair([3.0, 0.0], [0.5, 0.0], [-0.5, 0.0]), &p).unwrap();
        for i in 0..2 {
            assert_eq!(c.row[i], -c.row[2 + i]);
        }
    }

    #[test]
    fn closing_at_zero_barrier_demands_separation() {
        // d = 1.125, dv closing so that h = 0
        let p = CbfParams::default();
        let d: f64 = 1.125;
        let closing = (2.0 * p.a_br * (d - p.d_s)).sqrt();
        let s = pair([d, 0.0], [closing / 2.0, 0.0], [-closing / 2.0, 0.0]);
        assert!(barrier_value(&s, &p).unwrap().abs() < 1e-12);
        let c = cbf_constraint(&s, &p).unwrap();
        // only full braking along dp is admissible: the bound equals a_br
        assert!((c.bound - p.a_br).abs() < 1e-9);
        assert!(!c.satisfied(&[0.0; 4], 0.0));
        assert!(!c.satisfied(&[-0.5, 0.0, 0.5, 0.0], 0.0));
        assert!(c.satisfied(&[-1.0, 0.0, 1.0, 0.0], 1e-9));
    }
}
