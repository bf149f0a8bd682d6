//! Two double-integrator robots under a centralised ZCBF-filtered QP.
//!
//! The exposed state is `[dp_x, dp_y, v0_x, v0_y, v1_x, v1_y]` with
//! `dp = p1 - p0`. The subject robot (0) tracks a persistent random goal; the
//! other robot (1) is driven by the testing policy. Both reference actions go
//! through the same barrier constraint and action box.

pub mod barrier;
pub mod qp;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

pub use barrier::{barrier_gradient, barrier_value, cbf_constraint, LinearConstraint, PairState};
pub use qp::{solve_qp, QpFailure, QpSolution};

use crate::error::{Error, Result};
use crate::rng::StreamRng;
use crate::scenario::{
    compose_scenario, Composed, DomainBox, Environment, ExitHandling, FailureRegion, StateVector,
    TestingPolicy,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CbfParams {
    /// Combined braking authority along the line of centres (m/s²).
    pub a_br: f64,
    /// Safety distance (m).
    pub d_s: f64,
    /// Gain of `alpha(h) = gamma h^3`.
    pub gamma: f64,
    /// Per-axis acceleration limit (m/s²).
    pub a_max: f64,
    /// Per-axis speed limit (m/s).
    pub v_max: f64,
    pub dt: f64,
    pub kp: f64,
    pub kv: f64,
    /// Std. dev. of the predictive policy's action noise (m/s²).
    pub pred_sigma: f64,
    /// Relative positions saturate at ± this value (m).
    pub pos_limit: f64,
    pub tau_min: f64,
    pub tau_max: f64,
}

impl Default for CbfParams {
    fn default() -> Self {
        Self {
            a_br: 2.0,
            d_s: 1.0,
            gamma: 1.0,
            a_max: 1.0,
            v_max: 1.0,
            dt: 0.1,
            kp: 1.0,
            kv: 2.0,
            pred_sigma: 0.1,
            pos_limit: 10.0,
            tau_min: 0.2,
            tau_max: 5.0,
        }
    }
}

impl CbfParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("a_br", self.a_br),
            ("d_s", self.d_s),
            ("gamma", self.gamma),
            ("a_max", self.a_max),
            ("v_max", self.v_max),
            ("dt", self.dt),
            ("pos_limit", self.pos_limit),
            ("tau_min", self.tau_min),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("cbf.{name} must be positive, got {v}")));
            }
        }
        for (name, v) in [("kp", self.kp), ("kv", self.kv), ("pred_sigma", self.pred_sigma)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!("cbf.{name} must be non-negative, got {v}")));
            }
        }
        if self.tau_max < self.tau_min {
            return Err(Error::Config("cbf.tau_max must be >= cbf.tau_min".into()));
        }
        if self.pos_limit <= self.d_s {
            return Err(Error::Config("cbf.pos_limit must exceed cbf.d_s".into()));
        }
        Ok(())
    }

    /// `[-L, L]^2 × [-v_max, v_max]^4`.
    pub fn domain(&self) -> DomainBox {
        let (l, v) = (self.pos_limit, self.v_max);
        DomainBox::new(vec![-l, -l, -v, -v, -v, -v], vec![l, l, v, v, v, v]).expect("validated limits")
    }

    /// Worst-case one-step displacement per state dimension.
    pub fn theoretical_step_bound(&self) -> Vec<f64> {
        let pos = 2.0 * self.v_max * self.dt + self.a_max * self.dt * self.dt;
        let vel = self.a_max * self.dt;
        vec![pos, pos, vel, vel, vel, vel]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RobotState {
    pub p: [f64; 2],
    pub v: [f64; 2],
}

fn clip(x: f64, m: f64) -> f64 {
    x.clamp(-m, m)
}

/// PD pull toward `goal`, clipped to the action box.
pub fn goal_reference(robot: &RobotState, goal: [f64; 2], params: &CbfParams) -> [f64; 2] {
    std::array::from_fn(|i| clip(params.kp * (goal[i] - robot.p[i]) - params.kv * robot.v[i], params.a_max))
}

/// Deceleration toward rest within one step where the box allows.
pub fn braking_reference(v: [f64; 2], params: &CbfParams) -> [f64; 2] {
    std::array::from_fn(|i| clip(-v[i] / params.dt, params.a_max))
}

/// Constant-velocity extrapolation of the subject, `tau` seconds ahead.
pub fn predicted_target(subject: &RobotState, tau: f64) -> [f64; 2] {
    std::array::from_fn(|i| subject.p[i] + subject.v[i] * tau)
}

/// Pursuit of the subject's extrapolated position plus Gaussian noise.
pub fn predictive_reference(
    subject: &RobotState,
    other: &RobotState,
    tau: f64,
    params: &CbfParams,
    rng: &mut StreamRng,
) -> [f64; 2] {
    let base = goal_reference(other, predicted_target(subject, tau), params);
    if params.pred_sigma == 0.0 {
        return base;
    }
    let noise = Normal::new(0.0, params.pred_sigma).expect("validated sigma");
    std::array::from_fn(|i| clip(base[i] + noise.sample(rng), params.a_max))
}

/// Action box that also keeps every velocity within `v_max` after one step.
pub fn action_box(pair: &PairState, params: &CbfParams) -> ([f64; 4], [f64; 4]) {
    let v = [pair.v0[0], pair.v0[1], pair.v1[0], pair.v1[1]];
    let lo = std::array::from_fn(|i| (-params.a_max).max((-params.v_max - v[i]) / params.dt).min(0.0));
    let hi = std::array::from_fn(|i| params.a_max.min((params.v_max - v[i]) / params.dt).max(0.0));
    (lo, hi)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Fallback {
    Singular,
    Infeasible,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SafeAction {
    pub a: [f64; 4],
    pub constraint: Option<LinearConstraint>,
    pub fallback: Option<Fallback>,
}

/// Nearest action to `a_ref` satisfying the barrier constraint and the box;
/// both robots brake when no such action exists.
pub fn filter_action(pair: &PairState, a_ref: [f64; 4], params: &CbfParams) -> SafeAction {
    let brake = || {
        let b0 = braking_reference(pair.v0, params);
        let b1 = braking_reference(pair.v1, params);
        [b0[0], b0[1], b1[0], b1[1]]
    };
    let constraint = match cbf_constraint(pair, params) {
        Ok(c) => c,
        Err(_) => {
            return SafeAction {
                a: brake(),
                constraint: None,
                fallback: Some(Fallback::Singular),
            }
        }
    };
    let (lo, hi) = action_box(pair, params);
    match solve_qp(&a_ref, &[constraint], &lo, &hi) {
        Ok(sol) => SafeAction {
            a: sol.a,
            constraint: Some(constraint),
            fallback: None,
        },
        Err(_) => SafeAction {
            a: brake(),
            constraint: Some(constraint),
            fallback: Some(Fallback::Infeasible),
        },
    }
}

/// Zero-order-hold step of both robots in relative coordinates.
pub fn env_step(pair: &PairState, a: &[f64; 4], params: &CbfParams) -> PairState {
    let dt = params.dt;
    let (a0, a1) = ([a[0], a[1]], [a[2], a[3]]);
    let dv = pair.dv();
    let dp = std::array::from_fn(|i| {
        clip(pair.dp[i] + dv[i] * dt + 0.5 * (a1[i] - a0[i]) * dt * dt, params.pos_limit)
    });
    // the action box already keeps speeds in range; the clamp only absorbs rounding
    let v0 = std::array::from_fn(|i| clip(pair.v0[i] + a0[i] * dt, params.v_max));
    let v1 = std::array::from_fn(|i| clip(pair.v1[i] + a1[i] * dt, params.v_max));
    PairState { dp, v0, v1 }
}

/// `|dp| <= d_s`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CollisionRegion {
    pub d_s: f64,
}

impl FailureRegion for CollisionRegion {
    fn contains(&self, s: &[f64]) -> bool {
        s[0].hypot(s[1]) <= self.d_s
    }

    fn intersects_box(&self, center: &[f64], half: &[f64]) -> bool {
        let gap = |i: usize| (center[i].abs() - half[i]).max(0.0);
        gap(0).hypot(gap(1)) <= self.d_s
    }
}

#[derive(Debug, Clone)]
pub struct CbfEnv {
    params: CbfParams,
    domain: DomainBox,
    failure: CollisionRegion,
    step_bound: Vec<f64>,
    exit: Vec<ExitHandling>,
}

impl CbfEnv {
    pub fn new(params: CbfParams) -> Result<Self> {
        params.validate()?;
        Ok(Self {
            domain: params.domain(),
            failure: CollisionRegion { d_s: params.d_s },
            step_bound: params.theoretical_step_bound(),
            exit: vec![ExitHandling::Saturate; 6],
            params,
        })
    }

    pub fn params(&self) -> &CbfParams {
        &self.params
    }
}

impl Environment for CbfEnv {
    type Episode = ();

    fn action_dim(&self) -> usize {
        4
    }
    fn domain(&self) -> &DomainBox {
        &self.domain
    }
    fn failure(&self) -> &dyn FailureRegion {
        &self.failure
    }
    fn step_bound(&self) -> &[f64] {
        &self.step_bound
    }
    fn exit_handling(&self) -> &[ExitHandling] {
        &self.exit
    }
    fn begin_episode(&self, _: &[f64], _: &mut StreamRng) {}
    fn step(&self, _: &mut (), s: &[f64], action: &[f64], _: &mut StreamRng) -> StateVector {
        let pair = PairState::from_slice(s).expect("six-dimensional state");
        let a: [f64; 4] = std::array::from_fn(|i| action[i]);
        StateVector(env_step(&pair, &a, &self.params).to_vec())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PolicyKind {
    /// The other robot runs the subject's own goal-to-goal controller.
    Cbf,
    /// The other robot pursues the subject's predicted position.
    Pred,
}

impl std::str::FromStr for PolicyKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cbf" => Ok(Self::Cbf),
            "pred" => Ok(Self::Pred),
            other => Err(Error::Config(format!("unknown policy {other:?} (expected cbf or pred)"))),
        }
    }
}

/// Per-run context: the subject's absolute position, both goals and the
/// look-ahead horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct CbfEpisode {
    pub p0: [f64; 2],
    pub goal0: [f64; 2],
    pub goal1: [f64; 2],
    pub tau: f64,
    pub fallbacks: usize,
}

#[derive(Debug, Clone)]
pub struct CbfPolicy {
    kind: PolicyKind,
    params: CbfParams,
}

pub fn make_cbf_policy(kind: PolicyKind, params: CbfParams) -> Result<CbfPolicy> {
    params.validate()?;
    Ok(CbfPolicy { kind, params })
}

impl CbfPolicy {
    pub fn kind(&self) -> PolicyKind {
        self.kind
    }

    /// Reference actions for both robots before filtering.
    pub fn references(&self, ep: &CbfEpisode, pair: &PairState, rng: &mut StreamRng) -> [f64; 4] {
        let subject = RobotState { p: ep.p0, v: pair.v0 };
        let other = RobotState {
            p: [ep.p0[0] + pair.dp[0], ep.p0[1] + pair.dp[1]],
            v: pair.v1,
        };
        let a0 = goal_reference(&subject, ep.goal0, &self.params);
        let a1 = match self.kind {
            PolicyKind::Cbf => goal_reference(&other, ep.goal1, &self.params),
            PolicyKind::Pred => predictive_reference(&subject, &other, ep.tau, &self.params, rng),
        };
        [a0[0], a0[1], a1[0], a1[1]]
    }
}

impl TestingPolicy for CbfPolicy {
    type Episode = CbfEpisode;

    fn state_dim(&self) -> usize {
        6
    }
    fn action_dim(&self) -> usize {
        4
    }
    fn begin_episode(&self, _: &[f64], rng: &mut StreamRng) -> CbfEpisode {
        let l = self.params.pos_limit;
        let mut goal = || [rng.random_range(-l..=l), rng.random_range(-l..=l)];
        let goal0 = goal();
        let goal1 = goal();
        // drawn for both kinds so that matched seeds share goals
        let tau = rng.random_range(self.params.tau_min..=self.params.tau_max);
        CbfEpisode {
            p0: [0.0, 0.0],
            goal0,
            goal1,
            tau,
            fallbacks: 0,
        }
    }
    fn act(&self, ep: &mut CbfEpisode, s: &[f64], rng: &mut StreamRng) -> Vec<f64> {
        let pair = PairState::from_slice(s).expect("six-dimensional state");
        let a_ref = self.references(ep, &pair, rng);
        let safe = filter_action(&pair, a_ref, &self.params);
        if safe.fallback.is_some() {
            ep.fallbacks += 1;
        }
        let dt = self.params.dt;
        for i in 0..2 {
            ep.p0[i] += pair.v0[i] * dt + 0.5 * safe.a[i] * dt * dt;
        }
        safe.a.to_vec()
    }
}

pub type CbfSystem = Composed<CbfEnv, CbfPolicy>;

/// The composed two-robot scenario under the given testing policy.
pub fn cbf_system(kind: PolicyKind, params: CbfParams) -> Result<CbfSystem> {
    compose_scenario(CbfEnv::new(params.clone())?, make_cbf_policy(kind, params)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RandomSource;
    use crate::scenario::{check_step_bound, rollout, ScenarioSystem};

    #[test]
    fn references() {
        let p = CbfParams::default();
        let at = |p0: [f64; 2], v: [f64; 2]| RobotState { p: p0, v };
        assert_eq!(goal_reference(&at([0.0; 2], [0.0; 2]), [0.0; 2], &p), [0.0, 0.0]);
        assert_eq!(goal_reference(&at([0.0; 2], [0.0; 2]), [10.0, 0.0], &p), [1.0, 0.0]);
        assert_eq!(goal_reference(&at([3.0, 3.0], [1.0, 0.0]), [3.0, 3.0], &p), [-1.0, 0.0]);
        assert_eq!(braking_reference([0.0, 0.0], &p), [0.0, 0.0]);
        assert_eq!(braking_reference([1.0, 0.0], &p), [-1.0, 0.0]);
        let b = braking_reference([0.05, 0.0], &p);
        assert!((b[0] + 0.5).abs() < 1e-12);
        assert_eq!(predicted_target(&at([0.0; 2], [1.0, 0.0]), 1.0), [1.0, 0.0]);
        assert_eq!(predicted_target(&at([2.0, -1.0], [0.0; 2]), 3.0), [2.0, -1.0]);
    }

    #[test]
    fn noise_free_prediction_is_pursuit() {
        let p = CbfParams { pred_sigma: 0.0, ..CbfParams::default() };
        let subject = RobotState { p: [0.0; 2], v: [0.5, 0.0] };
        let other = RobotState { p: [4.0, 0.0], v: [0.0; 2] };
        let mut rng = RandomSource::new(0).rng();
        let a = predictive_reference(&subject, &other, 2.0, &p, &mut rng);
        assert_eq!(a, goal_reference(&other, [1.0, 0.0], &p));
    }

    #[test]
    fn kinematics() {
        let p = CbfParams::default();
        let s = PairState { dp: [3.0, 0.0], v0: [0.0; 2], v1: [1.0, 0.0] };
        let n = env_step(&s, &[0.0; 4], &p);
        assert!((n.dp[0] - 3.1).abs() < 1e-15);
        assert_eq!(n.v1, [1.0, 0.0]);
        // the other robot accelerating from rest: dp moves by a dt^2 / 2
        let s = PairState { dp: [3.0, 0.0], v0: [0.0; 2], v1: [0.0; 2] };
        let n = env_step(&s, &[0.0, 0.0, 1.0, 0.0], &p);
        assert!((n.dp[0] - 3.005).abs() < 1e-15);
        assert!((n.v1[0] - 0.1).abs() < 1e-15);
    }

    #[test]
    fn far_apart_references_pass_through() {
        let p = CbfParams::default();
        let pair = PairState { dp: [9.0, 9.0], v0: [0.0; 2], v1: [0.0; 2] };
        let a = [0.3, -0.4, 0.5, 0.1];
        assert_eq!(filter_action(&pair, a, &p).a, a);
    }

    #[test]
    fn velocity_box_keeps_speeds() {
        let p = CbfParams::default();
        let pair = PairState { dp: [5.0, 0.0], v0: [0.95, -1.0], v1: [0.0, 1.0] };
        let (lo, hi) = action_box(&pair, &p);
        assert!((hi[0] - 0.5).abs() < 1e-12);
        assert_eq!(lo[1], 0.0);
        assert_eq!(hi[3], 0.0);
    }

    #[test]
    fn collision_region_box_test() {
        let c = CollisionRegion { d_s: 1.0 };
        assert!(c.intersects_box(&[1.4, 0.0, 0.0, 0.0, 0.0, 0.0], &[0.5; 6]));
        assert!(!c.intersects_box(&[1.6, 0.0, 0.0, 0.0, 0.0, 0.0], &[0.5; 6]));
        assert!(!c.intersects_box(&[1.3, 1.3, 0.0, 0.0, 0.0, 0.0], &[0.5; 6]));
        assert!(c.intersects_box(&[1.3, 1.3, 0.0, 0.0, 0.0, 0.0], &[0.6; 6]));
    }

    #[test]
    fn system_shape_and_step_bound() {
        let sys = cbf_system(PolicyKind::Cbf, CbfParams::default()).unwrap();
        assert_eq!(sys.dim(), 6);
        assert_eq!(sys.domain().lo(), &[-10.0, -10.0, -1.0, -1.0, -1.0, -1.0]);
        let rep = check_step_bound(&sys, 2000, &RandomSource::new(1)).unwrap();
        assert!(!rep.violated, "{rep:?}");
        assert!(rep.max_observed[0] <= 0.205 && rep.max_observed[1] <= 0.205);
        assert!(rep.max_observed[2..].iter().all(|v| *v <= 0.1 + 1e-12));
    }

    #[test]
    fn rollouts_respect_speed_limits() {
        let sys = cbf_system(PolicyKind::Pred, CbfParams::default()).unwrap();
        for seed in 0..20 {
            let src = RandomSource::new(seed);
            let s0 = [3.0, -2.0, 0.5, 0.5, -0.5, 0.2];
            let rec = rollout(&sys, &s0, 100, &src).unwrap();
            for s in &rec.states {
                assert!(s[2..].iter().all(|v| v.abs() <= 1.0));
            }
        }
    }
}
