//! The black-box testing scenario as a discrete-time dynamic system.
//!
//! A scenario couples an environment (the test subject plus everything it
//! interacts with) to a testing policy that drives the controllable
//! participants. Once composed, the pair is a single stochastic stepper
//! `s(t+1) = f(s(t); w(t))` over a box domain, and that is the only view the
//! quantifier ever gets of it.

use std::ops::Deref;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{tags, RandomSource, StreamRng};

/// A point of the scenario state space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct StateVector(pub Vec<f64>);

impl StateVector {
    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|x| x.is_finite())
    }
}

impl Deref for StateVector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl From<Vec<f64>> for StateVector {
    fn from(v: Vec<f64>) -> Self {
        StateVector(v)
    }
}

impl From<&[f64]> for StateVector {
    fn from(v: &[f64]) -> Self {
        StateVector(v.to_vec())
    }
}

/// Axis-aligned box `[lo, hi]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainBox {
    lo: Vec<f64>,
    hi: Vec<f64>,
}

impl DomainBox {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.len() != hi.len() {
            return Err(Error::Dimension {
                what: "domain bounds",
                expected: lo.len(),
                got: hi.len(),
            });
        }
        if lo.is_empty() {
            return Err(Error::Config("domain must have at least one dimension".into()));
        }
        for (i, (l, h)) in lo.iter().zip(&hi).enumerate() {
            if !(l.is_finite() && h.is_finite() && l < h) {
                return Err(Error::Config(format!(
                    "domain dimension {i}: need finite lo < hi, got [{l}, {h}]"
                )));
            }
        }
        Ok(Self { lo, hi })
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn lo(&self) -> &[f64] {
        &self.lo
    }

    pub fn hi(&self) -> &[f64] {
        &self.hi
    }

    pub fn width(&self, i: usize) -> f64 {
        self.hi[i] - self.lo[i]
    }

    pub fn volume(&self) -> f64 {
        (0..self.dim()).map(|i| self.width(i)).product()
    }

    pub fn contains(&self, s: &[f64]) -> bool {
        s.len() == self.dim()
            && s.iter()
                .zip(self.lo.iter().zip(&self.hi))
                .all(|(x, (l, h))| *x >= *l && *x <= *h)
    }

    pub fn sample_uniform(&self, rng: &mut StreamRng) -> StateVector {
        use rand::Rng;
        StateVector(
            self.lo
                .iter()
                .zip(&self.hi)
                .map(|(l, h)| rng.random_range(*l..=*h))
                .collect(),
        )
    }
}

/// States with unaccepted risk.
pub trait FailureRegion: Send + Sync {
    fn contains(&self, s: &[f64]) -> bool;

    /// Whether the box `center ± half` may intersect the region.
    ///
    /// The default probes the centre, the corners and the face midpoints of
    /// the box, so it can miss thin features; regions with a cheap exact test
    /// should override it.
    fn intersects_box(&self, center: &[f64], half: &[f64]) -> bool {
        let n = center.len();
        if n > 12 {
            return self.contains(center);
        }
        let mut probe = vec![0.0; n];
        let total = 3usize.pow(n as u32);
        for code in 0..total {
            let mut c = code;
            for i in 0..n {
                let off = (c % 3) as f64 - 1.0;
                c /= 3;
                probe[i] = center[i] + off * half[i];
            }
            if self.contains(&probe) {
                return true;
            }
        }
        false
    }
}

/// The empty failure set.
#[derive(Debug, Clone, Copy, Default)]
pub struct NoFailure;

impl FailureRegion for NoFailure {
    fn contains(&self, _: &[f64]) -> bool {
        false
    }
    fn intersects_box(&self, _: &[f64], _: &[f64]) -> bool {
        false
    }
}

/// Failure region given by a closure.
#[derive(Clone, Copy)]
pub struct PredicateRegion<F>(pub F);

impl<F> FailureRegion for PredicateRegion<F>
where
    F: Fn(&[f64]) -> bool + Send + Sync,
{
    fn contains(&self, s: &[f64]) -> bool {
        (self.0)(s)
    }
}

/// What happens when a step leaves the domain in a given dimension.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExitHandling {
    Saturate,
    ExitTerminatesRun,
}

/// A composed scenario: `s' = f(s; w)`.
///
/// `Episode` holds per-run context that is not part of the exposed state
/// (sampled goals, look-ahead horizons, unobserved absolute coordinates).
pub trait ScenarioSystem: Send + Sync {
    type Episode: Send;

    fn domain(&self) -> &DomainBox;
    fn failure(&self) -> &dyn FailureRegion;
    /// Declared per-dimension one-step displacement bound.
    fn step_bound(&self) -> &[f64];
    fn exit_handling(&self) -> &[ExitHandling];
    fn begin_episode(&self, s0: &[f64], rng: &mut StreamRng) -> Self::Episode;
    fn step(&self, episode: &mut Self::Episode, s: &[f64], rng: &mut StreamRng) -> StateVector;

    fn dim(&self) -> usize {
        self.domain().dim()
    }
}

/// Environment dynamics `s' = f(s, u; w)` with the test subject inside.
pub trait Environment: Send + Sync {
    type Episode: Send;

    fn action_dim(&self) -> usize;
    fn domain(&self) -> &DomainBox;
    fn failure(&self) -> &dyn FailureRegion;
    fn step_bound(&self) -> &[f64];
    fn exit_handling(&self) -> &[ExitHandling];
    fn begin_episode(&self, s0: &[f64], rng: &mut StreamRng) -> Self::Episode;
    fn step(
        &self,
        episode: &mut Self::Episode,
        s: &[f64],
        action: &[f64],
        rng: &mut StreamRng,
    ) -> StateVector;

    fn state_dim(&self) -> usize {
        self.domain().dim()
    }
}

/// Feedback policy for the controllable scenario participants.
pub trait TestingPolicy: Send + Sync {
    type Episode: Send;

    fn state_dim(&self) -> usize;
    fn action_dim(&self) -> usize;
    fn begin_episode(&self, s0: &[f64], rng: &mut StreamRng) -> Self::Episode;
    fn act(&self, episode: &mut Self::Episode, s: &[f64], rng: &mut StreamRng) -> Vec<f64>;
}

/// Environment and testing policy behind one stepping interface.
#[derive(Debug, Clone)]
pub struct Composed<E, P> {
    pub env: E,
    pub policy: P,
}

pub fn compose_scenario<E: Environment, P: TestingPolicy>(env: E, policy: P) -> Result<Composed<E, P>> {
    if env.state_dim() != policy.state_dim() {
        return Err(Error::Dimension {
            what: "policy state dimension",
            expected: env.state_dim(),
            got: policy.state_dim(),
        });
    }
    if env.action_dim() != policy.action_dim() {
        return Err(Error::Dimension {
            what: "policy action dimension",
            expected: env.action_dim(),
            got: policy.action_dim(),
        });
    }
    if env.step_bound().len() != env.state_dim() || env.exit_handling().len() != env.state_dim() {
        return Err(Error::Config(
            "environment step bound / exit handling must have one entry per state dimension".into(),
        ));
    }
    Ok(Composed { env, policy })
}

impl<E: Environment, P: TestingPolicy> ScenarioSystem for Composed<E, P> {
    type Episode = (E::Episode, P::Episode);

    fn domain(&self) -> &DomainBox {
        self.env.domain()
    }
    fn failure(&self) -> &dyn FailureRegion {
        self.env.failure()
    }
    fn step_bound(&self) -> &[f64] {
        self.env.step_bound()
    }
    fn exit_handling(&self) -> &[ExitHandling] {
        self.env.exit_handling()
    }
    fn begin_episode(&self, s0: &[f64], rng: &mut StreamRng) -> Self::Episode {
        let p = self.policy.begin_episode(s0, rng);
        let e = self.env.begin_episode(s0, rng);
        (e, p)
    }
    fn step(&self, episode: &mut Self::Episode, s: &[f64], rng: &mut StreamRng) -> StateVector {
        let action = self.policy.act(&mut episode.1, s, rng);
        self.env.step(&mut episode.0, s, &action, rng)
    }
}

/// A stateless system given by a map, used for toy systems and tests.
pub struct MapSystem<F> {
    domain: DomainBox,
    failure: Box<dyn FailureRegion>,
    step_bound: Vec<f64>,
    exit: Vec<ExitHandling>,
    map: F,
}

impl<F> MapSystem<F>
where
    F: Fn(&[f64], &mut StreamRng) -> Vec<f64> + Send + Sync,
{
    pub fn new(
        domain: DomainBox,
        failure: Box<dyn FailureRegion>,
        step_bound: Vec<f64>,
        exit: ExitHandling,
        map: F,
    ) -> Self {
        let n = domain.dim();
        assert_eq!(step_bound.len(), n, "step bound dimension");
        Self {
            domain,
            failure,
            step_bound,
            exit: vec![exit; n],
            map,
        }
    }
}

impl<F> ScenarioSystem for MapSystem<F>
where
    F: Fn(&[f64], &mut StreamRng) -> Vec<f64> + Send + Sync,
{
    type Episode = ();

    fn domain(&self) -> &DomainBox {
        &self.domain
    }
    fn failure(&self) -> &dyn FailureRegion {
        self.failure.as_ref()
    }
    fn step_bound(&self) -> &[f64] {
        &self.step_bound
    }
    fn exit_handling(&self) -> &[ExitHandling] {
        &self.exit
    }
    fn begin_episode(&self, _: &[f64], _: &mut StreamRng) {}
    fn step(&self, _: &mut (), s: &[f64], rng: &mut StreamRng) -> StateVector {
        StateVector((self.map)(s, rng))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind", content = "step")]
pub enum Outcome {
    Completed,
    Failed(usize),
    LeftDomain(usize),
}

impl Outcome {
    pub fn label(&self) -> &'static str {
        match self {
            Outcome::Completed => "completed",
            Outcome::Failed(_) => "failed",
            Outcome::LeftDomain(_) => "left-domain",
        }
    }

    pub fn step(&self) -> Option<usize> {
        match self {
            Outcome::Completed => None,
            Outcome::Failed(j) | Outcome::LeftDomain(j) => Some(*j),
        }
    }
}

/// One run of a scenario. `states[0]` is the initial state.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub seed: u64,
    pub states: Vec<StateVector>,
    pub outcome: Outcome,
}

#[derive(Serialize)]
struct RunLine<'a> {
    seed: u64,
    s0: &'a [f64],
    outcome: &'static str,
    fail_step: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    states: Option<&'a [StateVector]>,
}

impl RunRecord {
    pub fn initial(&self) -> &StateVector {
        &self.states[0]
    }

    pub fn failed(&self) -> bool {
        matches!(self.outcome, Outcome::Failed(_))
    }

    /// One JSON Lines record.
    pub fn to_json_line(&self, with_states: bool) -> String {
        let line = RunLine {
            seed: self.seed,
            s0: &self.states[0],
            outcome: self.outcome.label(),
            fail_step: self.outcome.step(),
            states: with_states.then_some(self.states.as_slice()),
        };
        serde_json::to_string(&line).expect("run record serializes")
    }
}

/// Applies the per-dimension exit handling in place. Returns `true` if the
/// state left the domain in a dimension that terminates the run.
pub(crate) fn apply_exit(domain: &DomainBox, exit: &[ExitHandling], s: &mut [f64]) -> bool {
    let mut left = false;
    for i in 0..s.len() {
        let (lo, hi) = (domain.lo()[i], domain.hi()[i]);
        if s[i] < lo || s[i] > hi {
            match exit[i] {
                ExitHandling::Saturate => s[i] = s[i].clamp(lo, hi),
                ExitHandling::ExitTerminatesRun => left = true,
            }
        }
    }
    left
}

/// Runs the scenario for up to `k` steps from `s0`, stopping at the first
/// failure or domain exit.
///
/// Step `j` draws from `src.child(j)`; per-run setup draws from
/// `src.child(tags::EPISODE)`.
pub fn rollout<S: ScenarioSystem + ?Sized>(
    system: &S,
    s0: &[f64],
    k: usize,
    src: &RandomSource,
) -> Result<RunRecord> {
    let n = system.dim();
    if s0.len() != n {
        return Err(Error::Dimension {
            what: "initial state",
            expected: n,
            got: s0.len(),
        });
    }
    if k < 2 {
        return Err(Error::Precondition(format!("run length K must be >= 2, got {k}")));
    }
    if !system.domain().contains(s0) {
        return Err(Error::Precondition("initial state outside the domain".into()));
    }
    if system.failure().contains(s0) {
        return Err(Error::Precondition("initial state lies in the failure region".into()));
    }

    let mut episode = system.begin_episode(s0, &mut src.child(tags::EPISODE).rng());
    let mut states = Vec::with_capacity(k + 1);
    states.push(StateVector::from(s0));
    let mut outcome = Outcome::Completed;
    for j in 1..=k {
        let mut rng = src.child(j as u64).rng();
        let prev = &states[j - 1];
        let mut next = system.step(&mut episode, prev, &mut rng);
        if next.len() != n {
            return Err(Error::Dimension {
                what: "stepper output",
                expected: n,
                got: next.len(),
            });
        }
        if !next.is_finite() {
            return Err(Error::NonFinite { step: j });
        }
        let left = apply_exit(system.domain(), system.exit_handling(), &mut next.0);
        let failed = !left && system.failure().contains(&next);
        states.push(next);
        if left {
            outcome = Outcome::LeftDomain(j);
            break;
        }
        if failed {
            outcome = Outcome::Failed(j);
            break;
        }
    }
    Ok(RunRecord {
        seed: src.seed(),
        states,
        outcome,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepBoundReport {
    pub probes: usize,
    pub declared: Vec<f64>,
    pub max_observed: Vec<f64>,
    pub violated: bool,
}

/// Probes the one-step displacement bound at uniformly drawn states.
///
/// Probe points inside the failure region are redrawn; systems are not
/// required to be defined there.
pub fn check_step_bound<S: ScenarioSystem + ?Sized>(
    system: &S,
    n_probe: usize,
    src: &RandomSource,
) -> Result<StepBoundReport> {
    if n_probe == 0 {
        return Err(Error::Precondition("n_probe must be >= 1".into()));
    }
    let n = system.dim();
    let root = src.child(tags::PROBE);
    let mut max_observed = vec![0.0f64; n];
    for p in 0..n_probe {
        let probe = root.child(p as u64);
        let mut rng = probe.rng();
        let s = loop {
            let s = system.domain().sample_uniform(&mut rng);
            if !system.failure().contains(&s) {
                break s;
            }
        };
        let mut ep = system.begin_episode(&s, &mut probe.child(tags::EPISODE).rng());
        let mut next = system.step(&mut ep, &s, &mut probe.child(1).rng());
        if !next.is_finite() {
            return Err(Error::NonFinite { step: 1 });
        }
        apply_exit(system.domain(), system.exit_handling(), &mut next.0);
        for i in 0..n {
            max_observed[i] = max_observed[i].max((next[i] - s[i]).abs());
        }
    }
    let declared = system.step_bound().to_vec();
    let violated = max_observed.iter().zip(&declared).any(|(m, d)| m > d);
    Ok(StepBoundReport {
        probes: n_probe,
        declared,
        max_observed,
        violated,
    })
}
