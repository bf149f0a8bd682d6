//! Small lattice systems with known maximal invariant sets.
//!
//! Every toy lives on integer points with unit cells (δ = 0.5), so runs
//! started at centroids stay on centroids and a brute-force fixed point over
//! cells is exact.

use rand::Rng;

use crate::cover::{CellId, CoverLattice, DeltaVector, Lattice};
use crate::error::Result;
use crate::quantify::{characterize, DecaySchedule, PruneScope, Stage, StageDefaults};
use crate::rng::{RandomSource, StreamRng};
use crate::scenario::{
    compose_scenario, Composed, DomainBox, Environment, ExitHandling, FailureRegion, PredicateRegion,
    ScenarioSystem, StateVector, TestingPolicy,
};

type Pred = fn(&[f64]) -> bool;
type Successors = fn(&[f64]) -> Vec<Vec<f64>>;

/// A system whose step picks uniformly among an explicit successor list.
pub struct Toy {
    name: &'static str,
    domain: DomainBox,
    failure: PredicateRegion<Pred>,
    step_bound: Vec<f64>,
    exit: Vec<ExitHandling>,
    successors: Successors,
}

impl Toy {
    fn new(name: &'static str, size: &[usize], failure: Pred, step_bound: f64, successors: Successors) -> Self {
        let lo = vec![-0.5; size.len()];
        let hi = size.iter().map(|&m| m as f64 - 0.5).collect();
        Self {
            name,
            domain: DomainBox::new(lo, hi).expect("toy domain"),
            failure: PredicateRegion(failure),
            step_bound: vec![step_bound; size.len()],
            exit: vec![ExitHandling::Saturate; size.len()],
            successors,
        }
    }

    pub fn name(&self) -> &'static str {
        self.name
    }

    pub fn delta(&self) -> DeltaVector {
        DeltaVector::new(vec![0.5; self.domain.dim()]).expect("positive")
    }

    pub fn successors(&self, s: &[f64]) -> Vec<Vec<f64>> {
        (self.successors)(s)
    }

    /// Maximal invariant subset of `S \ C` at unit resolution.
    pub fn oracle(&self) -> Result<CoverLattice> {
        invariant_oracle(&self.domain, &self.delta(), &self.failure, |s| self.successors(s))
    }
}

impl ScenarioSystem for Toy {
    type Episode = ();

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
    fn step(&self, _: &mut (), s: &[f64], rng: &mut StreamRng) -> StateVector {
        let mut next = (self.successors)(s);
        let i = if next.len() == 1 { 0 } else { rng.random_range(0..next.len()) };
        StateVector(next.swap_remove(i))
    }
}

fn clamp_to(v: f64, hi: f64) -> f64 {
    v.clamp(0.0, hi)
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// 0..=9; cells up to 5 drain to 0, cells from 6 drift into the failure at 9.
pub fn chain_1d() -> Toy {
    Toy::new("chain-1d", &[10], |s| s[0] >= 8.5, 1.0, |s| {
        let x = s[0];
        vec![vec![if x <= 5.0 { (x - 1.0).max(0.0) } else { clamp_to(x + 1.0, 9.0) }]]
    })
}

/// 11×11 grid contracting toward (5,5); the failure is the single point (8,8).
pub fn contraction_2d() -> Toy {
    Toy::new(
        "contraction-2d",
        &[11, 11],
        |s| (s[0] - 8.0).abs() < 0.5 && (s[1] - 8.0).abs() < 0.5,
        1.0,
        |s| vec![vec![s[0] - sign(s[0] - 5.0), s[1] - sign(s[1] - 5.0)]],
    )
}

/// 13×13 grid around (6,6): the core (∞-radius < 2) contracts, the rest is
/// pushed outward through an unsafe annulus `3 <= |s - c| <= 4`.
pub fn annulus_2d() -> Toy {
    Toy::new(
        "annulus-2d",
        &[13, 13],
        |s| {
            let r = (s[0] - 6.0).hypot(s[1] - 6.0);
            (3.0..=4.0).contains(&r)
        },
        1.0,
        |s| {
            let d = [s[0] - 6.0, s[1] - 6.0];
            let out = d[0].abs().max(d[1].abs()) >= 2.0;
            let dir = if out { 1.0 } else { -1.0 };
            vec![vec![
                clamp_to(s[0] + dir * sign(d[0]), 12.0),
                clamp_to(s[1] + dir * sign(d[1]), 12.0),
            ]]
        },
    )
}

/// 11×11 grid spiralling toward (5,5) and settling on a unit cycle; the
/// failure is a short wall segment the spiral crosses.
pub fn rotation_2d() -> Toy {
    Toy::new(
        "rotation-2d",
        &[11, 11],
        |s| (s[0] - 8.0).abs() < 0.5 && (2.5..=4.5).contains(&s[1]),
        2.0,
        |s| {
            let d = [s[0] - 5.0, s[1] - 5.0];
            vec![vec![
                clamp_to(s[0] - sign(d[0]) - sign(d[1]), 10.0),
                clamp_to(s[1] - sign(d[1]) + sign(d[0]), 10.0),
            ]]
        },
    )
}

/// The deterministic toys used for oracle equivalence.
pub fn oracle_toys() -> Vec<Toy> {
    vec![chain_1d(), contraction_2d(), annulus_2d()]
}

/// Brute-force maximal invariant subset: starting from every cell whose
/// centroid is outside `failure`, repeatedly drop cells with a successor in
/// the failure region, outside the domain, or in a dropped cell.
pub fn invariant_oracle(
    domain: &DomainBox,
    delta: &DeltaVector,
    failure: &dyn FailureRegion,
    successors: impl Fn(&[f64]) -> Vec<Vec<f64>>,
) -> Result<CoverLattice> {
    let mut cover = CoverLattice::empty(domain.clone(), delta.clone())?;
    let lattice: Lattice = cover.lattice().clone();
    for id in (0..lattice.total_cells()).map(CellId) {
        if !failure.contains(&lattice.centroid(id)) {
            cover.activate(id);
        }
    }
    loop {
        let doomed: Vec<CellId> = cover
            .active()
            .filter(|&id| {
                successors(&lattice.centroid(id)).iter().any(|n| {
                    failure.contains(n)
                        || match lattice.locate(n) {
                            Some(c) => !cover.is_active(c),
                            None => true,
                        }
                })
            })
            .collect();
        if doomed.is_empty() {
            return Ok(cover);
        }
        for id in doomed {
            cover.deactivate(id);
        }
    }
}

/// Settings for quantifying a toy: two stages at unit resolution.
pub fn toy_schedule(dim: usize) -> DecaySchedule {
    let d = DeltaVector::new(vec![0.5; dim]).expect("positive");
    DecaySchedule::new(
        vec![
            Stage { eps: 0.01, beta: 0.01, delta: d.clone() },
            Stage { eps: 0.002, beta: 0.01, delta: d },
        ],
        1_000_000,
    )
    .expect("valid toy schedule")
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleCheck {
    pub toy: String,
    pub seed: u64,
    pub quantified: usize,
    pub oracle: usize,
    pub matches: bool,
}

/// Runs the decay loop on a toy and compares with its oracle.
pub fn oracle_check<S: ScenarioSystem + ?Sized>(
    name: &str,
    system: &S,
    oracle: &CoverLattice,
    seed: u64,
    scope: PruneScope,
) -> Result<OracleCheck> {
    let defaults = StageDefaults {
        k: 20,
        step_bound: system.step_bound().to_vec(),
        prune_scope: scope,
        batch: 1,
    };
    let res = characterize(system, &toy_schedule(system.dim()), &defaults, &RandomSource::new(seed))?;
    Ok(OracleCheck {
        toy: name.to_string(),
        seed,
        quantified: res.cover.len(),
        oracle: oracle.len(),
        matches: &res.cover == oracle,
    })
}

/// 1-D chain with an action input. Below 6 the action moves the state by
/// `round(a)` but a filter keeps it within 0..=5; from 6 on the state drifts
/// up regardless of the action. The failure is 9.
#[derive(Clone)]
pub struct FilteredChain {
    domain: DomainBox,
    step_bound: Vec<f64>,
    exit: Vec<ExitHandling>,
    failure: PredicateRegion<Pred>,
}

impl Default for FilteredChain {
    fn default() -> Self {
        Self {
            domain: DomainBox::new(vec![-0.5], vec![9.5]).expect("domain"),
            step_bound: vec![1.0],
            exit: vec![ExitHandling::Saturate],
            failure: PredicateRegion(|s| s[0] >= 8.5),
        }
    }
}

impl FilteredChain {
    fn next(s: f64, a: f64) -> f64 {
        if s <= 5.0 {
            (s + a.round().clamp(-1.0, 1.0)).clamp(0.0, 5.0)
        } else {
            (s + 1.0).min(9.0)
        }
    }

    /// Successors over every admissible action.
    pub fn successors(s: &[f64]) -> Vec<Vec<f64>> {
        [-1.0, 0.0, 1.0].iter().map(|a| vec![Self::next(s[0], *a)]).collect()
    }

    pub fn oracle(&self) -> Result<CoverLattice> {
        let d = DeltaVector::new(vec![0.5])?;
        invariant_oracle(&self.domain, &d, &self.failure, Self::successors)
    }
}

impl Environment for FilteredChain {
    type Episode = ();

    fn action_dim(&self) -> usize {
        1
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
    fn step(&self, _: &mut (), s: &[f64], a: &[f64], _: &mut StreamRng) -> StateVector {
        StateVector(vec![Self::next(s[0], a[0])])
    }
}

/// Always pushes down.
#[derive(Debug, Clone, Copy, Default)]
pub struct DescendPolicy;

impl TestingPolicy for DescendPolicy {
    type Episode = ();
    fn state_dim(&self) -> usize {
        1
    }
    fn action_dim(&self) -> usize {
        1
    }
    fn begin_episode(&self, _: &[f64], _: &mut StreamRng) {}
    fn act(&self, _: &mut (), _: &[f64], _: &mut StreamRng) -> Vec<f64> {
        vec![-1.0]
    }
}

/// Uniformly random action in [-1, 1].
#[derive(Debug, Clone, Copy, Default)]
pub struct DitherPolicy;

impl TestingPolicy for DitherPolicy {
    type Episode = ();
    fn state_dim(&self) -> usize {
        1
    }
    fn action_dim(&self) -> usize {
        1
    }
    fn begin_episode(&self, _: &[f64], _: &mut StreamRng) {}
    fn act(&self, _: &mut (), _: &[f64], rng: &mut StreamRng) -> Vec<f64> {
        vec![rng.random_range(-1.0..=1.0)]
    }
}

/// Two policies sharing one filtered action set.
pub fn consensus_pair() -> Result<(Composed<FilteredChain, DescendPolicy>, Composed<FilteredChain, DitherPolicy>)> {
    Ok((
        compose_scenario(FilteredChain::default(), DescendPolicy)?,
        compose_scenario(FilteredChain::default(), DitherPolicy)?,
    ))
}
