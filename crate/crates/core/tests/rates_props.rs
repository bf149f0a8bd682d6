use rand::Rng;

use safeset_core::rates::{Proposal, UniformProposal};
use safeset_core::rng::StreamRng;
use safeset_core::scenario::{MapSystem, PredicateRegion};
use safeset_core::{ScenarioSystem, is_failure_rate, mc_failure_rate, DomainBox, ExitHandling, RandomSource, Result, StateVector};


/// Fails on the first step iff the initial `u < p`; the second coordinate
/// only carries the failure flag.
fn bernoulli(threshold: f64) -> MapSystem<impl Fn(&[f64], &mut StreamRng) -> Vec<f64> + Send + Sync> {
    MapSystem::new(
        DomainBox::new(vec![0.0, 0.0], vec![1.0, 1.0]).unwrap(),
        Box::new(PredicateRegion(|s: &[f64]| s[1] >= 1.0)),
        vec![1.0, 1.0],
        ExitHandling::Saturate,
        move |s: &[f64], _: &mut StreamRng| if s[0] < threshold { vec![s[0], 1.0] } else { s.to_vec() },
    )
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

#[test]
fn monte_carlo_error_shrinks_with_n() {
    let sys = bernoulli(0.25);
    let errs: Vec<f64> = [100u64, 1000, 10_000]
        .iter()
        .map(|&n| {
            median(
                (0..20)
                    .map(|seed| {
                        let est = mc_failure_rate(&sys, n, 2, 0.9, &RandomSource::new(seed)).unwrap();
                        (est.p_hat - 0.25).abs()
                    })
                    .collect(),
            )
        })
        .collect();
    assert!(errs[0] > errs[1] && errs[1] > errs[2], "{errs:?}");
}

#[test]
fn monte_carlo_hits_the_bernoulli_rate() {
    let est = mc_failure_rate(&bernoulli(0.25), 10_000, 2, 0.99, &RandomSource::new(1)).unwrap();
    assert!(est.contains(0.25), "{est:?}");
    assert!(est.ci_lo <= est.p_hat && est.p_hat <= est.ci_hi);
}

#[test]
fn exact_interval_covers_at_least_nominal() {
    let sys = bernoulli(0.25);
    let hits = (0..500)
        .filter(|&r| mc_failure_rate(&sys, 200, 2, 0.9, &RandomSource::new(1000 + r)).unwrap().contains(0.25))
        .count();
    assert!(hits >= 425, "{hits}/500");
}

#[test]
fn never_failing_system_has_zero_rate() {
    let est = mc_failure_rate(&bernoulli(0.0), 50, 2, 0.95, &RandomSource::new(2)).unwrap();
    assert_eq!(est.p_hat, 0.0);
    assert_eq!(est.ci_lo, 0.0);
    assert!((est.ci_hi - (1.0 - 0.05f64.powf(1.0 / 50.0))).abs() < 1e-12);
}

/// With probability `mix` uniform on `[0, cut)`, otherwise uniform on `[0, 1]`.
struct TailMixture {
    cut: f64,
    mix: f64,
}

impl TailMixture {
    fn density(&self, u: f64) -> f64 {
        (1.0 - self.mix) + if u < self.cut { self.mix / self.cut } else { 0.0 }
    }
}

impl Proposal for TailMixture {
    fn sample(&self, rng: &mut StreamRng) -> Result<(StateVector, f64)> {
        let u = if rng.random::<f64>() < self.mix { rng.random_range(0.0..self.cut) } else { rng.random::<f64>() };
        let v = rng.random_range(0.0..1.0);
        Ok((StateVector(vec![u, v]), 1.0 / self.density(u)))
    }
}

#[test]
fn importance_sampling_is_unbiased_on_a_rare_tail() {
    let sys = bernoulli(0.01);
    let q = TailMixture { cut: 0.1, mix: 0.9 };
    let reps: Vec<f64> = (0..100)
        .map(|r| is_failure_rate(&sys, &q, 5000, 2, 0.9, &RandomSource::new(r)).unwrap().p_hat)
        .collect();
    let mean = reps.iter().sum::<f64>() / reps.len() as f64;
    let var = reps.iter().map(|p| (p - mean).powi(2)).sum::<f64>() / (reps.len() - 1) as f64;
    let se = (var / reps.len() as f64).sqrt();
    assert!((mean - 0.01).abs() <= 3.0 * se, "mean {mean} se {se}");

    let one = is_failure_rate(&sys, &q, 5000, 2, 0.9, &RandomSource::new(7)).unwrap();
    let sd = (var).sqrt();
    assert!((one.p_hat - 0.01).abs() <= 3.0 * sd);
}

#[test]
fn nominal_proposal_reproduces_monte_carlo() {
    let sys = bernoulli(0.3);
    let q = UniformProposal { domain: sys.domain(), failure: sys.failure() };
    let src = RandomSource::new(11);
    let mc = mc_failure_rate(&sys, 2000, 2, 0.9, &src).unwrap();
    let is = is_failure_rate(&sys, &q, 2000, 2, 0.9, &src).unwrap();
    assert_eq!(mc.p_hat, is.p_hat);
}
