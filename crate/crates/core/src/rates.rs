//! Failure-rate baselines: crude Monte Carlo and importance sampling over
//! initial states, with exact binomial intervals.

use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use statrs::function::beta::inv_beta_reg;

use crate::error::{Error, Result};
use crate::rng::{tags, RandomSource, StreamRng};
use crate::scenario::{rollout, DomainBox, FailureRegion, ScenarioSystem, StateVector};

/// Rejection attempts before giving up on drawing outside the failure region.
const MAX_REJECTIONS: usize = 100_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateEstimate {
    pub method: String,
    pub p_hat: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub n: u64,
    pub confidence: f64,
    /// Seconds spent on the runs.
    pub wallclock: f64,
}

impl RateEstimate {
    pub fn csv_header() -> &'static str {
        "method,n,p_hat,ci_lo,ci_hi,runs_wallclock"
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{:.3}",
            self.method, self.n, self.p_hat, self.ci_lo, self.ci_hi, self.wallclock
        )
    }

    pub fn contains(&self, p: f64) -> bool {
        self.ci_lo <= p && p <= self.ci_hi
    }
}

/// Exact binomial interval. With no failures the upper end is the one-sided
/// bound `1 - (1 - confidence)^(1/n)`; with all failures the lower end is
/// `(1 - confidence)^(1/n)`.
pub fn clopper_pearson(k: u64, n: u64, confidence: f64) -> Result<(f64, f64)> {
    if n == 0 {
        return Err(Error::Domain("clopper_pearson needs n >= 1".into()));
    }
    if k > n {
        return Err(Error::Domain(format!("k = {k} exceeds n = {n}")));
    }
    if !(confidence > 0.0 && confidence < 1.0) {
        return Err(Error::Domain(format!("confidence must lie in (0,1), got {confidence}")));
    }
    let alpha = 1.0 - confidence;
    let (kf, nf) = (k as f64, n as f64);
    if k == 0 {
        return Ok((0.0, 1.0 - alpha.powf(1.0 / nf)));
    }
    if k == n {
        return Ok((alpha.powf(1.0 / nf), 1.0));
    }
    let lo = inv_beta_reg(kf, nf - kf + 1.0, alpha / 2.0);
    let hi = inv_beta_reg(kf + 1.0, nf - kf, 1.0 - alpha / 2.0);
    Ok((lo, hi))
}

/// Draw of an initial state with its likelihood ratio against the nominal
/// uniform density on `S \ C`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedSample {
    pub s0: StateVector,
    pub failed: bool,
    pub weight: f64,
}

/// Initial-state proposal `q` for importance sampling.
pub trait Proposal: Send + Sync {
    /// Returns a state and `p(s)/q(s)`.
    fn sample(&self, rng: &mut StreamRng) -> Result<(StateVector, f64)>;
}

/// Uniform over the domain minus the failure region, by rejection.
pub fn sample_outside(domain: &DomainBox, failure: &dyn FailureRegion, rng: &mut StreamRng) -> Result<StateVector> {
    for _ in 0..MAX_REJECTIONS {
        let s = domain.sample_uniform(rng);
        if !failure.contains(&s) {
            return Ok(s);
        }
    }
    Err(Error::Resource("could not draw a state outside the failure region".into()))
}

/// The nominal density itself: unit weights.
pub struct UniformProposal<'a> {
    pub domain: &'a DomainBox,
    pub failure: &'a dyn FailureRegion,
}

impl Proposal for UniformProposal<'_> {
    fn sample(&self, rng: &mut StreamRng) -> Result<(StateVector, f64)> {
        Ok((sample_outside(self.domain, self.failure, rng)?, 1.0))
    }
}

/// Positions tilted toward small separation, `q ∝ exp(-λ |dp|)` on
/// `[-L, L]^2` minus the disc `|dp| <= r`; remaining dimensions uniform.
#[derive(Debug, Clone)]
pub struct SeparationTilt {
    domain: DomainBox,
    radius: f64,
    lambda: f64,
    /// `∫ exp(-λ |dp|)` over the admissible positions.
    z: f64,
    area: f64,
}

impl SeparationTilt {
    pub fn new(domain: DomainBox, radius: f64, lambda: f64) -> Result<Self> {
        if domain.dim() < 2 {
            return Err(Error::Dimension { what: "tilt domain", expected: 2, got: domain.dim() });
        }
        let l = domain.hi()[0];
        let symmetric = (0..2).all(|i| domain.lo()[i] == -l && domain.hi()[i] == l);
        if !symmetric || radius >= l {
            return Err(Error::Config("separation tilt needs a symmetric square containing the disc".into()));
        }
        if !(lambda.is_finite() && lambda >= 0.0) {
            return Err(Error::Config(format!("tilt lambda must be non-negative, got {lambda}")));
        }
        let area = 4.0 * l * l - std::f64::consts::PI * radius * radius;
        let z = square_mass(l, lambda) - disc_mass(radius, lambda);
        Ok(Self { domain, radius, lambda, z, area })
    }

    pub fn weight(&self, r: f64) -> f64 {
        self.z * (self.lambda * r).exp() / self.area
    }
}

/// `∫_0^R r e^{-λ r} dr`.
fn radial_mass(r: f64, lambda: f64) -> f64 {
    if lambda == 0.0 {
        return 0.5 * r * r;
    }
    (1.0 - (-lambda * r).exp() * (1.0 + lambda * r)) / (lambda * lambda)
}

fn disc_mass(radius: f64, lambda: f64) -> f64 {
    2.0 * std::f64::consts::PI * radial_mass(radius, lambda)
}

/// `∫ exp(-λ |x|)` over `[-l, l]^2`, by symmetry eight times a wedge.
fn square_mass(l: f64, lambda: f64) -> f64 {
    let m = 4000;
    let h = std::f64::consts::FRAC_PI_4 / m as f64;
    let f = |t: f64| radial_mass(l / t.cos(), lambda);
    let mut acc = f(0.0) + f(std::f64::consts::FRAC_PI_4);
    for i in 1..m {
        acc += if i % 2 == 1 { 4.0 } else { 2.0 } * f(i as f64 * h);
    }
    8.0 * acc * h / 3.0
}

impl Proposal for SeparationTilt {
    fn sample(&self, rng: &mut StreamRng) -> Result<(StateVector, f64)> {
        for _ in 0..MAX_REJECTIONS {
            let s = self.domain.sample_uniform(rng);
            let r = s[0].hypot(s[1]);
            if r <= self.radius {
                continue;
            }
            // envelope is uniform; exp(-λ r) peaks on the disc boundary
            if rng.random::<f64>() < (-self.lambda * (r - self.radius)).exp() {
                return Ok((s, self.weight(r)));
            }
        }
        Err(Error::Resource("tilted proposal rejected every draw".into()))
    }
}

fn run_batch<S, F>(system: &S, n: u64, k: usize, src: &RandomSource, draw: F) -> Result<Vec<WeightedSample>>
where
    S: ScenarioSystem + ?Sized,
    F: Fn(&mut StreamRng) -> Result<(StateVector, f64)> + Sync,
{
    (0..n)
        .into_par_iter()
        .map(|i| {
            let run = src.child(i);
            let (s0, weight) = draw(&mut run.child(tags::SAMPLE).rng())?;
            if !(weight.is_finite() && weight > 0.0) {
                return Err(Error::Domain(format!("proposal weight {weight} at run {i}")));
            }
            let rec = rollout(system, &s0, k, &run)?;
            Ok(WeightedSample { s0, failed: rec.failed(), weight })
        })
        .collect()
}

/// Fraction of runs from uniform initial states on `S \ C` that reach `C`.
///
/// Run `i` uses `src.child(i)`.
pub fn mc_failure_rate<S: ScenarioSystem + ?Sized>(
    system: &S,
    n: u64,
    k: usize,
    confidence: f64,
    src: &RandomSource,
) -> Result<RateEstimate> {
    if n == 0 {
        return Err(Error::Precondition("Monte Carlo needs n >= 1".into()));
    }
    let start = Instant::now();
    let proposal = UniformProposal { domain: system.domain(), failure: system.failure() };
    let samples = run_batch(system, n, k, src, |rng| proposal.sample(rng))?;
    let failures = samples.iter().filter(|s| s.failed).count() as u64;
    let (lo, hi) = clopper_pearson(failures, n, confidence)?;
    Ok(RateEstimate {
        method: "monte-carlo".into(),
        p_hat: failures as f64 / n as f64,
        ci_lo: lo,
        ci_hi: hi,
        n,
        confidence,
        wallclock: start.elapsed().as_secs_f64(),
    })
}

/// Weighted failure fraction under `proposal`, with a normal interval from
/// the sample variance of the weighted indicators.
pub fn is_failure_rate<S: ScenarioSystem + ?Sized>(
    system: &S,
    proposal: &dyn Proposal,
    n: u64,
    k: usize,
    confidence: f64,
    src: &RandomSource,
) -> Result<RateEstimate> {
    if n == 0 {
        return Err(Error::Precondition("importance sampling needs n >= 1".into()));
    }
    if !(confidence > 0.0 && confidence < 1.0) {
        return Err(Error::Domain(format!("confidence must lie in (0,1), got {confidence}")));
    }
    let start = Instant::now();
    let samples = run_batch(system, n, k, src, |rng| proposal.sample(rng))?;
    Ok(weighted_estimate(&samples, confidence, start.elapsed().as_secs_f64()))
}

/// Mean of `w * fail` with a normal interval.
pub fn weighted_estimate(samples: &[WeightedSample], confidence: f64, wallclock: f64) -> RateEstimate {
    let n = samples.len() as f64;
    let terms: Vec<f64> = samples.iter().map(|s| if s.failed { s.weight } else { 0.0 }).collect();
    let mean = terms.iter().sum::<f64>() / n;
    let var = if samples.len() > 1 {
        terms.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    let z = Normal::new(0.0, 1.0).expect("standard normal").inverse_cdf(0.5 + confidence / 2.0);
    let half = z * (var / n).sqrt();
    RateEstimate {
        method: "importance".into(),
        p_hat: mean,
        ci_lo: (mean - half).max(0.0),
        ci_hi: mean + half,
        n: samples.len() as u64,
        confidence,
        wallclock,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_intervals_match_reference_values() {
        let cases = [
            (3, 20, 0.9, 0.04216940788577861, 0.3436638043142818),
            (10, 1000, 0.95, 0.004805510691049309, 0.01831324305511245),
            (250, 1000, 0.9, 0.2275434796716092, 0.27355363132372024),
            (1, 5, 0.99, 0.0010020060210801213, 0.8149027278782698),
        ];
        for (k, n, c, lo, hi) in cases {
            let (a, b) = clopper_pearson(k, n, c).unwrap();
            assert!((a - lo).abs() < 1e-9 && (b - hi).abs() < 1e-9, "{k}/{n}: {a} {b}");
        }
    }

    #[test]
    fn edge_intervals() {
        let (lo, hi) = clopper_pearson(0, 22, 0.95).unwrap();
        assert_eq!(lo, 0.0);
        assert!((hi - 0.1273).abs() < 5e-5);
        let (lo, hi) = clopper_pearson(22, 22, 0.95).unwrap();
        assert!((lo - 0.05f64.powf(1.0 / 22.0)).abs() < 1e-15);
        assert_eq!(hi, 1.0);
        assert!(clopper_pearson(0, 10_000_000, 0.95).unwrap().1 < 1e-6);
        assert!(clopper_pearson(0, 0, 0.95).is_err());
        assert!(clopper_pearson(3, 2, 0.95).is_err());
    }

    #[test]
    fn tilt_normaliser() {
        // flat tilt: Z is the area itself and every weight is one
        let dom = DomainBox::new(vec![-6.0, -6.0, -1.0], vec![6.0, 6.0, 1.0]).unwrap();
        let t = SeparationTilt::new(dom.clone(), 1.0, 0.0).unwrap();
        assert!((t.weight(3.0) - 1.0).abs() < 1e-9);
        // against a brute-force midpoint sum
        let t = SeparationTilt::new(dom, 1.0, 0.5).unwrap();
        let m = 1200;
        let h = 12.0 / m as f64;
        let mut z = 0.0;
        for i in 0..m {
            for j in 0..m {
                let (x, y) = (-6.0 + (i as f64 + 0.5) * h, -6.0 + (j as f64 + 0.5) * h);
                let r = x.hypot(y);
                if r > 1.0 {
                    z += (-0.5 * r).exp() * h * h;
                }
            }
        }
        assert!((t.z - z).abs() / z < 1e-3, "{} vs {z}", t.z);
    }
}
