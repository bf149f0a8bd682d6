use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use log::{info, warn};
use serde::Serialize;

use safeset_core::cbf::{cbf_system, PolicyKind};
use safeset_core::rng::tags;
use safeset_core::toys::{self, OracleCheck};
use safeset_core::{
    characterize, consensus_distance, critical_band, derived_failure_rate, is_failure_rate, mc_failure_rate,
    reference_cover, validate_safe_set, Achieved, CoverLattice, PruneScope, RandomSource, RateEstimate,
    SafeSetResult, ScenarioSystem, SeparationTilt, Termination, ValidationReport,
};

use crate::config::{ExperimentSpec, SystemKind};
use crate::slice::{compute_slice, SliceSpec, SliceSummary};
use crate::CliError;

/// Binds `$sys` to the configured system and evaluates `$body`.
///
/// For the filtered chain, `cbf` selects the descending policy and `pred`
/// the dithering one.
macro_rules! with_system {
    ($spec:expr, $policy:expr, |$sys:ident| $body:expr) => {{
        let spec: &ExperimentSpec = $spec;
        match spec.experiment.system {
            SystemKind::Cbf => {
                let owned = cbf_system($policy, spec.cbf_params())?;
                let $sys = &owned;
                $body
            }
            SystemKind::Chain1d => {
                let $sys = &toys::chain_1d();
                $body
            }
            SystemKind::Contraction2d => {
                let $sys = &toys::contraction_2d();
                $body
            }
            SystemKind::Annulus2d => {
                let $sys = &toys::annulus_2d();
                $body
            }
            SystemKind::Rotation2d => {
                let $sys = &toys::rotation_2d();
                $body
            }
            SystemKind::FilteredChain => {
                let (descend, dither) = toys::consensus_pair()?;
                match $policy {
                    PolicyKind::Cbf => {
                        let $sys = &descend;
                        $body
                    }
                    PolicyKind::Pred => {
                        let $sys = &dither;
                        $body
                    }
                }
            }
        }
    }};
}

pub const SAFE_SET: &str = "safe_set.csv";
pub const HISTORY: &str = "history.csv";
pub const AUDIT: &str = "audit.jsonl";
pub const ESTIMATES: &str = "estimates.csv";
pub const RESOLVED: &str = "resolved_config.toml";

fn out_path(spec: &ExperimentSpec, name: &str) -> PathBuf {
    spec.output.dir.join(name)
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    Ok(BufWriter::new(File::create(path)?))
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    let mut w = create(path)?;
    w.write_all(text.as_bytes())?;
    w.flush()?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Io(e.to_string()))?;
    write_text(path, &(text + "\n"))
}

pub fn write_resolved(spec: &ExperimentSpec) -> Result<(), CliError> {
    write_text(&out_path(spec, RESOLVED), &spec.to_toml())
}

/// Runs the decay loop without touching the filesystem.
pub fn run_characterize(spec: &ExperimentSpec, policy: PolicyKind, seed: u64) -> Result<SafeSetResult, CliError> {
    let schedule = spec.decay_schedule()?;
    let defaults = spec.stage_defaults()?;
    with_system!(spec, policy, |sys| Ok(characterize(sys, &schedule, &defaults, &RandomSource::new(seed))?))
}

/// `1 - |safe| / |S \ C|` at the result's resolution.
pub fn derived_rate(spec: &ExperimentSpec, cover: &CoverLattice) -> Result<f64, CliError> {
    with_system!(spec, spec.experiment.policy, |sys| {
        let reference = reference_cover(cover, sys.failure())?;
        Ok(derived_failure_rate(cover, &reference)?)
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CharacterizeReport {
    pub cardinality: usize,
    pub runs: u64,
    pub termination: Termination,
    pub achieved: Option<Achieved>,
    pub derived_failure_rate: f64,
}

impl CharacterizeReport {
    pub fn exit_code(&self) -> i32 {
        match self.termination {
            Termination::BudgetExhausted => 3,
            _ => 0,
        }
    }
}

pub fn write_result(spec: &ExperimentSpec, result: &SafeSetResult) -> Result<(), CliError> {
    with_system!(spec, spec.experiment.policy, |sys| {
        let mut w = create(&out_path(spec, SAFE_SET))?;
        result.write_safe_set_csv(Some(sys.failure()), &mut w)?;
        w.flush()?;
        Ok::<(), CliError>(())
    })?;
    let mut w = create(&out_path(spec, HISTORY))?;
    result.write_history_csv(&mut w)?;
    w.flush()?;
    let mut w = create(&out_path(spec, AUDIT))?;
    result.write_audit_jsonl(&mut w)?;
    w.flush()?;
    Ok(())
}

pub fn cmd_characterize(spec: &ExperimentSpec) -> Result<CharacterizeReport, CliError> {
    write_resolved(spec)?;
    let result = run_characterize(spec, spec.experiment.policy, spec.experiment.seed)?;
    write_result(spec, &result)?;
    let derived = if result.cover.is_empty() { 1.0 } else { derived_rate(spec, &result.cover)? };
    Ok(CharacterizeReport {
        cardinality: result.cardinality(),
        runs: result.runs_total,
        termination: result.termination,
        achieved: result.achieved.clone(),
        derived_failure_rate: derived,
    })
}

/// Loads `safe_set.csv` from the output directory at the final δ.
pub fn load_cover(spec: &ExperimentSpec) -> Result<CoverLattice, CliError> {
    let path = out_path(spec, SAFE_SET);
    let file = File::open(&path).map_err(|e| CliError::Missing(format!("{}: {e}", path.display())))?;
    let delta = spec.final_stage()?.delta;
    with_system!(spec, spec.experiment.policy, |sys| Ok(CoverLattice::read_csv(
        sys.domain().clone(),
        delta,
        BufReader::new(file)
    )?))
}

pub fn run_validate(spec: &ExperimentSpec, cover: &CoverLattice, seed: u64) -> Result<ValidationReport, CliError> {
    let last = spec.final_stage()?;
    let step_bound = spec.step_bound()?;
    with_system!(spec, spec.experiment.policy, |sys| Ok(validate_safe_set(
        sys,
        cover,
        last.eps,
        last.beta,
        spec.experiment.k,
        &step_bound,
        &RandomSource::new(seed),
    )?))
}

pub fn cmd_validate(spec: &ExperimentSpec) -> Result<ValidationReport, CliError> {
    let cover = load_cover(spec)?;
    let report = run_validate(spec, &cover, spec.experiment.seed)?;
    write_json(&out_path(spec, "validation.json"), &report)?;
    Ok(report)
}

pub fn cmd_slice(spec: &ExperimentSpec, slice: SliceSpec) -> Result<SliceSummary, CliError> {
    if spec.experiment.system != SystemKind::Cbf {
        return Err(CliError::Config("slice is only defined for the cbf system".into()));
    }
    let params = spec.cbf_params();
    slice.validate(&params)?;
    let cover = load_cover(spec)?;
    let system = cbf_system(spec.experiment.policy, params.clone())?;
    let band = critical_band(&cover, &spec.step_bound()?, Some(system.failure()), Some(system.exit_handling()));
    let s = compute_slice(&cover, &band, &params, slice)?;
    let stem = slice.stem();
    write_text(&out_path(spec, &format!("{stem}.csv")), &s.to_csv())?;
    write_text(&out_path(spec, &format!("{stem}.svg")), &s.to_svg())?;
    Ok(s.summary)
}

/// Runs summed over `history.csv`, if present.
fn history_runs(spec: &ExperimentSpec) -> Option<u64> {
    let text = fs::read_to_string(out_path(spec, HISTORY)).ok()?;
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next()?.split(',').collect();
    let col = header.iter().position(|h| *h == "runs")?;
    lines.map(|l| l.split(',').nth(col).and_then(|v| v.parse::<u64>().ok())).sum()
}

pub fn run_mc(spec: &ExperimentSpec, seed: u64) -> Result<RateEstimate, CliError> {
    let b = &spec.baselines;
    let src = RandomSource::new(seed).child(tags::MONTE_CARLO);
    with_system!(spec, spec.experiment.policy, |sys| Ok(mc_failure_rate(
        sys,
        b.n_mc,
        spec.experiment.k,
        b.confidence,
        &src
    )?))
}

pub fn cmd_baselines(spec: &ExperimentSpec) -> Result<Vec<RateEstimate>, CliError> {
    let b = &spec.baselines;
    let seed = spec.experiment.seed;
    let mut rows = vec![run_mc(spec, seed)?];
    info!("monte carlo: {}", rows[0].csv_row());
    if spec.experiment.system == SystemKind::Cbf {
        let params = spec.cbf_params();
        let system = cbf_system(spec.experiment.policy, params.clone())?;
        let tilt = SeparationTilt::new(params.domain(), params.d_s, b.tilt_lambda)?;
        let src = RandomSource::new(seed).child(tags::IMPORTANCE);
        rows.push(is_failure_rate(&system, &tilt, b.n_is, spec.experiment.k, b.confidence, &src)?);
        info!("importance: {}", rows[1].csv_row());
    } else {
        warn!("importance sampling is only configured for the cbf system; row omitted");
    }
    match load_cover(spec) {
        Ok(cover) if !cover.is_empty() => {
            let p = derived_rate(spec, &cover)?;
            rows.push(RateEstimate {
                method: "derived".into(),
                p_hat: p,
                ci_lo: p,
                ci_hi: p,
                n: history_runs(spec).unwrap_or(0),
                confidence: 1.0 - spec.final_stage()?.beta,
                wallclock: 0.0,
            });
        }
        Ok(_) => warn!("safe set is empty; derived row omitted"),
        Err(e) => warn!("no characterized safe set ({e}); derived row omitted"),
    }
    let mut w = create(&out_path(spec, ESTIMATES))?;
    writeln!(w, "{}", RateEstimate::csv_header())?;
    for r in &rows {
        writeln!(w, "{}", r.csv_row())?;
    }
    w.flush()?;
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConsensusStage {
    pub stage: usize,
    pub eps: f64,
    pub mean_cardinality_cbf: f64,
    pub mean_cardinality_pred: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConsensusReport {
    pub seeds: Vec<u64>,
    pub stages: Vec<ConsensusStage>,
    /// Final-set distance per seed.
    pub distances: Vec<f64>,
    pub runs_cbf: Vec<u64>,
    pub runs_pred: Vec<u64>,
    pub budget_exhausted: bool,
}

impl ConsensusReport {
    pub fn exit_code(&self) -> i32 {
        if self.budget_exhausted {
            3
        } else {
            0
        }
    }
}

pub fn median(values: &[u64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_unstable();
    match v.len() {
        0 => f64::NAN,
        n if n % 2 == 1 => v[n / 2] as f64,
        n => (v[n / 2 - 1] + v[n / 2]) as f64 / 2.0,
    }
}

/// Both policies over matched seeds.
pub fn run_consensus(spec: &ExperimentSpec) -> Result<(ConsensusReport, Vec<[SafeSetResult; 2]>), CliError> {
    let seeds: Vec<u64> = (0..spec.experiment.trials).map(|i| spec.experiment.seed + i).collect();
    let mut pairs = Vec::with_capacity(seeds.len());
    for &seed in &seeds {
        let cbf = run_characterize(spec, PolicyKind::Cbf, seed)?;
        let pred = run_characterize(spec, PolicyKind::Pred, seed)?;
        info!("seed {seed}: |cbf| {} |pred| {}", cbf.cardinality(), pred.cardinality());
        pairs.push([cbf, pred]);
    }
    let mut per_stage: BTreeMap<usize, (f64, [Vec<usize>; 2])> = BTreeMap::new();
    for pair in &pairs {
        for (p, res) in pair.iter().enumerate() {
            for s in &res.stages {
                per_stage.entry(s.stage).or_insert_with(|| (s.eps, [vec![], vec![]])).1[p].push(s.cardinality);
            }
        }
    }
    let mean = |v: &[usize]| if v.is_empty() { f64::NAN } else { v.iter().sum::<usize>() as f64 / v.len() as f64 };
    let stages = per_stage
        .into_iter()
        .map(|(stage, (eps, c))| ConsensusStage {
            stage,
            eps,
            mean_cardinality_cbf: mean(&c[0]),
            mean_cardinality_pred: mean(&c[1]),
        })
        .collect();
    let distances = pairs
        .iter()
        .map(|[a, b]| consensus_distance(a, b))
        .collect::<Result<Vec<_>, _>>()?;
    let report = ConsensusReport {
        seeds,
        stages,
        distances,
        runs_cbf: pairs.iter().map(|p| p[0].runs_total).collect(),
        runs_pred: pairs.iter().map(|p| p[1].runs_total).collect(),
        budget_exhausted: pairs.iter().flatten().any(|r| r.termination == Termination::BudgetExhausted),
    };
    Ok((report, pairs))
}

pub fn cmd_consensus(spec: &ExperimentSpec) -> Result<ConsensusReport, CliError> {
    write_resolved(spec)?;
    let (report, pairs) = run_consensus(spec)?;
    let mut w = create(&out_path(spec, "consensus.csv"))?;
    writeln!(w, "policy,seed,stage,eps,runs,cardinality")?;
    for (pair, seed) in pairs.iter().zip(&report.seeds) {
        for (name, res) in ["cbf", "pred"].iter().zip(pair) {
            for s in &res.stages {
                writeln!(w, "{name},{seed},{},{},{},{}", s.stage, s.eps, s.runs, s.cardinality)?;
            }
        }
    }
    w.flush()?;
    write_json(&out_path(spec, "consensus.json"), &report)?;
    Ok(report)
}

/// Quantifies every bundled toy over the configured seeds and compares with
/// the brute-force oracles.
pub fn run_oracle_check(seed: u64, trials: u64, scope: PruneScope) -> Result<Vec<OracleCheck>, CliError> {
    let mut checks = Vec::new();
    for toy in toys::oracle_toys().into_iter().chain([toys::rotation_2d()]) {
        let oracle = toy.oracle()?;
        for s in seed..seed + trials {
            checks.push(toys::oracle_check(toy.name(), &toy, &oracle, s, scope)?);
        }
    }
    let (descend, dither) = toys::consensus_pair()?;
    let oracle = descend.env.oracle()?;
    for s in seed..seed + trials {
        checks.push(toys::oracle_check("filtered-chain/descend", &descend, &oracle, s, scope)?);
        checks.push(toys::oracle_check("filtered-chain/dither", &dither, &oracle, s, scope)?);
    }
    Ok(checks)
}

pub fn cmd_oracle_check(spec: &ExperimentSpec) -> Result<Vec<OracleCheck>, CliError> {
    let checks = run_oracle_check(spec.experiment.seed, spec.experiment.trials, spec.experiment.prune_scope)?;
    let mut w = create(&out_path(spec, "oracle_check.csv"))?;
    writeln!(w, "toy,seed,quantified,oracle,matches")?;
    for c in &checks {
        writeln!(w, "{},{},{},{},{}", c.toy, c.seed, c.quantified, c.oracle, c.matches)?;
    }
    w.flush()?;
    Ok(checks)
}
