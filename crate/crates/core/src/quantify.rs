//! εδ-almost safe set quantification by pruning and exploration, and the
//! εδ-decay outer loop around it.
//!
//! Starting from a cover of the candidate set, runs are initialised i.i.d.
//! uniformly over the centroids of the s̄-critical band. A run that reaches
//! the failure region prunes its starting cell, the cells it passed through,
//! and every graph ancestor of those. A run that reaches an admissible state
//! outside the cover (not excluded, not centred in the failure region)
//! explores: the new cell is activated and an edge from the starting cell is
//! recorded. Either event resets the clean-run streak; the stage ends once
//! `required_samples(ε, β)` consecutive runs trigger neither.

use std::collections::BTreeSet;
use std::io::Write;

use indexmap::IndexSet;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cover::{
    build_cover, critical_band, is_band_cell, refine_to, remove_cells, CellId, CellIndex,
    CellLookup, CoverLattice, DeltaVector, DiskGraph, ExcludedRegion,
};
use crate::error::{Error, Result};
use crate::rng::{tags, RandomSource};
use crate::scenario::{rollout, ExitHandling, FailureRegion, Outcome, RunRecord, ScenarioSystem};

/// Smallest `N` with `N >= ln β / ln(1 - ε)`.
pub fn required_samples(eps: f64, beta: f64) -> Result<u64> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::Domain(format!("epsilon must lie in (0,1), got {eps}")));
    }
    if !(beta > 0.0 && beta < 1.0) {
        return Err(Error::Domain(format!("beta must lie in (0,1), got {beta}")));
    }
    let ratio = beta.ln() / (-eps).ln_1p();
    // absorb rounding when the ratio is an exact integer, e.g. (0.5, 0.5)
    Ok(((ratio - 1e-9).ceil()).max(1.0) as u64)
}

/// Which cells a failing run removes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PruneScope {
    /// Start cell, every cell the run passed through, and their ancestors.
    Full,
    /// Start cell and its ancestors only.
    #[default]
    StartAndAncestors,
    /// Never prune. Only useful as a negative control for oracle checks.
    #[doc(hidden)]
    Disabled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantifierConfig {
    pub eps: f64,
    pub beta: f64,
    /// Steps per run.
    pub k: usize,
    /// Step bound s̄ used for the critical band.
    pub step_bound: Vec<f64>,
    /// Run budget.
    pub max_runs: u64,
    pub prune_scope: PruneScope,
    /// Rollouts executed speculatively per batch; 1 is plain sequential.
    pub batch: usize,
}

impl QuantifierConfig {
    pub fn new(eps: f64, beta: f64, k: usize, step_bound: Vec<f64>, max_runs: u64) -> Result<Self> {
        let cfg = Self {
            eps,
            beta,
            k,
            step_bound,
            max_runs,
            prune_scope: PruneScope::default(),
            batch: 1,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        required_samples(self.eps, self.beta)?;
        if self.k < 2 {
            return Err(Error::Config(format!("K must be >= 2, got {}", self.k)));
        }
        if self.step_bound.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::Config("step bound must be positive".into()));
        }
        if self.batch == 0 {
            return Err(Error::Config("batch must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stage {
    pub eps: f64,
    pub beta: f64,
    pub delta: DeltaVector,
}

/// Ordered (ε, β, δ) stages for the decay loop plus the total run budget.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecaySchedule {
    stages: Vec<Stage>,
    budget: u64,
}

impl DecaySchedule {
    /// ε must strictly decrease; β and every δ entry must not increase.
    pub fn new(stages: Vec<Stage>, budget: u64) -> Result<Self> {
        if stages.is_empty() {
            return Err(Error::Config("schedule has no stages".into()));
        }
        for s in &stages {
            required_samples(s.eps, s.beta)?;
        }
        for w in stages.windows(2) {
            let (a, b) = (&w[0], &w[1]);
            if b.eps >= a.eps {
                return Err(Error::Config(format!("eps must strictly decrease ({} -> {})", a.eps, b.eps)));
            }
            if b.beta > a.beta {
                return Err(Error::Config(format!("beta must not increase ({} -> {})", a.beta, b.beta)));
            }
            let (da, db) = (a.delta.as_slice(), b.delta.as_slice());
            if da.len() != db.len() || da.iter().zip(db).any(|(x, y)| y > x) {
                return Err(Error::Config("delta must be element-wise non-increasing".into()));
            }
        }
        Ok(Self { stages, budget })
    }

    /// Geometric schedule: ε ← λ_ε ε, β ← λ_β β, δ ← δ / factors.
    #[allow(clippy::too_many_arguments)]
    pub fn geometric(
        eps0: f64,
        beta0: f64,
        delta0: DeltaVector,
        lambda_eps: f64,
        lambda_beta: f64,
        factors: &[u64],
        count: usize,
        budget: u64,
    ) -> Result<Self> {
        if !(lambda_eps > 0.0 && lambda_eps < 1.0) || !(lambda_beta > 0.0 && lambda_beta <= 1.0) {
            return Err(Error::Config("decay coefficients must lie in (0,1)".into()));
        }
        if factors.len() != delta0.as_slice().len() || factors.contains(&0) {
            return Err(Error::Config("one positive refinement factor per dimension".into()));
        }
        let mut stages = Vec::with_capacity(count);
        let (mut eps, mut beta, mut delta) = (eps0, beta0, delta0);
        for _ in 0..count {
            stages.push(Stage {
                eps,
                beta,
                delta: delta.clone(),
            });
            eps *= lambda_eps;
            beta *= lambda_beta;
            delta = DeltaVector::new(
                delta.as_slice().iter().zip(factors).map(|(d, f)| d / *f as f64).collect(),
            )?;
        }
        Self::new(stages, budget)
    }

    pub fn stages(&self) -> &[Stage] {
        &self.stages
    }

    pub fn budget(&self) -> u64 {
        self.budget
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Termination {
    ScheduleComplete,
    BudgetExhausted,
    EmptySet,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Event {
    None,
    Prune,
    Explore,
}

/// Why a run triggered pruning.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PruneCause {
    Failure,
    /// Left the domain in a dimension where that ends the run.
    LeftDomain,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditRecord {
    pub stage: usize,
    pub run_index: u64,
    pub streak_counter: u64,
    pub s0_cell: CellIndex,
    pub outcome: Outcome,
    pub event: Event,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cause: Option<PruneCause>,
    pub cells_pruned: usize,
    pub cells_added: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageSummary {
    pub stage: usize,
    pub eps: f64,
    pub beta: f64,
    pub delta: Vec<f64>,
    pub runs: u64,
    pub cardinality: usize,
    pub prunes: u64,
    pub explores: u64,
    pub used_fallback_sampling: bool,
    pub termination: Termination,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Achieved {
    pub eps: f64,
    pub beta: f64,
    pub delta: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct SafeSetResult {
    pub cover: CoverLattice,
    pub graph: DiskGraph,
    pub excluded: ExcludedRegion,
    /// Last stage that finished with a full clean streak.
    pub achieved: Option<Achieved>,
    pub runs_total: u64,
    pub stages: Vec<StageSummary>,
    pub termination: Termination,
    pub audit: Vec<AuditRecord>,
    pub step_bound: Vec<f64>,
    /// Exit handling of the system, which decides whether the domain face bounds the band.
    pub exits: Vec<ExitHandling>,
}

impl SafeSetResult {
    pub fn cardinality(&self) -> usize {
        self.cover.len()
    }

    /// Whether the final set carries the (ε, β) guarantee of the last stage.
    pub fn is_validated(&self) -> bool {
        self.termination == Termination::ScheduleComplete
    }

    pub fn write_safe_set_csv<W: Write>(&self, failure: Option<&dyn FailureRegion>, w: W) -> Result<()> {
        let band = critical_band(&self.cover, &self.step_bound, failure, Some(&self.exits));
        self.cover.write_csv(&band, w)
    }

    pub fn write_history_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let n = self.cover.lattice().dim();
        let mut header = vec!["stage".to_string(), "eps".into(), "beta".into()];
        header.extend((0..n).map(|i| format!("delta{i}")));
        header.extend(["runs".into(), "cardinality".into(), "termination".into()]);
        writeln!(w, "{}", header.join(","))?;
        for s in &self.stages {
            let mut row = vec![s.stage.to_string(), format!("{}", s.eps), format!("{}", s.beta)];
            row.extend(s.delta.iter().map(|d| format!("{d}")));
            row.push(s.runs.to_string());
            row.push(s.cardinality.to_string());
            row.push(
                match s.termination {
                    Termination::ScheduleComplete => "validated",
                    Termination::BudgetExhausted => "budget-exhausted",
                    Termination::EmptySet => "empty-set",
                }
                .into(),
            );
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }

    pub fn write_audit_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        for rec in &self.audit {
            let line = serde_json::to_string(rec).map_err(|e| Error::Io(e.to_string()))?;
            writeln!(w, "{line}")?;
        }
        Ok(())
    }
}

/// Mutable state of one quantification stage.
struct Working<'a, S: ScenarioSystem + ?Sized> {
    system: &'a S,
    cfg: &'a QuantifierConfig,
    cover: CoverLattice,
    graph: DiskGraph,
    excluded: ExcludedRegion,
    band: IndexSet<CellId>,
}

struct RunEffect {
    event: Event,
    cause: Option<PruneCause>,
    pruned: usize,
    added: usize,
}

impl<'a, S: ScenarioSystem + ?Sized> Working<'a, S> {
    fn band_test(&self, id: CellId) -> bool {
        is_band_cell(
            &self.cover,
            id,
            &self.cfg.step_bound,
            Some(self.system.failure()),
            Some(self.system.exit_handling()),
        )
    }

    fn rebuild_band(&mut self) {
        self.band = critical_band(
            &self.cover,
            &self.cfg.step_bound,
            Some(self.system.failure()),
            Some(self.system.exit_handling()),
        )
            .into_iter()
            .collect();
    }

    /// Re-evaluates band membership around changed cells.
    fn refresh_band(&mut self, changed: &[CellId]) {
        let mut touched: BTreeSet<CellId> = BTreeSet::new();
        for &c in changed {
            touched.insert(c);
            touched.extend(self.cover.lattice().neighbours_within(c, &self.cfg.step_bound));
        }
        for id in touched {
            let member = self.cover.is_active(id) && self.band_test(id);
            if member {
                self.band.insert(id);
            } else {
                self.band.shift_remove(&id);
            }
        }
    }

    /// Draws the initial cell for run `r`. Falls back to all active cells
    /// when the band is empty.
    fn draw_start(&self, src: &RandomSource) -> (CellId, bool) {
        let mut rng = src.child(tags::SAMPLE).rng();
        if !self.band.is_empty() {
            let i = rng.random_range(0..self.band.len());
            (self.band[i], false)
        } else {
            let i = rng.random_range(0..self.cover.len());
            (self.cover.active().nth(i).expect("non-empty cover"), true)
        }
    }

    fn apply(&mut self, start: CellId, record: &RunRecord) -> Result<RunEffect> {
        let failure = self.system.failure();
        let mut visited: Vec<CellId> = vec![start];
        let mut added: Vec<CellId> = Vec::new();
        let mut bad: Option<PruneCause> = None;
        for (j, s) in record.states.iter().enumerate().skip(1) {
            match record.outcome {
                Outcome::Failed(f) if f == j => {
                    bad = Some(PruneCause::Failure);
                    break;
                }
                Outcome::LeftDomain(f) if f == j => {
                    bad = Some(PruneCause::LeftDomain);
                    break;
                }
                _ => {}
            }
            if failure.contains(s) {
                bad = Some(PruneCause::Failure);
                break;
            }
            match self.cover.cell_of(s) {
                CellLookup::Active(id) => visited.push(id),
                CellLookup::Outside => {
                    bad = Some(PruneCause::LeftDomain);
                    break;
                }
                CellLookup::Inactive(id) => {
                    // excluded or centred in C: not admissible, but not a failure either
                    if self.excluded.contains(s) || failure.contains(&self.cover.centroid(id)) {
                        continue;
                    }
                    self.cover.activate(id);
                    self.graph.add_edge(start, id);
                    added.push(id);
                    visited.push(id);
                }
            }
        }

        if let Some(cause) = bad {
            let seeds: BTreeSet<CellId> = match self.cfg.prune_scope {
                PruneScope::Full => visited.iter().copied().collect(),
                PruneScope::StartAndAncestors => BTreeSet::from([start]),
                PruneScope::Disabled => BTreeSet::new(),
            };
            if !seeds.is_empty() {
                let doomed: BTreeSet<CellId> = self
                    .graph
                    .ancestors(&seeds)
                    .into_iter()
                    .filter(|c| self.cover.is_active(*c))
                    .collect();
                remove_cells(&mut self.cover, &mut self.graph, &doomed, &mut self.excluded)?;
                let mut changed: Vec<CellId> = doomed.iter().copied().collect();
                changed.extend(&added);
                self.refresh_band(&changed);
                return Ok(RunEffect {
                    event: Event::Prune,
                    cause: Some(cause),
                    pruned: doomed.len(),
                    added: added.len(),
                });
            }
        }
        if !added.is_empty() {
            self.refresh_band(&added);
            return Ok(RunEffect {
                event: Event::Explore,
                cause: bad,
                pruned: 0,
                added: added.len(),
            });
        }
        Ok(RunEffect {
            event: Event::None,
            cause: bad,
            pruned: 0,
            added: 0,
        })
    }
}

/// One quantification stage over an existing cover, graph and exclusion set.
///
/// `src` is the stage's random source; run `r` draws from `src.child(r)`.
/// The returned result describes a one-stage schedule.
pub fn quantify<S: ScenarioSystem + ?Sized>(
    system: &S,
    cover: CoverLattice,
    graph: DiskGraph,
    excluded: ExcludedRegion,
    cfg: &QuantifierConfig,
    src: &RandomSource,
) -> Result<SafeSetResult> {
    quantify_stage(system, cover, graph, excluded, cfg, src, 0)
}

fn quantify_stage<S: ScenarioSystem + ?Sized>(
    system: &S,
    cover: CoverLattice,
    graph: DiskGraph,
    excluded: ExcludedRegion,
    cfg: &QuantifierConfig,
    src: &RandomSource,
    stage: usize,
) -> Result<SafeSetResult> {
    cfg.validate()?;
    let n = system.dim();
    if cover.lattice().dim() != n || cfg.step_bound.len() != n {
        return Err(Error::Dimension {
            what: "cover / step bound",
            expected: n,
            got: cover.lattice().dim().min(cfg.step_bound.len()),
        });
    }
    let needed = required_samples(cfg.eps, cfg.beta)?;
    let mut w = Working {
        system,
        cfg,
        cover,
        graph,
        excluded,
        band: IndexSet::new(),
    };
    w.rebuild_band();

    let mut audit = Vec::new();
    let mut runs: u64 = 0;
    let mut streak: u64 = 0;
    let mut prunes = 0u64;
    let mut explores = 0u64;
    let mut fallback_logged = false;
    let termination = loop {
        if w.cover.is_empty() {
            break Termination::EmptySet;
        }
        if streak >= needed {
            break Termination::ScheduleComplete;
        }
        if runs >= cfg.max_runs {
            break Termination::BudgetExhausted;
        }
        let width = (cfg.batch as u64).min(needed - streak).min(cfg.max_runs - runs).max(1);
        let plans: Vec<(u64, CellId, bool)> = (0..width)
            .map(|b| {
                let r = runs + b;
                let (cell, fb) = w.draw_start(&src.child(r));
                (r, cell, fb)
            })
            .collect();
        let run_one = |&(r, cell, _): &(u64, CellId, bool)| {
            rollout(system, &w.cover.centroid(cell), cfg.k, &src.child(r))
        };
        let records: Vec<Result<RunRecord>> = if plans.len() == 1 {
            plans.iter().map(run_one).collect()
        } else {
            plans.par_iter().map(run_one).collect()
        };
        for ((r, cell, fb), rec) in plans.into_iter().zip(records) {
            let rec = rec?;
            if fb && !fallback_logged {
                log::info!("stage {stage}: critical band empty, sampling all {} active cells", w.cover.len());
                fallback_logged = true;
            }
            let s0_cell = w.cover.lattice().index(cell);
            let effect = w.apply(cell, &rec)?;
            runs += 1;
            match effect.event {
                Event::None => streak += 1,
                Event::Prune => {
                    streak = 0;
                    prunes += 1;
                }
                Event::Explore => {
                    streak = 0;
                    explores += 1;
                }
            }
            audit.push(AuditRecord {
                stage,
                run_index: r,
                streak_counter: streak,
                s0_cell,
                outcome: rec.outcome,
                event: effect.event,
                cause: effect.cause,
                cells_pruned: effect.pruned,
                cells_added: effect.added,
            });
            // later speculative runs were drawn from a band that no longer exists
            if effect.event != Event::None || streak >= needed {
                break;
            }
        }
    };

    let summary = StageSummary {
        stage,
        eps: cfg.eps,
        beta: cfg.beta,
        delta: w.cover.delta().as_slice().to_vec(),
        runs,
        cardinality: w.cover.len(),
        prunes,
        explores,
        used_fallback_sampling: fallback_logged,
        termination,
    };
    let achieved = (termination == Termination::ScheduleComplete).then(|| Achieved {
        eps: cfg.eps,
        beta: cfg.beta,
        delta: w.cover.delta().as_slice().to_vec(),
    });
    Ok(SafeSetResult {
        cover: w.cover,
        graph: w.graph,
        excluded: w.excluded,
        achieved,
        runs_total: runs,
        stages: vec![summary],
        termination,
        audit,
        step_bound: cfg.step_bound.clone(),
        exits: system.exit_handling().to_vec(),
    })
}

/// Settings shared by every stage of [`characterize`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageDefaults {
    pub k: usize,
    pub step_bound: Vec<f64>,
    pub prune_scope: PruneScope,
    pub batch: usize,
}

/// The decay loop starting from `S⁰ = S \ C` at the first stage's δ.
pub fn characterize<S: ScenarioSystem + ?Sized>(
    system: &S,
    schedule: &DecaySchedule,
    defaults: &StageDefaults,
    src: &RandomSource,
) -> Result<SafeSetResult> {
    let domain = system.domain().clone();
    let excluded = ExcludedRegion::new(domain.clone());
    let first = &schedule.stages()[0];
    let cover = build_cover(&domain, &first.delta, system.failure(), &excluded)?;
    characterize_from(system, cover, excluded, schedule, defaults, src)
}

/// The decay loop from an explicit initial cover and exclusion set.
///
/// Between stages the surviving cover is refined to the next δ, children whose
/// centroid is a failure state are dropped, graph edges are discarded (cell
/// identities change) and the exclusion set is carried forward.
pub fn characterize_from<S: ScenarioSystem + ?Sized>(
    system: &S,
    mut cover: CoverLattice,
    mut excluded: ExcludedRegion,
    schedule: &DecaySchedule,
    defaults: &StageDefaults,
    src: &RandomSource,
) -> Result<SafeSetResult> {
    let mut graph = DiskGraph::new();
    let mut used: u64 = 0;
    let mut stages = Vec::new();
    let mut audit = Vec::new();
    let mut achieved = None;
    let mut termination = Termination::ScheduleComplete;

    for (i, stage) in schedule.stages().iter().enumerate() {
        if i > 0 {
            cover = refine_to(&cover, &stage.delta)?;
            let failure = system.failure();
            let ex = &excluded;
            cover.retain_centroids(|c| !failure.contains(c) && !ex.contains(c));
            graph.clear();
        } else if cover.delta() != &stage.delta {
            cover = refine_to(&cover, &stage.delta)?;
        }
        let cfg = QuantifierConfig {
            eps: stage.eps,
            beta: stage.beta,
            k: defaults.k,
            step_bound: defaults.step_bound.clone(),
            max_runs: schedule.budget().saturating_sub(used),
            prune_scope: defaults.prune_scope,
            batch: defaults.batch,
        };
        let res = quantify_stage(system, cover, graph, excluded, &cfg, &src.child(i as u64), i)?;
        used += res.runs_total;
        cover = res.cover;
        graph = res.graph;
        excluded = res.excluded;
        audit.extend(res.audit);
        stages.extend(res.stages);
        match res.termination {
            Termination::ScheduleComplete => achieved = res.achieved,
            other => {
                termination = other;
                break;
            }
        }
    }
    Ok(SafeSetResult {
        cover,
        graph,
        excluded,
        achieved,
        runs_total: used,
        stages,
        termination,
        audit,
        step_bound: defaults.step_bound.clone(),
        exits: system.exit_handling().to_vec(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub runs: u64,
    pub required: u64,
    /// Runs that visited a state outside the cover.
    pub escapes: u64,
    /// Runs that visited the failure region.
    pub failures: u64,
    pub pass: bool,
}

/// Fresh i.i.d. runs from the band centroids of a fixed cover.
pub fn validate_safe_set<S: ScenarioSystem + ?Sized>(
    system: &S,
    cover: &CoverLattice,
    eps: f64,
    beta: f64,
    k: usize,
    step_bound: &[f64],
    src: &RandomSource,
) -> Result<ValidationReport> {
    if cover.is_empty() {
        return Err(Error::Precondition("cannot validate an empty cover".into()));
    }
    let required = required_samples(eps, beta)?;
    let band: Vec<CellId> = critical_band(cover, step_bound, Some(system.failure()), Some(system.exit_handling()))
        .into_iter()
        .collect();
    let pool: Vec<CellId> = if band.is_empty() { cover.active().collect() } else { band };
    let root = src.child(tags::VALIDATE);
    let outcomes: Vec<Result<(bool, bool)>> = (0..required)
        .into_par_iter()
        .map(|r| {
            let run_src = root.child(r);
            let i = run_src.child(tags::SAMPLE).rng().random_range(0..pool.len());
            let rec = rollout(system, &cover.centroid(pool[i]), k, &run_src)?;
            let escaped = rec
                .states
                .iter()
                .any(|s| !matches!(cover.cell_of(s), CellLookup::Active(_)));
            Ok((rec.failed(), escaped))
        })
        .collect();
    let mut failures = 0;
    let mut escapes = 0;
    for o in outcomes {
        let (f, e) = o?;
        failures += f as u64;
        escapes += e as u64;
    }
    Ok(ValidationReport {
        runs: required,
        required,
        escapes,
        failures,
        pass: failures == 0,
    })
}

/// `1 - |safe| / |reference|` for covers at the same resolution.
pub fn derived_failure_rate(safe: &CoverLattice, reference: &CoverLattice) -> Result<f64> {
    if !safe.same_resolution(reference) {
        return Err(Error::Domain("covers are at different resolutions".into()));
    }
    if reference.is_empty() {
        return Err(Error::Domain("reference cover is empty".into()));
    }
    Ok(1.0 - safe.len() as f64 / reference.len() as f64)
}

/// Reference cover of `S \ C` matching the resolution of `like`.
pub fn reference_cover(like: &CoverLattice, failure: &dyn FailureRegion) -> Result<CoverLattice> {
    let domain = like.lattice().domain().clone();
    let mut cover = CoverLattice::empty(domain.clone(), like.delta().clone())?;
    if cover.lattice() != like.lattice() {
        // `like` came from refinement; rebuild on its exact lattice
        cover = like.clone();
        for id in (0..like.lattice().total_cells()).map(CellId) {
            cover.activate(id);
        }
    } else {
        for id in (0..cover.lattice().total_cells()).map(CellId) {
            cover.activate(id);
        }
    }
    cover.retain_centroids(|c| !failure.contains(c));
    Ok(cover)
}

/// `|A Δ B| / |A ∪ B|` of active cells; 0 when both are empty.
pub fn cover_distance(a: &CoverLattice, b: &CoverLattice) -> Result<f64> {
    if !a.same_resolution(b) {
        return Err(Error::Domain("covers are at different resolutions".into()));
    }
    let (mut sym, mut union) = (0usize, 0usize);
    let total = a.lattice().total_cells();
    for id in (0..total).map(CellId) {
        match (a.is_active(id), b.is_active(id)) {
            (true, true) => union += 1,
            (true, false) | (false, true) => {
                union += 1;
                sym += 1;
            }
            _ => {}
        }
    }
    Ok(if union == 0 { 0.0 } else { sym as f64 / union as f64 })
}

pub fn consensus_distance(a: &SafeSetResult, b: &SafeSetResult) -> Result<f64> {
    cover_distance(&a.cover, &b.cover)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{DomainBox, ExitHandling, MapSystem, NoFailure, PredicateRegion};
    use crate::rng::StreamRng;

    #[test]
    fn sample_counts() {
        assert_eq!(required_samples(0.5, 0.5).unwrap(), 1);
        assert_eq!(required_samples(0.001, 0.1).unwrap(), 2302);
        assert_eq!(required_samples(0.01, 0.01).unwrap(), 459);
        assert!(required_samples(0.0, 0.5).is_err());
        assert!(required_samples(0.5, 1.0).is_err());
        assert!(required_samples(f64::NAN, 0.5).is_err());
    }

    #[test]
    fn schedule_validation() {
        let d = |x: f64| DeltaVector::new(vec![x]).unwrap();
        let st = |e: f64, b: f64, x: f64| Stage { eps: e, beta: b, delta: d(x) };
        assert!(DecaySchedule::new(vec![], 10).is_err());
        assert!(DecaySchedule::new(vec![st(0.1, 0.1, 1.0), st(0.1, 0.1, 1.0)], 10).is_err());
        assert!(DecaySchedule::new(vec![st(0.1, 0.1, 1.0), st(0.05, 0.2, 1.0)], 10).is_err());
        assert!(DecaySchedule::new(vec![st(0.1, 0.1, 1.0), st(0.05, 0.1, 2.0)], 10).is_err());
        assert!(DecaySchedule::new(vec![st(0.1, 0.1, 1.0), st(0.05, 0.1, 0.5)], 10).is_ok());
        let g = DecaySchedule::geometric(0.1, 0.1, d(1.0), 0.5, 1.0, &[2], 3, 100).unwrap();
        let eps: Vec<f64> = g.stages().iter().map(|s| s.eps).collect();
        assert_eq!(eps, vec![0.1, 0.05, 0.025]);
        assert_eq!(g.stages()[2].delta.as_slice(), &[0.25]);
    }

    fn identity_system() -> MapSystem<impl Fn(&[f64], &mut StreamRng) -> Vec<f64> + Send + Sync> {
        MapSystem::new(
            DomainBox::new(vec![-0.5, -0.5], vec![4.5, 4.5]).unwrap(),
            Box::new(NoFailure),
            vec![1.0, 1.0],
            ExitHandling::Saturate,
            |s: &[f64], _: &mut StreamRng| s.to_vec(),
        )
    }

    #[test]
    fn identity_keeps_everything() {
        let sys = identity_system();
        let sched = DecaySchedule::new(
            vec![Stage { eps: 0.1, beta: 0.1, delta: DeltaVector::new(vec![0.5, 0.5]).unwrap() }],
            1000,
        )
        .unwrap();
        let defaults = StageDefaults { k: 5, step_bound: vec![1.0, 1.0], prune_scope: PruneScope::Full, batch: 1 };
        let res = characterize(&sys, &sched, &defaults, &RandomSource::new(1)).unwrap();
        assert_eq!(res.cardinality(), 25);
        assert_eq!(res.stages[0].prunes, 0);
        assert_eq!(res.runs_total, required_samples(0.1, 0.1).unwrap());
        assert!(res.is_validated());
    }

    #[test]
    fn exploration_grows_a_partial_cover() {
        // shift right by one until the wall; start with only the left column
        let sys = MapSystem::new(
            DomainBox::new(vec![-0.5], vec![4.5]).unwrap(),
            Box::new(NoFailure),
            vec![1.0],
            ExitHandling::Saturate,
            |s: &[f64], _: &mut StreamRng| vec![(s[0] + 1.0).min(4.0)],
        );
        let mut cover = CoverLattice::empty(sys.domain().clone(), DeltaVector::new(vec![0.5]).unwrap()).unwrap();
        cover.activate(CellId(0));
        let cfg = QuantifierConfig::new(0.2, 0.2, 5, vec![1.0], 100).unwrap();
        let ex = ExcludedRegion::new(sys.domain().clone());
        let res = quantify(&sys, cover, DiskGraph::new(), ex, &cfg, &RandomSource::new(4)).unwrap();
        assert_eq!(res.cardinality(), 5);
        assert!(res.graph.has_edge(CellId(0), CellId(4)));
        assert_eq!(res.audit[0].event, Event::Explore);
        assert_eq!(res.audit[0].cells_added, 4);
    }

    #[test]
    fn everything_reaches_failure() {
        let sys = MapSystem::new(
            DomainBox::new(vec![-0.5], vec![9.5]).unwrap(),
            Box::new(PredicateRegion(|s: &[f64]| s[0] >= 8.5)),
            vec![1.0],
            ExitHandling::Saturate,
            |s: &[f64], _: &mut StreamRng| vec![(s[0] + 1.0).min(9.0)],
        );
        let cover = build_cover(
            sys.domain(),
            &DeltaVector::new(vec![0.5]).unwrap(),
            sys.failure(),
            &ExcludedRegion::new(sys.domain().clone()),
        )
        .unwrap();
        let cfg = QuantifierConfig::new(0.1, 0.1, 20, vec![1.0], 1000).unwrap();
        let ex = ExcludedRegion::new(sys.domain().clone());
        let res = quantify(&sys, cover, DiskGraph::new(), ex, &cfg, &RandomSource::new(2)).unwrap();
        assert_eq!(res.termination, Termination::EmptySet);
        assert_eq!(res.cardinality(), 0);
        assert!(res.achieved.is_none());
    }

    #[test]
    fn budget_exhaustion_is_reported() {
        let sys = identity_system();
        let cover = build_cover(
            sys.domain(),
            &DeltaVector::new(vec![0.5, 0.5]).unwrap(),
            &NoFailure,
            &ExcludedRegion::new(sys.domain().clone()),
        )
        .unwrap();
        let cfg = QuantifierConfig::new(0.01, 0.01, 5, vec![1.0, 1.0], 10).unwrap();
        let ex = ExcludedRegion::new(sys.domain().clone());
        let res = quantify(&sys, cover, DiskGraph::new(), ex, &cfg, &RandomSource::new(2)).unwrap();
        assert_eq!(res.termination, Termination::BudgetExhausted);
        assert_eq!(res.runs_total, 10);
        assert!(!res.is_validated());
    }

    #[test]
    fn distances() {
        let dom = DomainBox::new(vec![0.0], vec![4.0]).unwrap();
        let d = DeltaVector::new(vec![0.5]).unwrap();
        let mut a = CoverLattice::empty(dom.clone(), d.clone()).unwrap();
        let mut b = a.clone();
        assert_eq!(cover_distance(&a, &b).unwrap(), 0.0);
        a.activate(CellId(0));
        a.activate(CellId(1));
        b.activate(CellId(2));
        b.activate(CellId(3));
        assert_eq!(cover_distance(&a, &b).unwrap(), 1.0);
        assert_eq!(cover_distance(&a, &a).unwrap(), 0.0);
        let other = CoverLattice::empty(dom, DeltaVector::new(vec![1.0]).unwrap()).unwrap();
        assert!(cover_distance(&a, &other).is_err());
    }

    #[test]
    fn derived_rate_arithmetic() {
        let dom = DomainBox::new(vec![0.0], vec![1000.0]).unwrap();
        let d = DeltaVector::new(vec![0.5]).unwrap();
        let reference = build_cover(&dom, &d, &NoFailure, &ExcludedRegion::new(dom.clone())).unwrap();
        assert_eq!(reference.len(), 1000);
        let mut safe = reference.clone();
        for k in 0..10 {
            safe.deactivate(CellId(k));
        }
        assert!((derived_failure_rate(&safe, &reference).unwrap() - 0.01).abs() < 1e-12);
        assert_eq!(derived_failure_rate(&reference, &reference).unwrap(), 0.0);
        let empty = CoverLattice::empty(dom, d).unwrap();
        assert!(derived_failure_rate(&empty, &empty).is_err());
        assert_eq!(reference_cover(&safe, &NoFailure).unwrap(), reference);
    }

    #[test]
    fn validation_single_run() {
        let sys = identity_system();
        let cover = build_cover(
            sys.domain(),
            &DeltaVector::new(vec![0.5, 0.5]).unwrap(),
            &NoFailure,
            &ExcludedRegion::new(sys.domain().clone()),
        )
        .unwrap();
        let rep = validate_safe_set(&sys, &cover, 0.5, 0.5, 3, &[1.0, 1.0], &RandomSource::new(0)).unwrap();
        assert_eq!(rep.runs, 1);
        assert!(rep.pass);
        assert_eq!(rep.failures, 0);
        let empty = CoverLattice::empty(sys.domain().clone(), DeltaVector::new(vec![0.5, 0.5]).unwrap()).unwrap();
        assert!(validate_safe_set(&sys, &empty, 0.5, 0.5, 3, &[1.0, 1.0], &RandomSource::new(0)).is_err());
    }
}
