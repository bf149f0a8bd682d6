use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use safeset_core::cbf::{CbfParams, PolicyKind};
use safeset_core::{DecaySchedule, DeltaVector, PruneScope, Stage, StageDefaults};

use crate::CliError;

/// Which scenario system an experiment runs on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SystemKind {
    /// Two robots under CBF-filtered control.
    Cbf,
    Chain1d,
    Contraction2d,
    Annulus2d,
    Rotation2d,
    /// One-dimensional chain whose action filter makes any policy equivalent.
    FilteredChain,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSection {
    pub system: SystemKind,
    pub seed: u64,
    /// Total scenario runs across all stages.
    pub budget: u64,
    pub policy: PolicyKind,
    /// Steps per run.
    pub k: usize,
    pub dt: f64,
    pub prune_scope: PruneScope,
    /// Speculative rollouts per batch.
    pub batch: usize,
    /// Matched seeds for consensus and oracle checks, starting at `seed`.
    pub trials: u64,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        Self {
            system: SystemKind::Cbf,
            seed: 1,
            budget: 200_000,
            policy: PolicyKind::Pred,
            k: 100,
            dt: 0.1,
            prune_scope: PruneScope::default(),
            batch: 8,
            trials: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleSection {
    /// One ε per stage, strictly decreasing.
    pub eps: Vec<f64>,
    /// One β per stage, or a single value for all stages.
    pub beta: Vec<f64>,
    /// One δ per stage, or a single δ for all stages. A one-element δ is
    /// broadcast over the state dimension.
    pub delta: Vec<Vec<f64>>,
    /// Step bound s̄ per dimension; a single value is broadcast.
    pub step_bound: Vec<f64>,
}

impl Default for ScheduleSection {
    fn default() -> Self {
        Self {
            eps: vec![0.05, 0.01, 0.005],
            beta: vec![0.1],
            delta: vec![vec![1.0, 1.0, 0.4, 0.4, 0.4, 0.4]],
            step_bound: vec![0.5],
        }
    }
}

/// Environment parameters of the two-robot system. The time step lives in
/// `[experiment]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CbfSection {
    pub a_br: f64,
    pub d_s: f64,
    pub gamma: f64,
    pub a_max: f64,
    pub v_max: f64,
    pub kp: f64,
    pub kv: f64,
    pub pred_sigma: f64,
    pub pos_limit: f64,
    pub tau_min: f64,
    pub tau_max: f64,
}

impl Default for CbfSection {
    fn default() -> Self {
        let p = CbfParams::default();
        Self {
            a_br: p.a_br,
            d_s: p.d_s,
            gamma: p.gamma,
            a_max: p.a_max,
            v_max: p.v_max,
            kp: p.kp,
            kv: p.kv,
            pred_sigma: p.pred_sigma,
            pos_limit: 6.0,
            tau_min: p.tau_min,
            tau_max: p.tau_max,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselinesSection {
    pub n_mc: u64,
    pub n_is: u64,
    /// Decay rate of the separation tilt (1/m).
    pub tilt_lambda: f64,
    pub confidence: f64,
}

impl Default for BaselinesSection {
    fn default() -> Self {
        Self { n_mc: 10_000, n_is: 10_000, tilt_lambda: 0.5, confidence: 0.9 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self { dir: PathBuf::from("out") }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSpec {
    pub experiment: ExperimentSection,
    pub schedule: ScheduleSection,
    pub cbf: CbfSection,
    pub baselines: BaselinesSection,
    pub output: OutputSection,
}

fn config_err(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

/// Parses `section.key=value`. The value is read as a TOML value and falls
/// back to a bare string.
fn parse_override(raw: &str) -> Result<(String, String, toml::Value), CliError> {
    let (path, value) = raw
        .split_once('=')
        .ok_or_else(|| config_err(format!("override {raw:?} is not section.key=value")))?;
    let (section, key) = path
        .trim()
        .split_once('.')
        .ok_or_else(|| config_err(format!("override key {path:?} is not section.key")))?;
    let value = value.trim();
    let parsed = toml::from_str::<toml::Table>(&format!("v = {value}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(value.to_string()));
    Ok((section.to_string(), key.to_string(), parsed))
}

impl ExperimentSpec {
    /// Reads an optional config file and applies `--set` overrides.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self, CliError> {
        let mut table = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| config_err(format!("cannot read {}: {e}", p.display())))?;
                toml::from_str::<toml::Table>(&text).map_err(|e| config_err(format!("{}: {e}", p.display())))?
            }
            None => toml::Table::new(),
        };
        for raw in overrides {
            let (section, key, value) = parse_override(raw)?;
            let entry = table
                .entry(section.clone())
                .or_insert_with(|| toml::Value::Table(toml::Table::new()));
            let toml::Value::Table(sec) = entry else {
                return Err(config_err(format!("{section} is not a section")));
            };
            sec.insert(key, value);
        }
        let spec: Self = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| config_err(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let spec: Self = toml::from_str(text).map_err(|e| config_err(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("spec serializes")
    }

    pub fn cbf_params(&self) -> CbfParams {
        let c = &self.cbf;
        CbfParams {
            a_br: c.a_br,
            d_s: c.d_s,
            gamma: c.gamma,
            a_max: c.a_max,
            v_max: c.v_max,
            dt: self.experiment.dt,
            kp: c.kp,
            kv: c.kv,
            pred_sigma: c.pred_sigma,
            pos_limit: c.pos_limit,
            tau_min: c.tau_min,
            tau_max: c.tau_max,
        }
    }

    pub fn state_dim(&self) -> usize {
        match self.experiment.system {
            SystemKind::Cbf => 6,
            SystemKind::Chain1d | SystemKind::FilteredChain => 1,
            _ => 2,
        }
    }

    fn broadcast(v: &[f64], dim: usize, what: &str) -> Result<Vec<f64>, CliError> {
        match v.len() {
            1 => Ok(vec![v[0]; dim]),
            n if n == dim => Ok(v.to_vec()),
            n => Err(config_err(format!("{what} has {n} entries, expected 1 or {dim}"))),
        }
    }

    pub fn step_bound(&self) -> Result<Vec<f64>, CliError> {
        let s = Self::broadcast(&self.schedule.step_bound, self.state_dim(), "schedule.step_bound")?;
        if s.iter().any(|x| !(x.is_finite() && *x > 0.0)) {
            return Err(config_err("schedule.step_bound must be positive"));
        }
        Ok(s)
    }

    pub fn decay_schedule(&self) -> Result<DecaySchedule, CliError> {
        let sch = &self.schedule;
        let n = sch.eps.len();
        if n == 0 {
            return Err(config_err("schedule.eps is empty"));
        }
        let pick = |len: usize, what: &str| -> Result<Box<dyn Fn(usize) -> usize>, CliError> {
            match len {
                1 => Ok(Box::new(|_| 0)),
                l if l == n => Ok(Box::new(|i| i)),
                l => Err(config_err(format!("{what} has {l} entries, expected 1 or {n}"))),
            }
        };
        let beta_at = pick(sch.beta.len(), "schedule.beta")?;
        let delta_at = pick(sch.delta.len(), "schedule.delta")?;
        let mut stages = Vec::with_capacity(n);
        for i in 0..n {
            let delta = Self::broadcast(&sch.delta[delta_at(i)], self.state_dim(), "schedule.delta")?;
            stages.push(Stage {
                eps: sch.eps[i],
                beta: sch.beta[beta_at(i)],
                delta: DeltaVector::new(delta).map_err(|e| config_err(e.to_string()))?,
            });
        }
        DecaySchedule::new(stages, self.experiment.budget).map_err(|e| config_err(e.to_string()))
    }

    pub fn stage_defaults(&self) -> Result<StageDefaults, CliError> {
        Ok(StageDefaults {
            k: self.experiment.k,
            step_bound: self.step_bound()?,
            prune_scope: self.experiment.prune_scope,
            batch: self.experiment.batch,
        })
    }

    /// Final stage of the schedule.
    pub fn final_stage(&self) -> Result<Stage, CliError> {
        Ok(self.decay_schedule()?.stages().last().expect("non-empty schedule").clone())
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let e = &self.experiment;
        if e.k < 2 {
            return Err(config_err("experiment.k must be >= 2"));
        }
        if e.batch == 0 {
            return Err(config_err("experiment.batch must be >= 1"));
        }
        if e.trials == 0 {
            return Err(config_err("experiment.trials must be >= 1"));
        }
        if !(e.dt.is_finite() && e.dt > 0.0) {
            return Err(config_err("experiment.dt must be positive"));
        }
        self.decay_schedule()?;
        self.step_bound()?;
        self.cbf_params().validate().map_err(|e| config_err(e.to_string()))?;
        let b = &self.baselines;
        if b.n_mc == 0 || b.n_is == 0 {
            return Err(config_err("baselines.n_mc and baselines.n_is must be >= 1"));
        }
        if !(b.confidence > 0.0 && b.confidence < 1.0) {
            return Err(config_err("baselines.confidence must lie in (0,1)"));
        }
        if !(b.tilt_lambda.is_finite() && b.tilt_lambda >= 0.0) {
            return Err(config_err("baselines.tilt_lambda must be non-negative"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let spec = ExperimentSpec::default();
        spec.validate().unwrap();
        let back = ExperimentSpec::from_toml(&spec.to_toml()).unwrap();
        assert_eq!(spec, back);
    }

    #[test]
    fn overrides_apply() {
        let spec = ExperimentSpec::load(
            None,
            &[
                "experiment.seed=7".into(),
                "experiment.policy=cbf".into(),
                "schedule.eps=[0.1, 0.01]".into(),
                "cbf.pos_limit=8".into(),
            ],
        )
        .unwrap();
        assert_eq!(spec.experiment.seed, 7);
        assert_eq!(spec.experiment.policy, PolicyKind::Cbf);
        assert_eq!(spec.schedule.eps, vec![0.1, 0.01]);
        assert_eq!(spec.cbf.pos_limit, 8.0);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(ExperimentSpec::load(None, &["experiment.sede=7".into()]).is_err());
        assert!(ExperimentSpec::load(None, &["extra.x=1".into()]).is_err());
        assert!(ExperimentSpec::from_toml("[cbf]\ndt = 0.1\n").is_err());
        assert!(ExperimentSpec::load(None, &["noequals".into()]).is_err());
    }

    #[test]
    fn out_of_range_values_are_rejected() {
        assert!(ExperimentSpec::load(None, &["experiment.k=1".into()]).is_err());
        assert!(ExperimentSpec::load(None, &["schedule.eps=[0.01, 0.05]".into()]).is_err());
        assert!(ExperimentSpec::load(None, &["schedule.beta=[0.1, 0.1]".into()]).is_err());
        assert!(ExperimentSpec::load(None, &["cbf.d_s=-1".into()]).is_err());
        assert!(ExperimentSpec::load(None, &["baselines.confidence=1.5".into()]).is_err());
    }

    #[test]
    fn schedule_broadcasts() {
        let spec = ExperimentSpec::load(
            None,
            &["experiment.system=\"chain1d\"".into(), "schedule.delta=[[0.5]]".into(), "schedule.step_bound=[1.0]".into()],
        )
        .unwrap();
        let s = spec.decay_schedule().unwrap();
        assert_eq!(s.stages().len(), 3);
        assert_eq!(s.stages()[0].delta.as_slice(), &[0.5]);
        assert_eq!(spec.step_bound().unwrap(), vec![1.0]);
    }
}
