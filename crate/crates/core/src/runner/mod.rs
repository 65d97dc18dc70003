//! Experiment orchestration: train, gate on baseline mastery, evaluate,
//! aggregate; plus the single-sample probe.

mod report;

use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::agents::{build_agent_with, AgentKind, AgentSettings, Profile, StopReason, TrainReport};
use crate::error::{Error, Result};
use crate::numerics::Prng;
use crate::stimuli::StimulusId;
use crate::structures::{relation_matrix, TestKind, TrainingStructure};
use crate::trials::{
    generate_eval_trials_with, generate_training_trials, Condition, NegativePolicy, PositionScheme, RelationType,
    Selection, Tally, TestRates, Trial, TrialSet,
};

pub use report::{format_csv, read_results, results_to_csv, results_to_json, write_results, ReportFormat};

pub const MASTERY: f64 = 0.90;
pub const NEAR_MASTERY: f64 = 0.70;

/// Floating-point width used by the trainable agents.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    #[default]
    F64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Condition names; empty means all 18.
    #[serde(with = "condition_names")]
    pub conditions: Vec<Condition>,
    /// Agent kinds; empty means all four.
    pub agents: Vec<AgentKind>,
    pub seeds: Vec<u64>,
    pub mastery_threshold: f64,
    pub near_mastery_threshold: f64,
    pub max_retries: usize,
    pub profile: Profile,
    pub precision: Precision,
    pub position_scheme: PositionScheme,
    /// Field-level overrides applied on top of the profile's FFN settings.
    pub ffn: Option<serde_json::Map<String, serde_json::Value>>,
    /// Field-level overrides applied on top of the profile's transformer
    /// settings.
    pub transformer: Option<serde_json::Map<String, serde_json::Value>>,
    pub output_dir: Option<PathBuf>,
    /// Worker threads for `run_full_matrix`; `None` uses rayon's default.
    pub threads: Option<usize>,
    /// Render rates with a decimal comma (and `;` separators) in CSV.
    pub decimal_comma: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            conditions: Vec::new(),
            agents: Vec::new(),
            seeds: vec![0],
            mastery_threshold: MASTERY,
            near_mastery_threshold: NEAR_MASTERY,
            max_retries: 3,
            profile: Profile::Desk,
            precision: Precision::F64,
            position_scheme: PositionScheme::Rotations,
            ffn: None,
            transformer: None,
            output_dir: None,
            threads: None,
            decimal_comma: false,
        }
    }
}

mod condition_names {
    use super::Condition;
    use serde::{de::Error as _, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(cs: &[Condition], s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(cs.iter().map(|c| c.name()))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<Condition>, D::Error> {
        Vec::<String>::deserialize(d)?
            .iter()
            .map(|n| n.parse().map_err(D::Error::custom))
            .collect()
    }
}

fn overlay<T: Serialize + serde::de::DeserializeOwned>(
    base: T,
    overrides: &Option<serde_json::Map<String, serde_json::Value>>,
    what: &str,
) -> Result<T> {
    let Some(map) = overrides else {
        return Ok(base);
    };
    let mut value = serde_json::to_value(base)?;
    let obj = value.as_object_mut().expect("configs serialize as objects");
    for (k, v) in map {
        if !obj.contains_key(k) {
            return Err(Error::Config(format!("unknown {what} setting {k:?}")));
        }
        obj.insert(k.clone(), v.clone());
    }
    serde_json::from_value(value).map_err(|e| Error::Config(format!("{what} settings: {e}")))
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let c: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let c: ExperimentConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    /// Reads a `.json` file as JSON and anything else as TOML.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        if path.extension().is_some_and(|e| e == "json") {
            Self::from_json_str(&text)
        } else {
            Self::from_toml_str(&text)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (near, mastery) = (self.near_mastery_threshold, self.mastery_threshold);
        if !(0.0 < near && near <= mastery && mastery <= 1.0) {
            return Err(Error::Config(format!(
                "thresholds must satisfy 0 < near-mastery ({near}) <= mastery ({mastery}) <= 1"
            )));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        if self.threads == Some(0) {
            return Err(Error::Config("threads must be >= 1".into()));
        }
        let s = self.settings()?;
        s.transformer.validate()?;
        if s.ffn.hidden_units == 0 || !(s.ffn.rmse_threshold > 0.0) {
            return Err(Error::Config("ffn hidden_units must be >= 1 and rmse_threshold > 0".into()));
        }
        Ok(())
    }

    /// Profile settings with the overrides applied.
    pub fn settings(&self) -> Result<AgentSettings> {
        let base = AgentSettings::for_profile(self.profile);
        Ok(AgentSettings {
            ffn: overlay(base.ffn, &self.ffn, "ffn")?,
            transformer: overlay(base.transformer, &self.transformer, "transformer")?,
        })
    }

    pub fn selected_conditions(&self) -> Vec<Condition> {
        if self.conditions.is_empty() {
            Condition::all()
        } else {
            self.conditions.clone()
        }
    }

    pub fn selected_agents(&self) -> Vec<AgentKind> {
        if self.agents.is_empty() {
            AgentKind::ALL.to_vec()
        } else {
            self.agents.clone()
        }
    }
}

/// Row number of a (condition, agent) cell in the 72-row results table.
pub fn simulation_id(condition: &Condition, agent: AgentKind) -> usize {
    let a = AgentKind::ALL.iter().position(|&k| k == agent).unwrap();
    condition.ordinal() * AgentKind::ALL.len() + a + 1
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TestFlags {
    pub base: bool,
    pub refl: bool,
    pub symm: bool,
    pub trans: bool,
}

impl TestFlags {
    fn from_rates(rates: &TestRates, threshold: f64) -> Self {
        TestFlags {
            base: rates.base >= threshold,
            refl: rates.refl >= threshold,
            symm: rates.symm >= threshold,
            trans: rates.trans >= threshold,
        }
    }

    pub fn get(&self, kind: TestKind) -> bool {
        match kind {
            TestKind::Baseline => self.base,
            TestKind::Reflexivity => self.refl,
            TestKind::Symmetry => self.symm,
            TestKind::Transitivity => self.trans,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub sim: usize,
    pub ts: TrainingStructure,
    pub rel: RelationType,
    pub negc: NegativePolicy,
    pub agent: AgentKind,
    /// Seed requested for the cell.
    pub seed: u64,
    /// Seed of the attempt that was evaluated (differs after retries).
    pub train_seed: u64,
    pub attempts: usize,
    pub rates: TestRates,
    pub mastery: TestFlags,
    pub near_mastery: TestFlags,
    /// Baseline mastery was never reached within the retry budget.
    pub failed: bool,
    pub stop_reason: StopReason,
    pub train: TrainReport,
    /// Evaluation trials answered with a token that is not a response option.
    pub non_responses: usize,
    pub wall_time_secs: f64,
}

impl RunResult {
    pub fn condition(&self) -> Condition {
        Condition::new(self.ts, self.rel, self.negc)
    }

    /// `M` mastery, `n` near-mastery, `-` below, in base/refl/symm/trans order.
    pub fn mastery_flags(&self) -> String {
        TestKind::ALL
            .iter()
            .map(|&k| {
                if self.mastery.get(k) {
                    'M'
                } else if self.near_mastery.get(k) {
                    'n'
                } else {
                    '-'
                }
            })
            .collect()
    }
}

fn attempt_seed(seed: u64, attempt: usize) -> u64 {
    if attempt == 0 {
        seed
    } else {
        Prng::new(seed).derive(&format!("retry-{attempt}")).seed()
    }
}

fn run_attempts(
    condition: &Condition,
    kind: AgentKind,
    config: &ExperimentConfig,
    settings: &AgentSettings,
    seed: u64,
    eval: &TrialSet,
) -> Result<(RunResult, Vec<Selection>)> {
    let start = Instant::now();
    let baseline: Vec<Trial> = eval.of_kind(TestKind::Baseline).copied().collect();
    let mut attempt = 0;
    loop {
        let s = attempt_seed(seed, attempt);
        let training = generate_training_trials(condition, &config.position_scheme, s)?;
        let mut agent = match config.precision {
            Precision::F32 => build_agent_with::<f32>(kind, settings, s)?,
            Precision::F64 => build_agent_with::<f64>(kind, settings, s)?,
        };
        let report = agent.train(&training)?;
        let base_sel = agent.select_all(&baseline);
        let base_rate = crate::agents::accuracy(&baseline, &base_sel);
        let mastered = base_rate >= config.mastery_threshold;
        if !mastered {
            log::info!(
                "{} / {kind} seed {s}: baseline {base_rate:.3} below {}",
                condition.name(),
                config.mastery_threshold
            );
        }
        if mastered || attempt >= config.max_retries {
            let selections = agent.select_all(&eval.trials);
            let rates = Tally::score(&eval.trials, &selections).rates();
            let non_responses = selections
                .iter()
                .filter(|s| matches!(s, Selection::NonResponse(_)))
                .count();
            let result = RunResult {
                sim: simulation_id(condition, kind),
                ts: condition.ts,
                rel: condition.relation,
                negc: condition.ncs,
                agent: kind,
                seed,
                train_seed: s,
                attempts: attempt + 1,
                rates,
                mastery: TestFlags::from_rates(&rates, config.mastery_threshold),
                near_mastery: TestFlags::from_rates(&rates, config.near_mastery_threshold),
                failed: !mastered,
                stop_reason: report.stop_reason,
                train: report,
                non_responses,
                wall_time_secs: start.elapsed().as_secs_f64(),
            };
            return Ok((result, selections));
        }
        attempt += 1;
    }
}

fn cell_error(condition: &Condition, kind: AgentKind, seed: u64, e: Error) -> Error {
    Error::Cell {
        cell: format!("{} / {kind} / seed {seed}", condition.name()),
        source: Box::new(e),
    }
}

/// Trains and evaluates one (condition, agent, seed) cell.
pub fn run_cell(condition: &Condition, kind: AgentKind, config: &ExperimentConfig, seed: u64) -> Result<RunResult> {
    run_cell_with_selections(condition, kind, config, seed).map(|(r, _)| r)
}

/// Like [`run_cell`], also returning the per-trial evaluation selections.
pub fn run_cell_with_selections(
    condition: &Condition,
    kind: AgentKind,
    config: &ExperimentConfig,
    seed: u64,
) -> Result<(RunResult, Vec<Selection>)> {
    let wrap = |e| cell_error(condition, kind, seed, e);
    let settings = config.settings().map_err(wrap)?;
    let eval = generate_eval_trials_with(condition.ts, &config.position_scheme, seed).map_err(wrap)?;
    run_attempts(condition, kind, config, &settings, seed, &eval).map_err(wrap)
}

/// Results and per-cell errors of a full sweep, in (sim, seed) order.
#[derive(Debug, Default)]
pub struct MatrixRun {
    pub results: Vec<RunResult>,
    pub errors: Vec<Error>,
}

/// Runs every selected (condition, agent, seed) cell.
pub fn run_full_matrix(config: &ExperimentConfig) -> Result<MatrixRun> {
    config.validate()?;
    let mut cells = Vec::new();
    for c in config.selected_conditions() {
        for &a in &config.selected_agents() {
            for &s in &config.seeds {
                cells.push((simulation_id(&c, a), s, c, a));
            }
        }
    }
    cells.sort_by_key(|&(sim, seed, _, _)| (sim, seed));
    let work = || {
        cells
            .par_iter()
            .map(|(_, s, c, a)| run_cell(c, *a, config, *s))
            .collect::<Vec<_>>()
    };
    let outcomes = match config.threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::Config(e.to_string()))?
            .install(work),
        None => work(),
    };
    let mut run = MatrixRun::default();
    for o in outcomes {
        match o {
            Ok(r) => run.results.push(r),
            Err(e) => run.errors.push(e),
        }
    }
    Ok(run)
}

/// One probe of the single-sample procedure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeResult {
    pub sample: StimulusId,
    pub training_trials: usize,
    /// Evaluation trials whose sample is the trained sample.
    pub trained: Tally,
    /// All other evaluation trials.
    pub untrained: Tally,
}

impl ProbeResult {
    pub fn trained_rate(&self) -> f64 {
        overall(&self.trained)
    }

    pub fn untrained_rate(&self) -> f64 {
        overall(&self.untrained)
    }
}

fn overall(t: &Tally) -> f64 {
    let total: usize = t.total.iter().sum();
    if total == 0 {
        0.0
    } else {
        t.correct.iter().sum::<usize>() as f64 / total as f64
    }
}

/// Distinct sample stimuli of a training set, in first-appearance order.
pub fn training_samples(training: &TrialSet) -> Vec<StimulusId> {
    let mut out: Vec<StimulusId> = Vec::new();
    for t in &training.trials {
        if !out.contains(&t.sample) {
            out.push(t.sample);
        }
    }
    out
}

/// For each training sample in turn, trains a fresh agent on only that
/// sample's baseline trials and evaluates the full test set.
pub fn sequential_probe(
    condition: &Condition,
    kind: AgentKind,
    config: &ExperimentConfig,
    seed: u64,
) -> Result<Vec<ProbeResult>> {
    let wrap = |e| cell_error(condition, kind, seed, e);
    let settings = config.settings().map_err(wrap)?;
    let training = generate_training_trials(condition, &config.position_scheme, seed).map_err(wrap)?;
    let eval = generate_eval_trials_with(condition.ts, &config.position_scheme, seed).map_err(wrap)?;
    let mut out = Vec::new();
    for sample in training_samples(&training) {
        let subset = TrialSet {
            trials: training.trials.iter().filter(|t| t.sample == sample).copied().collect(),
            ..training.clone()
        };
        let s = Prng::new(seed).derive(&format!("probe-{sample}")).seed();
        let mut agent = match config.precision {
            Precision::F32 => build_agent_with::<f32>(kind, &settings, s),
            Precision::F64 => build_agent_with::<f64>(kind, &settings, s),
        }
        .map_err(wrap)?;
        agent.train(&subset).map_err(wrap)?;
        let selections = agent.select_all(&eval.trials);
        let mut result = ProbeResult {
            sample,
            training_trials: subset.len(),
            trained: Tally::default(),
            untrained: Tally::default(),
        };
        for (t, &sel) in eval.trials.iter().zip(&selections) {
            let tally = if t.sample == sample {
                &mut result.trained
            } else {
                &mut result.untrained
            };
            tally.record(t.test_kind, t.is_correct(sel));
        }
        out.push(result);
    }
    Ok(out)
}

/// Writes the relation matrix of a condition's training set as CSV.
pub fn export_relation_csv(condition: &Condition, scheme: &PositionScheme, seed: u64, path: &Path) -> Result<()> {
    let training = generate_training_trials(condition, scheme, seed)?;
    let matrix = relation_matrix(condition, &training)?;
    std::fs::write(path, matrix.to_csv()).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trials::RelationType::*;
    use crate::trials::NegativePolicy::*;

    #[test]
    fn simulation_ids_follow_the_table() {
        let ls_b = Condition::new(TrainingStructure::LinearSeries, SelectReject, Biased);
        assert_eq!(simulation_id(&ls_b, AgentKind::Probabilistic), 8);
        let mto_b = Condition::new(TrainingStructure::ManyToOne, SelectReject, Biased);
        assert_eq!(simulation_id(&mto_b, AgentKind::Probabilistic), 32);
        let otm_rb = Condition::new(TrainingStructure::OneToMany, RejectOnly, Biased);
        assert_eq!(simulation_id(&otm_rb, AgentKind::Probabilistic), 72);
        assert_eq!(simulation_id(&Condition::standard(TrainingStructure::LinearSeries), AgentKind::Bert), 1);
    }

    #[test]
    fn config_parsing_and_validation() {
        let c = ExperimentConfig::from_toml_str(
            r#"
            conditions = ["LS biased", "mto-reject"]
            agents = ["probabilistic", "ffn"]
            seeds = [1, 2]
            position_scheme = "random:2"
            [ffn]
            hidden_units = 16
            "#,
        )
        .unwrap();
        assert_eq!(c.conditions.len(), 2);
        assert_eq!(c.conditions[1].name(), "MTO Reject");
        assert_eq!(c.position_scheme, PositionScheme::Random(2));
        assert_eq!(c.settings().unwrap().ffn.hidden_units, 16);
        assert_eq!(c.settings().unwrap().ffn.max_epochs, 2000);

        assert!(ExperimentConfig::from_toml_str("near_mastery_threshold = 0.95").is_err());
        assert!(ExperimentConfig::from_toml_str("mastery_threshold = 1.5").is_err());
        assert!(ExperimentConfig::from_toml_str("[ffn]\nwidth = 3").is_err());
        assert!(ExperimentConfig::from_toml_str("[transformer]\nheads = 5").is_err());
        assert!(ExperimentConfig::from_toml_str("conditions = [\"XYZ\"]").is_err());

        let json = serde_json::to_string(&c).unwrap();
        assert_eq!(ExperimentConfig::from_json_str(&json).unwrap(), c);
    }

    #[test]
    fn mastery_flags_follow_the_thresholds() {
        let config = ExperimentConfig::default();
        let c = Condition::new(TrainingStructure::ManyToOne, SelectReject, Biased);
        let r = run_cell(&c, AgentKind::Probabilistic, &config, 5).unwrap();
        assert_eq!(r.rates.base, 1.0);
        assert!(!r.failed);
        assert_eq!(r.rates.trans, 1.0);
        assert_eq!(&r.mastery_flags()[..1], "M");
        assert_eq!(&r.mastery_flags()[3..], "M");
        for k in TestKind::ALL {
            assert_eq!(r.mastery.get(k), r.rates.get(k) >= 0.9);
            assert_eq!(r.near_mastery.get(k), r.rates.get(k) >= 0.7);
        }
    }

    #[test]
    fn retries_then_flags_failure() {
        let config = ExperimentConfig {
            ffn: Some(serde_json::from_str(r#"{"max_epochs": 1, "hidden_units": 2}"#).unwrap()),
            max_retries: 2,
            ..ExperimentConfig::default()
        };
        let c = Condition::standard(TrainingStructure::LinearSeries);
        let r = run_cell(&c, AgentKind::Ffn, &config, 0).unwrap();
        assert!(r.failed);
        assert_eq!(r.attempts, 3);
        assert_ne!(r.train_seed, r.seed);
        assert!(!r.mastery.base);
    }

    #[test]
    fn probe_counts() {
        let config = ExperimentConfig::default();
        for (ts, n) in [
            (TrainingStructure::LinearSeries, 20),
            (TrainingStructure::ManyToOne, 20),
            (TrainingStructure::OneToMany, 4),
        ] {
            let c = Condition::new(ts, SelectReject, Biased);
            let probes = sequential_probe(&c, AgentKind::Probabilistic, &config, 1).unwrap();
            assert_eq!(probes.len(), n);
            for p in &probes {
                assert_eq!(p.trained_rate(), 1.0, "{}", p.sample);
            }
        }
    }
}
