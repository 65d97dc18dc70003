//! Lookup-table benchmark agent: a matrix of reward probabilities
//! P(reward | sample, comparison), initialized near 0.5 and set to exactly
//! 1 or 0 by reinforced and non-reinforced presentations.

use super::{argmax_lowest, ensure_training_set, Agent, AgentKind, StopReason, TrainReport};
use crate::error::Result;
use crate::numerics::{Matrix2D, Prng};
use crate::stimuli::{build_stimulus_set, STIMULUS_COUNT};
use crate::trials::{Selection, Trial, TrialSet};

/// Named substream shared with the oracle's exact replay.
pub const INIT_STREAM: &str = "probabilistic/init";
pub const INIT_MEAN: f64 = 0.5;
pub const INIT_SD: f64 = 0.01;

/// Initial probabilities, row-major over (sample, comparison).
pub fn initial_probabilities(seed: u64) -> Vec<f64> {
    let mut stream = Prng::new(seed).substream(INIT_STREAM);
    (0..STIMULUS_COUNT * STIMULUS_COUNT)
        .map(|_| INIT_MEAN + stream.normal(0.0, INIT_SD))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilisticAgent {
    probs: Matrix2D<f64>,
}

impl ProbabilisticAgent {
    pub fn new(seed: u64) -> Self {
        ProbabilisticAgent {
            probs: Matrix2D::from_vec(STIMULUS_COUNT, STIMULUS_COUNT, initial_probabilities(seed))
                .expect("square probability table"),
        }
    }

    pub fn probabilities(&self) -> &Matrix2D<f64> {
        &self.probs
    }

    pub fn probability(&self, sample: usize, comparison: usize) -> f64 {
        self.probs.get(sample, comparison)
    }

    /// CSV with a sample column and one column per comparison.
    pub fn to_csv(&self) -> String {
        let set = build_stimulus_set();
        let mut out = String::from("sample");
        for c in set.iter() {
            out.push(',');
            out.push_str(&c.label());
        }
        out.push('\n');
        for s in set.iter() {
            out.push_str(&s.label());
            for c in set.iter() {
                out.push_str(&format!(",{:.6}", self.probability(s.index(), c.index())));
            }
            out.push('\n');
        }
        out
    }
}

/// Sets the reinforced cell to 1 and the two others to 0.
pub fn probabilistic_train_trial(agent: &mut ProbabilisticAgent, trial: &Trial) {
    let s = trial.sample.index();
    for (pos, c) in trial.comparisons.iter().enumerate() {
        let value = if pos == trial.correct_index { 1.0 } else { 0.0 };
        agent.probs.set(s, c.index(), value);
    }
}

/// Position of the comparison with the highest probability.
pub fn probabilistic_select(agent: &ProbabilisticAgent, trial: &Trial) -> usize {
    let s = trial.sample.index();
    let values = trial.comparisons.map(|c| agent.probability(s, c.index()));
    argmax_lowest(&values)
}

impl Agent for ProbabilisticAgent {
    fn kind(&self) -> AgentKind {
        AgentKind::Probabilistic
    }

    fn train(&mut self, trials: &TrialSet) -> Result<TrainReport> {
        ensure_training_set(trials)?;
        for trial in &trials.trials {
            probabilistic_train_trial(self, trial);
        }
        let mut sq = 0.0;
        for t in &trials.trials {
            for (pos, c) in t.comparisons.iter().enumerate() {
                let target = if pos == t.correct_index { 1.0 } else { 0.0 };
                sq += (self.probability(t.sample.index(), c.index()) - target).powi(2);
            }
        }
        let loss = sq / (3 * trials.len()) as f64;
        let selections = self.select_all(&trials.trials);
        Ok(TrainReport {
            iterations: 1,
            final_loss: loss,
            baseline_accuracy: super::accuracy(&trials.trials, &selections),
            stop_reason: StopReason::Threshold,
            loss_history: vec![(1, loss)],
        })
    }

    fn select(&self, trial: &Trial) -> Selection {
        Selection::Comparison(probabilistic_select(self, trial))
    }
}
