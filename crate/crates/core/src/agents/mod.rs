//! The four agent families behind one train/select contract.

pub mod ffn;
pub mod probabilistic;
pub mod transformer;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Scalar;
use crate::trials::{Phase, Selection, Trial, TrialSet};

pub use ffn::{ffn_select, ffn_train, FfnAgent, FfnConfig, FfnWeights};
pub use probabilistic::{probabilistic_select, probabilistic_train_trial, ProbabilisticAgent};
pub use transformer::{
    transformer_select, transformer_train, TransformerAgent, TransformerConfig, TransformerWeights,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AgentKind {
    Bert,
    Ffn,
    Gpt,
    Probabilistic,
}

impl AgentKind {
    /// Report order.
    pub const ALL: [AgentKind; 4] = [
        AgentKind::Bert,
        AgentKind::Ffn,
        AgentKind::Gpt,
        AgentKind::Probabilistic,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AgentKind::Bert => "BERT",
            AgentKind::Ffn => "FFN",
            AgentKind::Gpt => "GPT",
            AgentKind::Probabilistic => "Prob",
        }
    }
}

impl fmt::Display for AgentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AgentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "bert" => Ok(AgentKind::Bert),
            "ffn" => Ok(AgentKind::Ffn),
            "gpt" => Ok(AgentKind::Gpt),
            "prob" | "probabilistic" => Ok(AgentKind::Probabilistic),
            _ => Err(Error::Parse {
                what: "agent kind",
                text: s.to_string(),
            }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    /// The training-loss criterion was met.
    Threshold,
    /// The iteration budget ran out.
    MaxIters,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Epochs (FFN), iterations (transformers) or passes (probabilistic).
    pub iterations: usize,
    pub final_loss: f64,
    /// Accuracy on the training trials after training.
    pub baseline_accuracy: f64,
    pub stop_reason: StopReason,
    /// (iteration, loss) checkpoints.
    #[serde(default)]
    pub loss_history: Vec<(usize, f64)>,
}

/// Hyperparameter profile.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    /// Reduced sizes that train in minutes on a CPU.
    #[default]
    Desk,
    /// Full-scale network sizes and training lengths.
    Full,
}

impl FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Profile::Desk),
            "full" => Ok(Profile::Full),
            _ => Err(Error::Parse {
                what: "profile",
                text: s.to_string(),
            }),
        }
    }
}

/// Configs for the trainable agents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentSettings {
    pub ffn: FfnConfig,
    pub transformer: TransformerConfig,
}

impl AgentSettings {
    pub fn for_profile(profile: Profile) -> Self {
        match profile {
            Profile::Desk => AgentSettings {
                ffn: FfnConfig::desk(),
                transformer: TransformerConfig::desk(),
            },
            Profile::Full => AgentSettings {
                ffn: FfnConfig::full(),
                transformer: TransformerConfig::full(),
            },
        }
    }
}

impl Default for AgentSettings {
    fn default() -> Self {
        AgentSettings::for_profile(Profile::Desk)
    }
}

/// Common contract: learn from feedback on a training set, then choose a
/// comparison for each trial without feedback.
pub trait Agent: Send {
    fn kind(&self) -> AgentKind;

    fn train(&mut self, trials: &TrialSet) -> Result<TrainReport>;

    fn select(&self, trial: &Trial) -> Selection;

    fn select_all(&self, trials: &[Trial]) -> Vec<Selection> {
        trials.iter().map(|t| self.select(t)).collect()
    }
}

/// Builds a fresh, untrained agent.
pub fn build_agent(kind: AgentKind, settings: &AgentSettings, seed: u64) -> Result<Box<dyn Agent>> {
    build_agent_with::<f64>(kind, settings, seed)
}

pub fn build_agent_with<T: Scalar>(
    kind: AgentKind,
    settings: &AgentSettings,
    seed: u64,
) -> Result<Box<dyn Agent>> {
    Ok(match kind {
        AgentKind::Probabilistic => Box::new(ProbabilisticAgent::new(seed)),
        AgentKind::Ffn => Box::new(FfnAgent::<T>::new(settings.ffn.clone(), seed)?),
        AgentKind::Gpt | AgentKind::Bert => {
            let config = TransformerConfig {
                causal: kind == AgentKind::Gpt,
                ..settings.transformer.clone()
            };
            Box::new(TransformerAgent::<T>::new(kind, config, seed)?)
        }
    })
}

pub(crate) fn ensure_training_set(trials: &TrialSet) -> Result<()> {
    if trials.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    if let Some(i) = trials.trials.iter().position(|t| t.phase != Phase::Train) {
        return Err(Error::Config(format!("trial {i} is not a training trial")));
    }
    Ok(())
}

/// Index of the largest value; exact ties go to the lowest index.
pub fn argmax_lowest<T: PartialOrd + Copy>(values: &[T]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

pub(crate) fn accuracy(trials: &[Trial], selections: &[Selection]) -> f64 {
    if trials.is_empty() {
        return 0.0;
    }
    let correct = trials
        .iter()
        .zip(selections)
        .filter(|(t, &s)| t.is_correct(s))
        .count();
    correct as f64 / trials.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn argmax_ties_go_low() {
        assert_eq!(argmax_lowest(&[0.98, 0.01, 0.02]), 0);
        assert_eq!(argmax_lowest(&[0.0, 0.0, 0.0]), 0);
        assert_eq!(argmax_lowest(&[0.1, 0.5, 0.5]), 1);
        assert_eq!(argmax_lowest(&[0.1, 0.2, 0.5]), 2);
    }

    #[test]
    fn kind_parsing() {
        for kind in AgentKind::ALL {
            assert_eq!(kind.name().parse::<AgentKind>().unwrap(), kind);
        }
        assert_eq!("probabilistic".parse::<AgentKind>().unwrap(), AgentKind::Probabilistic);
        assert!("svm".parse::<AgentKind>().is_err());
    }

    #[test]
    fn bert_and_gpt_differ_only_in_the_mask() {
        let settings = AgentSettings::default();
        let gpt = TransformerConfig { causal: true, ..settings.transformer.clone() };
        let bert = TransformerConfig { causal: false, ..settings.transformer.clone() };
        assert_eq!(TransformerConfig { causal: true, ..bert }, gpt);
    }
}
