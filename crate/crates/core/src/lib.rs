//! Matching-to-sample simulation of stimulus-equivalence training and
//! testing with four agent families: a lookup-table (probabilistic) agent,
//! a feedforward network, and causal (GPT) and bidirectional (BERT)
//! transformers.

pub mod agents;
pub mod error;
pub mod numerics;
pub mod oracle;
pub mod runner;
pub mod stimuli;
pub mod structures;
pub mod trials;

pub use agents::{build_agent, Agent, AgentKind, AgentSettings, Profile, StopReason, TrainReport};
pub use error::{Error, Result};
pub use numerics::Scalar;
pub use oracle::{classify_pairs, exact_run, expected_rates, ExpectedRates, PLevel, Rate};
pub use runner::{run_cell, run_full_matrix, sequential_probe, ExperimentConfig, RunResult};
pub use stimuli::StimulusId;
pub use structures::{TestKind, TrainingStructure};
pub use trials::{Condition, NegativePolicy, PositionScheme, RelationType, Selection, Trial, TrialSet};

pub type Matrix = numerics::Matrix2D<f64>;
pub type MatrixF32 = numerics::Matrix2D<f32>;
pub type FfnWeights = agents::FfnWeights<f64>;
pub type FfnWeightsF32 = agents::FfnWeights<f32>;
pub type TransformerWeights = agents::TransformerWeights<f64>;
pub type TransformerWeightsF32 = agents::TransformerWeights<f32>;
pub type FfnAgent = agents::FfnAgent<f64>;
pub type TransformerAgent = agents::TransformerAgent<f64>;
