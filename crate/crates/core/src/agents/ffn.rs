//! Single-hidden-layer feedforward network over concatenated one-hot trial
//! encodings: ReLU hidden layer, three linear outputs, MSE against one-hot
//! targets, Adam, early stop on training-set RMSE.

use std::marker::PhantomData;

use serde::{Deserialize, Serialize};

use super::{accuracy, argmax_lowest, ensure_training_set, Agent, AgentKind, StopReason, TrainReport};
use crate::error::{Error, Result};
use crate::numerics::adam::AdamHyper;
use crate::numerics::kernels::{mse, relu, relu_backward};
use crate::numerics::{adam_step, AdamState, Matrix2D, Prng, Scalar, Stream};
use crate::trials::{write_onehot, Selection, Trial, TrialSet, COMPARISONS, ONEHOT_LEN};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FfnConfig {
    pub hidden_units: usize,
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub rmse_threshold: f64,
    pub batch_size: usize,
}

impl FfnConfig {
    pub fn desk() -> Self {
        FfnConfig {
            hidden_units: 256,
            learning_rate: 0.001,
            max_epochs: 2_000,
            rmse_threshold: 0.001,
            batch_size: 32,
        }
    }

    pub fn full() -> Self {
        FfnConfig {
            hidden_units: 50_000,
            max_epochs: 50_000,
            ..FfnConfig::desk()
        }
    }

    fn validate(&self) -> Result<()> {
        if self.hidden_units == 0 || self.batch_size == 0 {
            return Err(Error::Config("ffn hidden_units and batch_size must be >= 1".into()));
        }
        if !(self.rmse_threshold > 0.0) || !(self.learning_rate > 0.0) {
            return Err(Error::Config("ffn rmse_threshold and learning_rate must be > 0".into()));
        }
        Ok(())
    }
}

pub const INIT_STREAM: &str = "ffn/init";
pub const EPOCH_STREAM: &str = "ffn/epochs";

#[derive(Debug, Clone, PartialEq)]
pub struct FfnWeights<T> {
    pub w1: Matrix2D<T>,
    pub b1: Matrix2D<T>,
    pub w2: Matrix2D<T>,
    pub b2: Matrix2D<T>,
}

struct Forward<T> {
    pre: Matrix2D<T>,
    hidden: Matrix2D<T>,
    out: Matrix2D<T>,
}

impl<T: Scalar> FfnWeights<T> {
    /// Uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` for weights and biases.
    pub fn init(hidden: usize, stream: &mut Stream) -> Self {
        let mut uniform = |rows, cols, fan_in: usize| {
            let bound = 1.0 / (fan_in as f64).sqrt();
            Matrix2D::from_fn(rows, cols, |_, _| T::of(stream.uniform_range(-bound, bound)))
        };
        FfnWeights {
            w1: uniform(ONEHOT_LEN, hidden, ONEHOT_LEN),
            b1: uniform(1, hidden, ONEHOT_LEN),
            w2: uniform(hidden, COMPARISONS, hidden),
            b2: uniform(1, COMPARISONS, hidden),
        }
    }

    pub fn tensors(&self) -> Vec<&Matrix2D<T>> {
        vec![&self.w1, &self.b1, &self.w2, &self.b2]
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Matrix2D<T>> {
        vec![&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2]
    }

    pub fn from_tensors(mut tensors: Vec<Matrix2D<T>>) -> Result<Self> {
        if tensors.len() != 4 {
            return Err(Error::shape("ffn weights", format!("{} tensors", tensors.len())));
        }
        let b2 = tensors.pop().unwrap();
        let w2 = tensors.pop().unwrap();
        let b1 = tensors.pop().unwrap();
        let w1 = tensors.pop().unwrap();
        Ok(FfnWeights { w1, b1, w2, b2 })
    }

    fn forward(&self, x: &Matrix2D<T>) -> Result<Forward<T>> {
        let mut pre = x.matmul(&self.w1)?;
        pre.add_row_broadcast(&self.b1)?;
        let hidden = relu(&pre);
        let mut out = hidden.matmul(&self.w2)?;
        out.add_row_broadcast(&self.b2)?;
        Ok(Forward { pre, hidden, out })
    }

    /// Output activations for a batch of encoded trials.
    pub fn outputs(&self, x: &Matrix2D<T>) -> Result<Matrix2D<T>> {
        Ok(self.forward(x)?.out)
    }

    /// MSE loss against `targets` and the gradient for every tensor.
    pub fn loss_and_grad(&self, x: &Matrix2D<T>, targets: &Matrix2D<T>) -> Result<(T, FfnWeights<T>)> {
        let f = self.forward(x)?;
        let (loss, dout) = mse(&f.out, targets)?;
        let dw2 = f.hidden.matmul_tn(&dout)?;
        let db2 = dout.col_sums();
        let dhidden = dout.matmul_nt(&self.w2)?;
        let dpre = relu_backward(&dhidden, &f.pre);
        let dw1 = x.matmul_tn(&dpre)?;
        let db1 = dpre.col_sums();
        Ok((
            loss,
            FfnWeights {
                w1: dw1,
                b1: db1,
                w2: dw2,
                b2: db2,
            },
        ))
    }
}

pub fn encode_batch<T: Scalar>(trials: &[Trial]) -> (Matrix2D<T>, Matrix2D<T>) {
    let mut x = Matrix2D::zeros(trials.len(), ONEHOT_LEN);
    let mut y = Matrix2D::zeros(trials.len(), COMPARISONS);
    for (r, t) in trials.iter().enumerate() {
        write_onehot(t, x.row_mut(r));
        y.set(r, t.correct_index, T::one());
    }
    (x, y)
}

fn gather_rows<T: Scalar>(m: &Matrix2D<T>, rows: &[usize]) -> Matrix2D<T> {
    let mut out = Matrix2D::zeros(rows.len(), m.cols());
    for (i, &r) in rows.iter().enumerate() {
        out.row_mut(i).copy_from_slice(m.row(r));
    }
    out
}

const EVAL_CHUNK: usize = 1024;

fn full_rmse<T: Scalar>(w: &FfnWeights<T>, x: &Matrix2D<T>, y: &Matrix2D<T>) -> Result<f64> {
    let mut sq = 0.0;
    for start in (0..x.rows()).step_by(EVAL_CHUNK) {
        let end = (start + EVAL_CHUNK).min(x.rows());
        let out = w.outputs(&x.slice_rows(start, end))?;
        let target = y.slice_rows(start, end);
        sq += out
            .data()
            .iter()
            .zip(target.data())
            .map(|(&a, &b)| (a - b).as_f64().powi(2))
            .sum::<f64>();
    }
    Ok((sq / y.len() as f64).sqrt())
}

/// Trains a freshly initialized network.
pub fn ffn_train<T: Scalar>(config: &FfnConfig, trials: &TrialSet, seed: u64) -> Result<(FfnWeights<T>, TrainReport)> {
    config.validate()?;
    let prng = Prng::new(seed);
    let weights = FfnWeights::init(config.hidden_units, &mut prng.substream(INIT_STREAM));
    ffn_train_from(config, weights, trials, seed)
}

fn ffn_train_from<T: Scalar>(
    config: &FfnConfig,
    mut weights: FfnWeights<T>,
    trials: &TrialSet,
    seed: u64,
) -> Result<(FfnWeights<T>, TrainReport)> {
    ensure_training_set(trials)?;
    let mut epochs = Prng::new(seed).substream(EPOCH_STREAM);
    let (x, y) = encode_batch::<T>(&trials.trials);
    let mut adam = AdamState::new(weights.tensors(), AdamHyper::with_learning_rate(config.learning_rate));
    let mut order: Vec<usize> = (0..trials.len()).collect();
    let mut history = Vec::new();
    let mut rmse = full_rmse(&weights, &x, &y)?;
    let mut stop_reason = StopReason::MaxIters;
    let mut epoch = 0;
    while epoch < config.max_epochs {
        epochs.shuffle(&mut order);
        for batch in order.chunks(config.batch_size) {
            let bx = gather_rows(&x, batch);
            let by = gather_rows(&y, batch);
            let (loss, grads) = weights.loss_and_grad(&bx, &by)?;
            if !loss.is_finite() {
                return Err(Error::NonFinite(format!("ffn loss at epoch {epoch}")));
            }
            adam_step(&mut weights.tensors_mut(), &grads.tensors(), &mut adam)?;
        }
        epoch += 1;
        rmse = full_rmse(&weights, &x, &y)?;
        if !rmse.is_finite() {
            return Err(Error::NonFinite(format!("ffn training rmse at epoch {epoch}")));
        }
        if epoch % 100 == 0 {
            history.push((epoch, rmse));
        }
        if rmse < config.rmse_threshold {
            stop_reason = StopReason::Threshold;
            break;
        }
    }
    if history.last().map(|h| h.0) != Some(epoch) {
        history.push((epoch, rmse));
    }
    let selections = select_batch(&weights, &trials.trials);
    let report = TrainReport {
        iterations: epoch,
        final_loss: rmse,
        baseline_accuracy: accuracy(&trials.trials, &selections),
        stop_reason,
        loss_history: history,
    };
    Ok((weights, report))
}

/// Output unit with the largest activation.
pub fn ffn_select<T: Scalar>(weights: &FfnWeights<T>, trial: &Trial) -> usize {
    let (x, _) = encode_batch::<T>(std::slice::from_ref(trial));
    let out = weights.outputs(&x).expect("encoded trial matches the input layer");
    argmax_lowest(out.row(0))
}

fn select_batch<T: Scalar>(weights: &FfnWeights<T>, trials: &[Trial]) -> Vec<Selection> {
    let mut out = Vec::with_capacity(trials.len());
    for chunk in trials.chunks(EVAL_CHUNK) {
        let (x, _) = encode_batch::<T>(chunk);
        let y = weights.outputs(&x).expect("encoded trials match the input layer");
        out.extend((0..y.rows()).map(|r| Selection::Comparison(argmax_lowest(y.row(r)))));
    }
    out
}

pub struct FfnAgent<T> {
    config: FfnConfig,
    seed: u64,
    weights: FfnWeights<T>,
    _scalar: PhantomData<T>,
}

impl<T: Scalar> FfnAgent<T> {
    pub fn new(config: FfnConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let weights = FfnWeights::init(config.hidden_units, &mut Prng::new(seed).substream(INIT_STREAM));
        Ok(FfnAgent {
            config,
            seed,
            weights,
            _scalar: PhantomData,
        })
    }

    pub fn weights(&self) -> &FfnWeights<T> {
        &self.weights
    }
}

impl<T: Scalar> Agent for FfnAgent<T> {
    fn kind(&self) -> AgentKind {
        AgentKind::Ffn
    }

    fn train(&mut self, trials: &TrialSet) -> Result<TrainReport> {
        let (weights, report) = ffn_train_from(&self.config, self.weights.clone(), trials, self.seed)?;
        self.weights = weights;
        Ok(report)
    }

    fn select(&self, trial: &Trial) -> Selection {
        Selection::Comparison(ffn_select(&self.weights, trial))
    }

    fn select_all(&self, trials: &[Trial]) -> Vec<Selection> {
        select_batch(&self.weights, trials)
    }
}
