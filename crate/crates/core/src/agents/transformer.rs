//! Decoder-style transformer over the five-token trial encoding. The causal
//! variant is the GPT agent; removing the mask gives the BERT agent.

use std::marker::PhantomData;

use serde::{Deserialize, Serialize};

use super::{accuracy, argmax_lowest, ensure_training_set, Agent, AgentKind, StopReason, TrainReport};
use crate::error::{Error, Result};
use crate::numerics::adam::AdamHyper;
use crate::numerics::attention::{apply_mask, block_backward, block_forward, BlockCache, BlockSpec, Dropout};
use crate::numerics::kernels::{cross_entropy, layer_norm, layer_norm_backward, linear, linear_backward, LayerNormCache};
use crate::numerics::{adam_step, AdamState, BlockWeights, Matrix2D, Prng, Scalar, Stream};
use crate::trials::{
    encode_tokens, response_index, response_token, Selection, TokenId, Trial, TrialSet, COMPARISONS, PROMPT_LEN,
    SEQUENCE_LEN, VOCAB_SIZE,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TransformerConfig {
    pub batch_size: usize,
    pub block_size: usize,
    pub max_iters: usize,
    pub eval_interval: usize,
    pub learning_rate: f64,
    pub eval_iters: usize,
    pub embed_dim: usize,
    pub heads: usize,
    pub layers: usize,
    pub dropout: f64,
    /// true for GPT, false for BERT.
    pub causal: bool,
    /// Limit the greedy choice to the three response tokens.
    pub restrict_to_responses: bool,
}

impl Default for TransformerConfig {
    fn default() -> Self {
        TransformerConfig::desk()
    }
}

impl TransformerConfig {
    pub fn full() -> Self {
        TransformerConfig {
            batch_size: 64,
            block_size: PROMPT_LEN,
            max_iters: 10_000,
            eval_interval: 500,
            learning_rate: 3e-4,
            eval_iters: 200,
            embed_dim: 384,
            heads: 6,
            layers: 6,
            dropout: 0.2,
            causal: true,
            restrict_to_responses: false,
        }
    }

    pub fn desk() -> Self {
        TransformerConfig {
            embed_dim: 64,
            heads: 2,
            layers: 2,
            max_iters: 2_000,
            ..TransformerConfig::full()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.block_size != PROMPT_LEN {
            return Err(Error::Config(format!("transformer block_size must be {PROMPT_LEN}")));
        }
        if self.heads == 0 || self.embed_dim == 0 || self.embed_dim % self.heads != 0 {
            return Err(Error::Config(format!(
                "embed_dim {} is not divisible by {} heads",
                self.embed_dim, self.heads
            )));
        }
        if self.batch_size == 0 || self.eval_interval == 0 {
            return Err(Error::Config("batch_size and eval_interval must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) || !(self.learning_rate > 0.0) {
            return Err(Error::Config("dropout must be in [0, 1) and learning_rate > 0".into()));
        }
        Ok(())
    }

    fn spec(&self) -> BlockSpec {
        BlockSpec {
            heads: self.heads,
            causal: self.causal,
            block_size: self.block_size,
        }
    }
}

pub const INIT_STREAM: &str = "transformer/init";
pub const BATCH_STREAM: &str = "transformer/batches";
pub const DROPOUT_STREAM: &str = "transformer/dropout";
pub const EVAL_STREAM: &str = "transformer/eval";
const INIT_SD: f64 = 0.02;

#[derive(Debug, Clone, PartialEq)]
pub struct TransformerWeights<T> {
    pub wte: Matrix2D<T>,
    pub wpe: Matrix2D<T>,
    pub blocks: Vec<BlockWeights<T>>,
    pub lnf_gamma: Matrix2D<T>,
    pub lnf_beta: Matrix2D<T>,
    pub w_head: Matrix2D<T>,
    pub b_head: Matrix2D<T>,
}

struct Cache<T> {
    tokens: Vec<TokenId>,
    embed_mask: Option<Matrix2D<T>>,
    blocks: Vec<BlockCache<T>>,
    lnf: LayerNormCache<T>,
    final_hidden: Matrix2D<T>,
}

impl<T: Scalar> TransformerWeights<T> {
    pub fn init(config: &TransformerConfig, stream: &mut Stream) -> Self {
        let d = config.embed_dim;
        let mut normal = |rows, cols| Matrix2D::from_fn(rows, cols, |_, _| T::of(stream.normal(0.0, INIT_SD)));
        let wte = normal(VOCAB_SIZE, d);
        let wpe = normal(config.block_size, d);
        let w_head = normal(d, VOCAB_SIZE);
        let blocks = (0..config.layers).map(|_| BlockWeights::init(d, INIT_SD, stream)).collect();
        TransformerWeights {
            wte,
            wpe,
            blocks,
            lnf_gamma: Matrix2D::filled(1, d, T::one()),
            lnf_beta: Matrix2D::zeros(1, d),
            w_head,
            b_head: Matrix2D::zeros(1, VOCAB_SIZE),
        }
    }

    fn zeros_like(&self) -> Self {
        let z = |m: &Matrix2D<T>| Matrix2D::zeros(m.rows(), m.cols());
        TransformerWeights {
            wte: z(&self.wte),
            wpe: z(&self.wpe),
            blocks: self.blocks.iter().map(|b| BlockWeights::zeros(b.embed_dim())).collect(),
            lnf_gamma: z(&self.lnf_gamma),
            lnf_beta: z(&self.lnf_beta),
            w_head: z(&self.w_head),
            b_head: z(&self.b_head),
        }
    }

    pub fn embed_dim(&self) -> usize {
        self.wte.cols()
    }

    pub fn tensors(&self) -> Vec<&Matrix2D<T>> {
        let mut out = vec![&self.wte, &self.wpe];
        for b in &self.blocks {
            out.extend(b.tensors());
        }
        out.extend([&self.lnf_gamma, &self.lnf_beta, &self.w_head, &self.b_head]);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Matrix2D<T>> {
        let mut out = vec![&mut self.wte, &mut self.wpe];
        for b in &mut self.blocks {
            out.extend(b.tensors_mut());
        }
        out.extend([&mut self.lnf_gamma, &mut self.lnf_beta, &mut self.w_head, &mut self.b_head]);
        out
    }

    /// Rebuilds weights shaped like `self` from a flat tensor list.
    pub fn with_tensors(&self, tensors: &[Matrix2D<T>]) -> Result<Self> {
        let mut w = self.clone();
        let slots = w.tensors_mut();
        if slots.len() != tensors.len() {
            return Err(Error::shape("transformer weights", format!("{} tensors for {}", tensors.len(), slots.len())));
        }
        for (slot, t) in slots.into_iter().zip(tensors) {
            if slot.shape() != t.shape() {
                return Err(Error::shape("transformer weights", format!("{:?} vs {:?}", slot.shape(), t.shape())));
            }
            *slot = t.clone();
        }
        Ok(w)
    }

    fn forward(
        &self,
        tokens: &[TokenId],
        seq_len: usize,
        spec: &BlockSpec,
        mut dropout: Option<&mut Dropout<'_>>,
    ) -> Result<(Matrix2D<T>, Cache<T>)> {
        if seq_len == 0 || seq_len > self.wpe.rows() || tokens.len() % seq_len != 0 {
            return Err(Error::shape("transformer", format!("{} tokens, sequence length {seq_len}", tokens.len())));
        }
        if let Some(&t) = tokens.iter().find(|&&t| t as usize >= VOCAB_SIZE) {
            return Err(Error::shape("transformer", format!("token {t} outside the vocabulary")));
        }
        let d = self.embed_dim();
        let mut x = Matrix2D::zeros(tokens.len(), d);
        for (r, &tok) in tokens.iter().enumerate() {
            let te = self.wte.row(tok as usize);
            let pe = self.wpe.row(r % seq_len);
            for ((o, &a), &b) in x.row_mut(r).iter_mut().zip(te).zip(pe) {
                *o = a + b;
            }
        }
        let embed_mask = dropout.as_deref_mut().and_then(|dr| dr.mask(x.rows(), d));
        apply_mask(&mut x, &embed_mask);
        let mut caches = Vec::with_capacity(self.blocks.len());
        for b in &self.blocks {
            let (y, c) = block_forward(&x, seq_len, b, spec, dropout.as_deref_mut())?;
            x = y;
            caches.push(c);
        }
        let (final_hidden, lnf) = layer_norm(&x, &self.lnf_gamma, &self.lnf_beta)?;
        let logits = linear(&final_hidden, &self.w_head, &self.b_head)?;
        Ok((
            logits,
            Cache {
                tokens: tokens.to_vec(),
                embed_mask,
                blocks: caches,
                lnf,
                final_hidden,
            },
        ))
    }

    fn backward(&self, dlogits: &Matrix2D<T>, cache: &Cache<T>, seq_len: usize, spec: &BlockSpec) -> Result<Self> {
        let mut g = self.zeros_like();
        let (dh, dw_head, db_head) = linear_backward(dlogits, &cache.final_hidden, &self.w_head)?;
        g.w_head = dw_head;
        g.b_head = db_head;
        let (mut dx, dgamma, dbeta) = layer_norm_backward(&dh, &cache.lnf, &self.lnf_gamma);
        g.lnf_gamma = dgamma;
        g.lnf_beta = dbeta;
        for (i, b) in self.blocks.iter().enumerate().rev() {
            let (dprev, gb) = block_backward(&dx, &cache.blocks[i], b, spec)?;
            dx = dprev;
            g.blocks[i] = gb;
        }
        apply_mask(&mut dx, &cache.embed_mask);
        for (r, &tok) in cache.tokens.iter().enumerate() {
            let src = dx.row(r);
            for (o, &v) in g.wte.row_mut(tok as usize).iter_mut().zip(src) {
                *o += v;
            }
            for (o, &v) in g.wpe.row_mut(r % seq_len).iter_mut().zip(src) {
                *o += v;
            }
        }
        Ok(g)
    }

    /// Mean next-token cross-entropy over every position of every sequence,
    /// with the gradient of each tensor.
    pub fn loss_and_grad(
        &self,
        sequences: &[[TokenId; SEQUENCE_LEN]],
        spec: &BlockSpec,
        dropout: Option<&mut Dropout<'_>>,
    ) -> Result<(T, Self)> {
        let (inputs, targets) = shifted_pairs(sequences);
        let (logits, cache) = self.forward(&inputs, PROMPT_LEN, spec, dropout)?;
        let (loss, dlogits) = cross_entropy(&logits, &targets)?;
        let grads = self.backward(&dlogits, &cache, PROMPT_LEN, spec)?;
        Ok((loss, grads))
    }

    pub fn loss(&self, sequences: &[[TokenId; SEQUENCE_LEN]], spec: &BlockSpec) -> Result<T> {
        let (inputs, targets) = shifted_pairs(sequences);
        let (logits, _) = self.forward(&inputs, PROMPT_LEN, spec, None)?;
        Ok(cross_entropy(&logits, &targets)?.0)
    }

    /// Logits at every position of a single prompt (`len x VOCAB_SIZE`).
    pub fn position_logits(&self, prompt: &[TokenId], spec: &BlockSpec) -> Result<Matrix2D<T>> {
        Ok(self.forward(prompt, prompt.len(), spec, None)?.0)
    }

    /// Last-position logits for a batch of prompts.
    pub fn next_token_logits(&self, prompts: &[[TokenId; PROMPT_LEN]], spec: &BlockSpec) -> Result<Matrix2D<T>> {
        let flat: Vec<TokenId> = prompts.iter().flatten().copied().collect();
        let (logits, _) = self.forward(&flat, PROMPT_LEN, spec, None)?;
        let mut out = Matrix2D::zeros(prompts.len(), VOCAB_SIZE);
        for i in 0..prompts.len() {
            out.row_mut(i).copy_from_slice(logits.row(i * PROMPT_LEN + PROMPT_LEN - 1));
        }
        Ok(out)
    }
}

fn shifted_pairs(sequences: &[[TokenId; SEQUENCE_LEN]]) -> (Vec<TokenId>, Vec<usize>) {
    let mut inputs = Vec::with_capacity(sequences.len() * PROMPT_LEN);
    let mut targets = Vec::with_capacity(sequences.len() * PROMPT_LEN);
    for s in sequences {
        inputs.extend_from_slice(&s[..PROMPT_LEN]);
        targets.extend(s[1..].iter().map(|&t| t as usize));
    }
    (inputs, targets)
}

fn sample_batch(sequences: &[[TokenId; SEQUENCE_LEN]], size: usize, stream: &mut Stream) -> Vec<[TokenId; SEQUENCE_LEN]> {
    (0..size).map(|_| sequences[stream.below(sequences.len())]).collect()
}

/// Greedy decoding of one logit row into a selection.
pub fn decode_choice<T: Scalar>(logits: &[T], restrict_to_responses: bool) -> Selection {
    if restrict_to_responses {
        let first = response_token(0) as usize;
        return Selection::Comparison(argmax_lowest(&logits[first..first + COMPARISONS]));
    }
    let token = argmax_lowest(logits) as TokenId;
    match response_index(token) {
        Some(k) => Selection::Comparison(k),
        None => Selection::NonResponse(token),
    }
}

fn estimate_loss<T: Scalar>(
    weights: &TransformerWeights<T>,
    sequences: &[[TokenId; SEQUENCE_LEN]],
    config: &TransformerConfig,
    stream: &mut Stream,
) -> Result<f64> {
    let spec = config.spec();
    let mut total = 0.0;
    for _ in 0..config.eval_iters.max(1) {
        let batch = sample_batch(sequences, config.batch_size, stream);
        total += weights.loss(&batch, &spec)?.as_f64();
    }
    Ok(total / config.eval_iters.max(1) as f64)
}

pub fn transformer_train<T: Scalar>(
    config: &TransformerConfig,
    trials: &TrialSet,
    seed: u64,
) -> Result<(TransformerWeights<T>, TrainReport)> {
    config.validate()?;
    let weights = TransformerWeights::init(config, &mut Prng::new(seed).substream(INIT_STREAM));
    train_from(config, weights, trials, seed)
}

fn train_from<T: Scalar>(
    config: &TransformerConfig,
    mut weights: TransformerWeights<T>,
    trials: &TrialSet,
    seed: u64,
) -> Result<(TransformerWeights<T>, TrainReport)> {
    ensure_training_set(trials)?;
    let prng = Prng::new(seed);
    let mut batches = prng.substream(BATCH_STREAM);
    let mut drop_stream = prng.substream(DROPOUT_STREAM);
    let mut eval_stream = prng.substream(EVAL_STREAM);
    let spec = config.spec();
    let sequences: Vec<[TokenId; SEQUENCE_LEN]> = trials.trials.iter().map(encode_tokens).collect();
    let mut adam = AdamState::new(weights.tensors(), AdamHyper::with_learning_rate(config.learning_rate));
    let mut history = Vec::new();
    for iter in 0..config.max_iters {
        if iter % config.eval_interval == 0 {
            let loss = estimate_loss(&weights, &sequences, config, &mut eval_stream)?;
            log::debug!("transformer iter {iter}: loss {loss:.4}");
            history.push((iter, loss));
        }
        let batch = sample_batch(&sequences, config.batch_size, &mut batches);
        let mut dropout = Dropout {
            rate: config.dropout,
            stream: &mut drop_stream,
        };
        let (loss, grads) = weights.loss_and_grad(&batch, &spec, Some(&mut dropout))?;
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!("transformer loss at iteration {iter}")));
        }
        adam_step(&mut weights.tensors_mut(), &grads.tensors(), &mut adam)?;
    }
    let final_loss = estimate_loss(&weights, &sequences, config, &mut eval_stream)?;
    if !final_loss.is_finite() {
        return Err(Error::NonFinite("transformer loss after training".into()));
    }
    history.push((config.max_iters, final_loss));
    let selections = select_batch(&weights, config, &trials.trials)?;
    Ok((
        weights,
        TrainReport {
            iterations: config.max_iters,
            final_loss,
            baseline_accuracy: accuracy(&trials.trials, &selections),
            stop_reason: StopReason::MaxIters,
            loss_history: history,
        },
    ))
}

fn prompt_of(trial: &Trial) -> [TokenId; PROMPT_LEN] {
    let t = encode_tokens(trial);
    [t[0], t[1], t[2], t[3]]
}

/// First generated token after the prompt, mapped back to a comparison.
pub fn transformer_select<T: Scalar>(weights: &TransformerWeights<T>, config: &TransformerConfig, trial: &Trial) -> Selection {
    let logits = weights
        .next_token_logits(&[prompt_of(trial)], &config.spec())
        .expect("prompt fits the block");
    let choice = decode_choice(logits.row(0), config.restrict_to_responses);
    if let Selection::NonResponse(tok) = choice {
        log::debug!("non-response token {tok} emitted for sample {}", trial.sample);
    }
    choice
}

const EVAL_CHUNK: usize = 256;

fn select_batch<T: Scalar>(
    weights: &TransformerWeights<T>,
    config: &TransformerConfig,
    trials: &[Trial],
) -> Result<Vec<Selection>> {
    let spec = config.spec();
    let mut out = Vec::with_capacity(trials.len());
    let mut non_responses = 0;
    for chunk in trials.chunks(EVAL_CHUNK) {
        let prompts: Vec<_> = chunk.iter().map(prompt_of).collect();
        let logits = weights.next_token_logits(&prompts, &spec)?;
        for r in 0..logits.rows() {
            let s = decode_choice(logits.row(r), config.restrict_to_responses);
            if matches!(s, Selection::NonResponse(_)) {
                non_responses += 1;
            }
            out.push(s);
        }
    }
    if non_responses > 0 {
        log::debug!("{non_responses} of {} trials answered with a non-response token", trials.len());
    }
    Ok(out)
}

pub struct TransformerAgent<T> {
    kind: AgentKind,
    config: TransformerConfig,
    seed: u64,
    weights: TransformerWeights<T>,
    _scalar: PhantomData<T>,
}

impl<T: Scalar> TransformerAgent<T> {
    pub fn new(kind: AgentKind, config: TransformerConfig, seed: u64) -> Result<Self> {
        if !matches!(kind, AgentKind::Gpt | AgentKind::Bert) {
            return Err(Error::Config(format!("{kind} is not a transformer agent")));
        }
        config.validate()?;
        let weights = TransformerWeights::init(&config, &mut Prng::new(seed).substream(INIT_STREAM));
        Ok(TransformerAgent {
            kind,
            config,
            seed,
            weights,
            _scalar: PhantomData,
        })
    }

    pub fn weights(&self) -> &TransformerWeights<T> {
        &self.weights
    }

    pub fn config(&self) -> &TransformerConfig {
        &self.config
    }
}

impl<T: Scalar> Agent for TransformerAgent<T> {
    fn kind(&self) -> AgentKind {
        self.kind
    }

    fn train(&mut self, trials: &TrialSet) -> Result<TrainReport> {
        let (weights, report) = train_from(&self.config, self.weights.clone(), trials, self.seed)?;
        self.weights = weights;
        Ok(report)
    }

    fn select(&self, trial: &Trial) -> Selection {
        transformer_select(&self.weights, &self.config, trial)
    }

    fn select_all(&self, trials: &[Trial]) -> Vec<Selection> {
        select_batch(&self.weights, &self.config, trials).expect("prompts fit the block")
    }
}
