//! Pre-norm transformer block: layer-normalized multi-head self-attention
//! with a residual, then a layer-normalized two-layer GELU MLP with a
//! residual. Activations are stacked sequences, `(batch * seq_len) x d`.

use super::kernels::{
    gelu, gelu_backward, layer_norm, layer_norm_backward, linear, linear_backward,
    LayerNormCache,
};
use super::prng::Stream;
use super::{Matrix2D, Scalar};
use crate::error::{Error, Result};

pub const MLP_EXPANSION: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct BlockWeights<T> {
    pub ln1_gamma: Matrix2D<T>,
    pub ln1_beta: Matrix2D<T>,
    pub w_qkv: Matrix2D<T>,
    pub b_qkv: Matrix2D<T>,
    pub w_proj: Matrix2D<T>,
    pub b_proj: Matrix2D<T>,
    pub ln2_gamma: Matrix2D<T>,
    pub ln2_beta: Matrix2D<T>,
    pub w_fc: Matrix2D<T>,
    pub b_fc: Matrix2D<T>,
    pub w_out: Matrix2D<T>,
    pub b_out: Matrix2D<T>,
}

impl<T: Scalar> BlockWeights<T> {
    pub fn zeros(d: usize) -> Self {
        let h = MLP_EXPANSION * d;
        BlockWeights {
            ln1_gamma: Matrix2D::zeros(1, d),
            ln1_beta: Matrix2D::zeros(1, d),
            w_qkv: Matrix2D::zeros(d, 3 * d),
            b_qkv: Matrix2D::zeros(1, 3 * d),
            w_proj: Matrix2D::zeros(d, d),
            b_proj: Matrix2D::zeros(1, d),
            ln2_gamma: Matrix2D::zeros(1, d),
            ln2_beta: Matrix2D::zeros(1, d),
            w_fc: Matrix2D::zeros(d, h),
            b_fc: Matrix2D::zeros(1, h),
            w_out: Matrix2D::zeros(h, d),
            b_out: Matrix2D::zeros(1, d),
        }
    }

    /// Normal(0, `sd`) projections, zero biases, unit layer-norm gains.
    pub fn init(d: usize, sd: f64, stream: &mut Stream) -> Self {
        let mut w = Self::zeros(d);
        w.ln1_gamma = Matrix2D::filled(1, d, T::one());
        w.ln2_gamma = Matrix2D::filled(1, d, T::one());
        for m in [&mut w.w_qkv, &mut w.w_proj, &mut w.w_fc, &mut w.w_out] {
            for v in m.data_mut() {
                *v = T::of(stream.normal(0.0, sd));
            }
        }
        w
    }

    pub fn embed_dim(&self) -> usize {
        self.w_proj.rows()
    }

    pub fn tensors(&self) -> Vec<&Matrix2D<T>> {
        vec![
            &self.ln1_gamma,
            &self.ln1_beta,
            &self.w_qkv,
            &self.b_qkv,
            &self.w_proj,
            &self.b_proj,
            &self.ln2_gamma,
            &self.ln2_beta,
            &self.w_fc,
            &self.b_fc,
            &self.w_out,
            &self.b_out,
        ]
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Matrix2D<T>> {
        vec![
            &mut self.ln1_gamma,
            &mut self.ln1_beta,
            &mut self.w_qkv,
            &mut self.b_qkv,
            &mut self.w_proj,
            &mut self.b_proj,
            &mut self.ln2_gamma,
            &mut self.ln2_beta,
            &mut self.w_fc,
            &mut self.b_fc,
            &mut self.w_out,
            &mut self.b_out,
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockSpec {
    pub heads: usize,
    pub causal: bool,
    /// Longest sequence the block accepts.
    pub block_size: usize,
}

/// Inverted dropout driven by a seeded stream.
pub struct Dropout<'a> {
    pub rate: f64,
    pub stream: &'a mut Stream,
}

impl Dropout<'_> {
    pub fn mask<T: Scalar>(&mut self, rows: usize, cols: usize) -> Option<Matrix2D<T>> {
        if self.rate <= 0.0 {
            return None;
        }
        let keep = T::of(1.0 / (1.0 - self.rate));
        Some(Matrix2D::from_fn(rows, cols, |_, _| {
            if self.stream.uniform() < self.rate {
                T::zero()
            } else {
                keep
            }
        }))
    }
}

pub(crate) fn apply_mask<T: Scalar>(x: &mut Matrix2D<T>, mask: &Option<Matrix2D<T>>) {
    if let Some(m) = mask {
        for (v, &k) in x.data_mut().iter_mut().zip(m.data()) {
            *v *= k;
        }
    }
}

#[derive(Debug, Clone)]
pub struct BlockCache<T> {
    seq_len: usize,
    ln1: LayerNormCache<T>,
    h1: Matrix2D<T>,
    qkv: Matrix2D<T>,
    /// Attention weights, one `seq_len x seq_len` matrix per (sequence, head).
    probs: Vec<Matrix2D<T>>,
    attn: Matrix2D<T>,
    proj_mask: Option<Matrix2D<T>>,
    ln2: LayerNormCache<T>,
    h2: Matrix2D<T>,
    fc_pre: Matrix2D<T>,
    fc_act: Matrix2D<T>,
    out_mask: Option<Matrix2D<T>>,
}

impl<T: Scalar> BlockCache<T> {
    pub fn attention_weights(&self) -> &[Matrix2D<T>] {
        &self.probs
    }
}

fn check_input<T: Scalar>(x: &Matrix2D<T>, seq_len: usize, w: &BlockWeights<T>, spec: &BlockSpec) -> Result<()> {
    let d = w.embed_dim();
    if x.cols() != d {
        return Err(Error::shape("attention block", format!("input width {} != embed {d}", x.cols())));
    }
    if spec.heads == 0 || d % spec.heads != 0 {
        return Err(Error::shape("attention block", format!("embed {d} not divisible by {} heads", spec.heads)));
    }
    if seq_len == 0 || seq_len > spec.block_size || x.rows() % seq_len != 0 {
        return Err(Error::shape(
            "attention block",
            format!("{} rows with sequence length {seq_len} (block size {})", x.rows(), spec.block_size),
        ));
    }
    Ok(())
}

fn self_attention<T: Scalar>(qkv: &Matrix2D<T>, seq_len: usize, d: usize, spec: &BlockSpec) -> (Matrix2D<T>, Vec<Matrix2D<T>>) {
    let n = qkv.rows();
    let hd = d / spec.heads;
    let scale = T::one() / T::of(hd as f64).sqrt();
    let mut out = Matrix2D::zeros(n, d);
    let mut probs = Vec::with_capacity(n / seq_len * spec.heads);
    for s in 0..n / seq_len {
        let base = s * seq_len;
        for h in 0..spec.heads {
            let (qo, ko, vo) = (h * hd, d + h * hd, 2 * d + h * hd);
            let mut p = Matrix2D::zeros(seq_len, seq_len);
            for i in 0..seq_len {
                let q = &qkv.row(base + i)[qo..qo + hd];
                let visible = if spec.causal { i + 1 } else { seq_len };
                let row = &mut p.row_mut(i)[..visible];
                for (j, v) in row.iter_mut().enumerate() {
                    let k = &qkv.row(base + j)[ko..ko + hd];
                    *v = q.iter().zip(k).fold(T::zero(), |a, (&x, &y)| a + x * y) * scale;
                }
                super::kernels::softmax_in_place(row);
            }
            for i in 0..seq_len {
                for j in 0..seq_len {
                    let pij = p.get(i, j);
                    if pij == T::zero() {
                        continue;
                    }
                    let v = qkv.row(base + j)[vo..vo + hd].to_vec();
                    let o = &mut out.row_mut(base + i)[qo..qo + hd];
                    for (a, b) in o.iter_mut().zip(v) {
                        *a += pij * b;
                    }
                }
            }
            probs.push(p);
        }
    }
    (out, probs)
}

/// Forward pass over stacked sequences of length `seq_len`.
pub fn block_forward<T: Scalar>(
    x: &Matrix2D<T>,
    seq_len: usize,
    w: &BlockWeights<T>,
    spec: &BlockSpec,
    mut dropout: Option<&mut Dropout<'_>>,
) -> Result<(Matrix2D<T>, BlockCache<T>)> {
    check_input(x, seq_len, w, spec)?;
    let d = w.embed_dim();
    let (h1, ln1) = layer_norm(x, &w.ln1_gamma, &w.ln1_beta)?;
    let qkv = linear(&h1, &w.w_qkv, &w.b_qkv)?;
    let (attn, probs) = self_attention(&qkv, seq_len, d, spec);
    let mut proj = linear(&attn, &w.w_proj, &w.b_proj)?;
    let proj_mask = dropout.as_deref_mut().and_then(|dr| dr.mask(proj.rows(), proj.cols()));
    apply_mask(&mut proj, &proj_mask);
    let x2 = x.add(&proj)?;

    let (h2, ln2) = layer_norm(&x2, &w.ln2_gamma, &w.ln2_beta)?;
    let fc_pre = linear(&h2, &w.w_fc, &w.b_fc)?;
    let fc_act = gelu(&fc_pre);
    let mut mlp = linear(&fc_act, &w.w_out, &w.b_out)?;
    let out_mask = dropout.as_deref_mut().and_then(|dr| dr.mask(mlp.rows(), mlp.cols()));
    apply_mask(&mut mlp, &out_mask);
    let y = x2.add(&mlp)?;

    Ok((
        y,
        BlockCache {
            seq_len,
            ln1,
            h1,
            qkv,
            probs,
            attn,
            proj_mask,
            ln2,
            h2,
            fc_pre,
            fc_act,
            out_mask,
        },
    ))
}

/// Backward pass; returns the input gradient and the weight gradients.
pub fn block_backward<T: Scalar>(
    dy: &Matrix2D<T>,
    cache: &BlockCache<T>,
    w: &BlockWeights<T>,
    spec: &BlockSpec,
) -> Result<(Matrix2D<T>, BlockWeights<T>)> {
    let d = w.embed_dim();
    let mut g = BlockWeights::zeros(d);

    // MLP branch
    let mut dmlp = dy.clone();
    apply_mask(&mut dmlp, &cache.out_mask);
    let (dact, dw_out, db_out) = linear_backward(&dmlp, &cache.fc_act, &w.w_out)?;
    g.w_out = dw_out;
    g.b_out = db_out;
    let dfc = gelu_backward(&dact, &cache.fc_pre);
    let (dh2, dw_fc, db_fc) = linear_backward(&dfc, &cache.h2, &w.w_fc)?;
    g.w_fc = dw_fc;
    g.b_fc = db_fc;
    let (dx2_ln, dg2, db2) = layer_norm_backward(&dh2, &cache.ln2, &w.ln2_gamma);
    g.ln2_gamma = dg2;
    g.ln2_beta = db2;
    let dx2 = dy.add(&dx2_ln)?;

    // attention branch
    let mut dproj = dx2.clone();
    apply_mask(&mut dproj, &cache.proj_mask);
    let (dattn, dw_proj, db_proj) = linear_backward(&dproj, &cache.attn, &w.w_proj)?;
    g.w_proj = dw_proj;
    g.b_proj = db_proj;
    let dqkv = self_attention_backward(&dattn, cache, d, spec);
    let (dh1, dw_qkv, db_qkv) = linear_backward(&dqkv, &cache.h1, &w.w_qkv)?;
    g.w_qkv = dw_qkv;
    g.b_qkv = db_qkv;
    let (dx_ln, dg1, db1) = layer_norm_backward(&dh1, &cache.ln1, &w.ln1_gamma);
    g.ln1_gamma = dg1;
    g.ln1_beta = db1;
    let dx = dx2.add(&dx_ln)?;
    Ok((dx, g))
}

fn self_attention_backward<T: Scalar>(
    dattn: &Matrix2D<T>,
    cache: &BlockCache<T>,
    d: usize,
    spec: &BlockSpec,
) -> Matrix2D<T> {
    let seq_len = cache.seq_len;
    let qkv = &cache.qkv;
    let n = qkv.rows();
    let hd = d / spec.heads;
    let scale = T::one() / T::of(hd as f64).sqrt();
    let mut dqkv = Matrix2D::zeros(n, 3 * d);
    let dot = |a: &[T], b: &[T]| a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y);
    for s in 0..n / seq_len {
        let base = s * seq_len;
        for h in 0..spec.heads {
            let p = &cache.probs[s * spec.heads + h];
            let (qo, ko, vo) = (h * hd, d + h * hd, 2 * d + h * hd);
            let mut dscores = Matrix2D::zeros(seq_len, seq_len);
            for i in 0..seq_len {
                let dout = &dattn.row(base + i)[qo..qo + hd];
                let mut dp = vec![T::zero(); seq_len];
                for j in 0..seq_len {
                    let v = &qkv.row(base + j)[vo..vo + hd];
                    dp[j] = dot(dout, v);
                    let pij = p.get(i, j);
                    let dv = &mut dqkv.row_mut(base + j)[vo..vo + hd];
                    for (a, &b) in dv.iter_mut().zip(dout) {
                        *a += pij * b;
                    }
                }
                let weighted = (0..seq_len).fold(T::zero(), |a, j| a + p.get(i, j) * dp[j]);
                for j in 0..seq_len {
                    dscores.set(i, j, p.get(i, j) * (dp[j] - weighted) * scale);
                }
            }
            for i in 0..seq_len {
                for j in 0..seq_len {
                    let ds = dscores.get(i, j);
                    if ds == T::zero() {
                        continue;
                    }
                    let k = qkv.row(base + j)[ko..ko + hd].to_vec();
                    let q = qkv.row(base + i)[qo..qo + hd].to_vec();
                    let dq = &mut dqkv.row_mut(base + i)[qo..qo + hd];
                    for (a, b) in dq.iter_mut().zip(&k) {
                        *a += ds * *b;
                    }
                    let dk = &mut dqkv.row_mut(base + j)[ko..ko + hd];
                    for (a, b) in dk.iter_mut().zip(&q) {
                        *a += ds * *b;
                    }
                }
            }
        }
    }
    dqkv
}

/// Output of one block applied to a single sequence.
#[derive(Debug, Clone)]
pub struct BlockOutput<T> {
    pub output: Matrix2D<T>,
    /// One `T x T` attention matrix per head.
    pub attention: Vec<Matrix2D<T>>,
}

/// Applies one block to a single `T x d` sequence, without dropout.
pub fn attention_block_forward<T: Scalar>(
    x: &Matrix2D<T>,
    w: &BlockWeights<T>,
    spec: &BlockSpec,
) -> Result<BlockOutput<T>> {
    let (output, cache) = block_forward(x, x.rows(), w, spec, None)?;
    Ok(BlockOutput {
        output,
        attention: cache.probs,
    })
}
