//! Transformer building blocks: affine layers, layer normalization,
//! inverted dropout, multi-head self-attention and the pre-norm encoder block.

use crate::error::{EtmaError, Result};
use crate::tensor::{ParamId, ParamStore, Rng, Tape, Tensor, Var};

/// Standard deviation of the truncated-normal weight initializer.
pub const INIT_STD: f64 = 0.02;

/// Additive logit for masked keys; `exp` of it underflows to exactly zero.
pub const MASKED_LOGIT: f64 = -1e30;

/// Train/eval switch plus the random source used by dropout.
#[derive(Debug, Clone)]
pub struct Context {
    train: bool,
    rng: Rng,
}

impl Context {
    pub fn eval() -> Self {
        Context {
            train: false,
            rng: Rng::new(0),
        }
    }

    pub fn train(rng: Rng) -> Self {
        Context { train: true, rng }
    }

    pub fn is_train(&self) -> bool {
        self.train
    }

    pub fn rng(&mut self) -> &mut Rng {
        &mut self.rng
    }
}

/// A batch of token sequences: `values` has shape `[batch, len, dim]`, and
/// `mask` (row-major `batch × len`) marks real tokens when present.
#[derive(Debug, Clone)]
pub struct TokenSequence {
    pub values: Var,
    pub mask: Option<Vec<bool>>,
}

impl TokenSequence {
    pub fn new(values: Var, mask: Option<Vec<bool>>) -> Self {
        TokenSequence { values, mask }
    }

    /// `(batch, len, dim)`.
    pub fn dims(&self, tape: &Tape<'_>) -> (usize, usize, usize) {
        let s = tape.shape(self.values);
        (s[0], s[1], s[2])
    }
}

#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub d_in: usize,
    pub d_out: usize,
}

impl Linear {
    /// The weight is stored `d_in × d_out` so that the layer computes `x · W + b`.
    pub fn new(store: &mut ParamStore, name: &str, d_in: usize, d_out: usize, bias: bool, rng: &mut Rng) -> Self {
        Self::with_std(store, name, d_in, d_out, bias, INIT_STD, rng)
    }

    /// Like [`Linear::new`] with weights drawn from a truncated normal of
    /// standard deviation `std`.
    pub fn with_std(
        store: &mut ParamStore,
        name: &str,
        d_in: usize,
        d_out: usize,
        bias: bool,
        std: f64,
        rng: &mut Rng,
    ) -> Self {
        let weight = store.add(format!("{name}.w"), Tensor::trunc_normal(&[d_in, d_out], std, rng));
        let bias = bias.then(|| store.add(format!("{name}.b"), Tensor::zeros(&[d_out])));
        Linear {
            weight,
            bias,
            d_in,
            d_out,
        }
    }

    /// Applies the layer to the last axis of `x`.
    pub fn forward(&self, tape: &mut Tape<'_>, x: Var) -> Result<Var> {
        let shape = tape.shape(x).to_vec();
        if shape.last() != Some(&self.d_in) {
            return Err(EtmaError::dim("linear", &shape, &[self.d_in, self.d_out]));
        }
        let rows = shape.iter().product::<usize>() / self.d_in;
        let flat = if shape.len() == 2 {
            x
        } else {
            tape.reshape(x, &[rows, self.d_in])?
        };
        let w = tape.param(self.weight);
        let mut y = tape.matmul(flat, w)?;
        if let Some(b) = self.bias {
            let b = tape.param(b);
            y = tape.add(y, b)?;
        }
        if shape.len() == 2 {
            return Ok(y);
        }
        let mut out_shape = shape;
        *out_shape.last_mut().unwrap() = self.d_out;
        tape.reshape(y, &out_shape)
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub eps: f64,
    pub dim: usize,
}

impl LayerNorm {
    pub const DEFAULT_EPS: f64 = 1e-9;

    pub fn new(store: &mut ParamStore, name: &str, dim: usize) -> Self {
        LayerNorm {
            gamma: store.add(format!("{name}.gamma"), Tensor::ones(&[dim])),
            beta: store.add(format!("{name}.beta"), Tensor::zeros(&[dim])),
            eps: Self::DEFAULT_EPS,
            dim,
        }
    }

    pub fn forward(&self, tape: &mut Tape<'_>, x: Var) -> Result<Var> {
        let shape = tape.shape(x);
        if shape.last() != Some(&self.dim) {
            return Err(EtmaError::dim("layer_norm", shape, &[self.dim]));
        }
        let n = tape.normalize(x, self.eps);
        let g = tape.param(self.gamma);
        let b = tape.param(self.beta);
        let y = tape.mul(n, g)?;
        tape.add(y, b)
    }
}

/// Inverted dropout: survivors are scaled by `1 / (1 − p)`; eval mode is the identity.
#[derive(Debug, Clone, Copy)]
pub struct Dropout {
    pub rate: f64,
}

impl Dropout {
    pub fn new(rate: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&rate) {
            return Err(EtmaError::Config(format!("dropout rate {rate} not in [0, 1)")));
        }
        Ok(Dropout { rate })
    }

    pub fn forward(&self, tape: &mut Tape<'_>, x: Var, ctx: &mut Context) -> Result<Var> {
        if !ctx.is_train() || self.rate == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 / (1.0 - self.rate);
        let shape = tape.shape(x).to_vec();
        let mut mask = Tensor::zeros(&shape);
        for m in mask.data_mut() {
            if !ctx.rng().bernoulli(self.rate) {
                *m = keep;
            }
        }
        let m = tape.constant(mask);
        tape.mul(x, m)
    }
}

/// Multi-head scaled dot-product self-attention.
#[derive(Debug, Clone)]
pub struct MultiHeadSelfAttention {
    pub heads: usize,
    pub dim: usize,
    pub wq: Linear,
    pub wk: Linear,
    pub wv: Linear,
    pub wo: Linear,
}

impl MultiHeadSelfAttention {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        dim: usize,
        heads: usize,
        qkv_bias: bool,
        rng: &mut Rng,
    ) -> Result<Self> {
        if heads == 0 || !dim.is_multiple_of(heads) {
            return Err(EtmaError::Config(format!(
                "model dim {dim} is not divisible by {heads} heads"
            )));
        }
        Ok(MultiHeadSelfAttention {
            heads,
            dim,
            wq: Linear::new(store, &format!("{name}.wq"), dim, dim, qkv_bias, rng),
            // a key bias shifts every logit of a query equally, so softmax ignores it
            wk: Linear::new(store, &format!("{name}.wk"), dim, dim, false, rng),
            wv: Linear::new(store, &format!("{name}.wv"), dim, dim, qkv_bias, rng),
            wo: Linear::new(store, &format!("{name}.wo"), dim, dim, true, rng),
        })
    }

    pub fn head_dim(&self) -> usize {
        self.dim / self.heads
    }

    /// `[B, n, d]` → `[B·h, n, d_h]`.
    fn split_heads(&self, tape: &mut Tape<'_>, x: Var, b: usize, n: usize) -> Result<Var> {
        let dh = self.head_dim();
        let x = tape.reshape(x, &[b, n, self.heads, dh])?;
        let x = tape.permute(x, &[0, 2, 1, 3])?;
        tape.reshape(x, &[b * self.heads, n, dh])
    }

    /// Returns the projected output `[B, n, d]` and the attention weights `[B, h, n, n]`.
    pub fn forward(&self, tape: &mut Tape<'_>, seq: &TokenSequence) -> Result<(Var, Var)> {
        let (b, n, d) = seq.dims(tape);
        if d != self.dim {
            return Err(EtmaError::dim("msa", tape.shape(seq.values), &[self.dim]));
        }
        if let Some(mask) = &seq.mask {
            if mask.len() != b * n {
                return Err(EtmaError::dim("msa mask", &[b, n], &[mask.len()]));
            }
        }
        let h = self.heads;
        let q = self.wq.forward(tape, seq.values)?;
        let k = self.wk.forward(tape, seq.values)?;
        let v = self.wv.forward(tape, seq.values)?;
        let q = self.split_heads(tape, q, b, n)?;
        let k = self.split_heads(tape, k, b, n)?;
        let v = self.split_heads(tape, v, b, n)?;

        let kt = tape.transpose(k)?;
        let logits = tape.batch_matmul(q, kt)?;
        let mut logits = tape.scale(logits, 1.0 / (self.head_dim() as f64).sqrt());
        if let Some(mask) = &seq.mask {
            let bias = key_mask_bias(mask, b, h, n);
            let bias = tape.constant(bias);
            logits = tape.add(logits, bias)?;
        }
        let weights = tape.softmax(logits, 2)?;
        let ctx = tape.batch_matmul(weights, v)?;
        let ctx = tape.reshape(ctx, &[b, h, n, self.head_dim()])?;
        let ctx = tape.permute(ctx, &[0, 2, 1, 3])?;
        let ctx = tape.reshape(ctx, &[b, n, d])?;
        let out = self.wo.forward(tape, ctx)?;
        let weights = tape.reshape(weights, &[b, h, n, n])?;
        Ok((out, weights))
    }
}

/// `[B·h, n, n]` tensor holding [`MASKED_LOGIT`] in every column whose key is padding.
fn key_mask_bias(mask: &[bool], b: usize, h: usize, n: usize) -> Tensor {
    let mut bias = Tensor::zeros(&[b * h, n, n]);
    let data = bias.data_mut();
    for bi in 0..b {
        let keys = &mask[bi * n..(bi + 1) * n];
        for hi in 0..h {
            let base = (bi * h + hi) * n * n;
            for row in 0..n {
                for (col, &real) in keys.iter().enumerate() {
                    if !real {
                        data[base + row * n + col] = MASKED_LOGIT;
                    }
                }
            }
        }
    }
    bias
}

/// Two affine layers with GELU after the first.
#[derive(Debug, Clone)]
pub struct MlpBlock {
    pub fc1: Linear,
    pub fc2: Linear,
}

impl MlpBlock {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize, hidden: usize, rng: &mut Rng) -> Self {
        MlpBlock {
            fc1: Linear::new(store, &format!("{name}.fc1"), dim, hidden, true, rng),
            fc2: Linear::new(store, &format!("{name}.fc2"), hidden, dim, true, rng),
        }
    }

    pub fn forward(&self, tape: &mut Tape<'_>, x: Var) -> Result<Var> {
        let h = self.fc1.forward(tape, x)?;
        let h = tape.gelu(h);
        self.fc2.forward(tape, h)
    }
}

/// Pre-norm transformer block:
/// `ż = MSA(Norm(z)) + z`, then `z' = MLP(Norm(ż)) + ż`.
#[derive(Debug, Clone)]
pub struct EncoderBlock {
    pub norm1: LayerNorm,
    pub msa: MultiHeadSelfAttention,
    pub norm2: LayerNorm,
    pub mlp: MlpBlock,
    pub dropout: Dropout,
}

#[derive(Debug, Clone, Copy)]
pub struct BlockConfig {
    pub dim: usize,
    pub heads: usize,
    pub mlp_ratio: usize,
    pub dropout: f64,
    pub qkv_bias: bool,
}

impl EncoderBlock {
    pub fn new(store: &mut ParamStore, name: &str, cfg: BlockConfig, rng: &mut Rng) -> Result<Self> {
        Ok(EncoderBlock {
            norm1: LayerNorm::new(store, &format!("{name}.norm1"), cfg.dim),
            msa: MultiHeadSelfAttention::new(store, &format!("{name}.msa"), cfg.dim, cfg.heads, cfg.qkv_bias, rng)?,
            norm2: LayerNorm::new(store, &format!("{name}.norm2"), cfg.dim),
            mlp: MlpBlock::new(store, &format!("{name}.mlp"), cfg.dim, cfg.dim * cfg.mlp_ratio, rng),
            dropout: Dropout::new(cfg.dropout)?,
        })
    }

    /// Shape-preserving; also returns this block's attention weights.
    pub fn forward(&self, tape: &mut Tape<'_>, seq: &TokenSequence, ctx: &mut Context) -> Result<(TokenSequence, Var)> {
        let normed = self.norm1.forward(tape, seq.values)?;
        let (attn, weights) = self.msa.forward(tape, &TokenSequence::new(normed, seq.mask.clone()))?;
        let attn = self.dropout.forward(tape, attn, ctx)?;
        let mid = tape.add(attn, seq.values)?;

        let normed = self.norm2.forward(tape, mid)?;
        let mlp = self.mlp.forward(tape, normed)?;
        let mlp = self.dropout.forward(tape, mlp, ctx)?;
        let out = tape.add(mlp, mid)?;
        Ok((TokenSequence::new(out, seq.mask.clone()), weights))
    }
}

#[cfg(test)]
mod tests;
