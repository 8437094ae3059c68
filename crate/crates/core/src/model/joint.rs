//! Cross-modal attention over image regions and the self-attention pooling
//! that fuses the attended features.

use crate::error::{EtmaError, Result};
use crate::nn::{Linear, MASKED_LOGIT};
use crate::tensor::{ParamStore, Rng, Tape, Tensor, Var};

/// Scores each image region against the pooled text vector:
/// `vs_r = (A·I_r) ⊙ (B·t)`, `s_r = tanh(wᵀ vs_r + b)`, `α = softmax(s)`,
/// and returns the re-weighted regions `α_r · I_r`.
#[derive(Debug, Clone)]
pub struct VisualSemanticAttention {
    pub image_proj: Linear,
    pub text_proj: Linear,
    pub score: Linear,
    pub dim: usize,
    pub joint_dim: usize,
}

impl VisualSemanticAttention {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize, joint_dim: usize, rng: &mut Rng) -> Self {
        VisualSemanticAttention {
            image_proj: Linear::new(store, &format!("{name}.image_proj"), dim, joint_dim, false, rng),
            text_proj: Linear::new(store, &format!("{name}.text_proj"), dim, joint_dim, false, rng),
            score: Linear::new(store, &format!("{name}.score"), joint_dim, 1, true, rng),
            dim,
            joint_dim,
        }
    }

    /// `regions` is `[B, R, d]`, `text` is `[B, d]`. Returns the attended
    /// regions `[B, R, d]` and the weights `[B, R]`.
    pub fn forward(&self, tape: &mut Tape<'_>, regions: Var, text: Var) -> Result<(Var, Var)> {
        let rs = tape.shape(regions).to_vec();
        let ts = tape.shape(text).to_vec();
        if rs.len() != 3 || rs[2] != self.dim || ts != [rs[0], self.dim] {
            return Err(EtmaError::dim("vs_attend", &rs, &ts));
        }
        let (b, r) = (rs[0], rs[1]);
        let img = self.image_proj.forward(tape, regions)?;
        let txt = self.text_proj.forward(tape, text)?;
        let txt = tape.reshape(txt, &[b, 1, self.joint_dim])?;
        let txt = tape.expand(txt, &[b, r, self.joint_dim])?;
        let vs = tape.mul(img, txt)?;
        let scores = self.score.forward(tape, vs)?;
        let scores = tape.tanh(scores);
        let scores = tape.reshape(scores, &[b, r])?;
        let alpha = tape.softmax(scores, 1)?;
        let attended = weight_rows(tape, regions, alpha)?;
        Ok((attended, alpha))
    }
}

/// `x[b, k, :] · w[b, k]`.
fn weight_rows(tape: &mut Tape<'_>, x: Var, w: Var) -> Result<Var> {
    let s = tape.shape(x).to_vec();
    let w = tape.reshape(w, &[s[0], s[1], 1])?;
    let w = tape.expand(w, &s)?;
    tape.mul(x, w)
}

/// Softmax pooling over a feature sequence:
/// `s_k = tanh(wᵀ(W·F_k) + b)`, `P = softmax(s)`, `M = Σ_k P_k F_k`.
#[derive(Debug, Clone)]
pub struct SelfAttentionFusion {
    pub proj: Linear,
    pub score: Linear,
    pub dim: usize,
}

impl SelfAttentionFusion {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize, rng: &mut Rng) -> Self {
        SelfAttentionFusion {
            proj: Linear::new(store, &format!("{name}.proj"), dim, dim, false, rng),
            score: Linear::new(store, &format!("{name}.score"), dim, 1, true, rng),
            dim,
        }
    }

    /// `features` is `[B, K, d]`; masked-out positions get zero weight.
    /// Returns the fused vectors `[B, d]` and the weights `[B, K]`.
    pub fn forward(&self, tape: &mut Tape<'_>, features: Var, mask: Option<&[bool]>) -> Result<(Var, Var)> {
        let s = tape.shape(features).to_vec();
        if s.len() != 3 || s[2] != self.dim {
            return Err(EtmaError::dim("self_attend", &s, &[self.dim]));
        }
        let (b, k) = (s[0], s[1]);
        if k == 0 {
            return Err(EtmaError::Contract("self_attend over an empty sequence".into()));
        }
        if let Some(m) = mask {
            if m.len() != b * k {
                return Err(EtmaError::dim("self_attend mask", &[b, k], &[m.len()]));
            }
            if m.chunks(k).any(|row| !row.iter().any(|&x| x)) {
                return Err(EtmaError::Contract("self_attend over an empty sequence".into()));
            }
        }
        let h = self.proj.forward(tape, features)?;
        let scores = self.score.forward(tape, h)?;
        let scores = tape.tanh(scores);
        let mut scores = tape.reshape(scores, &[b, k])?;
        if let Some(m) = mask {
            let bias: Vec<f64> = m.iter().map(|&x| if x { 0.0 } else { MASKED_LOGIT }).collect();
            let bias = tape.constant(Tensor::new(&[b, k], bias)?);
            scores = tape.add(scores, bias)?;
        }
        let weights = tape.softmax(scores, 1)?;
        let w3 = tape.reshape(weights, &[b, 1, k])?;
        let fused = tape.batch_matmul(w3, features)?;
        let fused = tape.reshape(fused, &[b, self.dim])?;
        Ok((fused, weights))
    }
}

/// Linear layer to two logits followed by softmax.
#[derive(Debug, Clone)]
pub struct ClassifierHead {
    pub linear: Linear,
}

impl ClassifierHead {
    pub const CLASSES: usize = 2;

    pub fn new(store: &mut ParamStore, name: &str, dim: usize, rng: &mut Rng) -> Self {
        ClassifierHead {
            linear: Linear::new(store, name, dim, Self::CLASSES, true, rng),
        }
    }

    /// Returns `(logits, probabilities)`, each `[B, 2]`.
    pub fn forward(&self, tape: &mut Tape<'_>, fused: Var) -> Result<(Var, Var)> {
        let logits = self.linear.forward(tape, fused)?;
        let probs = tape.softmax(logits, 1)?;
        Ok((logits, probs))
    }
}
