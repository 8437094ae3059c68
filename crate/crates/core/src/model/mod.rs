//! The full multimodal classifier and its ablated variants.
//!
//! Images go through a patch-based visual encoder, text through a token
//! encoder. The pooled text vector scores every image region, the
//! re-weighted regions are pooled by a learned softmax, and a linear head
//! produces `[P(real), P(fake)]`.

mod encoders;
mod joint;
mod variant;


use serde::{Deserialize, Serialize};

pub use encoders::{Encoded, TextEncoder, VisualEncoder};
pub use joint::{ClassifierHead, SelfAttentionFusion, VisualSemanticAttention};
pub use variant::AblationVariant;

use crate::error::{EtmaError, Result};
use crate::nn::{BlockConfig, Context};
use crate::tensor::{ParamStore, Rng, Tape, Tensor, Var};
use encoders::{first_token, masked_mean};

/// Architecture hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub image_size: (usize, usize, usize),
    pub patch: usize,
    pub dim: usize,
    pub heads: usize,
    pub visual_layers: usize,
    pub text_layers: usize,
    pub mlp_ratio: usize,
    pub joint_dim: usize,
    pub vocab_size: usize,
    pub n_max: usize,
    pub dropout: f64,
    pub qkv_bias: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            image_size: (32, 32, 3),
            patch: 8,
            dim: 64,
            heads: 4,
            visual_layers: 2,
            text_layers: 2,
            mlp_ratio: 4,
            joint_dim: 64,
            vocab_size: 64,
            n_max: 32,
            dropout: 0.3,
            qkv_bias: true,
        }
    }
}

impl ModelConfig {
    /// The tiny configuration used by gradient checks.
    pub fn toy(vocab_size: usize) -> Self {
        ModelConfig {
            image_size: (8, 8, 3),
            patch: 4,
            dim: 8,
            heads: 2,
            visual_layers: 1,
            text_layers: 1,
            mlp_ratio: 2,
            joint_dim: 8,
            vocab_size,
            n_max: 6,
            dropout: 0.0,
            qkv_bias: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (h, w, c) = self.image_size;
        let checks = [
            (h == 0 || w == 0 || c == 0, "image size must be nonzero".to_string()),
            (
                self.patch == 0 || h % self.patch != 0 || w % self.patch != 0,
                format!("image {h}x{w} is not divisible into {p}x{p} patches", p = self.patch),
            ),
            (
                self.dim == 0 || self.joint_dim == 0,
                "dimensions must be nonzero".into(),
            ),
            (
                self.heads == 0 || !self.dim.is_multiple_of(self.heads),
                format!("dim {} is not divisible by {} heads", self.dim, self.heads),
            ),
            (self.mlp_ratio == 0, "mlp_ratio must be at least 1".into()),
            (self.n_max < 2, "n_max must be at least 2".into()),
            (
                self.vocab_size <= crate::embed::RESERVED,
                format!("vocab_size {} leaves no room for words", self.vocab_size),
            ),
            (
                !(0.0..1.0).contains(&self.dropout),
                format!("dropout {} outside [0, 1)", self.dropout),
            ),
        ];
        match checks.into_iter().find(|(bad, _)| *bad) {
            Some((_, msg)) => Err(EtmaError::Config(msg)),
            None => Ok(()),
        }
    }

    pub fn num_regions(&self) -> usize {
        (self.image_size.0 / self.patch) * (self.image_size.1 / self.patch)
    }

    fn block(&self) -> BlockConfig {
        BlockConfig {
            dim: self.dim,
            heads: self.heads,
            mlp_ratio: self.mlp_ratio,
            dropout: self.dropout,
            qkv_bias: self.qkv_bias,
        }
    }
}

/// A minibatch of preprocessed inputs. `ids` and `mask` are row-major
/// `len × n_max`; `labels` may be empty for unlabeled inference.
#[derive(Debug, Clone, Default)]
pub struct Batch {
    pub images: Vec<Tensor>,
    pub ids: Vec<usize>,
    pub mask: Vec<bool>,
    pub labels: Vec<usize>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }
}

/// Tape handles produced by the part of the network before the head.
#[derive(Debug, Clone)]
pub struct Features {
    /// `[B, d]`
    pub fused: Var,
    /// Region weights `[B, N_p]` when the variant has visual-semantic attention.
    pub vs_weights: Option<Var>,
    /// Fusion weights `[B, K]` when the variant has self-attention fusion.
    pub fusion_weights: Option<Var>,
    pub visual_attention: Vec<Var>,
    pub text_attention: Vec<Var>,
    /// Text embedding output `[B, n_max, d]`, before any encoder block.
    pub text_embeddings: Option<Var>,
}

#[derive(Default)]
struct Partial {
    vs_weights: Option<Var>,
    fusion_weights: Option<Var>,
    visual_attention: Vec<Var>,
    text_attention: Vec<Var>,
    text_embeddings: Option<Var>,
}

#[derive(Debug, Clone)]
pub struct ForwardOutput {
    pub features: Features,
    pub logits: Var,
    /// `[B, 2]`, columns `(real, fake)`.
    pub probs: Var,
}

/// Concrete eval-mode results.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub probs: Tensor,
    pub vs_weights: Option<Tensor>,
    pub fusion_weights: Option<Tensor>,
}

impl Prediction {
    /// Probability of the fake class for each sample.
    pub fn fake_scores(&self) -> Vec<f64> {
        self.probs.data().chunks(2).map(|p| p[1]).collect()
    }

    /// Argmax labels (`0` real, `1` fake); ties go to real.
    pub fn labels(&self) -> Vec<usize> {
        self.probs.data().chunks(2).map(|p| usize::from(p[1] > p[0])).collect()
    }
}

#[derive(Debug, Clone)]
pub struct EtmaModel {
    pub config: ModelConfig,
    pub variant: AblationVariant,
    pub visual: Option<VisualEncoder>,
    pub text: Option<TextEncoder>,
    pub vs_attention: Option<VisualSemanticAttention>,
    pub fusion: Option<SelfAttentionFusion>,
    pub head: ClassifierHead,
    params: ParamStore,
}

impl EtmaModel {
    /// Builds `variant` with freshly initialized parameters drawn from `rng`.
    pub fn build(config: &ModelConfig, variant: AblationVariant, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new();
        let block = config.block();
        let visual = if variant.uses_image() {
            let layers = if variant.has_visual_blocks() {
                config.visual_layers
            } else {
                0
            };
            Some(VisualEncoder::new(
                &mut store,
                "visual",
                config.image_size,
                config.patch,
                block,
                layers,
                rng,
            )?)
        } else {
            None
        };
        let text = if variant.uses_text() {
            let layers = if variant.has_text_blocks() {
                config.text_layers
            } else {
                0
            };
            Some(TextEncoder::new(
                &mut store,
                "text",
                config.vocab_size,
                config.n_max,
                block,
                layers,
                rng,
            )?)
        } else {
            None
        };
        let vs_attention = variant
            .has_vs_attention()
            .then(|| VisualSemanticAttention::new(&mut store, "vs", config.dim, config.joint_dim, rng));
        let fusion = variant
            .has_fusion()
            .then(|| SelfAttentionFusion::new(&mut store, "fusion", config.dim, rng));
        let head = ClassifierHead::new(&mut store, "head", config.dim, rng);
        Ok(EtmaModel {
            config: config.clone(),
            variant,
            visual,
            text,
            vs_attention,
            fusion,
            head,
            params: store,
        })
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    /// Number of scalar parameters.
    pub fn param_count(&self) -> usize {
        self.params.count()
    }

    fn check_batch(&self, batch: &Batch) -> Result<()> {
        let b = batch.len();
        if b == 0 {
            return Err(EtmaError::Contract("empty batch".into()));
        }
        let n = self.config.n_max;
        if batch.ids.len() != b * n || batch.mask.len() != b * n {
            return Err(EtmaError::Config(format!(
                "text batch has {} ids for {b} samples, expected n_max = {n} per sample",
                batch.ids.len()
            )));
        }
        let (h, w, c) = self.config.image_size;
        if let Some(img) = batch.images.iter().find(|i| i.shape() != [h, w, c]) {
            return Err(EtmaError::Config(format!(
                "image shape {:?} does not match the configured {h}x{w}x{c}",
                img.shape()
            )));
        }
        if let Some(&id) = batch.ids.iter().find(|&&id| id >= self.config.vocab_size) {
            return Err(EtmaError::Index {
                what: "token id",
                index: id,
                bound: self.config.vocab_size,
            });
        }
        Ok(())
    }

    /// Everything up to and excluding the classifier head.
    pub fn features(&self, tape: &mut Tape<'_>, batch: &Batch, ctx: &mut Context) -> Result<Features> {
        self.check_batch(batch)?;
        let b = batch.len();
        let mut out = Partial::default();

        let mut visual = None;
        if let Some(enc) = &self.visual {
            let images: Vec<&Tensor> = batch.images.iter().collect();
            let encoded = enc.forward(tape, &images, ctx)?;
            out.visual_attention = encoded.attention.clone();
            visual = Some((enc, encoded));
        }
        let mut text = None;
        if let Some(enc) = &self.text {
            let (encoded, embeddings) = enc.forward(tape, &batch.ids, &batch.mask, b, ctx)?;
            out.text_attention = encoded.attention.clone();
            out.text_embeddings = Some(embeddings);
            text = Some(encoded);
        }

        let fused = match self.variant {
            AblationVariant::TextOnly => {
                let t = text.as_ref().expect("text encoder");
                self.fuse(tape, t.tokens.values, t.tokens.mask.as_deref(), &mut out)?
            }
            AblationVariant::ImageOnly => {
                let (_, v) = visual.as_ref().expect("visual encoder");
                self.fuse(tape, v.tokens.values, None, &mut out)?
            }
            AblationVariant::NoVsAttn => {
                let (_, v) = visual.as_ref().expect("visual encoder");
                let t = text.as_ref().expect("text encoder");
                let gv = first_token(tape, v.tokens.values)?;
                let gt = first_token(tape, t.tokens.values)?;
                let d = self.config.dim;
                let gv = tape.reshape(gv, &[b, 1, d])?;
                let gt = tape.reshape(gt, &[b, 1, d])?;
                let pair = tape.concat(&[gv, gt], 1)?;
                self.fuse(tape, pair, None, &mut out)?
            }
            _ => {
                let (enc, v) = visual.as_ref().expect("visual encoder");
                let t = text.as_ref().expect("text encoder");
                let regions = enc.regions(tape, v)?;
                let pooled = if self.variant.has_text_blocks() {
                    first_token(tape, t.tokens.values)?
                } else {
                    masked_mean(tape, t.tokens.values, t.tokens.mask.as_deref())?
                };
                let vs = self.vs_attention.as_ref().expect("visual-semantic attention");
                let (attended, alpha) = vs.forward(tape, regions, pooled)?;
                out.vs_weights = Some(alpha);
                if self.fusion.is_some() {
                    self.fuse(tape, attended, None, &mut out)?
                } else {
                    tape.sum(attended, 1)?
                }
            }
        };
        Ok(Features {
            fused,
            vs_weights: out.vs_weights,
            fusion_weights: out.fusion_weights,
            visual_attention: out.visual_attention,
            text_attention: out.text_attention,
            text_embeddings: out.text_embeddings,
        })
    }

    fn fuse(&self, tape: &mut Tape<'_>, seq: Var, mask: Option<&[bool]>, out: &mut Partial) -> Result<Var> {
        let fusion = self.fusion.as_ref().expect("self-attention fusion");
        let (fused, weights) = fusion.forward(tape, seq, mask)?;
        out.fusion_weights = Some(weights);
        Ok(fused)
    }

    /// Full forward pass recorded on `tape`.
    pub fn forward(&self, tape: &mut Tape<'_>, batch: &Batch, ctx: &mut Context) -> Result<ForwardOutput> {
        let features = self.features(tape, batch, ctx)?;
        let (logits, probs) = self.head.forward(tape, features.fused)?;
        Ok(ForwardOutput {
            features,
            logits,
            probs,
        })
    }

    /// Eval-mode forward returning concrete tensors.
    pub fn predict(&self, batch: &Batch) -> Result<Prediction> {
        let mut tape = Tape::with_params(&self.params);
        let out = self.forward(&mut tape, batch, &mut Context::eval())?;
        let grab = |v: Option<Var>| v.map(|v| tape.value(v).clone());
        Ok(Prediction {
            probs: tape.value(out.probs).clone(),
            vs_weights: grab(out.features.vs_weights),
            fusion_weights: grab(out.features.fusion_weights),
        })
    }

    /// Eval-mode fused vectors `[B, d]`.
    pub fn fused_features(&self, batch: &Batch) -> Result<Tensor> {
        let mut tape = Tape::with_params(&self.params);
        let f = self.features(&mut tape, batch, &mut Context::eval())?;
        Ok(tape.value(f.fused).clone())
    }
}
