use crate::embed::{PatchEmbedder, TextEmbedder};
use crate::error::Result;
use crate::nn::{BlockConfig, Context, Dropout, EncoderBlock, LayerNorm, TokenSequence};
use crate::tensor::{ParamStore, Rng, Tape, Tensor, Var};

/// Output of an encoder stack: the final token sequence plus the attention
/// weights of each block.
#[derive(Debug, Clone)]
pub struct Encoded {
    pub tokens: TokenSequence,
    pub attention: Vec<Var>,
}

/// Patch embedding, then `L` encoder blocks and a final norm. Position 0 is
/// the class token, positions `1..=N_p` are the image regions.
///
/// With zero blocks the embedder is built without a class token and no
/// final norm is applied, leaving the raw patch embeddings.
#[derive(Debug, Clone)]
pub struct VisualEncoder {
    pub embed: PatchEmbedder,
    pub blocks: Vec<EncoderBlock>,
    pub norm: Option<LayerNorm>,
    /// Applied to the embedding sums.
    pub dropout: Dropout,
}

impl VisualEncoder {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        image_size: (usize, usize, usize),
        patch: usize,
        block: BlockConfig,
        layers: usize,
        rng: &mut Rng,
    ) -> Result<Self> {
        let embed = PatchEmbedder::new(
            store,
            &format!("{name}.embed"),
            image_size,
            patch,
            block.dim,
            layers > 0,
            rng,
        )?;
        let blocks = (0..layers)
            .map(|i| EncoderBlock::new(store, &format!("{name}.block{i}"), block, rng))
            .collect::<Result<Vec<_>>>()?;
        let norm = (layers > 0).then(|| LayerNorm::new(store, &format!("{name}.norm"), block.dim));
        Ok(VisualEncoder {
            embed,
            blocks,
            norm,
            dropout: Dropout::new(block.dropout)?,
        })
    }

    pub fn has_class_token(&self) -> bool {
        self.embed.class_token.is_some()
    }

    pub fn forward(&self, tape: &mut Tape<'_>, images: &[&Tensor], ctx: &mut Context) -> Result<Encoded> {
        let mut tokens = self.embed.forward(tape, images)?;
        tokens.values = self.dropout.forward(tape, tokens.values, ctx)?;
        run_stack(tape, tokens, &self.blocks, self.norm.as_ref(), ctx)
    }

    /// Region features `[B, N_p, d]` of an encoded sequence.
    pub fn regions(&self, tape: &mut Tape<'_>, encoded: &Encoded) -> Result<Var> {
        let start = usize::from(self.has_class_token());
        tape.slice(encoded.tokens.values, 1, start, self.embed.num_patches())
    }
}

/// Token, segment and position embeddings, then `L_t` encoder blocks and a
/// final norm. With zero blocks the embeddings pass through untouched.
#[derive(Debug, Clone)]
pub struct TextEncoder {
    pub embed: TextEmbedder,
    pub blocks: Vec<EncoderBlock>,
    pub norm: Option<LayerNorm>,
    /// Applied to the embedding sums.
    pub dropout: Dropout,
}

impl TextEncoder {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        vocab_size: usize,
        max_len: usize,
        block: BlockConfig,
        layers: usize,
        rng: &mut Rng,
    ) -> Result<Self> {
        let embed = TextEmbedder::new(store, &format!("{name}.embed"), vocab_size, max_len, block.dim, rng);
        let blocks = (0..layers)
            .map(|i| EncoderBlock::new(store, &format!("{name}.block{i}"), block, rng))
            .collect::<Result<Vec<_>>>()?;
        let norm = (layers > 0).then(|| LayerNorm::new(store, &format!("{name}.norm"), block.dim));
        Ok(TextEncoder {
            embed,
            blocks,
            norm,
            dropout: Dropout::new(block.dropout)?,
        })
    }

    /// Returns the encoded sequence and the raw embedding output.
    pub fn forward(
        &self,
        tape: &mut Tape<'_>,
        ids: &[usize],
        mask: &[bool],
        batch: usize,
        ctx: &mut Context,
    ) -> Result<(Encoded, Var)> {
        let mut tokens = self.embed.forward(tape, ids, mask, batch)?;
        let embeddings = tokens.values;
        tokens.values = self.dropout.forward(tape, embeddings, ctx)?;
        let encoded = run_stack(tape, tokens, &self.blocks, self.norm.as_ref(), ctx)?;
        Ok((encoded, embeddings))
    }
}

fn run_stack(
    tape: &mut Tape<'_>,
    mut tokens: TokenSequence,
    blocks: &[EncoderBlock],
    norm: Option<&LayerNorm>,
    ctx: &mut Context,
) -> Result<Encoded> {
    let mut attention = Vec::with_capacity(blocks.len());
    for block in blocks {
        let (next, weights) = block.forward(tape, &tokens, ctx)?;
        tokens = next;
        attention.push(weights);
    }
    if let Some(norm) = norm {
        tokens.values = norm.forward(tape, tokens.values)?;
    }
    Ok(Encoded { tokens, attention })
}

/// Position 0 of every sequence: `[B, n, d] -> [B, d]`.
pub(crate) fn first_token(tape: &mut Tape<'_>, seq: Var) -> Result<Var> {
    let s = tape.shape(seq).to_vec();
    let first = tape.slice(seq, 1, 0, 1)?;
    tape.reshape(first, &[s[0], s[2]])
}

/// Mean over the positions where `mask` is set (all positions when `None`).
pub(crate) fn masked_mean(tape: &mut Tape<'_>, seq: Var, mask: Option<&[bool]>) -> Result<Var> {
    let s = tape.shape(seq).to_vec();
    let (b, n, d) = (s[0], s[1], s[2]);
    let mut w = vec![1.0 / n as f64; b * n];
    if let Some(mask) = mask {
        for (row, m) in w.chunks_mut(n).zip(mask.chunks(n)) {
            let count = m.iter().filter(|&&x| x).count().max(1) as f64;
            for (wi, &mi) in row.iter_mut().zip(m) {
                *wi = if mi { 1.0 / count } else { 0.0 };
            }
        }
    }
    let w = tape.constant(Tensor::new(&[b, 1, n], w)?);
    let pooled = tape.batch_matmul(w, seq)?;
    tape.reshape(pooled, &[b, d])
}
