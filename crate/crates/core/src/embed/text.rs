use crate::error::{EtmaError, Result};
use crate::nn::{TokenSequence, INIT_STD};
use crate::tensor::{ParamId, ParamStore, Rng, Tape, Tensor};

/// Sum of token, segment and position embeddings for each text position.
///
/// All inputs are single passages, so every position uses segment 0.
#[derive(Debug, Clone)]
pub struct TextEmbedder {
    pub vocab_size: usize,
    pub max_len: usize,
    pub dim: usize,
    pub token: ParamId,
    pub segment: ParamId,
    pub position: ParamId,
}

impl TextEmbedder {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        vocab_size: usize,
        max_len: usize,
        dim: usize,
        rng: &mut Rng,
    ) -> Self {
        TextEmbedder {
            vocab_size,
            max_len,
            dim,
            token: store.add(
                format!("{name}.token"),
                Tensor::trunc_normal(&[vocab_size, dim], INIT_STD, rng),
            ),
            segment: store.add(
                format!("{name}.segment"),
                Tensor::trunc_normal(&[2, dim], INIT_STD, rng),
            ),
            position: store.add(
                format!("{name}.position"),
                Tensor::trunc_normal(&[max_len, dim], INIT_STD, rng),
            ),
        }
    }

    /// `ids` and `mask` are row-major `batch × len`; returns `[batch, len, dim]`.
    pub fn forward(&self, tape: &mut Tape<'_>, ids: &[usize], mask: &[bool], batch: usize) -> Result<TokenSequence> {
        if batch == 0 || !ids.len().is_multiple_of(batch) || mask.len() != ids.len() {
            return Err(EtmaError::dim("text embed", &[batch], &[ids.len(), mask.len()]));
        }
        let len = ids.len() / batch;
        if len > self.max_len {
            return Err(EtmaError::Index {
                what: "position table",
                index: len,
                bound: self.max_len,
            });
        }
        let table = tape.param(self.token);
        let tok = tape.gather(table, ids)?;
        let tok = tape.reshape(tok, &[batch, len, self.dim])?;
        let seg_table = tape.param(self.segment);
        let seg = tape.slice(seg_table, 0, 0, 1)?;
        let seg = tape.reshape(seg, &[self.dim])?;
        let pos_table = tape.param(self.position);
        let pos = tape.slice(pos_table, 0, 0, len)?;
        let sum = tape.add(tok, seg)?;
        let values = tape.add(sum, pos)?;
        Ok(TokenSequence::new(values, Some(mask.to_vec())))
    }
}
