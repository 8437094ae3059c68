//! One pre-norm encoder block on random tokens: shapes, attention row sums,
//! and the effect of padding.

use etma::embed::TokenSequence;
use etma::nn::{BlockConfig, Context, EncoderBlock};
use etma::tensor::{ParamStore, Rng, Tape, Tensor};

fn main() -> etma::Result<()> {
    let mut rng = Rng::new(1);
    let mut store = ParamStore::default();
    let cfg = BlockConfig {
        dim: 16,
        heads: 4,
        mlp_ratio: 4,
        dropout: 0.0,
        qkv_bias: true,
    };
    let block = EncoderBlock::new(&mut store, "block", cfg, &mut rng)?;

    let (batch, len) = (2, 5);
    let x = Tensor::trunc_normal(&[batch, len, cfg.dim], 1.0, &mut rng);
    // second sequence has two padded positions
    let mask = vec![true, true, true, true, true, true, true, true, false, false];

    let mut tape = Tape::with_params(&store);
    let xv = tape.constant(x);
    let (out, attn) = block.forward(&mut tape, &TokenSequence::new(xv, Some(mask)), &mut Context::eval())?;
    println!("output shape    {:?}", tape.shape(out.values));
    println!("attention shape {:?}", tape.shape(attn));

    let weights = tape.value(attn);
    let row = &weights.data()[weights.len() - len..];
    println!("last attention row of padded sequence: {row:.3?}");
    println!("row sum {:.12}", row.iter().sum::<f64>());
    Ok(())
}
