use super::*;
use crate::tensor::{param_gradient_check, DEFAULT_FLOOR};

fn block_cfg(dim: usize, heads: usize) -> BlockConfig {
    BlockConfig {
        dim,
        heads,
        mlp_ratio: 4,
        dropout: 0.0,
        qkv_bias: true,
    }
}

fn zero(store: &mut ParamStore, id: ParamId) {
    store.value_mut(id).data_mut().fill(0.0);
}

fn randomize(store: &mut ParamStore, seed: u64) {
    let mut rng = Rng::new(seed);
    for p in store.iter_mut() {
        for v in p.value.data_mut() {
            *v = rng.normal() * 0.5;
        }
    }
}

#[test]
fn indivisible_heads_is_a_config_error() {
    let mut store = ParamStore::new();
    let r = MultiHeadSelfAttention::new(&mut store, "m", 10, 3, true, &mut Rng::new(0));
    assert!(matches!(r, Err(EtmaError::Config(_))));
}

#[test]
fn zero_query_key_gives_uniform_attention_and_mean_value() {
    let mut store = ParamStore::new();
    let msa = MultiHeadSelfAttention::new(&mut store, "m", 4, 2, true, &mut Rng::new(1)).unwrap();
    randomize(&mut store, 2);
    zero(&mut store, msa.wq.weight);
    zero(&mut store, msa.wq.bias.unwrap());
    zero(&mut store, msa.wk.weight);
    assert!(msa.wk.bias.is_none());
    let x = Tensor::uniform(&[1, 3, 4], -1.0, 1.0, &mut Rng::new(3));
    let mut tape = Tape::with_params(&store);
    let xv = tape.constant(x.clone());
    let (out, w) = msa.forward(&mut tape, &TokenSequence::new(xv, None)).unwrap();
    assert!(tape.value(w).data().iter().all(|&a| a == 1.0 / 3.0));

    // reference: W0 · mean(V rows) + b0 for every position
    let wv = store.value(msa.wv.weight);
    let bv = store.value(msa.wv.bias.unwrap());
    let wo = store.value(msa.wo.weight);
    let bo = store.value(msa.wo.bias.unwrap());
    let mut mean_v = [0.0; 4];
    for r in 0..3 {
        for j in 0..4 {
            let v: f64 = (0..4).map(|i| x.get(&[0, r, i]) * wv.get(&[i, j])).sum::<f64>() + bv.data()[j];
            mean_v[j] += v / 3.0;
        }
    }
    let want: Vec<f64> = (0..4)
        .map(|j| (0..4).map(|i| mean_v[i] * wo.get(&[i, j])).sum::<f64>() + bo.data()[j])
        .collect();
    for r in 0..3 {
        for j in 0..4 {
            assert!((tape.value(out).get(&[0, r, j]) - want[j]).abs() < 1e-12);
        }
    }
}

#[test]
fn single_token_attends_to_itself_with_weight_one() {
    let mut store = ParamStore::new();
    let msa = MultiHeadSelfAttention::new(&mut store, "m", 4, 2, true, &mut Rng::new(4)).unwrap();
    randomize(&mut store, 5);
    let x = Tensor::uniform(&[1, 1, 4], -1.0, 1.0, &mut Rng::new(6));
    let mut tape = Tape::with_params(&store);
    let xv = tape.constant(x);
    let seq = TokenSequence::new(xv, None);
    let (out, w) = msa.forward(&mut tape, &seq).unwrap();
    assert!(tape.value(w).data().iter().all(|&a| a == 1.0));
    let v = msa.wv.forward(&mut tape, xv).unwrap();
    let expect = msa.wo.forward(&mut tape, v).unwrap();
    assert!(tape.value(out).max_abs_diff(tape.value(expect)) < 1e-15);
}

#[test]
fn masked_keys_receive_zero_weight() {
    let mut store = ParamStore::new();
    let msa = MultiHeadSelfAttention::new(&mut store, "m", 4, 2, true, &mut Rng::new(7)).unwrap();
    randomize(&mut store, 8);
    let x = Tensor::uniform(&[1, 2, 4], -1.0, 1.0, &mut Rng::new(9));
    let mut tape = Tape::with_params(&store);
    let xv = tape.constant(x);
    let (_, w) = msa
        .forward(&mut tape, &TokenSequence::new(xv, Some(vec![true, false])))
        .unwrap();
    let w = tape.value(w);
    for h in 0..2 {
        for q in 0..2 {
            assert_eq!(w.get(&[0, h, q, 1]), 0.0);
            assert_eq!(w.get(&[0, h, q, 0]), 1.0);
        }
    }
}

#[test]
fn attention_rows_sum_to_one() {
    let mut store = ParamStore::new();
    let msa = MultiHeadSelfAttention::new(&mut store, "m", 8, 4, true, &mut Rng::new(10)).unwrap();
    randomize(&mut store, 11);
    let x = Tensor::uniform(&[3, 5, 8], -2.0, 2.0, &mut Rng::new(12));
    let mask: Vec<bool> = (0..15).map(|i| i % 5 < 3 || i == 4).collect();
    let mut tape = Tape::with_params(&store);
    let xv = tape.constant(x);
    let (_, w) = msa.forward(&mut tape, &TokenSequence::new(xv, Some(mask))).unwrap();
    for row in tape.value(w).data().chunks(5) {
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }
}

#[test]
fn block_with_zeroed_output_projections_is_identity() {
    let mut store = ParamStore::new();
    let block = EncoderBlock::new(&mut store, "b", block_cfg(8, 2), &mut Rng::new(13)).unwrap();
    randomize(&mut store, 14);
    for id in [
        block.msa.wo.weight,
        block.msa.wo.bias.unwrap(),
        block.mlp.fc2.weight,
        block.mlp.fc2.bias.unwrap(),
    ] {
        zero(&mut store, id);
    }
    let x = Tensor::uniform(&[2, 5, 8], -1.0, 1.0, &mut Rng::new(15));
    let mut tape = Tape::with_params(&store);
    let xv = tape.constant(x.clone());
    let (out, _) = block
        .forward(&mut tape, &TokenSequence::new(xv, None), &mut Context::eval())
        .unwrap();
    assert_eq!(tape.value(out.values), &x);
}

#[test]
fn block_preserves_shape() {
    let mut store = ParamStore::new();
    let block = EncoderBlock::new(&mut store, "b", block_cfg(64, 4), &mut Rng::new(16)).unwrap();
    let x = Tensor::uniform(&[1, 17, 64], -1.0, 1.0, &mut Rng::new(17));
    let mut tape = Tape::with_params(&store);
    let xv = tape.constant(x);
    let (out, w) = block
        .forward(&mut tape, &TokenSequence::new(xv, None), &mut Context::eval())
        .unwrap();
    assert_eq!(tape.shape(out.values), &[1, 17, 64]);
    assert_eq!(tape.shape(w), &[1, 4, 17, 17]);
}

#[test]
fn block_gradients_match_central_differences() {
    let mut store = ParamStore::new();
    let block = EncoderBlock::new(&mut store, "b", block_cfg(4, 2), &mut Rng::new(18)).unwrap();
    randomize(&mut store, 19);
    let x = Tensor::uniform(&[1, 3, 4], -1.0, 1.0, &mut Rng::new(20));
    let mask = Some(vec![true, true, false]);

    let err = param_gradient_check(&store, 1e-5, DEFAULT_FLOOR, |tape| {
        let xv = tape.constant(x.clone());
        let (out, _) = block.forward(tape, &TokenSequence::new(xv, mask.clone()), &mut Context::eval())?;
        Ok(tape.sum_all(out.values))
    })
    .unwrap();
    assert!(err < 1e-5, "params: {err}");
}

#[test]
fn block_input_gradient_matches_central_differences() {
    let mut store = ParamStore::new();
    let block = EncoderBlock::new(&mut store, "b", block_cfg(4, 2), &mut Rng::new(21)).unwrap();
    randomize(&mut store, 22);
    let x_id = store.add("x", Tensor::uniform(&[1, 3, 4], -1.0, 1.0, &mut Rng::new(23)));
    let err = param_gradient_check(&store, 1e-5, DEFAULT_FLOOR, |tape| {
        let xv = tape.param(x_id);
        let (out, _) = block.forward(tape, &TokenSequence::new(xv, None), &mut Context::eval())?;
        Ok(tape.sum_all(out.values))
    })
    .unwrap();
    assert!(err < 1e-5, "{err}");
}

fn layer_norm_out(data: Vec<f64>, beta: f64) -> Vec<f64> {
    let mut store = ParamStore::new();
    let n = data.len();
    let ln = LayerNorm::new(&mut store, "ln", n);
    store.value_mut(ln.beta).data_mut().fill(beta);
    let mut tape = Tape::with_params(&store);
    let x = tape.constant(Tensor::new(&[1, n], data).unwrap());
    let y = ln.forward(&mut tape, x).unwrap();
    tape.value(y).data().to_vec()
}

#[test]
fn layer_norm_examples() {
    assert_eq!(layer_norm_out(vec![5.0, 5.0, 5.0], 0.0), vec![0.0, 0.0, 0.0]);

    let y = layer_norm_out(vec![1.0, 2.0, 3.0], 0.0);
    let mean = y.iter().sum::<f64>() / 3.0;
    let var = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 3.0;
    assert!(mean.abs() < 1e-9 && (var - 1.0).abs() < 1e-6, "{mean} {var}");

    let x: Vec<f64> = vec![0.3, -1.2, 2.5, 0.7];
    let scaled = layer_norm_out(x.iter().map(|v| v * 10.0).collect(), 0.0);
    let plain = layer_norm_out(x, 0.0);
    for (a, b) in scaled.iter().zip(&plain) {
        assert!((a - b).abs() < 1e-6);
    }
}

#[test]
fn dropout_modes() {
    let x = Tensor::uniform(&[4, 5], -1.0, 1.0, &mut Rng::new(24));
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let d = Dropout::new(0.5).unwrap();
    let y = d.forward(&mut tape, xv, &mut Context::eval()).unwrap();
    assert_eq!(tape.value(y), &x);
    let z = Dropout::new(0.0)
        .unwrap()
        .forward(&mut tape, xv, &mut Context::train(Rng::new(1)))
        .unwrap();
    assert_eq!(tape.value(z), &x);
    assert!(Dropout::new(1.0).is_err());
}

#[test]
fn inverted_dropout_preserves_the_mean() {
    let mut tape = Tape::new();
    let ones = tape.constant(Tensor::ones(&[100_000]));
    let d = Dropout::new(0.5).unwrap();
    let y = d.forward(&mut tape, ones, &mut Context::train(Rng::new(25))).unwrap();
    let v = tape.value(y);
    assert!(v.data().iter().all(|&a| a == 0.0 || a == 2.0));
    let mean = v.sum() / 100_000.0;
    assert!((mean - 1.0).abs() < 0.02, "{mean}");
}

#[test]
fn linear_rejects_wrong_input_dim() {
    let mut store = ParamStore::new();
    let l = Linear::new(&mut store, "l", 3, 2, true, &mut Rng::new(0));
    let mut tape = Tape::with_params(&store);
    let x = tape.constant(Tensor::zeros(&[2, 4]));
    assert!(matches!(l.forward(&mut tape, x), Err(EtmaError::Dimension { .. })));
}
