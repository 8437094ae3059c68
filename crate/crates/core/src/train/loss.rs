use crate::error::{EtmaError, Result};
use crate::tensor::{Tape, Tensor, Var};

/// Floor applied to probabilities before the logarithm.
pub const LOG_FLOOR: f64 = 1e-12;

/// Mean cross-entropy `−(1/B) Σ_b log p[b, y_b]` of a `[B, C]` probability
/// batch.
pub fn cross_entropy(tape: &mut Tape<'_>, probs: Var, labels: &[usize]) -> Result<Var> {
    let shape = tape.shape(probs).to_vec();
    if shape.len() != 2 || shape[0] != labels.len() || labels.is_empty() {
        return Err(EtmaError::dim("cross_entropy", &shape, &[labels.len()]));
    }
    let classes = shape[1];
    let mut onehot = vec![0.0; labels.len() * classes];
    for (row, &y) in labels.iter().enumerate() {
        if y >= classes {
            return Err(EtmaError::Index {
                what: "label",
                index: y,
                bound: classes,
            });
        }
        onehot[row * classes + y] = 1.0;
    }
    let onehot = tape.constant(Tensor::new(&shape, onehot)?);
    let logp = tape.log_clamped(probs, LOG_FLOOR);
    let picked = tape.mul(logp, onehot)?;
    let total = tape.sum_all(picked);
    Ok(tape.scale(total, -1.0 / labels.len() as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::finite_difference_check;

    fn loss_of(p: &[f64], label: usize) -> f64 {
        let mut tape = Tape::new();
        let probs = tape.constant(Tensor::new(&[1, p.len()], p.to_vec()).unwrap());
        let l = cross_entropy(&mut tape, probs, &[label]).unwrap();
        tape.value(l).item()
    }

    #[test]
    fn one_hot_prediction_costs_nothing() {
        assert!(loss_of(&[0.0, 1.0], 1).abs() < 1e-11);
        assert!(loss_of(&[1.0, 0.0], 0).abs() < 1e-11);
    }

    #[test]
    fn coin_flip_costs_ln2() {
        for label in 0..2 {
            assert!((loss_of(&[0.5, 0.5], label) - std::f64::consts::LN_2).abs() < 1e-15);
        }
    }

    #[test]
    fn clamp_bounds_a_confident_mistake() {
        let l = loss_of(&[1.0, 0.0], 1);
        assert!((l + LOG_FLOOR.ln()).abs() < 1e-12);
    }

    #[test]
    fn logit_gradient_is_probs_minus_onehot() {
        let logits = Tensor::new(&[1, 2], vec![0.3, -1.1]).unwrap();
        for label in 0..2 {
            let mut tape = Tape::new();
            let z = tape.leaf(logits.clone(), true);
            let p = tape.softmax(z, 1).unwrap();
            let l = cross_entropy(&mut tape, p, &[label]).unwrap();
            let g = tape.backward(l).unwrap();
            let probs = tape.value(p).data().to_vec();
            for (j, (&gj, &pj)) in g.get(z).unwrap().iter().zip(&probs).enumerate() {
                let expected = pj - f64::from(u8::from(j == label));
                assert!((gj - expected).abs() < 1e-15);
            }
            let err = finite_difference_check(
                |t, z| {
                    let p = t.softmax(z, 1)?;
                    cross_entropy(t, p, &[label])
                },
                &logits,
                1e-6,
            )
            .unwrap();
            assert!(err < 1e-6, "relative error {err}");
        }
    }

    #[test]
    fn bad_label_is_rejected() {
        let mut tape = Tape::new();
        let p = tape.constant(Tensor::new(&[1, 2], vec![0.5, 0.5]).unwrap());
        assert!(matches!(
            cross_entropy(&mut tape, p, &[2]),
            Err(EtmaError::Index { index: 2, .. })
        ));
    }
}
