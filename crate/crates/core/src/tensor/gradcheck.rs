//! Central-difference gradient oracle used by the test suites.

use super::{ParamStore, Tape, Tensor, Var};
use crate::error::{EtmaError, Result};

/// Denominator floor used by [`relative_error`].
pub const DEFAULT_FLOOR: f64 = 1e-8;

/// `|a − n| / max(1e-8, |a| + |n|)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    relative_error_floored(analytic, numeric, DEFAULT_FLOOR)
}

/// `|a − n| / max(floor, |a| + |n|)`. Below the floor the comparison is
/// effectively absolute, which keeps round-off in the difference quotient
/// from dominating coordinates whose gradient is nearly zero.
pub fn relative_error_floored(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / f64::max(floor, analytic.abs() + numeric.abs())
}

/// Compares the tape gradient of `f` at `x` with central differences.
///
/// The step for coordinate `i` is `h · max(1, |xᵢ|)`. Returns the maximum
/// relative error over all coordinates.
pub fn finite_difference_check<F>(f: F, x: &Tensor, h: f64) -> Result<f64>
where
    F: for<'t> Fn(&mut Tape<'t>, Var) -> Result<Var>,
{
    let analytic = {
        let mut tape = Tape::new();
        let xv = tape.leaf(x.clone(), true);
        let loss = f(&mut tape, xv)?;
        let grads = tape.backward(loss)?;
        grads.get(xv).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; x.len()])
    };
    let eval = |values: &[f64]| -> Result<f64> {
        let mut tape = Tape::new();
        let t = Tensor::new(x.shape(), values.to_vec())?;
        let xv = tape.leaf(t, false);
        let out = f(&mut tape, xv)?;
        scalar(&tape, out)
    };
    check_flat(&analytic, x.data(), h, DEFAULT_FLOOR, 0..x.len(), eval)
}

fn scalar(tape: &Tape<'_>, v: Var) -> Result<f64> {
    let t = tape.value(v);
    if t.len() != 1 {
        return Err(EtmaError::Contract(format!(
            "gradient check needs a scalar function, got shape {:?}",
            t.shape()
        )));
    }
    Ok(t.item())
}

/// Central differences of `eval` around `x0` on the selected coordinates,
/// compared against `analytic`.
pub fn check_flat(
    analytic: &[f64],
    x0: &[f64],
    h: f64,
    floor: f64,
    coords: impl IntoIterator<Item = usize>,
    mut eval: impl FnMut(&[f64]) -> Result<f64>,
) -> Result<f64> {
    let mut x = x0.to_vec();
    let mut worst = 0.0f64;
    for i in coords {
        let step = h * x0[i].abs().max(1.0);
        x[i] = x0[i] + step;
        let up = eval(&x)?;
        x[i] = x0[i] - step;
        let down = eval(&x)?;
        x[i] = x0[i];
        let numeric = (up - down) / (2.0 * step);
        worst = worst.max(relative_error_floored(analytic[i], numeric, floor));
    }
    Ok(worst)
}

/// Gradient check of a scalar function of every parameter in `store`.
///
/// `f` builds the loss on a tape bound to the store it is given. Analytic
/// gradients come from one backward pass; each coordinate is then perturbed
/// in a private copy of the store.
pub fn param_gradient_check<F>(store: &ParamStore, h: f64, floor: f64, f: F) -> Result<f64>
where
    F: for<'t> Fn(&mut Tape<'t>) -> Result<Var>,
{
    let grads = {
        let mut tape = Tape::with_params(store);
        let loss = f(&mut tape)?;
        tape.backward(loss)?
    };
    let mut accum = store.clone();
    accum.zero_grad();
    accum.accumulate(&grads);
    let analytic = accum.flatten_grads();
    let x0 = store.flatten();
    let mut probe = store.clone();
    let eval = |values: &[f64]| -> Result<f64> {
        probe.assign_flat(values)?;
        let mut tape = Tape::with_params(&probe);
        let out = f(&mut tape)?;
        scalar(&tape, out)
    };
    check_flat(&analytic, &x0, h, floor, 0..x0.len(), eval)
}
