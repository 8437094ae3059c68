//! Builds a small expression on the tape, runs reverse mode and checks the
//! result against central differences.

use etma::tensor::{finite_difference_check, Rng, Tape, Tensor};

fn main() -> etma::Result<()> {
    let mut rng = Rng::new(3);
    let x = Tensor::uniform(&[3, 4], -1.0, 1.0, &mut rng);
    let w = Tensor::uniform(&[4, 2], -1.0, 1.0, &mut rng);

    // loss = sum(softmax(tanh(x·w)) ⊙ x·w)
    let f = |tape: &mut Tape<'_>, xv| {
        let wv = tape.constant(w.clone());
        let h = tape.matmul(xv, wv)?;
        let t = tape.tanh(h);
        let p = tape.softmax(t, 1)?;
        let y = tape.mul(p, h)?;
        Ok(tape.sum_all(y))
    };

    let mut tape = Tape::new();
    let xv = tape.leaf(x.clone(), true);
    let loss = f(&mut tape, xv)?;
    let grads = tape.backward(loss)?;
    println!("loss      {:.6}", tape.value(loss).item());
    println!(
        "dloss/dx  {:?}",
        grads
            .get(xv)
            .unwrap()
            .iter()
            .map(|g| format!("{g:.4}"))
            .collect::<Vec<_>>()
    );

    let err = finite_difference_check(f, &x, 1e-5)?;
    println!("max relative error vs finite differences: {err:.2e}");
    Ok(())
}
