//! Tensor tape basics: record a small computation, run the backward sweep,
//! and confirm the analytic gradient against central finite differences.
//!
//! ```bash
//! cargo run --example autodiff_basics
//! ```

use cmvit::tensor::{grad_check, ParamStore, Tape, Tensor};

fn main() {
    // y = relu(x W) summed, with W a tracked parameter
    let mut store = ParamStore::<f64>::new();
    let w = store.register("w", &[3, 2], vec![0.4, -0.2, 0.1, 0.7, -0.5, 0.3]);

    let mut tape = Tape::new();
    let x = tape.constant(Tensor::from_vec(&[2, 3], vec![1.0, 2.0, -1.0, 0.5, -0.3, 2.0]).unwrap());
    let wv = tape.param(&store, w);
    let h = tape.matmul(x, wv).unwrap();
    let y = tape.relu(h);
    let loss = tape.sum_all(y);
    println!("loss = {:.6}", tape.value(loss).item());

    tape.backward_into(loss, &mut store).unwrap();
    println!("dL/dW = {:?}", store.param(w).grad);

    // independent check: central differences on a scalar-valued closure
    let probe = Tensor::from_vec(&[4], vec![0.3, -1.2, 0.8, 2.0]).unwrap();
    let err = grad_check(
        |t, v| {
            let sq = t.mul(v, v)?;
            Ok(t.sum_all(sq))
        },
        &probe,
        1e-3,
    )
    .unwrap();
    println!("grad_check(sum of squares) max relative error = {err:.2e}");
    assert!(err < 1e-5);
}
