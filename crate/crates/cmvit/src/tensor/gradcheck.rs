//! Central-finite-difference verification of analytic gradients.

use crate::error::{Error, Result};

use super::{Real, Tape, Tensor, Var};

fn eval_scalar<T, F>(f: &mut F, x: &Tensor<T>) -> Result<T>
where
    T: Real,
    F: FnMut(&mut Tape<T>, Var) -> Result<Var>,
{
    let mut tape = Tape::new();
    let v = tape.constant(x.clone());
    let out = f(&mut tape, v)?;
    if tape.value(out).numel() != 1 {
        return Err(Error::contract("grad_check: function must be scalar-valued"));
    }
    Ok(tape.value(out).data[0])
}

/// Compares the analytic gradient of a scalar-valued tensor function against
/// central finite differences at every coordinate of `x`.
///
/// Returns the maximum over coordinates of
/// |analytic - numeric| / max(1, |analytic|).
pub fn grad_check<T, F>(mut f: F, x: &Tensor<T>, step: T) -> Result<T>
where
    T: Real,
    F: FnMut(&mut Tape<T>, Var) -> Result<Var>,
{
    let coords: Vec<usize> = (0..x.numel()).collect();
    grad_check_coords(&mut f, x, step, &coords)
}

/// [`grad_check`] restricted to a subset of coordinates; used for whole-model
/// checks where exhaustive differencing would be prohibitive.
pub fn grad_check_coords<T, F>(mut f: F, x: &Tensor<T>, step: T, coords: &[usize]) -> Result<T>
where
    T: Real,
    F: FnMut(&mut Tape<T>, Var) -> Result<Var>,
{
    let mut tape = Tape::new();
    let xv = tape.input(x.clone());
    let out = f(&mut tape, xv)?;
    if tape.value(out).numel() != 1 {
        return Err(Error::contract("grad_check: function must be scalar-valued"));
    }
    tape.backward(out)?;
    let analytic = tape.grad(xv).expect("backward ran").to_vec();

    let two_step = step + step;
    let mut max_err = T::zero();
    let mut probe = x.clone();
    for &i in coords {
        let orig = probe.data[i];
        probe.data[i] = orig + step;
        let f_plus = eval_scalar(&mut f, &probe)?;
        probe.data[i] = orig - step;
        let f_minus = eval_scalar(&mut f, &probe)?;
        probe.data[i] = orig;
        let numeric = (f_plus - f_minus) / two_step;
        let denom = T::one().max(analytic[i].abs());
        let err = (analytic[i] - numeric).abs() / denom;
        max_err = max_err.max(err);
    }
    Ok(max_err)
}
