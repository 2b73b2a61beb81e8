//! Central finite-difference verification of tape gradients.

use crate::autodiff::{Tape, Var};
use crate::error::Result;
use crate::tensor::{Scalar, Tensor};

/// Maximum relative disagreement between the tape gradient of `f` at `input`
/// and central differences with step `epsilon`, over all coordinates:
/// `|analytic - numeric| / max(1e-8, |analytic| + |numeric|)`.
///
/// `f` receives a tape with `input` already recorded and must return a
/// scalar node.
pub fn grad_check<T, F>(f: F, input: &Tensor<T>, epsilon: T) -> Result<f64>
where
    T: Scalar,
    F: Fn(&mut Tape<T>, Var) -> Result<Var>,
{
    let mut tape = Tape::new();
    let x = tape.leaf(input.clone(), true);
    let loss = f(&mut tape, x)?;
    let grads = tape.backward(loss)?;
    let analytic = grads
        .get(x)
        .map(<[T]>::to_vec)
        .unwrap_or_else(|| vec![T::zero(); input.len()]);

    let eval = |t: Tensor<T>| -> Result<f64> {
        let mut tape = Tape::new();
        let x = tape.leaf(t, false);
        let out = f(&mut tape, x)?;
        Ok(tape.value(out).data()[0].as_f64())
    };

    let two_eps = 2.0 * epsilon.as_f64();
    let mut worst = 0.0f64;
    for (i, &a) in analytic.iter().enumerate() {
        let mut plus = input.clone();
        plus.data_mut()[i] += epsilon;
        let mut minus = input.clone();
        minus.data_mut()[i] -= epsilon;
        let numeric = (eval(plus)? - eval(minus)?) / two_eps;
        let a = a.as_f64();
        let err = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-8);
        worst = worst.max(err);
    }
    Ok(worst)
}
