//! Central finite-difference gradient checks.

use crate::error::{Error, Result};
use crate::tape::{Tape, Var};
use crate::tensor::{Real, Tensor};

/// `|a - d| / max(|a|, |d|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Evaluates `f` on a fresh tape and returns the scalar value, or reports the
/// first op that produced a non-finite value.
fn evaluate<T, F>(f: &mut F, inputs: &[Tensor<T>], record: bool) -> Result<(f64, Option<Vec<Vec<T>>>)>
where
    T: Real,
    F: for<'a> FnMut(&mut Tape<'a, T>, &[Var]) -> Result<Var>,
{
    let mut tape = if record { Tape::new() } else { Tape::no_grad() };
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t)).collect();
    let out = f(&mut tape, &vars)?;
    if let Some((op_index, op)) = tape.first_non_finite() {
        return Err(Error::NonFinite { op_index, op });
    }
    if tape.value(out).len() != 1 {
        return Err(Error::Contract("gradient check needs a scalar function".into()));
    }
    let value = tape.value(out)[0].f64();
    if !record {
        return Ok((value, None));
    }
    tape.backward(out)?;
    let grads = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| tape.grad(v).map_or_else(|| vec![T::zero(); t.len()], <[T]>::to_vec))
        .collect();
    Ok((value, Some(grads)))
}

/// Largest relative error between the tape's gradient and a central
/// difference, over every entry of every input.
pub fn grad_check<T, F>(f: F, inputs: &[Tensor<T>], eps: f64) -> Result<f64>
where
    T: Real,
    F: for<'a> FnMut(&mut Tape<'a, T>, &[Var]) -> Result<Var>,
{
    let entries: Vec<(usize, usize)> = inputs
        .iter()
        .enumerate()
        .flat_map(|(i, t)| (0..t.len()).map(move |j| (i, j)))
        .collect();
    grad_check_entries(f, inputs, eps, &entries)
}

/// As [`grad_check`], restricted to `(input, flat index)` pairs.
pub fn grad_check_entries<T, F>(mut f: F, inputs: &[Tensor<T>], eps: f64, entries: &[(usize, usize)]) -> Result<f64>
where
    T: Real,
    F: for<'a> FnMut(&mut Tape<'a, T>, &[Var]) -> Result<Var>,
{
    if !(eps > 0.0 && eps <= 0.1) {
        return Err(Error::arg(format!("eps must lie in (0, 0.1], got {eps}")));
    }
    let mut work: Vec<Tensor<T>> = inputs.iter().map(|t| t.clone().with_grad()).collect();
    let (_, grads) = evaluate(&mut f, &work, true)?;
    let grads = grads.expect("recorded evaluation returns gradients");
    let mut worst = 0.0f64;
    for &(i, j) in entries {
        let orig = work[i].data()[j];
        work[i].data_mut()[j] = T::of(orig.f64() + eps);
        let (plus, _) = evaluate(&mut f, &work, false)?;
        work[i].data_mut()[j] = T::of(orig.f64() - eps);
        let (minus, _) = evaluate(&mut f, &work, false)?;
        work[i].data_mut()[j] = orig;
        let numeric = (plus - minus) / (2.0 * eps);
        worst = worst.max(relative_error(grads[i][j].f64(), numeric));
    }
    Ok(worst)
}
