//! Reverse-mode differentiation over dense tensors.
//!
//! A [`Tape`] records primitive operations as they execute; [`Tape::backward`]
//! walks the recording once in reverse. Shapes never broadcast implicitly:
//! the only expansions are the explicit [`Tape::add_row`] (bias along the
//! leading dimension) and [`Tape::mul_col`] (per-row scaling).

mod tape;
mod tensor;

pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;

use crate::error::{Error, Result};

/// Evaluates a scalar function of `params` and its gradient with respect to each of them.
pub fn value_and_grad<F>(f: F, params: &[Tensor]) -> Result<(f64, Vec<Tensor>)>
where
    F: FnOnce(&Tape, &[Var]) -> Result<Var>,
{
    let tape = Tape::new();
    let vars = params
        .iter()
        .map(|p| tape.param(p.clone()))
        .collect::<Result<Vec<_>>>()?;
    let out = f(&tape, &vars)?;
    let shape = tape.shape(out);
    if shape.iter().product::<usize>() != 1 {
        return Err(Error::contract(format!(
            "value_and_grad needs a scalar function, got shape {shape:?}"
        )));
    }
    let grads = tape.backward(out)?;
    Ok((tape.item(out), vars.iter().map(|&v| grads.wrt(v)).collect()))
}

/// Central finite-difference gradient of `f` at `params`, one coordinate at a time.
pub fn numerical_grad<F>(f: F, params: &[Tensor], step: f64) -> Result<Vec<Tensor>>
where
    F: Fn(&[Tensor]) -> Result<f64>,
{
    let mut work = params.to_vec();
    let mut out = Vec::with_capacity(params.len());
    for p in 0..params.len() {
        let mut g = vec![0.0; params[p].len()];
        for (i, gi) in g.iter_mut().enumerate() {
            let orig = work[p].data()[i];
            work[p].data_mut()[i] = orig + step;
            let plus = f(&work)?;
            work[p].data_mut()[i] = orig - step;
            let minus = f(&work)?;
            work[p].data_mut()[i] = orig;
            *gi = (plus - minus) / (2.0 * step);
        }
        out.push(params[p].with_data(g));
    }
    Ok(out)
}

/// Largest elementwise relative error `|a-b| / max(|a|, |b|, floor)`.
pub fn max_rel_error(a: &[Tensor], b: &[Tensor], floor: f64) -> f64 {
    a.iter()
        .zip(b)
        .flat_map(|(x, y)| x.data().iter().zip(y.data()))
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(floor))
        .fold(0.0, f64::max)
}
