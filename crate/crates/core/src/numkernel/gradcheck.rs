//! Finite-difference gradient checking.

use super::tape::{Tape, Var};
use super::tensor::Tensor2;
use crate::error::{Error, Result};

/// Differences at or below this are treated as exact agreement.
pub const ABS_FLOOR: f64 = 1e-8;

/// `|a - b| / max(|a|, |b|)`, or 0 when `|a - b| <= ABS_FLOOR`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    let diff = (a - b).abs();
    if diff <= ABS_FLOOR {
        0.0
    } else {
        diff / a.abs().max(b.abs())
    }
}

/// Central differences of `f` at `x`, one coordinate at a time.
pub fn central_difference(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], step: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|k| {
            probe[k] = x[k] + step;
            let up = f(&probe);
            probe[k] = x[k] - step;
            let down = f(&probe);
            probe[k] = x[k];
            (up - down) / (2.0 * step)
        })
        .collect()
}

/// Outcome of comparing a tape's gradients with central differences.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    /// Scalar coordinates compared.
    pub checked: usize,
}

/// Builds the scalar `build(tape, inputs)` once for [`Tape::backward`] and
/// again for every perturbed coordinate of every input tensor.
pub fn check_tape_gradients(
    build: impl Fn(&mut Tape, &[Var]) -> Result<Var>,
    inputs: &[Tensor2],
    step: f64,
) -> Result<GradCheck> {
    let eval = |values: &[Tensor2]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|t| tape.param(t.clone())).collect();
        let out = build(&mut tape, &vars)?;
        Ok(tape.scalar(out))
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let out = build(&mut tape, &vars)?;
    if tape.value(out).shape() != (1, 1) {
        return Err(Error::Shape(format!(
            "gradient check needs a scalar output, got {:?}",
            tape.value(out).shape()
        )));
    }
    let grads = tape.backward(out, &Tensor2::scalar(1.0))?;

    let mut worst = 0.0f64;
    let mut checked = 0;
    let mut probe = inputs.to_vec();
    for (k, v) in vars.iter().enumerate() {
        let analytic = grads.wrt(*v);
        let x = inputs[k].data().to_vec();
        let mut failure = None;
        let numeric = central_difference(
            |p| {
                probe[k].data_mut().copy_from_slice(p);
                eval(&probe).unwrap_or_else(|e| {
                    failure = Some(e);
                    f64::NAN
                })
            },
            &x,
            step,
        );
        probe[k].data_mut().copy_from_slice(&x);
        if let Some(e) = failure {
            return Err(e);
        }
        for (a, n) in analytic.data().iter().zip(&numeric) {
            worst = worst.max(relative_error(*a, *n));
            checked += 1;
        }
    }
    Ok(GradCheck {
        max_rel_error: worst,
        checked,
    })
}
