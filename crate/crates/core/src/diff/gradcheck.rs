//! Central finite-difference gradient checking.
//!
//! The oracle only evaluates forward values, so it stays independent of the
//! backward rules it is used to verify.

use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::Result;

/// Denominator floor for relative errors; gradients smaller than this are
/// compared absolutely.
pub const REL_FLOOR: f64 = 1e-3;

pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(REL_FLOOR)
}

/// Compares backward gradients of a scalar function against central
/// differences with step `h`, returning the largest relative error over all
/// entries of all inputs.
///
/// `f` receives a fresh tape and one parameter leaf per input and must
/// return a scalar variable.
pub fn max_gradient_error<F>(f: F, inputs: &[Tensor], h: f64) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let eval = |values: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|t| tape.constant(t.clone())).collect();
        let out = f(&mut tape, &vars)?;
        Ok(tape.value(out).item())
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    tape.backward(out)?;

    let mut worst: f64 = 0.0;
    let mut probe = inputs.to_vec();
    for (k, var) in vars.iter().enumerate() {
        let analytic = tape
            .grad(*var)
            .map(|g| g.data().to_vec())
            .unwrap_or_else(|| vec![0.0; inputs[k].len()]);
        for i in 0..inputs[k].len() {
            let orig = inputs[k].data()[i];
            probe[k].data_mut()[i] = orig + h;
            let up = eval(&probe)?;
            probe[k].data_mut()[i] = orig - h;
            let down = eval(&probe)?;
            probe[k].data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * h);
            worst = worst.max(relative_error(analytic[i], numeric));
        }
    }
    Ok(worst)
}
