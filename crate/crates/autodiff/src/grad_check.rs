use crate::error::{AutodiffError, Result};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Compares the tape gradient of a scalar function against central differences.
///
/// Returns `max_i |analytic_i - numeric_i| / max(1, |analytic_i|)`, where
/// `numeric_i = (f(x + eps·e_i) - f(x - eps·e_i)) / (2·eps)`.
pub fn grad_check<F>(f: F, x: &Tensor, eps: f64) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    if !(eps > 0.0 && eps <= 1e-2) {
        return Err(AutodiffError::Contract(format!("grad_check eps {eps} outside (0, 1e-2]")));
    }
    let eval = |point: Tensor| -> Result<f64> {
        let mut tape = Tape::new();
        let input = tape.param(point);
        let out = f(&mut tape, input)?;
        scalar_of(&tape, out)
    };

    let mut tape = Tape::new();
    let input = tape.param(x.clone());
    let out = f(&mut tape, input)?;
    scalar_of(&tape, out)?;
    let analytic = tape.backward(out)?.tensor(input);

    let mut worst: f64 = 0.0;
    for i in 0..x.numel() {
        let mut plus = x.clone();
        plus.data_mut()[i] += eps;
        let mut minus = x.clone();
        minus.data_mut()[i] -= eps;
        let numeric = (eval(plus)? - eval(minus)?) / (2.0 * eps);
        let a = analytic.data()[i];
        worst = worst.max((a - numeric).abs() / a.abs().max(1.0));
    }
    Ok(worst)
}

fn scalar_of(tape: &Tape, v: Var) -> Result<f64> {
    tape.value(v).item().ok_or_else(|| {
        AutodiffError::Contract(format!(
            "grad_check needs a scalar-valued function, got shape {:?}",
            tape.value(v).shape()
        ))
    })
}
