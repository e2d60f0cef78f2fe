use super::{ParamSet, Tape, Tensor, Var};
use crate::error::{Error, Result};

fn check_eps(eps: f64) -> Result<()> {
    if !(eps > 0.0 && eps <= 1e-2) {
        return Err(Error::InvalidArgument(format!("eps must lie in (0, 1e-2], got {eps}")));
    }
    Ok(())
}

fn scalar_of(tape: &Tape, v: Var) -> Result<f64> {
    let value = tape
        .value(v)
        .item()
        .ok_or_else(|| Error::InvalidArgument("function must return a scalar".into()))?;
    if !value.is_finite() {
        return Err(Error::Numerical(format!("non-finite evaluation {value}")));
    }
    Ok(value)
}

fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(1.0)
}

/// Compare the tape gradient of `f` at `point` against central differences.
/// Returns the maximum over coordinates of
/// `|analytic - numeric| / max(1, |analytic|)`.
pub fn grad_check<F>(f: F, point: &Tensor, eps: f64) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    check_eps(eps)?;
    let eval = |at: Tensor| -> Result<f64> {
        let mut tape = Tape::new();
        let x = tape.leaf(at);
        let y = f(&mut tape, x)?;
        scalar_of(&tape, y)
    };

    let mut tape = Tape::new();
    let x = tape.leaf(point.clone());
    let y = f(&mut tape, x)?;
    scalar_of(&tape, y)?;
    let grads = tape.backward(y)?;
    let analytic = grads.wrt(x).cloned().unwrap_or_else(|| Tensor::zeros_like(point));

    let mut worst: f64 = 0.0;
    for i in 0..point.numel() {
        let mut plus = point.clone();
        plus.data_mut()[i] += eps;
        let mut minus = point.clone();
        minus.data_mut()[i] -= eps;
        let numeric = (eval(plus)? - eval(minus)?) / (2.0 * eps);
        worst = worst.max(relative_error(analytic.data()[i], numeric));
    }
    Ok(worst)
}

/// Like [`grad_check`], but perturbs every scalar of every parameter in `params`.
pub fn grad_check_params<F>(f: F, params: &ParamSet, eps: f64) -> Result<f64>
where
    F: Fn(&mut Tape, &ParamSet) -> Result<Var>,
{
    check_eps(eps)?;
    let eval = |ps: &ParamSet| -> Result<f64> {
        let mut tape = Tape::new();
        let y = f(&mut tape, ps)?;
        scalar_of(&tape, y)
    };

    let mut tape = Tape::new();
    let y = f(&mut tape, params)?;
    scalar_of(&tape, y)?;
    let mut analytic = params.clone();
    analytic.zero_grad();
    tape.backward(y)?.accumulate_into(&mut analytic)?;

    let mut probe = params.clone();
    let mut worst: f64 = 0.0;
    for id in params.ids() {
        for i in 0..params.get(id).value().numel() {
            let original = params.get(id).value().data()[i];
            probe.get_mut(id).value_mut().data_mut()[i] = original + eps;
            let up = eval(&probe)?;
            probe.get_mut(id).value_mut().data_mut()[i] = original - eps;
            let down = eval(&probe)?;
            probe.get_mut(id).value_mut().data_mut()[i] = original;
            let numeric = (up - down) / (2.0 * eps);
            worst = worst.max(relative_error(analytic.get(id).grad().data()[i], numeric));
        }
    }
    Ok(worst)
}
