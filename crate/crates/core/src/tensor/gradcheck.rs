//! Central-difference gradient checking.

use super::{no_grad, Tensor};
use crate::error::{Error, Result};

/// Largest relative disagreement between the analytic gradient of `f` at `x`
/// and the central difference `(f(x+eps) - f(x-eps)) / (2 eps)`, measured as
/// `|analytic - numeric| / max(1, |analytic|)`.
///
/// `x` must be a learnable leaf; `f` must return a single-element tensor and
/// be deterministic (freeze any noise before calling).
pub fn grad_check<F>(f: F, x: &Tensor, eps: f64) -> Result<f64>
where
    F: Fn(&Tensor) -> Result<Tensor>,
{
    if !(1e-7..=1e-3).contains(&eps) {
        return Err(Error::Input(format!("grad_check eps {eps} outside [1e-7, 1e-3]")));
    }
    if !x.requires_grad() || !x.is_leaf() {
        return Err(Error::Input("grad_check needs a learnable leaf tensor".into()));
    }
    let eval = |x: &Tensor| -> Result<f64> {
        let y = no_grad(|| f(x))?;
        if y.numel() != 1 {
            return Err(Error::dim("grad_check", format!("f returned shape {:?}", y.shape())));
        }
        let v = y.item();
        if !v.is_finite() {
            return Err(Error::Numeric {
                context: "grad_check objective".into(),
            });
        }
        Ok(v)
    };

    x.zero_grad();
    let y = f(x)?;
    if y.numel() != 1 {
        return Err(Error::dim("grad_check", format!("f returned shape {:?}", y.shape())));
    }
    if !y.item().is_finite() {
        return Err(Error::Numeric {
            context: "grad_check objective".into(),
        });
    }
    y.backward()?;
    let analytic = x.grad();
    x.zero_grad();
    drop(y);

    let original = x.to_vec();
    let mut worst: f64 = 0.0;
    for i in 0..original.len() {
        x.update_data(|d| d[i] = original[i] + eps);
        let plus = eval(x);
        x.update_data(|d| d[i] = original[i] - eps);
        let minus = eval(x);
        x.update_data(|d| d[i] = original[i]);
        let numeric = (plus? - minus?) / (2.0 * eps);
        let err = (analytic[i] - numeric).abs() / analytic[i].abs().max(1.0);
        if !err.is_finite() {
            return Err(Error::Numeric {
                context: format!("grad_check coordinate {i}"),
            });
        }
        worst = worst.max(err);
    }
    Ok(worst)
}
