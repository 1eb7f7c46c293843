//! Central finite-difference comparison for hand-written backward passes.

use crate::error::{IkmError, Result};
use crate::tensor::Tensor;

/// Max over entries of |central difference - analytic| / max(|analytic|, 1e-8).
/// 64-bit only; `f` is evaluated twice per entry of `x`.
pub fn finite_diff_check(
    f: &mut dyn FnMut(&Tensor<f64>) -> f64,
    x: &Tensor<f64>,
    analytic_grad: &Tensor<f64>,
    step: f64,
) -> Result<f64> {
    if x.shape() != analytic_grad.shape() {
        return Err(IkmError::ShapeMismatch(
            "analytic gradient shape differs from input".into(),
        ));
    }
    let mut xp = x.clone();
    let mut max_rel = 0.0f64;
    for i in 0..x.len() {
        let orig = x.data()[i];
        xp.data_mut()[i] = orig + step;
        let fp = f(&xp);
        xp.data_mut()[i] = orig - step;
        let fm = f(&xp);
        xp.data_mut()[i] = orig;
        if !fp.is_finite() || !fm.is_finite() {
            return Err(IkmError::NonFinite("loss at perturbed point".into()));
        }
        let fd = (fp - fm) / (2.0 * step);
        let a = analytic_grad.data()[i];
        let rel = (fd - a).abs() / a.abs().max(1e-8);
        if rel > max_rel {
            max_rel = rel;
        }
    }
    Ok(max_rel)
}
