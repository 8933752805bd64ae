//! Central finite-difference checking for analytic gradients.
//!
//! Callers hand over the current parameter values, the analytic gradients,
//! and a forward-only loss evaluator. Each parameter element is perturbed
//! by ±h and the resulting two-sided difference quotient is compared
//! against the analytic entry.

use super::Tensor;

/// Step size that balances truncation against round-off for f64 losses of
/// order one.
pub const DEFAULT_STEP: f64 = 1e-5;

/// Largest relative error between the analytic gradients and central
/// finite differences of `eval`, taken over every element of every
/// parameter.
///
/// The relative error for one element is `|fd − analytic|` divided by
/// `max(|fd|, |analytic|, 1)`, so tiny gradients are compared absolutely.
pub fn max_relative_error(
    params: &[Tensor],
    analytic: &[Tensor],
    step: f64,
    mut eval: impl FnMut(&[Tensor]) -> f64,
) -> f64 {
    assert_eq!(params.len(), analytic.len(), "one gradient per parameter");
    let mut worst = 0.0f64;
    let mut work: Vec<Tensor> = params.to_vec();
    for (pi, grad) in analytic.iter().enumerate() {
        assert_eq!(
            params[pi].shape(),
            grad.shape(),
            "gradient shape must match its parameter"
        );
        for ei in 0..params[pi].numel() {
            let original = params[pi].data()[ei];

            work[pi].data_mut()[ei] = original + step;
            let plus = eval(&work);
            work[pi].data_mut()[ei] = original - step;
            let minus = eval(&work);
            work[pi].data_mut()[ei] = original;

            let fd = (plus - minus) / (2.0 * step);
            let a = grad.data()[ei];
            let scale = fd.abs().max(a.abs()).max(1.0);
            worst = worst.max((fd - a).abs() / scale);
        }
    }
    worst
}
