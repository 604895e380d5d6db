//! Central finite-difference gradient checking.
//!
//! The checker evaluates a forward-only closure, so it is independent of the
//! tape's backward rules; tests freeze tolerances from the operation
//! contracts (1e-4 for exact-arithmetic ops, 1e-3 for bilinear sampling on
//! smooth inputs). All checks run at 64-bit precision.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::tensor::Tensor;

/// Default probe step for central differences.
pub const DEFAULT_STEP: f64 = 1e-5;

/// Numeric gradient of `f` with respect to `inputs[arg]`, by central
/// differences with the given step.
pub fn central_difference<F>(f: F, inputs: &[Tensor<f64>], arg: usize, step: f64) -> Tensor<f64>
where
    F: Fn(&[Tensor<f64>]) -> f64,
{
    let base = &inputs[arg];
    let mut grad = Vec::with_capacity(base.numel());
    for i in 0..base.numel() {
        let x = base.data()[i];
        let mut probe: Vec<Tensor<f64>> = inputs.to_vec();
        probe[arg] = base.with_value_at(i, x + step);
        let plus = f(&probe);
        probe[arg] = base.with_value_at(i, x - step);
        let minus = f(&probe);
        grad.push((plus - minus) / (2.0 * step));
    }
    Tensor::from_vec(base.shape(), grad).expect("central difference gradient")
}

/// Worst-entry comparison of analytic vs numeric gradients.
///
/// An entry passes when `|a - n| <= atol + rtol * max(|a|, |n|)`.
pub fn compare_gradients(
    analytic: &Tensor<f64>,
    numeric: &Tensor<f64>,
    rtol: f64,
    atol: f64,
) -> Result<(), String> {
    if analytic.shape() != numeric.shape() {
        return Err(format!(
            "gradient shapes differ: {:?} vs {:?}",
            analytic.shape(),
            numeric.shape()
        ));
    }
    let mut worst = 0.0f64;
    let mut worst_idx = 0usize;
    for (i, (&a, &n)) in analytic.iter().zip(numeric.iter()).enumerate() {
        let tol = atol + rtol * a.abs().max(n.abs());
        let err = (a - n).abs();
        if err > tol && err - tol > worst {
            worst = err - tol;
            worst_idx = i;
        }
    }
    if worst > 0.0 {
        return Err(format!(
            "gradient mismatch at flat index {worst_idx}: analytic {} vs numeric {} (rtol {rtol}, atol {atol})",
            analytic.data()[worst_idx],
            numeric.data()[worst_idx]
        ));
    }
    Ok(())
}

/// Convenience wrapper: checks the analytic gradient of `inputs[arg]`
/// against central differences of `f`.
pub fn check_gradient<F>(
    f: F,
    inputs: &[Tensor<f64>],
    arg: usize,
    analytic: &Tensor<f64>,
    rtol: f64,
) -> Result<(), String>
where
    F: Fn(&[Tensor<f64>]) -> f64,
{
    let numeric = central_difference(&f, inputs, arg, DEFAULT_STEP);
    compare_gradients(analytic, &numeric, rtol, 1e-7)
}
