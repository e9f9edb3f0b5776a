//! Central finite-difference utilities for validating analytic gradients.

use crate::error::Result;

/// Central-difference gradient of `f` at `params` with step `h`.
///
/// Evaluates `f` twice per coordinate; `f` must be deterministic.
pub fn central_diff<F>(params: &[f64], h: f64, mut f: F) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    let mut grad = vec![0.0; params.len()];
    let mut work = params.to_vec();
    for i in 0..params.len() {
        let orig = work[i];
        work[i] = orig + h;
        let plus = f(&work)?;
        work[i] = orig - h;
        let minus = f(&work)?;
        work[i] = orig;
        grad[i] = (plus - minus) / (2.0 * h);
    }
    Ok(grad)
}

/// Largest componentwise relative error between two gradients.
///
/// Each difference is scaled by `max(|a|, |n|, 1)`, so components much
/// smaller than 1 are compared absolutely; this keeps near-zero gradients
/// from inflating the ratio past finite-difference precision.
pub fn max_rel_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len(), "gradient lengths differ");
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| (a - n).abs() / a.abs().max(n.abs()).max(1.0))
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recovers_quadratic_gradient() {
        // f(x) = sum x_i^2 has gradient 2x.
        let x = vec![0.5, -1.5, 2.0];
        let grad = central_diff(&x, 1e-5, |p| Ok(p.iter().map(|v| v * v).sum())).unwrap();
        let expected = [1.0, -3.0, 4.0];
        assert!(max_rel_error(&expected, &grad) < 1e-9);
    }

    #[test]
    fn rel_error_scale_floors_at_one() {
        assert!((max_rel_error(&[0.0], &[1e-7]) - 1e-7).abs() < 1e-20);
        assert!((max_rel_error(&[2.0], &[2.0000002]) - 1e-7).abs() < 1e-12);
    }
}
