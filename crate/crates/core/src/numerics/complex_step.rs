use num_complex::Complex64;

use crate::error::{Error, Result};

/// Default complex-step increment. Small enough that the O(h²) truncation
/// term vanishes in double precision.
pub const COMPLEX_STEP_H: f64 = 1e-20;

/// Derivative of a real-analytic `f` at `x` as `Im f(x + ih) / h`.
pub fn complex_step<F>(f: F, x: f64, h: f64) -> Result<f64>
where
    F: FnOnce(Complex64) -> Result<Complex64>,
{
    if !(h > 0.0) {
        return Err(Error::Argument(format!("complex step h must be positive, got {h}")));
    }
    let fx = f(Complex64::new(x, h))?;
    if !fx.is_finite() {
        return Err(Error::Unsupported(format!("f({x} + {h}i) evaluated to {fx}")));
    }
    Ok(fx.im / h)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_at_three() {
        let d = complex_step(|z| Ok(z * z), 3.0, COMPLEX_STEP_H).unwrap();
        assert_eq!(d, 6.0);
    }

    #[test]
    fn exp_at_zero() {
        let d = complex_step(|z| Ok(z.exp()), 0.0, COMPLEX_STEP_H).unwrap();
        assert!((d - 1.0).abs() < 1e-15);
    }

    #[test]
    fn polynomials_exact() {
        // p(x) = 3x⁴ − 2x³ + x − 7, p'(x) = 12x³ − 6x² + 1
        for &x in &[-2.5, -0.3, 0.0, 1.7, 11.0] {
            let d = complex_step(
                |z| Ok(z * z * z * z * 3.0 - z * z * z * 2.0 + z - 7.0),
                x,
                COMPLEX_STEP_H,
            )
            .unwrap();
            let exact: f64 = 12.0 * x * x * x - 6.0 * x * x + 1.0;
            assert!((d - exact).abs() <= 1e-14 * exact.abs().max(1.0), "x={x}");
        }
    }

    #[test]
    fn non_finite_is_unsupported() {
        let r = complex_step(|z| Ok(z / Complex64::new(0.0, 0.0)), 1.0, COMPLEX_STEP_H);
        assert!(matches!(r, Err(Error::Unsupported(_))));
    }
}
