//! Langevin function `ℒ(x) = coth x − 1/x` and its inverse.

use crate::error::{Error, Result};

const SERIES_CUTOFF: f64 = 0.1;

/// `ℒ(x)`, with a Taylor series near the origin.
pub fn langevin(x: f64) -> f64 {
    if x.abs() < SERIES_CUTOFF {
        let x2 = x * x;
        x * (1.0 / 3.0 + x2 * (-1.0 / 45.0 + x2 * (2.0 / 945.0 + x2 * (-1.0 / 4725.0 + x2 * 2.0 / 93555.0))))
    } else {
        1.0 / x.tanh() - 1.0 / x
    }
}

/// `ℒ'(x) = 1/x² − 1/sinh² x`.
pub fn langevin_d1(x: f64) -> f64 {
    if x.abs() < SERIES_CUTOFF {
        let x2 = x * x;
        1.0 / 3.0 + x2 * (-1.0 / 15.0 + x2 * (2.0 / 189.0 + x2 * (-1.0 / 675.0 + x2 * 2.0 / 10395.0)))
    } else {
        let s = x.sinh();
        1.0 / (x * x) - 1.0 / (s * s)
    }
}

/// `ℒ''(x) = −2/x³ + 2 cosh x / sinh³ x`.
pub fn langevin_d2(x: f64) -> f64 {
    if x.abs() < SERIES_CUTOFF {
        let x2 = x * x;
        x * (-2.0 / 15.0 + x2 * (8.0 / 189.0 + x2 * (-6.0 / 675.0 + x2 * 16.0 / 10395.0)))
    } else {
        let s = x.sinh();
        -2.0 / (x * x * x) + 2.0 * x.cosh() / (s * s * s)
    }
}

/// Inverse Langevin function by safeguarded Newton iteration started from the
/// Padé guess `y(3 − y²)/(1 − y²)`.
pub fn inverse_langevin(y: f64) -> Result<f64> {
    if !(y.abs() < 1.0) {
        return Err(Error::DomainError(y));
    }
    if y == 0.0 {
        return Ok(0.0);
    }
    let target = y.abs();
    // ℒ is increasing with ℒ(x) < 1 − 1/x, so the root lies below 1/(1 − y).
    let mut lo = 0.0;
    let mut hi = 1.0 / (1.0 - target) + 1.0;
    let mut x = (target * (3.0 - target * target) / (1.0 - target * target)).clamp(lo, hi);
    for _ in 0..200 {
        let r = langevin(x) - target;
        if r == 0.0 {
            break;
        }
        if r > 0.0 {
            hi = x;
        } else {
            lo = x;
        }
        let d = langevin_d1(x);
        let mut next = x - r / d;
        if !(next > lo && next < hi) || !next.is_finite() {
            next = 0.5 * (lo + hi);
        }
        if (next - x).abs() <= 4.0 * f64::EPSILON * x.max(1.0) {
            x = next;
            break;
        }
        x = next;
    }
    Ok(x.copysign(y))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inverse_at_zero() {
        assert_eq!(inverse_langevin(0.0).unwrap(), 0.0);
    }

    #[test]
    fn inverse_of_langevin_one() {
        let y = 1.0 / 1.0f64.tanh() - 1.0;
        assert!((y - 0.313035).abs() < 1e-6);
        let x = inverse_langevin(y).unwrap();
        assert!((x - 1.0).abs() < 1e-12);
        assert!((inverse_langevin(0.313035).unwrap() - 1.0).abs() < 1e-5);
    }

    #[test]
    fn near_pole_residual() {
        let x = inverse_langevin(0.999).unwrap();
        assert!(x.is_finite());
        assert!((langevin(x) - 0.999).abs() < 1e-12);
    }

    #[test]
    fn domain_errors() {
        assert!(matches!(inverse_langevin(1.0), Err(Error::DomainError(_))));
        assert!(matches!(inverse_langevin(-1.5), Err(Error::DomainError(_))));
    }

    #[test]
    fn series_and_closed_form_agree_at_cutoff() {
        let eps = 1e-9;
        let a = SERIES_CUTOFF - eps;
        let b = SERIES_CUTOFF + eps;
        // jumps across the cutoff beyond the smooth change over [a, b]
        assert!((langevin(b) - langevin(a) - 2.0 * eps * langevin_d1(SERIES_CUTOFF)).abs() < 1e-13);
        assert!((langevin_d1(b) - langevin_d1(a) - 2.0 * eps * langevin_d2(SERIES_CUTOFF)).abs() < 1e-12);
        assert!((langevin_d2(b) - langevin_d2(a)).abs() < 1e-9);
    }

    #[test]
    fn derivatives_match_finite_differences() {
        for &x in &[0.05, 0.3, 1.0, 4.0, 20.0] {
            let h = 1e-6;
            let fd1 = (langevin(x + h) - langevin(x - h)) / (2.0 * h);
            let fd2 = (langevin_d1(x + h) - langevin_d1(x - h)) / (2.0 * h);
            assert!((fd1 - langevin_d1(x)).abs() < 1e-8, "x = {x}");
            assert!((fd2 - langevin_d2(x)).abs() < 1e-7, "x = {x}");
        }
    }
}
