//! Bessel functions of the first kind, orders 0 and 1, for the phase-
//! modulation amplitudes seen in CASR spectra.

use crate::error::{invalid, Result};

/// Location of the maximum of J₁; the inverse is unique below it.
pub const J1_ARGMAX: f64 = 1.841_183_781_340_659_3;

/// max J₁(x) = J₁(J1_ARGMAX).
pub const J1_MAX: f64 = 0.581_865_224_281_596_4;

fn series(order: u32, x: f64) -> f64 {
    let h = 0.5 * x;
    let q = -h * h;
    let mut term = h.powi(order as i32) / (1..=order).map(f64::from).product::<f64>();
    let mut sum = term;
    for k in 1..200u32 {
        term *= q / (f64::from(k) * f64::from(k + order));
        sum += term;
        if term.abs() < 1e-17 * sum.abs().max(1e-300) {
            break;
        }
    }
    sum
}

/// J₀(x) by power series; accurate to ~1e-15 for |x| ≤ 12.
pub fn j0(x: f64) -> f64 {
    series(0, x)
}

/// J₁(x) by power series; accurate to ~1e-15 for |x| ≤ 12.
pub fn j1(x: f64) -> f64 {
    series(1, x)
}

/// Inverse of J₁ on [0, J1_ARGMAX].
pub fn j1_inverse(y: f64) -> Result<f64> {
    if !(0.0..=J1_MAX).contains(&y) {
        return Err(invalid("magnitude", format!("J1 inverse needs 0 <= y <= {J1_MAX}, got {y}")));
    }
    if y == 0.0 {
        return Ok(0.0);
    }
    // bisection keeps the root bracketed near the flat top; Newton finishes
    let (mut lo, mut hi) = (0.0, J1_ARGMAX);
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if j1(mid) < y {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-6 {
            break;
        }
    }
    let mut x = 0.5 * (lo + hi);
    for _ in 0..20 {
        let d = j0(x) - j1(x) / x;
        if d.abs() < 1e-12 {
            break;
        }
        let next = (x - (j1(x) - y) / d).clamp(lo, hi);
        if (next - x).abs() < 1e-16 * x {
            x = next;
            break;
        }
        x = next;
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    /// J_n(x) = (1/π) ∫₀^π cos(nθ − x sin θ) dθ by composite Simpson.
    fn integral(n: f64, x: f64) -> f64 {
        let m = 2000;
        let h = PI / m as f64;
        let f = |t: f64| (n * t - x * t.sin()).cos();
        let mut s = f(0.0) + f(PI);
        for k in 1..m {
            s += f(k as f64 * h) * if k % 2 == 1 { 4.0 } else { 2.0 };
        }
        s * h / 3.0 / PI
    }

    #[test]
    fn tabulated_values() {
        assert!((j0(1.0) - 0.765_197_686_557_966_6).abs() < 1e-15);
        assert!((j1(1.0) - 0.440_050_585_744_933_5).abs() < 1e-15);
        assert!((j1(J1_ARGMAX) - J1_MAX).abs() < 1e-15);
        assert_eq!(j1(0.0), 0.0);
    }

    #[test]
    fn argmax_is_stationary() {
        let d = j0(J1_ARGMAX) - j1(J1_ARGMAX) / J1_ARGMAX;
        assert!(d.abs() < 1e-14);
    }

    #[test]
    fn inverse_rejects_out_of_range() {
        assert!(j1_inverse(0.6).is_err());
        assert!(j1_inverse(-0.1).is_err());
        assert_eq!(j1_inverse(0.0).unwrap(), 0.0);
    }

    proptest! {
        #[test]
        fn series_matches_integral(x in -10.0f64..10.0) {
            prop_assert!((j0(x) - integral(0.0, x)).abs() < 1e-12);
            prop_assert!((j1(x) - integral(1.0, x)).abs() < 1e-12);
        }

        #[test]
        fn inverse_round_trips(x in 1e-6f64..1.8) {
            let back = j1_inverse(j1(x)).unwrap();
            prop_assert!((back - x).abs() < 1e-10 * x.max(1e-3), "{x} {back}");
        }
    }
}
