//! Convex penalty on the Z-variance β11 and its conjugate.
//!
//! With y = (x - s)/(x̄ - s) the penalty is
//!
//! ```text
//! H(x; x̄, s) = a y^{1+p} + b y^{1-p} + c      for x > s, x̄ > s
//!            = +∞                              otherwise
//! ```
//!
//! where b and c are fixed by H(x̄) = 0 and H'(x̄) = 0, leaving `a` as a free
//! scale. The pointwise supremum sup_x { x q - H(x) } has a closed form, which
//! is what makes the explicit HJB supremum cheap.

use serde::{Deserialize, Serialize};

use crate::error::{LsvError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostParams {
    pub p: f64,
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub scale: f64,
}

impl CostParams {
    pub fn new(p: f64, scale: f64) -> Result<Self> {
        cost_coefficients(p, scale)
    }

    /// H(x; x̄, s), `f64::INFINITY` outside the domain x > s, x̄ > s.
    pub fn value(&self, x: f64, x_bar: f64, s: f64) -> f64 {
        cost_value(x, x_bar, s, self)
    }

    pub fn derivative(&self, x: f64, x_bar: f64, s: f64) -> Result<f64> {
        cost_derivative(x, x_bar, s, self)
    }

    pub fn argmax(&self, q: f64, x_bar: f64, s: f64) -> Result<f64> {
        conjugate_argmax(q, x_bar, s, self)
    }

    pub fn conjugate(&self, q: f64, x_bar: f64, s: f64) -> Result<f64> {
        conjugate_value(q, x_bar, s, self)
    }
}

/// Coefficients of H for exponent `p` and scale `a`:
/// b = a(1+p)/(p-1), c = -(a+b).
pub fn cost_coefficients(p: f64, scale: f64) -> Result<CostParams> {
    if !(p > 1.0 && p.is_finite()) {
        return Err(LsvError::InvalidExponent(p));
    }
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(LsvError::InvalidInput(format!("cost scale {scale} must be positive")));
    }
    let a = scale;
    let b = a * (1.0 + p) / (p - 1.0);
    Ok(CostParams {
        p,
        a,
        b,
        c: -(a + b),
        scale,
    })
}

pub fn cost_value(x: f64, x_bar: f64, s: f64, cp: &CostParams) -> f64 {
    if !(x > s && x_bar > s) {
        return f64::INFINITY;
    }
    let y = (x - s) / (x_bar - s);
    cp.a * y.powf(1.0 + cp.p) + cp.b * y.powf(1.0 - cp.p) + cp.c
}

/// dH/dx = a(1+p)(y^p - y^{-p})/(x̄ - s).
pub fn cost_derivative(x: f64, x_bar: f64, s: f64, cp: &CostParams) -> Result<f64> {
    if !(x > s && x_bar > s) {
        return Err(LsvError::CostDomain { x, x_bar, s });
    }
    let width = x_bar - s;
    let y = (x - s) / width;
    Ok(cp.a * (1.0 + cp.p) * (y.powf(cp.p) - y.powf(-cp.p)) / width)
}

/// Unique x > s with dH/dx = q.
///
/// With Q = q(x̄-s)/(a(1+p)), u = y^p solves u - 1/u = Q, so
/// u = (Q + √(Q²+4))/2 and x = s + u^{1/p}(x̄ - s). When the band collapses
/// (x̄ ≤ s, e.g. at V = 0) the only admissible value is x̄ itself.
pub fn conjugate_argmax(q: f64, x_bar: f64, s: f64, cp: &CostParams) -> Result<f64> {
    if !q.is_finite() {
        return Err(LsvError::NonFinite(format!("conjugate slope q={q}")));
    }
    let width = x_bar - s;
    if !(width > 0.0) {
        return Ok(x_bar);
    }
    let big_q = q * width / (cp.a * (1.0 + cp.p));
    let root = big_q.hypot(2.0);
    // avoid cancellation for large negative Q
    let u = if big_q >= 0.0 {
        0.5 * (big_q + root)
    } else {
        2.0 / (root - big_q)
    };
    let y = u.powf(1.0 / cp.p);
    // measure from the nearer end so that y = 1 returns x̄ exactly
    if y >= 0.5 {
        Ok(x_bar + (y - 1.0) * width)
    } else {
        Ok(s + y * width)
    }
}

/// sup_x { x q - H(x) }, attained at [`conjugate_argmax`]. Returns x̄·q when
/// the band is degenerate (zero at V = 0).
pub fn conjugate_value(q: f64, x_bar: f64, s: f64, cp: &CostParams) -> Result<f64> {
    let x = conjugate_argmax(q, x_bar, s, cp)?;
    if !(x_bar - s > 0.0) {
        return Ok(x_bar * q);
    }
    Ok(x * q - cost_value(x, x_bar, s, cp))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn p4() -> CostParams {
        cost_coefficients(4.0, 1.0).unwrap()
    }

    #[test]
    fn coefficients_p4() {
        let cp = p4();
        assert_eq!(cp.a, 1.0);
        assert_relative_eq!(cp.b, 5.0 / 3.0, epsilon = 1e-15);
        assert_relative_eq!(cp.c, -8.0 / 3.0, epsilon = 1e-15);
        assert_relative_eq!(cp.value(2.0, 2.0, 1.0), 0.0, epsilon = 1e-14);
        assert_relative_eq!(cp.derivative(2.0, 2.0, 1.0).unwrap(), 0.0, epsilon = 1e-14);
    }

    #[test]
    fn coefficients_p2() {
        let cp = cost_coefficients(2.0, 1.0).unwrap();
        assert_eq!((cp.a, cp.b, cp.c), (1.0, 3.0, -4.0));
    }

    #[test]
    fn exponent_one_rejected() {
        assert!(matches!(cost_coefficients(1.0, 1.0), Err(LsvError::InvalidExponent(_))));
        assert!(cost_coefficients(0.5, 1.0).is_err());
        assert!(cost_coefficients(4.0, 0.0).is_err());
    }

    #[test]
    fn value_examples() {
        let cp = p4();
        let s = 0.4f64.powi(2) * 0.04;
        assert_relative_eq!(cp.value(0.04, 0.04, s), 0.0, epsilon = 1e-14);
        assert_eq!(cp.value(s, 0.04, s), f64::INFINITY);
        assert_eq!(cp.value(0.01, s, s), f64::INFINITY);
        // 32 + 5/24 - 8/3
        assert_relative_eq!(cp.value(3.0, 2.0, 1.0), 32.0 + 5.0 / 24.0 - 8.0 / 3.0, epsilon = 1e-13);
        assert_relative_eq!(cp.value(3.0, 2.0, 1.0), 29.541_666_666_666_67, epsilon = 1e-12);
    }

    #[test]
    fn derivative_examples() {
        let cp = p4();
        assert_eq!(cp.derivative(2.0, 2.0, 1.0).unwrap(), 0.0);
        assert_relative_eq!(cp.derivative(3.0, 2.0, 1.0).unwrap(), 79.6875, epsilon = 1e-12);
        let h = 1e-6;
        let fd = (cp.value(3.0 + h, 2.0, 1.0) - cp.value(3.0 - h, 2.0, 1.0)) / (2.0 * h);
        assert_relative_eq!(fd, 79.6875, max_relative = 1e-6);
        assert!(cp.derivative(1.0 + 1e-6, 2.0, 1.0).unwrap() < -1e20);
        assert!(matches!(cp.derivative(1.0, 2.0, 1.0), Err(LsvError::CostDomain { .. })));
    }

    #[test]
    fn argmax_examples() {
        let cp = p4();
        assert_eq!(cp.argmax(0.0, 2.0, 1.0).unwrap(), 2.0);
        assert_relative_eq!(cp.argmax(79.6875, 2.0, 1.0).unwrap(), 3.0, epsilon = 1e-13);
        let mut prev = f64::INFINITY;
        for q in [-1.0, -10.0, -1e3, -1e6, -1e9] {
            let x = cp.argmax(q, 2.0, 1.0).unwrap();
            assert!(x > 1.0 && x < prev);
            prev = x;
        }
        assert!(prev - 1.0 < 1e-2);
        assert!(cp.argmax(f64::NAN, 2.0, 1.0).is_err());
    }

    #[test]
    fn argmax_brute_force() {
        let cp = p4();
        let (x_bar, s, q) = (2.0, 1.0, 79.6875);
        let n = 1_000_000;
        let h = 10.0 * (x_bar - s) / n as f64;
        let best = (1..n)
            .map(|k| s + k as f64 * h)
            .map(|x| (x, x * q - cp.value(x, x_bar, s)))
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap()
            .0;
        assert!((best - 3.0).abs() <= h);
    }

    #[test]
    fn conjugate_examples() {
        let cp = p4();
        assert_eq!(cp.conjugate(0.0, 2.0, 1.0).unwrap(), 0.0);
        assert_relative_eq!(
            cp.conjugate(79.6875, 2.0, 1.0).unwrap(),
            3.0 * 79.6875 - (32.0 + 5.0 / 24.0 - 8.0 / 3.0),
            epsilon = 1e-11
        );
        assert_relative_eq!(cp.conjugate(79.6875, 2.0, 1.0).unwrap(), 209.520_833_333_333_3, epsilon = 1e-10);
        for q in [-50.0, -1.0, 0.3, 7.0, 1e3] {
            assert!(cp.conjugate(q, 2.0, 1.0).unwrap() >= 2.0 * q);
        }
    }

    #[test]
    fn degenerate_band() {
        let cp = p4();
        assert_eq!(cp.argmax(3.0, 0.0, 0.0).unwrap(), 0.0);
        assert_eq!(cp.conjugate(3.0, 0.0, 0.0).unwrap(), 0.0);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn params() -> impl Strategy<Value = (CostParams, f64, f64)> {
            (1.05f64..8.0, 0.1f64..10.0, 0.001f64..1.0, 0.0f64..0.99).prop_map(|(p, scale, x_bar, frac)| {
                (cost_coefficients(p, scale).unwrap(), x_bar, frac * x_bar)
            })
        }

        proptest! {
            #[test]
            fn derivative_round_trip((cp, x_bar, s) in params(), q in -1e6f64..1e6) {
                let x = cp.argmax(q, x_bar, s).unwrap();
                prop_assert!(x > s);
                let back = cp.derivative(x, x_bar, s).unwrap();
                prop_assert!((back - q).abs() <= 1e-10 * q.abs().max(1.0), "q={q} back={back}");
            }

            #[test]
            fn value_is_midpoint_convex((cp, x_bar, s) in params(), y1 in 0.05f64..5.0, y2 in 0.05f64..5.0) {
                let w = x_bar - s;
                let (x1, x2) = (s + y1 * w, s + y2 * w);
                let mid = cp.value(0.5 * (x1 + x2), x_bar, s);
                let avg = 0.5 * (cp.value(x1, x_bar, s) + cp.value(x2, x_bar, s));
                prop_assert!(mid <= avg + 1e-12 * avg.abs().max(1.0));
                prop_assert!(cp.value(x1, x_bar, s) >= -1e-12);
            }

            #[test]
            fn derivative_matches_finite_difference((cp, x_bar, s) in params(), y in 0.2f64..3.0) {
                let w = x_bar - s;
                let x = s + y * w;
                let h = 1e-5 * w;
                let fd = (cp.value(x + h, x_bar, s) - cp.value(x - h, x_bar, s)) / (2.0 * h);
                let d = cp.derivative(x, x_bar, s).unwrap();
                // second-order FD truncation plus roundoff relative to the curvature scale
                let scale = d.abs().max(cp.a * (1.0 + cp.p) / w);
                prop_assert!((fd - d).abs() <= 1e-6 * scale, "fd={fd} d={d}");
            }

            #[test]
            fn conjugate_is_convex_with_argmax_slope((cp, x_bar, s) in params(), q1 in -100.0f64..100.0, q2 in -100.0f64..100.0) {
                let f = |q: f64| cp.conjugate(q, x_bar, s).unwrap();
                let mid = f(0.5 * (q1 + q2));
                let avg = 0.5 * (f(q1) + f(q2));
                prop_assert!(mid <= avg + 1e-9 * avg.abs().max(1.0));
                let h = 1e-4 * q1.abs().max(1.0);
                let slope = (f(q1 + h) - f(q1 - h)) / (2.0 * h);
                let x = cp.argmax(q1, x_bar, s).unwrap();
                prop_assert!((slope - x).abs() <= 1e-5 * x.abs().max(1e-3), "slope={slope} x={x}");
            }
        }
    }
}
