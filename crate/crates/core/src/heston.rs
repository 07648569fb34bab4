//! Reference pricing: semi-analytic Heston calls, Black–Scholes, and
//! implied-volatility inversion.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{LsvError, Result};
use crate::model::{HestonParams, SpotState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IvSource {
    Input,
    Model,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IvQuote {
    pub maturity: f64,
    pub strike: f64,
    pub implied_vol: f64,
    pub source: IvSource,
}

/// Settings for the Fourier integral of [`heston_call_price_with`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadratureSettings {
    /// Carr–Madan damping exponent.
    pub damping: f64,
    /// Absolute error target on the price.
    pub abs_tol: f64,
    /// Integrand magnitude (price units) below which the tail is cut.
    pub tail_tol: f64,
    pub max_evaluations: usize,
}

impl Default for QuadratureSettings {
    fn default() -> Self {
        Self {
            damping: 0.75,
            abs_tol: 1e-10,
            tail_tol: 1e-14,
            max_evaluations: 2_000_000,
        }
    }
}

/// Characteristic function E[exp(i w ln S_T)] for complex w, in the
/// branch-stable form (e^{-dT}, g = (β-d)/(β+d)). Every 1/ξ² factor is
/// cancelled analytically so the ξ → 0 limit is exact.
pub fn heston_cf(w: Complex64, hp: &HestonParams, spot: &SpotState, t: f64) -> Complex64 {
    let i = Complex64::i();
    let (kappa, theta, xi, rho) = (hp.kappa, hp.theta, hp.xi, hp.eta_bar);
    let iw_w2 = i * w + w * w;
    let beta = kappa - rho * xi * i * w;
    let d = (beta * beta + xi * xi * iw_w2).sqrt();
    let bd = beta + d;
    // A = (β - d)/ξ²
    let a = -iw_w2 / bd;
    let g = a * xi * xi / bd;
    let e = (-d * t).exp();
    let d_term = a * (1.0 - e) / (1.0 - g * e);
    // ln((1 - g e)/(1 - g))/ξ² = ln1p(z)/z · z/ξ², z = g(1-e)/(1-g)
    let z_over_xi2 = a * (1.0 - e) / (bd * (1.0 - g));
    let z = z_over_xi2 * xi * xi;
    let log_ratio = ln1p_over_x(z) * z_over_xi2;
    let c_term = kappa * theta * (a * t - 2.0 * log_ratio);
    (i * w * (spot.z0 + hp.r * t) + c_term + d_term * spot.v0).exp()
}

fn ln1p_over_x(z: Complex64) -> Complex64 {
    if z.norm() < 1e-5 {
        1.0 - z / 2.0 + z * z / 3.0
    } else {
        (1.0 + z).ln() / z
    }
}

/// Discounted Heston call price with default quadrature settings.
pub fn heston_call_price(hp: &HestonParams, spot: &SpotState, strike: f64, t: f64) -> Result<f64> {
    heston_call_price_with(hp, spot, strike, t, &QuadratureSettings::default())
}

/// Carr–Madan damped Fourier integral evaluated by adaptive Gauss–Lobatto.
pub fn heston_call_price_with(
    hp: &HestonParams,
    spot: &SpotState,
    strike: f64,
    t: f64,
    qs: &QuadratureSettings,
) -> Result<f64> {
    if !(strike > 0.0) || !(t > 0.0) {
        return Err(LsvError::InvalidInput(format!(
            "Heston price needs K > 0 and T > 0, got K={strike}, T={t}"
        )));
    }
    let alpha = qs.damping;
    let k = strike.ln();
    let df = (-hp.r * t).exp();
    let scale = (-alpha * k).exp() / PI;
    let integrand = |u: f64| {
        let w = Complex64::new(u, -(alpha + 1.0));
        let denom = Complex64::new(alpha * alpha + alpha - u * u, (2.0 * alpha + 1.0) * u);
        let psi = df * heston_cf(w, hp, spot, t) / denom;
        scale * (Complex64::new(0.0, -u * k).exp() * psi).re
    };

    // the tail is cut once the integrand stays negligible over a window
    let mut upper = 10.0;
    let negligible = |u: f64| (0..8).all(|s| integrand(u * (1.0 + s as f64 / 8.0)).abs() < qs.tail_tol);
    while !negligible(upper) {
        upper *= 2.0;
        if upper > 1e7 {
            return Err(LsvError::Quadrature(format!(
                "integrand does not decay (K={strike}, T={t}, |f({upper})| too large)"
            )));
        }
    }
    // unit-width panels so no oscillation period is sampled by a single rule
    let panels = upper.ceil() as usize;
    let width = upper / panels as f64;
    let tol = qs.abs_tol / panels as f64;
    let mut price = 0.0;
    for n in 0..panels {
        let a = n as f64 * width;
        price += adaptive_lobatto(&integrand, a, a + width, tol, qs.max_evaluations)?;
    }
    if !price.is_finite() {
        return Err(LsvError::Quadrature(format!("non-finite price for K={strike}, T={t}")));
    }
    Ok(price)
}

/// Adaptive Gauss–Lobatto quadrature with Kronrod extension
/// (Gander & Gautschi). `tol` is an absolute target on the integral.
pub fn adaptive_lobatto(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64, max_evals: usize) -> Result<f64> {
    let mut evals = 0usize;
    let (fa, fb) = (f(a), f(b));
    evals += 2;
    let mut step = LobattoStep {
        f,
        tol,
        evals: &mut evals,
        max_evals,
    };
    step.run(a, b, fa, fb, 0)
}

struct LobattoStep<'a> {
    f: &'a dyn Fn(f64) -> f64,
    tol: f64,
    evals: &'a mut usize,
    max_evals: usize,
}

impl LobattoStep<'_> {
    fn run(&mut self, a: f64, b: f64, fa: f64, fb: f64, depth: usize) -> Result<f64> {
        const ALPHA: f64 = 0.816_496_580_927_726; // √(2/3)
        const BETA: f64 = 0.447_213_595_499_958; // 1/√5
        let h = 0.5 * (b - a);
        let m = 0.5 * (a + b);
        let (mll, ml, mr, mrr) = (m - ALPHA * h, m - BETA * h, m + BETA * h, m + ALPHA * h);
        let f = self.f;
        let (fmll, fml, fm, fmr, fmrr) = (f(mll), f(ml), f(m), f(mr), f(mrr));
        *self.evals += 5;
        let i2 = h / 6.0 * (fa + fb + 5.0 * (fml + fmr));
        let i1 = h / 1470.0 * (77.0 * (fa + fb) + 432.0 * (fmll + fmrr) + 625.0 * (fml + fmr) + 672.0 * fm);
        if (i1 - i2).abs() <= self.tol || mll <= a || b <= mrr || depth > 60 {
            return Ok(i1);
        }
        if *self.evals > self.max_evals {
            return Err(LsvError::Quadrature(format!(
                "more than {} integrand evaluations near [{a}, {b}]",
                self.max_evals
            )));
        }
        let nodes = [(a, fa), (mll, fmll), (ml, fml), (m, fm), (mr, fmr), (mrr, fmrr), (b, fb)];
        let mut total = 0.0;
        for w in nodes.windows(2) {
            total += self.run(w[0].0, w[1].0, w[0].1, w[1].1, depth + 1)?;
        }
        Ok(total)
    }
}

fn norm_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x * FRAC_1_SQRT_2)
}

fn norm_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

/// Black–Scholes call price; vol = 0 gives the discounted forward intrinsic.
pub fn bs_call_price(s0: f64, strike: f64, t: f64, r: f64, vol: f64) -> f64 {
    let df = (-r * t).exp();
    let sd = vol * t.sqrt();
    if sd <= 0.0 {
        return df * (s0 / df - strike).max(0.0);
    }
    let d1 = ((s0 / strike).ln() + r * t) / sd + 0.5 * sd;
    let d2 = d1 - sd;
    s0 * norm_cdf(d1) - strike * df * norm_cdf(d2)
}

pub fn bs_vega(s0: f64, strike: f64, t: f64, r: f64, vol: f64) -> f64 {
    let sd = vol * t.sqrt();
    if sd <= 0.0 {
        return 0.0;
    }
    let d1 = ((s0 / strike).ln() + r * t) / sd + 0.5 * sd;
    s0 * norm_pdf(d1) * t.sqrt()
}

const MAX_VOL: f64 = 5.0;

/// Black–Scholes implied volatility of a call price, by bracketed Newton
/// with bisection fallback.
pub fn implied_vol(price: f64, s0: f64, strike: f64, t: f64, r: f64) -> Result<f64> {
    if !(s0 > 0.0 && strike > 0.0 && t > 0.0) {
        return Err(LsvError::InvalidInput(format!(
            "implied vol needs S0, K, T > 0, got S0={s0}, K={strike}, T={t}"
        )));
    }
    let intrinsic = (s0 - strike * (-r * t).exp()).max(0.0);
    if !(price > intrinsic) {
        return Err(LsvError::ArbitrageBound {
            price,
            bound: "intrinsic",
            limit: intrinsic,
        });
    }
    if !(price < s0) {
        return Err(LsvError::ArbitrageBound {
            price,
            bound: "spot",
            limit: s0,
        });
    }
    let (mut lo, mut hi) = (0.0, MAX_VOL);
    if bs_call_price(s0, strike, t, r, hi) < price {
        return Err(LsvError::ArbitrageBound {
            price,
            bound: "maximum-volatility",
            limit: bs_call_price(s0, strike, t, r, hi),
        });
    }
    let tol = 1e-13 * price.max(1e-3);
    let mut vol = (2.0 * ((s0 / strike).ln() + r * t).abs() / t).sqrt().clamp(0.05, 1.0);
    for _ in 0..200 {
        let diff = bs_call_price(s0, strike, t, r, vol) - price;
        if diff.abs() <= tol {
            return Ok(vol);
        }
        if diff > 0.0 {
            hi = vol;
        } else {
            lo = vol;
        }
        let vega = bs_vega(s0, strike, t, r, vol);
        let newton = vol - diff / vega;
        vol = if vega > 0.0 && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if hi - lo < 1e-15 {
            return Ok(vol);
        }
    }
    Ok(vol)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn benchmark_row() -> HestonParams {
        HestonParams::new(2.0, 0.09, 0.10, -0.6, 0.05).unwrap()
    }

    #[test]
    fn cf_is_normalised_and_martingale() {
        let hp = benchmark_row();
        let spot = SpotState::from_price(100.0, 0.04).unwrap();
        let one = heston_cf(Complex64::new(0.0, 0.0), &hp, &spot, 0.7);
        assert_relative_eq!(one.re, 1.0, epsilon = 1e-14);
        let fwd = heston_cf(Complex64::new(0.0, -1.0), &hp, &spot, 0.7);
        assert_relative_eq!(fwd.re, 100.0 * (0.05f64 * 0.7).exp(), max_relative = 1e-13);
    }

    #[test]
    fn degenerate_heston_is_black_scholes() {
        let spot = SpotState::from_price(100.0, 0.04).unwrap();
        // the leading correction is proportional to rho * xi
        for (xi, rho) in [(1e-6, 0.0), (1e-8, -0.5)] {
            let hp = HestonParams::new(1.3, 0.04, xi, rho, 0.05).unwrap();
            for (k, t) in [(80.0, 0.2), (100.0, 0.5), (100.0, 1.0), (125.0, 1.0), (140.0, 2.0)] {
                let h = heston_call_price(&hp, &spot, k, t).unwrap();
                let b = bs_call_price(100.0, k, t, 0.05, 0.2);
                assert!((h - b).abs() < 1e-6, "xi={xi} K={k} T={t}: {h} vs {b}");
            }
        }
    }

    #[test]
    fn bs_examples() {
        assert_relative_eq!(bs_call_price(100.0, 100.0, 1.0, 0.0, 0.2), 7.965_567_455_405_804, epsilon = 1e-10);
        let df = (-0.05f64).exp();
        assert_eq!(bs_call_price(100.0, 90.0, 1.0, 0.05, 0.0), df * (100.0 / df - 90.0));
        assert_eq!(bs_call_price(100.0, 120.0, 1.0, 0.05, 0.0), 0.0);
        let prices: Vec<f64> = (1..=100).map(|n| bs_call_price(100.0, 110.0, 0.5, 0.03, n as f64 * 0.01)).collect();
        assert!(prices.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn implied_vol_round_trip_and_bounds() {
        let p = bs_call_price(100.0, 95.0, 0.2, 0.05, 0.2396);
        assert!((implied_vol(p, 100.0, 95.0, 0.2, 0.05).unwrap() - 0.2396).abs() < 1e-10);
        let intrinsic = 100.0 - 80.0 * (-0.05f64).exp();
        assert!(matches!(
            implied_vol(intrinsic - 0.1, 100.0, 80.0, 1.0, 0.05),
            Err(LsvError::ArbitrageBound { bound: "intrinsic", .. })
        ));
        assert!(matches!(
            implied_vol(100.5, 100.0, 80.0, 1.0, 0.05),
            Err(LsvError::ArbitrageBound { bound: "spot", .. })
        ));
    }

    #[test]
    fn lobatto_integrates_smooth_functions() {
        let v = adaptive_lobatto(&|x: f64| x.sin(), 0.0, PI, 1e-13, 100_000).unwrap();
        assert_relative_eq!(v, 2.0, epsilon = 1e-12);
        let v = adaptive_lobatto(&|x: f64| (-x * x).exp(), 0.0, 10.0, 1e-14, 100_000).unwrap();
        assert_relative_eq!(v, PI.sqrt() / 2.0, epsilon = 1e-12);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(200))]
            #[test]
            fn implied_vol_inverts_bs(vol in 0.05f64..1.5, k in 60.0f64..160.0, t in 0.05f64..3.0, r in 0.0f64..0.08) {
                let p = bs_call_price(100.0, k, t, r, vol);
                // skip prices where vega is too small for a 1e-10 inverse
                prop_assume!(bs_vega(100.0, k, t, r, vol) > 1e-3);
                let iv = implied_vol(p, 100.0, k, t, r).unwrap();
                prop_assert!((iv - vol).abs() < 1e-10, "vol={vol} iv={iv}");
            }
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(16))]
            #[test]
            fn heston_calls_convex_decreasing_in_strike(
                kappa in 0.5f64..3.0, theta in 0.02f64..0.1, xi in 0.05f64..0.8,
                rho in -0.9f64..0.3, t in 0.1f64..2.0,
            ) {
                let hp = HestonParams::new(kappa, theta, xi, rho, 0.03).unwrap();
                let spot = SpotState::from_price(100.0, 0.04).unwrap();
                let strikes: Vec<f64> = (0..15).map(|n| 70.0 + 5.0 * n as f64).collect();
                let c: Vec<f64> = strikes.iter().map(|&k| heston_call_price(&hp, &spot, k, t).unwrap()).collect();
                for w in c.windows(2) {
                    prop_assert!(w[1] < w[0]);
                }
                for w in c.windows(3) {
                    prop_assert!(w[0] - 2.0 * w[1] + w[2] > -1e-8);
                }
            }
        }
    }
}
