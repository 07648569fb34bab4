//! Synthetic call quotes on a strike × maturity grid.

use serde::{Deserialize, Serialize};

use crate::cost::CostParams;
use crate::error::{LsvError, Result};
use crate::forward::{prices_backward, reference_sigma2};
use crate::heston::{heston_call_price_with, implied_vol, QuadratureSettings};
use crate::model::{CalibrationProblem, DomainSpec, HestonParams, OptionQuote, SpotState};

/// Log-strikes ln K and maturities of a quote set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuoteGrid {
    pub log_strikes: Vec<f64>,
    pub maturities: Vec<f64>,
}

impl QuoteGrid {
    /// 13 equally spaced log-strikes from ln S0 - 0.288 to ln S0 + 0.224 at
    /// maturities 0.2, 0.4, ..., 1.0.
    pub fn standard(s0: f64) -> Self {
        let lo = s0.ln() - 0.288;
        let h = 0.512 / 12.0;
        Self {
            log_strikes: (0..13).map(|k| lo + k as f64 * h).collect(),
            maturities: vec![0.2, 0.4, 0.6, 0.8, 1.0],
        }
    }

    pub fn len(&self) -> usize {
        self.log_strikes.len() * self.maturities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn check(&self) -> Result<()> {
        if self.maturities.is_empty() {
            return Err(LsvError::InvalidInput("no maturities".into()));
        }
        if self.log_strikes.is_empty() {
            return Err(LsvError::InvalidInput("no strikes".into()));
        }
        if let Some(t) = self.maturities.iter().find(|t| !(**t > 0.0 && t.is_finite())) {
            return Err(LsvError::InvalidInput(format!("maturity {t} must be positive")));
        }
        if let Some(k) = self.log_strikes.iter().find(|k| !k.is_finite()) {
            return Err(LsvError::InvalidInput(format!("log-strike {k} is not finite")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum QuotePricer {
    /// Fourier pricing of the Heston model.
    #[default]
    Analytic,
    /// The Douglas scheme with σ² = V on the calibration grid.
    Pde,
}

/// A generated quote with the implied vol of its price.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedQuote {
    pub quote: OptionQuote,
    pub log_strike: f64,
    pub implied_vol: f64,
}

/// Call quotes ordered maturity-major, strike-minor.
pub fn generate_quotes(
    hp: &HestonParams,
    spot: &SpotState,
    grid: &QuoteGrid,
    pricer: QuotePricer,
    domain: &DomainSpec,
    quadrature: &QuadratureSettings,
) -> Result<Vec<GeneratedQuote>> {
    grid.check()?;
    let mut quotes = Vec::with_capacity(grid.len());
    for &t in &grid.maturities {
        for &z in &grid.log_strikes {
            quotes.push(OptionQuote::call(z.exp(), t, 0.0));
        }
    }
    let prices = match pricer {
        QuotePricer::Analytic => quotes
            .iter()
            .map(|q| heston_call_price_with(hp, spot, q.strike().unwrap_or_default(), q.maturity, quadrature))
            .collect::<Result<Vec<_>>>()?,
        QuotePricer::Pde => {
            let problem = CalibrationProblem::new(*hp, *spot, quotes.clone(), domain, CostParams::new(2.0, 1.0)?, 1.0)?;
            problem.maturity_steps()?;
            prices_backward(&problem, &reference_sigma2(&problem), &quotes)?
        }
    };
    let s0 = spot.spot_price();
    quotes
        .into_iter()
        .zip(prices)
        .map(|(mut q, c)| {
            q.price = c;
            let k = q.strike().unwrap_or_default();
            let implied_vol = implied_vol(c, s0, k, q.maturity, hp.r)?;
            Ok(GeneratedQuote {
                log_strike: k.ln(),
                quote: q,
                implied_vol,
            })
        })
        .collect()
}
