//! Run configuration, stored as TOML.

use std::path::Path;

use serde::{Deserialize, Serialize};

use lsvcal_core::heston::QuadratureSettings;
use lsvcal_core::model::DEFAULT_IMPLICIT_RATIO;
use lsvcal_core::{
    CalibrationProblem, CalibrationSettings, CostParams, DomainSpec, HestonParams, LsvError, OptionQuote, QuoteGrid,
    QuotePricer, Result, SpotState,
};

/// Heston parameters without the rate, which lives in [`Market`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HestonRow {
    pub kappa: f64,
    pub theta: f64,
    pub xi: f64,
    pub eta_bar: f64,
}

impl HestonRow {
    pub fn params(&self, r: f64) -> Result<HestonParams> {
        HestonParams::new(self.kappa, self.theta, self.xi, self.eta_bar, r)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Market {
    pub r: f64,
    pub s0: f64,
    pub v0: f64,
}

impl Market {
    pub fn spot(&self) -> Result<SpotState> {
        SpotState::from_price(self.s0, self.v0)
    }
}

/// Which model generates the synthetic quotes, and where.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSpec {
    pub heston: HestonRow,
    pub pricer: QuotePricer,
    pub log_strikes: Vec<f64>,
    pub maturities: Vec<f64>,
}

impl DataSpec {
    pub fn quote_grid(&self) -> QuoteGrid {
        QuoteGrid {
            log_strikes: self.log_strikes.clone(),
            maturities: self.maturities.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostSpec {
    pub p: f64,
    pub scale: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSpec {
    pub epsilon: f64,
    pub adi_theta: f64,
    pub implicit_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportSpec {
    /// Times at which σ² and η slices are written.
    pub slice_times: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: HestonRow,
    pub market: Market,
    pub data: DataSpec,
    pub grid: DomainSpec,
    pub cost: CostSpec,
    pub solver: SolverSpec,
    pub optimizer: CalibrationSettings,
    pub quadrature: QuadratureSettings,
    pub report: ReportSpec,
}

impl RunConfig {
    /// Example 2: LSV row against quotes from the Heston row.
    pub fn example2() -> Self {
        let heston = HestonRow {
            kappa: 2.0,
            theta: 0.09,
            xi: 0.1,
            eta_bar: -0.6,
        };
        let market = Market {
            r: 0.05,
            s0: 100.0,
            v0: 0.04,
        };
        let q = QuoteGrid::standard(market.s0);
        Self {
            model: HestonRow {
                kappa: 0.5,
                theta: 0.04,
                xi: 0.16,
                eta_bar: -0.4,
            },
            market,
            data: DataSpec {
                heston,
                pricer: QuotePricer::Analytic,
                log_strikes: q.log_strikes,
                maturities: q.maturities,
            },
            grid: DomainSpec::default(),
            cost: CostSpec { p: 4.0, scale: 1.0 },
            solver: SolverSpec {
                epsilon: 1e-4,
                adi_theta: 0.5,
                implicit_ratio: DEFAULT_IMPLICIT_RATIO,
            },
            optimizer: CalibrationSettings::default(),
            quadrature: QuadratureSettings::default(),
            report: ReportSpec {
                slice_times: vec![0.0, 0.2, 0.5, 0.99],
            },
        }
    }

    /// Example 1: the Heston row on both sides, ε = 1e-6.
    pub fn example1() -> Self {
        let mut c = Self::example2();
        c.model = c.data.heston;
        c.solver.epsilon = 1e-6;
        c
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| {
            let line = e
                .span()
                .map(|s| text[..s.start.min(text.len())].matches('\n').count() + 1)
                .unwrap_or(0);
            LsvError::Parse {
                line,
                message: e.message().to_string(),
            }
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text)
    }

    pub fn spot(&self) -> Result<SpotState> {
        self.market.spot()
    }

    pub fn reference(&self) -> Result<HestonParams> {
        self.model.params(self.market.r)
    }

    pub fn data_model(&self) -> Result<HestonParams> {
        self.data.heston.params(self.market.r)
    }

    pub fn problem(&self, quotes: Vec<OptionQuote>) -> Result<CalibrationProblem> {
        let mut p = CalibrationProblem::new(
            self.reference()?,
            self.spot()?,
            quotes,
            &self.grid,
            CostParams::new(self.cost.p, self.cost.scale)?,
            self.solver.epsilon,
        )?;
        p.adi_theta = self.solver.adi_theta;
        p.implicit_ratio = self.solver.implicit_ratio;
        Ok(p)
    }
}
