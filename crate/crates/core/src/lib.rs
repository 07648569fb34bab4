//! Exact calibration of a Heston-type local-stochastic volatility model to a
//! finite set of European prices.
//!
//! The calibration is the concave dual of a semi-martingale optimal transport
//! problem: an outer ascent over one multiplier per quote, and an inner
//! nonlinear HJB equation whose pointwise supremum over the Z-variance has a
//! closed form. Model prices (and so the dual gradient) come from forward
//! transport of the initial mass under the maximising variance field.

pub mod adi;
pub mod calibrator;
pub mod cost;
pub mod error;
pub mod field_io;
pub mod forward;
pub mod heston;
pub mod hjb;
pub mod model;
pub mod quotes;

pub use calibrator::{calibrate, CalibrationResult, CalibrationSettings, LambdaVector, RepricingRow, TraceEntry};
pub use field_io::FieldFile;
pub use quotes::{generate_quotes, QuoteGrid, QuotePricer};
pub use cost::CostParams;
pub use error::{LsvError, Result};
pub use model::{
    build_grids, payoff_eval, validate_problem, CalibrationProblem, DomainSpec, FieldTag, Grid2D, Grid3Field,
    HestonParams, OptionQuote, Payoff, SpotState, TimeGrid, ValidationReport, Violation, ViolationKind,
};
