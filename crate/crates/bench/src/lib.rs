//! Shared fixtures for the benchmarks.

use lsvcal_core::quotes::GeneratedQuote;
use lsvcal_core::heston::QuadratureSettings;
use lsvcal_core::{generate_quotes, CalibrationProblem, CostParams, DomainSpec, HestonParams, QuoteGrid, QuotePricer, SpotState};

pub fn data_model() -> HestonParams {
    HestonParams::new(2.0, 0.09, 0.1, -0.6, 0.05).expect("valid parameters")
}

pub fn reference_model() -> HestonParams {
    HestonParams::new(0.5, 0.04, 0.16, -0.4, 0.05).expect("valid parameters")
}

pub fn spot() -> SpotState {
    SpotState::from_price(100.0, 0.04).expect("valid spot")
}

/// The 65 standard quotes, priced analytically under the data model.
pub fn standard_quotes() -> Vec<GeneratedQuote> {
    generate_quotes(
        &data_model(),
        &spot(),
        &QuoteGrid::standard(100.0),
        QuotePricer::Analytic,
        &DomainSpec::default(),
        &QuadratureSettings::default(),
    )
    .expect("quotes price")
}

/// Reference model against the standard quotes on the default grid.
pub fn example_problem() -> CalibrationProblem {
    let quotes = standard_quotes().into_iter().map(|g| g.quote).collect();
    CalibrationProblem::new(
        reference_model(),
        spot(),
        quotes,
        &DomainSpec::default(),
        CostParams::new(4.0, 1.0).expect("valid cost"),
        1e-4,
    )
    .expect("valid problem")
}
