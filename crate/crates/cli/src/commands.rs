use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use log::{info, warn};
use serde::{Deserialize, Serialize};

use lsvcal_core::calibrator::{calibrate, quote_implied_vol, CalibrationResult};
use lsvcal_core::forward::{prices_backward, prices_from_density, solve_fokker_planck_until};
use lsvcal_core::{generate_quotes, FieldFile, FieldTag, LsvError, OptionQuote, Result};

use crate::config::RunConfig;
use crate::tables::{self, num};

pub const CONFIG_FILE: &str = "config.toml";
pub const QUOTES_FILE: &str = "quotes.csv";
pub const SIGMA2_FILE: &str = "sigma2.field";
pub const ETA_FILE: &str = "eta.field";
pub const REPRICING_FILE: &str = "repricing.csv";
pub const TRACE_FILE: &str = "trace.csv";
pub const LAMBDA_FILE: &str = "lambda.csv";
pub const SUMMARY_FILE: &str = "summary.toml";
pub const PRICES_FILE: &str = "prices.csv";

/// Members a report needs.
pub const BUNDLE_MEMBERS: [&str; 5] = [CONFIG_FILE, SUMMARY_FILE, REPRICING_FILE, SIGMA2_FILE, ETA_FILE];

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] LsvError),
    #[error("not converged after {iterations} iterations: gradient norm {grad_norm:e} > {epsilon:e}")]
    NotConverged {
        iterations: usize,
        grad_norm: f64,
        epsilon: f64,
    },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::NotConverged { .. } => 2,
            CliError::Core(e) => match e {
                LsvError::NonFinite(_)
                | LsvError::SingularSystem { .. }
                | LsvError::Quadrature(_)
                | LsvError::Invariant(_)
                | LsvError::CostDomain { .. } => 4,
                _ => 3,
            },
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(e.into())
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

/// Scalars of a finished run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub converged: bool,
    pub iterations: usize,
    pub objective: f64,
    pub grad_norm: f64,
    pub epsilon: f64,
    pub quotes: usize,
    pub max_price_error: f64,
    pub max_iv_error: f64,
    pub mass_error: f64,
    pub negative_mass: f64,
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    Ok(())
}

/// Write synthetic quotes priced under the data model.
pub fn cmd_generate(cfg: &RunConfig, out: &Path) -> CliResult<PathBuf> {
    let quotes = generate_quotes(
        &cfg.data_model()?,
        &cfg.spot()?,
        &cfg.data.quote_grid(),
        cfg.data.pricer,
        &cfg.grid,
        &cfg.quadrature,
    )?;
    create_dir(out)?;
    let path = out.join(QUOTES_FILE);
    tables::write_generated(&path, &quotes)?;
    info!("wrote {} quotes to {}", quotes.len(), path.display());
    Ok(path)
}

fn write_bundle(cfg: &RunConfig, quotes: &[OptionQuote], res: &CalibrationResult, summary: &Summary, out: &Path) -> Result<()> {
    create_dir(out)?;
    let problem = cfg.problem(vec![])?;
    tables::write_text(&out.join(CONFIG_FILE), &cfg.to_toml())?;
    let mut qrows = Vec::with_capacity(quotes.len());
    for q in quotes {
        qrows.push(vec![q.payoff.kind_name().to_string(), q.strike().map(num).unwrap_or_default(), num(q.maturity), num(q.price)]);
    }
    tables::write_rows(&out.join(QUOTES_FILE), &["kind", "strike", "maturity", "price"], qrows)?;
    let dt = problem.tgrid.dt;
    for (field, name) in [(&res.sigma2, SIGMA2_FILE), (&res.eta, ETA_FILE)] {
        let f = std::fs::File::create(out.join(name))?;
        FieldFile::new(field.clone(), &problem.grid, 0.0, dt).write_to(std::io::BufWriter::new(f))?;
    }
    tables::write_repricing(&out.join(REPRICING_FILE), &res.repricing)?;
    tables::write_trace(&out.join(TRACE_FILE), &res.trace)?;
    tables::write_lambda(&out.join(LAMBDA_FILE), &res.lambda_star.0)?;
    let text = toml::to_string(summary).expect("summary serializes");
    tables::write_text(&out.join(SUMMARY_FILE), &text)?;
    Ok(())
}

/// Calibrate to `quotes_path` and write the result bundle, also when the run
/// does not converge.
pub fn cmd_calibrate(cfg: &RunConfig, quotes_path: &Path, out: &Path) -> CliResult<Summary> {
    let quotes = tables::read_quotes(quotes_path)?;
    let problem = cfg.problem(quotes.clone())?;
    info!(
        "calibrating {} quotes on a {}x{} grid with {} steps",
        quotes.len(),
        problem.grid.n_z,
        problem.grid.n_v,
        problem.tgrid.n_steps
    );
    let res = calibrate(&problem, &cfg.optimizer)?;
    let last = problem.maturity_steps()?.into_iter().max().unwrap_or(problem.tgrid.n_steps);
    let path = solve_fokker_planck_until(&problem, &res.sigma2, last)?;
    let summary = Summary {
        converged: res.converged,
        iterations: res.iterations,
        objective: res.objective,
        grad_norm: res.grad_norm,
        epsilon: problem.epsilon,
        quotes: quotes.len(),
        max_price_error: res.repricing.iter().map(|r| r.price_error()).fold(0.0, f64::max),
        max_iv_error: res.repricing.iter().filter_map(|r| r.iv_error()).fold(0.0, f64::max),
        mass_error: path.max_mass_error(),
        negative_mass: path.worst_negative_mass(),
    };
    write_bundle(cfg, &quotes, &res, &summary, out)?;
    info!(
        "{} after {} iterations, |grad| = {:e}",
        if res.converged { "converged" } else { "stopped" },
        res.iterations,
        res.grad_norm
    );
    if !res.converged {
        warn!("partial bundle written to {}", out.display());
        return Err(CliError::NotConverged {
            iterations: res.iterations,
            grad_norm: res.grad_norm,
            epsilon: problem.epsilon,
        });
    }
    Ok(summary)
}

fn read_field(path: &Path) -> Result<FieldFile> {
    let f = std::fs::File::open(path).map_err(|e| LsvError::InvalidInput(format!("{}: {e}", path.display())))?;
    FieldFile::read_from(std::io::BufReader::new(f))
}

/// One priced quote by both routes.
#[derive(Debug, Clone, PartialEq)]
pub struct PricedQuote {
    pub quote: OptionQuote,
    pub backward: f64,
    pub forward: f64,
}

impl PricedQuote {
    pub fn gap(&self) -> f64 {
        (self.backward - self.forward).abs()
    }
}

/// Price `quotes_path` under the σ² field stored in `surfaces`.
pub fn cmd_price(cfg: &RunConfig, surfaces: &Path, quotes_path: &Path, out: &Path) -> CliResult<Vec<PricedQuote>> {
    let quotes = tables::read_quotes(quotes_path)?;
    let problem = cfg.problem(quotes.clone())?;
    let ff = read_field(&surfaces.join(SIGMA2_FILE))?;
    if ff.field.tag != FieldTag::Sigma2 || !ff.matches_grid(&problem.grid) || ff.field.n_slices != problem.tgrid.n_steps {
        return Err(LsvError::DimensionMismatch(format!(
            "surface is {} {}x{}x{}, config grid needs sigma2 {}x{}x{}",
            ff.field.tag.as_str(),
            ff.field.n_slices,
            ff.field.n_z,
            ff.field.n_v,
            problem.tgrid.n_steps,
            problem.grid.n_z,
            problem.grid.n_v
        ))
        .into());
    }
    let last = problem.maturity_steps()?.into_iter().max().unwrap_or(0);
    let backward = prices_backward(&problem, &ff.field, &quotes)?;
    let forward = if quotes.is_empty() {
        vec![]
    } else {
        prices_from_density(&solve_fokker_planck_until(&problem, &ff.field, last)?, &quotes)?
    };
    let priced: Vec<PricedQuote> = quotes
        .into_iter()
        .zip(backward.into_iter().zip(forward))
        .map(|(quote, (backward, forward))| PricedQuote {
            quote,
            backward,
            forward,
        })
        .collect();
    create_dir(out)?;
    let s0 = cfg.market.s0;
    let rows = priced.iter().enumerate().map(|(n, p)| {
        let q = &p.quote;
        vec![
            n.to_string(),
            q.payoff.kind_name().to_string(),
            num(q.maturity),
            q.strike().map(num).unwrap_or_default(),
            num(q.price),
            num(p.backward),
            num(p.forward),
            num(p.gap()),
            num((q.price - p.forward).abs()),
            quote_implied_vol(&q.payoff, p.forward, q.maturity, s0, cfg.market.r).map(num).unwrap_or_default(),
        ]
    });
    tables::write_rows(
        &out.join(PRICES_FILE),
        &[
            "quote",
            "kind",
            "maturity",
            "strike",
            "input_price",
            "backward_price",
            "forward_price",
            "gap",
            "error",
            "model_iv",
        ],
        rows,
    )?;
    Ok(priced)
}

/// Files written by [`cmd_report`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ReportFiles {
    pub smiles: Vec<PathBuf>,
    pub slices: Vec<PathBuf>,
}

fn time_label(t: f64) -> String {
    format!("{t}")
}

/// Per-maturity smiles and σ², η slices from a calibration bundle.
pub fn cmd_report(bundle: &Path, out: &Path) -> CliResult<ReportFiles> {
    let missing: Vec<&str> = BUNDLE_MEMBERS.iter().copied().filter(|m| !bundle.join(m).is_file()).collect();
    if !missing.is_empty() {
        return Err(LsvError::InvalidInput(format!("bundle {} is missing {}", bundle.display(), missing.join(", "))).into());
    }
    let cfg = RunConfig::load(&bundle.join(CONFIG_FILE))?;
    let rows = tables::read_repricing(&bundle.join(REPRICING_FILE))?;
    create_dir(out)?;
    let mut files = ReportFiles::default();

    let mut by_maturity: BTreeMap<u64, Vec<&tables::RepricingRecord>> = BTreeMap::new();
    for r in &rows {
        by_maturity.entry(r.maturity.to_bits()).or_default().push(r);
    }
    for (bits, mut smile) in by_maturity {
        let t = f64::from_bits(bits);
        smile.sort_by(|a, b| a.strike.total_cmp(&b.strike));
        let path = out.join(format!("smile_T{}.csv", time_label(t)));
        let lines = smile.iter().map(|r| {
            vec![
                num(r.strike.ln()),
                num(r.strike),
                r.input_iv.map(num).unwrap_or_default(),
                r.model_iv.map(num).unwrap_or_default(),
                match (r.input_iv, r.model_iv) {
                    (Some(a), Some(b)) => num((a - b).abs()),
                    _ => String::new(),
                },
            ]
        });
        tables::write_rows(&path, &["log_strike", "strike", "input_iv", "model_iv", "iv_error"], lines)?;
        files.smiles.push(path);
    }

    for name in [SIGMA2_FILE, ETA_FILE] {
        let ff = read_field(&bundle.join(name))?;
        let f = &ff.field;
        let stem = ff.field.tag.as_str();
        for &t in &cfg.report.slice_times {
            let k = ((t - ff.t_first) / ff.dt + 1e-9).floor().clamp(0.0, (f.n_slices - 1) as f64) as usize;
            let slice = f.slice(k);
            let path = out.join(format!("{stem}_t{}.csv", time_label(t)));
            let lines = (0..f.n_z).flat_map(|i| {
                (0..f.n_v).map(move |j| {
                    vec![
                        num(ff.z_min + i as f64 * ff.dz),
                        num(ff.v_min + j as f64 * ff.dv),
                        num(slice[i * f.n_v + j]),
                    ]
                })
            });
            tables::write_rows(&path, &["z", "v", "value"], lines)?;
            files.slices.push(path);
        }
    }
    info!("wrote {} smile and {} slice files to {}", files.smiles.len(), files.slices.len(), out.display());
    Ok(files)
}
