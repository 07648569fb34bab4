//! Outer maximisation of the dual objective J(λ) = Σ λ_i c_i - φ(0, Z0, V0).
//!
//! Each evaluation solves the HJB for λ, transports the initial mass forward
//! under the maximising σ² field, and reads off ∂J/∂λ_i = c_i - E[G_i].
//! The ascent is L-BFGS with a backtracking line search on J.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{LsvError, Result};
use crate::forward::{prices_from_density, solve_fokker_planck_until};
use crate::heston::implied_vol;
use crate::hjb::{objective_from, solve_hjb, HjbSolution};
use crate::model::{validate_problem, CalibrationProblem, FieldTag, Grid2D, Grid3Field, HestonParams, Payoff};

/// One multiplier per quote, index-aligned with `CalibrationProblem::quotes`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaVector(pub Vec<f64>);

impl LambdaVector {
    pub fn zeros(m: usize) -> Self {
        Self(vec![0.0; m])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CalibrationSettings {
    pub max_iterations: usize,
    /// Number of correction pairs kept by L-BFGS.
    pub memory: usize,
    /// Sufficient-increase constant of the line search.
    pub armijo: f64,
    pub max_backtracks: usize,
    /// Step used by the fixed-step fallback before any curvature is known.
    pub fallback_step: f64,
    /// Absolute slack below which a change in J is treated as rounding.
    pub ascent_slack: f64,
    pub initial_lambda: Option<Vec<f64>>,
}

impl Default for CalibrationSettings {
    fn default() -> Self {
        Self {
            max_iterations: 500,
            memory: 10,
            armijo: 1e-4,
            max_backtracks: 30,
            fallback_step: 1.0,
            ascent_slack: 1e-12,
            initial_lambda: None,
        }
    }
}

/// J, its gradient and the model prices at one λ.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub lambda: Vec<f64>,
    pub objective: f64,
    pub gradient: Vec<f64>,
    pub model_prices: Vec<f64>,
    pub hjb: HjbSolution,
}

impl Evaluation {
    pub fn grad_norm(&self) -> f64 {
        sup_norm(&self.gradient)
    }
}

fn sup_norm(x: &[f64]) -> f64 {
    x.iter().fold(0.0, |m, v| m.max(v.abs()))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Solve the HJB at `lambda` and evaluate J and ∇J.
pub fn evaluate(problem: &CalibrationProblem, lambda: &[f64]) -> Result<Evaluation> {
    let hjb = solve_hjb(problem, lambda)?;
    let objective = objective_from(problem, lambda, &hjb);
    let last = problem.maturity_steps()?.into_iter().max().unwrap_or(0);
    let model_prices = if problem.quotes.is_empty() {
        Vec::new()
    } else {
        let path = solve_fokker_planck_until(problem, &hjb.sigma2, last)?;
        prices_from_density(&path, &problem.quotes)?
    };
    let gradient = problem
        .quotes
        .iter()
        .zip(&model_prices)
        .map(|(q, p)| q.price - p)
        .collect();
    Ok(Evaluation {
        lambda: lambda.to_vec(),
        objective,
        gradient,
        model_prices,
        hjb,
    })
}

/// ∂J/∂λ_i = c_i - E[G_i(Z_{t_i})] under the σ² field maximising the HJB at λ.
pub fn gradient(problem: &CalibrationProblem, lambda: &[f64]) -> Result<Vec<f64>> {
    Ok(evaluate(problem, lambda)?.gradient)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StepKind {
    Start,
    LineSearch,
    Fallback,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub iteration: usize,
    pub objective: f64,
    pub grad_norm: f64,
    pub step: f64,
    pub kind: StepKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepricingRow {
    pub quote: usize,
    pub kind: String,
    pub maturity: f64,
    pub strike: Option<f64>,
    pub market_price: f64,
    pub model_price: f64,
    pub input_iv: Option<f64>,
    pub model_iv: Option<f64>,
}

impl RepricingRow {
    pub fn price_error(&self) -> f64 {
        (self.market_price - self.model_price).abs()
    }

    pub fn iv_error(&self) -> Option<f64> {
        Some((self.input_iv? - self.model_iv?).abs())
    }
}

#[derive(Debug, Clone)]
pub struct CalibrationResult {
    pub lambda_star: LambdaVector,
    pub objective: f64,
    pub grad_norm: f64,
    pub converged: bool,
    pub iterations: usize,
    pub trace: Vec<TraceEntry>,
    pub sigma2: Grid3Field,
    pub eta: Grid3Field,
    pub model_prices: Vec<f64>,
    pub repricing: Vec<RepricingRow>,
}

/// σ² is the stored maximiser; η = η̄√V/σ, set to η̄ where V = 0.
pub fn recover_surfaces(hjb: &HjbSolution, hp: &HestonParams, grid: &Grid2D) -> Result<(Grid3Field, Grid3Field)> {
    let sigma2 = hjb.sigma2.clone();
    if !sigma2.matches_grid(grid) {
        return Err(LsvError::DimensionMismatch("sigma2 field does not match the grid".into()));
    }
    let mut eta = Grid3Field::zeros(FieldTag::Eta, sigma2.n_slices, grid.n_z, grid.n_v);
    let rho2 = hp.eta_bar * hp.eta_bar;
    for k in 0..sigma2.n_slices {
        let out = eta.slice_mut(k);
        for i in 0..grid.n_z {
            for j in 0..grid.n_v {
                let node = grid.idx(i, j);
                let v = grid.v[j];
                let s2 = sigma2.get(k, i, j);
                if v > 0.0 && rho2 < 1.0 && !(s2 > rho2 * v) {
                    return Err(LsvError::Invariant(format!(
                        "sigma2={s2} not above eta_bar^2 V={} at step {k}, node ({i}, {j})",
                        rho2 * v
                    )));
                }
                let e = if v > 0.0 { hp.eta_bar * (v / s2).sqrt() } else { hp.eta_bar };
                if e.abs() > 1.0 + 1e-12 {
                    return Err(LsvError::Invariant(format!("|eta|={} > 1 at step {k}, node ({i}, {j})", e.abs())));
                }
                out[node] = e.clamp(-1.0, 1.0);
            }
        }
    }
    Ok((sigma2, eta))
}

/// Limited-memory inverse-Hessian model of -J.
struct Memory {
    pairs: VecDeque<(Vec<f64>, Vec<f64>, f64)>,
    capacity: usize,
}

impl Memory {
    fn new(capacity: usize) -> Self {
        Self {
            pairs: VecDeque::with_capacity(capacity),
            capacity,
        }
    }

    /// Store s = Δλ, y = -Δ∇J when the curvature condition holds.
    fn push(&mut self, s: Vec<f64>, y: Vec<f64>) -> bool {
        let sy = dot(&s, &y);
        if !(sy > 1e-12 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt()) {
            return false;
        }
        if self.pairs.len() == self.capacity {
            self.pairs.pop_front();
        }
        self.pairs.push_back((s, y, 1.0 / sy));
        true
    }

    fn gamma(&self) -> Option<f64> {
        self.pairs.back().map(|(s, y, _)| dot(s, y) / dot(y, y))
    }

    /// Ascent direction H·∇J by the two-loop recursion.
    fn direction(&self, grad: &[f64]) -> Vec<f64> {
        let mut q = grad.to_vec();
        let mut alphas = Vec::with_capacity(self.pairs.len());
        for (s, y, rho) in self.pairs.iter().rev() {
            let a = rho * dot(s, &q);
            for (qi, yi) in q.iter_mut().zip(y) {
                *qi -= a * yi;
            }
            alphas.push(a);
        }
        let gamma = self.gamma().unwrap_or(1.0);
        for qi in q.iter_mut() {
            *qi *= gamma;
        }
        for ((s, y, rho), a) in self.pairs.iter().zip(alphas.into_iter().rev()) {
            let b = rho * dot(y, &q);
            for (qi, si) in q.iter_mut().zip(s) {
                *qi += (a - b) * si;
            }
        }
        q
    }

    fn clear(&mut self) {
        self.pairs.clear();
    }
}

/// Maximise J(λ) until ‖∇J‖_∞ ≤ ε or the iteration budget runs out.
pub fn calibrate(problem: &CalibrationProblem, settings: &CalibrationSettings) -> Result<CalibrationResult> {
    validate_problem(problem).into_result()?;
    let m = problem.quotes.len();
    let lambda0 = match &settings.initial_lambda {
        Some(l) if l.len() != m => {
            return Err(LsvError::DimensionMismatch(format!("initial lambda has {} entries for {m} quotes", l.len())))
        }
        Some(l) => l.clone(),
        None => vec![0.0; m],
    };
    let mut current = evaluate(problem, &lambda0)?;
    let mut trace = vec![TraceEntry {
        iteration: 0,
        objective: current.objective,
        grad_norm: current.grad_norm(),
        step: 0.0,
        kind: StepKind::Start,
    }];
    let mut memory = Memory::new(settings.memory.max(1));
    let mut iterations = 0;

    while current.grad_norm() > problem.epsilon && iterations < settings.max_iterations {
        iterations += 1;
        let mut dir = memory.direction(&current.gradient);
        let mut slope = dot(&current.gradient, &dir);
        if !(slope > 0.0) {
            memory.clear();
            dir = current.gradient.clone();
            slope = dot(&dir, &dir);
        }
        let mut step = if memory.pairs.is_empty() && iterations == 1 {
            settings.fallback_step / sup_norm(&dir).max(1e-300) * current.grad_norm().min(1.0)
        } else {
            1.0
        };

        let mut accepted = None;
        for _ in 0..settings.max_backtracks {
            let trial: Vec<f64> = current.lambda.iter().zip(&dir).map(|(l, d)| l + step * d).collect();
            let eval = evaluate(problem, &trial)?;
            let target = current.objective + settings.armijo * step * slope - settings.ascent_slack;
            if eval.objective >= target {
                accepted = Some(eval);
                break;
            }
            step *= 0.5;
        }

        let (next, kind) = match accepted {
            Some(e) => (e, StepKind::LineSearch),
            None => {
                let eta = memory.gamma().unwrap_or(settings.fallback_step);
                memory.clear();
                step = eta;
                let trial: Vec<f64> = current
                    .lambda
                    .iter()
                    .zip(&current.gradient)
                    .map(|(l, g)| l + eta * g)
                    .collect();
                (evaluate(problem, &trial)?, StepKind::Fallback)
            }
        };
        let s: Vec<f64> = next.lambda.iter().zip(&current.lambda).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = current.gradient.iter().zip(&next.gradient).map(|(a, b)| a - b).collect();
        memory.push(s, y);
        current = next;
        trace.push(TraceEntry {
            iteration: iterations,
            objective: current.objective,
            grad_norm: current.grad_norm(),
            step,
            kind,
        });
    }

    let converged = current.grad_norm() <= problem.epsilon;
    let (sigma2, eta) = recover_surfaces(&current.hjb, &problem.heston, &problem.grid)?;
    let repricing = repricing_table(problem, &current.model_prices);
    Ok(CalibrationResult {
        lambda_star: LambdaVector(current.lambda.clone()),
        objective: current.objective,
        grad_norm: current.grad_norm(),
        converged,
        iterations,
        trace,
        sigma2,
        eta,
        model_prices: current.model_prices,
        repricing,
    })
}

/// Implied vol of a discounted call or put price, `None` when not invertible.
pub fn quote_implied_vol(payoff: &Payoff, price: f64, maturity: f64, s0: f64, r: f64) -> Option<f64> {
    let (strike, call_price) = match *payoff {
        Payoff::Call { strike } => (strike, price),
        Payoff::Put { strike } => (strike, price + s0 - strike * (-r * maturity).exp()),
        Payoff::Tabulated { .. } => return None,
    };
    implied_vol(call_price, s0, strike, maturity, r).ok()
}

pub fn repricing_table(problem: &CalibrationProblem, model_prices: &[f64]) -> Vec<RepricingRow> {
    let s0 = problem.spot.spot_price();
    let r = problem.heston.r;
    problem
        .quotes
        .iter()
        .zip(model_prices)
        .enumerate()
        .map(|(n, (q, &model))| RepricingRow {
            quote: n,
            kind: q.payoff.kind_name().to_string(),
            maturity: q.maturity,
            strike: q.strike(),
            market_price: q.price,
            model_price: model,
            input_iv: quote_implied_vol(&q.payoff, q.price, q.maturity, s0, r),
            model_iv: quote_implied_vol(&q.payoff, model, q.maturity, s0, r),
        })
        .collect()
}
