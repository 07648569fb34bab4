//! Model prices under a frozen σ² field, by two routes: the backward pricing
//! PDE and forward transport of the initial Dirac mass. The forward step is the
//! transpose of the backward Douglas step, so both routes agree to rounding.

use rayon::prelude::*;

use crate::adi::{z_operator, DouglasStep, FixedOperators, Scratch};
use crate::error::{LsvError, Result};
use crate::model::{payoff_eval, CalibrationProblem, FieldTag, Grid2D, Grid3Field, OptionQuote};

/// Density on every time node together with its mass ledger.
#[derive(Debug, Clone)]
pub struct DensityPath {
    pub grid: Grid2D,
    /// ρ(t_k, Z, V) normalised against trapezoidal quadrature.
    pub density: Grid3Field,
    /// Mass per node on each time slice; ρ = mass / weight.
    pub mass: Grid3Field,
    pub total_mass: Vec<f64>,
    /// Sum of the negative node masses on each slice (≤ 0).
    pub negative_mass: Vec<f64>,
    pub r: f64,
    pub dt: f64,
}

impl DensityPath {
    pub fn max_mass_error(&self) -> f64 {
        self.total_mass.iter().map(|m| (m - 1.0).abs()).fold(0.0, f64::max)
    }

    pub fn worst_negative_mass(&self) -> f64 {
        self.negative_mass.iter().copied().fold(0.0, f64::min)
    }

    /// ∫ f(Z) dρ(t_k) by trapezoidal quadrature.
    pub fn expectation(&self, k: usize, f: impl Fn(f64) -> f64) -> f64 {
        let g = &self.grid;
        let m = self.mass.slice(k);
        let mut acc = 0.0;
        for i in 0..g.n_z {
            let fz = f(g.z[i]);
            let row: f64 = m[g.idx(i, 0)..g.idx(i, 0) + g.n_v].iter().sum();
            acc += fz * row;
        }
        acc
    }
}

fn check_sigma2(problem: &CalibrationProblem, sigma2: &Grid3Field, steps: usize) -> Result<()> {
    if !sigma2.matches_grid(&problem.grid) || sigma2.n_slices < steps {
        return Err(LsvError::DimensionMismatch(format!(
            "sigma2 field is {}x{}x{}, need at least {}x{}x{}",
            sigma2.n_slices, sigma2.n_z, sigma2.n_v, steps, problem.grid.n_z, problem.grid.n_v
        )));
    }
    Ok(())
}

/// φ'(0, Z0, V0) for terminal data G at t_i, stepping the pricing equation
/// backward with the frozen σ² field.
pub fn price_backward(problem: &CalibrationProblem, sigma2: &Grid3Field, quote: &OptionQuote) -> Result<f64> {
    let grid = &problem.grid;
    let k_mat = problem
        .tgrid
        .step_of(quote.maturity)
        .filter(|&k| k > 0)
        .ok_or_else(|| LsvError::InvalidInput(format!("maturity {} not on time grid", quote.maturity)))?;
    check_sigma2(problem, sigma2, k_mat)?;
    let fixed = FixedOperators::new(grid, &problem.heston, problem.implicit_ratio);
    let mut phi = Vec::with_capacity(grid.len());
    for i in 0..grid.n_z {
        let g = payoff_eval(quote, grid.z[i], problem.heston.r);
        phi.extend(std::iter::repeat_n(g, grid.n_v));
    }
    let mut next = Vec::with_capacity(grid.len());
    let mut scratch = Scratch::default();
    for k in (0..k_mat).rev() {
        let a1 = z_operator(grid, problem.heston.r, sigma2.slice(k));
        let step = DouglasStep {
            a0: &fixed.a0,
            a1: &a1,
            a1_implicit: &fixed.a1_implicit,
            a2: &fixed.a2,
            dt: problem.tgrid.dt,
            theta: problem.adi_theta,
        };
        step.backward(&phi, None, &mut next, &mut scratch)?;
        std::mem::swap(&mut phi, &mut next);
    }
    Ok(phi[grid.spot_index()])
}

/// [`price_backward`] for every quote, in parallel.
pub fn prices_backward(problem: &CalibrationProblem, sigma2: &Grid3Field, quotes: &[OptionQuote]) -> Result<Vec<f64>> {
    quotes.par_iter().map(|q| price_backward(problem, sigma2, q)).collect()
}

/// Forward transport of the point mass at (Z0, V0) over the whole horizon.
pub fn solve_fokker_planck(problem: &CalibrationProblem, sigma2: &Grid3Field) -> Result<DensityPath> {
    solve_fokker_planck_until(problem, sigma2, problem.tgrid.n_steps)
}

/// Forward transport up to time node `last`.
pub fn solve_fokker_planck_until(problem: &CalibrationProblem, sigma2: &Grid3Field, last: usize) -> Result<DensityPath> {
    let grid = &problem.grid;
    let tg = &problem.tgrid;
    let last = last.min(tg.n_steps);
    check_sigma2(problem, sigma2, last)?;
    let fixed = FixedOperators::new(grid, &problem.heston, problem.implicit_ratio);
    let n = grid.len();
    let mut mass = Grid3Field::zeros(FieldTag::Density, last + 1, grid.n_z, grid.n_v);
    let mut m = vec![0.0; n];
    m[grid.spot_index()] = 1.0;
    mass.slice_mut(0).copy_from_slice(&m);
    let mut next = Vec::with_capacity(n);
    let mut scratch = Scratch::default();
    for k in 0..last {
        let a1 = z_operator(grid, problem.heston.r, sigma2.slice(k));
        let step = DouglasStep {
            a0: &fixed.a0,
            a1: &a1,
            a1_implicit: &fixed.a1_implicit,
            a2: &fixed.a2,
            dt: tg.dt,
            theta: problem.adi_theta,
        };
        step.forward_adjoint(&m, &mut next, &mut scratch)?;
        std::mem::swap(&mut m, &mut next);
        mass.slice_mut(k + 1).copy_from_slice(&m);
    }
    let weights = grid.weights();
    let mut density = mass.clone();
    for k in 0..=last {
        for (d, w) in density.slice_mut(k).iter_mut().zip(&weights) {
            *d /= w;
        }
    }
    let total_mass = (0..=last).map(|k| mass.slice(k).iter().sum()).collect();
    let negative_mass = (0..=last)
        .map(|k| mass.slice(k).iter().filter(|&&x| x < 0.0).sum())
        .collect();
    Ok(DensityPath {
        grid: grid.clone(),
        density,
        mass,
        total_mass,
        negative_mass,
        r: problem.heston.r,
        dt: tg.dt,
    })
}

/// ∫ G_i dρ(t_i) for every quote.
pub fn prices_from_density(path: &DensityPath, quotes: &[OptionQuote]) -> Result<Vec<f64>> {
    quotes
        .iter()
        .map(|q| {
            let x = q.maturity / path.dt;
            let k = x.round();
            if (x - k).abs() > 1e-9 * x.max(1.0) || k as usize >= path.mass.n_slices {
                return Err(LsvError::InvalidInput(format!(
                    "maturity {} not covered by the density path",
                    q.maturity
                )));
            }
            Ok(path.expectation(k as usize, |z| payoff_eval(q, z, path.r)))
        })
        .collect()
}

/// σ² ≡ V on every step: the pure reference Heston field.
pub fn reference_sigma2(problem: &CalibrationProblem) -> Grid3Field {
    let g = &problem.grid;
    let mut f = Grid3Field::zeros(FieldTag::Sigma2, problem.tgrid.n_steps, g.n_z, g.n_v);
    for k in 0..problem.tgrid.n_steps {
        let s = f.slice_mut(k);
        for i in 0..g.n_z {
            s[g.idx(i, 0)..g.idx(i, 0) + g.n_v].copy_from_slice(&g.v);
        }
    }
    f
}
