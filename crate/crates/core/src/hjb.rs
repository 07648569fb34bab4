//! Backward solve of the dual HJB equation
//!
//! ```text
//! ∂_tφ + Σ λ_i G_i δ_{t_i} + r ∂_Zφ + κ(θ-V)∂_Vφ + η̄ξV ∂_{ZV}φ + ½ξ²V ∂_{VV}φ
//!      + sup_x { x (∂_{ZZ}φ - ∂_Zφ)/2 - H(x; V, η̄²V) } = 0,   φ(T) = 0
//! ```
//!
//! Each step freezes the maximiser σ² computed from φ_{k+1} and advances the
//! resulting linear equation ∂_tφ + L_{σ²}φ = H(σ²) with one Douglas step.

use crate::adi::{first_derivative_weights, z_operator, DouglasStep, FixedOperators, LineOperator, Scratch};
use crate::cost::CostParams;
use crate::error::{LsvError, Result};
use crate::model::{CalibrationProblem, FieldTag, Grid2D, Grid3Field, HestonParams};

/// Output of [`solve_hjb`].
#[derive(Debug, Clone)]
pub struct HjbSolution {
    pub phi0: Vec<f64>,
    /// σ² per time step; slice k applies on [t_k, t_{k+1}].
    pub sigma2: Grid3Field,
    /// φ on every time node (post-jump values at maturities), when requested.
    pub phi_path: Option<Grid3Field>,
    /// φ(0, Z0, V0).
    pub objective_term: f64,
}

/// Local coefficients of the linear PDE stepped on one time interval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NodeCoefficients {
    pub drift_z: f64,
    pub drift_v: f64,
    pub diff_zz: f64,
    pub diff_vv: f64,
    pub mixed: f64,
}

/// Coefficients of ∂_tφ + L_{σ²}φ = H(σ²) for one time step.
#[derive(Debug, Clone)]
pub struct PdeCoefficients {
    pub heston: HestonParams,
    pub v: Vec<f64>,
    pub n_v: usize,
    pub sigma2: Vec<f64>,
    /// H(σ², V, η̄²V) per node; the right-hand side of the stepped equation.
    pub penalty: Vec<f64>,
}

impl PdeCoefficients {
    /// Coefficients with σ² given and no penalty, i.e. the pricing equation.
    pub fn pricing(grid: &Grid2D, heston: HestonParams, sigma2: Vec<f64>) -> Self {
        let n = sigma2.len();
        Self {
            heston,
            v: grid.v.clone(),
            n_v: grid.n_v,
            sigma2,
            penalty: vec![0.0; n],
        }
    }

    pub fn node(&self, i: usize, j: usize) -> NodeCoefficients {
        let hp = &self.heston;
        let v = self.v[j];
        let s2 = self.sigma2[i * self.n_v + j];
        NodeCoefficients {
            drift_z: hp.r - 0.5 * s2,
            drift_v: hp.kappa * (hp.theta - v),
            diff_zz: 0.5 * s2,
            diff_vv: 0.5 * hp.xi * hp.xi * v,
            mixed: hp.eta_bar * hp.xi * v,
        }
    }

    /// mixed² ≤ 4·diff_zz·diff_vv at every node (with rounding slack).
    pub fn is_elliptic(&self) -> bool {
        (0..self.sigma2.len()).all(|n| {
            let c = self.node(n / self.n_v, n % self.n_v);
            let lhs = c.mixed * c.mixed;
            let rhs = 4.0 * c.diff_zz * c.diff_vv;
            c.diff_zz >= 0.0 && lhs <= rhs * (1.0 + 1e-12) + 1e-300
        })
    }
}

/// Add Σ λ_i G_i over the quotes maturing at this slice; `payoffs[i]` holds
/// G_i sampled on the Z nodes.
pub fn apply_jump(phi: &mut [f64], grid: &Grid2D, maturing: &[usize], payoffs: &[Vec<f64>], lambda: &[f64]) {
    for &q in maturing {
        let l = lambda[q];
        if l == 0.0 {
            continue;
        }
        let g = &payoffs[q];
        for i in 0..grid.n_z {
            let row = &mut phi[grid.idx(i, 0)..grid.idx(i, 0) + grid.n_v];
            let add = l * g[i];
            for x in row {
                *x += add;
            }
        }
    }
}

/// q = (D_ZZφ - D_Zφ)/2 with the same stencils as the Z operator.
pub fn conjugate_slope(phi: &[f64], grid: &Grid2D) -> Vec<f64> {
    let mut q = vec![0.0; grid.len()];
    let h2 = grid.dz * grid.dz;
    for i in 0..grid.n_z {
        let wz = first_derivative_weights(i, grid.n_z, grid.dz);
        let interior = i > 0 && i + 1 < grid.n_z;
        for j in 0..grid.n_v {
            let node = grid.idx(i, j);
            let mut d1 = 0.0;
            for &(di, w) in &wz {
                d1 += w * phi[grid.idx((i as isize + di) as usize, j)];
            }
            let d2 = if interior {
                (phi[node + grid.n_v] - 2.0 * phi[node] + phi[node - grid.n_v]) / h2
            } else {
                0.0
            };
            q[node] = 0.5 * (d2 - d1);
        }
    }
    q
}

/// Upper bound σ² ≤ per_v·V + offset on the supremum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sigma2Cap {
    pub per_v: f64,
    pub offset: f64,
}

impl Sigma2Cap {
    pub const NONE: Sigma2Cap = Sigma2Cap {
        per_v: f64::INFINITY,
        offset: f64::INFINITY,
    };

    /// Largest σ² for which a Z mode of the Douglas step with implicit
    /// coefficient ωV keeps its amplification factor ≥ -1, halved in the
    /// grid-dependent part: σ² ≤ 2θωV + dz²/(2dt).
    pub fn stability(problem: &CalibrationProblem) -> Self {
        Self {
            per_v: 2.0 * problem.adi_theta * problem.implicit_ratio,
            offset: 0.5 * problem.grid.dz * problem.grid.dz / problem.tgrid.dt,
        }
    }

    pub fn at(&self, v: f64) -> f64 {
        if self.per_v.is_infinite() {
            f64::INFINITY
        } else {
            self.per_v * v + self.offset
        }
    }
}

/// Pointwise supremum: σ² = argmax_{x ≤ cap(V)} { x q - H(x; V, η̄²V) } at every
/// node. The objective is concave in x, so the capped maximiser is the clamp.
pub fn sup_step(
    phi_next: &[f64],
    grid: &Grid2D,
    heston: &HestonParams,
    cost: &CostParams,
    cap: Sigma2Cap,
) -> Result<(Vec<f64>, PdeCoefficients)> {
    if let Some(k) = phi_next.iter().position(|x| !x.is_finite()) {
        return Err(LsvError::NonFinite(format!("phi at node {k} before the supremum step")));
    }
    let q = conjugate_slope(phi_next, grid);
    let rho2 = heston.eta_bar * heston.eta_bar;
    let mut sigma2 = vec![0.0; grid.len()];
    let mut penalty = vec![0.0; grid.len()];
    for i in 0..grid.n_z {
        for j in 0..grid.n_v {
            let node = grid.idx(i, j);
            let v = grid.v[j];
            let s = rho2 * v;
            let x = cost.argmax(q[node], v, s)?.min(cap.at(v));
            sigma2[node] = x;
            if v - s > 0.0 {
                penalty[node] = cost.value(x, v, s);
            }
        }
    }
    let coeffs = PdeCoefficients {
        heston: *heston,
        v: grid.v.clone(),
        n_v: grid.n_v,
        sigma2: sigma2.clone(),
        penalty,
    };
    Ok((sigma2, coeffs))
}

/// One backward Douglas step of ∂_tφ + L_{σ²}φ = H with the coefficients of
/// `coeffs`.
pub fn douglas_step(
    phi_next: &[f64],
    grid: &Grid2D,
    coeffs: &PdeCoefficients,
    dt: f64,
    theta: f64,
    implicit_ratio: f64,
) -> Result<Vec<f64>> {
    if !coeffs.is_elliptic() {
        return Err(LsvError::Invariant("PDE coefficients are not elliptic".into()));
    }
    let fixed = FixedOperators::new(grid, &coeffs.heston, implicit_ratio);
    let a1 = z_operator(grid, coeffs.heston.r, &coeffs.sigma2);
    let source: Vec<f64> = coeffs.penalty.iter().map(|h| -h).collect();
    let mut out = Vec::with_capacity(grid.len());
    step_with(&fixed, &a1, dt, theta).backward(phi_next, Some(&source), &mut out, &mut Scratch::default())?;
    Ok(out)
}

fn step_with<'a>(fixed: &'a FixedOperators, a1: &'a LineOperator, dt: f64, theta: f64) -> DouglasStep<'a> {
    DouglasStep {
        a0: &fixed.a0,
        a1,
        a1_implicit: &fixed.a1_implicit,
        a2: &fixed.a2,
        dt,
        theta,
    }
}

/// Quotes maturing at each time node.
pub(crate) fn maturities_by_step(problem: &CalibrationProblem) -> Result<Vec<Vec<usize>>> {
    let steps = problem.maturity_steps()?;
    let mut by_step = vec![Vec::new(); problem.tgrid.n_nodes()];
    for (q, k) in steps.into_iter().enumerate() {
        by_step[k].push(q);
    }
    Ok(by_step)
}

/// Solve the HJB backward from φ(T) = 0 for multipliers `lambda`.
pub fn solve_hjb(problem: &CalibrationProblem, lambda: &[f64]) -> Result<HjbSolution> {
    solve_hjb_with(problem, lambda, false)
}

/// As [`solve_hjb`], optionally retaining the full φ path.
pub fn solve_hjb_with(problem: &CalibrationProblem, lambda: &[f64], keep_path: bool) -> Result<HjbSolution> {
    let grid = &problem.grid;
    let tg = &problem.tgrid;
    if lambda.len() != problem.quotes.len() {
        return Err(LsvError::DimensionMismatch(format!(
            "{} multipliers for {} quotes",
            lambda.len(),
            problem.quotes.len()
        )));
    }
    if let Some(l) = lambda.iter().find(|l| !l.is_finite()) {
        return Err(LsvError::NonFinite(format!("multiplier {l}")));
    }
    let by_step = maturities_by_step(problem)?;
    let cap = Sigma2Cap::stability(problem);
    let payoffs = problem.payoff_table();
    let fixed = FixedOperators::new(grid, &problem.heston, problem.implicit_ratio);
    let n = grid.len();

    let mut sigma2 = Grid3Field::zeros(FieldTag::Sigma2, tg.n_steps, grid.n_z, grid.n_v);
    let mut path = keep_path.then(|| Grid3Field::zeros(FieldTag::Phi, tg.n_nodes(), grid.n_z, grid.n_v));
    let mut phi = vec![0.0; n];
    let mut next = Vec::with_capacity(n);
    let mut scratch = Scratch::default();
    let mut source = vec![0.0; n];

    for k in (0..tg.n_steps).rev() {
        apply_jump(&mut phi, grid, &by_step[k + 1], &payoffs, lambda);
        if let Some(p) = path.as_mut() {
            p.slice_mut(k + 1).copy_from_slice(&phi);
        }
        let (s2, coeffs) = sup_step(&phi, grid, &problem.heston, &problem.cost, cap)?;
        for (dst, h) in source.iter_mut().zip(&coeffs.penalty) {
            *dst = -h;
        }
        let a1 = z_operator(grid, problem.heston.r, &s2);
        step_with(&fixed, &a1, tg.dt, problem.adi_theta).backward(&phi, Some(&source), &mut next, &mut scratch)?;
        sigma2.slice_mut(k).copy_from_slice(&s2);
        std::mem::swap(&mut phi, &mut next);
        if let Some(bad) = phi.iter().position(|x| !x.is_finite()) {
            return Err(LsvError::NonFinite(format!("phi at step {k}, node {bad}")));
        }
    }
    if let Some(p) = path.as_mut() {
        p.slice_mut(0).copy_from_slice(&phi);
    }
    let objective_term = phi[grid.spot_index()];
    Ok(HjbSolution {
        phi0: phi,
        sigma2,
        phi_path: path,
        objective_term,
    })
}

/// J(λ) = Σ λ_i c_i - φ(0, Z0, V0).
pub fn dual_objective(problem: &CalibrationProblem, lambda: &[f64]) -> Result<f64> {
    let sol = solve_hjb(problem, lambda)?;
    Ok(objective_from(problem, lambda, &sol))
}

pub fn objective_from(problem: &CalibrationProblem, lambda: &[f64], sol: &HjbSolution) -> f64 {
    let lin: f64 = lambda.iter().zip(&problem.quotes).map(|(l, q)| l * q.price).sum();
    lin - sol.objective_term
}
