//! Finite-difference operators on the (Z, V) grid and the Douglas ADI step.
//!
//! The backward generator is split as L = A0 + A1 + A2:
//!
//! * A0: mixed term η̄ξV ∂_{ZV}, always explicit;
//! * A1: (r - σ²/2) ∂_Z + ½σ² ∂_{ZZ}, tridiagonal along Z lines;
//! * A2: κ(θ - V) ∂_V + ½ξ²V ∂_{VV}, tridiagonal along V lines.
//!
//! Interior stencils are 3-point centred. On every edge the outward second
//! derivative is dropped and first derivatives become one-sided, so each
//! operator annihilates constants exactly. The forward (density) step is the
//! exact matrix transpose of the backward step.

use crate::error::{LsvError, Result};
use crate::model::{Grid2D, HestonParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Z,
    V,
}

impl Direction {
    fn name(self) -> &'static str {
        match self {
            Direction::Z => "z",
            Direction::V => "v",
        }
    }
}

/// Layout of the grid lines along one direction.
#[derive(Debug, Clone, Copy)]
struct Lines {
    count: usize,
    len: usize,
    stride: usize,
    n_v: usize,
    dir: Direction,
}

impl Lines {
    fn of(grid: &Grid2D, dir: Direction) -> Self {
        match dir {
            Direction::Z => Self {
                count: grid.n_v,
                len: grid.n_z,
                stride: grid.n_v,
                n_v: grid.n_v,
                dir,
            },
            Direction::V => Self {
                count: grid.n_z,
                len: grid.n_v,
                stride: 1,
                n_v: grid.n_v,
                dir,
            },
        }
    }

    #[inline]
    fn offset(&self, line: usize) -> usize {
        match self.dir {
            Direction::Z => line,
            Direction::V => line * self.n_v,
        }
    }
}

/// Weights of the first-derivative stencil at `k` of `n` nodes with spacing `h`:
/// centred in the interior, one-sided on the edges.
#[inline]
pub fn first_derivative_weights(k: usize, n: usize, h: f64) -> [(isize, f64); 2] {
    if k == 0 {
        [(0, -1.0 / h), (1, 1.0 / h)]
    } else if k + 1 == n {
        [(-1, -1.0 / h), (0, 1.0 / h)]
    } else {
        [(-1, -0.5 / h), (1, 0.5 / h)]
    }
}

/// Tridiagonal operator acting along lines of one direction, stored per node.
#[derive(Debug, Clone)]
pub struct LineOperator {
    lines: Lines,
    lo: Vec<f64>,
    di: Vec<f64>,
    up: Vec<f64>,
}

impl LineOperator {
    /// Convection-diffusion operator `drift ∂ + diff ∂²` along `dir` with
    /// per-node coefficients.
    pub fn convection_diffusion(
        grid: &Grid2D,
        dir: Direction,
        drift: impl Fn(usize, usize) -> f64,
        diff: impl Fn(usize, usize) -> f64,
    ) -> Self {
        let lines = Lines::of(grid, dir);
        let h = match dir {
            Direction::Z => grid.dz,
            Direction::V => grid.dv,
        };
        let n = grid.len();
        let (mut lo, mut di, mut up) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
        for i in 0..grid.n_z {
            for j in 0..grid.n_v {
                let node = grid.idx(i, j);
                let k = match dir {
                    Direction::Z => i,
                    Direction::V => j,
                };
                let b = drift(i, j);
                if k == 0 {
                    di[node] = -b / h;
                    up[node] = b / h;
                } else if k + 1 == lines.len {
                    lo[node] = -b / h;
                    di[node] = b / h;
                } else {
                    let d = diff(i, j) / (h * h);
                    let c = 0.5 * b / h;
                    lo[node] = d - c;
                    di[node] = -2.0 * d;
                    up[node] = d + c;
                }
            }
        }
        Self { lines, lo, di, up }
    }

    /// out += factor · A x
    pub fn apply_add(&self, x: &[f64], factor: f64, out: &mut [f64]) {
        let l = self.lines;
        for line in 0..l.count {
            let off = l.offset(line);
            for k in 0..l.len {
                let node = off + k * l.stride;
                let mut acc = self.di[node] * x[node];
                if k > 0 {
                    acc += self.lo[node] * x[node - l.stride];
                }
                if k + 1 < l.len {
                    acc += self.up[node] * x[node + l.stride];
                }
                out[node] += factor * acc;
            }
        }
    }

    /// out += factor · Aᵀ x
    pub fn apply_transpose_add(&self, x: &[f64], factor: f64, out: &mut [f64]) {
        let l = self.lines;
        for line in 0..l.count {
            let off = l.offset(line);
            for k in 0..l.len {
                let node = off + k * l.stride;
                let mut acc = self.di[node] * x[node];
                if k > 0 {
                    let prev = node - l.stride;
                    acc += self.up[prev] * x[prev];
                }
                if k + 1 < l.len {
                    let next = node + l.stride;
                    acc += self.lo[next] * x[next];
                }
                out[node] += factor * acc;
            }
        }
    }

    /// Solve (I - w A) y = rhs in place, one Thomas sweep per line.
    pub fn solve_shifted(&self, w: f64, rhs: &mut [f64], scratch: &mut Scratch) -> Result<()> {
        self.solve_impl(w, rhs, scratch, false)
    }

    /// Solve (I - w A)ᵀ y = rhs in place.
    pub fn solve_shifted_transpose(&self, w: f64, rhs: &mut [f64], scratch: &mut Scratch) -> Result<()> {
        self.solve_impl(w, rhs, scratch, true)
    }

    fn solve_impl(&self, w: f64, rhs: &mut [f64], scratch: &mut Scratch, transpose: bool) -> Result<()> {
        let l = self.lines;
        scratch.ensure(l.len);
        for line in 0..l.count {
            let off = l.offset(line);
            let node = |k: usize| off + k * l.stride;
            for k in 0..l.len {
                let n = node(k);
                scratch.b[k] = 1.0 - w * self.di[n];
                if transpose {
                    scratch.a[k] = if k > 0 { -w * self.up[node(k - 1)] } else { 0.0 };
                    scratch.c[k] = if k + 1 < l.len { -w * self.lo[node(k + 1)] } else { 0.0 };
                } else {
                    scratch.a[k] = -w * self.lo[n];
                    scratch.c[k] = -w * self.up[n];
                }
                scratch.d[k] = rhs[n];
            }
            thomas(&scratch.a, &scratch.b, &scratch.c, &mut scratch.d, &mut scratch.cp, l.len).map_err(
                |(row, pivot)| LsvError::SingularSystem {
                    direction: l.dir.name(),
                    line,
                    row,
                    pivot,
                },
            )?;
            for k in 0..l.len {
                rhs[node(k)] = scratch.d[k];
            }
        }
        Ok(())
    }
}

/// Reusable buffers for the line solves.
#[derive(Debug, Default, Clone)]
pub struct Scratch {
    a: Vec<f64>,
    b: Vec<f64>,
    c: Vec<f64>,
    d: Vec<f64>,
    cp: Vec<f64>,
}

impl Scratch {
    fn ensure(&mut self, n: usize) {
        for v in [&mut self.a, &mut self.b, &mut self.c, &mut self.d, &mut self.cp] {
            if v.len() < n {
                v.resize(n, 0.0);
            }
        }
    }
}

/// Thomas algorithm for sub-diagonal `a`, diagonal `b`, super-diagonal `c`.
/// Solution overwrites `d`. Returns the offending row and pivot on breakdown.
pub fn thomas(a: &[f64], b: &[f64], c: &[f64], d: &mut [f64], cp: &mut [f64], n: usize) -> std::result::Result<(), (usize, f64)> {
    let mut m = b[0];
    if !(m.abs() > f64::MIN_POSITIVE) || !m.is_finite() {
        return Err((0, m));
    }
    cp[0] = c[0] / m;
    d[0] /= m;
    for k in 1..n {
        m = b[k] - a[k] * cp[k - 1];
        if !(m.abs() > f64::MIN_POSITIVE) || !m.is_finite() {
            return Err((k, m));
        }
        cp[k] = c[k] / m;
        d[k] = (d[k] - a[k] * d[k - 1]) / m;
    }
    for k in (0..n - 1).rev() {
        d[k] -= cp[k] * d[k + 1];
    }
    Ok(())
}

/// Mixed-derivative operator coef(i,j)·D_Z D_V built from the one-dimensional
/// first-derivative stencils.
#[derive(Debug, Clone)]
pub struct MixedOperator {
    n_z: usize,
    n_v: usize,
    dz: f64,
    dv: f64,
    coef: Vec<f64>,
}

impl MixedOperator {
    pub fn new(grid: &Grid2D, coef: impl Fn(usize, usize) -> f64) -> Self {
        let mut c = vec![0.0; grid.len()];
        for i in 0..grid.n_z {
            for j in 0..grid.n_v {
                c[grid.idx(i, j)] = coef(i, j);
            }
        }
        Self {
            n_z: grid.n_z,
            n_v: grid.n_v,
            dz: grid.dz,
            dv: grid.dv,
            coef: c,
        }
    }

    pub fn apply_add(&self, x: &[f64], factor: f64, out: &mut [f64]) {
        self.visit(|node, src, w| out[node] += factor * w * x[src]);
    }

    pub fn apply_transpose_add(&self, x: &[f64], factor: f64, out: &mut [f64]) {
        self.visit(|node, src, w| out[src] += factor * w * x[node]);
    }

    /// Calls `f(row, column, weight)` for every nonzero entry.
    fn visit(&self, mut f: impl FnMut(usize, usize, f64)) {
        for i in 0..self.n_z {
            let wz = first_derivative_weights(i, self.n_z, self.dz);
            for j in 0..self.n_v {
                let node = i * self.n_v + j;
                let c = self.coef[node];
                if c == 0.0 {
                    continue;
                }
                let wv = first_derivative_weights(j, self.n_v, self.dv);
                for &(di, a) in &wz {
                    for &(dj, b) in &wv {
                        let src = (i as isize + di) as usize * self.n_v + (j as isize + dj) as usize;
                        f(node, src, c * a * b);
                    }
                }
            }
        }
    }
}

/// The σ²-independent operators: A0, A2, and the Z operator used in the
/// implicit Z stage, built from σ² = ωV.
#[derive(Debug, Clone)]
pub struct FixedOperators {
    pub a0: MixedOperator,
    pub a1_implicit: LineOperator,
    pub a2: LineOperator,
}

impl FixedOperators {
    pub fn new(grid: &Grid2D, hp: &HestonParams, implicit_ratio: f64) -> Self {
        let v = &grid.v;
        let a0 = MixedOperator::new(grid, |_, j| hp.eta_bar * hp.xi * v[j]);
        let a2 = LineOperator::convection_diffusion(
            grid,
            Direction::V,
            |_, j| hp.kappa * (hp.theta - v[j]),
            |_, j| 0.5 * hp.xi * hp.xi * v[j],
        );
        let s2: Vec<f64> = (0..grid.len()).map(|n| implicit_ratio * v[n % grid.n_v]).collect();
        let a1_implicit = z_operator(grid, hp.r, &s2);
        Self { a0, a1_implicit, a2 }
    }
}

/// A1 for a given σ² slice.
pub fn z_operator(grid: &Grid2D, r: f64, sigma2: &[f64]) -> LineOperator {
    LineOperator::convection_diffusion(
        grid,
        Direction::Z,
        |i, j| r - 0.5 * sigma2[grid.idx(i, j)],
        |i, j| 0.5 * sigma2[grid.idx(i, j)],
    )
}

/// One Douglas step. The explicit stage uses `a1`; the implicit Z stage uses
/// `a1_implicit`, which may differ so that the step is pointwise affine in σ².
pub struct DouglasStep<'a> {
    pub a0: &'a MixedOperator,
    pub a1: &'a LineOperator,
    pub a1_implicit: &'a LineOperator,
    pub a2: &'a LineOperator,
    pub dt: f64,
    pub theta: f64,
}

impl DouglasStep<'_> {
    /// Backward step φ_{k+1} → φ_k of ∂_tφ + Lφ + f = 0 with f entering the
    /// explicit stage.
    pub fn backward(&self, phi_next: &[f64], source: Option<&[f64]>, out: &mut Vec<f64>, scratch: &mut Scratch) -> Result<()> {
        let n = phi_next.len();
        let (dt, w) = (self.dt, self.theta * self.dt);
        let mut a2x = vec![0.0; n];
        self.a2.apply_add(phi_next, 1.0, &mut a2x);
        out.clear();
        out.extend_from_slice(phi_next);
        self.a0.apply_add(phi_next, dt, out);
        self.a1.apply_add(phi_next, dt, out);
        self.a1_implicit.apply_add(phi_next, -w, out);
        for k in 0..n {
            out[k] += dt * a2x[k];
        }
        if let Some(f) = source {
            for k in 0..n {
                out[k] += dt * f[k];
            }
        }
        self.a1_implicit.solve_shifted(w, out, scratch)?;
        for k in 0..n {
            out[k] -= w * a2x[k];
        }
        self.a2.solve_shifted(w, out, scratch)?;
        Ok(())
    }

    /// Transposed step m_k → m_{k+1} = Mᵀ m_k of the source-free backward
    /// map M; transports probability mass forward in time.
    pub fn forward_adjoint(&self, mass: &[f64], out: &mut Vec<f64>, scratch: &mut Scratch) -> Result<()> {
        let n = mass.len();
        let (dt, w) = (self.dt, self.theta * self.dt);
        let mut p2 = mass.to_vec();
        self.a2.solve_shifted_transpose(w, &mut p2, scratch)?;
        let mut p1 = p2.clone();
        self.a1_implicit.solve_shifted_transpose(w, &mut p1, scratch)?;
        out.clear();
        out.extend_from_slice(&p1);
        self.a0.apply_transpose_add(&p1, dt, out);
        self.a1.apply_transpose_add(&p1, dt, out);
        self.a1_implicit.apply_transpose_add(&p1, -w, out);
        self.a2.apply_transpose_add(&p1, dt, out);
        self.a2.apply_transpose_add(&p2, -w, out);
        debug_assert_eq!(out.len(), n);
        Ok(())
    }
}
