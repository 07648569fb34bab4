//! Domain types shared by every solver: reference Heston parameters, the
//! spot state, option quotes and their payoffs, the tensor grids, and the
//! assembled calibration problem.

use serde::{Deserialize, Serialize};

use crate::cost::CostParams;
use crate::error::{LsvError, Result};

/// Relative tolerance used when deciding whether a time lies on the time grid.
const GRID_TIME_TOL: f64 = 1e-9;

/// Reference Heston dynamics for the variance factor plus the constant
/// correlation and the risk-free rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HestonParams {
    pub kappa: f64,
    pub theta: f64,
    pub xi: f64,
    pub eta_bar: f64,
    pub r: f64,
}

impl HestonParams {
    pub fn new(kappa: f64, theta: f64, xi: f64, eta_bar: f64, r: f64) -> Result<Self> {
        let hp = Self {
            kappa,
            theta,
            xi,
            eta_bar,
            r,
        };
        match hp.violations().into_iter().next() {
            Some(v) => Err(LsvError::InvalidInput(v.message)),
            None => Ok(hp),
        }
    }

    fn violations(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        for (name, value) in [("kappa", self.kappa), ("theta", self.theta), ("xi", self.xi)] {
            if !(value > 0.0 && value.is_finite()) {
                out.push(Violation::new(
                    ViolationKind::InvalidHestonParameter,
                    format!("{name}={value} must be positive and finite"),
                ));
            }
        }
        if !(-1.0..=1.0).contains(&self.eta_bar) {
            out.push(Violation::new(
                ViolationKind::CorrelationOutOfRange,
                format!("correlation outside [-1,1]: eta_bar={}", self.eta_bar),
            ));
        }
        if !self.r.is_finite() {
            out.push(Violation::new(
                ViolationKind::InvalidHestonParameter,
                format!("r={} must be finite", self.r),
            ));
        }
        out
    }

    /// Feller condition 2κθ ≥ ξ².
    pub fn feller(&self) -> bool {
        2.0 * self.kappa * self.theta >= self.xi * self.xi
    }
}

/// Initial state (Z0, V0): log spot and instantaneous variance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpotState {
    pub z0: f64,
    pub v0: f64,
}

impl SpotState {
    pub fn new(z0: f64, v0: f64) -> Result<Self> {
        if !z0.is_finite() || !(v0 > 0.0 && v0.is_finite()) {
            return Err(LsvError::InvalidInput(format!(
                "spot state requires finite z0 and v0 > 0, got z0={z0}, v0={v0}"
            )));
        }
        Ok(Self { z0, v0 })
    }

    pub fn from_price(s0: f64, v0: f64) -> Result<Self> {
        if !(s0 > 0.0) {
            return Err(LsvError::InvalidInput(format!("spot price {s0} must be positive")));
        }
        Self::new(s0.ln(), v0)
    }

    pub fn spot_price(&self) -> f64 {
        self.z0.exp()
    }
}

/// Payoff of a European claim as a function of the terminal log-price.
///
/// Call and put payoffs are discounted from their maturity with the model
/// rate. Tabulated payoffs are taken as already discounted and are linearly
/// interpolated in Z with flat extrapolation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Payoff {
    Call { strike: f64 },
    Put { strike: f64 },
    Tabulated { z: Vec<f64>, values: Vec<f64> },
}

impl Payoff {
    pub fn kind_name(&self) -> &'static str {
        match self {
            Payoff::Call { .. } => "call",
            Payoff::Put { .. } => "put",
            Payoff::Tabulated { .. } => "tabulated",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptionQuote {
    pub payoff: Payoff,
    pub maturity: f64,
    /// Discounted market price.
    pub price: f64,
}

impl OptionQuote {
    pub fn call(strike: f64, maturity: f64, price: f64) -> Self {
        Self {
            payoff: Payoff::Call { strike },
            maturity,
            price,
        }
    }

    pub fn put(strike: f64, maturity: f64, price: f64) -> Self {
        Self {
            payoff: Payoff::Put { strike },
            maturity,
            price,
        }
    }

    pub fn strike(&self) -> Option<f64> {
        match self.payoff {
            Payoff::Call { strike } | Payoff::Put { strike } => Some(strike),
            Payoff::Tabulated { .. } => None,
        }
    }
}

/// Discounted payoff G(z) of `q`, e.g. e^{-r t}(e^z - K)^+ for a call.
pub fn payoff_eval(q: &OptionQuote, z: f64, r: f64) -> f64 {
    let df = (-r * q.maturity).exp();
    match &q.payoff {
        Payoff::Call { strike } => df * (z.exp() - strike).max(0.0),
        Payoff::Put { strike } => df * (strike - z.exp()).max(0.0),
        Payoff::Tabulated { z: zs, values } => interpolate_flat(zs, values, z),
    }
}

fn interpolate_flat(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    match xs.len() {
        0 => 0.0,
        1 => ys[0],
        n => {
            if x <= xs[0] {
                return ys[0];
            }
            if x >= xs[n - 1] {
                return ys[n - 1];
            }
            let k = xs.partition_point(|&p| p <= x).clamp(1, n - 1);
            let w = (x - xs[k - 1]) / (xs[k] - xs[k - 1]);
            ys[k - 1] + w * (ys[k] - ys[k - 1])
        }
    }
}

/// How to lay out the spatial and temporal grids before snapping the spot
/// onto a node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DomainSpec {
    /// Half width of the Z domain in units of √V0, used when `z_range` is unset.
    pub z_half_width: f64,
    pub z_range: Option<(f64, f64)>,
    pub v_range: (f64, f64),
    pub n_z: usize,
    pub n_v: usize,
    pub horizon: f64,
    pub n_steps: usize,
}

impl Default for DomainSpec {
    fn default() -> Self {
        Self {
            z_half_width: 4.0,
            z_range: None,
            v_range: (0.0, 0.5),
            n_z: 51,
            n_v: 51,
            horizon: 1.0,
            n_steps: 100,
        }
    }
}

/// Uniform (Z, V) tensor grid. Nodes are stored V-fastest: `idx(i, j) = i * n_v + j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid2D {
    pub z_min: f64,
    pub z_max: f64,
    pub v_min: f64,
    pub v_max: f64,
    pub n_z: usize,
    pub n_v: usize,
    pub dz: f64,
    pub dv: f64,
    pub z: Vec<f64>,
    pub v: Vec<f64>,
    /// Node carrying (Z0, V0).
    pub spot_node: (usize, usize),
    /// Shift applied to the requested layout to put the spot on a node.
    pub snap_displacement: (f64, f64),
}

impl Grid2D {
    /// Uniform grid without any spot snapping; the spot node is the nearest node.
    pub fn uniform(
        (z_min, z_max): (f64, f64),
        (v_min, v_max): (f64, f64),
        n_z: usize,
        n_v: usize,
    ) -> Result<Self> {
        check_nodes("z", n_z)?;
        check_nodes("v", n_v)?;
        if !(z_min < z_max) || !(0.0 <= v_min && v_min < v_max) {
            return Err(LsvError::InvalidInput(format!(
                "grid bounds must satisfy z_min < z_max and 0 <= v_min < v_max, got \
                 z=[{z_min}, {z_max}], v=[{v_min}, {v_max}]"
            )));
        }
        let dz = (z_max - z_min) / (n_z - 1) as f64;
        let dv = (v_max - v_min) / (n_v - 1) as f64;
        let z = axis(z_min, z_max, n_z);
        let v = axis(v_min, v_max, n_v);
        Ok(Self {
            z_min,
            z_max,
            v_min,
            v_max,
            n_z,
            n_v,
            dz,
            dv,
            z,
            v,
            spot_node: (n_z / 2, n_v / 2),
            snap_displacement: (0.0, 0.0),
        })
    }

    #[inline]
    pub fn idx(&self, i: usize, j: usize) -> usize {
        i * self.n_v + j
    }

    pub fn len(&self) -> usize {
        self.n_z * self.n_v
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn spot_index(&self) -> usize {
        self.idx(self.spot_node.0, self.spot_node.1)
    }

    /// Trapezoidal quadrature weight of node `(i, j)`.
    pub fn weight(&self, i: usize, j: usize) -> f64 {
        let wz = if i == 0 || i + 1 == self.n_z { 0.5 } else { 1.0 };
        let wv = if j == 0 || j + 1 == self.n_v { 0.5 } else { 1.0 };
        wz * wv * self.dz * self.dv
    }

    pub fn weights(&self) -> Vec<f64> {
        let mut w = Vec::with_capacity(self.len());
        for i in 0..self.n_z {
            for j in 0..self.n_v {
                w.push(self.weight(i, j));
            }
        }
        w
    }
}

fn axis(min: f64, max: f64, n: usize) -> Vec<f64> {
    let h = (max - min) / (n - 1) as f64;
    let mut x: Vec<f64> = (0..n).map(|k| min + k as f64 * h).collect();
    x[n - 1] = max;
    x
}

fn check_nodes(axis: &'static str, count: usize) -> Result<()> {
    if count < 3 {
        return Err(LsvError::TooFewNodes { axis, count });
    }
    Ok(())
}

/// Uniform time mesh t_k = k·dt, k = 0..=n_steps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub horizon: f64,
    pub n_steps: usize,
    pub dt: f64,
}

impl TimeGrid {
    pub fn new(horizon: f64, n_steps: usize) -> Result<Self> {
        if !(horizon > 0.0 && horizon.is_finite()) || n_steps == 0 {
            return Err(LsvError::InvalidInput(format!(
                "time grid needs horizon > 0 and at least one step, got T={horizon}, n={n_steps}"
            )));
        }
        Ok(Self {
            horizon,
            n_steps,
            dt: horizon / n_steps as f64,
        })
    }

    pub fn time(&self, k: usize) -> f64 {
        if k == self.n_steps {
            self.horizon
        } else {
            k as f64 * self.dt
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.n_steps + 1
    }

    /// Index k with t_k == t, if `t` lies on the mesh.
    pub fn step_of(&self, t: f64) -> Option<usize> {
        let x = t / self.dt;
        let k = x.round();
        if k < 0.0 || k > self.n_steps as f64 {
            return None;
        }
        ((x - k).abs() <= GRID_TIME_TOL * x.abs().max(1.0)).then_some(k as usize)
    }

    /// Nearest mesh time to `t`.
    pub fn snap(&self, t: f64) -> f64 {
        let k = (t / self.dt).round().clamp(0.0, self.n_steps as f64) as usize;
        self.time(k)
    }
}

/// Build the spatial and time grids, moving the spatial layout so that
/// (Z0, V0) lands exactly on a node.
///
/// The Z bounds are translated together by the offset to the nearest node.
/// V bounds are translated the same way unless that would push `v_min` below
/// zero, in which case the V spacing is stretched instead.
pub fn build_grids(spec: &DomainSpec, spot: SpotState) -> Result<(Grid2D, TimeGrid)> {
    check_nodes("z", spec.n_z)?;
    check_nodes("v", spec.n_v)?;
    let (z_lo, z_hi) = spec.z_range.unwrap_or_else(|| {
        let w = spec.z_half_width * spot.v0.sqrt();
        (spot.z0 - w, spot.z0 + w)
    });
    let (v_lo, v_hi) = spec.v_range;
    let mut grid = Grid2D::uniform((z_lo, z_hi), (v_lo, v_hi), spec.n_z, spec.n_v)?;
    if !(z_lo..=z_hi).contains(&spot.z0) {
        return Err(LsvError::SpotOutsideDomain {
            coordinate: "z0",
            value: spot.z0,
            min: z_lo,
            max: z_hi,
        });
    }
    if !(v_lo..=v_hi).contains(&spot.v0) {
        return Err(LsvError::SpotOutsideDomain {
            coordinate: "v0",
            value: spot.v0,
            min: v_lo,
            max: v_hi,
        });
    }

    // Z: translate both bounds.
    let i0 = (((spot.z0 - z_lo) / grid.dz).round() as usize).min(spec.n_z - 1);
    let dz_shift = spot.z0 - (z_lo + i0 as f64 * grid.dz);
    if dz_shift != 0.0 {
        grid.z_min += dz_shift;
        grid.z_max += dz_shift;
        grid.z = axis(grid.z_min, grid.z_max, spec.n_z);
    }
    grid.z[i0] = spot.z0;

    // V: translate when possible, otherwise stretch the spacing.
    let j0 = (((spot.v0 - v_lo) / grid.dv).round() as usize).min(spec.n_v - 1);
    let dv_shift = spot.v0 - (v_lo + j0 as f64 * grid.dv);
    if dv_shift.abs() > 1e-12 * grid.dv {
        if v_lo + dv_shift >= 0.0 {
            grid.v_min += dv_shift;
            grid.v_max += dv_shift;
        } else {
            grid.dv = (spot.v0 - v_lo) / j0 as f64;
            grid.v_max = v_lo + (spec.n_v - 1) as f64 * grid.dv;
        }
        grid.v = axis(grid.v_min, grid.v_max, spec.n_v);
    }
    grid.v[j0] = spot.v0;

    grid.spot_node = (i0, j0);
    grid.snap_displacement = (dz_shift, dv_shift);
    let tgrid = TimeGrid::new(spec.horizon, spec.n_steps)?;
    Ok((grid, tgrid))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FieldTag {
    Phi,
    Sigma2,
    Eta,
    Density,
    PriceSlice,
}

impl FieldTag {
    pub fn as_str(&self) -> &'static str {
        match self {
            FieldTag::Phi => "phi",
            FieldTag::Sigma2 => "sigma2",
            FieldTag::Eta => "eta",
            FieldTag::Density => "density",
            FieldTag::PriceSlice => "price-slice",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "phi" => FieldTag::Phi,
            "sigma2" => FieldTag::Sigma2,
            "eta" => FieldTag::Eta,
            "density" => FieldTag::Density,
            "price-slice" => FieldTag::PriceSlice,
            _ => return None,
        })
    }
}

/// Scalar field sampled on time slices of a [`Grid2D`].
///
/// Fields living on time nodes (φ, density) have `n_steps + 1` slices; fields
/// living on time steps (σ², η) have `n_steps` slices, slice k covering
/// [t_k, t_{k+1}].
#[derive(Debug, Clone, PartialEq)]
pub struct Grid3Field {
    pub tag: FieldTag,
    pub n_slices: usize,
    pub n_z: usize,
    pub n_v: usize,
    pub data: Vec<f64>,
}

impl Grid3Field {
    pub fn zeros(tag: FieldTag, n_slices: usize, n_z: usize, n_v: usize) -> Self {
        Self {
            tag,
            n_slices,
            n_z,
            n_v,
            data: vec![0.0; n_slices * n_z * n_v],
        }
    }

    pub fn from_slices(tag: FieldTag, n_z: usize, n_v: usize, slices: Vec<Vec<f64>>) -> Result<Self> {
        let len = n_z * n_v;
        let mut data = Vec::with_capacity(len * slices.len());
        for (k, s) in slices.iter().enumerate() {
            if s.len() != len {
                return Err(LsvError::DimensionMismatch(format!(
                    "slice {k} has {} values, expected {len}",
                    s.len()
                )));
            }
            data.extend_from_slice(s);
        }
        Ok(Self {
            tag,
            n_slices: slices.len(),
            n_z,
            n_v,
            data,
        })
    }

    pub fn slice_len(&self) -> usize {
        self.n_z * self.n_v
    }

    pub fn slice(&self, k: usize) -> &[f64] {
        let n = self.slice_len();
        &self.data[k * n..(k + 1) * n]
    }

    pub fn slice_mut(&mut self, k: usize) -> &mut [f64] {
        let n = self.slice_len();
        &mut self.data[k * n..(k + 1) * n]
    }

    #[inline]
    pub fn get(&self, k: usize, i: usize, j: usize) -> f64 {
        self.data[(k * self.n_z + i) * self.n_v + j]
    }

    pub fn matches_grid(&self, grid: &Grid2D) -> bool {
        self.n_z == grid.n_z && self.n_v == grid.n_v
    }

    pub fn min_value(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

/// Everything the solvers need: reference dynamics, initial state, quotes,
/// discretisation and the cost.
pub const DEFAULT_IMPLICIT_RATIO: f64 = 1.0;

#[derive(Debug, Clone)]
pub struct CalibrationProblem {
    pub heston: HestonParams,
    pub spot: SpotState,
    pub quotes: Vec<OptionQuote>,
    pub grid: Grid2D,
    pub tgrid: TimeGrid,
    pub cost: CostParams,
    /// Stopping tolerance on the sup-norm of the dual gradient.
    pub epsilon: f64,
    /// Implicit weight of the Douglas stages.
    pub adi_theta: f64,
    /// ω: the implicit Z stage uses σ² = ωV whatever the maximiser is, so a
    /// step is affine in σ² node by node.
    pub implicit_ratio: f64,
}

impl CalibrationProblem {
    pub fn new(
        heston: HestonParams,
        spot: SpotState,
        quotes: Vec<OptionQuote>,
        domain: &DomainSpec,
        cost: CostParams,
        epsilon: f64,
    ) -> Result<Self> {
        let (grid, tgrid) = build_grids(domain, spot)?;
        Ok(Self {
            heston,
            spot,
            quotes,
            grid,
            tgrid,
            cost,
            epsilon,
            adi_theta: 0.5,
            implicit_ratio: DEFAULT_IMPLICIT_RATIO,
        })
    }

    /// Time-grid index of each quote's maturity.
    pub fn maturity_steps(&self) -> Result<Vec<usize>> {
        self.quotes
            .iter()
            .enumerate()
            .map(|(n, q)| {
                self.tgrid
                    .step_of(q.maturity)
                    .filter(|&k| k > 0)
                    .ok_or_else(|| {
                        LsvError::InvalidInput(format!(
                            "quote {n}: maturity {} not on time grid (dt={})",
                            q.maturity, self.tgrid.dt
                        ))
                    })
            })
            .collect()
    }

    /// Discounted payoff of every quote sampled on the Z nodes.
    pub fn payoff_table(&self) -> Vec<Vec<f64>> {
        self.quotes
            .iter()
            .map(|q| self.grid.z.iter().map(|&z| payoff_eval(q, z, self.heston.r)).collect())
            .collect()
    }

    pub fn with_quotes(&self, quotes: Vec<OptionQuote>) -> Self {
        Self {
            quotes,
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ViolationKind {
    MaturityOffGrid,
    MaturityOutOfRange,
    InvalidPrice,
    UnboundedPayoff,
    CorrelationOutOfRange,
    InvalidHestonParameter,
    InvalidSpot,
    SpotOffGrid,
    InvalidTolerance,
    InvalidAdiWeight,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub kind: ViolationKind,
    pub message: String,
}

impl Violation {
    fn new(kind: ViolationKind, message: String) -> Self {
        Self { kind, message }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_admissible(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn has(&self, kind: ViolationKind) -> bool {
        self.violations.iter().any(|v| v.kind == kind)
    }

    pub fn into_result(self) -> Result<()> {
        if self.is_admissible() {
            return Ok(());
        }
        let msgs: Vec<_> = self.violations.into_iter().map(|v| v.message).collect();
        Err(LsvError::InvalidInput(msgs.join("; ")))
    }
}

pub fn validate_problem(p: &CalibrationProblem) -> ValidationReport {
    let mut violations = p.heston.violations();
    if !(p.spot.v0 > 0.0) || !p.spot.z0.is_finite() {
        violations.push(Violation::new(
            ViolationKind::InvalidSpot,
            format!("spot state z0={}, v0={} is not admissible", p.spot.z0, p.spot.v0),
        ));
    }
    let (i0, j0) = p.grid.spot_node;
    if i0 >= p.grid.n_z || j0 >= p.grid.n_v || p.grid.z[i0] != p.spot.z0 || p.grid.v[j0] != p.spot.v0 {
        violations.push(Violation::new(
            ViolationKind::SpotOffGrid,
            "spot (Z0, V0) does not coincide with the recorded grid node".into(),
        ));
    }
    if !(p.epsilon > 0.0) {
        violations.push(Violation::new(
            ViolationKind::InvalidTolerance,
            format!("stopping tolerance epsilon={} must be positive", p.epsilon),
        ));
    }
    if !(0.0..=1.0).contains(&p.adi_theta) {
        violations.push(Violation::new(
            ViolationKind::InvalidAdiWeight,
            format!("ADI weight {} outside [0, 1]", p.adi_theta),
        ));
    }
    if !(p.implicit_ratio > 0.0 && p.implicit_ratio.is_finite()) {
        violations.push(Violation::new(
            ViolationKind::InvalidAdiWeight,
            format!("implicit ratio {} must be positive", p.implicit_ratio),
        ));
    }
    for (n, q) in p.quotes.iter().enumerate() {
        if !(q.maturity > 0.0 && q.maturity <= p.tgrid.horizon * (1.0 + GRID_TIME_TOL)) {
            violations.push(Violation::new(
                ViolationKind::MaturityOutOfRange,
                format!("quote {n}: maturity {} outside (0, {}]", q.maturity, p.tgrid.horizon),
            ));
        } else if p.tgrid.step_of(q.maturity).is_none() {
            violations.push(Violation::new(
                ViolationKind::MaturityOffGrid,
                format!(
                    "quote {n}: maturity not on time grid ({} is not a multiple of dt={})",
                    q.maturity, p.tgrid.dt
                ),
            ));
        }
        if !(q.price >= 0.0 && q.price.is_finite()) {
            violations.push(Violation::new(
                ViolationKind::InvalidPrice,
                format!("quote {n}: price {} must be finite and nonnegative", q.price),
            ));
        }
        let bounded = match &q.payoff {
            Payoff::Call { strike } | Payoff::Put { strike } => *strike > 0.0 && strike.is_finite(),
            Payoff::Tabulated { z, values } => {
                !z.is_empty()
                    && z.len() == values.len()
                    && z.windows(2).all(|w| w[0] < w[1])
                    && values.iter().all(|v| v.is_finite())
            }
        };
        let finite_on_grid = bounded
            && p.grid.z.iter().all(|&z| payoff_eval(q, z, p.heston.r).is_finite());
        if !finite_on_grid {
            violations.push(Violation::new(
                ViolationKind::UnboundedPayoff,
                format!("quote {n}: {} payoff is not bounded on the truncated domain", q.payoff.kind_name()),
            ));
        }
    }
    ValidationReport { violations }
}
