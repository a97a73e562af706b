//! The Alternate Projection Newton pipeline.
//!
//! 1. Angles are added one at a time: a grid line search over `L_Do([θ_k; θ])`
//!    proposes the new angle and a damped Newton iteration on `L_Do` refines
//!    all `k + 1` angles.
//! 2. Noise inverse deviations are initialised by covariance fitting.
//! 3. A damped Newton iteration on `L_D` or `L_S` refines `(θ, λ)` jointly, or
//!    alternately over `θ` and `λ` for the `*-alt` variants.

use std::f64::consts::{FRAC_PI_2, PI};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::array::{steering_set, ArrayGeometry, NoiseProfile};
use crate::derivatives::{self, CostKind, HessianMode};
use crate::linalg::{self, measure_ops, CMat, OpCount, RMat, RVec};
use crate::ml::{self, SampleCovariance, WhitenedWorkspace};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NewtonOptions {
    pub max_iters: usize,
    /// Stop once an accepted step has `‖Δx‖∞ < step_tol`.
    pub step_tol: f64,
    pub backtrack_factor: f64,
    pub min_mu: f64,
    pub hessian_mode: HessianMode,
    /// A `λ_m` beyond this multiple of its starting value is declared divergent.
    pub divergence_factor: f64,
    /// Outer alternations for the `*-alt` variants.
    pub max_outer: usize,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        Self {
            max_iters: 50,
            step_tol: 1e-8,
            backtrack_factor: 0.5,
            min_mu: 2f64.powi(-20),
            hessian_mode: HessianMode::Full,
            divergence_factor: 1e6,
            max_outer: 100,
        }
    }
}

impl NewtonOptions {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters < 1 {
            return Err(Error::InvalidInput("max_iters must be at least 1".into()));
        }
        if !(self.step_tol > 0.0) {
            return Err(Error::InvalidInput("step_tol must be positive".into()));
        }
        if !(self.backtrack_factor > 0.0 && self.backtrack_factor < 1.0) {
            return Err(Error::InvalidInput("backtrack_factor must lie in (0, 1)".into()));
        }
        if !(self.min_mu > 0.0 && self.min_mu < 1.0) {
            return Err(Error::InvalidInput("min_mu must lie in (0, 1)".into()));
        }
        if !(self.divergence_factor > 1.0) {
            return Err(Error::InvalidInput("divergence_factor must exceed 1".into()));
        }
        Ok(())
    }
}

/// A smooth function to maximise, with gradient and Hessian.
pub trait Objective {
    fn value(&self, x: &[f64]) -> Result<f64>;
    fn value_grad_hess(&self, x: &[f64], mode: HessianMode) -> Result<(f64, RVec, RMat)>;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub iteration: usize,
    pub cost: f64,
    /// `max_m λ_m`, NaN when `λ` is not a free parameter.
    pub max_lambda: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StopReason {
    StepTolerance,
    MaxIterations,
    Diverged,
    /// The predicted Newton increase is below the cost's rounding level.
    Stationary,
    /// No strictly increasing step found before `μ < min_mu`.
    LineSearchExhausted,
}

#[derive(Debug, Clone)]
pub struct NewtonOutcome {
    pub x: Vec<f64>,
    pub cost: f64,
    /// Accepted Newton steps.
    pub iterations: usize,
    /// Rejected trial evaluations during backtracking.
    pub extra_evals: usize,
    pub converged: bool,
    pub diverged: bool,
    pub stop: StopReason,
    pub trace: Vec<TracePoint>,
}

/// `Ĥ` negative definite with the Cholesky factor of `-Ĥ`, and the shift used.
pub struct ModifiedCholesky {
    pub h_hat: RMat,
    pub shift: f64,
    chol: nalgebra::Cholesky<f64, nalgebra::Dyn>,
}

impl ModifiedCholesky {
    /// Ascent direction `-Ĥ⁻¹ g`.
    pub fn ascent_direction(&self, g: &RVec) -> RVec {
        self.chol.solve(g)
    }
}

fn spd_cholesky(a: &RMat) -> Option<nalgebra::Cholesky<f64, nalgebra::Dyn>> {
    let ch = a.clone().cholesky()?;
    let scale = a.diagonal().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let min_pivot = ch.l_dirty().diagonal().iter().fold(f64::INFINITY, |m, v| m.min(v * v));
    (min_pivot > 1e-14 * scale.max(f64::MIN_POSITIVE)).then_some(ch)
}

/// Perturbs `H` to `H - τD`, `D = diag(|H_ii|)`, with the smallest `τ` in the
/// doubling sequence `0, 1e-8, 2e-8, ...` for which `-(H - τD)` has a Cholesky
/// factorisation. A negative-definite `H` is returned unchanged.
pub fn modified_cholesky(h: &RMat) -> ModifiedCholesky {
    let n = h.nrows();
    let sym = (h + h.transpose()) * 0.5;
    let neg = -&sym;
    if let Some(chol) = spd_cholesky(&neg) {
        return ModifiedCholesky { h_hat: sym, shift: 0.0, chol };
    }
    let max_diag = sym.diagonal().amax().max(f64::MIN_POSITIVE);
    let scale = RVec::from_iterator(n, sym.diagonal().iter().map(|d| d.abs().max(1e-12 * max_diag)));
    let mut tau = 1e-8;
    loop {
        let shifted = &neg + RMat::from_diagonal(&(&scale * tau));
        if let Some(chol) = spd_cholesky(&shifted) {
            return ModifiedCholesky { h_hat: -shifted, shift: tau, chol };
        }
        tau *= 2.0;
    }
}

const STATIONARY_ULPS: f64 = 16.0;
/// Relative predicted gain below which an exhausted line search counts as converged.
const STALL_GAIN: f64 = 1e-10;

/// Damped Newton ascent from `x0`. Coordinates flagged in `positive` are kept
/// above a tenth of their previous value and monitored for divergence.
pub fn newton_maximize(obj: &dyn Objective, x0: &[f64], opts: &NewtonOptions, positive: &[bool]) -> Result<NewtonOutcome> {
    opts.validate()?;
    if positive.len() != x0.len() {
        return Err(Error::Dimension("positivity mask length differs from x0".into()));
    }
    let max_lambda = |x: &[f64]| -> f64 {
        x.iter().zip(positive).filter(|(_, &p)| p).map(|(v, _)| *v).fold(f64::NAN, f64::max)
    };
    let mut x = x0.to_vec();
    let (mut f, mut g, mut h) = obj.value_grad_hess(&x, opts.hessian_mode)?;
    if !f.is_finite() {
        return Err(Error::NonFinite("cost at the starting point".into()));
    }
    let mut trace = vec![TracePoint { iteration: 0, cost: f, max_lambda: max_lambda(&x) }];
    let mut iterations = 0;
    let mut extra_evals = 0;

    let finish = |x: Vec<f64>, f: f64, iterations, extra_evals, stop: StopReason, converged: bool, trace| NewtonOutcome {
        x,
        cost: f,
        iterations,
        extra_evals,
        converged,
        diverged: stop == StopReason::Diverged,
        stop,
        trace,
    };

    for _ in 0..opts.max_iters {
        let dir = modified_cholesky(&h).ascent_direction(&g);
        let predicted = 0.5 * g.dot(&dir);
        if !predicted.is_finite() {
            return Ok(finish(x, f, iterations, extra_evals, StopReason::LineSearchExhausted, false, trace));
        }
        if predicted <= STATIONARY_ULPS * f64::EPSILON * f.abs().max(1.0) {
            return Ok(finish(x, f, iterations, extra_evals, StopReason::Stationary, true, trace));
        }
        let mut mu: f64 = 1.0;
        for i in 0..x.len() {
            if positive[i] && dir[i] < 0.0 {
                mu = mu.min(0.9 * x[i] / -dir[i]);
            }
        }
        let mut accepted = None;
        while mu >= opts.min_mu {
            let trial: Vec<f64> = x.iter().zip(dir.iter()).map(|(a, d)| a + mu * d).collect();
            match obj.value(&trial) {
                Ok(ft) if ft.is_finite() && ft > f => {
                    accepted = Some(trial);
                    break;
                }
                _ => {
                    extra_evals += 1;
                    mu *= opts.backtrack_factor;
                }
            }
        }
        let Some(next) = accepted else {
            let converged = predicted <= STALL_GAIN * f.abs().max(1.0);
            return Ok(finish(x, f, iterations, extra_evals, StopReason::LineSearchExhausted, converged, trace));
        };
        let step = x.iter().zip(&next).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        x = next;
        iterations += 1;
        (f, g, h) = obj.value_grad_hess(&x, opts.hessian_mode)?;
        trace.push(TracePoint { iteration: iterations, cost: f, max_lambda: max_lambda(&x) });
        let diverged = x.iter().zip(x0).zip(positive).any(|((v, v0), &p)| p && *v > opts.divergence_factor * v0);
        if diverged {
            return Ok(finish(x, f, iterations, extra_evals, StopReason::Diverged, false, trace));
        }
        if step < opts.step_tol {
            return Ok(finish(x, f, iterations, extra_evals, StopReason::StepTolerance, true, trace));
        }
    }
    Ok(finish(x, f, iterations, extra_evals, StopReason::MaxIterations, false, trace))
}

/// Which parameters a likelihood objective varies.
#[derive(Debug, Clone)]
enum Free {
    Joint,
    Angles { lambda: NoiseProfile },
    Noise { theta: Vec<f64> },
}

/// `L_Do`, `L_D` or `L_S` viewed as a function of a parameter vector.
pub struct LikelihoodObjective<'a> {
    geometry: &'a ArrayGeometry,
    r_z: &'a SampleCovariance,
    kind: CostKind,
    free: Free,
}

impl<'a> LikelihoodObjective<'a> {
    /// `L_Do(θ)`.
    pub fn uniform(geometry: &'a ArrayGeometry, r_z: &'a SampleCovariance) -> Self {
        let lambda = NoiseProfile::uniform(geometry.num_sensors());
        Self { geometry, r_z, kind: CostKind::D, free: Free::Angles { lambda } }
    }

    /// `L(θ, λ)` over `[θ; λ]`.
    pub fn joint(geometry: &'a ArrayGeometry, r_z: &'a SampleCovariance, kind: CostKind) -> Self {
        Self { geometry, r_z, kind, free: Free::Joint }
    }

    pub fn angles(geometry: &'a ArrayGeometry, r_z: &'a SampleCovariance, kind: CostKind, lambda: NoiseProfile) -> Self {
        Self { geometry, r_z, kind, free: Free::Angles { lambda } }
    }

    pub fn noise(geometry: &'a ArrayGeometry, r_z: &'a SampleCovariance, kind: CostKind, theta: Vec<f64>) -> Self {
        Self { geometry, r_z, kind, free: Free::Noise { theta } }
    }

    fn workspace(&self, x: &[f64]) -> Result<WhitenedWorkspace> {
        match &self.free {
            Free::Joint => {
                let k = x.len() - self.geometry.num_sensors();
                WhitenedWorkspace::at(self.geometry, self.r_z, &x[..k], &NoiseProfile::new(x[k..].to_vec())?)
            }
            Free::Angles { lambda } => WhitenedWorkspace::at(self.geometry, self.r_z, x, lambda),
            Free::Noise { theta } => WhitenedWorkspace::at(self.geometry, self.r_z, theta, &NoiseProfile::new(x.to_vec())?),
        }
    }

    fn cost(&self, w: &WhitenedWorkspace) -> Result<f64> {
        match self.kind {
            CostKind::D => Ok(ml::cost_dml(w)),
            CostKind::C => ml::cost_c(w),
            CostKind::S => ml::cost_sml(w),
        }
    }
}

impl Objective for LikelihoodObjective<'_> {
    fn value(&self, x: &[f64]) -> Result<f64> {
        self.cost(&self.workspace(x)?)
    }

    fn value_grad_hess(&self, x: &[f64], mode: HessianMode) -> Result<(f64, RVec, RMat)> {
        let w = self.workspace(x)?;
        let f = self.cost(&w)?;
        if w.is_uniform() && self.kind == CostKind::D {
            if let Free::Angles { .. } = self.free {
                let g = derivatives::grad_dml_uniform(&w)?;
                let h = derivatives::hess_dml_uniform(&w, mode == HessianMode::Full)?;
                return Ok((f, g, h));
            }
        }
        let g = derivatives::gradient(&w, self.kind)?;
        let h = derivatives::hessian(&w, self.kind, mode)?;
        let k = w.num_sources();
        let m = w.num_sensors();
        Ok(match self.free {
            Free::Joint => (f, g, h),
            Free::Angles { .. } => (f, g.rows(0, k).into_owned(), h.view((0, 0), (k, k)).into_owned()),
            Free::Noise { .. } => (f, g.rows(k, m).into_owned(), h.view((k, k), (m, m)).into_owned()),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LineSearchOptions {
    /// Grid size is `grid_factor · M`.
    pub grid_factor: usize,
    /// Parabolic refinement of the grid maximum.
    pub refine: bool,
}

impl Default for LineSearchOptions {
    fn default() -> Self {
        Self { grid_factor: 16, refine: true }
    }
}

/// Uniform grid of `g` angles covering `(-π/2, π/2)` at cell centres.
pub fn angle_grid(g: usize) -> Vec<f64> {
    let step = PI / g as f64;
    (0..g).map(|i| -FRAC_PI_2 + (i as f64 + 0.5) * step).collect()
}

/// Vertex offset, in grid cells, of the parabola through three samples.
pub fn parabolic_offset(left: f64, centre: f64, right: f64) -> f64 {
    let denom = left - 2.0 * centre + right;
    if denom < 0.0 {
        (0.5 * (left - right) / denom).clamp(-0.5, 0.5)
    } else {
        0.0
    }
}

#[derive(Debug, Clone)]
pub struct LineSearchOutcome {
    pub theta: Vec<f64>,
    pub added: f64,
    /// Candidate evaluations of `L_Do`.
    pub evaluations: usize,
}

/// Appends the maximiser of `θ ↦ L_Do([θ_k; θ])` over the grid (excluding a
/// neighbourhood of each existing angle) to `theta_k`.
///
/// The projection onto the span of the current steering matrix is factored
/// once; each candidate then costs one Gram-Schmidt step.
pub fn ap_add_angle(r_z: &SampleCovariance, geometry: &ArrayGeometry, theta_k: &[f64], opts: &LineSearchOptions) -> Result<LineSearchOutcome> {
    let m = geometry.num_sensors();
    if theta_k.len() >= m {
        return Err(Error::InvalidInput(format!("cannot add an angle to {} angles with {m} sensors", theta_k.len())));
    }
    let g = opts.grid_factor.max(1) * m;
    let grid = angle_grid(g);
    let step = PI / g as f64;
    let r_excl = geometry.exclusion_radius();
    let excluded = |t: f64| theta_k.iter().any(|&e| (t - e).abs() < r_excl);
    let q = if theta_k.is_empty() {
        None
    } else {
        let phi = steering_set(geometry, theta_k)?.phi_o;
        linalg::count_cmac(2 * m * theta_k.len() * theta_k.len());
        Some(phi.qr().q())
    };
    let rz = r_z.matrix();
    let score = |t: f64| -> Result<f64> {
        let a = crate::array::steering(geometry, t)?;
        let resid = match &q {
            Some(q) => {
                linalg::count_cmac(2 * m * q.ncols());
                &a - q * (q.adjoint() * &a)
            }
            None => a,
        };
        let norm2 = resid.norm_squared();
        if norm2 < 1e-12 * m as f64 {
            return Ok(f64::NEG_INFINITY);
        }
        linalg::count_cmac(m * m + m);
        Ok((resid.adjoint() * rz * &resid)[(0, 0)].re / norm2)
    };
    let mut values = vec![f64::NEG_INFINITY; g];
    let mut evaluations = 0;
    for (i, &t) in grid.iter().enumerate() {
        if !excluded(t) {
            values[i] = score(t)?;
            evaluations += 1;
        }
    }
    let best = (0..g)
        .filter(|&i| values[i].is_finite())
        .max_by(|&a, &b| values[a].total_cmp(&values[b]).then(b.cmp(&a)))
        .ok_or_else(|| Error::LineSearch("every grid point is excluded".into()))?;
    let mut added = grid[best];
    if opts.refine && best > 0 && best + 1 < g && values[best - 1].is_finite() && values[best + 1].is_finite() {
        let refined = added + step * parabolic_offset(values[best - 1], values[best], values[best + 1]);
        if !excluded(refined) {
            added = refined;
        }
    }
    let mut theta = theta_k.to_vec();
    theta.push(added);
    Ok(LineSearchOutcome { theta, added, evaluations })
}

/// Covariance-fitting initialiser `λ_m = sqrt((1 - [P_o]_mm) / Re[R_z (I - P_o)]_mm)`.
///
/// A sensor whose denominator is not positive uses the two-sided residual
/// `[(I - P_o) R_z (I - P_o)]_mm` in its place, which is exact for uniform
/// noise and equals `[R_z]_mm` when `P_o = 0`.
pub fn init_noise(r_z: &SampleCovariance, p_o: &CMat) -> Result<NoiseProfile> {
    let m = r_z.num_sensors();
    if p_o.nrows() != m || p_o.ncols() != m {
        return Err(Error::Dimension("projection size differs from R_z".into()));
    }
    let rz = r_z.matrix();
    let perp = linalg::identity(m) - p_o;
    let one_sided = linalg::diag_of_product(rz, &perp);
    let mut two_sided = None;
    let lambda = (0..m)
        .map(|i| {
            let num = 1.0 - p_o[(i, i)].re;
            if num <= 1e-9 {
                return Err(Error::NoiseInit(format!("sensor {i} lies inside the signal subspace")));
            }
            let mut den = one_sided[i].re;
            if !(den > 0.0) {
                let r = two_sided.get_or_insert_with(|| linalg::diag_of_product(&(&perp * rz), &perp));
                den = r[i].re;
            }
            if den > 0.0 {
                Ok((num / den).sqrt())
            } else {
                Err(Error::NoiseInit(format!("sensor {i} has no residual power")))
            }
        })
        .collect::<Result<Vec<_>>>()?;
    NoiseProfile::new(lambda)
}

/// Estimator variants built on the APN pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Target {
    #[serde(rename = "dmlo")]
    DmlO,
    #[serde(rename = "dml")]
    Dml,
    #[serde(rename = "dml-alt")]
    DmlAlt,
    #[serde(rename = "sml")]
    Sml,
    #[serde(rename = "sml-alt")]
    SmlAlt,
    #[serde(rename = "sml-red")]
    SmlRed,
}

impl Target {
    pub const ALL: [Target; 6] = [Target::DmlO, Target::Dml, Target::DmlAlt, Target::Sml, Target::SmlAlt, Target::SmlRed];

    pub fn name(self) -> &'static str {
        match self {
            Target::DmlO => "dmlo",
            Target::Dml => "dml",
            Target::DmlAlt => "dml-alt",
            Target::Sml => "sml",
            Target::SmlAlt => "sml-alt",
            Target::SmlRed => "sml-red",
        }
    }

    fn cost_kind(self) -> CostKind {
        match self {
            Target::DmlO | Target::Dml | Target::DmlAlt => CostKind::D,
            Target::Sml | Target::SmlAlt | Target::SmlRed => CostKind::S,
        }
    }

    /// Whether the target's final stage is the stochastic likelihood.
    pub fn is_stochastic(self) -> bool {
        self.cost_kind() == CostKind::S
    }
}

impl fmt::Display for Target {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Target {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Target::ALL
            .into_iter()
            .find(|t| t.name().eq_ignore_ascii_case(s) || t.name().replace('-', "_").eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidInput(format!("unknown estimator '{s}'")))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ApnOptions {
    pub newton: NewtonOptions,
    pub line_search: LineSearchOptions,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimationResult {
    pub target: Target,
    pub theta_hat: Vec<f64>,
    /// Absent for the uniform-noise estimator.
    pub lambda_hat: Option<Vec<f64>>,
    pub cost: f64,
    /// Newton iterations on `L_Do` after adding angle `k + 1`.
    pub stage1_iterations: Vec<usize>,
    pub stage1_extra_evals: Vec<usize>,
    /// Grid evaluations of the line search that added angle `k + 1`.
    pub line_search_evals: Vec<usize>,
    /// Joint Newton iterations, or outer alternations for `*-alt`.
    pub stage3_iterations: usize,
    /// Newton iterations summed over inner runs (equal to `stage3_iterations` for joint runs).
    pub stage3_newton_iterations: usize,
    pub stage3_extra_evals: usize,
    pub converged: bool,
    pub diverged_lambda: bool,
    pub cost_trace: Vec<TracePoint>,
    /// Polynomial flop model of the run.
    pub flop_estimate: f64,
    /// Complex multiply-adds and real operations actually issued.
    pub ops_counted: OpCount,
}

impl EstimationResult {
    /// Iterations of the last Newton run of the angle-insertion stage.
    pub fn last_stage1_iterations(&self) -> usize {
        self.stage1_iterations.last().copied().unwrap_or(0)
    }
}

/// Runs the APN pipeline on snapshot data.
pub fn apn_estimate(r_z: &SampleCovariance, geometry: &ArrayGeometry, k: usize, target: Target, opts: &ApnOptions) -> Result<EstimationResult> {
    opts.newton.validate()?;
    let m = geometry.num_sensors();
    if r_z.num_sensors() != m {
        return Err(Error::Dimension(format!("R_z is {}x{0}, array has {m} sensors", r_z.num_sensors())));
    }
    if k == 0 || k >= m {
        return Err(Error::InvalidInput(format!("model order K = {k} must satisfy 1 <= K < M = {m}")));
    }
    if r_z.num_snapshots() < k {
        return Err(Error::InvalidInput(format!("N = {} snapshots is below K = {k}", r_z.num_snapshots())));
    }
    let (result, ops) = measure_ops(|| run_pipeline(r_z, geometry, k, target, opts));
    let mut result = result?;
    result.ops_counted = ops;
    result.flop_estimate = crate::harness::flops::total_flop_estimate(&result, m, k);
    Ok(result)
}

fn run_pipeline(r_z: &SampleCovariance, geometry: &ArrayGeometry, k: usize, target: Target, opts: &ApnOptions) -> Result<EstimationResult> {
    let m = geometry.num_sensors();
    let uniform_opts = NewtonOptions { hessian_mode: opts.newton.hessian_mode, ..opts.newton.clone() };
    let mut result = EstimationResult {
        target,
        theta_hat: Vec::new(),
        lambda_hat: None,
        cost: f64::NAN,
        stage1_iterations: Vec::with_capacity(k),
        stage1_extra_evals: Vec::with_capacity(k),
        line_search_evals: Vec::with_capacity(k),
        stage3_iterations: 0,
        stage3_newton_iterations: 0,
        stage3_extra_evals: 0,
        converged: true,
        diverged_lambda: false,
        cost_trace: Vec::new(),
        flop_estimate: 0.0,
        ops_counted: OpCount::default(),
    };

    // Step 1: angles by line search + Newton on L_Do.
    let uniform = LikelihoodObjective::uniform(geometry, r_z);
    let mut theta: Vec<f64> = Vec::with_capacity(k);
    let mut stage1_converged = true;
    for _ in 0..k {
        let ls = ap_add_angle(r_z, geometry, &theta, &opts.line_search)?;
        result.line_search_evals.push(ls.evaluations);
        let out = newton_maximize(&uniform, &ls.theta, &uniform_opts, &vec![false; ls.theta.len()])?;
        result.stage1_iterations.push(out.iterations);
        result.stage1_extra_evals.push(out.extra_evals);
        stage1_converged = out.converged;
        theta = out.x;
        result.cost = out.cost;
        if target == Target::DmlO {
            result.cost_trace = out.trace;
        }
    }
    result.theta_hat = theta.clone();
    result.converged = stage1_converged;
    if target == Target::DmlO {
        return Ok(result);
    }

    // Step 2: noise initialisation from the uniform-noise projection.
    let w0 = WhitenedWorkspace::at(geometry, r_z, &theta, &NoiseProfile::uniform(m))?;
    let lambda0 = init_noise(r_z, w0.p())?;

    // Step 3: Newton refinement of L_D or L_S.
    let kind = target.cost_kind();
    let mut newton = opts.newton.clone();
    if target == Target::SmlRed {
        newton.hessian_mode = HessianMode::Reduced;
    }
    match target {
        Target::Dml | Target::Sml | Target::SmlRed => {
            let objective = LikelihoodObjective::joint(geometry, r_z, kind);
            let x0: Vec<f64> = theta.iter().chain(lambda0.as_slice()).cloned().collect();
            let mask: Vec<bool> = (0..k + m).map(|i| i >= k).collect();
            let out = newton_maximize(&objective, &x0, &newton, &mask)?;
            result.theta_hat = out.x[..k].to_vec();
            result.lambda_hat = Some(out.x[k..].to_vec());
            result.cost = out.cost;
            result.stage3_iterations = out.iterations;
            result.stage3_newton_iterations = out.iterations;
            result.stage3_extra_evals = out.extra_evals;
            result.converged = out.converged;
            result.diverged_lambda = out.diverged;
            result.cost_trace = out.trace;
        }
        Target::DmlAlt | Target::SmlAlt => {
            alternate(geometry, r_z, kind, theta, lambda0, &newton, &mut result)?;
        }
        Target::DmlO => unreachable!(),
    }
    Ok(result)
}

/// Coordinate ascent: each outer iteration takes one damped Newton step over
/// `θ` with `λ` fixed, then one over `λ` with `θ` fixed.
fn alternate(
    geometry: &ArrayGeometry,
    r_z: &SampleCovariance,
    kind: CostKind,
    theta0: Vec<f64>,
    lambda0: NoiseProfile,
    opts: &NewtonOptions,
    result: &mut EstimationResult,
) -> Result<()> {
    let step_opts = NewtonOptions { max_iters: 1, ..opts.clone() };
    let mut theta = theta0;
    let mut lambda = lambda0.clone();
    let initial_lambda = lambda0.as_slice().to_vec();
    let mut cost = LikelihoodObjective::angles(geometry, r_z, kind, lambda.clone()).value(&theta)?;
    let mut trace = vec![TracePoint { iteration: 0, cost, max_lambda: max_of(lambda.as_slice()) }];
    let mut converged = false;
    let mut diverged = false;
    let mut outer = 0;
    while outer < opts.max_outer {
        let angles = LikelihoodObjective::angles(geometry, r_z, kind, lambda.clone());
        let Ok(a) = newton_maximize(&angles, &theta, &step_opts, &vec![false; theta.len()]) else {
            break;
        };
        let noise = LikelihoodObjective::noise(geometry, r_z, kind, a.x.clone());
        let Ok(b) = newton_maximize(&noise, lambda.as_slice(), &step_opts, &vec![true; lambda.len()]) else {
            break;
        };
        result.stage3_extra_evals += a.extra_evals + b.extra_evals;
        if a.iterations + b.iterations == 0 {
            converged = a.converged && b.converged;
            break;
        }
        outer += 1;
        result.stage3_newton_iterations += a.iterations + b.iterations;
        let step = theta
            .iter()
            .zip(&a.x)
            .chain(lambda.as_slice().iter().zip(&b.x))
            .map(|(u, v)| (u - v).abs())
            .fold(0.0, f64::max);
        theta = a.x;
        lambda = NoiseProfile::new(b.x)?;
        cost = b.cost;
        trace.push(TracePoint { iteration: outer, cost, max_lambda: max_of(lambda.as_slice()) });
        if lambda.as_slice().iter().zip(&initial_lambda).any(|(l, l0)| *l > opts.divergence_factor * l0) {
            diverged = true;
            break;
        }
        if step < opts.step_tol {
            converged = true;
            break;
        }
    }
    result.theta_hat = theta;
    result.lambda_hat = Some(lambda.as_slice().to_vec());
    result.cost = cost;
    result.stage3_iterations = outer;
    result.converged = converged;
    result.diverged_lambda = diverged;
    result.cost_trace = trace;
    Ok(())
}

fn max_of(v: &[f64]) -> f64 {
    v.iter().cloned().fold(f64::NAN, f64::max)
}
