//! Randomised finite-difference and identity checks of the likelihood code.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::array::{complex_gaussian_matrix, stream_rng, ArrayGeometry, NoiseProfile, SnapshotMatrix};
use crate::derivatives::{self, CostKind, HessianMode};
use crate::fdcheck::{fd_gradient, fd_hessian, REL_FLOOR};
use crate::linalg::{self, c, identity, max_abs, scale_rows, trace, CMat, RMat, RVec};
use crate::ml::{self, SampleCovariance, WhitenedWorkspace};
use crate::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyOptions {
    pub instances: usize,
    pub seed: u64,
    pub max_sensors: usize,
    pub max_sources: usize,
    pub gradient_tol: f64,
    pub hessian_tol: f64,
    pub projection_tol: f64,
    pub identity_tol: f64,
    pub concentration_tol: f64,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            instances: 50,
            seed: 7,
            max_sensors: 12,
            max_sources: 4,
            gradient_tol: 1e-5,
            hessian_tol: 1e-4,
            projection_tol: 1e-10,
            identity_tol: 1e-9,
            concentration_tol: 1e-8,
        }
    }
}

/// A random test problem with the snapshots it was built from.
#[derive(Debug, Clone)]
pub struct Instance {
    pub geometry: ArrayGeometry,
    pub theta: Vec<f64>,
    pub lambda: NoiseProfile,
    pub z: SnapshotMatrix,
    pub r_z: SampleCovariance,
}

/// Draws a ULA with `2..=max_sensors` sensors, `1..=max_sources` angles in
/// `(-1.2, 1.2)` at least 0.25 apart, `λ_m ∈ [0.5, 2)` and Gaussian snapshots.
pub fn random_instance(seed: u64, index: u64, max_sensors: usize, max_sources: usize) -> Result<Instance> {
    let mut rng = stream_rng(seed, index);
    let m = rng.random_range(2..=max_sensors.max(2));
    let k = rng.random_range(1..=max_sources.clamp(1, m - 1));
    let n = rng.random_range(m..=3 * m);
    let geometry = ArrayGeometry::ula(m)?;
    let theta = loop {
        let t: Vec<f64> = (0..k).map(|_| rng.random_range(-1.2..1.2)).collect();
        if t.iter().enumerate().all(|(i, a)| t[i + 1..].iter().all(|b| (a - b).abs() > 0.25)) {
            break t;
        }
    };
    let lambda = NoiseProfile::new((0..m).map(|_| rng.random_range(0.5..2.0)).collect())?;
    let z = SnapshotMatrix::new(complex_gaussian_matrix(m, n, &mut rng))?;
    let r_z = SampleCovariance::from_snapshots(&z);
    Ok(Instance { geometry, theta, lambda, z, r_z })
}

/// Worst error of one named check over all instances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckSummary {
    pub name: String,
    pub tolerance: f64,
    pub max_error: f64,
    pub worst_instance: u64,
}

impl CheckSummary {
    pub fn passed(&self) -> bool {
        self.max_error <= self.tolerance
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub instances: usize,
    pub checks: Vec<CheckSummary>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(CheckSummary::passed)
    }

    pub fn check(&self, name: &str) -> Option<&CheckSummary> {
        self.checks.iter().find(|c| c.name == name)
    }
}

/// `max|a - b| / max|a|`, the error of a block relative to its own scale.
pub fn block_error(analytic: &RMat, fd: &RMat) -> f64 {
    let scale = analytic.amax().max(fd.amax()).max(REL_FLOOR);
    (analytic - fd).amax() / scale
}

struct Tally {
    checks: Vec<CheckSummary>,
}

impl Tally {
    fn record(&mut self, name: &str, tolerance: f64, error: f64, instance: u64) {
        let err = if error.is_nan() { f64::INFINITY } else { error };
        match self.checks.iter_mut().find(|c| c.name == name) {
            Some(c) => {
                if err > c.max_error {
                    c.max_error = err;
                    c.worst_instance = instance;
                }
            }
            None => self.checks.push(CheckSummary { name: name.into(), tolerance, max_error: err, worst_instance: instance }),
        }
    }
}

fn split(x: &[f64], k: usize) -> Result<(Vec<f64>, NoiseProfile)> {
    Ok((x[..k].to_vec(), NoiseProfile::new(x[k..].to_vec())?))
}

fn col(v: &RVec) -> RMat {
    RMat::from_column_slice(v.len(), 1, v.as_slice())
}

/// Finite-difference checks of every gradient and Hessian block.
fn derivative_checks(inst: &Instance, index: u64, opts: &VerifyOptions, tally: &mut Tally) -> Result<()> {
    let k = inst.theta.len();
    let m = inst.geometry.num_sensors();
    let x: Vec<f64> = inst.theta.iter().chain(inst.lambda.as_slice()).cloned().collect();
    let w = WhitenedWorkspace::at(&inst.geometry, &inst.r_z, &inst.theta, &inst.lambda)?;
    let grads = derivatives::gradient_blocks(&w)?;
    let hess = derivatives::hessian_blocks(&w, HessianMode::Full)?;
    for kind in [CostKind::D, CostKind::C] {
        let f = |x: &[f64]| -> Result<f64> {
            let (t, l) = split(x, k)?;
            let w = WhitenedWorkspace::at(&inst.geometry, &inst.r_z, &t, &l)?;
            match kind {
                CostKind::D => Ok(ml::cost_dml(&w)),
                _ => ml::cost_c(&w),
            }
        };
        let fd_g = fd_gradient(&f, &x)?;
        let fd_h = fd_hessian(&f, &x)?;
        let (tag, gt, gl, htt, htl, hll) = match kind {
            CostKind::D => ("D", &grads.d_theta, &grads.d_lambda, &hess.d_tt, &hess.d_tl, &hess.d_ll),
            _ => ("C", &grads.c_theta, &grads.c_lambda, &hess.c_tt, &hess.c_tl, &hess.c_ll),
        };
        tally.record(&format!("gradient {tag} theta"), opts.gradient_tol, block_error(&col(gt), &col(&fd_g.rows(0, k).into_owned())), index);
        tally.record(&format!("gradient {tag} lambda"), opts.gradient_tol, block_error(&col(gl), &col(&fd_g.rows(k, m).into_owned())), index);
        tally.record(&format!("hessian {tag} theta-theta"), opts.hessian_tol, block_error(htt, &fd_h.view((0, 0), (k, k)).into_owned()), index);
        tally.record(&format!("hessian {tag} theta-lambda"), opts.hessian_tol, block_error(htl, &fd_h.view((0, k), (k, m)).into_owned()), index);
        tally.record(&format!("hessian {tag} lambda-lambda"), opts.hessian_tol, block_error(hll, &fd_h.view((k, k), (m, m)).into_owned()), index);
    }
    let wu = WhitenedWorkspace::at(&inst.geometry, &inst.r_z, &inst.theta, &NoiseProfile::uniform(m))?;
    let fu = |t: &[f64]| -> Result<f64> {
        ml::cost_dml_uniform(&WhitenedWorkspace::at(&inst.geometry, &inst.r_z, t, &NoiseProfile::uniform(m))?)
    };
    let gu = derivatives::grad_dml_uniform(&wu)?;
    let hu = derivatives::hess_dml_uniform(&wu, true)?;
    tally.record("gradient uniform theta", opts.gradient_tol, block_error(&col(&gu), &col(&fd_gradient(&fu, &inst.theta)?)), index);
    tally.record("hessian uniform theta-theta", opts.hessian_tol, block_error(&hu, &fd_hessian(&fu, &inst.theta)?), index);
    Ok(())
}

/// Uncompressed deterministic log-likelihood without the `-MN log π` constant.
pub fn uncompressed_dml(w: &WhitenedWorkspace, z: &CMat, s: &CMat) -> f64 {
    let lz = scale_rows(z, w.lambda());
    let resid = lz - w.phi() * s;
    2.0 * w.num_snapshots() as f64 * w.log_det_lambda() - resid.norm_squared()
}

/// Uncompressed stochastic log-likelihood without the `-MN log π` constant.
pub fn uncompressed_sml(w: &WhitenedWorkspace, rs: &CMat) -> Option<f64> {
    let n = w.num_snapshots() as f64;
    let cov = identity(w.num_sensors()) + w.phi() * rs * w.phi().adjoint();
    let (inv, logdet) = linalg::hpd_inverse_logdet(&cov)?;
    Some(2.0 * n * w.log_det_lambda() - n * logdet - n * trace(&(inv * w.r_zl())).re)
}

/// Projection, inversion and concentration identities.
fn identity_checks(inst: &Instance, index: u64, opts: &VerifyOptions, tally: &mut Tally) -> Result<()> {
    let m = inst.geometry.num_sensors();
    let k = inst.theta.len();
    let n = inst.z.num_snapshots() as f64;
    let w = WhitenedWorkspace::at(&inst.geometry, &inst.r_z, &inst.theta, &inst.lambda)?;
    let p = w.p();
    tally.record("projection idempotent", opts.projection_tol, max_abs(&(p * p - p)), index);
    tally.record("projection hermitian", opts.projection_tol, linalg::hermitian_defect(p), index);
    let p_z = w.p_z()?;
    let tr = trace(&(p_z * w.r_zl()));
    tally.record("trace P_z R_zl = K", opts.identity_tol, (tr - c(k as f64, 0.0)).norm() / k as f64, index);
    let perp = identity(m) - p;
    let prod = (&perp + p_z) * (&perp + p * w.r_zl() * p);
    tally.record("inverse of C", opts.identity_tol, max_abs(&(prod - identity(m))), index);

    let cost_d = ml::cost_dml(&w);
    let s_hat = w.pinv() * scale_rows(inst.z.data(), w.lambda());
    let full_d = uncompressed_dml(&w, inst.z.data(), &s_hat);
    tally.record("deterministic concentration", opts.concentration_tol, (cost_d - full_d).abs() / cost_d.abs().max(1.0), index);
    let mut rng = stream_rng(opts.seed ^ 0x5eed, index);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let s2 = &s_hat + complex_gaussian_matrix(k, inst.z.num_snapshots(), &mut rng) * c(1e-3, 0.0);
        worst = worst.max(uncompressed_dml(&w, inst.z.data(), &s2) - cost_d);
    }
    tally.record("deterministic optimality", 0.0, worst.max(0.0), index);

    let cost_s = ml::cost_sml(&w)?;
    let rs_hat = ml::concentrated_rs(&w);
    // the concentrated cost drops the constant -NK
    let full_s = uncompressed_sml(&w, &rs_hat).map_or(f64::NAN, |v| v + n * k as f64);
    tally.record("stochastic concentration", opts.concentration_tol, (cost_s - full_s).abs() / cost_s.abs().max(1.0), index);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let g = complex_gaussian_matrix(k, k, &mut rng) * c(1e-3, 0.0);
        let pert = linalg::hermitize(&(&g + g.adjoint()));
        if let Some(v) = uncompressed_sml(&w, &(&rs_hat + pert)) {
            worst = worst.max(v + n * k as f64 - cost_s - 1e-10 * cost_s.abs().max(1.0));
        }
    }
    tally.record("stochastic optimality", 0.0, worst.max(0.0), index);
    Ok(())
}

/// Runs every check on `opts.instances` random instances.
pub fn run_verify(opts: &VerifyOptions) -> Result<VerifyReport> {
    let mut tally = Tally { checks: Vec::new() };
    for i in 0..opts.instances as u64 {
        let inst = random_instance(opts.seed, i, opts.max_sensors, opts.max_sources)?;
        let outcome = derivative_checks(&inst, i, opts, &mut tally).and_then(|_| identity_checks(&inst, i, opts, &mut tally));
        if let Err(e) = outcome {
            tally.record(&format!("evaluation ({e})"), 0.0, f64::INFINITY, i);
        }
    }
    Ok(VerifyReport { instances: opts.instances, checks: tally.checks })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_suite_passes() {
        let rep = run_verify(&VerifyOptions { instances: 8, ..Default::default() }).unwrap();
        for c in &rep.checks {
            assert!(c.passed(), "{} {} > {} (instance {})", c.name, c.max_error, c.tolerance, c.worst_instance);
        }
        assert!(rep.checks.len() >= 20);
    }
}
