//! Whitened-model workspace and the concentrated likelihoods `L_Do`, `L_D`, `L_S`.
//!
//! All three costs drop the constant `-NM log π`.

use crate::array::{steering_set, ArrayGeometry, NoiseProfile, SnapshotMatrix, SteeringSet};
use crate::linalg::{self, c, mul, mul_ah_b, scale_cols, scale_rows, CMat, RVec};
use crate::{Error, Result};

/// Relative threshold on the diagonal of the QR triangle below which the
/// signature matrix is treated as rank deficient.
pub const RANK_TOLERANCE: f64 = 1e-12;

/// `R_z = (1/N) Z Zᴴ` together with its snapshot count.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleCovariance {
    r_z: CMat,
    n: usize,
}

impl SampleCovariance {
    pub fn new(r_z: CMat, n: usize) -> Result<Self> {
        if r_z.nrows() != r_z.ncols() {
            return Err(Error::Dimension("sample covariance must be square".into()));
        }
        if n == 0 {
            return Err(Error::InvalidInput("snapshot count must be positive".into()));
        }
        let scale = linalg::max_abs(&r_z).max(1.0);
        if linalg::hermitian_defect(&r_z) > 1e-12 * scale {
            return Err(Error::InvalidInput("sample covariance is not Hermitian".into()));
        }
        let r_z = linalg::hermitize(&r_z);
        let eig = r_z.clone().symmetric_eigen();
        if eig.eigenvalues.iter().any(|&e| e < -1e-10 * scale) {
            return Err(Error::InvalidInput("sample covariance has a negative eigenvalue".into()));
        }
        Ok(Self { r_z, n })
    }

    pub fn from_snapshots(z: &SnapshotMatrix) -> Self {
        let d = z.data();
        let n = d.ncols();
        let r = mul(d, &d.adjoint()) / c(n as f64, 0.0);
        Self { r_z: linalg::hermitize(&r), n }
    }

    pub fn matrix(&self) -> &CMat {
        &self.r_z
    }

    pub fn num_snapshots(&self) -> usize {
        self.n
    }

    pub fn num_sensors(&self) -> usize {
        self.r_z.nrows()
    }
}

/// Parts that exist only when `Qᴴ R_zl Q` is positive definite.
#[derive(Debug, Clone)]
struct StochasticParts {
    m_zl: CMat,
    p_z: CMat,
    log_det_c: f64,
}

/// Every matrix derived from `(θ, λ, R_z)` that the costs and derivatives share.
///
/// Built once per parameter point through the QR factorisation `Φ = Q R` of
/// the whitened signature `Φ = Λ Φ_o`; immutable afterwards.
#[derive(Debug, Clone)]
pub struct WhitenedWorkspace {
    theta: Vec<f64>,
    lambda: RVec,
    n: usize,
    phi: CMat,
    q: CMat,
    r: CMat,
    minv: CMat,
    pinv: CMat,
    p: CMat,
    p_perp: CMat,
    r_zl: CMat,
    d: CMat,
    d2: CMat,
    uniform: bool,
    sml: Option<StochasticParts>,
}

impl WhitenedWorkspace {
    /// Convenience constructor evaluating the steering set first.
    pub fn at(geometry: &ArrayGeometry, r_z: &SampleCovariance, theta: &[f64], lambda: &NoiseProfile) -> Result<Self> {
        let mut w = build_workspace(r_z, &steering_set(geometry, theta)?, lambda)?;
        w.theta = theta.to_vec();
        Ok(w)
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }
    pub fn lambda(&self) -> &RVec {
        &self.lambda
    }
    pub fn num_snapshots(&self) -> usize {
        self.n
    }
    pub fn num_sensors(&self) -> usize {
        self.phi.nrows()
    }
    pub fn num_sources(&self) -> usize {
        self.phi.ncols()
    }
    /// Whitened signature `Φ = Λ Φ_o`.
    pub fn phi(&self) -> &CMat {
        &self.phi
    }
    /// Orthonormal factor, `Φ = Q R`.
    pub fn q(&self) -> &CMat {
        &self.q
    }
    pub fn r_factor(&self) -> &CMat {
        &self.r
    }
    /// `(Φᴴ Φ)⁻¹`
    pub fn minv(&self) -> &CMat {
        &self.minv
    }
    /// `Φ† = (Φᴴ Φ)⁻¹ Φᴴ`
    pub fn pinv(&self) -> &CMat {
        &self.pinv
    }
    pub fn p(&self) -> &CMat {
        &self.p
    }
    /// `I - P`
    pub fn p_perp(&self) -> &CMat {
        &self.p_perp
    }
    /// `Λ R_z Λ`
    pub fn r_zl(&self) -> &CMat {
        &self.r_zl
    }
    /// `Λ D_o`
    pub fn d(&self) -> &CMat {
        &self.d
    }
    /// `Λ D_o2`
    pub fn d2(&self) -> &CMat {
        &self.d2
    }
    pub fn is_uniform(&self) -> bool {
        self.uniform
    }

    fn stochastic(&self) -> Result<&StochasticParts> {
        self.sml.as_ref().ok_or(Error::NotPositiveDefinite)
    }

    /// `(Φᴴ R_zl Φ)⁻¹`
    pub fn m_zl(&self) -> Result<&CMat> {
        Ok(&self.stochastic()?.m_zl)
    }
    /// `Φ M_zl Φᴴ`
    pub fn p_z(&self) -> Result<&CMat> {
        Ok(&self.stochastic()?.p_z)
    }
    /// `log |Qᴴ R_zl Q|`, equal to `log |C|`.
    pub fn log_det_c(&self) -> Result<f64> {
        Ok(self.stochastic()?.log_det_c)
    }

    pub fn log_det_lambda(&self) -> f64 {
        self.lambda.iter().map(|l| l.ln()).sum()
    }

    /// `tr{(I - P) R_zl}` evaluated as `tr R_zl - tr(Qᴴ R_zl Q)`.
    pub fn residual_power(&self) -> f64 {
        let total: f64 = self.r_zl.diagonal().iter().map(|z| z.re).sum();
        let in_span: f64 = (0..self.q.ncols())
            .map(|k| {
                let col = self.q.column(k);
                (col.adjoint() * &self.r_zl * col)[(0, 0)].re
            })
            .sum();
        linalg::count_cmac(self.q.ncols() * self.num_sensors() * (self.num_sensors() + 1));
        total - in_span
    }
}

/// Builds the workspace for `Φ = Λ Φ_o` using only the QR factors for `P`, `M`, `Φ†`.
pub fn build_workspace(r_z: &SampleCovariance, steering: &SteeringSet, lambda: &NoiseProfile) -> Result<WhitenedWorkspace> {
    let m = r_z.num_sensors();
    let k = steering.num_sources();
    if steering.phi_o.nrows() != m || lambda.len() != m {
        return Err(Error::Dimension(format!(
            "steering has {} rows, R_z is {m}x{m}, lambda has {} entries",
            steering.phi_o.nrows(),
            lambda.len()
        )));
    }
    if k == 0 || k > m {
        return Err(Error::Dimension(format!("need 1 <= K <= M, got K = {k}, M = {m}")));
    }
    let lam = lambda.to_vector();
    let phi = scale_rows(&steering.phi_o, &lam);
    let d = scale_rows(&steering.d_o, &lam);
    let d2 = scale_rows(&steering.d_o2, &lam);

    linalg::count_cmac(2 * m * k * k);
    let qr = phi.clone().qr();
    let q = qr.q();
    let r = qr.r();
    let diag: Vec<f64> = r.diagonal().iter().map(|z| z.norm()).collect();
    let largest = diag.iter().cloned().fold(0.0, f64::max);
    let smallest = diag.iter().cloned().fold(f64::INFINITY, f64::min);
    if !(largest > 0.0) || smallest < RANK_TOLERANCE * largest {
        return Err(Error::RankDeficient {
            ratio: if largest > 0.0 { smallest / largest } else { 0.0 },
        });
    }
    let r_inv = linalg::upper_triangular_inverse(&r).ok_or(Error::RankDeficient { ratio: 0.0 })?;
    let minv = mul(&r_inv, &r_inv.adjoint());
    let pinv = mul(&r_inv, &q.adjoint());
    let p = mul(&q, &q.adjoint());
    let p_perp = linalg::identity(m) - &p;

    let r_zl = scale_cols(&scale_rows(r_z.matrix(), &lam), &lam);
    let rq = mul(&r_zl, &q);
    let qhrq = linalg::hermitize(&mul_ah_b(&q, &rq));
    let sml = linalg::hpd_inverse_logdet(&qhrq).map(|(inv, log_det_c)| {
        let m_zl = mul(&mul(&r_inv, &inv), &r_inv.adjoint());
        let p_z = mul(&mul(&q, &inv), &q.adjoint());
        StochasticParts { m_zl, p_z, log_det_c }
    });

    Ok(WhitenedWorkspace {
        theta: Vec::new(),
        uniform: lambda.is_all_ones(),
        lambda: lam,
        n: r_z.num_snapshots(),
        phi,
        q,
        r,
        minv,
        pinv,
        p,
        p_perp,
        r_zl,
        d,
        d2,
        sml,
    })
}

/// `L_Do(θ) = -N tr{(I - P_o) R_z}`; the workspace must use `λ = 1`.
pub fn cost_dml_uniform(w: &WhitenedWorkspace) -> Result<f64> {
    if !w.is_uniform() {
        return Err(Error::InvalidInput("uniform-noise cost needs a workspace built with lambda = 1".into()));
    }
    Ok(cost_dml(w))
}

/// `L_D(θ, λ) = N (2 log|Λ| - tr{(I - P) R_zl})`.
pub fn cost_dml(w: &WhitenedWorkspace) -> f64 {
    let n = w.num_snapshots() as f64;
    n * (2.0 * w.log_det_lambda() - w.residual_power())
}

/// `L_C = -N log|C|`, the term that turns `L_D` into `L_S`.
pub fn cost_c(w: &WhitenedWorkspace) -> Result<f64> {
    Ok(-(w.num_snapshots() as f64) * w.log_det_c()?)
}

/// `L_S = L_D + L_C`.
pub fn cost_sml(w: &WhitenedWorkspace) -> Result<f64> {
    Ok(cost_dml(w) + cost_c(w)?)
}

/// Maximiser of the stochastic likelihood over the signal covariance,
/// `Φ† R_zl Φ†ᴴ - M`.
pub fn concentrated_rs(w: &WhitenedWorkspace) -> CMat {
    let a = mul(&mul(w.pinv(), w.r_zl()), &w.pinv().adjoint());
    linalg::hermitize(&(a - w.minv()))
}
