//! Array geometry, steering vectors and snapshot synthesis.
//!
//! Steering convention: `[φ(θ)]_m = exp(iπ p_m sin θ)` with sensor positions
//! `p_m` in half-wavelengths, so every entry has unit modulus.

use std::f64::consts::{FRAC_PI_2, PI};

use nalgebra::DVector;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::linalg::{c, CMat, CVec, RVec};
use crate::{Error, Result};

/// Sensor positions along a line, in half-wavelengths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrayGeometry {
    positions: Vec<f64>,
}

impl ArrayGeometry {
    pub fn new(positions: Vec<f64>) -> Result<Self> {
        if positions.len() < 2 {
            return Err(Error::InvalidInput("an array needs at least two sensors".into()));
        }
        if positions.iter().any(|p| !p.is_finite()) {
            return Err(Error::InvalidInput("sensor positions must be finite".into()));
        }
        if positions.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidInput("sensor positions must be strictly increasing".into()));
        }
        Ok(Self { positions })
    }

    /// Uniform linear array with half-wavelength spacing.
    pub fn ula(m: usize) -> Result<Self> {
        Self::new((0..m).map(|i| i as f64).collect())
    }

    pub fn positions(&self) -> &[f64] {
        &self.positions
    }

    pub fn num_sensors(&self) -> usize {
        self.positions.len()
    }

    pub fn aperture(&self) -> f64 {
        self.positions[self.positions.len() - 1] - self.positions[0]
    }

    /// Half the array beamwidth, `π / aperture`. Used as the minimum
    /// separation between angles proposed by grid searches.
    pub fn exclusion_radius(&self) -> f64 {
        PI / self.aperture()
    }
}

/// Angles of arrival in radians.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceAngles(Vec<f64>);

impl SourceAngles {
    pub fn new(theta: Vec<f64>) -> Result<Self> {
        if theta.is_empty() {
            return Err(Error::InvalidInput("at least one angle is required".into()));
        }
        for &t in &theta {
            check_angle(t)?;
        }
        for i in 0..theta.len() {
            for j in i + 1..theta.len() {
                if theta[i] == theta[j] {
                    return Err(Error::InvalidInput(format!("duplicate angle {}", theta[i])));
                }
            }
        }
        Ok(Self(theta))
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

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

/// Inverse noise deviations `λ_m`; sensor `m` has noise variance `λ_m⁻²`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseProfile(Vec<f64>);

impl NoiseProfile {
    pub fn new(lambda: Vec<f64>) -> Result<Self> {
        if lambda.is_empty() {
            return Err(Error::InvalidInput("empty noise profile".into()));
        }
        if let Some(bad) = lambda.iter().find(|l| !(l.is_finite() && **l > 0.0)) {
            return Err(Error::InvalidInput(format!("inverse noise deviation {bad} is not positive")));
        }
        Ok(Self(lambda))
    }

    pub fn uniform(m: usize) -> Self {
        Self(vec![1.0; m])
    }

    /// The linear trend `1 + 9 (m-1)/(M-1)`, a 20 dB spread of noise power.
    pub fn linear_trend(m: usize) -> Self {
        assert!(m >= 2);
        Self((0..m).map(|i| 1.0 + 9.0 * i as f64 / (m - 1) as f64).collect())
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

    pub fn to_vector(&self) -> RVec {
        RVec::from_column_slice(&self.0)
    }

    pub fn is_all_ones(&self) -> bool {
        self.0.iter().all(|&l| l == 1.0)
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self(self.0.iter().map(|l| l * factor).collect())
    }

    /// Per-sensor noise variances `λ_m⁻²`.
    pub fn variances(&self) -> Vec<f64> {
        self.0.iter().map(|l| 1.0 / (l * l)).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SourceModel {
    /// Fixed `K×N` signal matrix reused across trials.
    Deterministic { s: CMat },
    /// Zero-mean circular Gaussian signals with `K×K` covariance.
    Stochastic { rs: CMat },
}

impl SourceModel {
    pub fn stochastic(rs: CMat) -> Result<Self> {
        if rs.nrows() != rs.ncols() {
            return Err(Error::Dimension("signal covariance must be square".into()));
        }
        if crate::linalg::hermitian_defect(&rs) > 1e-12 {
            return Err(Error::InvalidInput("signal covariance is not Hermitian".into()));
        }
        let eig = rs.clone().symmetric_eigen();
        if eig.eigenvalues.iter().any(|&e| e < -1e-12) {
            return Err(Error::InvalidInput("signal covariance is not positive semidefinite".into()));
        }
        Ok(Self::Stochastic { rs })
    }

    pub fn num_sources(&self) -> usize {
        match self {
            Self::Deterministic { s } => s.nrows(),
            Self::Stochastic { rs } => rs.nrows(),
        }
    }

    /// `R_s`, or `(1/N) S Sᴴ` for the deterministic model.
    pub fn signal_covariance(&self) -> CMat {
        match self {
            Self::Deterministic { s } => s * s.adjoint() / c(s.ncols() as f64, 0.0),
            Self::Stochastic { rs } => rs.clone(),
        }
    }
}

/// `M×N` matrix of array snapshots.
#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotMatrix {
    z: CMat,
}

impl SnapshotMatrix {
    pub fn new(z: CMat) -> Result<Self> {
        if z.nrows() == 0 || z.ncols() == 0 {
            return Err(Error::Dimension("empty snapshot matrix".into()));
        }
        if z.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
            return Err(Error::NonFinite("snapshot data".into()));
        }
        Ok(Self { z })
    }

    pub fn data(&self) -> &CMat {
        &self.z
    }

    pub fn num_sensors(&self) -> usize {
        self.z.nrows()
    }

    pub fn num_snapshots(&self) -> usize {
        self.z.ncols()
    }
}

/// Steering matrix and its column-wise first and second angle derivatives.
#[derive(Debug, Clone, PartialEq)]
pub struct SteeringSet {
    pub phi_o: CMat,
    pub d_o: CMat,
    pub d_o2: CMat,
}

impl SteeringSet {
    pub fn num_sources(&self) -> usize {
        self.phi_o.ncols()
    }
}

fn check_angle(theta: f64) -> Result<()> {
    if theta.is_finite() && theta > -FRAC_PI_2 && theta < FRAC_PI_2 {
        Ok(())
    } else {
        Err(Error::AngleDomain(theta))
    }
}

pub fn steering(geometry: &ArrayGeometry, theta: f64) -> Result<CVec> {
    check_angle(theta)?;
    let s = theta.sin();
    Ok(CVec::from_iterator(
        geometry.num_sensors(),
        geometry.positions().iter().map(|p| Complex64::from_polar(1.0, PI * p * s)),
    ))
}

/// Steering vectors for all angles together with `∂φ/∂θ` and `∂²φ/∂θ²`.
pub fn steering_set(geometry: &ArrayGeometry, theta: &[f64]) -> Result<SteeringSet> {
    let m = geometry.num_sensors();
    let k = theta.len();
    let mut phi_o = CMat::zeros(m, k);
    let mut d_o = CMat::zeros(m, k);
    let mut d_o2 = CMat::zeros(m, k);
    for (col, &t) in theta.iter().enumerate() {
        check_angle(t)?;
        let (s, co) = t.sin_cos();
        for (row, &p) in geometry.positions().iter().enumerate() {
            let phase = Complex64::from_polar(1.0, PI * p * s);
            // d/dθ exp(iπp sinθ) = iπp cosθ · φ
            let a = c(0.0, PI * p * co);
            let b = c(0.0, -PI * p * s);
            phi_o[(row, col)] = phase;
            d_o[(row, col)] = a * phase;
            d_o2[(row, col)] = (b + a * a) * phase;
        }
    }
    Ok(SteeringSet { phi_o, d_o, d_o2 })
}

/// Deterministic RNG for a numbered stream under a master seed. Streams are
/// independent so trials can be generated in any order or in parallel.
pub fn stream_rng(master_seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(stream);
    rng
}

/// Unit-variance circularly-symmetric complex Gaussian sample.
pub fn complex_gaussian<R: Rng + ?Sized>(rng: &mut R) -> Complex64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    c(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

pub fn complex_gaussian_matrix<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> CMat {
    let mut out = CMat::zeros(rows, cols);
    for j in 0..cols {
        for i in 0..rows {
            out[(i, j)] = complex_gaussian(rng);
        }
    }
    out
}

/// Factor `L` with `L Lᴴ = R` for a Hermitian PSD `R` (eigen-based, tolerates singular `R`).
pub fn psd_factor(rs: &CMat) -> CMat {
    let eig = rs.clone().symmetric_eigen();
    let scale = DVector::from_iterator(
        eig.eigenvalues.len(),
        eig.eigenvalues.iter().map(|e| c(e.max(0.0).sqrt(), 0.0)),
    );
    &eig.eigenvectors * CMat::from_diagonal(&scale)
}

/// Draws `S` with i.i.d. columns of covariance `R_s`.
pub fn draw_signals<R: Rng + ?Sized>(rs: &CMat, n: usize, rng: &mut R) -> CMat {
    let w = complex_gaussian_matrix(rs.nrows(), n, rng);
    psd_factor(rs) * w
}

/// Synthesises `Z = Φ_o(θ) S + noise`, noise entry `(m, n)` having variance `λ_m⁻²`.
pub fn synthesize(
    geometry: &ArrayGeometry,
    theta: &SourceAngles,
    model: &SourceModel,
    noise: &NoiseProfile,
    n: usize,
    seed: u64,
) -> Result<SnapshotMatrix> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    synthesize_with(geometry, theta, model, noise, n, &mut rng)
}

pub fn synthesize_with<R: Rng + ?Sized>(
    geometry: &ArrayGeometry,
    theta: &SourceAngles,
    model: &SourceModel,
    noise: &NoiseProfile,
    n: usize,
    rng: &mut R,
) -> Result<SnapshotMatrix> {
    let m = geometry.num_sensors();
    let k = theta.len();
    if noise.len() != m {
        return Err(Error::Dimension(format!("noise profile has {} entries, array has {m}", noise.len())));
    }
    if model.num_sources() != k {
        return Err(Error::Dimension(format!(
            "source model has {} sources, {k} angles given",
            model.num_sources()
        )));
    }
    if n == 0 {
        return Err(Error::Dimension("snapshot count must be positive".into()));
    }
    let s = match model {
        SourceModel::Deterministic { s } => {
            if s.ncols() != n {
                return Err(Error::Dimension(format!("S has {} columns, N = {n}", s.ncols())));
            }
            s.clone()
        }
        SourceModel::Stochastic { rs } => draw_signals(rs, n, rng),
    };
    let phi = steering_set(geometry, theta.as_slice())?.phi_o;
    let mut z = phi * s;
    let sigma: Vec<f64> = noise.as_slice().iter().map(|l| 1.0 / l).collect();
    for j in 0..n {
        for i in 0..m {
            z[(i, j)] += complex_gaussian(rng) * sigma[i];
        }
    }
    SnapshotMatrix::new(z)
}

/// Haar-distributed unitary matrix: QR of a complex Gaussian matrix with the
/// phases of `R`'s diagonal moved into `Q`.
pub fn random_unitary<R: Rng + ?Sized>(k: usize, rng: &mut R) -> CMat {
    assert!(k >= 1);
    let g = complex_gaussian_matrix(k, k, rng);
    let qr = g.qr();
    let q = qr.q();
    let r = qr.r();
    let mut u = q;
    for j in 0..k {
        let d = r[(j, j)];
        let phase = if d.norm() > 0.0 { d / d.norm() } else { c(1.0, 0.0) };
        for i in 0..k {
            u[(i, j)] *= phase;
        }
    }
    u
}

/// Array-average signal power over array-average noise power, in dB.
pub fn snr_db(geometry: &ArrayGeometry, theta: &SourceAngles, model: &SourceModel, noise: &NoiseProfile) -> Result<f64> {
    let signal = mean_signal_power(geometry, theta, model)?;
    let noise_power = noise.variances().iter().sum::<f64>() / noise.len() as f64;
    Ok(10.0 * (signal / noise_power).log10())
}

fn mean_signal_power(geometry: &ArrayGeometry, theta: &SourceAngles, model: &SourceModel) -> Result<f64> {
    let phi = steering_set(geometry, theta.as_slice())?.phi_o;
    let rs = model.signal_covariance();
    if rs.nrows() != phi.ncols() {
        return Err(Error::Dimension("source model does not match the angle count".into()));
    }
    let cov = &phi * rs * phi.adjoint();
    Ok(crate::linalg::trace(&cov).re / geometry.num_sensors() as f64)
}

/// Scales `trend` by the constant that gives the requested SNR.
pub fn scale_for_snr(
    geometry: &ArrayGeometry,
    theta: &SourceAngles,
    model: &SourceModel,
    trend: &NoiseProfile,
    snr_db: f64,
) -> Result<NoiseProfile> {
    if !snr_db.is_finite() {
        return Err(Error::NonFinite("snr".into()));
    }
    if trend.len() != geometry.num_sensors() {
        return Err(Error::Dimension("noise trend length differs from the sensor count".into()));
    }
    let signal = mean_signal_power(geometry, theta, model)?;
    if !(signal > 0.0) {
        return Err(Error::InvalidInput("signal power must be positive to set an SNR".into()));
    }
    // noise power scales as c⁻², so SNR(c) = c² · signal / mean(trend⁻²)
    let base_noise = trend.variances().iter().sum::<f64>() / trend.len() as f64;
    let ratio = 10f64.powf(snr_db / 10.0);
    let factor = (ratio * base_noise / signal).sqrt();
    NoiseProfile::new(trend.as_slice().iter().map(|t| t * factor).collect())
}

/// Diagonal covariance helper.
pub fn diagonal_covariance(powers: &[f64]) -> CMat {
    CMat::from_diagonal(&DVector::from_iterator(powers.len(), powers.iter().map(|&p| c(p, 0.0))))
}

/// `U diag(v) Uᴴ`, made exactly Hermitian.
pub fn rotated_covariance(u: &CMat, v: &[f64]) -> CMat {
    let r = u * diagonal_covariance(v) * u.adjoint();
    crate::linalg::hermitize(&r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::max_abs;

    #[test]
    fn broadside_steering_is_all_ones() {
        let g = ArrayGeometry::ula(3).unwrap();
        let v = steering(&g, 0.0).unwrap();
        for z in v.iter() {
            assert_eq!(*z, c(1.0, 0.0));
        }
    }

    #[test]
    fn endfire_limit_phases() {
        let g = ArrayGeometry::ula(2).unwrap();
        let v = steering(&g, FRAC_PI_2 - 1e-9).unwrap();
        assert!((v[0] - c(1.0, 0.0)).norm() < 1e-12);
        assert!((v[1] - c(-1.0, 0.0)).norm() < 1e-8);
    }

    #[test]
    fn steering_matches_elementwise_formula() {
        let g = ArrayGeometry::ula(11).unwrap();
        let t = 0.1571f64;
        let v = steering(&g, t).unwrap();
        for m in 0..11 {
            let expect = c((PI * m as f64 * t.sin()).cos(), (PI * m as f64 * t.sin()).sin());
            assert!((v[m] - expect).norm() < 1e-15);
            assert!((v[m].norm() - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn rejects_out_of_domain_angles() {
        let g = ArrayGeometry::ula(4).unwrap();
        assert!(matches!(steering(&g, FRAC_PI_2), Err(Error::AngleDomain(_))));
        assert!(steering(&g, -2.0).is_err());
        assert!(steering(&g, f64::NAN).is_err());
    }

    #[test]
    fn derivative_at_broadside() {
        let g = ArrayGeometry::ula(5).unwrap();
        let s = steering_set(&g, &[0.0]).unwrap();
        for m in 0..5 {
            assert!((s.d_o[(m, 0)] - c(0.0, PI * m as f64)).norm() < 1e-14);
        }
    }

    #[test]
    fn geometry_validation() {
        assert!(ArrayGeometry::new(vec![0.0]).is_err());
        assert!(ArrayGeometry::new(vec![0.0, 0.0]).is_err());
        assert!(ArrayGeometry::new(vec![1.0, 0.5]).is_err());
        assert!(ArrayGeometry::new(vec![0.0, 0.7, 3.1]).is_ok());
    }

    #[test]
    fn source_angles_validation() {
        assert!(SourceAngles::new(vec![]).is_err());
        assert!(SourceAngles::new(vec![0.1, 0.1]).is_err());
        assert!(SourceAngles::new(vec![1.6]).is_err());
        assert!(NoiseProfile::new(vec![1.0, 0.0]).is_err());
        assert!(NoiseProfile::new(vec![1.0, f64::INFINITY]).is_err());
    }

    #[test]
    fn no_signal_and_vanishing_noise_gives_zero_data() {
        let g = ArrayGeometry::ula(4).unwrap();
        let th = SourceAngles::new(vec![0.2]).unwrap();
        let model = SourceModel::stochastic(CMat::zeros(1, 1)).unwrap();
        let z = synthesize(&g, &th, &model, &NoiseProfile::new(vec![1e8; 4]).unwrap(), 50, 1).unwrap();
        assert!(max_abs(z.data()) < 1e-6);
    }

    #[test]
    fn synthesis_is_deterministic() {
        let g = ArrayGeometry::ula(5).unwrap();
        let th = SourceAngles::new(vec![0.2, -0.4]).unwrap();
        let model = SourceModel::stochastic(diagonal_covariance(&[1.0, 0.5])).unwrap();
        let noise = NoiseProfile::linear_trend(5);
        let a = synthesize(&g, &th, &model, &noise, 20, 42).unwrap();
        let b = synthesize(&g, &th, &model, &noise, 20, 42).unwrap();
        assert_eq!(a, b);
        let d = synthesize(&g, &th, &model, &noise, 20, 43).unwrap();
        assert_ne!(a, d);
    }

    #[test]
    fn deterministic_model_dimension_checked() {
        let g = ArrayGeometry::ula(4).unwrap();
        let th = SourceAngles::new(vec![0.2]).unwrap();
        let model = SourceModel::Deterministic { s: CMat::zeros(1, 10) };
        let noise = NoiseProfile::uniform(4);
        assert!(synthesize(&g, &th, &model, &noise, 11, 0).is_err());
        assert!(synthesize(&g, &th, &model, &NoiseProfile::uniform(3), 10, 0).is_err());
    }

    #[test]
    fn unit_scalar_unitary() {
        let mut rng = stream_rng(5, 0);
        let u = random_unitary(1, &mut rng);
        assert!((u[(0, 0)].norm() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn snr_anchor_and_scaling() {
        let g = ArrayGeometry::ula(4).unwrap();
        let th = SourceAngles::new(vec![0.3]).unwrap();
        let model = SourceModel::stochastic(diagonal_covariance(&[1.0])).unwrap();
        let trend = NoiseProfile::uniform(4);
        let l0 = scale_for_snr(&g, &th, &model, &trend, 0.0).unwrap();
        for l in l0.as_slice() {
            assert!((l - 1.0).abs() < 1e-14);
        }
        let l20 = scale_for_snr(&g, &th, &model, &trend, 20.0).unwrap();
        assert!((l20.as_slice()[0] / l0.as_slice()[0] - 10.0).abs() < 1e-12);
        assert!(scale_for_snr(&g, &th, &model, &trend, f64::NAN).is_err());

        let trend = NoiseProfile::linear_trend(11);
        let g = ArrayGeometry::ula(11).unwrap();
        let l = scale_for_snr(&g, &th, &model, &trend, 13.0).unwrap();
        assert!((l.as_slice()[10] / l.as_slice()[0] - 10.0).abs() < 1e-12);
        assert!((snr_db(&g, &th, &model, &l).unwrap() - 13.0).abs() < 1e-10);
    }
}
