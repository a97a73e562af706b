//! MUSIC with a grid search over the pseudospectrum.

use serde::{Deserialize, Serialize};

use crate::array::{steering, ArrayGeometry};
use crate::linalg::{self, CMat};
use crate::ml::SampleCovariance;
use crate::optimizer::{angle_grid, parabolic_offset};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MusicOptions {
    /// Grid size as a multiple of `M`; at least 4.
    pub grid_factor: usize,
    pub refine: bool,
}

impl Default for MusicOptions {
    fn default() -> Self {
        Self { grid_factor: 32, refine: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MusicResult {
    /// Peak angles in decreasing pseudospectrum order.
    pub theta_hat: Vec<f64>,
    /// Set when fewer than `K` separated local maxima exist and grid points were used to pad.
    pub padded: bool,
}

/// Orthonormal basis of the `M - K` eigenvectors with smallest eigenvalues.
pub fn noise_subspace(r_z: &CMat, k: usize) -> CMat {
    let m = r_z.nrows();
    let eig = linalg::hermitize(r_z).symmetric_eigen();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]).then(a.cmp(&b)));
    CMat::from_fn(m, m - k, |i, j| eig.eigenvectors[(i, order[j])])
}

/// `1 / ‖E_nᴴ φ_o(θ)‖²`.
pub fn pseudospectrum(e_n: &CMat, geometry: &ArrayGeometry, theta: f64) -> Result<f64> {
    let a = steering(geometry, theta)?;
    let proj = e_n.adjoint() * a;
    Ok(1.0 / proj.norm_squared().max(f64::MIN_POSITIVE))
}

pub fn music_estimate(r_z: &SampleCovariance, geometry: &ArrayGeometry, k: usize, opts: &MusicOptions) -> Result<MusicResult> {
    let m = geometry.num_sensors();
    if r_z.num_sensors() != m {
        return Err(Error::Dimension("covariance size differs from the sensor count".into()));
    }
    if k == 0 || k >= m {
        return Err(Error::InvalidInput(format!("MUSIC needs 1 <= K < M, got K = {k}, M = {m}")));
    }
    if opts.grid_factor < 4 {
        return Err(Error::InvalidInput("MUSIC grid must have at least 4M points".into()));
    }
    let e_n = noise_subspace(r_z.matrix(), k);
    let g = opts.grid_factor * m;
    let grid = angle_grid(g);
    let step = std::f64::consts::PI / g as f64;
    let spectrum = grid.iter().map(|&t| pseudospectrum(&e_n, geometry, t)).collect::<Result<Vec<_>>>()?;
    let r_excl = geometry.exclusion_radius();

    let is_peak = |i: usize| (i == 0 || spectrum[i] > spectrum[i - 1]) && (i + 1 == g || spectrum[i] >= spectrum[i + 1]);
    let by_height = |mut idx: Vec<usize>| {
        idx.sort_by(|&a, &b| spectrum[b].total_cmp(&spectrum[a]).then(a.cmp(&b)));
        idx
    };
    let mut chosen: Vec<usize> = Vec::with_capacity(k);
    let far = |chosen: &[usize], i: usize| chosen.iter().all(|&j| (grid[i] - grid[j]).abs() >= r_excl);
    for i in by_height((0..g).filter(|&i| is_peak(i)).collect()) {
        if chosen.len() == k {
            break;
        }
        if far(&chosen, i) {
            chosen.push(i);
        }
    }
    let padded = chosen.len() < k;
    if padded {
        for i in by_height((0..g).collect()) {
            if chosen.len() == k {
                break;
            }
            if far(&chosen, i) {
                chosen.push(i);
            }
        }
        if chosen.len() < k {
            return Err(Error::InvalidInput(format!("grid cannot hold {k} angles separated by {r_excl}")));
        }
    }
    let theta_hat = chosen
        .iter()
        .map(|&i| {
            if opts.refine && i > 0 && i + 1 < g && is_peak(i) {
                grid[i] + step * parabolic_offset(spectrum[i - 1], spectrum[i], spectrum[i + 1])
            } else {
                grid[i]
            }
        })
        .collect();
    Ok(MusicResult { theta_hat, padded })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::array::steering_set;
    use crate::linalg::c;

    fn cov_of(geometry: &ArrayGeometry, theta: &[f64], noise: f64) -> SampleCovariance {
        let phi = steering_set(geometry, theta).unwrap().phi_o;
        let m = geometry.num_sensors();
        let r = &phi * phi.adjoint() + linalg::identity(m) * c(noise, 0.0);
        SampleCovariance::new(r, 100).unwrap()
    }

    #[test]
    fn single_source_noiseless() {
        let g = ArrayGeometry::ula(8).unwrap();
        let r = cov_of(&g, &[0.3], 0.0);
        let out = music_estimate(&r, &g, 1, &MusicOptions { refine: false, ..Default::default() }).unwrap();
        let cell = std::f64::consts::PI / (32.0 * 8.0);
        assert!((out.theta_hat[0] - 0.3).abs() <= cell);
        assert!(!out.padded);
    }

    #[test]
    fn scale_invariant() {
        let g = ArrayGeometry::ula(10).unwrap();
        let r = cov_of(&g, &[-0.4, 0.2, 0.9], 0.1);
        let scaled = SampleCovariance::new(r.matrix() * c(37.0, 0.0), 100).unwrap();
        let a = music_estimate(&r, &g, 3, &MusicOptions::default()).unwrap();
        let b = music_estimate(&scaled, &g, 3, &MusicOptions::default()).unwrap();
        for (x, y) in a.theta_hat.iter().zip(&b.theta_hat) {
            assert!((x - y).abs() < 1e-10);
        }
    }

    #[test]
    fn basis_rotation_leaves_spectrum() {
        let g = ArrayGeometry::ula(6).unwrap();
        let r = cov_of(&g, &[-0.4, 0.5], 0.05);
        let e = noise_subspace(r.matrix(), 2);
        let mut rng = crate::array::stream_rng(3, 0);
        let u = crate::array::random_unitary(4, &mut rng);
        let e2 = &e * u;
        for t in [-1.0, -0.2, 0.0, 0.7] {
            let a = pseudospectrum(&e, &g, t).unwrap();
            let b = pseudospectrum(&e2, &g, t).unwrap();
            assert!((a - b).abs() <= 1e-10 * a.abs().max(1.0));
        }
    }

    #[test]
    fn rejects_small_grid() {
        let g = ArrayGeometry::ula(6).unwrap();
        let r = cov_of(&g, &[0.1], 0.1);
        assert!(music_estimate(&r, &g, 1, &MusicOptions { grid_factor: 3, refine: true }).is_err());
    }
}
