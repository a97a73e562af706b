use apn_doa::array::{
    diagonal_covariance, random_unitary, rotated_covariance, scale_for_snr, steering, steering_set, stream_rng, synthesize,
};
use apn_doa::linalg::{identity, max_abs, CMat};
use apn_doa::{ArrayGeometry, NoiseProfile, SourceAngles, SourceModel};
use num_complex::Complex64;
use rand::Rng;

fn rel(a: Complex64, b: Complex64) -> f64 {
    (a - b).norm() / a.norm().max(b.norm()).max(1e-12)
}

#[test]
fn steering_derivatives_match_finite_differences() {
    let mut rng = stream_rng(11, 0);
    for _ in 0..100 {
        let m = rng.random_range(2..=12);
        let mut positions: Vec<f64> = (0..m).map(|i| i as f64 + rng.random_range(-0.3..0.3)).collect();
        positions.sort_by(f64::total_cmp);
        let g = ArrayGeometry::new(positions).unwrap();
        let theta = rng.random_range(-1.4..1.4);
        let set = steering_set(&g, &[theta]).unwrap();
        let h = 1e-5;
        let up = steering(&g, theta + h).unwrap();
        let dn = steering(&g, theta - h).unwrap();
        let mid = steering(&g, theta).unwrap();
        for i in 0..m {
            let d1 = (up[i] - dn[i]) / (2.0 * h);
            assert!(rel(set.d_o[(i, 0)], d1) < 1e-6, "first derivative sensor {i}");
            let h2 = 1e-4;
            let up2 = steering(&g, theta + h2).unwrap()[i];
            let dn2 = steering(&g, theta - h2).unwrap()[i];
            let d2 = (up2 - 2.0 * mid[i] + dn2) / (h2 * h2);
            assert!(rel(set.d_o2[(i, 0)], d2) < 1e-4, "second derivative sensor {i}");
        }
    }
}

#[test]
fn steering_entries_have_unit_modulus() {
    let g = ArrayGeometry::ula(11).unwrap();
    let set = steering_set(&g, &[-1.2, 0.0, 0.7]).unwrap();
    for v in set.phi_o.iter() {
        assert!((v.norm() - 1.0).abs() < 1e-14);
    }
}

#[test]
fn columns_depend_only_on_their_own_angle() {
    let g = ArrayGeometry::ula(7).unwrap();
    let a = steering_set(&g, &[-0.3, 0.2, 0.9]).unwrap();
    let b = steering_set(&g, &[-0.3, 0.25, 0.9]).unwrap();
    for col in [0, 2] {
        assert_eq!(a.phi_o.column(col), b.phi_o.column(col));
        assert_eq!(a.d_o.column(col), b.d_o.column(col));
        assert_eq!(a.d_o2.column(col), b.d_o2.column(col));
    }
    assert_ne!(a.phi_o.column(1), b.phi_o.column(1));
}

#[test]
fn haar_unitaries_are_unitary() {
    let mut rng = stream_rng(3, 1);
    for k in 1..=16 {
        let u = random_unitary(k, &mut rng);
        assert!(max_abs(&(u.adjoint() * &u - identity(k))) < 1e-12, "K = {k}");
    }
}

#[test]
fn rotated_covariance_keeps_eigenvalues() {
    let v = [2.337, 0.06604, 0.0004642];
    let u = random_unitary(3, &mut stream_rng(2, 9));
    let rs = rotated_covariance(&u, &v);
    let mut eig: Vec<f64> = rs.symmetric_eigen().eigenvalues.iter().cloned().collect();
    eig.sort_by(|a, b| b.total_cmp(a));
    for (e, t) in eig.iter().zip(v) {
        assert!((e - t).abs() < 1e-10);
    }
}

#[test]
fn sample_covariance_converges() {
    let g = ArrayGeometry::ula(4).unwrap();
    let theta = SourceAngles::new(vec![0.3]).unwrap();
    let model = SourceModel::stochastic(diagonal_covariance(&[1.0])).unwrap();
    let noise = NoiseProfile::new(vec![1.0, 1.5, 2.0, 3.0]).unwrap();
    let n = 1_000_000;
    let z = synthesize(&g, &theta, &model, &noise, n, 5).unwrap();
    let r = z.data() * z.data().adjoint() / Complex64::new(n as f64, 0.0);
    let phi = steering_set(&g, theta.as_slice()).unwrap().phi_o;
    let noise_cov = CMat::from_diagonal(&nalgebra::DVector::from_iterator(4, noise.variances().into_iter().map(|v| Complex64::new(v, 0.0))));
    let expected = &phi * phi.adjoint() + noise_cov;
    assert!(max_abs(&(r - expected)) < 1e-2);
}

#[test]
fn noise_variance_per_sensor() {
    let g = ArrayGeometry::ula(5).unwrap();
    let theta = SourceAngles::new(vec![0.1]).unwrap();
    let model = SourceModel::stochastic(diagonal_covariance(&[0.0])).unwrap();
    let noise = NoiseProfile::linear_trend(5);
    let n = 100_000;
    let z = synthesize(&g, &theta, &model, &noise, n, 8).unwrap();
    for (m, var) in noise.variances().iter().enumerate() {
        let emp = z.data().row(m).iter().map(|v| v.norm_sqr()).sum::<f64>() / n as f64;
        assert!((emp / var - 1.0).abs() < 0.03, "sensor {m}: {emp} vs {var}");
    }
}

#[test]
fn scaled_trend_keeps_its_shape() {
    let g = ArrayGeometry::ula(11).unwrap();
    let theta = SourceAngles::new(vec![-0.2513, 0.1571, 1.005]).unwrap();
    let model = SourceModel::stochastic(diagonal_covariance(&[1.0, 0.64, 0.25])).unwrap();
    let trend = NoiseProfile::linear_trend(11);
    let a = scale_for_snr(&g, &theta, &model, &trend, 10.0).unwrap();
    let b = scale_for_snr(&g, &theta, &model, &trend, 30.0).unwrap();
    let l = a.as_slice();
    assert!((l[10] / l[0] - 10.0).abs() < 1e-12);
    assert!((b.as_slice()[0] / l[0] - 10.0).abs() < 1e-12);
    let snr = apn_doa::array::snr_db(&g, &theta, &model, &a).unwrap();
    assert!((snr - 10.0).abs() < 1e-10);
}
