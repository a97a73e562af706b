//! Dense complex helpers shared by the workspace and derivative code, plus a
//! lightweight per-thread operation counter.
//!
//! Every helper that performs O(n^3) or O(n^2) complex arithmetic records the
//! number of complex multiply-adds it issued. Reported flop figures convert
//! that tally with a configurable factor (8 real flops per complex
//! multiply-add by default).

use std::cell::Cell;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

pub type CMat = DMatrix<Complex64>;
pub type CVec = DVector<Complex64>;
pub type RMat = DMatrix<f64>;
pub type RVec = DVector<f64>;

/// Real flops charged per complex multiply-add unless told otherwise.
pub const DEFAULT_FLOPS_PER_CMAC: u64 = 8;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct OpCount {
    pub complex_mac: u64,
    pub real: u64,
}

impl OpCount {
    pub fn flops(&self, flops_per_cmac: u64) -> u64 {
        self.complex_mac * flops_per_cmac + self.real
    }
}

thread_local! {
    static OPS: Cell<OpCount> = const { Cell::new(OpCount { complex_mac: 0, real: 0 }) };
}

pub fn count_cmac(n: usize) {
    OPS.with(|c| {
        let mut v = c.get();
        v.complex_mac += n as u64;
        c.set(v);
    });
}

pub fn count_real(n: usize) {
    OPS.with(|c| {
        let mut v = c.get();
        v.real += n as u64;
        c.set(v);
    });
}

pub fn op_count() -> OpCount {
    OPS.with(|c| c.get())
}

/// Runs `f` and returns its result with the operations it issued on this thread.
pub fn measure_ops<R>(f: impl FnOnce() -> R) -> (R, OpCount) {
    let before = op_count();
    let r = f();
    let after = op_count();
    (
        r,
        OpCount {
            complex_mac: after.complex_mac - before.complex_mac,
            real: after.real - before.real,
        },
    )
}

pub fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

/// Counted matrix product.
pub fn mul(a: &CMat, b: &CMat) -> CMat {
    count_cmac(a.nrows() * a.ncols() * b.ncols());
    a * b
}

/// Counted `a^H b`.
pub fn mul_ah_b(a: &CMat, b: &CMat) -> CMat {
    count_cmac(a.nrows() * a.ncols() * b.ncols());
    a.ad_mul(b)
}

pub fn adjoint(a: &CMat) -> CMat {
    a.adjoint()
}

pub fn identity(n: usize) -> CMat {
    CMat::identity(n, n)
}

pub fn to_complex(a: &RMat) -> CMat {
    a.map(|x| c(x, 0.0))
}

/// `diag(A B)` as the row sums of `A ∘ Bᵀ`, never forming the full product.
pub fn diag_of_product(a: &CMat, b: &CMat) -> CVec {
    assert_eq!(a.ncols(), b.nrows());
    assert_eq!(a.nrows(), b.ncols());
    count_cmac(a.nrows() * a.ncols());
    CVec::from_fn(a.nrows(), |i, _| {
        (0..a.ncols()).map(|j| a[(i, j)] * b[(j, i)]).sum()
    })
}

/// `Re{A ∘ Bᵀ}` computed as `Re A ∘ Re Bᵀ − Im A ∘ Im Bᵀ`.
pub fn re_hadamard_t(a: &CMat, b: &CMat) -> RMat {
    assert_eq!(a.nrows(), b.ncols());
    assert_eq!(a.ncols(), b.nrows());
    count_real(3 * a.len());
    RMat::from_fn(a.nrows(), a.ncols(), |i, j| {
        let x = a[(i, j)];
        let y = b[(j, i)];
        x.re * y.re - x.im * y.im
    })
}

/// Reference `Re{A ∘ Bᵀ}` through the full complex product.
pub fn re_hadamard_t_naive(a: &CMat, b: &CMat) -> RMat {
    RMat::from_fn(a.nrows(), a.ncols(), |i, j| (a[(i, j)] * b[(j, i)]).re)
}

/// `diag(v) A`
pub fn scale_rows(a: &CMat, v: &RVec) -> CMat {
    assert_eq!(a.nrows(), v.len());
    count_real(2 * a.len());
    CMat::from_fn(a.nrows(), a.ncols(), |i, j| a[(i, j)] * v[i])
}

/// `A diag(v)`
pub fn scale_cols(a: &CMat, v: &RVec) -> CMat {
    assert_eq!(a.ncols(), v.len());
    count_real(2 * a.len());
    CMat::from_fn(a.nrows(), a.ncols(), |i, j| a[(i, j)] * v[j])
}

pub fn scale_rows_real(a: &RMat, v: &RVec) -> RMat {
    RMat::from_fn(a.nrows(), a.ncols(), |i, j| a[(i, j)] * v[i])
}

pub fn scale_cols_real(a: &RMat, v: &RVec) -> RMat {
    RMat::from_fn(a.nrows(), a.ncols(), |i, j| a[(i, j)] * v[j])
}

pub fn trace(a: &CMat) -> Complex64 {
    a.diagonal().iter().sum()
}

pub fn max_abs(a: &CMat) -> f64 {
    a.iter().fold(0.0, |m, z| m.max(z.norm()))
}

pub fn max_abs_real(a: &RMat) -> f64 {
    a.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Largest deviation from Hermitian symmetry.
pub fn hermitian_defect(a: &CMat) -> f64 {
    max_abs(&(a - a.adjoint()))
}

/// Cholesky of a Hermitian matrix, `None` if not positive definite.
pub fn cholesky(a: &CMat) -> Option<nalgebra::Cholesky<Complex64, nalgebra::Dyn>> {
    count_cmac(a.nrows().pow(3) / 6);
    a.clone().cholesky()
}

/// Inverse of an upper-triangular matrix by back substitution.
pub fn upper_triangular_inverse(r: &CMat) -> Option<CMat> {
    let n = r.nrows();
    count_cmac(n * n * n / 6);
    r.solve_upper_triangular(&identity(n))
}

/// Relative pivot threshold below which a Hermitian matrix is not treated as
/// positive definite.
pub const PD_TOLERANCE: f64 = 1e-12;

/// Inverse and log-determinant of a Hermitian positive-definite matrix.
/// Returns `None` when a Cholesky pivot falls below `PD_TOLERANCE` times the
/// largest diagonal entry.
pub fn hpd_inverse_logdet(a: &CMat) -> Option<(CMat, f64)> {
    let ch = cholesky(a)?;
    let scale = a.diagonal().iter().fold(0.0f64, |m, z| m.max(z.re));
    let min_pivot = ch.l_dirty().diagonal().iter().fold(f64::INFINITY, |m, z| m.min(z.re * z.re));
    if !(scale > 0.0) || min_pivot < PD_TOLERANCE * scale {
        return None;
    }
    let logdet = 2.0 * ch.l_dirty().diagonal().iter().map(|d| d.re.ln()).sum::<f64>();
    count_cmac(a.nrows().pow(3) / 2);
    Some((ch.inverse(), logdet))
}

pub fn hermitize(a: &CMat) -> CMat {
    (a + a.adjoint()).map(|z| z * 0.5)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> CMat {
        CMat::from_fn(rows, cols, |_, _| c(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5))
    }

    #[test]
    fn diag_of_product_matches_full_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random(5, 3, &mut rng);
        let b = random(3, 5, &mut rng);
        let full = &a * &b;
        let d = diag_of_product(&a, &b);
        for i in 0..5 {
            assert!((d[i] - full[(i, i)]).norm() < 1e-14);
        }
    }

    #[test]
    fn halving_identity_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let a = random(4, 6, &mut rng);
            let b = random(6, 4, &mut rng);
            let fast = re_hadamard_t(&a, &b);
            let explicit = RMat::from_fn(4, 6, |i, j| {
                a[(i, j)].re * b[(j, i)].re - a[(i, j)].im * b[(j, i)].im
            });
            assert_eq!(fast, explicit);
            let naive = re_hadamard_t_naive(&a, &b);
            assert!(max_abs_real(&(fast - naive)) < 1e-15);
        }
    }

    #[test]
    fn counter_tracks_products() {
        let a = CMat::identity(4, 3);
        let b = CMat::identity(3, 2);
        let (_, ops) = measure_ops(|| mul(&a, &b));
        assert_eq!(ops.complex_mac, 24);
        assert_eq!(ops.flops(DEFAULT_FLOPS_PER_CMAC), 192);
    }

    #[test]
    fn hpd_logdet() {
        let a = CMat::from_diagonal(&CVec::from_vec(vec![c(2.0, 0.0), c(3.0, 0.0)]));
        let (inv, ld) = hpd_inverse_logdet(&a).unwrap();
        assert!((ld - 6f64.ln()).abs() < 1e-14);
        assert!((inv[(1, 1)].re - 1.0 / 3.0).abs() < 1e-15);
    }
}
