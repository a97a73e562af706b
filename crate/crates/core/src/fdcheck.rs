//! Central finite-difference oracle for gradients and Hessians.

use crate::linalg::{RMat, RVec};
use crate::{Error, Result};

/// Denominator floor for relative errors.
pub const REL_FLOOR: f64 = 1e-12;

/// Gradient step for coordinate value `x`.
pub fn gradient_step(x: f64) -> f64 {
    (1e-7 * x.abs()).max(1e-6)
}

/// Base step for second differences. Rounding error of a second difference
/// grows like `eps |f| / h²`, so it needs a much larger step than the
/// gradient; the `O(h²)` truncation error is removed by Richardson
/// extrapolation over `h` and `2h`.
pub fn hessian_step(x: f64) -> f64 {
    (1e-3 * x.abs()).max(1e-3)
}

pub fn relative_error(analytic: f64, fd: f64) -> f64 {
    (analytic - fd).abs() / analytic.abs().max(fd.abs()).max(REL_FLOOR)
}

#[derive(Debug, Clone)]
pub struct FdReport {
    pub fd_gradient: RVec,
    pub gradient_rel: RVec,
    pub fd_hessian: Option<RMat>,
    pub hessian_rel: Option<RMat>,
}

impl FdReport {
    pub fn max_gradient_error(&self) -> f64 {
        self.gradient_rel.iter().cloned().fold(0.0, f64::max)
    }

    pub fn max_hessian_error(&self) -> f64 {
        self.hessian_rel.as_ref().map_or(0.0, |h| h.iter().cloned().fold(0.0, f64::max))
    }
}

fn eval<F: Fn(&[f64]) -> Result<f64>>(f: &F, x: &[f64]) -> Result<f64> {
    let v = f(x)?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite(format!("cost at {x:?}")))
    }
}

pub fn fd_gradient<F: Fn(&[f64]) -> Result<f64>>(f: &F, x: &[f64]) -> Result<RVec> {
    let mut g = RVec::zeros(x.len());
    let mut xp = x.to_vec();
    for i in 0..x.len() {
        let h = gradient_step(x[i]);
        xp[i] = x[i] + h;
        let fp = eval(f, &xp)?;
        xp[i] = x[i] - h;
        let fm = eval(f, &xp)?;
        xp[i] = x[i];
        g[i] = (fp - fm) / (2.0 * h);
    }
    Ok(g)
}

fn second_difference<F: Fn(&[f64]) -> Result<f64>>(f: &F, x: &[f64], f0: f64, i: usize, j: usize, hi: f64, hj: f64) -> Result<f64> {
    let mut xp = x.to_vec();
    if i == j {
        xp[i] = x[i] + hi;
        let fp = eval(f, &xp)?;
        xp[i] = x[i] - hi;
        let fm = eval(f, &xp)?;
        return Ok((fp - 2.0 * f0 + fm) / (hi * hi));
    }
    let mut corner = |si: f64, sj: f64| {
        xp[i] = x[i] + si * hi;
        xp[j] = x[j] + sj * hj;
        eval(f, &xp)
    };
    let fpp = corner(1.0, 1.0)?;
    let fpm = corner(1.0, -1.0)?;
    let fmp = corner(-1.0, 1.0)?;
    let fmm = corner(-1.0, -1.0)?;
    Ok((fpp - fpm - fmp + fmm) / (4.0 * hi * hj))
}

/// Second-difference Hessian with one Richardson step.
pub fn fd_hessian<F: Fn(&[f64]) -> Result<f64>>(f: &F, x: &[f64]) -> Result<RMat> {
    let n = x.len();
    let f0 = eval(f, x)?;
    let mut h = RMat::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let (hi, hj) = (hessian_step(x[i]), hessian_step(x[j]));
            let fine = second_difference(f, x, f0, i, j, hi, hj)?;
            let coarse = second_difference(f, x, f0, i, j, 2.0 * hi, 2.0 * hj)?;
            let v = (4.0 * fine - coarse) / 3.0;
            h[(i, j)] = v;
            h[(j, i)] = v;
        }
    }
    Ok(h)
}

/// Compares an analytic gradient (and optionally Hessian) with finite differences of `f` at `x`.
pub fn fd_check<F: Fn(&[f64]) -> Result<f64>>(f: F, x: &[f64], gradient: &RVec, hessian: Option<&RMat>) -> Result<FdReport> {
    if gradient.len() != x.len() {
        return Err(Error::Dimension("gradient length differs from the point dimension".into()));
    }
    let fd_g = fd_gradient(&f, x)?;
    let gradient_rel = RVec::from_iterator(x.len(), (0..x.len()).map(|i| relative_error(gradient[i], fd_g[i])));
    let (fd_hessian, hessian_rel) = match hessian {
        Some(h) => {
            if h.nrows() != x.len() || h.ncols() != x.len() {
                return Err(Error::Dimension("Hessian size differs from the point dimension".into()));
            }
            let fd_h = fd_hessian(&f, x)?;
            let rel = RMat::from_fn(x.len(), x.len(), |i, j| relative_error(h[(i, j)], fd_h[(i, j)]));
            (Some(fd_h), Some(rel))
        }
        None => (None, None),
    };
    Ok(FdReport { fd_gradient: fd_g, gradient_rel, fd_hessian, hessian_rel })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_form_gradient_and_hessian() {
        let a = RMat::from_row_slice(3, 3, &[2.0, 0.5, -0.3, 0.5, 1.0, 0.2, -0.3, 0.2, 3.0]);
        let f = |x: &[f64]| -> Result<f64> {
            let v = RVec::from_column_slice(x);
            Ok((v.transpose() * &a * &v)[(0, 0)])
        };
        let x = [0.3, -1.2, 0.7];
        let v = RVec::from_column_slice(&x);
        let g = &a * &v * 2.0;
        let h = &a * 2.0;
        let rep = fd_check(f, &x, &g, Some(&h)).unwrap();
        assert!(rep.max_gradient_error() < 1e-8, "{}", rep.max_gradient_error());
        assert!(rep.max_hessian_error() < 1e-8, "{}", rep.max_hessian_error());
    }

    #[test]
    fn non_finite_cost_is_an_error() {
        let f = |x: &[f64]| -> Result<f64> { Ok(if x[0] > 0.0 { f64::NAN } else { 0.0 }) };
        assert!(matches!(fd_check(f, &[0.0], &RVec::zeros(1), None), Err(Error::NonFinite(_))));
    }

    #[test]
    fn steps() {
        assert_eq!(gradient_step(0.0), 1e-6);
        assert!((gradient_step(1e3) - 1e-4).abs() < 1e-18);
        assert!(relative_error(0.0, 0.0) == 0.0);
    }
}
