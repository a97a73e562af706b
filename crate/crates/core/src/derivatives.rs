//! Closed-form gradients and Hessians of `L_Do`, `L_D`, `L_C` and `L_S`.
//!
//! Parameters are ordered `[θ_1..θ_K, λ_1..λ_M]`. Every block is evaluated
//! with the column-wise structure of `Φ_o(θ)` and `Λ`: diagonals of products
//! are row sums of Hadamard products, `Λ⁻¹` factors are row/column scalings,
//! and each `Re{A ∘ Bᵀ}` summand is taken through `Re A ∘ Re Bᵀ − Im A ∘ Im Bᵀ`.

use crate::linalg::{
    self, diag_of_product, identity, mul, mul_ah_b, re_hadamard_t, scale_cols_real, scale_rows_real, CMat, RMat,
    RVec,
};
use crate::ml::WhitenedWorkspace;
use crate::{Error, Result};

/// Which concentrated likelihood to differentiate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum CostKind {
    /// Deterministic, `L_D`.
    D,
    /// The log-determinant term `L_C = -N log|C|`.
    C,
    /// Stochastic, `L_S = L_D + L_C`.
    S,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HessianMode {
    /// Every summand.
    #[default]
    Full,
    /// Only the summands that survive near the optimum at high SNR.
    Reduced,
    /// Single-term approximation; identical to `Reduced` for the joint blocks.
    Approx,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientBlocks {
    pub d_theta: RVec,
    pub d_lambda: RVec,
    pub c_theta: RVec,
    pub c_lambda: RVec,
}

impl GradientBlocks {
    pub fn assemble(&self, kind: CostKind) -> RVec {
        match kind {
            CostKind::D => stack(&self.d_theta, &self.d_lambda),
            CostKind::C => stack(&self.c_theta, &self.c_lambda),
            CostKind::S => stack(&(&self.d_theta + &self.c_theta), &(&self.d_lambda + &self.c_lambda)),
        }
    }
}

/// Real Hessian blocks. `*_tl` blocks are `K×M`.
#[derive(Debug, Clone, PartialEq)]
pub struct HessianBlocks {
    pub d_tt: RMat,
    pub d_tl: RMat,
    pub d_ll: RMat,
    pub c_tt: RMat,
    pub c_tl: RMat,
    pub c_ll: RMat,
}

impl HessianBlocks {
    pub fn assemble(&self, kind: CostKind) -> RMat {
        match kind {
            CostKind::D => assemble(&self.d_tt, &self.d_tl, &self.d_ll),
            CostKind::C => assemble(&self.c_tt, &self.c_tl, &self.c_ll),
            CostKind::S => assemble(&(&self.d_tt + &self.c_tt), &(&self.d_tl + &self.c_tl), &(&self.d_ll + &self.c_ll)),
        }
    }
}

fn stack(a: &RVec, b: &RVec) -> RVec {
    RVec::from_iterator(a.len() + b.len(), a.iter().chain(b.iter()).cloned())
}

fn assemble(tt: &RMat, tl: &RMat, ll: &RMat) -> RMat {
    let k = tt.nrows();
    let m = ll.nrows();
    let mut h = RMat::zeros(k + m, k + m);
    h.view_mut((0, 0), (k, k)).copy_from(tt);
    h.view_mut((0, k), (k, m)).copy_from(tl);
    h.view_mut((k, 0), (m, k)).copy_from(&tl.transpose());
    h.view_mut((k, k), (m, m)).copy_from(ll);
    h
}

fn real_part(v: &linalg::CVec) -> RVec {
    RVec::from_iterator(v.len(), v.iter().map(|z| z.re))
}

fn inv_lambda(w: &WhitenedWorkspace) -> RVec {
    w.lambda().map(|l| 1.0 / l)
}

/// Products shared by the deterministic blocks.
struct Common {
    n2: f64,
    ilam: RVec,
    /// `(I-P) D`
    pp_d: CMat,
    /// `Φ† R_zl`
    a1: CMat,
    /// `Φ† R_zl (I-P)`
    a1_pp: CMat,
    /// `R_zl (I-P)`
    r_pp: CMat,
}

impl Common {
    fn new(w: &WhitenedWorkspace) -> Self {
        let a1 = mul(w.pinv(), w.r_zl());
        let a1_pp = mul(&a1, w.p_perp());
        Self {
            n2: 2.0 * w.num_snapshots() as f64,
            ilam: inv_lambda(w),
            pp_d: mul(w.p_perp(), w.d()),
            a1,
            a1_pp,
            r_pp: mul(w.r_zl(), w.p_perp()),
        }
    }
}

/// `g_Dθ = 2N Re diag{Φ† R_zl (I-P) D}` and `g_Dλ = 2N Λ⁻¹ diag{I - (I-P) R_zl (I-P)}`.
pub fn gradient_d(w: &WhitenedWorkspace) -> (RVec, RVec) {
    let cm = Common::new(w);
    gradient_d_with(w, &cm)
}

fn gradient_d_with(w: &WhitenedWorkspace, cm: &Common) -> (RVec, RVec) {
    let g_theta = real_part(&diag_of_product(&cm.a1_pp, w.d())) * cm.n2;
    let pp_r_pp_diag = real_part(&diag_of_product(w.p_perp(), &cm.r_pp));
    let g_lambda = RVec::from_iterator(
        w.num_sensors(),
        pp_r_pp_diag.iter().zip(cm.ilam.iter()).map(|(d, il)| cm.n2 * il * (1.0 - d)),
    );
    (g_theta, g_lambda)
}

/// `g_Cθ = -2N Re diag{M_zl Φᴴ R_zl (I-P) D}` and `g_Cλ = 2N Λ⁻¹ Re diag{P - 2 R_zl P_z}`.
pub fn gradient_c(w: &WhitenedWorkspace) -> Result<(RVec, RVec)> {
    let cm = Common::new(w);
    gradient_c_with(w, &cm)
}

fn gradient_c_with(w: &WhitenedWorkspace, cm: &Common) -> Result<(RVec, RVec)> {
    let b = mul(w.m_zl()?, &mul_ah_b(w.phi(), w.r_zl()));
    let g_theta = real_part(&diag_of_product(&b, &cm.pp_d)) * (-cm.n2);
    let r_pz = real_part(&diag_of_product(w.r_zl(), w.p_z()?));
    let g_lambda = RVec::from_iterator(
        w.num_sensors(),
        (0..w.num_sensors()).map(|m| cm.n2 * cm.ilam[m] * (w.p()[(m, m)].re - 2.0 * r_pz[m])),
    );
    Ok((g_theta, g_lambda))
}

pub fn gradient_blocks(w: &WhitenedWorkspace) -> Result<GradientBlocks> {
    let cm = Common::new(w);
    let (d_theta, d_lambda) = gradient_d_with(w, &cm);
    let (c_theta, c_lambda) = gradient_c_with(w, &cm)?;
    Ok(GradientBlocks { d_theta, d_lambda, c_theta, c_lambda })
}

/// Assembled `(K+M)` gradient of the requested cost.
pub fn gradient(w: &WhitenedWorkspace, kind: CostKind) -> Result<RVec> {
    let cm = Common::new(w);
    let (dt, dl) = gradient_d_with(w, &cm);
    match kind {
        CostKind::D => Ok(stack(&dt, &dl)),
        CostKind::C => {
            let (ct, cl) = gradient_c_with(w, &cm)?;
            Ok(stack(&ct, &cl))
        }
        CostKind::S => {
            let (ct, cl) = gradient_c_with(w, &cm)?;
            Ok(GradientBlocks { d_theta: dt, d_lambda: dl, c_theta: ct, c_lambda: cl }.assemble(CostKind::S))
        }
    }
}

fn require_uniform(w: &WhitenedWorkspace) -> Result<()> {
    if w.is_uniform() {
        Ok(())
    } else {
        Err(Error::InvalidInput("uniform-noise derivatives need a workspace built with lambda = 1".into()))
    }
}

/// Gradient of `L_Do`, `2N Re diag{Φ_o† R_z (I-P_o) D_o}`.
pub fn grad_dml_uniform(w: &WhitenedWorkspace) -> Result<RVec> {
    require_uniform(w)?;
    Ok(gradient_d(w).0)
}

/// Hessian of `L_Do`: five-summand exact form, or the single-term approximation
/// `-2N Re{(Φ_o† R_z Φ_o†ᴴ) ∘ (D_oᴴ (I-P_o) D_o)ᵀ}`.
pub fn hess_dml_uniform(w: &WhitenedWorkspace, exact: bool) -> Result<RMat> {
    require_uniform(w)?;
    let cm = Common::new(w);
    Ok(if exact { d_tt_full(w, &cm) } else { d_tt_reduced(w, &cm) })
}

fn d_tt_full(w: &WhitenedWorkspace, cm: &Common) -> RMat {
    let d = w.d();
    let k = w.num_sources();
    let pd = mul(w.pinv(), d);
    let x = mul(&cm.a1_pp, d);
    let w_mat = mul_ah_b(&cm.pp_d, &mul(w.r_zl(), &cm.pp_d));
    let diag2 = real_part(&diag_of_product(&cm.a1_pp, w.d2()));
    let mut h = re_hadamard_t(w.minv(), &w_mat);
    h -= re_hadamard_t(&pd, &x);
    h -= re_hadamard_t(&x, &pd);
    h += d_tt_reduced_raw(w, cm);
    for i in 0..k {
        h[(i, i)] += diag2[i];
    }
    h * cm.n2
}

/// `-Re{(Φ† R_zl Φ†ᴴ) ∘ (Dᴴ (I-P) D)ᵀ}` without the `2N` factor.
fn d_tt_reduced_raw(w: &WhitenedWorkspace, cm: &Common) -> RMat {
    let g = mul(&cm.a1, &w.pinv().adjoint());
    let y = mul_ah_b(&cm.pp_d, w.d());
    -re_hadamard_t(&g, &y)
}

fn d_tt_reduced(w: &WhitenedWorkspace, cm: &Common) -> RMat {
    d_tt_reduced_raw(w, cm) * cm.n2
}

fn d_blocks(w: &WhitenedWorkspace, cm: &Common, mode: HessianMode) -> (RMat, RMat, RMat) {
    let k = w.num_sources();
    let m = w.num_sensors();
    let p = w.p();
    let four_p_minus_i = p * linalg::c(4.0, 0.0) - identity(m);
    match mode {
        HessianMode::Full => {
            let tt = d_tt_full(w, cm);
            let pp_r_pp = mul(w.p_perp(), &cm.r_pp);
            // Re{(Φ† R_zl (I-P)) ∘ ((I-P) D)ᵀ + (Dᴴ (I-P) R_zl (I-P)) ∘ (Φ†)*} Λ⁻¹
            let v = mul_ah_b(w.d(), &pp_r_pp);
            let tl_raw = re_hadamard_t(&cm.a1_pp, &cm.pp_d) + re_hadamard_t(&v, &w.pinv().adjoint());
            let tl = scale_cols_real(&tl_raw, &cm.ilam) * (2.0 * cm.n2);
            let ll_raw = re_hadamard_t(&four_p_minus_i, &pp_r_pp) - RMat::identity(m, m);
            let ll = scale_cols_real(&scale_rows_real(&ll_raw, &cm.ilam), &cm.ilam) * cm.n2;
            (tt, tl, ll)
        }
        HessianMode::Reduced | HessianMode::Approx => {
            let tt = d_tt_reduced(w, cm);
            // (I-P) R_zl (I-P) → (I-P) near the optimum
            let ll_raw = re_hadamard_t(&four_p_minus_i, w.p_perp()) - RMat::identity(m, m);
            let ll = scale_cols_real(&scale_rows_real(&ll_raw, &cm.ilam), &cm.ilam) * cm.n2;
            (tt, RMat::zeros(k, m), ll)
        }
    }
}

fn c_blocks(w: &WhitenedWorkspace, cm: &Common, mode: HessianMode) -> Result<(RMat, RMat, RMat)> {
    let k = w.num_sources();
    let m = w.num_sensors();
    let d = w.d();
    let r = w.r_zl();
    let p = w.p();
    let p_z = w.p_z()?;
    let m_zl = w.m_zl()?;
    let eye = identity(m);
    let two = linalg::c(2.0, 0.0);

    let y = mul_ah_b(&cm.pp_d, d);
    let r_pz = mul(r, p_z);
    let i_minus_2p = &eye - p * two;
    let i_minus_2rpz = &eye - &r_pz * two;
    // Re{(Dᴴ (I-P)) ∘ (Φ†)*}
    let tl_first = re_hadamard_t(&cm.pp_d.adjoint(), &w.pinv().adjoint());
    let ll_first = re_hadamard_t(&i_minus_2p, p);
    let ll_third = re_hadamard_t(&r_pz, &i_minus_2rpz) * 2.0;

    let (tt_raw, tl_raw, ll_raw) = match mode {
        HessianMode::Full => {
            let b = mul(m_zl, &mul_ah_b(w.phi(), r));
            let pd = mul(w.pinv(), d);
            let bx = mul(&b, &cm.pp_d);
            let bd = mul(&b, d);
            let e = mul(&cm.r_pp, d);
            let f = mul_ah_b(d, &r_pz);
            let t = mul_ah_b(d, &e) - mul(&f, &e);
            let diag2 = real_part(&diag_of_product(&b, &mul(w.p_perp(), w.d2())));

            let mut tt = re_hadamard_t(&bx, &pd) + re_hadamard_t(w.minv(), &y) - re_hadamard_t(m_zl, &t)
                + re_hadamard_t(&bd, &bx);
            for i in 0..k {
                tt[(i, i)] -= diag2[i];
            }

            // row terms combine with signs (+, -, -)
            let rd = mul(r, d);
            let r_i_pzr_d = &rd - mul(&r_pz, &rd);
            let m_phi_h = mul(m_zl, &w.phi().adjoint());
            let dh_i_rpz = d.adjoint() - &f;
            let tl = tl_first - re_hadamard_t(&m_phi_h, &r_i_pzr_d) - re_hadamard_t(&dh_i_rpz, &b.adjoint());

            let r_i_pzr = r - mul(&r_pz, r);
            let ll = ll_first - re_hadamard_t(&r_i_pzr, p_z) * 4.0 - ll_third;
            (tt, tl, ll)
        }
        HessianMode::Reduced | HessianMode::Approx => {
            let tt = re_hadamard_t(w.minv(), &y);
            (tt, tl_first, ll_first - ll_third)
        }
    };
    let tt = tt_raw * cm.n2;
    let tl = scale_cols_real(&tl_raw, &cm.ilam) * (2.0 * cm.n2);
    let ll = scale_cols_real(&scale_rows_real(&ll_raw, &cm.ilam), &cm.ilam) * cm.n2;
    Ok((tt, tl, ll))
}

/// All six blocks of `H_D` and `H_C`.
pub fn hessian_blocks(w: &WhitenedWorkspace, mode: HessianMode) -> Result<HessianBlocks> {
    let cm = Common::new(w);
    let (d_tt, d_tl, d_ll) = d_blocks(w, &cm, mode);
    let (c_tt, c_tl, c_ll) = c_blocks(w, &cm, mode)?;
    Ok(HessianBlocks { d_tt, d_tl, d_ll, c_tt, c_tl, c_ll })
}

/// Assembled `(K+M)×(K+M)` Hessian of the requested cost.
pub fn hessian(w: &WhitenedWorkspace, kind: CostKind, mode: HessianMode) -> Result<RMat> {
    let cm = Common::new(w);
    match kind {
        CostKind::D => {
            let (tt, tl, ll) = d_blocks(w, &cm, mode);
            Ok(assemble(&tt, &tl, &ll))
        }
        CostKind::C => {
            let (tt, tl, ll) = c_blocks(w, &cm, mode)?;
            Ok(assemble(&tt, &tl, &ll))
        }
        CostKind::S => {
            let (d_tt, d_tl, d_ll) = d_blocks(w, &cm, mode);
            let (c_tt, c_tl, c_ll) = c_blocks(w, &cm, mode)?;
            Ok(HessianBlocks { d_tt, d_tl, d_ll, c_tt, c_tl, c_ll }.assemble(CostKind::S))
        }
    }
}

/// Cost value, gradient and Hessian at one workspace.
pub fn cost_grad_hess(w: &WhitenedWorkspace, kind: CostKind, mode: HessianMode) -> Result<(f64, RVec, RMat)> {
    let f = match kind {
        CostKind::D => crate::ml::cost_dml(w),
        CostKind::C => crate::ml::cost_c(w)?,
        CostKind::S => crate::ml::cost_sml(w)?,
    };
    Ok((f, gradient(w, kind)?, hessian(w, kind, mode)?))
}
