//! Sample second moments of the two environments and the empirical risk
//! functionals built from them.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{clip_psd, default_rank_tol, pinv_from_spectrum, SymMatrix};
use crate::sem::{Dataset, EnvPair};

/// Second-moment summary of an [`EnvPair`], with `1/n` normalization and no
/// centering.
///
/// `g_diff = XₑᵀXₑ/nₑ − XₒᵀXₒ/nₒ` and `z_diff = XₑᵀYₑ/nₑ − XₒᵀYₒ/nₒ`;
/// `g_plus`, `z_plus` are the corresponding sums.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentSummary {
    pub g_diff: SymMatrix,
    pub g_plus: SymMatrix,
    pub z_diff: DVector<f64>,
    pub z_plus: DVector<f64>,
    pub yy_e: f64,
    pub yy_o: f64,
    pub n_e: usize,
    pub n_o: usize,
}

struct EnvMoments {
    xx: DMatrix<f64>,
    xy: DVector<f64>,
    yy: f64,
}

fn env_moments(d: &Dataset) -> EnvMoments {
    let n = d.n() as f64;
    EnvMoments {
        xx: d.x().tr_mul(d.x()) / n,
        xy: d.x().tr_mul(d.y()) / n,
        yy: d.y().norm_squared() / n,
    }
}

impl MomentSummary {
    pub fn p(&self) -> usize {
        self.z_plus.len()
    }

    /// Shifted-environment second moment `XₑᵀXₑ/nₑ`.
    pub fn gram_shifted(&self) -> DMatrix<f64> {
        0.5 * (self.g_plus.matrix() + self.g_diff.matrix())
    }

    /// Observational second moment `XₒᵀXₒ/nₒ`.
    pub fn gram_obs(&self) -> DMatrix<f64> {
        0.5 * (self.g_plus.matrix() - self.g_diff.matrix())
    }

    /// Risk of `beta` in each environment evaluated from the moments,
    /// `(R̂ₑ, R̂ₒ)`.
    pub fn risks(&self, beta: &DVector<f64>) -> (f64, f64) {
        let xy_e = 0.5 * (&self.z_plus + &self.z_diff);
        let xy_o = 0.5 * (&self.z_plus - &self.z_diff);
        let r_e = beta.dot(&(self.gram_shifted() * beta)) - 2.0 * beta.dot(&xy_e) + self.yy_e;
        let r_o = beta.dot(&(self.gram_obs() * beta)) - 2.0 * beta.dot(&xy_o) + self.yy_o;
        (r_e, r_o)
    }
}

pub fn compute_moments(pair: &EnvPair) -> Result<MomentSummary> {
    if pair.obs.p() != pair.shifted.p() {
        return Err(Error::InvalidInput("environments have different covariate counts".into()));
    }
    let e = env_moments(&pair.shifted);
    let o = env_moments(&pair.obs);
    Ok(MomentSummary {
        g_diff: SymMatrix::from_nearly_symmetric(&e.xx - &o.xx),
        g_plus: SymMatrix::from_nearly_symmetric(&e.xx + &o.xx),
        z_diff: &e.xy - &o.xy,
        z_plus: &e.xy + &o.xy,
        yy_e: e.yy,
        yy_o: o.yy,
        n_e: pair.shifted.n(),
        n_o: pair.obs.n(),
    })
}

fn check_beta(p: usize, beta: &DVector<f64>) {
    assert_eq!(beta.len(), p, "coefficient vector has length {}, expected {p}", beta.len());
}

/// Mean squared residual `(1/n) Σ (yᵢ − βᵀxᵢ)²`.
pub fn empirical_risk(d: &Dataset, beta: &DVector<f64>) -> f64 {
    check_beta(d.p(), beta);
    let resid = d.y() - d.x() * beta;
    resid.norm_squared() / d.n() as f64
}

/// `R̂ₑ(β) + R̂ₒ(β)`.
pub fn risk_sum_hat(pair: &EnvPair, beta: &DVector<f64>) -> f64 {
    empirical_risk(&pair.shifted, beta) + empirical_risk(&pair.obs, beta)
}

/// `R̂ₑ(β) − R̂ₒ(β)`.
pub fn risk_diff_hat(pair: &EnvPair, beta: &DVector<f64>) -> f64 {
    empirical_risk(&pair.shifted, beta) - empirical_risk(&pair.obs, beta)
}

/// Convexified risk-difference regularizer
/// `(Ĝβ − Ẑ)ᵀ Ĝ^g (Ĝβ − Ẑ)` with `Ĝ` replaced by its PSD clip.
pub fn regularizer_norm_hat(m: &MomentSummary, beta: &DVector<f64>) -> f64 {
    regularizer_norm_hat_with(m, beta, f64::INFINITY).expect("clipping with infinite tolerance cannot fail")
}

/// As [`regularizer_norm_hat`], failing with `NotPositiveSemidefinite` when an
/// eigenvalue of `Ĝ` lies below `-clip_tol · scale`.
pub fn regularizer_norm_hat_with(m: &MomentSummary, beta: &DVector<f64>, clip_tol: f64) -> Result<f64> {
    check_beta(m.p(), beta);
    let g = clip_psd(&m.g_diff, clip_tol)?;
    let pinv = pinv_from_spectrum(&g.spectrum, default_rank_tol(m.p()));
    let r = g.matrix.matrix() * beta - &m.z_diff;
    Ok(pinv.quad_form(&r).max(0.0))
}
