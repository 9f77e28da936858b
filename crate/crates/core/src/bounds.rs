//! Finite-sample bounds for the worst-case risk of a fixed coefficient
//! vector under Gaussian data.
//!
//! With probability at least `1 − 2e^{−q}`,
//!
//! ```text
//! sup_τ R(β) ≤ ½ R̂pred(β) + ((1+2τ)/2) |R̂diff(β)| + (1+τ)(‖β‖₁² + 1) φ₊
//! ```
//!
//! where `φ₊ = φ(p, nₑ) + φ(p, nₒ)`. The bound is stated for a fixed `β`;
//! plugging in a data-dependent `β̂λ` is a heuristic.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::sem::{Dataset, EnvPair};

/// Concentration radius
/// `V[Y] · max_k V[X_k] · (√((4q + 8 log p)/n) + (4q + 8 log p)/n)`.
pub fn phi(p: usize, n: usize, q: f64, var_y: f64, max_var_x: f64) -> f64 {
    assert!(p >= 1 && n >= 1 && q > 0.0, "phi needs p ≥ 1, n ≥ 1, q > 0");
    let t = (4.0 * q + 8.0 * (p as f64).ln()) / n as f64;
    var_y * max_var_x * (t.sqrt() + t)
}

/// Where the variances in [`BoundInputs`] came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VarianceSource {
    Population,
    /// Sample variances substituted for the unknown population ones.
    PlugIn,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundInputs {
    pub p: usize,
    pub n_e: usize,
    pub n_o: usize,
    pub q: f64,
    pub var_y_e: f64,
    pub var_y_o: f64,
    pub max_var_x_e: f64,
    pub max_var_x_o: f64,
    pub source: VarianceSource,
}

fn variance(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / n;
    values.map(|v| (v - mean).powi(2)).sum::<f64>() / n
}

fn dataset_variances(d: &Dataset) -> (f64, f64) {
    let var_y = variance(d.y().iter().copied());
    let max_var_x = (0..d.p()).map(|k| variance(d.x().column(k).iter().copied())).fold(0.0, f64::max);
    (var_y, max_var_x)
}

impl BoundInputs {
    pub fn new(
        p: usize,
        n_e: usize,
        n_o: usize,
        q: f64,
        (var_y_e, max_var_x_e): (f64, f64),
        (var_y_o, max_var_x_o): (f64, f64),
        source: VarianceSource,
    ) -> Result<Self> {
        if p == 0 || n_e == 0 || n_o == 0 {
            return Err(Error::InvalidInput("p and sample sizes must be positive".into()));
        }
        if !(q > 0.0 && q.is_finite()) {
            return Err(Error::InvalidInput(format!("q must be positive, got {q}")));
        }
        let vars = [var_y_e, var_y_o, max_var_x_e, max_var_x_o];
        if vars.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::InvalidInput("variances must be finite and nonnegative".into()));
        }
        Ok(Self { p, n_e, n_o, q, var_y_e, var_y_o, max_var_x_e, max_var_x_o, source })
    }

    /// Plug-in inputs from the sample variances of `pair`.
    pub fn from_pair(pair: &EnvPair, q: f64) -> Result<Self> {
        Self::new(
            pair.p(),
            pair.shifted.n(),
            pair.obs.n(),
            q,
            dataset_variances(&pair.shifted),
            dataset_variances(&pair.obs),
            VarianceSource::PlugIn,
        )
    }

    pub fn phi_shifted(&self) -> f64 {
        phi(self.p, self.n_e, self.q, self.var_y_e, self.max_var_x_e)
    }

    pub fn phi_obs(&self) -> f64 {
        phi(self.p, self.n_o, self.q, self.var_y_o, self.max_var_x_o)
    }

    /// `φ₊ = φ(p, nₑ) + φ(p, nₒ)`.
    pub fn phi_plus(&self) -> f64 {
        self.phi_shifted() + self.phi_obs()
    }

    /// `φ(p, n)` for a new sample of size `n` using the shifted-environment
    /// variances; `None` stands for an infinite sample and gives 0.
    pub fn phi_new(&self, n_new: Option<usize>) -> f64 {
        match n_new {
            None => 0.0,
            Some(n) => phi(self.p, n, self.q, self.var_y_e, self.max_var_x_e),
        }
    }
}

/// `½ R̂pred + ((1+2τ)/2) |R̂diff|`.
pub fn bound_core(r_pred_hat: f64, r_diff_hat: f64, tau: f64) -> f64 {
    0.5 * r_pred_hat + 0.5 * (1.0 + 2.0 * tau) * r_diff_hat.abs()
}

fn l1_factor(beta: &DVector<f64>) -> f64 {
    beta.lp_norm(1).powi(2) + 1.0
}

/// Upper bound on the worst population risk over shifts of strength `1 + τ`.
pub fn worst_risk_bound(inputs: &BoundInputs, beta: &DVector<f64>, r_pred_hat: f64, r_diff_hat: f64, tau: f64) -> f64 {
    let eta = (1.0 + tau) * l1_factor(beta) * inputs.phi_plus();
    bound_core(r_pred_hat, r_diff_hat, tau) + eta
}

/// Upper bound on the empirical risk of `beta` on a new shifted sample of
/// size `n_new` (`None` for the infinite-sample limit).
pub fn sample_risk_bound(
    inputs: &BoundInputs,
    n_new: Option<usize>,
    beta: &DVector<f64>,
    r_pred_hat: f64,
    r_diff_hat: f64,
    tau: f64,
) -> f64 {
    let eta = l1_factor(beta) * ((1.0 + tau) * inputs.phi_plus() + inputs.phi_new(n_new));
    bound_core(r_pred_hat, r_diff_hat, tau) + eta
}

/// `(sup_risk − bound_core) / ((1+τ)(‖β‖₁² + 1))`.
pub fn normalized_excess_risk(beta: &DVector<f64>, sup_risk: f64, bound_core: f64, tau: f64) -> f64 {
    (sup_risk - bound_core) / ((1.0 + tau) * l1_factor(beta))
}
