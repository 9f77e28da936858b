//! The causal regularization estimator
//!
//! ```text
//! β̂λ = argmin ½ R̂pred(β) + (λ/2) R̂norm(β)
//! ```
//!
//! solved in closed form as `(Ĝ⁺ + λĜ) β = Ẑ⁺ + λ P Ẑ`, where `P` projects onto
//! `range(Ĝ)`. `λ = 0` is pooled least squares and `λ = ∞` the minimum-norm
//! causal Dantzig `Ĝ^g Ẑ`.

use std::cmp::Ordering;
use std::fmt;

use nalgebra::DVector;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::{
    clip_psd, default_rank_tol, pinv_from_spectrum, range_projector, rank_of_spectrum, solve_with_spectrum,
    sym_eigen, SymMatrix,
};
use crate::moments::{compute_moments, MomentSummary};
use crate::sem::EnvPair;

/// Regularization strength: a finite nonnegative value or the `∞` endpoint.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Lambda {
    Finite(f64),
    Infinity,
}

impl Lambda {
    pub fn finite(value: f64) -> Result<Self> {
        if value.is_finite() && value >= 0.0 {
            Ok(Lambda::Finite(value))
        } else {
            Err(Error::InvalidGrid(format!("lambda must be finite and nonnegative, got {value}")))
        }
    }

    pub fn is_infinite(&self) -> bool {
        matches!(self, Lambda::Infinity)
    }

    /// Numeric value, `f64::INFINITY` for the endpoint.
    pub fn value(&self) -> f64 {
        match self {
            Lambda::Finite(v) => *v,
            Lambda::Infinity => f64::INFINITY,
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "inf" | "infinity" | "∞" => Ok(Lambda::Infinity),
            other => other
                .parse::<f64>()
                .map_err(|_| Error::InvalidGrid(format!("cannot parse lambda {s:?}")))
                .and_then(Lambda::finite),
        }
    }
}

impl PartialOrd for Lambda {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        match (self, other) {
            (Lambda::Infinity, Lambda::Infinity) => Some(Ordering::Equal),
            (Lambda::Infinity, _) => Some(Ordering::Greater),
            (_, Lambda::Infinity) => Some(Ordering::Less),
            (Lambda::Finite(a), Lambda::Finite(b)) => a.partial_cmp(b),
        }
    }
}

impl fmt::Display for Lambda {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Lambda::Finite(v) => write!(f, "{v}"),
            Lambda::Infinity => f.write_str("inf"),
        }
    }
}

/// `{0} ∪ 20 log-spaced values in [1e-2, 1e3] ∪ {∞}`.
pub fn default_grid() -> Vec<Lambda> {
    let mut grid = Vec::with_capacity(22);
    grid.push(Lambda::Finite(0.0));
    let (lo, hi) = (-2.0_f64, 3.0_f64);
    for k in 0..20 {
        let e = lo + (hi - lo) * k as f64 / 19.0;
        grid.push(Lambda::Finite(10f64.powf(e)));
    }
    grid.push(Lambda::Infinity);
    grid
}

pub fn validate_grid(lambdas: &[Lambda]) -> Result<()> {
    if lambdas.is_empty() {
        return Err(Error::InvalidGrid("grid is empty".into()));
    }
    for l in lambdas {
        if let Lambda::Finite(v) = l {
            if !(v.is_finite() && *v >= 0.0) {
                return Err(Error::InvalidGrid(format!("invalid lambda {v}")));
            }
        }
    }
    for w in lambdas.windows(2) {
        if w[0].partial_cmp(&w[1]) != Some(Ordering::Less) {
            return Err(Error::InvalidGrid(format!(
                "grid must be strictly increasing ({} then {})",
                w[0], w[1]
            )));
        }
    }
    Ok(())
}

/// A fitted coefficient vector. `rank_deficient` is set when the system
/// matrix was singular and the minimum-norm solution was returned instead,
/// or, at `λ = ∞`, when `Ĝ` is rank deficient.
#[derive(Debug, Clone, PartialEq)]
pub struct Fit {
    pub beta: DVector<f64>,
    pub rank_deficient: bool,
}

/// Moments prepared once for repeated fits along a path.
#[derive(Debug, Clone)]
pub struct CausalRegularizer {
    g_diff: SymMatrix,
    g_plus: SymMatrix,
    z_plus: DVector<f64>,
    projected_z: DVector<f64>,
    dantzig: DVector<f64>,
    g_diff_full_rank: bool,
    clipped: usize,
    rank_tol: f64,
}

impl CausalRegularizer {
    pub fn new(m: &MomentSummary) -> Result<Self> {
        let p = m.p();
        let rank_tol = default_rank_tol(p);
        let g = clip_psd(&m.g_diff, f64::INFINITY)?;
        let gp = clip_psd(&m.g_plus, f64::INFINITY)?;
        let projector = range_projector(&g.spectrum, rank_tol);
        let pinv = pinv_from_spectrum(&g.spectrum, rank_tol);
        Ok(Self {
            projected_z: projector.matrix() * &m.z_diff,
            dantzig: pinv.matrix() * &m.z_diff,
            g_diff_full_rank: rank_of_spectrum(&g.spectrum, rank_tol) == p,
            clipped: g.clipped + gp.clipped,
            g_diff: g.matrix,
            g_plus: gp.matrix,
            z_plus: m.z_plus.clone(),
            rank_tol,
        })
    }

    /// Number of negative eigenvalues of `Ĝ` and `Ĝ⁺` zeroed by clipping.
    pub fn clipped_eigenvalues(&self) -> usize {
        self.clipped
    }

    pub fn fit(&self, lambda: Lambda) -> Result<Fit> {
        match lambda {
            Lambda::Infinity => Ok(Fit { beta: self.dantzig.clone(), rank_deficient: !self.g_diff_full_rank }),
            Lambda::Finite(l) => {
                if !(l.is_finite() && l >= 0.0) {
                    return Err(Error::InvalidGrid(format!("invalid lambda {l}")));
                }
                let system = self.g_plus.add(&self.g_diff.scale(l));
                let rhs = &self.z_plus + &self.projected_z * l;
                let spectrum = sym_eigen(&system)?;
                match solve_with_spectrum(&spectrum, &rhs, self.rank_tol) {
                    Ok(beta) => Ok(Fit { beta, rank_deficient: false }),
                    Err(Error::SingularSystem) => {
                        let pinv = pinv_from_spectrum(&spectrum, self.rank_tol);
                        Ok(Fit { beta: pinv.matrix() * rhs, rank_deficient: true })
                    }
                    Err(e) => Err(e),
                }
            }
        }
    }
}

pub fn fit(m: &MomentSummary, lambda: Lambda) -> Result<Fit> {
    CausalRegularizer::new(m)?.fit(lambda)
}

pub fn fit_on_datasets(pair: &EnvPair, lambda: Lambda) -> Result<Fit> {
    fit(&compute_moments(pair)?, lambda)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegularizationPath {
    pub lambdas: Vec<Lambda>,
    pub coefs: Vec<DVector<f64>>,
    pub rank_deficient: Vec<bool>,
}

pub fn fit_path(m: &MomentSummary, lambdas: &[Lambda]) -> Result<RegularizationPath> {
    validate_grid(lambdas)?;
    let reg = CausalRegularizer::new(m)?;
    let fits: Vec<Fit> = lambdas.par_iter().map(|&l| reg.fit(l)).collect::<Result<_>>()?;
    if fits.iter().any(|f| f.beta.iter().any(|v| !v.is_finite())) {
        return Err(Error::SingularSystem);
    }
    let rank_deficient = fits.iter().map(|f| f.rank_deficient).collect();
    Ok(RegularizationPath {
        lambdas: lambdas.to_vec(),
        coefs: fits.into_iter().map(|f| f.beta).collect(),
        rank_deficient,
    })
}
