//! Exact population quantities of a simulated model.
//!
//! For each environment the joint covariance of `(Y, X)` is
//! `(I−B)⁻¹ (Σ + diag(0, C_A)) (I−B)⁻ᵀ`, from which every risk follows as a
//! quadratic form. Under identity noise and shift covariances the worst risk
//! also has a closed-form route through the total-effect matrix
//! `M = ((I − Bx) − βch βpaᵀ)⁻¹`, see [`worst_risk_closed_form`].

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::estimator::Lambda;
use crate::linalg::{default_rank_tol, pinv_psd, solve_spd, SymMatrix};
use crate::moments::empirical_risk;
use crate::rng::derive_seed;
use crate::sem::{sample_sem, validate_structure, NoiseSpec, SemStructure, ShiftSpec};

#[derive(Debug, Clone)]
pub struct PopulationQuantities {
    /// Total-effect matrix `M`.
    pub m: DMatrix<f64>,
    /// `M C_A Mᵀ`.
    pub g_diff: SymMatrix,
    /// `E[XₑXₑᵀ] + E[XₒXₒᵀ]`.
    pub g_sum: SymMatrix,
    pub z_diff: DVector<f64>,
    pub z_plus: DVector<f64>,
    pub beta_ols: DVector<f64>,
    pub beta_pa: DVector<f64>,
    pub beta_ch: DVector<f64>,
    /// Joint covariance of `(Y, X)` in the shifted environment, `Y` first.
    pub joint_shifted: SymMatrix,
    /// Joint covariance of `(Y, X)` in the observational environment.
    pub joint_obs: SymMatrix,
    /// Noise and shift covariances are both identity matrices.
    pub identity_design: bool,
}

fn joint_covariance(reduced: &DMatrix<f64>, noise: &SymMatrix, shift: &SymMatrix) -> SymMatrix {
    let p = shift.dim();
    let mut inner = noise.matrix().clone();
    let mut block = inner.view_mut((1, 1), (p, p));
    block += shift.matrix();
    SymMatrix::from_nearly_symmetric(reduced * inner * reduced.transpose())
}

pub fn compute_population(
    structure: &SemStructure,
    noise: &NoiseSpec,
    shift: &ShiftSpec,
) -> Result<PopulationQuantities> {
    let s = validate_structure(structure)?;
    let p = s.p();
    if noise.cov.dim() != p + 1 || shift.cov.dim() != p {
        return Err(Error::InvalidInput("covariance dimensions do not match the structure".into()));
    }
    let reduced = s.reduced_form()?;
    let m = reduced.view((1, 1), (p, p)).into_owned();

    let joint_shifted = joint_covariance(&reduced, &noise.cov, &shift.cov);
    let joint_obs = joint_covariance(&reduced, &noise.cov, &SymMatrix::zeros(p));
    let xx = |j: &SymMatrix| j.matrix().view((1, 1), (p, p)).into_owned();
    let xy = |j: &SymMatrix| j.matrix().view((1, 0), (p, 1)).column(0).into_owned();

    let g_diff = SymMatrix::from_nearly_symmetric(&m * shift.cov.matrix() * m.transpose());
    let g_sum = SymMatrix::from_nearly_symmetric(xx(&joint_shifted) + xx(&joint_obs));
    let z_diff = xy(&joint_shifted) - xy(&joint_obs);
    let z_plus = xy(&joint_shifted) + xy(&joint_obs);
    let beta_ols = solve_spd(&g_sum, &z_plus)?;

    Ok(PopulationQuantities {
        m,
        g_diff,
        g_sum,
        z_diff,
        z_plus,
        beta_ols,
        beta_pa: s.beta_pa().clone(),
        beta_ch: s.beta_ch().clone(),
        joint_shifted,
        joint_obs,
        identity_design: noise.is_identity() && shift.is_identity(),
    })
}

impl PopulationQuantities {
    pub fn p(&self) -> usize {
        self.beta_pa.len()
    }

    fn risk(joint: &SymMatrix, beta: &DVector<f64>) -> f64 {
        let mut w = DVector::zeros(beta.len() + 1);
        w[0] = 1.0;
        w.rows_mut(1, beta.len()).copy_from(&(-beta));
        joint.quad_form(&w)
    }

    /// `Rₑ(β) = E[(Yₑ − βᵀXₑ)²]`.
    pub fn risk_shifted(&self, beta: &DVector<f64>) -> f64 {
        Self::risk(&self.joint_shifted, beta)
    }

    /// `Rₒ(β) = E[(Yₒ − βᵀXₒ)²]`.
    pub fn risk_obs(&self, beta: &DVector<f64>) -> f64 {
        Self::risk(&self.joint_obs, beta)
    }

    /// Pooled risk `Rₑ + Rₒ`.
    pub fn risk_sum(&self, beta: &DVector<f64>) -> f64 {
        self.risk_shifted(beta) + self.risk_obs(beta)
    }

    /// `E[XXᵀ]` of the shifted environment.
    pub fn second_moment_shifted(&self) -> DMatrix<f64> {
        let p = self.p();
        self.joint_shifted.matrix().view((1, 1), (p, p)).into_owned()
    }

    /// `E[XXᵀ]` of the observational environment.
    pub fn second_moment_obs(&self) -> DMatrix<f64> {
        let p = self.p();
        self.joint_obs.matrix().view((1, 1), (p, p)).into_owned()
    }

    /// `½ Rsum(β) + ((1 + 2τ)/2) Rdiff(β)` from the joint covariances.
    pub fn worst_risk_decomposition(&self, beta: &DVector<f64>, tau: f64) -> f64 {
        0.5 * self.risk_sum(beta) + 0.5 * (1.0 + 2.0 * tau) * population_rdiff(self, beta)
    }
}

/// `(β − βpa)ᵀ Gdiff (β − βpa)`.
pub fn population_rdiff(pq: &PopulationQuantities, beta: &DVector<f64>) -> f64 {
    let d = beta - &pq.beta_pa;
    pq.g_diff.quad_form(&d).max(0.0)
}

/// Components of the closed-form worst-risk computation.
#[derive(Debug, Clone, PartialEq)]
pub struct WorstRiskTerms {
    pub risk_sum: f64,
    pub risk_diff: f64,
    pub worst_risk: f64,
}

/// Worst risk over shifts dominated by `(1+τ) E[AAᵀ]` when `C[ε] = I` and
/// `C[A] = I`:
///
/// 1. `h = Mᵀβpa`
/// 2. `c = (βch βchᵀ + 3/2 I)⁻¹ βch`, `m = Mᵀβols = h + c`
/// 3. `b = Mᵀβ`, `δ = b − m`
/// 4. `Rsum = 2(βchᵀδ)² + 3‖δ‖² + 2 − 2βchᵀc`
/// 5. `Rdiff = ‖b − h‖²`
/// 6. `½Rsum + ((1+2τ)/2) Rdiff`
///
/// The constant `2 − 2βchᵀc` in step 4 is `Rsum(βols)`, the pooled risk floor.
pub fn worst_risk_closed_form(pq: &PopulationQuantities, beta: &DVector<f64>, tau: f64) -> Result<WorstRiskTerms> {
    if !pq.identity_design {
        return Err(Error::Precondition(
            "closed-form worst risk requires identity noise and shift covariances".into(),
        ));
    }
    let p = pq.p();
    let bch = &pq.beta_ch;
    let h = pq.m.tr_mul(&pq.beta_pa);
    let inner = SymMatrix::from_nearly_symmetric(bch * bch.transpose() + DMatrix::identity(p, p) * 1.5);
    let c = solve_spd(&inner, bch)?;
    let m = &h + &c;
    let b = pq.m.tr_mul(beta);
    let delta = &b - &m;
    let floor = 2.0 - 2.0 * bch.dot(&c);
    let risk_sum = 2.0 * bch.dot(&delta).powi(2) + 3.0 * delta.norm_squared() + floor;
    let risk_diff = (&b - &h).norm_squared();
    Ok(WorstRiskTerms { risk_sum, risk_diff, worst_risk: 0.5 * risk_sum + 0.5 * (1.0 + 2.0 * tau) * risk_diff })
}

/// Worst-case risk of `beta` over the shift class of strength `1 + τ`. Uses the
/// closed form under identity covariances and the joint-covariance expansion
/// otherwise.
pub fn population_worst_risk(pq: &PopulationQuantities, beta: &DVector<f64>, tau: f64) -> f64 {
    match worst_risk_closed_form(pq, beta, tau) {
        Ok(t) => t.worst_risk,
        Err(_) => pq.worst_risk_decomposition(beta, tau),
    }
}

/// Population point of the regularization path,
/// `(Gsum + λGdiff)⁻¹ (Z⁺ + λZdiff)`, or `Gdiff^g Zdiff` at `λ = ∞`.
pub fn population_beta_lambda(pq: &PopulationQuantities, lambda: Lambda) -> Result<DVector<f64>> {
    match lambda {
        Lambda::Infinity => {
            let g = pinv_psd(&pq.g_diff, default_rank_tol(pq.p()))?;
            Ok(g.matrix() * &pq.z_diff)
        }
        Lambda::Finite(l) => {
            let system = pq.g_sum.add(&pq.g_diff.scale(l));
            solve_spd(&system, &(&pq.z_plus + &pq.z_diff * l))
        }
    }
}

const MC_CHUNK: usize = 1 << 16;

/// Brute-force worst risk: the empirical risk of `beta` on `n_mc` draws from
/// the shifted environment with shift covariance scaled by `1 + τ`.
pub fn monte_carlo_worst_risk(
    structure: &SemStructure,
    noise: &NoiseSpec,
    shift: &ShiftSpec,
    beta: &DVector<f64>,
    tau: f64,
    n_mc: usize,
    seed: u64,
) -> Result<f64> {
    if n_mc == 0 {
        return Err(Error::InvalidInput("n_mc must be positive".into()));
    }
    if !(tau >= 0.0) {
        return Err(Error::InvalidInput("tau must be nonnegative".into()));
    }
    let worst = shift.scaled(1.0 + tau)?;
    let chunks = n_mc.div_ceil(MC_CHUNK);
    let sums: Vec<f64> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let rows = MC_CHUNK.min(n_mc - c * MC_CHUNK);
            let d = sample_sem(structure, noise, &worst, rows, derive_seed(seed, &[c as u64]))?;
            Ok(empirical_risk(&d, beta) * rows as f64)
        })
        .collect::<Result<_>>()?;
    Ok(sums.iter().sum::<f64>() / n_mc as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::numerical_rank;
    use crate::linalg::test_support::max_abs_diff;
    use crate::sem::benchmark_structure;
    use approx::assert_abs_diff_eq;

    fn scalar_empty() -> SemStructure {
        SemStructure::new(DVector::zeros(1), DVector::zeros(1), DMatrix::zeros(1, 1)).unwrap()
    }

    fn benchmark_pq() -> PopulationQuantities {
        compute_population(&benchmark_structure(), &NoiseSpec::identity(6), &ShiftSpec::identity(6)).unwrap()
    }

    /// Total effect of X_from on X_to, summing products of edge weights over
    /// all directed paths of the benchmark DAG (nodes 0 = Y, 1..=6 = X).
    fn path_effect(from: usize, to: usize) -> f64 {
        let s = benchmark_structure();
        let b = s.assembled();
        fn walk(b: &DMatrix<f64>, node: usize, to: usize) -> f64 {
            if node == to {
                return 1.0;
            }
            // b[(child, parent)] is the weight of parent → child.
            (0..b.nrows()).filter(|&c| b[(c, node)] != 0.0).map(|c| b[(c, node)] * walk(b, c, to)).sum()
        }
        walk(&b, from, to)
    }

    #[test]
    fn scalar_empty_graph() {
        let pq = compute_population(&scalar_empty(), &NoiseSpec::identity(1), &ShiftSpec::identity(1)).unwrap();
        assert_eq!(pq.m[(0, 0)], 1.0);
        assert_eq!(pq.g_diff.matrix()[(0, 0)], 1.0);
        assert_eq!(pq.g_sum.matrix()[(0, 0)], 3.0);
        assert_eq!(pq.beta_ols[0], 0.0);
        assert_eq!(pq.beta_pa[0], 0.0);
    }

    #[test]
    fn m_inverts_reduced_system() {
        let pq = benchmark_pq();
        let s = benchmark_structure();
        let sys = DMatrix::identity(6, 6) - s.b_x() - s.beta_ch() * s.beta_pa().transpose();
        assert!(max_abs_diff(&(&pq.m * sys), &DMatrix::identity(6, 6)) < 1e-10);
    }

    #[test]
    fn m_column_matches_path_enumeration() {
        let pq = benchmark_pq();
        let oracle: Vec<f64> = (1..=6).map(|to| path_effect(1, to)).collect();
        assert_eq!(oracle, vec![1.0, 1.0, 2.0, 3.0, 3.0, 3.0]);
        for (k, want) in oracle.iter().enumerate() {
            assert_abs_diff_eq!(pq.m[(k, 0)], want, epsilon = 1e-12);
        }
        assert_abs_diff_eq!(pq.m.column(0).norm_squared(), 33.0, epsilon = 1e-10);
    }

    #[test]
    fn rdiff_along_first_axis() {
        // Rdiff(βpa + e₁) = e₁ᵀ M Mᵀ e₁ = ‖row 1 of M‖². Row 1 holds the total
        // effects on X1, which has no parents: (1, 0, 0, 0, 0, 0).
        let pq = benchmark_pq();
        let oracle: f64 = (1..=6).map(|from| path_effect(from, 1).powi(2)).sum();
        let mut beta = pq.beta_pa.clone();
        beta[0] += 1.0;
        assert_abs_diff_eq!(population_rdiff(&pq, &beta), oracle, epsilon = 1e-12);
        assert_abs_diff_eq!(oracle, 1.0, epsilon = 0.0);
        assert_abs_diff_eq!(pq.risk_shifted(&beta) - pq.risk_obs(&beta), oracle, epsilon = 1e-12);
    }

    #[test]
    fn rdiff_basic_properties() {
        let pq = benchmark_pq();
        assert_eq!(population_rdiff(&pq, &pq.beta_pa), 0.0);
        for k in 0..20 {
            let beta = DVector::from_fn(6, |i, _| ((i * 7 + k * 3) % 5) as f64 - 2.0);
            assert!(population_rdiff(&pq, &beta) >= 0.0);
            let direct = pq.risk_shifted(&beta) - pq.risk_obs(&beta);
            assert_abs_diff_eq!(population_rdiff(&pq, &beta), direct, epsilon = 1e-9 * direct.abs().max(1.0));
        }
    }

    #[test]
    fn gdiff_is_m_mt_on_benchmark() {
        let pq = benchmark_pq();
        assert!(max_abs_diff(pq.g_diff.matrix(), &(&pq.m * pq.m.transpose())) < 1e-12);
        let s = benchmark_structure();
        let expect = &pq.m * (s.beta_ch() * s.beta_ch().transpose() * 2.0 + DMatrix::identity(6, 6) * 3.0) * pq.m.transpose();
        assert!(max_abs_diff(pq.g_sum.matrix(), &expect) < 1e-10);
    }

    #[test]
    fn closed_form_at_causal_parameter() {
        let pq = benchmark_pq();
        for tau in [0.0, 1.0, 50.0] {
            let t = worst_risk_closed_form(&pq, &pq.beta_pa, tau).unwrap();
            assert_abs_diff_eq!(t.risk_diff, 0.0, epsilon = 1e-24);
            assert_abs_diff_eq!(t.worst_risk, 0.5 * t.risk_sum, epsilon = 1e-12);
            assert_abs_diff_eq!(t.risk_sum, 2.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn closed_form_matches_decomposition() {
        let pq = benchmark_pq();
        for k in 0..10 {
            let beta = DVector::from_fn(6, |i, _| (((i + 1) * (k + 2)) % 7) as f64 / 3.0 - 1.0);
            for tau in [0.0, 10.0, 100.0] {
                let a = worst_risk_closed_form(&pq, &beta, tau).unwrap().worst_risk;
                let b = pq.worst_risk_decomposition(&beta, tau);
                assert_abs_diff_eq!(a, b, epsilon = 1e-9 * b.max(1.0));
            }
        }
    }

    #[test]
    fn closed_form_requires_identity_design() {
        let noise = NoiseSpec::scaled_identity(6, 2.0).unwrap();
        let pq = compute_population(&benchmark_structure(), &noise, &ShiftSpec::identity(6)).unwrap();
        assert!(worst_risk_closed_form(&pq, &pq.beta_pa, 1.0).is_err());
        let beta = DVector::from_element(6, 0.3);
        assert_eq!(population_worst_risk(&pq, &beta, 1.0), pq.worst_risk_decomposition(&beta, 1.0));
    }

    #[test]
    fn beta_lambda_endpoints() {
        let pq = benchmark_pq();
        let inf = population_beta_lambda(&pq, Lambda::Infinity).unwrap();
        assert!((&inf - &pq.beta_pa).amax() < 1e-10);
        let zero = population_beta_lambda(&pq, Lambda::Finite(0.0)).unwrap();
        assert!((&zero - &pq.beta_ols).amax() < 1e-12);
        let pq1 = compute_population(&scalar_empty(), &NoiseSpec::identity(1), &ShiftSpec::identity(1)).unwrap();
        assert_eq!(population_beta_lambda(&pq1, Lambda::Finite(1.0)).unwrap()[0], 0.0);
    }

    #[test]
    fn beta_lambda_is_continuous_on_default_grid() {
        let pq = benchmark_pq();
        let grid = crate::estimator::default_grid();
        let gap = (&pq.beta_ols - &pq.beta_pa).norm();
        let finite: Vec<f64> = grid.iter().filter(|l| !l.is_infinite()).map(|l| l.value()).collect();
        for w in finite.windows(2) {
            let a = population_beta_lambda(&pq, Lambda::Finite(w[0])).unwrap();
            let b = population_beta_lambda(&pq, Lambda::Finite(w[1])).unwrap();
            assert!((a - b).norm() < 10.0 * (w[1] - w[0]) * gap);
        }
    }

    #[test]
    fn gdiff_rank_tracks_shift_rank() {
        let s = benchmark_structure();
        for rank in 0..=6 {
            let diag: Vec<f64> = (0..6).map(|k| if k < rank { 1.0 + k as f64 } else { 0.0 }).collect();
            let shift = ShiftSpec::new(SymMatrix::from_diagonal(&diag)).unwrap();
            let pq = compute_population(&s, &NoiseSpec::identity(6), &shift).unwrap();
            assert_eq!(numerical_rank(&pq.g_diff, 1e-9).unwrap(), rank);
        }
    }

    #[test]
    fn monte_carlo_causal_parameter_concentrates() {
        let s = benchmark_structure();
        let n = 200_000;
        let r = monte_carlo_worst_risk(&s, &NoiseSpec::identity(6), &ShiftSpec::identity(6), s.beta_pa(), 5.0, n, 1)
            .unwrap();
        assert!((r - 1.0).abs() < 4.0 * (2.0 / n as f64).sqrt(), "risk {r}");
    }

    #[test]
    fn monte_carlo_without_shift_is_observational_risk() {
        let s = benchmark_structure();
        let pq = compute_population(&s, &NoiseSpec::identity(6), &ShiftSpec::zero(6)).unwrap();
        let beta = DVector::from_element(6, 0.2);
        let r = monte_carlo_worst_risk(&s, &NoiseSpec::identity(6), &ShiftSpec::zero(6), &beta, 0.0, 200_000, 2)
            .unwrap();
        let want = pq.risk_obs(&beta);
        assert!((r - want).abs() < 0.02 * want, "{r} vs {want}");
    }
}
