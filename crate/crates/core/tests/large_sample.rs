//! Large-sample agreement between the estimators and the population oracle on
//! the benchmark model.

use causreg_core::{
    benchmark_structure, compute_moments, compute_population, fit, population_beta_lambda, population_rdiff,
    risk_diff_hat, sample_sem, EnvPair, Lambda, NoiseSpec, PopulationQuantities, ShiftSpec,
};

const N: usize = 100_000;

fn setup(seed: u64) -> (EnvPair, PopulationQuantities) {
    let s = benchmark_structure();
    let p = s.p();
    let noise = NoiseSpec::identity(p);
    let obs = sample_sem(&s, &noise, &ShiftSpec::zero(p), N, seed).unwrap();
    let shifted = sample_sem(&s, &noise, &ShiftSpec::identity(p), N, seed + 1).unwrap();
    let pq = compute_population(&s, &noise, &ShiftSpec::identity(p)).unwrap();
    (EnvPair::new(obs, shifted).unwrap(), pq)
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1.0)
}

#[test]
fn sample_moments_approach_population() {
    let (pair, pq) = setup(11);
    let m = compute_moments(&pair).unwrap();
    let dg = (m.g_diff.matrix() - pq.g_diff.matrix()).amax() / pq.g_diff.max_abs();
    let dz = (&m.z_diff - &pq.z_diff).amax() / pq.z_diff.amax().max(1.0);
    let dplus = (&m.z_plus - &pq.z_plus).amax() / pq.z_plus.amax().max(1.0);
    assert!(dg < 0.05 && dz < 0.05 && dplus < 0.05, "{dg} {dz} {dplus}");
}

#[test]
fn estimates_approach_population_path() {
    let (pair, pq) = setup(21);
    let m = compute_moments(&pair).unwrap();
    for lambda in [Lambda::Finite(0.0), Lambda::Finite(1.0), Lambda::Finite(10.0), Lambda::Infinity] {
        let b = fit(&m, lambda).unwrap().beta;
        let target = population_beta_lambda(&pq, lambda).unwrap();
        let err = (&b - &target).amax();
        assert!(err < 0.05, "λ = {lambda:?}: {err}");
    }
    assert!((fit(&m, Lambda::Infinity).unwrap().beta - &pq.beta_pa).amax() < 0.05);
}

#[test]
fn empirical_risk_difference_matches_population() {
    let (pair, pq) = setup(31);
    for beta in [pq.beta_pa.clone(), pq.beta_ols.clone(), pq.beta_pa.map(|_| 0.0)] {
        let hat = risk_diff_hat(&pair, &beta);
        let pop = population_rdiff(&pq, &beta);
        assert!(rel(hat, pop) < 0.05, "{hat} vs {pop}");
    }
}
