//! Resampling plans and λ selectors.
//!
//! A plan is a uniform distribution over pairs of train/test indicator
//! strings `S = (Sₑ, Sₒ)`, one per environment; `S_i = 1` marks a test
//! observation. A point mass is sample splitting and `V` strings whose test
//! sets partition the indices give V-fold cross-validation.
//!
//! Every selector fits `β̂λ` on the training parts and then scores it:
//!
//! * sample: `E_S |R̂ₑ(test) − R̂ₒ(test)|`
//! * population: `E_S Rdiff(β̂λ)` with the true risk difference
//! * S-optimal: the population score minimized separately per realization

use std::cmp::Ordering;

use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::estimator::{validate_grid, CausalRegularizer, Lambda};
use crate::moments::{compute_moments, empirical_risk};
use crate::population::{population_rdiff, PopulationQuantities};
use crate::rng::{derive_seed, stream_rng};
use crate::sem::{Dataset, EnvPair};
use nalgebra::DVector;

/// One realization of `S`: test-membership masks for both environments.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Assignment {
    pub s_e: Vec<bool>,
    pub s_o: Vec<bool>,
}

fn indices(mask: &[bool], test: bool) -> Vec<usize> {
    mask.iter().enumerate().filter(|(_, &s)| s == test).map(|(i, _)| i).collect()
}

impl Assignment {
    pub fn test_e(&self) -> Vec<usize> {
        indices(&self.s_e, true)
    }

    pub fn test_o(&self) -> Vec<usize> {
        indices(&self.s_o, true)
    }

    pub fn train_e(&self) -> Vec<usize> {
        indices(&self.s_e, false)
    }

    pub fn train_o(&self) -> Vec<usize> {
        indices(&self.s_o, false)
    }

    /// Training pair and test pair.
    pub fn split(&self, pair: &EnvPair) -> Result<(EnvPair, EnvPair)> {
        if self.s_e.len() != pair.shifted.n() || self.s_o.len() != pair.obs.n() {
            return Err(Error::InvalidInput("assignment does not match the dataset sizes".into()));
        }
        let train = EnvPair::new(pair.obs.select_rows(&self.train_o())?, pair.shifted.select_rows(&self.train_e())?)?;
        let test = EnvPair::new(pair.obs.select_rows(&self.test_o())?, pair.shifted.select_rows(&self.test_e())?)?;
        Ok((train, test))
    }
}

/// Uniform distribution over `assignments`.
#[derive(Debug, Clone, PartialEq)]
pub struct ResamplingPlan {
    pub assignments: Vec<Assignment>,
}

impl ResamplingPlan {
    pub fn new(assignments: Vec<Assignment>) -> Result<Self> {
        if assignments.is_empty() {
            return Err(Error::InvalidInput("resampling plan is empty".into()));
        }
        let (n_e, n_o) = (assignments[0].s_e.len(), assignments[0].s_o.len());
        for a in &assignments {
            if a.s_e.len() != n_e || a.s_o.len() != n_o {
                return Err(Error::InvalidInput("assignments have inconsistent lengths".into()));
            }
            let test_e = a.s_e.iter().filter(|&&s| s).count();
            let test_o = a.s_o.iter().filter(|&&s| s).count();
            if test_e == 0 || test_o == 0 || test_e == n_e || test_o == n_o {
                return Err(Error::InvalidInput("every assignment needs nonempty train and test sets".into()));
            }
        }
        Ok(Self { assignments })
    }

    pub fn len(&self) -> usize {
        self.assignments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assignments.is_empty()
    }

    pub fn weights(&self) -> Vec<f64> {
        vec![1.0 / self.len() as f64; self.len()]
    }

    pub fn sizes(&self) -> (usize, usize) {
        (self.assignments[0].s_e.len(), self.assignments[0].s_o.len())
    }
}

fn permutation(n: usize, seed: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut stream_rng(seed, 0));
    idx
}

fn split_mask(n: usize, test_fraction: f64, seed: u64) -> Result<Vec<bool>> {
    let n_test = (test_fraction * n as f64).ceil() as usize;
    if n_test < 2 || n - n_test.min(n) < 2 {
        return Err(Error::TooFewObservations(format!(
            "split of {n} observations at fraction {test_fraction} leaves {n_test} test and {} train",
            n.saturating_sub(n_test)
        )));
    }
    let mut mask = vec![false; n];
    for &i in &permutation(n, seed)[..n_test] {
        mask[i] = true;
    }
    Ok(mask)
}

/// Single train/test split with `⌈fraction · n⌉` test observations per
/// environment, drawn without replacement.
pub fn make_split(n_e: usize, n_o: usize, test_fraction: f64, seed: u64) -> Result<ResamplingPlan> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::InvalidInput(format!("test fraction must lie in (0, 1), got {test_fraction}")));
    }
    let s_e = split_mask(n_e, test_fraction, derive_seed(seed, &[0]))?;
    let s_o = split_mask(n_o, test_fraction, derive_seed(seed, &[1]))?;
    ResamplingPlan::new(vec![Assignment { s_e, s_o }])
}

/// Fold label of each index. The first `n mod V` folds get one extra index.
fn fold_labels(n: usize, v: usize, seed: u64) -> Vec<usize> {
    let perm = permutation(n, seed);
    let (base, extra) = (n / v, n % v);
    let mut labels = vec![0; n];
    let mut pos = 0;
    for fold in 0..v {
        let size = base + usize::from(fold < extra);
        for &i in &perm[pos..pos + size] {
            labels[i] = fold;
        }
        pos += size;
    }
    labels
}

/// V-fold cross-validation, folds drawn independently per environment.
pub fn make_vfold(n_e: usize, n_o: usize, v: usize, seed: u64) -> Result<ResamplingPlan> {
    if v < 2 {
        return Err(Error::InvalidInput(format!("need at least 2 folds, got {v}")));
    }
    let n_min = n_e.min(n_o);
    if v > n_min {
        return Err(Error::TooManyFolds { folds: v, n: n_min });
    }
    let le = fold_labels(n_e, v, derive_seed(seed, &[0]));
    let lo = fold_labels(n_o, v, derive_seed(seed, &[1]));
    let assignments = (0..v)
        .map(|fold| Assignment {
            s_e: le.iter().map(|&l| l == fold).collect(),
            s_o: lo.iter().map(|&l| l == fold).collect(),
        })
        .collect();
    ResamplingPlan::new(assignments)
}

/// `β̂λ` fitted on the training part of every realization, plus the test
/// data needed to score it.
#[derive(Debug, Clone)]
pub struct FoldFits {
    pub grid: Vec<Lambda>,
    /// `coefs[fold][k]` is the fit at `grid[k]`.
    pub coefs: Vec<Vec<DVector<f64>>>,
    pub rank_deficient: Vec<Vec<bool>>,
    tests: Vec<(Dataset, Dataset)>,
}

impl FoldFits {
    pub fn fit(pair: &EnvPair, grid: &[Lambda], plan: &ResamplingPlan) -> Result<Self> {
        validate_grid(grid)?;
        let per_fold: Vec<(Vec<DVector<f64>>, Vec<bool>, (Dataset, Dataset))> = plan
            .assignments
            .par_iter()
            .map(|a| {
                let (train, test) = a.split(pair)?;
                let reg = CausalRegularizer::new(&compute_moments(&train)?)?;
                let fits = grid.iter().map(|&l| reg.fit(l)).collect::<Result<Vec<_>>>()?;
                let flags = fits.iter().map(|f| f.rank_deficient).collect();
                Ok((fits.into_iter().map(|f| f.beta).collect(), flags, (test.shifted, test.obs)))
            })
            .collect::<Result<_>>()?;
        let mut coefs = Vec::with_capacity(per_fold.len());
        let mut rank_deficient = Vec::with_capacity(per_fold.len());
        let mut tests = Vec::with_capacity(per_fold.len());
        for (c, r, t) in per_fold {
            coefs.push(c);
            rank_deficient.push(r);
            tests.push(t);
        }
        Ok(Self { grid: grid.to_vec(), coefs, rank_deficient, tests })
    }

    pub fn folds(&self) -> usize {
        self.coefs.len()
    }

    /// `|R̂ₑ(test) − R̂ₒ(test)|` per fold and λ.
    pub fn sample_losses(&self) -> Vec<Vec<f64>> {
        self.coefs
            .iter()
            .zip(&self.tests)
            .map(|(fold, (te, to))| {
                fold.iter().map(|b| (empirical_risk(te, b) - empirical_risk(to, b)).abs()).collect()
            })
            .collect()
    }

    /// Population `Rdiff(β̂λ)` per fold and λ.
    pub fn population_losses(&self, pq: &PopulationQuantities) -> Vec<Vec<f64>> {
        self.coefs.iter().map(|fold| fold.iter().map(|b| population_rdiff(pq, b)).collect()).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectorResult {
    pub chosen_lambda: Lambda,
    pub chosen_index: usize,
    /// Selector criterion per grid point, averaged over the plan.
    pub loss_curve: Vec<f64>,
    /// `per_fold_losses[fold][k]`.
    pub per_fold_losses: Vec<Vec<f64>>,
    /// Grid index minimizing each fold's own curve.
    pub fold_choices: Vec<usize>,
}

/// Index of the smallest value; ties go to the largest index (largest λ).
pub fn argmin_prefer_last(values: &[f64]) -> usize {
    let mut best = 0;
    for (k, v) in values.iter().enumerate().skip(1) {
        if v.partial_cmp(&values[best]) != Some(Ordering::Greater) {
            best = k;
        }
    }
    best
}

fn summarize(grid: &[Lambda], per_fold: Vec<Vec<f64>>) -> SelectorResult {
    let folds = per_fold.len() as f64;
    let loss_curve: Vec<f64> =
        (0..grid.len()).map(|k| per_fold.iter().map(|f| f[k]).sum::<f64>() / folds).collect();
    let chosen_index = argmin_prefer_last(&loss_curve);
    let fold_choices = per_fold.iter().map(|f| argmin_prefer_last(f)).collect();
    SelectorResult { chosen_lambda: grid[chosen_index], chosen_index, loss_curve, per_fold_losses: per_fold, fold_choices }
}

pub fn sample_selector_from_fits(fits: &FoldFits) -> SelectorResult {
    summarize(&fits.grid, fits.sample_losses())
}

pub fn population_selector_from_fits(fits: &FoldFits, pq: &PopulationQuantities) -> SelectorResult {
    summarize(&fits.grid, fits.population_losses(pq))
}

pub fn sample_selector(pair: &EnvPair, grid: &[Lambda], plan: &ResamplingPlan) -> Result<SelectorResult> {
    Ok(sample_selector_from_fits(&FoldFits::fit(pair, grid, plan)?))
}

pub fn population_selector(
    pq: &PopulationQuantities,
    pair: &EnvPair,
    grid: &[Lambda],
    plan: &ResamplingPlan,
) -> Result<SelectorResult> {
    Ok(population_selector_from_fits(&FoldFits::fit(pair, grid, plan)?, pq))
}

/// Per-realization oracle choices are in `fold_choices`; `chosen_lambda`
/// minimizes the averaged curve, so a single-fold plan coincides with the
/// population selector.
pub fn s_optimal_selector(
    pq: &PopulationQuantities,
    pair: &EnvPair,
    grid: &[Lambda],
    plan: &ResamplingPlan,
) -> Result<SelectorResult> {
    population_selector(pq, pair, grid, plan)
}

/// Population criterion `θ(λ) = E_S Rdiff(β̂λ)` evaluated at a grid index.
pub fn theta(population: &SelectorResult, index: usize) -> f64 {
    population.loss_curve[index]
}

/// `E_S[θ_S(λ̂) − θ_S(λ_S)]`: average excess of a fixed choice over each
/// fold's own oracle choice, under the population losses.
pub fn s_optimal_gap(population: &SelectorResult, index: usize) -> f64 {
    let folds = population.per_fold_losses.len() as f64;
    population
        .per_fold_losses
        .iter()
        .zip(&population.fold_choices)
        .map(|(f, &best)| f[index] - f[best])
        .sum::<f64>()
        / folds
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimator::default_grid;
    use crate::moments::tests::random_pair;
    use crate::population::compute_population;
    use crate::sem::{benchmark_structure, NoiseSpec, SemStructure, ShiftSpec};
    use nalgebra::DMatrix;

    #[test]
    fn split_counts() {
        let plan = make_split(10, 10, 0.3, 1).unwrap();
        assert_eq!(plan.len(), 1);
        let a = &plan.assignments[0];
        assert_eq!((a.test_e().len(), a.test_o().len()), (3, 3));
        assert_eq!((a.train_e().len(), a.train_o().len()), (7, 7));
    }

    #[test]
    fn split_needs_two_train_observations() {
        assert!(matches!(make_split(10, 10, 0.9, 1), Err(Error::TooFewObservations(_))));
        assert!(matches!(make_split(10, 10, 0.05, 1), Err(Error::TooFewObservations(_))));
        assert!(make_split(10, 10, 1.0, 1).is_err());
    }

    #[test]
    fn split_is_deterministic() {
        assert_eq!(make_split(50, 40, 0.5, 9).unwrap(), make_split(50, 40, 0.5, 9).unwrap());
        assert_ne!(make_split(50, 40, 0.5, 9).unwrap(), make_split(50, 40, 0.5, 10).unwrap());
    }

    #[test]
    fn vfold_partitions() {
        let plan = make_vfold(6, 7, 3, 4).unwrap();
        assert_eq!(plan.len(), 3);
        let sizes_e: Vec<usize> = plan.assignments.iter().map(|a| a.test_e().len()).collect();
        let sizes_o: Vec<usize> = plan.assignments.iter().map(|a| a.test_o().len()).collect();
        assert_eq!(sizes_e, vec![2, 2, 2]);
        assert_eq!(sizes_o, vec![3, 2, 2]);
        for n_and_mask in [(6usize, true), (7, false)] {
            let mut seen = vec![0; n_and_mask.0];
            for a in &plan.assignments {
                let t = if n_and_mask.1 { a.test_e() } else { a.test_o() };
                for i in t {
                    seen[i] += 1;
                }
            }
            assert!(seen.iter().all(|&c| c == 1));
        }
        assert_eq!(plan.weights(), vec![1.0 / 3.0; 3]);
    }

    #[test]
    fn vfold_errors() {
        assert!(matches!(make_vfold(5, 10, 6, 0), Err(Error::TooManyFolds { folds: 6, n: 5 })));
        assert!(make_vfold(5, 5, 1, 0).is_err());
    }

    #[test]
    fn tie_rule_prefers_largest() {
        assert_eq!(argmin_prefer_last(&[1.0, 0.5, 0.5, 2.0]), 2);
        assert_eq!(argmin_prefer_last(&[0.0, 0.0, 0.0]), 2);
        assert_eq!(argmin_prefer_last(&[3.0]), 0);
    }

    #[test]
    fn identical_test_sets_give_zero_loss() {
        let base = random_pair(2, 40, 3);
        let pair = EnvPair::new(base.obs.clone(), base.obs.clone()).unwrap();
        let n = pair.obs.n();
        // Same test indices in both environments, so both test sets are identical.
        let mask: Vec<bool> = (0..n).map(|i| i % 4 == 0).collect();
        let plan = ResamplingPlan::new(vec![Assignment { s_e: mask.clone(), s_o: mask }]).unwrap();
        let grid = default_grid();
        let r = sample_selector(&pair, &grid, &plan).unwrap();
        assert!(r.loss_curve.iter().all(|&v| v == 0.0));
        assert_eq!(r.chosen_lambda, Lambda::Infinity);
    }

    #[test]
    fn loss_curve_matches_recomputation() {
        let pair = random_pair(5, 60, 3);
        let grid = default_grid();
        let plan = make_vfold(pair.shifted.n(), pair.obs.n(), 4, 3).unwrap();
        let r = sample_selector(&pair, &grid, &plan).unwrap();
        for (f, a) in plan.assignments.iter().enumerate() {
            let obs_train: Vec<usize> = a.train_o();
            let sh_train: Vec<usize> = a.train_e();
            let train = EnvPair::new(pair.obs.select_rows(&obs_train).unwrap(), pair.shifted.select_rows(&sh_train).unwrap()).unwrap();
            let te = pair.shifted.select_rows(&a.test_e()).unwrap();
            let to = pair.obs.select_rows(&a.test_o()).unwrap();
            for (k, &l) in grid.iter().enumerate() {
                let b = crate::estimator::fit_on_datasets(&train, l).unwrap().beta;
                let resid_e = te.y() - te.x() * &b;
                let resid_o = to.y() - to.x() * &b;
                let want = (resid_e.norm_squared() / te.n() as f64 - resid_o.norm_squared() / to.n() as f64).abs();
                assert!((r.per_fold_losses[f][k] - want).abs() <= 1e-9 * want.max(1.0));
            }
        }
        for k in 0..grid.len() {
            let mean = r.per_fold_losses.iter().map(|f| f[k]).sum::<f64>() / 4.0;
            assert!((r.loss_curve[k] - mean).abs() < 1e-12);
        }
    }

    #[test]
    fn fold_order_does_not_matter() {
        let pair = random_pair(8, 50, 2);
        let grid = default_grid();
        let plan = make_vfold(pair.shifted.n(), pair.obs.n(), 5, 1).unwrap();
        let mut rev = plan.clone();
        rev.assignments.reverse();
        let a = sample_selector(&pair, &grid, &plan).unwrap();
        let b = sample_selector(&pair, &grid, &rev).unwrap();
        assert_eq!(a.chosen_lambda, b.chosen_lambda);
        for k in 0..grid.len() {
            assert!((a.loss_curve[k] - b.loss_curve[k]).abs() < 1e-12);
        }
    }

    #[test]
    fn population_loss_vanishes_at_causal_fit() {
        // Scalar model with no edges: βpa = 0, and training data whose cross
        // moments vanish make every fit exactly zero.
        let s = SemStructure::new(DVector::zeros(1), DVector::zeros(1), DMatrix::zeros(1, 1)).unwrap();
        let pq = compute_population(&s, &NoiseSpec::identity(1), &ShiftSpec::identity(1)).unwrap();
        let x = DMatrix::from_row_slice(4, 1, &[1.0, -1.0, 2.0, 3.0]);
        let y = DVector::from_vec(vec![0.0, 0.0, 1.0, 1.0]);
        let obs = Dataset::new(x.clone(), y.clone(), "obs").unwrap();
        let shifted = Dataset::new(x * 2.0, y, "shift").unwrap();
        let pair = EnvPair::new(obs, shifted).unwrap();
        let mask = vec![false, false, true, true];
        let plan = ResamplingPlan::new(vec![Assignment { s_e: mask.clone(), s_o: mask }]).unwrap();
        let grid = [Lambda::Finite(0.0), Lambda::Finite(1.0), Lambda::Infinity];
        let r = population_selector(&pq, &pair, &grid, &plan).unwrap();
        assert!(r.loss_curve.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn population_losses_are_nonnegative_and_s_optimal_consistent() {
        let s = benchmark_structure();
        let noise = NoiseSpec::identity(6);
        let shift = ShiftSpec::identity(6);
        let pq = compute_population(&s, &noise, &shift).unwrap();
        let obs = crate::sem::sample_sem(&s, &noise, &ShiftSpec::zero(6), 300, 1).unwrap();
        let sh = crate::sem::sample_sem(&s, &noise, &shift, 300, 2).unwrap();
        let pair = EnvPair::new(obs, sh).unwrap();
        let grid = default_grid();
        let plan = make_vfold(300, 300, 5, 7).unwrap();
        let pop = population_selector(&pq, &pair, &grid, &plan).unwrap();
        assert!(pop.loss_curve.iter().all(|&v| v >= 0.0));
        let sopt = s_optimal_selector(&pq, &pair, &grid, &plan).unwrap();
        for (f, &k) in sopt.fold_choices.iter().enumerate() {
            let fold = &sopt.per_fold_losses[f];
            assert!(fold.iter().all(|&v| v >= fold[k]));
        }
        assert!(s_optimal_gap(&sopt, sopt.chosen_index) >= 0.0);

        let single = make_split(300, 300, 0.3, 2).unwrap();
        let a = population_selector(&pq, &pair, &grid, &single).unwrap();
        let b = s_optimal_selector(&pq, &pair, &grid, &single).unwrap();
        assert_eq!(a, b);
        assert_eq!(b.fold_choices, vec![b.chosen_index]);
    }
}
