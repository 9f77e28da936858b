//! Percentile bootstrap interval for the normalized worst risk of a model
//! selected on a training split.
//!
//! λ̂* is chosen once on the training part. Each replicate resamples the test
//! part of both environments with replacement, refits `β̂λ̂*` on the resample and
//! records `|R̂ₑᵇ − R̂ₒᵇ|` on that same resample.

use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::estimator::{fit_on_datasets, Lambda};
use crate::moments::empirical_risk;
use crate::rng::{derive_seed, stream_rng};
use crate::selection::{sample_selector, ResamplingPlan};
use crate::sem::{Dataset, EnvPair};

/// How λ̂* is obtained from the training part.
#[derive(Debug, Clone)]
pub enum ModelChoice {
    Fixed(Lambda),
    /// Run the sample selector over `grid`; `plan` must be sized to the
    /// training part of the split.
    Select { grid: Vec<Lambda>, plan: ResamplingPlan },
}

#[derive(Debug, Clone, PartialEq)]
pub struct BootstrapResult {
    pub level: f64,
    pub lower: f64,
    pub upper: f64,
    pub draws: Vec<f64>,
    pub chosen_lambda: Lambda,
}

impl BootstrapResult {
    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }

    pub fn covers(&self, value: f64) -> bool {
        self.lower <= value && value <= self.upper
    }
}

/// Type-1 empirical quantile: the order statistic at 1-based index `⌈q·B⌉`,
/// clamped to `[1, B]`.
pub fn empirical_quantile(sorted: &[f64], q: f64) -> f64 {
    let b = sorted.len();
    // Guard against q·B landing a rounding error above an integer.
    let k = (q * b as f64 - 1e-9).ceil().clamp(1.0, b as f64) as usize;
    sorted[k - 1]
}

fn resample(d: &Dataset, seed: u64) -> Result<Dataset> {
    let n = d.n();
    if n < 2 {
        return Err(Error::DegenerateResample);
    }
    let mut rng = stream_rng(seed, 0);
    let idx: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
    d.select_rows(&idx)
}

pub fn bootstrap_worst_risk_ci(
    pair: &EnvPair,
    split: &ResamplingPlan,
    choice: &ModelChoice,
    b: usize,
    alpha: f64,
    seed: u64,
) -> Result<BootstrapResult> {
    if b == 0 {
        return Err(Error::InvalidInput("need at least one bootstrap replicate".into()));
    }
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::InvalidInput(format!("alpha must lie in (0, 1], got {alpha}")));
    }
    if split.len() != 1 {
        return Err(Error::InvalidInput("bootstrap needs a single train/test split".into()));
    }
    let (train, test) = split.assignments[0].split(pair)?;
    let chosen_lambda = match choice {
        ModelChoice::Fixed(l) => *l,
        ModelChoice::Select { grid, plan } => sample_selector(&train, grid, plan)?.chosen_lambda,
    };

    let mut draws: Vec<f64> = (0..b)
        .into_par_iter()
        .map(|rep| {
            let rep = rep as u64;
            let shifted = resample(&test.shifted, derive_seed(seed, &[rep, 0]))?;
            let obs = resample(&test.obs, derive_seed(seed, &[rep, 1]))?;
            let boot = EnvPair::new(obs, shifted)?;
            let beta = fit_on_datasets(&boot, chosen_lambda)?.beta;
            Ok((empirical_risk(&boot.shifted, &beta) - empirical_risk(&boot.obs, &beta)).abs())
        })
        .collect::<Result<_>>()?;

    let mut sorted = draws.clone();
    sorted.sort_by(f64::total_cmp);
    let lower = empirical_quantile(&sorted, alpha / 2.0);
    let upper = empirical_quantile(&sorted, 1.0 - alpha / 2.0);
    draws.shrink_to_fit();
    Ok(BootstrapResult { level: 1.0 - alpha, lower, upper, draws, chosen_lambda })
}
