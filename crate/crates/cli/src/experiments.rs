//! Simulation studies: convergence of the normalized excess risk, bootstrap
//! coverage, and cross-validated regularization against the causal Dantzig.
//!
//! Every (n, replication) cell is simulated from its own derived seed and the
//! cells run in parallel; rows are emitted in (n, replication) order.

use causreg_core::bootstrap::{bootstrap_worst_risk_ci, ModelChoice};
use causreg_core::bounds::{bound_core, normalized_excess_risk, BoundInputs};
use causreg_core::rng::derive_seed;
use causreg_core::{
    compute_population, empirical_risk, fit_on_datasets, make_split, make_vfold, population_beta_lambda,
    population_rdiff, population_worst_risk, risk_diff_hat, risk_sum_hat, sample_sem, sample_selector, EnvPair,
    Lambda, PopulationQuantities, ResamplingPlan, ShiftSpec,
};
use rayon::prelude::*;

use crate::config::ExperimentConfig;
use crate::error::{CliError, CliResult};
use crate::table::{Replication, ResultTable, Row};

/// Structure, noise and in-sample shift resolved from a config.
#[derive(Debug, Clone)]
pub struct Model {
    pub structure: causreg_core::SemStructure,
    pub noise: causreg_core::NoiseSpec,
    pub shift: ShiftSpec,
}

impl Model {
    pub fn from_config(cfg: &ExperimentConfig) -> CliResult<Self> {
        let structure = cfg.structure()?;
        let p = structure.p();
        Ok(Self { noise: cfg.noise(p)?, shift: cfg.shift(p)?, structure })
    }

    pub fn p(&self) -> usize {
        self.structure.p()
    }

    /// `n` observational and `n` shifted rows.
    pub fn simulate(&self, n: usize, seed: u64) -> CliResult<EnvPair> {
        let p = self.p();
        let obs = sample_sem(&self.structure, &self.noise, &ShiftSpec::zero(p), n, derive_seed(seed, &[0]))?;
        let shifted = sample_sem(&self.structure, &self.noise, &self.shift, n, derive_seed(seed, &[1]))?;
        Ok(EnvPair::new(obs, shifted)?)
    }

    pub fn population(&self) -> CliResult<PopulationQuantities> {
        Ok(compute_population(&self.structure, &self.noise, &self.shift)?)
    }
}

/// Per-replication rows and the per-n aggregates derived from them.
#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub table: ResultTable,
    pub summary: ResultTable,
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let k = v.len();
    if k == 0 {
        return f64::NAN;
    }
    if k % 2 == 1 {
        v[k / 2]
    } else {
        0.5 * (v[k / 2 - 1] + v[k / 2])
    }
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Least-squares slope of `log10 y` on `log10 x`.
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let lx: Vec<f64> = xs.iter().map(|x| x.log10()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.log10()).collect();
    let (mx, my) = (mean(&lx), mean(&ly));
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}

/// Runs `cell(n, rep, seed)` for every size and replication in parallel and
/// collects the rows in (n, rep) order.
fn run_cells<F>(cfg: &ExperimentConfig, cell: F) -> CliResult<Vec<Row>>
where
    F: Fn(usize, usize, u64) -> CliResult<Vec<Row>> + Sync,
{
    let cells: Vec<(usize, usize)> =
        cfg.experiment.sizes.iter().flat_map(|&n| (0..cfg.replications).map(move |r| (n, r))).collect();
    let rows: Vec<Vec<Row>> = cells
        .par_iter()
        .map(|&(n, rep)| cell(n, rep, derive_seed(cfg.seed, &[n as u64, rep as u64])))
        .collect::<CliResult<_>>()?;
    Ok(rows.into_iter().flatten().collect())
}

fn row(rep: usize, n: usize, lambda: Option<Lambda>, metric: &str, value: f64) -> Row {
    Row::new(Replication::Index(rep), n, lambda, metric, value)
}

fn agg(n: usize, lambda: Option<Lambda>, metric: &str, value: f64) -> Row {
    Row::new(Replication::Aggregate, n, lambda, metric, value)
}

/// Normalized excess risk of `β̂λ` (λ from `experiment.lambda`, τ from
/// `experiment.tau`) against the exact worst population risk, and the plug-in
/// `φ₊` it is predicted to track. Needs at least 10 replications.
pub fn exp_convergence(cfg: &ExperimentConfig, run_id: &str) -> CliResult<ExperimentOutput> {
    if cfg.replications < 10 {
        return Err(CliError::Config(format!(
            "the convergence experiment needs at least 10 replications, got {}",
            cfg.replications
        )));
    }
    let model = Model::from_config(cfg)?;
    let pq = model.population()?;
    let lambda = cfg.experiment.lambda.to_lambda()?;
    let tau = cfg.experiment.tau;
    let rows = run_cells(cfg, |n, rep, seed| {
        let pair = model.simulate(n, seed)?;
        let beta = fit_on_datasets(&pair, lambda)?.beta;
        let core = bound_core(risk_sum_hat(&pair, &beta), risk_diff_hat(&pair, &beta), tau);
        let sup = population_worst_risk(&pq, &beta, tau);
        let phi_plus = BoundInputs::from_pair(&pair, cfg.bound.q)?.phi_plus();
        Ok(vec![
            row(rep, n, Some(lambda), "normalized_excess_risk", normalized_excess_risk(&beta, sup, core, tau)),
            row(rep, n, Some(lambda), "phi_plus", phi_plus),
        ])
    })?;
    let mut table = ResultTable::new(run_id, "convergence");
    table.extend(rows)?;

    let mut summary = ResultTable::new(run_id, "convergence");
    let mut means = Vec::new();
    for &n in &cfg.experiment.sizes {
        let abs: Vec<f64> = table.values("normalized_excess_risk", Some(n)).iter().map(|v| v.abs()).collect();
        means.push(mean(&abs));
        summary.push(agg(n, Some(lambda), "mean_abs_normalized_excess_risk", mean(&abs)))?;
        summary.push(agg(n, Some(lambda), "mean_phi_plus", mean(&table.values("phi_plus", Some(n)))))?;
    }
    if cfg.experiment.sizes.len() >= 2 {
        let xs: Vec<f64> = cfg.experiment.sizes.iter().map(|&n| n as f64).collect();
        // n = 0: fitted across all sizes.
        summary.push(agg(0, Some(lambda), "loglog_slope", loglog_slope(&xs, &means)))?;
    }
    Ok(ExperimentOutput { table, summary })
}

fn selection_plan(cfg: &ExperimentConfig, n_e: usize, n_o: usize, seed: u64) -> CliResult<ResamplingPlan> {
    Ok(match cfg.selection.split_fraction {
        Some(f) => make_split(n_e, n_o, f, seed)?,
        None => make_vfold(n_e, n_o, cfg.selection.folds, seed)?,
    })
}

/// Bootstrap interval for `|Rₑ − Rₒ|` on a split of each simulated pair,
/// checked against the population risk difference of the population
/// coefficient at the chosen λ.
pub fn exp_coverage(cfg: &ExperimentConfig, run_id: &str) -> CliResult<ExperimentOutput> {
    let model = Model::from_config(cfg)?;
    let pq = model.population()?;
    let grid = cfg.grid()?;
    let fixed = cfg.bootstrap.lambda.as_ref().map(|l| l.to_lambda()).transpose()?;
    let bcfg = &cfg.bootstrap;
    let rows = run_cells(cfg, |n, rep, seed| {
        let pair = model.simulate(n, seed)?;
        let split = make_split(n, n, bcfg.test_fraction, derive_seed(seed, &[2]))?;
        let choice = match fixed {
            Some(l) => ModelChoice::Fixed(l),
            None => {
                let a = &split.assignments[0];
                let plan = selection_plan(cfg, a.train_e().len(), a.train_o().len(), derive_seed(seed, &[3]))?;
                ModelChoice::Select { grid: grid.clone(), plan }
            }
        };
        let ci = bootstrap_worst_risk_ci(&pair, &split, &choice, bcfg.b, bcfg.alpha, derive_seed(seed, &[4]))?;
        let l = Some(ci.chosen_lambda);
        let target = population_rdiff(&pq, &population_beta_lambda(&pq, ci.chosen_lambda)?);
        Ok(vec![
            row(rep, n, l, "lower", ci.lower),
            row(rep, n, l, "upper", ci.upper),
            row(rep, n, l, "width", ci.width()),
            row(rep, n, l, "target", target),
            row(rep, n, l, "covered", f64::from(u8::from(ci.covers(target)))),
        ])
    })?;
    let mut table = ResultTable::new(run_id, "coverage");
    table.extend(rows)?;

    let mut summary = ResultTable::new(run_id, "coverage");
    for &n in &cfg.experiment.sizes {
        summary.push(agg(n, None, "coverage", mean(&table.values("covered", Some(n)))))?;
        summary.push(agg(n, None, "median_width", median(&table.values("width", Some(n)))))?;
    }
    Ok(ExperimentOutput { table, summary })
}

fn scale_tag(s: f64) -> String {
    format!("{s}")
}

/// Out-of-sample risk, divided by the test shift scale, of the
/// cross-validated estimator and of the causal Dantzig, on one shared test set
/// per scale.
pub fn exp_compare(cfg: &ExperimentConfig, run_id: &str) -> CliResult<ExperimentOutput> {
    let model = Model::from_config(cfg)?;
    let grid = cfg.grid()?;
    let p = model.p();
    let scales = &cfg.experiment.test_shift_scales;
    let rows = run_cells(cfg, |n, rep, seed| {
        let pair = model.simulate(n, seed)?;
        let plan = selection_plan(cfg, n, n, derive_seed(seed, &[2]))?;
        let chosen = sample_selector(&pair, &grid, &plan)?.chosen_lambda;
        let beta_cv = fit_on_datasets(&pair, chosen)?.beta;
        let beta_dz = fit_on_datasets(&pair, Lambda::Infinity)?.beta;
        let mut out = Vec::new();
        for (k, &s) in scales.iter().enumerate() {
            let shift = ShiftSpec::scaled_identity(p, s)?;
            let test = sample_sem(
                &model.structure,
                &model.noise,
                &shift,
                cfg.experiment.test_n,
                derive_seed(seed, &[3, k as u64]),
            )?;
            let tag = scale_tag(s);
            out.push(row(rep, n, Some(chosen), &format!("risk_cv@{tag}"), empirical_risk(&test, &beta_cv) / s));
            out.push(row(rep, n, Some(Lambda::Infinity), &format!("risk_dantzig@{tag}"), empirical_risk(&test, &beta_dz) / s));
        }
        Ok(out)
    })?;
    let mut table = ResultTable::new(run_id, "compare");
    table.extend(rows)?;

    let mut summary = ResultTable::new(run_id, "compare");
    for &n in &cfg.experiment.sizes {
        for &s in scales {
            let tag = scale_tag(s);
            let cv = table.values(&format!("risk_cv@{tag}"), Some(n));
            let dz = table.values(&format!("risk_dantzig@{tag}"), Some(n));
            let wins = cv.iter().zip(&dz).filter(|(c, d)| c <= d).count() as f64 / cv.len() as f64;
            summary.push(agg(n, None, &format!("median_risk_cv@{tag}"), median(&cv)))?;
            summary.push(agg(n, None, &format!("median_risk_dantzig@{tag}"), median(&dz)))?;
            summary.push(agg(n, None, &format!("frac_cv_le_dantzig@{tag}"), wins))?;
        }
    }
    Ok(ExperimentOutput { table, summary })
}
