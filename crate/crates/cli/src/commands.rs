//! Subcommands as pure functions from a config to named output files.

use causreg_core::bootstrap::{bootstrap_worst_risk_ci, ModelChoice};
use causreg_core::bounds::{sample_risk_bound, worst_risk_bound, BoundInputs};
use causreg_core::rng::derive_seed;
use causreg_core::{
    compute_moments, fit_on_datasets, fit_path, make_split, make_vfold, population_beta_lambda, population_rdiff,
    population_worst_risk, risk_diff_hat, risk_sum_hat, sample_selector, DVector, EnvPair, Lambda,
    PopulationQuantities, ResamplingPlan,
};

use crate::config::ExperimentConfig;
use crate::data::{ingest_csv, write_pair_csv};
use crate::error::CliResult;
use crate::experiments::{exp_compare, exp_convergence, exp_coverage, ExperimentOutput, Model};
use crate::svg::{emit_svg, PlotSpec, XAxis};
use crate::table::{Replication, ResultTable, Row};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Simulate,
    Fit,
    Path,
    Select,
    Bootstrap,
    Bound,
    Convergence,
    Coverage,
    Compare,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Fit => "fit",
            Command::Path => "path",
            Command::Select => "select",
            Command::Bootstrap => "bootstrap",
            Command::Bound => "bound",
            Command::Convergence => "convergence",
            Command::Coverage => "coverage",
            Command::Compare => "compare",
        }
    }
}

/// A file to be written under the output directory.
#[derive(Debug, Clone, PartialEq)]
pub struct Artifact {
    pub name: String,
    pub contents: Vec<u8>,
}

fn table_artifact(name: String, table: &ResultTable) -> CliResult<Artifact> {
    let mut contents = Vec::new();
    table.write_csv(&mut contents)?;
    Ok(Artifact { name, contents })
}

/// The working pair: the configured CSV if any, otherwise a simulated pair
/// with `simulate.n` rows per environment. The population is returned for
/// simulated data only.
pub struct Input {
    pub pair: EnvPair,
    pub population: Option<PopulationQuantities>,
}

pub fn load_input(cfg: &ExperimentConfig) -> CliResult<Input> {
    match &cfg.data.input {
        Some(path) => {
            let labels = (cfg.data.labels[0].as_str(), cfg.data.labels[1].as_str());
            Ok(Input { pair: ingest_csv(path, &cfg.data.env_column, labels, cfg.data.center)?, population: None })
        }
        None => {
            let model = Model::from_config(cfg)?;
            Ok(Input { pair: model.simulate(cfg.simulate.n, cfg.seed)?, population: Some(model.population()?) })
        }
    }
}

fn plan(cfg: &ExperimentConfig, n_e: usize, n_o: usize, seed: u64) -> CliResult<ResamplingPlan> {
    Ok(match cfg.selection.split_fraction {
        Some(f) => make_split(n_e, n_o, f, seed)?,
        None => make_vfold(n_e, n_o, cfg.selection.folds, seed)?,
    })
}

fn total_n(pair: &EnvPair) -> usize {
    pair.obs.n() + pair.shifted.n()
}

fn coef_rows(rep: Replication, n: usize, lambda: Lambda, beta: &DVector<f64>) -> Vec<Row> {
    beta.iter().enumerate().map(|(k, &b)| Row::new(rep, n, Some(lambda), format!("beta_{}", k + 1), b)).collect()
}

pub fn cmd_simulate(cfg: &ExperimentConfig) -> CliResult<Vec<u8>> {
    let pair = Model::from_config(cfg)?.simulate(cfg.simulate.n, cfg.seed)?;
    let mut out = Vec::new();
    write_pair_csv(&mut out, &pair, (&cfg.data.labels[0], &cfg.data.labels[1]))?;
    Ok(out)
}

pub fn cmd_fit(cfg: &ExperimentConfig, input: &Input, run_id: &str) -> CliResult<ResultTable> {
    let lambda = cfg.estimator.lambda.to_lambda()?;
    let fit = fit_on_datasets(&input.pair, lambda)?;
    let n = total_n(&input.pair);
    let rep = Replication::Index(0);
    let mut t = ResultTable::new(run_id, "fit");
    t.extend(coef_rows(rep, n, lambda, &fit.beta))?;
    t.push(Row::new(rep, n, Some(lambda), "rank_deficient", f64::from(u8::from(fit.rank_deficient))))?;
    Ok(t)
}

pub fn cmd_path(cfg: &ExperimentConfig, input: &Input, run_id: &str) -> CliResult<ResultTable> {
    let path = fit_path(&compute_moments(&input.pair)?, &cfg.grid()?)?;
    let n = total_n(&input.pair);
    let rep = Replication::Index(0);
    let mut t = ResultTable::new(run_id, "path");
    for ((&l, beta), &rd) in path.lambdas.iter().zip(&path.coefs).zip(&path.rank_deficient) {
        t.extend(coef_rows(rep, n, l, beta))?;
        t.push(Row::new(rep, n, Some(l), "rank_deficient", f64::from(u8::from(rd))))?;
    }
    Ok(t)
}

/// Sample-selector loss curve (replication `all`), per-fold losses
/// (replication = fold), and the refit at the chosen λ.
pub fn cmd_select(cfg: &ExperimentConfig, input: &Input, run_id: &str) -> CliResult<ResultTable> {
    let pair = &input.pair;
    let grid = cfg.grid()?;
    let plan = plan(cfg, pair.shifted.n(), pair.obs.n(), derive_seed(cfg.seed, &[2]))?;
    let sel = sample_selector(pair, &grid, &plan)?;
    let n = total_n(pair);
    let mut t = ResultTable::new(run_id, "select");
    for (k, &l) in grid.iter().enumerate() {
        t.push(Row::new(Replication::Aggregate, n, Some(l), "loss", sel.loss_curve[k]))?;
        for (fold, losses) in sel.per_fold_losses.iter().enumerate() {
            t.push(Row::new(Replication::Index(fold), n, Some(l), "fold_loss", losses[k]))?;
        }
    }
    let chosen = sel.chosen_lambda;
    t.push(Row::new(Replication::Aggregate, n, Some(chosen), "chosen_lambda", chosen.value()))?;
    t.extend(coef_rows(Replication::Aggregate, n, chosen, &fit_on_datasets(pair, chosen)?.beta))?;
    Ok(t)
}

/// Interval summary (replication `all`) and the draws (replication =
/// bootstrap index). Simulated input adds the population target.
pub fn cmd_bootstrap(cfg: &ExperimentConfig, input: &Input, run_id: &str) -> CliResult<ResultTable> {
    let pair = &input.pair;
    let b = &cfg.bootstrap;
    let split = make_split(pair.shifted.n(), pair.obs.n(), b.test_fraction, derive_seed(cfg.seed, &[2]))?;
    let choice = match &b.lambda {
        Some(l) => ModelChoice::Fixed(l.to_lambda()?),
        None => {
            let a = &split.assignments[0];
            let p = plan(cfg, a.train_e().len(), a.train_o().len(), derive_seed(cfg.seed, &[3]))?;
            ModelChoice::Select { grid: cfg.grid()?, plan: p }
        }
    };
    let ci = bootstrap_worst_risk_ci(pair, &split, &choice, b.b, b.alpha, derive_seed(cfg.seed, &[4]))?;
    let (n, l, all) = (total_n(pair), Some(ci.chosen_lambda), Replication::Aggregate);
    let mut t = ResultTable::new(run_id, "bootstrap");
    t.push(Row::new(all, n, l, "level", ci.level))?;
    t.push(Row::new(all, n, l, "lower", ci.lower))?;
    t.push(Row::new(all, n, l, "upper", ci.upper))?;
    if let Some(pq) = &input.population {
        let target = population_rdiff(pq, &population_beta_lambda(pq, ci.chosen_lambda)?);
        t.push(Row::new(all, n, l, "target", target))?;
        t.push(Row::new(all, n, l, "covered", f64::from(u8::from(ci.covers(target)))))?;
    }
    for (i, &d) in ci.draws.iter().enumerate() {
        t.push(Row::new(Replication::Index(i), n, l, "draw", d))?;
    }
    Ok(t)
}

/// Components of the worst-risk bounds for `β̂λ` at `estimator.lambda`, with
/// plug-in variances. Simulated input adds the exact worst population risk.
pub fn cmd_bound(cfg: &ExperimentConfig, input: &Input, run_id: &str) -> CliResult<ResultTable> {
    let pair = &input.pair;
    let lambda = cfg.estimator.lambda.to_lambda()?;
    let beta = fit_on_datasets(pair, lambda)?.beta;
    let (r_pred, r_diff) = (risk_sum_hat(pair, &beta), risk_diff_hat(pair, &beta));
    let tau = cfg.bound.tau;
    let inputs = BoundInputs::from_pair(pair, cfg.bound.q)?;
    let bound = worst_risk_bound(&inputs, &beta, r_pred, r_diff, tau);
    let l1 = beta.lp_norm(1).powi(2) + 1.0;
    let (n, l, all) = (total_n(pair), Some(lambda), Replication::Aggregate);
    let mut rows = vec![
        ("r_pred_hat", r_pred),
        ("r_diff_hat", r_diff),
        ("phi_shifted", inputs.phi_shifted()),
        ("phi_obs", inputs.phi_obs()),
        ("phi_plus", inputs.phi_plus()),
        ("eta", (1.0 + tau) * l1 * inputs.phi_plus()),
        ("worst_risk_bound", bound),
        ("sample_risk_bound", sample_risk_bound(&inputs, cfg.bound.n_new, &beta, r_pred, r_diff, tau)),
        ("variance_plug_in", 1.0),
    ];
    if let Some(pq) = &input.population {
        rows.push(("population_worst_risk", population_worst_risk(pq, &beta, tau)));
    }
    let mut t = ResultTable::new(run_id, "bound");
    for (metric, v) in rows {
        t.push(Row::new(all, n, l, metric, v))?;
    }
    Ok(t)
}

fn experiment_artifacts(run_id: &str, out: ExperimentOutput, plot: PlotSpec) -> CliResult<Vec<Artifact>> {
    let svg = emit_svg(&out.summary, &plot)?;
    Ok(vec![
        table_artifact(format!("{run_id}.csv"), &out.table)?,
        table_artifact(format!("{run_id}_summary.csv"), &out.summary)?,
        Artifact { name: format!("{run_id}.svg"), contents: svg.into_bytes() },
    ])
}

/// Runs `command` and returns the files it produces, including the resolved
/// config.
pub fn run(command: Command, cfg: &ExperimentConfig) -> CliResult<Vec<Artifact>> {
    let run_id = cfg.run_id(command.name());
    let mut files = vec![Artifact { name: format!("{run_id}.config.toml"), contents: cfg.to_toml().into_bytes() }];
    let single = |f: fn(&ExperimentConfig, &Input, &str) -> CliResult<ResultTable>| -> CliResult<Artifact> {
        let input = load_input(cfg)?;
        table_artifact(format!("{run_id}.csv"), &f(cfg, &input, &run_id)?)
    };
    match command {
        Command::Simulate => files.push(Artifact { name: format!("{run_id}.csv"), contents: cmd_simulate(cfg)? }),
        Command::Fit => files.push(single(cmd_fit)?),
        Command::Path => files.push(single(cmd_path)?),
        Command::Select => files.push(single(cmd_select)?),
        Command::Bootstrap => files.push(single(cmd_bootstrap)?),
        Command::Bound => files.push(single(cmd_bound)?),
        Command::Convergence => files.extend(experiment_artifacts(
            &run_id,
            exp_convergence(cfg, &run_id)?,
            PlotSpec {
                title: "Normalized excess risk".into(),
                metrics: vec!["mean_abs_normalized_excess_risk".into(), "mean_phi_plus".into()],
                x: XAxis::N,
                log_x: true,
                log_y: true,
            },
        )?),
        Command::Coverage => files.extend(experiment_artifacts(
            &run_id,
            exp_coverage(cfg, &run_id)?,
            PlotSpec {
                title: "Bootstrap interval width".into(),
                metrics: vec!["median_width".into()],
                x: XAxis::N,
                log_x: true,
                log_y: false,
            },
        )?),
        Command::Compare => files.extend(experiment_artifacts(
            &run_id,
            exp_compare(cfg, &run_id)?,
            PlotSpec { title: "Out-of-sample risk / shift".into(), metrics: vec![], x: XAxis::N, log_x: true, log_y: true },
        )?),
    }
    Ok(files)
}
