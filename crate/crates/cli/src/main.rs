use std::path::PathBuf;
use std::process::ExitCode;

use causreg_cli::{run, CliError, CliResult, Command, ExperimentConfig};
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "causreg", version, about = "Causal regularization for two-environment linear models")]
struct Cli {
    /// TOML config; flags override its keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Extra overrides, `section.key=value`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Args, Default)]
struct DataArgs {
    /// Two-environment CSV (x1..xp, y, env); simulate when absent.
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    center: bool,
    /// Rows per environment when simulating.
    #[arg(long)]
    n: Option<usize>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Sample a pair of environments to CSV.
    Simulate {
        #[arg(long)]
        n: Option<usize>,
    },
    /// Fit at one λ.
    Fit {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        lambda: Option<String>,
    },
    /// Fit along the λ grid.
    Path {
        #[command(flatten)]
        data: DataArgs,
        /// Comma-separated λ values, `inf` allowed.
        #[arg(long)]
        grid: Option<String>,
    },
    /// Choose λ by resampling.
    Select {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        grid: Option<String>,
        #[arg(long)]
        folds: Option<usize>,
    },
    /// Bootstrap interval for the risk difference.
    Bootstrap {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        b: Option<usize>,
        #[arg(long)]
        alpha: Option<f64>,
        /// Fixed λ instead of selecting on the training part.
        #[arg(long)]
        lambda: Option<String>,
    },
    /// Finite-sample worst-risk bound components.
    Bound {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        lambda: Option<String>,
        #[arg(long)]
        q: Option<f64>,
        #[arg(long)]
        tau: Option<f64>,
    },
    /// Simulation studies.
    Experiment {
        #[arg(value_enum)]
        kind: ExperimentKind,
        /// Comma-separated per-environment sample sizes.
        #[arg(long)]
        sizes: Option<String>,
        #[arg(long)]
        replications: Option<usize>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ExperimentKind {
    Convergence,
    Coverage,
    Compare,
}

fn quote(s: &str) -> String {
    format!("\"{}\"", s.replace('\\', "\\\\").replace('"', "\\\""))
}

/// `"0,1,inf"` → `[0, 1, "inf"]`.
fn toml_list(csv: &str, numeric_only: bool) -> String {
    let items: Vec<String> = csv
        .split(',')
        .map(str::trim)
        .map(|v| if numeric_only || v.parse::<f64>().is_ok() { v.to_string() } else { quote(v) })
        .collect();
    format!("[{}]", items.join(", "))
}

fn lambda_value(s: &str) -> String {
    if s.trim().parse::<f64>().is_ok() {
        s.trim().to_string()
    } else {
        quote(s.trim())
    }
}

fn overrides(cli: &Cli) -> CliResult<(Command, Vec<(String, String)>)> {
    let mut ov: Vec<(String, String)> = Vec::new();
    let mut push = |k: &str, v: String| ov.push((k.to_string(), v));
    if let Some(s) = cli.seed {
        push("seed", s.to_string());
    }
    if let Some(o) = &cli.out {
        push("out", quote(&o.to_string_lossy()));
    }
    if let Some(t) = cli.threads {
        push("threads", t.to_string());
    }
    let data = |d: &DataArgs, push: &mut dyn FnMut(&str, String)| {
        if let Some(p) = &d.input {
            push("data.input", quote(&p.to_string_lossy()));
        }
        if d.center {
            push("data.center", "true".into());
        }
        if let Some(n) = d.n {
            push("simulate.n", n.to_string());
        }
    };
    let command = match &cli.command {
        Cmd::Simulate { n } => {
            if let Some(n) = n {
                push("simulate.n", n.to_string());
            }
            Command::Simulate
        }
        Cmd::Fit { data: d, lambda } => {
            data(d, &mut push);
            if let Some(l) = lambda {
                push("estimator.lambda", lambda_value(l));
            }
            Command::Fit
        }
        Cmd::Path { data: d, grid } => {
            data(d, &mut push);
            if let Some(g) = grid {
                push("estimator.grid", toml_list(g, false));
            }
            Command::Path
        }
        Cmd::Select { data: d, grid, folds } => {
            data(d, &mut push);
            if let Some(g) = grid {
                push("estimator.grid", toml_list(g, false));
            }
            if let Some(f) = folds {
                push("selection.folds", f.to_string());
            }
            Command::Select
        }
        Cmd::Bootstrap { data: d, b, alpha, lambda } => {
            data(d, &mut push);
            if let Some(b) = b {
                push("bootstrap.b", b.to_string());
            }
            if let Some(a) = alpha {
                push("bootstrap.alpha", a.to_string());
            }
            if let Some(l) = lambda {
                push("bootstrap.lambda", lambda_value(l));
            }
            Command::Bootstrap
        }
        Cmd::Bound { data: d, lambda, q, tau } => {
            data(d, &mut push);
            if let Some(l) = lambda {
                push("estimator.lambda", lambda_value(l));
            }
            if let Some(q) = q {
                push("bound.q", q.to_string());
            }
            if let Some(t) = tau {
                push("bound.tau", t.to_string());
            }
            Command::Bound
        }
        Cmd::Experiment { kind, sizes, replications } => {
            if let Some(s) = sizes {
                push("experiment.sizes", toml_list(s, true));
            }
            if let Some(r) = replications {
                push("replications", r.to_string());
            }
            match kind {
                ExperimentKind::Convergence => Command::Convergence,
                ExperimentKind::Coverage => Command::Coverage,
                ExperimentKind::Compare => Command::Compare,
            }
        }
    };
    for kv in &cli.set {
        let (k, v) = kv.split_once('=').ok_or_else(|| CliError::Config(format!("--set expects KEY=VALUE, got {kv:?}")))?;
        ov.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok((command, ov))
}

fn execute(cli: &Cli) -> CliResult<Vec<PathBuf>> {
    let (command, ov) = overrides(cli)?;
    let cfg = ExperimentConfig::load(cli.config.as_deref(), &ov)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads.unwrap_or(0))
        .build()
        .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    let files = pool.install(|| run(command, &cfg))?;
    std::fs::create_dir_all(&cfg.out).map_err(|source| CliError::Io { path: cfg.out.clone(), source })?;
    let mut written = Vec::new();
    for f in files {
        let path = cfg.out.join(&f.name);
        std::fs::write(&path, &f.contents).map_err(|source| CliError::Io { path: path.clone(), source })?;
        written.push(path);
    }
    Ok(written)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(paths) => {
            for p in paths {
                println!("{}", p.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", e.record());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
