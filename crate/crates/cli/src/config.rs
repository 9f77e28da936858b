//! Experiment configuration: one TOML file, with every command-line flag
//! mapped onto a dotted key that overrides it.

use std::path::{Path, PathBuf};

use causreg_core::{
    benchmark_structure, default_grid, DMatrix, DVector, Lambda, NoiseSpec, SemStructure, ShiftSpec,
};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

/// A λ as written in the config: a number or the string `"inf"`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LambdaValue {
    Number(f64),
    Text(String),
}

impl LambdaValue {
    pub fn to_lambda(&self) -> CliResult<Lambda> {
        let parsed = match self {
            LambdaValue::Number(v) => Lambda::finite(*v),
            LambdaValue::Text(s) => Lambda::parse(s),
        };
        parsed.map_err(|e| CliError::Config(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    /// Prefix of every output file; defaults to `<command>-<seed>`.
    pub run_id: Option<String>,
    pub seed: u64,
    // Where and how a run executes does not change its results, so neither
    // is archived with them.
    #[serde(skip_serializing)]
    pub out: PathBuf,
    #[serde(skip_serializing)]
    pub threads: Option<usize>,
    pub replications: usize,
    pub model: ModelConfig,
    pub data: DataConfig,
    pub simulate: SimulateConfig,
    pub estimator: EstimatorConfig,
    pub selection: SelectionConfig,
    pub bootstrap: BootstrapConfig,
    pub bound: BoundConfig,
    pub experiment: ExperimentSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// `"benchmark"` or the path of a TOML file with `beta_pa`, `beta_ch`
    /// and `b_x` (array of rows).
    pub structure: String,
    pub noise_scale: f64,
    pub shift_scale: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub input: Option<PathBuf>,
    pub env_column: String,
    /// Observational label first.
    pub labels: Vec<String>,
    pub center: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulateConfig {
    /// Rows per environment.
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EstimatorConfig {
    pub lambda: LambdaValue,
    /// Strictly increasing λ values; the default grid when absent.
    pub grid: Option<Vec<LambdaValue>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SelectionConfig {
    pub folds: usize,
    /// Use a single split with this test fraction instead of V-fold.
    pub split_fraction: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BootstrapConfig {
    pub b: usize,
    pub alpha: f64,
    pub test_fraction: f64,
    /// Fixed λ; when absent λ is selected on the training part.
    pub lambda: Option<LambdaValue>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BoundConfig {
    pub q: f64,
    pub tau: f64,
    pub n_new: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentSection {
    /// Per-environment sample sizes.
    pub sizes: Vec<usize>,
    pub lambda: LambdaValue,
    pub tau: f64,
    pub test_n: usize,
    pub test_shift_scales: Vec<f64>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            run_id: None,
            seed: 0,
            out: PathBuf::from("results"),
            threads: None,
            replications: 20,
            model: ModelConfig::default(),
            data: DataConfig::default(),
            simulate: SimulateConfig::default(),
            estimator: EstimatorConfig::default(),
            selection: SelectionConfig::default(),
            bootstrap: BootstrapConfig::default(),
            bound: BoundConfig::default(),
            experiment: ExperimentSection::default(),
        }
    }
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self { structure: "benchmark".into(), noise_scale: 1.0, shift_scale: 1.0 }
    }
}

impl Default for DataConfig {
    fn default() -> Self {
        Self { input: None, env_column: "env".into(), labels: vec!["obs".into(), "shift".into()], center: false }
    }
}

impl Default for SimulateConfig {
    fn default() -> Self {
        Self { n: 1000 }
    }
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self { lambda: LambdaValue::Number(0.2), grid: None }
    }
}

impl Default for SelectionConfig {
    fn default() -> Self {
        Self { folds: 5, split_fraction: None }
    }
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        Self { b: 100, alpha: 0.05, test_fraction: 0.5, lambda: None }
    }
}

impl Default for BoundConfig {
    fn default() -> Self {
        Self { q: 1.0, tau: 1.0, n_new: None }
    }
}

impl Default for ExperimentSection {
    fn default() -> Self {
        Self {
            sizes: vec![100, 1_000, 10_000, 100_000],
            lambda: LambdaValue::Number(0.2),
            tau: 1.0,
            test_n: 100_000,
            test_shift_scales: vec![100.0, 500.0, 1000.0],
        }
    }
}

/// Parse an override value as a TOML value, falling back to a bare string.
fn parse_value(raw: &str) -> toml::Value {
    match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").expect("key v present"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

fn set_dotted(table: &mut toml::Table, key: &str, value: toml::Value) -> CliResult<()> {
    let mut parts = key.split('.').peekable();
    let mut cur = table;
    while let Some(part) = parts.next() {
        if part.is_empty() {
            return Err(CliError::Config(format!("malformed key {key:?}")));
        }
        if parts.peek().is_none() {
            cur.insert(part.to_string(), value);
            return Ok(());
        }
        let entry = cur.entry(part.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| CliError::Config(format!("{part:?} in {key:?} is not a section")))?;
    }
    Ok(())
}

impl ExperimentConfig {
    /// Read `path` (if any), apply `overrides` as `(dotted.key, value)` pairs
    /// in order, and validate.
    pub fn load(path: Option<&Path>, overrides: &[(String, String)]) -> CliResult<Self> {
        let mut table = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::Config(format!("cannot read {}: {e}", p.display())))?;
                toml::from_str::<toml::Table>(&text)
                    .map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?
            }
            None => toml::Table::new(),
        };
        for (key, raw) in overrides {
            set_dotted(&mut table, key, parse_value(raw))?;
        }
        let cfg: ExperimentConfig =
            toml::Value::Table(table).try_into().map_err(|e: toml::de::Error| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> CliResult<()> {
        let fail = |msg: String| Err(CliError::Config(msg));
        if self.replications == 0 {
            return fail("replications must be at least 1".into());
        }
        if self.threads == Some(0) {
            return fail("threads must be at least 1".into());
        }
        if !(self.model.noise_scale > 0.0 && self.model.noise_scale.is_finite()) {
            return fail(format!("model.noise_scale must be positive, got {}", self.model.noise_scale));
        }
        if !(self.model.shift_scale >= 0.0 && self.model.shift_scale.is_finite()) {
            return fail(format!("model.shift_scale must be nonnegative, got {}", self.model.shift_scale));
        }
        if self.model.structure != "benchmark" && !Path::new(&self.model.structure).is_file() {
            return fail(format!("structure file {:?} does not exist", self.model.structure));
        }
        if let Some(p) = &self.data.input {
            if !p.is_file() {
                return fail(format!("data file {} does not exist", p.display()));
            }
        }
        if self.data.labels.len() != 2 || self.data.labels[0] == self.data.labels[1] {
            return fail("data.labels must hold two distinct labels, observational first".into());
        }
        if self.simulate.n < 2 {
            return fail("simulate.n must be at least 2".into());
        }
        self.estimator.lambda.to_lambda()?;
        self.grid()?;
        if self.selection.folds < 2 {
            return fail("selection.folds must be at least 2".into());
        }
        if let Some(f) = self.selection.split_fraction {
            if !(f > 0.0 && f < 1.0) {
                return fail(format!("selection.split_fraction must lie in (0, 1), got {f}"));
            }
        }
        let b = &self.bootstrap;
        if b.b == 0 {
            return fail("bootstrap.b must be at least 1".into());
        }
        if !(b.alpha > 0.0 && b.alpha <= 1.0) {
            return fail(format!("bootstrap.alpha must lie in (0, 1], got {}", b.alpha));
        }
        if !(b.test_fraction > 0.0 && b.test_fraction < 1.0) {
            return fail(format!("bootstrap.test_fraction must lie in (0, 1), got {}", b.test_fraction));
        }
        if let Some(l) = &b.lambda {
            l.to_lambda()?;
        }
        if !(self.bound.q > 0.0 && self.bound.q.is_finite()) {
            return fail(format!("bound.q must be positive, got {}", self.bound.q));
        }
        if !(self.bound.tau >= 0.0 && self.bound.tau.is_finite()) {
            return fail(format!("bound.tau must be nonnegative, got {}", self.bound.tau));
        }
        if self.bound.n_new == Some(0) {
            return fail("bound.n_new must be positive".into());
        }
        let e = &self.experiment;
        if e.sizes.is_empty() || e.sizes.iter().any(|&n| n < 10) {
            return fail("experiment.sizes must be nonempty with every size at least 10".into());
        }
        e.lambda.to_lambda()?;
        if !(e.tau >= 0.0 && e.tau.is_finite()) {
            return fail(format!("experiment.tau must be nonnegative, got {}", e.tau));
        }
        if e.test_n == 0 {
            return fail("experiment.test_n must be positive".into());
        }
        if e.test_shift_scales.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
            return fail("experiment.test_shift_scales must be positive".into());
        }
        Ok(())
    }

    pub fn run_id(&self, command: &str) -> String {
        self.run_id.clone().unwrap_or_else(|| format!("{command}-{}", self.seed))
    }

    pub fn grid(&self) -> CliResult<Vec<Lambda>> {
        let grid = match &self.estimator.grid {
            None => default_grid(),
            Some(values) => values.iter().map(LambdaValue::to_lambda).collect::<CliResult<_>>()?,
        };
        causreg_core::estimator::validate_grid(&grid).map_err(|e| CliError::Config(e.to_string()))?;
        Ok(grid)
    }

    pub fn structure(&self) -> CliResult<SemStructure> {
        if self.model.structure == "benchmark" {
            return Ok(benchmark_structure());
        }
        load_structure(Path::new(&self.model.structure))
    }

    pub fn noise(&self, p: usize) -> CliResult<NoiseSpec> {
        Ok(NoiseSpec::scaled_identity(p, self.model.noise_scale)?)
    }

    pub fn shift(&self, p: usize) -> CliResult<ShiftSpec> {
        Ok(ShiftSpec::scaled_identity(p, self.model.shift_scale)?)
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct StructureFile {
    beta_pa: Vec<f64>,
    beta_ch: Vec<f64>,
    b_x: Vec<Vec<f64>>,
}

pub fn load_structure(path: &Path) -> CliResult<SemStructure> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    let f: StructureFile = toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let p = f.beta_pa.len();
    if f.b_x.len() != p || f.b_x.iter().any(|r| r.len() != p) {
        return Err(CliError::Config(format!("b_x must be {p} x {p}")));
    }
    let b_x = DMatrix::from_fn(p, p, |i, j| f.b_x[i][j]);
    let s = SemStructure::new(DVector::from_vec(f.beta_pa), DVector::from_vec(f.beta_ch), b_x)
        .map_err(|e| CliError::Config(e.to_string()))?;
    // A singular I - B is a numerical failure, not a config one.
    Ok(causreg_core::validate_structure(&s)?)
}
