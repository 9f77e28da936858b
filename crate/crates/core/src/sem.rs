//! Linear structural equation models with an additive covariate shift:
//!
//! ```text
//! (Y, X) = B (Y, X) + ε + (0, A),   B = [[0, βpaᵀ], [βch, Bx]]
//! ```
//!
//! The shift `A` enters the covariate equations only. The observational
//! environment is the instance with `A ≡ 0`.

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::{psd_sqrt, SymMatrix};
use crate::rng::stream_rng;

const MIN_ABS_DET: f64 = 1e-12;
const COVARIANCE_CLIP_TOL: f64 = 1e-10;
const SAMPLE_BLOCK: usize = 4096;

#[derive(Debug, Clone, PartialEq)]
pub struct SemStructure {
    beta_pa: DVector<f64>,
    beta_ch: DVector<f64>,
    b_x: DMatrix<f64>,
}

impl SemStructure {
    /// Checks dimensions only; see [`validate_structure`] for the
    /// nonsingularity requirement.
    pub fn new(beta_pa: DVector<f64>, beta_ch: DVector<f64>, b_x: DMatrix<f64>) -> Result<Self> {
        let p = beta_pa.len();
        if p == 0 {
            return Err(Error::InvalidInput("structure needs at least one covariate".into()));
        }
        if beta_ch.len() != p || b_x.nrows() != p || b_x.ncols() != p {
            return Err(Error::InvalidInput(format!(
                "inconsistent structure dimensions: beta_pa {}, beta_ch {}, b_x {}x{}",
                p,
                beta_ch.len(),
                b_x.nrows(),
                b_x.ncols()
            )));
        }
        let finite = beta_pa.iter().chain(beta_ch.iter()).chain(b_x.iter()).all(|v| v.is_finite());
        if !finite {
            return Err(Error::InvalidInput("structure has non-finite entries".into()));
        }
        Ok(Self { beta_pa, beta_ch, b_x })
    }

    pub fn p(&self) -> usize {
        self.beta_pa.len()
    }

    pub fn beta_pa(&self) -> &DVector<f64> {
        &self.beta_pa
    }

    pub fn beta_ch(&self) -> &DVector<f64> {
        &self.beta_ch
    }

    pub fn b_x(&self) -> &DMatrix<f64> {
        &self.b_x
    }

    /// The full `(p+1)×(p+1)` matrix `B`, with `Y` as coordinate 0.
    pub fn assembled(&self) -> DMatrix<f64> {
        let p = self.p();
        let mut b = DMatrix::zeros(p + 1, p + 1);
        for k in 0..p {
            b[(0, k + 1)] = self.beta_pa[k];
            b[(k + 1, 0)] = self.beta_ch[k];
        }
        b.view_mut((1, 1), (p, p)).copy_from(&self.b_x);
        b
    }

    /// `I − B`.
    pub fn system_matrix(&self) -> DMatrix<f64> {
        let p = self.p();
        DMatrix::identity(p + 1, p + 1) - self.assembled()
    }

    /// `(I − B)⁻¹`, mapping `ε + (0, A)` to `(Y, X)`.
    pub fn reduced_form(&self) -> Result<DMatrix<f64>> {
        let sys = self.system_matrix();
        let det = sys.determinant();
        if !(det.abs() > MIN_ABS_DET) {
            return Err(Error::SingularStructure { det });
        }
        sys.try_inverse().ok_or(Error::SingularStructure { det })
    }
}

pub fn validate_structure(s: &SemStructure) -> Result<SemStructure> {
    let det = s.system_matrix().determinant();
    if det.abs() > MIN_ABS_DET {
        Ok(s.clone())
    } else {
        Err(Error::SingularStructure { det })
    }
}

/// The seven-node benchmark DAG: `X1 → X2 → X3`, `X1 → X3`, `X2, X3 → Y`,
/// `Y → X4, X5` and `X5 → X6`.
pub fn benchmark_structure() -> SemStructure {
    let beta_pa = DVector::from_vec(vec![0.0, 1.0, 1.0, 0.0, 0.0, 0.0]);
    let beta_ch = DVector::from_vec(vec![0.0, 0.0, 0.0, 1.0, 1.0, 0.0]);
    let mut b_x = DMatrix::zeros(6, 6);
    b_x[(1, 0)] = 1.0;
    b_x[(2, 0)] = 1.0;
    b_x[(2, 1)] = 1.0;
    b_x[(5, 4)] = 1.0;
    SemStructure { beta_pa, beta_ch, b_x }
}

fn check_covariance(cov: &SymMatrix, what: &str) -> Result<()> {
    crate::linalg::clip_psd(cov, COVARIANCE_CLIP_TOL).map(|_| ()).map_err(|e| match e {
        Error::NotPositiveSemidefinite { .. } => {
            Error::InvalidInput(format!("{what} covariance is not positive semi-definite"))
        }
        other => other,
    })
}

/// Covariance of `ε = (ε_Y, ε_X)`, of dimension `p + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSpec {
    pub cov: SymMatrix,
}

impl NoiseSpec {
    pub fn new(cov: SymMatrix) -> Result<Self> {
        check_covariance(&cov, "noise")?;
        Ok(Self { cov })
    }

    /// `N(0, I)` noise for a model with `p` covariates.
    pub fn identity(p: usize) -> Self {
        Self { cov: SymMatrix::identity(p + 1) }
    }

    pub fn scaled_identity(p: usize, scale: f64) -> Result<Self> {
        Self::new(SymMatrix::identity(p + 1).scale(scale))
    }

    pub fn is_identity(&self) -> bool {
        self.cov.matrix() == &DMatrix::identity(self.cov.dim(), self.cov.dim())
    }
}

/// Covariance of the shift `A`, of dimension `p`. The zero matrix encodes the
/// observational environment.
#[derive(Debug, Clone, PartialEq)]
pub struct ShiftSpec {
    pub cov: SymMatrix,
}

impl ShiftSpec {
    pub fn new(cov: SymMatrix) -> Result<Self> {
        check_covariance(&cov, "shift")?;
        Ok(Self { cov })
    }

    pub fn zero(p: usize) -> Self {
        Self { cov: SymMatrix::zeros(p) }
    }

    pub fn identity(p: usize) -> Self {
        Self { cov: SymMatrix::identity(p) }
    }

    pub fn scaled_identity(p: usize, scale: f64) -> Result<Self> {
        Self::new(SymMatrix::identity(p).scale(scale))
    }

    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Self::new(self.cov.scale(factor))
    }

    pub fn is_identity(&self) -> bool {
        self.cov.matrix() == &DMatrix::identity(self.cov.dim(), self.cov.dim())
    }
}

/// Samples from one environment: `n×p` covariates and a length-`n` target.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    x: DMatrix<f64>,
    y: DVector<f64>,
    label: String,
}

impl Dataset {
    pub fn new(x: DMatrix<f64>, y: DVector<f64>, label: impl Into<String>) -> Result<Self> {
        if x.nrows() != y.len() {
            return Err(Error::InvalidInput(format!(
                "x has {} rows but y has {} entries",
                x.nrows(),
                y.len()
            )));
        }
        if x.nrows() == 0 {
            return Err(Error::InvalidInput("dataset must have at least one row".into()));
        }
        if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("dataset has non-finite entries".into()));
        }
        Ok(Self { x, y, label: label.into() })
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    /// Rows at `indices`, in that order. Repeated indices are allowed.
    pub fn select_rows(&self, indices: &[usize]) -> Result<Dataset> {
        if indices.is_empty() {
            return Err(Error::InvalidInput("row selection is empty".into()));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.n()) {
            return Err(Error::InvalidInput(format!("row index {bad} out of range")));
        }
        Ok(Dataset {
            x: self.x.select_rows(indices),
            y: self.y.select_rows(indices),
            label: self.label.clone(),
        })
    }
}

/// An observational and a shifted dataset over the same covariates.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvPair {
    pub obs: Dataset,
    pub shifted: Dataset,
}

impl EnvPair {
    pub fn new(obs: Dataset, shifted: Dataset) -> Result<Self> {
        if obs.p() != shifted.p() {
            return Err(Error::InvalidInput(format!(
                "environments have different covariate counts ({} vs {})",
                obs.p(),
                shifted.p()
            )));
        }
        Ok(Self { obs, shifted })
    }

    pub fn p(&self) -> usize {
        self.obs.p()
    }
}

/// Draws `n` i.i.d. rows of `(Y, X)` from the structure with Gaussian noise and
/// shift. Output is a function of the inputs and `seed` only: rows are produced
/// in fixed blocks, each from its own ChaCha stream, so the parallel schedule
/// does not affect the result.
pub fn sample_sem(
    s: &SemStructure,
    noise: &NoiseSpec,
    shift: &ShiftSpec,
    n: usize,
    seed: u64,
) -> Result<Dataset> {
    let p = s.p();
    if n == 0 {
        return Err(Error::InvalidInput("sample size must be positive".into()));
    }
    if noise.cov.dim() != p + 1 || shift.cov.dim() != p {
        return Err(Error::InvalidInput(format!(
            "covariance dimensions ({}, {}) do not match p = {p}",
            noise.cov.dim(),
            shift.cov.dim()
        )));
    }
    let reduced = s.reduced_form()?;
    let noise_root = psd_sqrt(&noise.cov, f64::INFINITY)?.into_inner();
    let shift_root = psd_sqrt(&shift.cov, f64::INFINITY)?.into_inner();
    // (I - B)^{-1} [L_ε | (0; L_A)] applied to one standard normal vector of length 2p + 1.
    let mut loading = DMatrix::zeros(p + 1, 2 * p + 1);
    loading.view_mut((0, 0), (p + 1, p + 1)).copy_from(&noise_root);
    loading.view_mut((1, p + 1), (p, p)).copy_from(&shift_root);
    let transform = &reduced * loading;

    let blocks = n.div_ceil(SAMPLE_BLOCK);
    let parts: Vec<DMatrix<f64>> = (0..blocks)
        .into_par_iter()
        .map(|b| {
            let rows = SAMPLE_BLOCK.min(n - b * SAMPLE_BLOCK);
            let mut rng = stream_rng(seed, b as u64);
            let z = DMatrix::from_fn(2 * p + 1, rows, |_, _| StandardNormal.sample(&mut rng));
            &transform * z
        })
        .collect();

    let mut x = DMatrix::zeros(n, p);
    let mut y = DVector::zeros(n);
    let mut row = 0;
    for part in &parts {
        for c in 0..part.ncols() {
            y[row] = part[(0, c)];
            for k in 0..p {
                x[(row, k)] = part[(k + 1, c)];
            }
            row += 1;
        }
    }
    let label = if shift.cov.max_abs() == 0.0 { "obs" } else { "shift" };
    Dataset::new(x, y, label)
}
