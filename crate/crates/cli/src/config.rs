//! Scenario files: one JSON document fully determines a run.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use cqdyn::models::{self, Model};
use cqdyn::operator::make_su_basis;
use cqdyn::state::GridRecord;
use cqdyn::{CMatrix, CouplingSpec, DenseOperator, HybridObservable, HybridStateGrid, RMatrix, ToyModelParams};
use serde::Deserialize;

use crate::error::CliError;

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub model: ModelConfig,
    #[serde(default)]
    pub initial: InitialConfig,
    #[serde(default)]
    pub integration: IntegrationConfig,
    #[serde(default)]
    pub analyses: Vec<Analysis>,
    #[serde(default)]
    pub output: OutputConfig,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub audit: AuditConfig,
    /// Hand-supplied backreaction summary for `check-dd`.
    #[serde(default)]
    pub dd: Option<ManualSummary>,
    #[serde(default)]
    pub test_hooks: TestHooks,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelConfig {
    Toy {
        #[serde(default)]
        params: ToyModelParams,
    },
    Builtin {
        name: String,
    },
    Tables(Box<TablesConfig>),
}

/// A model given entry by entry. Matrices are rows of `[re, im]` pairs;
/// per-cell lists of length one are broadcast to every cell.
#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TablesConfig {
    pub dim: usize,
    pub grid: GridRecord,
    #[serde(default)]
    pub hamiltonian: Vec<DenseOperator>,
    /// `λ^{μν}` in the su(d) basis, `d² × d²`.
    #[serde(default)]
    pub lindblad: Vec<DenseOperator>,
    #[serde(default)]
    pub kernel: Vec<KernelEntry>,
    #[serde(default)]
    pub drift: Vec<Vec<f64>>,
    #[serde(default)]
    pub diffusion: Vec<Vec<Vec<f64>>>,
    #[serde(default)]
    pub observables: Vec<ObservableEntry>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelEntry {
    pub to: usize,
    pub from: usize,
    pub rates: DenseOperator,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObservableEntry {
    pub label: String,
    pub operator: DenseOperator,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialConfig {
    #[default]
    Default,
    /// All weight in one cell.
    Delta { cell: usize, rho: DenseOperator },
    /// `ρ` times the uniform density.
    Product { rho: DenseOperator },
    /// Explicit blocks, one per cell.
    Blocks { blocks: Vec<DenseOperator> },
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntegrationConfig {
    pub t_final: f64,
    pub dt: f64,
    #[serde(default = "one")]
    pub snapshot_every: usize,
    #[serde(default = "one")]
    pub monitor_every: usize,
    #[serde(default)]
    pub trace_tol: Option<f64>,
    #[serde(default)]
    pub positivity_tol: Option<f64>,
}

fn one() -> usize {
    1
}

impl Default for IntegrationConfig {
    fn default() -> Self {
        Self { t_final: 10.0, dt: 1e-3, snapshot_every: 10, monitor_every: 1, trace_tol: None, positivity_tol: None }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Analysis {
    Spectrum,
    Audit,
    DdCheck,
    Consistency,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default = "default_dir")]
    pub dir: PathBuf,
}

fn default_dir() -> PathBuf {
    PathBuf::from("out")
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { dir: default_dir() }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AuditConfig {
    #[serde(default = "default_rotations")]
    pub rotations: usize,
    #[serde(default = "default_horizon")]
    pub horizon: f64,
    #[serde(default = "default_samples")]
    pub samples: usize,
}

fn default_rotations() -> usize {
    30
}
fn default_horizon() -> f64 {
    2.0
}
fn default_samples() -> usize {
    20
}

impl Default for AuditConfig {
    fn default() -> Self {
        Self { rotations: default_rotations(), horizon: default_horizon(), samples: default_samples() }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManualSummary {
    pub d0: f64,
    pub d1: Vec<f64>,
    pub d2: Vec<Vec<f64>>,
}

/// Hooks for exercising failure paths.
#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TestHooks {
    #[serde(default)]
    pub fault: Option<FaultHook>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FaultHook {
    pub step: usize,
    pub magnitude: f64,
}

impl ScenarioConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("config: cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: Self = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let key = if path == "." { "config".to_string() } else { path };
            CliError::Config(format!("{key}: {}", e.inner()))
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Defaults for the `toy` subcommand when no file is given.
    pub fn toy_default() -> Self {
        Self {
            model: ModelConfig::Toy { params: ToyModelParams::default() },
            initial: InitialConfig::Default,
            integration: IntegrationConfig::default(),
            analyses: Vec::new(),
            output: OutputConfig::default(),
            seed: 0,
            audit: AuditConfig::default(),
            dd: None,
            test_hooks: TestHooks::default(),
        }
    }

    fn validate(&self) -> Result<(), CliError> {
        let i = &self.integration;
        if !(i.dt.is_finite() && i.dt > 0.0) {
            return Err(CliError::Config(format!("integration.dt: must be positive and finite, got {}", i.dt)));
        }
        if !(i.t_final.is_finite() && i.t_final > 0.0) {
            return Err(CliError::Config(format!("integration.t_final: must be positive, got {}", i.t_final)));
        }
        if i.snapshot_every == 0 {
            return Err(CliError::Config("integration.snapshot_every: must be at least 1".into()));
        }
        if i.monitor_every == 0 {
            return Err(CliError::Config("integration.monitor_every: must be at least 1".into()));
        }
        if let ModelConfig::Toy { params } = &self.model {
            params.validate().map_err(|e| CliError::Config(format!("model.params: {e}")))?;
        }
        if self.audit.rotations == 0 || self.audit.samples == 0 {
            return Err(CliError::Config("audit: rotations and samples must be positive".into()));
        }
        if !(self.audit.horizon > 0.0) {
            return Err(CliError::Config("audit.horizon: must be positive".into()));
        }
        Ok(())
    }

    pub fn toy_params(&self) -> Option<&ToyModelParams> {
        match &self.model {
            ModelConfig::Toy { params } => Some(params),
            _ => None,
        }
    }

    /// Builds the model and applies the `initial` override.
    pub fn build_model(&self) -> Result<Model, CliError> {
        let mut model = match &self.model {
            ModelConfig::Toy { params } => models::toy_model(params)?,
            ModelConfig::Builtin { name } => models::builtin(name)?,
            ModelConfig::Tables(t) => build_tables(t)?,
        };
        if let Some(state) = self.initial_state(&model)? {
            model.initial = state;
        }
        Ok(model)
    }

    fn initial_state(&self, model: &Model) -> Result<Option<HybridStateGrid>, CliError> {
        let grid = model.spec.grid().clone();
        let n = grid.len();
        let d = model.spec.dim();
        let vol = grid.cell_volume();
        let check_dim = |rho: &DenseOperator| {
            if rho.dim() == d {
                Ok(())
            } else {
                Err(CliError::Config(format!("initial: expected {d}x{d} blocks, got {}x{}", rho.dim(), rho.dim())))
            }
        };
        let state = match &self.initial {
            InitialConfig::Default => return Ok(None),
            InitialConfig::Delta { cell, rho } => {
                check_dim(rho)?;
                if *cell >= n {
                    return Err(CliError::Config(format!("initial.cell: {cell} out of range ({n} cells)")));
                }
                let mut blocks = vec![DenseOperator::zeros(d); n];
                blocks[*cell] = rho.scale_real(1.0 / vol);
                HybridStateGrid::new(grid, blocks)?
            }
            InitialConfig::Product { rho } => {
                check_dim(rho)?;
                let w = 1.0 / (n as f64 * vol);
                HybridStateGrid::new(grid, vec![rho.scale_real(w); n])?
            }
            InitialConfig::Blocks { blocks } => {
                if blocks.len() != n {
                    return Err(CliError::Config(format!("initial.blocks: expected {n} blocks, got {}", blocks.len())));
                }
                for b in blocks {
                    check_dim(b)?;
                }
                HybridStateGrid::new(grid, blocks.clone())?
            }
        };
        let total: f64 = state.blocks().iter().map(|b| b.trace().re).sum::<f64>() * vol;
        if (total - 1.0).abs() > 1e-9 {
            return Err(CliError::Config(format!("initial: state integrates to {total}, expected 1")));
        }
        Ok(Some(state))
    }
}

fn per_cell<T: Clone>(key: &str, items: &[T], n: usize) -> Result<Option<Vec<T>>, CliError> {
    match items.len() {
        0 => Ok(None),
        1 => Ok(Some(vec![items[0].clone(); n])),
        k if k == n => Ok(Some(items.to_vec())),
        k => Err(CliError::Config(format!("model.{key}: expected 1 or {n} entries, got {k}"))),
    }
}

fn build_tables(t: &TablesConfig) -> Result<Model, CliError> {
    let grid = Arc::new(t.grid.build().map_err(|e| CliError::Config(format!("model.grid: {e}")))?);
    let n = grid.len();
    let d = t.dim;
    let basis = make_su_basis(d).map_err(|e| CliError::Config(format!("model.dim: {e}")))?;
    let index = {
        let g = grid.clone();
        move |z: &cqdyn::PhaseSpacePoint| g.locate(z).expect("point of own grid")
    };
    let mut b = CouplingSpec::builder(basis, grid.clone());
    if let Some(hs) = per_cell("hamiltonian", &t.hamiltonian, n)? {
        if hs.iter().any(|h| h.dim() != d) {
            return Err(CliError::Config(format!("model.hamiltonian: operators must be {d}x{d}")));
        }
        let hs = Arc::new(hs);
        let index = index.clone();
        b = b.hamiltonian(move |z| hs[index(z)].clone());
    }
    if let Some(ls) = per_cell("lindblad", &t.lindblad, n)? {
        if ls.iter().any(|l| l.dim() != d * d) {
            return Err(CliError::Config(format!("model.lindblad: rate matrices must be {0}x{0}", d * d)));
        }
        let ls: Arc<Vec<CMatrix>> = Arc::new(ls.into_iter().map(|l| l.into_matrix()).collect());
        let index = index.clone();
        b = b.lindblad(move |z| ls[index(z)].clone());
    }
    if !t.kernel.is_empty() {
        let mut table: Vec<Option<CMatrix>> = vec![None; n * n];
        for (k, e) in t.kernel.iter().enumerate() {
            if e.to >= n || e.from >= n {
                return Err(CliError::Config(format!("model.kernel[{k}]: cell index out of range ({n} cells)")));
            }
            if e.rates.dim() != d * d {
                return Err(CliError::Config(format!("model.kernel[{k}].rates: must be {0}x{0}", d * d)));
            }
            let slot = &mut table[e.to * n + e.from];
            *slot = Some(match slot.take() {
                Some(m) => m + e.rates.matrix(),
                None => e.rates.matrix().clone(),
            });
        }
        let table = Arc::new(table);
        b = b.kernel_cells(move |z, zp| table[z * n + zp].clone());
    }
    let axes = 2 * grid.dof();
    if let Some(dr) = per_cell("drift", &t.drift, n)? {
        if dr.iter().any(|v| v.len() != axes) {
            return Err(CliError::Config(format!("model.drift: vectors must have {axes} components")));
        }
        let dr = Arc::new(dr);
        let index = index.clone();
        b = b.drift(move |z| dr[index(z)].clone());
    }
    if let Some(df) = per_cell("diffusion", &t.diffusion, n)? {
        let mut mats = Vec::with_capacity(n);
        for m in df {
            if m.len() != axes || m.iter().any(|r| r.len() != axes) {
                return Err(CliError::Config(format!("model.diffusion: matrices must be {axes}x{axes}")));
            }
            mats.push(nalgebra_from_rows(&m));
        }
        let mats = Arc::new(mats);
        b = b.diffusion(move |z| mats[index(z)].clone());
    }
    let spec = b.build().map_err(|e| CliError::Config(format!("model: {e}")))?;
    let mut observables: Vec<HybridObservable> = Vec::new();
    for o in &t.observables {
        if o.operator.dim() != d {
            return Err(CliError::Config(format!("model.observables: `{}` must be {d}x{d}", o.label)));
        }
        observables.push(HybridObservable::quantum(o.label.clone(), o.operator.clone()));
    }
    let w = 1.0 / (n as f64 * grid.cell_volume());
    let initial = HybridStateGrid::new(grid, vec![DenseOperator::identity(d).scale_real(w / d as f64); n])?;
    Ok(Model { name: "tables".into(), spec, initial, observables })
}

fn nalgebra_from_rows(rows: &[Vec<f64>]) -> RMatrix {
    let n = rows.len();
    RMatrix::from_fn(n, n, |i, j| rows[i][j])
}
