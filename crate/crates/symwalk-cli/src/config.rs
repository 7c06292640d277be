//! Experiment configuration: JSON schema, strict validation, model builders.

use nalgebra::DMatrix;
use serde::Deserialize;

use symwalk::markov_core::{build_generator, lattice_laplacian, Adjacency};
use symwalk::{Boundary, Generator, ScalarFn, StateSpace};

use crate::CliError;

/// One experiment.  Unknown keys anywhere in the document are rejected at
/// parse time; cross-field requirements are checked by [`ExperimentConfig::validate`]
/// and by the subcommands that need them.
#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub model: ModelConfig,
    pub beta: f64,
    #[serde(default)]
    pub n_particles: Option<usize>,
    #[serde(default)]
    pub n_list: Option<Vec<usize>>,
    #[serde(default)]
    pub functional: Option<FunctionalConfig>,
    #[serde(default)]
    pub observable: Option<ObservableConfig>,
    /// Target occupation for `dv-rate` and `jsym`; normalised to mass one.
    /// Defaults to the uniform measure on the model's state space.
    #[serde(default)]
    pub target: Option<Vec<f64>>,
    /// Monte-Carlo replica count for `sample`.
    #[serde(default)]
    pub samples: Option<usize>,
    #[serde(default)]
    pub tolerances: Tolerances,
    /// Output file name; defaults to `<subcommand>.csv` (or `.json`).
    #[serde(default)]
    pub output: Option<String>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelConfig {
    /// Two-state flip chain with rate 1/2.
    Telegraph,
    /// Box in Z^d with the lattice Laplacian.
    Lattice {
        lo: Vec<i64>,
        hi: Vec<i64>,
        #[serde(default)]
        adjacency: AdjacencyConfig,
        #[serde(default)]
        boundary: BoundaryConfig,
    },
    /// Raw generator matrix under the sign conventions of the library
    /// (nonpositive off-diagonal entries).
    Matrix { h: Vec<Vec<f64>> },
}

#[derive(Clone, Copy, Debug, Default, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdjacencyConfig {
    #[default]
    L1,
    Linf,
}

#[derive(Clone, Copy, Debug, Default, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryConfig {
    #[default]
    Absorbing,
    Internal,
}

#[derive(Clone, Copy, Debug, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FunctionalConfig {
    Constant { c: f64 },
    Linear { slope: f64 },
    Affine { slope: f64, intercept: f64 },
    Quadratic { a: f64, b: f64, c: f64 },
}

#[derive(Clone, Debug, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ObservableConfig {
    /// `diag(1, -1)`; two-state models only.
    Spin,
    /// Explicit value per state, in state-index order.
    Values { values: Vec<f64> },
}

/// Thresholds used by `verify` and by certificate reporting.
#[derive(Clone, Copy, Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Tolerances {
    /// Eigenvalue gradient vs central finite differences.
    pub gradient_check: f64,
    /// Row-sum deviation of stochastic kernels.
    pub stochastic_rows: f64,
    /// Saddle certificate marginals against the target occupation.
    pub marginals: f64,
    /// Relative duality gap of the saddle certificate.
    pub certificate_gap: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            gradient_check: 1e-6,
            stochastic_rows: 1e-10,
            marginals: 1e-8,
            certificate_gap: 1e-4,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), CliError> {
        if !self.beta.is_finite() || self.beta <= 0.0 {
            return Err(CliError::Config(format!(
                "beta must be positive, got {}",
                self.beta
            )));
        }
        match &self.model {
            ModelConfig::Telegraph => {}
            ModelConfig::Lattice { lo, hi, .. } => {
                if lo.is_empty() || lo.len() != hi.len() {
                    return Err(CliError::Config(
                        "lattice lo and hi must be nonempty and of equal length".into(),
                    ));
                }
                if lo.iter().zip(hi).any(|(a, b)| a > b) {
                    return Err(CliError::Config(
                        "lattice box must satisfy lo <= hi in every coordinate".into(),
                    ));
                }
            }
            ModelConfig::Matrix { h } => {
                if h.is_empty() || h.iter().any(|row| row.len() != h.len()) {
                    return Err(CliError::Config("matrix model must be square".into()));
                }
            }
        }
        let n = self.n_states();
        if let Some(t) = &self.target {
            if t.len() != n {
                return Err(CliError::Config(format!(
                    "target has {} entries for a model with {} states",
                    t.len(),
                    n
                )));
            }
            if t.iter().any(|&w| w < 0.0 || !w.is_finite()) {
                return Err(CliError::Config(
                    "target entries must be nonnegative".into(),
                ));
            }
            if t.iter().sum::<f64>() <= 0.0 {
                return Err(CliError::Config("target must carry positive mass".into()));
            }
        }
        if let Some(obs) = &self.observable {
            match obs {
                ObservableConfig::Spin if n != 2 => {
                    return Err(CliError::Config(
                        "spin observable needs a two-state model".into(),
                    ));
                }
                ObservableConfig::Values { values } if values.len() != n => {
                    return Err(CliError::Config(format!(
                        "observable has {} values for a model with {} states",
                        values.len(),
                        n
                    )));
                }
                _ => {}
            }
        }
        if let Some(list) = &self.n_list {
            if list.is_empty() || list.contains(&0) {
                return Err(CliError::Config(
                    "n_list must be nonempty with positive entries".into(),
                ));
            }
        }
        if self.n_particles == Some(0) {
            return Err(CliError::Config("n_particles must be positive".into()));
        }
        if self.samples == Some(0) || self.samples == Some(1) {
            return Err(CliError::Config("samples must be at least 2".into()));
        }
        Ok(())
    }

    pub fn n_states(&self) -> usize {
        match &self.model {
            ModelConfig::Telegraph => 2,
            ModelConfig::Lattice {
                lo, hi, adjacency, ..
            } => {
                let (space, _) = lattice_space(lo, hi, *adjacency, BoundaryConfig::Absorbing);
                space.len()
            }
            ModelConfig::Matrix { h } => h.len(),
        }
    }

    pub fn generator(&self) -> Result<Generator, CliError> {
        match &self.model {
            ModelConfig::Telegraph => Ok(symwalk::bose_trace::telegraph_generator()),
            ModelConfig::Lattice {
                lo,
                hi,
                adjacency,
                boundary,
            } => {
                let (space, b) = lattice_space(lo, hi, *adjacency, *boundary);
                Ok(lattice_laplacian(&space, b))
            }
            ModelConfig::Matrix { h } => {
                let n = h.len();
                let flat: Vec<f64> = h.iter().flatten().copied().collect();
                build_generator(DMatrix::from_row_slice(n, n, &flat))
                    .map_err(|e| CliError::Config(format!("invalid generator matrix: {e}")))
            }
        }
    }

    /// Lattice state space and boundary; `None` for non-lattice models.
    pub fn lattice(&self) -> Option<(StateSpace, Boundary)> {
        match &self.model {
            ModelConfig::Lattice {
                lo,
                hi,
                adjacency,
                boundary,
            } => Some(lattice_space(lo, hi, *adjacency, *boundary)),
            _ => None,
        }
    }

    /// Per-state observable values; zeros when unconfigured.
    pub fn observable_values(&self) -> Vec<f64> {
        let n = self.n_states();
        match &self.observable {
            None => vec![0.0; n],
            Some(ObservableConfig::Spin) => vec![1.0, -1.0],
            Some(ObservableConfig::Values { values }) => values.clone(),
        }
    }

    /// Functional of the mean observable; the zero constant when absent.
    pub fn scalar_fn(&self) -> ScalarFn {
        match self.functional {
            None => ScalarFn::Constant(0.0),
            Some(FunctionalConfig::Constant { c }) => ScalarFn::Constant(c),
            Some(FunctionalConfig::Linear { slope }) => ScalarFn::Linear(slope),
            Some(FunctionalConfig::Affine { slope, intercept }) => {
                ScalarFn::Affine { slope, intercept }
            }
            Some(FunctionalConfig::Quadratic { a, b, c }) => ScalarFn::Quadratic { a, b, c },
        }
    }

    /// Normalised target occupation; uniform when unconfigured.
    pub fn target_occupation(&self) -> Vec<f64> {
        let n = self.n_states();
        match &self.target {
            None => vec![1.0 / n as f64; n],
            Some(t) => {
                let total: f64 = t.iter().sum();
                t.iter().map(|&w| w / total).collect()
            }
        }
    }
}

fn lattice_space(
    lo: &[i64],
    hi: &[i64],
    adjacency: AdjacencyConfig,
    boundary: BoundaryConfig,
) -> (StateSpace, Boundary) {
    let adj = match adjacency {
        AdjacencyConfig::L1 => Adjacency::L1,
        AdjacencyConfig::Linf => Adjacency::LInf,
    };
    let b = match boundary {
        BoundaryConfig::Absorbing => Boundary::Absorbing,
        BoundaryConfig::Internal => Boundary::Internal,
    };
    (StateSpace::lattice_box_with(lo, hi, adj), b)
}

/// FNV-1a over the raw config bytes; the header fingerprint of every output.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}
