//! Run configuration: a TOML file with the model, the prior and one section
//! per concern. Matrices are lists of rows.
//!
//! ```toml
//! [model]
//! k = 1
//! p = 2
//! a = "diagonal-indicator"
//!
//! [prior]
//! preset = "rademacher"
//!
//! [run]
//! t = [0.25, 0.5, 1.0]
//! h = [0.0, 0.1, 0.5]    # a number s means s * I
//! pairing = "zip"
//! n = [2, 4, 6]
//! n_disorder = 400
//! ```

use std::path::Path;

use anyhow::Context;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use tensor_hj::hj_checker::GridSpec;
use tensor_hj::hopf::SolverConfig;
use tensor_hj::initial_condition::{EvalMode, DEFAULT_GH_NODES};
use tensor_hj::model::{DiscretePrior, InteractionSpec, ModelSection, PriorSection};
use tensor_hj::{Error, SymMatrix};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Model and prior from a separate file (relative to the config), instead
    /// of inline `[model]` / `[prior]` sections.
    pub model_file: Option<String>,
    pub model: Option<ModelSection>,
    pub prior: Option<PriorSection>,
    #[serde(default)]
    pub run: RunSection,
    #[serde(default)]
    pub psi: PsiSection,
    #[serde(default)]
    pub solver: SolverConfig,
    pub grid: Option<GridSpec>,
    pub layered: Option<LayeredSection>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Pairing {
    /// Every `t` with every `h`.
    #[default]
    Product,
    /// `t[i]` with `h[i]`.
    Zip,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Field {
    Scale(f64),
    Rows(Vec<Vec<f64>>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub t: Vec<f64>,
    pub h: Vec<Field>,
    pub pairing: Pairing,
    pub n: Vec<usize>,
    pub n_disorder: usize,
    pub seed: u64,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            t: vec![],
            h: vec![],
            pairing: Pairing::Product,
            n: vec![],
            n_disorder: 100,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PsiSection {
    pub nodes: usize,
    /// Monte Carlo sample count; quadrature when absent.
    pub mc_samples: Option<usize>,
    pub mc_seed: u64,
}

impl Default for PsiSection {
    fn default() -> Self {
        Self {
            nodes: DEFAULT_GH_NODES,
            mc_samples: None,
            mc_seed: 0,
        }
    }
}

impl PsiSection {
    pub fn mode(&self) -> EvalMode {
        match self.mc_samples {
            Some(samples) => EvalMode::MonteCarlo {
                samples,
                seed: self.mc_seed,
            },
            None => EvalMode::GaussHermite { nodes: self.nodes },
        }
    }
}

/// Scalar layer priors of a chain nonlinearity.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayeredSection {
    pub layers: Vec<PriorSection>,
}

pub fn invalid(field: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidArgument {
        field,
        reason: reason.into(),
    }
}

/// Parsed configuration plus what was resolved from it.
pub struct Loaded {
    pub config: RunConfig,
    pub hash: String,
    model: Option<(InteractionSpec, DiscretePrior)>,
}

impl Loaded {
    pub fn read(path: Option<&Path>) -> anyhow::Result<Self> {
        let Some(path) = path else {
            return Self::from_config(RunConfig::default(), None);
        };
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let config: RunConfig = toml::from_str(&text).map_err(|e| Error::ModelFile(e.to_string()))?;
        Self::from_config(config, path.parent())
    }

    pub fn from_config(config: RunConfig, base: Option<&Path>) -> anyhow::Result<Self> {
        config.solver.validate()?;
        let model = match (&config.model_file, &config.model, &config.prior) {
            (Some(_), Some(_), _) | (Some(_), _, Some(_)) => {
                return Err(invalid("model_file", "give either model_file or inline [model]/[prior]").into())
            }
            (Some(file), None, None) => {
                let path = base.unwrap_or(Path::new(".")).join(file);
                if !path.is_file() {
                    return Err(invalid("model_file", format!("{} does not exist", path.display())).into());
                }
                let text = std::fs::read_to_string(&path)?;
                Some(tensor_hj::model::ModelFile::load(&text)?)
            }
            (None, Some(model), Some(prior)) => Some(
                tensor_hj::model::ModelFile {
                    model: model.clone(),
                    prior: prior.clone(),
                }
                .resolve()?,
            ),
            (None, Some(_), None) => return Err(invalid("prior", "missing [prior] section").into()),
            (None, None, Some(_)) => return Err(invalid("model", "missing [model] section").into()),
            (None, None, None) => None,
        };
        let canonical = serde_json::to_string(&config)?;
        let hash = hex::encode(Sha256::digest(canonical.as_bytes()))[..16].to_string();
        Ok(Self {
            config,
            hash,
            model,
        })
    }

    pub fn model(&self) -> anyhow::Result<&(InteractionSpec, DiscretePrior)> {
        self.model
            .as_ref()
            .ok_or_else(|| invalid("model", "this subcommand needs [model] and [prior]").into())
    }

    pub fn k(&self) -> anyhow::Result<usize> {
        Ok(self.model()?.0.k())
    }

    pub fn fields(&self) -> anyhow::Result<Vec<SymMatrix>> {
        let k = self.k()?;
        if self.config.run.h.is_empty() {
            return Err(invalid("run.h", "need at least one field").into());
        }
        self.config
            .run
            .h
            .iter()
            .map(|f| match f {
                Field::Scale(s) => Ok(SymMatrix::identity(k).scale(*s)),
                Field::Rows(rows) => {
                    if rows.len() != k || rows.iter().any(|r| r.len() != k) {
                        return Err(invalid("run.h", format!("matrices must be {k}x{k}")).into());
                    }
                    SymMatrix::from_rows(rows).map_err(|e| invalid("run.h", e.to_string()).into())
                }
            })
            .collect()
    }

    pub fn times(&self) -> anyhow::Result<Vec<f64>> {
        let t = &self.config.run.t;
        if t.is_empty() {
            return Err(invalid("run.t", "need at least one time").into());
        }
        if t.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
            return Err(invalid("run.t", "times must be finite and >= 0").into());
        }
        Ok(t.clone())
    }

    /// `(t, h)` points in the configured pairing.
    pub fn points(&self) -> anyhow::Result<Vec<(f64, SymMatrix)>> {
        let (ts, hs) = (self.times()?, self.fields()?);
        match self.config.run.pairing {
            Pairing::Product => Ok(ts
                .iter()
                .flat_map(|&t| hs.iter().map(move |h| (t, h.clone())))
                .collect()),
            Pairing::Zip => {
                if ts.len() != hs.len() {
                    return Err(invalid("run.pairing", "zip needs as many times as fields").into());
                }
                Ok(ts.into_iter().zip(hs).collect())
            }
        }
    }

    pub fn sizes(&self) -> anyhow::Result<Vec<usize>> {
        let n = &self.config.run.n;
        if n.is_empty() || n.contains(&0) {
            return Err(invalid("run.n", "need a nonempty list of positive sizes").into());
        }
        Ok(n.clone())
    }

    pub fn n_disorder(&self) -> anyhow::Result<usize> {
        match self.config.run.n_disorder {
            0 => Err(invalid("run.n_disorder", "must be positive").into()),
            n => Ok(n),
        }
    }
}
