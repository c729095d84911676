//! JSON model files.
//!
//! ```json
//! {
//!   "d": 1,
//!   "environments": [ { "C": [[3.0]], "D": [1.0] }, { "C": [[0.5]], "D": [1.0] } ],
//!   "Q": [[-1.0, 1.0], [1.0, -1.0]],
//!   "group_fractions": [1.0]
//! }
//! ```
//!
//! `Q` is either a constant rate matrix or a builtin state-dependent form:
//! `{ "builtin": "linear_in_prevalence", "base": [[..]], "slope": [[..]] }`
//! gives `Q(x) = base + (sum_i alpha_i x_i) slope` off the diagonal.
//! `group_fractions` defaults to equal fractions. Unknown keys are rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::model::{CureRates, InfectionRates, ModelSpec, SwitchRates};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvironmentConfig {
    #[serde(rename = "C")]
    pub contact: Vec<Vec<f64>>,
    #[serde(rename = "D")]
    pub cure: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Builtin {
    LinearInPrevalence,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SwitchConfig {
    Constant(Vec<Vec<f64>>),
    Builtin {
        builtin: Builtin,
        base: Vec<Vec<f64>>,
        slope: Vec<Vec<f64>>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub d: usize,
    pub environments: Vec<EnvironmentConfig>,
    #[serde(rename = "Q")]
    pub q: SwitchConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group_fractions: Option<Vec<f64>>,
}

/// Fill the diagonal with minus the off-diagonal row sums.
fn rate_matrix(rows: &[Vec<f64>], what: &str) -> Result<Matrix> {
    let mut m = Matrix::from_rows(rows).map_err(|e| Error::Config(format!("{what}: {e}")))?;
    for i in 0..m.dim() {
        let out: f64 = (0..m.dim()).filter(|&j| j != i).map(|j| m[(i, j)]).sum();
        m[(i, i)] = -out;
    }
    Ok(m)
}

impl ModelConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn build(&self) -> Result<ModelSpec> {
        let d = self.d;
        if d == 0 {
            return Err(Error::Config("d must be at least 1".into()));
        }
        if self.environments.is_empty() {
            return Err(Error::Config("at least one environment is required".into()));
        }
        let mut contact = Vec::with_capacity(self.environments.len());
        let mut cure = Vec::with_capacity(self.environments.len());
        for (e, env) in self.environments.iter().enumerate() {
            let c = Matrix::from_rows(&env.contact)
                .map_err(|err| Error::Config(format!("environment {e}: C: {err}")))?;
            if c.dim() != d {
                return Err(Error::Config(format!("environment {e}: C must be {d}x{d}")));
            }
            if env.cure.len() != d {
                return Err(Error::Config(format!("environment {e}: D must have length {d}")));
            }
            contact.push(c);
            cure.push(env.cure.clone());
        }
        let num_env = contact.len();
        let fractions = match &self.group_fractions {
            Some(f) if f.len() != d => {
                return Err(Error::Config(format!("group_fractions must have length {d}")))
            }
            Some(f) => f.clone(),
            None => vec![1.0 / d as f64; d],
        };
        let switch = match &self.q {
            SwitchConfig::Constant(rows) => SwitchRates::Constant(rate_matrix(rows, "Q")?),
            SwitchConfig::Builtin {
                builtin: Builtin::LinearInPrevalence,
                base,
                slope,
            } => {
                SwitchRates::LinearInPrevalence {
                    base: rate_matrix(base, "base")?,
                    slope: rate_matrix(slope, "slope")?,
                }
            }
        };
        if let SwitchRates::Constant(q) | SwitchRates::LinearInPrevalence { base: q, .. } = &switch {
            if q.dim() != num_env {
                return Err(Error::Config(format!("Q must be {num_env}x{num_env}")));
            }
        }
        ModelSpec::new(
            fractions,
            num_env,
            InfectionRates::LajmanovichYorke(contact),
            CureRates::Constant(cure),
            switch,
        )
    }
}

/// Parse and build a model file.
pub fn load_model(path: &Path) -> Result<ModelSpec> {
    ModelConfig::load(path)?.build()
}
