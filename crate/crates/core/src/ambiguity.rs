//! Risk level, support and the on-disk ambiguity specification.

use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::linalg::square_from_rows;
use crate::moments::{MomentAmbiguity, MomentKind};
use crate::phi::{Divergence, PhiAmbiguity};
use crate::wasserstein::{ScenarioSet, WassersteinAmbiguity};
use crate::{Error, Result};

/// Chance-constraint risk level `eps` in the open interval `(0, 1)`.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct RiskLevel(f64);

impl RiskLevel {
    pub fn new(eps: f64) -> Result<Self> {
        if eps > 0.0 && eps < 1.0 {
            Ok(Self(eps))
        } else {
            Err(Error::Domain(format!("risk level {eps} outside (0, 1)")))
        }
    }

    pub fn get(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for RiskLevel {
    type Error = Error;
    fn try_from(v: f64) -> Result<Self> {
        Self::new(v)
    }
}

impl From<RiskLevel> for f64 {
    fn from(r: RiskLevel) -> f64 {
        r.0
    }
}

/// Support of the reward vector.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum Support {
    #[default]
    #[serde(rename = "full")]
    Full,
    #[serde(rename = "nonneg", alias = "nonnegative")]
    Nonnegative,
}

/// A fully validated ambiguity description.
#[derive(Clone, Debug)]
pub enum AmbiguitySpec {
    /// Expected reward only; no chance constraint.
    Nominal {
        mu: Vec<f64>,
    },
    /// Exactly known Gaussian reward distribution.
    Gaussian {
        mu: Vec<f64>,
        sigma: DMatrix<f64>,
        epsilon: RiskLevel,
    },
    Moments(MomentAmbiguity),
    Phi(PhiAmbiguity),
    Wasserstein(WassersteinAmbiguity),
}

impl AmbiguitySpec {
    pub fn dim(&self) -> usize {
        match self {
            AmbiguitySpec::Nominal { mu } | AmbiguitySpec::Gaussian { mu, .. } => mu.len(),
            AmbiguitySpec::Moments(a) => a.dim(),
            AmbiguitySpec::Phi(a) => a.mu.len(),
            AmbiguitySpec::Wasserstein(a) => a.scenarios.dim(),
        }
    }

    pub fn epsilon(&self) -> Option<RiskLevel> {
        match self {
            AmbiguitySpec::Nominal { .. } => None,
            AmbiguitySpec::Gaussian { epsilon, .. } => Some(*epsilon),
            AmbiguitySpec::Moments(a) => Some(a.epsilon),
            AmbiguitySpec::Phi(a) => Some(a.epsilon),
            AmbiguitySpec::Wasserstein(a) => Some(a.epsilon),
        }
    }

    /// Short model name used in reports.
    pub fn name(&self) -> String {
        match self {
            AmbiguitySpec::Nominal { .. } => "nominal".into(),
            AmbiguitySpec::Gaussian { .. } => "gaussian".into(),
            AmbiguitySpec::Moments(a) => {
                let k = match a.kind {
                    MomentKind::D1 => "d1",
                    MomentKind::D2 => "d2",
                    MomentKind::D3 => "d3",
                };
                match a.support {
                    Support::Full => k.into(),
                    Support::Nonnegative => format!("{k}-nonneg"),
                }
            }
            AmbiguitySpec::Phi(a) => a.divergence.short_name().into(),
            AmbiguitySpec::Wasserstein(a) => match a.support {
                Support::Full => "w-full".into(),
                Support::Nonnegative => "w-nonneg".into(),
            },
        }
    }

    /// Reads a JSON spec; a scenario CSV path is resolved against the JSON's
    /// directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_json_str(&text, &base)
    }

    pub fn from_json_str(s: &str, base_dir: &Path) -> Result<Self> {
        let j: AmbiguityJson = serde_json::from_str(s)?;
        Self::from_json(j, base_dir)
    }

    pub fn from_json(j: AmbiguityJson, base_dir: &Path) -> Result<Self> {
        let matrix = |rows: &[Vec<f64>], what| square_from_rows(rows, what);
        Ok(match j {
            AmbiguityJson::Nominal { mu } => AmbiguitySpec::Nominal { mu },
            AmbiguityJson::Gaussian { mu, sigma, epsilon } => {
                let sigma = matrix(&sigma, "covariance")?;
                if sigma.nrows() != mu.len() {
                    return Err(Error::dim("covariance rows", mu.len(), sigma.nrows()));
                }
                crate::linalg::cholesky_lower(&sigma)?;
                AmbiguitySpec::Gaussian {
                    mu,
                    sigma,
                    epsilon: RiskLevel::new(epsilon)?,
                }
            }
            AmbiguityJson::D1(m) => moments_from_json(MomentKind::D1, m)?,
            AmbiguityJson::D2(m) => moments_from_json(MomentKind::D2, m)?,
            AmbiguityJson::D3(m) => moments_from_json(MomentKind::D3, m)?,
            AmbiguityJson::Phi {
                divergence,
                theta,
                epsilon,
                mu_nu,
                sigma_nu,
            } => AmbiguitySpec::Phi(PhiAmbiguity::new(
                divergence,
                theta,
                RiskLevel::new(epsilon)?,
                mu_nu,
                matrix(&sigma_nu, "nominal covariance")?,
            )?),
            AmbiguityJson::Wasserstein {
                theta,
                epsilon,
                support,
                scenarios_csv,
                order,
            } => {
                if let Some(p) = order {
                    if p != 1 {
                        return Err(Error::Unsupported(format!(
                            "Wasserstein order {p}; only order 1 is implemented"
                        )));
                    }
                }
                let path = if scenarios_csv.is_absolute() {
                    scenarios_csv
                } else {
                    base_dir.join(scenarios_csv)
                };
                let scenarios = ScenarioSet::read_csv(&path)?;
                AmbiguitySpec::Wasserstein(WassersteinAmbiguity::new(
                    theta,
                    RiskLevel::new(epsilon)?,
                    scenarios,
                    support,
                )?)
            }
        })
    }
}

fn moments_from_json(kind: MomentKind, m: MomentJson) -> Result<AmbiguitySpec> {
    let sigma = square_from_rows(&m.sigma, "covariance")?;
    Ok(AmbiguitySpec::Moments(MomentAmbiguity::new(
        kind,
        m.mu,
        sigma,
        m.delta0.unwrap_or(1.0),
        m.delta1.unwrap_or(0.0),
        m.delta2.unwrap_or(1.0),
        m.support,
        RiskLevel::new(m.epsilon)?,
    )?))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MomentJson {
    pub mu: Vec<f64>,
    pub sigma: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta0: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta2: Option<f64>,
    #[serde(default)]
    pub support: Support,
    pub epsilon: f64,
}

/// On-disk ambiguity format, tagged by `kind`.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum AmbiguityJson {
    #[serde(rename = "nominal")]
    Nominal {
        mu: Vec<f64>,
    },
    #[serde(rename = "gaussian")]
    Gaussian {
        mu: Vec<f64>,
        sigma: Vec<Vec<f64>>,
        epsilon: f64,
    },
    D1(MomentJson),
    D2(MomentJson),
    D3(MomentJson),
    #[serde(rename = "phi")]
    Phi {
        divergence: Divergence,
        theta: f64,
        epsilon: f64,
        mu_nu: Vec<f64>,
        sigma_nu: Vec<Vec<f64>>,
    },
    #[serde(rename = "wasserstein")]
    Wasserstein {
        theta: f64,
        epsilon: f64,
        #[serde(default)]
        support: Support,
        scenarios_csv: PathBuf,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        order: Option<u32>,
    },
}
