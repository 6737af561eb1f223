//! Scenario configuration files (TOML, schema-validated: unknown keys are
//! rejected).

use serde::{Deserialize, Serialize};

use gfbvp::dynamics::{HamiltonianModel, PhaseState, ReferenceTrajectory};
use gfbvp::partition::BoundaryPartition;

use crate::CliError;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub model: ModelConfig,
    pub reference: ReferenceConfig,
    pub gf: GfConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// `harmonic`, `hill` or `crtbp`.
    pub name: String,
    /// Oscillator frequency (harmonic only).
    pub omega: Option<f64>,
    /// Mass ratio (crtbp only).
    pub mu: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReferenceConfig {
    /// Equilibrium name: `L1`..`L5` for the three-body models, `origin`
    /// for the oscillator. Mutually exclusive with `trajectory_csv`.
    pub equilibrium: Option<String>,
    /// CSV file of `t,q1..qn,p1..pn` samples along a reference solution.
    pub trajectory_csv: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GfConfig {
    pub order: usize,
    /// Classical kind (`F1`..`F4`); alternatively give `ip`/`kr` index
    /// lists for a mixed partition.
    pub kind: Option<String>,
    pub ip: Option<Vec<usize>>,
    pub kr: Option<Vec<usize>>,
    pub t_start: f64,
    pub t_end: f64,
    pub tol: f64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            model: ModelConfig {
                name: "hill".into(),
                omega: None,
                mu: None,
            },
            reference: ReferenceConfig {
                equilibrium: Some("L2".into()),
                trajectory_csv: None,
            },
            gf: GfConfig {
                order: 6,
                kind: Some("F2".into()),
                ip: None,
                kr: None,
                t_start: 0.0,
                t_end: 3.45,
                tol: 1e-11,
            },
        }
    }
}

impl ScenarioConfig {
    pub fn model(&self) -> Result<HamiltonianModel, CliError> {
        match self.model.name.as_str() {
            "harmonic" => {
                let omega = self
                    .model
                    .omega
                    .ok_or_else(|| CliError::usage("model.omega is required for `harmonic`"))?;
                Ok(HamiltonianModel::harmonic_oscillator(omega))
            }
            "hill" => Ok(HamiltonianModel::hill()),
            "crtbp" => {
                let mu = self
                    .model
                    .mu
                    .ok_or_else(|| CliError::usage("model.mu is required for `crtbp`"))?;
                Ok(HamiltonianModel::crtbp(mu))
            }
            other => Err(CliError::usage(format!(
                "unknown model `{other}` (expected harmonic, hill or crtbp)"
            ))),
        }
    }

    pub fn reference(&self, model: &HamiltonianModel) -> Result<ReferenceTrajectory, CliError> {
        let span = (self.gf.t_start, self.gf.t_end);
        match (&self.reference.equilibrium, &self.reference.trajectory_csv) {
            (Some(name), None) => {
                let state = match (model.name(), name.as_str()) {
                    ("harmonic", "origin") => {
                        PhaseState::new(vec![0.0; model.n()], vec![0.0; model.n()])
                            .map_err(CliError::numerical_from)?
                    }
                    ("hill", "L1") => model.libration_points().map_err(CliError::numerical_from)?[0].clone(),
                    ("hill", "L2") => model.libration_points().map_err(CliError::numerical_from)?[1].clone(),
                    ("crtbp", point) => {
                        let points = model.libration_points().map_err(CliError::numerical_from)?;
                        let idx = match point {
                            "L1" => 0,
                            "L2" => 1,
                            "L3" => 2,
                            "L4" => 3,
                            "L5" => 4,
                            other => {
                                return Err(CliError::usage(format!(
                                    "unknown equilibrium `{other}` for crtbp"
                                )))
                            }
                        };
                        points[idx].clone()
                    }
                    (m, p) => {
                        return Err(CliError::usage(format!(
                            "equilibrium `{p}` is not defined for model `{m}`"
                        )))
                    }
                };
                ReferenceTrajectory::equilibrium(model.clone(), &state, span.0, span.1, name)
                    .map_err(CliError::numerical_from)
            }
            (None, Some(path)) => {
                let text = std::fs::read_to_string(path).map_err(|e| {
                    CliError::usage(format!("cannot read trajectory file `{path}`: {e}"))
                })?;
                ReferenceTrajectory::from_csv(model.clone(), &text, 1e-2, path)
                    .map_err(CliError::numerical_from)
            }
            _ => Err(CliError::usage(
                "reference needs exactly one of `equilibrium` or `trajectory_csv`",
            )),
        }
    }

    pub fn partition(&self, n: usize) -> Result<BoundaryPartition, CliError> {
        partition_from_parts(self.gf.kind.as_deref(), &self.gf.ip, &self.gf.kr, n)
    }
}

/// Parse a partition from either a classical kind name or index lists.
pub fn partition_from_parts(
    kind: Option<&str>,
    ip: &Option<Vec<usize>>,
    kr: &Option<Vec<usize>>,
    n: usize,
) -> Result<BoundaryPartition, CliError> {
    match (kind, ip, kr) {
        (Some(kind), None, None) => parse_kind(kind, n),
        (None, Some(ip), Some(kr)) => BoundaryPartition::new(n, ip, kr)
            .map_err(|e| CliError::usage(format!("invalid partition: {e}"))),
        _ => Err(CliError::usage(
            "give either `kind = \"F1\"..\"F4\"` or both `ip` and `kr` index lists",
        )),
    }
}

pub fn parse_kind(kind: &str, n: usize) -> Result<BoundaryPartition, CliError> {
    let k = match kind {
        "F1" | "f1" => gfbvp::partition::GfKind::F1,
        "F2" | "f2" => gfbvp::partition::GfKind::F2,
        "F3" | "f3" => gfbvp::partition::GfKind::F3,
        "F4" | "f4" => gfbvp::partition::GfKind::F4,
        other => {
            return Err(CliError::usage(format!(
                "unknown kind `{other}` (expected F1, F2, F3 or F4)"
            )))
        }
    };
    Ok(k.partition(n))
}

/// Linear-quadratic problem description.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LqConfig {
    pub dynamics: LqDynamics,
    pub cost: LqCost,
    pub problem: LqProblemBlock,
    pub boundary: LqBoundaryBlock,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LqDynamics {
    pub a: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LqCost {
    pub q: Vec<Vec<f64>>,
    pub n: Option<Vec<Vec<f64>>>,
    pub r: Vec<Vec<f64>>,
    pub qf: Option<Vec<Vec<f64>>>,
    pub m: Option<Vec<Vec<f64>>>,
    pub mf: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LqProblemBlock {
    pub x0: Vec<f64>,
    pub t_start: f64,
    pub t_end: f64,
    pub tol: Option<f64>,
    pub samples: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LqBoundaryBlock {
    /// `mixed` (fixed endpoint values) or `transversality` (free final
    /// state, costate from the terminal-cost gradient).
    pub mode: String,
    /// `[index, value]` pairs, 1-based indices.
    pub fixed_states: Option<Vec<(usize, f64)>>,
    pub fixed_costates: Option<Vec<(usize, f64)>>,
}

impl Default for LqConfig {
    fn default() -> Self {
        LqConfig {
            dynamics: LqDynamics {
                a: vec![vec![0.0]],
                b: vec![vec![1.0]],
            },
            cost: LqCost {
                q: vec![vec![0.0]],
                n: None,
                r: vec![vec![1.0]],
                qf: None,
                m: None,
                mf: None,
            },
            problem: LqProblemBlock {
                x0: vec![1.0],
                t_start: 0.0,
                t_end: 1.0,
                tol: Some(1e-11),
                samples: Some(101),
            },
            boundary: LqBoundaryBlock {
                mode: "mixed".into(),
                fixed_states: Some(vec![(1, 0.0)]),
                fixed_costates: Some(vec![]),
            },
        }
    }
}

pub fn load_toml<T: serde::de::DeserializeOwned>(path: &str) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::usage(format!("cannot read config `{path}`: {e}")))?;
    toml::from_str(&text).map_err(|e| CliError::usage(format!("config `{path}` is invalid: {e}")))
}
