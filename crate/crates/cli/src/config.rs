//! Strict JSON run configuration: unknown keys are rejected, every error
//! carries the offending key path, and validation cross-checks the
//! experiment selector against the cost/solver shape.

use std::path::Path;

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    Solve,
    Kr,
    SweepHard,
    SweepSoft,
    Diagram,
    KlDecay,
    Dynamic,
    Stability,
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Experiment::Solve => "solve",
            Experiment::Kr => "kr",
            Experiment::SweepHard => "sweep-hard",
            Experiment::SweepSoft => "sweep-soft",
            Experiment::Diagram => "diagram",
            Experiment::KlDecay => "kl-decay",
            Experiment::Dynamic => "dynamic",
            Experiment::Stability => "stability",
        }
    }

    fn is_lambda_sweep(self) -> bool {
        matches!(self, Experiment::SweepSoft | Experiment::Diagram | Experiment::KlDecay)
    }

    fn is_epsilon_sweep(self) -> bool {
        matches!(
            self,
            Experiment::SweepHard | Experiment::SweepSoft | Experiment::Diagram | Experiment::Stability
        )
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub mins: Vec<f64>,
    pub maxs: Vec<f64>,
    pub nodes: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaussianConfig {
    pub mean: Vec<f64>,
    pub covariance: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaussianFixture {
    pub source: GaussianConfig,
    pub target: GaussianConfig,
    pub source_grid: GridConfig,
    pub target_grid: GridConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileFixture {
    pub source: String,
    pub target: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FixtureConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gaussian: Option<GaussianFixture>,
    /// Paths to grid-density files (JSON or CSV).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grid_density: Option<FileFixture>,
    /// Paths to atom files (JSON or CSV).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub atoms: Option<FileFixture>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epsilon_list: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolverKind {
    Exact,
    Sinkhorn,
    SoftOracle,
    SemiRelaxed,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnealConfig {
    pub start_factor: f64,
    pub decay: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    pub kind: SolverKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda_list: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub anneal: Option<AnnealConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tolerance: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_iterations: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub polish: Option<bool>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DynamicConfig {
    pub times: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub splat_grid: Option<GridConfig>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StabilityConfig {
    /// Paired entry-wise with the epsilon list.
    pub bandwidths: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mollify_grid: Option<GridConfig>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub experiment: Experiment,
    pub fixture: FixtureConfig,
    pub cost: CostConfig,
    pub solver: SolverConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dynamic: Option<DynamicConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stability: Option<StabilityConfig>,
    #[serde(default)]
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output: Option<String>,
}

/// Parse and validate; every failure names the key path it concerns.
pub fn parse_config(path: &Path) -> anyhow::Result<RunConfig> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading config {}", path.display()))?;
    let deserializer = &mut serde_json::Deserializer::from_str(&text);
    let config: RunConfig = serde_path_to_error::deserialize(deserializer)
        .map_err(|e| anyhow::anyhow!("config key `{}`: {}", e.path(), e.inner()))?;
    validate(&config)?;
    Ok(config)
}

pub fn validate(config: &RunConfig) -> anyhow::Result<()> {
    // Exactly one fixture source.
    let fixtures: Vec<&str> = [
        ("fixture.gaussian", config.fixture.gaussian.is_some()),
        ("fixture.grid_density", config.fixture.grid_density.is_some()),
        ("fixture.atoms", config.fixture.atoms.is_some()),
    ]
    .iter()
    .filter(|(_, set)| *set)
    .map(|(name, _)| *name)
    .collect();
    match fixtures.len() {
        0 => bail!("fixture: exactly one of `gaussian`, `grid_density`, `atoms` is required"),
        1 => {}
        _ => bail!("fixture: conflicting sources {}", fixtures.join(" and ")),
    }

    // Exactly one cost spec.
    match (&config.cost.epsilon, &config.cost.epsilon_list) {
        (None, None) => bail!("cost: one of `epsilon` or `epsilon_list` is required"),
        (Some(_), Some(_)) => bail!("cost: conflicting keys `epsilon` and `epsilon_list`"),
        (Some(e), None) if !(*e > 0.0 && *e <= 1.0) => {
            bail!("cost.epsilon: must lie in (0, 1], got {e}")
        }
        (None, Some(list)) if list.iter().any(|e| !(*e > 0.0 && *e <= 1.0)) => {
            bail!("cost.epsilon_list: entries must lie in (0, 1]")
        }
        _ => {}
    }
    if config.cost.epsilon_list.is_some() && !config.experiment.is_epsilon_sweep() {
        bail!(
            "cost.epsilon_list: epsilon list requires a sweep experiment, not `{}`",
            config.experiment.name()
        );
    }

    // Solver shape.
    let s = &config.solver;
    if let Some(t) = s.tolerance {
        if !(t > 0.0) {
            bail!("solver.tolerance: must be positive, got {t}");
        }
    }
    if let Some(e) = s.eta {
        if !(e > 0.0) {
            bail!("solver.eta: must be positive, got {e}");
        }
    }
    match s.kind {
        SolverKind::Exact => {
            if s.lambda.is_some() || s.lambda_list.is_some() {
                bail!("solver.lambda: the exact solver takes no lambda");
            }
            if config.experiment == Experiment::SweepSoft
                || config.experiment == Experiment::KlDecay
                || config.experiment == Experiment::Diagram
            {
                bail!(
                    "solver.kind: experiment `{}` needs a soft solver (sinkhorn | soft-oracle | semi-relaxed)",
                    config.experiment.name()
                );
            }
        }
        _ => match (&s.lambda, &s.lambda_list) {
            (None, None) => bail!("solver: one of `lambda` or `lambda_list` is required"),
            (Some(_), Some(_)) => bail!("solver: conflicting keys `lambda` and `lambda_list`"),
            (None, Some(_)) if !config.experiment.is_lambda_sweep() => {
                bail!(
                    "solver.lambda_list: lambda list requires a sweep experiment, not `{}`",
                    config.experiment.name()
                )
            }
            (Some(l), None) if !(*l > 0.0) => bail!("solver.lambda: must be positive, got {l}"),
            (None, Some(list)) if list.iter().any(|l| !(*l > 0.0)) => {
                bail!("solver.lambda_list: entries must be positive")
            }
            _ => {}
        },
    }

    // Experiment-specific sections.
    if config.experiment == Experiment::Dynamic && config.dynamic.is_none() {
        bail!("dynamic: section required for the dynamic experiment");
    }
    if config.experiment == Experiment::Stability {
        let Some(st) = &config.stability else {
            bail!("stability: section required for the stability experiment");
        };
        let eps_len = config.cost.epsilon_list.as_ref().map_or(1, Vec::len);
        if st.bandwidths.len() != eps_len {
            bail!(
                "stability.bandwidths: {} entries do not pair with {} epsilon values",
                st.bandwidths.len(),
                eps_len
            );
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal() -> serde_json::Value {
        serde_json::json!({
            "experiment": "solve",
            "fixture": {
                "gaussian": {
                    "source": {"mean": [0.0], "covariance": [[1.0]]},
                    "target": {"mean": [1.0], "covariance": [[2.0]]},
                    "source_grid": {"mins": [-6.0], "maxs": [6.0], "nodes": [41]},
                    "target_grid": {"mins": [-7.0], "maxs": [9.0], "nodes": [41]}
                }
            },
            "cost": {"epsilon": 1.0},
            "solver": {"kind": "exact"},
            "seed": 0
        })
    }

    fn parse_value(v: serde_json::Value) -> anyhow::Result<RunConfig> {
        let config: RunConfig = serde_json::from_value(v)?;
        validate(&config)?;
        Ok(config)
    }

    #[test]
    fn minimal_gaussian_solve_is_valid() {
        parse_value(minimal()).unwrap();
    }

    #[test]
    fn conflicting_fixtures_name_both_keys() {
        let mut v = minimal();
        v["fixture"]["atoms"] = serde_json::json!({"source": "a.csv", "target": "b.csv"});
        let err = parse_value(v).unwrap_err().to_string();
        assert!(err.contains("fixture.gaussian") && err.contains("fixture.atoms"), "{err}");
    }

    #[test]
    fn lambda_list_needs_sweep_experiment() {
        let mut v = minimal();
        v["solver"] = serde_json::json!({"kind": "soft-oracle", "lambda_list": [1.0, 10.0]});
        let err = parse_value(v).unwrap_err().to_string();
        assert!(err.contains("lambda list requires a sweep experiment"), "{err}");
    }

    #[test]
    fn unknown_keys_are_rejected_with_path() {
        let mut v = minimal();
        v["cost"]["spurious"] = serde_json::json!(1);
        let text = serde_json::to_string(&v).unwrap();
        let deserializer = &mut serde_json::Deserializer::from_str(&text);
        let err = serde_path_to_error::deserialize::<_, RunConfig>(deserializer).unwrap_err();
        assert!(err.to_string().contains("spurious"), "{err}");
    }

    #[test]
    fn epsilon_list_requires_sweep() {
        let mut v = minimal();
        v["cost"] = serde_json::json!({"epsilon_list": [1.0, 0.1]});
        let err = parse_value(v).unwrap_err().to_string();
        assert!(err.contains("epsilon list requires a sweep experiment"), "{err}");
    }

    #[test]
    fn zero_tolerance_rejected() {
        let mut v = minimal();
        v["solver"] = serde_json::json!({"kind": "sinkhorn", "lambda": 1.0, "tolerance": 0.0});
        let err = parse_value(v).unwrap_err().to_string();
        assert!(err.contains("solver.tolerance"), "{err}");
    }
}
