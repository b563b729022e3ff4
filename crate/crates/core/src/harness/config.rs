//! Experiment configuration: instance source, generator grids, visibility
//! models, penalty grid, and sampling parameters. Accepted as TOML or JSON.

use crate::error::{Error, Result};
use crate::instance::{GraphInstance, UtilitySpec};
use crate::Visibility;
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeneratorKind {
    Tspb,
    Bwalk,
    SgRand,
    SgDet,
    Bgt,
}

impl GeneratorKind {
    pub fn label(self) -> &'static str {
        match self {
            GeneratorKind::Tspb => "tspb",
            GeneratorKind::Bwalk => "bwalk",
            GeneratorKind::SgRand => "sg_rand",
            GeneratorKind::SgDet => "sg_det",
            GeneratorKind::Bgt => "bgt",
        }
    }

    pub fn is_deterministic(self) -> bool {
        matches!(self, GeneratorKind::SgDet | GeneratorKind::Bgt)
    }

    /// Valid keep/bias parameter domain, for config validation.
    pub fn alpha_domain(self) -> (f64, f64, &'static str) {
        match self {
            GeneratorKind::Tspb => (f64::MIN_POSITIVE, 1.0, "(0, 1]"),
            GeneratorKind::Bwalk => (1.0, f64::INFINITY, "[1, inf)"),
            GeneratorKind::SgRand => (0.0, f64::INFINITY, "[0, inf)"),
            GeneratorKind::SgDet | GeneratorKind::Bgt => (1.0, 1.0, "{1} (unused)"),
        }
    }
}

impl std::str::FromStr for GeneratorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tspb" => Ok(GeneratorKind::Tspb),
            "bwalk" => Ok(GeneratorKind::Bwalk),
            "sg_rand" => Ok(GeneratorKind::SgRand),
            "sg_det" => Ok(GeneratorKind::SgDet),
            "bgt" => Ok(GeneratorKind::Bgt),
            other => Err(Error::Config(format!(
                "unknown generator kind {other:?}; expected tspb, bwalk, sg_rand, sg_det, or bgt"
            ))),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorSpec {
    pub kind: GeneratorKind,
    /// Grid of keep/bias parameters; deterministic kinds default to a single
    /// placeholder value.
    #[serde(default)]
    pub alphas: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "snake_case", tag = "source")]
pub enum InstanceSource {
    Random {
        n: usize,
        #[serde(default = "default_side")]
        side: f64,
        seed: u64,
        #[serde(default)]
        utility_degree: usize,
        #[serde(default = "default_coeff_min")]
        coeff_min: f64,
        #[serde(default = "default_coeff_max")]
        coeff_max: f64,
    },
    Csv {
        path: String,
        #[serde(default)]
        utility_degree: usize,
        #[serde(default = "default_coeff_min")]
        coeff_min: f64,
        #[serde(default = "default_coeff_max")]
        coeff_max: f64,
        seed: u64,
    },
    Json {
        path: String,
    },
}

fn default_side() -> f64 {
    1000.0
}

fn default_coeff_min() -> f64 {
    0.5
}

fn default_coeff_max() -> f64 {
    1.5
}

fn default_samples() -> usize {
    10
}

fn default_entropy_steps() -> usize {
    2000
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub instance: InstanceSource,
    pub generators: Vec<GeneratorSpec>,
    #[serde(default = "all_models")]
    pub models: Vec<Visibility>,
    #[serde(default)]
    pub penalties: Vec<f64>,
    /// trace horizon in slots; 0 means 50x the duration bound
    #[serde(default)]
    pub horizon: u64,
    /// replications per cell
    #[serde(default = "default_samples")]
    pub samples: usize,
    /// largest attack duration; 0 means 4x the graph diameter
    #[serde(default)]
    pub t_max: u64,
    /// steps per run for entropy-rate estimation
    #[serde(default = "default_entropy_steps")]
    pub entropy_steps: usize,
    pub seed: u64,
    /// sizes for the scalability sweep; unused elsewhere
    #[serde(default)]
    pub sizes: Vec<usize>,
}

fn all_models() -> Vec<Visibility> {
    vec![Visibility::Full, Visibility::Local, Visibility::None]
}

impl ExperimentConfig {
    /// Parses TOML or JSON by file extension (falling back to trying both).
    pub fn load(path: &Path) -> Result<Self> {
        let raw = std::fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        let cfg: Self = match path.extension().and_then(|e| e.to_str()) {
            Some("json") => serde_json::from_str(&raw)
                .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?,
            Some("toml") => toml::from_str(&raw)
                .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?,
            _ => toml::from_str(&raw)
                .or_else(|_| serde_json::from_str(&raw))
                .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.generators.is_empty() {
            return Err(Error::Config("at least one generator is required".into()));
        }
        for spec in &self.generators {
            let (lo, hi, domain) = spec.kind.alpha_domain();
            if spec.kind.is_deterministic() {
                if !spec.alphas.is_empty() && spec.alphas != [1.0] {
                    return Err(Error::Config(format!(
                        "{} takes no alpha grid",
                        spec.kind.label()
                    )));
                }
                continue;
            }
            if spec.alphas.is_empty() {
                return Err(Error::Config(format!(
                    "{} needs a non-empty alpha grid",
                    spec.kind.label()
                )));
            }
            for &a in &spec.alphas {
                if !(a >= lo && a <= hi && a.is_finite()) {
                    return Err(Error::Config(format!(
                        "alpha {a} outside the {} domain {domain}",
                        spec.kind.label()
                    )));
                }
            }
        }
        if self.penalties.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::Config("penalty grid must be ascending".into()));
        }
        if self.penalties.iter().any(|&m| m < 0.0) {
            return Err(Error::Config("penalties must be nonnegative".into()));
        }
        if self.samples == 0 {
            return Err(Error::Config("samples must be at least 1".into()));
        }
        if self.models.is_empty() {
            return Err(Error::Config("at least one visibility model is required".into()));
        }
        Ok(())
    }

    pub fn build_instance(&self) -> Result<GraphInstance> {
        match &self.instance {
            InstanceSource::Random {
                n,
                side,
                seed,
                utility_degree,
                coeff_min,
                coeff_max,
            } => {
                let spec = UtilitySpec::new(*utility_degree, *coeff_min, *coeff_max)?;
                GraphInstance::generate_random(*n, *side, *seed, &spec)
            }
            InstanceSource::Csv {
                path,
                utility_degree,
                coeff_min,
                coeff_max,
                seed,
            } => {
                let spec = UtilitySpec::new(*utility_degree, *coeff_min, *coeff_max)?;
                GraphInstance::load_sites_csv(path, &spec, *seed)
            }
            InstanceSource::Json { path } => {
                let raw = std::fs::read_to_string(path).map_err(|e| Error::Io {
                    path: path.clone(),
                    source: e,
                })?;
                GraphInstance::from_json(&raw)
            }
        }
    }

    /// Duration bound: explicit, or 4x the graph diameter.
    pub fn resolve_t_max(&self, instance: &GraphInstance) -> u64 {
        if self.t_max > 0 {
            self.t_max
        } else {
            4 * instance.diameter().max(1)
        }
    }

    /// Horizon: explicit, or 50x the duration bound.
    pub fn resolve_horizon(&self, t_max: u64) -> u64 {
        if self.horizon > 0 {
            self.horizon
        } else {
            50 * t_max
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_tmp(ext: &str, body: &str) -> tempfile::TempDir {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join(format!("cfg.{ext}")), body).unwrap();
        dir
    }

    #[test]
    fn toml_round_trip() {
        let body = r#"
seed = 7
penalties = [0.0, 1.0]
horizon = 500
samples = 3

[instance]
source = "random"
n = 6
seed = 1

[[generators]]
kind = "tspb"
alphas = [0.5, 1.0]
"#;
        let dir = write_tmp("toml", body);
        let cfg = ExperimentConfig::load(&dir.path().join("cfg.toml")).unwrap();
        assert_eq!(cfg.samples, 3);
        assert_eq!(cfg.generators[0].kind, GeneratorKind::Tspb);
        let inst = cfg.build_instance().unwrap();
        assert_eq!(inst.len(), 6);
        assert_eq!(cfg.resolve_t_max(&inst), 4 * inst.diameter());
    }

    #[test]
    fn json_config_parses() {
        let body = r#"{
  "seed": 1,
  "instance": {"source": "random", "n": 4, "seed": 2},
  "generators": [{"kind": "bwalk", "alphas": [1.0, 1.5]}]
}"#;
        let dir = write_tmp("json", body);
        let cfg = ExperimentConfig::load(&dir.path().join("cfg.json")).unwrap();
        assert_eq!(cfg.generators[0].alphas, vec![1.0, 1.5]);
        assert_eq!(cfg.models.len(), 3);
    }

    #[test]
    fn alpha_domain_enforced() {
        for (kind, alpha) in [("tspb", 1.5), ("tspb", 0.0), ("bwalk", 0.5), ("sg_rand", -1.0)] {
            let body = format!(
                r#"
seed = 1
[instance]
source = "random"
n = 4
seed = 2
[[generators]]
kind = "{kind}"
alphas = [{alpha}]
"#
            );
            let dir = write_tmp("toml", &body);
            let err = ExperimentConfig::load(&dir.path().join("cfg.toml")).unwrap_err();
            assert!(matches!(err, Error::Config(_)), "{kind} {alpha}");
        }
    }

    #[test]
    fn penalty_grid_must_ascend() {
        let body = r#"
seed = 1
penalties = [2.0, 1.0]
[instance]
source = "random"
n = 4
seed = 2
[[generators]]
kind = "bgt"
"#;
        let dir = write_tmp("toml", body);
        assert!(ExperimentConfig::load(&dir.path().join("cfg.toml")).is_err());
    }
}
