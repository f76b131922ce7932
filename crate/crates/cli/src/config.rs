//! Run configuration file (`schema: 1`).

use std::path::Path;

use anyhow::{bail, ensure, Context, Result};
use egohpo::acquisition::SearchBudget;
use egohpo::benchbox::{Builtin, CommandLine};
use egohpo::{
    AcquisitionKind, BudgetPlan, Direction, DriverConfig, FitConfig, ParameterSpec, SearchSpace,
};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema: u32,
    pub name: String,
    #[serde(default)]
    pub direction: Direction,
    #[serde(default)]
    pub seed: u64,
    pub budget: BudgetConfig,
    pub parameters: Vec<ParameterSpec>,
    #[serde(default)]
    pub gp: GpConfig,
    #[serde(default)]
    pub acquisition: AcquisitionConfig,
    pub blackbox: BlackboxConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BudgetConfig {
    pub n_init: usize,
    pub n_opt: usize,
    #[serde(default = "one")]
    pub q: usize,
    #[serde(default = "one")]
    pub init_parallelism: usize,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GpConfig {
    pub restarts: usize,
    pub theta_bounds: (f64, f64),
    pub nugget_bounds: (f64, f64),
}

impl Default for GpConfig {
    fn default() -> Self {
        let f = FitConfig::default();
        Self {
            restarts: f.restarts,
            theta_bounds: f.theta_bounds,
            nugget_bounds: f.nugget_bounds,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AcquisitionConfig {
    #[serde(rename = "type")]
    pub kind: AcquisitionKind,
    pub mc_samples: usize,
    pub multistarts: usize,
    pub local_steps: usize,
}

impl Default for AcquisitionConfig {
    fn default() -> Self {
        let s = SearchBudget::default();
        Self {
            kind: AcquisitionKind::Qei,
            mc_samples: DriverConfig::default().mc_samples,
            multistarts: s.multistarts,
            local_steps: s.local_steps,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BlackboxKind {
    Builtin,
    Command,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlackboxConfig {
    pub kind: BlackboxKind,
    /// `branin`, `builtin:branin`, ...
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub builtin: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub command: Option<CommandLine>,
    #[serde(default)]
    pub noise_sd: f64,
    #[serde(default)]
    pub latency_s: f64,
}

impl BlackboxConfig {
    pub fn builtin(&self) -> Result<Option<Builtin>> {
        self.builtin
            .as_deref()
            .map(|s| s.parse::<Builtin>().map_err(Into::into))
            .transpose()
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config {}", path.display()))?;
        let cfg =
            Self::from_json(&text).with_context(|| format!("invalid config {}", path.display()))?;
        Ok(cfg)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.schema == SCHEMA_VERSION,
            "unsupported schema version {} (expected {SCHEMA_VERSION})",
            self.schema
        );
        let space = self.space()?;
        self.plan().validate(space.dim())?;
        ensure!(
            self.budget.init_parallelism >= 1,
            "init_parallelism must be at least 1"
        );
        self.fit_config().validate()?;
        let a = &self.acquisition;
        ensure!(a.mc_samples >= 2, "mc_samples must be at least 2");
        ensure!(a.multistarts >= 1, "multistarts must be at least 1");
        let bb = &self.blackbox;
        ensure!(
            bb.noise_sd >= 0.0 && bb.noise_sd.is_finite(),
            "noise_sd must be >= 0"
        );
        ensure!(
            bb.latency_s >= 0.0 && bb.latency_s.is_finite(),
            "latency_s must be >= 0"
        );
        match bb.kind {
            BlackboxKind::Builtin => {
                ensure!(
                    bb.command.is_none(),
                    "a builtin black box takes no `command`"
                );
                let Some(b) = bb.builtin()? else {
                    bail!("blackbox.kind = builtin needs `builtin`");
                };
                if let Some(d) = b.dim() {
                    ensure!(
                        d == space.dim(),
                        "builtin {b} needs {d} parameters, config has {}",
                        space.dim()
                    );
                }
            }
            BlackboxKind::Command => {
                ensure!(
                    bb.builtin.is_none(),
                    "a command black box takes no `builtin`"
                );
                ensure!(
                    bb.command.is_some(),
                    "blackbox.kind = command needs `command`"
                );
            }
        }
        Ok(())
    }

    pub fn space(&self) -> Result<SearchSpace> {
        Ok(SearchSpace::new(self.parameters.clone())?)
    }

    pub fn plan(&self) -> BudgetPlan {
        BudgetPlan {
            n_init: self.budget.n_init,
            n_opt: self.budget.n_opt,
            q: self.budget.q,
        }
    }

    pub fn fit_config(&self) -> FitConfig {
        FitConfig {
            restarts: self.gp.restarts,
            theta_bounds: self.gp.theta_bounds,
            nugget_bounds: self.gp.nugget_bounds,
            ..FitConfig::default()
        }
    }

    /// Driver settings; `parallel` caps concurrent evaluations in both phases.
    pub fn driver_config(&self, parallel: Option<usize>) -> DriverConfig {
        let cap = parallel.unwrap_or(usize::MAX).max(1);
        DriverConfig {
            seed: self.seed,
            direction: self.direction,
            init_parallelism: self.budget.init_parallelism.min(cap),
            ego_parallelism: self.budget.q.min(cap),
            fit: self.fit_config(),
            acquisition: self.acquisition.kind,
            mc_samples: self.acquisition.mc_samples,
            search: SearchBudget {
                multistarts: self.acquisition.multistarts,
                local_steps: self.acquisition.local_steps,
            },
            config_digest: self.digest(),
        }
    }

    /// SHA-256 of the canonical JSON form. Two configs with equal digests
    /// produce the same run.
    pub fn digest(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config serializes");
        let hash = Sha256::digest(canonical.as_bytes());
        hash.iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "schema": 1,
        "name": "t",
        "budget": {"n_init": 4, "n_opt": 2},
        "parameters": [{"name": "x", "lower": 0, "upper": 1}, {"name": "y", "lower": 0, "upper": 1}],
        "blackbox": {"kind": "builtin", "builtin": "sphere"}
    }"#;

    #[test]
    fn minimal_config_gets_defaults() {
        let c = RunConfig::from_json(MINIMAL).unwrap();
        assert_eq!(c.budget.q, 1);
        assert_eq!(c.direction, Direction::Minimize);
        assert_eq!(c.acquisition.kind, AcquisitionKind::Qei);
        assert_eq!(c.digest().len(), 64);
    }

    #[test]
    fn unknown_keys_rejected() {
        let bad = MINIMAL.replace("\"name\": \"t\",", "\"name\": \"t\", \"colour\": 1,");
        assert!(RunConfig::from_json(&bad).is_err());
        let bad = MINIMAL.replace("\"upper\": 1}, {", "\"upper\": 1, \"step\": 2}, {");
        assert!(RunConfig::from_json(&bad).is_err());
    }

    #[test]
    fn semantic_checks() {
        assert!(RunConfig::from_json(&MINIMAL.replace("\"schema\": 1", "\"schema\": 2")).is_err());
        assert!(RunConfig::from_json(&MINIMAL.replace("\"n_init\": 4", "\"n_init\": 3")).is_err());
        assert!(RunConfig::from_json(&MINIMAL.replace("sphere", "branin")).is_ok());
        assert!(RunConfig::from_json(&MINIMAL.replace("sphere", "hartmann6")).is_err());
        assert!(RunConfig::from_json(&MINIMAL.replace(
            "\"builtin\": \"sphere\"",
            "\"builtin\": \"sphere\", \"command\": \"true\""
        ))
        .is_err());
        assert!(RunConfig::from_json(&MINIMAL.replace(
            "\"kind\": \"builtin\", \"builtin\": \"sphere\"",
            "\"kind\": \"command\""
        ))
        .is_err());
    }

    #[test]
    fn digest_tracks_content_and_parallel_caps() {
        let a = RunConfig::from_json(MINIMAL).unwrap();
        let mut b = a.clone();
        b.seed = 9;
        assert_ne!(a.digest(), b.digest());
        let d = a.driver_config(Some(1));
        assert_eq!((d.init_parallelism, d.ego_parallelism), (1, 1));
    }
}
