use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::RunError;
use crate::aero::{ExternalSimulator, FlowConditions};
use crate::backends::mock::MockWorldConfig;
use crate::backends::{BackendEndpointConfig, Backends};
use crate::mesh::RepairParams;
use crate::objective::ObjectiveWeights;
use crate::render::CameraRig;
use crate::semantic::DomainSpec;

/// Where prompts, meshes and embeddings come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackendChoice {
    Mock(MockWorldConfig),
    Http(BackendEndpointConfig),
}

impl Default for BackendChoice {
    fn default() -> Self {
        Self::Mock(MockWorldConfig::default())
    }
}

impl BackendChoice {
    pub fn connect(&self) -> Backends {
        match self {
            Self::Mock(c) => Backends::mock(c.clone()),
            Self::Http(c) => Backends::http(c.clone()),
        }
    }
}

/// Source of the raw drag score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PhysicsChoice {
    #[default]
    Newtonian,
    External(ExternalSimulator),
}

/// Whether proposals see exemplars (the refinement loop) or only a fixed instruction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SearchMode {
    #[default]
    Refine,
    Baseline,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TemperatureRange {
    pub min: f64,
    pub max: f64,
}

impl Default for TemperatureRange {
    fn default() -> Self {
        Self { min: 0.6, max: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReferenceConfig {
    /// Number of reference objects generated when no meshes are given.
    pub count: usize,
    /// Prompt for generated references; `{label}` is replaced by the domain label.
    pub prompt: String,
    /// Reference meshes loaded from disk instead of generated.
    pub meshes: Vec<PathBuf>,
    /// Fixed novelty weight; when absent it is derived from the references' physical scores.
    pub beta: Option<f64>,
}

impl Default for ReferenceConfig {
    fn default() -> Self {
        Self { count: 4, prompt: "A {label}".into(), meshes: Vec::new(), beta: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    /// Exemplar population size N.
    pub population: usize,
    pub max_steps: usize,
    pub seed: u64,
    pub mode: SearchMode,
    pub domain: DomainSpec,
    pub rig: CameraRig,
    pub flow: FlowConditions,
    pub objective: ObjectiveWeights,
    pub reference: ReferenceConfig,
    pub backend: BackendChoice,
    pub physics: PhysicsChoice,
    pub temperature: TemperatureRange,
    /// Feature pyramid depth J of the novelty term.
    pub feature_levels: usize,
    /// Attempts per failure class before a candidate becomes an infeasible sentinel.
    pub retry_budget: u32,
    /// Artifacts generated per prompt; component scores are averaged over them.
    pub samples_per_prompt: usize,
    /// Worker threads for candidate evaluation; 0 uses every core.
    pub workers: usize,
    pub normalize_pose: bool,
    pub repair: RepairParams,
    /// Store each candidate's mesh under `meshes/`.
    pub save_meshes: bool,
    /// Record evaluation wall time in the manifest (breaks byte-identical reruns).
    pub record_wall_time: bool,
    /// Stop early when the best objective has not improved for this many steps.
    pub plateau_steps: Option<usize>,
    /// Stop after the first step that ends past this many seconds.
    pub time_budget_secs: Option<f64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            population: 20,
            max_steps: 40,
            seed: 0,
            mode: SearchMode::Refine,
            domain: DomainSpec::default(),
            rig: CameraRig::default(),
            flow: FlowConditions::default(),
            objective: ObjectiveWeights::default(),
            reference: ReferenceConfig::default(),
            backend: BackendChoice::default(),
            physics: PhysicsChoice::default(),
            temperature: TemperatureRange::default(),
            feature_levels: 3,
            retry_budget: 3,
            samples_per_prompt: 1,
            workers: 0,
            normalize_pose: true,
            repair: RepairParams::default(),
            save_meshes: true,
            record_wall_time: false,
            plateau_steps: None,
            time_budget_secs: None,
        }
    }
}

impl RunConfig {
    /// Settings tuned for the offline mock world: a prompt threshold loose enough for the
    /// hashed text embeddings and drag bounds spanning the mock bodies.
    pub fn mock() -> Self {
        Self {
            objective: ObjectiveWeights { epsilon: 0.9, ..ObjectiveWeights::default() },
            ..Self::default()
        }
    }

    /// Reads TOML or JSON, chosen by extension (JSON when the extension is `.json`).
    pub fn load(path: &Path) -> Result<Self, RunError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| RunError::Config(format!("cannot read {}: {e}", path.display())))?;
        let config: Self = if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json")) {
            serde_json::from_str(&text).map_err(|e| RunError::Config(format!("{}: {e}", path.display())))?
        } else {
            toml::from_str(&text).map_err(|e| RunError::Config(format!("{}: {e}", path.display())))?
        };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), RunError> {
        let bad = |m: String| Err(RunError::Config(m));
        if self.population == 0 {
            return bad("population must be at least 1".into());
        }
        if self.retry_budget == 0 {
            return bad("retry_budget must be at least 1".into());
        }
        if self.samples_per_prompt == 0 {
            return bad("samples_per_prompt must be at least 1".into());
        }
        let t = &self.temperature;
        if !(t.min >= 0.0 && t.min <= t.max && t.max.is_finite()) {
            return bad(format!("temperature range [{}, {}] is invalid", t.min, t.max));
        }
        if self.reference.meshes.is_empty() && self.reference.count == 0 && self.reference.beta.is_none() {
            return bad("reference set is empty".into());
        }
        if let Some(beta) = self.reference.beta {
            if !(beta >= 0.0 && beta.is_finite()) {
                return bad("reference.beta must be finite and non-negative".into());
            }
        }
        self.domain.validate().map_err(RunError::Config)?;
        self.rig.validate().map_err(|e| RunError::Config(e.to_string()))?;
        self.flow.validate().map_err(|e| RunError::Config(e.to_string()))?;
        self.objective.validate().map_err(|e| RunError::Config(e.to_string()))?;
        if let BackendChoice::Http(c) = &self.backend {
            c.validate().map_err(RunError::Config)?;
        }
        if let PhysicsChoice::External(sim) = &self.physics {
            if sim.command.is_empty() || !(sim.timeout_secs > 0.0) {
                return bad("external simulator needs a command and a positive timeout".into());
            }
        }
        Ok(())
    }

    pub fn reference_prompt(&self) -> String {
        self.reference.prompt.replace("{label}", &self.domain.label)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_and_json_agree() {
        let dir = tempfile::tempdir().unwrap();
        let toml_path = dir.path().join("run.toml");
        std::fs::write(
            &toml_path,
            r#"
population = 4
max_steps = 3
seed = 9

[objective]
epsilon = 0.9
domain_term_mode = "paper_exact"

[backend]
kind = "mock"
hill_climb_step = 2

[physics]
kind = "external"
command = ["sh", "solve.sh"]
timeout_secs = 5.0
"#,
        )
        .unwrap();
        let a = RunConfig::load(&toml_path).unwrap();
        assert_eq!(a.population, 4);
        assert!(matches!(&a.backend, BackendChoice::Mock(m) if m.hill_climb_step == 2 && m.nouns.len() == 8));
        assert!(matches!(&a.physics, PhysicsChoice::External(s) if s.max_jobs == 1));
        let json_path = dir.path().join("run.json");
        std::fs::write(&json_path, serde_json::to_string(&a).unwrap()).unwrap();
        assert_eq!(RunConfig::load(&json_path).unwrap(), a);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        assert!(RunConfig { population: 0, ..RunConfig::mock() }.validate().is_err());
        let bad_t = RunConfig { temperature: TemperatureRange { min: 1.0, max: 0.5 }, ..RunConfig::mock() };
        assert!(bad_t.validate().is_err());
        assert!(RunConfig::load(Path::new("/nonexistent/run.toml")).is_err());
        assert!(RunConfig::mock().validate().is_ok());
    }
}
