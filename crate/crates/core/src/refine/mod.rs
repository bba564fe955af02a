//! The refinement loop: propose prompts from exemplars, generate and score artifacts, and keep
//! a fixed-size exemplar population by pairwise tournament.

mod config;
pub mod manifest;
pub mod meta;
mod select;

use std::collections::HashSet;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::{info, warn};

use crate::aero::{external_simulate, f_physical, newtonian_coefficients, AeroError, SimulatorError};
use crate::backends::{BackendError, Backends, ChatMessage, Embedder};
use crate::mesh::{load_mesh, normalize_pose, repair_with, save_mesh, MeshError, TriangleMesh};
use crate::novelty::{min_novelty, NoveltyError, ReferenceViews};
use crate::objective::{compute_beta, evaluate_candidate, CandidateScore, ObjectiveError};
use crate::render::{render_multiview, RenderError};
use crate::semantic::{embed_views, f_domain_from, prompt_feasible, CachedEmbedder, DomainScore, SemanticError};
use crate::seed::{derive_seed, rng_for};

pub use config::{
    BackendChoice, PhysicsChoice, ReferenceConfig, RunConfig, SearchMode, TemperatureRange,
};
pub use manifest::{append_records, read_manifest, truncate_manifest, ManifestRecord};
pub use meta::{baseline_meta_prompt, render_meta_prompt, Exemplar};
pub use select::{beats, select_n};

pub const MANIFEST_FILE: &str = "manifest.jsonl";
pub const STATE_FILE: &str = "state.json";
pub const RUN_INFO_FILE: &str = "run.json";

const TAG_TEMPERATURE: u64 = 1;
const TAG_MESH: u64 = 2;
const TAG_SELECT: u64 = 3;
const TAG_REFERENCE: u64 = 4;

#[derive(Debug, Error)]
pub enum RunError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("backend: {0}")]
    Backend(#[from] BackendError),
    #[error("mesh: {0}")]
    Mesh(String),
    #[error("manifest: {0}")]
    Manifest(String),
    #[error("internal contract violated: {0}")]
    Contract(String),
    #[error(transparent)]
    Semantic(#[from] SemanticError),
    #[error(transparent)]
    Novelty(#[from] NoveltyError),
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error("simulator: {0}")]
    Simulator(#[from] SimulatorError),
    #[error(transparent)]
    Aero(#[from] AeroError),
    #[error(transparent)]
    Objective(#[from] ObjectiveError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl From<MeshError> for RunError {
    fn from(e: MeshError) -> Self {
        Self::Mesh(e.to_string())
    }
}

impl RunError {
    /// Process exit status: 2 configuration, 3 backend, 4 mesh, 5 manifest, 6 empty mask,
    /// 1 anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) | Self::Objective(_) | Self::Aero(_) => 2,
            Self::Simulator(SimulatorError::Config(_)) => 2,
            Self::Backend(_) | Self::Simulator(_) => 3,
            Self::Semantic(SemanticError::Backend(_)) => 3,
            Self::Novelty(NoveltyError::EmptyMask) => 6,
            Self::Novelty(NoveltyError::Backend(_)) => 3,
            Self::Mesh(_) => 4,
            Self::Manifest(_) => 5,
            _ => 1,
        }
    }
}

/// Which remedy a candidate ran out of.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureClass {
    /// The proposed prompt never passed verification.
    Prompt,
    /// Every generated artifact was unrepairable.
    Mesh,
    /// The simulator failed on every regenerated artifact.
    Simulator,
}

/// Failed attempts per failure class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetryCounts {
    pub prompt: u32,
    pub mesh: u32,
    pub simulator: u32,
}

impl RetryCounts {
    pub fn total(&self) -> u32 {
        self.prompt + self.mesh + self.simulator
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    /// `birth_step * N + slot`.
    pub id: u64,
    pub prompt: String,
    /// Relative to the run directory.
    pub mesh_path: Option<String>,
    pub birth_step: usize,
    /// Absent when no artifact could be evaluated.
    pub score: Option<CandidateScore>,
    pub c_drag: Option<f64>,
    pub c_lift: Option<f64>,
    pub domain: Option<DomainScore>,
    /// Reference attaining the minimum novelty.
    pub novelty_reference: Option<usize>,
    pub retries: RetryCounts,
    pub failure: Option<FailureClass>,
    pub flags: Vec<String>,
    pub wall_ms: u64,
}

impl Candidate {
    /// Placeholder for a slot whose retry budget ran out.
    pub fn sentinel(id: u64, birth_step: usize, prompt: String, failure: FailureClass, wall_ms: u64) -> Self {
        Self {
            id,
            prompt,
            mesh_path: None,
            birth_step,
            score: None,
            c_drag: None,
            c_lift: None,
            domain: None,
            novelty_reference: None,
            retries: RetryCounts::default(),
            failure: Some(failure),
            flags: Vec::new(),
            wall_ms,
        }
    }

    pub fn selection_objective(&self) -> f64 {
        match (&self.score, self.failure) {
            (Some(s), None) => s.selection_objective(),
            _ => f64::INFINITY,
        }
    }

    pub fn is_feasible(&self) -> bool {
        self.selection_objective().is_finite()
    }
}

/// Everything needed to continue a run after the last completed step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunState {
    pub step: usize,
    pub exemplars: Vec<Candidate>,
    pub beta: f64,
    pub config: RunConfig,
}

impl RunState {
    pub fn best(&self) -> Option<&Candidate> {
        self.exemplars
            .iter()
            .filter(|c| c.is_feasible())
            .min_by(|a, b| a.selection_objective().total_cmp(&b.selection_objective()).then(a.id.cmp(&b.id)))
    }
}

/// Provenance written next to the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunInfo {
    pub beta: f64,
    /// `config` when fixed by the run configuration, `reference` when derived.
    pub beta_source: String,
    /// Standard-deviation convention used for the derived weight.
    pub sigma_convention: String,
    pub reference_prompt: Option<String>,
    pub reference_f_physical: Vec<f64>,
    pub reference_c_drag: Vec<f64>,
    pub negation_text: String,
    pub config: RunConfig,
}

struct Physical {
    c_drag: f64,
    c_lift: f64,
    flags: Vec<String>,
}

struct Engine<'a> {
    config: &'a RunConfig,
    backends: &'a Backends,
    embedder: CachedEmbedder,
    out_dir: PathBuf,
    references: Vec<ReferenceViews>,
    beta: f64,
    pool: rayon::ThreadPool,
}

/// Starts a fresh run in `out_dir`, replacing any previous manifest there.
pub fn run(config: &RunConfig, backends: &Backends, out_dir: &Path) -> Result<RunState, RunError> {
    config.validate()?;
    std::fs::create_dir_all(out_dir)?;
    for f in [MANIFEST_FILE, STATE_FILE, RUN_INFO_FILE] {
        let _ = std::fs::remove_file(out_dir.join(f));
    }
    let mut engine = Engine::new(config, backends, out_dir)?;
    let info = engine.build_references(false)?;
    write_json_atomic(&out_dir.join(RUN_INFO_FILE), &info)?;
    let mut state = engine.initialize()?;
    engine.run_steps(&mut state)?;
    Ok(state)
}

/// Continues the run checkpointed in `out_dir`, optionally with a new step limit.
pub fn resume(out_dir: &Path, backends: &Backends, max_steps: Option<usize>) -> Result<RunState, RunError> {
    let text = std::fs::read_to_string(out_dir.join(STATE_FILE))
        .map_err(|e| RunError::Manifest(format!("no checkpoint in {}: {e}", out_dir.display())))?;
    let mut state: RunState =
        serde_json::from_str(&text).map_err(|e| RunError::Manifest(format!("corrupt checkpoint: {e}")))?;
    if let Some(m) = max_steps {
        state.config.max_steps = m;
    }
    let config = state.config.clone();
    config.validate()?;
    truncate_manifest(&out_dir.join(MANIFEST_FILE), state.step)?;
    let mut engine = Engine::new(&config, backends, out_dir)?;
    engine.build_references(true)?;
    engine.beta = state.beta;
    info!(step = state.step, "resuming run");
    engine.run_steps(&mut state)?;
    Ok(state)
}

fn write_json_atomic(path: &Path, value: &impl Serialize) -> Result<(), RunError> {
    let tmp = path.with_extension("tmp");
    let bytes = serde_json::to_vec_pretty(value).map_err(|e| RunError::Manifest(e.to_string()))?;
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

fn reference_path(out_dir: &Path, k: usize) -> PathBuf {
    out_dir.join("reference").join(format!("ref_{k}.stl"))
}

impl<'a> Engine<'a> {
    fn new(config: &'a RunConfig, backends: &'a Backends, out_dir: &Path) -> Result<Self, RunError> {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(config.workers)
            .build()
            .map_err(|e| RunError::Config(format!("worker pool: {e}")))?;
        Ok(Self {
            config,
            backends,
            embedder: CachedEmbedder::new(backends.embedder.clone()),
            out_dir: out_dir.to_path_buf(),
            references: Vec::new(),
            beta: config.objective.beta,
            pool,
        })
    }

    /// Repair, then optionally register. `None` when the artifact cannot be made watertight.
    fn prepare_mesh(&self, mesh: TriangleMesh) -> Result<Option<TriangleMesh>, RunError> {
        let outcome = repair_with(&mesh, &self.config.repair);
        if !outcome.watertight || outcome.mesh.is_empty() {
            return Ok(None);
        }
        if self.config.normalize_pose {
            Ok(Some(normalize_pose(&outcome.mesh)?))
        } else {
            Ok(Some(outcome.mesh))
        }
    }

    fn physical(&self, mesh: &TriangleMesh, case: &str) -> Result<Result<Physical, SimulatorError>, RunError> {
        match &self.config.physics {
            PhysicsChoice::Newtonian => {
                let r = newtonian_coefficients(mesh, &self.config.flow)?;
                Ok(Ok(Physical { c_drag: r.c_drag, c_lift: r.c_lift, flags: Vec::new() }))
            }
            PhysicsChoice::External(sim) => {
                let dir = self.out_dir.join("cases").join(case);
                match external_simulate(mesh, &self.config.flow, &dir, sim, &self.config.objective.bounds) {
                    Ok(c) => {
                        let flags = if c.conforming { Vec::new() } else { vec!["simulator_output_clamped".to_string()] };
                        Ok(Ok(Physical { c_drag: c.c_drag, c_lift: c.c_lift, flags }))
                    }
                    Err(e) if e.is_retryable() => Ok(Err(e)),
                    Err(e) => Err(e.into()),
                }
            }
        }
    }

    /// Generates, repairs and simulates one artifact for `prompt`, regenerating with the same
    /// prompt after unrepairable meshes or simulator failures. `Err(class)` when a budget ran out.
    fn artifact(
        &self,
        prompt: &str,
        id: u64,
        sample: usize,
        retries: &mut RetryCounts,
        flags: &mut Vec<String>,
    ) -> Result<Result<(TriangleMesh, Physical), FailureClass>, RunError> {
        let budget = self.config.retry_budget;
        let (mut mesh_failures, mut sim_failures) = (0u32, 0u32);
        for attempt in 0u64.. {
            let seed = derive_seed(&[self.config.seed, TAG_MESH, id, sample as u64, attempt]);
            let mesh = match self.backends.text_to_3d.generate(prompt, seed) {
                Ok(m) => self.prepare_mesh(m)?,
                Err(BackendError::Mesh(_) | BackendError::Decode { .. }) => None,
                Err(e) => return Err(e.into()),
            };
            let Some(mesh) = mesh else {
                mesh_failures += 1;
                retries.mesh += 1;
                warn!(id, attempt, "unrepairable artifact, regenerating");
                if mesh_failures >= budget {
                    return Ok(Err(FailureClass::Mesh));
                }
                continue;
            };
            match self.physical(&mesh, &format!("{id:06}-{sample}-{attempt}"))? {
                Ok(p) => {
                    flags.extend(p.flags.iter().cloned());
                    return Ok(Ok((mesh, p)));
                }
                Err(e) => {
                    sim_failures += 1;
                    retries.simulator += 1;
                    warn!(id, attempt, error = %e, "simulator failed, regenerating");
                    if sim_failures >= budget {
                        return Ok(Err(FailureClass::Simulator));
                    }
                }
            }
        }
        unreachable!("the attempt loop only exits through a return")
    }

    /// Builds the reference set and fixes the novelty weight.
    fn build_references(&mut self, resuming: bool) -> Result<RunInfo, RunError> {
        let config = self.config;
        let dir = self.out_dir.join("reference");
        std::fs::create_dir_all(&dir)?;
        let mut meshes = Vec::new();
        if resuming {
            for k in 0.. {
                let path = reference_path(&self.out_dir, k);
                if !path.exists() {
                    break;
                }
                meshes.push(load_mesh(&path, None)?);
            }
        } else if !config.reference.meshes.is_empty() {
            for path in &config.reference.meshes {
                let mesh = load_mesh(path, None)?;
                let prepared = self
                    .prepare_mesh(mesh)?
                    .ok_or_else(|| RunError::Mesh(format!("reference {} is not repairable", path.display())))?;
                meshes.push(prepared);
            }
        } else {
            let prompt = config.reference_prompt();
            for k in 0..config.reference.count {
                let mut found = None;
                for attempt in 0..config.retry_budget as u64 {
                    let seed = derive_seed(&[config.seed, TAG_REFERENCE, k as u64, attempt]);
                    let mesh = match self.backends.text_to_3d.generate(&prompt, seed) {
                        Ok(m) => self.prepare_mesh(m)?,
                        Err(BackendError::Mesh(_) | BackendError::Decode { .. }) => None,
                        Err(e) => return Err(e.into()),
                    };
                    if mesh.is_some() {
                        found = mesh;
                        break;
                    }
                }
                meshes.push(found.ok_or_else(|| RunError::Mesh(format!("reference {k} could not be generated")))?);
            }
        }
        if meshes.is_empty() {
            return Err(RunError::Config("reference set is empty".into()));
        }

        if !resuming {
            // a resumed run reads these files back, so both paths must see the stored precision
            for (k, mesh) in meshes.iter_mut().enumerate() {
                let path = reference_path(&self.out_dir, k);
                save_mesh(mesh, &path)?;
                *mesh = load_mesh(&path, None)?;
            }
        }
        let mut refs = Vec::with_capacity(meshes.len());
        let (mut phys, mut drags) = (Vec::new(), Vec::new());
        for (k, mesh) in meshes.iter().enumerate() {
            let views = render_multiview(mesh, &config.rig)?;
            let embeddings = embed_views(&views, &self.embedder)?;
            refs.push(ReferenceViews { views, embeddings });
            if config.reference.beta.is_none() && !resuming {
                let p = self.physical(mesh, &format!("ref-{k}"))??;
                drags.push(p.c_drag);
                phys.push(f_physical(p.c_drag, &config.objective.bounds));
            }
        }
        self.references = refs;

        let (beta, source) = match config.reference.beta {
            Some(b) => (b, "config"),
            None if resuming => (self.beta, "reference"),
            None => (compute_beta(&phys).map_err(|e| RunError::Config(format!("reference set: {e}")))?, "reference"),
        };
        self.beta = beta;
        Ok(RunInfo {
            beta,
            beta_source: source.into(),
            sigma_convention: "population".into(),
            reference_prompt: config.reference.meshes.is_empty().then(|| config.reference_prompt()),
            reference_f_physical: phys,
            reference_c_drag: drags,
            negation_text: config.domain.negation(),
            config: config.clone(),
        })
    }

    fn temperature(&self, id: u64, attempt: u32) -> f64 {
        let t = &self.config.temperature;
        let mut rng = rng_for(&[self.config.seed, TAG_TEMPERATURE, id, attempt as u64]);
        if t.max > t.min {
            rng.random_range(t.min..=t.max)
        } else {
            t.min
        }
    }

    /// Proposes, generates and scores the candidate in one slot.
    fn evaluate_slot(&self, step: usize, slot: usize, messages: &[ChatMessage]) -> Result<Candidate, RunError> {
        let started = Instant::now();
        let config = self.config;
        let id = (step * config.population + slot) as u64;
        let elapsed = |started: Instant| if config.record_wall_time { started.elapsed().as_millis() as u64 } else { 0 };
        let mut retries = RetryCounts::default();
        let mut flags = Vec::new();

        let mut prompt = String::new();
        let mut accepted = false;
        for attempt in 0..config.retry_budget {
            prompt = self.backends.chat.chat(messages, self.temperature(id, attempt))?.trim().to_string();
            let check = prompt_feasible(&prompt, &config.domain, config.objective.epsilon, &self.embedder)?;
            if check.feasible() {
                accepted = true;
                break;
            }
            retries.prompt += 1;
            flags.push(format!("prompt_rejected: {}", check.failed_checks().join(", ")));
            warn!(id, attempt, prompt = %prompt, "prompt failed verification");
        }
        if !accepted {
            let mut c = Candidate::sentinel(id, step, prompt, FailureClass::Prompt, elapsed(started));
            c.retries = retries;
            c.flags = flags;
            return Ok(c);
        }

        let label = self.embedder.embed_text(&config.domain.label)?;
        let negation = self.embedder.embed_text(&config.domain.negation())?;
        let samples = config.samples_per_prompt;
        let (mut fp, mut fd, mut nov, mut cd, mut cl) = (0.0, 0.0, 0.0, 0.0, 0.0);
        let mut domain = None;
        let mut nearest = None;
        let mut mesh_path = None;
        for sample in 0..samples {
            let (mesh, phys) = match self.artifact(&prompt, id, sample, &mut retries, &mut flags)? {
                Ok(v) => v,
                Err(class) => {
                    let mut c = Candidate::sentinel(id, step, prompt, class, elapsed(started));
                    c.retries = retries;
                    c.flags = flags;
                    return Ok(c);
                }
            };
            if sample == 0 && config.save_meshes {
                let rel = format!("meshes/{id:06}.stl");
                std::fs::create_dir_all(self.out_dir.join("meshes"))?;
                save_mesh(&mesh, &self.out_dir.join(&rel))?;
                mesh_path = Some(rel);
            }
            let views = render_multiview(&mesh, &config.rig)?;
            let embeddings = embed_views(&views, &self.embedder)?;
            let d = f_domain_from(&embeddings, &label, &negation, config.objective.gamma_temperature)?;
            let (n, k) = min_novelty(&views, &embeddings, &self.references, self.backends.features.as_ref(), config.feature_levels)?;
            fp += f_physical(phys.c_drag, &config.objective.bounds);
            fd += d.f_domain;
            nov += n;
            cd += phys.c_drag;
            cl += phys.c_lift;
            domain.get_or_insert(d);
            nearest.get_or_insert(k);
        }
        let k = samples as f64;
        let weights = crate::objective::ObjectiveWeights { beta: self.beta, ..config.objective.clone() };
        let score = evaluate_candidate(fp / k, fd / k, nov / k, true, &weights);
        if !score.physical_constraint_ok {
            flags.push("physical_constraint".into());
        }
        Ok(Candidate {
            id,
            prompt,
            mesh_path,
            birth_step: step,
            score: Some(score),
            c_drag: Some(cd / k),
            c_lift: Some(cl / k),
            domain,
            novelty_reference: nearest,
            retries,
            failure: None,
            flags,
            wall_ms: elapsed(started),
        })
    }

    fn generation(&self, step: usize, exemplars: &[Candidate]) -> Result<Vec<Candidate>, RunError> {
        let messages = match self.config.mode {
            SearchMode::Refine => {
                let mut sorted: Vec<&Candidate> = exemplars.iter().collect();
                sorted.sort_by(|a, b| a.selection_objective().total_cmp(&b.selection_objective()).then(a.id.cmp(&b.id)));
                let shown: Vec<Exemplar> = sorted
                    .iter()
                    .map(|c| {
                        let o = c.selection_objective();
                        Exemplar { prompt: c.prompt.clone(), objective: o.is_finite().then_some(o) }
                    })
                    .collect();
                render_meta_prompt(&self.config.domain, &shown)
            }
            SearchMode::Baseline => baseline_meta_prompt(&self.config.domain),
        };
        self.pool.install(|| {
            (0..self.config.population)
                .into_par_iter()
                .map(|slot| self.evaluate_slot(step, slot, &messages))
                .collect()
        })
    }

    fn commit(&self, state: &RunState, born: &[Candidate]) -> Result<(), RunError> {
        let survivors: HashSet<u64> = state.exemplars.iter().map(|c| c.id).collect();
        let mode = self.config.objective.domain_term_mode;
        let records: Vec<ManifestRecord> =
            born.iter().map(|c| ManifestRecord::new(c, survivors.contains(&c.id), mode)).collect();
        append_records(&self.out_dir.join(MANIFEST_FILE), &records)?;
        write_json_atomic(&self.out_dir.join(STATE_FILE), state)
    }

    fn initialize(&self) -> Result<RunState, RunError> {
        let initial = self.generation(0, &[])?;
        let feasible = initial.iter().filter(|c| c.is_feasible()).count();
        if feasible < self.config.population {
            warn!(feasible, population = self.config.population, "initial population padded with infeasible candidates");
        }
        let state = RunState { step: 0, exemplars: initial.clone(), beta: self.beta, config: self.config.clone() };
        self.commit(&state, &initial)?;
        info!(best = ?state.best().map(|c| c.selection_objective()), "initialized population");
        Ok(state)
    }

    fn run_steps(&self, state: &mut RunState) -> Result<(), RunError> {
        let started = Instant::now();
        let n = self.config.population;
        let mut best_so_far = state.best().map_or(f64::INFINITY, |c| c.selection_objective());
        let mut stale = 0usize;
        while state.step < self.config.max_steps {
            let step = state.step + 1;
            let born = self.generation(step, &state.exemplars)?;
            let mut pool = state.exemplars.clone();
            pool.extend(born.iter().cloned());
            let mut rng = rng_for(&[self.config.seed, TAG_SELECT, step as u64]);
            let survivors = select_n(pool, n, &mut rng)?;
            let next = RunState { step, exemplars: survivors, beta: state.beta, config: state.config.clone() };
            self.commit(&next, &born)?;
            *state = next;

            let best = state.best().map_or(f64::INFINITY, |c| c.selection_objective());
            info!(step, best, "step complete");
            if best < best_so_far {
                best_so_far = best;
                stale = 0;
            } else {
                stale += 1;
            }
            if self.config.plateau_steps.is_some_and(|p| stale >= p) {
                info!(step, "objective plateau reached, stopping");
                break;
            }
            if self.config.time_budget_secs.is_some_and(|t| started.elapsed().as_secs_f64() >= t) {
                info!(step, "time budget spent, stopping");
                break;
            }
        }
        Ok(())
    }
}

/// Convenience wrapper: connects the configured backends and runs.
pub fn run_with_config(config: &RunConfig, out_dir: &Path) -> Result<RunState, RunError> {
    let backends = config.backend.connect();
    run(config, &backends, out_dir)
}
