//! Append-only JSON-lines run manifest, one record per generated candidate.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Candidate, FailureClass, RunError};
use crate::objective::DomainTermMode;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub step: usize,
    pub id: u64,
    pub prompt: String,
    pub mesh_path: Option<String>,
    pub f_physical: Option<f64>,
    pub f_domain: Option<f64>,
    pub f_novelty: Option<f64>,
    /// Ranking objective; `null` for infeasible candidates, which rank last.
    pub objective: Option<f64>,
    /// Prompt passed verification and an artifact was evaluated.
    pub feasible: bool,
    pub physical_ok: bool,
    /// Survived the selection of its birth step.
    pub selected: bool,
    pub birth_step: usize,
    pub retries: u32,
    pub wall_ms: u64,
    /// Artifacts regenerated with the same prompt (unrepairable meshes and simulator failures).
    pub regenerations: u32,
    /// Weighted sum before feasibility is applied.
    pub raw_objective: Option<f64>,
    pub c_drag: Option<f64>,
    pub c_lift: Option<f64>,
    pub failure: Option<FailureClass>,
    pub flags: Vec<String>,
    pub domain_term_mode: DomainTermMode,
}

impl ManifestRecord {
    pub fn new(c: &Candidate, selected: bool, mode: DomainTermMode) -> Self {
        let score = c.score.as_ref();
        let objective = c.selection_objective();
        Self {
            step: c.birth_step,
            id: c.id,
            prompt: c.prompt.clone(),
            mesh_path: c.mesh_path.clone(),
            f_physical: score.map(|s| s.f_physical),
            f_domain: score.map(|s| s.f_domain),
            f_novelty: score.map(|s| s.f_novelty),
            objective: objective.is_finite().then_some(objective),
            feasible: score.is_some_and(|s| s.prompt_feasible) && c.failure.is_none(),
            physical_ok: score.is_some_and(|s| s.physical_constraint_ok),
            selected,
            birth_step: c.birth_step,
            retries: c.retries.total(),
            wall_ms: c.wall_ms,
            regenerations: c.retries.mesh + c.retries.simulator,
            raw_objective: score.map(|s| s.objective),
            c_drag: c.c_drag,
            c_lift: c.c_lift,
            failure: c.failure,
            flags: c.flags.clone(),
            domain_term_mode: mode,
        }
    }
}

/// Appends records and syncs them to disk.
pub fn append_records(path: &Path, records: &[ManifestRecord]) -> Result<(), RunError> {
    let mut file = OpenOptions::new().create(true).append(true).open(path)?;
    let mut buf = Vec::new();
    for r in records {
        serde_json::to_writer(&mut buf, r).map_err(|e| RunError::Manifest(e.to_string()))?;
        buf.push(b'\n');
    }
    file.write_all(&buf)?;
    file.sync_data()?;
    Ok(())
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestRecord>, RunError> {
    let file = File::open(path).map_err(|e| RunError::Manifest(format!("{}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line)
            .map_err(|e| RunError::Manifest(format!("{} line {}: {e}", path.display(), i + 1)))?;
        out.push(record);
    }
    Ok(out)
}

/// Drops records born after `last_step`, along with any torn final line.
pub fn truncate_manifest(path: &Path, last_step: usize) -> Result<(), RunError> {
    let text = match std::fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => String::new(),
        Err(e) => return Err(e.into()),
    };
    let mut kept = String::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<ManifestRecord>(line) {
            Ok(r) if r.step <= last_step => {
                kept.push_str(line);
                kept.push('\n');
            }
            Ok(_) => {}
            Err(_) if !text.ends_with('\n') && i + 1 == text.lines().count() => {}
            Err(e) => return Err(RunError::Manifest(format!("{} line {}: {e}", path.display(), i + 1))),
        }
    }
    std::fs::write(path, kept)?;
    Ok(())
}
