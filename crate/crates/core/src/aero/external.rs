//! Case-directory exchange with an external flow solver.
//!
//! The case directory receives `mesh.stl` (binary) and `flow.json`; the configured command runs
//! inside it and must leave `coefficients.json` with `{"c_drag": .., "c_lift": ..}` behind.

use std::collections::HashSet;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::sync::{Arc, Condvar, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;
use tracing::{debug, warn};

use super::{FlowConditions, PhysicsBounds};
use crate::mesh::{encode_stl_binary, TriangleMesh};

pub const COEFFICIENTS_FILE: &str = "coefficients.json";

#[derive(Debug, Error)]
pub enum SimulatorError {
    #[error("simulator timed out after {0:?}")]
    Timeout(Duration),
    #[error("simulator exited with {code:?}: {stderr}")]
    NonZeroExit { code: Option<i32>, stderr: String },
    #[error("unparsable simulator output: {0}")]
    Unparsable(String),
    #[error("simulator misconfigured: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl SimulatorError {
    /// Timeouts, crashes and garbage output warrant regenerating the artifact; configuration
    /// and filesystem problems do not.
    pub fn is_retryable(&self) -> bool {
        matches!(
            self,
            Self::Timeout(_) | Self::NonZeroExit { .. } | Self::Unparsable(_)
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExternalSimulator {
    /// Program followed by its arguments.
    pub command: Vec<String>,
    pub timeout_secs: f64,
    /// Files copied into every case directory before the run.
    #[serde(default)]
    pub template_dir: Option<PathBuf>,
    /// Maximum number of concurrently running cases.
    #[serde(default = "default_jobs")]
    pub max_jobs: usize,
    #[serde(skip)]
    slots: JobSlots,
}

fn default_jobs() -> usize {
    1
}

impl ExternalSimulator {
    pub fn new(command: Vec<String>, timeout_secs: f64) -> Self {
        Self {
            command,
            timeout_secs,
            template_dir: None,
            max_jobs: 1,
            slots: JobSlots::default(),
        }
    }
}

/// Coefficients read back from a case, after bounding.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExternalCoefficients {
    pub c_drag: f64,
    pub c_lift: f64,
    /// False when a value was missing, non-finite or outside the bounds and had to be clamped.
    pub conforming: bool,
}

/// Limits concurrent cases and never lets two runs share a directory.
#[derive(Debug, Clone, Default)]
struct JobSlots(Arc<(Mutex<(usize, HashSet<PathBuf>)>, Condvar)>);

impl PartialEq for JobSlots {
    fn eq(&self, _: &Self) -> bool {
        true
    }
}

struct SlotGuard<'a> {
    slots: &'a JobSlots,
    dir: PathBuf,
}

impl JobSlots {
    fn acquire(&self, dir: &Path, max_jobs: usize) -> SlotGuard<'_> {
        let (lock, cv) = &*self.0;
        let mut state = lock.lock().unwrap_or_else(|e| e.into_inner());
        while state.0 >= max_jobs.max(1) || state.1.contains(dir) {
            state = cv.wait(state).unwrap_or_else(|e| e.into_inner());
        }
        state.0 += 1;
        state.1.insert(dir.to_path_buf());
        SlotGuard { slots: self, dir: dir.to_path_buf() }
    }
}

impl Drop for SlotGuard<'_> {
    fn drop(&mut self) {
        let (lock, cv) = &*self.slots.0;
        let mut state = lock.lock().unwrap_or_else(|e| e.into_inner());
        state.0 -= 1;
        state.1.remove(&self.dir);
        cv.notify_all();
    }
}

/// Prepares `case_dir`, runs the simulator and parses its coefficients.
pub fn external_simulate(
    mesh: &TriangleMesh,
    flow: &FlowConditions,
    case_dir: &Path,
    sim: &ExternalSimulator,
    bounds: &PhysicsBounds,
) -> Result<ExternalCoefficients, SimulatorError> {
    let (program, args) = sim
        .command
        .split_first()
        .ok_or_else(|| SimulatorError::Config("empty command".into()))?;
    if !(sim.timeout_secs > 0.0) {
        return Err(SimulatorError::Config("timeout must be positive".into()));
    }
    std::fs::create_dir_all(case_dir)?;
    let _slot = sim.slots.acquire(case_dir, sim.max_jobs);

    if let Some(template) = &sim.template_dir {
        copy_tree(template, case_dir)?;
    }
    let _ = std::fs::remove_file(case_dir.join(COEFFICIENTS_FILE));
    std::fs::write(case_dir.join("mesh.stl"), encode_stl_binary(mesh))?;
    let flow_json = serde_json::to_vec_pretty(flow).map_err(std::io::Error::other)?;
    std::fs::write(case_dir.join("flow.json"), flow_json)?;

    let timeout = Duration::from_secs_f64(sim.timeout_secs);
    let mut child = Command::new(program)
        .args(args)
        .current_dir(case_dir)
        .stdin(Stdio::null())
        .stdout(Stdio::null())
        .stderr(Stdio::piped())
        .spawn()
        .map_err(|e| SimulatorError::Config(format!("cannot start {program}: {e}")))?;
    // drained concurrently so a chatty solver cannot block on a full pipe
    let stderr_reader = child.stderr.take().map(|mut pipe| {
        std::thread::spawn(move || {
            let mut text = String::new();
            let _ = pipe.read_to_string(&mut text);
            text
        })
    });

    let started = Instant::now();
    let status = loop {
        if let Some(status) = child.try_wait()? {
            break status;
        }
        if started.elapsed() >= timeout {
            let _ = child.kill();
            let _ = child.wait();
            warn!(case = %case_dir.display(), "simulator timed out");
            return Err(SimulatorError::Timeout(timeout));
        }
        std::thread::sleep(Duration::from_millis(5));
    };
    if !status.success() {
        let stderr = stderr_reader.and_then(|h| h.join().ok()).unwrap_or_default();
        let tail: String = stderr.trim().chars().rev().take(400).collect::<Vec<_>>().into_iter().rev().collect();
        return Err(SimulatorError::NonZeroExit { code: status.code(), stderr: tail });
    }
    debug!(case = %case_dir.display(), elapsed = ?started.elapsed(), "simulator finished");

    let text = std::fs::read_to_string(case_dir.join(COEFFICIENTS_FILE))
        .map_err(|e| SimulatorError::Unparsable(format!("{COEFFICIENTS_FILE}: {e}")))?;
    parse_coefficients(&text, bounds)
}

/// Reads the coefficient file. Bare `NaN`/`Infinity` tokens, `null` and numeric strings are
/// accepted; anything non-finite or out of bounds is clamped and marked non-conforming.
pub fn parse_coefficients(text: &str, bounds: &PhysicsBounds) -> Result<ExternalCoefficients, SimulatorError> {
    let normalized = text
        .replace("-Infinity", "\"-inf\"")
        .replace("Infinity", "\"inf\"")
        .replace("NaN", "\"nan\"");
    let value: Value =
        serde_json::from_str(&normalized).map_err(|e| SimulatorError::Unparsable(e.to_string()))?;
    let obj = value
        .as_object()
        .ok_or_else(|| SimulatorError::Unparsable("expected a JSON object".into()))?;
    let field = |name: &str| -> Result<f64, SimulatorError> {
        match obj.get(name) {
            None => Err(SimulatorError::Unparsable(format!("missing field {name}"))),
            Some(Value::Null) => Ok(f64::NAN),
            Some(Value::Number(n)) => Ok(n.as_f64().unwrap_or(f64::NAN)),
            Some(Value::String(s)) => s
                .trim()
                .parse::<f64>()
                .map_err(|_| SimulatorError::Unparsable(format!("{name} is not a number: {s:?}"))),
            Some(other) => Err(SimulatorError::Unparsable(format!("{name} has type {other}"))),
        }
    };
    let (drag, lift) = (field("c_drag")?, field("c_lift")?);

    let mut conforming = true;
    let c_drag = if !drag.is_finite() {
        conforming = false;
        bounds.b
    } else if drag < bounds.a || drag > bounds.b {
        conforming = false;
        drag.clamp(bounds.a, bounds.b)
    } else {
        drag
    };
    let c_lift = if lift.is_finite() {
        lift
    } else {
        conforming = false;
        0.0
    };
    if !conforming {
        warn!(drag, lift, "non-conforming simulator coefficients clamped");
    }
    Ok(ExternalCoefficients { c_drag, c_lift, conforming })
}

fn copy_tree(from: &Path, to: &Path) -> std::io::Result<()> {
    for entry in std::fs::read_dir(from)? {
        let entry = entry?;
        let target = to.join(entry.file_name());
        if entry.file_type()?.is_dir() {
            std::fs::create_dir_all(&target)?;
            copy_tree(&entry.path(), &target)?;
        } else {
            std::fs::copy(entry.path(), target)?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_plain_values_exactly() {
        let c = parse_coefficients(r#"{"c_drag": 0.3125, "c_lift": -0.01}"#, &PhysicsBounds::default()).unwrap();
        assert_eq!(c, ExternalCoefficients { c_drag: 0.3125, c_lift: -0.01, conforming: true });
    }

    #[test]
    fn nan_is_clamped_to_worst_edge() {
        for text in [
            r#"{"c_drag": NaN, "c_lift": 0.0}"#,
            r#"{"c_drag": null, "c_lift": 0.0}"#,
            r#"{"c_drag": "nan", "c_lift": 0.0}"#,
            r#"{"c_drag": Infinity, "c_lift": 0.0}"#,
        ] {
            let c = parse_coefficients(text, &PhysicsBounds::default()).unwrap();
            assert_eq!(c.c_drag, 1.0, "{text}");
            assert!(!c.conforming);
        }
        let c = parse_coefficients(r#"{"c_drag": -7, "c_lift": 0}"#, &PhysicsBounds::default()).unwrap();
        assert_eq!((c.c_drag, c.conforming), (-1.0, false));
    }

    #[test]
    fn garbage_is_unparsable() {
        let b = PhysicsBounds::default();
        assert!(matches!(parse_coefficients("drag=1", &b), Err(SimulatorError::Unparsable(_))));
        assert!(matches!(parse_coefficients(r#"{"c_lift": 1}"#, &b), Err(SimulatorError::Unparsable(_))));
        assert!(parse_coefficients("[1]", &b).unwrap_err().is_retryable());
    }
}
