use std::path::{Path, PathBuf};

use physgen_core::aero::{external_simulate, ExternalSimulator, FlowConditions, PhysicsBounds, SimulatorError};
use physgen_core::mesh::primitives::unit_cube;
use physgen_core::mesh::{load_mesh, MeshFormat};

fn script(dir: &Path, body: &str) -> ExternalSimulator {
    let path = dir.join("solve.sh");
    std::fs::write(&path, format!("set -e\n{body}\n")).unwrap();
    ExternalSimulator::new(vec!["sh".into(), path.to_string_lossy().into_owned()], 10.0)
}

fn simulate(sim: &ExternalSimulator, case: &Path) -> Result<physgen_core::aero::ExternalCoefficients, SimulatorError> {
    external_simulate(&unit_cube(), &FlowConditions::default(), case, sim, &PhysicsBounds::default())
}

fn case(dir: &Path) -> PathBuf {
    dir.join("case")
}

#[test]
fn fixed_coefficients_are_read_back_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let sim = script(
        dir.path(),
        r#"test -s mesh.stl
grep -q velocity flow.json
echo '{"c_drag": 0.3125, "c_lift": -0.015625}' > coefficients.json"#,
    );
    let c = simulate(&sim, &case(dir.path())).unwrap();
    assert_eq!((c.c_drag, c.c_lift, c.conforming), (0.3125, -0.015625, true));
    let written = load_mesh(&case(dir.path()).join("mesh.stl"), Some(MeshFormat::BinaryStl)).unwrap();
    assert_eq!(written.face_count(), unit_cube().face_count());
}

#[test]
fn nonzero_exit_is_retryable_and_keeps_stderr() {
    let dir = tempfile::tempdir().unwrap();
    let sim = script(dir.path(), "echo 'solver diverged' >&2\nexit 7");
    let err = simulate(&sim, &case(dir.path())).unwrap_err();
    match &err {
        SimulatorError::NonZeroExit { code, stderr } => {
            assert_eq!(*code, Some(7));
            assert!(stderr.contains("solver diverged"));
        }
        other => panic!("unexpected {other}"),
    }
    assert!(err.is_retryable());
}

#[test]
fn nan_drag_is_clamped_to_the_worst_bound() {
    let dir = tempfile::tempdir().unwrap();
    let sim = script(dir.path(), r#"echo '{"c_drag": NaN, "c_lift": 0.0}' > coefficients.json"#);
    let c = simulate(&sim, &case(dir.path())).unwrap();
    assert_eq!(c.c_drag, PhysicsBounds::default().b);
    assert!(!c.conforming);
}

#[test]
fn missing_output_is_unparsable() {
    let dir = tempfile::tempdir().unwrap();
    let sim = script(dir.path(), "true");
    let err = simulate(&sim, &case(dir.path())).unwrap_err();
    assert!(matches!(err, SimulatorError::Unparsable(_)), "{err}");
    assert!(err.is_retryable());
}

#[test]
fn stale_output_from_an_earlier_run_is_not_reused() {
    let dir = tempfile::tempdir().unwrap();
    let ok = script(dir.path(), r#"echo '{"c_drag": 0.5, "c_lift": 0}' > coefficients.json"#);
    simulate(&ok, &case(dir.path())).unwrap();
    let silent = script(dir.path(), "true");
    assert!(matches!(simulate(&silent, &case(dir.path())), Err(SimulatorError::Unparsable(_))));
}

#[test]
fn slow_solver_times_out() {
    let dir = tempfile::tempdir().unwrap();
    let mut sim = script(dir.path(), "exec sleep 5");
    sim.timeout_secs = 0.2;
    let started = std::time::Instant::now();
    let err = simulate(&sim, &case(dir.path())).unwrap_err();
    assert!(matches!(err, SimulatorError::Timeout(_)), "{err}");
    assert!(err.is_retryable());
    assert!(started.elapsed().as_secs_f64() < 3.0);
}

#[test]
fn loud_solver_does_not_stall() {
    let dir = tempfile::tempdir().unwrap();
    let sim = script(
        dir.path(),
        r#"i=0; while [ $i -lt 3000 ]; do echo "residual line $i of a long solver log" >&2; i=$((i+1)); done
echo '{"c_drag": 0.25, "c_lift": 0}' > coefficients.json"#,
    );
    assert_eq!(simulate(&sim, &case(dir.path())).unwrap().c_drag, 0.25);
}

#[test]
fn template_files_are_copied_into_the_case() {
    let dir = tempfile::tempdir().unwrap();
    let template = dir.path().join("template");
    std::fs::create_dir_all(template.join("system")).unwrap();
    std::fs::write(template.join("system").join("drag.txt"), "0.125").unwrap();
    let mut sim = script(
        dir.path(),
        r#"echo "{\"c_drag\": $(cat system/drag.txt), \"c_lift\": 0}" > coefficients.json"#,
    );
    sim.template_dir = Some(template);
    assert_eq!(simulate(&sim, &case(dir.path())).unwrap().c_drag, 0.125);
}

#[test]
fn misconfiguration_is_not_retryable() {
    let dir = tempfile::tempdir().unwrap();
    let missing = ExternalSimulator::new(vec!["/no/such/solver".into()], 1.0);
    let err = simulate(&missing, &case(dir.path())).unwrap_err();
    assert!(matches!(err, SimulatorError::Config(_)));
    assert!(!err.is_retryable());
    let empty = ExternalSimulator::new(Vec::new(), 1.0);
    assert!(!simulate(&empty, &case(dir.path())).unwrap_err().is_retryable());
}
