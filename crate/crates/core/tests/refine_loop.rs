use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use physgen_core::aero::ExternalSimulator;
use physgen_core::backends::mock::{MockWorld, MockWorldConfig};
use physgen_core::backends::{BackendError, Backends, ChatBackend, ChatMessage, TextTo3d};
use physgen_core::mesh::primitives::cuboid;
use physgen_core::mesh::{Point, TriangleMesh};
use physgen_core::refine::{
    self, baseline_meta_prompt, read_manifest, FailureClass, ManifestRecord, PhysicsChoice, RunConfig, RunError,
    RunState, SearchMode, MANIFEST_FILE, RUN_INFO_FILE, STATE_FILE,
};

fn small(seed: u64) -> RunConfig {
    RunConfig { population: 4, max_steps: 3, seed, ..RunConfig::mock() }
}

fn world() -> Arc<MockWorld> {
    Arc::new(MockWorld::new(MockWorldConfig::default()))
}

fn with(chat: Option<Arc<dyn ChatBackend>>, text_to_3d: Option<Arc<dyn TextTo3d>>) -> Backends {
    let w = world();
    Backends {
        chat: chat.unwrap_or_else(|| w.clone()),
        text_to_3d: text_to_3d.unwrap_or_else(|| w.clone()),
        embedder: w.clone(),
        features: w,
    }
}

fn manifest(dir: &Path) -> Vec<ManifestRecord> {
    read_manifest(&dir.join(MANIFEST_FILE)).unwrap()
}

fn read(dir: &Path, file: &str) -> String {
    std::fs::read_to_string(dir.join(file)).unwrap()
}

fn open_box() -> TriangleMesh {
    let b = cuboid(Point::new(-1.0, -0.4, -0.3), Point::new(1.0, 0.4, 0.3));
    TriangleMesh::new(b.vertices().to_vec(), b.faces()[2..].to_vec()).unwrap()
}

/// Answers every proposal with a prompt that breaks the template.
struct OffTemplateChat;

impl ChatBackend for OffTemplateChat {
    fn chat(&self, _: &[ChatMessage], _: f64) -> Result<String, BackendError> {
        Ok("A boat in the shape of a wedge".into())
    }
}

/// Records every meta prompt before delegating.
struct RecordingChat {
    inner: Arc<MockWorld>,
    seen: Mutex<Vec<Vec<ChatMessage>>>,
}

impl ChatBackend for RecordingChat {
    fn chat(&self, messages: &[ChatMessage], t: f64) -> Result<String, BackendError> {
        self.seen.lock().unwrap().push(messages.to_vec());
        self.inner.chat(messages, t)
    }
}

/// Every other generated artifact is an open box that cannot be repaired.
struct FlakyMesher {
    inner: Arc<MockWorld>,
    calls: AtomicUsize,
}

impl TextTo3d for FlakyMesher {
    fn generate(&self, prompt: &str, seed: u64) -> Result<TriangleMesh, BackendError> {
        if self.calls.fetch_add(1, Ordering::SeqCst).is_multiple_of(2) {
            Ok(open_box())
        } else {
            self.inner.generate(prompt, seed)
        }
    }
}

struct BrokenChat;

impl ChatBackend for BrokenChat {
    fn chat(&self, _: &[ChatMessage], _: f64) -> Result<String, BackendError> {
        Err(BackendError::Protocol("model went away".into()))
    }
}

fn script_sim(dir: &Path, body: &str) -> PhysicsChoice {
    let path = dir.join("solve.sh");
    std::fs::write(&path, body).unwrap();
    PhysicsChoice::External(ExternalSimulator::new(vec!["sh".into(), path.to_string_lossy().into_owned()], 10.0))
}

#[test]
fn identical_configs_give_byte_identical_runs() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    refine::run_with_config(&small(5), a.path()).unwrap();
    refine::run_with_config(&small(5), b.path()).unwrap();
    for f in [MANIFEST_FILE, STATE_FILE, RUN_INFO_FILE] {
        assert_eq!(read(a.path(), f), read(b.path(), f), "{f} differs");
    }
    let c = tempfile::tempdir().unwrap();
    refine::run_with_config(&small(6), c.path()).unwrap();
    assert_ne!(read(a.path(), MANIFEST_FILE), read(c.path(), MANIFEST_FILE));
}

#[test]
fn worker_count_does_not_change_results() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    refine::run_with_config(&RunConfig { workers: 1, ..small(2) }, a.path()).unwrap();
    refine::run_with_config(&RunConfig { workers: 3, ..small(2) }, b.path()).unwrap();
    assert_eq!(read(a.path(), MANIFEST_FILE), read(b.path(), MANIFEST_FILE));
}

#[test]
fn population_size_is_kept_every_step() {
    let dir = tempfile::tempdir().unwrap();
    let config = small(1);
    let state = refine::run_with_config(&config, dir.path()).unwrap();
    assert_eq!(state.exemplars.len(), config.population);
    let records = manifest(dir.path());
    assert_eq!(records.len(), config.population * (config.max_steps + 1));
    for step in 0..=config.max_steps {
        let born: Vec<_> = records.iter().filter(|r| r.step == step).collect();
        assert_eq!(born.len(), config.population);
        let ids: Vec<u64> = born.iter().map(|r| r.id).collect();
        let want: Vec<u64> = (0..config.population as u64).map(|s| (step * config.population) as u64 + s).collect();
        assert_eq!(ids, want);
    }
    // survivors of the last step are exactly the final exemplars that were born then
    let last: Vec<u64> = records.iter().filter(|r| r.step == config.max_steps && r.selected).map(|r| r.id).collect();
    let kept: Vec<u64> =
        state.exemplars.iter().filter(|c| c.birth_step == config.max_steps).map(|c| c.id).collect();
    assert_eq!(last, kept);
}

#[test]
fn best_objective_never_regresses() {
    let dir = tempfile::tempdir().unwrap();
    refine::run_with_config(&RunConfig { max_steps: 5, ..small(9) }, dir.path()).unwrap();
    let report = physgen_core::report::RunReport::from_manifest(&manifest(dir.path()), None);
    let bests: Vec<f64> = report.steps.iter().filter_map(|s| s.best).collect();
    assert!(bests.windows(2).all(|w| w[1] <= w[0]), "{bests:?}");
}

#[test]
fn zero_steps_keeps_only_the_initial_population() {
    let dir = tempfile::tempdir().unwrap();
    let state = refine::run_with_config(&RunConfig { max_steps: 0, ..small(3) }, dir.path()).unwrap();
    assert_eq!(state.step, 0);
    let records = manifest(dir.path());
    assert_eq!(records.len(), 4);
    assert!(records.iter().all(|r| r.step == 0 && r.selected));
}

#[test]
fn resume_matches_an_uninterrupted_run() {
    let (full, part) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let config = RunConfig { max_steps: 4, ..small(4) };
    let backends = config.backend.connect();
    refine::run(&config, &backends, full.path()).unwrap();
    refine::run(&RunConfig { max_steps: 2, ..config.clone() }, &backends, part.path()).unwrap();

    // a crash after step 3 was appended but before its state was written, mid-way into step 4
    let full_text = read(full.path(), MANIFEST_FILE);
    let step3: String = full_text.lines().skip(3 * 4).take(4).map(|l| format!("{l}\n")).collect();
    let torn = &full_text.lines().nth(4 * 4).unwrap()[..40];
    let mut f = std::fs::OpenOptions::new().append(true).open(part.path().join(MANIFEST_FILE)).unwrap();
    std::io::Write::write_all(&mut f, format!("{step3}{torn}").as_bytes()).unwrap();
    drop(f);

    let state = refine::resume(part.path(), &backends, Some(4)).unwrap();
    assert_eq!(state.step, 4);
    assert_eq!(read(full.path(), MANIFEST_FILE), read(part.path(), MANIFEST_FILE));
    assert_eq!(read(full.path(), STATE_FILE), read(part.path(), STATE_FILE));
}

#[test]
fn resume_without_checkpoint_is_a_manifest_error() {
    let dir = tempfile::tempdir().unwrap();
    let err = refine::resume(dir.path(), &RunConfig::mock().backend.connect(), None).unwrap_err();
    assert_eq!(err.exit_code(), 5, "{err}");
}

#[test]
fn rejected_prompts_become_sentinels_after_the_budget() {
    let dir = tempfile::tempdir().unwrap();
    let backends = with(Some(Arc::new(OffTemplateChat)), None);
    let config = RunConfig { max_steps: 1, ..small(0) };
    let state = refine::run(&config, &backends, dir.path()).unwrap();
    assert!(state.best().is_none());
    let records = manifest(dir.path());
    assert_eq!(records.len(), 8);
    for r in &records {
        assert_eq!(r.failure, Some(FailureClass::Prompt));
        assert_eq!(r.retries, config.retry_budget);
        assert!(r.objective.is_none() && !r.feasible);
        assert_eq!(r.flags.len(), 3);
        assert!(r.flags[0].contains("template prefix") && r.flags[0].contains("full stop"), "{:?}", r.flags);
    }
    // the newer sentinels win the all-infinite tournament
    assert!(state.exemplars.iter().all(|c| c.birth_step == 1));
}

#[test]
fn an_unrepairable_artifact_is_regenerated_with_the_same_prompt() {
    let dir = tempfile::tempdir().unwrap();
    let mesher = Arc::new(FlakyMesher { inner: world(), calls: AtomicUsize::new(0) });
    let backends = with(None, Some(mesher));
    let config = RunConfig { max_steps: 1, workers: 1, ..small(0) };
    refine::run(&config, &backends, dir.path()).unwrap();
    let records = manifest(dir.path());
    let evaluated: Vec<_> = records.iter().filter(|r| r.failure != Some(FailureClass::Prompt)).collect();
    assert!(!evaluated.is_empty());
    for r in evaluated {
        assert_eq!(r.regenerations, 1, "{r:?}");
        assert_eq!(r.failure, None);
        assert!(r.c_drag.is_some());
    }
}

#[test]
fn a_budget_of_unrepairable_artifacts_gives_a_mesh_sentinel() {
    struct AlwaysOpen;
    impl TextTo3d for AlwaysOpen {
        fn generate(&self, _: &str, _: u64) -> Result<TriangleMesh, BackendError> {
            Ok(open_box())
        }
    }
    let dir = tempfile::tempdir().unwrap();
    let err = refine::run(&small(0), &with(None, Some(Arc::new(AlwaysOpen))), dir.path()).unwrap_err();
    // the reference set cannot be built either
    assert!(matches!(err, RunError::Mesh(_)), "{err}");
    assert_eq!(err.exit_code(), 4);
}

#[test]
fn simulator_failures_regenerate_the_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = RunConfig { max_steps: 1, ..small(0) };
    config.reference.beta = Some(0.0);
    config.physics = script_sim(
        dir.path(),
        r#"case "$(basename "$PWD")" in *-*-0) echo crash >&2; exit 1;; esac
echo '{"c_drag": 0.3, "c_lift": 0.0}' > coefficients.json
"#,
    );
    let out = dir.path().join("run");
    refine::run_with_config(&config, &out).unwrap();
    let evaluated: Vec<_> = manifest(&out).into_iter().filter(|r| r.failure != Some(FailureClass::Prompt)).collect();
    assert!(!evaluated.is_empty());
    for r in &evaluated {
        assert_eq!((r.regenerations, r.c_drag), (1, Some(0.3)), "{r:?}");
        assert!(out.join("cases").join(format!("{:06}-0-0", r.id)).is_dir());
        assert!(out.join("cases").join(format!("{:06}-0-1", r.id)).join("coefficients.json").is_file());
    }
}

#[test]
fn an_exhausted_simulator_budget_gives_a_simulator_sentinel() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = RunConfig { max_steps: 0, ..small(0) };
    config.reference.beta = Some(0.0);
    config.physics = script_sim(dir.path(), "exit 9\n");
    let out = dir.path().join("run");
    refine::run_with_config(&config, &out).unwrap();
    let failed: Vec<_> =
        manifest(&out).into_iter().filter(|r| r.failure == Some(FailureClass::Simulator)).collect();
    assert!(!failed.is_empty());
    for r in failed {
        assert_eq!(r.regenerations, config.retry_budget);
        assert!(r.objective.is_none());
    }
}

#[test]
fn clamped_simulator_output_is_flagged() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = RunConfig { max_steps: 0, ..small(0) };
    config.reference.beta = Some(0.0);
    config.physics = script_sim(dir.path(), "echo '{\"c_drag\": NaN, \"c_lift\": 0}' > coefficients.json\n");
    let out = dir.path().join("run");
    refine::run_with_config(&config, &out).unwrap();
    let evaluated: Vec<_> = manifest(&out).into_iter().filter(|r| r.c_drag.is_some()).collect();
    assert!(!evaluated.is_empty());
    for r in evaluated {
        assert_eq!(r.c_drag, Some(config.objective.bounds.b));
        assert_eq!(r.f_physical, Some(1.0));
        assert!(r.flags.iter().any(|f| f == "simulator_output_clamped"));
    }
}

#[test]
fn backend_outages_abort_with_a_backend_error() {
    let dir = tempfile::tempdir().unwrap();
    let err = refine::run(&small(0), &with(Some(Arc::new(BrokenChat)), None), dir.path()).unwrap_err();
    assert!(matches!(err, RunError::Backend(_)));
    assert_eq!(err.exit_code(), 3);
}

#[test]
fn baseline_mode_never_shows_exemplars() {
    let dir = tempfile::tempdir().unwrap();
    let chat = Arc::new(RecordingChat { inner: world(), seen: Mutex::new(Vec::new()) });
    let config = RunConfig { mode: SearchMode::Baseline, max_steps: 2, ..small(0) };
    refine::run(&config, &with(Some(chat.clone()), None), dir.path()).unwrap();
    let expected = baseline_meta_prompt(&config.domain);
    let seen = chat.seen.lock().unwrap();
    assert!(!seen.is_empty());
    assert!(seen.iter().all(|m| *m == expected));
    assert!(expected.iter().any(|m| m.text.contains("Create a prompt that starts with \"A Car in the shape of\"")));
}

#[test]
fn refine_mode_shows_the_population_best_first() {
    let dir = tempfile::tempdir().unwrap();
    let chat = Arc::new(RecordingChat { inner: world(), seen: Mutex::new(Vec::new()) });
    let config = RunConfig { max_steps: 1, ..small(0) };
    refine::run(&config, &with(Some(chat.clone()), None), dir.path()).unwrap();
    let state: RunState = serde_json::from_str(&read(dir.path(), STATE_FILE)).unwrap();
    let seen = chat.seen.lock().unwrap();
    let last = seen.last().unwrap().last().unwrap().text.clone();
    assert!(last.contains("Exemplars (prompt, score):") && !last.contains("none yet"));
    let records = manifest(dir.path());
    let mut initial: Vec<_> = records.iter().filter(|r| r.step == 0).collect();
    initial.sort_by(|a, b| {
        let key = |r: &ManifestRecord| r.objective.unwrap_or(f64::INFINITY);
        key(a).total_cmp(&key(b)).then(a.id.cmp(&b.id))
    });
    let positions: Vec<usize> = initial.iter().map(|r| last.find(&format!("\"{}\"", r.prompt)).unwrap()).collect();
    assert!(positions.windows(2).all(|w| w[0] <= w[1]), "{last}");
    assert_eq!(state.step, 1);
}

#[test]
fn run_info_records_the_derived_weight() {
    let dir = tempfile::tempdir().unwrap();
    refine::run_with_config(&RunConfig { max_steps: 0, ..small(0) }, dir.path()).unwrap();
    let info: serde_json::Value = serde_json::from_str(&read(dir.path(), RUN_INFO_FILE)).unwrap();
    assert_eq!(info["beta_source"], "reference");
    assert_eq!(info["sigma_convention"], "population");
    assert_eq!(info["negation_text"], "not a Car");
    let phys: Vec<f64> = serde_json::from_value(info["reference_f_physical"].clone()).unwrap();
    let beta = physgen_core::objective::compute_beta(&phys).unwrap();
    assert_eq!(info["beta"].as_f64().unwrap(), beta);
}

