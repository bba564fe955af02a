use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::anyhow;
use clap::{Parser, Subcommand};
use physgen_core::aero::{f_physical, newtonian_coefficients};
use physgen_core::mesh::{diagnose, load_mesh, normalize_pose, repair, TriangleMesh, Vector};
use physgen_core::novelty::{export_heatmaps, f_novelty, NoveltyError};
use physgen_core::objective::{format_percent, improvement_percent};
use physgen_core::refine::{self, read_manifest, RunConfig, RunError, MANIFEST_FILE};
use physgen_core::render::{export_multiview, render_multiview};
use physgen_core::report::{curve_svg, manifest_dpar, RunReport};
use serde_json::json;
use tracing_subscriber::EnvFilter;

const EXIT_CONFIG: u8 = 2;
const EXIT_BACKEND: u8 = 3;
const EXIT_MESH: u8 = 4;
const EXIT_MANIFEST: u8 = 5;
const EXIT_MASK: u8 = 6;

#[derive(Parser)]
#[command(name = "physgen", version, about = "Prompt refinement toward low-drag, novel text-to-3D artifacts")]
struct Cli {
    /// Run configuration (TOML, or JSON by extension)
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Overrides the configured seed
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Log progress to stderr
    #[arg(short, long, global = true)]
    verbose: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the refinement loop and write manifest, report and score curve
    Run {
        /// Continue the checkpointed run in the output directory
        #[arg(long)]
        resume: bool,
        /// Overrides the configured step count
        #[arg(long)]
        max_steps: Option<usize>,
        /// Baseline manifest for the improvement figure in the report
        #[arg(long)]
        baseline: Option<PathBuf>,
    },
    /// Score a single mesh with the Newtonian surrogate
    EvalMesh {
        mesh: PathBuf,
        /// Register the mesh (center, principal axes, unit length) before scoring
        #[arg(long)]
        normalize: bool,
    },
    /// Render the multi-view images of a mesh
    Render {
        mesh: PathBuf,
        #[arg(long)]
        normalize: bool,
    },
    /// Geometric novelty between two meshes, with per-view heatmaps
    Novelty {
        mesh_a: PathBuf,
        mesh_b: PathBuf,
        #[arg(long)]
        normalize: bool,
    },
    /// DPAR of two manifests and the relative improvement
    Dpar { baseline: PathBuf, ours: PathBuf },
}

/// Error carrying its exit status.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

fn fail(code: u8, error: impl Into<anyhow::Error>) -> Failure {
    Failure { code, error: error.into() }
}

impl From<RunError> for Failure {
    fn from(e: RunError) -> Self {
        let code = e.exit_code().clamp(1, 255) as u8;
        fail(code, e)
    }
}

type CliResult = Result<(), Failure>;

/// Prints a line to stdout; a closed pipe is not an error.
fn emit(text: &str) -> CliResult {
    match writeln!(std::io::stdout().lock(), "{text}") {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(fail(1, e)),
        _ => Ok(()),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let default_level = if cli.verbose { "info" } else { "warn" };
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new(default_level)))
        .with_writer(std::io::stderr)
        .init();

    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.error);
            ExitCode::from(f.code)
        }
    }
}

fn dispatch(cli: &Cli) -> CliResult {
    match &cli.command {
        Command::Run { resume, max_steps, baseline } => cmd_run(cli, *resume, *max_steps, baseline.as_deref()),
        Command::EvalMesh { mesh, normalize } => cmd_eval_mesh(cli, mesh, *normalize),
        Command::Render { mesh, normalize } => cmd_render(cli, mesh, *normalize),
        Command::Novelty { mesh_a, mesh_b, normalize } => cmd_novelty(cli, mesh_a, mesh_b, *normalize),
        Command::Dpar { baseline, ours } => cmd_dpar(baseline, ours),
    }
}

/// The configured run, or the in-process mock world when no file is given.
fn load_config(cli: &Cli) -> Result<RunConfig, Failure> {
    let mut config = match &cli.config {
        Some(path) => RunConfig::load(path).map_err(|e| fail(EXIT_CONFIG, e))?,
        None => RunConfig::mock(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    Ok(config)
}

fn out_dir(cli: &Cli) -> Result<&Path, Failure> {
    cli.out.as_deref().ok_or_else(|| fail(EXIT_CONFIG, anyhow!("--out is required")))
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> CliResult {
    std::fs::write(path, bytes).map_err(|e| fail(1, anyhow!("writing {}: {e}", path.display())))
}

fn to_json(value: &impl serde::Serialize) -> Result<String, Failure> {
    serde_json::to_string_pretty(value).map_err(|e| fail(1, e))
}

fn cmd_run(cli: &Cli, resume: bool, max_steps: Option<usize>, baseline: Option<&Path>) -> CliResult {
    let out = out_dir(cli)?;
    let state = if resume {
        let config = match &cli.config {
            Some(_) => load_config(cli)?,
            None => {
                let text = std::fs::read_to_string(out.join(refine::STATE_FILE))
                    .map_err(|e| fail(EXIT_MANIFEST, anyhow!("no checkpoint in {}: {e}", out.display())))?;
                let state: refine::RunState =
                    serde_json::from_str(&text).map_err(|e| fail(EXIT_MANIFEST, e))?;
                state.config
            }
        };
        let backends = config.backend.connect();
        refine::resume(out, &backends, max_steps.or(cli.config.as_ref().map(|_| config.max_steps)))?
    } else {
        let mut config = load_config(cli)?;
        if let Some(m) = max_steps {
            config.max_steps = m;
        }
        let backends = config.backend.connect();
        refine::run(&config, &backends, out)?
    };

    let records = read_manifest(&out.join(MANIFEST_FILE))?;
    let baseline_records = match baseline {
        Some(p) => Some(read_manifest(p)?),
        None => None,
    };
    let report = RunReport::from_manifest(&records, baseline_records.as_deref());
    write_file(&out.join("report.json"), to_json(&report)?)?;
    write_file(&out.join("curve.svg"), curve_svg(&report.steps))?;
    let best = state.best();
    tracing::info!(steps = state.step, out = %out.display(), "run complete");
    emit(&to_json(&json!({
        "steps": state.step,
        "best_objective": best.map(|c| c.selection_objective()),
        "best_prompt": best.map(|c| c.prompt.clone()),
        "dpar": report.dpar.as_ref().map(|d| d.dpar),
        "improvement": report.improvement,
    }))?)
}

fn load_prepared(path: &Path, normalize: bool) -> Result<(TriangleMesh, serde_json::Value), Failure> {
    let mesh = load_mesh(path, None).map_err(|e| fail(EXIT_MESH, anyhow!("{}: {e}", path.display())))?;
    let outcome = repair(&mesh);
    let diagnostics = diagnose(&mesh, &Vector::x());
    if !outcome.watertight {
        eprintln!("{}", to_json(&diagnostics)?);
        return Err(fail(EXIT_MESH, anyhow!("{} is not watertight and could not be repaired", path.display())));
    }
    let repaired = json!({
        "welded_vertices": outcome.welded_vertices,
        "removed_faces": outcome.removed_faces,
        "flipped_faces": outcome.flipped_faces,
    });
    let mesh = if normalize {
        normalize_pose(&outcome.mesh).map_err(|e| fail(EXIT_MESH, e))?
    } else {
        outcome.mesh
    };
    Ok((mesh, json!({ "diagnostics": diagnostics, "repair": repaired })))
}

fn cmd_eval_mesh(cli: &Cli, path: &Path, normalize: bool) -> CliResult {
    let config = load_config(cli)?;
    let (mesh, info) = load_prepared(path, normalize)?;
    let r = newtonian_coefficients(&mesh, &config.flow).map_err(|e| fail(EXIT_CONFIG, e))?;
    let report = json!({
        "mesh": path.display().to_string(),
        "c_drag": r.c_drag,
        "c_lift": r.c_lift,
        "c_side": r.c_side,
        "projected_area": r.projected_area,
        "f_physical": f_physical(r.c_drag, &config.objective.bounds),
        "faces": mesh.face_count(),
        "diagnostics": info["diagnostics"],
        "repair": info["repair"],
    });
    emit(&to_json(&report)?)
}

fn cmd_render(cli: &Cli, path: &Path, normalize: bool) -> CliResult {
    let config = load_config(cli)?;
    let out = out_dir(cli)?;
    let (mesh, _) = load_prepared(path, normalize)?;
    let views = render_multiview(&mesh, &config.rig).map_err(|e| fail(EXIT_CONFIG, e))?;
    export_multiview(out, &views, &config.rig).map_err(|e| fail(1, e))?;
    let foreground: Vec<usize> = views.images.iter().map(|v| v.foreground_count()).collect();
    emit(&to_json(&json!({
        "views": views.len(),
        "resolution": views.resolution(),
        "foreground_pixels": foreground,
    }))?)
}

fn cmd_novelty(cli: &Cli, a: &Path, b: &Path, normalize: bool) -> CliResult {
    let config = load_config(cli)?;
    let out = out_dir(cli)?;
    let (mesh_a, _) = load_prepared(a, normalize)?;
    let (mesh_b, _) = load_prepared(b, normalize)?;
    let views_a = render_multiview(&mesh_a, &config.rig).map_err(|e| fail(EXIT_CONFIG, e))?;
    let views_b = render_multiview(&mesh_b, &config.rig).map_err(|e| fail(EXIT_CONFIG, e))?;
    let backends = config.backend.connect();
    let report = f_novelty(
        &views_a,
        &views_b,
        backends.features.as_ref(),
        backends.embedder.as_ref(),
        config.feature_levels,
    )
    .map_err(|e| match e {
        NoveltyError::EmptyMask => fail(EXIT_MASK, e),
        e if e.is_retryable() => fail(EXIT_BACKEND, e),
        NoveltyError::Semantic(_) | NoveltyError::Backend(_) => fail(EXIT_BACKEND, e),
        e => fail(1, e),
    })?;
    export_heatmaps(out, &report, &config.rig).map_err(|e| fail(1, e))?;
    let summary = json!({
        "views": views_a.len(),
        "resolution": report.resolution,
        "s3": report.s3,
        "s4": report.s4,
        "gamma": report.gamma_weight,
        "mask_pixels": report.mask_pixels,
        "score": report.score,
    });
    let text = to_json(&summary)?;
    write_file(&out.join("novelty.json"), &text)?;
    emit(&text)
}

fn cmd_dpar(baseline: &Path, ours: &Path) -> CliResult {
    let dpar_of = |path: &Path| -> Result<f64, Failure> {
        let records = read_manifest(path)?;
        manifest_dpar(&records)
            .map(|d| d.dpar)
            .map_err(|e| fail(EXIT_MANIFEST, anyhow!("{}: {e}", path.display())))
    };
    let (b, o) = (dpar_of(baseline)?, dpar_of(ours)?);
    let pct = improvement_percent(b, o).map_err(|e| fail(EXIT_MANIFEST, e))?;
    emit(&format!("baseline DPAR {b:.4}\nours DPAR {o:.4}\nimprovement {}", format_percent(pct)))
}
