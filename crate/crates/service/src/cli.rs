//! `forge` subcommands.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::{Arc, Mutex};

use clap::{Args, Parser, Subcommand, ValueEnum};
use forge_core::bus::SignalBus;
use forge_core::config::{check_bytes, parse_config, validate, CourseConfig, Diagnostic};
use forge_core::frame_budget::{estimate_draw_calls, simulate_frames, BatchingMode, FrameStats, SceneDescriptor};
use forge_core::results::ResultsStore;
use forge_core::session::{
    run_replay, MatchOutcome, ReplayError, ReplayReport, ReplayScript, SessionContext, SessionId,
};

use crate::server::{self, AppState};

#[derive(Debug, Parser)]
#[command(
    name = "forge",
    version,
    about = "Procedural training engine: validate courses, replay sessions, serve the pad"
)]
pub struct Cli {
    /// Course configuration file.
    #[arg(long, global = true, env = "FORGE_CONFIG")]
    pub config: Option<PathBuf>,
    /// Directory holding `<course_id>.jsonl` result files.
    #[arg(long, global = true, env = "FORGE_RESULTS_DIR", default_value = "results")]
    pub results_dir: PathBuf,
    #[command(subcommand)]
    pub command: Cmd,
}

#[derive(Debug, Subcommand)]
pub enum Cmd {
    /// Check a course file and print diagnostics.
    Validate(ValidateArgs),
    /// Run a recorded action script through a fresh session.
    Replay(ReplayArgs),
    /// Draw-call and frame-pacing model.
    Framebudget(FrameArgs),
    /// Run the WebSocket session service.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    /// Print nothing unless there are errors.
    #[arg(long, short)]
    pub quiet: bool,
    /// Diagnostics as a JSON array.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    #[arg(long, env = "FORGE_SCRIPT")]
    pub script: PathBuf,
    /// Machine-readable report on stdout.
    #[arg(long)]
    pub json: bool,
    /// Session id to record under; random when omitted.
    #[arg(long)]
    pub session_id: Option<String>,
    /// Do not write examination records.
    #[arg(long)]
    pub no_persist: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    AllDynamic,
    StaticBatching,
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum VsyncArg {
    On,
    Off,
    Both,
}

#[derive(Debug, Args)]
pub struct FrameArgs {
    /// Scene descriptor: a JSON list of render objects.
    #[arg(long, env = "FORGE_SCENE")]
    pub scene: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = ModeArg::Both)]
    pub mode: ModeArg,
    /// Display refresh rate in Hz.
    #[arg(long, default_value_t = 60.0)]
    pub refresh: f64,
    #[arg(long, value_enum, default_value_t = VsyncArg::Both)]
    pub vsync: VsyncArg,
    /// Constant per-frame work time in ms.
    #[arg(long, default_value_t = 3.94)]
    pub workload: f64,
    /// Per-frame work times (ms), one per line or a JSON list; overrides --workload.
    #[arg(long)]
    pub workload_file: Option<PathBuf>,
    /// Frames simulated for a constant workload.
    #[arg(long, default_value_t = 1000)]
    pub frames: usize,
    /// Dynamic batch vertex budget.
    #[arg(long)]
    pub budget: Option<u32>,
    #[arg(long)]
    pub csv: bool,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, env = "FORGE_BIND", default_value = "127.0.0.1:7878")]
    pub bind: String,
}

/// Exit statuses shared by the subcommands.
pub mod exit {
    pub const OK: u8 = 0;
    pub const INVALID: u8 = 1;
    pub const UNREADABLE: u8 = 2;
}

#[derive(Debug, thiserror::Error)]
enum Failure {
    #[error("{0}")]
    Unreadable(String),
    #[error("{0}")]
    Invalid(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Unreadable(_) => exit::UNREADABLE,
            Failure::Invalid(_) => exit::INVALID,
        }
    }
}

fn read(path: &Path) -> Result<Vec<u8>, Failure> {
    fs::read(path).map_err(|e| Failure::Unreadable(format!("cannot read {}: {e}", path.display())))
}

fn config_path(cli: &Cli) -> Result<&Path, Failure> {
    cli.config
        .as_deref()
        .ok_or_else(|| Failure::Unreadable("no course file given (use --config or FORGE_CONFIG)".into()))
}

/// Loads a course that validates without errors.
fn load_config(path: &Path) -> Result<CourseConfig, Failure> {
    let bytes = read(path)?;
    let config = parse_config(&bytes).map_err(|e| Failure::Invalid(format!("{}: {e}", path.display())))?;
    let errors: Vec<Diagnostic> = validate(&config).into_iter().filter(Diagnostic::is_error).collect();
    if let Some(first) = errors.first() {
        return Err(Failure::Invalid(format!(
            "{}: {} validation error(s), first: {first}",
            path.display(),
            errors.len()
        )));
    }
    Ok(config)
}

pub fn run(cli: Cli) -> ExitCode {
    let result = match &cli.command {
        Cmd::Validate(args) => cmd_validate(&cli, args),
        Cmd::Replay(args) => cmd_replay(&cli, args),
        Cmd::Framebudget(args) => cmd_framebudget(args),
        Cmd::Serve(args) => cmd_serve(&cli, args),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("forge: {e}");
            ExitCode::from(e.code())
        }
    }
}

fn cmd_validate(cli: &Cli, args: &ValidateArgs) -> Result<u8, Failure> {
    let path = config_path(cli)?;
    let diags = check_bytes(&read(path)?);
    let errors = diags.iter().filter(|d| d.is_error()).count();
    let mut out = io::stdout().lock();
    if args.json {
        serde_json::to_writer_pretty(&mut out, &diags).expect("diagnostics serialize");
        writeln!(out).ok();
    } else {
        for d in diags.iter().filter(|d| !args.quiet || d.is_error()) {
            writeln!(out, "{d}").ok();
        }
        if !args.quiet {
            writeln!(
                out,
                "{}: {errors} error(s), {} warning(s)",
                path.display(),
                diags.len() - errors
            )
            .ok();
        }
    }
    Ok(if errors == 0 { exit::OK } else { exit::INVALID })
}

fn cmd_replay(cli: &Cli, args: &ReplayArgs) -> Result<u8, Failure> {
    let config = Arc::new(load_config(config_path(cli)?)?);
    let script: ReplayScript = serde_json::from_slice(&read(&args.script)?)
        .map_err(|e| Failure::Invalid(format!("{}: {e}", args.script.display())))?;

    let mut ctx = SessionContext::new(Arc::new(SignalBus::new()));
    if !args.no_persist {
        let store = ResultsStore::open(&cli.results_dir, &config.course_id)
            .map_err(|e| Failure::Unreadable(format!("results store: {e}")))?;
        for w in store.warnings() {
            eprintln!("forge: warning: {w}");
        }
        ctx = ctx.with_recorder(Arc::new(Mutex::new(store)));
    }
    let session_id = args
        .session_id
        .clone()
        .unwrap_or_else(|| uuid::Uuid::new_v4().to_string());

    let report = run_replay(config, &script, SessionId::from(session_id.as_str()), ctx).map_err(|e| match e {
        ReplayError::Session(ref inner) | ReplayError::Event { source: ref inner, .. }
            if matches!(inner, forge_core::session::SessionError::Storage(_)) =>
        {
            Failure::Unreadable(e.to_string())
        }
        other => Failure::Invalid(other.to_string()),
    })?;

    let mut out = io::stdout().lock();
    if args.json {
        serde_json::to_writer_pretty(&mut out, &report).expect("reports serialize");
        writeln!(out).ok();
    } else {
        print_replay(&mut out, &report).ok();
    }
    Ok(exit::OK)
}

fn print_replay(out: &mut impl Write, r: &ReplayReport) -> io::Result<()> {
    writeln!(
        out,
        "{} / {} ({}) user {}",
        r.course_id,
        r.task_id,
        r.mode.as_str(),
        r.user_id
    )?;
    for e in &r.events {
        let line = match &e.outcome {
            MatchOutcome::Progress {
                step_id,
                actions_done,
                actions_total,
            } => format!("progress {step_id} {actions_done}/{actions_total}"),
            MatchOutcome::StepCompleted { step_id, .. } => format!("step {step_id} completed"),
            MatchOutcome::Rejected { reason, blockers } if blockers.is_empty() => {
                format!("rejected: {}", reason.as_str())
            }
            MatchOutcome::Rejected { reason, blockers } => {
                format!("rejected: {} (blocked by {})", reason.as_str(), blockers.join(", "))
            }
            MatchOutcome::TaskCompleted { .. } => "task completed".to_string(),
        };
        writeln!(out, "  [{:>3}] t={:<8} {line}", e.index, e.at)?;
    }
    if !r.prompts.is_empty() {
        writeln!(out, "prompts:")?;
        for p in &r.prompts {
            writeln!(out, "  {:<13} {:<28} {}", p.topic, p.target, p.content)?;
        }
    }
    writeln!(out, "status: {:?}", r.status)?;
    if let Some(score) = &r.score {
        writeln!(
            out,
            "score: {:.1}% ({} error(s))",
            score.score_percent, score.error_total
        )?;
        for s in &score.per_step {
            writeln!(
                out,
                "  {:<6} weight {:<5} {}",
                s.step_id,
                s.weight,
                if s.earned { "earned" } else { "missed" }
            )?;
        }
    }
    Ok(())
}

fn workload(args: &FrameArgs) -> Result<Vec<f64>, Failure> {
    let Some(path) = &args.workload_file else {
        return Ok(vec![args.workload; args.frames]);
    };
    let text = String::from_utf8(read(path)?).map_err(|e| Failure::Invalid(format!("{}: {e}", path.display())))?;
    if text.trim_start().starts_with('[') {
        return serde_json::from_str(&text).map_err(|e| Failure::Invalid(format!("{}: {e}", path.display())));
    }
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(|l| {
            l.parse::<f64>()
                .map_err(|e| Failure::Invalid(format!("{}: `{l}`: {e}", path.display())))
        })
        .collect()
}

fn cmd_framebudget(args: &FrameArgs) -> Result<u8, Failure> {
    let mut out = io::stdout().lock();
    if let Some(path) = &args.scene {
        let mut scene = SceneDescriptor::from_json(&read(path)?)
            .map_err(|e| Failure::Invalid(format!("{}: {e}", path.display())))?;
        if let Some(b) = args.budget {
            scene.dynamic_batch_vertex_budget = b;
        }
        scene
            .validate()
            .map_err(|e| Failure::Invalid(format!("{}: {e}", path.display())))?;
        if scene.objects.is_empty() {
            eprintln!("forge: warning: scene {} has no objects", path.display());
        }
        let modes: &[BatchingMode] = match args.mode {
            ModeArg::AllDynamic => &[BatchingMode::AllDynamic],
            ModeArg::StaticBatching => &[BatchingMode::StaticBatching],
            ModeArg::Both => &[BatchingMode::AllDynamic, BatchingMode::StaticBatching],
        };
        let rows: Vec<(BatchingMode, usize)> = modes
            .iter()
            .map(|&m| estimate_draw_calls(&scene, m).map(|c| (m, c)))
            .collect::<Result<_, _>>()
            .map_err(|e| Failure::Invalid(e.to_string()))?;
        write_draw_calls(&mut out, &scene, &rows, args.csv).ok();
        writeln!(out).ok();
    }

    let work = workload(args)?;
    let settings: &[bool] = match args.vsync {
        VsyncArg::On => &[true],
        VsyncArg::Off => &[false],
        VsyncArg::Both => &[true, false],
    };
    let rows: Vec<(bool, FrameStats)> = settings
        .iter()
        .map(|&v| simulate_frames(&work, args.refresh, v).map(|s| (v, s)))
        .collect::<Result<_, _>>()
        .map_err(|e| Failure::Invalid(e.to_string()))?;
    write_frames(&mut out, &rows, args.csv).ok();
    Ok(exit::OK)
}

fn write_draw_calls(
    out: &mut impl Write,
    scene: &SceneDescriptor,
    rows: &[(BatchingMode, usize)],
    csv: bool,
) -> io::Result<()> {
    if csv {
        writeln!(out, "mode,draw_calls,objects,materials,static_fraction")?;
        for (m, c) in rows {
            writeln!(
                out,
                "{},{c},{},{},{:.4}",
                m.label(),
                scene.objects.len(),
                scene.material_count(),
                scene.static_fraction()
            )?;
        }
        return Ok(());
    }
    writeln!(
        out,
        "Draw calls ({} objects, {} materials, {:.0}% static, batch budget {} vertices)",
        scene.objects.len(),
        scene.material_count(),
        scene.static_fraction() * 100.0,
        scene.dynamic_batch_vertex_budget
    )?;
    writeln!(out, "{:<18} {:>12}", "", "DrawCall/frame")?;
    for (m, c) in rows {
        writeln!(out, "{:<18} {:>12}", m.label(), c)?;
    }
    Ok(())
}

fn write_frames(out: &mut impl Write, rows: &[(bool, FrameStats)], csv: bool) -> io::Result<()> {
    let label = |v: bool| if v { "V-Sync_on" } else { "V-Sync_off" };
    if csv {
        writeln!(
            out,
            "vsync,max_frame_time_ms,avg_frame_time_ms,max_frame_rate_fps,avg_frame_rate_fps,frames"
        )?;
        for (v, s) in rows {
            writeln!(
                out,
                "{},{:.6},{:.6},{:.6},{:.6},{}",
                label(*v),
                s.max_frame_time_ms,
                s.avg_frame_time_ms,
                s.max_frame_rate_fps,
                s.avg_frame_rate_fps,
                s.frame_count
            )?;
        }
        return Ok(());
    }
    writeln!(
        out,
        "{:<12} {:>12} {:>12} {:>13} {:>13}",
        "", "Max f_t(ms)", "Avg f_t(ms)", "Max f_r(fps)", "Avg f_r(fps)"
    )?;
    for (v, s) in rows {
        writeln!(
            out,
            "{:<12} {:>12.3} {:>12.3} {:>13.2} {:>13.2}",
            label(*v),
            s.max_frame_time_ms,
            s.avg_frame_time_ms,
            s.max_frame_rate_fps,
            s.avg_frame_rate_fps
        )?;
    }
    Ok(())
}

fn cmd_serve(cli: &Cli, args: &ServeArgs) -> Result<u8, Failure> {
    let config = Arc::new(load_config(config_path(cli)?)?);
    let store = ResultsStore::open(&cli.results_dir, &config.course_id)
        .map_err(|e| Failure::Unreadable(format!("results store: {e}")))?;
    for w in store.warnings() {
        log::warn!("{w}");
    }
    log::info!("{} record(s) in {}", store.len(), cli.results_dir.display());
    let state = Arc::new(AppState::new(config, store));
    let runtime = tokio::runtime::Runtime::new().map_err(|e| Failure::Unreadable(e.to_string()))?;
    runtime.block_on(async {
        let listener = tokio::net::TcpListener::bind(&args.bind)
            .await
            .map_err(|e| Failure::Invalid(format!("cannot bind {}: {e}", args.bind)))?;
        let local = listener.local_addr().map_err(|e| Failure::Invalid(e.to_string()))?;
        // Tests and scripts read this line to find an ephemeral port.
        println!("listening on ws://{local}/ws");
        io::stdout().flush().ok();
        let shutdown = async {
            let _ = tokio::signal::ctrl_c().await;
            log::info!("shutting down");
        };
        server::run(listener, state, shutdown)
            .await
            .map_err(|e| Failure::Invalid(format!("server error: {e}")))
    })?;
    Ok(exit::OK)
}
