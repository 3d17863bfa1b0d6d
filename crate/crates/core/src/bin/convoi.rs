use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::warn;

use convoi::eval::evaluate;
use convoi::http::HttpEndpoint;
use convoi::metrics::format_table;
use convoi::navigator::NavMode;
use convoi::runlog::{replay_mismatch, RunLog};
use convoi::sim::{run_scenario, Ablation, BackendChoice, ClassifierChoice, RunOptions};
use convoi::vlm::VlmAdapter;
use convoi::world::scenario::{Scenario, ScenarioError};

const EXIT_FAILURE: u8 = 1;
const EXIT_SCHEMA: u8 = 2;

#[derive(Parser)]
#[command(name = "convoi", version, about = "Context-aware VLM navigation in a 2D simulator")]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario to the goal, a collision or the tick limit.
    Run(RunArgs),
    /// Compare run logs; Fréchet distance is measured against the teleop log.
    Eval(EvalArgs),
    /// Re-simulate a log's command stream and check the logged poses.
    Replay {
        log: PathBuf,
    },
    /// Serve the simulation over WebSocket for teleoperation and viewing.
    Serve(ServeArgs),
    /// Run the marking / prompting / extrapolation ablations of one scenario.
    Ablate(AblateArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum BackendKind {
    Oracle,
    Http,
}

#[derive(Clone, Copy, ValueEnum)]
enum ClassifierKind {
    Oracle,
    Color,
    Http,
}

#[derive(Args, Clone)]
struct BackendArgs {
    /// Large-VLM backend.
    #[arg(long, value_enum, default_value = "oracle")]
    backend: BackendKind,
    /// Endpoint URL for `--backend http`.
    #[arg(long)]
    vlm_url: Option<String>,
    #[arg(long, default_value = "")]
    vlm_model: String,
    /// Environment variable holding the VLM API key.
    #[arg(long, default_value = "CONVOI_VLM_API_KEY")]
    vlm_key_env: String,
    #[arg(long, value_enum, default_value = "openai-chat")]
    vlm_adapter: AdapterKind,
    #[arg(long, default_value_t = 15.0)]
    vlm_timeout: f64,
    /// Context and patch classifier.
    #[arg(long, value_enum, default_value = "oracle")]
    classifier: ClassifierKind,
    /// Endpoint URL for `--classifier http`.
    #[arg(long)]
    classifier_url: Option<String>,
}

#[derive(Clone, Copy, ValueEnum)]
enum AdapterKind {
    OpenaiChat,
    SimpleJson,
}

#[derive(Args)]
struct RunArgs {
    scenario: PathBuf,
    #[command(flatten)]
    backend: BackendArgs,
    /// Plain dynamic-window planner, no VLM.
    #[arg(long)]
    baseline: bool,
    #[arg(long)]
    no_marking: bool,
    #[arg(long)]
    no_context_prompting: bool,
    #[arg(long)]
    no_extrapolation: bool,
    /// Output directory for the run log and marked images.
    #[arg(long, short, default_value = "runs/latest")]
    out: PathBuf,
    /// Overrides the scenario seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    max_ticks: Option<u64>,
    /// Pace ticks in wall-clock time.
    #[arg(long)]
    realtime: bool,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    convoi: Option<PathBuf>,
    #[arg(long)]
    baseline: Option<PathBuf>,
    #[arg(long)]
    teleop: Option<PathBuf>,
    /// Scenario file; enables the unacceptable-path column.
    #[arg(long)]
    scenario: Option<PathBuf>,
    /// Print JSON rows instead of a table.
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct ServeArgs {
    scenario: PathBuf,
    #[command(flatten)]
    backend: BackendArgs,
    #[arg(long, default_value_t = 8765)]
    port: u16,
    /// Directory for teleop recordings.
    #[arg(long, short, default_value = "runs/teleop")]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct AblateArgs {
    scenario: PathBuf,
    #[command(flatten)]
    backend: BackendArgs,
    #[arg(long, short, default_value = "runs/ablate")]
    out: PathBuf,
    #[arg(long)]
    teleop: Option<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let code = match cli.cmd {
        Command::Run(a) => cmd_run(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Replay { log } => cmd_replay(&log),
        Command::Serve(a) => cmd_serve(a),
        Command::Ablate(a) => cmd_ablate(a),
    };
    ExitCode::from(code)
}

fn load_scenario(path: &Path, seed: Option<u64>) -> Result<Scenario, u8> {
    match Scenario::load(path) {
        Ok(mut s) => {
            if let Some(seed) = seed {
                s.sim.seed = seed;
            }
            if let Some(w) = s.navigator.d_thresh_warning() {
                warn!("{w}");
            }
            Ok(s)
        }
        Err(e @ (ScenarioError::Syntax { .. } | ScenarioError::Invalid { .. })) => {
            eprintln!("error: {e}");
            Err(EXIT_SCHEMA)
        }
        Err(e) => {
            eprintln!("error: {e}");
            Err(EXIT_FAILURE)
        }
    }
}

fn backend_options(a: &BackendArgs) -> Result<(BackendChoice, ClassifierChoice), String> {
    let backend = match a.backend {
        BackendKind::Oracle => BackendChoice::Oracle,
        BackendKind::Http => {
            let url = a.vlm_url.clone().ok_or("--backend http needs --vlm-url")?;
            let endpoint = HttpEndpoint {
                model: a.vlm_model.clone(),
                token_env: Some(a.vlm_key_env.clone()),
                timeout_s: a.vlm_timeout,
                ..HttpEndpoint::new(url)
            };
            let adapter = match a.vlm_adapter {
                AdapterKind::OpenaiChat => VlmAdapter::OpenaiChat,
                AdapterKind::SimpleJson => VlmAdapter::SimpleJson,
            };
            BackendChoice::Http(endpoint, adapter)
        }
    };
    let classifier = match a.classifier {
        ClassifierKind::Oracle => ClassifierChoice::Oracle,
        ClassifierKind::Color => ClassifierChoice::ColorVote,
        ClassifierKind::Http => {
            let url = a.classifier_url.clone().ok_or("--classifier http needs --classifier-url")?;
            ClassifierChoice::Remote(HttpEndpoint::new(url))
        }
    };
    Ok((backend, classifier))
}

fn cmd_run(a: RunArgs) -> u8 {
    let scenario = match load_scenario(&a.scenario, a.seed) {
        Ok(s) => s,
        Err(code) => return code,
    };
    let (backend, classifier) = match backend_options(&a.backend) {
        Ok(x) => x,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_FAILURE;
        }
    };
    let opts = RunOptions {
        mode: if a.baseline { NavMode::Baseline } else { NavMode::Convoi },
        backend,
        classifier,
        ablation: Ablation {
            no_free_space_marking: a.no_marking,
            no_context_prompting: a.no_context_prompting,
            no_extrapolation: a.no_extrapolation,
        },
        realtime: a.realtime,
        max_ticks: a.max_ticks,
    };
    let policy = scenario.acceptability.clone();
    let (start, goal) = (scenario.robot.pose.position(), scenario.world.goal);
    let gt = scenario.ground_truth_path.clone();
    let result = match run_scenario(scenario, &opts, Some(&a.out)) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_FAILURE;
        }
    };
    let pos = result.trajectory.positions();
    let report = convoi::metrics::MetricsReport {
        method: if a.baseline { "baseline" } else { "convoi" }.into(),
        frechet: gt.as_ref().and_then(|g| convoi::metrics::trajectory_frechet(&pos, g).ok()),
        norm_traj_length: convoi::metrics::norm_traj_length(&pos, start, goal).ok(),
        mean_velocity: result.trajectory.mean_velocity(),
        ref_path_error: None,
        cosine_similarity: None,
        pct_unacceptable: (!result.reference_paths.is_empty()).then(|| {
            convoi::metrics::pct_unacceptable(
                result.reference_paths.iter().map(|(p, w)| (p.as_slice(), w)),
                &policy,
            )
        }),
        query_count: result.query_count,
        reached_goal: result.outcome == convoi::runlog::Outcome::GoalReached,
        collisions: result.collisions,
    };
    if let Some(dir) = result.log_path.as_ref().and_then(|p| p.parent()) {
        let json = serde_json::to_string_pretty(&report).expect("report serializes");
        if let Err(e) = std::fs::write(dir.join("metrics.json"), json) {
            warn!("could not write metrics report: {e}");
        }
    }
    println!("outcome: {:?} after {} ticks", result.outcome, result.ticks);
    if gt.is_some() {
        println!("(frechet against the scenario's scripted ground truth)");
    }
    print!("{}", format_table(&[report]));
    if let Some(p) = &result.log_path {
        println!("log: {}", p.display());
    }
    result.outcome.exit_code() as u8
}

fn read_log(p: &Path) -> Result<RunLog, u8> {
    RunLog::read(p).map_err(|e| {
        eprintln!("error: {}: {e}", p.display());
        EXIT_FAILURE
    })
}

fn cmd_eval(a: EvalArgs) -> u8 {
    let mut runs = Vec::new();
    for (name, p) in [("convoi", &a.convoi), ("baseline", &a.baseline)] {
        if let Some(p) = p {
            match read_log(p) {
                Ok(l) => runs.push((name, l)),
                Err(c) => return c,
            }
        }
    }
    let teleop = match a.teleop.as_deref().map(read_log).transpose() {
        Ok(t) => t,
        Err(c) => return c,
    };
    let scenario = match a.scenario.as_deref().map(|p| load_scenario(p, None)).transpose() {
        Ok(s) => s,
        Err(c) => return c,
    };
    let refs: Vec<(&str, &RunLog)> = runs.iter().map(|(n, l)| (*n, l)).collect();
    match evaluate(&refs, teleop.as_ref(), scenario.as_ref()) {
        Ok(out) => {
            for w in &out.warnings {
                warn!("{w}");
            }
            if a.json {
                println!("{}", serde_json::to_string_pretty(&out.rows).expect("rows serialize"));
            } else {
                print!("{}", format_table(&out.rows));
            }
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_FAILURE
        }
    }
}

fn cmd_replay(p: &Path) -> u8 {
    let log = match read_log(p) {
        Ok(l) => l,
        Err(c) => return c,
    };
    match replay_mismatch(&log) {
        None => {
            println!("replay ok: {} ticks reproduce the logged poses", log.ticks.len());
            0
        }
        Some(t) => {
            eprintln!("replay mismatch at tick {t}");
            EXIT_FAILURE
        }
    }
}

fn cmd_serve(a: ServeArgs) -> u8 {
    let scenario = match load_scenario(&a.scenario, a.seed) {
        Ok(s) => s,
        Err(code) => return code,
    };
    let (backend, classifier) = match backend_options(&a.backend) {
        Ok(x) => x,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_FAILURE;
        }
    };
    let opts = RunOptions {
        backend,
        classifier,
        ..RunOptions::default()
    };
    let cfg = convoi::service::ServiceConfig {
        port: a.port,
        record_dir: a.out,
    };
    match convoi::service::serve_blocking(scenario, opts, cfg) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_FAILURE
        }
    }
}

fn cmd_ablate(a: AblateArgs) -> u8 {
    let scenario = match load_scenario(&a.scenario, None) {
        Ok(s) => s,
        Err(code) => return code,
    };
    let (backend, classifier) = match backend_options(&a.backend) {
        Ok(x) => x,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_FAILURE;
        }
    };
    let variants = [
        ("full", Ablation::default()),
        (
            "no_mmvm",
            Ablation {
                no_free_space_marking: true,
                ..Ablation::default()
            },
        ),
        (
            "no_cbp",
            Ablation {
                no_context_prompting: true,
                ..Ablation::default()
            },
        ),
        (
            "no_extrap",
            Ablation {
                no_extrapolation: true,
                ..Ablation::default()
            },
        ),
    ];
    let mut logs = Vec::new();
    for (name, ablation) in variants {
        let opts = RunOptions {
            backend: backend.clone(),
            classifier: classifier.clone(),
            ablation,
            ..RunOptions::default()
        };
        let dir = a.out.join(name);
        match run_scenario(scenario.clone(), &opts, Some(&dir)) {
            Ok(r) => println!("{name}: {:?} after {} ticks", r.outcome, r.ticks),
            Err(e) => {
                eprintln!("error: {name}: {e}");
                return EXIT_FAILURE;
            }
        }
        match read_log(&dir) {
            Ok(l) => logs.push((name, l)),
            Err(c) => return c,
        }
    }
    let teleop = match a.teleop.as_deref().map(read_log).transpose() {
        Ok(t) => t,
        Err(c) => return c,
    };
    let refs: Vec<(&str, &RunLog)> = logs.iter().map(|(n, l)| (*n, l)).collect();
    match evaluate(&refs, teleop.as_ref(), Some(&scenario)) {
        Ok(out) => {
            print!("{}", format_table(&out.rows));
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_FAILURE
        }
    }
}
