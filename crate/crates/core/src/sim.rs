//! Closed-loop simulation: world, sensors, navigator, kinematics and logging.

use std::path::Path;
use std::sync::Arc;
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::context::{
    ColorVoteClassifier, ColorVotePatchClassifier, ContextClassifier, OracleContextClassifier,
    OraclePatchClassifier, PatchClassifier, RemoteClassifier,
};
use crate::geometry::Point2;
use crate::grid::OccupancyGrid;
use crate::http::HttpEndpoint;
use crate::metrics::{RecordedTrajectory, TimedPose, TrajectorySource};
use crate::navigator::{NavMode, Navigator, QueryDecision, QueryEvent, TickOutput};
use crate::runlog::{
    ContextSummary, LogHeader, LogSummary, LoggedQuery, Outcome, RunLogError, RunLogWriter, TickRecord,
    LOG_SCHEMA_VERSION,
};
use crate::scene::SceneView;
use crate::vlm::{HttpVlmBackend, OracleVlmBackend, VlmAdapter, VlmBackend};
use crate::world::scenario::Scenario;
use crate::world::{simulate_lidar_to_grid, step_kinematics, RobotState, SemanticWorld, VelocityCommand};

/// Which context/patch classifier to run.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum ClassifierChoice {
    /// Reads ground-truth labels from the scenario.
    #[default]
    Oracle,
    /// Offline color statistics of the rendered image.
    ColorVote,
    Remote(HttpEndpoint),
}

impl ClassifierChoice {
    pub fn context(&self) -> Box<dyn ContextClassifier> {
        match self {
            Self::Oracle => Box::new(OracleContextClassifier),
            Self::ColorVote => Box::new(ColorVoteClassifier),
            Self::Remote(e) => Box::new(RemoteClassifier::new(e.clone())),
        }
    }

    pub fn patch(&self) -> Box<dyn PatchClassifier> {
        match self {
            Self::Oracle => Box::new(OraclePatchClassifier),
            Self::ColorVote => Box::new(ColorVotePatchClassifier),
            Self::Remote(e) => Box::new(RemoteClassifier::new(e.clone())),
        }
    }
}

#[derive(Clone)]
pub enum BackendChoice {
    Oracle,
    Http(HttpEndpoint, VlmAdapter),
    Custom(Arc<dyn VlmBackend>),
}

impl BackendChoice {
    pub fn build(&self, scenario: &Scenario) -> Result<Arc<dyn VlmBackend>, String> {
        Ok(match self {
            Self::Oracle => Arc::new(OracleVlmBackend::new(scenario.sim.oracle_latency_s)),
            Self::Http(e, a) => Arc::new(HttpVlmBackend::new(e.clone(), *a).map_err(|e| e.to_string())?),
            Self::Custom(b) => b.clone(),
        })
    }
}

/// Knobs switched off one at a time for ablation runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Ablation {
    pub no_free_space_marking: bool,
    pub no_context_prompting: bool,
    pub no_extrapolation: bool,
}

#[derive(Clone)]
pub struct RunOptions {
    pub mode: NavMode,
    pub backend: BackendChoice,
    pub classifier: ClassifierChoice,
    pub ablation: Ablation,
    /// Sleep so each tick takes `dt` of wall time.
    pub realtime: bool,
    pub max_ticks: Option<u64>,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            mode: NavMode::Convoi,
            backend: BackendChoice::Oracle,
            classifier: ClassifierChoice::Oracle,
            ablation: Ablation::default(),
            realtime: false,
            max_ticks: None,
        }
    }
}

/// Where commands come from on a given tick.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Control {
    Autonomous,
    /// External command, clamped to the robot limits.
    Manual(VelocityCommand),
}

pub struct StepReport {
    pub tick: u64,
    pub cmd: VelocityCommand,
    pub nav: Option<TickOutput>,
    pub grid: OccupancyGrid,
    pub collision: bool,
    pub goal_reached: bool,
    pub wall_tick_s: f64,
}

pub struct Simulation {
    pub scenario: Scenario,
    pub world: SemanticWorld,
    pub state: RobotState,
    pub tick: u64,
    pub time: f64,
    pub navigator: Navigator,
    pub backend_id: Option<String>,
    mode: NavMode,
    log: Option<RunLogWriter>,
    last_path: Option<(u64, usize)>,
    log_tick_offset: u64,
    started: Instant,
    collisions: u64,
}

pub fn clamp_command(cmd: VelocityCommand, robot: &RobotState) -> VelocityCommand {
    let finite = |x: f64| if x.is_finite() { x } else { 0.0 };
    VelocityCommand::new(
        finite(cmd.v).clamp(-robot.v_max, robot.v_max),
        finite(cmd.omega).clamp(-robot.omega_max, robot.omega_max),
    )
}

impl Simulation {
    pub fn new(scenario: Scenario, opts: &RunOptions) -> Result<Self, String> {
        let mut nav_cfg = scenario.navigator;
        nav_cfg.mode = opts.mode;
        if opts.ablation.no_free_space_marking {
            nav_cfg.free_space_marking = false;
        }
        if opts.ablation.no_context_prompting {
            nav_cfg.context_prompting = false;
        }
        if opts.ablation.no_extrapolation {
            nav_cfg.extrapolation = false;
        }
        let backend = match opts.mode {
            NavMode::Convoi => Some(opts.backend.build(&scenario)?),
            NavMode::Baseline => None,
        };
        let backend_id = backend.as_ref().map(|b| b.id().to_string());
        let navigator = Navigator::new(
            nav_cfg,
            scenario.planner,
            scenario.catalog.clone(),
            backend,
            opts.classifier.context(),
            opts.classifier.patch(),
        );
        Ok(Self {
            world: scenario.world.clone(),
            state: scenario.robot,
            tick: 0,
            time: 0.0,
            navigator,
            backend_id,
            mode: opts.mode,
            log: None,
            last_path: None,
            log_tick_offset: 0,
            started: Instant::now(),
            collisions: 0,
            scenario,
        })
    }

    pub fn source(&self) -> TrajectorySource {
        match self.mode {
            NavMode::Convoi => TrajectorySource::Convoi,
            NavMode::Baseline => TrajectorySource::Baseline,
        }
    }

    pub fn header(&self, source: TrajectorySource) -> LogHeader {
        LogHeader {
            schema_version: LOG_SCHEMA_VERSION,
            scenario: self.scenario.name.clone(),
            source,
            backend: if source == TrajectorySource::Teleop { None } else { self.backend_id.clone() },
            seed: self.scenario.sim.seed,
            dt: self.scenario.sim.dt,
            robot: self.state,
            goal: [self.world.goal.x, self.world.goal.y],
            ground_truth_path: self
                .scenario
                .ground_truth_path
                .as_ref()
                .map(|p| p.iter().map(|q| [q.x, q.y]).collect()),
            wall_started_unix: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs_f64())
                .unwrap_or(0.0),
        }
    }

    /// Starts logging from the current tick into `dir`. Tick numbers in the log
    /// restart at zero.
    pub fn start_log(&mut self, dir: &Path, source: TrajectorySource) -> Result<(), RunLogError> {
        self.log = Some(RunLogWriter::create(dir, &self.header(source))?);
        self.log_tick_offset = self.tick;
        self.last_path = None;
        Ok(())
    }

    pub fn logging(&self) -> bool {
        self.log.is_some()
    }

    pub fn finish_log(&mut self, outcome: Outcome) -> Result<Option<std::path::PathBuf>, RunLogError> {
        let Some(w) = self.log.take() else {
            return Ok(None);
        };
        let summary = LogSummary {
            outcome,
            ticks: self.tick - self.log_tick_offset,
            query_count: self.navigator.query_count(),
            final_pose: [self.state.pose.x, self.state.pose.y, self.state.pose.theta],
            wall_elapsed_s: self.started.elapsed().as_secs_f64(),
        };
        w.finish(&summary).map(Some)
    }

    pub fn goal_reached(&self) -> bool {
        self.state.pose.position().dist(self.world.goal) <= self.scenario.sim.goal_tolerance
    }

    pub fn collisions(&self) -> u64 {
        self.collisions
    }

    pub fn occupancy(&self) -> OccupancyGrid {
        simulate_lidar_to_grid(
            &self.world,
            &self.state.pose,
            self.scenario.grid.n,
            self.scenario.grid.resolution,
            self.state.radius,
            &self.scenario.lidar,
        )
    }

    /// Softens a manual command that would drive into something: first drop
    /// the forward speed, then stop.
    fn guard(&self, cmd: VelocityCommand) -> VelocityCommand {
        let dt = self.scenario.sim.dt;
        let candidates = [cmd, VelocityCommand::new(0.0, cmd.omega), VelocityCommand::new(0.0, 0.0)];
        for c in candidates {
            let next = step_kinematics(&self.state, c, dt);
            if !self.world.collides(next.pose.position(), self.state.radius) {
                return c;
            }
        }
        VelocityCommand::new(0.0, 0.0)
    }

    /// One control tick.
    pub fn step(&mut self, control: Control) -> Result<StepReport, RunLogError> {
        let t0 = Instant::now();
        let dt = self.scenario.sim.dt;
        let grid = self.occupancy();
        let (cmd, nav) = match control {
            Control::Autonomous => {
                let scene = SceneView::new(&self.world, self.state.pose, &grid, &self.scenario.camera, self.tick, self.time);
                let out = self.navigator.tick(&scene, &self.state);
                (out.cmd, Some(out))
            }
            Control::Manual(c) => (self.guard(clamp_command(c, &self.state)), None),
        };
        let before = self.state;
        self.state = step_kinematics(&self.state, cmd, dt);
        self.world.step_yielding(dt, self.state.pose.position(), self.state.radius);
        let collision = self.world.collides(self.state.pose.position(), self.state.radius);
        if collision {
            self.collisions += 1;
        }
        let wall_tick_s = t0.elapsed().as_secs_f64();
        if self.log.is_some() {
            self.write_record(&before, cmd, nav.as_ref(), collision, wall_tick_s)?;
        }
        let report = StepReport {
            tick: self.tick,
            cmd,
            nav,
            grid,
            collision,
            goal_reached: self.goal_reached(),
            wall_tick_s,
        };
        self.tick += 1;
        self.time = self.tick as f64 * dt;
        Ok(report)
    }

    fn write_record(
        &mut self,
        before: &RobotState,
        cmd: VelocityCommand,
        nav: Option<&TickOutput>,
        collision: bool,
        wall_tick_s: f64,
    ) -> Result<(), RunLogError> {
        let log_tick = self.tick - self.log_tick_offset;
        let path = self.navigator.path();
        let key = path.map(|p| (p.id, p.points_odom.len()));
        let path_odom = if key != self.last_path {
            self.last_path = key;
            path.map(|p| p.points_odom.iter().map(|q| [q.x, q.y]).collect())
        } else {
            None
        };
        let w = self.log.as_mut().expect("logging");
        let query = match nav.and_then(|n| n.event.clone()) {
            Some(event) => {
                let image_file = match (&event, nav.and_then(|n| n.marked_image.as_ref())) {
                    (QueryEvent::Request { request_id, .. }, Some(img)) => {
                        Some(w.save_image(&format!("query_{request_id:04}.png"), img)?)
                    }
                    _ => None,
                };
                Some(LoggedQuery { event, image_file })
            }
            None => None,
        };
        let rec = TickRecord {
            tick: log_tick,
            t: log_tick as f64 * self.scenario.sim.dt,
            pose: [before.pose.x, before.pose.y, before.pose.theta],
            v: before.v,
            omega: before.omega,
            cmd,
            decision: nav.map(|n| n.decision),
            path_id: nav.and_then(|n| n.path_id),
            path_odom: if nav.is_some() { path_odom } else { None },
            query,
            context: nav.and_then(|n| n.context.as_ref()).map(|c| ContextSummary {
                id: c.winner_id.clone(),
                probabilities: c.probabilities.clone(),
            }),
            collision,
            wall_time: self.started.elapsed().as_secs_f64(),
            wall_tick_s,
        };
        w.tick(&rec)
    }
}

/// Result of a complete autonomous run.
#[derive(Debug, Clone)]
pub struct RunResult {
    pub outcome: Outcome,
    pub ticks: u64,
    pub trajectory: RecordedTrajectory,
    pub query_count: u64,
    pub collisions: u64,
    /// Each reference path when first published or extended, with the world then.
    pub reference_paths: Vec<(Vec<Point2>, SemanticWorld)>,
    pub decisions: Vec<QueryDecision>,
    /// Longest interval between consecutive tick starts.
    pub max_tick_period_s: f64,
    pub log_path: Option<std::path::PathBuf>,
}

/// Runs `scenario` until the goal, a collision or the tick limit.
pub fn run_scenario(scenario: Scenario, opts: &RunOptions, out_dir: Option<&Path>) -> Result<RunResult, String> {
    let max_ticks = opts.max_ticks.unwrap_or(scenario.sim.max_ticks);
    let dt = scenario.sim.dt;
    let mut sim = Simulation::new(scenario, opts)?;
    let source = sim.source();
    if let Some(dir) = out_dir {
        sim.start_log(dir, source).map_err(|e| e.to_string())?;
    }
    let mut poses = Vec::new();
    let mut reference_paths = Vec::new();
    let mut decisions = Vec::new();
    let mut last_key = None;
    let start = Instant::now();
    let mut last_tick_start: Option<Instant> = None;
    let mut max_period: f64 = 0.0;
    let outcome = loop {
        if sim.tick >= max_ticks {
            break Outcome::TickLimit;
        }
        if opts.realtime {
            let due = start + Duration::from_secs_f64(sim.tick as f64 * dt);
            if let Some(wait) = due.checked_duration_since(Instant::now()) {
                std::thread::sleep(wait);
            }
        }
        let now = Instant::now();
        if let Some(prev) = last_tick_start {
            max_period = max_period.max((now - prev).as_secs_f64());
        }
        last_tick_start = Some(now);
        let before = sim.state;
        let t = sim.time;
        let report = sim.step(Control::Autonomous).map_err(|e| e.to_string())?;
        poses.push(TimedPose {
            t,
            x: before.pose.x,
            y: before.pose.y,
            theta: before.pose.theta,
            v: before.v,
            omega: before.omega,
        });
        if let Some(nav) = &report.nav {
            decisions.push(nav.decision);
        }
        if let Some(p) = sim.navigator.path() {
            let key = (p.id, p.points_odom.len());
            if last_key != Some(key) {
                last_key = Some(key);
                reference_paths.push((p.points_odom.clone(), sim.world.clone()));
            }
        }
        if report.collision {
            break Outcome::Collision;
        }
        if report.goal_reached {
            break Outcome::GoalReached;
        }
    };
    let s = sim.state;
    poses.push(TimedPose {
        t: sim.time,
        x: s.pose.x,
        y: s.pose.y,
        theta: s.pose.theta,
        v: s.v,
        omega: s.omega,
    });
    let log_path = sim.finish_log(outcome).map_err(|e| e.to_string())?;
    Ok(RunResult {
        outcome,
        ticks: sim.tick,
        trajectory: RecordedTrajectory { source, poses },
        query_count: sim.navigator.query_count(),
        collisions: sim.collisions(),
        reference_paths,
        decisions,
        max_tick_period_s: max_period,
        log_path,
    })
}
