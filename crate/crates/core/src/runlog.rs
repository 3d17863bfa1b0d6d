//! Line-delimited JSON run logs: one header, one record per tick, one summary.
//!
//! Fields whose names start with `wall_` hold wall-clock measurements and are
//! the only fields allowed to differ between two runs of the same scenario.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Point2;
use crate::metrics::{RecordedTrajectory, TimedPose, TrajectorySource};
use crate::navigator::{QueryDecision, QueryEvent};
use crate::world::{step_kinematics, RobotState, VelocityCommand};

pub const LOG_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum RunLogError {
    #[error("{0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {source}")]
    Json {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("malformed log: {0}")]
    Malformed(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogHeader {
    pub schema_version: u32,
    pub scenario: String,
    pub source: TrajectorySource,
    pub backend: Option<String>,
    pub seed: u64,
    pub dt: f64,
    /// Robot state (pose, velocities and limits) at tick 0.
    pub robot: RobotState,
    pub goal: [f64; 2],
    pub ground_truth_path: Option<Vec<[f64; 2]>>,
    pub wall_started_unix: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoggedQuery {
    #[serde(flatten)]
    pub event: QueryEvent,
    /// Marked image sent with a request, relative to the log directory.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_file: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextSummary {
    pub id: String,
    pub probabilities: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TickRecord {
    pub tick: u64,
    pub t: f64,
    /// Pose and velocities at the start of the tick.
    pub pose: [f64; 3],
    pub v: f64,
    pub omega: f64,
    pub cmd: VelocityCommand,
    pub decision: Option<QueryDecision>,
    pub path_id: Option<u64>,
    /// Odometry-frame reference path, present on ticks where it changed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path_odom: Option<Vec<[f64; 2]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub query: Option<LoggedQuery>,
    pub context: Option<ContextSummary>,
    pub collision: bool,
    pub wall_time: f64,
    pub wall_tick_s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    GoalReached,
    Collision,
    TickLimit,
    Stopped,
}

impl Outcome {
    pub fn exit_code(self) -> i32 {
        match self {
            Outcome::GoalReached | Outcome::Stopped => 0,
            Outcome::Collision => 3,
            Outcome::TickLimit => 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogSummary {
    pub outcome: Outcome,
    pub ticks: u64,
    pub query_count: u64,
    pub final_pose: [f64; 3],
    pub wall_elapsed_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LogLine {
    Header(LogHeader),
    Tick(TickRecord),
    Summary(LogSummary),
}

pub struct RunLogWriter {
    dir: PathBuf,
    out: BufWriter<File>,
    next_tick: u64,
}

impl RunLogWriter {
    /// Creates `dir/run.jsonl` and `dir/images/`.
    pub fn create(dir: &Path, header: &LogHeader) -> Result<Self, RunLogError> {
        std::fs::create_dir_all(dir.join("images"))?;
        let mut w = Self {
            dir: dir.to_path_buf(),
            out: BufWriter::new(File::create(dir.join("run.jsonl"))?),
            next_tick: 0,
        };
        w.write(&LogLine::Header(header.clone()))?;
        Ok(w)
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn log_path(&self) -> PathBuf {
        self.dir.join("run.jsonl")
    }

    fn write(&mut self, line: &LogLine) -> Result<(), RunLogError> {
        serde_json::to_writer(&mut self.out, line).map_err(|e| RunLogError::Json { line: 0, source: e })?;
        self.out.write_all(b"\n")?;
        Ok(())
    }

    /// Saves a marked image and returns its path relative to the log directory.
    pub fn save_image(&self, name: &str, img: &image::RgbImage) -> Result<String, RunLogError> {
        let rel = format!("images/{name}");
        img.save(self.dir.join(&rel))
            .map_err(|e| RunLogError::Io(std::io::Error::other(e.to_string())))?;
        Ok(rel)
    }

    pub fn tick(&mut self, rec: &TickRecord) -> Result<(), RunLogError> {
        if rec.tick != self.next_tick {
            return Err(RunLogError::Malformed(format!(
                "tick {} written after tick {}",
                rec.tick,
                self.next_tick as i64 - 1
            )));
        }
        self.next_tick += 1;
        self.write(&LogLine::Tick(rec.clone()))
    }

    pub fn finish(mut self, summary: &LogSummary) -> Result<PathBuf, RunLogError> {
        self.write(&LogLine::Summary(summary.clone()))?;
        self.out.flush()?;
        Ok(self.log_path())
    }

    pub fn flush(&mut self) -> Result<(), RunLogError> {
        Ok(self.out.flush()?)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunLog {
    pub header: LogHeader,
    pub ticks: Vec<TickRecord>,
    pub summary: Option<LogSummary>,
}

impl RunLog {
    /// Reads a log file, or `run.jsonl` inside a directory.
    pub fn read(path: &Path) -> Result<Self, RunLogError> {
        let path = if path.is_dir() { path.join("run.jsonl") } else { path.to_path_buf() };
        let mut header = None;
        let mut ticks = Vec::new();
        let mut summary = None;
        for (i, line) in BufReader::new(File::open(&path)?).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            match serde_json::from_str(&line).map_err(|e| RunLogError::Json { line: i + 1, source: e })? {
                LogLine::Header(h) => {
                    if header.replace(h).is_some() {
                        return Err(RunLogError::Malformed("more than one header".into()));
                    }
                }
                LogLine::Tick(t) => {
                    if t.tick != ticks.len() as u64 {
                        return Err(RunLogError::Malformed(format!("line {}: tick {} out of order", i + 1, t.tick)));
                    }
                    ticks.push(t);
                }
                LogLine::Summary(s) => summary = Some(s),
            }
        }
        let header = header.ok_or_else(|| RunLogError::Malformed("missing header".into()))?;
        if header.schema_version != LOG_SCHEMA_VERSION {
            return Err(RunLogError::Malformed(format!(
                "unsupported log schema version {}",
                header.schema_version
            )));
        }
        Ok(Self { header, ticks, summary })
    }

    pub fn trajectory(&self) -> RecordedTrajectory {
        let mut poses: Vec<TimedPose> = self
            .ticks
            .iter()
            .map(|r| TimedPose {
                t: r.t,
                x: r.pose[0],
                y: r.pose[1],
                theta: r.pose[2],
                v: r.v,
                omega: r.omega,
            })
            .collect();
        if let (Some(s), Some(last)) = (&self.summary, poses.last().copied()) {
            poses.push(TimedPose {
                t: last.t + self.header.dt,
                x: s.final_pose[0],
                y: s.final_pose[1],
                theta: s.final_pose[2],
                v: last.v,
                omega: last.omega,
            });
        }
        RecordedTrajectory {
            source: self.header.source,
            poses,
        }
    }

    /// Every distinct reference path the run produced, in odom coordinates,
    /// with the tick it was (re)published.
    pub fn reference_paths(&self) -> Vec<(u64, Vec<Point2>)> {
        self.ticks
            .iter()
            .filter_map(|r| {
                r.path_odom
                    .as_ref()
                    .map(|p| (r.tick, p.iter().map(|q| Point2::new(q[0], q[1])).collect()))
            })
            .collect()
    }

    pub fn query_count(&self) -> u64 {
        self.ticks
            .iter()
            .filter(|r| matches!(r.query.as_ref().map(|q| &q.event), Some(QueryEvent::Request { .. })))
            .count() as u64
    }
}

/// Re-simulates the logged command stream from the logged initial state and
/// returns the first tick whose logged pose differs, if any.
pub fn replay_mismatch(log: &RunLog) -> Option<u64> {
    let mut state = log.header.robot;
    for r in &log.ticks {
        let logged = [r.pose[0], r.pose[1], r.pose[2]];
        let sim = [state.pose.x, state.pose.y, state.pose.theta];
        if logged != sim || r.v != state.v || r.omega != state.omega {
            return Some(r.tick);
        }
        state = step_kinematics(&state, r.cmd, log.header.dt);
    }
    match &log.summary {
        Some(s) if s.final_pose != [state.pose.x, state.pose.y, state.pose.theta] => {
            Some(log.ticks.len() as u64)
        }
        _ => None,
    }
}

/// Drops every object key starting with `wall_`, recursively.
pub fn strip_wall_fields(v: &mut serde_json::Value) {
    match v {
        serde_json::Value::Object(m) => {
            m.retain(|k, _| !k.starts_with("wall_"));
            m.values_mut().for_each(strip_wall_fields);
        }
        serde_json::Value::Array(a) => a.iter_mut().for_each(strip_wall_fields),
        _ => {}
    }
}

/// Log file contents with wall-clock fields removed, one JSON value per line.
pub fn deterministic_view(path: &Path) -> Result<Vec<String>, RunLogError> {
    let path = if path.is_dir() { path.join("run.jsonl") } else { path.to_path_buf() };
    let mut out = Vec::new();
    for (i, line) in BufReader::new(File::open(path)?).lines().enumerate() {
        let mut v: serde_json::Value =
            serde_json::from_str(&line?).map_err(|e| RunLogError::Json { line: i + 1, source: e })?;
        strip_wall_fields(&mut v);
        out.push(v.to_string());
    }
    Ok(out)
}
