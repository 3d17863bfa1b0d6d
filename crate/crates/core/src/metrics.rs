//! Trajectory and reference-path metrics.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Point2;
use crate::world::{SemanticWorld, TerrainClass};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("empty polyline")]
    Empty,
    #[error("start and goal coincide")]
    ZeroStraightLine,
    #[error("path has zero displacement")]
    DegeneratePath,
    #[error("timestamps are not strictly increasing")]
    NonMonotoneTime,
}

/// Discrete Frechet distance between two polylines.
pub fn discrete_frechet(a: &[Point2], b: &[Point2]) -> Result<f64, MetricsError> {
    if a.is_empty() || b.is_empty() {
        return Err(MetricsError::Empty);
    }
    let m = b.len();
    let mut prev = vec![0.0f64; m];
    let mut cur = vec![0.0f64; m];
    for (i, pa) in a.iter().enumerate() {
        for (j, pb) in b.iter().enumerate() {
            let d = pa.dist(*pb);
            cur[j] = match (i, j) {
                (0, 0) => d,
                (0, _) => cur[j - 1].max(d),
                (_, 0) => prev[0].max(d),
                _ => prev[j].min(prev[j - 1]).min(cur[j - 1]).max(d),
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    Ok(prev[m - 1])
}

/// Arc-length spacing used before comparing trajectories with Fréchet distance.
pub const FRECHET_SPACING: f64 = 0.1;

/// Discrete Fréchet distance between two curves after resampling both at
/// [`FRECHET_SPACING`], so sampling density (a sparse scripted path, a robot
/// idling in place) does not bias the coupling.
pub fn trajectory_frechet(a: &[Point2], b: &[Point2]) -> Result<f64, MetricsError> {
    discrete_frechet(&resample_polyline(a, FRECHET_SPACING), &resample_polyline(b, FRECHET_SPACING))
}

pub fn arc_length(p: &[Point2]) -> f64 {
    p.windows(2).map(|w| w[0].dist(w[1])).sum()
}

pub fn norm_traj_length(p: &[Point2], start: Point2, goal: Point2) -> Result<f64, MetricsError> {
    let straight = start.dist(goal);
    if straight < 1e-12 {
        return Err(MetricsError::ZeroStraightLine);
    }
    Ok(arc_length(p) / straight)
}

pub fn centroid(p: &[Point2]) -> Result<Point2, MetricsError> {
    if p.is_empty() {
        return Err(MetricsError::Empty);
    }
    Ok(p.iter().fold(Point2::ORIGIN, |acc, q| acc + *q) * (1.0 / p.len() as f64))
}

/// Distance between the centroids of the ground-truth and reference paths.
pub fn ref_path_error(gt: &[Point2], reference: &[Point2]) -> Result<f64, MetricsError> {
    Ok(centroid(gt)?.dist(centroid(reference)?))
}

/// Cosine of the angle between the end-to-end displacements of two paths.
pub fn cosine_similarity(gt: &[Point2], reference: &[Point2]) -> Result<f64, MetricsError> {
    let disp = |p: &[Point2]| -> Result<Point2, MetricsError> {
        let (f, l) = (p.first().ok_or(MetricsError::Empty)?, p.last().ok_or(MetricsError::Empty)?);
        let d = *l - *f;
        if d.norm() < 1e-12 {
            Err(MetricsError::DegeneratePath)
        } else {
            Ok(d)
        }
    };
    let (a, b) = (disp(gt)?, disp(reference)?);
    Ok((a.dot(b) / (a.norm() * b.norm())).clamp(-1.0, 1.0))
}

/// Where a reference point may not lie.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct AcceptabilityPolicy {
    pub unacceptable_terrain: Vec<TerrainClass>,
}

pub fn point_unacceptable(p: Point2, world: &SemanticWorld, policy: &AcceptabilityPolicy) -> bool {
    world.inside_obstacle(p)
        || world.inside_pedestrian(p)
        || policy.unacceptable_terrain.contains(&world.semantic_at(p))
}

/// Fraction of reference paths with any unacceptable point. Each path is
/// judged against the world snapshot it was produced in.
pub fn pct_unacceptable<'a>(
    paths: impl IntoIterator<Item = (&'a [Point2], &'a SemanticWorld)>,
    policy: &AcceptabilityPolicy,
) -> f64 {
    let (mut bad, mut total) = (0usize, 0usize);
    for (path, world) in paths {
        total += 1;
        if path.iter().any(|p| point_unacceptable(*p, world, policy)) {
            bad += 1;
        }
    }
    if total == 0 {
        0.0
    } else {
        bad as f64 / total as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimedPose {
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub theta: f64,
    pub v: f64,
    pub omega: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrajectorySource {
    Convoi,
    Baseline,
    Teleop,
    Scripted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordedTrajectory {
    pub source: TrajectorySource,
    pub poses: Vec<TimedPose>,
}

impl RecordedTrajectory {
    pub fn new(source: TrajectorySource, poses: Vec<TimedPose>) -> Result<Self, MetricsError> {
        if poses.windows(2).any(|w| !(w[1].t > w[0].t)) {
            return Err(MetricsError::NonMonotoneTime);
        }
        Ok(Self { source, poses })
    }

    pub fn positions(&self) -> Vec<Point2> {
        self.poses.iter().map(|p| Point2::new(p.x, p.y)).collect()
    }

    /// Mean commanded linear speed over samples.
    pub fn mean_velocity(&self) -> f64 {
        if self.poses.is_empty() {
            return 0.0;
        }
        self.poses.iter().map(|p| p.v).sum::<f64>() / self.poses.len() as f64
    }
}

/// Resamples a polyline at fixed arc-length spacing (endpoints kept).
pub fn resample_polyline(p: &[Point2], spacing: f64) -> Vec<Point2> {
    assert!(spacing > 0.0);
    let Some(first) = p.first() else {
        return Vec::new();
    };
    let mut out = vec![*first];
    // arc length walked since the last emitted point
    let mut since = 0.0;
    for w in p.windows(2) {
        let seg = w[1] - w[0];
        let len = seg.norm();
        let mut s = spacing - since;
        while s < len - 1e-12 {
            out.push(w[0] + seg * (s / len));
            s += spacing;
        }
        since = len - (s - spacing);
    }
    let last = *p.last().unwrap();
    if out.last().map_or(true, |q| q.dist(last) > 1e-12) {
        out.push(last);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct MetricsReport {
    pub method: String,
    pub frechet: Option<f64>,
    pub norm_traj_length: Option<f64>,
    pub mean_velocity: f64,
    pub ref_path_error: Option<f64>,
    pub cosine_similarity: Option<f64>,
    pub pct_unacceptable: Option<f64>,
    pub query_count: u64,
    pub reached_goal: bool,
    pub collisions: u64,
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.3}")).unwrap_or_else(|| "-".into())
}

/// Plain-text comparison table, one row per method.
pub fn format_table(rows: &[MetricsReport]) -> String {
    let mut s = format!(
        "{:<10} {:>9} {:>10} {:>9} {:>9} {:>9} {:>9} {:>8}\n",
        "method", "frechet", "norm_len", "mean_v", "ref_err", "cos_sim", "unacc", "queries"
    );
    for r in rows {
        s.push_str(&format!(
            "{:<10} {:>9} {:>10} {:>9.3} {:>9} {:>9} {:>9} {:>8}\n",
            r.method,
            cell(r.frechet),
            cell(r.norm_traj_length),
            r.mean_velocity,
            cell(r.ref_path_error),
            cell(r.cosine_similarity),
            cell(r.pct_unacceptable),
            r.query_count
        ));
    }
    s
}
