//! Metrics tables computed from run logs.

use thiserror::Error;

use crate::geometry::Point2;
use crate::metrics::{
    cosine_similarity, trajectory_frechet, norm_traj_length, pct_unacceptable, ref_path_error, resample_polyline,
    MetricsError, MetricsReport,
};
use crate::runlog::{Outcome, RunLog};
use crate::world::scenario::Scenario;
use crate::world::SemanticWorld;

/// Spacing used to resample ground-truth curves before slicing them.
const GT_SPACING: f64 = 0.1;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("scenario mismatch: {method} log is for {found:?}, expected {expected:?}")]
    ScenarioMismatch {
        method: String,
        expected: String,
        found: String,
    },
    #[error("no logs to evaluate")]
    NoLogs,
    #[error("{method}: {source}")]
    Metrics {
        method: String,
        #[source]
        source: MetricsError,
    },
}

#[derive(Debug, Clone, Default)]
pub struct EvalOutput {
    pub rows: Vec<MetricsReport>,
    pub warnings: Vec<String>,
}

/// Builds one row per `(method, log)`. Fréchet distance is measured against
/// `teleop`; without it that column stays empty and a warning is recorded.
/// Reference-path metrics use the teleop trajectory, else the scripted ground
/// truth from the log header. `scenario` enables the unacceptable-path rate.
pub fn evaluate(
    runs: &[(&str, &RunLog)],
    teleop: Option<&RunLog>,
    scenario: Option<&Scenario>,
) -> Result<EvalOutput, EvalError> {
    let first = runs
        .first()
        .map(|(_, l)| l)
        .or(teleop.as_ref())
        .ok_or(EvalError::NoLogs)?;
    let expected = scenario.map_or(first.header.scenario.clone(), |s| s.name.clone());
    let check = |method: &str, log: &RunLog| {
        if log.header.scenario != expected {
            Err(EvalError::ScenarioMismatch {
                method: method.to_string(),
                expected: expected.clone(),
                found: log.header.scenario.clone(),
            })
        } else {
            Ok(())
        }
    };
    for (m, l) in runs {
        check(m, l)?;
    }
    if let Some(t) = teleop {
        check("teleop", t)?;
    }

    let mut out = EvalOutput::default();
    let teleop_path = teleop.map(|t| t.trajectory().positions());
    if teleop_path.is_none() {
        out.warnings
            .push("no teleop log given: Fréchet distance omitted".to_string());
    }
    let mut rows: Vec<(&str, &RunLog)> = runs.to_vec();
    if let Some(t) = teleop {
        rows.push(("teleop", t));
    }
    for (method, log) in rows {
        let err = |source| EvalError::Metrics {
            method: method.to_string(),
            source,
        };
        let traj = log.trajectory();
        let pos = traj.positions();
        let goal = Point2::new(log.header.goal[0], log.header.goal[1]);
        let start = log.header.robot.pose.position();
        let frechet = match &teleop_path {
            Some(gt) if !pos.is_empty() => Some(trajectory_frechet(&pos, gt).map_err(err)?),
            _ => None,
        };
        let gt = teleop_path.clone().or_else(|| {
            log.header
                .ground_truth_path
                .as_ref()
                .map(|p| p.iter().map(|q| Point2::new(q[0], q[1])).collect())
        });
        let refs = log.reference_paths();
        let (ref_err, cos) = match &gt {
            Some(gt) if !refs.is_empty() => reference_metrics(gt, refs.iter().map(|(_, p)| p.as_slice())),
            _ => (None, None),
        };
        let unacceptable = scenario.filter(|_| !refs.is_empty()).map(|s| {
            let snapshots = world_snapshots(&s.world, log, refs.iter().map(|(t, _)| *t));
            pct_unacceptable(
                refs.iter().zip(&snapshots).map(|((_, p), w)| (p.as_slice(), w)),
                &s.acceptability,
            )
        });
        out.rows.push(MetricsReport {
            method: method.to_string(),
            frechet,
            norm_traj_length: norm_traj_length(&pos, start, goal).ok(),
            mean_velocity: traj.mean_velocity(),
            ref_path_error: ref_err,
            cosine_similarity: cos,
            pct_unacceptable: unacceptable,
            query_count: log.query_count(),
            reached_goal: log.summary.as_ref().map(|s| s.outcome) == Some(Outcome::GoalReached),
            collisions: log.ticks.iter().filter(|r| r.collision).count() as u64,
        });
    }
    Ok(out)
}

/// Portion of `gt` between the points nearest to `from` and `to`.
pub fn gt_slice(gt: &[Point2], from: Point2, to: Point2) -> Vec<Point2> {
    let nearest = |q: Point2| {
        gt.iter()
            .enumerate()
            .min_by(|a, b| a.1.dist(q).total_cmp(&b.1.dist(q)))
            .map_or(0, |(i, _)| i)
    };
    let (a, b) = (nearest(from), nearest(to));
    if a <= b {
        gt[a..=b].to_vec()
    } else {
        gt[b..=a].iter().rev().copied().collect()
    }
}

/// Mean centroid error and cosine similarity of each reference path against
/// the matching stretch of the ground truth.
pub fn reference_metrics<'a>(
    gt: &[Point2],
    paths: impl IntoIterator<Item = &'a [Point2]>,
) -> (Option<f64>, Option<f64>) {
    let gt = resample_polyline(gt, GT_SPACING);
    let (mut errs, mut coss) = (Vec::new(), Vec::new());
    for p in paths {
        let (Some(first), Some(last)) = (p.first(), p.last()) else {
            continue;
        };
        let seg = gt_slice(&gt, *first, *last);
        if let Ok(e) = ref_path_error(&seg, p) {
            errs.push(e);
        }
        if let Ok(c) = cosine_similarity(&seg, p) {
            coss.push(c);
        }
    }
    let mean = |v: Vec<f64>| (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);
    (mean(errs), mean(coss))
}

/// Re-runs the pedestrians against the logged robot poses and returns the
/// world at each requested tick (ticks must be ascending).
pub fn world_snapshots(
    initial: &SemanticWorld,
    log: &RunLog,
    ticks: impl IntoIterator<Item = u64>,
) -> Vec<SemanticWorld> {
    let mut world = initial.clone();
    let mut at = 0u64;
    let radius = log.header.robot.radius;
    let mut out = Vec::new();
    for t in ticks {
        while at < t {
            if let Some(r) = log.ticks.get(at as usize) {
                // poses are logged at the start of a tick, the world steps after
                // the robot moved, so use the next tick's pose
                let p = log
                    .ticks
                    .get(at as usize + 1)
                    .map_or(Point2::new(r.pose[0], r.pose[1]), |n| Point2::new(n.pose[0], n.pose[1]));
                world.step_yielding(log.header.dt, p, radius);
            }
            at += 1;
        }
        out.push(world.clone());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slice_follows_direction() {
        let gt: Vec<Point2> = (0..=10).map(|i| Point2::new(i as f64, 0.0)).collect();
        let s = gt_slice(&gt, Point2::new(2.1, 1.0), Point2::new(5.2, -1.0));
        assert_eq!(s.first(), Some(&Point2::new(2.0, 0.0)));
        assert_eq!(s.last(), Some(&Point2::new(5.0, 0.0)));
        let r = gt_slice(&gt, Point2::new(5.0, 0.0), Point2::new(2.0, 0.0));
        assert_eq!(r.first(), Some(&Point2::new(5.0, 0.0)));
    }

    #[test]
    fn identical_reference_is_perfect() {
        let gt: Vec<Point2> = (0..=10).map(|i| Point2::new(i as f64, 1.0)).collect();
        let p = vec![Point2::new(2.0, 1.0), Point2::new(6.0, 1.0)];
        let (e, c) = reference_metrics(&gt, [p.as_slice()]);
        assert!(e.unwrap() < 1e-9);
        assert!((c.unwrap() - 1.0).abs() < 1e-12);
    }
}
