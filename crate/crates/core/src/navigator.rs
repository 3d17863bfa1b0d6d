//! The navigation loop: marking, context recognition, VLM querying, path
//! lifting and extrapolation, and re-query gating on top of the planner.

use std::collections::BTreeSet;
use std::sync::Arc;

use image::RgbImage;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::context::{
    build_behavior_prompt, build_generic_prompt, classify_context, crop_patch, BehaviorRule, ContextCatalog,
    ContextClassifier, ContextEstimate, PatchClassifier, PatchQuery, Surface,
};
use crate::geometry::{Point2, Pose2D};
use crate::grid::Cell;
use crate::marking::{annotate_image, build_marker_set_with, CandidateLayout, MarkerSet};
use crate::planner::{plan, PlanOutcome, PlannerConfig};
use crate::scene::SceneView;
use crate::vlm::{OracleHint, PendingQuery, Poll, VlmBackend, VlmError, VlmRequest, VlmResponse};
use crate::world::{RobotState, VelocityCommand};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NavError {
    #[error("marker {0} is not in the marker set")]
    UnknownLabel(u32),
    #[error("empty marker selection")]
    EmptySelection,
    #[error("cannot fit a line: all path points coincide")]
    DegenerateFit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum NavMode {
    /// VLM-guided reference paths on top of the planner.
    #[default]
    Convoi,
    /// Plain dynamic-window planning toward the goal.
    Baseline,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NavigatorConfig {
    pub mode: NavMode,
    /// Re-query/extrapolate once the last reference point is closer than this.
    pub d_thresh: f64,
    /// Expected large-VLM response time, used only for the load-time sanity check.
    pub t_query: f64,
    pub v_max: f64,
    pub layout: CandidateLayout,
    pub n_pat: u32,
    pub tick_rate: f64,
    pub vlm_timeout_s: f64,
    /// Wait after a failed query before trying again.
    pub retry_cooldown_s: f64,
    /// Mark only obstacle-free, unoccluded candidates.
    pub free_space_marking: bool,
    /// Use the per-context behavior prompt instead of one generic prompt.
    pub context_prompting: bool,
    pub extrapolation: bool,
}

impl Default for NavigatorConfig {
    fn default() -> Self {
        Self {
            mode: NavMode::Convoi,
            d_thresh: 4.0,
            t_query: 5.0,
            v_max: 0.3,
            layout: CandidateLayout::outdoor(),
            n_pat: 200,
            tick_rate: 10.0,
            vlm_timeout_s: 15.0,
            retry_cooldown_s: 3.0,
            free_space_marking: true,
            context_prompting: true,
            extrapolation: true,
        }
    }
}

impl NavigatorConfig {
    pub fn validate(&self) -> Result<(), String> {
        self.layout.validate()?;
        if !(self.d_thresh > 0.0 && self.t_query > 0.0 && self.v_max > 0.0 && self.tick_rate > 0.0) {
            return Err("d_thresh, t_query, v_max and tick_rate must be positive".into());
        }
        if !(self.vlm_timeout_s > 0.0) || self.retry_cooldown_s < 0.0 {
            return Err("vlm_timeout_s must be positive and retry_cooldown_s non-negative".into());
        }
        if self.n_pat == 0 {
            return Err("n_pat must be positive".into());
        }
        Ok(())
    }

    /// Warning text when `d_thresh` and `v_max * t_query` differ by more than 2x.
    pub fn d_thresh_warning(&self) -> Option<String> {
        let travel = self.v_max * self.t_query;
        let ratio = self.d_thresh / travel;
        (!(0.5..=2.0).contains(&ratio)).then(|| {
            format!(
                "d_thresh = {:.2} m differs from v_max * t_query = {:.2} m by {:.1}x",
                self.d_thresh, travel, ratio.max(1.0 / ratio)
            )
        })
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.tick_rate
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferencePath {
    pub id: u64,
    /// Odometry-frame points, ascending forward distance at creation.
    pub points_odom: Vec<Point2>,
    /// Grid cells of the points in the occupancy grid they were validated against.
    pub points_grid: Vec<Cell>,
    pub source_markers: Vec<u32>,
    /// How many trailing points came from extrapolation.
    pub extrapolated: usize,
    pub context_at_creation: String,
    pub created_tick: u64,
}

impl ReferencePath {
    pub fn points_robot(&self, pose: &Pose2D) -> Vec<Point2> {
        let to_robot = pose.to_parent(crate::geometry::Frame::Robot).invert();
        self.points_odom.iter().map(|p| to_robot.map(*p)).collect()
    }

    pub fn last_odom(&self) -> Point2 {
        *self.points_odom.last().expect("reference path is nonempty")
    }
}

/// Looks up the selected markers and orders them by forward distance.
pub fn lift_markers_to_path(
    markers: &[u32],
    ms: &MarkerSet,
    context: &str,
    id: u64,
) -> Result<ReferencePath, NavError> {
    if markers.is_empty() {
        return Err(NavError::EmptySelection);
    }
    let mut entries = markers
        .iter()
        .map(|l| ms.get(*l).copied().ok_or(NavError::UnknownLabel(*l)))
        .collect::<Result<Vec<_>, _>>()?;
    entries.sort_by(|a, b| a.ground_point.x.total_cmp(&b.ground_point.x));
    Ok(ReferencePath {
        id,
        points_odom: entries.iter().map(|e| ms.odom_point(e)).collect(),
        points_grid: entries.iter().map(|e| e.grid_cell).collect(),
        source_markers: entries.iter().map(|e| e.label).collect(),
        extrapolated: 0,
        context_at_creation: context.to_string(),
        created_tick: ms.tick,
    })
}

/// Extends a robot-frame path by `d_row` along its total-least-squares line.
/// The line is oriented along the path (first to last point, or away from the
/// robot when that is ambiguous) and the extension starts from the point
/// farthest along it, so old points left behind the robot never anchor it.
pub fn extrapolate_path(points: &[Point2], d_row: f64) -> Result<Point2, NavError> {
    let (first, last) = match (points.first(), points.last()) {
        (Some(f), Some(l)) => (*f, *l),
        _ => return Err(NavError::DegenerateFit),
    };
    let dir = if points.len() == 1 {
        if last.norm() < 1e-9 {
            return Err(NavError::DegenerateFit);
        }
        last * (1.0 / last.norm())
    } else {
        let n = points.len() as f64;
        let c = points.iter().fold(Point2::ORIGIN, |acc, p| acc + *p) * (1.0 / n);
        let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
        for p in points {
            let d = *p - c;
            sxx += d.x * d.x;
            sxy += d.x * d.y;
            syy += d.y * d.y;
        }
        if sxx + syy < 1e-12 {
            return Err(NavError::DegenerateFit);
        }
        let a = 0.5 * (2.0 * sxy).atan2(sxx - syy);
        let d = Point2::new(a.cos(), a.sin());
        let along = d.dot(last - first);
        let forward = if along.abs() > 1e-9 { along > 0.0 } else { d.dot(c) >= 0.0 };
        if forward {
            d
        } else {
            d * -1.0
        }
    };
    let tip = points
        .iter()
        .copied()
        .max_by(|a, b| a.dot(dir).total_cmp(&b.dot(dir)))
        .expect("nonempty");
    Ok(tip + dir * d_row)
}

/// Obstacle-free, visible, and on a paved patch.
pub fn validate_extrapolation(
    p: Point2,
    scene: &SceneView<'_>,
    patch: &dyn PatchClassifier,
    n_pat: u32,
) -> bool {
    let cell = scene.grid.cell_of(p);
    if !scene.grid.line_of_sight_free(cell).unwrap_or(false) {
        return false;
    }
    let Some(px) = scene.camera.project_ground_to_pixel(p).pixel() else {
        return false;
    };
    let q = PatchQuery {
        patch: crop_patch(scene.image(), (px.u, px.v), n_pat),
        center_odom: scene.to_odom(p),
        world: scene.world,
    };
    matches!(patch.classify_patch_paved(&q), Ok(Surface::Paved))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueryDecision {
    FollowCurrent,
    Extrapolate,
    RequeryLargeVlm,
    FallbackBaseline,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum QueryEvent {
    Request {
        request_id: u64,
        context: Option<String>,
        labels: Vec<u32>,
        prompt: String,
    },
    Response {
        request_id: u64,
        markers: Vec<u32>,
        raw_text: String,
        latency_s: f64,
        wall_latency_s: f64,
        path_id: u64,
    },
    Failure {
        request_id: Option<u64>,
        error: String,
    },
}

/// Everything one navigator tick produced.
#[derive(Debug, Clone)]
pub struct TickOutput {
    pub cmd: VelocityCommand,
    pub plan: PlanOutcome,
    pub decision: QueryDecision,
    pub path_id: Option<u64>,
    pub path_robot: Vec<Point2>,
    pub event: Option<QueryEvent>,
    /// Marked image sent with a request issued this tick.
    pub marked_image: Option<RgbImage>,
    pub context: Option<ContextEstimate>,
}

struct InFlight {
    query: PendingQuery,
    markers: MarkerSet,
    context_id: String,
    /// Sim time the reply becomes visible (deterministic backends).
    due: Option<f64>,
    /// Sim time after which a live backend's reply is abandoned.
    deadline: f64,
}

pub struct Navigator {
    pub cfg: NavigatorConfig,
    pub planner: PlannerConfig,
    pub catalog: ContextCatalog,
    backend: Option<Arc<dyn VlmBackend>>,
    context: Box<dyn ContextClassifier>,
    patch: Box<dyn PatchClassifier>,
    path: Option<ReferencePath>,
    pending: Option<InFlight>,
    last_context: Option<ContextEstimate>,
    cooldown_until: f64,
    next_request_id: u64,
    next_path_id: u64,
    query_count: u64,
    last_markers: Option<MarkerSet>,
}

impl Navigator {
    pub fn new(
        cfg: NavigatorConfig,
        planner: PlannerConfig,
        catalog: ContextCatalog,
        backend: Option<Arc<dyn VlmBackend>>,
        context: Box<dyn ContextClassifier>,
        patch: Box<dyn PatchClassifier>,
    ) -> Self {
        if let Some(w) = cfg.d_thresh_warning() {
            log::warn!("{w}");
        }
        Self {
            cfg,
            planner,
            catalog,
            backend,
            context,
            patch,
            path: None,
            pending: None,
            last_context: None,
            cooldown_until: f64::NEG_INFINITY,
            next_request_id: 1,
            next_path_id: 1,
            query_count: 0,
            last_markers: None,
        }
    }

    pub fn path(&self) -> Option<&ReferencePath> {
        self.path.as_ref()
    }

    pub fn query_count(&self) -> u64 {
        self.query_count
    }

    /// Markers sent with the most recent query.
    pub fn last_markers(&self) -> Option<&MarkerSet> {
        self.last_markers.as_ref()
    }

    pub fn query_in_flight(&self) -> bool {
        self.pending.is_some()
    }

    pub fn tick(&mut self, scene: &SceneView<'_>, state: &RobotState) -> TickOutput {
        let mut event = self.poll_pending(scene);
        let responded = event.is_some();
        if self.context.is_cheap() {
            self.refresh_context(scene);
        }
        let mut marked_image = None;
        let mut decision = self.decide(scene, responded);
        if decision == QueryDecision::RequeryLargeVlm {
            match self.issue_query(scene) {
                Ok((ev, img)) => {
                    event = Some(ev);
                    marked_image = Some(img);
                }
                Err(e) => {
                    self.fail(scene.time);
                    event = Some(QueryEvent::Failure {
                        request_id: None,
                        error: e,
                    });
                    decision = QueryDecision::FallbackBaseline;
                }
            }
        }

        let path_robot = self
            .path
            .as_ref()
            .map(|p| p.points_robot(&scene.pose))
            .unwrap_or_default();
        let goal = scene.odom_to_robot().map(scene.world.goal);
        let reference = (self.cfg.mode == NavMode::Convoi && !path_robot.is_empty()).then_some(&path_robot[..]);
        let outcome = plan(
            VelocityCommand::new(state.v, state.omega),
            scene.grid,
            goal,
            reference,
            &self.planner,
        );
        TickOutput {
            cmd: outcome.cmd,
            plan: outcome,
            decision,
            path_id: self.path.as_ref().map(|p| p.id),
            path_robot,
            event,
            marked_image,
            context: self.last_context.clone(),
        }
    }

    fn refresh_context(&mut self, scene: &SceneView<'_>) {
        match classify_context(self.context.as_ref(), scene, &self.catalog) {
            Ok(est) => self.last_context = Some(est),
            Err(e) => log::debug!("context classification failed at tick {}: {e}", scene.tick),
        }
    }

    fn fail(&mut self, now: f64) {
        self.path = None;
        self.cooldown_until = now + self.cfg.retry_cooldown_s;
    }

    fn poll_pending(&mut self, scene: &SceneView<'_>) -> Option<QueryEvent> {
        let inflight = self.pending.as_ref()?;
        let now = scene.time;
        let result = match inflight.due {
            Some(due) if now + 1e-9 >= due => Some(inflight.query.block()),
            Some(_) => None,
            None => match inflight.query.try_poll() {
                Poll::Ready(r) => Some(r),
                Poll::Pending if now + 1e-9 >= inflight.deadline => {
                    Some(Err(VlmError::Timeout(self.cfg.vlm_timeout_s)))
                }
                Poll::Pending => None,
            },
        }?;
        let inflight = self.pending.take().expect("checked above");
        let request_id = inflight.query.request_id;
        match result.map_err(|e| e.to_string()).and_then(|resp| {
            self.lift(&resp, &inflight).map(|id| (resp, id)).map_err(|e| e.to_string())
        }) {
            Ok((resp, path_id)) => Some(QueryEvent::Response {
                request_id,
                markers: resp.markers,
                raw_text: resp.raw_text,
                latency_s: resp.latency_s,
                wall_latency_s: resp.wall_latency_s,
                path_id,
            }),
            Err(error) => {
                log::warn!("query {request_id} failed: {error}");
                self.fail(now);
                Some(QueryEvent::Failure {
                    request_id: Some(request_id),
                    error,
                })
            }
        }
    }

    fn lift(&mut self, resp: &VlmResponse, inflight: &InFlight) -> Result<u64, NavError> {
        let id = self.next_path_id;
        let path = lift_markers_to_path(&resp.markers, &inflight.markers, &inflight.context_id, id)?;
        self.next_path_id += 1;
        self.path = Some(path);
        Ok(id)
    }

    fn decide(&mut self, scene: &SceneView<'_>, responded: bool) -> QueryDecision {
        let hold = |path: &Option<ReferencePath>| {
            if path.is_some() {
                QueryDecision::FollowCurrent
            } else {
                QueryDecision::FallbackBaseline
            }
        };
        if self.cfg.mode == NavMode::Baseline || self.backend.is_none() {
            return QueryDecision::FallbackBaseline;
        }
        if self.pending.is_some() || responded || scene.time < self.cooldown_until {
            return hold(&self.path);
        }
        let Some(last) = self.path.as_ref().map(|p| p.last_odom()) else {
            if !self.context.is_cheap() {
                self.refresh_context(scene);
            }
            return QueryDecision::RequeryLargeVlm;
        };
        if scene.odom_to_robot().map(last).norm() >= self.cfg.d_thresh {
            return QueryDecision::FollowCurrent;
        }
        if !self.context.is_cheap() {
            self.refresh_context(scene);
        }
        let path = self.path.as_ref().expect("path present");
        let same = self
            .last_context
            .as_ref()
            .map_or(true, |c| c.winner_id == path.context_at_creation);
        if !same {
            // no stale guidance across a context change
            self.path = None;
            return QueryDecision::RequeryLargeVlm;
        }
        if self.cfg.extrapolation {
            let pts = path.points_robot(&scene.pose);
            if let Ok(p) = extrapolate_path(&pts, self.cfg.layout.d_row) {
                if validate_extrapolation(p, scene, self.patch.as_ref(), self.cfg.n_pat) {
                    let path = self.path.as_mut().expect("path present");
                    path.points_odom.push(scene.to_odom(p));
                    path.points_grid.push(scene.grid.cell_of(p));
                    path.extrapolated += 1;
                    return QueryDecision::Extrapolate;
                }
            }
        }
        QueryDecision::RequeryLargeVlm
    }

    fn issue_query(&mut self, scene: &SceneView<'_>) -> Result<(QueryEvent, RgbImage), String> {
        let backend = self.backend.clone().ok_or("no VLM backend configured")?;
        let ms = build_marker_set_with(
            scene.grid,
            &self.cfg.layout,
            scene.camera,
            scene.pose,
            scene.tick,
            self.cfg.free_space_marking,
        );
        if ms.is_empty() {
            return Err("no candidate could be marked".into());
        }
        let estimate = self.last_context.clone();
        let (prompt, rule) = match (&estimate, self.cfg.context_prompting) {
            (Some(est), true) => (build_behavior_prompt(&est.behavior), est.rule),
            _ => (build_generic_prompt(&self.catalog), BehaviorRule::MoveOnPavement),
        };
        let context_id = estimate.as_ref().map(|e| e.winner_id.clone());
        let marked = annotate_image(scene.image(), &ms);
        let request_id = self.next_request_id;
        self.next_request_id += 1;
        self.query_count += 1;
        let labels: Vec<u32> = ms.labels();
        let req = VlmRequest {
            marked_image: marked.clone(),
            prompt: prompt.clone(),
            valid_labels: labels.iter().copied().collect::<BTreeSet<u32>>(),
            timeout_s: self.cfg.vlm_timeout_s,
            request_id,
            oracle_hint: Some(OracleHint {
                world: Arc::new(scene.world.clone()),
                markers: ms.clone(),
                rule,
            }),
        };
        let due = backend.simulated_latency().map(|l| scene.time + l);
        let query = PendingQuery::spawn(backend, req, scene.time);
        self.last_markers = Some(ms.clone());
        self.pending = Some(InFlight {
            query,
            markers: ms,
            context_id: context_id.clone().unwrap_or_default(),
            due,
            deadline: scene.time + self.cfg.vlm_timeout_s,
        });
        Ok((
            QueryEvent::Request {
                request_id,
                context: context_id,
                labels,
                prompt,
            },
            marked,
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{CameraModel, Frame};
    use crate::grid::OccupancyGrid;
    use crate::marking::build_marker_set;

    fn lattice() -> MarkerSet {
        build_marker_set(
            &OccupancyGrid::empty(200, 0.1),
            &CandidateLayout::outdoor(),
            &CameraModel::default(),
            Pose2D::new(0.0, 0.0, 0.0, Frame::Odom),
            0,
        )
    }

    #[test]
    fn lift_examples() {
        let ms = lattice();
        let p = lift_markers_to_path(&[6, 12], &ms, "c", 1).unwrap();
        assert_eq!(p.points_odom, vec![Point2::new(2.5, -5.0), Point2::new(5.0, -5.0)]);
        let q = lift_markers_to_path(&[12, 6], &ms, "c", 1).unwrap();
        assert_eq!(p.points_odom, q.points_odom);
        assert_eq!(lift_markers_to_path(&[99], &ms, "c", 1), Err(NavError::UnknownLabel(99)));
    }

    #[test]
    fn lifted_points_follow_odometry() {
        let mut ms = lattice();
        ms.robot_pose = Pose2D::new(1.0, 2.0, 0.5, Frame::Odom);
        let p = lift_markers_to_path(&[6, 12], &ms, "c", 1).unwrap();
        let back = p.points_robot(&ms.robot_pose);
        assert!(back[0].dist(Point2::new(2.5, -5.0)) < 1e-9);
        let moved = Pose2D::new(2.0, 2.5, 0.2, Frame::Odom);
        let via = moved.to_parent(Frame::Robot).invert().compose(&ms.robot_pose.to_parent(Frame::Robot));
        let via = via.unwrap();
        for (a, b) in p.points_robot(&moved).iter().zip([Point2::new(2.5, -5.0), Point2::new(5.0, -5.0)]) {
            assert!(a.dist(via.map(b)) < 1e-6);
        }
    }

    #[test]
    fn extrapolation_examples() {
        let p = extrapolate_path(&[Point2::new(2.5, 0.0), Point2::new(5.0, 0.0)], 2.5).unwrap();
        assert!(p.dist(Point2::new(7.5, 0.0)) < 1e-12);
        let p = extrapolate_path(&[Point2::new(2.5, 0.5), Point2::new(5.0, 1.0)], 2.5).unwrap();
        assert!(p.dist(Point2::new(7.4515, 1.4903)) < 1e-3);
        assert_eq!(
            extrapolate_path(&[Point2::new(1.0, 1.0), Point2::new(1.0, 1.0)], 2.5),
            Err(NavError::DegenerateFit)
        );
        let single = extrapolate_path(&[Point2::new(3.0, 4.0)], 5.0).unwrap();
        assert!(single.dist(Point2::new(6.0, 8.0)) < 1e-12);
    }

    #[test]
    fn extrapolation_ignores_points_left_behind() {
        // the oldest point is now the farthest from the robot but lies behind it
        let pts = [Point2::new(-6.0, 0.0), Point2::new(-3.5, 0.0), Point2::new(1.0, 0.0)];
        let p = extrapolate_path(&pts, 2.5).unwrap();
        assert!(p.dist(Point2::new(3.5, 0.0)) < 1e-12);
        // symmetric pair with the centroid at the robot: falls back to path order
        let p = extrapolate_path(&[Point2::new(0.0, -1.0), Point2::new(0.0, 1.0)], 1.0).unwrap();
        assert!(p.dist(Point2::new(0.0, 2.0)) < 1e-12);
    }

    #[test]
    fn d_thresh_check() {
        let cfg = NavigatorConfig::default();
        assert!(cfg.d_thresh_warning().is_some());
        let ok = NavigatorConfig {
            d_thresh: 1.5,
            ..cfg
        };
        assert!(ok.d_thresh_warning().is_none());
    }
}
