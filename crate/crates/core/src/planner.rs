//! Dynamic-window velocity planner with an optional reference-path term.
//!
//! Cost of a sampled command `(v, w)`:
//!
//! ```text
//! Q1 = sigma(a1 * head + a2 * obs + a3 * vel)
//! Q2 = Q1 + a4 * ref     when a reference point lies ahead and |theta_goal| <= theta_fov
//! ```
//!
//! `head`, `obs` and `vel` are normalized to `[0, 1]`; `ref` is a lateral offset in meters.


use serde::{Deserialize, Serialize};

use crate::geometry::Point2;
use crate::grid::OccupancyGrid;
use crate::world::arc_offset;
use crate::world::VelocityCommand;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlannerConfig {
    pub alpha_head: f64,
    pub alpha_obs: f64,
    pub alpha_vel: f64,
    pub alpha_ref: f64,
    pub v_max: f64,
    pub omega_max: f64,
    pub accel: f64,
    pub alpha_accel: f64,
    pub dt: f64,
    pub t_hor: f64,
    pub v_samples: usize,
    pub omega_samples: usize,
    pub theta_fov: f64,
    /// Clearance at which the obstacle cost reaches zero.
    pub d_clear: f64,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            alpha_head: 10.0,
            alpha_obs: 7.0,
            alpha_vel: 1.0,
            alpha_ref: 7.5,
            v_max: 0.3,
            omega_max: 1.0,
            accel: 0.5,
            alpha_accel: 2.0,
            dt: 0.2,
            t_hor: 3.0,
            v_samples: 7,
            omega_samples: 15,
            theta_fov: 1.2,
            d_clear: 1.0,
        }
    }
}

impl PlannerConfig {
    pub fn validate(&self) -> Result<(), String> {
        let weights = [self.alpha_head, self.alpha_obs, self.alpha_vel, self.alpha_ref];
        if weights.iter().any(|w| !(*w > 0.0)) {
            return Err("planner weights must be positive".into());
        }
        if !(self.dt > 0.0 && self.dt < self.t_hor) {
            return Err("need 0 < dt < t_hor".into());
        }
        if self.v_samples < 3 || self.omega_samples < 3 {
            return Err("need at least 3 samples per velocity axis".into());
        }
        if !(self.v_max > 0.0 && self.omega_max > 0.0 && self.d_clear > 0.0) {
            return Err("v_max, omega_max and d_clear must be positive".into());
        }
        Ok(())
    }

    pub fn steps(&self) -> usize {
        (self.t_hor / self.dt).round().max(1.0) as usize
    }
}

fn linspace(lo: f64, hi: f64, n: usize) -> impl Iterator<Item = f64> {
    (0..n).map(move |i| {
        if i + 1 == n {
            hi
        } else {
            lo + (hi - lo) * i as f64 / (n - 1) as f64
        }
    })
}

/// Velocity bounds reachable within one `dt` from `current`.
pub fn window_bounds(current: VelocityCommand, cfg: &PlannerConfig) -> ((f64, f64), (f64, f64)) {
    let v_hi = (current.v + cfg.accel * cfg.dt).min(cfg.v_max);
    let v_lo = (current.v - cfg.accel * cfg.dt).max(0.0).min(v_hi.max(0.0));
    let w_hi = (current.omega + cfg.alpha_accel * cfg.dt).min(cfg.omega_max);
    let w_lo = (current.omega - cfg.alpha_accel * cfg.dt).max(-cfg.omega_max).min(w_hi);
    ((v_lo, v_hi.max(v_lo)), (w_lo, w_hi.max(w_lo)))
}

/// Uniform `v_samples x omega_samples` grid over the dynamic window. Sample
/// index is `iv * omega_samples + iw`.
pub fn dynamic_window(current: VelocityCommand, cfg: &PlannerConfig) -> Vec<VelocityCommand> {
    let ((v_lo, v_hi), (w_lo, w_hi)) = window_bounds(current, cfg);
    let mut out = Vec::with_capacity(cfg.v_samples * cfg.omega_samples);
    for v in linspace(v_lo, v_hi, cfg.v_samples) {
        for w in linspace(w_lo, w_hi, cfg.omega_samples) {
            out.push(VelocityCommand::new(v, w));
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    /// Robot-frame positions at `dt, 2dt, ..., t_hor`.
    pub points: Vec<Point2>,
    pub end_heading: f64,
    pub cmd: VelocityCommand,
}

impl Trajectory {
    pub fn endpoint(&self) -> Point2 {
        *self.points.last().expect("trajectory has points")
    }
}

pub fn rollout(cmd: VelocityCommand, cfg: &PlannerConfig) -> Trajectory {
    let n = cfg.steps();
    let points = (1..=n)
        .map(|k| {
            let (x, y, _) = arc_offset(cmd.v, cmd.omega, k as f64 * cfg.dt);
            Point2::new(x, y)
        })
        .collect();
    Trajectory {
        points,
        end_heading: cmd.omega * n as f64 * cfg.dt,
        cmd,
    }
}

/// No cell touched by the polyline origin -> points is occupied.
pub fn admissible(traj: &Trajectory, grid: &OccupancyGrid) -> bool {
    let mut prev = Point2::ORIGIN;
    for &p in &traj.points {
        if grid.segment_hits(prev, p) {
            return false;
        }
        prev = p;
    }
    true
}

/// The reference point immediately ahead of the robot (smallest positive x).
pub fn ref_point(reference: &[Point2]) -> Option<Point2> {
    reference
        .iter()
        .filter(|p| p.x > 0.0)
        .min_by(|a, b| a.x.total_cmp(&b.x))
        .copied()
}

/// Lateral offset between the trajectory endpoint and the nearest reference
/// point ahead of the robot. `None` when no reference point has `x > 0`.
pub fn ref_cost(traj: &Trajectory, reference: &[Point2]) -> Option<f64> {
    let ahead = ref_point(reference)?;
    Some((ahead.y - traj.endpoint().y).abs())
}

/// 0 when the endpoint faces the goal, 1 when it faces directly away. Flat
/// near zero so small turns toward a reference path stay cheap.
pub fn heading_cost(traj: &Trajectory, goal: Point2) -> f64 {
    let end = traj.endpoint();
    let d = goal - end;
    if d.norm() < 1e-9 {
        return 0.0;
    }
    (1.0 - (d.y.atan2(d.x) - traj.end_heading).cos()) / 2.0
}

pub fn velocity_cost(traj: &Trajectory, cfg: &PlannerConfig) -> f64 {
    1.0 - traj.cmd.v / cfg.v_max
}

pub fn obstacle_cost(clearance: f64, cfg: &PlannerConfig) -> f64 {
    1.0 - clearance.min(cfg.d_clear) / cfg.d_clear
}

/// Distance-to-obstacle lookup built once per planning call.
pub struct ClearanceMap<'a> {
    grid: &'a OccupancyGrid,
    dist_sq: Vec<f64>,
}

impl<'a> ClearanceMap<'a> {
    pub fn new(grid: &'a OccupancyGrid) -> Self {
        Self {
            grid,
            dist_sq: grid.distance_field_sq(),
        }
    }

    /// Distance in meters from the cell holding `p` to the nearest occupied cell
    /// center. Points off the grid see infinite clearance.
    pub fn at(&self, p: Point2) -> f64 {
        match self.grid.index_of(self.grid.cell_of(p)) {
            Some(i) => self.dist_sq[i].sqrt() * self.grid.resolution(),
            None => f64::INFINITY,
        }
    }

    pub fn trajectory(&self, traj: &Trajectory) -> f64 {
        traj.points.iter().map(|p| self.at(*p)).fold(f64::INFINITY, f64::min)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlanOutcome {
    pub cmd: VelocityCommand,
    pub cost: f64,
    /// Index into [`dynamic_window`] of the chosen sample; `None` for the stop command.
    pub sample: Option<usize>,
    /// Whether the reference term was active.
    pub used_reference: bool,
}

/// Whether the reference term applies for this goal direction.
pub fn reference_gate(goal: Point2, cfg: &PlannerConfig) -> bool {
    goal.y.atan2(goal.x).abs() <= cfg.theta_fov
}

pub fn plan(
    current: VelocityCommand,
    grid: &OccupancyGrid,
    goal: Point2,
    reference: Option<&[Point2]>,
    cfg: &PlannerConfig,
) -> PlanOutcome {
    plan_with_sigma(current, grid, goal, reference, cfg, &|q| q)
}

/// [`plan`] with an explicit monotone smoothing function applied to the base cost.
pub fn plan_with_sigma(
    current: VelocityCommand,
    grid: &OccupancyGrid,
    goal: Point2,
    reference: Option<&[Point2]>,
    cfg: &PlannerConfig,
    sigma: &dyn Fn(f64) -> f64,
) -> PlanOutcome {
    let clearance = ClearanceMap::new(grid);
    let gate = reference_gate(goal, cfg);
    let mut best: Option<PlanOutcome> = None;
    for (i, cmd) in dynamic_window(current, cfg).into_iter().enumerate() {
        let traj = rollout(cmd, cfg);
        if !admissible(&traj, grid) {
            continue;
        }
        let q1 = sigma(
            cfg.alpha_head * heading_cost(&traj, goal)
                + cfg.alpha_obs * obstacle_cost(clearance.trajectory(&traj), cfg)
                + cfg.alpha_vel * velocity_cost(&traj, cfg),
        );
        let ref_term = if gate {
            reference.and_then(|r| ref_cost(&traj, r))
        } else {
            None
        };
        let q = match ref_term {
            Some(r) => q1 + cfg.alpha_ref * r,
            None => q1,
        };
        if best.map_or(true, |b| q < b.cost) {
            best = Some(PlanOutcome {
                cmd,
                cost: q,
                sample: Some(i),
                used_reference: ref_term.is_some(),
            });
        }
    }
    best.unwrap_or_else(|| stop_command(current, &clearance, cfg))
}

/// Zero forward speed, turning toward the more open side.
pub fn stop_command(current: VelocityCommand, clearance: &ClearanceMap<'_>, cfg: &PlannerConfig) -> PlanOutcome {
    let (_, (w_lo, w_hi)) = window_bounds(current, cfg);
    let left = clearance.at(Point2::new(0.0, 0.5));
    let right = clearance.at(Point2::new(0.0, -0.5));
    let omega = if left >= right { w_hi } else { w_lo };
    PlanOutcome {
        cmd: VelocityCommand::new(0.0, omega),
        cost: f64::INFINITY,
        sample: None,
        used_reference: false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;
    use crate::geometry::{Frame, Pose2D};
    use crate::grid::Cell;
    use crate::world::{step_kinematics, RobotState};

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() < 1e-12
    }

    #[test]
    fn window_clips_at_v_max() {
        let cfg = PlannerConfig {
            v_samples: 3,
            ..Default::default()
        };
        let ((lo, hi), _) = window_bounds(VelocityCommand::new(0.2, 0.0), &cfg);
        assert!(close(lo, 0.1) && close(hi, 0.3));
        let vs: Vec<f64> = dynamic_window(VelocityCommand::new(0.2, 0.0), &cfg)
            .iter()
            .step_by(cfg.omega_samples)
            .map(|c| c.v)
            .collect();
        assert_eq!(vs.len(), 3);
        assert!(close(vs[0], 0.1) && close(vs[1], 0.2) && close(vs[2], 0.3));
    }

    #[test]
    fn window_clips_at_rest() {
        let ((lo, hi), _) = window_bounds(VelocityCommand::STOP, &PlannerConfig::default());
        assert_eq!(lo, 0.0);
        assert!(close(hi, 0.1));
    }

    #[test]
    fn straight_rollout() {
        let cfg = PlannerConfig {
            dt: 0.5,
            t_hor: 2.0,
            ..Default::default()
        };
        let t = rollout(VelocityCommand::new(0.3, 0.0), &cfg);
        let xs: Vec<f64> = t.points.iter().map(|p| p.x).collect();
        for (x, e) in xs.iter().zip([0.15, 0.3, 0.45, 0.6]) {
            assert!(close(*x, e));
        }
        assert!(t.points.iter().all(|p| p.y == 0.0));
    }

    #[test]
    fn rotation_rollout_stays_put() {
        let t = rollout(VelocityCommand::new(0.0, 1.0), &PlannerConfig::default());
        assert!(t.points.iter().all(|p| p.norm() < 1e-12));
    }

    #[test]
    fn arc_rollout_closed_form() {
        let cfg = PlannerConfig {
            dt: PI / 2.0,
            t_hor: PI / 2.0 + 0.1,
            ..Default::default()
        };
        let t = rollout(VelocityCommand::new(1.0, 1.0), &cfg);
        assert_eq!(t.points.len(), 1);
        assert!(t.points[0].dist(Point2::new(1.0, 1.0)) < 1e-12);
    }

    fn wall_at(x: f64) -> OccupancyGrid {
        let mut g = OccupancyGrid::empty(200, 0.1);
        let row = g.cell_of(Point2::new(x, 0.0)).row;
        let seeds: Vec<Cell> = (0..200).map(|c| Cell::new(row, c)).collect();
        g.dilate(&seeds, 3);
        g
    }

    #[test]
    fn admissibility() {
        let cfg = PlannerConfig::default();
        let t = rollout(VelocityCommand::new(0.3, 0.0), &cfg);
        assert!(admissible(&t, &OccupancyGrid::empty(200, 0.1)));
        // rollout reaches 0.6 m; inflated wall begins 0.3 m before its face
        assert!(!admissible(&t, &wall_at(0.8)));
        assert!(admissible(&t, &wall_at(1.4)));
    }

    #[test]
    fn ref_cost_examples() {
        let cfg = PlannerConfig {
            dt: 1.0,
            t_hor: 2.0,
            ..Default::default()
        };
        let t = rollout(VelocityCommand::new(0.5, 0.0), &cfg);
        assert_eq!(t.endpoint(), Point2::new(1.0, 0.0));
        let r = [Point2::new(2.5, 0.5), Point2::new(5.0, 1.0)];
        assert_eq!(ref_cost(&t, &r), Some(0.5));
        let shifted = Trajectory {
            points: vec![Point2::new(1.0, 0.5)],
            end_heading: 0.0,
            cmd: VelocityCommand::new(0.5, 0.0),
        };
        assert_eq!(ref_cost(&shifted, &r), Some(0.0));
        assert_eq!(ref_cost(&t, &[Point2::new(-1.0, 0.0), Point2::new(0.0, 3.0)]), None);
    }

    #[test]
    fn open_space_goes_straight_at_full_window_speed() {
        let cfg = PlannerConfig::default();
        let out = plan(
            VelocityCommand::new(0.3, 0.0),
            &OccupancyGrid::empty(200, 0.1),
            Point2::new(10.0, 0.0),
            None,
            &cfg,
        );
        assert!(close(out.cmd.v, 0.3));
        assert!(out.cmd.omega.abs() < 1e-12);
    }

    #[test]
    fn gate_disables_reference_for_goal_behind() {
        let cfg = PlannerConfig::default();
        let g = OccupancyGrid::empty(200, 0.1);
        let goal = Point2::new(-5.0, 1.0);
        let r = [Point2::new(2.5, 2.0)];
        let a = plan(VelocityCommand::new(0.1, 0.0), &g, goal, Some(&r), &cfg);
        let b = plan(VelocityCommand::new(0.1, 0.0), &g, goal, None, &cfg);
        assert_eq!(a, b);
        assert!(!a.used_reference);
    }

    #[test]
    fn boxed_in_stops() {
        let mut g = OccupancyGrid::empty(200, 0.1);
        let ring: Vec<Cell> = (97..=103)
            .flat_map(|i| [Cell::new(97, i), Cell::new(103, i), Cell::new(i, 97), Cell::new(i, 103)])
            .collect();
        g.dilate(&ring, 0);
        let out = plan(VelocityCommand::new(0.3, 0.0), &g, Point2::new(5.0, 0.0), None, &PlannerConfig::default());
        assert_eq!(out.sample, None);
        assert_eq!(out.cmd.v, 0.0);
    }

    #[test]
    fn monotone_sigma_keeps_argmin() {
        let cfg = PlannerConfig::default();
        let g = wall_at(1.5);
        let goal = Point2::new(6.0, 2.0);
        let a = plan(VelocityCommand::new(0.2, 0.1), &g, goal, None, &cfg);
        let b = plan_with_sigma(VelocityCommand::new(0.2, 0.1), &g, goal, None, &cfg, &|q| q.exp());
        let c = plan_with_sigma(VelocityCommand::new(0.2, 0.1), &g, goal, None, &cfg, &|q| 3.0 * q + 1.0);
        assert_eq!(a.sample, b.sample);
        assert_eq!(a.sample, c.sample);
    }

    #[test]
    fn reference_pulls_robot_laterally() {
        for offset in [-2.0, -1.5, 1.5, 2.0, 3.0] {
            pull_towards(offset);
        }
    }

    fn pull_towards(offset: f64) {
        let cfg = PlannerConfig::default();
        let grid = OccupancyGrid::empty(200, 0.1);
        let mut state = RobotState::at_rest(Pose2D::new(0.0, 0.0, 0.0, Frame::Odom));
        let goal = Point2::new(100.0, 0.0);
        let mut reached = false;
        let mut prev_err = offset.abs();
        while state.pose.x < 10.0 {
            let to_robot = state.pose.to_parent(Frame::Robot).invert();
            let reference: Vec<Point2> = (1..=4)
                .map(|k| to_robot.map(Point2::new(state.pose.x + 2.5 * k as f64, offset)))
                .collect();
            let out = plan(
                VelocityCommand::new(state.v, state.omega),
                &grid,
                to_robot.map(goal),
                Some(&reference),
                &cfg,
            );
            state = step_kinematics(&state, out.cmd, 0.1);
            let err = (state.pose.y - offset).abs();
            if !reached {
                assert!(err <= prev_err + 1e-9, "offset {offset}: error grew from {prev_err} to {err}");
                if err < 1.0 {
                    reached = true;
                }
            }
            prev_err = err;
        }
        assert!(reached, "offset {offset}: lateral error never dropped below d_col / 2");
    }
}
