//! Independent oracles shared by the integration suites. Nothing here calls the
//! code under test except for plain data accessors.

#![allow(dead_code)]

use std::path::PathBuf;

use convoi::geometry::Point2;
use convoi::grid::{Cell, OccupancyGrid};
use convoi::planner::PlannerConfig;
use convoi::world::scenario::Scenario;
use convoi::world::VelocityCommand;

pub fn scenario_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../scenarios")
        .join(format!("{name}.toml"))
}

pub fn scenario(name: &str) -> Scenario {
    Scenario::load(&scenario_path(name)).expect("bundled scenario loads")
}

pub const SCENARIOS: [&str; 5] = ["corridor", "crosswalk", "people", "multi_terrain", "detour"];

/// Robot-frame point to continuous cell units (cell `(r, c)` spans `r ± 0.5`).
pub fn cell_units(grid: &OccupancyGrid, p: Point2) -> (f64, f64) {
    let h = (grid.n() / 2) as f64;
    (h + p.x / grid.resolution(), h + p.y / grid.resolution())
}

/// Closed segment vs closed axis-aligned square, slab test.
pub fn segment_touches_cell(a: (f64, f64), b: (f64, f64), c: Cell) -> bool {
    let lo = [c.row as f64 - 0.5, c.col as f64 - 0.5];
    let hi = [c.row as f64 + 0.5, c.col as f64 + 0.5];
    let p = [a.0, a.1];
    let d = [b.0 - a.0, b.1 - a.1];
    let (mut t0, mut t1) = (0.0f64, 1.0f64);
    for k in 0..2 {
        if d[k].abs() < 1e-15 {
            if p[k] < lo[k] || p[k] > hi[k] {
                return false;
            }
        } else {
            let (mut ta, mut tb) = ((lo[k] - p[k]) / d[k], (hi[k] - p[k]) / d[k]);
            if ta > tb {
                std::mem::swap(&mut ta, &mut tb);
            }
            t0 = t0.max(ta);
            t1 = t1.min(tb);
            if t0 > t1 {
                return false;
            }
        }
    }
    true
}

pub fn occupied(grid: &OccupancyGrid) -> Vec<Cell> {
    grid.occupied_cells().collect()
}

pub fn segment_blocked(occ: &[Cell], a: (f64, f64), b: (f64, f64)) -> bool {
    occ.iter().any(|c| segment_touches_cell(a, b, *c))
}

/// Meters from the cell holding `p` to the nearest occupied cell center.
pub fn brute_clearance(grid: &OccupancyGrid, occ: &[Cell], p: Point2) -> f64 {
    let c = grid.cell_of(p);
    if !grid.in_bounds(c) {
        return f64::INFINITY;
    }
    occ.iter()
        .map(|o| {
            let (dr, dc) = ((o.row - c.row) as f64, (o.col - c.col) as f64);
            (dr * dr + dc * dc).sqrt() * grid.resolution()
        })
        .fold(f64::INFINITY, f64::min)
}

/// Unicycle pose after `t` seconds of constant `(v, w)` from the origin.
pub fn arc(v: f64, w: f64, t: f64) -> Point2 {
    if w.abs() < 1e-6 {
        Point2::new(v * t, 0.0)
    } else {
        Point2::new(v / w * (w * t).sin(), v / w * (1.0 - (w * t).cos()))
    }
}

pub fn window_samples(current: VelocityCommand, cfg: &PlannerConfig) -> Vec<VelocityCommand> {
    let v_hi = (current.v + cfg.accel * cfg.dt).min(cfg.v_max);
    let v_lo = (current.v - cfg.accel * cfg.dt).max(0.0).min(v_hi.max(0.0));
    let v_hi = v_hi.max(v_lo);
    let w_hi = (current.omega + cfg.alpha_accel * cfg.dt).min(cfg.omega_max);
    let w_lo = (current.omega - cfg.alpha_accel * cfg.dt).max(-cfg.omega_max).min(w_hi);
    let w_hi = w_hi.max(w_lo);
    let lin = |lo: f64, hi: f64, n: usize, i: usize| if i + 1 == n { hi } else { lo + (hi - lo) * i as f64 / (n - 1) as f64 };
    let mut out = Vec::new();
    for i in 0..cfg.v_samples {
        for j in 0..cfg.omega_samples {
            out.push(VelocityCommand::new(
                lin(v_lo, v_hi, cfg.v_samples, i),
                lin(w_lo, w_hi, cfg.omega_samples, j),
            ));
        }
    }
    out
}

/// Cost of one window sample, or `None` when its rollout touches an occupied cell.
pub fn sample_cost(
    cmd: VelocityCommand,
    grid: &OccupancyGrid,
    occ: &[Cell],
    goal: Point2,
    reference: Option<&[Point2]>,
    cfg: &PlannerConfig,
) -> Option<f64> {
    let n = (cfg.t_hor / cfg.dt).round().max(1.0) as usize;
    let pts: Vec<Point2> = (1..=n).map(|k| arc(cmd.v, cmd.omega, k as f64 * cfg.dt)).collect();
    let mut prev = cell_units(grid, Point2::new(0.0, 0.0));
    for p in &pts {
        let cur = cell_units(grid, *p);
        if segment_blocked(occ, prev, cur) {
            return None;
        }
        prev = cur;
    }
    let end = *pts.last().unwrap();
    let heading = cmd.omega * n as f64 * cfg.dt;
    let to_goal = goal - end;
    let head = if to_goal.norm() < 1e-9 {
        0.0
    } else {
        (1.0 - (to_goal.y.atan2(to_goal.x) - heading).cos()) / 2.0
    };
    let clear = pts.iter().map(|p| brute_clearance(grid, occ, *p)).fold(f64::INFINITY, f64::min);
    let obs = 1.0 - clear.min(cfg.d_clear) / cfg.d_clear;
    let vel = 1.0 - cmd.v / cfg.v_max;
    let mut q = cfg.alpha_head * head + cfg.alpha_obs * obs + cfg.alpha_vel * vel;
    let gated = goal.y.atan2(goal.x).abs() <= cfg.theta_fov;
    if let (true, Some(r)) = (gated, reference) {
        let ahead = r
            .iter()
            .filter(|p| p.x > 0.0)
            .fold(None::<Point2>, |best, p| match best {
                Some(b) if b.x <= p.x => Some(b),
                _ => Some(*p),
            });
        if let Some(a) = ahead {
            q += cfg.alpha_ref * (a.y - end.y).abs();
        }
    }
    Some(q)
}

/// Every monotone coupling of the two index sequences, minimizing the maximum leash.
pub fn frechet_brute(a: &[Point2], b: &[Point2]) -> f64 {
    fn go(a: &[Point2], b: &[Point2], i: usize, j: usize, worst: f64, best: &mut f64) {
        let worst = worst.max(a[i].dist(b[j]));
        if worst >= *best {
            return;
        }
        if i + 1 == a.len() && j + 1 == b.len() {
            *best = worst;
            return;
        }
        if i + 1 < a.len() {
            go(a, b, i + 1, j, worst, best);
        }
        if j + 1 < b.len() {
            go(a, b, i, j + 1, worst, best);
        }
        if i + 1 < a.len() && j + 1 < b.len() {
            go(a, b, i + 1, j + 1, worst, best);
        }
    }
    let mut best = f64::INFINITY;
    go(a, b, 0, 0, 0.0, &mut best);
    best
}
