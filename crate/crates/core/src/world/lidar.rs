use serde::{Deserialize, Serialize};

use crate::geometry::{Point2, Pose2D};
use crate::grid::{Cell, OccupancyGrid};
use crate::world::{ray_circle, ray_segment, SemanticWorld};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LidarConfig {
    pub rays: usize,
    pub max_range: f64,
}

impl Default for LidarConfig {
    fn default() -> Self {
        Self {
            rays: 720,
            max_range: 10.0,
        }
    }
}

/// First hit along a ray in the odom frame, if within range.
pub(crate) fn cast_ray(world: &SemanticWorld, origin: Point2, dir: Point2, max_range: f64) -> Option<f64> {
    let mut best = f64::INFINITY;
    for o in &world.obstacles {
        for (a, b) in o.polygon.edges() {
            if let Some(t) = ray_segment(origin, dir, a, b) {
                best = best.min(t);
            }
        }
    }
    for p in &world.pedestrians {
        if let Some(t) = ray_circle(origin, dir, p.position, p.radius) {
            best = best.min(t);
        }
    }
    (best <= max_range).then_some(best)
}

/// Raw (pre-inflation) hit cells from a simulated 2D scan at `pose`.
pub fn scan_hits(world: &SemanticWorld, pose: &Pose2D, lidar: &LidarConfig, grid: &OccupancyGrid) -> Vec<Cell> {
    let origin = pose.position();
    let mut hits = Vec::new();
    for i in 0..lidar.rays {
        let bearing = i as f64 * std::f64::consts::TAU / lidar.rays as f64;
        let (s, c) = bearing.sin_cos();
        let (ps, pc) = pose.theta.sin_cos();
        let dir = Point2::new(pc * c - ps * s, ps * c + pc * s);
        if let Some(t) = cast_ray(world, origin, dir, lidar.max_range) {
            // robot frame: bearing is relative to heading
            let cell = grid.cell_of(Point2::new(c * t, s * t));
            if grid.in_bounds(cell) && hits.last() != Some(&cell) {
                hits.push(cell);
            }
        }
    }
    hits.sort();
    hits.dedup();
    hits
}

/// Robot-centric occupancy grid from a simulated scan, inflated by the robot radius.
pub fn simulate_lidar_to_grid(
    world: &SemanticWorld,
    pose: &Pose2D,
    n: usize,
    resolution: f64,
    robot_radius: f64,
    lidar: &LidarConfig,
) -> OccupancyGrid {
    let mut grid = OccupancyGrid::empty(n, resolution);
    let hits = scan_hits(world, pose, lidar, &grid);
    let k = (robot_radius / resolution).ceil() as i64;
    grid.dilate(&hits, k);
    let center = grid.center();
    grid.set_occupied(center, false);
    grid
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Frame;
    use crate::world::{Obstacle, ObstacleKind, Pedestrian, Polygon};

    fn pose() -> Pose2D {
        Pose2D::new(0.0, 0.0, 0.0, Frame::Odom)
    }

    fn wall(x0: f64, y0: f64, x1: f64, y1: f64) -> Obstacle {
        Obstacle {
            polygon: Polygon::rect(x0, y0, x1, y1),
            kind: ObstacleKind::Wall,
            height: 2.0,
        }
    }

    #[test]
    fn empty_world_empty_grid() {
        let w = SemanticWorld::empty(Point2::new(5.0, 0.0));
        let g = simulate_lidar_to_grid(&w, &pose(), 200, 0.1, 0.3, &LidarConfig::default());
        assert_eq!(g.occupied_count(), 0);
    }

    #[test]
    fn wall_ahead_rasterized_and_inflated() {
        let mut w = SemanticWorld::empty(Point2::new(5.0, 0.0));
        w.obstacles.push(wall(2.0, -3.0, 2.2, 3.0));
        let g = simulate_lidar_to_grid(&w, &pose(), 200, 0.1, 0.3, &LidarConfig::default());
        // hit face at row offset +20, inflated 3 cells toward the robot
        assert!(g.is_occupied(Cell::new(120, 100)));
        assert!(g.is_occupied(Cell::new(117, 100)));
        assert!(!g.is_occupied(Cell::new(116, 100)));
        // nothing observed behind the face beyond the inflation
        assert!(!g.is_occupied(Cell::new(124, 100)));
    }

    #[test]
    fn occluded_pedestrian_invisible() {
        let mut w = SemanticWorld::empty(Point2::new(5.0, 0.0));
        w.obstacles.push(wall(2.0, -3.0, 2.2, 3.0));
        w.pedestrians.push(Pedestrian::new(vec![Point2::new(4.0, 0.0)], 0.0, 0.3, None));
        let g = simulate_lidar_to_grid(&w, &pose(), 200, 0.1, 0.3, &LidarConfig::default());
        let mut w2 = w.clone();
        w2.pedestrians.clear();
        let g2 = simulate_lidar_to_grid(&w2, &pose(), 200, 0.1, 0.3, &LidarConfig::default());
        assert_eq!(g, g2);
    }

    #[test]
    fn scan_is_rotation_aware() {
        let mut w = SemanticWorld::empty(Point2::new(5.0, 0.0));
        w.obstacles.push(wall(-0.2, 2.0, 0.2, 2.2));
        let facing_left = Pose2D::new(0.0, 0.0, std::f64::consts::FRAC_PI_2, Frame::Odom);
        let g = simulate_lidar_to_grid(&w, &facing_left, 200, 0.1, 0.3, &LidarConfig::default());
        assert!(g.is_occupied(Cell::new(120, 100)));
    }
}
