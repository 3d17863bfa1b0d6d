//! Deterministic 2D world: semantic terrain, static obstacles, scripted
//! pedestrians, and the sensors that observe it.

mod kinematics;
mod lidar;
mod render;
pub mod scenario;

pub use kinematics::{arc_offset, step_kinematics, RobotState, VelocityCommand};
pub use lidar::{simulate_lidar_to_grid, LidarConfig};
pub use render::{color_class, render_camera, ColorClass, Palette};

use serde::{Deserialize, Serialize};

use crate::geometry::Point2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerrainClass {
    Pavement,
    Grass,
    Gravel,
    AsphaltRoad,
    Crosswalk,
    IndoorFloor,
    Unknown,
}

impl TerrainClass {
    pub const ALL: [TerrainClass; 7] = [
        TerrainClass::Pavement,
        TerrainClass::Grass,
        TerrainClass::Gravel,
        TerrainClass::AsphaltRoad,
        TerrainClass::Crosswalk,
        TerrainClass::IndoorFloor,
        TerrainClass::Unknown,
    ];

    /// Sidewalks, crosswalks and indoor floors count as paved.
    pub fn is_paved(self) -> bool {
        matches!(
            self,
            TerrainClass::Pavement | TerrainClass::Crosswalk | TerrainClass::IndoorFloor
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Polygon {
    pub vertices: Vec<Point2>,
}

impl Polygon {
    pub fn new(vertices: Vec<Point2>) -> Self {
        Self { vertices }
    }

    pub fn rect(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        Self::new(vec![
            Point2::new(x0, y0),
            Point2::new(x1, y0),
            Point2::new(x1, y1),
            Point2::new(x0, y1),
        ])
    }

    pub fn edges(&self) -> impl Iterator<Item = (Point2, Point2)> + '_ {
        let n = self.vertices.len();
        (0..n).map(move |i| (self.vertices[i], self.vertices[(i + 1) % n]))
    }

    /// Even-odd containment test.
    pub fn contains(&self, p: Point2) -> bool {
        let mut inside = false;
        for (a, b) in self.edges() {
            if (a.y > p.y) != (b.y > p.y) {
                let x = a.x + (p.y - a.y) * (b.x - a.x) / (b.y - a.y);
                if p.x < x {
                    inside = !inside;
                }
            }
        }
        inside
    }

    pub fn boundary_distance(&self, p: Point2) -> f64 {
        self.edges()
            .map(|(a, b)| point_segment_distance(p, a, b))
            .fold(f64::INFINITY, f64::min)
    }

    /// Zero inside, distance to the boundary outside.
    pub fn distance(&self, p: Point2) -> f64 {
        if self.contains(p) {
            0.0
        } else {
            self.boundary_distance(p)
        }
    }

    pub fn centroid(&self) -> Point2 {
        let mut a2 = 0.0;
        let mut cx = 0.0;
        let mut cy = 0.0;
        for (p, q) in self.edges() {
            let cr = p.cross(q);
            a2 += cr;
            cx += (p.x + q.x) * cr;
            cy += (p.y + q.y) * cr;
        }
        if a2.abs() < 1e-12 {
            let n = self.vertices.len() as f64;
            let s = self.vertices.iter().fold(Point2::ORIGIN, |acc, v| acc + *v);
            return s * (1.0 / n);
        }
        Point2::new(cx / (3.0 * a2), cy / (3.0 * a2))
    }

    pub fn is_simple(&self) -> bool {
        let n = self.vertices.len();
        if n < 3 {
            return false;
        }
        let edges: Vec<_> = self.edges().collect();
        for i in 0..n {
            for j in i + 1..n {
                let adjacent = j == i + 1 || (i == 0 && j == n - 1);
                if adjacent {
                    continue;
                }
                if segments_intersect(edges[i].0, edges[i].1, edges[j].0, edges[j].1) {
                    return false;
                }
            }
        }
        true
    }

    pub fn is_convex(&self) -> bool {
        let n = self.vertices.len();
        if n < 3 {
            return false;
        }
        let mut sign = 0.0f64;
        for i in 0..n {
            let a = self.vertices[i];
            let b = self.vertices[(i + 1) % n];
            let c = self.vertices[(i + 2) % n];
            let cr = (b - a).cross(c - b);
            if cr.abs() < 1e-12 {
                continue;
            }
            if sign == 0.0 {
                sign = cr.signum();
            } else if cr.signum() != sign {
                return false;
            }
        }
        sign != 0.0
    }

    /// Direction of the longest edge (unit vector).
    pub fn principal_axis(&self) -> Point2 {
        let (a, b) = self
            .edges()
            .max_by(|x, y| x.0.dist(x.1).total_cmp(&y.0.dist(y.1)))
            .expect("polygon has edges");
        let d = b - a;
        d * (1.0 / d.norm())
    }
}

pub fn point_segment_distance(p: Point2, a: Point2, b: Point2) -> f64 {
    let ab = b - a;
    let len2 = ab.dot(ab);
    if len2 < 1e-18 {
        return p.dist(a);
    }
    let t = ((p - a).dot(ab) / len2).clamp(0.0, 1.0);
    p.dist(a + ab * t)
}

fn orient(a: Point2, b: Point2, c: Point2) -> f64 {
    (b - a).cross(c - a)
}

pub fn segments_intersect(a: Point2, b: Point2, c: Point2, d: Point2) -> bool {
    let d1 = orient(c, d, a);
    let d2 = orient(c, d, b);
    let d3 = orient(a, b, c);
    let d4 = orient(a, b, d);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
        && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
    {
        return true;
    }
    let on = |p: Point2, q: Point2, r: Point2| {
        r.x >= p.x.min(q.x) && r.x <= p.x.max(q.x) && r.y >= p.y.min(q.y) && r.y <= p.y.max(q.y)
    };
    (d1 == 0.0 && on(c, d, a))
        || (d2 == 0.0 && on(c, d, b))
        || (d3 == 0.0 && on(a, b, c))
        || (d4 == 0.0 && on(a, b, d))
}

/// Parameter `t >= 0` at which the ray `origin + t * dir` (unit `dir`) crosses segment `a`-`b`.
pub fn ray_segment(origin: Point2, dir: Point2, a: Point2, b: Point2) -> Option<f64> {
    let e = b - a;
    let denom = dir.cross(e);
    if denom.abs() < 1e-12 {
        return None;
    }
    let w = a - origin;
    let t = w.cross(e) / denom;
    let s = w.cross(dir) / denom;
    (t >= 0.0 && (-1e-12..=1.0 + 1e-12).contains(&s)).then_some(t)
}

/// Smallest `t >= 0` at which the ray enters a disk.
pub fn ray_circle(origin: Point2, dir: Point2, center: Point2, radius: f64) -> Option<f64> {
    let oc = origin - center;
    let b = oc.dot(dir);
    let c = oc.dot(oc) - radius * radius;
    let disc = b * b - c;
    if disc < 0.0 {
        return None;
    }
    let sq = disc.sqrt();
    let t0 = -b - sq;
    let t1 = -b + sq;
    if t0 >= 0.0 {
        Some(t0)
    } else if t1 >= 0.0 {
        Some(0.0)
    } else {
        None
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObstacleKind {
    Wall,
    Barrier,
    Sign,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Obstacle {
    pub polygon: Polygon,
    pub kind: ObstacleKind,
    pub height: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TerrainRegion {
    pub polygon: Polygon,
    pub class: TerrainClass,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Left,
    Right,
}

/// Ground-truth context label for an area of the world.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextRegion {
    pub polygon: Polygon,
    pub context: String,
    /// Side indicated by a detour sign in this region, if any.
    pub detour_side: Option<Side>,
}

/// Pedestrian walking a closed waypoint loop at constant speed. A single
/// waypoint (or zero speed) means the pedestrian stands still.
#[derive(Debug, Clone, PartialEq)]
pub struct Pedestrian {
    pub position: Point2,
    pub velocity: Point2,
    pub radius: f64,
    pub group: Option<u32>,
    pub waypoints: Vec<Point2>,
    pub speed: f64,
    next_waypoint: usize,
}

impl Pedestrian {
    pub fn new(waypoints: Vec<Point2>, speed: f64, radius: f64, group: Option<u32>) -> Self {
        assert!(!waypoints.is_empty());
        let mut p = Self {
            position: waypoints[0],
            velocity: Point2::ORIGIN,
            radius,
            group,
            waypoints,
            speed,
            next_waypoint: 1,
        };
        p.update_velocity();
        p
    }

    fn update_velocity(&mut self) {
        if self.waypoints.len() < 2 || self.speed <= 0.0 {
            self.velocity = Point2::ORIGIN;
            return;
        }
        let target = self.waypoints[self.next_waypoint % self.waypoints.len()];
        let d = target - self.position;
        let n = d.norm();
        self.velocity = if n < 1e-12 { Point2::ORIGIN } else { d * (self.speed / n) };
    }

    pub fn step(&mut self, dt: f64) {
        if self.waypoints.len() < 2 || self.speed <= 0.0 {
            return;
        }
        let mut remaining = self.speed * dt;
        // bounded: a loop shorter than one step is walked at most a few times
        for _ in 0..64 {
            let target = self.waypoints[self.next_waypoint % self.waypoints.len()];
            let d = target - self.position;
            let n = d.norm();
            if n > remaining {
                self.position = self.position + d * (remaining / n);
                break;
            }
            self.position = target;
            remaining -= n;
            self.next_waypoint = (self.next_waypoint + 1) % self.waypoints.len();
            if remaining <= 0.0 {
                break;
            }
        }
        self.update_velocity();
    }
}

/// Extra gap pedestrians keep from the robot's body.
pub const PEDESTRIAN_YIELD_MARGIN: f64 = 0.3;

/// Everything the simulator and oracle backends know about the world.
#[derive(Debug, Clone, PartialEq)]
pub struct SemanticWorld {
    pub terrain_regions: Vec<TerrainRegion>,
    pub obstacles: Vec<Obstacle>,
    pub pedestrians: Vec<Pedestrian>,
    pub context_regions: Vec<ContextRegion>,
    pub goal: Point2,
    pub time: f64,
}

impl SemanticWorld {
    pub fn empty(goal: Point2) -> Self {
        Self {
            terrain_regions: Vec::new(),
            obstacles: Vec::new(),
            pedestrians: Vec::new(),
            context_regions: Vec::new(),
            goal,
            time: 0.0,
        }
    }

    /// Terrain at a ground point (odom frame): the last declared region containing it.
    pub fn semantic_at(&self, p: Point2) -> TerrainClass {
        self.terrain_regions
            .iter()
            .rev()
            .find(|r| r.polygon.contains(p))
            .map(|r| r.class)
            .unwrap_or(TerrainClass::Unknown)
    }

    pub fn context_region_at(&self, p: Point2) -> Option<&ContextRegion> {
        self.context_regions.iter().rev().find(|r| r.polygon.contains(p))
    }

    pub fn declared_context(&self, p: Point2) -> Option<&str> {
        self.context_region_at(p).map(|r| r.context.as_str())
    }

    pub fn inside_obstacle(&self, p: Point2) -> bool {
        self.obstacles.iter().any(|o| o.polygon.contains(p))
    }

    pub fn inside_pedestrian(&self, p: Point2) -> bool {
        self.pedestrians.iter().any(|h| h.position.dist(p) <= h.radius)
    }

    /// Distance from a point to the nearest obstacle or pedestrian surface
    /// (zero when inside one).
    pub fn clearance(&self, p: Point2) -> f64 {
        let obs = self
            .obstacles
            .iter()
            .map(|o| o.polygon.distance(p))
            .fold(f64::INFINITY, f64::min);
        let peds = self
            .pedestrians
            .iter()
            .map(|h| (h.position.dist(p) - h.radius).max(0.0))
            .fold(f64::INFINITY, f64::min);
        obs.min(peds)
    }

    /// True if a disk of `radius` at `p` overlaps any obstacle or pedestrian.
    pub fn collides(&self, p: Point2, radius: f64) -> bool {
        self.clearance(p) < radius
    }

    pub fn step(&mut self, dt: f64) {
        for p in &mut self.pedestrians {
            p.step(dt);
        }
        self.time += dt;
    }

    /// Advances time; pedestrians hold still rather than step into the robot's
    /// personal space.
    pub fn step_yielding(&mut self, dt: f64, robot: Point2, robot_radius: f64) {
        for p in &mut self.pedestrians {
            let before = p.clone();
            p.step(dt);
            let keep_out = p.radius + robot_radius + PEDESTRIAN_YIELD_MARGIN;
            let d_new = p.position.dist(robot);
            if d_new < keep_out && d_new < before.position.dist(robot) {
                *p = before;
                p.velocity = Point2::ORIGIN;
            }
        }
        self.time += dt;
    }

    /// Pedestrians grouped by group id; ungrouped pedestrians form singleton groups.
    /// Groups are ordered by first appearance.
    pub fn pedestrian_groups(&self) -> Vec<Vec<&Pedestrian>> {
        let mut groups: Vec<(Option<u32>, Vec<&Pedestrian>)> = Vec::new();
        for p in &self.pedestrians {
            match p.group {
                Some(g) => {
                    if let Some(entry) = groups.iter_mut().find(|(id, _)| *id == Some(g)) {
                        entry.1.push(p);
                    } else {
                        groups.push((Some(g), vec![p]));
                    }
                }
                None => groups.push((None, vec![p])),
            }
        }
        groups.into_iter().map(|(_, v)| v).collect()
    }
}

/// Like [`group_hull_clearance`] for the whole segment `a`-`b`.
pub fn group_segment_clearance(group: &[&Pedestrian], a: Point2, b: Point2) -> f64 {
    let radius = group.iter().map(|h| h.radius).fold(0.0, f64::max);
    let pts: Vec<Point2> = group.iter().map(|h| h.position).collect();
    let hull = convex_hull(&pts);
    if hull.is_empty() {
        return f64::INFINITY;
    }
    if hull.len() >= 3 {
        let poly = Polygon::new(hull.clone());
        if poly.contains(a) || poly.contains(b) {
            return 0.0;
        }
    }
    let n = hull.len();
    let mut d = f64::INFINITY;
    for i in 0..n {
        let (p, q) = (hull[i], hull[(i + 1) % n]);
        if n > 1 && segments_intersect(a, b, p, q) {
            return 0.0;
        }
        d = d
            .min(point_segment_distance(a, p, q))
            .min(point_segment_distance(b, p, q))
            .min(point_segment_distance(p, a, b));
    }
    (d - radius).max(0.0)
}

/// Distance from a point to the convex hull of a pedestrian group, minus the
/// member radius (zero inside).
pub fn group_hull_clearance(group: &[&Pedestrian], p: Point2) -> f64 {
    let radius = group.iter().map(|h| h.radius).fold(0.0, f64::max);
    let pts: Vec<Point2> = group.iter().map(|h| h.position).collect();
    let hull = convex_hull(&pts);
    let d = match hull.len() {
        0 => f64::INFINITY,
        1 => p.dist(hull[0]),
        2 => point_segment_distance(p, hull[0], hull[1]),
        _ => Polygon::new(hull).distance(p),
    };
    (d - radius).max(0.0)
}

/// Andrew's monotone chain, counter-clockwise, collinear points dropped.
pub fn convex_hull(points: &[Point2]) -> Vec<Point2> {
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)));
    pts.dedup();
    if pts.len() <= 2 {
        return pts;
    }
    let mut hull: Vec<Point2> = Vec::with_capacity(pts.len() * 2);
    for pass in 0..2 {
        let start = hull.len();
        let iter: Box<dyn Iterator<Item = &Point2>> = if pass == 0 {
            Box::new(pts.iter())
        } else {
            Box::new(pts.iter().rev())
        };
        for &p in iter {
            while hull.len() >= start + 2
                && orient(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0
            {
                hull.pop();
            }
            hull.push(p);
        }
        hull.pop();
    }
    hull
}

#[cfg(test)]
mod tests {
    use super::*;

    fn region(poly: Polygon, class: TerrainClass) -> TerrainRegion {
        TerrainRegion { polygon: poly, class }
    }

    #[test]
    fn semantic_lookup_respects_declaration_order() {
        let mut w = SemanticWorld::empty(Point2::new(10.0, 0.0));
        w.terrain_regions.push(region(Polygon::rect(0.0, -5.0, 10.0, 5.0), TerrainClass::Grass));
        w.terrain_regions.push(region(Polygon::rect(-10.0, -5.0, 0.0, 5.0), TerrainClass::Pavement));
        w.terrain_regions.push(region(Polygon::rect(4.0, -1.0, 6.0, 1.0), TerrainClass::Crosswalk));
        assert_eq!(w.semantic_at(Point2::new(-3.0, 0.0)), TerrainClass::Pavement);
        assert_eq!(w.semantic_at(Point2::new(2.0, 0.0)), TerrainClass::Grass);
        assert_eq!(w.semantic_at(Point2::new(5.0, 0.5)), TerrainClass::Crosswalk);
        assert_eq!(w.semantic_at(Point2::new(50.0, 0.0)), TerrainClass::Unknown);
    }

    #[test]
    fn paved_partition() {
        let paved: Vec<_> = TerrainClass::ALL.iter().filter(|c| c.is_paved()).collect();
        assert_eq!(paved.len(), 3);
        assert!(!TerrainClass::AsphaltRoad.is_paved());
        assert!(!TerrainClass::Gravel.is_paved());
    }

    #[test]
    fn polygon_predicates() {
        let sq = Polygon::rect(0.0, 0.0, 2.0, 2.0);
        assert!(sq.is_simple() && sq.is_convex());
        assert_eq!(sq.centroid(), Point2::new(1.0, 1.0));
        let bowtie = Polygon::new(vec![
            Point2::new(0.0, 0.0),
            Point2::new(2.0, 2.0),
            Point2::new(2.0, 0.0),
            Point2::new(0.0, 2.0),
        ]);
        assert!(!bowtie.is_simple());
        assert!((sq.distance(Point2::new(3.0, 1.0)) - 1.0).abs() < 1e-12);
        assert_eq!(sq.distance(Point2::new(1.0, 1.0)), 0.0);
    }

    #[test]
    fn ray_primitives() {
        let t = ray_segment(
            Point2::ORIGIN,
            Point2::new(1.0, 0.0),
            Point2::new(2.0, -1.0),
            Point2::new(2.0, 1.0),
        );
        assert_eq!(t, Some(2.0));
        let t = ray_circle(Point2::ORIGIN, Point2::new(1.0, 0.0), Point2::new(5.0, 0.0), 1.0);
        assert_eq!(t, Some(4.0));
        assert_eq!(
            ray_circle(Point2::ORIGIN, Point2::new(-1.0, 0.0), Point2::new(5.0, 0.0), 1.0),
            None
        );
    }

    #[test]
    fn pedestrian_walks_its_loop() {
        let mut p = Pedestrian::new(
            vec![Point2::new(0.0, 0.0), Point2::new(1.0, 0.0)],
            0.5,
            0.3,
            None,
        );
        p.step(1.0);
        assert!((p.position.x - 0.5).abs() < 1e-12);
        p.step(2.0);
        // reached (1,0) after another 0.5 s, then walked back 0.5 m
        assert!((p.position.x - 0.5).abs() < 1e-12);
        assert!(p.velocity.x < 0.0);
    }

    #[test]
    fn hull_clearance_for_a_pair() {
        let a = Pedestrian::new(vec![Point2::new(0.0, -1.0)], 0.0, 0.3, Some(1));
        let b = Pedestrian::new(vec![Point2::new(0.0, 1.0)], 0.0, 0.3, Some(1));
        let g = vec![&a, &b];
        // the gap between two group members is inside the hull
        assert_eq!(group_hull_clearance(&g, Point2::new(0.0, 0.0)), 0.0);
        assert!((group_hull_clearance(&g, Point2::new(2.0, 0.0)) - 1.7).abs() < 1e-12);
    }
}
