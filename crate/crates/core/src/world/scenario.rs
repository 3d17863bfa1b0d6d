//! TOML scenario files.
//!
//! ```toml
//! schema_version = 1
//! name = "corridor"
//! goal = [32.0, 0.0]
//!
//! [robot]
//! start = [0.0, 0.0, 0.0]
//!
//! [[terrain]]
//! class = "indoor_floor"
//! rect = [-5.0, -4.0, 40.0, 4.0]
//!
//! [[obstacle]]
//! kind = "wall"
//! polygon = [[0.0, 4.0], [35.0, 4.0], [35.0, 4.3], [0.0, 4.3]]
//! ```

use std::path::Path;

use serde::Deserialize;
use thiserror::Error;

use crate::context::ContextCatalog;
use crate::geometry::{CameraModel, Frame, Point2, Pose2D};
use crate::marking::CandidateLayout;
use crate::metrics::AcceptabilityPolicy;
use crate::navigator::NavigatorConfig;
use crate::planner::PlannerConfig;
use crate::world::{
    ContextRegion, LidarConfig, Obstacle, ObstacleKind, Pedestrian, Polygon, RobotState, SemanticWorld, Side,
    TerrainClass, TerrainRegion,
};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("{path}: line {line}, column {column}: {message}")]
    Syntax {
        path: String,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("{path}: field `{field}`: {message}")]
    Invalid {
        path: String,
        field: String,
        message: String,
    },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    schema_version: u32,
    name: String,
    #[serde(default)]
    description: String,
    goal: [f64; 2],
    #[serde(default)]
    ground_truth_path: Option<Vec<[f64; 2]>>,
    #[serde(default)]
    robot: RawRobot,
    #[serde(default)]
    sim: SimParams,
    #[serde(default)]
    camera: Option<CameraModel>,
    #[serde(default)]
    lidar: LidarConfig,
    #[serde(default)]
    grid: GridParams,
    #[serde(default)]
    layout: Option<LayoutChoice>,
    #[serde(default)]
    planner: PlannerConfig,
    #[serde(default)]
    navigator: Option<NavigatorConfig>,
    #[serde(default)]
    acceptability: AcceptabilityPolicy,
    #[serde(default)]
    terrain: Vec<RawTerrain>,
    #[serde(default)]
    obstacle: Vec<RawObstacle>,
    #[serde(default)]
    pedestrian: Vec<RawPedestrian>,
    #[serde(default)]
    context: Vec<RawContext>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RawRobot {
    start: [f64; 3],
    radius: f64,
    v_max: f64,
    omega_max: f64,
    accel: f64,
    alpha: f64,
}

impl Default for RawRobot {
    fn default() -> Self {
        let r = RobotState::at_rest(Pose2D::new(0.0, 0.0, 0.0, Frame::Odom));
        Self {
            start: [0.0, 0.0, 0.0],
            radius: r.radius,
            v_max: r.v_max,
            omega_max: r.omega_max,
            accel: r.accel,
            alpha: r.alpha,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize, serde::Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimParams {
    pub dt: f64,
    pub max_ticks: u64,
    pub goal_tolerance: f64,
    pub seed: u64,
    /// Response time of the deterministic oracle VLM, seconds of sim time.
    pub oracle_latency_s: f64,
}

impl Default for SimParams {
    fn default() -> Self {
        Self {
            dt: 0.1,
            max_ticks: 3000,
            goal_tolerance: 0.5,
            seed: 0,
            oracle_latency_s: 3.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize, serde::Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridParams {
    pub n: usize,
    pub resolution: f64,
}

impl Default for GridParams {
    fn default() -> Self {
        Self { n: 200, resolution: 0.1 }
    }
}

#[derive(Deserialize)]
#[serde(untagged)]
enum LayoutChoice {
    Preset(String),
    Custom(CandidateLayout),
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTerrain {
    class: TerrainClass,
    #[serde(default)]
    rect: Option<[f64; 4]>,
    #[serde(default)]
    polygon: Option<Vec<[f64; 2]>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawObstacle {
    kind: ObstacleKind,
    #[serde(default = "default_height")]
    height: f64,
    #[serde(default)]
    rect: Option<[f64; 4]>,
    #[serde(default)]
    polygon: Option<Vec<[f64; 2]>>,
}

fn default_height() -> f64 {
    1.0
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPedestrian {
    waypoints: Vec<[f64; 2]>,
    #[serde(default)]
    speed: f64,
    #[serde(default = "default_ped_radius")]
    radius: f64,
    #[serde(default)]
    group: Option<u32>,
}

fn default_ped_radius() -> f64 {
    0.3
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawContext {
    id: String,
    #[serde(default)]
    rect: Option<[f64; 4]>,
    #[serde(default)]
    polygon: Option<Vec<[f64; 2]>>,
    #[serde(default)]
    detour_side: Option<Side>,
}

/// A fully validated scenario.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    pub description: String,
    pub world: SemanticWorld,
    pub robot: RobotState,
    pub sim: SimParams,
    pub camera: CameraModel,
    pub lidar: LidarConfig,
    pub grid: GridParams,
    pub planner: PlannerConfig,
    pub navigator: NavigatorConfig,
    pub acceptability: AcceptabilityPolicy,
    pub catalog: ContextCatalog,
    pub ground_truth_path: Option<Vec<Point2>>,
}

fn pt(p: [f64; 2]) -> Point2 {
    Point2::new(p[0], p[1])
}

fn line_col(src: &str, offset: usize) -> (usize, usize) {
    let before = &src[..offset.min(src.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.rfind('\n').map_or(before.len(), |i| before.len() - i - 1) + 1;
    (line, column)
}

impl Scenario {
    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let src = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml_str(&src, &path.display().to_string())
    }

    /// Parses and validates; `origin` is used in diagnostics.
    pub fn from_toml_str(src: &str, origin: &str) -> Result<Self, ScenarioError> {
        let raw: RawScenario = toml::from_str(src).map_err(|e| {
            let (line, column) = e.span().map_or((0, 0), |s| line_col(src, s.start));
            ScenarioError::Syntax {
                path: origin.to_string(),
                line,
                column,
                message: e.message().to_string(),
            }
        })?;
        let invalid = |field: &str, message: String| ScenarioError::Invalid {
            path: origin.to_string(),
            field: field.to_string(),
            message,
        };
        if raw.schema_version != SCHEMA_VERSION {
            return Err(invalid(
                "schema_version",
                format!("unsupported version {}, expected {SCHEMA_VERSION}", raw.schema_version),
            ));
        }
        let shape = |field: String, rect: Option<[f64; 4]>, poly: Option<Vec<[f64; 2]>>| match (rect, poly) {
            (Some(r), None) => {
                if r[2] > r[0] && r[3] > r[1] {
                    Ok(Polygon::rect(r[0], r[1], r[2], r[3]))
                } else {
                    Err(invalid(&field, "rect must be [x0, y0, x1, y1] with x1 > x0 and y1 > y0".into()))
                }
            }
            (None, Some(p)) => {
                let poly = Polygon::new(p.into_iter().map(pt).collect());
                if poly.is_simple() {
                    Ok(poly)
                } else {
                    Err(invalid(&field, "polygon must have at least 3 vertices and not self-intersect".into()))
                }
            }
            _ => Err(invalid(&field, "exactly one of `rect` or `polygon` is required".into())),
        };

        let catalog = ContextCatalog::default();
        let mut world = SemanticWorld::empty(pt(raw.goal));
        for (i, t) in raw.terrain.into_iter().enumerate() {
            world.terrain_regions.push(TerrainRegion {
                polygon: shape(format!("terrain[{i}]"), t.rect, t.polygon)?,
                class: t.class,
            });
        }
        for (i, o) in raw.obstacle.into_iter().enumerate() {
            if !(o.height > 0.0) {
                return Err(invalid(&format!("obstacle[{i}].height"), "must be positive".into()));
            }
            world.obstacles.push(Obstacle {
                polygon: shape(format!("obstacle[{i}]"), o.rect, o.polygon)?,
                kind: o.kind,
                height: o.height,
            });
        }
        for (i, p) in raw.pedestrian.into_iter().enumerate() {
            if p.waypoints.is_empty() {
                return Err(invalid(&format!("pedestrian[{i}].waypoints"), "needs at least one waypoint".into()));
            }
            if p.speed < 0.0 || !(p.radius > 0.0) {
                return Err(invalid(
                    &format!("pedestrian[{i}]"),
                    "speed must be >= 0 and radius > 0".into(),
                ));
            }
            world.pedestrians.push(Pedestrian::new(
                p.waypoints.into_iter().map(pt).collect(),
                p.speed,
                p.radius,
                p.group,
            ));
        }
        for (i, c) in raw.context.into_iter().enumerate() {
            if catalog.get(&c.id).is_none() {
                return Err(invalid(
                    &format!("context[{i}].id"),
                    format!("unknown context {:?}", c.id),
                ));
            }
            world.context_regions.push(ContextRegion {
                polygon: shape(format!("context[{i}]"), c.rect, c.polygon)?,
                context: c.id,
                detour_side: c.detour_side,
            });
        }

        let r = raw.robot;
        if !(r.radius > 0.0 && r.v_max > 0.0 && r.omega_max > 0.0 && r.accel > 0.0 && r.alpha > 0.0) {
            return Err(invalid("robot", "radius, speed and acceleration limits must be positive".into()));
        }
        let robot = RobotState {
            radius: r.radius,
            v_max: r.v_max,
            omega_max: r.omega_max,
            accel: r.accel,
            alpha: r.alpha,
            ..RobotState::at_rest(Pose2D::new(r.start[0], r.start[1], r.start[2], Frame::Odom))
        };
        if world.collides(robot.pose.position(), robot.radius) {
            return Err(invalid("robot.start", "start pose overlaps an obstacle or pedestrian".into()));
        }

        let camera = raw.camera.unwrap_or_default();
        camera.validate().map_err(|m| invalid("camera", m))?;
        if raw.lidar.rays == 0 || !(raw.lidar.max_range > 0.0) {
            return Err(invalid("lidar", "rays and max_range must be positive".into()));
        }
        if raw.grid.n < 10 || !(raw.grid.resolution > 0.0) {
            return Err(invalid("grid", "n must be >= 10 and resolution positive".into()));
        }
        if !(raw.sim.dt > 0.0) || raw.sim.max_ticks == 0 || !(raw.sim.goal_tolerance > 0.0) {
            return Err(invalid("sim", "dt, max_ticks and goal_tolerance must be positive".into()));
        }
        if raw.sim.oracle_latency_s < 0.0 {
            return Err(invalid("sim.oracle_latency_s", "must be non-negative".into()));
        }

        // the robot's limits and the camera field of view are authoritative
        let planner = PlannerConfig {
            v_max: robot.v_max,
            omega_max: robot.omega_max,
            accel: robot.accel,
            alpha_accel: robot.alpha,
            theta_fov: camera.theta_fov,
            ..raw.planner
        };
        planner.validate().map_err(|m| invalid("planner", m))?;

        let mut navigator = raw.navigator.unwrap_or_default();
        navigator.v_max = robot.v_max;
        navigator.tick_rate = 1.0 / raw.sim.dt;
        if let Some(layout) = raw.layout {
            navigator.layout = match layout {
                LayoutChoice::Preset(s) if s == "outdoor" => CandidateLayout::outdoor(),
                LayoutChoice::Preset(s) if s == "indoor" => CandidateLayout::indoor(),
                LayoutChoice::Preset(s) => {
                    return Err(invalid("layout", format!("unknown preset {s:?} (outdoor | indoor)")))
                }
                LayoutChoice::Custom(l) => l,
            };
        }
        navigator.validate().map_err(|m| invalid("navigator", m))?;

        let ground_truth_path = match raw.ground_truth_path {
            Some(p) if p.len() < 2 => {
                return Err(invalid("ground_truth_path", "needs at least two points".into()))
            }
            other => other.map(|p| p.into_iter().map(pt).collect()),
        };

        Ok(Self {
            name: raw.name,
            description: raw.description,
            world,
            robot,
            sim: raw.sim,
            camera,
            lidar: raw.lidar,
            grid: raw.grid,
            planner,
            navigator,
            acceptability: raw.acceptability,
            catalog,
            ground_truth_path,
        })
    }
}
