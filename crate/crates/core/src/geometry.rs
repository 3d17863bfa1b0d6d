//! Coordinate frames, rigid 2D transforms and the ground-plane camera model.
//!
//! Frame conventions:
//! - `Robot`: origin at the robot center, X forward, Y left.
//! - `Grid`: origin at the occupancy grid center (the robot cell), X forward, Y left.
//!   Metrically identical to `Robot`; cell indices are handled by [`crate::grid`].
//! - `Odom`: fixed world frame the robot pose is integrated in.
//! - Image pixels: origin top-left, `u` grows rightward (columns), `v` downward (rows).

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::ops::{Add, Mul, Sub};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("frame mismatch: point is in {found:?}, transform expects {expected:?}")]
    FrameMismatch { expected: Frame, found: Frame },
    #[error("transforms do not chain: {0:?} -> {1:?}")]
    BrokenChain(Frame, Frame),
    #[error("pixel ray does not intersect the ground plane")]
    NoGroundIntersection,
    #[error("pixel ({0}, {1}) outside the image")]
    PixelOutOfBounds(f64, f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Frame {
    Odom,
    Robot,
    Grid,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const ORIGIN: Point2 = Point2 { x: 0.0, y: 0.0 };

    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn dist(self, other: Point2) -> f64 {
        (self - other).norm()
    }

    pub fn dot(self, other: Point2) -> f64 {
        self.x * other.x + self.y * other.y
    }

    pub fn cross(self, other: Point2) -> f64 {
        self.x * other.y - self.y * other.x
    }

    pub fn tagged(self, frame: Frame) -> FramedPoint {
        FramedPoint { frame, p: self }
    }
}

impl Add for Point2 {
    type Output = Point2;
    fn add(self, o: Point2) -> Point2 {
        Point2::new(self.x + o.x, self.y + o.y)
    }
}

impl Sub for Point2 {
    type Output = Point2;
    fn sub(self, o: Point2) -> Point2 {
        Point2::new(self.x - o.x, self.y - o.y)
    }
}

impl Mul<f64> for Point2 {
    type Output = Point2;
    fn mul(self, s: f64) -> Point2 {
        Point2::new(self.x * s, self.y * s)
    }
}

/// A point carrying the frame it is expressed in.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FramedPoint {
    pub frame: Frame,
    pub p: Point2,
}

/// Wraps an angle to (-pi, pi].
pub fn wrap_angle(a: f64) -> f64 {
    let mut w = a.rem_euclid(2.0 * PI);
    if w > PI {
        w -= 2.0 * PI;
    }
    w
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose2D {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
    pub frame: Frame,
}

impl Pose2D {
    pub fn new(x: f64, y: f64, theta: f64, frame: Frame) -> Self {
        Self {
            x,
            y,
            theta: wrap_angle(theta),
            frame,
        }
    }

    pub fn position(&self) -> Point2 {
        Point2::new(self.x, self.y)
    }

    /// Transform taking points in the frame attached to this pose into `self.frame`.
    /// For an odometry pose this is the robot-to-odom transform.
    pub fn to_parent(&self, child: Frame) -> FrameTransform {
        FrameTransform::new(self.theta, Point2::new(self.x, self.y), child, self.frame)
    }
}

/// Rigid transform `p' = R(rotation) p + translation`, mapping `from_frame` into `to_frame`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameTransform {
    pub rotation: f64,
    pub translation: Point2,
    pub from_frame: Frame,
    pub to_frame: Frame,
}

impl FrameTransform {
    pub fn new(rotation: f64, translation: Point2, from_frame: Frame, to_frame: Frame) -> Self {
        Self {
            rotation,
            translation,
            from_frame,
            to_frame,
        }
    }

    pub fn identity(frame: Frame) -> Self {
        Self::new(0.0, Point2::ORIGIN, frame, frame)
    }

    /// Applies the transform without checking frame tags.
    pub fn map(&self, p: Point2) -> Point2 {
        let (s, c) = self.rotation.sin_cos();
        Point2::new(
            c * p.x - s * p.y + self.translation.x,
            s * p.x + c * p.y + self.translation.y,
        )
    }

    pub fn apply(&self, p: FramedPoint) -> Result<FramedPoint, GeometryError> {
        if p.frame != self.from_frame {
            return Err(GeometryError::FrameMismatch {
                expected: self.from_frame,
                found: p.frame,
            });
        }
        Ok(self.map(p.p).tagged(self.to_frame))
    }

    pub fn invert(&self) -> Self {
        let (s, c) = self.rotation.sin_cos();
        let t = self.translation;
        Self {
            rotation: -self.rotation,
            translation: Point2::new(-(c * t.x + s * t.y), -(-s * t.x + c * t.y)),
            from_frame: self.to_frame,
            to_frame: self.from_frame,
        }
    }

    /// `self ∘ inner`: apply `inner` first, then `self`.
    pub fn compose(&self, inner: &FrameTransform) -> Result<Self, GeometryError> {
        if inner.to_frame != self.from_frame {
            return Err(GeometryError::BrokenChain(inner.to_frame, self.from_frame));
        }
        Ok(Self {
            rotation: self.rotation + inner.rotation,
            translation: self.map(inner.translation),
            from_frame: inner.from_frame,
            to_frame: self.to_frame,
        })
    }

    pub fn map_pose(&self, pose: &Pose2D) -> Pose2D {
        let p = self.map(pose.position());
        Pose2D::new(p.x, p.y, pose.theta + self.rotation, self.to_frame)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pixel {
    pub u: f64,
    pub v: f64,
}

impl Pixel {
    pub fn new(u: f64, v: f64) -> Self {
        Self { u, v }
    }
}

/// Result of projecting a ground point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Projection {
    InView(Pixel),
    OutOfView,
}

impl Projection {
    pub fn pixel(self) -> Option<Pixel> {
        match self {
            Projection::InView(px) => Some(px),
            Projection::OutOfView => None,
        }
    }
}

/// Pinhole camera mounted at the robot center, `mount_height` above a flat ground
/// plane and pitched down by `mount_pitch`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraModel {
    pub focal_px: f64,
    pub principal_point: (f64, f64),
    pub image_size: (u32, u32),
    pub mount_height: f64,
    pub mount_pitch: f64,
    pub theta_fov: f64,
}

impl Default for CameraModel {
    fn default() -> Self {
        Self {
            focal_px: 160.0,
            principal_point: (320.0, 240.0),
            image_size: (640, 480),
            mount_height: 1.0,
            mount_pitch: 0.25,
            theta_fov: 1.2,
        }
    }
}

/// 3-vector in the robot frame (X fwd, Y left, Z up).
type Vec3 = [f64; 3];

fn dot3(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

impl CameraModel {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.focal_px > 0.0) {
            return Err("focal_px must be > 0".into());
        }
        if !(self.theta_fov > 0.0 && self.theta_fov < PI / 2.0) {
            return Err("theta_fov must lie in (0, pi/2)".into());
        }
        if !(self.mount_height > 0.0) {
            return Err("mount_height must be > 0".into());
        }
        if !(self.mount_pitch > -PI / 2.0 && self.mount_pitch < PI / 2.0) {
            return Err("mount_pitch must lie in (-pi/2, pi/2)".into());
        }
        if self.image_size.0 == 0 || self.image_size.1 == 0 {
            return Err("image_size must be nonzero".into());
        }
        Ok(())
    }

    // Optical axis, image-right and image-down directions in the robot frame.
    fn axes(&self) -> (Vec3, Vec3, Vec3) {
        let (s, c) = self.mount_pitch.sin_cos();
        let forward = [c, 0.0, -s];
        let right = [0.0, -1.0, 0.0];
        let down = [-s, 0.0, -c];
        (forward, right, down)
    }

    /// Projects a robot-frame point at height `z` into the image plane, ignoring
    /// bounds and field of view. `None` when the point is not in front of the camera.
    pub fn project_point(&self, p: Point2, z: f64) -> Option<Pixel> {
        let (fwd, right, down) = self.axes();
        let q = [p.x, p.y, z - self.mount_height];
        let zc = dot3(q, fwd);
        if zc <= 1e-9 {
            return None;
        }
        let (cx, cy) = self.principal_point;
        Some(Pixel::new(
            cx + self.focal_px * dot3(q, right) / zc,
            cy + self.focal_px * dot3(q, down) / zc,
        ))
    }

    pub fn in_bounds(&self, px: Pixel) -> bool {
        let (w, h) = self.image_size;
        px.u >= 0.0 && px.v >= 0.0 && px.u < w as f64 && px.v < h as f64
    }

    pub fn project_ground_to_pixel(&self, p_robot: Point2) -> Projection {
        if p_robot.y.atan2(p_robot.x).abs() > self.theta_fov {
            return Projection::OutOfView;
        }
        match self.project_point(p_robot, 0.0) {
            Some(px) if self.in_bounds(px) => Projection::InView(px),
            _ => Projection::OutOfView,
        }
    }

    /// Ray direction (robot frame, not normalized) through a pixel.
    pub fn pixel_ray(&self, px: Pixel) -> Vec3 {
        let (fwd, right, down) = self.axes();
        let (cx, cy) = self.principal_point;
        let xn = (px.u - cx) / self.focal_px;
        let yn = (px.v - cy) / self.focal_px;
        [
            fwd[0] + right[0] * xn + down[0] * yn,
            fwd[1] + right[1] * xn + down[1] * yn,
            fwd[2] + right[2] * xn + down[2] * yn,
        ]
    }

    pub fn pixel_to_ground(&self, px: Pixel) -> Result<Point2, GeometryError> {
        if !self.in_bounds(px) {
            return Err(GeometryError::PixelOutOfBounds(px.u, px.v));
        }
        let ray = self.pixel_ray(px);
        if ray[2] >= -1e-12 {
            return Err(GeometryError::NoGroundIntersection);
        }
        let s = self.mount_height / -ray[2];
        Ok(Point2::new(s * ray[0], s * ray[1]))
    }

    /// Image row of the horizon line. Pixels with `v` at or above it see no ground.
    pub fn horizon_v(&self) -> f64 {
        self.principal_point.1 - self.focal_px * self.mount_pitch.tan()
    }
}
