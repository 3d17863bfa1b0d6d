//! C ABI over the simulator, camera model and trajectory metrics.
//!
//! Every fallible call returns a [`ConvoiStatus`]; on failure the message is
//! kept per thread and can be read with [`convoi_last_error`]. Simulations are
//! opaque handles created by [`convoi_sim_load`] and released with
//! [`convoi_sim_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use convoi::geometry::{CameraModel, Pixel, Point2, Projection};
use convoi::metrics::{discrete_frechet, trajectory_frechet};
use convoi::navigator::NavMode;
use convoi::sim::{Control, RunOptions, Simulation};
use convoi::world::scenario::{Scenario, ScenarioError};
use convoi::world::VelocityCommand;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConvoiStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidArgument = 2,
    /// The scenario file failed to parse or validate.
    Scenario = 3,
    Io = 4,
    /// The point or pixel is outside the camera view.
    OutOfView = 5,
    Internal = 6,
}

/// Opaque simulation handle.
pub struct ConvoiSim {
    sim: Simulation,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ConvoiPose {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ConvoiStep {
    pub tick: u64,
    pub pose: ConvoiPose,
    pub v: f64,
    pub omega: f64,
    pub collision: bool,
    pub goal_reached: bool,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvoiCamera {
    pub focal_px: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
    pub mount_height: f64,
    pub mount_pitch: f64,
    pub theta_fov: f64,
}

impl From<ConvoiCamera> for CameraModel {
    fn from(c: ConvoiCamera) -> Self {
        CameraModel {
            focal_px: c.focal_px,
            principal_point: (c.cx, c.cy),
            image_size: (c.width, c.height),
            mount_height: c.mount_height,
            mount_pitch: c.mount_pitch,
            theta_fov: c.theta_fov,
        }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn guarded(f: impl FnOnce() -> Result<(), (ConvoiStatus, String)>) -> ConvoiStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => ConvoiStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            ConvoiStatus::Internal
        }
    }
}

fn null(what: &str) -> (ConvoiStatus, String) {
    (ConvoiStatus::NullArgument, format!("{what} is null"))
}

/// Message for the last failed call on this thread, or null. Valid until the
/// next call into this library from the same thread.
#[no_mangle]
pub extern "C" fn convoi_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn convoi_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

unsafe fn points(xy: *const f64, len: usize, what: &str) -> Result<Vec<Point2>, (ConvoiStatus, String)> {
    if xy.is_null() {
        return Err(null(what));
    }
    if len == 0 {
        return Err((ConvoiStatus::InvalidArgument, format!("{what} is empty")));
    }
    let raw = std::slice::from_raw_parts(xy, 2 * len);
    let pts: Vec<Point2> = raw.chunks_exact(2).map(|c| Point2::new(c[0], c[1])).collect();
    if pts.iter().any(|p| !p.x.is_finite() || !p.y.is_finite()) {
        return Err((ConvoiStatus::InvalidArgument, format!("{what} has a non-finite coordinate")));
    }
    Ok(pts)
}

/// Discrete Fréchet distance between two polylines given as interleaved
/// `x0, y0, x1, y1, ...` arrays of `a_len` and `b_len` points.
///
/// # Safety
/// `a_xy` and `b_xy` must point to `2 * len` readable doubles, `out` to a writable double.
#[no_mangle]
pub unsafe extern "C" fn convoi_frechet(
    a_xy: *const f64,
    a_len: usize,
    b_xy: *const f64,
    b_len: usize,
    out: *mut f64,
) -> ConvoiStatus {
    frechet_with(a_xy, a_len, b_xy, b_len, out, discrete_frechet)
}

/// Like [`convoi_frechet`] but both curves are first resampled at 0.1 m arc
/// length, which is how trajectories are compared with ground truth.
///
/// # Safety
/// Same contract as [`convoi_frechet`].
#[no_mangle]
pub unsafe extern "C" fn convoi_trajectory_frechet(
    a_xy: *const f64,
    a_len: usize,
    b_xy: *const f64,
    b_len: usize,
    out: *mut f64,
) -> ConvoiStatus {
    frechet_with(a_xy, a_len, b_xy, b_len, out, trajectory_frechet)
}

unsafe fn frechet_with<E: std::fmt::Display>(
    a_xy: *const f64,
    a_len: usize,
    b_xy: *const f64,
    b_len: usize,
    out: *mut f64,
    f: fn(&[Point2], &[Point2]) -> Result<f64, E>,
) -> ConvoiStatus {
    guarded(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let a = points(a_xy, a_len, "a")?;
        let b = points(b_xy, b_len, "b")?;
        let d = f(&a, &b).map_err(|e| (ConvoiStatus::InvalidArgument, e.to_string()))?;
        *out = d;
        Ok(())
    })
}

/// Writes the default camera (640x480, f = 160 px, 1 m high, pitched 0.25 rad down).
///
/// # Safety
/// `out` must be writable or null.
#[no_mangle]
pub unsafe extern "C" fn convoi_camera_default(out: *mut ConvoiCamera) -> ConvoiStatus {
    guarded(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let c = CameraModel::default();
        *out = ConvoiCamera {
            focal_px: c.focal_px,
            cx: c.principal_point.0,
            cy: c.principal_point.1,
            width: c.image_size.0,
            height: c.image_size.1,
            mount_height: c.mount_height,
            mount_pitch: c.mount_pitch,
            theta_fov: c.theta_fov,
        };
        Ok(())
    })
}

unsafe fn camera(cam: *const ConvoiCamera) -> Result<CameraModel, (ConvoiStatus, String)> {
    if cam.is_null() {
        return Err(null("camera"));
    }
    let model = CameraModel::from(*cam);
    model.validate().map_err(|e| (ConvoiStatus::InvalidArgument, e))?;
    Ok(model)
}

/// Projects a robot-frame ground point to a pixel. Returns `OutOfView` when the
/// point is behind the camera, outside the field of view or off the image.
///
/// # Safety
/// `cam` must be readable, `u` and `v` writable.
#[no_mangle]
pub unsafe extern "C" fn convoi_project_ground(
    cam: *const ConvoiCamera,
    x: f64,
    y: f64,
    u: *mut f64,
    v: *mut f64,
) -> ConvoiStatus {
    guarded(|| {
        let cam = camera(cam)?;
        if u.is_null() || v.is_null() {
            return Err(null("u/v"));
        }
        match cam.project_ground_to_pixel(Point2::new(x, y)) {
            Projection::InView(px) => {
                *u = px.u;
                *v = px.v;
                Ok(())
            }
            Projection::OutOfView => Err((ConvoiStatus::OutOfView, format!("({x}, {y}) is not in view"))),
        }
    })
}

/// Intersects the ray through pixel `(u, v)` with the ground plane.
///
/// # Safety
/// `cam` must be readable, `x` and `y` writable.
#[no_mangle]
pub unsafe extern "C" fn convoi_pixel_to_ground(
    cam: *const ConvoiCamera,
    u: f64,
    v: f64,
    x: *mut f64,
    y: *mut f64,
) -> ConvoiStatus {
    guarded(|| {
        let cam = camera(cam)?;
        if x.is_null() || y.is_null() {
            return Err(null("x/y"));
        }
        let p = cam
            .pixel_to_ground(Pixel::new(u, v))
            .map_err(|e| (ConvoiStatus::OutOfView, e.to_string()))?;
        *x = p.x;
        *y = p.y;
        Ok(())
    })
}

/// Loads a scenario file and builds a simulation with the built-in oracle
/// backend. `baseline` non-zero runs the plain planner without any VLM.
///
/// # Safety
/// `path` must be a NUL-terminated string, `out` writable. The handle must be
/// released with [`convoi_sim_free`].
#[no_mangle]
pub unsafe extern "C" fn convoi_sim_load(path: *const c_char, baseline: bool, out: *mut *mut ConvoiSim) -> ConvoiStatus {
    guarded(|| {
        if path.is_null() {
            return Err(null("path"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        *out = std::ptr::null_mut();
        let path = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| (ConvoiStatus::InvalidArgument, "path is not UTF-8".to_string()))?;
        let scenario = Scenario::load(Path::new(path)).map_err(|e| {
            let status = match e {
                ScenarioError::Io { .. } => ConvoiStatus::Io,
                _ => ConvoiStatus::Scenario,
            };
            (status, e.to_string())
        })?;
        let opts = RunOptions {
            mode: if baseline { NavMode::Baseline } else { NavMode::Convoi },
            ..Default::default()
        };
        let sim = Simulation::new(scenario, &opts).map_err(|e| (ConvoiStatus::Scenario, e))?;
        *out = Box::into_raw(Box::new(ConvoiSim { sim }));
        Ok(())
    })
}

/// Releases a handle from [`convoi_sim_load`]. Null is ignored.
///
/// # Safety
/// `sim` must come from [`convoi_sim_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn convoi_sim_free(sim: *mut ConvoiSim) {
    if !sim.is_null() {
        drop(Box::from_raw(sim));
    }
}

fn report(s: &Simulation, collision: bool, goal_reached: bool) -> ConvoiStep {
    ConvoiStep {
        tick: s.tick,
        pose: ConvoiPose {
            x: s.state.pose.x,
            y: s.state.pose.y,
            theta: s.state.pose.theta,
        },
        v: s.state.v,
        omega: s.state.omega,
        collision,
        goal_reached,
    }
}

unsafe fn step_with(sim: *mut ConvoiSim, control: Control, out: *mut ConvoiStep) -> ConvoiStatus {
    guarded(|| {
        let sim = sim.as_mut().ok_or_else(|| null("sim"))?;
        let r = sim
            .sim
            .step(control)
            .map_err(|e| (ConvoiStatus::Io, e.to_string()))?;
        if !out.is_null() {
            *out = report(&sim.sim, r.collision, r.goal_reached);
        }
        Ok(())
    })
}

/// Advances one tick under the navigator. `out` may be null.
///
/// # Safety
/// `sim` must be a live handle, `out` writable or null.
#[no_mangle]
pub unsafe extern "C" fn convoi_sim_step(sim: *mut ConvoiSim, out: *mut ConvoiStep) -> ConvoiStatus {
    step_with(sim, Control::Autonomous, out)
}

/// Advances one tick with an external velocity command (clamped to the robot
/// limits and stopped short of obstacles). `out` may be null.
///
/// # Safety
/// `sim` must be a live handle, `out` writable or null.
#[no_mangle]
pub unsafe extern "C" fn convoi_sim_step_manual(
    sim: *mut ConvoiSim,
    v: f64,
    omega: f64,
    out: *mut ConvoiStep,
) -> ConvoiStatus {
    step_with(sim, Control::Manual(VelocityCommand::new(v, omega)), out)
}

/// Current odometry pose.
///
/// # Safety
/// `sim` must be a live handle, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn convoi_sim_pose(sim: *const ConvoiSim, out: *mut ConvoiPose) -> ConvoiStatus {
    guarded(|| {
        let sim = sim.as_ref().ok_or_else(|| null("sim"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let p = sim.sim.state.pose;
        *out = ConvoiPose {
            x: p.x,
            y: p.y,
            theta: p.theta,
        };
        Ok(())
    })
}

/// Whether the robot is within the goal tolerance.
///
/// # Safety
/// `sim` must be a live handle, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn convoi_sim_goal_reached(sim: *const ConvoiSim, out: *mut bool) -> ConvoiStatus {
    guarded(|| {
        let sim = sim.as_ref().ok_or_else(|| null("sim"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = sim.sim.goal_reached();
        Ok(())
    })
}

/// Number of query requests sent to the VLM backend so far.
///
/// # Safety
/// `sim` must be a live handle, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn convoi_sim_query_count(sim: *const ConvoiSim, out: *mut u64) -> ConvoiStatus {
    guarded(|| {
        let sim = sim.as_ref().ok_or_else(|| null("sim"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = sim.sim.navigator.query_count();
        Ok(())
    })
}
