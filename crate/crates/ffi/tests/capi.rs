use std::ffi::{CStr, CString};
use std::ptr;

use convoi_ffi::*;

fn last_error() -> String {
    let p = convoi_last_error();
    assert!(!p.is_null(), "expected an error message");
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn scenario(name: &str) -> CString {
    let p = format!("{}/../../scenarios/{name}.toml", env!("CARGO_MANIFEST_DIR"));
    CString::new(p).unwrap()
}

#[test]
fn frechet_hand_case() {
    let a = [0.0, 0.0, 1.0, 0.0, 2.0, 0.0];
    let b = [0.0, 1.0, 1.0, 2.0, 2.0, 1.0];
    let mut d = -1.0;
    let s = unsafe { convoi_frechet(a.as_ptr(), 3, b.as_ptr(), 3, &mut d) };
    assert_eq!(s, ConvoiStatus::Ok);
    assert_eq!(d, 2.0);
    assert!(convoi_last_error().is_null());

    // two vertices 10 m apart against a densely sampled copy of the same line
    let sparse = [0.0, 0.0, 10.0, 0.0];
    let dense: Vec<f64> = (0..=100).flat_map(|i| [i as f64 * 0.1, 0.0]).collect();
    let s = unsafe { convoi_trajectory_frechet(sparse.as_ptr(), 2, dense.as_ptr(), 101, &mut d) };
    assert_eq!(s, ConvoiStatus::Ok);
    assert!(d < 1e-9, "{d}");
}

#[test]
fn bad_arguments_set_status_and_message() {
    let a = [0.0, 0.0];
    let mut d = 0.0;
    let s = unsafe { convoi_frechet(ptr::null(), 1, a.as_ptr(), 1, &mut d) };
    assert_eq!(s, ConvoiStatus::NullArgument);
    assert!(last_error().contains("a is null"));
    let s = unsafe { convoi_frechet(a.as_ptr(), 0, a.as_ptr(), 1, &mut d) };
    assert_eq!(s, ConvoiStatus::InvalidArgument);
    let nan = [f64::NAN, 0.0];
    let s = unsafe { convoi_frechet(nan.as_ptr(), 1, a.as_ptr(), 1, &mut d) };
    assert_eq!(s, ConvoiStatus::InvalidArgument);
    assert!(last_error().contains("non-finite"));
}

#[test]
fn camera_round_trip() {
    let mut cam = std::mem::MaybeUninit::<ConvoiCamera>::uninit();
    assert_eq!(unsafe { convoi_camera_default(cam.as_mut_ptr()) }, ConvoiStatus::Ok);
    let cam = unsafe { cam.assume_init() };
    assert_eq!((cam.width, cam.height, cam.focal_px), (640, 480, 160.0));
    let (mut u, mut v, mut x, mut y) = (0.0, 0.0, 0.0, 0.0);
    assert_eq!(unsafe { convoi_project_ground(&cam, 4.0, 1.0, &mut u, &mut v) }, ConvoiStatus::Ok);
    assert_eq!(unsafe { convoi_pixel_to_ground(&cam, u, v, &mut x, &mut y) }, ConvoiStatus::Ok);
    assert!((x - 4.0).abs() < 1e-9 && (y - 1.0).abs() < 1e-9);
    assert_eq!(
        unsafe { convoi_project_ground(&cam, -2.0, 0.0, &mut u, &mut v) },
        ConvoiStatus::OutOfView
    );
    // above the horizon
    assert_eq!(unsafe { convoi_pixel_to_ground(&cam, 320.0, 1.0, &mut x, &mut y) }, ConvoiStatus::OutOfView);
    let broken = ConvoiCamera { focal_px: -1.0, ..cam };
    assert_eq!(
        unsafe { convoi_project_ground(&broken, 4.0, 0.0, &mut u, &mut v) },
        ConvoiStatus::InvalidArgument
    );
}

#[test]
fn load_errors() {
    let mut sim = ptr::null_mut();
    let missing = CString::new("/nonexistent/scenario.toml").unwrap();
    assert_eq!(unsafe { convoi_sim_load(missing.as_ptr(), false, &mut sim) }, ConvoiStatus::Io);
    assert!(sim.is_null());
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "schema_version = 1\nname = \"x\"\ngoal = [1.0]\n").unwrap();
    let bad = CString::new(bad.to_str().unwrap()).unwrap();
    assert_eq!(unsafe { convoi_sim_load(bad.as_ptr(), false, &mut sim) }, ConvoiStatus::Scenario);
    assert!(last_error().contains("bad.toml"));
    assert_eq!(unsafe { convoi_sim_load(ptr::null(), false, &mut sim) }, ConvoiStatus::NullArgument);
    unsafe { convoi_sim_free(ptr::null_mut()) };
}

#[test]
fn simulation_handle() {
    let path = scenario("corridor");
    let mut sim = ptr::null_mut();
    assert_eq!(unsafe { convoi_sim_load(path.as_ptr(), false, &mut sim) }, ConvoiStatus::Ok);
    assert!(!sim.is_null());
    let mut step = ConvoiStep::default();
    for _ in 0..50 {
        assert_eq!(unsafe { convoi_sim_step(sim, &mut step) }, ConvoiStatus::Ok);
        assert!(!step.collision);
    }
    assert_eq!(step.tick, 50);
    let mut pose = ConvoiPose::default();
    assert_eq!(unsafe { convoi_sim_pose(sim, &mut pose) }, ConvoiStatus::Ok);
    assert_eq!(pose, step.pose);
    assert!(pose.x > 0.5);
    let mut queries = 0;
    assert_eq!(unsafe { convoi_sim_query_count(sim, &mut queries) }, ConvoiStatus::Ok);
    assert_eq!(queries, 1);

    // spin in place; the robot coasts a little while it decelerates
    for _ in 0..10 {
        assert_eq!(unsafe { convoi_sim_step_manual(sim, 0.0, 0.5, ptr::null_mut()) }, ConvoiStatus::Ok);
    }
    let mut after = ConvoiPose::default();
    unsafe { convoi_sim_pose(sim, &mut after) };
    assert!((after.x - pose.x).abs() < 0.15 && after.theta > pose.theta + 0.3, "{pose:?} -> {after:?}");
    let mut reached = true;
    assert_eq!(unsafe { convoi_sim_goal_reached(sim, &mut reached) }, ConvoiStatus::Ok);
    assert!(!reached);
    unsafe { convoi_sim_free(sim) };
}

#[test]
fn header_declares_the_api() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/convoi.h")).unwrap();
    for f in [
        "convoi_last_error",
        "convoi_version",
        "convoi_frechet",
        "convoi_trajectory_frechet",
        "convoi_camera_default",
        "convoi_project_ground",
        "convoi_pixel_to_ground",
        "convoi_sim_load",
        "convoi_sim_free",
        "convoi_sim_step",
        "convoi_sim_step_manual",
        "convoi_sim_pose",
        "convoi_sim_goal_reached",
        "convoi_sim_query_count",
        "typedef struct ConvoiSim ConvoiSim",
        "CONVOI_STATUS_OK = 0",
    ] {
        assert!(header.contains(f), "header lacks {f}");
    }
    let v = unsafe { CStr::from_ptr(convoi_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}
