//! Context-aware navigation with vision-language models, plus a 2D simulator
//! to run it in.
//!
//! The loop per control tick: lidar occupancy grid -> free-space markers on
//! the camera image -> context classification -> (occasionally) a large-VLM
//! query for a reference path -> dynamic-window planning that tracks it.

pub mod context;
pub mod eval;
pub mod geometry;
pub mod grid;
pub mod http;
pub mod marking;
pub mod metrics;
pub mod navigator;
pub mod planner;
pub mod runlog;
pub mod scene;
pub mod service;
pub mod sim;
pub mod vlm;
pub mod world;
