//! Free-space visual marking: candidate lattice, occlusion filtering, ordering
//! and numeric labels drawn onto the camera image.

use image::{Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use crate::geometry::{CameraModel, Pixel, Point2, Pose2D};
use crate::grid::{Cell, OccupancyGrid};

/// `rows` x `cols` lattice of candidate ground points ahead of the robot.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CandidateLayout {
    pub rows: usize,
    pub cols: usize,
    pub d_row: f64,
    pub d_col: f64,
    pub first_row_distance: f64,
}

impl CandidateLayout {
    pub fn outdoor() -> Self {
        Self {
            rows: 2,
            cols: 6,
            d_row: 2.5,
            d_col: 2.0,
            first_row_distance: 2.5,
        }
    }

    pub fn indoor() -> Self {
        Self {
            rows: 3,
            ..Self::outdoor()
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.rows == 0 || self.cols == 0 {
            return Err("layout needs at least one row and one column".into());
        }
        if !(self.d_row > 0.0 && self.d_col > 0.0) {
            return Err("d_row and d_col must be positive".into());
        }
        if !(self.first_row_distance > 0.0) {
            return Err("first_row_distance must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Candidate {
    pub row: usize,
    pub col: usize,
    pub point: Point2,
}

/// Lattice points in the robot frame, nearest row first, each row from left (+y)
/// to right.
pub fn generate_candidates(layout: &CandidateLayout) -> Vec<Candidate> {
    let mut out = Vec::with_capacity(layout.rows * layout.cols);
    let half = (layout.cols as f64 - 1.0) / 2.0;
    for i in 0..layout.rows {
        let x = layout.first_row_distance + i as f64 * layout.d_row;
        for j in 0..layout.cols {
            let y = (half - j as f64) * layout.d_col;
            out.push(Candidate {
                row: i,
                col: j,
                point: Point2::new(x, y),
            });
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarkerEntry {
    pub label: u32,
    /// Candidate row the marker came from (0 = nearest).
    pub row: usize,
    pub grid_cell: Cell,
    /// Robot frame at marking time.
    pub ground_point: Point2,
    pub pixel: (f64, f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarkerSet {
    pub entries: Vec<MarkerEntry>,
    pub image_id: String,
    pub tick: u64,
    /// Odometry pose the robot-frame points are relative to.
    pub robot_pose: Pose2D,
}

impl MarkerSet {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, label: u32) -> Option<&MarkerEntry> {
        self.entries.iter().find(|e| e.label == label)
    }

    pub fn labels(&self) -> Vec<u32> {
        self.entries.iter().map(|e| e.label).collect()
    }

    /// Ground point of an entry in the odom frame.
    pub fn odom_point(&self, e: &MarkerEntry) -> Point2 {
        self.robot_pose.to_parent(crate::geometry::Frame::Robot).map(e.ground_point)
    }
}

/// Marks free, unoccluded, visible candidates. With `free_space_only = false` the
/// occupancy filter is skipped and every visible candidate is marked (the
/// ablation without occupancy-aware marking).
pub fn build_marker_set_with(
    grid: &OccupancyGrid,
    layout: &CandidateLayout,
    cam: &CameraModel,
    robot_pose: Pose2D,
    tick: u64,
    free_space_only: bool,
) -> MarkerSet {
    let mut kept: Vec<(usize, Cell, Point2, Pixel)> = Vec::new();
    for cand in generate_candidates(layout) {
        let cell = grid.cell_of(cand.point);
        if !grid.in_bounds(cell) {
            continue;
        }
        if free_space_only && !grid.line_of_sight_free(cell).unwrap_or(false) {
            continue;
        }
        if let Some(px) = cam.project_ground_to_pixel(cand.point).pixel() {
            kept.push((cand.row, cell, cand.point, px));
        }
    }
    kept.sort_by(|a, b| a.0.cmp(&b.0).then(a.3.u.total_cmp(&b.3.u)));
    let entries = kept
        .into_iter()
        .enumerate()
        .map(|(i, (row, cell, p, px))| MarkerEntry {
            label: i as u32 + 1,
            row,
            grid_cell: cell,
            ground_point: p,
            pixel: (px.u, px.v),
        })
        .collect();
    MarkerSet {
        entries,
        image_id: format!("tick{tick:06}"),
        tick,
        robot_pose,
    }
}

pub fn build_marker_set(
    grid: &OccupancyGrid,
    layout: &CandidateLayout,
    cam: &CameraModel,
    robot_pose: Pose2D,
    tick: u64,
) -> MarkerSet {
    build_marker_set_with(grid, layout, cam, robot_pose, tick, true)
}

// 5x7 digit glyphs, one byte per row, low 5 bits used (MSB = leftmost column).
const DIGITS: [[u8; 7]; 10] = [
    [0x0E, 0x11, 0x13, 0x15, 0x19, 0x11, 0x0E],
    [0x04, 0x0C, 0x04, 0x04, 0x04, 0x04, 0x0E],
    [0x0E, 0x11, 0x01, 0x02, 0x04, 0x08, 0x1F],
    [0x1F, 0x02, 0x04, 0x02, 0x01, 0x11, 0x0E],
    [0x02, 0x06, 0x0A, 0x12, 0x1F, 0x02, 0x02],
    [0x1F, 0x10, 0x1E, 0x01, 0x01, 0x11, 0x0E],
    [0x06, 0x08, 0x10, 0x1E, 0x11, 0x11, 0x0E],
    [0x1F, 0x01, 0x02, 0x04, 0x08, 0x08, 0x08],
    [0x0E, 0x11, 0x11, 0x0E, 0x11, 0x11, 0x0E],
    [0x0E, 0x11, 0x11, 0x0F, 0x01, 0x02, 0x0C],
];

const SCALE: i64 = 2;
pub const MARKER_TEXT: Rgb<u8> = Rgb([255, 230, 0]);
pub const MARKER_BACKGROUND: Rgb<u8> = Rgb([0, 0, 0]);

/// Inclusive pixel box `(x0, y0, x1, y1)` a label occupies, before clipping.
pub fn glyph_box(label: u32, center: (f64, f64)) -> (i64, i64, i64, i64) {
    let digits = label.to_string().len() as i64;
    let w = digits * 6 * SCALE + SCALE;
    let h = 9 * SCALE;
    let x0 = center.0.round() as i64 - w / 2;
    let y0 = center.1.round() as i64 - h / 2;
    (x0, y0, x0 + w - 1, y0 + h - 1)
}

/// Copy of `img` with every marker label drawn as yellow digits on a black box.
pub fn annotate_image(img: &RgbImage, ms: &MarkerSet) -> RgbImage {
    let mut out = img.clone();
    let (w, h) = (out.width() as i64, out.height() as i64);
    let mut put = |x: i64, y: i64, c: Rgb<u8>| {
        if x >= 0 && y >= 0 && x < w && y < h {
            out.put_pixel(x as u32, y as u32, c);
        }
    };
    for e in &ms.entries {
        let (x0, y0, x1, y1) = glyph_box(e.label, e.pixel);
        for y in y0..=y1 {
            for x in x0..=x1 {
                put(x, y, MARKER_BACKGROUND);
            }
        }
        for (k, ch) in e.label.to_string().bytes().enumerate() {
            let glyph = DIGITS[(ch - b'0') as usize];
            let gx = x0 + SCALE + k as i64 * 6 * SCALE;
            let gy = y0 + SCALE;
            for (r, bits) in glyph.iter().enumerate() {
                for col in 0..5 {
                    if bits & (0x10 >> col) != 0 {
                        for sy in 0..SCALE {
                            for sx in 0..SCALE {
                                put(gx + col * SCALE + sx, gy + r as i64 * SCALE + sy, MARKER_TEXT);
                            }
                        }
                    }
                }
            }
        }
    }
    out
}
