//! Robot-centric occupancy grid and discrete line tests.
//!
//! Cell `(row, col)` has its center at `x = (row - n/2) * res` (forward) and
//! `y = (col - n/2) * res` (left) in the robot frame. The robot occupies cell
//! `(n/2, n/2)`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Point2;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GridError {
    #[error("cell ({0}, {1}) outside the {2}x{2} grid")]
    OutOfBounds(i64, i64, usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Cell {
    pub row: i64,
    pub col: i64,
}

impl Cell {
    pub const fn new(row: i64, col: i64) -> Self {
        Self { row, col }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyGrid {
    n: usize,
    resolution: f64,
    occupied: Vec<bool>,
}

impl OccupancyGrid {
    pub fn empty(n: usize, resolution: f64) -> Self {
        assert!(n >= 2 && n % 2 == 0, "grid size must be even");
        assert!(resolution > 0.0);
        Self {
            n,
            resolution,
            occupied: vec![false; n * n],
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn resolution(&self) -> f64 {
        self.resolution
    }

    pub fn center(&self) -> Cell {
        let h = (self.n / 2) as i64;
        Cell::new(h, h)
    }

    pub fn in_bounds(&self, c: Cell) -> bool {
        c.row >= 0 && c.col >= 0 && (c.row as usize) < self.n && (c.col as usize) < self.n
    }

    fn idx(&self, c: Cell) -> usize {
        c.row as usize * self.n + c.col as usize
    }

    /// Out-of-bounds cells read as free.
    pub fn is_occupied(&self, c: Cell) -> bool {
        self.in_bounds(c) && self.occupied[self.idx(c)]
    }

    pub fn set_occupied(&mut self, c: Cell, occ: bool) {
        if self.in_bounds(c) {
            let i = self.idx(c);
            self.occupied[i] = occ;
        }
    }

    pub fn occupied_cells(&self) -> impl Iterator<Item = Cell> + '_ {
        let n = self.n;
        self.occupied
            .iter()
            .enumerate()
            .filter(|(_, o)| **o)
            .map(move |(i, _)| Cell::new((i / n) as i64, (i % n) as i64))
    }

    pub fn occupied_count(&self) -> usize {
        self.occupied.iter().filter(|o| **o).count()
    }

    /// Cell containing a robot-frame point (may be out of bounds).
    pub fn cell_of(&self, p: Point2) -> Cell {
        let h = (self.n / 2) as f64;
        Cell::new(
            (h + p.x / self.resolution).round() as i64,
            (h + p.y / self.resolution).round() as i64,
        )
    }

    pub fn cell_center(&self, c: Cell) -> Point2 {
        let h = (self.n / 2) as i64;
        Point2::new(
            (c.row - h) as f64 * self.resolution,
            (c.col - h) as f64 * self.resolution,
        )
    }

    /// Continuous cell-unit coordinates of a robot-frame point.
    fn to_cell_units(&self, p: Point2) -> (f64, f64) {
        let h = (self.n / 2) as f64;
        (h + p.x / self.resolution, h + p.y / self.resolution)
    }

    /// Marks every cell within `radius_cells` (Euclidean, in cells) of a seed cell.
    pub fn dilate(&mut self, seeds: &[Cell], radius_cells: i64) {
        let r2 = radius_cells * radius_cells;
        for s in seeds {
            for dr in -radius_cells..=radius_cells {
                for dc in -radius_cells..=radius_cells {
                    if dr * dr + dc * dc <= r2 {
                        self.set_occupied(Cell::new(s.row + dr, s.col + dc), true);
                    }
                }
            }
        }
    }

    /// Visibility test: no occupied cell on the supercover segment from the
    /// robot cell (exclusive) to `cell` (inclusive).
    pub fn line_of_sight_free(&self, cell: Cell) -> Result<bool, GridError> {
        if !self.in_bounds(cell) {
            return Err(GridError::OutOfBounds(cell.row, cell.col, self.n));
        }
        let c = self.center();
        let start = (c.row as f64, c.col as f64);
        let end = (cell.row as f64, cell.col as f64);
        Ok(supercover(start, end)
            .into_iter()
            .filter(|x| *x != c)
            .all(|x| !self.is_occupied(x)))
    }

    /// True if any cell touched by the robot-frame segment `a`-`b` is occupied.
    pub fn segment_hits(&self, a: Point2, b: Point2) -> bool {
        supercover(self.to_cell_units(a), self.to_cell_units(b))
            .into_iter()
            .any(|c| self.is_occupied(c))
    }

    /// Exact squared Euclidean distance (in cells²) from every cell center to the
    /// nearest occupied cell center; `f64::INFINITY` when the grid is empty.
    pub fn distance_field_sq(&self) -> Vec<f64> {
        let n = self.n;
        let mut f: Vec<f64> = self
            .occupied
            .iter()
            .map(|&o| if o { 0.0 } else { f64::INFINITY })
            .collect();
        let mut line = vec![0.0; n];
        let mut out = vec![0.0; n];
        // columns then rows (separable transform)
        for col in 0..n {
            for row in 0..n {
                line[row] = f[row * n + col];
            }
            edt_1d(&line, &mut out);
            for row in 0..n {
                f[row * n + col] = out[row];
            }
        }
        for row in 0..n {
            line.copy_from_slice(&f[row * n..(row + 1) * n]);
            edt_1d(&line, &mut out);
            f[row * n..(row + 1) * n].copy_from_slice(&out);
        }
        f
    }

    pub fn index_of(&self, c: Cell) -> Option<usize> {
        self.in_bounds(c).then(|| self.idx(c))
    }
}

// Felzenszwalb & Huttenlocher lower envelope of parabolas.
fn edt_1d(f: &[f64], d: &mut [f64]) {
    let n = f.len();
    let mut v = vec![0usize; n];
    let mut z = vec![0.0f64; n + 1];
    let mut k = 0usize;
    let first = f.iter().position(|x| x.is_finite());
    let Some(first) = first else {
        d.iter_mut().for_each(|x| *x = f64::INFINITY);
        return;
    };
    v[0] = first;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    for q in first + 1..n {
        if !f[q].is_finite() {
            continue;
        }
        let intersect = |q: usize, p: usize| {
            ((f[q] + (q * q) as f64) - (f[p] + (p * p) as f64)) / (2.0 * q as f64 - 2.0 * p as f64)
        };
        let mut s = intersect(q, v[k]);
        // z[0] is -inf, so this never underflows
        while s <= z[k] {
            k -= 1;
            s = intersect(q, v[k]);
        }
        k += 1;
        v[k] = q;
        z[k] = s;
        z[k + 1] = f64::INFINITY;
    }
    let mut k = 0;
    for (q, dq) in d.iter_mut().enumerate().take(n) {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let p = v[k];
        let diff = q as f64 - p as f64;
        *dq = diff * diff + f[p];
    }
}

/// All cells touched by the continuous segment between two points given in
/// cell units (cell `(r, c)` covers `[r-0.5, r+0.5] x [c-0.5, c+0.5]`). When the
/// segment passes exactly through a cell corner, both side cells are included.
pub fn supercover(a: (f64, f64), b: (f64, f64)) -> Vec<Cell> {
    const EPS: f64 = 1e-9;
    let mut r = (a.0 + 0.5).floor() as i64;
    let mut c = (a.1 + 0.5).floor() as i64;
    let end_r = (b.0 + 0.5).floor() as i64;
    let end_c = (b.1 + 0.5).floor() as i64;
    let dr = b.0 - a.0;
    let dc = b.1 - a.1;
    let step_r: i64 = if dr > 0.0 { 1 } else { -1 };
    let step_c: i64 = if dc > 0.0 { 1 } else { -1 };

    let boundary = |pos: f64, cell: i64, step: i64| -> f64 {
        if step > 0 {
            cell as f64 + 0.5 - pos
        } else {
            pos - (cell as f64 - 0.5)
        }
    };
    let mut t_max_r = if dr.abs() < EPS { f64::INFINITY } else { boundary(a.0, r, step_r) / dr.abs() };
    let mut t_max_c = if dc.abs() < EPS { f64::INFINITY } else { boundary(a.1, c, step_c) / dc.abs() };
    let t_delta_r = if dr.abs() < EPS { f64::INFINITY } else { 1.0 / dr.abs() };
    let t_delta_c = if dc.abs() < EPS { f64::INFINITY } else { 1.0 / dc.abs() };

    let mut cells = vec![Cell::new(r, c)];
    let max_steps = ((end_r - r).abs() + (end_c - c).abs() + 2) as usize;
    for _ in 0..max_steps {
        if r == end_r && c == end_c {
            break;
        }
        let tr = t_max_r;
        let tc = t_max_c;
        if tr.min(tc) > 1.0 + EPS {
            break;
        }
        if (tr - tc).abs() < EPS {
            // corner crossing: touch both neighbors, then move diagonally
            cells.push(Cell::new(r + step_r, c));
            cells.push(Cell::new(r, c + step_c));
            r += step_r;
            c += step_c;
            t_max_r += t_delta_r;
            t_max_c += t_delta_c;
        } else if tr < tc {
            r += step_r;
            t_max_r += t_delta_r;
        } else {
            c += step_c;
            t_max_c += t_delta_c;
        }
        cells.push(Cell::new(r, c));
    }
    cells
}
