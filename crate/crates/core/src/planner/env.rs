//! Planar occupancy grid with a signed distance field.
//!
//! Text format: an optional header line `resolution <meters>`, then one line
//! per grid row using `#` for obstacles and `.` for free cells. The first
//! grid line is row 0 (smallest y); column 0 is the smallest x. Cell `(c, r)`
//! covers `[c·res, (c+1)·res) × [r·res, (r+1)·res)`.

use std::path::Path;

use nalgebra::Vector2;

use super::PlannerError;

#[derive(Debug, Clone, PartialEq)]
pub struct Environment {
    width: usize,
    height: usize,
    resolution: f64,
    occupied: Vec<bool>,
    sdf: Vec<f64>,
}

/// Distance from `p` to the axis-aligned square of side `res` centered at `c`.
fn point_square_distance(p: Vector2<f64>, c: Vector2<f64>, res: f64) -> f64 {
    let dx = ((p.x - c.x).abs() - 0.5 * res).max(0.0);
    let dy = ((p.y - c.y).abs() - 0.5 * res).max(0.0);
    dx.hypot(dy)
}

impl Environment {
    pub fn new(
        width: usize,
        height: usize,
        resolution: f64,
        occupied: Vec<bool>,
    ) -> Result<Self, PlannerError> {
        if !(resolution > 0.0) {
            return Err(PlannerError::Map(format!("resolution must be positive, got {resolution}")));
        }
        if width == 0 || height == 0 || occupied.len() != width * height {
            return Err(PlannerError::Map(format!(
                "grid of {width}×{height} needs {} cells, got {}",
                width * height,
                occupied.len()
            )));
        }
        let mut env = Environment {
            width,
            height,
            resolution,
            occupied,
            sdf: Vec::new(),
        };
        env.sdf = env.compute_sdf();
        Ok(env)
    }

    pub fn empty(width: usize, height: usize, resolution: f64) -> Result<Self, PlannerError> {
        Self::new(width, height, resolution, vec![false; width * height])
    }

    pub fn parse(text: &str) -> Result<Self, PlannerError> {
        let mut resolution = None;
        let mut rows: Vec<Vec<bool>> = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix("resolution") {
                let v: f64 = rest.trim().parse().map_err(|_| {
                    PlannerError::Map(format!("line {}: bad resolution `{}`", lineno + 1, rest.trim()))
                })?;
                resolution = Some(v);
                continue;
            }
            let row = line
                .chars()
                .map(|ch| match ch {
                    '#' => Ok(true),
                    '.' => Ok(false),
                    other => Err(PlannerError::Map(format!(
                        "line {}: unexpected character `{other}`",
                        lineno + 1
                    ))),
                })
                .collect::<Result<Vec<_>, _>>()?;
            if let Some(first) = rows.first() {
                if first.len() != row.len() {
                    return Err(PlannerError::Map(format!(
                        "line {}: row has {} cells, expected {}",
                        lineno + 1,
                        row.len(),
                        first.len()
                    )));
                }
            }
            rows.push(row);
        }
        let resolution =
            resolution.ok_or_else(|| PlannerError::Map("missing `resolution` header".into()))?;
        let height = rows.len();
        let width = rows.first().map_or(0, |r| r.len());
        Self::new(width, height, resolution, rows.concat())
    }

    pub fn load(path: &Path) -> Result<Self, PlannerError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| PlannerError::Map(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("resolution {}\n", self.resolution);
        for r in 0..self.height {
            for c in 0..self.width {
                s.push(if self.is_occupied(c, r) { '#' } else { '.' });
            }
            s.push('\n');
        }
        s
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn resolution(&self) -> f64 {
        self.resolution
    }

    pub fn is_occupied(&self, col: usize, row: usize) -> bool {
        self.occupied[row * self.width + col]
    }

    /// Marks every cell whose center lies in the given world rectangle.
    pub fn with_box(mut self, min: Vector2<f64>, max: Vector2<f64>) -> Self {
        for r in 0..self.height {
            for c in 0..self.width {
                let p = self.cell_center(c, r);
                if p.x >= min.x && p.x <= max.x && p.y >= min.y && p.y <= max.y {
                    self.occupied[r * self.width + c] = true;
                }
            }
        }
        self.sdf = self.compute_sdf();
        self
    }

    pub fn cell_center(&self, col: usize, row: usize) -> Vector2<f64> {
        Vector2::new(
            (col as f64 + 0.5) * self.resolution,
            (row as f64 + 0.5) * self.resolution,
        )
    }

    pub fn cell_of(&self, p: &Vector2<f64>) -> Option<(usize, usize)> {
        if !self.in_bounds(p) {
            return None;
        }
        let c = ((p.x / self.resolution) as usize).min(self.width - 1);
        let r = ((p.y / self.resolution) as usize).min(self.height - 1);
        Some((c, r))
    }

    pub fn in_bounds(&self, p: &Vector2<f64>) -> bool {
        p.x >= 0.0
            && p.y >= 0.0
            && p.x <= self.width as f64 * self.resolution
            && p.y <= self.height as f64 * self.resolution
    }

    /// Signed distance at a cell center. The map border counts as a wall.
    pub fn cell_sdf(&self, col: usize, row: usize) -> f64 {
        self.sdf[row * self.width + col]
    }

    fn compute_sdf(&self) -> Vec<f64> {
        let res = self.resolution;
        let (w, h) = (self.width, self.height);
        let (xmax, ymax) = (w as f64 * res, h as f64 * res);
        let occ: Vec<Vector2<f64>> = (0..h)
            .flat_map(|r| (0..w).map(move |c| (c, r)))
            .filter(|&(c, r)| self.is_occupied(c, r))
            .map(|(c, r)| self.cell_center(c, r))
            .collect();
        let free: Vec<Vector2<f64>> = (0..h)
            .flat_map(|r| (0..w).map(move |c| (c, r)))
            .filter(|&(c, r)| !self.is_occupied(c, r))
            .map(|(c, r)| self.cell_center(c, r))
            .collect();
        let mut sdf = vec![0.0; w * h];
        for r in 0..h {
            for c in 0..w {
                let p = self.cell_center(c, r);
                sdf[r * w + c] = if self.is_occupied(c, r) {
                    let d = free
                        .iter()
                        .map(|q| point_square_distance(p, *q, res))
                        .fold(f64::INFINITY, f64::min);
                    -d
                } else {
                    let border = p.x.min(p.y).min(xmax - p.x).min(ymax - p.y);
                    occ.iter()
                        .map(|q| point_square_distance(p, *q, res))
                        .fold(border, f64::min)
                };
            }
        }
        sdf
    }

    /// Bilinear interpolation of the cell-center field; `-∞` outside the map.
    pub fn sdf_at(&self, p: &Vector2<f64>) -> f64 {
        if !self.in_bounds(p) {
            return f64::NEG_INFINITY;
        }
        let res = self.resolution;
        let fx = (p.x / res - 0.5).clamp(0.0, (self.width - 1) as f64);
        let fy = (p.y / res - 0.5).clamp(0.0, (self.height - 1) as f64);
        let (c0, r0) = (fx.floor() as usize, fy.floor() as usize);
        let (c1, r1) = ((c0 + 1).min(self.width - 1), (r0 + 1).min(self.height - 1));
        let (tx, ty) = (fx - c0 as f64, fy - r0 as f64);
        let a = self.cell_sdf(c0, r0) * (1.0 - tx) + self.cell_sdf(c1, r0) * tx;
        let b = self.cell_sdf(c0, r1) * (1.0 - tx) + self.cell_sdf(c1, r1) * tx;
        a * (1.0 - ty) + b * ty
    }
}
