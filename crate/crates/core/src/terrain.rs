//! Elevation maps: storage, synthetic rock fields, bilinear height queries and
//! pose-aligned patch extraction.
//!
//! Cell `(c, r)` has its center at `(origin_x + c * resolution, origin_y + r *
//! resolution)`. Heights are absolute and measured from a flat floor at 0.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::codec;
use crate::error::{invalid, FormatError, Result};

const MAP_MAGIC: &str = "EMAP v1";

/// Number of cells along the body's forward axis in a model patch.
pub const PATCH_COLS: usize = 100;
/// Number of cells across the body in a model patch.
pub const PATCH_ROWS: usize = 40;
pub const PATCH_CELLS: usize = PATCH_COLS * PATCH_ROWS;
pub const PATCH_RESOLUTION: f64 = 0.008;

/// Planar pose used to anchor patches and contact points.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Pose2 {
    pub x: f64,
    pub y: f64,
    pub yaw: f64,
}

impl Pose2 {
    pub fn new(x: f64, y: f64, yaw: f64) -> Self {
        Self { x, y, yaw }
    }

    /// Maps a body-frame offset (forward, left) to world coordinates.
    #[inline]
    pub fn transform(&self, forward: f64, left: f64) -> (f64, f64) {
        let (s, c) = self.yaw.sin_cos();
        (
            self.x + forward * c - left * s,
            self.y + forward * s + left * c,
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ElevationMap {
    cols: usize,
    rows: usize,
    resolution: f64,
    origin_x: f64,
    origin_y: f64,
    heights: Vec<f32>,
}

impl ElevationMap {
    pub fn new(
        cols: usize,
        rows: usize,
        resolution: f64,
        origin_x: f64,
        origin_y: f64,
        heights: Vec<f32>,
    ) -> Result<Self> {
        if cols < 2 {
            return Err(invalid("cols", format!("need at least 2, got {cols}")));
        }
        if rows < 2 {
            return Err(invalid("rows", format!("need at least 2, got {rows}")));
        }
        if !(resolution > 0.0 && resolution.is_finite()) {
            return Err(invalid("resolution", format!("must be positive, got {resolution}")));
        }
        if !origin_x.is_finite() || !origin_y.is_finite() {
            return Err(invalid("origin", "must be finite"));
        }
        if heights.len() != cols * rows {
            return Err(invalid(
                "heights",
                format!("expected {} values, got {}", cols * rows, heights.len()),
            ));
        }
        if let Some(bad) = heights.iter().find(|h| !h.is_finite() || **h < 0.0) {
            return Err(invalid("heights", format!("every height must be finite and >= 0, found {bad}")));
        }
        Ok(Self {
            cols,
            rows,
            resolution,
            origin_x,
            origin_y,
            heights,
        })
    }

    /// Constant-height map with its first cell at the world origin.
    pub fn flat(cols: usize, rows: usize, resolution: f64, height: f32) -> Result<Self> {
        Self::new(cols, rows, resolution, 0.0, 0.0, vec![height; cols * rows])
    }

    /// Builds a map by evaluating `f(x, y)` at every cell center.
    pub fn from_fn(
        cols: usize,
        rows: usize,
        resolution: f64,
        origin_x: f64,
        origin_y: f64,
        mut f: impl FnMut(f64, f64) -> f64,
    ) -> Result<Self> {
        let mut heights = Vec::with_capacity(cols * rows);
        for r in 0..rows {
            for c in 0..cols {
                let x = origin_x + c as f64 * resolution;
                let y = origin_y + r as f64 * resolution;
                heights.push(f(x, y) as f32);
            }
        }
        Self::new(cols, rows, resolution, origin_x, origin_y, heights)
    }

    pub fn cols(&self) -> usize {
        self.cols
    }
    pub fn rows(&self) -> usize {
        self.rows
    }
    pub fn resolution(&self) -> f64 {
        self.resolution
    }
    pub fn origin(&self) -> (f64, f64) {
        (self.origin_x, self.origin_y)
    }
    pub fn heights(&self) -> &[f32] {
        &self.heights
    }

    /// World extent covered by cell centers: `(x_min, y_min, x_max, y_max)`.
    pub fn bounds(&self) -> (f64, f64, f64, f64) {
        (
            self.origin_x,
            self.origin_y,
            self.origin_x + (self.cols - 1) as f64 * self.resolution,
            self.origin_y + (self.rows - 1) as f64 * self.resolution,
        )
    }

    #[inline]
    pub fn cell(&self, col: usize, row: usize) -> f32 {
        self.heights[row * self.cols + col]
    }

    pub fn max_height(&self) -> f32 {
        self.heights.iter().copied().fold(0.0, f32::max)
    }

    /// Bilinear height at a world position, or `None` outside the hull of
    /// cell centers.
    pub fn elevation_at(&self, x: f64, y: f64) -> Option<f64> {
        let fx = (x - self.origin_x) / self.resolution;
        let fy = (y - self.origin_y) / self.resolution;
        let max_c = (self.cols - 1) as f64;
        let max_r = (self.rows - 1) as f64;
        // `!(a >= b)` also rejects NaN.
        if !(fx >= 0.0 && fx <= max_c && fy >= 0.0 && fy <= max_r) {
            return None;
        }
        let c0 = (fx.floor() as usize).min(self.cols - 2);
        let r0 = (fy.floor() as usize).min(self.rows - 2);
        let tx = fx - c0 as f64;
        let ty = fy - r0 as f64;
        let h00 = self.cell(c0, r0) as f64;
        let h10 = self.cell(c0 + 1, r0) as f64;
        let h01 = self.cell(c0, r0 + 1) as f64;
        let h11 = self.cell(c0 + 1, r0 + 1) as f64;
        let lower = (1.0 - tx) * h00 + tx * h10;
        let upper = (1.0 - tx) * h01 + tx * h11;
        Some((1.0 - ty) * lower + ty * upper)
    }

    /// Writes the map in the `EMAP v1` format.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(64 + self.heights.len() * 4);
        out.extend_from_slice(MAP_MAGIC.as_bytes());
        out.push(b'\n');
        out.extend_from_slice(
            format!(
                "{} {} {} {} {}\n",
                self.cols, self.rows, self.resolution, self.origin_x, self.origin_y
            )
            .as_bytes(),
        );
        for &h in &self.heights {
            codec::push_f32(&mut out, h);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let rest = codec::read_magic(bytes, "EMAP", MAP_MAGIC)?;
        let (header, payload) = codec::take_line(rest)?;
        let mut tokens = header.split(' ');
        let cols: usize = codec::parse_field(tokens.next(), "cols")?;
        let rows: usize = codec::parse_field(tokens.next(), "rows")?;
        let resolution: f64 = codec::parse_field(tokens.next(), "resolution")?;
        let origin_x: f64 = codec::parse_field(tokens.next(), "origin_x")?;
        let origin_y: f64 = codec::parse_field(tokens.next(), "origin_y")?;
        if tokens.next().is_some() {
            return Err(FormatError::MalformedHeader("unexpected extra header fields".into()).into());
        }
        if cols < 2 || rows < 2 || !(resolution > 0.0) {
            return Err(FormatError::MalformedHeader(format!(
                "invalid dimensions {cols}x{rows} at resolution {resolution}"
            ))
            .into());
        }
        let n = cols
            .checked_mul(rows)
            .ok_or_else(|| FormatError::MalformedHeader("dimensions overflow".into()))?;
        codec::ensure_len(payload, n * 4)?;
        let heights = (0..n).map(|i| codec::f32_at(payload, i)).collect();
        Self::new(cols, rows, resolution, origin_x, origin_y, heights)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

/// Parameters for a synthetic rock field. `width` is the extent along world
/// x (columns) and `length` the extent along world y (rows).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TerrainGenSpec {
    pub seed: u64,
    pub width: f64,
    pub length: f64,
    pub resolution: f64,
    pub max_height: f64,
    pub rock_count: usize,
    pub rock_radius_mean: f64,
    pub rock_radius_std: f64,
    /// Rock-free strip at both x ends, so start and goal areas stay flat.
    #[serde(default)]
    pub end_clearance: f64,
}

impl Default for TerrainGenSpec {
    fn default() -> Self {
        Self {
            seed: 7,
            width: 3.1,
            length: 1.3,
            resolution: 0.008,
            max_height: 0.6,
            rock_count: 60,
            rock_radius_mean: 0.15,
            rock_radius_std: 0.05,
            end_clearance: 0.0,
        }
    }
}

impl TerrainGenSpec {
    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64| v > 0.0 && v.is_finite();
        if !positive(self.width) {
            return Err(invalid("width", format!("must be > 0, got {}", self.width)));
        }
        if !positive(self.length) {
            return Err(invalid("length", format!("must be > 0, got {}", self.length)));
        }
        if !positive(self.resolution) {
            return Err(invalid("resolution", format!("must be > 0, got {}", self.resolution)));
        }
        if !positive(self.max_height) {
            return Err(invalid("max_height", format!("must be > 0, got {}", self.max_height)));
        }
        if !positive(self.rock_radius_mean) {
            return Err(invalid(
                "rock_radius_mean",
                format!("must be > 0, got {}", self.rock_radius_mean),
            ));
        }
        if !(self.rock_radius_std >= 0.0 && self.rock_radius_std.is_finite()) {
            return Err(invalid("rock_radius_std", "must be finite and >= 0"));
        }
        if !(self.end_clearance >= 0.0 && self.end_clearance.is_finite()) {
            return Err(invalid("end_clearance", "must be finite and >= 0"));
        }
        if self.width / self.resolution < 1.0 || self.length / self.resolution < 1.0 {
            return Err(invalid("resolution", "map must span at least 2 cells per axis"));
        }
        Ok(())
    }

    /// Grid dimensions `(cols, rows)`: cell centers span `[0, extent]`.
    pub fn dims(&self) -> (usize, usize) {
        (
            (self.width / self.resolution).floor() as usize + 1,
            (self.length / self.resolution).floor() as usize + 1,
        )
    }
}

/// Smooth cosine bump: `h` at the center, falling to 0 at `radius`.
#[inline]
fn bump(h: f64, radius: f64, d: f64) -> f64 {
    if d >= radius {
        0.0
    } else {
        0.5 * h * (1.0 + (std::f64::consts::PI * d / radius).cos())
    }
}

/// Generates a deterministic rock field: cosine bumps composed by `max` over a
/// flat floor. Rocks never touch the outer two cells, nor the end clearance
/// strips.
pub fn generate_rock_field(spec: &TerrainGenSpec) -> Result<ElevationMap> {
    spec.validate()?;
    let (cols, rows) = spec.dims();
    let res = spec.resolution;
    let mut field = vec![0.0f64; cols * rows];
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let radius_dist = Normal::new(spec.rock_radius_mean, spec.rock_radius_std)
        .map_err(|e| invalid("rock_radius_std", e.to_string()))?;
    let x_extent = (cols - 1) as f64 * res;
    let y_extent = (rows - 1) as f64 * res;
    let border = 3.0 * res;

    for _ in 0..spec.rock_count {
        let radius = radius_dist
            .sample(&mut rng)
            .max(0.25 * spec.rock_radius_mean)
            .max(2.0 * res);
        let peak = spec.max_height * rng.gen_range(0.35..=1.0);
        let (cx, cy) = (rng.gen::<f64>(), rng.gen::<f64>());
        let x_lo = border.max(spec.end_clearance) + radius;
        let x_hi = x_extent - border.max(spec.end_clearance) - radius;
        let y_lo = border + radius;
        let y_hi = y_extent - border - radius;
        if x_lo >= x_hi || y_lo >= y_hi {
            continue;
        }
        let cx = x_lo + cx * (x_hi - x_lo);
        let cy = y_lo + cy * (y_hi - y_lo);

        let c_min = ((cx - radius) / res).floor().max(0.0) as usize;
        let c_max = (((cx + radius) / res).ceil() as usize).min(cols - 1);
        let r_min = ((cy - radius) / res).floor().max(0.0) as usize;
        let r_max = (((cy + radius) / res).ceil() as usize).min(rows - 1);
        for r in r_min..=r_max {
            let y = r as f64 * res;
            for c in c_min..=c_max {
                let x = c as f64 * res;
                let d = ((x - cx).powi(2) + (y - cy).powi(2)).sqrt();
                let cell = &mut field[r * cols + c];
                *cell = cell.max(bump(peak, radius, d));
            }
        }
    }

    let heights = field.into_iter().map(codec::f32_floor).collect();
    ElevationMap::new(cols, rows, res, 0.0, 0.0, heights)
}

/// Sampling layout for a pose-aligned patch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PatchSpec {
    /// Cells along the body's forward axis.
    pub cols: usize,
    /// Cells across the body.
    pub rows: usize,
    pub resolution: f64,
}

impl Default for PatchSpec {
    fn default() -> Self {
        Self {
            cols: PATCH_COLS,
            rows: PATCH_ROWS,
            resolution: PATCH_RESOLUTION,
        }
    }
}

/// Terrain heights sampled on a grid centered on a pose and aligned with its
/// heading. `cells[row * cols + col]`; `col` runs forward, `row` runs to the
/// left.
#[derive(Debug, Clone, PartialEq)]
pub struct ElevationPatch {
    pub rows: usize,
    pub cols: usize,
    pub cells: Vec<f32>,
    pub anchor: Pose2,
    pub out_of_bounds_count: usize,
}

impl ElevationPatch {
    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }
}

pub fn extract_patch(map: &ElevationMap, pose: Pose2, spec: PatchSpec) -> ElevationPatch {
    let mut cells = Vec::with_capacity(spec.rows * spec.cols);
    let mut out_of_bounds = 0;
    let (s, c) = pose.yaw.sin_cos();
    let half_cols = (spec.cols as f64 - 1.0) / 2.0;
    let half_rows = (spec.rows as f64 - 1.0) / 2.0;
    for j in 0..spec.rows {
        let left = (j as f64 - half_rows) * spec.resolution;
        for i in 0..spec.cols {
            let forward = (i as f64 - half_cols) * spec.resolution;
            let x = pose.x + forward * c - left * s;
            let y = pose.y + forward * s + left * c;
            match map.elevation_at(x, y) {
                Some(h) => cells.push(h as f32),
                None => {
                    out_of_bounds += 1;
                    cells.push(0.0);
                }
            }
        }
    }
    ElevationPatch {
        rows: spec.rows,
        cols: spec.cols,
        cells,
        anchor: pose,
        out_of_bounds_count: out_of_bounds,
    }
}
