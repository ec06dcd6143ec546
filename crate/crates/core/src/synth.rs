//! Synthetic videos with exact ground-truth trajectories.
//!
//! A seeded band-limited texture and a seeded vessel mask live in reference
//! (frame 0) coordinates. Frame `t` shows them through the inverse of a
//! closed-form warp, with the vessel mask scaled by an enrichment gain that
//! ramps linearly over a configurable interval.

use std::f64::consts::TAU;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{make_grid, GridConfig};
use crate::imaging::{Frame, Point2, VideoSequence};
use crate::scalar::Scalar;

/// Knot spacing of the displacement basis fields, pixels.
const KNOT_SPACING: f64 = 16.0;
/// Contraction bound enforced on the displacement field.
const MAX_LIPSCHITZ: f64 = 0.9;
/// Wavelength range, pixels, of the phase and heading fields.
const WAVELENGTH: (f64, f64) = (640.0, 1280.0);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MotionKind {
    Static,
    /// Translation along +x at `amplitude` pixels per frame.
    LinearDrift,
    CardiacPeriodic,
}

impl fmt::Display for MotionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MotionKind::Static => "static",
            MotionKind::LinearDrift => "linear-drift",
            MotionKind::CardiacPeriodic => "cardiac-periodic",
        })
    }
}

impl FromStr for MotionKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "static" => Ok(MotionKind::Static),
            "linear-drift" => Ok(MotionKind::LinearDrift),
            "cardiac-periodic" => Ok(MotionKind::CardiacPeriodic),
            other => Err(Error::Config(format!("unknown motion kind '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MotionModel {
    pub kind: MotionKind,
    pub amplitude: f64,
    /// Seconds per cycle.
    pub period: f64,
    /// Peak magnitude, radians, of the spatial phase variation.
    pub phase_map: f64,
    pub field_seed: u64,
}

impl Default for MotionModel {
    fn default() -> Self {
        Self {
            kind: MotionKind::CardiacPeriodic,
            amplitude: 8.0,
            period: 1.0,
            phase_map: 1.0,
            field_seed: 7,
        }
    }
}

impl MotionModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.amplitude.is_finite() && self.amplitude >= 0.0) {
            return Err(Error::Config(format!("motion amplitude {} must be >= 0", self.amplitude)));
        }
        if !(self.period.is_finite() && self.period > 0.0) {
            return Err(Error::Config(format!("motion period {} must be > 0", self.period)));
        }
        if !self.phase_map.is_finite() {
            return Err(Error::Config("phase_map must be finite".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EnrichmentKind {
    None,
    Ramp,
}

impl FromStr for EnrichmentKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "none" => Ok(EnrichmentKind::None),
            "ramp" => Ok(EnrichmentKind::Ramp),
            other => Err(Error::Config(format!("unknown enrichment kind '{other}'"))),
        }
    }
}

impl fmt::Display for EnrichmentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EnrichmentKind::None => "none",
            EnrichmentKind::Ramp => "ramp",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnrichmentModel {
    pub kind: EnrichmentKind,
    /// Seconds.
    pub onset: f64,
    /// Seconds.
    pub duration: f64,
    pub vessel_mask_seed: u64,
    pub peak_gain: f64,
    /// Intensity added at a vessel centreline per unit gain.
    pub vessel_contrast: f64,
}

impl Default for EnrichmentModel {
    fn default() -> Self {
        Self {
            kind: EnrichmentKind::Ramp,
            onset: 2.0,
            duration: 8.0,
            vessel_mask_seed: 11,
            peak_gain: 3.0,
            vessel_contrast: 0.15,
        }
    }
}

impl EnrichmentModel {
    pub fn none() -> Self {
        Self {
            kind: EnrichmentKind::None,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.onset.is_finite() && self.onset >= 0.0) {
            return Err(Error::Config(format!("enrichment onset {} must be >= 0", self.onset)));
        }
        if self.kind == EnrichmentKind::Ramp && !(self.duration.is_finite() && self.duration > 0.0) {
            return Err(Error::Config(format!("ramp duration {} must be > 0", self.duration)));
        }
        if !(self.peak_gain.is_finite() && self.vessel_contrast.is_finite()) {
            return Err(Error::Config("enrichment gain and contrast must be finite".into()));
        }
        Ok(())
    }

    /// Vessel gain at `seconds`: zero before onset, linear up to the peak, then flat.
    pub fn gain(&self, seconds: f64) -> f64 {
        match self.kind {
            EnrichmentKind::None => 0.0,
            EnrichmentKind::Ramp => {
                let s = ((seconds - self.onset) / self.duration).clamp(0.0, 1.0);
                self.peak_gain * s
            }
        }
    }

    /// Frame range `[start, end)` of the ramp, clipped to `frames`.
    pub fn ramp_frames(&self, frame_rate: f64, frames: usize) -> Option<(usize, usize)> {
        if self.kind != EnrichmentKind::Ramp {
            return None;
        }
        let start = ((self.onset * frame_rate).ceil() as usize).min(frames);
        let end = (((self.onset + self.duration) * frame_rate).ceil() as usize).min(frames);
        (start < end).then_some((start, end))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneConfig {
    pub width: usize,
    pub height: usize,
    pub frames: usize,
    pub frame_rate: f64,
    pub texture_seed: u64,
    pub motion: MotionModel,
    pub enrichment: EnrichmentModel,
    pub noise_sigma: f64,
    pub blur_radius: usize,
    /// Std of the base texture intensity.
    pub texture_contrast: f64,
    /// Vessel curves per 10^4 px of reference raster.
    pub vessel_density: f64,
    /// Anchors whose ground truth is recorded.
    pub grid_spacing: f64,
    pub box_side: f64,
}

/// Smallest frame side a scene may have.
pub const MIN_SCENE_SIDE: usize = 128;
/// Shortest scene, one filtering window.
pub const MIN_SCENE_FRAMES: usize = 2;

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            width: 512,
            height: 384,
            frames: 375,
            frame_rate: 25.0,
            texture_seed: 1,
            motion: MotionModel::default(),
            enrichment: EnrichmentModel::default(),
            noise_sigma: 0.01,
            blur_radius: 0,
            texture_contrast: 0.07,
            vessel_density: 0.5,
            grid_spacing: 32.0,
            box_side: 100.0,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.width < MIN_SCENE_SIDE || self.height < MIN_SCENE_SIDE {
            return Err(Error::Config(format!(
                "scene {}x{} smaller than {MIN_SCENE_SIDE}x{MIN_SCENE_SIDE}",
                self.width, self.height
            )));
        }
        if self.frames < MIN_SCENE_FRAMES {
            return Err(Error::Config(format!("scene needs at least {MIN_SCENE_FRAMES} frames")));
        }
        if !(self.frame_rate.is_finite() && self.frame_rate > 0.0) {
            return Err(Error::Config(format!("frame rate {} must be > 0", self.frame_rate)));
        }
        if !(self.texture_contrast.is_finite() && self.texture_contrast > 0.0) {
            return Err(Error::Config(format!("texture contrast {} must be > 0", self.texture_contrast)));
        }
        if !(self.vessel_density.is_finite() && self.vessel_density >= 0.0) {
            return Err(Error::Config(format!("vessel density {} must be >= 0", self.vessel_density)));
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return Err(Error::Config(format!("noise sigma {} must be >= 0", self.noise_sigma)));
        }
        self.motion.validate()?;
        self.enrichment.validate()?;
        self.grid().validate()
    }

    pub fn grid(&self) -> GridConfig {
        GridConfig {
            spacing: self.grid_spacing,
            box_side: self.box_side,
            frame_width: self.width,
            frame_height: self.height,
        }
    }
}

/// Per-anchor exact trajectories; index `i` is anchor id `i` of the scene grid.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub anchors: Vec<Point2<f64>>,
    pub trajectories: Vec<Vec<Point2<f64>>>,
}

impl GroundTruth {
    pub fn frames(&self) -> usize {
        self.trajectories.first().map_or(0, Vec::len)
    }
}

/// Seeded low-frequency parameters of the phase and direction fields.
#[derive(Debug, Clone, Copy)]
struct FieldParams {
    phase: [(f64, f64, f64); 3],
    heading: [(f64, f64, f64); 3],
    heading0: f64,
}

impl FieldParams {
    fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut wave = || {
            let wavelength = rng.random_range(WAVELENGTH.0..WAVELENGTH.1);
            let angle = rng.random_range(0.0..TAU);
            let k = TAU / wavelength;
            (k * angle.cos(), k * angle.sin(), rng.random_range(0.0..TAU))
        };
        let phase = [wave(), wave(), wave()];
        let heading = [wave(), wave(), wave()];
        let heading0 = rng.random_range(0.0..TAU);
        Self {
            phase,
            heading,
            heading0,
        }
    }

    /// `[U.x, U.y, V.x, V.y]` at a knot, with `U = A cos(phi) dir`, `V = A sin(phi) dir`.
    fn knot(&self, motion: &MotionModel, i: i64, j: i64) -> [f64; 4] {
        let (x, y) = (i as f64 * KNOT_SPACING, j as f64 * KNOT_SPACING);
        let wave = |w: &[(f64, f64, f64); 3]| w.iter().map(|(kx, ky, b)| (kx * x + ky * y + b).sin()).sum::<f64>() / 3.0;
        let phi = motion.phase_map * wave(&self.phase);
        let theta = self.heading0 + 0.6 * wave(&self.heading);
        let (st, ct) = theta.sin_cos();
        let (sp, cp) = phi.sin_cos();
        let a = motion.amplitude;
        [a * cp * ct, a * cp * st, a * sp * ct, a * sp * st]
    }
}

#[inline]
fn blend_knots(k00: [f64; 4], k10: [f64; 4], k01: [f64; 4], k11: [f64; 4], fx: f64, fy: f64) -> [f64; 4] {
    let mut out = [0.0; 4];
    for c in 0..4 {
        let top = k00[c] + (k10[c] - k00[c]) * fx;
        let bottom = k01[c] + (k11[c] - k01[c]) * fx;
        out[c] = top + (bottom - top) * fy;
    }
    out
}

#[inline]
fn cycle_coefficients(motion: &MotionModel, t: f64, frame_rate: f64) -> (f64, f64) {
    let omega_t = TAU * t / (motion.period * frame_rate);
    let (s, c) = omega_t.sin_cos();
    (s, c - 1.0)
}

/// Closed-form position at frame `t` of the material point that sits at `p0`
/// in frame 0.
///
/// Cardiac-periodic motion displaces by
/// `A * (sin(w t + phi(p0)) - sin(phi(p0))) * dir(p0)` with `w = 2 pi / (period * frame_rate)`,
/// so frame 0 is the identity and every full cycle returns to `p0`. The
/// fields `phi` and `dir` are evaluated on a 16 px knot lattice and the
/// resulting basis vectors are interpolated bilinearly between knots. The
/// warp is invertible while the displacement field stays a contraction,
/// which holds whenever `2 * amplitude * (max|grad phi| + max|grad theta|) < 1`;
/// `render` checks the bound on the actual knots.
pub fn warp(motion: &MotionModel, p0: Point2<f64>, t: usize, frame_rate: f64) -> Point2<f64> {
    match motion.kind {
        MotionKind::Static => p0,
        MotionKind::LinearDrift => Point2::new(p0.x + motion.amplitude * t as f64, p0.y),
        MotionKind::CardiacPeriodic => {
            let params = FieldParams::new(motion.field_seed);
            let field = basis_at(p0, |i, j| params.knot(motion, i, j));
            let (s, c) = cycle_coefficients(motion, t as f64, frame_rate);
            Point2::new(p0.x + s * field[0] + c * field[2], p0.y + s * field[1] + c * field[3])
        }
    }
}

#[inline]
fn basis_at(p: Point2<f64>, knot: impl Fn(i64, i64) -> [f64; 4]) -> [f64; 4] {
    let gx = p.x / KNOT_SPACING;
    let gy = p.y / KNOT_SPACING;
    let i0 = gx.floor();
    let j0 = gy.floor();
    let (i, j) = (i0 as i64, j0 as i64);
    blend_knots(knot(i, j), knot(i + 1, j), knot(i, j + 1), knot(i + 1, j + 1), gx - i0, gy - j0)
}

/// Single-channel raster over reference coordinates `[-margin, w-1+margin]`.
#[derive(Debug, Clone)]
struct Raster {
    width: usize,
    height: usize,
    margin: f64,
    data: Vec<f64>,
}

impl Raster {
    fn sample(&self, p: Point2<f64>) -> f64 {
        let x = (p.x + self.margin).clamp(0.0, (self.width - 1) as f64);
        let y = (p.y + self.margin).clamp(0.0, (self.height - 1) as f64);
        let x0 = x.floor();
        let y0 = y.floor();
        let (fx, fy) = (x - x0, y - y0);
        let (xi, yi) = (x0 as usize, y0 as usize);
        let xi1 = (xi + 1).min(self.width - 1);
        let yi1 = (yi + 1).min(self.height - 1);
        let at = |x: usize, y: usize| self.data[y * self.width + x];
        let top = at(xi, yi) + (at(xi1, yi) - at(xi, yi)) * fx;
        let bottom = at(xi, yi1) + (at(xi1, yi1) - at(xi, yi1)) * fx;
        top + (bottom - top) * fy
    }
}

fn gaussian_blur(data: &mut [f64], width: usize, height: usize, sigma: f64) {
    let radius = (3.0 * sigma).ceil() as isize;
    let kernel: Vec<f64> = (-radius..=radius)
        .map(|k| (-(k * k) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let norm: f64 = kernel.iter().sum();
    let kernel: Vec<f64> = kernel.iter().map(|k| k / norm).collect();
    let mut tmp = vec![0.0; data.len()];
    for y in 0..height {
        for x in 0..width {
            let mut acc = 0.0;
            for (k, w) in kernel.iter().enumerate() {
                let xx = (x as isize + k as isize - radius).clamp(0, width as isize - 1) as usize;
                acc += w * data[y * width + xx];
            }
            tmp[y * width + x] = acc;
        }
    }
    for y in 0..height {
        for x in 0..width {
            let mut acc = 0.0;
            for (k, w) in kernel.iter().enumerate() {
                let yy = (y as isize + k as isize - radius).clamp(0, height as isize - 1) as usize;
                acc += w * tmp[yy * width + x];
            }
            data[y * width + x] = acc;
        }
    }
}

fn standardize(data: &mut [f64]) {
    let n = data.len() as f64;
    let mean = data.iter().sum::<f64>() / n;
    let var = data.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let sd = var.sqrt().max(1e-12);
    for v in data.iter_mut() {
        *v = (*v - mean) / sd;
    }
}

fn texture_raster(width: usize, height: usize, margin: f64, seed: u64, contrast: f64) -> Raster {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let n = width * height;
    let mut fine: Vec<f64> = (0..n).map(|_| normal.sample(&mut rng)).collect();
    let mut coarse: Vec<f64> = (0..n).map(|_| normal.sample(&mut rng)).collect();
    gaussian_blur(&mut fine, width, height, 1.5);
    gaussian_blur(&mut coarse, width, height, 5.0);
    standardize(&mut fine);
    standardize(&mut coarse);
    let data = fine
        .iter()
        .zip(&coarse)
        .map(|(f, c)| (0.35 + contrast * std::f64::consts::FRAC_1_SQRT_2 * (f + c)).clamp(0.02, 0.98))
        .collect();
    Raster {
        width,
        height,
        margin,
        data,
    }
}

/// Curvilinear structures with a Gaussian cross-section, peak value 1.
fn vessel_raster(width: usize, height: usize, margin: f64, seed: u64, density: f64) -> Raster {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = vec![0.0f64; width * height];
    let curves = ((width * height) as f64 * density / 10_000.0).round() as usize;
    let turn = Normal::new(0.0, 0.04).expect("valid sigma");
    for _ in 0..curves {
        let mut x = rng.random_range(0.0..width as f64);
        let mut y = rng.random_range(0.0..height as f64);
        let mut heading = rng.random_range(0.0..TAU);
        let mut bend = 0.0f64;
        let length = rng.random_range(120.0..360.0);
        let sigma: f64 = rng.random_range(1.5..3.0);
        let reach = (3.0 * sigma).ceil() as isize;
        let steps = (length / 0.5) as usize;
        for _ in 0..steps {
            let (cx, cy) = (x.round() as isize, y.round() as isize);
            for dy in -reach..=reach {
                for dx in -reach..=reach {
                    let (px, py) = (cx + dx, cy + dy);
                    if px < 0 || py < 0 || px >= width as isize || py >= height as isize {
                        continue;
                    }
                    let d2 = (px as f64 - x).powi(2) + (py as f64 - y).powi(2);
                    let v = (-d2 / (2.0 * sigma * sigma)).exp();
                    let cell = &mut data[py as usize * width + px as usize];
                    if v > *cell {
                        *cell = v;
                    }
                }
            }
            bend = 0.95 * bend + turn.sample(&mut rng);
            heading += bend * 0.5;
            x += 0.5 * heading.cos();
            y += 0.5 * heading.sin();
        }
    }
    Raster {
        width,
        height,
        margin,
        data,
    }
}

/// Precomputed rasters and warp knots of one scene configuration.
pub struct Scene {
    cfg: SceneConfig,
    texture: Raster,
    vessels: Raster,
    knots: Option<KnotTable>,
}

/// Per-cell bilinear coefficients `[d00, ex, ey, exy]` per axis of one frame's displacement.
struct FrameField {
    i0: i64,
    j0: i64,
    cols: usize,
    rows: usize,
    cells: Vec<[[f64; 4]; 2]>,
}

impl FrameField {
    fn new(table: &KnotTable, s: f64, c: f64) -> Self {
        let d: Vec<[f64; 2]> = table
            .values
            .iter()
            .map(|k| [s * k[0] + c * k[2], s * k[1] + c * k[3]])
            .collect();
        let (cols, rows) = (table.cols - 1, table.rows - 1);
        let mut cells = Vec::with_capacity(cols * rows);
        for j in 0..rows {
            for i in 0..cols {
                let at = |ii: usize, jj: usize| d[jj * table.cols + ii];
                let (d00, d10, d01, d11) = (at(i, j), at(i + 1, j), at(i, j + 1), at(i + 1, j + 1));
                let axis = |k: usize| {
                    [
                        d00[k],
                        d10[k] - d00[k],
                        d01[k] - d00[k],
                        d11[k] - d10[k] - d01[k] + d00[k],
                    ]
                };
                cells.push([axis(0), axis(1)]);
            }
        }
        Self {
            i0: table.i0,
            j0: table.j0,
            cols,
            rows,
            cells,
        }
    }

    /// Displacement and its Jacobian columns at `p`.
    #[inline]
    fn eval(&self, p: Point2<f64>) -> ([f64; 2], [f64; 2], [f64; 2]) {
        let gx = p.x / KNOT_SPACING;
        let gy = p.y / KNOT_SPACING;
        let (fi, fj) = (gx.floor(), gy.floor());
        let ci = (fi as i64 - self.i0).clamp(0, self.cols as i64 - 1) as usize;
        let cj = (fj as i64 - self.j0).clamp(0, self.rows as i64 - 1) as usize;
        let (fx, fy) = (gx - fi, gy - fj);
        let cell = &self.cells[cj * self.cols + ci];
        let mut r = [0.0; 2];
        let mut jx = [0.0; 2];
        let mut jy = [0.0; 2];
        for k in 0..2 {
            let [d, ex, ey, exy] = cell[k];
            r[k] = d + ex * fx + ey * fy + exy * fx * fy;
            jx[k] = (ex + exy * fy) / KNOT_SPACING;
            jy[k] = (ey + exy * fx) / KNOT_SPACING;
        }
        (r, jx, jy)
    }

    /// Solves `p + D(p) = q` by Newton steps on the bilinear field.
    fn invert(&self, q: Point2<f64>, start: Point2<f64>) -> Point2<f64> {
        self.invert_with_step(q, start).0
    }

    /// Also returns `dp/dq_x`, the predicted change of the solution for a unit step of `q.x`.
    fn invert_with_step(&self, q: Point2<f64>, start: Point2<f64>) -> (Point2<f64>, Point2<f64>) {
        let mut p = start;
        let mut along = Point2::new(1.0, 0.0);
        for _ in 0..30 {
            let (r, jx, jy) = self.eval(p);
            let fxv = p.x + r[0] - q.x;
            let fyv = p.y + r[1] - q.y;
            let (a, b, c, d) = (1.0 + jx[0], jy[0], jx[1], 1.0 + jy[1]);
            let det = a * d - b * c;
            let dx = (d * fxv - b * fyv) / det;
            let dy = (a * fyv - c * fxv) / det;
            p = Point2::new(p.x - dx, p.y - dy);
            along = Point2::new(d / det, -c / det);
            // quadratic convergence: the remaining error is about the square of this step
            if dx.abs() + dy.abs() < 1e-6 {
                break;
            }
        }
        (p, along)
    }
}

struct KnotTable {
    i0: i64,
    j0: i64,
    cols: usize,
    rows: usize,
    values: Vec<[f64; 4]>,
}

impl KnotTable {
    fn get(&self, i: i64, j: i64) -> [f64; 4] {
        let ci = (i - self.i0).clamp(0, self.cols as i64 - 1) as usize;
        let cj = (j - self.j0).clamp(0, self.rows as i64 - 1) as usize;
        self.values[cj * self.cols + ci]
    }

    /// Upper bound on the Lipschitz constant of `s U + c V` for `|s| <= 1`, `|c| <= 2`.
    fn lipschitz_bound(&self) -> f64 {
        let mut worst = 0.0f64;
        let diff = |a: [f64; 4], b: [f64; 4]| {
            let du = ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt();
            let dv = ((a[2] - b[2]).powi(2) + (a[3] - b[3]).powi(2)).sqrt();
            du + 2.0 * dv
        };
        for j in 0..self.rows {
            for i in 0..self.cols {
                let here = self.values[j * self.cols + i];
                if i + 1 < self.cols {
                    worst = worst.max(diff(here, self.values[j * self.cols + i + 1]));
                }
                if j + 1 < self.rows {
                    worst = worst.max(diff(here, self.values[(j + 1) * self.cols + i]));
                }
            }
        }
        // both axes can contribute at once
        std::f64::consts::SQRT_2 * worst / KNOT_SPACING
    }
}

impl Scene {
    pub fn new(cfg: &SceneConfig) -> Result<Self> {
        cfg.validate()?;
        let motion = &cfg.motion;
        let max_disp = match motion.kind {
            MotionKind::Static => 0.0,
            MotionKind::LinearDrift => motion.amplitude * cfg.frames as f64,
            MotionKind::CardiacPeriodic => 2.0 * motion.amplitude,
        };
        let margin = (max_disp + 4.0).ceil();
        let rw = cfg.width + 2 * margin as usize;
        let rh = cfg.height + 2 * margin as usize;
        let knots = if motion.kind == MotionKind::CardiacPeriodic {
            let params = FieldParams::new(motion.field_seed);
            let i0 = (-margin / KNOT_SPACING).floor() as i64 - 1;
            let j0 = i0;
            let i1 = ((cfg.width as f64 + margin) / KNOT_SPACING).ceil() as i64 + 1;
            let j1 = ((cfg.height as f64 + margin) / KNOT_SPACING).ceil() as i64 + 1;
            let cols = (i1 - i0 + 1) as usize;
            let rows = (j1 - j0 + 1) as usize;
            let mut values = Vec::with_capacity(cols * rows);
            for j in j0..=j1 {
                for i in i0..=i1 {
                    values.push(params.knot(motion, i, j));
                }
            }
            let table = KnotTable {
                i0,
                j0,
                cols,
                rows,
                values,
            };
            let lip = table.lipschitz_bound();
            if lip >= MAX_LIPSCHITZ {
                return Err(Error::Config(format!(
                    "warp not invertible: displacement Lipschitz bound {lip:.3} >= {MAX_LIPSCHITZ} \
                     (reduce amplitude or phase_map)"
                )));
            }
            Some(table)
        } else {
            None
        };
        let texture = texture_raster(rw, rh, margin, cfg.texture_seed, cfg.texture_contrast);
        let vessels = vessel_raster(rw, rh, margin, cfg.enrichment.vessel_mask_seed, cfg.vessel_density);
        Ok(Self {
            cfg: cfg.clone(),
            texture,
            vessels,
            knots,
        })
    }

    pub fn config(&self) -> &SceneConfig {
        &self.cfg
    }

    /// Texture intensity of the reference point `p0`.
    pub fn texture_at(&self, p0: Point2<f64>) -> f64 {
        self.texture.sample(p0)
    }

    /// Vessel mask value in `[0, 1]` at the reference point `p0`.
    pub fn vessel_at(&self, p0: Point2<f64>) -> f64 {
        self.vessels.sample(p0)
    }

    /// Same as [`warp`], using the cached knot table.
    pub fn forward(&self, p0: Point2<f64>, t: usize) -> Point2<f64> {
        match (&self.knots, self.cfg.motion.kind) {
            (Some(table), MotionKind::CardiacPeriodic) => {
                let (s, c) = cycle_coefficients(&self.cfg.motion, t as f64, self.cfg.frame_rate);
                self.displace(table, p0, s, c)
            }
            _ => warp(&self.cfg.motion, p0, t, self.cfg.frame_rate),
        }
    }

    #[inline]
    fn displace(&self, table: &KnotTable, p0: Point2<f64>, s: f64, c: f64) -> Point2<f64> {
        let f = basis_at(p0, |i, j| table.get(i, j));
        Point2::new(p0.x + s * f[0] + c * f[2], p0.y + s * f[1] + c * f[3])
    }

    /// Reference point that the warp carries onto `q` at frame `t`.
    pub fn inverse(&self, q: Point2<f64>, t: usize) -> Point2<f64> {
        self.inverse_from(q, t, q)
    }

    fn inverse_from(&self, q: Point2<f64>, t: usize, start: Point2<f64>) -> Point2<f64> {
        let motion = &self.cfg.motion;
        match motion.kind {
            MotionKind::Static => q,
            MotionKind::LinearDrift => Point2::new(q.x - motion.amplitude * t as f64, q.y),
            MotionKind::CardiacPeriodic => self
                .frame_field(t)
                .expect("cardiac scenes carry knots")
                .invert(q, start),
        }
    }

    /// Displacement knots of frame `t`, `s U + c V` per knot.
    fn frame_field(&self, t: usize) -> Option<FrameField> {
        let table = self.knots.as_ref()?;
        let (s, c) = cycle_coefficients(&self.cfg.motion, t as f64, self.cfg.frame_rate);
        Some(FrameField::new(table, s, c))
    }

    fn render_frame(&self, t: usize) -> Vec<f64> {
        let cfg = &self.cfg;
        let gain = cfg.enrichment.gain(t as f64 / cfg.frame_rate) * cfg.enrichment.vessel_contrast;
        let field = self.frame_field(t);
        let mut out = Vec::with_capacity(cfg.width * cfg.height);
        for y in 0..cfg.height {
            let mut guess = Point2::new(0.0, y as f64);
            for x in 0..cfg.width {
                let q = Point2::new(x as f64, y as f64);
                let p0 = match &field {
                    Some(f) => {
                        let (p, along) = f.invert_with_step(q, if x == 0 { q } else { guess });
                        guess = p + along;
                        p
                    }
                    None => self.inverse(q, t),
                };
                let mut v = self.texture.sample(p0);
                if gain != 0.0 {
                    v += gain * self.vessels.sample(p0);
                }
                out.push(v);
            }
        }
        if cfg.blur_radius > 0 {
            box_blur(&mut out, cfg.width, cfg.height, cfg.blur_radius);
        }
        if cfg.noise_sigma > 0.0 {
            let seed = cfg.texture_seed ^ (t as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let normal = Normal::new(0.0, cfg.noise_sigma).expect("validated sigma");
            for v in out.iter_mut() {
                *v += normal.sample(&mut rng);
            }
        }
        for v in out.iter_mut() {
            *v = v.clamp(0.0, 1.0);
        }
        out
    }

    pub fn ground_truth(&self) -> Result<GroundTruth> {
        let grid = make_grid::<f64>(&self.cfg.grid())?;
        let anchors: Vec<Point2<f64>> = grid.iter().map(|(a, _)| a.position).collect();
        let trajectories = anchors
            .iter()
            .map(|&p0| (0..self.cfg.frames).map(|t| self.forward(p0, t)).collect())
            .collect();
        Ok(GroundTruth {
            anchors,
            trajectories,
        })
    }

    /// Exact trajectories over frames `[start, frames)` of the material points
    /// seen at `points` on frame `start`.
    pub fn trajectories_from(&self, points: &[Point2<f64>], start: usize) -> Vec<Vec<Point2<f64>>> {
        points
            .iter()
            .map(|&q| {
                let p0 = self.inverse(q, start);
                (start..self.cfg.frames).map(|t| self.forward(p0, t)).collect()
            })
            .collect()
    }

    pub fn render<T: Scalar>(&self) -> Result<VideoSequence<T>> {
        let cfg = &self.cfg;
        let frames = (0..cfg.frames)
            .into_par_iter()
            .map(|t| {
                let data = self.render_frame(t).into_iter().map(T::lit).collect();
                Frame::new(cfg.width, cfg.height, data, t)
            })
            .collect::<Result<Vec<_>>>()?;
        VideoSequence::new(frames, cfg.frame_rate)
    }
}

fn box_blur(data: &mut [f64], width: usize, height: usize, radius: usize) {
    let r = radius as isize;
    let mut tmp = vec![0.0; data.len()];
    for y in 0..height {
        for x in 0..width {
            let mut acc = 0.0;
            for k in -r..=r {
                let xx = (x as isize + k).clamp(0, width as isize - 1) as usize;
                acc += data[y * width + xx];
            }
            tmp[y * width + x] = acc / (2 * radius + 1) as f64;
        }
    }
    for y in 0..height {
        for x in 0..width {
            let mut acc = 0.0;
            for k in -r..=r {
                let yy = (y as isize + k).clamp(0, height as isize - 1) as usize;
                acc += tmp[yy * width + x];
            }
            data[y * width + x] = acc / (2 * radius + 1) as f64;
        }
    }
}

/// Renders the configured scene and its ground truth.
pub fn render<T: Scalar>(cfg: &SceneConfig) -> Result<(VideoSequence<T>, GroundTruth)> {
    let scene = Scene::new(cfg)?;
    Ok((scene.render()?, scene.ground_truth()?))
}
