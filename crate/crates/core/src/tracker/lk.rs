//! Pyramidal Lucas-Kanade point tracker.

use super::{extract_patch, PyramidRef, TrackerPort};
use crate::error::{Error, Result};
use crate::imaging::Point2;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LkTrackerConfig {
    pub window_radius: usize,
    pub pyramid_levels: usize,
    pub max_iterations: usize,
    /// Convergence threshold on the update norm, pixels at the current level.
    pub epsilon: f64,
    /// Per-pixel minimum eigenvalue mapped to confidence 0.5.
    pub eigen_half: f64,
    /// RMS photometric residual scale of the confidence fall-off.
    pub residual_scale: f64,
}

impl Default for LkTrackerConfig {
    fn default() -> Self {
        Self {
            window_radius: 10,
            pyramid_levels: 3,
            max_iterations: 20,
            epsilon: 0.01,
            eigen_half: 1e-4,
            residual_scale: 0.05,
        }
    }
}

impl LkTrackerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window_radius == 0 || self.pyramid_levels == 0 || self.max_iterations == 0 {
            return Err(Error::Config(
                "lk window_radius, pyramid_levels and max_iterations must be positive".into(),
            ));
        }
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(Error::Config(format!("lk epsilon {} must lie in (0, 1)", self.epsilon)));
        }
        if !(self.eigen_half > 0.0 && self.residual_scale > 0.0) {
            return Err(Error::Config("lk confidence scales must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LkTracker {
    cfg: LkTrackerConfig,
}

impl LkTracker {
    pub fn new(cfg: LkTrackerConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self { cfg })
    }

    pub fn config(&self) -> &LkTrackerConfig {
        &self.cfg
    }
}

impl<T: Scalar> TrackerPort<T> for LkTracker {
    fn pyramid_levels(&self) -> usize {
        self.cfg.pyramid_levels
    }

    fn step(&self, prev: PyramidRef<'_, T>, next: PyramidRef<'_, T>, p: Point2<T>) -> (Point2<T>, T) {
        step_lk(&self.cfg, prev, next, p)
    }
}

/// Template values and central-difference gradients over a `(2r+1)^2` window.
pub(crate) struct Template<T> {
    pub values: Vec<T>,
    pub gx: Vec<T>,
    pub gy: Vec<T>,
}

pub(crate) fn template_gradients<T: Scalar>(
    frame: &crate::imaging::Frame<T>,
    center: Point2<T>,
    radius: usize,
    scratch: &mut Vec<T>,
) -> Option<Template<T>> {
    extract_patch(frame, center, radius + 1, scratch)?;
    let big = 2 * radius + 3;
    let side = 2 * radius + 1;
    let half = T::lit(0.5);
    let mut values = Vec::with_capacity(side * side);
    let mut gx = Vec::with_capacity(side * side);
    let mut gy = Vec::with_capacity(side * side);
    for j in 1..=side {
        for i in 1..=side {
            let at = |x: usize, y: usize| scratch[y * big + x];
            values.push(at(i, j));
            gx.push((at(i + 1, j) - at(i - 1, j)) * half);
            gy.push((at(i, j + 1) - at(i, j - 1)) * half);
        }
    }
    Some(Template { values, gx, gy })
}

/// Coarse-to-fine iterative least-squares flow for one point.
///
/// Confidence combines the structure tensor's per-pixel minimum eigenvalue
/// `l` as `l / (l + eigen_half)` with a Gaussian fall-off of the final RMS
/// residual.
pub fn step_lk<T: Scalar>(
    cfg: &LkTrackerConfig,
    prev: PyramidRef<'_, T>,
    next: PyramidRef<'_, T>,
    p: Point2<T>,
) -> (Point2<T>, T) {
    let r = cfg.window_radius;
    let base = prev.base();
    let margin = T::of_usize(r + 2);
    let (w, h) = (base.width(), base.height());
    if !p.is_finite() || w < 2 * r + 6 || h < 2 * r + 6 {
        let (q, _) = base.clamp_point(p);
        return (q, T::zero());
    }
    let hi_x = T::of_usize(w - 1) - margin;
    let hi_y = T::of_usize(h - 1) - margin;
    if p.x < margin || p.y < margin || p.x > hi_x || p.y > hi_y {
        let q = Point2::new(p.x.max(margin).min(hi_x), p.y.max(margin).min(hi_y));
        return (q, T::zero());
    }

    let levels = cfg.pyramid_levels.min(prev.depth()).min(next.depth()).max(1);
    let eps = T::lit(cfg.epsilon);
    let two = T::lit(2.0);
    let mut scratch = Vec::new();
    let mut patch = Vec::new();
    let mut guess = Point2::new(T::zero(), T::zero());
    let mut base_eig = T::zero();
    let mut base_template: Option<Template<T>> = None;

    for level in (0..levels).rev() {
        let scale = T::one() / T::lit((1u64 << level) as f64);
        let pl = p * scale;
        let pf = prev.level(level);
        let nf = next.level(level);
        let Some(tpl) = template_gradients(pf, pl, r, &mut scratch) else {
            if level > 0 {
                guess = guess * two;
            }
            continue;
        };
        let (mut gxx, mut gxy, mut gyy) = (T::zero(), T::zero(), T::zero());
        for k in 0..tpl.values.len() {
            gxx += tpl.gx[k] * tpl.gx[k];
            gxy += tpl.gx[k] * tpl.gy[k];
            gyy += tpl.gy[k] * tpl.gy[k];
        }
        let det = gxx * gyy - gxy * gxy;
        let tr_half = (gxx + gyy) / two;
        let disc = (((gxx - gyy) / two).powi(2) + gxy * gxy).sqrt();
        let min_eig = tr_half - disc;
        let n = T::of_usize(tpl.values.len());
        if !(min_eig > T::lit(1e-9) * n) || det <= T::zero() {
            if level == 0 {
                return (p, T::zero());
            }
            guess = guess * two;
            continue;
        }

        let mut flow = Point2::new(T::zero(), T::zero());
        for _ in 0..cfg.max_iterations {
            let q = pl + guess + flow;
            if extract_patch(nf, q, r, &mut patch).is_none() {
                break;
            }
            let (mut bx, mut by) = (T::zero(), T::zero());
            for k in 0..patch.len() {
                let e = tpl.values[k] - patch[k];
                bx += e * tpl.gx[k];
                by += e * tpl.gy[k];
            }
            let dx = (gyy * bx - gxy * by) / det;
            let dy = (gxx * by - gxy * bx) / det;
            flow = flow + Point2::new(dx, dy);
            if dx.hypot(dy) < eps {
                break;
            }
        }
        guess = guess + flow;
        if level > 0 {
            guess = guess * two;
        } else {
            base_eig = min_eig / n;
            base_template = Some(tpl);
        }
    }

    let Some(tpl) = base_template else {
        return (p, T::zero());
    };
    let q = p + guess;
    if !q.is_finite() || extract_patch(base, q, r, &mut patch).is_none() {
        let (qc, _) = base.clamp_point(q);
        return (if qc.is_finite() { qc } else { p }, T::zero());
    }
    let sse: T = tpl
        .values
        .iter()
        .zip(&patch)
        .map(|(a, b)| (*a - *b) * (*a - *b))
        .sum();
    let rms2 = sse / T::of_usize(patch.len());
    let s = T::lit(cfg.residual_scale);
    let eig_term = base_eig / (base_eig + T::lit(cfg.eigen_half));
    let res_term = (-(rms2 / (two * s * s))).exp();
    (q, (eig_term * res_term).max(T::zero()).min(T::one()))
}
