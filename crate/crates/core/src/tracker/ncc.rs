//! Zero-normalised cross-correlation block matcher.

use super::{extract_patch, PyramidRef, TrackerPort};
use crate::error::{Error, Result};
use crate::imaging::{Frame, Point2};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NccTrackerConfig {
    pub patch_radius: usize,
    pub search_radius: usize,
    pub subpixel_refine: bool,
}

impl Default for NccTrackerConfig {
    fn default() -> Self {
        Self {
            patch_radius: 7,
            search_radius: 12,
            subpixel_refine: true,
        }
    }
}

impl NccTrackerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.patch_radius < 2 {
            return Err(Error::Config(format!(
                "ncc patch_radius {} must be at least 2",
                self.patch_radius
            )));
        }
        if self.search_radius < 1 {
            return Err(Error::Config("ncc search_radius must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct NccTracker {
    cfg: NccTrackerConfig,
}

impl NccTracker {
    pub fn new(cfg: NccTrackerConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self { cfg })
    }

    pub fn config(&self) -> &NccTrackerConfig {
        &self.cfg
    }
}

impl<T: Scalar> TrackerPort<T> for NccTracker {
    fn step(&self, prev: PyramidRef<'_, T>, next: PyramidRef<'_, T>, p: Point2<T>) -> (Point2<T>, T) {
        step_ncc(&self.cfg, prev.base(), next.base(), p)
    }
}

/// Matches the patch around `p` in `prev` against every integer displacement
/// within the search radius in `next`. Confidence is `(ncc + 1) / 2`.
pub fn step_ncc<T: Scalar>(
    cfg: &NccTrackerConfig,
    prev: &Frame<T>,
    next: &Frame<T>,
    p: Point2<T>,
) -> (Point2<T>, T) {
    let r = cfg.patch_radius;
    let rr = T::of_usize(r);
    let (w, h) = (prev.width(), prev.height());
    if w < 2 * r + 2 || h < 2 * r + 2 || !p.is_finite() {
        let (q, _) = prev.clamp_point(p);
        return (q, T::zero());
    }

    let mut template = Vec::new();
    if extract_patch(prev, p, r, &mut template).is_none() {
        // keep one pixel of slack so the clamped point always has a full patch
        let hi_x = T::of_usize(w - 2 - r);
        let hi_y = T::of_usize(h - 2 - r);
        let x = if p.x.is_nan() { rr } else { p.x.max(rr).min(hi_x) };
        let y = if p.y.is_nan() { rr } else { p.y.max(rr).min(hi_y) };
        return (Point2::new(x, y), T::zero());
    }

    let n = T::of_usize(template.len());
    let mean = template.iter().copied().sum::<T>() / n;
    for v in template.iter_mut() {
        *v -= mean;
    }
    let tnorm2: T = template.iter().map(|v| *v * *v).sum();
    if tnorm2 <= T::lit(1e-10) * n {
        return (p, T::zero());
    }
    let tnorm = tnorm2.sqrt();

    // displacement range whose candidate patch stays inside `next`
    let bx = p.x.floor();
    let by = p.y.floor();
    let fx = p.x - bx;
    let fy = p.y - by;
    let cx = bx.to_isize().unwrap_or(0);
    let cy = by.to_isize().unwrap_or(0);
    let ri = r as isize;
    let sr = cfg.search_radius as isize;
    let slack_x = if fx > T::zero() { 1 } else { 0 };
    let slack_y = if fy > T::zero() { 1 } else { 0 };
    let dx_lo = (-sr).max(ri - cx);
    let dx_hi = sr.min(next.width() as isize - 1 - slack_x - ri - cx);
    let dy_lo = (-sr).max(ri - cy);
    let dy_hi = sr.min(next.height() as isize - 1 - slack_y - ri - cy);
    if dx_lo > dx_hi || dy_lo > dy_hi {
        return (p, T::zero());
    }

    // resample the search region once with p's fractional offset
    let reg_w = (dx_hi - dx_lo) as usize + 2 * r + 1;
    let reg_h = (dy_hi - dy_lo) as usize + 2 * r + 1;
    let w00 = (T::one() - fx) * (T::one() - fy);
    let w10 = fx * (T::one() - fy);
    let w01 = (T::one() - fx) * fy;
    let w11 = fx * fy;
    let data = next.data();
    let stride = next.width();
    let ox = (cx + dx_lo - ri) as usize;
    let oy = (cy + dy_lo - ri) as usize;
    let mut region = Vec::with_capacity(reg_w * reg_h);
    for j in 0..reg_h {
        let row0 = (oy + j) * stride;
        let row1 = if slack_y == 1 { row0 + stride } else { row0 };
        for i in 0..reg_w {
            let x = ox + i;
            let x1 = x + slack_x as usize;
            region.push(
                data[row0 + x] * w00 + data[row0 + x1] * w10 + data[row1 + x] * w01 + data[row1 + x1] * w11,
            );
        }
    }

    // integral images for candidate mean and energy
    let iw = reg_w + 1;
    let mut sum = vec![T::zero(); iw * (reg_h + 1)];
    let mut sq = vec![T::zero(); iw * (reg_h + 1)];
    for j in 0..reg_h {
        let mut rs = T::zero();
        let mut rq = T::zero();
        for i in 0..reg_w {
            let v = region[j * reg_w + i];
            rs += v;
            rq += v * v;
            sum[(j + 1) * iw + i + 1] = sum[j * iw + i + 1] + rs;
            sq[(j + 1) * iw + i + 1] = sq[j * iw + i + 1] + rq;
        }
    }
    let side = 2 * r + 1;
    let box_sum = |tab: &[T], x: usize, y: usize| {
        tab[(y + side) * iw + x + side] - tab[y * iw + x + side] - tab[(y + side) * iw + x] + tab[y * iw + x]
    };

    let cols = (dx_hi - dx_lo + 1) as usize;
    let rows = (dy_hi - dy_lo + 1) as usize;
    let mut scores = vec![T::lit(-1.0); cols * rows];
    let mut best = (0usize, 0usize);
    let mut best_score = T::lit(-2.0);
    let var_floor = T::lit(1e-10) * n;
    for sy in 0..rows {
        for sx in 0..cols {
            let s = box_sum(&sum, sx, sy);
            let e = box_sum(&sq, sx, sy);
            let var = e - s * s / n;
            let score = if var <= var_floor {
                T::zero()
            } else {
                let mut cross = T::zero();
                for j in 0..side {
                    let rrow = &region[(sy + j) * reg_w + sx..(sy + j) * reg_w + sx + side];
                    cross += dot(rrow, &template[j * side..(j + 1) * side]);
                }
                cross / (tnorm * var.sqrt())
            };
            scores[sy * cols + sx] = score;
            // ties resolved toward the smaller displacement
            let d = (sx as isize + dx_lo).abs() + (sy as isize + dy_lo).abs();
            let bd = (best.0 as isize + dx_lo).abs() + (best.1 as isize + dy_lo).abs();
            if score > best_score || (score == best_score && d < bd) {
                best_score = score;
                best = (sx, sy);
            }
        }
    }

    let mut dx = T::of_usize(best.0) + T::lit(dx_lo as f64);
    let mut dy = T::of_usize(best.1) + T::lit(dy_lo as f64);
    // an exact match means the displacement is integral
    let exact = T::one() - best_score <= T::lit(64.0) * T::epsilon();
    if cfg.subpixel_refine && !exact {
        let at = |x: usize, y: usize| scores[y * cols + x];
        if best.0 > 0 && best.0 + 1 < cols {
            dx += parabolic_offset(at(best.0 - 1, best.1), best_score, at(best.0 + 1, best.1));
        }
        if best.1 > 0 && best.1 + 1 < rows {
            dy += parabolic_offset(at(best.0, best.1 - 1), best_score, at(best.0, best.1 + 1));
        }
    }
    let conf = ((best_score + T::one()) / T::lit(2.0)).max(T::zero()).min(T::one());
    (Point2::new(p.x + dx, p.y + dy), conf)
}

/// Dot product over independent lanes so the loop vectorises.
fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    const LANES: usize = 8;
    let mut acc = [T::zero(); LANES];
    let split = a.len() - a.len() % LANES;
    for (ca, cb) in a[..split].chunks_exact(LANES).zip(b[..split].chunks_exact(LANES)) {
        for k in 0..LANES {
            acc[k] += ca[k] * cb[k];
        }
    }
    let mut tail = T::zero();
    for (x, y) in a[split..].iter().zip(&b[split..]) {
        tail += *x * *y;
    }
    acc.iter().copied().sum::<T>() + tail
}

/// Vertex of the parabola through three equally spaced samples, clamped to half a pixel.
fn parabolic_offset<T: Scalar>(left: T, center: T, right: T) -> T {
    let denom = left - T::lit(2.0) * center + right;
    if denom >= T::zero() {
        return T::zero();
    }
    let half = T::lit(0.5);
    ((left - right) / (T::lit(2.0) * denom)).max(-half).min(half)
}
