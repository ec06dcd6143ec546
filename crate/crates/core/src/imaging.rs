//! Frames, sequences, subpixel sampling and image pyramids.

use std::ops::{Add, Mul, Sub};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Subpixel image location; `x` is the column, `y` the row.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Point2<T> {
    pub x: T,
    pub y: T,
}

impl<T: Scalar> Point2<T> {
    #[inline]
    pub fn new(x: T, y: T) -> Self {
        Self { x, y }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    #[inline]
    pub fn norm(&self) -> T {
        self.x.hypot(self.y)
    }

    #[inline]
    pub fn distance(&self, other: &Self) -> T {
        (*self - *other).norm()
    }

    pub fn cast<U: Scalar>(&self) -> Point2<U> {
        Point2::new(U::lit(self.x.as_f64()), U::lit(self.y.as_f64()))
    }
}

impl<T: Scalar> Add for Point2<T> {
    type Output = Self;
    #[inline]
    fn add(self, rhs: Self) -> Self {
        Self::new(self.x + rhs.x, self.y + rhs.y)
    }
}

impl<T: Scalar> Sub for Point2<T> {
    type Output = Self;
    #[inline]
    fn sub(self, rhs: Self) -> Self {
        Self::new(self.x - rhs.x, self.y - rhs.y)
    }
}

impl<T: Scalar> Mul<T> for Point2<T> {
    type Output = Self;
    #[inline]
    fn mul(self, rhs: T) -> Self {
        Self::new(self.x * rhs, self.y * rhs)
    }
}

/// Single-channel intensity raster with values in `[0, 1]`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame<T> {
    width: usize,
    height: usize,
    data: Vec<T>,
    index: usize,
}

impl<T: Scalar> Frame<T> {
    pub fn new(width: usize, height: usize, data: Vec<T>, index: usize) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Domain(format!("empty frame {width}x{height}")));
        }
        if data.len() != width * height {
            return Err(Error::Domain(format!(
                "frame data has {} values, expected {}x{} = {}",
                data.len(),
                width,
                height,
                width * height
            )));
        }
        if let Some(pos) = data
            .iter()
            .position(|v| !(v.is_finite() && *v >= T::zero() && *v <= T::one()))
        {
            return Err(Error::Domain(format!(
                "intensity {} at ({}, {}) outside [0, 1]",
                data[pos],
                pos % width,
                pos / width
            )));
        }
        Ok(Self {
            width,
            height,
            data,
            index,
        })
    }

    pub fn filled(width: usize, height: usize, value: T, index: usize) -> Result<Self> {
        Self::new(width, height, vec![value; width * height], index)
    }

    /// Builds a frame from a per-pixel function `(col, row) -> intensity`.
    pub fn from_fn(
        width: usize,
        height: usize,
        index: usize,
        mut f: impl FnMut(usize, usize) -> T,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self::new(width, height, data, index)
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn index(&self) -> usize {
        self.index
    }

    pub fn with_index(mut self, index: usize) -> Self {
        self.index = index;
        self
    }

    #[inline]
    pub fn data(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> T {
        self.data[y * self.width + x]
    }

    pub fn mean(&self) -> T {
        let sum: f64 = self.data.iter().map(|v| v.as_f64()).sum();
        T::lit(sum / self.data.len() as f64)
    }

    /// Rounds every intensity to the nearest 8-bit level.
    pub fn quantized(&self) -> Self {
        let data = self
            .data
            .iter()
            .map(|v| T::lit(quantize_u8(v.as_f64()) as f64 / 255.0))
            .collect();
        Self {
            data,
            ..self.clone()
        }
    }

    pub fn to_u8(&self) -> Vec<u8> {
        self.data.iter().map(|v| quantize_u8(v.as_f64())).collect()
    }

    pub fn cast<U: Scalar>(&self) -> Frame<U> {
        Frame {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|v| U::lit(v.as_f64())).collect(),
            index: self.index,
        }
    }

    #[inline]
    pub fn in_bounds(&self, p: Point2<T>) -> bool {
        p.x >= T::zero()
            && p.y >= T::zero()
            && p.x <= T::of_usize(self.width - 1)
            && p.y <= T::of_usize(self.height - 1)
    }

    /// Clamps a point into `[0, w-1] x [0, h-1]`; the flag reports whether it moved.
    pub fn clamp_point(&self, p: Point2<T>) -> (Point2<T>, bool) {
        let maxx = T::of_usize(self.width - 1);
        let maxy = T::of_usize(self.height - 1);
        let x = if p.x.is_nan() { T::zero() } else { p.x.max(T::zero()).min(maxx) };
        let y = if p.y.is_nan() { T::zero() } else { p.y.max(T::zero()).min(maxy) };
        (Point2::new(x, y), x != p.x || y != p.y)
    }

    /// Bilinear sample with no bounds checks beyond the slice access; `x`, `y`
    /// must lie in the valid rectangle.
    #[inline]
    pub(crate) fn bilinear_unchecked(&self, x: T, y: T) -> T {
        let x0 = x.floor();
        let y0 = y.floor();
        let fx = x - x0;
        let fy = y - y0;
        let xi = x0.to_usize().unwrap_or(0);
        let yi = y0.to_usize().unwrap_or(0);
        let xi1 = (xi + 1).min(self.width - 1);
        let yi1 = (yi + 1).min(self.height - 1);
        let r0 = yi * self.width;
        let r1 = yi1 * self.width;
        let a = self.data[r0 + xi];
        let b = self.data[r0 + xi1];
        let c = self.data[r1 + xi];
        let d = self.data[r1 + xi1];
        let top = a + (b - a) * fx;
        let bottom = c + (d - c) * fx;
        top + (bottom - top) * fy
    }
}

#[inline]
pub(crate) fn quantize_u8(v: f64) -> u8 {
    (v * 255.0).round().clamp(0.0, 255.0) as u8
}

/// Bilinear interpolation of the four pixels around `p`.
pub fn sample_bilinear<T: Scalar>(frame: &Frame<T>, p: Point2<T>) -> Result<T> {
    if !frame.in_bounds(p) {
        return Err(Error::Domain(format!(
            "sample point ({}, {}) outside [0, {}] x [0, {}]",
            p.x,
            p.y,
            frame.width - 1,
            frame.height - 1
        )));
    }
    Ok(frame.bilinear_unchecked(p.x, p.y))
}

/// Samples after clamping `p` into the frame; the flag is set when clamping occurred.
pub fn sample_clamped<T: Scalar>(frame: &Frame<T>, p: Point2<T>) -> (T, bool) {
    let (q, clamped) = frame.clamp_point(p);
    (frame.bilinear_unchecked(q.x, q.y), clamped)
}

/// Ordered frames sharing one size, indexed consecutively from zero.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoSequence<T> {
    frames: Vec<Frame<T>>,
    frame_rate: f64,
}

pub const DEFAULT_FRAME_RATE: f64 = 25.0;

impl<T: Scalar> VideoSequence<T> {
    pub fn new(frames: Vec<Frame<T>>, frame_rate: f64) -> Result<Self> {
        let first = frames
            .first()
            .ok_or_else(|| Error::Domain("sequence has no frames".into()))?;
        if !(frame_rate.is_finite() && frame_rate > 0.0) {
            return Err(Error::Domain(format!("frame rate {frame_rate} must be positive")));
        }
        let (w, h) = (first.width, first.height);
        for (i, f) in frames.iter().enumerate() {
            if f.width != w || f.height != h {
                return Err(Error::Domain(format!(
                    "frame {i} is {}x{}, expected {w}x{h}",
                    f.width, f.height
                )));
            }
            if f.index != i {
                return Err(Error::Domain(format!("frame at position {i} has index {}", f.index)));
            }
        }
        Ok(Self { frames, frame_rate })
    }

    /// Renumbers frames consecutively before validating.
    pub fn from_frames(frames: Vec<Frame<T>>, frame_rate: f64) -> Result<Self> {
        let frames = frames
            .into_iter()
            .enumerate()
            .map(|(i, f)| f.with_index(i))
            .collect();
        Self::new(frames, frame_rate)
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn frames(&self) -> &[Frame<T>] {
        &self.frames
    }

    pub fn frame(&self, t: usize) -> &Frame<T> {
        &self.frames[t]
    }

    pub fn width(&self) -> usize {
        self.frames[0].width
    }

    pub fn height(&self) -> usize {
        self.frames[0].height
    }

    pub fn frame_rate(&self) -> f64 {
        self.frame_rate
    }

    pub fn duration_seconds(&self) -> f64 {
        self.frames.len() as f64 / self.frame_rate
    }

    /// Copies frames `[start, end)` into a new sequence indexed from zero.
    pub fn segment(&self, start: usize, end: usize) -> Result<Self> {
        if start >= end || end > self.frames.len() {
            return Err(Error::Domain(format!(
                "segment [{start}, {end}) outside sequence of {} frames",
                self.frames.len()
            )));
        }
        Self::from_frames(self.frames[start..end].to_vec(), self.frame_rate)
    }

    pub fn cast<U: Scalar>(&self) -> VideoSequence<U> {
        VideoSequence {
            frames: self.frames.iter().map(Frame::cast).collect(),
            frame_rate: self.frame_rate,
        }
    }
}

/// Axis-aligned square box of side `side` centred on `center`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundingBox<T> {
    pub center: Point2<T>,
    pub side: T,
}

impl<T: Scalar> BoundingBox<T> {
    pub fn new(center: Point2<T>, side: T) -> Result<Self> {
        if !(side > T::zero() && side.is_finite()) || !center.is_finite() {
            return Err(Error::Domain(format!(
                "bounding box side {side} must be positive and centre finite"
            )));
        }
        Ok(Self { center, side })
    }

    pub fn half(&self) -> T {
        self.side / T::lit(2.0)
    }

    pub fn contains(&self, p: Point2<T>) -> bool {
        let h = self.half();
        (p.x - self.center.x).abs() <= h && (p.y - self.center.y).abs() <= h
    }
}

/// Smallest side length a pyramid level may have.
pub const MIN_LEVEL_SIZE: usize = 8;

/// Level 0 is the source frame; each further level halves both dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct ImagePyramid<T> {
    levels: Vec<Frame<T>>,
}

impl<T: Scalar> ImagePyramid<T> {
    pub fn levels(&self) -> &[Frame<T>] {
        &self.levels
    }

    pub fn level(&self, k: usize) -> &Frame<T> {
        &self.levels[k]
    }

    pub fn depth(&self) -> usize {
        self.levels.len()
    }

    pub fn base(&self) -> &Frame<T> {
        &self.levels[0]
    }
}

/// Builds up to `max_levels` levels by 2x2 box averaging, stopping before any
/// dimension would fall below [`MIN_LEVEL_SIZE`].
pub fn build_pyramid<T: Scalar>(frame: &Frame<T>, max_levels: usize) -> Result<ImagePyramid<T>> {
    if frame.width < MIN_LEVEL_SIZE || frame.height < MIN_LEVEL_SIZE {
        return Err(Error::Domain(format!(
            "frame {}x{} smaller than {MIN_LEVEL_SIZE}x{MIN_LEVEL_SIZE}",
            frame.width, frame.height
        )));
    }
    if max_levels == 0 {
        return Err(Error::Domain("pyramid needs at least one level".into()));
    }
    let mut levels = vec![frame.clone()];
    while levels.len() < max_levels {
        let prev = levels.last().expect("non-empty");
        let (w, h) = (prev.width / 2, prev.height / 2);
        if w < MIN_LEVEL_SIZE || h < MIN_LEVEL_SIZE {
            break;
        }
        let quarter = T::lit(0.25);
        let mut data = Vec::with_capacity(w * h);
        for y in 0..h {
            let r0 = 2 * y * prev.width;
            let r1 = r0 + prev.width;
            for x in 0..w {
                let s = prev.data[r0 + 2 * x]
                    + prev.data[r0 + 2 * x + 1]
                    + prev.data[r1 + 2 * x]
                    + prev.data[r1 + 2 * x + 1];
                data.push(s * quarter);
            }
        }
        levels.push(Frame {
            width: w,
            height: h,
            data,
            index: frame.index,
        });
    }
    Ok(ImagePyramid { levels })
}
