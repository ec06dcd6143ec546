//! Frame-to-frame point tracking behind a pluggable port, plus forward and
//! backward track construction over prepared pyramid sequences.

mod lk;
mod ncc;

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rayon::prelude::*;

pub use lk::{step_lk, LkTracker, LkTrackerConfig};
pub use ncc::{step_ncc, NccTracker, NccTrackerConfig};

use crate::error::{Error, Result};
use crate::imaging::{build_pyramid, Frame, ImagePyramid, Point2, VideoSequence};
use crate::scalar::Scalar;

/// Steps whose confidence falls below this value are marked invalid.
pub const CONFIDENCE_FLOOR: f64 = 0.2;

/// Query point `(t_q, x_q, y_q)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnchorPoint<T> {
    pub query_frame: usize,
    pub position: Point2<T>,
}

impl<T: Scalar> AnchorPoint<T> {
    pub fn new(query_frame: usize, position: Point2<T>) -> Self {
        Self {
            query_frame,
            position,
        }
    }

    pub fn validate(&self, frames: usize, width: usize, height: usize) -> Result<()> {
        if self.query_frame >= frames {
            return Err(Error::Domain(format!(
                "anchor frame {} outside sequence of {frames} frames",
                self.query_frame
            )));
        }
        let p = self.position;
        if !(p.is_finite()
            && p.x >= T::zero()
            && p.y >= T::zero()
            && p.x <= T::of_usize(width - 1)
            && p.y <= T::of_usize(height - 1))
        {
            return Err(Error::Domain(format!(
                "anchor position ({}, {}) outside {width}x{height} frame",
                p.x, p.y
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Backward,
}

/// Per-frame positions over a window, always stored in forward frame order.
#[derive(Debug, Clone, PartialEq)]
pub struct Track<T> {
    pub direction: Direction,
    pub start_frame: usize,
    pub points: Vec<Point2<T>>,
    pub valid: Vec<bool>,
}

impl<T: Scalar> Track<T> {
    pub fn new(
        direction: Direction,
        start_frame: usize,
        points: Vec<Point2<T>>,
        valid: Vec<bool>,
    ) -> Result<Self> {
        if points.is_empty() || points.len() != valid.len() {
            return Err(Error::Contract(format!(
                "track needs equal non-zero point/valid lengths, got {} and {}",
                points.len(),
                valid.len()
            )));
        }
        Ok(Self {
            direction,
            start_frame,
            points,
            valid,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn first(&self) -> Point2<T> {
        self.points[0]
    }

    pub fn terminal(&self) -> Point2<T> {
        *self.points.last().expect("non-empty track")
    }

    pub fn all_valid(&self) -> bool {
        self.valid.iter().all(|&v| v)
    }
}

/// Borrowed view of one frame's pyramid.
#[derive(Debug, Clone, Copy)]
pub struct PyramidRef<'a, T> {
    base: &'a Frame<T>,
    upper: &'a [Frame<T>],
}

impl<'a, T> PyramidRef<'a, T> {
    pub fn new(base: &'a Frame<T>, upper: &'a [Frame<T>]) -> Self {
        Self { base, upper }
    }

    pub fn depth(&self) -> usize {
        1 + self.upper.len()
    }

    pub fn level(&self, k: usize) -> &'a Frame<T> {
        if k == 0 {
            self.base
        } else {
            &self.upper[k - 1]
        }
    }

    pub fn base(&self) -> &'a Frame<T> {
        self.base
    }
}

impl<T: Scalar> ImagePyramid<T> {
    pub fn view(&self) -> PyramidRef<'_, T> {
        let levels = self.levels();
        PyramidRef::new(&levels[0], &levels[1..])
    }
}

/// A sequence with the coarse pyramid levels a tracker needs built once per
/// frame. Segments and time-reversed views share the levels.
#[derive(Clone)]
pub struct PyramidSequence<'a, T> {
    seq: &'a VideoSequence<T>,
    upper: Arc<Vec<Vec<Frame<T>>>>,
    start: usize,
    len: usize,
    reversed: bool,
}

impl<'a, T: Scalar> PyramidSequence<'a, T> {
    pub fn new(seq: &'a VideoSequence<T>, levels: usize) -> Result<Self> {
        let upper = if levels <= 1 {
            vec![Vec::new(); seq.len()]
        } else {
            seq.frames()
                .par_iter()
                .map(|f| build_pyramid(f, levels).map(|p| p.levels()[1..].to_vec()))
                .collect::<Result<Vec<_>>>()?
        };
        Ok(Self {
            seq,
            upper: Arc::new(upper),
            start: 0,
            len: seq.len(),
            reversed: false,
        })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// The underlying full sequence.
    pub fn sequence(&self) -> &'a VideoSequence<T> {
        self.seq
    }

    pub fn width(&self) -> usize {
        self.seq.width()
    }

    pub fn height(&self) -> usize {
        self.seq.height()
    }

    fn source_index(&self, t: usize) -> usize {
        assert!(t < self.len, "frame {t} outside view of {} frames", self.len);
        if self.reversed {
            self.start + self.len - 1 - t
        } else {
            self.start + t
        }
    }

    pub fn pyramid(&self, t: usize) -> PyramidRef<'_, T> {
        let k = self.source_index(t);
        PyramidRef::new(self.seq.frame(k), &self.upper[k])
    }

    /// View of frames `[start, end)` of this view, re-indexed from 0.
    pub fn segment(&self, start: usize, end: usize) -> Result<Self> {
        if start >= end || end > self.len {
            return Err(Error::Domain(format!(
                "segment [{start}, {end}) outside view of {} frames",
                self.len
            )));
        }
        let (from, to) = if self.reversed {
            (self.len - end, self.len - start)
        } else {
            (start, end)
        };
        Ok(Self {
            start: self.start + from,
            len: to - from,
            ..self.clone()
        })
    }

    /// The same frames in reverse temporal order.
    pub fn reversed(&self) -> Self {
        Self {
            reversed: !self.reversed,
            ..self.clone()
        }
    }
}

/// The frame-to-frame tracking contract. Implementations must be
/// deterministic and free of interior state.
pub trait TrackerPort<T: Scalar>: Sync {
    /// Number of pyramid levels `step` reads; 1 means the base frame only.
    fn pyramid_levels(&self) -> usize {
        1
    }

    /// Locates in `next` the point that sits at `p` in `prev`; returns the new
    /// position and a confidence in `[0, 1]`.
    fn step(&self, prev: PyramidRef<'_, T>, next: PyramidRef<'_, T>, p: Point2<T>) -> (Point2<T>, T);

    fn prepare<'a>(&self, seq: &'a VideoSequence<T>) -> Result<PyramidSequence<'a, T>> {
        PyramidSequence::new(seq, self.pyramid_levels())
    }
}

fn check_window(len: usize, start: usize, span: usize) -> Result<()> {
    if span == 0 {
        return Err(Error::Domain("track span must be at least one frame".into()));
    }
    if start + span > len {
        return Err(Error::Domain(format!(
            "window [{start}, {}) exceeds sequence of {len} frames",
            start + span
        )));
    }
    Ok(())
}

/// Chains `span - 1` steps forward from the seed.
pub fn forward_track<T: Scalar, P: TrackerPort<T> + ?Sized>(
    tracker: &P,
    seq: &PyramidSequence<'_, T>,
    seed: AnchorPoint<T>,
    span: usize,
) -> Result<Track<T>> {
    check_window(seq.len(), seed.query_frame, span)?;
    let floor = T::lit(CONFIDENCE_FLOOR);
    let start = seed.query_frame;
    let mut points = Vec::with_capacity(span);
    let mut valid = Vec::with_capacity(span);
    let mut p = seed.position;
    points.push(p);
    valid.push(true);
    for t in start + 1..start + span {
        let (q, conf) = tracker.step(seq.pyramid(t - 1), seq.pyramid(t), p);
        p = q;
        points.push(p);
        valid.push(conf >= floor);
    }
    Track::new(Direction::Forward, start, points, valid)
}

/// Seeds at `terminal` on the window's last frame and steps through reversed
/// frame pairs. The result is re-indexed to forward order, so index `i`
/// corresponds to frame `start_frame + i` exactly as in the forward track.
pub fn backward_track<T: Scalar, P: TrackerPort<T> + ?Sized>(
    tracker: &P,
    seq: &PyramidSequence<'_, T>,
    terminal: Point2<T>,
    start_frame: usize,
    span: usize,
) -> Result<Track<T>> {
    check_window(seq.len(), start_frame, span)?;
    let floor = T::lit(CONFIDENCE_FLOOR);
    let last = start_frame + span - 1;
    let mut points = vec![terminal; span];
    let mut valid = vec![true; span];
    let mut p = terminal;
    for t in (start_frame + 1..=last).rev() {
        let (q, conf) = tracker.step(seq.pyramid(t), seq.pyramid(t - 1), p);
        p = q;
        points[t - 1 - start_frame] = p;
        valid[t - 1 - start_frame] = conf >= floor;
    }
    Track::new(Direction::Backward, start_frame, points, valid)
}

/// Which built-in tracker to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TrackerKind {
    Ncc,
    Lk,
}

impl fmt::Display for TrackerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TrackerKind::Ncc => "ncc",
            TrackerKind::Lk => "lk",
        })
    }
}

impl FromStr for TrackerKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "ncc" => Ok(TrackerKind::Ncc),
            "lk" => Ok(TrackerKind::Lk),
            other => Err(Error::Config(format!("unknown tracker '{other}' (expected ncc or lk)"))),
        }
    }
}

/// Built-in trackers behind one concrete type.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BaseTracker {
    Ncc(NccTracker),
    Lk(LkTracker),
}

impl BaseTracker {
    pub fn ncc(cfg: NccTrackerConfig) -> Result<Self> {
        Ok(BaseTracker::Ncc(NccTracker::new(cfg)?))
    }

    pub fn lk(cfg: LkTrackerConfig) -> Result<Self> {
        Ok(BaseTracker::Lk(LkTracker::new(cfg)?))
    }

    pub fn default_for(kind: TrackerKind) -> Self {
        match kind {
            TrackerKind::Ncc => BaseTracker::Ncc(NccTracker::default()),
            TrackerKind::Lk => BaseTracker::Lk(LkTracker::default()),
        }
    }

    pub fn kind(&self) -> TrackerKind {
        match self {
            BaseTracker::Ncc(_) => TrackerKind::Ncc,
            BaseTracker::Lk(_) => TrackerKind::Lk,
        }
    }
}

impl<T: Scalar> TrackerPort<T> for BaseTracker {
    fn pyramid_levels(&self) -> usize {
        match self {
            BaseTracker::Ncc(t) => TrackerPort::<T>::pyramid_levels(t),
            BaseTracker::Lk(t) => TrackerPort::<T>::pyramid_levels(t),
        }
    }

    fn step(&self, prev: PyramidRef<'_, T>, next: PyramidRef<'_, T>, p: Point2<T>) -> (Point2<T>, T) {
        match self {
            BaseTracker::Ncc(t) => t.step(prev, next, p),
            BaseTracker::Lk(t) => t.step(prev, next, p),
        }
    }
}

/// Samples `frame` on a `(2*radius+1)^2` grid centred on `center`, sharing one
/// set of bilinear weights across the patch. Returns `None` when the patch
/// leaves the frame.
pub(crate) fn extract_patch<T: Scalar>(
    frame: &Frame<T>,
    center: Point2<T>,
    radius: usize,
    out: &mut Vec<T>,
) -> Option<()> {
    let bx = center.x.floor();
    let by = center.y.floor();
    let fx = center.x - bx;
    let fy = center.y - by;
    let cx = bx.to_isize()?;
    let cy = by.to_isize()?;
    let r = radius as isize;
    let (w, h) = (frame.width() as isize, frame.height() as isize);
    // the +1 neighbour is read only when its weight is non-zero
    let need_x = if fx > T::zero() { 1 } else { 0 };
    let need_y = if fy > T::zero() { 1 } else { 0 };
    if cx - r < 0 || cy - r < 0 || cx + r + need_x > w - 1 || cy + r + need_y > h - 1 {
        return None;
    }
    let w00 = (T::one() - fx) * (T::one() - fy);
    let w10 = fx * (T::one() - fy);
    let w01 = (T::one() - fx) * fy;
    let w11 = fx * fy;
    let data = frame.data();
    let stride = frame.width();
    out.clear();
    let side = 2 * radius + 1;
    for j in 0..side {
        let y = (cy - r) as usize + j;
        let row0 = y * stride;
        let row1 = if need_y == 1 { row0 + stride } else { row0 };
        for i in 0..side {
            let x = (cx - r) as usize + i;
            let x1 = if need_x == 1 { x + 1 } else { x };
            out.push(
                data[row0 + x] * w00 + data[row0 + x1] * w10 + data[row1 + x] * w01 + data[row1 + x1] * w11,
            );
        }
    }
    Some(())
}
