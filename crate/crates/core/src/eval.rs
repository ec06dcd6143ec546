//! Forward-backward error protocol over a grid of anchors.

use std::fmt;
use std::time::Instant;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::filter::{track_anchor, track_anchor_cyclic, track_raw, FilterConfig};
pub use crate::grid::{make_grid, GridConfig};
use crate::imaging::{BoundingBox, Point2};
use crate::scalar::Scalar;
use crate::tracker::{forward_track, AnchorPoint, BaseTracker, PyramidSequence, Track};

/// Default upper end of the heatmap display range, pixels.
pub const HEATMAP_CLIP: f64 = 100.0;

/// Sum over aligned frames of the distance between backward and forward
/// positions; divided by the frame count when `normalize` is set.
pub fn fbe_points<T: Scalar>(fwd: &[Point2<T>], bwd: &[Point2<T>], normalize: bool) -> Result<T> {
    if fwd.len() != bwd.len() {
        return Err(Error::Contract(format!(
            "fbe needs aligned tracks, got {} and {} points",
            fwd.len(),
            bwd.len()
        )));
    }
    if fwd.is_empty() {
        return Err(Error::Contract("fbe of empty tracks".into()));
    }
    let sum: T = fwd.iter().zip(bwd).map(|(f, b)| b.distance(f)).sum();
    Ok(if normalize { sum / T::of_usize(fwd.len()) } else { sum })
}

pub fn fbe<T: Scalar>(fwd: &Track<T>, bwd: &Track<T>, normalize: bool) -> Result<T> {
    if fwd.start_frame != bwd.start_frame {
        return Err(Error::Contract("fbe tracks start on different frames".into()));
    }
    fbe_points(&fwd.points, &bwd.points, normalize)
}

/// A base tracker, optionally wrapped by the particle filter.
#[derive(Debug, Clone, Copy)]
pub struct Pipeline {
    pub tracker: BaseTracker,
    pub filter: Option<FilterConfig>,
}

impl Pipeline {
    pub fn raw(tracker: BaseTracker) -> Self {
        Self { tracker, filter: None }
    }

    pub fn filtered(tracker: BaseTracker, filter: FilterConfig) -> Self {
        Self {
            tracker,
            filter: Some(filter),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.filter.as_ref().map_or(Ok(()), FilterConfig::validate)
    }

    /// Tracks one anchor forward and back over the whole view. Returns the
    /// forward and backward position tracks and whether the filter diverged.
    pub fn cyclic<T: Scalar>(
        &self,
        seq: &PyramidSequence<'_, T>,
        anchor: AnchorPoint<T>,
        bbox: &BoundingBox<T>,
        anchor_id: u64,
    ) -> Result<(Vec<Point2<T>>, Vec<Point2<T>>, bool)> {
        match &self.filter {
            None => {
                let (f, b) = track_raw(&self.tracker, seq, anchor)?;
                Ok((f.points, b.points, false))
            }
            Some(cfg) => {
                let (f, b) = track_anchor_cyclic(cfg, &self.tracker, seq, anchor, bbox, anchor_id)?;
                let diverged = f.diverged() || b.diverged();
                Ok((f.estimates, b.estimates, diverged))
            }
        }
    }

    /// Forward pass only, as run online.
    pub fn forward<T: Scalar>(
        &self,
        seq: &PyramidSequence<'_, T>,
        anchor: AnchorPoint<T>,
        bbox: &BoundingBox<T>,
        anchor_id: u64,
    ) -> Result<Vec<Point2<T>>> {
        match &self.filter {
            None => Ok(forward_track(&self.tracker, seq, anchor, seq.len() - anchor.query_frame)?.points),
            Some(cfg) => Ok(track_anchor(cfg, &self.tracker, seq, anchor, bbox, anchor_id, false)?.estimates),
        }
    }
}

impl fmt::Display for Pipeline {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.filter {
            None => write!(f, "raw-{}", self.tracker.kind()),
            Some(cfg) => write!(f, "filtered-{}-m{}", self.tracker.kind(), cfg.num_particles),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnchorResult {
    pub anchor_id: usize,
    pub center: Point2<f64>,
    /// Per-frame mean forward-backward distance.
    pub fbe_norm: f64,
    /// Summed forward-backward distance.
    pub fbe_raw: f64,
    pub diverged: bool,
    /// Mean distance of the forward track to ground truth, when known.
    pub gt_error: Option<f64>,
    pub forward: Vec<Point2<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FbeReport {
    pub pipeline: String,
    pub per_anchor: Vec<AnchorResult>,
    pub mean: f64,
    /// Population standard deviation over anchors.
    pub std: f64,
    pub sequence_seconds: f64,
    pub frames: usize,
    pub columns: usize,
    pub rows: usize,
}

impl FbeReport {
    pub fn from_anchors(
        pipeline: String,
        per_anchor: Vec<AnchorResult>,
        sequence_seconds: f64,
        frames: usize,
        grid: &GridConfig,
    ) -> Self {
        let values: Vec<f64> = per_anchor.iter().map(|a| a.fbe_norm).collect();
        let (mean, std) = mean_std(&values);
        Self {
            pipeline,
            per_anchor,
            mean,
            std,
            sequence_seconds,
            frames,
            columns: grid.columns(),
            rows: grid.rows(),
        }
    }

    /// Mean ground-truth error over anchors, if every anchor has one.
    pub fn mean_gt_error(&self) -> Option<f64> {
        let errs: Option<Vec<f64>> = self.per_anchor.iter().map(|a| a.gt_error).collect();
        errs.filter(|e| !e.is_empty()).map(|e| mean_std(&e).0)
    }

    pub fn diverged_count(&self) -> usize {
        self.per_anchor.iter().filter(|a| a.diverged).count()
    }

    /// Per-anchor normalised FBE laid out row-major on the grid.
    pub fn heatmap_values(&self) -> Vec<f64> {
        self.per_anchor.iter().map(|a| a.fbe_norm).collect()
    }
}

pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Mean Euclidean distance between an estimate track and a reference.
pub fn trajectory_error<T: Scalar>(estimates: &[Point2<T>], truth: &[Point2<f64>]) -> Result<f64> {
    if estimates.len() != truth.len() || estimates.is_empty() {
        return Err(Error::Contract(format!(
            "ground truth has {} frames, estimates {}",
            truth.len(),
            estimates.len()
        )));
    }
    Ok(estimates
        .iter()
        .zip(truth)
        .map(|(e, t)| e.cast::<f64>().distance(t))
        .sum::<f64>()
        / estimates.len() as f64)
}

/// Runs every grid anchor (query frame 0 of `seq`) through the pipeline and
/// measures its forward-backward error over the whole view. `truth[i]`, if
/// given, is the exact trajectory of anchor `i` over the view's frames.
/// Anchors are processed in parallel on the current rayon pool.
pub fn benchmark_accuracy<T: Scalar>(
    pipeline: &Pipeline,
    seq: &PyramidSequence<'_, T>,
    grid: &GridConfig,
    truth: Option<&[Vec<Point2<f64>>]>,
    anchor_ids: Option<&[usize]>,
) -> Result<FbeReport> {
    pipeline.validate()?;
    let anchors = make_grid::<T>(grid)?;
    let ids: Vec<usize> = match anchor_ids {
        Some(ids) => ids.to_vec(),
        None => (0..anchors.len()).collect(),
    };
    if let Some(&bad) = ids.iter().find(|&&i| i >= anchors.len()) {
        return Err(Error::Config(format!("anchor id {bad} not in the {}-anchor grid", anchors.len())));
    }
    if let Some(t) = truth {
        if t.len() != anchors.len() {
            return Err(Error::Contract(format!(
                "ground truth for {} anchors, grid has {}",
                t.len(),
                anchors.len()
            )));
        }
    }
    let results = ids
        .par_iter()
        .map(|&id| {
            let (anchor, bbox) = &anchors[id];
            let (fwd, bwd, diverged) = pipeline.cyclic(seq, *anchor, bbox, id as u64)?;
            let gt_error = truth.map(|t| trajectory_error(&fwd, &t[id])).transpose()?;
            Ok(AnchorResult {
                anchor_id: id,
                center: anchor.position.cast(),
                fbe_norm: fbe_points(&fwd, &bwd, true)?.as_f64(),
                fbe_raw: fbe_points(&fwd, &bwd, false)?.as_f64(),
                diverged,
                gt_error,
                forward: fwd.iter().map(Point2::cast).collect(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let seconds = seq.len() as f64 / seq.sequence().frame_rate();
    Ok(FbeReport::from_anchors(pipeline.to_string(), results, seconds, seq.len(), grid))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ThroughputReport {
    pub pipeline: String,
    pub anchors: usize,
    pub frames: usize,
    pub workers: usize,
    pub wall_seconds: f64,
    pub fps: f64,
    pub per_anchor_ms: f64,
}

impl ThroughputReport {
    pub fn new(pipeline: String, anchors: usize, frames: usize, workers: usize, wall_seconds: f64) -> Self {
        Self {
            pipeline,
            anchors,
            frames,
            workers,
            wall_seconds,
            fps: frames as f64 / wall_seconds,
            per_anchor_ms: wall_seconds * 1000.0 / anchors as f64,
        }
    }
}

/// Median wall time of forward-tracking the first `anchor_limit` grid
/// anchors (all when `None`) over the whole view.
pub fn benchmark_throughput<T: Scalar>(
    pipeline: &Pipeline,
    seq: &PyramidSequence<'_, T>,
    grid: &GridConfig,
    repetitions: usize,
    anchor_limit: Option<usize>,
) -> Result<ThroughputReport> {
    if repetitions < 3 {
        return Err(Error::Config(format!("throughput needs at least 3 repetitions, got {repetitions}")));
    }
    pipeline.validate()?;
    let mut anchors = make_grid::<T>(grid)?;
    if let Some(n) = anchor_limit {
        if n == 0 || n > anchors.len() {
            return Err(Error::Config(format!("anchor limit {n} outside 1..={}", anchors.len())));
        }
        anchors.truncate(n);
    }
    let mut times = Vec::with_capacity(repetitions);
    for _ in 0..repetitions {
        let start = Instant::now();
        anchors
            .par_iter()
            .enumerate()
            .map(|(id, (a, b))| pipeline.forward(seq, *a, b, id as u64).map(|_| ()))
            .collect::<Result<Vec<()>>>()?;
        times.push(start.elapsed().as_secs_f64());
    }
    times.sort_by(f64::total_cmp);
    let median = times[times.len() / 2];
    Ok(ThroughputReport::new(
        pipeline.to_string(),
        anchors.len(),
        seq.len(),
        rayon::current_num_threads(),
        median,
    ))
}

/// Grey levels of the anchor cells, `clip` mapping to 255; each cell is
/// `cell_px` pixels square. Returns width, height and row-major bytes.
pub fn heatmap(report: &FbeReport, clip: f64, cell_px: usize) -> Result<(usize, usize, Vec<u8>)> {
    if !(clip.is_finite() && clip > 0.0) || cell_px == 0 {
        return Err(Error::Config(format!("heatmap clip {clip} and cell size {cell_px} must be positive")));
    }
    let values = report.heatmap_values();
    if values.len() != report.columns * report.rows {
        return Err(Error::Contract(format!(
            "heatmap needs {}x{} anchors, report has {}",
            report.columns,
            report.rows,
            values.len()
        )));
    }
    let (w, h) = (report.columns * cell_px, report.rows * cell_px);
    let mut out = vec![0u8; w * h];
    for y in 0..h {
        for x in 0..w {
            let v = values[(y / cell_px) * report.columns + x / cell_px];
            out[y * w + x] = ((v / clip).clamp(0.0, 1.0) * 255.0).round() as u8;
        }
    }
    Ok((w, h, out))
}
