//! Particle clouds weighted by forward-backward cyclic consistency.
//!
//! Each anchor owns `M` particles sampled around its bounding-box centre.
//! Every window of `L` frames, each particle is tracked forward, then
//! backward from its forward terminal; the per-frame Gaussian agreement of
//! the two tracks scores the particle. Weights are updated multiplicatively
//! and the cloud is renewed by stochastic universal soft-resampling.
//!
//! A particle remembers the displacement it was sampled with (`offset`). The
//! anchor estimate is read out from the particles' positions minus their
//! offsets, so every particle votes for where the anchor itself has moved.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::imaging::{BoundingBox, Point2};
use crate::scalar::Scalar;
use crate::tracker::{backward_track, forward_track, AnchorPoint, PyramidSequence, Track, TrackerPort};

/// Per-frame likelihood floor applied before taking logarithms.
pub const LIKELIHOOD_FLOOR: f64 = 1e-12;
/// Rejection-sampling budget per particle.
pub const MAX_INIT_ATTEMPTS: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EstimateMode {
    #[default]
    WeightedMean,
    BestParticle,
}

impl FromStr for EstimateMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "weighted-mean" => Ok(EstimateMode::WeightedMean),
            "best-particle" => Ok(EstimateMode::BestParticle),
            other => Err(Error::Config(format!("unknown estimate mode '{other}'"))),
        }
    }
}

impl fmt::Display for EstimateMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EstimateMode::WeightedMean => "weighted-mean",
            EstimateMode::BestParticle => "best-particle",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterConfig {
    pub num_particles: usize,
    /// Std of the initial cloud, pixels.
    pub init_sigma: f64,
    /// Std of the cyclic-consistency likelihood, pixels.
    pub likelihood_sigma: f64,
    pub resample_alpha: f64,
    pub window_len: usize,
    pub rng_seed: u64,
    pub estimate_mode: EstimateMode,
    /// Std of the offspring jitter, pixels.
    pub jitter_sigma: f64,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            num_particles: 3,
            init_sigma: 5.0,
            likelihood_sigma: 3.0,
            resample_alpha: 0.5,
            window_len: 16,
            rng_seed: 0,
            estimate_mode: EstimateMode::WeightedMean,
            jitter_sigma: 1.0,
        }
    }
}

impl FilterConfig {
    pub fn with_particles(num_particles: usize) -> Self {
        Self {
            num_particles,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_particles == 0 {
            return Err(Error::Config("filter needs at least one particle".into()));
        }
        if !(self.init_sigma.is_finite() && self.init_sigma > 0.0) {
            return Err(Error::Config(format!("sigma0 {} must be > 0", self.init_sigma)));
        }
        if !(self.likelihood_sigma.is_finite() && self.likelihood_sigma > 0.0) {
            return Err(Error::Config(format!("sigma {} must be > 0", self.likelihood_sigma)));
        }
        if !(0.0..=1.0).contains(&self.resample_alpha) {
            return Err(Error::Config(format!("alpha {} must lie in [0, 1]", self.resample_alpha)));
        }
        if self.window_len < 2 {
            return Err(Error::Config(format!("window length {} must be >= 2", self.window_len)));
        }
        if !(self.jitter_sigma.is_finite() && self.jitter_sigma >= 0.0) {
            return Err(Error::Config(format!("jitter sigma {} must be >= 0", self.jitter_sigma)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Particle<T> {
    pub position: Point2<T>,
    /// Displacement from the anchor at initialisation, inherited by offspring.
    pub offset: Point2<T>,
    pub weight: T,
    /// False once a forward step fell below the tracker's confidence floor.
    pub alive: bool,
}

impl<T: Scalar> Particle<T> {
    /// Position with the initial displacement removed.
    pub fn compensated(&self, p: Point2<T>) -> Point2<T> {
        p - self.offset
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParticleSet<T> {
    pub particles: Vec<Particle<T>>,
    pub anchor: AnchorPoint<T>,
    /// Frame the particle positions refer to.
    pub window_start: usize,
}

impl<T: Scalar> ParticleSet<T> {
    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    pub fn weights(&self) -> Vec<T> {
        self.particles.iter().map(|p| p.weight).collect()
    }

    pub fn weight_sum(&self) -> T {
        self.particles.iter().map(|p| p.weight).sum()
    }

    fn normalize(&mut self) -> Result<()> {
        let total = self.weight_sum();
        if !(total.is_finite() && total > T::zero()) {
            return Err(Error::Contract(format!("cannot normalise weight sum {total}")));
        }
        for p in &mut self.particles {
            p.weight /= total;
        }
        Ok(())
    }

    fn check_normalized(&self) -> Result<()> {
        let tol = T::epsilon().sqrt();
        let total = self.weight_sum();
        if self.particles.iter().any(|p| !(p.weight.is_finite() && p.weight >= T::zero()))
            || (total - T::one()).abs() > tol
        {
            return Err(Error::Contract(format!("particle weights not normalised (sum {total})")));
        }
        Ok(())
    }
}

/// Output of one filtering window.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowOutcome<T> {
    /// Frame of the first point in the estimate vectors.
    pub start_frame: usize,
    pub forward_estimates: Vec<Point2<T>>,
    pub backward_estimates: Vec<Point2<T>>,
    /// Natural-log window score of every particle.
    pub log_scores: Vec<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilteredTrajectory<T> {
    pub anchor: AnchorPoint<T>,
    /// One estimate per frame from the anchor's query frame to the sequence end.
    pub estimates: Vec<Point2<T>>,
    /// Backward-pass readout aligned with `estimates`.
    pub backward_estimates: Vec<Point2<T>>,
    /// Mean per-frame distance between the two readouts in each window.
    pub per_window_fbe: Vec<T>,
    pub particle_history: Option<Vec<ParticleSet<T>>>,
    /// First frame left without a valid estimate; later estimates repeat the last valid one.
    pub divergence_frame: Option<usize>,
}

impl<T: Scalar> FilteredTrajectory<T> {
    pub fn len(&self) -> usize {
        self.estimates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.estimates.is_empty()
    }

    pub fn diverged(&self) -> bool {
        self.divergence_frame.is_some()
    }

    /// Frames with a valid estimate.
    pub fn valid_len(&self) -> usize {
        self.divergence_frame
            .map_or(self.estimates.len(), |f| f - self.anchor.query_frame)
    }
}

/// Seeds the particle stream of one anchor.
pub fn anchor_rng(cfg: &FilterConfig, anchor_id: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(cfg.rng_seed ^ anchor_id)
}

fn gaussian<T: Scalar>(rng: &mut impl Rng, sigma: f64) -> T {
    let normal = Normal::new(0.0, sigma).expect("validated sigma");
    T::lit(normal.sample(rng))
}

/// Draws `M` particles around the box centre, rejecting draws outside the box.
pub fn init_particles<T: Scalar>(
    cfg: &FilterConfig,
    anchor: AnchorPoint<T>,
    bbox: &BoundingBox<T>,
    rng: &mut impl Rng,
) -> Result<ParticleSet<T>> {
    cfg.validate()?;
    if anchor.position != bbox.center {
        return Err(Error::Contract("anchor must sit at its bounding-box centre".into()));
    }
    let m = cfg.num_particles;
    let weight = T::one() / T::of_usize(m);
    let mut particles = Vec::with_capacity(m);
    for k in 0..m {
        let mut attempt = 0;
        let offset = loop {
            if attempt == MAX_INIT_ATTEMPTS {
                return Err(Error::Config(format!(
                    "particle {k}: no draw inside the {} px box after {MAX_INIT_ATTEMPTS} attempts \
                     (sigma0 {} too large)",
                    bbox.side, cfg.init_sigma
                )));
            }
            attempt += 1;
            let d = Point2::new(gaussian::<T>(rng, cfg.init_sigma), gaussian::<T>(rng, cfg.init_sigma));
            if bbox.contains(bbox.center + d) {
                break d;
            }
        };
        particles.push(Particle {
            position: bbox.center + offset,
            offset,
            weight,
            alive: true,
        });
    }
    Ok(ParticleSet {
        particles,
        anchor,
        window_start: anchor.query_frame,
    })
}

/// Isotropic bivariate Gaussian density of the forward-backward deviation.
pub fn likelihood<T: Scalar>(cfg: &FilterConfig, fwd: Point2<T>, bwd: Point2<T>) -> T {
    let sigma = T::lit(cfg.likelihood_sigma);
    let var = sigma * sigma;
    let d = bwd - fwd;
    let q = (d.x * d.x + d.y * d.y) / var;
    // 1 / (2 pi sqrt|diag(var, var)|)
    (-T::lit(0.5) * q).exp() / (T::TAU() * var)
}

/// Sum over aligned frames of the floored log-likelihood.
pub fn window_log_score<T: Scalar>(cfg: &FilterConfig, fwd: &Track<T>, bwd: &Track<T>) -> Result<T> {
    if fwd.len() != bwd.len() || fwd.start_frame != bwd.start_frame {
        return Err(Error::Contract("window tracks are not index-aligned".into()));
    }
    let floor = T::lit(LIKELIHOOD_FLOOR);
    Ok(fwd
        .points
        .iter()
        .zip(&bwd.points)
        .map(|(&f, &b)| likelihood(cfg, f, b).max(floor).ln())
        .sum())
}

/// Readout of the anchor position from per-particle points.
pub fn estimate<T: Scalar>(cfg: &FilterConfig, weights: &[T], points: &[Point2<T>]) -> Point2<T> {
    debug_assert_eq!(weights.len(), points.len());
    match cfg.estimate_mode {
        EstimateMode::WeightedMean => weights
            .iter()
            .zip(points)
            .fold(Point2::new(T::zero(), T::zero()), |acc, (&w, &p)| acc + p * w),
        EstimateMode::BestParticle => {
            let mut best = 0;
            for (k, &w) in weights.iter().enumerate() {
                if w > weights[best] {
                    best = k;
                }
            }
            points[best]
        }
    }
}

/// Tracks every particle through `span` frames from `pset.window_start`,
/// reweights the cloud by cyclic consistency and advances the particles to
/// their forward terminals.
pub fn run_window<T: Scalar, P: TrackerPort<T> + ?Sized>(
    cfg: &FilterConfig,
    tracker: &P,
    seq: &PyramidSequence<'_, T>,
    pset: &mut ParticleSet<T>,
    span: usize,
) -> Result<WindowOutcome<T>> {
    pset.check_normalized()?;
    let start = pset.window_start;
    let mut tracks = Vec::with_capacity(pset.len());
    for particle in &pset.particles {
        let seed = AnchorPoint::new(start, particle.position);
        let fwd = forward_track(tracker, seq, seed, span)?;
        let bwd = backward_track(tracker, seq, fwd.terminal(), start, span)?;
        tracks.push((fwd, bwd));
    }

    let dead_score = T::of_usize(span) * T::lit(LIKELIHOOD_FLOOR).ln();
    let mut log_scores = Vec::with_capacity(tracks.len());
    for (particle, (fwd, bwd)) in pset.particles.iter_mut().zip(&tracks) {
        particle.alive = fwd.all_valid();
        log_scores.push(if particle.alive {
            window_log_score(cfg, fwd, bwd)?
        } else {
            dead_score
        });
    }
    if pset.particles.iter().all(|p| !p.alive) {
        let last = estimate(
            cfg,
            &pset.weights(),
            &pset.particles.iter().map(|p| p.compensated(p.position)).collect::<Vec<_>>(),
        );
        return Err(Error::Divergence {
            frame: start,
            last_x: last.x.as_f64(),
            last_y: last.y.as_f64(),
        });
    }

    // w' = w * exp(score), shifted by the largest log term
    let log_w: Vec<T> = pset
        .particles
        .iter()
        .zip(&log_scores)
        .map(|(p, &s)| p.weight.ln() + s)
        .collect();
    let top = log_w.iter().copied().fold(T::neg_infinity(), T::max);
    for (p, &lw) in pset.particles.iter_mut().zip(&log_w) {
        p.weight = (lw - top).exp();
    }
    pset.normalize()?;

    let weights = pset.weights();
    let mut forward_estimates = Vec::with_capacity(span);
    let mut backward_estimates = Vec::with_capacity(span);
    let mut fwd_pts = Vec::with_capacity(pset.len());
    let mut bwd_pts = Vec::with_capacity(pset.len());
    for i in 0..span {
        fwd_pts.clear();
        bwd_pts.clear();
        for (p, (fwd, bwd)) in pset.particles.iter().zip(&tracks) {
            fwd_pts.push(p.compensated(fwd.points[i]));
            bwd_pts.push(p.compensated(bwd.points[i]));
        }
        forward_estimates.push(estimate(cfg, &weights, &fwd_pts));
        backward_estimates.push(estimate(cfg, &weights, &bwd_pts));
    }

    for (p, (fwd, _)) in pset.particles.iter_mut().zip(&tracks) {
        p.position = fwd.terminal();
    }
    pset.window_start = start + span - 1;
    Ok(WindowOutcome {
        start_frame: start,
        forward_estimates,
        backward_estimates,
        log_scores,
    })
}

/// Soft-resampling mixture `q = alpha * w + (1 - alpha) / M`.
pub fn mixture<T: Scalar>(weights: &[T], alpha: f64) -> Vec<T> {
    let a = T::lit(alpha);
    let uniform = (T::one() - a) / T::of_usize(weights.len());
    weights.iter().map(|&w| a * w + uniform).collect()
}

/// Stochastic universal selection: pointers `u + k / M` over the cumulative
/// `q`, with `u` given as a fraction of `1 / M`. Returns one ancestor per pointer.
pub fn universal_select<T: Scalar>(q: &[T], u: T) -> Vec<usize> {
    let m = q.len();
    let step = T::one() / T::of_usize(m);
    let mut out = Vec::with_capacity(m);
    let mut ancestor = 0;
    let mut cumulative = q[0];
    for k in 0..m {
        let pointer = (u + T::of_usize(k)) * step;
        while pointer >= cumulative && ancestor + 1 < m {
            ancestor += 1;
            cumulative += q[ancestor];
        }
        out.push(ancestor);
    }
    out
}

/// Ancestors and pre-normalisation offspring weights `w_a / q_a`.
pub fn resample_plan<T: Scalar>(weights: &[T], alpha: f64, u: T) -> Vec<(usize, T)> {
    let q = mixture(weights, alpha);
    universal_select(&q, u)
        .into_iter()
        .map(|a| (a, weights[a] / q[a]))
        .collect()
}

/// Replaces the cloud by `M` offspring, jittering position and offset alike.
pub fn soft_resample<T: Scalar>(
    cfg: &FilterConfig,
    pset: &ParticleSet<T>,
    rng: &mut impl Rng,
) -> Result<ParticleSet<T>> {
    pset.check_normalized()?;
    let u = T::lit(rng.random_range(0.0..1.0));
    let plan = resample_plan(&pset.weights(), cfg.resample_alpha, u);
    let mut particles = Vec::with_capacity(plan.len());
    for (a, weight) in plan {
        let parent = pset.particles[a];
        let jitter = if cfg.jitter_sigma > 0.0 {
            Point2::new(gaussian::<T>(rng, cfg.jitter_sigma), gaussian::<T>(rng, cfg.jitter_sigma))
        } else {
            Point2::new(T::zero(), T::zero())
        };
        particles.push(Particle {
            position: parent.position + jitter,
            offset: parent.offset + jitter,
            weight,
            alive: parent.alive,
        });
    }
    let mut out = ParticleSet {
        particles,
        anchor: pset.anchor,
        window_start: pset.window_start,
    };
    out.normalize()?;
    Ok(out)
}

/// Runs the filter for one anchor from its query frame to the sequence end.
///
/// Windows tile the sequence with stride `L`. After the first window each
/// track is seeded on the previous window's last frame, so the link between
/// windows is tracked and scored as well. A trailing window shorter than `L`
/// is processed the same way. If every particle fails inside a window, the
/// trajectory records the divergence and holds the last estimate.
pub fn track_anchor<T: Scalar, P: TrackerPort<T> + ?Sized>(
    cfg: &FilterConfig,
    tracker: &P,
    seq: &PyramidSequence<'_, T>,
    anchor: AnchorPoint<T>,
    bbox: &BoundingBox<T>,
    anchor_id: u64,
    keep_history: bool,
) -> Result<FilteredTrajectory<T>> {
    cfg.validate()?;
    let frames = seq.len();
    anchor.validate(frames, seq.width(), seq.height())?;
    let first = anchor.query_frame;
    let total = frames - first;
    if total < cfg.window_len {
        return Err(Error::Domain(format!(
            "{total} frames after the query frame, window needs {}",
            cfg.window_len
        )));
    }
    let mut rng = anchor_rng(cfg, anchor_id);
    let pset = init_particles(cfg, anchor, bbox, &mut rng)?;
    Ok(run_filter(cfg, tracker, seq, anchor, pset, &mut rng, keep_history)?.0)
}

/// Window loop shared by both passes; returns the trajectory and the final cloud.
fn run_filter<T: Scalar, P: TrackerPort<T> + ?Sized>(
    cfg: &FilterConfig,
    tracker: &P,
    seq: &PyramidSequence<'_, T>,
    anchor: AnchorPoint<T>,
    mut pset: ParticleSet<T>,
    rng: &mut ChaCha8Rng,
    keep_history: bool,
) -> Result<(FilteredTrajectory<T>, ParticleSet<T>)> {
    let frames = seq.len();
    let first = anchor.query_frame;
    let total = frames - first;
    let mut history = keep_history.then(Vec::new);
    let mut traj = FilteredTrajectory {
        anchor,
        estimates: Vec::with_capacity(total),
        backward_estimates: Vec::with_capacity(total),
        per_window_fbe: Vec::new(),
        particle_history: None,
        divergence_frame: None,
    };

    let mut next = first;
    while next < frames {
        let (span, skip) = if next == first {
            (cfg.window_len, 0)
        } else {
            ((frames - next).min(cfg.window_len) + 1, 1)
        };
        match run_window(cfg, tracker, seq, &mut pset, span) {
            Ok(out) => {
                let fwd = &out.forward_estimates[skip..];
                let bwd = &out.backward_estimates[skip..];
                let fbe = fwd.iter().zip(bwd).map(|(f, b)| f.distance(b)).sum::<T>() / T::of_usize(fwd.len());
                traj.per_window_fbe.push(fbe);
                traj.estimates.extend_from_slice(fwd);
                traj.backward_estimates.extend_from_slice(bwd);
                next += fwd.len();
            }
            Err(Error::Divergence { .. }) => {
                traj.divergence_frame = Some(next);
                let hold = traj.estimates.last().copied().unwrap_or(anchor.position);
                let hold_b = traj.backward_estimates.last().copied().unwrap_or(anchor.position);
                traj.estimates.resize(total, hold);
                traj.backward_estimates.resize(total, hold_b);
                break;
            }
            Err(e) => return Err(e),
        }
        if let Some(h) = history.as_mut() {
            h.push(pset.clone());
        }
        if next < frames {
            pset = soft_resample(cfg, &pset, rng)?;
        }
    }
    traj.particle_history = history;
    Ok((traj, pset))
}

/// Offsets the particle stream of the time-reversed pass.
const BACKWARD_STREAM: u64 = 0x5851_F42D_4C95_7F2D;

/// Filtered forward pass, then the filter run over the reversed sequence
/// starting from the forward pass's final particle cloud, so the backward
/// pass begins exactly at the forward terminal estimate. The backward
/// estimates are returned in forward frame order.
pub fn track_anchor_cyclic<T: Scalar, P: TrackerPort<T> + ?Sized>(
    cfg: &FilterConfig,
    tracker: &P,
    seq: &PyramidSequence<'_, T>,
    anchor: AnchorPoint<T>,
    bbox: &BoundingBox<T>,
    anchor_id: u64,
) -> Result<(FilteredTrajectory<T>, FilteredTrajectory<T>)> {
    let fwd_view = seq.segment(anchor.query_frame, seq.len())?;
    let start = AnchorPoint::new(0, anchor.position);
    let mut rng = anchor_rng(cfg, anchor_id);
    let pset = init_particles(cfg, anchor, bbox, &mut rng)?;
    cfg.validate()?;
    anchor.validate(seq.len(), seq.width(), seq.height())?;
    if fwd_view.len() < cfg.window_len {
        return Err(Error::Domain(format!(
            "{} frames after the query frame, window needs {}",
            fwd_view.len(),
            cfg.window_len
        )));
    }
    let (mut fwd, mut cloud) = run_filter(cfg, tracker, &fwd_view, start, pset, &mut rng, false)?;
    fwd.anchor = anchor;
    let terminal = *fwd.estimates.last().expect("non-empty trajectory");
    let back_view = fwd_view.reversed();
    let mut back_rng = anchor_rng(cfg, anchor_id ^ BACKWARD_STREAM);
    if fwd.diverged() {
        // the surviving cloud is stale; restart around the held estimate
        let held = Point2::new(
            terminal.x.max(T::zero()).min(T::of_usize(seq.width() - 1)),
            terminal.y.max(T::zero()).min(T::of_usize(seq.height() - 1)),
        );
        let seed = AnchorPoint::new(0, held);
        cloud = init_particles(cfg, seed, &BoundingBox::new(held, bbox.side)?, &mut back_rng)?;
    }
    cloud.window_start = 0;
    let back_anchor = AnchorPoint::new(0, terminal);
    let (mut bwd, _) = run_filter(cfg, tracker, &back_view, back_anchor, cloud, &mut back_rng, false)?;
    bwd.estimates.reverse();
    bwd.backward_estimates.reverse();
    bwd.per_window_fbe.reverse();
    bwd.divergence_frame = bwd.divergence_frame.map(|f| seq.len() - 1 - f);
    bwd.anchor = AnchorPoint::new(seq.len() - 1, terminal);
    Ok((fwd, bwd))
}

/// Plain base-tracker forward and backward tracks from the anchor to the sequence end.
pub fn track_raw<T: Scalar, P: TrackerPort<T> + ?Sized>(
    tracker: &P,
    seq: &PyramidSequence<'_, T>,
    anchor: AnchorPoint<T>,
) -> Result<(Track<T>, Track<T>)> {
    let span = seq.len() - anchor.query_frame;
    let fwd = forward_track(tracker, seq, anchor, span)?;
    let bwd = backward_track(tracker, seq, fwd.terminal(), anchor.query_frame, span)?;
    Ok((fwd, bwd))
}
