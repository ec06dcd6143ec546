//! Particle-filter refinement of point tracks.
//!
//! A frame-to-frame tracker ([`tracker::TrackerPort`]) produces forward and
//! backward tracks; [`filter`] keeps a weighted particle cloud per anchor whose
//! weights come from forward-backward cyclic consistency and which is renewed
//! by stochastic universal soft-resampling after every window. [`eval`]
//! implements the grid-anchor forward-backward error protocol and [`synth`]
//! renders scenes with exact ground truth.
//!
//! Every numeric type is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix the common instantiations.

pub mod commands;
pub mod error;
pub mod eval;
pub mod filter;
pub mod grid;
pub mod imaging;
pub mod io;
pub mod scalar;
pub mod synth;
pub mod tracker;

#[cfg(test)]
pub(crate) mod testutil;

pub use error::{Error, Result};
pub use eval::{fbe, FbeReport, GridConfig, Pipeline, ThroughputReport};
pub use filter::{EstimateMode, FilterConfig, FilteredTrajectory, Particle, ParticleSet};
pub use imaging::{
    build_pyramid, sample_bilinear, sample_clamped, BoundingBox, Frame, ImagePyramid, Point2,
    VideoSequence,
};
pub use scalar::Scalar;
pub use synth::{GroundTruth, SceneConfig};
pub use tracker::{
    backward_track, forward_track, AnchorPoint, BaseTracker, Direction, LkTracker, LkTrackerConfig,
    NccTracker, NccTrackerConfig, PyramidSequence, Track, TrackerKind, TrackerPort,
};

pub type Point2f = Point2<f32>;
pub type Point2d = Point2<f64>;
pub type Frame32 = Frame<f32>;
pub type Frame64 = Frame<f64>;
pub type Sequence32 = VideoSequence<f32>;
pub type Sequence64 = VideoSequence<f64>;
