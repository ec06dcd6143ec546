//! Regular anchor lattice used by the evaluation protocol.

use crate::error::{Error, Result};
use crate::imaging::{BoundingBox, Point2};
use crate::scalar::Scalar;
use crate::tracker::AnchorPoint;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridConfig {
    pub spacing: f64,
    pub box_side: f64,
    pub frame_width: usize,
    pub frame_height: usize,
}

impl GridConfig {
    pub fn new(spacing: f64, box_side: f64, frame_width: usize, frame_height: usize) -> Result<Self> {
        let cfg = Self {
            spacing,
            box_side,
            frame_width,
            frame_height,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// 32 px spacing and 100 px boxes.
    pub fn standard(frame_width: usize, frame_height: usize) -> Self {
        Self {
            spacing: 32.0,
            box_side: 100.0,
            frame_width,
            frame_height,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.spacing.is_finite() && self.spacing > 0.0) {
            return Err(Error::Config(format!("grid spacing {} must be positive", self.spacing)));
        }
        if !(self.box_side.is_finite() && self.box_side > 0.0) {
            return Err(Error::Config(format!("box side {} must be positive", self.box_side)));
        }
        if self.box_side > self.frame_width as f64 || self.box_side > self.frame_height as f64 {
            return Err(Error::Config(format!(
                "box side {} does not fit in {}x{} frame",
                self.box_side, self.frame_width, self.frame_height
            )));
        }
        Ok(())
    }

    fn axis(&self, extent: usize) -> Vec<f64> {
        let half = self.box_side / 2.0;
        let limit = extent as f64 - half;
        let mut out = Vec::new();
        let mut k = 0usize;
        loop {
            let c = half + k as f64 * self.spacing;
            if c > limit {
                break;
            }
            out.push(c);
            k += 1;
        }
        out
    }

    pub fn columns(&self) -> usize {
        self.axis(self.frame_width).len()
    }

    pub fn rows(&self) -> usize {
        self.axis(self.frame_height).len()
    }
}

/// Anchor centres on a lattice starting at `(box_side/2, box_side/2)` with the
/// configured spacing, keeping every box inside the frame. Row-major order;
/// the position in the returned list is the anchor id.
pub fn make_grid<T: Scalar>(cfg: &GridConfig) -> Result<Vec<(AnchorPoint<T>, BoundingBox<T>)>> {
    cfg.validate()?;
    let xs = cfg.axis(cfg.frame_width);
    let ys = cfg.axis(cfg.frame_height);
    if xs.is_empty() || ys.is_empty() {
        return Err(Error::Domain("no anchor box fits inside the frame".into()));
    }
    // centres at the far edge would sit outside [0, w-1]
    let max_x = (cfg.frame_width - 1) as f64;
    let max_y = (cfg.frame_height - 1) as f64;
    let mut out = Vec::with_capacity(xs.len() * ys.len());
    for &y in &ys {
        for &x in &xs {
            let c = Point2::new(T::lit(x.min(max_x)), T::lit(y.min(max_y)));
            out.push((AnchorPoint::new(0, c), BoundingBox::new(c, T::lit(cfg.box_side))?));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standard_geometry_has_117_anchors() {
        let cfg = GridConfig::standard(512, 384);
        let grid = make_grid::<f64>(&cfg).unwrap();
        assert_eq!((cfg.columns(), cfg.rows()), (13, 9));
        assert_eq!(grid.len(), 117);
        assert_eq!(grid[0].0.position, Point2::new(50.0, 50.0));
        assert_eq!(grid[116].0.position, Point2::new(50.0 + 12.0 * 32.0, 50.0 + 8.0 * 32.0));
        for (a, b) in &grid {
            assert_eq!(a.position, b.center);
            assert!(b.center.x - 50.0 >= 0.0 && b.center.x + 50.0 <= 512.0);
            assert!(b.center.y - 50.0 >= 0.0 && b.center.y + 50.0 <= 384.0);
        }
    }

    #[test]
    fn tight_fit_and_degenerate_spacing() {
        let grid = make_grid::<f64>(&GridConfig::new(32.0, 100.0, 100, 100).unwrap()).unwrap();
        assert_eq!(grid.len(), 1);
        // the centre is clamped to the last pixel only when it would leave the frame
        assert_eq!(grid[0].0.position, Point2::new(50.0, 50.0));
        let wide = GridConfig::new(1000.0, 50.0, 300, 200).unwrap();
        assert_eq!((wide.columns(), wide.rows()), (1, 1));
    }

    #[test]
    fn invalid_configs() {
        assert!(GridConfig::new(0.0, 100.0, 512, 384).is_err());
        assert!(GridConfig::new(32.0, 400.0, 512, 384).is_err());
    }
}
