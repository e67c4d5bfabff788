//! Random speckle patterns built by stacking filled ellipses.
//!
//! Pixel `(row, col)` is the unit square whose center sits at the continuous
//! coordinate `(x, y) = (col, row)`. A pixel belongs to an ellipse when its
//! center satisfies the rotated-ellipse inequality; later ellipses overwrite
//! earlier ones.

use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::Grid;
use crate::seed;

#[derive(Debug, Error, PartialEq)]
pub enum SpeckleError {
    #[error("invalid speckle spec: {0}")]
    InvalidSpec(String),
    #[error("ellipse geometry must be finite with positive semi-axes")]
    InvalidEllipse,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeckleSpec {
    pub frame_size: usize,
    /// `(lo, hi)` gray-level intervals, drawn in order.
    pub gray_segments: Vec<(f64, f64)>,
    /// Inclusive range of ellipse counts per segment.
    pub count_range: (u32, u32),
    /// Range of semi-axis lengths in pixels.
    pub axis_range: (f64, f64),
    pub background: f64,
}

impl Default for SpeckleSpec {
    fn default() -> Self {
        Self {
            frame_size: 512,
            gray_segments: vec![(0.08, 0.38), (0.38, 0.68), (0.68, 0.98)],
            count_range: (500, 4000),
            axis_range: (1.0, 6.0),
            background: 0.0,
        }
    }
}

impl SpeckleSpec {
    pub fn validate(&self) -> Result<(), SpeckleError> {
        let bad = |m: String| Err(SpeckleError::InvalidSpec(m));
        if self.frame_size == 0 {
            return bad("frame_size must be at least 1".into());
        }
        for &(lo, hi) in &self.gray_segments {
            if !(0.0 <= lo && lo < hi && hi <= 1.0) {
                return bad(format!("gray segment ({lo}, {hi}) must satisfy 0 <= lo < hi <= 1"));
            }
        }
        let (cmin, cmax) = self.count_range;
        if cmin > cmax {
            return bad(format!("count range ({cmin}, {cmax}) is empty"));
        }
        let (amin, amax) = self.axis_range;
        if !(amin >= 0.5 && amin <= amax && amax.is_finite()) {
            return bad(format!("axis range ({amin}, {amax}) must satisfy 0.5 <= min <= max"));
        }
        if !(0.0..=1.0).contains(&self.background) {
            return bad(format!("background {} outside [0, 1]", self.background));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ellipse {
    pub center: (f64, f64),
    pub semi_axes: (f64, f64),
    /// Radians, counter-clockwise from the x axis.
    pub rotation: f64,
    pub gray: f64,
}

impl Ellipse {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        let (dx, dy) = (x - self.center.0, y - self.center.1);
        let (s, c) = self.rotation.sin_cos();
        let p = (dx * c + dy * s) / self.semi_axes.0;
        let q = (-dx * s + dy * c) / self.semi_axes.1;
        p * p + q * q <= 1.0
    }

    /// Half extents of the axis-aligned bounding box.
    pub fn half_extents(&self) -> (f64, f64) {
        let (a, b) = self.semi_axes;
        let (s, c) = self.rotation.sin_cos();
        (
            ((a * c).powi(2) + (b * s).powi(2)).sqrt(),
            ((a * s).powi(2) + (b * c).powi(2)).sqrt(),
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpecklePattern {
    pub pixels: Grid,
    pub seed: u64,
}

/// Paint `e` onto `pixels`. Only pixels inside the ellipse's bounding box are
/// visited; an ellipse entirely off-frame leaves the pattern untouched.
pub fn rasterize_ellipse(pixels: &mut Grid, e: &Ellipse) -> Result<(), SpeckleError> {
    let finite = [e.center.0, e.center.1, e.semi_axes.0, e.semi_axes.1, e.rotation, e.gray]
        .iter()
        .all(|v| v.is_finite());
    if !finite || e.semi_axes.0 <= 0.0 || e.semi_axes.1 <= 0.0 {
        return Err(SpeckleError::InvalidEllipse);
    }
    let (hx, hy) = e.half_extents();
    let (h, w) = (pixels.height() as f64, pixels.width() as f64);
    let x0 = (e.center.0 - hx).ceil().max(0.0);
    let x1 = (e.center.0 + hx).floor().min(w - 1.0);
    let y0 = (e.center.1 - hy).ceil().max(0.0);
    let y1 = (e.center.1 + hy).floor().min(h - 1.0);
    if x0 > x1 || y0 > y1 {
        return Ok(());
    }
    let gray = e.gray as f32;
    for row in y0 as usize..=y1 as usize {
        for col in x0 as usize..=x1 as usize {
            if e.contains(col as f64, row as f64) {
                pixels.set(row, col, gray);
            }
        }
    }
    Ok(())
}

pub fn generate_speckle(spec: &SpeckleSpec, seed: u64) -> Result<SpecklePattern, SpeckleError> {
    spec.validate()?;
    let n = spec.frame_size;
    let mut pixels = Grid::new(n, n, spec.background as f32);
    let mut rng = seed::rng(seed);
    let frame = n as f64;
    let (amin, amax) = spec.axis_range;
    for &(lo, hi) in &spec.gray_segments {
        let count = rng.gen_range(spec.count_range.0..=spec.count_range.1);
        for _ in 0..count {
            let e = Ellipse {
                center: (rng.gen_range(0.0..frame), rng.gen_range(0.0..frame)),
                semi_axes: (rng.gen_range(amin..=amax), rng.gen_range(amin..=amax)),
                rotation: rng.gen_range(0.0..PI),
                gray: rng.gen_range(lo..hi),
            };
            rasterize_ellipse(&mut pixels, &e)?;
        }
    }
    Ok(SpecklePattern { pixels, seed })
}
