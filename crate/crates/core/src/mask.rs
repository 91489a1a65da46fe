//! Visual masks from gaze.
//!
//! Each gaze sample becomes a unit impulse on an H×W grid, propagated to
//! neighbouring pixels with value `α^d` (zeroed once `α^d < β`). Per-point
//! grids are max-combined, smoothed with a truncated isotropic Gaussian
//! (zero padding, kernel renormalized to unit mass) and quantized to 8 bits
//! with `floor(G · κ)`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{Clip, GazePoint, GazeTrace, GrayImage};

#[derive(Debug, Error, PartialEq)]
pub enum MaskError {
    #[error("invalid mask config: {0}")]
    Config(String),
    #[error("no masks to combine")]
    Empty,
    #[error("grid shape mismatch: expected {expected:?}, got {got:?}")]
    Shape {
        expected: (usize, usize),
        got: (usize, usize),
    },
    #[error("grid value {value} at index {index} outside [0, 1]")]
    OutOfRange { index: usize, value: f64 },
    #[error("gaze sample for frame {0} is missing")]
    MissingGaze(usize),
    #[error("clip `{0}` has no gaze samples; enable interpolation or combined mode, or supply gaze")]
    NoGaze(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MaskMode {
    /// One mask per frame from that frame's gaze sample.
    PerFrame,
    /// One mask from every gaze sample of the clip, replicated per frame.
    Combined,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaskConfig {
    /// Decay rate of the propagated intensity, in (0, 1).
    pub alpha: f64,
    /// Propagation floor, in (0, 1).
    pub beta: f64,
    /// Gaussian standard deviation in pixels.
    pub sigma: f64,
    /// Kernel half-width; `None` means `ceil(3σ)`.
    pub kernel_radius: Option<usize>,
    pub kappa: u8,
    pub mode: MaskMode,
}

impl Default for MaskConfig {
    fn default() -> Self {
        Self {
            alpha: 0.75,
            beta: 0.25,
            sigma: 2.0,
            kernel_radius: None,
            kappa: 255,
            mode: MaskMode::PerFrame,
        }
    }
}

impl MaskConfig {
    /// Defaults with σ scaled to the frame height (2 px at 64 rows).
    pub fn for_height(height: usize) -> Self {
        Self {
            sigma: height as f64 / 32.0,
            ..Self::default()
        }
    }

    pub fn radius(&self) -> usize {
        self.kernel_radius.unwrap_or_else(|| (3.0 * self.sigma).ceil() as usize)
    }

    pub fn validate(&self) -> Result<(), MaskError> {
        let bad = |m: String| Err(MaskError::Config(m));
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad(format!("alpha {} outside (0, 1)", self.alpha));
        }
        if !(self.beta > 0.0 && self.beta < 1.0) {
            return bad(format!("beta {} outside (0, 1)", self.beta));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return bad(format!("sigma {} must be positive", self.sigma));
        }
        if self.radius() < 1 {
            return bad("kernel radius must be ≥ 1".into());
        }
        if self.kappa < 1 {
            return bad("kappa must be in [1, 255]".into());
        }
        Ok(())
    }
}

/// Real-valued H×W plane, row-major (`row = y`, `col = x`).
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub height: usize,
    pub width: usize,
    pub values: Vec<f64>,
}

impl Grid {
    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            values: vec![0.0; height * width],
        }
    }

    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.width + col]
    }

    pub fn max(&self) -> f64 {
        self.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    /// `(row, col)` of the first maximum.
    pub fn argmax(&self) -> (usize, usize) {
        let mut best = 0;
        for (i, &v) in self.values.iter().enumerate() {
            if v > self.values[best] {
                best = i;
            }
        }
        (best / self.width, best % self.width)
    }
}

/// A smoothed mask and its 8-bit image.
#[derive(Debug, Clone, PartialEq)]
pub struct VisualMask {
    pub grid: Grid,
    pub quantized: GrayImage,
}

/// Nearest pixel `(row, col)` of a gaze sample.
fn gaze_pixel(gaze: &GazePoint, height: usize, width: usize) -> (usize, usize) {
    let col = gaze.x.round().clamp(0.0, (width - 1) as f64) as usize;
    let row = gaze.y.round().clamp(0.0, (height - 1) as f64) as usize;
    (row, col)
}

/// Unit impulse at the gaze pixel.
pub fn delta_grid(gaze: &GazePoint, height: usize, width: usize) -> Result<Grid, MaskError> {
    if !gaze.present {
        return Err(MaskError::MissingGaze(gaze.frame));
    }
    let mut grid = Grid::zeros(height, width);
    let (r, c) = gaze_pixel(gaze, height, width);
    grid.values[r * width + c] = 1.0;
    Ok(grid)
}

/// Distance-decayed intensity `α^d` around the gaze pixel, zero where
/// `α^d < β`.
pub fn propagate_decay(gaze: &GazePoint, cfg: &MaskConfig, height: usize, width: usize) -> Result<Grid, MaskError> {
    if !gaze.present {
        return Err(MaskError::MissingGaze(gaze.frame));
    }
    let mut grid = Grid::zeros(height, width);
    let (gr, gc) = gaze_pixel(gaze, height, width);
    // α^d ≥ β  ⇔  d ≤ ln β / ln α; pad the box by one pixel against rounding
    let reach = (cfg.beta.ln() / cfg.alpha.ln()).floor() as usize + 1;
    let (r0, r1) = (gr.saturating_sub(reach), (gr + reach).min(height - 1));
    let (c0, c1) = (gc.saturating_sub(reach), (gc + reach).min(width - 1));
    for r in r0..=r1 {
        for c in c0..=c1 {
            let dr = r as f64 - gr as f64;
            let dc = c as f64 - gc as f64;
            let v = cfg.alpha.powf((dr * dr + dc * dc).sqrt());
            if v >= cfg.beta {
                grid.values[r * width + c] = v;
            }
        }
    }
    Ok(grid)
}

/// Element-wise maximum.
pub fn combine_masks(masks: &[Grid]) -> Result<Grid, MaskError> {
    let first = masks.first().ok_or(MaskError::Empty)?;
    let mut out = first.clone();
    for m in &masks[1..] {
        if (m.height, m.width) != (first.height, first.width) {
            return Err(MaskError::Shape {
                expected: (first.height, first.width),
                got: (m.height, m.width),
            });
        }
        for (o, &v) in out.values.iter_mut().zip(&m.values) {
            *o = o.max(v);
        }
    }
    Ok(out)
}

/// Isotropic 2-D Gaussian density with standard deviation `sigma`.
pub fn gaussian_density(x: f64, y: f64, sigma: f64) -> f64 {
    let s2 = sigma * sigma;
    (-(x * x + y * y) / (2.0 * s2)).exp() / (2.0 * std::f64::consts::PI * s2)
}

/// Truncated `(2r+1)×(2r+1)` Gaussian kernel, renormalized to sum 1.
pub fn gaussian_kernel(cfg: &MaskConfig) -> Grid {
    let r = cfg.radius() as isize;
    let size = (2 * r + 1) as usize;
    let mut k = Grid::zeros(size, size);
    for u in -r..=r {
        for v in -r..=r {
            k.values[((u + r) as usize) * size + (v + r) as usize] = gaussian_density(u as f64, v as f64, cfg.sigma);
        }
    }
    let total: f64 = k.values.iter().sum();
    k.values.iter_mut().for_each(|v| *v /= total);
    k
}

fn gaussian_taps(cfg: &MaskConfig) -> Vec<f64> {
    let r = cfg.radius() as isize;
    let s2 = cfg.sigma * cfg.sigma;
    let taps: Vec<f64> = (-r..=r).map(|u| (-((u * u) as f64) / (2.0 * s2)).exp()).collect();
    let total: f64 = taps.iter().sum();
    taps.into_iter().map(|t| t / total).collect()
}

/// Convolution with [`gaussian_kernel`] under zero padding, computed as two
/// 1-D passes (the normalized kernel factorizes exactly).
pub fn gaussian_smooth(grid: &Grid, cfg: &MaskConfig) -> Grid {
    let taps = gaussian_taps(cfg);
    let r = cfg.radius() as isize;
    let (h, w) = (grid.height as isize, grid.width as isize);
    let mut rows = Grid::zeros(grid.height, grid.width);
    for i in 0..h {
        for j in 0..w {
            let mut acc = 0.0;
            for (t, &k) in taps.iter().enumerate() {
                let jj = j - (t as isize - r);
                if (0..w).contains(&jj) {
                    acc += k * grid.values[(i * w + jj) as usize];
                }
            }
            rows.values[(i * w + j) as usize] = acc;
        }
    }
    let mut out = Grid::zeros(grid.height, grid.width);
    for i in 0..h {
        for j in 0..w {
            let mut acc = 0.0;
            for (t, &k) in taps.iter().enumerate() {
                let ii = i - (t as isize - r);
                if (0..h).contains(&ii) {
                    acc += k * rows.values[(ii * w + j) as usize];
                }
            }
            out.values[(i * w + j) as usize] = acc;
        }
    }
    out
}

/// Slack for floating-point overshoot of values that are exactly 0 or 1 in
/// exact arithmetic.
const RANGE_SLACK: f64 = 1e-12;

/// `floor(G · κ)` per pixel.
pub fn quantize(grid: &Grid, kappa: u8) -> Result<GrayImage, MaskError> {
    let mut pixels = Vec::with_capacity(grid.values.len());
    for (index, &value) in grid.values.iter().enumerate() {
        if !(-RANGE_SLACK..=1.0 + RANGE_SLACK).contains(&value) {
            return Err(MaskError::OutOfRange { index, value });
        }
        pixels.push((value.clamp(0.0, 1.0) * kappa as f64).floor() as u8);
    }
    Ok(GrayImage::new(grid.height, grid.width, pixels))
}

fn finish(grid: &Grid, cfg: &MaskConfig) -> Result<VisualMask, MaskError> {
    let smoothed = gaussian_smooth(grid, cfg);
    let quantized = quantize(&smoothed, cfg.kappa)?;
    Ok(VisualMask {
        grid: smoothed,
        quantized,
    })
}

/// Builds one mask per frame of `trace`.
///
/// Gaze is clamped to the frame, then (if `interpolate`) gaps are filled
/// before masking. In per-frame mode, frames still lacking gaze receive the
/// combined mask of the clip.
pub fn build_clip_masks(
    trace: &GazeTrace,
    cfg: &MaskConfig,
    height: usize,
    width: usize,
    interpolate: bool,
) -> Result<Vec<VisualMask>, MaskError> {
    cfg.validate()?;
    let mut trace = trace.clamped(height, width);
    if interpolate {
        trace = trace.interpolate_missing().trace;
    }
    let present: Vec<&GazePoint> = trace.points.iter().filter(|p| p.present).collect();
    if present.is_empty() {
        return Err(MaskError::NoGaze(trace.clip_id.clone()));
    }

    let combined = || -> Result<VisualMask, MaskError> {
        let grids = present
            .iter()
            .map(|p| propagate_decay(p, cfg, height, width))
            .collect::<Result<Vec<_>, _>>()?;
        finish(&combine_masks(&grids)?, cfg)
    };

    match cfg.mode {
        MaskMode::Combined => {
            let mask = combined()?;
            Ok(vec![mask; trace.len()])
        }
        MaskMode::PerFrame => {
            let mut fallback: Option<VisualMask> = None;
            trace
                .points
                .iter()
                .map(|p| {
                    if p.present {
                        finish(&propagate_decay(p, cfg, height, width)?, cfg)
                    } else {
                        if fallback.is_none() {
                            fallback = Some(combined()?);
                        }
                        Ok(fallback.clone().expect("just set"))
                    }
                })
                .collect()
        }
    }
}

/// Attenuates each frame by its mask: `round(p · m / κ)`.
pub fn apply_mask(clip: &Clip, masks: &[GrayImage], kappa: u8) -> Result<Clip, MaskError> {
    if masks.len() != clip.frames {
        return Err(MaskError::Shape {
            expected: (clip.frames, 0),
            got: (masks.len(), 0),
        });
    }
    let mut out = clip.clone();
    let n = clip.height * clip.width;
    for (t, mask) in masks.iter().enumerate() {
        if (mask.height, mask.width) != (clip.height, clip.width) {
            return Err(MaskError::Shape {
                expected: (clip.height, clip.width),
                got: (mask.height, mask.width),
            });
        }
        for (p, &m) in out.pixels[t * n..(t + 1) * n].iter_mut().zip(&mask.pixels) {
            *p = ((*p as f64) * (m as f64) / kappa as f64).round().min(255.0) as u8;
        }
    }
    Ok(out)
}
