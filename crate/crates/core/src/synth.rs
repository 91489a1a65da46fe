//! Deterministic synthetic clip + gaze datasets.
//!
//! Every clip shows a moving striped "tool" patch whose stripe orientation
//! encodes the label (vertical = successful, horizontal = unsuccessful),
//! plus distractor patches of identical appearance. The first distractor
//! always carries the opposite orientation and further ones alternate, so
//! frame-wide orientation statistics carry no label information; only the
//! patch under the gaze does. Each patch moves inside its own vertical band
//! of the frame. Gaze follows the tool centre with Gaussian jitter and
//! drops out at the configured rate.
//!
//! Randomness comes from ChaCha8 seeded with the dataset seed: stream 0
//! assigns labels, stream `i + 1` drives clip `i`, so output is independent
//! of thread scheduling.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{self, Clip, ClipRecord, DataError, GazePoint, GazeTrace, Label, GAZE_FILE};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synth config: {0}")]
    Config(String),
    #[error(transparent)]
    Data(#[from] DataError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub clips: usize,
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    /// Fraction of successful clips.
    pub ratio: f64,
    /// Std-dev of gaze jitter around the tool centre, pixels.
    pub gaze_jitter: f64,
    pub missing_rate: f64,
    pub distractors: usize,
    /// Std-dev of additive pixel noise, in intensity levels.
    pub noise: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            clips: 120,
            frames: 24,
            height: 64,
            width: 64,
            ratio: 0.5,
            gaze_jitter: 2.0,
            missing_rate: 0.1,
            distractors: 1,
            noise: 8.0,
            seed: 0,
        }
    }
}

/// Parses a class ratio given as a fraction (`0.5`) or as
/// `successful:unsuccessful` counts (`325:129`).
pub fn parse_ratio(s: &str) -> Result<f64, SynthError> {
    let bad = || SynthError::Config(format!("ratio `{s}` is neither a fraction nor `a:b`"));
    let r = match s.split_once(':') {
        Some((a, b)) => {
            let a: f64 = a.trim().parse().map_err(|_| bad())?;
            let b: f64 = b.trim().parse().map_err(|_| bad())?;
            a / (a + b)
        }
        None => s.trim().parse().map_err(|_| bad())?,
    };
    if !(r > 0.0 && r < 1.0) {
        return Err(SynthError::Config(format!(
            "ratio {r} must lie strictly between 0 and 1"
        )));
    }
    Ok(r)
}

const BACKGROUND: f64 = 40.0;
const STRIPE_BRIGHT: f64 = 220.0;
const STRIPE_DARK: f64 = 30.0;
const STRIPE_PERIOD: usize = 4;

impl SynthConfig {
    fn patch_size(&self) -> usize {
        (self.height.min(self.width) / 4).max(2)
    }

    pub fn successful_count(&self) -> usize {
        (self.clips as f64 * self.ratio).round() as usize
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::Config(m));
        if self.clips < 2 {
            return bad(format!("need at least 2 clips, got {}", self.clips));
        }
        let pos = self.successful_count();
        if pos == 0 || pos == self.clips {
            return bad(format!(
                "ratio {} leaves one class empty with {} clips",
                self.ratio, self.clips
            ));
        }
        if self.frames == 0 {
            return bad("frames must be ≥ 1".into());
        }
        if !(0.0..1.0).contains(&self.missing_rate) {
            return bad(format!("missing rate {} outside [0, 1)", self.missing_rate));
        }
        if self.gaze_jitter < 0.0 || self.noise < 0.0 {
            return bad("jitter and noise must be non-negative".into());
        }
        let band = self.width / (1 + self.distractors);
        if band < self.patch_size() || self.height < self.patch_size() || self.height < 8 {
            return bad(format!(
                "{}×{} frame cannot hold {} patches of {} px",
                self.height,
                self.width,
                1 + self.distractors,
                self.patch_size()
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
struct Patch {
    vertical: bool,
    band_x0: f64,
    band_x1: f64,
    x: f64,
    y: f64,
    vx: f64,
    vy: f64,
}

impl Patch {
    fn step(&mut self, size: f64, height: f64) {
        self.x += self.vx;
        self.y += self.vy;
        let (xmin, xmax) = (self.band_x0, self.band_x1 - size);
        if self.x < xmin || self.x > xmax {
            self.vx = -self.vx;
            self.x = self.x.clamp(xmin, xmax);
        }
        if self.y < 0.0 || self.y > height - size {
            self.vy = -self.vy;
            self.y = self.y.clamp(0.0, height - size);
        }
    }
}

fn render_clip(cfg: &SynthConfig, index: usize, label: Label) -> ClipRecord {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(index as u64 + 1);
    let (h, w) = (cfg.height, cfg.width);
    let size = cfg.patch_size();
    let sizef = size as f64;
    let n_patches = 1 + cfg.distractors;
    let band = w as f64 / n_patches as f64;

    let mut bands: Vec<usize> = (0..n_patches).collect();
    bands.shuffle(&mut rng);
    let tool_vertical = label == Label::Successful;
    let speed = (h as f64 / 32.0).max(0.5);
    let mut patches: Vec<Patch> = bands
        .iter()
        .enumerate()
        .map(|(k, &b)| {
            let vertical = if k == 0 {
                tool_vertical
            } else {
                tool_vertical == (k % 2 == 0)
            };
            let (x0, x1) = (b as f64 * band, (b + 1) as f64 * band);
            Patch {
                vertical,
                band_x0: x0,
                band_x1: x1,
                x: rng.random_range(x0..=(x1 - sizef)),
                y: rng.random_range(0.0..=(h as f64 - sizef)),
                vx: rng.random_range(-speed..=speed) * 0.5,
                vy: rng.random_range(-speed..=speed),
            }
        })
        .collect();

    let noise = Normal::new(0.0, cfg.noise.max(f64::MIN_POSITIVE)).expect("finite noise");
    let jitter = Normal::new(0.0, cfg.gaze_jitter.max(f64::MIN_POSITIVE)).expect("finite jitter");
    let mut pixels = Vec::with_capacity(cfg.frames * h * w);
    let mut points = Vec::with_capacity(cfg.frames);
    let mut frame = vec![0.0f64; h * w];
    for t in 0..cfg.frames {
        frame.fill(BACKGROUND);
        for p in &patches {
            let (px, py) = (p.x.round() as usize, p.y.round() as usize);
            for dy in 0..size {
                for dx in 0..size {
                    let (yy, xx) = (py + dy, px + dx);
                    if yy < h && xx < w {
                        let phase = if p.vertical { dx } else { dy };
                        frame[yy * w + xx] = if phase % STRIPE_PERIOD < STRIPE_PERIOD / 2 {
                            STRIPE_BRIGHT
                        } else {
                            STRIPE_DARK
                        };
                    }
                }
            }
        }
        for v in &frame {
            let n = if cfg.noise > 0.0 { noise.sample(&mut rng) } else { 0.0 };
            pixels.push((v + n).round().clamp(0.0, 255.0) as u8);
        }

        let tool = &patches[0];
        let gx = tool.x.round()
            + sizef / 2.0
            + if cfg.gaze_jitter > 0.0 {
                jitter.sample(&mut rng)
            } else {
                0.0
            };
        let gy = tool.y.round()
            + sizef / 2.0
            + if cfg.gaze_jitter > 0.0 {
                jitter.sample(&mut rng)
            } else {
                0.0
            };
        let drop = rng.random::<f64>() < cfg.missing_rate;
        points.push(if drop {
            GazePoint::missing(t)
        } else {
            // two decimals keep gaze.csv readable
            let q = |v: f64, hi: usize| ((v.clamp(0.0, (hi - 1) as f64)) * 100.0).round() / 100.0;
            GazePoint::present(t, q(gx, w), q(gy, h))
        });

        for p in &mut patches {
            p.step(sizef, h as f64);
        }
    }

    let clip_id = format!("clip_{index:04}");
    ClipRecord {
        clip: Clip {
            clip_id: clip_id.clone(),
            frames: cfg.frames,
            height: h,
            width: w,
            pixels,
            label,
        },
        gaze: GazeTrace { clip_id, points },
    }
}

/// Labels for each clip index, exactly stratified by `cfg.ratio`.
pub fn assign_labels(cfg: &SynthConfig) -> Vec<Label> {
    let pos = cfg.successful_count();
    let mut labels: Vec<Label> = (0..cfg.clips)
        .map(|i| {
            if i < pos {
                Label::Successful
            } else {
                Label::Unsuccessful
            }
        })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(0);
    labels.shuffle(&mut rng);
    labels
}

/// Generates the dataset in memory.
pub fn generate_records(cfg: &SynthConfig) -> Result<Vec<ClipRecord>, SynthError> {
    cfg.validate()?;
    let labels = assign_labels(cfg);
    Ok(labels
        .par_iter()
        .enumerate()
        .map(|(i, &label)| render_clip(cfg, i, label))
        .collect())
}

/// Generates the dataset and writes it in the on-disk layout under `out`.
pub fn generate(cfg: &SynthConfig, out: &Path) -> Result<Vec<ClipRecord>, SynthError> {
    let records = generate_records(cfg)?;
    fs::create_dir_all(out).map_err(|e| DataError::Io {
        path: out.to_path_buf(),
        source: e,
    })?;
    records.par_iter().try_for_each(|rec| -> Result<(), DataError> {
        let dir = out.join(&rec.clip.clip_id);
        data::save_frames(&rec.clip, &dir)?;
        let path = dir.join(GAZE_FILE);
        fs::write(&path, rec.gaze.to_csv()).map_err(|e| DataError::Io { path, source: e })
    })?;
    let labels: Vec<(String, Label)> = records.iter().map(|r| (r.clip.clip_id.clone(), r.clip.label)).collect();
    data::write_labels(out, &labels)?;
    Ok(records)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub clips: usize,
    pub successful: usize,
    pub unsuccessful: usize,
    pub frames: usize,
    pub gaze_missing: usize,
    pub missing_fraction: f64,
}

/// Aggregate counts over a dataset on disk.
pub fn describe(root: &Path) -> Result<DatasetSummary, DataError> {
    let records = data::load_dataset(root)?;
    Ok(summarize(&records))
}

pub fn summarize(records: &[ClipRecord]) -> DatasetSummary {
    let successful = records.iter().filter(|r| r.clip.label == Label::Successful).count();
    let frames: usize = records.iter().map(|r| r.gaze.len()).sum();
    let gaze_missing: usize = records.iter().map(|r| r.gaze.len() - r.gaze.present_count()).sum();
    DatasetSummary {
        clips: records.len(),
        successful,
        unsuccessful: records.len() - successful,
        frames,
        gaze_missing,
        missing_fraction: if frames == 0 {
            0.0
        } else {
            gaze_missing as f64 / frames as f64
        },
    }
}
