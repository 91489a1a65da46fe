//! Question-answer trust, per-class trust spectrum, NetTrustScore, and
//! kernel density estimates of per-class trust.
//!
//! Every prediction contributes `C^α` when it matches its ground truth and
//! `(1 − C)^β` otherwise, with `C` the softmax probability of the predicted
//! label. The spectrum of class `z` averages these over samples whose
//! ground truth is `z`; NetTrustScore weights the spectra by class priors.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attention::{Prediction, NUM_CLASSES};
use crate::data::Label;

/// Scores above this are flagged as high trust in reports.
pub const HIGH_TRUST_THRESHOLD: f64 = 0.8;

#[derive(Debug, Error, PartialEq)]
pub enum TrustError {
    #[error("invalid trust config: {0}")]
    Config(String),
    #[error("no samples with ground truth class {0}")]
    EmptyClass(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrustConfig {
    /// Reward exponent for correct predictions.
    pub alpha: f64,
    /// Penalty exponent for incorrect predictions.
    pub beta: f64,
    /// Number of evenly spaced density evaluation points on [0, 1].
    pub grid: usize,
    /// Weight classes equally instead of by empirical frequency.
    pub uniform_prior: bool,
}

impl Default for TrustConfig {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 1.0,
            grid: 256,
            uniform_prior: false,
        }
    }
}

impl TrustConfig {
    pub fn validate(&self) -> Result<(), TrustError> {
        if !(self.alpha > 0.0 && self.beta > 0.0 && self.alpha.is_finite() && self.beta.is_finite()) {
            return Err(TrustError::Config(format!(
                "exponents must be positive (alpha {}, beta {})",
                self.alpha, self.beta
            )));
        }
        if self.grid < 2 {
            return Err(TrustError::Config(format!(
                "density grid {} needs ≥ 2 points",
                self.grid
            )));
        }
        Ok(())
    }
}

/// Trust in one answer given ground truth `z`.
pub fn question_answer_trust(pred: &Prediction, z: Label, cfg: &TrustConfig) -> f64 {
    let c = pred.confidence();
    if pred.predicted == z {
        c.powf(cfg.alpha)
    } else {
        (1.0 - c).powf(cfg.beta)
    }
}

/// Trust values of all samples whose ground truth is `z`.
pub fn class_trust(preds: &[Prediction], z: Label, cfg: &TrustConfig) -> Vec<f64> {
    preds
        .iter()
        .filter(|p| p.truth == z)
        .map(|p| question_answer_trust(p, z, cfg))
        .collect()
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Mean question-answer trust over the samples of class `z`.
pub fn trust_spectrum(preds: &[Prediction], z: Label, cfg: &TrustConfig) -> Result<f64, TrustError> {
    let q = class_trust(preds, z, cfg);
    if q.is_empty() {
        return Err(TrustError::EmptyClass(z.index()));
    }
    Ok(mean(&q))
}

fn classes() -> [Label; NUM_CLASSES] {
    [Label::Unsuccessful, Label::Successful]
}

/// Class weights: empirical ground-truth frequency, or uniform.
pub fn class_priors(preds: &[Prediction], cfg: &TrustConfig) -> Result<[f64; NUM_CLASSES], TrustError> {
    let mut counts = [0usize; NUM_CLASSES];
    for p in preds {
        counts[p.truth.index()] += 1;
    }
    if let Some(z) = counts.iter().position(|&n| n == 0) {
        return Err(TrustError::EmptyClass(z));
    }
    Ok(if cfg.uniform_prior {
        [1.0 / NUM_CLASSES as f64; NUM_CLASSES]
    } else {
        counts.map(|n| n as f64 / preds.len() as f64)
    })
}

/// `Σ_z P(z)·T(z)`. With empirical priors this is the overall mean of the
/// question-answer trust, summed in one pass so a perfect model scores 1
/// exactly.
pub fn net_trust_score(preds: &[Prediction], cfg: &TrustConfig) -> Result<f64, TrustError> {
    cfg.validate()?;
    let priors = class_priors(preds, cfg)?;
    if cfg.uniform_prior {
        let mut nts = 0.0;
        for (z, p) in classes().into_iter().zip(priors) {
            nts += p * trust_spectrum(preds, z, cfg)?;
        }
        Ok(nts)
    } else {
        let total: f64 = classes().into_iter().flat_map(|z| class_trust(preds, z, cfg)).sum();
        Ok(total / preds.len() as f64)
    }
}

/// Evenly spaced evaluation points on [0, 1].
pub fn density_grid(points: usize) -> Vec<f64> {
    (0..points).map(|i| i as f64 / (points - 1) as f64).collect()
}

/// Linear-interpolated sample quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Silverman's rule `0.9·min(sd, IQR/1.34)·n^(−1/5)`; `fallback` when the
/// sample has no spread (a single value or all values equal).
pub fn silverman_bandwidth(values: &[f64], fallback: f64) -> f64 {
    let n = values.len();
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    if n < 2 || sorted[0] == sorted[n - 1] {
        return fallback;
    }
    let m = mean(values);
    let sd = (values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
    let iqr = (quantile(&sorted, 0.75) - quantile(&sorted, 0.25)) / 1.34;
    let spread = match (sd > 0.0, iqr > 0.0) {
        (true, true) => sd.min(iqr),
        (true, false) => sd,
        _ => iqr,
    };
    0.9 * spread * (n as f64).powf(-0.2)
}

/// Gaussian KDE of `values` on the [`density_grid`], rescaled so its
/// trapezoidal integral over [0, 1] is 1.
pub fn kde_on_grid(values: &[f64], points: usize) -> Vec<f64> {
    let grid = density_grid(points);
    let spacing = 1.0 / (points - 1) as f64;
    let h = silverman_bandwidth(values, spacing);
    let norm = 1.0 / (values.len() as f64 * h * (2.0 * std::f64::consts::PI).sqrt());
    let mut density: Vec<f64> = grid
        .iter()
        .map(|&x| {
            norm * values
                .iter()
                .map(|&v| (-0.5 * ((x - v) / h).powi(2)).exp())
                .sum::<f64>()
        })
        .collect();
    let area = crate::metrics::trapezoid(&grid, &density);
    if area > 0.0 {
        density.iter_mut().for_each(|d| *d /= area);
    }
    density
}

/// Density of class-`z` question-answer trust on the configured grid.
pub fn trust_density(preds: &[Prediction], z: Label, cfg: &TrustConfig) -> Result<Vec<f64>, TrustError> {
    cfg.validate()?;
    let q = class_trust(preds, z, cfg);
    if q.is_empty() {
        return Err(TrustError::EmptyClass(z.index()));
    }
    Ok(kde_on_grid(&q, cfg.grid))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassTrust {
    /// Trust spectrum of the class.
    pub qz_mean: f64,
    pub n: usize,
    pub density_grid: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrustReport {
    /// Keyed by class index ("0" unsuccessful, "1" successful).
    pub per_class: BTreeMap<String, ClassTrust>,
    pub nts: f64,
    pub priors: BTreeMap<String, f64>,
    pub high_trust: bool,
}

pub fn trust_report(preds: &[Prediction], cfg: &TrustConfig) -> Result<TrustReport, TrustError> {
    cfg.validate()?;
    let priors = class_priors(preds, cfg)?;
    let mut per_class = BTreeMap::new();
    for z in classes() {
        let q = class_trust(preds, z, cfg);
        per_class.insert(
            z.index().to_string(),
            ClassTrust {
                qz_mean: mean(&q),
                n: q.len(),
                density_grid: kde_on_grid(&q, cfg.grid),
            },
        );
    }
    let nts = net_trust_score(preds, cfg)?;
    Ok(TrustReport {
        per_class,
        nts,
        priors: classes()
            .into_iter()
            .zip(priors)
            .map(|(z, p)| (z.index().to_string(), p))
            .collect(),
        high_trust: nts > HIGH_TRUST_THRESHOLD,
    })
}

impl TrustReport {
    /// `q,density_0,density_1` rows over the grid.
    pub fn density_csv(&self) -> String {
        let cols: Vec<&ClassTrust> = self.per_class.values().collect();
        let points = cols.first().map_or(0, |c| c.density_grid.len());
        let mut s = String::from("q");
        for k in self.per_class.keys() {
            s.push_str(&format!(",density_{k}"));
        }
        s.push('\n');
        for (i, x) in density_grid(points.max(2)).iter().enumerate().take(points) {
            s.push_str(&x.to_string());
            for c in &cols {
                s.push_str(&format!(",{}", c.density_grid[i]));
            }
            s.push('\n');
        }
        s
    }
}
