//! Confusion-matrix metrics and ranking curves for binary predictions.
//! The positive class is [`Label::Successful`] and the ranking score is the
//! predicted probability of that class.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attention::Prediction;
use crate::data::Label;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("no predictions to evaluate")]
    Empty,
    #[error("{0} needs at least one positive and one negative label")]
    SingleClass(&'static str),
    #[error("precision-recall needs at least one positive label")]
    NoPositives,
    #[error("{scores} scores but {labels} labels")]
    Length { scores: usize, labels: usize },
    #[error("score {0} is not finite")]
    NonFiniteScore(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.tn + self.fp + self.fn_
    }

    pub fn accuracy(&self) -> f64 {
        ratio(self.tp + self.tn, self.total())
    }

    /// True positive rate (recall); 0 without positives.
    pub fn sensitivity(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    /// True negative rate; 0 without negatives.
    pub fn specificity(&self) -> f64 {
        ratio(self.tn, self.tn + self.fp)
    }

    /// 0 when nothing is predicted positive.
    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    /// 0 when precision + recall = 0.
    pub fn f1(&self) -> f64 {
        let (p, r) = (self.precision(), self.sensitivity());
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    }

    /// Matthews correlation; 0 when any row or column of the matrix is empty.
    pub fn mcc(&self) -> f64 {
        let (tp, tn, fp, fn_) = (self.tp as f64, self.tn as f64, self.fp as f64, self.fn_ as f64);
        let marginals = [tp + fp, tp + fn_, tn + fp, tn + fn_];
        if marginals.contains(&0.0) {
            return 0.0;
        }
        (tp * tn - fp * fn_) / marginals.iter().product::<f64>().sqrt()
    }
}

pub fn confusion(preds: &[Prediction]) -> Result<ConfusionCounts, MetricsError> {
    if preds.is_empty() {
        return Err(MetricsError::Empty);
    }
    let mut c = ConfusionCounts::default();
    for p in preds {
        match (p.predicted, p.truth) {
            (Label::Successful, Label::Successful) => c.tp += 1,
            (Label::Unsuccessful, Label::Unsuccessful) => c.tn += 1,
            (Label::Successful, Label::Unsuccessful) => c.fp += 1,
            (Label::Unsuccessful, Label::Successful) => c.fn_ += 1,
        }
    }
    Ok(c)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    pub fpr: Vec<f64>,
    pub tpr: Vec<f64>,
    /// Score threshold of each point (`score ≥ t` is positive); `None` for
    /// the initial point where nothing is positive.
    pub thresholds: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrCurve {
    pub recall: Vec<f64>,
    pub precision: Vec<f64>,
    pub thresholds: Vec<Option<f64>>,
    /// How `pr_auc` is computed from the curve.
    pub area_method: String,
}

pub const PR_AREA_METHOD: &str = "average_precision_step";

fn check_scores(scores: &[f64], labels: &[bool]) -> Result<(), MetricsError> {
    if scores.len() != labels.len() {
        return Err(MetricsError::Length {
            scores: scores.len(),
            labels: labels.len(),
        });
    }
    if let Some(&s) = scores.iter().find(|s| !s.is_finite()) {
        return Err(MetricsError::NonFiniteScore(s));
    }
    Ok(())
}

/// Cumulative `(threshold, tp, fp)` after admitting each group of tied
/// scores, from the highest score down.
fn sweep(scores: &[f64], labels: &[bool]) -> Vec<(f64, u64, u64)> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let (mut tp, mut fp) = (0, 0);
    let mut out = Vec::new();
    for (k, &i) in order.iter().enumerate() {
        if labels[i] {
            tp += 1;
        } else {
            fp += 1;
        }
        let last_of_group = order.get(k + 1).is_none_or(|&j| scores[j] != scores[i]);
        if last_of_group {
            out.push((scores[i], tp, fp));
        }
    }
    out
}

pub fn roc_curve(scores: &[f64], labels: &[bool]) -> Result<RocCurve, MetricsError> {
    check_scores(scores, labels)?;
    let pos = labels.iter().filter(|&&l| l).count() as u64;
    let neg = labels.len() as u64 - pos;
    if pos == 0 || neg == 0 {
        return Err(MetricsError::SingleClass("ROC"));
    }
    let mut curve = RocCurve {
        fpr: vec![0.0],
        tpr: vec![0.0],
        thresholds: vec![None],
    };
    for (t, tp, fp) in sweep(scores, labels) {
        curve.fpr.push(fp as f64 / neg as f64);
        curve.tpr.push(tp as f64 / pos as f64);
        curve.thresholds.push(Some(t));
    }
    Ok(curve)
}

/// Trapezoidal area under the ROC sweep.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<f64, MetricsError> {
    let c = roc_curve(scores, labels)?;
    Ok(trapezoid(&c.fpr, &c.tpr))
}

pub fn trapezoid(x: &[f64], y: &[f64]) -> f64 {
    x.windows(2)
        .zip(y.windows(2))
        .map(|(xs, ys)| (xs[1] - xs[0]) * (ys[0] + ys[1]) / 2.0)
        .sum()
}

pub fn pr_curve(scores: &[f64], labels: &[bool]) -> Result<PrCurve, MetricsError> {
    check_scores(scores, labels)?;
    let pos = labels.iter().filter(|&&l| l).count() as u64;
    if pos == 0 {
        return Err(MetricsError::NoPositives);
    }
    let mut curve = PrCurve {
        recall: vec![0.0],
        precision: vec![1.0],
        thresholds: vec![None],
        area_method: PR_AREA_METHOD.to_string(),
    };
    for (t, tp, fp) in sweep(scores, labels) {
        curve.recall.push(tp as f64 / pos as f64);
        curve.precision.push(tp as f64 / (tp + fp) as f64);
        curve.thresholds.push(Some(t));
    }
    Ok(curve)
}

/// Average precision: `Σ (Rₖ − Rₖ₋₁)·Pₖ` over the threshold sweep.
pub fn pr_auc(scores: &[f64], labels: &[bool]) -> Result<f64, MetricsError> {
    let c = pr_curve(scores, labels)?;
    Ok(average_precision(&c))
}

fn average_precision(c: &PrCurve) -> f64 {
    c.recall
        .windows(2)
        .zip(&c.precision[1..])
        .map(|(r, p)| (r[1] - r[0]) * p)
        .sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Curves {
    pub roc: RocCurve,
    pub pr: PrCurve,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub accuracy: f64,
    pub mcc: f64,
    pub f1: f64,
    pub specificity: f64,
    pub sensitivity: f64,
    pub roc_auc: f64,
    pub pr_auc: f64,
    pub n: usize,
    pub curves: Curves,
}

impl EvalReport {
    /// `(name, value × 100)` in the order reports print them.
    pub fn percentages(&self) -> [(&'static str, f64); 7] {
        [
            ("accuracy", self.accuracy * 100.0),
            ("mcc", self.mcc * 100.0),
            ("f1", self.f1 * 100.0),
            ("specificity", self.specificity * 100.0),
            ("sensitivity", self.sensitivity * 100.0),
            ("roc_auc", self.roc_auc * 100.0),
            ("pr_auc", self.pr_auc * 100.0),
        ]
    }
}

/// Scores each prediction by its successful-class probability.
pub fn scores_and_labels(preds: &[Prediction]) -> (Vec<f64>, Vec<bool>) {
    preds
        .iter()
        .map(|p| (p.probs[Label::Successful.index()], p.truth == Label::Successful))
        .unzip()
}

pub fn evaluate(preds: &[Prediction]) -> Result<EvalReport, MetricsError> {
    let c = confusion(preds)?;
    let (scores, labels) = scores_and_labels(preds);
    let roc = roc_curve(&scores, &labels)?;
    let pr = pr_curve(&scores, &labels)?;
    Ok(EvalReport {
        accuracy: c.accuracy(),
        mcc: c.mcc(),
        f1: c.f1(),
        specificity: c.specificity(),
        sensitivity: c.sensitivity(),
        roc_auc: trapezoid(&roc.fpr, &roc.tpr),
        pr_auc: average_precision(&pr),
        n: preds.len(),
        curves: Curves { roc, pr },
    })
}

/// Renders a curve in the unit square as a standalone SVG document.
pub fn curve_svg(title: &str, x_label: &str, y_label: &str, x: &[f64], y: &[f64], diagonal: bool) -> String {
    const SIZE: f64 = 360.0;
    const MARGIN: f64 = 50.0;
    let px = |v: f64| MARGIN + v * SIZE;
    let py = |v: f64| MARGIN + (1.0 - v) * SIZE;
    let total = SIZE + 2.0 * MARGIN;
    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{total}\" height=\"{total}\" viewBox=\"0 0 {total} {total}\">\n"
    );
    s.push_str(&format!(
        "<rect width=\"{total}\" height=\"{total}\" fill=\"white\"/>\n"
    ));
    s.push_str(&format!(
        "<rect x=\"{MARGIN}\" y=\"{MARGIN}\" width=\"{SIZE}\" height=\"{SIZE}\" fill=\"none\" stroke=\"black\"/>\n"
    ));
    for i in 0..=4 {
        let v = i as f64 / 4.0;
        s.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{:.1}\" font-size=\"11\" text-anchor=\"middle\">{v:.2}</text>\n",
            px(v),
            MARGIN + SIZE + 16.0
        ));
        s.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{:.1}\" font-size=\"11\" text-anchor=\"end\">{v:.2}</text>\n",
            MARGIN - 6.0,
            py(v) + 4.0
        ));
    }
    if diagonal {
        s.push_str(&format!(
            "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"gray\" stroke-dasharray=\"4 4\"/>\n",
            px(0.0),
            py(0.0),
            px(1.0),
            py(1.0)
        ));
    }
    let points: Vec<String> = x
        .iter()
        .zip(y)
        .map(|(a, b)| format!("{:.2},{:.2}", px(*a), py(*b)))
        .collect();
    s.push_str(&format!(
        "<polyline points=\"{}\" fill=\"none\" stroke=\"#1f5fbf\" stroke-width=\"2\"/>\n",
        points.join(" ")
    ));
    s.push_str(&format!(
        "<text x=\"{:.1}\" y=\"28\" font-size=\"14\" text-anchor=\"middle\">{}</text>\n",
        total / 2.0,
        escape(title)
    ));
    s.push_str(&format!(
        "<text x=\"{:.1}\" y=\"{:.1}\" font-size=\"12\" text-anchor=\"middle\">{}</text>\n",
        total / 2.0,
        total - 8.0,
        escape(x_label)
    ));
    s.push_str(&format!(
        "<text x=\"14\" y=\"{:.1}\" font-size=\"12\" text-anchor=\"middle\" transform=\"rotate(-90 14 {:.1})\">{}</text>\n",
        total / 2.0,
        total / 2.0,
        escape(y_label)
    ));
    s.push_str("</svg>\n");
    s
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
