//! Squeeze-and-excitation attention over per-frame feature sequences,
//! optional fusion with gaze-mask features, and the binary outcome head.
//!
//! Video path: `conv1d → SE gating → (⊙ mask path) → time average → dense
//! → softmax`. The mask path is a conv1d of the same shape. With
//! `use_gaze = false` (M1) the fusion step is skipped entirely.

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autoencoder::{encode_frames, shuffle, AeError, Autoencoder};
use crate::data::{Checkpoint, ClipRecord, DataError, Entry, Label};
use crate::engine::{he_normal, Adam, Graph, ParamSet, Tensor, TensorError, Var};
use crate::mask::{build_clip_masks, MaskConfig, MaskError};

pub const NUM_CLASSES: usize = 2;
/// Shortest clip the temporal convolution accepts.
pub const MIN_FRAMES: usize = 3;

#[derive(Debug, Error)]
pub enum ClassifierError {
    #[error("invalid classifier config: {0}")]
    Config(String),
    #[error("clip {clip_id}: {msg}")]
    Features { clip_id: String, msg: String },
    #[error("gaze model needs mask features for clip {0}")]
    MissingMask(String),
    #[error("{split} split contains only class {class}")]
    SingleClass { split: &'static str, class: usize },
    #[error("non-finite loss at epoch {epoch} on clip {clip_id}")]
    NonFinite { epoch: usize, clip_id: String },
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Autoencoder(#[from] AeError),
    #[error(transparent)]
    Mask(#[from] MaskError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierConfig {
    pub se_reduction: usize,
    pub epochs: usize,
    pub lr: f64,
    pub use_gaze: bool,
    /// Fraction of each class held out for testing.
    pub test_fraction: f64,
    pub seed: u64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            se_reduction: 4,
            epochs: 50,
            lr: 0.002,
            use_gaze: false,
            test_fraction: 0.2,
            seed: 0,
        }
    }
}

impl ClassifierConfig {
    pub fn validate(&self, channels: usize) -> Result<(), ClassifierError> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(ClassifierError::Config(format!("lr {} must be positive", self.lr)));
        }
        if self.se_reduction == 0 || !channels.is_multiple_of(self.se_reduction) || channels < self.se_reduction {
            return Err(ClassifierError::Config(format!(
                "SE reduction {} must divide the channel count {channels}",
                self.se_reduction
            )));
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(ClassifierError::Config(format!(
                "test fraction {} outside (0, 1)",
                self.test_fraction
            )));
        }
        Ok(())
    }
}

/// Encoder features of one clip, each `channels × T`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClipFeatures {
    pub clip_id: String,
    pub label: Label,
    pub video: Tensor,
    pub mask: Option<Tensor>,
}

impl ClipFeatures {
    fn check(&self, channels: usize, use_gaze: bool) -> Result<(), ClassifierError> {
        let bad = |msg: String| ClassifierError::Features {
            clip_id: self.clip_id.clone(),
            msg,
        };
        let s = self.video.shape();
        if s.len() != 2 || s[0] != channels {
            return Err(bad(format!("video features {s:?} are not {channels}×T")));
        }
        if s[1] < MIN_FRAMES {
            return Err(bad(format!("{} frames, need at least {MIN_FRAMES}", s[1])));
        }
        if use_gaze {
            let m = self
                .mask
                .as_ref()
                .ok_or_else(|| ClassifierError::MissingMask(self.clip_id.clone()))?;
            if m.shape() != s {
                return Err(bad(format!(
                    "mask features {:?} differ from video features {s:?}",
                    m.shape()
                )));
            }
        }
        Ok(())
    }
}

/// Encodes frames (and, when `masks` is given, gaze masks built with it)
/// of every clip with the frozen encoder.
pub fn extract_features(
    records: &[ClipRecord],
    ae: &Autoencoder,
    masks: Option<(&MaskConfig, bool)>,
) -> Result<Vec<ClipFeatures>, ClassifierError> {
    records
        .iter()
        .map(|r| {
            let frames: Vec<_> = (0..r.clip.frames).map(|t| r.clip.frame_image(t)).collect();
            let video = encode_frames(ae, &frames)?;
            let mask = match masks {
                Some((cfg, interpolate)) => {
                    let vm = build_clip_masks(&r.gaze, cfg, r.clip.height, r.clip.width, interpolate)?;
                    let images: Vec<_> = vm.into_iter().map(|m| m.quantized).collect();
                    Some(encode_frames(ae, &images)?)
                }
                None => None,
            };
            Ok(ClipFeatures {
                clip_id: r.clip.clip_id.clone(),
                label: r.clip.label,
                video,
                mask,
            })
        })
        .collect()
}

/// Parameter layout; video-path tensors come first so M1 and M2 share
/// their initial values for a given seed.
const VIDEO_CONV: usize = 0;
const SE_FC1_W: usize = 1;
const SE_FC1_B: usize = 2;
const SE_FC2_W: usize = 3;
const SE_FC2_B: usize = 4;
const HEAD_W: usize = 5;
const HEAD_B: usize = 6;
const MASK_CONV: usize = 7;
const KERNEL: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionClassifier {
    channels: usize,
    use_gaze: bool,
    params: ParamSet,
}

impl AttentionClassifier {
    pub fn init<R: Rng + ?Sized>(
        channels: usize,
        reduction: usize,
        use_gaze: bool,
        rng: &mut R,
    ) -> Result<Self, ClassifierError> {
        if reduction == 0 || !channels.is_multiple_of(reduction) || channels < reduction {
            return Err(ClassifierError::Config(format!(
                "SE reduction {reduction} must divide the channel count {channels}"
            )));
        }
        let hidden = channels / reduction;
        let mut p = ParamSet::new();
        p.push(
            "video.conv.w",
            he_normal(&[channels, channels, KERNEL], channels * KERNEL, rng),
        );
        p.push("se.fc1.w", he_normal(&[hidden, channels], channels, rng));
        p.push("se.fc1.b", Tensor::zeros(&[hidden]));
        p.push("se.fc2.w", he_normal(&[channels, hidden], hidden, rng));
        p.push("se.fc2.b", Tensor::zeros(&[channels]));
        p.push("head.w", he_normal(&[NUM_CLASSES, channels], channels, rng));
        p.push("head.b", Tensor::zeros(&[NUM_CLASSES]));
        if use_gaze {
            p.push(
                "mask.conv.w",
                he_normal(&[channels, channels, KERNEL], channels * KERNEL, rng),
            );
        }
        Ok(Self {
            channels,
            use_gaze,
            params: p,
        })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn use_gaze(&self) -> bool {
        self.use_gaze
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    /// Logits `1×2` for one clip. `video`/`mask` are `1×C×T`.
    pub fn logits_with(&self, g: &mut Graph, p: &[Var], video: Var, mask: Option<Var>) -> Result<Var, ClassifierError> {
        let u = se_block(
            g,
            video,
            p[VIDEO_CONV],
            [p[SE_FC1_W], p[SE_FC1_B], p[SE_FC2_W], p[SE_FC2_B]],
        )?;
        let h = if self.use_gaze {
            let m = mask.ok_or_else(|| ClassifierError::MissingMask(String::new()))?;
            let m = g.conv1d(m, p[MASK_CONV], 1, 1)?;
            fuse(g, u, m)?
        } else {
            u
        };
        let pooled = g.global_avg_pool(h)?;
        let logits = g.linear(pooled, p[HEAD_W])?;
        Ok(g.add_bias(logits, p[HEAD_B])?)
    }

    fn inputs(&self, g: &mut Graph, clip: &ClipFeatures) -> Result<(Var, Option<Var>), ClassifierError> {
        clip.check(self.channels, self.use_gaze)?;
        let t = clip.video.shape()[1];
        let video = g.constant(clip.video.clone().reshape(&[1, self.channels, t])?);
        let mask = match (&clip.mask, self.use_gaze) {
            (Some(m), true) => Some(g.constant(m.clone().reshape(&[1, self.channels, t])?)),
            _ => None,
        };
        Ok((video, mask))
    }

    pub fn classify(&self, clip: &ClipFeatures) -> Result<Prediction, ClassifierError> {
        let mut g = Graph::new();
        let p = self.params.bind(&mut g, false);
        let (video, mask) = self.inputs(&mut g, clip)?;
        let logits = self.logits_with(&mut g, &p, video, mask)?;
        let probs = g.softmax(logits)?;
        let d = g.value(probs).data();
        Ok(Prediction::new(clip.clip_id.clone(), [d[0], d[1]], clip.label))
    }

    pub fn write_to(&self, ck: &mut Checkpoint) {
        ck.push(Entry::f64(
            "cls.meta.use_gaze",
            &Tensor::scalar(if self.use_gaze { 1.0 } else { 0.0 }),
        ));
        self.params.write_to(ck, "cls.");
    }

    pub fn read_from(ck: &Checkpoint) -> Result<Self, ClassifierError> {
        let use_gaze = ck.tensor("cls.meta.use_gaze")?.item() != 0.0;
        let fc1 = ck.tensor("cls.se.fc1.w")?;
        let (hidden, channels) = (fc1.shape()[0], fc1.shape()[1]);
        if hidden == 0 || channels % hidden != 0 {
            return Err(DataError::Checkpoint(format!("SE bottleneck {hidden} does not divide {channels}")).into());
        }
        let template = Self::init(channels, channels / hidden, use_gaze, &mut ChaCha8Rng::seed_from_u64(0))?;
        let params = ParamSet::read_from(ck, "cls.", template.params.names())?;
        for (a, b) in params.tensors().iter().zip(template.params.tensors()) {
            if a.shape() != b.shape() {
                return Err(DataError::Checkpoint(format!(
                    "classifier tensor shape {:?} does not fit (expected {:?})",
                    a.shape(),
                    b.shape()
                ))
                .into());
            }
        }
        Ok(Self {
            channels,
            use_gaze,
            params,
        })
    }
}

/// Temporal convolution (no bias) followed by squeeze-and-excitation
/// channel gating. `x` is `N×C′×L`; `se` holds `[fc1.w, fc1.b, fc2.w, fc2.b]`.
pub fn se_block(g: &mut Graph, x: Var, conv_w: Var, se: [Var; 4]) -> Result<Var, TensorError> {
    let u = g.conv1d(x, conv_w, 1, 1)?;
    let gate = se_gate(g, u, se)?;
    g.scale_channels(u, gate)
}

/// Channel gates `N×C` in (0, 1) computed from the time average of `u`.
pub fn se_gate(g: &mut Graph, u: Var, se: [Var; 4]) -> Result<Var, TensorError> {
    let s = g.global_avg_pool(u)?;
    let e = g.linear(s, se[0])?;
    let e = g.add_bias(e, se[1])?;
    let e = g.relu(e);
    let e = g.linear(e, se[2])?;
    let e = g.add_bias(e, se[3])?;
    Ok(g.sigmoid(e))
}

/// Element-wise product of video and mask features.
pub fn fuse(g: &mut Graph, u: Var, m: Var) -> Result<Var, TensorError> {
    g.mul(u, m)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub clip_id: String,
    pub probs: [f64; 2],
    pub predicted: Label,
    pub truth: Label,
}

impl Prediction {
    /// Predicted label is the arg-max class; ties go to class 0.
    pub fn new(clip_id: String, probs: [f64; 2], truth: Label) -> Self {
        let predicted = if probs[1] > probs[0] {
            Label::Successful
        } else {
            Label::Unsuccessful
        };
        Self {
            clip_id,
            probs,
            predicted,
            truth,
        }
    }

    /// Probability of the predicted label.
    pub fn confidence(&self) -> f64 {
        self.probs[self.predicted.index()]
    }

    pub fn correct(&self) -> bool {
        self.predicted == self.truth
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct PredictionRow {
    clip_id: String,
    #[serde(rename = "true")]
    truth: usize,
    pred: usize,
    p0: f64,
    p1: f64,
}

/// Writes `clip_id,true,pred,p0,p1` rows.
pub fn write_predictions(path: &Path, preds: &[Prediction]) -> Result<(), DataError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| DataError::Layout(format!("{}: {e}", path.display())))?;
    for p in preds {
        w.serialize(PredictionRow {
            clip_id: p.clip_id.clone(),
            truth: p.truth.index(),
            pred: p.predicted.index(),
            p0: p.probs[0],
            p1: p.probs[1],
        })
        .map_err(|e| DataError::Layout(format!("{}: {e}", path.display())))?;
    }
    w.flush().map_err(|e| DataError::io(path, e))
}

pub fn read_predictions(path: &Path) -> Result<Vec<Prediction>, DataError> {
    let mut r = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| DataError::Layout(format!("{}: {e}", path.display())))?;
    let headers = r
        .headers()
        .map_err(|e| DataError::Layout(format!("{}: {e}", path.display())))?;
    if headers != vec!["clip_id", "true", "pred", "p0", "p1"] {
        return Err(DataError::parse(1, "header must be `clip_id,true,pred,p0,p1`").in_file(path));
    }
    let mut out = Vec::new();
    for row in r.deserialize::<PredictionRow>() {
        let row = row.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            DataError::parse(line, e.to_string()).in_file(path)
        })?;
        let line = out.len() + 2;
        let label = |v: usize| {
            Label::from_index(v).ok_or_else(|| DataError::parse(line, format!("label {v} is not 0 or 1")).in_file(path))
        };
        let (truth, predicted) = (label(row.truth)?, label(row.pred)?);
        let probs = [row.p0, row.p1];
        if probs.iter().any(|p| !(0.0..=1.0).contains(p)) || (row.p0 + row.p1 - 1.0).abs() > 1e-6 {
            return Err(
                DataError::parse(line, format!("probabilities {probs:?} do not form a distribution")).in_file(path),
            );
        }
        out.push(Prediction {
            clip_id: row.clip_id,
            probs,
            predicted,
            truth,
        });
    }
    Ok(out)
}

/// Train/test partition by clip index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Stratified split: within each class, a seeded shuffle sends
/// `round(n_class · test_fraction)` clips to the test side.
pub fn stratified_split(labels: &[Label], test_fraction: f64, seed: u64) -> Result<Split, ClassifierError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, l) in labels.iter().enumerate() {
        by_class.entry(l.index()).or_default().push(i);
    }
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for idx in by_class.values_mut() {
        shuffle(idx, &mut rng);
        let k = (idx.len() as f64 * test_fraction).round() as usize;
        test.extend_from_slice(&idx[..k]);
        train.extend_from_slice(&idx[k..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    for (name, part) in [("train", &train), ("test", &test)] {
        let first = part.first().map(|&i| labels[i].index());
        match first {
            None => return Err(ClassifierError::Config(format!("{name} split is empty"))),
            Some(c) if part.iter().all(|&i| labels[i].index() == c) => {
                return Err(ClassifierError::SingleClass { split: name, class: c })
            }
            _ => {}
        }
    }
    Ok(Split { train, test })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierHistory {
    /// Mean training cross-entropy before the first update.
    pub initial_loss: f64,
    /// Mean per-clip training loss of each epoch.
    pub epoch_losses: Vec<f64>,
    /// Mean training cross-entropy after the last update.
    pub final_loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedClassifier {
    pub model: AttentionClassifier,
    pub history: ClassifierHistory,
    pub split: Split,
    /// Test-split predictions ordered by clip id.
    pub predictions: Vec<Prediction>,
}

fn clip_loss(
    model: &AttentionClassifier,
    g: &mut Graph,
    p: &[Var],
    clip: &ClipFeatures,
) -> Result<Var, ClassifierError> {
    let (video, mask) = model.inputs(g, clip)?;
    let logits = model.logits_with(g, p, video, mask)?;
    Ok(g.softmax_cross_entropy(logits, &[clip.label.index()])?)
}

fn mean_loss(model: &AttentionClassifier, clips: &[&ClipFeatures]) -> Result<f64, ClassifierError> {
    let mut total = 0.0;
    for c in clips {
        let mut g = Graph::new();
        let p = model.params.bind(&mut g, false);
        let l = clip_loss(model, &mut g, &p, c)?;
        total += g.value(l).item();
    }
    Ok(total / clips.len() as f64)
}

/// Trains on the stratified train split with unit batches and predicts the
/// held-out clips.
pub fn train_classifier(
    features: &[ClipFeatures],
    cfg: &ClassifierConfig,
) -> Result<TrainedClassifier, ClassifierError> {
    let first = features
        .first()
        .ok_or_else(|| ClassifierError::Config("no clips to train on".into()))?;
    let channels = first.video.shape()[0];
    cfg.validate(channels)?;
    for f in features {
        f.check(channels, cfg.use_gaze)?;
    }
    let labels: Vec<Label> = features.iter().map(|f| f.label).collect();
    let split = stratified_split(&labels, cfg.test_fraction, cfg.seed)?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = AttentionClassifier::init(channels, cfg.se_reduction, cfg.use_gaze, &mut rng)?;
    let train: Vec<&ClipFeatures> = split.train.iter().map(|&i| &features[i]).collect();
    let initial_loss = mean_loss(&model, &train)?;

    let mut adam = Adam::new(cfg.lr, model.params.tensors());
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        shuffle(&mut order, &mut rng);
        let mut sum = 0.0;
        for &i in &order {
            let clip = train[i];
            let mut g = Graph::new();
            let p = model.params.bind(&mut g, true);
            let loss = clip_loss(&model, &mut g, &p, clip)?;
            let value = g.value(loss).item();
            if !value.is_finite() {
                return Err(ClassifierError::NonFinite {
                    epoch,
                    clip_id: clip.clip_id.clone(),
                });
            }
            sum += value;
            let mut grads = g.backward(loss)?;
            let grads: Vec<Tensor> = p
                .iter()
                .zip(model.params.tensors())
                .map(|(&v, t)| grads.take_or_zeros(v, t.shape()))
                .collect();
            adam.step(model.params.tensors_mut(), &grads)?;
        }
        epoch_losses.push(sum / train.len() as f64);
    }
    let final_loss = mean_loss(&model, &train)?;

    let mut predictions = split
        .test
        .iter()
        .map(|&i| model.classify(&features[i]))
        .collect::<Result<Vec<_>, _>>()?;
    predictions.sort_by(|a, b| a.clip_id.cmp(&b.clip_id));
    Ok(TrainedClassifier {
        model,
        history: ClassifierHistory {
            initial_loss,
            epoch_losses,
            final_loss,
        },
        split,
        predictions,
    })
}
