//! Convolutional autoencoder trained with pixel + perceptual loss, and the
//! frozen-encoder feature extractor used for both video frames and masks.
//!
//! Encoder: three stride-2 3×3 conv + ReLU blocks, then a dense latent.
//! Decoder: dense back to the smallest feature map, then three blocks of
//! nearest-neighbour ×2 upsampling + 3×3 conv, ending in a sigmoid.
//! The perceptual term compares activations of a small frozen conv net.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{Checkpoint, ClipRecord, DataError, Entry, GrayImage};
use crate::engine::{he_normal, Adam, Conv2dSpec, Graph, ParamSet, Tensor, TensorError, Var};

#[derive(Debug, Error)]
pub enum AeError {
    #[error("invalid autoencoder config: {0}")]
    Config(String),
    #[error("no frames to train on")]
    EmptyDataset,
    #[error("input {got:?} does not match the model input {expected:?}")]
    InputShape {
        expected: (usize, usize),
        got: (usize, usize),
    },
    #[error("perceptual layer {0} does not exist (valid: 1..=3)")]
    Layer(usize),
    #[error("non-finite loss at epoch {epoch}, batch {batch} (mse {mse}, perceptual {perceptual})")]
    NonFinite {
        epoch: usize,
        batch: usize,
        mse: f64,
        perceptual: f64,
    },
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Data(#[from] DataError),
}

/// Autoencoder architecture.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AeArch {
    pub height: usize,
    pub width: usize,
    /// Output channels of the three encoder blocks.
    pub channels: [usize; 3],
    pub latent_dim: usize,
}

impl AeArch {
    pub fn new(height: usize, width: usize, latent_dim: usize) -> Self {
        Self {
            height,
            width,
            channels: [8, 16, 32],
            latent_dim,
        }
    }

    fn bottleneck(&self) -> (usize, usize) {
        (self.height / 8, self.width / 8)
    }

    fn flat(&self) -> usize {
        let (h, w) = self.bottleneck();
        self.channels[2] * h * w
    }

    pub fn validate(&self) -> Result<(), AeError> {
        if self.latent_dim == 0 {
            return Err(AeError::Config("latent_dim must be ≥ 1".into()));
        }
        if !self.height.is_multiple_of(8) || !self.width.is_multiple_of(8) || self.height == 0 || self.width == 0 {
            return Err(AeError::Config(format!(
                "input {}×{} must be a positive multiple of 8 on both axes",
                self.height, self.width
            )));
        }
        if self.channels.contains(&0) {
            return Err(AeError::Config("channel counts must be ≥ 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AeConfig {
    pub latent_dim: usize,
    pub channels: [usize; 3],
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub dropout: f64,
    /// 1-based layer of the perceptual network compared by the loss.
    pub perceptual_layer: usize,
    /// Train on every `frame_stride`-th frame of each clip.
    pub frame_stride: usize,
    pub seed: u64,
}

impl Default for AeConfig {
    fn default() -> Self {
        Self {
            latent_dim: 64,
            channels: [8, 16, 32],
            epochs: 30,
            batch: 32,
            lr: 0.001,
            dropout: 0.5,
            perceptual_layer: 2,
            frame_stride: 1,
            seed: 0,
        }
    }
}

impl AeConfig {
    pub fn validate(&self) -> Result<(), AeError> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(AeError::Config(format!("lr {} must be positive", self.lr)));
        }
        if self.batch == 0 || self.frame_stride == 0 {
            return Err(AeError::Config("batch and frame_stride must be ≥ 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(AeError::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if !(1..=3).contains(&self.perceptual_layer) {
            return Err(AeError::Layer(self.perceptual_layer));
        }
        Ok(())
    }
}

const CONV3: usize = 3;

fn conv_block(g: &mut Graph, x: Var, w: Var, b: Var, stride: usize) -> Result<Var, TensorError> {
    let y = g.conv2d(x, w, Conv2dSpec::new(stride, 1))?;
    let y = g.add_bias(y, b)?;
    Ok(g.relu(y))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Autoencoder {
    arch: AeArch,
    params: ParamSet,
}

impl Autoencoder {
    pub fn init<R: Rng + ?Sized>(arch: AeArch, rng: &mut R) -> Result<Self, AeError> {
        arch.validate()?;
        let [c1, c2, c3] = arch.channels;
        let mut p = ParamSet::new();
        let conv = |p: &mut ParamSet, name: &str, cin: usize, cout: usize, rng: &mut R| {
            p.push(
                format!("{name}.w"),
                he_normal(&[cout, cin, CONV3, CONV3], cin * CONV3 * CONV3, rng),
            );
            p.push(format!("{name}.b"), Tensor::zeros(&[cout]));
        };
        conv(&mut p, "enc.conv1", 1, c1, rng);
        conv(&mut p, "enc.conv2", c1, c2, rng);
        conv(&mut p, "enc.conv3", c2, c3, rng);
        let flat = arch.flat();
        p.push("enc.fc.w", he_normal(&[arch.latent_dim, flat], flat, rng));
        p.push("enc.fc.b", Tensor::zeros(&[arch.latent_dim]));
        p.push("dec.fc.w", he_normal(&[flat, arch.latent_dim], arch.latent_dim, rng));
        p.push("dec.fc.b", Tensor::zeros(&[flat]));
        conv(&mut p, "dec.conv1", c3, c2, rng);
        conv(&mut p, "dec.conv2", c2, c1, rng);
        conv(&mut p, "dec.conv3", c1, 1, rng);
        Ok(Self { arch, params: p })
    }

    pub fn arch(&self) -> &AeArch {
        &self.arch
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    /// Latent codes for `x: N×1×H×W` given bound parameters.
    pub fn encode_with(&self, g: &mut Graph, p: &[Var], x: Var) -> Result<Var, TensorError> {
        let n = g.shape(x)[0];
        let h = conv_block(g, x, p[0], p[1], 2)?;
        let h = conv_block(g, h, p[2], p[3], 2)?;
        let h = conv_block(g, h, p[4], p[5], 2)?;
        let h = g.reshape(h, &[n, self.arch.flat()])?;
        let z = g.linear(h, p[6])?;
        g.add_bias(z, p[7])
    }

    /// Reconstruction `N×1×H×W` in (0, 1) from latent codes.
    pub fn decode_with(&self, g: &mut Graph, p: &[Var], z: Var) -> Result<Var, TensorError> {
        let n = g.shape(z)[0];
        let (bh, bw) = self.arch.bottleneck();
        let h = g.linear(z, p[8])?;
        let h = g.add_bias(h, p[9])?;
        let h = g.relu(h);
        let h = g.reshape(h, &[n, self.arch.channels[2], bh, bw])?;
        let h = g.upsample_nearest(h, 2)?;
        let h = conv_block(g, h, p[10], p[11], 1)?;
        let h = g.upsample_nearest(h, 2)?;
        let h = conv_block(g, h, p[12], p[13], 1)?;
        let h = g.upsample_nearest(h, 2)?;
        let y = g.conv2d(h, p[14], Conv2dSpec::new(1, 1))?;
        let y = g.add_bias(y, p[15])?;
        Ok(g.sigmoid(y))
    }

    fn check_input(&self, x: &Tensor) -> Result<(), AeError> {
        let s = x.shape();
        if s.len() != 4 || s[1] != 1 || (s[2], s[3]) != (self.arch.height, self.arch.width) {
            return Err(AeError::InputShape {
                expected: (self.arch.height, self.arch.width),
                got: (s.get(2).copied().unwrap_or(0), s.get(3).copied().unwrap_or(0)),
            });
        }
        Ok(())
    }

    /// Latent codes `N×latent_dim` for a batch `N×1×H×W` (inference mode).
    pub fn encode(&self, x: &Tensor) -> Result<Tensor, AeError> {
        self.check_input(x)?;
        let mut g = Graph::new();
        let p = self.params.bind(&mut g, false);
        let xv = g.constant(x.clone());
        let z = self.encode_with(&mut g, &p, xv)?;
        Ok(g.value(z).clone())
    }

    /// Reconstruction of a batch `N×1×H×W` (inference mode).
    pub fn reconstruct(&self, x: &Tensor) -> Result<Tensor, AeError> {
        self.check_input(x)?;
        let mut g = Graph::new();
        let p = self.params.bind(&mut g, false);
        let xv = g.constant(x.clone());
        let z = self.encode_with(&mut g, &p, xv)?;
        let y = self.decode_with(&mut g, &p, z)?;
        Ok(g.value(y).clone())
    }

    pub fn write_to(&self, ck: &mut Checkpoint) {
        ck.push(Entry::f64(
            "ae.meta.input_hw",
            &Tensor::new(&[2], vec![self.arch.height as f64, self.arch.width as f64]).expect("2 values"),
        ));
        self.params.write_to(ck, "ae.");
    }

    pub fn read_from(ck: &Checkpoint) -> Result<Self, AeError> {
        let hw = ck.tensor("ae.meta.input_hw")?;
        let (height, width) = (hw.data()[0] as usize, hw.data()[1] as usize);
        let ch = |name: &str| -> Result<usize, AeError> { Ok(ck.tensor(name)?.shape()[0]) };
        let arch = AeArch {
            height,
            width,
            channels: [ch("ae.enc.conv1.w")?, ch("ae.enc.conv2.w")?, ch("ae.enc.conv3.w")?],
            latent_dim: ch("ae.enc.fc.w")?,
        };
        arch.validate()?;
        // shapes come from a freshly initialized model of the same arch
        let template = Self::init(arch.clone(), &mut ChaCha8Rng::seed_from_u64(0))?;
        let params = ParamSet::read_from(ck, "ae.", template.params.names())?;
        for (a, b) in params.tensors().iter().zip(template.params.tensors()) {
            if a.shape() != b.shape() {
                return Err(AeError::Data(DataError::Checkpoint(format!(
                    "autoencoder tensor shape {:?} does not fit architecture (expected {:?})",
                    a.shape(),
                    b.shape()
                ))));
            }
        }
        Ok(Self { arch, params })
    }
}

/// Frozen feature network for the perceptual loss: three 3×3 conv + ReLU
/// layers (strides 1, 2, 2) with seeded random weights.
#[derive(Debug, Clone, PartialEq)]
pub struct PerceptualNet {
    params: ParamSet,
}

impl PerceptualNet {
    pub const LAYERS: usize = 3;

    pub fn init<R: Rng + ?Sized>(channels: [usize; 3], rng: &mut R) -> Self {
        let mut p = ParamSet::new();
        let mut cin = 1;
        for (i, &cout) in channels.iter().enumerate() {
            p.push(
                format!("conv{}.w", i + 1),
                he_normal(&[cout, cin, CONV3, CONV3], cin * CONV3 * CONV3, rng),
            );
            p.push(format!("conv{}.b", i + 1), Tensor::zeros(&[cout]));
            cin = cout;
        }
        Self { params: p }
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    /// Activations of layer `layer` (1-based) for `x: N×1×H×W`.
    pub fn features_with(&self, g: &mut Graph, p: &[Var], x: Var, layer: usize) -> Result<Var, TensorError> {
        let mut h = x;
        for i in 0..layer {
            let stride = if i == 0 { 1 } else { 2 };
            h = conv_block(g, h, p[2 * i], p[2 * i + 1], stride)?;
        }
        Ok(h)
    }

    pub fn features(&self, x: &Tensor, layer: usize) -> Result<Tensor, AeError> {
        if !(1..=Self::LAYERS).contains(&layer) {
            return Err(AeError::Layer(layer));
        }
        let mut g = Graph::new();
        let p = self.params.bind(&mut g, false);
        let xv = g.constant(x.clone());
        let f = self.features_with(&mut g, &p, xv, layer)?;
        Ok(g.value(f).clone())
    }

    pub fn write_to(&self, ck: &mut Checkpoint) {
        self.params.write_to(ck, "phi.");
    }

    pub fn read_from(ck: &Checkpoint) -> Result<Self, AeError> {
        let channels = [
            ck.tensor("phi.conv1.w")?.shape()[0],
            ck.tensor("phi.conv2.w")?.shape()[0],
            ck.tensor("phi.conv3.w")?.shape()[0],
        ];
        let template = Self::init(channels, &mut ChaCha8Rng::seed_from_u64(0));
        Ok(Self {
            params: ParamSet::read_from(ck, "phi.", template.params.names())?,
        })
    }
}

/// Pixel loss: `(1/n) Σᵢ ‖xᵢ − x′ᵢ‖²` over the leading (sample) axis.
pub fn mse_loss_graph(g: &mut Graph, x: Var, recon: Var) -> Result<Var, TensorError> {
    let n = g.shape(x)[0] as f64;
    let d = g.sub(x, recon)?;
    let sq = g.square(d);
    let s = g.sum(sq);
    Ok(g.scale(s, 1.0 / n))
}

/// Perceptual loss: per-sample `‖φ(x) − φ(x′)‖² / (C·H·W)`, averaged over
/// samples. `target` holds `φ(x)`.
pub fn perceptual_loss_graph(
    g: &mut Graph,
    phi: &PerceptualNet,
    phi_vars: &[Var],
    target: Var,
    recon: Var,
    layer: usize,
) -> Result<Var, TensorError> {
    let f = phi.features_with(g, phi_vars, recon, layer)?;
    let n = g.shape(f)[0];
    let per_sample = g.value(f).len() / n;
    let d = g.sub(target, f)?;
    let sq = g.square(d);
    let s = g.sum(sq);
    Ok(g.scale(s, 1.0 / (n * per_sample) as f64))
}

fn same_shape(x: &Tensor, y: &Tensor) -> Result<(), TensorError> {
    if x.shape() != y.shape() || x.shape().is_empty() {
        return Err(TensorError::ShapeMismatch {
            op: "loss",
            expected: x.shape().to_vec(),
            got: y.shape().to_vec(),
        });
    }
    Ok(())
}

pub fn mse_loss(x: &Tensor, recon: &Tensor) -> Result<f64, AeError> {
    same_shape(x, recon)?;
    let mut g = Graph::new();
    let (a, b) = (g.constant(x.clone()), g.constant(recon.clone()));
    let l = mse_loss_graph(&mut g, a, b)?;
    Ok(g.value(l).item())
}

pub fn perceptual_loss(phi: &PerceptualNet, x: &Tensor, recon: &Tensor, layer: usize) -> Result<f64, AeError> {
    same_shape(x, recon)?;
    if !(1..=PerceptualNet::LAYERS).contains(&layer) {
        return Err(AeError::Layer(layer));
    }
    let target = phi.features(x, layer)?;
    let mut g = Graph::new();
    let pv = phi.params.bind(&mut g, false);
    let t = g.constant(target);
    let r = g.constant(recon.clone());
    let l = perceptual_loss_graph(&mut g, phi, &pv, t, r, layer)?;
    Ok(g.value(l).item())
}

/// `L_MSE + L_p` with unit weights.
pub fn ae_total_loss(phi: &PerceptualNet, x: &Tensor, recon: &Tensor, layer: usize) -> Result<f64, AeError> {
    Ok(mse_loss(x, recon)? + perceptual_loss(phi, x, recon, layer)?)
}

/// Builds the full training objective on `g`; returns `(mse, perceptual, total)`.
#[allow(clippy::too_many_arguments)]
pub fn ae_loss_graph<R: Rng + ?Sized>(
    g: &mut Graph,
    ae: &Autoencoder,
    ae_vars: &[Var],
    phi: &PerceptualNet,
    phi_vars: &[Var],
    x: Var,
    target: Var,
    layer: usize,
    dropout: Option<(f64, &mut R)>,
) -> Result<(Var, Var, Var), TensorError> {
    let mut z = ae.encode_with(g, ae_vars, x)?;
    if let Some((rate, rng)) = dropout {
        z = g.dropout(z, rate, rng)?;
    }
    let recon = ae.decode_with(g, ae_vars, z)?;
    let mse = mse_loss_graph(g, x, recon)?;
    let perc = perceptual_loss_graph(g, phi, phi_vars, target, recon, layer)?;
    let total = g.add(mse, perc)?;
    Ok((mse, perc, total))
}

/// Per-epoch record of a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AeHistory {
    /// Mean `L_AE` over all training frames before the first update.
    pub initial_loss: f64,
    /// Mean training-batch `L_AE` per epoch (dropout active).
    pub epoch_losses: Vec<f64>,
    /// Mean `L_AE` over all training frames after the last update.
    pub final_loss: f64,
}

impl AeHistory {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,loss\n");
        s.push_str(&format!("0,{}\n", self.initial_loss));
        for (i, l) in self.epoch_losses.iter().enumerate() {
            s.push_str(&format!("{},{}\n", i + 1, l));
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedAe {
    pub model: Autoencoder,
    pub perceptual: PerceptualNet,
    pub history: AeHistory,
}

impl TrainedAe {
    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::default();
        self.model.write_to(&mut ck);
        self.perceptual.write_to(&mut ck);
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<(Autoencoder, PerceptualNet), AeError> {
        Ok((Autoencoder::read_from(ck)?, PerceptualNet::read_from(ck)?))
    }
}

/// Normalizes 8-bit images into an `N×1×H×W` batch in [0, 1].
pub fn images_to_batch(images: &[&[u8]], height: usize, width: usize) -> Result<Tensor, AeError> {
    let mut data = Vec::with_capacity(images.len() * height * width);
    for img in images {
        if img.len() != height * width {
            return Err(AeError::InputShape {
                expected: (height, width),
                got: (img.len() / width.max(1), width),
            });
        }
        data.extend(img.iter().map(|&p| p as f64 / 255.0));
    }
    Ok(Tensor::new(&[images.len(), 1, height, width], data)?)
}

fn mean_eval_loss(
    ae: &Autoencoder,
    phi: &PerceptualNet,
    frames: &[&[u8]],
    layer: usize,
    chunk: usize,
) -> Result<f64, AeError> {
    let (h, w) = (ae.arch.height, ae.arch.width);
    let mut total = 0.0;
    for part in frames.chunks(chunk) {
        let x = images_to_batch(part, h, w)?;
        let recon = ae.reconstruct(&x)?;
        total += ae_total_loss(phi, &x, &recon, layer)? * part.len() as f64;
    }
    Ok(total / frames.len() as f64)
}

/// Trains on every `frame_stride`-th frame of every clip, treating frames
/// as independent samples.
pub fn train_autoencoder(records: &[ClipRecord], cfg: &AeConfig) -> Result<TrainedAe, AeError> {
    cfg.validate()?;
    let first = records.first().ok_or(AeError::EmptyDataset)?;
    let (h, w) = (first.clip.height, first.clip.width);
    let mut frames: Vec<&[u8]> = Vec::new();
    for r in records {
        if (r.clip.height, r.clip.width) != (h, w) {
            return Err(AeError::InputShape {
                expected: (h, w),
                got: (r.clip.height, r.clip.width),
            });
        }
        frames.extend((0..r.clip.frames).step_by(cfg.frame_stride).map(|t| r.clip.frame(t)));
    }
    if frames.is_empty() {
        return Err(AeError::EmptyDataset);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let arch = AeArch {
        height: h,
        width: w,
        channels: cfg.channels,
        latent_dim: cfg.latent_dim,
    };
    let mut model = Autoencoder::init(arch, &mut rng)?;
    let perceptual = PerceptualNet::init([8, 16, 16], &mut rng);
    let layer = cfg.perceptual_layer;

    let initial_loss = mean_eval_loss(&model, &perceptual, &frames, layer, cfg.batch)?;
    let mut adam = Adam::new(cfg.lr, model.params.tensors());
    let mut order: Vec<usize> = (0..frames.len()).collect();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        shuffle(&mut order, &mut rng);
        let mut sum = 0.0;
        for (batch_idx, idx) in order.chunks(cfg.batch).enumerate() {
            let batch: Vec<&[u8]> = idx.iter().map(|&i| frames[i]).collect();
            let x = images_to_batch(&batch, h, w)?;
            let target = perceptual.features(&x, layer)?;

            let mut g = Graph::new();
            let pv = model.params.bind(&mut g, true);
            let phv = perceptual.params.bind(&mut g, false);
            let xv = g.constant(x);
            let tv = g.constant(target);
            let dropout = (cfg.dropout > 0.0).then_some((cfg.dropout, &mut rng));
            let (mse, perc, total) = ae_loss_graph(&mut g, &model, &pv, &perceptual, &phv, xv, tv, layer, dropout)?;
            let loss = g.value(total).item();
            if !loss.is_finite() {
                return Err(AeError::NonFinite {
                    epoch,
                    batch: batch_idx,
                    mse: g.value(mse).item(),
                    perceptual: g.value(perc).item(),
                });
            }
            sum += loss * batch.len() as f64;
            let mut grads = g.backward(total)?;
            let grads: Vec<Tensor> = pv
                .iter()
                .zip(model.params.tensors())
                .map(|(&v, t)| grads.take_or_zeros(v, t.shape()))
                .collect();
            adam.step(model.params.tensors_mut(), &grads)?;
        }
        epoch_losses.push(sum / frames.len() as f64);
    }

    let final_loss = mean_eval_loss(&model, &perceptual, &frames, layer, cfg.batch)?;
    if !final_loss.is_finite() {
        return Err(AeError::NonFinite {
            epoch: cfg.epochs,
            batch: 0,
            mse: f64::NAN,
            perceptual: f64::NAN,
        });
    }
    Ok(TrainedAe {
        model,
        perceptual,
        history: AeHistory {
            initial_loss,
            epoch_losses,
            final_loss,
        },
    })
}

/// Fisher–Yates with the crate's seeded generator.
pub(crate) fn shuffle<T, R: Rng + ?Sized>(items: &mut [T], rng: &mut R) {
    for i in (1..items.len()).rev() {
        let j = rng.random_range(0..=i);
        items.swap(i, j);
    }
}

/// Per-frame latent vectors, stacked as `latent_dim × T` (channels × time).
/// Works for video frames and quantized masks alike.
pub fn encode_frames(ae: &Autoencoder, images: &[GrayImage]) -> Result<Tensor, AeError> {
    let (h, w) = (ae.arch.height, ae.arch.width);
    if images.is_empty() {
        return Err(AeError::EmptyDataset);
    }
    let mut rows = Vec::with_capacity(images.len() * ae.arch.latent_dim);
    for part in images.chunks(32) {
        let views: Vec<&[u8]> = part
            .iter()
            .map(|img| {
                if (img.height, img.width) != (h, w) {
                    Err(AeError::InputShape {
                        expected: (h, w),
                        got: (img.height, img.width),
                    })
                } else {
                    Ok(img.pixels.as_slice())
                }
            })
            .collect::<Result<_, _>>()?;
        let z = ae.encode(&images_to_batch(&views, h, w)?)?;
        rows.extend_from_slice(z.data());
    }
    Ok(Tensor::new(&[images.len(), ae.arch.latent_dim], rows)?.transpose2()?)
}
