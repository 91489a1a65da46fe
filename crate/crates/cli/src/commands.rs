use std::fs;
use std::path::{Path, PathBuf};

use gzgd_core::attention::{extract_features, read_predictions, train_classifier, write_predictions, ClassifierConfig};
use gzgd_core::autoencoder::{train_autoencoder, AeConfig, TrainedAe};
use gzgd_core::data::{load_clip, load_dataset, save_mask_sequence, Checkpoint, Label};
use gzgd_core::mask::build_clip_masks;
use gzgd_core::metrics::{curve_svg, evaluate};
use gzgd_core::synth::{self, parse_ratio, SynthConfig};
use gzgd_core::trust::{trust_report, TrustConfig};
use serde_json::json;

use crate::error::CliError;
use crate::manifest::RunManifest;
use crate::{DescribeArgs, EvalArgs, MaskCmdArgs, SynthArgs, TrainAeArgs, TrainClsArgs, TrustArgs};

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| CliError::Data(format!("{}: {e}", parent.display())))?;
    }
    fs::write(path, contents).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn to_json(value: &impl serde::Serialize) -> Result<String, CliError> {
    Ok(serde_json::to_string_pretty(value)? + "\n")
}

/// `dir/name` beside `path`.
fn sibling(path: &Path, name: &str) -> PathBuf {
    path.with_file_name(name)
}

pub fn synth(a: SynthArgs) -> Result<(), CliError> {
    let cfg = SynthConfig {
        clips: a.clips,
        frames: a.frames,
        height: a.size[0],
        width: a.size[1],
        ratio: parse_ratio(&a.ratio).map_err(|e| CliError::Usage(e.to_string()))?,
        gaze_jitter: a.jitter,
        missing_rate: a.missing,
        distractors: a.distractors,
        noise: a.noise,
        seed: a.seed.seed,
    };
    cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let records = synth::generate(&cfg, &a.out)?;
    let summary = synth::summarize(&records);
    let mut m = RunManifest::new("synth", Some(cfg.seed), &cfg)?;
    m.output(&a.out)?;
    m.write_beside(&a.out)?;
    print!("{}", to_json(&summary)?);
    Ok(())
}

pub fn describe(a: DescribeArgs) -> Result<(), CliError> {
    let summary = synth::describe(&a.data)?;
    print!("{}", to_json(&summary)?);
    Ok(())
}

pub fn mask(a: MaskCmdArgs) -> Result<(), CliError> {
    let rec = load_clip(&a.clip, Label::Unsuccessful)?;
    let cfg = a.mask.config(rec.clip.height);
    cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let interpolate = !a.mask.no_interp;
    let masks = build_clip_masks(&rec.gaze, &cfg, rec.clip.height, rec.clip.width, interpolate)?;
    let images: Vec<_> = masks.into_iter().map(|m| m.quantized).collect();
    save_mask_sequence(&images, &a.out)?;
    let mut m = RunManifest::new("mask", None, json!({ "mask": cfg, "interpolate": interpolate }))?;
    m.input(&a.clip)?;
    m.output(&a.out)?;
    m.write_beside(&a.out)?;
    println!(
        "{} masks for {} written to {}",
        images.len(),
        rec.clip.clip_id,
        a.out.display()
    );
    Ok(())
}

pub fn train_ae(a: TrainAeArgs) -> Result<(), CliError> {
    let cfg = AeConfig {
        latent_dim: a.latent_dim,
        epochs: a.epochs,
        batch: a.batch,
        lr: a.lr,
        dropout: a.dropout,
        perceptual_layer: a.perceptual_layer,
        frame_stride: a.frame_stride,
        seed: a.seed.seed,
        ..AeConfig::default()
    };
    cfg.validate()?;
    let records = load_dataset(&a.data)?;
    let trained = train_autoencoder(&records, &cfg)?;
    trained.to_checkpoint().save(&a.out)?;
    let loss_csv = a.loss_csv.unwrap_or_else(|| a.out.with_extension("loss.csv"));
    write(&loss_csv, trained.history.to_csv())?;

    let mut m = RunManifest::new("train-ae", Some(cfg.seed), &cfg)?;
    m.input(&a.data)?;
    m.output(&a.out)?;
    m.output(&loss_csv)?;
    m.write_beside(&a.out)?;
    println!(
        "autoencoder loss {:.6} -> {:.6} over {} epochs",
        trained.history.initial_loss, trained.history.final_loss, cfg.epochs
    );
    Ok(())
}

pub fn train_cls(a: TrainClsArgs) -> Result<(), CliError> {
    let cfg = ClassifierConfig {
        se_reduction: a.se_reduction,
        epochs: a.epochs,
        lr: a.lr,
        use_gaze: a.use_gaze,
        test_fraction: a.test_fraction,
        seed: a.seed.seed,
    };
    let (ae, _) = TrainedAe::from_checkpoint(&Checkpoint::load(&a.ae)?)?;
    cfg.validate(ae.arch().latent_dim)?;
    let records = load_dataset(&a.data)?;
    let height = records.first().map_or(0, |r| r.clip.height);
    let mask_cfg = a.mask.config(height);
    let interpolate = !a.mask.no_interp;
    if cfg.use_gaze {
        mask_cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    }
    let features = extract_features(&records, &ae, cfg.use_gaze.then_some((&mask_cfg, interpolate)))?;
    let trained = train_classifier(&features, &cfg)?;

    let mut ck = Checkpoint::default();
    trained.model.write_to(&mut ck);
    ck.save(&a.out)?;
    let preds_path = a.preds.unwrap_or_else(|| sibling(&a.out, "preds.csv"));
    write_predictions(&preds_path, &trained.predictions)?;
    let loss_csv = a.out.with_extension("loss.csv");
    let mut curve = format!("epoch,loss\n0,{}\n", trained.history.initial_loss);
    for (i, l) in trained.history.epoch_losses.iter().enumerate() {
        curve.push_str(&format!("{},{l}\n", i + 1));
    }
    write(&loss_csv, curve)?;

    let config = json!({
        "classifier": cfg,
        "mask": cfg.use_gaze.then_some(mask_cfg),
        "interpolate": interpolate,
    });
    let mut m = RunManifest::new("train-cls", Some(cfg.seed), config)?;
    m.input(&a.data)?;
    m.input(&a.ae)?;
    m.output(&a.out)?;
    m.output(&preds_path)?;
    m.output(&loss_csv)?;
    m.write_beside(&a.out)?;
    let correct = trained.predictions.iter().filter(|p| p.correct()).count();
    println!(
        "{} model: train loss {:.4} -> {:.4}; test accuracy {}/{}",
        if cfg.use_gaze { "gaze (M2)" } else { "baseline (M1)" },
        trained.history.initial_loss,
        trained.history.final_loss,
        correct,
        trained.predictions.len()
    );
    Ok(())
}

fn curve_csv(x_name: &str, y_name: &str, x: &[f64], y: &[f64], thresholds: &[Option<f64>]) -> String {
    let mut s = format!("{x_name},{y_name},threshold\n");
    for ((a, b), t) in x.iter().zip(y).zip(thresholds) {
        s.push_str(&format!("{a},{b},{}\n", t.map_or(String::new(), |v| v.to_string())));
    }
    s
}

pub fn eval(a: EvalArgs) -> Result<(), CliError> {
    let preds = read_predictions(&a.preds)?;
    let report = evaluate(&preds)?;
    write(&a.report, to_json(&report)?)?;
    let mut m = RunManifest::new("eval", None, json!({ "pr_area": report.curves.pr.area_method }))?;
    m.input(&a.preds)?;
    m.output(&a.report)?;
    if let Some(svg) = &a.plot {
        let roc = &report.curves.roc;
        write(
            svg,
            curve_svg(
                "ROC",
                "False positive rate",
                "True positive rate",
                &roc.fpr,
                &roc.tpr,
                true,
            ),
        )?;
        let csv = svg.with_extension("csv");
        write(&csv, curve_csv("fpr", "tpr", &roc.fpr, &roc.tpr, &roc.thresholds))?;
        m.output(svg)?;
        m.output(&csv)?;
    }
    if let Some(svg) = &a.plot_pr {
        let pr = &report.curves.pr;
        write(
            svg,
            curve_svg(
                "Precision-recall",
                "Recall",
                "Precision",
                &pr.recall,
                &pr.precision,
                false,
            ),
        )?;
        let csv = svg.with_extension("csv");
        write(
            &csv,
            curve_csv("recall", "precision", &pr.recall, &pr.precision, &pr.thresholds),
        )?;
        m.output(svg)?;
        m.output(&csv)?;
    }
    m.write_beside(&a.report)?;
    println!("n = {}", report.n);
    for (name, pct) in report.percentages() {
        println!("{name:<12} {pct:6.1}");
    }
    Ok(())
}

pub fn trust(a: TrustArgs) -> Result<(), CliError> {
    let cfg = TrustConfig {
        alpha: a.alpha,
        beta: a.beta,
        grid: a.grid,
        uniform_prior: a.uniform_prior,
    };
    cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let preds = read_predictions(&a.preds)?;
    let report = trust_report(&preds, &cfg)?;
    write(&a.report, to_json(&report)?)?;
    let mut m = RunManifest::new("trust", None, &cfg)?;
    m.input(&a.preds)?;
    m.output(&a.report)?;
    if let Some(path) = &a.density_csv {
        write(path, report.density_csv())?;
        m.output(path)?;
    }
    m.write_beside(&a.report)?;
    for (class, t) in &report.per_class {
        println!("class {class}: trust spectrum {:.4} (n = {})", t.qz_mean, t.n);
    }
    println!(
        "NetTrustScore {:.4}{}",
        report.nts,
        if report.high_trust { " (high trust)" } else { "" }
    );
    Ok(())
}
