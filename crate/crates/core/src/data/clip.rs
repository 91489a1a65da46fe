//! Clips, labels and the on-disk dataset layout:
//!
//! ```text
//! <root>/labels.csv                 clip_id,label
//! <root>/<clip_id>/frame_%05d.pgm   8-bit P5 frames
//! <root>/<clip_id>/gaze.csv         frame,x,y (empty fields = missing)
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::gaze::{parse_gaze_csv, GazeTrace};
use super::pgm::GrayImage;
use super::DataError;

pub const LABELS_FILE: &str = "labels.csv";
pub const GAZE_FILE: &str = "gaze.csv";

/// Binary procedure outcome. The positive class is `Successful`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Label {
    Unsuccessful = 0,
    Successful = 1,
}

impl Label {
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        match i {
            0 => Some(Label::Unsuccessful),
            1 => Some(Label::Successful),
            _ => None,
        }
    }
}

pub fn frame_file_name(index: usize) -> String {
    format!("frame_{index:05}.pgm")
}

pub fn mask_file_name(index: usize) -> String {
    format!("mask_{index:05}.pgm")
}

/// A T×H×W stack of 8-bit grayscale frames.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Clip {
    pub clip_id: String,
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub pixels: Vec<u8>,
    pub label: Label,
}

impl Clip {
    pub fn from_images(clip_id: impl Into<String>, images: &[GrayImage], label: Label) -> Result<Self, DataError> {
        let clip_id = clip_id.into();
        let first = images
            .first()
            .ok_or_else(|| DataError::Layout(format!("clip `{clip_id}` has no frames")))?;
        let (height, width) = (first.height, first.width);
        let mut pixels = Vec::with_capacity(images.len() * height * width);
        for (i, img) in images.iter().enumerate() {
            if (img.height, img.width) != (height, width) {
                return Err(DataError::Layout(format!(
                    "clip `{clip_id}` frame {i} is {}×{}, expected {height}×{width}",
                    img.height, img.width
                )));
            }
            pixels.extend_from_slice(&img.pixels);
        }
        Ok(Self {
            clip_id,
            frames: images.len(),
            height,
            width,
            pixels,
            label,
        })
    }

    pub fn frame(&self, t: usize) -> &[u8] {
        let n = self.height * self.width;
        &self.pixels[t * n..(t + 1) * n]
    }

    pub fn frame_image(&self, t: usize) -> GrayImage {
        GrayImage::new(self.height, self.width, self.frame(t).to_vec())
    }
}

/// A clip together with its gaze trace.
#[derive(Debug, Clone, PartialEq)]
pub struct ClipRecord {
    pub clip: Clip,
    pub gaze: GazeTrace,
}

/// Loads `frame_%05d.pgm` (contiguous from 0) and `gaze.csv` from `dir`.
pub fn load_clip(dir: &Path, label: Label) -> Result<ClipRecord, DataError> {
    let clip_id = dir
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let images = load_image_sequence(dir, "frame_")?;
    let clip = Clip::from_images(clip_id.clone(), &images, label)?;
    let gaze_path = dir.join(GAZE_FILE);
    let text = fs::read_to_string(&gaze_path).map_err(|e| DataError::io(&gaze_path, e))?;
    let gaze = parse_gaze_csv(&clip_id, &text, clip.frames).map_err(|e| e.in_file(&gaze_path))?;
    Ok(ClipRecord { clip, gaze })
}

/// Reads `<prefix>%05d.pgm` files from `dir`, requiring indices 0..n
/// without gaps.
pub fn load_image_sequence(dir: &Path, prefix: &str) -> Result<Vec<GrayImage>, DataError> {
    let mut indices = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| DataError::io(dir, e))? {
        let entry = entry.map_err(|e| DataError::io(dir, e))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if let Some(idx) = name.strip_prefix(prefix).and_then(|r| r.strip_suffix(".pgm")) {
            let idx: usize = idx
                .parse()
                .map_err(|_| DataError::Layout(format!("unparseable frame file name `{name}`")))?;
            indices.push(idx);
        }
    }
    indices.sort_unstable();
    if indices.is_empty() {
        return Err(DataError::Layout(format!(
            "no `{prefix}*.pgm` files in {}",
            dir.display()
        )));
    }
    for (expected, &idx) in indices.iter().enumerate() {
        if idx != expected {
            return Err(DataError::FrameGap {
                dir: dir.to_path_buf(),
                index: expected,
            });
        }
    }
    indices
        .iter()
        .map(|&i| GrayImage::load(&dir.join(format!("{prefix}{i:05}.pgm"))))
        .collect()
}

/// Writes every frame of `clip` as `frame_%05d.pgm` into `dir`.
pub fn save_frames(clip: &Clip, dir: &Path) -> Result<(), DataError> {
    fs::create_dir_all(dir).map_err(|e| DataError::io(dir, e))?;
    for t in 0..clip.frames {
        clip.frame_image(t).save(&dir.join(frame_file_name(t)))?;
    }
    Ok(())
}

/// Writes masks as `mask_%05d.pgm` into `dir`.
pub fn save_mask_sequence(masks: &[GrayImage], dir: &Path) -> Result<Vec<PathBuf>, DataError> {
    fs::create_dir_all(dir).map_err(|e| DataError::io(dir, e))?;
    masks
        .iter()
        .enumerate()
        .map(|(t, m)| {
            let path = dir.join(mask_file_name(t));
            m.save(&path).map(|_| path)
        })
        .collect()
}

pub fn read_labels(root: &Path) -> Result<Vec<(String, Label)>, DataError> {
    let path = root.join(LABELS_FILE);
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(&path)
        .map_err(|e| DataError::Layout(format!("{}: {e}", path.display())))?;
    let mut out = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| DataError::Layout(format!("{}: {e}", path.display())))?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        if record.len() != 2 {
            return Err(DataError::parse(line, "expected `clip_id,label`").in_file(&path));
        }
        let label = match &record[1] {
            "0" => Label::Unsuccessful,
            "1" => Label::Successful,
            other => return Err(DataError::parse(line, format!("label `{other}` is not 0 or 1")).in_file(&path)),
        };
        out.push((record[0].to_string(), label));
    }
    Ok(out)
}

pub fn write_labels(root: &Path, labels: &[(String, Label)]) -> Result<(), DataError> {
    let mut text = String::from("clip_id,label\n");
    for (id, label) in labels {
        text.push_str(&format!("{id},{}\n", label.index()));
    }
    let path = root.join(LABELS_FILE);
    fs::write(&path, text).map_err(|e| DataError::io(&path, e))
}

/// Loads every clip listed in `labels.csv`, in file order.
pub fn load_dataset(root: &Path) -> Result<Vec<ClipRecord>, DataError> {
    let labels = read_labels(root)?;
    if labels.is_empty() {
        return Err(DataError::Layout(format!(
            "{} lists no clips",
            root.join(LABELS_FILE).display()
        )));
    }
    labels
        .iter()
        .map(|(id, label)| load_clip(&root.join(id), *label))
        .collect()
}
