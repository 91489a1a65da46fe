//! Dataset layout, gaze CSV parsing with gap interpolation, PGM frame I/O
//! and the checkpoint container.

mod checkpoint;
mod clip;
mod gaze;
mod pgm;

use std::path::{Path, PathBuf};

use thiserror::Error;

pub use checkpoint::{Checkpoint, Entry, TensorData, MAGIC as CHECKPOINT_MAGIC, VERSION as CHECKPOINT_VERSION};
pub use clip::{
    frame_file_name, load_clip, load_dataset, load_image_sequence, mask_file_name, read_labels, save_frames,
    save_mask_sequence, write_labels, Clip, ClipRecord, Label, GAZE_FILE, LABELS_FILE,
};
pub use gaze::{parse_gaze_csv, GazePoint, GazeTrace, Interpolated};
pub use pgm::GrayImage;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}line {line}: {msg}", file.as_ref().map(|p| format!("{}: ", p.display())).unwrap_or_default())]
    Parse {
        file: Option<PathBuf>,
        line: usize,
        msg: String,
    },
    #[error("{}: frame index {index} is missing from the sequence", dir.display())]
    FrameGap { dir: PathBuf, index: usize },
    #[error("{}: {msg}", path.display())]
    Pgm { path: PathBuf, msg: String },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("{0}")]
    Layout(String),
}

impl DataError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        DataError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub(crate) fn parse(line: usize, msg: impl Into<String>) -> Self {
        DataError::Parse {
            file: None,
            line,
            msg: msg.into(),
        }
    }

    pub(crate) fn in_file(self, path: &Path) -> Self {
        match self {
            DataError::Parse { line, msg, .. } => DataError::Parse {
                file: Some(path.to_path_buf()),
                line,
                msg,
            },
            other => other,
        }
    }
}
