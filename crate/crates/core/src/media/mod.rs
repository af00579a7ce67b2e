//! Media probing, frame sampling and re-timing.
//!
//! Everything that touches video files goes through [`MediaBackend`]. The
//! production implementation shells out to `ffprobe`/`ffmpeg`
//! ([`FfmpegBackend`]); [`SyntheticBackend`] renders procedural clips in
//! memory so the pipeline can run without codecs.

mod ffmpeg;
mod synthetic;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::MediaInfo;

pub use ffmpeg::{FfmpegBackend, FfmpegConfig};
pub use synthetic::{Pattern, SyntheticBackend, SyntheticClip};

#[derive(Debug, Error)]
pub enum MediaError {
    #[error("{0}: no such file")]
    MissingFile(PathBuf),
    #[error("{path}: not a decodable video: {message}")]
    Undecodable { path: PathBuf, message: String },
    #[error("{0}: video stream has no frames")]
    ZeroFrames(PathBuf),
    #[error("{path}: decode failed after frame {last_good_index:?}: {message}")]
    DecodeFailed {
        path: PathBuf,
        last_good_index: Option<u64>,
        message: String,
    },
    #[error("{path}: encoder failed: {message}")]
    EncoderFailed { path: PathBuf, message: String },
    #[error("{path}: output not writable: {message}")]
    Unwritable { path: PathBuf, message: String },
    #[error("could not launch {program}: {source}")]
    Spawn {
        program: String,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid media request: {0}")]
    InvalidArgument(String),
}

impl MediaError {
    /// Short machine-readable code used in audit entries.
    pub fn code(&self) -> &'static str {
        match self {
            MediaError::MissingFile(_) => "missing_file",
            MediaError::Undecodable { .. } => "undecodable",
            MediaError::ZeroFrames(_) => "zero_frames",
            MediaError::DecodeFailed { .. } => "decode_failed",
            MediaError::EncoderFailed { .. } => "encoder_failed",
            MediaError::Unwritable { .. } => "unwritable",
            MediaError::Spawn { .. } => "spawn_failed",
            MediaError::InvalidArgument(_) => "invalid_argument",
        }
    }
}

/// One decoded frame as packed RGB24, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub width: u32,
    pub height: u32,
    pub pixels: Vec<u8>,
    pub timestamp: f64,
}

impl Frame {
    pub fn new(width: u32, height: u32, pixels: Vec<u8>, timestamp: f64) -> Result<Self, MediaError> {
        if pixels.len() != width as usize * height as usize * 3 {
            return Err(MediaError::InvalidArgument(format!(
                "{} bytes for a {}x{} RGB frame",
                pixels.len(),
                width,
                height
            )));
        }
        Ok(Frame {
            width,
            height,
            pixels,
            timestamp,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum SampleStrategy {
    /// `n` indices spread evenly over the whole clip.
    Uniform,
    /// Consecutive frames spaced `1 / fps` seconds apart, centred in the clip.
    /// Used for motion so that re-timed clips are measured per wall-clock time.
    FixedRate { fps: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplePlan {
    pub max_frames: u32,
    pub strategy: SampleStrategy,
}

impl SamplePlan {
    pub fn uniform(max_frames: u32) -> Self {
        SamplePlan {
            max_frames,
            strategy: SampleStrategy::Uniform,
        }
    }

    pub fn fixed_rate(max_frames: u32, fps: f64) -> Self {
        SamplePlan {
            max_frames,
            strategy: SampleStrategy::FixedRate { fps },
        }
    }

    pub fn validate(&self) -> Result<(), MediaError> {
        if self.max_frames == 0 {
            return Err(MediaError::InvalidArgument("max_frames must be at least 1".into()));
        }
        if let SampleStrategy::FixedRate { fps } = self.strategy {
            if !(fps.is_finite() && fps > 0.0) {
                return Err(MediaError::InvalidArgument(format!("sampling rate {fps} is not positive")));
            }
        }
        Ok(())
    }

    /// Frame indices to decode, sorted and duplicate-free.
    pub fn indices(&self, media: &MediaInfo) -> Vec<u64> {
        let total = media.num_frames;
        match self.strategy {
            SampleStrategy::Uniform => uniform_indices(total, self.max_frames as u64),
            SampleStrategy::FixedRate { fps } => {
                let stride = ((media.fps / fps).round() as u64).max(1);
                let positions = (total - 1) / stride + 1;
                let n = positions.min(self.max_frames as u64);
                let start = (positions - n) / 2 * stride;
                (0..n).map(|k| start + k * stride).collect()
            }
        }
    }
}

/// `round(k * (total - 1) / (n - 1))` for `k = 0..n`, `n = min(total, max)`.
pub fn uniform_indices(total: u64, max_frames: u64) -> Vec<u64> {
    let n = total.min(max_frames);
    match n {
        0 => Vec::new(),
        1 => vec![0],
        _ => {
            let span = total - 1;
            let steps = n - 1;
            // round half up in integers
            (0..n).map(|k| (2 * k * span + steps) / (2 * steps)).collect()
        }
    }
}

/// The narrow interface every media operation goes through.
pub trait MediaBackend: Send + Sync {
    fn probe(&self, path: &Path) -> Result<MediaInfo, MediaError>;

    fn sample_frames(&self, path: &Path, plan: &SamplePlan) -> Result<Vec<Frame>, MediaError>;

    /// Re-times `input` so it plays `speed_factor` times faster, keeping every
    /// frame, and returns the probe of the output.
    fn reencode_speedup(&self, input: &Path, output: &Path, speed_factor: f64) -> Result<MediaInfo, MediaError>;
}

/// Path of the accelerated copy: `clip.mp4` at factor 2 becomes `clip.x2.mp4`.
pub fn accelerated_path(path: &Path, speed_factor: f64) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let name = match path.extension() {
        Some(ext) => format!("{stem}.x{speed_factor}.{}", ext.to_string_lossy()),
        None => format!("{stem}.x{speed_factor}"),
    };
    path.with_file_name(name)
}

/// Writes frames as lossless PNG files into `dir`, returning their paths.
pub fn write_png_frames(frames: &[Frame], dir: &Path) -> Result<Vec<PathBuf>, MediaError> {
    frames
        .iter()
        .enumerate()
        .map(|(i, f)| {
            let path = dir.join(format!("frame_{i:04}.png"));
            image::save_buffer(&path, &f.pixels, f.width, f.height, image::ExtendedColorType::Rgb8).map_err(|e| {
                MediaError::Unwritable {
                    path: path.clone(),
                    message: e.to_string(),
                }
            })?;
            Ok(path)
        })
        .collect()
}
