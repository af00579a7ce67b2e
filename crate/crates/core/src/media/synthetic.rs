use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::RwLock;

use serde::{Deserialize, Serialize};

use super::{Frame, MediaBackend, MediaError, SamplePlan};
use crate::model::MediaInfo;

/// Procedural frame content.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Pattern {
    /// Every frame the same flat gray.
    Static { gray: u8 },
    /// Flat gray frames whose level is `(start + step * index) mod 256`.
    Ramp { start: u8, step: u8 },
    /// Even frames black, odd frames white.
    Alternating,
    /// Horizontal gradient `x * 128 / width` brightened by `step * index`,
    /// saturating at 255.
    MovingGradient { step: u8 },
}

impl Pattern {
    pub fn render(&self, width: u32, height: u32, index: u64) -> Vec<u8> {
        let n = width as usize * height as usize;
        match *self {
            Pattern::Static { gray } => vec![gray; n * 3],
            Pattern::Ramp { start, step } => {
                let g = (start as u64 + step as u64 * index) % 256;
                vec![g as u8; n * 3]
            }
            Pattern::Alternating => vec![if index % 2 == 0 { 0 } else { 255 }; n * 3],
            Pattern::MovingGradient { step } => {
                let offset = step as u64 * index;
                let row: Vec<u8> = (0..width as u64)
                    .flat_map(|x| {
                        let v = (x * 128 / width as u64 + offset).min(255) as u8;
                        [v, v, v]
                    })
                    .collect();
                row.repeat(height as usize)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticClip {
    pub width: u32,
    pub height: u32,
    pub num_frames: u64,
    pub fps: f64,
    pub pattern: Pattern,
}

impl SyntheticClip {
    pub fn info(&self) -> Result<MediaInfo, String> {
        MediaInfo::new(self.width, self.height, self.num_frames, self.fps, self.num_frames as f64 / self.fps)
    }

    pub fn frame(&self, index: u64) -> Frame {
        Frame {
            width: self.width,
            height: self.height,
            pixels: self.pattern.render(self.width, self.height, index),
            timestamp: index as f64 / self.fps,
        }
    }
}

/// In-memory media: paths map to procedural clips. Re-timing registers the
/// output path as the same content at a higher frame rate.
#[derive(Default)]
pub struct SyntheticBackend {
    clips: RwLock<HashMap<PathBuf, SyntheticClip>>,
}

impl SyntheticBackend {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&self, path: impl Into<PathBuf>, clip: SyntheticClip) {
        self.clips.write().unwrap().insert(path.into(), clip);
    }

    pub fn get(&self, path: &Path) -> Option<SyntheticClip> {
        self.clips.read().unwrap().get(path).copied()
    }

    fn clip(&self, path: &Path) -> Result<SyntheticClip, MediaError> {
        self.get(path).ok_or_else(|| MediaError::MissingFile(path.to_path_buf()))
    }
}

impl MediaBackend for SyntheticBackend {
    fn probe(&self, path: &Path) -> Result<MediaInfo, MediaError> {
        let clip = self.clip(path)?;
        if clip.num_frames == 0 {
            return Err(MediaError::ZeroFrames(path.to_path_buf()));
        }
        clip.info().map_err(|message| MediaError::Undecodable {
            path: path.to_path_buf(),
            message,
        })
    }

    fn sample_frames(&self, path: &Path, plan: &SamplePlan) -> Result<Vec<Frame>, MediaError> {
        plan.validate()?;
        let info = self.probe(path)?;
        let clip = self.clip(path)?;
        Ok(plan.indices(&info).into_iter().map(|i| clip.frame(i)).collect())
    }

    fn reencode_speedup(&self, input: &Path, output: &Path, speed_factor: f64) -> Result<MediaInfo, MediaError> {
        if !(speed_factor.is_finite() && speed_factor >= 1.0) {
            return Err(MediaError::InvalidArgument(format!("speed factor {speed_factor} is below 1")));
        }
        let mut clip = self.clip(input)?;
        clip.fps *= speed_factor;
        self.insert(output, clip);
        self.probe(output)
    }
}
