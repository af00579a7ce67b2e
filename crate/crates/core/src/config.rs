//! Pipeline configuration, a single JSON document.
//!
//! Every threshold below is an engineering default, not a published value.
//! In particular the aesthetic range of [0, 10] follows the usual
//! aesthetic-predictor convention; adjust `thresholds.aesthetic` if your
//! scorer uses a different scale.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::accelerate::AccelerationPolicy;
use crate::filters::{Bounds, FilterRule, MissingPolicy};
use crate::media::{FfmpegConfig, SamplePlan};
use crate::metrics::{CostMode, TargetShape, DEFAULT_DOWNSCALE_EDGE, DEFAULT_NGRAM};
use crate::model::Metric;
use crate::pipeline::Stage;
use crate::selection::QualityWeights;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading config {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("parsing config: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

fn default_char_repetition() -> Option<Bounds> {
    Some(Bounds::max(0.3))
}
fn default_similarity() -> Option<Bounds> {
    Some(Bounds::min(0.2))
}
fn default_aesthetic() -> Option<Bounds> {
    Some(Bounds::min(4.0))
}
fn default_ocr() -> Option<Bounds> {
    Some(Bounds::max(0.05))
}
fn default_motion() -> Option<Bounds> {
    Some(Bounds::band(0.05, 0.7))
}
fn default_resolution() -> Option<Bounds> {
    Some(Bounds::min(256.0))
}

/// Per-metric bounds. An explicit `null` disables filtering for that metric
/// (the metric is still computed when its stage runs).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Thresholds {
    #[serde(default = "default_char_repetition")]
    pub char_repetition: Option<Bounds>,
    #[serde(default = "default_similarity")]
    pub frame_text_similarity: Option<Bounds>,
    #[serde(default = "default_aesthetic")]
    pub aesthetic: Option<Bounds>,
    #[serde(default = "default_ocr")]
    pub ocr_area_ratio: Option<Bounds>,
    #[serde(default = "default_motion")]
    pub motion_score: Option<Bounds>,
    /// Minimum short side in pixels.
    #[serde(default = "default_resolution")]
    pub resolution: Option<Bounds>,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds {
            char_repetition: default_char_repetition(),
            frame_text_similarity: default_similarity(),
            aesthetic: default_aesthetic(),
            ocr_area_ratio: default_ocr(),
            motion_score: default_motion(),
            resolution: default_resolution(),
        }
    }
}

impl Thresholds {
    pub fn get(&self, metric: Metric) -> Option<Bounds> {
        match metric {
            Metric::CharRepetition => self.char_repetition,
            Metric::FrameTextSimilarity => self.frame_text_similarity,
            Metric::Aesthetic => self.aesthetic,
            Metric::OcrAreaRatio => self.ocr_area_ratio,
            Metric::MotionScore => self.motion_score,
            Metric::Resolution => self.resolution,
        }
    }

    pub fn set(&mut self, metric: Metric, bounds: Option<Bounds>) {
        let slot = match metric {
            Metric::CharRepetition => &mut self.char_repetition,
            Metric::FrameTextSimilarity => &mut self.frame_text_similarity,
            Metric::Aesthetic => &mut self.aesthetic,
            Metric::OcrAreaRatio => &mut self.ocr_area_ratio,
            Metric::MotionScore => &mut self.motion_score,
            Metric::Resolution => &mut self.resolution,
        };
        *slot = bounds;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplingConfig {
    /// Frames handed to providers (similarity, aesthetics, OCR, captioning).
    pub max_sampled_frames: u32,
    /// Edge of the square luma grid motion is measured on.
    pub downscale_edge: u32,
    /// Wall-clock rate motion frames are taken at; `null` samples motion
    /// frames uniformly by index like the provider frames.
    pub motion_sample_fps: Option<f64>,
    /// n-gram length for caption repetition.
    pub char_ngram: usize,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        SamplingConfig {
            max_sampled_frames: 16,
            downscale_edge: DEFAULT_DOWNSCALE_EDGE,
            motion_sample_fps: Some(8.0),
            char_ngram: DEFAULT_NGRAM,
        }
    }
}

impl SamplingConfig {
    pub fn provider_plan(&self) -> SamplePlan {
        SamplePlan::uniform(self.max_sampled_frames)
    }

    pub fn motion_plan(&self) -> SamplePlan {
        match self.motion_sample_fps {
            Some(fps) => SamplePlan::fixed_rate(self.max_sampled_frames, fps),
            None => SamplePlan::uniform(self.max_sampled_frames),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectionConfig {
    pub cost_mode: CostMode,
    pub weights: QualityWeights,
    /// Solve the budget exactly (small post-filter sets only).
    pub exact: bool,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        SelectionConfig {
            cost_mode: CostMode::TargetShape,
            weights: QualityWeights::default(),
            exact: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Branches {
    pub captioned: Vec<Stage>,
    pub uncaptioned: Vec<Stage>,
    pub shared_tail: Vec<Stage>,
}

impl Default for Branches {
    fn default() -> Self {
        use Stage::*;
        Branches {
            captioned: vec![CharRepetition, Resolution, Similarity],
            uncaptioned: vec![Captioning, CharRepetition, Similarity, Aesthetic, Ocr, Resolution, Motion],
            shared_tail: vec![Accelerate, BudgetSelect, Report],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProviderConfig {
    /// Shell commands launching scorer sidecars.
    pub sidecars: Vec<String>,
    /// Precomputed score files; they answer before any sidecar.
    pub score_files: Vec<PathBuf>,
    pub timeout_s: f64,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        ProviderConfig {
            sidecars: Vec::new(),
            score_files: Vec::new(),
            timeout_s: 120.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(default)]
    pub thresholds: Thresholds,
    #[serde(default)]
    pub missing_metric: MissingPolicy,
    #[serde(default)]
    pub sampling: SamplingConfig,
    #[serde(default)]
    pub acceleration: AccelerationPolicy,
    /// Total pixel budget across selected clips.
    pub budget: u64,
    /// Training clip shape `[frames, height, width]` used for cost.
    #[serde(default = "default_target")]
    pub target_shape: TargetShape,
    #[serde(default)]
    pub selection: SelectionConfig,
    #[serde(default)]
    pub branches: Branches,
    #[serde(default)]
    pub providers: ProviderConfig,
    #[serde(default = "default_bins")]
    pub histogram_bins: usize,
    #[serde(default)]
    pub media: FfmpegConfig,
    /// Worker threads for record processing; 0 means one per core.
    #[serde(default)]
    pub workers: usize,
}

fn default_target() -> TargetShape {
    TargetShape::LOW
}

fn default_bins() -> usize {
    20
}

impl PipelineConfig {
    /// Defaults everywhere, with the given budget.
    pub fn with_budget(budget: u64) -> Self {
        PipelineConfig {
            thresholds: Thresholds::default(),
            missing_metric: MissingPolicy::Drop,
            sampling: SamplingConfig::default(),
            acceleration: AccelerationPolicy::default(),
            budget,
            target_shape: default_target(),
            selection: SelectionConfig::default(),
            branches: Branches::default(),
            providers: ProviderConfig::default(),
            histogram_bins: default_bins(),
            media: FfmpegConfig::default(),
            workers: 0,
        }
    }

    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let config: PipelineConfig = serde_json::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&text)
    }

    /// The filter rule a stage applies, if its metric has bounds.
    pub fn rule_for(&self, stage: Stage) -> Option<FilterRule> {
        let metric = stage.metric()?;
        let bounds = self.thresholds.get(metric)?;
        FilterRule::new(metric, bounds, stage.name()).ok()
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |m: String| Err(ConfigError::Invalid(m));
        for metric in Metric::ALL {
            if let Some(bounds) = self.thresholds.get(metric) {
                FilterRule::new(metric, bounds, metric.name()).map_err(|e| ConfigError::Invalid(e.to_string()))?;
            }
        }
        if self.budget == 0 {
            return invalid("budget must be positive".into());
        }
        self.acceleration.validate().map_err(ConfigError::Invalid)?;
        self.selection
            .weights
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if self.sampling.max_sampled_frames == 0 {
            return invalid("sampling.max_sampled_frames must be at least 1".into());
        }
        if self.sampling.downscale_edge == 0 {
            return invalid("sampling.downscale_edge must be positive".into());
        }
        if self.sampling.char_ngram == 0 {
            return invalid("sampling.char_ngram must be at least 1".into());
        }
        if let Some(fps) = self.sampling.motion_sample_fps {
            if !(fps.is_finite() && fps > 0.0) {
                return invalid(format!("sampling.motion_sample_fps {fps} must be positive"));
            }
        }
        if self.histogram_bins == 0 {
            return invalid("histogram_bins must be positive".into());
        }
        if !(self.providers.timeout_s.is_finite() && self.providers.timeout_s > 0.0) {
            return invalid("providers.timeout_s must be positive".into());
        }
        self.validate_branches()
    }

    fn validate_branches(&self) -> Result<(), ConfigError> {
        let b = &self.branches;
        let invalid = |m: String| Err(ConfigError::Invalid(m));
        for (name, stages) in [("captioned", &b.captioned), ("uncaptioned", &b.uncaptioned)] {
            let mut seen = BTreeSet::new();
            for s in stages.iter() {
                if !s.is_branch_stage() {
                    return invalid(format!("stage {s} cannot appear in the {name} branch"));
                }
                if !seen.insert(*s) {
                    return invalid(format!("stage {s} repeated in the {name} branch"));
                }
            }
        }
        if b.captioned.contains(&Stage::Captioning) {
            return invalid("captioning may only appear in the uncaptioned branch".into());
        }
        let Some(cap_at) = b.uncaptioned.iter().position(|s| *s == Stage::Captioning) else {
            return invalid("the uncaptioned branch must include captioning".into());
        };
        if let Some(s) = b.uncaptioned[..cap_at].iter().find(|s| s.needs_caption()) {
            return invalid(format!("stage {s} needs a caption but runs before captioning"));
        }
        let tail = &b.shared_tail;
        if tail.iter().any(|s| s.is_branch_stage()) {
            return invalid("shared_tail may only contain accelerate, budget_select and report".into());
        }
        let selects = tail.iter().filter(|s| **s == Stage::BudgetSelect).count();
        if selects != 1 {
            return invalid("shared_tail must contain budget_select exactly once".into());
        }
        let valid_shapes: [&[Stage]; 4] = [
            &[Stage::BudgetSelect],
            &[Stage::BudgetSelect, Stage::Report],
            &[Stage::Accelerate, Stage::BudgetSelect],
            &[Stage::Accelerate, Stage::BudgetSelect, Stage::Report],
        ];
        if !valid_shapes.contains(&tail.as_slice()) {
            return invalid(format!(
                "shared_tail must be [accelerate?, budget_select, report?], got {:?}",
                tail.iter().map(|s| s.name()).collect::<Vec<_>>()
            ));
        }
        Ok(())
    }
}
