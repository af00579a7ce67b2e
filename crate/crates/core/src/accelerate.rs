//! Speeds up slow, high-resolution clips by re-timing every frame, then
//! re-measures their motion.

use serde::{Deserialize, Serialize};

use crate::media::{accelerated_path, MediaBackend, SamplePlan};
use crate::metrics::motion_score_with;
use crate::model::{Action, DecisionEntry, Metric, VideoRecord};

pub const STAGE: &str = "accelerate";

/// Whether the accelerated clip replaces the original record or is emitted
/// as an extra record next to it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AccelerationMode {
    #[default]
    Replace,
    Alongside,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AccelerationPolicy {
    pub motion_low: f64,
    pub min_short_side: u32,
    pub min_duration_s: f64,
    pub speed_factor: f64,
    pub mode: AccelerationMode,
}

impl Default for AccelerationPolicy {
    fn default() -> Self {
        AccelerationPolicy {
            motion_low: 0.05,
            min_short_side: 512,
            min_duration_s: 4.0,
            speed_factor: 2.0,
            mode: AccelerationMode::Replace,
        }
    }
}

impl AccelerationPolicy {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.speed_factor.is_finite() && self.speed_factor >= 1.0) {
            return Err(format!("speed_factor {} must be at least 1", self.speed_factor));
        }
        if !(0.0..=1.0).contains(&self.motion_low) {
            return Err(format!("motion_low {} outside [0, 1]", self.motion_low));
        }
        if !(self.min_duration_s.is_finite() && self.min_duration_s >= 0.0) {
            return Err(format!("min_duration_s {} must be nonnegative", self.min_duration_s));
        }
        Ok(())
    }

    /// Whether a record qualifies. Dropped records, records missing motion or
    /// media, and records already accelerated never do.
    pub fn qualifies(&self, record: &VideoRecord) -> bool {
        if record.is_dropped() || already_accelerated(record) {
            return false;
        }
        let (Some(motion), Some(media)) = (record.metrics.get(Metric::MotionScore), record.media) else {
            return false;
        };
        motion < self.motion_low && media.short_side() >= self.min_short_side && media.duration >= self.min_duration_s
    }
}

fn already_accelerated(record: &VideoRecord) -> bool {
    record
        .decisions
        .iter()
        .any(|d| d.stage == STAGE && d.action == Action::Transform)
}

pub fn select_candidates<'a>(records: &'a [VideoRecord], policy: &AccelerationPolicy) -> Vec<&'a VideoRecord> {
    records.iter().filter(|r| policy.qualifies(r)).collect()
}

/// Outcome of [`accelerate`].
#[derive(Debug, Clone, PartialEq)]
pub struct Accelerated {
    pub record: VideoRecord,
    /// The untouched original, returned in alongside mode.
    pub original: Option<VideoRecord>,
}

/// Re-times the record's clip by the policy's factor, re-probes it and
/// recomputes motion with `motion_plan`. Failures leave the record in its
/// original form with a warning entry.
pub fn accelerate(
    record: VideoRecord,
    policy: &AccelerationPolicy,
    backend: &dyn MediaBackend,
    motion_plan: &SamplePlan,
    downscale_edge: u32,
) -> Accelerated {
    let factor = policy.speed_factor;
    let out_path = accelerated_path(&record.media_path, factor);
    let old_motion = record.metrics.get(Metric::MotionScore);

    let attempt = backend
        .reencode_speedup(&record.media_path, &out_path, factor)
        .map_err(|e| (e.code(), e.to_string()))
        .and_then(|info| {
            let frames = backend
                .sample_frames(&out_path, motion_plan)
                .map_err(|e| (e.code(), e.to_string()))?;
            let motion = motion_score_with(&frames, downscale_edge).map_err(|e| ("metric_error", e.to_string()))?;
            Ok((info, motion))
        });

    match attempt {
        Ok((info, motion)) => {
            let mut fast = record.clone();
            if policy.mode == AccelerationMode::Alongside {
                fast.id = format!("{}.x{factor}", record.id);
            }
            fast.media_path = out_path.clone();
            fast.media = Some(info);
            fast.metrics
                .set(Metric::MotionScore, motion)
                .expect("motion score is within [0, 1]");
            let detail = match old_motion {
                Some(old) => format!("factor={factor} motion {old} -> {motion} path={}", out_path.display()),
                None => format!("factor={factor} motion -> {motion} path={}", out_path.display()),
            };
            fast.record(
                DecisionEntry::new(STAGE, Action::Transform, "accelerated")
                    .with_value(motion)
                    .with_detail(detail),
            );
            let original = (policy.mode == AccelerationMode::Alongside).then_some(record);
            Accelerated { record: fast, original }
        }
        Err((code, message)) => {
            let mut record = record;
            record.record(
                DecisionEntry::new(STAGE, Action::Keep, "accelerate_failed").with_detail(format!("{code}: {message}")),
            );
            Accelerated { record, original: None }
        }
    }
}
