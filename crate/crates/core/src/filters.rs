//! Threshold rules over record metrics, applied as ordered chains with an
//! audit entry per evaluated rule.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Action, DecisionEntry, Metric, VideoRecord};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RuleError {
    #[error("rule {stage}: no bound given")]
    NoBounds { stage: String },
    #[error("rule {stage}: min {min} exceeds max {max}")]
    Inverted { stage: String, min: f64, max: f64 },
    #[error("rule {stage}: bound {value} outside {metric} range [{lo}, {hi}]")]
    OutOfRange {
        stage: String,
        metric: Metric,
        value: f64,
        lo: f64,
        hi: f64,
    },
    #[error("unknown metric {0:?}")]
    UnknownMetric(String),
}

/// Inclusive bounds; either side may be open.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bounds {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max: Option<f64>,
}

impl Bounds {
    pub fn min(min: f64) -> Self {
        Bounds { min: Some(min), max: None }
    }

    pub fn max(max: f64) -> Self {
        Bounds { min: None, max: Some(max) }
    }

    pub fn band(min: f64, max: f64) -> Self {
        Bounds {
            min: Some(min),
            max: Some(max),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterRule {
    pub metric: Metric,
    pub bounds: Bounds,
    pub stage_name: String,
}

impl FilterRule {
    pub fn new(metric: Metric, bounds: Bounds, stage_name: impl Into<String>) -> Result<Self, RuleError> {
        let rule = FilterRule {
            metric,
            bounds,
            stage_name: stage_name.into(),
        };
        rule.validate()?;
        Ok(rule)
    }

    /// Builds a rule from a metric name as written in configuration.
    pub fn named(metric: &str, bounds: Bounds, stage_name: impl Into<String>) -> Result<Self, RuleError> {
        let metric = Metric::from_name(metric).ok_or_else(|| RuleError::UnknownMetric(metric.to_string()))?;
        FilterRule::new(metric, bounds, stage_name)
    }

    pub fn validate(&self) -> Result<(), RuleError> {
        let stage = || self.stage_name.clone();
        if self.bounds.min.is_none() && self.bounds.max.is_none() {
            return Err(RuleError::NoBounds { stage: stage() });
        }
        let (lo, hi) = self.metric.range();
        for value in [self.bounds.min, self.bounds.max].into_iter().flatten() {
            if !(value.is_finite() && value >= lo && value <= hi) {
                return Err(RuleError::OutOfRange {
                    stage: stage(),
                    metric: self.metric,
                    value,
                    lo,
                    hi,
                });
            }
        }
        if let (Some(min), Some(max)) = (self.bounds.min, self.bounds.max) {
            if min > max {
                return Err(RuleError::Inverted { stage: stage(), min, max });
            }
        }
        Ok(())
    }

    /// Decision for a present value.
    pub fn judge(&self, value: f64) -> DecisionEntry {
        let entry = |action, reason: &str| {
            DecisionEntry::new(self.stage_name.clone(), action, reason)
                .with_value(value)
                .with_detail(format!("{}={value}", self.metric))
        };
        match (self.bounds.min, self.bounds.max) {
            (Some(min), _) if value < min => entry(Action::Drop, "below_min"),
            (_, Some(max)) if value > max => entry(Action::Drop, "above_max"),
            _ => entry(Action::Keep, "in_range"),
        }
    }
}

/// What to do when a rule's metric is absent on a record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MissingPolicy {
    #[default]
    Drop,
    Keep,
}

pub fn apply_rule(mut record: VideoRecord, rule: &FilterRule, missing: MissingPolicy) -> VideoRecord {
    let entry = match record.metric(rule.metric) {
        Some(v) => rule.judge(v),
        None => {
            let action = match missing {
                MissingPolicy::Drop => Action::Drop,
                MissingPolicy::Keep => Action::Keep,
            };
            DecisionEntry::new(rule.stage_name.clone(), action, "missing_metric")
                .with_detail(format!("{} absent", rule.metric))
        }
    };
    record.record(entry);
    record
}

/// Applies rules in order to one record, stopping at the first drop.
pub fn apply_rules(mut record: VideoRecord, rules: &[FilterRule], missing: MissingPolicy) -> VideoRecord {
    for rule in rules {
        if record.is_dropped() {
            break;
        }
        record = apply_rule(record, rule, missing);
    }
    record
}

/// Applies the chain to every record in parallel, preserving input order.
/// Records already dropped pass through untouched.
pub fn apply_chain(records: Vec<VideoRecord>, rules: &[FilterRule], missing: MissingPolicy) -> Vec<VideoRecord> {
    records
        .into_par_iter()
        .map(|r| apply_rules(r, rules, missing))
        .collect()
}
