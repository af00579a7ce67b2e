//! Subset selection under a total pixel budget.
//!
//! The main path is the classic greedy-by-density heuristic combined with the
//! best single item, which is guaranteed at least half of the optimal 0/1
//! knapsack value. [`exact_select`] solves small instances optimally.

use std::cmp::Ordering;
use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Metric, MetricSet};

pub const MAX_EXACT_ITEMS: usize = 25;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SelectionError {
    #[error("weighted metric {0} is absent")]
    MissingMetric(Metric),
    #[error("{0} items is too many for exact selection (limit {MAX_EXACT_ITEMS}); use the greedy selector")]
    TooLarge(usize),
    #[error("invalid weight for {metric}: {value}")]
    BadWeight { metric: Metric, value: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionItem {
    pub record_id: String,
    pub quality: f64,
    pub cost: u64,
}

impl SelectionItem {
    pub fn new(record_id: impl Into<String>, quality: f64, cost: u64) -> Self {
        SelectionItem {
            record_id: record_id.into(),
            quality,
            cost,
        }
    }
}

/// Nonnegative per-metric weights for [`composite_quality`], plus the motion
/// band that defines "moderate" motion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QualityWeights {
    pub char_repetition: f64,
    pub frame_text_similarity: f64,
    pub aesthetic: f64,
    pub ocr_area_ratio: f64,
    pub motion_score: f64,
    pub motion_band: [f64; 2],
}

impl Default for QualityWeights {
    fn default() -> Self {
        QualityWeights {
            char_repetition: 0.0,
            frame_text_similarity: 1.0,
            aesthetic: 1.0,
            ocr_area_ratio: 0.0,
            motion_score: 0.0,
            motion_band: [0.05, 0.7],
        }
    }
}

impl QualityWeights {
    pub fn zero() -> Self {
        QualityWeights {
            frame_text_similarity: 0.0,
            aesthetic: 0.0,
            ..Default::default()
        }
    }

    pub fn weight(&self, metric: Metric) -> f64 {
        match metric {
            Metric::CharRepetition => self.char_repetition,
            Metric::FrameTextSimilarity => self.frame_text_similarity,
            Metric::Aesthetic => self.aesthetic,
            Metric::OcrAreaRatio => self.ocr_area_ratio,
            Metric::MotionScore => self.motion_score,
            Metric::Resolution => 0.0,
        }
    }

    /// Metrics with a nonzero weight, in declaration order.
    pub fn weighted(&self) -> Vec<Metric> {
        Metric::SCORES.into_iter().filter(|&m| self.weight(m) > 0.0).collect()
    }

    pub fn validate(&self) -> Result<(), SelectionError> {
        for m in Metric::SCORES {
            let w = self.weight(m);
            if !(w.is_finite() && w >= 0.0) {
                return Err(SelectionError::BadWeight { metric: m, value: w });
            }
        }
        let [lo, hi] = self.motion_band;
        if !(0.0..=1.0).contains(&lo) || !(0.0..=1.0).contains(&hi) || lo >= hi {
            return Err(SelectionError::BadWeight {
                metric: Metric::MotionScore,
                value: hi - lo,
            });
        }
        Ok(())
    }

    /// Maps a metric value onto [0, 1] with larger meaning better.
    pub fn oriented(&self, metric: Metric, value: f64) -> f64 {
        match metric {
            Metric::CharRepetition | Metric::OcrAreaRatio => 1.0 - value,
            Metric::FrameTextSimilarity => (value + 1.0) / 2.0,
            Metric::Aesthetic => value / 10.0,
            Metric::MotionScore => {
                let [lo, hi] = self.motion_band;
                let center = (lo + hi) / 2.0;
                let half = (hi - lo) / 2.0;
                (1.0 - (value - center).abs() / half).clamp(0.0, 1.0)
            }
            Metric::Resolution => 0.0,
        }
    }
}

/// Weighted sum of oriented metrics. Metrics with zero weight may be absent.
pub fn composite_quality(metrics: &MetricSet, weights: &QualityWeights) -> Result<f64, SelectionError> {
    let mut total = 0.0;
    for metric in Metric::SCORES {
        let w = weights.weight(metric);
        if w == 0.0 {
            continue;
        }
        let v = metrics.get(metric).ok_or(SelectionError::MissingMetric(metric))?;
        total += w * weights.oriented(metric, v);
    }
    Ok(total.max(0.0))
}

fn by_density(a: &SelectionItem, b: &SelectionItem) -> Ordering {
    // quality/cost descending without division: qa*cb vs qb*ca
    let lhs = a.quality * b.cost as f64;
    let rhs = b.quality * a.cost as f64;
    rhs.total_cmp(&lhs).then_with(|| a.record_id.cmp(&b.record_id))
}

fn total_quality<'a>(items: impl IntoIterator<Item = &'a SelectionItem>) -> f64 {
    items.into_iter().map(|i| i.quality).sum()
}

/// Greedy by quality/cost (ties by id), then the better of that set and the
/// best single affordable item.
pub fn select_budget(items: &[SelectionItem], budget: u64) -> BTreeSet<String> {
    let mut order: Vec<&SelectionItem> = items.iter().filter(|i| i.cost > 0).collect();
    order.sort_by(|a, b| by_density(a, b));

    let mut used = 0u64;
    let mut greedy: Vec<&SelectionItem> = Vec::new();
    for item in &order {
        if let Some(next) = used.checked_add(item.cost).filter(|&n| n <= budget) {
            used = next;
            greedy.push(item);
        }
    }

    let best_single = order
        .iter()
        .filter(|i| i.cost <= budget)
        .max_by(|a, b| a.quality.total_cmp(&b.quality).then_with(|| b.record_id.cmp(&a.record_id)));

    let greedy_quality = total_quality(greedy.iter().copied());
    match best_single {
        Some(single) if single.quality > greedy_quality => BTreeSet::from([single.record_id.clone()]),
        _ => greedy.into_iter().map(|i| i.record_id.clone()).collect(),
    }
}

/// All `(cost, quality, mask)` subsets of `items`, skipping those over budget.
fn enumerate_half(items: &[&SelectionItem], budget: u64) -> Vec<(u64, f64, u32)> {
    let mut out = Vec::with_capacity(1 << items.len());
    for mask in 0u32..(1 << items.len()) {
        let mut cost = 0u64;
        let mut quality = 0.0;
        let mut ok = true;
        for (bit, item) in items.iter().enumerate() {
            if mask & (1 << bit) != 0 {
                match cost.checked_add(item.cost) {
                    Some(c) if c <= budget => {
                        cost = c;
                        quality += item.quality;
                    }
                    _ => {
                        ok = false;
                        break;
                    }
                }
            }
        }
        if ok {
            out.push((cost, quality, mask));
        }
    }
    out
}

/// Maximum-quality feasible subset by meet-in-the-middle enumeration.
pub fn exact_select(items: &[SelectionItem], budget: u64) -> Result<BTreeSet<String>, SelectionError> {
    if items.len() > MAX_EXACT_ITEMS {
        return Err(SelectionError::TooLarge(items.len()));
    }
    let mut sorted: Vec<&SelectionItem> = items.iter().collect();
    sorted.sort_by(|a, b| a.record_id.cmp(&b.record_id));
    let (left, right) = sorted.split_at(sorted.len() / 2);

    let lhs = enumerate_half(left, budget);
    let mut rhs = enumerate_half(right, budget);
    rhs.sort_by(|a, b| a.0.cmp(&b.0).then(a.2.cmp(&b.2)));
    // best[i] = index into rhs of the highest quality among rhs[..=i]
    let mut best: Vec<usize> = Vec::with_capacity(rhs.len());
    for (i, r) in rhs.iter().enumerate() {
        let keep = match best.last() {
            Some(&j) if rhs[j].1 >= r.1 => j,
            _ => i,
        };
        best.push(keep);
    }

    let mut answer: Option<(f64, u32, u32)> = None;
    for &(cost, quality, lmask) in &lhs {
        let room = budget - cost;
        let upto = rhs.partition_point(|r| r.0 <= room);
        if upto == 0 {
            continue;
        }
        let r = &rhs[best[upto - 1]];
        let total = quality + r.1;
        if answer.map_or(true, |(q, _, _)| total > q) {
            answer = Some((total, lmask, r.2));
        }
    }
    let Some((_, lmask, rmask)) = answer else {
        return Ok(BTreeSet::new());
    };
    let pick = |half: &[&SelectionItem], mask: u32| {
        half.iter()
            .enumerate()
            .filter(move |(bit, _)| mask & (1 << bit) != 0)
            .map(|(_, i)| i.record_id.clone())
            .collect::<Vec<_>>()
    };
    let mut chosen: BTreeSet<String> = pick(left, lmask).into_iter().collect();
    chosen.extend(pick(right, rmask));
    Ok(chosen)
}
