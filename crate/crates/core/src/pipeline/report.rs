//! Score distributions and run summaries.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::model::{Action, Metric, Status, VideoRecord};

/// Fixed-width histogram over a metric's full range. Bins are half-open
/// `[lo, hi)` except the last, which also includes the range maximum.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    pub metric: Metric,
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
    pub total: u64,
    pub quantiles: Quantiles,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct Quantiles {
    pub p10: Option<f64>,
    pub p50: Option<f64>,
    pub p90: Option<f64>,
}

/// Linear interpolation between closest ranks; `sorted` must be ascending.
pub fn quantile(sorted: &[f64], q: f64) -> Option<f64> {
    if sorted.is_empty() {
        return None;
    }
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    Some(sorted[lo] + (sorted[hi] - sorted[lo]) * frac)
}

impl Histogram {
    pub fn build(metric: Metric, values: &[f64], bins: usize) -> Histogram {
        assert!(bins > 0, "histogram needs at least one bin");
        let (lo, hi) = metric.range();
        let edges: Vec<f64> = (0..=bins)
            .map(|i| if i == bins { hi } else { lo + (hi - lo) * i as f64 / bins as f64 })
            .collect();
        let mut counts = vec![0u64; bins];
        for &v in values {
            counts[bin_index(&edges, v)] += 1;
        }
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        Histogram {
            metric,
            edges,
            counts,
            total: values.len() as u64,
            quantiles: Quantiles {
                p10: quantile(&sorted, 0.1),
                p50: quantile(&sorted, 0.5),
                p90: quantile(&sorted, 0.9),
            },
        }
    }

    /// `bin_lo,bin_hi,count` rows. With no values only the header is written.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("bin_lo,bin_hi,count\n");
        if self.total == 0 {
            return out;
        }
        for (i, count) in self.counts.iter().enumerate() {
            out.push_str(&format!("{},{},{}\n", self.edges[i], self.edges[i + 1], count));
        }
        out
    }
}

fn bin_index(edges: &[f64], v: f64) -> usize {
    let bins = edges.len() - 1;
    let (lo, hi) = (edges[0], edges[bins]);
    let mut idx = (((v - lo) * bins as f64 / (hi - lo)).floor().max(0.0) as usize).min(bins - 1);
    // settle floating-point disagreements against the published edges
    while idx > 0 && v < edges[idx] {
        idx -= 1;
    }
    while idx + 1 < bins && v >= edges[idx + 1] {
        idx += 1;
    }
    idx
}

/// One histogram per bounded metric over every record carrying it, kept or
/// dropped.
pub fn emit_histograms(records: &[VideoRecord], bins: usize) -> Vec<Histogram> {
    Metric::SCORES
        .into_iter()
        .map(|metric| {
            let values: Vec<f64> = records.iter().filter_map(|r| r.metrics.get(metric)).collect();
            Histogram::build(metric, &values, bins)
        })
        .collect()
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct RecordCounts {
    pub input: usize,
    pub derived: usize,
    pub kept: usize,
    pub dropped: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct SelectionSummary {
    pub algorithm: String,
    pub budget: u64,
    pub candidates: usize,
    pub selected: usize,
    pub used: u64,
    pub total_quality: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HistogramSummary {
    pub bins: usize,
    pub total: u64,
    #[serde(flatten)]
    pub quantiles: Quantiles,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Summary {
    pub records: RecordCounts,
    pub routes: BTreeMap<String, usize>,
    /// Drops per stage.
    pub stage_drops: BTreeMap<String, usize>,
    /// Drops per `stage/reason`.
    pub drop_reasons: BTreeMap<String, usize>,
    pub captions_generated: usize,
    pub accelerated: usize,
    pub provider_failures: usize,
    pub selection: SelectionSummary,
    pub histograms: BTreeMap<String, HistogramSummary>,
}

impl Summary {
    pub fn tally(records: &[VideoRecord], input: usize) -> Summary {
        let mut s = Summary {
            records: RecordCounts {
                input,
                derived: records.len().saturating_sub(input),
                ..Default::default()
            },
            ..Default::default()
        };
        for r in records {
            match r.status {
                Status::Dropped => s.records.dropped += 1,
                _ => s.records.kept += 1,
            }
            for d in &r.decisions {
                match (d.stage.as_str(), d.action) {
                    ("route", _) => *s.routes.entry(d.reason.clone()).or_default() += 1,
                    (_, Action::Drop) => {
                        *s.stage_drops.entry(d.stage.clone()).or_default() += 1;
                        *s.drop_reasons.entry(format!("{}/{}", d.stage, d.reason)).or_default() += 1;
                        if d.reason == "provider_error" {
                            s.provider_failures += 1;
                        }
                    }
                    (_, Action::Transform) if d.reason == "caption_generated" => s.captions_generated += 1,
                    (_, Action::Transform) if d.reason == "accelerated" => s.accelerated += 1,
                    _ => {}
                }
            }
        }
        s
    }

    pub fn with_histograms(mut self, hists: &[Histogram]) -> Self {
        for h in hists {
            self.histograms.insert(
                h.metric.name().to_string(),
                HistogramSummary {
                    bins: h.counts.len(),
                    total: h.total,
                    quantiles: h.quantiles,
                },
            );
        }
        self
    }
}
