//! End-to-end orchestration: route each record by caption presence, run its
//! branch of scoring and filter stages, then the shared tail of acceleration,
//! budget selection and reporting.
//!
//! Records are processed on a fixed-size worker pool and reassembled in input
//! order, so outputs do not depend on the worker count.

mod report;

use std::fmt;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use tempfile::TempDir;
use thiserror::Error;

use crate::accelerate::{self, AccelerationMode};
use crate::config::{ConfigError, PipelineConfig};
use crate::filters::apply_rule;
use crate::media::{write_png_frames, Frame, MediaBackend, MediaError};
use crate::metrics::{self, MetricError};
use crate::model::{write_manifest, Action, CaptionSource, DecisionEntry, Metric, Status, VideoRecord};
use crate::scorer::{Payload, RequestFailure, ScoreOp, ScoreValue, ScorerError, ScorerGateway};
use crate::selection::{self, SelectionItem, MAX_EXACT_ITEMS};

pub use report::{emit_histograms, quantile, Histogram, HistogramSummary, Quantiles, RecordCounts, SelectionSummary, Summary};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Captioning,
    CharRepetition,
    Similarity,
    Aesthetic,
    Ocr,
    Resolution,
    Motion,
    Accelerate,
    BudgetSelect,
    Report,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Captioning => "captioning",
            Stage::CharRepetition => "char_repetition",
            Stage::Similarity => "similarity",
            Stage::Aesthetic => "aesthetic",
            Stage::Ocr => "ocr",
            Stage::Resolution => "resolution",
            Stage::Motion => "motion",
            Stage::Accelerate => "accelerate",
            Stage::BudgetSelect => "budget_select",
            Stage::Report => "report",
        }
    }

    pub fn metric(self) -> Option<Metric> {
        match self {
            Stage::CharRepetition => Some(Metric::CharRepetition),
            Stage::Similarity => Some(Metric::FrameTextSimilarity),
            Stage::Aesthetic => Some(Metric::Aesthetic),
            Stage::Ocr => Some(Metric::OcrAreaRatio),
            Stage::Resolution => Some(Metric::Resolution),
            Stage::Motion => Some(Metric::MotionScore),
            _ => None,
        }
    }

    pub fn for_metric(metric: Metric) -> Stage {
        match metric {
            Metric::CharRepetition => Stage::CharRepetition,
            Metric::FrameTextSimilarity => Stage::Similarity,
            Metric::Aesthetic => Stage::Aesthetic,
            Metric::OcrAreaRatio => Stage::Ocr,
            Metric::Resolution => Stage::Resolution,
            Metric::MotionScore => Stage::Motion,
        }
    }

    pub fn is_branch_stage(self) -> bool {
        self == Stage::Captioning || self.metric().is_some()
    }

    pub fn needs_caption(self) -> bool {
        matches!(self, Stage::CharRepetition | Stage::Similarity)
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    Captioned,
    Uncaptioned,
}

/// Records that arrived with a caption take the captioned branch; empty
/// captions were already normalised to absent at ingest.
pub fn route(record: &VideoRecord) -> Branch {
    if record.caption_source == CaptionSource::Original && record.caption.is_some() {
        Branch::Captioned
    } else {
        Branch::Uncaptioned
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{failed} of {total} records failed on provider errors; first: {first}")]
    SystemicProviderFailure {
        failed: usize,
        total: usize,
        first: String,
    },
    #[error("writing outputs: {0}")]
    Io(#[from] io::Error),
}

#[derive(Debug)]
enum StageFailure {
    Media(MediaError),
    Scorer(ScorerError),
    Metric(MetricError),
    EmptyCaption,
}

impl StageFailure {
    fn reason(&self) -> &'static str {
        match self {
            StageFailure::Media(_) => "media_error",
            StageFailure::Scorer(_) => "provider_error",
            StageFailure::Metric(_) => "metric_error",
            StageFailure::EmptyCaption => "empty_caption",
        }
    }

    fn detail(&self) -> String {
        match self {
            StageFailure::Media(e) => format!("{}: {e}", e.code()),
            StageFailure::Scorer(e) => format!("{}: {e}", e.code()),
            StageFailure::Metric(e) => e.to_string(),
            StageFailure::EmptyCaption => "captioner returned an empty caption".into(),
        }
    }
}

impl From<RequestFailure<MediaError>> for StageFailure {
    fn from(f: RequestFailure<MediaError>) -> Self {
        match f {
            RequestFailure::Payload(e) => StageFailure::Media(e),
            RequestFailure::Scorer(e) => StageFailure::Scorer(e),
        }
    }
}

fn unexpected(op: ScoreOp) -> StageFailure {
    StageFailure::Scorer(ScorerError::ProtocolViolation(format!("wrong value type for {op}")))
}

/// Per-record working state: cached provider frames and their PNG copies.
struct Work<'p> {
    pipeline: &'p Pipeline<'p>,
    record: VideoRecord,
    frames: Option<Vec<Frame>>,
    frame_files: Option<(TempDir, Vec<PathBuf>)>,
}

impl<'p> Work<'p> {
    fn new(pipeline: &'p Pipeline<'p>, record: VideoRecord) -> Self {
        Work {
            pipeline,
            record,
            frames: None,
            frame_files: None,
        }
    }

    fn media(&mut self) -> Result<crate::model::MediaInfo, StageFailure> {
        if let Some(m) = self.record.media {
            return Ok(m);
        }
        let info = self
            .pipeline
            .media
            .probe(&self.record.media_path)
            .map_err(StageFailure::Media)?;
        self.record.media = Some(info);
        Ok(info)
    }

    fn provider_frames(&mut self) -> Result<&[Frame], MediaError> {
        if self.frames.is_none() {
            let plan = self.pipeline.config.sampling.provider_plan();
            self.frames = Some(self.pipeline.media.sample_frames(&self.record.media_path, &plan)?);
        }
        Ok(self.frames.as_deref().unwrap())
    }

    fn frame_payload(&mut self) -> Result<Payload, MediaError> {
        if self.frame_files.is_none() {
            let dir = tempfile::Builder::new()
                .prefix("vidcurate-frames-")
                .tempdir()
                .map_err(|e| MediaError::Unwritable {
                    path: std::env::temp_dir(),
                    message: e.to_string(),
                })?;
            let paths = write_png_frames(self.provider_frames()?, dir.path())?;
            self.frame_files = Some((dir, paths));
        }
        Ok(Payload::frames(self.frame_files.as_ref().unwrap().1.clone()))
    }

    fn ask(&mut self, op: ScoreOp) -> Result<ScoreValue, StageFailure> {
        let gateway = self.pipeline.scorer;
        let id = self.record.id.clone();
        let path = self.record.media_path.clone();
        let value = gateway.request_with(op, &id, || {
            let mut payload = self.frame_payload()?;
            if op == ScoreOp::Caption {
                payload.path = Some(path);
            }
            Ok(payload)
        })?;
        Ok(value)
    }

    fn caption(&mut self) -> Result<(), StageFailure> {
        if self.record.caption.is_some() {
            return Ok(());
        }
        let ScoreValue::Caption(text) = self.ask(ScoreOp::Caption)? else {
            return Err(unexpected(ScoreOp::Caption));
        };
        if text.trim().is_empty() {
            return Err(StageFailure::EmptyCaption);
        }
        self.record.caption = Some(text);
        self.record.caption_source = CaptionSource::Generated;
        self.record.record(DecisionEntry::new(
            Stage::Captioning.name(),
            Action::Transform,
            "caption_generated",
        ));
        Ok(())
    }

    /// Computes `metric` unless it is already present. A metric that cannot
    /// exist for this record (no caption) is left absent.
    fn ensure(&mut self, metric: Metric) -> Result<(), StageFailure> {
        if self.record.metric(metric).is_some() {
            return Ok(());
        }
        let config = &self.pipeline.config;
        let value = match metric {
            Metric::Resolution => {
                self.media()?;
                return Ok(());
            }
            Metric::CharRepetition => match &self.record.caption {
                Some(c) => metrics::char_repetition_ratio(c, config.sampling.char_ngram),
                None => return Ok(()),
            },
            Metric::MotionScore => {
                self.media()?;
                let frames = self
                    .pipeline
                    .media
                    .sample_frames(&self.record.media_path, &config.sampling.motion_plan())
                    .map_err(StageFailure::Media)?;
                metrics::motion_score_with(&frames, config.sampling.downscale_edge).map_err(StageFailure::Metric)?
            }
            Metric::FrameTextSimilarity => {
                let Some(caption) = self.record.caption.clone() else {
                    return Ok(());
                };
                let id = self.record.id.clone();
                let text = self
                    .pipeline
                    .scorer
                    .request_with(ScoreOp::EmbedText, &id, || Ok::<_, MediaError>(Payload::text(caption)))?;
                let ScoreValue::TextEmbedding(text) = text else {
                    return Err(unexpected(ScoreOp::EmbedText));
                };
                let ScoreValue::FrameEmbeddings(frames) = self.ask(ScoreOp::EmbedFrames)? else {
                    return Err(unexpected(ScoreOp::EmbedFrames));
                };
                metrics::similarity_aggregate(&frames, &text).map_err(StageFailure::Metric)?
            }
            Metric::Aesthetic => match self.ask(ScoreOp::Aesthetic)? {
                ScoreValue::Aesthetic(v) => v,
                _ => return Err(unexpected(ScoreOp::Aesthetic)),
            },
            Metric::OcrAreaRatio => {
                let media = self.media()?;
                let ScoreValue::OcrBoxes(boxes) = self.ask(ScoreOp::OcrBoxes)? else {
                    return Err(unexpected(ScoreOp::OcrBoxes));
                };
                metrics::ocr_area_ratio(&boxes, media.width, media.height)
            }
        };
        self.record
            .metrics
            .set(metric, value)
            .map_err(|e| StageFailure::Metric(MetricError::InvalidArgument(e.to_string())))
    }

    fn fail(&mut self, stage: &str, failure: StageFailure) {
        self.record.record(
            DecisionEntry::new(stage, Action::Drop, failure.reason()).with_detail(failure.detail()),
        );
    }

    /// Runs one branch stage. With `filter` unset only scores are computed.
    fn run_stage(&mut self, stage: Stage, filter: bool) {
        let outcome = match stage {
            Stage::Captioning => self.caption(),
            s => match s.metric() {
                Some(m) => self.ensure(m),
                None => Ok(()),
            },
        };
        if let Err(failure) = outcome {
            self.fail(stage.name(), failure);
            return;
        }
        if filter {
            if let Some(rule) = self.pipeline.config.rule_for(stage) {
                let record = std::mem::replace(&mut self.record, VideoRecord::new("_", "_", None));
                self.record = apply_rule(record, &rule, self.pipeline.config.missing_metric);
            }
        }
    }
}

/// Everything a run produces.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub records: Vec<VideoRecord>,
    pub histograms: Vec<Histogram>,
    pub summary: Summary,
}

impl RunOutput {
    /// Writes `manifest.jsonl`, `curated.jsonl`, `dropped.jsonl`,
    /// `histograms/<metric>.csv` and `summary.json` into `dir`.
    pub fn write(&self, dir: &Path) -> io::Result<()> {
        fs::create_dir_all(dir)?;
        let write = |name: &str, recs: &[VideoRecord]| -> io::Result<()> {
            let file = fs::File::create(dir.join(name))?;
            write_manifest(recs, io::BufWriter::new(file))
        };
        write("manifest.jsonl", &self.records)?;
        let (dropped, curated): (Vec<VideoRecord>, Vec<VideoRecord>) =
            self.records.iter().cloned().partition(|r| r.is_dropped());
        write("curated.jsonl", &curated)?;
        write("dropped.jsonl", &dropped)?;
        if !self.histograms.is_empty() {
            let hist_dir = dir.join("histograms");
            fs::create_dir_all(&hist_dir)?;
            for h in &self.histograms {
                fs::write(hist_dir.join(format!("{}.csv", h.metric.name())), h.to_csv())?;
            }
        }
        let mut summary = serde_json::to_string_pretty(&self.summary).map_err(io::Error::other)?;
        summary.push('\n');
        fs::write(dir.join("summary.json"), summary)
    }
}

pub struct Pipeline<'a> {
    config: &'a PipelineConfig,
    media: &'a dyn MediaBackend,
    scorer: &'a ScorerGateway,
    pool: rayon::ThreadPool,
}

impl<'a> Pipeline<'a> {
    pub fn new(
        config: &'a PipelineConfig,
        media: &'a dyn MediaBackend,
        scorer: &'a ScorerGateway,
        workers: usize,
    ) -> Result<Self, PipelineError> {
        config.validate()?;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .thread_name(|i| format!("vidcurate-worker-{i}"))
            .build()
            .map_err(|e| ConfigError::Invalid(format!("worker pool: {e}")))?;
        Ok(Pipeline {
            config,
            media,
            scorer,
            pool,
        })
    }

    pub fn config(&self) -> &PipelineConfig {
        self.config
    }

    fn branch(&self, record: &VideoRecord) -> &[Stage] {
        match route(record) {
            Branch::Captioned => &self.config.branches.captioned,
            Branch::Uncaptioned => &self.config.branches.uncaptioned,
        }
    }

    fn map_records<F>(&self, records: Vec<VideoRecord>, f: F) -> Vec<VideoRecord>
    where
        F: Fn(VideoRecord) -> VideoRecord + Sync + Send,
    {
        self.pool.install(|| records.into_par_iter().map(f).collect())
    }

    fn branch_one(&self, record: VideoRecord, filter: bool, audit_route: bool) -> VideoRecord {
        let stages = self.branch(&record).to_vec();
        let mut work = Work::new(self, record);
        if audit_route {
            let reason = match route(&work.record) {
                Branch::Captioned => "captioned",
                Branch::Uncaptioned => "uncaptioned",
            };
            work.record.record(DecisionEntry::new("route", Action::Keep, reason));
        }
        for stage in stages {
            if work.record.is_dropped() {
                break;
            }
            work.run_stage(stage, filter);
        }
        work.record
    }

    /// Routes every record and runs its branch. With `filter` unset the
    /// branch only computes scores.
    pub fn run_branches(&self, records: Vec<VideoRecord>, filter: bool) -> Vec<VideoRecord> {
        self.map_records(records, |r| self.branch_one(r, filter, filter))
    }

    /// Applies the branch filter rules to metrics already on the records.
    pub fn filter_only(&self, records: Vec<VideoRecord>) -> Vec<VideoRecord> {
        self.map_records(records, |mut record| {
            for stage in self.branch(&record).to_vec() {
                if record.is_dropped() {
                    break;
                }
                if let Some(rule) = self.config.rule_for(stage) {
                    record = apply_rule(record, &rule, self.config.missing_metric);
                }
            }
            record
        })
    }

    /// Probes every record lacking media information.
    pub fn probe_all(&self, records: Vec<VideoRecord>) -> Vec<VideoRecord> {
        self.map_records(records, |record| {
            let mut work = Work::new(self, record);
            if let Err(f) = work.media() {
                work.fail("probe", f);
            }
            work.record
        })
    }

    /// Fails the run when more than half the records died on provider errors.
    fn check_systemic(&self, records: &[VideoRecord]) -> Result<(), PipelineError> {
        let failed: Vec<&DecisionEntry> = records
            .iter()
            .filter_map(|r| r.decisions.iter().find(|d| d.action == Action::Drop && d.reason == "provider_error"))
            .collect();
        if !records.is_empty() && failed.len() * 2 > records.len() {
            return Err(PipelineError::SystemicProviderFailure {
                failed: failed.len(),
                total: records.len(),
                first: failed[0].detail.clone(),
            });
        }
        Ok(())
    }

    /// Accelerates qualifying kept records, measuring motion first where needed.
    pub fn accelerate_stage(&self, records: Vec<VideoRecord>) -> Vec<VideoRecord> {
        let policy = &self.config.acceleration;
        let motion_plan = self.config.sampling.motion_plan();
        let edge = self.config.sampling.downscale_edge;
        let processed: Vec<Vec<VideoRecord>> = self.pool.install(|| {
            records
                .into_par_iter()
                .map(|record| {
                    if record.is_dropped() {
                        return vec![record];
                    }
                    let mut work = Work::new(self, record);
                    if let Err(f) = work.media().and_then(|_| work.ensure(Metric::MotionScore)) {
                        work.record.record(
                            DecisionEntry::new(accelerate::STAGE, Action::Keep, "not_measurable").with_detail(f.detail()),
                        );
                        return vec![work.record];
                    }
                    if !policy.qualifies(&work.record) {
                        return vec![work.record];
                    }
                    let out = accelerate::accelerate(work.record, policy, self.media, &motion_plan, edge);
                    match (policy.mode, out.original) {
                        (AccelerationMode::Alongside, Some(original)) => vec![original, out.record],
                        _ => vec![out.record],
                    }
                })
                .collect()
        });
        processed.into_iter().flatten().collect()
    }

    /// Chooses the final subset under the pixel budget. Every kept record ends
    /// with a `budget_select` decision and terminal status.
    pub fn select_stage(&self, records: Vec<VideoRecord>) -> (Vec<VideoRecord>, SelectionSummary) {
        let cfg = &self.config.selection;
        let weighted = cfg.weights.weighted();
        let stage = Stage::BudgetSelect.name();
        let mut records = self.map_records(records, |record| {
            if record.is_dropped() {
                return record;
            }
            let mut work = Work::new(self, record);
            let prepared = work.media().and_then(|media| {
                work.record
                    .metrics
                    .set_pixel_cost(metrics::pixel_cost(&media, self.config.target_shape, cfg.cost_mode));
                for &m in &weighted {
                    work.ensure(m)?;
                }
                Ok(())
            });
            if let Err(f) = prepared {
                work.fail(stage, f);
            }
            work.record
        });

        let mut items = Vec::new();
        let mut quality = std::collections::HashMap::new();
        for r in records.iter_mut().filter(|r| !r.is_dropped()) {
            match selection::composite_quality(&r.metrics, &cfg.weights) {
                Ok(q) => {
                    quality.insert(r.id.clone(), q);
                    items.push(SelectionItem::new(r.id.clone(), q, r.metrics.pixel_cost().unwrap_or(0)));
                }
                Err(e) => r.record(DecisionEntry::new(stage, Action::Drop, "missing_metric").with_detail(e.to_string())),
            }
        }
        let use_exact = cfg.exact && items.len() <= MAX_EXACT_ITEMS;
        if cfg.exact && !use_exact {
            log::warn!("{} candidates exceed the exact selector limit; using greedy", items.len());
        }
        let chosen = if use_exact {
            selection::exact_select(&items, self.config.budget).expect("size checked")
        } else {
            selection::select_budget(&items, self.config.budget)
        };

        let mut summary = SelectionSummary {
            algorithm: if use_exact { "exact" } else { "greedy" }.into(),
            budget: self.config.budget,
            candidates: items.len(),
            ..Default::default()
        };
        for r in records.iter_mut().filter(|r| !r.is_dropped()) {
            let q = quality[&r.id];
            if chosen.contains(&r.id) {
                summary.selected += 1;
                summary.used += r.metrics.pixel_cost().unwrap_or(0);
                summary.total_quality += q;
                r.record(DecisionEntry::new(stage, Action::Keep, "selected").with_value(q));
                r.status = Status::Kept;
            } else {
                r.record(DecisionEntry::new(stage, Action::Drop, "over_budget").with_value(q));
            }
        }
        (records, summary)
    }

    /// Full run over an ingested manifest.
    pub fn run(&self, records: Vec<VideoRecord>) -> Result<RunOutput, PipelineError> {
        let input = records.len();
        let mut records = self.run_branches(records, true);
        self.check_systemic(&records)?;

        let mut selection = SelectionSummary::default();
        let mut histograms = Vec::new();
        for stage in &self.config.branches.shared_tail {
            match stage {
                Stage::Accelerate => records = self.accelerate_stage(records),
                Stage::BudgetSelect => {
                    let (r, s) = self.select_stage(records);
                    records = r;
                    selection = s;
                }
                Stage::Report => histograms = emit_histograms(&records, self.config.histogram_bins),
                other => unreachable!("validated tail contains {other}"),
            }
        }
        self.check_systemic(&records)?;
        for r in records.iter_mut().filter(|r| !r.is_dropped()) {
            r.status = Status::Kept;
        }
        let summary = Summary::tally(&records, input)
            .with_histograms(&histograms)
            .with_selection(selection);
        Ok(RunOutput {
            records,
            histograms,
            summary,
        })
    }
}

impl Summary {
    fn with_selection(mut self, selection: SelectionSummary) -> Self {
        self.selection = selection;
        self
    }
}
