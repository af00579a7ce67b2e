//! Canonical record types and the newline-delimited JSON manifest format.
//!
//! A manifest line carries `id` and `path` plus optional `caption` and `meta`.
//! Output manifests add `caption_source`, `media`, `metrics`, `decisions` and
//! `status`. Keys the engine does not know about are kept in
//! [`VideoRecord::extra`] and written back unchanged.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::{self, BufRead, Write};
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("line {line}: malformed record: {message}")]
    Malformed { line: usize, message: String },
    #[error("line {line}: invalid record: {message}")]
    Invalid { line: usize, message: String },
    #[error("duplicate id {id:?} on lines {first} and {second}")]
    DuplicateId {
        id: String,
        first: usize,
        second: usize,
    },
    #[error("manifest I/O: {0}")]
    Io(#[from] io::Error),
}

/// A value was outside the declared range of its field.
#[derive(Debug, Clone, PartialEq, Error)]
#[error("{field} = {value} is outside [{lo}, {hi}]")]
pub struct RangeError {
    pub field: &'static str,
    pub value: f64,
    pub lo: f64,
    pub hi: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CaptionSource {
    Original,
    Generated,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    #[default]
    Pending,
    Kept,
    Dropped,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    Keep,
    Drop,
    Transform,
}

/// Probed stream properties of one clip.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MediaInfo {
    pub width: u32,
    pub height: u32,
    pub num_frames: u64,
    pub fps: f64,
    pub duration: f64,
}

impl MediaInfo {
    pub fn new(
        width: u32,
        height: u32,
        num_frames: u64,
        fps: f64,
        duration: f64,
    ) -> Result<Self, String> {
        let info = MediaInfo {
            width,
            height,
            num_frames,
            fps,
            duration,
        };
        info.validate()?;
        Ok(info)
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.width == 0 || self.height == 0 {
            return Err(format!("zero dimension {}x{}", self.width, self.height));
        }
        if self.num_frames == 0 {
            return Err("zero frames".into());
        }
        if !(self.fps.is_finite() && self.fps > 0.0) {
            return Err(format!("fps {} is not positive", self.fps));
        }
        if !(self.duration.is_finite() && self.duration > 0.0) {
            return Err(format!("duration {} is not positive", self.duration));
        }
        // container rounding slack of one frame interval
        let nominal = self.num_frames as f64 / self.fps;
        if (self.duration - nominal).abs() > 1.0 / self.fps + 1e-9 {
            return Err(format!(
                "duration {} disagrees with {} frames at {} fps",
                self.duration, self.num_frames, self.fps
            ));
        }
        Ok(())
    }

    pub fn short_side(&self) -> u32 {
        self.width.min(self.height)
    }
}

/// Quality scores accumulated for a clip. Every present value is inside its
/// declared range; the setters reject anything else.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct MetricSet {
    #[serde(skip_serializing_if = "Option::is_none")]
    char_repetition: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    frame_text_similarity: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    aesthetic: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    ocr_area_ratio: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    motion_score: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pixel_cost: Option<u64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawMetricSet {
    char_repetition: Option<f64>,
    frame_text_similarity: Option<f64>,
    aesthetic: Option<f64>,
    ocr_area_ratio: Option<f64>,
    motion_score: Option<f64>,
    pixel_cost: Option<u64>,
}

impl<'de> Deserialize<'de> for MetricSet {
    fn deserialize<D: serde::Deserializer<'de>>(de: D) -> Result<Self, D::Error> {
        let raw = RawMetricSet::deserialize(de)?;
        let mut m = MetricSet::default();
        let apply = |r: Result<(), RangeError>| r.map_err(serde::de::Error::custom);
        if let Some(v) = raw.char_repetition {
            apply(m.set(Metric::CharRepetition, v))?;
        }
        if let Some(v) = raw.frame_text_similarity {
            apply(m.set(Metric::FrameTextSimilarity, v))?;
        }
        if let Some(v) = raw.aesthetic {
            apply(m.set(Metric::Aesthetic, v))?;
        }
        if let Some(v) = raw.ocr_area_ratio {
            apply(m.set(Metric::OcrAreaRatio, v))?;
        }
        if let Some(v) = raw.motion_score {
            apply(m.set(Metric::MotionScore, v))?;
        }
        m.pixel_cost = raw.pixel_cost;
        Ok(m)
    }
}

/// The scored quantities a filter rule can refer to.
///
/// `Resolution` is the short side of the probed frame and lives on
/// [`MediaInfo`] rather than in [`MetricSet`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    CharRepetition,
    FrameTextSimilarity,
    Aesthetic,
    OcrAreaRatio,
    MotionScore,
    Resolution,
}

impl Metric {
    pub const ALL: [Metric; 6] = [
        Metric::CharRepetition,
        Metric::FrameTextSimilarity,
        Metric::Aesthetic,
        Metric::OcrAreaRatio,
        Metric::MotionScore,
        Metric::Resolution,
    ];

    /// Metrics with a bounded range, the ones histograms are built for.
    pub const SCORES: [Metric; 5] = [
        Metric::CharRepetition,
        Metric::FrameTextSimilarity,
        Metric::Aesthetic,
        Metric::OcrAreaRatio,
        Metric::MotionScore,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Metric::CharRepetition => "char_repetition",
            Metric::FrameTextSimilarity => "frame_text_similarity",
            Metric::Aesthetic => "aesthetic",
            Metric::OcrAreaRatio => "ocr_area_ratio",
            Metric::MotionScore => "motion_score",
            Metric::Resolution => "resolution",
        }
    }

    pub fn from_name(name: &str) -> Option<Metric> {
        Metric::ALL.into_iter().find(|m| m.name() == name)
    }

    /// Closed value range. The aesthetic range of [0, 10] is a convention of
    /// common aesthetic predictors.
    pub fn range(self) -> (f64, f64) {
        match self {
            Metric::CharRepetition | Metric::OcrAreaRatio | Metric::MotionScore => (0.0, 1.0),
            Metric::FrameTextSimilarity => (-1.0, 1.0),
            Metric::Aesthetic => (0.0, 10.0),
            Metric::Resolution => (0.0, u32::MAX as f64),
        }
    }

    pub fn check(self, value: f64) -> Result<f64, RangeError> {
        let (lo, hi) = self.range();
        if value.is_finite() && value >= lo && value <= hi {
            Ok(value)
        } else {
            Err(RangeError {
                field: self.name(),
                value,
                lo,
                hi,
            })
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl MetricSet {
    /// Value of a score metric. `Resolution` is never stored here.
    pub fn get(&self, metric: Metric) -> Option<f64> {
        match metric {
            Metric::CharRepetition => self.char_repetition,
            Metric::FrameTextSimilarity => self.frame_text_similarity,
            Metric::Aesthetic => self.aesthetic,
            Metric::OcrAreaRatio => self.ocr_area_ratio,
            Metric::MotionScore => self.motion_score,
            Metric::Resolution => None,
        }
    }

    pub fn set(&mut self, metric: Metric, value: f64) -> Result<(), RangeError> {
        let value = metric.check(value)?;
        let slot = match metric {
            Metric::CharRepetition => &mut self.char_repetition,
            Metric::FrameTextSimilarity => &mut self.frame_text_similarity,
            Metric::Aesthetic => &mut self.aesthetic,
            Metric::OcrAreaRatio => &mut self.ocr_area_ratio,
            Metric::MotionScore => &mut self.motion_score,
            Metric::Resolution => {
                return Err(RangeError {
                    field: "resolution",
                    value,
                    lo: f64::NAN,
                    hi: f64::NAN,
                })
            }
        };
        *slot = Some(value);
        Ok(())
    }

    pub fn with(mut self, metric: Metric, value: f64) -> Result<Self, RangeError> {
        self.set(metric, value)?;
        Ok(self)
    }

    pub fn pixel_cost(&self) -> Option<u64> {
        self.pixel_cost
    }

    pub fn set_pixel_cost(&mut self, cost: u64) {
        self.pixel_cost = Some(cost);
    }
}

/// One audit entry: what a stage decided about a record and why.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecisionEntry {
    pub stage: String,
    pub action: Action,
    pub reason: String,
    #[serde(default)]
    pub detail: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<f64>,
}

impl DecisionEntry {
    pub fn new(stage: impl Into<String>, action: Action, reason: impl Into<String>) -> Self {
        DecisionEntry {
            stage: stage.into(),
            action,
            reason: reason.into(),
            detail: String::new(),
            value: None,
        }
    }

    pub fn with_value(mut self, value: f64) -> Self {
        self.value = Some(value);
        self
    }

    pub fn with_detail(mut self, detail: impl Into<String>) -> Self {
        self.detail = detail.into();
        self
    }
}

/// One clip and everything the pipeline learned about it.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoRecord {
    pub id: String,
    pub media_path: PathBuf,
    pub caption: Option<String>,
    pub caption_source: CaptionSource,
    pub meta: Option<Value>,
    pub media: Option<MediaInfo>,
    pub metrics: MetricSet,
    pub decisions: Vec<DecisionEntry>,
    pub status: Status,
    /// Unknown manifest keys, carried through untouched.
    pub extra: BTreeMap<String, Value>,
}

impl VideoRecord {
    /// A freshly ingested record. Empty captions count as absent.
    pub fn new(id: impl Into<String>, media_path: impl Into<PathBuf>, caption: Option<String>) -> Self {
        let caption = caption.filter(|c| !c.is_empty());
        let caption_source = if caption.is_some() {
            CaptionSource::Original
        } else {
            CaptionSource::None
        };
        VideoRecord {
            id: id.into(),
            media_path: media_path.into(),
            caption,
            caption_source,
            meta: None,
            media: None,
            metrics: MetricSet::default(),
            decisions: Vec::new(),
            status: Status::Pending,
            extra: BTreeMap::new(),
        }
    }

    pub fn is_dropped(&self) -> bool {
        self.status == Status::Dropped
    }

    pub fn record(&mut self, entry: DecisionEntry) {
        if entry.action == Action::Drop {
            self.status = Status::Dropped;
        }
        self.decisions.push(entry);
    }

    /// Value of `metric` for this record, reading resolution from the probe.
    pub fn metric(&self, metric: Metric) -> Option<f64> {
        match metric {
            Metric::Resolution => self.media.map(|m| m.short_side() as f64),
            other => self.metrics.get(other),
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.id.is_empty() {
            return Err("empty id".into());
        }
        match (self.caption.is_some(), self.caption_source) {
            (true, CaptionSource::None) => {
                return Err("caption present but caption_source is none".into())
            }
            (false, CaptionSource::Original | CaptionSource::Generated) => {
                return Err("caption_source set but caption absent".into())
            }
            _ => {}
        }
        if let Some(media) = &self.media {
            media.validate()?;
        }
        for d in &self.decisions {
            if d.stage.is_empty() {
                return Err("decision with empty stage".into());
            }
            if d.action == Action::Drop && d.reason.is_empty() {
                return Err(format!("drop decision at stage {} has no reason", d.stage));
            }
        }
        if self.status == Status::Dropped && !self.decisions.iter().any(|d| d.action == Action::Drop) {
            return Err("status dropped without a drop decision".into());
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct WireRecord {
    id: String,
    path: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    caption: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    caption_source: Option<CaptionSource>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    meta: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    media: Option<MediaInfo>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    metrics: Option<MetricSet>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    decisions: Option<Vec<DecisionEntry>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    status: Option<Status>,
    #[serde(flatten)]
    extra: BTreeMap<String, Value>,
}

fn decode_line(line: &str, lineno: usize) -> Result<VideoRecord, ManifestError> {
    let wire: WireRecord = serde_json::from_str(line).map_err(|e| ManifestError::Malformed {
        line: lineno,
        message: e.to_string(),
    })?;
    let caption = wire.caption.filter(|c| !c.is_empty());
    let caption_source = wire.caption_source.unwrap_or(if caption.is_some() {
        CaptionSource::Original
    } else {
        CaptionSource::None
    });
    let record = VideoRecord {
        id: wire.id,
        media_path: PathBuf::from(wire.path),
        caption,
        caption_source,
        meta: wire.meta,
        media: wire.media,
        metrics: wire.metrics.unwrap_or_default(),
        decisions: wire.decisions.unwrap_or_default(),
        status: wire.status.unwrap_or_default(),
        extra: wire.extra,
    };
    record.validate().map_err(|message| ManifestError::Invalid {
        line: lineno,
        message,
    })?;
    Ok(record)
}

/// Parses a manifest stream. Blank lines are skipped; line numbers are 1-based.
pub fn parse_manifest<R: BufRead>(reader: R) -> Result<Vec<VideoRecord>, ManifestError> {
    let mut records = Vec::new();
    let mut seen: HashMap<String, usize> = HashMap::new();
    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record = decode_line(&line, lineno)?;
        if let Some(&first) = seen.get(&record.id) {
            return Err(ManifestError::DuplicateId {
                id: record.id,
                first,
                second: lineno,
            });
        }
        seen.insert(record.id.clone(), lineno);
        records.push(record);
    }
    Ok(records)
}

pub fn parse_manifest_str(text: &str) -> Result<Vec<VideoRecord>, ManifestError> {
    parse_manifest(text.as_bytes())
}

fn encode_record(record: &VideoRecord) -> String {
    let metrics = if record.metrics == MetricSet::default() {
        None
    } else {
        Some(record.metrics.clone())
    };
    let wire = WireRecord {
        id: record.id.clone(),
        path: record.media_path.to_string_lossy().into_owned(),
        caption: record.caption.clone(),
        caption_source: Some(record.caption_source),
        meta: record.meta.clone(),
        media: record.media,
        metrics,
        decisions: (!record.decisions.is_empty()).then(|| record.decisions.clone()),
        status: Some(record.status),
        extra: record.extra.clone(),
    };
    serde_json::to_string(&wire).expect("manifest records always serialize")
}

pub fn write_manifest<W: Write>(records: &[VideoRecord], mut out: W) -> io::Result<()> {
    for record in records {
        out.write_all(encode_record(record).as_bytes())?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

pub fn manifest_to_string(records: &[VideoRecord]) -> String {
    let mut buf = Vec::new();
    write_manifest(records, &mut buf).expect("writing to memory");
    String::from_utf8(buf).expect("manifest is UTF-8")
}
