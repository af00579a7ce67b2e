//! Scorer protocol v1 messages and result validation.
//!
//! The protocol is UTF-8 NDJSON over a sidecar's stdin/stdout. The sidecar
//! speaks first with `{"protocol":"scorer/1","ops":[...],"concurrency":k}`;
//! afterwards each request line is answered by exactly one response line
//! carrying the same `request_id` and either `result` or `error`.

use std::collections::BTreeSet;
use std::fmt;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::metrics::BoundingBox;
use crate::model::Metric;

pub const PROTOCOL_VERSION: &str = "scorer/1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreOp {
    Caption,
    EmbedText,
    EmbedFrames,
    Aesthetic,
    OcrBoxes,
}

impl ScoreOp {
    pub const ALL: [ScoreOp; 5] = [
        ScoreOp::Caption,
        ScoreOp::EmbedText,
        ScoreOp::EmbedFrames,
        ScoreOp::Aesthetic,
        ScoreOp::OcrBoxes,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ScoreOp::Caption => "caption",
            ScoreOp::EmbedText => "embed_text",
            ScoreOp::EmbedFrames => "embed_frames",
            ScoreOp::Aesthetic => "aesthetic",
            ScoreOp::OcrBoxes => "ocr_boxes",
        }
    }

    pub fn from_name(name: &str) -> Option<ScoreOp> {
        ScoreOp::ALL.into_iter().find(|op| op.name() == name)
    }
}

impl fmt::Display for ScoreOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Op-specific request payload. `embed_text` carries `text`; the frame ops
/// carry lossless image paths in `frames`. Captioning also gets the clip path.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Payload {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub frames: Vec<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
}

impl Payload {
    pub fn text(text: impl Into<String>) -> Self {
        Payload {
            text: Some(text.into()),
            ..Payload::default()
        }
    }

    pub fn frames(frames: Vec<PathBuf>) -> Self {
        Payload {
            frames,
            ..Payload::default()
        }
    }

    pub fn check_shape(&self, op: ScoreOp) -> Result<(), String> {
        match op {
            ScoreOp::EmbedText if self.text.is_none() => Err("embed_text payload needs text".into()),
            ScoreOp::EmbedText => Ok(()),
            _ if self.frames.is_empty() => Err(format!("{op} payload needs frames")),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRequest {
    pub request_id: String,
    pub op: ScoreOp,
    pub video_id: String,
    pub payload: Payload,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    #[serde(default)]
    pub message: String,
}

/// A response line before result validation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreResponse {
    pub request_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub result: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<ErrorBody>,
}

/// Capability advertisement, the first line a sidecar writes.
#[derive(Debug, Clone, PartialEq)]
pub struct Capabilities {
    pub protocol: String,
    pub ops: BTreeSet<ScoreOp>,
    pub concurrency: usize,
}

impl Capabilities {
    /// Parses an advertisement line. Unknown op names are ignored.
    pub fn parse(line: &str) -> Result<Capabilities, String> {
        let v: Value = serde_json::from_str(line).map_err(|e| e.to_string())?;
        let obj = v.as_object().ok_or("advertisement is not an object")?;
        let protocol = obj
            .get("protocol")
            .and_then(Value::as_str)
            .ok_or("advertisement has no protocol string")?
            .to_string();
        let ops = obj
            .get("ops")
            .and_then(Value::as_array)
            .ok_or("advertisement has no ops list")?
            .iter()
            .map(|o| o.as_str().ok_or("op names must be strings"))
            .collect::<Result<Vec<_>, _>>()?
            .into_iter()
            .filter_map(ScoreOp::from_name)
            .collect();
        let concurrency = match obj.get("concurrency") {
            None => 1,
            Some(c) => c
                .as_u64()
                .filter(|&c| c >= 1)
                .ok_or("concurrency must be a positive integer")? as usize,
        };
        Ok(Capabilities {
            protocol,
            ops,
            concurrency,
        })
    }
}

/// A validated provider value.
#[derive(Debug, Clone, PartialEq)]
pub enum ScoreValue {
    Caption(String),
    TextEmbedding(Vec<f64>),
    FrameEmbeddings(Vec<Vec<f64>>),
    Aesthetic(f64),
    OcrBoxes(Vec<Vec<BoundingBox>>),
}

fn vector(v: &Value) -> Result<Vec<f64>, String> {
    let arr = v.as_array().ok_or("embedding is not an array")?;
    if arr.is_empty() {
        return Err("embedding is empty".into());
    }
    arr.iter()
        .map(|x| x.as_f64().filter(|f| f.is_finite()).ok_or_else(|| format!("embedding entry {x} is not a finite number")))
        .collect()
}

impl ScoreValue {
    /// Decodes and range-checks a result for `op`. When `frames` is given the
    /// per-frame results must match it in count.
    pub fn decode(op: ScoreOp, v: &Value, frames: Option<usize>) -> Result<ScoreValue, String> {
        let check_count = |n: usize| match frames {
            Some(f) if f != n => Err(format!("{op} returned {n} entries for {f} frames")),
            _ => Ok(()),
        };
        match op {
            ScoreOp::Caption => v
                .as_str()
                .map(|s| ScoreValue::Caption(s.to_string()))
                .ok_or_else(|| "caption is not a string".into()),
            ScoreOp::EmbedText => Ok(ScoreValue::TextEmbedding(vector(v)?)),
            ScoreOp::EmbedFrames => {
                let arr = v.as_array().ok_or("frame embeddings are not an array")?;
                if arr.is_empty() {
                    return Err("no frame embeddings".into());
                }
                check_count(arr.len())?;
                let vecs = arr.iter().map(vector).collect::<Result<Vec<_>, _>>()?;
                if vecs.iter().any(|e| e.len() != vecs[0].len()) {
                    return Err("frame embeddings differ in dimension".into());
                }
                Ok(ScoreValue::FrameEmbeddings(vecs))
            }
            ScoreOp::Aesthetic => {
                let x = v.as_f64().ok_or("aesthetic score is not a number")?;
                Metric::Aesthetic.check(x).map_err(|e| e.to_string())?;
                Ok(ScoreValue::Aesthetic(x))
            }
            ScoreOp::OcrBoxes => {
                let frames_boxes: Vec<Vec<BoundingBox>> =
                    serde_json::from_value(v.clone()).map_err(|e| format!("bad boxes: {e}"))?;
                check_count(frames_boxes.len())?;
                Ok(ScoreValue::OcrBoxes(frames_boxes))
            }
        }
    }

    pub fn op(&self) -> ScoreOp {
        match self {
            ScoreValue::Caption(_) => ScoreOp::Caption,
            ScoreValue::TextEmbedding(_) => ScoreOp::EmbedText,
            ScoreValue::FrameEmbeddings(_) => ScoreOp::EmbedFrames,
            ScoreValue::Aesthetic(_) => ScoreOp::Aesthetic,
            ScoreValue::OcrBoxes(_) => ScoreOp::OcrBoxes,
        }
    }
}
