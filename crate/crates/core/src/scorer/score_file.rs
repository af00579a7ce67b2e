//! Precomputed provider answers, one NDJSON line per `(video_id, op)`:
//! `{"video_id":"a","op":"aesthetic","value":5.5}`.

use std::collections::HashMap;
use std::io::BufRead;
use std::path::Path;

use serde::Deserialize;
use serde_json::Value;

use super::protocol::{ScoreOp, ScoreValue};
use super::ScorerError;

#[derive(Deserialize)]
struct ScoreLine {
    video_id: String,
    op: ScoreOp,
    value: Value,
}

#[derive(Debug, Clone, Default)]
pub struct ScoreFile {
    entries: HashMap<(String, ScoreOp), ScoreValue>,
    origin: HashMap<(String, ScoreOp), String>,
}

impl ScoreFile {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn parse<R: BufRead>(reader: R, source: &str) -> Result<ScoreFile, ScorerError> {
        let mut file = ScoreFile::new();
        file.extend_from(reader, source)?;
        Ok(file)
    }

    pub fn load(path: &Path) -> Result<ScoreFile, ScorerError> {
        let mut file = ScoreFile::new();
        file.merge_path(path)?;
        Ok(file)
    }

    pub fn merge_path(&mut self, path: &Path) -> Result<(), ScorerError> {
        let f = std::fs::File::open(path).map_err(|e| ScorerError::ScoreFile(format!("{}: {e}", path.display())))?;
        self.extend_from(std::io::BufReader::new(f), &path.display().to_string())
    }

    fn extend_from<R: BufRead>(&mut self, reader: R, source: &str) -> Result<(), ScorerError> {
        for (idx, line) in reader.lines().enumerate() {
            let at = format!("{source}:{}", idx + 1);
            let line = line.map_err(|e| ScorerError::ScoreFile(format!("{at}: {e}")))?;
            if line.trim().is_empty() {
                continue;
            }
            let parsed: ScoreLine =
                serde_json::from_str(&line).map_err(|e| ScorerError::ScoreFile(format!("{at}: {e}")))?;
            let value = ScoreValue::decode(parsed.op, &parsed.value, None)
                .map_err(|e| ScorerError::ScoreFile(format!("{at}: {e}")))?;
            self.insert_at(parsed.video_id, value, at)?;
        }
        Ok(())
    }

    fn insert_at(&mut self, video_id: String, value: ScoreValue, at: String) -> Result<(), ScorerError> {
        let key = (video_id, value.op());
        if let Some(prev) = self.origin.get(&key) {
            return Err(ScorerError::ScoreFile(format!(
                "duplicate {} entry for {:?} at {prev} and {at}",
                key.1, key.0
            )));
        }
        self.origin.insert(key.clone(), at);
        self.entries.insert(key, value);
        Ok(())
    }

    pub fn insert(&mut self, video_id: impl Into<String>, value: ScoreValue) -> Result<(), ScorerError> {
        self.insert_at(video_id.into(), value, "<memory>".into())
    }

    pub fn get(&self, video_id: &str, op: ScoreOp) -> Option<&ScoreValue> {
        self.entries.get(&(video_id.to_string(), op))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}
