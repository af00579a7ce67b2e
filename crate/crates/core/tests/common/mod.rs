//! Shared fixtures: a seeded synthetic corpus with a full score file, plus
//! independent oracles used to check the library.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use vidcurate::config::PipelineConfig;
use vidcurate::media::{Pattern, SyntheticBackend, SyntheticClip};
use vidcurate::model::{Metric, VideoRecord};
use vidcurate::pipeline::{Pipeline, RunOutput};
use vidcurate::scorer::{ScoreFile, ScorerGateway};

pub const CORPUS_SIZE: usize = 50;
pub const EMBED_DIM: usize = 8;
pub const EMBED_FRAMES: usize = 4;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Ground truth for one synthetic record, as the score file and clip define it.
#[derive(Debug, Clone)]
pub struct Truth {
    pub id: String,
    pub original_caption: Option<String>,
    pub generated_caption: String,
    pub clip: SyntheticClip,
    pub text_embedding: Vec<f64>,
    pub frame_embeddings: Vec<Vec<f64>>,
    pub aesthetic: f64,
    pub ocr_boxes: Vec<Vec<[i64; 4]>>,
}

pub struct Corpus {
    pub records: Vec<VideoRecord>,
    pub truths: Vec<Truth>,
    pub backend: SyntheticBackend,
    pub score_text: String,
}

const WORDS: &[&str] = &[
    "a", "dog", "runs", "across", "the", "field", "cat", "sleeps", "on", "sofa", "city", "street", "at", "night", "waves",
    "crash", "against", "rocks", "child", "plays", "with", "red", "ball", "in", "park",
];

fn caption(rng: &mut ChaCha8Rng) -> String {
    let len = rng.gen_range(4..12);
    let words: Vec<&str> = (0..len).map(|_| *WORDS.choose(rng).unwrap()).collect();
    if rng.gen_bool(0.2) {
        // a short phrase repeated until the n-gram ratio is high
        let phrase = words[..2].join(" ");
        vec![phrase; 6].join(" ")
    } else {
        words.join(" ")
    }
}

fn unit_noise(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

/// Builds the 50-record corpus. Roughly half the records carry a caption.
pub fn corpus(seed: u64) -> Corpus {
    let mut rng = rng(seed);
    let backend = SyntheticBackend::new();
    let sizes = [(426u32, 240u32), (480, 360), (640, 512), (1280, 720), (256, 256)];
    let mut records = Vec::new();
    let mut truths = Vec::new();
    let mut lines = Vec::new();
    for i in 0..CORPUS_SIZE {
        let id = format!("v{i:03}");
        let path = format!("clips/{id}.mp4");
        let (width, height) = sizes[rng.gen_range(0..sizes.len())];
        let pattern = match rng.gen_range(0..10) {
            0 | 1 => Pattern::Static { gray: rng.gen() },
            2 => Pattern::Alternating,
            _ => Pattern::Ramp {
                start: rng.gen(),
                step: [1u8, 5, 13, 26, 60, 120][rng.gen_range(0..6)],
            },
        };
        let clip = SyntheticClip {
            width,
            height,
            num_frames: rng.gen_range(24..72),
            fps: 8.0,
            pattern,
        };
        backend.insert(&path, clip);

        let original_caption = rng.gen_bool(0.5).then(|| caption(&mut rng));
        let generated_caption = caption(&mut rng);
        let text_embedding = unit_noise(&mut rng, EMBED_DIM);
        let align: f64 = rng.gen_range(-0.5..2.0);
        let frame_embeddings: Vec<Vec<f64>> = (0..EMBED_FRAMES)
            .map(|_| {
                unit_noise(&mut rng, EMBED_DIM)
                    .iter()
                    .zip(&text_embedding)
                    .map(|(n, t)| n + align * t)
                    .collect()
            })
            .collect();
        let aesthetic = (rng.gen_range(200..900) as f64) / 100.0;
        let ocr_boxes: Vec<Vec<[i64; 4]>> = (0..EMBED_FRAMES)
            .map(|_| {
                let big = rng.gen_bool(0.3);
                (0..rng.gen_range(0..3))
                    .map(|_| {
                        let (w, h) = (width as i64, height as i64);
                        let span = if big { 3 } else { 12 };
                        let x0 = rng.gen_range(0..w - 2);
                        let y0 = rng.gen_range(0..h - 2);
                        let x1 = (x0 + rng.gen_range(1..w / span + 2)).min(w);
                        let y1 = (y0 + rng.gen_range(1..h / span + 2)).min(h);
                        [x0, y0, x1, y1]
                    })
                    .collect()
            })
            .collect();

        lines.push(json!({"video_id": id, "op": "caption", "value": generated_caption}));
        lines.push(json!({"video_id": id, "op": "embed_text", "value": text_embedding}));
        lines.push(json!({"video_id": id, "op": "embed_frames", "value": frame_embeddings}));
        lines.push(json!({"video_id": id, "op": "aesthetic", "value": aesthetic}));
        lines.push(json!({"video_id": id, "op": "ocr_boxes", "value": ocr_boxes}));

        records.push(VideoRecord::new(&id, &path, original_caption.clone()));
        truths.push(Truth {
            id,
            original_caption,
            generated_caption,
            clip,
            text_embedding,
            frame_embeddings,
            aesthetic,
            ocr_boxes,
        });
    }
    let score_text = lines.iter().map(|l| format!("{l}\n")).collect();
    Corpus {
        records,
        truths,
        backend,
        score_text,
    }
}

impl Corpus {
    pub fn score_file(&self) -> ScoreFile {
        ScoreFile::parse(self.score_text.as_bytes(), "corpus-scores").expect("corpus score file parses")
    }

    pub fn gateway(&self) -> ScorerGateway {
        ScorerGateway::new(self.score_file(), vec![])
    }

    pub fn run(&self, config: &PipelineConfig, workers: usize) -> (RunOutput, ScorerGateway) {
        let gateway = self.gateway();
        let out = Pipeline::new(config, &self.backend, &gateway, workers)
            .expect("valid config")
            .run(self.records.clone())
            .expect("run succeeds");
        (out, gateway)
    }
}

pub fn kept_ids(out: &RunOutput) -> BTreeSet<String> {
    out.records.iter().filter(|r| !r.is_dropped()).map(|r| r.id.clone()).collect()
}

/// Reads every regular file under `dir` into a path-keyed map.
pub fn read_tree(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Oracles

/// Counts n-grams by brute force over string slices.
pub fn brute_repetition(text: &str, n: usize) -> f64 {
    let chars: Vec<char> = text.chars().collect();
    if chars.len() < n {
        return 0.0;
    }
    let grams: Vec<String> = (0..=chars.len() - n).map(|i| chars[i..i + n].iter().collect()).collect();
    let mut distinct: Vec<&String> = Vec::new();
    for g in &grams {
        if !distinct.contains(&g) {
            distinct.push(g);
        }
    }
    1.0 - distinct.len() as f64 / grams.len() as f64
}

/// Rasterises integer boxes onto a `w x h` bitmap and counts set pixels.
pub fn raster_ocr(frames: &[Vec<[i64; 4]>], w: u32, h: u32) -> f64 {
    if frames.is_empty() {
        return 0.0;
    }
    let (w, h) = (w as i64, h as i64);
    let mut sum = 0.0;
    for boxes in frames {
        let mut bitmap = vec![false; (w * h) as usize];
        for b in boxes {
            for y in b[1].max(0)..b[3].min(h) {
                for x in b[0].max(0)..b[2].min(w) {
                    bitmap[(y * w + x) as usize] = true;
                }
            }
        }
        let covered = bitmap.iter().filter(|&&c| c).count() as f64;
        sum += covered / (w * h) as f64;
    }
    (sum / frames.len() as f64).clamp(0.0, 1.0)
}

/// Mean cosine written out longhand.
pub fn direct_similarity(frames: &[Vec<f64>], text: &[f64]) -> f64 {
    let mut total = 0.0;
    for f in frames {
        let mut dot = 0.0;
        let mut nf = 0.0;
        let mut nt = 0.0;
        for i in 0..text.len() {
            dot += f[i] * text[i];
            nf += f[i] * f[i];
            nt += text[i] * text[i];
        }
        total += (dot / (nf.sqrt() * nt.sqrt())).clamp(-1.0, 1.0);
    }
    (total / frames.len() as f64).clamp(-1.0, 1.0)
}

/// Motion of a flat-gray clip from its pattern formula: the luma of a gray
/// level is the level itself, so each sampled pair differs by the level change.
pub fn analytic_motion(clip: &SyntheticClip, rate: f64, max_frames: u64) -> f64 {
    let stride = ((clip.fps / rate).round() as u64).max(1);
    let positions = (clip.num_frames - 1) / stride + 1;
    let n = positions.min(max_frames);
    let start = (positions - n) / 2 * stride;
    let level = |i: u64| -> i64 {
        match clip.pattern {
            Pattern::Static { gray } => gray as i64,
            Pattern::Ramp { start, step } => ((start as u64 + step as u64 * i) % 256) as i64,
            Pattern::Alternating => {
                if i % 2 == 0 {
                    0
                } else {
                    255
                }
            }
            Pattern::MovingGradient { .. } => panic!("analytic motion only covers flat patterns"),
        }
    };
    if n < 2 {
        return 0.0;
    }
    let diffs: i64 = (0..n - 1)
        .map(|k| (level(start + (k + 1) * stride) - level(start + k * stride)).abs())
        .sum();
    diffs as f64 / ((n - 1) as f64 * 255.0)
}

/// Every metric value a record should end up with, computed from the truth.
#[derive(Debug, Clone)]
pub struct OracleMetrics {
    pub caption: String,
    pub char_repetition: f64,
    pub similarity: f64,
    pub aesthetic: f64,
    pub ocr: f64,
    pub resolution: f64,
    pub motion: f64,
}

pub fn oracle_metrics(t: &Truth, config: &PipelineConfig) -> OracleMetrics {
    let caption = t.original_caption.clone().unwrap_or_else(|| t.generated_caption.clone());
    OracleMetrics {
        char_repetition: brute_repetition(&caption, config.sampling.char_ngram),
        similarity: direct_similarity(&t.frame_embeddings, &t.text_embedding),
        aesthetic: t.aesthetic,
        ocr: raster_ocr(&t.ocr_boxes, t.clip.width, t.clip.height),
        resolution: t.clip.width.min(t.clip.height) as f64,
        motion: analytic_motion(
            &t.clip,
            config.sampling.motion_sample_fps.unwrap(),
            config.sampling.max_sampled_frames as u64,
        ),
        caption,
    }
}

impl OracleMetrics {
    pub fn value(&self, m: Metric) -> f64 {
        match m {
            Metric::CharRepetition => self.char_repetition,
            Metric::FrameTextSimilarity => self.similarity,
            Metric::Aesthetic => self.aesthetic,
            Metric::OcrAreaRatio => self.ocr,
            Metric::Resolution => self.resolution,
            Metric::MotionScore => self.motion,
        }
    }
}

fn branch_metrics(captioned: bool) -> &'static [Metric] {
    if captioned {
        &[Metric::CharRepetition, Metric::Resolution, Metric::FrameTextSimilarity]
    } else {
        &[
            Metric::CharRepetition,
            Metric::FrameTextSimilarity,
            Metric::Aesthetic,
            Metric::OcrAreaRatio,
            Metric::Resolution,
            Metric::MotionScore,
        ]
    }
}

/// Whether a record passes its default branch under the config thresholds.
pub fn oracle_passes(t: &Truth, config: &PipelineConfig) -> bool {
    let m = oracle_metrics(t, config);
    branch_metrics(t.original_caption.is_some()).iter().all(|&metric| {
        let Some(b) = config.thresholds.get(metric) else {
            return true;
        };
        let v = m.value(metric);
        b.min.map_or(true, |lo| v >= lo) && b.max.map_or(true, |hi| v <= hi)
    })
}

/// Kept set for the default plan: filter survivors, then greedy
/// density-ordered packing against the best single item.
pub fn oracle_kept(corpus: &Corpus, config: &PipelineConfig) -> BTreeSet<String> {
    let shape = config.target_shape;
    let mut items: Vec<(String, f64, u64)> = corpus
        .truths
        .iter()
        .filter(|t| oracle_passes(t, config))
        .map(|t| {
            let m = oracle_metrics(t, config);
            let q = m.aesthetic / 10.0 + (m.similarity + 1.0) / 2.0;
            let cost = t.clip.num_frames.min(shape.frames) * shape.height * shape.width;
            (t.id.clone(), q, cost)
        })
        .collect();
    items.sort_by(|a, b| (b.1 / b.2 as f64).total_cmp(&(a.1 / a.2 as f64)).then(a.0.cmp(&b.0)));
    let mut used = 0u64;
    let mut greedy = BTreeSet::new();
    let mut greedy_q = 0.0;
    for (id, q, c) in &items {
        if used.saturating_add(*c) <= config.budget {
            used += c;
            greedy.insert(id.clone());
            greedy_q += q;
        }
    }
    let best = items
        .iter()
        .filter(|i| i.2 <= config.budget)
        .max_by(|a, b| a.1.total_cmp(&b.1).then(b.0.cmp(&a.0)));
    match best {
        Some((id, q, _)) if *q > greedy_q => BTreeSet::from([id.clone()]),
        _ => greedy,
    }
}

/// Bins values with a linear scan over explicitly listed edges.
pub fn oracle_bins(values: &[f64], lo: f64, hi: f64, bins: usize) -> Vec<u64> {
    let edges: Vec<f64> = (0..=bins).map(|i| lo + (hi - lo) * i as f64 / bins as f64).collect();
    let mut counts = vec![0u64; bins];
    for &v in values {
        let mut placed = false;
        for i in 0..bins {
            let upper_ok = if i == bins - 1 { v <= hi } else { v < edges[i + 1] };
            if v >= edges[i] && upper_ok {
                counts[i] += 1;
                placed = true;
                break;
            }
        }
        assert!(placed, "value {v} outside [{lo}, {hi}]");
    }
    counts
}

/// Parses `bin_lo,bin_hi,count` CSV into counts.
pub fn csv_counts(text: &str) -> Vec<u64> {
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("bin_lo,bin_hi,count"));
    lines.map(|l| l.rsplit(',').next().unwrap().parse().unwrap()).collect()
}

/// Random printable strings over a small alphabet so that n-grams repeat.
pub fn random_text(rng: &mut ChaCha8Rng) -> String {
    let alphabet: Vec<char> = "ab cé✓".chars().collect();
    let len = rng.gen_range(0..60);
    (0..len).map(|_| alphabet[rng.gen_range(0..alphabet.len())]).collect()
}

pub fn distinct_count<T: std::hash::Hash + Eq>(items: impl IntoIterator<Item = T>) -> usize {
    items.into_iter().collect::<HashSet<_>>().len()
}

// ---------------------------------------------------------------------------
// Real media fixtures

use vidcurate::media::{FfmpegBackend, FfmpegConfig};

pub const LOSSLESS: &[&str] = &["-c:v", "ffv1", "-pix_fmt", "bgr0"];
pub const LOSSY: &[&str] = &["-c:v", "libx264", "-preset", "veryfast", "-crf", "18", "-pix_fmt", "yuv420p"];

/// The ffmpeg backend, or `None` when the tools are not installed.
pub fn ffmpeg() -> Option<FfmpegBackend> {
    let backend = FfmpegBackend::new(FfmpegConfig::default());
    backend.available().then_some(backend)
}

/// Renders a synthetic clip to disk. Lossless fixtures go in Matroska,
/// lossy ones in MP4.
pub fn encode_clip(backend: &FfmpegBackend, dir: &Path, name: &str, clip: &SyntheticClip, lossless: bool) -> PathBuf {
    let path = dir.join(format!("{name}.{}", if lossless { "mkv" } else { "mp4" }));
    let frames: Vec<_> = (0..clip.num_frames).map(|i| clip.frame(i)).collect();
    backend
        .encode_frames(&frames, clip.fps, &path, if lossless { LOSSLESS } else { LOSSY })
        .expect("fixture encodes");
    path
}
