//! Deterministic metrics: caption repetition, frame-difference motion, OCR
//! union-area coverage, frame/text cosine aggregation and pixel cost.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::media::Frame;
use crate::model::MediaInfo;

pub const DEFAULT_NGRAM: usize = 5;
pub const DEFAULT_DOWNSCALE_EDGE: u32 = 64;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricError {
    #[error("frame {index} is {got_w}x{got_h}, expected {want_w}x{want_h}")]
    FrameSizeMismatch {
        index: usize,
        got_w: u32,
        got_h: u32,
        want_w: u32,
        want_h: u32,
    },
    #[error("embedding dimension {got} does not match {want}")]
    DimMismatch { got: usize, want: usize },
    #[error("embedding has zero norm")]
    ZeroNorm,
    #[error("embedding contains a non-finite entry")]
    NonFinite,
    #[error("no frame embeddings to aggregate")]
    NoFrames,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

/// `1 - distinct / total` over character n-grams (Unicode scalar values).
/// Text shorter than `n` scores 0.
pub fn char_repetition_ratio(text: &str, n: usize) -> f64 {
    assert!(n >= 1, "n-gram length must be at least 1");
    let chars: Vec<char> = text.chars().collect();
    if chars.len() < n {
        return 0.0;
    }
    let total = chars.len() - n + 1;
    let distinct: HashSet<&[char]> = chars.windows(n).collect();
    1.0 - distinct.len() as f64 / total as f64
}

/// Exact accumulator behind [`motion_score`].
///
/// Each downscaled luma sample is kept as an integer multiple of
/// `1 / sample_den`, so per-pair differences add up without rounding. The
/// score is `diff_sum / (pairs * pair_den)` with
/// `pair_den = cells * sample_den * 255`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MotionTally {
    pub diff_sum: u128,
    pub pairs: u64,
    pub pair_den: u128,
}

impl MotionTally {
    pub fn score(&self) -> f64 {
        if self.pairs == 0 {
            return 0.0;
        }
        let den = self.pair_den * self.pairs as u128;
        // exact when the ratio is 0 or 1; otherwise one rounding per operand
        if self.diff_sum == 0 {
            0.0
        } else if self.diff_sum == den {
            1.0
        } else {
            self.diff_sum as f64 / den as f64
        }
    }
}

/// Area-averaging weights from `src` cells onto `dst` cells along one axis.
///
/// Coordinates are scaled by `dst * src` so that every overlap is an integer:
/// source cell `i` spans `[i*dst, (i+1)*dst)` and target cell `j` spans
/// `[j*src, (j+1)*src)`. Weights per target cell sum to `src`.
fn axis_weights(src: u32, dst: u32) -> Vec<Vec<(usize, u64)>> {
    let (src, dst) = (src as u64, dst as u64);
    (0..dst)
        .map(|j| {
            let lo = j * src;
            let hi = (j + 1) * src;
            let first = lo / dst;
            let last = (hi - 1) / dst;
            (first..=last)
                .filter_map(|i| {
                    let s0 = i * dst;
                    let s1 = s0 + dst;
                    let overlap = hi.min(s1).saturating_sub(lo.max(s0));
                    (overlap > 0).then_some((i as usize, overlap))
                })
                .collect()
        })
        .collect()
}

/// Rec.601 luma scaled by 1000, exact for 8-bit RGB.
#[inline]
fn luma_milli(px: &[u8]) -> u64 {
    299 * px[0] as u64 + 587 * px[1] as u64 + 114 * px[2] as u64
}

/// Downscales a frame's luma to `edge x edge` by area averaging. Values are
/// returned as integers in units of `1 / (1000 * width * height)`.
fn downscaled_luma(frame: &Frame, xw: &[Vec<(usize, u64)>], yw: &[Vec<(usize, u64)>]) -> Vec<u64> {
    let w = frame.width as usize;
    let luma: Vec<u64> = frame.pixels.chunks_exact(3).map(luma_milli).collect();
    // horizontal pass, then vertical
    let mut rows = vec![0u64; xw.len() * frame.height as usize];
    for y in 0..frame.height as usize {
        let src = &luma[y * w..(y + 1) * w];
        for (j, taps) in xw.iter().enumerate() {
            rows[y * xw.len() + j] = taps.iter().map(|&(i, wt)| src[i] * wt).sum();
        }
    }
    let mut out = vec![0u64; xw.len() * yw.len()];
    for (k, taps) in yw.iter().enumerate() {
        for j in 0..xw.len() {
            out[k * xw.len() + j] = taps.iter().map(|&(y, wt)| rows[y * xw.len() + j] * wt).sum();
        }
    }
    out
}

pub fn motion_tally(frames: &[Frame], edge: u32) -> Result<MotionTally, MetricError> {
    if edge == 0 {
        return Err(MetricError::InvalidArgument("downscale edge must be positive".into()));
    }
    let Some(first) = frames.first() else {
        return Ok(MotionTally {
            diff_sum: 0,
            pairs: 0,
            pair_den: 1,
        });
    };
    let (w, h) = (first.width, first.height);
    for (index, f) in frames.iter().enumerate() {
        if f.width != w || f.height != h {
            return Err(MetricError::FrameSizeMismatch {
                index,
                got_w: f.width,
                got_h: f.height,
                want_w: w,
                want_h: h,
            });
        }
    }
    let cells = edge as u128 * edge as u128;
    let sample_den = 1000u128 * w as u128 * h as u128;
    let pair_den = cells * sample_den * 255;
    if frames.len() < 2 {
        return Ok(MotionTally {
            diff_sum: 0,
            pairs: 0,
            pair_den,
        });
    }
    let xw = axis_weights(w, edge);
    let yw = axis_weights(h, edge);
    let mut diff_sum = 0u128;
    let mut prev = downscaled_luma(first, &xw, &yw);
    for f in &frames[1..] {
        let cur = downscaled_luma(f, &xw, &yw);
        diff_sum += prev
            .iter()
            .zip(&cur)
            .map(|(&a, &b)| a.abs_diff(b) as u128)
            .sum::<u128>();
        prev = cur;
    }
    Ok(MotionTally {
        diff_sum,
        pairs: frames.len() as u64 - 1,
        pair_den,
    })
}

/// Mean over consecutive frame pairs of the mean absolute luma difference,
/// normalised by 255, after area-downscaling each frame to `edge x edge`.
/// Fewer than two frames score 0.
pub fn motion_score_with(frames: &[Frame], edge: u32) -> Result<f64, MetricError> {
    Ok(motion_tally(frames, edge)?.score())
}

pub fn motion_score(frames: &[Frame]) -> Result<f64, MetricError> {
    motion_score_with(frames, DEFAULT_DOWNSCALE_EDGE)
}

/// Axis-aligned text box in pixel coordinates, `x0 < x1` and `y0 < y1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct BoundingBox {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl BoundingBox {
    pub fn new(x0: f64, y0: f64, x1: f64, y1: f64) -> Result<Self, String> {
        if ![x0, y0, x1, y1].iter().all(|v| v.is_finite()) {
            return Err("box coordinate is not finite".into());
        }
        if !(x0 < x1 && y0 < y1) {
            return Err(format!("degenerate box ({x0},{y0},{x1},{y1})"));
        }
        Ok(BoundingBox { x0, y0, x1, y1 })
    }

    fn clipped(&self, w: f64, h: f64) -> Option<(f64, f64, f64, f64)> {
        let x0 = self.x0.clamp(0.0, w);
        let x1 = self.x1.clamp(0.0, w);
        let y0 = self.y0.clamp(0.0, h);
        let y1 = self.y1.clamp(0.0, h);
        (x0 < x1 && y0 < y1).then_some((x0, y0, x1, y1))
    }
}

impl TryFrom<[f64; 4]> for BoundingBox {
    type Error = String;
    fn try_from(v: [f64; 4]) -> Result<Self, String> {
        BoundingBox::new(v[0], v[1], v[2], v[3])
    }
}

impl From<BoundingBox> for [f64; 4] {
    fn from(b: BoundingBox) -> Self {
        [b.x0, b.y0, b.x1, b.y1]
    }
}

/// Exact area of the union of boxes clipped to `[0,w] x [0,h]`, by
/// coordinate compression.
pub fn union_area(boxes: &[BoundingBox], w: f64, h: f64) -> f64 {
    let clipped: Vec<_> = boxes.iter().filter_map(|b| b.clipped(w, h)).collect();
    if clipped.is_empty() {
        return 0.0;
    }
    let mut xs: Vec<f64> = clipped.iter().flat_map(|b| [b.0, b.2]).collect();
    let mut ys: Vec<f64> = clipped.iter().flat_map(|b| [b.1, b.3]).collect();
    xs.sort_by(f64::total_cmp);
    xs.dedup();
    ys.sort_by(f64::total_cmp);
    ys.dedup();
    let find = |axis: &[f64], v: f64| axis.partition_point(|&a| a < v);
    let cols = xs.len() - 1;
    let mut covered = vec![false; cols * (ys.len() - 1)];
    for &(x0, y0, x1, y1) in &clipped {
        let (i0, i1) = (find(&xs, x0), find(&xs, x1));
        let (j0, j1) = (find(&ys, y0), find(&ys, y1));
        for j in j0..j1 {
            covered[j * cols + i0..j * cols + i1].fill(true);
        }
    }
    let mut area = 0.0;
    for j in 0..ys.len() - 1 {
        let dy = ys[j + 1] - ys[j];
        for i in 0..cols {
            if covered[j * cols + i] {
                area += (xs[i + 1] - xs[i]) * dy;
            }
        }
    }
    area
}

/// Mean over frames of the fraction of frame area covered by text boxes.
pub fn ocr_area_ratio(boxes_per_frame: &[Vec<BoundingBox>], frame_w: u32, frame_h: u32) -> f64 {
    assert!(frame_w > 0 && frame_h > 0, "frame dimensions must be positive");
    if boxes_per_frame.is_empty() {
        return 0.0;
    }
    let (w, h) = (frame_w as f64, frame_h as f64);
    let sum: f64 = boxes_per_frame
        .iter()
        .map(|boxes| union_area(boxes, w, h) / (w * h))
        .sum();
    (sum / boxes_per_frame.len() as f64).clamp(0.0, 1.0)
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Cosine similarity; both vectors must be finite, nonzero and equal length.
pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64, MetricError> {
    if a.len() != b.len() {
        return Err(MetricError::DimMismatch {
            got: a.len(),
            want: b.len(),
        });
    }
    if a.is_empty() {
        return Err(MetricError::ZeroNorm);
    }
    if !a.iter().chain(b).all(|x| x.is_finite()) {
        return Err(MetricError::NonFinite);
    }
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return Err(MetricError::ZeroNorm);
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

/// Mean over frames of `cosine(frame, text)`.
pub fn similarity_aggregate(frame_embeddings: &[Vec<f64>], text_embedding: &[f64]) -> Result<f64, MetricError> {
    if frame_embeddings.is_empty() {
        return Err(MetricError::NoFrames);
    }
    let mut sum = 0.0;
    for frame in frame_embeddings {
        sum += cosine(frame, text_embedding)?;
    }
    Ok((sum / frame_embeddings.len() as f64).clamp(-1.0, 1.0))
}

/// Clip shape used for budget accounting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "[u64; 3]", into = "[u64; 3]")]
pub struct TargetShape {
    pub frames: u64,
    pub height: u64,
    pub width: u64,
}

impl TargetShape {
    pub const LOW: TargetShape = TargetShape {
        frames: 16,
        height: 256,
        width: 256,
    };
    pub const HIGH: TargetShape = TargetShape {
        frames: 16,
        height: 512,
        width: 512,
    };
}

impl TryFrom<[u64; 3]> for TargetShape {
    type Error = String;
    fn try_from(v: [u64; 3]) -> Result<Self, String> {
        if v.contains(&0) {
            return Err(format!("target shape {v:?} has a zero component"));
        }
        Ok(TargetShape {
            frames: v[0],
            height: v[1],
            width: v[2],
        })
    }
}

impl From<TargetShape> for [u64; 3] {
    fn from(t: TargetShape) -> Self {
        [t.frames, t.height, t.width]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CostMode {
    #[default]
    TargetShape,
    Native,
}

pub fn pixel_cost(media: &MediaInfo, target: TargetShape, mode: CostMode) -> u64 {
    match mode {
        CostMode::TargetShape => media.num_frames.min(target.frames) * target.height * target.width,
        CostMode::Native => media.num_frames * media.width as u64 * media.height as u64,
    }
}
