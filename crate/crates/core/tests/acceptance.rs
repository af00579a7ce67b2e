//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails. Uses score files only, no sidecars.
//! Criteria that need real media count as failures when ffmpeg is missing.

mod common;

use std::collections::BTreeSet;
use std::panic::{self, AssertUnwindSafe};
use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use common::*;
use rand::Rng;
use vidcurate::accelerate::{accelerate, AccelerationPolicy};
use vidcurate::config::PipelineConfig;
use vidcurate::filters::Bounds;
use vidcurate::media::{MediaBackend, Pattern, SyntheticClip};
use vidcurate::metrics::*;
use vidcurate::model::{CaptionSource, Metric, VideoRecord};
use vidcurate::scorer::ScoreOp;
use vidcurate::selection::{exact_select, select_budget, SelectionItem};

type Outcome = Result<String, String>;

macro_rules! check {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn metric_oracles() -> Outcome {
    let mut rng = rng(101);
    for _ in 0..1000 {
        let text = random_text(&mut rng);
        let n = rng.gen_range(1..7);
        let (got, want) = (char_repetition_ratio(&text, n), brute_repetition(&text, n));
        check!(got == want, "char_repetition {text:?} n={n}: {got} != {want}");
    }
    for _ in 0..500 {
        let (w, h) = (rng.gen_range(4i64..64), rng.gen_range(4i64..64));
        let frames: Vec<Vec<[i64; 4]>> = (0..rng.gen_range(1..5))
            .map(|_| {
                (0..rng.gen_range(0..6))
                    .map(|_| {
                        let (x0, y0) = (rng.gen_range(-5..w), rng.gen_range(-5..h));
                        [x0, y0, x0 + rng.gen_range(1..w / 2 + 2), y0 + rng.gen_range(1..h / 2 + 2)]
                    })
                    .collect()
            })
            .collect();
        let mut boxes = Vec::new();
        for f in &frames {
            let row: Result<Vec<BoundingBox>, String> = f
                .iter()
                .map(|b| BoundingBox::new(b[0] as f64, b[1] as f64, b[2] as f64, b[3] as f64))
                .collect();
            boxes.push(row?);
        }
        let (got, want) = (ocr_area_ratio(&boxes, w as u32, h as u32), raster_ocr(&frames, w as u32, h as u32));
        check!(got == want, "ocr_area_ratio {frames:?} in {w}x{h}: {got} != {want}");
    }
    let mut worst: f64 = 0.0;
    for _ in 0..500 {
        let dim = rng.gen_range(1..64);
        let text: Vec<f64> = (0..dim).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let frames: Vec<Vec<f64>> = (0..rng.gen_range(1..16))
            .map(|_| (0..dim).map(|_| rng.gen_range(-3.0..3.0)).collect())
            .collect();
        let got = similarity_aggregate(&frames, &text).map_err(err)?;
        worst = worst.max((got - direct_similarity(&frames, &text)).abs());
    }
    check!(worst <= 1e-12, "similarity max |delta| {worst:e}");
    Ok(format!("1000 strings and 500 box sets exact, similarity max |delta| {worst:.1e}"))
}

fn motion_ground_truths() -> Outcome {
    let ff = ffmpeg().ok_or("ffmpeg/ffprobe not available")?;
    let dir = tempfile::tempdir().map_err(err)?;
    let clip = |pattern| SyntheticClip {
        width: 320,
        height: 240,
        num_frames: 32,
        fps: 8.0,
        pattern,
    };
    let plan = PipelineConfig::with_budget(1).sampling.motion_plan();
    let measure = |p: &Path| -> Result<f64, String> { motion_score(&ff.sample_frames(p, &plan).map_err(err)?).map_err(err) };
    let mut report = Vec::new();
    for lossless in [true, false] {
        let kind = if lossless { "lossless" } else { "codec" };
        let still = encode_clip(&ff, dir.path(), &format!("still-{kind}"), &clip(Pattern::Static { gray: 128 }), lossless);
        let flicker = encode_clip(&ff, dir.path(), &format!("flicker-{kind}"), &clip(Pattern::Alternating), lossless);
        let (s, a) = (measure(&still)?, measure(&flicker)?);
        if lossless {
            check!(s == 0.0 && a == 1.0, "lossless: static {s}, alternating {a}");
        } else {
            check!(s <= 0.02 && a >= 0.9, "codec: static {s}, alternating {a}");
        }
        report.push(format!("{kind} static {s} alternating {a:.4}"));
    }
    Ok(report.join(", "))
}

fn acceleration_contract() -> Outcome {
    let ff = ffmpeg().ok_or("ffmpeg/ffprobe not available")?;
    let dir = tempfile::tempdir().map_err(err)?;
    let four_seconds = SyntheticClip {
        width: 320,
        height: 240,
        num_frames: 64,
        fps: 16.0,
        pattern: Pattern::Ramp { start: 10, step: 3 },
    };
    let input = encode_clip(&ff, dir.path(), "four", &four_seconds, false);
    let before = ff.probe(&input).map_err(err)?;
    let out = ff.reencode_speedup(&input, &dir.path().join("four.x2.mp4"), 2.0).map_err(err)?;
    let interval = 1.0 / out.fps;
    check!((out.duration - 2.0).abs() <= interval, "duration {} not within {interval} of 2.0", out.duration);
    check!(
        (out.width, out.height, out.num_frames) == (before.width, before.height, before.num_frames),
        "shape changed: {before:?} -> {out:?}"
    );

    let gradient = SyntheticClip {
        width: 512,
        height: 512,
        num_frames: 40,
        fps: 8.0,
        pattern: Pattern::MovingGradient { step: 1 },
    };
    let path = encode_clip(&ff, dir.path(), "gradient", &gradient, false);
    let config = PipelineConfig::with_budget(1);
    let plan = config.sampling.motion_plan();
    let edge = config.sampling.downscale_edge;
    let mut record = VideoRecord::new("gradient", &path, Some("a gray ramp slides right".into()));
    record.media = Some(ff.probe(&path).map_err(err)?);
    let old = motion_score_with(&ff.sample_frames(&path, &plan).map_err(err)?, edge).map_err(err)?;
    record.metrics.set(Metric::MotionScore, old).map_err(err)?;
    let policy = AccelerationPolicy::default();
    check!(policy.qualifies(&record), "gradient fixture does not qualify (motion {old})");
    let fast = accelerate(record, &policy, &ff, &plan, edge).record;
    let last = fast.decisions.last().map(|d| d.reason.as_str());
    check!(last == Some("accelerated"), "acceleration failed: {:?}", fast.decisions);
    let new = fast.metrics.get(Metric::MotionScore).ok_or("no motion after acceleration")?;
    check!(new > old, "motion did not increase: {old} -> {new}");
    Ok(format!(
        "{:.3}s, {} frames {}x{}, gradient motion {old:.5} -> {new:.5}",
        out.duration, out.num_frames, out.width, out.height
    ))
}

/// Every subset by bitmask, keeping the best feasible one.
fn enumerate_best(items: &[SelectionItem], budget: u64) -> BTreeSet<String> {
    let mut best = (0.0, BTreeSet::new());
    for mask in 0u32..(1 << items.len()) {
        let pick: Vec<&SelectionItem> = (0..items.len()).filter(|b| mask >> b & 1 == 1).map(|b| &items[b]).collect();
        let cost: u64 = pick.iter().map(|i| i.cost).sum();
        let q: f64 = pick.iter().map(|i| i.quality).sum();
        if cost <= budget && q > best.0 {
            best = (q, pick.iter().map(|i| i.record_id.clone()).collect());
        }
    }
    best.1
}

fn selection() -> Outcome {
    let ids = |v: &[&str]| v.iter().map(|s| s.to_string()).collect::<BTreeSet<_>>();
    let worked = [
        (vec![("A", 10.0, 5), ("B", 9.0, 5), ("C", 12.0, 10)], 10, ids(&["A", "B"])),
        (vec![("A", 6.0, 1), ("B", 10.0, 10)], 10, ids(&["B"])),
    ];
    for (spec, budget, want) in worked {
        let items: Vec<SelectionItem> = spec.iter().map(|&(id, q, c)| SelectionItem::new(id, q, c)).collect();
        let exact = exact_select(&items, budget).map_err(err)?;
        let enumerated = enumerate_best(&items, budget);
        check!(exact == want && enumerated == want, "worked instance: exact {exact:?}, enumeration {enumerated:?}");
    }
    let mut rng = rng(202);
    let mut worst = f64::INFINITY;
    for _ in 0..200 {
        let n = rng.gen_range(0..=15);
        let items: Vec<SelectionItem> = (0..n)
            .map(|i| SelectionItem::new(format!("i{i:02}"), rng.gen_range(0.0..10.0), rng.gen_range(1..1000)))
            .collect();
        let budget = rng.gen_range(1..4000);
        let total = |s: &BTreeSet<String>| -> (u64, f64) {
            let chosen = items.iter().filter(|i| s.contains(&i.record_id));
            chosen.fold((0, 0.0), |(c, q), i| (c + i.cost, q + i.quality))
        };
        let (g_cost, g_q) = total(&select_budget(&items, budget));
        let (_, e_q) = total(&exact_select(&items, budget).map_err(err)?);
        check!(g_cost <= budget, "greedy cost {g_cost} over budget {budget}");
        check!(g_q >= 0.5 * e_q, "greedy {g_q} below half of exact {e_q}");
        if e_q > 0.0 {
            worst = worst.min(g_q / e_q);
        }
    }
    Ok(format!("worked instances match enumeration, worst greedy/exact {worst:.3}"))
}

const COMPARED: &[&str] = &["curated.jsonl", "dropped.jsonl", "histograms"];

fn pipeline_determinism_and_routing() -> Outcome {
    let c = corpus(303);
    let mut config = PipelineConfig::with_budget(u64::MAX);
    config.budget = 10_000_000;
    let captioned: BTreeSet<&str> = c
        .truths
        .iter()
        .filter(|t| t.original_caption.is_some())
        .map(|t| t.id.as_str())
        .collect();
    let mut trees = Vec::new();
    for workers in [1, 8] {
        let (out, gateway) = c.run(&config, workers);
        let leaked = gateway
            .request_log()
            .iter()
            .filter(|e| e.op == ScoreOp::Caption && captioned.contains(e.video_id.as_str()))
            .count();
        check!(leaked == 0, "{leaked} captioner requests for captioned records");
        for (r, t) in out.records.iter().zip(&c.truths) {
            if t.original_caption.is_none() && !r.is_dropped() {
                check!(r.caption_source == CaptionSource::Generated, "{} kept without a generated caption", r.id);
            }
        }
        let s = &out.summary.records;
        let same_ids = out.records.iter().map(|r| &r.id).eq(c.records.iter().map(|r| &r.id));
        check!(same_ids && s.input == c.records.len() && s.kept + s.dropped == s.input, "conservation broken: {s:?}");

        let dir = tempfile::tempdir().map_err(err)?;
        out.write(dir.path()).map_err(err)?;
        let compared: Vec<_> = read_tree(dir.path())
            .into_iter()
            .filter(|(p, _)| COMPARED.iter().any(|c| p.starts_with(c)))
            .collect();
        trees.push(compared);
    }
    check!(trees[0] == trees[1], "1-worker and 8-worker outputs differ");
    Ok(format!(
        "{} files identical across 1 and 8 workers, {} captioned records never sent to the captioner",
        trees[0].len(),
        captioned.len()
    ))
}

fn filter_monotonicity() -> Outcome {
    let c = corpus(404);
    let chains: Vec<(Metric, Vec<Bounds>)> = vec![
        (Metric::CharRepetition, [0.5, 0.3, 0.2, 0.1, 0.0].map(Bounds::max).to_vec()),
        (Metric::FrameTextSimilarity, [-1.0, 0.0, 0.2, 0.5, 0.8].map(Bounds::min).to_vec()),
        (Metric::Aesthetic, [0.0, 3.0, 4.0, 6.0, 8.0].map(Bounds::min).to_vec()),
        (Metric::OcrAreaRatio, [1.0, 0.2, 0.05, 0.01, 0.0].map(Bounds::max).to_vec()),
        (Metric::Resolution, [0.0, 256.0, 300.0, 512.0, 720.0].map(Bounds::min).to_vec()),
        (
            Metric::MotionScore,
            vec![
                Bounds::band(0.0, 1.0),
                Bounds::band(0.01, 0.9),
                Bounds::band(0.05, 0.7),
                Bounds::band(0.1, 0.5),
                Bounds::band(0.2, 0.3),
            ],
        ),
    ];
    let mut report = Vec::new();
    for (metric, chain) in chains {
        let mut previous: Option<BTreeSet<String>> = None;
        let mut sizes = Vec::new();
        for bounds in chain {
            let mut config = PipelineConfig::with_budget(u64::MAX);
            config.thresholds.set(metric, Some(bounds));
            let kept = kept_ids(&c.run(&config, 4).0);
            if let Some(prev) = &previous {
                check!(kept.is_subset(prev), "{metric} at {bounds:?} kept a record a looser threshold dropped");
            }
            sizes.push(kept.len());
            previous = Some(kept);
        }
        report.push(format!("{metric} {sizes:?}"));
    }
    Ok(report.join(", "))
}

fn histogram_oracle() -> Outcome {
    let c = corpus(505);
    let config = PipelineConfig::with_budget(u64::MAX);
    let (out, _) = c.run(&config, 4);
    let dir = tempfile::tempdir().map_err(err)?;
    out.write(dir.path()).map_err(err)?;
    let mut totals = Vec::new();
    for metric in Metric::SCORES {
        let values: Vec<f64> = out.records.iter().filter_map(|r| r.metric(metric)).collect();
        let csv = std::fs::read_to_string(dir.path().join(format!("histograms/{}.csv", metric.name()))).map_err(err)?;
        let counts = csv_counts(&csv);
        let (lo, hi) = metric.range();
        let want = if values.is_empty() { vec![] } else { oracle_bins(&values, lo, hi, config.histogram_bins) };
        check!(counts == want, "{metric}: emitted {counts:?}, oracle {want:?}");
        let sum: u64 = counts.iter().sum();
        check!(sum == values.len() as u64, "{metric}: counts sum to {sum}, {} records scored", values.len());
        totals.push(format!("{metric} {sum}"));
    }
    Ok(totals.join(", "))
}

fn main() -> ExitCode {
    let criteria: &[(&str, Option<f64>, fn() -> Outcome)] = &[
        ("metric oracles", Some(10.0), metric_oracles),
        ("motion score ground truths", Some(30.0), motion_ground_truths),
        ("acceleration contract", Some(60.0), acceleration_contract),
        ("selection", Some(10.0), selection),
        ("pipeline determinism and routing", Some(60.0), pipeline_determinism_and_routing),
        ("filter monotonicity", None, filter_monotonicity),
        ("histogram oracle", None, histogram_oracle),
    ];
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for &(name, limit, run) in criteria {
        let start = Instant::now();
        let outcome = panic::catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        let outcome = match (outcome, limit) {
            (Ok(_), Some(limit)) if secs >= limit => Err(format!("took {secs:.2}s, limit {limit}s")),
            (o, _) => o,
        };
        match outcome {
            Ok(detail) => println!("PASS {name} ({secs:.2}s): {detail}"),
            Err(reason) => {
                failed += 1;
                println!("FAIL {name} ({secs:.2}s): {reason}");
            }
        }
    }
    println!("{} passed, {failed} failed", criteria.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
