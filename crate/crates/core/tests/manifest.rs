use proptest::prelude::*;
use serde_json::json;
use vidcurate::model::*;

fn arb_metrics() -> impl Strategy<Value = MetricSet> {
    (
        prop::option::of(0.0f64..=1.0),
        prop::option::of(-1.0f64..=1.0),
        prop::option::of(0.0f64..=10.0),
        prop::option::of(0.0f64..=1.0),
        prop::option::of(0.0f64..=1.0),
        prop::option::of(1u64..u64::MAX / 2),
    )
        .prop_map(|(cr, sim, aes, ocr, mot, cost)| {
            let mut m = MetricSet::default();
            let pairs = [
                (Metric::CharRepetition, cr),
                (Metric::FrameTextSimilarity, sim),
                (Metric::Aesthetic, aes),
                (Metric::OcrAreaRatio, ocr),
                (Metric::MotionScore, mot),
            ];
            for (metric, v) in pairs {
                if let Some(v) = v {
                    m.set(metric, v).unwrap();
                }
            }
            if let Some(c) = cost {
                m.set_pixel_cost(c);
            }
            m
        })
}

fn arb_media() -> impl Strategy<Value = Option<MediaInfo>> {
    prop::option::of((1u32..4000, 1u32..4000, 1u64..10_000, 1.0f64..120.0).prop_map(|(w, h, n, fps)| {
        MediaInfo::new(w, h, n, fps, n as f64 / fps).unwrap()
    }))
}

fn arb_record() -> impl Strategy<Value = VideoRecord> {
    (
        "[a-z0-9_]{1,12}",
        "[a-zA-Z0-9/._ -]{1,24}",
        prop::option::of("\\PC{1,40}"),
        arb_media(),
        arb_metrics(),
        prop::collection::vec(("[a-z_]{1,10}", 0u8..3, "[a-z_]{1,12}", prop::option::of(-1e6f64..1e6)), 0..4),
        prop::option::of("[a-z]{1,8}"),
        any::<bool>(),
    )
        .prop_map(|(id, path, caption, media, metrics, decisions, extra, generated)| {
            let mut r = VideoRecord::new(id, path, caption);
            if generated && r.caption.is_none() {
                r.caption = Some("made up".into());
                r.caption_source = CaptionSource::Generated;
            }
            r.media = media;
            r.metrics = metrics;
            for (stage, a, reason, value) in decisions {
                let action = [Action::Keep, Action::Drop, Action::Transform][a as usize];
                let mut e = DecisionEntry::new(stage, action, reason);
                if let Some(v) = value {
                    e = e.with_value(v);
                }
                r.record(e);
            }
            if let Some(key) = extra {
                r.extra.insert(format!("x_{key}"), json!({"nested": [1, 2.5, "s"]}));
                r.meta = Some(json!({"source": key}));
            }
            r
        })
}

fn unique(records: Vec<VideoRecord>) -> Vec<VideoRecord> {
    records
        .into_iter()
        .enumerate()
        .map(|(i, mut r)| {
            r.id = format!("{i}-{}", r.id);
            r
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn manifest_round_trips(records in prop::collection::vec(arb_record(), 0..8).prop_map(unique)) {
        let text = manifest_to_string(&records);
        let parsed = parse_manifest_str(&text).unwrap();
        prop_assert_eq!(&parsed, &records);
        prop_assert_eq!(manifest_to_string(&parsed), text);
    }
}

#[test]
fn key_order_is_stable() {
    let mut r = VideoRecord::new("a", "a.mp4", Some("a dog".into()));
    r.media = Some(MediaInfo::new(320, 240, 64, 16.0, 4.0).unwrap());
    r.metrics.set(Metric::Aesthetic, 5.5).unwrap();
    r.record(DecisionEntry::new("aesthetic", Action::Keep, "in_range").with_value(5.5));
    let line = manifest_to_string(&[r]);
    let keys: Vec<&str> = ["\"id\"", "\"path\"", "\"caption\"", "\"caption_source\"", "\"media\"", "\"metrics\"", "\"decisions\"", "\"status\""]
        .into_iter()
        .collect();
    let positions: Vec<usize> = keys.iter().map(|k| line.find(k).unwrap()).collect();
    assert!(positions.windows(2).all(|w| w[0] < w[1]), "{line}");
}

#[test]
fn ingest_errors_name_lines() {
    let err = parse_manifest_str("{\"id\":\"a\",\"path\":\"a.mp4\"}\n{\"path\":\"b.mp4\"}\n").unwrap_err();
    assert!(err.to_string().contains('2'), "{err}");
    let err = parse_manifest_str("{\"id\":\"a\",\"path\":\"a.mp4\"}\n\n{\"id\":\"a\",\"path\":\"c.mp4\"}\n").unwrap_err();
    assert!(matches!(err, ManifestError::DuplicateId { .. }), "{err}");
    let err = parse_manifest_str("{\"id\":\"a\",\"path\":\"a.mp4\",\"metrics\":{\"aesthetic\":11}}\n").unwrap_err();
    assert!(err.to_string().contains("aesthetic"), "{err}");
}
