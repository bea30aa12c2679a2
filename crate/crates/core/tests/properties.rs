//! Invariants of the public API, checked over generated inputs.

use std::collections::HashSet;

use mtaffect::data::{read_manifest, subsample_epoch, write_manifest, DatasetManifest, Provenance, SampleRecord, Source};
use mtaffect::losses::{loss_au, loss_au_grad, loss_expr, loss_va, ExprTarget, TargetSet};
use mtaffect::metrics::{evaluate, EvalOptions, PredictionRow};
use mtaffect::model::{checkpoint, softmax, ModelConfig, MultiTaskModel};
use mtaffect::tensor::Tensor;
use mtaffect::Task;
use proptest::prelude::*;

const K: usize = 4;

fn targets() -> impl Strategy<Value = TargetSet> {
    let va = proptest::option::of([-1.0f64..=1.0, -1.0f64..=1.0]);
    let expr = proptest::option::of(prop_oneof![
        (0usize..7).prop_map(ExprTarget::Class),
        proptest::collection::vec(0.01f64..1.0, 7).prop_map(|w| {
            let s: f64 = w.iter().sum();
            ExprTarget::Distribution(w.iter().map(|v| v / s).collect())
        }),
    ]);
    let au = proptest::option::of(proptest::collection::vec(0.0f64..=1.0, K));
    (va, expr, au).prop_map(|(va, expr, au)| TargetSet { va, expr, au })
}

fn source() -> impl Strategy<Value = Source> {
    prop_oneof![
        Just(Source::AffWild2Like),
        Just(Source::ExpwLike),
        Just(Source::AffectNetLike),
        Just(Source::Synthetic)
    ]
}

fn manifest() -> impl Strategy<Value = DatasetManifest> {
    proptest::collection::vec((targets(), source(), any::<bool>()), 1..12).prop_map(|rows| {
        let records = rows
            .into_iter()
            .enumerate()
            .map(|(i, (t, s, teacher))| {
                let mut r = SampleRecord::ground_truth(format!("s{i}"), format!("img/{i}.png"), s, t);
                if teacher && r.targets.au.is_some() {
                    r.provenance[Task::Au.index()] = Provenance::Teacher;
                }
                r
            })
            .collect();
        DatasetManifest::new(records, K)
    })
}

fn image(seed: u64) -> Tensor {
    let data = (0..3 * 32 * 32)
        .map(|i| ((i as u64 * 2654435761 + seed * 97) % 1000) as f64 / 1000.0)
        .collect();
    Tensor::from_vec(3, 32, 32, data).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn manifest_text_round_trips(m in manifest()) {
        let mut buf = Vec::new();
        write_manifest(&m, &mut buf).unwrap();
        let back = read_manifest(&buf[..], "mem").unwrap();
        prop_assert_eq!(back.len(), m.len());
        for (a, b) in m.records.iter().zip(&back.records) {
            prop_assert_eq!(&a.id, &b.id);
            prop_assert_eq!(a.source, b.source);
            prop_assert_eq!(a.provenance, b.provenance);
            prop_assert_eq!(a.targets.mask(), b.targets.mask());
            if let (Some(x), Some(y)) = (a.targets.va, b.targets.va) {
                prop_assert!((x[0] - y[0]).abs() < 1e-12 && (x[1] - y[1]).abs() < 1e-12);
            }
            if let (Some(x), Some(y)) = (&a.targets.expr, &b.targets.expr) {
                prop_assert_eq!(x.class(), y.class());
            }
        }
        let mut again = Vec::new();
        write_manifest(&back, &mut again).unwrap();
        prop_assert_eq!(buf, again);
    }

    #[test]
    fn subsample_is_distinct_sized_and_reproducible(n in 1usize..400, f in 0.01f64..=1.0, seed: u64, epoch in 0u64..50) {
        let idx = subsample_epoch(n, f, seed, epoch).unwrap();
        prop_assert_eq!(idx.len(), ((f * n as f64).floor() as usize).min(n));
        prop_assert!(idx.iter().all(|&i| i < n));
        prop_assert_eq!(idx.iter().collect::<HashSet<_>>().len(), idx.len());
        prop_assert_eq!(idx, subsample_epoch(n, f, seed, epoch).unwrap());
    }

    #[test]
    fn losses_are_bounded_below(
        pred in [-1.0f64..1.0, -1.0f64..1.0],
        va in [-1.0f64..1.0, -1.0f64..1.0],
        logits in proptest::collection::vec(-8.0f64..8.0, 7),
        w in proptest::collection::vec(0.01f64..1.0, 7),
        au_logits in proptest::collection::vec(-8.0f64..8.0, K),
        au in proptest::collection::vec(0.0f64..=1.0, K),
    ) {
        prop_assert!(loss_va(pred, va).unwrap() >= 0.0);
        prop_assert_eq!(loss_va(va, va).unwrap(), 0.0);
        // Cross-entropy against a soft target never drops below its entropy.
        let s: f64 = w.iter().sum();
        let p: Vec<f64> = w.iter().map(|v| v / s).collect();
        let entropy: f64 = -p.iter().map(|v| v * v.ln()).sum::<f64>();
        let ce = loss_expr(&logits, &ExprTarget::Distribution(p)).unwrap();
        prop_assert!(ce >= entropy - 1e-9, "ce {} < entropy {}", ce, entropy);
        prop_assert!(loss_au(&au_logits, &au).unwrap() >= 0.0);
    }

    #[test]
    fn au_gradient_matches_central_difference(
        x in proptest::collection::vec(-6.0f64..6.0, K),
        y in proptest::collection::vec(0.0f64..=1.0, K),
    ) {
        let g = loss_au_grad(&x, &y);
        let h = 1e-5;
        for k in 0..K {
            let mut up = x.clone();
            up[k] += h;
            let mut dn = x.clone();
            dn[k] -= h;
            let fd = (loss_au(&up, &y).unwrap() - loss_au(&dn, &y).unwrap()) / (2.0 * h);
            prop_assert!((fd - g[k]).abs() < 1e-7, "k={} fd={} g={}", k, fd, g[k]);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn model_outputs_stay_in_range(seed in 0u64..1000, img in 0u64..1000) {
        let cfg = ModelConfig { seed, ..ModelConfig::tiny(8, 32) };
        let m = MultiTaskModel::new(cfg).unwrap();
        let p = m.forward(&image(img)).unwrap();
        prop_assert!(p.va.iter().all(|v| (-1.0..=1.0).contains(v)));
        let probs = p.expr_probs();
        prop_assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert_eq!(probs, softmax(&p.expr_logits));
        prop_assert!(p.au_probs().iter().all(|v| *v > 0.0 && *v < 1.0));
    }

    #[test]
    fn checkpoint_round_trip_preserves_outputs(seed in 0u64..1000) {
        let m = MultiTaskModel::new(ModelConfig { seed, ..ModelConfig::tiny(8, 32) }).unwrap();
        let back = checkpoint::from_bytes(&checkpoint::to_bytes(&m)).unwrap();
        prop_assert_eq!(checkpoint::digest(&m), checkpoint::digest(&back));
        let img = image(seed);
        prop_assert_eq!(m.forward(&img).unwrap(), back.forward(&img).unwrap());
    }
}

#[test]
fn truth_as_prediction_scores_one_and_teacher_labels_are_ignored() {
    let records: Vec<SampleRecord> = (0..14)
        .map(|i| {
            let au: Vec<f64> = (0..K).map(|k| ((i + k) % 2) as f64).collect();
            let t = TargetSet {
                va: Some([(i as f64 / 7.0) - 1.0, 1.0 - (i as f64 / 9.0)]),
                expr: Some(ExprTarget::Class(i % 7)),
                au: Some(au),
            };
            let mut r = SampleRecord::ground_truth(format!("s{i}"), "x.png", Source::Synthetic, t);
            if i >= 10 {
                r.provenance = [Provenance::Teacher; 3];
            }
            r
        })
        .collect();
    let m = DatasetManifest::new(records, K);
    let rows: Vec<PredictionRow> = m
        .records
        .iter()
        .map(|r| {
            let va = r.targets.va.unwrap();
            PredictionRow {
                id: r.id.clone(),
                valence: va[0],
                arousal: va[1],
                // Teacher-labelled rows get wrong predictions; they must not count.
                expr_class: if r.provenance[0] == Provenance::Teacher { 0 } else { r.targets.expr.as_ref().unwrap().class() },
                au_probs: r.targets.au.clone().unwrap(),
            }
        })
        .collect();
    let rep = evaluate(&rows, &m, &EvalOptions::default()).unwrap();
    assert_eq!(rep.expr.as_ref().unwrap().count, 10);
    assert_eq!(rep.expr.as_ref().unwrap().s_expr, 1.0);
    assert_eq!(rep.au.as_ref().unwrap().s_au, 1.0);
    assert!((rep.va.as_ref().unwrap().s_va - 1.0).abs() < 1e-12);
}
