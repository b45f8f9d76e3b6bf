use detkit::metrics::{
    average_precision, evaluate, f_beta, iou_range, map_over_range, pr_curve, EvalConfig,
    GroundTruth,
};
use detkit::{BBox, Detection, Execution};
use detkit_oracles::ap::brute_force_ap;
use detkit_oracles::fixtures::{micro_dataset, rng};
use rand::Rng;

#[test]
fn two_thirds_fixture() {
    let curve = pr_curve(&[(0.9, true), (0.8, false), (0.7, true)], 2);
    assert!((average_precision(&curve) - 5.0 / 6.0).abs() < 1e-12);
}

#[test]
fn matches_exhaustive_enumeration() {
    let mut r = rng(0xa9);
    for case in 0..200 {
        let (dets, gts) = micro_dataset(&mut r);
        let thr = [0.5, 0.75][case % 2];
        let report = map_over_range(&dets, &gts, &[thr]).unwrap();
        for c in &report.classes {
            let want = brute_force_ap(&dets, &gts, c.class_id, thr);
            assert!(
                (c.ap[0] - want).abs() <= 1e-10,
                "case {case} class {} got {} want {want}",
                c.class_id,
                c.ap[0]
            );
        }
    }
}

#[test]
fn f1_identity_on_grid() {
    for i in 0..100 {
        for j in 0..100 {
            let p = (i as f64 + 0.5) / 100.0;
            let r = (j as f64 + 0.5) / 100.0;
            let want = 2.0 * p * r / (p + r);
            assert!((f_beta(p, r, 1.0) - want).abs() <= 1e-14, "p={p} r={r}");
        }
    }
}

#[test]
fn map_non_increasing_in_threshold() {
    let thresholds = iou_range(0.05, 0.95, 0.05).unwrap();
    let mut r = rng(11);
    for _ in 0..100 {
        let (dets, gts) = micro_dataset(&mut r);
        let report = map_over_range(&dets, &gts, &thresholds).unwrap();
        for t in 1..thresholds.len() {
            assert!(report.map_at(t) <= report.map_at(t - 1) + 1e-12);
        }
    }
}

#[test]
fn ap_invariant_under_monotone_rescaling() {
    let mut r = rng(0x5ca1e);
    for _ in 0..50 {
        let (dets, gts) = micro_dataset(&mut r);
        let k = r.random_range(0.5..3.0);
        let rescaled: Vec<Detection> = dets
            .iter()
            .map(|d| Detection {
                score: d.score.powf(k) * 0.5,
                ..d.clone()
            })
            .collect();
        let thr = iou_range(0.5, 0.95, 0.05).unwrap();
        let a = map_over_range(&dets, &gts, &thr).unwrap();
        let b = map_over_range(&rescaled, &gts, &thr).unwrap();
        for (ca, cb) in a.classes.iter().zip(&b.classes) {
            for (x, y) in ca.ap.iter().zip(&cb.ap) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }
}

#[test]
fn duplicates_never_raise_ap() {
    let mut r = rng(0xd0b);
    for _ in 0..100 {
        let (dets, gts) = micro_dataset(&mut r);
        if dets.is_empty() {
            continue;
        }
        let src = dets[r.random_range(0..dets.len())].clone();
        let mut more = dets.clone();
        more.push(Detection {
            score: src.score * 0.999_999,
            ..src
        });
        let a = map_over_range(&dets, &gts, &[0.5]).unwrap();
        let b = map_over_range(&more, &gts, &[0.5]).unwrap();
        for cb in &b.classes {
            if let Some(ca) = a.classes.iter().find(|c| c.class_id == cb.class_id) {
                assert!(cb.ap[0] <= ca.ap[0] + 1e-12);
            }
        }
    }
}

#[test]
fn perfect_detector_scores_one_everywhere() {
    let gts: Vec<GroundTruth> = (0..6)
        .map(|i| {
            let x = 20.0 * i as f64;
            GroundTruth::new("img", i % 3, BBox::new(x, 0.0, x + 15.0, 15.0))
        })
        .collect();
    let dets: Vec<Detection> = gts
        .iter()
        .enumerate()
        .map(|(i, g)| Detection::new("img", g.class_id, 0.5 + i as f64 / 20.0, g.bbox))
        .collect();
    let names = vec!["a".to_string(), "b".to_string(), "c".to_string()];
    let report = evaluate(
        &dets,
        &gts,
        &names,
        &EvalConfig::default(),
        Execution::Sequential,
    )
    .unwrap();
    assert_eq!(report.map50, Some(1.0));
    assert_eq!(report.map_range, 1.0);
    assert!((report.best_mean_f1.1 - 1.0).abs() < 1e-12);
}
