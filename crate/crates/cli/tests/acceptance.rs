//! Acceptance criteria. Run with
//! `cargo test -p detkit-cli --test acceptance -- --nocapture`
//! to see one PASS/FAIL line per criterion.

#![allow(clippy::type_complexity, clippy::needless_range_loop)]

use std::process::Command;

use detkit::attention::gradcheck::{check_cbam, check_swin_block};
use detkit::attention::swin::WindowAttnWeights;
use detkit::attention::{swin_attention_maps, swin_block_forward, Tensor};
use detkit::augment::{mosaic_compose, mosaic_compose_at, LabeledImage, MosaicConfig, RasterImage};
use detkit::geometry::{iou, NormalizedBox};
use detkit::io::{
    parse_detections, parse_yolo_labels, report_value, serialize_detections, serialize_yolo_labels,
    write_ppm,
};
use detkit::metrics::{average_precision, f_beta, iou_range, map_over_range, pr_curve};
use detkit::postprocess::{decay_gaussian, decay_linear, suppress, NmsConfig, NmsMode};
use detkit::{BBox, Detection};
use detkit_cli::args::BenchArgs;
use detkit_cli::commands::{format_bench, run_bench};
use detkit_oracles::ap::brute_force_ap;
use detkit_oracles::fixtures::{
    clustered_input, detection_corpus, label_corpus, micro_dataset, nms_config, nms_input, rng,
};
use detkit_oracles::nms::reference_suppress;
use detkit_oracles::swin::{may_attend, naive_swin_block};

type Outcome = Result<(), String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Outcome {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn same_bits(a: &[Detection], b: &[Detection]) -> bool {
    a.len() == b.len()
        && a.iter().zip(b).all(|(x, y)| {
            x.score.to_bits() == y.score.to_bits() && x.bbox == y.bbox && x.class_id == y.class_id
        })
}

fn soft_nms_decay() -> Outcome {
    let lin = decay_linear(0.9, 0.5, 0.3);
    ensure((lin - 0.45).abs() <= 1e-12, || {
        format!("linear decay {lin}")
    })?;
    let gau = decay_gaussian(0.9, 0.5, 0.5);
    ensure((gau - 0.9 * (-0.5f64).exp()).abs() <= 1e-12, || {
        format!("gaussian decay {gau}")
    })?;
    let mut r = rng(0xacc1);
    for case in 0..100 {
        let dets = nms_input(&mut r, 200);
        let cfg = nms_config(&mut r);
        let got = suppress(&dets, &cfg).map_err(|e| e.to_string())?;
        ensure(same_bits(&got, &reference_suppress(&dets, &cfg)), || {
            format!(
                "case {case} ({} boxes, {cfg:?}) differs from reference",
                dets.len()
            )
        })?;
    }
    Ok(())
}

fn sigma_limit() -> Outcome {
    let mut r = rng(0xacc2);
    for case in 0..100 {
        let dets = clustered_input(&mut r);
        for a in &dets {
            for b in &dets {
                let u = iou(&a.bbox, &b.bbox);
                ensure(u == 0.0 || u >= 0.1, || {
                    format!("fixture {case} has overlap {u}")
                })?;
            }
        }
        let soft = NmsConfig {
            sigma: 1e-9,
            score_threshold: 0.001,
            ..NmsConfig::default()
        };
        let hard = NmsConfig {
            mode: NmsMode::Hard,
            iou_threshold: f64::MIN_POSITIVE,
            ..soft
        };
        let a = suppress(&dets, &soft).map_err(|e| e.to_string())?;
        let b = suppress(&dets, &hard).map_err(|e| e.to_string())?;
        ensure(same_bits(&a, &b), || {
            format!("fixture {case}: {} vs {} kept", a.len(), b.len())
        })?;
    }
    Ok(())
}

fn ap_oracle() -> Outcome {
    let ap = average_precision(&pr_curve(&[(0.9, true), (0.8, false), (0.7, true)], 2));
    ensure((ap - 5.0 / 6.0).abs() <= 1e-12, || {
        format!("fixture AP {ap}")
    })?;
    let mut r = rng(0xacc3);
    for case in 0..200 {
        let (dets, gts) = micro_dataset(&mut r);
        let thr = [0.5, 0.75][case % 2];
        let report = map_over_range(&dets, &gts, &[thr]).map_err(|e| e.to_string())?;
        for c in &report.classes {
            let want = brute_force_ap(&dets, &gts, c.class_id, thr);
            ensure((c.ap[0] - want).abs() <= 1e-10, || {
                format!(
                    "case {case} class {}: {} vs oracle {want}",
                    c.class_id, c.ap[0]
                )
            })?;
        }
    }
    Ok(())
}

fn metric_identities() -> Outcome {
    for i in 0..100 {
        for j in 0..100 {
            let (p, r) = ((i as f64 + 0.5) / 100.0, (j as f64 + 0.5) / 100.0);
            let got = f_beta(p, r, 1.0);
            ensure((got - 2.0 * p * r / (p + r)).abs() <= 1e-14, || {
                format!("f1({p},{r}) = {got}")
            })?;
        }
    }
    let thresholds = iou_range(0.05, 0.95, 0.05).map_err(|e| e.to_string())?;
    let mut r = rng(0xacc4);
    for case in 0..100 {
        let (dets, gts) = micro_dataset(&mut r);
        let report = map_over_range(&dets, &gts, &thresholds).map_err(|e| e.to_string())?;
        for t in 1..thresholds.len() {
            ensure(report.map_at(t) <= report.map_at(t - 1) + 1e-12, || {
                format!("case {case}: mAP rises at {}", thresholds[t])
            })?;
        }
    }
    for case in 0..50 {
        let (dets, gts) = micro_dataset(&mut r);
        let k = 0.5 + case as f64 / 20.0;
        let rescaled: Vec<Detection> = dets
            .iter()
            .map(|d| Detection {
                score: 0.5 * d.score.powf(k),
                ..d.clone()
            })
            .collect();
        let a = map_over_range(&dets, &gts, &thresholds).map_err(|e| e.to_string())?;
        let b = map_over_range(&rescaled, &gts, &thresholds).map_err(|e| e.to_string())?;
        ensure(
            a.classes.iter().zip(&b.classes).all(|(x, y)| x.ap == y.ap),
            || format!("rescaling case {case} changed AP"),
        )?;
    }
    Ok(())
}

fn gradient_checks() -> Outcome {
    for seed in 0..5 {
        for report in [
            check_cbam(seed, 1e-5, 1e-4).map_err(|e| e.to_string())?,
            check_swin_block(seed, 1e-5, 1e-4).map_err(|e| e.to_string())?,
        ] {
            ensure(report.pass, || {
                format!(
                    "{} seed {seed}: max rel err {:e}",
                    report.module, report.max_rel_error
                )
            })?;
        }
    }
    let (h, w, m, s) = (4, 4, 2, 1);
    let weights = WindowAttnWeights::seeded(4, m, s, 1, 1).map_err(|e| e.to_string())?;
    let x = Tensor::seeded_uniform(&[h, w, 4], 2);
    for win in swin_attention_maps(&x, &weights).map_err(|e| e.to_string())? {
        let n = win.tokens.len();
        for p in &win.weights {
            for i in 0..n {
                let row = &p.data()[i * n..(i + 1) * n];
                let sum: f64 = row.iter().sum();
                ensure((sum - 1.0).abs() <= 1e-12, || format!("row sum {sum}"))?;
                for (j, &v) in row.iter().enumerate() {
                    let a = (win.tokens[i] / w, win.tokens[i] % w);
                    let b = (win.tokens[j] / w, win.tokens[j] % w);
                    ensure(may_attend(a, b, h, w, m, s) || v == 0.0, || {
                        format!("cross-region weight {v:e} between {a:?} and {b:?}")
                    })?;
                }
            }
        }
    }
    Ok(())
}

fn swin_oracle() -> Outcome {
    let mut n = 0u64;
    for &(h, w) in &[(2, 2), (2, 4), (4, 4), (4, 8), (6, 6), (8, 8)] {
        for d in [2, 4, 6, 8] {
            for m in [1, 2, 4, 8] {
                if h % m != 0 || w % m != 0 {
                    continue;
                }
                for s in [0, m / 2] {
                    for heads in [1, 2] {
                        if d % heads != 0 {
                            continue;
                        }
                        n += 1;
                        let wt = WindowAttnWeights::seeded(d, m, s, heads, n)
                            .map_err(|e| e.to_string())?
                            .with_random_norms(n);
                        let x = Tensor::seeded_uniform(&[h, w, d], n).map(|v| 4.0 * v);
                        let got = swin_block_forward(&x, &wt).map_err(|e| e.to_string())?;
                        let err = got
                            .max_abs_diff(&naive_swin_block(&x, &wt))
                            .map_err(|e| e.to_string())?;
                        ensure(err <= 1e-10, || {
                            format!("H={h} W={w} d={d} M={m} s={s} heads={heads}: {err:e}")
                        })?;
                    }
                }
            }
        }
    }
    Ok(())
}

fn solid(side: u32, rgb: [u8; 3], labels: Vec<(u32, NormalizedBox)>) -> LabeledImage {
    LabeledImage {
        image: RasterImage::filled(side, side, rgb),
        labels,
    }
}

fn mosaic_geometry() -> Outcome {
    let s = 64;
    let label = NormalizedBox {
        cx: 0.5,
        cy: 0.5,
        w: 0.5,
        h: 0.5,
    };
    let inputs = vec![
        solid(s, [255, 0, 0], vec![(0, label)]),
        solid(s + 10, [0, 255, 0], vec![(1, label)]),
        solid(s / 2, [0, 0, 255], vec![(2, label)]),
        solid(s, [1, 2, 3], vec![(3, label)]),
    ];
    let cfg = MosaicConfig::new(s, 17);
    let a = mosaic_compose(&inputs, &cfg).map_err(|e| e.to_string())?;
    let b = mosaic_compose(&inputs, &cfg).map_err(|e| e.to_string())?;
    ensure(write_ppm(&a.canvas) == write_ppm(&b.canvas), || {
        "P6 bytes differ for one seed".into()
    })?;

    let tiles = vec![
        solid(s, [9, 9, 9], vec![(0, label)]),
        solid(s, [9, 9, 9], vec![]),
        solid(s, [9, 9, 9], vec![]),
        solid(s, [9, 9, 9], vec![]),
    ];
    let fixed = mosaic_compose_at(&tiles, &cfg, (s, s)).map_err(|e| e.to_string())?;
    let q = f64::from(s) / 4.0;
    let want = BBox::new(q, q, 3.0 * q, 3.0 * q);
    ensure(
        fixed.labels.len() == 1 && fixed.labels[0].bbox == want,
        || format!("quadrant tiling gave {:?}", fixed.labels),
    )?;

    let side = f64::from(2 * s);
    for seed in 0..100 {
        let out =
            mosaic_compose(&inputs, &MosaicConfig::new(s, seed)).map_err(|e| e.to_string())?;
        for l in &out.labels {
            let b = l.bbox;
            ensure(
                b.x_min >= 0.0 && b.y_min >= 0.0 && b.x_max <= side && b.y_max <= side,
                || format!("seed {seed}: box {b:?} leaves the canvas"),
            )?;
        }
    }
    Ok(())
}

fn throughput() -> Outcome {
    let mut lines = Vec::new();
    for mode in [NmsMode::SoftLinear, NmsMode::SoftGaussian] {
        let args = BenchArgs {
            boxes: 1000,
            images: 5,
            mode,
            repetitions: 5,
            seed: 0,
            parallel: false,
        };
        let report = run_bench(&args).map_err(|e| e.to_string())?;
        let ratio = report.ratio_to_hard();
        ensure(ratio <= 10.0, || {
            format!("{mode} takes {ratio:.2}x the hard-mode time")
        })?;
        let t = report.timed;
        ensure(
            (t.fps - t.images as f64 / t.seconds).abs() <= 1e-9 * t.fps,
            || "fps is not images / seconds".into(),
        )?;
        let text = format_bench(&report);
        let flag = report_value(&text, "meets_25fps");
        ensure(
            flag == Some(if t.fps >= 25.0 { "true" } else { "false" }),
            || format!("bad 25 fps flag {flag:?}"),
        )?;
        lines.push(format!("{mode} ratio {ratio:.2}"));
    }
    let o = Command::new(env!("CARGO_BIN_EXE_detkit"))
        .args([
            "bench",
            "--boxes",
            "1000",
            "--images",
            "2",
            "--repetitions",
            "1",
        ])
        .output()
        .map_err(|e| e.to_string())?;
    let text = String::from_utf8_lossy(&o.stdout);
    ensure(
        o.status.success()
            && report_value(&text, "fps").is_some()
            && report_value(&text, "meets_25fps").is_some(),
        || "bench command output lacks fps or meets_25fps".into(),
    )?;
    println!("    {}", lines.join(", "));
    Ok(())
}

fn format_round_trips() -> Outcome {
    let labels = label_corpus(&mut rng(0xacc9), 1000);
    let text = serialize_yolo_labels(&labels);
    let once = parse_yolo_labels(&text).map_err(|e| e.to_string())?;
    let twice = parse_yolo_labels(&serialize_yolo_labels(&once)).map_err(|e| e.to_string())?;
    let bits = |v: &[(u32, NormalizedBox)]| -> Vec<(u32, [u64; 4])> {
        v.iter()
            .map(|(c, b)| {
                (
                    *c,
                    [b.cx.to_bits(), b.cy.to_bits(), b.w.to_bits(), b.h.to_bits()],
                )
            })
            .collect()
    };
    ensure(
        bits(&labels) == bits(&once) && bits(&once) == bits(&twice),
        || "label round trip drifted".into(),
    )?;

    let dets = detection_corpus(&mut rng(0xacca), 1000);
    let once = parse_detections(&serialize_detections(&dets)).map_err(|e| e.to_string())?;
    let twice = parse_detections(&serialize_detections(&once)).map_err(|e| e.to_string())?;
    let bits = |v: &[Detection]| -> Vec<(String, u32, [u64; 5])> {
        v.iter()
            .map(|d| {
                let b = d.bbox;
                (
                    d.image_id.clone(),
                    d.class_id,
                    [d.score, b.x_min, b.y_min, b.x_max, b.y_max].map(f64::to_bits),
                )
            })
            .collect()
    };
    ensure(
        bits(&dets) == bits(&once) && bits(&once) == bits(&twice),
        || "detection round trip drifted".into(),
    )
}

#[test]
fn acceptance_criteria() {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        (
            "soft-nms decay fixtures and quadratic reference",
            soft_nms_decay,
        ),
        ("gaussian sigma limit equals eager hard nms", sigma_limit),
        ("average precision against exhaustive oracle", ap_oracle),
        ("metric identities", metric_identities),
        (
            "attention gradient checks and softmax masks",
            gradient_checks,
        ),
        ("swin block against dense reference", swin_oracle),
        ("mosaic determinism and geometry", mosaic_geometry),
        ("soft vs hard suppression throughput", throughput),
        ("label and detection format round trips", format_round_trips),
    ];
    let mut failed = Vec::new();
    for (i, (name, check)) in criteria.iter().enumerate() {
        match check() {
            Ok(()) => println!("criterion {}: PASS  {name}", i + 1),
            Err(why) => {
                println!("criterion {}: FAIL  {name}: {why}", i + 1);
                failed.push(i + 1);
            }
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
