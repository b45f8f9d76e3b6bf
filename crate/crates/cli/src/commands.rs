use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use detkit::attention::gradcheck::{check_module, GradCheckReport, ModuleKind};
use detkit::augment::{mosaic_compose, mosaic_compose_at, LabeledImage, MosaicConfig};
use detkit::geometry::to_normalized;
use detkit::io::{
    f1_curve_csv, format_report, load_detections, parse_detections, parse_yolo_labels,
    pr_curve_csv, read_ppm, serialize_detections, serialize_yolo_labels, write_ppm,
    DatasetManifest,
};
use detkit::metrics::{fps, iou_range, EvalConfig, FpsReport};
use detkit::postprocess::{suppress, suppress_batch, NmsConfig, NmsMode};
use detkit::synth::synthetic_detections;
use detkit::{Detection, Execution};

use crate::args::{AttnCheckArgs, AttnModule, BenchArgs, EvalArgs, MosaicArgs, NmsArgs};
use crate::{CliError, CliResult};

fn exec(sequential: bool) -> Execution {
    if sequential {
        Execution::Sequential
    } else {
        Execution::Parallel
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> CliResult<()> {
    std::fs::write(path, bytes).map_err(CliError::io(path))
}

fn read_text(path: &Path) -> CliResult<String> {
    std::fs::read_to_string(path).map_err(CliError::io(path))
}

fn out_err(e: std::io::Error) -> CliError {
    CliError::Io {
        path: PathBuf::from("<stdout>"),
        source: e,
    }
}

pub fn parse_iou_range(spec: &str) -> CliResult<Vec<f64>> {
    let parts: Vec<&str> = spec.split(':').collect();
    let nums: Vec<f64> = parts
        .iter()
        .map(|p| p.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|_| CliError::Usage(format!("bad --iou-range `{spec}`")))?;
    match nums.as_slice() {
        [lo, hi, step] => iou_range(*lo, *hi, *step).map_err(|e| CliError::Usage(e.to_string())),
        _ => Err(CliError::Usage(format!(
            "--iou-range expects LO:HI:STEP, got `{spec}`"
        ))),
    }
}

pub fn eval(a: &EvalArgs, out: &mut dyn Write) -> CliResult<()> {
    let thresholds = match a.iou {
        Some(t) if t > 0.0 && t < 1.0 => vec![t],
        Some(t) => return Err(CliError::Usage(format!("--iou {t} outside (0, 1)"))),
        None => parse_iou_range(&a.iou_range)?,
    };
    let manifest = DatasetManifest::load(&a.manifest).map_err(|e| match e {
        detkit::Error::Io(source) => CliError::Io {
            path: a.manifest.clone(),
            source,
        },
        other => other.into(),
    })?;
    if manifest.class_names.is_empty() {
        return Err(CliError::Data(detkit::Error::Data(
            "manifest lists no classes".into(),
        )));
    }
    let dets = parse_detections(&read_text(&a.detections)?)?;
    manifest.check_detections(&dets)?;
    let gts = manifest.load_ground_truth()?;

    let cfg = EvalConfig {
        thresholds,
        interpolation: a.interp,
        f1_iou: a.f1_iou,
    };
    let mut report =
        detkit::metrics::evaluate(&dets, &gts, &manifest.class_names, &cfg, exec(a.sequential))?;
    if let (Some(n), Some(t)) = (a.frames, a.seconds) {
        report.fps = Some(fps(n, t)?);
    }

    std::fs::create_dir_all(&a.out_dir).map_err(CliError::io(&a.out_dir))?;
    let text = format_report(&report);
    write_file(&a.out_dir.join("report.txt"), text.as_bytes())?;
    write_file(
        &a.out_dir.join("pr_curve.csv"),
        pr_curve_csv(&report).as_bytes(),
    )?;
    write_file(
        &a.out_dir.join("f1_curve.csv"),
        f1_curve_csv(&report).as_bytes(),
    )?;
    out.write_all(text.as_bytes()).map_err(out_err)
}

/// Splits detections per image, keeping first-appearance order.
fn group_by_image(dets: Vec<Detection>) -> Vec<Vec<Detection>> {
    let mut index: std::collections::HashMap<String, usize> = Default::default();
    let mut groups: Vec<Vec<Detection>> = Vec::new();
    for d in dets {
        let slot = *index.entry(d.image_id.clone()).or_insert_with(|| {
            groups.push(Vec::new());
            groups.len() - 1
        });
        groups[slot].push(d);
    }
    groups
}

pub fn nms(a: &NmsArgs, out: &mut dyn Write, err: &mut dyn Write) -> CliResult<()> {
    if a.sigma.is_some() && a.mode == NmsMode::Hard {
        let _ = writeln!(err, "warning: --sigma is ignored in hard mode");
    }
    let cfg = NmsConfig {
        mode: a.mode,
        iou_threshold: a.iou_threshold,
        sigma: a.sigma.unwrap_or(NmsConfig::default().sigma),
        score_threshold: a.score_threshold,
        class_agnostic: a.class_agnostic,
    };
    cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let dets = load_detections(&a.input).map_err(|e| match e {
        detkit::Error::Io(source) => CliError::Io {
            path: a.input.clone(),
            source,
        },
        other => other.into(),
    })?;
    let kept = suppress_batch(&group_by_image(dets), &cfg, exec(a.sequential))?;
    let text = serialize_detections(&kept.concat());
    match &a.output {
        Some(path) => write_file(path, text.as_bytes()),
        None => out.write_all(text.as_bytes()).map_err(out_err),
    }
}

pub fn mosaic(a: &MosaicArgs, out: &mut dyn Write) -> CliResult<()> {
    if a.images.len() != 4 || a.labels.len() != 4 {
        return Err(CliError::Usage(
            "mosaic needs exactly four --images and four --labels".into(),
        ));
    }
    let inputs = a
        .images
        .iter()
        .zip(&a.labels)
        .map(|(img, lab)| {
            let bytes = std::fs::read(img).map_err(CliError::io(img))?;
            let image = read_ppm(&bytes)
                .map_err(|e| detkit::Error::Data(format!("{}: {e}", img.display())))?;
            let labels = parse_yolo_labels(&read_text(lab)?)
                .map_err(|e| detkit::Error::Data(format!("{}: {e}", lab.display())))?;
            Ok(LabeledImage { image, labels })
        })
        .collect::<CliResult<Vec<_>>>()?;

    let cfg = MosaicConfig {
        min_box_pixels: a.min_box_pixels,
        min_area_ratio: a.min_area_ratio,
        ..MosaicConfig::new(a.size, a.seed)
    };
    let sample = match a.center {
        Some(c) => mosaic_compose_at(&inputs, &cfg, c)?,
        None => mosaic_compose(&inputs, &cfg)?,
    };
    let canvas = cfg.canvas_dims();
    let labels = sample
        .labels
        .iter()
        .map(|l| Ok((l.class_id, to_normalized(&l.bbox, canvas)?)))
        .collect::<detkit::Result<Vec<_>>>()?;

    let image_path = with_suffix(&a.out, "ppm");
    let label_path = with_suffix(&a.out, "txt");
    write_file(&image_path, &write_ppm(&sample.canvas))?;
    write_file(&label_path, serialize_yolo_labels(&labels).as_bytes())?;
    writeln!(
        out,
        "center = {},{}\nlabels = {}\nimage = {}\nlabel_file = {}",
        sample.center.0,
        sample.center.1,
        labels.len(),
        image_path.display(),
        label_path.display()
    )
    .map_err(out_err)
}

fn with_suffix(prefix: &Path, ext: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(".");
    s.push(ext);
    PathBuf::from(s)
}

pub fn format_grad_report(r: &GradCheckReport, seed: u64) -> String {
    format!(
        "module={} seed={} max_rel_err={:.3e} tol={:e} {}",
        r.module,
        seed,
        r.max_rel_error,
        r.tolerance,
        if r.pass { "pass" } else { "FAIL" }
    )
}

pub fn attn_check(a: &AttnCheckArgs, out: &mut dyn Write) -> CliResult<()> {
    let kinds: &[ModuleKind] = match a.module {
        AttnModule::Cbam => &[ModuleKind::Cbam],
        AttnModule::Swin => &[ModuleKind::SwinBlock],
        AttnModule::All => &[ModuleKind::Cbam, ModuleKind::SwinBlock],
    };
    let mut failures = 0;
    for &kind in kinds {
        for seed in 0..a.seeds {
            let r = check_module(kind, seed, a.step, a.tol)?;
            failures += usize::from(!r.pass);
            writeln!(out, "{}", format_grad_report(&r, seed)).map_err(out_err)?;
        }
    }
    if failures > 0 {
        return Err(CliError::CheckFailed(format!(
            "{failures} gradient check(s) failed"
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchReport {
    pub mode: NmsMode,
    pub boxes_per_image: usize,
    pub repetitions: usize,
    pub timed: FpsReport,
    pub hard: FpsReport,
}

impl BenchReport {
    pub fn ratio_to_hard(&self) -> f64 {
        self.timed.seconds / self.hard.seconds
    }
}

pub fn format_bench(r: &BenchReport) -> String {
    format!(
        "mode = {}\nimages = {}\nboxes_per_image = {}\nrepetitions = {}\nseconds = {:.6}\nfps = {:.2}\n\
         hard_seconds = {:.6}\nhard_fps = {:.2}\nratio_to_hard = {:.3}\nmeets_25fps = {}\n",
        r.mode,
        r.timed.images,
        r.boxes_per_image,
        r.repetitions,
        r.timed.seconds,
        r.timed.fps,
        r.hard.seconds,
        r.hard.fps,
        r.ratio_to_hard(),
        r.timed.meets_conveyor_rate()
    )
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        (xs[n / 2 - 1] + xs[n / 2]) / 2.0
    }
}

/// Median wall time of running `mode` over every image.
pub fn time_suppression(
    images: &[Vec<Detection>],
    mode: NmsMode,
    repetitions: usize,
    exec: Execution,
) -> CliResult<f64> {
    let cfg = NmsConfig::with_mode(mode);
    let mut times = Vec::with_capacity(repetitions);
    for _ in 0..repetitions.max(1) {
        let start = Instant::now();
        let kept = if exec.is_parallel() {
            suppress_batch(images, &cfg, exec)?
        } else {
            images
                .iter()
                .map(|d| suppress(d, &cfg))
                .collect::<detkit::Result<_>>()?
        };
        times.push(start.elapsed().as_secs_f64());
        std::hint::black_box(kept);
    }
    // guard against a zero reading on coarse clocks
    Ok(median(times).max(1e-9))
}

pub fn run_bench(a: &BenchArgs) -> CliResult<BenchReport> {
    if a.boxes == 0 || a.images == 0 || a.repetitions == 0 {
        return Err(CliError::Usage(
            "--boxes, --images and --repetitions must be positive".into(),
        ));
    }
    let images = synthetic_detections(a.images, a.boxes, a.seed);
    let e = if a.parallel {
        Execution::Parallel
    } else {
        Execution::Sequential
    };
    let timed = time_suppression(&images, a.mode, a.repetitions, e)?;
    let hard = time_suppression(&images, NmsMode::Hard, a.repetitions, e)?;
    Ok(BenchReport {
        mode: a.mode,
        boxes_per_image: a.boxes,
        repetitions: a.repetitions,
        timed: fps(a.images as u64, timed)?,
        hard: fps(a.images as u64, hard)?,
    })
}

pub fn bench(a: &BenchArgs, out: &mut dyn Write) -> CliResult<()> {
    let r = run_bench(a)?;
    out.write_all(format_bench(&r).as_bytes()).map_err(out_err)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn iou_range_flag() {
        assert_eq!(parse_iou_range("0.5:0.9:0.05").unwrap().len(), 9);
        assert_eq!(parse_iou_range("0.5:0.95:0.05").unwrap().len(), 10);
        assert!(matches!(
            parse_iou_range("0.5:0.95"),
            Err(CliError::Usage(_))
        ));
        assert!(matches!(parse_iou_range("a:b:c"), Err(CliError::Usage(_))));
    }

    #[test]
    fn bench_text_uses_frame_rate_formula() {
        let r = BenchReport {
            mode: NmsMode::SoftGaussian,
            boxes_per_image: 1000,
            repetitions: 3,
            timed: fps(50, 2.0).unwrap(),
            hard: fps(50, 1.0).unwrap(),
        };
        let text = format_bench(&r);
        assert!(text.contains("fps = 25.00\n"));
        assert!(text.contains("hard_fps = 50.00\n"));
        assert!(text.contains("ratio_to_hard = 2.000\n"));
        assert!(text.contains("meets_25fps = true\n"));
    }

    #[test]
    fn median_of_repetitions() {
        assert_eq!(median(vec![3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(vec![4.0, 1.0]), 2.5);
    }

    #[test]
    fn grouping_keeps_first_appearance() {
        let b = detkit::BBox::new(0.0, 0.0, 1.0, 1.0);
        let dets = vec![
            Detection::new("b", 0, 0.1, b),
            Detection::new("a", 0, 0.2, b),
            Detection::new("b", 0, 0.3, b),
        ];
        let g = group_by_image(dets);
        assert_eq!(g.len(), 2);
        assert_eq!(g[0].len(), 2);
        assert_eq!(g[1][0].image_id, "a");
    }
}
