//! Text and image formats.
//!
//! * YOLO labels: `class cx cy w h` per line, normalized, space separated.
//! * Detections: `image_id\tclass_id\tscore\tx_min\ty_min\tx_max\ty_max`.
//! * Manifest: `class\t<name>` lines (ids in order of appearance) and
//!   `image\t<id>\t<width>\t<height>\t<label path>` lines. `#` starts a
//!   comment line; label paths are relative to the manifest.
//! * Curves: CSV `kind,class,x,y` with 10 significant digits.
//! * Report: `key = value` lines, one `[class.<name>]` section per class.
//! * Raster: binary PPM (`P6`, maxval 255).
//!
//! Reals are written with Rust's shortest round-trip formatting, so
//! parse -> serialize -> parse is lossless.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::augment::RasterImage;
use crate::geometry::{to_absolute, BBox, ImageDims, NormalizedBox};
use crate::metrics::{EvalReport, GroundTruth};
use crate::{Detection, Error, Result};

fn parse_field<T: std::str::FromStr>(field: &str, line: usize, what: &str) -> Result<T> {
    field
        .parse()
        .map_err(|_| Error::parse(line, format!("invalid {what} `{field}`")))
}

pub fn parse_yolo_labels(text: &str) -> Result<Vec<(u32, NormalizedBox)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let fields: Vec<&str> = raw.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        if fields.len() != 5 {
            return Err(Error::parse(
                line,
                format!("expected 5 fields, found {}", fields.len()),
            ));
        }
        let class: u32 = parse_field(fields[0], line, "class id")?;
        let mut v = [0.0; 4];
        for (slot, field) in v.iter_mut().zip(&fields[1..]) {
            *slot = parse_field(field, line, "coordinate")?;
            if !(0.0..=1.0).contains(slot) {
                return Err(Error::parse(line, format!("value {field} outside [0, 1]")));
            }
        }
        out.push((
            class,
            NormalizedBox {
                cx: v[0],
                cy: v[1],
                w: v[2],
                h: v[3],
            },
        ));
    }
    Ok(out)
}

/// Parses a YOLO label file and converts the boxes to absolute corners.
pub fn parse_yolo_label_file(text: &str, dims: ImageDims) -> Result<Vec<(u32, BBox)>> {
    Ok(parse_yolo_labels(text)?
        .into_iter()
        .map(|(c, nb)| (c, to_absolute(&nb, dims)))
        .collect())
}

pub fn serialize_yolo_labels(labels: &[(u32, NormalizedBox)]) -> String {
    let mut s = String::new();
    for (c, nb) in labels {
        let _ = writeln!(s, "{c} {} {} {} {}", nb.cx, nb.cy, nb.w, nb.h);
    }
    s
}

pub fn parse_detections(text: &str) -> Result<Vec<Detection>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = raw.split('\t').collect();
        if fields.len() != 7 {
            return Err(Error::parse(
                line,
                format!("expected 7 tab-separated fields, found {}", fields.len()),
            ));
        }
        if fields[0].is_empty() {
            return Err(Error::parse(line, "empty image id"));
        }
        let class_id = parse_field(fields[1], line, "class id")?;
        let score: f64 = parse_field(fields[2], line, "score")?;
        if !(0.0..=1.0).contains(&score) {
            return Err(Error::parse(line, format!("score {score} outside [0, 1]")));
        }
        let mut c = [0.0; 4];
        for (slot, field) in c.iter_mut().zip(&fields[3..]) {
            *slot = parse_field(field, line, "coordinate")?;
        }
        let bbox =
            BBox::try_new(c[0], c[1], c[2], c[3]).map_err(|e| Error::parse(line, e.to_string()))?;
        out.push(Detection::new(fields[0], class_id, score, bbox));
    }
    Ok(out)
}

pub fn load_detections(path: &Path) -> Result<Vec<Detection>> {
    parse_detections(&std::fs::read_to_string(path)?)
}

pub fn serialize_detections(dets: &[Detection]) -> String {
    let mut s = String::new();
    for d in dets {
        let b = &d.bbox;
        let _ = writeln!(
            s,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}",
            d.image_id, d.class_id, d.score, b.x_min, b.y_min, b.x_max, b.y_max
        );
    }
    s
}

/// Fails on the first detection whose class id is not below `n_classes`.
pub fn check_class_ids(dets: &[Detection], n_classes: usize) -> Result<()> {
    match dets.iter().position(|d| d.class_id as usize >= n_classes) {
        Some(i) => Err(Error::Data(format!(
            "detection {} has class id {} but the manifest lists {n_classes} classes",
            i + 1,
            dets[i].class_id
        ))),
        None => Ok(()),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestImage {
    pub id: String,
    pub dims: ImageDims,
    pub label_path: PathBuf,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub class_names: Vec<String>,
    pub images: Vec<ManifestImage>,
}

impl DatasetManifest {
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self> {
        let mut class_names = Vec::new();
        let mut images = Vec::new();
        let mut seen = HashSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let trimmed = raw.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = raw.split('\t').collect();
            match fields.as_slice() {
                ["class", name] if !name.is_empty() => class_names.push(name.to_string()),
                ["image", id, w, h, path] => {
                    let dims = ImageDims::new(
                        parse_field(w, line, "width")?,
                        parse_field(h, line, "height")?,
                    )
                    .map_err(|e| Error::parse(line, e.to_string()))?;
                    if !seen.insert(id.to_string()) {
                        return Err(Error::parse(line, format!("duplicate image id `{id}`")));
                    }
                    images.push(ManifestImage {
                        id: id.to_string(),
                        dims,
                        label_path: base_dir.join(path),
                    });
                }
                _ => return Err(Error::parse(line, "expected `class` or `image` record")),
            }
        }
        Ok(Self {
            class_names,
            images,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        Self::parse(&std::fs::read_to_string(path)?, base)
    }

    /// Reads every label file and returns absolute ground-truth boxes.
    pub fn load_ground_truth(&self) -> Result<Vec<GroundTruth>> {
        let mut out = Vec::new();
        for img in &self.images {
            let text = std::fs::read_to_string(&img.label_path)
                .map_err(|e| Error::Data(format!("{}: {e}", img.label_path.display())))?;
            let labels = parse_yolo_label_file(&text, img.dims)
                .map_err(|e| Error::Data(format!("{}: {e}", img.label_path.display())))?;
            for (class_id, bbox) in labels {
                if class_id as usize >= self.class_names.len() {
                    return Err(Error::Data(format!(
                        "{}: class id {class_id} not in manifest",
                        img.label_path.display()
                    )));
                }
                out.push(GroundTruth::new(img.id.clone(), class_id, bbox));
            }
        }
        Ok(out)
    }

    /// Fails if any detection refers to an image or class not listed.
    pub fn check_detections(&self, dets: &[Detection]) -> Result<()> {
        check_class_ids(dets, self.class_names.len())?;
        let ids: HashSet<&str> = self.images.iter().map(|i| i.id.as_str()).collect();
        match dets.iter().find(|d| !ids.contains(d.image_id.as_str())) {
            Some(d) => Err(Error::Data(format!(
                "detection for unknown image `{}`",
                d.image_id
            ))),
            None => Ok(()),
        }
    }
}

pub fn read_ppm(bytes: &[u8]) -> Result<RasterImage> {
    let bad = |msg: &str| Error::Data(format!("PPM: {msg}"));
    let mut pos = 0;
    let mut token = || -> Result<String> {
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            break;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated header"));
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    if token()? != "P6" {
        return Err(bad("not a binary P6 pixmap"));
    }
    let width: u32 = token()?.parse().map_err(|_| bad("bad width"))?;
    let height: u32 = token()?.parse().map_err(|_| bad("bad height"))?;
    let maxval: u32 = token()?.parse().map_err(|_| bad("bad maxval"))?;
    if maxval != 255 {
        return Err(bad("only maxval 255 is supported"));
    }
    if width == 0 || height == 0 {
        return Err(Error::InvalidDims { width, height });
    }
    // exactly one whitespace byte separates the header from the raster
    let body = &bytes[(pos + 1).min(bytes.len())..];
    let need = width as usize * height as usize * 3;
    if body.len() < need {
        return Err(bad("truncated raster"));
    }
    RasterImage::new(width, height, body[..need].to_vec())
}

pub fn write_ppm(img: &RasterImage) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    out.extend_from_slice(img.pixels());
    out
}

pub const CURVE_HEADER: &str = "kind,class,x,y";

fn curve_row(s: &mut String, kind: &str, class: &str, x: f64, y: f64) {
    let _ = writeln!(s, "{kind},{class},{x:.9e},{y:.9e}");
}

/// Precision-recall samples (`x` = recall, `y` = precision) per class at
/// the first IoU threshold.
pub fn pr_curve_csv(report: &EvalReport) -> String {
    let mut s = format!("{CURVE_HEADER}\n");
    for c in &report.classes {
        for p in &c.pr_curve.points {
            curve_row(&mut s, "pr", &c.name, p.recall, p.precision);
        }
    }
    s
}

/// F1 against confidence (`x` = cut, `y` = F1) per class, plus the class
/// mean under the name `all`.
pub fn f1_curve_csv(report: &EvalReport) -> String {
    let mut s = format!("{CURVE_HEADER}\n");
    for (ci, c) in report.classes.iter().enumerate() {
        for p in &report.f1_curve {
            curve_row(&mut s, "f1", &c.name, p.confidence, p.per_class[ci]);
        }
    }
    for p in &report.f1_curve {
        curve_row(&mut s, "f1", "all", p.confidence, p.mean);
    }
    s
}

pub fn format_report(report: &EvalReport) -> String {
    let mut s = String::new();
    let thresholds: Vec<String> = report.thresholds.iter().map(|t| t.to_string()).collect();
    let _ = writeln!(s, "interpolation = {}", report.interpolation);
    let _ = writeln!(s, "iou_thresholds = {}", thresholds.join(","));
    let _ = writeln!(s, "classes = {}", report.classes.len());
    if let Some(m) = report.map50 {
        let _ = writeln!(s, "map50 = {m:.9}");
    }
    let _ = writeln!(s, "map_range = {:.9}", report.map_range);
    let _ = writeln!(s, "best_mean_f1 = {:.9}", report.best_mean_f1.1);
    let _ = writeln!(s, "best_mean_f1_confidence = {:.3}", report.best_mean_f1.0);
    if let Some(f) = &report.fps {
        let _ = writeln!(s, "fps_images = {}", f.images);
        let _ = writeln!(s, "fps_seconds = {}", f.seconds);
        let _ = writeln!(s, "fps = {:.2}", f.fps);
        let _ = writeln!(s, "meets_25fps = {}", f.meets_conveyor_rate());
    }
    for c in &report.classes {
        let _ = writeln!(s, "\n[class.{}]", c.name);
        let _ = writeln!(s, "class_id = {}", c.class_id);
        let _ = writeln!(s, "ground_truths = {}", c.n_gt);
        let _ = writeln!(s, "detections = {}", c.n_det);
        for (t, ap) in report.thresholds.iter().zip(&c.ap) {
            let _ = writeln!(s, "ap@{t} = {ap:.9}");
        }
        let mean_ap = c.ap.iter().sum::<f64>() / c.ap.len() as f64;
        let _ = writeln!(s, "ap_range = {mean_ap:.9}");
        let _ = writeln!(s, "best_f1 = {:.9}", c.best_f1);
        let _ = writeln!(s, "best_f1_confidence = {:.3}", c.best_f1_confidence);
    }
    s
}

/// Looks up `key` in the top-level (pre-section) part of a report.
pub fn report_value<'a>(text: &'a str, key: &str) -> Option<&'a str> {
    text.lines()
        .take_while(|l| !l.starts_with('['))
        .filter_map(|l| l.split_once(" = "))
        .find(|(k, _)| *k == key)
        .map(|(_, v)| v)
}
