//! Four-image mosaic composition.
//!
//! The canvas is `2S x 2S`. A center `(cx, cy)` is drawn on the integer
//! grid of `[ceil(S/2), floor(3S/2)]^2`; the four inputs are scaled so their
//! longer side equals `S` and are placed with one corner on the center
//! (top-left image ends at the center, bottom-right image starts there,
//! and so on). Anything past the canvas edge is cropped and uncovered
//! pixels keep [`FILL`]. Pixels are copied by nearest-neighbour lookup, so
//! every canvas pixel is either one source pixel or the fill color.
//!
//! # Center draw
//!
//! The generator is `ChaCha8Rng::seed_from_u64(seed)` from `rand_chacha`.
//! Two `u64` words are drawn, `cx` first then `cy`. Each word `w` maps to
//! `lo + floor(u * (hi - lo + 1))` with `u = (w >> 11) * 2^-53`.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::geometry::{clip, to_absolute, BBox, ImageDims, NormalizedBox};
use crate::{Error, Execution, Result};

pub const FILL: [u8; 3] = [114, 114, 114];

/// Row-major 8-bit RGB image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RasterImage {
    width: u32,
    height: u32,
    pixels: Vec<u8>,
}

impl RasterImage {
    pub fn new(width: u32, height: u32, pixels: Vec<u8>) -> Result<Self> {
        let want = width as usize * height as usize * 3;
        if pixels.len() != want {
            return Err(Error::Shape(format!(
                "{width}x{height} RGB image needs {want} bytes, got {}",
                pixels.len()
            )));
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn filled(width: u32, height: u32, rgb: [u8; 3]) -> Self {
        let n = width as usize * height as usize;
        Self {
            width,
            height,
            pixels: rgb.iter().copied().cycle().take(n * 3).collect(),
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn pixel(&self, x: u32, y: u32) -> [u8; 3] {
        let i = (y as usize * self.width as usize + x as usize) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    pub fn set_pixel(&mut self, x: u32, y: u32, rgb: [u8; 3]) {
        let i = (y as usize * self.width as usize + x as usize) * 3;
        self.pixels[i..i + 3].copy_from_slice(&rgb);
    }
}

/// One mosaic input: an image and its normalized `(class, box)` labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledImage {
    pub image: RasterImage,
    pub labels: Vec<(u32, NormalizedBox)>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MosaicConfig {
    /// Tile size `S`; the canvas side is `2S`.
    pub target_size: u32,
    pub seed: u64,
    pub min_box_pixels: f64,
    pub min_area_ratio: f64,
}

impl MosaicConfig {
    pub fn new(target_size: u32, seed: u64) -> Self {
        Self {
            target_size,
            seed,
            min_box_pixels: 1.0,
            min_area_ratio: 0.1,
        }
    }

    pub fn canvas_dims(&self) -> ImageDims {
        ImageDims {
            width: 2 * self.target_size,
            height: 2 * self.target_size,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.target_size < 2 {
            return Err(Error::InvalidConfig(format!(
                "mosaic size {} must be at least 2",
                self.target_size
            )));
        }
        if !(self.min_box_pixels >= 0.0) || !(0.0..=1.0).contains(&self.min_area_ratio) {
            return Err(Error::InvalidConfig(
                "mosaic retention thresholds out of range".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MosaicLabel {
    pub class_id: u32,
    pub bbox: BBox,
    /// Which of the four inputs the label came from.
    pub source: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MosaicSample {
    pub canvas: RasterImage,
    pub labels: Vec<MosaicLabel>,
    pub center: (u32, u32),
}

/// Deterministic mosaic center for `cfg.seed`.
pub fn draw_center(cfg: &MosaicConfig) -> (u32, u32) {
    let s = u64::from(cfg.target_size);
    let lo = s.div_ceil(2);
    let hi = 3 * s / 2;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut draw = || {
        let u = (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
        let v = lo + (u * (hi - lo + 1) as f64).floor() as u64;
        v.min(hi) as u32
    };
    let cx = draw();
    let cy = draw();
    (cx, cy)
}

/// Scales (per axis), translates and clips one box. Returns `None` when the clipped
/// box is thinner than `min_box_pixels` or keeps less than
/// `min_area_ratio` of its pre-clip area.
pub fn remap_box(
    b: &BBox,
    scale: (f64, f64),
    offset: (f64, f64),
    canvas: ImageDims,
    cfg: &MosaicConfig,
) -> Option<BBox> {
    let moved = BBox::new(
        b.x_min * scale.0 + offset.0,
        b.y_min * scale.1 + offset.1,
        b.x_max * scale.0 + offset.0,
        b.y_max * scale.1 + offset.1,
    );
    let clipped = clip(&moved, canvas)?;
    if clipped.width() < cfg.min_box_pixels || clipped.height() < cfg.min_box_pixels {
        return None;
    }
    if clipped.area() < cfg.min_area_ratio * moved.area() {
        return None;
    }
    Some(clipped)
}

pub fn mosaic_compose(inputs: &[LabeledImage], cfg: &MosaicConfig) -> Result<MosaicSample> {
    cfg.validate()?;
    let center = draw_center(cfg);
    mosaic_compose_at(inputs, cfg, center)
}

/// Like [`mosaic_compose`] with an explicit center instead of a drawn one.
pub fn mosaic_compose_at(
    inputs: &[LabeledImage],
    cfg: &MosaicConfig,
    center: (u32, u32),
) -> Result<MosaicSample> {
    cfg.validate()?;
    if inputs.len() != 4 {
        return Err(Error::InvalidConfig(format!(
            "mosaic needs exactly 4 images, got {}",
            inputs.len()
        )));
    }
    let canvas_dims = cfg.canvas_dims();
    let side = i64::from(canvas_dims.width);
    if center.0 > canvas_dims.width || center.1 > canvas_dims.height {
        return Err(Error::InvalidConfig(format!(
            "center {center:?} outside canvas"
        )));
    }
    for (k, input) in inputs.iter().enumerate() {
        let img = &input.image;
        if img.width == 0 || img.height == 0 {
            return Err(Error::InvalidDims {
                width: img.width,
                height: img.height,
            });
        }
        if let Some((_, nb)) = input.labels.iter().find(|(_, nb)| !nb.is_valid()) {
            return Err(Error::Data(format!(
                "input {k}: invalid normalized label {nb:?}"
            )));
        }
    }

    let mut canvas = RasterImage::filled(canvas_dims.width, canvas_dims.height, FILL);
    let mut labels = Vec::new();
    let s = f64::from(cfg.target_size);
    let (cx, cy) = (i64::from(center.0), i64::from(center.1));

    for (k, input) in inputs.iter().enumerate() {
        let img = &input.image;
        let (w, h) = (f64::from(img.width), f64::from(img.height));
        let scale = (s / w).min(s / h);
        let sw = ((w * scale).round() as i64).max(1);
        let sh = ((h * scale).round() as i64).max(1);
        let (ox, oy) = match k {
            0 => (cx - sw, cy - sh),
            1 => (cx, cy - sh),
            2 => (cx - sw, cy),
            _ => (cx, cy),
        };

        for py in oy.max(0)..(oy + sh).min(side) {
            let sy = ((((py - oy) as f64 + 0.5) * h / sh as f64) as u32).min(img.height - 1);
            for px in ox.max(0)..(ox + sw).min(side) {
                let sx = ((((px - ox) as f64 + 0.5) * w / sw as f64) as u32).min(img.width - 1);
                canvas.set_pixel(px as u32, py as u32, img.pixel(sx, sy));
            }
        }

        // Labels follow the rounded tile so they stay aligned with pixels.
        let tile_scale = (sw as f64 / w, sh as f64 / h);
        let dims = ImageDims {
            width: img.width,
            height: img.height,
        };
        for &(class_id, nb) in &input.labels {
            let src = to_absolute(&nb, dims);
            if let Some(bbox) =
                remap_box(&src, tile_scale, (ox as f64, oy as f64), canvas_dims, cfg)
            {
                labels.push(MosaicLabel {
                    class_id,
                    bbox,
                    source: k,
                });
            }
        }
    }

    Ok(MosaicSample {
        canvas,
        labels,
        center,
    })
}

/// One mosaic per seed over the same four inputs.
pub fn mosaic_many(
    inputs: &[LabeledImage],
    cfg: &MosaicConfig,
    seeds: &[u64],
    exec: Execution,
) -> Result<Vec<MosaicSample>> {
    exec.map(seeds, |&seed| {
        mosaic_compose(inputs, &MosaicConfig { seed, ..*cfg })
    })
    .into_iter()
    .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn solid(side: u32, rgb: [u8; 3]) -> LabeledImage {
        LabeledImage {
            image: RasterImage::filled(side, side, rgb),
            labels: Vec::new(),
        }
    }

    fn four(side: u32) -> Vec<LabeledImage> {
        [[255, 0, 0], [0, 255, 0], [0, 0, 255], [9, 9, 9]]
            .into_iter()
            .map(|c| solid(side, c))
            .collect()
    }

    #[test]
    fn centered_tiling_is_exact() {
        let s = 8;
        let cfg = MosaicConfig::new(s, 0);
        let inputs = four(s);
        let out = mosaic_compose_at(&inputs, &cfg, (s, s)).unwrap();
        assert!(out.labels.is_empty());
        for y in 0..2 * s {
            for x in 0..2 * s {
                let k = usize::from(y >= s) * 2 + usize::from(x >= s);
                assert_eq!(out.canvas.pixel(x, y), inputs[k].image.pixel(x % s, y % s));
            }
        }
    }

    #[test]
    fn centered_label_remap() {
        let s = 64u32;
        let mut inputs = four(s);
        let nb = NormalizedBox {
            cx: 0.5,
            cy: 0.5,
            w: 0.5,
            h: 0.5,
        };
        inputs[0].labels.push((3, nb));
        let out = mosaic_compose_at(&inputs, &MosaicConfig::new(s, 0), (s, s)).unwrap();
        let q = f64::from(s) / 4.0;
        assert_eq!(out.labels.len(), 1);
        assert_eq!(out.labels[0].bbox, BBox::new(q, q, 3.0 * q, 3.0 * q));
        assert_eq!(out.labels[0].class_id, 3);
        assert_eq!(out.labels[0].source, 0);
    }

    #[test]
    fn remap_fixtures() {
        let cfg = MosaicConfig::new(100, 0);
        let canvas = cfg.canvas_dims();
        let b = BBox::new(10.0, 10.0, 30.0, 40.0);
        assert_eq!(remap_box(&b, (1.0, 1.0), (0.0, 0.0), canvas, &cfg), Some(b));
        assert_eq!(
            remap_box(
                &BBox::new(0.0, 0.0, 20.0, 20.0),
                (0.5, 0.5),
                (100.0, 0.0),
                canvas,
                &cfg
            ),
            Some(BBox::new(100.0, 0.0, 110.0, 10.0))
        );
        assert_eq!(remap_box(&b, (1.0, 1.0), (500.0, 0.0), canvas, &cfg), None);
    }

    #[test]
    fn small_remainders_dropped() {
        let cfg = MosaicConfig::new(50, 0);
        let canvas = cfg.canvas_dims();
        // 5% of the box stays on canvas
        let sliver = BBox::new(-19.0, 0.0, 1.0, 20.0);
        assert_eq!(
            remap_box(&sliver, (1.0, 1.0), (0.0, 0.0), canvas, &cfg),
            None
        );
        // 50% survives
        let half = BBox::new(-10.0, 0.0, 10.0, 20.0);
        assert!(remap_box(&half, (1.0, 1.0), (0.0, 0.0), canvas, &cfg).is_some());
        // thinner than one pixel
        let thin = BBox::new(10.0, 10.0, 10.5, 30.0);
        assert_eq!(remap_box(&thin, (1.0, 1.0), (0.0, 0.0), canvas, &cfg), None);
    }

    #[test]
    fn rejects_bad_inputs() {
        let cfg = MosaicConfig::new(8, 1);
        assert!(mosaic_compose(&four(8)[..3], &cfg).is_err());
        let mut bad = four(8);
        bad[1].image = RasterImage::filled(0, 8, [0; 3]);
        assert!(mosaic_compose(&bad, &cfg).is_err());
        assert!(mosaic_compose(&four(8), &MosaicConfig::new(1, 0)).is_err());
        assert!(RasterImage::new(2, 2, vec![0; 11]).is_err());
    }

    #[test]
    fn center_in_range_and_deterministic() {
        for seed in 0..200 {
            let cfg = MosaicConfig::new(10, seed);
            let (cx, cy) = draw_center(&cfg);
            assert!((5..=15).contains(&cx) && (5..=15).contains(&cy));
            assert_eq!(draw_center(&cfg), (cx, cy));
        }
    }

    #[test]
    fn non_square_inputs_keep_aspect() {
        let s = 20;
        let mut inputs = four(s);
        inputs[3] = LabeledImage {
            image: RasterImage::filled(40, 10, [1, 2, 3]),
            labels: vec![(
                0,
                NormalizedBox {
                    cx: 0.5,
                    cy: 0.5,
                    w: 0.5,
                    h: 0.5,
                },
            )],
        };
        let out = mosaic_compose_at(&inputs, &MosaicConfig::new(s, 0), (s, s)).unwrap();
        // scaled to 20x5 starting at the center
        assert_eq!(out.canvas.pixel(s, s), [1, 2, 3]);
        assert_eq!(out.canvas.pixel(2 * s - 1, s + 4), [1, 2, 3]);
        assert_eq!(out.canvas.pixel(s, s + 5), FILL);
        assert_eq!(out.labels[0].bbox, BBox::new(25.0, 21.25, 35.0, 23.75));
    }
}
