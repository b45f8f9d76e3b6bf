//! Axis-aligned boxes on a continuous coordinate plane.
//!
//! Areas are `(x_max - x_min) * (y_max - y_min)` with no pixel-inclusive
//! `+1` term, so absolute and normalized arithmetic agree exactly.

use crate::{Error, Result};

/// Corner-form box in absolute pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBox {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

/// Center-form box with every component relative to the image size.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalizedBox {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

impl NormalizedBox {
    pub fn is_valid(&self) -> bool {
        (0.0..=1.0).contains(&self.cx)
            && (0.0..=1.0).contains(&self.cy)
            && self.w > 0.0
            && self.w <= 1.0
            && self.h > 0.0
            && self.h <= 1.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ImageDims {
    pub width: u32,
    pub height: u32,
}

impl ImageDims {
    pub fn new(width: u32, height: u32) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidDims { width, height });
        }
        Ok(Self { width, height })
    }

    pub fn square(side: u32) -> Result<Self> {
        Self::new(side, side)
    }
}

impl BBox {
    pub const fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Self {
        Self {
            x_min,
            y_min,
            x_max,
            y_max,
        }
    }

    /// Builds a box and checks ordering and finiteness.
    pub fn try_new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Result<Self> {
        let b = Self::new(x_min, y_min, x_max, y_max);
        b.validate()?;
        Ok(b)
    }

    pub fn is_valid(&self) -> bool {
        [self.x_min, self.y_min, self.x_max, self.y_max]
            .iter()
            .all(|v| v.is_finite())
            && self.x_min <= self.x_max
            && self.y_min <= self.y_max
    }

    pub fn validate(&self) -> Result<()> {
        if self.is_valid() {
            Ok(())
        } else {
            Err(Error::InvalidBox(format!("{self:?}")))
        }
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn translate(&self, dx: f64, dy: f64) -> Self {
        Self::new(
            self.x_min + dx,
            self.y_min + dy,
            self.x_max + dx,
            self.y_max + dy,
        )
    }

    /// Area of the overlap with `other`, zero when disjoint.
    pub fn intersection_area(&self, other: &BBox) -> f64 {
        let w = self.x_max.min(other.x_max) - self.x_min.max(other.x_min);
        let h = self.y_max.min(other.y_max) - self.y_min.max(other.y_min);
        if w <= 0.0 || h <= 0.0 {
            0.0
        } else {
            w * h
        }
    }
}

/// Intersection over union. Returns 0 when the union has zero area.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let inter = a.intersection_area(b);
    if inter == 0.0 {
        return 0.0;
    }
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        (inter / union).min(1.0)
    }
}

pub fn to_absolute(nb: &NormalizedBox, dims: ImageDims) -> BBox {
    let (w, h) = (f64::from(dims.width), f64::from(dims.height));
    BBox::new(
        (nb.cx - nb.w / 2.0) * w,
        (nb.cy - nb.h / 2.0) * h,
        (nb.cx + nb.w / 2.0) * w,
        (nb.cy + nb.h / 2.0) * h,
    )
}

pub fn to_normalized(b: &BBox, dims: ImageDims) -> Result<NormalizedBox> {
    if dims.width == 0 || dims.height == 0 {
        return Err(Error::InvalidDims {
            width: dims.width,
            height: dims.height,
        });
    }
    let (w, h) = (f64::from(dims.width), f64::from(dims.height));
    Ok(NormalizedBox {
        cx: (b.x_min + b.x_max) / 2.0 / w,
        cy: (b.y_min + b.y_max) / 2.0 / h,
        w: (b.x_max - b.x_min) / w,
        h: (b.y_max - b.y_min) / h,
    })
}

/// Intersects `b` with `[0, width] x [0, height]`. Empty and zero-area
/// results are dropped.
pub fn clip(b: &BBox, canvas: ImageDims) -> Option<BBox> {
    let c = BBox::new(
        b.x_min.max(0.0),
        b.y_min.max(0.0),
        b.x_max.min(f64::from(canvas.width)),
        b.y_max.min(f64::from(canvas.height)),
    );
    (c.x_max > c.x_min && c.y_max > c.y_min).then_some(c)
}
