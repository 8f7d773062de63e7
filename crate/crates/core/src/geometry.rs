//! Axis-aligned boxes in continuous pixel coordinates.

use nalgebra::{DMatrix, Vector4};

use crate::error::{Error, Result};

/// Kalman measurement vector: center x, center y, aspect ratio (w / h), height.
pub type Xyah = Vector4<f64>;

/// Box in top-left / width / height form.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    /// Builds a box, rejecting non-finite coordinates and non-positive extents.
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Result<Self> {
        let b = BBox { x, y, w, h };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.x.is_finite() && self.y.is_finite() && self.w.is_finite() && self.h.is_finite())
        {
            return Err(Error::invalid(format!("non-finite box {self:?}")));
        }
        if self.w <= 0.0 || self.h <= 0.0 {
            return Err(Error::invalid(format!("degenerate box {self:?}")));
        }
        Ok(())
    }

    pub fn is_valid(&self) -> bool {
        self.validate().is_ok()
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn right(&self) -> f64 {
        self.x + self.w
    }

    pub fn bottom(&self) -> f64 {
        self.y + self.h
    }

    pub fn center(&self) -> (f64, f64) {
        (self.x + self.w / 2.0, self.y + self.h / 2.0)
    }

    pub fn to_xyah(&self) -> Result<Xyah> {
        tlwh_to_xyah(self)
    }

    pub fn from_xyah(z: &Xyah) -> BBox {
        xyah_to_tlwh(z)
    }
}

pub fn tlwh_to_xyah(b: &BBox) -> Result<Xyah> {
    if b.h == 0.0 || !b.h.is_finite() {
        return Err(Error::invalid(format!("box height must be non-zero, got {b:?}")));
    }
    let (cx, cy) = b.center();
    Ok(Xyah::new(cx, cy, b.w / b.h, b.h))
}

/// Inverse of [`tlwh_to_xyah`]. Does not validate: a Kalman prediction can
/// drift to a non-positive height, and callers decide what that means.
pub fn xyah_to_tlwh(z: &Xyah) -> BBox {
    let h = z[3];
    let w = z[2] * h;
    BBox {
        x: z[0] - w / 2.0,
        y: z[1] - h / 2.0,
        w,
        h,
    }
}

/// Intersection over union of two valid boxes.
pub fn iou(a: &BBox, b: &BBox) -> Result<f64> {
    a.validate()?;
    b.validate()?;
    Ok(iou_raw(a, b))
}

/// IoU without validation. Degenerate inputs yield 0.
pub(crate) fn iou_raw(a: &BBox, b: &BBox) -> f64 {
    let iw = a.right().min(b.right()) - a.x.max(b.x);
    let ih = a.bottom().min(b.bottom()) - a.y.max(b.y);
    if iw <= 0.0 || ih <= 0.0 {
        return 0.0;
    }
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    if union <= 0.0 || !union.is_finite() {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

/// Pairwise IoU, shape `rows.len() x cols.len()`.
pub fn iou_matrix(rows: &[BBox], cols: &[BBox]) -> Result<DMatrix<f64>> {
    for b in rows.iter().chain(cols) {
        b.validate()?;
    }
    Ok(iou_matrix_raw(rows, cols))
}

pub(crate) fn iou_matrix_raw(rows: &[BBox], cols: &[BBox]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), cols.len(), |i, j| iou_raw(&rows[i], &cols[j]))
}
