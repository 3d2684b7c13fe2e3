use serde::{Deserialize, Serialize};

use crate::error::{AclipError, Result};

/// Axis-aligned rectangle in normalized image coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CropRect {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl CropRect {
    pub const FULL: CropRect = CropRect {
        x0: 0.0,
        y0: 0.0,
        x1: 1.0,
        y1: 1.0,
    };

    /// Validated constructor: non-empty and inside the unit square.
    pub fn new(x0: f64, y0: f64, x1: f64, y1: f64) -> Result<Self> {
        let r = Self { x0, y0, x1, y1 };
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<()> {
        let inside = |v: f64| (0.0..=1.0).contains(&v);
        if !(self.x0 < self.x1 && self.y0 < self.y1)
            || ![self.x0, self.y0, self.x1, self.y1].into_iter().all(inside)
        {
            return Err(AclipError::Geometry(format!("invalid rectangle {self:?}")));
        }
        Ok(())
    }

    pub fn width(&self) -> f64 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> f64 {
        self.y1 - self.y0
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    /// `self` lies within `outer`, with `tol` slack on each side.
    pub fn within(&self, outer: &CropRect, tol: f64) -> bool {
        self.x0 >= outer.x0 - tol
            && self.y0 >= outer.y0 - tol
            && self.x1 <= outer.x1 + tol
            && self.y1 <= outer.y1 + tol
    }

    pub fn contains_point(&self, x: f64, y: f64) -> bool {
        x >= self.x0 && x <= self.x1 && y >= self.y0 && y <= self.y1
    }

    /// Maps a point given in this rectangle's local `[0,1]^2` frame to image
    /// coordinates.
    pub fn to_image(&self, u: f64, v: f64) -> (f64, f64) {
        (self.x0 + u * self.width(), self.y0 + v * self.height())
    }
}
