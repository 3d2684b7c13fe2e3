use crate::error::{AclipError, Result};
use crate::geometry::CropRect;

/// Three-channel image, channel-major (`[c][y][x]`), values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl Image {
    pub const CHANNELS: usize = 3;

    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 || data.len() != Self::CHANNELS * height * width {
            return Err(AclipError::Dimension(format!(
                "image {height}x{width} needs {} values, got {}",
                Self::CHANNELS * height * width,
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, rgb: [f64; 3]) -> Self {
        let mut data = Vec::with_capacity(3 * height * width);
        for c in rgb {
            data.extend(std::iter::repeat_n(c, height * width));
        }
        Self {
            height,
            width,
            data,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }

    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f64) {
        self.data[(c * self.height + y) * self.width + x] = v;
    }

    pub fn plane(&self, c: usize) -> &[f64] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn plane_mut(&mut self, c: usize) -> &mut [f64] {
        let n = self.height * self.width;
        &mut self.data[c * n..(c + 1) * n]
    }

    /// Bilinear sample at continuous pixel coordinates (pixel centers at
    /// integer positions), clamped at the borders.
    pub fn sample(&self, c: usize, fy: f64, fx: f64) -> f64 {
        let fy = fy.clamp(0.0, (self.height - 1) as f64);
        let fx = fx.clamp(0.0, (self.width - 1) as f64);
        let y0 = fy.floor() as usize;
        let x0 = fx.floor() as usize;
        let y1 = (y0 + 1).min(self.height - 1);
        let x1 = (x0 + 1).min(self.width - 1);
        let ty = fy - y0 as f64;
        let tx = fx - x0 as f64;
        let top = self.get(c, y0, x0) * (1.0 - tx) + self.get(c, y0, x1) * tx;
        let bottom = self.get(c, y1, x0) * (1.0 - tx) + self.get(c, y1, x1) * tx;
        top * (1.0 - ty) + bottom * ty
    }

    /// Crops `rect` and resamples it bilinearly to `out_h x out_w`.
    pub fn crop_resize(&self, rect: &CropRect, out_h: usize, out_w: usize) -> Image {
        let mut out = Image::filled(out_h, out_w, [0.0; 3]);
        for y in 0..out_h {
            let v = (y as f64 + 0.5) / out_h as f64;
            let fy = (rect.y0 + v * rect.height()) * self.height as f64 - 0.5;
            for x in 0..out_w {
                let u = (x as f64 + 0.5) / out_w as f64;
                let fx = (rect.x0 + u * rect.width()) * self.width as f64 - 0.5;
                for c in 0..Self::CHANNELS {
                    out.set(c, y, x, self.sample(c, fy, fx));
                }
            }
        }
        out
    }
}
