//! Row-major 2D `f32` grids used for raw frames, projections and filtered data.

/// A `width × height` grid of `f32`, x-fastest. Pixel `(x, y)` has its center
/// at continuous coordinate `(x, y)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl Image {
    pub fn new(width: usize, height: usize) -> Self {
        Self::filled(width, height, 0.0)
    }

    pub fn filled(width: usize, height: usize, value: f32) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    /// Panics if `data.len() != width * height`.
    pub fn from_vec(width: usize, height: usize, data: Vec<f32>) -> Self {
        assert_eq!(data.len(), width * height, "image buffer size mismatch");
        Self {
            width,
            height,
            data,
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f32) {
        self.data[y * self.width + x] = v;
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.data
    }

    pub fn row(&self, y: usize) -> &[f32] {
        &self.data[y * self.width..(y + 1) * self.width]
    }

    pub fn row_mut(&mut self, y: usize) -> &mut [f32] {
        &mut self.data[y * self.width..(y + 1) * self.width]
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Image {
        Image {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Bilinear sample at continuous pixel coordinates; `None` outside the
    /// convex hull of pixel centers.
    #[inline]
    pub fn sample_bilinear(&self, u: f64, v: f64) -> Option<f64> {
        if !(u >= 0.0 && v >= 0.0) {
            return None;
        }
        let x0 = u.floor() as usize;
        let y0 = v.floor() as usize;
        if x0 + 1 >= self.width || y0 + 1 >= self.height {
            // exactly on the last row/column is still inside
            if x0 + 1 == self.width && u == x0 as f64 && y0 < self.height {
                return self.sample_bilinear_edge(x0, y0, 0.0, v - y0 as f64);
            }
            if y0 + 1 == self.height && v == y0 as f64 && x0 < self.width {
                return self.sample_bilinear_edge(x0, y0, u - x0 as f64, 0.0);
            }
            return None;
        }
        let fx = u - x0 as f64;
        let fy = v - y0 as f64;
        let i = y0 * self.width + x0;
        let a = self.data[i] as f64;
        let b = self.data[i + 1] as f64;
        let c = self.data[i + self.width] as f64;
        let d = self.data[i + self.width + 1] as f64;
        Some((a * (1.0 - fx) + b * fx) * (1.0 - fy) + (c * (1.0 - fx) + d * fx) * fy)
    }

    fn sample_bilinear_edge(&self, x0: usize, y0: usize, fx: f64, fy: f64) -> Option<f64> {
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let a = self.get(x0, y0) as f64;
        let b = self.get(x1, y0) as f64;
        let c = self.get(x0, y1) as f64;
        let d = self.get(x1, y1) as f64;
        Some((a * (1.0 - fx) + b * fx) * (1.0 - fy) + (c * (1.0 - fx) + d * fx) * fy)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bilinear_reproduces_affine_field() {
        let img = Image::from_fn(8, 6, |x, y| 2.0 * x as f32 - 0.5 * y as f32 + 1.0);
        let v = img.sample_bilinear(3.25, 2.75).unwrap();
        assert!((v - (2.0 * 3.25 - 0.5 * 2.75 + 1.0)).abs() < 1e-6);
        assert!(img.sample_bilinear(7.0, 5.0).is_some());
        assert!(img.sample_bilinear(7.01, 2.0).is_none());
        assert!(img.sample_bilinear(-0.01, 2.0).is_none());
    }
}
