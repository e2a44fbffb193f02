use hidflow_tensor::{Real, Tensor};

use crate::error::{HidError, Result};

/// Hyperspectral cube stored row-major as height × width × bands, so the
/// spectrum of each pixel is contiguous.
#[derive(Clone, Debug, PartialEq)]
pub struct HsiCube {
    height: usize,
    width: usize,
    bands: usize,
    data: Vec<f64>,
}

impl HsiCube {
    pub fn new(height: usize, width: usize, bands: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 || bands == 0 {
            return Err(HidError::Data(format!(
                "cube dimensions must be positive, got {height}×{width}×{bands}"
            )));
        }
        if data.len() != height * width * bands {
            return Err(HidError::Data(format!(
                "cube {height}×{width}×{bands} needs {} values, got {}",
                height * width * bands,
                data.len()
            )));
        }
        Ok(HsiCube {
            height,
            width,
            bands,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, bands: usize, value: f64) -> Self {
        HsiCube {
            height,
            width,
            bands,
            data: vec![value; height * width * bands],
        }
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        bands: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Self {
        let mut data = Vec::with_capacity(height * width * bands);
        for y in 0..height {
            for x in 0..width {
                for b in 0..bands {
                    data.push(f(y, x, b));
                }
            }
        }
        HsiCube {
            height,
            width,
            bands,
            data,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn bands(&self) -> usize {
        self.bands
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.bands)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn index(&self, y: usize, x: usize, b: usize) -> usize {
        (y * self.width + x) * self.bands + b
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, b: usize) -> f64 {
        self.data[self.index(y, x, b)]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, b: usize, v: f64) {
        let i = self.index(y, x, b);
        self.data[i] = v;
    }

    pub fn spectrum(&self, y: usize, x: usize) -> &[f64] {
        let i = self.index(y, x, 0);
        &self.data[i..i + self.bands]
    }

    pub fn same_dims(&self, other: &HsiCube) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(HidError::Data(format!(
                "cube shapes differ: {:?} vs {:?}",
                self.dims(),
                other.dims()
            )));
        }
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn clamp_unit(&self) -> HsiCube {
        HsiCube {
            data: self.data.iter().map(|v| v.clamp(0.0, 1.0)).collect(),
            ..*self
        }
    }

    /// Band-major `B×H×W` tensor, the layout the network works in.
    pub fn to_tensor<T: Real>(&self) -> Tensor<T> {
        let (h, w, b) = self.dims();
        Tensor::from_fn(&[b, h, w], |i| {
            let (band, rest) = (i / (h * w), i % (h * w));
            T::from_f64_lossy(self.data[rest * b + band])
        })
    }

    pub fn from_tensor<T: Real>(t: &Tensor<T>) -> Result<Self> {
        let [b, h, w] = *t.shape() else {
            return Err(HidError::Data(format!(
                "expected a B×H×W tensor, got {:?}",
                t.shape()
            )));
        };
        let src = t.data();
        Ok(HsiCube::from_fn(h, w, b, |y, x, band| {
            src[(band * h + y) * w + x].as_f64()
        }))
    }

    /// Spatial window `[y0, y0+h) × [x0, x0+w)` over all bands.
    pub fn crop(&self, y0: usize, x0: usize, h: usize, w: usize) -> Result<HsiCube> {
        if y0 + h > self.height || x0 + w > self.width || h == 0 || w == 0 {
            return Err(HidError::Data(format!(
                "crop {h}×{w} at ({y0}, {x0}) exceeds cube {}×{}",
                self.height, self.width
            )));
        }
        let mut data = Vec::with_capacity(h * w * self.bands);
        for y in y0..y0 + h {
            let start = self.index(y, x0, 0);
            data.extend_from_slice(&self.data[start..start + w * self.bands]);
        }
        HsiCube::new(h, w, self.bands, data)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tensor_layout_round_trip() {
        let cube = HsiCube::from_fn(3, 4, 2, |y, x, b| (y * 100 + x * 10 + b) as f64);
        let t = cube.to_tensor::<f64>();
        assert_eq!(t.shape(), &[2, 3, 4]);
        assert_eq!(t.data()[(1 * 3 + 2) * 4 + 3], 231.0);
        assert_eq!(HsiCube::from_tensor(&t).unwrap(), cube);
    }

    #[test]
    fn crop_reads_window() {
        let cube = HsiCube::from_fn(4, 4, 1, |y, x, _| (y * 4 + x) as f64);
        let c = cube.crop(1, 2, 2, 2).unwrap();
        assert_eq!(c.data(), &[6.0, 7.0, 10.0, 11.0]);
        assert!(cube.crop(3, 3, 2, 2).is_err());
    }
}
