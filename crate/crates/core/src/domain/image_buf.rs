//! Real-valued RGB image storage.

use std::path::Path;

use ndarray::Array3;

use crate::error::{Error, Result};

/// An RGB image with values in `[0, 1]`, stored channel-first (`[3, H, W]`).
///
/// Images are converted from/to 8-bit only at the disk boundary; every
/// computation in the pipeline runs on the real-valued representation.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageBuffer {
    data: Array3<f32>,
}

impl ImageBuffer {
    /// Creates an image from channel-first data, checking range and finiteness.
    pub fn new(data: Array3<f32>) -> Result<Self> {
        if data.shape()[0] != 3 {
            return Err(Error::ShapeMismatch(format!(
                "image must have 3 channels, got {}",
                data.shape()[0]
            )));
        }
        for &v in data.iter() {
            if !v.is_finite() || !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidArgument(format!(
                    "image value {v} outside [0, 1]"
                )));
            }
        }
        Ok(Self { data })
    }

    /// Creates an image from data that may drift slightly out of range,
    /// clamping it into `[0, 1]`. Non-finite values are an error.
    pub fn from_clamped(mut data: Array3<f32>) -> Result<Self> {
        if data.shape()[0] != 3 {
            return Err(Error::ShapeMismatch(format!(
                "image must have 3 channels, got {}",
                data.shape()[0]
            )));
        }
        for v in data.iter_mut() {
            if !v.is_finite() {
                return Err(Error::InvalidArgument("non-finite image value".into()));
            }
            *v = v.clamp(0.0, 1.0);
        }
        Ok(Self { data })
    }

    /// All-zero (black) image.
    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            data: Array3::zeros((3, height, width)),
        }
    }

    pub fn height(&self) -> usize {
        self.data.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.data.shape()[2]
    }

    /// Channel-first view of the pixel data.
    pub fn data(&self) -> &Array3<f32> {
        &self.data
    }

    pub fn pixel(&self, y: usize, x: usize) -> [f32; 3] {
        [
            self.data[[0, y, x]],
            self.data[[1, y, x]],
            self.data[[2, y, x]],
        ]
    }

    /// Decodes an 8-bit interleaved RGB byte row-major buffer (`H*W*3` bytes).
    /// Values map as `v / 255` with no gamma handling.
    pub fn from_rgb8(bytes: &[u8], height: usize, width: usize) -> Result<Self> {
        if bytes.len() != height * width * 3 {
            return Err(Error::ShapeMismatch(format!(
                "expected {} bytes for {}x{} RGB, got {}",
                height * width * 3,
                height,
                width,
                bytes.len()
            )));
        }
        let mut data = Array3::zeros((3, height, width));
        for y in 0..height {
            for x in 0..width {
                let base = (y * width + x) * 3;
                for c in 0..3 {
                    data[[c, y, x]] = bytes[base + c] as f32 / 255.0;
                }
            }
        }
        Ok(Self { data })
    }

    /// Encodes into interleaved 8-bit RGB with round-to-nearest quantization.
    pub fn to_rgb8(&self) -> Vec<u8> {
        let (h, w) = (self.height(), self.width());
        let mut out = vec![0u8; h * w * 3];
        for y in 0..h {
            for x in 0..w {
                let base = (y * w + x) * 3;
                for c in 0..3 {
                    out[base + c] = (self.data[[c, y, x]].clamp(0.0, 1.0) * 255.0).round() as u8;
                }
            }
        }
        out
    }

    pub fn load_png(path: &Path) -> Result<Self> {
        let img = image::open(path)?.into_rgb8();
        let (w, h) = (img.width() as usize, img.height() as usize);
        Self::from_rgb8(img.as_raw(), h, w)
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        let raw = self.to_rgb8();
        let img = image::RgbImage::from_raw(self.width() as u32, self.height() as u32, raw)
            .expect("buffer size matches dimensions");
        img.save(path)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;

    #[test]
    fn rejects_out_of_range_values() {
        let mut data = Array3::zeros((3, 2, 2));
        data[[0, 0, 0]] = 1.5;
        assert!(ImageBuffer::new(data).is_err());
    }

    #[test]
    fn rejects_non_finite_values() {
        let mut data = Array3::zeros((3, 2, 2));
        data[[1, 1, 1]] = f32::NAN;
        assert!(ImageBuffer::new(data.clone()).is_err());
        assert!(ImageBuffer::from_clamped(data).is_err());
    }

    #[test]
    fn rgb8_round_trip_is_exact_on_quantized_values() {
        let bytes: Vec<u8> = (0..2 * 3 * 3).map(|i| (i * 17 % 256) as u8).collect();
        let img = ImageBuffer::from_rgb8(&bytes, 2, 3).unwrap();
        assert_eq!(img.to_rgb8(), bytes);
    }

    #[test]
    fn quantization_error_is_at_most_half_step() {
        let mut data = Array3::zeros((3, 1, 1));
        data[[0, 0, 0]] = 0.4;
        data[[1, 0, 0]] = 0.5;
        data[[2, 0, 0]] = 0.999;
        let img = ImageBuffer::new(data).unwrap();
        let bytes = img.to_rgb8();
        for (c, &b) in bytes.iter().enumerate() {
            let back = b as f32 / 255.0;
            assert!(
                (back - img.data()[[c, 0, 0]]).abs() <= 0.5 / 255.0 + 1e-6,
                "channel {c}: {back} vs {}",
                img.data()[[c, 0, 0]]
            );
        }
    }
}
