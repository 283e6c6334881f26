//! 8-bit RGB images and binary PPM (P6) encoding.

use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::scalar::Scalar;

pub type Rgb = [u8; 3];

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RgbImage {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize, fill: Rgb) -> Self {
        let mut data = Vec::with_capacity(width * height * 3);
        for _ in 0..width * height {
            data.extend_from_slice(&fill);
        }
        RgbImage { width, height, data }
    }

    pub fn from_raw(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 || data.len() != width * height * 3 {
            return Err(Error::dim(format!(
                "{width}x{height} RGB image needs {} bytes, got {}",
                width * height * 3,
                data.len()
            )));
        }
        Ok(RgbImage { width, height, data })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn raw(&self) -> &[u8] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize) -> Rgb {
        let o = (y * self.width + x) * 3;
        [self.data[o], self.data[o + 1], self.data[o + 2]]
    }

    pub fn put(&mut self, x: usize, y: usize, c: Rgb) {
        let o = (y * self.width + x) * 3;
        self.data[o..o + 3].copy_from_slice(&c);
    }

    /// Copies the `w × h` window whose top-left corner is `(x0, y0)`.
    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> Result<Self> {
        if x0 + w > self.width || y0 + h > self.height || w == 0 || h == 0 {
            return Err(Error::dim(format!(
                "crop {w}x{h}+{x0}+{y0} outside {}x{}",
                self.width, self.height
            )));
        }
        let mut out = RgbImage::new(w, h, [0, 0, 0]);
        for y in 0..h {
            for x in 0..w {
                out.put(x, y, self.get(x0 + x, y0 + y));
            }
        }
        Ok(out)
    }

    /// Pastes `src` with its top-left corner at `(x0, y0)`, clipped.
    pub fn paste(&mut self, src: &RgbImage, x0: usize, y0: usize) {
        for y in 0..src.height.min(self.height.saturating_sub(y0)) {
            for x in 0..src.width.min(self.width.saturating_sub(x0)) {
                self.put(x0 + x, y0 + y, src.get(x, y));
            }
        }
    }

    /// Pixels as an `H × W × 3` tensor scaled to `[-1, 1]`.
    pub fn to_tensor<T: Scalar>(&self) -> Tensor<T> {
        let data = self.data.iter().map(|&b| T::lit(b as f64 / 127.5 - 1.0)).collect();
        Tensor::new(vec![self.height, self.width, 3], data).expect("image shape")
    }

    /// Inverse of [`RgbImage::to_tensor`], clamping and rounding.
    pub fn from_tensor<T: Scalar>(t: &Tensor<T>) -> Result<Self> {
        let s = t.shape();
        if s.len() != 3 || s[2] != 3 {
            return Err(Error::dim(format!("expected H×W×3 tensor, got {s:?}")));
        }
        let data = t
            .data()
            .iter()
            .map(|&v| {
                let x = (v.to_f64_lossy() + 1.0) * 127.5;
                if x.is_nan() {
                    0
                } else {
                    x.round().clamp(0.0, 255.0) as u8
                }
            })
            .collect();
        RgbImage::from_raw(s[1], s[0], data)
    }

    pub fn encode_ppm(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.data);
        out
    }

    pub fn decode_ppm(bytes: &[u8]) -> Result<Self> {
        let mut pos = 0;
        let mut fields = Vec::with_capacity(4);
        while fields.len() < 4 {
            // Skip whitespace and comments between header tokens.
            while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
                if bytes[pos] == b'#' {
                    while pos < bytes.len() && bytes[pos] != b'\n' {
                        pos += 1;
                    }
                } else {
                    pos += 1;
                }
            }
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if start == pos {
                return Err(Error::parse("ppm header", "truncated header"));
            }
            fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
        }
        if fields[0] != "P6" {
            return Err(Error::parse("ppm header", format!("magic {:?} is not P6", fields[0])));
        }
        let num = |k: usize, name: &str| -> Result<usize> {
            fields[k]
                .parse::<usize>()
                .map_err(|_| Error::parse("ppm header", format!("bad {name} {:?}", fields[k])))
        };
        let (w, h, maxval) = (num(1, "width")?, num(2, "height")?, num(3, "maxval")?);
        if maxval != 255 {
            return Err(Error::parse("ppm header", format!("maxval {maxval} unsupported")));
        }
        // Exactly one whitespace byte separates the header from the raster.
        pos += 1;
        let need = w * h * 3;
        if bytes.len() < pos + need {
            return Err(Error::parse("ppm raster", "truncated pixel data"));
        }
        RgbImage::from_raw(w, h, bytes[pos..pos + need].to_vec())
    }

    pub fn write_ppm(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.encode_ppm()).map_err(|e| Error::io(path, e))
    }

    pub fn read_ppm(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode_ppm(&bytes)
    }

    /// Nearest-neighbour upscale by an integer factor.
    pub fn upscale(&self, factor: usize) -> Self {
        let mut out = RgbImage::new(self.width * factor, self.height * factor, [0, 0, 0]);
        for y in 0..out.height {
            for x in 0..out.width {
                out.put(x, y, self.get(x / factor, y / factor));
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ppm_round_trip() {
        let mut img = RgbImage::new(3, 2, [10, 20, 30]);
        img.put(2, 1, [255, 0, 7]);
        let bytes = img.encode_ppm();
        assert!(bytes.starts_with(b"P6\n3 2\n255\n"));
        assert_eq!(RgbImage::decode_ppm(&bytes).unwrap(), img);
    }

    #[test]
    fn ppm_with_comment() {
        let mut bytes = b"P6\n# made by hand\n1 1\n255\n".to_vec();
        bytes.extend_from_slice(&[1, 2, 3]);
        assert_eq!(RgbImage::decode_ppm(&bytes).unwrap().get(0, 0), [1, 2, 3]);
    }

    #[test]
    fn ppm_errors() {
        assert!(RgbImage::decode_ppm(b"P3\n1 1\n255\n").is_err());
        assert!(RgbImage::decode_ppm(b"P6\n2 2\n255\n\x00").is_err());
        assert!(RgbImage::decode_ppm(b"P6\n1 1\n65535\n\x00\x00\x00").is_err());
    }

    #[test]
    fn tensor_round_trip() {
        let img = RgbImage::from_raw(2, 1, vec![0, 128, 255, 1, 2, 3]).unwrap();
        let t = img.to_tensor::<f64>();
        assert_eq!(t.shape(), &[1, 2, 3]);
        assert_eq!(RgbImage::from_tensor(&t).unwrap(), img);
    }
}
