//! Small RGB images with binary PPM (P6) I/O.

use std::io::{self, Read, Write};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("malformed PPM: {0}")]
    Malformed(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// H×W×3 image, row-major with interleaved channels, values in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl Image {
    pub fn new(height: usize, width: usize) -> Self {
        Self { height, width, data: vec![0.0; height * width * 3] }
    }

    pub fn filled(height: usize, width: usize, rgb: [f64; 3]) -> Self {
        let mut img = Self::new(height, width);
        for px in img.data.chunks_exact_mut(3) {
            px.copy_from_slice(&rgb);
        }
        img
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * 3 + c]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, c: usize, v: f64) {
        self.data[(y * self.width + x) * 3 + c] = v;
    }

    pub fn fill_rect(&mut self, y0: usize, x0: usize, h: usize, w: usize, rgb: [f64; 3]) {
        for y in y0..(y0 + h).min(self.height) {
            for x in x0..(x0 + w).min(self.width) {
                for (c, &v) in rgb.iter().enumerate() {
                    self.set(y, x, c, v);
                }
            }
        }
    }

    pub fn write_ppm<W: Write>(&self, mut out: W) -> io::Result<()> {
        write!(out, "P6\n{} {}\n255\n", self.width, self.height)?;
        let bytes: Vec<u8> = self.data.iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
        out.write_all(&bytes)
    }

    pub fn to_ppm_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(self.data.len() + 16);
        self.write_ppm(&mut buf).expect("writing to a Vec cannot fail");
        buf
    }

    pub fn read_ppm<R: Read>(mut input: R) -> Result<Self, ImageError> {
        let mut bytes = Vec::new();
        input.read_to_end(&mut bytes)?;
        Self::from_ppm_bytes(&bytes)
    }

    pub fn from_ppm_bytes(bytes: &[u8]) -> Result<Self, ImageError> {
        let mut pos = 0;
        let mut fields = Vec::new();
        while fields.len() < 4 {
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
                return Err(ImageError::Malformed("truncated header".into()));
            }
            fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
        }
        if fields[0] != "P6" {
            return Err(ImageError::Malformed(format!("expected P6, found {}", fields[0])));
        }
        let num = |s: &str| s.parse::<usize>().map_err(|_| ImageError::Malformed(format!("bad number {s}")));
        let (width, height, maxval) = (num(&fields[1])?, num(&fields[2])?, num(&fields[3])?);
        if maxval != 255 {
            return Err(ImageError::Malformed(format!("unsupported maxval {maxval}")));
        }
        pos += 1;
        let need = width * height * 3;
        let body = bytes.get(pos..pos + need).ok_or_else(|| ImageError::Malformed("truncated pixel data".into()))?;
        Ok(Self { height, width, data: body.iter().map(|&b| b as f64 / 255.0).collect() })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ppm_round_trip_on_byte_grid() {
        let mut img = Image::new(3, 5);
        for (i, v) in img.data.iter_mut().enumerate() {
            *v = ((i * 37) % 256) as f64 / 255.0;
        }
        let back = Image::from_ppm_bytes(&img.to_ppm_bytes()).unwrap();
        assert_eq!(back, img);
    }

    #[test]
    fn ppm_rejects_other_formats() {
        assert!(Image::from_ppm_bytes(b"P3\n1 1\n255\n0 0 0\n").is_err());
        assert!(Image::from_ppm_bytes(b"P6\n2 2\n255\n\x00").is_err());
    }
}
