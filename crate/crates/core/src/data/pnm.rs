//! Binary PGM (P5) and PPM (P6) files with 8-bit samples.

use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::error::{Error, Result};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PnmError {
    #[error("malformed header: {0}")]
    Header(String),
    #[error("maxval {0} is not supported (only 255)")]
    Maxval(u32),
    #[error("payload has {found} bytes, header declares {expected}")]
    PayloadLength { expected: usize, found: usize },
    #[error("expected a {expected} file, found {found}")]
    Kind { expected: &'static str, found: &'static str },
}

/// A decoded 8-bit image, channels interleaved per pixel.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PnmImage {
    pub width: usize,
    pub height: usize,
    /// 1 for PGM, 3 for PPM.
    pub channels: usize,
    pub data: Vec<u8>,
}

impl PnmImage {
    pub fn gray(width: usize, height: usize, data: Vec<u8>) -> Self {
        assert_eq!(data.len(), width * height);
        PnmImage { width, height, channels: 1, data }
    }

    pub fn rgb(width: usize, height: usize, data: Vec<u8>) -> Self {
        assert_eq!(data.len(), 3 * width * height);
        PnmImage { width, height, channels: 3, data }
    }

    fn kind(&self) -> &'static str {
        if self.channels == 1 {
            "PGM"
        } else {
            "PPM"
        }
    }

    /// Canonical form: `P5\n<w> <h>\n255\n` followed by the samples.
    pub fn encode(&self) -> Vec<u8> {
        let magic = if self.channels == 1 { "P5" } else { "P6" };
        let mut out = format!("{magic}\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.data);
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, PnmError> {
        let mut pos = 0;
        let magic = bytes.get(..2).ok_or_else(|| PnmError::Header("file shorter than the magic number".into()))?;
        let channels = match magic {
            b"P5" => 1,
            b"P6" => 3,
            _ => return Err(PnmError::Header(format!("unknown magic {:?}", String::from_utf8_lossy(magic)))),
        };
        pos += 2;
        let mut fields = [0u32; 3];
        for (i, field) in fields.iter_mut().enumerate() {
            *field = header_number(bytes, &mut pos, ["width", "height", "maxval"][i])?;
        }
        // exactly one whitespace byte separates the header from the payload
        match bytes.get(pos) {
            Some(b) if b.is_ascii_whitespace() => pos += 1,
            _ => return Err(PnmError::Header("missing whitespace after maxval".into())),
        }
        let [width, height, maxval] = fields.map(|v| v as usize);
        if maxval != 255 {
            return Err(PnmError::Maxval(maxval as u32));
        }
        if width == 0 || height == 0 {
            return Err(PnmError::Header(format!("empty image {width}x{height}")));
        }
        let expected = width * height * channels;
        let payload = &bytes[pos..];
        if payload.len() != expected {
            return Err(PnmError::PayloadLength { expected, found: payload.len() });
        }
        Ok(PnmImage { width, height, channels, data: payload.to_vec() })
    }

    /// Samples divided by 255.
    pub fn unit_values(&self) -> Vec<f32> {
        self.data.iter().map(|&b| b as f32 / 255.0).collect()
    }
}

fn header_number(bytes: &[u8], pos: &mut usize, what: &str) -> Result<u32, PnmError> {
    loop {
        match bytes.get(*pos) {
            Some(b'#') => {
                while bytes.get(*pos).is_some_and(|&b| b != b'\n') {
                    *pos += 1;
                }
            }
            Some(b) if b.is_ascii_whitespace() => *pos += 1,
            Some(_) => break,
            None => return Err(PnmError::Header(format!("header ends before {what}"))),
        }
    }
    let start = *pos;
    while bytes.get(*pos).is_some_and(u8::is_ascii_digit) {
        *pos += 1;
    }
    if start == *pos {
        return Err(PnmError::Header(format!("{what} is not a number")));
    }
    std::str::from_utf8(&bytes[start..*pos])
        .unwrap()
        .parse()
        .map_err(|_| PnmError::Header(format!("{what} out of range")))
}

pub fn read(path: &Path) -> Result<PnmImage> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    PnmImage::decode(&bytes).map_err(|source| Error::Pnm { path: path.to_path_buf(), source })
}

fn read_kind(path: &Path, channels: usize) -> Result<PnmImage> {
    let img = read(path)?;
    if img.channels != channels {
        let expected = if channels == 1 { "PGM" } else { "PPM" };
        return Err(Error::Pnm { path: path.to_path_buf(), source: PnmError::Kind { expected, found: img.kind() } });
    }
    Ok(img)
}

pub fn read_pgm(path: &Path) -> Result<PnmImage> {
    read_kind(path, 1)
}

pub fn read_ppm(path: &Path) -> Result<PnmImage> {
    read_kind(path, 3)
}

pub fn write(path: &Path, img: &PnmImage) -> Result<()> {
    fs::write(path, img.encode()).map_err(|e| Error::io(path, e))
}

/// Round `v * 255` to the nearest byte, clamping to `[0, 255]`.
pub fn quantize(v: f64) -> u8 {
    (v * 255.0).round().clamp(0.0, 255.0) as u8
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pgm_value_mapping() {
        let img = PnmImage::decode(b"P5\n2 2\n255\n\x00\x80\xff\x40").unwrap();
        assert_eq!(img.unit_values(), vec![0.0, 128.0 / 255.0, 1.0, 64.0 / 255.0]);
    }

    #[test]
    fn canonical_round_trip() {
        let bytes = b"P6\n1 2\n255\n\x01\x02\x03\x04\x05\x06".to_vec();
        assert_eq!(PnmImage::decode(&bytes).unwrap().encode(), bytes);
    }

    #[test]
    fn comments_and_spacing_accepted() {
        let img = PnmImage::decode(b"P5 # a comment\n 1\t1 255 \x07").unwrap();
        assert_eq!(img.data, vec![7]);
    }

    #[test]
    fn distinct_errors() {
        assert!(matches!(PnmImage::decode(b"P5\n2 2\n255\n\x00"), Err(PnmError::PayloadLength { expected: 4, found: 1 })));
        assert!(matches!(PnmImage::decode(b"P3\n1 1\n255\n1"), Err(PnmError::Header(_))));
        assert!(matches!(PnmImage::decode(b"P5\n1 1\n65535\n\x00\x00"), Err(PnmError::Maxval(65535))));
        assert!(matches!(PnmImage::decode(b"P5\nx 1\n255\n\x00"), Err(PnmError::Header(_))));
    }

    #[test]
    fn quantize_rounds_and_clamps() {
        assert_eq!(quantize(0.5), 128);
        assert_eq!(quantize(-1.0), 0);
        assert_eq!(quantize(2.0), 255);
    }
}
