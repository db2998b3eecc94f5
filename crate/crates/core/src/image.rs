//! 8-bit grayscale images and binary PGM (P5) / PPM (P6) I/O.

use std::io::Write;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if width < 3 || height < 3 {
            return Err(Error::ImageTooSmall { width, height });
        }
        if data.len() != width * height {
            return Err(Error::Parse(format!("buffer holds {} bytes, expected {}x{}", data.len(), width, height)));
        }
        Ok(Self { width, height, data })
    }

    pub fn filled(width: usize, height: usize, value: u8) -> Result<Self> {
        Self::new(width, height, vec![value; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, value: u8) {
        self.data[y * self.width + x] = value;
    }

    /// Binary PGM encoding.
    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.data.len() + 20);
        write!(out, "P5\n{} {}\n255\n", self.width, self.height).unwrap();
        out.extend_from_slice(&self.data);
        out
    }

    /// Decodes a binary PGM, or a binary PPM converted to luma.
    pub fn from_pnm(bytes: &[u8]) -> Result<Self> {
        let mut header = HeaderReader { bytes, pos: 0 };
        let magic = header.token()?;
        let channels = match magic.as_slice() {
            b"P5" => 1,
            b"P6" => 3,
            other => return Err(Error::Parse(format!("unsupported magic {:?}", String::from_utf8_lossy(other)))),
        };
        let width = header.number("width")?;
        let height = header.number("height")?;
        let maxval = header.number("maxval")?;
        if maxval != 255 {
            return Err(Error::Parse(format!("maxval must be 255, got {maxval}")));
        }
        // Exactly one whitespace byte separates the header from the raster.
        match bytes.get(header.pos) {
            Some(b) if b.is_ascii_whitespace() => header.pos += 1,
            _ => return Err(Error::Parse("missing whitespace after maxval".into())),
        }
        let needed = width
            .checked_mul(height)
            .and_then(|n| n.checked_mul(channels))
            .ok_or_else(|| Error::Parse("image dimensions overflow".into()))?;
        let raster = &bytes[header.pos..];
        if raster.len() < needed {
            return Err(Error::Parse(format!("truncated raster: {} of {} bytes", raster.len(), needed)));
        }
        let raster = &raster[..needed];
        let data = if channels == 1 {
            raster.to_vec()
        } else {
            raster.chunks_exact(3).map(|px| luma(px[0], px[1], px[2])).collect()
        };
        Self::new(width, height, data)
    }
}

/// BT.601 luma, rounded half up, in exact integer arithmetic.
pub fn luma(r: u8, g: u8, b: u8) -> u8 {
    ((299 * r as u32 + 587 * g as u32 + 114 * b as u32 + 500) / 1000) as u8
}

struct HeaderReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl HeaderReader<'_> {
    fn skip_space_and_comments(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b == b'#' {
                while let Some(&c) = self.bytes.get(self.pos) {
                    self.pos += 1;
                    if c == b'\n' || c == b'\r' {
                        break;
                    }
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn token(&mut self) -> Result<Vec<u8>> {
        self.skip_space_and_comments();
        let start = self.pos;
        while let Some(&b) = self.bytes.get(self.pos) {
            if b.is_ascii_whitespace() || b == b'#' {
                break;
            }
            self.pos += 1;
        }
        if start == self.pos {
            return Err(Error::Parse("unexpected end of header".into()));
        }
        Ok(self.bytes[start..self.pos].to_vec())
    }

    fn number(&mut self, what: &str) -> Result<usize> {
        let tok = self.token()?;
        if !tok.iter().all(u8::is_ascii_digit) {
            return Err(Error::Parse(format!("bad {what}: {:?}", String::from_utf8_lossy(&tok))));
        }
        std::str::from_utf8(&tok).ok().and_then(|s| s.parse().ok()).ok_or_else(|| Error::Parse(format!("bad {what}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn parses_pgm_with_comments() {
        let mut bytes = b"P5\n# made by hand\n3 # width\n4\n255\n".to_vec();
        bytes.extend(0u8..12);
        let img = GrayImage::from_pnm(&bytes).unwrap();
        assert_eq!((img.width(), img.height()), (3, 4));
        assert_eq!(img.get(2, 3), 11);
    }

    #[test]
    fn raster_may_start_with_whitespace_byte() {
        // The first pixel is 0x0a; only one separator byte is consumed.
        let mut bytes = b"P5 3 3 255\n".to_vec();
        bytes.extend([b'\n', 1, 2, 3, 4, 5, 6, 7, 8]);
        let img = GrayImage::from_pnm(&bytes).unwrap();
        assert_eq!(img.get(0, 0), b'\n');
    }

    #[test]
    fn parses_ppm_as_luma() {
        let mut bytes = b"P6\n3 3\n255\n".to_vec();
        for _ in 0..9 {
            bytes.extend([255, 0, 0]);
        }
        let img = GrayImage::from_pnm(&bytes).unwrap();
        assert_eq!(img.get(1, 1), 76);
        assert_eq!(luma(255, 255, 255), 255);
        assert_eq!(luma(0, 0, 0), 0);
        assert_eq!(luma(0, 255, 0), 150);
        assert_eq!(luma(0, 0, 255), 29);
    }

    #[test]
    fn rejects_malformed_input() {
        let cases: [&[u8]; 6] = [
            b"P2\n3 3\n255\n000000000",
            b"P5\n3 3\n65535\n",
            b"P5\n3 3\n255\n\x01\x02",
            b"P5\n3 x\n255\n000000000",
            b"P5\n3 3\n255",
            b"",
        ];
        for bytes in cases {
            assert!(matches!(GrayImage::from_pnm(bytes), Err(Error::Parse(_))), "{bytes:?}");
        }
        let small = b"P5\n2 3\n255\n\0\0\0\0\0\0";
        assert!(matches!(GrayImage::from_pnm(small), Err(Error::ImageTooSmall { .. })));
    }

    proptest! {
        #[test]
        fn pgm_round_trip(w in 3usize..20, h in 3usize..20, seed in any::<u64>()) {
            let data: Vec<u8> = (0..w * h).map(|i| (seed.wrapping_mul(i as u64 + 1) >> 13) as u8).collect();
            let img = GrayImage::new(w, h, data).unwrap();
            prop_assert_eq!(GrayImage::from_pnm(&img.to_pgm()).unwrap(), img);
        }
    }
}
