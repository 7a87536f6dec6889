//! Binary PGM (P5) reading and writing.
//!
//! Supported maxvals are 255 (one byte per pixel) and 65535 (two bytes,
//! big-endian). Grayscale values map linearly between `[0, 1]` and
//! `[0, maxval]`; writing rounds to the nearest level, so one round trip
//! perturbs a pixel by at most `0.5 / maxval`.

use crate::error::{Error, Result};
use crate::imaging::GrayImage;
use std::fs;
use std::io::Write as _;
use std::path::Path;

/// Pixel depth of a PGM file.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PgmDepth {
    /// maxval 255
    Eight,
    /// maxval 65535
    Sixteen,
}

impl PgmDepth {
    pub fn maxval(self) -> u32 {
        match self {
            PgmDepth::Eight => 255,
            PgmDepth::Sixteen => 65535,
        }
    }
}

struct HeaderParser<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> HeaderParser<'a> {
    fn new(data: &'a [u8]) -> Self {
        Self { data, pos: 0 }
    }

    fn err(&self, message: impl Into<String>) -> Error {
        Error::format(self.pos, message)
    }

    /// Skip whitespace and `#` comments (which run to end of line).
    fn skip_separators(&mut self) -> Result<()> {
        loop {
            match self.data.get(self.pos) {
                Some(b) if b.is_ascii_whitespace() => self.pos += 1,
                Some(b'#') => {
                    while let Some(&b) = self.data.get(self.pos) {
                        self.pos += 1;
                        if b == b'\n' {
                            break;
                        }
                    }
                }
                Some(_) => return Ok(()),
                None => return Err(self.err("unexpected end of header")),
            }
        }
    }

    fn read_number(&mut self, what: &str) -> Result<u32> {
        self.skip_separators()?;
        let start = self.pos;
        while self
            .data
            .get(self.pos)
            .is_some_and(|b| b.is_ascii_digit())
        {
            self.pos += 1;
        }
        if self.pos == start {
            return Err(self.err(format!("expected {what}")));
        }
        let text = std::str::from_utf8(&self.data[start..self.pos]).unwrap();
        text.parse::<u32>()
            .map_err(|_| Error::format(start, format!("{what} out of range: {text}")))
    }
}

/// Parse a P5 image from bytes. `offset` in errors counts from the start of
/// the buffer.
pub fn parse_pgm(data: &[u8]) -> Result<GrayImage> {
    let mut p = HeaderParser::new(data);
    if data.len() < 2 || &data[..2] != b"P5" {
        return Err(Error::format(0, "not a binary PGM: missing P5 magic"));
    }
    p.pos = 2;
    let width = p.read_number("width")? as usize;
    let height = p.read_number("height")? as usize;
    let maxval = p.read_number("maxval")?;
    let depth = match maxval {
        255 => PgmDepth::Eight,
        65535 => PgmDepth::Sixteen,
        other => {
            return Err(p.err(format!("unsupported maxval {other}, expected 255 or 65535")))
        }
    };
    if width == 0 || height == 0 {
        return Err(p.err(format!("degenerate dimensions {width}x{height}")));
    }
    // exactly one whitespace byte separates the header from pixel data
    match data.get(p.pos) {
        Some(b) if b.is_ascii_whitespace() => p.pos += 1,
        Some(_) => return Err(p.err("expected whitespace before pixel data")),
        None => return Err(p.err("unexpected end of header")),
    }

    let count = width * height;
    let bytes_per = match depth {
        PgmDepth::Eight => 1,
        PgmDepth::Sixteen => 2,
    };
    let need = count * bytes_per;
    let body = &data[p.pos.min(data.len())..];
    if body.len() < need {
        return Err(Error::format(
            data.len(),
            format!("pixel data truncated: need {need} bytes, have {}", body.len()),
        ));
    }
    if body.len() > need {
        return Err(Error::format(
            p.pos + need,
            format!("{} trailing bytes after pixel data", body.len() - need),
        ));
    }

    let scale = 1.0 / depth.maxval() as f64;
    let pixels: Vec<f64> = match depth {
        PgmDepth::Eight => body.iter().map(|&b| b as f64 * scale).collect(),
        PgmDepth::Sixteen => body
            .chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]) as f64 * scale)
            .collect(),
    };
    GrayImage::new(width, height, pixels)
}

/// Read a P5 file from disk.
pub fn read_pgm(path: &Path) -> Result<GrayImage> {
    let data = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_pgm(&data)
}

/// Serialize an image as P5 at the given depth.
pub fn encode_pgm(img: &GrayImage, depth: PgmDepth) -> Vec<u8> {
    let maxval = depth.maxval();
    let mut out = Vec::with_capacity(32 + img.pixels().len() * 2);
    write!(out, "P5\n{} {}\n{}\n", img.width(), img.height(), maxval).unwrap();
    let m = maxval as f64;
    match depth {
        PgmDepth::Eight => {
            for &p in img.pixels() {
                out.push((p * m).round() as u8);
            }
        }
        PgmDepth::Sixteen => {
            for &p in img.pixels() {
                let v = (p * m).round() as u16;
                out.extend_from_slice(&v.to_be_bytes());
            }
        }
    }
    out
}

/// Write a P5 file to disk.
pub fn write_pgm(path: &Path, img: &GrayImage, depth: PgmDepth) -> Result<()> {
    fs::write(path, encode_pgm(img, depth)).map_err(|e| Error::io(path, e))
}
