//! Binary PGM (`P5`) and PPM (`P6`) codec, maxval 255 only.
//!
//! Header tokens are separated by whitespace; `#` comments are skipped
//! between tokens. Exactly one whitespace byte separates maxval from the
//! raster. Samples in a PPM raster are interleaved RGB.

use crate::error::{Error, Result};

/// Largest accepted side length; rejects absurd headers before allocating.
pub const MAX_DIMENSION: usize = 1 << 14;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Pnm {
    pub channels: usize,
    pub width: usize,
    pub height: usize,
    /// Raster in file order (interleaved for 3 channels).
    pub samples: Vec<u8>,
}

fn malformed(msg: impl Into<String>) -> Error {
    Error::MalformedFile(msg.into())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn skip_whitespace_and_comments(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b.is_ascii_whitespace() {
                self.pos += 1;
            } else if b == b'#' {
                while let Some(&c) = self.bytes.get(self.pos) {
                    self.pos += 1;
                    if c == b'\n' || c == b'\r' {
                        break;
                    }
                }
            } else {
                break;
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<usize> {
        self.skip_whitespace_and_comments();
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(u8::is_ascii_digit) {
            self.pos += 1;
            if self.pos - start > 9 {
                return Err(malformed(format!("{what} has too many digits")));
            }
        }
        if start == self.pos {
            return Err(malformed(format!("expected {what}")));
        }
        // Only ASCII digits were consumed, at most nine of them.
        let text = std::str::from_utf8(&self.bytes[start..self.pos]).unwrap();
        Ok(text.parse().unwrap())
    }
}

pub fn decode(bytes: &[u8]) -> Result<Pnm> {
    let channels = match bytes.get(..2) {
        Some(b"P5") => 1,
        Some(b"P6") => 3,
        _ => return Err(malformed("bad magic (expected P5 or P6)")),
    };
    let mut cur = Cursor { bytes, pos: 2 };
    if !bytes
        .get(2)
        .is_some_and(|b| b.is_ascii_whitespace() || *b == b'#')
    {
        return Err(malformed("missing whitespace after magic"));
    }
    let width = cur.number("width")?;
    let height = cur.number("height")?;
    let maxval = cur.number("maxval")?;
    if width == 0 || height == 0 || width > MAX_DIMENSION || height > MAX_DIMENSION {
        return Err(malformed(format!("bad dimensions {width}x{height}")));
    }
    if maxval != 255 {
        return Err(malformed(format!("unsupported maxval {maxval}")));
    }
    match bytes.get(cur.pos) {
        Some(b) if b.is_ascii_whitespace() => cur.pos += 1,
        _ => return Err(malformed("missing whitespace before raster")),
    }
    let len = channels * width * height;
    let raster = bytes.get(cur.pos..cur.pos + len).ok_or_else(|| {
        malformed(format!(
            "truncated raster: need {len} bytes, have {}",
            bytes.len() - cur.pos
        ))
    })?;
    Ok(Pnm {
        channels,
        width,
        height,
        samples: raster.to_vec(),
    })
}

pub fn encode(pnm: &Pnm) -> Vec<u8> {
    let magic = if pnm.channels == 3 { "P6" } else { "P5" };
    let mut out = format!("{magic}\n{} {}\n255\n", pnm.width, pnm.height).into_bytes();
    out.extend_from_slice(&pnm.samples);
    out
}
