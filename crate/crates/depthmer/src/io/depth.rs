//! Depth grid file formats.
//!
//! Two interchangeable encodings are supported, chosen by file extension:
//!
//! * `.pgm`: binary PGM (`P5`) with a maxval of 65535 and big-endian
//!   16-bit samples, readable by standard image tools. 8-bit PGM files are
//!   rejected rather than upscaled.
//! * `.raw`: an 8-byte header of little-endian `u32` width and height,
//!   followed by row-major little-endian `u16` samples.
//!
//! Zero samples mean "no reading" in both formats. Writing canonicalizes
//! invalid cells to zero, so a read-back frame equals the frame written.

use std::path::Path;

use crate::camera::DepthFrame;
use crate::error::{Error, Result};

/// Reads a depth grid, dispatching on the file extension.
pub fn read_depth(path: &Path) -> Result<DepthFrame> {
    let encoding = extension(path)?;
    let bytes = std::fs::read(path).map_err(Error::file(path))?;
    match encoding {
        DepthEncoding::Pgm => decode_pgm16(&bytes),
        DepthEncoding::Raw => decode_raw(&bytes),
    }
}

/// Writes a depth grid, dispatching on the file extension.
pub fn write_depth(path: &Path, frame: &DepthFrame) -> Result<()> {
    let bytes = match extension(path)? {
        DepthEncoding::Pgm => encode_pgm16(frame),
        DepthEncoding::Raw => encode_raw(frame),
    };
    std::fs::write(path, bytes).map_err(Error::file(path))
}

enum DepthEncoding {
    Pgm,
    Raw,
}

fn extension(path: &Path) -> Result<DepthEncoding> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("pgm") => Ok(DepthEncoding::Pgm),
        Some("raw") => Ok(DepthEncoding::Raw),
        other => Err(Error::UnsupportedFormat(format!(
            "unknown depth extension {other:?} for {}, expected .pgm or .raw",
            path.display()
        ))),
    }
}

/// Decodes binary 16-bit PGM. Exposed for in-memory use and tests.
pub fn decode_pgm16(bytes: &[u8]) -> Result<DepthFrame> {
    let mut cursor = Cursor { bytes, pos: 0 };
    cursor.expect(b"P5")?;
    let width = cursor.ascii_number("width")?;
    let height = cursor.ascii_number("height")?;
    let maxval = cursor.ascii_number("maxval")?;
    // Exactly one whitespace byte separates the header from the payload.
    match cursor.next_byte() {
        Some(b) if b.is_ascii_whitespace() => {}
        _ => {
            return Err(Error::DepthFormat {
                offset: cursor.pos,
                msg: "expected single whitespace byte after maxval".into(),
            })
        }
    }
    if maxval <= 255 {
        return Err(Error::UnsupportedFormat(format!(
            "PGM maxval {maxval} implies 8-bit samples; depth requires 16 bits"
        )));
    }
    if maxval > 65535 {
        return Err(Error::DepthFormat {
            offset: cursor.pos,
            msg: format!("maxval {maxval} exceeds 65535"),
        });
    }
    let cells = width.checked_mul(height).ok_or(Error::DepthFormat {
        offset: cursor.pos,
        msg: "width * height overflows".into(),
    })?;
    let payload = &cursor.bytes[cursor.pos..];
    let expected = cells.checked_mul(2).ok_or(Error::DepthFormat {
        offset: cursor.pos,
        msg: "payload size overflows".into(),
    })?;
    if payload.len() < expected {
        return Err(Error::DepthFormat {
            offset: cursor.bytes.len(),
            msg: format!(
                "payload truncated: need {expected} bytes, have {}",
                payload.len()
            ),
        });
    }
    if payload.len() > expected {
        return Err(Error::DepthFormat {
            offset: cursor.pos + expected,
            msg: "trailing bytes after sample data".into(),
        });
    }
    let raw = payload
        .chunks_exact(2)
        .map(|c| u16::from_be_bytes([c[0], c[1]]))
        .collect();
    DepthFrame::new(width, height, raw)
}

/// Encodes a frame as binary 16-bit PGM with maxval 65535.
pub fn encode_pgm16(frame: &DepthFrame) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n65535\n", frame.width(), frame.height()).into_bytes();
    out.reserve(frame.raw().len() * 2);
    for (&d, &m) in frame.raw().iter().zip(frame.valid()) {
        let d = if m { d } else { 0 };
        out.extend_from_slice(&d.to_be_bytes());
    }
    out
}

/// Decodes the raw little-endian format.
pub fn decode_raw(bytes: &[u8]) -> Result<DepthFrame> {
    if bytes.len() < 8 {
        return Err(Error::DepthFormat {
            offset: bytes.len(),
            msg: "header truncated: need 8 bytes of width/height".into(),
        });
    }
    let width = u32::from_le_bytes(bytes[0..4].try_into().unwrap()) as usize;
    let height = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    if width == 0 || height == 0 {
        return Err(Error::DepthFormat {
            offset: 0,
            msg: format!("zero dimension {width}x{height}"),
        });
    }
    let cells = width.checked_mul(height).ok_or(Error::DepthFormat {
        offset: 0,
        msg: "width * height overflows".into(),
    })?;
    let expected = cells.checked_mul(2).ok_or(Error::DepthFormat {
        offset: 0,
        msg: "payload size overflows".into(),
    })?;
    let payload = &bytes[8..];
    if payload.len() != expected {
        return Err(Error::DepthFormat {
            offset: 8 + payload.len().min(expected),
            msg: format!(
                "payload is {} bytes, expected exactly {expected}",
                payload.len()
            ),
        });
    }
    let raw = payload
        .chunks_exact(2)
        .map(|c| u16::from_le_bytes([c[0], c[1]]))
        .collect();
    DepthFrame::new(width, height, raw)
}

/// Encodes a frame in the raw little-endian format.
pub fn encode_raw(frame: &DepthFrame) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + frame.raw().len() * 2);
    out.extend_from_slice(&(frame.width() as u32).to_le_bytes());
    out.extend_from_slice(&(frame.height() as u32).to_le_bytes());
    for (&d, &m) in frame.raw().iter().zip(frame.valid()) {
        let d = if m { d } else { 0 };
        out.extend_from_slice(&d.to_le_bytes());
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn next_byte(&mut self) -> Option<u8> {
        let b = self.bytes.get(self.pos).copied();
        if b.is_some() {
            self.pos += 1;
        }
        b
    }

    fn expect(&mut self, magic: &[u8]) -> Result<()> {
        if self.bytes.len() < self.pos + magic.len()
            || &self.bytes[self.pos..self.pos + magic.len()] != magic
        {
            return Err(Error::DepthFormat {
                offset: self.pos,
                msg: format!("missing magic {:?}", String::from_utf8_lossy(magic)),
            });
        }
        self.pos += magic.len();
        Ok(())
    }

    /// Skips whitespace and `#` comments, then parses a decimal number.
    fn ascii_number(&mut self, what: &str) -> Result<usize> {
        loop {
            match self.bytes.get(self.pos) {
                Some(b) if b.is_ascii_whitespace() => self.pos += 1,
                Some(b'#') => {
                    while let Some(&b) = self.bytes.get(self.pos) {
                        self.pos += 1;
                        if b == b'\n' {
                            break;
                        }
                    }
                }
                _ => break,
            }
        }
        let start = self.pos;
        while matches!(self.bytes.get(self.pos), Some(b) if b.is_ascii_digit()) {
            self.pos += 1;
        }
        if self.pos == start {
            return Err(Error::DepthFormat {
                offset: start,
                msg: format!("expected decimal {what}"),
            });
        }
        let text = std::str::from_utf8(&self.bytes[start..self.pos]).unwrap();
        text.parse().map_err(|_| Error::DepthFormat {
            offset: start,
            msg: format!("{what} {text} out of range"),
        })
    }
}
