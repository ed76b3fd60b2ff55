//! 16-bit binary PGM (P5, maxval 65535) reader and writer.

use std::fs;
use std::path::Path;

use crate::data::Image;
use crate::error::{invalid, Error, Result};
use crate::scalar::Scalar;

const MAXVAL: u32 = 65535;

fn quantize(v: f64) -> u16 {
    (v * MAXVAL as f64).round_ties_even() as u16
}

/// Encodes an image with values in [0,1] as a P5 byte buffer.
pub fn encode_pgm<T: Scalar>(image: &Image<T>) -> Result<Vec<u8>> {
    let header = format!("P5\n{} {}\n{}\n", image.width(), image.height(), MAXVAL);
    let mut out = Vec::with_capacity(header.len() + 2 * image.pixels().len());
    out.extend_from_slice(header.as_bytes());
    for (i, v) in image.pixels().iter().enumerate() {
        let v = v.to_f64_lossy();
        if !(0.0..=1.0).contains(&v) {
            return Err(invalid(format!("pixel {i} = {v} outside [0,1]; PGM export needs normalized values")));
        }
        out.extend_from_slice(&quantize(v).to_be_bytes());
    }
    Ok(out)
}

pub fn write_pgm<T: Scalar>(image: &Image<T>, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_pgm(image)?)?;
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn err(&self, message: impl Into<String>) -> Error {
        Error::Format { offset: self.pos, message: message.into() }
    }

    fn skip_whitespace_and_comments(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b.is_ascii_whitespace() {
                self.pos += 1;
            } else if b == b'#' {
                while let Some(&c) = self.bytes.get(self.pos) {
                    self.pos += 1;
                    if c == b'\n' {
                        break;
                    }
                }
            } else {
                break;
            }
        }
    }

    /// Parses a decimal field; returns its value and starting offset.
    fn number(&mut self, what: &str) -> Result<(u32, usize)> {
        self.skip_whitespace_and_comments();
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(u8::is_ascii_digit) {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(self.err(format!("expected {what}")));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .map(|v| (v, start))
            .ok_or_else(|| Error::Format { offset: start, message: format!("{what} out of range") })
    }
}

pub fn decode_pgm<T: Scalar>(bytes: &[u8]) -> Result<Image<T>> {
    let mut cur = Cursor { bytes, pos: 0 };
    if bytes.len() < 2 || &bytes[..2] != b"P5" {
        return Err(cur.err("missing P5 magic"));
    }
    cur.pos = 2;
    if !bytes.get(2).is_some_and(u8::is_ascii_whitespace) {
        return Err(cur.err("expected whitespace after magic"));
    }
    let width = cur.number("width")?.0 as usize;
    let height = cur.number("height")?.0 as usize;
    let (maxval, maxval_at) = cur.number("maxval")?;
    if maxval != MAXVAL {
        return Err(Error::Format { offset: maxval_at, message: format!("maxval {maxval}, only {MAXVAL} is supported") });
    }
    if width == 0 || height == 0 {
        return Err(cur.err("zero image dimension"));
    }
    if !bytes.get(cur.pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(cur.err("expected single whitespace before payload"));
    }
    cur.pos += 1;
    let need = 2 * width * height;
    let payload = &bytes[cur.pos..];
    if payload.len() < need {
        return Err(Error::Format {
            offset: bytes.len(),
            message: format!("truncated payload: {} of {need} bytes", payload.len()),
        });
    }
    if payload.len() > need {
        return Err(Error::Format { offset: cur.pos + need, message: "trailing bytes after payload".into() });
    }
    let pixels = payload
        .chunks_exact(2)
        .map(|b| T::lit(u16::from_be_bytes([b[0], b[1]]) as f64 / MAXVAL as f64))
        .collect();
    Image::new(width, height, pixels)
}

pub fn read_pgm<T: Scalar>(path: impl AsRef<Path>) -> Result<Image<T>> {
    decode_pgm(&fs::read(path)?)
}
