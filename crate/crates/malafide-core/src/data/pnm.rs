//! Binary PPM (P6) / PGM (P5) reader and writer, 8-bit, max value 255.
//!
//! The writer emits a single whitespace byte after each header token.
//! Quantization is round(value * 255); a save/load round trip reproduces
//! the quantized image exactly.

use std::fs;
use std::path::Path;

use super::{DataError, Image};
use crate::numcore::Tensor;

fn is_ws(b: u8) -> bool {
    matches!(b, b' ' | b'\t' | b'\n' | b'\r' | 0x0b | 0x0c)
}

pub fn quantize(v: f64) -> u8 {
    (v * 255.0).round().clamp(0.0, 255.0) as u8
}

pub fn dequantize(b: u8) -> f64 {
    b as f64 / 255.0
}

pub fn encode_image(image: &Image) -> Result<Vec<u8>, DataError> {
    let (h, w, c) = image.dims();
    let magic = match c {
        1 => "P5",
        3 => "P6",
        _ => {
            return Err(DataError::UnsupportedChannels(c));
        }
    };
    let mut out = format!("{magic}\n{w} {h}\n255\n").into_bytes();
    out.extend(image.tensor().values().iter().map(|&v| quantize(v)));
    Ok(out)
}

pub fn save_image(image: &Image, path: &Path) -> Result<(), DataError> {
    let bytes = encode_image(image)?;
    fs::write(path, bytes).map_err(|e| DataError::Io(path.display().to_string(), e.to_string()))
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn fail(&self, what: &str) -> DataError {
        DataError::MalformedPnm {
            offset: self.pos,
            what: what.to_string(),
        }
    }

    fn skip_ws(&mut self, what: &str) -> Result<(), DataError> {
        if self.pos >= self.bytes.len() || !is_ws(self.bytes[self.pos]) {
            return Err(self.fail(what));
        }
        while self.pos < self.bytes.len() && is_ws(self.bytes[self.pos]) {
            self.pos += 1;
        }
        Ok(())
    }

    fn read_uint(&mut self, what: &str) -> Result<usize, DataError> {
        let start = self.pos;
        let mut n: usize = 0;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            n = n
                .checked_mul(10)
                .and_then(|n| n.checked_add((self.bytes[self.pos] - b'0') as usize))
                .ok_or_else(|| self.fail(what))?;
            self.pos += 1;
        }
        if self.pos == start {
            return Err(self.fail(what));
        }
        Ok(n)
    }
}

pub fn decode_image(bytes: &[u8]) -> Result<Image, DataError> {
    let mut cur = Cursor { bytes, pos: 0 };
    if bytes.len() < 2 || bytes[0] != b'P' {
        return Err(cur.fail("magic"));
    }
    let channels = match bytes[1] {
        b'5' => 1,
        b'6' => 3,
        _ => {
            cur.pos = 1;
            return Err(cur.fail("magic: expected P5 or P6"));
        }
    };
    cur.pos = 2;
    cur.skip_ws("whitespace after magic")?;
    let w = cur.read_uint("width")?;
    cur.skip_ws("whitespace after width")?;
    let h = cur.read_uint("height")?;
    cur.skip_ws("whitespace after height")?;
    let maxval = cur.read_uint("max value")?;
    if maxval != 255 {
        return Err(DataError::MalformedPnm {
            offset: cur.pos,
            what: format!("unsupported max value {maxval}, only 255"),
        });
    }
    if w == 0 || h == 0 {
        return Err(cur.fail("zero image dimension"));
    }
    // exactly one whitespace byte separates the header from the payload
    if cur.pos >= bytes.len() || !is_ws(bytes[cur.pos]) {
        return Err(cur.fail("single whitespace before payload"));
    }
    cur.pos += 1;
    let expected = w * h * channels;
    let payload = &bytes[cur.pos..];
    if payload.len() != expected {
        return Err(DataError::MalformedPnm {
            offset: cur.pos,
            what: format!("payload is {} bytes, expected {expected}", payload.len()),
        });
    }
    let values: Vec<f64> = payload.iter().map(|&b| dequantize(b)).collect();
    let tensor = Tensor::new(&[h, w, channels], values)
        .map_err(|e| DataError::Internal(e.to_string()))?;
    Image::new(tensor)
}

pub fn load_image(path: &Path) -> Result<Image, DataError> {
    let bytes =
        fs::read(path).map_err(|e| DataError::Io(path.display().to_string(), e.to_string()))?;
    decode_image(&bytes)
}
