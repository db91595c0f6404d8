//! Binary PPM (P6) decoding and encoding, maxval 255 only.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Parses a binary P6 image into a `[3, H, W]` tensor scaled to [0,1].
/// The header tolerates arbitrary whitespace and `#` comments.
pub fn decode_ppm(bytes: &[u8]) -> Result<Tensor> {
    let mut cur = Cursor { bytes, pos: 0 };
    let magic = cur.token()?;
    if magic != b"P6" {
        return Err(Error::Format(format!(
            "not a binary PPM: magic {:?}",
            String::from_utf8_lossy(&magic)
        )));
    }
    let width = cur.number("width")?;
    let height = cur.number("height")?;
    let maxval = cur.number("maxval")?;
    if width == 0 || height == 0 {
        return Err(Error::Format(format!("empty image {width}x{height}")));
    }
    if maxval != 255 {
        return Err(Error::Format(format!("maxval {maxval}, only 255 supported")));
    }
    // exactly one whitespace byte separates the header from the pixels
    match cur.bytes.get(cur.pos) {
        Some(b) if b.is_ascii_whitespace() => cur.pos += 1,
        _ => return Err(Error::Format("missing separator after maxval".into())),
    }
    let need = width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(3))
        .ok_or_else(|| Error::Format(format!("image dimensions {width}x{height} overflow")))?;
    // compare against what's left before slicing: `pos + need` could overflow
    let have = cur.bytes.len() - cur.pos;
    if need > have {
        return Err(Error::Format(format!(
            "truncated pixel data: want {need} bytes, have {have}"
        )));
    }
    let payload = &cur.bytes[cur.pos..cur.pos + need];
    // interleaved RGB rows to planar channels
    let mut data = vec![0.0f32; need];
    let plane = width * height;
    for i in 0..plane {
        for c in 0..3 {
            data[c * plane + i] = payload[i * 3 + c] as f32 / 255.0;
        }
    }
    Tensor::new(vec![3, height, width], data)
}

/// Writes a `[3, H, W]` tensor as binary P6, rounding to 0..=255.
pub fn encode_ppm(pixels: &Tensor) -> Result<Vec<u8>> {
    if pixels.rank() != 3 || pixels.shape()[0] != 3 {
        return Err(Error::Dimension(format!(
            "encode_ppm expects [3, H, W], got {:?}",
            pixels.shape()
        )));
    }
    let (h, w) = (pixels.shape()[1], pixels.shape()[2]);
    let plane = h * w;
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    let data = pixels.data();
    for i in 0..plane {
        for c in 0..3 {
            out.push((data[c * plane + i].clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    }
    Ok(out)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    /// Skips whitespace and `#`-to-newline comments.
    fn skip_filler(&mut self) {
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
                _ => return,
            }
        }
    }

    fn token(&mut self) -> Result<Vec<u8>> {
        self.skip_filler();
        let start = self.pos;
        while let Some(b) = self.bytes.get(self.pos) {
            if b.is_ascii_whitespace() || *b == b'#' {
                break;
            }
            self.pos += 1;
        }
        if self.pos == start {
            return Err(Error::Format("truncated header".into()));
        }
        Ok(self.bytes[start..self.pos].to_vec())
    }

    fn number(&mut self, what: &str) -> Result<usize> {
        let tok = self.token()?;
        std::str::from_utf8(&tok)
            .ok()
            .and_then(|s| s.parse::<usize>().ok())
            .ok_or_else(|| {
                Error::Format(format!(
                    "bad {what} field {:?}",
                    String::from_utf8_lossy(&tok)
                ))
            })
    }
}
