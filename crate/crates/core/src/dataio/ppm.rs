//! Binary PPM (P6, maxval 255).

use std::path::Path;

use crate::dataio::image::Image;
use crate::error::{AclipError, Result};

/// Serializes with values clamped to `[0,1]` and rounded to 8 bits.
pub fn encode_ppm(img: &Image) -> Vec<u8> {
    let (h, w) = (img.height(), img.width());
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    out.reserve(3 * h * w);
    for y in 0..h {
        for x in 0..w {
            for c in 0..Image::CHANNELS {
                out.push((img.get(c, y, x).clamp(0.0, 1.0) * 255.0).round() as u8);
            }
        }
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn fail<T>(&self, detail: impl Into<String>) -> Result<T> {
        Err(AclipError::Format {
            offset: self.pos,
            detail: detail.into(),
        })
    }

    fn skip_space_and_comments(&mut self) {
        while self.pos < self.bytes.len() {
            match self.bytes[self.pos] {
                b'#' => {
                    while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                b if b.is_ascii_whitespace() => self.pos += 1,
                _ => break,
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<usize> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if start == self.pos {
            return self.fail(format!("expected {what}"));
        }
        let text = std::str::from_utf8(&self.bytes[start..self.pos]).expect("ascii digits");
        match text.parse() {
            Ok(v) => Ok(v),
            Err(_) => self.fail(format!("{what} out of range")),
        }
    }
}

pub fn decode_ppm(bytes: &[u8]) -> Result<Image> {
    let mut cur = Cursor { bytes, pos: 0 };
    if !bytes.starts_with(b"P6") {
        return cur.fail("missing P6 magic");
    }
    cur.pos = 2;
    let width = cur.number("width")?;
    let height = cur.number("height")?;
    cur.skip_space_and_comments();
    let maxval_at = cur.pos;
    let maxval = cur.number("maxval")?;
    if maxval != 255 {
        return Err(AclipError::Format {
            offset: maxval_at,
            detail: format!("maxval {maxval} unsupported (expected 255)"),
        });
    }
    if cur.pos >= bytes.len() || !bytes[cur.pos].is_ascii_whitespace() {
        return cur.fail("expected single whitespace after maxval");
    }
    cur.pos += 1;
    if width == 0 || height == 0 {
        return cur.fail("zero image extent");
    }
    let need = 3 * width * height;
    let body = &bytes[cur.pos..];
    if body.len() != need {
        return cur.fail(format!("pixel data has {} bytes, expected {need}", body.len()));
    }
    let mut img = Image::filled(height, width, [0.0; 3]);
    for (i, px) in body.chunks(3).enumerate() {
        let (y, x) = (i / width, i % width);
        for (c, &b) in px.iter().enumerate() {
            img.set(c, y, x, f64::from(b) / 255.0);
        }
    }
    Ok(img)
}

pub fn write_ppm(path: &Path, img: &Image) -> Result<()> {
    std::fs::write(path, encode_ppm(img)).map_err(|e| AclipError::io(path, e))
}

pub fn read_ppm(path: &Path) -> Result<Image> {
    let bytes = std::fs::read(path).map_err(|e| AclipError::io(path, e))?;
    decode_ppm(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn white_pixel_layout() {
        let img = Image::filled(1, 1, [1.0; 3]);
        let mut expected = b"P6\n1 1\n255\n".to_vec();
        expected.extend([0xFF; 3]);
        assert_eq!(encode_ppm(&img), expected);
    }

    #[test]
    fn round_trip_is_byte_exact() {
        let data: Vec<f64> = (0..3 * 5 * 7).map(|i| ((i * 37) % 256) as f64 / 255.0).collect();
        let img = Image::new(5, 7, data).unwrap();
        let bytes = encode_ppm(&img);
        let back = decode_ppm(&bytes).unwrap();
        assert_eq!(back, img);
        assert_eq!(encode_ppm(&back), bytes);
    }

    #[test]
    fn rejects_other_maxval_with_offset() {
        let mut bytes = b"P6\n1 1\n65535\n".to_vec();
        bytes.extend([0; 6]);
        match decode_ppm(&bytes) {
            Err(AclipError::Format { offset, detail }) => {
                assert_eq!(offset, 7);
                assert!(detail.contains("maxval"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        assert!(matches!(
            decode_ppm(b"P3\n1 1\n255\n000"),
            Err(AclipError::Format { offset: 0, .. })
        ));
        assert!(matches!(
            decode_ppm(b"P6\n2 2\n255\n\x00\x00"),
            Err(AclipError::Format { .. })
        ));
    }

    #[test]
    fn header_comments_are_skipped() {
        let mut bytes = b"P6\n# made by hand\n1 1\n255\n".to_vec();
        bytes.extend([0, 255, 0]);
        let img = decode_ppm(&bytes).unwrap();
        assert_eq!(img.get(1, 0, 0), 1.0);
    }
}
