//! Binary PGM (`P5`) grayscale images, maxval at most 255.

use std::path::Path;

use super::{read_file, write_atomic};
use crate::error::{Error, Result};
use crate::tensor::{Dims, Scalar, Tensor};

fn parse_err(offset: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        what: "pgm",
        offset,
        msg: msg.into(),
    }
}

struct Header<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Header<'_> {
    fn skip_space_and_comments(&mut self) {
        while self.pos < self.bytes.len() {
            match self.bytes[self.pos] {
                b'#' => {
                    while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                c if c.is_ascii_whitespace() => self.pos += 1,
                _ => break,
            }
        }
    }

    fn number(&mut self, name: &str) -> Result<usize> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(parse_err(start, format!("expected {name}")));
        }
        let text = std::str::from_utf8(&self.bytes[start..self.pos]).expect("ascii digits");
        text.parse()
            .map_err(|_| parse_err(start, format!("{name} {text} is too large")))
    }
}

/// Pixels scaled by `1 / maxval`, as a `[height, width, 1, 1]` tensor.
pub fn parse_pgm<T: Scalar>(bytes: &[u8]) -> Result<Tensor<T>> {
    if bytes.len() < 2 || &bytes[..2] != b"P5" {
        return Err(parse_err(0, "bad magic (expected P5)"));
    }
    let mut h = Header { bytes, pos: 2 };
    let width = h.number("width")?;
    let height = h.number("height")?;
    let maxval_at = h.pos;
    let maxval = h.number("maxval")?;
    if width == 0 || height == 0 {
        return Err(parse_err(2, format!("zero extent {width}x{height}")));
    }
    if maxval == 0 || maxval > 255 {
        return Err(parse_err(maxval_at, format!("maxval {maxval} unsupported (1..=255)")));
    }
    if h.pos >= bytes.len() || !bytes[h.pos].is_ascii_whitespace() {
        return Err(parse_err(h.pos, "expected one whitespace byte before the raster"));
    }
    let start = h.pos + 1;
    let total = width
        .checked_mul(height)
        .ok_or_else(|| parse_err(2, format!("extent {width}x{height} overflows")))?;
    let payload = bytes.len() - start;
    if payload != total {
        let kind = if payload < total { "truncated raster" } else { "trailing bytes after raster" };
        return Err(parse_err(start + payload.min(total), format!("{kind}: expected {total} bytes, found {payload}")));
    }
    let raster = &bytes[start..];
    if let Some(i) = raster.iter().position(|&b| b as usize > maxval) {
        return Err(parse_err(start + i, format!("sample {} exceeds maxval {maxval}", raster[i])));
    }
    let inv = 1.0 / maxval as f64;
    Tensor::from_dims(
        Dims::new(height, width, 1, 1),
        raster.iter().map(|&b| T::from_f64(b as f64 * inv)).collect(),
    )
}

/// Encodes a single-channel image; values are clamped to `[0, 1]` and
/// written with maxval 255.
pub fn encode_pgm<T: Scalar>(image: &Tensor<T>) -> Result<Vec<u8>> {
    let d = image.dims();
    if d.channels != 1 || d.batch != 1 {
        return Err(Error::shape("pgm image", image.shape(), &[d.height, d.width, 1, 1]));
    }
    let mut out = format!("P5\n{} {}\n255\n", d.width, d.height).into_bytes();
    out.extend(super::idx::quantize(image.data()));
    Ok(out)
}

pub fn read_pgm<T: Scalar>(path: &Path) -> Result<Tensor<T>> {
    parse_pgm(&read_file(path)?)
}

pub fn write_pgm<T: Scalar>(path: &Path, image: &Tensor<T>) -> Result<()> {
    write_atomic(path, &encode_pgm(image)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_header_with_comment() {
        let mut bytes = b"P5\n# made by hand\n3 2\n255\n".to_vec();
        bytes.extend([0, 51, 102, 153, 204, 255]);
        let t: Tensor<f64> = parse_pgm(&bytes).unwrap();
        assert_eq!(t.shape(), &[2, 3, 1, 1]);
        assert_eq!(t.data(), &[0.0, 0.2, 0.4, 0.6, 0.8, 1.0]);
        assert_eq!(encode_pgm(&t).unwrap()[11..], bytes[26..]);
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.pgm");
        let t = Tensor::<f32>::from_fn(Dims::new(4, 5, 1, 1), |i| i as f32 / 255.0);
        write_pgm(&p, &t).unwrap();
        assert_eq!(read_pgm::<f32>(&p).unwrap(), t);
    }

    #[test]
    fn rejects_malformed_files() {
        assert!(parse_pgm::<f32>(b"P2\n1 1\n255\n\x00").is_err());
        assert!(parse_pgm::<f32>(b"P5\n2 2\n255\n\x00\x00").is_err());
        assert!(parse_pgm::<f32>(b"P5\n1 1\n65535\n\x00\x00").is_err());
        assert!(parse_pgm::<f32>(b"P5\n1 1\n10\n\x0b").is_err());
        assert!(parse_pgm::<f32>(b"P5\n0 1\n255\n").is_err());
        assert!(parse_pgm::<f32>(b"P5\n99999999999999999999999 1\n255\n").is_err());
    }
}
