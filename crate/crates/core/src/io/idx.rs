//! IDX files: big-endian, unsigned-byte payload, one (labels) or three
//! (images) dimensions.

use std::path::Path;

use super::{read_file, write_atomic, Dataset, Labels};
use crate::error::{Error, Result};
use crate::tensor::{Dims, Scalar};

pub const MAGIC_LABELS: u32 = 0x0000_0801;
pub const MAGIC_IMAGES: u32 = 0x0000_0803;

/// Raw IDX content.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IdxArray {
    pub dims: Vec<usize>,
    pub data: Vec<u8>,
}

fn parse_err(offset: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        what: "idx",
        offset,
        msg: msg.into(),
    }
}

pub fn parse_idx(bytes: &[u8]) -> Result<IdxArray> {
    if bytes.len() < 4 {
        return Err(parse_err(bytes.len(), format!("truncated magic: {} of 4 bytes", bytes.len())));
    }
    let magic = u32::from_be_bytes(bytes[..4].try_into().expect("4 bytes"));
    let ndim = match magic {
        MAGIC_LABELS => 1,
        MAGIC_IMAGES => 3,
        other => return Err(parse_err(0, format!("bad magic 0x{other:08x} (expected 0x00000801 or 0x00000803)"))),
    };
    let header = 4 + 4 * ndim;
    if bytes.len() < header {
        return Err(parse_err(
            bytes.len(),
            format!("truncated header: expected {header} bytes, found {}", bytes.len()),
        ));
    }
    let mut dims = Vec::with_capacity(ndim);
    let mut total: usize = 1;
    for i in 0..ndim {
        let at = 4 + 4 * i;
        let d = u32::from_be_bytes(bytes[at..at + 4].try_into().expect("4 bytes")) as usize;
        total = total
            .checked_mul(d)
            .ok_or_else(|| parse_err(at, format!("dimension {i} ({d}) overflows the payload size")))?;
        dims.push(d);
    }
    if ndim == 3 && dims[0] > 0 && (dims[1] == 0 || dims[2] == 0) {
        return Err(parse_err(8, format!("zero image extent in {:?}", dims)));
    }
    let payload = bytes.len() - header;
    if payload != total {
        let kind = if payload < total { "truncated payload" } else { "trailing bytes after payload" };
        return Err(parse_err(
            header + payload.min(total),
            format!("{kind}: expected {total} payload bytes, found {payload}"),
        ));
    }
    Ok(IdxArray {
        dims,
        data: bytes[header..].to_vec(),
    })
}

pub fn encode_idx(arr: &IdxArray) -> Result<Vec<u8>> {
    let magic = match arr.dims.len() {
        1 => MAGIC_LABELS,
        3 => MAGIC_IMAGES,
        n => return Err(Error::Config(format!("idx supports 1 or 3 dimensions, got {n}"))),
    };
    let total = arr.dims.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
    if total != Some(arr.data.len()) {
        return Err(Error::shape("idx payload", &arr.dims, &[arr.data.len()]));
    }
    let mut out = Vec::with_capacity(4 + 4 * arr.dims.len() + arr.data.len());
    out.extend_from_slice(&magic.to_be_bytes());
    for &d in &arr.dims {
        let d = u32::try_from(d).map_err(|_| Error::Config(format!("idx dimension {d} exceeds u32")))?;
        out.extend_from_slice(&d.to_be_bytes());
    }
    out.extend_from_slice(&arr.data);
    Ok(out)
}

pub fn read_idx(path: &Path) -> Result<IdxArray> {
    parse_idx(&read_file(path)?)
}

pub fn write_idx(path: &Path, arr: &IdxArray) -> Result<()> {
    write_atomic(path, &encode_idx(arr)?)
}

/// Reads one IDX file. Image files yield unlabeled samples (every label
/// 0); label files yield a dataset of 1x1 zero images.
pub fn load_idx<T: Scalar>(path: &Path) -> Result<Dataset<T>> {
    let arr = read_idx(path)?;
    let split = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    match arr.dims.len() {
        3 => {
            let n = arr.dims[0];
            Dataset::new(images_dims(&arr), scale(&arr.data), Labels::Classes(vec![0; n]), split)
        }
        _ => {
            let n = arr.dims[0];
            Dataset::new(Dims::new(1, 1, 1, 1), vec![T::zero(); n], labels_of(&arr), split)
        }
    }
}

/// Images file plus labels file, checked for matching counts.
pub fn load_idx_dataset<T: Scalar>(images: &Path, labels: &Path, split: &str) -> Result<Dataset<T>> {
    let img = read_idx(images)?;
    let lab = read_idx(labels)?;
    if img.dims.len() != 3 {
        return Err(Error::Config(format!("{} is not an image file", images.display())));
    }
    if lab.dims.len() != 1 {
        return Err(Error::Config(format!("{} is not a label file", labels.display())));
    }
    if img.dims[0] != lab.dims[0] {
        return Err(Error::Config(format!(
            "{} holds {} images but {} holds {} labels",
            images.display(),
            img.dims[0],
            labels.display(),
            lab.dims[0]
        )));
    }
    Dataset::new(images_dims(&img), scale(&img.data), labels_of(&lab), split)
}

fn images_dims(arr: &IdxArray) -> Dims {
    Dims::new(arr.dims[1].max(1), arr.dims[2].max(1), 1, 1)
}

fn scale<T: Scalar>(bytes: &[u8]) -> Vec<T> {
    bytes.iter().map(|&b| T::from_f64(b as f64 / 255.0)).collect()
}

fn labels_of<T>(arr: &IdxArray) -> Labels<T> {
    Labels::Classes(arr.data.iter().map(|&b| b as usize).collect())
}

/// Pixels in `[0, 1]` back to bytes, rounding to nearest.
pub fn quantize<T: Scalar>(pixels: &[T]) -> Vec<u8> {
    pixels
        .iter()
        .map(|v| (v.as_f64().clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn images(n: usize, h: usize, w: usize) -> IdxArray {
        IdxArray {
            dims: vec![n, h, w],
            data: (0..n * h * w).map(|i| (i * 37 % 256) as u8).collect(),
        }
    }

    #[test]
    fn header_layout_is_big_endian() {
        let bytes = encode_idx(&images(2, 3, 4)).unwrap();
        assert_eq!(&bytes[..16], &[0, 0, 8, 3, 0, 0, 0, 2, 0, 0, 0, 3, 0, 0, 0, 4]);
        assert_eq!(parse_idx(&bytes).unwrap(), images(2, 3, 4));
    }

    #[test]
    fn zero_items_is_an_empty_dataset() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("empty-images");
        write_idx(&p, &images(0, 28, 28)).unwrap();
        let d: Dataset<f32> = load_idx(&p).unwrap();
        assert!(d.is_empty());
        assert_eq!(d.sample, Dims::new(28, 28, 1, 1));
    }

    #[test]
    fn two_images_round_trip_with_unit_scaling() {
        let dir = tempfile::tempdir().unwrap();
        let (pi, pl) = (dir.path().join("i"), dir.path().join("l"));
        let arr = images(2, 5, 5);
        write_idx(&pi, &arr).unwrap();
        write_idx(&pl, &IdxArray { dims: vec![2], data: vec![7, 3] }).unwrap();
        let d: Dataset<f64> = load_idx_dataset(&pi, &pl, "train").unwrap();
        assert_eq!(d.labels, Labels::Classes(vec![7, 3]));
        for (v, &b) in d.pixels.iter().zip(&arr.data) {
            assert_eq!(*v, b as f64 / 255.0);
        }
        assert_eq!(quantize(&d.pixels), arr.data);
    }

    #[test]
    fn truncated_payload_names_both_counts() {
        let mut bytes = encode_idx(&images(2, 3, 3)).unwrap();
        bytes.truncate(bytes.len() - 5);
        let msg = parse_idx(&bytes).unwrap_err().to_string();
        assert!(msg.contains("expected 18") && msg.contains("found 13"), "{msg}");
    }

    #[test]
    fn bad_magic_reports_offset_zero() {
        let mut bytes = encode_idx(&images(1, 2, 2)).unwrap();
        bytes[2] = 9;
        match parse_idx(&bytes).unwrap_err() {
            Error::Parse { offset, .. } => assert_eq!(offset, 0),
            e => panic!("{e}"),
        }
    }

    #[test]
    fn overflowing_dimensions_are_rejected() {
        let mut bytes = vec![0, 0, 8, 3];
        for _ in 0..3 {
            bytes.extend_from_slice(&u32::MAX.to_be_bytes());
        }
        let e = parse_idx(&bytes).unwrap_err();
        assert!(matches!(e, Error::Parse { .. }), "{e}");
    }

    #[test]
    fn mismatched_counts_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let (pi, pl) = (dir.path().join("i"), dir.path().join("l"));
        write_idx(&pi, &images(2, 2, 2)).unwrap();
        write_idx(&pl, &IdxArray { dims: vec![3], data: vec![0, 1, 2] }).unwrap();
        assert!(load_idx_dataset::<f32>(&pi, &pl, "x").is_err());
    }
}
