//! Model persistence.
//!
//! Layout, little-endian throughout:
//!
//! ```text
//! "VCNN"  u32 version  u32 spec_len  spec JSON
//! u32 blob_count
//!   per blob: u32 layer  u8 role (0 weights, 1 bias)  u8 dtype (0 f32, 1 f64)
//!             u8 ndim  u64 extent * ndim  raw values
//! u32 CRC-32 of every preceding byte
//! ```

use std::path::Path;

use super::{read_file, write_atomic};
use crate::error::{Error, Result};
use crate::network::{Layer, Network, NetworkSpec};
use crate::tensor::{DType, Scalar};

pub const MAGIC: &[u8; 4] = b"VCNN";
pub const VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Role {
    Weights,
    Bias,
}

/// One parameter array, stored as raw little-endian values.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamBlob {
    pub layer: u32,
    pub role: Role,
    pub dtype: DType,
    pub shape: Vec<usize>,
    pub bytes: Vec<u8>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelFile {
    pub version: u32,
    pub spec: NetworkSpec,
    pub blobs: Vec<ParamBlob>,
}

fn param_shapes<T: Scalar>(layer: &Layer<T>) -> [Vec<usize>; 2] {
    match layer {
        Layer::Conv(l) => [l.weights.shape().to_vec(), vec![l.bias.len()]],
        Layer::Full(l) => [l.weights.shape().to_vec(), vec![l.bias.len()]],
        Layer::Pool(l) => [vec![0], vec![l.bias.as_ref().map_or(0, Vec::len)]],
    }
}

fn parse_err(offset: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        what: "model file",
        offset,
        msg: msg.into(),
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(parse_err(
                self.pos,
                format!("truncated {what}: need {n} bytes, {} left", self.bytes.len() - self.pos),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }
}

impl ModelFile {
    pub fn from_network<T: Scalar>(net: &Network<T>) -> Self {
        let mut blobs = Vec::new();
        for (i, layer) in net.layers.iter().enumerate() {
            let (w, b) = layer.params();
            let [ws, bs] = param_shapes(layer);
            for (role, values, shape) in [(Role::Weights, w, ws), (Role::Bias, b, bs)] {
                if values.is_empty() {
                    continue;
                }
                let mut bytes = Vec::with_capacity(values.len() * T::DTYPE.byte_width());
                for &v in values {
                    v.write_le(&mut bytes);
                }
                blobs.push(ParamBlob {
                    layer: i as u32,
                    role,
                    dtype: T::DTYPE,
                    shape,
                    bytes,
                });
            }
        }
        ModelFile {
            version: VERSION,
            spec: net.spec.clone(),
            blobs,
        }
    }

    /// Precision of the stored parameters (`None` for a parameterless model).
    pub fn dtype(&self) -> Option<DType> {
        self.blobs.first().map(|b| b.dtype)
    }

    /// Rebuilds the network; the stored dtype must be `T`.
    pub fn to_network<T: Scalar>(&self) -> Result<Network<T>> {
        let mut net = Network::<T>::build(&self.spec)?;
        let mut expected = Vec::new();
        for (i, layer) in net.layers.iter().enumerate() {
            let (w, b) = layer.params();
            let [ws, bs] = param_shapes(layer);
            if !w.is_empty() {
                expected.push((i as u32, Role::Weights, ws));
            }
            if !b.is_empty() {
                expected.push((i as u32, Role::Bias, bs));
            }
        }
        if expected.len() != self.blobs.len() {
            return Err(Error::Config(format!(
                "model holds {} parameter blobs, its spec needs {}",
                self.blobs.len(),
                expected.len()
            )));
        }
        for (blob, (layer, role, shape)) in self.blobs.iter().zip(expected) {
            if blob.dtype != T::DTYPE {
                return Err(Error::Config(format!(
                    "model stores {} parameters, {} requested",
                    blob.dtype.name(),
                    T::DTYPE.name()
                )));
            }
            if blob.layer != layer || blob.role != role || blob.shape != shape {
                return Err(Error::Config(format!(
                    "blob for layer {} {:?} {:?} does not match the spec (layer {layer} {role:?} {shape:?})",
                    blob.layer, blob.role, blob.shape
                )));
            }
            let (w, b) = net.layers[layer as usize].params_mut();
            let dst = match role {
                Role::Weights => w,
                Role::Bias => b,
            };
            for (d, chunk) in dst.iter_mut().zip(blob.bytes.chunks_exact(T::DTYPE.byte_width())) {
                *d = T::read_le(chunk);
            }
        }
        Ok(net)
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let spec = serde_json::to_vec(&self.spec).map_err(|e| Error::Config(format!("spec json: {e}")))?;
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&self.version.to_le_bytes());
        out.extend_from_slice(&(spec.len() as u32).to_le_bytes());
        out.extend_from_slice(&spec);
        out.extend_from_slice(&(self.blobs.len() as u32).to_le_bytes());
        for b in &self.blobs {
            out.extend_from_slice(&b.layer.to_le_bytes());
            out.push(match b.role {
                Role::Weights => 0,
                Role::Bias => 1,
            });
            out.push(match b.dtype {
                DType::F32 => 0,
                DType::F64 => 1,
            });
            out.push(b.shape.len() as u8);
            for &e in &b.shape {
                out.extend_from_slice(&(e as u64).to_le_bytes());
            }
            out.extend_from_slice(&b.bytes);
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 4 || &bytes[..4] != MAGIC {
            return Err(parse_err(0, "bad magic (expected VCNN)"));
        }
        if bytes.len() < 12 {
            return Err(parse_err(bytes.len(), "truncated header"));
        }
        let body = &bytes[..bytes.len() - 4];
        let stored = u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().expect("4 bytes"));
        let actual = crc32fast::hash(body);
        if stored != actual {
            return Err(parse_err(
                body.len(),
                format!("checksum mismatch: stored {stored:08x}, computed {actual:08x}"),
            ));
        }
        let mut r = Reader { bytes: body, pos: 4 };
        let version = r.u32("version")?;
        if version != VERSION {
            return Err(parse_err(4, format!("unsupported version {version}")));
        }
        let spec_len = r.u32("spec length")? as usize;
        let spec_at = r.pos;
        let spec: NetworkSpec = serde_json::from_slice(r.take(spec_len, "spec")?)
            .map_err(|e| parse_err(spec_at, format!("spec json: {e}")))?;
        let count = r.u32("blob count")? as usize;
        let mut blobs = Vec::new();
        for _ in 0..count {
            let at = r.pos;
            let layer = r.u32("blob layer")?;
            let role = match r.u8("blob role")? {
                0 => Role::Weights,
                1 => Role::Bias,
                x => return Err(parse_err(at + 4, format!("unknown role {x}"))),
            };
            let dtype = match r.u8("blob dtype")? {
                0 => DType::F32,
                1 => DType::F64,
                x => return Err(parse_err(at + 5, format!("unknown dtype {x}"))),
            };
            let ndim = r.u8("blob rank")? as usize;
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                let e = r.u64("blob extent")?;
                shape.push(usize::try_from(e).map_err(|_| parse_err(r.pos - 8, format!("extent {e} too large")))?);
            }
            let len = shape
                .iter()
                .try_fold(dtype.byte_width(), |a, &e| a.checked_mul(e))
                .ok_or_else(|| parse_err(at, format!("blob shape {shape:?} overflows")))?;
            let bytes = r.take(len, "blob values")?.to_vec();
            blobs.push(ParamBlob {
                layer,
                role,
                dtype,
                shape,
                bytes,
            });
        }
        if r.pos != body.len() {
            return Err(parse_err(r.pos, format!("{} unexpected bytes before the checksum", body.len() - r.pos)));
        }
        Ok(ModelFile { version, spec, blobs })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.encode()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::decode(&read_file(path)?)
    }
}

pub fn save_model<T: Scalar>(net: &Network<T>, path: &Path) -> Result<()> {
    ModelFile::from_network(net).save(path)
}

pub fn load_model<T: Scalar>(path: &Path) -> Result<Network<T>> {
    ModelFile::load(path)?.to_network()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let net = Network::<f64>::build(&NetworkSpec::preset("scale1-analog").unwrap()).unwrap();
        let bytes = ModelFile::from_network(&net).encode().unwrap();
        assert_eq!(&bytes[..4], b"VCNN");
        assert_eq!(&bytes[4..8], &1u32.to_le_bytes());
        let back: Network<f64> = ModelFile::decode(&bytes).unwrap().to_network().unwrap();
        let bits = |n: &Network<f64>| n.flat_params().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&back), bits(&net));
        assert_eq!(back, net);
    }

    #[test]
    fn checksum_catches_a_flipped_bit() {
        let net = Network::<f32>::build(&NetworkSpec::denoise(16, 16)).unwrap();
        let mut bytes = ModelFile::from_network(&net).encode().unwrap();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 1;
        assert!(matches!(ModelFile::decode(&bytes), Err(Error::Parse { .. })));
    }

    #[test]
    fn dtype_mismatch_is_reported() {
        let net = Network::<f32>::build(&NetworkSpec::denoise(16, 16)).unwrap();
        let m = ModelFile::from_network(&net);
        assert_eq!(m.dtype(), Some(DType::F32));
        assert!(m.to_network::<f64>().is_err());
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.vcnn");
        let net = Network::<f32>::build(&NetworkSpec::preset("scale2-mini").unwrap()).unwrap();
        save_model(&net, &p).unwrap();
        assert_eq!(load_model::<f32>(&p).unwrap(), net);
    }
}
