//! Binary tensor container.
//!
//! Layout:
//!
//! ```text
//! b"TAMT0001"                 8-byte magic
//! u32 little-endian           header length in bytes
//! UTF-8 JSON header           {"dtype": "f32" | "complex64", "shape": [...], "meta": {...}}
//! payload                     row-major little-endian f32; complex values as (re, im) pairs
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array2, Array3, ArrayD, IxDyn};
use num_complex::{Complex32, Complex64};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{CqtSpectrogram, EmbeddingField, GridConfig, Pianoroll};

pub const MAGIC: &[u8; 8] = b"TAMT0001";

pub type Meta = BTreeMap<String, serde_json::Value>;

#[derive(Debug, Clone, PartialEq)]
pub enum Tensor {
    Real(ArrayD<f32>),
    Complex(ArrayD<Complex32>),
}

impl Tensor {
    pub fn shape(&self) -> &[usize] {
        match self {
            Tensor::Real(a) => a.shape(),
            Tensor::Complex(a) => a.shape(),
        }
    }

    pub fn dtype(&self) -> &'static str {
        match self {
            Tensor::Real(_) => "f32",
            Tensor::Complex(_) => "complex64",
        }
    }

    fn is_finite(&self) -> bool {
        match self {
            Tensor::Real(a) => a.iter().all(|v| v.is_finite()),
            Tensor::Complex(a) => a.iter().all(|c| c.re.is_finite() && c.im.is_finite()),
        }
    }

    pub fn from_real(a: &ArrayD<f64>) -> Self {
        Tensor::Real(a.mapv(|v| v as f32))
    }

    pub fn from_complex(a: &ArrayD<Complex64>) -> Self {
        Tensor::Complex(a.mapv(|c| Complex32::new(c.re as f32, c.im as f32)))
    }

    pub fn to_real(&self) -> Result<ArrayD<f64>> {
        match self {
            Tensor::Real(a) => Ok(a.mapv(f64::from)),
            Tensor::Complex(_) => Err(Error::Header("expected real tensor, found complex64".into())),
        }
    }

    pub fn to_complex(&self) -> Result<ArrayD<Complex64>> {
        match self {
            Tensor::Complex(a) => Ok(a.mapv(|c| Complex64::new(c.re as f64, c.im as f64))),
            Tensor::Real(_) => Err(Error::Header("expected complex64 tensor, found f32".into())),
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    dtype: String,
    shape: Vec<usize>,
    #[serde(default)]
    meta: Meta,
}

pub fn encode_tensor<W: Write>(mut w: W, tensor: &Tensor, meta: &Meta) -> Result<()> {
    if !tensor.is_finite() {
        return Err(Error::NonFinite);
    }
    let header = Header { dtype: tensor.dtype().to_string(), shape: tensor.shape().to_vec(), meta: meta.clone() };
    let json = serde_json::to_vec(&header)?;
    let len = u32::try_from(json.len()).map_err(|_| Error::Header("header exceeds 4 GiB".into()))?;
    w.write_all(MAGIC)?;
    w.write_all(&len.to_le_bytes())?;
    w.write_all(&json)?;
    let mut payload = Vec::new();
    match tensor {
        Tensor::Real(a) => {
            payload.reserve(a.len() * 4);
            for v in a.iter() {
                payload.extend_from_slice(&v.to_le_bytes());
            }
        }
        Tensor::Complex(a) => {
            payload.reserve(a.len() * 8);
            for c in a.iter() {
                payload.extend_from_slice(&c.re.to_le_bytes());
                payload.extend_from_slice(&c.im.to_le_bytes());
            }
        }
    }
    w.write_all(&payload)?;
    Ok(())
}

pub fn decode_tensor(bytes: &[u8]) -> Result<(Tensor, Meta)> {
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(Error::BadMagic);
    }
    let rest = &bytes[MAGIC.len()..];
    if rest.len() < 4 {
        return Err(Error::Truncated("header length"));
    }
    let len = u32::from_le_bytes(rest[..4].try_into().unwrap()) as usize;
    let rest = &rest[4..];
    if rest.len() < len {
        return Err(Error::Truncated("header"));
    }
    let header: Header = serde_json::from_slice(&rest[..len]).map_err(|e| Error::Header(e.to_string()))?;
    let payload = &rest[len..];
    let count: usize = header.shape.iter().product();
    let width = match header.dtype.as_str() {
        "f32" => 4,
        "complex64" => 8,
        other => return Err(Error::Header(format!("unknown dtype {other:?}"))),
    };
    let expected = count * width;
    if payload.len() < expected {
        return Err(Error::Truncated("payload"));
    }
    if payload.len() != expected {
        return Err(Error::ShapePayloadMismatch { expected, found: payload.len() });
    }
    let floats: Vec<f32> =
        payload.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap())).collect();
    let shape = IxDyn(&header.shape);
    let tensor = if width == 4 {
        Tensor::Real(ArrayD::from_shape_vec(shape, floats).expect("length checked"))
    } else {
        let values = floats.chunks_exact(2).map(|p| Complex32::new(p[0], p[1])).collect();
        Tensor::Complex(ArrayD::from_shape_vec(shape, values).expect("length checked"))
    };
    Ok((tensor, header.meta))
}

pub fn write_tensor(path: impl AsRef<Path>, tensor: &Tensor, meta: &Meta) -> Result<()> {
    let mut buf = Vec::new();
    encode_tensor(&mut buf, tensor, meta)?;
    fs::write(path, buf)?;
    Ok(())
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<(Tensor, Meta)> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    decode_tensor(&bytes)
}

fn kind_meta(kind: &str, grid: Option<&GridConfig>) -> Meta {
    let mut meta = Meta::new();
    meta.insert("kind".into(), kind.into());
    if let Some(g) = grid {
        meta.insert("grid".into(), serde_json::to_value(g).expect("grid serializes"));
    }
    meta
}

fn meta_grid(meta: &Meta) -> Result<GridConfig> {
    match meta.get("grid") {
        Some(v) => serde_json::from_value(v.clone()).map_err(|e| Error::Header(format!("grid: {e}"))),
        None => Ok(GridConfig::default()),
    }
}

impl Pianoroll {
    /// Shape `[2, n_pitches, frames]`: channel 0 notes, channel 1 onsets.
    pub fn to_tensor(&self) -> (Tensor, Meta) {
        let (n, t) = self.notes.dim();
        let mut a = Array3::<f64>::zeros((2, n, t));
        a.index_axis_mut(ndarray::Axis(0), 0).assign(&self.notes);
        a.index_axis_mut(ndarray::Axis(0), 1).assign(&self.onsets);
        (Tensor::from_real(&a.into_dyn()), kind_meta("pianoroll", Some(&self.grid)))
    }

    pub fn from_tensor(tensor: &Tensor, meta: &Meta) -> Result<Self> {
        let a = tensor.to_real()?;
        let a = a
            .into_dimensionality::<ndarray::Ix3>()
            .map_err(|_| Error::shape("pianoroll tensor must be [2, N, T]"))?;
        if a.dim().0 != 2 {
            return Err(Error::shape("pianoroll tensor must be [2, N, T]"));
        }
        let notes = a.index_axis(ndarray::Axis(0), 0).to_owned();
        let onsets = a.index_axis(ndarray::Axis(0), 1).to_owned();
        Pianoroll::new(notes, onsets, meta_grid(meta)?)
    }
}

impl CqtSpectrogram {
    pub fn to_tensor(&self) -> (Tensor, Meta) {
        (Tensor::from_complex(&self.data.clone().into_dyn()), kind_meta("cqt", Some(&self.grid)))
    }

    pub fn from_tensor(tensor: &Tensor, meta: &Meta) -> Result<Self> {
        let data = tensor
            .to_complex()?
            .into_dimensionality::<ndarray::Ix2>()
            .map_err(|_| Error::shape("spectrogram tensor must be 2-D"))?;
        Ok(CqtSpectrogram { data, grid: meta_grid(meta)? })
    }
}

impl EmbeddingField {
    pub fn to_tensor(&self) -> (Tensor, Meta) {
        (Tensor::from_real(&self.data.clone().into_dyn()), kind_meta("embedding", None))
    }
}

/// Real matrix with a `kind` tag, used for memory matrices and similar.
pub fn matrix_tensor(m: &Array2<f64>, kind: &str) -> (Tensor, Meta) {
    (Tensor::from_real(&m.clone().into_dyn()), kind_meta(kind, None))
}
