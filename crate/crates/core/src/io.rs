//! Binary containers for fields, models and measurements.
//!
//! All three share one layout: an 8-byte magic, a little-endian `u32`
//! header length, a UTF-8 JSON header, then a little-endian raster.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::denoise::{AdamState, ModelMeta, NeuralDenoiser, HIDDEN_CHANNELS};
use crate::error::{Error, Result};
use crate::forward::{check_measurement, Measurement, MeasurementMeta};
use crate::grid::{check_nonnegative, Dims, Grid, Shape};
use crate::latent::{default_eps, ScaleSpec};

pub const FIELD_MAGIC: &[u8; 8] = b"NNDF0001";
pub const MODEL_MAGIC: &[u8; 8] = b"NNDM0001";
pub const MEASUREMENT_MAGIC: &[u8; 8] = b"NNDY0001";

/// Refuse headers larger than this when reading.
const MAX_HEADER: usize = 1 << 26;

fn pack(magic: &[u8; 8], header: &[u8], payload: &[u8]) -> Result<Vec<u8>> {
    let len = u32::try_from(header.len())
        .map_err(|_| Error::Format("header does not fit a u32 length".into()))?;
    let mut out = Vec::with_capacity(12 + header.len() + payload.len());
    out.extend_from_slice(magic);
    out.extend_from_slice(&len.to_le_bytes());
    out.extend_from_slice(header);
    out.extend_from_slice(payload);
    Ok(out)
}

fn unpack<'a>(magic: &[u8; 8], bytes: &'a [u8]) -> Result<(&'a [u8], &'a [u8])> {
    if bytes.len() < 12 || &bytes[..8] != magic {
        return Err(Error::Format(format!(
            "missing {} magic",
            String::from_utf8_lossy(magic)
        )));
    }
    let len = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    if len > MAX_HEADER || 12 + len > bytes.len() {
        return Err(Error::Format(format!("header length {len} exceeds file size")));
    }
    Ok((&bytes[12..12 + len], &bytes[12 + len..]))
}

fn f64s_to_le(values: &[f64], out: &mut Vec<u8>) {
    out.reserve(values.len() * 8);
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

fn le_to_f64s(bytes: &[u8]) -> Vec<f64> {
    bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect()
}

/// Whether a stored grid holds physical values or latents.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    #[default]
    Field,
    Latent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NndfHeader {
    pub dims: [usize; 3],
    pub channels: Vec<String>,
    pub dtype: String,
    pub order: String,
    pub scale: ScaleSpec,
    pub eps: f64,
    #[serde(default)]
    pub domain: Domain,
}

/// Metadata carried alongside a stored grid.
#[derive(Debug, Clone, PartialEq)]
pub struct NndfMeta {
    pub scale: ScaleSpec,
    pub eps: f64,
    pub domain: Domain,
}

impl NndfMeta {
    pub fn field(channels: &[String]) -> Self {
        Self {
            scale: ScaleSpec::identity(channels),
            eps: default_eps(),
            domain: Domain::Field,
        }
    }
}

/// Encodes a grid as 32-bit floats. Values that do not fit an `f32` are an error.
pub fn encode_nndf(grid: &Grid, meta: &NndfMeta) -> Result<Vec<u8>> {
    let shape = grid.shape();
    let header = NndfHeader {
        dims: shape.dims.as_array(),
        channels: shape.channels.clone(),
        dtype: "f32le".into(),
        order: "zyxc".into(),
        scale: meta.scale.clone(),
        eps: meta.eps,
        domain: meta.domain,
    };
    let mut raster = Vec::with_capacity(grid.len() * 4);
    for (index, &v) in grid.values().iter().enumerate() {
        let f = v as f32;
        if !f.is_finite() {
            return Err(Error::Numerical(format!(
                "value {v} at flat index {index} does not fit an f32"
            )));
        }
        raster.extend_from_slice(&f.to_le_bytes());
    }
    pack(FIELD_MAGIC, &serde_json::to_vec(&header)?, &raster)
}

pub fn decode_nndf(bytes: &[u8]) -> Result<(Grid, NndfMeta)> {
    let (header, raster) = unpack(FIELD_MAGIC, bytes)?;
    let h: NndfHeader = serde_json::from_slice(header)
        .map_err(|e| Error::Format(format!("bad NNDF header: {e}")))?;
    if h.dtype != "f32le" || h.order != "zyxc" {
        return Err(Error::Format(format!(
            "unsupported layout dtype={} order={}",
            h.dtype, h.order
        )));
    }
    let [nz, ny, nx] = h.dims;
    let shape = Shape::new(Dims::new(nz, ny, nx), h.channels)?;
    if raster.len() != shape.len() * 4 {
        return Err(Error::Format(format!(
            "raster has {} bytes, header implies {}",
            raster.len(),
            shape.len() * 4
        )));
    }
    let values: Vec<f64> = raster
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
        .collect();
    if h.domain == Domain::Field {
        check_nonnegative(&values)?;
    }
    let grid = Grid::new(shape, values)?;
    grid.ensure_finite()?;
    Ok((
        grid,
        NndfMeta {
            scale: h.scale,
            eps: h.eps,
            domain: h.domain,
        },
    ))
}

pub fn write_nndf(path: impl AsRef<Path>, grid: &Grid, meta: &NndfMeta) -> Result<()> {
    fs::write(path, encode_nndf(grid, meta)?)?;
    Ok(())
}

pub fn read_nndf(path: impl AsRef<Path>) -> Result<(Grid, NndfMeta)> {
    decode_nndf(&fs::read(path)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ModelHeader {
    architecture: String,
    hidden_channels: usize,
    param_count: usize,
    step: u64,
    meta: ModelMeta,
}

/// Parameters, then Adam first and second moments, all as `f64`.
pub fn encode_model(net: &NeuralDenoiser) -> Result<Vec<u8>> {
    let header = ModelHeader {
        architecture: crate::denoise::ARCHITECTURE.into(),
        hidden_channels: HIDDEN_CHANNELS,
        param_count: net.params().len(),
        step: net.adam().step,
        meta: net.meta().clone(),
    };
    let mut payload = Vec::new();
    f64s_to_le(net.params(), &mut payload);
    f64s_to_le(&net.adam().m, &mut payload);
    f64s_to_le(&net.adam().v, &mut payload);
    pack(MODEL_MAGIC, &serde_json::to_vec(&header)?, &payload)
}

pub fn decode_model(bytes: &[u8]) -> Result<NeuralDenoiser> {
    let (header, payload) = unpack(MODEL_MAGIC, bytes)?;
    let h: ModelHeader = serde_json::from_slice(header)
        .map_err(|e| Error::Format(format!("bad model header: {e}")))?;
    if h.architecture != crate::denoise::ARCHITECTURE || h.hidden_channels != HIDDEN_CHANNELS {
        return Err(Error::Format(format!(
            "unsupported architecture {} with {} hidden channels",
            h.architecture, h.hidden_channels
        )));
    }
    let n = h.param_count;
    if payload.len() != 3 * n * 8 {
        return Err(Error::Format(format!(
            "model payload has {} bytes, expected {}",
            payload.len(),
            3 * n * 8
        )));
    }
    let params = le_to_f64s(&payload[..8 * n]);
    let m = le_to_f64s(&payload[8 * n..16 * n]);
    let v = le_to_f64s(&payload[16 * n..]);
    NeuralDenoiser::from_parts(h.meta, params, AdamState { step: h.step, m, v })
}

pub fn write_model(path: impl AsRef<Path>, net: &NeuralDenoiser) -> Result<()> {
    fs::write(path, encode_model(net)?)?;
    Ok(())
}

pub fn read_model(path: impl AsRef<Path>) -> Result<NeuralDenoiser> {
    decode_model(&fs::read(path)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct MeasurementHeader {
    /// Shape of the unknown field the data were taken of.
    dims: [usize; 3],
    channels: Vec<String>,
    len: usize,
    meta: MeasurementMeta,
}

pub fn encode_measurement(shape: &Shape, m: &Measurement) -> Result<Vec<u8>> {
    let header = MeasurementHeader {
        dims: shape.dims.as_array(),
        channels: shape.channels.clone(),
        len: m.values.len(),
        meta: m.meta.clone(),
    };
    let mut payload = Vec::new();
    f64s_to_le(&m.values, &mut payload);
    pack(MEASUREMENT_MAGIC, &serde_json::to_vec(&header)?, &payload)
}

pub fn decode_measurement(bytes: &[u8]) -> Result<(Shape, Measurement)> {
    let (header, payload) = unpack(MEASUREMENT_MAGIC, bytes)?;
    let h: MeasurementHeader = serde_json::from_slice(header)
        .map_err(|e| Error::Format(format!("bad measurement header: {e}")))?;
    if payload.len() != h.len * 8 {
        return Err(Error::Format(format!(
            "measurement payload has {} bytes, expected {}",
            payload.len(),
            h.len * 8
        )));
    }
    let [nz, ny, nx] = h.dims;
    let shape = Shape::new(Dims::new(nz, ny, nx), h.channels)?;
    let values = le_to_f64s(payload);
    check_measurement(&values)?;
    Ok((shape, Measurement { meta: h.meta, values }))
}

pub fn write_measurement(path: impl AsRef<Path>, shape: &Shape, m: &Measurement) -> Result<()> {
    fs::write(path, encode_measurement(shape, m)?)?;
    Ok(())
}

pub fn read_measurement(path: impl AsRef<Path>) -> Result<(Shape, Measurement)> {
    decode_measurement(&fs::read(path)?)
}

/// One `index,value` row per datum.
pub fn measurement_csv(m: &Measurement) -> String {
    let mut s = String::from("index,value\n");
    for (i, v) in m.values.iter().enumerate() {
        s.push_str(&format!("{i},{v:e}\n"));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forward::{ForwardModelSpec, NoiseModel};

    fn sample_grid() -> Grid {
        let shape = Shape::new(Dims::new(2, 3, 4), vec!["a".into(), "b".into()]).unwrap();
        let values = (0..shape.len()).map(|i| (i as f64 * 0.37).sin().abs() * 10.0).collect();
        Grid::new(shape, values).unwrap()
    }

    #[test]
    fn nndf_layout() {
        let g = sample_grid();
        let bytes = encode_nndf(&g, &NndfMeta::field(&g.shape().channels)).unwrap();
        assert_eq!(&bytes[..8], b"NNDF0001");
        let hl = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let header: serde_json::Value = serde_json::from_slice(&bytes[12..12 + hl]).unwrap();
        assert_eq!(header["dims"], serde_json::json!([2, 3, 4]));
        assert_eq!(header["order"], "zyxc");
        assert_eq!(header["dtype"], "f32le");
        assert_eq!(bytes.len(), 12 + hl + 4 * g.len());
        // Second raster value is voxel (0,0,0) channel b.
        let v1 = f32::from_le_bytes(bytes[12 + hl + 4..12 + hl + 8].try_into().unwrap());
        assert_eq!(v1, g.values()[1] as f32);
    }

    #[test]
    fn nndf_round_trip_is_bit_exact() {
        let g = sample_grid();
        let meta = NndfMeta::field(&g.shape().channels);
        let first = encode_nndf(&g, &meta).unwrap();
        let (back, meta_back) = decode_nndf(&first).unwrap();
        assert_eq!(meta_back, meta);
        assert_eq!(encode_nndf(&back, &meta_back).unwrap(), first);
    }

    #[test]
    fn nndf_rejects_corruption() {
        let g = sample_grid();
        let bytes = encode_nndf(&g, &NndfMeta::field(&g.shape().channels)).unwrap();
        assert!(decode_nndf(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode_nndf(&bad).is_err());
        assert!(decode_nndf(&bytes[..10]).is_err());
    }

    #[test]
    fn negative_field_rejected_but_latent_accepted() {
        let g = sample_grid().map(|v| v - 5.0);
        let mut meta = NndfMeta::field(&g.shape().channels);
        let bytes = encode_nndf(&g, &meta).unwrap();
        assert!(matches!(decode_nndf(&bytes), Err(Error::NegativeValue { .. })));
        meta.domain = Domain::Latent;
        let bytes = encode_nndf(&g, &meta).unwrap();
        assert!(decode_nndf(&bytes).is_ok());
    }

    #[test]
    fn f32_overflow_is_reported() {
        let g = sample_grid().map(|_| 1e300);
        let err = encode_nndf(&g, &NndfMeta::field(&g.shape().channels)).unwrap_err();
        assert!(err.is_numerical());
    }

    #[test]
    fn model_round_trip() {
        let meta = crate::denoise::neural_test_meta(&["v"], 4);
        let net = NeuralDenoiser::init(meta).unwrap();
        let back = decode_model(&encode_model(&net).unwrap()).unwrap();
        assert_eq!(back, net);
    }

    #[test]
    fn measurement_round_trip() {
        let shape = Shape::new(Dims::cube(2), vec!["v".into()]).unwrap();
        let m = Measurement {
            meta: MeasurementMeta {
                forward_model: ForwardModelSpec::Identity,
                seed: 3,
                y_min: 1e-3,
                noise: NoiseModel::Gaussian,
            },
            values: vec![1.5; 8],
        };
        let (s, back) = decode_measurement(&encode_measurement(&shape, &m).unwrap()).unwrap();
        assert_eq!(s, shape);
        assert_eq!(back, m);
        assert!(measurement_csv(&m).starts_with("index,value\n0,1.5e0\n"));
    }
}
