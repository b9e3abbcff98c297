//! Serialized model artifact and matrix encoding helpers.
//!
//! Matrices are stored as `{rows, cols, data}` where `data` is the base64 of
//! the row-major little-endian `f64` bytes, so values round-trip bit for bit.

use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::calibration::CalibrationResult;
use crate::encoder::{EncoderModel, PseudoLabelMode};
use crate::error::{Error, Result};
use crate::noise::NoiseMatrix;
use crate::objective::LossSpec;
use crate::propagation::PropagationConfig;

pub const FORMAT_VERSION: u32 = 1;

fn encode_f64s(values: impl Iterator<Item = f64>) -> String {
    use base64::Engine;
    let mut bytes = Vec::new();
    for v in values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    base64::engine::general_purpose::STANDARD.encode(bytes)
}

fn decode_f64s(data: &str, expected: usize) -> std::result::Result<Vec<f64>, String> {
    use base64::Engine;
    let bytes = base64::engine::general_purpose::STANDARD
        .decode(data)
        .map_err(|e| e.to_string())?;
    if bytes.len() != expected * 8 {
        return Err(format!("expected {} values, found {} bytes", expected, bytes.len()));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect())
}

pub mod matrix_serde {
    use nalgebra::DMatrix;
    use serde::{de, Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    struct Packed {
        rows: usize,
        cols: usize,
        data: String,
    }

    pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
        Packed {
            rows: m.nrows(),
            cols: m.ncols(),
            data: super::encode_f64s(m.transpose().iter().copied()),
        }
        .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DMatrix<f64>, D::Error> {
        let p = Packed::deserialize(d)?;
        let values = super::decode_f64s(&p.data, p.rows * p.cols).map_err(de::Error::custom)?;
        Ok(DMatrix::from_row_slice(p.rows, p.cols, &values))
    }
}

pub mod vector_serde {
    use nalgebra::DVector;
    use serde::{de, Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    struct Packed {
        len: usize,
        data: String,
    }

    pub fn serialize<S: Serializer>(v: &DVector<f64>, s: S) -> Result<S::Ok, S::Error> {
        Packed {
            len: v.len(),
            data: super::encode_f64s(v.iter().copied()),
        }
        .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DVector<f64>, D::Error> {
        let p = Packed::deserialize(d)?;
        let values = super::decode_f64s(&p.data, p.len).map_err(de::Error::custom)?;
        Ok(DVector::from_vec(values))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerSummary {
    pub iterations: usize,
    pub final_grad_norm: f64,
    pub final_value: f64,
    pub grad_tol: f64,
    pub max_iters: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerInfo {
    pub rng: String,
    pub normal: String,
    pub radius: String,
}

/// The released model plus everything needed to audit and reproduce it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelArtifact {
    pub format_version: u32,
    /// `d × c` with `d = s · d1`.
    #[serde(with = "matrix_serde")]
    pub theta: DMatrix<f64>,
    pub encoder: EncoderModel,
    pub calibration: CalibrationResult,
    pub propagation: PropagationConfig,
    pub clip: f64,
    pub loss: LossSpec,
    pub pseudo_label: PseudoLabelMode,
    pub n1: usize,
    pub seed: u64,
    pub encoder_seed: u64,
    pub noise: NoiseMatrix,
    pub sampler: SamplerInfo,
    pub optimizer: OptimizerSummary,
    /// Largest column-wise gap between the sampled noise and the noise implied
    /// by stationarity at `theta`.
    pub stationarity_residual: f64,
}

impl ModelArtifact {
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Artifact(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let a: ModelArtifact = serde_json::from_str(text).map_err(|e| Error::Artifact(e.to_string()))?;
        if a.format_version != FORMAT_VERSION {
            return Err(Error::Artifact(format!(
                "unsupported format version {} (expected {FORMAT_VERSION})",
                a.format_version
            )));
        }
        if a.theta.shape() != (a.encoder.output_dim() * a.propagation.blocks(), a.encoder.classes()) {
            return Err(Error::Artifact("theta shape does not match encoder and steps".into()));
        }
        Ok(a)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    /// SHA-256 of the serialized artifact.
    pub fn digest(&self) -> Result<String> {
        Ok(sha256_hex(self.to_json()?.as_bytes()))
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}
