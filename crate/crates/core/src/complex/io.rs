//! `hilbert-complex/v1` JSON container.
//!
//! Matrices are row-major little-endian `f64` payloads in base64. Matrices
//! with fewer than a quarter of their entries nonzero use the `coo` encoding
//! (flat row-major `u64` indices plus values); every other matrix is `dense`.
//! The checksum is the SHA-256 of the file serialised with an empty checksum.

use std::path::Path;
use std::sync::Arc;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::{ComplexError, ComplexLevel, ComplexPair};
use crate::linalg::{InnerProductSpace, Mat};

pub const COMPLEX_SCHEMA: &str = "hilbert-complex/v1";

#[derive(Debug, Error)]
pub enum IoError {
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("schema mismatch: expected {expected}, found {found}")]
    Schema { expected: String, found: String },
    #[error("checksum mismatch: stored {stored}, computed {computed}")]
    Checksum { stored: String, computed: String },
    #[error("matrix payload: {0}")]
    Payload(String),
    #[error(transparent)]
    Complex(#[from] ComplexError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatrixJson {
    pub rows: usize,
    pub cols: usize,
    pub encoding: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub index: Option<String>,
    pub data: String,
}

impl MatrixJson {
    pub fn encode(m: &Mat) -> Self {
        let (rows, cols) = (m.nrows(), m.ncols());
        let row_major = (0..rows).flat_map(|r| (0..cols).map(move |c| (r, c)));
        let nnz = m.iter().filter(|v| v.to_bits() != 0).count();
        if nnz * 4 < rows * cols {
            let mut index = Vec::with_capacity(nnz * 8);
            let mut data = Vec::with_capacity(nnz * 8);
            for (r, c) in row_major {
                let v = m[(r, c)];
                if v.to_bits() != 0 {
                    index.extend_from_slice(&((r * cols + c) as u64).to_le_bytes());
                    data.extend_from_slice(&v.to_le_bytes());
                }
            }
            Self {
                rows,
                cols,
                encoding: "coo".into(),
                index: Some(STANDARD.encode(index)),
                data: STANDARD.encode(data),
            }
        } else {
            let mut data = Vec::with_capacity(rows * cols * 8);
            for (r, c) in row_major {
                data.extend_from_slice(&m[(r, c)].to_le_bytes());
            }
            Self { rows, cols, encoding: "dense".into(), index: None, data: STANDARD.encode(data) }
        }
    }

    pub fn decode(&self) -> Result<Mat, IoError> {
        let bad = |m: &str| IoError::Payload(m.to_string());
        let data = STANDARD.decode(&self.data).map_err(|e| bad(&e.to_string()))?;
        if data.len() % 8 != 0 {
            return Err(bad("value payload is not a multiple of 8 bytes"));
        }
        let values: Vec<f64> = data
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let (rows, cols) = (self.rows, self.cols);
        match self.encoding.as_str() {
            "dense" => {
                if values.len() != rows * cols {
                    return Err(bad("dense payload length does not match dimensions"));
                }
                Ok(Mat::from_row_slice(rows, cols, &values))
            }
            "coo" => {
                let idx = self.index.as_ref().ok_or_else(|| bad("coo matrix without index"))?;
                let idx = STANDARD.decode(idx).map_err(|e| bad(&e.to_string()))?;
                if idx.len() != values.len() * 8 {
                    return Err(bad("coo index and value payloads differ in length"));
                }
                let mut m = Mat::zeros(rows, cols);
                for (c, v) in idx.chunks_exact(8).zip(values) {
                    let flat = u64::from_le_bytes(c.try_into().expect("8 bytes")) as usize;
                    if flat >= rows * cols {
                        return Err(bad("coo index out of range"));
                    }
                    m[(flat / cols, flat % cols)] = v;
                }
                Ok(m)
            }
            other => Err(bad(&format!("unknown encoding {other}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DimsJson {
    #[serde(rename = "W")]
    pub w: usize,
    #[serde(rename = "D")]
    pub d: usize,
    #[serde(rename = "Dt")]
    pub dt: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GramsJson {
    #[serde(rename = "W")]
    pub w: MatrixJson,
    #[serde(rename = "D")]
    pub d: MatrixJson,
    #[serde(rename = "Dt")]
    pub dt: MatrixJson,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LevelJson {
    pub k: i32,
    pub dims: DimsJson,
    pub grams: GramsJson,
    #[serde(rename = "inj_D")]
    pub inj_d: MatrixJson,
    #[serde(rename = "inj_Dt")]
    pub inj_dt: MatrixJson,
    #[serde(rename = "A")]
    pub a: MatrixJson,
    #[serde(rename = "At")]
    pub at: MatrixJson,
    #[serde(rename = "A_lift", default, skip_serializing_if = "Option::is_none")]
    pub a_lift: Option<MatrixJson>,
    #[serde(rename = "At_lift", default, skip_serializing_if = "Option::is_none")]
    pub at_lift: Option<MatrixJson>,
    #[serde(rename = "interior_D", default, skip_serializing_if = "Option::is_none")]
    pub interior_d: Option<Vec<usize>>,
    #[serde(rename = "interior_Dt", default, skip_serializing_if = "Option::is_none")]
    pub interior_dt: Option<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComplexJson {
    pub schema: String,
    pub label: String,
    pub k_min: i32,
    pub k_max: i32,
    #[serde(default)]
    pub meta: serde_json::Map<String, serde_json::Value>,
    pub levels: Vec<LevelJson>,
    #[serde(default)]
    pub checksum: String,
}

impl ComplexJson {
    pub fn from_pair(pair: &ComplexPair) -> Self {
        let levels = pair
            .levels()
            .iter()
            .map(|l| LevelJson {
                k: l.k,
                dims: DimsJson { w: l.w.dim(), d: l.d.dim(), dt: l.dt.dim() },
                grams: GramsJson {
                    w: MatrixJson::encode(l.w.gram()),
                    d: MatrixJson::encode(l.d.gram()),
                    dt: MatrixJson::encode(l.dt.gram()),
                },
                inj_d: MatrixJson::encode(&l.inj_d),
                inj_dt: MatrixJson::encode(&l.inj_dt),
                a: MatrixJson::encode(&l.a),
                at: MatrixJson::encode(&l.at),
                a_lift: l.a_lift.as_ref().map(MatrixJson::encode),
                at_lift: l.at_lift.as_ref().map(MatrixJson::encode),
                interior_d: l.interior_d.clone(),
                interior_dt: l.interior_dt.clone(),
            })
            .collect();
        let mut doc = Self {
            schema: COMPLEX_SCHEMA.into(),
            label: pair.label.clone(),
            k_min: pair.k_min(),
            k_max: pair.k_max(),
            meta: pair.meta.clone(),
            levels,
            checksum: String::new(),
        };
        doc.checksum = doc.compute_checksum();
        doc
    }

    pub fn compute_checksum(&self) -> String {
        let mut unsigned = self.clone();
        unsigned.checksum.clear();
        let bytes = serde_json::to_vec(&unsigned).expect("document serialises");
        let digest = Sha256::digest(&bytes);
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn into_pair(self) -> Result<ComplexPair, IoError> {
        if self.schema != COMPLEX_SCHEMA {
            return Err(IoError::Schema { expected: COMPLEX_SCHEMA.into(), found: self.schema });
        }
        let computed = self.compute_checksum();
        if computed != self.checksum {
            return Err(IoError::Checksum { stored: self.checksum, computed });
        }
        let n = self.levels.len() as i64;
        if self.k_max as i64 - self.k_min as i64 + 1 != n {
            return Err(ComplexError::Structure {
                k: self.k_min,
                field: "levels".into(),
                msg: format!("{n} levels for range {}..={}", self.k_min, self.k_max),
            }
            .into());
        }
        let mut levels = Vec::with_capacity(self.levels.len());
        for (i, l) in self.levels.into_iter().enumerate() {
            let k = l.k;
            if k != self.k_min + i as i32 {
                return Err(ComplexError::Structure {
                    k,
                    field: "k".into(),
                    msg: "levels are not contiguous from k_min".into(),
                }
                .into());
            }
            let space = |m: &MatrixJson, name: &'static str, dim: usize| {
                let g = m.decode()?;
                if g.nrows() != dim {
                    return Err(IoError::from(ComplexError::Structure {
                        k,
                        field: format!("grams.{name}"),
                        msg: format!("dimension {} != declared {dim}", g.nrows()),
                    }));
                }
                InnerProductSpace::new(g)
                    .map(Arc::new)
                    .map_err(|source| ComplexError::Gram { k, space: name, source }.into())
            };
            levels.push(ComplexLevel {
                k,
                w: space(&l.grams.w, "W", l.dims.w)?,
                d: space(&l.grams.d, "D", l.dims.d)?,
                dt: space(&l.grams.dt, "Dt", l.dims.dt)?,
                inj_d: l.inj_d.decode()?,
                inj_dt: l.inj_dt.decode()?,
                a: l.a.decode()?,
                at: l.at.decode()?,
                a_lift: l.a_lift.map(|m| m.decode()).transpose()?,
                at_lift: l.at_lift.map(|m| m.decode()).transpose()?,
                interior_d: l.interior_d,
                interior_dt: l.interior_dt,
            });
        }
        Ok(ComplexPair::new(self.label, levels, self.meta)?)
    }
}

pub fn to_bytes(pair: &ComplexPair) -> Vec<u8> {
    let mut v = serde_json::to_vec_pretty(&ComplexJson::from_pair(pair)).expect("serialises");
    v.push(b'\n');
    v
}

pub fn from_bytes(bytes: &[u8]) -> Result<ComplexPair, IoError> {
    let doc: ComplexJson = serde_json::from_slice(bytes)?;
    doc.into_pair()
}

pub fn save(pair: &ComplexPair, path: impl AsRef<Path>) -> Result<(), IoError> {
    std::fs::write(path, to_bytes(pair))?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<ComplexPair, IoError> {
    from_bytes(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn encodings_round_trip_bits() {
        let mut sparse = Mat::zeros(5, 7);
        sparse[(1, 2)] = -0.0;
        sparse[(4, 6)] = 1.0 / 3.0;
        let dense = Mat::from_fn(3, 2, |r, c| (r as f64 + 0.1) * (c as f64 - 0.7));
        for m in [sparse, dense, Mat::zeros(0, 4)] {
            let j = MatrixJson::encode(&m);
            let back = j.decode().unwrap();
            assert_eq!(back.shape(), m.shape());
            assert!(m.iter().zip(back.iter()).all(|(a, b)| a.to_bits() == b.to_bits()));
        }
    }

    #[test]
    fn unknown_encoding_rejected() {
        let mut j = MatrixJson::encode(&Mat::identity(2, 2));
        j.encoding = "csr".into();
        assert!(matches!(j.decode(), Err(IoError::Payload(_))));
    }
}
