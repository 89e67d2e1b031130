use super::lstm::{LstmParams, TENSOR_NAMES};
use super::{NeuroError, Normalization, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::Path;

pub const CHECKPOINT_FORMAT: &str = "cogdrive-lstm";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorRecord {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
}

/// On-disk parameter file. `checksum` is the hex SHA-256 of
/// [`Checkpoint::digest_input`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub normalization: Normalization,
    pub tensors: Vec<TensorRecord>,
    pub checksum: String,
}

impl Checkpoint {
    pub fn new(params: &LstmParams, norm: &Normalization) -> Self {
        let tensors = params
            .tensors()
            .iter()
            .zip(params.shapes())
            .map(|((name, v), (rows, cols))| TensorRecord {
                name: name.to_string(),
                rows,
                cols,
                values: v.to_vec(),
            })
            .collect();
        let mut ck = Self {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            normalization: *norm,
            tensors,
            checksum: String::new(),
        };
        ck.checksum = hex::encode(Sha256::digest(ck.digest_input()));
        ck
    }

    /// Bytes covered by the checksum: the format tag, version, normalization
    /// and every tensor's name, shape and little-endian values.
    pub fn digest_input(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        buf.extend_from_slice(self.format.as_bytes());
        buf.extend_from_slice(&self.version.to_le_bytes());
        buf.extend_from_slice(&self.normalization.to_bytes());
        for t in &self.tensors {
            buf.extend_from_slice(t.name.as_bytes());
            buf.push(0);
            buf.extend_from_slice(&(t.rows as u64).to_le_bytes());
            buf.extend_from_slice(&(t.cols as u64).to_le_bytes());
            for v in &t.values {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        buf
    }

    /// Validates format, checksum and shapes, and rebuilds the parameters.
    pub fn into_params(self) -> Result<(LstmParams, Normalization)> {
        let bad = |m: String| Err(NeuroError::Checkpoint(m));
        if self.format != CHECKPOINT_FORMAT {
            return bad(format!("unknown format `{}`", self.format));
        }
        if self.version != CHECKPOINT_VERSION {
            return bad(format!("unsupported version {}", self.version));
        }
        let digest = hex::encode(Sha256::digest(self.digest_input()));
        if digest != self.checksum {
            return bad(format!(
                "checksum mismatch: stored {}, computed {digest}",
                self.checksum
            ));
        }
        if self.tensors.len() != TENSOR_NAMES.len() {
            return bad(format!(
                "expected {} tensors, found {}",
                TENSOR_NAMES.len(),
                self.tensors.len()
            ));
        }
        let mut params = LstmParams::zeros();
        let shapes = params.shapes();
        for (((_, dst), rec), (name, (rows, cols))) in params
            .tensors_mut()
            .into_iter()
            .zip(self.tensors)
            .zip(TENSOR_NAMES.iter().zip(shapes))
        {
            if rec.name != *name || rec.rows != rows || rec.cols != cols || rec.values.len() != rows * cols {
                return Err(NeuroError::ShapeMismatch(format!(
                    "tensor `{}` {}x{} ({} values), expected `{name}` {rows}x{cols}",
                    rec.name,
                    rec.rows,
                    rec.cols,
                    rec.values.len()
                )));
            }
            *dst = rec.values;
        }
        params.check()?;
        Ok((params, self.normalization))
    }
}

pub fn write_checkpoint(params: &LstmParams, norm: &Normalization) -> String {
    serde_json::to_string_pretty(&Checkpoint::new(params, norm)).expect("checkpoint serializes")
}

pub fn read_checkpoint(text: &str) -> Result<(LstmParams, Normalization)> {
    let ck: Checkpoint = serde_json::from_str(text).map_err(|e| NeuroError::Checkpoint(e.to_string()))?;
    ck.into_params()
}

pub fn save_checkpoint(path: &Path, params: &LstmParams, norm: &Normalization) -> Result<()> {
    std::fs::write(path, write_checkpoint(params, norm)).map_err(|e| NeuroError::Io(format!("{}: {e}", path.display())))
}

pub fn load_checkpoint(path: &Path) -> Result<(LstmParams, Normalization)> {
    let text = std::fs::read_to_string(path).map_err(|e| NeuroError::Io(format!("{}: {e}", path.display())))?;
    read_checkpoint(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let p = LstmParams::init(17);
        let norm = Normalization::default();
        let text = write_checkpoint(&p, &norm);
        let (q, n) = read_checkpoint(&text).unwrap();
        assert_eq!(p, q);
        assert_eq!(n, norm);
        assert_eq!(write_checkpoint(&q, &n), text);
    }

    #[test]
    fn tampering_is_detected() {
        let p = LstmParams::init(2);
        let mut ck = Checkpoint::new(&p, &Normalization::default());
        ck.tensors[4].values[3] += 1e-12;
        let text = serde_json::to_string(&ck).unwrap();
        assert!(matches!(read_checkpoint(&text), Err(NeuroError::Checkpoint(_))));
    }

    #[test]
    fn wrong_shape_rejected_even_with_valid_checksum() {
        let p = LstmParams::init(2);
        let mut ck = Checkpoint::new(&p, &Normalization::default());
        ck.tensors[0].values.pop();
        ck.tensors[0].cols -= 1;
        ck.checksum = hex::encode(Sha256::digest(ck.digest_input()));
        assert!(matches!(ck.into_params(), Err(NeuroError::ShapeMismatch(_))));
    }

    #[test]
    fn unknown_fields_and_garbage_rejected() {
        assert!(read_checkpoint("not json").is_err());
        let text = write_checkpoint(&LstmParams::zeros(), &Normalization::default());
        let extra = text.replacen('{', "{\"extra\": 1,", 1);
        assert!(read_checkpoint(&extra).is_err());
    }
}
