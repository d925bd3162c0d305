//! Model checkpoints (JSON) and the MI trace CSV.

use std::fs::{self, File};
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::mi::StatNetParams;
use crate::model::{GcsParams, HeadParams};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StatSection {
    pub w1: Matrix,
    pub b1: Vec<f64>,
    pub w2: Matrix,
    pub b2: f64,
    pub z_dim: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub dim: usize,
    pub heads: usize,
    pub attn_dim: usize,
    pub temperature: f64,
    pub dropout: f64,
    pub seed: u64,
    pub w_in: Matrix,
    pub b_in: Vec<f64>,
    pub attention_heads: Vec<HeadParams>,
    pub w_out: Matrix,
    pub b_out: Vec<f64>,
    pub stat: StatSection,
}

impl Checkpoint {
    pub fn new(gcs: &GcsParams, stat: &StatNetParams, seed: u64) -> Checkpoint {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            dim: gcs.dim(),
            heads: gcs.head_count(),
            attn_dim: gcs.attn_dim(),
            temperature: gcs.temperature,
            dropout: gcs.dropout,
            seed,
            w_in: gcs.w_in.clone(),
            b_in: gcs.b_in.clone(),
            attention_heads: gcs.heads.clone(),
            w_out: gcs.w_out.clone(),
            b_out: gcs.b_out.clone(),
            stat: StatSection {
                w1: stat.w1.clone(),
                b1: stat.b1.clone(),
                w2: stat.w2.clone(),
                b2: stat.b2[0],
                z_dim: stat.z_dim,
            },
        }
    }

    /// Simulator parameters, after checking every shape against the header.
    pub fn gcs(&self) -> Result<GcsParams> {
        let d = self.dim;
        let check = |context: &'static str, expected: (usize, usize), m: &Matrix| {
            if (m.rows(), m.cols()) != expected {
                Err(Error::Format(format!(
                    "checkpoint {context} is {}x{}, expected {}x{}",
                    m.rows(),
                    m.cols(),
                    expected.0,
                    expected.1
                )))
            } else {
                Ok(())
            }
        };
        check("w_in", (d, d), &self.w_in)?;
        check("w_out", (d, d), &self.w_out)?;
        if self.b_in.len() != d || self.b_out.len() != d {
            return Err(Error::Format("checkpoint bias length differs from dim".into()));
        }
        if self.attention_heads.len() != self.heads {
            return Err(Error::Format(format!(
                "checkpoint declares {} heads but stores {}",
                self.heads,
                self.attention_heads.len()
            )));
        }
        for h in &self.attention_heads {
            check("wq", (self.attn_dim, d), &h.wq)?;
            check("wk", (self.attn_dim, d), &h.wk)?;
            check("wv", (d, d), &h.wv)?;
        }
        let params = GcsParams {
            w_in: self.w_in.clone(),
            b_in: self.b_in.clone(),
            heads: self.attention_heads.clone(),
            w_out: self.w_out.clone(),
            b_out: self.b_out.clone(),
            temperature: self.temperature,
            dropout: self.dropout,
        };
        params.config().validate()?;
        if !params.is_finite() {
            return Err(Error::Format("checkpoint holds non-finite weights".into()));
        }
        Ok(params)
    }

    pub fn stat(&self) -> Result<StatNetParams> {
        let s = &self.stat;
        let hidden = s.w1.cols();
        if s.b1.len() != hidden || s.w2.rows() != hidden || s.w2.cols() != 1 || s.z_dim > s.w1.rows() {
            return Err(Error::Format("checkpoint statistic network shapes are inconsistent".into()));
        }
        Ok(StatNetParams {
            w1: s.w1.clone(),
            b1: s.b1.clone(),
            w2: s.w2.clone(),
            b2: vec![s.b2],
            z_dim: s.z_dim,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn from_json(text: &str) -> Result<Checkpoint> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        let found = value
            .get("version")
            .and_then(|v| v.as_u64())
            .ok_or_else(|| Error::Format("checkpoint has no version".into()))?;
        if found != CHECKPOINT_VERSION as u64 {
            return Err(Error::SchemaMismatch {
                expected: CHECKPOINT_VERSION,
                found: found as u32,
            });
        }
        let ck: Checkpoint = serde_json::from_value(value)?;
        ck.gcs()?;
        ck.stat()?;
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Checkpoint::from_json(&text)
    }
}

/// SHA-256 of a byte string, lowercase hex.
pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn file_sha256(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

/// `step,bound_nats` rows.
pub fn write_mi_curve(curve: &[(usize, f64)], path: &Path) -> Result<()> {
    let mut f = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut text = String::from("step,bound_nats\n");
    for (step, b) in curve {
        text.push_str(&format!("{step},{b:?}\n"));
    }
    f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}

pub fn read_mi_curve(path: &Path) -> Result<Vec<(usize, f64)>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    r.deserialize()
        .map(|rec| rec.map_err(|e| Error::Format(format!("{}: {e}", path.display()))))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_params, GcsConfig};

    fn sample() -> Checkpoint {
        let cfg = GcsConfig {
            heads: 2,
            attn_dim: 3,
            ..GcsConfig::new(4)
        };
        Checkpoint::new(&init_params(&cfg, 5).unwrap(), &StatNetParams::new(4, 4, 5), 5)
    }

    #[test]
    fn checkpoint_round_trips_exactly() {
        let ck = sample();
        let back = Checkpoint::from_json(&ck.to_json().unwrap()).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.gcs().unwrap(), init_params(&back.gcs().unwrap().config(), 5).unwrap());
        assert_eq!(back.stat().unwrap(), StatNetParams::new(4, 4, 5));
    }

    #[test]
    fn rejects_version_and_shape_mismatch() {
        let mut v: serde_json::Value = serde_json::to_value(sample()).unwrap();
        v["version"] = 7.into();
        assert!(matches!(
            Checkpoint::from_json(&v.to_string()),
            Err(Error::SchemaMismatch { found: 7, .. })
        ));
        let mut ck = sample();
        ck.heads = 3;
        assert!(Checkpoint::from_json(&ck.to_json().unwrap()).is_err());
        let mut ck = sample();
        ck.attn_dim = 2;
        assert!(ck.gcs().is_err());
    }

    #[test]
    fn mi_curve_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("mi_curve.csv");
        let curve = vec![(0, -0.1), (1, 0.123456789), (2, 1.0 / 3.0)];
        write_mi_curve(&curve, &p).unwrap();
        assert!(fs::read_to_string(&p).unwrap().starts_with("step,bound_nats\n0,-0.1\n"));
        assert_eq!(read_mi_curve(&p).unwrap(), curve);
    }

    #[test]
    fn sha256_of_empty_input() {
        assert_eq!(
            sha256_hex(b""),
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
        );
    }
}
