use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use ndarray::{ArrayD, IxDyn};
use serde::{Deserialize, Serialize};

use super::Hyperparams;
use crate::data::Modality;
use crate::error::{Error, Result};
use crate::model::{DiagnosisModel, Encoder, LinearHead, ModelConfig, ParamSet, SignModel, TrunkSpec};
use crate::seed::sha256_hex;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"SGNFUSE\0";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Stage {
    #[serde(rename = "signs-F")]
    SignsF,
    #[serde(rename = "signs-O")]
    SignsO,
    #[serde(rename = "diagnosis")]
    Diagnosis,
}

impl Stage {
    pub fn signs(branch: Modality) -> Stage {
        match branch {
            Modality::Fundus => Stage::SignsF,
            Modality::Oct => Stage::SignsO,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::SignsF => "signs-F",
            Stage::SignsO => "signs-O",
            Stage::Diagnosis => "diagnosis",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Trained weights plus the metadata needed to rebuild and audit them.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub stage: Stage,
    pub model: ModelConfig,
    /// One encoder for sign stages; fundus then OCT for diagnosis.
    pub encoders: Vec<Encoder>,
    pub head: LinearHead,
    pub epoch: usize,
    pub hyperparams: Hyperparams,
    pub seed: u64,
    pub config_hash: String,
    pub metrics: BTreeMap<String, f64>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    format_version: u32,
    stage: Stage,
    model: ModelConfig,
    epoch: usize,
    hyperparams: Hyperparams,
    seed: u64,
    config_hash: String,
    metrics: BTreeMap<String, f64>,
    tensors: Vec<TensorEntry>,
    payload_sha256: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

impl Checkpoint {
    pub fn from_sign_model(model: &SignModel, config: &ModelConfig) -> Self {
        Checkpoint {
            stage: Stage::signs(model.encoder.branch),
            model: config.clone(),
            encoders: vec![model.encoder.clone()],
            head: model.head.clone(),
            epoch: 0,
            hyperparams: Hyperparams::default(),
            seed: 0,
            config_hash: String::new(),
            metrics: BTreeMap::new(),
        }
    }

    pub fn from_diagnosis_model(model: &DiagnosisModel, config: &ModelConfig) -> Self {
        Checkpoint {
            stage: Stage::Diagnosis,
            model: config.clone(),
            encoders: vec![model.fundus.clone(), model.oct.clone()],
            head: model.head.clone(),
            epoch: 0,
            hyperparams: Hyperparams::default(),
            seed: 0,
            config_hash: String::new(),
            metrics: BTreeMap::new(),
        }
    }

    pub fn expect_stage(&self, expected: Stage) -> Result<()> {
        if self.stage == expected {
            Ok(())
        } else {
            Err(Error::StageMismatch {
                expected: expected.to_string(),
                found: self.stage.to_string(),
            })
        }
    }

    pub fn sign_model(&self) -> Result<SignModel> {
        if self.stage == Stage::Diagnosis {
            return Err(Error::StageMismatch {
                expected: "signs-F or signs-O".into(),
                found: self.stage.to_string(),
            });
        }
        Ok(SignModel {
            encoder: self.encoders[0].clone(),
            head: self.head.clone(),
        })
    }

    pub fn diagnosis_model(&self) -> Result<DiagnosisModel> {
        self.expect_stage(Stage::Diagnosis)?;
        Ok(DiagnosisModel {
            fundus: self.encoders[0].clone(),
            oct: self.encoders[1].clone(),
            head: self.head.clone(),
        })
    }

    /// The encoder of a sign-stage checkpoint.
    pub fn encoder(&self) -> &Encoder {
        &self.encoders[0]
    }

    fn branches(stage: Stage) -> &'static [Modality] {
        match stage {
            Stage::SignsF => &[Modality::Fundus],
            Stage::SignsO => &[Modality::Oct],
            Stage::Diagnosis => &[Modality::Fundus, Modality::Oct],
        }
    }

    fn named_tensors(&self) -> Vec<(String, &ArrayD<f64>)> {
        let mut out = Vec::new();
        for enc in &self.encoders {
            for p in enc.params.iter() {
                out.push((format!("{}/{}", enc.branch.tag(), p.name), &p.value));
            }
        }
        for p in self.head.params.iter() {
            out.push((format!("head/{}", p.name), &p.value));
        }
        out
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let tensors = self.named_tensors();
        let mut payload = Vec::with_capacity(tensors.iter().map(|(_, t)| t.len() * 8).sum());
        for (_, t) in &tensors {
            for v in t.iter() {
                payload.extend_from_slice(&v.to_le_bytes());
            }
        }
        let header = Header {
            format_version: CHECKPOINT_VERSION,
            stage: self.stage,
            model: self.model.clone(),
            epoch: self.epoch,
            hyperparams: self.hyperparams.clone(),
            seed: self.seed,
            config_hash: self.config_hash.clone(),
            metrics: self.metrics.clone(),
            tensors: tensors
                .iter()
                .map(|(name, t)| TensorEntry { name: name.clone(), shape: t.shape().to_vec() })
                .collect(),
            payload_sha256: sha256_hex(&payload),
        };
        let header = serde_json::to_vec(&header)?;
        let mut out = Vec::with_capacity(20 + header.len() + payload.len());
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&payload);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let load = |m: &str| Error::Load(m.to_string());
        if bytes.len() < 20 || &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(load("not a checkpoint file"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != CHECKPOINT_VERSION {
            return Err(Error::Load(format!(
                "unsupported checkpoint version {version} (expected {CHECKPOINT_VERSION})"
            )));
        }
        let header_len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
        let header_end = 20usize.checked_add(header_len).filter(|e| *e <= bytes.len()).ok_or_else(|| load("truncated header"))?;
        let header: Header =
            serde_json::from_slice(&bytes[20..header_end]).map_err(|e| Error::Load(format!("bad header: {e}")))?;
        if header.format_version != version {
            return Err(load("header version disagrees with preamble"));
        }
        let payload = &bytes[header_end..];
        let expected: usize = header.tensors.iter().map(|t| t.shape.iter().product::<usize>() * 8).sum();
        if payload.len() != expected {
            return Err(Error::Load(format!(
                "payload holds {} bytes, header describes {expected}",
                payload.len()
            )));
        }
        if sha256_hex(payload) != header.payload_sha256 {
            return Err(load("payload checksum mismatch"));
        }

        let mut offset = 0;
        let mut tensors = header.tensors.iter().map(|entry| {
            let n: usize = entry.shape.iter().product();
            let data = payload[offset..offset + n * 8]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            offset += n * 8;
            (entry.name.as_str(), ArrayD::from_shape_vec(IxDyn(&entry.shape), data).expect("length checked"))
        });

        let spec = TrunkSpec::lookup(&header.model.trunk)
            .ok_or_else(|| Error::Load(format!("unknown trunk `{}`", header.model.trunk)))?;
        let mut encoders = Vec::new();
        for &branch in Self::branches(header.stage) {
            // template fixes the expected names and shapes
            let template = Encoder::from_spec(branch, &header.model.trunk, spec.clone(), 0)?;
            let mut params = ParamSet::new();
            for p in template.params.iter() {
                let (name, value) = tensors.next().ok_or_else(|| load("missing encoder tensors"))?;
                let want = format!("{}/{}", branch.tag(), p.name);
                if name != want || value.shape() != p.value.shape() {
                    return Err(Error::Load(format!("expected tensor {want} {:?}, found {name} {:?}", p.value.shape(), value.shape())));
                }
                params.push(p.name.clone(), value);
            }
            encoders.push(Encoder { params, ..template });
        }
        let mut head_params = ParamSet::new();
        for (name, value) in tensors {
            let short = name.strip_prefix("head/").ok_or_else(|| Error::Load(format!("unexpected tensor {name}")))?;
            head_params.push(short, value);
        }
        let head = LinearHead::from_params(head_params).map_err(|e| Error::Load(e.to_string()))?;
        let expected_head = match header.stage {
            Stage::Diagnosis => (crate::model::FUSED_DIM, crate::data::DiseaseLabel::COUNT),
            _ => (crate::model::FEATURE_DIM, crate::data::SIGNS_PER_MODALITY),
        };
        if (head.in_dim(), head.out_dim()) != expected_head {
            return Err(Error::Load(format!("head shape {}x{} does not fit stage {}", head.in_dim(), head.out_dim(), header.stage)));
        }
        Ok(Checkpoint {
            stage: header.stage,
            model: header.model,
            encoders,
            head,
            epoch: header.epoch,
            hyperparams: header.hyperparams,
            seed: header.seed,
            config_hash: header.config_hash,
            metrics: header.metrics,
        })
    }
}

/// Writes the checkpoint atomically (temporary file, then rename).
pub fn save_checkpoint(c: &Checkpoint, path: &Path) -> Result<()> {
    let bytes = c.to_bytes()?;
    crate::cli::write_atomic(path, &bytes)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    if !path.exists() {
        return Err(Error::MissingArtifact(path.to_path_buf()));
    }
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_bytes(&bytes)
}

/// Loads a checkpoint and checks its stage tag.
pub fn load_checkpoint_as(path: &Path, expected: Stage) -> Result<Checkpoint> {
    let c = load_checkpoint(path)?;
    c.expect_stage(expected)?;
    Ok(c)
}
