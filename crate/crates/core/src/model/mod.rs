//! Dual-branch encoders, sign heads, feature fusion and the diagnosis head.

mod encoder;
mod head;
pub mod layers;
mod params;

use std::ops::Deref;

use ndarray::Array1;

use crate::data::{DiseaseLabel, Modality, Tensor224, SIGNS_PER_MODALITY};
use crate::error::{Error, Result};

pub use encoder::{GlobalPool, build_encoder, encode, proj_init_std, to_chw, Encoder, ModelConfig, Trace, TrunkSpec, FEATURE_DIM, TRUNKS};
pub use head::LinearHead;
pub use params::{Param, ParamSet};

pub const FUSED_DIM: usize = 2 * FEATURE_DIM;
pub const SIGN_THRESHOLD: f64 = 0.5;

/// Output of one encoder branch.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector(Array1<f64>);

impl FeatureVector {
    pub fn new(values: Vec<f64>) -> Self {
        FeatureVector(Array1::from(values))
    }

    pub fn as_slice(&self) -> &[f64] {
        self.0.as_slice().expect("contiguous")
    }
}

impl From<Array1<f64>> for FeatureVector {
    fn from(a: Array1<f64>) -> Self {
        FeatureVector(a)
    }
}

impl Deref for FeatureVector {
    type Target = Array1<f64>;
    fn deref(&self) -> &Array1<f64> {
        &self.0
    }
}

/// `[fundus ‖ oct]` concatenation of two branch features.
#[derive(Debug, Clone, PartialEq)]
pub struct FusedFeature(Array1<f64>);

impl FusedFeature {
    pub fn as_slice(&self) -> &[f64] {
        self.0.as_slice().expect("contiguous")
    }

    pub fn fundus_half(&self) -> &[f64] {
        &self.as_slice()[..FEATURE_DIM]
    }

    pub fn oct_half(&self) -> &[f64] {
        &self.as_slice()[FEATURE_DIM..]
    }

    /// Splits back into the two branch features.
    pub fn unfuse(&self) -> (FeatureVector, FeatureVector) {
        (
            FeatureVector::new(self.fundus_half().to_vec()),
            FeatureVector::new(self.oct_half().to_vec()),
        )
    }
}

impl Deref for FusedFeature {
    type Target = Array1<f64>;
    fn deref(&self) -> &Array1<f64> {
        &self.0
    }
}

pub fn fuse(fundus: &FeatureVector, oct: &FeatureVector) -> Result<FusedFeature> {
    if fundus.len() != FEATURE_DIM || oct.len() != FEATURE_DIM {
        return Err(Error::contract(format!(
            "fuse expects two {FEATURE_DIM}-d features, got {} and {}",
            fundus.len(),
            oct.len()
        )));
    }
    let mut v = Vec::with_capacity(FUSED_DIM);
    v.extend_from_slice(fundus.as_slice());
    v.extend_from_slice(oct.as_slice());
    Ok(FusedFeature(Array1::from(v)))
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Per-sign probabilities: `sigmoid(Wᵀ f + b)`.
pub fn sign_scores(head: &LinearHead, f: &FeatureVector) -> Result<Vec<f64>> {
    Ok(head.scores(f.as_slice())?.iter().map(|z| sigmoid(*z)).collect())
}

/// Indices whose probability is strictly greater than 0.5.
pub fn predict_signs(probs: &[f64]) -> Vec<usize> {
    probs
        .iter()
        .enumerate()
        .filter(|(_, p)| **p > SIGN_THRESHOLD)
        .map(|(i, _)| i)
        .collect()
}

/// Same as [`predict_signs`] as a fixed-size flag array.
pub fn sign_flags(probs: &[f64; SIGNS_PER_MODALITY]) -> [bool; SIGNS_PER_MODALITY] {
    probs.map(|p| p > SIGN_THRESHOLD)
}

/// Raw class scores; softmax is only applied inside the loss.
pub fn diagnosis_scores(head: &LinearHead, f: &FusedFeature) -> Result<Vec<f64>> {
    Ok(head.scores(f.as_slice())?.to_vec())
}

/// Argmax with ties going to the lowest class index.
pub fn predict_diagnosis(scores: &[f64]) -> Result<DiseaseLabel> {
    if scores.len() != DiseaseLabel::COUNT {
        return Err(Error::contract(format!("expected {} scores, got {}", DiseaseLabel::COUNT, scores.len())));
    }
    if let Some(bad) = scores.iter().find(|s| !s.is_finite()) {
        return Err(Error::numeric("diagnosis scores", format!("non-finite score {bad}")));
    }
    let mut best = 0;
    for (i, s) in scores.iter().enumerate().skip(1) {
        if *s > scores[best] {
            best = i;
        }
    }
    Ok(DiseaseLabel::from_index(best).expect("index < 3"))
}

/// Sign-head init std chosen so that the projection followed by the head,
/// a map from `channels` pooled values to the logits, starts at LeCun scale.
/// With a Glorot projection a plain LeCun head would start that map about
/// six times smaller, and stage one on fundus barely moves in 30 epochs.
pub fn sign_head_std(channels: usize) -> f64 {
    1.0 / ((FEATURE_DIM * channels) as f64).sqrt() / proj_init_std(channels) * std::env::var("XH").ok().and_then(|v| v.parse::<f64>().ok()).unwrap_or(1.0) /*TEMPHOOK*/
}

/// Stage-one model: one encoder plus its 1000×5 sign head.
#[derive(Debug, Clone, PartialEq)]
pub struct SignModel {
    pub encoder: Encoder,
    pub head: LinearHead,
}

impl SignModel {
    pub fn new(branch: Modality, config: &ModelConfig, encoder_seed: u64, head_seed: u64) -> Result<Self> {
        let encoder = build_encoder(branch, config, encoder_seed)?;
        let std = sign_head_std(encoder.pooled_channels());
        Ok(SignModel {
            encoder,
            head: LinearHead::new_normal(FEATURE_DIM, SIGNS_PER_MODALITY, config.head_bias, std, head_seed),
        })
    }

    pub fn predict(&self, t: &Tensor224) -> Result<Vec<f64>> {
        sign_scores(&self.head, &self.encoder.encode_one(t)?)
    }
}

/// Stage-two model: both encoders, fusion and the 2000×3 diagnosis head.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagnosisModel {
    pub fundus: Encoder,
    pub oct: Encoder,
    pub head: LinearHead,
}

impl DiagnosisModel {
    pub fn new(fundus: Encoder, oct: Encoder, head_bias: bool, head_seed: u64) -> Result<Self> {
        if fundus.branch != Modality::Fundus || oct.branch != Modality::Oct {
            return Err(Error::config("diagnosis model needs a fundus and an OCT encoder"));
        }
        if fundus.trunk != oct.trunk {
            return Err(Error::config(format!("trunk mismatch: {} vs {}", fundus.trunk, oct.trunk)));
        }
        Ok(DiagnosisModel {
            fundus,
            oct,
            head: LinearHead::new_random(FUSED_DIM, DiseaseLabel::COUNT, head_bias, head_seed),
        })
    }

    pub fn encoder(&self, branch: Modality) -> &Encoder {
        match branch {
            Modality::Fundus => &self.fundus,
            Modality::Oct => &self.oct,
        }
    }

    pub fn scores(&self, fundus: &Tensor224, oct: &Tensor224) -> Result<Vec<f64>> {
        let fused = fuse(&self.fundus.encode_one(fundus)?, &self.oct.encode_one(oct)?)?;
        diagnosis_scores(&self.head, &fused)
    }

    pub fn predict(&self, fundus: &Tensor224, oct: &Tensor224) -> Result<DiseaseLabel> {
        predict_diagnosis(&self.scores(fundus, oct)?)
    }
}

/// Numerically stable softmax.
pub fn softmax(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.iter().map(|e| e / sum).collect()
}
