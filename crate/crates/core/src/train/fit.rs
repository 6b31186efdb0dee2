use std::collections::BTreeMap;

use ndarray::Array1;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::checkpoint::{Checkpoint, Stage};
use super::eval::{evaluate_diagnosis, evaluate_signs, macro_auroc_of};
use super::loss::{bce_with_logits, cross_entropy, inverse_frequency_weights};
use super::optim::{lr_at, sgd_update, Hyperparams};
use crate::data::{AugmentDraws, BiModalGroup, DiseaseLabel, LoadedDataset, Modality, Split, Tensor224};
use crate::error::{Error, Result};
use crate::model::{build_encoder, DiagnosisModel, Encoder, ModelConfig, ParamSet, SignModel, FEATURE_DIM};
use crate::seed::{derive_seed, rng_for};

/// Stage-two switches.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TrainOptions {
    /// Keep both encoders fixed and train only the diagnosis head.
    pub freeze_encoders: bool,
    /// Weight the cross-entropy by inverse class frequency of the training split.
    pub class_weights: bool,
    /// Hash of the run configuration, stamped into checkpoints.
    pub config_hash: String,
}

/// One line of the per-epoch training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub stage: Stage,
    pub arm: String,
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub valid_auroc: Option<f64>,
    /// Optimizer steps taken so far in this stage.
    pub steps: usize,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Best-validation checkpoint.
    pub checkpoint: Checkpoint,
    pub log: Vec<EpochLog>,
    pub steps: usize,
    /// Encoder checksums taken just before the first optimizer step.
    pub initial_encoder_checksums: Vec<String>,
}

impl TrainOutcome {
    pub fn log_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for line in &self.log {
            out.push_str(&serde_json::to_string(line)?);
            out.push('\n');
        }
        Ok(out)
    }
}

fn init_seed(run_seed: u64, what: &str) -> u64 {
    derive_seed(run_seed, 0, &format!("init/{what}"))
}

/// Deterministic per-epoch visiting order of `n` training samples.
pub fn epoch_order(run_seed: u64, epoch: usize, stage: Stage, n: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng_for(run_seed, epoch as u64, &format!("order/{stage}")));
    order
}

/// Augmentation draws for one image in one epoch; identical for every arm
/// trained with the same run seed.
pub fn augment_draws(run_seed: u64, epoch: usize, record_id: &str) -> AugmentDraws {
    AugmentDraws::sample(&mut rng_for(run_seed, epoch as u64, record_id))
}

fn augmented(data: &LoadedDataset, g: &BiModalGroup, m: Modality, seed: u64, epoch: usize) -> Result<Tensor224> {
    let t = data.tensor(g, m)?;
    Ok(augment_draws(seed, epoch, &g.record(m).id).apply(t))
}

fn training_groups<'a>(data: &'a LoadedDataset, h: &Hyperparams) -> Result<Vec<&'a BiModalGroup>> {
    h.validate()?;
    let groups = data.split(Split::Train);
    if groups.is_empty() {
        return Err(Error::config("training split is empty"));
    }
    Ok(groups)
}

/// Loss and parameter gradients of one sign sample (BCE averaged over flags).
pub fn sign_sample_gradients(
    model: &SignModel,
    t: &Tensor224,
    targets: &[f64],
    enc_grads: Option<&mut ParamSet>,
    head_grads: &mut ParamSet,
) -> Result<f64> {
    let trace = model.encoder.forward(t)?;
    let f = trace.features.as_slice().expect("contiguous");
    let logits = model.head.scores(f)?;
    let (loss, dz) = bce_with_logits(logits.as_slice().expect("contiguous"), targets);
    let df = model.head.backward(f, &dz, Some(head_grads));
    if let Some(g) = enc_grads {
        model.encoder.backward(&trace, &df, Some(g));
    }
    Ok(loss)
}

/// Loss and parameter gradients of one bi-modal sample (weighted
/// cross-entropy). Encoder gradients are skipped when `enc_grads` is `None`.
pub fn diagnosis_sample_gradients(
    model: &DiagnosisModel,
    fundus: &Tensor224,
    oct: &Tensor224,
    target: usize,
    weight: f64,
    enc_grads: Option<(&mut ParamSet, &mut ParamSet)>,
    head_grads: &mut ParamSet,
) -> Result<f64> {
    let tf = model.fundus.forward(fundus)?;
    let to = model.oct.forward(oct)?;
    let mut fused = Vec::with_capacity(2 * FEATURE_DIM);
    fused.extend_from_slice(tf.features.as_slice().expect("contiguous"));
    fused.extend_from_slice(to.features.as_slice().expect("contiguous"));
    let logits = model.head.scores(&fused)?;
    let (loss, dz) = cross_entropy(logits.as_slice().expect("contiguous"), target, weight);
    let dfused = model.head.backward(&fused, &dz, Some(head_grads));
    if let Some((gf, go)) = enc_grads {
        let df = Array1::from(dfused.as_slice().expect("contiguous")[..FEATURE_DIM].to_vec());
        let d_o = Array1::from(dfused.as_slice().expect("contiguous")[FEATURE_DIM..].to_vec());
        model.fundus.backward(&tf, &df, Some(gf));
        model.oct.backward(&to, &d_o, Some(go));
    }
    Ok(loss)
}

fn better(candidate: Option<f64>, best: Option<Option<f64>>) -> bool {
    match (candidate, best) {
        (_, None) => true,
        (Some(c), Some(Some(b))) => c > b,
        (Some(_), Some(None)) => true,
        (None, Some(_)) => false,
    }
}

/// Stage one: multi-label sign training of one branch with mean BCE.
pub fn pretrain_signs(
    branch: Modality,
    data: &LoadedDataset,
    config: &ModelConfig,
    h: &Hyperparams,
    config_hash: &str,
) -> Result<TrainOutcome> {
    let groups = training_groups(data, h)?;
    let stage = Stage::signs(branch);
    let mut model = SignModel::new(
        branch,
        config,
        init_seed(h.seed, &format!("{stage}/encoder")),
        init_seed(h.seed, &format!("{stage}/head")),
    )?;
    let initial = vec![model.encoder.params.checksum()];
    let mut enc_v = model.encoder.params.zeros_like();
    let mut head_v = model.head.params.zeros_like();
    let mut enc_g = model.encoder.params.zeros_like();
    let mut head_g = model.head.params.zeros_like();

    let mut log = Vec::new();
    let mut steps = 0;
    let mut best: Option<(Option<f64>, SignModel, usize)> = None;
    for epoch in 0..h.epochs_stage1 {
        let lr = lr_at(epoch, h);
        let order = epoch_order(h.seed, epoch, stage, groups.len());
        let mut loss_sum = 0.0;
        for batch in order.chunks(h.batch_size) {
            enc_g.fill_zero();
            head_g.fill_zero();
            for &i in batch {
                let g = groups[i];
                let t = augmented(data, g, branch, h.seed, epoch)?;
                let targets = g.signs(branch).as_targets();
                loss_sum += sign_sample_gradients(&model, &t, &targets, Some(&mut enc_g), &mut head_g)?;
            }
            let scale = 1.0 / batch.len() as f64;
            enc_g.scale(scale);
            head_g.scale(scale);
            sgd_update(&mut model.encoder.params, &enc_g, &mut enc_v, lr, h.momentum, h.weight_decay)?;
            sgd_update(&mut model.head.params, &head_g, &mut head_v, lr, h.momentum, h.weight_decay)?;
            steps += 1;
        }
        let valid = validation_auroc_signs(&model, data)?;
        log.push(EpochLog {
            stage,
            arm: "signs".into(),
            epoch,
            lr,
            train_loss: loss_sum / groups.len() as f64,
            valid_auroc: valid,
            steps,
        });
        if better(valid, best.as_ref().map(|b| b.0)) {
            best = Some((valid, model.clone(), epoch));
        }
    }
    let (valid, best_model, epoch) = best.expect("at least one epoch");
    let mut checkpoint = Checkpoint::from_sign_model(&best_model, config);
    stamp(&mut checkpoint, epoch, h, config_hash, valid, &log[epoch]);
    Ok(TrainOutcome { checkpoint, log, steps, initial_encoder_checksums: initial })
}

fn stamp(c: &mut Checkpoint, epoch: usize, h: &Hyperparams, config_hash: &str, valid: Option<f64>, line: &EpochLog) {
    c.epoch = epoch;
    c.hyperparams = h.clone();
    c.seed = h.seed;
    c.config_hash = config_hash.to_string();
    let mut metrics = BTreeMap::new();
    if let Some(v) = valid {
        metrics.insert("valid_auroc".to_string(), v);
    }
    metrics.insert("train_loss".to_string(), line.train_loss);
    c.metrics = metrics;
}

fn validation_auroc_signs(model: &SignModel, data: &LoadedDataset) -> Result<Option<f64>> {
    if data.split(Split::Valid).is_empty() {
        return Ok(None);
    }
    macro_auroc_of(&evaluate_signs(model, data, Split::Valid)?)
}

fn validation_auroc_diagnosis(model: &DiagnosisModel, data: &LoadedDataset) -> Result<Option<f64>> {
    if data.split(Split::Valid).is_empty() {
        return Ok(None);
    }
    macro_auroc_of(&evaluate_diagnosis(model, data, Split::Valid)?)
}

/// Stage two, knowledge arm: both encoders start from stage-one weights and
/// a fresh 2000×3 head is trained with cross-entropy.
pub fn finetune_diagnosis(
    ckpt_f: &Checkpoint,
    ckpt_o: &Checkpoint,
    data: &LoadedDataset,
    h: &Hyperparams,
    opts: &TrainOptions,
) -> Result<TrainOutcome> {
    for (c, stage) in [(ckpt_f, Stage::SignsF), (ckpt_o, Stage::SignsO)] {
        c.expect_stage(stage).map_err(|e| Error::config(e.to_string()))?;
    }
    if ckpt_f.model.trunk != ckpt_o.model.trunk {
        return Err(Error::config(format!(
            "trunk mismatch between stage-one checkpoints: {} vs {}",
            ckpt_f.model.trunk, ckpt_o.model.trunk
        )));
    }
    let config = ModelConfig { trunk: ckpt_f.model.trunk.clone(), head_bias: ckpt_f.model.head_bias };
    let model = DiagnosisModel::new(
        ckpt_f.encoder().clone(),
        ckpt_o.encoder().clone(),
        config.head_bias,
        init_seed(h.seed, "diagnosis/head"),
    )?;
    let expected = [ckpt_f.encoder().params.checksum(), ckpt_o.encoder().params.checksum()];
    let actual = [model.fundus.params.checksum(), model.oct.params.checksum()];
    if expected != actual {
        return Err(Error::contract("encoder weights differ from stage-one checkpoints"));
    }
    fit_diagnosis(model, &config, data, h, opts, "with-knowledge")
}

/// Stage two, scratch arm: identical to [`finetune_diagnosis`] except that
/// both encoders are randomly initialized.
pub fn train_scratch_baseline(
    config: &ModelConfig,
    data: &LoadedDataset,
    h: &Hyperparams,
    opts: &TrainOptions,
) -> Result<TrainOutcome> {
    let model = DiagnosisModel::new(
        build_encoder(Modality::Fundus, config, init_seed(h.seed, "scratch/F"))?,
        build_encoder(Modality::Oct, config, init_seed(h.seed, "scratch/O"))?,
        config.head_bias,
        init_seed(h.seed, "diagnosis/head"),
    )?;
    fit_diagnosis(model, config, data, h, opts, "w/o-knowledge")
}

fn class_counts(groups: &[&BiModalGroup]) -> Vec<usize> {
    let mut counts = vec![0; DiseaseLabel::COUNT];
    for g in groups {
        counts[g.disease.index()] += 1;
    }
    counts
}

fn fit_diagnosis(
    mut model: DiagnosisModel,
    config: &ModelConfig,
    data: &LoadedDataset,
    h: &Hyperparams,
    opts: &TrainOptions,
    arm: &str,
) -> Result<TrainOutcome> {
    let groups = training_groups(data, h)?;
    model.head.params.fill_zero();
    let weights = if opts.class_weights {
        inverse_frequency_weights(&class_counts(&groups))
    } else {
        vec![1.0; DiseaseLabel::COUNT]
    };
    let initial = vec![model.fundus.params.checksum(), model.oct.params.checksum()];
    let zeros = |e: &Encoder| e.params.zeros_like();
    let (mut vf, mut vo, mut vh) = (zeros(&model.fundus), zeros(&model.oct), model.head.params.zeros_like());
    let (mut gf, mut go, mut gh) = (zeros(&model.fundus), zeros(&model.oct), model.head.params.zeros_like());

    let mut log = Vec::new();
    let mut steps = 0;
    let mut best: Option<(Option<f64>, DiagnosisModel, usize)> = None;
    for epoch in 0..h.epochs_stage2 {
        let lr = lr_at(epoch, h);
        let order = epoch_order(h.seed, epoch, Stage::Diagnosis, groups.len());
        let mut loss_sum = 0.0;
        for batch in order.chunks(h.batch_size) {
            gf.fill_zero();
            go.fill_zero();
            gh.fill_zero();
            for &i in batch {
                let g = groups[i];
                let tf = augmented(data, g, Modality::Fundus, h.seed, epoch)?;
                let to = augmented(data, g, Modality::Oct, h.seed, epoch)?;
                let target = g.disease.index();
                let enc = (!opts.freeze_encoders).then_some((&mut gf, &mut go));
                loss_sum += diagnosis_sample_gradients(&model, &tf, &to, target, weights[target], enc, &mut gh)?;
            }
            let scale = 1.0 / batch.len() as f64;
            gh.scale(scale);
            if !opts.freeze_encoders {
                gf.scale(scale);
                go.scale(scale);
                sgd_update(&mut model.fundus.params, &gf, &mut vf, lr, h.momentum, h.weight_decay)?;
                sgd_update(&mut model.oct.params, &go, &mut vo, lr, h.momentum, h.weight_decay)?;
            }
            sgd_update(&mut model.head.params, &gh, &mut vh, lr, h.momentum, h.weight_decay)?;
            steps += 1;
        }
        let valid = validation_auroc_diagnosis(&model, data)?;
        log.push(EpochLog {
            stage: Stage::Diagnosis,
            arm: arm.to_string(),
            epoch,
            lr,
            train_loss: loss_sum / groups.len() as f64,
            valid_auroc: valid,
            steps,
        });
        if better(valid, best.as_ref().map(|b| b.0)) {
            best = Some((valid, model.clone(), epoch));
        }
    }
    let (valid, best_model, epoch) = best.expect("at least one epoch");
    let mut checkpoint = Checkpoint::from_diagnosis_model(&best_model, config);
    stamp(&mut checkpoint, epoch, h, &opts.config_hash, valid, &log[epoch]);
    Ok(TrainOutcome { checkpoint, log, steps, initial_encoder_checksums: initial })
}
