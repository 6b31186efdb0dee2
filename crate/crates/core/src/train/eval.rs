use crate::data::{LoadedDataset, Modality, Split, SIGNS_PER_MODALITY};
use crate::error::{Error, Result};
use crate::metrics::{auroc_macro, EvalBatch};
use crate::model::{softmax, DiagnosisModel, SignModel};

/// Sign probabilities of one branch over a split, without augmentation.
pub fn evaluate_signs(model: &SignModel, data: &LoadedDataset, split: Split) -> Result<EvalBatch> {
    let branch = model.encoder.branch;
    let groups = data.split(split);
    let mut ids = Vec::with_capacity(groups.len());
    let mut probs = Vec::with_capacity(groups.len());
    let mut truth = Vec::with_capacity(groups.len());
    for g in groups {
        let p = model.predict(data.tensor(g, branch)?)?;
        let mut arr = [0.0; SIGNS_PER_MODALITY];
        arr.copy_from_slice(&p);
        ids.push(g.record(branch).id.clone());
        probs.push(arr);
        truth.push(g.signs(branch).flags);
    }
    Ok(EvalBatch::Signs { modality: branch, ids, probs, truth })
}

/// Softmax class probabilities of the diagnosis model over a split.
pub fn evaluate_diagnosis(model: &DiagnosisModel, data: &LoadedDataset, split: Split) -> Result<EvalBatch> {
    let groups = data.split(split);
    let mut ids = Vec::with_capacity(groups.len());
    let mut probs = Vec::with_capacity(groups.len());
    let mut truth = Vec::with_capacity(groups.len());
    for g in groups {
        let s = model.scores(data.tensor(g, Modality::Fundus)?, data.tensor(g, Modality::Oct)?)?;
        let p = softmax(&s);
        ids.push(g.id.clone());
        probs.push([p[0], p[1], p[2]]);
        truth.push(g.disease);
    }
    Ok(EvalBatch::Diagnosis { ids, probs, truth })
}

/// Macro one-vs-rest AUROC of a batch, `None` when undefined.
pub fn macro_auroc_of(batch: &EvalBatch) -> Result<Option<f64>> {
    let (scores, labels): (Vec<Vec<f64>>, Vec<Vec<bool>>) = match batch {
        EvalBatch::Signs { probs, truth, .. } => {
            (probs.iter().map(|p| p.to_vec()).collect(), truth.iter().map(|t| t.to_vec()).collect())
        }
        EvalBatch::Diagnosis { probs, truth, .. } => (
            probs.iter().map(|p| p.to_vec()).collect(),
            truth.iter().map(|t| (0..3).map(|c| c == t.index()).collect()).collect(),
        ),
    };
    match auroc_macro(&scores, &labels) {
        Ok(m) => Ok(Some(m.value)),
        Err(Error::UndefinedMetric(_)) => Ok(None),
        Err(e) => Err(e),
    }
}
