use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::{auroc_macro, cohens_kappa, one_hot, per_flag_accuracy, precision_recall_f1, subset_accuracy};
use crate::data::{DiseaseLabel, Modality, SIGNS_PER_MODALITY};
use crate::error::{Error, Result};
use crate::model::{predict_diagnosis, SIGN_THRESHOLD};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportStage {
    Signs,
    Diagnosis,
}

/// Scores and ground truth aligned by sample id.
#[derive(Debug, Clone, PartialEq)]
pub enum EvalBatch {
    /// Per-sample sign probabilities for one modality.
    Signs {
        modality: Modality,
        ids: Vec<String>,
        probs: Vec<[f64; SIGNS_PER_MODALITY]>,
        truth: Vec<[bool; SIGNS_PER_MODALITY]>,
    },
    /// Per-sample class probabilities (softmax of the diagnosis scores).
    Diagnosis {
        ids: Vec<String>,
        probs: Vec<[f64; DiseaseLabel::COUNT]>,
        truth: Vec<DiseaseLabel>,
    },
}

impl EvalBatch {
    pub fn len(&self) -> usize {
        match self {
            EvalBatch::Signs { ids, .. } | EvalBatch::Diagnosis { ids, .. } => ids.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn validate(&self) -> Result<()> {
        let (ids, n_scores, n_truth) = match self {
            EvalBatch::Signs { ids, probs, truth, .. } => (ids, probs.len(), truth.len()),
            EvalBatch::Diagnosis { ids, probs, truth } => (ids, probs.len(), truth.len()),
        };
        if ids.is_empty() {
            return Err(Error::contract("empty evaluation batch"));
        }
        if ids.len() != n_scores || ids.len() != n_truth {
            return Err(Error::contract("scores, labels and ids are not aligned"));
        }
        let unique: BTreeSet<&String> = ids.iter().collect();
        if unique.len() != ids.len() {
            return Err(Error::contract("duplicate sample ids in evaluation batch"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelMetrics {
    pub label: String,
    pub auroc: Option<f64>,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Precision or recall was 0/0 and reported as 0.
    pub zero_division: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    /// Row name used when the report is merged into a comparison table.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    pub stage: ReportStage,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub modality: Option<Modality>,
    pub sample_count: usize,
    pub config_hash: String,
    pub seed: u64,
    /// Headline metrics in table order; `None` marks an undefined metric.
    pub metrics: Vec<(String, Option<f64>)>,
    pub per_label: Vec<LabelMetrics>,
    /// Per-flag accuracy for sign reports (empty otherwise).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub per_flag_accuracy: Vec<f64>,
}

impl MetricReport {
    pub fn metric(&self, name: &str) -> Option<f64> {
        self.metrics.iter().find(|(n, _)| n == name).and_then(|(_, v)| *v)
    }

    pub fn metric_names(&self) -> Vec<&str> {
        self.metrics.iter().map(|(n, _)| n.as_str()).collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn to_table(&self, row_name: &str) -> String {
        render_table(&[(row_name.to_string(), self.metrics.clone())])
    }
}

/// Assembles the stage-appropriate metrics: AUROC, Precision, Recall, F1
/// and Acc (subset accuracy) for sign reports; AUROC, Precision, Recall, F1
/// and Kappa for diagnosis reports.
pub fn build_report(batch: &EvalBatch, config_hash: &str, seed: u64) -> Result<MetricReport> {
    batch.validate()?;
    match batch {
        EvalBatch::Signs { modality, probs, truth, .. } => {
            let scores: Vec<Vec<f64>> = probs.iter().map(|p| p.to_vec()).collect();
            let labels: Vec<Vec<bool>> = truth.iter().map(|t| t.to_vec()).collect();
            let pred: Vec<Vec<bool>> = probs.iter().map(|p| p.iter().map(|v| *v > SIGN_THRESHOLD).collect()).collect();
            let auroc = optional(auroc_macro(&scores, &labels))?;
            let prf = precision_recall_f1(&pred, &labels)?;
            let acc = subset_accuracy(&pred, &labels)?;
            let per_label = label_rows(modality.vocabulary().iter().map(|s| s.to_string()), &auroc, &prf);
            Ok(MetricReport {
                label: None,
                stage: ReportStage::Signs,
                modality: Some(*modality),
                sample_count: batch.len(),
                config_hash: config_hash.to_string(),
                seed,
                metrics: vec![
                    ("AUROC".into(), auroc.as_ref().map(|a| a.value)),
                    ("Precision".into(), Some(prf.precision)),
                    ("Recall".into(), Some(prf.recall)),
                    ("F1".into(), Some(prf.f1)),
                    ("Acc".into(), Some(acc)),
                ],
                per_label,
                per_flag_accuracy: per_flag_accuracy(&pred, &labels)?,
            })
        }
        EvalBatch::Diagnosis { probs, truth, .. } => {
            let n = DiseaseLabel::COUNT;
            let scores: Vec<Vec<f64>> = probs.iter().map(|p| p.to_vec()).collect();
            let truth_idx: Vec<usize> = truth.iter().map(|t| t.index()).collect();
            let pred_idx: Vec<usize> = probs
                .iter()
                .map(|p| predict_diagnosis(p).map(|d| d.index()))
                .collect::<Result<_>>()?;
            let labels = one_hot(&truth_idx, n);
            let auroc = optional(auroc_macro(&scores, &labels))?;
            let prf = precision_recall_f1(&one_hot(&pred_idx, n), &labels)?;
            let kappa = cohens_kappa(&pred_idx, &truth_idx, n)?;
            let per_label = label_rows(DiseaseLabel::ALL.iter().map(|d| d.name().to_string()), &auroc, &prf);
            Ok(MetricReport {
                label: None,
                stage: ReportStage::Diagnosis,
                modality: None,
                sample_count: batch.len(),
                config_hash: config_hash.to_string(),
                seed,
                metrics: vec![
                    ("AUROC".into(), auroc.as_ref().map(|a| a.value)),
                    ("Precision".into(), Some(prf.precision)),
                    ("Recall".into(), Some(prf.recall)),
                    ("F1".into(), Some(prf.f1)),
                    ("Kappa".into(), Some(kappa)),
                ],
                per_label,
                per_flag_accuracy: Vec::new(),
            })
        }
    }
}

fn optional<T>(r: Result<T>) -> Result<Option<T>> {
    match r {
        Ok(v) => Ok(Some(v)),
        Err(Error::UndefinedMetric(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

fn label_rows(
    names: impl Iterator<Item = String>,
    auroc: &Option<super::MacroAuroc>,
    prf: &super::Prf,
) -> Vec<LabelMetrics> {
    names
        .enumerate()
        .map(|(i, label)| LabelMetrics {
            label,
            auroc: auroc.as_ref().and_then(|a| a.per_label[i]),
            precision: prf.per_label[i].0,
            recall: prf.per_label[i].1,
            f1: prf.per_label[i].2,
            zero_division: prf.zero_division.contains(&i),
        })
        .collect()
}

/// Aligned-column text table; every row must share the first row's columns.
pub fn render_table(rows: &[(String, Vec<(String, Option<f64>)>)]) -> String {
    let Some((_, first)) = rows.first() else {
        return String::new();
    };
    let name_w = rows.iter().map(|(n, _)| n.len()).max().unwrap_or(0).max("Model".len());
    let cols: Vec<&str> = first.iter().map(|(c, _)| c.as_str()).collect();
    let col_w: Vec<usize> = cols.iter().map(|c| c.len().max(7)).collect();
    let mut out = format!("{:<name_w$}", "Model");
    for (c, w) in cols.iter().zip(&col_w) {
        out.push_str(&format!("  {c:>w$}"));
    }
    out.push('\n');
    out.push_str(&"-".repeat(name_w + col_w.iter().map(|w| w + 2).sum::<usize>()));
    out.push('\n');
    for (name, values) in rows {
        out.push_str(&format!("{name:<name_w$}"));
        for ((_, v), w) in values.iter().zip(&col_w) {
            match v {
                Some(v) => out.push_str(&format!("  {v:>w$.4}")),
                None => out.push_str(&format!("  {:>w$}", "n/a")),
            }
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn diag_batch() -> EvalBatch {
        EvalBatch::Diagnosis {
            ids: vec!["a".into(), "b".into(), "c".into()],
            probs: vec![[0.8, 0.1, 0.1], [0.1, 0.7, 0.2], [0.2, 0.2, 0.6]],
            truth: vec![DiseaseLabel::NeovascularAMD, DiseaseLabel::Pcv, DiseaseLabel::Other],
        }
    }

    #[test]
    fn diagnosis_report_columns() {
        let r = build_report(&diag_batch(), "h", 1).unwrap();
        assert_eq!(r.metric_names(), vec!["AUROC", "Precision", "Recall", "F1", "Kappa"]);
        assert_eq!(r.metric("Kappa"), Some(1.0));
        assert_eq!(r.metric("AUROC"), Some(1.0));
    }

    #[test]
    fn sign_report_columns() {
        let batch = EvalBatch::Signs {
            modality: Modality::Fundus,
            ids: vec!["a".into(), "b".into()],
            probs: vec![[0.9, 0.1, 0.2, 0.3, 0.6], [0.2, 0.8, 0.1, 0.1, 0.4]],
            truth: vec![[true, false, false, false, true], [false, true, false, false, false]],
        };
        let r = build_report(&batch, "h", 1).unwrap();
        assert_eq!(r.metric_names(), vec!["AUROC", "Precision", "Recall", "F1", "Acc"]);
        assert_eq!(r.metric("Acc"), Some(1.0));
        assert_eq!(r.per_flag_accuracy, vec![1.0; 5]);
        // labels 2 and 3 have no positives
        assert_eq!(r.per_label[2].auroc, None);
    }

    #[test]
    fn empty_and_duplicate_batches_rejected() {
        let empty = EvalBatch::Diagnosis { ids: vec![], probs: vec![], truth: vec![] };
        assert!(build_report(&empty, "h", 0).is_err());
        let dup = EvalBatch::Diagnosis {
            ids: vec!["a".into(), "a".into()],
            probs: vec![[1.0, 0.0, 0.0]; 2],
            truth: vec![DiseaseLabel::Pcv; 2],
        };
        assert!(build_report(&dup, "h", 0).is_err());
    }

    #[test]
    fn single_class_truth_reports_absent_auroc() {
        let batch = EvalBatch::Diagnosis {
            ids: vec!["a".into(), "b".into()],
            probs: vec![[0.2, 0.5, 0.3], [0.1, 0.2, 0.7]],
            truth: vec![DiseaseLabel::Pcv; 2],
        };
        let r = build_report(&batch, "h", 0).unwrap();
        assert_eq!(r.metric("AUROC"), None);
        assert!(r.to_table("x").contains("n/a"));
    }

    #[test]
    fn table_alignment() {
        let t = render_table(&[
            ("with-knowledge".into(), vec![("AUROC".into(), Some(0.9)), ("Kappa".into(), Some(0.5))]),
            ("w/o-knowledge".into(), vec![("AUROC".into(), Some(0.8)), ("Kappa".into(), None)]),
        ]);
        let lines: Vec<&str> = t.lines().collect();
        assert_eq!(lines.len(), 4);
        assert_eq!(lines[0].len(), lines[2].len());
        assert_eq!(lines[2].len(), lines[3].len());
    }
}
