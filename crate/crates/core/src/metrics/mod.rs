//! Evaluation metrics: AUROC, precision/recall/F1, subset accuracy and
//! Cohen's kappa, plus report assembly.

mod report;

use crate::error::{Error, Result};

pub use report::{build_report, render_table, EvalBatch, LabelMetrics, MetricReport, ReportStage};

/// Probability that a random positive outranks a random negative, ties
/// counted as ½ (Mann–Whitney U / (n⁺ n⁻)).
pub fn auroc_binary(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::contract("scores and labels differ in length"));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::numeric("auroc", "non-finite score"));
    }
    let pos = labels.iter().filter(|l| **l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::UndefinedMetric("AUROC needs both positive and negative samples".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // sum of (1-based, tie-averaged) ranks of the positives
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg_rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            if labels[k] {
                rank_sum += avg_rank;
            }
        }
        i = j + 1;
    }
    let u = rank_sum - (pos * (pos + 1)) as f64 / 2.0;
    Ok(u / (pos as f64 * neg as f64))
}

/// Macro AUROC with per-label detail.
#[derive(Debug, Clone, PartialEq)]
pub struct MacroAuroc {
    pub value: f64,
    pub per_label: Vec<Option<f64>>,
    /// Labels excluded because they had only one class present.
    pub undefined: Vec<usize>,
}

/// Unweighted mean of per-label one-vs-rest AUROC over the labels where it
/// is defined. `scores[i][l]` and `labels[i][l]` index sample `i`, label `l`.
pub fn auroc_macro(scores: &[Vec<f64>], labels: &[Vec<bool>]) -> Result<MacroAuroc> {
    if scores.len() != labels.len() || scores.is_empty() {
        return Err(Error::contract("auroc_macro needs aligned, non-empty inputs"));
    }
    let n_labels = scores[0].len();
    if scores.iter().any(|s| s.len() != n_labels) || labels.iter().any(|l| l.len() != n_labels) {
        return Err(Error::contract("ragged score or label rows"));
    }
    let mut per_label = Vec::with_capacity(n_labels);
    let mut undefined = Vec::new();
    for l in 0..n_labels {
        let s: Vec<f64> = scores.iter().map(|row| row[l]).collect();
        let y: Vec<bool> = labels.iter().map(|row| row[l]).collect();
        match auroc_binary(&s, &y) {
            Ok(v) => per_label.push(Some(v)),
            Err(Error::UndefinedMetric(_)) => {
                per_label.push(None);
                undefined.push(l);
            }
            Err(e) => return Err(e),
        }
    }
    let defined: Vec<f64> = per_label.iter().flatten().copied().collect();
    if defined.is_empty() {
        return Err(Error::UndefinedMetric("AUROC undefined for every label".into()));
    }
    Ok(MacroAuroc {
        value: defined.iter().sum::<f64>() / defined.len() as f64,
        per_label,
        undefined,
    })
}

/// One-hot rows for class indices.
pub fn one_hot(classes: &[usize], n_classes: usize) -> Vec<Vec<bool>> {
    classes.iter().map(|&c| (0..n_classes).map(|k| k == c).collect()).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub per_label: Vec<(f64, f64, f64)>,
    /// Labels where precision or recall hit 0/0 and were set to 0.
    pub zero_division: Vec<usize>,
}

/// Per-label precision, recall and F1 (0/0 → 0) and their macro means.
pub fn precision_recall_f1(pred: &[Vec<bool>], truth: &[Vec<bool>]) -> Result<Prf> {
    if pred.len() != truth.len() || pred.is_empty() {
        return Err(Error::contract("precision_recall_f1 needs aligned, non-empty inputs"));
    }
    let n_labels = truth[0].len();
    if pred.iter().chain(truth).any(|r| r.len() != n_labels) || n_labels == 0 {
        return Err(Error::contract("ragged prediction or truth rows"));
    }
    let ratio = |num: usize, den: usize| if den == 0 { None } else { Some(num as f64 / den as f64) };
    let mut per_label = Vec::with_capacity(n_labels);
    let mut zero_division = Vec::new();
    for l in 0..n_labels {
        let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
        for (p, t) in pred.iter().zip(truth) {
            match (p[l], t[l]) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
                _ => {}
            }
        }
        let p = ratio(tp, tp + fp);
        let r = ratio(tp, tp + fn_);
        if p.is_none() || r.is_none() {
            zero_division.push(l);
        }
        let (p, r) = (p.unwrap_or(0.0), r.unwrap_or(0.0));
        let f1 = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
        per_label.push((p, r, f1));
    }
    let k = n_labels as f64;
    Ok(Prf {
        precision: per_label.iter().map(|x| x.0).sum::<f64>() / k,
        recall: per_label.iter().map(|x| x.1).sum::<f64>() / k,
        f1: per_label.iter().map(|x| x.2).sum::<f64>() / k,
        per_label,
        zero_division,
    })
}

/// Fraction of samples whose whole predicted flag set equals the truth.
pub fn subset_accuracy(pred: &[Vec<bool>], truth: &[Vec<bool>]) -> Result<f64> {
    if pred.len() != truth.len() || pred.is_empty() {
        return Err(Error::contract("subset_accuracy needs aligned, non-empty inputs"));
    }
    let hits = pred.iter().zip(truth).filter(|(p, t)| p == t).count();
    Ok(hits as f64 / pred.len() as f64)
}

/// Accuracy of each flag taken separately.
pub fn per_flag_accuracy(pred: &[Vec<bool>], truth: &[Vec<bool>]) -> Result<Vec<f64>> {
    if pred.len() != truth.len() || pred.is_empty() {
        return Err(Error::contract("per_flag_accuracy needs aligned, non-empty inputs"));
    }
    let n_labels = truth[0].len();
    Ok((0..n_labels)
        .map(|l| pred.iter().zip(truth).filter(|(p, t)| p[l] == t[l]).count() as f64 / pred.len() as f64)
        .collect())
}

/// Cohen's kappa `(p_o − p_e) / (1 − p_e)`; 1 when agreement is perfect.
pub fn cohens_kappa(pred: &[usize], truth: &[usize], n_classes: usize) -> Result<f64> {
    if pred.len() != truth.len() || pred.is_empty() {
        return Err(Error::contract("cohens_kappa needs aligned, non-empty inputs"));
    }
    if pred.iter().chain(truth).any(|c| *c >= n_classes) {
        return Err(Error::contract("class index outside the label universe"));
    }
    let n = pred.len() as f64;
    let agree = pred.iter().zip(truth).filter(|(a, b)| a == b).count() as f64;
    let p_o = agree / n;
    if p_o == 1.0 {
        return Ok(1.0);
    }
    let mut pc = vec![0.0; n_classes];
    let mut tc = vec![0.0; n_classes];
    for (&p, &t) in pred.iter().zip(truth) {
        pc[p] += 1.0;
        tc[t] += 1.0;
    }
    let p_e: f64 = pc.iter().zip(&tc).map(|(a, b)| (a / n) * (b / n)).sum();
    Ok((p_o - p_e) / (1.0 - p_e))
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn brute_auroc(scores: &[f64], labels: &[bool]) -> f64 {
        let mut wins = 0.0;
        let mut pairs = 0.0;
        for (i, &li) in labels.iter().enumerate() {
            for (j, &lj) in labels.iter().enumerate() {
                if li && !lj {
                    pairs += 1.0;
                    if scores[i] > scores[j] {
                        wins += 1.0;
                    } else if scores[i] == scores[j] {
                        wins += 0.5;
                    }
                }
            }
        }
        wins / pairs
    }

    #[test]
    fn auroc_examples() {
        assert_eq!(auroc_binary(&[0.1, 0.2, 0.8, 0.9], &[false, false, true, true]).unwrap(), 1.0);
        assert_eq!(auroc_binary(&[0.3; 6], &[true, false, true, false, false, true]).unwrap(), 0.5);
        let s = [0.1, 0.4, 0.35, 0.8];
        let y = [false, false, true, true];
        assert_eq!(brute_auroc(&s, &y), 0.75);
        assert!((auroc_binary(&s, &y).unwrap() - 0.75).abs() < 1e-12);
    }

    #[test]
    fn auroc_single_class_is_undefined() {
        assert!(matches!(auroc_binary(&[0.1, 0.2], &[true, true]), Err(Error::UndefinedMetric(_))));
    }

    #[test]
    fn macro_auroc_mean_and_exclusions() {
        // label 0 perfectly separated, label 1 all ties, label 2 single-class
        let scores = vec![vec![0.9, 0.5, 0.1], vec![0.8, 0.5, 0.2], vec![0.2, 0.5, 0.3], vec![0.1, 0.5, 0.4]];
        let labels = vec![
            vec![true, true, false],
            vec![true, false, false],
            vec![false, true, false],
            vec![false, false, false],
        ];
        let m = auroc_macro(&scores, &labels).unwrap();
        assert_eq!(m.per_label, vec![Some(1.0), Some(0.5), None]);
        assert_eq!(m.undefined, vec![2]);
        assert!((m.value - 0.75).abs() < 1e-12);
    }

    #[test]
    fn macro_auroc_all_undefined() {
        let r = auroc_macro(&[vec![0.1], vec![0.2]], &[vec![true], vec![true]]);
        assert!(matches!(r, Err(Error::UndefinedMetric(_))));
    }

    #[test]
    fn prf_examples() {
        let truth = vec![vec![true, false], vec![false, true]];
        let p = precision_recall_f1(&truth, &truth).unwrap();
        assert_eq!((p.precision, p.recall, p.f1), (1.0, 1.0, 1.0));

        let nothing = vec![vec![false, false], vec![false, false]];
        let p = precision_recall_f1(&nothing, &truth).unwrap();
        assert_eq!(p.recall, 0.0);
        assert_eq!(p.zero_division, vec![0, 1]);

        // TP=2, FP=1, FN=1
        let pred = vec![vec![true], vec![true], vec![true], vec![false]];
        let truth = vec![vec![true], vec![true], vec![false], vec![true]];
        let p = precision_recall_f1(&pred, &truth).unwrap();
        for v in [p.precision, p.recall, p.f1] {
            assert!((v - 2.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn subset_accuracy_counts() {
        let t = vec![vec![true, false]; 4];
        assert_eq!(subset_accuracy(&t, &t).unwrap(), 1.0);
        let mut p = t.clone();
        p[2][1] = true;
        assert_eq!(subset_accuracy(&p, &t).unwrap(), 0.75);
    }

    #[test]
    fn kappa_examples() {
        assert_eq!(cohens_kappa(&[0, 1, 2, 1], &[0, 1, 2, 1], 3).unwrap(), 1.0);
        // truth [A,A,B,B], pred [A,B,A,B]: p_o = 0.5, p_e = 0.5
        assert!((cohens_kappa(&[0, 1, 0, 1], &[0, 0, 1, 1], 2).unwrap()).abs() < 1e-12);
        // truth [A,A,A,B], pred [A,A,B,B]: p_o = 0.75, p_e = 0.5
        assert!((cohens_kappa(&[0, 0, 1, 1], &[0, 0, 0, 1], 2).unwrap() - 0.5).abs() < 1e-12);
        // degenerate single-class agreement
        assert_eq!(cohens_kappa(&[2, 2], &[2, 2], 3).unwrap(), 1.0);
    }

    proptest! {
        #[test]
        fn auroc_matches_pair_counting(data in proptest::collection::vec((0u8..6, any::<bool>()), 2..50)) {
            let scores: Vec<f64> = data.iter().map(|d| d.0 as f64 / 5.0).collect();
            let labels: Vec<bool> = data.iter().map(|d| d.1).collect();
            prop_assume!(labels.iter().any(|l| *l) && labels.iter().any(|l| !*l));
            let fast = auroc_binary(&scores, &labels).unwrap();
            prop_assert!((fast - brute_auroc(&scores, &labels)).abs() < 1e-9);
            prop_assert!((0.0..=1.0).contains(&fast));
        }

        #[test]
        fn auroc_invariant_under_increasing_transform(data in proptest::collection::vec((-3.0f64..3.0, any::<bool>()), 2..40)) {
            let scores: Vec<f64> = data.iter().map(|d| d.0).collect();
            let labels: Vec<bool> = data.iter().map(|d| d.1).collect();
            prop_assume!(labels.iter().any(|l| *l) && labels.iter().any(|l| !*l));
            let mapped: Vec<f64> = scores.iter().map(|s| s.exp() * 2.0 + 1.0).collect();
            prop_assert_eq!(auroc_binary(&scores, &labels).unwrap(), auroc_binary(&mapped, &labels).unwrap());
        }

        #[test]
        fn kappa_symmetric_and_bounded(pairs in proptest::collection::vec((0usize..3, 0usize..3), 1..50)) {
            let a: Vec<usize> = pairs.iter().map(|p| p.0).collect();
            let b: Vec<usize> = pairs.iter().map(|p| p.1).collect();
            let k1 = cohens_kappa(&a, &b, 3).unwrap();
            let k2 = cohens_kappa(&b, &a, 3).unwrap();
            prop_assert!((k1 - k2).abs() < 1e-12);
            prop_assert!((-1.0..=1.0).contains(&k1));
        }
    }
}
