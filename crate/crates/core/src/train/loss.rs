use ndarray::Array1;

/// Mean binary cross-entropy over flags, computed from logits.
///
/// Returns the loss and its gradient with respect to the logits.
pub fn bce_with_logits(logits: &[f64], targets: &[f64]) -> (f64, Array1<f64>) {
    assert_eq!(logits.len(), targets.len(), "logit/target length");
    let n = logits.len() as f64;
    let mut loss = 0.0;
    let grad = logits
        .iter()
        .zip(targets)
        .map(|(&z, &y)| {
            // log(1 + e^z) - y·z, stable for either sign of z
            loss += z.max(0.0) + (-z.abs()).exp().ln_1p() - y * z;
            (crate::model::sigmoid(z) - y) / n
        })
        .collect();
    (loss / n, grad)
}

/// Weighted cross-entropy of softmax(`logits`) against class `target`.
///
/// The loss is scaled by `weight` (1 for unweighted training); the gradient
/// is returned with respect to the logits.
pub fn cross_entropy(logits: &[f64], target: usize, weight: f64) -> (f64, Array1<f64>) {
    assert!(target < logits.len(), "target class out of range");
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
    let loss = weight * (lse - logits[target]);
    let grad = logits
        .iter()
        .enumerate()
        .map(|(i, z)| weight * ((z - lse).exp() - if i == target { 1.0 } else { 0.0 }))
        .collect();
    (loss, grad)
}

/// Inverse-frequency class weights normalized to mean 1 over present classes.
pub fn inverse_frequency_weights(counts: &[usize]) -> Vec<f64> {
    let total: usize = counts.iter().sum();
    let present = counts.iter().filter(|c| **c > 0).count().max(1);
    counts
        .iter()
        .map(|&c| if c == 0 { 0.0 } else { total as f64 / (present as f64 * c as f64) })
        .collect()
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    #[test]
    fn bce_of_uninformative_predictor_is_ln2() {
        for targets in [[0.0; 5], [1.0; 5], [1.0, 0.0, 1.0, 0.0, 0.0]] {
            let (loss, _) = bce_with_logits(&[0.0; 5], &targets);
            assert!((loss - std::f64::consts::LN_2).abs() < 1e-12);
        }
    }

    #[test]
    fn ce_of_uniform_scores_is_ln3() {
        let (loss, grad) = cross_entropy(&[0.7, 0.7, 0.7], 1, 1.0);
        assert!((loss - 3f64.ln()).abs() < 1e-12);
        assert!((grad.sum()).abs() < 1e-12);
    }

    #[test]
    fn inverse_frequency() {
        let w = inverse_frequency_weights(&[10, 30, 60]);
        assert!((w[0] - 100.0 / 30.0).abs() < 1e-12);
        assert!((w[2] - 100.0 / 180.0).abs() < 1e-12);
        assert_eq!(inverse_frequency_weights(&[0, 5, 5]), vec![0.0, 1.0, 1.0]);
    }

    fn fd(f: impl Fn(&[f64]) -> f64, x: &[f64], i: usize) -> f64 {
        let h = 1e-6;
        let mut a = x.to_vec();
        let mut b = x.to_vec();
        a[i] += h;
        b[i] -= h;
        (f(&a) - f(&b)) / (2.0 * h)
    }

    proptest! {
        #[test]
        fn bce_gradient_matches_fd(z in prop::collection::vec(-8.0f64..8.0, 5), y in prop::collection::vec(prop::bool::ANY, 5)) {
            let t: Vec<f64> = y.iter().map(|b| *b as u8 as f64).collect();
            let (_, g) = bce_with_logits(&z, &t);
            for i in 0..5 {
                let num = fd(|x| bce_with_logits(x, &t).0, &z, i);
                prop_assert!((num - g[i]).abs() < 1e-7);
            }
        }

        #[test]
        fn ce_gradient_matches_fd(z in prop::collection::vec(-8.0f64..8.0, 3), c in 0usize..3, w in 0.1f64..3.0) {
            let (_, g) = cross_entropy(&z, c, w);
            for i in 0..3 {
                let num = fd(|x| cross_entropy(x, c, w).0, &z, i);
                prop_assert!((num - g[i]).abs() < 1e-6);
            }
        }

        #[test]
        fn bce_stable_for_extreme_logits(z in -800.0f64..800.0, y in prop::bool::ANY) {
            let (l, g) = bce_with_logits(&[z], &[y as u8 as f64]);
            prop_assert!(l.is_finite() && l >= 0.0);
            prop_assert!(g[0].is_finite());
        }
    }
}
