use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ParamSet;

/// Optimizer and schedule settings shared by both stages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Hyperparams {
    pub base_lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs_stage1: usize,
    pub epochs_stage2: usize,
    /// Epochs between learning-rate drops.
    pub lr_decay_period: usize,
    /// Multiplier applied at every drop.
    pub lr_decay_factor: f64,
    pub seed: u64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams {
            base_lr: 0.001,
            momentum: 0.9,
            weight_decay: 0.001,
            batch_size: 8,
            epochs_stage1: 500,
            epochs_stage2: 100,
            lr_decay_period: 20,
            lr_decay_factor: 0.1,
            seed: 0,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("base_lr", self.base_lr),
            ("momentum", self.momentum),
            ("weight_decay", self.weight_decay),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::config(format!("hyperparams.{name} must be positive, got {v}")));
            }
        }
        let counts = [
            ("batch_size", self.batch_size),
            ("epochs_stage1", self.epochs_stage1),
            ("epochs_stage2", self.epochs_stage2),
            ("lr_decay_period", self.lr_decay_period),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::config(format!("hyperparams.{name} must be positive")));
            }
        }
        if !(self.lr_decay_factor > 0.0 && self.lr_decay_factor < 1.0) {
            return Err(Error::config(format!(
                "hyperparams.lr_decay_factor must lie in (0,1), got {}",
                self.lr_decay_factor
            )));
        }
        Ok(())
    }
}

/// Step-decay schedule: `base_lr · factor^⌊epoch / period⌋`.
pub fn lr_at(epoch: usize, h: &Hyperparams) -> f64 {
    let drops = (epoch / h.lr_decay_period.max(1)) as i32;
    h.base_lr * h.lr_decay_factor.powi(drops)
}

/// One SGD step with momentum and coupled L2 decay:
/// `v ← μ·v + (g + wd·p)`, `p ← p − lr·v`.
///
/// Every gradient is checked before anything is modified, so a non-finite
/// gradient leaves both `params` and `velocity` untouched.
pub fn sgd_update(
    params: &mut ParamSet,
    grads: &ParamSet,
    velocity: &mut ParamSet,
    lr: f64,
    momentum: f64,
    weight_decay: f64,
) -> Result<()> {
    params.check_layout(grads, "gradients")?;
    params.check_layout(velocity, "velocity")?;
    for g in grads.iter() {
        if g.value.iter().any(|v| !v.is_finite()) {
            return Err(Error::numeric(g.name.clone(), "non-finite gradient"));
        }
    }
    for ((p, g), v) in params.iter_mut().zip(grads.iter()).zip(velocity.iter_mut()) {
        ndarray::Zip::from(&mut p.value).and(&g.value).and(&mut v.value).for_each(|p, g, v| {
            *v = momentum * *v + (g + weight_decay * *p);
            *p -= lr * *v;
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use ndarray::{arr0, ArrayD, IxDyn};

    use super::*;

    fn scalar_set(v: f64) -> ParamSet {
        let mut s = ParamSet::new();
        s.push("p", arr0(v).into_dyn());
        s
    }

    #[test]
    fn schedule_values() {
        let h = Hyperparams::default();
        assert_eq!(lr_at(0, &h), 0.001);
        assert!((lr_at(19, &h) - 0.001).abs() < 1e-18);
        assert!((lr_at(20, &h) - 0.0001).abs() < 1e-15);
        assert!((lr_at(45, &h) - 0.00001).abs() < 1e-16);
    }

    #[test]
    fn schedule_non_increasing() {
        let h = Hyperparams::default();
        for e in 0..200 {
            assert!(lr_at(e + 1, &h) <= lr_at(e, &h));
        }
    }

    #[test]
    fn hand_evaluated_step() {
        let mut p = scalar_set(1.0);
        let g = scalar_set(1.0);
        let mut v = scalar_set(0.0);
        sgd_update(&mut p, &g, &mut v, 0.1, 0.9, 0.0).unwrap();
        assert!((v.get(0)[[]] - 1.0).abs() < 1e-15);
        assert!((p.get(0)[[]] - 0.9).abs() < 1e-15);
    }

    #[test]
    fn zero_gradient_is_fixed_point() {
        let mut p = ParamSet::new();
        p.push("w", ArrayD::from_shape_vec(IxDyn(&[3]), vec![0.5, -2.0, 3.0]).unwrap());
        let before = p.clone();
        let g = p.zeros_like();
        let mut v = p.zeros_like();
        sgd_update(&mut p, &g, &mut v, 0.1, 0.9, 0.0).unwrap();
        assert_eq!(p, before);
    }

    #[test]
    fn weight_decay_shrinks_norm_every_step() {
        let mut p = ParamSet::new();
        p.push("w", ArrayD::from_shape_vec(IxDyn(&[4]), vec![1.0, -0.5, 2.0, 0.25]).unwrap());
        let g = p.zeros_like();
        let mut v = p.zeros_like();
        let mut norm = p.squared_norm();
        for _ in 0..200 {
            sgd_update(&mut p, &g, &mut v, 0.001, 0.9, 0.001).unwrap();
            let n = p.squared_norm();
            assert!(n < norm);
            norm = n;
        }
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let mut p = scalar_set(1.0);
        let g = scalar_set(f64::NAN);
        let mut v = scalar_set(0.0);
        match sgd_update(&mut p, &g, &mut v, 0.1, 0.9, 0.0) {
            Err(Error::Numeric { location, .. }) => assert_eq!(location, "p"),
            other => panic!("expected numeric error, got {other:?}"),
        }
        assert_eq!(p.get(0)[[]], 1.0);
    }

    #[test]
    fn invalid_hyperparams_rejected() {
        let bad = [
            Hyperparams { base_lr: 0.0, ..Default::default() },
            Hyperparams { batch_size: 0, ..Default::default() },
            Hyperparams { lr_decay_factor: 1.0, ..Default::default() },
        ];
        for h in bad {
            assert!(matches!(h.validate(), Err(Error::Config(_))));
        }
        Hyperparams::default().validate().unwrap();
    }
}
