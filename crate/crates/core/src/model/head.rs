use ndarray::{Array1, Array2, Ix1, Ix2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::params::ParamSet;
use crate::error::{Error, Result};

/// Affine classifier `s = Wᵀ f + b` with `W` stored as `in × out`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearHead {
    pub params: ParamSet,
}

impl LinearHead {
    /// LeCun normal weights, zero bias.
    pub fn new_random(in_dim: usize, out_dim: usize, bias: bool, seed: u64) -> Self {
        Self::new_normal(in_dim, out_dim, bias, (1.0 / in_dim as f64).sqrt(), seed)
    }

    pub fn new_normal(in_dim: usize, out_dim: usize, bias: bool, std: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        params.push_normal("weight", &[in_dim, out_dim], std, &mut rng);
        if bias {
            params.push_zeros("bias", &[out_dim]);
        }
        LinearHead { params }
    }

    /// Builds a head from an `in × out` weight matrix and optional bias.
    pub fn from_parts(weight: Array2<f64>, bias: Option<Array1<f64>>) -> Result<Self> {
        let out = weight.ncols();
        let mut params = ParamSet::new();
        params.push("weight", weight.into_dyn());
        if let Some(b) = bias {
            if b.len() != out {
                return Err(Error::contract(format!("bias length {} does not match {out} outputs", b.len())));
            }
            params.push("bias", b.into_dyn());
        }
        Ok(LinearHead { params })
    }

    pub fn from_params(params: ParamSet) -> Result<Self> {
        let ok = match params.len() {
            1 | 2 => params.name(0) == "weight" && params.get(0).ndim() == 2,
            _ => false,
        };
        let bias_ok = params.len() == 1
            || (params.name(1) == "bias" && params.get(1).ndim() == 1 && params.get(1).len() == params.get(0).shape()[1]);
        if !ok || !bias_ok {
            return Err(Error::contract("head parameters must be `weight` (in × out) and optional `bias`"));
        }
        Ok(LinearHead { params })
    }

    pub fn weight(&self) -> ndarray::ArrayView2<'_, f64> {
        self.params.get(0).view().into_dimensionality::<Ix2>().expect("2-d weight")
    }

    pub fn bias(&self) -> Option<ndarray::ArrayView1<'_, f64>> {
        (self.params.len() > 1).then(|| self.params.get(1).view().into_dimensionality::<Ix1>().expect("1-d bias"))
    }

    pub fn in_dim(&self) -> usize {
        self.weight().nrows()
    }

    pub fn out_dim(&self) -> usize {
        self.weight().ncols()
    }

    /// Raw affine scores.
    pub fn scores(&self, f: &[f64]) -> Result<Array1<f64>> {
        if f.len() != self.in_dim() {
            return Err(Error::contract(format!(
                "head expects {}-d input, got {}",
                self.in_dim(),
                f.len()
            )));
        }
        let f = ndarray::ArrayView1::from(f);
        let mut s = self.weight().t().dot(&f);
        if let Some(b) = self.bias() {
            s += &b;
        }
        Ok(s)
    }

    /// Accumulates `dL/dW`, `dL/db` into `grads` and returns `dL/df`.
    pub fn backward(&self, f: &[f64], d_scores: &Array1<f64>, grads: Option<&mut ParamSet>) -> Array1<f64> {
        if let Some(g) = grads {
            let mut gw = g.get_mut(0).view_mut().into_dimensionality::<Ix2>().expect("2-d");
            for (mut row, fi) in gw.rows_mut().into_iter().zip(f.iter()) {
                row.scaled_add(*fi, d_scores);
            }
            if g.len() > 1 {
                let mut gb = g.get_mut(1).view_mut().into_dimensionality::<Ix1>().expect("1-d");
                gb += d_scores;
            }
        }
        self.weight().dot(d_scores)
    }
}
