use ndarray::{Array1, Array2, Array3, ArrayView2, Ix2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::{avg_pool, col2im3, global_avg_pool, global_max_pool, im2col3, max_pool2, max_unpool2, relu_inplace};
use super::params::ParamSet;
use super::FeatureVector;
use crate::data::{Modality, Tensor224, TENSOR_CHANNELS, TENSOR_SIZE};
use crate::error::{Error, Result};

/// Output width of every encoder.
pub const FEATURE_DIM: usize = 1000;

/// Architecture of a registered trunk.
///
/// An average-pool stem (input standardized to roughly zero mean) feeds
/// blocks of 3×3 conv, per-sample normalization, ReLU and an optional 2×2
/// max-pool. A global pool and a linear projection to [`FEATURE_DIM`]
/// finish the encoder.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrunkSpec {
    pub stem_pool: usize,
    pub channels: Vec<usize>,
    pub pool_after: Vec<bool>,
    pub global_pool: GlobalPool,
}

/// Spatial reduction in front of the projection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GlobalPool {
    Avg,
    Max,
}

/// Registered trunk names.
pub const TRUNKS: [&str; 4] = ["small4", "small4avg", "wide4", "probe"];

impl TrunkSpec {
    pub fn lookup(name: &str) -> Option<TrunkSpec> {
        match name {
            "small4" => Some(TrunkSpec {
                stem_pool: 4,
                channels: vec![8, 16, 16, 16],
                pool_after: vec![true, true, false, false],
                global_pool: GlobalPool::Max,
            }),
            "small4avg" => Some(TrunkSpec {
                stem_pool: 4,
                channels: vec![8, 16, 16, 16],
                pool_after: vec![true, true, false, false],
                global_pool: GlobalPool::Avg,
            }),
            "wide4" => Some(TrunkSpec {
                stem_pool: 4,
                channels: vec![16, 32, 32, 32],
                pool_after: vec![true, true, false, false],
                global_pool: GlobalPool::Max,
            }),
            // two conv filters, used for gradient probes on tiny inputs
            "probe" => Some(TrunkSpec {
                stem_pool: 1,
                channels: vec![2],
                pool_after: vec![false],
                global_pool: GlobalPool::Avg,
            }),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.stem_pool == 0 {
            return Err(Error::config("stem_pool must be at least 1"));
        }
        if self.channels.len() != self.pool_after.len() {
            return Err(Error::config("channels and pool_after must have equal length"));
        }
        if self.channels.iter().any(|c| *c == 0) {
            return Err(Error::config("conv blocks need at least one channel"));
        }
        Ok(())
    }
}

/// Which trunk to build and whether heads carry bias terms.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(default = "default_trunk")]
    pub trunk: String,
    #[serde(default = "default_true")]
    pub head_bias: bool,
}

fn default_trunk() -> String {
    "small4".into()
}
fn default_true() -> bool {
    true
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig { trunk: default_trunk(), head_bias: true }
    }
}

/// Per-sample forward cache needed by the backward pass.
#[derive(Debug, Clone)]
pub struct Trace {
    blocks: Vec<BlockTrace>,
    gap: Array1<f64>,
    gmax_idx: Option<Vec<usize>>,
    pub features: Array1<f64>,
}

#[derive(Debug, Clone)]
struct BlockTrace {
    h: usize,
    w: usize,
    cols: Array2<f64>,
    /// Normalized pre-affine conv output and its inverse standard deviation.
    xhat: Array2<f64>,
    inv_std: f64,
    /// Post-ReLU output before pooling.
    act: Array2<f64>,
    pool_idx: Option<Vec<usize>>,
}

impl Trace {
    /// Activation of the last convolutional layer (post-ReLU) with its
    /// spatial size.
    pub fn last_conv(&self) -> Option<(&Array2<f64>, usize, usize)> {
        self.blocks.last().map(|b| (&b.act, b.h, b.w))
    }
}

/// One branch of the feature extractor.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoder {
    pub branch: Modality,
    pub trunk: String,
    pub spec: TrunkSpec,
    pub params: ParamSet,
}

/// Builds an encoder from a registered trunk name with He-style (fan-in)
/// initialization drawn from `seed`.
/// Glorot std of the projection from `channels` pooled values to the
/// features. Fan-in scaling alone gives features of norm ~100, and the
/// first stage-two steps of a zero-initialized head then swing the logits
/// far enough to wreck the pre-trained encoders.
pub fn proj_init_std(channels: usize) -> f64 {
    (2.0 / (channels + FEATURE_DIM) as f64).sqrt()
}

pub fn build_encoder(branch: Modality, config: &ModelConfig, seed: u64) -> Result<Encoder> {
    let spec = TrunkSpec::lookup(&config.trunk)
        .ok_or_else(|| Error::config(format!("unknown trunk `{}` (known: {})", config.trunk, TRUNKS.join(", "))))?;
    Encoder::from_spec(branch, &config.trunk, spec, seed)
}

impl Encoder {
    pub fn from_spec(branch: Modality, trunk: &str, spec: TrunkSpec, seed: u64) -> Result<Encoder> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        let mut in_c = TENSOR_CHANNELS;
        for (i, &out_c) in spec.channels.iter().enumerate() {
            let fan_in = in_c * 9;
            params.push_normal(format!("conv{}.weight", i + 1), &[out_c, in_c, 3, 3], (2.0 / fan_in as f64).sqrt(), &mut rng);
            params.push_zeros(format!("conv{}.bias", i + 1), &[out_c]);
            params.push(format!("norm{}.gamma", i + 1), ndarray::ArrayD::ones(ndarray::IxDyn(&[out_c])));
            params.push_zeros(format!("norm{}.beta", i + 1), &[out_c]);
            in_c = out_c;
        }
        params.push_normal("proj.weight", &[FEATURE_DIM, in_c], proj_init_std(in_c), &mut rng);
        params.push_zeros("proj.bias", &[FEATURE_DIM]);
        Ok(Encoder { branch, trunk: trunk.to_string(), spec, params })
    }

    pub fn num_blocks(&self) -> usize {
        self.spec.channels.len()
    }

    /// Channels reaching the global pool.
    pub fn pooled_channels(&self) -> usize {
        self.spec.channels.last().copied().unwrap_or(TENSOR_CHANNELS)
    }

    /// Stable name of the layer Grad-CAM attaches to.
    pub fn last_conv_name(&self) -> Option<String> {
        (self.num_blocks() > 0).then(|| format!("conv{}", self.num_blocks()))
    }

    fn conv_weight(&self, block: usize) -> ArrayView2<'_, f64> {
        let w = self.params.get(PER_BLOCK * block);
        let out_c = w.shape()[0];
        let k = w.len() / out_c;
        w.view().into_shape_with_order((out_c, k)).expect("contiguous").into_dimensionality::<Ix2>().expect("2-d")
    }

    fn proj_index(&self) -> usize {
        PER_BLOCK * self.num_blocks()
    }

    /// Converts a preprocessed tensor to the stem output `(3, h*w)`.
    pub fn stem(&self, t: &Tensor224) -> (Array2<f64>, usize, usize) {
        let k = self.spec.stem_pool;
        let (oh, ow) = (TENSOR_SIZE / k, TENSOR_SIZE / k);
        let mut out = Array2::<f64>::zeros((TENSOR_CHANNELS, oh * ow));
        let norm = 1.0 / (k * k) as f64;
        let src = t.as_slice();
        for y in 0..oh {
            for dy in 0..k {
                let row = (y * k + dy) * TENSOR_SIZE;
                for x in 0..ow {
                    for dx in 0..k {
                        let base = (row + x * k + dx) * TENSOR_CHANNELS;
                        for c in 0..TENSOR_CHANNELS {
                            out[[c, y * ow + x]] += src[base + c] as f64 * norm;
                        }
                    }
                }
            }
        }
        out.mapv_inplace(|v| (v - INPUT_CENTER) * INPUT_SCALE);
        (out, oh, ow)
    }

    /// Forward pass from an arbitrary `(channels, h, w)` image; the stem
    /// pooling is applied first.
    pub fn forward_image(&self, image: &Array3<f64>) -> Result<Trace> {
        let (c, h, w) = image.dim();
        if c != TENSOR_CHANNELS {
            return Err(Error::contract(format!("encoder expects {TENSOR_CHANNELS} channels, got {c}")));
        }
        let flat = image.to_shape((c, h * w)).expect("contiguous").to_owned();
        let k = self.spec.stem_pool;
        let mut pooled = avg_pool(flat.view(), h, w, k);
        pooled.mapv_inplace(|v| (v - INPUT_CENTER) * INPUT_SCALE);
        self.forward_from_stem(pooled, h / k, w / k)
    }

    pub fn forward(&self, t: &Tensor224) -> Result<Trace> {
        let (x, h, w) = self.stem(t);
        self.forward_from_stem(x, h, w)
    }

    fn forward_from_stem(&self, mut x: Array2<f64>, mut h: usize, mut w: usize) -> Result<Trace> {
        if h == 0 || w == 0 {
            return Err(Error::contract("input too small for the stem"));
        }
        let mut blocks = Vec::with_capacity(self.num_blocks());
        for b in 0..self.num_blocks() {
            let cols = im2col3(x.view(), h, w);
            let weight = self.conv_weight(b);
            let bias = self.params.get(PER_BLOCK * b + 1);
            let mut z = weight.dot(&cols);
            for (mut row, bv) in z.rows_mut().into_iter().zip(bias.iter()) {
                row.mapv_inplace(|v| v + bv);
            }
            let (xhat, inv_std) = normalize(z);
            let gamma = self.params.get(PER_BLOCK * b + 2);
            let beta = self.params.get(PER_BLOCK * b + 3);
            let mut act = xhat.clone();
            for ((mut row, g), bt) in act.rows_mut().into_iter().zip(gamma.iter()).zip(beta.iter()) {
                row.mapv_inplace(|v| g * v + bt);
            }
            relu_inplace(&mut act);
            if act.iter().any(|v| !v.is_finite()) {
                return Err(Error::numeric(format!("{}/conv{}", self.branch.tag(), b + 1), "non-finite activation"));
            }
            let (next, nh, nw, pool_idx) = if self.spec.pool_after[b] {
                if h < 2 || w < 2 {
                    return Err(Error::contract(format!("input too small for pooling after conv{}", b + 1)));
                }
                let (p, idx) = max_pool2(act.view(), h, w);
                (p, h / 2, w / 2, Some(idx))
            } else {
                (act.clone(), h, w, None)
            };
            blocks.push(BlockTrace { h, w, cols, xhat, inv_std, act, pool_idx });
            x = next;
            h = nh;
            w = nw;
        }
        let (gap, gmax_idx) = match self.spec.global_pool {
            GlobalPool::Avg => (global_avg_pool(x.view()), None),
            GlobalPool::Max => {
                let (v, i) = global_max_pool(x.view());
                (v, Some(i))
            }
        };
        let features = self.project(&gap)?;
        Ok(Trace { blocks, gap, gmax_idx, features })
    }

    fn project(&self, gap: &Array1<f64>) -> Result<Array1<f64>> {
        let p = self.proj_index();
        let weight = self.params.get(p).view().into_dimensionality::<Ix2>().expect("2-d");
        let bias = self.params.get(p + 1).view().into_dimensionality::<ndarray::Ix1>().expect("1-d");
        let f = weight.dot(gap) + bias;
        if f.iter().any(|v| !v.is_finite()) {
            return Err(Error::numeric(format!("{}/proj", self.branch.tag()), "non-finite feature"));
        }
        Ok(f)
    }

    /// Re-runs the network downstream of the last conv activation.
    pub fn forward_from_last_conv(&self, act: &Array2<f64>, h: usize, w: usize) -> Result<Array1<f64>> {
        let last = self.num_blocks().checked_sub(1).ok_or_else(|| Error::config("trunk has no conv layer"))?;
        let pooled = if self.spec.pool_after[last] { max_pool2(act.view(), h, w).0 } else { act.clone() };
        match self.spec.global_pool {
            GlobalPool::Avg => self.project(&global_avg_pool(pooled.view())),
            GlobalPool::Max => self.project(&global_max_pool(pooled.view()).0),
        }
    }

    pub fn encode_one(&self, t: &Tensor224) -> Result<FeatureVector> {
        Ok(FeatureVector::from(self.forward(t)?.features))
    }

    /// Backward pass for one sample.
    ///
    /// Accumulates parameter gradients into `grads` when given, and returns
    /// the gradient with respect to the last conv activation.
    pub fn backward(&self, trace: &Trace, d_features: &Array1<f64>, mut grads: Option<&mut ParamSet>) -> Option<Array2<f64>> {
        let p = self.proj_index();
        let proj_w = self.params.get(p).view().into_dimensionality::<Ix2>().expect("2-d");
        if let Some(g) = grads.as_deref_mut() {
            let mut gw = g.get_mut(p).view_mut().into_dimensionality::<Ix2>().expect("2-d");
            for (mut row, df) in gw.rows_mut().into_iter().zip(d_features.iter()) {
                row.scaled_add(*df, &trace.gap);
            }
            let mut gb = g.get_mut(p + 1).view_mut().into_dimensionality::<ndarray::Ix1>().expect("1-d");
            gb += d_features;
        }
        let d_gap = proj_w.t().dot(d_features);
        let nb = self.num_blocks();
        if nb == 0 {
            return None;
        }

        // gradient of the map fed into GAP
        let last = &trace.blocks[nb - 1];
        let (gh, gw_) = if last.pool_idx.is_some() { (last.h / 2, last.w / 2) } else { (last.h, last.w) };
        let z = (gh * gw_) as f64;
        let mut d = Array2::<f64>::zeros((d_gap.len(), gh * gw_));
        match &trace.gmax_idx {
            None => {
                for (mut row, g) in d.rows_mut().into_iter().zip(d_gap.iter()) {
                    row.fill(g / z);
                }
            }
            Some(idx) => {
                for (c, (&i, g)) in idx.iter().zip(d_gap.iter()).enumerate() {
                    d[[c, i]] = *g;
                }
            }
        }

        let mut captured = None;
        for b in (0..nb).rev() {
            let bt = &trace.blocks[b];
            if let Some(idx) = &bt.pool_idx {
                d = max_unpool2(d.view(), idx, bt.h, bt.w);
            }
            if b == nb - 1 {
                captured = Some(d.clone());
            }
            // ReLU mask
            ndarray::Zip::from(&mut d).and(&bt.act).for_each(|g, a| {
                if *a <= 0.0 {
                    *g = 0.0;
                }
            });
            if grads.is_none() && b == nb - 1 {
                break;
            }
            // affine and normalization
            let base = PER_BLOCK * b;
            if let Some(g) = grads.as_deref_mut() {
                let mut gg = g.get_mut(base + 2).view_mut().into_dimensionality::<ndarray::Ix1>().expect("1-d");
                gg += &(&d * &bt.xhat).sum_axis(ndarray::Axis(1));
                let mut gbeta = g.get_mut(base + 3).view_mut().into_dimensionality::<ndarray::Ix1>().expect("1-d");
                gbeta += &d.sum_axis(ndarray::Axis(1));
            }
            let gamma = self.params.get(base + 2);
            for (mut row, gv) in d.rows_mut().into_iter().zip(gamma.iter()) {
                row.mapv_inplace(|v| v * gv);
            }
            let dz = normalize_backward(&d, &bt.xhat, bt.inv_std);
            if let Some(g) = grads.as_deref_mut() {
                let gw = dz.dot(&bt.cols.t());
                let mut target = g.get_mut(base).view_mut();
                let flat = target.as_slice_mut().expect("contiguous");
                for (dst, src) in flat.iter_mut().zip(gw.iter()) {
                    *dst += src;
                }
                let mut gb = g.get_mut(base + 1).view_mut().into_dimensionality::<ndarray::Ix1>().expect("1-d");
                gb += &dz.sum_axis(ndarray::Axis(1));
            }
            if b > 0 {
                let weight = self.conv_weight(b);
                let dcols = weight.t().dot(&dz);
                let in_c = weight.ncols() / 9;
                d = col2im3(dcols.view(), in_c, bt.h, bt.w);
            }
        }
        captured
    }
}

const INPUT_CENTER: f64 = 0.5;
const INPUT_SCALE: f64 = 4.0;

/// Parameters per conv block: weight, bias, norm gain, norm shift.
const PER_BLOCK: usize = 4;
const NORM_EPS: f64 = 1e-5;

/// Standardizes the whole `(C, N)` map of one sample (single-group
/// normalization, no batch statistics).
fn normalize(mut z: Array2<f64>) -> (Array2<f64>, f64) {
    let n = z.len() as f64;
    let mean = z.sum() / n;
    let var = z.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let inv_std = 1.0 / (var + NORM_EPS).sqrt();
    z.mapv_inplace(|v| (v - mean) * inv_std);
    (z, inv_std)
}

/// Gradient through [`normalize`] given the gradient at its output.
fn normalize_backward(dxhat: &Array2<f64>, xhat: &Array2<f64>, inv_std: f64) -> Array2<f64> {
    let n = dxhat.len() as f64;
    let mean_d = dxhat.sum() / n;
    let mean_dx = (dxhat * xhat).sum() / n;
    let mut out = dxhat - mean_d;
    ndarray::Zip::from(&mut out).and(xhat).for_each(|o, x| *o = (*o - x * mean_dx) * inv_std);
    out
}

/// Encodes a non-empty batch; rows are independent of each other.
pub fn encode(encoder: &Encoder, batch: &[&Tensor224]) -> Result<Vec<FeatureVector>> {
    if batch.is_empty() {
        return Err(Error::contract("encode needs a non-empty batch"));
    }
    batch.iter().map(|t| encoder.encode_one(t)).collect()
}

/// Lays a `(channels, h*w)` activation out as `(channels, h, w)`.
pub fn to_chw(act: &Array2<f64>, h: usize, w: usize) -> Array3<f64> {
    act.to_shape((act.nrows(), h, w)).expect("sizes agree").to_owned()
}
