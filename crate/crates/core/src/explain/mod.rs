//! Grad-CAM heat maps on the last conv layer of each branch, overlay
//! rendering and a localization score against planted lesion boxes.

use ndarray::{Array1, Array2, Array3, Axis};
use serde::{Deserialize, Serialize};

use crate::data::{bilinear_resize, BoundingBox, DiseaseLabel, LoadedDataset, Modality, Split, Tensor224, TENSOR_SIZE};
use crate::error::{Error, Result};
use crate::model::{to_chw, DiagnosisModel, Encoder, FEATURE_DIM};

/// Activation of the last conv layer and the gradient of one class score
/// with respect to it, both laid out `(k, h, w)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationCapture {
    pub branch: Modality,
    pub layer: String,
    pub activation: Array3<f64>,
    pub gradient: Array3<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeatMap {
    pub branch: Modality,
    pub class: usize,
    /// Rectified map at the conv layer's resolution, `(h, w)`.
    pub map: Array2<f64>,
    /// Pooled channel weights, one per conv channel.
    pub weights: Vec<f64>,
}

impl HeatMap {
    pub fn max(&self) -> f64 {
        self.map.iter().cloned().fold(0.0, f64::max)
    }

    pub fn total(&self) -> f64 {
        self.map.sum()
    }

    /// Bilinear upsampling (half-pixel centers) to `out_h × out_w`.
    pub fn upsample(&self, out_h: usize, out_w: usize) -> Array2<f64> {
        let (h, w) = self.map.dim();
        let src: Vec<f32> = self.map.iter().map(|v| *v as f32).collect();
        let up = bilinear_resize(&src, h, w, 1, out_h, out_w);
        Array2::from_shape_vec((out_h, out_w), up.into_iter().map(f64::from).collect()).expect("sized by resize")
    }
}

/// Channel weights are the spatial mean of the gradient; the map is the
/// rectified weighted sum of activation channels.
pub fn gradcam_from_capture(capture: &ActivationCapture, class: usize) -> Result<HeatMap> {
    if capture.activation.dim() != capture.gradient.dim() {
        return Err(Error::contract("activation and gradient shapes differ"));
    }
    let (k, h, w) = capture.activation.dim();
    let z = (h * w) as f64;
    let weights: Array1<f64> = capture.gradient.sum_axis(Axis(2)).sum_axis(Axis(1)) / z;
    let mut map = Array2::<f64>::zeros((h, w));
    for c in 0..k {
        map.scaled_add(weights[c], &capture.activation.index_axis(Axis(0), c));
    }
    map.mapv_inplace(|v| v.max(0.0));
    if map.iter().any(|v| !v.is_finite()) {
        return Err(Error::numeric(format!("{}/{}", capture.branch.tag(), capture.layer), "non-finite heat map"));
    }
    Ok(HeatMap { branch: capture.branch, class, map, weights: weights.to_vec() })
}

fn check_class(class: usize) -> Result<()> {
    if class >= DiseaseLabel::COUNT {
        return Err(Error::contract(format!("class {class} out of range 0..{}", DiseaseLabel::COUNT)));
    }
    Ok(())
}

fn layer_name(enc: &Encoder) -> Result<String> {
    enc.last_conv_name()
        .ok_or_else(|| Error::config(format!("trunk `{}` has no conv layer to attach Grad-CAM to", enc.trunk)))
}

/// Captures last-conv activations and the gradient of the raw class score
/// `s^c` for both branches. The model is only read.
pub fn capture(
    model: &DiagnosisModel,
    fundus: &Tensor224,
    oct: &Tensor224,
    class: usize,
) -> Result<(ActivationCapture, ActivationCapture)> {
    check_class(class)?;
    let names = (layer_name(&model.fundus)?, layer_name(&model.oct)?);
    let tf = model.fundus.forward(fundus)?;
    let to = model.oct.forward(oct)?;
    let mut fused = tf.features.to_vec();
    fused.extend(to.features.iter());
    let mut ds = Array1::zeros(DiseaseLabel::COUNT);
    ds[class] = 1.0;
    let dfused = model.head.backward(&fused, &ds, None);
    let df = dfused.slice(ndarray::s![..FEATURE_DIM]).to_owned();
    let d_o = dfused.slice(ndarray::s![FEATURE_DIM..]).to_owned();

    let one = |enc: &Encoder, trace: &crate::model::Trace, d: &Array1<f64>, layer: String| -> Result<ActivationCapture> {
        let (act, h, w) = trace.last_conv().ok_or_else(|| Error::config("no conv activation captured"))?;
        let grad = enc.backward(trace, d, None).ok_or_else(|| Error::config("no conv gradient captured"))?;
        Ok(ActivationCapture {
            branch: enc.branch,
            layer,
            activation: to_chw(act, h, w),
            gradient: to_chw(&grad, h, w),
        })
    };
    Ok((one(&model.fundus, &tf, &df, names.0)?, one(&model.oct, &to, &d_o, names.1)?))
}

/// Grad-CAM maps of class `class` for the fundus and OCT branches.
pub fn gradcam(model: &DiagnosisModel, fundus: &Tensor224, oct: &Tensor224, class: usize) -> Result<(HeatMap, HeatMap)> {
    let (cf, co) = capture(model, fundus, oct, class)?;
    Ok((gradcam_from_capture(&cf, class)?, gradcam_from_capture(&co, class)?))
}

/// Raw class score with `branch`'s last conv activation replaced by
/// `activation` (`(k, h*w)` layout); the other branch runs normally.
pub fn class_score_with_activation(
    model: &DiagnosisModel,
    fundus: &Tensor224,
    oct: &Tensor224,
    branch: Modality,
    activation: &Array2<f64>,
    h: usize,
    w: usize,
    class: usize,
) -> Result<f64> {
    check_class(class)?;
    let (ff, fo) = match branch {
        Modality::Fundus => (model.fundus.forward_from_last_conv(activation, h, w)?, model.oct.forward(oct)?.features),
        Modality::Oct => (model.fundus.forward(fundus)?.features, model.oct.forward_from_last_conv(activation, h, w)?),
    };
    let mut fused = ff.to_vec();
    fused.extend(fo.iter());
    Ok(model.head.scores(&fused)?[class])
}

/// Jet colormap: dark blue at 0 through cyan, yellow to dark red at 1.
pub fn jet(t: f32) -> [f32; 3] {
    let t = t.clamp(0.0, 1.0);
    let ramp = |c: f32| (1.5 - (4.0 * t - c).abs()).clamp(0.0, 1.0);
    [ramp(3.0), ramp(2.0), ramp(1.0)]
}

/// Blends the min-max normalized, bilinearly upsampled map (jet colormap)
/// over the preprocessed image: `(1 − α)·image + α·jet(map)`.
///
/// An all-zero map is fully transparent; a constant non-zero map
/// normalizes to 0 everywhere.
pub fn render_overlay(map: &HeatMap, original: &Tensor224, alpha: f64) -> Result<Tensor224> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::contract(format!("overlay alpha {alpha} outside [0,1]")));
    }
    let (lo, hi) = map.map.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(*v), hi.max(*v)));
    if hi <= 0.0 {
        return Ok(original.clone());
    }
    let (h, w) = map.map.dim();
    let norm: Vec<f32> = map
        .map
        .iter()
        .map(|v| if hi > lo { ((v - lo) / (hi - lo)) as f32 } else { 0.0 })
        .collect();
    let up = bilinear_resize(&norm, h, w, 1, TENSOR_SIZE, TENSOR_SIZE);
    let a = alpha as f32;
    let src = original.as_slice();
    let mut out = Vec::with_capacity(src.len());
    for (i, t) in up.iter().enumerate() {
        let color = jet(*t);
        for c in 0..3 {
            out.push((1.0 - a) * src[3 * i + c] + a * color[c]);
        }
    }
    Tensor224::from_vec(out.into_iter().map(|v| v.clamp(0.0, 1.0)).collect())
}

/// Fraction of heat mass inside the union of the boxes dilated 2× about
/// their centers, with the map upsampled to the original `height × width`
/// pixel grid. Zero when the map carries no mass.
pub fn localization_score(map: &HeatMap, boxes: &[BoundingBox], height: usize, width: usize) -> f64 {
    let up = map.upsample(height, width);
    let total = up.sum();
    if total <= 0.0 {
        return 0.0;
    }
    let dilated: Vec<BoundingBox> = boxes.iter().map(|b| b.dilate(2.0)).collect();
    let inside: f64 = up
        .indexed_iter()
        .filter(|((y, x), _)| {
            let (cx, cy) = (*x as f64 + 0.5, *y as f64 + 0.5);
            dilated.iter().any(|b| b.contains(cx, cy))
        })
        .map(|(_, v)| *v)
        .sum();
    (inside / total).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalizationEntry {
    pub group_id: String,
    pub branch: Modality,
    pub class: DiseaseLabel,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalizationSummary {
    pub entries: Vec<LocalizationEntry>,
    pub median: Option<f64>,
}

/// Median of a sample; the mean of the two middle values for even sizes.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { (v[n / 2 - 1] + v[n / 2]) / 2.0 })
}

/// Localization of the true-class heat map on correctly classified groups
/// of a split. A branch contributes one entry when it holds planted evidence
/// for the true class, scored against the boxes of those evidence signs
/// only; distractor lesions and Other groups have no right answer.
pub fn evaluate_localization(model: &DiagnosisModel, data: &LoadedDataset, split: Split) -> Result<LocalizationSummary> {
    let mut entries = Vec::new();
    for g in data.split(split) {
        if g.disease == DiseaseLabel::Other || g.lesion_boxes.is_none() {
            continue;
        }
        let (tf, to) = (data.tensor(g, Modality::Fundus)?, data.tensor(g, Modality::Oct)?);
        if model.predict(tf, to)? != g.disease {
            continue;
        }
        let (hf, ho) = gradcam(model, tf, to, g.disease.index())?;
        for (map, branch) in [(hf, Modality::Fundus), (ho, Modality::Oct)] {
            let boxes = g.evidence_boxes(branch);
            if boxes.is_empty() {
                continue;
            }
            let (width, height) = original_size(data, g, branch)?;
            entries.push(LocalizationEntry {
                group_id: g.id.clone(),
                branch,
                class: g.disease,
                score: localization_score(&map, &boxes, height, width),
            });
        }
    }
    let median = median(&entries.iter().map(|e| e.score).collect::<Vec<_>>());
    Ok(LocalizationSummary { entries, median })
}

/// Width and height of a record's image before preprocessing.
pub fn original_size(data: &LoadedDataset, g: &crate::data::BiModalGroup, branch: Modality) -> Result<(usize, usize)> {
    if let Some(info) = &data.manifest.generator {
        let n = info.spec.image_size as usize;
        return Ok((n, n));
    }
    let rec = g.record(branch);
    match &rec.source {
        crate::data::PixelSource::Memory(img) => Ok((img.width() as usize, img.height() as usize)),
        crate::data::PixelSource::Path(p) => {
            let path = match &data.root {
                Some(root) if p.is_relative() => root.join(p),
                _ => p.clone(),
            };
            let (w, h) = image::image_dimensions(&path)?;
            Ok((w as usize, h as usize))
        }
    }
}
