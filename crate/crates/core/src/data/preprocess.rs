use std::path::Path;

use image::DynamicImage;

use super::{ImageRecord, PixelSource};
use crate::error::{Error, Result};

pub const TENSOR_SIZE: usize = 224;
pub const TENSOR_CHANNELS: usize = 3;
const TENSOR_LEN: usize = TENSOR_SIZE * TENSOR_SIZE * TENSOR_CHANNELS;

/// A 224×224×3 image with values in [0, 1], stored row-major HWC.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor224 {
    data: Vec<f32>,
}

impl Tensor224 {
    pub fn from_vec(data: Vec<f32>) -> Result<Self> {
        if data.len() != TENSOR_LEN {
            return Err(Error::contract(format!(
                "tensor needs {TENSOR_LEN} values (224x224x3), got {}",
                data.len()
            )));
        }
        if let Some(bad) = data.iter().find(|v| !v.is_finite() || **v < 0.0 || **v > 1.0) {
            return Err(Error::contract(format!("tensor value {bad} outside [0,1]")));
        }
        Ok(Tensor224 { data })
    }

    pub fn filled(value: f32) -> Self {
        Tensor224 {
            data: vec![value.clamp(0.0, 1.0); TENSOR_LEN],
        }
    }

    pub fn shape(&self) -> [usize; 3] {
        [TENSOR_SIZE, TENSOR_SIZE, TENSOR_CHANNELS]
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f32 {
        self.data[(y * TENSOR_SIZE + x) * TENSOR_CHANNELS + c]
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    /// Values are clamped to [0, 1] and non-finite entries become 0.
    pub(crate) fn from_raw_clamped(mut data: Vec<f32>) -> Self {
        debug_assert_eq!(data.len(), TENSOR_LEN);
        for v in &mut data {
            *v = if v.is_finite() { v.clamp(0.0, 1.0) } else { 0.0 };
        }
        Tensor224 { data }
    }

    pub fn to_rgb_image(&self) -> image::RgbImage {
        let bytes = self.data.iter().map(|v| (v * 255.0).round() as u8).collect();
        image::RgbImage::from_raw(TENSOR_SIZE as u32, TENSOR_SIZE as u32, bytes)
            .expect("buffer length matches dimensions")
    }
}

/// Bilinear resize of an interleaved `h × w × channels` buffer.
///
/// Uses half-pixel centers (`src = (dst + 0.5) * scale - 0.5`) with edge
/// clamping, so resizing to the same size is the identity.
pub fn bilinear_resize(
    src: &[f32],
    h: usize,
    w: usize,
    channels: usize,
    out_h: usize,
    out_w: usize,
) -> Vec<f32> {
    assert_eq!(src.len(), h * w * channels, "source buffer size");
    let mut out = vec![0.0f32; out_h * out_w * channels];
    let taps = |out_n: usize, n: usize| -> Vec<(usize, usize, f32)> {
        let scale = n as f64 / out_n as f64;
        (0..out_n)
            .map(|i| {
                let s = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, (n - 1) as f64);
                let i0 = s.floor() as usize;
                let i1 = (i0 + 1).min(n - 1);
                (i0, i1, (s - i0 as f64) as f32)
            })
            .collect()
    };
    let ys = taps(out_h, h);
    let xs = taps(out_w, w);
    for (oy, &(y0, y1, fy)) in ys.iter().enumerate() {
        for (ox, &(x0, x1, fx)) in xs.iter().enumerate() {
            for c in 0..channels {
                let p = |y: usize, x: usize| src[(y * w + x) * channels + c];
                let lerp = |a: f32, b: f32, t: f32| a + (b - a) * t;
                let top = lerp(p(y0, x0), p(y0, x1), fx);
                let bottom = lerp(p(y1, x0), p(y1, x1), fx);
                out[(oy * out_w + ox) * channels + c] = lerp(top, bottom, fy);
            }
        }
    }
    out
}

fn decode(record: &ImageRecord, base_dir: Option<&Path>) -> Result<DynamicImage> {
    let input_err = |reason: String| Error::Input {
        id: record.id.clone(),
        reason,
    };
    let img = match &record.source {
        PixelSource::Memory(img) => DynamicImage::ImageRgb8((**img).clone()),
        PixelSource::Path(p) => {
            let path = match base_dir {
                Some(base) if p.is_relative() => base.join(p),
                _ => p.clone(),
            };
            image::open(&path).map_err(|e| input_err(format!("cannot decode {}: {e}", path.display())))?
        }
    };
    if img.width() == 0 || img.height() == 0 {
        return Err(input_err("image has no pixels".into()));
    }
    Ok(img)
}

/// Decodes, converts to RGB (grayscale is replicated) and resizes to 224×224.
pub fn preprocess(record: &ImageRecord, base_dir: Option<&Path>) -> Result<Tensor224> {
    let img = decode(record, base_dir)?;
    let rgb = img.to_rgb32f();
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    let resized = bilinear_resize(rgb.as_raw(), h, w, 3, TENSOR_SIZE, TENSOR_SIZE);
    Ok(Tensor224::from_raw_clamped(resized))
}
