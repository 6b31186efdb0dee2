use rand::Rng;

use super::preprocess::{Tensor224, TENSOR_CHANNELS, TENSOR_SIZE};

pub const MAX_ROTATION_DEG: f64 = 15.0;
pub const CONTRAST_RANGE: (f64, f64) = (0.8, 1.25);
const APPLY_PROB: f64 = 0.5;

/// The random choices behind one augmentation, drawn in a fixed order
/// (rotation, flip, contrast) so a seeded stream maps to one outcome.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct AugmentDraws {
    pub rotation_deg: Option<f64>,
    pub flip: bool,
    pub contrast: Option<f64>,
}

impl AugmentDraws {
    pub fn sample<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let rotate = rng.random_bool(APPLY_PROB);
        let angle = rng.random_range(-MAX_ROTATION_DEG..=MAX_ROTATION_DEG);
        let flip = rng.random_bool(APPLY_PROB);
        let contrast = rng.random_bool(APPLY_PROB);
        let scale = rng.random_range(CONTRAST_RANGE.0..=CONTRAST_RANGE.1);
        AugmentDraws {
            rotation_deg: rotate.then_some(angle),
            flip,
            contrast: contrast.then_some(scale),
        }
    }

    pub fn is_identity(&self) -> bool {
        self.rotation_deg.is_none() && !self.flip && self.contrast.is_none()
    }

    pub fn apply(&self, t: &Tensor224) -> Tensor224 {
        if self.is_identity() {
            return t.clone();
        }
        let mut data = t.as_slice().to_vec();
        if let Some(deg) = self.rotation_deg {
            data = rotate(&data, deg);
        }
        if self.flip {
            flip_horizontal(&mut data);
        }
        if let Some(scale) = self.contrast {
            adjust_contrast(&mut data, scale as f32);
        }
        Tensor224::from_raw_clamped(data)
    }
}

/// Random rotation (±15°), horizontal flip and contrast scaling in
/// [0.8, 1.25] about the mean, each with probability 0.5. Only meant for
/// training-split samples; callers own that rule.
pub fn augment<R: Rng + ?Sized>(t: &Tensor224, rng: &mut R) -> Tensor224 {
    AugmentDraws::sample(rng).apply(t)
}

fn rotate(src: &[f32], degrees: f64) -> Vec<f32> {
    let n = TENSOR_SIZE;
    let c = TENSOR_CHANNELS;
    let (sin, cos) = degrees.to_radians().sin_cos();
    let center = (n as f64 - 1.0) / 2.0;
    let mut out = vec![0.0f32; src.len()];
    for y in 0..n {
        for x in 0..n {
            // inverse map: destination pixel -> source coordinate
            let dx = x as f64 - center;
            let dy = y as f64 - center;
            let sx = cos * dx + sin * dy + center;
            let sy = -sin * dx + cos * dy + center;
            if sx < 0.0 || sy < 0.0 || sx > (n - 1) as f64 || sy > (n - 1) as f64 {
                continue;
            }
            let x0 = sx.floor() as usize;
            let y0 = sy.floor() as usize;
            let x1 = (x0 + 1).min(n - 1);
            let y1 = (y0 + 1).min(n - 1);
            let fx = (sx - x0 as f64) as f32;
            let fy = (sy - y0 as f64) as f32;
            for ch in 0..c {
                let p = |yy: usize, xx: usize| src[(yy * n + xx) * c + ch];
                let top = p(y0, x0) * (1.0 - fx) + p(y0, x1) * fx;
                let bottom = p(y1, x0) * (1.0 - fx) + p(y1, x1) * fx;
                out[(y * n + x) * c + ch] = top * (1.0 - fy) + bottom * fy;
            }
        }
    }
    out
}

fn flip_horizontal(data: &mut [f32]) {
    let n = TENSOR_SIZE;
    let c = TENSOR_CHANNELS;
    for row in data.chunks_exact_mut(n * c) {
        for x in 0..n / 2 {
            for ch in 0..c {
                row.swap(x * c + ch, (n - 1 - x) * c + ch);
            }
        }
    }
}

fn adjust_contrast(data: &mut [f32], scale: f32) {
    let mean = (data.iter().map(|v| *v as f64).sum::<f64>() / data.len() as f64) as f32;
    for v in data.iter_mut() {
        *v = mean + scale * (*v - mean);
    }
}
