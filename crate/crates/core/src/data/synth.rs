//! Deterministic synthetic bi-modal dataset.
//!
//! Fundus-like images are an orange disc with an optic disc, vessels and
//! noise; OCT-like images are grayscale layered bands with a bright RPE line
//! and speckle. Each of the 10 lesion signs is a distinct motif planted at a
//! random position; sign flags are exactly the set of planted motifs and the
//! diagnosis follows [`DiseaseLabel::from_signs`].

use std::collections::BTreeSet;
use std::sync::Arc;

use image::RgbImage;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{
    split_dataset, BiModalGroup, BoundingBox, DatasetManifest, DiseaseLabel, GeneratorInfo, ImageRecord,
    LesionBox, Modality, PixelSource, SignLabelVector, SIGNS_PER_MODALITY,
};
use crate::error::{Error, Result};
use crate::seed::{rng_for, sha256_hex};

/// Visual motif used to plant one lesion sign.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Motif {
    /// Cluster of dark red dots.
    DarkRedDots,
    /// Scattered small bright yellow specks.
    YellowSpecks,
    /// Pale yellow annulus.
    PaleRing,
    /// Filled orange diamond.
    OrangeDiamond,
    /// Large dark maroon ellipse.
    MaroonEllipse,
    /// Pair of black round cysts.
    DarkCysts,
    /// Flat dark lens above the RPE line.
    DarkLens,
    /// Bright dome outline over a dark pocket.
    BrightDome,
    /// Bright downward wedge below the RPE line.
    BrightWedge,
    /// Bright plus-shaped lesion inside the retina band.
    BrightCross,
}

impl Motif {
    pub const DEFAULT_CATALOG: [Motif; 2 * SIGNS_PER_MODALITY] = [
        Motif::DarkRedDots,
        Motif::YellowSpecks,
        Motif::PaleRing,
        Motif::OrangeDiamond,
        Motif::MaroonEllipse,
        Motif::DarkCysts,
        Motif::DarkLens,
        Motif::BrightDome,
        Motif::BrightWedge,
        Motif::BrightCross,
    ];

    /// Half extents (x, y) at a 256-pixel image, before [`MOTIF_SCALE`].
    fn half_extent(self) -> (f64, f64) {
        match self {
            Motif::DarkRedDots => (18.0, 18.0),
            Motif::YellowSpecks => (19.0, 19.0),
            Motif::PaleRing => (16.0, 16.0),
            Motif::OrangeDiamond => (17.0, 17.0),
            Motif::MaroonEllipse => (23.0, 14.0),
            Motif::DarkCysts => (20.0, 10.0),
            Motif::DarkLens => (25.0, 9.0),
            Motif::BrightDome => (22.0, 16.0),
            Motif::BrightWedge => (17.0, 12.0),
            Motif::BrightCross => (15.0, 15.0),
        }
    }
}

/// Global size multiplier for planted motifs.
const MOTIF_SCALE: f64 = 1.4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub train: usize,
    pub valid: usize,
    pub test: usize,
    /// Side length of the generated (square) images before preprocessing.
    #[serde(default = "default_image_size")]
    pub image_size: u32,
    #[serde(default = "default_catalog")]
    pub markers: [Motif; 2 * SIGNS_PER_MODALITY],
    #[serde(default = "default_fundus_prevalence")]
    pub fundus_prevalence: [f64; SIGNS_PER_MODALITY],
    #[serde(default = "default_oct_prevalence")]
    pub oct_prevalence: [f64; SIGNS_PER_MODALITY],
    /// Standard deviation of additive pixel noise on the [0,1] scale.
    #[serde(default = "default_noise")]
    pub noise: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_image_size() -> u32 {
    256
}
fn default_catalog() -> [Motif; 10] {
    Motif::DEFAULT_CATALOG
}
fn default_fundus_prevalence() -> [f64; 5] {
    [0.3, 0.3, 0.3, 0.2, 0.12]
}
fn default_oct_prevalence() -> [f64; 5] {
    [0.12, 0.12, 0.3, 0.2, 0.3]
}
fn default_noise() -> f64 {
    0.04
}

impl SyntheticSpec {
    /// Desk-scale profile: 600/100/100 groups.
    pub fn desk(seed: u64) -> Self {
        Self::with_counts(600, 100, 100, seed)
    }

    pub fn with_counts(train: usize, valid: usize, test: usize, seed: u64) -> Self {
        SyntheticSpec {
            train,
            valid,
            test,
            image_size: default_image_size(),
            markers: default_catalog(),
            fundus_prevalence: default_fundus_prevalence(),
            oct_prevalence: default_oct_prevalence(),
            noise: default_noise(),
            seed,
        }
    }

    pub fn total(&self) -> usize {
        self.train + self.valid + self.test
    }

    pub fn validate(&self) -> Result<()> {
        if self.train == 0 || self.valid == 0 || self.test == 0 {
            return Err(Error::config("synthetic split counts must all be positive"));
        }
        for (name, p) in self
            .fundus_prevalence
            .iter()
            .map(|p| ("fundus_prevalence", p))
            .chain(self.oct_prevalence.iter().map(|p| ("oct_prevalence", p)))
        {
            if !(0.0..=1.0).contains(p) {
                return Err(Error::config(format!("{name} value {p} outside [0,1]")));
            }
        }
        let distinct: BTreeSet<_> = self.markers.iter().collect();
        if distinct.len() != self.markers.len() {
            return Err(Error::config("marker catalog must contain 10 distinct motifs"));
        }
        if self.image_size < 64 {
            return Err(Error::config("image_size must be at least 64"));
        }
        if !self.noise.is_finite() || self.noise < 0.0 {
            return Err(Error::config("noise must be a finite non-negative number"));
        }
        Ok(())
    }

    pub fn hash(&self) -> String {
        sha256_hex(serde_json::to_string(self).expect("spec serializes").as_bytes())
    }
}

/// Generates the full dataset in memory. Same spec (including seed) gives
/// byte-identical manifests and pixel buffers.
pub fn generate_synthetic_dataset(spec: &SyntheticSpec) -> Result<DatasetManifest> {
    spec.validate()?;
    let total = spec.total();
    let mut groups = Vec::with_capacity(total);
    for i in 0..total {
        let id = format!("g{i:05}");
        let mut rng = rng_for(spec.seed, 0, &id);
        groups.push(generate_group(spec, &id, i, &mut rng));
    }
    let mut manifest = DatasetManifest::new(groups);
    manifest.generator = Some(GeneratorInfo {
        seed: spec.seed,
        spec_hash: spec.hash(),
        spec: spec.clone(),
    });
    let n = total as f64;
    let train = spec.train as f64 / n;
    let valid = spec.valid as f64 / n;
    split_dataset(&manifest, (train, valid, 1.0 - train - valid), spec.seed)
}

fn generate_group(spec: &SyntheticSpec, id: &str, index: usize, rng: &mut ChaCha8Rng) -> BiModalGroup {
    let mut fundus_flags = [false; SIGNS_PER_MODALITY];
    let mut oct_flags = [false; SIGNS_PER_MODALITY];
    for (flag, p) in fundus_flags.iter_mut().zip(spec.fundus_prevalence) {
        *flag = rng.random_bool(p);
    }
    for (flag, p) in oct_flags.iter_mut().zip(spec.oct_prevalence) {
        *flag = rng.random_bool(p);
    }
    let size = spec.image_size as usize;
    let mut boxes = Vec::new();

    let mut fundus = Canvas::new(size);
    let layout = paint_fundus_background(&mut fundus, rng);
    let mut placed: Vec<BoundingBox> = vec![layout.disc_box];
    for (sign, on) in fundus_flags.iter().enumerate() {
        if *on {
            let motif = spec.markers[sign];
            let bbox = place_fundus_marker(&mut fundus, motif, &placed, rng);
            placed.push(bbox);
            boxes.push(LesionBox { modality: Modality::Fundus, sign, bbox });
        }
    }
    fundus.add_noise(spec.noise, rng);

    let mut oct = Canvas::new(size);
    let bands = paint_oct_background(&mut oct, rng);
    let mut placed: Vec<BoundingBox> = Vec::new();
    for (sign, on) in oct_flags.iter().enumerate() {
        if *on {
            let motif = spec.markers[SIGNS_PER_MODALITY + sign];
            let bbox = place_oct_marker(&mut oct, motif, &bands, &placed, rng);
            placed.push(bbox);
            boxes.push(LesionBox { modality: Modality::Oct, sign, bbox });
        }
    }
    oct.add_noise(spec.noise, rng);
    oct.to_gray();

    let eye_id = format!("eye{index:05}");
    let fundus_signs = SignLabelVector::new(Modality::Fundus, fundus_flags);
    let oct_signs = SignLabelVector::new(Modality::Oct, oct_flags);
    let disease = DiseaseLabel::from_signs(&fundus_signs, &oct_signs);
    BiModalGroup {
        id: id.to_string(),
        fundus: ImageRecord {
            id: format!("{id}_F"),
            modality: Modality::Fundus,
            source: PixelSource::Memory(Arc::new(fundus.into_image())),
            eye_id: eye_id.clone(),
        },
        oct: ImageRecord {
            id: format!("{id}_O"),
            modality: Modality::Oct,
            source: PixelSource::Memory(Arc::new(oct.into_image())),
            eye_id,
        },
        fundus_signs,
        oct_signs,
        disease,
        lesion_boxes: Some(boxes),
    }
}

type Rgb = [f32; 3];

struct Canvas {
    size: usize,
    px: Vec<Rgb>,
}

impl Canvas {
    fn new(size: usize) -> Self {
        Canvas { size, px: vec![[0.0; 3]; size * size] }
    }

    fn scale(&self) -> f64 {
        self.size as f64 / 256.0
    }

    fn span(&self, lo: f64, hi: f64) -> std::ops::Range<usize> {
        let lo = lo.floor().max(0.0) as usize;
        let hi = (hi.ceil().max(0.0) as usize + 1).min(self.size);
        lo..hi.max(lo)
    }

    /// Paints every pixel whose center satisfies `inside`.
    fn fill_where(&mut self, bbox: (f64, f64, f64, f64), color: Rgb, inside: impl Fn(f64, f64) -> bool) {
        let (x0, y0, x1, y1) = bbox;
        for y in self.span(y0, y1) {
            for x in self.span(x0, x1) {
                if inside(x as f64 + 0.5, y as f64 + 0.5) {
                    self.px[y * self.size + x] = color;
                }
            }
        }
    }

    fn disc(&mut self, cx: f64, cy: f64, r: f64, color: Rgb) {
        self.fill_where((cx - r, cy - r, cx + r, cy + r), color, |x, y| {
            (x - cx).powi(2) + (y - cy).powi(2) <= r * r
        });
    }

    fn ellipse(&mut self, cx: f64, cy: f64, rx: f64, ry: f64, color: Rgb) {
        self.fill_where((cx - rx, cy - ry, cx + rx, cy + ry), color, |x, y| {
            ((x - cx) / rx).powi(2) + ((y - cy) / ry).powi(2) <= 1.0
        });
    }

    fn triangle(&mut self, a: (f64, f64), b: (f64, f64), c: (f64, f64), color: Rgb) {
        let edge = |p: (f64, f64), q: (f64, f64), x: f64, y: f64| (q.0 - p.0) * (y - p.1) - (q.1 - p.1) * (x - p.0);
        let x0 = a.0.min(b.0).min(c.0);
        let x1 = a.0.max(b.0).max(c.0);
        let y0 = a.1.min(b.1).min(c.1);
        let y1 = a.1.max(b.1).max(c.1);
        self.fill_where((x0, y0, x1, y1), color, |x, y| {
            let d1 = edge(a, b, x, y);
            let d2 = edge(b, c, x, y);
            let d3 = edge(c, a, x, y);
            let neg = d1 < 0.0 || d2 < 0.0 || d3 < 0.0;
            let pos = d1 > 0.0 || d2 > 0.0 || d3 > 0.0;
            !(neg && pos)
        });
    }

    fn rect(&mut self, x0: f64, y0: f64, x1: f64, y1: f64, color: Rgb) {
        self.fill_where((x0, y0, x1, y1), color, |x, y| x >= x0 && x < x1 && y >= y0 && y < y1);
    }

    /// Quadratic Bézier stroke.
    fn curve(&mut self, p0: (f64, f64), p1: (f64, f64), p2: (f64, f64), width: f64, color: Rgb) {
        let steps = 80;
        for i in 0..=steps {
            let t = i as f64 / steps as f64;
            let u = 1.0 - t;
            let x = u * u * p0.0 + 2.0 * u * t * p1.0 + t * t * p2.0;
            let y = u * u * p0.1 + 2.0 * u * t * p1.1 + t * t * p2.1;
            self.disc(x, y, width / 2.0, color);
        }
    }

    fn add_noise(&mut self, std: f64, rng: &mut ChaCha8Rng) {
        if std <= 0.0 {
            return;
        }
        let normal = Normal::new(0.0, std).expect("valid std");
        for p in &mut self.px {
            for c in p.iter_mut() {
                *c = (*c + normal.sample(rng) as f32).clamp(0.0, 1.0);
            }
        }
    }

    fn to_gray(&mut self) {
        for p in &mut self.px {
            let g = p[0];
            *p = [g, g, g];
        }
    }

    fn into_image(self) -> RgbImage {
        let bytes = self
            .px
            .iter()
            .flat_map(|p| p.map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8))
            .collect();
        RgbImage::from_raw(self.size as u32, self.size as u32, bytes).expect("buffer matches size")
    }
}

struct FundusLayout {
    disc_box: BoundingBox,
}

fn paint_fundus_background(c: &mut Canvas, rng: &mut ChaCha8Rng) -> FundusLayout {
    let n = c.size as f64;
    let center = n / 2.0;
    let radius = 0.47 * n;
    let tint: f32 = rng.random_range(-0.05..0.05);
    for y in 0..c.size {
        for x in 0..c.size {
            let dx = x as f64 + 0.5 - center;
            let dy = y as f64 + 0.5 - center;
            let r = (dx * dx + dy * dy).sqrt() / radius;
            if r <= 1.0 {
                let fall = (1.0 - 0.35 * r * r) as f32;
                c.px[y * c.size + x] = [(0.78 + tint) * fall, (0.34 + tint / 2.0) * fall, 0.16 * fall];
            }
        }
    }
    let left = rng.random_bool(0.5);
    let disc_x = if left { 0.24 * n } else { 0.76 * n } + rng.random_range(-0.02..0.02) * n;
    let disc_y = center + rng.random_range(-0.05..0.05) * n;
    let disc_r = 0.07 * n;
    let vessel = [0.64, 0.20, 0.12];
    for _ in 0..5 {
        let end = (rng.random_range(0.1..0.9) * n, rng.random_range(0.1..0.9) * n);
        let ctrl = (rng.random_range(0.2..0.8) * n, rng.random_range(0.2..0.8) * n);
        let width = rng.random_range(1.5..2.5) * c.scale();
        c.curve((disc_x, disc_y), ctrl, end, width, vessel);
    }
    c.disc(disc_x, disc_y, disc_r, [0.98, 0.86, 0.62]);
    FundusLayout {
        disc_box: BoundingBox {
            x0: disc_x - disc_r,
            y0: disc_y - disc_r,
            x1: disc_x + disc_r,
            y1: disc_y + disc_r,
        },
    }
}

fn overlaps(a: &BoundingBox, b: &BoundingBox, margin: f64) -> bool {
    a.x0 - margin < b.x1 && b.x0 - margin < a.x1 && a.y0 - margin < b.y1 && b.y0 - margin < a.y1
}

/// Picks a non-overlapping center via rejection; the last candidate wins if
/// all tries collide.
fn pick_center(
    placed: &[BoundingBox],
    half: (f64, f64),
    margin: f64,
    rng: &mut ChaCha8Rng,
    mut candidate: impl FnMut(&mut ChaCha8Rng) -> (f64, f64),
) -> (f64, f64) {
    let mut last = candidate(rng);
    for _ in 0..60 {
        let bbox = BoundingBox { x0: last.0 - half.0, y0: last.1 - half.1, x1: last.0 + half.0, y1: last.1 + half.1 };
        if placed.iter().all(|p| !overlaps(&bbox, p, margin)) {
            break;
        }
        last = candidate(rng);
    }
    last
}

fn place_fundus_marker(c: &mut Canvas, motif: Motif, placed: &[BoundingBox], rng: &mut ChaCha8Rng) -> BoundingBox {
    let n = c.size as f64;
    let s = c.scale() * MOTIF_SCALE;
    let half = motif.half_extent();
    let half = (half.0 * s, half.1 * s);
    let (cx, cy) = pick_center(placed, half, 4.0 * s, rng, |rng| {
        let angle = rng.random_range(0.0..std::f64::consts::TAU);
        let r = 0.33 * n * rng.random_range(0.0f64..1.0).sqrt();
        (n / 2.0 + r * angle.cos(), n / 2.0 + r * angle.sin())
    });
    draw_motif(c, motif, cx, cy, s, rng)
}

struct OctBands {
    top: Vec<f64>,
    rpe: Vec<f64>,
}

fn paint_oct_background(c: &mut Canvas, rng: &mut ChaCha8Rng) -> OctBands {
    let n = c.size as f64;
    let amp = rng.random_range(0.01..0.04) * n;
    let phase = rng.random_range(0.0..std::f64::consts::TAU);
    let base_top = rng.random_range(0.33..0.38) * n;
    let base_rpe = rng.random_range(0.60..0.64) * n;
    let freq = std::f64::consts::TAU / n;
    let mut top = Vec::with_capacity(c.size);
    let mut rpe = Vec::with_capacity(c.size);
    for x in 0..c.size {
        let bend = amp * (freq * x as f64 + phase).sin();
        top.push(base_top + bend);
        rpe.push(base_rpe + bend);
    }
    let stripe = 6.0 * c.scale();
    for y in 0..c.size {
        for x in 0..c.size {
            let yf = y as f64 + 0.5;
            let v = if yf < top[x] {
                0.06
            } else if yf < rpe[x] {
                let depth = (yf - top[x]) / (rpe[x] - top[x]);
                let layer = if ((yf - top[x]) / stripe).floor() as i64 % 2 == 0 { 0.06 } else { -0.04 };
                0.32 + 0.18 * depth + layer
            } else if yf < rpe[x] + 5.0 * c.scale() {
                0.85
            } else {
                let d = (yf - rpe[x]) / n;
                (0.34 - 1.2 * d).max(0.08)
            };
            c.px[y * c.size + x] = [v as f32; 3];
        }
    }
    OctBands { top, rpe }
}

fn place_oct_marker(
    c: &mut Canvas,
    motif: Motif,
    bands: &OctBands,
    placed: &[BoundingBox],
    rng: &mut ChaCha8Rng,
) -> BoundingBox {
    let n = c.size as f64;
    let s = c.scale() * MOTIF_SCALE;
    let half = motif.half_extent();
    let half = (half.0 * s, half.1 * s);
    let (cx, cy) = pick_center(placed, half, 3.0 * s, rng, |rng| {
        let x = rng.random_range(0.14..0.86) * n;
        let xi = (x as usize).min(c.size - 1);
        let (top, rpe) = (bands.top[xi], bands.rpe[xi]);
        let y = match motif {
            Motif::DarkLens => rpe - half.1 - 1.0 * s,
            Motif::BrightDome => rpe - half.1 + 4.0 * s,
            Motif::BrightWedge => rpe + half.1 + 6.0 * s,
            Motif::DarkCysts => top + 0.45 * (rpe - top),
            Motif::BrightCross => top + 0.35 * (rpe - top) + rng.random_range(-4.0..4.0) * s,
            _ => top + 0.5 * (rpe - top),
        };
        (x, y)
    });
    draw_motif(c, motif, cx, cy, s, rng)
}

/// Draws `motif` centered at (cx, cy) and returns its clipped bounding box.
fn draw_motif(c: &mut Canvas, motif: Motif, cx: f64, cy: f64, s: f64, rng: &mut ChaCha8Rng) -> BoundingBox {
    let (hx, hy) = motif.half_extent();
    let (hx, hy) = (hx * s, hy * s);
    match motif {
        Motif::DarkRedDots => {
            let color = [0.20, 0.0, 0.02];
            let offsets = [(-9.0, -9.0), (9.0, -9.0), (-9.0, 9.0), (9.0, 9.0)];
            for (dx, dy) in offsets {
                let jx = rng.random_range(-2.0..2.0);
                let jy = rng.random_range(-2.0..2.0);
                c.disc(cx + (dx + jx) * s, cy + (dy + jy) * s, 7.5 * s, color);
            }
        }
        Motif::YellowSpecks => {
            let color = [0.99, 0.93, 0.32];
            for k in 0..8 {
                let angle = k as f64 * std::f64::consts::TAU / 8.0 + rng.random_range(-0.2..0.2);
                let r = if k % 2 == 0 { 14.0 } else { 7.0 };
                c.disc(cx + r * angle.cos() * s, cy + r * angle.sin() * s, 3.8 * s, color);
            }
        }
        Motif::PaleRing => {
            let (outer, inner) = (16.0 * s, 9.0 * s);
            c.fill_where((cx - outer, cy - outer, cx + outer, cy + outer), [0.94, 0.86, 0.62], |x, y| {
                let d2 = (x - cx).powi(2) + (y - cy).powi(2);
                d2 <= outer * outer && d2 >= inner * inner
            });
        }
        Motif::OrangeDiamond => {
            let r = 17.0 * s;
            c.fill_where((cx - r, cy - r, cx + r, cy + r), [1.0, 0.68, 0.0], |x, y| {
                (x - cx).abs() + (y - cy).abs() <= r
            });
        }
        Motif::MaroonEllipse => c.ellipse(cx, cy, hx, hy, [0.10, 0.0, 0.30]),
        Motif::DarkCysts => {
            c.disc(cx - 10.0 * s, cy, 9.5 * s, [0.02; 3]);
            c.disc(cx + 10.0 * s, cy, 9.5 * s, [0.02; 3]);
        }
        Motif::DarkLens => c.ellipse(cx, cy, hx, hy, [0.04; 3]),
        Motif::BrightDome => {
            let thick = 4.5 * s;
            c.fill_where((cx - hx, cy - hy, cx + hx, cy + hy), [0.97; 3], |x, y| {
                let e = ((x - cx) / hx).powi(2) + ((y - (cy + hy)) / (2.0 * hy)).powi(2);
                y <= cy + hy && e <= 1.0
            });
            let (ix, iy) = (hx - thick, 2.0 * hy - thick);
            c.fill_where((cx - hx, cy - hy, cx + hx, cy + hy), [0.12; 3], |x, y| {
                let e = ((x - cx) / ix).powi(2) + ((y - (cy + hy)) / iy).powi(2);
                y <= cy + hy && e <= 1.0
            });
        }
        Motif::BrightWedge => {
            c.triangle((cx - hx, cy - hy), (cx + hx, cy - hy), (cx, cy + hy), [0.93; 3]);
        }
        Motif::BrightCross => {
            let arm = hx;
            let t = 3.0 * s;
            c.rect(cx - arm, cy - t, cx + arm, cy + t, [1.0; 3]);
            c.rect(cx - t, cy - arm, cx + t, cy + arm, [1.0; 3]);
        }
    }
    let n = c.size as f64;
    BoundingBox {
        x0: (cx - hx).max(0.0),
        y0: (cy - hy).max(0.0),
        x1: (cx + hx).min(n),
        y1: (cy + hy).min(n),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Split;

    fn small_spec(seed: u64) -> SyntheticSpec {
        SyntheticSpec::with_counts(12, 4, 4, seed)
    }

    fn pixels(m: &DatasetManifest) -> Vec<Vec<u8>> {
        m.groups
            .iter()
            .flat_map(|g| [&g.fundus, &g.oct])
            .map(|r| match &r.source {
                PixelSource::Memory(img) => img.as_raw().clone(),
                PixelSource::Path(_) => unreachable!(),
            })
            .collect()
    }

    #[test]
    fn deterministic_bytes() {
        let a = generate_synthetic_dataset(&small_spec(4)).unwrap();
        let b = generate_synthetic_dataset(&small_spec(4)).unwrap();
        assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
        assert_eq!(pixels(&a), pixels(&b));
        let c = generate_synthetic_dataset(&small_spec(5)).unwrap();
        assert_ne!(pixels(&a), pixels(&c));
    }

    #[test]
    fn flags_match_planted_boxes_and_rule() {
        let m = generate_synthetic_dataset(&SyntheticSpec::with_counts(40, 5, 5, 2)).unwrap();
        m.validate().unwrap();
        for g in &m.groups {
            for modality in Modality::ALL {
                let planted: BTreeSet<usize> = g
                    .lesion_boxes
                    .as_ref()
                    .unwrap()
                    .iter()
                    .filter(|b| b.modality == modality)
                    .map(|b| b.sign)
                    .collect();
                let flagged: BTreeSet<usize> = g
                    .signs(modality)
                    .flags
                    .iter()
                    .enumerate()
                    .filter(|(_, f)| **f)
                    .map(|(i, _)| i)
                    .collect();
                assert_eq!(planted, flagged);
            }
            assert_eq!(g.disease, DiseaseLabel::from_signs(&g.fundus_signs, &g.oct_signs));
        }
    }

    #[test]
    fn forced_orange_marker_is_pcv_and_drusen_only_is_other() {
        let mut spec = small_spec(1);
        spec.fundus_prevalence = [0.0, 0.0, 0.0, 1.0, 0.0];
        spec.oct_prevalence = [0.0; 5];
        let m = generate_synthetic_dataset(&spec).unwrap();
        assert!(m.groups.iter().all(|g| g.disease == DiseaseLabel::Pcv));

        spec.fundus_prevalence = [0.0, 0.0, 1.0, 0.0, 0.0];
        let m = generate_synthetic_dataset(&spec).unwrap();
        assert!(m.groups.iter().all(|g| g.disease == DiseaseLabel::Other));
    }

    #[test]
    fn split_counts_follow_spec() {
        let m = generate_synthetic_dataset(&small_spec(9)).unwrap();
        assert_eq!(m.splits.sizes(), (12, 4, 4));
        assert_eq!(m.split_groups(Split::Test).len(), 4);
    }

    #[test]
    fn invalid_specs_rejected() {
        let mut spec = small_spec(0);
        spec.valid = 0;
        assert!(matches!(generate_synthetic_dataset(&spec), Err(Error::Config(_))));
        let mut spec = small_spec(0);
        spec.oct_prevalence[2] = 1.5;
        assert!(matches!(generate_synthetic_dataset(&spec), Err(Error::Config(_))));
        let mut spec = small_spec(0);
        spec.markers[1] = spec.markers[0];
        assert!(matches!(generate_synthetic_dataset(&spec), Err(Error::Config(_))));
    }

    #[test]
    fn planted_marker_changes_pixels_inside_its_box() {
        let mut spec = small_spec(3);
        spec.noise = 0.0;
        spec.fundus_prevalence = [0.0; 5];
        spec.oct_prevalence = [0.0, 0.0, 0.0, 0.0, 1.0];
        let m = generate_synthetic_dataset(&spec).unwrap();
        let g = &m.groups[0];
        let b = g.boxes(Modality::Oct)[0];
        let PixelSource::Memory(img) = &g.oct.source else { unreachable!() };
        let (cx, cy) = (((b.x0 + b.x1) / 2.0) as u32, ((b.y0 + b.y1) / 2.0) as u32);
        assert_eq!(img.get_pixel(cx, cy).0, [255, 255, 255]);
    }
}
