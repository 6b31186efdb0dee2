//! Dataset schema, synthetic generator, preprocessing, augmentation and splits.

mod augment;
mod dataset;
mod preprocess;
mod split;
mod synth;

use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use image::RgbImage;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use augment::{augment, AugmentDraws, CONTRAST_RANGE, MAX_ROTATION_DEG};
pub use dataset::LoadedDataset;
pub use preprocess::{bilinear_resize, preprocess, Tensor224, TENSOR_CHANNELS, TENSOR_SIZE};
pub use split::split_dataset;
pub use synth::{generate_synthetic_dataset, Motif, SyntheticSpec};

pub const SIGNS_PER_MODALITY: usize = 5;

/// Fundus sign vocabulary, index order is part of the manifest format.
pub const FUNDUS_SIGNS: [&str; SIGNS_PER_MODALITY] = [
    "macular retinal hemorrhage",
    "macular retinal exudation",
    "drusen in macular area",
    "orange-red lesions under the retina",
    "subretinal hemorrhage",
];

/// OCT sign vocabulary, index order is part of the manifest format.
pub const OCT_SIGNS: [&str; SIGNS_PER_MODALITY] = [
    "intraretinal fluid",
    "subretinal fluid",
    "pigment epithelial detachment",
    "hyperreflective lesions under RPE",
    "hyperreflective lesions in or under the retina",
];

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Modality {
    Fundus,
    #[serde(rename = "OCT")]
    Oct,
}

impl Modality {
    pub const ALL: [Modality; 2] = [Modality::Fundus, Modality::Oct];

    pub fn vocabulary(self) -> &'static [&'static str; SIGNS_PER_MODALITY] {
        match self {
            Modality::Fundus => &FUNDUS_SIGNS,
            Modality::Oct => &OCT_SIGNS,
        }
    }

    /// Short tag used in file names and parameter names (`F` / `O`).
    pub fn tag(self) -> &'static str {
        match self {
            Modality::Fundus => "F",
            Modality::Oct => "O",
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Modality::Fundus => f.write_str("Fundus"),
            Modality::Oct => f.write_str("OCT"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DiseaseLabel {
    NeovascularAMD = 0,
    #[serde(rename = "PCV")]
    Pcv = 1,
    Other = 2,
}

impl DiseaseLabel {
    pub const ALL: [DiseaseLabel; 3] = [
        DiseaseLabel::NeovascularAMD,
        DiseaseLabel::Pcv,
        DiseaseLabel::Other,
    ];
    pub const COUNT: usize = 3;

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            DiseaseLabel::NeovascularAMD => "NeovascularAMD",
            DiseaseLabel::Pcv => "PCV",
            DiseaseLabel::Other => "Other",
        }
    }

    /// Frozen rule table linking lesion signs to the diagnosis.
    ///
    /// PCV iff orange-red lesions or hyperreflective lesions under the RPE;
    /// otherwise neovascular AMD iff intraretinal fluid, subretinal fluid or
    /// subretinal hemorrhage; otherwise other.
    pub fn from_signs(fundus: &SignLabelVector, oct: &SignLabelVector) -> Self {
        let f = &fundus.flags;
        let o = &oct.flags;
        if f[3] || o[3] {
            DiseaseLabel::Pcv
        } else if o[0] || o[1] || f[4] {
            DiseaseLabel::NeovascularAMD
        } else {
            DiseaseLabel::Other
        }
    }

    /// Signs of `modality` that the rule table counts as evidence for this
    /// label. Other has none.
    pub fn evidence_signs(self, modality: Modality) -> &'static [usize] {
        match (self, modality) {
            (DiseaseLabel::Pcv, _) => &[3],
            (DiseaseLabel::NeovascularAMD, Modality::Fundus) => &[4],
            (DiseaseLabel::NeovascularAMD, Modality::Oct) => &[0, 1],
            (DiseaseLabel::Other, _) => &[],
        }
    }
}

impl fmt::Display for DiseaseLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SignLabelVector {
    pub modality: Modality,
    pub flags: [bool; SIGNS_PER_MODALITY],
}

impl SignLabelVector {
    pub fn new(modality: Modality, flags: [bool; SIGNS_PER_MODALITY]) -> Self {
        SignLabelVector { modality, flags }
    }

    pub fn empty(modality: Modality) -> Self {
        Self::new(modality, [false; SIGNS_PER_MODALITY])
    }

    pub fn as_targets(&self) -> [f64; SIGNS_PER_MODALITY] {
        self.flags.map(|b| if b { 1.0 } else { 0.0 })
    }

    pub fn names(&self) -> Vec<&'static str> {
        let vocab = self.modality.vocabulary();
        self.flags
            .iter()
            .zip(vocab.iter())
            .filter(|(on, _)| **on)
            .map(|(_, name)| *name)
            .collect()
    }
}

/// Where an image's pixels come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PixelSource {
    /// Path relative to the dataset root (or absolute).
    Path(PathBuf),
    /// Decoded pixels held in memory; not persisted by the manifest.
    Memory(#[serde(skip)] Arc<RgbImage>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub id: String,
    pub modality: Modality,
    pub source: PixelSource,
    pub eye_id: String,
}

impl ImageRecord {
    pub fn validate(&self) -> Result<()> {
        if self.eye_id.is_empty() {
            return Err(Error::Input {
                id: self.id.clone(),
                reason: "empty eye_id".into(),
            });
        }
        Ok(())
    }
}

/// Axis-aligned box in pixel coordinates of the original (pre-resize) image.
/// `x1`/`y1` are exclusive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl BoundingBox {
    pub fn width(&self) -> f64 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> f64 {
        self.y1 - self.y0
    }

    /// Box scaled by `factor` about its center.
    pub fn dilate(&self, factor: f64) -> BoundingBox {
        let cx = 0.5 * (self.x0 + self.x1);
        let cy = 0.5 * (self.y0 + self.y1);
        let hw = 0.5 * self.width() * factor;
        let hh = 0.5 * self.height() * factor;
        BoundingBox {
            x0: cx - hw,
            y0: cy - hh,
            x1: cx + hw,
            y1: cy + hh,
        }
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.x0 && x < self.x1 && y >= self.y0 && y < self.y1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LesionBox {
    pub modality: Modality,
    /// Index into the modality's sign vocabulary.
    pub sign: usize,
    pub bbox: BoundingBox,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiModalGroup {
    pub id: String,
    pub fundus: ImageRecord,
    pub oct: ImageRecord,
    pub fundus_signs: SignLabelVector,
    pub oct_signs: SignLabelVector,
    pub disease: DiseaseLabel,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lesion_boxes: Option<Vec<LesionBox>>,
}

impl BiModalGroup {
    pub fn validate(&self) -> Result<()> {
        let bad = |reason: &str| Error::Input {
            id: self.id.clone(),
            reason: reason.to_string(),
        };
        self.fundus.validate()?;
        self.oct.validate()?;
        if self.fundus.eye_id != self.oct.eye_id {
            return Err(bad("fundus and OCT records belong to different eyes"));
        }
        if self.fundus.modality != Modality::Fundus || self.oct.modality != Modality::Oct {
            return Err(bad("image record modality does not match its slot"));
        }
        if self.fundus_signs.modality != Modality::Fundus || self.oct_signs.modality != Modality::Oct
        {
            return Err(bad("sign vector modality does not match its slot"));
        }
        Ok(())
    }

    pub fn record(&self, modality: Modality) -> &ImageRecord {
        match modality {
            Modality::Fundus => &self.fundus,
            Modality::Oct => &self.oct,
        }
    }

    pub fn signs(&self, modality: Modality) -> &SignLabelVector {
        match modality {
            Modality::Fundus => &self.fundus_signs,
            Modality::Oct => &self.oct_signs,
        }
    }

    pub fn boxes(&self, modality: Modality) -> Vec<BoundingBox> {
        self.lesion_boxes
            .iter()
            .flatten()
            .filter(|b| b.modality == modality)
            .map(|b| b.bbox)
            .collect()
    }

    /// Boxes of the planted signs that are evidence for the group's own label.
    pub fn evidence_boxes(&self, modality: Modality) -> Vec<BoundingBox> {
        let evidence = self.disease.evidence_signs(modality);
        self.lesion_boxes
            .iter()
            .flatten()
            .filter(|b| b.modality == modality && evidence.contains(&b.sign))
            .map(|b| b.bbox)
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Valid, Split::Test];
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Splits {
    pub train: Vec<String>,
    pub valid: Vec<String>,
    pub test: Vec<String>,
}

impl Splits {
    pub fn get(&self, split: Split) -> &[String] {
        match split {
            Split::Train => &self.train,
            Split::Valid => &self.valid,
            Split::Test => &self.test,
        }
    }

    pub fn get_mut(&mut self, split: Split) -> &mut Vec<String> {
        match split {
            Split::Train => &mut self.train,
            Split::Valid => &mut self.valid,
            Split::Test => &mut self.test,
        }
    }

    pub fn sizes(&self) -> (usize, usize, usize) {
        (self.train.len(), self.valid.len(), self.test.len())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vocabulary {
    pub fundus: Vec<String>,
    pub oct: Vec<String>,
}

impl Default for Vocabulary {
    fn default() -> Self {
        Vocabulary {
            fundus: FUNDUS_SIGNS.iter().map(|s| s.to_string()).collect(),
            oct: OCT_SIGNS.iter().map(|s| s.to_string()).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorInfo {
    pub seed: u64,
    pub spec_hash: String,
    pub spec: SyntheticSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub vocabulary: Vocabulary,
    pub groups: Vec<BiModalGroup>,
    pub splits: Splits,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<GeneratorInfo>,
}

pub const MANIFEST_FILE: &str = "manifest.json";
pub const IMAGES_DIR: &str = "images";

impl DatasetManifest {
    pub fn new(groups: Vec<BiModalGroup>) -> Self {
        DatasetManifest {
            format_version: MANIFEST_VERSION,
            vocabulary: Vocabulary::default(),
            groups,
            splits: Splits::default(),
            generator: None,
        }
    }

    pub fn group(&self, id: &str) -> Option<&BiModalGroup> {
        self.groups.iter().find(|g| g.id == id)
    }

    pub fn split_groups(&self, split: Split) -> Vec<&BiModalGroup> {
        let index: std::collections::HashMap<&str, &BiModalGroup> =
            self.groups.iter().map(|g| (g.id.as_str(), g)).collect();
        self.splits
            .get(split)
            .iter()
            .filter_map(|id| index.get(id.as_str()).copied())
            .collect()
    }

    /// Checks group invariants, vocabulary order and split disjointness/cover.
    pub fn validate(&self) -> Result<()> {
        if self.format_version != MANIFEST_VERSION {
            return Err(Error::config(format!(
                "unsupported manifest version {}",
                self.format_version
            )));
        }
        if self.vocabulary != Vocabulary::default() {
            return Err(Error::config("manifest sign vocabulary differs from the frozen order"));
        }
        let mut ids = std::collections::BTreeSet::new();
        for g in &self.groups {
            g.validate()?;
            if !ids.insert(g.id.as_str()) {
                return Err(Error::config(format!("duplicate group id `{}`", g.id)));
            }
        }
        let mut seen = std::collections::BTreeSet::new();
        for split in Split::ALL {
            for id in self.splits.get(split) {
                if !ids.contains(id.as_str()) {
                    return Err(Error::config(format!("split {split} names unknown group `{id}`")));
                }
                if !seen.insert(id.as_str()) {
                    return Err(Error::config(format!("group `{id}` appears in more than one split")));
                }
            }
        }
        if !self.splits.train.is_empty() || !self.splits.valid.is_empty() || !self.splits.test.is_empty()
        {
            if seen.len() != ids.len() {
                return Err(Error::config("splits do not cover every group"));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let manifest: DatasetManifest = serde_json::from_str(text)?;
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        if !path.exists() {
            return Err(Error::MissingArtifact(path));
        }
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        Self::from_json(&text)
    }

    /// Writes `images/*.png` and `manifest.json` under `dir`. In-memory pixel
    /// sources are written out and replaced by relative paths in the returned
    /// manifest, which is what lands on disk.
    pub fn write(&self, dir: &Path) -> Result<(DatasetManifest, Vec<PathBuf>)> {
        let images = dir.join(IMAGES_DIR);
        std::fs::create_dir_all(&images).map_err(|e| Error::io(&images, e))?;
        let mut written = Vec::new();
        let mut out = self.clone();
        let mut done = std::collections::HashSet::new();
        for g in &mut out.groups {
            for rec in [&mut g.fundus, &mut g.oct] {
                if let PixelSource::Memory(img) = &rec.source {
                    let rel = PathBuf::from(IMAGES_DIR).join(format!("{}.png", rec.id));
                    if done.insert(rec.id.clone()) {
                        let path = dir.join(&rel);
                        img.save(&path)?;
                        written.push(path);
                    }
                    rec.source = PixelSource::Path(rel);
                }
            }
        }
        let path = dir.join(MANIFEST_FILE);
        std::fs::write(&path, out.to_json()?).map_err(|e| Error::io(&path, e))?;
        written.push(path);
        Ok((out, written))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn signs(m: Modality, on: &[usize]) -> SignLabelVector {
        let mut flags = [false; SIGNS_PER_MODALITY];
        for &i in on {
            flags[i] = true;
        }
        SignLabelVector::new(m, flags)
    }

    #[test]
    fn rule_table() {
        use DiseaseLabel::*;
        let f = |on: &[usize]| signs(Modality::Fundus, on);
        let o = |on: &[usize]| signs(Modality::Oct, on);
        assert_eq!(DiseaseLabel::from_signs(&f(&[3]), &o(&[])), Pcv);
        assert_eq!(DiseaseLabel::from_signs(&f(&[]), &o(&[3])), Pcv);
        assert_eq!(DiseaseLabel::from_signs(&f(&[4]), &o(&[3])), Pcv);
        assert_eq!(DiseaseLabel::from_signs(&f(&[2]), &o(&[])), Other);
        assert_eq!(DiseaseLabel::from_signs(&f(&[4]), &o(&[])), NeovascularAMD);
        assert_eq!(DiseaseLabel::from_signs(&f(&[]), &o(&[0])), NeovascularAMD);
        assert_eq!(DiseaseLabel::from_signs(&f(&[]), &o(&[1, 2])), NeovascularAMD);
        assert_eq!(DiseaseLabel::from_signs(&f(&[0, 1, 2]), &o(&[2, 4])), Other);
    }

    #[test]
    fn evidence_signs_agree_with_rule_table() {
        for m in [Modality::Fundus, Modality::Oct] {
            for sign in 0..SIGNS_PER_MODALITY {
                let (f, o) = match m {
                    Modality::Fundus => (signs(m, &[sign]), SignLabelVector::empty(Modality::Oct)),
                    Modality::Oct => (SignLabelVector::empty(Modality::Fundus), signs(m, &[sign])),
                };
                let label = DiseaseLabel::from_signs(&f, &o);
                for d in DiseaseLabel::ALL {
                    assert_eq!(d.evidence_signs(m).contains(&sign), d == label && d != DiseaseLabel::Other, "{m:?} sign {sign}");
                }
            }
        }
    }

    #[test]
    fn dilate_about_center() {
        let b = BoundingBox { x0: 10.0, y0: 10.0, x1: 20.0, y1: 30.0 };
        let d = b.dilate(2.0);
        assert_eq!(d, BoundingBox { x0: 5.0, y0: 0.0, x1: 25.0, y1: 40.0 });
    }

    #[test]
    fn empty_eye_id_rejected() {
        let rec = ImageRecord {
            id: "x".into(),
            modality: Modality::Fundus,
            source: PixelSource::Path("x.png".into()),
            eye_id: String::new(),
        };
        assert!(rec.validate().is_err());
    }
}
