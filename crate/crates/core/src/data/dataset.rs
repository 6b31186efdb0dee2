use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use super::{preprocess, BiModalGroup, DatasetManifest, Modality, Split, Tensor224};
use crate::error::{Error, Result};

/// A manifest plus every image already preprocessed to a [`Tensor224`].
///
/// Immutable after construction; groups that share an image record share
/// its tensor.
#[derive(Debug, Clone)]
pub struct LoadedDataset {
    pub manifest: DatasetManifest,
    pub root: Option<PathBuf>,
    tensors: HashMap<String, Arc<Tensor224>>,
}

impl LoadedDataset {
    pub fn from_manifest(manifest: DatasetManifest, root: Option<&Path>) -> Result<Self> {
        manifest.validate()?;
        let mut tensors = HashMap::new();
        for g in &manifest.groups {
            for rec in [&g.fundus, &g.oct] {
                if !tensors.contains_key(&rec.id) {
                    tensors.insert(rec.id.clone(), Arc::new(preprocess(rec, root)?));
                }
            }
        }
        Ok(LoadedDataset {
            manifest,
            root: root.map(Path::to_path_buf),
            tensors,
        })
    }

    pub fn open(dir: &Path) -> Result<Self> {
        let manifest = DatasetManifest::read(dir)?;
        Self::from_manifest(manifest, Some(dir))
    }

    pub fn tensor(&self, group: &BiModalGroup, modality: Modality) -> Result<&Tensor224> {
        let rec = group.record(modality);
        self.tensors
            .get(&rec.id)
            .map(|t| t.as_ref())
            .ok_or_else(|| Error::Input {
                id: rec.id.clone(),
                reason: "image was not loaded".into(),
            })
    }

    pub fn split(&self, split: Split) -> Vec<&BiModalGroup> {
        self.manifest.split_groups(split)
    }
}
