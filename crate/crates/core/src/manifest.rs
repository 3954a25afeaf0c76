//! Video manifests: `{"classes": [...], "items": [...]}` JSON files whose
//! directory paths are stored relative to the manifest when possible.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestItem {
    pub video_id: String,
    pub human_class: String,
    #[serde(default)]
    pub background_class: Option<String>,
    pub frames_dir: PathBuf,
    #[serde(default)]
    pub masks_dir: Option<PathBuf>,
    /// Frames of the scene with the human removed, used when this item
    /// donates its background to a swap.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inpainted_dir: Option<PathBuf>,
    /// For composited items: the video that supplied the human.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub human_video: Option<String>,
    /// For composited items: the video that supplied the background.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub background_video: Option<String>,
}

impl ManifestItem {
    pub fn new(video_id: impl Into<String>, human_class: impl Into<String>, frames_dir: impl Into<PathBuf>) -> Self {
        Self {
            video_id: video_id.into(),
            human_class: human_class.into(),
            background_class: None,
            frames_dir: frames_dir.into(),
            masks_dir: None,
            inpainted_dir: None,
            human_video: None,
            background_video: None,
        }
    }

    /// Scene label of the item: the background class, else the human class.
    pub fn scene_class(&self) -> &str {
        self.background_class.as_deref().unwrap_or(&self.human_class)
    }

    /// Frames to use when this item donates its background.
    pub fn background_source(&self) -> &Path {
        self.inpainted_dir.as_deref().unwrap_or(&self.frames_dir)
    }

    fn paths_mut(&mut self) -> impl Iterator<Item = &mut PathBuf> {
        std::iter::once(&mut self.frames_dir)
            .chain(self.masks_dir.as_mut())
            .chain(self.inpainted_dir.as_mut())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    /// Ordered label vocabulary; derived from the items when empty.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub classes: Vec<String>,
    pub items: Vec<ManifestItem>,
}

impl Manifest {
    pub fn new(classes: Vec<String>, items: Vec<ManifestItem>) -> Self {
        Self { classes, items }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Reads and validates a manifest, resolving relative paths against the
    /// manifest's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let mut m: Manifest = serde_json::from_str(&text).map_err(|e| Error::Format {
            kind: "manifest",
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        let base = path.parent().unwrap_or(Path::new(""));
        for item in &mut m.items {
            for p in item.paths_mut() {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        }
        m.validate().map_err(|e| Error::Format {
            kind: "manifest",
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        Ok(m)
    }

    /// Writes pretty JSON; paths under the manifest's directory are stored
    /// relative to it so output trees are relocatable.
    pub fn save(&self, path: &Path) -> Result<()> {
        let base = path.parent().unwrap_or(Path::new(""));
        let mut out = self.clone();
        for item in &mut out.items {
            for p in item.paths_mut() {
                if let Ok(rel) = p.strip_prefix(base) {
                    *p = rel.to_path_buf();
                }
            }
        }
        let mut text = serde_json::to_string_pretty(&out)?;
        text.push('\n');
        Ok(fs::write(path, text)?)
    }

    /// Unique video ids, and labels drawn from `classes` when it is given.
    pub fn validate(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for item in &self.items {
            if !seen.insert(item.video_id.as_str()) {
                return Err(invalid!("duplicate video_id {:?}", item.video_id));
            }
        }
        if !self.classes.is_empty() {
            let vocab: BTreeSet<&str> = self.classes.iter().map(String::as_str).collect();
            if vocab.len() != self.classes.len() {
                return Err(invalid!("class vocabulary has duplicates"));
            }
            for item in &self.items {
                for label in std::iter::once(&item.human_class).chain(item.background_class.as_ref()) {
                    if !vocab.contains(label.as_str()) {
                        return Err(invalid!(
                            "item {:?} uses label {label:?} outside the vocabulary",
                            item.video_id
                        ));
                    }
                }
            }
        }
        Ok(())
    }

    /// The declared vocabulary, or the sorted set of human labels.
    pub fn vocabulary(&self) -> Vec<String> {
        if !self.classes.is_empty() {
            return self.classes.clone();
        }
        let set: BTreeSet<&String> = self.items.iter().map(|i| &i.human_class).collect();
        set.into_iter().cloned().collect()
    }

    pub fn class_index(&self, label: &str) -> Result<usize> {
        self.vocabulary()
            .iter()
            .position(|c| c == label)
            .ok_or_else(|| invalid!("label {label:?} not in vocabulary"))
    }

    pub fn find(&self, video_id: &str) -> Option<&ManifestItem> {
        self.items.iter().find(|i| i.video_id == video_id)
    }

    pub fn sort_by_id(&mut self) {
        self.items.sort_by(|a, b| a.video_id.cmp(&b.video_id));
    }
}
