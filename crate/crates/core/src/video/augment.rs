use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use rand::Rng as _;

use super::{composite_swap, io};
use crate::error::{invalid, Result};
use crate::manifest::{Manifest, ManifestItem};
use crate::rng;

/// Suffix appended to a source id to name its augmented counterpart.
pub const AUGMENTED_SUFFIX: &str = "__aug";

/// Doubles a dataset: every mask-bearing item is kept and paired with one
/// copy whose human is pasted on a background drawn uniformly from `pool`.
/// Items without masks are dropped from both halves. The swap frames are
/// planned under `out_root/augmented/<id>`; [`swap_jobs`] writes them.
pub fn build_augmented_set(dataset: &Manifest, pool: &Manifest, seed: u64, out_root: &Path) -> Result<Manifest> {
    let mut originals: Vec<&ManifestItem> = Vec::with_capacity(dataset.len());
    for item in &dataset.items {
        if item.masks_dir.is_some() {
            originals.push(item);
        } else {
            log::warn!("skipping {}: no masks", item.video_id);
        }
    }
    originals.sort_by(|a, b| a.video_id.cmp(&b.video_id));
    if !originals.is_empty() && pool.is_empty() {
        return Err(invalid!("background pool is empty"));
    }

    let mut rng = rng::derived(seed, "augment");
    let mut items: Vec<ManifestItem> = Vec::with_capacity(2 * originals.len());
    for item in originals {
        let bg = &pool.items[rng.gen_range(0..pool.len())];
        let id = format!("{}{AUGMENTED_SUFFIX}", item.video_id);
        items.push(ManifestItem {
            video_id: id.clone(),
            human_class: item.human_class.clone(),
            background_class: Some(bg.scene_class().to_owned()),
            frames_dir: out_root.join("augmented").join(&id),
            masks_dir: item.masks_dir.clone(),
            inpainted_dir: None,
            human_video: Some(item.video_id.clone()),
            background_video: Some(bg.video_id.clone()),
        });
        items.push(item.clone());
    }
    items.sort_by(|a, b| a.video_id.cmp(&b.video_id));
    let ids: BTreeSet<&str> = items.iter().map(|i| i.video_id.as_str()).collect();
    if ids.len() != items.len() {
        return Err(invalid!(
            "augmented ids collide with existing ids ending in {AUGMENTED_SUFFIX:?}"
        ));
    }

    // Pool scene labels may fall outside the dataset vocabulary.
    let mut classes = dataset.classes.clone();
    if !classes.is_empty() {
        for item in &items {
            let label = item.scene_class();
            if !classes.iter().any(|c| c == label) {
                classes.push(label.to_owned());
            }
        }
    }
    Ok(Manifest::new(classes, items))
}

/// One composited video to materialize on disk.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SwapJob {
    pub video_id: String,
    pub human_frames: PathBuf,
    pub human_masks: PathBuf,
    pub background_frames: PathBuf,
    pub out_frames: PathBuf,
}

impl SwapJob {
    pub fn run(&self) -> Result<()> {
        let human = io::read_frames(&self.human_frames)?;
        let masks = io::read_masks(&self.human_masks)?;
        let background = io::read_frames(&self.background_frames)?;
        let out = composite_swap(&human, &masks, &background)?;
        io::write_frames(&self.out_frames, &out)
    }
}

/// Jobs for every composited item in `manifest`, resolving human sources in
/// `humans` and background sources in `backgrounds`.
pub fn swap_jobs(manifest: &Manifest, humans: &Manifest, backgrounds: &Manifest) -> Result<Vec<SwapJob>> {
    let mut jobs = Vec::new();
    for item in &manifest.items {
        let (Some(h), Some(b)) = (&item.human_video, &item.background_video) else {
            continue;
        };
        let human = humans
            .find(h)
            .ok_or_else(|| invalid!("{}: human source {h:?} not found", item.video_id))?;
        let bg = backgrounds
            .find(b)
            .ok_or_else(|| invalid!("{}: background source {b:?} not found", item.video_id))?;
        let masks = human
            .masks_dir
            .clone()
            .ok_or_else(|| invalid!("{}: human source {h:?} has no masks", item.video_id))?;
        jobs.push(SwapJob {
            video_id: item.video_id.clone(),
            human_frames: human.frames_dir.clone(),
            human_masks: masks,
            background_frames: bg.background_source().to_path_buf(),
            out_frames: item.frames_dir.clone(),
        });
    }
    Ok(jobs)
}
