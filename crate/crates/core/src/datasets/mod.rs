//! Splits, swap-set construction, frame sampling and conversion to model
//! inputs.

mod sandbox;

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng as _;

use crate::error::{invalid, Result};
use crate::manifest::{Manifest, ManifestItem};
use crate::models::Sample;
use crate::parallel::par_map;
use crate::rng;
use crate::tensor::Tensor;
use crate::video::{io, FrameSequence, MaskSequence};

pub use sandbox::{
    generate_synthetic_sandbox, Motion, Sandbox, SandboxConfig, SandboxVideo, Shape, Texture, SPRITE_RGB,
};

fn sorted(mut items: Vec<ManifestItem>) -> Vec<ManifestItem> {
    items.sort_by(|a, b| a.video_id.cmp(&b.video_id));
    items
}

/// Stratified split: within each human class (visited in label order), a
/// seeded shuffle sends the first floor(n·fraction) items to train.
pub fn split_train_val(manifest: &Manifest, fraction: f64, seed: u64) -> Result<(Manifest, Manifest)> {
    if manifest.is_empty() {
        return Err(invalid!("cannot split an empty manifest"));
    }
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(invalid!("split fraction must lie in (0, 1), got {fraction}"));
    }
    let mut by_class: BTreeMap<&str, Vec<&ManifestItem>> = BTreeMap::new();
    for item in &manifest.items {
        by_class.entry(&item.human_class).or_default().push(item);
    }
    let mut rng = rng::derived(seed, "split-train-val");
    let (mut train, mut val) = (Vec::new(), Vec::new());
    for group in by_class.values_mut() {
        group.sort_by(|a, b| a.video_id.cmp(&b.video_id));
        group.shuffle(&mut rng);
        let k = (group.len() as f64 * fraction).floor() as usize;
        train.extend(group[..k].iter().map(|i| (*i).clone()));
        val.extend(group[k..].iter().map(|i| (*i).clone()));
    }
    Ok((
        Manifest::new(manifest.classes.clone(), sorted(train)),
        Manifest::new(manifest.classes.clone(), sorted(val)),
    ))
}

/// Pairs mask-bearing humans with backgrounds from items of a different
/// scene class. Without `target`, each human appears once; with it, humans
/// are cycled in seeded order until `target` swaps exist. Frames are planned
/// under `out_root/swaps/<id>`.
pub fn build_mini_action_swap(
    manifest: &Manifest,
    seed: u64,
    target: Option<usize>,
    out_root: &Path,
) -> Result<Manifest> {
    let mut humans: Vec<&ManifestItem> = manifest.items.iter().filter(|i| i.masks_dir.is_some()).collect();
    humans.sort_by(|a, b| a.video_id.cmp(&b.video_id));
    let mut donors: Vec<&ManifestItem> = manifest.items.iter().collect();
    donors.sort_by(|a, b| a.video_id.cmp(&b.video_id));

    let human_classes: std::collections::BTreeSet<&str> = humans.iter().map(|i| i.human_class.as_str()).collect();
    if human_classes.len() < 2 {
        return Err(invalid!(
            "action swaps need at least 2 classes with masked items, found {}",
            human_classes.len()
        ));
    }
    let count = target.unwrap_or(humans.len());
    let mut rng = rng::derived(seed, "mini-action-swap");
    let mut order: Vec<&ManifestItem> = Vec::new();
    let mut items = Vec::with_capacity(count);
    for k in 0..count {
        if order.is_empty() {
            order = humans.clone();
            order.shuffle(&mut rng);
        }
        let human = order.pop().expect("refilled above");
        let pool: Vec<&&ManifestItem> = donors.iter().filter(|d| d.scene_class() != human.human_class).collect();
        if pool.is_empty() {
            return Err(invalid!(
                "no background from a class other than {:?}",
                human.human_class
            ));
        }
        let bg = pool[rng.gen_range(0..pool.len())];
        let id = format!("swap_{k:06}");
        items.push(ManifestItem {
            video_id: id.clone(),
            human_class: human.human_class.clone(),
            background_class: Some(bg.scene_class().to_owned()),
            frames_dir: out_root.join("swaps").join(&id),
            masks_dir: human.masks_dir.clone(),
            inpainted_dir: None,
            human_video: Some(human.video_id.clone()),
            background_video: Some(bg.video_id.clone()),
        });
    }
    Ok(Manifest::new(manifest.classes.clone(), items))
}

/// Center-of-strata indices floor(i·T/n) + floor(T/(2n)). When n > T all
/// frames are taken in order and the last one is repeated.
pub fn sample_indices(frames: usize, n: usize) -> Result<Vec<usize>> {
    if frames == 0 {
        return Err(invalid!("cannot sample from an empty video"));
    }
    if n == 0 {
        return Err(invalid!("must sample at least one frame"));
    }
    if n > frames {
        return Ok((0..n).map(|i| i.min(frames - 1)).collect());
    }
    Ok((0..n).map(|i| i * frames / n + frames / (2 * n)).collect())
}

pub fn sample_frames(video: &FrameSequence, n: usize) -> Result<FrameSequence> {
    video.select_frames(&sample_indices(video.frames(), n)?)
}

/// Samples `frames` frames, resizes to `size`×`size` and scales pixels to
/// [0, 1], giving a (3, T, S, S) video and (1, T, S, S) mask.
pub fn to_sample(
    video: &FrameSequence,
    masks: Option<&MaskSequence>,
    label: usize,
    frames: usize,
    size: usize,
) -> Result<Sample> {
    let idx = sample_indices(video.frames(), frames)?;
    let v = video.select_frames(&idx)?.resize_nearest(size, size);
    let plane = size * size;
    let mut data = vec![0.0; 3 * frames * plane];
    for (p, px) in v.data().chunks_exact(3).enumerate() {
        for (c, &b) in px.iter().enumerate() {
            data[c * frames * plane + p] = b as f64 / 255.0;
        }
    }
    let mask = match masks {
        Some(m) => {
            if m.frames() != video.frames() {
                return Err(invalid!(
                    "mask has {} frames but video has {}",
                    m.frames(),
                    video.frames()
                ));
            }
            let m = m.select_frames(&idx)?.resize_nearest(size, size);
            Some(Tensor::new(
                &[1, frames, size, size],
                m.data().iter().map(|&b| b as f64).collect(),
            )?)
        }
        None => None,
    };
    Ok(Sample {
        video: Tensor::new(&[3, frames, size, size], data)?,
        mask,
        label,
    })
}

/// Reads every item from disk as a model sample labelled by its human class.
pub fn load_samples(
    manifest: &Manifest,
    vocabulary: &[String],
    frames: usize,
    size: usize,
    jobs: usize,
) -> Result<Vec<Sample>> {
    par_map(&manifest.items, jobs, |item| {
        let label = vocabulary
            .iter()
            .position(|c| *c == item.human_class)
            .ok_or_else(|| invalid!("{}: label {:?} not in vocabulary", item.video_id, item.human_class))?;
        let video = io::read_frames(&item.frames_dir)?;
        let masks = item.masks_dir.as_deref().map(io::read_masks).transpose()?;
        to_sample(&video, masks.as_ref(), label, frames, size)
    })
    .into_iter()
    .collect()
}
