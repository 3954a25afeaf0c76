use std::collections::BTreeSet;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::index::sample;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::rng;

pub const CHOICES: usize = 5;
pub const LETTERS: [char; CHOICES] = ['A', 'B', 'C', 'D', 'E'];

/// Five-way multiple-choice item: human label, background label and three
/// distractors in seeded order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McqItem {
    pub video_id: String,
    pub choices: Vec<String>,
    pub human_index: usize,
    pub background_index: usize,
    pub distractor_indices: Vec<usize>,
    pub seed: u64,
}

impl McqItem {
    pub fn human_class(&self) -> &str {
        &self.choices[self.human_index]
    }

    pub fn background_class(&self) -> &str {
        &self.choices[self.background_index]
    }

    /// Checks the slot bookkeeping of a deserialized item.
    pub fn validate(&self) -> Result<()> {
        if self.choices.len() != CHOICES {
            return Err(invalid!(
                "{}: expected {CHOICES} choices, got {}",
                self.video_id,
                self.choices.len()
            ));
        }
        let mut slots: Vec<usize> = self.distractor_indices.clone();
        slots.extend([self.human_index, self.background_index]);
        slots.sort_unstable();
        if slots != (0..CHOICES).collect::<Vec<_>>() {
            return Err(invalid!(
                "{}: choice indices do not partition the five slots",
                self.video_id
            ));
        }
        let distinct: BTreeSet<&String> = self.choices.iter().collect();
        if distinct.len() != CHOICES {
            return Err(invalid!("{}: duplicate choice labels", self.video_id));
        }
        Ok(())
    }
}

/// Per-item seed derived from a run seed and the video id.
pub fn item_seed(seed: u64, video_id: &str) -> u64 {
    rng::mix(seed, rng::stable_hash(video_id.as_bytes()))
}

pub fn build_mcq(video_id: &str, human: &str, background: &str, vocabulary: &[String], seed: u64) -> Result<McqItem> {
    let distinct: BTreeSet<&str> = vocabulary.iter().map(String::as_str).collect();
    if distinct.len() != vocabulary.len() {
        return Err(invalid!("vocabulary has duplicate labels"));
    }
    if vocabulary.len() < CHOICES {
        return Err(invalid!(
            "vocabulary needs at least {CHOICES} labels, got {}",
            vocabulary.len()
        ));
    }
    for label in [human, background] {
        if !distinct.contains(label) {
            return Err(invalid!("label {label:?} not in vocabulary"));
        }
    }
    if human == background {
        return Err(invalid!("{video_id}: human and background share label {human:?}"));
    }
    let rest: Vec<&String> = vocabulary.iter().filter(|c| *c != human && *c != background).collect();
    let mut rng = rng::derived(seed, "mcq");
    let mut picked: Vec<usize> = sample(&mut rng, rest.len(), CHOICES - 2).into_vec();
    picked.sort_unstable();

    // Slots 0 and 1 hold the human and background labels before shuffling.
    let mut order: Vec<usize> = (0..CHOICES).collect();
    order.shuffle(&mut rng);
    let source = |slot: usize| -> String {
        match slot {
            0 => human.to_owned(),
            1 => background.to_owned(),
            d => rest[picked[d - 2]].clone(),
        }
    };
    let choices: Vec<String> = order.iter().map(|&s| source(s)).collect();
    let position = |slot: usize| order.iter().position(|&s| s == slot).expect("permutation");
    let mut distractor_indices: Vec<usize> = (2..CHOICES).map(position).collect();
    distractor_indices.sort_unstable();
    Ok(McqItem {
        video_id: video_id.to_owned(),
        choices,
        human_index: position(0),
        background_index: position(1),
        distractor_indices,
        seed,
    })
}

/// Seeded shuffle; the first floor(N·fraction) shuffled items form the tune
/// set. Both parts keep the input order. Returns (eval, tune).
pub fn split_tune_eval<T: Clone>(items: &[T], fraction: f64, seed: u64) -> Result<(Vec<T>, Vec<T>)> {
    if items.is_empty() {
        return Err(invalid!("cannot split an empty item list"));
    }
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(invalid!("tune fraction must lie in (0, 1), got {fraction}"));
    }
    let mut idx: Vec<usize> = (0..items.len()).collect();
    idx.shuffle(&mut rng::derived(seed, "tune-eval"));
    let k = (items.len() as f64 * fraction).floor() as usize;
    let mut tune_flag = vec![false; items.len()];
    idx[..k].iter().for_each(|&i| tune_flag[i] = true);
    let (mut eval, mut tune) = (Vec::new(), Vec::new());
    for (item, is_tune) in items.iter().zip(tune_flag) {
        if is_tune {
            tune.push(item.clone());
        } else {
            eval.push(item.clone());
        }
    }
    Ok((eval, tune))
}

/// Writes one JSON item per line.
pub fn write_mcq_items(path: &Path, items: &[McqItem]) -> Result<()> {
    let mut out = BufWriter::new(fs::File::create(path)?);
    for item in items {
        serde_json::to_writer(&mut out, item)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_mcq_items(path: &Path) -> Result<Vec<McqItem>> {
    let mut items = Vec::new();
    for (n, line) in BufReader::new(fs::File::open(path)?).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let item: McqItem = serde_json::from_str(&line).map_err(|e| Error::Format {
            kind: "MCQ items",
            path: path.to_path_buf(),
            reason: format!("line {}: {e}", n + 1),
        })?;
        item.validate().map_err(|e| Error::Format {
            kind: "MCQ items",
            path: path.to_path_buf(),
            reason: format!("line {}: {e}", n + 1),
        })?;
        items.push(item);
    }
    Ok(items)
}
