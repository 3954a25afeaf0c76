//! Swap-set bias metrics: SHAcc (prediction = human class) and SBErr
//! (prediction = background class), overall and per background class.

mod mcq;
mod report;

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{invalid, Result};

pub use mcq::{build_mcq, item_seed, read_mcq_items, split_tune_eval, write_mcq_items, McqItem, CHOICES, LETTERS};
pub use report::{
    emit_report, read_predictions, sweep_series, write_predictions, BiasReport, ReportFormat, ReportMeta, Sweep,
    SweepRow,
};

/// Spelling of an abstention in prediction files.
pub const ABSTAIN: &str = "ABSTAIN";

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Prediction {
    Class(String),
    Abstain,
}

impl Prediction {
    pub fn label(&self) -> Option<&str> {
        match self {
            Prediction::Class(c) => Some(c),
            Prediction::Abstain => None,
        }
    }
}

impl fmt::Display for Prediction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label().unwrap_or(ABSTAIN))
    }
}

impl FromStr for Prediction {
    type Err = std::convert::Infallible;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Ok(if s == ABSTAIN {
            Prediction::Abstain
        } else {
            Prediction::Class(s.to_owned())
        })
    }
}

impl Serialize for Prediction {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Prediction {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Ok(s.parse().expect("infallible"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub video_id: String,
    pub human_class: String,
    pub background_class: String,
    pub predicted: Prediction,
}

/// Exact outcome counts. A prediction matching the background counts as a
/// background error only when the background differs from the human class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub n: u64,
    pub human: u64,
    pub background: u64,
    pub abstain: u64,
}

impl Counts {
    pub fn add(&mut self, r: &PredictionRecord) {
        self.n += 1;
        match r.predicted.label() {
            None => self.abstain += 1,
            Some(p) if p == r.human_class => self.human += 1,
            Some(p) if p == r.background_class => self.background += 1,
            Some(_) => {}
        }
    }

    pub fn merge(&mut self, other: &Counts) {
        self.n += other.n;
        self.human += other.human;
        self.background += other.background;
        self.abstain += other.abstain;
    }

    /// Predictions that are neither class nor an abstention.
    pub fn other(&self) -> u64 {
        self.n - self.human - self.background - self.abstain
    }

    pub fn shacc(&self) -> f64 {
        percent(self.human, self.n)
    }

    pub fn sberr(&self) -> f64 {
        percent(self.background, self.n)
    }

    pub fn abstain_rate(&self) -> f64 {
        percent(self.abstain, self.n)
    }
}

pub fn percent(k: u64, n: u64) -> f64 {
    if n == 0 {
        0.0
    } else {
        100.0 * k as f64 / n as f64
    }
}

/// 100·k/n rounded half-up to two decimals, computed in integers.
pub fn percent_2dp(k: u64, n: u64) -> String {
    if n == 0 {
        return "0.00".to_owned();
    }
    let (k, n) = (k as u128, n as u128);
    let hundredths = (20_000 * k + n) / (2 * n);
    format!("{}.{:02}", hundredths / 100, hundredths % 100)
}

/// Compares k1/n1 with k2/n2 exactly.
pub(crate) fn cmp_frac(k1: u64, n1: u64, k2: u64, n2: u64) -> Ordering {
    (k1 as u128 * n2 as u128).cmp(&(k2 as u128 * n1 as u128))
}

pub fn compute_metrics(records: &[PredictionRecord]) -> Result<Counts> {
    if records.is_empty() {
        return Err(invalid!("no prediction records"));
    }
    let mut c = Counts::default();
    records.iter().for_each(|r| c.add(r));
    Ok(c)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassRow {
    pub class: String,
    pub counts: Counts,
}

/// Per-background rows (sorted by class) and the two ranked views.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Breakdown {
    pub rows: Vec<ClassRow>,
    /// SBErr descending, then class name.
    pub high: Vec<ClassRow>,
    /// SBErr ascending, then SHAcc ascending, then class name.
    pub low: Vec<ClassRow>,
}

impl Breakdown {
    pub fn top_high(&self, k: usize) -> &[ClassRow] {
        &self.high[..k.min(self.high.len())]
    }

    pub fn top_low(&self, k: usize) -> &[ClassRow] {
        &self.low[..k.min(self.low.len())]
    }
}

pub fn per_background_breakdown(records: &[PredictionRecord]) -> Breakdown {
    let mut groups: BTreeMap<&str, Counts> = BTreeMap::new();
    for r in records {
        groups.entry(&r.background_class).or_default().add(r);
    }
    let rows: Vec<ClassRow> = groups
        .into_iter()
        .map(|(class, counts)| ClassRow {
            class: class.to_owned(),
            counts,
        })
        .collect();
    let mut high = rows.clone();
    high.sort_by(|a, b| {
        cmp_frac(b.counts.background, b.counts.n, a.counts.background, a.counts.n).then_with(|| a.class.cmp(&b.class))
    });
    let mut low = rows.clone();
    low.sort_by(|a, b| {
        cmp_frac(a.counts.background, a.counts.n, b.counts.background, b.counts.n)
            .then_with(|| cmp_frac(a.counts.human, a.counts.n, b.counts.human, b.counts.n))
            .then_with(|| a.class.cmp(&b.class))
    });
    Breakdown { rows, high, low }
}
