use std::cmp::Ordering;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{cmp_frac, compute_metrics, per_background_breakdown, percent_2dp, ClassRow, Counts, PredictionRecord};
use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportMeta {
    pub model: Option<String>,
    pub prompt: Option<String>,
    pub frames: Option<usize>,
    pub seed: Option<u64>,
}

/// Overall and per-background-class outcome counts. Percentages are derived
/// on demand and rounded only when serialized.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "WireReport", into = "WireReport")]
pub struct BiasReport {
    pub meta: ReportMeta,
    pub overall: Counts,
    /// Rows sorted by background class name.
    pub rows: Vec<ClassRow>,
}

impl BiasReport {
    pub fn from_records(records: &[PredictionRecord], meta: ReportMeta) -> Result<Self> {
        Ok(Self {
            meta,
            overall: compute_metrics(records)?,
            rows: per_background_breakdown(records).rows,
        })
    }

    pub fn shacc(&self) -> f64 {
        self.overall.shacc()
    }

    pub fn sberr(&self) -> f64 {
        self.overall.sberr()
    }

    /// Top-1 accuracy against the human label; equals SHAcc on swap sets.
    pub fn accuracy(&self) -> f64 {
        self.overall.shacc()
    }

    pub fn abstain(&self) -> f64 {
        self.overall.abstain_rate()
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WireRow {
    class: String,
    n: u64,
    human_correct: u64,
    background_errors: u64,
    abstained: u64,
    shacc: String,
    sberr: String,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WireReport {
    metadata: ReportMeta,
    n: u64,
    human_correct: u64,
    background_errors: u64,
    abstained: u64,
    shacc: String,
    sberr: String,
    accuracy: String,
    abstain: String,
    per_background: Vec<WireRow>,
}

fn counts_checked(n: u64, human: u64, background: u64, abstain: u64) -> std::result::Result<Counts, String> {
    if human + background + abstain > n {
        return Err(format!("counts exceed n={n}"));
    }
    Ok(Counts {
        n,
        human,
        background,
        abstain,
    })
}

impl From<BiasReport> for WireReport {
    fn from(r: BiasReport) -> Self {
        let o = r.overall;
        Self {
            metadata: r.meta,
            n: o.n,
            human_correct: o.human,
            background_errors: o.background,
            abstained: o.abstain,
            shacc: percent_2dp(o.human, o.n),
            sberr: percent_2dp(o.background, o.n),
            accuracy: percent_2dp(o.human, o.n),
            abstain: percent_2dp(o.abstain, o.n),
            per_background: r
                .rows
                .into_iter()
                .map(|row| {
                    let c = row.counts;
                    WireRow {
                        class: row.class,
                        n: c.n,
                        human_correct: c.human,
                        background_errors: c.background,
                        abstained: c.abstain,
                        shacc: percent_2dp(c.human, c.n),
                        sberr: percent_2dp(c.background, c.n),
                    }
                })
                .collect(),
        }
    }
}

fn check_pct(field: &str, stated: &str, k: u64, n: u64) -> std::result::Result<(), String> {
    let want = percent_2dp(k, n);
    if stated != want {
        return Err(format!("{field} is {stated:?} but the counts give {want:?}"));
    }
    Ok(())
}

impl TryFrom<WireReport> for BiasReport {
    type Error = String;

    fn try_from(w: WireReport) -> std::result::Result<Self, String> {
        let overall = counts_checked(w.n, w.human_correct, w.background_errors, w.abstained)?;
        check_pct("shacc", &w.shacc, overall.human, overall.n)?;
        check_pct("sberr", &w.sberr, overall.background, overall.n)?;
        check_pct("accuracy", &w.accuracy, overall.human, overall.n)?;
        check_pct("abstain", &w.abstain, overall.abstain, overall.n)?;
        let mut rows = Vec::with_capacity(w.per_background.len());
        let mut total = Counts::default();
        for row in w.per_background {
            let counts = counts_checked(row.n, row.human_correct, row.background_errors, row.abstained)?;
            check_pct(&format!("{} shacc", row.class), &row.shacc, counts.human, counts.n)?;
            check_pct(&format!("{} sberr", row.class), &row.sberr, counts.background, counts.n)?;
            total.merge(&counts);
            rows.push(ClassRow {
                class: row.class,
                counts,
            });
        }
        if !rows.is_empty() && total != overall {
            return Err("per-background counts do not sum to the overall counts".to_owned());
        }
        Ok(Self {
            meta: w.metadata,
            overall,
            rows,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Csv,
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "json" => Ok(Self::Json),
            "csv" => Ok(Self::Csv),
            other => Err(invalid!("unknown report format {other:?} (expected json or csv)")),
        }
    }
}

pub const REPORT_CSV_HEADER: [&str; 7] = [
    "background_class",
    "n",
    "human_correct",
    "background_errors",
    "abstained",
    "shacc",
    "sberr",
];

fn report_csv(report: &BiasReport) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(REPORT_CSV_HEADER)?;
    for row in &report.rows {
        let c = row.counts;
        w.write_record([
            row.class.clone(),
            c.n.to_string(),
            c.human.to_string(),
            c.background.to_string(),
            c.abstain.to_string(),
            percent_2dp(c.human, c.n),
            percent_2dp(c.background, c.n),
        ])?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

/// Writes the report as JSON (whole report) or CSV (per-background table).
pub fn emit_report(report: &BiasReport, format: ReportFormat, path: &Path) -> Result<()> {
    let bytes = match format {
        ReportFormat::Json => {
            let mut s = serde_json::to_string_pretty(report)?;
            s.push('\n');
            s.into_bytes()
        }
        ReportFormat::Csv => report_csv(report)?,
    };
    Ok(fs::write(path, bytes)?)
}

pub const PREDICTIONS_HEADER: [&str; 4] = ["video_id", "human_class", "background_class", "predicted"];

pub fn write_predictions(path: &Path, records: &[PredictionRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(PREDICTIONS_HEADER)?;
    for r in records {
        w.write_record([
            &r.video_id,
            &r.human_class,
            &r.background_class,
            &r.predicted.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_predictions(path: &Path) -> Result<Vec<PredictionRecord>> {
    let mut r = csv::Reader::from_path(path)?;
    let header: Vec<String> = r.headers()?.iter().map(str::to_owned).collect();
    if header != PREDICTIONS_HEADER {
        return Err(Error::Format {
            kind: "predictions CSV",
            path: path.to_path_buf(),
            reason: format!("header {header:?}, expected {PREDICTIONS_HEADER:?}"),
        });
    }
    r.deserialize().map(|rec| rec.map_err(Error::from)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub x: f64,
    pub counts: Counts,
}

/// Plot data for a metric-versus-x curve, sorted by x, with monotonicity
/// flags over consecutive points (exact fraction comparisons).
#[derive(Debug, Clone, PartialEq)]
pub struct Sweep {
    pub rows: Vec<SweepRow>,
    pub shacc_nondecreasing: bool,
    pub shacc_nonincreasing: bool,
    pub sberr_nondecreasing: bool,
    pub sberr_nonincreasing: bool,
}

impl Sweep {
    pub fn to_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["x", "shacc", "sberr"])?;
        for row in &self.rows {
            let c = row.counts;
            w.write_record([
                row.x.to_string(),
                percent_2dp(c.human, c.n),
                percent_2dp(c.background, c.n),
            ])?;
        }
        w.into_inner().map_err(|e| Error::Io(e.into_error()))
    }
}

pub fn sweep_series(points: &[(f64, BiasReport)]) -> Result<Sweep> {
    let mut rows: Vec<SweepRow> = points
        .iter()
        .map(|(x, r)| SweepRow {
            x: *x,
            counts: r.overall,
        })
        .collect();
    if let Some(bad) = rows.iter().find(|r| !r.x.is_finite()) {
        return Err(invalid!("sweep x value {} is not finite", bad.x));
    }
    rows.sort_by(|a, b| a.x.total_cmp(&b.x));
    if let Some(w) = rows.windows(2).find(|w| w[0].x == w[1].x) {
        return Err(invalid!("duplicate sweep x value {}", w[0].x));
    }
    let steps = |f: fn(&Counts) -> u64, ok: fn(Ordering) -> bool| {
        rows.windows(2)
            .all(|w| ok(cmp_frac(f(&w[1].counts), w[1].counts.n, f(&w[0].counts), w[0].counts.n)))
    };
    Ok(Sweep {
        shacc_nondecreasing: steps(|c| c.human, Ordering::is_ge),
        shacc_nonincreasing: steps(|c| c.human, Ordering::is_le),
        sberr_nondecreasing: steps(|c| c.background, Ordering::is_ge),
        sberr_nonincreasing: steps(|c| c.background, Ordering::is_le),
        rows,
    })
}
