//! Subcommand implementations. Inputs are checked before any output is
//! written; every output lands in the configured output directory.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context as _};
use scenebias::datasets::{build_mini_action_swap, generate_synthetic_sandbox, load_samples, split_train_val};
use scenebias::gradcheck::{model_suite, primitive_suite, GradCheckConfig, SuiteResult};
use scenebias::metrics::{
    build_mcq, emit_report, item_seed, per_background_breakdown, percent_2dp, read_mcq_items, read_predictions,
    split_tune_eval, sweep_series, write_mcq_items, write_predictions, BiasReport, McqItem, Prediction,
    PredictionRecord, ReportFormat, ReportMeta,
};
use scenebias::models::{history_csv, predict_samples, train, BackboneConfig, Model, ModelVariant};
use scenebias::parallel::par_map;
use scenebias::prompt::published::{self, ITEMS_FILE};
use scenebias::prompt::{
    auto_spec, evaluate_prompt, run_auto_loop, run_manual_suite, select_best, write_iterations_csv, write_transcript,
    AutoLoopConfig, ChatClient, Endpoint, HttpChatClient, RecordingClient, ReplayClient,
};
use scenebias::video::{build_augmented_set, io, select_person_box, swap_jobs, SwapJob};
use scenebias::{checkpoint, Error, Manifest};
use serde::{Deserialize, Serialize};

use crate::config::{DataPaths, RunConfig};
use crate::{logging, Cli, Command, Internal};

pub const MODEL_INFO: &str = "model.json";
pub const MODEL_WEIGHTS: &str = "model.blab";
pub const LOOP_STATE: &str = "loop_state.json";

/// Metadata written next to trained weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelInfo {
    pub variant: ModelVariant,
    pub backbone: BackboneConfig,
    pub vocabulary: Vec<String>,
    pub best_epoch: usize,
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::GenSandbox { .. } => "gen-sandbox",
        Command::BuildDataset { .. } => "build-dataset",
        Command::Augment { .. } => "augment",
        Command::Swap { .. } => "swap",
        Command::Train { .. } => "train",
        Command::Eval { .. } => "eval",
        Command::Mcq { .. } => "mcq",
        Command::PromptTune { .. } => "prompt-tune",
        Command::Report { .. } => "report",
        Command::Gradcheck { .. } => "gradcheck",
        Command::Fixture => "fixture",
    }
}

fn existing(p: &Path, key: &str) -> anyhow::Result<PathBuf> {
    fs::canonicalize(p).map_err(|e| anyhow!("{key}: {}: {e}", p.display()))
}

/// Makes every configured input absolute, failing on the first missing one.
fn resolve_inputs(d: &mut DataPaths) -> anyhow::Result<()> {
    let fields: [(&str, &mut Option<PathBuf>); 11] = [
        ("data.manifest", &mut d.manifest),
        ("data.train", &mut d.train),
        ("data.val", &mut d.val),
        ("data.test", &mut d.test),
        ("data.pool", &mut d.pool),
        ("data.detections", &mut d.detections),
        ("data.model", &mut d.model),
        ("data.predictions", &mut d.predictions),
        ("data.items", &mut d.items),
        ("data.eval_items", &mut d.eval_items),
        ("data.transcript", &mut d.transcript),
    ];
    for (key, slot) in fields {
        if let Some(p) = slot.as_mut() {
            *p = existing(p, key)?;
        }
    }
    Ok(())
}

fn need<'a>(p: &'a Option<PathBuf>, key: &str, flag: &str) -> anyhow::Result<&'a Path> {
    p.as_deref()
        .ok_or_else(|| anyhow!("missing input: pass --{flag} or set data.{key}"))
}

fn parse_sweep(points: &[String]) -> anyhow::Result<Vec<(f64, PathBuf)>> {
    points
        .iter()
        .map(|s| {
            let (x, p) = s
                .split_once('=')
                .ok_or_else(|| anyhow!("--sweep expects X=PATH, got {s:?}"))?;
            let x: f64 = x.trim().parse().map_err(|_| anyhow!("--sweep: bad x value {x:?}"))?;
            Ok((x, existing(Path::new(p), "--sweep")?))
        })
        .collect()
}

pub fn execute(cli: &Cli, mut cfg: RunConfig) -> anyhow::Result<()> {
    resolve_inputs(&mut cfg.data)?;
    let sweep = match &cli.command {
        Command::Report { sweep, format, .. } => {
            format.parse::<ReportFormat>()?;
            parse_sweep(sweep)?
        }
        _ => Vec::new(),
    };
    fs::create_dir_all(&cfg.output_dir).with_context(|| format!("creating {}", cfg.output_dir.display()))?;
    cfg.output_dir = fs::canonicalize(&cfg.output_dir)?;
    logging::start(&cfg.output_dir, cli.global.verbose, cli.global.quiet)?;
    log::info!("scenebias {} (seed {})", command_name(&cli.command), cfg.seed);
    let out = cfg.output_dir.clone();
    match &cli.command {
        Command::GenSandbox { .. } => gen_sandbox(&cfg, &out),
        Command::BuildDataset { .. } => build_dataset(&cfg, &out),
        Command::Augment { .. } => augment(&cfg, &out),
        Command::Swap { .. } => swap(&cfg, &out),
        Command::Train { .. } => train_model(&cfg, &out),
        Command::Eval { .. } => eval(&cfg, &out),
        Command::Mcq { .. } => mcq(&cfg, &out),
        Command::PromptTune { manual, resume, .. } => prompt_tune(&cfg, &out, *manual, *resume),
        Command::Report { format, .. } => report(&cfg, &out, format.parse()?, &sweep),
        Command::Gradcheck { max_coords, batch } => gradcheck(&cfg, &out, *max_coords, *batch),
        Command::Fixture => fixture(&cfg, &out),
    }
}

fn gen_sandbox(cfg: &RunConfig, out: &Path) -> anyhow::Result<()> {
    let sb = generate_synthetic_sandbox(&cfg.sandbox.config(), cfg.sandbox.per_class, cfg.seed)?;
    sb.write_to(out, cfg.jobs)?;
    log::info!(
        "wrote {} sandbox videos to {}",
        sb.len(),
        out.join("manifest.json").display()
    );
    Ok(())
}

fn run_swaps(jobs: &[SwapJob], threads: usize) -> anyhow::Result<()> {
    par_map(jobs, threads, SwapJob::run)
        .into_iter()
        .collect::<Result<(), Error>>()?;
    Ok(())
}

fn build_dataset(cfg: &RunConfig, out: &Path) -> anyhow::Result<()> {
    let manifest = Manifest::load(need(&cfg.data.manifest, "manifest", "manifest")?)?;
    let det_dir = need(&cfg.data.detections, "detections", "detections")?;
    let picks = par_map(&manifest.items, cfg.jobs, |item| {
        let path = det_dir.join(format!("{}.json", item.video_id));
        if !path.is_file() {
            return Ok(Err("no detection file"));
        }
        match select_person_box(&io::read_detections(&path)?) {
            Ok(b) => Ok(Ok(b)),
            Err(Error::NoHuman(_)) => Ok(Err("no person detected")),
            Err(e) => Err(e),
        }
    });
    let mut kept = Manifest::new(manifest.classes.clone(), Vec::new());
    let mut boxes = csv::Writer::from_path(out.join("person_boxes.csv"))?;
    boxes.write_record(["video_id", "frame", "confidence", "x0", "y0", "x1", "y1"])?;
    let mut skipped = String::new();
    for (item, pick) in manifest.items.iter().zip(picks) {
        match pick? {
            Ok(b) => {
                let [x0, y0, x1, y1] = b.bbox.map(|v| v.to_string());
                boxes.write_record([
                    item.video_id.clone(),
                    b.frame.to_string(),
                    b.confidence.to_string(),
                    x0,
                    y0,
                    x1,
                    y1,
                ])?;
                kept.items.push(item.clone());
            }
            Err(reason) => {
                log::warn!("skipping {}: {reason}", item.video_id);
                skipped.push_str(&format!("{}\t{reason}\n", item.video_id));
            }
        }
    }
    boxes.flush()?;
    fs::write(out.join("skipped.txt"), skipped)?;
    if kept.is_empty() {
        bail!("no video has a person detection");
    }
    kept.save(&out.join("dataset.json"))?;
    let (tr, va) = split_train_val(&kept, cfg.metrics.train_fraction, cfg.seed)?;
    tr.save(&out.join("train.json"))?;
    va.save(&out.join("val.json"))?;
    log::info!(
        "kept {} of {} videos: {} train, {} val",
        kept.len(),
        manifest.len(),
        tr.len(),
        va.len()
    );
    Ok(())
}

fn augment(cfg: &RunConfig, out: &Path) -> anyhow::Result<()> {
    let dataset = Manifest::load(need(&cfg.data.manifest, "manifest", "manifest")?)?;
    let pool = Manifest::load(need(&cfg.data.pool, "pool", "pool")?)?;
    let aug = build_augmented_set(&dataset, &pool, cfg.seed, out)?;
    run_swaps(&swap_jobs(&aug, &dataset, &pool)?, cfg.jobs)?;
    aug.save(&out.join("augmented.json"))?;
    log::info!("augmented {} items to {}", aug.len() / 2, aug.len());
    Ok(())
}

fn swap(cfg: &RunConfig, out: &Path) -> anyhow::Result<()> {
    let m = Manifest::load(need(&cfg.data.manifest, "manifest", "manifest")?)?;
    let swaps = build_mini_action_swap(&m, cfg.seed, cfg.metrics.swap_target, out)?;
    run_swaps(&swap_jobs(&swaps, &m, &m)?, cfg.jobs)?;
    swaps.save(&out.join("swap.json"))?;
    log::info!("built {} swap videos", swaps.len());
    Ok(())
}

fn check_masks(m: &Manifest, variant: ModelVariant) -> anyhow::Result<()> {
    if variant.needs_mask() {
        if let Some(item) = m.items.iter().find(|i| i.masks_dir.is_none()) {
            bail!("variant {variant} needs masks but {} has none", item.video_id);
        }
    }
    Ok(())
}

fn train_model(cfg: &RunConfig, out: &Path) -> anyhow::Result<()> {
    let full = Manifest::load(need(&cfg.data.train, "train", "train")?)?;
    let (tr, va) = match &cfg.data.val {
        Some(v) => (full, Manifest::load(v)?),
        None => split_train_val(&full, cfg.metrics.train_fraction, cfg.seed)?,
    };
    let variant = cfg.model.variant;
    check_masks(&tr, variant)?;
    check_masks(&va, variant)?;
    let vocabulary = tr.vocabulary();
    let backbone = BackboneConfig {
        classes: vocabulary.len(),
        ..cfg.model.backbone.clone()
    };
    backbone.validate()?;
    let (f, s) = (backbone.frames, backbone.size);
    let train_set = load_samples(&tr, &vocabulary, f, s, cfg.jobs)?;
    let val_set = load_samples(&va, &vocabulary, f, s, cfg.jobs)?;
    let mut model = Model::new(variant, backbone.clone(), cfg.seed)?;
    log::info!(
        "training {variant} on {} videos ({} val) for {} epochs",
        train_set.len(),
        val_set.len(),
        cfg.train.epochs
    );
    let outcome = train(&mut model, &train_set, &val_set, &cfg.train, cfg.seed)?;
    checkpoint::save(&out.join(MODEL_WEIGHTS), &model.params)?;
    let info = ModelInfo {
        variant,
        backbone,
        vocabulary,
        best_epoch: outcome.best_epoch,
    };
    write_json(&out.join(MODEL_INFO), &info)?;
    fs::write(out.join("history.csv"), history_csv(&outcome.history))?;
    log::info!("best epoch {}", outcome.best_epoch);
    Ok(())
}

fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> anyhow::Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    fs::write(path, s)?;
    Ok(())
}

fn load_model(dir: &Path) -> anyhow::Result<(ModelInfo, Model)> {
    let info_path = dir.join(MODEL_INFO);
    let info: ModelInfo =
        serde_json::from_str(&fs::read_to_string(&info_path).with_context(|| info_path.display().to_string())?)
            .map_err(|e| Error::Format {
                kind: "model info",
                path: info_path.clone(),
                reason: e.to_string(),
            })?;
    let mut model = Model::new(info.variant, info.backbone.clone(), 0)?;
    model.params.load_from(&checkpoint::load(&dir.join(MODEL_WEIGHTS))?)?;
    Ok((info, model))
}

fn write_ranked(path: &Path, records: &[PredictionRecord], k: usize) -> anyhow::Result<()> {
    let b = per_background_breakdown(records);
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["table", "rank", "background_class", "n", "shacc", "sberr"])?;
    for (table, rows) in [("highest_sberr", b.top_high(k)), ("lowest_sberr", b.top_low(k))] {
        for (i, r) in rows.iter().enumerate() {
            let c = r.counts;
            w.write_record([
                table.to_owned(),
                (i + 1).to_string(),
                r.class.clone(),
                c.n.to_string(),
                percent_2dp(c.human, c.n),
                percent_2dp(c.background, c.n),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

fn eval(cfg: &RunConfig, out: &Path) -> anyhow::Result<()> {
    let (info, model) = load_model(need(&cfg.data.model, "model", "model")?)?;
    let m = Manifest::load(need(&cfg.data.manifest, "manifest", "manifest")?)?;
    check_masks(&m, info.variant)?;
    let (f, s) = (info.backbone.frames, info.backbone.size);
    let samples = load_samples(&m, &info.vocabulary, f, s, cfg.jobs)?;
    let predicted = predict_samples(&model, &samples, cfg.train.batch_size)?;
    let records: Vec<PredictionRecord> = m
        .items
        .iter()
        .zip(predicted)
        .map(|(item, p)| PredictionRecord {
            video_id: item.video_id.clone(),
            human_class: item.human_class.clone(),
            background_class: item.scene_class().to_owned(),
            predicted: Prediction::Class(info.vocabulary[p].clone()),
        })
        .collect();
    write_predictions(&out.join("predictions.csv"), &records)?;
    let meta = ReportMeta {
        model: Some(info.variant.to_string()),
        frames: Some(f),
        seed: Some(cfg.seed),
        ..Default::default()
    };
    let report = BiasReport::from_records(&records, meta)?;
    emit_report(&report, ReportFormat::Json, &out.join("report.json"))?;
    emit_report(&report, ReportFormat::Csv, &out.join("report.csv"))?;
    write_ranked(&out.join("ranked.csv"), &records, cfg.metrics.top_k)?;
    log::info!(
        "{}: SHAcc {:.2}%, SBErr {:.2}% on {} videos",
        info.variant,
        report.shacc(),
        report.sberr(),
        records.len()
    );
    Ok(())
}

fn mcq(cfg: &RunConfig, out: &Path) -> anyhow::Result<()> {
    let m = Manifest::load(need(&cfg.data.manifest, "manifest", "manifest")?)?;
    let mut vocabulary = m.vocabulary();
    let mut known: BTreeSet<String> = vocabulary.iter().cloned().collect();
    for item in &m.items {
        let scene = item.scene_class().to_owned();
        if known.insert(scene.clone()) {
            vocabulary.push(scene);
        }
    }
    let mut items: Vec<McqItem> = Vec::new();
    for item in &m.items {
        let (human, scene) = (&item.human_class, item.scene_class());
        if human == scene {
            log::warn!("skipping {}: human and background share label {human:?}", item.video_id);
            continue;
        }
        items.push(build_mcq(
            &item.video_id,
            human,
            scene,
            &vocabulary,
            item_seed(cfg.seed, &item.video_id),
        )?);
    }
    if items.is_empty() {
        bail!("no item has differing human and background labels");
    }
    let (eval_set, tune_set) = split_tune_eval(&items, cfg.metrics.tune_fraction, cfg.seed)?;
    write_mcq_items(&out.join("mcq_tune.jsonl"), &tune_set)?;
    write_mcq_items(&out.join("mcq_eval.jsonl"), &eval_set)?;
    log::info!(
        "{} MCQ items: {} tune, {} eval",
        items.len(),
        tune_set.len(),
        eval_set.len()
    );
    Ok(())
}

#[derive(Serialize)]
struct Scored<'a> {
    index: usize,
    prompt: &'a str,
    tune_shacc: String,
    tune_sberr: String,
    eval_shacc: String,
    eval_sberr: String,
}

fn prompt_tune(cfg: &RunConfig, out: &Path, manual: bool, resume: bool) -> anyhow::Result<()> {
    let items_path = match (&cfg.data.items, &cfg.data.transcript) {
        (Some(p), _) => p.clone(),
        (None, Some(t)) => existing(
            &t.parent().unwrap_or(Path::new(".")).join(ITEMS_FILE),
            "items beside the transcript",
        )?,
        (None, None) => bail!("missing input: pass --items or set data.items"),
    };
    let tune_items = read_mcq_items(&items_path)?;
    let eval_items = match &cfg.data.eval_items {
        Some(p) => read_mcq_items(p)?,
        None => tune_items.clone(),
    };
    let state_path = out.join(LOOP_STATE);
    if !resume && state_path.exists() {
        fs::remove_file(&state_path)?;
    }
    let loop_cfg = AutoLoopConfig {
        iterations: cfg.prompt.iterations,
        choice_prefix: cfg.prompt.choice_prefix.clone(),
        jobs: cfg.jobs,
        ..Default::default()
    };
    let p = &cfg.prompt;
    match &cfg.data.transcript {
        Some(t) => {
            let replay = ReplayClient::load(t)?;
            log::info!("replaying {} recorded responses from {}", replay.len(), t.display());
            tune_with(&replay, &replay, cfg, &loop_cfg, &tune_items, &eval_items, out, manual)
        }
        None => {
            let engineer = RecordingClient::new(HttpChatClient::new(p.engineer.clone())?);
            let solver = RecordingClient::new(HttpChatClient::new(p.solver.clone())?);
            let result = tune_with(
                &engineer,
                &solver,
                cfg,
                &loop_cfg,
                &tune_items,
                &eval_items,
                out,
                manual,
            );
            let mut entries = engineer.entries();
            entries.extend(solver.entries());
            entries.sort_by(|a, b| a.request_hash.cmp(&b.request_hash));
            entries.dedup_by(|a, b| a.request_hash == b.request_hash);
            write_transcript(&out.join(published::TRANSCRIPT_FILE), &entries)?;
            result
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn tune_with(
    engineer_client: &dyn ChatClient,
    solver_client: &dyn ChatClient,
    cfg: &RunConfig,
    loop_cfg: &AutoLoopConfig,
    tune_items: &[McqItem],
    eval_items: &[McqItem],
    out: &Path,
    manual: bool,
) -> anyhow::Result<()> {
    let p = &cfg.prompt;
    let engineer = Endpoint::new(engineer_client, &p.engineer.model, p.engineer.temperature);
    let solver = Endpoint::new(solver_client, &p.solver.model, p.solver.temperature);
    let state = run_auto_loop(loop_cfg, &engineer, &solver, tune_items, Some(&out.join(LOOP_STATE)))?;
    write_iterations_csv(&out.join("iterations.csv"), &state.iterations)?;
    write_json(&out.join("history.json"), state.history.messages())?;
    let best = select_best(&state.iterations)?;
    let spec = auto_spec(best.index, &best.prompt, p.choice_prefix.as_deref())
        .expect("selected iterations have a usable prompt");
    let held_out = evaluate_prompt(&spec, eval_items, &solver, cfg.jobs)?.counts;
    let tune = best.counts.expect("selected iterations were evaluated");
    write_json(
        &out.join("best.json"),
        &Scored {
            index: best.index,
            prompt: &best.prompt,
            tune_shacc: percent_2dp(tune.human, tune.n),
            tune_sberr: percent_2dp(tune.background, tune.n),
            eval_shacc: percent_2dp(held_out.human, held_out.n),
            eval_sberr: percent_2dp(held_out.background, held_out.n),
        },
    )?;
    log::info!(
        "best prompt: iteration {} (SHAcc {}%, SBErr {}%)",
        best.index,
        percent_2dp(tune.human, tune.n),
        percent_2dp(tune.background, tune.n)
    );
    if manual {
        let results = run_manual_suite(&published::manual_specs(), eval_items, &solver, cfg.jobs)?;
        let mut w = csv::Writer::from_path(out.join("manual.csv"))?;
        w.write_record(["id", "n", "shacc", "sberr"])?;
        for r in &results {
            let c = r.report.overall;
            w.write_record([
                r.spec.id.clone(),
                c.n.to_string(),
                percent_2dp(c.human, c.n),
                percent_2dp(c.background, c.n),
            ])?;
            emit_report(
                &r.report,
                ReportFormat::Json,
                &out.join(format!("manual_{}.json", r.spec.id)),
            )?;
        }
        w.flush()?;
    }
    Ok(())
}

fn report(cfg: &RunConfig, out: &Path, format: ReportFormat, sweep: &[(f64, PathBuf)]) -> anyhow::Result<()> {
    let records = read_predictions(need(&cfg.data.predictions, "predictions", "predictions")?)?;
    let meta = ReportMeta {
        seed: Some(cfg.seed),
        ..Default::default()
    };
    let rep = BiasReport::from_records(&records, meta.clone())?;
    let ext = match format {
        ReportFormat::Json => "json",
        ReportFormat::Csv => "csv",
    };
    emit_report(&rep, format, &out.join(format!("report.{ext}")))?;
    write_ranked(&out.join("ranked.csv"), &records, cfg.metrics.top_k)?;
    log::info!(
        "SHAcc {:.2}%, SBErr {:.2}% on {} records",
        rep.shacc(),
        rep.sberr(),
        records.len()
    );
    if !sweep.is_empty() {
        let points = sweep
            .iter()
            .map(|(x, path)| Ok((*x, BiasReport::from_records(&read_predictions(path)?, meta.clone())?)))
            .collect::<Result<Vec<_>, Error>>()?;
        let series = sweep_series(&points)?;
        fs::write(out.join("sweep.csv"), series.to_csv()?)?;
        log::info!(
            "sweep: SHAcc nondecreasing {}, SBErr nonincreasing {}",
            series.shacc_nondecreasing,
            series.sberr_nonincreasing
        );
    }
    Ok(())
}

fn write_suite(w: &mut csv::Writer<fs::File>, suite: &str, results: &SuiteResult) -> anyhow::Result<Vec<String>> {
    let mut failed = Vec::new();
    for (name, rep) in results {
        for p in &rep.params {
            w.write_record([
                suite.to_owned(),
                name.clone(),
                p.name.clone(),
                p.checked.to_string(),
                p.skipped.to_string(),
                format!("{:.3e}", p.max_rel_error),
            ])?;
        }
        log::info!("{suite}/{name}: max relative error {:.3e}", rep.max_rel_error());
        if !rep.passed() {
            failed.push(format!("{suite}/{name}"));
        }
    }
    Ok(failed)
}

fn gradcheck(cfg: &RunConfig, out: &Path, max_coords: usize, batch: usize) -> anyhow::Result<()> {
    if max_coords == 0 || batch == 0 {
        bail!("--max-coords and --batch must be positive");
    }
    let gc = GradCheckConfig {
        max_coords: Some(max_coords),
        seed: cfg.seed,
        ..Default::default()
    };
    let mut w = csv::Writer::from_path(out.join("gradcheck.csv"))?;
    w.write_record(["suite", "check", "param", "checked", "skipped", "max_rel_error"])?;
    let mut failed = write_suite(&mut w, "primitive", &primitive_suite(&gc)?)?;
    failed.extend(write_suite(
        &mut w,
        "model",
        &model_suite(&cfg.model.backbone, batch, &gc)?,
    )?);
    w.flush()?;
    if !failed.is_empty() {
        return Err(Internal(format!("gradient check failed: {}", failed.join(", "))).into());
    }
    log::info!("all gradient checks passed (tolerance {:e})", gc.tolerance);
    Ok(())
}

fn fixture(cfg: &RunConfig, out: &Path) -> anyhow::Result<()> {
    let f = published::write_fixture(out, cfg.seed, cfg.jobs)?;
    let scores = published::published();
    let mut w = csv::Writer::from_path(out.join("published.csv"))?;
    w.write_record(["kind", "id", "shacc", "sberr"])?;
    for m in &scores.manual {
        w.write_record(["manual", m.id.as_str(), m.shacc.as_str(), m.sberr.as_str()])?;
    }
    for (i, a) in scores.auto.iter().enumerate() {
        w.write_record(["auto".to_owned(), (i + 1).to_string(), a.shacc.clone(), a.sberr.clone()])?;
    }
    w.flush()?;
    log::info!(
        "wrote {} items and {} transcript entries",
        f.items.len(),
        f.transcript.len()
    );
    Ok(())
}
