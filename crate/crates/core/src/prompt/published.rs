//! The published prompt texts and scores, and a deterministic synthesizer
//! for a replay transcript that reproduces those scores exactly.
//!
//! The published numbers come from a proprietary solver on licensed videos,
//! so the transcript is synthetic: 8,349 MCQ items over an invented action
//! vocabulary (the smallest item count for which every published percentage
//! is an exact two-decimal rounding of some count), solver answers planned
//! to hit each prompt's counts, and engineer replies carrying the published
//! prompts in order. The engineer side is recorded by running the real loop.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::Deserialize;

use super::{
    auto_spec, evaluate_prompt, request_hash, run_auto_loop, run_manual_suite, write_transcript, AutoLoopConfig,
    ChatClient, ChatError, ChatRequest, Endpoint, LoopState, PromptOrigin, PromptSpec, RecordingClient, ReplayClient,
    Role, TranscriptEntry,
};
use crate::error::{invalid, Result};
use crate::metrics::{build_mcq, item_seed, percent_2dp, write_mcq_items, Counts, McqItem, LETTERS};
use crate::rng;

pub const FIXTURE_ITEMS: usize = 8349;
pub const ENGINEER_MODEL: &str = "gpt-4.1";
pub const SOLVER_MODEL: &str = "gpt-4o-mini";
pub const ITEMS_FILE: &str = "items.jsonl";
pub const TRANSCRIPT_FILE: &str = "transcript.jsonl";

/// Invented labels; none contains another, so label matching is unambiguous.
pub const VOCABULARY: [&str; 50] = [
    "archery",
    "baking bread",
    "bowling",
    "bungee jumping",
    "canoeing",
    "cartwheeling",
    "dribbling basketball",
    "fencing",
    "fishing",
    "gardening",
    "golf putting",
    "horse riding",
    "hurdling",
    "ice skating",
    "javelin throw",
    "juggling balls",
    "karate",
    "kayaking",
    "knitting",
    "laying bricks",
    "making tea",
    "marching",
    "milking cow",
    "mowing lawn",
    "paragliding",
    "planting trees",
    "playing cello",
    "playing drums",
    "playing harp",
    "pole vault",
    "pottery making",
    "push ups",
    "rock climbing",
    "rowing",
    "sailing",
    "sanding wood",
    "shoveling snow",
    "skateboarding",
    "snowboarding",
    "surfing",
    "sweeping floor",
    "swimming laps",
    "tai chi",
    "tennis serve",
    "trampolining",
    "tying knot",
    "vacuuming",
    "walking dog",
    "welding",
    "zumba",
];

const PUBLISHED_JSON: &str = include_str!("../../fixtures/published_prompts.json");

#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManualEntry {
    pub id: String,
    pub question: String,
    pub prefix: Option<String>,
    pub shacc: String,
    pub sberr: String,
}

impl ManualEntry {
    pub fn spec(&self) -> PromptSpec {
        PromptSpec::from_question(&self.id, &self.question, self.prefix.clone(), PromptOrigin::Manual)
            .expect("question has no placeholder")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AutoEntry {
    pub prompt: String,
    pub shacc: String,
    pub sberr: String,
}

/// Published prompts with their scores as printed (two decimals).
#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PublishedScores {
    pub manual: Vec<ManualEntry>,
    pub auto: Vec<AutoEntry>,
    /// 1-based index of the highlighted automated prompt.
    pub bolded: usize,
}

pub fn published() -> PublishedScores {
    serde_json::from_str(PUBLISHED_JSON).expect("bundled published fixture parses")
}

/// Neutral, prefixed, human-focused and background-focused prompts.
pub fn manual_specs() -> Vec<PromptSpec> {
    published().manual.iter().map(ManualEntry::spec).collect()
}

/// Smallest count k with round(100·k/n, 2) printing as `pct`.
fn count_for(pct: &str, n: usize) -> Result<u64> {
    let n = n as u64;
    let hundredths: u64 = pct
        .replace('.', "")
        .parse()
        .map_err(|_| invalid!("bad percentage {pct:?}"))?;
    let guess = hundredths * n / 10_000;
    (guess.saturating_sub(2)..=guess + 2)
        .find(|&k| k <= n && percent_2dp(k, n) == pct)
        .ok_or_else(|| invalid!("{pct}% is not reachable with {n} items"))
}

pub fn fixture_items(seed: u64) -> Result<Vec<McqItem>> {
    let vocab: Vec<String> = VOCABULARY.iter().map(|s| s.to_string()).collect();
    let mut r = rng::derived(seed, "published/items");
    (0..FIXTURE_ITEMS)
        .map(|k| {
            let id = format!("swap_{k:05}");
            let h = r.gen_range(0..vocab.len());
            let b = (h + r.gen_range(1..vocab.len())) % vocab.len();
            build_mcq(&id, &vocab[h], &vocab[b], &vocab, item_seed(seed, &id))
        })
        .collect()
}

/// Solver transcript entries giving `spec` exactly (human, background)
/// correct/biased answers; the rest name a distractor or are unparseable.
fn plan_solver(
    spec: &PromptSpec,
    items: &[McqItem],
    human: u64,
    background: u64,
    solver: &Endpoint<'_>,
    seed: u64,
) -> Result<Vec<TranscriptEntry>> {
    let mut r = rng::derived(seed, &format!("published/answers/{}", spec.template));
    let mut order: Vec<usize> = (0..items.len()).collect();
    order.shuffle(&mut r);
    let mut out = Vec::with_capacity(items.len());
    for (rank, &i) in order.iter().enumerate() {
        let item = &items[i];
        let rank = rank as u64;
        let slot = if rank < human {
            Some(item.human_index)
        } else if rank < human + background {
            Some(item.background_index)
        } else if r.gen_ratio(1, 40) {
            None
        } else {
            Some(item.distractor_indices[r.gen_range(0..item.distractor_indices.len())])
        };
        let response = match slot {
            None => "I cannot determine the action from this video.".to_owned(),
            Some(s) => {
                let (l, label) = (LETTERS[s], &item.choices[s]);
                match r.gen_range(0..6) {
                    0 => l.to_string(),
                    1 => format!("{l}."),
                    2 => format!("({l})"),
                    3 => match &spec.prefix {
                        Some(p) => format!("{l}. {p} {label}"),
                        None => format!("{l}. {label}"),
                    },
                    4 => format!("Answer: {l}"),
                    _ => format!("The person is {label}."),
                }
            }
        };
        let req = solver.request(super::render_prompt(spec, item)?, Some(&item.video_id));
        out.push(TranscriptEntry {
            request_hash: request_hash(&req),
            response,
        });
    }
    Ok(out)
}

/// Returns published prompts in order; the k-th engineer call of an
/// iteration is recognised by the number of user turns in the request.
struct ScriptedEngineer {
    prompts: Vec<String>,
}

impl ChatClient for ScriptedEngineer {
    fn send(&self, req: &ChatRequest) -> Result<String, ChatError> {
        let turn = req.messages.iter().filter(|m| m.role == Role::User).count();
        let prompt = self
            .prompts
            .get(turn.wrapping_sub(1))
            .ok_or_else(|| ChatError::Protocol(format!("no scripted reply for turn {turn}")))?;
        Ok(if turn == 1 {
            format!("Here is a prompt that keeps the model on the person:\n\n\"{prompt}\"")
        } else {
            format!("Thanks for the scores. Revised prompt:\n\n\"{prompt}\"")
        })
    }
}

fn check_counts(what: &str, c: &Counts, shacc: &str, sberr: &str) -> Result<()> {
    let got = (percent_2dp(c.human, c.n), percent_2dp(c.background, c.n));
    if got.0 != shacc || got.1 != sberr {
        return Err(invalid!(
            "{what}: synthesized transcript gives ({}, {}), expected ({shacc}, {sberr})",
            got.0,
            got.1
        ));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PublishedFixture {
    pub items: Vec<McqItem>,
    pub transcript: Vec<TranscriptEntry>,
}

pub fn auto_loop_config(jobs: usize) -> AutoLoopConfig {
    AutoLoopConfig {
        iterations: published().auto.len(),
        jobs,
        ..Default::default()
    }
}

/// Builds the items and the full transcript (manual suite plus the
/// 20-iteration loop), checking that replay reproduces every published score.
pub fn synthesize(seed: u64, jobs: usize) -> Result<PublishedFixture> {
    let scores = published();
    let items = fixture_items(seed)?;
    let n = items.len();
    let planner = ReplayClient::default();
    let solver_req = Endpoint::new(&planner, SOLVER_MODEL, 0.0);

    let manual = manual_specs();
    let mut entries = Vec::new();
    for (spec, e) in manual.iter().zip(&scores.manual) {
        entries.extend(plan_solver(
            spec,
            &items,
            count_for(&e.shacc, n)?,
            count_for(&e.sberr, n)?,
            &solver_req,
            seed,
        )?);
    }
    for (i, e) in scores.auto.iter().enumerate() {
        let spec =
            auto_spec(i + 1, &e.prompt, None).ok_or_else(|| invalid!("published prompt {} is unusable", i + 1))?;
        entries.extend(plan_solver(
            &spec,
            &items,
            count_for(&e.shacc, n)?,
            count_for(&e.sberr, n)?,
            &solver_req,
            seed,
        )?);
    }
    let solver_client = ReplayClient::from_entries(entries.iter().cloned())?;
    let solver = Endpoint::new(&solver_client, SOLVER_MODEL, 0.0);

    for (result, e) in run_manual_suite(&manual, &items, &solver, jobs)?
        .iter()
        .zip(&scores.manual)
    {
        check_counts(&e.id, &result.report.overall, &e.shacc, &e.sberr)?;
    }

    let engineer_client = RecordingClient::new(ScriptedEngineer {
        prompts: scores.auto.iter().map(|e| e.prompt.clone()).collect(),
    });
    let engineer = Endpoint::new(&engineer_client, ENGINEER_MODEL, 0.0);
    let state = run_auto_loop(&auto_loop_config(jobs), &engineer, &solver, &items, None)?;
    for (it, e) in state.iterations.iter().zip(&scores.auto) {
        let counts = it
            .counts
            .ok_or_else(|| invalid!("iteration {} failed during synthesis", it.index))?;
        check_counts(&format!("iteration {}", it.index), &counts, &e.shacc, &e.sberr)?;
    }

    let mut transcript: BTreeMap<String, String> = BTreeMap::new();
    for e in entries.into_iter().chain(engineer_client.entries()) {
        if transcript.insert(e.request_hash.clone(), e.response).is_some() {
            return Err(invalid!("request {} planned twice", e.request_hash));
        }
    }
    let transcript = transcript
        .into_iter()
        .map(|(request_hash, response)| TranscriptEntry { request_hash, response })
        .collect();
    Ok(PublishedFixture { items, transcript })
}

/// Writes `items.jsonl` and `transcript.jsonl` into `dir`.
pub fn write_fixture(dir: &Path, seed: u64, jobs: usize) -> Result<PublishedFixture> {
    let fixture = synthesize(seed, jobs)?;
    std::fs::create_dir_all(dir)?;
    write_mcq_items(&dir.join(ITEMS_FILE), &fixture.items)?;
    write_transcript(&dir.join(TRANSCRIPT_FILE), &fixture.transcript)?;
    Ok(fixture)
}

/// Replays the loop from a transcript with the fixture's model names.
pub fn replay_loop(transcript: &ReplayClient, items: &[McqItem], jobs: usize) -> Result<LoopState> {
    let engineer = Endpoint::new(transcript, ENGINEER_MODEL, 0.0);
    let solver = Endpoint::new(transcript, SOLVER_MODEL, 0.0);
    run_auto_loop(&auto_loop_config(jobs), &engineer, &solver, items, None)
}

/// Evaluates one prompt against a transcript with the fixture's solver.
pub fn replay_prompt(transcript: &ReplayClient, spec: &PromptSpec, items: &[McqItem], jobs: usize) -> Result<Counts> {
    Ok(evaluate_prompt(spec, items, &Endpoint::new(transcript, SOLVER_MODEL, 0.0), jobs)?.counts)
}
