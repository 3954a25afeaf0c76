//! Prompting a vision-language solver with five-way MCQs: prompt rendering,
//! answer parsing, the hand-crafted prompt suite and the automated
//! engineer/solver tuning loop.

mod client;
pub mod published;

use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::metrics::{
    cmp_frac, compute_metrics, percent_2dp, BiasReport, Counts, McqItem, Prediction, PredictionRecord, ReportMeta,
    CHOICES, LETTERS,
};
use crate::parallel::par_map;

pub use client::{
    request_hash, send_chat, write_transcript, ChatClient, ChatEndpointConfig, ChatError, ChatMessage, ChatRequest,
    Endpoint, HttpChatClient, RecordingClient, ReplayClient, RequestMetadata, Role, TranscriptEntry,
};

pub const CHOICES_PLACEHOLDER: &str = "{choices}";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PromptOrigin {
    Manual,
    Auto,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PromptSpec {
    pub id: String,
    /// Prompt text with exactly one `{choices}` placeholder.
    pub template: String,
    /// Text placed before every choice label, e.g. "a video of a human".
    #[serde(default)]
    pub prefix: Option<String>,
    pub origin: PromptOrigin,
}

impl PromptSpec {
    pub fn new(
        id: impl Into<String>,
        template: impl Into<String>,
        prefix: Option<String>,
        origin: PromptOrigin,
    ) -> Result<Self> {
        let spec = Self {
            id: id.into(),
            template: template.into(),
            prefix,
            origin,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Question text followed by the choice block on the next line.
    pub fn from_question(
        id: impl Into<String>,
        question: &str,
        prefix: Option<String>,
        origin: PromptOrigin,
    ) -> Result<Self> {
        Self::new(id, format!("{question}\n{CHOICES_PLACEHOLDER}"), prefix, origin)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.template.matches(CHOICES_PLACEHOLDER).count();
        if n != 1 {
            return Err(invalid!(
                "prompt {:?} must contain exactly one {CHOICES_PLACEHOLDER} placeholder, found {n}",
                self.id
            ));
        }
        Ok(())
    }

    /// Template text with the placeholder line removed.
    pub fn question(&self) -> String {
        self.template
            .replace(&format!("\n{CHOICES_PLACEHOLDER}"), "")
            .replace(CHOICES_PLACEHOLDER, "")
            .trim()
            .to_owned()
    }
}

/// One user message: the template with its placeholder replaced by the
/// lettered choice lines.
pub fn render_prompt(spec: &PromptSpec, item: &McqItem) -> Result<Vec<ChatMessage>> {
    spec.validate()?;
    if item.choices.len() != CHOICES {
        return Err(invalid!(
            "{}: expected {CHOICES} choices, got {}",
            item.video_id,
            item.choices.len()
        ));
    }
    let prefix = spec.prefix.as_deref().map(str::trim).filter(|p| !p.is_empty());
    let lines: Vec<String> = LETTERS
        .iter()
        .zip(&item.choices)
        .map(|(l, c)| match prefix {
            Some(p) => format!("{l}. {p} {c}"),
            None => format!("{l}. {c}"),
        })
        .collect();
    Ok(vec![ChatMessage::user(
        spec.template.replace(CHOICES_PLACEHOLDER, &lines.join("\n")),
    )])
}

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric() || matches!(c, '\'' | '\u{2019}' | '_' | '-')
}

fn letter_answer(text: &str) -> Option<usize> {
    let chars: Vec<char> = text.chars().collect();
    for (i, &c) in chars.iter().enumerate() {
        let upper = c.to_ascii_uppercase();
        let Some(slot) = LETTERS.iter().position(|&l| l == upper) else {
            continue;
        };
        let prev = i.checked_sub(1).map(|j| chars[j]);
        let next = chars.get(i + 1).copied();
        if prev.is_some_and(is_word_char) || next.is_some_and(is_word_char) {
            continue;
        }
        // Dotted abbreviations such as "e.g." and "i.e.".
        if next == Some('.') && chars.get(i + 2).is_some_and(|c| c.is_alphabetic()) {
            continue;
        }
        if prev == Some('.') && i >= 2 && chars[i - 2].is_alphabetic() {
            continue;
        }
        // The article: "a video of ...", "A person ...".
        if upper == 'A' && next.is_some_and(char::is_whitespace) {
            if let Some(w) = chars[i + 1..].iter().find(|c| !c.is_whitespace()) {
                if w.is_alphabetic() {
                    continue;
                }
            }
        }
        return Some(slot);
    }
    None
}

fn label_answer(text: &str, choices: &[String]) -> Option<usize> {
    let text = text.to_lowercase();
    let mut hits = choices.iter().enumerate().filter(|(_, c)| {
        let c = c.trim().to_lowercase();
        !c.is_empty() && text.contains(&c)
    });
    match (hits.next(), hits.next()) {
        (Some((i, _)), None) => Some(i),
        _ => None,
    }
}

/// Maps a solver response to a choice slot. A standalone letter A-E nearest
/// the start wins; otherwise the only choice label quoted in the text;
/// otherwise `None` (abstain).
pub fn parse_answer(response: &str, item: &McqItem) -> Option<usize> {
    letter_answer(response).or_else(|| label_answer(response, &item.choices))
}

/// Chat transcript of the tuning loop: one system message followed by
/// (user, assistant) pairs, one pair per iteration.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DialogueHistory {
    messages: Vec<ChatMessage>,
}

impl DialogueHistory {
    pub fn new(system: impl Into<String>) -> Self {
        Self {
            messages: vec![ChatMessage::system(system)],
        }
    }

    pub fn messages(&self) -> &[ChatMessage] {
        &self.messages
    }

    pub fn len(&self) -> usize {
        self.messages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.messages.is_empty()
    }

    pub fn iterations(&self) -> usize {
        self.messages.len().saturating_sub(1) / 2
    }

    pub fn push_exchange(&mut self, user: String, assistant: String) {
        self.messages.push(ChatMessage::user(user));
        self.messages.push(ChatMessage::assistant(assistant));
    }

    /// The (user, assistant) pair of 1-based iteration `i`.
    pub fn exchange(&self, i: usize) -> Option<(&ChatMessage, &ChatMessage)> {
        let start = 1 + 2 * i.checked_sub(1)?;
        Some((self.messages.get(start)?, self.messages.get(start + 1)?))
    }

    pub fn validate(&self) -> Result<()> {
        let Some((first, rest)) = self.messages.split_first() else {
            return Err(invalid!("dialogue history is empty"));
        };
        if first.role != Role::System {
            return Err(invalid!("dialogue history must start with a system message"));
        }
        if rest.len() % 2 != 0 {
            return Err(invalid!("dialogue history ends mid-exchange"));
        }
        for (i, m) in rest.iter().enumerate() {
            let want = if i % 2 == 0 { Role::User } else { Role::Assistant };
            if m.role != want {
                return Err(invalid!("message {} has role {:?}, expected {want:?}", i + 1, m.role));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IterationStatus {
    Ok,
    Failed,
}

impl fmt::Display for IterationStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Ok => "ok",
            Self::Failed => "failed",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PromptIteration {
    /// 1-based position in the loop.
    pub index: usize,
    /// Extracted prompt; the engineer's raw reply when extraction failed.
    pub prompt: String,
    /// Solver outcome on the tune items; absent for failed iterations.
    pub counts: Option<Counts>,
    pub status: IterationStatus,
}

impl PromptIteration {
    pub fn shacc(&self) -> Option<f64> {
        self.counts.map(|c| c.shacc())
    }

    pub fn sberr(&self) -> Option<f64> {
        self.counts.map(|c| c.sberr())
    }
}

/// Predictions of one prompt over a set of items.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Evaluation {
    pub records: Vec<PredictionRecord>,
    pub counts: Counts,
}

/// Asks the solver every item (up to `jobs` requests in flight). Requests
/// that fail after the client's retries count as abstentions.
pub fn evaluate_prompt(spec: &PromptSpec, items: &[McqItem], solver: &Endpoint<'_>, jobs: usize) -> Result<Evaluation> {
    if items.is_empty() {
        return Err(invalid!("no items to evaluate prompt {:?} on", spec.id));
    }
    spec.validate()?;
    let results = par_map(items, jobs, |item| -> Result<PredictionRecord> {
        let messages = render_prompt(spec, item)?;
        let predicted = match solver.ask(messages, Some(&item.video_id)) {
            Ok(text) => match parse_answer(&text, item) {
                Some(slot) => Prediction::Class(item.choices[slot].clone()),
                None => Prediction::Abstain,
            },
            Err(e) => {
                log::error!("{} ({}): {e}", item.video_id, spec.id);
                Prediction::Abstain
            }
        };
        Ok(PredictionRecord {
            video_id: item.video_id.clone(),
            human_class: item.human_class().to_owned(),
            background_class: item.background_class().to_owned(),
            predicted,
        })
    });
    let records = results.into_iter().collect::<Result<Vec<_>>>()?;
    let counts = compute_metrics(&records)?;
    Ok(Evaluation { records, counts })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManualResult {
    pub spec: PromptSpec,
    pub report: BiasReport,
    pub records: Vec<PredictionRecord>,
}

pub fn run_manual_suite(
    specs: &[PromptSpec],
    items: &[McqItem],
    solver: &Endpoint<'_>,
    jobs: usize,
) -> Result<Vec<ManualResult>> {
    if specs.is_empty() {
        return Err(invalid!("no prompts to evaluate"));
    }
    if items.is_empty() {
        return Err(invalid!("no items to evaluate prompts on"));
    }
    specs
        .iter()
        .map(|spec| {
            let eval = evaluate_prompt(spec, items, solver, jobs)?;
            let meta = ReportMeta {
                model: Some(solver.model.to_owned()),
                prompt: Some(spec.id.clone()),
                ..Default::default()
            };
            Ok(ManualResult {
                spec: spec.clone(),
                report: BiasReport::from_records(&eval.records, meta)?,
                records: eval.records,
            })
        })
        .collect()
}

pub const ENGINEER_SYSTEM: &str = "You are an expert prompt engineer for vision-language models.";

pub const SEED_INSTRUCTION: &str = "Design a prompt to improve accuracy and reduce background bias. \
The prompt is shown to a vision-language model together with a short video of a person and five \
lettered action labels; the model must pick the action the person performs. The scene often \
suggests a different action than the one the person performs, and the model tends to answer with \
the action the scene suggests. After each attempt you will get back two scores measured on held-out \
videos: SHAcc, the percentage of answers naming the person's action (higher is better), and SBErr, \
the percentage naming the action the scene suggests (lower is better). Reply with the prompt in \
double quotes.";

pub const REASK: &str = "Your reply did not contain a usable prompt. Reply with only the new prompt in double quotes.";

/// Feedback for an iteration, sent as the next user turn.
pub fn feedback_message(it: &PromptIteration) -> String {
    let ask = "Refine the prompt to raise SHAcc and lower SBErr. Reply with the new prompt in double quotes.";
    match it.counts {
        Some(c) => format!(
            "SHAcc: {}%, SBErr: {}%. {ask}",
            percent_2dp(c.human, c.n),
            percent_2dp(c.background, c.n)
        ),
        None => format!("The previous reply did not contain a usable prompt, so it was not evaluated. {ask}"),
    }
}

/// The first span between a pair of double quotes (straight or curly);
/// without one, the whole reply. Empty results yield `None`.
pub fn extract_prompt(reply: &str) -> Option<String> {
    let quoted = reply
        .char_indices()
        .find(|&(_, c)| c == '"' || c == '\u{201C}')
        .and_then(|(start, open)| {
            let close = if open == '"' { '"' } else { '\u{201D}' };
            let body = start + open.len_utf8();
            reply[body..].find(close).map(|end| &reply[body..body + end])
        });
    let text = quoted.unwrap_or(reply).trim();
    (!text.is_empty()).then(|| text.to_owned())
}

/// Spec for the prompt of loop iteration `index`; `None` when the text has
/// more than one choices placeholder.
pub fn auto_spec(index: usize, prompt: &str, prefix: Option<&str>) -> Option<PromptSpec> {
    let id = format!("auto-{index:02}");
    let prefix = prefix.map(str::to_owned);
    let spec = match prompt.matches(CHOICES_PLACEHOLDER).count() {
        0 => PromptSpec::from_question(id, prompt, prefix, PromptOrigin::Auto),
        1 => PromptSpec::new(id, prompt, prefix, PromptOrigin::Auto),
        _ => return None,
    };
    spec.ok()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AutoLoopConfig {
    pub iterations: usize,
    #[serde(default)]
    pub choice_prefix: Option<String>,
    #[serde(default = "default_system")]
    pub system_prompt: String,
    #[serde(default = "default_seed_instruction")]
    pub seed_instruction: String,
    #[serde(default = "default_jobs")]
    pub jobs: usize,
}

fn default_system() -> String {
    ENGINEER_SYSTEM.to_owned()
}

fn default_seed_instruction() -> String {
    SEED_INSTRUCTION.to_owned()
}

fn default_jobs() -> usize {
    1
}

impl Default for AutoLoopConfig {
    fn default() -> Self {
        Self {
            iterations: 20,
            choice_prefix: None,
            system_prompt: default_system(),
            seed_instruction: default_seed_instruction(),
            jobs: default_jobs(),
        }
    }
}

/// Everything needed to resume the loop.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoopState {
    pub history: DialogueHistory,
    pub iterations: Vec<PromptIteration>,
}

impl LoopState {
    pub fn new(system: &str) -> Self {
        Self {
            history: DialogueHistory::new(system),
            iterations: Vec::new(),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let state: Self = serde_json::from_str(&fs::read_to_string(path)?).map_err(|e| Error::Format {
            kind: "loop checkpoint",
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        state.validate().map_err(|e| Error::Format {
            kind: "loop checkpoint",
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        Ok(state)
    }

    /// Writes through a temporary file so an interrupted write never
    /// replaces a good checkpoint.
    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(&tmp, text)?;
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.history.validate()?;
        if self.history.iterations() != self.iterations.len() {
            return Err(invalid!(
                "history holds {} exchanges but {} iterations are recorded",
                self.history.iterations(),
                self.iterations.len()
            ));
        }
        if let Some((i, _)) = self.iterations.iter().enumerate().find(|(i, it)| it.index != i + 1) {
            return Err(invalid!("iteration {} is out of sequence", i + 1));
        }
        Ok(())
    }
}

/// One engineer turn: the reply that is kept in the history and the
/// extracted prompt, if any.
fn engineer_turn(engineer: &Endpoint<'_>, history: &DialogueHistory, user: &str) -> Result<(String, Option<String>)> {
    let mut messages = history.messages().to_vec();
    messages.push(ChatMessage::user(user));
    let reply = engineer.ask(messages.clone(), None)?;
    if let Some(p) = extract_prompt(&reply) {
        return Ok((reply, Some(p)));
    }
    log::warn!("engineer reply had no usable prompt; asking again");
    messages.push(ChatMessage::assistant(reply));
    messages.push(ChatMessage::user(REASK));
    let reply = engineer.ask(messages, None)?;
    let prompt = extract_prompt(&reply);
    Ok((reply, prompt))
}

/// Runs the engineer/solver loop until `config.iterations` iterations exist.
/// With a checkpoint path the state is saved after every iteration and an
/// existing checkpoint is resumed.
pub fn run_auto_loop(
    config: &AutoLoopConfig,
    engineer: &Endpoint<'_>,
    solver: &Endpoint<'_>,
    items: &[McqItem],
    checkpoint: Option<&Path>,
) -> Result<LoopState> {
    if items.is_empty() {
        return Err(invalid!("no tune items for the prompt loop"));
    }
    let mut state = match checkpoint {
        Some(p) if p.exists() => {
            let s = LoopState::load(p)?;
            if s.history.messages()[0].content != config.system_prompt {
                return Err(invalid!(
                    "checkpoint {} was made with a different system prompt",
                    p.display()
                ));
            }
            if s.iterations.len() > config.iterations {
                return Err(invalid!(
                    "checkpoint {} already holds {} iterations, more than the {} requested",
                    p.display(),
                    s.iterations.len(),
                    config.iterations
                ));
            }
            log::info!("resuming prompt loop at iteration {}", s.iterations.len() + 1);
            s
        }
        _ => LoopState::new(&config.system_prompt),
    };
    if let Some(p) = checkpoint {
        state.save(p)?;
    }
    while state.iterations.len() < config.iterations {
        let index = state.iterations.len() + 1;
        let user = match state.iterations.last() {
            None => config.seed_instruction.clone(),
            Some(prev) => feedback_message(prev),
        };
        let (reply, prompt) = engineer_turn(engineer, &state.history, &user)?;
        let spec = prompt
            .as_deref()
            .and_then(|p| auto_spec(index, p, config.choice_prefix.as_deref()));
        let iteration = match (spec, prompt) {
            (Some(spec), Some(prompt)) => {
                let eval = evaluate_prompt(&spec, items, solver, config.jobs)?;
                log::info!(
                    "iteration {index}: SHAcc {:.2}%, SBErr {:.2}%",
                    eval.counts.shacc(),
                    eval.counts.sberr()
                );
                PromptIteration {
                    index,
                    prompt,
                    counts: Some(eval.counts),
                    status: IterationStatus::Ok,
                }
            }
            _ => {
                log::warn!("iteration {index} failed: no usable prompt after one re-ask");
                PromptIteration {
                    index,
                    prompt: reply.trim().to_owned(),
                    counts: None,
                    status: IterationStatus::Failed,
                }
            }
        };
        state.history.push_exchange(user, reply);
        state.iterations.push(iteration);
        if let Some(p) = checkpoint {
            state.save(p)?;
        }
    }
    Ok(state)
}

/// Lowest SBErr, then highest SHAcc, then lowest index.
pub fn select_best(iterations: &[PromptIteration]) -> Result<&PromptIteration> {
    iterations
        .iter()
        .filter_map(|it| it.counts.map(|c| (it, c)))
        .min_by(|(a, ca), (b, cb)| {
            cmp_frac(ca.background, ca.n, cb.background, cb.n)
                .then_with(|| cmp_frac(cb.human, cb.n, ca.human, ca.n))
                .then_with(|| a.index.cmp(&b.index))
        })
        .map(|(it, _)| it)
        .ok_or_else(|| invalid!("no successful iteration to select from"))
}

pub const ITERATIONS_HEADER: [&str; 5] = ["index", "prompt", "shacc", "sberr", "status"];

pub fn iterations_csv(iterations: &[PromptIteration]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(ITERATIONS_HEADER)?;
    for it in iterations {
        let (shacc, sberr) = match it.counts {
            Some(c) => (percent_2dp(c.human, c.n), percent_2dp(c.background, c.n)),
            None => (String::new(), String::new()),
        };
        w.write_record([
            it.index.to_string(),
            it.prompt.clone(),
            shacc,
            sberr,
            it.status.to_string(),
        ])?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

pub fn write_iterations_csv(path: &Path, iterations: &[PromptIteration]) -> Result<()> {
    Ok(fs::write(path, iterations_csv(iterations)?)?)
}
