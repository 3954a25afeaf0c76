use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::{Arc, Mutex};
use std::thread;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use scenebias::metrics::{build_mcq, compute_metrics, Counts, McqItem, Prediction};
use scenebias::prompt::published::{self, VOCABULARY};
use scenebias::prompt::*;
use scenebias::Error;

fn vocab() -> Vec<String> {
    VOCABULARY.iter().map(|s| s.to_string()).collect()
}

fn items(n: usize, seed: u64) -> Vec<McqItem> {
    let v = vocab();
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|k| {
            let h = r.gen_range(0..v.len());
            let b = (h + r.gen_range(1..v.len())) % v.len();
            build_mcq(&format!("v{k:04}"), &v[h], &v[b], &v, seed + k as u64).unwrap()
        })
        .collect()
}

fn neutral() -> PromptSpec {
    PromptSpec::from_question(
        "neutral",
        "What is the action being performed?",
        None,
        PromptOrigin::Manual,
    )
    .unwrap()
}

#[test]
fn neutral_rendering_ends_with_lettered_choices() {
    let item = &items(1, 0)[0];
    let msgs = render_prompt(&neutral(), item).unwrap();
    assert_eq!(msgs.len(), 1);
    assert_eq!(msgs[0].role, Role::User);
    let lines: Vec<&str> = msgs[0].content.lines().collect();
    assert_eq!(lines[0], "What is the action being performed?");
    for (k, l) in ['A', 'B', 'C', 'D', 'E'].iter().enumerate() {
        assert_eq!(lines[k + 1], format!("{l}. {}", item.choices[k]));
    }
    assert_eq!(lines.len(), 6);
}

#[test]
fn prefixed_rendering_prefixes_every_choice() {
    let item = &items(1, 1)[0];
    let spec = PromptSpec::from_question(
        "p",
        "What is the action being performed?",
        Some("a video of a human".into()),
        PromptOrigin::Manual,
    )
    .unwrap();
    let text = render_prompt(&spec, item).unwrap().remove(0).content;
    let choice_lines: Vec<&str> = text.lines().skip(1).collect();
    assert_eq!(choice_lines.len(), 5);
    assert!(choice_lines.iter().all(|l| l.contains("a video of a human")));
    let empty = PromptSpec {
        prefix: Some(String::new()),
        ..neutral()
    };
    assert_eq!(
        render_prompt(&empty, item).unwrap(),
        render_prompt(&neutral(), item).unwrap()
    );
}

#[test]
fn templates_need_exactly_one_placeholder() {
    assert!(PromptSpec::new("x", "no placeholder", None, PromptOrigin::Manual).is_err());
    assert!(PromptSpec::new("x", "{choices} {choices}", None, PromptOrigin::Manual).is_err());
    let mid = PromptSpec::new(
        "x",
        "Pick one:\n{choices}\nAnswer with a letter.",
        None,
        PromptOrigin::Manual,
    )
    .unwrap();
    let text = render_prompt(&mid, &items(1, 2)[0]).unwrap().remove(0).content;
    assert!(text.starts_with("Pick one:\nA. "));
    assert!(text.ends_with("\nAnswer with a letter."));
    let loaded: PromptSpec = serde_json::from_str(r#"{"id":"x","template":"t","origin":"manual"}"#).unwrap();
    assert!(loaded.validate().is_err());
}

fn violin_item() -> McqItem {
    McqItem {
        video_id: "v".into(),
        choices: ["archery", "rowing", "fencing", "welding", "playing violin"]
            .map(String::from)
            .to_vec(),
        human_index: 4,
        background_index: 0,
        distractor_indices: vec![1, 2, 3],
        seed: 0,
    }
}

#[test]
fn parse_answer_examples() {
    let item = violin_item();
    let cases: &[(&str, Option<usize>)] = &[
        ("C", Some(2)),
        ("c", Some(2)),
        ("(D)", Some(3)),
        ("**B**", Some(1)),
        ("Answer: E.", Some(4)),
        ("B. rowing, though A is close", Some(1)),
        ("The action is playing violin.", Some(4)),
        ("PLAYING VIOLIN", Some(4)),
        ("Either archery or rowing.", None),
        ("a video of a human playing violin", Some(4)),
        ("A person doing archery", Some(0)),
        ("It shows archery, e.g. an archer aiming", Some(0)),
        ("I'd say welding", Some(3)),
        ("The answer is a", Some(0)),
        ("No idea.", None),
        ("", None),
    ];
    for (text, want) in cases {
        assert_eq!(parse_answer(text, &item), *want, "{text:?}");
    }
}

/// Builds responses from pieces whose answer is known by construction: an
/// optional leading letter token, then filler and label mentions.
#[test]
fn parse_answer_matches_precedence_oracle_on_fuzz_corpus() {
    let filler = [
        "I think",
        "the person is",
        "clearly",
        "in this clip,",
        "probably",
        "hmm",
        "looking closely",
        "Final answer:",
    ];
    let letter_forms = ["{}", "({})", "{}.", "{})", "{}:", "[{}]"];
    let mut r = ChaCha8Rng::seed_from_u64(99);
    let pool = items(200, 5);
    for (case, item) in pool.iter().enumerate() {
        let letter = r.gen_bool(0.5).then(|| r.gen_range(0..5));
        let mut labels: Vec<usize> = (0..5).collect();
        labels.shuffle(&mut r);
        labels.truncate(r.gen_range(0..3));
        let mut parts: Vec<String> = Vec::new();
        parts.push(filler[r.gen_range(0..filler.len())].to_owned());
        if let Some(l) = letter {
            let form = letter_forms[r.gen_range(0..letter_forms.len())];
            let c = ['A', 'B', 'C', 'D', 'E'][l];
            let c = if r.gen_bool(0.3) { c.to_ascii_lowercase() } else { c };
            parts.push(form.replace("{}", &c.to_string()));
        }
        for &k in &labels {
            parts.push(filler[r.gen_range(0..filler.len())].to_owned());
            let label = &item.choices[k];
            parts.push(if r.gen_bool(0.5) {
                label.to_uppercase()
            } else {
                label.clone()
            });
        }
        // A bare "A" followed by a word reads as the article.
        let article = letter == Some(0) && parts[1].len() == 1 && !labels.is_empty();
        let letter = letter.filter(|_| !article);
        let text = parts.join(" ");
        let want = match (letter, labels.as_slice()) {
            (Some(l), _) => Some(l),
            (None, [only]) => Some(*only),
            _ => None,
        };
        assert_eq!(parse_answer(&text, item), want, "case {case}: {text:?}");
    }
}

#[test]
fn prompt_extraction() {
    assert_eq!(
        extract_prompt("Try this:\n\"Watch the person.\" It works.").as_deref(),
        Some("Watch the person.")
    );
    assert_eq!(
        extract_prompt("\u{201C}Curly quoted.\u{201D}").as_deref(),
        Some("Curly quoted.")
    );
    assert_eq!(extract_prompt("  Just a prompt.  ").as_deref(), Some("Just a prompt."));
    assert_eq!(extract_prompt("Unclosed \"quote").as_deref(), Some("Unclosed \"quote"));
    assert_eq!(extract_prompt("\"  \""), None);
    assert_eq!(extract_prompt(" \n "), None);
}

#[test]
fn dialogue_history_alternates() {
    let mut h = DialogueHistory::new("sys");
    assert_eq!(h.len(), 1);
    h.push_exchange("u1".into(), "a1".into());
    h.push_exchange("u2".into(), "a2".into());
    h.validate().unwrap();
    assert_eq!(h.iterations(), 2);
    assert_eq!(h.exchange(2).unwrap().1.content, "a2");
    assert!(h.exchange(0).is_none() && h.exchange(3).is_none());
    let bad: DialogueHistory = serde_json::from_str(r#"{"messages":[{"role":"system","content":"s"},{"role":"assistant","content":"x"},{"role":"user","content":"y"}]}"#).unwrap();
    assert!(bad.validate().is_err());
}

fn iteration(index: usize, human: u64, background: u64) -> PromptIteration {
    PromptIteration {
        index,
        prompt: format!("p{index}"),
        counts: Some(Counts {
            n: 8349,
            human,
            background,
            abstain: 0,
        }),
        status: IterationStatus::Ok,
    }
}

fn best_oracle(its: &[PromptIteration]) -> Option<usize> {
    let mut best: Option<&PromptIteration> = None;
    for it in its {
        let Some(c) = it.counts else { continue };
        best = match best {
            None => Some(it),
            Some(b) => {
                let bc = b.counts.unwrap();
                let better = c.background < bc.background
                    || (c.background == bc.background
                        && (c.human > bc.human || (c.human == bc.human && it.index < b.index)));
                Some(if better { it } else { b })
            }
        };
    }
    best.map(|b| b.index)
}

#[test]
fn select_best_matches_linear_scan() {
    let mut r = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..500 {
        let n = r.gen_range(1..25);
        let mut its: Vec<PromptIteration> = (1..=n)
            .map(|i| iteration(i, r.gen_range(0..6), r.gen_range(0..6)))
            .collect();
        for it in its.iter_mut() {
            if r.gen_ratio(1, 5) {
                it.counts = None;
                it.status = IterationStatus::Failed;
            }
        }
        let want = best_oracle(&its);
        assert_eq!(select_best(&its).ok().map(|b| b.index), want);
        its.shuffle(&mut r);
        assert_eq!(select_best(&its).ok().map(|b| b.index), want, "permutation invariance");
    }
    let single = [iteration(1, 3, 4)];
    assert_eq!(select_best(&single).unwrap(), &single[0]);
    assert!(select_best(&[]).is_err());
}

#[test]
fn iteration_csv_layout() {
    let mut failed = iteration(2, 0, 0);
    failed.counts = None;
    failed.status = IterationStatus::Failed;
    failed.prompt = "says \"hi\", twice".into();
    let csv = String::from_utf8(iterations_csv(&[iteration(1, 3897, 3469), failed]).unwrap()).unwrap();
    assert_eq!(
        csv,
        "index,prompt,shacc,sberr,status\n1,p1,46.68,41.55,ok\n2,\"says \"\"hi\"\", twice\",,,failed\n"
    );
}

// --- HTTP client against a scripted local server ---

struct MockServer {
    url: String,
    requests: Arc<Mutex<Vec<(String, String)>>>,
}

/// Serves the scripted (status, body) responses in order, one per
/// connection, and records each request's headers and body.
fn mock_server(script: Vec<(u16, String)>) -> MockServer {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1", listener.local_addr().unwrap());
    let requests = Arc::new(Mutex::new(Vec::new()));
    let log = requests.clone();
    thread::spawn(move || {
        for (status, body) in script {
            let (mut stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut head = String::new();
            let mut len = 0usize;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                if line == "\r\n" || line.is_empty() {
                    break;
                }
                if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                    len = v.trim().parse().unwrap();
                }
                head.push_str(&line);
            }
            let mut req_body = vec![0; len];
            reader.read_exact(&mut req_body).unwrap();
            log.lock().unwrap().push((head, String::from_utf8(req_body).unwrap()));
            let reply = format!("HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}", body.len());
            stream.write_all(reply.as_bytes()).unwrap();
        }
    });
    MockServer { url, requests }
}

fn completion(content: &str) -> String {
    serde_json::json!({"id": "x", "choices": [{"index": 0, "message": {"role": "assistant", "content": content}}]})
        .to_string()
}

fn fast_config(url: &str) -> ChatEndpointConfig {
    ChatEndpointConfig {
        backoff_secs: 0.01,
        timeout_secs: 5.0,
        ..ChatEndpointConfig::new(url, "solver-1")
    }
}

fn one_question() -> ChatRequest {
    ChatRequest {
        model: "solver-1".into(),
        messages: vec![ChatMessage::user("Which? A. x B. y")],
        temperature: 0.0,
        metadata: None,
    }
}

#[test]
fn http_client_returns_first_choice_content() {
    let server = mock_server(vec![(200, completion("B"))]);
    assert_eq!(send_chat(&one_question(), &fast_config(&server.url)).unwrap(), "B");
    let reqs = server.requests.lock().unwrap();
    assert!(reqs[0].0.starts_with("POST /v1/chat/completions "));
    let body: serde_json::Value = serde_json::from_str(&reqs[0].1).unwrap();
    assert_eq!(
        body,
        serde_json::json!({"model": "solver-1", "messages": [{"role": "user", "content": "Which? A. x B. y"}], "temperature": 0.0})
    );
}

#[test]
fn http_client_retries_rate_limits() {
    let server = mock_server(vec![(429, "{}".into()), (429, "{}".into()), (200, completion("D"))]);
    assert_eq!(send_chat(&one_question(), &fast_config(&server.url)).unwrap(), "D");
    assert_eq!(server.requests.lock().unwrap().len(), 3);
}

#[test]
fn http_client_gives_up_after_max_retries() {
    let server = mock_server(vec![(503, "busy".into()), (500, "down".into())]);
    let cfg = ChatEndpointConfig {
        max_retries: 1,
        ..fast_config(&server.url)
    };
    let err = send_chat(&one_question(), &cfg).unwrap_err();
    assert!(matches!(err, Error::Chat(ChatError::Transport(_))), "{err}");
    assert_eq!(server.requests.lock().unwrap().len(), 2);
}

#[test]
fn http_client_reports_protocol_and_client_errors_without_retry() {
    let server = mock_server(vec![
        (200, "{not json".into()),
        (200, r#"{"choices":[]}"#.into()),
        (400, "bad".into()),
    ]);
    let cfg = fast_config(&server.url);
    for _ in 0..2 {
        let err = send_chat(&one_question(), &cfg).unwrap_err();
        assert!(matches!(err, Error::Chat(ChatError::Protocol(_))), "{err}");
    }
    let err = send_chat(&one_question(), &cfg).unwrap_err();
    assert!(
        matches!(err, Error::Chat(ChatError::Status { status: 400, .. })),
        "{err}"
    );
    assert_eq!(server.requests.lock().unwrap().len(), 3);
}

#[test]
fn http_client_sends_bearer_token_from_named_variable() {
    let server = mock_server(vec![(200, completion("A"))]);
    std::env::set_var("SCENEBIAS_TEST_KEY", "sk-test");
    let cfg = ChatEndpointConfig {
        api_key_env: Some("SCENEBIAS_TEST_KEY".into()),
        ..fast_config(&server.url)
    };
    send_chat(&one_question(), &cfg).unwrap();
    assert!(server.requests.lock().unwrap()[0]
        .0
        .to_ascii_lowercase()
        .contains("authorization: bearer sk-test"));
    let missing = ChatEndpointConfig {
        api_key_env: Some("SCENEBIAS_TEST_KEY_UNSET".into()),
        ..fast_config(&server.url)
    };
    assert!(matches!(
        send_chat(&one_question(), &missing),
        Err(Error::Chat(ChatError::MissingApiKey(_)))
    ));
}

#[test]
fn endpoint_config_validation() {
    let ok = ChatEndpointConfig::new("http://x", "m");
    ok.validate().unwrap();
    assert_eq!(ok.temperature, 0.0);
    for bad in [
        ChatEndpointConfig {
            timeout_secs: 0.0,
            ..ok.clone()
        },
        ChatEndpointConfig {
            model: " ".into(),
            ..ok.clone()
        },
        ChatEndpointConfig {
            backoff_secs: -1.0,
            ..ok.clone()
        },
    ] {
        assert!(bad.validate().is_err());
    }
    assert!(serde_json::from_str::<ChatEndpointConfig>(r#"{"base_url":"u","model":"m","retries":2}"#).is_err());
}

// --- Loop behaviour with in-process fakes ---

/// Answers with a letter derived from the request hash.
struct FakeSolver;

impl ChatClient for FakeSolver {
    fn send(&self, req: &ChatRequest) -> Result<String, ChatError> {
        let h = request_hash(req);
        let k = u8::from_str_radix(&h[..2], 16).unwrap() % 6;
        Ok(match k {
            5 => "not sure".into(),
            k => format!("({})", (b'A' + k) as char),
        })
    }
}

/// Proposes a numbered prompt; requests whose user-turn count is listed in
/// `blank` get an empty reply (a re-ask adds one user turn).
struct FakeEngineer {
    blank: Vec<usize>,
}

impl ChatClient for FakeEngineer {
    fn send(&self, req: &ChatRequest) -> Result<String, ChatError> {
        let turn = req.messages.iter().filter(|m| m.role == Role::User).count();
        let prompts_so_far = req.messages.iter().filter(|m| m.role == Role::Assistant).count() + 1;
        if self.blank.contains(&turn) {
            return Ok("   ".into());
        }
        Ok(format!(
            "Try:\n\"Prompt {prompts_so_far}: name only the person's action.\""
        ))
    }
}

fn run(
    engineer: &dyn ChatClient,
    solver: &dyn ChatClient,
    k: usize,
    items: &[McqItem],
    ckpt: Option<&std::path::Path>,
) -> LoopState {
    let cfg = AutoLoopConfig {
        iterations: k,
        jobs: 3,
        ..Default::default()
    };
    run_auto_loop(
        &cfg,
        &Endpoint::new(engineer, "eng", 0.0),
        &Endpoint::new(solver, "sol", 0.0),
        items,
        ckpt,
    )
    .unwrap()
}

#[test]
fn loop_history_grows_two_messages_per_iteration() {
    let its = items(30, 4);
    let empty = run(&FakeEngineer { blank: vec![] }, &FakeSolver, 0, &its, None);
    assert!(empty.iterations.is_empty());
    assert_eq!(empty.history.len(), 1);
    let state = run(&FakeEngineer { blank: vec![] }, &FakeSolver, 5, &its, None);
    assert_eq!(state.history.len(), 11);
    state.validate().unwrap();
    assert_eq!(
        state.iterations.iter().map(|i| i.index).collect::<Vec<_>>(),
        vec![1, 2, 3, 4, 5]
    );
    assert_eq!(state.history.exchange(1).unwrap().0.content, SEED_INSTRUCTION);
    let fb = &state.history.exchange(2).unwrap().0.content;
    assert!(fb.starts_with("SHAcc: ") && fb.contains("%, SBErr: "), "{fb}");
    assert!(state.iterations.iter().all(|i| i.status == IterationStatus::Ok));
}

#[test]
fn loop_metrics_equal_compute_metrics() {
    let its = items(40, 6);
    let state = run(&FakeEngineer { blank: vec![] }, &FakeSolver, 2, &its, None);
    let spec = PromptSpec::from_question("x", &state.iterations[1].prompt, None, PromptOrigin::Auto).unwrap();
    let eval = evaluate_prompt(&spec, &its, &Endpoint::new(&FakeSolver, "sol", 0.0), 1).unwrap();
    assert_eq!(compute_metrics(&eval.records).unwrap(), eval.counts);
    assert_eq!(state.iterations[1].counts, Some(eval.counts));
}

/// Blank on the first try, usable after the re-ask.
struct ReaskOnce;

impl ChatClient for ReaskOnce {
    fn send(&self, req: &ChatRequest) -> Result<String, ChatError> {
        if req.messages.last().unwrap().content == REASK {
            Ok("\"Recovered prompt.\"".into())
        } else {
            Ok(String::new())
        }
    }
}

#[test]
fn one_reask_then_the_iteration_fails() {
    let its = items(10, 7);
    let state = run(&ReaskOnce, &FakeSolver, 2, &its, None);
    assert!(state
        .iterations
        .iter()
        .all(|i| i.status == IterationStatus::Ok && i.prompt == "Recovered prompt."));
    assert_eq!(state.history.len(), 5);

    let state = run(&FakeEngineer { blank: vec![2, 3] }, &FakeSolver, 3, &its, None);
    assert_eq!(state.iterations[0].status, IterationStatus::Ok);
    assert_eq!(state.iterations[1].status, IterationStatus::Failed);
    assert!(state.iterations[1].counts.is_none());
    assert_eq!(state.iterations[2].status, IterationStatus::Ok);
    assert_eq!(state.history.len(), 7);
    assert!(state
        .history
        .exchange(3)
        .unwrap()
        .0
        .content
        .starts_with("The previous reply did not contain a usable prompt"));
}

#[test]
fn per_item_failures_become_abstentions() {
    let its = items(5, 8);
    let eval = evaluate_prompt(&neutral(), &its, &Endpoint::new(&ReplayClient::default(), "m", 0.0), 2).unwrap();
    assert!(eval.records.iter().all(|r| r.predicted == Prediction::Abstain));
    assert_eq!(eval.counts.abstain, 5);
    assert!(run_manual_suite(&[neutral()], &[], &Endpoint::new(&FakeSolver, "m", 0.0), 1).is_err());
}

#[test]
fn record_then_replay_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let its = items(25, 9);
    let eng = RecordingClient::new(FakeEngineer { blank: vec![] });
    let sol = RecordingClient::new(FakeSolver);
    let recorded = run(&eng, &sol, 4, &its, None);
    let mut entries = eng.entries();
    entries.extend(sol.entries());
    let path = dir.path().join("t.jsonl");
    write_transcript(&path, &entries).unwrap();
    let replay = ReplayClient::load(&path).unwrap();
    assert_eq!(replay.len(), entries.len());
    let replayed = run(&replay, &replay, 4, &its, None);
    assert_eq!(replayed.iterations, recorded.iterations);
    assert_eq!(replayed, recorded);

    // A request that differs in any byte misses.
    let mut req =
        Endpoint::new(&replay, "sol", 0.0).request(render_prompt(&neutral(), &its[0]).unwrap(), Some("v0000"));
    req.messages[0].content.push(' ');
    assert!(matches!(replay.send(&req), Err(ChatError::ReplayMiss(_))));

    // Duplicate hashes are rejected at load.
    let dup = dir.path().join("dup.jsonl");
    write_transcript(&dup, &[entries[0].clone(), entries[0].clone()]).unwrap();
    assert!(ReplayClient::load(&dup).is_err());
}

#[test]
fn loop_resumes_from_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = dir.path().join("loop.json");
    let its = items(20, 10);
    let straight = run(&FakeEngineer { blank: vec![] }, &FakeSolver, 6, &its, None);
    let partial = run(&FakeEngineer { blank: vec![] }, &FakeSolver, 3, &its, Some(&ckpt));
    assert_eq!(LoopState::load(&ckpt).unwrap(), partial);
    let resumed = run(&FakeEngineer { blank: vec![] }, &FakeSolver, 6, &its, Some(&ckpt));
    assert_eq!(resumed, straight);
    let cfg = AutoLoopConfig {
        iterations: 2,
        ..Default::default()
    };
    let e = FakeEngineer { blank: vec![] };
    assert!(run_auto_loop(
        &cfg,
        &Endpoint::new(&e, "e", 0.0),
        &Endpoint::new(&FakeSolver, "s", 0.0),
        &its,
        Some(&ckpt)
    )
    .is_err());
}

// --- Published prompt fixture ---

#[test]
fn published_prompt_texts_are_verbatim() {
    let a = published::published();
    assert_eq!(a.manual.len(), 4);
    assert_eq!(a.auto.len(), 20);
    assert_eq!(
        a.auto[a.bolded - 1].prompt,
        "Ignore where the video takes place. What action is the person doing, based only on their movements?"
    );
    assert!(a.manual[2].question.contains("person\u{2019}s posture"));
    for (i, w) in VOCABULARY.iter().enumerate() {
        for (j, v) in VOCABULARY.iter().enumerate() {
            assert!(i == j || !v.contains(w), "{w} inside {v}");
        }
    }
}

#[test]
fn fixture_replay_reproduces_published_scores() {
    let fixture = published::synthesize(11, 4).unwrap();
    assert_eq!(fixture.items.len(), published::FIXTURE_ITEMS);
    let replay = ReplayClient::from_entries(fixture.transcript.clone()).unwrap();
    let scores = published::published();
    let state = published::replay_loop(&replay, &fixture.items, 4).unwrap();
    assert_eq!(state.history.len(), 41);
    let pct = |k: u64| scenebias::metrics::percent_2dp(k, published::FIXTURE_ITEMS as u64);
    for (it, want) in state.iterations.iter().zip(&scores.auto) {
        let c = it.counts.unwrap();
        assert_eq!(
            (pct(c.human), pct(c.background)),
            (want.shacc.clone(), want.sberr.clone()),
            "iteration {}",
            it.index
        );
        assert_eq!(it.prompt, want.prompt);
    }
    let best = select_best(&state.iterations).unwrap();
    assert_eq!(best.index, scores.bolded);
    for (spec, want) in published::manual_specs().iter().zip(&scores.manual) {
        let c = published::replay_prompt(&replay, spec, &fixture.items, 4).unwrap();
        assert_eq!(
            (pct(c.human), pct(c.background)),
            (want.shacc.clone(), want.sberr.clone()),
            "{}",
            spec.id
        );
    }
    // Same seed, same transcript.
    assert_eq!(published::synthesize(11, 1).unwrap(), fixture);
}
