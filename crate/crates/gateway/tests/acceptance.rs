//! Acceptance suite: one line per criterion, non-zero exit on any failure.
//!
//! Run with `cargo test -p reflex-gateway --test acceptance`.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, BufReader, Write};
use std::net::{TcpListener, TcpStream};
use std::panic::{self, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use reflex_core::corpus::read_corpus;
use reflex_core::features::Schema;
use reflex_core::harness::dataset::Target;
use reflex_core::harness::replay::{percentile, read_end_ms, replay_events};
use reflex_core::harness::scan;
use reflex_core::harness::synth::{generate_synthetic, SynthSpec};
use reflex_core::interview::{
    default_keyword_stoplist, step_interview, InterviewAction, InterviewEvent, InterviewScript, InterviewState, Phase,
    QuestionKind,
};
use reflex_core::listener::{arbitrate, ArbitrationConfig, ListenerResources, ResponseHistory, Token};
use reflex_core::par::ExecMode;
use reflex_core::statmodel::{gradient, loss, LogisticModel};
use reflex_core::timeline::Payload;
use reflex_core::turntaking::{fsttm_step, wait_time, FsttmState, TrpDecision, TurnConfig, TurnInput, TurnState};
use reflex_core::{DialogueEvent, EngineAssets, SessionConfig, Task};
use reflex_gateway::commands;
use reflex_gateway::server;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {{
        let ok: bool = $cond;
        if !ok {
            return Err(format!($($fmt)+));
        }
    }};
}

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

fn fixture_config(task: Task) -> SessionConfig {
    let mut cfg = SessionConfig::load(&fixtures().join("config.json")).expect("fixture config");
    cfg.task = task;
    cfg
}

fn fixture_assets(task: Task) -> Arc<EngineAssets> {
    Arc::new(EngineAssets::load(fixture_config(task)).expect("fixture assets"))
}

fn fixture_sessions() -> Vec<(String, Vec<DialogueEvent>)> {
    let files = commands::corpus_files(&[fixtures().join("corpus")]).unwrap();
    files
        .iter()
        .map(|f| {
            (
                f.file_stem().unwrap().to_string_lossy().into_owned(),
                read_corpus(f).unwrap(),
            )
        })
        .collect()
}

fn jsonl(name: &str) -> Vec<Value> {
    std::fs::read_to_string(fixtures().join(name))
        .unwrap()
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

fn tokens(v: &Value) -> Vec<Token> {
    v.as_array()
        .unwrap()
        .iter()
        .map(|p| Token::new(p[0].as_str().unwrap(), p[1].as_str().unwrap()))
        .collect()
}

// ------------------------------------------------------------------ criteria

fn fsttm_exhaustive() -> Outcome {
    let started = Instant::now();
    let table_text =
        std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures/fsttm_table.tsv"))
            .map_err(|e| e.to_string())?;
    let parse_state = |s: &str| *FsttmState::ALL.iter().find(|x| format!("{x:?}") == s).unwrap();
    let now = 10_000;
    let prior = 12_345;
    let mut checked = 0;
    for hold in [false, true] {
        let cfg = TurnConfig {
            hold_turn: hold,
            ..TurnConfig::default()
        };
        let mut table = BTreeMap::new();
        for line in table_text
            .lines()
            .filter(|l| !l.starts_with('#') && !l.trim().is_empty())
        {
            let c: Vec<&str> = line.split('\t').collect();
            if c[0] == "any" || (c[0] == "hold") == hold {
                table.insert(
                    (c[1].to_string(), c[2].to_string()),
                    (parse_state(c[3]), c[4].to_string(), c[5].to_string()),
                );
            }
        }
        for s in FsttmState::ALL {
            for i in TurnInput::ALL {
                let state = TurnState {
                    fsttm: s,
                    wait_deadline_ms: (s == FsttmState::FreeAfterUser).then_some(prior),
                    last_decision: None,
                };
                let d = TrpDecision::compose(0.5, 0.5).unwrap();
                let got = fsttm_step(&state, i, Some(d), now, &cfg);
                checked += 1;
                match table.get(&(format!("{s:?}"), format!("{i:?}"))) {
                    None => ensure!(got.is_err(), "{s:?} x {i:?} accepted: {got:?}"),
                    Some((next, action, deadline)) => {
                        let (ns, a) = got.map_err(|e| format!("{s:?} x {i:?}: {e}"))?;
                        ensure!(ns.fsttm == *next, "{s:?} x {i:?} -> {:?}, want {next:?}", ns.fsttm);
                        ensure!(format!("{a:?}") == *action, "{s:?} x {i:?} action {a:?}, want {action}");
                        let want = match deadline.as_str() {
                            "clear" => None,
                            "keep" => state.wait_deadline_ms,
                            "wait" => Some(now + wait_time(&cfg, d.p_take)),
                            "max" => Some(now + cfg.max_wait_ms),
                            other => return Err(format!("bad deadline column {other}")),
                        };
                        ensure!(
                            ns.wait_deadline_ms == want,
                            "{s:?} x {i:?} deadline {:?}",
                            ns.wait_deadline_ms
                        );
                    }
                }
            }
        }
    }
    let took = started.elapsed();
    ensure!(took < Duration::from_secs(1), "took {took:?}");
    Ok(format!(
        "{checked} (state, input, mode) cells in {} ms",
        took.as_millis()
    ))
}

fn two_step_composition() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..10_000 {
        let (a, b): (f64, f64) = (rng.gen(), rng.gen());
        let d = TrpDecision::compose(a, b).map_err(|e| e.to_string())?;
        ensure!((d.p_take - a * b).abs() <= 1e-12, "compose({a}, {b}) = {}", d.p_take);
    }
    ensure!(
        TrpDecision::compose(-0.1, 0.5).is_err(),
        "negative probability accepted"
    );
    ensure!(
        TrpDecision::compose(0.5, 1.1).is_err(),
        "probability above one accepted"
    );
    let cfg = TurnConfig::default();
    for (p, want) in [(1.0, 200), (0.0, 2000), (0.5, 1100)] {
        ensure!(wait_time(&cfg, p) == want, "wait_time({p}) = {}", wait_time(&cfg, p));
    }
    let mut prev = u64::MAX;
    for i in 0..=1000 {
        let p = i as f64 / 1000.0;
        let w = wait_time(&cfg, p);
        let oracle = (200.0 + (1.0 - p) * 1800.0).round() as u64;
        ensure!(w == oracle, "wait_time({p}) = {w}, oracle {oracle}");
        ensure!(w <= prev, "not monotone at {p}");
        prev = w;
    }
    Ok("10000 pairs, 1001-point wait grid".into())
}

fn learnability(target: Target, flag: &str) -> Outcome {
    let started = Instant::now();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let corpus = dir.path().join("corpus");
    commands::generate(&corpus, 100, 7, &SynthSpec::default(), ExecMode::available()).map_err(|e| format!("{e:#}"))?;
    let cfg = SessionConfig::default();
    let tc = commands::train_config(&cfg, Some(42), None, None, None, None);
    let out = dir.path().join(format!("{flag}.json"));
    let report =
        commands::train(target, &[corpus], &out, &cfg, &tc, ExecMode::available()).map_err(|e| format!("{e:#}"))?;
    let took = started.elapsed();
    ensure!(out.exists(), "no model written");
    ensure!(report.heldout_auc >= 0.9, "held-out AUC {:.3}", report.heldout_auc);
    ensure!(took < Duration::from_secs(60), "took {took:?}");
    Ok(format!(
        "held-out AUC {:.3} on 100 sessions in {:.1} s",
        report.heldout_auc,
        took.as_secs_f64()
    ))
}

fn gradient_check() -> Outcome {
    const DIMS: [Schema; 3] = [
        Schema {
            id: "g/1",
            names: &["a"],
        },
        Schema {
            id: "g/3",
            names: &["a", "b", "c"],
        },
        Schema {
            id: "g/5",
            names: &["a", "b", "c", "d", "e"],
        },
    ];
    let close = |a: f64, n: f64| (a - n).abs() <= 1e-5 * a.abs().max(n.abs()).max(1e-3);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let h = 1e-5;
    for case in 0..50 {
        let schema = &DIMS[case % DIMS.len()];
        let d = schema.dim();
        let w: Vec<f64> = (0..d).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let b = rng.gen_range(-2.0..2.0);
        let l2 = rng.gen_range(0.0..0.1);
        let rows: Vec<(Vec<f64>, bool)> = (0..rng.gen_range(1..20))
            .map(|_| ((0..d).map(|_| rng.gen_range(-3.0..3.0)).collect(), rng.gen()))
            .collect();
        let refs: Vec<&(Vec<f64>, bool)> = rows.iter().collect();
        let (gw, gb) = gradient(&LogisticModel::with_params(schema, w.clone(), b), &refs, l2);
        let at = |w: Vec<f64>, b: f64| loss(&LogisticModel::with_params(schema, w, b), &rows, l2);
        for i in 0..d {
            let (mut p, mut m) = (w.clone(), w.clone());
            p[i] += h;
            m[i] -= h;
            let num = (at(p, b) - at(m, b)) / (2.0 * h);
            ensure!(
                close(gw[i], num),
                "case {case} w[{i}]: analytic {} numeric {num}",
                gw[i]
            );
        }
        let num = (at(w.clone(), b + h) - at(w.clone(), b - h)) / (2.0 * h);
        ensure!(close(gb, num), "case {case} bias: analytic {gb} numeric {num}");
    }
    Ok("50 cases within 1e-5 relative".into())
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

struct LineClient {
    w: TcpStream,
    r: BufReader<TcpStream>,
}

impl LineClient {
    fn send(&mut self, v: &Value) {
        self.w.write_all(format!("{v}\n").as_bytes()).unwrap();
    }

    fn drain(&mut self) -> Vec<Value> {
        self.w.set_read_timeout(Some(Duration::from_secs(20))).unwrap();
        let mut out = Vec::new();
        let mut line = String::new();
        while matches!(self.r.read_line(&mut line), Ok(n) if n > 0) {
            out.push(serde_json::from_str(&line).unwrap());
            line.clear();
        }
        out
    }
}

fn wire(e: &DialogueEvent) -> Option<Value> {
    let t = e.t_ms;
    Some(match &e.payload {
        Payload::VadOn => json!({"op": "vad", "on": true, "t": t}),
        Payload::VadOff => json!({"op": "vad", "on": false, "t": t}),
        Payload::Word(w) => json!({"op": "word", "surface": w.surface, "pos": w.pos, "t": t, "t_end": w.end_t_ms}),
        Payload::Behavior(k) => json!({"op": "behavior", "kind": k.as_str(), "t": t}),
        Payload::Prosody { f0_hz, power_db } => json!({"op": "prosody", "f0": f0_hz, "power": power_db, "t": t}),
        _ => return None,
    })
}

fn replay_determinism() -> Outcome {
    let golden_report = std::fs::read_to_string(fixtures().join("expected_report.json")).map_err(|e| e.to_string())?;
    let golden_digests: BTreeMap<String, String> = std::fs::read_to_string(fixtures().join("expected_logs.sha256"))
        .map_err(|e| e.to_string())?
        .lines()
        .filter_map(|l| l.split_once("  ").map(|(h, f)| (f.trim().to_string(), h.to_string())))
        .collect();
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut runs = Vec::new();
    for (i, mode) in [ExecMode::available(), ExecMode::available(), ExecMode::Sequential]
        .into_iter()
        .enumerate()
    {
        let out = tmp.path().join(format!("run{i}"));
        commands::replay(
            &[fixtures().join("corpus")],
            &out,
            fixture_config(Task::Listening),
            mode,
        )
        .map_err(|e| format!("{e:#}"))?;
        let mut files = BTreeMap::new();
        for entry in std::fs::read_dir(&out).unwrap() {
            let p = entry.unwrap().path();
            files.insert(
                p.file_name().unwrap().to_string_lossy().into_owned(),
                std::fs::read(&p).unwrap(),
            );
        }
        runs.push(files);
    }
    ensure!(
        runs[0] == runs[1] && runs[1] == runs[2],
        "replay outputs differ between runs"
    );
    let report = String::from_utf8(runs[0]["report.json"].clone()).unwrap();
    ensure!(report == golden_report, "report differs from golden:\n{report}");
    for (name, want) in &golden_digests {
        let got = runs[0].get(name).map(|b| sha256_hex(b)).unwrap_or_default();
        ensure!(&got == want, "{name}: digest {got}");
    }

    // Stream one fixture session through the live service, then replay what it persisted.
    let sessions_dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut sc = commands::server_config(fixture_config(Task::Listening)).map_err(|e| format!("{e:#}"))?;
    sc.sessions_dir = sessions_dir.path().to_path_buf();
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let sc = Arc::new(sc);
    thread::spawn(move || server::serve_lines(listener, sc));
    let (_, events) = &fixture_sessions()[0];
    let w = TcpStream::connect(addr).unwrap();
    let mut c = LineClient {
        r: BufReader::new(w.try_clone().unwrap()),
        w,
    };
    c.send(&json!({"op": "start", "task": "listening"}));
    let mut sent = 0;
    for v in events.iter().filter_map(wire) {
        c.send(&v);
        sent += 1;
    }
    c.send(&json!({"op": "end"}));
    let live = c.drain();
    ensure!(
        live.iter().all(|v| v["ev"] != "error"),
        "live session reported an error"
    );
    let dir = std::fs::read_dir(sessions_dir.path())
        .unwrap()
        .filter_map(|e| e.ok().map(|e| e.path()))
        .next()
        .ok_or("no session persisted")?;
    let persisted = read_corpus(&dir.join("events.jsonl")).map_err(|e| e.to_string())?;
    ensure!(
        persisted.len() == sent,
        "persisted {} of {sent} events",
        persisted.len()
    );
    let end = read_end_ms(&dir.join("meta.json")).map_err(|e| e.to_string())?;
    let live_log = std::fs::read_to_string(dir.join("log.jsonl")).map_err(|e| e.to_string())?;
    let replayed = replay_events(&fixture_assets(Task::Listening), &persisted, end, false)
        .log
        .to_jsonl();
    ensure!(!live_log.is_empty(), "empty live log");
    ensure!(live_log == replayed, "live log and replay differ");
    Ok(format!(
        "3 runs identical, golden report and {} digests match, live/replay parity over {sent} events",
        golden_digests.len()
    ))
}

fn response_taxonomy() -> Outcome {
    let assets = EngineAssets::defaults(Task::Listening);
    let res = ListenerResources {
        templates: &assets.templates,
        lexicon: &assets.lexicon,
        stoplist: &assets.focus_stoplist,
    };
    let cfg = ArbitrationConfig::default();
    let mut history = ResponseHistory::default();
    let mut kinds = BTreeSet::new();
    let cases = jsonl("responses.jsonl");
    for (i, case) in cases.iter().enumerate() {
        let plan = arbitrate(&tokens(&case["tokens"]), &res, &cfg, &mut history, i as u64 * 1000);
        ensure!(
            plan.kind.as_str() == case["kind"] && plan.text == case["text"],
            "utterance {i}: got {} {:?}, want {} {}",
            plan.kind,
            plan.text,
            case["kind"],
            case["text"]
        );
        kinds.insert(plan.kind.as_str());
    }
    ensure!(kinds.len() == 5, "only {kinds:?} exercised");
    Ok(format!("{} utterances, {} kinds", cases.len(), kinds.len()))
}

fn interview_flow() -> Outcome {
    let script = InterviewScript::default();
    let stop = default_keyword_stoplist();
    let steps = jsonl("interview.jsonl");
    let mut st = InterviewState::new(&script);
    for (i, step) in steps.iter().enumerate() {
        let event = if step["answer"].is_null() {
            InterviewEvent::Start
        } else {
            let (s, _) =
                step_interview(&st, &script, &stop, InterviewEvent::QuestionAsked).map_err(|e| e.to_string())?;
            st = s;
            let answer = tokens(&step["answer"]);
            match st.awaiting() {
                Some(QuestionKind::Base) => InterviewEvent::AnswerComplete(answer),
                _ => InterviewEvent::FollowupAnswered(answer),
            }
        };
        let (s, action) = step_interview(&st, &script, &stop, event).map_err(|e| e.to_string())?;
        st = s;
        let got = match &action {
            InterviewAction::AskBase { text, .. } | InterviewAction::AskFollowup { text, .. } => Some(text.as_str()),
            _ => None,
        };
        ensure!(
            got == step["next"].as_str(),
            "step {i}: asked {got:?}, want {}",
            step["next"]
        );
    }
    ensure!(st.phase == Phase::Done, "scripted interview did not finish");

    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let script = InterviewScript {
            max_followups_per_base: rng.gen_range(0..4),
            ..InterviewScript::default()
        };
        let vocab = [
            ("I", "PRON"),
            ("project", "NOUN"),
            ("contribute", "VERB"),
            ("product", "NOUN"),
            ("robotics", "NOUN"),
            ("learned", "VERB"),
            ("difficult", "ADJ"),
            ("goal", "NOUN"),
            ("major", "NOUN"),
            ("tennis", "NOUN"),
        ];
        let mut st = InterviewState::new(&script);
        let (s, mut action) = step_interview(&st, &script, &stop, InterviewEvent::Start).map_err(|e| e.to_string())?;
        st = s;
        let mut asked = 0;
        let mut bases = Vec::new();
        let mut per_base = vec![0u32; script.base_questions.len()];
        loop {
            match &action {
                InterviewAction::AskBase { index, .. } => bases.push(*index),
                InterviewAction::AskFollowup { .. } => per_base[st.current_base] += 1,
                InterviewAction::End => break,
                InterviewAction::None => return Err(format!("seed {seed}: stalled")),
            }
            asked += 1;
            ensure!(
                asked <= script.max_questions(),
                "seed {seed}: more than {} questions",
                script.max_questions()
            );
            let (s, _) =
                step_interview(&st, &script, &stop, InterviewEvent::QuestionAsked).map_err(|e| e.to_string())?;
            st = s;
            let answer: Vec<Token> = (0..rng.gen_range(0..8))
                .map(|_| {
                    let (w, p) = vocab[rng.gen_range(0..vocab.len())];
                    Token::new(w, p)
                })
                .collect();
            let ev = match st.awaiting() {
                Some(QuestionKind::Base) => InterviewEvent::AnswerComplete(answer),
                _ => InterviewEvent::FollowupAnswered(answer),
            };
            let (s, a) = step_interview(&st, &script, &stop, ev).map_err(|e| e.to_string())?;
            st = s;
            action = a;
        }
        ensure!(
            bases == (0..script.base_questions.len()).collect::<Vec<_>>(),
            "seed {seed}: base order {bases:?}"
        );
        ensure!(
            per_base.iter().all(|n| *n <= script.max_followups_per_base),
            "seed {seed}: follow-up budget exceeded {per_base:?}"
        );
    }
    Ok(format!(
        "{}-step scripted interview, 100 random interviews",
        steps.len()
    ))
}

fn frame_cost() -> Outcome {
    let assets = fixture_assets(Task::Listening);
    let mut costs = Vec::new();
    for (_, events) in fixture_sessions() {
        costs.extend(replay_events(&assets, &events, None, true).frame_costs_ns);
    }
    ensure!(!costs.is_empty(), "no frames measured");
    let p99 = percentile(&costs, 0.99);
    ensure!(p99 <= 10_000_000, "p99 {} us", p99 / 1000);
    Ok(format!("p99 {} us over {} frames", p99 / 1000, costs.len()))
}

fn scan_properties() -> Outcome {
    let spec = SynthSpec::default();
    let mut sessions: Vec<Vec<DialogueEvent>> = fixture_sessions().into_iter().map(|(_, e)| e).collect();
    sessions.extend(
        generate_synthetic(&spec, 99, 8, ExecMode::available())
            .into_iter()
            .map(|s| s.events),
    );
    let mut summary = Vec::new();
    for task in [Task::Listening, Task::Interview] {
        let assets = fixture_assets(task);
        let refractory = assets.config.thresholds.refractory_ms;
        let (mut bcs, mut takes) = (0, 0);
        for events in &sessions {
            let log = replay_events(&assets, events, None, false).log;
            let v = scan(&log, events, refractory);
            ensure!(v.is_empty(), "{}: {}", task.as_str(), v[0]);
            bcs += log.backchannel_times().len();
            takes += log.take_turn_times().len();
        }
        ensure!(
            bcs > 0 && takes > 0,
            "{}: vacuous ({bcs} backchannels, {takes} takes)",
            task.as_str()
        );
        summary.push(format!("{} {bcs} backchannels {takes} takes", task.as_str()));
    }
    Ok(format!("{} sessions clean; {}", sessions.len(), summary.join(", ")))
}

fn main() {
    let criteria: Vec<Criterion> = vec![
        ("turn-state machine matches its declared table", fsttm_exhaustive),
        ("two-step take decision and wait time", two_step_composition),
        ("backchannel timing is learnable", || {
            learnability(Target::BackchannelTiming, "bc_timing")
        }),
        ("turn-end detection is learnable", || learnability(Target::Trp, "trp")),
        ("analytic gradient matches finite differences", gradient_check),
        ("replay is deterministic and matches live", replay_determinism),
        ("response taxonomy fixture", response_taxonomy),
        ("interview flow", interview_flow),
        ("frame cost p99 within 10 ms", frame_cost),
        ("decision logs satisfy safety properties", scan_properties),
    ];
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (name, check) in criteria {
        let result = panic::catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        match result {
            Ok(detail) => println!("[PASS] {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("[FAIL] {name}: {why}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
