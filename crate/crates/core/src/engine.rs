//! One dialogue session: all modules wired to a single event-driven clock.
//!
//! Inputs are dialogue events. Between events the session runs internal
//! work in time order: decision frames every 100 ms, the turn-taking
//! deadline, and the end of the current system utterance. At a given
//! millisecond an input event is handled first, then timers, then the frame.
//! A replay and a live session that feed the same events therefore produce
//! the same log.

use std::sync::Arc;
use std::time::Instant;

use serde_json::{json, Value};
use thiserror::Error;

use crate::backchannel::{BackchannelError, DecisionState};
use crate::config::{EngineAssets, Task};
use crate::engagement::{self, BehaviorWindow, ESTIMATE_PERIOD_MS};
use crate::features;
use crate::harness::log::{Decision, DecisionLog, LogRecord};
use crate::interview::{self, InterviewAction, InterviewEvent, InterviewState, QuestionKind};
use crate::listener::{self, ArbitrationConfig, ListenerResources, ResponseHistory, Token};
use crate::prosody::{self, ProsodyTrack, FRAME_PERIOD_MS};
use crate::timeline::{DialogueEvent, Payload, SessionTimeline, TimelineError};
use crate::turntaking::{self, fsttm_step, FsttmState, TrpDecision, TurnAction, TurnConfig, TurnInput, TurnState};

/// Spoken duration of a system utterance: fixed onset plus per character.
pub const UTTERANCE_BASE_MS: u64 = 300;
pub const UTTERANCE_PER_CHAR_MS: u64 = 70;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EngineError {
    #[error(transparent)]
    Timeline(#[from] TimelineError),
    #[error("session already started")]
    AlreadyStarted,
}

pub fn utterance_ms(text: &str) -> u64 {
    UTTERANCE_BASE_MS + UTTERANCE_PER_CHAR_MS * text.chars().count() as u64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Timer {
    Deadline,
    SystemEnd,
}

pub struct Session {
    assets: Arc<EngineAssets>,
    turn_cfg: TurnConfig,
    timeline: SessionTimeline,
    track: ProsodyTrack,
    turn: TurnState,
    behaviors: BehaviorWindow,
    history: ResponseHistory,
    interview: Option<InterviewState>,
    last_bc_ms: Option<u64>,
    system_end_ms: Option<u64>,
    next_frame_ms: u64,
    low_engagement_since: Option<u64>,
    /// First IPU of the user's current turn.
    turn_start_ipu: usize,
    started: bool,
    log: DecisionLog,
    drained: usize,
    instrument: bool,
    frame_costs_ns: Vec<u64>,
}

impl Session {
    pub fn new(assets: Arc<EngineAssets>) -> Self {
        let turn_cfg = assets.config.turn_config();
        let gap = assets.config.thresholds.ipu_gap_ms;
        Self {
            turn_cfg,
            timeline: SessionTimeline::new(gap),
            track: ProsodyTrack::new(),
            turn: TurnState::default(),
            behaviors: BehaviorWindow::default(),
            history: ResponseHistory::default(),
            interview: None,
            last_bc_ms: None,
            system_end_ms: None,
            next_frame_ms: FRAME_PERIOD_MS,
            low_engagement_since: None,
            turn_start_ipu: 0,
            started: false,
            log: DecisionLog::default(),
            drained: 0,
            instrument: false,
            frame_costs_ns: Vec::new(),
            assets,
        }
    }

    /// Records the wall-clock cost of every decision frame.
    pub fn with_instrumentation(mut self) -> Self {
        self.instrument = true;
        self
    }

    pub fn task(&self) -> Task {
        self.assets.config.task
    }

    pub fn now_ms(&self) -> u64 {
        self.timeline.now_ms()
    }

    pub fn turn_state(&self) -> &TurnState {
        &self.turn
    }

    pub fn timeline(&self) -> &SessionTimeline {
        &self.timeline
    }

    pub fn log(&self) -> &DecisionLog {
        &self.log
    }

    pub fn into_log(self) -> DecisionLog {
        self.log
    }

    pub fn frame_costs_ns(&self) -> &[u64] {
        &self.frame_costs_ns
    }

    pub fn interview_state(&self) -> Option<&InterviewState> {
        self.interview.as_ref()
    }

    pub fn system_speaking(&self) -> bool {
        self.system_end_ms.is_some()
    }

    /// Log records added since the previous call.
    pub fn drain_new(&mut self) -> &[LogRecord] {
        let from = self.drained;
        self.drained = self.log.records.len();
        &self.log.records[from..]
    }

    /// Opens the session at time 0. In interview mode the first base
    /// question is asked immediately.
    pub fn start(&mut self) -> Result<(), EngineError> {
        if self.started {
            return Err(EngineError::AlreadyStarted);
        }
        self.started = true;
        if self.task() == Task::Interview {
            let script = &self.assets.script;
            let state = InterviewState::new(script);
            match interview::step_interview(&state, script, &self.assets.keyword_stoplist, InterviewEvent::Start) {
                Ok((state, action)) => {
                    self.interview = Some(state);
                    self.apply_interview_action(0, action);
                }
                Err(e) => self.error(0, "interview", &e.to_string()),
            }
        }
        Ok(())
    }

    fn ensure_started(&mut self) {
        if !self.started {
            let _ = self.start();
        }
    }

    pub fn ingest(&mut self, e: DialogueEvent) -> Result<(), EngineError> {
        self.ensure_started();
        let t = e.t_ms;
        if t < self.timeline.now_ms() {
            let err = TimelineError::OutOfOrderEvent {
                t_ms: t,
                now_ms: self.timeline.now_ms(),
            };
            self.error(self.timeline.now_ms(), "out_of_order", &err.to_string());
            return Err(err.into());
        }
        self.run_until(t, false);
        let was_on = self.timeline.vad_on();
        if let Err(err) = self.timeline.ingest_event(e.clone()) {
            self.error(t, "malformed", &err.to_string());
            return Err(err.into());
        }
        match &e.payload {
            Payload::Prosody { f0_hz, power_db } => {
                if let Err(err) = self.track.update(t, *f0_hz, *power_db) {
                    self.error(t, "prosody", &err.to_string());
                }
            }
            Payload::Behavior(kind) => self.behaviors.update_window(t, *kind),
            Payload::VadOn if !was_on => self.on_vad_on(t),
            Payload::VadOff if was_on => self.on_vad_off(t),
            _ => {}
        }
        Ok(())
    }

    /// Runs internal work strictly before `t_ms`.
    pub fn advance_to(&mut self, t_ms: u64) {
        self.ensure_started();
        if t_ms > self.timeline.now_ms() {
            self.run_until(t_ms, false);
        }
    }

    /// Runs internal work up to and including `end_ms`.
    pub fn finish(&mut self, end_ms: u64) {
        self.ensure_started();
        if end_ms >= self.timeline.now_ms() {
            self.run_until(end_ms, true);
        }
    }

    fn next_timer(&self) -> Option<(u64, Timer)> {
        let deadline = self.turn.wait_deadline_ms.map(|t| (t, Timer::Deadline));
        let sys = self.system_end_ms.map(|t| (t, Timer::SystemEnd));
        match (deadline, sys) {
            (Some(a), Some(b)) => Some(if b.0 < a.0 { b } else { a }),
            (a, b) => a.or(b),
        }
    }

    fn run_until(&mut self, limit: u64, inclusive: bool) {
        let due = |t: u64| if inclusive { t <= limit } else { t < limit };
        loop {
            let timer = self.next_timer().filter(|(t, _)| due(*t));
            let frame_due = due(self.next_frame_ms);
            match timer {
                Some((t, kind)) if !frame_due || t <= self.next_frame_ms => {
                    self.clock(t);
                    match kind {
                        Timer::Deadline => self.on_deadline(t),
                        Timer::SystemEnd => self.on_system_end(t),
                    }
                }
                _ if frame_due => {
                    let t = self.next_frame_ms;
                    self.next_frame_ms += FRAME_PERIOD_MS;
                    self.clock(t);
                    let start = self.instrument.then(Instant::now);
                    self.on_frame(t);
                    if let Some(s) = start {
                        self.frame_costs_ns.push(s.elapsed().as_nanos() as u64);
                    }
                }
                _ => break,
            }
        }
    }

    fn clock(&mut self, t: u64) {
        if t > self.timeline.now_ms() {
            let _ = self.timeline.advance_to(t);
        }
    }

    fn error(&mut self, t: u64, code: &str, msg: &str) {
        self.log.push(
            t,
            "engine",
            Decision::Error {
                code: code.to_string(),
                msg: msg.to_string(),
            },
            &json!([code, msg]),
        );
    }

    fn step_turn(&mut self, t: u64, input: TurnInput, decision: Option<TrpDecision>) -> Option<TurnAction> {
        let from = self.turn.fsttm;
        match fsttm_step(&self.turn, input, decision, t, &self.turn_cfg) {
            Ok((next, action)) => {
                self.turn = next;
                self.log.push(
                    t,
                    "turntaking",
                    Decision::Turn {
                        input,
                        from,
                        to: next.fsttm,
                        action,
                        deadline_ms: next.wait_deadline_ms,
                    },
                    &json!([format!("{input:?}"), format!("{from:?}"), decision.map(|d| d.p_take)]),
                );
                Some(action)
            }
            Err(e) => {
                self.error(t, "illegal_transition", &e.to_string());
                None
            }
        }
    }

    fn on_vad_on(&mut self, t: u64) {
        if self.step_turn(t, TurnInput::UserVadOn, None) == Some(TurnAction::BackOff) {
            // The system stops talking as soon as it yields.
            self.system_end_ms = None;
            self.end_system_utterance(t);
        }
    }

    fn on_vad_off(&mut self, t: u64) {
        let decision = if self.turn.fsttm == FsttmState::UserTurn {
            self.trp_decision(t)
        } else {
            None
        };
        self.step_turn(t, TurnInput::UserVadOff, decision);
        if self.turn.fsttm == FsttmState::FreeAfterUser {
            let tail = self.timeline.ipus().last().map(|u| u.tokens.as_slice()).unwrap_or(&[]);
            if turntaking::detect_filler(tail, &self.assets.fillers) {
                self.step_turn(t, TurnInput::FillerDetected, None);
            }
        }
    }

    fn trp_decision(&mut self, t: u64) -> Option<TrpDecision> {
        let ipu = self.timeline.ipus().last()?.clone();
        let f = prosody::features_unchecked(&self.track, &self.timeline, t);
        let x = features::take_vector(&f, &ipu);
        let decision = match self.assets.config.force_p_take {
            Some(p) => Ok(TrpDecision::forced(p)),
            None => turntaking::detect_trp(&self.assets.trp, &ipu, &f)
                .and_then(|p| turntaking::decide_take_turn(&self.assets.take, p, &f, &ipu)),
        };
        match decision {
            Ok(d) => {
                self.log.push(
                    t,
                    "turntaking",
                    Decision::Trp {
                        p_trp: d.p_trp,
                        p_take_given_trp: d.p_take_given_trp,
                        p_take: d.p_take,
                        ipu_start_ms: ipu.start_ms,
                        ipu_end_ms: ipu.end_ms,
                    },
                    &json!(x),
                );
                Some(d)
            }
            Err(e) => {
                self.error(t, "model", &e.to_string());
                None
            }
        }
    }

    fn user_turn_tokens(&self) -> Vec<Token> {
        let ipus = self.timeline.ipus();
        ipus.iter()
            .enumerate()
            .skip(self.turn_start_ipu.min(ipus.len()))
            .flat_map(|(i, u)| {
                u.tokens.iter().map(move |w| Token {
                    surface: w.surface.clone(),
                    pos: w.pos.clone(),
                    ipu: i,
                })
            })
            .collect()
    }

    fn on_deadline(&mut self, t: u64) {
        if self.step_turn(t, TurnInput::DeadlineExpired, None) != Some(TurnAction::TakeTurn) {
            self.turn.wait_deadline_ms = None;
            return;
        }
        let tokens = self.user_turn_tokens();
        self.turn_start_ipu = self.timeline.ipus().len();
        match self.task() {
            Task::Listening => {
                let a = &*self.assets;
                let res = ListenerResources {
                    templates: &a.templates,
                    lexicon: &a.lexicon,
                    stoplist: &a.focus_stoplist,
                };
                let cfg = ArbitrationConfig {
                    sentiment_threshold: a.config.thresholds.sentiment,
                    prefer_question: self
                        .low_engagement_since
                        .is_some_and(|s| t - s >= a.config.thresholds.low_engagement_ms),
                };
                let plan = listener::arbitrate(&tokens, &res, &cfg, &mut self.history, t);
                let surfaces: Vec<&str> = tokens.iter().map(|k| k.surface.as_str()).collect();
                self.log.push(
                    t,
                    "listener",
                    Decision::Response {
                        kind: plan.kind.as_str().to_string(),
                        text: plan.text.clone(),
                        template: plan.provenance.template.clone(),
                        focus: plan.provenance.focus.clone(),
                        polarity: plan.provenance.polarity,
                    },
                    &json!([surfaces, cfg.prefer_question]),
                );
                self.begin_system_utterance(t, &plan.text);
            }
            Task::Interview => self.interview_turn(t, tokens),
        }
    }

    fn interview_turn(&mut self, t: u64, tokens: Vec<Token>) {
        let Some(state) = self.interview.as_ref() else {
            self.begin_system_utterance(t, "");
            return;
        };
        let event = match state.awaiting() {
            Some(QuestionKind::Base) => InterviewEvent::AnswerComplete(tokens),
            Some(_) => InterviewEvent::FollowupAnswered(tokens),
            None => {
                self.begin_system_utterance(t, "");
                return;
            }
        };
        let a = Arc::clone(&self.assets);
        match interview::step_interview(state, &a.script, &a.keyword_stoplist, event) {
            Ok((next, action)) => {
                self.interview = Some(next);
                self.apply_interview_action(t, action);
            }
            Err(e) => {
                self.error(t, "interview", &e.to_string());
                self.begin_system_utterance(t, "");
            }
        }
    }

    /// Logs and speaks the outcome of an interview step. Called with the
    /// system about to hold the floor.
    fn apply_interview_action(&mut self, t: u64, action: InterviewAction) {
        let (kind, text) = match action {
            InterviewAction::AskBase { text, .. } => ("base", text),
            InterviewAction::AskFollowup { kind, text } => match kind {
                QuestionKind::KeywordFollowup => ("keyword_followup", text),
                _ => ("checklist_followup", text),
            },
            InterviewAction::End => {
                let report = self.interview.as_ref().map_or(Value::Null, interview::session_report);
                self.log
                    .push(t, "interview", Decision::InterviewEnd { report }, &json!("end"));
                self.begin_system_utterance(t, "");
                return;
            }
            InterviewAction::None => return,
        };
        self.log.push(
            t,
            "interview",
            Decision::Question {
                kind: kind.to_string(),
                text: text.clone(),
            },
            &json!([kind, text]),
        );
        if let Some(state) = self.interview.as_ref() {
            let a = Arc::clone(&self.assets);
            match interview::step_interview(state, &a.script, &a.keyword_stoplist, InterviewEvent::QuestionAsked) {
                Ok((next, _)) => self.interview = Some(next),
                Err(e) => self.error(t, "interview", &e.to_string()),
            }
        }
        self.begin_system_utterance(t, &text);
    }

    fn begin_system_utterance(&mut self, t: u64, text: &str) {
        if self.turn.fsttm == FsttmState::FreeAfterSystem {
            self.step_turn(t, TurnInput::SystemUtteranceStart, None);
        }
        let dur = if text.is_empty() { 0 } else { utterance_ms(text) };
        self.system_end_ms = Some(t + dur);
        self.log
            .push(t, "engine", Decision::System { speaking: true }, &json!(text));
    }

    fn on_system_end(&mut self, t: u64) {
        self.system_end_ms = None;
        self.end_system_utterance(t);
    }

    fn end_system_utterance(&mut self, t: u64) {
        self.log
            .push(t, "engine", Decision::System { speaking: false }, &json!(null));
        if matches!(
            self.turn.fsttm,
            FsttmState::SystemTurn | FsttmState::OverlapUserHolds | FsttmState::OverlapSystemHolds
        ) {
            self.step_turn(t, TurnInput::SystemUtteranceEnd, None);
        }
        // Speech overlapping the system utterance belongs to the next turn.
        if self.turn.fsttm != FsttmState::UserTurn {
            self.turn_start_ipu = self.timeline.ipus().len();
        }
    }

    fn on_frame(&mut self, t: u64) {
        self.behaviors.advance(t);
        if t.is_multiple_of(ESTIMATE_PERIOD_MS) {
            self.estimate_engagement(t);
        }
        if self.track.last_t_ms().is_some() {
            self.backchannel_frame(t);
        }
    }

    fn estimate_engagement(&mut self, t: u64) {
        let Some(model) = self.assets.engagement.as_ref() else {
            return;
        };
        let est = match engagement::estimate(model, &self.behaviors, &self.assets.config.engagement_baselines, t) {
            Ok(e) => e,
            Err(e) => return self.error(t, "model", &e.to_string()),
        };
        if est.p_engaged < self.assets.config.thresholds.low_engagement {
            self.low_engagement_since.get_or_insert(t);
        } else {
            self.low_engagement_since = None;
        }
        self.log.push(
            t,
            "engagement",
            Decision::Engagement {
                score: est.p_engaged,
                counts: est.counts,
            },
            &json!(est.counts),
        );
    }

    fn form_vector(&self, f: &prosody::FrameFeatures) -> Vec<f64> {
        match self.timeline.ipus().last() {
            Some(u) => features::bc_form_vector(
                f,
                &u.tokens,
                prosody::span_power_mean(&self.track, u.start_ms, u.end_ms),
            ),
            None => features::bc_form_vector(f, &[], 0.0),
        }
    }

    fn backchannel_frame(&mut self, t: u64) {
        let Some(policy) = self.assets.backchannel.as_ref() else {
            return;
        };
        let f = prosody::features_unchecked(&self.track, &self.timeline, t);
        let p = match policy.predict_timing(&f) {
            Ok(p) => p,
            Err(e) => return self.error(t, "model", &e.to_string()),
        };
        let state = DecisionState {
            last_bc_t_ms: self.last_bc_ms,
            system_speaking: self.system_end_ms.is_some(),
            now_ms: t,
        };
        if !policy.decide(p, &state) {
            if self.assets.config.log_frames {
                self.log
                    .push(t, "backchannel", Decision::Frame { p_bc: p }, &json!(f.vector));
            }
            return;
        }
        let x = self.form_vector(&f);
        let form = match policy.select_form(&x) {
            Ok(form) => form.clone(),
            Err(BackchannelError::NoModelsLoaded) => policy.inventory.forms()[0].clone(),
            Err(e) => return self.error(t, "model", &e.to_string()),
        };
        self.last_bc_ms = Some(t);
        self.log.push(
            t,
            "backchannel",
            Decision::Backchannel {
                form: form.label,
                text: form.text,
                p_bc: p,
            },
            &json!(x),
        );
    }
}
