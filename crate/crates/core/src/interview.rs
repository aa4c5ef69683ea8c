//! Interviewer-side dialogue manager.
//!
//! A script of base questions is asked in order. After each answer the
//! manager may ask follow-ups, bounded per base question: first for checklist
//! items the answers have not covered yet, then about the most salient
//! keyword of the latest answer.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::pos;
use crate::listener::{Stoplist, Token};

pub const DEFAULT_KEYWORD_FOLLOWUP: &str = "Could you explain more about {X}?";
const DEFAULT_SCRIPT: &str = include_str!("../resources/interview_script.json");
const DEFAULT_KEYWORD_STOPLIST: &str = include_str!("../resources/keyword_stoplist.txt");

#[derive(Debug, Error, PartialEq)]
pub enum InterviewError {
    #[error("event {event} is not legal in phase {phase:?}")]
    IllegalPhase { phase: Phase, event: &'static str },
    #[error("invalid script: {0}")]
    Script(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChecklistItem {
    pub id: String,
    pub description: String,
    #[serde(rename = "stems")]
    pub matcher: Vec<String>,
    #[serde(rename = "followup")]
    pub followup_template: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaseQuestion {
    pub id: String,
    pub text: String,
    #[serde(default)]
    pub checklist: Vec<ChecklistItem>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterviewScript {
    pub base_questions: Vec<BaseQuestion>,
    pub max_followups_per_base: u32,
    #[serde(default = "default_keyword_followup")]
    pub keyword_followup: String,
}

fn default_keyword_followup() -> String {
    DEFAULT_KEYWORD_FOLLOWUP.to_string()
}

impl InterviewScript {
    pub fn from_json(text: &str) -> Result<Self, InterviewError> {
        let s: Self = serde_json::from_str(text).map_err(|e| InterviewError::Script(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self, InterviewError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| InterviewError::Script(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<(), InterviewError> {
        if self.base_questions.is_empty() {
            return Err(InterviewError::Script("no base questions".into()));
        }
        for (i, q) in self.base_questions.iter().enumerate() {
            if self.base_questions[..i].iter().any(|p| p.id == q.id) {
                return Err(InterviewError::Script(format!("duplicate question id {:?}", q.id)));
            }
            for item in &q.checklist {
                if item.matcher.is_empty() || item.matcher.iter().any(|s| s.is_empty()) {
                    return Err(InterviewError::Script(format!("item {:?} has no stems", item.id)));
                }
                if item.followup_template.is_empty() {
                    return Err(InterviewError::Script(format!("item {:?} has no follow-up", item.id)));
                }
            }
        }
        if !self.keyword_followup.contains("{X}") {
            return Err(InterviewError::Script("keyword follow-up lacks {X}".into()));
        }
        Ok(())
    }

    /// Upper bound on question turns in one session.
    pub fn max_questions(&self) -> usize {
        self.base_questions.len() * (1 + self.max_followups_per_base as usize)
    }
}

impl Default for InterviewScript {
    fn default() -> Self {
        Self::from_json(DEFAULT_SCRIPT).expect("bundled script is valid")
    }
}

pub fn default_keyword_stoplist() -> Stoplist {
    Stoplist::parse(DEFAULT_KEYWORD_STOPLIST)
}

/// Items none of whose stems prefixes any (case-folded) answer token.
pub fn assess_checklist<'a>(answer: &[Token], items: &'a [ChecklistItem]) -> Vec<&'a ChecklistItem> {
    let words: Vec<String> = answer.iter().map(|t| t.surface.to_lowercase()).collect();
    items
        .iter()
        .filter(|item| {
            !item.matcher.iter().any(|stem| {
                let stem = stem.to_lowercase();
                words.iter().any(|w| w.starts_with(&stem))
            })
        })
        .collect()
}

/// Longest content noun (adjacent nouns form one compound) outside the
/// stoplist; ties go to the rightmost.
pub fn extract_keyword(answer: &[Token], stoplist: &Stoplist) -> Option<String> {
    let mut candidates: Vec<String> = Vec::new();
    let mut run: Vec<&str> = Vec::new();
    for t in answer.iter().map(Some).chain(std::iter::once(None)) {
        match t {
            Some(t) if pos::is_content_noun(&t.pos) => run.push(&t.surface),
            _ => {
                if !run.is_empty() {
                    candidates.push(run.join(" "));
                    run.clear();
                }
            }
        }
    }
    candidates
        .into_iter()
        .filter(|c| !stoplist.contains(c))
        .fold(None, |best: Option<String>, c| match best {
            Some(b) if b.chars().count() > c.chars().count() => Some(b),
            _ => Some(c),
        })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Phase {
    Asking,
    Listening,
    Done,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum QuestionKind {
    Base,
    ChecklistFollowup,
    KeywordFollowup,
}

#[derive(Debug, Clone, PartialEq)]
pub enum InterviewEvent {
    Start,
    /// The pending question has been delivered.
    QuestionAsked,
    AnswerComplete(Vec<Token>),
    FollowupAnswered(Vec<Token>),
}

impl InterviewEvent {
    fn name(&self) -> &'static str {
        match self {
            InterviewEvent::Start => "Start",
            InterviewEvent::QuestionAsked => "QuestionAsked",
            InterviewEvent::AnswerComplete(_) => "AnswerComplete",
            InterviewEvent::FollowupAnswered(_) => "FollowupAnswered",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum InterviewAction {
    AskBase { index: usize, text: String },
    AskFollowup { kind: QuestionKind, text: String },
    End,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QuestionReport {
    pub id: String,
    pub unmet: Vec<String>,
    pub followups: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InterviewState {
    pub current_base: usize,
    pub followups_asked: Vec<u32>,
    pub transcript: Vec<(String, Vec<Token>)>,
    pub phase: Phase,
    pending: Option<(QuestionKind, String)>,
    answered: Option<QuestionKind>,
    cumulative: Vec<Token>,
    asked_items: Vec<String>,
    asked_keywords: Vec<String>,
    report: Vec<QuestionReport>,
}

impl InterviewState {
    pub fn new(script: &InterviewScript) -> Self {
        Self {
            current_base: 0,
            followups_asked: vec![0; script.base_questions.len()],
            transcript: Vec::new(),
            phase: Phase::Asking,
            pending: None,
            answered: None,
            cumulative: Vec::new(),
            asked_items: Vec::new(),
            asked_keywords: Vec::new(),
            report: Vec::new(),
        }
    }

    /// Kind of the question the user is currently answering.
    pub fn awaiting(&self) -> Option<QuestionKind> {
        self.answered
    }

    pub fn report(&self) -> &[QuestionReport] {
        &self.report
    }
}

/// Follow-up for the current base question, or `None` when the budget is
/// spent or nothing is left to ask about.
pub fn gen_followup(
    state: &InterviewState,
    script: &InterviewScript,
    unmet: &[&ChecklistItem],
    keyword: Option<&str>,
) -> Option<(QuestionKind, String, String)> {
    if state
        .followups_asked
        .get(state.current_base)
        .copied()
        .unwrap_or(u32::MAX)
        >= script.max_followups_per_base
    {
        return None;
    }
    if let Some(item) = unmet.iter().find(|i| !state.asked_items.contains(&i.id)) {
        return Some((
            QuestionKind::ChecklistFollowup,
            item.followup_template.clone(),
            item.id.clone(),
        ));
    }
    let kw = keyword.filter(|k| !state.asked_keywords.iter().any(|a| a == k))?;
    Some((
        QuestionKind::KeywordFollowup,
        script.keyword_followup.replace("{X}", kw),
        kw.to_string(),
    ))
}

pub fn step_interview(
    state: &InterviewState,
    script: &InterviewScript,
    stoplist: &Stoplist,
    event: InterviewEvent,
) -> Result<(InterviewState, InterviewAction), InterviewError> {
    let illegal = || InterviewError::IllegalPhase {
        phase: state.phase,
        event: event.name(),
    };
    let mut s = state.clone();
    match (&event, state.phase) {
        (InterviewEvent::Start, Phase::Asking) if state.pending.is_none() && state.transcript.is_empty() => {
            let q = &script.base_questions[0];
            s.pending = Some((QuestionKind::Base, q.text.clone()));
            Ok((
                s,
                InterviewAction::AskBase {
                    index: 0,
                    text: q.text.clone(),
                },
            ))
        }
        (InterviewEvent::QuestionAsked, Phase::Asking) => {
            let (kind, text) = s.pending.take().ok_or_else(illegal)?;
            s.transcript.push((text, Vec::new()));
            s.answered = Some(kind);
            s.phase = Phase::Listening;
            Ok((s, InterviewAction::None))
        }
        (InterviewEvent::AnswerComplete(answer), Phase::Listening) if s.answered == Some(QuestionKind::Base) => {
            Ok(after_answer(s, script, stoplist, answer))
        }
        (InterviewEvent::FollowupAnswered(answer), Phase::Listening)
            if matches!(
                s.answered,
                Some(QuestionKind::ChecklistFollowup | QuestionKind::KeywordFollowup)
            ) =>
        {
            Ok(after_answer(s, script, stoplist, answer))
        }
        _ => Err(illegal()),
    }
}

fn after_answer(
    mut s: InterviewState,
    script: &InterviewScript,
    stoplist: &Stoplist,
    answer: &[Token],
) -> (InterviewState, InterviewAction) {
    if let Some(last) = s.transcript.last_mut() {
        last.1 = answer.to_vec();
    }
    s.cumulative.extend_from_slice(answer);
    s.answered = None;

    let base = &script.base_questions[s.current_base];
    let unmet = assess_checklist(&s.cumulative, &base.checklist);
    let keyword = extract_keyword(answer, stoplist);
    if let Some((kind, text, key)) = gen_followup(&s, script, &unmet, keyword.as_deref()) {
        s.followups_asked[s.current_base] += 1;
        match kind {
            QuestionKind::KeywordFollowup => s.asked_keywords.push(key.clone()),
            _ => s.asked_items.push(key.clone()),
        }
        s.pending = Some((kind, text.clone()));
        s.phase = Phase::Asking;
        return (s, InterviewAction::AskFollowup { kind, text });
    }

    let followups = s.asked_items.iter().chain(&s.asked_keywords).cloned().collect();
    s.report.push(QuestionReport {
        id: base.id.clone(),
        unmet: unmet.iter().map(|i| i.id.clone()).collect(),
        followups,
    });
    s.cumulative.clear();
    s.asked_items.clear();
    s.asked_keywords.clear();
    s.current_base += 1;
    match script.base_questions.get(s.current_base) {
        Some(q) => {
            s.pending = Some((QuestionKind::Base, q.text.clone()));
            s.phase = Phase::Asking;
            let action = InterviewAction::AskBase {
                index: s.current_base,
                text: q.text.clone(),
            };
            (s, action)
        }
        None => {
            s.phase = Phase::Done;
            (s, InterviewAction::End)
        }
    }
}

/// Session summary: unmet checklist items per question.
pub fn session_report(state: &InterviewState) -> serde_json::Value {
    serde_json::json!({
        "questions": state.report,
        "completed": state.phase == Phase::Done,
    })
}
