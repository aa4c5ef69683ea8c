//! Attentive-listening responses: partial repeats, elaborating questions,
//! assessments, generic sentimental responses, and generic responses.
//!
//! Focus-based responses are built around the rightmost content noun of the
//! user's turn. Assessments and sentimental responses follow the polarity of
//! a lexicon lookup. [`arbitrate`] picks one plan per response opportunity.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::pos;

pub const DEFAULT_SENTIMENT_THRESHOLD: f64 = 0.3;

const DEFAULT_TEMPLATES: &str = include_str!("../resources/templates_ja.json");
const DEFAULT_LEXICON: &str = include_str!("../resources/sentiment_lexicon.tsv");
const DEFAULT_STOPLIST: &str = include_str!("../resources/focus_stoplist.txt");

/// Particles after a noun that mark it as object or topic.
const OBJECT_TOPIC_PARTICLES: [&str; 3] = ["wo", "o", "wa"];

#[derive(Debug, Error, PartialEq)]
pub enum ListenerError {
    #[error("no focus word available")]
    MissingFocus,
    #[error("template file: {0}")]
    Templates(String),
    #[error("sentiment lexicon line {line}: {reason}")]
    Lexicon { line: usize, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResponseKind {
    PartialRepeat,
    ElaboratingQuestion,
    Assessment,
    GenericSentimental,
    Generic,
    BackchannelOnly,
}

impl ResponseKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ResponseKind::PartialRepeat => "partial_repeat",
            ResponseKind::ElaboratingQuestion => "elaborating_question",
            ResponseKind::Assessment => "assessment",
            ResponseKind::GenericSentimental => "generic_sentimental",
            ResponseKind::Generic => "generic",
            ResponseKind::BackchannelOnly => "backchannel_only",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [
            ResponseKind::PartialRepeat,
            ResponseKind::ElaboratingQuestion,
            ResponseKind::Assessment,
            ResponseKind::GenericSentimental,
            ResponseKind::Generic,
            ResponseKind::BackchannelOnly,
        ]
        .into_iter()
        .find(|k| k.as_str() == s)
    }
}

impl fmt::Display for ResponseKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FocusWord {
    pub surface: String,
    pub pos: String,
    pub confidence: f64,
    pub source_ipu: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct Provenance {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub focus: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub polarity: Option<f64>,
    pub template: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResponsePlan {
    pub kind: ResponseKind,
    pub text: String,
    pub trigger_t_ms: u64,
    pub provenance: Provenance,
}

/// A token as seen by the response generators: surface, POS, and the index
/// of the IPU it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct Token {
    pub surface: String,
    pub pos: String,
    pub ipu: usize,
}

impl Token {
    pub fn new(surface: &str, pos: &str) -> Self {
        Self {
            surface: surface.to_string(),
            pos: pos.to_string(),
            ipu: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stoplist(Vec<String>);

impl Stoplist {
    pub fn parse(text: &str) -> Self {
        Self(
            text.lines()
                .map(str::trim)
                .filter(|l| !l.is_empty() && !l.starts_with('#'))
                .map(str::to_lowercase)
                .collect(),
        )
    }

    pub fn contains(&self, s: &str) -> bool {
        let s = s.to_lowercase();
        self.0.contains(&s)
    }

    pub fn empty() -> Self {
        Self(Vec::new())
    }
}

impl Default for Stoplist {
    fn default() -> Self {
        Self::parse(DEFAULT_STOPLIST)
    }
}

/// Rightmost content noun not in the stoplist. Confidence is 1.0 when an
/// object/topic particle follows it directly, 0.6 otherwise.
pub fn extract_focus(tokens: &[Token], stoplist: &Stoplist) -> Option<FocusWord> {
    let i = tokens
        .iter()
        .rposition(|t| pos::is_content_noun(&t.pos) && !stoplist.contains(&t.surface))?;
    let marked = tokens
        .get(i + 1)
        .is_some_and(|n| n.pos == pos::PRT && OBJECT_TOPIC_PARTICLES.contains(&n.surface.to_lowercase().as_str()));
    Some(FocusWord {
        surface: tokens[i].surface.clone(),
        pos: tokens[i].pos.clone(),
        confidence: if marked { 1.0 } else { 0.6 },
        source_ipu: tokens[i].ipu,
    })
}

/// Templates keyed by kind; each template may contain an `{X}` slot.
#[derive(Debug, Clone, PartialEq)]
pub struct Templates {
    map: BTreeMap<String, Vec<String>>,
}

impl Templates {
    pub const KEYS: [&'static str; 6] = [
        "partial_repeat",
        "elaborating_question",
        "assessment_positive",
        "assessment_negative",
        "generic_sentimental",
        "generic",
    ];

    pub fn from_json(text: &str) -> Result<Self, ListenerError> {
        let map: BTreeMap<String, Vec<String>> =
            serde_json::from_str(text).map_err(|e| ListenerError::Templates(e.to_string()))?;
        for key in Self::KEYS {
            match map.get(key) {
                Some(list) if !list.is_empty() && list.iter().all(|t| !t.is_empty()) => {}
                _ => return Err(ListenerError::Templates(format!("missing or empty entry {key:?}"))),
            }
        }
        Ok(Self { map })
    }

    pub fn load(path: &Path) -> Result<Self, ListenerError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| ListenerError::Templates(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn get(&self, key: &str) -> &[String] {
        self.map.get(key).map(Vec::as_slice).unwrap_or(&[])
    }

    fn fill(&self, key: &str, idx: usize, x: &str) -> (String, String) {
        let list = self.get(key);
        let i = idx % list.len();
        (list[i].replace("{X}", x), format!("{key}#{i}"))
    }
}

impl Default for Templates {
    fn default() -> Self {
        Self::from_json(DEFAULT_TEMPLATES).expect("bundled templates are valid")
    }
}

pub fn gen_partial_repeat(
    focus: Option<&FocusWord>,
    templates: &Templates,
    t_ms: u64,
) -> Result<ResponsePlan, ListenerError> {
    let focus = focus.ok_or(ListenerError::MissingFocus)?;
    let (text, template) = templates.fill("partial_repeat", 0, &focus.surface);
    Ok(ResponsePlan {
        kind: ResponseKind::PartialRepeat,
        text,
        trigger_t_ms: t_ms,
        provenance: Provenance {
            focus: Some(focus.surface.clone()),
            polarity: None,
            template,
        },
    })
}

/// Elaborating question; `rotation` selects the template round-robin and is
/// advanced on success.
pub fn gen_elaborating_question(
    focus: Option<&FocusWord>,
    templates: &Templates,
    rotation: &mut usize,
    t_ms: u64,
) -> Result<ResponsePlan, ListenerError> {
    let focus = focus.ok_or(ListenerError::MissingFocus)?;
    let (text, template) = templates.fill("elaborating_question", *rotation, &focus.surface);
    *rotation += 1;
    Ok(ResponsePlan {
        kind: ResponseKind::ElaboratingQuestion,
        text,
        trigger_t_ms: t_ms,
        provenance: Provenance {
            focus: Some(focus.surface.clone()),
            polarity: None,
            template,
        },
    })
}

/// Surface → polarity in [-1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct SentimentLexicon {
    scores: BTreeMap<String, f64>,
}

impl SentimentLexicon {
    /// Tab-separated `surface<TAB>score` lines; `#` starts a comment.
    pub fn parse_tsv(text: &str) -> Result<Self, ListenerError> {
        let mut scores = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = |reason: &str| ListenerError::Lexicon {
                line: i + 1,
                reason: reason.to_string(),
            };
            let (surface, score) = line
                .split_once('\t')
                .ok_or_else(|| bad("expected two tab-separated columns"))?;
            let score: f64 = score.trim().parse().map_err(|_| bad("score is not a number"))?;
            if !score.is_finite() || !(-1.0..=1.0).contains(&score) {
                return Err(bad("score outside [-1, 1]"));
            }
            scores.insert(surface.trim().to_lowercase(), score);
        }
        Ok(Self { scores })
    }

    pub fn load(path: &Path) -> Result<Self, ListenerError> {
        let text = std::fs::read_to_string(path).map_err(|e| ListenerError::Lexicon {
            line: 0,
            reason: format!("{}: {e}", path.display()),
        })?;
        Self::parse_tsv(&text)
    }

    pub fn from_pairs(pairs: &[(&str, f64)]) -> Self {
        Self {
            scores: pairs.iter().map(|(s, v)| (s.to_lowercase(), *v)).collect(),
        }
    }

    pub fn score(&self, surface: &str) -> Option<f64> {
        self.scores.get(&surface.to_lowercase()).copied()
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }
}

impl Default for SentimentLexicon {
    fn default() -> Self {
        Self::parse_tsv(DEFAULT_LEXICON).expect("bundled lexicon is valid")
    }
}

/// Mean score over lexicon hits, clamped to [-1, 1]; 0 without hits.
pub fn classify_sentiment(tokens: &[Token], lexicon: &SentimentLexicon) -> f64 {
    let hits: Vec<f64> = tokens.iter().filter_map(|t| lexicon.score(&t.surface)).collect();
    if hits.is_empty() {
        return 0.0;
    }
    (hits.iter().sum::<f64>() / hits.len().max(1) as f64).clamp(-1.0, 1.0)
}

pub fn gen_assessment(polarity: f64, threshold: f64, templates: &Templates, t_ms: u64) -> Option<ResponsePlan> {
    if polarity == 0.0 || !polarity.is_finite() {
        return None;
    }
    let (kind, key) = if polarity.abs() >= threshold {
        let key = if polarity > 0.0 {
            "assessment_positive"
        } else {
            "assessment_negative"
        };
        (ResponseKind::Assessment, key)
    } else {
        (ResponseKind::GenericSentimental, "generic_sentimental")
    };
    let (text, template) = templates.fill(key, 0, "");
    Some(ResponsePlan {
        kind,
        text,
        trigger_t_ms: t_ms,
        provenance: Provenance {
            focus: None,
            polarity: Some(polarity),
            template,
        },
    })
}

pub fn gen_generic(templates: &Templates, rotation: usize, t_ms: u64) -> ResponsePlan {
    let (text, template) = templates.fill("generic", rotation, "");
    ResponsePlan {
        kind: ResponseKind::Generic,
        text,
        trigger_t_ms: t_ms,
        provenance: Provenance {
            focus: None,
            polarity: None,
            template,
        },
    }
}

/// Per-session memory for arbitration.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ResponseHistory {
    pub previous: Option<ResponseKind>,
    pub question_rotation: usize,
    pub generic_rotation: usize,
    /// Most recent focus word seen in the session.
    pub last_focus: Option<FocusWord>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArbitrationConfig {
    pub sentiment_threshold: f64,
    /// Low-engagement hook: allow an elaborating question about an earlier
    /// focus word when the current turn has none.
    pub prefer_question: bool,
}

impl Default for ArbitrationConfig {
    fn default() -> Self {
        Self {
            sentiment_threshold: DEFAULT_SENTIMENT_THRESHOLD,
            prefer_question: false,
        }
    }
}

pub struct ListenerResources<'a> {
    pub templates: &'a Templates,
    pub lexicon: &'a SentimentLexicon,
    pub stoplist: &'a Stoplist,
}

/// Chooses one response for the user's turn.
///
/// Priority: elaborating question, partial repeat, assessment, generic
/// sentimental, generic. A kind used in the previous response is skipped;
/// generic is always available.
pub fn arbitrate(
    tokens: &[Token],
    res: &ListenerResources<'_>,
    cfg: &ArbitrationConfig,
    history: &mut ResponseHistory,
    t_ms: u64,
) -> ResponsePlan {
    let focus = extract_focus(tokens, res.stoplist);
    let polarity = classify_sentiment(tokens, res.lexicon);
    let question_focus = match (&focus, cfg.prefer_question) {
        (Some(f), _) => Some(f.clone()),
        (None, true) => history.last_focus.clone(),
        (None, false) => None,
    };
    let allowed = |k: ResponseKind| history.previous != Some(k);

    let mut rotation = history.question_rotation;
    let plan = None
        .or_else(|| {
            allowed(ResponseKind::ElaboratingQuestion)
                .then(|| gen_elaborating_question(question_focus.as_ref(), res.templates, &mut rotation, t_ms).ok())
                .flatten()
        })
        .or_else(|| {
            allowed(ResponseKind::PartialRepeat)
                .then(|| gen_partial_repeat(focus.as_ref(), res.templates, t_ms).ok())
                .flatten()
        })
        .or_else(|| gen_assessment(polarity, cfg.sentiment_threshold, res.templates, t_ms).filter(|p| allowed(p.kind)))
        .unwrap_or_else(|| gen_generic(res.templates, history.generic_rotation, t_ms));

    match plan.kind {
        ResponseKind::ElaboratingQuestion => history.question_rotation = rotation,
        ResponseKind::Generic => history.generic_rotation += 1,
        _ => {}
    }
    history.previous = Some(plan.kind);
    if focus.is_some() {
        history.last_focus = focus;
    }
    plan
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(spec: &[(&str, &str)]) -> Vec<Token> {
        spec.iter().map(|(s, p)| Token::new(s, p)).collect()
    }

    fn focus(s: &str) -> FocusWord {
        FocusWord {
            surface: s.into(),
            pos: "NOUN".into(),
            confidence: 0.6,
            source_ipu: 0,
        }
    }

    #[test]
    fn kyoto_trip_focus() {
        let t = toks(&[
            ("Kyoto", "PROPN"),
            ("ni", "PRT"),
            ("ryokou", "NOUN"),
            ("ni", "PRT"),
            ("itta", "VERB"),
        ]);
        let f = extract_focus(&t, &Stoplist::default()).unwrap();
        assert_eq!(f.surface, "ryokou");
        assert_eq!(f.confidence, 0.6);
    }

    #[test]
    fn focus_edge_cases() {
        assert_eq!(
            extract_focus(&toks(&[("ne", "SFP"), ("wa", "PRT")]), &Stoplist::default()),
            None
        );
        let f = extract_focus(&toks(&[("ryokou", "NOUN")]), &Stoplist::default()).unwrap();
        assert_eq!((f.surface.as_str(), f.confidence), ("ryokou", 0.6));
        let f = extract_focus(&toks(&[("ryokou", "NOUN"), ("wa", "PRT")]), &Stoplist::default()).unwrap();
        assert_eq!(f.confidence, 1.0);
    }

    #[test]
    fn partial_repeat_template() {
        let t = Templates::default();
        assert_eq!(
            gen_partial_repeat(Some(&focus("ryokou")), &t, 0).unwrap().text,
            "ryokou?"
        );
        assert_eq!(
            gen_partial_repeat(Some(&focus("machine learning")), &t, 0)
                .unwrap()
                .text,
            "machine learning?"
        );
        assert_eq!(gen_partial_repeat(None, &t, 0), Err(ListenerError::MissingFocus));
    }

    #[test]
    fn elaborating_rotation() {
        let t = Templates::default();
        let mut rot = 0;
        let f = focus("ryokou");
        assert_eq!(
            gen_elaborating_question(Some(&f), &t, &mut rot, 0).unwrap().text,
            "donna ryokou desu ka?"
        );
        assert_eq!(
            gen_elaborating_question(Some(&f), &t, &mut rot, 0).unwrap().text,
            "ryokou wa dou deshita ka?"
        );
        assert_eq!(
            gen_elaborating_question(None, &t, &mut rot, 0),
            Err(ListenerError::MissingFocus)
        );
        assert_eq!(rot, 2);
    }

    #[test]
    fn sentiment_examples() {
        let lex = SentimentLexicon::from_pairs(&[("tanoshii", 0.8), ("totemo", 0.2), ("tsurai", -0.8)]);
        assert_eq!(classify_sentiment(&toks(&[("kyoto", "PROPN")]), &lex), 0.0);
        let p = classify_sentiment(&toks(&[("totemo", "ADV"), ("tanoshii", "ADJ")]), &lex);
        assert!((p - 0.5).abs() < 1e-12);
        assert_eq!(classify_sentiment(&toks(&[("tsurai", "ADJ")]), &lex), -0.8);
    }

    #[test]
    fn assessment_branches() {
        let t = Templates::default();
        let a = gen_assessment(0.8, 0.3, &t, 0).unwrap();
        assert_eq!((a.kind, a.text.as_str()), (ResponseKind::Assessment, "ii desu ne"));
        let a = gen_assessment(-0.5, 0.3, &t, 0).unwrap();
        assert_eq!(a.text, "taihen desu ne");
        let g = gen_assessment(-0.1, 0.3, &t, 0).unwrap();
        assert_eq!(
            (g.kind, g.text.as_str()),
            (ResponseKind::GenericSentimental, "sou nan desu ne")
        );
        assert_eq!(gen_assessment(0.0, 0.3, &t, 0), None);
    }

    fn resources() -> (Templates, SentimentLexicon, Stoplist) {
        (Templates::default(), SentimentLexicon::default(), Stoplist::default())
    }

    #[test]
    fn arbitration_examples() {
        let (templates, lexicon, stoplist) = resources();
        let res = ListenerResources {
            templates: &templates,
            lexicon: &lexicon,
            stoplist: &stoplist,
        };
        let cfg = ArbitrationConfig::default();
        let t = toks(&[("ryokou", "NOUN"), ("ga", "PRT"), ("tanoshikatta", "ADJ")]);
        let mut h = ResponseHistory::default();
        assert_eq!(
            arbitrate(&t, &res, &cfg, &mut h, 0).kind,
            ResponseKind::ElaboratingQuestion
        );
        assert_eq!(arbitrate(&t, &res, &cfg, &mut h, 0).kind, ResponseKind::PartialRepeat);

        let mut h = ResponseHistory::default();
        let g = arbitrate(&toks(&[("sorede", "CONJ")]), &res, &cfg, &mut h, 0);
        assert_eq!(g.kind, ResponseKind::Generic);
        assert_eq!(g.text, "sorekara dou narimashita ka?");
    }

    #[test]
    fn low_engagement_reuses_earlier_focus() {
        let (templates, lexicon, stoplist) = resources();
        let res = ListenerResources {
            templates: &templates,
            lexicon: &lexicon,
            stoplist: &stoplist,
        };
        let mut h = ResponseHistory::default();
        let cfg = ArbitrationConfig::default();
        arbitrate(&toks(&[("ryokou", "NOUN")]), &res, &cfg, &mut h, 0);
        h.previous = Some(ResponseKind::Generic);
        let none = toks(&[("sorede", "CONJ")]);
        let mut h2 = h.clone();
        assert_eq!(arbitrate(&none, &res, &cfg, &mut h2, 0).kind, ResponseKind::Generic);
        let eager = ArbitrationConfig {
            prefer_question: true,
            ..cfg
        };
        let plan = arbitrate(&none, &res, &eager, &mut h, 0);
        assert_eq!(plan.kind, ResponseKind::ElaboratingQuestion);
        assert!(plan.text.contains("ryokou"));
    }

    #[test]
    fn bundled_resources_load() {
        let lex = SentimentLexicon::default();
        assert!(lex.len() >= 150, "lexicon has {} entries", lex.len());
        assert_eq!(lex.score("tanoshii"), Some(0.8));
        assert!(Templates::from_json(include_str!("../resources/templates_en.json")).is_ok());
    }

    #[test]
    fn malformed_lexicon_line() {
        let err = SentimentLexicon::parse_tsv("good\t0.5\nbad\t3.0\n").unwrap_err();
        assert_eq!(
            err,
            ListenerError::Lexicon {
                line: 2,
                reason: "score outside [-1, 1]".into()
            }
        );
    }
}
