//! Fallback part-of-speech tags for words that arrive untagged.
//!
//! Clients without a tagger may omit `pos`. A small closed-class lexicon
//! covers pronouns, particles, auxiliaries and fillers; a few suffix rules
//! catch verb forms; everything else is treated as a noun.

use reflex_core::features::pos;

const CLOSED_CLASS: &[(&str, &str)] = &[
    ("i", pos::PRON),
    ("you", pos::PRON),
    ("he", pos::PRON),
    ("she", pos::PRON),
    ("we", pos::PRON),
    ("they", pos::PRON),
    ("it", pos::PRON),
    ("me", pos::PRON),
    ("watashi", pos::PRON),
    ("boku", pos::PRON),
    ("a", pos::DET),
    ("an", pos::DET),
    ("the", pos::DET),
    ("this", pos::DET),
    ("that", pos::DET),
    ("my", pos::DET),
    ("your", pos::DET),
    ("our", pos::DET),
    ("some", pos::DET),
    ("in", pos::ADP),
    ("on", pos::ADP),
    ("at", pos::ADP),
    ("of", pos::ADP),
    ("to", pos::ADP),
    ("for", pos::ADP),
    ("with", pos::ADP),
    ("about", pos::ADP),
    ("from", pos::ADP),
    ("and", pos::CONJ),
    ("or", pos::CONJ),
    ("but", pos::CONJ),
    ("so", pos::CONJ),
    ("because", pos::CONJ),
    ("is", pos::AUX),
    ("am", pos::AUX),
    ("are", pos::AUX),
    ("was", pos::AUX),
    ("were", pos::AUX),
    ("be", pos::AUX),
    ("do", pos::AUX),
    ("did", pos::AUX),
    ("can", pos::AUX),
    ("will", pos::AUX),
    ("would", pos::AUX),
    ("desu", pos::AUX),
    ("deshita", pos::AUX),
    ("da", pos::AUX),
    ("have", pos::VERB),
    ("has", pos::VERB),
    ("had", pos::VERB),
    ("go", pos::VERB),
    ("went", pos::VERB),
    ("like", pos::VERB),
    ("want", pos::VERB),
    ("think", pos::VERB),
    ("very", pos::ADV),
    ("really", pos::ADV),
    ("also", pos::ADV),
    ("totemo", pos::ADV),
    ("chotto", pos::ADV),
    ("ni", pos::PRT),
    ("wo", pos::PRT),
    ("wa", pos::PRT),
    ("ga", pos::PRT),
    ("de", pos::PRT),
    ("no", pos::PRT),
    ("he", pos::PRT),
    ("mo", pos::PRT),
    ("kara", pos::PRT),
    ("made", pos::PRT),
    ("ne", pos::SFP),
    ("yo", pos::SFP),
    ("ka", pos::SFP),
    ("yone", pos::SFP),
    ("na", pos::SFP),
    ("um", pos::FILLER),
    ("uh", pos::FILLER),
    ("er", pos::FILLER),
    ("ano", pos::FILLER),
    ("eto", pos::FILLER),
    ("e-", pos::FILLER),
    ("ma-", pos::FILLER),
    ("sono", pos::FILLER),
];

const VERB_SUFFIXES: &[&str] = &["masu", "mashita", "masen", "tta", "tte", "teru", "tai", "ed"];

pub fn tag(surface: &str) -> &'static str {
    let w = surface.to_lowercase();
    if let Some((_, t)) = CLOSED_CLASS.iter().find(|(s, _)| *s == w) {
        return t;
    }
    if w.len() >= 4 && VERB_SUFFIXES.iter().any(|s| w.ends_with(s)) {
        return pos::VERB;
    }
    if w.len() > 4 && w.ends_with("ly") {
        return pos::ADV;
    }
    pos::NOUN
}

/// The client's tag when it gave one, otherwise a fallback tag.
pub fn resolve(surface: &str, given: Option<&str>) -> String {
    match given.map(str::trim) {
        Some(p) if !p.is_empty() && p != "X" => p.to_string(),
        _ => tag(surface).to_string(),
    }
}
