//! Synthetic corpora with planted regularities.
//!
//! Generative rules, per user IPU:
//!
//! * The IPU is a turn-relevance place with probability `p_trp`. A TRP IPU
//!   is a question with probability `p_question`; questions end in "ka" with
//!   a rising contour and are taken with probability `p_take_question`,
//!   other TRPs with `p_take_statement`.
//! * A TRP IPU ends in a sentence-final particle with probability
//!   `sfp_given_trp`, any other IPU with `sfp_given_non_trp`. Non-TRP IPUs
//!   end in a filler with probability `filler_given_non_trp`.
//! * The final 400 ms of F0 falls to 0.7x (statement TRPs with probability
//!   `p_fall_trp`, others `p_fall_non_trp`), rises to 1.3x (questions), or
//!   stays flat.
//! * A falling IPU is always followed by a long pause. With probability
//!   `bc_rate` a gold backchannel is placed 300-500 ms after its VadOff.
//! * An IPU is emphasized (+8 dB) with probability `p_emphasis`. Its gold
//!   backchannel is an assessment form with probability `form_fidelity`;
//!   otherwise a continuer with the same probability.
//! * Each session is engaged with probability `p_engaged`. Engaged sessions
//!   have more listener behaviors and shorter pauses.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backchannel::{FormFamily, FormInventory};
use crate::corpus;
use crate::par::{self, ExecMode};
use crate::timeline::{BehaviorKind, DialogueEvent, Payload, Word};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub session_ms: u64,
    pub prosody_hop_ms: u64,
    pub ipu_ms: (u64, u64),
    pub word_ms: (u64, u64),
    pub short_pause_ms: (u64, u64),
    pub long_pause_ms: (u64, u64),
    pub taken_pause_ms: (u64, u64),
    pub p_long_pause: f64,
    pub p_trp: f64,
    pub p_question: f64,
    pub p_take_question: f64,
    pub p_take_statement: f64,
    pub sfp_given_trp: f64,
    pub sfp_given_non_trp: f64,
    pub filler_given_non_trp: f64,
    pub p_fall_trp: f64,
    pub p_fall_non_trp: f64,
    pub bc_rate: f64,
    pub bc_delay_ms: (u64, u64),
    pub p_emphasis: f64,
    pub form_fidelity: f64,
    pub p_sentiment_word: f64,
    pub p_engaged: f64,
    /// Behaviors per 30 s for engaged and disengaged sessions, in
    /// laugh, nod, gaze contact, user backchannel order.
    pub behavior_rate_engaged: [f64; 4],
    pub behavior_rate_disengaged: [f64; 4],
    pub disengaged_pause_scale: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            session_ms: 90_000,
            prosody_hop_ms: 50,
            ipu_ms: (800, 3000),
            word_ms: (250, 400),
            short_pause_ms: (250, 500),
            long_pause_ms: (600, 2000),
            taken_pause_ms: (1500, 3000),
            p_long_pause: 0.3,
            p_trp: 0.4,
            p_question: 0.5,
            p_take_question: 0.9,
            p_take_statement: 0.3,
            sfp_given_trp: 0.95,
            sfp_given_non_trp: 0.05,
            filler_given_non_trp: 0.3,
            p_fall_trp: 0.6,
            p_fall_non_trp: 0.2,
            bc_rate: 0.8,
            bc_delay_ms: (300, 500),
            p_emphasis: 0.3,
            form_fidelity: 0.9,
            p_sentiment_word: 0.15,
            p_engaged: 0.5,
            behavior_rate_engaged: [2.0, 6.0, 9.0, 5.0],
            behavior_rate_disengaged: [0.3, 1.5, 2.0, 1.0],
            disengaged_pause_scale: 2.5,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<(), String> {
        let probs = [
            ("p_long_pause", self.p_long_pause),
            ("p_trp", self.p_trp),
            ("p_question", self.p_question),
            ("p_take_question", self.p_take_question),
            ("p_take_statement", self.p_take_statement),
            ("sfp_given_trp", self.sfp_given_trp),
            ("sfp_given_non_trp", self.sfp_given_non_trp),
            ("filler_given_non_trp", self.filler_given_non_trp),
            ("p_fall_trp", self.p_fall_trp),
            ("p_fall_non_trp", self.p_fall_non_trp),
            ("bc_rate", self.bc_rate),
            ("p_emphasis", self.p_emphasis),
            ("form_fidelity", self.form_fidelity),
            ("p_sentiment_word", self.p_sentiment_word),
            ("p_engaged", self.p_engaged),
        ];
        for (name, p) in probs {
            if !(0.0..=1.0).contains(&p) {
                return Err(format!("{name} = {p} outside [0, 1]"));
            }
        }
        let ranges = [
            ("ipu_ms", self.ipu_ms),
            ("word_ms", self.word_ms),
            ("short_pause_ms", self.short_pause_ms),
            ("long_pause_ms", self.long_pause_ms),
            ("taken_pause_ms", self.taken_pause_ms),
            ("bc_delay_ms", self.bc_delay_ms),
        ];
        for (name, (lo, hi)) in ranges {
            if lo == 0 || lo > hi {
                return Err(format!("{name} range ({lo}, {hi}) invalid"));
            }
        }
        if self.prosody_hop_ms == 0 || self.session_ms == 0 {
            return Err("session_ms and prosody_hop_ms must be positive".into());
        }
        if self.long_pause_ms.0 <= self.bc_delay_ms.1 {
            return Err("long pauses must outlast the backchannel delay".into());
        }
        if self.ipu_ms.0 < 500 {
            return Err("IPUs shorter than 500 ms leave no room for the contour".into());
        }
        if self.disengaged_pause_scale < 1.0 {
            return Err("disengaged_pause_scale must be at least 1".into());
        }
        Ok(())
    }
}

/// Ground-truth counters for checking generated rates.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct SynthStats {
    pub ipus: usize,
    pub falls: usize,
    pub gold_bc: usize,
    pub trp: usize,
    pub taken: usize,
    pub engaged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSession {
    pub events: Vec<DialogueEvent>,
    pub stats: SynthStats,
}

const NOUNS: [&str; 12] = [
    "ryokou",
    "Kyoto",
    "eiga",
    "tomodachi",
    "kazoku",
    "shigoto",
    "ryouri",
    "hon",
    "kouen",
    "sakura",
    "densha",
    "onsen",
];
const VERBS: [&str; 6] = ["itta", "mita", "tabeta", "yonda", "aruita", "hanashita"];
const PARTICLES: [&str; 4] = ["ni", "wo", "wa", "de"];
const STATEMENT_SFP: [&str; 2] = ["ne", "yo"];
const FILLERS: [&str; 3] = ["ano", "eto", "sono"];
const SENTIMENT: [&str; 6] = ["tanoshii", "ureshii", "oishii", "tsurai", "kanashii", "taihen"];

fn range(rng: &mut ChaCha8Rng, (lo, hi): (u64, u64)) -> u64 {
    rng.gen_range(lo..=hi)
}

#[derive(Clone, Copy, PartialEq)]
enum Contour {
    Flat,
    Fall,
    Rise,
}

fn rank(p: &Payload) -> u8 {
    match p {
        Payload::VadOn => 0,
        Payload::Word(_) => 1,
        Payload::Prosody { .. } => 2,
        Payload::VadOff => 3,
        Payload::GoldTurn { .. } => 4,
        Payload::GoldBackchannel { .. } => 5,
        Payload::Behavior(_) => 6,
    }
}

/// One session; deterministic in `(spec, seed, index)`.
pub fn generate_session(spec: &SynthSpec, seed: u64, index: u64) -> SynthSession {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    let inventory = FormInventory::default();
    let continuers: Vec<String> = family_labels(&inventory, FormFamily::Continuer);
    let assessments: Vec<String> = family_labels(&inventory, FormFamily::Assessment);

    let engaged = rng.gen_bool(spec.p_engaged);
    let pause_scale = if engaged { 1.0 } else { spec.disengaged_pause_scale };
    let base_f0: f64 = rng.gen_range(100.0..250.0);
    let base_power: f64 = rng.gen_range(-30.0..-15.0);
    let mut stats = SynthStats {
        engaged,
        ..SynthStats::default()
    };
    let mut evs: Vec<DialogueEvent> = Vec::new();
    let hop = spec.prosody_hop_ms;

    let mut t = range(&mut rng, (200, 1000));
    while t + spec.ipu_ms.0 < spec.session_ms {
        let dur = range(&mut rng, spec.ipu_ms).min(spec.session_ms - t - 1);
        let (start, end) = (t, t + dur);
        stats.ipus += 1;

        let trp = rng.gen_bool(spec.p_trp);
        let question = trp && rng.gen_bool(spec.p_question);
        let taken = trp
            && rng.gen_bool(if question {
                spec.p_take_question
            } else {
                spec.p_take_statement
            });
        let contour = if question {
            Contour::Rise
        } else if rng.gen_bool(if trp { spec.p_fall_trp } else { spec.p_fall_non_trp }) {
            Contour::Fall
        } else {
            Contour::Flat
        };
        let emphasized = rng.gen_bool(spec.p_emphasis);

        // Final token first: it is fixed by the rules above.
        let final_tok: (&str, &str) = if question {
            ("ka", "SFP")
        } else if rng.gen_bool(if trp {
            spec.sfp_given_trp
        } else {
            spec.sfp_given_non_trp
        }) {
            (STATEMENT_SFP[rng.gen_range(0..STATEMENT_SFP.len())], "SFP")
        } else if !trp && rng.gen_bool(spec.filler_given_non_trp) {
            (FILLERS[rng.gen_range(0..FILLERS.len())], "FILLER")
        } else {
            match rng.gen_range(0..3) {
                0 => (NOUNS[rng.gen_range(0..NOUNS.len())], "NOUN"),
                1 => (VERBS[rng.gen_range(0..VERBS.len())], "VERB"),
                _ => (PARTICLES[rng.gen_range(0..PARTICLES.len())], "PRT"),
            }
        };
        let mut words: Vec<(u64, u64, String, String)> = Vec::new();
        let mut wt = start;
        loop {
            let wd = range(&mut rng, spec.word_ms);
            if wt + wd >= end {
                break;
            }
            let (s, p) = if rng.gen_bool(spec.p_sentiment_word) {
                (SENTIMENT[rng.gen_range(0..SENTIMENT.len())], "ADJ")
            } else {
                match rng.gen_range(0..3) {
                    0 => (NOUNS[rng.gen_range(0..NOUNS.len())], "NOUN"),
                    1 => (PARTICLES[rng.gen_range(0..PARTICLES.len())], "PRT"),
                    _ => (VERBS[rng.gen_range(0..VERBS.len())], "VERB"),
                }
            };
            words.push((wt, wt + wd, s.to_string(), p.to_string()));
            wt += wd;
        }
        let final_start = wt.min(end - 1);
        words.push((final_start, end, final_tok.0.to_string(), final_tok.1.to_string()));

        evs.push(DialogueEvent::new(start, Payload::VadOn));
        for (ws, we, s, p) in words {
            evs.push(DialogueEvent::new(
                ws,
                Payload::Word(Word {
                    surface: s,
                    pos: p,
                    end_t_ms: we,
                }),
            ));
        }
        let contour_start = end.saturating_sub(400).max(start);
        let mut ft = start.div_ceil(hop) * hop;
        while ft < end {
            let frac = if ft >= contour_start {
                (ft - contour_start) as f64 / (end - contour_start) as f64
            } else {
                0.0
            };
            let shape = match contour {
                Contour::Flat => 1.0,
                Contour::Fall => 1.0 - 0.3 * frac,
                Contour::Rise => 1.0 + 0.3 * frac,
            };
            let jitter = 1.0 + rng.gen_range(-0.02..0.02);
            let emph = if emphasized { 8.0 } else { 0.0 };
            evs.push(DialogueEvent::new(
                ft,
                Payload::Prosody {
                    f0_hz: base_f0 * shape * jitter,
                    power_db: base_power + emph + rng.gen_range(-1.0..1.0),
                },
            ));
            ft += hop;
        }
        evs.push(DialogueEvent::new(end, Payload::VadOff));
        evs.push(DialogueEvent::new(end, Payload::GoldTurn { trp, taken }));
        if trp {
            stats.trp += 1;
        }
        if taken {
            stats.taken += 1;
        }

        let pause = if taken {
            range(&mut rng, spec.taken_pause_ms)
        } else if contour == Contour::Fall || rng.gen_bool(spec.p_long_pause) {
            range(&mut rng, spec.long_pause_ms)
        } else {
            range(&mut rng, spec.short_pause_ms)
        };
        let pause = (pause as f64 * pause_scale) as u64;
        if contour == Contour::Fall {
            stats.falls += 1;
            if rng.gen_bool(spec.bc_rate) {
                let at = end + range(&mut rng, spec.bc_delay_ms);
                let faithful = rng.gen_bool(spec.form_fidelity);
                let family = match (emphasized, faithful) {
                    (true, true) | (false, false) => &assessments,
                    _ => &continuers,
                };
                let form = family[rng.gen_range(0..family.len())].clone();
                evs.push(DialogueEvent::new(at, Payload::GoldBackchannel { form }));
                stats.gold_bc += 1;
            }
        }
        // Silence frames keep the prosody track current.
        let mut st = end.div_ceil(hop) * hop;
        if st == end {
            st += hop;
        }
        while st < end + pause && st < spec.session_ms {
            evs.push(DialogueEvent::new(
                st,
                Payload::Prosody {
                    f0_hz: 0.0,
                    power_db: base_power - 12.0 + rng.gen_range(-1.0..1.0),
                },
            ));
            st += hop;
        }
        t = end + pause;
    }

    let rates = if engaged {
        spec.behavior_rate_engaged
    } else {
        spec.behavior_rate_disengaged
    };
    for kind in BehaviorKind::ALL {
        let rate_per_ms = rates[kind.index()] / 30_000.0;
        if rate_per_ms <= 0.0 {
            continue;
        }
        let mut bt = 0.0;
        loop {
            let u: f64 = rng.gen_range(f64::EPSILON..1.0);
            bt += -u.ln() / rate_per_ms;
            if bt >= spec.session_ms as f64 {
                break;
            }
            evs.push(DialogueEvent::new(bt as u64, Payload::Behavior(kind)));
        }
    }

    evs.sort_by_key(|e| (e.t_ms, rank(&e.payload)));
    SynthSession { events: evs, stats }
}

fn family_labels(inv: &FormInventory, family: FormFamily) -> Vec<String> {
    inv.forms()
        .iter()
        .filter(|f| f.family == family)
        .map(|f| f.label.clone())
        .collect()
}

pub fn generate_synthetic(spec: &SynthSpec, seed: u64, n_sessions: usize, mode: ExecMode) -> Vec<SynthSession> {
    par::map_range(mode, n_sessions, |i| generate_session(spec, seed, i as u64))
}

/// Writes `session_NNNN.jsonl` files into `dir` and returns their paths.
pub fn write_synthetic(
    dir: &Path,
    spec: &SynthSpec,
    seed: u64,
    n_sessions: usize,
    mode: ExecMode,
) -> std::io::Result<Vec<PathBuf>> {
    if n_sessions == 0 {
        return Ok(Vec::new());
    }
    std::fs::create_dir_all(dir)?;
    let sessions = generate_synthetic(spec, seed, n_sessions, mode);
    let mut paths = Vec::new();
    for (i, s) in sessions.iter().enumerate() {
        let p = dir.join(format!("session_{i:04}.jsonl"));
        let f = std::io::BufWriter::new(std::fs::File::create(&p)?);
        corpus::write_corpus(f, &s.events)?;
        paths.push(p);
    }
    Ok(paths)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::timeline::SessionTimeline;

    #[test]
    fn deterministic_and_ordered() {
        let spec = SynthSpec::default();
        let a = generate_session(&spec, 7, 3);
        let b = generate_session(&spec, 7, 3);
        assert_eq!(a, b);
        assert_ne!(a.events, generate_session(&spec, 7, 4).events);
        assert!(a.events.windows(2).all(|w| w[0].t_ms <= w[1].t_ms));
    }

    #[test]
    fn sessions_ingest_cleanly() {
        let s = generate_session(&SynthSpec::default(), 1, 0);
        let mut tl = SessionTimeline::default();
        for e in &s.events {
            tl.ingest_event(e.clone()).unwrap();
        }
        let words: usize = tl.ipus().iter().map(|u| u.tokens.len()).sum();
        let word_events = s
            .events
            .iter()
            .filter(|e| matches!(e.payload, Payload::Word(_)))
            .count();
        assert_eq!(words, word_events);
        assert_eq!(tl.ipus().len(), s.stats.ipus);
    }

    #[test]
    fn spec_validation() {
        assert!(SynthSpec::default().validate().is_ok());
        let bad = SynthSpec {
            bc_rate: 1.5,
            ..SynthSpec::default()
        };
        assert!(bad.validate().is_err());
    }
}
