//! Feature schemas shared between training and the live engine.
//!
//! Each predictor has its own schema id. Model files carry the id they were
//! trained against, and loading a model under the wrong schema is an error.

use crate::prosody::{FrameFeatures, PROSODY_FEATURES};
use crate::timeline::{BehaviorKind, Ipu, Word};

/// Part-of-speech tags understood by the rule-based components.
pub mod pos {
    pub const NOUN: &str = "NOUN";
    pub const PROPN: &str = "PROPN";
    pub const VERB: &str = "VERB";
    pub const ADJ: &str = "ADJ";
    pub const ADV: &str = "ADV";
    pub const AUX: &str = "AUX";
    /// Case particle (ni, wo, wa, ga, de, ...).
    pub const PRT: &str = "PRT";
    /// Sentence-final particle (ne, yo, ka, ...).
    pub const SFP: &str = "SFP";
    pub const FILLER: &str = "FILLER";
    pub const PRON: &str = "PRON";
    pub const DET: &str = "DET";
    pub const ADP: &str = "ADP";
    pub const CONJ: &str = "CONJ";

    pub fn is_content_noun(tag: &str) -> bool {
        tag == NOUN || tag == PROPN
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Schema {
    pub id: &'static str,
    pub names: &'static [&'static str],
}

impl Schema {
    pub fn dim(&self) -> usize {
        self.names.len()
    }
}

pub const LINGUISTIC_FEATURES: [&str; 6] = [
    "final_is_sfp",
    "final_is_filler",
    "final_is_case_particle",
    "final_is_predicate",
    "final_is_noun",
    "token_count_x10",
];

const fn concat<const A: usize, const B: usize, const C: usize>(
    a: [&'static str; A],
    b: [&'static str; B],
) -> [&'static str; C] {
    let mut out = [""; C];
    let mut i = 0;
    while i < A {
        out[i] = a[i];
        i += 1;
    }
    while i < A + B {
        out[i] = b[i - A];
        i += 1;
    }
    out
}

const PROSODY_LING: [&str; 17] = concat(PROSODY_FEATURES, LINGUISTIC_FEATURES);
const TAKE_NAMES: [&str; 18] = concat(PROSODY_LING, ["ipu_duration_s"]);
const FORM_NAMES: [&str; 18] = concat(PROSODY_LING, ["ipu_power_mean"]);
const ENGAGEMENT_NAMES: [&str; 4] = ["laugh_z", "nod_z", "gaze_contact_z", "user_backchannel_z"];

pub const BC_TIMING: Schema = Schema {
    id: "bc-timing/v1",
    names: &PROSODY_FEATURES,
};
pub const BC_FORM: Schema = Schema {
    id: "bc-form/v1",
    names: &FORM_NAMES,
};
pub const TRP: Schema = Schema {
    id: "trp/v1",
    names: &PROSODY_LING,
};
pub const TAKE: Schema = Schema {
    id: "take/v1",
    names: &TAKE_NAMES,
};
pub const ENGAGEMENT: Schema = Schema {
    id: "engagement/v1",
    names: &ENGAGEMENT_NAMES,
};

/// Linguistic features of the tail of a token sequence.
pub fn linguistic(tokens: &[Word]) -> [f64; 6] {
    let flag = |b: bool| if b { 1.0 } else { 0.0 };
    let last = tokens.last().map(|w| w.pos.as_str()).unwrap_or("");
    [
        flag(last == pos::SFP),
        flag(last == pos::FILLER),
        flag(last == pos::PRT),
        flag(matches!(last, pos::VERB | pos::AUX | pos::ADJ)),
        flag(pos::is_content_noun(last)),
        (tokens.len() as f64 / 10.0).min(3.0),
    ]
}

pub fn bc_timing_vector(f: &FrameFeatures) -> Vec<f64> {
    f.vector.clone()
}

pub fn prosody_ling_vector(f: &FrameFeatures, tokens: &[Word]) -> Vec<f64> {
    let mut v = f.vector.clone();
    v.extend_from_slice(&linguistic(tokens));
    v
}

/// Form-selection features: frame prosody, IPU tail, and the mean
/// z-scored power of the whole IPU.
pub fn bc_form_vector(f: &FrameFeatures, tokens: &[Word], ipu_power_mean: f64) -> Vec<f64> {
    let mut v = prosody_ling_vector(f, tokens);
    v.push(ipu_power_mean);
    v
}

pub fn take_vector(f: &FrameFeatures, ipu: &Ipu) -> Vec<f64> {
    let mut v = prosody_ling_vector(f, &ipu.tokens);
    v.push((ipu.duration_ms() as f64 / 1000.0).min(10.0));
    v
}

/// Baselines used to z-score behavior counts for the engagement model.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct CountBaselines {
    pub mean: [f64; 4],
    pub std: [f64; 4],
}

impl Default for CountBaselines {
    fn default() -> Self {
        // Per 30 s window: laughs, nods, gaze contacts, user backchannels.
        Self {
            mean: [1.0, 4.0, 6.0, 3.0],
            std: [1.0, 2.0, 3.0, 2.0],
        }
    }
}

pub fn engagement_vector(counts: &[u32; 4], baselines: &CountBaselines) -> Vec<f64> {
    BehaviorKind::ALL
        .iter()
        .map(|k| {
            let i = k.index();
            let sd = if baselines.std[i] > 0.0 { baselines.std[i] } else { 1.0 };
            (counts[i] as f64 - baselines.mean[i]) / sd
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn w(s: &str, p: &str) -> Word {
        Word {
            surface: s.into(),
            pos: p.into(),
            end_t_ms: 0,
        }
    }

    #[test]
    fn schema_dims() {
        assert_eq!(BC_TIMING.dim(), 11);
        assert_eq!(BC_FORM.dim(), 18);
        assert_eq!(TRP.dim(), 17);
        assert_eq!(TAKE.dim(), 18);
        assert_eq!(ENGAGEMENT.dim(), 4);
        assert_eq!(TAKE.names[17], "ipu_duration_s");
        assert_eq!(TRP.names[11], "final_is_sfp");
    }

    #[test]
    fn linguistic_tail() {
        let toks = vec![w("kyoto", "PROPN"), w("ni", "PRT"), w("itta", "VERB"), w("yo", "SFP")];
        assert_eq!(linguistic(&toks), [1.0, 0.0, 0.0, 0.0, 0.0, 0.4]);
        assert_eq!(linguistic(&[]), [0.0; 6]);
    }
}
