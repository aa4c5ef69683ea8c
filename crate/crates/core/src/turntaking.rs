//! Two-step end-of-turn prediction and the finite-state turn-taking machine.
//!
//! When the user goes silent the engine first scores whether the IPU ended at
//! a transition-relevance place, then whether the system should take the
//! turn given a TRP. The product of the two becomes the take-turn
//! probability, which the machine converts into a silence deadline: confident
//! predictions wait `min_wait_ms`, uncertain ones up to `max_wait_ms`.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{self, TAKE, TRP};
use crate::prosody::FrameFeatures;
use crate::statmodel::{LogisticModel, ModelError};
use crate::timeline::{Ipu, Word};

pub const DEFAULT_MIN_WAIT_MS: u64 = 200;
pub const DEFAULT_MAX_WAIT_MS: u64 = 2000;

#[derive(Debug, Error)]
pub enum TurnError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("TRP detection needs a finished IPU; VAD is still on")]
    IpuStillOpen,
    #[error("illegal transition: {input:?} in state {state:?}")]
    IllegalTransition { state: FsttmState, input: TurnInput },
    #[error("probability {0} outside [0, 1]")]
    InvalidProbability(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TrpDecision {
    pub p_trp: f64,
    pub p_take_given_trp: f64,
    pub p_take: f64,
}

impl TrpDecision {
    pub fn compose(p_trp: f64, p_take_given_trp: f64) -> Result<Self, TurnError> {
        for p in [p_trp, p_take_given_trp] {
            if !(0.0..=1.0).contains(&p) {
                return Err(TurnError::InvalidProbability(p));
            }
        }
        Ok(Self {
            p_trp,
            p_take_given_trp,
            p_take: p_trp * p_take_given_trp,
        })
    }

    /// A decision with `p_take` pinned to the given value.
    pub fn forced(p_take: f64) -> Self {
        Self {
            p_trp: 1.0,
            p_take_given_trp: p_take,
            p_take,
        }
    }
}

/// Probability that the IPU ended at a transition-relevance place.
pub fn detect_trp(model: &LogisticModel, ipu: &Ipu, features: &FrameFeatures) -> Result<f64, TurnError> {
    if ipu.in_speech {
        return Err(TurnError::IpuStillOpen);
    }
    let x = features::prosody_ling_vector(features, &ipu.tokens);
    Ok(model.predict_prob(TRP.id, &x)?)
}

pub fn decide_take_turn(
    model: &LogisticModel,
    p_trp: f64,
    features: &FrameFeatures,
    ipu: &Ipu,
) -> Result<TrpDecision, TurnError> {
    let p_take = model.predict_prob(TAKE.id, &features::take_vector(features, ipu))?;
    TrpDecision::compose(p_trp, p_take)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TurnConfig {
    pub min_wait_ms: u64,
    pub max_wait_ms: u64,
    /// System keeps the floor when the user talks over it (system initiative).
    pub hold_turn: bool,
}

impl Default for TurnConfig {
    fn default() -> Self {
        Self {
            min_wait_ms: DEFAULT_MIN_WAIT_MS,
            max_wait_ms: DEFAULT_MAX_WAIT_MS,
            hold_turn: false,
        }
    }
}

/// Silence the system waits before taking the turn; linear in `p_take`.
pub fn wait_time(cfg: &TurnConfig, p_take: f64) -> u64 {
    let p = p_take.clamp(0.0, 1.0);
    let span = cfg.max_wait_ms.saturating_sub(cfg.min_wait_ms) as f64;
    cfg.min_wait_ms + ((1.0 - p) * span).round() as u64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FsttmState {
    UserTurn,
    SystemTurn,
    FreeAfterUser,
    FreeAfterSystem,
    OverlapUserHolds,
    OverlapSystemHolds,
}

impl FsttmState {
    pub const ALL: [FsttmState; 6] = [
        FsttmState::UserTurn,
        FsttmState::SystemTurn,
        FsttmState::FreeAfterUser,
        FsttmState::FreeAfterSystem,
        FsttmState::OverlapUserHolds,
        FsttmState::OverlapSystemHolds,
    ];
}

impl fmt::Display for FsttmState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TurnInput {
    UserVadOn,
    UserVadOff,
    DeadlineExpired,
    SystemUtteranceStart,
    SystemUtteranceEnd,
    FillerDetected,
}

impl TurnInput {
    pub const ALL: [TurnInput; 6] = [
        TurnInput::UserVadOn,
        TurnInput::UserVadOff,
        TurnInput::DeadlineExpired,
        TurnInput::SystemUtteranceStart,
        TurnInput::SystemUtteranceEnd,
        TurnInput::FillerDetected,
    ];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TurnAction {
    None,
    TakeTurn,
    ReleaseTurn,
    ContinueWait,
    BackOff,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TurnState {
    pub fsttm: FsttmState,
    pub wait_deadline_ms: Option<u64>,
    pub last_decision: Option<TrpDecision>,
}

impl TurnState {
    pub fn new(fsttm: FsttmState) -> Self {
        Self {
            fsttm,
            wait_deadline_ms: None,
            last_decision: None,
        }
    }
}

impl Default for TurnState {
    fn default() -> Self {
        Self::new(FsttmState::FreeAfterSystem)
    }
}

/// Pure transition function of the turn-taking machine.
///
/// `decision` is consulted only for `UserVadOff` out of `UserTurn`; a missing
/// decision waits the full `max_wait_ms`.
pub fn fsttm_step(
    state: &TurnState,
    input: TurnInput,
    decision: Option<TrpDecision>,
    now_ms: u64,
    cfg: &TurnConfig,
) -> Result<(TurnState, TurnAction), TurnError> {
    use FsttmState::*;
    use TurnInput::*;

    let go = |fsttm| TurnState {
        fsttm,
        wait_deadline_ms: None,
        last_decision: state.last_decision,
    };
    let next = match (state.fsttm, input) {
        (UserTurn, UserVadOff) => {
            let p_take = decision.map_or(0.0, |d| d.p_take);
            let wait = wait_time(cfg, p_take).max(1);
            let s = TurnState {
                fsttm: FreeAfterUser,
                wait_deadline_ms: Some(now_ms + wait),
                last_decision: decision,
            };
            (s, TurnAction::ContinueWait)
        }
        (UserTurn, FillerDetected) => (*state, TurnAction::None),
        (UserTurn, SystemUtteranceStart) => {
            if cfg.hold_turn {
                (go(OverlapSystemHolds), TurnAction::None)
            } else {
                (go(OverlapUserHolds), TurnAction::BackOff)
            }
        }

        (FreeAfterUser, UserVadOn) => (go(UserTurn), TurnAction::None),
        (FreeAfterUser, DeadlineExpired) => (go(SystemTurn), TurnAction::TakeTurn),
        (FreeAfterUser, FillerDetected) => {
            let s = TurnState {
                wait_deadline_ms: Some(now_ms + cfg.max_wait_ms.max(1)),
                ..*state
            };
            (s, TurnAction::ContinueWait)
        }

        (SystemTurn, UserVadOn) => {
            if cfg.hold_turn {
                (go(OverlapSystemHolds), TurnAction::None)
            } else {
                (go(OverlapUserHolds), TurnAction::BackOff)
            }
        }
        (SystemTurn, SystemUtteranceEnd) => (go(FreeAfterSystem), TurnAction::ReleaseTurn),

        (FreeAfterSystem, UserVadOn) => (go(UserTurn), TurnAction::None),
        (FreeAfterSystem, SystemUtteranceStart) => (go(SystemTurn), TurnAction::None),

        (OverlapUserHolds, UserVadOff) => (go(SystemTurn), TurnAction::None),
        (OverlapUserHolds, SystemUtteranceEnd) => (go(UserTurn), TurnAction::None),

        (OverlapSystemHolds, UserVadOff) => (go(SystemTurn), TurnAction::None),
        (OverlapSystemHolds, SystemUtteranceEnd) => (go(UserTurn), TurnAction::None),

        (state, input) => return Err(TurnError::IllegalTransition { state, input }),
    };
    Ok(next)
}

/// Lexicon of filler and hesitation surfaces.
#[derive(Debug, Clone, PartialEq)]
pub struct FillerLexicon {
    entries: Vec<String>,
}

impl FillerLexicon {
    pub fn parse(text: &str) -> Self {
        Self {
            entries: text
                .lines()
                .map(str::trim)
                .filter(|l| !l.is_empty())
                .map(str::to_lowercase)
                .collect(),
        }
    }

    pub fn load(path: &Path) -> std::io::Result<Self> {
        Ok(Self::parse(&std::fs::read_to_string(path)?))
    }

    pub fn contains(&self, surface: &str) -> bool {
        let s = surface.to_lowercase();
        self.entries.contains(&s)
    }
}

impl Default for FillerLexicon {
    fn default() -> Self {
        Self::parse(include_str!("../resources/fillers.txt"))
    }
}

/// True iff the final token is a filler.
pub fn detect_filler(tokens: &[Word], lexicon: &FillerLexicon) -> bool {
    tokens.last().is_some_and(|w| lexicon.contains(&w.surface))
}
