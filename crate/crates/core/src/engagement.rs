//! Rolling engagement estimate from listener behaviors.
//!
//! Laughs, nods, gaze contacts and user backchannels are counted over a
//! sliding window, z-scored against baselines and fed to a logistic model.

use std::collections::VecDeque;

use serde::Serialize;

use crate::features::{self, CountBaselines, ENGAGEMENT};
use crate::statmodel::{LogisticModel, ModelError};
use crate::timeline::BehaviorKind;

pub const DEFAULT_WINDOW_MS: u64 = 30_000;
pub const ESTIMATE_PERIOD_MS: u64 = 1_000;

/// Behavior events inside `(now - window, now]`.
#[derive(Debug, Clone)]
pub struct BehaviorWindow {
    window_ms: u64,
    now_ms: u64,
    events: VecDeque<(u64, BehaviorKind)>,
    counts: [u32; 4],
}

impl BehaviorWindow {
    pub fn new(window_ms: u64) -> Self {
        Self {
            window_ms,
            now_ms: 0,
            events: VecDeque::new(),
            counts: [0; 4],
        }
    }

    pub fn window_ms(&self) -> u64 {
        self.window_ms
    }

    /// Records a behavior and moves the window end to `t_ms`.
    pub fn update_window(&mut self, t_ms: u64, kind: BehaviorKind) {
        self.advance(t_ms);
        self.events.push_back((t_ms, kind));
        self.counts[kind.index()] += 1;
    }

    pub fn advance(&mut self, t_ms: u64) {
        self.now_ms = self.now_ms.max(t_ms);
        while let Some(&(t, k)) = self.events.front() {
            if t + self.window_ms > self.now_ms {
                break;
            }
            self.events.pop_front();
            self.counts[k.index()] -= 1;
        }
    }

    pub fn counts(&self) -> [u32; 4] {
        self.counts
    }
}

impl Default for BehaviorWindow {
    fn default() -> Self {
        Self::new(DEFAULT_WINDOW_MS)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EngagementEstimate {
    pub t_ms: u64,
    pub p_engaged: f64,
    pub counts: [u32; 4],
}

pub fn estimate(
    model: &LogisticModel,
    window: &BehaviorWindow,
    baselines: &CountBaselines,
    t_ms: u64,
) -> Result<EngagementEstimate, ModelError> {
    let counts = window.counts();
    let x = features::engagement_vector(&counts, baselines);
    Ok(EngagementEstimate {
        t_ms,
        p_engaged: model.predict_prob(ENGAGEMENT.id, &x)?,
        counts,
    })
}

/// Brute-force count over a full behavior list, for checking the window.
pub fn count_in_window(behaviors: &[(u64, BehaviorKind)], now_ms: u64, window_ms: u64) -> [u32; 4] {
    let mut c = [0; 4];
    for &(t, k) in behaviors {
        if t <= now_ms && t + window_ms > now_ms {
            c[k.index()] += 1;
        }
    }
    c
}
