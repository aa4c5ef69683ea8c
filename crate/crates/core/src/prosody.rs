//! Prosody track with running speaker statistics and windowed frame features.
//!
//! F0 is handled in the log domain and z-normalized against the speaker's
//! running moments, so the same feature values mean the same thing for a low
//! and a high voice. Power is z-normalized the same way.

use thiserror::Error;

use crate::timeline::SessionTimeline;

/// Decision-frame period. Five frames span the 500 ms backchannel horizon.
pub const FRAME_PERIOD_MS: u64 = 100;

pub const SHORT_WINDOW_MS: u64 = 200;
pub const LONG_WINDOW_MS: u64 = 500;

pub const PROSODY_SCHEMA_ID: &str = "prosody/v1";

/// Names of the prosodic feature vector entries, in order.
pub const PROSODY_FEATURES: [&str; 11] = [
    "f0_mean_200",
    "f0_slope_200",
    "f0_mean_500",
    "f0_slope_500",
    "power_mean_200",
    "power_slope_200",
    "power_mean_500",
    "power_slope_500",
    "voiced_ratio_500",
    "time_in_ipu_s",
    "time_since_vad_off_s",
];

const MAX_TIME_IN_IPU_S: f64 = 10.0;
const MAX_SILENCE_S: f64 = 5.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProsodyError {
    #[error("prosody frame at {t_ms} ms does not follow previous frame at {last_ms} ms")]
    NonMonotoneTimestamp { t_ms: u64, last_ms: u64 },
    #[error("no prosody frames received yet")]
    EmptyTrack,
    #[error("query at {t_ms} ms is beyond the track end {last_ms} ms")]
    QueryBeyondTrack { t_ms: u64, last_ms: u64 },
}

/// Welford running mean and variance.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RunningMoments {
    n: u64,
    mean: f64,
    m2: f64,
}

impl RunningMoments {
    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let delta = x - self.mean;
        self.mean += delta / self.n as f64;
        self.m2 += delta * (x - self.mean);
    }

    pub fn count(&self) -> u64 {
        self.n
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Population variance; zero with fewer than two samples.
    pub fn variance(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            self.m2 / self.n as f64
        }
    }

    fn z(&self, x: f64) -> f64 {
        let var = self.variance();
        let sd = if var > 1e-12 { var.sqrt() } else { 1.0 };
        (x - self.mean) / sd
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProsodyFrame {
    pub t_ms: u64,
    pub f0_hz: f64,
    pub power_db: f64,
}

impl ProsodyFrame {
    pub fn voiced(&self) -> bool {
        self.f0_hz > 0.0
    }
}

#[derive(Debug, Clone, Default)]
pub struct ProsodyTrack {
    frames: Vec<ProsodyFrame>,
    log_f0: RunningMoments,
    power: RunningMoments,
}

impl ProsodyTrack {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn frames(&self) -> &[ProsodyFrame] {
        &self.frames
    }

    pub fn log_f0_stats(&self) -> &RunningMoments {
        &self.log_f0
    }

    pub fn power_stats(&self) -> &RunningMoments {
        &self.power
    }

    pub fn last_t_ms(&self) -> Option<u64> {
        self.frames.last().map(|f| f.t_ms)
    }

    pub fn update(&mut self, t_ms: u64, f0_hz: f64, power_db: f64) -> Result<(), ProsodyError> {
        if let Some(last_ms) = self.last_t_ms() {
            if t_ms <= last_ms {
                return Err(ProsodyError::NonMonotoneTimestamp { t_ms, last_ms });
            }
        }
        if f0_hz > 0.0 {
            self.log_f0.push(f0_hz.ln());
        }
        self.power.push(power_db);
        self.frames.push(ProsodyFrame { t_ms, f0_hz, power_db });
        Ok(())
    }

    /// Frames with `t - window < frame.t <= t`.
    pub fn window(&self, t_ms: u64, window_ms: u64) -> &[ProsodyFrame] {
        let start = match t_ms.checked_sub(window_ms) {
            Some(lo) => self.frames.partition_point(|f| f.t_ms <= lo),
            None => 0,
        };
        let end = self.frames.partition_point(|f| f.t_ms <= t_ms);
        &self.frames[start.min(end)..end]
    }
}

/// Mean z-scored power over frames in `[start_ms, end_ms]`; zero if none.
pub fn span_power_mean(track: &ProsodyTrack, start_ms: u64, end_ms: u64) -> f64 {
    let frames = track.window(end_ms, end_ms - start_ms.min(end_ms) + 1);
    mean(frames.iter().map(|f| track.power.z(f.power_db)))
}

/// Feature vector for one decision frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameFeatures {
    pub t_ms: u64,
    pub vector: Vec<f64>,
    pub schema_id: &'static str,
}

/// Least-squares slope of `y` against `x`; zero with fewer than two points
/// or no spread in `x`.
pub fn ls_slope(points: &[(f64, f64)]) -> f64 {
    if points.len() < 2 {
        return 0.0;
    }
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx <= 0.0 {
        return 0.0;
    }
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    sxy / sxx
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// (mean, slope per second) of z-scored log-F0 over voiced frames.
fn f0_stats(track: &ProsodyTrack, frames: &[ProsodyFrame], t_ms: u64) -> (f64, f64) {
    let pts: Vec<(f64, f64)> = frames
        .iter()
        .filter(|f| f.voiced())
        .map(|f| ((f.t_ms as f64 - t_ms as f64) / 1000.0, track.log_f0.z(f.f0_hz.ln())))
        .collect();
    (mean(pts.iter().map(|p| p.1)), ls_slope(&pts))
}

fn power_stats(track: &ProsodyTrack, frames: &[ProsodyFrame], t_ms: u64) -> (f64, f64) {
    let pts: Vec<(f64, f64)> = frames
        .iter()
        .map(|f| ((f.t_ms as f64 - t_ms as f64) / 1000.0, track.power.z(f.power_db)))
        .collect();
    (mean(pts.iter().map(|p| p.1)), ls_slope(&pts))
}

/// Prosodic features at `t_ms`, combining the track with the IPU state of
/// the timeline.
pub fn features_at(track: &ProsodyTrack, timeline: &SessionTimeline, t_ms: u64) -> Result<FrameFeatures, ProsodyError> {
    let last_ms = track.last_t_ms().ok_or(ProsodyError::EmptyTrack)?;
    if t_ms > last_ms + FRAME_PERIOD_MS {
        return Err(ProsodyError::QueryBeyondTrack { t_ms, last_ms });
    }
    Ok(features_unchecked(track, timeline, t_ms))
}

/// Same as [`features_at`] without the freshness precondition. An empty
/// track yields zero prosody statistics.
pub fn features_unchecked(track: &ProsodyTrack, timeline: &SessionTimeline, t_ms: u64) -> FrameFeatures {
    let short = track.window(t_ms, SHORT_WINDOW_MS);
    let long = track.window(t_ms, LONG_WINDOW_MS);
    let (f0_m_s, f0_s_s) = f0_stats(track, short, t_ms);
    let (f0_m_l, f0_s_l) = f0_stats(track, long, t_ms);
    let (p_m_s, p_s_s) = power_stats(track, short, t_ms);
    let (p_m_l, p_s_l) = power_stats(track, long, t_ms);
    let voiced_ratio = if long.is_empty() {
        0.0
    } else {
        long.iter().filter(|f| f.voiced()).count() as f64 / long.len() as f64
    };

    let time_in_ipu_ms = timeline
        .current_ipu()
        .map_or(0, |u| t_ms.min(u.end_ms).saturating_sub(u.start_ms));
    let silence_ms = timeline.current_silence_ms(t_ms);

    FrameFeatures {
        t_ms,
        vector: vec![
            f0_m_s,
            f0_s_s,
            f0_m_l,
            f0_s_l,
            p_m_s,
            p_s_s,
            p_m_l,
            p_s_l,
            voiced_ratio,
            (time_in_ipu_ms as f64 / 1000.0).min(MAX_TIME_IN_IPU_S),
            (silence_ms as f64 / 1000.0).min(MAX_SILENCE_S),
        ],
        schema_id: PROSODY_SCHEMA_ID,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn track_from(frames: &[(u64, f64, f64)]) -> ProsodyTrack {
        let mut tr = ProsodyTrack::new();
        for &(t, f0, p) in frames {
            tr.update(t, f0, p).unwrap();
        }
        tr
    }

    #[test]
    fn single_sample_mean() {
        let tr = track_from(&[(0, 120.0, -20.0)]);
        assert_eq!(tr.log_f0_stats().mean(), 120f64.ln());
    }

    #[test]
    fn two_sample_mean() {
        let tr = track_from(&[(0, 100.0, -20.0), (10, 200.0, -20.0)]);
        let expect = (100f64.ln() + 200f64.ln()) / 2.0;
        assert!((tr.log_f0_stats().mean() - expect).abs() < 1e-15);
    }

    #[test]
    fn unvoiced_updates_power_only() {
        let mut tr = track_from(&[(0, 120.0, -20.0)]);
        tr.update(10, 0.0, -40.0).unwrap();
        assert_eq!(tr.log_f0_stats().count(), 1);
        assert_eq!(tr.power_stats().count(), 2);
        assert_eq!(tr.power_stats().mean(), -30.0);
    }

    #[test]
    fn non_monotone_rejected() {
        let mut tr = track_from(&[(100, 120.0, -20.0)]);
        assert_eq!(
            tr.update(100, 120.0, -20.0),
            Err(ProsodyError::NonMonotoneTimestamp {
                t_ms: 100,
                last_ms: 100
            })
        );
    }

    #[test]
    fn empty_track_errors() {
        let tr = ProsodyTrack::new();
        let tl = SessionTimeline::default();
        assert_eq!(features_at(&tr, &tl, 0), Err(ProsodyError::EmptyTrack));
    }

    #[test]
    fn constant_f0_has_zero_slopes() {
        let frames: Vec<_> = (0..100).map(|i| (i * 10, 120.0, -20.0)).collect();
        let tr = track_from(&frames);
        let tl = SessionTimeline::default();
        for q in [300, 555, 990] {
            let f = features_at(&tr, &tl, q).unwrap();
            assert_eq!(f.vector[1], 0.0);
            assert_eq!(f.vector[3], 0.0);
            assert_eq!(f.vector.len(), PROSODY_FEATURES.len());
        }
    }

    #[test]
    fn unvoiced_window_zeroes_f0() {
        let mut frames: Vec<_> = (0..50).map(|i| (i * 10, 150.0, -20.0)).collect();
        frames.extend((50..150).map(|i| (i * 10, 0.0, -45.0)));
        let tr = track_from(&frames);
        let tl = SessionTimeline::default();
        let f = features_at(&tr, &tl, 1490).unwrap();
        assert_eq!(f.vector[0], 0.0);
        assert_eq!(f.vector[1], 0.0);
        assert_eq!(f.vector[2], 0.0);
        assert_eq!(f.vector[3], 0.0);
        assert_eq!(f.vector[8], 0.0);
    }

    #[test]
    fn window_bounds_are_half_open() {
        let frames: Vec<_> = (0..10).map(|i| (i * 100, 100.0, 0.0)).collect();
        let tr = track_from(&frames);
        let w = tr.window(500, 200);
        let ts: Vec<_> = w.iter().map(|f| f.t_ms).collect();
        assert_eq!(ts, vec![400, 500]);
    }
}
