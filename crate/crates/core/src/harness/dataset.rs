//! Training sets built from annotated corpora, using the same feature code
//! and frame schedule as the live engine.

use serde::Serialize;

use crate::backchannel::{self, FormInventory, HORIZON_MS};
use crate::engagement::{BehaviorWindow, DEFAULT_WINDOW_MS, ESTIMATE_PERIOD_MS};
use crate::features::{self, CountBaselines, Schema, BC_FORM, BC_TIMING, ENGAGEMENT, TAKE, TRP};
use crate::par::{self, ExecMode};
use crate::prosody::{self, ProsodyTrack, FRAME_PERIOD_MS};
use crate::statmodel::{self, LabeledDataset, LogisticModel, ModelError, TrainConfig};
use crate::timeline::{DialogueEvent, Payload, SessionTimeline};

/// Future window over which speech activity labels engagement.
pub const ENGAGEMENT_HORIZON_MS: u64 = 30_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Target {
    BackchannelTiming,
    Trp,
    Take,
    Engagement,
}

impl Target {
    pub fn schema(self) -> Schema {
        match self {
            Target::BackchannelTiming => BC_TIMING,
            Target::Trp => TRP,
            Target::Take => TAKE,
            Target::Engagement => ENGAGEMENT,
        }
    }
}

type Rows = Vec<(Vec<f64>, bool)>;

/// Walks a session on the engine's schedule: events at t, then the frame
/// at t. `on_event` runs after each event is ingested; `on_frame` runs at
/// every frame once prosody has started.
fn walk(
    events: &[DialogueEvent],
    mut on_event: impl FnMut(&SessionTimeline, &ProsodyTrack, &DialogueEvent),
    mut on_frame: impl FnMut(&SessionTimeline, &ProsodyTrack, u64),
) {
    let mut tl = SessionTimeline::default();
    let mut track = ProsodyTrack::new();
    let mut next_frame = FRAME_PERIOD_MS;
    let end = events.last().map_or(0, |e| e.t_ms);
    for e in events {
        while next_frame < e.t_ms {
            let _ = tl.advance_to(next_frame);
            if track.last_t_ms().is_some() {
                on_frame(&tl, &track, next_frame);
            }
            next_frame += FRAME_PERIOD_MS;
        }
        if tl.ingest_event(e.clone()).is_err() {
            continue;
        }
        if let Payload::Prosody { f0_hz, power_db } = e.payload {
            let _ = track.update(e.t_ms, f0_hz, power_db);
        }
        on_event(&tl, &track, e);
    }
    while next_frame <= end {
        let _ = tl.advance_to(next_frame);
        if track.last_t_ms().is_some() {
            on_frame(&tl, &track, next_frame);
        }
        next_frame += FRAME_PERIOD_MS;
    }
}

/// One row per decision frame: does a gold backchannel start within the
/// horizon?
pub fn backchannel_timing_rows(events: &[DialogueEvent]) -> Rows {
    let gold: Vec<u64> = events
        .iter()
        .filter(|e| matches!(e.payload, Payload::GoldBackchannel { .. }))
        .map(|e| e.t_ms)
        .collect();
    let mut rows = Vec::new();
    walk(
        events,
        |_, _, _| {},
        |tl, track, t| {
            let f = prosody::features_unchecked(track, tl, t);
            rows.push((
                features::bc_timing_vector(&f),
                backchannel::timing_label(t, &gold, HORIZON_MS),
            ));
        },
    );
    rows
}

/// Form-model rows: for each gold backchannel, the features of the last
/// frame before it and the gold form label.
pub fn backchannel_form_rows(events: &[DialogueEvent], inventory: &FormInventory) -> Vec<(Vec<f64>, String)> {
    let mut gold: Vec<(u64, String)> = Vec::new();
    for e in events {
        if let Payload::GoldBackchannel { form } = &e.payload {
            let label = inventory
                .get(form)
                .or_else(|| inventory.forms().iter().find(|f| f.text == *form))
                .map(|f| f.label.clone());
            if let Some(l) = label {
                gold.push((e.t_ms, l));
            }
        }
    }
    let mut rows = Vec::new();
    let mut gi = 0;
    walk(
        events,
        |_, _, _| {},
        |tl, track, t| {
            // The frame that would trigger for gold g is the last one < g.
            while gi < gold.len() && gold[gi].0 <= t {
                gi += 1;
            }
            if gi < gold.len() && gold[gi].0 <= t + FRAME_PERIOD_MS {
                let f = prosody::features_unchecked(track, tl, t);
                let x = match tl.ipus().last() {
                    Some(u) => {
                        features::bc_form_vector(&f, &u.tokens, prosody::span_power_mean(track, u.start_ms, u.end_ms))
                    }
                    None => features::bc_form_vector(&f, &[], 0.0),
                };
                rows.push((x, gold[gi].1.clone()));
                gi += 1;
            }
        },
    );
    rows
}

/// TRP and take rows at every user VadOff that carries a gold turn label.
fn turn_rows(events: &[DialogueEvent], take: bool) -> Rows {
    let mut rows = Vec::new();
    let mut pending: Option<Vec<f64>> = None;
    let mut pending_take: Option<Vec<f64>> = None;
    walk(
        events,
        |tl, track, e| match &e.payload {
            Payload::VadOff => {
                if let Some(ipu) = tl.ipus().last() {
                    let f = prosody::features_unchecked(track, tl, e.t_ms);
                    pending = Some(features::prosody_ling_vector(&f, &ipu.tokens));
                    pending_take = Some(features::take_vector(&f, ipu));
                }
            }
            Payload::GoldTurn { trp, taken } => {
                if take {
                    if let (true, Some(x)) = (*trp, pending_take.take()) {
                        rows.push((x, *taken));
                    }
                } else if let Some(x) = pending.take() {
                    rows.push((x, *trp));
                }
            }
            _ => {}
        },
        |_, _, _| {},
    );
    rows
}

pub fn trp_rows(events: &[DialogueEvent]) -> Rows {
    turn_rows(events, false)
}

pub fn take_rows(events: &[DialogueEvent]) -> Rows {
    turn_rows(events, true)
}

/// Engagement rows once per second after the behavior window has filled.
/// The label is whether the user speaks at least half of the next 30 s.
pub fn engagement_rows(events: &[DialogueEvent], baselines: &CountBaselines) -> Rows {
    let end = events.last().map_or(0, |e| e.t_ms);
    let mut speech: Vec<(u64, u64)> = Vec::new();
    let mut on: Option<u64> = None;
    for e in events {
        match e.payload {
            Payload::VadOn if on.is_none() => on = Some(e.t_ms),
            Payload::VadOff => {
                if let Some(s) = on.take() {
                    speech.push((s, e.t_ms));
                }
            }
            _ => {}
        }
    }
    let speech_in = |a: u64, b: u64| -> u64 { speech.iter().map(|&(s, e)| e.min(b).saturating_sub(s.max(a))).sum() };
    let mut window = BehaviorWindow::new(DEFAULT_WINDOW_MS);
    let mut rows = Vec::new();
    let mut i = 0;
    let mut t = DEFAULT_WINDOW_MS.div_ceil(ESTIMATE_PERIOD_MS) * ESTIMATE_PERIOD_MS;
    while t + ENGAGEMENT_HORIZON_MS <= end {
        while i < events.len() && events[i].t_ms <= t {
            if let Payload::Behavior(k) = events[i].payload {
                window.update_window(events[i].t_ms, k);
            }
            i += 1;
        }
        window.advance(t);
        let x = features::engagement_vector(&window.counts(), baselines);
        let active = speech_in(t, t + ENGAGEMENT_HORIZON_MS);
        rows.push((x, active * 2 >= ENGAGEMENT_HORIZON_MS));
        t += ESTIMATE_PERIOD_MS;
    }
    rows
}

pub fn rows_for(target: Target, events: &[DialogueEvent], baselines: &CountBaselines) -> Rows {
    match target {
        Target::BackchannelTiming => backchannel_timing_rows(events),
        Target::Trp => trp_rows(events),
        Target::Take => take_rows(events),
        Target::Engagement => engagement_rows(events, baselines),
    }
}

pub fn build_dataset(
    target: Target,
    sessions: &[Vec<DialogueEvent>],
    baselines: &CountBaselines,
    mode: ExecMode,
) -> Result<LabeledDataset, ModelError> {
    let per_session = par::map(mode, sessions, |evs| rows_for(target, evs, baselines));
    let mut ds = LabeledDataset::new(&target.schema());
    for rows in per_session {
        for (x, y) in rows {
            ds.push(x, y)?;
        }
    }
    Ok(ds)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainingReport {
    pub schema_id: String,
    pub n_train: usize,
    pub n_heldout: usize,
    pub positives_train: usize,
    pub loss_curve: Vec<f64>,
    pub train_auc: f64,
    pub heldout_auc: f64,
}

/// Held-out split by session: every fifth session (index 4, 9, ...) is
/// held out when there are at least five sessions, otherwise the last one.
pub fn split_sessions(n: usize) -> (Vec<usize>, Vec<usize>) {
    if n < 2 {
        return ((0..n).collect(), Vec::new());
    }
    let held: Vec<usize> = if n >= 5 {
        (0..n).filter(|i| i % 5 == 4).collect()
    } else {
        vec![n - 1]
    };
    let train = (0..n).filter(|i| !held.contains(i)).collect();
    (train, held)
}

fn scores(model: &LogisticModel, ds: &LabeledDataset) -> Vec<(f64, bool)> {
    ds.rows
        .iter()
        .map(|(x, y)| (statmodel::sigmoid(model.logit(x)), *y))
        .collect()
}

/// Trains on the training split and reports AUC on both splits.
pub fn train_target(
    target: Target,
    sessions: &[Vec<DialogueEvent>],
    baselines: &CountBaselines,
    cfg: &TrainConfig,
    mode: ExecMode,
) -> Result<(LogisticModel, TrainingReport), ModelError> {
    let (tr, ho) = split_sessions(sessions.len());
    let pick = |idx: &[usize]| idx.iter().map(|&i| sessions[i].clone()).collect::<Vec<_>>();
    let train_ds = build_dataset(target, &pick(&tr), baselines, mode)?;
    let held_ds = build_dataset(target, &pick(&ho), baselines, mode)?;
    train_on(&train_ds, &held_ds, cfg)
}

pub fn train_on(
    train_ds: &LabeledDataset,
    held_ds: &LabeledDataset,
    cfg: &TrainConfig,
) -> Result<(LogisticModel, TrainingReport), ModelError> {
    let (model, rep) = statmodel::train_with_report(train_ds, cfg)?;
    let report = TrainingReport {
        schema_id: model.schema_id.clone(),
        n_train: train_ds.len(),
        n_heldout: held_ds.len(),
        positives_train: train_ds.positives(),
        loss_curve: rep.loss_curve,
        train_auc: statmodel::auc(&scores(&model, train_ds)),
        heldout_auc: if held_ds.is_empty() {
            f64::NAN
        } else {
            statmodel::auc(&scores(&model, held_ds))
        },
    };
    Ok((model, report))
}

/// One-vs-rest form models. Returns `(label, model, report)` for every
/// inventory form that has at least one positive example.
pub fn train_forms(
    sessions: &[Vec<DialogueEvent>],
    inventory: &FormInventory,
    cfg: &TrainConfig,
    mode: ExecMode,
) -> Result<Vec<(String, LogisticModel, TrainingReport)>, ModelError> {
    let (tr, ho) = split_sessions(sessions.len());
    let rows = |idx: &[usize]| -> Vec<(Vec<f64>, String)> {
        par::map(mode, idx, |&i| backchannel_form_rows(&sessions[i], inventory))
            .into_iter()
            .flatten()
            .collect()
    };
    let (train_rows, held_rows) = (rows(&tr), rows(&ho));
    let mut out = Vec::new();
    for form in inventory.forms() {
        if !train_rows.iter().any(|(_, l)| *l == form.label) {
            continue;
        }
        let mut train_ds = LabeledDataset::new(&BC_FORM);
        for (x, l) in &train_rows {
            train_ds.push(x.clone(), *l == form.label)?;
        }
        let mut held_ds = LabeledDataset::new(&BC_FORM);
        for (x, l) in &held_rows {
            held_ds.push(x.clone(), *l == form.label)?;
        }
        let (m, r) = train_on(&train_ds, &held_ds, cfg)?;
        out.push((form.label.clone(), m, r));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::synth::{generate_session, SynthSpec};

    #[test]
    fn split_is_disjoint() {
        let (tr, ho) = split_sessions(10);
        assert_eq!(ho, vec![4, 9]);
        assert_eq!(tr.len(), 8);
        assert_eq!(split_sessions(1), (vec![0], vec![]));
        assert_eq!(split_sessions(3).1, vec![2]);
    }

    #[test]
    fn rows_have_schema_width() {
        let s = generate_session(&SynthSpec::default(), 3, 0);
        let b = CountBaselines::default();
        for target in [Target::BackchannelTiming, Target::Trp, Target::Take, Target::Engagement] {
            let rows = rows_for(target, &s.events, &b);
            assert!(!rows.is_empty(), "{target:?}");
            assert!(rows.iter().all(|(x, _)| x.len() == target.schema().dim()));
        }
        let trp = trp_rows(&s.events);
        assert_eq!(trp.len(), s.stats.ipus);
        assert_eq!(trp.iter().filter(|r| r.1).count(), s.stats.trp);
        let bc_pos = backchannel_timing_rows(&s.events).iter().filter(|r| r.1).count();
        assert!(bc_pos >= 4 * s.stats.gold_bc);
    }
}
