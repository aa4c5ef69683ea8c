#![allow(dead_code)]

use std::sync::{Arc, OnceLock};

use reflex_core::backchannel::{BackchannelPolicy, FormInventory};
use reflex_core::features::CountBaselines;
use reflex_core::harness::dataset::{train_forms, train_target, Target};
use reflex_core::harness::synth::{generate_synthetic, SynthSpec};
use reflex_core::par::ExecMode;
use reflex_core::statmodel::TrainConfig;
use reflex_core::{DialogueEvent, EngineAssets, Task};

pub fn sessions(seed: u64, n: usize, session_ms: u64) -> Vec<Vec<DialogueEvent>> {
    let spec = SynthSpec {
        session_ms,
        ..SynthSpec::default()
    };
    generate_synthetic(&spec, seed, n, ExecMode::available())
        .into_iter()
        .map(|s| s.events)
        .collect()
}

/// Bundled resources plus models trained on a small synthetic corpus.
pub fn trained_assets(task: Task) -> EngineAssets {
    static TRAIN: OnceLock<Vec<Vec<DialogueEvent>>> = OnceLock::new();
    let train = TRAIN.get_or_init(|| sessions(1, 30, 90_000));
    let cfg = TrainConfig::default();
    let base = CountBaselines::default();
    let mode = ExecMode::available();
    let fit = |t| train_target(t, train, &base, &cfg, mode).unwrap().0;
    let inventory = FormInventory::default();
    let forms = train_forms(train, &inventory, &cfg, mode)
        .unwrap()
        .into_iter()
        .map(|(label, m, _)| (label, m))
        .collect();
    let mut assets = EngineAssets::defaults(task);
    let th = &assets.config.thresholds;
    assets.backchannel = Some(
        BackchannelPolicy::new(
            fit(Target::BackchannelTiming),
            forms,
            inventory,
            th.backchannel,
            th.refractory_ms,
        )
        .unwrap(),
    );
    assets.trp = fit(Target::Trp);
    assets.take = fit(Target::Take);
    assets.engagement = Some(fit(Target::Engagement));
    assets
}

pub fn shared(task: Task) -> Arc<EngineAssets> {
    Arc::new(trained_assets(task))
}
