//! Shared fixtures for the criterion benches.

use rcsynth_core::emulator::{builtin_model, coerce_to_grid, BuiltinModel, TapModel};
use rcsynth_core::pipeline::{measure, LoopConfig, Measurement};
use rcsynth_core::sounder::Sounder;

/// Default loop with `n` realizations.
pub fn loop_config(n: usize) -> LoopConfig {
    LoopConfig { n_realizations: n, master_seed: 1, ..LoopConfig::default() }
}

/// Pedestrian B on the 10 ns chip grid.
pub fn ped_b() -> TapModel {
    let m = builtin_model(BuiltinModel::PedestrianB);
    let limit = m.realizable_limit;
    coerce_to_grid(&m, 10e-9, limit).expect("built-in model coerces").model
}

pub fn measured(cfg: &LoopConfig) -> (Sounder, Measurement) {
    let sounder = Sounder::new(&cfg.sounder).expect("default sounder");
    let m = measure(cfg, &sounder, 0).expect("measurement");
    (sounder, m)
}
