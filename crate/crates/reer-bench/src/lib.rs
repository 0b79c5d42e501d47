//! Shared fixtures for the benchmarks.

use reer_core::{generate_batch, Batch, ExpectileLevel, Scenario, SimCase, SimConfig};

/// The stream the benchmarks replay: 100 batches of 1,000 rows, three
/// coefficients, homoscedastic normal errors, fixed seed.
pub fn stream_batches() -> Vec<Batch> {
    let cfg = SimConfig::new(
        SimCase::HomoNormal,
        Scenario::S2,
        level(),
        1_000,
        100,
        1,
        424_242,
    )
    .unwrap();
    (0..cfg.num_batches).map(|k| generate_batch(&cfg, k, 0)).collect()
}

pub fn level() -> ExpectileLevel {
    ExpectileLevel::new(0.25).unwrap()
}
