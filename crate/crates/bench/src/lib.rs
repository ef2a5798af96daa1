//! Benchmark fixtures; the benchmarks live in `benches/`.

use clozemem::corpus::{generate_synthetic, SyntheticConfig, SyntheticCorpus};

/// Small default-shaped synthetic corpus for timing.
pub fn corpus(train_size: usize) -> SyntheticCorpus {
    generate_synthetic(&SyntheticConfig {
        train_size,
        dev_size: 50,
        test_size: 50,
        ..SyntheticConfig::default()
    })
    .expect("valid synthetic config")
}
