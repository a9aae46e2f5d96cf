//! Shared fixture for the kernel benches.

use saeir::synth::{generate_synthetic, SynthConfig, SyntheticBenchmark};
use saeir::SaeParams;

pub struct Fixture {
    pub bench: SyntheticBenchmark,
    pub params: SaeParams,
}

/// Default synthetic benchmark with its planted dictionary as a k-sparse SAE.
pub fn fixture(k: usize) -> Fixture {
    let bench = generate_synthetic(&SynthConfig::default()).expect("default synth config is valid");
    let params = bench.oracle_params(k).expect("k within latent dimension");
    Fixture { bench, params }
}
