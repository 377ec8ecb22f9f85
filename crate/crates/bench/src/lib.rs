//! Fixtures shared by the benchmarks in `benches/`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use ris_isac::config::ScenarioFile;
use ris_isac::{ChannelSet, ScenarioConfig};

/// Desk-scale scenario with the given surface size.
pub fn scenario(n: usize, seed: u64) -> (ScenarioConfig, ChannelSet) {
    let config = ScenarioFile { n, seed, n_rand: 200, ..ScenarioFile::default() }
        .into_config()
        .expect("valid fixture");
    let ch = ris_isac::channels::assemble_scenario(&config, &mut ChaCha8Rng::seed_from_u64(seed)).expect("channels");
    (config, ch)
}
