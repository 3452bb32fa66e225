//! Fixtures shared by the criterion benches.

use consensus_rank::{generate_scene, EmbeddingMatrix, SynthConfig};

/// A planted scene of `n` unit rows in `d` dimensions.
pub fn planted_matrix(n: usize, d: usize, seed: u64) -> EmbeddingMatrix {
    let cfg = SynthConfig {
        captions_per_scene: n,
        dim: d,
        seed,
        ..SynthConfig::default()
    };
    generate_scene(&cfg).expect("valid bench config").matrix
}
