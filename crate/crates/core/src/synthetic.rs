//! Seeded synthetic documents for benchmarks, sweeps and fuzzing.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Zipf;

pub const DEFAULT_VOCAB: usize = 5_000;
pub const DEFAULT_ZIPF_EXPONENT: f64 = 1.1;

/// `n` tokens `w<rank>` drawn from a Zipf law over `vocab` ranks, the usual
/// rank-frequency shape of natural text.
pub fn zipf_document(n: usize, vocab: usize, exponent: f64, seed: u64) -> Vec<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let zipf = Zipf::new(vocab.max(1) as f64, exponent).expect("valid zipf parameters");
    (0..n)
        .map(|_| format!("w{}", rng.sample(zipf) as u64))
        .collect()
}

/// Document with the default vocabulary and exponent.
pub fn document(n: usize, seed: u64) -> Vec<String> {
    zipf_document(n, DEFAULT_VOCAB, DEFAULT_ZIPF_EXPONENT, seed)
}

/// `n` distinct tokens in random order.
pub fn distinct_document(n: usize, seed: u64) -> Vec<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let salt: u64 = rng.random();
    (0..n).map(|i| format!("u{salt:x}-{i}")).collect()
}
