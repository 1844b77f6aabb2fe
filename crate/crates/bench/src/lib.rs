//! Shared fixtures for the criterion benches.

use hrnn_core::dataset::Dataset;
use hrnn_core::hrnn::{EventVectors, FeatureVector};
use hrnn_core::pipeline::SynthCorpus;
use hrnn_core::query_log::SplitConfig;
use hrnn_core::synthlog::{GenConfig, WorldConfig};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// A prepared synthetic dataset with `users` users.
pub fn synthetic_dataset(users: usize, seed: u64) -> Dataset {
    let gen = GenConfig {
        n_users: users,
        ..Default::default()
    };
    SynthCorpus::generate(WorldConfig::default(), &gen, seed)
        .expect("synthetic log ingests")
        .dataset(&SplitConfig::default())
        .expect("synthetic vocabulary is non-empty")
}

/// Inputs for one query: history sessions, in-session prefix, query vector,
/// candidate documents and their features.
pub struct QueryFixture {
    pub history: Vec<Vec<EventVectors>>,
    pub prior: Vec<EventVectors>,
    pub query: Vec<f64>,
    pub docs: Vec<Vec<f64>>,
    pub features: Vec<FeatureVector>,
}

fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

pub fn query_fixture(d_e: usize, sessions: usize, candidates: usize, seed: u64) -> QueryFixture {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let event = |rng: &mut ChaCha8Rng| EventVectors {
        query: random_vec(rng, d_e),
        sat_doc: random_vec(rng, d_e),
    };
    let history = (0..sessions).map(|_| (0..2).map(|_| event(&mut rng)).collect()).collect();
    let prior = (0..2).map(|_| event(&mut rng)).collect();
    QueryFixture {
        history,
        prior,
        query: random_vec(&mut rng, d_e),
        docs: (0..candidates).map(|_| random_vec(&mut rng, d_e)).collect(),
        features: (0..candidates as u32).map(|i| FeatureVector::new(i + 1, i % 3, i % 2, 0.7)).collect(),
    }
}

/// Random rankings with relevance and click labels.
pub fn random_rankings(n: usize, len: usize, seed: u64) -> Vec<(Vec<usize>, Vec<bool>, Vec<bool>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let mut r: Vec<usize> = (0..len).collect();
            r.shuffle(&mut rng);
            let rel = (0..len).map(|_| rng.random_bool(0.3)).collect();
            let clicked = (0..len).map(|_| rng.random_bool(0.2)).collect();
            (r, rel, clicked)
        })
        .collect()
}
