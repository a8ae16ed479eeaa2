use chrono::Utc;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use phishbowl::email_model::Label;
use phishbowl::vector_bowl::{PhishBowl, RecordId, Source};

const DIM: usize = 256;
const K: usize = 12;

/// Full scan sorted by distance, then insertion order.
fn brute_force(vectors: &[Vec<f64>], query: &[f64], k: usize) -> Vec<(RecordId, f64)> {
    let mut all: Vec<(usize, f64)> = vectors
        .iter()
        .enumerate()
        .map(|(i, v)| (i, v.iter().zip(query).map(|(a, b)| (a - b).powi(2)).sum()))
        .collect();
    all.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then(a.0.cmp(&b.0)));
    all.truncate(k);
    all.into_iter().map(|(i, d)| (RecordId(i as u64), d)).collect()
}

fn random_vector(rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..DIM).map(|_| rng.random_range(-1.0..1.0)).collect()
}

#[test]
fn nearest_matches_full_scan() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for store in 0..100 {
        let n = rng.random_range(1..=1000);
        let bowl = PhishBowl::in_memory(DIM);
        let mut vectors: Vec<Vec<f64>> = Vec::with_capacity(n);
        for i in 0..n {
            // occasional exact duplicates exercise tie-breaking
            let v = if i > 0 && rng.random_bool(0.05) {
                vectors[rng.random_range(0..i)].clone()
            } else {
                random_vector(&mut rng)
            };
            let label = if rng.random_bool(0.5) { Label::Phishing } else { Label::Benign };
            bowl.insert(format!("r{i}"), label, Source::Preloaded, v.clone(), Utc::now())
                .unwrap();
            vectors.push(v);
        }
        for _ in 0..3 {
            let query = if rng.random_bool(0.3) {
                vectors[rng.random_range(0..n)].clone()
            } else {
                random_vector(&mut rng)
            };
            let got: Vec<(RecordId, f64)> = bowl
                .nearest(&query, K)
                .unwrap()
                .into_iter()
                .map(|nb| (nb.id, nb.squared_distance))
                .collect();
            assert_eq!(got, brute_force(&vectors, &query, K), "store {store} (n = {n})");
        }
    }
}
