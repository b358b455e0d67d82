//! Seeded random test instances shared by integration and acceptance tests.

#![allow(dead_code)]

use entroseg::cale::{self, CaleParams, Matrix};
use entroseg::corpus::{AlignmentRef, AlignmentUnit};
use entroseg::{Segmentation, Tier};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub struct CaleInstance {
    pub params: CaleParams<f64>,
    pub tokens: Vec<u32>,
    pub boundaries: Vec<usize>,
}

impl CaleInstance {
    pub fn forward(&self) -> Matrix<f64> {
        let segm = Segmentation::from_boundaries(self.boundaries.clone()).unwrap();
        cale::forward(&self.params, &self.tokens, &segm, false)
            .unwrap()
            .embeddings
            .vectors
    }

    pub fn with_tokens(&self, tokens: Vec<u32>) -> Self {
        CaleInstance {
            params: self.params.clone(),
            tokens,
            boundaries: self.boundaries.clone(),
        }
    }
}

pub fn random_boundaries(rng: &mut ChaCha8Rng, n: usize, p: f64) -> Vec<usize> {
    let mut b = vec![0];
    for i in 1..n {
        if rng.random_bool(p) {
            b.push(i);
        }
    }
    b.push(n);
    b
}

/// Random encoder instance with layer norms moved off the identity.
pub fn cale_instance(seed: u64, max_n: usize, max_d: usize, max_l: usize) -> CaleInstance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = rng.random_range(2..=10);
    let d = rng.random_range(1..=max_d);
    let l = rng.random_range(1..=max_l);
    let n = rng.random_range(1..=max_n);
    let mut params = cale::init_params::<f64>(k, d, l, seed ^ 0xabc, 1.0).unwrap();
    for layer in &mut params.layers {
        for ln in [&mut layer.ln_q, &mut layer.ln_k, &mut layer.ln_v] {
            for g in &mut ln.gamma {
                *g = rng.random_range(0.5..1.5);
            }
            for b in &mut ln.beta {
                *b = rng.random_range(-0.5..0.5);
            }
        }
    }
    let tokens = (0..n).map(|_| rng.random_range(0..k as u32)).collect();
    let boundaries = random_boundaries(&mut rng, n, 0.35);
    CaleInstance {
        params,
        tokens,
        boundaries,
    }
}

/// Contiguous units with 10 ms edges and an occasional gap.
fn random_tier(rng: &mut ChaCha8Rng, tier: Tier, count: usize) -> Vec<AlignmentUnit> {
    let mut t = 0.0;
    (0..count)
        .map(|i| {
            if rng.random_bool(0.2) {
                t += rng.random_range(1..5) as f64 * 0.02;
            }
            let start = t;
            t += rng.random_range(1..15) as f64 * 0.01;
            AlignmentUnit {
                tier,
                label: format!("u{i}"),
                start_s: start,
                end_s: t,
            }
        })
        .collect()
}

/// A segmentation at 50 Hz and a two-tier reference alignment.
pub fn alignment_instance(seed: u64) -> (Segmentation, AlignmentRef) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (words, phones) = (rng.random_range(1..8), rng.random_range(1..25));
    let mut units = random_tier(&mut rng, Tier::Word, words);
    units.extend(random_tier(&mut rng, Tier::Phoneme, phones));
    let n = rng.random_range(2..120);
    let b = random_boundaries(&mut rng, n, 0.3);
    (
        Segmentation::from_boundaries(b).unwrap(),
        AlignmentRef::from_units(units).unwrap(),
    )
}
