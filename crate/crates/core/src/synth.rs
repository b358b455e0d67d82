//! Synthetic corpora with known structure: Markov token sources, run-length
//! controlled unit streams and entropy-trace fixtures.
//!
//! Every generator is a pure function of its inputs and seed. Per-sequence
//! streams derive their own seeds from the base seed so sequences can be
//! generated in any order.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Gamma, Geometric};

use crate::corpus::{EntropyScale, EntropyTrace, TokenSequence, Vocabulary};
use crate::error::{Error, Result};
use crate::lm::shannon_entropy;

const ROW_TOLERANCE: f64 = 1e-9;

fn derived_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn check_distribution(row: &[f64], what: &str) -> Result<()> {
    if row.iter().any(|&p| !(p.is_finite() && p >= 0.0)) {
        return Err(Error::invalid(format!("{what} has a negative or non-finite entry")));
    }
    let sum: f64 = row.iter().sum();
    if (sum - 1.0).abs() > ROW_TOLERANCE {
        return Err(Error::invalid(format!("{what} sums to {sum}, not 1")));
    }
    Ok(())
}

/// First-order Markov chain over `K` symbols.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkovSource {
    transition: Vec<Vec<f64>>,
    initial: Vec<f64>,
    seed: u64,
}

impl MarkovSource {
    pub fn new(transition: Vec<Vec<f64>>, initial: Vec<f64>, seed: u64) -> Result<Self> {
        let k = transition.len();
        Vocabulary::new(k)?;
        if initial.len() != k {
            return Err(Error::invalid(format!(
                "initial distribution has {} entries, need {k}",
                initial.len()
            )));
        }
        for (i, row) in transition.iter().enumerate() {
            if row.len() != k {
                return Err(Error::invalid(format!(
                    "transition row {i} has {} entries, need {k}",
                    row.len()
                )));
            }
            check_distribution(row, &format!("transition row {i}"))?;
        }
        check_distribution(&initial, "initial distribution")?;
        Ok(MarkovSource {
            transition,
            initial,
            seed,
        })
    }

    /// Chain started from its first row's distribution.
    pub fn from_rows(transition: Vec<Vec<f64>>, seed: u64) -> Result<Self> {
        let initial = transition
            .first()
            .cloned()
            .ok_or_else(|| Error::invalid("empty transition matrix"))?;
        Self::new(transition, initial, seed)
    }

    /// Random chain whose rows are Dirichlet draws with concentrations spread
    /// log-uniformly over `[alpha_min, alpha_max]`, giving a wide range of
    /// per-state entropies.
    pub fn random_dirichlet(k: usize, alpha_min: f64, alpha_max: f64, seed: u64) -> Result<Self> {
        Vocabulary::new(k)?;
        if !(alpha_min > 0.0 && alpha_max >= alpha_min && alpha_max.is_finite()) {
            return Err(Error::invalid("need 0 < alpha_min <= alpha_max"));
        }
        let mut rng = derived_rng(seed, u64::MAX);
        let mut transition = Vec::with_capacity(k);
        for _ in 0..k {
            let t: f64 = rng.random();
            let alpha = (alpha_min.ln() + t * (alpha_max.ln() - alpha_min.ln())).exp();
            // Dirichlet(alpha, ..., alpha) as normalized Gamma(alpha, 1) draws
            let gamma = Gamma::new(alpha, 1.0).map_err(|e| Error::invalid(e.to_string()))?;
            let mut row: Vec<f64> = (0..k).map(|_| gamma.sample(&mut rng).max(f64::MIN_POSITIVE)).collect();
            let s: f64 = row.iter().sum();
            row.iter_mut().for_each(|p| *p /= s);
            transition.push(row);
        }
        let initial = vec![1.0 / k as f64; k];
        Self::new(transition, initial, seed)
    }

    pub fn vocab(&self) -> Vocabulary {
        Vocabulary::new(self.transition.len()).expect("validated")
    }

    pub fn transition(&self) -> &[Vec<f64>] {
        &self.transition
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Entropy in nats of the next symbol given the current `state`.
    pub fn conditional_entropy(&self, state: usize) -> f64 {
        shannon_entropy(&self.transition[state])
    }
}

/// Generate `n_sequences` sequences totalling `n_tokens` tokens (split as
/// evenly as possible, earlier sequences taking the remainder).
pub fn gen_markov(
    source: &MarkovSource,
    n_tokens: usize,
    n_sequences: usize,
    frame_rate_hz: f64,
) -> Result<Vec<TokenSequence>> {
    if n_sequences == 0 || n_tokens < n_sequences {
        return Err(Error::invalid(format!(
            "cannot split {n_tokens} tokens into {n_sequences} non-empty sequences"
        )));
    }
    let rows = source
        .transition
        .iter()
        .map(|r| WeightedIndex::new(r).map_err(|e| Error::invalid(e.to_string())))
        .collect::<Result<Vec<_>>>()?;
    let init = WeightedIndex::new(&source.initial).map_err(|e| Error::invalid(e.to_string()))?;
    let width = n_sequences.to_string().len();
    (0..n_sequences)
        .map(|s| {
            let len = n_tokens / n_sequences + usize::from(s < n_tokens % n_sequences);
            let mut rng = derived_rng(source.seed, s as u64);
            let mut tokens = Vec::with_capacity(len);
            let mut state = init.sample(&mut rng);
            tokens.push(state as u32);
            for _ in 1..len {
                state = rows[state].sample(&mut rng);
                tokens.push(state as u32);
            }
            TokenSequence::new(format!("mk{s:0width$}"), tokens, frame_rate_hz)
        })
        .collect()
}

/// Distribution of run lengths (all supports start at 1).
#[derive(Debug, Clone, PartialEq)]
pub enum RunLength {
    Constant(usize),
    /// Geometric on `1, 2, ...` with the given mean (>= 1).
    Geometric {
        mean: f64,
    },
    /// `weights[i]` is the relative probability of a run of length `i + 1`.
    Weighted(Vec<f64>),
}

enum RunSampler {
    Constant(usize),
    Geometric(Geometric),
    Weighted(WeightedIndex<f64>),
}

impl RunSampler {
    fn new(dist: &RunLength) -> Result<Self> {
        match dist {
            RunLength::Constant(0) => Err(Error::invalid("run length must be at least 1")),
            RunLength::Constant(n) => Ok(RunSampler::Constant(*n)),
            RunLength::Geometric { mean } if !(mean.is_finite() && *mean >= 1.0) => {
                Err(Error::invalid(format!("mean run length must be >= 1, got {mean}")))
            }
            RunLength::Geometric { mean } => Geometric::new(1.0 / mean)
                .map(RunSampler::Geometric)
                .map_err(|e| Error::invalid(e.to_string())),
            RunLength::Weighted(w) => WeightedIndex::new(w)
                .map(RunSampler::Weighted)
                .map_err(|e| Error::invalid(e.to_string())),
        }
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> usize {
        match self {
            RunSampler::Constant(n) => *n,
            RunSampler::Geometric(g) => 1 + g.sample(rng) as usize,
            RunSampler::Weighted(w) => 1 + w.sample(rng),
        }
    }
}

/// A sequence of runs of repeated ids, adjacent runs always differing. The
/// last run is cut short if needed to hit exactly `n_tokens`.
pub fn gen_runlength(
    vocab: Vocabulary,
    dist: &RunLength,
    n_tokens: usize,
    seed: u64,
    frame_rate_hz: f64,
) -> Result<TokenSequence> {
    if n_tokens == 0 {
        return Err(Error::invalid("need at least one token"));
    }
    let sampler = RunSampler::new(dist)?;
    let k = vocab.size() as u32;
    let mut rng = derived_rng(seed, 0);
    let mut tokens = Vec::with_capacity(n_tokens);
    let mut prev: Option<u32> = None;
    while tokens.len() < n_tokens {
        let id = match prev {
            None => rng.random_range(0..k),
            Some(p) => {
                let r = rng.random_range(0..k - 1);
                if r >= p {
                    r + 1
                } else {
                    r
                }
            }
        };
        let run = sampler.sample(&mut rng).min(n_tokens - tokens.len());
        tokens.extend(std::iter::repeat_n(id, run));
        prev = Some(id);
    }
    TokenSequence::new(format!("rl{seed}"), tokens, frame_rate_hz)
}

/// Entropy-trace fixtures, all on the normalized scale.
#[derive(Debug, Clone, PartialEq)]
pub enum FixturePattern {
    /// The trace `[0.9, 0.2, 0.1, 0.8, 0.1, 0.3]`.
    SixValue,
    /// i.i.d. uniform values on `[0, 1)`.
    Uniform { traces: usize, len: usize },
    /// Plateaus of `step_len` positions alternating `low`, `high`, `low`, ...
    /// A relative threshold below `high - low` fires exactly at the start of
    /// each high plateau.
    Stepped {
        steps: usize,
        step_len: usize,
        low: f64,
        high: f64,
    },
}

pub fn gen_entropy_fixture(pattern: &FixturePattern, seed: u64) -> Result<Vec<EntropyTrace>> {
    let norm = EntropyScale::Normalized;
    match pattern {
        FixturePattern::SixValue => Ok(vec![EntropyTrace::new(
            "six",
            vec![0.9, 0.2, 0.1, 0.8, 0.1, 0.3],
            norm,
        )?]),
        FixturePattern::Uniform { traces, len } => {
            let width = traces.to_string().len();
            (0..*traces)
                .map(|i| {
                    let mut rng = derived_rng(seed, i as u64);
                    let values = (0..*len).map(|_| rng.random::<f64>()).collect();
                    EntropyTrace::new(format!("uni{i:0width$}"), values, norm)
                })
                .collect()
        }
        FixturePattern::Stepped {
            steps,
            step_len,
            low,
            high,
        } => {
            let values = (0..*steps)
                .flat_map(|s| std::iter::repeat_n(if s % 2 == 0 { *low } else { *high }, *step_len))
                .collect();
            Ok(vec![EntropyTrace::new("stepped", values, norm)?])
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::segmenter::{deduplicate, token_rate};

    #[test]
    fn empirical_transitions_converge() {
        let src = MarkovSource::from_rows(vec![vec![0.9, 0.1], vec![0.5, 0.5]], 1).unwrap();
        let seqs = gen_markov(&src, 100_000, 1, 50.0).unwrap();
        let t = &seqs[0].tokens;
        assert_eq!(t.len(), 100_000);
        let from0 = t.windows(2).filter(|w| w[0] == 0).count() as f64;
        let to1 = t.windows(2).filter(|w| w[0] == 0 && w[1] == 1).count() as f64;
        assert!((to1 / from0 - 0.1).abs() < 0.01, "{}", to1 / from0);
    }

    #[test]
    fn cycle_matrix_yields_the_cycle() {
        let rows = vec![vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0], vec![1.0, 0.0, 0.0]];
        let src = MarkovSource::new(rows, vec![1.0, 0.0, 0.0], 5).unwrap();
        let s = gen_markov(&src, 9, 1, 50.0).unwrap();
        assert_eq!(s[0].tokens, vec![0, 1, 2, 0, 1, 2, 0, 1, 2]);
    }

    #[test]
    fn markov_is_deterministic_and_splits_tokens() {
        let src = MarkovSource::random_dirichlet(8, 0.1, 2.0, 3).unwrap();
        let a = gen_markov(&src, 103, 4, 50.0).unwrap();
        assert_eq!(a, gen_markov(&src, 103, 4, 50.0).unwrap());
        assert_eq!(a.iter().map(|s| s.len()).collect::<Vec<_>>(), vec![26, 26, 26, 25]);
        assert!(a.iter().all(|s| s.validate(src.vocab()).is_ok()));
        assert!(MarkovSource::from_rows(vec![vec![0.5, 0.4], vec![0.5, 0.5]], 0).is_err());
    }

    #[test]
    fn constant_runs_of_two_give_25_hz() {
        let v = Vocabulary::new(10).unwrap();
        let s = gen_runlength(v, &RunLength::Constant(2), 1000, 9, 50.0).unwrap();
        assert!(s.tokens.windows(2).step_by(2).all(|w| w[0] == w[1]));
        assert_eq!(token_rate(&deduplicate(&s), 50.0), 25.0);
        let s = gen_runlength(v, &RunLength::Constant(1), 300, 9, 50.0).unwrap();
        assert_eq!(deduplicate(&s).num_groups(), 300);
    }

    #[test]
    fn geometric_runs_hit_the_mean() {
        let v = Vocabulary::new(500).unwrap();
        let s = gen_runlength(v, &RunLength::Geometric { mean: 50.0 / 26.0 }, 50_000, 4, 50.0).unwrap();
        let rate = token_rate(&deduplicate(&s), 50.0);
        assert!((rate - 26.0).abs() < 0.5, "{rate}");
    }

    #[test]
    fn fixtures() {
        let six = gen_entropy_fixture(&FixturePattern::SixValue, 0).unwrap();
        assert_eq!(six[0].values, vec![0.9, 0.2, 0.1, 0.8, 0.1, 0.3]);
        let u = gen_entropy_fixture(&FixturePattern::Uniform { traces: 3, len: 50 }, 2).unwrap();
        assert_eq!(
            u,
            gen_entropy_fixture(&FixturePattern::Uniform { traces: 3, len: 50 }, 2).unwrap()
        );
        assert!(u.iter().flat_map(|t| &t.values).all(|&x| (0.0..1.0).contains(&x)));
        let st = gen_entropy_fixture(
            &FixturePattern::Stepped {
                steps: 6,
                step_len: 4,
                low: 0.1,
                high: 0.7,
            },
            0,
        )
        .unwrap();
        assert_eq!(st[0].values.len(), 24);
    }
}
