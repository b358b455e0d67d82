//! Next-token predictive models over a `K`-symbol vocabulary and the
//! per-position conditional entropy they induce.
//!
//! The count model here interpolates additive-smoothed relative frequencies
//! of every order `0..=n_max`:
//!
//! ```text
//! p(v | ctx) = sum_n  lambda_n * (c_n(ctx_n, v) + delta) / (c_n(ctx_n) + K * delta)
//! ```
//!
//! where `ctx_n` is the last `n` tokens of the prefix, left-padded with
//! [`BEGIN_MARKER`] near the start of a sequence.

use std::collections::HashMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{EntropyScale, EntropyTrace, TokenSequence, Vocabulary};
use crate::error::{Error, Result};
use crate::fsutil;

/// Context symbol standing for "before the start of the sequence".
pub const BEGIN_MARKER: u32 = u32::MAX;

pub const MODEL_FORMAT: &str = "entroseg-backoff";
pub const MODEL_FORMAT_VERSION: u32 = 1;

const LAMBDA_TOLERANCE: f64 = 1e-9;

/// Anything that yields `p(u_i | u_<i)` over the vocabulary.
pub trait PredictiveModel: Sync {
    fn vocab(&self) -> Vocabulary;

    /// Longest suffix of the context the model looks at; `None` if unbounded.
    fn context_order(&self) -> Option<usize>;

    /// Write the next-token distribution for `context` into `out` (length K).
    /// Context ids are assumed to be in range.
    fn fill_distribution(&self, context: &[u32], out: &mut [f64]);

    fn next_distribution(&self, context: &[u32]) -> Result<Vec<f64>> {
        let vocab = self.vocab();
        context.iter().try_for_each(|&t| vocab.check(t))?;
        let mut out = vec![0.0; vocab.size()];
        self.fill_distribution(context, &mut out);
        Ok(out)
    }
}

/// Every symbol equally likely regardless of context.
#[derive(Debug, Clone, Copy)]
pub struct UniformModel {
    pub vocab: Vocabulary,
}

impl PredictiveModel for UniformModel {
    fn vocab(&self) -> Vocabulary {
        self.vocab
    }

    fn context_order(&self) -> Option<usize> {
        Some(0)
    }

    fn fill_distribution(&self, _context: &[u32], out: &mut [f64]) {
        out.fill(1.0 / self.vocab.size() as f64);
    }
}

/// Shannon entropy in nats. Zero-probability entries contribute nothing.
pub fn shannon_entropy(p: &[f64]) -> f64 {
    let h: f64 = p.iter().filter(|&&x| x > 0.0).map(|&x| -x * x.ln()).sum();
    h.max(0.0)
}

/// Per-position conditional entropy of `seq` under `model`. Position 0 is
/// conditioned on the empty prefix, which the count model maps to the
/// begin-marker context.
pub fn entropy_trace<M: PredictiveModel + ?Sized>(
    model: &M,
    seq: &TokenSequence,
    scale: EntropyScale,
) -> Result<EntropyTrace> {
    let vocab = model.vocab();
    seq.validate(vocab)?;
    let norm = match scale {
        EntropyScale::NatsRaw => 1.0,
        EntropyScale::Normalized => vocab.max_entropy(),
    };
    let mut dist = vec![0.0; vocab.size()];
    let values = (0..seq.len())
        .map(|i| {
            model.fill_distribution(&seq.tokens[..i], &mut dist);
            shannon_entropy(&dist) / norm
        })
        .collect();
    Ok(EntropyTrace {
        id: seq.id.clone(),
        values,
        scale,
    })
}

/// [`entropy_trace`] over many sequences, in parallel on the current rayon
/// pool. Output order follows input order.
pub fn entropy_traces<M: PredictiveModel + ?Sized>(
    model: &M,
    seqs: &[TokenSequence],
    scale: EntropyScale,
) -> Result<Vec<EntropyTrace>> {
    seqs.par_iter().map(|s| entropy_trace(model, s, scale)).collect()
}

/// Read a trace computed elsewhere (e.g. by a neural LM) and pair it with `seq`.
pub fn load_external_trace(seq: &TokenSequence, path: impl AsRef<Path>) -> Result<EntropyTrace> {
    let path = path.as_ref();
    let mut trace = crate::corpus::read_entropy_trace(path)?;
    trace.check_pairs_with(seq).map_err(|e| e.in_file(path))?;
    if trace.id.is_empty() {
        trace.id = seq.id.clone();
    }
    Ok(trace)
}

/// Pair a set of external traces with a corpus, by position in the file.
/// Ids must agree whenever both sides carry one.
pub fn pair_external_traces(seqs: &[TokenSequence], traces: Vec<EntropyTrace>) -> Result<Vec<EntropyTrace>> {
    if seqs.len() != traces.len() {
        return Err(Error::LengthMismatch {
            expected: seqs.len(),
            found: traces.len(),
        });
    }
    seqs.iter()
        .zip(traces)
        .map(|(seq, mut trace)| {
            if !trace.id.is_empty() && !seq.id.is_empty() && trace.id != seq.id {
                return Err(Error::invalid(format!(
                    "trace id {:?} does not match sequence id {:?}",
                    trace.id, seq.id
                )));
            }
            trace.check_pairs_with(seq)?;
            if trace.id.is_empty() {
                trace.id = seq.id.clone();
            }
            Ok(trace)
        })
        .collect()
}

/// Hyperparameters of the interpolated count model.
#[derive(Debug, Clone, PartialEq)]
pub struct BackoffConfig {
    pub n_max: usize,
    pub delta: f64,
    /// One weight per order `0..=n_max`.
    pub lambdas: Vec<f64>,
}

impl BackoffConfig {
    pub fn new(n_max: usize, delta: f64, lambdas: Vec<f64>) -> Result<Self> {
        let cfg = BackoffConfig { n_max, delta, lambdas };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Uniform weights over orders `0..=n_max`.
    pub fn uniform(n_max: usize, delta: f64) -> Result<Self> {
        Self::new(n_max, delta, vec![1.0 / (n_max + 1) as f64; n_max + 1])
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.delta.is_finite() && self.delta > 0.0) {
            return Err(Error::invalid(format!(
                "smoothing constant must be positive, got {}",
                self.delta
            )));
        }
        if self.lambdas.len() != self.n_max + 1 {
            return Err(Error::invalid(format!(
                "need {} interpolation weights for n_max={}, got {}",
                self.n_max + 1,
                self.n_max,
                self.lambdas.len()
            )));
        }
        if self.lambdas.iter().any(|&l| !(l.is_finite() && l >= 0.0)) {
            return Err(Error::invalid("interpolation weights must be non-negative"));
        }
        let sum: f64 = self.lambdas.iter().sum();
        if (sum - 1.0).abs() > LAMBDA_TOLERANCE {
            return Err(Error::invalid(format!("interpolation weights sum to {sum}, not 1")));
        }
        Ok(())
    }
}

impl Default for BackoffConfig {
    fn default() -> Self {
        BackoffConfig::uniform(4, 0.1).expect("default config is valid")
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ContextCounts {
    pub total: u64,
    pub counts: HashMap<u32, u64>,
}

/// Interpolated additive-smoothed n-gram counts.
#[derive(Debug, Clone, PartialEq)]
pub struct BackoffCounts {
    vocab: Vocabulary,
    config: BackoffConfig,
    /// `tables[n]` maps an `n`-symbol context to its follower counts.
    tables: Vec<HashMap<Vec<u32>, ContextCounts>>,
}

fn fill_context(prefix: &[u32], n: usize, buf: &mut Vec<u32>) {
    buf.clear();
    let have = prefix.len().min(n);
    buf.extend(std::iter::repeat_n(BEGIN_MARKER, n - have));
    buf.extend_from_slice(&prefix[prefix.len() - have..]);
}

impl BackoffCounts {
    pub fn empty(vocab: Vocabulary, config: BackoffConfig) -> Result<Self> {
        config.validate()?;
        Ok(BackoffCounts {
            vocab,
            tables: vec![HashMap::new(); config.n_max + 1],
            config,
        })
    }

    pub fn config(&self) -> &BackoffConfig {
        &self.config
    }

    pub fn n_max(&self) -> usize {
        self.config.n_max
    }

    pub fn table(&self, order: usize) -> &HashMap<Vec<u32>, ContextCounts> {
        &self.tables[order]
    }

    /// Count of `symbol` after `context` at order `context.len()`.
    pub fn count(&self, context: &[u32], symbol: u32) -> u64 {
        self.tables
            .get(context.len())
            .and_then(|t| t.get(context))
            .and_then(|c| c.counts.get(&symbol))
            .copied()
            .unwrap_or(0)
    }

    /// Total number of tokens counted (the unigram total).
    pub fn token_count(&self) -> u64 {
        self.tables[0].get(&[][..]).map_or(0, |c| c.total)
    }

    pub fn add_sequence(&mut self, seq: &[u32]) -> Result<()> {
        seq.iter().try_for_each(|&t| self.vocab.check(t))?;
        let mut buf = Vec::with_capacity(self.config.n_max);
        for (i, &sym) in seq.iter().enumerate() {
            for (n, table) in self.tables.iter_mut().enumerate() {
                fill_context(&seq[..i], n, &mut buf);
                let entry = match table.get_mut(&buf[..]) {
                    Some(e) => e,
                    None => table.entry(buf.clone()).or_default(),
                };
                entry.total += 1;
                *entry.counts.entry(sym).or_insert(0) += 1;
            }
        }
        Ok(())
    }

    /// Add another shard's counts into this one. Both must share vocabulary
    /// and hyperparameters.
    pub fn merge(&mut self, other: &BackoffCounts) -> Result<()> {
        if self.vocab != other.vocab || self.config != other.config {
            return Err(Error::invalid(
                "cannot merge count models with different configurations",
            ));
        }
        for (mine, theirs) in self.tables.iter_mut().zip(&other.tables) {
            for (ctx, cc) in theirs {
                let entry = mine.entry(ctx.clone()).or_default();
                entry.total += cc.total;
                for (&sym, &c) in &cc.counts {
                    *entry.counts.entry(sym).or_insert(0) += c;
                }
            }
        }
        Ok(())
    }
}

/// Count-train an interpolated backoff model on `corpus`.
pub fn train_backoff(corpus: &[TokenSequence], vocab: Vocabulary, config: BackoffConfig) -> Result<BackoffCounts> {
    if corpus.is_empty() {
        return Err(Error::invalid("cannot train on an empty corpus"));
    }
    let mut model = BackoffCounts::empty(vocab, config)?;
    for seq in corpus {
        model.add_sequence(&seq.tokens)?;
    }
    Ok(model)
}

impl PredictiveModel for BackoffCounts {
    fn vocab(&self) -> Vocabulary {
        self.vocab
    }

    fn context_order(&self) -> Option<usize> {
        Some(self.config.n_max)
    }

    fn fill_distribution(&self, context: &[u32], out: &mut [f64]) {
        out.fill(0.0);
        let k = self.vocab.size() as f64;
        let delta = self.config.delta;
        let mut base = 0.0;
        let mut buf = Vec::with_capacity(self.config.n_max);
        for (n, (&lambda, table)) in self.config.lambdas.iter().zip(&self.tables).enumerate() {
            if lambda == 0.0 {
                continue;
            }
            fill_context(context, n, &mut buf);
            match table.get(&buf[..]) {
                Some(cc) => {
                    let denom = cc.total as f64 + k * delta;
                    base += lambda * delta / denom;
                    for (&sym, &c) in &cc.counts {
                        out[sym as usize] += lambda * c as f64 / denom;
                    }
                }
                // unseen context: the smoothed estimate is uniform
                None => base += lambda / k,
            }
        }
        for p in out.iter_mut() {
            *p += base;
        }
    }
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format: String,
    version: u32,
    vocab_size: usize,
    n_max: usize,
    delta: f64,
    lambdas: Vec<f64>,
    tables: Vec<Vec<ContextRecord>>,
}

#[derive(Serialize, Deserialize)]
struct ContextRecord {
    context: Vec<u32>,
    /// `(symbol, count)` pairs; signed so corrupt files are reported, not
    /// rejected by the deserializer with an opaque message.
    counts: Vec<(u32, i64)>,
}

pub fn model_to_json(model: &BackoffCounts) -> String {
    let tables = model
        .tables
        .iter()
        .map(|table| {
            let mut records: Vec<ContextRecord> = table
                .iter()
                .map(|(ctx, cc)| {
                    let mut counts: Vec<(u32, i64)> = cc.counts.iter().map(|(&s, &c)| (s, c as i64)).collect();
                    counts.sort_unstable();
                    ContextRecord {
                        context: ctx.clone(),
                        counts,
                    }
                })
                .collect();
            records.sort_by(|a, b| a.context.cmp(&b.context));
            records
        })
        .collect();
    let file = ModelFile {
        format: MODEL_FORMAT.to_string(),
        version: MODEL_FORMAT_VERSION,
        vocab_size: model.vocab.size(),
        n_max: model.config.n_max,
        delta: model.config.delta,
        lambdas: model.config.lambdas.clone(),
        tables,
    };
    serde_json::to_string(&file).expect("model serializes")
}

pub fn model_from_json(text: &str) -> Result<BackoffCounts> {
    let file: ModelFile = serde_json::from_str(text).map_err(|e| Error::InvalidModel(e.to_string()))?;
    let bad = |msg: String| Error::InvalidModel(msg);
    if file.format != MODEL_FORMAT {
        return Err(bad(format!("unknown format {:?}", file.format)));
    }
    if file.version != MODEL_FORMAT_VERSION {
        return Err(bad(format!("unsupported format version {}", file.version)));
    }
    let vocab = Vocabulary::new(file.vocab_size).map_err(|e| bad(e.to_string()))?;
    let config = BackoffConfig::new(file.n_max, file.delta, file.lambdas).map_err(|e| bad(e.to_string()))?;
    if file.tables.len() != config.n_max + 1 {
        return Err(bad(format!(
            "expected {} count tables, found {}",
            config.n_max + 1,
            file.tables.len()
        )));
    }
    let mut model = BackoffCounts::empty(vocab, config)?;
    for (n, records) in file.tables.into_iter().enumerate() {
        let table = &mut model.tables[n];
        for rec in records {
            if rec.context.len() != n {
                return Err(bad(format!(
                    "order-{n} table holds a context of length {}",
                    rec.context.len()
                )));
            }
            if let Some(&s) = rec
                .context
                .iter()
                .find(|&&s| s != BEGIN_MARKER && s as usize >= vocab.size())
            {
                return Err(bad(format!("context symbol {s} out of range")));
            }
            let mut cc = ContextCounts::default();
            for (sym, c) in rec.counts {
                if c < 0 {
                    return Err(bad(format!("negative count {c} for symbol {sym}")));
                }
                vocab.check(sym).map_err(|e| bad(e.to_string()))?;
                cc.total += c as u64;
                *cc.counts.entry(sym).or_insert(0) += c as u64;
            }
            if table.insert(rec.context, cc).is_some() {
                return Err(bad(format!("duplicate context in order-{n} table")));
            }
        }
    }
    let unigram_total = model.token_count();
    for (n, table) in model.tables.iter().enumerate() {
        let total: u64 = table.values().map(|c| c.total).sum();
        if total != unigram_total {
            return Err(bad(format!(
                "order-{n} counts total {total} but the unigram total is {unigram_total}"
            )));
        }
    }
    Ok(model)
}

pub fn save_model(model: &BackoffCounts, path: impl AsRef<Path>) -> Result<()> {
    fsutil::atomic_write(path.as_ref(), model_to_json(model).as_bytes())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<BackoffCounts> {
    let path = path.as_ref();
    let text = fsutil::read_to_string(path)?;
    model_from_json(&text).map_err(|e| e.in_file(path))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq(tokens: &[u32]) -> TokenSequence {
        TokenSequence::new("", tokens.to_vec(), 50.0).unwrap()
    }

    fn vocab(k: usize) -> Vocabulary {
        Vocabulary::new(k).unwrap()
    }

    #[test]
    fn bigram_on_alternating_corpus() {
        let cfg = BackoffConfig::new(1, 1e-9, vec![0.0, 1.0]).unwrap();
        let m = train_backoff(&[seq(&[0, 1, 0, 1, 0, 1])], vocab(2), cfg).unwrap();
        let p0 = m.next_distribution(&[0]).unwrap();
        let p1 = m.next_distribution(&[1]).unwrap();
        assert!((p0[1] - 1.0).abs() < 1e-8, "{p0:?}");
        assert!((p1[0] - 1.0).abs() < 1e-8, "{p1:?}");
    }

    #[test]
    fn unigram_additive_smoothing() {
        // (4 + 0.5) / (4 + 2 * 0.5) = 0.9
        let corpus = [seq(&[0, 0, 0, 0])];
        let m = train_backoff(&corpus, vocab(2), BackoffConfig::new(0, 0.5, vec![1.0]).unwrap()).unwrap();
        let p = m.next_distribution(&[]).unwrap();
        assert!((p[0] - 0.9).abs() < 1e-15);
        assert!((p[1] - 0.1).abs() < 1e-15);
        // same numbers when a zero-weighted bigram is carried along
        let m = train_backoff(&corpus, vocab(2), BackoffConfig::new(1, 0.5, vec![1.0, 0.0]).unwrap()).unwrap();
        assert!((m.next_distribution(&[1, 0]).unwrap()[0] - 0.9).abs() < 1e-15);
    }

    #[test]
    fn trigram_on_cycle() {
        let tokens: Vec<u32> = (0..30).map(|i| i % 3).collect();
        let cfg = BackoffConfig::new(2, 1e-9, vec![0.0, 0.0, 1.0]).unwrap();
        let m = train_backoff(&[seq(&tokens)], vocab(3), cfg).unwrap();
        let p = m.next_distribution(&[0, 1]).unwrap();
        let argmax = (0..3).max_by(|&a, &b| p[a].total_cmp(&p[b])).unwrap();
        assert_eq!(argmax, 2);
    }

    #[test]
    fn long_context_is_truncated() {
        let tokens: Vec<u32> = (0..200).map(|i| (i * 7 % 5) as u32).collect();
        let m = train_backoff(&[seq(&tokens)], vocab(5), BackoffConfig::uniform(2, 0.1).unwrap()).unwrap();
        let long = [4, 3, 2, 1, 0, 2];
        assert_eq!(
            m.next_distribution(&long).unwrap(),
            m.next_distribution(&long[long.len() - 2..]).unwrap()
        );
    }

    #[test]
    fn begin_marker_contexts_are_counted() {
        let m = train_backoff(
            &[seq(&[2, 1]), seq(&[2, 0])],
            vocab(3),
            BackoffConfig::uniform(2, 0.1).unwrap(),
        )
        .unwrap();
        assert_eq!(m.count(&[BEGIN_MARKER], 2), 2);
        assert_eq!(m.count(&[BEGIN_MARKER, BEGIN_MARKER], 2), 2);
        assert_eq!(m.count(&[BEGIN_MARKER, 2], 1), 1);
        assert_eq!(m.token_count(), 4);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(train_backoff(&[], vocab(2), BackoffConfig::default()).is_err());
        assert!(BackoffConfig::new(1, 0.1, vec![0.5, 0.3]).is_err());
        assert!(BackoffConfig::new(1, 0.0, vec![0.5, 0.5]).is_err());
        assert!(BackoffConfig::new(1, 0.1, vec![1.0]).is_err());
        let m = train_backoff(&[seq(&[0, 1])], vocab(2), BackoffConfig::default()).unwrap();
        assert!(matches!(m.next_distribution(&[2]), Err(Error::IdOutOfRange { .. })));
    }

    #[test]
    fn uniform_model_entropy_is_log_k() {
        let m = UniformModel { vocab: vocab(4) };
        let s = seq(&[0, 3, 2, 1, 1]);
        let raw = entropy_trace(&m, &s, EntropyScale::NatsRaw).unwrap();
        let norm = entropy_trace(&m, &s, EntropyScale::Normalized).unwrap();
        for (r, n) in raw.values.iter().zip(&norm.values) {
            assert!((r - 4f64.ln()).abs() < 1e-12);
            assert!((n - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn near_deterministic_model_has_near_zero_entropy() {
        let cfg = BackoffConfig::new(0, 1e-12, vec![1.0]).unwrap();
        let m = train_backoff(&[seq(&[1; 100])], vocab(3), cfg).unwrap();
        let t = entropy_trace(&m, &seq(&[1, 1, 1]), EntropyScale::NatsRaw).unwrap();
        assert!(t.values.iter().all(|&h| h < 1e-9), "{:?}", t.values);
    }

    #[test]
    fn merge_equals_joint_training() {
        let a = seq(&[0, 1, 2, 1, 0]);
        let b = seq(&[2, 2, 1]);
        let cfg = BackoffConfig::uniform(2, 0.1).unwrap();
        let joint = train_backoff(&[a.clone(), b.clone()], vocab(3), cfg.clone()).unwrap();
        let mut left = train_backoff(&[a], vocab(3), cfg.clone()).unwrap();
        left.merge(&train_backoff(&[b], vocab(3), cfg).unwrap()).unwrap();
        assert_eq!(left, joint);
    }

    #[test]
    fn model_file_rejects_corruption() {
        let m = train_backoff(&[seq(&[0, 1, 1, 0])], vocab(2), BackoffConfig::uniform(1, 0.1).unwrap()).unwrap();
        let json = model_to_json(&m);
        assert_eq!(model_from_json(&json).unwrap(), m);

        let mut v: serde_json::Value = serde_json::from_str(&json).unwrap();
        v["lambdas"] = serde_json::json!([0.4, 0.4]);
        assert!(matches!(model_from_json(&v.to_string()), Err(Error::InvalidModel(_))));

        let mut v: serde_json::Value = serde_json::from_str(&json).unwrap();
        v["tables"][1][0]["counts"][0][1] = serde_json::json!(-3);
        let err = model_from_json(&v.to_string()).unwrap_err();
        assert!(err.to_string().contains("negative"), "{err}");

        let mut v: serde_json::Value = serde_json::from_str(&json).unwrap();
        v["version"] = serde_json::json!(99);
        assert!(model_from_json(&v.to_string()).is_err());
    }
}
