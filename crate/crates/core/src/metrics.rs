//! Compression statistics, boundary alignment against reference
//! alignments, and segmentation throughput measurement.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::Serialize;

use crate::corpus::{AlignmentRef, EntropyTrace, Tier};
use crate::error::{Error, Result};
use crate::segmenter::{segment, BoundaryCriterion, Segmentation};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompressionStats {
    pub sequences: usize,
    pub tokens: usize,
    pub groups: usize,
    pub frame_rate_hz: f64,
    pub token_rate_hz: f64,
    /// `N / M`
    pub compression_ratio: f64,
    pub avg_span_ms: f64,
    /// Group size -> number of groups of that size.
    pub histogram: BTreeMap<usize, usize>,
}

pub fn compression_stats(segm: &Segmentation, frame_rate_hz: f64) -> CompressionStats {
    corpus_compression_stats(std::slice::from_ref(segm), frame_rate_hz)
}

/// Aggregate statistics over many segmentations (total groups over total
/// duration).
pub fn corpus_compression_stats(segms: &[Segmentation], frame_rate_hz: f64) -> CompressionStats {
    let mut histogram = BTreeMap::new();
    for s in segms {
        for size in s.group_sizes() {
            *histogram.entry(size).or_insert(0) += 1;
        }
    }
    let tokens: usize = segms.iter().map(Segmentation::len).sum();
    let groups: usize = segms.iter().map(Segmentation::num_groups).sum();
    let ratio = tokens as f64 / groups as f64;
    CompressionStats {
        sequences: segms.len(),
        tokens,
        groups,
        frame_rate_hz,
        token_rate_hz: groups as f64 * frame_rate_hz / tokens as f64,
        compression_ratio: ratio,
        avg_span_ms: 1000.0 * ratio / frame_rate_hz,
        histogram,
    }
}

impl fmt::Display for CompressionStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "sequences={}", self.sequences)?;
        writeln!(f, "tokens={}", self.tokens)?;
        writeln!(f, "groups={}", self.groups)?;
        writeln!(f, "frame_rate_hz={}", self.frame_rate_hz)?;
        writeln!(f, "token_rate_hz={}", self.token_rate_hz)?;
        writeln!(f, "compression_ratio={}", self.compression_ratio)?;
        writeln!(f, "avg_span_ms={}", self.avg_span_ms)?;
        let hist: Vec<String> = self.histogram.iter().map(|(k, v)| format!("{k}:{v}")).collect();
        writeln!(f, "histogram={}", hist.join(","))
    }
}

/// Which instant of a frame a boundary index maps to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BoundaryAnchor {
    #[default]
    FrameStart,
    FrameCenter,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct BoundaryTimeOptions {
    /// Also emit `b_0` and `b_M`.
    pub include_edges: bool,
    pub anchor: BoundaryAnchor,
}

/// Boundary times in seconds, interior boundaries only unless requested.
pub fn boundary_times(segm: &Segmentation, frame_rate_hz: f64, opts: BoundaryTimeOptions) -> Vec<f64> {
    let b = segm.boundaries();
    let picked = if opts.include_edges { b } else { &b[1..b.len() - 1] };
    let offset = match opts.anchor {
        BoundaryAnchor::FrameStart => 0.0,
        BoundaryAnchor::FrameCenter => 0.5,
    };
    picked.iter().map(|&i| (i as f64 + offset) / frame_rate_hz).collect()
}

/// Slack added to the window so that distances equal to the window up to
/// floating-point rounding count as hits.
pub const WINDOW_SLACK_MS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AlignmentDenominator {
    /// Fraction of predicted boundaries near some reference boundary.
    #[default]
    Predicted,
    /// Fraction of reference boundaries near some predicted boundary.
    Reference,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlignOptions {
    pub window_ms: f64,
    pub denominator: AlignmentDenominator,
}

impl Default for AlignOptions {
    fn default() -> Self {
        AlignOptions {
            window_ms: 50.0,
            denominator: AlignmentDenominator::Predicted,
        }
    }
}

/// Mergeable counts behind a tier score.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct TierTally {
    pub predicted: usize,
    pub predicted_hits: usize,
    pub reference: usize,
    pub reference_hits: usize,
    pub distance_sum_ms: f64,
}

impl TierTally {
    pub fn merge(&mut self, other: &TierTally) {
        self.predicted += other.predicted;
        self.predicted_hits += other.predicted_hits;
        self.reference += other.reference;
        self.reference_hits += other.reference_hits;
        self.distance_sum_ms += other.distance_sum_ms;
    }

    pub fn alignment_pct(&self, denominator: AlignmentDenominator) -> f64 {
        let (hits, total) = match denominator {
            AlignmentDenominator::Predicted => (self.predicted_hits, self.predicted),
            AlignmentDenominator::Reference => (self.reference_hits, self.reference),
        };
        if total == 0 {
            0.0
        } else {
            100.0 * hits as f64 / total as f64
        }
    }

    /// Mean distance from each predicted boundary to its nearest reference.
    pub fn mtd_ms(&self) -> Option<f64> {
        (self.predicted > 0).then(|| self.distance_sum_ms / self.predicted as f64)
    }

    pub fn score(&self, denominator: AlignmentDenominator) -> TierScore {
        TierScore {
            alignment_pct: self.alignment_pct(denominator),
            mtd_ms: self.mtd_ms(),
            predicted: self.predicted,
            reference: self.reference,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TierScore {
    pub alignment_pct: f64,
    pub mtd_ms: Option<f64>,
    pub predicted: usize,
    pub reference: usize,
}

/// Distance from `t` to the nearest element of the sorted, non-empty `sorted`.
fn nearest_distance(sorted: &[f64], t: f64) -> f64 {
    let idx = sorted.partition_point(|&x| x < t);
    let mut best = f64::INFINITY;
    if idx < sorted.len() {
        best = best.min((sorted[idx] - t).abs());
    }
    if idx > 0 {
        best = best.min((t - sorted[idx - 1]).abs());
    }
    best
}

/// Tally predicted boundary times against reference boundary times.
pub fn tally(pred: &[f64], reference: &[f64], window_ms: f64) -> Result<TierTally> {
    if reference.is_empty() {
        return Err(Error::invalid("reference tier has no boundaries"));
    }
    if !(window_ms.is_finite() && window_ms >= 0.0) {
        return Err(Error::invalid(format!(
            "window must be non-negative, got {window_ms} ms"
        )));
    }
    let mut ref_sorted = reference.to_vec();
    ref_sorted.sort_by(f64::total_cmp);
    let mut pred_sorted = pred.to_vec();
    pred_sorted.sort_by(f64::total_cmp);
    let limit = window_ms + WINDOW_SLACK_MS;

    let mut t = TierTally {
        predicted: pred.len(),
        reference: reference.len(),
        ..TierTally::default()
    };
    for &p in pred {
        let dist_ms = 1000.0 * nearest_distance(&ref_sorted, p);
        t.distance_sum_ms += dist_ms;
        if dist_ms <= limit {
            t.predicted_hits += 1;
        }
    }
    if !pred_sorted.is_empty() {
        t.reference_hits = reference
            .iter()
            .filter(|&&r| 1000.0 * nearest_distance(&pred_sorted, r) <= limit)
            .count();
    }
    Ok(t)
}

/// Score predicted boundary times against one tier of a reference alignment.
pub fn align_score(pred: &[f64], reference: &AlignmentRef, tier: Tier, opts: &AlignOptions) -> Result<TierScore> {
    let refs = reference.boundaries(tier);
    if refs.is_empty() {
        return Err(Error::invalid(format!("reference alignment has no {tier} units")));
    }
    Ok(tally(pred, &refs, opts.window_ms)?.score(opts.denominator))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AlignmentScore {
    pub wba_pct: f64,
    pub pba_pct: f64,
    /// Mean distance to the nearest word-or-phoneme boundary.
    pub mtd_ms: Option<f64>,
}

/// Word and phoneme alignment plus the mean deviation against both tiers'
/// boundaries pooled together.
pub fn evaluate_alignment(pred: &[f64], reference: &AlignmentRef, opts: &AlignOptions) -> Result<AlignmentScore> {
    let word = align_score(pred, reference, Tier::Word, opts)?;
    let phoneme = align_score(pred, reference, Tier::Phoneme, opts)?;
    let mut pooled = reference.boundaries(Tier::Word);
    pooled.extend(reference.boundaries(Tier::Phoneme));
    let mtd = tally(pred, &pooled, opts.window_ms)?.mtd_ms();
    Ok(AlignmentScore {
        wba_pct: word.alignment_pct,
        pba_pct: phoneme.alignment_pct,
        mtd_ms: mtd,
    })
}

#[derive(Debug, Clone)]
pub struct BenchConfig {
    pub repetitions: usize,
    pub workers: usize,
    pub hardware_note: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchReport {
    pub workers: usize,
    pub repetitions: usize,
    pub sequences: usize,
    pub tokens: usize,
    pub groups: usize,
    pub median_total_s: f64,
    pub tokens_per_s: f64,
    pub sequences_per_s: f64,
    pub latency_p50_ms: f64,
    pub latency_p95_ms: f64,
    pub hardware_note: String,
}

impl fmt::Display for BenchReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "workers={}", self.workers)?;
        writeln!(f, "repetitions={}", self.repetitions)?;
        writeln!(f, "sequences={}", self.sequences)?;
        writeln!(f, "tokens={}", self.tokens)?;
        writeln!(f, "groups={}", self.groups)?;
        writeln!(f, "median_total_s={}", self.median_total_s)?;
        writeln!(f, "tokens_per_s={}", self.tokens_per_s)?;
        writeln!(f, "sequences_per_s={}", self.sequences_per_s)?;
        writeln!(f, "latency_p50_ms={}", self.latency_p50_ms)?;
        writeln!(f, "latency_p95_ms={}", self.latency_p95_ms)?;
        writeln!(f, "hardware_note={}", self.hardware_note)
    }
}

fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
    }
}

/// Nearest-rank percentile of sorted values.
fn percentile(sorted: &[f64], p: f64) -> f64 {
    let rank = ((p / 100.0) * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

/// Time segmentation of `traces` on a dedicated pool of `config.workers`
/// threads.
pub fn bench_segment(
    traces: &[EntropyTrace],
    criterion: &BoundaryCriterion,
    config: &BenchConfig,
) -> Result<BenchReport> {
    if traces.is_empty() {
        return Err(Error::invalid("benchmark corpus is empty"));
    }
    if config.repetitions == 0 || config.workers == 0 {
        return Err(Error::invalid("benchmark needs at least one repetition and one worker"));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers)
        .build()
        .map_err(|e| Error::invalid(e.to_string()))?;

    let mut totals = Vec::with_capacity(config.repetitions);
    let mut latencies_ms = Vec::with_capacity(config.repetitions * traces.len());
    let mut groups = 0;
    for _ in 0..config.repetitions {
        let start = Instant::now();
        let timed: Vec<(Duration, usize)> = pool.install(|| {
            traces
                .par_iter()
                .map(|t| {
                    let s = Instant::now();
                    let m = segment(t, criterion).map(|seg| seg.num_groups());
                    (s.elapsed(), m)
                })
                .map(|(d, m)| m.map(|m| (d, m)))
                .collect::<Result<Vec<_>>>()
        })?;
        totals.push(start.elapsed().as_secs_f64());
        groups = timed.iter().map(|(_, m)| m).sum();
        latencies_ms.extend(timed.iter().map(|(d, _)| d.as_secs_f64() * 1000.0));
    }
    totals.sort_by(f64::total_cmp);
    latencies_ms.sort_by(f64::total_cmp);
    let median_total = median(&totals).max(f64::MIN_POSITIVE);
    let tokens: usize = traces.iter().map(EntropyTrace::len).sum();
    Ok(BenchReport {
        workers: config.workers,
        repetitions: config.repetitions,
        sequences: traces.len(),
        tokens,
        groups,
        median_total_s: median_total,
        tokens_per_s: tokens as f64 / median_total,
        sequences_per_s: traces.len() as f64 / median_total,
        latency_p50_ms: percentile(&latencies_ms, 50.0),
        latency_p95_ms: percentile(&latencies_ms, 95.0),
        hardware_note: config.hardware_note.clone(),
    })
}

/// Key-value rendering of an alignment evaluation.
pub fn format_alignment_report(
    scores: &[(Tier, TierScore)],
    window_ms: f64,
    denominator: AlignmentDenominator,
) -> String {
    let mut out = String::new();
    writeln!(out, "window_ms={window_ms}").unwrap();
    writeln!(
        out,
        "denominator={}",
        match denominator {
            AlignmentDenominator::Predicted => "predicted",
            AlignmentDenominator::Reference => "reference",
        }
    )
    .unwrap();
    for (tier, s) in scores {
        let name = match tier {
            Tier::Word => "wba",
            Tier::Phoneme => "pba",
        };
        writeln!(out, "{name}_pct={}", s.alignment_pct).unwrap();
        match s.mtd_ms {
            Some(m) => writeln!(out, "{tier}_mtd_ms={m}").unwrap(),
            None => writeln!(out, "{tier}_mtd_ms=none").unwrap(),
        }
        writeln!(out, "{tier}_predicted={}", s.predicted).unwrap();
        writeln!(out, "{tier}_reference={}", s.reference).unwrap();
    }
    out
}
