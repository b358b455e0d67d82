//! Boundary detection over entropy traces, comparator segmentations and
//! threshold calibration to a target token rate.
//!
//! A position whose criterion fires starts a new group. Position 0 always
//! starts the first group. Both criteria use strict inequalities:
//!
//! * global: `H(i) > theta_g`
//! * relative: `H(i) - H(i-1) > theta_r`
//! * combined: either of the two

use std::fmt::{self, Write as _};
use std::ops::Range;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;

use crate::corpus::{EntropyScale, EntropyTrace, TokenSequence};
use crate::error::{Error, Result};
use crate::fsutil;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Rule {
    Global { theta_g: f64 },
    Relative { theta_r: f64 },
    Combined { theta_g: f64, theta_r: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundaryCriterion {
    pub rule: Rule,
    /// Scale the thresholds are expressed in.
    pub scale: EntropyScale,
}

fn finite(name: &str, v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::invalid(format!("{name} must be finite, got {v}")))
    }
}

impl BoundaryCriterion {
    pub fn global(theta_g: f64, scale: EntropyScale) -> Result<Self> {
        Ok(BoundaryCriterion {
            rule: Rule::Global {
                theta_g: finite("theta_g", theta_g)?,
            },
            scale,
        })
    }

    pub fn relative(theta_r: f64, scale: EntropyScale) -> Result<Self> {
        Ok(BoundaryCriterion {
            rule: Rule::Relative {
                theta_r: finite("theta_r", theta_r)?,
            },
            scale,
        })
    }

    pub fn combined(theta_g: f64, theta_r: f64, scale: EntropyScale) -> Result<Self> {
        Ok(BoundaryCriterion {
            rule: Rule::Combined {
                theta_g: finite("theta_g", theta_g)?,
                theta_r: finite("theta_r", theta_r)?,
            },
            scale,
        })
    }

    /// Whether position `i >= 1` of `values` starts a new group.
    #[inline]
    pub fn fires(&self, values: &[f64], i: usize) -> bool {
        match self.rule {
            Rule::Global { theta_g } => values[i] > theta_g,
            Rule::Relative { theta_r } => values[i] - values[i - 1] > theta_r,
            Rule::Combined { theta_g, theta_r } => values[i] > theta_g || values[i] - values[i - 1] > theta_r,
        }
    }
}

/// Ordered group boundaries `b_0 = 0 < b_1 < ... < b_M = N`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Segmentation {
    boundaries: Vec<usize>,
}

impl Segmentation {
    pub fn from_boundaries(boundaries: Vec<usize>) -> Result<Self> {
        if boundaries.len() < 2 {
            return Err(Error::invalid("a segmentation needs at least the boundaries 0 and N"));
        }
        if boundaries[0] != 0 {
            return Err(Error::invalid(format!(
                "first boundary must be 0, got {}",
                boundaries[0]
            )));
        }
        if let Some(w) = boundaries.windows(2).find(|w| w[1] <= w[0]) {
            return Err(Error::invalid(format!(
                "boundaries must be strictly increasing, found {} then {}",
                w[0], w[1]
            )));
        }
        Ok(Segmentation { boundaries })
    }

    /// Every token its own group.
    pub fn identity(n: usize) -> Self {
        assert!(n >= 1);
        Segmentation {
            boundaries: (0..=n).collect(),
        }
    }

    pub fn boundaries(&self) -> &[usize] {
        &self.boundaries
    }

    /// Sequence length `N`.
    pub fn len(&self) -> usize {
        *self.boundaries.last().unwrap()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Group count `M`.
    pub fn num_groups(&self) -> usize {
        self.boundaries.len() - 1
    }

    pub fn groups(&self) -> impl ExactSizeIterator<Item = Range<usize>> + '_ {
        self.boundaries.windows(2).map(|w| w[0]..w[1])
    }

    pub fn group_sizes(&self) -> Vec<usize> {
        self.boundaries.windows(2).map(|w| w[1] - w[0]).collect()
    }

    pub fn check_len(&self, n: usize) -> Result<()> {
        if self.len() != n {
            return Err(Error::LengthMismatch {
                expected: n,
                found: self.len(),
            });
        }
        Ok(())
    }
}

pub fn segment(trace: &EntropyTrace, criterion: &BoundaryCriterion) -> Result<Segmentation> {
    if trace.values.is_empty() {
        return Err(Error::invalid("cannot segment an empty trace"));
    }
    if trace.scale != criterion.scale {
        return Err(Error::invalid(format!(
            "trace is on the {} scale but thresholds are on the {} scale",
            trace.scale, criterion.scale
        )));
    }
    let values = &trace.values;
    let mut boundaries = Vec::with_capacity(values.len() / 2 + 2);
    boundaries.push(0);
    boundaries.extend((1..values.len()).filter(|&i| criterion.fires(values, i)));
    boundaries.push(values.len());
    Ok(Segmentation { boundaries })
}

/// [`segment`] every trace on the current rayon pool, preserving order.
pub fn segment_all(traces: &[EntropyTrace], criterion: &BoundaryCriterion) -> Result<Vec<Segmentation>> {
    traces.par_iter().map(|t| segment(t, criterion)).collect()
}

/// One group per maximal run of identical ids.
pub fn deduplicate(seq: &TokenSequence) -> Segmentation {
    let t = &seq.tokens;
    assert!(!t.is_empty());
    let mut boundaries = vec![0];
    boundaries.extend((1..t.len()).filter(|&i| t[i] != t[i - 1]));
    boundaries.push(t.len());
    Segmentation { boundaries }
}

/// The id of each group's first token; for [`deduplicate`] output this is
/// the run-length-collapsed sequence.
pub fn group_heads(tokens: &[u32], segm: &Segmentation) -> Vec<u32> {
    segm.groups().map(|g| tokens[g.start]).collect()
}

/// Consecutive windows of `window` tokens; the last group holds the remainder.
pub fn fixed_pool_segment(n: usize, window: usize) -> Result<Segmentation> {
    if window == 0 {
        return Err(Error::invalid("pooling window must be at least 1"));
    }
    if n == 0 {
        return Err(Error::invalid("cannot segment an empty sequence"));
    }
    let mut boundaries: Vec<usize> = (0..n).step_by(window).collect();
    boundaries.push(n);
    Ok(Segmentation { boundaries })
}

/// Groups per second of source audio.
pub fn token_rate(segm: &Segmentation, frame_rate_hz: f64) -> f64 {
    segm.num_groups() as f64 / (segm.len() as f64 / frame_rate_hz)
}

/// Corpus-aggregate rate: total groups over total duration.
pub fn corpus_token_rate(segms: &[Segmentation], frame_rate_hz: f64) -> f64 {
    let groups: usize = segms.iter().map(Segmentation::num_groups).sum();
    let tokens: usize = segms.iter().map(Segmentation::len).sum();
    groups as f64 / (tokens as f64 / frame_rate_hz)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CalibrationMode {
    Global,
    Relative,
}

impl CalibrationMode {
    pub fn criterion(self, theta: f64, scale: EntropyScale) -> Result<BoundaryCriterion> {
        match self {
            CalibrationMode::Global => BoundaryCriterion::global(theta, scale),
            CalibrationMode::Relative => BoundaryCriterion::relative(theta, scale),
        }
    }
}

impl fmt::Display for CalibrationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CalibrationMode::Global => "m1",
            CalibrationMode::Relative => "m2",
        })
    }
}

impl FromStr for CalibrationMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "m1" | "global" => Ok(CalibrationMode::Global),
            "m2" | "relative" => Ok(CalibrationMode::Relative),
            other => Err(Error::invalid(format!(
                "calibration mode must be m1 or m2, got {other:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RateAggregation {
    /// Total groups divided by total duration.
    #[default]
    Corpus,
    /// Mean of per-utterance rates.
    PerUtterance,
}

impl fmt::Display for RateAggregation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RateAggregation::Corpus => "corpus",
            RateAggregation::PerUtterance => "per-utterance",
        })
    }
}

impl FromStr for RateAggregation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "corpus" => Ok(RateAggregation::Corpus),
            "per-utterance" => Ok(RateAggregation::PerUtterance),
            other => Err(Error::invalid(format!("unknown rate aggregation {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibrationConfig {
    pub mode: CalibrationMode,
    pub target_rate_hz: f64,
    pub frame_rate_hz: f64,
    /// Absolute tolerance on the achieved rate, in Hz.
    pub tol_hz: f64,
    pub aggregation: RateAggregation,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Calibration {
    pub mode: CalibrationMode,
    pub scale: EntropyScale,
    pub theta: f64,
    pub target_rate_hz: f64,
    pub achieved_rate_hz: f64,
    pub tol_hz: f64,
    pub within_tolerance: bool,
    pub aggregation: RateAggregation,
    pub frame_rate_hz: f64,
    pub sequences: usize,
    pub tokens: usize,
    pub groups: usize,
    pub seconds: f64,
    pub iterations: usize,
}

impl Calibration {
    pub fn criterion(&self) -> Result<BoundaryCriterion> {
        self.mode.criterion(self.theta, self.scale)
    }
}

const BISECTION_ITERATIONS: usize = 64;

/// Criterion scores of positions `1..N`, whose rate is a step function of theta.
struct RateCurve {
    /// Per-sequence sorted scores.
    per_seq: Vec<Vec<f64>>,
    durations: Vec<f64>,
    /// All scores, sorted.
    all: Vec<f64>,
    total_seconds: f64,
    aggregation: RateAggregation,
}

impl RateCurve {
    fn new(traces: &[EntropyTrace], mode: CalibrationMode, frame_rate_hz: f64, aggregation: RateAggregation) -> Self {
        let per_seq: Vec<Vec<f64>> = traces
            .par_iter()
            .map(|t| {
                let v = &t.values;
                let mut s: Vec<f64> = match mode {
                    CalibrationMode::Global => v[1..].to_vec(),
                    CalibrationMode::Relative => v.windows(2).map(|w| w[1] - w[0]).collect(),
                };
                s.sort_by(f64::total_cmp);
                s
            })
            .collect();
        let durations: Vec<f64> = traces.iter().map(|t| t.len() as f64 / frame_rate_hz).collect();
        let mut all: Vec<f64> = per_seq.iter().flatten().copied().collect();
        all.sort_by(f64::total_cmp);
        RateCurve {
            total_seconds: durations.iter().sum(),
            per_seq,
            durations,
            all,
            aggregation,
        }
    }

    fn fired(sorted: &[f64], theta: f64) -> usize {
        sorted.len() - sorted.partition_point(|&x| x <= theta)
    }

    fn groups(&self, theta: f64) -> usize {
        self.per_seq.len() + Self::fired(&self.all, theta)
    }

    fn rate(&self, theta: f64) -> f64 {
        match self.aggregation {
            RateAggregation::Corpus => self.groups(theta) as f64 / self.total_seconds,
            RateAggregation::PerUtterance => {
                let sum: f64 = self
                    .per_seq
                    .iter()
                    .zip(&self.durations)
                    .map(|(s, d)| (1 + Self::fired(s, theta)) as f64 / d)
                    .sum();
                sum / self.per_seq.len() as f64
            }
        }
    }

    /// No score lies strictly between the plateaus of `lo` and `hi`.
    fn collapsed(&self, lo: f64, hi: f64) -> bool {
        let a = self.all.partition_point(|&x| x <= lo);
        let b = self.all.partition_point(|&x| x <= hi);
        b == a || self.all[a] == self.all[b - 1]
    }

    /// A representative theta in the middle of the plateau containing `theta`.
    fn snap(&self, theta: f64, floor: f64, ceil: f64) -> f64 {
        let idx = self.all.partition_point(|&x| x <= theta);
        let below = if idx == 0 { floor } else { self.all[idx - 1] };
        let above = if idx == self.all.len() { ceil } else { self.all[idx] };
        below + (above - below) / 2.0
    }
}

/// Find a threshold whose corpus token rate is as close as possible to the
/// target, by bisection on the non-increasing rate-vs-threshold step function.
pub fn calibrate_threshold(traces: &[EntropyTrace], config: &CalibrationConfig) -> Result<Calibration> {
    if traces.is_empty() {
        return Err(Error::invalid("calibration corpus is empty"));
    }
    crate::corpus::check_frame_rate(config.frame_rate_hz)?;
    if !(config.target_rate_hz > 0.0 && config.target_rate_hz <= config.frame_rate_hz) {
        return Err(Error::invalid(format!(
            "target rate {} Hz must lie in (0, {}] Hz",
            config.target_rate_hz, config.frame_rate_hz
        )));
    }
    if !(config.tol_hz.is_finite() && config.tol_hz >= 0.0) {
        return Err(Error::invalid(format!(
            "tolerance must be non-negative, got {}",
            config.tol_hz
        )));
    }
    let scale = traces[0].scale;
    if traces.iter().any(|t| t.scale != scale) {
        return Err(Error::invalid("calibration traces mix entropy scales"));
    }
    if traces.iter().any(|t| t.values.is_empty()) {
        return Err(Error::invalid("calibration corpus contains an empty trace"));
    }

    let curve = RateCurve::new(traces, config.mode, config.frame_rate_hz, config.aggregation);
    let target = config.target_rate_hz;
    let (min, max) = match (curve.all.first(), curve.all.last()) {
        (Some(&a), Some(&b)) => (a, b),
        _ => (0.0, 0.0),
    };
    // every score fires at `floor`, none at `ceil`
    let floor = min - 1.0;
    let ceil = max + 1.0;

    let mut iterations = 0;
    let theta = if curve.rate(floor) < target {
        floor
    } else if curve.rate(max) >= target {
        max
    } else {
        let (mut lo, mut hi) = (floor, max);
        while iterations < BISECTION_ITERATIONS && !curve.collapsed(lo, hi) {
            let mid = lo + (hi - lo) / 2.0;
            if mid <= lo || mid >= hi {
                break;
            }
            if curve.rate(mid) >= target {
                lo = mid;
            } else {
                hi = mid;
            }
            iterations += 1;
        }
        let (r_lo, r_hi) = (curve.rate(lo), curve.rate(hi));
        if (r_lo - target).abs() <= (r_hi - target).abs() {
            lo
        } else {
            hi
        }
    };
    let theta = curve.snap(theta, floor, ceil);
    let achieved = curve.rate(theta);
    Ok(Calibration {
        mode: config.mode,
        scale,
        theta,
        target_rate_hz: target,
        achieved_rate_hz: achieved,
        tol_hz: config.tol_hz,
        within_tolerance: (achieved - target).abs() <= config.tol_hz,
        aggregation: config.aggregation,
        frame_rate_hz: config.frame_rate_hz,
        sequences: traces.len(),
        tokens: traces.iter().map(EntropyTrace::len).sum(),
        groups: curve.groups(theta),
        seconds: curve.total_seconds,
        iterations,
    })
}

pub fn format_calibration_report(c: &Calibration) -> String {
    let mut out = String::new();
    let mut kv = |k: &str, v: &dyn fmt::Display| writeln!(out, "{k}={v}").unwrap();
    kv("mode", &c.mode);
    kv("scale", &c.scale);
    kv("theta", &c.theta);
    kv("target_rate_hz", &c.target_rate_hz);
    kv("achieved_rate_hz", &c.achieved_rate_hz);
    kv("tol_hz", &c.tol_hz);
    kv("within_tolerance", &c.within_tolerance);
    kv("aggregation", &c.aggregation);
    kv("frame_rate_hz", &c.frame_rate_hz);
    kv("sequences", &c.sequences);
    kv("tokens", &c.tokens);
    kv("groups", &c.groups);
    kv("seconds", &c.seconds);
    kv("iterations", &c.iterations);
    out
}

pub fn parse_calibration_report(text: &str) -> Result<Calibration> {
    let mut map = std::collections::HashMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
            line: i + 1,
            reason: format!("expected key=value, got {line:?}"),
        })?;
        map.insert(k.trim().to_string(), v.trim().to_string());
    }
    fn get<T: FromStr>(map: &std::collections::HashMap<String, String>, key: &str) -> Result<T> {
        map.get(key)
            .ok_or_else(|| Error::invalid(format!("calibration report lacks {key}")))?
            .parse::<T>()
            .map_err(|_| Error::invalid(format!("calibration report has a bad {key}")))
    }
    Ok(Calibration {
        mode: get(&map, "mode")?,
        scale: get(&map, "scale")?,
        theta: get(&map, "theta")?,
        target_rate_hz: get(&map, "target_rate_hz")?,
        achieved_rate_hz: get(&map, "achieved_rate_hz")?,
        tol_hz: get(&map, "tol_hz")?,
        within_tolerance: get(&map, "within_tolerance")?,
        aggregation: get(&map, "aggregation")?,
        frame_rate_hz: get(&map, "frame_rate_hz")?,
        sequences: get(&map, "sequences")?,
        tokens: get(&map, "tokens")?,
        groups: get(&map, "groups")?,
        seconds: get(&map, "seconds")?,
        iterations: get(&map, "iterations")?,
    })
}

/// A segmentation tagged with the utterance it belongs to.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegmentationRecord {
    pub id: String,
    pub segmentation: Segmentation,
}

/// One line per record: `id|b_0 b_1 ... b_M`, the `id|` prefix omitted for
/// anonymous records.
pub fn format_segmentations(records: &[SegmentationRecord]) -> String {
    let mut out = String::new();
    for r in records {
        if !r.id.is_empty() {
            out.push_str(&r.id);
            out.push('|');
        }
        for (i, b) in r.segmentation.boundaries().iter().enumerate() {
            if i > 0 {
                out.push(' ');
            }
            write!(out, "{b}").unwrap();
        }
        out.push('\n');
    }
    out
}

pub fn parse_segmentations(text: &str) -> Result<Vec<SegmentationRecord>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, line)| {
            let (id, body) = line.split_once('|').unwrap_or(("", line));
            let boundaries = body
                .split_whitespace()
                .map(|f| {
                    f.parse::<usize>().map_err(|_| Error::Parse {
                        line: i + 1,
                        reason: format!("{f:?} is not a boundary index"),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let segmentation = Segmentation::from_boundaries(boundaries).map_err(|e| Error::Parse {
                line: i + 1,
                reason: e.to_string(),
            })?;
            Ok(SegmentationRecord {
                id: id.trim().to_string(),
                segmentation,
            })
        })
        .collect()
}

pub fn write_segmentations(records: &[SegmentationRecord], path: impl AsRef<Path>) -> Result<()> {
    fsutil::atomic_write(path.as_ref(), format_segmentations(records).as_bytes())
}

pub fn read_segmentations(path: impl AsRef<Path>) -> Result<Vec<SegmentationRecord>> {
    let path = path.as_ref();
    let text = fsutil::read_to_string(path)?;
    parse_segmentations(&text).map_err(|e| e.in_file(path))
}

#[cfg(test)]
mod tests {
    use super::*;

    const NORM: EntropyScale = EntropyScale::Normalized;

    fn six() -> EntropyTrace {
        EntropyTrace::new("", vec![0.9, 0.2, 0.1, 0.8, 0.1, 0.3], NORM).unwrap()
    }

    fn seq(tokens: &[u32]) -> TokenSequence {
        TokenSequence::new("", tokens.to_vec(), 50.0).unwrap()
    }

    #[test]
    fn global_threshold_on_six_value_trace() {
        let s = segment(&six(), &BoundaryCriterion::global(0.5, NORM).unwrap()).unwrap();
        assert_eq!(s.boundaries(), &[0, 3, 6]);
        assert_eq!(s.groups().collect::<Vec<_>>(), vec![0..3, 3..6]);
        assert_eq!(s.num_groups(), 2);
    }

    #[test]
    fn relative_threshold_on_six_value_trace() {
        let s = segment(&six(), &BoundaryCriterion::relative(0.5, NORM).unwrap()).unwrap();
        assert_eq!(s.boundaries(), &[0, 3, 6]);
    }

    #[test]
    fn high_threshold_gives_one_group() {
        let s = segment(&six(), &BoundaryCriterion::global(0.95, NORM).unwrap()).unwrap();
        assert_eq!(s.boundaries(), &[0, 6]);
    }

    #[test]
    fn ties_do_not_fire() {
        let s = segment(&six(), &BoundaryCriterion::global(0.8, NORM).unwrap()).unwrap();
        assert_eq!(s.boundaries(), &[0, 6]);
    }

    #[test]
    fn scale_mismatch_is_rejected() {
        let c = BoundaryCriterion::global(0.5, EntropyScale::NatsRaw).unwrap();
        assert!(segment(&six(), &c).is_err());
        assert!(BoundaryCriterion::global(f64::NAN, NORM).is_err());
        assert!(BoundaryCriterion::combined(0.1, f64::INFINITY, NORM).is_err());
    }

    #[test]
    fn dedup_runs() {
        let s = seq(&[1, 1, 2, 2, 2, 3]);
        let d = deduplicate(&s);
        assert_eq!(d.group_sizes(), vec![2, 3, 1]);
        assert_eq!(group_heads(&s.tokens, &d), vec![1, 2, 3]);
        assert_eq!(deduplicate(&seq(&[5])).num_groups(), 1);
    }

    #[test]
    fn fixed_windows() {
        assert_eq!(fixed_pool_segment(7, 2).unwrap().group_sizes(), vec![2, 2, 2, 1]);
        assert_eq!(fixed_pool_segment(5, 1).unwrap(), Segmentation::identity(5));
        assert!(fixed_pool_segment(5, 0).is_err());
        assert_eq!(token_rate(&fixed_pool_segment(50, 2).unwrap(), 50.0), 25.0);
    }

    #[test]
    fn rates() {
        let mut b: Vec<usize> = (0..30).map(|i| i * 3).collect();
        b.push(100);
        let s = Segmentation::from_boundaries(b).unwrap();
        assert_eq!(s.num_groups(), 30);
        assert!((token_rate(&s, 50.0) - 15.0).abs() < 1e-12);
        assert_eq!(token_rate(&Segmentation::identity(37), 50.0), 50.0);
    }

    #[test]
    fn segmentation_validation() {
        assert!(Segmentation::from_boundaries(vec![0]).is_err());
        assert!(Segmentation::from_boundaries(vec![1, 3]).is_err());
        assert!(Segmentation::from_boundaries(vec![0, 2, 2, 3]).is_err());
        assert!(Segmentation::from_boundaries(vec![0, 2, 3]).is_ok());
    }

    #[test]
    fn segmentation_file_round_trip() {
        let recs = vec![
            SegmentationRecord {
                id: "a".into(),
                segmentation: Segmentation::from_boundaries(vec![0, 3, 6]).unwrap(),
            },
            SegmentationRecord {
                id: String::new(),
                segmentation: Segmentation::identity(2),
            },
        ];
        let text = format_segmentations(&recs);
        assert_eq!(text, "a|0 3 6\n0 1 2\n");
        assert_eq!(parse_segmentations(&text).unwrap(), recs);
        assert!(parse_segmentations("x|0 2 1\n").is_err());
    }

    #[test]
    fn calibration_to_frame_rate_fires_everywhere() {
        let traces = vec![six()];
        let cfg = CalibrationConfig {
            mode: CalibrationMode::Global,
            target_rate_hz: 50.0,
            frame_rate_hz: 50.0,
            tol_hz: 0.01,
            aggregation: RateAggregation::Corpus,
        };
        let c = calibrate_threshold(&traces, &cfg).unwrap();
        assert!(c.theta < 0.1);
        assert_eq!(c.achieved_rate_hz, 50.0);
        assert!(c.within_tolerance);
        let s = segment(&traces[0], &c.criterion().unwrap()).unwrap();
        assert_eq!(s, Segmentation::identity(6));
    }

    #[test]
    fn calibration_rejects_bad_targets() {
        let cfg = CalibrationConfig {
            mode: CalibrationMode::Global,
            target_rate_hz: 60.0,
            frame_rate_hz: 50.0,
            tol_hz: 0.1,
            aggregation: RateAggregation::Corpus,
        };
        assert!(calibrate_threshold(&[six()], &cfg).is_err());
        assert!(calibrate_threshold(
            &[],
            &CalibrationConfig {
                target_rate_hz: 10.0,
                ..cfg
            }
        )
        .is_err());
    }

    #[test]
    fn calibration_report_round_trip() {
        let cfg = CalibrationConfig {
            mode: CalibrationMode::Relative,
            target_rate_hz: 20.0,
            frame_rate_hz: 50.0,
            tol_hz: 1.0,
            aggregation: RateAggregation::PerUtterance,
        };
        let c = calibrate_threshold(&[six(), six()], &cfg).unwrap();
        assert_eq!(parse_calibration_report(&format_calibration_report(&c)).unwrap(), c);
    }
}
