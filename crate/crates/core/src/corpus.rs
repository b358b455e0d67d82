//! Token corpora, entropy traces and reference alignments: types and file I/O.
//!
//! Token corpus files are UTF-8 text with an optional `#k=<K> rate=<hz>`
//! header followed by one sequence per line (`[id|]id id id ...`). Trace files
//! hold one or more blocks, each opened by `#scale=<nats-raw|normalized> n=<N>`
//! (optionally ` id=<utterance>`) and followed by `N` decimal values, one per
//! line. Alignments are CSV with the header `tier,label,start_s,end_s`.

use std::fmt::{self, Write as _};
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::fsutil;

pub const DEFAULT_FRAME_RATE_HZ: f64 = 50.0;

/// Slack allowed above the theoretical entropy maximum.
pub const ENTROPY_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Vocabulary(usize);

impl Vocabulary {
    pub fn new(size: usize) -> Result<Self> {
        if size < 2 {
            return Err(Error::invalid(format!(
                "vocabulary size must be at least 2, got {size}"
            )));
        }
        if size > u32::MAX as usize {
            return Err(Error::invalid(format!(
                "vocabulary size {size} does not fit in u32 ids"
            )));
        }
        Ok(Vocabulary(size))
    }

    pub fn size(self) -> usize {
        self.0
    }

    /// Natural log of the vocabulary size, the maximum attainable entropy.
    pub fn max_entropy(self) -> f64 {
        (self.0 as f64).ln()
    }

    pub fn check(self, id: u32) -> Result<()> {
        if (id as usize) < self.0 {
            Ok(())
        } else {
            Err(Error::IdOutOfRange { id, vocab_size: self.0 })
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TokenSequence {
    /// Utterance identifier; empty when the source did not name it.
    pub id: String,
    pub tokens: Vec<u32>,
    pub frame_rate_hz: f64,
}

impl TokenSequence {
    pub fn new(id: impl Into<String>, tokens: Vec<u32>, frame_rate_hz: f64) -> Result<Self> {
        if tokens.is_empty() {
            return Err(Error::invalid("token sequence must not be empty"));
        }
        check_frame_rate(frame_rate_hz)?;
        Ok(TokenSequence {
            id: id.into(),
            tokens,
            frame_rate_hz,
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.tokens.len() as f64 / self.frame_rate_hz
    }

    pub fn validate(&self, vocab: Vocabulary) -> Result<()> {
        self.tokens.iter().try_for_each(|&t| vocab.check(t))
    }
}

pub(crate) fn check_frame_rate(hz: f64) -> Result<()> {
    if hz.is_finite() && hz > 0.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!(
            "frame rate must be positive and finite, got {hz}"
        )))
    }
}

/// A parsed token corpus file.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub vocab: Vocabulary,
    pub frame_rate_hz: f64,
    pub sequences: Vec<TokenSequence>,
}

impl Corpus {
    pub fn total_tokens(&self) -> usize {
        self.sequences.iter().map(TokenSequence::len).sum()
    }
}

#[derive(Debug, Default, Clone, Copy, PartialEq)]
struct CorpusHeader {
    k: Option<usize>,
    rate: Option<f64>,
}

fn parse_corpus_header(line: &str, line_no: usize) -> Result<CorpusHeader> {
    let malformed = |reason: String| Error::MalformedHeader { line: line_no, reason };
    let body = line.trim_start_matches('#').trim();
    let mut header = CorpusHeader::default();
    for field in body.split_whitespace() {
        let (key, value) = field
            .split_once('=')
            .ok_or_else(|| malformed(format!("expected key=value, got {field:?}")))?;
        match key {
            "k" => {
                let k = value
                    .parse::<usize>()
                    .map_err(|_| malformed(format!("bad vocabulary size {value:?}")))?;
                header.k = Some(k);
            }
            "rate" => {
                let r = value
                    .parse::<f64>()
                    .map_err(|_| malformed(format!("bad frame rate {value:?}")))?;
                if !(r.is_finite() && r > 0.0) {
                    return Err(malformed(format!("frame rate must be positive, got {value}")));
                }
                header.rate = Some(r);
            }
            other => return Err(malformed(format!("unknown header key {other:?}"))),
        }
    }
    if header.k.is_none() && header.rate.is_none() {
        return Err(malformed("header declares neither k nor rate".into()));
    }
    Ok(header)
}

/// Parse a token corpus. An explicit `vocab` must agree with the header when
/// both are present; `rate_override` beats the header rate, which beats 50 Hz.
pub fn parse_token_corpus(text: &str, vocab: Option<Vocabulary>, rate_override: Option<f64>) -> Result<Corpus> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l)).peekable();
    let mut header = CorpusHeader::default();
    if let Some(&(line_no, first)) = lines.peek() {
        if first.starts_with('#') {
            header = parse_corpus_header(first, line_no)?;
            lines.next();
        }
    }

    let vocab = match (vocab, header.k) {
        (Some(v), Some(k)) if v.size() != k => {
            return Err(Error::MalformedHeader {
                line: 1,
                reason: format!("header declares k={k} but vocabulary size {} was requested", v.size()),
            })
        }
        (Some(v), _) => v,
        (None, Some(k)) => Vocabulary::new(k).map_err(|e| Error::MalformedHeader {
            line: 1,
            reason: e.to_string(),
        })?,
        (None, None) => {
            return Err(Error::invalid(
                "vocabulary size unknown: pass it explicitly or add a #k=<K> header",
            ))
        }
    };
    let frame_rate_hz = rate_override.or(header.rate).unwrap_or(DEFAULT_FRAME_RATE_HZ);
    check_frame_rate(frame_rate_hz)?;

    let mut sequences = Vec::new();
    for (line_no, raw) in lines {
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() {
            return Err(Error::EmptyLine { line: line_no });
        }
        let (id, body) = match line.split_once('|') {
            Some((id, body)) => (id.trim().to_string(), body),
            None => (String::new(), line),
        };
        let mut tokens = Vec::new();
        for (position, field) in body.split_whitespace().enumerate() {
            let id_value = field.parse::<u64>().map_err(|_| Error::Parse {
                line: line_no,
                reason: format!("position {position}: {field:?} is not a token id"),
            })?;
            if id_value >= vocab.size() as u64 {
                return Err(Error::TokenOutOfRange {
                    line: line_no,
                    position,
                    id: id_value,
                    vocab_size: vocab.size(),
                });
            }
            tokens.push(id_value as u32);
        }
        if tokens.is_empty() {
            return Err(Error::EmptyLine { line: line_no });
        }
        sequences.push(TokenSequence {
            id,
            tokens,
            frame_rate_hz,
        });
    }
    Ok(Corpus {
        vocab,
        frame_rate_hz,
        sequences,
    })
}

pub fn read_token_corpus(
    path: impl AsRef<Path>,
    vocab: Option<Vocabulary>,
    rate_override: Option<f64>,
) -> Result<Corpus> {
    let path = path.as_ref();
    let text = fsutil::read_to_string(path)?;
    parse_token_corpus(&text, vocab, rate_override).map_err(|e| e.in_file(path))
}

pub fn format_token_corpus(corpus: &Corpus) -> String {
    let mut out = format!("#k={} rate={}\n", corpus.vocab.size(), corpus.frame_rate_hz);
    for seq in &corpus.sequences {
        if !seq.id.is_empty() {
            out.push_str(&seq.id);
            out.push('|');
        }
        let mut first = true;
        for t in &seq.tokens {
            if !first {
                out.push(' ');
            }
            first = false;
            write!(out, "{t}").unwrap();
        }
        out.push('\n');
    }
    out
}

pub fn write_token_corpus(corpus: &Corpus, path: impl AsRef<Path>) -> Result<()> {
    fsutil::atomic_write(path.as_ref(), format_token_corpus(corpus).as_bytes())
}

/// Scale of an entropy trace. `Normalized` values are nats divided by `ln K`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EntropyScale {
    NatsRaw,
    Normalized,
}

impl fmt::Display for EntropyScale {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EntropyScale::NatsRaw => "nats-raw",
            EntropyScale::Normalized => "normalized",
        })
    }
}

impl FromStr for EntropyScale {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nats-raw" | "raw" => Ok(EntropyScale::NatsRaw),
            "normalized" => Ok(EntropyScale::Normalized),
            other => Err(Error::invalid(format!("unknown entropy scale {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EntropyTrace {
    pub id: String,
    pub values: Vec<f64>,
    pub scale: EntropyScale,
}

impl EntropyTrace {
    pub fn new(id: impl Into<String>, values: Vec<f64>, scale: EntropyScale) -> Result<Self> {
        let trace = EntropyTrace {
            id: id.into(),
            values,
            scale,
        };
        trace.check_values()?;
        Ok(trace)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    fn check_values(&self) -> Result<()> {
        if self.values.is_empty() {
            return Err(Error::invalid("entropy trace must not be empty"));
        }
        for (i, &v) in self.values.iter().enumerate() {
            check_entropy_value(v, self.scale, i + 1)?;
        }
        Ok(())
    }

    /// Check the raw-scale upper bound `ln K` for a given vocabulary.
    pub fn validate_for(&self, vocab: Vocabulary) -> Result<()> {
        self.check_values()?;
        let bound = match self.scale {
            EntropyScale::NatsRaw => vocab.max_entropy(),
            EntropyScale::Normalized => 1.0,
        };
        if let Some((i, v)) = self
            .values
            .iter()
            .enumerate()
            .find(|(_, &v)| v > bound + ENTROPY_TOLERANCE)
        {
            return Err(Error::invalid(format!(
                "trace value {v} at position {i} exceeds the maximum {bound} for K={}",
                vocab.size()
            )));
        }
        Ok(())
    }

    /// Check that the trace pairs with `seq` position by position.
    pub fn check_pairs_with(&self, seq: &TokenSequence) -> Result<()> {
        if self.values.len() != seq.len() {
            return Err(Error::LengthMismatch {
                expected: seq.len(),
                found: self.values.len(),
            });
        }
        Ok(())
    }
}

fn check_entropy_value(v: f64, scale: EntropyScale, line: usize) -> Result<()> {
    if !v.is_finite() {
        return Err(Error::Parse {
            line,
            reason: format!("entropy value {v} is not finite"),
        });
    }
    if v < 0.0 {
        return Err(Error::NegativeEntropy { line, value: v });
    }
    if scale == EntropyScale::Normalized && v > 1.0 + ENTROPY_TOLERANCE {
        return Err(Error::Parse {
            line,
            reason: format!("normalized entropy {v} exceeds 1"),
        });
    }
    Ok(())
}

/// Parse every trace block in `text`.
pub fn parse_trace_set(text: &str) -> Result<Vec<EntropyTrace>> {
    let mut traces = Vec::new();
    let mut current: Option<(EntropyTrace, usize, usize)> = None;

    let finish = |slot: Option<(EntropyTrace, usize, usize)>, out: &mut Vec<EntropyTrace>| -> Result<()> {
        if let Some((trace, declared, _)) = slot {
            if trace.values.len() != declared {
                return Err(Error::LengthMismatch {
                    expected: declared,
                    found: trace.values.len(),
                });
            }
            out.push(trace);
        }
        Ok(())
    };

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('#') {
            finish(current.take(), &mut traces)?;
            let (scale, n, id) = parse_trace_header(rest, line_no)?;
            current = Some((
                EntropyTrace {
                    id,
                    values: Vec::with_capacity(n),
                    scale,
                },
                n,
                line_no,
            ));
            continue;
        }
        let Some((trace, _, _)) = current.as_mut() else {
            return Err(Error::MalformedHeader {
                line: line_no,
                reason: "value before any #scale= header".into(),
            });
        };
        let v = line.parse::<f64>().map_err(|_| Error::Parse {
            line: line_no,
            reason: format!("{line:?} is not a decimal number"),
        })?;
        check_entropy_value(v, trace.scale, line_no)?;
        trace.values.push(v);
    }
    finish(current.take(), &mut traces)?;
    if traces.iter().any(|t| t.values.is_empty()) {
        return Err(Error::invalid("trace block with n=0"));
    }
    Ok(traces)
}

fn parse_trace_header(rest: &str, line: usize) -> Result<(EntropyScale, usize, String)> {
    let malformed = |reason: String| Error::MalformedHeader { line, reason };
    let mut scale = None;
    let mut n = None;
    let mut id = String::new();
    for field in rest.split_whitespace() {
        let (key, value) = field
            .split_once('=')
            .ok_or_else(|| malformed(format!("expected key=value, got {field:?}")))?;
        match key {
            "scale" => scale = Some(value.parse::<EntropyScale>().map_err(|e| malformed(e.to_string()))?),
            "n" => {
                n = Some(
                    value
                        .parse::<usize>()
                        .map_err(|_| malformed(format!("bad length {value:?}")))?,
                )
            }
            "id" => id = value.to_string(),
            other => return Err(malformed(format!("unknown header key {other:?}"))),
        }
    }
    match (scale, n) {
        (Some(s), Some(n)) => Ok((s, n, id)),
        _ => Err(malformed("trace header needs both scale= and n=".into())),
    }
}

pub fn format_trace(trace: &EntropyTrace, out: &mut String) {
    write!(out, "#scale={} n={}", trace.scale, trace.values.len()).unwrap();
    if !trace.id.is_empty() {
        write!(out, " id={}", trace.id).unwrap();
    }
    out.push('\n');
    for v in &trace.values {
        // Display on f64 is the shortest decimal that round-trips exactly.
        writeln!(out, "{v}").unwrap();
    }
}

pub fn format_trace_set(traces: &[EntropyTrace]) -> String {
    let mut out = String::new();
    for t in traces {
        format_trace(t, &mut out);
    }
    out
}

pub fn write_entropy_trace(trace: &EntropyTrace, path: impl AsRef<Path>) -> Result<()> {
    write_trace_set(std::slice::from_ref(trace), path)
}

pub fn write_trace_set(traces: &[EntropyTrace], path: impl AsRef<Path>) -> Result<()> {
    for t in traces {
        if t.id.contains(char::is_whitespace) {
            return Err(Error::invalid(format!("trace id {:?} contains whitespace", t.id)));
        }
    }
    fsutil::atomic_write(path.as_ref(), format_trace_set(traces).as_bytes())
}

/// Read a file that must contain exactly one trace.
pub fn read_entropy_trace(path: impl AsRef<Path>) -> Result<EntropyTrace> {
    let path = path.as_ref();
    let mut set = read_trace_set(path)?;
    if set.len() != 1 {
        return Err(Error::invalid(format!("expected one trace, file holds {}", set.len())).in_file(path));
    }
    Ok(set.pop().unwrap())
}

pub fn read_trace_set(path: impl AsRef<Path>) -> Result<Vec<EntropyTrace>> {
    let path = path.as_ref();
    let text = fsutil::read_to_string(path)?;
    parse_trace_set(&text).map_err(|e| e.in_file(path))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Tier {
    Word,
    Phoneme,
}

impl fmt::Display for Tier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Tier::Word => "word",
            Tier::Phoneme => "phoneme",
        })
    }
}

impl FromStr for Tier {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "word" | "words" => Ok(Tier::Word),
            "phoneme" | "phone" | "phones" => Ok(Tier::Phoneme),
            other => Err(Error::invalid(format!("unknown tier {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentUnit {
    pub tier: Tier,
    pub label: String,
    pub start_s: f64,
    pub end_s: f64,
}

/// Reference alignment with units grouped by tier, each tier sorted by start.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AlignmentRef {
    pub words: Vec<AlignmentUnit>,
    pub phonemes: Vec<AlignmentUnit>,
}

impl AlignmentRef {
    pub fn from_units(units: Vec<AlignmentUnit>) -> Result<Self> {
        let mut out = AlignmentRef::default();
        for (row, u) in units.into_iter().enumerate() {
            if !(u.start_s.is_finite() && u.end_s.is_finite()) || u.start_s < 0.0 || u.end_s <= u.start_s {
                return Err(Error::Alignment {
                    row: row + 1,
                    reason: format!("need 0 <= start < end, got [{}, {})", u.start_s, u.end_s),
                });
            }
            match u.tier {
                Tier::Word => out.words.push(u),
                Tier::Phoneme => out.phonemes.push(u),
            }
        }
        for tier in [&mut out.words, &mut out.phonemes] {
            tier.sort_by(|a, b| a.start_s.total_cmp(&b.start_s));
            for pair in tier.windows(2) {
                if pair[1].start_s < pair[0].end_s {
                    return Err(Error::Alignment {
                        row: 0,
                        reason: format!(
                            "{} units {:?} [{}, {}) and {:?} [{}, {}) overlap",
                            pair[0].tier,
                            pair[0].label,
                            pair[0].start_s,
                            pair[0].end_s,
                            pair[1].label,
                            pair[1].start_s,
                            pair[1].end_s
                        ),
                    });
                }
            }
        }
        Ok(out)
    }

    pub fn tier(&self, tier: Tier) -> &[AlignmentUnit] {
        match tier {
            Tier::Word => &self.words,
            Tier::Phoneme => &self.phonemes,
        }
    }

    /// Every distinct unit start or end time in the tier, ascending.
    pub fn boundaries(&self, tier: Tier) -> Vec<f64> {
        let mut times: Vec<f64> = self.tier(tier).iter().flat_map(|u| [u.start_s, u.end_s]).collect();
        times.sort_by(f64::total_cmp);
        times.dedup();
        times
    }
}

const ALIGNMENT_HEADER: [&str; 4] = ["tier", "label", "start_s", "end_s"];

pub fn parse_alignment(text: &str) -> Result<AlignmentRef> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = reader.headers().map_err(|e| Error::Alignment {
        row: 0,
        reason: e.to_string(),
    })?;
    if headers.iter().collect::<Vec<_>>() != ALIGNMENT_HEADER {
        return Err(Error::Alignment {
            row: 0,
            reason: format!("expected header {:?}", ALIGNMENT_HEADER.join(",")),
        });
    }
    let mut units = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| Error::Alignment {
            row,
            reason: e.to_string(),
        })?;
        let field = |k: usize| record.get(k).unwrap_or("");
        let num = |k: usize| {
            field(k).parse::<f64>().map_err(|_| Error::Alignment {
                row,
                reason: format!("{:?} is not a time in seconds", field(k)),
            })
        };
        let tier = field(0).parse::<Tier>().map_err(|e| Error::Alignment {
            row,
            reason: e.to_string(),
        })?;
        units.push(AlignmentUnit {
            tier,
            label: field(1).to_string(),
            start_s: num(2)?,
            end_s: num(3)?,
        });
        let u = units.last().unwrap();
        if !(u.start_s >= 0.0 && u.end_s > u.start_s) {
            return Err(Error::Alignment {
                row,
                reason: format!("end {} must exceed start {} (and start >= 0)", u.end_s, u.start_s),
            });
        }
    }
    AlignmentRef::from_units(units)
}

pub fn read_alignment(path: impl AsRef<Path>) -> Result<AlignmentRef> {
    let path = path.as_ref();
    let text = fsutil::read_to_string(path)?;
    parse_alignment(&text).map_err(|e| e.in_file(path))
}

pub fn format_alignment(alignment: &AlignmentRef) -> String {
    let mut out = String::from("tier,label,start_s,end_s\n");
    for u in alignment.words.iter().chain(&alignment.phonemes) {
        writeln!(out, "{},{},{},{}", u.tier, u.label, u.start_s, u.end_s).unwrap();
    }
    out
}
