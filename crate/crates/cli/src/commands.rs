use std::path::Path;

use rayon::prelude::*;

use entroseg::cale::{self, CaleParams, GroupEmbeddings, Pooling};
use entroseg::corpus::{self, Corpus, EntropyTrace, Vocabulary};
use entroseg::lm::{self, BackoffConfig, UniformModel};
use entroseg::metrics::{self, AlignOptions, AlignmentDenominator, BoundaryAnchor, BoundaryTimeOptions, TierTally};
use entroseg::segmenter::{
    self, BoundaryCriterion, Calibration, CalibrationConfig, CalibrationMode, RateAggregation, SegmentationRecord,
};
use entroseg::synth::{self, FixturePattern, MarkovSource, RunLength};
use entroseg::{Error, PredictiveModel, Result, Scalar, Tier};

use crate::args::*;

const DEFAULT_DIM: usize = 16;
const DEFAULT_LAYERS: usize = 2;
const DEFAULT_INIT_SCALE: f64 = 1.0;
const DEFAULT_TOL_FRACTION: f64 = 0.05;

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::Synth(SynthCommand::Markov(a)) => synth_markov(a),
        Command::Synth(SynthCommand::Runlength(a)) => synth_runlength(a),
        Command::Synth(SynthCommand::Fixture(a)) => synth_fixture(a),
        Command::TrainLm(a) => train_lm(a),
        Command::Entropy(a) => entropy(a),
        Command::Segment(a) => segment(a),
        Command::Calibrate(a) => calibrate(a),
        Command::Encode(a) => encode(a),
        Command::Stats(a) => stats(a),
        Command::AlignEval(a) => align_eval(a),
        Command::Bench(a) => bench(a),
    }
}

fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}

/// Run `f` on a dedicated pool of `workers` threads.
fn with_workers<R: Send>(workers: usize, f: impl FnOnce() -> R + Send) -> Result<R> {
    if workers == 0 {
        return Err(invalid("--workers must be at least 1"));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Invariant(format!("cannot start worker pool: {e}")))?;
    Ok(pool.install(f))
}

fn emit(text: &str, out: Option<&Path>) -> Result<()> {
    match out {
        Some(path) => entroseg::fsutil::atomic_write(path, text.as_bytes()),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn parse_list(text: &str, what: &str) -> Result<Vec<f64>> {
    text.split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| invalid(format!("{what}: {s:?} is not a number")))
        })
        .collect()
}

fn read_corpus(a: &CorpusArgs) -> Result<Corpus> {
    let vocab = a.vocab.map(Vocabulary::new).transpose()?;
    corpus::read_token_corpus(&a.corpus, vocab, a.frame_rate)
}

fn default_tol(target: f64, tol: Option<f64>) -> f64 {
    tol.unwrap_or(DEFAULT_TOL_FRACTION * target)
}

fn synth_markov(a: MarkovArgs) -> Result<()> {
    let source = match (&a.transition, a.k) {
        (Some(t), None) => {
            let rows = t
                .split(';')
                .map(|row| parse_list(row, "--transition"))
                .collect::<Result<Vec<_>>>()?;
            MarkovSource::from_rows(rows, a.seed)?
        }
        (None, Some(k)) => MarkovSource::random_dirichlet(k, a.alpha_min, a.alpha_max, a.seed)?,
        _ => return Err(invalid("give either --transition or --k")),
    };
    let sequences = synth::gen_markov(&source, a.n_tokens, a.n_sequences, a.frame_rate)?;
    let corpus = Corpus {
        vocab: source.vocab(),
        frame_rate_hz: a.frame_rate,
        sequences,
    };
    corpus::write_token_corpus(&corpus, &a.out)
}

fn parse_run_length(text: &str) -> Result<RunLength> {
    let (kind, value) = text
        .split_once(':')
        .ok_or_else(|| invalid(format!("--dist {text:?}: expected kind:value")))?;
    match kind {
        "constant" => value
            .parse()
            .map(RunLength::Constant)
            .map_err(|_| invalid(format!("--dist {text:?}: bad run length"))),
        "geometric" => value
            .parse()
            .map(|mean| RunLength::Geometric { mean })
            .map_err(|_| invalid(format!("--dist {text:?}: bad mean"))),
        "weighted" => parse_list(value, "--dist").map(RunLength::Weighted),
        _ => Err(invalid(format!("--dist {text:?}: unknown kind {kind:?}"))),
    }
}

fn synth_runlength(a: RunlengthArgs) -> Result<()> {
    let vocab = Vocabulary::new(a.k)?;
    let dist = parse_run_length(&a.dist)?;
    let seq = synth::gen_runlength(vocab, &dist, a.n_tokens, a.seed, a.frame_rate)?;
    let corpus = Corpus {
        vocab,
        frame_rate_hz: a.frame_rate,
        sequences: vec![seq],
    };
    corpus::write_token_corpus(&corpus, &a.out)
}

fn synth_fixture(a: FixtureArgs) -> Result<()> {
    let pattern = match a.pattern {
        FixtureKind::Six => FixturePattern::SixValue,
        FixtureKind::Uniform => FixturePattern::Uniform {
            traces: a.traces,
            len: a.len,
        },
        FixtureKind::Stepped => FixturePattern::Stepped {
            steps: a.steps,
            step_len: a.step_len,
            low: a.low,
            high: a.high,
        },
    };
    let traces = synth::gen_entropy_fixture(&pattern, a.seed)?;
    corpus::write_trace_set(&traces, &a.out)
}

fn train_lm(a: TrainLmArgs) -> Result<()> {
    let corpus = read_corpus(&a.corpus)?;
    let config = match &a.lambdas {
        Some(l) => BackoffConfig::new(a.n_max, a.delta, parse_list(l, "--lambdas")?)?,
        None => BackoffConfig::uniform(a.n_max, a.delta)?,
    };
    let model = lm::train_backoff(&corpus.sequences, corpus.vocab, config)?;
    lm::save_model(&model, &a.out)
}

fn entropy(a: EntropyArgs) -> Result<()> {
    let corpus = read_corpus(&a.corpus)?;
    let scale = a.scale.into();
    let traces = if let Some(path) = &a.model {
        let model = lm::load_model(path)?;
        if model.vocab() != corpus.vocab {
            return Err(invalid(format!(
                "model vocabulary {} differs from corpus vocabulary {}",
                model.vocab().size(),
                corpus.vocab.size()
            )));
        }
        with_workers(a.workers, || lm::entropy_traces(&model, &corpus.sequences, scale))??
    } else if a.uniform {
        let model = UniformModel { vocab: corpus.vocab };
        with_workers(a.workers, || lm::entropy_traces(&model, &corpus.sequences, scale))??
    } else if let Some(path) = &a.external {
        let traces = corpus::read_trace_set(path)?;
        for t in &traces {
            t.validate_for(corpus.vocab).map_err(|e| e.in_file(path))?;
        }
        lm::pair_external_traces(&corpus.sequences, traces).map_err(|e| e.in_file(path))?
    } else {
        return Err(invalid("give one of --model, --uniform or --external"));
    };
    corpus::write_trace_set(&traces, &a.out)
}

/// Threshold for a single-criterion mode from explicit, calibrated or
/// reported values.
fn resolve_theta(
    a: &SegmentArgs,
    mode: CalibrationMode,
    explicit: Option<f64>,
    traces: &[EntropyTrace],
) -> Result<f64> {
    if let Some(t) = explicit {
        return Ok(t);
    }
    if let Some(target) = a.target_hz {
        let config = CalibrationConfig {
            mode,
            target_rate_hz: target,
            frame_rate_hz: a.frame_rate,
            tol_hz: default_tol(target, a.tol_hz),
            aggregation: RateAggregation::Corpus,
        };
        return Ok(segmenter::calibrate_threshold(traces, &config)?.theta);
    }
    if let Some(path) = &a.calibration {
        let text = entroseg::fsutil::read_to_string(path)?;
        let report = segmenter::parse_calibration_report(&text).map_err(|e| e.in_file(path))?;
        if report.mode != mode {
            return Err(invalid(format!(
                "calibration report is for mode {}, segmenting with {mode}",
                report.mode
            )));
        }
        if let Some(t) = traces.first() {
            if t.scale != report.scale {
                return Err(invalid(format!(
                    "calibration report is on the {} scale, traces are {}",
                    report.scale, t.scale
                )));
            }
        }
        return Ok(report.theta);
    }
    Err(invalid(format!(
        "mode {mode} needs a threshold, --target-hz or --calibration"
    )))
}

fn segment(a: SegmentArgs) -> Result<()> {
    let records = match a.mode {
        SegmentMode::M1 | SegmentMode::M2 | SegmentMode::M3 => {
            let path = a.traces.as_ref().ok_or_else(|| invalid("this mode needs --traces"))?;
            let traces = corpus::read_trace_set(path)?;
            let scale = traces
                .first()
                .map(|t| t.scale)
                .ok_or_else(|| invalid("trace file is empty").in_file(path))?;
            let criterion = match a.mode {
                SegmentMode::M1 => {
                    if a.theta_r.is_some() {
                        return Err(invalid("mode m1 takes --theta-g, not --theta-r"));
                    }
                    BoundaryCriterion::global(resolve_theta(&a, CalibrationMode::Global, a.theta_g, &traces)?, scale)?
                }
                SegmentMode::M2 => {
                    if a.theta_g.is_some() {
                        return Err(invalid("mode m2 takes --theta-r, not --theta-g"));
                    }
                    BoundaryCriterion::relative(
                        resolve_theta(&a, CalibrationMode::Relative, a.theta_r, &traces)?,
                        scale,
                    )?
                }
                _ => match (a.theta_g, a.theta_r) {
                    (Some(g), Some(r)) => BoundaryCriterion::combined(g, r, scale)?,
                    _ => return Err(invalid("mode m3 needs both --theta-g and --theta-r")),
                },
            };
            let segms = with_workers(a.workers, || segmenter::segment_all(&traces, &criterion))??;
            traces
                .into_iter()
                .zip(segms)
                .map(|(t, segmentation)| SegmentationRecord { id: t.id, segmentation })
                .collect::<Vec<_>>()
        }
        SegmentMode::Dedup | SegmentMode::Fixed => {
            let path = a.corpus.as_ref().ok_or_else(|| invalid("this mode needs --corpus"))?;
            let vocab = a.vocab.map(Vocabulary::new).transpose()?;
            let corpus = corpus::read_token_corpus(path, vocab, None)?;
            let window = match a.mode {
                SegmentMode::Fixed => Some(a.window.ok_or_else(|| invalid("mode fixed needs --window"))?),
                _ => None,
            };
            corpus
                .sequences
                .iter()
                .map(|s| {
                    let segmentation = match window {
                        Some(w) => segmenter::fixed_pool_segment(s.len(), w)?,
                        None => segmenter::deduplicate(s),
                    };
                    Ok(SegmentationRecord {
                        id: s.id.clone(),
                        segmentation,
                    })
                })
                .collect::<Result<Vec<_>>>()?
        }
    };
    segmenter::write_segmentations(&records, &a.out)
}

fn calibrate(a: CalibrateArgs) -> Result<()> {
    let traces = corpus::read_trace_set(&a.traces)?;
    let config = CalibrationConfig {
        mode: match a.mode {
            CalibrateMode::M1 => CalibrationMode::Global,
            CalibrateMode::M2 => CalibrationMode::Relative,
        },
        target_rate_hz: a.target_hz,
        frame_rate_hz: a.frame_rate,
        tol_hz: default_tol(a.target_hz, a.tol_hz),
        aggregation: if a.per_utterance {
            RateAggregation::PerUtterance
        } else {
            RateAggregation::Corpus
        },
    };
    let calibration: Calibration = segmenter::calibrate_threshold(&traces, &config)?;
    emit(&segmenter::format_calibration_report(&calibration), a.out.as_deref())
}

fn encode(a: EncodeArgs) -> Result<()> {
    match a.precision {
        Precision::F32 => encode_as::<f32>(&a),
        Precision::F64 => encode_as::<f64>(&a),
    }
}

fn encode_as<T: Scalar>(a: &EncodeArgs) -> Result<()> {
    let corpus = read_corpus(&a.corpus)?;
    let records = segmenter::read_segmentations(&a.segmentation)?;
    if records.len() != corpus.sequences.len() {
        return Err(Error::LengthMismatch {
            expected: corpus.sequences.len(),
            found: records.len(),
        }
        .in_file(&a.segmentation));
    }
    for (seq, rec) in corpus.sequences.iter().zip(&records) {
        if !seq.id.is_empty() && !rec.id.is_empty() && seq.id != rec.id {
            return Err(invalid(format!(
                "segmentation id {:?} does not match sequence id {:?}",
                rec.id, seq.id
            )));
        }
        rec.segmentation.check_len(seq.len())?;
    }

    let params: CaleParams<T> = match &a.checkpoint {
        Some(path) => cale::read_checkpoint(path)?,
        None => cale::init_params(
            corpus.vocab.size(),
            a.dim.unwrap_or(DEFAULT_DIM),
            a.layers.unwrap_or(DEFAULT_LAYERS),
            a.seed.unwrap_or(0),
            a.init_scale.unwrap_or(DEFAULT_INIT_SCALE),
        )?,
    };
    if params.vocab_size() < corpus.vocab.size() {
        return Err(invalid(format!(
            "encoder covers {} ids, corpus vocabulary is {}",
            params.vocab_size(),
            corpus.vocab.size()
        )));
    }
    if a.query.is_some() && a.pool != PoolArg::Attention {
        return Err(invalid("--query only applies to --pool attention"));
    }
    let query: Vec<T> = match &a.query {
        Some(q) => parse_list(q, "--query")?.into_iter().map(T::of).collect(),
        None => vec![T::one(); params.dim()],
    };

    let encode_one = |seq: &corpus::TokenSequence, rec: &SegmentationRecord| -> Result<GroupEmbeddings<T>> {
        let id = if rec.id.is_empty() {
            seq.id.clone()
        } else {
            rec.id.clone()
        };
        if a.pool == PoolArg::Cale {
            let mut out = cale::forward(&params, &seq.tokens, &rec.segmentation, false)?.embeddings;
            out.id = id;
            return Ok(out);
        }
        let emb = cale::embed(&seq.tokens, &params)?;
        let mode = match a.pool {
            PoolArg::Max => Pooling::Max,
            PoolArg::Average => Pooling::Average,
            _ => Pooling::Attention { query: &query },
        };
        Ok(GroupEmbeddings {
            id,
            layers: 0,
            vectors: cale::pool_aggregate(&emb, &rec.segmentation, mode)?,
        })
    };
    let outputs = with_workers(a.workers, || {
        corpus
            .sequences
            .par_iter()
            .zip(records.par_iter())
            .map(|(s, r)| encode_one(s, r))
            .collect::<Result<Vec<_>>>()
    })??;

    if let Some(path) = &a.save_checkpoint {
        cale::write_checkpoint(&params, path)?;
    }
    cale::write_group_embeddings(&outputs, &a.out)
}

fn stats(a: StatsArgs) -> Result<()> {
    let records = segmenter::read_segmentations(&a.segmentation)?;
    let segms: Vec<_> = records.iter().map(|r| r.segmentation.clone()).collect();
    let total = metrics::corpus_compression_stats(&segms, a.frame_rate);
    let mut text = String::new();
    match a.format {
        StatsFormat::Kv => {
            text.push_str(&total.to_string());
            if a.per_sequence {
                for r in &records {
                    let s = metrics::compression_stats(&r.segmentation, a.frame_rate);
                    text.push_str(&format!(
                        "sequence id={} tokens={} groups={} token_rate_hz={} avg_span_ms={}\n",
                        r.id, s.tokens, s.groups, s.token_rate_hz, s.avg_span_ms
                    ));
                }
            }
        }
        StatsFormat::Json => {
            text.push_str(&json_line(&total)?);
            if a.per_sequence {
                for r in &records {
                    let s = metrics::compression_stats(&r.segmentation, a.frame_rate);
                    let mut value = serde_json::to_value(&s).map_err(|e| Error::Invariant(e.to_string()))?;
                    value["id"] = serde_json::Value::String(r.id.clone());
                    text.push_str(&json_line(&value)?);
                }
            }
        }
    }
    emit(&text, a.out.as_deref())
}

fn json_line<S: serde::Serialize>(value: &S) -> Result<String> {
    serde_json::to_string(value)
        .map(|s| s + "\n")
        .map_err(|e| Error::Invariant(e.to_string()))
}

fn align_eval(a: AlignEvalArgs) -> Result<()> {
    let records = segmenter::read_segmentations(&a.segmentation)?;
    let references = match (&a.alignment, &a.alignment_dir) {
        (Some(path), None) => {
            if records.len() != 1 {
                return Err(invalid(format!(
                    "--alignment scores one record, the segmentation file has {}; use --alignment-dir",
                    records.len()
                )));
            }
            vec![corpus::read_alignment(path)?]
        }
        (None, Some(dir)) => records
            .iter()
            .map(|r| {
                if r.id.is_empty() {
                    return Err(invalid(
                        "--alignment-dir needs every segmentation record to carry an id",
                    ));
                }
                corpus::read_alignment(dir.join(format!("{}.csv", r.id)))
            })
            .collect::<Result<Vec<_>>>()?,
        _ => return Err(invalid("give --alignment or --alignment-dir")),
    };
    let opts = AlignOptions {
        window_ms: a.window_ms,
        denominator: match a.denominator {
            DenominatorArg::Predicted => AlignmentDenominator::Predicted,
            DenominatorArg::Reference => AlignmentDenominator::Reference,
        },
    };
    let time_opts = BoundaryTimeOptions {
        include_edges: a.include_edges,
        anchor: match a.anchor {
            AnchorArg::Start => BoundaryAnchor::FrameStart,
            AnchorArg::Center => BoundaryAnchor::FrameCenter,
        },
    };

    let mut word = TierTally::default();
    let mut phoneme = TierTally::default();
    let mut pooled = TierTally::default();
    for (rec, reference) in records.iter().zip(&references) {
        let pred = metrics::boundary_times(&rec.segmentation, a.frame_rate, time_opts);
        let w = reference.boundaries(Tier::Word);
        let p = reference.boundaries(Tier::Phoneme);
        if w.is_empty() || p.is_empty() {
            return Err(invalid(format!(
                "reference for {:?} lacks a word or phoneme tier",
                rec.id
            )));
        }
        word.merge(&metrics::tally(&pred, &w, opts.window_ms)?);
        phoneme.merge(&metrics::tally(&pred, &p, opts.window_ms)?);
        let mut both = w;
        both.extend(p);
        pooled.merge(&metrics::tally(&pred, &both, opts.window_ms)?);
    }
    let scores = [
        (Tier::Word, word.score(opts.denominator)),
        (Tier::Phoneme, phoneme.score(opts.denominator)),
    ];
    let mut text = metrics::format_alignment_report(&scores, opts.window_ms, opts.denominator);
    text.push_str(&format!("sequences={}\n", records.len()));
    match pooled.mtd_ms() {
        Some(m) => text.push_str(&format!("mtd_ms={m}\n")),
        None => text.push_str("mtd_ms=none\n"),
    }
    emit(&text, a.out.as_deref())
}

fn bench(a: BenchArgs) -> Result<()> {
    let traces = corpus::read_trace_set(&a.traces)?;
    let scale = traces
        .first()
        .map(|t| t.scale)
        .ok_or_else(|| invalid("trace file is empty").in_file(&a.traces))?;
    let criterion = match a.mode {
        CalibrateMode::M1 => BoundaryCriterion::global(a.theta, scale)?,
        CalibrateMode::M2 => BoundaryCriterion::relative(a.theta, scale)?,
    };
    let config = metrics::BenchConfig {
        repetitions: a.repetitions,
        workers: a.workers,
        hardware_note: a.hardware_note.clone(),
    };
    let report = metrics::bench_segment(&traces, &criterion, &config)?;
    let text = match a.format {
        StatsFormat::Kv => report.to_string(),
        StatsFormat::Json => json_line(&report)?,
    };
    emit(&text, a.out.as_deref())
}
