use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "entroseg", version, about = "Entropy-guided token sequence compression")]
pub struct Cli {
    /// Key-value file of default flag values (`flag-name = value`).
    /// Command-line flags win.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate synthetic corpora and entropy fixtures.
    #[command(subcommand)]
    Synth(SynthCommand),
    /// Train an interpolated n-gram model on a token corpus.
    TrainLm(TrainLmArgs),
    /// Compute per-position entropy traces.
    Entropy(EntropyArgs),
    /// Segment traces (or token sequences) into groups.
    Segment(SegmentArgs),
    /// Find the threshold that hits a target token rate.
    Calibrate(CalibrateArgs),
    /// Aggregate each group into one vector.
    Encode(EncodeArgs),
    /// Compression statistics of a segmentation file.
    Stats(StatsArgs),
    /// Boundary alignment against reference word/phoneme alignments.
    AlignEval(AlignEvalArgs),
    /// Time segmentation of precomputed traces.
    Bench(BenchArgs),
}

#[derive(Debug, Subcommand)]
pub enum SynthCommand {
    /// First-order Markov chain corpus.
    Markov(MarkovArgs),
    /// Corpus of runs of repeated ids with a chosen run-length law.
    Runlength(RunlengthArgs),
    /// Entropy-trace fixture set.
    Fixture(FixtureArgs),
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
pub struct MarkovArgs {
    /// Transition matrix as rows separated by `;`, entries by `,`.
    #[arg(long, conflicts_with = "k")]
    pub transition: Option<String>,
    /// Vocabulary size of a random Dirichlet source.
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long, default_value_t = 0.05)]
    pub alpha_min: f64,
    #[arg(long, default_value_t = 2.0)]
    pub alpha_max: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Total tokens over all sequences.
    #[arg(long)]
    pub n_tokens: usize,
    #[arg(long, default_value_t = 1)]
    pub n_sequences: usize,
    #[arg(long, default_value_t = entroseg::corpus::DEFAULT_FRAME_RATE_HZ)]
    pub frame_rate: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
pub struct RunlengthArgs {
    #[arg(long)]
    pub k: usize,
    /// `constant:L`, `geometric:MEAN` or `weighted:W1,W2,...`.
    #[arg(long)]
    pub dist: String,
    #[arg(long)]
    pub n_tokens: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = entroseg::corpus::DEFAULT_FRAME_RATE_HZ)]
    pub frame_rate: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum FixtureKind {
    Six,
    Uniform,
    Stepped,
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
pub struct FixtureArgs {
    #[arg(long, value_enum)]
    pub pattern: FixtureKind,
    #[arg(long, default_value_t = 1)]
    pub traces: usize,
    #[arg(long, default_value_t = 100)]
    pub len: usize,
    #[arg(long, default_value_t = 10)]
    pub steps: usize,
    #[arg(long, default_value_t = 5)]
    pub step_len: usize,
    #[arg(long, default_value_t = 0.1)]
    pub low: f64,
    #[arg(long, default_value_t = 0.9)]
    pub high: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CorpusArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    /// Vocabulary size; required when the corpus has no `#k=` header.
    #[arg(long)]
    pub vocab: Option<usize>,
    /// Frame rate override in Hz.
    #[arg(long)]
    pub frame_rate: Option<f64>,
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
pub struct TrainLmArgs {
    #[command(flatten)]
    pub corpus: CorpusArgs,
    #[arg(long, default_value_t = 4)]
    pub n_max: usize,
    #[arg(long, default_value_t = 0.1)]
    pub delta: f64,
    /// Interpolation weights for orders 0..=n_max, comma separated.
    #[arg(long)]
    pub lambdas: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ScaleArg {
    NatsRaw,
    Normalized,
}

impl From<ScaleArg> for entroseg::EntropyScale {
    fn from(s: ScaleArg) -> Self {
        match s {
            ScaleArg::NatsRaw => entroseg::EntropyScale::NatsRaw,
            ScaleArg::Normalized => entroseg::EntropyScale::Normalized,
        }
    }
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
pub struct EntropyArgs {
    #[command(flatten)]
    pub corpus: CorpusArgs,
    /// Trained model file.
    #[arg(long, group = "source")]
    pub model: Option<PathBuf>,
    /// Use the uniform model over the corpus vocabulary.
    #[arg(long, group = "source")]
    pub uniform: bool,
    /// Trace file computed elsewhere, checked against the corpus.
    #[arg(long, group = "source")]
    pub external: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = ScaleArg::Normalized)]
    pub scale: ScaleArg,
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SegmentMode {
    M1,
    M2,
    M3,
    Dedup,
    Fixed,
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
pub struct SegmentArgs {
    #[arg(long, value_enum)]
    pub mode: SegmentMode,
    /// Entropy traces (modes m1, m2, m3).
    #[arg(long)]
    pub traces: Option<PathBuf>,
    /// Token corpus (modes dedup, fixed).
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub vocab: Option<usize>,
    #[arg(long)]
    pub theta_g: Option<f64>,
    #[arg(long)]
    pub theta_r: Option<f64>,
    /// Calibrate the threshold on the input traces first.
    #[arg(long, conflicts_with_all = ["theta_g", "theta_r", "calibration"])]
    pub target_hz: Option<f64>,
    /// Take the threshold from a calibration report.
    #[arg(long, conflicts_with_all = ["theta_g", "theta_r"])]
    pub calibration: Option<PathBuf>,
    /// Absolute rate tolerance for inline calibration (default 5% of target).
    #[arg(long)]
    pub tol_hz: Option<f64>,
    /// Window length for fixed pooling.
    #[arg(long)]
    pub window: Option<usize>,
    #[arg(long, default_value_t = entroseg::corpus::DEFAULT_FRAME_RATE_HZ)]
    pub frame_rate: f64,
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum CalibrateMode {
    M1,
    M2,
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
pub struct CalibrateArgs {
    #[arg(long)]
    pub traces: PathBuf,
    #[arg(long)]
    pub target_hz: f64,
    #[arg(long, value_enum, default_value_t = CalibrateMode::M1)]
    pub mode: CalibrateMode,
    /// Absolute rate tolerance (default 5% of target).
    #[arg(long)]
    pub tol_hz: Option<f64>,
    /// Average per-utterance rates instead of total groups over total time.
    #[arg(long)]
    pub per_utterance: bool,
    #[arg(long, default_value_t = entroseg::corpus::DEFAULT_FRAME_RATE_HZ)]
    pub frame_rate: f64,
    /// Report file; printed to stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PoolArg {
    Cale,
    Max,
    Average,
    Attention,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Precision {
    F32,
    F64,
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
pub struct EncodeArgs {
    #[command(flatten)]
    pub corpus: CorpusArgs,
    #[arg(long)]
    pub segmentation: PathBuf,
    /// Encoder parameters; otherwise initialized from `--dim/--layers/--seed`.
    #[arg(long, conflicts_with_all = ["dim", "layers", "seed", "init_scale"])]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub init_scale: Option<f64>,
    /// Also write the parameters used.
    #[arg(long)]
    pub save_checkpoint: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = PoolArg::Cale)]
    pub pool: PoolArg,
    /// Attention-pooling query, comma separated (default: all ones).
    #[arg(long)]
    pub query: Option<String>,
    #[arg(long, value_enum, default_value_t = Precision::F64)]
    pub precision: Precision,
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum StatsFormat {
    Kv,
    Json,
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
pub struct StatsArgs {
    #[arg(long)]
    pub segmentation: PathBuf,
    #[arg(long, default_value_t = entroseg::corpus::DEFAULT_FRAME_RATE_HZ)]
    pub frame_rate: f64,
    /// Emit one line per sequence after the corpus total.
    #[arg(long)]
    pub per_sequence: bool,
    #[arg(long, value_enum, default_value_t = StatsFormat::Kv)]
    pub format: StatsFormat,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum DenominatorArg {
    Predicted,
    Reference,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum AnchorArg {
    Start,
    Center,
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
pub struct AlignEvalArgs {
    #[arg(long)]
    pub segmentation: PathBuf,
    /// Reference for a single-record segmentation file.
    #[arg(long, group = "reference")]
    pub alignment: Option<PathBuf>,
    /// Directory of `<id>.csv` references, one per record.
    #[arg(long, group = "reference")]
    pub alignment_dir: Option<PathBuf>,
    #[arg(long, default_value_t = 50.0)]
    pub window_ms: f64,
    #[arg(long, value_enum, default_value_t = DenominatorArg::Predicted)]
    pub denominator: DenominatorArg,
    #[arg(long, value_enum, default_value_t = AnchorArg::Start)]
    pub anchor: AnchorArg,
    /// Count the first and last boundary too.
    #[arg(long)]
    pub include_edges: bool,
    #[arg(long, default_value_t = entroseg::corpus::DEFAULT_FRAME_RATE_HZ)]
    pub frame_rate: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
pub struct BenchArgs {
    #[arg(long)]
    pub traces: PathBuf,
    #[arg(long, value_enum, default_value_t = CalibrateMode::M1)]
    pub mode: CalibrateMode,
    #[arg(long)]
    pub theta: f64,
    #[arg(long, default_value_t = 5)]
    pub repetitions: usize,
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
    #[arg(long, default_value = "unspecified")]
    pub hardware_note: String,
    #[arg(long, value_enum, default_value_t = StatsFormat::Kv)]
    pub format: StatsFormat,
    #[arg(long)]
    pub out: Option<PathBuf>,
}
