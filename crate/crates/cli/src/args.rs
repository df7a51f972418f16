use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use margattn::FixedPointNormalization;

#[derive(Debug, Parser)]
#[command(name = "margattn", version, about = "Attention as marginalization over latent edge structures")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Cross attention of queries over keys.
    Attend(AttendArgs),
    /// Self attention over one set of inputs.
    Selfattend(SelfAttendArgs),
    /// Hopfield retrieval, one run per query row.
    Hopfield(HopfieldArgs),
    /// Slot attention.
    Slots(SlotsArgs),
    /// Block-slot attention described by a config file.
    Blockslot(BlockSlotArgs),
    /// Predictive-coding relaxation described by a network file.
    Pcn(PcnArgs),
    /// Hard, top-k and soft attention compared on one model.
    Approx(ApproxArgs),
    /// Brute-force joint marginals against the factorized posterior.
    Oracle(OracleArgs),
}

/// Shared CSV input options.
#[derive(Debug, Args, Clone, Copy)]
pub struct CsvOpts {
    /// Skip the first line of every input CSV.
    #[arg(long)]
    pub header: bool,
}

#[derive(Debug, Args)]
pub struct Projections {
    /// Query projection W_Q (p × d); identity when omitted.
    #[arg(long)]
    pub wq: Option<PathBuf>,
    /// Key projection W_K (p × d); identity when omitted.
    #[arg(long)]
    pub wk: Option<PathBuf>,
    /// Value projection W_V (d_out × d); identity when omitted.
    #[arg(long)]
    pub wv: Option<PathBuf>,
    /// Inverse temperature.
    #[arg(long, default_value_t = 1.0)]
    pub beta: f64,
}

#[derive(Debug, Args)]
pub struct AttendArgs {
    #[arg(long)]
    pub keys: PathBuf,
    #[arg(long)]
    pub queries: PathBuf,
    #[command(flatten)]
    pub proj: Projections,
    /// Output rows, one per query.
    #[arg(long)]
    pub out: PathBuf,
    /// Posterior (attention) matrix, one row per query.
    #[arg(long)]
    pub posterior: Option<PathBuf>,
    #[command(flatten)]
    pub csv: CsvOpts,
}

#[derive(Debug, Args)]
pub struct SelfAttendArgs {
    #[arg(long)]
    pub inputs: PathBuf,
    #[command(flatten)]
    pub proj: Projections,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub posterior: Option<PathBuf>,
    #[command(flatten)]
    pub csv: CsvOpts,
}

#[derive(Debug, Args)]
pub struct SolverOpts {
    /// Stop once |F_t - F_{t-1}| falls below this.
    #[arg(long, default_value_t = margattn::vfe::DEFAULT_TOL)]
    pub tol: f64,
    #[arg(long, default_value_t = margattn::vfe::DEFAULT_MAX_ITER)]
    pub max_iter: usize,
}

#[derive(Debug, Args)]
pub struct HopfieldArgs {
    /// Stored patterns, one per row.
    #[arg(long)]
    pub patterns: PathBuf,
    /// Queries, one per row; each is retrieved independently.
    #[arg(long)]
    pub query: PathBuf,
    #[arg(long, default_value_t = 1.0)]
    pub beta: f64,
    #[arg(long)]
    pub wq: Option<PathBuf>,
    #[arg(long)]
    pub wk: Option<PathBuf>,
    #[command(flatten)]
    pub solver: SolverOpts,
    /// Retrieved vectors, one row per query.
    #[arg(long)]
    pub out: PathBuf,
    /// Rows `query, iteration, F, grad_norm`.
    #[arg(long)]
    pub trace: Option<PathBuf>,
    /// Worker threads for independent queries; output order is fixed.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    #[command(flatten)]
    pub csv: CsvOpts,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum NormArg {
    Raw,
    Weighted,
}

impl From<NormArg> for FixedPointNormalization {
    fn from(n: NormArg) -> Self {
        match n {
            NormArg::Raw => FixedPointNormalization::RawSum,
            NormArg::Weighted => FixedPointNormalization::WeightedMean,
        }
    }
}

#[derive(Debug, Args)]
pub struct SlotsArgs {
    #[arg(long)]
    pub inputs: PathBuf,
    #[arg(long)]
    pub num_slots: usize,
    /// Bilinear coupling W (d × d); identity when omitted.
    #[arg(long)]
    pub w: Option<PathBuf>,
    #[arg(long, default_value_t = 1.0)]
    pub beta: f64,
    /// Seed for the default slot initialization.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Initial slots (num_slots × d); overrides --seed.
    #[arg(long)]
    pub init: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = NormArg::Weighted)]
    pub norm: NormArg,
    #[command(flatten)]
    pub solver: SolverOpts,
    /// Final slots, one per row.
    #[arg(long)]
    pub out: PathBuf,
    /// Most responsible slot per input, one per line.
    #[arg(long)]
    pub assign: Option<PathBuf>,
    /// Rows `iteration, F, grad_norm`.
    #[arg(long)]
    pub trace: Option<PathBuf>,
    #[command(flatten)]
    pub csv: CsvOpts,
}

#[derive(Debug, Args)]
pub struct BlockSlotArgs {
    /// `key = value` file, see the README for keys.
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub assign: Option<PathBuf>,
    #[arg(long)]
    pub trace: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PcnArgs {
    /// `key = value` network file.
    #[arg(long)]
    pub network: PathBuf,
    /// Values clamped on layer 0 (one row or one column).
    #[arg(long)]
    pub observations: PathBuf,
    #[arg(long, default_value_t = 100)]
    pub steps: usize,
    #[arg(long, default_value_t = 1e-2)]
    pub step_size: f64,
    /// Final node values, one row per layer.
    #[arg(long)]
    pub out: PathBuf,
    /// Rows `step, F`.
    #[arg(long)]
    pub trace: Option<PathBuf>,
    #[command(flatten)]
    pub csv: CsvOpts,
}

#[derive(Debug, Args)]
pub struct ApproxArgs {
    /// Model file.
    #[arg(long)]
    pub instance: PathBuf,
    /// Comma-separated: soft, hard, top<k>.
    #[arg(long, default_value = "soft,hard")]
    pub methods: String,
    /// Monte-Carlo samples for `hard`.
    #[arg(long, default_value_t = 10_000)]
    pub samples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Report CSV with a header row.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct OracleArgs {
    /// Model file.
    #[arg(long)]
    pub model: PathBuf,
    /// Rows `edge_var, candidate, factorized, joint`; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}
