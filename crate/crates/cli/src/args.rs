use std::net::IpAddr;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use llmconf_core::serving_modes::Mode;

#[derive(Debug, Parser)]
#[command(name = "llmconf", version, about = "Find SLA-compliant LLM serving configurations")]
pub struct Cli {
    /// Log verbosity on stderr (error, warn, info, debug, trace).
    #[arg(long, global = true, default_value = "warn", env = "LLMCONF_LOG")]
    pub log: String,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic roofline database covering the given models.
    Dbgen(DbgenArgs),
    /// Check a database file for invariant violations and coverage gaps.
    Dbcheck(DbcheckArgs),
    /// Predict one configuration, or one engine step with `estimate step`.
    Estimate(EstimateArgs),
    /// Search parallelism, batch size and serving mode for the workload.
    Search(SearchArgs),
    /// Write a launch file for one entry of a search report.
    Generate(GenerateArgs),
    /// Run the HTTP API.
    Serve(ServeArgs),
    /// Convert a search report to plot-ready CSV.
    Export(ExportArgs),
    /// Dump the sampled MoE expert load as CSV.
    MoeLoad(MoeLoadArgs),
}

#[derive(Debug, Args)]
pub struct DbgenArgs {
    #[arg(long)]
    pub hardware: PathBuf,
    /// Model descriptor; repeat to cover several models.
    #[arg(long = "model", required = true)]
    pub models: Vec<PathBuf>,
    /// Candidate-space overrides (YAML) limiting the layouts covered.
    #[arg(long)]
    pub space: Option<PathBuf>,
    #[arg(long, default_value = "trtllm")]
    pub backend: String,
    #[arg(long, default_value = "1.0.0")]
    pub backend_version: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct DbcheckArgs {
    #[arg(long, env = "LLMCONF_DB")]
    pub db: PathBuf,
    /// Also report grids this model would need for the default space.
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long, requires = "model")]
    pub workload: Option<PathBuf>,
}

/// Search inputs.
#[derive(Debug, Args)]
pub struct Inputs {
    #[arg(long, env = "LLMCONF_DB")]
    pub db: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub workload: PathBuf,
    /// Override a workload field, e.g. `--set isl=2048 --set moe_load.alpha=0.5`.
    /// Keys under `space.` override the candidate space.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub sets: Vec<String>,
}

#[derive(Debug, Args)]
#[command(args_conflicts_with_subcommands = true, subcommand_negates_reqs = true)]
pub struct EstimateArgs {
    #[command(subcommand)]
    pub step: Option<StepCommand>,
    #[command(flatten)]
    pub run: EstimateRun,
}

/// Fields are optional only so `estimate step` can omit them.
#[derive(Debug, Args)]
pub struct EstimateRun {
    #[arg(long, env = "LLMCONF_DB", required = true)]
    pub db: Option<PathBuf>,
    #[arg(long, required = true)]
    pub model: Option<PathBuf>,
    #[arg(long, required = true)]
    pub workload: Option<PathBuf>,
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub sets: Vec<String>,
    #[arg(long, value_enum, required = true)]
    pub mode: Option<ModeArg>,
    /// Layout such as `tp=2,dp=2,batch=32`; static and aggregated modes.
    #[arg(long, conflicts_with_all = ["prefill", "decode"])]
    pub config: Option<String>,
    /// Prefill worker layout; disaggregated mode.
    #[arg(long, requires = "decode")]
    pub prefill: Option<String>,
    /// Decode worker layout; disaggregated mode.
    #[arg(long, requires = "prefill")]
    pub decode: Option<String>,
}

#[derive(Debug, Subcommand)]
pub enum StepCommand {
    /// Print the per-operator latency of one engine iteration.
    Step(StepArgs),
}

#[derive(Debug, Args)]
pub struct StepArgs {
    #[arg(long, env = "LLMCONF_DB")]
    pub db: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, default_value = "tp=1")]
    pub config: String,
    #[arg(long, value_enum)]
    pub phase: PhaseArg,
    #[arg(long)]
    pub batch: u64,
    /// Prompt length for prefill, KV length for decode.
    #[arg(long)]
    pub seq: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Static,
    Aggregated,
    Disaggregated,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Static => Mode::Static,
            ModeArg::Aggregated => Mode::Aggregated,
            ModeArg::Disaggregated => Mode::Disaggregated,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PhaseArg {
    Prefill,
    Decode,
}

#[derive(Debug, Args)]
pub struct SearchArgs {
    #[command(flatten)]
    pub inputs: Inputs,
    /// Candidate-space overrides (YAML).
    #[arg(long)]
    pub space: Option<PathBuf>,
    /// Worker threads; all CPUs by default.
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Leave wall-clock timing out of the report.
    #[arg(long)]
    pub omit_timing: bool,
    #[arg(long, default_value_t = llmconf_core::search::DEFAULT_MAX_CANDIDATES)]
    pub max_candidates: usize,
    /// Report path; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write the frontier as CSV.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Pick {
    Best,
    Frontier,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub report: PathBuf,
    /// List to take the entry from.
    #[arg(long, value_enum, default_value = "best")]
    pub pick: Pick,
    #[arg(long, default_value_t = 0)]
    pub index: usize,
    #[arg(long, default_value = "trtllm")]
    pub backend: String,
    /// Profile version; newest available when absent.
    #[arg(long)]
    pub version: Option<String>,
    /// Directory of additional backend profiles.
    #[arg(long)]
    pub backends_dir: Option<PathBuf>,
    /// Launch file path; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long, default_value = "127.0.0.1")]
    pub bind: IpAddr,
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[arg(long)]
    pub report: PathBuf,
    /// One mode's frontier instead of the combined one.
    #[arg(long, value_enum)]
    pub series: Option<ModeArg>,
    /// CSV path; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct MoeLoadArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Workload whose `moe_load` parameters to use; defaults otherwise.
    #[arg(long)]
    pub workload: Option<PathBuf>,
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub sets: Vec<String>,
    /// Tokens in the step.
    #[arg(long)]
    pub tokens: u64,
}
