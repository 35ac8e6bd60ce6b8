//! Command-line front end: configuration, subcommands and exit codes.

pub mod commands;
pub mod config;
pub mod error;

use std::fmt::Write as _;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use mcq_harness::dataset::DatasetFormat;
use mcq_harness::metrics::ReportFormat;
use mcq_harness::protocol::CallPlan;

pub use commands::{
    cmd_ablate, cmd_estimate_calls, cmd_probe, cmd_report, cmd_run, AblationOutcome, ProbeOutcome, RunOutcome,
};
pub use config::{HarnessConfig, KernelKind};
pub use error::CliError;

#[derive(Debug, Parser)]
#[command(name = "mcq-harness", version, about = "Position-bias resistant multiple-choice evaluation")]
pub struct Cli {
    /// YAML config file; flags given on the command line override it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Measure the model's position bias with null prompts and cache it.
    Probe(CommonArgs),
    /// Evaluate one condition and write a run log plus reports.
    Run(RunArgs),
    /// Run the inverse-placement / semantic-spread ablation.
    Ablate(CommonArgs),
    /// Rebuild reports from existing run logs.
    Report(ReportArgs),
    /// Print the number of model requests each method needs.
    EstimateCalls(EstimateArgs),
}

#[derive(Debug, Args, Default)]
pub struct CommonArgs {
    /// Model name; `simulated` runs offline.
    #[arg(long)]
    pub model: Option<String>,
    /// mmlu, csqa, both, or a dataset file path.
    #[arg(long)]
    pub dataset: Option<String>,
    /// Format of a dataset given by path: mmlu_json, csqa_json, generic_json.
    #[arg(long)]
    pub dataset_format: Option<String>,
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
    /// Evaluate a fixed-seed sample of this many items.
    #[arg(long)]
    pub sample: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub reps: Option<u32>,
    /// Null prompts M for the bias probe.
    #[arg(long = "null-prompts")]
    pub null_prompts: Option<usize>,
    /// Laplace smoothing added to each slot count.
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long, value_enum)]
    pub kernel: Option<KernelKind>,
    /// Exponent of the power kernel.
    #[arg(long)]
    pub tau: Option<f64>,
    /// mock, none, remote:<model>, or an embedding JSON-lines file.
    #[arg(long)]
    pub embeddings: Option<String>,
    /// Output directory for caches, logs and reports.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub concurrency: Option<usize>,
}

impl CommonArgs {
    pub fn apply(&self, cfg: &mut HarnessConfig) -> Result<(), CliError> {
        if let Some(v) = &self.model {
            cfg.model = v.clone();
            cfg.provider = None;
        }
        if let Some(v) = &self.dataset {
            cfg.dataset = v.clone();
        }
        if let Some(v) = &self.dataset_format {
            cfg.dataset_format = v
                .parse::<DatasetFormat>()
                .map_err(|e| CliError::Usage(e.to_string()))?;
        }
        if let Some(v) = &self.data_dir {
            cfg.data_dir = v.clone();
        }
        if self.sample.is_some() {
            cfg.sample = self.sample;
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.reps {
            cfg.repetitions = v;
        }
        if let Some(v) = self.null_prompts {
            cfg.null_prompts = v;
        }
        if let Some(v) = self.epsilon {
            cfg.epsilon = v;
        }
        if let Some(v) = self.kernel {
            cfg.kernel = v;
        }
        if let Some(v) = self.tau {
            cfg.tau = v;
        }
        if let Some(v) = &self.embeddings {
            cfg.embeddings = v.clone();
        }
        if let Some(v) = &self.out {
            cfg.out = v.clone();
        }
        if let Some(v) = self.concurrency {
            cfg.concurrency = v;
        }
        Ok(())
    }
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Evaluation condition, e.g. baseline, scope, lbp, majority_vote.
    #[arg(long)]
    pub condition: Option<String>,
    /// Run the three ablation arms instead of a single condition.
    #[arg(long)]
    pub ablation: bool,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Run log files.
    #[arg(required = true)]
    pub logs: Vec<PathBuf>,
    /// Comma-separated: csv, markdown, svg_bars.
    #[arg(long, value_delimiter = ',', default_value = "csv,markdown")]
    pub format: Vec<String>,
    /// Output path without extension.
    #[arg(long, default_value = "report")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    #[arg(long, default_value_t = 2)]
    pub datasets: u64,
    #[arg(long, default_value_t = 500)]
    pub items: u64,
    #[arg(long, default_value_t = 5)]
    pub reps: u64,
    #[arg(long, default_value_t = 8)]
    pub models: u64,
    #[arg(long = "null-prompts", default_value_t = 1000)]
    pub null_prompts: u64,
    #[arg(long, default_value_t = 10)]
    pub mv_permutations: u64,
}

fn base_config(path: Option<&PathBuf>) -> Result<HarnessConfig, CliError> {
    match path {
        Some(p) => HarnessConfig::load(p),
        None => Ok(HarnessConfig::default()),
    }
}

fn ablation_text(outcomes: &[AblationOutcome]) -> String {
    let mut out = String::new();
    for a in outcomes {
        let _ = writeln!(out, "## {}\n", a.dataset);
        out.push_str(&commands::ablation_table(&a.runs));
        let _ = writeln!(out, "\ntable: {}\n", a.table_path.display());
    }
    out
}

/// Execute a parsed command line and return what should go to stdout.
pub fn execute(cli: Cli) -> Result<String, CliError> {
    let mut cfg = base_config(cli.config.as_ref())?;
    match cli.command {
        Command::Probe(args) => {
            args.apply(&mut cfg)?;
            let mut out = String::new();
            for p in cmd_probe(&cfg)? {
                let probs: Vec<String> = p.distribution.probs.iter().map(|x| format!("{x:.4}")).collect();
                let _ = writeln!(
                    out,
                    "n={} p=[{}] {} {}",
                    p.n,
                    probs.join(", "),
                    if p.reused { "cached" } else { "probed" },
                    p.path.display()
                );
            }
            Ok(out)
        }
        Command::Run(args) => {
            args.common.apply(&mut cfg)?;
            if args.ablation {
                return Ok(ablation_text(&cmd_ablate(&cfg)?));
            }
            if let Some(c) = args.condition {
                cfg.condition = c;
            }
            commands::summarize(&cmd_run(&cfg)?)
        }
        Command::Ablate(args) => {
            args.apply(&mut cfg)?;
            Ok(ablation_text(&cmd_ablate(&cfg)?))
        }
        Command::Report(args) => {
            let formats = args
                .format
                .iter()
                .map(|f| f.parse::<ReportFormat>().map_err(CliError::Usage))
                .collect::<Result<Vec<_>, _>>()?;
            let paths = cmd_report(&args.logs, &formats, &args.out)?;
            Ok(paths.iter().map(|p| format!("{}\n", p.display())).collect())
        }
        Command::EstimateCalls(a) => Ok(cmd_estimate_calls(&CallPlan {
            datasets: a.datasets,
            items: a.items,
            repetitions: a.reps,
            models: a.models,
            null_prompts: a.null_prompts,
            mv_permutations: a.mv_permutations,
        })),
    }
}

/// Parse `args` (program name first) and execute, mapping failures to exit
/// codes: 0 success, 1 usage, 2 provider failure, 3 data error.
pub fn run_cli<I, T>(args: I) -> (i32, String, String)
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let text = e.render().to_string();
            return if code == 0 { (0, text, String::new()) } else { (1, String::new(), text) };
        }
    };
    match execute(cli) {
        Ok(out) => (0, out, String::new()),
        Err(e) => (e.exit_code(), String::new(), format!("error: {e}\n")),
    }
}
