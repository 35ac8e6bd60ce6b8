use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use mcq_harness::bias_probe::{estimate_position_bias, BiasCache, BiasDistribution, ProbeOptions};
use mcq_harness::clock::Clock;
use mcq_harness::dataset::{load_dataset, sample_fixed, ItemSet, SampleManifest};
use mcq_harness::gateway::{connect, ModelGateway};
use mcq_harness::metrics::{
    build_report, render_pure_skill_table, render_report, write_report, MetricReport, ReportFormat,
};
use mcq_harness::protocol::{
    estimate_call_volume, run_condition, run_id, CallPlan, Condition, ConditionName, Method, RunContext, RunLog,
};
use mcq_harness::semantic_spread::{load_embedding_file, EmbeddingSource, MockEmbedder, RemoteEmbedder};
use tracing::{info, warn};

use crate::config::{DatasetSource, EmbeddingChoice, HarnessConfig};
use crate::error::CliError;

/// Formats written next to every run.
pub const RUN_REPORT_FORMATS: [ReportFormat; 3] = [ReportFormat::Csv, ReportFormat::Markdown, ReportFormat::SvgBars];

/// The three ablation arms: inverse placement with spread, spread alone,
/// inverse placement alone.
pub const ABLATION_ARMS: [(ConditionName, &str); 3] = [
    (ConditionName::Scope, "IP+SS"),
    (ConditionName::SsOnly, "¬IP+SS"),
    (ConditionName::IpOnly, "IP+¬SS"),
];

fn file_safe(s: &str) -> String {
    s.chars()
        .map(|c| if c.is_ascii_alphanumeric() || "-_.".contains(c) { c } else { '_' })
        .collect()
}

fn clock_for(cfg: &HarnessConfig) -> Result<Clock, CliError> {
    Ok(if cfg.is_simulated()? {
        Clock::deterministic()
    } else {
        Clock::System
    })
}

fn io_data(path: &Path, e: std::io::Error) -> CliError {
    CliError::Data(format!("{}: {e}", path.display()))
}

/// Load one dataset, narrowed to the configured sample if any. The sample's
/// item ids are written beside the outputs.
pub fn load_items(cfg: &HarnessConfig, src: &DatasetSource) -> Result<ItemSet, CliError> {
    let full = load_dataset(&src.path, src.format)?;
    let Some(k) = cfg.sample else { return Ok(full) };
    let sample = sample_fixed(&full, k, cfg.seed)?;
    let dir = cfg.out.join("samples");
    std::fs::create_dir_all(&dir).map_err(|e| io_data(&dir, e))?;
    let path = dir.join(format!("{}_k{k}_seed{}.json", file_safe(&sample.source_name), cfg.seed));
    SampleManifest::for_sample(&sample, cfg.seed).write(&path)?;
    Ok(sample)
}

/// Gateway for items with `n` options. The simulated responder needs its
/// position-bias vector sized to `n`, so gateways are built per option count.
pub fn gateway_for(cfg: &HarnessConfig, n: usize) -> Result<Box<dyn ModelGateway>, CliError> {
    let spec = cfg.model_spec()?;
    let sim = cfg.is_simulated()?.then(|| cfg.simulated.responder(n, cfg.seed));
    Ok(connect(&spec, sim)?)
}

pub fn embedding_source(cfg: &HarnessConfig) -> Result<Option<Box<dyn EmbeddingSource>>, CliError> {
    Ok(match cfg.embedding_choice() {
        EmbeddingChoice::None => None,
        EmbeddingChoice::Mock => {
            if !cfg.is_simulated()? {
                warn!("using lexical mock embeddings with a real model; pass an embedding file for sentence-level SSDs");
            }
            Some(Box::new(MockEmbedder::new(cfg.mock_embedding_dim, cfg.seed)))
        }
        EmbeddingChoice::Remote(model) => Some(Box::new(RemoteEmbedder::from_env(model, &cfg.embedding_base_url)?)),
        EmbeddingChoice::File(path) => Some(Box::new(load_embedding_file(&path)?)),
    })
}

#[derive(Debug, Clone)]
pub struct ProbeOutcome {
    pub n: usize,
    pub path: PathBuf,
    /// The cache already matched and no model calls were made.
    pub reused: bool,
    pub distribution: BiasDistribution,
}

/// Load the bias profile for `n` options from the cache, probing the model
/// only when no cache matches the model, `n`, M and ε.
pub fn ensure_bias(cfg: &HarnessConfig, gateway: &dyn ModelGateway, n: usize) -> Result<ProbeOutcome, CliError> {
    let path = BiasCache::path(&cfg.out, &cfg.model, n);
    if let Some(cache) = BiasCache::load(&path)? {
        if cache.matches(&cfg.model, n, cfg.null_prompts, cfg.epsilon) {
            info!(path = %path.display(), "reusing bias cache");
            return Ok(ProbeOutcome {
                n,
                distribution: cache.distribution()?,
                path,
                reused: true,
            });
        }
    }
    let opts = ProbeOptions {
        concurrency: cfg.concurrency,
        ..ProbeOptions::default()
    };
    info!(n, m = cfg.null_prompts, "probing position bias");
    let dist = estimate_position_bias(gateway, n, cfg.null_prompts, cfg.epsilon, cfg.seed, opts)?;
    BiasCache::new(&cfg.model, &dist, clock_for(cfg)?.now()).save(&path)?;
    Ok(ProbeOutcome {
        n,
        path,
        reused: false,
        distribution: dist,
    })
}

/// A matching cached profile, without probing.
fn cached_bias(cfg: &HarnessConfig, n: usize) -> Result<Option<BiasDistribution>, CliError> {
    let path = BiasCache::path(&cfg.out, &cfg.model, n);
    match BiasCache::load(&path)? {
        Some(c) if c.matches(&cfg.model, n, cfg.null_prompts, cfg.epsilon) => Ok(Some(c.distribution()?)),
        _ => Ok(None),
    }
}

/// Probe every option count present in the configured datasets.
pub fn cmd_probe(cfg: &HarnessConfig) -> Result<Vec<ProbeOutcome>, CliError> {
    cfg.validate()?;
    let mut sizes = Vec::new();
    for src in cfg.datasets() {
        let n = load_items(cfg, &src)?.option_count;
        if !sizes.contains(&n) {
            sizes.push(n);
        }
    }
    sizes
        .into_iter()
        .map(|n| {
            let gw = gateway_for(cfg, n)?;
            ensure_bias(cfg, gw.as_ref(), n)
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub dataset: String,
    pub log_path: PathBuf,
    pub report: MetricReport,
    pub report_paths: Vec<PathBuf>,
}

fn report_stem(cfg: &HarnessConfig, dataset: &str, suffix: &str) -> PathBuf {
    cfg.out
        .join("reports")
        .join(format!("{}_{}_{suffix}", file_safe(&cfg.model), file_safe(dataset)))
}

/// Run one condition on one dataset and write its log and reports.
fn run_on(
    cfg: &HarnessConfig,
    items: &ItemSet,
    condition: &Condition,
    gateway: &dyn ModelGateway,
    bias: Option<&BiasDistribution>,
    embeddings: Option<&dyn EmbeddingSource>,
) -> Result<RunOutcome, CliError> {
    if condition.needs_embeddings() && embeddings.is_none() {
        return Err(CliError::Usage(format!(
            "condition '{}' needs embeddings; pass --embeddings mock|<file>|remote:<model>",
            condition.name
        )));
    }
    let mut ctx = RunContext::new(gateway, cfg.seed);
    ctx.bias = bias;
    ctx.embeddings = embeddings.filter(|_| condition.needs_embeddings());
    ctx.clock = clock_for(cfg)?;
    ctx.concurrency = cfg.concurrency;
    ctx.decoding = Some(cfg.decoding.clone());

    let id = run_id(gateway.model_id(), items, condition, cfg.seed);
    let log_path = cfg.out.join("logs").join(format!(
        "{}_{}_{}_{id}.jsonl",
        file_safe(&cfg.model),
        file_safe(&items.source_name),
        condition.name
    ));
    let log: RunLog = run_condition(items, condition, &ctx, Some(&log_path))?;
    let report = build_report(&log)?;
    let stem = report_stem(cfg, &items.source_name, condition.name.as_str());
    let mut report_paths = Vec::new();
    for format in RUN_REPORT_FORMATS {
        let path = stem.with_extension(format.extension());
        write_report(std::slice::from_ref(&report), format, &path)?;
        report_paths.push(path);
    }
    Ok(RunOutcome {
        dataset: items.source_name.clone(),
        log_path,
        report,
        report_paths,
    })
}

/// Bias profile for a condition: probed (or cached) when the condition
/// places answers by bias, otherwise whatever matching cache exists.
fn bias_for(
    cfg: &HarnessConfig,
    condition: &Condition,
    gateway: &dyn ModelGateway,
    n: usize,
) -> Result<Option<BiasDistribution>, CliError> {
    if condition.needs_bias() {
        Ok(Some(ensure_bias(cfg, gateway, n)?.distribution))
    } else {
        cached_bias(cfg, n)
    }
}

/// Run the configured condition on every configured dataset, one report each.
pub fn cmd_run(cfg: &HarnessConfig) -> Result<Vec<RunOutcome>, CliError> {
    cfg.validate()?;
    let condition = cfg.condition_for(cfg.condition_name()?)?;
    let embeddings = if condition.needs_embeddings() {
        embedding_source(cfg)?
    } else {
        None
    };
    let mut outcomes = Vec::new();
    for src in cfg.datasets() {
        let items = load_items(cfg, &src)?;
        let gw = gateway_for(cfg, items.option_count)?;
        let bias = bias_for(cfg, &condition, gw.as_ref(), items.option_count)?;
        outcomes.push(run_on(cfg, &items, &condition, gw.as_ref(), bias.as_ref(), embeddings.as_deref())?);
    }
    Ok(outcomes)
}

#[derive(Debug, Clone)]
pub struct AblationOutcome {
    pub dataset: String,
    /// One per arm, in [`ABLATION_ARMS`] order.
    pub runs: Vec<RunOutcome>,
    pub table_path: PathBuf,
}

/// Pure-skill comparison of the three ablation arms.
pub fn ablation_table(runs: &[RunOutcome]) -> String {
    let mut out = String::from("| Arm | Condition | AF1 | Lucky rate | Pure skill |\n|---|---|---:|---:|---:|\n");
    let f = |x: Option<f64>| x.map_or_else(|| "n/a".to_string(), |v| format!("{v:.4}"));
    for (run, (_, arm)) in runs.iter().zip(ABLATION_ARMS) {
        let r = &run.report;
        let _ = writeln!(
            out,
            "| {arm} | {} | {:.4} | {} | {} |",
            r.condition,
            r.answer.f1,
            f(r.lucky_rate),
            f(r.pure_skill)
        );
    }
    out
}

/// Run the three ablation arms with one shared bias profile and seed.
pub fn cmd_ablate(cfg: &HarnessConfig) -> Result<Vec<AblationOutcome>, CliError> {
    cfg.validate()?;
    let embeddings = embedding_source(cfg)?;
    let mut outcomes = Vec::new();
    for src in cfg.datasets() {
        let items = load_items(cfg, &src)?;
        let gw = gateway_for(cfg, items.option_count)?;
        let bias = ensure_bias(cfg, gw.as_ref(), items.option_count)?.distribution;
        let mut runs = Vec::new();
        for (name, _) in ABLATION_ARMS {
            let condition = cfg.condition_for(name)?;
            runs.push(run_on(cfg, &items, &condition, gw.as_ref(), Some(&bias), embeddings.as_deref())?);
        }
        let table_path = report_stem(cfg, &items.source_name, "ablation").with_extension("md");
        let reports: Vec<MetricReport> = runs.iter().map(|r| r.report.clone()).collect();
        let mut text = ablation_table(&runs);
        text.push('\n');
        text.push_str(&render_pure_skill_table(&reports));
        std::fs::write(&table_path, text).map_err(|e| io_data(&table_path, e))?;
        outcomes.push(AblationOutcome {
            dataset: items.source_name.clone(),
            runs,
            table_path,
        });
    }
    Ok(outcomes)
}

/// Rebuild reports from finished run logs and write one file per format,
/// named `<stem>.<ext>`.
pub fn cmd_report(logs: &[PathBuf], formats: &[ReportFormat], stem: &Path) -> Result<Vec<PathBuf>, CliError> {
    if logs.is_empty() {
        return Err(CliError::Usage("no run logs given".into()));
    }
    let mut reports = Vec::with_capacity(logs.len());
    for path in logs {
        let log = RunLog::read(path)?;
        if !log.is_complete() {
            warn!(path = %path.display(), "run log has no completion manifest; reporting the items present");
        }
        reports.push(build_report(&log)?);
    }
    let mut written = Vec::new();
    for &format in formats {
        let path = stem.with_extension(format.extension());
        write_report(&reports, format, &path)?;
        written.push(path);
    }
    Ok(written)
}

/// Request counts per method as CSV, ending with the total.
pub fn cmd_estimate_calls(plan: &CallPlan) -> String {
    let mut out = String::from("method,calls\n");
    let mut total = 0;
    for method in Method::ALL {
        let calls = estimate_call_volume(method, plan);
        total += calls;
        let _ = writeln!(out, "{},{calls}", method.as_str());
    }
    let _ = writeln!(out, "total,{total}");
    out
}

/// Markdown for a set of run outcomes, as printed after `run`.
pub fn summarize(runs: &[RunOutcome]) -> Result<String, CliError> {
    let reports: Vec<MetricReport> = runs.iter().map(|r| r.report.clone()).collect();
    let mut out = render_report(&reports, ReportFormat::Markdown)?;
    for r in runs {
        let _ = writeln!(out, "\nlog: {}", r.log_path.display());
        for p in &r.report_paths {
            let _ = writeln!(out, "report: {}", p.display());
        }
    }
    Ok(out)
}
