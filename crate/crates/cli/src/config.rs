//! Harness configuration: YAML file first, command-line flags on top.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use mcq_harness::bias_probe::{DEFAULT_EPSILON, DEFAULT_NULL_PROMPTS};
use mcq_harness::dataset::DatasetFormat;
use mcq_harness::gateway::{Decoding, ModelSpec, Provider, RetryPolicy, SimulatedResponderConfig};
use mcq_harness::protocol::{Condition, ConditionName, DEFAULT_MV_PERMUTATIONS, DEFAULT_REPETITIONS};
use mcq_harness::semantic_spread::Kernel;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

pub const DEFAULT_SEED: u64 = 42;

/// Knobs of the offline responder used when the provider is `simulated`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulatedSection {
    /// Position-bias vector per option count. Missing counts fall back to a
    /// primacy profile with `p_i` proportional to `1/(i+1)`.
    pub position_bias_by_n: BTreeMap<usize, Vec<f64>>,
    pub default_knowledge: f64,
    pub knowledge: BTreeMap<String, f64>,
    pub confusion: f64,
    pub near_miss_decay: f64,
    pub unparseable_rate: f64,
    /// Responder seed; the run seed is used when absent.
    pub seed: Option<u64>,
}

impl Default for SimulatedSection {
    fn default() -> Self {
        Self {
            position_bias_by_n: BTreeMap::new(),
            default_knowledge: 0.5,
            knowledge: BTreeMap::new(),
            confusion: 0.3,
            near_miss_decay: 0.5,
            unparseable_rate: 0.0,
            seed: None,
        }
    }
}

pub fn primacy_profile(n: usize) -> Vec<f64> {
    let w: Vec<f64> = (1..=n).map(|i| 1.0 / i as f64).collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|x| x / s).collect()
}

impl SimulatedSection {
    pub fn responder(&self, n: usize, run_seed: u64) -> SimulatedResponderConfig {
        SimulatedResponderConfig {
            position_bias: self
                .position_bias_by_n
                .get(&n)
                .cloned()
                .unwrap_or_else(|| primacy_profile(n)),
            default_knowledge: self.default_knowledge,
            knowledge: self.knowledge.clone(),
            confusion: self.confusion,
            near_miss_decay: self.near_miss_decay,
            unparseable_rate: self.unparseable_rate,
            seed: self.seed.unwrap_or(run_seed),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum KernelKind {
    Exponential,
    Power,
}

/// Where option embeddings come from: `mock`, `none`, `remote:<model>`, or a
/// path to an embedding JSON-lines file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EmbeddingChoice {
    Mock,
    None,
    Remote(String),
    File(PathBuf),
}

impl EmbeddingChoice {
    pub fn parse(s: &str) -> Self {
        match s {
            "mock" => EmbeddingChoice::Mock,
            "none" | "" => EmbeddingChoice::None,
            _ => match s.strip_prefix("remote:") {
                Some(model) => EmbeddingChoice::Remote(model.to_string()),
                None => EmbeddingChoice::File(PathBuf::from(s)),
            },
        }
    }
}

/// Everything a command needs. Field names double as YAML keys.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HarnessConfig {
    pub model: String,
    /// Inferred from the model name when absent.
    pub provider: Option<Provider>,
    pub base_url: Option<String>,
    pub decoding: Decoding,
    pub rate_limit: f64,
    pub retry: RetryPolicy,
    pub simulated: SimulatedSection,
    /// `mmlu`, `csqa`, `both`, or a dataset file path.
    pub dataset: String,
    /// Directory holding `mmlu.jsonl` and `csqa.jsonl`.
    pub data_dir: PathBuf,
    /// Format of a dataset given by path.
    pub dataset_format: DatasetFormat,
    /// Evaluate a fixed-seed sample of this many items.
    pub sample: Option<usize>,
    pub condition: String,
    pub null_prompts: usize,
    pub epsilon: f64,
    pub repetitions: u32,
    pub mv_permutations: u32,
    pub redraw_per_trial: bool,
    pub kernel: KernelKind,
    pub tau: f64,
    pub seed: u64,
    pub out: PathBuf,
    pub embeddings: String,
    pub mock_embedding_dim: usize,
    pub embedding_base_url: String,
    pub concurrency: usize,
}

impl Default for HarnessConfig {
    fn default() -> Self {
        Self {
            model: "simulated".into(),
            provider: None,
            base_url: None,
            decoding: Decoding::default(),
            rate_limit: 5.0,
            retry: RetryPolicy::default(),
            simulated: SimulatedSection::default(),
            dataset: "both".into(),
            data_dir: PathBuf::from("data"),
            dataset_format: DatasetFormat::GenericJson,
            sample: None,
            condition: "scope".into(),
            null_prompts: DEFAULT_NULL_PROMPTS,
            epsilon: DEFAULT_EPSILON,
            repetitions: DEFAULT_REPETITIONS,
            mv_permutations: DEFAULT_MV_PERMUTATIONS,
            redraw_per_trial: false,
            kernel: KernelKind::Exponential,
            tau: 1.0,
            seed: DEFAULT_SEED,
            out: PathBuf::from("runs"),
            embeddings: "mock".into(),
            mock_embedding_dim: 64,
            embedding_base_url: "https://api.openai.com/v1".into(),
            concurrency: 8,
        }
    }
}

/// A dataset to evaluate, resolved from the `dataset` setting.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetSource {
    pub path: PathBuf,
    pub format: DatasetFormat,
}

impl HarnessConfig {
    pub fn from_yaml(text: &str) -> Result<Self, CliError> {
        serde_yaml::from_str(text).map_err(|e| CliError::Usage(format!("config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_yaml(&text)
    }

    pub fn provider(&self) -> Result<Provider, CliError> {
        self.provider.or_else(|| Provider::infer(&self.model)).ok_or_else(|| {
            CliError::Usage(format!(
                "cannot infer provider for model '{}'; set `provider` in the config",
                self.model
            ))
        })
    }

    pub fn is_simulated(&self) -> Result<bool, CliError> {
        Ok(self.provider()? == Provider::Simulated)
    }

    pub fn model_spec(&self) -> Result<ModelSpec, CliError> {
        let mut spec = ModelSpec::new(self.provider()?, self.model.clone());
        spec.decoding = self.decoding.clone();
        spec.rate_limit = self.rate_limit;
        spec.retry = self.retry.clone();
        spec.base_url = self.base_url.clone();
        spec.validate()?;
        Ok(spec)
    }

    pub fn kernel(&self) -> Result<Kernel, CliError> {
        match self.kernel {
            KernelKind::Exponential => Ok(Kernel::Exponential),
            KernelKind::Power if self.tau.is_finite() && self.tau >= 0.0 => Ok(Kernel::Power { tau: self.tau }),
            KernelKind::Power => Err(CliError::Usage(format!("tau must be >= 0, got {}", self.tau))),
        }
    }

    pub fn condition_name(&self) -> Result<ConditionName, CliError> {
        self.condition
            .parse::<ConditionName>()
            .map_err(|e| CliError::Usage(e.to_string()))
    }

    /// The condition `name` with this config's repetition and kernel settings.
    pub fn condition_for(&self, name: ConditionName) -> Result<Condition, CliError> {
        let mut c = Condition::with_kernel(name, self.kernel()?);
        c.repetitions = self.repetitions;
        c.mv_permutations = self.mv_permutations;
        c.redraw_per_trial = self.redraw_per_trial;
        c.validate()?;
        Ok(c)
    }

    pub fn embedding_choice(&self) -> EmbeddingChoice {
        EmbeddingChoice::parse(&self.embeddings)
    }

    pub fn datasets(&self) -> Vec<DatasetSource> {
        let named = |stem: &str, format| DatasetSource {
            path: self.data_dir.join(format!("{stem}.jsonl")),
            format,
        };
        match self.dataset.as_str() {
            "mmlu" => vec![named("mmlu", DatasetFormat::MmluJson)],
            "csqa" => vec![named("csqa", DatasetFormat::CsqaJson)],
            "both" => vec![
                named("mmlu", DatasetFormat::MmluJson),
                named("csqa", DatasetFormat::CsqaJson),
            ],
            path => vec![DatasetSource {
                path: PathBuf::from(path),
                format: self.dataset_format,
            }],
        }
    }

    /// Checks shared by every command that talks to a model.
    pub fn validate(&self) -> Result<(), CliError> {
        if self.null_prompts == 0 {
            return Err(CliError::Usage("--null-prompts must be >= 1".into()));
        }
        if !self.epsilon.is_finite() || self.epsilon <= 0.0 {
            return Err(CliError::Usage(format!("epsilon must be > 0, got {}", self.epsilon)));
        }
        if self.repetitions == 0 {
            return Err(CliError::Usage("--reps must be >= 1".into()));
        }
        if self.concurrency == 0 {
            return Err(CliError::Usage("concurrency must be >= 1".into()));
        }
        if self.sample == Some(0) {
            return Err(CliError::Usage("--sample must be >= 1".into()));
        }
        self.kernel()?;
        self.model_spec()?;
        Ok(())
    }
}
