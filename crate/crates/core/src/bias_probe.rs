//! Position-bias estimation from null prompts, inverse-bias placement, and the
//! lucky rate.
//!
//! A null prompt offers `n` meaningless letter tokens; the slot the model picks
//! reveals its positional preference `P`. Placing answers with probability
//! proportional to `1/p_i` makes the chance of a purely positional hit equal to
//! `n / Σ 1/p_k`, which never exceeds `1/n`.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{MAX_OPTIONS, MIN_OPTIONS};
use crate::gateway::{parse_choice, GatewayError, ModelGateway, QueryRequest, TrialKey};
use crate::rng::{self, label};

pub const DEFAULT_EPSILON: f64 = 1e-3;
pub const DEFAULT_NULL_PROMPTS: usize = 1000;

/// Neutral instruction preceding the null-prompt tokens.
pub const NULL_INSTRUCTION: &str = "You must choose one. If you had to pick, which would it be?";

const SUM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum ProbeError {
    #[error("option count {n} outside {MIN_OPTIONS}..={MAX_OPTIONS}")]
    Arity { n: usize },
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),
    #[error("slot {slot} has zero probability")]
    ZeroProbability { slot: usize },
    #[error("dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("null prompts unparseable: {valid} valid tallies after {trials} trials")]
    AllUnparseable { trials: u64, valid: usize },
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("bias cache {path}: {message}")]
    Cache { path: PathBuf, message: String },
}

fn check_arity(n: usize) -> Result<(), ProbeError> {
    if (MIN_OPTIONS..=MAX_OPTIONS).contains(&n) {
        Ok(())
    } else {
        Err(ProbeError::Arity { n })
    }
}

fn check_probs(p: &[f64]) -> Result<(), ProbeError> {
    if p.len() < MIN_OPTIONS {
        return Err(ProbeError::InvalidDistribution(format!(
            "needs at least {MIN_OPTIONS} entries, got {}",
            p.len()
        )));
    }
    if let Some(x) = p.iter().find(|x| !x.is_finite() || **x < 0.0) {
        return Err(ProbeError::InvalidDistribution(format!("entry {x} is not a probability")));
    }
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > SUM_TOLERANCE {
        return Err(ProbeError::InvalidDistribution(format!("sums to {sum}")));
    }
    Ok(())
}

/// Smoothed per-slot selection probabilities measured from null prompts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasDistribution {
    pub probs: Vec<f64>,
    /// Number of valid tallies `M`.
    pub sample_count: u64,
    pub smoothing: f64,
    pub counts: Vec<u64>,
    /// Trials abandoned after exhausting parse retries (not part of `M`).
    #[serde(default)]
    pub discarded: u64,
}

impl BiasDistribution {
    /// Laplace smoothing: `p_i = (c_i + ε) / (M + nε)`.
    pub fn from_counts(counts: Vec<u64>, epsilon: f64) -> Result<Self, ProbeError> {
        check_arity(counts.len())?;
        if !epsilon.is_finite() || epsilon < 0.0 {
            return Err(ProbeError::InvalidArgument(format!("smoothing {epsilon} must be >= 0")));
        }
        let m: u64 = counts.iter().sum();
        let denom = m as f64 + counts.len() as f64 * epsilon;
        if denom <= 0.0 {
            return Err(ProbeError::InvalidDistribution("no tallies and no smoothing".into()));
        }
        let probs = counts.iter().map(|&c| (c as f64 + epsilon) / denom).collect();
        Ok(Self {
            probs,
            sample_count: m,
            smoothing: epsilon,
            counts,
            discarded: 0,
        })
    }

    /// A distribution given directly, e.g. from configuration.
    pub fn from_probs(probs: Vec<f64>) -> Result<Self, ProbeError> {
        check_arity(probs.len())?;
        check_probs(&probs)?;
        let n = probs.len();
        Ok(Self {
            probs,
            sample_count: 0,
            smoothing: 0.0,
            counts: vec![0; n],
            discarded: 0,
        })
    }

    pub fn n(&self) -> usize {
        self.probs.len()
    }

    pub fn p_min(&self) -> f64 {
        self.probs.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Least-preferred slot; ties go to the lowest index.
    pub fn least_preferred_slot(&self) -> usize {
        argmin(&self.probs)
    }
}

/// Index of the smallest entry, lowest index on ties.
pub fn argmin(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x < v[best] {
            best = i;
        }
    }
    best
}

/// Index of the largest entry, lowest index on ties.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Placement distribution with `q_i ∝ 1/p_i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InverseBias {
    pub probs: Vec<f64>,
    pub source: BiasDistribution,
}

/// Normalized reciprocals of `p`.
pub fn inverse_probs(p: &[f64]) -> Result<Vec<f64>, ProbeError> {
    if let Some(slot) = p.iter().position(|&x| x.is_nan() || x <= 0.0) {
        return Err(ProbeError::ZeroProbability { slot });
    }
    let recip: Vec<f64> = p.iter().map(|&x| 1.0 / x).collect();
    let total: f64 = recip.iter().sum();
    Ok(recip.into_iter().map(|r| r / total).collect())
}

pub fn invert(p: &BiasDistribution) -> Result<InverseBias, ProbeError> {
    Ok(InverseBias {
        probs: inverse_probs(&p.probs)?,
        source: p.clone(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LuckyRate {
    pub value: f64,
    pub lower_bound: f64,
    pub upper_bound: f64,
}

/// `n / Σ 1/p_k`, the lucky rate of inverse-bias placement.
pub fn closed_form_lucky_rate(p: &[f64]) -> Result<f64, ProbeError> {
    if let Some(slot) = p.iter().position(|&x| x.is_nan() || x <= 0.0) {
        return Err(ProbeError::ZeroProbability { slot });
    }
    Ok(p.len() as f64 / p.iter().map(|&x| 1.0 / x).sum::<f64>())
}

/// Chance that a purely positional guess under `p` hits an answer placed with
/// `placement`. A uniform placement yields exactly `1/n`.
pub fn lucky_rate(p: &BiasDistribution, placement: &[f64]) -> Result<LuckyRate, ProbeError> {
    let n = p.n();
    if placement.len() != n {
        return Err(ProbeError::DimensionMismatch {
            expected: n,
            found: placement.len(),
        });
    }
    check_probs(placement)?;
    let uniform = 1.0 / n as f64;
    let value = if placement.iter().all(|&q| q == placement[0]) {
        uniform
    } else {
        p.probs.iter().zip(placement).map(|(a, b)| a * b).sum()
    };
    Ok(LuckyRate {
        value,
        lower_bound: p.p_min(),
        upper_bound: uniform,
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NullPrompt {
    pub text: String,
    pub tokens: Vec<String>,
}

/// `n` distinct uppercase letters in random order after the neutral
/// instruction, one per line.
pub fn build_null_prompt<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Result<NullPrompt, ProbeError> {
    check_arity(n)?;
    let tokens: Vec<String> = index::sample(rng, 26, n)
        .into_iter()
        .map(|i| char::from(b'A' + i as u8).to_string())
        .collect();
    let mut text = String::from(NULL_INSTRUCTION);
    text.push('\n');
    for t in &tokens {
        text.push_str(t);
        text.push('\n');
    }
    Ok(NullPrompt { text, tokens })
}

#[derive(Debug, Clone, Copy)]
pub struct ProbeOptions {
    /// Re-asks of an unparseable trial before it is discarded.
    pub max_retries: u32,
    /// Requests in flight at once.
    pub concurrency: usize,
}

impl Default for ProbeOptions {
    fn default() -> Self {
        Self {
            max_retries: 2,
            concurrency: 8,
        }
    }
}

enum TrialOutcome {
    Slot(usize),
    Discarded,
}

fn run_null_trial(
    gateway: &dyn ModelGateway,
    n: usize,
    trial: u64,
    seed: u64,
    max_retries: u32,
) -> Result<TrialOutcome, GatewayError> {
    let mut rng = rng::stream(seed, label::PROBE, &[n.into(), trial.into()]);
    let prompt = build_null_prompt(n, &mut rng).expect("arity checked by caller");
    for attempt in 0..=max_retries {
        let request = QueryRequest {
            prompt: prompt.text.clone(),
            options: prompt.tokens.clone(),
            key: TrialKey::Null { n, trial, attempt },
            truth: None,
        };
        let raw = gateway.query(&request)?;
        if let Some(slot) = parse_choice(&raw, &prompt.tokens, n).slot {
            return Ok(TrialOutcome::Slot(slot));
        }
    }
    Ok(TrialOutcome::Discarded)
}

/// Tally `m` valid null-prompt choices and smooth them with `epsilon`.
///
/// Trials are numbered from zero and processed in that order, so the result
/// depends only on the responses, not on scheduling. A trial whose replies stay
/// unparseable after `max_retries` re-asks is discarded and replaced.
pub fn estimate_position_bias(
    gateway: &dyn ModelGateway,
    n: usize,
    m: usize,
    epsilon: f64,
    seed: u64,
    opts: ProbeOptions,
) -> Result<BiasDistribution, ProbeError> {
    check_arity(n)?;
    if m == 0 {
        return Err(ProbeError::InvalidArgument("null prompt count must be >= 1".into()));
    }
    if !epsilon.is_finite() || epsilon <= 0.0 {
        return Err(ProbeError::InvalidArgument(format!("smoothing {epsilon} must be > 0")));
    }
    let cap = 10 * m as u64 + 10;
    let width = opts.concurrency.max(1) as u64;
    let mut counts = vec![0u64; n];
    let mut valid = 0usize;
    let mut discarded = 0u64;
    let mut next = 0u64;

    while valid < m {
        if next >= cap {
            return Err(ProbeError::AllUnparseable { trials: next, valid });
        }
        let needed = (m - valid) as u64;
        let wave: Vec<u64> = (next..cap.min(next + needed.min(width))).collect();
        let outcomes: Vec<Result<TrialOutcome, GatewayError>> = if wave.len() == 1 {
            vec![run_null_trial(gateway, n, wave[0], seed, opts.max_retries)]
        } else {
            std::thread::scope(|s| {
                let handles: Vec<_> = wave
                    .iter()
                    .map(|&t| s.spawn(move || run_null_trial(gateway, n, t, seed, opts.max_retries)))
                    .collect();
                handles
                    .into_iter()
                    .map(|h| h.join().expect("probe worker panicked"))
                    .collect()
            })
        };
        next += wave.len() as u64;
        for outcome in outcomes {
            match outcome? {
                TrialOutcome::Slot(s) if valid < m => {
                    counts[s] += 1;
                    valid += 1;
                }
                TrialOutcome::Slot(_) => {}
                TrialOutcome::Discarded => discarded += 1,
            }
        }
    }

    if discarded > 0 {
        tracing::info!(discarded, n, "null-prompt trials discarded as unparseable");
    }
    let mut dist = BiasDistribution::from_counts(counts, epsilon)?;
    dist.discarded = discarded;
    Ok(dist)
}

/// Persisted probe result for one `(model, n)` pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasCache {
    pub model_id: String,
    pub n: usize,
    #[serde(rename = "M")]
    pub m: u64,
    pub epsilon: f64,
    pub counts: Vec<u64>,
    pub probs: Vec<f64>,
    pub created_at: String,
    #[serde(default)]
    pub discarded: u64,
}

impl BiasCache {
    pub fn new(model_id: &str, dist: &BiasDistribution, created_at: String) -> Self {
        Self {
            model_id: model_id.to_string(),
            n: dist.n(),
            m: dist.sample_count,
            epsilon: dist.smoothing,
            counts: dist.counts.clone(),
            probs: dist.probs.clone(),
            created_at,
            discarded: dist.discarded,
        }
    }

    /// Rebuilds the distribution from the stored counts.
    pub fn distribution(&self) -> Result<BiasDistribution, ProbeError> {
        let mut d = BiasDistribution::from_counts(self.counts.clone(), self.epsilon)?;
        d.discarded = self.discarded;
        Ok(d)
    }

    pub fn matches(&self, model_id: &str, n: usize, m: usize, epsilon: f64) -> bool {
        self.model_id == model_id && self.n == n && self.m == m as u64 && self.epsilon == epsilon
    }

    pub fn path(dir: &Path, model_id: &str, n: usize) -> PathBuf {
        let safe: String = model_id
            .chars()
            .map(|c| if c.is_ascii_alphanumeric() || "-_.".contains(c) { c } else { '_' })
            .collect();
        dir.join("bias").join(format!("{safe}_n{n}.json"))
    }

    pub fn load(path: &Path) -> Result<Option<Self>, ProbeError> {
        let text = match fs::read_to_string(path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(cache_err(path, e)),
        };
        serde_json::from_str(&text).map(Some).map_err(|e| cache_err(path, e))
    }

    pub fn save(&self, path: &Path) -> Result<(), ProbeError> {
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| cache_err(path, e))?;
        }
        let mut text = serde_json::to_string_pretty(self).map_err(|e| cache_err(path, e))?;
        text.push('\n');
        fs::write(path, text).map_err(|e| cache_err(path, e))
    }
}

fn cache_err(path: &Path, e: impl std::fmt::Display) -> ProbeError {
    ProbeError::Cache {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}
