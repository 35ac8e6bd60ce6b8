use serde::{Deserialize, Serialize};

use super::taxonomy::{aggregate, answer_metrics, distractor_metrics, FamilyScores, TaxonomyCounts};
use super::MetricsError;
use crate::protocol::{AnswerPlacement, ConditionName, RunLog};

const KLD_FLOOR: f64 = 1e-9;

/// Per-slot share of parsed choices; abstentions are counted separately.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionRates {
    pub rates: Vec<f64>,
    pub abstained: usize,
    pub parsed: usize,
}

pub fn selection_rate(log: &RunLog) -> Result<SelectionRates, MetricsError> {
    let n = log.header.option_count;
    let mut counts = vec![0usize; n];
    let mut abstained = 0;
    for r in log.scored() {
        match r.parsed_slot {
            Some(s) => counts[s] += 1,
            None => abstained += 1,
        }
    }
    let parsed: usize = counts.iter().sum();
    if parsed == 0 {
        return Err(MetricsError::EmptyRun);
    }
    Ok(SelectionRates {
        rates: counts.iter().map(|&c| c as f64 / parsed as f64).collect(),
        abstained,
        parsed,
    })
}

/// KL divergence from the uniform distribution in nats.
pub fn kld_uniform(rates: &[f64]) -> Result<f64, MetricsError> {
    kld_uniform_base(rates, std::f64::consts::E)
}

/// KL divergence from uniform with logarithms in `base`. Zero entries are
/// floored at 1e-9 and the vector renormalized before taking logs.
pub fn kld_uniform_base(rates: &[f64], base: f64) -> Result<f64, MetricsError> {
    if rates.is_empty() {
        return Err(MetricsError::InvalidDistribution("empty".into()));
    }
    if rates.iter().any(|r| !r.is_finite() || *r < 0.0) {
        return Err(MetricsError::InvalidDistribution("negative or non-finite rate".into()));
    }
    let sum: f64 = rates.iter().sum();
    if (sum - 1.0).abs() > 1e-6 {
        return Err(MetricsError::InvalidDistribution(format!("rates sum to {sum}")));
    }
    if base.is_nan() || base <= 0.0 || base == 1.0 {
        return Err(MetricsError::InvalidDistribution(format!("log base {base}")));
    }
    let floored: Vec<f64> = rates.iter().map(|r| r.max(KLD_FLOOR)).collect();
    let total: f64 = floored.iter().sum();
    let n = rates.len() as f64;
    let nats: f64 = floored
        .iter()
        .map(|r| r / total)
        .map(|r| r * (r * n).ln())
        .sum();
    Ok((nats / base.ln()).max(0.0))
}

/// Share of scored trials that chose the correct answer; abstentions count
/// as wrong.
pub fn accuracy(log: &RunLog) -> Result<f64, MetricsError> {
    let (mut total, mut correct) = (0usize, 0usize);
    for r in log.scored() {
        total += 1;
        correct += usize::from(r.correct);
    }
    if total == 0 {
        return Err(MetricsError::EmptyRun);
    }
    Ok(correct as f64 / total as f64)
}

/// Share of scored trials that chose the SSD.
pub fn ssd_selection_rate(log: &RunLog) -> Result<f64, MetricsError> {
    let (mut total, mut hits) = (0usize, 0usize);
    for r in log.scored() {
        if r.ssd_slot.is_none() {
            return Err(MetricsError::MissingSsdSlots);
        }
        total += 1;
        hits += usize::from(r.chose_ssd());
    }
    if total == 0 {
        return Err(MetricsError::EmptyRun);
    }
    Ok(hits as f64 / total as f64)
}

pub fn pure_skill(af1: f64, lucky_rate: f64) -> f64 {
    af1 - lucky_rate
}

/// Lucky rate implied by how the run placed answers, when it can be known:
/// inverse-bias placement gives `n/Σ1/p`, uniform placement `1/n`, lowest-bias
/// placement `p_min`, and dataset-order placement the bias-weighted empirical
/// answer-slot frequency.
pub fn lucky_rate_for(log: &RunLog) -> Option<f64> {
    let cond = &log.header.condition;
    let n = log.header.option_count;
    let bias = log.header.bias.as_ref();
    if cond.name == ConditionName::MajorityVote {
        return None;
    }
    match cond.answer {
        AnswerPlacement::Uniform => Some(1.0 / n as f64),
        AnswerPlacement::InverseBias => bias.map(|b| b.inverse_lucky_rate),
        AnswerPlacement::LowestBias => bias.map(|b| b.probs.iter().copied().fold(f64::INFINITY, f64::min)),
        AnswerPlacement::Fixed | AnswerPlacement::Original => {
            let b = bias?;
            let mut freq = vec![0usize; n];
            let mut items = 0usize;
            for (_, trials) in log.by_item() {
                freq[trials[0].answer_slot] += 1;
                items += 1;
            }
            (items > 0).then(|| {
                freq.iter()
                    .zip(&b.probs)
                    .map(|(&f, p)| p * f as f64 / items as f64)
                    .sum()
            })
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub model_id: String,
    pub dataset: String,
    pub condition: ConditionName,
    pub items: usize,
    pub counts: TaxonomyCounts,
    pub answer: FamilyScores,
    pub distractor: FamilyScores,
    pub accuracy: f64,
    pub kld: f64,
    pub selection_rates: Vec<f64>,
    pub abstained: usize,
    pub ssd_rate: Option<f64>,
    pub lucky_rate: Option<f64>,
    pub pure_skill: Option<f64>,
}

pub fn build_report(log: &RunLog) -> Result<MetricReport, MetricsError> {
    let counts: TaxonomyCounts = aggregate(log)?;
    let answer = answer_metrics(&counts);
    let rates = selection_rate(log)?;
    let lucky = lucky_rate_for(log);
    let ssd_rate = match ssd_selection_rate(log) {
        Ok(r) => Some(r),
        Err(MetricsError::MissingSsdSlots) => None,
        Err(e) => return Err(e),
    };
    Ok(MetricReport {
        model_id: log.header.model_id.clone(),
        dataset: log.header.dataset.clone(),
        condition: log.header.condition.name,
        items: log.header.item_count,
        counts,
        answer,
        distractor: distractor_metrics(&counts),
        accuracy: accuracy(log)?,
        kld: kld_uniform(&rates.rates)?,
        selection_rates: rates.rates,
        abstained: rates.abstained,
        ssd_rate,
        lucky_rate: lucky,
        pure_skill: lucky.map(|l| pure_skill(answer.f1, l)),
    })
}
