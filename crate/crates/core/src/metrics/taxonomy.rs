use serde::{Deserialize, Serialize};

use super::MetricsError;
use crate::protocol::RunLog;

/// Response pattern of one item over its repetitions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ItemClass {
    /// Same correct option every time.
    CoT,
    /// Same wrong option every time.
    CoF,
    /// Correct in a majority of trials, not consistently.
    PrT,
    /// Everything else.
    PrF,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaxonomyCounts {
    pub pr_t: u64,
    pub pr_f: u64,
    pub co_t: u64,
    pub co_f: u64,
}

impl TaxonomyCounts {
    pub fn new(pr_t: u64, pr_f: u64, co_t: u64, co_f: u64) -> Self {
        Self { pr_t, pr_f, co_t, co_f }
    }

    pub fn total(&self) -> u64 {
        self.pr_t + self.pr_f + self.co_t + self.co_f
    }

    pub fn add(&mut self, class: ItemClass) {
        match class {
            ItemClass::CoT => self.co_t += 1,
            ItemClass::CoF => self.co_f += 1,
            ItemClass::PrT => self.pr_t += 1,
            ItemClass::PrF => self.pr_f += 1,
        }
    }
}

/// Correct trials needed for `PrT`: `ceil((reps + 1) / 2)`, 3 of 5 by default.
pub fn majority_threshold(reps: usize) -> usize {
    (reps + 2) / 2
}

/// Classify one item. `choices` are the chosen options (`None` = abstained)
/// in any consistent indexing, and `answer` is the correct one in the same
/// indexing. Consistency takes precedence, so the four classes are disjoint;
/// an abstention breaks consistency.
pub fn classify_item(
    choices: &[Option<usize>],
    answer: usize,
    reps: usize,
) -> Result<ItemClass, MetricsError> {
    if choices.len() != reps || reps == 0 {
        return Err(MetricsError::WrongTrialCount {
            expected: reps,
            found: choices.len(),
        });
    }
    let first = choices[0];
    if first.is_some() && choices.iter().all(|c| *c == first) {
        return Ok(if first == Some(answer) {
            ItemClass::CoT
        } else {
            ItemClass::CoF
        });
    }
    let correct = choices.iter().filter(|c| **c == Some(answer)).count();
    Ok(if correct >= majority_threshold(reps) {
        ItemClass::PrT
    } else {
        ItemClass::PrF
    })
}

/// Sum item classes over a completed run. Choices are compared by original
/// option index, so layouts that change between trials classify correctly.
pub fn aggregate(log: &RunLog) -> Result<TaxonomyCounts, MetricsError> {
    if !log.is_complete() {
        return Err(MetricsError::IncompleteRun("run has no manifest".into()));
    }
    let reps = log.header.condition.repetitions as usize;
    let groups = log.by_item();
    if groups.len() != log.header.item_count {
        return Err(MetricsError::IncompleteRun(format!(
            "{} of {} items present",
            groups.len(),
            log.header.item_count
        )));
    }
    let mut counts = TaxonomyCounts::default();
    for (item_id, trials) in groups {
        let answer = trials[0].order[trials[0].answer_slot];
        let choices: Vec<Option<usize>> = trials.iter().map(|t| t.chosen_index).collect();
        let class = classify_item(&choices, answer, reps).map_err(|e| match e {
            MetricsError::WrongTrialCount { expected, found } => MetricsError::IncompleteRun(format!(
                "item '{item_id}' has {found} trials, expected {expected}"
            )),
            other => other,
        })?;
        counts.add(class);
    }
    Ok(counts)
}

/// Precision, recall and their harmonic mean.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FamilyScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn ratio(a: u64, b: u64) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

fn harmonic(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

fn round_to(x: f64, dp: i32) -> f64 {
    let s = 10f64.powi(dp);
    (x * s).round() / s
}

impl FamilyScores {
    fn from_ratio(precision: f64, recall: f64) -> Self {
        Self {
            precision,
            recall,
            f1: harmonic(precision, recall),
        }
    }

    /// Values as printed in a table with `dp` decimals: precision and recall
    /// are rounded first and F1 is computed from the rounded pair.
    pub fn rounded(&self, dp: i32) -> Self {
        let p = round_to(self.precision, dp);
        let r = round_to(self.recall, dp);
        Self {
            precision: p,
            recall: r,
            f1: round_to(harmonic(p, r), dp),
        }
    }
}

/// `AP = CoT/(CoT+CoF)`, `AR = CoT/(PrT+CoT)`. Empty ratios are 0.
pub fn answer_metrics(c: &TaxonomyCounts) -> FamilyScores {
    FamilyScores::from_ratio(ratio(c.co_t, c.co_t + c.co_f), ratio(c.co_t, c.pr_t + c.co_t))
}

/// `DP = CoF/(CoT+CoF)`, `DR = CoF/(PrF+CoF)`. Empty ratios are 0.
pub fn distractor_metrics(c: &TaxonomyCounts) -> FamilyScores {
    FamilyScores::from_ratio(ratio(c.co_f, c.co_t + c.co_f), ratio(c.co_f, c.pr_f + c.co_f))
}
