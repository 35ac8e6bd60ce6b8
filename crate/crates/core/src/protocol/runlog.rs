use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Condition, ProtocolError};
use crate::gateway::{Decoding, ParseRule};

/// Bias profile in force during a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasSnapshot {
    pub probs: Vec<f64>,
    pub inverse: Vec<f64>,
    /// Lucky rate of inverse-bias placement, `n / Σ 1/p`.
    pub inverse_lucky_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunHeader {
    pub run_id: String,
    pub condition: Condition,
    pub model_id: String,
    pub dataset: String,
    pub seed: u64,
    pub option_count: usize,
    pub item_count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bias: Option<BiasSnapshot>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub encoder_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decoding: Option<Decoding>,
    pub created_at: String,
}

impl RunHeader {
    /// Log lines written per item.
    pub fn records_per_item(&self) -> usize {
        let reps = self.condition.repetitions as usize;
        if self.condition.is_majority_vote() {
            reps * (self.condition.mv_permutations as usize + 1)
        } else {
            reps
        }
    }
}

/// One model response (or, for majority voting, one vote or one aggregated
/// decision). Slots refer to `order`; `chosen_index` is the original option
/// index of the choice.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub run_id: String,
    pub item_id: String,
    pub trial_index: u32,
    /// Set on the individual votes behind a majority-vote decision.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vote: Option<u32>,
    pub order: Vec<usize>,
    pub answer_slot: usize,
    #[serde(default)]
    pub ssd_slot: Option<usize>,
    pub raw_text: String,
    pub parsed_slot: Option<usize>,
    /// Absent on aggregated majority-vote decisions.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parse_rule: Option<ParseRule>,
    pub chosen_index: Option<usize>,
    pub correct: bool,
    pub timestamp: String,
}

impl TrialRecord {
    /// Scored records feed the metrics; votes do not.
    pub fn is_scored(&self) -> bool {
        self.vote.is_none()
    }

    pub fn chose_ssd(&self) -> bool {
        self.parsed_slot.is_some() && self.parsed_slot == self.ssd_slot
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub items: usize,
    pub records: usize,
    /// Scored trials whose response could not be mapped to an option.
    pub abstained: usize,
    pub completed_at: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LogLine {
    Header(RunHeader),
    Trial(TrialRecord),
    Manifest(RunManifest),
}

/// Header, records in item order, and the manifest once complete.
#[derive(Debug, Clone, PartialEq)]
pub struct RunLog {
    pub header: RunHeader,
    pub records: Vec<TrialRecord>,
    pub manifest: Option<RunManifest>,
}

impl RunLog {
    pub fn is_complete(&self) -> bool {
        self.manifest.is_some()
    }

    pub fn scored(&self) -> impl Iterator<Item = &TrialRecord> {
        self.records.iter().filter(|r| r.is_scored())
    }

    /// Scored records grouped by item, in log order.
    pub fn by_item(&self) -> Vec<(&str, Vec<&TrialRecord>)> {
        let mut groups: Vec<(&str, Vec<&TrialRecord>)> = Vec::new();
        for r in self.scored() {
            match groups.last_mut() {
                Some((id, v)) if *id == r.item_id => v.push(r),
                _ => groups.push((&r.item_id, vec![r])),
            }
        }
        groups
    }

    pub fn abstained(&self) -> usize {
        self.scored().filter(|r| r.parsed_slot.is_none()).count()
    }

    /// Read a log. A final line that does not parse is treated as a torn
    /// write and dropped; any other malformed line is an error.
    pub fn read(path: &Path) -> Result<RunLog, ProtocolError> {
        let err = |message: String| ProtocolError::Log {
            path: path.to_path_buf(),
            message,
        };
        let text = fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
        let lines: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
        let mut header = None;
        let mut records = Vec::new();
        let mut manifest = None;
        for (i, line) in lines.iter().enumerate() {
            let parsed: LogLine = match serde_json::from_str(line) {
                Ok(p) => p,
                Err(_) if i + 1 == lines.len() && !text.ends_with('\n') => break,
                Err(e) => return Err(err(format!("line {}: {e}", i + 1))),
            };
            match (parsed, i) {
                (LogLine::Header(h), 0) => header = Some(h),
                (LogLine::Header(_), _) => return Err(err(format!("line {}: repeated header", i + 1))),
                (_, 0) => return Err(err("first line is not a header".into())),
                (LogLine::Trial(t), _) if manifest.is_none() => records.push(t),
                (LogLine::Manifest(m), _) if manifest.is_none() => manifest = Some(m),
                _ => return Err(err(format!("line {}: content after manifest", i + 1))),
            }
        }
        let header = header.ok_or_else(|| err("empty log".into()))?;
        Ok(RunLog {
            header,
            records,
            manifest,
        })
    }

    /// Write the whole log, replacing `path`.
    pub fn write(&self, path: &Path) -> Result<(), ProtocolError> {
        let mut out = encode_line(&LogLine::Header(self.header.clone()));
        for r in &self.records {
            out.push_str(&encode_line(&LogLine::Trial(r.clone())));
        }
        if let Some(m) = &self.manifest {
            out.push_str(&encode_line(&LogLine::Manifest(m.clone())));
        }
        fs::write(path, out).map_err(|e| ProtocolError::Log {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }
}

/// One JSONL line, newline included.
pub(super) fn encode_line(line: &LogLine) -> String {
    let mut s = serde_json::to_string(line).expect("log lines serialize");
    s.push('\n');
    s
}
