use serde::{Deserialize, Serialize};

use super::ConditionName;

/// Evaluation methods whose request budget can be estimated. Several are
/// external debiasing baselines that this crate does not run; their
/// multipliers are listed for budgeting only.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Baseline,
    CalibEv,
    Di,
    Ec,
    MajorityVote,
    PriDe,
    Scope,
}

impl Method {
    pub const ALL: [Method; 7] = [
        Method::Baseline,
        Method::CalibEv,
        Method::Di,
        Method::Ec,
        Method::MajorityVote,
        Method::PriDe,
        Method::Scope,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Baseline => "baseline",
            Method::CalibEv => "calib_ev",
            Method::Di => "di",
            Method::Ec => "ec",
            Method::MajorityVote => "majority_vote",
            Method::PriDe => "pride",
            Method::Scope => "scope",
        }
    }

    /// Budget category of a runnable condition. Null-prompt probing is charged
    /// only to conditions that place answers by measured bias.
    pub fn for_condition(c: ConditionName) -> Method {
        match c {
            ConditionName::MajorityVote => Method::MajorityVote,
            ConditionName::Scope | ConditionName::IpOnly | ConditionName::Lbp => Method::Scope,
            _ => Method::Baseline,
        }
    }
}

/// Shape of an experiment for call accounting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CallPlan {
    pub datasets: u64,
    pub items: u64,
    pub repetitions: u64,
    pub models: u64,
    /// Null prompts per model for the bias probe.
    pub null_prompts: u64,
    pub mv_permutations: u64,
}

impl Default for CallPlan {
    fn default() -> Self {
        Self {
            datasets: 2,
            items: 500,
            repetitions: 5,
            models: 8,
            null_prompts: 1000,
            mv_permutations: 10,
        }
    }
}

impl CallPlan {
    pub fn base(&self) -> u64 {
        self.datasets * self.items * self.repetitions * self.models
    }
}

/// Number of model requests `method` needs under `plan`.
pub fn estimate_call_volume(method: Method, plan: &CallPlan) -> u64 {
    let base = plan.base();
    match method {
        Method::Baseline | Method::CalibEv | Method::Di => base,
        Method::Ec => base * 2,
        Method::MajorityVote => base * plan.mv_permutations,
        // 5% extra for prior estimation, rounded up
        Method::PriDe => (base * 105).div_ceil(100),
        Method::Scope => base + plan.null_prompts * plan.models,
    }
}
