//! Evaluation conditions and the repeated-trial runner.

mod calls;
mod placement;
mod prompt;
mod runlog;
mod runner;

pub use calls::{estimate_call_volume, CallPlan, Method};
pub use placement::{plan_placement, PlacementInputs};
pub use prompt::{render_prompt, LabelMode, HIDDEN_LABEL};
pub use runlog::{BiasSnapshot, LogLine, RunHeader, RunLog, RunManifest, TrialRecord};
pub use runner::{majority_vote, run_condition, run_id, RunContext};

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::GatewayError;
use crate::semantic_spread::{EmbeddingError, Kernel, SpreadError};

pub const DEFAULT_REPETITIONS: u32 = 5;
pub const DEFAULT_MV_PERMUTATIONS: u32 = 10;

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error("condition '{0}' needs a position-bias profile")]
    MissingBiasProfile(ConditionName),
    #[error("condition '{condition}' needs embeddings: {reason}")]
    MissingEmbeddings { condition: ConditionName, reason: String },
    #[error("bias profile has {found} slots but items have {expected} options")]
    BiasArity { expected: usize, found: usize },
    #[error(transparent)]
    Placement(#[from] SpreadError),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error("gateway failed on item '{item_id}' after {completed_items} completed items: {source}")]
    Gateway {
        item_id: String,
        completed_items: usize,
        #[source]
        source: GatewayError,
    },
    #[error("run log {path}: {message}")]
    Log { path: PathBuf, message: String },
    #[error("invalid run configuration: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConditionName {
    Baseline,
    Scope,
    IpOnly,
    SsOnly,
    LabelHidden,
    OrderShuffled,
    FullyRandom,
    Lbp,
    SsdAdjacent,
    SsdFar,
    MajorityVote,
}

impl ConditionName {
    pub const ALL: [ConditionName; 11] = [
        ConditionName::Baseline,
        ConditionName::Scope,
        ConditionName::IpOnly,
        ConditionName::SsOnly,
        ConditionName::LabelHidden,
        ConditionName::OrderShuffled,
        ConditionName::FullyRandom,
        ConditionName::Lbp,
        ConditionName::SsdAdjacent,
        ConditionName::SsdFar,
        ConditionName::MajorityVote,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ConditionName::Baseline => "baseline",
            ConditionName::Scope => "scope",
            ConditionName::IpOnly => "ip_only",
            ConditionName::SsOnly => "ss_only",
            ConditionName::LabelHidden => "label_hidden",
            ConditionName::OrderShuffled => "order_shuffled",
            ConditionName::FullyRandom => "fully_random",
            ConditionName::Lbp => "lbp",
            ConditionName::SsdAdjacent => "ssd_adjacent",
            ConditionName::SsdFar => "ssd_far",
            ConditionName::MajorityVote => "majority_vote",
        }
    }

    pub fn valid_names() -> String {
        Self::ALL.iter().map(|c| c.as_str()).collect::<Vec<_>>().join(", ")
    }
}

impl fmt::Display for ConditionName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown condition '{0}' (valid: {valid})", valid = ConditionName::valid_names())]
pub struct UnknownCondition(pub String);

impl FromStr for ConditionName {
    type Err = UnknownCondition;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.trim().to_ascii_lowercase().replace('-', "_");
        Self::ALL
            .iter()
            .copied()
            .find(|c| c.as_str() == norm)
            .ok_or_else(|| UnknownCondition(s.to_string()))
    }
}

/// Where the correct answer goes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnswerPlacement {
    /// Dataset order, untouched.
    Fixed,
    /// The answer keeps its dataset slot; the other options may move.
    Original,
    Uniform,
    InverseBias,
    /// The slot with the smallest measured bias.
    LowestBias,
}

/// Where the SSD goes once the answer slot is fixed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SsdPlacement {
    /// Shuffled with the other distractors.
    Leftover,
    Dispersed { kernel: Kernel },
    Adjacent,
    Far,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Condition {
    pub name: ConditionName,
    pub label_mode: LabelMode,
    pub answer: AnswerPlacement,
    pub ssd: SsdPlacement,
    pub repetitions: u32,
    /// Shuffles per majority-vote response; unused by other conditions.
    pub mv_permutations: u32,
    /// Draw a fresh layout for every repetition instead of one per item.
    #[serde(default)]
    pub redraw_per_trial: bool,
}

impl Condition {
    pub fn new(name: ConditionName) -> Self {
        Self::with_kernel(name, Kernel::default())
    }

    pub fn with_kernel(name: ConditionName, kernel: Kernel) -> Self {
        use AnswerPlacement as A;
        use ConditionName as C;
        use LabelMode::{HiddenPlaceholder as H, Letters as L};
        use SsdPlacement as S;
        let dispersed = S::Dispersed { kernel };
        let (label_mode, answer, ssd) = match name {
            C::Baseline => (L, A::Fixed, S::Leftover),
            C::LabelHidden => (H, A::Fixed, S::Leftover),
            C::OrderShuffled => (L, A::Uniform, S::Leftover),
            C::FullyRandom => (H, A::Uniform, S::Leftover),
            C::Scope => (H, A::InverseBias, dispersed),
            C::IpOnly => (H, A::InverseBias, S::Leftover),
            C::SsOnly => (H, A::Uniform, dispersed),
            C::Lbp => (L, A::LowestBias, S::Leftover),
            C::SsdAdjacent => (L, A::Original, S::Adjacent),
            C::SsdFar => (L, A::Original, S::Far),
            C::MajorityVote => (L, A::Uniform, S::Leftover),
        };
        Self {
            name,
            label_mode,
            answer,
            ssd,
            repetitions: DEFAULT_REPETITIONS,
            mv_permutations: DEFAULT_MV_PERMUTATIONS,
            redraw_per_trial: false,
        }
    }

    pub fn needs_bias(&self) -> bool {
        matches!(self.answer, AnswerPlacement::InverseBias | AnswerPlacement::LowestBias)
    }

    /// Whether the SSD must be known to build the layout.
    pub fn needs_embeddings(&self) -> bool {
        !matches!(self.ssd, SsdPlacement::Leftover)
    }

    pub fn is_majority_vote(&self) -> bool {
        self.name == ConditionName::MajorityVote
    }

    pub fn validate(&self) -> Result<(), ProtocolError> {
        if self.repetitions == 0 {
            return Err(ProtocolError::Invalid("repetitions must be >= 1".into()));
        }
        if self.is_majority_vote() && self.mv_permutations == 0 {
            return Err(ProtocolError::Invalid("mv_permutations must be >= 1".into()));
        }
        Ok(())
    }
}
