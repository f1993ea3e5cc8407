//! Drift failure taxonomy shared by the mock provider (as corruption modes)
//! and the runner (as failure categories).

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// One of the eleven observed ways a newer model breaks the extraction
/// contract. The variant order is the canonical listing order used in
/// histograms and hint selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum FailureCategory {
    MissingOrdering,
    MissingGrouping,
    NonexistentColumn,
    SemanticMisinterpretation,
    MissingImplicitFilter,
    ColumnValueConfusion,
    ColumnSimplification,
    FormatViolation,
    InfoMessageLeak,
    RedundantOperation,
    OperatorColumnFusion,
}

/// The mock provider names the same enumeration a "mode".
pub type FailureMode = FailureCategory;

impl FailureCategory {
    pub const ALL: [FailureCategory; 11] = [
        Self::MissingOrdering,
        Self::MissingGrouping,
        Self::NonexistentColumn,
        Self::SemanticMisinterpretation,
        Self::MissingImplicitFilter,
        Self::ColumnValueConfusion,
        Self::ColumnSimplification,
        Self::FormatViolation,
        Self::InfoMessageLeak,
        Self::RedundantOperation,
        Self::OperatorColumnFusion,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::MissingOrdering => "MissingOrdering",
            Self::MissingGrouping => "MissingGrouping",
            Self::NonexistentColumn => "NonexistentColumn",
            Self::SemanticMisinterpretation => "SemanticMisinterpretation",
            Self::MissingImplicitFilter => "MissingImplicitFilter",
            Self::ColumnValueConfusion => "ColumnValueConfusion",
            Self::ColumnSimplification => "ColumnSimplification",
            Self::FormatViolation => "FormatViolation",
            Self::InfoMessageLeak => "InfoMessageLeak",
            Self::RedundantOperation => "RedundantOperation",
            Self::OperatorColumnFusion => "OperatorColumnFusion",
        }
    }

    /// Modes seen on both newer model generations, followed by the ones
    /// specific to the instruction-strict generation.
    pub fn is_instruction_strict_mode(self) -> bool {
        !matches!(
            self,
            Self::FormatViolation
                | Self::InfoMessageLeak
                | Self::RedundantOperation
                | Self::OperatorColumnFusion
        )
    }
}

impl fmt::Display for FailureCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown failure category `{0}`")]
pub struct UnknownCategory(pub String);

impl FromStr for FailureCategory {
    type Err = UnknownCategory;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .iter()
            .copied()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| UnknownCategory(s.to_string()))
    }
}
