use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

pub type Result<T, E = Error> = core::result::Result<T, E>;

/// A single rejected input row.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RowIssue {
    /// 1-based line (or record) number in the source.
    pub line: usize,
    pub reason: String,
}

impl fmt::Display for RowIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "row {}: {}", self.line, self.reason)
    }
}

struct IssueList<'a>(&'a [RowIssue]);

impl fmt::Display for IssueList<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        const SHOWN: usize = 10;
        for (n, issue) in self.0.iter().take(SHOWN).enumerate() {
            if n > 0 {
                f.write_str("; ")?;
            }
            write!(f, "{issue}")?;
        }
        if self.0.len() > SHOWN {
            write!(f, "; ... and {} more", self.0.len() - SHOWN)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("validation failed for {} row(s): {}", .0.len(), IssueList(.0))]
    Validation(Vec<RowIssue>),

    #[error("{kind} index {index} out of range (len {len})")]
    IndexOutOfRange {
        kind: &'static str,
        index: usize,
        len: usize,
    },

    #[error("feature length mismatch: expected {expected}, found {found}")]
    FeatureLength { expected: usize, found: usize },

    #[error("record {record}: label {value} is not binary")]
    NonBinaryLabel { record: usize, value: u8 },

    #[error("non-finite parameter after epoch {epoch}, batch {batch}")]
    NonFinite { epoch: usize, batch: usize },

    #[error("split leaves the {0} side empty")]
    EmptySplit(&'static str),

    #[error("RDD requires browsing positions: dataset has records without position or leave_position")]
    MissingPositions,

    #[error("insufficient samples: {treated} treated, {control} control, need {required} per side")]
    InsufficientSamples {
        treated: usize,
        control: usize,
        required: usize,
    },

    #[error("no admissible cutoffs for item {item}")]
    NoAdmissibleCutoffs { item: usize },

    #[error("{0} group is empty")]
    EmptyGroup(&'static str),

    #[error("expected exactly two treatment arms, dataset has {0}")]
    TreatmentArms(usize),

    #[error("propensity model is degenerate: {0}")]
    DegeneratePropensity(String),

    #[error("metric undefined: {0}")]
    MetricUndefined(String),

    #[error("estimate sets share no items")]
    DisjointItems,

    #[error("unknown attribute: {0}")]
    UnknownAttribute(String),

    #[error("all estimates are skipped")]
    AllSkipped,
}
