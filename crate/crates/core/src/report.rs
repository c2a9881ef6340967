//! Validation issues collected while parsing, validating and unifying data.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

/// Kinds of data problems. The declaration order is the report's sort order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum IssueKind {
    OrphanImage,
    BadCoordinate,
    BadTimestamp,
    UnknownLabel,
    DuplicateId,
    MissingField,
    /// Taxon rows whose names are not contiguous from Class downward, or
    /// special labels that carry taxonomic names.
    InvalidTaxon,
    /// Two taxa share a name at some level but disagree on its ancestors.
    TreeInconsistency,
    /// Rows that cannot be read as a record: wrong field count, or a value
    /// that does not parse (burst index, special kind, score).
    MalformedRow,
}

impl IssueKind {
    pub const ALL: [IssueKind; 9] = [
        IssueKind::OrphanImage,
        IssueKind::BadCoordinate,
        IssueKind::BadTimestamp,
        IssueKind::UnknownLabel,
        IssueKind::DuplicateId,
        IssueKind::MissingField,
        IssueKind::InvalidTaxon,
        IssueKind::TreeInconsistency,
        IssueKind::MalformedRow,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            IssueKind::OrphanImage => "orphan_image",
            IssueKind::BadCoordinate => "bad_coordinate",
            IssueKind::BadTimestamp => "bad_timestamp",
            IssueKind::UnknownLabel => "unknown_label",
            IssueKind::DuplicateId => "duplicate_id",
            IssueKind::MissingField => "missing_field",
            IssueKind::InvalidTaxon => "invalid_taxon",
            IssueKind::TreeInconsistency => "tree_inconsistency",
            IssueKind::MalformedRow => "malformed_row",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.as_str() == s)
    }

    fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for IssueKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Errors make a dataset fail validation; notes are informational
/// (identical cross-source duplicates, timestamps without a zone).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Severity {
    Error,
    Note,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Issue {
    pub kind: IssueKind,
    pub record_key: String,
    pub severity: Severity,
    pub detail: String,
}

impl Issue {
    pub fn error(
        kind: IssueKind,
        record_key: impl Into<String>,
        detail: impl Into<String>,
    ) -> Self {
        Self {
            kind,
            record_key: record_key.into(),
            severity: Severity::Error,
            detail: detail.into(),
        }
    }

    pub fn note(kind: IssueKind, record_key: impl Into<String>, detail: impl Into<String>) -> Self {
        Self {
            severity: Severity::Note,
            ..Self::error(kind, record_key, detail)
        }
    }

    pub fn is_error(&self) -> bool {
        self.severity == Severity::Error
    }
}

/// Per-kind error counts, indexed in [`IssueKind`] declaration order.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct IssueCounts([usize; IssueKind::ALL.len()]);

impl IssueCounts {
    pub fn get(&self, kind: IssueKind) -> usize {
        self.0[kind.index()]
    }

    /// Counts of the six record-level kinds: orphan image, bad coordinate,
    /// bad timestamp, unknown label, duplicate id, missing field.
    pub fn record_kinds(&self) -> [usize; 6] {
        let mut out = [0; 6];
        out.copy_from_slice(&self.0[..6]);
        out
    }

    pub fn total(&self) -> usize {
        self.0.iter().sum()
    }
}

/// An ordered collection of issues.
///
/// Only [`Severity::Error`] issues count toward [`ValidationReport::counts`]
/// and [`ValidationReport::is_clean`].
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ValidationReport {
    issues: Vec<Issue>,
}

impl ValidationReport {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, issue: Issue) {
        self.issues.push(issue);
    }

    pub fn extend(&mut self, other: ValidationReport) {
        self.issues.extend(other.issues);
    }

    /// Sorts issues by (kind, record key), keeping insertion order among
    /// equal keys.
    pub fn sort(&mut self) {
        self.issues
            .sort_by(|a, b| (a.kind, &a.record_key).cmp(&(b.kind, &b.record_key)));
    }

    pub fn sorted(mut self) -> Self {
        self.sort();
        self
    }

    pub fn issues(&self) -> &[Issue] {
        &self.issues
    }

    pub fn errors(&self) -> impl Iterator<Item = &Issue> {
        self.issues.iter().filter(|i| i.is_error())
    }

    pub fn notes(&self) -> impl Iterator<Item = &Issue> {
        self.issues.iter().filter(|i| !i.is_error())
    }

    pub fn counts(&self) -> IssueCounts {
        let mut c = IssueCounts::default();
        for i in self.errors() {
            c.0[i.kind.index()] += 1;
        }
        c
    }

    pub fn error_count(&self) -> usize {
        self.errors().count()
    }

    pub fn note_count(&self) -> usize {
        self.issues.len() - self.error_count()
    }

    pub fn is_clean(&self) -> bool {
        self.errors().next().is_none()
    }

    pub fn len(&self) -> usize {
        self.issues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.issues.is_empty()
    }
}

impl FromIterator<Issue> for ValidationReport {
    fn from_iter<T: IntoIterator<Item = Issue>>(iter: T) -> Self {
        Self {
            issues: iter.into_iter().collect(),
        }
    }
}
