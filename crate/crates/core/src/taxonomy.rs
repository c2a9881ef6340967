//! Five-level label ontology: lookup, rollup and distinct-name counts.
//!
//! Labels are opaque ids. Each taxon stores its names contiguously from
//! Class downward, so a record identified only to genus carries three names.
//! Blank and unknown are first-class labels without taxonomic names; they
//! roll up to themselves at every level.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use crate::error::{Error, Result};
use crate::report::{Issue, IssueKind, ValidationReport};

/// Taxonomic rank, ordered coarse to fine.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Level {
    Class,
    Order,
    Family,
    Genus,
    Species,
}

impl Level {
    pub const ALL: [Level; 5] = [
        Level::Class,
        Level::Order,
        Level::Family,
        Level::Genus,
        Level::Species,
    ];

    /// Number of names a record populated down to this level carries.
    pub const fn depth(self) -> usize {
        self as usize + 1
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Level::Class => "class",
            Level::Order => "order",
            Level::Family => "family",
            Level::Genus => "genus",
            Level::Species => "species",
        }
    }

    pub fn parse(s: &str) -> Option<Level> {
        Self::ALL
            .into_iter()
            .find(|l| l.as_str().eq_ignore_ascii_case(s))
    }

    fn from_depth(depth: usize) -> Option<Level> {
        depth.checked_sub(1).and_then(|i| Self::ALL.get(i).copied())
    }
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum SpecialKind {
    Blank,
    Unknown,
}

impl SpecialKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SpecialKind::Blank => "blank",
            SpecialKind::Unknown => "unknown",
        }
    }

    pub fn parse(s: &str) -> Option<SpecialKind> {
        match s {
            "blank" => Some(SpecialKind::Blank),
            "unknown" => Some(SpecialKind::Unknown),
            _ => None,
        }
    }
}

/// One taxonomy row as read from a file, before validation.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RawTaxon {
    pub label_id: String,
    /// Names for Class, Order, Family, Genus, Species; `None` when empty.
    pub names: [Option<String>; 5],
    pub special: Option<SpecialKind>,
}

/// A validated label.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaxonRecord {
    label_id: String,
    names: Vec<String>,
    special: Option<SpecialKind>,
}

impl TaxonRecord {
    /// A taxon whose names run contiguously from Class downward.
    pub fn taxon<I, S>(label_id: impl Into<String>, names: I) -> Option<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let names: Vec<String> = names.into_iter().map(Into::into).collect();
        if names.is_empty() || names.len() > 5 || names.iter().any(|n| n.is_empty()) {
            return None;
        }
        Some(Self {
            label_id: label_id.into(),
            names,
            special: None,
        })
    }

    pub fn special(label_id: impl Into<String>, kind: SpecialKind) -> Self {
        Self {
            label_id: label_id.into(),
            names: Vec::new(),
            special: Some(kind),
        }
    }

    /// Validates a raw row, returning the problem kind and detail on failure.
    pub fn from_raw(mut raw: RawTaxon) -> core::result::Result<Self, (IssueKind, String)> {
        for slot in raw.names.iter_mut() {
            if slot.as_deref().is_some_and(str::is_empty) {
                *slot = None;
            }
        }
        if raw.label_id.is_empty() {
            return Err((IssueKind::MissingField, "label_id is empty".to_string()));
        }
        let populated = raw.names.iter().filter(|n| n.is_some()).count();
        if let Some(kind) = raw.special {
            if populated > 0 {
                return Err((
                    IssueKind::InvalidTaxon,
                    format!("{} label carries taxonomic names", kind.as_str()),
                ));
            }
            return Ok(Self::special(raw.label_id, kind));
        }
        if populated == 0 {
            return Err((
                IssueKind::InvalidTaxon,
                "taxon has no names and no special kind".to_string(),
            ));
        }
        let contiguous = raw.names[..populated].iter().all(Option::is_some);
        if !contiguous {
            let gap = raw.names.iter().position(Option::is_none).unwrap_or(0);
            return Err((
                IssueKind::InvalidTaxon,
                format!(
                    "names are not contiguous from class: {} missing below a populated level",
                    Level::ALL[gap]
                ),
            ));
        }
        let names = raw.names.into_iter().flatten().collect();
        Ok(Self {
            label_id: raw.label_id,
            names,
            special: None,
        })
    }

    pub fn label_id(&self) -> &str {
        &self.label_id
    }

    pub fn special_kind(&self) -> Option<SpecialKind> {
        self.special
    }

    /// Names from Class down to the finest populated level.
    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn name_at(&self, level: Level) -> Option<&str> {
        self.names.get(level as usize).map(String::as_str)
    }

    pub fn class_name(&self) -> Option<&str> {
        self.name_at(Level::Class)
    }

    /// Finest populated level, `None` for special labels.
    pub fn finest_level(&self) -> Option<Level> {
        Level::from_depth(self.names.len())
    }

    pub fn rollup(&self, level: Level) -> RolledLabel<'_> {
        match self.special {
            Some(kind) => RolledLabel::Special {
                kind,
                label_id: &self.label_id,
            },
            None => RolledLabel::Taxon {
                path: &self.names[..self.names.len().min(level.depth())],
                exact: self.names.len() >= level.depth(),
            },
        }
    }

    /// Column view matching the taxonomy file layout.
    pub fn to_raw(&self) -> RawTaxon {
        let mut names: [Option<String>; 5] = Default::default();
        for (slot, n) in names.iter_mut().zip(&self.names) {
            *slot = Some(n.clone());
        }
        RawTaxon {
            label_id: self.label_id.clone(),
            names,
            special: self.special,
        }
    }
}

/// A label viewed at some taxonomic level.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum RolledLabel<'a> {
    /// Blank and unknown labels are fixed points of rollup.
    Special {
        kind: SpecialKind,
        label_id: &'a str,
    },
    /// Ancestor names from Class down to the requested level. `exact` is
    /// false when the label is not identified that finely, in which case
    /// `path` ends at the finest populated level.
    Taxon { path: &'a [String], exact: bool },
}

impl<'a> RolledLabel<'a> {
    pub fn rollup(self, level: Level) -> RolledLabel<'a> {
        match self {
            RolledLabel::Taxon { path, .. } => {
                let depth = level.depth();
                if path.len() > depth {
                    RolledLabel::Taxon {
                        path: &path[..depth],
                        exact: true,
                    }
                } else {
                    RolledLabel::Taxon {
                        path,
                        exact: path.len() == depth,
                    }
                }
            }
            special => special,
        }
    }

    /// The display key: the finest name on the path, or the label id of a
    /// special label.
    pub fn name(&self) -> &'a str {
        match *self {
            RolledLabel::Special { label_id, .. } => label_id,
            RolledLabel::Taxon { path, .. } => path.last().map(String::as_str).unwrap_or(""),
        }
    }

    pub fn is_exact(&self) -> bool {
        match self {
            RolledLabel::Special { .. } => true,
            RolledLabel::Taxon { exact, .. } => *exact,
        }
    }

    pub fn special_kind(&self) -> Option<SpecialKind> {
        match self {
            RolledLabel::Special { kind, .. } => Some(*kind),
            RolledLabel::Taxon { .. } => None,
        }
    }
}

/// Validated collection of labels with designated blank and unknown ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaxonomyTable {
    records: BTreeMap<String, TaxonRecord>,
    blank_id: String,
    unknown_id: Option<String>,
}

/// Id given to the blank label added when a taxonomy lacks one.
pub const SYNTHETIC_BLANK_ID: &str = "blank";

impl TaxonomyTable {
    /// Validates rows into a table.
    ///
    /// Rows with a duplicate id or a malformed name layout are rejected and
    /// reported. Tree-consistency conflicts are reported but the rows are
    /// kept. When no blank label exists a synthetic one is added and the
    /// absence is reported.
    pub fn build<I>(rows: I) -> (TaxonomyTable, ValidationReport)
    where
        I: IntoIterator<Item = RawTaxon>,
    {
        let mut report = ValidationReport::new();
        let mut records: BTreeMap<String, TaxonRecord> = BTreeMap::new();
        let mut blank_id = None;
        let mut unknown_id = None;
        for (row, raw) in rows.into_iter().enumerate() {
            let key = if raw.label_id.is_empty() {
                format!("row:{}", row + 1)
            } else {
                raw.label_id.clone()
            };
            let rec = match TaxonRecord::from_raw(raw) {
                Ok(rec) => rec,
                Err((kind, detail)) => {
                    report.push(Issue::error(kind, key, detail));
                    continue;
                }
            };
            if records.contains_key(rec.label_id()) {
                report.push(Issue::error(
                    IssueKind::DuplicateId,
                    key,
                    "duplicate label_id; first occurrence kept",
                ));
                continue;
            }
            match rec.special {
                Some(SpecialKind::Blank) if blank_id.is_none() => {
                    blank_id = Some(rec.label_id.clone())
                }
                Some(SpecialKind::Unknown) if unknown_id.is_none() => {
                    unknown_id = Some(rec.label_id.clone())
                }
                _ => {}
            }
            records.insert(rec.label_id.clone(), rec);
        }

        let blank_id = match blank_id {
            Some(id) => id,
            None => {
                let mut id = String::from(SYNTHETIC_BLANK_ID);
                while records.contains_key(&id) {
                    id.push('_');
                }
                report.push(Issue::error(
                    IssueKind::MissingField,
                    id.clone(),
                    "taxonomy has no blank label; a synthetic blank label was added",
                ));
                records.insert(
                    id.clone(),
                    TaxonRecord::special(id.clone(), SpecialKind::Blank),
                );
                id
            }
        };

        let table = TaxonomyTable {
            records,
            blank_id,
            unknown_id,
        };
        report.extend(table.consistency_report());
        (table, report.sorted())
    }

    /// Builds from already validated records; the first blank and unknown
    /// records become the designated ones.
    pub fn from_records<I: IntoIterator<Item = TaxonRecord>>(
        records: I,
    ) -> (TaxonomyTable, ValidationReport) {
        Self::build(records.into_iter().map(|r| r.to_raw()))
    }

    /// Reports every record whose ancestors at some level disagree with the
    /// first record (in label-id order) sharing its name at that level within
    /// the same class.
    pub fn consistency_report(&self) -> ValidationReport {
        let mut report = ValidationReport::new();
        // (level, class name, name at level) -> (first label id, ancestor names)
        let mut seen: BTreeMap<(Level, &str, &str), (&str, &[String])> = BTreeMap::new();
        for rec in self.records.values() {
            let Some(class) = rec.class_name() else {
                continue;
            };
            for level in &Level::ALL[1..] {
                let Some(name) = rec.name_at(*level) else {
                    break;
                };
                let ancestors = &rec.names[..*level as usize];
                match seen.get(&(*level, class, name)) {
                    None => {
                        seen.insert((*level, class, name), (rec.label_id(), ancestors));
                    }
                    Some((first, expected)) if *expected != ancestors => {
                        report.push(Issue::error(
                            IssueKind::TreeInconsistency,
                            rec.label_id(),
                            format!(
                                "{level} `{name}` has ancestors [{}] but `{first}` places it under [{}]",
                                ancestors.join(" > "),
                                expected.join(" > ")
                            ),
                        ));
                        break;
                    }
                    Some(_) => {}
                }
            }
        }
        report.sorted()
    }

    pub fn get(&self, label_id: &str) -> Option<&TaxonRecord> {
        self.records.get(label_id)
    }

    pub fn resolve(&self, label_id: &str) -> Result<&TaxonRecord> {
        self.get(label_id)
            .ok_or_else(|| Error::UnknownLabel(label_id.to_string()))
    }

    pub fn contains(&self, label_id: &str) -> bool {
        self.records.contains_key(label_id)
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Records in label-id order.
    pub fn records(&self) -> impl Iterator<Item = &TaxonRecord> {
        self.records.values()
    }

    pub fn blank_id(&self) -> &str {
        &self.blank_id
    }

    pub fn unknown_id(&self) -> Option<&str> {
        self.unknown_id.as_deref()
    }

    pub fn rollup(&self, label_id: &str, level: Level) -> Result<RolledLabel<'_>> {
        self.resolve(label_id).map(|r| r.rollup(level))
    }

    pub fn is_blank(&self, label_id: &str) -> Result<bool> {
        self.resolve(label_id)
            .map(|r| r.special == Some(SpecialKind::Blank))
    }

    /// Distinct-name counts over every taxon in the table.
    pub fn distinct_counts(&self, group_by_class: bool) -> DistinctCounts {
        DistinctCounts::from_records(self.records(), group_by_class)
    }

    /// Distinct-name counts over the labels referenced by `label_ids`.
    /// Unresolvable ids are ignored.
    pub fn distinct_counts_of<'s, I>(&self, label_ids: I, group_by_class: bool) -> DistinctCounts
    where
        I: IntoIterator<Item = &'s str>,
    {
        let mut used: BTreeMap<&str, &TaxonRecord> = BTreeMap::new();
        for id in label_ids {
            if let Some(rec) = self.get(id) {
                used.insert(rec.label_id(), rec);
            }
        }
        DistinctCounts::from_records(used.into_values(), group_by_class)
    }

    /// Dense index of the distinct rolled labels at `level`.
    pub fn index_at(&self, level: Level) -> RolledIndex<'_> {
        RolledIndex::new(self, level)
    }
}

/// Distinct-name counts per level for one group of taxa.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LevelCounts([usize; 5]);

impl LevelCounts {
    pub fn new(class: usize, order: usize, family: usize, genus: usize, species: usize) -> Self {
        Self([class, order, family, genus, species])
    }

    pub fn get(&self, level: Level) -> usize {
        self.0[level as usize]
    }
}

/// Distinct-name counts keyed by class name, or by `None` for the
/// ungrouped total. Special labels are excluded.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DistinctCounts {
    groups: BTreeMap<Option<String>, LevelCounts>,
}

impl DistinctCounts {
    fn from_records<'r, I>(records: I, group_by_class: bool) -> Self
    where
        I: IntoIterator<Item = &'r TaxonRecord>,
    {
        // A name is identified by its path prefix, so homonyms in different
        // branches stay distinct.
        let mut sets: BTreeMap<Option<&str>, [alloc::collections::BTreeSet<&[String]>; 5]> =
            BTreeMap::new();
        for rec in records {
            let Some(class) = rec.class_name() else {
                continue;
            };
            let key = group_by_class.then_some(class);
            let entry = sets.entry(key).or_default();
            for depth in 1..=rec.names.len() {
                entry[depth - 1].insert(&rec.names[..depth]);
            }
        }
        let groups = sets
            .into_iter()
            .map(|(k, s)| {
                let mut counts = [0; 5];
                for (c, set) in counts.iter_mut().zip(&s) {
                    *c = set.len();
                }
                (k.map(String::from), LevelCounts(counts))
            })
            .collect();
        Self { groups }
    }

    pub fn get(&self, class: Option<&str>) -> Option<LevelCounts> {
        self.groups
            .iter()
            .find(|(k, _)| k.as_deref() == class)
            .map(|(_, v)| *v)
    }

    pub fn iter(&self) -> impl Iterator<Item = (Option<&str>, LevelCounts)> {
        self.groups.iter().map(|(k, v)| (k.as_deref(), *v))
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }

    pub fn len(&self) -> usize {
        self.groups.len()
    }
}

/// Interns the rolled labels of a table at one level into dense ids so that
/// scoring compares integers.
#[derive(Debug, Clone)]
pub struct RolledIndex<'a> {
    level: Level,
    by_label: BTreeMap<&'a str, u32>,
    classes: Vec<RolledLabel<'a>>,
}

impl<'a> RolledIndex<'a> {
    fn new(table: &'a TaxonomyTable, level: Level) -> Self {
        let mut ids: BTreeMap<RolledLabel<'a>, u32> = BTreeMap::new();
        let mut by_label = BTreeMap::new();
        for rec in table.records() {
            let rolled = rec.rollup(level);
            let next = ids.len() as u32;
            let id = *ids.entry(rolled).or_insert(next);
            by_label.insert(rec.label_id(), id);
        }
        let mut classes = alloc::vec![RolledLabel::Taxon { path: &[], exact: false }; ids.len()];
        for (rolled, id) in ids {
            classes[id as usize] = rolled;
        }
        Self {
            level,
            by_label,
            classes,
        }
    }

    pub fn level(&self) -> Level {
        self.level
    }

    pub fn id_of(&self, label_id: &str) -> Option<u32> {
        self.by_label.get(label_id).copied()
    }

    pub fn rolled(&self, id: u32) -> RolledLabel<'a> {
        self.classes[id as usize]
    }

    /// Number of distinct rolled labels.
    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }
}
