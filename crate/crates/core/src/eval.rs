//! Scoring of externally produced ranked predictions.
//!
//! Truth comes from the image records of a (usually eval-fold) dataset.
//! Labels on both sides are rolled up to a chosen level and interned, so all
//! metrics reduce to integer counts that merge commutatively across shards.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::ingest::ImageRecord;
use crate::stats::SequenceGroup;
use crate::taxonomy::{Level, RolledIndex, SpecialKind, TaxonomyTable};

/// A ranked list of `(label, score)` for one image (or sequence).
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionRecord {
    image_id: String,
    entries: Vec<(String, f64)>,
}

impl PredictionRecord {
    /// Validates a record: at least one entry, finite scores, distinct
    /// labels. Entries out of score order are stably re-sorted; the flag
    /// tells whether that happened.
    pub fn new(
        image_id: impl Into<String>,
        mut entries: Vec<(String, f64)>,
    ) -> Result<(Self, bool)> {
        let image_id = image_id.into();
        let invalid = |reason: String| Error::InvalidPrediction {
            image_id: image_id.clone(),
            reason,
        };
        if entries.is_empty() {
            return Err(invalid("no entries".to_string()));
        }
        if let Some((label, score)) = entries.iter().find(|(_, s)| !s.is_finite()) {
            return Err(invalid(format!(
                "score {score} for `{label}` is not finite"
            )));
        }
        if let Some((label, _)) = entries.iter().find(|(l, _)| l.is_empty()) {
            return Err(invalid(format!("empty label `{label}`")));
        }
        let mut labels: Vec<&str> = entries.iter().map(|(l, _)| l.as_str()).collect();
        labels.sort_unstable();
        if let Some(w) = labels.windows(2).find(|w| w[0] == w[1]) {
            return Err(invalid(format!("label `{}` appears twice", w[0])));
        }
        let sorted = entries.windows(2).all(|w| w[0].1 >= w[1].1);
        if !sorted {
            entries.sort_by(|a, b| b.1.total_cmp(&a.1));
        }
        Ok((Self { image_id, entries }, !sorted))
    }

    fn from_sorted(image_id: String, entries: Vec<(String, f64)>) -> Self {
        Self { image_id, entries }
    }

    pub fn image_id(&self) -> &str {
        &self.image_id
    }

    /// Entries by nonincreasing score.
    pub fn entries(&self) -> &[(String, f64)] {
        &self.entries
    }

    pub fn top(&self) -> &(String, f64) {
        &self.entries[0]
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// Predictions keyed by image id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PredictionSet {
    records: Vec<PredictionRecord>,
}

impl PredictionSet {
    /// Keeps the first record per image id; later ids are returned.
    pub fn new(mut records: Vec<PredictionRecord>) -> (Self, Vec<String>) {
        records.sort_by(|a, b| a.image_id.cmp(&b.image_id));
        let mut duplicates = Vec::new();
        let mut out: Vec<PredictionRecord> = Vec::with_capacity(records.len());
        for r in records {
            if out.last().is_some_and(|p| p.image_id == r.image_id) {
                duplicates.push(r.image_id);
            } else {
                out.push(r);
            }
        }
        (Self { records: out }, duplicates)
    }

    pub fn get(&self, image_id: &str) -> Option<&PredictionRecord> {
        self.records
            .binary_search_by(|r| r.image_id.as_str().cmp(image_id))
            .ok()
            .map(|i| &self.records[i])
    }

    /// Records ordered by image id.
    pub fn records(&self) -> &[PredictionRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

/// Interned view of a taxonomy at one level plus the requested cutoffs.
#[derive(Debug, Clone)]
pub struct Scorer<'a> {
    index: RolledIndex<'a>,
    ks: Vec<usize>,
    max_k: usize,
    blank_class: Option<u32>,
}

impl<'a> Scorer<'a> {
    pub fn new(table: &'a TaxonomyTable, level: Level, ks: &[usize]) -> Result<Self> {
        if ks.is_empty() || ks.contains(&0) {
            return Err(Error::InvalidK);
        }
        let mut ks = ks.to_vec();
        ks.sort_unstable();
        ks.dedup();
        let index = table.index_at(level);
        let blank_class = index.id_of(table.blank_id());
        Ok(Self {
            max_k: *ks.last().unwrap_or(&1),
            ks,
            index,
            blank_class,
        })
    }

    pub fn ks(&self) -> &[usize] {
        &self.ks
    }

    pub fn level(&self) -> Level {
        self.index.level()
    }

    pub fn empty_tally(&self) -> Tally {
        Tally {
            evaluated: 0,
            skipped: 0,
            nonblank_evaluated: 0,
            hits: alloc::vec![0; self.ks.len()],
            nonblank_hits: alloc::vec![0; self.ks.len()],
            confusion: alloc::vec![[0; 3]; self.index.len()],
        }
    }

    fn class_of(&self, label: &str) -> Result<u32> {
        self.index
            .id_of(label)
            .ok_or_else(|| Error::UnknownLabel(label.to_string()))
    }

    /// Scores one image into `tally`.
    pub fn add(
        &self,
        tally: &mut Tally,
        truth_label: &str,
        prediction: Option<&PredictionRecord>,
    ) -> Result<()> {
        let truth = self.class_of(truth_label)?;
        let blank_truth = Some(truth) == self.blank_class;
        tally.evaluated += 1;
        if !blank_truth {
            tally.nonblank_evaluated += 1;
        }
        let Some(prediction) = prediction else {
            tally.skipped += 1;
            tally.confusion[truth as usize][FN] += 1;
            return Ok(());
        };
        // Distinct rolled labels in rank order, only as many as the largest k.
        let mut ranked: Vec<u32> = Vec::with_capacity(self.max_k.min(prediction.len()));
        for (label, _) in prediction.entries() {
            let c = self.class_of(label)?;
            if !ranked.contains(&c) {
                ranked.push(c);
                if ranked.len() == self.max_k {
                    break;
                }
            }
        }
        let rank = ranked.iter().position(|&c| c == truth);
        for (i, &k) in self.ks.iter().enumerate() {
            if rank.is_some_and(|r| r < k) {
                tally.hits[i] += 1;
                if !blank_truth {
                    tally.nonblank_hits[i] += 1;
                }
            }
        }
        let top = ranked[0];
        if top == truth {
            tally.confusion[truth as usize][TP] += 1;
        } else {
            tally.confusion[top as usize][FP] += 1;
            tally.confusion[truth as usize][FN] += 1;
        }
        Ok(())
    }

    /// Scores every truth record that has an entry in `predictions` or not.
    pub fn tally(&self, truth: &[ImageRecord], predictions: &PredictionSet) -> Result<Tally> {
        let mut t = self.empty_tally();
        for img in truth {
            self.add(&mut t, &img.label_id, predictions.get(&img.image_id))?;
        }
        Ok(t)
    }

    pub fn report(&self, tally: &Tally) -> MetricsReport {
        let frac = |hits: u64, n: u64| ratio(hits, n).unwrap_or(0.0);
        let top_k = self
            .ks
            .iter()
            .zip(&tally.hits)
            .map(|(&k, &h)| TopK {
                k,
                hits: h,
                accuracy: frac(h, tally.evaluated),
            })
            .collect();
        let top_k_nonblank = self
            .ks
            .iter()
            .zip(&tally.nonblank_hits)
            .map(|(&k, &h)| TopK {
                k,
                hits: h,
                accuracy: frac(h, tally.nonblank_evaluated),
            })
            .collect();
        let mut per_class: Vec<ClassMetrics> = tally
            .confusion
            .iter()
            .enumerate()
            .filter(|(_, c)| c.iter().any(|&n| n > 0))
            .map(|(i, c)| ClassMetrics::from_counts(self.index.rolled(i as u32).name(), c))
            .collect();
        per_class.sort_by(|a, b| a.label.cmp(&b.label));
        let blank = match self.blank_class {
            Some(b) => {
                let c = &tally.confusion[b as usize];
                BlankMetrics {
                    precision: ratio(c[TP], c[TP] + c[FP]),
                    recall: ratio(c[TP], c[TP] + c[FN]),
                    support: c[TP] + c[FN],
                }
            }
            None => BlankMetrics::default(),
        };
        MetricsReport {
            level: self.level(),
            evaluated: tally.evaluated,
            skipped: tally.skipped,
            nonblank_evaluated: tally.nonblank_evaluated,
            top_k,
            top_k_nonblank,
            per_class,
            blank,
        }
    }
}

const TP: usize = 0;
const FP: usize = 1;
const FN: usize = 2;

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

/// Mergeable integer counts behind every metric.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Tally {
    evaluated: u64,
    skipped: u64,
    nonblank_evaluated: u64,
    hits: Vec<u64>,
    nonblank_hits: Vec<u64>,
    /// `[tp, fp, fn]` per interned class from the top-1 decision.
    confusion: Vec<[u64; 3]>,
}

impl Tally {
    /// Adds another shard's counts. Addition commutes, so merge order never
    /// changes a reported metric.
    pub fn merge(&mut self, other: &Tally) {
        self.evaluated += other.evaluated;
        self.skipped += other.skipped;
        self.nonblank_evaluated += other.nonblank_evaluated;
        for (a, b) in self.hits.iter_mut().zip(&other.hits) {
            *a += b;
        }
        for (a, b) in self.nonblank_hits.iter_mut().zip(&other.nonblank_hits) {
            *a += b;
        }
        for (a, b) in self.confusion.iter_mut().zip(&other.confusion) {
            for j in 0..3 {
                a[j] += b[j];
            }
        }
    }

    pub fn evaluated(&self) -> u64 {
        self.evaluated
    }

    pub fn skipped(&self) -> u64 {
        self.skipped
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TopK {
    pub k: usize,
    pub hits: u64,
    pub accuracy: f64,
}

/// Top-1 precision and recall for one rolled label. `None` marks 0/0.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassMetrics {
    pub label: String,
    pub true_positives: u64,
    pub false_positives: u64,
    pub false_negatives: u64,
    pub support: u64,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
}

impl ClassMetrics {
    fn from_counts(label: &str, c: &[u64; 3]) -> Self {
        Self {
            label: label.to_string(),
            true_positives: c[TP],
            false_positives: c[FP],
            false_negatives: c[FN],
            support: c[TP] + c[FN],
            precision: ratio(c[TP], c[TP] + c[FP]),
            recall: ratio(c[TP], c[TP] + c[FN]),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct BlankMetrics {
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub support: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub level: Level,
    /// Truth images scored, including those without a prediction.
    pub evaluated: u64,
    /// Truth images without a prediction; counted as misses.
    pub skipped: u64,
    pub nonblank_evaluated: u64,
    pub top_k: Vec<TopK>,
    /// Top-k restricted to images whose truth is not blank.
    pub top_k_nonblank: Vec<TopK>,
    /// Labels with at least one actual or predicted occurrence, by label.
    pub per_class: Vec<ClassMetrics>,
    pub blank: BlankMetrics,
}

impl MetricsReport {
    pub fn accuracy_at(&self, k: usize) -> Option<f64> {
        self.top_k.iter().find(|t| t.k == k).map(|t| t.accuracy)
    }
}

/// Runs every metric in one pass.
pub fn evaluate(
    truth: &[ImageRecord],
    predictions: &PredictionSet,
    table: &TaxonomyTable,
    level: Level,
    ks: &[usize],
) -> Result<MetricsReport> {
    let scorer = Scorer::new(table, level, ks)?;
    let tally = scorer.tally(truth, predictions)?;
    Ok(scorer.report(&tally))
}

/// Fraction of truth images whose rolled label is among the first `k`
/// distinct rolled predicted labels; images without predictions are misses.
pub fn topk_accuracy(
    predictions: &PredictionSet,
    truth: &[ImageRecord],
    k: usize,
    level: Level,
    table: &TaxonomyTable,
) -> Result<TopK> {
    if k < 1 {
        return Err(Error::InvalidK);
    }
    let report = evaluate(truth, predictions, table, level, &[k])?;
    Ok(report.top_k[0])
}

/// Top-1 per-label precision, recall and support.
pub fn per_class_metrics(
    predictions: &PredictionSet,
    truth: &[ImageRecord],
    level: Level,
    table: &TaxonomyTable,
) -> Result<Vec<ClassMetrics>> {
    Ok(evaluate(truth, predictions, table, level, &[1])?.per_class)
}

/// Precision and recall of the designated blank label.
pub fn blank_metrics(
    predictions: &PredictionSet,
    truth: &[ImageRecord],
    table: &TaxonomyTable,
) -> Result<BlankMetrics> {
    Ok(evaluate(truth, predictions, table, Level::Species, &[1])?.blank)
}

/// Inclusive latitude/longitude rectangle in degrees.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeoBox {
    pub lat_min: f64,
    pub lat_max: f64,
    pub lon_min: f64,
    pub lon_max: f64,
}

impl GeoBox {
    pub fn contains(&self, latitude: f64, longitude: f64) -> bool {
        (self.lat_min..=self.lat_max).contains(&latitude)
            && (self.lon_min..=self.lon_max).contains(&longitude)
    }
}

/// Allowed extents per label. Labels without boxes are unrestricted.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RangeMap {
    boxes: BTreeMap<String, Vec<GeoBox>>,
}

impl RangeMap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, label_id: impl Into<String>, b: GeoBox) -> Result<()> {
        let label_id = label_id.into();
        let invalid = |reason: &str| Error::InvalidRangeBox {
            label_id: label_id.clone(),
            reason: reason.to_string(),
        };
        let vals = [b.lat_min, b.lat_max, b.lon_min, b.lon_max];
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(invalid("bounds must be finite"));
        }
        if b.lat_min > b.lat_max || b.lon_min > b.lon_max {
            return Err(invalid("minimum exceeds maximum"));
        }
        if b.lat_min < -90.0 || b.lat_max > 90.0 || b.lon_min < -180.0 || b.lon_max > 180.0 {
            return Err(invalid("bounds outside [-90, 90] x [-180, 180]"));
        }
        self.boxes.entry(label_id).or_default().push(b);
        Ok(())
    }

    pub fn boxes(&self, label_id: &str) -> Option<&[GeoBox]> {
        self.boxes.get(label_id).map(Vec::as_slice)
    }

    pub fn allows(&self, label_id: &str, latitude: f64, longitude: f64) -> bool {
        match self.boxes.get(label_id) {
            None => true,
            Some(bs) => bs.iter().any(|b| b.contains(latitude, longitude)),
        }
    }

    pub fn len(&self) -> usize {
        self.boxes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.boxes.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &GeoBox)> {
        self.boxes
            .iter()
            .flat_map(|(l, bs)| bs.iter().map(move |b| (l.as_str(), b)))
    }
}

/// Drops entries whose label is range-restricted away from the location,
/// keeping survivors in order. If nothing survives, the result is the single
/// entry `(unknown_label, 0.0)`.
pub fn geofilter(
    prediction: &PredictionRecord,
    latitude: f64,
    longitude: f64,
    range_map: &RangeMap,
    unknown_label: &str,
) -> PredictionRecord {
    let mut entries: Vec<(String, f64)> = prediction
        .entries
        .iter()
        .filter(|(label, _)| range_map.allows(label, latitude, longitude))
        .cloned()
        .collect();
    if entries.is_empty() {
        entries.push((unknown_label.to_string(), 0.0));
    }
    PredictionRecord::from_sorted(prediction.image_id.clone(), entries)
}

/// Sequence-level predictions from member-image predictions.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SequencePredictions {
    pub records: Vec<PredictionRecord>,
    /// Sequence ids none of whose members had a prediction.
    pub skipped: Vec<String>,
}

/// Averages member predictions per sequence.
///
/// Each member's scores are divided by its top score, then every label's
/// normalized scores are averaged over the members that have predictions
/// (a label missing from a member contributes 0). Labels are re-ranked by
/// descending mean, ties by label id.
pub fn sequence_aggregate(
    predictions: &PredictionSet,
    groups: &[SequenceGroup],
) -> SequencePredictions {
    let mut out = SequencePredictions::default();
    for group in groups {
        let members: Vec<&PredictionRecord> = group
            .image_ids
            .iter()
            .filter_map(|id| predictions.get(id))
            .collect();
        if members.is_empty() {
            out.skipped.push(group.sequence_id.clone());
            continue;
        }
        let mut sums: BTreeMap<&str, f64> = BTreeMap::new();
        for p in &members {
            let top = p.top().1;
            for (label, score) in p.entries() {
                let norm = if top > 0.0 { score / top } else { *score };
                *sums.entry(label).or_insert(0.0) += norm;
            }
        }
        let m = members.len() as f64;
        let mut entries: Vec<(String, f64)> = sums
            .into_iter()
            .map(|(l, s)| (l.to_string(), s / m))
            .collect();
        entries.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        out.records.push(PredictionRecord::from_sorted(
            group.sequence_id.clone(),
            entries,
        ));
    }
    out
}

/// True if `kind` is the blank special kind; convenience for callers that
/// hold a rolled label.
pub fn is_blank_kind(kind: Option<SpecialKind>) -> bool {
    kind == Some(SpecialKind::Blank)
}
