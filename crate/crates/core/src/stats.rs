//! Dataset-health diagnostics: label distribution and skew, blank rate,
//! labeling effort, burst grouping and class weights.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::time::Duration;

use crate::error::{Error, Result};
use crate::ingest::UnifiedDataset;
use crate::taxonomy::Level;
use crate::time::Timestamp;

/// Default maximum spacing between consecutive images of one burst.
pub const DEFAULT_MAX_GAP: Duration = Duration::from_secs(60);

/// Image counts per rolled label. Labels with no images are absent.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ClassHistogram {
    counts: BTreeMap<String, u64>,
    total: u64,
    level: Option<Level>,
}

impl ClassHistogram {
    pub fn from_counts<I, S>(counts: I) -> Self
    where
        I: IntoIterator<Item = (S, u64)>,
        S: Into<String>,
    {
        let mut h = ClassHistogram::default();
        for (label, n) in counts {
            h.add(label.into(), n);
        }
        h
    }

    fn add(&mut self, label: String, n: u64) {
        if n == 0 {
            return;
        }
        *self.counts.entry(label).or_default() += n;
        self.total += n;
    }

    /// Adds another histogram's counts; used to merge shards.
    pub fn merge(&mut self, other: ClassHistogram) {
        for (label, n) in other.counts {
            self.add(label, n);
        }
        if self.level.is_none() {
            self.level = other.level;
        }
    }

    pub fn counts(&self) -> &BTreeMap<String, u64> {
        &self.counts
    }

    pub fn get(&self, label: &str) -> u64 {
        self.counts.get(label).copied().unwrap_or(0)
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn level(&self) -> Option<Level> {
        self.level
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    /// Histogram without the given labels.
    pub fn without<'s, I: IntoIterator<Item = &'s str>>(&self, labels: I) -> ClassHistogram {
        let mut out = self.clone();
        for l in labels {
            if let Some(n) = out.counts.remove(l) {
                out.total -= n;
            }
        }
        out
    }
}

/// Image counts per label rolled up to `level`. Blank and unknown images
/// are counted under their own label ids.
pub fn class_distribution(dataset: &UnifiedDataset, level: Level) -> ClassHistogram {
    class_distribution_of(
        dataset,
        dataset.images().iter().map(|i| i.label_id.as_str()),
        level,
    )
}

/// Like [`class_distribution`] over an arbitrary slice of label ids;
/// unresolvable ids are skipped.
pub fn class_distribution_of<'s, I>(
    dataset: &UnifiedDataset,
    label_ids: I,
    level: Level,
) -> ClassHistogram
where
    I: IntoIterator<Item = &'s str>,
{
    let index = dataset.taxonomy().index_at(level);
    let mut dense = alloc::vec![0u64; index.len()];
    for id in label_ids {
        if let Some(c) = index.id_of(id) {
            dense[c as usize] += 1;
        }
    }
    let mut h = ClassHistogram {
        level: Some(level),
        ..Default::default()
    };
    for (c, n) in dense.into_iter().enumerate() {
        h.add(String::from(index.rolled(c as u32).name()), n);
    }
    h
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoveragePoint {
    pub rank: usize,
    pub label: String,
    pub count: u64,
    pub cumulative_fraction: f64,
}

/// Share of images held by the most frequent labels.
#[derive(Debug, Clone, PartialEq)]
pub struct SkewReport {
    pub n_top: usize,
    pub coverage_fraction: f64,
    /// Labels by descending count (ties by label), with running coverage.
    pub curve: Vec<CoveragePoint>,
}

pub fn skew_report(histogram: &ClassHistogram, n_top: usize) -> Result<SkewReport> {
    if n_top < 1 {
        return Err(Error::InvalidTopN);
    }
    if histogram.is_empty() {
        return Err(Error::EmptyHistogram);
    }
    let mut sorted: Vec<(&String, u64)> = histogram.counts.iter().map(|(k, v)| (k, *v)).collect();
    sorted.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    let total = histogram.total;
    let mut running = 0u64;
    let curve: Vec<CoveragePoint> = sorted
        .into_iter()
        .enumerate()
        .map(|(i, (label, count))| {
            running += count;
            CoveragePoint {
                rank: i + 1,
                label: label.clone(),
                count,
                cumulative_fraction: running as f64 / total as f64,
            }
        })
        .collect();
    let coverage_fraction = curve[n_top.min(curve.len()) - 1].cumulative_fraction;
    Ok(SkewReport {
        n_top,
        coverage_fraction,
        curve,
    })
}

/// Fraction of images labeled blank.
pub fn blank_rate(dataset: &UnifiedDataset) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let blank = dataset.taxonomy().blank_id();
    let n = dataset
        .images()
        .iter()
        .filter(|i| is_blank_label(dataset, &i.label_id, blank))
        .count();
    Ok(n as f64 / dataset.len() as f64)
}

fn is_blank_label(dataset: &UnifiedDataset, label: &str, designated: &str) -> bool {
    label == designated || dataset.taxonomy().is_blank(label).unwrap_or(false)
}

/// Blank rate per contributing `source_id`, as `(source, blanks, images)`.
pub fn blank_counts_by_source(dataset: &UnifiedDataset) -> BTreeMap<String, (u64, u64)> {
    let blank = dataset.taxonomy().blank_id();
    let mut out: BTreeMap<String, (u64, u64)> = BTreeMap::new();
    for img in dataset.images() {
        let e = match out.get_mut(img.source_id.as_str()) {
            Some(e) => e,
            None => out.entry(img.source_id.clone()).or_default(),
        };
        e.0 += is_blank_label(dataset, &img.label_id, blank) as u64;
        e.1 += 1;
    }
    out
}

/// Hours of manual review needed at a given labeling rate.
pub fn labeling_effort(n_images: u64, rate_images_per_hour: f64) -> Result<f64> {
    if !rate_images_per_hour.is_finite() || rate_images_per_hour <= 0.0 {
        return Err(Error::InvalidRate(rate_images_per_hour));
    }
    Ok(n_images as f64 / rate_images_per_hour)
}

/// Consecutive images from one deployment.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SequenceGroup {
    pub sequence_id: String,
    pub deployment_id: String,
    pub image_ids: Vec<String>,
    pub start: Timestamp,
    pub end: Timestamp,
}

/// Cuts each deployment's time-ordered images wherever the gap to the
/// previous image exceeds `max_gap`. Groups are ordered by deployment, then
/// start time.
pub fn group_bursts(dataset: &UnifiedDataset, max_gap: Duration) -> Vec<SequenceGroup> {
    let mut by_deployment: BTreeMap<&str, Vec<(Timestamp, &str)>> = BTreeMap::new();
    for img in dataset.images() {
        by_deployment
            .entry(&img.deployment_id)
            .or_default()
            .push((img.timestamp, &img.image_id));
    }
    let mut groups = Vec::new();
    for (deployment, mut items) in by_deployment {
        items.sort_unstable();
        let mut current: Vec<(Timestamp, &str)> = Vec::new();
        for item in items {
            if let Some(&(prev, _)) = current.last() {
                if item.0.abs_diff(prev) > max_gap {
                    groups.push(make_group(deployment, &current));
                    current.clear();
                }
            }
            current.push(item);
        }
        if !current.is_empty() {
            groups.push(make_group(deployment, &current));
        }
    }
    groups
}

fn make_group(deployment: &str, members: &[(Timestamp, &str)]) -> SequenceGroup {
    let start = members[0].0;
    SequenceGroup {
        sequence_id: format!("{deployment}@{start}"),
        deployment_id: String::from(deployment),
        image_ids: members.iter().map(|(_, id)| String::from(*id)).collect(),
        start,
        end: members[members.len() - 1].0,
    }
}

/// Per-label loss weights.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassWeights {
    pub weights: BTreeMap<String, f64>,
    pub scheme: &'static str,
    pub cap: f64,
}

/// Capped inverse-frequency weights: `min(cap, N / (K * n_c))` for `N`
/// images over `K` labels. A uniform histogram yields weight 1 everywhere.
pub fn class_weights(histogram: &ClassHistogram, cap: f64) -> Result<ClassWeights> {
    if cap.is_nan() || cap <= 0.0 {
        return Err(Error::InvalidCap(cap));
    }
    if histogram.is_empty() {
        return Err(Error::EmptyHistogram);
    }
    let n = histogram.total as f64;
    let k = histogram.len() as f64;
    let weights = histogram
        .counts
        .iter()
        .map(|(label, &c)| (label.clone(), (n / (k * c as f64)).min(cap)))
        .collect();
    Ok(ClassWeights {
        weights,
        scheme: "inverse_frequency",
        cap,
    })
}
