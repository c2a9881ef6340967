//! Deployment and image records, validation, and multi-source unification.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::report::{Issue, IssueKind, ValidationReport};
use crate::taxonomy::TaxonomyTable;
use crate::time::Timestamp;

/// A physical camera placement.
#[derive(Debug, Clone, PartialEq)]
pub struct Deployment {
    pub deployment_id: String,
    pub project_id: String,
    pub latitude: f64,
    pub longitude: f64,
    pub camera_model: Option<String>,
    pub start_time: Option<Timestamp>,
    pub end_time: Option<Timestamp>,
    /// Free text carried through from the source file.
    pub notes: Option<String>,
}

impl Deployment {
    pub fn new(
        deployment_id: impl Into<String>,
        project_id: impl Into<String>,
        latitude: f64,
        longitude: f64,
    ) -> Self {
        Self {
            deployment_id: deployment_id.into(),
            project_id: project_id.into(),
            latitude,
            longitude,
            camera_model: None,
            start_time: None,
            end_time: None,
            notes: None,
        }
    }

    /// Problems with this record in isolation.
    pub fn check(&self, key: &str) -> Vec<Issue> {
        let mut out = Vec::new();
        if self.deployment_id.is_empty() {
            out.push(Issue::error(
                IssueKind::MissingField,
                key,
                "deployment_id is empty",
            ));
        }
        if self.project_id.is_empty() {
            out.push(Issue::error(
                IssueKind::MissingField,
                key,
                "project_id is empty",
            ));
        }
        if !valid_coordinate(self.latitude, self.longitude) {
            out.push(Issue::error(
                IssueKind::BadCoordinate,
                key,
                format!(
                    "latitude {} / longitude {} outside [-90, 90] x [-180, 180]",
                    self.latitude, self.longitude
                ),
            ));
        }
        if let (Some(start), Some(end)) = (self.start_time, self.end_time) {
            if start > end {
                out.push(Issue::error(
                    IssueKind::BadTimestamp,
                    key,
                    format!("start_time {start} is after end_time {end}"),
                ));
            }
        }
        out
    }
}

/// Metadata of one camera-trap image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageRecord {
    pub image_id: String,
    pub deployment_id: String,
    pub timestamp: Timestamp,
    pub label_id: String,
    pub burst_index: Option<u32>,
    pub source_id: String,
}

impl ImageRecord {
    pub fn check(&self, key: &str) -> Vec<Issue> {
        let mut out = Vec::new();
        for (name, value) in [
            ("image_id", &self.image_id),
            ("deployment_id", &self.deployment_id),
            ("label_id", &self.label_id),
            ("source_id", &self.source_id),
        ] {
            if value.is_empty() {
                out.push(Issue::error(
                    IssueKind::MissingField,
                    key,
                    format!("{name} is empty"),
                ));
            }
        }
        out
    }
}

pub fn valid_coordinate(latitude: f64, longitude: f64) -> bool {
    (-90.0..=90.0).contains(&latitude) && (-180.0..=180.0).contains(&longitude)
}

/// Checks parsed deployments and images against each other and the
/// taxonomy.
///
/// Reports orphan images, unknown labels, out-of-range coordinates,
/// inverted deployment periods, empty required fields and duplicate keys
/// (every occurrence after the first). Issues are ordered by
/// (kind, record key).
pub fn validate(
    deployments: &[Deployment],
    images: &[ImageRecord],
    taxonomy: &TaxonomyTable,
) -> ValidationReport {
    let mut report = ValidationReport::new();
    let mut known_deployments = BTreeSet::new();
    for d in deployments {
        for issue in d.check(&d.deployment_id) {
            report.push(issue);
        }
        if !known_deployments.insert(d.deployment_id.as_str()) {
            report.push(Issue::error(
                IssueKind::DuplicateId,
                &d.deployment_id,
                "duplicate deployment_id",
            ));
        }
    }
    let mut seen_images = BTreeSet::new();
    for img in images {
        for issue in img.check(&img.image_id) {
            report.push(issue);
        }
        if !seen_images.insert(img.image_id.as_str()) {
            report.push(Issue::error(
                IssueKind::DuplicateId,
                &img.image_id,
                "duplicate image_id",
            ));
            continue;
        }
        if !img.deployment_id.is_empty() && !known_deployments.contains(img.deployment_id.as_str())
        {
            report.push(orphan(img));
        }
        if !img.label_id.is_empty() && !taxonomy.contains(&img.label_id) {
            report.push(unknown_label(img));
        }
    }
    report.sorted()
}

fn orphan(img: &ImageRecord) -> Issue {
    Issue::error(
        IssueKind::OrphanImage,
        &img.image_id,
        format!("deployment `{}` does not exist", img.deployment_id),
    )
}

fn unknown_label(img: &ImageRecord) -> Issue {
    Issue::error(
        IssueKind::UnknownLabel,
        &img.image_id,
        format!("label `{}` is not in the taxonomy", img.label_id),
    )
}

/// One contributing partner dataset.
#[derive(Debug, Clone, Default)]
pub struct Source {
    pub name: String,
    pub deployments: Vec<Deployment>,
    pub images: Vec<ImageRecord>,
}

impl Source {
    pub fn new(
        name: impl Into<String>,
        deployments: Vec<Deployment>,
        images: Vec<ImageRecord>,
    ) -> Self {
        Self {
            name: name.into(),
            deployments,
            images,
        }
    }
}

/// What a source contributed to a unified dataset.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SourceDescriptor {
    pub name: String,
    pub deployments_read: usize,
    pub images_read: usize,
    pub deployments_kept: usize,
    pub images_kept: usize,
}

/// Deduplicated, referentially consistent dataset. Immutable once built.
#[derive(Debug, Clone)]
pub struct UnifiedDataset {
    deployments: Vec<Deployment>,
    images: Vec<ImageRecord>,
    taxonomy: TaxonomyTable,
    provenance: Vec<SourceDescriptor>,
}

impl UnifiedDataset {
    /// Deployments sorted by id.
    pub fn deployments(&self) -> &[Deployment] {
        &self.deployments
    }

    /// Images sorted by id.
    pub fn images(&self) -> &[ImageRecord] {
        &self.images
    }

    pub fn taxonomy(&self) -> &TaxonomyTable {
        &self.taxonomy
    }

    pub fn provenance(&self) -> &[SourceDescriptor] {
        &self.provenance
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn deployment(&self, deployment_id: &str) -> Option<&Deployment> {
        self.deployment_index(deployment_id)
            .map(|i| &self.deployments[i])
    }

    pub fn deployment_index(&self, deployment_id: &str) -> Option<usize> {
        self.deployments
            .binary_search_by(|d| d.deployment_id.as_str().cmp(deployment_id))
            .ok()
    }

    pub fn image(&self, image_id: &str) -> Option<&ImageRecord> {
        self.image_index(image_id).map(|i| &self.images[i])
    }

    pub fn image_index(&self, image_id: &str) -> Option<usize> {
        self.images
            .binary_search_by(|i| i.image_id.as_str().cmp(image_id))
            .ok()
    }

    /// Index into [`deployments`](Self::deployments) for every image, in
    /// image order. Unification guarantees every image resolves.
    pub fn image_deployment_indices(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.images.len());
        let mut last: Option<(&str, usize)> = None;
        for img in &self.images {
            let idx = match last {
                Some((id, idx)) if id == img.deployment_id => idx,
                _ => self
                    .deployment_index(&img.deployment_id)
                    .expect("unified images reference existing deployments"),
            };
            last = Some((&img.deployment_id, idx));
            out.push(idx);
        }
        out
    }

    /// Dataset restricted to the given image ids; unknown ids are ignored.
    /// Deployments and taxonomy are kept whole.
    pub fn subset<'s, I: IntoIterator<Item = &'s str>>(&self, image_ids: I) -> UnifiedDataset {
        let keep: BTreeSet<usize> = image_ids
            .into_iter()
            .filter_map(|id| self.image_index(id))
            .collect();
        UnifiedDataset {
            deployments: self.deployments.clone(),
            images: keep.into_iter().map(|i| self.images[i].clone()).collect(),
            taxonomy: self.taxonomy.clone(),
            provenance: self.provenance.clone(),
        }
    }
}

/// Merges sources into one dataset.
///
/// Sources are concatenated in order and deduplicated by exact key, first
/// occurrence winning. A later copy identical to the winner is recorded as a
/// note; a differing copy, or any repeat within one source, is a
/// `duplicate_id` error. Records failing their own checks, images whose
/// deployment did not survive, and images with labels missing from the
/// taxonomy are dropped and reported.
pub fn unify(sources: Vec<Source>, taxonomy: TaxonomyTable) -> (UnifiedDataset, ValidationReport) {
    let mut report = ValidationReport::new();
    let mut provenance: Vec<SourceDescriptor> = sources
        .iter()
        .map(|s| SourceDescriptor {
            name: s.name.clone(),
            deployments_read: s.deployments.len(),
            images_read: s.images.len(),
            deployments_kept: 0,
            images_kept: 0,
        })
        .collect();
    let names: Vec<String> = sources.iter().map(|s| s.name.clone()).collect();

    let mut deployments: BTreeMap<String, (usize, Deployment)> = BTreeMap::new();
    let mut images: Vec<(usize, ImageRecord)> = Vec::new();
    for (src, source) in sources.into_iter().enumerate() {
        for d in source.deployments {
            let problems = d.check(&d.deployment_id);
            if !problems.is_empty() {
                for issue in problems {
                    report.push(issue);
                }
                continue;
            }
            match deployments.get(&d.deployment_id) {
                None => {
                    deployments.insert(d.deployment_id.clone(), (src, d));
                }
                Some((first, kept)) => {
                    report.push(duplicate(
                        &d.deployment_id,
                        "deployment",
                        &names,
                        *first,
                        src,
                        *kept == d,
                    ));
                }
            }
        }
        images.extend(source.images.into_iter().map(|i| (src, i)));
    }

    let deployments: Vec<Deployment> = deployments
        .into_values()
        .map(|(src, d)| {
            provenance[src].deployments_kept += 1;
            d
        })
        .collect();

    // Stable sort keeps source order among equal ids, so the first element
    // of each run is the first occurrence.
    images.retain(|(_, img)| {
        let problems = img.check(&img.image_id);
        let ok = problems.is_empty();
        for issue in problems {
            report.push(issue);
        }
        ok
    });
    images.sort_by(|a, b| a.1.image_id.cmp(&b.1.image_id));
    let mut kept: Vec<ImageRecord> = Vec::with_capacity(images.len());
    let mut run: Option<(usize, ImageRecord)> = None;
    let mut finish = |run: Option<(usize, ImageRecord)>, report: &mut ValidationReport| {
        let Some((src, img)) = run else { return };
        let resolves = deployments
            .binary_search_by(|d| d.deployment_id.as_str().cmp(&img.deployment_id))
            .is_ok();
        let labelled = taxonomy.contains(&img.label_id);
        if !resolves {
            report.push(orphan(&img));
        }
        if !labelled {
            report.push(unknown_label(&img));
        }
        if resolves && labelled {
            provenance[src].images_kept += 1;
            kept.push(img);
        }
    };
    for (src, img) in images {
        match &run {
            Some((first, winner)) if winner.image_id == img.image_id => {
                report.push(duplicate(
                    &img.image_id,
                    "image",
                    &names,
                    *first,
                    src,
                    *winner == img,
                ));
            }
            _ => {
                finish(run.take(), &mut report);
                run = Some((src, img));
            }
        }
    }
    finish(run.take(), &mut report);

    let dataset = UnifiedDataset {
        deployments,
        images: kept,
        taxonomy,
        provenance,
    };
    (dataset, report.sorted())
}

fn duplicate(
    key: &str,
    what: &str,
    names: &[String],
    first: usize,
    later: usize,
    identical: bool,
) -> Issue {
    if identical && first != later {
        Issue::note(
            IssueKind::DuplicateId,
            key,
            format!(
                "{what} in source `{}` is identical to the copy from source `{}`",
                names[later], names[first]
            ),
        )
    } else if first == later {
        Issue::error(
            IssueKind::DuplicateId,
            key,
            format!("{what} repeated within source `{}`", names[later]),
        )
    } else {
        Issue::error(
            IssueKind::DuplicateId,
            key,
            format!(
                "{what} in source `{}` differs from the copy kept from source `{}`",
                names[later], names[first]
            ),
        )
    }
}
