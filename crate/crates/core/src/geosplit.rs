//! Geographic grid regions and leakage-free train/eval splitting.
//!
//! Coordinates are binned with an equirectangular approximation. The row is
//! `floor(latitude * M / cell)` with `M = 111_320` meters per degree; the
//! column is `floor(longitude * M * cos(band_latitude) / cell)`, where
//! `band_latitude` is the middle of the one-degree latitude band holding the
//! row's centre (or the row's centre itself for cells wider than a degree).
//! Every cell is therefore a lat/lon rectangle, so points sharing a cell are
//! never much more than one cell diagonal apart, even near the antimeridian,
//! and column edges only shift between rows at band boundaries. Whole regions
//! are then assigned to one fold.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;
use core::cmp::Ordering;
use core::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::ingest::{valid_coordinate, UnifiedDataset};

/// Meters per degree of latitude used by the projection.
pub const METERS_PER_DEGREE: f64 = 111_320.0;

/// Positive, finite cell edge length in meters.
#[derive(Debug, Clone, Copy)]
pub struct CellSize(f64);

impl CellSize {
    pub fn new(meters: f64) -> Result<Self> {
        if meters.is_finite() && meters > 0.0 {
            Ok(Self(meters))
        } else {
            Err(Error::InvalidCellSize(meters))
        }
    }

    pub fn meters(self) -> f64 {
        self.0
    }
}

impl PartialEq for CellSize {
    fn eq(&self, other: &Self) -> bool {
        self.0.to_bits() == other.0.to_bits()
    }
}

impl Eq for CellSize {}

impl PartialOrd for CellSize {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for CellSize {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0)
    }
}

impl core::hash::Hash for CellSize {
    fn hash<H: core::hash::Hasher>(&self, state: &mut H) {
        self.0.to_bits().hash(state);
    }
}

/// A grid cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct RegionId {
    pub cell_x: i64,
    pub cell_y: i64,
    pub cell_size: CellSize,
}

impl fmt::Display for RegionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "({}, {})@{}m",
            self.cell_x, self.cell_y, self.cell_size.0
        )
    }
}

/// Grid cell containing a point.
pub fn region_id(latitude: f64, longitude: f64, cell_size_m: f64) -> Result<RegionId> {
    let cell_size = CellSize::new(cell_size_m)?;
    region_of(latitude, longitude, cell_size)
}

pub fn region_of(latitude: f64, longitude: f64, cell_size: CellSize) -> Result<RegionId> {
    if !valid_coordinate(latitude, longitude) {
        return Err(Error::InvalidCoordinate {
            latitude,
            longitude,
        });
    }
    let cell_y = libm::floor(latitude * METERS_PER_DEGREE / cell_size.0);
    let row_latitude = (cell_y + 0.5) * cell_size.0 / METERS_PER_DEGREE;
    let band_latitude = if cell_size.0 < METERS_PER_DEGREE {
        libm::floor(row_latitude) + 0.5
    } else {
        row_latitude
    };
    let easting =
        longitude * METERS_PER_DEGREE * libm::cos(band_latitude.clamp(-90.0, 90.0).to_radians());
    Ok(RegionId {
        cell_x: libm::floor(easting / cell_size.0) as i64,
        cell_y: cell_y as i64,
        cell_size,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitConfig {
    pub train_fraction: f64,
    pub cell_size_m: f64,
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            train_fraction: 0.9,
            cell_size_m: 10.0,
            seed: 0,
        }
    }
}

impl SplitConfig {
    pub fn validate(&self) -> Result<CellSize> {
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::InvalidTrainFraction(self.train_fraction));
        }
        CellSize::new(self.cell_size_m)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Fold {
    Train,
    Eval,
}

impl Fold {
    pub fn as_str(self) -> &'static str {
        match self {
            Fold::Train => "train",
            Fold::Eval => "eval",
        }
    }

    pub fn parse(s: &str) -> Option<Fold> {
        match s {
            "train" => Some(Fold::Train),
            "eval" => Some(Fold::Eval),
            _ => None,
        }
    }
}

/// Region of every deployment, aligned with `dataset.deployments()`.
pub fn deployment_regions(dataset: &UnifiedDataset, cell_size: CellSize) -> Result<Vec<RegionId>> {
    dataset
        .deployments()
        .iter()
        .map(|d| region_of(d.latitude, d.longitude, cell_size))
        .collect()
}

/// Region of every image, aligned with `dataset.images()`.
pub fn image_regions(dataset: &UnifiedDataset, cell_size: CellSize) -> Result<Vec<RegionId>> {
    let per_deployment = deployment_regions(dataset, cell_size)?;
    Ok(dataset
        .image_deployment_indices()
        .into_iter()
        .map(|d| per_deployment[d])
        .collect())
}

/// Image count of every populated region, ordered by region id.
pub fn region_image_counts(
    dataset: &UnifiedDataset,
    cell_size: CellSize,
) -> Result<Vec<(RegionId, usize)>> {
    let per_deployment = deployment_regions(dataset, cell_size)?;
    let mut counts: BTreeMap<RegionId, usize> = BTreeMap::new();
    for d in dataset.image_deployment_indices() {
        *counts.entry(per_deployment[d]).or_default() += 1;
    }
    Ok(counts.into_iter().collect())
}

/// Walks regions in the given order, sending each to train while the train
/// image fraction stays at or below `train_fraction`; from the first region
/// that would overshoot onward everything goes to eval. The first region
/// always goes to train so that train is never empty.
pub fn greedy_assign(ordered: &[(RegionId, usize)], train_fraction: f64) -> Vec<Fold> {
    let total: usize = ordered.iter().map(|(_, n)| n).sum();
    let mut train = 0usize;
    let mut open = true;
    ordered
        .iter()
        .enumerate()
        .map(|(i, &(_, n))| {
            if open && (i == 0 || (train + n) as f64 / total as f64 <= train_fraction) {
                train += n;
                Fold::Train
            } else {
                open = false;
                Fold::Eval
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RegionFold {
    pub fold: Fold,
    pub image_count: usize,
}

/// Region-to-fold mapping with realized image counts.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitAssignment {
    regions: BTreeMap<RegionId, RegionFold>,
    train_images: usize,
    eval_images: usize,
    config: SplitConfig,
}

impl SplitAssignment {
    /// Assembles an assignment from explicit region folds, e.g. one read
    /// back from disk.
    pub fn from_regions(regions: BTreeMap<RegionId, RegionFold>, config: SplitConfig) -> Self {
        let (mut train_images, mut eval_images) = (0, 0);
        for rf in regions.values() {
            match rf.fold {
                Fold::Train => train_images += rf.image_count,
                Fold::Eval => eval_images += rf.image_count,
            }
        }
        Self {
            regions,
            train_images,
            eval_images,
            config,
        }
    }

    pub fn regions(&self) -> &BTreeMap<RegionId, RegionFold> {
        &self.regions
    }

    pub fn fold_of(&self, region: &RegionId) -> Option<Fold> {
        self.regions.get(region).map(|r| r.fold)
    }

    pub fn config(&self) -> &SplitConfig {
        &self.config
    }

    pub fn train_images(&self) -> usize {
        self.train_images
    }

    pub fn eval_images(&self) -> usize {
        self.eval_images
    }

    pub fn realized_train_fraction(&self) -> f64 {
        self.train_images as f64 / (self.train_images + self.eval_images) as f64
    }

    pub fn region_count(&self, fold: Fold) -> usize {
        self.regions.values().filter(|r| r.fold == fold).count()
    }

    /// Fold membership of every image implied by its region.
    pub fn image_folds(&self, dataset: &UnifiedDataset) -> Result<ImageFolds> {
        let cell = CellSize::new(self.config.cell_size_m)?;
        let per_deployment = deployment_regions(dataset, cell)?;
        let folds = dataset
            .image_deployment_indices()
            .into_iter()
            .map(|d| Membership::of(self.fold_of(&per_deployment[d])))
            .collect();
        Ok(ImageFolds { folds })
    }
}

/// Splits a dataset by whole regions.
///
/// Populated regions are sorted by id, shuffled with a ChaCha8 generator
/// seeded from `config.seed`, and handed to [`greedy_assign`].
pub fn assign_regions(dataset: &UnifiedDataset, config: &SplitConfig) -> Result<SplitAssignment> {
    let cell = config.validate()?;
    let mut regions = region_image_counts(dataset, cell)?;
    if regions.len() < 2 {
        return Err(Error::TooFewRegions(regions.len()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    regions.shuffle(&mut rng);
    let folds = greedy_assign(&regions, config.train_fraction);
    let map = regions
        .into_iter()
        .zip(folds)
        .map(|((region, image_count), fold)| (region, RegionFold { fold, image_count }))
        .collect();
    Ok(SplitAssignment::from_regions(map, *config))
}

/// Which folds an image was placed in.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Membership {
    pub train: bool,
    pub eval: bool,
}

impl Membership {
    pub fn of(fold: Option<Fold>) -> Self {
        Self {
            train: fold == Some(Fold::Train),
            eval: fold == Some(Fold::Eval),
        }
    }
}

/// Per-image fold membership aligned with `dataset.images()`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageFolds {
    folds: Vec<Membership>,
}

impl ImageFolds {
    /// Membership from train/eval manifests. Ids not in the dataset are
    /// returned separately.
    pub fn from_manifests<'a, T, E>(
        dataset: &UnifiedDataset,
        train: T,
        eval: E,
    ) -> (Self, Vec<String>)
    where
        T: IntoIterator<Item = &'a str>,
        E: IntoIterator<Item = &'a str>,
    {
        let mut folds = alloc::vec![Membership::default(); dataset.len()];
        let mut unknown = Vec::new();
        for (ids, fold) in [
            (train.into_iter().collect::<Vec<_>>(), Fold::Train),
            (eval.into_iter().collect::<Vec<_>>(), Fold::Eval),
        ] {
            for id in ids {
                match dataset.image_index(id) {
                    Some(i) => match fold {
                        Fold::Train => folds[i].train = true,
                        Fold::Eval => folds[i].eval = true,
                    },
                    None => unknown.push(String::from(id)),
                }
            }
        }
        (Self { folds }, unknown)
    }

    pub fn from_memberships(folds: Vec<Membership>) -> Self {
        Self { folds }
    }

    pub fn as_slice(&self) -> &[Membership] {
        &self.folds
    }

    pub fn as_mut_slice(&mut self) -> &mut [Membership] {
        &mut self.folds
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum ViolationKind {
    /// Region with images in both folds.
    Split,
    /// Region with images in neither fold.
    Unassigned,
}

impl ViolationKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ViolationKind::Split => "split",
            ViolationKind::Unassigned => "unassigned",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LeakageViolation {
    pub region: RegionId,
    pub kind: ViolationKind,
    pub train_images: usize,
    pub eval_images: usize,
    pub unassigned_images: usize,
}

/// Violations of region exclusivity for an assignment.
pub fn leakage_check(
    dataset: &UnifiedDataset,
    assignment: &SplitAssignment,
) -> Result<Vec<LeakageViolation>> {
    let folds = assignment.image_folds(dataset)?;
    leakage_check_folds(
        dataset,
        &folds,
        CellSize::new(assignment.config.cell_size_m)?,
    )
}

/// Violations of region exclusivity for arbitrary per-image membership.
/// One violation per offending region, ordered by region id; regions with
/// unassigned images report [`ViolationKind::Unassigned`].
pub fn leakage_check_folds(
    dataset: &UnifiedDataset,
    folds: &ImageFolds,
    cell_size: CellSize,
) -> Result<Vec<LeakageViolation>> {
    let regions = image_regions(dataset, cell_size)?;
    let mut tally: BTreeMap<RegionId, [usize; 3]> = BTreeMap::new();
    for (region, m) in regions.iter().zip(&folds.folds) {
        let t = tally.entry(*region).or_default();
        t[0] += m.train as usize;
        t[1] += m.eval as usize;
        t[2] += (!m.train && !m.eval) as usize;
    }
    Ok(tally
        .into_iter()
        .filter_map(|(region, [train, eval, none])| {
            let kind = if none > 0 {
                ViolationKind::Unassigned
            } else if train > 0 && eval > 0 {
                ViolationKind::Split
            } else {
                return None;
            };
            Some(LeakageViolation {
                region,
                kind,
                train_images: train,
                eval_images: eval,
                unassigned_images: none,
            })
        })
        .collect())
}

/// Image-id manifests, each sorted by id.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Manifests {
    pub train: Vec<String>,
    pub eval: Vec<String>,
}

/// Train and eval manifests for an assignment; refuses leaking splits.
pub fn export_split(dataset: &UnifiedDataset, assignment: &SplitAssignment) -> Result<Manifests> {
    let folds = assignment.image_folds(dataset)?;
    let violations = leakage_check_folds(
        dataset,
        &folds,
        CellSize::new(assignment.config.cell_size_m)?,
    )?;
    if !violations.is_empty() {
        return Err(Error::Leakage(violations.len()));
    }
    let mut out = Manifests::default();
    for (img, m) in dataset.images().iter().zip(folds.as_slice()) {
        if m.train {
            out.train.push(img.image_id.clone());
        } else {
            out.eval.push(img.image_id.clone());
        }
    }
    Ok(out)
}
