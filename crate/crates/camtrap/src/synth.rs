//! Seeded synthetic corpora: a taxonomy, deployments scattered over a few
//! study areas, bursty image sequences with Zipf-distributed species, and
//! ranked predictions of controllable accuracy.

use camtrap_core::eval::PredictionRecord;
use camtrap_core::taxonomy::RawTaxon;
use camtrap_core::{Deployment, ImageRecord, SpecialKind, Timestamp};
use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Unnormalized Zipf weights `1 / rank^s` for ranks `1..=n`.
pub fn zipf_weights(n: usize, exponent: f64) -> Vec<f64> {
    (1..=n).map(|r| (r as f64).powf(-exponent)).collect()
}

/// Expected share of the `top` most frequent of `n` Zipf-distributed labels.
pub fn zipf_top_share(n: usize, exponent: f64, top: usize) -> f64 {
    let w = zipf_weights(n, exponent);
    w[..top.min(n)].iter().sum::<f64>() / w.iter().sum::<f64>()
}

/// Exponent at which the `top` of `n` labels hold `share` of the mass,
/// found by bisection (the share increases with the exponent).
pub fn tune_zipf_exponent(n: usize, top: usize, share: f64) -> f64 {
    let (mut lo, mut hi) = (0.0f64, 8.0f64);
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if zipf_top_share(n, mid, top) < share {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// A two-class taxonomy: `n_mammals` species under Mammalia and `n_birds`
/// under Aves, two species per genus, four genera per family and three
/// families per order, plus `blank` and `unknown`.
pub fn taxonomy(n_mammals: usize, n_birds: usize) -> Vec<RawTaxon> {
    let mut rows = Vec::with_capacity(n_mammals + n_birds + 2);
    for (class, tag, n) in [("Mammalia", 'm', n_mammals), ("Aves", 'b', n_birds)] {
        for i in 0..n {
            let genus = i / 2;
            let family = genus / 4;
            let order = family / 3;
            let genus_name = format!("{tag}genus{genus:03}");
            rows.push(RawTaxon {
                label_id: format!("sp_{tag}{i:04}"),
                names: [
                    Some(class.to_string()),
                    Some(format!("{tag}order{order:02}")),
                    Some(format!("{tag}family{family:03}")),
                    Some(genus_name.clone()),
                    Some(format!("{genus_name} sp{i:04}")),
                ],
                special: None,
            });
        }
    }
    for kind in [SpecialKind::Blank, SpecialKind::Unknown] {
        rows.push(RawTaxon {
            label_id: kind.as_str().to_string(),
            special: Some(kind),
            ..Default::default()
        });
    }
    rows
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusConfig {
    pub n_images: usize,
    pub n_deployments: usize,
    pub blank_rate: f64,
    pub zipf_exponent: f64,
    /// Images per trigger are drawn uniformly from `1..=max_burst`.
    pub max_burst: usize,
    pub seed: u64,
    pub source_id: String,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            n_images: 10_000,
            n_deployments: 100,
            blank_rate: 0.3,
            zipf_exponent: 1.0,
            max_burst: 3,
            seed: 0,
            source_id: "synthetic".to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub deployments: Vec<Deployment>,
    pub images: Vec<ImageRecord>,
    /// Species in popularity order; rank `r` has Zipf weight `1 / r^s`.
    pub species_by_rank: Vec<String>,
}

/// Generates a corpus over the given species and blank label. Each trigger
/// yields a burst of images one second apart that share one label, either
/// blank (with probability `blank_rate`) or a Zipf-drawn species.
pub fn corpus(config: &CorpusConfig, species: &[String], blank_label: &str) -> Corpus {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut species_by_rank = species.to_vec();
    species_by_rank.shuffle(&mut rng);
    let zipf = WeightedIndex::new(zipf_weights(species.len().max(1), config.zipf_exponent))
        .expect("positive Zipf weights");

    let n_areas = config.n_deployments.div_ceil(50).max(1);
    let areas: Vec<(f64, f64)> = (0..n_areas)
        .map(|_| (rng.gen_range(-50.0..50.0), rng.gen_range(-170.0..170.0)))
        .collect();
    let epoch = Timestamp::from_civil(2015, 1, 1, 0, 0, 0, 0)
        .expect("valid date")
        .unix_seconds();
    let mut deployments: Vec<Deployment> = (0..config.n_deployments.max(1))
        .map(|i| {
            let (lat, lon) = areas[i % n_areas];
            let mut d = Deployment::new(
                format!("dep{i:05}"),
                format!("proj{:02}", i % n_areas),
                lat + rng.gen_range(-0.2..0.2),
                lon + rng.gen_range(-0.2..0.2),
            );
            d.camera_model =
                Some(["Reconyx HC500", "Bushnell Trophy", "Browning BTC"][i % 3].to_string());
            d.start_time = Timestamp::from_unix(epoch, 0);
            d
        })
        .collect();
    let mut clocks: Vec<i64> = deployments
        .iter()
        .map(|_| epoch + rng.gen_range(0..86_400 * 30))
        .collect();

    let mut images = Vec::with_capacity(config.n_images);
    while images.len() < config.n_images {
        let d = rng.gen_range(0..deployments.len());
        clocks[d] += rng.gen_range(600..172_800);
        let label = if species.is_empty() || rng.gen_bool(config.blank_rate) {
            blank_label
        } else {
            species_by_rank[zipf.sample(&mut rng)].as_str()
        };
        let burst = rng.gen_range(1..=config.max_burst.max(1));
        for b in 0..burst.min(config.n_images - images.len()) {
            images.push(ImageRecord {
                image_id: format!("img{:08}", images.len()),
                deployment_id: deployments[d].deployment_id.clone(),
                timestamp: Timestamp::from_unix(clocks[d], 0).expect("in range"),
                label_id: label.to_string(),
                burst_index: Some(b as u32),
                source_id: config.source_id.clone(),
            });
            clocks[d] += 1;
        }
    }
    for (d, clock) in deployments.iter_mut().zip(&clocks) {
        d.end_time = Timestamp::from_unix(*clock, 0);
    }
    Corpus {
        deployments,
        images,
        species_by_rank,
    }
}

/// Ranked predictions with `entries` labels each. With probability
/// `accuracy` the true label is ranked first; otherwise it appears at a
/// later rank or not at all.
pub fn predictions(
    images: &[ImageRecord],
    labels: &[String],
    accuracy: f64,
    entries: usize,
    seed: u64,
) -> Vec<PredictionRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let entries = entries.clamp(1, labels.len().max(1));
    images
        .iter()
        .map(|img| {
            let mut ranked: Vec<&str> = Vec::with_capacity(entries);
            if rng.gen_bool(accuracy) {
                ranked.push(&img.label_id);
            }
            while ranked.len() < entries {
                let l = labels[rng.gen_range(0..labels.len())].as_str();
                let leads_with_truth = ranked.is_empty() && l == img.label_id && labels.len() > 1;
                if !ranked.contains(&l) && !leads_with_truth {
                    ranked.push(l);
                }
            }
            let mut score = rng.gen_range(0.3..1.0f64);
            let list = ranked
                .into_iter()
                .map(|l| {
                    let s = (score * 1e4).round() / 1e4;
                    score *= rng.gen_range(0.2..0.9);
                    (l.to_string(), s)
                })
                .collect();
            PredictionRecord::new(img.image_id.clone(), list)
                .expect("distinct labels and finite scores")
                .0
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tuned_exponent_hits_target() {
        let s = tune_zipf_exponent(465, 20, 0.7);
        assert!((zipf_top_share(465, s, 20) - 0.7).abs() < 1e-9);
    }

    #[test]
    fn corpus_is_seeded_and_sized() {
        let species: Vec<String> = (0..10).map(|i| format!("s{i}")).collect();
        let cfg = CorpusConfig {
            n_images: 500,
            n_deployments: 7,
            ..Default::default()
        };
        let a = corpus(&cfg, &species, "blank");
        assert_eq!(a.images.len(), 500);
        assert_eq!(a, corpus(&cfg, &species, "blank"));
        for d in &a.deployments {
            assert!(d.check(&d.deployment_id).is_empty());
        }
    }

    #[test]
    fn wrong_predictions_do_not_lead_with_the_truth() {
        let labels: Vec<String> = (0..5).map(|i| format!("s{i}")).collect();
        let species = labels.clone();
        let cfg = CorpusConfig {
            n_images: 200,
            blank_rate: 0.0,
            ..Default::default()
        };
        let c = corpus(&cfg, &species, "blank");
        let p = predictions(&c.images, &labels, 0.0, 3, 1);
        assert!(p
            .iter()
            .zip(&c.images)
            .all(|(p, i)| p.top().0 != i.label_id));
        let p = predictions(&c.images, &labels, 1.0, 3, 1);
        assert!(p
            .iter()
            .zip(&c.images)
            .all(|(p, i)| p.top().0 == i.label_id));
    }
}
