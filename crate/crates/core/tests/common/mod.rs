#![allow(dead_code)]

use camtrap_core::taxonomy::RawTaxon;
use camtrap_core::{SpecialKind, TaxonomyTable};

/// Ten species over four genera, three families, two orders, one class.
pub const TEN_SPECIES: [(&str, [&str; 5]); 10] = [
    (
        "sp_panthera_onca",
        [
            "Mammalia",
            "Carnivora",
            "Felidae",
            "Panthera",
            "Panthera onca",
        ],
    ),
    (
        "sp_panthera_leo",
        [
            "Mammalia",
            "Carnivora",
            "Felidae",
            "Panthera",
            "Panthera leo",
        ],
    ),
    (
        "sp_panthera_pardus",
        [
            "Mammalia",
            "Carnivora",
            "Felidae",
            "Panthera",
            "Panthera pardus",
        ],
    ),
    (
        "sp_panthera_tigris",
        [
            "Mammalia",
            "Carnivora",
            "Felidae",
            "Panthera",
            "Panthera tigris",
        ],
    ),
    (
        "sp_leopardus_pardalis",
        [
            "Mammalia",
            "Carnivora",
            "Felidae",
            "Leopardus",
            "Leopardus pardalis",
        ],
    ),
    (
        "sp_leopardus_wiedii",
        [
            "Mammalia",
            "Carnivora",
            "Felidae",
            "Leopardus",
            "Leopardus wiedii",
        ],
    ),
    (
        "sp_canis_lupus",
        ["Mammalia", "Carnivora", "Canidae", "Canis", "Canis lupus"],
    ),
    (
        "sp_canis_latrans",
        ["Mammalia", "Carnivora", "Canidae", "Canis", "Canis latrans"],
    ),
    (
        "sp_odocoileus_virginianus",
        [
            "Mammalia",
            "Artiodactyla",
            "Cervidae",
            "Odocoileus",
            "Odocoileus virginianus",
        ],
    ),
    (
        "sp_odocoileus_hemionus",
        [
            "Mammalia",
            "Artiodactyla",
            "Cervidae",
            "Odocoileus",
            "Odocoileus hemionus",
        ],
    ),
];

pub fn raw(id: &str, names: &[&str]) -> RawTaxon {
    let mut r = RawTaxon {
        label_id: id.into(),
        ..Default::default()
    };
    for (slot, n) in r.names.iter_mut().zip(names) {
        *slot = Some((*n).into());
    }
    r
}

pub fn special(id: &str, kind: SpecialKind) -> RawTaxon {
    RawTaxon {
        label_id: id.into(),
        special: Some(kind),
        ..Default::default()
    }
}

pub fn ten_species_table() -> TaxonomyTable {
    let mut rows: Vec<RawTaxon> = TEN_SPECIES.iter().map(|(id, n)| raw(id, n)).collect();
    rows.push(special("blank", SpecialKind::Blank));
    rows.push(special("unknown", SpecialKind::Unknown));
    let (t, rep) = TaxonomyTable::build(rows);
    assert!(rep.is_empty(), "{rep:?}");
    t
}

use camtrap_core::ingest::unify;
use camtrap_core::{Deployment, ImageRecord, Source, Timestamp, UnifiedDataset};

/// Dataset with `counts[i]` images at deployment `i`, labels cycling over
/// `labels`, timestamps one second apart per deployment.
pub fn dataset_at(points: &[(f64, f64)], counts: &[usize], labels: &[&str]) -> UnifiedDataset {
    let deployments: Vec<Deployment> = points
        .iter()
        .enumerate()
        .map(|(i, &(lat, lon))| Deployment::new(format!("d{i:04}"), "p", lat, lon))
        .collect();
    let mut images = Vec::new();
    let mut n = 0usize;
    for (d, &count) in counts.iter().enumerate() {
        for j in 0..count {
            images.push(ImageRecord {
                image_id: format!("img{n:07}"),
                deployment_id: format!("d{d:04}"),
                timestamp: Timestamp::from_unix(1_500_000_000 + j as i64, 0).unwrap(),
                label_id: labels[n % labels.len()].into(),
                burst_index: None,
                source_id: "synthetic".into(),
            });
            n += 1;
        }
    }
    let (ds, rep) = unify(
        vec![Source::new("synthetic", deployments, images)],
        ten_species_table(),
    );
    assert!(rep.is_empty(), "{rep:?}");
    ds
}
