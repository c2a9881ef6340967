//! Acceptance suite. Prints one PASS/FAIL line per criterion and fails if
//! any criterion fails. Run with `cargo test -p camtrap --test acceptance
//! -- --nocapture` to see the report.

mod common;

use std::collections::BTreeMap;
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

use camtrap::read::read_taxonomy;
use camtrap::synth;
use camtrap_core::eval::{
    blank_metrics, per_class_metrics, topk_accuracy, PredictionRecord, PredictionSet,
};
use camtrap_core::geosplit::{assign_regions, leakage_check, region_id, Fold, SplitConfig};
use camtrap_core::ingest::unify;
use camtrap_core::stats::{blank_rate, class_distribution, skew_report};
use camtrap_core::taxonomy::RawTaxon;
use camtrap_core::{
    Deployment, ImageRecord, Level, RolledLabel, Source, SpecialKind, TaxonomyTable, Timestamp,
    UnifiedDataset,
};
use common::{fixtures, pipeline, s, tree};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn fixture_table() -> TaxonomyTable {
    let (t, rep) = read_taxonomy(&fixtures().join("taxonomy.csv")).unwrap();
    assert!(rep.is_empty());
    t
}

fn species_ids(t: &TaxonomyTable) -> Vec<String> {
    t.records()
        .filter(|r| r.special_kind().is_none())
        .map(|r| r.label_id().to_string())
        .collect()
}

/// One deployment per region on a 0.05 degree lattice, image counts and
/// labels drawn from Zipf weights.
fn region_dataset(rng: &mut ChaCha8Rng, table: &TaxonomyTable, n_regions: usize) -> UnifiedDataset {
    let species = species_ids(table);
    let label_weights = synth::zipf_weights(species.len(), 1.2);
    let size_weights = synth::zipf_weights(n_regions, rng.gen_range(0.0..1.5));
    let mut deployments = Vec::new();
    let mut images = Vec::new();
    let (lat0, lon0) = (rng.gen_range(-55.0..55.0), rng.gen_range(-170.0..150.0));
    for (r, weight) in size_weights.iter().enumerate() {
        let id = format!("d{r:04}");
        let (row, col) = ((r / 25) as f64, (r % 25) as f64);
        deployments.push(Deployment::new(
            id.clone(),
            "p",
            lat0 + 0.05 * row,
            lon0 + 0.05 * col,
        ));
        let n = 1 + (weight * 40.0 * rng.gen_range(0.5..1.5)) as usize;
        for j in 0..n {
            let label = if rng.gen_bool(0.3) {
                "blank".to_string()
            } else {
                let dist = rand::distributions::WeightedIndex::new(&label_weights).unwrap();
                species[rng.sample(dist)].clone()
            };
            images.push(ImageRecord {
                image_id: format!("i{r:04}_{j:04}"),
                deployment_id: id.clone(),
                timestamp: Timestamp::from_unix(1_600_000_000 + j as i64 * 90, 0).unwrap(),
                label_id: label,
                burst_index: None,
                source_id: "acc".into(),
            });
        }
    }
    let (ds, rep) = unify(vec![Source::new("acc", deployments, images)], table.clone());
    assert!(rep.is_clean());
    ds
}

fn leakage_suite() -> Outcome {
    let start = Instant::now();
    let table = fixture_table();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut failures = Vec::new();
    let mut worst_slack = f64::INFINITY;
    for case in 0..100 {
        let n_regions = rng.gen_range(10..=500);
        let ds = region_dataset(&mut rng, &table, n_regions);
        let config = SplitConfig {
            train_fraction: 0.9,
            cell_size_m: 10.0,
            seed: rng.gen(),
        };
        let a = assign_regions(&ds, &config).unwrap();
        let violations = leakage_check(&ds, &a).unwrap();
        let largest =
            a.regions().values().map(|r| r.image_count).max().unwrap() as f64 / ds.len() as f64;
        let gap = (a.realized_train_fraction() - 0.9).abs();
        worst_slack = worst_slack.min(largest - gap);
        if a.regions().len() != n_regions
            || !violations.is_empty()
            || a.region_count(Fold::Train) == 0
            || a.region_count(Fold::Eval) == 0
            || gap > largest
        {
            failures.push(case);
        }
    }
    let elapsed = start.elapsed();
    outcome(
        failures.is_empty() && elapsed < Duration::from_secs(10),
        format!(
            "100 datasets, failing cases {failures:?}, min(largest_fraction - |realized - 0.9|) = {worst_slack:.4}, {:.2}s (limit 10s)",
            elapsed.as_secs_f64()
        ),
    )
}

fn raw(id: &str, names: &[String]) -> RawTaxon {
    let mut r = RawTaxon {
        label_id: id.into(),
        ..Default::default()
    };
    for (slot, n) in r.names.iter_mut().zip(names) {
        *slot = Some(n.clone());
    }
    r
}

/// Tree-consistent by construction: every name encodes its whole path.
fn random_taxonomy(rng: &mut ChaCha8Rng, n_labels: usize) -> TaxonomyTable {
    let mut rows: Vec<RawTaxon> = (0..n_labels)
        .map(|i| {
            let depth = if rng.gen_bool(0.8) {
                5
            } else {
                rng.gen_range(1..=5)
            };
            let mut path = String::new();
            let names: Vec<String> = (0..depth)
                .map(|level| {
                    path.push_str(&rng.gen_range(0..[2, 3, 3, 3, 4][level]).to_string());
                    format!("N{level}_{path}")
                })
                .collect();
            raw(&format!("lbl{i}"), &names)
        })
        .collect();
    for kind in [SpecialKind::Blank, SpecialKind::Unknown] {
        rows.push(RawTaxon {
            label_id: kind.as_str().into(),
            special: Some(kind),
            ..Default::default()
        });
    }
    let (t, rep) = TaxonomyTable::build(rows);
    assert!(rep.is_empty(), "{rep:?}");
    t
}

struct Instance {
    table: TaxonomyTable,
    truths: Vec<ImageRecord>,
    preds: PredictionSet,
}

fn random_instance(rng: &mut ChaCha8Rng) -> Instance {
    let n_labels = rng.gen_range(1..=48);
    let table = random_taxonomy(rng, n_labels);
    let labels: Vec<String> = table.records().map(|r| r.label_id().to_string()).collect();
    let n = rng.gen_range(1..=1000);
    let mut truths = Vec::with_capacity(n);
    let mut preds = Vec::new();
    for i in 0..n {
        let id = format!("img{i:04}");
        truths.push(ImageRecord {
            image_id: id.clone(),
            deployment_id: "d".into(),
            timestamp: Timestamp::from_unix(0, 0).unwrap(),
            label_id: labels.choose(rng).unwrap().clone(),
            burst_index: None,
            source_id: "s".into(),
        });
        if rng.gen_bool(0.9) {
            let mut ranked = labels.clone();
            ranked.shuffle(rng);
            ranked.truncate(rng.gen_range(1..=labels.len().min(6)));
            let entries = ranked
                .into_iter()
                .map(|l| (l, rng.gen_range(0.0..1.0)))
                .collect();
            preds.push(PredictionRecord::new(id, entries).unwrap().0);
        }
    }
    Instance {
        table,
        truths,
        preds: PredictionSet::new(preds).0,
    }
}

/// Hits at k = 1..=3 and per-label (tp, fp, fn) from the definitions.
fn brute_force(inst: &Instance, level: Level) -> ([u64; 3], BTreeMap<String, [u64; 3]>) {
    let roll = |id: &str| -> RolledLabel<'_> { inst.table.rollup(id, level).unwrap() };
    let mut hits = [0u64; 3];
    let mut counts: BTreeMap<String, [u64; 3]> = BTreeMap::new();
    for img in &inst.truths {
        let want = roll(&img.label_id);
        let mut ranked: Vec<RolledLabel> = Vec::new();
        for (l, _) in inst
            .preds
            .get(&img.image_id)
            .map_or(&[][..], |p| p.entries())
        {
            let r = roll(l);
            if !ranked.contains(&r) {
                ranked.push(r);
            }
        }
        for (k, h) in hits.iter_mut().enumerate() {
            *h += u64::from(ranked.iter().take(k + 1).any(|r| *r == want));
        }
        match ranked.first() {
            Some(top) if *top == want => counts.entry(want.name().into()).or_default()[0] += 1,
            Some(top) => {
                counts.entry(top.name().into()).or_default()[1] += 1;
                counts.entry(want.name().into()).or_default()[2] += 1;
            }
            None => counts.entry(want.name().into()).or_default()[2] += 1,
        }
    }
    (hits, counts)
}

fn ratio(a: u64, b: u64) -> Option<f64> {
    (b > 0).then(|| a as f64 / b as f64)
}

fn metric_oracle_and_monotonicity() -> (Outcome, Outcome) {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut mismatches = Vec::new();
    let mut non_monotone = Vec::new();
    for case in 0..200 {
        let inst = random_instance(&mut rng);
        let n = inst.truths.len() as u64;
        let mut coarser: Option<Vec<f64>> = None;
        for level in Level::ALL {
            let (hits, counts) = brute_force(&inst, level);
            let mut ok = true;
            let mut accs = Vec::new();
            for k in 1..=3 {
                let got = topk_accuracy(&inst.preds, &inst.truths, k, level, &inst.table).unwrap();
                ok &= got.hits == hits[k - 1] && got.accuracy == hits[k - 1] as f64 / n as f64;
                accs.push(got.accuracy);
            }
            let pc = per_class_metrics(&inst.preds, &inst.truths, level, &inst.table).unwrap();
            ok &= pc.len() == counts.len();
            for c in &pc {
                let [tp, fp, fn_] = counts.get(&c.label).copied().unwrap_or([u64::MAX; 3]);
                ok &= [c.true_positives, c.false_positives, c.false_negatives] == [tp, fp, fn_]
                    && c.support == tp + fn_
                    && c.precision == ratio(tp, tp + fp)
                    && c.recall == ratio(tp, tp + fn_);
            }
            if !ok {
                mismatches.push((case, level));
            }
            if !(accs[0] <= accs[1] && accs[1] <= accs[2]) {
                non_monotone.push((case, level));
            }
            // Level::ALL runs coarse to fine, so accuracy may only drop.
            if let Some(c) = &coarser {
                if accs.iter().zip(c).any(|(fine, coarse)| fine > coarse) {
                    non_monotone.push((case, level));
                }
            }
            coarser = Some(accs);
        }
        let (_, counts) = brute_force(&inst, Level::Species);
        let [tp, fp, fn_] = counts.get("blank").copied().unwrap_or_default();
        let b = blank_metrics(&inst.preds, &inst.truths, &inst.table).unwrap();
        if b.precision != ratio(tp, tp + fp)
            || b.recall != ratio(tp, tp + fn_)
            || b.support != tp + fn_
        {
            mismatches.push((case, Level::Species));
        }
    }
    let elapsed = start.elapsed();
    (
        outcome(
            mismatches.is_empty() && elapsed < Duration::from_secs(30),
            format!(
                "200 instances x 5 levels, exact mismatches {mismatches:?}, {:.2}s (limit 30s)",
                elapsed.as_secs_f64()
            ),
        ),
        outcome(
            non_monotone.is_empty(),
            format!("acc@1<=acc@2<=acc@3 and species<=...<=class on 200 instances, violations {non_monotone:?}"),
        ),
    )
}

fn taxonomy_suite() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut failures = 0;
    for _ in 0..100 {
        let n_labels = rng.gen_range(1..60);
        let t = random_taxonomy(&mut rng, n_labels);
        for rec in t.records() {
            for fine in Level::ALL {
                let r = t.rollup(rec.label_id(), fine).unwrap();
                if r.rollup(fine) != r {
                    failures += 1;
                }
                for coarse in Level::ALL.into_iter().filter(|l| *l <= fine) {
                    if r.rollup(coarse) != t.rollup(rec.label_id(), coarse).unwrap() {
                        failures += 1;
                    }
                }
            }
        }
    }
    let got = fixture_table().distinct_counts(false).get(None).unwrap();
    let want = [
        (Level::Order, 2),
        (Level::Family, 3),
        (Level::Genus, 4),
        (Level::Species, 10),
    ];
    let fixture_ok = want.iter().all(|(l, n)| got.get(*l) == *n);
    outcome(
        failures == 0 && fixture_ok,
        format!(
            "100 random taxonomies, {failures} rollup law failures; fixture counts order {} family {} genus {} species {} (want 2/3/4/10)",
            got.get(Level::Order),
            got.get(Level::Family),
            got.get(Level::Genus),
            got.get(Level::Species)
        ),
    )
}

const EARTH_RADIUS_M: f64 = 6_371_008.8;

fn haversine(a: (f64, f64), b: (f64, f64)) -> f64 {
    let (p1, p2) = (a.0.to_radians(), b.0.to_radians());
    let (dp, dl) = (p2 - p1, (b.1 - a.1).to_radians());
    let h = (dp / 2.0).sin().powi(2) + p1.cos() * p2.cos() * (dl / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_M * h.sqrt().asin()
}

fn destination(from: (f64, f64), bearing: f64, distance: f64) -> (f64, f64) {
    let (p1, l1) = (from.0.to_radians(), from.1.to_radians());
    let d = distance / EARTH_RADIUS_M;
    let p2 = (p1.sin() * d.cos() + p1.cos() * d.sin() * bearing.cos()).asin();
    let l2 = l1 + (bearing.sin() * d.sin() * p1.cos()).atan2(d.cos() - p1.sin() * p2.sin());
    let lon = (l2.to_degrees() + 540.0).rem_euclid(360.0) - 180.0;
    (p2.to_degrees(), lon)
}

fn binning_vs_geodesic() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (mut shared, mut shared_too_far, mut far_shared, mut worst) = (0, 0, 0, 0.0f64);
    for _ in 0..10_000 {
        let a = (rng.gen_range(-60.0..=60.0), rng.gen_range(-180.0..180.0));
        // Cubing skews distances short so many pairs land in one cell.
        let b = destination(
            a,
            rng.gen_range(0.0..std::f64::consts::TAU),
            1000.0 * rng.gen::<f64>().powi(3),
        );
        if b.0.abs() > 60.0 {
            continue;
        }
        let d = haversine(a, b);
        let same = region_id(a.0, a.1, 10.0).unwrap() == region_id(b.0, b.1, 10.0).unwrap();
        if same {
            shared += 1;
            worst = worst.max(d);
            shared_too_far += usize::from(d > 15.0);
        }
        far_shared += usize::from(same && d > 30.0);
    }
    outcome(
        shared_too_far == 0 && far_shared == 0 && shared > 0,
        format!(
            "10^4 pairs, {shared} share a cell, worst shared distance {worst:.2} m (limit 15), {far_shared} pairs > 30 m share a cell"
        ),
    )
}

fn determinism() -> Outcome {
    let runs: Vec<_> = [4, 4, 1, 8]
        .into_iter()
        .map(|jobs| {
            let dir = tempfile::tempdir().unwrap();
            pipeline(dir.path(), jobs);
            tree(dir.path())
        })
        .collect();
    let files = runs[0].len();
    let identical = runs.iter().all(|r| *r == runs[0]);
    outcome(
        identical && files > 0,
        format!("{files} output files, identical across two runs and --jobs 1/4/8: {identical}"),
    )
}

/// Runs the binary and returns its wall time and peak resident set size in
/// bytes, read from the kernel's accounting of that one child.
// The child is reaped by wait4 below, which also yields its rusage.
#[allow(clippy::zombie_processes)]
fn measured(args: &[&str]) -> (Duration, u64) {
    let start = Instant::now();
    let child = Command::new(env!("CARGO_BIN_EXE_camtrap"))
        .args(args)
        .stdout(Stdio::null())
        .spawn()
        .unwrap();
    let mut status = 0;
    let mut usage: libc::rusage = unsafe { std::mem::zeroed() };
    let pid = unsafe { libc::wait4(child.id() as libc::pid_t, &mut status, 0, &mut usage) };
    let elapsed = start.elapsed();
    assert!(
        pid > 0 && libc::WIFEXITED(status) && libc::WEXITSTATUS(status) == 0,
        "{args:?} failed"
    );
    (elapsed, usage.ru_maxrss as u64 * 1024)
}

fn desk_scale() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let p = |n: &str| s(&tmp.path().join(n));
    let (gen, _) = measured(&[
        "synth",
        "--out",
        &p("raw"),
        "--images",
        "1000000",
        "--deployments",
        "2000",
        "--seed",
        "3",
    ]);
    let steps: [(&str, Vec<String>); 3] = [
        (
            "ingest",
            vec![
                "ingest".into(),
                "--dataset".into(),
                p("raw"),
                "--out".into(),
                p("ds"),
            ],
        ),
        (
            "split",
            vec![
                "split".into(),
                "--dataset".into(),
                p("ds"),
                "--out".into(),
                p("split"),
            ],
        ),
        (
            "eval",
            vec![
                "eval".into(),
                "--dataset".into(),
                p("ds"),
                "--predictions".into(),
                p("raw/predictions.txt"),
                "--split".into(),
                p("split"),
                "--out".into(),
                p("eval"),
            ],
        ),
    ];
    let mut total = Duration::ZERO;
    let mut peak = 0;
    let mut parts = Vec::new();
    for (name, args) in &steps {
        let args: Vec<&str> = args.iter().map(String::as_str).collect();
        let (t, rss) = measured(&args);
        total += t;
        peak = peak.max(rss);
        parts.push(format!(
            "{name} {:.2}s/{:.0} MB",
            t.as_secs_f64(),
            rss as f64 / 1e6
        ));
    }
    let images = std::fs::read_to_string(tmp.path().join("ds/images.csv"))
        .unwrap()
        .lines()
        .count()
        - 1;
    outcome(
        images == 1_000_000 && total < Duration::from_secs(60) && peak < 2_000_000_000,
        format!(
            "{images} images; {} ; total {:.2}s (limit 60s), peak {:.0} MB (limit 2000 MB); generation {:.2}s not counted",
            parts.join(", "),
            total.as_secs_f64(),
            peak as f64 / 1e6,
            gen.as_secs_f64()
        ),
    )
}

fn skew_recovery() -> Outcome {
    let (table, rep) = TaxonomyTable::build(synth::taxonomy(271, 194));
    assert!(rep.is_empty());
    let species = species_ids(&table);
    let exponent = synth::tune_zipf_exponent(species.len(), 20, 0.70);
    let config = synth::CorpusConfig {
        n_images: 300_000,
        n_deployments: 500,
        blank_rate: 0.30,
        zipf_exponent: exponent,
        seed: 8,
        ..Default::default()
    };
    let corpus = synth::corpus(&config, &species, table.blank_id());
    let (ds, rep) = unify(
        vec![Source::new("synthetic", corpus.deployments, corpus.images)],
        table,
    );
    assert!(rep.is_clean());
    let specials = ["blank", "unknown"];
    let skew = skew_report(
        &class_distribution(&ds, Level::Species).without(specials),
        20,
    )
    .unwrap();
    let blank = blank_rate(&ds).unwrap();
    outcome(
        (skew.coverage_fraction - 0.70).abs() <= 0.02 && (blank - 0.30).abs() <= 0.005,
        format!(
            "{} species, exponent {exponent:.4}, top-20 coverage {:.4} (target 0.70 +/- 0.02), blank rate {blank:.4} (target 0.30 +/- 0.005)",
            species.len(),
            skew.coverage_fraction
        ),
    )
}

#[test]
fn acceptance() {
    let (oracle, monotone) = metric_oracle_and_monotonicity();
    let results = [
        ("1 leakage suite", leakage_suite()),
        ("2 metric oracle equivalence", oracle),
        ("3 top-k and rollup monotonicity", monotone),
        ("4 taxonomy suite", taxonomy_suite()),
        ("5 region binning vs geodesic", binning_vs_geodesic()),
        ("6 end-to-end determinism", determinism()),
        ("7 desk-scale performance", desk_scale()),
        ("8 skew and blank-rate recovery", skew_recovery()),
    ];
    println!();
    for (name, o) in &results {
        println!(
            "{} criterion {name}: {}",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail
        );
    }
    let failed: Vec<&str> = results
        .iter()
        .filter(|(_, o)| !o.pass)
        .map(|(n, _)| *n)
        .collect();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
