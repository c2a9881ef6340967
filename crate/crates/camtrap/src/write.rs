//! Writers for datasets, reports and split manifests.
//!
//! Every writer is a pure function of its input, so identical inputs give
//! byte-identical files. Reals use Rust's shortest round-trip formatting;
//! undefined ratios are written as `undefined`.

use std::io::{self, Write};

use camtrap_core::eval::MetricsReport;
use camtrap_core::geosplit::{RegionId, SplitAssignment};
use camtrap_core::stats::{ClassHistogram, ClassWeights, SequenceGroup, SkewReport};
use camtrap_core::taxonomy::DistinctCounts;
use camtrap_core::{Deployment, ImageRecord, Level, Severity, TaxonomyTable, ValidationReport};

use crate::read::{DEPLOYMENT_COLUMNS, IMAGE_COLUMNS, TAXONOMY_COLUMNS};
use crate::Result;

fn writer<W: Write>(out: W) -> csv::Writer<W> {
    csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out)
}

fn opt_str<T: ToString>(v: &Option<T>) -> String {
    v.as_ref().map(ToString::to_string).unwrap_or_default()
}

pub fn ratio(v: Option<f64>) -> String {
    v.map_or_else(|| "undefined".to_string(), |x| x.to_string())
}

pub fn write_deployments<W: Write>(out: W, deployments: &[Deployment]) -> Result<()> {
    let mut w = writer(out);
    w.write_record(DEPLOYMENT_COLUMNS)?;
    for d in deployments {
        w.write_record([
            d.deployment_id.clone(),
            d.project_id.clone(),
            d.latitude.to_string(),
            d.longitude.to_string(),
            opt_str(&d.camera_model),
            opt_str(&d.start_time),
            opt_str(&d.end_time),
            opt_str(&d.notes),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_images<W: Write>(out: W, images: &[ImageRecord]) -> Result<()> {
    let mut w = writer(out);
    w.write_record(IMAGE_COLUMNS)?;
    for i in images {
        w.write_record([
            i.image_id.as_str(),
            &i.deployment_id,
            &i.timestamp.to_string(),
            &i.label_id,
            &opt_str(&i.burst_index),
            &i.source_id,
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_taxonomy<W: Write>(out: W, table: &TaxonomyTable) -> Result<()> {
    let mut w = writer(out);
    w.write_record(TAXONOMY_COLUMNS)?;
    for r in table.records() {
        let mut row = vec![r.label_id().to_string()];
        row.extend(
            Level::ALL
                .iter()
                .map(|l| r.name_at(*l).unwrap_or("").to_string()),
        );
        row.push(
            r.special_kind()
                .map(|k| k.as_str())
                .unwrap_or("")
                .to_string(),
        );
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// `kind,record_key,detail`; notes carry a `[note]` prefix in the detail.
pub fn write_issues<W: Write>(out: W, report: &ValidationReport) -> Result<()> {
    let mut w = writer(out);
    w.write_record(["kind", "record_key", "detail"])?;
    for i in report.issues() {
        let detail = match i.severity {
            Severity::Error => i.detail.clone(),
            Severity::Note => format!("[note] {}", i.detail),
        };
        w.write_record([i.kind.as_str(), &i.record_key, &detail])?;
    }
    w.flush()?;
    Ok(())
}

/// `metric,label_id_or_overall,value`.
pub fn write_metrics<W: Write>(out: W, report: &MetricsReport, blank_label: &str) -> Result<()> {
    let mut w = writer(out);
    w.write_record(["metric", "label_id_or_overall", "value"])?;
    let mut row =
        |metric: &str, label: &str, value: String| w.write_record([metric, label, &value]);
    row("level", "overall", report.level.as_str().to_string())?;
    row("evaluated", "overall", report.evaluated.to_string())?;
    row("skipped", "overall", report.skipped.to_string())?;
    row(
        "nonblank_evaluated",
        "overall",
        report.nonblank_evaluated.to_string(),
    )?;
    for t in &report.top_k {
        row(
            &format!("accuracy@{}", t.k),
            "overall",
            t.accuracy.to_string(),
        )?;
    }
    for t in &report.top_k_nonblank {
        row(
            &format!("accuracy_nonblank@{}", t.k),
            "overall",
            t.accuracy.to_string(),
        )?;
    }
    row(
        "blank_precision",
        blank_label,
        ratio(report.blank.precision),
    )?;
    row("blank_recall", blank_label, ratio(report.blank.recall))?;
    row(
        "blank_support",
        blank_label,
        report.blank.support.to_string(),
    )?;
    for c in &report.per_class {
        row("precision", &c.label, ratio(c.precision))?;
        row("recall", &c.label, ratio(c.recall))?;
        row("support", &c.label, c.support.to_string())?;
    }
    w.flush()?;
    Ok(())
}

/// `rank,label_id,count,cumulative_fraction`.
pub fn write_skew<W: Write>(out: W, skew: &SkewReport) -> Result<()> {
    let mut w = writer(out);
    w.write_record(["rank", "label_id", "count", "cumulative_fraction"])?;
    for p in &skew.curve {
        w.write_record([
            p.rank.to_string(),
            p.label.clone(),
            p.count.to_string(),
            p.cumulative_fraction.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// `label_id,count`, in label order.
pub fn write_distribution<W: Write>(out: W, hist: &ClassHistogram) -> Result<()> {
    let mut w = writer(out);
    w.write_record(["label_id", "count"])?;
    for (label, n) in hist.counts() {
        w.write_record([label.as_str(), &n.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// `class_name,level,count`.
pub fn write_distinct_counts<W: Write>(out: W, counts: &DistinctCounts) -> Result<()> {
    let mut w = writer(out);
    w.write_record(["class_name", "level", "count"])?;
    for (class, c) in counts.iter() {
        for level in &Level::ALL[1..] {
            w.write_record([
                class.unwrap_or("all"),
                level.as_str(),
                &c.get(*level).to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// `label_id,weight`.
pub fn write_weights<W: Write>(out: W, weights: &ClassWeights) -> Result<()> {
    let mut w = writer(out);
    w.write_record(["label_id", "weight"])?;
    for (label, x) in &weights.weights {
        w.write_record([label.as_str(), &x.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// `cell_x,cell_y,cell_size_m,fold,image_count`, in region order.
pub fn write_assignment<W: Write>(out: W, assignment: &SplitAssignment) -> Result<()> {
    let mut w = writer(out);
    w.write_record(["cell_x", "cell_y", "cell_size_m", "fold", "image_count"])?;
    for (r, f) in assignment.regions() {
        let RegionId {
            cell_x,
            cell_y,
            cell_size,
        } = r;
        w.write_record([
            cell_x.to_string(),
            cell_y.to_string(),
            cell_size.meters().to_string(),
            f.fold.as_str().to_string(),
            f.image_count.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// One id per line.
pub fn write_manifest<W: Write>(mut out: W, ids: &[String]) -> io::Result<()> {
    for id in ids {
        out.write_all(id.as_bytes())?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

/// `sequence_id,deployment_id,position,image_id`, one row per member.
pub fn write_sequences<W: Write>(out: W, groups: &[SequenceGroup]) -> Result<()> {
    let mut w = writer(out);
    w.write_record(["sequence_id", "deployment_id", "position", "image_id"])?;
    for g in groups {
        for (i, id) in g.image_ids.iter().enumerate() {
            w.write_record([g.sequence_id.as_str(), &g.deployment_id, &i.to_string(), id])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// `metric,key,value` rows of scalar diagnostics.
pub fn write_key_values<W: Write>(out: W, rows: &[(String, String, String)]) -> Result<()> {
    let mut w = writer(out);
    w.write_record(["metric", "key", "value"])?;
    for (m, k, v) in rows {
        w.write_record([m, k, v])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::read::{parse_deployments, parse_images};
    use camtrap_core::Timestamp;

    #[test]
    fn issues_mark_notes() {
        use camtrap_core::{Issue, IssueKind};
        let rep: ValidationReport = [
            Issue::error(IssueKind::OrphanImage, "i1", "deployment `dX` not found"),
            Issue::note(IssueKind::DuplicateId, "i2", "identical copy"),
        ]
        .into_iter()
        .collect();
        let mut buf = Vec::new();
        write_issues(&mut buf, &rep).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "kind,record_key,detail\norphan_image,i1,deployment `dX` not found\nduplicate_id,i2,[note] identical copy\n"
        );
    }

    #[test]
    fn records_reparse_equal() {
        let mut d = Deployment::new("d,1", "p", -12.5, 0.1 + 0.2);
        d.start_time = Timestamp::from_unix(0, 500);
        d.notes = Some("say \"hi\"".into());
        let mut buf = Vec::new();
        write_deployments(&mut buf, std::slice::from_ref(&d)).unwrap();
        let back = parse_deployments(&buf[..]).unwrap();
        assert!(back.report.is_empty());
        assert_eq!(back.records, [d]);

        let img = ImageRecord {
            image_id: "i1".into(),
            deployment_id: "d,1".into(),
            timestamp: Timestamp::from_unix(1_433_160_000, 123_000_000).unwrap(),
            label_id: "blank".into(),
            burst_index: Some(3),
            source_id: "s".into(),
        };
        let mut buf = Vec::new();
        write_images(&mut buf, std::slice::from_ref(&img)).unwrap();
        assert_eq!(parse_images(&buf[..]).unwrap().records, [img]);
    }
}
