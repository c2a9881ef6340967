//! Readers for `taxonomy.csv`, `deployments.csv` and `images.csv`.
//!
//! A header that does not match the expected columns is a hard error. Rows
//! that cannot become a record are reported with their line number and left
//! out; the rest of the file is still read. Within one file the first
//! occurrence of an id wins and later ones are reported as duplicates.

use std::collections::HashMap;
use std::fs::File;
use std::io::{self, BufReader};
use std::path::Path;

use camtrap_core::taxonomy::RawTaxon;
use camtrap_core::{
    Deployment, ImageRecord, Issue, IssueKind, SpecialKind, TaxonomyTable, Timestamp,
    ValidationReport,
};
use chrono::{DateTime, NaiveDateTime};
use csv::StringRecord;
use rayon::prelude::*;

use crate::error::{Error, Result};

pub const TAXONOMY_COLUMNS: [&str; 7] = [
    "label_id",
    "class_name",
    "order_name",
    "family_name",
    "genus_name",
    "species_name",
    "special_kind",
];

pub const DEPLOYMENT_COLUMNS: [&str; 8] = [
    "deployment_id",
    "project_id",
    "latitude",
    "longitude",
    "camera_model",
    "start_time",
    "end_time",
    "notes",
];

pub const IMAGE_COLUMNS: [&str; 6] = [
    "image_id",
    "deployment_id",
    "timestamp",
    "label_id",
    "burst_index",
    "source_id",
];

/// Rows converted per parallel batch.
const BATCH: usize = 1 << 15;

/// Records that parsed cleanly, plus everything reported along the way.
#[derive(Debug, Clone, PartialEq)]
pub struct Parsed<T> {
    pub records: Vec<T>,
    pub report: ValidationReport,
}

/// Parses an RFC 3339 timestamp. A timestamp without an offset is read as
/// UTC; the flag is then set so callers can note it.
pub fn parse_timestamp(s: &str) -> std::result::Result<(Timestamp, bool), String> {
    let (secs, nanos, zoneless) = if let Ok(t) = DateTime::parse_from_rfc3339(s) {
        (t.timestamp(), t.timestamp_subsec_nanos(), false)
    } else {
        let naive = ["%Y-%m-%dT%H:%M:%S%.f", "%Y-%m-%d %H:%M:%S%.f"]
            .iter()
            .find_map(|f| NaiveDateTime::parse_from_str(s, f).ok())
            .ok_or_else(|| format!("`{s}` is not RFC 3339"))?
            .and_utc();
        (naive.timestamp(), naive.timestamp_subsec_nanos(), true)
    };
    Timestamp::from_unix(secs, nanos)
        .map(|t| (t, zoneless))
        .ok_or_else(|| format!("`{s}` is out of range"))
}

struct Row<T> {
    record: Option<T>,
    issues: Vec<Issue>,
    line: u64,
}

struct RowCtx<'a> {
    line: u64,
    key: &'a str,
    issues: Vec<Issue>,
}

impl RowCtx<'_> {
    fn key(&self) -> String {
        if self.key.is_empty() {
            format!("line {}", self.line)
        } else {
            self.key.to_string()
        }
    }

    fn error(&mut self, kind: IssueKind, detail: impl std::fmt::Display) {
        let issue = Issue::error(kind, self.key(), format!("line {}: {detail}", self.line));
        self.issues.push(issue);
    }

    fn note(&mut self, kind: IssueKind, detail: impl std::fmt::Display) {
        let issue = Issue::note(kind, self.key(), format!("line {}: {detail}", self.line));
        self.issues.push(issue);
    }

    fn failed(&self) -> bool {
        self.issues.iter().any(Issue::is_error)
    }

    fn required<'r>(&mut self, rec: &'r StringRecord, i: usize, name: &str) -> &'r str {
        let v = &rec[i];
        if v.is_empty() {
            self.error(IssueKind::MissingField, format_args!("{name} is empty"));
        }
        v
    }

    fn optional_time(&mut self, v: &str, name: &str) -> Option<Timestamp> {
        if v.is_empty() {
            return None;
        }
        match parse_timestamp(v) {
            Ok((t, zoneless)) => {
                if zoneless {
                    self.note(
                        IssueKind::BadTimestamp,
                        format_args!("{name} `{v}` has no zone; read as UTC"),
                    );
                }
                Some(t)
            }
            Err(e) => {
                self.error(IssueKind::BadTimestamp, format_args!("{name}: {e}"));
                None
            }
        }
    }
}

fn check_header(reader: &mut csv::Reader<impl io::Read>, columns: &[&str]) -> Result<()> {
    let found = reader.headers()?;
    if found.iter().ne(columns.iter().copied()) {
        return Err(Error::Header {
            expected: columns.join(","),
            found: found.iter().collect::<Vec<_>>().join(","),
        });
    }
    Ok(())
}

fn csv_reader<R: io::Read>(input: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(input)
}

/// Reads every data row and converts it in parallel batches, keeping file
/// order. `convert` sees the row's line number and fields.
fn read_rows<R, T, F>(input: R, columns: &[&str], convert: F) -> Result<Vec<Row<T>>>
where
    R: io::Read,
    T: Send,
    F: Fn(&mut RowCtx<'_>, &StringRecord) -> Option<T> + Sync,
{
    let mut reader = csv_reader(input);
    check_header(&mut reader, columns)?;
    let convert_one = |(line, rec): (u64, StringRecord)| {
        let mut ctx = RowCtx {
            line,
            key: rec.get(0).unwrap_or(""),
            issues: Vec::new(),
        };
        let record = if rec.len() != columns.len() {
            ctx.error(
                IssueKind::MalformedRow,
                format_args!("expected {} fields, found {}", columns.len(), rec.len()),
            );
            None
        } else {
            convert(&mut ctx, &rec).filter(|_| !ctx.failed())
        };
        Row {
            record,
            issues: ctx.issues,
            line,
        }
    };
    let mut rows = Vec::new();
    let mut batch = Vec::with_capacity(BATCH);
    let mut rec = StringRecord::new();
    loop {
        let more = reader.read_record(&mut rec)?;
        if more {
            let line = rec.position().map_or(0, |p| p.line());
            batch.push((line, std::mem::take(&mut rec)));
        }
        if batch.len() == BATCH || (!more && !batch.is_empty()) {
            rows.par_extend(batch.par_drain(..).map(convert_one));
        }
        if !more {
            break;
        }
    }
    Ok(rows)
}

/// Keeps the first row per id, reporting later ones, and gathers issues.
fn finish<T>(rows: Vec<Row<T>>, id: impl Fn(&T) -> &str, what: &str) -> Parsed<T> {
    let mut report = ValidationReport::new();
    let mut first_line: HashMap<String, u64> = HashMap::new();
    let mut records = Vec::with_capacity(rows.len());
    for row in rows {
        for issue in row.issues {
            report.push(issue);
        }
        let Some(record) = row.record else { continue };
        let key = id(&record);
        if let Some(first) = first_line.get(key) {
            report.push(Issue::error(
                IssueKind::DuplicateId,
                key,
                format!("line {}: {what} repeats the one on line {first}", row.line),
            ));
            continue;
        }
        first_line.insert(key.to_string(), row.line);
        records.push(record);
    }
    Parsed { records, report }
}

pub fn parse_deployments(input: impl io::Read) -> Result<Parsed<Deployment>> {
    let rows = read_rows(input, &DEPLOYMENT_COLUMNS, |ctx, rec| {
        let coordinate = |ctx: &mut RowCtx<'_>, i: usize, name: &str| {
            let v = &rec[i];
            if v.is_empty() {
                ctx.error(IssueKind::MissingField, format_args!("{name} is empty"));
                return None;
            }
            match v.parse::<f64>() {
                Ok(x) => Some(x),
                Err(_) => {
                    ctx.error(
                        IssueKind::BadCoordinate,
                        format_args!("{name} `{v}` is not a number"),
                    );
                    None
                }
            }
        };
        let latitude = coordinate(ctx, 2, "latitude");
        let longitude = coordinate(ctx, 3, "longitude");
        let start_time = ctx.optional_time(&rec[5], "start_time");
        let end_time = ctx.optional_time(&rec[6], "end_time");
        let non_empty = |v: &str| (!v.is_empty()).then(|| v.to_string());
        let d = Deployment {
            deployment_id: rec[0].to_string(),
            project_id: rec[1].to_string(),
            latitude: latitude?,
            longitude: longitude?,
            camera_model: non_empty(&rec[4]),
            start_time,
            end_time,
            notes: non_empty(&rec[7]),
        };
        let key = ctx.key();
        for issue in d.check(&key) {
            ctx.error(issue.kind, issue.detail);
        }
        Some(d)
    })?;
    Ok(finish(rows, |d| &d.deployment_id, "deployment_id"))
}

pub fn parse_images(input: impl io::Read) -> Result<Parsed<ImageRecord>> {
    let rows = read_rows(input, &IMAGE_COLUMNS, |ctx, rec| {
        let image_id = ctx.required(rec, 0, "image_id");
        let deployment_id = ctx.required(rec, 1, "deployment_id");
        let ts = ctx.required(rec, 2, "timestamp");
        let label_id = ctx.required(rec, 3, "label_id");
        let source_id = ctx.required(rec, 5, "source_id");
        let timestamp = if ts.is_empty() {
            None
        } else {
            ctx.optional_time(ts, "timestamp")
        };
        let burst = &rec[4];
        let burst_index = if burst.is_empty() {
            None
        } else if let Ok(b) = burst.parse::<u32>() {
            Some(b)
        } else {
            ctx.error(
                IssueKind::MalformedRow,
                format_args!("burst_index `{burst}` is not a non-negative integer"),
            );
            None
        };
        Some(ImageRecord {
            image_id: image_id.to_string(),
            deployment_id: deployment_id.to_string(),
            timestamp: timestamp?,
            label_id: label_id.to_string(),
            burst_index,
            source_id: source_id.to_string(),
        })
    })?;
    Ok(finish(rows, |i| &i.image_id, "image_id"))
}

/// Parses the taxonomy rows and builds the table. Duplicate ids, a missing
/// blank label and tree inconsistencies come back in the report.
pub fn parse_taxonomy(input: impl io::Read) -> Result<(TaxonomyTable, ValidationReport)> {
    let rows = read_rows(input, &TAXONOMY_COLUMNS, |ctx, rec| {
        let mut raw = RawTaxon {
            label_id: rec[0].to_string(),
            ..Default::default()
        };
        for (slot, v) in raw.names.iter_mut().zip(rec.iter().skip(1)) {
            *slot = (!v.is_empty()).then(|| v.to_string());
        }
        let kind = &rec[6];
        if !kind.is_empty() {
            match SpecialKind::parse(kind) {
                Some(k) => raw.special = Some(k),
                None => ctx.error(
                    IssueKind::MalformedRow,
                    format_args!("special_kind `{kind}` is not blank or unknown"),
                ),
            }
        }
        Some(raw)
    })?;
    let mut report = ValidationReport::new();
    let mut raws = Vec::with_capacity(rows.len());
    for row in rows {
        for issue in row.issues {
            report.push(issue);
        }
        raws.extend(row.record);
    }
    let (table, built) = TaxonomyTable::build(raws);
    report.extend(built);
    Ok((table, report.sorted()))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(|f| BufReader::with_capacity(1 << 20, f))
        .map_err(|e| Error::from(e).in_file(path))
}

pub fn read_deployments(path: &Path) -> Result<Parsed<Deployment>> {
    parse_deployments(open(path)?).map_err(|e| e.in_file(path))
}

pub fn read_images(path: &Path) -> Result<Parsed<ImageRecord>> {
    parse_images(open(path)?).map_err(|e| e.in_file(path))
}

pub fn read_taxonomy(path: &Path) -> Result<(TaxonomyTable, ValidationReport)> {
    parse_taxonomy(open(path)?).map_err(|e| e.in_file(path))
}

#[cfg(test)]
mod tests {
    use super::*;

    const DEP_HEADER: &str =
        "deployment_id,project_id,latitude,longitude,camera_model,start_time,end_time,notes\n";
    const IMG_HEADER: &str = "image_id,deployment_id,timestamp,label_id,burst_index,source_id\n";

    #[test]
    fn zero_coordinates_parse() {
        let p = parse_deployments(format!("{DEP_HEADER}d1,p1,0.0,0.0,,,,\n").as_bytes()).unwrap();
        assert!(p.report.is_empty());
        assert_eq!(p.records, [Deployment::new("d1", "p1", 0.0, 0.0)]);
    }

    #[test]
    fn out_of_range_latitude_is_dropped() {
        let p = parse_deployments(format!("{DEP_HEADER}d1,p1,91.0,0.0,,,,\n").as_bytes()).unwrap();
        assert!(p.records.is_empty());
        assert_eq!(p.report.counts().get(IssueKind::BadCoordinate), 1);
        assert_eq!(p.report.len(), 1);
    }

    #[test]
    fn duplicate_deployment() {
        let text = format!("{DEP_HEADER}d1,p,1,1,,,,\nd2,p,1,1,,,,\nd1,p,2,2,,,,\n");
        let p = parse_deployments(text.as_bytes()).unwrap();
        assert_eq!(p.records.len(), 2);
        assert_eq!(p.report.counts().get(IssueKind::DuplicateId), 1);
        assert!(p.report.issues()[0].detail.contains("line 4"));
    }

    #[test]
    fn image_row_maps_fields() {
        let text = format!("{IMG_HEADER}i1,d1,2015-06-01T12:00:00Z,sp_panthera_onca,0,teamA\n");
        let p = parse_images(text.as_bytes()).unwrap();
        assert!(p.report.is_empty());
        let img = &p.records[0];
        assert_eq!(img.timestamp.to_string(), "2015-06-01T12:00:00Z");
        assert_eq!(img.burst_index, Some(0));
        assert_eq!(img.source_id, "teamA");
    }

    #[test]
    fn bad_rows_are_counted() {
        let mut text = IMG_HEADER.to_string();
        for i in 0..10 {
            let ts = match i {
                3 => "not-a-date",
                7 => "",
                _ => "2015-06-01T12:00:00+02:00",
            };
            text.push_str(&format!("i{i},d1,{ts},blank,,s\n"));
        }
        let p = parse_images(text.as_bytes()).unwrap();
        assert_eq!(p.records.len(), 8);
        assert_eq!(p.report.len(), 2);
        assert_eq!(p.report.counts().get(IssueKind::BadTimestamp), 1);
        assert_eq!(p.report.counts().get(IssueKind::MissingField), 1);
        assert_eq!(p.records[0].timestamp.to_string(), "2015-06-01T10:00:00Z");
    }

    #[test]
    fn zoneless_timestamp_is_a_note() {
        let text = format!("{IMG_HEADER}i1,d1,2015-06-01 12:00:00,blank,,s\n");
        let p = parse_images(text.as_bytes()).unwrap();
        assert_eq!(p.records.len(), 1);
        assert!(p.report.is_clean());
        assert_eq!(p.report.note_count(), 1);
    }

    #[test]
    fn wrong_header_is_fatal() {
        let text = "image_id,deployment_id,timestamp\ni1,d1,x\n";
        assert!(matches!(
            parse_images(text.as_bytes()),
            Err(Error::Header { .. })
        ));
        assert!(matches!(parse_images(&b""[..]), Err(Error::Header { .. })));
    }

    #[test]
    fn short_rows_and_bad_burst() {
        let text = format!("{IMG_HEADER}i1,d1\ni2,d1,2015-06-01T12:00:00Z,blank,-1,s\n");
        let p = parse_images(text.as_bytes()).unwrap();
        assert!(p.records.is_empty());
        assert_eq!(p.report.counts().get(IssueKind::MalformedRow), 2);
        assert_eq!(p.report.issues()[0].record_key, "i1");
    }

    #[test]
    fn one_row_taxonomy_gets_a_blank() {
        let text =
            "label_id,class_name,order_name,family_name,genus_name,species_name,special_kind\n\
                    sp_a,Aves,,,,,\n";
        let (t, rep) = parse_taxonomy(text.as_bytes()).unwrap();
        assert_eq!(t.len(), 2);
        assert_eq!(rep.counts().get(IssueKind::MissingField), 1);
    }

    #[test]
    fn same_genus_different_family() {
        let text =
            "label_id,class_name,order_name,family_name,genus_name,species_name,special_kind\n\
                    a,Mammalia,Carnivora,Felidae,Panthera,Panthera onca,\n\
                    b,Mammalia,Carnivora,Canidae,Panthera,Panthera leo,\n\
                    blank,,,,,,blank\n";
        let (_, rep) = parse_taxonomy(text.as_bytes()).unwrap();
        assert_eq!(rep.counts().get(IssueKind::TreeInconsistency), 1);
    }
}
