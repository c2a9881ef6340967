//! Prediction files (`image_id label:score ...` per line) and range maps
//! (`label_id,lat_min,lat_max,lon_min,lon_max`).

use std::fs;
use std::io::{self, Write};
use std::path::Path;

use camtrap_core::eval::{GeoBox, PredictionRecord, PredictionSet, RangeMap};
use camtrap_core::{Issue, IssueKind, ValidationReport};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::read::Parsed;

pub const RANGE_MAP_COLUMNS: [&str; 5] = ["label_id", "lat_min", "lat_max", "lon_min", "lon_max"];

/// Parses one non-empty line. The label is everything before the last `:`
/// of a token, so labels may themselves contain colons.
fn parse_line(line: &str) -> std::result::Result<(PredictionRecord, bool), String> {
    let mut tokens = line.split_ascii_whitespace();
    let id = tokens.next().ok_or("empty line")?;
    let mut entries = Vec::new();
    for tok in tokens {
        let (label, score) = tok
            .rsplit_once(':')
            .ok_or_else(|| format!("entry `{tok}` is not label:score"))?;
        let score: f64 = score
            .parse()
            .map_err(|_| format!("score `{score}` of `{label}` is not a number"))?;
        entries.push((label.to_string(), score));
    }
    PredictionRecord::new(id, entries).map_err(|e| e.to_string())
}

/// Parses a whole prediction file. Blank lines and lines starting with `#`
/// are skipped. Malformed lines are reported and dropped; records whose
/// scores were out of order are re-sorted and noted. Duplicate image ids
/// keep the first record.
pub fn parse_predictions(text: &str) -> (PredictionSet, ValidationReport) {
    let lines: Vec<(usize, &str)> = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
        .collect();
    let parsed: Vec<_> = lines
        .par_iter()
        .map(|&(n, l)| (n, l, parse_line(l)))
        .collect();
    let mut report = ValidationReport::new();
    let mut records = Vec::with_capacity(parsed.len());
    for (n, line, result) in parsed {
        let key = line
            .split_ascii_whitespace()
            .next()
            .unwrap_or("")
            .to_string();
        match result {
            Ok((rec, resorted)) => {
                if resorted {
                    report.push(Issue::note(
                        IssueKind::MalformedRow,
                        key,
                        format!("line {n}: scores were not in descending order; re-sorted"),
                    ));
                }
                records.push(rec);
            }
            Err(e) => report.push(Issue::error(
                IssueKind::MalformedRow,
                key,
                format!("line {n}: {e}"),
            )),
        }
    }
    let (set, duplicates) = PredictionSet::new(records);
    for id in duplicates {
        report.push(Issue::error(
            IssueKind::DuplicateId,
            id,
            "image has more than one prediction line; the first is kept",
        ));
    }
    (set, report.sorted())
}

pub fn read_predictions(path: &Path) -> Result<(PredictionSet, ValidationReport)> {
    let text = fs::read_to_string(path).map_err(|e| Error::from(e).in_file(path))?;
    Ok(parse_predictions(&text))
}

pub fn write_predictions<'a, W, I>(mut out: W, records: I) -> io::Result<()>
where
    W: Write,
    I: IntoIterator<Item = &'a PredictionRecord>,
{
    for r in records {
        out.write_all(r.image_id().as_bytes())?;
        for (label, score) in r.entries() {
            write!(out, " {label}:{score}")?;
        }
        out.write_all(b"\n")?;
    }
    out.flush()
}

/// Parses a range map. Rows with unparseable or ill-formed boxes are
/// reported and skipped.
pub fn parse_range_map(input: impl io::Read) -> Result<Parsed<(String, GeoBox)>> {
    let mut reader = csv::ReaderBuilder::new()
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(input);
    let found = reader.headers()?;
    if found.iter().ne(RANGE_MAP_COLUMNS) {
        return Err(Error::Header {
            expected: RANGE_MAP_COLUMNS.join(","),
            found: found.iter().collect::<Vec<_>>().join(","),
        });
    }
    let mut records = Vec::new();
    let mut report = ValidationReport::new();
    let mut check = RangeMap::new();
    for rec in reader.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let label = rec.get(0).unwrap_or("").to_string();
        let key = if label.is_empty() {
            format!("line {line}")
        } else {
            label.clone()
        };
        let mut fail = |detail: String| {
            report.push(Issue::error(
                IssueKind::MalformedRow,
                key.clone(),
                format!("line {line}: {detail}"),
            ))
        };
        if rec.len() != RANGE_MAP_COLUMNS.len() {
            fail(format!("expected 5 fields, found {}", rec.len()));
            continue;
        }
        if label.is_empty() {
            fail("label_id is empty".into());
            continue;
        }
        let vals: std::result::Result<Vec<f64>, _> =
            rec.iter().skip(1).map(str::parse::<f64>).collect();
        let Ok(v) = vals else {
            fail("bounds must be numbers".into());
            continue;
        };
        let b = GeoBox {
            lat_min: v[0],
            lat_max: v[1],
            lon_min: v[2],
            lon_max: v[3],
        };
        match check.insert(label.clone(), b) {
            Ok(()) => records.push((label, b)),
            Err(e) => fail(e.to_string()),
        }
    }
    Ok(Parsed { records, report })
}

pub fn read_range_map(path: &Path) -> Result<(RangeMap, ValidationReport)> {
    let file = fs::File::open(path).map_err(|e| Error::from(e).in_file(path))?;
    let parsed = parse_range_map(io::BufReader::new(file)).map_err(|e| e.in_file(path))?;
    let mut map = RangeMap::new();
    for (label, b) in parsed.records {
        map.insert(label, b)?;
    }
    Ok((map, parsed.report))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_entry_line() {
        let (set, rep) = parse_predictions("i1 sp_a:0.9 sp_b:0.1\n");
        assert!(rep.is_empty());
        let r = set.get("i1").unwrap();
        assert_eq!(
            r.entries(),
            &[("sp_a".to_string(), 0.9), ("sp_b".to_string(), 0.1)]
        );
    }

    #[test]
    fn unsorted_line_is_flagged_and_resorted() {
        let (set, rep) = parse_predictions("i1 sp_a:0.1 sp_b:0.9\n");
        assert_eq!(rep.note_count(), 1);
        assert!(rep.is_clean());
        assert_eq!(set.get("i1").unwrap().top().0, "sp_b");
    }

    #[test]
    fn malformed_lines_carry_line_numbers() {
        let text =
            "# header comment\ni1 a:0.5\n\ni2 a\ni3 a:x\ni4\ni5 a:0.2 a:0.1\ni1 b:1\ni6 a:NaN\n";
        let (set, rep) = parse_predictions(text);
        assert_eq!(set.len(), 1);
        let details: Vec<&str> = rep.issues().iter().map(|i| i.detail.as_str()).collect();
        assert_eq!(rep.counts().get(IssueKind::MalformedRow), 5);
        assert_eq!(rep.counts().get(IssueKind::DuplicateId), 1);
        assert!(details.iter().any(|d| d.starts_with("line 4:")));
        assert!(details.iter().any(|d| d.starts_with("line 9:")));
    }

    #[test]
    fn colon_in_label() {
        let (set, _) = parse_predictions("i1 ns:lbl:0.5\n");
        assert_eq!(set.get("i1").unwrap().top().0, "ns:lbl");
    }

    #[test]
    fn range_map_rows() {
        let text = "label_id,lat_min,lat_max,lon_min,lon_max\n\
                    asian_elephant,-10,35,65,125\n\
                    asian_elephant,x,35,65,125\n\
                    bad,10,0,0,1\n";
        let p = parse_range_map(text.as_bytes()).unwrap();
        assert_eq!(p.records.len(), 1);
        assert_eq!(p.report.len(), 2);
    }
}
