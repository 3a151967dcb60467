//! CSV persistence for labelled feature datasets and grade tables.
//!
//! The dataset header is fixed:
//!
//! ```text
//! case_id,vs_volume,dist_pons,dist_brainstem,dist_vermal_1_5,dist_vermal_6_7,dist_vermal_8_10,dist_ipsi_cerebellum,dist_contra_cerebellum,surf_background,grade
//! ```
//!
//! Rows are written sorted by `case_id`, reals with 17 significant digits so
//! a read after write reproduces every value bit-exactly, and an empty
//! `grade` cell for unlabelled cases. UTF-8, LF line endings.

use std::collections::{BTreeMap, HashSet};
use std::io::{Read, Write};

use thiserror::Error;

use crate::features::{FeatureVector, FEATURE_COUNT, FEATURE_NAMES};
use crate::grade::Grade;
use crate::numfmt::fmt_g17;

pub const DATASET_HEADER: &str = "case_id,vs_volume,dist_pons,dist_brainstem,dist_vermal_1_5,dist_vermal_6_7,dist_vermal_8_10,dist_ipsi_cerebellum,dist_contra_cerebellum,surf_background,grade";

pub const GRADES_HEADER: &str = "case_id,grade";

#[derive(Debug, Clone, PartialEq)]
pub struct CaseRecord {
    pub case_id: String,
    pub features: FeatureVector,
    pub grade: Option<Grade>,
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("duplicate case_id {0:?}")]
    DuplicateCaseId(String),
    #[error("line {line}: {message}")]
    MalformedRow { line: u64, message: String },
    #[error("unexpected header {found:?}, expected {expected:?}")]
    SchemaMismatch { found: String, expected: String },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn writer<W: Write>(sink: W) -> csv::Writer<W> {
    csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(sink)
}

fn reader<R: Read>(source: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new().has_headers(false).flexible(true).from_reader(source)
}

fn check_unique<'a>(ids: impl Iterator<Item = &'a str>) -> Result<(), DatasetError> {
    let mut seen = HashSet::new();
    for id in ids {
        if !seen.insert(id) {
            return Err(DatasetError::DuplicateCaseId(id.to_string()));
        }
    }
    Ok(())
}

pub fn write_dataset<W: Write>(records: &[CaseRecord], sink: W) -> Result<(), DatasetError> {
    check_unique(records.iter().map(|r| r.case_id.as_str()))?;
    let mut sorted: Vec<&CaseRecord> = records.iter().collect();
    sorted.sort_by(|a, b| a.case_id.cmp(&b.case_id));
    let mut w = writer(sink);
    w.write_record(DATASET_HEADER.split(','))?;
    for r in sorted {
        let mut row = Vec::with_capacity(FEATURE_COUNT + 2);
        row.push(r.case_id.clone());
        row.extend(r.features.to_array().iter().map(|&v| fmt_g17(v)));
        row.push(r.grade.map(|g| g.to_string()).unwrap_or_default());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

fn header_of(record: &csv::StringRecord) -> String {
    record.iter().collect::<Vec<_>>().join(",")
}

fn parse_grade(cell: &str, line: u64) -> Result<Option<Grade>, DatasetError> {
    let cell = cell.trim();
    if cell.is_empty() {
        return Ok(None);
    }
    cell.parse::<u8>()
        .ok()
        .and_then(Grade::new)
        .map(Some)
        .ok_or_else(|| DatasetError::MalformedRow { line, message: format!("grade {cell:?} is not in 1..4") })
}

pub fn read_dataset<R: Read>(source: R) -> Result<Vec<CaseRecord>, DatasetError> {
    let mut rdr = reader(source);
    let mut rows = rdr.records();
    let header = match rows.next() {
        Some(h) => h?,
        None => return Err(DatasetError::SchemaMismatch { found: String::new(), expected: DATASET_HEADER.into() }),
    };
    let found = header_of(&header);
    if found.trim_start_matches('\u{feff}') != DATASET_HEADER {
        return Err(DatasetError::SchemaMismatch { found, expected: DATASET_HEADER.into() });
    }
    let mut out = Vec::new();
    for row in rows {
        let row = row?;
        let line = row.position().map_or(0, |p| p.line());
        if row.len() != FEATURE_COUNT + 2 {
            return Err(DatasetError::MalformedRow {
                line,
                message: format!("{} columns, expected {}", row.len(), FEATURE_COUNT + 2),
            });
        }
        let mut values = [0.0; FEATURE_COUNT];
        for (k, v) in values.iter_mut().enumerate() {
            let cell = &row[k + 1];
            *v = cell.trim().parse::<f64>().ok().filter(|x| x.is_finite()).ok_or_else(|| {
                DatasetError::MalformedRow {
                    line,
                    message: format!("{}: {cell:?} is not a finite number", FEATURE_NAMES[k]),
                }
            })?;
        }
        out.push(CaseRecord {
            case_id: row[0].to_string(),
            features: FeatureVector::from_array(values),
            grade: parse_grade(&row[FEATURE_COUNT + 1], line)?,
        });
    }
    check_unique(out.iter().map(|r| r.case_id.as_str()))?;
    Ok(out)
}

/// Writes a `case_id,grade` table sorted by case id.
pub fn write_grades<W: Write>(grades: &BTreeMap<String, Grade>, sink: W) -> Result<(), DatasetError> {
    let mut w = writer(sink);
    w.write_record(GRADES_HEADER.split(','))?;
    for (id, g) in grades {
        w.write_record([id.as_str(), &g.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Reads the `case_id` and `grade` columns (located by header name) of any
/// CSV: a grades table, a prediction file or a full dataset.
pub fn read_grades<R: Read>(source: R) -> Result<BTreeMap<String, Option<Grade>>, DatasetError> {
    let mut rdr = reader(source);
    let mut rows = rdr.records();
    let header = match rows.next() {
        Some(h) => h?,
        None => return Err(DatasetError::SchemaMismatch { found: String::new(), expected: GRADES_HEADER.into() }),
    };
    let col = |name: &str| header.iter().position(|h| h.trim_start_matches('\u{feff}') == name);
    let (Some(id_col), Some(grade_col)) = (col("case_id"), col("grade")) else {
        return Err(DatasetError::SchemaMismatch { found: header_of(&header), expected: GRADES_HEADER.into() });
    };
    let mut out = BTreeMap::new();
    for row in rows {
        let row = row?;
        let line = row.position().map_or(0, |p| p.line());
        if row.len() != header.len() {
            return Err(DatasetError::MalformedRow {
                line,
                message: format!("{} columns, expected {}", row.len(), header.len()),
            });
        }
        let id = row[id_col].to_string();
        let grade = parse_grade(&row[grade_col], line)?;
        if out.insert(id.clone(), grade).is_some() {
            return Err(DatasetError::DuplicateCaseId(id));
        }
    }
    Ok(out)
}
