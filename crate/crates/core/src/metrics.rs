//! Macro-averaged mean absolute error for the four ordinal grades.
//!
//! Each grade present in the truth gets its own MAE; the headline number is
//! the unweighted mean of those, so a rare grade weighs as much as a common
//! one.

use std::fmt::Write as _;

use thiserror::Error;

use crate::grade::Grade;
use crate::numfmt::fmt_g17;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MetricsError {
    #[error("no cases to evaluate")]
    EmptyInput,
    #[error("case {index}: grade {value} is outside 1..4")]
    GradeOutOfRange { index: usize, value: u8 },
    #[error("strict mode needs every grade in the truth; grade {0} is absent")]
    MissingClass(Grade),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Averaging {
    /// Mean over the grades present in the truth.
    Present,
    /// Mean over all four grades; every grade must be present.
    Strict,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    /// MAE of the cases whose true grade is `i + 1`, if there are any.
    pub per_class_mae: [Option<f64>; 4],
    pub ma_mae: f64,
    /// `confusion[true][predicted]`, 0-based grade indices.
    pub confusion: [[u64; 4]; 4],
    pub n_cases: u64,
    pub averaging: Averaging,
}

/// Evaluates `(predicted, true)` grade pairs with macro averaging over the
/// grades present in the truth.
pub fn evaluate(pairs: &[(u8, u8)]) -> Result<EvalReport, MetricsError> {
    evaluate_with(pairs, Averaging::Present)
}

pub fn evaluate_with(pairs: &[(u8, u8)], averaging: Averaging) -> Result<EvalReport, MetricsError> {
    if pairs.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let mut confusion = [[0u64; 4]; 4];
    for (index, &(pred, truth)) in pairs.iter().enumerate() {
        let p = Grade::new(pred).ok_or(MetricsError::GradeOutOfRange { index, value: pred })?;
        let t = Grade::new(truth).ok_or(MetricsError::GradeOutOfRange { index, value: truth })?;
        confusion[t.index()][p.index()] += 1;
    }
    report_from_confusion(confusion, averaging)
}

/// Builds the report from a confusion matrix. Sums are taken over integer
/// counts, so the result does not depend on case order.
pub fn report_from_confusion(confusion: [[u64; 4]; 4], averaging: Averaging) -> Result<EvalReport, MetricsError> {
    let mut per_class_mae = [None; 4];
    for (t, row) in confusion.iter().enumerate() {
        let count: u64 = row.iter().sum();
        if count == 0 {
            continue;
        }
        let abs_err: u64 = row.iter().enumerate().map(|(p, &c)| c * p.abs_diff(t) as u64).sum();
        per_class_mae[t] = Some(abs_err as f64 / count as f64);
    }
    let present: Vec<f64> = per_class_mae.iter().flatten().copied().collect();
    if present.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    if averaging == Averaging::Strict {
        if let Some(t) = per_class_mae.iter().position(Option::is_none) {
            return Err(MetricsError::MissingClass(Grade::from_index(t).expect("index below 4")));
        }
    }
    let ma_mae = present.iter().sum::<f64>() / present.len() as f64;
    let n_cases = confusion.iter().flatten().sum();
    Ok(EvalReport { per_class_mae, ma_mae, confusion, n_cases, averaging })
}

impl EvalReport {
    /// Compact JSON with sorted keys; same report, same bytes.
    pub fn to_json(&self) -> String {
        let mut out = String::from("{\"averaging\":");
        out.push_str(match self.averaging {
            Averaging::Present => "\"present\"",
            Averaging::Strict => "\"strict\"",
        });
        out.push_str(",\"confusion\":[");
        for (i, row) in self.confusion.iter().enumerate() {
            if i > 0 {
                out.push(',');
            }
            let [a, b, c, d] = row;
            let _ = write!(out, "[{a},{b},{c},{d}]");
        }
        let _ = write!(out, "],\"ma_mae\":{},\"n_cases\":{},\"per_class_mae\":[", fmt_g17(self.ma_mae), self.n_cases);
        for (i, m) in self.per_class_mae.iter().enumerate() {
            if i > 0 {
                out.push(',');
            }
            match m {
                Some(v) => out.push_str(&fmt_g17(*v)),
                None => out.push_str("null"),
            }
        }
        out.push_str("]}\n");
        out
    }

    /// Human-readable summary: headline, per-grade MAE and confusion matrix.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "MA-MAE  {:.4}  ({} cases)", self.ma_mae, self.n_cases);
        let _ = writeln!(out);
        let _ = writeln!(out, "grade   cases   MAE");
        for g in Grade::ALL {
            let row = &self.confusion[g.index()];
            let mae = match self.per_class_mae[g.index()] {
                Some(v) => format!("{v:.4}"),
                None => "-".into(),
            };
            let _ = writeln!(out, "{:<7} {:>5}   {}", g.roman(), row.iter().sum::<u64>(), mae);
        }
        let _ = writeln!(out);
        let _ = writeln!(out, "true\\pred {:>6} {:>6} {:>6} {:>6}", "I", "II", "III", "IV");
        for g in Grade::ALL {
            let [a, b, c, d] = self.confusion[g.index()];
            let _ = writeln!(out, "{:<9} {a:>6} {b:>6} {c:>6} {d:>6}", g.roman());
        }
        out
    }
}
