//! Self-gains, cross-gains and the row-normalized transfer matrix.
//!
//! With seed-mean performances `Perf`, target `i` and donor `j`:
//!
//! ```text
//! self_gain[i]     = Perf_i(D_i + D_i') - Perf_i(D_i)
//! cross_gain[i][j] = Perf_i(D_i + D_j)  - Perf_i(D_i)
//! cltm[i][j]       = cross_gain[i][j] / self_gain[i]     (self_gain[i] > 0)
//! ```
//!
//! Entry semantics: below 0 the donor hurts the target, in (0, 1) it helps
//! less than the same amount of target data, above 1 it helps more.
//! Rows are independent of each other.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::matrix::SquareMatrix;
use crate::records::{format_float, LanguageId, TransferGrid};

#[derive(Debug, Error, PartialEq)]
pub enum TransferError {
    #[error("invalid denominator: self-gain of {language} is {delta} (must be > 0)")]
    InvalidDenominator { language: String, delta: f64 },
    #[error("malformed matrix file: {0}")]
    Malformed(String),
}

#[derive(Clone, Debug, PartialEq)]
pub struct GainMatrix {
    pub languages: Vec<LanguageId>,
    pub self_gain: Vec<f64>,
    /// Diagonal is NaN (undefined).
    pub cross_gain: SquareMatrix,
}

pub fn compute_gains(grid: &TransferGrid) -> GainMatrix {
    let n = grid.n();
    let self_gain = (0..n).map(|i| grid.self_augmented(i).mean - grid.base(i).mean).collect();
    let cross_gain =
        SquareMatrix::from_fn(
            n,
            |i, j| {
                if i == j {
                    f64::NAN
                } else {
                    grid.donor_augmented(i, j).mean - grid.base(i).mean
                }
            },
        );
    GainMatrix { languages: grid.languages.clone(), self_gain, cross_gain }
}

/// Cross-Lingual Transfer Matrix. Rows are targets, columns donors.
#[derive(Clone, Debug, PartialEq)]
pub struct Cltm {
    pub languages: Vec<LanguageId>,
    /// Invalid rows hold NaN.
    pub entries: SquareMatrix,
    pub row_valid: Vec<bool>,
}

impl Cltm {
    /// Builds a matrix with every row valid; used for externally supplied matrices.
    pub fn from_entries(languages: Vec<LanguageId>, entries: SquareMatrix) -> Self {
        let row_valid = (0..entries.n()).map(|i| entries.row(i).iter().all(|v| v.is_finite())).collect();
        Self { languages, entries, row_valid }
    }

    pub fn n(&self) -> usize {
        self.entries.n()
    }

    pub fn valid_indices(&self) -> Vec<usize> {
        (0..self.n()).filter(|&i| self.row_valid[i]).collect()
    }

    pub fn to_json(&self) -> String {
        let file = CltmFile {
            languages: self.languages.iter().map(|l| l.code.clone()).collect(),
            matrix: self.entries.clone(),
            row_valid: self.row_valid.clone(),
        };
        serde_json::to_string_pretty(&file).expect("matrix serializes") + "\n"
    }

    /// Reads `{languages, matrix, row_valid?}`; missing `row_valid` marks rows
    /// with any null entry as invalid.
    pub fn from_json(content: &str) -> Result<Self, TransferError> {
        let file: CltmFileIn = serde_json::from_str(content).map_err(|e| TransferError::Malformed(e.to_string()))?;
        if file.languages.len() != file.matrix.n() {
            return Err(TransferError::Malformed(format!(
                "{} languages for a {}x{} matrix",
                file.languages.len(),
                file.matrix.n(),
                file.matrix.n()
            )));
        }
        let languages = file.languages.into_iter().map(LanguageId::new).collect();
        let mut cltm = Cltm::from_entries(languages, file.matrix);
        if let Some(valid) = file.row_valid {
            if valid.len() != cltm.n() {
                return Err(TransferError::Malformed("row_valid length differs from n".into()));
            }
            for (i, v) in valid.into_iter().enumerate() {
                cltm.row_valid[i] &= v;
            }
        }
        Ok(cltm)
    }

    /// CSV with a language-code header row and a leading code column; NaN as empty.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("target");
        for l in &self.languages {
            let _ = write!(out, ",{}", l.code);
        }
        out.push('\n');
        for (l, row) in self.languages.iter().zip(self.entries.rows()) {
            out.push_str(&l.code);
            for &v in row {
                out.push(',');
                if v.is_finite() {
                    out.push_str(&format_float(v));
                }
            }
            out.push('\n');
        }
        out
    }

    pub fn from_csv(content: &str) -> Result<Self, TransferError> {
        let malformed = |m: String| TransferError::Malformed(m);
        let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(content.as_bytes());
        let header = reader.headers().map_err(|e| malformed(e.to_string()))?.clone();
        let columns: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
        let mut rows = Vec::new();
        for (idx, row) in reader.records().enumerate() {
            let row = row.map_err(|e| malformed(e.to_string()))?;
            let code = row.get(0).unwrap_or("");
            if columns.get(idx).map(String::as_str) != Some(code) {
                return Err(malformed(format!("row {} label {code:?} does not match column order", idx + 1)));
            }
            let values =
                row.iter()
                    .skip(1)
                    .map(|f| {
                        if f.is_empty() {
                            Ok(f64::NAN)
                        } else {
                            f.parse::<f64>().map_err(|e| malformed(e.to_string()))
                        }
                    })
                    .collect::<Result<Vec<_>, _>>()?;
            rows.push(values);
        }
        let entries = SquareMatrix::from_rows(&rows).ok_or_else(|| malformed("matrix is not square".into()))?;
        if entries.n() != columns.len() {
            return Err(malformed("row count differs from column count".into()));
        }
        Ok(Cltm::from_entries(columns.into_iter().map(LanguageId::new).collect(), entries))
    }
}

#[derive(Serialize)]
struct CltmFile {
    languages: Vec<String>,
    matrix: SquareMatrix,
    row_valid: Vec<bool>,
}

#[derive(Deserialize)]
struct CltmFileIn {
    languages: Vec<String>,
    matrix: SquareMatrix,
    #[serde(default)]
    row_valid: Option<Vec<bool>>,
}

/// Row-normalizes the gains. In strict mode a non-positive self-gain aborts;
/// otherwise the row is marked invalid and filled with NaN.
pub fn assemble_cltm(gains: &GainMatrix, strict: bool) -> Result<Cltm, TransferError> {
    let n = gains.languages.len();
    let mut entries = SquareMatrix::filled(n, f64::NAN);
    let mut row_valid = vec![false; n];
    for i in 0..n {
        let delta = gains.self_gain[i];
        // NaN self-gains fall through here too.
        if !(delta > 0.0) {
            if strict {
                return Err(TransferError::InvalidDenominator { language: gains.languages[i].code.clone(), delta });
            }
            continue;
        }
        row_valid[i] = true;
        for j in 0..n {
            entries[(i, j)] = if i == j { 1.0 } else { gains.cross_gain[(i, j)] / delta };
        }
    }
    Ok(Cltm { languages: gains.languages.clone(), entries, row_valid })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gains(self_gain: Vec<f64>, cross: Vec<Vec<f64>>) -> GainMatrix {
        let n = self_gain.len();
        GainMatrix {
            languages: (0..n).map(|i| LanguageId::new(format!("l{i}"))).collect(),
            self_gain,
            cross_gain: SquareMatrix::from_rows(&cross).unwrap(),
        }
    }

    #[test]
    fn ratio_and_unit_diagonal() {
        let g = gains(vec![0.2, 0.1], vec![vec![f64::NAN, 0.1], vec![-0.05, f64::NAN]]);
        let m = assemble_cltm(&g, true).unwrap();
        assert!((m.entries[(0, 1)] - 0.5).abs() < 1e-15);
        assert!((m.entries[(1, 0)] + 0.5).abs() < 1e-15);
        assert_eq!(m.entries[(0, 0)], 1.0);
        assert_eq!(m.entries[(1, 1)], 1.0);
    }

    #[test]
    fn zero_self_gain_strict_and_lenient() {
        let g = gains(vec![0.0, 0.1], vec![vec![f64::NAN, 0.1], vec![0.05, f64::NAN]]);
        assert_eq!(
            assemble_cltm(&g, true).unwrap_err(),
            TransferError::InvalidDenominator { language: "l0".into(), delta: 0.0 }
        );
        let m = assemble_cltm(&g, false).unwrap();
        assert_eq!(m.row_valid, vec![false, true]);
        assert!(m.entries[(0, 1)].is_nan());
        assert!((m.entries[(1, 0)] - 0.5).abs() < 1e-15);
        assert_eq!(m.valid_indices(), vec![1]);
    }

    #[test]
    fn json_and_csv_round_trip() {
        let g = gains(
            vec![-0.1, 0.1, 0.2],
            vec![vec![f64::NAN, 0.1, 0.3], vec![0.05, f64::NAN, -0.2], vec![0.3, 0.1, f64::NAN]],
        );
        let m = assemble_cltm(&g, false).unwrap();
        let back = Cltm::from_json(&m.to_json()).unwrap();
        assert_eq!(back.row_valid, m.row_valid);
        assert_eq!(back.entries.to_rows()[1], m.entries.to_rows()[1]);
        let csv = m.to_csv();
        assert!(csv.starts_with("target,l0,l1,l2\nl0,,,\n"));
        let back = Cltm::from_csv(&csv).unwrap();
        assert_eq!(back.row_valid, m.row_valid);
        assert_eq!(back.entries.row(2), m.entries.row(2));
    }

    #[test]
    fn json_shape_mismatch_rejected() {
        let err = Cltm::from_json(r#"{"languages":["a"],"matrix":[[1,2],[3,1]]}"#).unwrap_err();
        assert!(matches!(err, TransferError::Malformed(_)));
    }
}
