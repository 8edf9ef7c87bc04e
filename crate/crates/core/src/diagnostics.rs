//! Aggregate statistics of a transfer matrix `M` of dimension `n`.
//!
//! | statistic          | definition                                                        |
//! |--------------------|-------------------------------------------------------------------|
//! | `rfd1`             | `‖M − 1‖_F / n`, distance from the all-ones (language-agnostic) matrix |
//! | `asym_rel`         | `‖M − Mᵀ‖_F / ‖M‖_F`                                               |
//! | `avg_row_cosine`   | mean cosine similarity over ordered row pairs `i ≠ j`             |
//! | `rms`              | `‖M‖_F / n`                                                       |
//! | `prop_pos`         | share of off-diagonal entries `> 0`                               |
//! | `reciprocity_pos`  | share of positive off-diagonal entries whose mirror is also `> 0` |
//! | `intra_family_pos` | share of positive off-diagonal entries within one language family |
//!
//! Cosine over ordered pairs equals the unordered-pair average since the
//! cosine is symmetric. The diagonal never counts towards the proportions.
//! `reciprocity_pos` can alternatively be normalised by all off-diagonal
//! entries ([`ReciprocityDenominator::AllOffDiagonal`]), in which case it
//! cannot exceed `prop_pos`.
//!
//! Rows flagged invalid are dropped together with their columns before any
//! statistic is computed.

use std::fmt::Write as _;

use serde::Serialize;
use thiserror::Error;

use crate::matrix::SquareMatrix;
use crate::records::FamilyMap;
use crate::transfer::Cltm;

#[derive(Debug, Error, PartialEq)]
pub enum DiagnosticsError {
    #[error("need at least 2 valid rows, found {0}")]
    InsufficientRows(usize),
    #[error("matrix has zero Frobenius norm")]
    ZeroMatrix,
    #[error("row {0} is all zeros")]
    ZeroRow(String),
    #[error("matrix contains a non-finite entry in a valid row ({0})")]
    NonFinite(String),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ReciprocityDenominator {
    /// P(mirror positive | entry positive).
    #[default]
    PositiveEntries,
    /// Entries positive in both directions over all off-diagonal entries.
    AllOffDiagonal,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DiagnosticsReport {
    pub n: usize,
    pub rfd1: f64,
    pub asym_rel: f64,
    pub avg_row_cosine: f64,
    pub rms: f64,
    pub prop_pos: f64,
    /// `None` when there are no positive off-diagonal entries.
    pub reciprocity_pos: Option<f64>,
    /// `None` without a family map or without positive entries.
    pub intra_family_pos: Option<f64>,
    pub reciprocity_denominator: ReciprocityDenominator,
    pub excluded: Vec<String>,
}

impl DiagnosticsReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    /// Aligned table: RFD₁, Asym_rel, prop₊, reciprocity₊, cos̄_rows, intra-family₊, then RMS.
    pub fn to_table(&self) -> String {
        let pct = |v: Option<f64>| v.map_or("undefined".to_string(), |v| format!("{:.2}%", 100.0 * v));
        let rows = [
            ("RFD1", format!("{:.3}", self.rfd1)),
            ("Asym_rel", format!("{:.3}", self.asym_rel)),
            ("prop+", pct(Some(self.prop_pos))),
            ("reciprocity+", pct(self.reciprocity_pos)),
            ("cos_rows", format!("{:.3}", self.avg_row_cosine)),
            ("intra-family+", pct(self.intra_family_pos)),
            ("RMS", format!("{:.3}", self.rms)),
        ];
        let mut out = String::new();
        let _ = writeln!(out, "{:<14} {:>10}", "Metric", "Value");
        for (name, value) in rows {
            let _ = writeln!(out, "{name:<14} {value:>10}");
        }
        let _ = writeln!(out, "{:<14} {:>10}", "n", self.n);
        if !self.excluded.is_empty() {
            let _ = writeln!(out, "excluded: {}", self.excluded.join(", "));
        }
        out
    }
}

pub fn compute_diagnostics(
    cltm: &Cltm,
    families: Option<&FamilyMap>,
    reciprocity: ReciprocityDenominator,
) -> Result<DiagnosticsReport, DiagnosticsError> {
    let keep = cltm.valid_indices();
    if keep.len() < 2 {
        return Err(DiagnosticsError::InsufficientRows(keep.len()));
    }
    let m = cltm.entries.principal(&keep);
    let codes: Vec<&str> = keep.iter().map(|&i| cltm.languages[i].code.as_str()).collect();
    if let Some(i) = (0..m.n()).find(|&i| m.row(i).iter().any(|v| !v.is_finite())) {
        return Err(DiagnosticsError::NonFinite(codes[i].to_string()));
    }
    let n = m.n();
    let nf = n as f64;

    let norm = m.frobenius();
    if norm == 0.0 {
        return Err(DiagnosticsError::ZeroMatrix);
    }
    let rfd1 = m.map(|v| v - 1.0).frobenius() / nf;
    let transposed = m.transpose();
    let asym = SquareMatrix::from_fn(n, |i, j| m[(i, j)] - transposed[(i, j)]).frobenius();
    let asym_rel = asym / norm;
    let rms = norm / nf;

    let row_sq: Vec<f64> = m.rows().map(|r| r.iter().map(|v| v * v).sum::<f64>()).collect();
    if let Some(i) = row_sq.iter().position(|&v| v == 0.0) {
        return Err(DiagnosticsError::ZeroRow(codes[i].to_string()));
    }
    let mut cosine_sum = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            let dot: f64 = m.row(i).iter().zip(m.row(j)).map(|(a, b)| a * b).sum();
            cosine_sum += dot / (row_sq[i] * row_sq[j]).sqrt();
        }
    }
    // Each unordered pair stands for two ordered pairs.
    let avg_row_cosine = (2.0 * cosine_sum / (nf * (nf - 1.0))).clamp(-1.0, 1.0);

    let off_diagonal = n * (n - 1);
    let positive: Vec<(usize, usize)> =
        (0..n).flat_map(|i| (0..n).map(move |j| (i, j))).filter(|&(i, j)| i != j && m[(i, j)] > 0.0).collect();
    let prop_pos = positive.len() as f64 / off_diagonal as f64;
    let mirrored = positive.iter().filter(|&&(i, j)| m[(j, i)] > 0.0).count() as f64;
    let reciprocity_pos = match reciprocity {
        ReciprocityDenominator::PositiveEntries => (!positive.is_empty()).then(|| mirrored / positive.len() as f64),
        ReciprocityDenominator::AllOffDiagonal => Some(mirrored / off_diagonal as f64),
    };
    let intra_family_pos = families.filter(|_| !positive.is_empty()).map(|fam| {
        let same = positive.iter().filter(|&&(i, j)| same_family(fam, codes[i], codes[j])).count();
        same as f64 / positive.len() as f64
    });

    Ok(DiagnosticsReport {
        n,
        rfd1,
        asym_rel,
        avg_row_cosine,
        rms,
        prop_pos,
        reciprocity_pos,
        intra_family_pos,
        reciprocity_denominator: reciprocity,
        excluded: (0..cltm.n()).filter(|&i| !cltm.row_valid[i]).map(|i| cltm.languages[i].code.clone()).collect(),
    })
}

pub fn same_family(families: &FamilyMap, a: &str, b: &str) -> bool {
    matches!((families.get(a), families.get(b)), (Some(x), Some(y)) if x == y)
}

/// Share of ordered off-diagonal pairs that fall within one family.
pub fn family_pair_base_rate(codes: &[&str], families: &FamilyMap) -> f64 {
    let n = codes.len();
    let same = (0..n)
        .flat_map(|i| (0..n).map(move |j| (i, j)))
        .filter(|&(i, j)| i != j && same_family(families, codes[i], codes[j]))
        .count();
    same as f64 / (n * (n - 1)) as f64
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RowProfile {
    pub language: String,
    pub row: Vec<f64>,
    pub mean: f64,
    /// Share of positive off-diagonal entries in the row.
    pub positive_fraction: f64,
}

/// Per-target donor profile for every valid row, in language order.
pub fn row_profiles(cltm: &Cltm) -> Vec<RowProfile> {
    let n = cltm.n();
    cltm.valid_indices()
        .into_iter()
        .map(|i| {
            let row = cltm.entries.row(i).to_vec();
            let mean = row.iter().sum::<f64>() / n as f64;
            let off = (0..n).filter(|&j| j != i);
            let positives = off.clone().filter(|&j| row[j] > 0.0).count();
            let positive_fraction = if n > 1 { positives as f64 / (n - 1) as f64 } else { 0.0 };
            RowProfile { language: cltm.languages[i].code.clone(), row, mean, positive_fraction }
        })
        .collect()
}
