//! Seed-level reliability of transfer-matrix entries.
//!
//! For each seed `s` the entry ratio is recomputed from that seed's own Base,
//! SelfAugmented and DonorAugmented values. Seeds whose per-seed self-gain is
//! not positive are dropped from the whole row. The standard error of an entry
//! is the sample standard deviation (n − 1) of its per-seed ratios divided by
//! the square root of the number of valid seeds.

use serde::Serialize;
use thiserror::Error;

use crate::matrix::SquareMatrix;
use crate::records::TransferGrid;
use crate::transfer::{Cltm, GainMatrix};

#[derive(Debug, Error, PartialEq)]
pub enum StabilityError {
    #[error("no valid seeds for {language}: every per-seed self-gain is <= 0")]
    NoValidSeeds { language: String },
    #[error("shape mismatch between samples ({samples}) and matrix ({matrix})")]
    ShapeMismatch { samples: usize, matrix: usize },
}

/// Per-seed ratios for every off-diagonal entry.
#[derive(Clone, Debug, PartialEq)]
pub struct SeedSamples {
    pub languages: Vec<String>,
    /// `ratios[i][j]` lists one ratio per valid seed of row `i` (empty on the diagonal).
    pub ratios: Vec<Vec<Vec<f64>>>,
    /// Per-seed self-gains of each row, valid or not, in seed order.
    pub self_gains: Vec<Vec<f64>>,
    pub valid_seed_counts: Vec<Vec<usize>>,
    pub seeds: Vec<u64>,
}

pub fn per_seed_cltm(grid: &TransferGrid) -> Result<SeedSamples, StabilityError> {
    let n = grid.n();
    let mut ratios = vec![vec![Vec::new(); n]; n];
    let mut self_gains = vec![Vec::new(); n];
    let mut valid_seed_counts = vec![vec![0; n]; n];
    for i in 0..n {
        let base = grid.base(i);
        let selfaug = grid.self_augmented(i);
        // Seeds are aligned across cells, so per-seed positions coincide.
        let gains: Vec<f64> = base.values.iter().zip(&selfaug.values).map(|(b, s)| s - b).collect();
        let valid: Vec<usize> = (0..gains.len()).filter(|&s| gains[s] > 0.0).collect();
        if valid.is_empty() {
            return Err(StabilityError::NoValidSeeds { language: grid.languages[i].code.clone() });
        }
        for j in (0..n).filter(|&j| j != i) {
            let donor = grid.donor_augmented(i, j);
            ratios[i][j] = valid.iter().map(|&s| (donor.values[s] - base.values[s]) / gains[s]).collect();
            valid_seed_counts[i][j] = valid.len();
        }
        valid_seed_counts[i][i] = valid.len();
        self_gains[i] = gains;
    }
    Ok(SeedSamples {
        languages: grid.languages.iter().map(|l| l.code.clone()).collect(),
        ratios,
        self_gains,
        valid_seed_counts,
        seeds: grid.seed_ids.clone(),
    })
}

/// Sample standard deviation with the n − 1 denominator; `None` below two samples.
pub fn sample_sd(values: &[f64]) -> Option<f64> {
    if values.len() < 2 {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    Some((values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt())
}

pub fn standard_error(values: &[f64]) -> Option<f64> {
    sample_sd(values).map(|sd| sd / (values.len() as f64).sqrt())
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mid = sorted.len() / 2;
    Some(if sorted.len().is_multiple_of(2) { (sorted[mid - 1] + sorted[mid]) / 2.0 } else { sorted[mid] })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SelfGainSummary {
    pub mean: f64,
    /// Spread of the per-language self-gains (n − 1).
    pub spread: Option<f64>,
    /// Spread across seeds of the language-averaged per-seed self-gain (n − 1).
    pub seed_spread: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StabilityReport {
    pub median_se: Option<f64>,
    pub mean_se: Option<f64>,
    pub rms: f64,
    pub self_gain: SelfGainSummary,
    /// `None` on the diagonal, for invalid rows, and for entries with < 2 valid seeds.
    pub per_entry_se: Vec<Vec<Option<f64>>>,
    pub valid_seed_counts: Vec<Vec<usize>>,
    /// Entries with fewer than two valid seeds, as `target/donor`.
    pub insufficient_seeds: Vec<String>,
}

impl StabilityReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }
}

pub fn stability_report(
    samples: &SeedSamples,
    cltm: &Cltm,
    gains: &GainMatrix,
) -> Result<StabilityReport, StabilityError> {
    let n = cltm.n();
    if samples.ratios.len() != n {
        return Err(StabilityError::ShapeMismatch { samples: samples.ratios.len(), matrix: n });
    }
    let mut per_entry_se = vec![vec![None; n]; n];
    let mut defined = Vec::new();
    let mut insufficient_seeds = Vec::new();
    for i in (0..n).filter(|&i| cltm.row_valid[i]) {
        for j in (0..n).filter(|&j| j != i) {
            match standard_error(&samples.ratios[i][j]) {
                Some(se) => {
                    per_entry_se[i][j] = Some(se);
                    defined.push(se);
                }
                None => insufficient_seeds.push(format!("{}/{}", samples.languages[i], samples.languages[j])),
            }
        }
    }

    let valid = cltm.valid_indices();
    let sub: SquareMatrix = cltm.entries.principal(&valid);
    let rms = if valid.is_empty() { f64::NAN } else { sub.frobenius() / valid.len() as f64 };

    let self_gains: Vec<f64> = valid.iter().map(|&i| gains.self_gain[i]).collect();
    let mean = self_gains.iter().sum::<f64>() / self_gains.len() as f64;
    let seed_count = samples.seeds.len();
    let per_seed_means: Vec<f64> = (0..seed_count)
        .map(|s| valid.iter().map(|&i| samples.self_gains[i][s]).sum::<f64>() / valid.len() as f64)
        .collect();

    Ok(StabilityReport {
        median_se: median(&defined),
        mean_se: (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64),
        rms,
        self_gain: SelfGainSummary { mean, spread: sample_sd(&self_gains), seed_spread: sample_sd(&per_seed_means) },
        per_entry_se,
        valid_seed_counts: samples.valid_seed_counts.clone(),
        insufficient_seeds,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::records::{aggregate_grid, Condition, LanguageId, PerformanceRecord};
    use crate::transfer::{assemble_cltm, compute_gains};

    fn rec(target: &str, condition: Condition, donor: Option<&str>, seed: u64, value: f64) -> PerformanceRecord {
        PerformanceRecord {
            target: target.into(),
            condition,
            donor: donor.map(Into::into),
            seed,
            value,
            metric: "auc".into(),
            sample_count: if condition == Condition::Base { 10 } else { 20 },
        }
    }

    /// Two languages; target "a" gets per-seed self-gain `sg[s]` and cross-gain `cg[s]`.
    fn grid(sg: &[f64], cg: &[f64]) -> TransferGrid {
        let mut recs = Vec::new();
        for s in 0..sg.len() {
            let seed = s as u64;
            recs.push(rec("a", Condition::Base, None, seed, 0.5));
            recs.push(rec("a", Condition::SelfAugmented, None, seed, 0.5 + sg[s]));
            recs.push(rec("a", Condition::DonorAugmented, Some("b"), seed, 0.5 + cg[s]));
            recs.push(rec("b", Condition::Base, None, seed, 0.4));
            recs.push(rec("b", Condition::SelfAugmented, None, seed, 0.6));
            recs.push(rec("b", Condition::DonorAugmented, Some("a"), seed, 0.5));
        }
        aggregate_grid(&recs, &[LanguageId::new("a"), LanguageId::new("b")], 10).unwrap()
    }

    #[test]
    fn ratio_samples_per_seed() {
        let samples = per_seed_cltm(&grid(&[0.1, 0.1, 0.1], &[0.04, 0.05, 0.06])).unwrap();
        let r = &samples.ratios[0][1];
        for (got, want) in r.iter().zip([0.4, 0.5, 0.6]) {
            assert!((got - want).abs() < 1e-12);
        }
        assert!(samples.ratios[0][0].is_empty());
    }

    #[test]
    fn nonpositive_seed_excluded() {
        let samples = per_seed_cltm(&grid(&[0.1, -0.01, 0.1], &[0.04, 0.05, 0.06])).unwrap();
        assert_eq!(samples.ratios[0][1].len(), 2);
        assert_eq!(samples.valid_seed_counts[0][1], 2);
        assert_eq!(samples.valid_seed_counts[1][0], 3);
    }

    #[test]
    fn all_seeds_invalid_is_error() {
        let err = per_seed_cltm(&grid(&[0.0, -0.1], &[0.04, 0.05])).unwrap_err();
        assert_eq!(err, StabilityError::NoValidSeeds { language: "a".into() });
    }

    #[test]
    fn identical_seeds_reproduce_headline() {
        let g = grid(&[0.2, 0.2], &[0.1, 0.1]);
        let samples = per_seed_cltm(&g).unwrap();
        let gains = compute_gains(&g);
        let cltm = assemble_cltm(&gains, true).unwrap();
        for &r in &samples.ratios[0][1] {
            assert!((r - cltm.entries[(0, 1)]).abs() < 1e-12);
        }
        let report = stability_report(&samples, &cltm, &gains).unwrap();
        assert_eq!(report.median_se, Some(0.0));
        assert_eq!(report.mean_se, Some(0.0));
    }

    #[test]
    fn se_of_three_samples() {
        let se = standard_error(&[0.4, 0.5, 0.6]).unwrap();
        assert!((se - 0.057_735_026_918_962_57).abs() < 1e-12);
        assert!((sample_sd(&[0.4, 0.5, 0.6]).unwrap() - 0.1).abs() < 1e-12);
    }

    #[test]
    fn self_gain_mean() {
        // self gains: a = 0.2, b = 0.4
        let mut recs = Vec::new();
        for seed in 0..2 {
            recs.push(rec("a", Condition::Base, None, seed, 0.5));
            recs.push(rec("a", Condition::SelfAugmented, None, seed, 0.7));
            recs.push(rec("a", Condition::DonorAugmented, Some("b"), seed, 0.6 + 0.01 * seed as f64));
            recs.push(rec("b", Condition::Base, None, seed, 0.2));
            recs.push(rec("b", Condition::SelfAugmented, None, seed, 0.6));
            recs.push(rec("b", Condition::DonorAugmented, Some("a"), seed, 0.3));
        }
        let g = aggregate_grid(&recs, &[LanguageId::new("a"), LanguageId::new("b")], 10).unwrap();
        let gains = compute_gains(&g);
        let cltm = assemble_cltm(&gains, true).unwrap();
        let report = stability_report(&per_seed_cltm(&g).unwrap(), &cltm, &gains).unwrap();
        assert!((report.self_gain.mean - 0.3).abs() < 1e-12);
        assert!(report.per_entry_se[0][0].is_none());
        assert!(report.per_entry_se[0][1].unwrap() > 0.0);
    }

    #[test]
    fn single_seed_marks_insufficient() {
        let g = grid(&[0.2], &[0.1]);
        let gains = compute_gains(&g);
        let cltm = assemble_cltm(&gains, true).unwrap();
        let report = stability_report(&per_seed_cltm(&g).unwrap(), &cltm, &gains).unwrap();
        assert_eq!(report.insufficient_seeds, vec!["a/b".to_string(), "b/a".to_string()]);
        assert_eq!(report.median_se, None);
    }

    #[test]
    fn median_even_and_odd() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), Some(2.5));
        assert_eq!(median(&[]), None);
    }
}
