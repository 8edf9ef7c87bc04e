//! Synthetic multilingual experiments with planted transfer structure.
//!
//! Language `i` follows a logistic learning curve `L_i` over log sample count.
//! A donor `j` contributes `N * T[i][j]` effective target samples, so
//!
//! ```text
//! Base            = L_i(N)
//! SelfAugmented   = L_i(2N)
//! DonorAugmented  = L_i(N (1 + T[i][j]))
//! G[i][j]         = (L_i(N (1 + T[i][j])) - L_i(N)) / (L_i(2N) - L_i(N))
//! ```
//!
//! and `G` is the exact transfer matrix a noiseless run must recover.
//! Observation noise is Gaussian per record, drawn from the SplitMix64 stream
//! keyed by `(master_seed, target, condition, donor or "", seed)`; see
//! [`crate::rng`] for the derivation.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::curves::Logistic;
use crate::matrix::SquareMatrix;
use crate::records::{Condition, LanguageId, PerformanceRecord};
use crate::rng::StreamKey;

/// Self-gains below this are treated as a saturated curve.
pub const MIN_SELF_GAIN: f64 = 1e-12;
/// Fixed seed for the per-language parameters of the shipped presets.
const PRESET_SEED: u64 = 0x5EED_C17A;

#[derive(Debug, Error, PartialEq)]
pub enum SynthError {
    #[error("transfer coefficient T[{i}][{j}] = {value} must be finite and > -1")]
    InvalidTransfer { i: usize, j: usize, value: f64 },
    #[error("T[{0}][{0}] must be 1")]
    NonUnitDiagonal(usize),
    #[error("noise_sd must be finite and >= 0, got {0}")]
    InvalidNoise(f64),
    #[error("curve for {0} must have a > 0 and k > 0")]
    InvalidCurve(String),
    #[error("shape mismatch: {languages} languages, {curves} curves, {transfer}x{transfer} transfer matrix")]
    Shape { languages: usize, curves: usize, transfer: usize },
    #[error("n_samples and seed_count must be positive")]
    ZeroSize,
    #[error("saturated curve for {language}: L(2N) - L(N) = {gain}")]
    Saturated { language: String, gain: f64 },
    #[error("malformed truth file: {0}")]
    Malformed(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticTruth {
    pub languages: Vec<LanguageId>,
    pub curves: Vec<Logistic>,
    pub transfer: SquareMatrix,
    pub noise_sd: f64,
    pub n_samples: u64,
    pub seed_count: u64,
    #[serde(default = "default_metric")]
    pub metric: String,
}

fn default_metric() -> String {
    "auc".to_string()
}

impl SyntheticTruth {
    pub fn validate(&self) -> Result<(), SynthError> {
        let n = self.languages.len();
        if self.curves.len() != n || self.transfer.n() != n {
            return Err(SynthError::Shape { languages: n, curves: self.curves.len(), transfer: self.transfer.n() });
        }
        if self.n_samples == 0 || self.seed_count == 0 {
            return Err(SynthError::ZeroSize);
        }
        if !(self.noise_sd.is_finite() && self.noise_sd >= 0.0) {
            return Err(SynthError::InvalidNoise(self.noise_sd));
        }
        for (lang, c) in self.languages.iter().zip(&self.curves) {
            if !(c.a > 0.0 && c.k > 0.0 && c.b.is_finite() && c.x0.is_finite() && c.a.is_finite() && c.k.is_finite()) {
                return Err(SynthError::InvalidCurve(lang.code.clone()));
            }
        }
        for i in 0..n {
            for j in 0..n {
                let value = self.transfer[(i, j)];
                if i == j {
                    if value != 1.0 {
                        return Err(SynthError::NonUnitDiagonal(i));
                    }
                } else if !(value.is_finite() && value > -1.0) {
                    return Err(SynthError::InvalidTransfer { i, j, value });
                }
            }
        }
        Ok(())
    }

    pub fn from_json(content: &str) -> Result<Self, SynthError> {
        let truth: SyntheticTruth = serde_json::from_str(content).map_err(|e| SynthError::Malformed(e.to_string()))?;
        truth.validate()?;
        Ok(truth)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("truth serializes") + "\n"
    }

    fn noiseless(&self, target: usize, condition: Condition, donor: Option<usize>) -> f64 {
        let n = self.n_samples as f64;
        let curve = &self.curves[target];
        match (condition, donor) {
            (Condition::Base, _) => curve.at(n),
            (Condition::SelfAugmented, _) => curve.at(2.0 * n),
            (Condition::DonorAugmented, Some(j)) => curve.at(n * (1.0 + self.transfer[(target, j)])),
            (Condition::DonorAugmented, None) => unreachable!("donor cells carry a donor"),
        }
    }
}

fn condition_tag(c: Condition) -> u64 {
    match c {
        Condition::Base => 0,
        Condition::SelfAugmented => 1,
        Condition::DonorAugmented => 2,
    }
}

/// Emits one record per (target, condition, donor, seed), ordered by target,
/// then Base, SelfAugmented, donors in language order, then seed.
pub fn generate_experiment(truth: &SyntheticTruth, master_seed: u64) -> Result<Vec<PerformanceRecord>, SynthError> {
    truth.validate()?;
    let n = truth.languages.len();
    let mut cells: Vec<(usize, Condition, Option<usize>)> = Vec::with_capacity(n * (n + 1));
    for i in 0..n {
        cells.push((i, Condition::Base, None));
        cells.push((i, Condition::SelfAugmented, None));
        cells.extend((0..n).filter(|&j| j != i).map(|j| (i, Condition::DonorAugmented, Some(j))));
    }
    let mut out = Vec::with_capacity(cells.len() * truth.seed_count as usize);
    for (i, condition, donor) in cells {
        let target = &truth.languages[i].code;
        let donor_code = donor.map(|j| truth.languages[j].code.clone());
        let clean = truth.noiseless(i, condition, donor);
        for seed in 0..truth.seed_count {
            let mut value = clean;
            if truth.noise_sd > 0.0 {
                let mut stream = StreamKey::new(master_seed)
                    .with_str(target)
                    .with_u64(condition_tag(condition))
                    .with_str(donor_code.as_deref().unwrap_or(""))
                    .with_u64(seed)
                    .stream();
                value += truth.noise_sd * stream.next_gaussian();
            }
            out.push(PerformanceRecord {
                target: target.clone(),
                condition,
                donor: donor_code.clone(),
                seed,
                value,
                metric: truth.metric.clone(),
                sample_count: if condition == Condition::Base { truth.n_samples } else { 2 * truth.n_samples },
            });
        }
    }
    Ok(out)
}

/// Exact transfer matrix implied by the curves and coefficients.
pub fn planted_truth(truth: &SyntheticTruth) -> Result<SquareMatrix, SynthError> {
    truth.validate()?;
    let n = truth.languages.len();
    let mut g = SquareMatrix::zeros(n);
    for i in 0..n {
        let base = truth.noiseless(i, Condition::Base, None);
        let gain = truth.noiseless(i, Condition::SelfAugmented, None) - base;
        if !(gain >= MIN_SELF_GAIN) {
            return Err(SynthError::Saturated { language: truth.languages[i].code.clone(), gain });
        }
        for j in 0..n {
            g[(i, j)] =
                if i == j { 1.0 } else { (truth.noiseless(i, Condition::DonorAugmented, Some(j)) - base) / gain };
        }
    }
    Ok(g)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    /// Positive transfer inside families, negative across them.
    Block,
    /// Near-uniform transfer close to 1 everywhere.
    Flat,
}

impl std::str::FromStr for Preset {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "block" => Ok(Preset::Block),
            "flat" => Ok(Preset::Flat),
            other => Err(format!("unknown preset {other:?} (expected block or flat)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PresetConfig {
    pub preset: Preset,
    pub languages: usize,
    pub seed_count: u64,
    pub noise_sd: f64,
    pub n_samples: u64,
}

impl PresetConfig {
    /// Default block noise gives a median per-entry standard error of about 0.1 with 10 seeds.
    pub const BLOCK_NOISE_SD: f64 = 0.017;
    pub const FLAT_NOISE_SD: f64 = 0.005;

    pub fn new(preset: Preset) -> Self {
        match preset {
            Preset::Block => {
                Self { preset, languages: 8, seed_count: 10, noise_sd: Self::BLOCK_NOISE_SD, n_samples: 1000 }
            }
            Preset::Flat => Self { preset, languages: 8, seed_count: 10, noise_sd: Self::FLAT_NOISE_SD, n_samples: 60 },
        }
    }
}

const FAMILY_NAMES: [&str; 8] = ["fam_a", "fam_b", "fam_c", "fam_d", "fam_e", "fam_f", "fam_g", "fam_h"];
pub const FAMILY_SIZE: usize = 3;

/// Builds the truth for a shipped preset. Languages are `L01`, `L02`, ...;
/// consecutive groups of three share a family. Curve parameters and transfer
/// coefficients come from a fixed stream, so a config always yields the same truth.
pub fn preset_truth(config: &PresetConfig) -> Result<SyntheticTruth, SynthError> {
    let n = config.languages;
    if n < 2 || n > FAMILY_SIZE * FAMILY_NAMES.len() {
        return Err(SynthError::Shape { languages: n, curves: n, transfer: n });
    }
    let languages: Vec<LanguageId> =
        (0..n).map(|i| LanguageId::with_family(format!("L{:02}", i + 1), FAMILY_NAMES[i / FAMILY_SIZE])).collect();
    let log_n = (config.n_samples as f64).ln();
    let curves = (0..n)
        .map(|i| {
            let mut s = StreamKey::new(PRESET_SEED).with_str("curve").with_u64(i as u64).stream();
            Logistic {
                a: 0.45 + 0.1 * s.next_f64(),
                b: 0.35 + 0.1 * s.next_f64(),
                k: 1.2 + 0.4 * s.next_f64(),
                x0: log_n + 0.2 + 0.3 * s.next_f64(),
            }
        })
        .collect();
    let transfer = SquareMatrix::from_fn(n, |i, j| {
        if i == j {
            return 1.0;
        }
        let u =
            StreamKey::new(PRESET_SEED).with_str("transfer").with_u64(i as u64).with_u64(j as u64).stream().next_f64();
        match config.preset {
            Preset::Block if i / FAMILY_SIZE == j / FAMILY_SIZE => 0.5 + 0.9 * u,
            Preset::Block => -0.75 + 0.5 * u,
            Preset::Flat => 0.85 + 0.3 * u,
        }
    });
    let truth = SyntheticTruth {
        languages,
        curves,
        transfer,
        noise_sd: config.noise_sd,
        n_samples: config.n_samples,
        seed_count: config.seed_count,
        metric: default_metric(),
    };
    truth.validate()?;
    Ok(truth)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::records::aggregate_grid;
    use crate::transfer::{assemble_cltm, compute_gains};

    fn two_language_truth(t01: f64) -> SyntheticTruth {
        let curve = Logistic { a: 1.0, b: 0.0, k: 1.0, x0: 100f64.ln() };
        let mut transfer = SquareMatrix::filled(2, 1.0);
        transfer[(0, 1)] = t01;
        SyntheticTruth {
            languages: vec![LanguageId::new("de"), LanguageId::new("pt")],
            curves: vec![curve, curve],
            transfer,
            noise_sd: 0.0,
            n_samples: 50,
            seed_count: 2,
            metric: "auc".into(),
        }
    }

    fn recovered(truth: &SyntheticTruth) -> SquareMatrix {
        let recs = generate_experiment(truth, 1).unwrap();
        let grid = aggregate_grid(&recs, &truth.languages, truth.n_samples).unwrap();
        assemble_cltm(&compute_gains(&grid), true).unwrap().entries
    }

    #[test]
    fn donor_equal_to_self() {
        let t = two_language_truth(1.0);
        let recs = generate_experiment(&t, 3).unwrap();
        let selfaug = recs.iter().find(|r| r.condition == Condition::SelfAugmented && r.target == "de").unwrap();
        let donor = recs.iter().find(|r| r.condition == Condition::DonorAugmented && r.target == "de").unwrap();
        assert_eq!(selfaug.value, donor.value);
        assert_eq!(recovered(&t)[(0, 1)], 1.0);
    }

    #[test]
    fn inert_donor() {
        assert_eq!(recovered(&two_language_truth(0.0))[(0, 1)], 0.0);
    }

    #[test]
    fn analytic_entry() {
        // L(n) = 1 / (1 + 100 / n): (3/7 - 1/3) / (1/2 - 1/3) = 4/7.
        let t = two_language_truth(0.5);
        let g = planted_truth(&t).unwrap();
        assert!((g[(0, 1)] - 4.0 / 7.0).abs() < 1e-12);
        assert_eq!(g[(0, 0)], 1.0);
        assert!((recovered(&t)[(0, 1)] - 4.0 / 7.0).abs() < 1e-12);
    }

    #[test]
    fn all_ones_and_identity_transfer() {
        let mut t = two_language_truth(1.0);
        t.transfer = SquareMatrix::filled(2, 1.0);
        assert_eq!(planted_truth(&t).unwrap(), SquareMatrix::filled(2, 1.0));
        t.transfer = SquareMatrix::from_fn(2, |i, j| if i == j { 1.0 } else { 0.0 });
        assert_eq!(planted_truth(&t).unwrap(), t.transfer);
    }

    #[test]
    fn invalid_inputs() {
        assert!(matches!(generate_experiment(&two_language_truth(-1.0), 0), Err(SynthError::InvalidTransfer { .. })));
        let mut t = two_language_truth(0.5);
        t.noise_sd = -0.1;
        assert_eq!(generate_experiment(&t, 0).unwrap_err(), SynthError::InvalidNoise(-0.1));
        let mut t = two_language_truth(0.5);
        t.curves[1].a = 1e-20;
        assert!(matches!(planted_truth(&t), Err(SynthError::Saturated { .. })));
    }

    #[test]
    fn deterministic_output() {
        let mut t = two_language_truth(0.5);
        t.noise_sd = 0.01;
        assert_eq!(generate_experiment(&t, 9).unwrap(), generate_experiment(&t, 9).unwrap());
        assert_ne!(generate_experiment(&t, 9).unwrap(), generate_experiment(&t, 10).unwrap());
    }

    #[test]
    fn presets_have_expected_signs() {
        let block = preset_truth(&PresetConfig::new(Preset::Block)).unwrap();
        let g = planted_truth(&block).unwrap();
        for i in 0..8 {
            for j in (0..8).filter(|&j| j != i) {
                let same = i / FAMILY_SIZE == j / FAMILY_SIZE;
                assert_eq!(g[(i, j)] > 0.0, same, "G[{i}][{j}] = {}", g[(i, j)]);
            }
        }
        let flat = preset_truth(&PresetConfig::new(Preset::Flat)).unwrap();
        let g = planted_truth(&flat).unwrap();
        assert!(g.to_rows().iter().flatten().all(|&v| (0.7..1.3).contains(&v)));
    }

    #[test]
    fn truth_json_round_trip() {
        let t = preset_truth(&PresetConfig::new(Preset::Block)).unwrap();
        assert_eq!(SyntheticTruth::from_json(&t.to_json()).unwrap(), t);
    }
}
