//! Brute-force reference evaluations used as test oracles. Nothing here calls
//! into the library's computation paths.

#![allow(dead_code, clippy::needless_range_loop)]

use std::collections::BTreeMap;

/// Reference values for one matrix, from plain loops over nested rows.
#[derive(Debug, Clone)]
pub struct OracleDiagnostics {
    pub rfd1: f64,
    pub asym_rel: f64,
    pub avg_row_cosine: f64,
    pub rms: f64,
    pub prop_pos: f64,
    pub reciprocity_pos: Option<f64>,
    pub intra_family_pos: Option<f64>,
}

pub fn oracle_diagnostics(m: &[Vec<f64>], families: Option<&[&str]>) -> OracleDiagnostics {
    let n = m.len();
    let mut dev = 0.0;
    let mut asym = 0.0;
    let mut total = 0.0;
    for i in 0..n {
        for j in 0..n {
            dev += (m[i][j] - 1.0) * (m[i][j] - 1.0);
            asym += (m[i][j] - m[j][i]) * (m[i][j] - m[j][i]);
            total += m[i][j] * m[i][j];
        }
    }
    let mut cos = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let mut dot = 0.0;
            let mut ni = 0.0;
            let mut nj = 0.0;
            for k in 0..n {
                dot += m[i][k] * m[j][k];
                ni += m[i][k] * m[i][k];
                nj += m[j][k] * m[j][k];
            }
            cos += dot / (ni.sqrt() * nj.sqrt());
        }
    }
    let mut positive = 0usize;
    let mut mirrored = 0usize;
    let mut same_family = 0usize;
    for i in 0..n {
        for j in 0..n {
            if i != j && m[i][j] > 0.0 {
                positive += 1;
                if m[j][i] > 0.0 {
                    mirrored += 1;
                }
                if let Some(f) = families {
                    if f[i] == f[j] {
                        same_family += 1;
                    }
                }
            }
        }
    }
    let nf = n as f64;
    OracleDiagnostics {
        rfd1: dev.sqrt() / nf,
        asym_rel: asym.sqrt() / total.sqrt(),
        avg_row_cosine: cos / (nf * (nf - 1.0)),
        rms: total.sqrt() / nf,
        prop_pos: positive as f64 / (n * (n - 1)) as f64,
        reciprocity_pos: if positive > 0 { Some(mirrored as f64 / positive as f64) } else { None },
        intra_family_pos: match families {
            Some(_) if positive > 0 => Some(same_family as f64 / positive as f64),
            _ => None,
        },
    }
}

/// AUC by enumerating every positive/negative pair with half credit for ties.
pub fn oracle_auc(pos: &[f64], neg: &[f64]) -> f64 {
    let mut credit = 0.0;
    for &p in pos {
        for &q in neg {
            if p > q {
                credit += 1.0;
            } else if p == q {
                credit += 0.5;
            }
        }
    }
    credit / (pos.len() * neg.len()) as f64
}

/// Macro-F1 from an explicit confusion matrix with precision/recall formulas.
pub fn oracle_macro_f1(truths: &[usize], preds: &[usize], classes: usize) -> f64 {
    let mut confusion = vec![vec![0usize; classes]; classes];
    for (&t, &p) in truths.iter().zip(preds) {
        confusion[t][p] += 1;
    }
    let mut total = 0.0;
    for c in 0..classes {
        let tp = confusion[c][c] as f64;
        let predicted: f64 = (0..classes).map(|t| confusion[t][c] as f64).sum();
        let actual: f64 = confusion[c].iter().map(|&v| v as f64).sum();
        let precision = if predicted > 0.0 { tp / predicted } else { 0.0 };
        let recall = if actual > 0.0 { tp / actual } else { 0.0 };
        total += if precision + recall > 0.0 { 2.0 * precision * recall / (precision + recall) } else { 0.0 };
    }
    total / classes as f64
}

/// Counts (positives, negatives) of the gender-controlled protocol by
/// enumerating ordered pairs and halving.
pub fn oracle_trial_counts(speakers: &[&str], genders: &[&str]) -> (usize, usize) {
    let n = speakers.len();
    let (mut pos, mut neg) = (0, 0);
    for a in 0..n {
        for b in 0..n {
            if a == b {
                continue;
            }
            if speakers[a] == speakers[b] {
                pos += 1;
            } else if genders[a] == genders[b] {
                neg += 1;
            }
        }
    }
    (pos / 2, neg / 2)
}

/// Relative error with an absolute floor for values near zero.
pub fn close(got: f64, want: f64, rel: f64) -> bool {
    let diff = (got - want).abs();
    diff <= rel * got.abs().max(want.abs()) || diff <= 1e-12
}

pub fn family_labels(n: usize, group: usize) -> Vec<String> {
    (0..n).map(|i| format!("f{}", i / group)).collect()
}

pub fn family_map(codes: &[String], families: &[String]) -> BTreeMap<String, String> {
    codes.iter().cloned().zip(families.iter().cloned()).collect()
}

/// Small xorshift generator for test fixtures, independent of the library's streams.
pub struct TestRng(u64);

impl TestRng {
    pub fn new(seed: u64) -> Self {
        Self(seed.wrapping_mul(0x2545_F491_4F6C_DD1D) | 1)
    }

    pub fn next_u64(&mut self) -> u64 {
        let mut x = self.0;
        x ^= x << 13;
        x ^= x >> 7;
        x ^= x << 17;
        self.0 = x;
        x
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * ((self.next_u64() >> 11) as f64 / (1u64 << 53) as f64)
    }

    pub fn below(&mut self, n: usize) -> usize {
        (self.next_u64() % n as u64) as usize
    }
}

/// Random matrix with unit diagonal and off-diagonal entries uniform in [lo, hi].
pub fn random_unit_diagonal(rng: &mut TestRng, n: usize, lo: f64, hi: f64) -> Vec<Vec<f64>> {
    (0..n).map(|i| (0..n).map(|j| if i == j { 1.0 } else { rng.uniform(lo, hi) }).collect()).collect()
}

use cltm_core::records::{Condition, PerformanceRecord};

/// Records for a full grid. `value(target, condition, donor, seed)` supplies each value.
pub fn grid_records(
    codes: &[String],
    seeds: &[u64],
    n_samples: u64,
    mut value: impl FnMut(usize, Condition, Option<usize>, u64) -> f64,
) -> Vec<PerformanceRecord> {
    let mut out = Vec::new();
    for i in 0..codes.len() {
        let mut cells = vec![(Condition::Base, None), (Condition::SelfAugmented, None)];
        cells.extend((0..codes.len()).filter(|&j| j != i).map(|j| (Condition::DonorAugmented, Some(j))));
        for (condition, donor) in cells {
            for &seed in seeds {
                out.push(PerformanceRecord {
                    target: codes[i].clone(),
                    condition,
                    donor: donor.map(|j: usize| codes[j].clone()),
                    seed,
                    value: value(i, condition, donor, seed),
                    metric: "auc".into(),
                    sample_count: if condition == Condition::Base { n_samples } else { 2 * n_samples },
                });
            }
        }
    }
    out
}

pub fn codes(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("x{i:02}")).collect()
}
