//! Experiment records: parsing performance logs, aggregating them over seeds
//! into a complete [`TransferGrid`], and checking training-set balance.
//!
//! Record files are CSV with the fixed header
//! `target,condition,donor,seed,value,metric,sample_count` (empty donor for
//! `Base`/`SelfAugmented`), or JSON lines carrying the same field names.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const RECORD_HEADER: [&str; 7] = ["target", "condition", "donor", "seed", "value", "metric", "sample_count"];

/// Metrics whose values are expected to lie in [0, 1].
const UNIT_INTERVAL_METRICS: [&str; 2] = ["macro_f1", "auc"];

#[derive(Debug, Error, PartialEq)]
pub enum RecordError {
    #[error("line {line}: {message}")]
    Malformed { line: u64, message: String },
    #[error("line {line}: donor forbidden for {condition}")]
    DonorForbidden { line: u64, condition: Condition },
    #[error("line {line}: donor required for DonorAugmented")]
    DonorMissing { line: u64 },
    #[error("line {line}: donor equals target ({target})")]
    DonorIsTarget { line: u64, target: String },
    #[error("line {line}: value is not finite")]
    NonFiniteValue { line: u64 },
    #[error("line {line}: duplicate record key {key}")]
    DuplicateKey { line: u64, key: String },
    #[error("unknown language {0}")]
    UnknownLanguage(String),
    #[error("duplicate language code {0}")]
    DuplicateLanguage(String),
    #[error("at least two languages are required, got {0}")]
    TooFewLanguages(usize),
    #[error("n_samples must be positive")]
    ZeroSamples,
    #[error("mixed metrics in one grid: {0} and {1}")]
    MixedMetrics(String, String),
    #[error("sample_count {found} for {key}, expected {expected}")]
    SampleCount { key: String, found: u64, expected: u64 },
    #[error("missing cell ({0})")]
    MissingCell(String),
    #[error("duplicate seed {seed} in cell ({cell})")]
    DuplicateSeed { cell: String, seed: u64 },
    #[error("seed sets misaligned: cell ({cell}) has {found:?}, expected {expected:?}")]
    SeedsMisaligned { cell: String, found: Vec<u64>, expected: Vec<u64> },
    #[error("no records")]
    Empty,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Condition {
    Base,
    SelfAugmented,
    DonorAugmented,
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Condition::Base => "Base",
            Condition::SelfAugmented => "SelfAugmented",
            Condition::DonorAugmented => "DonorAugmented",
        })
    }
}

impl FromStr for Condition {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "Base" => Ok(Condition::Base),
            "SelfAugmented" => Ok(Condition::SelfAugmented),
            "DonorAugmented" => Ok(Condition::DonorAugmented),
            other => Err(format!("unknown condition {other:?}")),
        }
    }
}

/// A language code with an optional family label.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct LanguageId {
    pub code: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub family: Option<String>,
}

impl LanguageId {
    pub fn new(code: impl Into<String>) -> Self {
        Self { code: code.into(), family: None }
    }

    pub fn with_family(code: impl Into<String>, family: impl Into<String>) -> Self {
        Self { code: code.into(), family: Some(family.into()) }
    }
}

impl fmt::Display for LanguageId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.code)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerformanceRecord {
    pub target: String,
    pub condition: Condition,
    pub donor: Option<String>,
    pub seed: u64,
    pub value: f64,
    pub metric: String,
    pub sample_count: u64,
}

impl PerformanceRecord {
    /// Uniqueness key. The sample count is part of it so learning-curve files
    /// may repeat a seed across training sizes.
    pub fn key(&self) -> (String, Condition, Option<String>, u64, u64) {
        (self.target.clone(), self.condition, self.donor.clone(), self.seed, self.sample_count)
    }

    fn describe_key(&self) -> String {
        format!("({}, {}, {}, seed {})", self.target, self.condition, self.donor.as_deref().unwrap_or("-"), self.seed)
    }

    fn check(&self, line: u64) -> Result<(), RecordError> {
        if self.target.is_empty() {
            return Err(RecordError::Malformed { line, message: "empty target".into() });
        }
        if !self.value.is_finite() {
            return Err(RecordError::NonFiniteValue { line });
        }
        if self.sample_count == 0 {
            return Err(RecordError::Malformed { line, message: "sample_count must be positive".into() });
        }
        match (self.condition, self.donor.as_deref()) {
            (Condition::DonorAugmented, None) => Err(RecordError::DonorMissing { line }),
            (Condition::DonorAugmented, Some(d)) if d == self.target => {
                Err(RecordError::DonorIsTarget { line, target: d.to_string() })
            }
            (c @ (Condition::Base | Condition::SelfAugmented), Some(_)) => {
                Err(RecordError::DonorForbidden { line, condition: c })
            }
            _ => Ok(()),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RecordFormat {
    Csv,
    JsonLines,
}

impl RecordFormat {
    /// Guess from a file name: `.jsonl`/`.ndjson`/`.json` are JSON lines, anything else CSV.
    pub fn from_path(path: &str) -> Self {
        let lower = path.to_ascii_lowercase();
        if [".jsonl", ".ndjson", ".json"].iter().any(|ext| lower.ends_with(ext)) {
            RecordFormat::JsonLines
        } else {
            RecordFormat::Csv
        }
    }
}

#[derive(Deserialize)]
struct RawRecord {
    target: String,
    condition: String,
    #[serde(default)]
    donor: Option<String>,
    seed: u64,
    value: f64,
    metric: String,
    sample_count: u64,
}

impl RawRecord {
    fn into_record(self, line: u64) -> Result<PerformanceRecord, RecordError> {
        let condition = self.condition.parse().map_err(|message| RecordError::Malformed { line, message })?;
        Ok(PerformanceRecord {
            target: self.target,
            condition,
            donor: self.donor.filter(|d| !d.is_empty()),
            seed: self.seed,
            value: self.value,
            metric: self.metric,
            sample_count: self.sample_count,
        })
    }
}

/// Parses a record file, validating every record and rejecting duplicate keys.
pub fn ingest_records(content: &str, format: RecordFormat) -> Result<Vec<PerformanceRecord>, RecordError> {
    let parsed = match format {
        RecordFormat::Csv => parse_csv(content)?,
        RecordFormat::JsonLines => parse_jsonl(content)?,
    };
    let mut seen = HashSet::new();
    let mut records = Vec::with_capacity(parsed.len());
    for (line, record) in parsed {
        record.check(line)?;
        if !seen.insert(record.key()) {
            return Err(RecordError::DuplicateKey { line, key: record.describe_key() });
        }
        records.push(record);
    }
    for warning in value_range_warnings(&records) {
        log::warn!("{warning}");
    }
    Ok(records)
}

fn parse_csv(content: &str) -> Result<Vec<(u64, PerformanceRecord)>, RecordError> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(content.as_bytes());
    let header = reader.headers().map_err(|e| RecordError::Malformed { line: 1, message: e.to_string() })?.clone();
    if header.iter().map(str::trim).ne(RECORD_HEADER.iter().copied()) {
        return Err(RecordError::Malformed {
            line: 1,
            message: format!("expected header {:?}", RECORD_HEADER.join(",")),
        });
    }
    let mut out = Vec::new();
    for row in reader.deserialize::<RawRecord>() {
        let row = row.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            RecordError::Malformed { line, message: e.to_string() }
        })?;
        // Line numbers are 1-based with the header on line 1.
        let line = out.len() as u64 + 2;
        out.push((line, row.into_record(line)?));
    }
    Ok(out)
}

fn parse_jsonl(content: &str) -> Result<Vec<(u64, PerformanceRecord)>, RecordError> {
    let mut out = Vec::new();
    for (idx, text) in content.lines().enumerate() {
        let line = idx as u64 + 1;
        if text.trim().is_empty() {
            continue;
        }
        let raw: RawRecord =
            serde_json::from_str(text).map_err(|e| RecordError::Malformed { line, message: e.to_string() })?;
        out.push((line, raw.into_record(line)?));
    }
    Ok(out)
}

/// Writes records in the given format; `ingest_records` reads the output back unchanged.
pub fn serialize_records(records: &[PerformanceRecord], format: RecordFormat) -> String {
    let mut out = String::new();
    match format {
        RecordFormat::Csv => {
            out.push_str(&RECORD_HEADER.join(","));
            out.push('\n');
            for r in records {
                let fields = [
                    csv_field(&r.target),
                    r.condition.to_string(),
                    csv_field(r.donor.as_deref().unwrap_or("")),
                    r.seed.to_string(),
                    format_float(r.value),
                    csv_field(&r.metric),
                    r.sample_count.to_string(),
                ];
                out.push_str(&fields.join(","));
                out.push('\n');
            }
        }
        RecordFormat::JsonLines => {
            for r in records {
                let line = serde_json::json!({
                    "target": r.target,
                    "condition": r.condition,
                    "donor": r.donor,
                    "seed": r.seed,
                    "value": r.value,
                    "metric": r.metric,
                    "sample_count": r.sample_count,
                });
                out.push_str(&line.to_string());
                out.push('\n');
            }
        }
    }
    out
}

/// Shortest representation that parses back to the same `f64`.
pub fn format_float(v: f64) -> String {
    let s = format!("{v:?}");
    s.strip_suffix(".0").map(str::to_string).unwrap_or(s)
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Warnings for values outside [0, 1] under metrics that are bounded there.
pub fn value_range_warnings(records: &[PerformanceRecord]) -> Vec<String> {
    records
        .iter()
        .filter(|r| UNIT_INTERVAL_METRICS.contains(&r.metric.as_str()) && !(0.0..=1.0).contains(&r.value))
        .map(|r| format!("{} value {} outside [0, 1] for {}", r.metric, r.value, r.describe_key()))
        .collect()
}

/// Parses a `code,family` CSV (header required, family may be empty) into an
/// ordered language list.
pub fn parse_language_list(content: &str) -> Result<Vec<LanguageId>, RecordError> {
    let mut reader =
        csv::ReaderBuilder::new().has_headers(true).flexible(true).trim(csv::Trim::All).from_reader(content.as_bytes());
    let mut out: Vec<LanguageId> = Vec::new();
    for (idx, row) in reader.records().enumerate() {
        let line = idx as u64 + 2;
        let row = row.map_err(|e| RecordError::Malformed { line, message: e.to_string() })?;
        let code = row.get(0).unwrap_or("").to_string();
        if code.is_empty() {
            return Err(RecordError::Malformed { line, message: "empty language code".into() });
        }
        if out.iter().any(|l| l.code == code) {
            return Err(RecordError::DuplicateLanguage(code));
        }
        let family = row.get(1).filter(|f| !f.is_empty()).map(str::to_string);
        out.push(LanguageId { code, family });
    }
    Ok(out)
}

/// Family lookup keyed by language code.
pub type FamilyMap = BTreeMap<String, String>;

pub fn family_map(languages: &[LanguageId]) -> FamilyMap {
    languages.iter().filter_map(|l| l.family.clone().map(|f| (l.code.clone(), f))).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CellKey {
    pub target: usize,
    pub condition: Condition,
    pub donor: Option<usize>,
}

/// Per-seed values of one experimental condition, sorted by seed.
#[derive(Clone, Debug, PartialEq)]
pub struct Cell {
    pub seeds: Vec<u64>,
    pub values: Vec<f64>,
    pub mean: f64,
}

impl Cell {
    pub fn value_for_seed(&self, seed: u64) -> Option<f64> {
        self.seeds.binary_search(&seed).ok().map(|i| self.values[i])
    }
}

/// Seed-aggregated performance for every condition over `n` languages.
#[derive(Clone, Debug)]
pub struct TransferGrid {
    pub languages: Vec<LanguageId>,
    pub n_samples: u64,
    pub metric: String,
    pub seed_ids: Vec<u64>,
    cells: BTreeMap<CellKey, Cell>,
}

impl TransferGrid {
    pub fn n(&self) -> usize {
        self.languages.len()
    }

    pub fn cell(&self, key: CellKey) -> &Cell {
        &self.cells[&key]
    }

    pub fn cells(&self) -> impl Iterator<Item = (&CellKey, &Cell)> {
        self.cells.iter()
    }

    /// Perf_i(D_i).
    pub fn base(&self, target: usize) -> &Cell {
        self.cell(CellKey { target, condition: Condition::Base, donor: None })
    }

    /// Perf_i(D_i + D_i').
    pub fn self_augmented(&self, target: usize) -> &Cell {
        self.cell(CellKey { target, condition: Condition::SelfAugmented, donor: None })
    }

    /// Perf_i(D_i + D_j).
    pub fn donor_augmented(&self, target: usize, donor: usize) -> &Cell {
        self.cell(CellKey { target, condition: Condition::DonorAugmented, donor: Some(donor) })
    }
}

/// Groups records into a complete, seed-aligned grid over `languages`.
pub fn aggregate_grid(
    records: &[PerformanceRecord],
    languages: &[LanguageId],
    n_samples: u64,
) -> Result<TransferGrid, RecordError> {
    if languages.len() < 2 {
        return Err(RecordError::TooFewLanguages(languages.len()));
    }
    if n_samples == 0 {
        return Err(RecordError::ZeroSamples);
    }
    let mut index = BTreeMap::new();
    for (i, lang) in languages.iter().enumerate() {
        if index.insert(lang.code.as_str(), i).is_some() {
            return Err(RecordError::DuplicateLanguage(lang.code.clone()));
        }
    }
    let lookup = |code: &str| index.get(code).copied().ok_or_else(|| RecordError::UnknownLanguage(code.to_string()));

    let metric = records.first().ok_or(RecordError::Empty)?.metric.clone();
    let mut raw: BTreeMap<CellKey, Vec<(u64, f64)>> = BTreeMap::new();
    for r in records {
        if r.metric != metric {
            return Err(RecordError::MixedMetrics(metric, r.metric.clone()));
        }
        r.check(0)?;
        let key = CellKey {
            target: lookup(&r.target)?,
            condition: r.condition,
            donor: r.donor.as_deref().map(lookup).transpose()?,
        };
        let expected = if r.condition == Condition::Base { n_samples } else { 2 * n_samples };
        if r.sample_count != expected {
            return Err(RecordError::SampleCount { key: r.describe_key(), found: r.sample_count, expected });
        }
        raw.entry(key).or_default().push((r.seed, r.value));
    }

    let n = languages.len();
    let mut expected_keys = Vec::with_capacity(n * (n + 1));
    for target in 0..n {
        expected_keys.push(CellKey { target, condition: Condition::Base, donor: None });
        expected_keys.push(CellKey { target, condition: Condition::SelfAugmented, donor: None });
        for donor in (0..n).filter(|&d| d != target) {
            expected_keys.push(CellKey { target, condition: Condition::DonorAugmented, donor: Some(donor) });
        }
    }

    let describe = |key: &CellKey| {
        let target = &languages[key.target].code;
        match key.donor {
            Some(d) => format!("i={target}, donor={}", languages[d].code),
            None => format!("i={target}, condition={}", key.condition),
        }
    };

    let mut cells = BTreeMap::new();
    let mut seed_ids: Option<Vec<u64>> = None;
    for key in expected_keys {
        let mut values = raw.remove(&key).ok_or_else(|| RecordError::MissingCell(describe(&key)))?;
        // Sorting by seed (then bit pattern) makes the mean independent of record order.
        values.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)));
        if let Some(w) = values.windows(2).find(|w| w[0].0 == w[1].0) {
            return Err(RecordError::DuplicateSeed { cell: describe(&key), seed: w[0].0 });
        }
        let seeds: Vec<u64> = values.iter().map(|v| v.0).collect();
        match &seed_ids {
            None => seed_ids = Some(seeds.clone()),
            Some(expected) if *expected != seeds => {
                return Err(RecordError::SeedsMisaligned {
                    cell: describe(&key),
                    found: seeds,
                    expected: expected.clone(),
                })
            }
            Some(_) => {}
        }
        let values: Vec<f64> = values.into_iter().map(|v| v.1).collect();
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        cells.insert(key, Cell { seeds, values, mean });
    }

    Ok(TransferGrid { languages: languages.to_vec(), n_samples, metric, seed_ids: seed_ids.unwrap_or_default(), cells })
}

/// One training-sample metadata row.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetadataRow {
    pub language: String,
    pub speaker_id: String,
    #[serde(default, deserialize_with = "empty_as_none")]
    pub label: Option<String>,
}

fn empty_as_none<'de, D: serde::Deserializer<'de>>(d: D) -> Result<Option<String>, D::Error> {
    Ok(Option::<String>::deserialize(d)?.filter(|s| !s.is_empty()))
}

/// Parses a `language,speaker_id,label` CSV (label column optional).
pub fn parse_metadata(content: &str) -> Result<Vec<MetadataRow>, RecordError> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(content.as_bytes());
    reader
        .deserialize::<MetadataRow>()
        .enumerate()
        .map(|(idx, row)| row.map_err(|e| RecordError::Malformed { line: idx as u64 + 2, message: e.to_string() }))
        .collect()
}

/// Training-set composition per language.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct BalanceManifest {
    pub sample_counts: BTreeMap<String, usize>,
    pub speakers: BTreeMap<String, BTreeSet<String>>,
    /// samples-per-speaker value -> number of speakers, per language.
    pub samples_per_speaker: BTreeMap<String, BTreeMap<usize, usize>>,
    pub class_counts: BTreeMap<String, BTreeMap<String, usize>>,
}

impl BalanceManifest {
    pub fn from_rows(rows: &[MetadataRow]) -> Self {
        let mut manifest = BalanceManifest::default();
        let mut per_speaker: BTreeMap<&str, BTreeMap<&str, usize>> = BTreeMap::new();
        for row in rows {
            *manifest.sample_counts.entry(row.language.clone()).or_default() += 1;
            manifest.speakers.entry(row.language.clone()).or_default().insert(row.speaker_id.clone());
            *per_speaker.entry(&row.language).or_default().entry(&row.speaker_id).or_default() += 1;
            if let Some(label) = &row.label {
                *manifest.class_counts.entry(row.language.clone()).or_default().entry(label.clone()).or_default() += 1;
            }
        }
        for (lang, speakers) in per_speaker {
            let hist = manifest.samples_per_speaker.entry(lang.to_string()).or_default();
            for count in speakers.into_values() {
                *hist.entry(count).or_default() += 1;
            }
        }
        manifest
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BalanceViolation {
    SampleCountMismatch { counts: BTreeMap<String, usize> },
    SpeakerCountMismatch { counts: BTreeMap<String, usize> },
    SpeakerOverlap { speaker: String, languages: Vec<String> },
    NonConstantSamplesPerSpeaker { histogram: BTreeMap<String, BTreeMap<usize, usize>> },
    UnbalancedClasses { language: String, counts: BTreeMap<String, usize> },
}

impl fmt::Display for BalanceViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BalanceViolation::SampleCountMismatch { counts } => write!(f, "sample count mismatch: {counts:?}"),
            BalanceViolation::SpeakerCountMismatch { counts } => write!(f, "speaker count mismatch: {counts:?}"),
            BalanceViolation::SpeakerOverlap { speaker, languages } => {
                write!(f, "speaker overlap: {speaker} in {}", languages.join(", "))
            }
            BalanceViolation::NonConstantSamplesPerSpeaker { histogram } => {
                write!(f, "samples per speaker not constant: {histogram:?}")
            }
            BalanceViolation::UnbalancedClasses { language, counts } => {
                write!(f, "unbalanced classes in {language}: {counts:?}")
            }
        }
    }
}

fn all_equal<T: PartialEq>(mut it: impl Iterator<Item = T>) -> bool {
    match it.next() {
        None => true,
        Some(first) => it.all(|x| x == first),
    }
}

/// Lists every violated balance constraint; an empty list means balanced.
pub fn validate_balance(manifest: &BalanceManifest) -> Vec<BalanceViolation> {
    let mut violations = Vec::new();

    if !all_equal(manifest.sample_counts.values()) {
        violations.push(BalanceViolation::SampleCountMismatch { counts: manifest.sample_counts.clone() });
    }

    let speaker_counts: BTreeMap<String, usize> = manifest.speakers.iter().map(|(l, s)| (l.clone(), s.len())).collect();
    if !all_equal(speaker_counts.values()) {
        violations.push(BalanceViolation::SpeakerCountMismatch { counts: speaker_counts });
    }

    let mut owners: BTreeMap<&str, Vec<String>> = BTreeMap::new();
    for (lang, speakers) in &manifest.speakers {
        for s in speakers {
            owners.entry(s).or_default().push(lang.clone());
        }
    }
    for (speaker, languages) in owners {
        if languages.len() > 1 {
            violations.push(BalanceViolation::SpeakerOverlap { speaker: speaker.to_string(), languages });
        }
    }

    let per_speaker_values: BTreeSet<usize> =
        manifest.samples_per_speaker.values().flat_map(|h| h.keys().copied()).collect();
    if per_speaker_values.len() > 1 {
        violations
            .push(BalanceViolation::NonConstantSamplesPerSpeaker { histogram: manifest.samples_per_speaker.clone() });
    }

    for (language, counts) in &manifest.class_counts {
        if !all_equal(counts.values()) {
            violations.push(BalanceViolation::UnbalancedClasses { language: language.clone(), counts: counts.clone() });
        }
    }

    violations
}
