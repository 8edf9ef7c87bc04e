use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use cltm_core::curves::{build_curve, detect_dynamic_interval, split_by_language, CurveError, DynamicInterval};
use cltm_core::diagnostics::{compute_diagnostics, ReciprocityDenominator};
use cltm_core::evalmetrics::{
    centroid_distances, embeddings_by_language, make_sv_trials, parse_embeddings, score_trials, trials_auc,
    trials_from_csv, trials_to_csv, TrialLabel,
};
use cltm_core::heatmap::{render_heatmap, HeatmapSpec};
use cltm_core::records::{
    self, aggregate_grid, family_map, format_float, ingest_records, parse_language_list, parse_metadata,
    serialize_records, BalanceManifest, Condition, LanguageId, RecordFormat, TransferGrid,
};
use cltm_core::stability::{per_seed_cltm, stability_report};
use cltm_core::synth::{generate_experiment, planted_truth, preset_truth, Preset, PresetConfig, SyntheticTruth};
use cltm_core::transfer::{assemble_cltm, compute_gains};
use cltm_core::{Cltm, Error, SquareMatrix};
use serde::Serialize;
use serde_json::{json, Value};

pub const THREADS_ENV: &str = "CLTM_THREADS";

#[derive(Debug)]
pub enum CliError {
    Core(Error),
    Io {
        path: PathBuf,
        message: String,
    },
    Config(String),
    /// A check ran to completion and found problems; `details` goes into the error JSON.
    Failed {
        kind: &'static str,
        message: String,
        details: Value,
    },
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Core(e)
    }
}

fn core<E: Into<Error>>(e: E) -> CliError {
    CliError::Core(e.into())
}

impl CliError {
    pub fn to_json(&self) -> String {
        let value = match self {
            CliError::Core(e) => json!({ "error": e.kind(), "message": e.to_string() }),
            CliError::Io { path, message } => {
                json!({ "error": "io", "message": message, "path": path.display().to_string() })
            }
            CliError::Config(message) => json!({ "error": "config", "message": message }),
            CliError::Failed { kind, message, details } => {
                json!({ "error": kind, "message": message, "details": details })
            }
        };
        value.to_string()
    }
}

/// Worker count from `CLTM_THREADS`, 1 when unset.
pub fn thread_count() -> Result<usize, CliError> {
    match std::env::var(THREADS_ENV) {
        Err(_) => Ok(1),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(n),
            _ => Err(CliError::Config(format!("{THREADS_ENV} must be a positive integer, got {v:?}"))),
        },
    }
}

fn read(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::Io { path: path.to_path_buf(), message: e.to_string() })
}

fn write(path: Option<&Path>, content: &str) -> Result<(), CliError> {
    match path {
        Some(p) => {
            std::fs::write(p, content).map_err(|e| CliError::Io { path: p.to_path_buf(), message: e.to_string() })
        }
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(content.as_bytes())
                .and_then(|_| out.flush())
                .map_err(|e| CliError::Io { path: PathBuf::from("<stdout>"), message: e.to_string() })
        }
    }
}

fn pretty<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("output serializes") + "\n"
}

fn format_of(path: &Path) -> RecordFormat {
    RecordFormat::from_path(&path.to_string_lossy())
}

fn is_csv(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"))
}

fn load_records(path: &Path) -> Result<Vec<cltm_core::PerformanceRecord>, CliError> {
    ingest_records(&read(path)?, format_of(path)).map_err(core)
}

fn load_languages(path: &Path) -> Result<Vec<LanguageId>, CliError> {
    parse_language_list(&read(path)?).map_err(core)
}

fn load_matrix(path: &Path) -> Result<Cltm, CliError> {
    let content = read(path)?;
    if is_csv(path) { Cltm::from_csv(&content) } else { Cltm::from_json(&content) }.map_err(core)
}

pub fn ingest(records: &Path, out: Option<&Path>) -> Result<(), CliError> {
    let parsed = load_records(records)?;
    log::info!("{} records read from {}", parsed.len(), records.display());
    let format = out.map_or_else(|| format_of(records), format_of);
    write(out, &serialize_records(&parsed, format))
}

pub fn validate_balance(metadata: &Path, out: Option<&Path>) -> Result<(), CliError> {
    let rows = parse_metadata(&read(metadata)?).map_err(core)?;
    let manifest = BalanceManifest::from_rows(&rows);
    let violations = records::validate_balance(&manifest);

    #[derive(Serialize)]
    struct Report<'a> {
        balanced: bool,
        violations: &'a [cltm_core::records::BalanceViolation],
        manifest: &'a BalanceManifest,
    }
    write(out, &pretty(&Report { balanced: violations.is_empty(), violations: &violations, manifest: &manifest }))?;
    if violations.is_empty() {
        return Ok(());
    }
    Err(CliError::Failed {
        kind: "balance",
        message: violations.iter().map(ToString::to_string).collect::<Vec<_>>().join("; "),
        details: serde_json::to_value(&violations).expect("violations serialize"),
    })
}

fn fit_all(
    groups: &[(String, Vec<cltm_core::PerformanceRecord>)],
    threshold: f64,
    threads: usize,
) -> Vec<Result<DynamicInterval, CurveError>> {
    let fit = |records: &[cltm_core::PerformanceRecord]| {
        build_curve(records).and_then(|c| detect_dynamic_interval(&c, threshold))
    };
    if threads <= 1 || groups.len() <= 1 {
        return groups.iter().map(|(_, r)| fit(r)).collect();
    }
    // Contiguous chunks joined in order, so output does not depend on scheduling.
    let chunk = groups.len().div_ceil(threads);
    std::thread::scope(|scope| {
        let handles: Vec<_> = groups
            .chunks(chunk)
            .map(|part| scope.spawn(move || part.iter().map(|(_, r)| fit(r)).collect::<Vec<_>>()))
            .collect();
        handles.into_iter().flat_map(|h| h.join().expect("fit worker panicked")).collect()
    })
}

pub fn interval(records: &Path, threshold: f64, threads: usize, out: Option<&Path>) -> Result<(), CliError> {
    let base: Vec<_> = load_records(records)?.into_iter().filter(|r| r.condition == Condition::Base).collect();
    if base.is_empty() {
        return Err(CliError::Failed {
            kind: "curves",
            message: "no Base-condition records to build learning curves from".into(),
            details: Value::Null,
        });
    }
    let groups = split_by_language(&base);
    let results = fit_all(&groups, threshold, threads);

    #[derive(Serialize)]
    struct Failure {
        language: String,
        error: String,
    }
    #[derive(Serialize)]
    struct Report {
        threshold: f64,
        intervals: Vec<DynamicInterval>,
        failures: Vec<Failure>,
    }
    let mut report = Report { threshold, intervals: Vec::new(), failures: Vec::new() };
    for ((language, _), result) in groups.iter().zip(results) {
        match result {
            Ok(iv) => report.intervals.push(iv),
            Err(e) => report.failures.push(Failure { language: language.clone(), error: e.to_string() }),
        }
    }
    write(out, &pretty(&report))?;
    if report.failures.is_empty() {
        return Ok(());
    }
    Err(CliError::Failed {
        kind: "curves",
        message: format!("no dynamic interval for {} language(s)", report.failures.len()),
        details: serde_json::to_value(&report.failures).expect("failures serialize"),
    })
}

pub struct GridInput {
    pub records: PathBuf,
    pub langs: PathBuf,
    pub n_samples: u64,
}

fn load_grid(input: &GridInput) -> Result<TransferGrid, CliError> {
    let records = load_records(&input.records)?;
    let languages = load_languages(&input.langs)?;
    aggregate_grid(&records, &languages, input.n_samples).map_err(core)
}

pub fn compute(input: &GridInput, strict: bool, out: Option<&Path>, gains_out: Option<&Path>) -> Result<(), CliError> {
    let grid = load_grid(input)?;
    let gains = compute_gains(&grid);
    let cltm = assemble_cltm(&gains, strict).map_err(core)?;
    for i in (0..cltm.n()).filter(|&i| !cltm.row_valid[i]) {
        log::warn!("row {} marked invalid: self-gain {}", cltm.languages[i].code, gains.self_gain[i]);
    }
    if let Some(path) = gains_out {
        #[derive(Serialize)]
        struct Gains<'a> {
            languages: Vec<&'a str>,
            self_gain: &'a [f64],
            cross_gain: &'a SquareMatrix,
        }
        let g = Gains {
            languages: gains.languages.iter().map(|l| l.code.as_str()).collect(),
            self_gain: &gains.self_gain,
            cross_gain: &gains.cross_gain,
        };
        write(Some(path), &pretty(&g))?;
    }
    let text = if out.is_some_and(is_csv) { cltm.to_csv() } else { cltm.to_json() };
    write(out, &text)
}

pub fn diagnose(
    matrix: &Path,
    families: Option<&Path>,
    reciprocity: ReciprocityDenominator,
    table: bool,
    out: Option<&Path>,
) -> Result<(), CliError> {
    let cltm = load_matrix(matrix)?;
    let fmap = match families {
        Some(path) => {
            let map = family_map(&load_languages(path)?);
            for l in cltm.languages.iter().filter(|l| !map.contains_key(&l.code)) {
                log::warn!("no family listed for {}", l.code);
            }
            Some(map)
        }
        None => None,
    };
    let report = compute_diagnostics(&cltm, fmap.as_ref(), reciprocity).map_err(core)?;
    write(out, &if table { report.to_table() } else { report.to_json() })
}

pub fn stability(input: &GridInput, out: Option<&Path>) -> Result<(), CliError> {
    let grid = load_grid(input)?;
    let gains = compute_gains(&grid);
    let cltm = assemble_cltm(&gains, false).map_err(core)?;
    let samples = per_seed_cltm(&grid).map_err(core)?;
    let report = stability_report(&samples, &cltm, &gains).map_err(core)?;
    write(out, &report.to_json())
}

pub fn trials(utterances: &Path, max_per_class: Option<usize>, seed: u64, out: Option<&Path>) -> Result<(), CliError> {
    let utts = parse_embeddings(&read(utterances)?, 1).map_err(core)?;
    let pairs = make_sv_trials(&utts, max_per_class, seed).map_err(core)?;
    write(out, &trials_to_csv(&pairs))
}

pub fn score(
    embeddings: &Path,
    trials: &Path,
    last_k: usize,
    scores: Option<&Path>,
    out: Option<&Path>,
) -> Result<(), CliError> {
    let utts = parse_embeddings(&read(embeddings)?, last_k).map_err(core)?;
    let pairs = trials_from_csv(&read(trials)?).map_err(core)?;
    let scored = score_trials(&utts, &pairs).map_err(core)?;
    let auc = trials_auc(&scored).map_err(core)?;
    if let Some(path) = scores {
        let mut csv = String::from("utt_a,utt_b,label,score\n");
        for s in &scored {
            let _ = writeln!(csv, "{},{},{},{}", s.utt_a, s.utt_b, s.label.as_str(), format_float(s.score));
        }
        write(Some(path), &csv)?;
    }

    #[derive(Serialize)]
    struct Summary {
        auc: f64,
        trials: usize,
        same_speaker: usize,
        different_speaker: usize,
    }
    let same = scored.iter().filter(|s| s.label == TrialLabel::SameSpeaker).count();
    write(
        out,
        &pretty(&Summary { auc, trials: scored.len(), same_speaker: same, different_speaker: scored.len() - same }),
    )
}

pub fn centroids(embeddings: &Path, last_k: usize, out: Option<&Path>) -> Result<(), CliError> {
    let utts = parse_embeddings(&read(embeddings)?, last_k).map_err(core)?;
    let rows = centroid_distances(&embeddings_by_language(&utts).map_err(core)?).map_err(core)?;
    let mut csv = String::from("lang_a,lang_b,distance\n");
    for r in rows {
        let _ = writeln!(csv, "{},{},{}", r.lang_a, r.lang_b, format_float(r.distance));
    }
    write(out, &csv)
}

pub fn heatmap(matrix: &Path, spec: &HeatmapSpec, out: Option<&Path>) -> Result<(), CliError> {
    let cltm = load_matrix(matrix)?;
    write(out, &render_heatmap(&cltm, spec).map_err(core)?)
}

pub struct SimulateInput {
    pub preset: Preset,
    pub truth: Option<PathBuf>,
    pub master_seed: u64,
    pub languages: Option<usize>,
    pub seeds: Option<u64>,
    pub noise_sd: Option<f64>,
    pub n_samples: Option<u64>,
    pub out: Option<PathBuf>,
    pub langs_out: Option<PathBuf>,
    pub truth_out: Option<PathBuf>,
    pub planted_out: Option<PathBuf>,
}

pub fn simulate(input: &SimulateInput) -> Result<(), CliError> {
    let truth = match &input.truth {
        Some(path) => SyntheticTruth::from_json(&read(path)?).map_err(core)?,
        None => {
            let mut config = PresetConfig::new(input.preset);
            if let Some(v) = input.languages {
                config.languages = v;
            }
            if let Some(v) = input.seeds {
                config.seed_count = v;
            }
            if let Some(v) = input.noise_sd {
                config.noise_sd = v;
            }
            if let Some(v) = input.n_samples {
                config.n_samples = v;
            }
            preset_truth(&config).map_err(core)?
        }
    };
    let planted = planted_truth(&truth).map_err(core)?;
    let records = generate_experiment(&truth, input.master_seed).map_err(core)?;

    if let Some(path) = &input.langs_out {
        let mut csv = String::from("code,family\n");
        for l in &truth.languages {
            let _ = writeln!(csv, "{},{}", l.code, l.family.as_deref().unwrap_or(""));
        }
        write(Some(path), &csv)?;
    }
    if let Some(path) = &input.truth_out {
        write(Some(path), &truth.to_json())?;
    }
    if let Some(path) = &input.planted_out {
        let languages = truth.languages.iter().map(|l| LanguageId::new(l.code.clone())).collect();
        write(Some(path), &Cltm::from_entries(languages, planted).to_json())?;
    }
    let format = input.out.as_deref().map_or(RecordFormat::Csv, format_of);
    write(input.out.as_deref(), &serialize_records(&records, format))
}
