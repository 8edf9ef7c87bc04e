//! Downstream evaluation: macro-F1 for classification, ranking AUC and a
//! gender-controlled trial protocol for verification, utterance pooling,
//! cosine scoring and language-centroid distances.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::StreamKey;

/// Pooled vectors below this norm cannot be normalised.
pub const MIN_NORM: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("empty input")]
    Empty,
    #[error("unknown label {0:?}")]
    UnknownLabel(String),
    #[error("length mismatch: {0} truths vs {1} predictions")]
    LengthMismatch(usize, usize),
    #[error("AUC needs at least one positive and one negative")]
    SingleClass,
    #[error("non-finite score")]
    NonFiniteScore,
    #[error("no negative trials: no same-gender pair of distinct speakers")]
    NoNegatives,
    #[error("no positive trials: no speaker has two utterances")]
    NoPositives,
    #[error("duplicate utterance id {0}")]
    DuplicateId(String),
    #[error("unknown utterance id {0}")]
    UnknownId(String),
    #[error("pooled embedding has zero norm")]
    ZeroNorm,
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("last_k = {last_k} outside 1..={layers}")]
    InvalidLastK { last_k: usize, layers: usize },
    #[error("utterance {0} has no embedding")]
    MissingEmbedding(String),
    #[error("line {line}: {message}")]
    Malformed { line: u64, message: String },
}

/// Unweighted mean of per-class F1 over the declared labels. A class with no
/// true and no predicted members, or with precision + recall = 0, scores 0.
pub fn macro_f1<L: AsRef<str>>(truths: &[L], predicted: &[L], labels: &[L]) -> Result<f64, MetricError> {
    if truths.len() != predicted.len() {
        return Err(MetricError::LengthMismatch(truths.len(), predicted.len()));
    }
    if truths.is_empty() || labels.is_empty() {
        return Err(MetricError::Empty);
    }
    let index: HashMap<&str, usize> = labels.iter().enumerate().map(|(i, l)| (l.as_ref(), i)).collect();
    let class = |l: &L| index.get(l.as_ref()).copied().ok_or_else(|| MetricError::UnknownLabel(l.as_ref().to_string()));
    let k = labels.len();
    let (mut tp, mut fp, mut fn_) = (vec![0usize; k], vec![0usize; k], vec![0usize; k]);
    for (t, p) in truths.iter().zip(predicted) {
        let (t, p) = (class(t)?, class(p)?);
        if t == p {
            tp[t] += 1;
        } else {
            fp[p] += 1;
            fn_[t] += 1;
        }
    }
    let f1_sum: f64 = (0..k)
        .map(|c| {
            let denom = 2 * tp[c] + fp[c] + fn_[c];
            if tp[c] == 0 || denom == 0 {
                0.0
            } else {
                2.0 * tp[c] as f64 / denom as f64
            }
        })
        .sum();
    Ok(f1_sum / k as f64)
}

/// Mann-Whitney AUC with midrank ties: `(#(pos > neg) + 0.5 #(pos = neg)) / (#pos #neg)`.
pub fn roc_auc(scores: &[(f64, bool)]) -> Result<f64, MetricError> {
    if scores.iter().any(|(s, _)| !s.is_finite()) {
        return Err(MetricError::NonFiniteScore);
    }
    let n_pos = scores.iter().filter(|(_, p)| *p).count();
    let n_neg = scores.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(MetricError::SingleClass);
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    // Walk tie groups in ascending order, assigning each its average 1-based rank.
    let mut pos_rank_sum = 0.0;
    let mut start = 0;
    while start < sorted.len() {
        let mut end = start;
        while end < sorted.len() && sorted[end].0 == sorted[start].0 {
            end += 1;
        }
        let midrank = (start + 1 + end) as f64 / 2.0;
        let positives = sorted[start..end].iter().filter(|(_, p)| *p).count();
        pos_rank_sum += midrank * positives as f64;
        start = end;
    }
    let (p, n) = (n_pos as f64, n_neg as f64);
    Ok((pos_rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Utterance {
    pub id: String,
    pub speaker_id: String,
    pub gender: String,
    pub language: String,
    pub embedding: Option<Vec<f64>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrialLabel {
    SameSpeaker,
    DifferentSpeaker,
}

impl TrialLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            TrialLabel::SameSpeaker => "same-speaker",
            TrialLabel::DifferentSpeaker => "different-speaker",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TrialPair {
    pub utt_a: String,
    pub utt_b: String,
    pub label: TrialLabel,
}

/// All same-speaker pairs plus same-gender different-speaker pairs, each
/// unordered with `utt_a < utt_b`, sorted by id pair. With `max_per_class`,
/// each label is subsampled uniformly without replacement by a partial
/// Fisher-Yates shuffle driven by the stream keyed `(rng_seed, label)`, and
/// the survivors are re-sorted.
pub fn make_sv_trials(
    utts: &[Utterance],
    max_per_class: Option<usize>,
    rng_seed: u64,
) -> Result<Vec<TrialPair>, MetricError> {
    let mut sorted: Vec<&Utterance> = utts.iter().collect();
    sorted.sort_by(|a, b| a.id.cmp(&b.id));
    if let Some(w) = sorted.windows(2).find(|w| w[0].id == w[1].id) {
        return Err(MetricError::DuplicateId(w[0].id.clone()));
    }
    let mut positives = Vec::new();
    let mut negatives = Vec::new();
    for (a_idx, a) in sorted.iter().enumerate() {
        for b in &sorted[a_idx + 1..] {
            let label = if a.speaker_id == b.speaker_id {
                TrialLabel::SameSpeaker
            } else if a.gender == b.gender {
                TrialLabel::DifferentSpeaker
            } else {
                continue;
            };
            let pair = TrialPair { utt_a: a.id.clone(), utt_b: b.id.clone(), label };
            match label {
                TrialLabel::SameSpeaker => positives.push(pair),
                TrialLabel::DifferentSpeaker => negatives.push(pair),
            }
        }
    }
    if positives.is_empty() {
        return Err(MetricError::NoPositives);
    }
    if negatives.is_empty() {
        return Err(MetricError::NoNegatives);
    }
    if let Some(cap) = max_per_class {
        positives = subsample(positives, cap, StreamKey::new(rng_seed).with_str(TrialLabel::SameSpeaker.as_str()));
        negatives = subsample(negatives, cap, StreamKey::new(rng_seed).with_str(TrialLabel::DifferentSpeaker.as_str()));
    }
    let mut trials = positives;
    trials.extend(negatives);
    trials.sort();
    Ok(trials)
}

fn subsample(mut items: Vec<TrialPair>, cap: usize, key: StreamKey) -> Vec<TrialPair> {
    if items.len() <= cap {
        return items;
    }
    let mut stream = key.stream();
    for i in 0..cap {
        let j = i + stream.next_index(items.len() - i);
        items.swap(i, j);
    }
    items.truncate(cap);
    items
}

pub fn trials_to_csv(trials: &[TrialPair]) -> String {
    let mut out = String::from("utt_a,utt_b,label\n");
    for t in trials {
        out.push_str(&format!("{},{},{}\n", t.utt_a, t.utt_b, t.label.as_str()));
    }
    out
}

pub fn trials_from_csv(content: &str) -> Result<Vec<TrialPair>, MetricError> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(content.as_bytes());
    reader
        .deserialize::<TrialPair>()
        .enumerate()
        .map(|(i, row)| row.map_err(|e| MetricError::Malformed { line: i as u64 + 2, message: e.to_string() }))
        .collect()
}

/// Averages the last `last_k` layers frame by frame, mean-pools over time and
/// L2-normalises. `layers[l][t]` is the feature vector of frame `t` in layer `l`.
pub fn embed_utterance(layers: &[Vec<Vec<f64>>], last_k: usize) -> Result<Vec<f64>, MetricError> {
    let first_frame = layers.first().and_then(|l| l.first()).ok_or(MetricError::Empty)?;
    if last_k == 0 || last_k > layers.len() {
        return Err(MetricError::InvalidLastK { last_k, layers: layers.len() });
    }
    let dim = first_frame.len();
    let frames = layers[0].len();
    for layer in layers {
        if layer.len() != frames {
            return Err(MetricError::DimensionMismatch { expected: frames, found: layer.len() });
        }
        if let Some(f) = layer.iter().find(|f| f.len() != dim) {
            return Err(MetricError::DimensionMismatch { expected: dim, found: f.len() });
        }
    }
    let selected = &layers[layers.len() - last_k..];
    let mut pooled = vec![0.0; dim];
    for t in 0..frames {
        for d in 0..dim {
            let layer_mean = selected.iter().map(|l| l[t][d]).sum::<f64>() / last_k as f64;
            pooled[d] += layer_mean;
        }
    }
    for v in &mut pooled {
        *v /= frames as f64;
    }
    l2_normalize(pooled)
}

pub fn l2_normalize(mut v: Vec<f64>) -> Result<Vec<f64>, MetricError> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if !(norm >= MIN_NORM) {
        return Err(MetricError::ZeroNorm);
    }
    for x in &mut v {
        *x /= norm;
    }
    Ok(v)
}

pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64, MetricError> {
    if a.len() != b.len() {
        return Err(MetricError::DimensionMismatch { expected: a.len(), found: b.len() });
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na < MIN_NORM || nb < MIN_NORM {
        return Err(MetricError::ZeroNorm);
    }
    Ok(dot / (na * nb))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScoredTrial {
    pub utt_a: String,
    pub utt_b: String,
    pub label: TrialLabel,
    pub score: f64,
}

/// Cosine-scores each trial from the utterances' embeddings.
pub fn score_trials(utts: &[Utterance], trials: &[TrialPair]) -> Result<Vec<ScoredTrial>, MetricError> {
    let by_id: HashMap<&str, &Utterance> = utts.iter().map(|u| (u.id.as_str(), u)).collect();
    let embedding = |id: &str| -> Result<&[f64], MetricError> {
        let u = by_id.get(id).ok_or_else(|| MetricError::UnknownId(id.to_string()))?;
        u.embedding.as_deref().ok_or_else(|| MetricError::MissingEmbedding(id.to_string()))
    };
    trials
        .iter()
        .map(|t| {
            let score = cosine_similarity(embedding(&t.utt_a)?, embedding(&t.utt_b)?)?;
            Ok(ScoredTrial { utt_a: t.utt_a.clone(), utt_b: t.utt_b.clone(), label: t.label, score })
        })
        .collect()
}

pub fn trials_auc(scored: &[ScoredTrial]) -> Result<f64, MetricError> {
    let pairs: Vec<(f64, bool)> = scored.iter().map(|s| (s.score, s.label == TrialLabel::SameSpeaker)).collect();
    roc_auc(&pairs)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CentroidDistance {
    pub lang_a: String,
    pub lang_b: String,
    pub distance: f64,
}

/// Euclidean distance between per-language mean embeddings, for every
/// unordered language pair (`lang_a < lang_b`, sorted).
pub fn centroid_distances(by_language: &BTreeMap<String, Vec<Vec<f64>>>) -> Result<Vec<CentroidDistance>, MetricError> {
    if by_language.is_empty() {
        return Err(MetricError::Empty);
    }
    let dim = by_language.values().find_map(|v| v.first()).map(Vec::len).ok_or(MetricError::Empty)?;
    let mut centroids = Vec::with_capacity(by_language.len());
    for (lang, vectors) in by_language {
        if vectors.is_empty() {
            return Err(MetricError::Empty);
        }
        let mut c = vec![0.0; dim];
        for v in vectors {
            if v.len() != dim {
                return Err(MetricError::DimensionMismatch { expected: dim, found: v.len() });
            }
            for (acc, x) in c.iter_mut().zip(v) {
                *acc += x;
            }
        }
        c.iter_mut().for_each(|x| *x /= vectors.len() as f64);
        centroids.push((lang, c));
    }
    let mut out = Vec::new();
    for (i, (la, ca)) in centroids.iter().enumerate() {
        for (lb, cb) in &centroids[i + 1..] {
            let distance = ca.iter().zip(cb).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
            out.push(CentroidDistance { lang_a: la.to_string(), lang_b: lb.to_string(), distance });
        }
    }
    Ok(out)
}

#[derive(Deserialize)]
struct EmbeddingLine {
    id: String,
    speaker_id: String,
    gender: String,
    language: String,
    #[serde(default)]
    vector: Option<Vec<f64>>,
    #[serde(default)]
    vectors: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    layers: Option<Vec<Vec<Vec<f64>>>>,
}

/// Reads embedding JSON lines. Each line carries `id`, `speaker_id`, `gender`,
/// `language` and one of: `vector` (a pooled embedding), `vectors` (frames of
/// a single layer) or `layers` (per-layer frame matrices). Every form is pooled
/// with [`embed_utterance`] so stored embeddings are unit-norm.
pub fn parse_embeddings(content: &str, last_k: usize) -> Result<Vec<Utterance>, MetricError> {
    let mut out = Vec::new();
    let mut seen = BTreeSet::new();
    for (idx, text) in content.lines().enumerate() {
        let line = idx as u64 + 1;
        if text.trim().is_empty() {
            continue;
        }
        let raw: EmbeddingLine =
            serde_json::from_str(text).map_err(|e| MetricError::Malformed { line, message: e.to_string() })?;
        if !seen.insert(raw.id.clone()) {
            return Err(MetricError::DuplicateId(raw.id));
        }
        let embedding = match (raw.vector, raw.vectors, raw.layers) {
            (Some(v), None, None) => Some(embed_utterance(&[vec![v]], 1)?),
            (None, Some(frames), None) => Some(embed_utterance(&[frames], 1)?),
            (None, None, Some(layers)) => Some(embed_utterance(&layers, last_k)?),
            (None, None, None) => None,
            _ => {
                return Err(MetricError::Malformed { line, message: "use only one of vector, vectors, layers".into() })
            }
        };
        out.push(Utterance {
            id: raw.id,
            speaker_id: raw.speaker_id,
            gender: raw.gender,
            language: raw.language,
            embedding,
        });
    }
    Ok(out)
}

/// Groups utterance embeddings by language.
pub fn embeddings_by_language(utts: &[Utterance]) -> Result<BTreeMap<String, Vec<Vec<f64>>>, MetricError> {
    let mut out: BTreeMap<String, Vec<Vec<f64>>> = BTreeMap::new();
    for u in utts {
        let e = u.embedding.clone().ok_or_else(|| MetricError::MissingEmbedding(u.id.clone()))?;
        out.entry(u.language.clone()).or_default().push(e);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn utt(id: &str, speaker: &str, gender: &str) -> Utterance {
        Utterance {
            id: id.into(),
            speaker_id: speaker.into(),
            gender: gender.into(),
            language: "de".into(),
            embedding: None,
        }
    }

    #[test]
    fn macro_f1_examples() {
        let labels = ["M", "F"];
        assert_eq!(macro_f1(&["M", "M", "F", "F"], &["M", "M", "F", "F"], &labels).unwrap(), 1.0);
        let f = macro_f1(&["M", "M", "F", "F"], &["M", "F", "F", "F"], &labels).unwrap();
        assert!((f - 0.733_333_333_333_333_4).abs() < 1e-12);
        assert_eq!(macro_f1(&["M", "M"], &["F", "F"], &labels).unwrap(), 0.0);
    }

    #[test]
    fn macro_f1_errors() {
        assert_eq!(macro_f1::<&str>(&[], &[], &["M"]).unwrap_err(), MetricError::Empty);
        assert_eq!(macro_f1(&["M"], &["X"], &["M", "F"]).unwrap_err(), MetricError::UnknownLabel("X".into()));
        assert!(matches!(macro_f1(&["M"], &["M", "F"], &["M", "F"]), Err(MetricError::LengthMismatch(1, 2))));
    }

    #[test]
    fn auc_examples() {
        let perfect = [(0.9, true), (0.8, true), (0.1, false), (0.2, false)];
        assert_eq!(roc_auc(&perfect).unwrap(), 1.0);
        let ties = [(0.5, true), (0.5, false), (0.5, true), (0.5, false)];
        assert_eq!(roc_auc(&ties).unwrap(), 0.5);
        let mixed = [(0.8, true), (0.3, true), (0.5, false), (0.1, false)];
        assert_eq!(roc_auc(&mixed).unwrap(), 0.75);
        assert_eq!(roc_auc(&[(0.1, true)]).unwrap_err(), MetricError::SingleClass);
        assert_eq!(roc_auc(&[(f64::NAN, true), (0.1, false)]).unwrap_err(), MetricError::NonFiniteScore);
    }

    #[test]
    fn trials_two_speakers_same_gender() {
        let utts = [utt("a1", "a", "F"), utt("a2", "a", "F"), utt("b1", "b", "F"), utt("b2", "b", "F")];
        let t = make_sv_trials(&utts, None, 0).unwrap();
        assert_eq!(t.iter().filter(|t| t.label == TrialLabel::SameSpeaker).count(), 2);
        assert_eq!(t.iter().filter(|t| t.label == TrialLabel::DifferentSpeaker).count(), 4);
    }

    #[test]
    fn trials_gender_mismatch_has_no_negatives() {
        let utts = [utt("a1", "a", "F"), utt("a2", "a", "F"), utt("b1", "b", "M")];
        assert_eq!(make_sv_trials(&utts, None, 0).unwrap_err(), MetricError::NoNegatives);
        let utts = [utt("a1", "a", "F"), utt("b1", "b", "F")];
        assert_eq!(make_sv_trials(&utts, None, 0).unwrap_err(), MetricError::NoPositives);
    }

    #[test]
    fn trials_three_plus_one() {
        let utts = [utt("a1", "a", "M"), utt("a2", "a", "M"), utt("a3", "a", "M"), utt("b1", "b", "M")];
        let t = make_sv_trials(&utts, None, 0).unwrap();
        assert_eq!(t.iter().filter(|t| t.label == TrialLabel::SameSpeaker).count(), 3);
        assert_eq!(t.iter().filter(|t| t.label == TrialLabel::DifferentSpeaker).count(), 3);
    }

    #[test]
    fn subsampling_is_seeded_and_sorted() {
        let utts: Vec<Utterance> =
            (0..12).map(|i| utt(&format!("u{i:02}"), &format!("s{}", i / 3), if i < 6 { "F" } else { "M" })).collect();
        let a = make_sv_trials(&utts, Some(4), 11).unwrap();
        let b = make_sv_trials(&utts, Some(4), 11).unwrap();
        let c = make_sv_trials(&utts, Some(4), 12).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_eq!(a.len(), 8);
        assert!(a.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn trial_csv_round_trip() {
        let utts = [utt("a1", "a", "F"), utt("a2", "a", "F"), utt("b1", "b", "F")];
        let t = make_sv_trials(&utts, None, 0).unwrap();
        let csv = trials_to_csv(&t);
        assert!(csv.starts_with("utt_a,utt_b,label\na1,a2,same-speaker\n"));
        assert_eq!(trials_from_csv(&csv).unwrap(), t);
    }

    #[test]
    fn pooling_examples() {
        assert_eq!(embed_utterance(&[vec![vec![0.6, 0.8]]], 1).unwrap(), vec![0.6, 0.8]);
        let v = embed_utterance(&[vec![vec![1.0, 0.0], vec![0.0, 1.0]]], 1).unwrap();
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert!((v[0] - h).abs() < 1e-15 && (v[1] - h).abs() < 1e-15);
        assert_eq!(embed_utterance(&[vec![vec![0.0, 0.0]]], 1).unwrap_err(), MetricError::ZeroNorm);
    }

    #[test]
    fn pooling_last_layers() {
        let layers = vec![vec![vec![100.0, 0.0]], vec![vec![1.0, 0.0]], vec![vec![0.0, 1.0]]];
        let v = embed_utterance(&layers, 2).unwrap();
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert!((v[0] - h).abs() < 1e-15);
        assert!(matches!(embed_utterance(&layers, 4), Err(MetricError::InvalidLastK { .. })));
        let ragged = vec![vec![vec![1.0, 0.0]], vec![vec![1.0]]];
        assert!(matches!(embed_utterance(&ragged, 2), Err(MetricError::DimensionMismatch { .. })));
    }

    #[test]
    fn centroid_examples() {
        let mut m = BTreeMap::new();
        m.insert("be".to_string(), vec![vec![3.0, 4.0]]);
        m.insert("ru".to_string(), vec![vec![0.0, 0.0]]);
        let d = centroid_distances(&m).unwrap();
        assert_eq!(d, vec![CentroidDistance { lang_a: "be".into(), lang_b: "ru".into(), distance: 5.0 }]);
        m.insert("ru".to_string(), vec![vec![3.0, 4.0]]);
        assert_eq!(centroid_distances(&m).unwrap()[0].distance, 0.0);
        assert_eq!(centroid_distances(&BTreeMap::new()).unwrap_err(), MetricError::Empty);
    }

    #[test]
    fn embedding_file_forms() {
        let content = r#"{"id":"u1","speaker_id":"s1","gender":"F","language":"ru","vector":[3,4]}
{"id":"u2","speaker_id":"s1","gender":"F","language":"ru","vectors":[[1,0],[0,1]]}
{"id":"u3","speaker_id":"s2","gender":"F","language":"be","layers":[[[5,0]],[[0,2]]]}
"#;
        let utts = parse_embeddings(content, 1).unwrap();
        assert_eq!(utts[0].embedding.as_deref(), Some(&[0.6, 0.8][..]));
        assert_eq!(utts[2].embedding.as_deref(), Some(&[0.0, 1.0][..]));
        let trials = make_sv_trials(&utts, None, 0).unwrap();
        let scored = score_trials(&utts, &trials).unwrap();
        assert_eq!(scored.len(), 3);
        assert!(trials_auc(&scored).is_ok());
    }
}
