//! Automatic evaluation: transfer accuracy, BLEU, content similarity,
//! perplexity and their average, per direction and direction-averaged.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adapters::{AdapterError, LmScorer, SentenceEmbedder, SentimentClassifier};
use crate::corpus::{direction_view, Corpus, Direction, LanguageTag, Polarity};
use crate::exec::Exec;
use crate::util::round_to;

mod bleu;

pub use bleu::{bleu, bleu_detailed, BleuScore, MAX_ORDER};

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("empty outputs")]
    EmptyOutputs,
    #[error("length mismatch: {outputs} outputs vs {references} references")]
    LengthMismatch { outputs: usize, references: usize },
    #[error("missing outputs for direction {0}")]
    MissingDirection(Direction),
    #[error(transparent)]
    Adapter(#[from] AdapterError),
}

fn check_lengths(outputs: usize, references: usize) -> Result<(), MetricError> {
    if outputs != references {
        return Err(MetricError::LengthMismatch { outputs, references });
    }
    if outputs == 0 {
        return Err(MetricError::EmptyOutputs);
    }
    Ok(())
}

/// Percent of outputs whose predicted class is `target`.
pub fn transfer_accuracy(
    classifier: &dyn SentimentClassifier,
    outputs: &[String],
    target: Polarity,
) -> Result<f64, MetricError> {
    transfer_accuracy_with(Exec::default(), classifier, outputs, target)
}

pub fn transfer_accuracy_with(
    exec: Exec,
    classifier: &dyn SentimentClassifier,
    outputs: &[String],
    target: Polarity,
) -> Result<f64, MetricError> {
    if outputs.is_empty() {
        return Err(MetricError::EmptyOutputs);
    }
    let hits = exec.try_map(outputs, |_, o| classifier.predict(o).map(|p| p == target))?;
    Ok(100.0 * hits.iter().filter(|h| **h).count() as f64 / outputs.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Similarity {
    /// Mean cosine times 100, in [-100, 100].
    pub score: f64,
    /// Pairs where either embedding had zero norm; each contributed 0.
    pub zero_norm_pairs: usize,
}

fn cosine(a: &[f64], b: &[f64]) -> Option<f64> {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        None
    } else {
        Some((dot / (na * nb)).clamp(-1.0, 1.0))
    }
}

pub fn content_similarity(
    embedder: &dyn SentenceEmbedder,
    outputs: &[String],
    inputs: &[String],
) -> Result<Similarity, MetricError> {
    content_similarity_with(Exec::default(), embedder, outputs, inputs)
}

/// Mean embedding cosine between each output and its input, scaled to percent.
pub fn content_similarity_with(
    exec: Exec,
    embedder: &dyn SentenceEmbedder,
    outputs: &[String],
    inputs: &[String],
) -> Result<Similarity, MetricError> {
    check_lengths(outputs.len(), inputs.len())?;
    let idx: Vec<usize> = (0..outputs.len()).collect();
    let cos = exec.try_map(&idx, |_, &i| -> Result<Option<f64>, MetricError> {
        Ok(cosine(&embedder.embed(&outputs[i])?, &embedder.embed(&inputs[i])?))
    })?;
    let zero_norm_pairs = cos.iter().filter(|c| c.is_none()).count();
    let sum: f64 = cos.iter().map(|c| c.unwrap_or(0.0)).sum();
    Ok(Similarity {
        score: 100.0 * sum / outputs.len() as f64,
        zero_norm_pairs,
    })
}

/// Mean of per-sentence perplexities.
pub fn perplexity_score(lm: &dyn LmScorer, outputs: &[String]) -> Result<f64, MetricError> {
    perplexity_score_with(Exec::default(), lm, outputs)
}

pub fn perplexity_score_with(exec: Exec, lm: &dyn LmScorer, outputs: &[String]) -> Result<f64, MetricError> {
    if outputs.is_empty() {
        return Err(MetricError::EmptyOutputs);
    }
    let ppl = exec.try_map(outputs, |_, o| lm.perplexity(o))?;
    Ok(ppl.iter().sum::<f64>() / ppl.len() as f64)
}

/// `(acc + bleu + cs) / 3`, rounded to one decimal.
pub fn avg_score(acc: f64, bleu: f64, cs: f64) -> f64 {
    round_to((acc + bleu + cs) / 3.0, 1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectionMetrics {
    pub acc: f64,
    pub bleu: f64,
    pub cs: f64,
    pub ppl: f64,
    pub avg: f64,
    pub n: usize,
    #[serde(default)]
    pub bleu_smoothed: bool,
    #[serde(default)]
    pub zero_norm_pairs: usize,
    /// Outputs that were empty strings (flagged failed generations).
    #[serde(default)]
    pub empty_outputs: usize,
}

impl DirectionMetrics {
    pub fn from_scores(acc: f64, bleu: f64, cs: f64, ppl: f64, n: usize) -> Self {
        DirectionMetrics {
            acc,
            bleu,
            cs,
            ppl,
            avg: avg_score(acc, bleu, cs),
            n,
            bleu_smoothed: false,
            zero_norm_pairs: 0,
            empty_outputs: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub language: LanguageTag,
    pub methodology: String,
    pub acc: f64,
    pub bleu: f64,
    pub cs: f64,
    pub ppl: f64,
    pub avg: f64,
    pub per_direction: BTreeMap<Direction, DirectionMetrics>,
}

impl MetricReport {
    /// Top-level fields are the means of the directions present.
    pub fn from_directions(
        language: LanguageTag,
        methodology: impl Into<String>,
        per_direction: BTreeMap<Direction, DirectionMetrics>,
    ) -> Self {
        let k = per_direction.len().max(1) as f64;
        let mean = |f: fn(&DirectionMetrics) -> f64| per_direction.values().map(f).sum::<f64>() / k;
        let (acc, bleu, cs, ppl) = (mean(|d| d.acc), mean(|d| d.bleu), mean(|d| d.cs), mean(|d| d.ppl));
        MetricReport {
            language,
            methodology: methodology.into(),
            acc,
            bleu,
            cs,
            ppl,
            avg: avg_score(acc, bleu, cs),
            per_direction,
        }
    }

    /// A report carrying only direction-averaged scores (e.g. published tables).
    pub fn from_scores(
        language: LanguageTag,
        methodology: impl Into<String>,
        acc: f64,
        bleu: f64,
        cs: f64,
        ppl: f64,
    ) -> Self {
        MetricReport {
            language,
            methodology: methodology.into(),
            acc,
            bleu,
            cs,
            ppl,
            avg: avg_score(acc, bleu, cs),
            per_direction: BTreeMap::new(),
        }
    }
}

/// Which sentences BLEU compares outputs against.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BleuReference {
    /// The human-written target side of each pair.
    #[default]
    Target,
    /// The input sentence (self-BLEU).
    Input,
}

#[derive(Clone, Copy)]
pub struct Evaluators<'a> {
    pub classifier: &'a dyn SentimentClassifier,
    pub embedder: &'a dyn SentenceEmbedder,
    pub lm: &'a dyn LmScorer,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct EvalOptions {
    pub bleu_reference: BleuReference,
    pub exec: Exec,
}

pub fn evaluate_direction(
    outputs: &[String],
    inputs: &[String],
    targets: &[String],
    target_label: Polarity,
    ev: &Evaluators<'_>,
    opts: &EvalOptions,
) -> Result<DirectionMetrics, MetricError> {
    check_lengths(outputs.len(), inputs.len())?;
    check_lengths(outputs.len(), targets.len())?;
    let acc = transfer_accuracy_with(opts.exec, ev.classifier, outputs, target_label)?;
    let refs = match opts.bleu_reference {
        BleuReference::Target => targets,
        BleuReference::Input => inputs,
    };
    let b = bleu_detailed(opts.exec, outputs, refs)?;
    let cs = content_similarity_with(opts.exec, ev.embedder, outputs, inputs)?;
    let ppl = perplexity_score_with(opts.exec, ev.lm, outputs)?;
    Ok(DirectionMetrics {
        bleu_smoothed: b.smoothed,
        zero_norm_pairs: cs.zero_norm_pairs,
        empty_outputs: outputs.iter().filter(|o| o.trim().is_empty()).count(),
        ..DirectionMetrics::from_scores(acc, b.score, cs.score, ppl, outputs.len())
    })
}

/// Scores both directions of a run against `test` and averages them.
pub fn evaluate_run(
    outputs: &BTreeMap<Direction, Vec<String>>,
    test: &Corpus,
    methodology: &str,
    ev: &Evaluators<'_>,
    opts: &EvalOptions,
) -> Result<MetricReport, MetricError> {
    let mut per_direction = BTreeMap::new();
    for d in Direction::BOTH {
        let outs = outputs.get(&d).ok_or(MetricError::MissingDirection(d))?;
        let view = direction_view(test, d);
        let inputs: Vec<String> = view.iter().map(|e| e.input.clone()).collect();
        let targets: Vec<String> = view.into_iter().map(|e| e.target).collect();
        per_direction.insert(d, evaluate_direction(outs, &inputs, &targets, d.target(), ev, opts)?);
    }
    Ok(MetricReport::from_directions(test.language, methodology, per_direction))
}
