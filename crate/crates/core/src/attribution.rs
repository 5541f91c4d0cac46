//! Style-word identification for masked style filling: integrated-gradients
//! word attributions from a sentiment classifier, threshold selection and
//! masking.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adapters::{word_spans, AdapterError, SentimentClassifier};
use crate::corpus::Polarity;
use crate::exec::Exec;

#[derive(Debug, Error)]
pub enum AttributionError {
    #[error("cannot attribute an empty sentence")]
    EmptySentence,
    #[error("attribution unsupported: classifier backend {0:?} exposes no embedding access")]
    Unsupported(String),
    #[error("mask index {index} out of range for {words} words")]
    IndexOutOfRange { index: usize, words: usize },
    #[error("invalid masking config: {0}")]
    InvalidConfig(String),
    #[error("sentence {index}: {source}")]
    AtSentence {
        index: usize,
        #[source]
        source: Box<AttributionError>,
    },
    #[error(transparent)]
    Adapter(#[from] AdapterError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MaskingConfig {
    pub threshold: f64,
    pub ig_steps: usize,
    pub mask_symbol: String,
}

impl Default for MaskingConfig {
    fn default() -> Self {
        MaskingConfig {
            threshold: 0.25,
            ig_steps: 50,
            mask_symbol: "<mask>".into(),
        }
    }
}

impl MaskingConfig {
    /// Threshold grid used when tuning the selection threshold.
    pub const THRESHOLD_GRID: [f64; 5] = [0.25, 0.35, 0.50, 0.65, 0.75];

    pub fn with_threshold(threshold: f64) -> Self {
        MaskingConfig {
            threshold,
            ..MaskingConfig::default()
        }
    }

    pub fn validate(&self) -> Result<(), AttributionError> {
        if self.ig_steps == 0 {
            return Err(AttributionError::InvalidConfig("ig_steps must be at least 1".into()));
        }
        if !(self.threshold >= 0.0 && self.threshold.is_finite()) {
            return Err(AttributionError::InvalidConfig("threshold must be >= 0".into()));
        }
        if self.mask_symbol.is_empty() || self.mask_symbol.chars().any(char::is_whitespace) {
            return Err(AttributionError::InvalidConfig(
                "mask_symbol must be a single non-empty word".into(),
            ));
        }
        Ok(())
    }
}

/// Word-level attributions toward `target_label`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenAttribution {
    pub tokens: Vec<String>,
    /// Normalized to [-1, 1] by the largest absolute word score.
    pub scores: Vec<f64>,
    /// Word scores before normalization; they sum to approximately
    /// `f(x) - f(baseline)`.
    pub raw_scores: Vec<f64>,
    pub target_label: Polarity,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskedSentence {
    pub original: String,
    pub masked: String,
    pub masked_word_indices: BTreeSet<usize>,
}

impl MaskedSentence {
    /// Puts the original words back at the recorded indices.
    pub fn unmask(&self) -> String {
        let originals: Vec<&str> = word_spans(&self.original)
            .into_iter()
            .map(|(a, b)| &self.original[a..b])
            .collect();
        replace_words(&self.masked, |i| {
            self.masked_word_indices.contains(&i).then(|| originals[i])
        })
    }
}

fn replace_words<'a>(text: &str, mut with: impl FnMut(usize) -> Option<&'a str>) -> String {
    let mut out = String::with_capacity(text.len());
    let mut last = 0;
    for (i, (a, b)) in word_spans(text).into_iter().enumerate() {
        out.push_str(&text[last..a]);
        out.push_str(with(i).unwrap_or(&text[a..b]));
        last = b;
    }
    out.push_str(&text[last..]);
    out
}

/// Integrated-gradients word attributions of `sentence` toward `source_label`.
///
/// Subword attributions are integrated along the straight line from the
/// classifier's zero baseline to the input embeddings with `ig_steps`
/// midpoint samples, summed per whitespace word and divided by the largest
/// absolute word score. A positive score means the word pushes the
/// classifier toward the sentence's own sentiment.
pub fn token_attributions(
    classifier: &dyn SentimentClassifier,
    sentence: &str,
    source_label: Polarity,
    cfg: &MaskingConfig,
) -> Result<TokenAttribution, AttributionError> {
    cfg.validate()?;
    let spans = word_spans(sentence);
    if spans.is_empty() {
        return Err(AttributionError::EmptySentence);
    }
    let access = classifier
        .embedding_access()
        .ok_or_else(|| AttributionError::Unsupported(classifier.backend_id().to_string()))?;
    let subwords = access.tokenize(sentence);
    let input = access.embed(&subwords);
    let baseline = access.baseline(&subwords);
    let delta: Vec<Vec<f64>> = input
        .iter()
        .zip(&baseline)
        .map(|(x, b)| x.iter().zip(b).map(|(x, b)| x - b).collect())
        .collect();

    let mut avg_grad: Vec<Vec<f64>> = input.iter().map(|v| vec![0.0; v.len()]).collect();
    let m = cfg.ig_steps;
    for k in 0..m {
        let alpha = (k as f64 + 0.5) / m as f64;
        let point: Vec<Vec<f64>> = baseline
            .iter()
            .zip(&delta)
            .map(|(b, d)| b.iter().zip(d).map(|(b, d)| b + alpha * d).collect())
            .collect();
        let (_, grad) = access.prob_and_grad(&point, source_label);
        for (acc, g) in avg_grad.iter_mut().zip(&grad) {
            for (a, g) in acc.iter_mut().zip(g) {
                *a += g / m as f64;
            }
        }
    }

    let mut raw = vec![0.0; spans.len()];
    for ((sw, d), g) in subwords.iter().zip(&delta).zip(&avg_grad) {
        let a: f64 = d.iter().zip(g).map(|(d, g)| d * g).sum();
        if let Some(slot) = raw.get_mut(sw.word) {
            *slot += a;
        }
    }
    let max_abs = raw.iter().fold(0.0f64, |m, s| m.max(s.abs()));
    let scores = if max_abs > 0.0 {
        raw.iter().map(|s| s / max_abs).collect()
    } else {
        vec![0.0; raw.len()]
    };
    Ok(TokenAttribution {
        tokens: spans.iter().map(|&(a, b)| sentence[a..b].to_string()).collect(),
        scores,
        raw_scores: raw,
        target_label: source_label,
    })
}

/// Indices whose normalized score reaches `threshold`.
pub fn select_style_tokens(attr: &TokenAttribution, threshold: f64) -> BTreeSet<usize> {
    attr.scores
        .iter()
        .enumerate()
        .filter(|(_, s)| **s >= threshold)
        .map(|(i, _)| i)
        .collect()
}

/// Replaces each selected whitespace word by one `mask_symbol`; spacing and
/// all other words are left untouched.
pub fn mask_tokens(
    sentence: &str,
    indices: &BTreeSet<usize>,
    mask_symbol: &str,
) -> Result<MaskedSentence, AttributionError> {
    let words = word_spans(sentence).len();
    if let Some(&bad) = indices.iter().find(|&&i| i >= words) {
        return Err(AttributionError::IndexOutOfRange { index: bad, words });
    }
    let masked = replace_words(sentence, |i| indices.contains(&i).then_some(mask_symbol));
    Ok(MaskedSentence {
        original: sentence.to_string(),
        masked,
        masked_word_indices: indices.clone(),
    })
}

/// Attribute, select and mask a single sentence.
pub fn mask_sentence(
    classifier: &dyn SentimentClassifier,
    sentence: &str,
    source_label: Polarity,
    cfg: &MaskingConfig,
) -> Result<MaskedSentence, AttributionError> {
    let attr = token_attributions(classifier, sentence, source_label, cfg)?;
    mask_tokens(sentence, &select_style_tokens(&attr, cfg.threshold), &cfg.mask_symbol)
}

pub fn mask_corpus(
    classifier: &dyn SentimentClassifier,
    sentences: &[String],
    source_label: Polarity,
    cfg: &MaskingConfig,
) -> Result<Vec<MaskedSentence>, AttributionError> {
    mask_corpus_with(Exec::default(), classifier, sentences, source_label, cfg)
}

/// [`mask_corpus`] with an explicit execution mode. Output order follows input
/// order; the first failing sentence (by index) is reported.
pub fn mask_corpus_with(
    exec: Exec,
    classifier: &dyn SentimentClassifier,
    sentences: &[String],
    source_label: Polarity,
    cfg: &MaskingConfig,
) -> Result<Vec<MaskedSentence>, AttributionError> {
    cfg.validate()?;
    exec.try_map(sentences, |i, s| {
        mask_sentence(classifier, s, source_label, cfg).map_err(|e| AttributionError::AtSentence {
            index: i,
            source: Box::new(e),
        })
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adapters::LexiconClassifier;

    fn toy() -> LexiconClassifier {
        LexiconClassifier::with_weights(
            [("terrible".to_string(), -3.0), ("food".to_string(), -0.2)],
            0.0,
        )
    }

    #[test]
    fn select_by_threshold() {
        let attr = TokenAttribution {
            tokens: vec!["a".into(), "b".into(), "c".into(), "d".into()],
            scores: vec![1.0, 0.3, -0.2, 0.1],
            raw_scores: vec![1.0, 0.3, -0.2, 0.1],
            target_label: Polarity::Negative,
        };
        assert_eq!(select_style_tokens(&attr, 0.25), BTreeSet::from([0, 1]));
        assert!(select_style_tokens(&attr, 1.01).is_empty());
    }

    #[test]
    fn mask_examples() {
        let m = mask_tokens("the food was terrible", &BTreeSet::from([3]), "<mask>").unwrap();
        assert_eq!(m.masked, "the food was <mask>");
        let m = mask_tokens("the food", &BTreeSet::new(), "<mask>").unwrap();
        assert_eq!(m.masked, m.original);
        let m = mask_tokens("bad bad", &BTreeSet::from([0, 1]), "<mask>").unwrap();
        assert_eq!(m.masked, "<mask> <mask>");
        assert_eq!(m.masked_word_indices.len(), 2);
        assert!(matches!(
            mask_tokens("one two", &BTreeSet::from([2]), "<mask>"),
            Err(AttributionError::IndexOutOfRange { index: 2, words: 2 })
        ));
    }

    #[test]
    fn masking_preserves_spacing_and_unmasks() {
        let m = mask_tokens("  so   bad ,  really", &BTreeSet::from([1, 3]), "<mask>").unwrap();
        assert_eq!(m.masked, "  so   <mask> ,  <mask>");
        assert_eq!(m.unmask(), m.original);
    }

    #[test]
    fn toy_word_gets_top_score() {
        let a = token_attributions(&toy(), "the food was terrible", Polarity::Negative, &MaskingConfig::default())
            .unwrap();
        assert_eq!(a.scores[3], 1.0);
        assert_eq!(a.scores[0], 0.0);
        let m = mask_sentence(&toy(), "the food was terrible", Polarity::Negative, &MaskingConfig::default())
            .unwrap();
        assert_eq!(m.masked, "the food was <mask>");
    }

    #[test]
    fn one_word_sentence_normalizes_to_one() {
        let a = token_attributions(&toy(), "terrible", Polarity::Negative, &MaskingConfig::default()).unwrap();
        assert_eq!(a.scores, vec![1.0]);
    }

    #[test]
    fn errors() {
        assert!(matches!(
            token_attributions(&toy(), "   ", Polarity::Negative, &MaskingConfig::default()),
            Err(AttributionError::EmptySentence)
        ));
        let bad = MaskingConfig { ig_steps: 0, ..MaskingConfig::default() };
        assert!(bad.validate().is_err());
        let e = mask_corpus(&toy(), &["ok".into(), "".into()], Polarity::Positive, &MaskingConfig::default())
            .unwrap_err();
        assert!(matches!(e, AttributionError::AtSentence { index: 1, .. }));
        assert!(mask_corpus(&toy(), &[], Polarity::Positive, &MaskingConfig::default()).unwrap().is_empty());
    }
}
