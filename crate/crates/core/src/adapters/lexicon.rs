use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{
    word_spans, AdapterError, EmbeddingAccess, FitReport, Hyperparams, SentimentClassifier, Subword,
};
use crate::corpus::Polarity;
use crate::util;

/// Bag-of-words logistic classifier: `p(positive) = σ(bias + Σ weight(word))`.
///
/// Each word is its own token and its one-dimensional "embedding" is its
/// weight, so unknown words coincide with the zero baseline.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct LexiconClassifier {
    pub weights: BTreeMap<String, f64>,
    pub bias: f64,
    #[serde(default)]
    fitted: bool,
}

impl LexiconClassifier {
    pub fn with_weights(weights: impl IntoIterator<Item = (String, f64)>, bias: f64) -> Self {
        LexiconClassifier {
            weights: weights.into_iter().collect(),
            bias,
            fitted: true,
        }
    }

    /// Parses `word:weight,word:weight`.
    pub fn parse_weights(spec: &str) -> Result<Self, AdapterError> {
        let mut weights = BTreeMap::new();
        for item in spec.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            let (w, v) = item.rsplit_once(':').ok_or_else(|| AdapterError::InvalidConfig {
                key: "weights".into(),
                message: format!("expected word:weight, got {item:?}"),
            })?;
            let v: f64 = v.parse().map_err(|_| AdapterError::InvalidConfig {
                key: "weights".into(),
                message: format!("bad weight in {item:?}"),
            })?;
            weights.insert(w.to_string(), v);
        }
        Ok(LexiconClassifier {
            weights,
            bias: 0.0,
            fitted: true,
        })
    }

    pub fn load(value: serde_json::Value) -> Result<Self, AdapterError> {
        #[derive(Deserialize)]
        struct Saved {
            weights: BTreeMap<String, f64>,
            bias: f64,
        }
        let s: Saved = serde_json::from_value(value).map_err(|e| AdapterError::Load(e.to_string()))?;
        Ok(Self::with_weights(s.weights, s.bias))
    }

    fn weight(&self, w: &str) -> f64 {
        self.weights.get(w).copied().unwrap_or(0.0)
    }

    fn words<'a>(&self, text: &'a str) -> Vec<&'a str> {
        word_spans(text).into_iter().map(|(a, b)| &text[a..b]).collect()
    }
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

impl EmbeddingAccess for LexiconClassifier {
    fn tokenize(&self, text: &str) -> Vec<Subword> {
        self.words(text)
            .into_iter()
            .enumerate()
            .map(|(i, w)| Subword {
                piece: w.to_string(),
                word: i,
            })
            .collect()
    }

    fn detokenize(&self, tokens: &[Subword]) -> String {
        tokens
            .iter()
            .map(|t| t.piece.as_str())
            .collect::<Vec<_>>()
            .join(" ")
    }

    fn embed(&self, tokens: &[Subword]) -> Vec<Vec<f64>> {
        tokens.iter().map(|t| vec![self.weight(&t.piece)]).collect()
    }

    fn prob_and_grad(&self, embeddings: &[Vec<f64>], label: Polarity) -> (f64, Vec<Vec<f64>>) {
        let z = self.bias + embeddings.iter().map(|e| e[0]).sum::<f64>();
        let pp = sigmoid(z);
        let slope = pp * (1.0 - pp);
        let (p, g) = match label {
            Polarity::Positive => (pp, slope),
            Polarity::Negative => (1.0 - pp, -slope),
        };
        (p, embeddings.iter().map(|_| vec![g]).collect())
    }
}

impl SentimentClassifier for LexiconClassifier {
    fn backend_id(&self) -> &str {
        "lexicon"
    }

    fn fit(
        &mut self,
        texts: &[String],
        labels: &[Polarity],
        hyper: &Hyperparams,
        seed: u64,
    ) -> Result<FitReport, AdapterError> {
        hyper.validate()?;
        if texts.is_empty() || texts.len() != labels.len() {
            return Err(AdapterError::InvalidData(format!(
                "{} texts for {} labels",
                texts.len(),
                labels.len()
            )));
        }
        let docs: Vec<Vec<String>> = texts
            .iter()
            .map(|t| self.words(t).into_iter().map(str::to_string).collect())
            .collect();
        let mut rng = util::rng(seed);
        let mut order: Vec<usize> = (0..docs.len()).collect();
        let mut losses = Vec::new();
        for _ in 0..hyper.epochs {
            order.shuffle(&mut rng);
            for batch in order.chunks(hyper.batch_size) {
                let mut grads: BTreeMap<String, f64> = BTreeMap::new();
                let mut gb = 0.0;
                for &i in batch {
                    let z = self.bias + docs[i].iter().map(|w| self.weight(w)).sum::<f64>();
                    let y = if labels[i] == Polarity::Positive { 1.0 } else { 0.0 };
                    let d = sigmoid(z) - y;
                    gb += d;
                    for w in &docs[i] {
                        *grads.entry(w.clone()).or_default() += d;
                    }
                }
                let scale = hyper.learning_rate / batch.len() as f64;
                self.bias -= scale * gb;
                for (w, g) in grads {
                    let cur = self.weight(&w);
                    let next = cur * (1.0 - hyper.learning_rate * hyper.l2_strength) - scale * g;
                    self.weights.insert(w, next);
                }
            }
            let loss = docs
                .iter()
                .zip(labels)
                .map(|(d, l)| {
                    let p = sigmoid(self.bias + d.iter().map(|w| self.weight(w)).sum::<f64>());
                    let pl = if *l == Polarity::Positive { p } else { 1.0 - p };
                    -pl.max(1e-300).ln()
                })
                .sum::<f64>()
                / docs.len() as f64;
            losses.push(loss);
        }
        self.fitted = true;
        Ok(FitReport {
            epoch_losses: losses,
        })
    }

    fn predict_proba(&self, text: &str) -> Result<[f64; 2], AdapterError> {
        let z = self.bias + self.words(text).iter().map(|w| self.weight(w)).sum::<f64>();
        let p = sigmoid(z);
        Ok([1.0 - p, p])
    }

    fn embedding_access(&self) -> Option<&dyn EmbeddingAccess> {
        Some(self)
    }

    fn is_fitted(&self) -> bool {
        self.fitted
    }

    fn save(&self) -> Result<serde_json::Value, AdapterError> {
        Ok(serde_json::json!({
            "backend": "lexicon",
            "weights": self.weights,
            "bias": self.bias,
        }))
    }
}
