use super::{word_spans, AdapterError, LmScorer};
use crate::util;

/// Unigram language model with hash-derived token probabilities in
/// [0.02, 0.92). Perplexity is `exp(mean(-ln p))`, always finite and ≥ 1.
#[derive(Debug, Clone)]
pub struct HashedUnigramLm {
    seed: u64,
}

impl HashedUnigramLm {
    pub fn new(seed: u64) -> Self {
        HashedUnigramLm { seed }
    }

    fn prob(&self, token: &str) -> f64 {
        let u = util::unit_from_hash(util::fnv1a_parts(&[token.as_bytes(), &self.seed.to_le_bytes()]));
        0.02 + 0.9 * u
    }
}

impl LmScorer for HashedUnigramLm {
    fn backend_id(&self) -> &str {
        "tiny-random"
    }

    fn perplexity(&self, text: &str) -> Result<f64, AdapterError> {
        let mut nll = 0.0;
        let mut n = 0usize;
        for (a, b) in word_spans(text) {
            nll -= self.prob(&text[a..b]).ln();
            n += 1;
        }
        // end-of-sentence token, so empty text still has a defined score
        nll -= self.prob("</s>").ln();
        n += 1;
        Ok((nll / n as f64).exp())
    }
}
