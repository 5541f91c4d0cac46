use super::{word_spans, AdapterError, Translator};
use crate::corpus::LanguageTag;
use crate::util;

/// Returns its input unchanged.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityTranslator;

impl Translator for IdentityTranslator {
    fn backend_id(&self) -> &str {
        "identity"
    }

    fn translate(&self, text: &str, _src: LanguageTag, _tgt: LanguageTag) -> Result<String, AdapterError> {
        Ok(text.to_string())
    }
}

/// Offline stand-in for an MT system: deterministically drops a fraction of
/// words per (word, src, tgt) hash, so round trips behave like lossy
/// paraphrases. The first word is always kept, so output is never empty.
#[derive(Debug, Clone)]
pub struct NoisyTranslator {
    drop: f64,
    seed: u64,
}

impl NoisyTranslator {
    pub fn new(drop: f64, seed: u64) -> Result<Self, AdapterError> {
        if !(0.0..1.0).contains(&drop) {
            return Err(AdapterError::InvalidConfig {
                key: "drop".into(),
                message: "must be in [0, 1)".into(),
            });
        }
        Ok(NoisyTranslator { drop, seed })
    }
}

impl Translator for NoisyTranslator {
    fn backend_id(&self) -> &str {
        "tiny-random"
    }

    fn translate(&self, text: &str, src: LanguageTag, tgt: LanguageTag) -> Result<String, AdapterError> {
        let words: Vec<&str> = word_spans(text).into_iter().map(|(a, b)| &text[a..b]).collect();
        let seed = self.seed.to_le_bytes();
        let kept: Vec<&str> = words
            .iter()
            .enumerate()
            .filter(|(i, w)| {
                *i == 0
                    || util::unit_from_hash(util::fnv1a_parts(&[
                        w.as_bytes(),
                        src.code().as_bytes(),
                        tgt.code().as_bytes(),
                        &seed,
                    ])) >= self.drop
            })
            .map(|(_, w)| *w)
            .collect();
        Ok(kept.join(" "))
    }
}
