use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{word_spans, AdapterError, DecodingParams, FitReport, Hyperparams, Seq2SeqModel};
use crate::corpus::LanguageTag;
use crate::util;

const UNK: usize = 0;
const COPY: usize = 1;
const UNK_TOKEN: &str = "<unk>";
const COPY_TOKEN: &str = "<copy>";

/// Small word-level transducer used as the offline generator backend.
///
/// Each output position is predicted from the position-aligned source word
/// plus a context vector built from registered special tokens (language
/// prefixes). A reserved `<copy>` action emits the source word verbatim, so
/// identity behaviour generalises to unseen words. Output length equals the
/// number of non-special source words, capped by `max_length`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TinySeq2Seq {
    backend: String,
    max_vocab: usize,
    dim: usize,
    languages: Option<Vec<LanguageTag>>,
    special: Vec<String>,
    vocab: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, usize>,
    src_emb: Vec<f64>,
    out_emb: Vec<f64>,
    out_bias: Vec<f64>,
    fitted: bool,
}

struct Encoded {
    context: Vec<usize>,
    words: Vec<usize>,
}

impl TinySeq2Seq {
    pub fn new(
        max_vocab: usize,
        dim: usize,
        languages: Option<Vec<LanguageTag>>,
    ) -> Result<Self, AdapterError> {
        if dim == 0 || max_vocab < 2 {
            return Err(AdapterError::InvalidConfig {
                key: "vocab/dim".into(),
                message: "need vocab >= 2 and dim >= 1".into(),
            });
        }
        Ok(TinySeq2Seq {
            backend: "tiny-random".into(),
            max_vocab,
            dim,
            languages,
            special: Vec::new(),
            vocab: vec![UNK_TOKEN.into(), COPY_TOKEN.into()],
            index: HashMap::new(),
            src_emb: Vec::new(),
            out_emb: Vec::new(),
            out_bias: Vec::new(),
            fitted: false,
        })
    }

    pub fn load(value: serde_json::Value) -> Result<Self, AdapterError> {
        let mut m: TinySeq2Seq =
            serde_json::from_value(value).map_err(|e| AdapterError::Load(e.to_string()))?;
        m.rebuild_index();
        Ok(m)
    }

    fn rebuild_index(&mut self) {
        self.index = self
            .vocab
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i))
            .collect();
    }

    fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    fn is_special(&self, w: &str) -> bool {
        self.special.iter().any(|s| s == w)
    }

    fn id(&self, w: &str) -> usize {
        self.index.get(w).copied().unwrap_or(UNK)
    }

    fn words<'a>(&self, text: &'a str) -> Vec<&'a str> {
        word_spans(text).into_iter().map(|(a, b)| &text[a..b]).collect()
    }

    fn encode(&self, text: &str) -> Encoded {
        let mut context = Vec::new();
        let mut words = Vec::new();
        for w in self.words(text) {
            if self.is_special(w) {
                context.push(self.id(w));
            } else {
                words.push(self.id(w));
            }
        }
        Encoded { context, words }
    }

    fn build_vocab(&mut self, examples: &[(String, String)]) {
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for (i, t) in examples {
            for w in self.words(i).into_iter().chain(self.words(t)) {
                *counts.entry(w).or_default() += 1;
            }
        }
        let mut words: Vec<(&str, usize)> = counts
            .into_iter()
            .filter(|(w, _)| !self.is_special(w) && *w != UNK_TOKEN && *w != COPY_TOKEN)
            .collect();
        // frequency desc, then lexical for determinism
        words.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
        let mut vocab: Vec<String> = vec![UNK_TOKEN.into(), COPY_TOKEN.into()];
        vocab.extend(self.special.iter().cloned());
        let room = self.max_vocab.saturating_sub(vocab.len());
        vocab.extend(words.into_iter().take(room).map(|(w, _)| w.to_string()));
        self.vocab = vocab;
        self.rebuild_index();
    }

    fn init_weights(&mut self, seed: u64) {
        let mut rng = util::rng(seed ^ 0x5eed_5e02);
        let normal = Normal::new(0.0, 0.1).expect("valid normal");
        let n = self.vocab_size() * self.dim;
        self.src_emb = (0..n).map(|_| normal.sample(&mut rng)).collect();
        self.out_emb = (0..n).map(|_| normal.sample(&mut rng)).collect();
        self.out_bias = vec![0.0; self.vocab_size()];
    }

    /// Target class per output position.
    fn targets(&self, input: &str, target: &str) -> (Encoded, Vec<(usize, usize)>) {
        let enc = self.encode(input);
        let src_words: Vec<&str> = self
            .words(input)
            .into_iter()
            .filter(|w| !self.is_special(w))
            .collect();
        let tgt_words: Vec<&str> = self
            .words(target)
            .into_iter()
            .filter(|w| !self.is_special(w))
            .collect();
        let mut positions = Vec::with_capacity(tgt_words.len());
        for (j, tw) in tgt_words.iter().enumerate() {
            let (src_id, class) = if src_words.is_empty() {
                (UNK, self.id(tw))
            } else {
                let i = j * src_words.len() / tgt_words.len();
                let class = if src_words[i] == *tw { COPY } else { self.id(tw) };
                (enc.words[i], class)
            };
            positions.push((src_id, class));
        }
        (enc, positions)
    }

    fn hidden(&self, src: usize, context: &[usize]) -> Vec<f64> {
        let d = self.dim;
        let mut h = self.src_emb[src * d..(src + 1) * d].to_vec();
        for &c in context {
            for (hk, ck) in h.iter_mut().zip(&self.src_emb[c * d..(c + 1) * d]) {
                *hk += ck;
            }
        }
        h
    }

    fn logits(&self, h: &[f64]) -> Vec<f64> {
        let d = self.dim;
        (0..self.vocab_size())
            .map(|k| {
                self.out_bias[k]
                    + self.out_emb[k * d..(k + 1) * d]
                        .iter()
                        .zip(h)
                        .map(|(a, b)| a * b)
                        .sum::<f64>()
            })
            .collect()
    }

    fn mean_loss(&self, data: &[(Encoded, Vec<(usize, usize)>)]) -> f64 {
        let mut total = 0.0;
        let mut n = 0usize;
        for (enc, positions) in data {
            for &(src, class) in positions {
                let p = softmax(&self.logits(&self.hidden(src, &enc.context)));
                total -= p[class].max(1e-300).ln();
                n += 1;
            }
        }
        if n == 0 {
            0.0
        } else {
            total / n as f64
        }
    }
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

impl Seq2SeqModel for TinySeq2Seq {
    fn backend_id(&self) -> &str {
        &self.backend
    }

    fn fit(
        &mut self,
        examples: &[(String, String)],
        hyper: &Hyperparams,
        seed: u64,
    ) -> Result<FitReport, AdapterError> {
        hyper.validate()?;
        if examples.is_empty() {
            return Err(AdapterError::InvalidData("no training examples".into()));
        }
        self.build_vocab(examples);
        self.init_weights(seed);
        let data: Vec<(Encoded, Vec<(usize, usize)>)> =
            examples.iter().map(|(i, t)| self.targets(i, t)).collect();

        let d = self.dim;
        let v = self.vocab_size();
        let mut rng = util::rng(seed);
        let mut order: Vec<usize> = (0..data.len()).collect();
        let mut losses = Vec::with_capacity(hyper.epochs);
        let mut g_src = vec![0.0; v * d];
        let mut g_out = vec![0.0; v * d];
        let mut g_bias = vec![0.0; v];

        for _ in 0..hyper.epochs {
            order.shuffle(&mut rng);
            for batch in order.chunks(hyper.batch_size) {
                g_src.iter_mut().for_each(|x| *x = 0.0);
                g_out.iter_mut().for_each(|x| *x = 0.0);
                g_bias.iter_mut().for_each(|x| *x = 0.0);
                let mut count = 0usize;
                for &ex in batch {
                    let (enc, positions) = &data[ex];
                    for &(src, class) in positions {
                        // word dropout: the source word is hidden behind <unk>
                        let src = if hyper.dropout > 0.0 && rng.random::<f64>() < hyper.dropout {
                            UNK
                        } else {
                            src
                        };
                        let h = self.hidden(src, &enc.context);
                        let mut dl = softmax(&self.logits(&h));
                        dl[class] -= 1.0;
                        let mut dh = vec![0.0; d];
                        for (k, g) in dl.iter().enumerate() {
                            g_bias[k] += g;
                            let row = &self.out_emb[k * d..(k + 1) * d];
                            for j in 0..d {
                                g_out[k * d + j] += g * h[j];
                                dh[j] += g * row[j];
                            }
                        }
                        for &s in std::iter::once(&src).chain(&enc.context) {
                            for j in 0..d {
                                g_src[s * d + j] += dh[j];
                            }
                        }
                        count += 1;
                    }
                }
                if count == 0 {
                    continue;
                }
                let scale = hyper.learning_rate / count as f64;
                let decay = hyper.learning_rate * hyper.l2_strength;
                for (w, g) in self.src_emb.iter_mut().zip(&g_src) {
                    *w -= scale * g + decay * *w;
                }
                for (w, g) in self.out_emb.iter_mut().zip(&g_out) {
                    *w -= scale * g + decay * *w;
                }
                for (w, g) in self.out_bias.iter_mut().zip(&g_bias) {
                    *w -= scale * g;
                }
            }
            let loss = self.mean_loss(&data);
            if !loss.is_finite() {
                return Err(AdapterError::Backend("training diverged".into()));
            }
            losses.push(loss);
        }
        self.fitted = true;
        Ok(FitReport {
            epoch_losses: losses,
        })
    }

    fn generate(
        &self,
        inputs: &[String],
        decoding: &DecodingParams,
    ) -> Result<Vec<String>, AdapterError> {
        if !self.fitted {
            return Err(AdapterError::NotFitted);
        }
        Ok(inputs
            .iter()
            .map(|text| {
                let enc = self.encode(text);
                let src_words: Vec<&str> = self
                    .words(text)
                    .into_iter()
                    .filter(|w| !self.is_special(w))
                    .collect();
                let mut out = Vec::with_capacity(src_words.len());
                for (i, &src) in enc.words.iter().enumerate().take(decoding.max_length) {
                    let logits = self.logits(&self.hidden(src, &enc.context));
                    let best = logits
                        .iter()
                        .enumerate()
                        .fold((0, f64::NEG_INFINITY), |acc, (k, &l)| {
                            if l > acc.1 {
                                (k, l)
                            } else {
                                acc
                            }
                        })
                        .0;
                    match best {
                        COPY => out.push(src_words[i].to_string()),
                        k if self.is_special(&self.vocab[k]) => {}
                        k => out.push(self.vocab[k].clone()),
                    }
                }
                out.join(" ")
            })
            .collect())
    }

    fn register_special_tokens(&mut self, tokens: &[String]) -> bool {
        for t in tokens {
            if !self.special.contains(t) {
                self.special.push(t.clone());
            }
        }
        true
    }

    fn special_tokens(&self) -> Vec<String> {
        self.special.clone()
    }

    fn is_fitted(&self) -> bool {
        self.fitted
    }

    fn supports_language(&self, language: LanguageTag) -> bool {
        self.languages
            .as_ref()
            .is_none_or(|ls| ls.contains(&language))
    }

    fn save(&self) -> Result<serde_json::Value, AdapterError> {
        serde_json::to_value(self).map_err(|e| AdapterError::Backend(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hyper(lr: f64, epochs: usize) -> Hyperparams {
        Hyperparams {
            learning_rate: lr,
            dropout: 0.1,
            l2_strength: 0.01,
            epochs,
            batch_size: 2,
        }
    }

    fn identity_pairs() -> Vec<(String, String)> {
        (0..10)
            .map(|i| {
                let s = format!("sentence number {i} is fine");
                (s.clone(), s)
            })
            .collect()
    }

    #[test]
    fn loss_decreases_on_identity_pairs() {
        let mut m = TinySeq2Seq::new(64, 16, None).unwrap();
        let r = m.fit(&identity_pairs(), &hyper(0.5, 2), 7).unwrap();
        assert_eq!(r.epoch_losses.len(), 2);
        assert!(r.epoch_losses[1] < r.epoch_losses[0], "{:?}", r.epoch_losses);
    }

    #[test]
    fn loss_decreases_even_at_default_learning_rate() {
        let mut m = TinySeq2Seq::new(64, 16, None).unwrap();
        let h = Hyperparams {
            dropout: 0.0,
            ..hyper(1e-5, 2)
        };
        let r = m.fit(&identity_pairs(), &h, 7).unwrap();
        assert!(r.epoch_losses[1] < r.epoch_losses[0]);
    }

    #[test]
    fn learns_to_copy_and_substitute() {
        let mut m = TinySeq2Seq::new(256, 16, None).unwrap();
        let mut ex = Vec::new();
        for i in 0..20 {
            ex.push((format!("food {i} was good"), format!("food {i} was bad")));
        }
        m.fit(&ex, &hyper(0.5, 40), 1).unwrap();
        let out = m
            .generate(&["food 99 was good".to_string()], &DecodingParams::default())
            .unwrap();
        assert_eq!(out[0], "food 99 was bad");
    }

    #[test]
    fn generate_requires_fit_and_respects_max_length() {
        let mut m = TinySeq2Seq::new(64, 8, None).unwrap();
        assert!(matches!(
            m.generate(&["a".into()], &DecodingParams::default()),
            Err(AdapterError::NotFitted)
        ));
        m.fit(&identity_pairs(), &hyper(0.5, 3), 0).unwrap();
        let d = DecodingParams {
            max_length: 2,
            ..DecodingParams::default()
        };
        let out = m.generate(&["a b c d".into()], &d).unwrap();
        assert!(out[0].split_whitespace().count() <= 2);
    }

    #[test]
    fn special_tokens_are_context_not_output() {
        let mut m = TinySeq2Seq::new(64, 8, None).unwrap();
        assert!(m.register_special_tokens(&["<hi>".into()]));
        let ex: Vec<(String, String)> = (0..5)
            .map(|i| (format!("<hi> w{i} x"), format!("w{i} x")))
            .collect();
        m.fit(&ex, &hyper(0.5, 30), 0).unwrap();
        let out = m.generate(&["<hi> w1 x".into()], &DecodingParams::default()).unwrap();
        assert_eq!(out[0], "w1 x");
    }

    #[test]
    fn save_load_round_trip_preserves_generations() {
        let mut m = TinySeq2Seq::new(64, 8, None).unwrap();
        m.fit(&identity_pairs(), &hyper(0.5, 3), 3).unwrap();
        let restored = TinySeq2Seq::load(m.save().unwrap()).unwrap();
        let inp = vec!["sentence number 3 is fine".to_string(), "unseen words".to_string()];
        let d = DecodingParams::default();
        assert_eq!(m.generate(&inp, &d).unwrap(), restored.generate(&inp, &d).unwrap());
    }
}
