use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{
    word_spans, AdapterError, EmbeddingAccess, FitReport, Hyperparams, SentimentClassifier, Subword,
};
use crate::corpus::{LanguageTag, Polarity};
use crate::util;

/// Hashed-subword MLP classifier used as the offline sentiment backend.
///
/// Words are cut into pieces of at most `piece_len` characters (continuations
/// carry a `##` prefix), each piece indexes a hashed embedding row, the rows
/// are mean-pooled and passed through one tanh layer and a 2-way softmax.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TinyClassifier {
    backend: String,
    buckets: usize,
    dim: usize,
    hidden: usize,
    piece_len: usize,
    languages: Option<Vec<LanguageTag>>,
    emb: Vec<f64>,
    w1: Vec<f64>,
    b1: Vec<f64>,
    w2: Vec<f64>,
    b2: Vec<f64>,
    fitted: bool,
}

struct Forward {
    pooled: Vec<f64>,
    h: Vec<f64>,
    p: [f64; 2],
}

impl TinyClassifier {
    pub fn new(
        buckets: usize,
        dim: usize,
        hidden: usize,
        piece_len: usize,
        seed: u64,
        languages: Option<Vec<LanguageTag>>,
    ) -> Result<Self, AdapterError> {
        if buckets == 0 || dim == 0 || hidden == 0 || piece_len == 0 {
            return Err(AdapterError::InvalidConfig {
                key: "buckets/dim/hidden/piece_len".into(),
                message: "all must be positive".into(),
            });
        }
        let mut c = TinyClassifier {
            backend: "tiny-random".into(),
            buckets,
            dim,
            hidden,
            piece_len,
            languages,
            emb: Vec::new(),
            w1: Vec::new(),
            b1: Vec::new(),
            w2: Vec::new(),
            b2: Vec::new(),
            fitted: false,
        };
        c.init_weights(seed);
        Ok(c)
    }

    pub fn load(value: serde_json::Value) -> Result<Self, AdapterError> {
        serde_json::from_value(value).map_err(|e| AdapterError::Load(e.to_string()))
    }

    fn init_weights(&mut self, seed: u64) {
        let mut rng = util::rng(seed ^ 0xc1a5_51f1);
        let e = Normal::new(0.0, 0.3).expect("valid normal");
        let n1 = Normal::new(0.0, 1.0 / (self.dim as f64).sqrt()).expect("valid normal");
        let n2 = Normal::new(0.0, 1.0 / (self.hidden as f64).sqrt()).expect("valid normal");
        self.emb = (0..self.buckets * self.dim).map(|_| e.sample(&mut rng)).collect();
        self.w1 = (0..self.hidden * self.dim).map(|_| n1.sample(&mut rng)).collect();
        self.b1 = vec![0.0; self.hidden];
        self.w2 = (0..2 * self.hidden).map(|_| n2.sample(&mut rng)).collect();
        self.b2 = vec![0.0; 2];
    }

    fn bucket(&self, piece: &str) -> usize {
        (util::fnv1a(piece.as_bytes()) % self.buckets as u64) as usize
    }

    fn row(&self, bucket: usize) -> &[f64] {
        &self.emb[bucket * self.dim..(bucket + 1) * self.dim]
    }

    fn forward_pooled(&self, pooled: Vec<f64>, dropout_mask: Option<&[f64]>) -> Forward {
        let mut h = vec![0.0; self.hidden];
        for (k, hk) in h.iter_mut().enumerate() {
            let row = &self.w1[k * self.dim..(k + 1) * self.dim];
            let pre = self.b1[k] + row.iter().zip(&pooled).map(|(a, b)| a * b).sum::<f64>();
            *hk = pre.tanh();
            if let Some(mask) = dropout_mask {
                *hk *= mask[k];
            }
        }
        let mut logits = [self.b2[0], self.b2[1]];
        for (c, l) in logits.iter_mut().enumerate() {
            *l += self.w2[c * self.hidden..(c + 1) * self.hidden]
                .iter()
                .zip(&h)
                .map(|(a, b)| a * b)
                .sum::<f64>();
        }
        let m = logits[0].max(logits[1]);
        let e0 = (logits[0] - m).exp();
        let e1 = (logits[1] - m).exp();
        let z = e0 + e1;
        Forward {
            pooled,
            h,
            p: [e0 / z, e1 / z],
        }
    }

    fn pool(&self, embeddings: &[Vec<f64>]) -> Vec<f64> {
        let mut pooled = vec![0.0; self.dim];
        if embeddings.is_empty() {
            return pooled;
        }
        for e in embeddings {
            for (p, x) in pooled.iter_mut().zip(e) {
                *p += x;
            }
        }
        let n = embeddings.len() as f64;
        pooled.iter_mut().for_each(|p| *p /= n);
        pooled
    }

    /// Backpropagates d(objective)/d(logits) to the pooled vector, optionally
    /// accumulating parameter gradients.
    fn backward(
        &self,
        f: &Forward,
        dlogits: [f64; 2],
        mask: Option<&[f64]>,
        grads: Option<&mut Grads>,
    ) -> Vec<f64> {
        let mut dh = vec![0.0; self.hidden];
        for (c, dl) in dlogits.iter().enumerate() {
            for (k, dhk) in dh.iter_mut().enumerate() {
                *dhk += dl * self.w2[c * self.hidden + k];
            }
        }
        let mut dpre = vec![0.0; self.hidden];
        for k in 0..self.hidden {
            let m = mask.map_or(1.0, |m| m[k]);
            // h already includes the mask; recover tanh output for the derivative
            let t = if m == 0.0 { 0.0 } else { f.h[k] / m };
            dpre[k] = dh[k] * m * (1.0 - t * t);
        }
        if let Some(g) = grads {
            for c in 0..2 {
                g.b2[c] += dlogits[c];
                for k in 0..self.hidden {
                    g.w2[c * self.hidden + k] += dlogits[c] * f.h[k];
                }
            }
            for k in 0..self.hidden {
                g.b1[k] += dpre[k];
                for j in 0..self.dim {
                    g.w1[k * self.dim + j] += dpre[k] * f.pooled[j];
                }
            }
        }
        let mut dpooled = vec![0.0; self.dim];
        for k in 0..self.hidden {
            for (j, dp) in dpooled.iter_mut().enumerate() {
                *dp += dpre[k] * self.w1[k * self.dim + j];
            }
        }
        dpooled
    }
}

struct Grads {
    emb: Vec<(usize, Vec<f64>)>,
    w1: Vec<f64>,
    b1: Vec<f64>,
    w2: Vec<f64>,
    b2: Vec<f64>,
}

impl Grads {
    fn zeros(c: &TinyClassifier) -> Self {
        Grads {
            emb: Vec::new(),
            w1: vec![0.0; c.w1.len()],
            b1: vec![0.0; c.b1.len()],
            w2: vec![0.0; c.w2.len()],
            b2: vec![0.0; 2],
        }
    }
}

impl EmbeddingAccess for TinyClassifier {
    fn tokenize(&self, text: &str) -> Vec<Subword> {
        let mut out = Vec::new();
        for (wi, (a, b)) in word_spans(text).into_iter().enumerate() {
            let chars: Vec<char> = text[a..b].chars().collect();
            for (ci, chunk) in chars.chunks(self.piece_len).enumerate() {
                let s: String = chunk.iter().collect();
                let piece = if ci == 0 { s } else { format!("##{s}") };
                out.push(Subword { piece, word: wi });
            }
        }
        out
    }

    fn detokenize(&self, tokens: &[Subword]) -> String {
        let mut out = String::new();
        let mut last_word = None;
        for t in tokens {
            match last_word {
                Some(w) if w == t.word => out.push_str(t.piece.strip_prefix("##").unwrap_or(&t.piece)),
                Some(_) => {
                    out.push(' ');
                    out.push_str(&t.piece);
                }
                None => out.push_str(&t.piece),
            }
            last_word = Some(t.word);
        }
        out
    }

    fn embed(&self, tokens: &[Subword]) -> Vec<Vec<f64>> {
        tokens
            .iter()
            .map(|t| self.row(self.bucket(&t.piece)).to_vec())
            .collect()
    }

    fn prob_and_grad(&self, embeddings: &[Vec<f64>], label: Polarity) -> (f64, Vec<Vec<f64>>) {
        let f = self.forward_pooled(self.pool(embeddings), None);
        let l = label.class_index();
        let pl = f.p[l];
        // d p_l / d logit_c = p_l (1[c = l] - p_c)
        let mut dlogits = [0.0; 2];
        for (c, d) in dlogits.iter_mut().enumerate() {
            *d = pl * (if c == l { 1.0 } else { 0.0 } - f.p[c]);
        }
        let dpooled = self.backward(&f, dlogits, None, None);
        let n = embeddings.len().max(1) as f64;
        let per_token: Vec<f64> = dpooled.iter().map(|g| g / n).collect();
        (pl, embeddings.iter().map(|_| per_token.clone()).collect())
    }
}

impl SentimentClassifier for TinyClassifier {
    fn backend_id(&self) -> &str {
        &self.backend
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
        let buckets: Vec<Vec<usize>> = texts
            .iter()
            .map(|t| self.tokenize(t).iter().map(|s| self.bucket(&s.piece)).collect())
            .collect();
        let mut rng = util::rng(seed);
        let mut order: Vec<usize> = (0..texts.len()).collect();
        let mut losses = Vec::with_capacity(hyper.epochs);
        let keep = 1.0 - hyper.dropout;

        for _ in 0..hyper.epochs {
            order.shuffle(&mut rng);
            for batch in order.chunks(hyper.batch_size) {
                let mut g = Grads::zeros(self);
                for &i in batch {
                    let rows: Vec<Vec<f64>> =
                        buckets[i].iter().map(|&b| self.row(b).to_vec()).collect();
                    let mask: Vec<f64> = (0..self.hidden)
                        .map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
                        .collect();
                    let f = self.forward_pooled(self.pool(&rows), Some(&mask));
                    let y = labels[i].class_index();
                    let dlogits = [f.p[0] - (y == 0) as u8 as f64, f.p[1] - (y == 1) as u8 as f64];
                    let dpooled = self.backward(&f, dlogits, Some(&mask), Some(&mut g));
                    let n = buckets[i].len().max(1) as f64;
                    for &b in &buckets[i] {
                        g.emb.push((b, dpooled.iter().map(|x| x / n).collect()));
                    }
                }
                let scale = hyper.learning_rate / batch.len() as f64;
                let decay = 1.0 - hyper.learning_rate * hyper.l2_strength;
                for (w, gw) in self.w1.iter_mut().zip(&g.w1) {
                    *w = *w * decay - scale * gw;
                }
                for (w, gw) in self.w2.iter_mut().zip(&g.w2) {
                    *w = *w * decay - scale * gw;
                }
                for (w, gw) in self.b1.iter_mut().zip(&g.b1) {
                    *w -= scale * gw;
                }
                for (w, gw) in self.b2.iter_mut().zip(&g.b2) {
                    *w -= scale * gw;
                }
                for (b, gv) in g.emb {
                    let d = self.dim;
                    for (w, gw) in self.emb[b * d..(b + 1) * d].iter_mut().zip(&gv) {
                        *w = *w * decay - scale * gw;
                    }
                }
            }
            let loss = texts
                .iter()
                .zip(labels)
                .map(|(t, l)| {
                    let p = self.predict_proba(t).expect("tiny classifier never fails");
                    -p[l.class_index()].max(1e-300).ln()
                })
                .sum::<f64>()
                / texts.len() as f64;
            losses.push(loss);
        }
        self.fitted = true;
        Ok(FitReport {
            epoch_losses: losses,
        })
    }

    fn predict_proba(&self, text: &str) -> Result<[f64; 2], AdapterError> {
        let tokens = self.tokenize(text);
        let f = self.forward_pooled(self.pool(&self.embed(&tokens)), None);
        Ok(f.p)
    }

    fn embedding_access(&self) -> Option<&dyn EmbeddingAccess> {
        Some(self)
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
