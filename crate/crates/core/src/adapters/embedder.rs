use rand_distr::{Distribution, StandardNormal};

use super::{word_spans, AdapterError, SentenceEmbedder};
use crate::util;

/// Sentence embedding from hashed word and character-trigram features, each
/// feature mapped to a fixed pseudo-random Gaussian direction.
#[derive(Debug, Clone)]
pub struct HashedEmbedder {
    dim: usize,
    seed: u64,
}

impl HashedEmbedder {
    pub fn new(dim: usize, seed: u64) -> Result<Self, AdapterError> {
        if dim == 0 {
            return Err(AdapterError::InvalidConfig {
                key: "dim".into(),
                message: "must be positive".into(),
            });
        }
        Ok(HashedEmbedder { dim, seed })
    }

    fn add_feature(&self, acc: &mut [f64], feature: &str) {
        let h = util::fnv1a_parts(&[feature.as_bytes(), &self.seed.to_le_bytes()]);
        let mut rng = util::rng(h);
        for x in acc.iter_mut() {
            let v: f64 = StandardNormal.sample(&mut rng);
            *x += v;
        }
    }
}

impl SentenceEmbedder for HashedEmbedder {
    fn backend_id(&self) -> &str {
        "tiny-random"
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>, AdapterError> {
        let mut v = vec![0.0; self.dim];
        for (a, b) in word_spans(text) {
            let w = &text[a..b];
            self.add_feature(&mut v, &format!("w:{w}"));
            let padded: Vec<char> = format!("<{w}>").chars().collect();
            for tri in padded.windows(3) {
                let t: String = tri.iter().collect();
                self.add_feature(&mut v, &format!("c:{t}"));
            }
        }
        Ok(v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_fixed_dimension() {
        let e = HashedEmbedder::new(32, 1).unwrap();
        let a = e.embed("the food was great").unwrap();
        assert_eq!(a.len(), 32);
        assert_eq!(a, e.embed("the food was great").unwrap());
        assert_ne!(a, e.embed("the food was awful").unwrap());
        assert!(e.embed("").unwrap().iter().all(|x| *x == 0.0));
    }
}
