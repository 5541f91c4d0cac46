#![allow(dead_code)]

use std::path::Path;

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use styleforge::adapters::{LexiconClassifier, SentimentClassifier};
use styleforge::corpus::write_corpus;
use styleforge::{Corpus, LanguageTag, Polarity, StylePair};

pub const POSITIVE_WORDS: [&str; 4] = ["good", "great", "lovely", "friendly"];
pub const NEGATIVE_WORDS: [&str; 4] = ["bad", "awful", "terrible", "rude"];
pub const FILLER: [&str; 12] = [
    "the", "food", "was", "staff", "and", "service", "place", "very", "our", "table", "we", "it",
];

/// Brute-force corpus BLEU with list-based n-gram counting.
pub fn bleu_oracle(cands: &[String], refs: &[String]) -> f64 {
    let mut matches = [0u64; 4];
    let mut totals = [0u64; 4];
    let (mut c_len, mut r_len) = (0usize, 0usize);
    for (c, r) in cands.iter().zip(refs) {
        let c: Vec<&str> = c.split_whitespace().collect();
        let r: Vec<&str> = r.split_whitespace().collect();
        c_len += c.len();
        r_len += r.len();
        for n in 1..=4 {
            if c.len() < n {
                continue;
            }
            let mut seen: Vec<Vec<&str>> = Vec::new();
            for i in 0..=c.len() - n {
                let g = c[i..i + n].to_vec();
                totals[n - 1] += 1;
                if seen.contains(&g) {
                    continue;
                }
                let count_in = |xs: &[&str]| {
                    if xs.len() < n {
                        return 0;
                    }
                    (0..=xs.len() - n).filter(|&j| xs[j..j + n] == g[..]).count() as u64
                };
                matches[n - 1] += count_in(&c).min(count_in(&r));
                seen.push(g);
            }
        }
    }
    if c_len == 0 {
        return if r_len == 0 { 100.0 } else { 0.0 };
    }
    let mut log_sum = 0.0;
    for n in 0..4 {
        let p = if matches[n] == 0 {
            (matches[n] as f64 + 1.0) / (totals[n] as f64 + 1.0)
        } else {
            matches[n] as f64 / totals[n] as f64
        };
        log_sum += p.ln();
    }
    let bp = (1.0 - r_len as f64 / c_len as f64).min(0.0).exp();
    100.0 * bp * (log_sum / 4.0).exp()
}

fn ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].partial_cmp(&xs[b]).unwrap());
    let mut r = vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for k in i..=j {
            r[idx[k]] = avg;
        }
        i = j + 1;
    }
    r
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    let (ra, rb) = (ranks(a), ranks(b));
    let n = a.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = ra.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = rb.iter().map(|y| (y - mb).powi(2)).sum();
    if va == 0.0 || vb == 0.0 {
        return if va == vb { 1.0 } else { 0.0 };
    }
    cov / (va * vb).sqrt()
}

/// Probability drop for `label` when each word is deleted in turn.
pub fn leave_one_out(clf: &dyn SentimentClassifier, sentence: &str, label: Polarity) -> Vec<f64> {
    let words: Vec<&str> = sentence.split_whitespace().collect();
    let p = |t: &str| clf.predict_proba(t).unwrap()[label.class_index()];
    let full = p(sentence);
    (0..words.len())
        .map(|i| {
            let rest: Vec<&str> = words.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, w)| *w).collect();
            full - p(&rest.join(" "))
        })
        .collect()
}

/// Bag-of-words classifier with distinct weights per sentiment word.
pub fn toy_lexicon() -> LexiconClassifier {
    let mut weights = Vec::new();
    for (i, w) in POSITIVE_WORDS.iter().enumerate() {
        weights.push((w.to_string(), 1.0 + 0.5 * i as f64));
    }
    for (i, w) in NEGATIVE_WORDS.iter().enumerate() {
        weights.push((w.to_string(), -1.2 - 0.6 * i as f64));
    }
    weights.push(("very".to_string(), 0.15));
    LexiconClassifier::with_weights(weights, 0.1)
}

pub fn random_sentence(rng: &mut StdRng, len: usize) -> String {
    let all: Vec<&str> = FILLER.iter().chain(&POSITIVE_WORDS).chain(&NEGATIVE_WORDS).copied().collect();
    (0..len).map(|_| all[rng.random_range(0..all.len())]).collect::<Vec<_>>().join(" ")
}

/// Keyword-separable corpus: the positive side contains a positive word and
/// the negative side the matching negative word, surrounded by filler.
pub fn synthetic_corpus(lang: LanguageTag, n: usize, seed: u64) -> Corpus {
    let mut rng = StdRng::seed_from_u64(seed);
    let pairs = (0..n as u64)
        .map(|id| {
            let k = rng.random_range(0..POSITIVE_WORDS.len());
            let a = FILLER[rng.random_range(0..FILLER.len())];
            let b = FILLER[rng.random_range(0..FILLER.len())];
            let c = FILLER[rng.random_range(0..FILLER.len())];
            StylePair {
                id,
                language: lang,
                positive: format!("{a} {b} {} {c} {id}", POSITIVE_WORDS[k]),
                negative: format!("{a} {b} {} {c} {id}", NEGATIVE_WORDS[k]),
                original_polarity: if id % 2 == 0 { Polarity::Positive } else { Polarity::Negative },
            }
        })
        .collect();
    Corpus::new(lang, pairs).unwrap()
}

/// Writes `<code>.jsonl` for each language into `dir`.
pub fn write_corpora(dir: &Path, langs: &[LanguageTag], n: usize) {
    std::fs::create_dir_all(dir).unwrap();
    for &l in langs {
        let c = synthetic_corpus(l, n, 5);
        write_corpus(&styleforge::corpus::corpus_path(dir, l), &c).unwrap();
    }
}
