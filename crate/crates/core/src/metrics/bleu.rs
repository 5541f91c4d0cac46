use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::MetricError;
use crate::exec::Exec;

pub const MAX_ORDER: usize = 4;

/// Corpus BLEU with its sufficient statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BleuScore {
    /// 0 to 100.
    pub score: f64,
    /// Clipped n-gram matches for n = 1..4.
    pub matches: [u64; MAX_ORDER],
    /// Candidate n-gram counts for n = 1..4.
    pub totals: [u64; MAX_ORDER],
    /// Precisions actually used, after smoothing.
    pub precisions: [f64; MAX_ORDER],
    pub brevity_penalty: f64,
    pub candidate_len: u64,
    pub reference_len: u64,
    /// True when at least one precision was zero and got add-one smoothing.
    pub smoothed: bool,
}

#[derive(Debug, Clone, Copy, Default)]
struct Stats {
    matches: [u64; MAX_ORDER],
    totals: [u64; MAX_ORDER],
    cand_len: u64,
    ref_len: u64,
}

fn ngram_counts<'a>(tokens: &'a [&'a str], n: usize) -> HashMap<&'a [&'a str], u64> {
    let mut m = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *m.entry(w).or_insert(0) += 1;
        }
    }
    m
}

fn sentence_stats(candidate: &str, reference: &str) -> Stats {
    let c: Vec<&str> = candidate.split_whitespace().collect();
    let r: Vec<&str> = reference.split_whitespace().collect();
    let mut s = Stats {
        cand_len: c.len() as u64,
        ref_len: r.len() as u64,
        ..Stats::default()
    };
    for n in 1..=MAX_ORDER {
        let cc = ngram_counts(&c, n);
        let rc = ngram_counts(&r, n);
        s.totals[n - 1] = c.len().saturating_sub(n - 1) as u64;
        s.matches[n - 1] = cc
            .iter()
            .map(|(g, k)| (*k).min(rc.get(g).copied().unwrap_or(0)))
            .sum();
    }
    s
}

pub fn bleu(candidates: &[String], references: &[String]) -> Result<f64, MetricError> {
    Ok(bleu_detailed(Exec::default(), candidates, references)?.score)
}

/// Whitespace-tokenized corpus BLEU over n = 1..4 with uniform weights.
/// A zero precision `m/t` is replaced by `(m+1)/(t+1)`; the brevity penalty is
/// `exp(min(0, 1 - r/c))`. An all-empty candidate side scores 0, or 100
/// when the references are all empty too.
pub fn bleu_detailed(
    exec: Exec,
    candidates: &[String],
    references: &[String],
) -> Result<BleuScore, MetricError> {
    if candidates.len() != references.len() {
        return Err(MetricError::LengthMismatch {
            outputs: candidates.len(),
            references: references.len(),
        });
    }
    if candidates.is_empty() {
        return Err(MetricError::EmptyOutputs);
    }
    let idx: Vec<usize> = (0..candidates.len()).collect();
    let total = exec
        .map(&idx, |&i| sentence_stats(&candidates[i], &references[i]))
        .into_iter()
        .fold(Stats::default(), |mut a, s| {
            for n in 0..MAX_ORDER {
                a.matches[n] += s.matches[n];
                a.totals[n] += s.totals[n];
            }
            a.cand_len += s.cand_len;
            a.ref_len += s.ref_len;
            a
        });

    let mut smoothed = false;
    let mut precisions = [0.0; MAX_ORDER];
    for n in 0..MAX_ORDER {
        let (m, t) = (total.matches[n], total.totals[n]);
        precisions[n] = if m == 0 {
            smoothed = true;
            1.0 / (t as f64 + 1.0)
        } else {
            m as f64 / t as f64
        };
    }
    let (c, r) = (total.cand_len as f64, total.ref_len as f64);
    let brevity_penalty = match (c == 0.0, r == 0.0) {
        (true, true) => 1.0,
        (true, false) => 0.0,
        _ => (1.0 - r / c).min(0.0).exp(),
    };
    let score = if c == 0.0 {
        100.0 * brevity_penalty
    } else {
        let log_mean = precisions.iter().map(|p| p.ln()).sum::<f64>() / MAX_ORDER as f64;
        100.0 * brevity_penalty * log_mean.exp()
    };
    Ok(BleuScore {
        score,
        matches: total.matches,
        totals: total.totals,
        precisions,
        brevity_penalty,
        candidate_len: total.cand_len,
        reference_len: total.ref_len,
        smoothed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(xs: &[&str]) -> Vec<String> {
        xs.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn identity_is_exactly_100() {
        let x = v(&["the cat sat on the mat", "a", "", "hello world"]);
        assert_eq!(bleu(&x, &x).unwrap(), 100.0);
    }

    #[test]
    fn hand_computed_smoothed_value() {
        let b = bleu_detailed(Exec::Sequential, &v(&["the the the"]), &v(&["the cat sat"])).unwrap();
        assert_eq!(b.matches, [1, 0, 0, 0]);
        assert_eq!(b.totals, [3, 2, 1, 0]);
        assert!(b.smoothed);
        let expect = 100.0 * (1.0f64 / 3.0 * 1.0 / 3.0 * 1.0 / 2.0 * 1.0).powf(0.25);
        assert!((b.score - expect).abs() < 1e-12);
    }

    #[test]
    fn brevity_penalty_half_length() {
        let b = bleu_detailed(Exec::Sequential, &v(&["a b"]), &v(&["a b c d"])).unwrap();
        assert!((b.brevity_penalty - (-1.0f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn errors_and_empty_candidates() {
        assert!(matches!(bleu(&v(&["a"]), &v(&[])), Err(MetricError::LengthMismatch { .. })));
        assert!(matches!(bleu(&[], &[]), Err(MetricError::EmptyOutputs)));
        assert_eq!(bleu(&v(&[""]), &v(&["a"])).unwrap(), 0.0);
        assert_eq!(bleu(&v(&["", ""]), &v(&["", ""])).unwrap(), 100.0);
    }
}
