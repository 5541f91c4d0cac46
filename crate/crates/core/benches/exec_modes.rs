use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use styleforge::adapters::{HashedEmbedder, LexiconClassifier};
use styleforge::attribution::{mask_corpus_with, MaskingConfig};
use styleforge::metrics::{bleu_detailed, content_similarity_with};
use styleforge::{Exec, Polarity};

const WORDS: [&str; 12] = [
    "the", "food", "was", "good", "bad", "service", "slow", "great", "staff", "rude", "price", "fair",
];

fn sentences(n: usize, salt: usize) -> Vec<String> {
    (0..n)
        .map(|i| {
            (0..12)
                .map(|j| WORDS[(i * 7 + j * 5 + salt) % WORDS.len()])
                .collect::<Vec<_>>()
                .join(" ")
        })
        .collect()
}

fn modes() -> [(&'static str, Exec); 2] {
    [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)]
}

fn bench_bleu(c: &mut Criterion) {
    let cands = sentences(2000, 0);
    let refs = sentences(2000, 3);
    let mut g = c.benchmark_group("bleu");
    for (name, exec) in modes() {
        g.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| bleu_detailed(exec, black_box(&cands), black_box(&refs)).unwrap())
        });
    }
    g.finish();
}

fn bench_masking(c: &mut Criterion) {
    let clf = LexiconClassifier::with_weights(
        [("good", 2.0), ("great", 2.5), ("bad", -2.0), ("rude", -2.5), ("slow", -1.0)]
            .map(|(w, s)| (w.to_string(), s)),
        0.0,
    );
    let texts = sentences(200, 1);
    let cfg = MaskingConfig::default();
    let mut g = c.benchmark_group("mask_corpus");
    g.sample_size(20);
    for (name, exec) in modes() {
        g.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| mask_corpus_with(exec, &clf, black_box(&texts), Polarity::Positive, &cfg).unwrap())
        });
    }
    g.finish();
}

fn bench_similarity(c: &mut Criterion) {
    let emb = HashedEmbedder::new(256, 7).unwrap();
    let a = sentences(2000, 0);
    let b_ = sentences(2000, 5);
    let mut g = c.benchmark_group("content_similarity");
    for (name, exec) in modes() {
        g.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| content_similarity_with(exec, &emb, black_box(&a), black_box(&b_)).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, bench_bleu, bench_masking, bench_similarity);
criterion_main!(benches);
