use std::sync::atomic::{AtomicU32, Ordering};

use proptest::prelude::*;
use styleforge::adapters::{
    backend_config, complete_with_retry, make_backend, make_classifier, make_embedder, make_llm, make_lm,
    make_seq2seq, make_translator, AdapterError, Backend, BackendKind, DecodingParams, EmbeddingAccess,
    Hyperparams, LlmClient, NoisyTranslator, RetryPolicy, TinyClassifier, Translator,
};
use styleforge::{LanguageTag, Polarity};

fn tiny() -> styleforge::adapters::BackendConfig {
    backend_config([("backend", "tiny-random")])
}

#[test]
fn every_kind_has_a_tiny_backend() {
    for kind in [
        BackendKind::Seq2seq,
        BackendKind::Classifier,
        BackendKind::Translator,
        BackendKind::Embedder,
        BackendKind::Lm,
        BackendKind::Llm,
    ] {
        assert!(make_backend(kind, &tiny()).is_ok(), "{kind}");
    }
    let seq = make_backend(BackendKind::Seq2seq, &backend_config([("backend", "tiny-random"), ("vocab", "64")]));
    assert!(matches!(seq, Ok(Backend::Seq2seq(_))));
}

#[test]
fn config_errors_are_typed() {
    let e = make_seq2seq(&backend_config([("backend", "mbart-large-50")])).err().unwrap();
    assert!(matches!(e, AdapterError::UnsupportedBackend { .. }), "{e}");
    let e = make_llm(&backend_config([])).err().unwrap();
    assert!(e.to_string().contains("missing required config key"), "{e}");
    let e = make_classifier(&backend_config([])).err().unwrap();
    assert!(matches!(e, AdapterError::MissingConfigKey { .. }));
    let e = make_embedder(&backend_config([("backend", "tiny-random"), ("device", "cuda:0")])).err().unwrap();
    assert!(matches!(e, AdapterError::InvalidConfig { .. }));
    let e = make_llm(&backend_config([("endpoint", "http://x"), ("model", "m"), ("api_key", "k")])).err().unwrap();
    assert!(e.to_string().contains("environment"), "{e}");
}

#[test]
fn hyperparameter_defaults() {
    let h = Hyperparams::default();
    assert_eq!((h.learning_rate, h.dropout, h.l2_strength, h.epochs), (1e-5, 0.1, 0.01, 30));
    assert_eq!(Hyperparams::for_language(LanguageTag::Mr).batch_size, 16);
    assert_eq!(Hyperparams::for_language(LanguageTag::Hi).batch_size, 3);
    assert!(Hyperparams { epochs: 0, ..h }.validate().is_err());
    assert!(Hyperparams { learning_rate: 0.0, ..h }.validate().is_err());
}

#[test]
fn seq2seq_loss_decreases_on_identity_pairs() {
    let mut m = make_seq2seq(&backend_config([("backend", "tiny-random"), ("vocab", "64")])).unwrap();
    let pairs: Vec<(String, String)> = (0..10)
        .map(|i| {
            let s = format!("word{i} and more words {}", i * 3);
            (s.clone(), s)
        })
        .collect();
    let hyper = Hyperparams { epochs: 2, learning_rate: 0.05, ..Hyperparams::default() };
    let fit = m.fit(&pairs, &hyper, 7).unwrap();
    assert_eq!(fit.epoch_losses.len(), 2);
    assert!(fit.epoch_losses[1] < fit.epoch_losses[0], "{:?}", fit.epoch_losses);
    let inputs: Vec<String> = pairs.iter().map(|p| p.0.clone()).collect();
    let out = m.generate(&inputs, &DecodingParams::default()).unwrap();
    assert_eq!(out.len(), inputs.len());
}

#[test]
fn generate_requires_fitting() {
    let m = make_seq2seq(&tiny()).unwrap();
    assert!(!m.is_fitted());
    assert!(m.generate(&["a b".into()], &DecodingParams::default()).is_err());
}

#[test]
fn translators_keep_text_non_empty() {
    let t = make_translator(&backend_config([("backend", "identity")])).unwrap();
    assert_eq!(t.translate("hello there", LanguageTag::En, LanguageTag::Hi).unwrap(), "hello there");
    let noisy = NoisyTranslator::new(0.9, 3).unwrap();
    for s in ["a", "one two three", "x y"] {
        assert!(!noisy.translate(s, LanguageTag::En, LanguageTag::Te).unwrap().trim().is_empty());
    }
}

#[test]
fn lm_handles_long_repetitions() {
    let lm = make_lm(&tiny()).unwrap();
    for n in [1usize, 10, 1000, 20000] {
        let text = vec!["ha"; n].join(" ");
        let p = lm.perplexity(&text).unwrap();
        assert!(p.is_finite() && p > 0.0, "{n}: {p}");
    }
}

struct Flaky {
    failures: u32,
    calls: AtomicU32,
    quota: bool,
}

impl LlmClient for Flaky {
    fn backend_id(&self) -> &str {
        "flaky"
    }
    fn complete(&self, prompt: &str, _: &DecodingParams) -> Result<String, AdapterError> {
        let n = self.calls.fetch_add(1, Ordering::SeqCst);
        if n < self.failures {
            if self.quota {
                Err(AdapterError::Quota("429".into()))
            } else {
                Err(AdapterError::Transport("reset".into()))
            }
        } else {
            Ok(prompt.to_uppercase())
        }
    }
}

#[test]
fn retry_contract() {
    let c = Flaky { failures: 1, calls: AtomicU32::new(0), quota: false };
    let (text, retries) = complete_with_retry(&c, "hi", &DecodingParams::default(), &RetryPolicy::no_backoff(3)).unwrap();
    assert_eq!((text.as_str(), retries), ("HI", 1));

    let c = Flaky { failures: 10, calls: AtomicU32::new(0), quota: true };
    let e = complete_with_retry(&c, "hi", &DecodingParams::default(), &RetryPolicy::no_backoff(3)).unwrap_err();
    match e {
        AdapterError::RetriesExhausted { attempts, last } => {
            assert_eq!(attempts, 3);
            assert!(matches!(*last, AdapterError::Quota(_)));
        }
        other => panic!("unexpected {other}"),
    }
    assert_eq!(c.calls.load(Ordering::SeqCst), 3);
}

#[test]
fn classifier_fit_and_save_round_trip() {
    let mut c = make_classifier(&tiny()).unwrap();
    let texts: Vec<String> = vec!["good food".into(), "bad food".into(), "great staff".into(), "rude staff".into()];
    let labels = [Polarity::Positive, Polarity::Negative, Polarity::Positive, Polarity::Negative];
    c.fit(&texts, &labels, &Hyperparams { epochs: 5, learning_rate: 0.1, ..Hyperparams::default() }, 1).unwrap();
    let restored = styleforge::adapters::load_classifier(c.save().unwrap()).unwrap();
    for t in &texts {
        assert_eq!(c.predict_proba(t).unwrap(), restored.predict_proba(t).unwrap());
    }
}

fn word() -> impl Strategy<Value = String> {
    "[a-zA-Zअ-ह#]{1,9}"
}

proptest! {
    #[test]
    fn classifier_probabilities_sum_to_one(text in "[a-z ]{0,40}", seed in 0u64..50) {
        let c = make_classifier(&backend_config([("backend", "tiny-random"), ("seed", &seed.to_string())])).unwrap();
        let p = c.predict_proba(&text).unwrap();
        prop_assert!((p[0] + p[1] - 1.0).abs() < 1e-6);
        prop_assert!(p.iter().all(|x| (0.0..=1.0).contains(x)));
    }

    #[test]
    fn tokens_round_trip(words in proptest::collection::vec(word(), 1..8), piece_len in 1usize..5) {
        let c = TinyClassifier::new(64, 4, 4, piece_len, 0, None).unwrap();
        let text = words.join(" ");
        let toks = c.tokenize(&text);
        prop_assert_eq!(c.detokenize(&toks), text);
    }

    #[test]
    fn embeddings_are_deterministic(text in "[a-z ]{0,40}") {
        let e = make_embedder(&tiny()).unwrap();
        let a = e.embed(&text).unwrap();
        let b = e.embed(&text).unwrap();
        prop_assert_eq!(a.len(), e.dim());
        prop_assert_eq!(a, b);
    }

    #[test]
    fn perplexity_is_positive(text in "[a-z ]{0,60}") {
        let lm = make_lm(&tiny()).unwrap();
        let p = lm.perplexity(&text).unwrap();
        prop_assert!(p.is_finite() && p > 0.0);
    }
}
