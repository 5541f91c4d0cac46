//! Backend-agnostic model contracts.
//!
//! Pipelines only ever talk to the traits in this module. Concrete backends
//! are chosen by [`make_backend`] from a key/value configuration; every kind
//! has a small deterministic built-in backend (`tiny-random` and friends) so
//! experiments and tests run without downloading pretrained weights.

use std::collections::{BTreeMap, HashSet};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{LanguageTag, Polarity};

mod embedder;
mod lexicon;
mod llm_client;
mod lm;
mod tiny_classifier;
mod tiny_seq2seq;
mod translator;

pub use embedder::HashedEmbedder;
pub use lexicon::LexiconClassifier;
pub use llm_client::{complete_with_retry, CopyInputClient, EchoClient, RetryPolicy};
#[cfg(feature = "http")]
pub use llm_client::HttpChatClient;
pub use lm::HashedUnigramLm;
pub use tiny_classifier::TinyClassifier;
pub use tiny_seq2seq::TinySeq2Seq;
pub use translator::{IdentityTranslator, NoisyTranslator};

#[derive(Debug, Error)]
pub enum AdapterError {
    #[error("unsupported backend {id:?} for kind {kind}")]
    UnsupportedBackend { kind: BackendKind, id: String },
    #[error("missing required config key {key:?} for {kind} backend")]
    MissingConfigKey { kind: BackendKind, key: String },
    #[error("invalid config value for {key:?}: {message}")]
    InvalidConfig { key: String, message: String },
    #[error("model is not fitted")]
    NotFitted,
    #[error("invalid hyperparameters: {0}")]
    InvalidHyperparams(String),
    #[error("invalid training data: {0}")]
    InvalidData(String),
    #[error("attribution unsupported: classifier backend {0:?} exposes no embedding access")]
    AttributionUnsupported(String),
    #[error("transport error: {0}")]
    Transport(String),
    #[error("quota exceeded: {0}")]
    Quota(String),
    #[error("gave up after {attempts} attempts: {last}")]
    RetriesExhausted {
        attempts: u32,
        #[source]
        last: Box<AdapterError>,
    },
    #[error("backend failure: {0}")]
    Backend(String),
    #[error("cannot decode saved model: {0}")]
    Load(String),
}

impl AdapterError {
    /// Errors worth retrying for remote backends.
    pub fn is_retryable(&self) -> bool {
        matches!(self, AdapterError::Transport(_) | AdapterError::Quota(_))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Seq2seq,
    Classifier,
    Translator,
    Embedder,
    Lm,
    Llm,
}

impl std::fmt::Display for BackendKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            BackendKind::Seq2seq => "seq2seq",
            BackendKind::Classifier => "classifier",
            BackendKind::Translator => "translator",
            BackendKind::Embedder => "embedder",
            BackendKind::Lm => "lm",
            BackendKind::Llm => "llm",
        })
    }
}

/// Training hyperparameters shared by generators and classifiers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    pub learning_rate: f64,
    pub dropout: f64,
    pub l2_strength: f64,
    pub epochs: usize,
    pub batch_size: usize,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams {
            learning_rate: 1e-5,
            dropout: 0.1,
            l2_strength: 0.01,
            epochs: 30,
            batch_size: 3,
        }
    }
}

impl Hyperparams {
    /// Generator defaults with the language's tuned batch size.
    pub fn for_language(language: LanguageTag) -> Self {
        Hyperparams {
            batch_size: default_generator_batch(language),
            ..Hyperparams::default()
        }
    }

    /// Classifier defaults with the language's tuned batch size.
    pub fn classifier_for_language(language: LanguageTag) -> Self {
        Hyperparams {
            batch_size: default_classifier_batch(language),
            ..Hyperparams::default()
        }
    }

    pub fn validate(&self) -> Result<(), AdapterError> {
        let bad = |m: &str| Err(AdapterError::InvalidHyperparams(m.to_string()));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must be in [0, 1)");
        }
        if !(self.l2_strength >= 0.0 && self.l2_strength.is_finite()) {
            return bad("l2_strength must be non-negative");
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        Ok(())
    }
}

/// Best batch size per language for the parallel generator (highest AVG,
/// smallest batch on ties) from the batch-size sweep.
pub fn default_generator_batch(language: LanguageTag) -> usize {
    match language {
        LanguageTag::Mr => 16,
        _ => 3,
    }
}

/// Best batch size per language for the sentiment classifier sweep.
pub fn default_classifier_batch(language: LanguageTag) -> usize {
    match language {
        LanguageTag::En => 1,
        LanguageTag::Hi => 16,
        LanguageTag::Mag => 64,
        LanguageTag::Ml => 1,
        LanguageTag::Mr => 64,
        LanguageTag::Or => 1,
        LanguageTag::Pa => 4,
        LanguageTag::Te => 64,
        LanguageTag::Ur => 3,
    }
}

/// Decoding settings for generation and LLM completion. Defaults are greedy
/// decoding, at most 128 tokens, temperature 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecodingParams {
    pub max_length: usize,
    pub beam_size: usize,
    pub temperature: f64,
}

impl Default for DecodingParams {
    fn default() -> Self {
        DecodingParams {
            max_length: 128,
            beam_size: 1,
            temperature: 0.0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub epoch_losses: Vec<f64>,
}

pub trait Seq2SeqModel: Send + Sync {
    fn backend_id(&self) -> &str;

    /// Fits on (input, target) pairs. Losses are reported once per epoch.
    fn fit(
        &mut self,
        examples: &[(String, String)],
        hyper: &Hyperparams,
        seed: u64,
    ) -> Result<FitReport, AdapterError>;

    /// One output per input, in order. An empty string marks an empty generation.
    fn generate(
        &self,
        inputs: &[String],
        decoding: &DecodingParams,
    ) -> Result<Vec<String>, AdapterError>;

    /// Registers tokens that must be treated atomically. Returns false when the
    /// backend cannot extend its vocabulary; callers then fall back to plain text.
    fn register_special_tokens(&mut self, tokens: &[String]) -> bool;

    fn special_tokens(&self) -> Vec<String>;

    fn is_fitted(&self) -> bool;

    fn supports_language(&self, _language: LanguageTag) -> bool {
        true
    }

    /// Serialized weights, loadable with [`load_seq2seq`].
    fn save(&self) -> Result<serde_json::Value, AdapterError>;
}

/// A subword token and the whitespace word it belongs to.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Subword {
    pub piece: String,
    pub word: usize,
}

/// Embedding-level access needed for gradient attribution.
pub trait EmbeddingAccess {
    fn tokenize(&self, text: &str) -> Vec<Subword>;
    fn detokenize(&self, tokens: &[Subword]) -> String;
    /// Input embeddings, one vector per token.
    fn embed(&self, tokens: &[Subword]) -> Vec<Vec<f64>>;
    /// Attribution baseline: the pad/zero embedding sequence of equal length.
    fn baseline(&self, tokens: &[Subword]) -> Vec<Vec<f64>> {
        self.embed(tokens)
            .into_iter()
            .map(|v| vec![0.0; v.len()])
            .collect()
    }
    /// Probability of `label` for an embedding sequence and its gradient
    /// with respect to every embedding coordinate.
    fn prob_and_grad(&self, embeddings: &[Vec<f64>], label: Polarity) -> (f64, Vec<Vec<f64>>);
}

pub trait SentimentClassifier: Send + Sync {
    fn backend_id(&self) -> &str;

    fn fit(
        &mut self,
        texts: &[String],
        labels: &[Polarity],
        hyper: &Hyperparams,
        seed: u64,
    ) -> Result<FitReport, AdapterError>;

    /// `[p_negative, p_positive]`, summing to one.
    fn predict_proba(&self, text: &str) -> Result<[f64; 2], AdapterError>;

    fn predict(&self, text: &str) -> Result<Polarity, AdapterError> {
        let p = self.predict_proba(text)?;
        Ok(if p[1] > p[0] {
            Polarity::Positive
        } else {
            Polarity::Negative
        })
    }

    fn embedding_access(&self) -> Option<&dyn EmbeddingAccess> {
        None
    }

    fn is_fitted(&self) -> bool;

    fn supports_language(&self, _language: LanguageTag) -> bool {
        true
    }

    fn save(&self) -> Result<serde_json::Value, AdapterError>;
}

pub trait Translator: Send + Sync {
    fn backend_id(&self) -> &str;
    fn translate(
        &self,
        text: &str,
        src: LanguageTag,
        tgt: LanguageTag,
    ) -> Result<String, AdapterError>;
    fn supports_language(&self, _language: LanguageTag) -> bool {
        true
    }
}

pub trait SentenceEmbedder: Send + Sync {
    fn backend_id(&self) -> &str;
    fn dim(&self) -> usize;
    fn embed(&self, text: &str) -> Result<Vec<f64>, AdapterError>;
}

pub trait LmScorer: Send + Sync {
    fn backend_id(&self) -> &str;
    /// Positive, finite perplexity.
    fn perplexity(&self, text: &str) -> Result<f64, AdapterError>;
}

pub trait LlmClient: Send + Sync {
    fn backend_id(&self) -> &str;
    fn complete(&self, prompt: &str, decoding: &DecodingParams) -> Result<String, AdapterError>;
    /// Maximum number of in-flight requests callers may issue.
    fn parallelism(&self) -> usize {
        4
    }
    fn retry_policy(&self) -> RetryPolicy {
        RetryPolicy::default()
    }
}

/// Backend configuration block: `backend` (alias `id`) plus backend-specific keys.
pub type BackendConfig = BTreeMap<String, String>;

/// Convenience constructor for a config map.
pub fn backend_config<'a>(pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> BackendConfig {
    pairs
        .into_iter()
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect()
}

pub enum Backend {
    Seq2seq(Box<dyn Seq2SeqModel>),
    Classifier(Box<dyn SentimentClassifier>),
    Translator(Box<dyn Translator>),
    Embedder(Box<dyn SentenceEmbedder>),
    Lm(Box<dyn LmScorer>),
    Llm(Box<dyn LlmClient>),
}

pub fn make_backend(kind: BackendKind, config: &BackendConfig) -> Result<Backend, AdapterError> {
    Ok(match kind {
        BackendKind::Seq2seq => Backend::Seq2seq(make_seq2seq(config)?),
        BackendKind::Classifier => Backend::Classifier(make_classifier(config)?),
        BackendKind::Translator => Backend::Translator(make_translator(config)?),
        BackendKind::Embedder => Backend::Embedder(make_embedder(config)?),
        BackendKind::Lm => Backend::Lm(make_lm(config)?),
        BackendKind::Llm => Backend::Llm(make_llm(config)?),
    })
}

pub(crate) struct ConfigReader<'a> {
    kind: BackendKind,
    map: &'a BackendConfig,
}

impl<'a> ConfigReader<'a> {
    pub(crate) fn new(kind: BackendKind, map: &'a BackendConfig) -> Self {
        ConfigReader { kind, map }
    }

    fn backend_id(&self) -> Result<&'a str, AdapterError> {
        self.map
            .get("backend")
            .or_else(|| self.map.get("id"))
            .map(String::as_str)
            .ok_or_else(|| AdapterError::MissingConfigKey {
                kind: self.kind,
                key: "backend".into(),
            })
    }

    pub(crate) fn get(&self, key: &str) -> Option<&'a str> {
        self.map.get(key).map(String::as_str)
    }

    pub(crate) fn require(&self, key: &str) -> Result<&'a str, AdapterError> {
        self.get(key).ok_or_else(|| AdapterError::MissingConfigKey {
            kind: self.kind,
            key: key.into(),
        })
    }

    pub(crate) fn parse_or<T: std::str::FromStr>(&self, key: &str, default: T) -> Result<T, AdapterError>
    where
        T::Err: std::fmt::Display,
    {
        match self.get(key) {
            None => Ok(default),
            Some(v) => v.trim().parse().map_err(|e: T::Err| AdapterError::InvalidConfig {
                key: key.into(),
                message: e.to_string(),
            }),
        }
    }

    fn check_device(&self) -> Result<(), AdapterError> {
        match self.get("device") {
            None | Some("cpu") => Ok(()),
            Some(other) => Err(AdapterError::InvalidConfig {
                key: "device".into(),
                message: format!("built-in backends run on cpu only, got {other:?}"),
            }),
        }
    }

    /// Optional `languages` restriction, comma separated codes.
    fn languages(&self) -> Result<Option<Vec<LanguageTag>>, AdapterError> {
        match self.get("languages") {
            None => Ok(None),
            Some(s) => s
                .split(',')
                .map(|c| c.trim().parse::<LanguageTag>())
                .collect::<Result<Vec<_>, _>>()
                .map(Some)
                .map_err(|e| AdapterError::InvalidConfig {
                    key: "languages".into(),
                    message: e.to_string(),
                }),
        }
    }

    fn unsupported(&self, id: &str) -> AdapterError {
        AdapterError::UnsupportedBackend {
            kind: self.kind,
            id: id.to_string(),
        }
    }
}

pub fn make_seq2seq(config: &BackendConfig) -> Result<Box<dyn Seq2SeqModel>, AdapterError> {
    let r = ConfigReader::new(BackendKind::Seq2seq, config);
    let id = r.backend_id()?;
    r.check_device()?;
    match id {
        "tiny-random" => Ok(Box::new(TinySeq2Seq::new(
            r.parse_or("vocab", 4096usize)?,
            r.parse_or("dim", 16usize)?,
            r.languages()?,
        )?)),
        other => Err(r.unsupported(other)),
    }
}

pub fn make_classifier(config: &BackendConfig) -> Result<Box<dyn SentimentClassifier>, AdapterError> {
    let r = ConfigReader::new(BackendKind::Classifier, config);
    let id = r.backend_id()?;
    r.check_device()?;
    match id {
        "tiny-random" => Ok(Box::new(TinyClassifier::new(
            r.parse_or("buckets", 2048usize)?,
            r.parse_or("dim", 16usize)?,
            r.parse_or("hidden", 16usize)?,
            r.parse_or("piece_len", 3usize)?,
            r.parse_or("seed", 0u64)?,
            r.languages()?,
        )?)),
        "lexicon" => {
            let mut c = match r.get("weights") {
                Some(spec) => LexiconClassifier::parse_weights(spec)?,
                None => LexiconClassifier::default(),
            };
            c.bias = r.parse_or("bias", 0.0f64)?;
            Ok(Box::new(c))
        }
        other => Err(r.unsupported(other)),
    }
}

pub fn make_translator(config: &BackendConfig) -> Result<Box<dyn Translator>, AdapterError> {
    let r = ConfigReader::new(BackendKind::Translator, config);
    let id = r.backend_id()?;
    r.check_device()?;
    match id {
        "identity" => Ok(Box::new(IdentityTranslator)),
        "tiny-random" => Ok(Box::new(NoisyTranslator::new(
            r.parse_or("drop", 0.15f64)?,
            r.parse_or("seed", 0u64)?,
        )?)),
        other => Err(r.unsupported(other)),
    }
}

pub fn make_embedder(config: &BackendConfig) -> Result<Box<dyn SentenceEmbedder>, AdapterError> {
    let r = ConfigReader::new(BackendKind::Embedder, config);
    let id = r.backend_id()?;
    r.check_device()?;
    match id {
        "tiny-random" => Ok(Box::new(HashedEmbedder::new(
            r.parse_or("dim", 64usize)?,
            r.parse_or("seed", 0u64)?,
        )?)),
        other => Err(r.unsupported(other)),
    }
}

pub fn make_lm(config: &BackendConfig) -> Result<Box<dyn LmScorer>, AdapterError> {
    let r = ConfigReader::new(BackendKind::Lm, config);
    let id = r.backend_id()?;
    r.check_device()?;
    match id {
        "tiny-random" => Ok(Box::new(HashedUnigramLm::new(r.parse_or("seed", 0u64)?))),
        other => Err(r.unsupported(other)),
    }
}

/// LLM backends: `echo` and `tiny-random` are offline test doubles; anything
/// else is treated as an OpenAI-compatible chat endpoint and needs `endpoint`
/// and `model`. The API key is read from the environment variable named by
/// `api_key_env` (default `LLM_API_KEY`), never from the config itself.
pub fn make_llm(config: &BackendConfig) -> Result<Box<dyn LlmClient>, AdapterError> {
    let r = ConfigReader::new(BackendKind::Llm, config);
    let id = r.get("backend").or_else(|| r.get("id")).unwrap_or("http");
    match id {
        "echo" => Ok(Box::new(EchoClient)),
        "tiny-random" => Ok(Box::new(CopyInputClient)),
        _ => {
            let endpoint = r.require("endpoint")?;
            let model = r.require("model")?;
            if r.get("api_key").is_some() {
                return Err(AdapterError::InvalidConfig {
                    key: "api_key".into(),
                    message: "API keys are read from the environment, set api_key_env instead".into(),
                });
            }
            let policy = RetryPolicy {
                max_attempts: r.parse_or("max_attempts", RetryPolicy::default().max_attempts)?,
                initial_backoff_ms: r
                    .parse_or("backoff_ms", RetryPolicy::default().initial_backoff_ms)?,
                ..RetryPolicy::default()
            };
            let parallelism = r.parse_or("parallelism", 4usize)?.max(1);
            let key_env = r.get("api_key_env").unwrap_or("LLM_API_KEY");
            build_http_client(id, endpoint, model, key_env, policy, parallelism)
        }
    }
}

#[cfg(feature = "http")]
fn build_http_client(
    id: &str,
    endpoint: &str,
    model: &str,
    key_env: &str,
    policy: RetryPolicy,
    parallelism: usize,
) -> Result<Box<dyn LlmClient>, AdapterError> {
    let api_key = std::env::var(key_env).ok();
    Ok(Box::new(HttpChatClient::new(
        id,
        endpoint,
        model,
        api_key,
        policy,
        parallelism,
    )))
}

#[cfg(not(feature = "http"))]
fn build_http_client(
    id: &str,
    _endpoint: &str,
    _model: &str,
    _key_env: &str,
    _policy: RetryPolicy,
    _parallelism: usize,
) -> Result<Box<dyn LlmClient>, AdapterError> {
    Err(AdapterError::UnsupportedBackend {
        kind: BackendKind::Llm,
        id: format!("{id} (built without the `http` feature)"),
    })
}

/// Restores a generator saved with [`Seq2SeqModel::save`].
pub fn load_seq2seq(value: serde_json::Value) -> Result<Box<dyn Seq2SeqModel>, AdapterError> {
    match value.get("backend").and_then(|v| v.as_str()) {
        Some("tiny-random") => Ok(Box::new(TinySeq2Seq::load(value)?)),
        other => Err(AdapterError::Load(format!("unknown saved seq2seq backend {other:?}"))),
    }
}

/// Restores a classifier saved with [`SentimentClassifier::save`].
pub fn load_classifier(
    value: serde_json::Value,
) -> Result<Box<dyn SentimentClassifier>, AdapterError> {
    match value.get("backend").and_then(|v| v.as_str()) {
        Some("tiny-random") => Ok(Box::new(TinyClassifier::load(value)?)),
        Some("lexicon") => Ok(Box::new(LexiconClassifier::load(value)?)),
        other => Err(AdapterError::Load(format!("unknown saved classifier backend {other:?}"))),
    }
}

static LANGUAGE_WARNINGS: Mutex<Option<HashSet<(String, LanguageTag)>>> = Mutex::new(None);

/// Logs a warning the first time `backend` is used with an unsupported language.
/// Unsupported languages are still processed.
pub fn warn_unsupported_language(backend: &str, language: LanguageTag) -> bool {
    let mut guard = LANGUAGE_WARNINGS.lock().unwrap_or_else(|e| e.into_inner());
    let set = guard.get_or_insert_with(HashSet::new);
    let first = set.insert((backend.to_string(), language));
    if first {
        log::warn!(
            "backend {backend} does not list {} as supported; relying on shared script/vocabulary",
            language.name()
        );
    }
    first
}

/// Whitespace word spans (byte ranges) of a sentence.
pub(crate) fn word_spans(text: &str) -> Vec<(usize, usize)> {
    let mut spans = Vec::new();
    let mut start = None;
    for (i, c) in text.char_indices() {
        if c.is_whitespace() {
            if let Some(s) = start.take() {
                spans.push((s, i));
            }
        } else if start.is_none() {
            start = Some(i);
        }
    }
    if let Some(s) = start {
        spans.push((s, text.len()));
    }
    spans
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hyper_defaults() {
        let h = Hyperparams::default();
        assert_eq!(h.learning_rate, 1e-5);
        assert_eq!(h.dropout, 0.1);
        assert_eq!(h.l2_strength, 0.01);
        assert_eq!(h.epochs, 30);
        h.validate().unwrap();
        assert!(Hyperparams { epochs: 0, ..h }.validate().is_err());
        assert!(Hyperparams { learning_rate: 0.0, ..h }.validate().is_err());
    }

    #[test]
    fn factory_builds_tiny_backends() {
        let s = make_backend(
            BackendKind::Seq2seq,
            &backend_config([("backend", "tiny-random"), ("vocab", "64")]),
        )
        .unwrap();
        assert!(matches!(s, Backend::Seq2seq(_)));
        let c = make_classifier(&backend_config([("backend", "tiny-random")])).unwrap();
        let p = c.predict_proba("the food was good").unwrap();
        assert!((p[0] + p[1] - 1.0).abs() < 1e-6);
        for kind in [BackendKind::Translator, BackendKind::Embedder, BackendKind::Lm] {
            assert!(make_backend(kind, &backend_config([("id", "tiny-random")])).is_ok());
        }
    }

    #[test]
    fn factory_errors() {
        let e = make_backend(BackendKind::Llm, &BackendConfig::new()).err().unwrap();
        assert!(e.to_string().contains("missing required config key"));
        let e = make_seq2seq(&backend_config([("backend", "mbart-large-50")])).err().unwrap();
        assert!(matches!(e, AdapterError::UnsupportedBackend { .. }));
        let e = make_embedder(&BackendConfig::new()).err().unwrap();
        assert!(matches!(e, AdapterError::MissingConfigKey { .. }));
        let e = make_llm(&backend_config([
            ("endpoint", "http://x"),
            ("model", "m"),
            ("api_key", "secret"),
        ]))
        .err()
        .unwrap();
        assert!(matches!(e, AdapterError::InvalidConfig { .. }));
    }

    #[test]
    fn spans_cover_words() {
        assert_eq!(word_spans("  ab  c "), vec![(2, 4), (6, 7)]);
        assert!(word_spans("   ").is_empty());
    }

    #[test]
    fn language_warning_fires_once() {
        assert!(warn_unsupported_language("unit-test-backend", LanguageTag::Mag));
        assert!(!warn_unsupported_language("unit-test-backend", LanguageTag::Mag));
    }
}
