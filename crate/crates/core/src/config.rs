//! Experiment configuration.
//!
//! A TOML file with five sections; everything except `data.languages` and
//! `experiments.methodologies` has a default, and relative paths resolve
//! against the config file's directory.
//!
//! ```toml
//! [data]
//! dir = "data"              # holds <code>.jsonl corpora
//! languages = ["hi", "mr"]
//! seeds = [13]              # split and training seeds
//! train = 400               # split sizes
//! dev = 100
//! test = 500
//! runs_dir = "runs"
//!
//! [backends.seq2seq]        # also classifier, translator, embedder, lm, llm
//! id = "tiny-random"
//! device = "cpu"
//!
//! [experiments]
//! methodologies = ["Parallel", "MSF-AE"]
//! learning_rate = 1e-5      # dropout, l2_strength, epochs, batch_size likewise
//! threshold = 0.25          # ig_steps, mask_symbol likewise
//! workers = 2
//!
//! [eval]
//! bleu_reference = "target" # or "input"
//!
//! [report]
//! dir = "report"
//! plots = true
//! ```
//!
//! LLM API keys are never read from this file: `backends.llm.api_key_env`
//! names the environment variable (default `LLM_API_KEY`).

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;
use toml::Value;

use crate::adapters::{make_backend, BackendConfig, BackendKind, DecodingParams, Hyperparams};
use crate::attribution::MaskingConfig;
use crate::corpus::{corpus_path, LanguageTag, SplitSpec};
use crate::exec::Exec;
use crate::metrics::BleuReference;
use crate::pipelines::{MethodologyKind, MethodologySpec};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("config is not valid TOML: {0}")]
    Parse(String),
    #[error("invalid config:\n{}", .0.iter().map(|e| format!("  - {e}")).collect::<Vec<_>>().join("\n"))]
    Invalid(Vec<String>),
}

/// Optional hyperparameter overrides on top of per-language defaults.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct HyperOverrides {
    pub learning_rate: Option<f64>,
    pub dropout: Option<f64>,
    pub l2_strength: Option<f64>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
}

impl HyperOverrides {
    pub fn apply(&self, mut h: Hyperparams) -> Hyperparams {
        if let Some(v) = self.learning_rate {
            h.learning_rate = v;
        }
        if let Some(v) = self.dropout {
            h.dropout = v;
        }
        if let Some(v) = self.l2_strength {
            h.l2_strength = v;
        }
        if let Some(v) = self.epochs {
            h.epochs = v;
        }
        if let Some(v) = self.batch_size {
            h.batch_size = v;
        }
        h
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataConfig {
    pub dir: PathBuf,
    pub languages: Vec<LanguageTag>,
    pub seeds: Vec<u64>,
    pub train: usize,
    pub dev: usize,
    pub test: usize,
    pub runs_dir: PathBuf,
}

impl DataConfig {
    pub fn split_spec(&self, seed: u64) -> SplitSpec {
        SplitSpec {
            train_n: self.train,
            dev_n: self.dev,
            test_n: self.test,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub methodologies: Vec<MethodologyKind>,
    pub generator: HyperOverrides,
    pub classifier: HyperOverrides,
    pub masking: MaskingConfig,
    pub pivot: Option<LanguageTag>,
    pub decoding: DecodingParams,
    pub shots: usize,
    pub workers: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub bleu_reference: BleuReference,
    pub exec: Exec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportConfig {
    pub dir: PathBuf,
    pub plots: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Config {
    pub data: DataConfig,
    pub backends: BTreeMap<BackendKind, BackendConfig>,
    pub experiments: ExperimentConfig,
    pub eval: EvalConfig,
    pub report: ReportConfig,
    /// File the config was loaded from, if any.
    #[serde(skip)]
    pub source: Option<PathBuf>,
}

impl Config {
    pub fn load(path: &Path) -> Result<Config, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let mut cfg = Config::parse(&text, &base)?;
        cfg.source = Some(std::fs::canonicalize(path).unwrap_or_else(|_| path.to_path_buf()));
        Ok(cfg)
    }

    /// Parses and validates; every problem found is reported at once.
    pub fn parse(text: &str, base_dir: &Path) -> Result<Config, ConfigError> {
        let table: toml::Table = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        let mut p = Parser { errors: Vec::new() };
        let cfg = p.config(&table, base_dir);
        if p.errors.is_empty() {
            p.check(&cfg);
        }
        if p.errors.is_empty() {
            Ok(cfg)
        } else {
            Err(ConfigError::Invalid(p.errors))
        }
    }

    pub fn backend(&self, kind: BackendKind) -> Option<&BackendConfig> {
        self.backends.get(&kind)
    }

    /// Languages whose corpora must be loaded: the configured ones plus
    /// English when a cross-lingual methodology needs it.
    pub fn required_languages(&self) -> Vec<LanguageTag> {
        let mut langs = self.data.languages.clone();
        if self.experiments.methodologies.iter().any(|k| k.requires_non_english()) {
            langs.push(LanguageTag::En);
        }
        langs.sort();
        langs.dedup();
        langs
    }

    pub fn methodology_spec(&self, kind: MethodologyKind, language: LanguageTag) -> MethodologySpec {
        let mut spec = MethodologySpec::new(kind, language);
        spec.hyper = self.experiments.generator.apply(spec.hyper);
        if spec.masking.is_some() {
            spec.masking = Some(self.experiments.masking.clone());
        }
        if let (Some(p), true) = (self.experiments.pivot, kind.uses_pivot()) {
            if p != language {
                spec.pivot = Some(p);
            }
        }
        spec
    }

    pub fn classifier_hyper(&self, language: LanguageTag) -> Hyperparams {
        self.experiments.classifier.apply(Hyperparams::classifier_for_language(language))
    }

    pub fn report_dir(&self) -> &Path {
        &self.report.dir
    }
}

const SECTIONS: [&str; 5] = ["data", "backends", "experiments", "eval", "report"];
const DATA_KEYS: [&str; 7] = ["dir", "languages", "seeds", "train", "dev", "test", "runs_dir"];
const EXPERIMENT_KEYS: [&str; 17] = [
    "methodologies",
    "learning_rate",
    "dropout",
    "l2_strength",
    "epochs",
    "batch_size",
    "classifier_learning_rate",
    "classifier_epochs",
    "classifier_batch_size",
    "threshold",
    "ig_steps",
    "mask_symbol",
    "pivot",
    "max_length",
    "beam_size",
    "shots",
    "workers",
];
const EVAL_KEYS: [&str; 2] = ["bleu_reference", "exec"];
const REPORT_KEYS: [&str; 2] = ["dir", "plots"];
const BACKEND_KINDS: [(&str, BackendKind); 6] = [
    ("seq2seq", BackendKind::Seq2seq),
    ("classifier", BackendKind::Classifier),
    ("translator", BackendKind::Translator),
    ("embedder", BackendKind::Embedder),
    ("lm", BackendKind::Lm),
    ("llm", BackendKind::Llm),
];

struct Parser {
    errors: Vec<String>,
}

impl Parser {
    fn err(&mut self, msg: String) {
        self.errors.push(msg);
    }

    fn section<'a>(&mut self, root: &'a toml::Table, name: &str, allowed: &[&str]) -> Option<&'a toml::Table> {
        match root.get(name) {
            None => None,
            Some(Value::Table(t)) => {
                for k in t.keys() {
                    if !allowed.contains(&k.as_str()) {
                        self.err(format!("{name}.{k}: unknown key"));
                    }
                }
                Some(t)
            }
            Some(_) => {
                self.err(format!("{name}: expected a table"));
                None
            }
        }
    }

    fn uint(&mut self, t: Option<&toml::Table>, section: &str, key: &str) -> Option<usize> {
        match t?.get(key)? {
            Value::Integer(i) if *i >= 0 => Some(*i as usize),
            _ => {
                self.err(format!("{section}.{key}: expected a non-negative integer"));
                None
            }
        }
    }

    fn float(&mut self, t: Option<&toml::Table>, section: &str, key: &str) -> Option<f64> {
        match t?.get(key)? {
            Value::Float(f) => Some(*f),
            Value::Integer(i) => Some(*i as f64),
            _ => {
                self.err(format!("{section}.{key}: expected a number"));
                None
            }
        }
    }

    fn string<'a>(&mut self, t: Option<&'a toml::Table>, section: &str, key: &str) -> Option<&'a str> {
        match t?.get(key)? {
            Value::String(s) => Some(s),
            _ => {
                self.err(format!("{section}.{key}: expected a string"));
                None
            }
        }
    }

    fn boolean(&mut self, t: Option<&toml::Table>, section: &str, key: &str) -> Option<bool> {
        match t?.get(key)? {
            Value::Boolean(b) => Some(*b),
            _ => {
                self.err(format!("{section}.{key}: expected true or false"));
                None
            }
        }
    }

    fn parsed_list<T>(
        &mut self,
        t: Option<&toml::Table>,
        section: &str,
        key: &str,
        parse: impl Fn(&Value) -> Result<T, String>,
    ) -> Option<Vec<T>> {
        let v = t?.get(key)?;
        let Value::Array(items) = v else {
            self.err(format!("{section}.{key}: expected an array"));
            return None;
        };
        let mut out = Vec::new();
        for (i, item) in items.iter().enumerate() {
            match parse(item) {
                Ok(x) => out.push(x),
                Err(e) => self.err(format!("{section}.{key}[{i}]: {e}")),
            }
        }
        Some(out)
    }

    fn path(&mut self, t: Option<&toml::Table>, section: &str, key: &str, base: &Path, default: &str) -> PathBuf {
        let p = self.string(t, section, key).unwrap_or(default);
        base.join(p)
    }

    fn config(&mut self, root: &toml::Table, base: &Path) -> Config {
        for k in root.keys() {
            if !SECTIONS.contains(&k.as_str()) {
                self.err(format!("{k}: unknown section (expected one of {})", SECTIONS.join(", ")));
            }
        }
        let data = self.section(root, "data", &DATA_KEYS);
        let exp = self.section(root, "experiments", &EXPERIMENT_KEYS);
        let eval = self.section(root, "eval", &EVAL_KEYS);
        let report = self.section(root, "report", &REPORT_KEYS);
        let backends_t = self.section(root, "backends", &BACKEND_KINDS.map(|(n, _)| n));

        let split = SplitSpec::default();
        let languages = self
            .parsed_list(data, "data", "languages", |v| match v {
                Value::String(s) => s.parse::<LanguageTag>().map_err(|e| e.to_string()),
                _ => Err("expected a language code string".into()),
            })
            .unwrap_or_default();
        if languages.is_empty() {
            self.err("data.languages: at least one language is required".into());
        }
        let seeds = self
            .parsed_list(data, "data", "seeds", |v| match v {
                Value::Integer(i) if *i >= 0 => Ok(*i as u64),
                _ => Err("expected a non-negative integer".into()),
            })
            .unwrap_or_else(|| vec![split.seed]);
        if seeds.is_empty() {
            self.err("data.seeds: at least one seed is required".into());
        }
        let runs_dir = self.path(data, "data", "runs_dir", base, "runs");
        let data_cfg = DataConfig {
            dir: self.path(data, "data", "dir", base, "data"),
            languages,
            seeds,
            train: self.uint(data, "data", "train").unwrap_or(split.train_n),
            dev: self.uint(data, "data", "dev").unwrap_or(split.dev_n),
            test: self.uint(data, "data", "test").unwrap_or(split.test_n),
            runs_dir: runs_dir.clone(),
        };

        let methodologies = self
            .parsed_list(exp, "experiments", "methodologies", |v| match v {
                Value::String(s) => s.parse::<MethodologyKind>(),
                _ => Err("expected a methodology name string".into()),
            })
            .unwrap_or_default();
        if methodologies.is_empty() {
            self.err("experiments.methodologies: at least one methodology is required".into());
        }
        let generator = HyperOverrides {
            learning_rate: self.float(exp, "experiments", "learning_rate"),
            dropout: self.float(exp, "experiments", "dropout"),
            l2_strength: self.float(exp, "experiments", "l2_strength"),
            epochs: self.uint(exp, "experiments", "epochs"),
            batch_size: self.uint(exp, "experiments", "batch_size"),
        };
        let classifier = HyperOverrides {
            learning_rate: self.float(exp, "experiments", "classifier_learning_rate"),
            epochs: self.uint(exp, "experiments", "classifier_epochs"),
            batch_size: self.uint(exp, "experiments", "classifier_batch_size"),
            dropout: generator.dropout,
            l2_strength: generator.l2_strength,
        };
        let md = MaskingConfig::default();
        let masking = MaskingConfig {
            threshold: self.float(exp, "experiments", "threshold").unwrap_or(md.threshold),
            ig_steps: self.uint(exp, "experiments", "ig_steps").unwrap_or(md.ig_steps),
            mask_symbol: self
                .string(exp, "experiments", "mask_symbol")
                .map(str::to_string)
                .unwrap_or(md.mask_symbol),
        };
        let pivot = self.string(exp, "experiments", "pivot").and_then(|s| match s.parse::<LanguageTag>() {
            Ok(l) => Some(l),
            Err(e) => {
                self.err(format!("experiments.pivot: {e}"));
                None
            }
        });
        let dd = DecodingParams::default();
        let decoding = DecodingParams {
            max_length: self.uint(exp, "experiments", "max_length").unwrap_or(dd.max_length),
            beam_size: self.uint(exp, "experiments", "beam_size").unwrap_or(dd.beam_size),
            temperature: dd.temperature,
        };
        let experiments = ExperimentConfig {
            methodologies,
            generator,
            classifier,
            masking,
            pivot,
            decoding,
            shots: self.uint(exp, "experiments", "shots").unwrap_or(crate::llm::DEFAULT_SHOTS),
            workers: self.uint(exp, "experiments", "workers").unwrap_or(1),
        };

        let bleu_reference = match self.string(eval, "eval", "bleu_reference") {
            None | Some("target") => BleuReference::Target,
            Some("input") => BleuReference::Input,
            Some(other) => {
                self.err(format!("eval.bleu_reference: expected \"target\" or \"input\", got {other:?}"));
                BleuReference::Target
            }
        };
        let exec = match self.string(eval, "eval", "exec") {
            None => Exec::default(),
            Some("parallel") => Exec::Parallel,
            Some("sequential") => Exec::Sequential,
            Some(other) => {
                self.err(format!("eval.exec: expected \"parallel\" or \"sequential\", got {other:?}"));
                Exec::default()
            }
        };

        let report_dir = match self.string(report, "report", "dir") {
            Some(d) => base.join(d),
            None => runs_dir.join("report"),
        };
        let report_cfg = ReportConfig {
            dir: report_dir,
            plots: self.boolean(report, "report", "plots").unwrap_or(true),
        };

        let mut backends = BTreeMap::new();
        for (name, kind) in BACKEND_KINDS {
            let block = backends_t.and_then(|t| t.get(name));
            let map = match block {
                None => {
                    if kind == BackendKind::Llm {
                        continue;
                    }
                    let id = if kind == BackendKind::Translator { "identity" } else { "tiny-random" };
                    crate::adapters::backend_config([("backend", id)])
                }
                Some(Value::Table(t)) => {
                    let mut m = BackendConfig::new();
                    for (k, v) in t {
                        let s = match v {
                            Value::String(s) => s.clone(),
                            Value::Integer(i) => i.to_string(),
                            Value::Float(f) => f.to_string(),
                            Value::Boolean(b) => b.to_string(),
                            _ => {
                                self.err(format!("backends.{name}.{k}: expected a scalar value"));
                                continue;
                            }
                        };
                        m.insert(k.clone(), s);
                    }
                    m
                }
                Some(_) => {
                    self.err(format!("backends.{name}: expected a table"));
                    continue;
                }
            };
            backends.insert(kind, map);
        }

        Config {
            data: data_cfg,
            backends,
            experiments,
            eval: EvalConfig { bleu_reference, exec },
            report: report_cfg,
            source: None,
        }
    }

    /// Semantic checks that need the whole config.
    fn check(&mut self, cfg: &Config) {
        let exp = &cfg.experiments;
        if exp.workers == 0 {
            self.err("experiments.workers: must be at least 1".into());
        }
        if exp.shots == 0 {
            self.err("experiments.shots: must be at least 1".into());
        }
        if exp.decoding.max_length == 0 {
            self.err("experiments.max_length: must be at least 1".into());
        }
        if let Err(e) = exp.masking.validate() {
            self.err(format!("experiments: {e}"));
        }
        for lang in &cfg.data.languages {
            if let Err(e) = cfg.experiments.generator.apply(Hyperparams::for_language(*lang)).validate() {
                self.err(format!("experiments: {e}"));
                break;
            }
        }
        if let Err(e) = cfg.classifier_hyper(LanguageTag::En).validate() {
            self.err(format!("experiments (classifier): {e}"));
        }
        if exp.methodologies.contains(&MethodologyKind::Llm) && !cfg.backends.contains_key(&BackendKind::Llm) {
            self.err("backends.llm: required when experiments.methodologies includes LLM".into());
        }
        let needs_dev = exp.methodologies.contains(&MethodologyKind::Llm);
        if needs_dev && cfg.data.dev < exp.shots {
            self.err(format!(
                "data.dev: LLM prompting draws {} examples from the dev split, which has {}",
                exp.shots, cfg.data.dev
            ));
        }
        if cfg.data.train == 0 && exp.methodologies.iter().any(|k| *k != MethodologyKind::Llm) {
            self.err("data.train: must be at least 1 for trained methodologies".into());
        }
        if cfg.data.test == 0 {
            self.err("data.test: must be at least 1".into());
        }
        for (kind, map) in &cfg.backends {
            if let Some(k) = map.keys().find(|k| k.as_str() == "api_key") {
                self.err(format!("backends.{kind}.{k}: secrets are read from the environment, not the config"));
                continue;
            }
            if let Err(e) = make_backend(*kind, map) {
                self.err(format!("backends.{kind}: {e}"));
            }
        }
        for lang in cfg.required_languages() {
            let p = corpus_path(&cfg.data.dir, lang);
            if !p.is_file() {
                self.err(format!("data.dir: missing corpus file {}", p.display()));
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_fill_in() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::create_dir_all(dir.path().join("data")).unwrap();
        std::fs::write(dir.path().join("data/hi.jsonl"), "").unwrap();
        let cfg = Config::parse(
            "[data]\nlanguages=[\"hi\"]\n[experiments]\nmethodologies=[\"Parallel\",\"MSF-AE\"]\n",
            dir.path(),
        )
        .unwrap();
        assert_eq!(cfg.data.seeds, vec![13]);
        assert_eq!((cfg.data.train, cfg.data.dev, cfg.data.test), (400, 100, 500));
        assert_eq!(cfg.experiments.masking.threshold, 0.25);
        let spec = cfg.methodology_spec(MethodologyKind::Parallel, LanguageTag::Hi);
        assert_eq!(spec.hyper, Hyperparams::for_language(LanguageTag::Hi));
        assert_eq!(cfg.backends[&BackendKind::Translator]["backend"], "identity");
    }

    #[test]
    fn all_errors_listed() {
        let err = Config::parse(
            "[data]\nlanguages=[\"xx\"]\nbogus=1\n[experiments]\nmethodologies=[\"Parallel\",\"Nope\"]\nepochs=\"many\"\n[extra]\n",
            Path::new("/nonexistent"),
        )
        .unwrap_err();
        let ConfigError::Invalid(errors) = err else { panic!("expected schema errors") };
        let all = errors.join("\n");
        assert!(all.contains("data.languages[0]"), "{all}");
        assert!(all.contains("data.bogus: unknown key"), "{all}");
        assert!(all.contains("experiments.methodologies[1]"), "{all}");
        assert!(all.contains("experiments.epochs"), "{all}");
        assert!(all.contains("extra: unknown section"), "{all}");
    }

    #[test]
    fn api_key_in_config_is_rejected() {
        let err = Config::parse(
            "[data]\nlanguages=[\"hi\"]\n[experiments]\nmethodologies=[\"LLM\"]\n[backends.llm]\nendpoint=\"http://x\"\nmodel=\"m\"\napi_key=\"secret\"\n",
            Path::new("/nonexistent"),
        )
        .unwrap_err();
        assert!(err.to_string().contains("backends.llm.api_key"), "{err}");
    }
}
