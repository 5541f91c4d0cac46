//! Config-driven experiment runs.
//!
//! Every (language, methodology, seed) cell lives in
//! `runs/<lang>/<methodology>/<seed>/` and goes through train, infer and eval
//! stages. Each stage records a content hash of everything it depends on in
//! `manifest.json`; a stage whose hash is unchanged and whose artifacts exist
//! is skipped on the next run.
//!
//! Cell directory layout:
//!
//! - `model.json`: the trained run (absent for shared Joint models and LLM)
//! - `outputs.pos2neg.jsonl`, `outputs.neg2pos.jsonl`: [`OutputRecord`]s
//! - `llm_log.jsonl`: prompts and raw completions (LLM only)
//! - `metadata.json`: run metadata, stage hashes and collaborators
//! - `report.json`: the cell's [`MetricReport`]

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::adapters::{
    load_classifier, make_classifier, make_embedder, make_llm, make_lm, make_seq2seq, make_translator,
    BackendKind, LlmClient, LmScorer, SentenceEmbedder, SentimentClassifier, Translator,
};
use crate::config::Config;
use crate::corpus::{
    corpus_path, direction_view, load_corpus, split_corpus, write_split_manifest, Corpus, CorpusSplits,
    Direction, LanguageTag, Polarity, StylePair,
};
use crate::error::{Error, Result};
use crate::llm::{run_llm_eval, select_few_shot, write_llm_log, PromptTemplate};
use crate::metrics::{evaluate_direction, evaluate_run, EvalOptions, Evaluators, MetricReport};
use crate::pipelines::{
    infer, train_classifier, train_methodology, InferContext, MethodologyKind, PipelineError, TrainInputs,
    TrainedRun,
};
use crate::report::{emit_plots, render_table};
use crate::util::sha256_hex;

/// Pipeline stages in execution order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Prepare,
    Train,
    Infer,
    Eval,
    Report,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Prepare => "prepare",
            Stage::Train => "train",
            Stage::Infer => "infer",
            Stage::Eval => "eval",
            Stage::Report => "report",
        }
    }
}

/// Restricts a run to a subset of the configured cells. Empty fields match everything.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CellFilter {
    pub languages: Vec<LanguageTag>,
    pub methodologies: Vec<MethodologyKind>,
    pub seeds: Vec<u64>,
}

impl CellFilter {
    fn admits(&self, lang: LanguageTag, kind: MethodologyKind, seed: u64) -> bool {
        (self.languages.is_empty() || self.languages.contains(&lang))
            && (self.methodologies.is_empty() || self.methodologies.contains(&kind))
            && (self.seeds.is_empty() || self.seeds.contains(&seed))
    }
}

/// One generated sentence with its source and reference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputRecord {
    pub pair_id: u64,
    pub input: String,
    pub target: String,
    pub output: String,
    /// Set when generation failed and `output` is an empty placeholder.
    #[serde(default)]
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellOutcome {
    pub language: LanguageTag,
    pub methodology: MethodologyKind,
    pub seed: u64,
    pub dir: PathBuf,
    /// Stages that actually ran (the rest were cached or not requested).
    pub executed: Vec<Stage>,
    /// Why the cell was not run at all.
    pub skipped: Option<String>,
    pub report: Option<MetricReport>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportFiles {
    pub files: Vec<PathBuf>,
    pub plot_notice: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub cells: Vec<CellOutcome>,
    /// Seed-averaged reports of the evaluated cells.
    pub reports: Vec<MetricReport>,
    pub report_files: Option<ReportFiles>,
}

impl RunSummary {
    pub fn failures(&self) -> impl Iterator<Item = &CellOutcome> {
        self.cells.iter().filter(|c| c.error.is_some())
    }
}

/// Directory of a cell's artifacts.
pub fn cell_dir(runs_dir: &Path, language: LanguageTag, kind: MethodologyKind, seed: u64) -> PathBuf {
    runs_dir.join(language.code()).join(kind.slug()).join(seed.to_string())
}

pub fn outputs_path(dir: &Path, direction: Direction) -> PathBuf {
    dir.join(format!("outputs.{}.jsonl", direction.code()))
}

fn digest(v: &Value) -> String {
    sha256_hex(&serde_json::to_vec(v).expect("json values serialize"))
}

fn read_json(path: &Path) -> Result<Value> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read_manifest(dir: &Path) -> BTreeMap<String, String> {
    fs::read_to_string(dir.join("manifest.json"))
        .ok()
        .and_then(|t| serde_json::from_str(&t).ok())
        .unwrap_or_default()
}

fn record_stage(dir: &Path, stage: &str, hash: &str) -> Result<()> {
    let mut m = read_manifest(dir);
    m.insert(stage.to_string(), hash.to_string());
    write_json(&dir.join("manifest.json"), &m)
}

fn cached(dir: &Path, stage: &str, hash: &str, artifacts: &[PathBuf]) -> bool {
    read_manifest(dir).get(stage).map(String::as_str) == Some(hash) && artifacts.iter().all(|p| p.is_file())
}

pub fn write_outputs(dir: &Path, direction: Direction, records: &[OutputRecord]) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = outputs_path(dir, direction);
    let mut text = String::new();
    for r in records {
        text.push_str(&serde_json::to_string(r)?);
        text.push('\n');
    }
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

/// Reads the direction output files present in a cell directory.
pub fn read_outputs(dir: &Path) -> Result<BTreeMap<Direction, Vec<OutputRecord>>> {
    let mut out = BTreeMap::new();
    for d in Direction::BOTH {
        let path = outputs_path(dir, d);
        if !path.is_file() {
            continue;
        }
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let mut records = Vec::new();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            records.push(serde_json::from_str::<OutputRecord>(line)?);
        }
        out.insert(d, records);
    }
    if out.is_empty() {
        let path = outputs_path(dir, Direction::Pos2Neg);
        return Err(Error::io(&path, std::io::Error::new(std::io::ErrorKind::NotFound, "no output files")));
    }
    Ok(out)
}

/// Rebuilds the test pairs a cell was run on from its output records. When
/// both directions are present they must list the same pairs.
pub fn corpus_from_outputs(
    language: LanguageTag,
    outputs: &BTreeMap<Direction, Vec<OutputRecord>>,
) -> Result<Corpus> {
    if let (Some(a), Some(b)) = (outputs.get(&Direction::Pos2Neg), outputs.get(&Direction::Neg2Pos)) {
        if a.iter().map(|r| r.pair_id).ne(b.iter().map(|r| r.pair_id)) {
            return Err(PipelineError::Misaligned("direction output files list different pairs".into()).into());
        }
    }
    let (d, records) = outputs
        .iter()
        .next()
        .ok_or_else(|| PipelineError::Misaligned("no outputs".into()))?;
    let pairs = records
        .iter()
        .map(|r| {
            let (positive, negative) = match d.source() {
                Polarity::Positive => (r.input.clone(), r.target.clone()),
                Polarity::Negative => (r.target.clone(), r.input.clone()),
            };
            StylePair {
                id: r.pair_id,
                language,
                positive,
                negative,
                original_polarity: d.source(),
            }
        })
        .collect();
    Ok(Corpus::new(language, pairs)?)
}

fn output_map(outputs: &BTreeMap<Direction, Vec<OutputRecord>>) -> BTreeMap<Direction, Vec<String>> {
    outputs
        .iter()
        .map(|(d, rs)| (*d, rs.iter().map(|r| r.output.clone()).collect()))
        .collect()
}

/// Loaded and split corpora with their content hashes.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitData {
    pub splits: CorpusSplits,
    pub train_hash: String,
    pub dev_hash: String,
    pub test_hash: String,
}

impl SplitData {
    fn new(splits: CorpusSplits) -> Self {
        SplitData {
            train_hash: splits.train.content_hash(),
            dev_hash: splits.dev.content_hash(),
            test_hash: splits.test.content_hash(),
            splits,
        }
    }
}

/// Loads every required corpus, splits it once per seed and writes the split
/// manifests to `runs/splits/<code>.<seed>.json`.
pub fn prepare(cfg: &Config) -> Result<BTreeMap<(LanguageTag, u64), SplitData>> {
    prepare_languages(cfg, &cfg.required_languages(), &cfg.data.seeds)
}

pub fn prepare_languages(
    cfg: &Config,
    languages: &[LanguageTag],
    seeds: &[u64],
) -> Result<BTreeMap<(LanguageTag, u64), SplitData>> {
    let mut out = BTreeMap::new();
    for &lang in languages {
        let corpus = load_corpus(&corpus_path(&cfg.data.dir, lang), lang)?;
        for &seed in seeds {
            let splits = split_corpus(&corpus, &cfg.data.split_spec(seed))?;
            let path = write_split_manifest(&cfg.data.runs_dir, lang, seed, &splits)
                .map_err(|e| Error::io(&cfg.data.runs_dir, e))?;
            log::info!("split {} (seed {seed}) -> {}", lang.code(), path.display());
            out.insert((lang, seed), SplitData::new(splits));
        }
    }
    Ok(out)
}

fn backend_json(cfg: &Config, kind: BackendKind) -> Value {
    json!(cfg.backend(kind))
}

/// Trains (or loads a cached) sentiment classifier for one language and seed.
/// It is stored in `runs/<lang>/classifier/<seed>/` and serves both as the
/// masking classifier and as the ACC judge.
pub fn ensure_classifier(
    cfg: &Config,
    language: LanguageTag,
    seed: u64,
    data: &SplitData,
) -> Result<(Box<dyn SentimentClassifier>, String)> {
    let dir = cfg.data.runs_dir.join(language.code()).join("classifier").join(seed.to_string());
    let hyper = cfg.classifier_hyper(language);
    let hash = digest(&json!({
        "stage": "classifier",
        "backend": backend_json(cfg, BackendKind::Classifier),
        "hyper": hyper,
        "seed": seed,
        "train": data.train_hash,
        "dev": data.dev_hash,
    }));
    let model_path = dir.join("model.json");
    if cached(&dir, "classifier", &hash, std::slice::from_ref(&model_path)) {
        let clf = load_classifier(read_json(&model_path)?)?;
        return Ok((clf, hash));
    }
    let map = cfg.backend(BackendKind::Classifier).cloned().unwrap_or_default();
    let mut clf = make_classifier(&map)?;
    let report = train_classifier(clf.as_mut(), &data.splits.train, &data.splits.dev, &hyper, seed)?;
    log::info!(
        "classifier {} seed {seed}: dev accuracy {:?}",
        language.code(),
        report.dev_accuracy
    );
    write_json(&model_path, &clf.save()?)?;
    write_json(&dir.join("report.json"), &report)?;
    record_stage(&dir, "classifier", &hash)?;
    Ok((clf, hash))
}

struct Shared<'a> {
    cfg: &'a Config,
    data: BTreeMap<(LanguageTag, u64), SplitData>,
    classifiers: BTreeMap<(LanguageTag, u64), (Box<dyn SentimentClassifier>, String)>,
    translator: Box<dyn Translator>,
    embedder: Box<dyn SentenceEmbedder>,
    lm: Box<dyn LmScorer>,
    llm: Option<Box<dyn LlmClient>>,
    joint: BTreeMap<u64, (TrainedRun, String)>,
    english: BTreeMap<u64, (TrainedRun, String)>,
}

enum RunHandle<'a> {
    Owned(TrainedRun),
    Shared(&'a TrainedRun),
}

impl RunHandle<'_> {
    fn get(&self) -> &TrainedRun {
        match self {
            RunHandle::Owned(r) => r,
            RunHandle::Shared(r) => r,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Cell {
    language: LanguageTag,
    kind: MethodologyKind,
    seed: u64,
}

impl<'a> Shared<'a> {
    fn data(&self, lang: LanguageTag, seed: u64) -> Result<&SplitData> {
        self.data.get(&(lang, seed)).ok_or_else(|| {
            PipelineError::MissingInput {
                methodology: MethodologyKind::Parallel,
                what: "a prepared split",
            }
            .into()
        })
    }

    fn classifier(&self, lang: LanguageTag, seed: u64) -> Result<(&dyn SentimentClassifier, &str)> {
        let (c, h) = self.classifiers.get(&(lang, seed)).ok_or_else(|| {
            Error::from(PipelineError::MissingInput {
                methodology: MethodologyKind::Parallel,
                what: "a trained classifier",
            })
        })?;
        Ok((c.as_ref(), h.as_str()))
    }

    fn new_generator(&self) -> impl FnMut() -> std::result::Result<Box<dyn crate::adapters::Seq2SeqModel>, crate::adapters::AdapterError> + '_ {
        let map = self.cfg.backend(BackendKind::Seq2seq).cloned().unwrap_or_default();
        move || make_seq2seq(&map)
    }

    fn train_hash(&self, cell: Cell) -> Result<String> {
        let cfg = self.cfg;
        let spec = cfg.methodology_spec(cell.kind, cell.language);
        let data = self.data(cell.language, cell.seed)?;
        let mut v = json!({
            "stage": "train",
            "spec": spec,
            "seed": cell.seed,
            "seq2seq": backend_json(cfg, BackendKind::Seq2seq),
            "train": data.train_hash,
        });
        match cell.kind {
            MethodologyKind::EnIpTrTrain => {
                v["english_train"] = json!(self.data(LanguageTag::En, cell.seed)?.train_hash);
                v["translator"] = backend_json(cfg, BackendKind::Translator);
            }
            MethodologyKind::Bt | MethodologyKind::MsfBt => {
                v["translator"] = backend_json(cfg, BackendKind::Translator);
            }
            MethodologyKind::Joint => {
                let hashes: Result<Vec<String>> = cfg
                    .data
                    .languages
                    .iter()
                    .map(|l| Ok(self.data(*l, cell.seed)?.train_hash.clone()))
                    .collect();
                v = json!({
                    "stage": "train",
                    "kind": "joint",
                    "hyper": spec.hyper,
                    "seed": cell.seed,
                    "seq2seq": backend_json(cfg, BackendKind::Seq2seq),
                    "trains": hashes?,
                });
            }
            MethodologyKind::Llm => {
                v = json!({"stage": "train", "kind": "llm"});
            }
            _ => {}
        }
        if cell.kind.uses_masking() {
            v["classifier"] = json!(self.classifier(cell.language, cell.seed)?.1);
        }
        Ok(digest(&v))
    }

    fn train_cell(&self, cell: Cell, dir: &Path, executed: &mut Vec<Stage>) -> Result<(RunHandle<'_>, String)> {
        if cell.kind == MethodologyKind::Joint {
            let (run, hash) = self.joint.get(&cell.seed).ok_or(PipelineError::MissingInput {
                methodology: MethodologyKind::Joint,
                what: "the shared Joint model",
            })?;
            return Ok((RunHandle::Shared(run), hash.clone()));
        }
        if cell.kind == MethodologyKind::EnOpTr {
            let (_, en_hash) = self.english.get(&cell.seed).ok_or(PipelineError::MissingInput {
                methodology: MethodologyKind::EnOpTr,
                what: "the English Parallel run",
            })?;
            let hash = digest(&json!({"stage": "train", "kind": "en-op-tr", "english": en_hash}));
            let spec = self.cfg.methodology_spec(cell.kind, cell.language);
            let run = train_methodology(&spec, &TrainInputs::default(), &mut self.new_generator(), cell.seed)?;
            return Ok((RunHandle::Owned(run), hash));
        }
        let hash = self.train_hash(cell)?;
        let model_path = dir.join("model.json");
        if cached(dir, "train", &hash, std::slice::from_ref(&model_path)) {
            return Ok((RunHandle::Owned(TrainedRun::load(read_json(&model_path)?)?), hash));
        }
        let spec = self.cfg.methodology_spec(cell.kind, cell.language);
        let data = self.data(cell.language, cell.seed)?;
        let english = if cell.kind == MethodologyKind::EnIpTrTrain {
            Some(&self.data(LanguageTag::En, cell.seed)?.splits.train)
        } else {
            None
        };
        let classifier = if cell.kind.uses_masking() {
            Some(self.classifier(cell.language, cell.seed)?.0)
        } else {
            None
        };
        let inputs = TrainInputs {
            train: Some(&data.splits.train),
            english_train: english,
            joint_train: None,
            translator: Some(self.translator.as_ref()),
            classifier,
        };
        log::info!("training {} {} seed {}", cell.language.code(), cell.kind, cell.seed);
        let run = train_methodology(&spec, &inputs, &mut self.new_generator(), cell.seed)?;
        write_json(&model_path, &run.save()?)?;
        record_stage(dir, "train", &hash)?;
        executed.push(Stage::Train);
        Ok((RunHandle::Owned(run), hash))
    }

    fn infer_cell(
        &self,
        cell: Cell,
        dir: &Path,
        run: &TrainedRun,
        train_hash: &str,
        executed: &mut Vec<Stage>,
    ) -> Result<(BTreeMap<Direction, Vec<OutputRecord>>, String)> {
        let cfg = self.cfg;
        let data = self.data(cell.language, cell.seed)?;
        let mut v = json!({
            "stage": "infer",
            "train": train_hash,
            "test": data.test_hash,
            "decoding": cfg.experiments.decoding,
        });
        match cell.kind {
            MethodologyKind::EnOpTr => {
                v["translator"] = backend_json(cfg, BackendKind::Translator);
                v["english_test"] = json!(self.data(LanguageTag::En, cell.seed)?.test_hash);
            }
            MethodologyKind::Llm => {
                v["llm"] = backend_json(cfg, BackendKind::Llm);
                v["shots"] = json!(cfg.experiments.shots);
                v["dev"] = json!(data.dev_hash);
                v["seed"] = json!(cell.seed);
            }
            k if k.uses_masking() => {
                v["classifier"] = json!(self.classifier(cell.language, cell.seed)?.1);
            }
            _ => {}
        }
        let hash = digest(&v);
        let artifacts: Vec<PathBuf> = Direction::BOTH.iter().map(|d| outputs_path(dir, *d)).collect();
        if cached(dir, "infer", &hash, &artifacts) {
            return Ok((read_outputs(dir)?, hash));
        }

        let test = &data.splits.test;
        let mut flagged: BTreeMap<Direction, Vec<usize>> = BTreeMap::new();
        let mut extra = BTreeMap::new();
        let outputs = if cell.kind == MethodologyKind::Llm {
            let client = self.llm.as_deref().ok_or(PipelineError::MissingInput {
                methodology: MethodologyKind::Llm,
                what: "an LLM backend",
            })?;
            let examples = select_few_shot(&data.splits.dev, cfg.experiments.shots, cell.seed)?;
            let templates: BTreeMap<Direction, PromptTemplate> = Direction::BOTH
                .into_iter()
                .map(|d| (d, PromptTemplate::new(cell.language, d, examples.clone())))
                .collect();
            let llm_run = run_llm_eval(client, &templates, test, &cfg.experiments.decoding)?;
            let log_path = dir.join("llm_log.jsonl");
            write_llm_log(&log_path, &llm_run.log).map_err(|e| Error::io(&log_path, e))?;
            extra.extend(llm_run.metadata());
            flagged = llm_run.failed.clone();
            llm_run.outputs
        } else {
            let (english_run, english_test) = match cell.kind {
                MethodologyKind::EnOpTr => (
                    self.english.get(&cell.seed).map(|(r, _)| r),
                    Some(&self.data(LanguageTag::En, cell.seed)?.splits.test),
                ),
                _ => (None, None),
            };
            let classifier = if cell.kind.uses_masking() {
                Some(self.classifier(cell.language, cell.seed)?.0)
            } else {
                None
            };
            let ctx = InferContext {
                classifier,
                translator: Some(self.translator.as_ref()),
                english_run,
                english_test,
            };
            log::info!("inference {} {} seed {}", cell.language.code(), cell.kind, cell.seed);
            infer(run, test, &ctx, &cfg.experiments.decoding)?
        };

        let mut records = BTreeMap::new();
        for d in Direction::BOTH {
            let outs = outputs.get(&d).ok_or(PipelineError::OutputCount {
                expected: test.len(),
                got: 0,
            })?;
            let view = direction_view(test, d);
            if outs.len() != view.len() {
                return Err(PipelineError::OutputCount {
                    expected: view.len(),
                    got: outs.len(),
                }
                .into());
            }
            let bad = flagged.get(&d).cloned().unwrap_or_default();
            let rs: Vec<OutputRecord> = view
                .into_iter()
                .zip(outs)
                .enumerate()
                .map(|(i, (e, o))| OutputRecord {
                    pair_id: e.pair_id,
                    input: e.input,
                    target: e.target,
                    output: o.clone(),
                    flagged: bad.contains(&i),
                })
                .collect();
            write_outputs(dir, d, &rs)?;
            records.insert(d, rs);
        }

        let mut metadata = run.metadata.clone();
        metadata.extend(extra);
        metadata.insert("language".into(), json!(cell.language.code()));
        metadata.insert("methodology".into(), json!(cell.kind.name()));
        metadata.insert("seed".into(), json!(cell.seed));
        if let Some(src) = &cfg.source {
            metadata.insert("config".into(), json!(src));
        }
        if cell.kind == MethodologyKind::Joint {
            metadata.insert(
                "shared_model".into(),
                json!(joint_dir(&cfg.data.runs_dir, cell.seed).join("model.json")),
            );
        }
        metadata.insert("test_pairs".into(), json!(test.len()));
        write_json(&dir.join("metadata.json"), &metadata)?;
        record_stage(dir, "infer", &hash)?;
        executed.push(Stage::Infer);
        Ok((records, hash))
    }

    fn eval_cell(
        &self,
        cell: Cell,
        dir: &Path,
        outputs: &BTreeMap<Direction, Vec<OutputRecord>>,
        infer_hash: &str,
        executed: &mut Vec<Stage>,
    ) -> Result<MetricReport> {
        let cfg = self.cfg;
        let (clf, clf_hash) = self.classifier(cell.language, cell.seed)?;
        let hash = digest(&json!({
            "stage": "eval",
            "infer": infer_hash,
            "classifier": clf_hash,
            "embedder": backend_json(cfg, BackendKind::Embedder),
            "lm": backend_json(cfg, BackendKind::Lm),
            "bleu_reference": cfg.eval.bleu_reference,
        }));
        let report_path = dir.join("report.json");
        if cached(dir, "eval", &hash, std::slice::from_ref(&report_path)) {
            return Ok(serde_json::from_value(read_json(&report_path)?)?);
        }
        let test = &self.data(cell.language, cell.seed)?.splits.test;
        let ev = Evaluators {
            classifier: clf,
            embedder: self.embedder.as_ref(),
            lm: self.lm.as_ref(),
        };
        let opts = EvalOptions {
            bleu_reference: cfg.eval.bleu_reference,
            exec: cfg.eval.exec,
        };
        let report = evaluate_run(&output_map(outputs), test, cell.kind.name(), &ev, &opts)?;
        write_json(&report_path, &report)?;
        record_stage(dir, "eval", &hash)?;
        executed.push(Stage::Eval);
        Ok(report)
    }

    fn process(&self, cell: Cell, upto: Stage) -> CellOutcome {
        let dir = cell_dir(&self.cfg.data.runs_dir, cell.language, cell.kind, cell.seed);
        let mut executed = Vec::new();
        let result = (|| -> Result<Option<MetricReport>> {
            fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
            let (run, train_hash) = self.train_cell(cell, &dir, &mut executed)?;
            if upto < Stage::Infer {
                return Ok(None);
            }
            let (outputs, infer_hash) = self.infer_cell(cell, &dir, run.get(), &train_hash, &mut executed)?;
            if upto < Stage::Eval {
                return Ok(None);
            }
            Ok(Some(self.eval_cell(cell, &dir, &outputs, &infer_hash, &mut executed)?))
        })();
        let (report, error) = match result {
            Ok(r) => (r, None),
            Err(e) => {
                log::error!("{} {} seed {}: {e}", cell.language.code(), cell.kind, cell.seed);
                (None, Some(e.to_string()))
            }
        };
        CellOutcome {
            language: cell.language,
            methodology: cell.kind,
            seed: cell.seed,
            dir,
            executed,
            skipped: None,
            report,
            error,
        }
    }
}

fn joint_dir(runs_dir: &Path, seed: u64) -> PathBuf {
    runs_dir.join("joint").join(seed.to_string())
}

fn train_joint(shared: &Shared<'_>, seed: u64) -> Result<(TrainedRun, String)> {
    let cfg = shared.cfg;
    let first = cfg.data.languages[0];
    let hash = shared.train_hash(Cell {
        language: first,
        kind: MethodologyKind::Joint,
        seed,
    })?;
    let dir = joint_dir(&cfg.data.runs_dir, seed);
    let model_path = dir.join("model.json");
    if cached(&dir, "train", &hash, std::slice::from_ref(&model_path)) {
        return Ok((TrainedRun::load(read_json(&model_path)?)?, hash));
    }
    let mut joint_train = BTreeMap::new();
    for &l in &cfg.data.languages {
        joint_train.insert(l, shared.data(l, seed)?.splits.train.clone());
    }
    let spec = cfg.methodology_spec(MethodologyKind::Joint, first);
    let inputs = TrainInputs {
        joint_train: Some(&joint_train),
        ..TrainInputs::default()
    };
    log::info!("training shared Joint model over {} languages, seed {seed}", joint_train.len());
    let run = train_methodology(&spec, &inputs, &mut shared.new_generator(), seed)?;
    write_json(&model_path, &run.save()?)?;
    record_stage(&dir, "train", &hash)?;
    Ok((run, hash))
}

fn train_english_parallel(shared: &Shared<'_>, seed: u64) -> Result<(TrainedRun, String)> {
    let cell = Cell {
        language: LanguageTag::En,
        kind: MethodologyKind::Parallel,
        seed,
    };
    let dir = cell_dir(&shared.cfg.data.runs_dir, cell.language, cell.kind, seed);
    let mut executed = Vec::new();
    let (handle, hash) = shared.train_cell(cell, &dir, &mut executed)?;
    match handle {
        RunHandle::Owned(run) => Ok((run, hash)),
        RunHandle::Shared(_) => unreachable!("Parallel runs are never shared"),
    }
}

/// Averages reports of the same (language, methodology) over seeds. A single
/// seed's report is kept as is.
pub fn average_over_seeds(reports: &[MetricReport]) -> Vec<MetricReport> {
    let mut groups: Vec<(LanguageTag, String, Vec<&MetricReport>)> = Vec::new();
    for r in reports {
        match groups.iter_mut().find(|g| g.0 == r.language && g.1 == r.methodology) {
            Some(g) => g.2.push(r),
            None => groups.push((r.language, r.methodology.clone(), vec![r])),
        }
    }
    groups
        .into_iter()
        .map(|(lang, m, rs)| {
            if rs.len() == 1 {
                return rs[0].clone();
            }
            let k = rs.len() as f64;
            let mean = |f: fn(&MetricReport) -> f64| rs.iter().map(|r| f(r)).sum::<f64>() / k;
            MetricReport::from_scores(lang, m, mean(|r| r.acc), mean(|r| r.bleu), mean(|r| r.cs), mean(|r| r.ppl))
        })
        .collect()
}

/// Writes `table.txt`, `table.csv`, `reports.json` and (optionally) plots.
pub fn write_report(reports: &[MetricReport], dir: &Path, plots: bool) -> Result<ReportFiles> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let table = render_table(reports)?;
    let mut files = Vec::new();
    for (name, body) in [("table.txt", &table.text), ("table.csv", &table.csv)] {
        let p = dir.join(name);
        fs::write(&p, body).map_err(|e| Error::io(&p, e))?;
        files.push(p);
    }
    let p = dir.join("reports.json");
    write_json(&p, &reports)?;
    files.push(p);
    let mut plot_notice = None;
    if plots {
        let outcome = emit_plots(reports, dir)?;
        files.extend(outcome.files);
        plot_notice = outcome.notice;
    }
    Ok(ReportFiles { files, plot_notice })
}

/// Finds every `report.json` under `runs/<lang>/<methodology>/<seed>/`.
pub fn collect_reports(runs_dir: &Path) -> Result<Vec<MetricReport>> {
    let mut paths = Vec::new();
    let read = |d: &Path| -> Result<Vec<PathBuf>> {
        let mut v: Vec<PathBuf> = fs::read_dir(d)
            .map_err(|e| Error::io(d, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_dir())
            .collect();
        v.sort();
        Ok(v)
    };
    for lang_dir in read(runs_dir)? {
        let is_lang = lang_dir
            .file_name()
            .and_then(|n| n.to_str())
            .is_some_and(|n| n.parse::<LanguageTag>().is_ok());
        if !is_lang {
            continue;
        }
        for m_dir in read(&lang_dir)? {
            let is_methodology = m_dir
                .file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.parse::<MethodologyKind>().is_ok());
            if !is_methodology {
                continue;
            }
            for seed_dir in read(&m_dir)? {
                let p = seed_dir.join("report.json");
                if p.is_file() {
                    paths.push(p);
                }
            }
        }
    }
    let mut reports = Vec::new();
    for p in paths {
        reports.push(serde_json::from_value::<MetricReport>(read_json(&p)?)?);
    }
    let order = |m: &str| {
        MethodologyKind::ALL
            .iter()
            .position(|k| k.name() == m)
            .unwrap_or(usize::MAX)
    };
    reports.sort_by(|a, b| (a.language, order(&a.methodology)).cmp(&(b.language, order(&b.methodology))));
    Ok(reports)
}

/// Runs every configured cell admitted by `filter` up to `upto`.
///
/// Cells that cannot apply (cross-lingual methodologies on English) are
/// reported as skipped. A failing cell is recorded in its outcome and does
/// not stop the others.
pub fn run(cfg: &Config, upto: Stage, filter: &CellFilter) -> Result<RunSummary> {
    let data = prepare(cfg)?;
    if upto == Stage::Prepare {
        return Ok(RunSummary {
            cells: Vec::new(),
            reports: Vec::new(),
            report_files: None,
        });
    }

    let mut cells = Vec::new();
    let mut outcomes = Vec::new();
    for &seed in &cfg.data.seeds {
        for &language in &cfg.data.languages {
            for &kind in &cfg.experiments.methodologies {
                if !filter.admits(language, kind, seed) {
                    continue;
                }
                if kind.requires_non_english() && language == LanguageTag::En {
                    log::info!("skipping {kind} for English: it needs a non-English target");
                    outcomes.push(CellOutcome {
                        language,
                        methodology: kind,
                        seed,
                        dir: cell_dir(&cfg.data.runs_dir, language, kind, seed),
                        executed: Vec::new(),
                        skipped: Some(format!("{kind} requires a non-English target")),
                        report: None,
                        error: None,
                    });
                    continue;
                }
                cells.push(Cell { language, kind, seed });
            }
        }
    }

    let mut classifiers = BTreeMap::new();
    for c in &cells {
        if let std::collections::btree_map::Entry::Vacant(slot) = classifiers.entry((c.language, c.seed)) {
            let d = data.get(&(c.language, c.seed)).expect("prepared every configured language");
            slot.insert(ensure_classifier(cfg, c.language, c.seed, d)?);
        }
    }
    let backend = |k: BackendKind| cfg.backend(k).cloned().unwrap_or_default();
    let llm = if cells.iter().any(|c| c.kind == MethodologyKind::Llm) {
        Some(make_llm(&backend(BackendKind::Llm))?)
    } else {
        None
    };
    let mut shared = Shared {
        cfg,
        data,
        classifiers,
        translator: make_translator(&backend(BackendKind::Translator))?,
        embedder: make_embedder(&backend(BackendKind::Embedder))?,
        lm: make_lm(&backend(BackendKind::Lm))?,
        llm,
        joint: BTreeMap::new(),
        english: BTreeMap::new(),
    };

    let seeds_needing = |kind: MethodologyKind| -> Vec<u64> {
        let mut s: Vec<u64> = cells.iter().filter(|c| c.kind == kind).map(|c| c.seed).collect();
        s.dedup();
        s
    };
    let joint_seeds = seeds_needing(MethodologyKind::Joint);
    let english_seeds = seeds_needing(MethodologyKind::EnOpTr);
    for seed in joint_seeds {
        let r = train_joint(&shared, seed)?;
        shared.joint.insert(seed, r);
    }
    for seed in english_seeds {
        let r = train_english_parallel(&shared, seed)?;
        shared.english.insert(seed, r);
    }

    let workers = cfg.experiments.workers.max(1).min(cells.len().max(1));
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<CellOutcome>>> = Mutex::new(vec![None; cells.len()]);
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(&cell) = cells.get(i) else { break };
                let outcome = shared.process(cell, upto);
                results.lock().unwrap_or_else(|e| e.into_inner())[i] = Some(outcome);
            });
        }
    });
    outcomes.extend(
        results
            .into_inner()
            .unwrap_or_else(|e| e.into_inner())
            .into_iter()
            .map(|o| o.expect("every cell is processed")),
    );

    let evaluated: Vec<MetricReport> = outcomes.iter().filter_map(|o| o.report.clone()).collect();
    let reports = average_over_seeds(&evaluated);
    let report_files = if upto >= Stage::Report {
        Some(write_report(&reports, &cfg.report.dir, cfg.report.plots)?)
    } else {
        None
    };
    Ok(RunSummary {
        cells: outcomes,
        reports,
        report_files,
    })
}

/// Re-scores the directions present in a cell directory with the configured
/// evaluators, using the classifier for the cell's language and seed.
pub fn evaluate_run_dir(cfg: &Config, dir: &Path) -> Result<MetricReport> {
    let md = read_json(&dir.join("metadata.json"))?;
    let bad = |what: &str| Error::from(PipelineError::InvalidSpec(format!("metadata.json lacks {what}")));
    let language: LanguageTag = md["language"].as_str().ok_or_else(|| bad("language"))?.parse()?;
    let methodology = md["methodology"].as_str().ok_or_else(|| bad("methodology"))?.to_string();
    let seed = md["seed"].as_u64().ok_or_else(|| bad("seed"))?;
    let outputs = read_outputs(dir)?;
    let data = prepare_languages(cfg, &[language], &[seed])?;
    let (clf, _) = ensure_classifier(cfg, language, seed, &data[&(language, seed)])?;
    let backend = |k: BackendKind| cfg.backend(k).cloned().unwrap_or_default();
    let embedder = make_embedder(&backend(BackendKind::Embedder))?;
    let lm = make_lm(&backend(BackendKind::Lm))?;
    let ev = Evaluators {
        classifier: clf.as_ref(),
        embedder: embedder.as_ref(),
        lm: lm.as_ref(),
    };
    let opts = EvalOptions {
        bleu_reference: cfg.eval.bleu_reference,
        exec: cfg.eval.exec,
    };
    let mut per_direction = BTreeMap::new();
    for (d, records) in &outputs {
        let outs: Vec<String> = records.iter().map(|r| r.output.clone()).collect();
        let inputs: Vec<String> = records.iter().map(|r| r.input.clone()).collect();
        let targets: Vec<String> = records.iter().map(|r| r.target.clone()).collect();
        per_direction.insert(*d, evaluate_direction(&outs, &inputs, &targets, d.target(), &ev, &opts)?);
    }
    Ok(MetricReport::from_directions(language, methodology, per_direction))
}
