use std::collections::BTreeMap;
use std::fmt;

use serde_json::{json, Value};

use super::builders::{
    build_ae_pairs, build_bt_pairs, build_joint_dataset, build_msf_pairs, build_parallel_pairs,
    build_translate_train, prefix_input, register_joint_tokens, translate_outputs,
};
use super::{MethodologyKind, MethodologySpec, PipelineError};
use crate::adapters::{
    load_seq2seq, AdapterError, DecodingParams, FitReport, SentimentClassifier, Seq2SeqModel,
    Translator,
};
use crate::attribution::mask_corpus;
use crate::corpus::{direction_view, polarity_subset, Corpus, DirectedExample, Direction, LanguageTag, Polarity};

/// Everything a methodology may need to build its training data. Only the
/// fields the methodology uses must be set.
#[derive(Clone, Copy, Default)]
pub struct TrainInputs<'a> {
    /// Train split of the run's language.
    pub train: Option<&'a Corpus>,
    /// English train split (EnIpTrTrain).
    pub english_train: Option<&'a Corpus>,
    /// Train splits of every language (Joint).
    pub joint_train: Option<&'a BTreeMap<LanguageTag, Corpus>>,
    pub translator: Option<&'a dyn Translator>,
    /// Masking classifier (MSF kinds).
    pub classifier: Option<&'a dyn SentimentClassifier>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum TrainingData {
    /// One model on mixed-direction pairs.
    Mixed(Vec<(String, String)>),
    /// One reconstruction model per target polarity.
    PerPolarity {
        positive: Vec<(String, String)>,
        negative: Vec<(String, String)>,
    },
    /// Nothing to train (EnOpTr reuses the English Parallel run; LLM is prompted).
    Untrained,
}

fn need<'a, T: ?Sized>(
    v: Option<&'a T>,
    methodology: MethodologyKind,
    what: &'static str,
) -> Result<&'a T, PipelineError> {
    v.ok_or(PipelineError::MissingInput { methodology, what })
}

fn pairs_of(examples: Vec<DirectedExample>) -> Vec<(String, String)> {
    examples.into_iter().map(|e| (e.input, e.target)).collect()
}

pub fn training_data(spec: &MethodologySpec, inputs: &TrainInputs<'_>) -> Result<TrainingData, PipelineError> {
    spec.validate()?;
    let kind = spec.kind;
    Ok(match kind {
        MethodologyKind::Parallel => {
            TrainingData::Mixed(pairs_of(build_parallel_pairs(need(inputs.train, kind, "a train split")?)))
        }
        MethodologyKind::Joint => TrainingData::Mixed(pairs_of(build_joint_dataset(need(
            inputs.joint_train,
            kind,
            "train splits for every language",
        )?))),
        MethodologyKind::EnIpTrTrain => TrainingData::Mixed(pairs_of(build_translate_train(
            need(inputs.english_train, kind, "the English train split")?,
            need(inputs.translator, kind, "a translator")?,
            spec.language,
        )?)),
        MethodologyKind::Ae | MethodologyKind::Bt | MethodologyKind::MsfAe | MethodologyKind::MsfBt => {
            let train = need(inputs.train, kind, "a train split")?;
            let build = |polarity: Polarity| -> Result<Vec<(String, String)>, PipelineError> {
                let sentences = polarity_subset(train, polarity);
                let base = match spec.pivot {
                    Some(pivot) => build_bt_pairs(
                        &sentences,
                        spec.language,
                        need(inputs.translator, kind, "a translator")?,
                        pivot,
                    )?,
                    None => build_ae_pairs(&sentences),
                };
                match &spec.masking {
                    Some(cfg) => build_msf_pairs(
                        &base,
                        need(inputs.classifier, kind, "a masking classifier")?,
                        polarity,
                        cfg,
                    ),
                    None => Ok(base),
                }
            };
            TrainingData::PerPolarity {
                positive: build(Polarity::Positive)?,
                negative: build(Polarity::Negative)?,
            }
        }
        MethodologyKind::EnOpTr | MethodologyKind::Llm => TrainingData::Untrained,
    })
}

pub enum RunModels {
    Single(Box<dyn Seq2SeqModel>),
    PerPolarity {
        positive: Box<dyn Seq2SeqModel>,
        negative: Box<dyn Seq2SeqModel>,
    },
    Untrained,
}

impl fmt::Debug for RunModels {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RunModels::Single(m) => write!(f, "Single({})", m.backend_id()),
            RunModels::PerPolarity { positive, .. } => write!(f, "PerPolarity({})", positive.backend_id()),
            RunModels::Untrained => f.write_str("Untrained"),
        }
    }
}

/// A trained (or training-free) run plus the metadata describing it.
#[derive(Debug)]
pub struct TrainedRun {
    pub spec: MethodologySpec,
    pub seed: u64,
    pub models: RunModels,
    pub metadata: BTreeMap<String, Value>,
}

impl TrainedRun {
    pub fn is_fitted(&self) -> bool {
        match &self.models {
            RunModels::Single(m) => m.is_fitted(),
            RunModels::PerPolarity { positive, negative } => positive.is_fitted() && negative.is_fitted(),
            RunModels::Untrained => true,
        }
    }

    pub fn save(&self) -> Result<Value, PipelineError> {
        let models = match &self.models {
            RunModels::Single(m) => json!({"kind": "single", "model": m.save()?}),
            RunModels::PerPolarity { positive, negative } => json!({
                "kind": "per_polarity",
                "positive": positive.save()?,
                "negative": negative.save()?,
            }),
            RunModels::Untrained => json!({"kind": "untrained"}),
        };
        Ok(json!({
            "spec": self.spec,
            "seed": self.seed,
            "metadata": self.metadata,
            "models": models,
        }))
    }

    pub fn load(value: Value) -> Result<Self, PipelineError> {
        let bad = |m: &str| PipelineError::Adapter(AdapterError::Load(m.to_string()));
        let spec: MethodologySpec = serde_json::from_value(value["spec"].clone()).map_err(|e| bad(&e.to_string()))?;
        let seed = value["seed"].as_u64().ok_or_else(|| bad("missing seed"))?;
        let metadata: BTreeMap<String, Value> =
            serde_json::from_value(value["metadata"].clone()).map_err(|e| bad(&e.to_string()))?;
        let m = &value["models"];
        let models = match m["kind"].as_str() {
            Some("single") => RunModels::Single(load_seq2seq(m["model"].clone())?),
            Some("per_polarity") => RunModels::PerPolarity {
                positive: load_seq2seq(m["positive"].clone())?,
                negative: load_seq2seq(m["negative"].clone())?,
            },
            Some("untrained") => RunModels::Untrained,
            _ => return Err(bad("unknown run model layout")),
        };
        Ok(TrainedRun {
            spec,
            seed,
            models,
            metadata,
        })
    }
}

fn fit_one(
    model: &mut dyn Seq2SeqModel,
    examples: &[(String, String)],
    spec: &MethodologySpec,
    seed: u64,
) -> Result<FitReport, PipelineError> {
    if examples.is_empty() {
        return Err(PipelineError::EmptyExamples);
    }
    if !model.supports_language(spec.language) {
        crate::adapters::warn_unsupported_language(model.backend_id(), spec.language);
    }
    Ok(model.fit(examples, &spec.hyper, seed)?)
}

fn base_metadata(spec: &MethodologySpec, seed: u64, backend: &str) -> BTreeMap<String, Value> {
    let mut md = BTreeMap::new();
    md.insert("backend".into(), json!(backend));
    md.insert("methodology".into(), json!(spec.kind.name()));
    md.insert("language".into(), json!(spec.language.code()));
    md.insert("seed".into(), json!(seed));
    md.insert("hyperparams".into(), json!(spec.hyper));
    md.insert("epochs".into(), json!(spec.hyper.epochs));
    if let Some(p) = spec.pivot {
        md.insert("pivot".into(), json!(p.code()));
    }
    if let Some(m) = &spec.masking {
        md.insert("masking".into(), json!(m));
    }
    md
}

/// Fits `model` on `examples` with the spec's hyperparameters.
pub fn train_seq2seq(
    mut model: Box<dyn Seq2SeqModel>,
    examples: &[(String, String)],
    spec: &MethodologySpec,
    seed: u64,
) -> Result<TrainedRun, PipelineError> {
    spec.hyper.validate()?;
    let report = fit_one(model.as_mut(), examples, spec, seed)?;
    let mut metadata = base_metadata(spec, seed, model.backend_id());
    metadata.insert("train_examples".into(), json!(examples.len()));
    metadata.insert("losses".into(), json!(report.epoch_losses));
    Ok(TrainedRun {
        spec: spec.clone(),
        seed,
        models: RunModels::Single(model),
        metadata,
    })
}

/// Builds the methodology's training data and fits fresh models from `new_model`.
pub fn train_methodology(
    spec: &MethodologySpec,
    inputs: &TrainInputs<'_>,
    new_model: &mut dyn FnMut() -> Result<Box<dyn Seq2SeqModel>, AdapterError>,
    seed: u64,
) -> Result<TrainedRun, PipelineError> {
    match training_data(spec, inputs)? {
        TrainingData::Mixed(examples) => {
            let mut model = new_model()?;
            let registered = (spec.kind == MethodologyKind::Joint).then(|| register_joint_tokens(model.as_mut()));
            let mut run = train_seq2seq(model, &examples, spec, seed)?;
            if let Some(r) = registered {
                run.metadata.insert("special_tokens_registered".into(), json!(r));
            }
            if spec.kind == MethodologyKind::Parallel {
                run.metadata.insert("direction_handling".into(), json!("single bidirectional model"));
            }
            Ok(run)
        }
        TrainingData::PerPolarity { positive, negative } => {
            let mut pos = new_model()?;
            let mut neg = new_model()?;
            let pos_report = fit_one(pos.as_mut(), &positive, spec, seed)?;
            let neg_report = fit_one(neg.as_mut(), &negative, spec, seed)?;
            let mut metadata = base_metadata(spec, seed, pos.backend_id());
            metadata.insert("train_examples".into(), json!(positive.len() + negative.len()));
            metadata.insert("losses.positive".into(), json!(pos_report.epoch_losses));
            metadata.insert("losses.negative".into(), json!(neg_report.epoch_losses));
            Ok(TrainedRun {
                spec: spec.clone(),
                seed,
                models: RunModels::PerPolarity {
                    positive: pos,
                    negative: neg,
                },
                metadata,
            })
        }
        TrainingData::Untrained => {
            let mut metadata = base_metadata(spec, seed, "none");
            if spec.kind == MethodologyKind::EnOpTr {
                metadata.insert("delegates_to".into(), json!("en/Parallel"));
            }
            Ok(TrainedRun {
                spec: spec.clone(),
                seed,
                models: RunModels::Untrained,
                metadata,
            })
        }
    }
}

/// Inference-time collaborators. Only the fields the methodology uses must be set.
#[derive(Clone, Copy, Default)]
pub struct InferContext<'a> {
    /// Masking classifier (MSF kinds).
    pub classifier: Option<&'a dyn SentimentClassifier>,
    /// Output translator (EnOpTr).
    pub translator: Option<&'a dyn Translator>,
    /// English Parallel run and the English test split with the same ids (EnOpTr).
    pub english_run: Option<&'a TrainedRun>,
    pub english_test: Option<&'a Corpus>,
}

fn generate(
    model: &dyn Seq2SeqModel,
    inputs: &[String],
    decoding: &DecodingParams,
) -> Result<Vec<String>, PipelineError> {
    if inputs.is_empty() {
        return Ok(Vec::new());
    }
    let out = model.generate(inputs, decoding)?;
    if out.len() != inputs.len() {
        return Err(PipelineError::OutputCount {
            expected: inputs.len(),
            got: out.len(),
        });
    }
    Ok(out)
}

/// Transferred outputs per direction, one per test pair in test order.
///
/// Parallel, Joint and EnIpTrTrain feed the source side directly (Joint with
/// the test language's prefix). Reconstruction kinds feed source-polarity
/// sentences to the model trained on the target polarity, masking them first
/// for MSF kinds. EnOpTr translates the English Parallel outputs.
pub fn infer(
    run: &TrainedRun,
    test: &Corpus,
    ctx: &InferContext<'_>,
    decoding: &DecodingParams,
) -> Result<BTreeMap<Direction, Vec<String>>, PipelineError> {
    if !run.is_fitted() {
        return Err(PipelineError::NotFitted);
    }
    let kind = run.spec.kind;
    let mut out = BTreeMap::new();
    match (&run.models, kind) {
        (RunModels::Single(model), _) => {
            for d in Direction::BOTH {
                let inputs: Vec<String> = direction_view(test, d)
                    .into_iter()
                    .map(|e| {
                        if kind == MethodologyKind::Joint {
                            prefix_input(test.language, &e.input)
                        } else {
                            e.input
                        }
                    })
                    .collect();
                out.insert(d, generate(model.as_ref(), &inputs, decoding)?);
            }
        }
        (RunModels::PerPolarity { positive, negative }, _) => {
            for d in Direction::BOTH {
                let mut inputs = polarity_subset(test, d.source());
                if let Some(cfg) = &run.spec.masking {
                    let clf = need(ctx.classifier, kind, "a masking classifier")?;
                    inputs = mask_corpus(clf, &inputs, d.source(), cfg)?
                        .into_iter()
                        .map(|m| m.masked)
                        .collect();
                }
                let model = match d.target() {
                    Polarity::Positive => positive,
                    Polarity::Negative => negative,
                };
                out.insert(d, generate(model.as_ref(), &inputs, decoding)?);
            }
        }
        (RunModels::Untrained, MethodologyKind::EnOpTr) => {
            let en_run = need(ctx.english_run, kind, "the English Parallel run")?;
            let en_test = need(ctx.english_test, kind, "the English test split")?;
            let translator = need(ctx.translator, kind, "a translator")?;
            if en_run.spec.kind != MethodologyKind::Parallel {
                return Err(PipelineError::InvalidSpec(format!(
                    "EnOpTr needs an English Parallel run, got {}",
                    en_run.spec.kind
                )));
            }
            if en_test.ids() != test.ids() {
                return Err(PipelineError::Misaligned(format!(
                    "English test has {} pairs, {} test has {}",
                    en_test.len(),
                    test.language,
                    test.len()
                )));
            }
            let english = infer(en_run, en_test, ctx, decoding)?;
            for (d, outs) in english {
                out.insert(d, translate_outputs(&outs, translator, test.language)?);
            }
        }
        (RunModels::Untrained, _) => {
            return Err(PipelineError::InvalidSpec(format!(
                "{kind} has no trained model to run; LLM runs go through the llm module"
            )))
        }
    }
    Ok(out)
}
