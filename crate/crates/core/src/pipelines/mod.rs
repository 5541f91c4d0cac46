//! Training-data builders, training and inference for every methodology, and
//! sentiment-classifier operations.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adapters::{AdapterError, Hyperparams};
use crate::attribution::{AttributionError, MaskingConfig};
use crate::corpus::{CorpusError, LanguageTag};

mod builders;
mod classifier;
mod run;

pub use builders::{
    build_ae_pairs, build_bt_pairs, build_joint_dataset, build_msf_pairs, build_parallel_pairs,
    build_translate_train, joint_special_tokens, prefix_input, register_joint_tokens,
    translate_outputs,
};
pub use classifier::{
    batch_size_search, classification_accuracy, classifier_training_data, train_classifier,
    BatchSearch, ClassifierReport, DEFAULT_BATCH_GRID,
};
pub use run::{
    infer, train_methodology, train_seq2seq, training_data, InferContext, RunModels, TrainInputs,
    TrainedRun, TrainingData,
};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("no training examples")]
    EmptyExamples,
    #[error("run is not fitted")]
    NotFitted,
    #[error("invalid methodology spec: {0}")]
    InvalidSpec(String),
    #[error("{0} requires non-English target")]
    EnglishTarget(MethodologyKind),
    #[error("translation failed for sentence {index}: {source}")]
    Translation {
        index: usize,
        #[source]
        source: AdapterError,
    },
    #[error("translation failed for pair {pair_id}: {source}")]
    TranslationPair {
        pair_id: u64,
        #[source]
        source: AdapterError,
    },
    #[error("{methodology} needs {what}")]
    MissingInput {
        methodology: MethodologyKind,
        what: &'static str,
    },
    #[error("backend returned {got} outputs for {expected} inputs")]
    OutputCount { expected: usize, got: usize },
    #[error("test sets are not id-aligned: {0}")]
    Misaligned(String),
    #[error("empty batch-size grid")]
    EmptyGrid,
    #[error(transparent)]
    Attribution(#[from] AttributionError),
    #[error(transparent)]
    Adapter(#[from] AdapterError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
}

/// The nine experiment recipes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum MethodologyKind {
    Parallel,
    Ae,
    Bt,
    MsfAe,
    MsfBt,
    EnIpTrTrain,
    EnOpTr,
    Joint,
    Llm,
}

impl MethodologyKind {
    pub const ALL: [MethodologyKind; 9] = [
        MethodologyKind::Parallel,
        MethodologyKind::Ae,
        MethodologyKind::Bt,
        MethodologyKind::MsfAe,
        MethodologyKind::MsfBt,
        MethodologyKind::EnIpTrTrain,
        MethodologyKind::EnOpTr,
        MethodologyKind::Joint,
        MethodologyKind::Llm,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MethodologyKind::Parallel => "Parallel",
            MethodologyKind::Ae => "AE",
            MethodologyKind::Bt => "BT",
            MethodologyKind::MsfAe => "MSF-AE",
            MethodologyKind::MsfBt => "MSF-BT",
            MethodologyKind::EnIpTrTrain => "EnIpTrTrain",
            MethodologyKind::EnOpTr => "EnOpTr",
            MethodologyKind::Joint => "Joint",
            MethodologyKind::Llm => "LLM",
        }
    }

    /// Directory-safe lowercase name.
    pub fn slug(self) -> &'static str {
        match self {
            MethodologyKind::Parallel => "parallel",
            MethodologyKind::Ae => "ae",
            MethodologyKind::Bt => "bt",
            MethodologyKind::MsfAe => "msf-ae",
            MethodologyKind::MsfBt => "msf-bt",
            MethodologyKind::EnIpTrTrain => "en-ip-tr-train",
            MethodologyKind::EnOpTr => "en-op-tr",
            MethodologyKind::Joint => "joint",
            MethodologyKind::Llm => "llm",
        }
    }

    pub fn uses_masking(self) -> bool {
        matches!(self, MethodologyKind::MsfAe | MethodologyKind::MsfBt)
    }

    pub fn uses_pivot(self) -> bool {
        matches!(self, MethodologyKind::Bt | MethodologyKind::MsfBt)
    }

    /// AE, BT and their MSF variants: one reconstruction model per polarity.
    pub fn is_reconstruction(self) -> bool {
        matches!(
            self,
            MethodologyKind::Ae | MethodologyKind::Bt | MethodologyKind::MsfAe | MethodologyKind::MsfBt
        )
    }

    pub fn requires_non_english(self) -> bool {
        matches!(self, MethodologyKind::EnIpTrTrain | MethodologyKind::EnOpTr)
    }

    pub fn needs_translator(self) -> bool {
        self.uses_pivot() || self.requires_non_english()
    }
}

impl fmt::Display for MethodologyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MethodologyKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        let norm: String = s
            .chars()
            .filter(|c| !matches!(c, '-' | '_' | ' '))
            .flat_map(char::to_lowercase)
            .collect();
        MethodologyKind::ALL
            .into_iter()
            .find(|k| k.slug().replace('-', "") == norm)
            .ok_or_else(|| {
                format!(
                    "unknown methodology {s:?} (expected one of {})",
                    MethodologyKind::ALL.map(|k| k.name()).join(", ")
                )
            })
    }
}

impl TryFrom<String> for MethodologyKind {
    type Error = String;
    fn try_from(s: String) -> Result<Self, String> {
        s.parse()
    }
}

impl From<MethodologyKind> for String {
    fn from(k: MethodologyKind) -> String {
        k.name().to_string()
    }
}

/// Round-trip pivot: Hindi for English, English for every other language.
pub fn default_pivot(language: LanguageTag) -> LanguageTag {
    match language {
        LanguageTag::En => LanguageTag::Hi,
        _ => LanguageTag::En,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodologySpec {
    pub kind: MethodologyKind,
    pub language: LanguageTag,
    pub hyper: Hyperparams,
    pub masking: Option<MaskingConfig>,
    pub pivot: Option<LanguageTag>,
}

impl MethodologySpec {
    /// Spec with every default filled in: per-language generator batch size,
    /// masking for MSF kinds, default pivot for BT kinds.
    pub fn new(kind: MethodologyKind, language: LanguageTag) -> Self {
        MethodologySpec {
            kind,
            language,
            hyper: Hyperparams::for_language(language),
            masking: kind.uses_masking().then(MaskingConfig::default),
            pivot: kind.uses_pivot().then(|| default_pivot(language)),
        }
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: String| Err(PipelineError::InvalidSpec(m));
        if self.masking.is_some() != self.kind.uses_masking() {
            return bad(format!(
                "masking config must be present exactly for MSF kinds ({})",
                self.kind
            ));
        }
        if self.pivot.is_some() != self.kind.uses_pivot() {
            return bad(format!("pivot must be present exactly for BT kinds ({})", self.kind));
        }
        if self.pivot == Some(self.language) {
            return bad(format!("pivot equals source language {}", self.language));
        }
        if self.kind.requires_non_english() && self.language == LanguageTag::En {
            return Err(PipelineError::EnglishTarget(self.kind));
        }
        if let Some(m) = &self.masking {
            m.validate()?;
        }
        self.hyper.validate()?;
        Ok(())
    }
}
