use std::collections::BTreeMap;

use super::{MethodologyKind, PipelineError};
use crate::adapters::{SentimentClassifier, Seq2SeqModel, Translator};
use crate::attribution::{mask_corpus, MaskingConfig};
use crate::corpus::{directional_views, Corpus, DirectedExample, LanguageTag, Polarity, StylePair};

/// Both directions of every pair, pos2neg first.
pub fn build_parallel_pairs(train: &Corpus) -> Vec<DirectedExample> {
    directional_views(train)
}

/// Identity reconstruction pairs `(s, s)`.
pub fn build_ae_pairs(sentences: &[String]) -> Vec<(String, String)> {
    sentences.iter().map(|s| (s.clone(), s.clone())).collect()
}

/// Round-trip pairs: input is `s` translated to `pivot` and back, target is `s`.
pub fn build_bt_pairs(
    sentences: &[String],
    language: LanguageTag,
    translator: &dyn Translator,
    pivot: LanguageTag,
) -> Result<Vec<(String, String)>, PipelineError> {
    sentences
        .iter()
        .enumerate()
        .map(|(index, s)| {
            let there = translator.translate(s, language, pivot);
            let back = there.and_then(|t| translator.translate(&t, pivot, language));
            back.map(|b| (b, s.clone()))
                .map_err(|source| PipelineError::Translation { index, source })
        })
        .collect()
}

/// Masks every base input with style words attributed toward `source_label`;
/// targets are kept.
pub fn build_msf_pairs(
    base: &[(String, String)],
    classifier: &dyn SentimentClassifier,
    source_label: Polarity,
    cfg: &MaskingConfig,
) -> Result<Vec<(String, String)>, PipelineError> {
    let inputs: Vec<String> = base.iter().map(|(i, _)| i.clone()).collect();
    let masked = mask_corpus(classifier, &inputs, source_label, cfg)?;
    Ok(masked
        .into_iter()
        .zip(base)
        .map(|(m, (_, t))| (m.masked, t.clone()))
        .collect())
}

/// `"<code> " + text`.
pub fn prefix_input(language: LanguageTag, text: &str) -> String {
    format!("{} {text}", language.prefix_token())
}

pub fn joint_special_tokens() -> Vec<String> {
    LanguageTag::ALL.iter().map(|l| l.prefix_token()).collect()
}

/// Registers the nine language prefixes. Returns false (and logs) when the
/// backend cannot extend its vocabulary, in which case prefixes stay plain text.
pub fn register_joint_tokens(model: &mut dyn Seq2SeqModel) -> bool {
    let ok = model.register_special_tokens(&joint_special_tokens());
    if !ok {
        log::warn!(
            "backend {} cannot register special tokens; language prefixes are plain text",
            model.backend_id()
        );
    }
    ok
}

/// Union of per-language parallel pairs with language-prefixed inputs.
pub fn build_joint_dataset(splits: &BTreeMap<LanguageTag, Corpus>) -> Vec<DirectedExample> {
    splits
        .iter()
        .flat_map(|(lang, corpus)| {
            build_parallel_pairs(corpus).into_iter().map(move |mut e| {
                e.input = prefix_input(*lang, &e.input);
                e
            })
        })
        .collect()
}

/// Machine-translates both sides of every English pair into `target` and
/// returns the directional views of the translated corpus.
pub fn build_translate_train(
    english_train: &Corpus,
    translator: &dyn Translator,
    target: LanguageTag,
) -> Result<Vec<DirectedExample>, PipelineError> {
    if target == LanguageTag::En {
        return Err(PipelineError::EnglishTarget(MethodologyKind::EnIpTrTrain));
    }
    let src = english_train.language;
    let pairs = english_train
        .pairs
        .iter()
        .map(|p| {
            let tr = |t: &str| {
                translator
                    .translate(t, src, target)
                    .map_err(|source| PipelineError::TranslationPair { pair_id: p.id, source })
            };
            Ok(StylePair {
                id: p.id,
                language: target,
                positive: tr(&p.positive)?,
                negative: tr(&p.negative)?,
                original_polarity: p.original_polarity,
            })
        })
        .collect::<Result<Vec<_>, PipelineError>>()?;
    Ok(directional_views(&Corpus::new(target, pairs)?))
}

/// Element-wise English-to-`target` translation. Empty (flagged) outputs stay empty.
pub fn translate_outputs(
    english_outputs: &[String],
    translator: &dyn Translator,
    target: LanguageTag,
) -> Result<Vec<String>, PipelineError> {
    english_outputs
        .iter()
        .enumerate()
        .map(|(index, s)| {
            if s.trim().is_empty() {
                return Ok(String::new());
            }
            translator
                .translate(s, LanguageTag::En, target)
                .map_err(|source| PipelineError::Translation { index, source })
        })
        .collect()
}
