//! Style-parallel corpora: loading, validation, deterministic splitting and
//! the directional / single-polarity views consumed by the pipelines.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::util;

/// Expected number of pairs in a full released corpus.
pub const FULL_CORPUS_SIZE: usize = 1000;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot read corpus file {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("empty corpus: {0}")]
    Empty(PathBuf),
    #[error("malformed record at line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("duplicate id {0}")]
    DuplicateId(u64),
    #[error("empty {side} text for id {id}")]
    EmptyText { id: u64, side: Polarity },
    #[error("split exceeds corpus: needs {requested} pairs but corpus has {available}")]
    SpecExceedsCorpus { requested: usize, available: usize },
    #[error("unknown language code {0:?}")]
    UnknownLanguage(String),
}

/// One of the nine corpus languages.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum LanguageTag {
    En,
    Hi,
    Mag,
    Ml,
    Mr,
    Or,
    Pa,
    Te,
    Ur,
}

impl LanguageTag {
    pub const ALL: [LanguageTag; 9] = [
        LanguageTag::En,
        LanguageTag::Hi,
        LanguageTag::Mag,
        LanguageTag::Ml,
        LanguageTag::Mr,
        LanguageTag::Or,
        LanguageTag::Pa,
        LanguageTag::Te,
        LanguageTag::Ur,
    ];

    pub fn code(self) -> &'static str {
        match self {
            LanguageTag::En => "en",
            LanguageTag::Hi => "hi",
            LanguageTag::Mag => "mag",
            LanguageTag::Ml => "ml",
            LanguageTag::Mr => "mr",
            LanguageTag::Or => "or",
            LanguageTag::Pa => "pa",
            LanguageTag::Te => "te",
            LanguageTag::Ur => "ur",
        }
    }

    /// English display name, used in prompts and reports.
    pub fn name(self) -> &'static str {
        match self {
            LanguageTag::En => "English",
            LanguageTag::Hi => "Hindi",
            LanguageTag::Mag => "Magahi",
            LanguageTag::Ml => "Malayalam",
            LanguageTag::Mr => "Marathi",
            LanguageTag::Or => "Odia",
            LanguageTag::Pa => "Punjabi",
            LanguageTag::Te => "Telugu",
            LanguageTag::Ur => "Urdu",
        }
    }

    /// Language identifier token used by joint multilingual training, e.g. `<hi>`.
    pub fn prefix_token(self) -> String {
        format!("<{}>", self.code())
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL
            .into_iter()
            .find(|l| l.name().eq_ignore_ascii_case(name))
    }
}

impl fmt::Display for LanguageTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for LanguageTag {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|l| l.code() == s)
            .ok_or_else(|| CorpusError::UnknownLanguage(s.to_string()))
    }
}

impl TryFrom<String> for LanguageTag {
    type Error = CorpusError;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<LanguageTag> for String {
    fn from(l: LanguageTag) -> String {
        l.code().to_string()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Polarity {
    Negative,
    Positive,
}

impl Polarity {
    pub fn opposite(self) -> Self {
        match self {
            Polarity::Positive => Polarity::Negative,
            Polarity::Negative => Polarity::Positive,
        }
    }

    /// Class index used by classifiers: negative = 0, positive = 1.
    pub fn class_index(self) -> usize {
        match self {
            Polarity::Negative => 0,
            Polarity::Positive => 1,
        }
    }

    pub fn from_class_index(i: usize) -> Self {
        if i == 0 {
            Polarity::Negative
        } else {
            Polarity::Positive
        }
    }
}

impl fmt::Display for Polarity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Polarity::Positive => "positive",
            Polarity::Negative => "negative",
        })
    }
}

impl FromStr for Polarity {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "positive" | "pos" => Ok(Polarity::Positive),
            "negative" | "neg" => Ok(Polarity::Negative),
            other => Err(format!("unknown polarity {other:?}")),
        }
    }
}

/// Transfer direction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Direction {
    #[serde(rename = "pos2neg")]
    Pos2Neg,
    #[serde(rename = "neg2pos")]
    Neg2Pos,
}

impl Direction {
    pub const BOTH: [Direction; 2] = [Direction::Pos2Neg, Direction::Neg2Pos];

    pub fn source(self) -> Polarity {
        match self {
            Direction::Pos2Neg => Polarity::Positive,
            Direction::Neg2Pos => Polarity::Negative,
        }
    }

    pub fn target(self) -> Polarity {
        self.source().opposite()
    }

    pub fn from_target(target: Polarity) -> Self {
        match target {
            Polarity::Negative => Direction::Pos2Neg,
            Polarity::Positive => Direction::Neg2Pos,
        }
    }

    pub fn code(self) -> &'static str {
        match self {
            Direction::Pos2Neg => "pos2neg",
            Direction::Neg2Pos => "neg2pos",
        }
    }

    /// Human-readable task label, e.g. "positive to negative".
    pub fn task_label(self) -> &'static str {
        match self {
            Direction::Pos2Neg => "positive to negative",
            Direction::Neg2Pos => "negative to positive",
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for Direction {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "pos2neg" => Ok(Direction::Pos2Neg),
            "neg2pos" => Ok(Direction::Neg2Pos),
            other => Err(format!("unknown direction {other:?} (expected pos2neg or neg2pos)")),
        }
    }
}

/// An aligned positive/negative sentence pair.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StylePair {
    pub id: u64,
    pub language: LanguageTag,
    pub positive: String,
    pub negative: String,
    /// Which side was the originally written review.
    pub original_polarity: Polarity,
}

impl StylePair {
    pub fn side(&self, polarity: Polarity) -> &str {
        match polarity {
            Polarity::Positive => &self.positive,
            Polarity::Negative => &self.negative,
        }
    }
}

/// On-disk record: one JSON object per line.
#[derive(Debug, Serialize, Deserialize)]
struct PairRecord {
    id: u64,
    positive: String,
    negative: String,
    original_polarity: Polarity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Corpus {
    pub language: LanguageTag,
    pub pairs: Vec<StylePair>,
}

impl Corpus {
    /// Validates id uniqueness and non-empty sides.
    pub fn new(language: LanguageTag, pairs: Vec<StylePair>) -> Result<Self, CorpusError> {
        let mut seen = HashSet::with_capacity(pairs.len());
        for p in &pairs {
            if !seen.insert(p.id) {
                return Err(CorpusError::DuplicateId(p.id));
            }
            for side in [Polarity::Positive, Polarity::Negative] {
                if p.side(side).is_empty() {
                    return Err(CorpusError::EmptyText { id: p.id, side });
                }
            }
        }
        Ok(Corpus { language, pairs })
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn ids(&self) -> Vec<u64> {
        self.pairs.iter().map(|p| p.id).collect()
    }

    /// Same corpus relabelled as another language (texts untouched).
    pub fn relabel(&self, language: LanguageTag) -> Corpus {
        Corpus {
            language,
            pairs: self
                .pairs
                .iter()
                .map(|p| StylePair {
                    language,
                    ..p.clone()
                })
                .collect(),
        }
    }

    /// Stable content hash, used for run manifests.
    pub fn content_hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("corpus serializes");
        util::sha256_hex(&bytes)
    }
}

/// Path of a language's dataset file inside a data directory.
pub fn corpus_path(dir: &Path, language: LanguageTag) -> PathBuf {
    dir.join(format!("{}.jsonl", language.code()))
}

pub fn load_corpus(path: &Path, language: LanguageTag) -> Result<Corpus, CorpusError> {
    let file = fs::File::open(path).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut pairs = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|source| CorpusError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: PairRecord =
            serde_json::from_str(&line).map_err(|e| CorpusError::Malformed {
                line: line_no,
                message: e.to_string(),
            })?;
        if !seen.insert(rec.id) {
            return Err(CorpusError::DuplicateId(rec.id));
        }
        for (side, text) in [
            (Polarity::Positive, &rec.positive),
            (Polarity::Negative, &rec.negative),
        ] {
            if text.is_empty() {
                return Err(CorpusError::EmptyText { id: rec.id, side });
            }
        }
        pairs.push(StylePair {
            id: rec.id,
            language,
            positive: rec.positive,
            negative: rec.negative,
            original_polarity: rec.original_polarity,
        });
    }
    if pairs.is_empty() {
        return Err(CorpusError::Empty(path.to_path_buf()));
    }
    if pairs.len() != FULL_CORPUS_SIZE {
        log::warn!(
            "{}: corpus has {} pairs (full release has {})",
            path.display(),
            pairs.len(),
            FULL_CORPUS_SIZE
        );
    }
    Ok(Corpus { language, pairs })
}

pub fn write_corpus(path: &Path, corpus: &Corpus) -> std::io::Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let mut out = std::io::BufWriter::new(fs::File::create(path)?);
    for p in &corpus.pairs {
        let rec = PairRecord {
            id: p.id,
            positive: p.positive.clone(),
            negative: p.negative.clone(),
            original_polarity: p.original_polarity,
        };
        serde_json::to_writer(&mut out, &rec)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_n: usize,
    pub dev_n: usize,
    pub test_n: usize,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            train_n: 400,
            dev_n: 100,
            test_n: 500,
            seed: 13,
        }
    }
}

impl SplitSpec {
    pub fn total(&self) -> usize {
        self.train_n + self.dev_n + self.test_n
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitName {
    Train,
    Dev,
    Test,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusSplits {
    pub train: Corpus,
    pub dev: Corpus,
    pub test: Corpus,
}

impl CorpusSplits {
    /// id → split mapping, the content of a split manifest.
    pub fn assignment(&self) -> BTreeMap<u64, SplitName> {
        let mut m = BTreeMap::new();
        for (name, c) in [
            (SplitName::Train, &self.train),
            (SplitName::Dev, &self.dev),
            (SplitName::Test, &self.test),
        ] {
            for id in c.ids() {
                m.insert(id, name);
            }
        }
        m
    }
}

/// Deterministic split: ids are sorted, shuffled with a ChaCha8 stream seeded
/// by `spec.seed`, then sliced into train/dev/test. Each split lists its pairs
/// in ascending id order. Corpora sharing an id set get identical assignments.
pub fn split_corpus(corpus: &Corpus, spec: &SplitSpec) -> Result<CorpusSplits, CorpusError> {
    if spec.total() > corpus.len() {
        return Err(CorpusError::SpecExceedsCorpus {
            requested: spec.total(),
            available: corpus.len(),
        });
    }
    let mut ids = corpus.ids();
    ids.sort_unstable();
    ids.shuffle(&mut util::rng(spec.seed));

    let take = |range: std::ops::Range<usize>| -> Corpus {
        let mut chosen: Vec<u64> = ids[range].to_vec();
        chosen.sort_unstable();
        let by_id: BTreeMap<u64, &StylePair> = corpus.pairs.iter().map(|p| (p.id, p)).collect();
        Corpus {
            language: corpus.language,
            pairs: chosen.iter().map(|id| by_id[id].clone()).collect(),
        }
    };
    let a = spec.train_n;
    let b = a + spec.dev_n;
    let c = b + spec.test_n;
    Ok(CorpusSplits {
        train: take(0..a),
        dev: take(a..b),
        test: take(b..c),
    })
}

/// Writes `splits/<code>.<seed>.json` under `root`.
pub fn write_split_manifest(
    root: &Path,
    language: LanguageTag,
    seed: u64,
    splits: &CorpusSplits,
) -> std::io::Result<PathBuf> {
    let dir = root.join("splits");
    fs::create_dir_all(&dir)?;
    let path = dir.join(format!("{}.{}.json", language.code(), seed));
    let json = serde_json::to_string_pretty(&splits.assignment())?;
    fs::write(&path, json)?;
    Ok(path)
}

/// A (input, target, direction) unit consumed by training and inference.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DirectedExample {
    pub input: String,
    pub target: String,
    pub direction: Direction,
    pub language: LanguageTag,
    pub pair_id: u64,
}

/// Two examples per pair, pos2neg first.
pub fn directional_views(corpus: &Corpus) -> Vec<DirectedExample> {
    corpus
        .pairs
        .iter()
        .flat_map(|p| {
            Direction::BOTH.into_iter().map(move |d| DirectedExample {
                input: p.side(d.source()).to_string(),
                target: p.side(d.target()).to_string(),
                direction: d,
                language: p.language,
                pair_id: p.id,
            })
        })
        .collect()
}

/// Examples of a single direction, in corpus order.
pub fn direction_view(corpus: &Corpus, direction: Direction) -> Vec<DirectedExample> {
    directional_views(corpus)
        .into_iter()
        .filter(|e| e.direction == direction)
        .collect()
}

pub fn polarity_subset(corpus: &Corpus, polarity: Polarity) -> Vec<String> {
    corpus
        .pairs
        .iter()
        .map(|p| p.side(polarity).to_string())
        .collect()
}
