use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::ReportError;
use crate::corpus::{Corpus, Direction, LanguageTag};
use crate::util::{self, round_to};

/// Outputs of one model on one language's test split.
#[derive(Debug, Clone)]
pub struct HumanEvalSource {
    pub model: String,
    pub language: LanguageTag,
    pub test: Corpus,
    /// One output per test pair per direction, in test order.
    pub outputs: BTreeMap<Direction, Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HumanEvalItem {
    /// Seed-derived random code; the only link back to the model.
    pub item_code: String,
    pub sample_id: u64,
    pub language: LanguageTag,
    pub model: String,
    pub direction: Direction,
    pub input: String,
    pub output: String,
    pub style: Option<u8>,
    pub content: Option<u8>,
    pub fluency: Option<u8>,
}

fn fresh_code(rng: &mut impl Rng, used: &mut HashSet<String>) -> String {
    loop {
        let code = format!("{:08x}", rng.random::<u32>());
        if used.insert(code.clone()) {
            return code;
        }
    }
}

/// Samples `n` test pairs per language (the same ids for every model of that
/// language), half rated in each direction (pos2neg gets the extra item when
/// `n` is odd), and returns one unrated item per (model, sampled pair) in a
/// seed-shuffled order with blinded item codes.
pub fn human_eval_sheets(
    runs: &[HumanEvalSource],
    n: usize,
    seed: u64,
) -> Result<Vec<HumanEvalItem>, ReportError> {
    let mut rng = util::rng(seed);
    let mut by_language: BTreeMap<LanguageTag, Vec<&HumanEvalSource>> = BTreeMap::new();
    for r in runs {
        by_language.entry(r.language).or_default().push(r);
    }

    let mut used = HashSet::new();
    let mut items = Vec::new();
    for (lang, group) in by_language {
        let ids = group[0].test.ids();
        if group.iter().any(|g| g.test.ids() != ids) {
            return Err(ReportError::Misaligned(lang));
        }
        if n > ids.len() {
            return Err(ReportError::NotEnoughTestItems {
                n,
                available: ids.len(),
                language: lang,
            });
        }
        let mut order: Vec<usize> = (0..ids.len()).collect();
        order.shuffle(&mut rng);
        let n_pos = n - n / 2;
        let sampled: Vec<(usize, Direction)> = order[..n]
            .iter()
            .enumerate()
            .map(|(k, &i)| (i, if k < n_pos { Direction::Pos2Neg } else { Direction::Neg2Pos }))
            .collect();

        for src in group {
            for &(i, d) in &sampled {
                let outs = src
                    .outputs
                    .get(&d)
                    .filter(|o| o.len() == ids.len())
                    .ok_or_else(|| ReportError::MissingOutputs {
                        model: src.model.clone(),
                        direction: d,
                    })?;
                let pair = &src.test.pairs[i];
                items.push(HumanEvalItem {
                    item_code: fresh_code(&mut rng, &mut used),
                    sample_id: pair.id,
                    language: lang,
                    model: src.model.clone(),
                    direction: d,
                    input: pair.side(d.source()).to_string(),
                    output: outs[i].clone(),
                    style: None,
                    content: None,
                    fluency: None,
                });
            }
        }
    }
    items.shuffle(&mut rng);
    Ok(items)
}

const SHEET_HEADER: [&str; 9] = [
    "item_code",
    "sample_id",
    "language",
    "direction",
    "input",
    "output",
    "style",
    "content",
    "fluency",
];

fn rating_cell(r: Option<u8>) -> String {
    r.map(|v| v.to_string()).unwrap_or_default()
}

/// Writes `annotator_<k>.csv` (k = 1..=annotators, each a seed-shuffled copy
/// of all items without model names) and `key.csv` mapping item codes to models.
pub fn write_sheets(
    dir: &Path,
    items: &[HumanEvalItem],
    annotators: usize,
    seed: u64,
) -> Result<Vec<PathBuf>, ReportError> {
    fs::create_dir_all(dir).map_err(|e| ReportError::io(dir, e))?;
    let mut paths = Vec::new();
    for k in 1..=annotators.max(1) {
        let mut order: Vec<&HumanEvalItem> = items.iter().collect();
        order.shuffle(&mut util::rng(seed.wrapping_add(k as u64)));
        let path = dir.join(format!("annotator_{k}.csv"));
        let mut w = csv::Writer::from_path(&path)?;
        w.write_record(SHEET_HEADER)?;
        for it in order {
            w.write_record([
                it.item_code.clone(),
                it.sample_id.to_string(),
                it.language.code().to_string(),
                it.direction.code().to_string(),
                it.input.clone(),
                it.output.clone(),
                rating_cell(it.style),
                rating_cell(it.content),
                rating_cell(it.fluency),
            ])?;
        }
        w.flush().map_err(|e| ReportError::io(&path, e))?;
        paths.push(path);
    }
    let key_path = dir.join("key.csv");
    let mut w = csv::Writer::from_path(&key_path)?;
    w.write_record(["item_code", "model", "language", "direction", "sample_id"])?;
    for it in items {
        w.write_record([
            it.item_code.as_str(),
            it.model.as_str(),
            it.language.code(),
            it.direction.code(),
            &it.sample_id.to_string(),
        ])?;
    }
    w.flush().map_err(|e| ReportError::io(&key_path, e))?;
    paths.push(key_path);
    Ok(paths)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeyEntry {
    pub model: String,
    pub language: LanguageTag,
}

pub fn read_key(path: &Path) -> Result<HashMap<String, KeyEntry>, ReportError> {
    #[derive(Deserialize)]
    struct Row {
        item_code: String,
        model: String,
        language: LanguageTag,
    }
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize::<Row>()
        .map(|row| {
            let row = row?;
            Ok((row.item_code, KeyEntry { model: row.model, language: row.language }))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RatedRow {
    pub item_code: String,
    pub style: Option<u8>,
    pub content: Option<u8>,
    pub fluency: Option<u8>,
}

fn parse_rating(code: &str, aspect: &'static str, raw: &str) -> Result<Option<u8>, ReportError> {
    let t = raw.trim();
    if t.is_empty() {
        return Ok(None);
    }
    match t.parse::<u8>() {
        Ok(v) if (1..=5).contains(&v) => Ok(Some(v)),
        _ => Err(ReportError::InvalidRating {
            item_code: code.to_string(),
            aspect,
            value: raw.to_string(),
        }),
    }
}

/// Reads the rating columns of an annotator sheet.
pub fn read_rated_sheet(path: &Path) -> Result<Vec<RatedRow>, ReportError> {
    #[derive(Deserialize)]
    struct Row {
        item_code: String,
        #[serde(default)]
        style: String,
        #[serde(default)]
        content: String,
        #[serde(default)]
        fluency: String,
    }
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize::<Row>()
        .map(|row| {
            let row = row?;
            Ok(RatedRow {
                style: parse_rating(&row.item_code, "style", &row.style)?,
                content: parse_rating(&row.item_code, "content", &row.content)?,
                fluency: parse_rating(&row.item_code, "fluency", &row.fluency)?,
                item_code: row.item_code,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aspect {
    Style,
    Content,
    Fluency,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AspectMeans {
    pub language: LanguageTag,
    pub model: String,
    pub style: f64,
    pub content: f64,
    pub fluency: f64,
    /// Fully rated rows behind the means.
    pub rows: usize,
}

impl AspectMeans {
    pub fn get(&self, aspect: Aspect) -> f64 {
        match aspect {
            Aspect::Style => self.style,
            Aspect::Content => self.content,
            Aspect::Fluency => self.fluency,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HumanEvalSummary {
    /// Sorted by (language, model).
    pub means: Vec<AspectMeans>,
    /// Rows skipped because at least one rating was missing.
    pub excluded: usize,
}

/// Per-(language, model) means of fully rated rows, to two decimals. Rows
/// from any number of sheets may be concatenated; order does not matter.
pub fn aggregate_human_eval(
    rows: &[RatedRow],
    key: &HashMap<String, KeyEntry>,
) -> Result<HumanEvalSummary, ReportError> {
    let mut sums: BTreeMap<(LanguageTag, String), ([u64; 3], usize)> = BTreeMap::new();
    let mut excluded = 0;
    for r in rows {
        let entry = key
            .get(&r.item_code)
            .ok_or_else(|| ReportError::UnknownItemCode(r.item_code.clone()))?;
        let (Some(s), Some(c), Some(f)) = (r.style, r.content, r.fluency) else {
            excluded += 1;
            continue;
        };
        let acc = sums.entry((entry.language, entry.model.clone())).or_default();
        acc.0[0] += u64::from(s);
        acc.0[1] += u64::from(c);
        acc.0[2] += u64::from(f);
        acc.1 += 1;
    }
    if sums.is_empty() {
        return Err(ReportError::NoRatedRows);
    }
    let means = sums
        .into_iter()
        .map(|((language, model), (s, n))| {
            let mean = |x: u64| round_to(x as f64 / n as f64, 2);
            AspectMeans {
                language,
                model,
                style: mean(s[0]),
                content: mean(s[1]),
                fluency: mean(s[2]),
                rows: n,
            }
        })
        .collect();
    Ok(HumanEvalSummary { means, excluded })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Polarity, StylePair};

    fn source(model: &str, n: u64) -> HumanEvalSource {
        let test = Corpus::new(
            LanguageTag::En,
            (0..n)
                .map(|i| StylePair {
                    id: i,
                    language: LanguageTag::En,
                    positive: format!("p{i}"),
                    negative: format!("n{i}"),
                    original_polarity: Polarity::Positive,
                })
                .collect(),
        )
        .unwrap();
        let outputs = Direction::BOTH
            .into_iter()
            .map(|d| (d, (0..n).map(|i| format!("{model}-{d}-{i}")).collect()))
            .collect();
        HumanEvalSource { model: model.into(), language: LanguageTag::En, test, outputs }
    }

    #[test]
    fn shared_ids_and_counts() {
        let runs = [source("a", 10), source("b", 10), source("c", 10)];
        let items = human_eval_sheets(&runs, 2, 3).unwrap();
        assert_eq!(items.len(), 6);
        for m in ["a", "b", "c"] {
            let mut ids: Vec<u64> = items.iter().filter(|i| i.model == m).map(|i| i.sample_id).collect();
            ids.sort();
            let mut first: Vec<u64> = items.iter().filter(|i| i.model == "a").map(|i| i.sample_id).collect();
            first.sort();
            assert_eq!(ids, first);
        }
        assert!(matches!(human_eval_sheets(&runs, 11, 3), Err(ReportError::NotEnoughTestItems { .. })));
        assert_eq!(items, human_eval_sheets(&runs, 2, 3).unwrap());
    }

    #[test]
    fn aggregate_means_and_exclusions() {
        let key: HashMap<String, KeyEntry> = ["x", "y", "z"]
            .iter()
            .map(|c| (c.to_string(), KeyEntry { model: "m".into(), language: LanguageTag::Hi }))
            .collect();
        let row = |c: &str, s: Option<u8>| RatedRow { item_code: c.into(), style: s, content: Some(5), fluency: Some(5) };
        let sum = aggregate_human_eval(&[row("x", Some(4)), row("y", Some(5)), row("z", None)], &key).unwrap();
        assert_eq!(sum.means[0].style, 4.5);
        assert_eq!(sum.means[0].content, 5.0);
        assert_eq!(sum.excluded, 1);
        assert!(matches!(aggregate_human_eval(&[row("z", None)], &key), Err(ReportError::NoRatedRows)));
        assert!(matches!(aggregate_human_eval(&[row("q", Some(1))], &key), Err(ReportError::UnknownItemCode(_))));
    }

    #[test]
    fn rating_parsing() {
        assert_eq!(parse_rating("a", "style", " 3 ").unwrap(), Some(3));
        assert_eq!(parse_rating("a", "style", "").unwrap(), None);
        assert!(parse_rating("a", "style", "6").is_err());
        assert!(parse_rating("a", "style", "x").is_err());
    }
}
