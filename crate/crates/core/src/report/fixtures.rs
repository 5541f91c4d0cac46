//! Published reference numbers shipped with the crate.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::ReportError;
use crate::corpus::LanguageTag;
use crate::metrics::MetricReport;

const TABLE3_JSON: &str = include_str!("../../fixtures/table3.json");
const BATCH_SWEEPS_JSON: &str = include_str!("../../fixtures/batch_sweeps.json");
const HUMAN_EVAL_JSON: &str = include_str!("../../fixtures/table4.json");

/// One automatic-evaluation cell: direction-averaged scores of one
/// methodology on one language, with the published average.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultCell {
    pub language: LanguageTag,
    pub methodology: String,
    pub acc: f64,
    pub bleu: f64,
    pub cs: f64,
    pub ppl: f64,
    pub avg: f64,
}

impl ResultCell {
    /// Report with `avg` recomputed from ACC, BLEU and CS.
    pub fn to_report(&self) -> MetricReport {
        MetricReport::from_scores(self.language, self.methodology.clone(), self.acc, self.bleu, self.cs, self.ppl)
    }
}

#[derive(Deserialize)]
struct Cells {
    cells: Vec<ResultCell>,
}

pub fn parse_result_cells(json: &str) -> Result<Vec<ResultCell>, ReportError> {
    serde_json::from_str::<Cells>(json)
        .map(|c| c.cells)
        .map_err(|e| ReportError::Fixture(e.to_string()))
}

/// The published automatic-evaluation results (97 populated cells).
pub fn published_results() -> Vec<ResultCell> {
    parse_result_cells(TABLE3_JSON).expect("embedded results fixture is valid")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassifierSweepRow {
    pub batch: usize,
    pub acc: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSweepRow {
    pub batch: usize,
    pub acc: f64,
    pub cs: f64,
    pub bleu: f64,
    pub ppl: f64,
    pub avg: f64,
}

/// Published batch-size sweeps for classifiers (dev accuracy) and Parallel generators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchSweeps {
    pub classifier_accuracy: BTreeMap<LanguageTag, Vec<ClassifierSweepRow>>,
    pub generator: BTreeMap<LanguageTag, Vec<GeneratorSweepRow>>,
}

pub fn published_batch_sweeps() -> BatchSweeps {
    serde_json::from_str(BATCH_SWEEPS_JSON).expect("embedded sweep fixture is valid")
}

/// Published human-evaluation means for one (language, model).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HumanEvalRow {
    pub language: LanguageTag,
    pub model: String,
    pub style: f64,
    pub content: f64,
    pub fluency: f64,
}

#[derive(Deserialize)]
struct HumanRows {
    rows: Vec<HumanEvalRow>,
}

pub fn published_human_eval() -> Vec<HumanEvalRow> {
    serde_json::from_str::<HumanRows>(HUMAN_EVAL_JSON)
        .expect("embedded human-eval fixture is valid")
        .rows
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixtures_parse() {
        let cells = published_results();
        assert_eq!(cells.len(), 97);
        assert!(cells.iter().any(|c| c.language == LanguageTag::En && c.methodology == "Parallel" && c.avg == 69.2));
        assert_eq!(published_batch_sweeps().generator[&LanguageTag::Mr].len(), 8);
        assert_eq!(published_human_eval().len(), 9);
    }
}
