//! Results tables, plots, published reference fixtures and human-evaluation
//! sheets.

use std::path::PathBuf;

use thiserror::Error;

use crate::corpus::{Direction, LanguageTag};

pub mod fixtures;
mod human_eval;
mod plots;
mod table;

pub use human_eval::{
    aggregate_human_eval, human_eval_sheets, read_key, read_rated_sheet, write_sheets, Aspect,
    AspectMeans, HumanEvalItem, HumanEvalSource, HumanEvalSummary, KeyEntry, RatedRow,
};
pub use plots::{emit_plots, PlotOutcome, PLOTS_ENABLED};
pub use table::{render_table, BestCell, Metric, RenderedTable};

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(String),
    #[error("n = {n} exceeds the {available}-pair {language} test set")]
    NotEnoughTestItems {
        n: usize,
        available: usize,
        language: LanguageTag,
    },
    #[error("runs for {0} do not share the same test ids")]
    Misaligned(LanguageTag),
    #[error("model {model} has no usable {direction} outputs")]
    MissingOutputs { model: String, direction: Direction },
    #[error("item code {0:?} is not in the key")]
    UnknownItemCode(String),
    #[error("invalid {aspect} rating {value:?} for item {item_code} (expected 1-5 or empty)")]
    InvalidRating {
        item_code: String,
        aspect: &'static str,
        value: String,
    },
    #[error("no fully rated rows")]
    NoRatedRows,
    #[error("plotting failed: {0}")]
    Plot(String),
    #[error("bad fixture: {0}")]
    Fixture(String),
}

impl ReportError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        ReportError::Io {
            path: path.into(),
            source,
        }
    }
}

impl From<csv::Error> for ReportError {
    fn from(e: csv::Error) -> Self {
        ReportError::Csv(e.to_string())
    }
}
