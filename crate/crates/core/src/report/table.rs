use std::collections::BTreeSet;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::ReportError;
use crate::corpus::LanguageTag;
use crate::metrics::MetricReport;
use crate::util::round_to;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Metric {
    Acc,
    Bleu,
    Cs,
    Ppl,
    Avg,
}

impl Metric {
    pub const ALL: [Metric; 5] = [Metric::Acc, Metric::Bleu, Metric::Cs, Metric::Ppl, Metric::Avg];

    pub fn label(self) -> &'static str {
        match self {
            Metric::Acc => "ACC",
            Metric::Bleu => "BLEU",
            Metric::Cs => "CS",
            Metric::Ppl => "PPL",
            Metric::Avg => "AVG",
        }
    }

    pub fn higher_is_better(self) -> bool {
        self != Metric::Ppl
    }

    pub fn arrow(self) -> &'static str {
        if self.higher_is_better() {
            "↑"
        } else {
            "↓"
        }
    }

    pub fn value(self, r: &MetricReport) -> f64 {
        match self {
            Metric::Acc => r.acc,
            Metric::Bleu => r.bleu,
            Metric::Cs => r.cs,
            Metric::Ppl => r.ppl,
            Metric::Avg => r.avg,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct BestCell {
    pub language: LanguageTag,
    pub methodology: String,
    pub metric: Metric,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderedTable {
    pub text: String,
    pub csv: String,
    pub best: BTreeSet<BestCell>,
}

impl RenderedTable {
    pub fn is_best(&self, language: LanguageTag, methodology: &str, metric: Metric) -> bool {
        self.best.contains(&BestCell {
            language,
            methodology: methodology.to_string(),
            metric,
        })
    }
}

/// Reports grouped by language (in language order), methodologies in order
/// of first appearance. Values are shown to one decimal; within each
/// (language, metric) group exactly one cell is marked `*`: the maximum, or
/// the minimum for PPL, comparing displayed values and keeping the first on ties.
pub fn render_table(reports: &[MetricReport]) -> Result<RenderedTable, ReportError> {
    let mut languages: Vec<LanguageTag> = reports.iter().map(|r| r.language).collect();
    languages.sort();
    languages.dedup();

    let mut best = BTreeSet::new();
    let mut text = String::new();
    let mut csv = csv::Writer::from_writer(Vec::new());
    csv.write_record(["language", "methodology", "ACC", "BLEU", "CS", "PPL", "AVG", "best"])?;

    let width = reports.iter().map(|r| r.methodology.chars().count()).max().unwrap_or(0).max(11);
    for lang in languages {
        let group: Vec<&MetricReport> = reports.iter().filter(|r| r.language == lang).collect();
        for m in Metric::ALL {
            let shown = |r: &&MetricReport| round_to(m.value(r), 1);
            let winner = group.iter().reduce(|a, b| {
                let (va, vb) = (shown(a), shown(b));
                let better = if m.higher_is_better() { vb > va } else { vb < va };
                if better {
                    b
                } else {
                    a
                }
            });
            if let Some(w) = winner {
                best.insert(BestCell {
                    language: lang,
                    methodology: w.methodology.clone(),
                    metric: m,
                });
            }
        }

        let _ = writeln!(text, "{} ({})", lang.name(), lang.code());
        let _ = write!(text, "{:<width$}", "Methodology");
        for m in Metric::ALL {
            let _ = write!(text, " {:>9}", format!("{}{}", m.label(), m.arrow()));
        }
        text.push('\n');
        for r in &group {
            let _ = write!(text, "{:<width$}", r.methodology);
            let mut marks = Vec::new();
            for m in Metric::ALL {
                let is_best = best.contains(&BestCell {
                    language: lang,
                    methodology: r.methodology.clone(),
                    metric: m,
                });
                let cell = format!("{:.1}{}", m.value(r), if is_best { "*" } else { " " });
                let _ = write!(text, " {cell:>9}");
                if is_best {
                    marks.push(m.label());
                }
            }
            text.push('\n');
            csv.write_record([
                lang.code().to_string(),
                r.methodology.clone(),
                format!("{:.1}", r.acc),
                format!("{:.1}", r.bleu),
                format!("{:.1}", r.cs),
                format!("{:.1}", r.ppl),
                format!("{:.1}", r.avg),
                marks.join(";"),
            ])?;
        }
        text.push('\n');
    }
    let csv = String::from_utf8(csv.into_inner().map_err(|e| ReportError::Csv(e.to_string()))?)
        .map_err(|e| ReportError::Csv(e.to_string()))?;
    Ok(RenderedTable { text, csv, best })
}
