use std::path::{Path, PathBuf};

use super::ReportError;
use crate::metrics::MetricReport;

/// True when the crate was built with the `plots` feature.
pub const PLOTS_ENABLED: bool = cfg!(feature = "plots");

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PlotOutcome {
    pub files: Vec<PathBuf>,
    /// Why nothing (or less than usual) was drawn.
    pub notice: Option<String>,
}

/// Writes per-metric distribution plots (`dist_<metric>.svg`, one point per
/// report, languages on the x axis) and methodology × language heatmaps
/// (`heatmap_<metric>.svg`) for ACC, BLEU, CS and PPL.
pub fn emit_plots(reports: &[MetricReport], dir: &Path) -> Result<PlotOutcome, ReportError> {
    if reports.is_empty() {
        let notice = "no reports to plot".to_string();
        log::info!("{notice}");
        return Ok(PlotOutcome { files: Vec::new(), notice: Some(notice) });
    }
    if !PLOTS_ENABLED {
        let notice = "plotting backend not compiled in (enable the `plots` feature); skipped".to_string();
        log::warn!("{notice}");
        return Ok(PlotOutcome { files: Vec::new(), notice: Some(notice) });
    }
    std::fs::create_dir_all(dir).map_err(|e| ReportError::io(dir, e))?;
    #[cfg(feature = "plots")]
    {
        svg::emit(reports, dir)
    }
    #[cfg(not(feature = "plots"))]
    unreachable!("checked PLOTS_ENABLED above")
}

#[cfg(feature = "plots")]
mod svg {
    use std::path::Path;

    use plotters::prelude::*;

    use super::{PlotOutcome, ReportError};
    use crate::corpus::LanguageTag;
    use crate::metrics::MetricReport;
    use crate::report::Metric;

    const PLOTTED: [Metric; 4] = [Metric::Acc, Metric::Bleu, Metric::Cs, Metric::Ppl];

    fn err<E: std::fmt::Debug>(e: E) -> ReportError {
        ReportError::Plot(format!("{e:?}"))
    }

    pub(super) fn emit(reports: &[MetricReport], dir: &Path) -> Result<PlotOutcome, ReportError> {
        let mut languages: Vec<LanguageTag> = reports.iter().map(|r| r.language).collect();
        languages.sort();
        languages.dedup();
        let mut methods: Vec<&str> = Vec::new();
        for r in reports {
            if !methods.contains(&r.methodology.as_str()) {
                methods.push(&r.methodology);
            }
        }
        let mut files = Vec::new();
        for m in PLOTTED {
            let path = dir.join(format!("dist_{}.svg", m.label().to_lowercase()));
            distribution(reports, &languages, m, &path)?;
            files.push(path);
            let path = dir.join(format!("heatmap_{}.svg", m.label().to_lowercase()));
            heatmap(reports, &languages, &methods, m, &path)?;
            files.push(path);
        }
        Ok(PlotOutcome { files, notice: None })
    }

    fn value_range(values: impl Iterator<Item = f64>) -> (f64, f64) {
        let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
        if lo == hi {
            (lo - 1.0, hi + 1.0)
        } else {
            (lo, hi)
        }
    }

    fn distribution(
        reports: &[MetricReport],
        languages: &[LanguageTag],
        metric: Metric,
        path: &Path,
    ) -> Result<(), ReportError> {
        let (lo, hi) = value_range(reports.iter().map(|r| metric.value(r)));
        let pad = (hi - lo) * 0.05;
        let root = SVGBackend::new(path, (900, 480)).into_drawing_area();
        root.fill(&WHITE).map_err(err)?;
        let mut chart = ChartBuilder::on(&root)
            .caption(format!("{} across languages", metric.label()), ("sans-serif", 20))
            .margin(12)
            .x_label_area_size(36)
            .y_label_area_size(52)
            .build_cartesian_2d(-0.5f64..(languages.len() as f64 - 0.5), (lo - pad)..(hi + pad))
            .map_err(err)?;
        chart
            .configure_mesh()
            .disable_x_mesh()
            .x_labels(languages.len() + 1)
            .x_label_formatter(&|x| {
                let i = x.round();
                if (x - i).abs() < 1e-6 && i >= 0.0 && (i as usize) < languages.len() {
                    languages[i as usize].code().to_string()
                } else {
                    String::new()
                }
            })
            .y_desc(metric.label())
            .draw()
            .map_err(err)?;
        let points = reports.iter().map(|r| {
            let x = languages.iter().position(|l| *l == r.language).unwrap_or(0) as f64;
            Circle::new((x, metric.value(r)), 4, BLUE.mix(0.7).filled())
        });
        chart.draw_series(points).map_err(err)?;
        root.present().map_err(err)
    }

    fn heatmap(
        reports: &[MetricReport],
        languages: &[LanguageTag],
        methods: &[&str],
        metric: Metric,
        path: &Path,
    ) -> Result<(), ReportError> {
        let (lo, hi) = value_range(reports.iter().map(|r| metric.value(r)));
        let root = SVGBackend::new(path, (140 + 90 * languages.len() as u32, 80 + 34 * methods.len() as u32))
            .into_drawing_area();
        root.fill(&WHITE).map_err(err)?;
        let mut chart = ChartBuilder::on(&root)
            .caption(format!("Heatmap of {}", metric.label()), ("sans-serif", 20))
            .margin(10)
            .x_label_area_size(30)
            .y_label_area_size(110)
            .build_cartesian_2d(0f64..languages.len() as f64, 0f64..methods.len() as f64)
            .map_err(err)?;
        chart
            .configure_mesh()
            .disable_mesh()
            .x_labels(languages.len() * 2 + 1)
            .y_labels(methods.len() * 2 + 1)
            .x_label_formatter(&|x| {
                let i = x.floor() as usize;
                if (x - x.floor() - 0.5).abs() < 1e-6 && i < languages.len() {
                    languages[i].code().to_string()
                } else {
                    String::new()
                }
            })
            .y_label_formatter(&|y| {
                let i = y.floor() as usize;
                if (y - y.floor() - 0.5).abs() < 1e-6 && i < methods.len() {
                    methods[methods.len() - 1 - i].to_string()
                } else {
                    String::new()
                }
            })
            .draw()
            .map_err(err)?;
        let cells: Vec<(f64, f64, f64)> = reports
            .iter()
            .filter_map(|r| {
                let x = languages.iter().position(|l| *l == r.language)? as f64;
                let row = methods.iter().position(|m| *m == r.methodology)?;
                Some((x, (methods.len() - 1 - row) as f64, metric.value(r)))
            })
            .collect();
        chart
            .draw_series(cells.iter().map(|&(x, y, v)| {
                let t = ((v - lo) / (hi - lo)).clamp(0.0, 1.0);
                let shade = |a: f64, b: f64| (a + (b - a) * t) as u8;
                let color = RGBColor(shade(239.0, 8.0), shade(243.0, 69.0), shade(255.0, 148.0));
                Rectangle::new([(x, y), (x + 1.0, y + 1.0)], color.filled())
            }))
            .map_err(err)?;
        chart
            .draw_series(cells.iter().map(|&(x, y, v)| {
                let t = (v - lo) / (hi - lo);
                let ink = if t > 0.55 { WHITE } else { BLACK };
                Text::new(format!("{v:.1}"), (x + 0.3, y + 0.6), ("sans-serif", 12).into_font().color(&ink))
            }))
            .map_err(err)?;
        root.present().map_err(err)
    }
}
