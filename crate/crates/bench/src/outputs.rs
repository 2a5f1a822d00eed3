use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use plotters::prelude::*;
use serde::{Deserialize, Serialize};
use vmc_core::{aggregate_ci, MetricKind, RngPolicy};

use crate::experiment::{ensure_writable, ExperimentReport, AGGREGATE_LEVEL, AGGREGATE_SEED};
use crate::BenchError;

const NA: &str = "NA";
const PALETTE: [RGBColor; 8] = [
    RGBColor(31, 119, 180),
    RGBColor(255, 127, 14),
    RGBColor(44, 160, 44),
    RGBColor(214, 39, 40),
    RGBColor(148, 103, 189),
    RGBColor(140, 86, 75),
    RGBColor(227, 119, 194),
    RGBColor(127, 127, 127),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputFormat {
    /// `metrics.jsonl`: one record per seed.
    Jsonl,
    /// `summary.csv`: per-seed and aggregate rows.
    Csv,
    /// `curves.svg` and `bars.svg`.
    Svg,
}

impl OutputFormat {
    pub const ALL: [OutputFormat; 3] = [OutputFormat::Jsonl, OutputFormat::Csv, OutputFormat::Svg];
}

/// Plot appearance. `seed` fixes the colour assignment, so regenerated
/// plots are byte-identical.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlotStyle {
    pub seed: u64,
    pub width: u32,
    pub height: u32,
}

impl Default for PlotStyle {
    fn default() -> Self {
        Self { seed: 0, width: 640, height: 420 }
    }
}

impl PlotStyle {
    fn colors(&self) -> Vec<RGBColor> {
        let mut idx: Vec<usize> = (0..PALETTE.len()).collect();
        let offset = (RngPolicy::new(self.seed).derive_seed("plot/palette", 0) % PALETTE.len() as u64) as usize;
        idx.rotate_left(offset);
        idx.into_iter().map(|i| PALETTE[i]).collect()
    }
}

/// One row of `summary.csv`; `None` is written as `NA`.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub scope: String,
    pub seed: Option<u64>,
    pub n: usize,
    pub top3: Option<f64>,
    pub final_score: Option<f64>,
    pub ci_lo: Option<f64>,
    pub ci_hi: Option<f64>,
}

fn cell<T: ToString>(v: Option<T>) -> String {
    v.map_or_else(|| NA.to_string(), |x| x.to_string())
}

fn parse_cell<T: std::str::FromStr>(s: &str) -> Result<Option<T>, BenchError> {
    if s == NA {
        return Ok(None);
    }
    s.parse().map(Some).map_err(|_| BenchError::Format(format!("bad summary cell `{s}`")))
}

fn summary_rows(report: &ExperimentReport) -> Vec<SummaryRow> {
    let mut rows: Vec<SummaryRow> = report
        .records
        .iter()
        .map(|r| SummaryRow {
            scope: "seed".into(),
            seed: Some(r.seed),
            n: 1,
            top3: Some(r.top3),
            final_score: Some(r.final_score),
            ci_lo: None,
            ci_hi: None,
        })
        .collect();
    let n = report.records.len();
    rows.push(SummaryRow {
        scope: "aggregate".into(),
        seed: None,
        n,
        top3: report.aggregate.map(|a| a.mean),
        final_score: (n > 0).then(|| report.records.iter().map(|r| r.final_score).sum::<f64>() / n as f64),
        ci_lo: report.aggregate.map(|a| a.lo),
        ci_hi: report.aggregate.map(|a| a.hi),
    });
    rows
}

fn write_summary(report: &ExperimentReport, path: &Path) -> Result<(), BenchError> {
    let csv_err = |e: csv::Error| BenchError::Format(format!("{}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(["scope", "seed", "n", "top3", "final", "ci_lo", "ci_hi"]).map_err(csv_err)?;
    for r in summary_rows(report) {
        w.write_record([
            r.scope,
            cell(r.seed),
            r.n.to_string(),
            cell(r.top3),
            cell(r.final_score),
            cell(r.ci_lo),
            cell(r.ci_hi),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(|e| BenchError::io(path, e))
}

pub fn read_summary(path: &Path) -> Result<Vec<SummaryRow>, BenchError> {
    let csv_err = |e: csv::Error| BenchError::Format(format!("{}: {e}", path.display()));
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(csv_err)?;
        if rec.len() != 7 {
            return Err(BenchError::Format(format!("{}: expected 7 columns, got {}", path.display(), rec.len())));
        }
        rows.push(SummaryRow {
            scope: rec[0].to_string(),
            seed: parse_cell(&rec[1])?,
            n: rec[2].parse().map_err(|_| BenchError::Format(format!("bad count `{}`", &rec[2])))?,
            top3: parse_cell(&rec[3])?,
            final_score: parse_cell(&rec[4])?,
            ci_lo: parse_cell(&rec[5])?,
            ci_hi: parse_cell(&rec[6])?,
        });
    }
    Ok(rows)
}

fn write_jsonl(report: &ExperimentReport, path: &Path) -> Result<(), BenchError> {
    let f = File::create(path).map_err(|e| BenchError::io(path, e))?;
    let mut w = BufWriter::new(f);
    let json = |v: serde_json::Value| serde_json::to_string(&v).map_err(|e| BenchError::Format(e.to_string()));
    for r in &report.records {
        let mut v = serde_json::to_value(r).map_err(|e| BenchError::Format(e.to_string()))?;
        v["status"] = "ok".into();
        v["experiment"] = report.name.clone().into();
        v["fingerprint"] = report.fingerprint.clone().into();
        writeln!(w, "{}", json(v)?).map_err(|e| BenchError::io(path, e))?;
    }
    for f in &report.failures {
        let v = serde_json::json!({
            "seed": f.seed,
            "status": "failed",
            "error": f.error,
            "experiment": report.name,
            "fingerprint": report.fingerprint,
        });
        writeln!(w, "{}", json(v)?).map_err(|e| BenchError::io(path, e))?;
    }
    w.flush().map_err(|e| BenchError::io(path, e))
}

/// Writes the requested artifacts into `dir`. Reports without successful
/// seeds still get their records and an all-`NA` summary, but no plots.
pub fn emit_outputs(
    report: &ExperimentReport,
    dir: &Path,
    formats: &[OutputFormat],
    style: &PlotStyle,
) -> Result<Vec<PathBuf>, BenchError> {
    ensure_writable(dir)?;
    let mut written = Vec::new();
    for f in formats {
        match f {
            OutputFormat::Jsonl => {
                let p = dir.join("metrics.jsonl");
                write_jsonl(report, &p)?;
                written.push(p);
            }
            OutputFormat::Csv => {
                let p = dir.join("summary.csv");
                write_summary(report, &p)?;
                written.push(p);
            }
            OutputFormat::Svg => match plot_report(&[report], dir, style) {
                Ok(paths) => written.extend(paths),
                Err(BenchError::Empty(why)) => log::warn!("skipping plots: {why}"),
                Err(e) => return Err(e),
            },
        }
    }
    Ok(written)
}

fn metric_label(kind: MetricKind) -> &'static str {
    match kind {
        MetricKind::SuccessRate => "success rate",
        MetricKind::RawReturn => "return",
        MetricKind::NormalizedReturn => "normalized return",
    }
}

fn plot_err<E: std::fmt::Display>(e: E) -> BenchError {
    BenchError::Format(format!("plot: {e}"))
}

/// Mean curve across seeds with bootstrap whiskers at each checkpoint.
fn mean_curve(report: &ExperimentReport) -> Result<Vec<(f64, f64, f64, f64)>, BenchError> {
    let mut at: BTreeMap<u64, Vec<f64>> = BTreeMap::new();
    for r in &report.records {
        for &(x, y) in &r.series.checkpoint_scores {
            at.entry(x).or_default().push(y);
        }
    }
    at.into_iter()
        .map(|(x, ys)| {
            let mean = ys.iter().sum::<f64>() / ys.len() as f64;
            let (lo, hi) = if ys.len() >= 2 {
                let a = aggregate_ci(&ys, AGGREGATE_LEVEL, &RngPolicy::new(AGGREGATE_SEED))?;
                (a.lo, a.hi)
            } else {
                (mean, mean)
            };
            Ok((x as f64, mean, lo, hi))
        })
        .collect()
}

/// Learning curves (`curves.svg`) and top-3 bars with interval whiskers
/// (`bars.svg`) for one or more reports of the same metric.
pub fn plot_report(reports: &[&ExperimentReport], dir: &Path, style: &PlotStyle) -> Result<Vec<PathBuf>, BenchError> {
    let reports: Vec<&ExperimentReport> = reports.iter().copied().filter(|r| !r.records.is_empty()).collect();
    if reports.is_empty() {
        return Err(BenchError::Empty("no report has a successful seed".into()));
    }
    ensure_writable(dir)?;
    let colors = style.colors();
    let label = metric_label(reports[0].records[0].series.metric_kind);
    let curves: Vec<Vec<(f64, f64, f64, f64)>> = reports.iter().map(|r| mean_curve(r)).collect::<Result<_, _>>()?;
    let x_max = curves.iter().flatten().map(|p| p.0).fold(1.0, f64::max);
    let y_top = curves.iter().flatten().map(|p| p.3).fold(1.0, f64::max);
    let y_bottom = curves.iter().flatten().map(|p| p.2).fold(0.0, f64::min);

    let curve_path = dir.join("curves.svg");
    {
        let root = SVGBackend::new(&curve_path, (style.width, style.height)).into_drawing_area();
        root.fill(&WHITE).map_err(plot_err)?;
        let mut chart = ChartBuilder::on(&root)
            .caption(format!("{} over training", label), ("sans-serif", 18))
            .margin(12)
            .x_label_area_size(36)
            .y_label_area_size(48)
            .build_cartesian_2d(0.0..x_max * 1.02, y_bottom..y_top * 1.02)
            .map_err(plot_err)?;
        chart.configure_mesh().x_desc("checkpoint").y_desc(label).draw().map_err(plot_err)?;
        for (i, (r, c)) in reports.iter().zip(&curves).enumerate() {
            let color = colors[i % colors.len()];
            chart
                .draw_series(LineSeries::new(c.iter().map(|p| (p.0, p.1)), color.stroke_width(2)))
                .map_err(plot_err)?
                .label(r.config.method.name())
                .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 18, y)], color.stroke_width(2)));
            chart
                .draw_series(c.iter().map(|p| ErrorBar::new_vertical(p.0, p.2, p.1, p.3, color.filled(), 4)))
                .map_err(plot_err)?;
        }
        chart.configure_series_labels().background_style(WHITE.mix(0.8)).border_style(BLACK).draw().map_err(plot_err)?;
        root.present().map_err(plot_err)?;
    }

    let bar_path = dir.join("bars.svg");
    {
        let aggs: Vec<(f64, f64, f64)> = reports
            .iter()
            .map(|r| r.aggregate.map_or((f64::NAN, f64::NAN, f64::NAN), |a| (a.mean, a.lo, a.hi)))
            .collect();
        let top = aggs.iter().map(|a| a.2).fold(1.0, f64::max);
        let root = SVGBackend::new(&bar_path, (style.width, style.height)).into_drawing_area();
        root.fill(&WHITE).map_err(plot_err)?;
        let n = reports.len();
        let mut chart = ChartBuilder::on(&root)
            .caption(format!("top-3 {}", label), ("sans-serif", 18))
            .margin(12)
            .x_label_area_size(36)
            .y_label_area_size(48)
            .build_cartesian_2d(0.0..n as f64, 0.0..top * 1.05)
            .map_err(plot_err)?;
        let names: Vec<String> = reports.iter().map(|r| r.config.method.name().to_string()).collect();
        chart
            .configure_mesh()
            .disable_x_mesh()
            .x_labels(n)
            .x_label_formatter(&|x| {
                let i = (x - 0.5).round();
                if (x - 0.5 - i).abs() < 1e-6 && i >= 0.0 {
                    names.get(i as usize).cloned().unwrap_or_default()
                } else {
                    String::new()
                }
            })
            .y_desc(label)
            .draw()
            .map_err(plot_err)?;
        for (i, &(mean, lo, hi)) in aggs.iter().enumerate() {
            let color = colors[i % colors.len()];
            let x = i as f64;
            chart
                .draw_series(std::iter::once(Rectangle::new([(x + 0.2, 0.0), (x + 0.8, mean)], color.filled())))
                .map_err(plot_err)?;
            chart
                .draw_series(std::iter::once(ErrorBar::new_vertical(x + 0.5, lo, mean, hi, BLACK.filled(), 12)))
                .map_err(plot_err)?;
        }
        root.present().map_err(plot_err)?;
    }
    Ok(vec![curve_path, bar_path])
}
