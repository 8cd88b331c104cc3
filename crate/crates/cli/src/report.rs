//! CSV tables and SVG charts over every run of the same experiment name.
//! The CSV files are the source of truth; charts are drawn from the same rows.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use drst::evaluation::{efficiency_report, EvalReport, RunMetrics};
use drst::rewards::StrategyKind;
use drst::trainer::{read_metrics, MetricsRecord};
use plotters::prelude::*;

use crate::config::RunConfig;
use crate::stages::Ctx;
use crate::Failure;

type Series = (String, Vec<(f64, f64)>);

/// Per-step metrics that get their own table and chart.
const METRICS: [(&str, fn(&MetricsRecord) -> f64); 6] = [
    ("mean_r", |r| r.mean_r),
    ("mean_rs", |r| r.mean_rs),
    ("mean_rc", |r| r.mean_rc),
    ("mean_rf", |r| r.mean_rf),
    ("train_reward", |r| r.train_reward),
    ("mean_output_len", |r| r.mean_output_len),
];

const EVAL_METRICS: [(&str, fn(&EvalReport) -> f64); 4] = [
    ("style_accuracy", |r| r.style_accuracy),
    ("content_bleu", |r| r.content_bleu),
    ("perplexity", |r| r.perplexity),
    ("gm_all", |r| r.gm_all),
];

/// Run directories under `out` created from a config with this name, by run id.
fn sibling_runs(out: &Path, name: &str) -> Result<Vec<std::path::PathBuf>, Failure> {
    let mut dirs = Vec::new();
    let entries = fs::read_dir(out).map_err(|e| Failure::io(out, e))?;
    for entry in entries.flatten() {
        let dir = entry.path();
        let Ok(text) = fs::read_to_string(dir.join("config.resolved")) else {
            continue;
        };
        if RunConfig::parse(&text).is_ok_and(|c| c.name == name) {
            dirs.push(dir);
        }
    }
    dirs.sort();
    Ok(dirs)
}

fn write(ctx: &Ctx, rel: &str, body: &str, outputs: &mut Vec<String>) -> Result<(), Failure> {
    let path = ctx.run.path(rel);
    fs::write(&path, body).map_err(|e| Failure::io(&path, e))?;
    outputs.push(rel.to_string());
    Ok(())
}

pub fn write_reports(ctx: &Ctx) -> Result<Vec<String>, Failure> {
    let dirs = sibling_runs(&ctx.out, &ctx.config.name)?;
    let mut grouped: BTreeMap<(usize, u64), Vec<MetricsRecord>> = BTreeMap::new();
    let mut evals: Vec<(String, EvalReport)> = Vec::new();
    for dir in &dirs {
        let metrics = dir.join("metrics.records");
        if metrics.exists() {
            for record in read_metrics(&metrics)? {
                let order = StrategyKind::ALL.iter().position(|&s| s == record.strategy).unwrap_or(0);
                grouped.entry((order, record.seed)).or_default().push(record);
            }
        }
        let reports = dir.join("reports");
        let Ok(entries) = fs::read_dir(&reports) else {
            continue;
        };
        let mut files: Vec<_> = entries.flatten().map(|e| e.path()).collect();
        files.sort();
        for file in files {
            let name = file.file_name().and_then(|n| n.to_str()).unwrap_or_default().to_string();
            let Some(policy) = name.strip_prefix("eval-").and_then(|n| n.strip_suffix(".json")) else {
                continue;
            };
            let text = fs::read_to_string(&file).map_err(|e| Failure::io(&file, e))?;
            let report: EvalReport = serde_json::from_str(&text).map_err(|e| Failure::Runtime(format!("{}: {e}", file.display())))?;
            let run = dir.file_name().and_then(|n| n.to_str()).unwrap_or_default();
            evals.push((format!("{run}/{policy}"), report));
        }
    }
    if grouped.is_empty() && evals.is_empty() {
        return Err(Failure::NothingToReport(format!(
            "no metrics or evaluation reports for runs named {:?} under {}",
            ctx.config.name,
            ctx.out.display()
        )));
    }

    let mut outputs = Vec::new();
    let runs: Vec<RunMetrics> = grouped
        .into_values()
        .map(|records| RunMetrics { strategy: records[0].strategy, seed: records[0].seed, records })
        .collect();
    if !runs.is_empty() {
        write_training_reports(ctx, &runs, &mut outputs)?;
    }
    if !evals.is_empty() {
        write_eval_reports(ctx, &evals, &mut outputs)?;
    }
    println!("report: {} files in {}", outputs.len(), ctx.run.path("reports").display());
    Ok(outputs)
}

fn label(run: &RunMetrics) -> String {
    format!("{} seed {}", run.strategy, run.seed)
}

fn write_training_reports(ctx: &Ctx, runs: &[RunMetrics], outputs: &mut Vec<String>) -> Result<(), Failure> {
    let settings = &ctx.config.report;
    let efficiency = efficiency_report(runs, settings.fraction, settings.smoothing);
    write(ctx, "reports/efficiency.csv", &efficiency.to_csv(), outputs)?;
    let series: Vec<Series> = efficiency
        .curves
        .iter()
        .map(|c| {
            let points = c.points.iter().map(|&(e, v)| (e as f64, v)).collect();
            (format!("{} seed {}", c.strategy, c.seed), points)
        })
        .collect();
    let chart = "reports/efficiency.svg";
    line_chart(&ctx.run.path(chart), "normalized reward", "episodes", "normalized reward", &series)?;
    outputs.push(chart.into());

    let mut summary = String::from("strategy,seed,episodes_to_fraction,peak_reward\n");
    for c in &efficiency.curves {
        summary.push_str(&format!("{},{},{},{:.6}\n", c.strategy, c.seed, c.episodes_to_fraction, c.raw_peak));
    }
    write(ctx, "reports/efficiency-summary.csv", &summary, outputs)?;
    let pairs = efficiency.compare(StrategyKind::Dense, StrategyKind::Rollout);
    if !pairs.is_empty() {
        let mut body = String::from("seed,episodes_dense,episodes_rollout,ratio,peak_dense,peak_rollout\n");
        for p in &pairs {
            body.push_str(&format!(
                "{},{},{},{:.4},{:.6},{:.6}\n",
                p.seed, p.episodes_a, p.episodes_b, p.ratio, p.raw_peak_a, p.raw_peak_b
            ));
        }
        write(ctx, "reports/dense-vs-rollout.csv", &body, outputs)?;
    }

    for (name, get) in METRICS {
        let mut csv = String::from("episodes,value,strategy,seed\n");
        let mut series = Vec::new();
        for run in runs {
            let points: Vec<(f64, f64)> = run.records.iter().map(|r| (r.episodes as f64, get(r))).collect();
            for (e, v) in &points {
                csv.push_str(&format!("{e},{v:.6},{},{}\n", run.strategy, run.seed));
            }
            series.push((label(run), points));
        }
        write(ctx, &format!("reports/metric-{name}.csv"), &csv, outputs)?;
        let chart = format!("reports/metric-{name}.svg");
        line_chart(&ctx.run.path(&chart), name, "episodes", name, &series)?;
        outputs.push(chart);
    }
    Ok(())
}

fn write_eval_reports(ctx: &Ctx, evals: &[(String, EvalReport)], outputs: &mut Vec<String>) -> Result<(), Failure> {
    let mut csv = String::from("model,style_accuracy,content_bleu,perplexity,gm_all,sentences\n");
    for (model, r) in evals {
        csv.push_str(&format!(
            "{model},{:.2},{:.2},{:.3},{:.2},{}\n",
            r.style_accuracy, r.content_bleu, r.perplexity, r.gm_all, r.sentences
        ));
    }
    write(ctx, "reports/evaluation.csv", &csv, outputs)?;
    let labels: Vec<String> = evals.iter().map(|(m, _)| m.clone()).collect();
    for (name, get) in EVAL_METRICS {
        let values: Vec<f64> = evals.iter().map(|(_, r)| get(r)).collect();
        let chart = format!("reports/evaluation-{name}.svg");
        bar_chart(&ctx.run.path(&chart), name, &labels, &values)?;
        outputs.push(chart);
    }
    Ok(())
}

fn chart_error(path: &Path, e: impl std::fmt::Display) -> Failure {
    Failure::Runtime(format!("{}: {e}", path.display()))
}

fn padded_range(lo: f64, hi: f64) -> std::ops::Range<f64> {
    if !(lo.is_finite() && hi.is_finite()) {
        return 0.0..1.0;
    }
    let pad = if hi > lo { 0.05 * (hi - lo) } else { 0.5 };
    (lo - pad)..(hi + pad)
}

pub fn line_chart(path: &Path, title: &str, x_desc: &str, y_desc: &str, series: &[Series]) -> Result<(), Failure> {
    let all = series.iter().flat_map(|(_, p)| p.iter());
    let (mut x_lo, mut x_hi, mut y_lo, mut y_hi) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in all {
        x_lo = x_lo.min(x);
        x_hi = x_hi.max(x);
        y_lo = y_lo.min(y);
        y_hi = y_hi.max(y);
    }
    let root = SVGBackend::new(path, (800, 480)).into_drawing_area();
    root.fill(&WHITE).map_err(|e| chart_error(path, e))?;
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 20))
        .margin(12)
        .x_label_area_size(40)
        .y_label_area_size(60)
        .build_cartesian_2d(padded_range(x_lo, x_hi), padded_range(y_lo, y_hi))
        .map_err(|e| chart_error(path, e))?;
    chart
        .configure_mesh()
        .x_desc(x_desc)
        .y_desc(y_desc)
        .draw()
        .map_err(|e| chart_error(path, e))?;
    for (i, (name, points)) in series.iter().enumerate() {
        let color = Palette99::pick(i).to_rgba();
        chart
            .draw_series(LineSeries::new(points.iter().copied(), color.stroke_width(2)))
            .map_err(|e| chart_error(path, e))?
            .label(name.as_str())
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 20, y)], color.stroke_width(2)));
    }
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.8))
        .border_style(BLACK)
        .draw()
        .map_err(|e| chart_error(path, e))?;
    root.present().map_err(|e| chart_error(path, e))
}

pub fn bar_chart(path: &Path, title: &str, labels: &[String], values: &[f64]) -> Result<(), Failure> {
    let hi = values.iter().copied().fold(0.0, f64::max);
    let root = SVGBackend::new(path, (800, 480)).into_drawing_area();
    root.fill(&WHITE).map_err(|e| chart_error(path, e))?;
    let n = labels.len();
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 20))
        .margin(12)
        .x_label_area_size(60)
        .y_label_area_size(60)
        .build_cartesian_2d(0.0..n as f64, 0.0..(if hi > 0.0 { 1.1 * hi } else { 1.0 }))
        .map_err(|e| chart_error(path, e))?;
    let names = labels.to_vec();
    chart
        .configure_mesh()
        .disable_x_mesh()
        .x_labels(n.max(1) * 2 + 1)
        .x_label_formatter(&move |x| {
            let centre = x - 0.5;
            let i = centre.round();
            if (centre - i).abs() < 1e-6 && i >= 0.0 && (i as usize) < names.len() {
                names[i as usize].clone()
            } else {
                String::new()
            }
        })
        .draw()
        .map_err(|e| chart_error(path, e))?;
    chart
        .draw_series(values.iter().enumerate().map(|(i, &v)| {
            let color = Palette99::pick(i).to_rgba();
            Rectangle::new([(i as f64 + 0.15, 0.0), (i as f64 + 0.85, v)], color.filled())
        }))
        .map_err(|e| chart_error(path, e))?;
    root.present().map_err(|e| chart_error(path, e))
}
