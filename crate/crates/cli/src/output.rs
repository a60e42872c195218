use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use bridgerec::eval::MetricReport;
use bridgerec::pipeline::RunSpec;
use bridgerec::plot::{bar_chart, line_chart, Series};
use serde::{Deserialize, Serialize};

/// Dataset size and sparsity, one row per dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsRow {
    pub dataset: String,
    pub users: usize,
    pub items: usize,
    pub interactions: usize,
    pub sparsity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub dataset: String,
    pub variant: String,
    pub gamma: f64,
    pub seed: u64,
    pub model_tag: String,
    pub hr_at_1: f64,
    pub hr_at_2: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub degenerate: bool,
    pub n_ip_cases: usize,
    pub n_rank_cases: usize,
}

impl MetricRow {
    pub fn of(dataset: &str, spec: &RunSpec, r: &MetricReport) -> Self {
        Self {
            dataset: dataset.to_owned(),
            variant: spec.variant.to_string(),
            gamma: spec.gamma,
            seed: spec.seed,
            model_tag: r.model_tag.clone(),
            hr_at_1: r.hr_at_1,
            hr_at_2: r.hr_at_2,
            precision: r.precision,
            recall: r.recall,
            f1: r.f1,
            degenerate: r.degenerate,
            n_ip_cases: r.n_ip_cases,
            n_rank_cases: r.n_rank_cases,
        }
    }
}

fn parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(())
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    parent(path)?;
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    parent(path)?;
    let mut buf = Vec::new();
    for r in records {
        serde_json::to_writer(&mut buf, r)?;
        buf.push(b'\n');
    }
    fs::write(path, buf).with_context(|| format!("writing {}", path.display()))
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    parent(path)?;
    let mut w =
        csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

type NamedPoints = (String, Vec<Option<(f64, f64)>>);

/// The plotted numbers, one row per point, next to each SVG.
fn data_sidecar(path: &Path, categories: &[String], series: &[NamedPoints]) -> Result<()> {
    parent(path)?;
    let mut w =
        csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))?;
    w.write_record(["series", "x", "mean", "sd"])?;
    for (name, points) in series {
        for (x, p) in categories.iter().zip(points) {
            if let Some((m, sd)) = p {
                w.write_record([name.as_str(), x.as_str(), &m.to_string(), &sd.to_string()])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

fn to_series(series: &[NamedPoints]) -> Vec<Series> {
    series
        .iter()
        .map(|(name, points)| Series {
            name: name.clone(),
            points: points.clone(),
        })
        .collect()
}

pub fn line_chart_files(
    dir: &Path,
    stem: &str,
    title: &str,
    categories: &[String],
    series: &[NamedPoints],
) -> Result<()> {
    let svg = line_chart(title, "gamma", "HR@1", categories, &to_series(series));
    let path = dir.join(format!("{stem}.svg"));
    parent(&path)?;
    fs::write(&path, svg).with_context(|| format!("writing {}", path.display()))?;
    data_sidecar(&dir.join(format!("{stem}.data.csv")), categories, series)
}

pub fn bar_chart_files(
    dir: &Path,
    stem: &str,
    title: &str,
    x_label: &str,
    categories: &[String],
    series: &[NamedPoints],
) -> Result<()> {
    let svg = bar_chart(title, x_label, "HR@1", categories, &to_series(series));
    let path = dir.join(format!("{stem}.svg"));
    parent(&path)?;
    fs::write(&path, svg).with_context(|| format!("writing {}", path.display()))?;
    data_sidecar(&dir.join(format!("{stem}.data.csv")), categories, series)
}
