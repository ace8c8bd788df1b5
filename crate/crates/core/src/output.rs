//! Result files: CSV tables, a JSON dump and SVG charts.
//!
//! `cohort.csv`   indication, meld_band, then one column per scenario holding the
//!                mean incident-cohort size. Margins use `ALL`.
//! `rates.csv`    policy, shortage, stratum, cohort_size, ltx, ddts, alive,
//!                ddts_rate, ltx_rate, alive_rate (counts pooled over replications;
//!                `NA` for an empty stratum).
//! `prevalent_rates.csv`  same layout, for recipients already waiting when the
//!                study phase started.
//! `variance.csv` policy, shortage, ddts_variance, mean_replication_ddts_variance.
//! `results.json` config hash, master seed and every scenario result.
//! `shortage_rates.svg`, `ddts_variance.svg`  grouped bars by shortage level.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use std::ops::Range;

use plotters::coord::ranged1d::{DefaultFormatting, KeyPointHint, Ranged};
use plotters::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::OutputError;
use crate::metrics::{ScenarioResult, StratumRates};
use crate::model::{Indication, MeldBand};
use crate::policy::PolicyKind;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultsFile {
    pub config_hash: String,
    pub seed: u64,
    pub results: Vec<ScenarioResult>,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> OutputError + '_ {
    move |source| OutputError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn write_file(path: &Path, contents: &[u8]) -> Result<(), OutputError> {
    fs::write(path, contents).map_err(io_err(path))
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| format!("{x:.6}"))
}

pub fn scenario_column(r: &ScenarioResult) -> String {
    format!("{}_s{:.2}", r.spec.policy, r.spec.shortage_fraction)
}

pub fn cohort_csv(results: &[ScenarioResult]) -> String {
    let mut out = String::from("indication,meld_band");
    for r in results {
        out.push(',');
        out.push_str(&scenario_column(r));
    }
    out.push('\n');
    let mut row = |ind: &str, band: &str, value: &dyn Fn(&ScenarioResult) -> f64| {
        out.push_str(ind);
        out.push(',');
        out.push_str(band);
        for r in results {
            let _ = write!(out, ",{:.2}", value(r));
        }
        out.push('\n');
    };
    for ind in Indication::ALL {
        for band in MeldBand::ALL {
            if ind == Indication::Mxp && !band.allows_exception() {
                continue;
            }
            row(ind.as_str(), &band.to_string(), &|r| r.mean_cohort(ind, band));
        }
        row(ind.as_str(), "ALL", &|r| r.mean_indication_cohort(ind));
    }
    for band in MeldBand::ALL {
        row("ALL", &band.to_string(), &|r| r.mean_band_cohort(band));
    }
    row("ALL", "ALL", &|r| {
        Indication::ALL
            .into_iter()
            .map(|i| r.mean_indication_cohort(i))
            .sum()
    });
    out
}

fn rates_table(results: &[ScenarioResult], pick: fn(&ScenarioResult) -> &[StratumRates]) -> String {
    let mut out = String::from(
        "policy,shortage,stratum,cohort_size,ltx,ddts,alive,ddts_rate,ltx_rate,alive_rate\n",
    );
    for r in results {
        for s in pick(r) {
            let c = &s.counts;
            let _ = writeln!(
                out,
                "{},{:.2},{},{},{},{},{},{},{},{}",
                r.spec.policy,
                r.spec.shortage_fraction,
                s.stratum,
                c.total(),
                c.ltx,
                c.ddts,
                c.alive,
                opt(s.rates.map(|x| x.ddts)),
                opt(s.rates.map(|x| x.ltx)),
                opt(s.rates.map(|x| x.alive)),
            );
        }
    }
    out
}

pub fn rates_csv(results: &[ScenarioResult]) -> String {
    rates_table(results, |r| &r.rates)
}

pub fn prevalent_rates_csv(results: &[ScenarioResult]) -> String {
    rates_table(results, |r| &r.prevalent_rates)
}

pub fn variance_csv(results: &[ScenarioResult]) -> String {
    let mut out = String::from("policy,shortage,ddts_variance,mean_replication_ddts_variance\n");
    for r in results {
        let _ = writeln!(
            out,
            "{},{:.2},{},{}",
            r.spec.policy,
            r.spec.shortage_fraction,
            opt(r.ddts_variance),
            opt(r.mean_replication_ddts_variance),
        );
    }
    out
}

/// Distinct policies and shortage levels, in order of first appearance / ascending.
fn axes(results: &[ScenarioResult]) -> (Vec<PolicyKind>, Vec<f64>) {
    let mut policies = Vec::new();
    let mut levels: Vec<f64> = Vec::new();
    for r in results {
        if !policies.contains(&r.spec.policy) {
            policies.push(r.spec.policy);
        }
        if !levels.contains(&r.spec.shortage_fraction) {
            levels.push(r.spec.shortage_fraction);
        }
    }
    levels.sort_by(f64::total_cmp);
    (policies, levels)
}

const SERIES_COLORS: [RGBColor; 3] = [
    RGBColor(31, 119, 180),
    RGBColor(214, 39, 40),
    RGBColor(44, 160, 44),
];

/// Category axis over `[0, n)` with one tick at the centre of each group.
struct GroupAxis(usize);

impl Ranged for GroupAxis {
    type FormatOption = DefaultFormatting;
    type ValueType = f64;

    fn map(&self, value: &f64, limit: (i32, i32)) -> i32 {
        let frac = value / self.0 as f64;
        limit.0 + (frac * f64::from(limit.1 - limit.0)).round() as i32
    }

    fn key_points<H: KeyPointHint>(&self, _hint: H) -> Vec<f64> {
        (0..self.0).map(|i| i as f64 + 0.5).collect()
    }

    fn range(&self) -> Range<f64> {
        0.0..self.0 as f64
    }
}

/// One panel of grouped bars: groups are shortage levels, series are policies.
fn grouped_bars<DB: DrawingBackend>(
    area: &DrawingArea<DB, plotters::coord::Shift>,
    title: &str,
    y_max: f64,
    results: &[ScenarioResult],
    value: &dyn Fn(&ScenarioResult) -> Option<f64>,
) -> Result<(), String> {
    let (policies, levels) = axes(results);
    let mut chart = ChartBuilder::on(area)
        .caption(title, ("sans-serif", 20))
        .margin(12)
        .x_label_area_size(40)
        .y_label_area_size(60)
        .build_cartesian_2d(GroupAxis(levels.len()), 0.0..y_max)
        .map_err(|e| e.to_string())?;
    let label_levels = levels.clone();
    chart
        .configure_mesh()
        .disable_x_mesh()
        .x_desc("organ shortage")
        .x_label_formatter(&|x| {
            let i = x.floor() as usize;
            label_levels
                .get(i)
                .map_or_else(String::new, |s| format!("{:.0}%", s * 100.0))
        })
        .y_label_formatter(&|y| format!("{y:.3}"))
        .draw()
        .map_err(|e| e.to_string())?;
    let width = 0.8 / policies.len() as f64;
    for (k, policy) in policies.iter().enumerate() {
        let color = SERIES_COLORS[k % SERIES_COLORS.len()];
        let bars: Vec<_> = results
            .iter()
            .filter(|r| r.spec.policy == *policy)
            .filter_map(|r| {
                let i = levels.iter().position(|&l| l == r.spec.shortage_fraction)?;
                let v = value(r)?;
                let x0 = i as f64 + 0.1 + k as f64 * width;
                Some(Rectangle::new([(x0, 0.0), (x0 + width, v)], color.filled()))
            })
            .collect();
        chart
            .draw_series(bars)
            .map_err(|e| e.to_string())?
            .label(policy.as_str())
            .legend(move |(x, y)| Rectangle::new([(x, y - 5), (x + 10, y + 5)], color.filled()));
    }
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.8))
        .border_style(BLACK)
        .draw()
        .map_err(|e| e.to_string())?;
    Ok(())
}

fn overall(r: &ScenarioResult) -> Option<crate::metrics::CrudeRates> {
    r.rates_for(crate::metrics::Stratum::Overall)
}

pub fn plot_shortage_rates(results: &[ScenarioResult], path: &Path) -> Result<(), OutputError> {
    let plot_err = |reason: String| OutputError::Plot {
        path: path.display().to_string(),
        reason,
    };
    let root = SVGBackend::new(path, (1100, 450)).into_drawing_area();
    root.fill(&WHITE).map_err(|e| plot_err(e.to_string()))?;
    let panels = root.split_evenly((1, 2));
    grouped_bars(&panels[0], "DDTS rate", 1.0, results, &|r| overall(r).map(|x| x.ddts))
        .map_err(plot_err)?;
    grouped_bars(&panels[1], "LTx rate", 1.0, results, &|r| overall(r).map(|x| x.ltx))
        .map_err(plot_err)?;
    root.present().map_err(|e| plot_err(e.to_string()))
}

pub fn plot_variance(results: &[ScenarioResult], path: &Path) -> Result<(), OutputError> {
    let plot_err = |reason: String| OutputError::Plot {
        path: path.display().to_string(),
        reason,
    };
    let top = results
        .iter()
        .filter_map(|r| r.ddts_variance)
        .fold(0.0, f64::max);
    let y_max = if top > 0.0 { top * 1.2 } else { 0.01 };
    let root = SVGBackend::new(path, (700, 450)).into_drawing_area();
    root.fill(&WHITE).map_err(|e| plot_err(e.to_string()))?;
    grouped_bars(
        &root,
        "DDTS rate variance across CIRRH, HCC, OTHER",
        y_max,
        results,
        &|r| r.ddts_variance,
    )
    .map_err(plot_err)?;
    root.present().map_err(|e| plot_err(e.to_string()))
}

/// Writes every result file into `dir` (created if needed) and returns their paths.
pub fn emit_results(
    results: &[ScenarioResult],
    dir: &Path,
    config_hash: &str,
    seed: u64,
) -> Result<Vec<PathBuf>, OutputError> {
    if results.is_empty() {
        return Err(OutputError::Empty);
    }
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut written = Vec::new();
    let tables = [
        ("cohort.csv", cohort_csv(results)),
        ("rates.csv", rates_csv(results)),
        ("prevalent_rates.csv", prevalent_rates_csv(results)),
        ("variance.csv", variance_csv(results)),
    ];
    for (name, body) in tables {
        let path = dir.join(name);
        write_file(&path, body.as_bytes())?;
        written.push(path);
    }
    let file = ResultsFile {
        config_hash: config_hash.to_string(),
        seed,
        results: results.to_vec(),
    };
    let path = dir.join("results.json");
    let mut json = serde_json::to_vec_pretty(&file)?;
    json.push(b'\n');
    write_file(&path, &json)?;
    written.push(path);

    let path = dir.join("shortage_rates.svg");
    plot_shortage_rates(results, &path)?;
    written.push(path);
    let path = dir.join("ddts_variance.svg");
    plot_variance(results, &path)?;
    written.push(path);
    Ok(written)
}

pub fn read_results(path: &Path) -> Result<ResultsFile, OutputError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    Ok(serde_json::from_slice(&bytes)?)
}
