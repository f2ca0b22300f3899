//! Experiment runner: single runs with CSV artifacts, and seed-replicated
//! parameter sweeps.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use anyhow::Context;
use rayon::prelude::*;

use crate::config::{ExperimentConfig, Protocol, SweepSpec};
use crate::error::RunError;
use crate::metrics::{fmt_metric, write_frames_csv, write_packets_csv, MetricsSummary};
use crate::sim::{simulate, simulate_traced, RunOutput};

#[derive(Debug, Clone, Copy, Default)]
pub struct ArtifactOptions {
    pub frame_log: bool,
    pub trace: bool,
}

pub const PACKETS_CSV: &str = "packets.csv";
pub const FRAMES_CSV: &str = "frames.csv";
pub const SUMMARY_CSV: &str = "summary.csv";
pub const CONFIG_TOML: &str = "config.toml";
pub const TRACE_TXT: &str = "trace.txt";

fn summary_header(n_channels: usize) -> Vec<String> {
    let mut h: Vec<String> = [
        "protocol",
        "n_nodes",
        "network_load",
        "seed",
        "mean_e2e_delay_s",
        "delivery_ratio",
        "generated",
        "delivered",
        "dropped",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    h.extend((0..n_channels).map(|i| format!("util_ch{i}")));
    h
}

fn summary_fields(cfg: &ExperimentConfig, m: &MetricsSummary) -> Vec<String> {
    let mut row = vec![
        cfg.protocol.to_string(),
        cfg.n_nodes.to_string(),
        cfg.network_load.to_string(),
        cfg.seed.to_string(),
        fmt_metric(m.mean_e2e_delay_s),
        fmt_metric(m.delivery_ratio),
        m.generated.to_string(),
        m.delivered.to_string(),
        m.dropped.to_string(),
    ];
    row.extend(m.channel_utilization.iter().map(|u| u.to_string()));
    row
}

pub fn write_summary_csv<W: Write>(
    w: W,
    cfg: &ExperimentConfig,
    m: &MetricsSummary,
) -> csv::Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(summary_header(m.channel_utilization.len()))?;
    wr.write_record(summary_fields(cfg, m))?;
    wr.flush()?;
    Ok(())
}

fn create(path: &Path) -> anyhow::Result<BufWriter<File>> {
    let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(f))
}

/// Runs `cfg` and writes the effective config, the packet log, the summary
/// row and, if requested, the frame log and event trace into `out_dir`.
pub fn run_to_dir(
    cfg: &ExperimentConfig,
    out_dir: &Path,
    opts: ArtifactOptions,
) -> anyhow::Result<RunOutput> {
    cfg.validate()?;
    fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    fs::write(out_dir.join(CONFIG_TOML), cfg.to_toml())?;
    let out = if opts.trace {
        let sink = create(&out_dir.join(TRACE_TXT))?;
        simulate_traced(cfg, Some(Box::new(sink)))?
    } else {
        simulate(cfg)?
    };
    write_artifacts(&out, out_dir, opts.frame_log)?;
    Ok(out)
}

/// Writes the CSV artifacts and the effective config of a finished run.
pub fn write_artifacts(out: &RunOutput, out_dir: &Path, frame_log: bool) -> anyhow::Result<()> {
    fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    fs::write(out_dir.join(CONFIG_TOML), out.config.to_toml())?;
    write_packets_csv(create(&out_dir.join(PACKETS_CSV))?, &out.records)?;
    write_summary_csv(
        create(&out_dir.join(SUMMARY_CSV))?,
        &out.config,
        &out.summary,
    )?;
    if frame_log {
        write_frames_csv(create(&out_dir.join(FRAMES_CSV))?, &out.frames)?;
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct SweepRow {
    pub config: ExperimentConfig,
    pub value: f64,
    pub result: Result<MetricsSummary, String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepAggregate {
    pub protocol: Protocol,
    pub value: f64,
    pub runs_ok: usize,
    pub runs_failed: usize,
    /// Mean and sample standard deviation across seeds (runs where the
    /// metric is undefined are skipped).
    pub delay_mean: Option<f64>,
    pub delay_std: Option<f64>,
    pub ratio_mean: Option<f64>,
    pub ratio_std: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct SweepResults {
    pub spec: SweepSpec,
    pub rows: Vec<SweepRow>,
}

fn mean_std(xs: &[f64]) -> (Option<f64>, Option<f64>) {
    if xs.is_empty() {
        return (None, None);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let std = if xs.len() > 1 {
        (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (Some(mean), Some(std))
}

impl SweepResults {
    pub fn aggregates(&self) -> Vec<SweepAggregate> {
        let mut out = Vec::new();
        for &protocol in &self.spec.protocols {
            for &value in &self.spec.values {
                let rows: Vec<&SweepRow> = self
                    .rows
                    .iter()
                    .filter(|r| r.config.protocol == protocol && r.value == value)
                    .collect();
                let ok: Vec<&MetricsSummary> =
                    rows.iter().filter_map(|r| r.result.as_ref().ok()).collect();
                let delays: Vec<f64> = ok.iter().filter_map(|m| m.mean_e2e_delay_s).collect();
                let ratios: Vec<f64> = ok.iter().filter_map(|m| m.delivery_ratio).collect();
                let (delay_mean, delay_std) = mean_std(&delays);
                let (ratio_mean, ratio_std) = mean_std(&ratios);
                out.push(SweepAggregate {
                    protocol,
                    value,
                    runs_ok: ok.len(),
                    runs_failed: rows.len() - ok.len(),
                    delay_mean,
                    delay_std,
                    ratio_mean,
                    ratio_std,
                });
            }
        }
        out
    }

    pub fn aggregate(&self, protocol: Protocol, value: f64) -> Option<SweepAggregate> {
        self.aggregates()
            .into_iter()
            .find(|a| a.protocol == protocol && a.value == value)
    }

    pub fn write_rows_csv<W: Write>(&self, w: W) -> csv::Result<()> {
        let n_channels = self.spec.base.n_channels();
        let mut wr = csv::Writer::from_writer(w);
        let mut header = summary_header(n_channels);
        header.push("error".into());
        wr.write_record(&header)?;
        for r in &self.rows {
            let mut fields = match &r.result {
                Ok(m) => {
                    let mut f = summary_fields(&r.config, m);
                    f.push(String::new());
                    f
                }
                Err(e) => {
                    let mut f = vec![
                        r.config.protocol.to_string(),
                        r.config.n_nodes.to_string(),
                        r.config.network_load.to_string(),
                        r.config.seed.to_string(),
                    ];
                    f.extend(std::iter::repeat_n(String::new(), header.len() - 5));
                    f.push(e.clone());
                    f
                }
            };
            fields.resize(header.len(), String::new());
            wr.write_record(&fields)?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn write_aggregates_csv<W: Write>(&self, w: W) -> csv::Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record([
            "protocol",
            "parameter",
            "value",
            "runs_ok",
            "runs_failed",
            "mean_e2e_delay_s_mean",
            "mean_e2e_delay_s_std",
            "delivery_ratio_mean",
            "delivery_ratio_std",
        ])?;
        for a in self.aggregates() {
            wr.write_record([
                a.protocol.to_string(),
                self.spec.param.as_str().to_string(),
                a.value.to_string(),
                a.runs_ok.to_string(),
                a.runs_failed.to_string(),
                fmt_metric(a.delay_mean),
                fmt_metric(a.delay_std),
                fmt_metric(a.ratio_mean),
                fmt_metric(a.ratio_std),
            ])?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn write_to_dir(&self, out_dir: &Path) -> anyhow::Result<()> {
        fs::create_dir_all(out_dir)?;
        fs::write(out_dir.join("base_config.toml"), self.spec.base.to_toml())?;
        self.write_rows_csv(create(&out_dir.join("sweep_rows.csv"))?)?;
        self.write_aggregates_csv(create(&out_dir.join("sweep_aggregates.csv"))?)?;
        Ok(())
    }
}

/// Runs every point of `spec` in parallel, handing each finished run to
/// `inspect` before its logs are dropped. Results come back in point order
/// regardless of scheduling.
pub fn sweep_with<R, F>(
    spec: &SweepSpec,
    inspect: F,
) -> anyhow::Result<(SweepResults, Vec<Option<R>>)>
where
    R: Send,
    F: Fn(&RunOutput) -> R + Sync,
{
    spec.validate()?;
    let values: Vec<f64> = spec
        .protocols
        .iter()
        .flat_map(|_| {
            spec.values
                .iter()
                .flat_map(|&v| std::iter::repeat_n(v, spec.seeds as usize))
        })
        .collect();
    let points = spec.points();
    let outcomes: Vec<(Result<MetricsSummary, String>, Option<R>)> = points
        .par_iter()
        .map(|cfg| match simulate(cfg) {
            Ok(out) => {
                let r = inspect(&out);
                (Ok(out.summary), Some(r))
            }
            Err(e) => (Err(describe(&e)), None),
        })
        .collect();
    let mut rows = Vec::with_capacity(points.len());
    let mut extras = Vec::with_capacity(points.len());
    for ((config, value), (result, extra)) in points.into_iter().zip(values).zip(outcomes) {
        rows.push(SweepRow {
            config,
            value,
            result,
        });
        extras.push(extra);
    }
    Ok((
        SweepResults {
            spec: spec.clone(),
            rows,
        },
        extras,
    ))
}

pub fn sweep(spec: &SweepSpec) -> anyhow::Result<SweepResults> {
    sweep_with(spec, |_| ()).map(|(r, _)| r)
}

fn describe(e: &RunError) -> String {
    format!("error: {e}")
}
