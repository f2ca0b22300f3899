use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use lpwa_core::harness::{run_to_dir, sweep, ArtifactOptions};
use lpwa_core::metrics::fmt_metric;
use lpwa_core::{ConfigError, ExperimentConfig, Protocol, RunError, SweepParam, SweepSpec};

#[derive(Parser)]
#[command(
    name = "lpwa-sim",
    version,
    about = "Request/grant LPWAN MAC vs. LoRaWAN ALOHA simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a single simulation.
    Run(RunArgs),
    /// Run a parameter sweep across seeds.
    Sweep(SweepArgs),
}

#[derive(Args)]
struct Common {
    /// TOML config file; missing keys take their defaults.
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(short, long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Simulated time in seconds.
    #[arg(long)]
    horizon: Option<f64>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    common: Common,
    #[arg(short, long)]
    protocol: Option<Protocol>,
    /// Also write frames.csv.
    #[arg(long)]
    frame_log: bool,
    /// Also write an event trace to trace.txt.
    #[arg(long)]
    trace: bool,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    common: Common,
    /// Bundled sweep grid: fig1 or fig2.
    #[arg(long, conflicts_with_all = ["param", "values"])]
    preset: Option<String>,
    /// Swept parameter: network_load or n_nodes.
    #[arg(long, requires = "values")]
    param: Option<SweepParam>,
    #[arg(long, value_delimiter = ',', requires = "param")]
    values: Vec<f64>,
    #[arg(long, default_value_t = 10)]
    seeds: u32,
    /// Restrict to these protocols (default: both).
    #[arg(long, value_delimiter = ',')]
    protocols: Vec<Protocol>,
}

fn load_base(c: &Common) -> anyhow::Result<ExperimentConfig> {
    let mut cfg = match &c.config {
        Some(p) => {
            let text =
                std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            ExperimentConfig::from_toml(&text)?
        }
        None => ExperimentConfig::default(),
    };
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    if let Some(h) = c.horizon {
        cfg.horizon_s = h;
    }
    Ok(cfg)
}

fn run(args: RunArgs) -> anyhow::Result<()> {
    let mut cfg = load_base(&args.common)?;
    if let Some(p) = args.protocol {
        cfg.protocol = p;
    }
    let opts = ArtifactOptions {
        frame_log: args.frame_log,
        trace: args.trace,
    };
    let out = run_to_dir(&cfg, &args.common.out, opts)?;
    let s = &out.summary;
    println!(
        "{} n_nodes={} load={} seed={}: delay={} s ratio={} generated={} delivered={} dropped={}",
        cfg.protocol,
        cfg.n_nodes,
        cfg.network_load,
        cfg.seed,
        fmt_metric(s.mean_e2e_delay_s),
        fmt_metric(s.delivery_ratio),
        s.generated,
        s.delivered,
        s.dropped
    );
    Ok(())
}

fn run_sweep(args: SweepArgs) -> anyhow::Result<()> {
    let base = load_base(&args.common)?;
    let mut spec = match (&args.preset, args.param) {
        (Some(name), _) => SweepSpec::preset(name, base, args.seeds)?,
        (None, Some(param)) => SweepSpec {
            base,
            protocols: Protocol::ALL.to_vec(),
            param,
            values: args.values.clone(),
            seeds: args.seeds,
        },
        (None, None) => bail!(ConfigError::new(
            "preset",
            "give --preset or --param with --values"
        )),
    };
    if !args.protocols.is_empty() {
        spec.protocols = args.protocols.clone();
    }
    let results = sweep(&spec)?;
    results.write_to_dir(&args.common.out)?;
    for a in results.aggregates() {
        println!(
            "{} {}={}: delay={} s ratio={} ({} ok, {} failed)",
            a.protocol,
            spec.param.as_str(),
            a.value,
            fmt_metric(a.delay_mean),
            fmt_metric(a.ratio_mean),
            a.runs_ok,
            a.runs_failed
        );
    }
    let failed = results.rows.iter().filter(|r| r.result.is_err()).count();
    if failed > 0 {
        eprintln!(
            "{failed} sweep point(s) failed; see {}",
            out_rows(&args.common.out).display()
        );
    }
    Ok(())
}

fn out_rows(dir: &Path) -> PathBuf {
    dir.join("sweep_rows.csv")
}

fn is_config_error(e: &anyhow::Error) -> bool {
    e.downcast_ref::<ConfigError>().is_some()
        || matches!(e.downcast_ref::<RunError>(), Some(RunError::Config(_)))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match cli.command {
        Command::Run(a) => run(a),
        Command::Sweep(a) => run_sweep(a),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if is_config_error(&e) {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}
