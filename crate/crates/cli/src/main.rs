use std::fs::{self, File};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use copula_vfl::federation::{Federation, TransportKind};
use copula_vfl::glm::{fit_dataset, FitConfig, Link, PenaltyFamily};
use copula_vfl::harness::{read_results, report, run_experiment, write_results, ExperimentConfig};
use copula_vfl::io::{read_dataset, write_dataset};
use copula_vfl::pipeline::{self, BudgetMode, Method, PrivatizationConfig};
use copula_vfl::{Error, Result};

/// Copula-based privatization and sparse GLM fitting for vertically
/// partitioned data.
#[derive(Parser)]
#[command(name = "copula-vfl", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a replicated simulation study from a TOML config.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        /// Output directory; overrides `out` in the config.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Produce a privatized synthetic copy of a dataset.
    Privatize(PrivatizeArgs),
    /// Fit a penalized GLM with BIC-selected lambda.
    Fit(FitArgs),
    /// Summarize a results directory written by `simulate`.
    Report {
        #[arg(long = "in")]
        input: PathBuf,
    },
}

#[derive(Args)]
struct PrivatizeArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    partition: PathBuf,
    #[arg(long, default_value = "evcds")]
    method: Method,
    /// Rank budget: one value for every client or a comma-separated list.
    #[arg(long, default_value = "0.5")]
    eps1: String,
    /// Marginal budget, same format as `--eps1`.
    #[arg(long, default_value = "0.5")]
    eps2: String,
    /// IEVCDS iterations.
    #[arg(long, default_value_t = 1)]
    t: usize,
    /// Read `--eps1` as the total over all iterations.
    #[arg(long)]
    total_budget: bool,
    #[arg(long)]
    n_synth: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Synthetic CSV; the partition sidecar is written next to it.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct FitArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    partition: PathBuf,
    #[arg(long, default_value = "gaussian")]
    link: Link,
    #[arg(long, default_value = "scad")]
    penalty: PenaltyFamily,
    #[arg(long, default_value_t = 50)]
    grid_size: usize,
    #[arg(long, default_value_t = 1e-3)]
    grid_ratio: f64,
}

fn budgets(text: &str, k: usize) -> Result<Vec<f64>> {
    let vals = text
        .split(',')
        .map(|v| {
            v.trim()
                .parse::<f64>()
                .map_err(|_| Error::Config(format!("bad budget {v:?}")))
        })
        .collect::<Result<Vec<_>>>()?;
    match vals.len() {
        1 => Ok(vec![vals[0]; k]),
        n if n == k => Ok(vals),
        n => Err(Error::Config(format!("{n} budgets for {k} clients"))),
    }
}

fn sidecar_path(csv: &Path) -> PathBuf {
    csv.with_extension("partition.json")
}

fn simulate(config: &Path, out: Option<PathBuf>) -> Result<()> {
    let cfg = ExperimentConfig::from_toml(&fs::read_to_string(config)?)?;
    let dir = out
        .or_else(|| cfg.out.clone())
        .ok_or_else(|| Error::Config("no output directory given".into()))?;
    fs::create_dir_all(&dir)?;
    let rows = run_experiment(&cfg)?;
    write_results(&rows, File::create(dir.join("results.csv"))?)?;
    fs::copy(config, dir.join("config.toml"))?;
    print!("{}", report(&rows));
    Ok(())
}

fn privatize(a: PrivatizeArgs) -> Result<()> {
    let ds = read_dataset(&a.data, &a.partition)?;
    let k = ds.partition.n_clients();
    let cfg = PrivatizationConfig {
        method: a.method,
        eps1: budgets(&a.eps1, k)?,
        eps2: budgets(&a.eps2, k)?,
        iterations: a.t,
        budget_mode: if a.total_budget {
            BudgetMode::TotalOverIterations
        } else {
            BudgetMode::PerIteration
        },
        n_synth: a.n_synth,
        seed: a.seed,
        ..PrivatizationConfig::uniform(a.method, k, 1.0, 1.0, a.seed)
    };
    let fed = Federation::new(TransportKind::from_env()?);
    let (synth, rep) = pipeline::run(&ds, &cfg, &fed)?;
    write_dataset(&synth, &a.out, &sidecar_path(&a.out))?;
    let summary = serde_json::json!({
        "method": a.method,
        "vdadp": (0..k).map(|c| rep.ledger.vdadp(c)).collect::<Vec<_>>(),
        "total_dp": rep.ledger.total_dp(),
        "thetas": rep.thetas,
        "psd_projected": rep.psd_projected,
        "degenerate_intervals": rep.degenerate_intervals,
        "omega_deltas": rep.omega_deltas,
    });
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(())
}

fn fit(a: FitArgs) -> Result<()> {
    let ds = read_dataset(&a.data, &a.partition)?;
    let cfg = FitConfig {
        link: a.link,
        penalty: a.penalty,
        grid_size: a.grid_size,
        grid_ratio: a.grid_ratio,
        ..FitConfig::default()
    };
    let fed = Federation::new(TransportKind::from_env()?);
    let (fit, _) = fit_dataset(&ds, &cfg, &fed)?;
    let names: Vec<&str> = ds.columns[1..].iter().map(|c| c.name.as_str()).collect();
    let out = serde_json::json!({
        "intercept": fit.intercept,
        "beta": names.iter().zip(&fit.beta).map(|(n, b)| (n.to_string(), serde_json::json!(b))).collect::<serde_json::Map<_, _>>(),
        "support": fit.support.iter().map(|&j| names[j]).collect::<Vec<_>>(),
        "lambda": fit.lambda,
        "bic": fit.bic,
        "iterations": fit.iterations,
    });
    println!("{}", serde_json::to_string_pretty(&out)?);
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate { config, out } => simulate(&config, out),
        Command::Privatize(a) => privatize(a),
        Command::Fit(a) => fit(a),
        Command::Report { input } => {
            let path = if input.is_dir() { input.join("results.csv") } else { input };
            print!("{}", report(&read_results(File::open(path)?)?));
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config_error() { 2 } else { 3 })
        }
    }
}
