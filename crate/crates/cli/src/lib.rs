//! Command-line front end: config resolution, experiment stages and run
//! persistence.

pub mod config;
pub mod error;
pub mod io;
pub mod pricing;
pub mod run;
pub mod selftest;

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use meshvmc::{OptionKind, OptionSpec};
use serde_json::json;

use crate::config::ExperimentConfig;
use crate::error::{CliError, Result};
use crate::io::RunDir;
use crate::pricing::Method;

#[derive(Debug, Parser)]
#[command(name = "meshvmc", version, about = "Variational Monte Carlo on hypercube meshes")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct GlobalArgs {
    /// Named starting config; each command has its own default.
    #[arg(long, global = true)]
    pub preset: Option<String>,
    /// JSON config merged over the preset.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// `section.key=value`, applied last. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Run directory; overrides `output_dir`.
    #[arg(long, global = true)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit the ansatz to the initial condition.
    Pretrain,
    /// Forward Euler reference trajectory.
    Baseline,
    /// Pretrain (or load a checkpoint) and evolve.
    Evolve {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Price one option.
    Price(PriceArgs),
    /// One diffusion cell averaged over `seeds`.
    Table1,
    /// Error against batch size.
    Ablation,
    /// The configured pricing rows.
    PricingSuite,
    /// Oracle and property checks.
    Selftest {
        /// Skip the rerun-and-diff determinism check.
        #[arg(long)]
        skip_determinism: bool,
    },
    /// Relative difference between the final states of two runs.
    Compare { a: PathBuf, b: PathBuf },
}

#[derive(Debug, Clone, Default, Args)]
pub struct PriceArgs {
    /// call1d, basket_call, basket_put, rainbow_max_call or spread_put.
    #[arg(long, value_parser = parse_kind)]
    pub option: Option<OptionKind>,
    #[arg(long, value_enum, default_value = "vmc")]
    pub method: Method,
    #[arg(long = "K")]
    pub strike: Option<f64>,
    #[arg(long)]
    pub r: Option<f64>,
    /// One value for every asset or one per asset, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub sigma: Option<Vec<f64>>,
    /// Pairwise correlation.
    #[arg(long)]
    pub rho: Option<f64>,
    #[arg(long = "T")]
    pub expiry: Option<f64>,
    #[arg(long)]
    pub d: Option<usize>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long = "B")]
    pub batch: Option<u64>,
    #[arg(long)]
    pub dt: Option<f64>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Spot, one value per asset, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub s0: Option<Vec<f64>>,
    /// Skip the strike sweep (`price_curve.csv`).
    #[arg(long)]
    pub no_curve: bool,
}

fn parse_kind(s: &str) -> std::result::Result<OptionKind, String> {
    let key = s.replace('-', "_").replace("call_1d", "call1d");
    serde_json::from_value(serde_json::Value::String(key)).map_err(|_| format!("unknown option kind {s:?}"))
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Pretrain => "pretrain",
            Command::Baseline => "baseline",
            Command::Evolve { .. } => "evolve",
            Command::Price(_) => "price",
            Command::Table1 => "table1",
            Command::Ablation => "ablation",
            Command::PricingSuite => "pricing-suite",
            Command::Selftest { .. } => "selftest",
            Command::Compare { .. } => "compare",
        }
    }

    fn default_preset(&self) -> &'static str {
        match self {
            Command::Ablation => "ablation",
            Command::Price(_) => "bs-call",
            Command::PricingSuite => "pricing-suite",
            Command::Selftest { .. } => "smoke",
            _ => "table1-d1",
        }
    }
}

/// Applies the `price` flags to the option section.
fn apply_price_args(cfg: &mut ExperimentConfig, args: &PriceArgs) -> Result<()> {
    let current = &cfg.option.option;
    let kind = args.option.unwrap_or(current.kind);
    let d = match (args.d, kind) {
        (Some(d), _) => d,
        (None, OptionKind::Call1d) => 1,
        (None, _) if current.d() > 1 => current.d(),
        (None, _) => 2,
    };
    let sigma = match &args.sigma {
        Some(s) if s.len() == 1 => vec![s[0]; d],
        Some(s) => s.clone(),
        None if current.d() == d => current.sigma.clone(),
        None => vec![current.sigma[0]; d],
    };
    let rho = match args.rho {
        Some(p) => (0..d).map(|i| (0..d).map(|j| if i == j { 1.0 } else { p }).collect()).collect(),
        None if current.d() == d => current.rho.clone(),
        None => {
            let p = if current.d() > 1 { current.rho[0][1] } else { 0.0 };
            (0..d).map(|i| (0..d).map(|j| if i == j { 1.0 } else { p }).collect()).collect()
        }
    };
    let weights = if current.d() == d {
        current.weights.clone()
    } else {
        vec![1.0 / d as f64; d]
    };
    cfg.option.option = OptionSpec::new(
        kind,
        args.strike.unwrap_or(current.strike),
        args.r.unwrap_or(current.r),
        sigma,
        rho,
        weights,
        args.expiry.unwrap_or(current.expiry),
    )
    .map_err(|e| CliError::validation(e.to_string()))?;
    if let Some(n) = args.n {
        cfg.option.n = n;
    }
    if let Some(b) = args.batch {
        cfg.evolution.batch = b;
    }
    if args.dt.is_some() {
        cfg.option.dt = args.dt;
    }
    if args.steps.is_some() {
        cfg.option.steps = args.steps;
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if args.s0.is_some() {
        cfg.option.s0 = args.s0.clone();
    }
    cfg.validate()
}

/// Resolves the config for `command`: preset, then file, then `--set`,
/// then command flags.
pub fn resolve(global: &GlobalArgs, command: &Command) -> Result<ExperimentConfig> {
    let preset = global.preset.as_deref().unwrap_or(command.default_preset());
    let mut cfg = config::resolve(Some(preset), global.config.as_deref(), &global.set)?;
    if let Command::Price(args) = command {
        apply_price_args(&mut cfg, args)?;
    }
    if let Some(out) = &global.output {
        cfg.output_dir = out.clone();
    }
    Ok(cfg)
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn gate(passed: bool, what: &str) -> Result<()> {
    if passed {
        Ok(())
    } else {
        Err(CliError::validation(format!("{what} failed its tolerance gate")))
    }
}

/// Runs one command; the outputs go to the resolved `output_dir`.
pub fn execute(cli: &Cli) -> Result<()> {
    if let Command::Compare { a, b } = &cli.command {
        let report = run::compare(a, b)?;
        return print_json(&report);
    }
    let cfg = resolve(&cli.global, &cli.command)?;
    execute_with(&cfg, &cli.command)
}

pub fn execute_with(cfg: &ExperimentConfig, command: &Command) -> Result<()> {
    let dir = RunDir::create(&cfg.output_dir, cfg, command.name())?;
    match command {
        Command::Pretrain => print_json(&run::run_pretrain(cfg, &dir)?),
        Command::Baseline => {
            let run = run::run_baseline(cfg, &dir)?;
            print_json(&json!({ "snapshots": run.snapshots.len(), "dt": run.dt, "steps": run.steps }))
        }
        Command::Evolve { checkpoint } => print_json(&run::run_evolve(cfg, &dir, checkpoint.as_deref())?),
        Command::Price(args) => print_json(&run::run_price(cfg, &dir, args.method, !args.no_curve)?),
        Command::Table1 => {
            let report = run::run_table1(cfg, &dir)?;
            print_json(&report)?;
            gate(report.passed != Some(false), "table1 cell")
        }
        Command::Ablation => {
            let report = run::run_batch_ablation(cfg, &dir)?;
            print_json(&json!({ "rows": report.rows, "decreasing": report.decreasing }))?;
            gate(report.decreasing != Some(false), "batch ablation")
        }
        Command::PricingSuite => {
            let rows = run::run_pricing_suite(cfg, &dir)?;
            print_json(&rows)?;
            gate(rows.iter().all(|r| r.passed), "pricing suite")
        }
        Command::Selftest { skip_determinism } => {
            let mut results = selftest::run_numeric();
            if !skip_determinism {
                results.push(determinism(cfg, &dir.path("determinism")));
            }
            for r in &results {
                println!("{} {} {}: {}", if r.passed { "PASS" } else { "FAIL" }, r.id, r.name, r.detail);
            }
            dir.write_report("selftest.json", &json!({ "results": results }))?;
            gate(results.iter().all(|r| r.passed), "selftest")
        }
        Command::Compare { .. } => unreachable!("handled before config resolution"),
    }
}

/// Every output-producing command except `selftest`, each run twice on
/// `cfg` and compared byte for byte.
pub fn determinism(cfg: &ExperimentConfig, root: &Path) -> selftest::PropertyResult {
    const COMMANDS: &[&str] = &["pretrain", "baseline", "evolve", "price", "table1", "ablation", "pricing-suite"];
    selftest::determinism(root, COMMANDS, |name, out| {
        let command = match name {
            "pretrain" => Command::Pretrain,
            "baseline" => Command::Baseline,
            "evolve" => Command::Evolve { checkpoint: None },
            "price" => Command::Price(PriceArgs {
                method: Method::Vmc,
                ..PriceArgs::default()
            }),
            "table1" => Command::Table1,
            "ablation" => Command::Ablation,
            "pricing-suite" => Command::PricingSuite,
            other => unreachable!("unknown command {other}"),
        };
        let mut c = cfg.clone();
        c.output_dir = out.to_path_buf();
        // Gates are not what is being checked here.
        match execute_with(&c, &command) {
            Err(CliError::Validation(msg)) if msg.contains("tolerance gate") => Ok(()),
            other => other,
        }
    })
}
