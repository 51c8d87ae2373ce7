use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use sedcode::channel::{ChannelParams, Seed};
use sedcode::codec::TrialOptions;
use sedcode::harness::{self, CsvSink, ExperimentConfig, ResultDocument};
use sedcode::oracle;
use sedcode::partition::PartitionPolicy;
use sedcode::stopping::{StopRule, ThresholdMode};

/// Sequential feedback coding over the binary symmetric channel.
#[derive(Parser, Debug)]
#[command(name = "sedcode", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate a single point.
    Run(GridArgs),
    /// Simulate every combination of the listed values.
    Sweep(GridArgs),
    /// Check the grouped engine against brute-force posterior tracking.
    Oracle(OracleArgs),
}

/// Flags mirror the configuration file keys, with `-` for `_`.
#[derive(Args, Debug, Default)]
struct GridArgs {
    /// TOML file with experiment settings; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Start from a named grid: fig2, fig3, fig4, fig5.
    #[arg(long)]
    preset: Option<String>,
    #[arg(long, value_delimiter = ',')]
    k: Vec<usize>,
    #[arg(long)]
    p: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    epsilon: Vec<f64>,
    #[arg(long, value_delimiter = ',')]
    policy: Vec<PartitionPolicy>,
    #[arg(long, value_delimiter = ',', alias = "threshold-mode")]
    mode: Vec<ThresholdMode>,
    #[arg(long, value_delimiter = ',')]
    compaction: Vec<bool>,
    #[arg(long)]
    low_watermark: Option<f64>,
    #[arg(long)]
    high_watermark_factor: Option<f64>,
    #[arg(long)]
    trials: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (0 = all cores).
    #[arg(long)]
    workers: Option<usize>,
    /// CSV output path; a JSON mirror is written next to it.
    #[arg(long)]
    output: Option<PathBuf>,
    /// CSV of reference points (blocklength, rate[, label]) copied into the JSON output.
    #[arg(long)]
    overlay: Option<PathBuf>,
    /// Record nanoseconds per transmission (makes output machine-dependent).
    #[arg(long)]
    timing: bool,
    #[arg(long)]
    max_transmissions: Option<usize>,
}

#[derive(Args, Debug)]
struct OracleArgs {
    /// Largest message length; every k from 1 up to it is checked.
    #[arg(long, default_value_t = 8)]
    k_max: usize,
    #[arg(long, value_delimiter = ',', default_value = "0.05,0.2,0.45")]
    p: Vec<f64>,
    #[arg(long, default_value_t = 200)]
    trials: u64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 1e-3)]
    epsilon: f64,
    #[arg(long, value_delimiter = ',', default_value = "sed,relaxed")]
    policy: Vec<PartitionPolicy>,
    #[arg(long, default_value = "fixed")]
    mode: ThresholdMode,
    /// Largest allowed absolute posterior difference.
    #[arg(long, default_value_t = 1e-10)]
    tolerance: f64,
}

/// Failures caused by the user's input rather than by the simulation.
#[derive(Debug)]
struct ConfigError(String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

fn config_err(msg: impl Into<String>) -> anyhow::Error {
    ConfigError(msg.into()).into()
}

fn load_config(args: &GridArgs) -> anyhow::Result<ExperimentConfig> {
    let mut cfg = match (&args.preset, &args.config) {
        (Some(_), Some(_)) => return Err(config_err("--preset and --config are mutually exclusive")),
        (Some(name), None) => ExperimentConfig::preset(name).map_err(|e| config_err(e.to_string()))?,
        (None, Some(path)) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            toml::from_str(&text).map_err(|e| config_err(format!("{}: {e}", path.display())))?
        }
        (None, None) => ExperimentConfig::default(),
    };
    if !args.k.is_empty() {
        cfg.k = args.k.clone();
    }
    if let Some(p) = args.p {
        cfg.p = p;
    }
    if !args.epsilon.is_empty() {
        cfg.epsilon = args.epsilon.clone();
    }
    if !args.policy.is_empty() {
        cfg.policy = args.policy.clone();
    }
    if !args.mode.is_empty() {
        cfg.mode = args.mode.clone();
    }
    if !args.compaction.is_empty() {
        cfg.compaction = args.compaction.clone();
    }
    if let Some(v) = args.low_watermark {
        cfg.low_watermark = v;
    }
    if let Some(v) = args.high_watermark_factor {
        cfg.high_watermark_factor = v;
    }
    if let Some(v) = args.trials {
        cfg.trials = v;
    }
    if let Some(v) = args.seed {
        cfg.seed = v;
    }
    if let Some(v) = args.workers {
        cfg.workers = v;
    }
    if args.output.is_some() {
        cfg.output = args.output.clone();
    }
    if args.overlay.is_some() {
        cfg.overlay = args.overlay.clone();
    }
    cfg.timing |= args.timing;
    if args.max_transmissions.is_some() {
        cfg.max_transmissions = args.max_transmissions;
    }
    cfg.validate().map_err(|e| config_err(e.to_string()))?;
    Ok(cfg)
}

fn simulate(args: &GridArgs, single: bool) -> anyhow::Result<()> {
    let cfg = load_config(args)?;
    let points = cfg.points().map_err(|e| config_err(e.to_string()))?;
    if single && points.len() != 1 {
        return Err(config_err(format!("run takes exactly one point, got {}; use sweep for grids", points.len())));
    }
    let overlay = match &cfg.overlay {
        Some(path) => harness::read_overlay(path).map_err(|e| config_err(format!("{}: {e}", path.display())))?,
        None => Vec::new(),
    };
    let mut sink = cfg.output.as_deref().map(CsvSink::create).transpose()?;
    let mut done = Vec::new();
    let outcome = harness::sweep(&points, cfg.workers, |row| {
        done.push(row.clone());
        eprint!("\rpoint {}/{}", done.len(), points.len());
        match sink.as_mut() {
            Some(s) => s.push(row),
            None => Ok(()),
        }
    });
    eprintln!();
    if let Some(path) = &cfg.output {
        write_json_mirror(path, &cfg, &done, overlay)?;
    }
    print!("{}", harness::summary_table(&done));
    if let Ok(c) = ChannelParams::new(cfg.p) {
        println!("capacity at p = {}: {:.6} bits/use", cfg.p, c.capacity());
    }
    outcome?;
    Ok(())
}

fn write_json_mirror(csv: &Path, cfg: &ExperimentConfig, rows: &[harness::AggregateResult], overlay: Vec<harness::OverlayPoint>) -> anyhow::Result<()> {
    let doc = ResultDocument::new(cfg, rows.to_vec(), overlay);
    harness::write_json(&harness::json_path_for(csv), &doc)?;
    Ok(())
}

fn run_oracle(args: &OracleArgs) -> anyhow::Result<()> {
    if args.k_max == 0 || args.k_max > oracle::MAX_ORACLE_K {
        return Err(config_err(format!("--k-max must be in 1..={}", oracle::MAX_ORACLE_K)));
    }
    let stop = StopRule::new(args.epsilon, args.mode).map_err(|e| config_err(e.to_string()))?;
    let mut failed = 0;
    println!("{:>3} {:>5} {:>8} {:>7} {:>12} {:>12} {:>9} {}", "k", "p", "policy", "trials", "max |diff|", "imbalance", "mismatch", "status");
    for &p in &args.p {
        let params = ChannelParams::new(p).map_err(|e| config_err(e.to_string()))?;
        for &policy in &args.policy {
            let mut options = TrialOptions::new(policy, stop);
            options.verify = true;
            options.mirror = true;
            for k in 1..=args.k_max {
                let rep = oracle::validate(k, &params, &options, args.trials, Seed(args.seed))?;
                let ok = rep.passes(args.tolerance);
                failed += (!ok) as usize;
                println!(
                    "{:>3} {:>5} {:>8} {:>7} {:>12.3e} {:>12.3e} {:>9} {}",
                    k,
                    p,
                    policy.name(),
                    rep.trials,
                    rep.max_posterior_error,
                    rep.max_systematic_imbalance,
                    rep.decode_mismatches + rep.ambiguous_decodes,
                    if ok { "ok" } else { "FAIL" }
                );
            }
        }
    }
    if failed > 0 {
        bail!("{failed} oracle configurations failed");
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run(a) => simulate(a, true),
        Command::Sweep(a) => simulate(a, false),
        Command::Oracle(a) => run_oracle(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<ConfigError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
