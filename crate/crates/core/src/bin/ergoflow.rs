use clap::{Args, Parser, Subcommand};
use ergoflow::harness::{run, ExperimentConfig, ExperimentKind, RunRecord};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "ergoflow", version, about = "Empirical-measure experiments for time-weighted diffusions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Renormalized W₂² against the limit constants
    Limits(Common),
    /// Log-log slope of the Sobolev proxy over the horizon grid
    Scaling(Common),
    /// Monte Carlo norms against the stationary oracles
    OracleCheck(Common),
    /// Four-dimensional log-correction constant
    D4Constant(Common),
    /// Transport solver and bound oracles (JSON report)
    TransportSelftest(Common),
    /// W₂² between regularized and raw empirical measures
    RegularizationGap(Common),
    /// Sup-norm fluctuations of the regularized density
    Fluctuation(Common),
    /// Enumerated modes of a spectral model
    SpectralTable(SpectralArgs),
}

#[derive(Args, Clone)]
struct Common {
    /// Flat `key = value` config file
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    #[arg(long, value_name = "U64")]
    seed: Option<u64>,
    #[arg(long, value_name = "N")]
    replicas: Option<usize>,
    /// CSV output
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
    /// JSON run record
    #[arg(long, value_name = "PATH")]
    json: Option<PathBuf>,
    #[arg(long, value_name = "N")]
    workers: Option<usize>,
    /// Extra `key=value` overrides, applied after the file
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Args, Clone)]
struct SpectralArgs {
    #[command(flatten)]
    common: Common,
    /// Add h̄, g and trace-ratio tables of order THETA to the JSON record
    #[arg(long, value_name = "THETA")]
    sums: Option<f64>,
}

fn build(kind: ExperimentKind, c: &Common) -> ergoflow::Result<ExperimentConfig> {
    let mut cfg = match &c.config {
        Some(p) => ExperimentConfig::from_file(kind, p)?,
        None => ExperimentConfig::defaults(kind),
    };
    for kv in &c.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| ergoflow::Error::Config(format!("--set expects KEY=VALUE, got '{kv}'")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    if let Some(n) = c.replicas {
        cfg.replicas = n;
    }
    if let Some(w) = c.workers {
        cfg.workers = Some(w);
    }
    if c.out.is_some() {
        cfg.out = c.out.clone();
    }
    if c.json.is_some() {
        cfg.json = c.json.clone();
    }
    Ok(cfg)
}

fn emit(cfg: &ExperimentConfig, rec: &RunRecord) -> ergoflow::Result<()> {
    let json_only = cfg.experiment == ExperimentKind::TransportSelftest;
    match &cfg.out {
        Some(p) if !json_only => rec.write_csv(p)?,
        None if !json_only => print!("{}", rec.csv()),
        _ => {}
    }
    match &cfg.json {
        Some(p) => rec.write_json(p)?,
        None if json_only => println!("{}", serde_json::to_string_pretty(rec)?),
        None => {}
    }
    for a in &rec.assertions {
        eprintln!("{} {}: {}", if a.passed { "PASS" } else { "FAIL" }, a.name, a.detail);
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (kind, common, sums) = match &cli.command {
        Command::Limits(c) => (ExperimentKind::Limits, c, None),
        Command::Scaling(c) => (ExperimentKind::Scaling, c, None),
        Command::OracleCheck(c) => (ExperimentKind::OracleCheck, c, None),
        Command::D4Constant(c) => (ExperimentKind::D4Constant, c, None),
        Command::TransportSelftest(c) => (ExperimentKind::TransportSelftest, c, None),
        Command::RegularizationGap(c) => (ExperimentKind::RegularizationGap, c, None),
        Command::Fluctuation(c) => (ExperimentKind::Fluctuation, c, None),
        Command::SpectralTable(s) => (ExperimentKind::SpectralTable, &s.common, s.sums),
    };
    let result = build(kind, common).and_then(|mut cfg| {
        if sums.is_some() {
            cfg.sums = sums;
        }
        let rec = run(&cfg)?;
        emit(&cfg, &rec)?;
        Ok(rec.all_passed())
    });
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
