//! Monte Carlo NMSE sweeps from the command line.
//!
//! Exit codes: 0 success, 1 configuration or I/O error, 2 numerical failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use ris_cascade::harness::{sweep, write_outputs, Estimator, Mode, ScenarioConfig};
use ris_cascade::Error;

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Switch {
    On,
    Off,
}

impl Switch {
    fn enabled(self) -> bool {
        matches!(self, Switch::On)
    }
}

#[derive(Debug, Parser)]
#[command(name = "simulate", version, about = "NMSE sweeps for RIS cascaded channel estimators")]
struct Args {
    /// Scenario file (TOML). Omitted keys take the reference defaults.
    #[arg(long)]
    config: Option<PathBuf>,

    /// blocks | angle
    #[arg(long)]
    mode: Option<String>,

    #[arg(long)]
    trials: Option<usize>,

    #[arg(long)]
    seed: Option<u64>,

    #[arg(long, default_value = "results")]
    out: PathBuf,

    /// Comma-separated subblock counts, e.g. 2,4,6
    #[arg(long, value_delimiter = ',')]
    t_list: Option<Vec<usize>>,

    /// Comma-separated angle-error variances (rad²)
    #[arg(long, value_delimiter = ',')]
    delta2_list: Option<Vec<f64>>,

    /// Comma-separated subset of ls,lmmse,vi-s,vi-laplace
    #[arg(long, value_delimiter = ',')]
    estimators: Option<Vec<String>>,

    #[arg(long, value_enum)]
    fast_path: Option<Switch>,

    /// Fill the wall_ms column (makes output run-dependent)
    #[arg(long, value_enum)]
    timing: Option<Switch>,

    /// Worker threads, 0 for all cores
    #[arg(long)]
    threads: Option<usize>,
}

fn resolve(args: &Args) -> Result<ScenarioConfig, Error> {
    let mut cfg = match &args.config {
        Some(path) => ScenarioConfig::load(path)?,
        None => ScenarioConfig::default(),
    };
    let sw = &mut cfg.sweep;
    if let Some(m) = &args.mode {
        sw.mode = m.parse::<Mode>()?;
    }
    if let Some(n) = args.trials {
        sw.trials = n;
    }
    if let Some(s) = args.seed {
        sw.seed = s;
    }
    if let Some(t) = &args.t_list {
        sw.t_list = t.clone();
    }
    if let Some(d) = &args.delta2_list {
        sw.delta2_list = d.clone();
    }
    if let Some(list) = &args.estimators {
        sw.estimators = list.iter().map(|s| s.parse::<Estimator>()).collect::<Result<_, _>>()?;
    }
    if let Some(f) = args.fast_path {
        sw.fast_path = f.enabled();
    }
    if let Some(t) = args.timing {
        sw.timing = t.enabled();
    }
    if let Some(n) = args.threads {
        sw.threads = n;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn main() -> ExitCode {
    let args = match Args::try_parse() {
        Ok(a) => a,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let cfg = match resolve(&args) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    let result = sweep(&cfg).and_then(|out| {
        write_outputs(&args.out, &cfg, &out)?;
        Ok(out)
    });
    match result {
        Ok(out) => {
            for row in &out.aggregates {
                eprintln!(
                    "{} T={} delta2={} {:<10} mean_nmse={:.4e} median_nmse={:.4e}",
                    row.mode, row.t, row.delta2, row.estimator, row.mean_nmse, row.median_nmse
                );
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numerical() { 2 } else { 1 })
        }
    }
}
