use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use lieddp::bench::{compare_schemes, load_config, run, BenchError, BenchmarkConfig};
use lieddp::ddp::Scheme;

/// Solve the satellite attitude benchmark with Lie-group DDP.
#[derive(Debug, Parser)]
#[command(name = "lieddp", version)]
struct Cli {
    /// Benchmark configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory for trajectory.csv, iterations.csv and summary.json.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long)]
    scheme: Option<Scheme>,
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    max_iters: Option<usize>,
    /// Run all three schemes and write a comparison table.
    #[arg(long)]
    compare: bool,
}

fn apply_overrides(cli: &Cli, mut config: BenchmarkConfig) -> Result<BenchmarkConfig, BenchError> {
    if let Some(scheme) = cli.scheme {
        config.scheme = scheme;
    }
    if let Some(sigma) = cli.sigma {
        config.sigma = sigma;
    }
    if let Some(tol) = cli.tol {
        config.tol = tol;
    }
    if let Some(max_iters) = cli.max_iters {
        config.max_iters = max_iters;
    }
    config.validate()?;
    Ok(config)
}

fn execute(cli: &Cli) -> Result<bool, BenchError> {
    let config = apply_overrides(cli, load_config(&cli.config)?)?;
    if cli.compare {
        let comparison = compare_schemes(&config, &cli.out)?;
        let mut all = true;
        for (scheme, artifacts) in &comparison.runs {
            let s = &artifacts.summary;
            println!(
                "{scheme:>6}: converged={} iterations={} J={:.10e} max|Qu|={:.3e}",
                s.converged, s.iterations, s.final_cost, s.max_qu_norm
            );
            all &= s.converged;
        }
        println!("comparison written to {}", comparison.table_path.display());
        Ok(all)
    } else {
        let artifacts = run(&config, &cli.out)?;
        println!("{}", serde_json::to_string_pretty(&artifacts.summary)?);
        Ok(artifacts.summary.converged)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(if err.is_config_error() { 1 } else { 2 })
        }
    }
}
