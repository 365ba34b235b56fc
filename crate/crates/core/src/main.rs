use alltimeot::harness::{emit_tables, run_experiment, ExperimentConfig, Suite};
use clap::Parser;
use std::path::PathBuf;
use std::process::ExitCode;

/// Run one of the reproduction suites and write CSV tables plus a JSON
/// manifest.
#[derive(Parser, Debug)]
#[command(name = "alltimeot", version)]
struct Cli {
    /// exp1 | exp2 | exp3 | exp4 | exp5 | stochastic | sensitivity | dimscan | baselines
    experiment: String,
    /// TOML config; defaults to the built-in preset for the experiment.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Replace the seed list with this single master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Dotted-key override, e.g. `sampling.m=30` or `methods.0.optimizer.max_iter=50`.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Print the resolved config and exit.
    #[arg(long)]
    print_config: bool,
}

fn run(cli: Cli) -> alltimeot::Result<bool> {
    let suite = Suite::parse(&cli.experiment)?;
    let mut config = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::preset(suite),
    };
    if config.experiment != suite {
        return Err(alltimeot::Error::Config(format!(
            "config is for '{}', command asked for '{}'",
            config.experiment.name(),
            suite.name()
        )));
    }
    for o in &cli.overrides {
        config.apply_override(o)?;
    }
    if let Some(seed) = cli.seed {
        config.seeds = vec![seed];
    }
    if let Some(out) = cli.out {
        config.output.dir = out;
    }
    if cli.print_config {
        print!("{}", config.to_toml()?);
        return Ok(true);
    }
    let report = run_experiment(&config)?;
    let files = emit_tables(&report, &config.output.dir)?;
    for m in &report.methods {
        let drift = m.drift().map_or("-".into(), |d| format!("{:.4}", d.total));
        let w2 = m.metrics.mean_w2.map_or("-".into(), |w| format!("{w:.4}"));
        let sw2 = if m.metrics.rows.is_empty() {
            "-".into()
        } else {
            format!("{:.4}", m.metrics.mean_sw2)
        };
        let mmd = if m.metrics.rows.is_empty() {
            "-".into()
        } else {
            format!("{:.4}", m.metrics.mean_mmd)
        };
        println!(
            "{:<16} seed {:<20} drift MSE {:>9}  mean W2 {:>7}  mean SW2 {:>7}  mean MMD {:>7}",
            m.method, m.seed, drift, w2, sw2, mmd
        );
    }
    for r in &report.sweep {
        println!(
            "{:<7} {:>10}  MSE {:.4} ± {:.4}  ({:.2} s)",
            r.param, r.value, r.mse_mean, r.mse_std, r.time_s
        );
    }
    for r in &report.dims {
        println!(
            "d = {:<3} total MSE {:.4} ± {:.4}  per-component {:.4}  ({:.2} s, {:.1} iterations)",
            r.d,
            r.mse_total_mean,
            r.mse_total_std,
            r.mse_per_component_mean,
            r.time_s,
            r.iterations_mean
        );
    }
    for f in &report.failures {
        eprintln!(
            "failed: stage {} / {} / seed {}: {}",
            f.stage, f.method, f.seed, f.message
        );
    }
    println!(
        "wrote {} ({:.1} s)",
        files.manifest.display(),
        report.wall_s
    );
    Ok(report.complete)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
