use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use ferroflow_core::config::{parse_config, Preset, RunConfig, Scale};
use ferroflow_core::experiments::{run, RunOutcome};
use ferroflow_core::validation::convergence_study;

#[derive(Parser)]
#[command(name = "ferroflow", version, about = "Ferrofluid flow simulations")]
struct Cli {
    /// More log output (repeat for more).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    /// Output directory; overrides the one in the configuration.
    #[arg(long, env = "FERROFLOW_OUTPUT_DIR", global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a TOML configuration file.
    Run { config: PathBuf },
    /// Run a built-in experiment.
    Preset {
        name: Preset,
        #[arg(long, default_value = "desk")]
        scale: Scale,
        /// Print the configuration instead of running it.
        #[arg(long)]
        print: bool,
    },
    /// Manufactured-solution convergence study.
    Validate {
        #[arg(long, default_value = "desk")]
        scale: Scale,
        /// Required observed order for every field.
        #[arg(long, default_value_t = 1.8)]
        min_order: f64,
    },
}

fn report(outcome: &RunOutcome) -> bool {
    println!("{}: {} steps of {} in {:.1} s", outcome.name, outcome.steps, outcome.tau, outcome.seconds);
    if let Some(e) = &outcome.errors {
        println!(
            "  max L2 errors: u {:.3e}, w {:.3e}, m {:.3e}, h {:.3e}",
            e.velocity, e.spin, e.magnetization, e.field
        );
    }
    for m in &outcome.monitors {
        println!("  [{}] {}: {}", if m.passed { "pass" } else { "FAIL" }, m.name, m.detail);
    }
    outcome.passed()
}

fn run_config(cfg: &RunConfig, out: Option<&Path>) -> Result<bool> {
    let dir = out.map(Path::to_path_buf).unwrap_or_else(|| cfg.output.dir.join(&cfg.name));
    let outcome = run(cfg, Some(&dir)).with_context(|| format!("run `{}` failed", cfg.name))?;
    println!("output written to {}", dir.display());
    Ok(report(&outcome))
}

fn validate(scale: Scale, min_order: f64) -> Result<bool> {
    let levels = Preset::validation_levels(scale);
    let study = convergence_study(&levels, Preset::VALIDATION_T_FINAL, 2)?;
    println!("{:>6} {:>10} {:>12} {:>12} {:>12} {:>12}", "n", "tau", "u", "w", "m", "grad phi");
    for l in &study.levels {
        let e = &l.errors;
        println!(
            "{:>6} {:>10.3e} {:>12.4e} {:>12.4e} {:>12.4e} {:>12.4e}",
            l.cells_per_side, l.tau, e.velocity, e.spin, e.magnetization, e.field
        );
    }
    println!("orders:");
    for i in 0..study.velocity_orders.len() {
        println!(
            "{:>6} {:>10} {:>12.3} {:>12.3} {:>12.3} {:>12.3}",
            format!("{}->{}", study.levels[i].cells_per_side, study.levels[i + 1].cells_per_side),
            "",
            study.velocity_orders[i],
            study.spin_orders[i],
            study.magnetization_orders[i],
            study.field_orders[i]
        );
    }
    let ok = study.min_order() >= min_order;
    println!("[{}] smallest observed order {:.3} (required {min_order})", if ok { "pass" } else { "FAIL" }, study.min_order());
    Ok(ok)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        2 => "debug",
        _ => "trace",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let result = match cli.command {
        Command::Run { config } => std::fs::read_to_string(&config)
            .with_context(|| format!("cannot read {}", config.display()))
            .and_then(|text| parse_config(&text).with_context(|| format!("in {}", config.display())))
            .and_then(|cfg| run_config(&cfg, cli.out.as_deref())),
        Command::Preset { name: Preset::Validation, scale, print: false } => validate(scale, 1.8),
        Command::Preset { name, scale, print } => {
            let cfg = name.config(scale);
            if print {
                print!("{}", cfg.to_toml());
                Ok(true)
            } else {
                run_config(&cfg, cli.out.as_deref())
            }
        }
        Command::Validate { scale, min_order } => validate(scale, min_order),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
