use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use cl_lincov_cli::{cmd_lincov, cmd_mc, cmd_plan, cmd_validate, load_scenario, CliResult, Overrides};

#[derive(Parser)]
#[command(name = "cl-lincov", version, about = "Closed-loop linear covariance analysis and chance-constrained planning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compare LinCov against a Monte Carlo ensemble
    Validate(Common),
    /// Propagate the covariance along the scenario's nominal
    Lincov(Common),
    /// Run the Monte Carlo ensemble only
    Mc(Common),
    /// Plan a path through the obstacle field
    Plan(Common),
}

#[derive(Args)]
struct Common {
    /// scenario JSON file
    #[arg(long)]
    scenario: PathBuf,
    /// directory for the written artifacts
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Monte Carlo run count
    #[arg(long)]
    runs: Option<usize>,
    /// master seed for Monte Carlo and planning
    #[arg(long)]
    seed: Option<u64>,
    /// collision probability threshold for `plan`
    #[arg(long)]
    threshold: Option<f64>,
    /// RRT iteration budget for `plan`
    #[arg(long)]
    iterations: Option<usize>,
    /// accepted relative σ deviation for `validate`
    #[arg(long)]
    tolerance: Option<f64>,
}

impl Common {
    fn overrides(&self) -> Overrides {
        Overrides {
            runs: self.runs,
            seed: self.seed,
            threshold: self.threshold,
            iterations: self.iterations,
            tolerance: self.tolerance,
        }
    }
}

fn run(cli: Cli) -> CliResult<bool> {
    match cli.command {
        Command::Validate(c) => {
            let sc = load_scenario(&c.scenario, &c.overrides())?;
            let s = cmd_validate(&sc, &c.out)?;
            for st in &s.comparison.states {
                println!(
                    "{:8} within {:5.1}%  max |ratio-1| {:.3}  {}",
                    st.name,
                    100.0 * st.fraction,
                    st.max_deviation,
                    if st.passed { "pass" } else { "FAIL" }
                );
            }
            println!("{}", if s.passed { "validation passed" } else { "validation failed" });
            Ok(s.passed)
        }
        Command::Lincov(c) => {
            let sc = load_scenario(&c.scenario, &c.overrides())?;
            let s = cmd_lincov(&sc, &c.out)?;
            println!(
                "{} steps, {:.2} s; terminal position σ {:.3} / {:.3} m",
                s.steps, s.duration, s.terminal_position_sigma[0], s.terminal_position_sigma[1]
            );
            Ok(s.health.all_ok)
        }
        Command::Mc(c) => {
            let sc = load_scenario(&c.scenario, &c.overrides())?;
            let s = cmd_mc(&sc, &c.out)?;
            println!(
                "{} runs; terminal position σ {:.3} / {:.3} m",
                s.runs, s.terminal_position_sigma[0], s.terminal_position_sigma[1]
            );
            Ok(true)
        }
        Command::Plan(c) => {
            let sc = load_scenario(&c.scenario, &c.overrides())?;
            let s = cmd_plan(&sc, &c.out)?;
            match &s.path {
                Some(p) => {
                    let worst = p.max_probability.iter().cloned().fold(0.0, f64::max);
                    println!(
                        "path with {} waypoints, {:.2} s; max collision probability {:.3e} (threshold {})",
                        p.waypoints.len(),
                        p.total_dt,
                        worst,
                        s.threshold
                    );
                }
                None => println!("no path found"),
            }
            Ok(s.succeeded())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
