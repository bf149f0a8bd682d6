use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use safeset_cli::commands::{
    cmd_baselines, cmd_characterize, cmd_consensus, cmd_oracle_check, cmd_slice, cmd_validate, median,
};
use safeset_cli::{CliError, ExperimentSpec, SliceSpec};
use safeset_core::RateEstimate;

#[derive(Parser)]
#[command(name = "safeset", version, about = "Sampling-based safe-set characterization experiments")]
struct Cli {
    /// TOML experiment file. Defaults reproduce the reduced two-robot study.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Override a config value, e.g. `--set schedule.eps=[0.1,0.01]`.
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE", global = true)]
    overrides: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the decay loop and write the safe set, stage history and audit log.
    Characterize,
    /// Re-check a characterized safe set with fresh runs.
    Validate,
    /// Render a position-plane slice at fixed velocities.
    Slice {
        /// v0x,v0y,v1x,v1y
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true, required = true)]
        velocities: Vec<f64>,
        #[arg(long, default_value_t = 120)]
        resolution: usize,
    },
    /// Monte Carlo, importance sampling and derived failure rates.
    Baselines,
    /// Compare the cbf and pred policies over matched seeds.
    Consensus,
    /// Compare the quantifier with brute-force oracles on the toy systems.
    OracleCheck,
}

fn run(cli: Cli) -> Result<i32, CliError> {
    let mut overrides = cli.overrides;
    if let Some(seed) = cli.seed {
        overrides.push(format!("experiment.seed={seed}"));
    }
    if let Some(out) = &cli.out {
        overrides.push(format!("output.dir={:?}", out.display().to_string()));
    }
    let spec = ExperimentSpec::load(cli.config.as_deref(), &overrides)?;
    match cli.command {
        Command::Characterize => {
            let r = cmd_characterize(&spec)?;
            println!("cardinality {}", r.cardinality);
            match &r.achieved {
                Some(a) => println!("achieved eps {} beta {} delta {:?}", a.eps, a.beta, a.delta),
                None => println!("achieved none"),
            }
            println!("runs {}", r.runs);
            println!("termination {:?}", r.termination);
            println!("derived_failure_rate {:.6}", r.derived_failure_rate);
            Ok(r.exit_code())
        }
        Command::Validate => {
            let r = cmd_validate(&spec)?;
            println!("runs {} failures {} escapes {} pass {}", r.runs, r.failures, r.escapes, r.pass);
            if r.pass {
                Ok(0)
            } else {
                Err(CliError::Check(format!("{} of {} validation runs failed", r.failures, r.runs)))
            }
        }
        Command::Slice { velocities, resolution } => {
            let velocities: [f64; 4] = velocities
                .try_into()
                .map_err(|_| CliError::Config("--velocities needs four values".into()))?;
            let slice = SliceSpec { velocities, resolution };
            let s = cmd_slice(&spec, slice)?;
            println!("{}", slice.stem());
            for (name, side) in [("receding", s.receding), ("approaching", s.approaching)] {
                println!(
                    "{name}: cells {} band {} unsafe beyond h=0 {} ({:.1}% of band)",
                    side.cells,
                    side.band,
                    side.unsafe_beyond_contour,
                    100.0 * side.ratio()
                );
            }
            Ok(0)
        }
        Command::Baselines => {
            let rows = cmd_baselines(&spec)?;
            println!("{}", RateEstimate::csv_header());
            for r in rows {
                println!("{}", r.csv_row());
            }
            Ok(0)
        }
        Command::Consensus => {
            let r = cmd_consensus(&spec)?;
            println!("stage,eps,mean_cardinality_cbf,mean_cardinality_pred");
            for s in &r.stages {
                println!("{},{},{:.1},{:.1}", s.stage, s.eps, s.mean_cardinality_cbf, s.mean_cardinality_pred);
            }
            for (seed, d) in r.seeds.iter().zip(&r.distances) {
                println!("seed {seed} distance {d:.5}");
            }
            println!("median runs cbf {} pred {}", median(&r.runs_cbf), median(&r.runs_pred));
            Ok(r.exit_code())
        }
        Command::OracleCheck => {
            let checks = cmd_oracle_check(&spec)?;
            let mut bad = 0;
            for c in &checks {
                println!(
                    "{} {} seed {}: {} cells vs oracle {}",
                    if c.matches { "PASS" } else { "FAIL" },
                    c.toy,
                    c.seed,
                    c.quantified,
                    c.oracle
                );
                bad += !c.matches as usize;
            }
            if bad > 0 {
                Err(CliError::Check(format!("{bad} of {} oracle checks mismatched", checks.len())))
            } else {
                Ok(0)
            }
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            // usage errors are config errors; 2 is reserved for failed checks
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
