use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use fracsir_core::oracle::{format_table, run_oracles};
use fracsir_core::scenario::scenario_to_toml;
use fracsir_core::{load_scenario, preset_table2, run_scenario, Error, Scenario};

/// Fractional-order SIR model with p-Laplacian diffusion and optimal vaccination.
#[derive(Parser)]
#[command(name = "fracsir", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate every (alpha, p) entry and write heatmaps, totals and metadata.
    Run(RunArgs),
    /// Check a configuration without solving anything.
    Validate {
        #[command(flatten)]
        source: Source,
        /// Print the fully resolved configuration as TOML.
        #[arg(long)]
        print: bool,
    },
    /// Run the reference checks and print a pass/fail table.
    Oracle,
}

#[derive(Args)]
struct Source {
    /// TOML configuration; unspecified keys take preset values.
    #[arg(long, value_name = "PATH", conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Built-in scenario.
    #[arg(long, value_enum)]
    preset: Option<Preset>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Table2,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    source: Source,
    /// Fractional orders, comma separated.
    #[arg(long, value_delimiter = ',', value_name = "LIST")]
    alpha: Option<Vec<f64>>,
    /// Diffusion exponents, comma separated.
    #[arg(long, value_delimiter = ',', value_name = "LIST")]
    p: Option<Vec<f64>>,
    /// Optimize the vaccination rate.
    #[arg(long, value_name = "BOOL", num_args = 0..=1, default_missing_value = "true")]
    vaccinate: Option<bool>,
    /// Output directory.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    #[arg(long)]
    dt: Option<f64>,
    /// Control cost weight.
    #[arg(long)]
    eta: Option<f64>,
    #[arg(long, value_name = "INT")]
    max_iters: Option<usize>,
    /// Relative tolerance of the sweep convergence test.
    #[arg(long)]
    tolerance: Option<f64>,
    /// Snapshot days, comma separated.
    #[arg(long, value_delimiter = ',', value_name = "LIST")]
    snapshots: Option<Vec<f64>>,
    /// Also write PGM images.
    #[arg(long)]
    pgm: bool,
}

impl Source {
    fn load(&self) -> fracsir_core::Result<Scenario> {
        match (&self.config, self.preset) {
            (Some(path), _) => load_scenario(path),
            (None, Some(Preset::Table2)) | (None, None) => Ok(preset_table2()),
        }
    }
}

impl RunArgs {
    fn scenario(&self) -> fracsir_core::Result<Scenario> {
        let mut s = self.source.load()?;
        if let Some(v) = &self.alpha {
            s.alphas = v.clone();
        }
        if let Some(v) = &self.p {
            s.ps = v.clone();
        }
        if let Some(v) = self.vaccinate {
            s.vaccinate = v;
        }
        if let Some(v) = &self.out {
            s.output = v.clone();
        }
        if let Some(v) = self.dt {
            s.params.dt = v;
        }
        if let Some(v) = self.eta {
            s.params.eta = v;
        }
        if let Some(v) = self.max_iters {
            s.sweep.max_iterations = v;
        }
        if let Some(v) = self.tolerance {
            s.sweep.tolerance = v;
        }
        if let Some(v) = &self.snapshots {
            s.snapshots = v.clone();
        }
        s.pgm |= self.pgm;
        s.validate()?;
        Ok(s)
    }
}

fn exit_code(e: &Error) -> u8 {
    if e.is_instability() {
        3
    } else if matches!(e, Error::Validation { .. } | Error::Parse { .. }) {
        2
    } else {
        1
    }
}

fn run(cli: Cli) -> fracsir_core::Result<ExitCode> {
    match cli.command {
        Command::Run(args) => {
            let scenario = args.scenario()?;
            for r in run_scenario(&scenario)? {
                let [s, i, rec] = r.final_totals;
                let sweep = match (r.converged, r.iterations) {
                    (Some(c), Some(n)) => format!(" converged={c} iterations={n}"),
                    _ => String::new(),
                };
                println!(
                    "alpha={} p={} J={:.6e} final S={s:.1} I={i:.1} R={rec:.1}{sweep} -> {}",
                    r.alpha,
                    r.p,
                    r.objective,
                    r.directory.display()
                );
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Validate { source, print } => {
            let scenario = source.load()?;
            if print {
                print!("{}", scenario_to_toml(&scenario));
            } else {
                println!("configuration is valid ({} runs)", scenario.jobs().len());
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Oracle => {
            let checks = run_oracles()?;
            print!("{}", format_table(&checks));
            Ok(if checks.iter().all(|c| c.passed()) {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            })
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
