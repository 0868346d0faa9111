use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand, ValueEnum};

use qrlab::coverage::empirical_coverage;
use qrlab::erm::{fit_subgradient, Dataset, FitConfig, Optimizer, QuantileFit, Schedule};
use qrlab::experiments::{
    self, parse_noise_spec, resolve_parallelism, ConfigMap, OverparamConfig, PseudoConfig, SweepConfig,
};
use qrlab::theory::{solve_system, SolveOpts, TheorySolution};
use qrlab::{Error, QuadratureSpec, QuantileLevel};

#[derive(Parser)]
#[command(name = "qrlab", version, about = "Coverage of high-dimensional linear quantile regression")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ScheduleArg {
    Step,
    InverseSqrt,
}

#[derive(Clone, Copy, ValueEnum)]
enum OptimizerArg {
    FullBatch,
    MomentumSgd,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModelArg {
    Linear,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the fixed-point system and print one CSV row.
    Theory {
        #[arg(long)]
        alpha: f64,
        #[arg(long)]
        kappa: f64,
        /// `standard`, `steep_shoulder`, `gaussian:MEAN:VAR` or
        /// `mixture:W:MEAN:VAR,...`.
        #[arg(long, default_value = "standard")]
        noise: String,
        #[arg(long, default_value_t = 1e-10)]
        tol: f64,
        #[arg(long, default_value_t = QuadratureSpec::default().nodes)]
        quad_nodes: usize,
        /// Print the CSV header first.
        #[arg(long)]
        header: bool,
    },
    /// Fit a quantile regression to a CSV (last column is the label).
    Fit {
        #[arg(long)]
        csv: PathBuf,
        #[arg(long)]
        alpha: f64,
        #[arg(long, value_enum, default_value = "linear")]
        model: ModelArg,
        #[arg(long, value_enum, default_value = "step")]
        schedule: ScheduleArg,
        /// Initial step size for the step schedule.
        #[arg(long, default_value_t = 0.01)]
        lr: f64,
        /// Step size is `beta / sqrt(t + 1)` for the inverse-sqrt schedule.
        #[arg(long, default_value_t = 0.1)]
        beta: f64,
        #[arg(long, default_value_t = 50_000)]
        max_steps: usize,
        #[arg(long, value_enum, default_value = "full-batch")]
        optimizer: OptimizerArg,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Fraction of rows held out for the test coverage.
        #[arg(long, default_value_t = 0.2)]
        test_fraction: f64,
        /// Write the fitted parameters here.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Empirical coverage of a saved fit on a labelled CSV.
    Coverage {
        #[arg(long)]
        fit: PathBuf,
        #[arg(long)]
        test: PathBuf,
    },
    /// Coverage sweep over an (alpha, kappa) grid.
    Sweep {
        #[arg(long)]
        config: PathBuf,
    },
    /// Minimum-norm interpolation with d >> n.
    Overparam {
        #[arg(long)]
        d: usize,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        seeds: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "standard")]
        noise: String,
        #[arg(long, default_value = "overparam.csv")]
        output: PathBuf,
    },
    /// True-label versus pseudo-label coverage on a tabular CSV.
    Pseudo {
        #[arg(long)]
        csv: PathBuf,
        #[arg(long)]
        config: PathBuf,
    },
    /// Intercept bias of the fitted model against its theoretical value.
    Bias {
        #[arg(long)]
        config: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.chain().find_map(|e| e.downcast_ref::<Error>()) {
        Some(Error::Config(_) | Error::Domain(_)) => 2,
        Some(e) if e.is_data_error() => 3,
        _ => 1,
    }
}

fn run(command: Command) -> anyhow::Result<()> {
    match command {
        Command::Theory { alpha, kappa, noise, tol, quad_nodes, header } => {
            let noise = parse_noise_spec(&noise)?;
            let opts = SolveOpts { tol, quad: QuadratureSpec::new(quad_nodes)?, ..SolveOpts::default() };
            let sol = solve_system(alpha, kappa, &noise, &opts)?;
            if header {
                println!("{}", TheorySolution::CSV_HEADER);
            }
            println!("{}", sol.csv_row());
        }
        Command::Fit { csv, alpha, model: ModelArg::Linear, schedule, lr, beta, max_steps, optimizer, seed, test_fraction, output } => {
            let level = QuantileLevel::new(alpha)?;
            let data = Dataset::from_csv(&csv)?;
            let (train, test) = data.train_test_split(test_fraction, seed, 0)?;
            let base = FitConfig::default();
            let cfg = FitConfig {
                schedule: match schedule {
                    ScheduleArg::Step => match base.schedule {
                        Schedule::StepDecay { decay_factor, decay_at, .. } => {
                            Schedule::StepDecay { initial_lr: lr, decay_factor, decay_at }
                        }
                        other => other,
                    },
                    ScheduleArg::InverseSqrt => Schedule::InverseSqrt { beta },
                },
                max_steps,
                optimizer: match optimizer {
                    OptimizerArg::FullBatch => Optimizer::FullBatch,
                    OptimizerArg::MomentumSgd => FitConfig::tabular().optimizer,
                },
                seed,
                ..base
            };
            let fit = fit_subgradient(&train, level, &cfg)?;
            let table = fit.to_csv_string();
            print!("{table}");
            println!("train_coverage,{}", empirical_coverage(&fit, &train)?);
            println!("test_coverage,{}", empirical_coverage(&fit, &test)?);
            println!("final_risk,{}", fit.final_risk);
            println!("converged,{}", fit.converged);
            if let Some(path) = output {
                experiments::write_atomic(&path, &table)?;
            }
        }
        Command::Coverage { fit, test } => {
            let fit = QuantileFit::read_csv(&fit)?;
            let test = Dataset::from_csv(&test)?;
            if test.d() != fit.w.len() {
                return Err(Error::DimensionMismatch { expected: fit.w.len(), got: test.d() })
                    .context("test CSV does not match the fit");
            }
            println!("n_test,{}", test.n());
            println!("coverage,{}", empirical_coverage(&fit, &test)?);
        }
        Command::Sweep { config } => {
            let mut cfg = SweepConfig::from_file(&config)?;
            cfg.parallelism = resolve_parallelism(cfg.parallelism)?;
            let cells = experiments::run_sweep(&cfg)?;
            let agg = experiments::write_sweep(&cfg.output, &cells)?;
            report(&[&cfg.output, &agg]);
        }
        Command::Overparam { d, n, seeds, seed, noise, output } => {
            let cfg = OverparamConfig {
                d,
                n,
                seeds,
                master_seed: seed,
                noise: parse_noise_spec(&noise)?,
                parallelism: resolve_parallelism(1)?,
                ..OverparamConfig::default()
            };
            let rows = experiments::run_overparam(&cfg)?;
            experiments::write_overparam(&output, &rows)?;
            report(&[&output]);
        }
        Command::Pseudo { csv, config } => {
            let mut cfg = PseudoConfig::from_map(ConfigMap::from_file(&config)?)?;
            cfg.parallelism = resolve_parallelism(cfg.parallelism)?;
            let rows = experiments::run_pseudo_label(&csv, &cfg)?;
            let agg = experiments::write_pseudo(&cfg.output, &rows)?;
            report(&[&cfg.output, &agg]);
        }
        Command::Bias { config } => {
            let mut cfg = SweepConfig::from_file(&config)?;
            cfg.parallelism = resolve_parallelism(cfg.parallelism)?;
            let rows = experiments::run_bias_study(&cfg)?;
            experiments::write_bias(&cfg.output, &rows)?;
            report(&[&cfg.output]);
        }
    }
    Ok(())
}

fn report(paths: &[&Path]) {
    for p in paths {
        eprintln!("wrote {}", p.display());
    }
}
