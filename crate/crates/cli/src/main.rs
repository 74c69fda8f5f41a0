use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use metacate::data::{export_csv, load_csv, CsvSchema};
use metacate::dgp::{generate, DgpSpec, Setting};
use metacate::experiment::{evaluate, run, write_outputs, ExperimentConfig};
use metacate::learners::CateModel;
use metacate::theory::{verify_suite, FormulaTable, VerifyConfig};
use metacate::Error;

/// CATE meta-learner benchmarks.
#[derive(Parser)]
#[command(name = "metacate", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a simulated training and test sample and write them as CSV.
    Simulate {
        /// i, ii, iii, predictive:<k> or imbalance:<fraction>.
        #[arg(long, default_value = "i")]
        setting: Setting,
        #[arg(long, default_value_t = 1000)]
        n: usize,
        #[arg(long, default_value_t = 500)]
        n_test: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Selection-bias strength.
        #[arg(long, default_value_t = 3.0)]
        xi: f64,
        /// Output directory; files are `<prefix>train.csv` and `<prefix>test.csv`.
        #[arg(long, default_value = ".")]
        out: PathBuf,
        #[arg(long, default_value = "")]
        prefix: String,
    },
    /// Run an experiment config and write its result files.
    Run {
        config: PathBuf,
        /// Override the config's worker count.
        #[arg(long)]
        workers: Option<usize>,
        /// Override the config's output directory.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Check the pseudo-outcome algebra and the selection-bias identity.
    Verify {
        /// Fewer Monte-Carlo draws.
        #[arg(long)]
        quick: bool,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// RMSE of a saved CATE model against the true CATE of a dataset.
    Evaluate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
}

enum Failure {
    Cells(String),
    Config(String),
}

fn config_error(e: Error) -> Failure {
    Failure::Config(e.to_string())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Cells(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Config(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
    }
}

fn dispatch(command: Command) -> Result<(), Failure> {
    match command {
        Command::Simulate {
            setting,
            n,
            n_test,
            seed,
            xi,
            out,
            prefix,
        } => {
            let spec = DgpSpec {
                setting,
                n_train: n,
                n_test,
                seed,
                xi,
                ..DgpSpec::default()
            };
            let sample = generate(&spec).map_err(config_error)?;
            std::fs::create_dir_all(&out).map_err(|e| Failure::Config(format!("{}: {e}", out.display())))?;
            let train = out.join(format!("{prefix}train.csv"));
            let test = out.join(format!("{prefix}test.csv"));
            export_csv(&sample.train, &train).map_err(config_error)?;
            export_csv(&sample.test, &test).map_err(config_error)?;
            println!("wrote {} and {}", train.display(), test.display());
            println!("realized treated fraction: {:.4}", sample.treated_fraction);
            Ok(())
        }
        Command::Run { config, workers, output } => {
            let mut cfg = ExperimentConfig::load(&config).map_err(config_error)?;
            if let Some(w) = workers {
                cfg.workers = w;
            }
            if let Some(o) = output {
                cfg.output = o;
            }
            let outcome = run(&cfg).map_err(config_error)?;
            write_outputs(&cfg, &outcome).map_err(config_error)?;
            for w in &outcome.warnings {
                eprintln!("warning: {w}");
            }
            print!("{}", metacate::data::table(&outcome.report));
            println!("results in {}", cfg.output.display());
            if outcome.failures.is_empty() {
                Ok(())
            } else {
                for f in &outcome.failures {
                    eprintln!(
                        "failed: {} + {} on setting {} n={} replicate {}: {}",
                        f.learner, f.architecture, f.setting, f.n, f.replicate, f.error
                    );
                }
                Err(Failure::Cells(format!("{} cell run(s) failed", outcome.failures.len())))
            }
        }
        Command::Verify { quick, seed } => {
            let mut vc = VerifyConfig::default();
            if quick {
                vc.unbiasedness_draws = 20_000;
                vc.identity_draws = 100_000;
            }
            if let Some(s) = seed {
                vc.seed = s;
            }
            let checks = verify_suite(&FormulaTable::default(), &vc).map_err(config_error)?;
            let width = checks.iter().map(|c| c.name.len()).max().unwrap_or(0);
            println!("{:<6} {:<width$} {:>12} {:>10}", "status", "check", "statistic", "tolerance");
            for c in &checks {
                println!(
                    "{:<6} {:<width$} {:>12.3e} {:>10.1e}",
                    if c.passed { "PASS" } else { "FAIL" },
                    c.name,
                    c.statistic,
                    c.tolerance
                );
            }
            let failed = checks.iter().filter(|c| !c.passed).count();
            println!("{} of {} checks passed", checks.len() - failed, checks.len());
            if failed == 0 {
                Ok(())
            } else {
                Err(Failure::Cells(format!("{failed} check(s) failed")))
            }
        }
        Command::Evaluate { model, data } => {
            let m = CateModel::load(&model).map_err(config_error)?;
            let d = load_csv(&data, &CsvSchema::default()).map_err(config_error)?;
            let r = evaluate(&m, &d).map_err(config_error)?;
            println!("rows: {}", d.n());
            println!("rmse: {r}");
            Ok(())
        }
    }
}
