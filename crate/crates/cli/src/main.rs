use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use unlearn_core::certify::FormulaVariant;
use unlearn_core::experiment::{
    cmd_calibrate, cmd_run, cmd_sweep, cmd_verify, CalibrateInput, ExperimentConfig, Overrides, RunOptions, Suite,
    SweepAxis, SweepOptions, VerifyOptions,
};
use unlearn_core::verify::EXACT_TRIALS;
use unlearn_core::Error;

const EXIT_OK: u8 = 0;
const EXIT_VALIDATION: u8 = 1;
const EXIT_CHECK_FAILED: u8 = 2;

/// Certified machine unlearning lab: calibrate, run, sweep and verify.
#[derive(Parser, Debug)]
#[command(name = "unlearn", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Print the sensitivity bound, noise scale and iteration plan.
    Calibrate(CalibrateArgs),
    /// Run learn/unlearn (and optionally retrain) replicas and write outputs.
    Run(RunArgs),
    /// Evaluate the bound along one axis.
    Sweep(SweepArgs),
    /// Run the executable checks and write a JSON report.
    Verify(VerifyArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum VariantArg {
    Main,
    Appendix,
}

impl From<VariantArg> for FormulaVariant {
    fn from(v: VariantArg) -> Self {
        match v {
            VariantArg::Main => FormulaVariant::Main,
            VariantArg::Appendix => FormulaVariant::Appendix,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SuiteArg {
    Exact,
    Statistical,
    All,
}

impl From<SuiteArg> for Suite {
    fn from(s: SuiteArg) -> Self {
        match s {
            SuiteArg::Exact => Suite::Exact,
            SuiteArg::Statistical => Suite::Statistical,
            SuiteArg::All => Suite::All,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum AxisArg {
    K,
    T,
    Epsilon,
    M,
}

impl From<AxisArg> for SweepAxis {
    fn from(a: AxisArg) -> Self {
        match a {
            AxisArg::K => SweepAxis::K,
            AxisArg::T => SweepAxis::T,
            AxisArg::Epsilon => SweepAxis::Epsilon,
            AxisArg::M => SweepAxis::M,
        }
    }
}

#[derive(Args, Debug)]
struct Common {
    /// Experiment config (JSON).
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    replicas: Option<usize>,
    #[arg(long, value_enum)]
    variant: Option<VariantArg>,
}

impl Common {
    fn overrides(&self) -> Overrides {
        Overrides { seed: self.seed, replicas: self.replicas, variant: self.variant.map(Into::into) }
    }
}

#[derive(Args, Debug)]
struct CalibrateArgs {
    #[command(flatten)]
    common: Common,
    /// Also write `calibration.json` to this directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct RunArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    out: PathBuf,
    /// Also run the coupled retrain trajectory and write distances.
    #[arg(long)]
    coupled: bool,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum)]
    axis: Option<AxisArg>,
    /// Comma-separated axis values.
    #[arg(long, value_delimiter = ',')]
    values: Option<Vec<f64>>,
    /// Estimate the coupled distance by Monte Carlo at every point.
    #[arg(long)]
    monte_carlo: bool,
}

#[derive(Args, Debug)]
struct VerifyArgs {
    #[arg(long, value_enum, default_value = "all")]
    suite: SuiteArg,
    #[arg(long, default_value_t = 200)]
    replicas: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Random instances per exact check.
    #[arg(long, default_value_t = EXACT_TRIALS)]
    trials: usize,
    /// Run the statistical checks on this config instead of the shipped references.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "report.json")]
    out: PathBuf,
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<(), Error> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

fn warn_all(warnings: &[String]) {
    for w in warnings {
        eprintln!("warning: {w}");
    }
}

fn execute(cli: Cli) -> Result<u8, Error> {
    match cli.command {
        Command::Calibrate(a) => {
            let input = CalibrateInput::from_path(&a.common.config)?;
            let cal = cmd_calibrate(&input, &a.common.overrides())?;
            warn_all(&cal.warnings);
            if let Some(dir) = &a.out {
                write_json(&dir.join("calibration.json"), &cal)?;
            }
            println!("{}", serde_json::to_string_pretty(&cal)?);
            Ok(EXIT_OK)
        }
        Command::Run(a) => {
            let cfg = ExperimentConfig::from_path(&a.common.config)?;
            let opts = RunOptions { coupled: a.coupled, out_dir: a.out };
            let summary = cmd_run(&cfg, &a.common.overrides(), &opts)?;
            warn_all(&summary.warnings);
            println!("{}", serde_json::to_string_pretty(&summary)?);
            Ok(EXIT_OK)
        }
        Command::Sweep(a) => {
            let cfg = ExperimentConfig::from_path(&a.common.config)?;
            let opts = SweepOptions {
                axis: a.axis.map(Into::into),
                values: a.values,
                monte_carlo: a.monte_carlo,
                out_dir: a.out,
            };
            let rows = cmd_sweep(&cfg, &a.common.overrides(), &opts)?;
            println!("{}", serde_json::to_string_pretty(&rows)?);
            Ok(EXIT_OK)
        }
        Command::Verify(a) => {
            let config = a.config.as_deref().map(ExperimentConfig::from_path).transpose()?;
            let opts = VerifyOptions {
                suite: a.suite.into(),
                replicas: a.replicas,
                seed: a.seed,
                trials: a.trials,
                config,
            };
            let report = cmd_verify(&opts)?;
            for c in &report.checks {
                println!("{}", c.summary_line());
            }
            write_json(&a.out, &report)?;
            let failed = report.failures().count();
            println!("{} checks, {failed} failed", report.checks.len());
            Ok(if report.pass { EXIT_OK } else { EXIT_CHECK_FAILED })
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_VALIDATION } else { EXIT_OK });
        }
    };
    match execute(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
