use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use subrec::grid::GridFunction;
use subrec::harness::{self, ExperimentConfig, ExperimentKind, OutputFormat};
use subrec::Error;

const COLUMNS: &str = "\
Output: <out>/<experiment>.json holds the full record (resolved config, fits,
checks); with --format csv each table is also written as <experiment>_<table>.csv:

  convergence_study_errors.csv     H,h,pc_l2,pc_energy,ms_l2,ms_energy,energy_stable
  rate_study_constants.csv         r,h,constant,rho,rho_tilde,normalized,normalized_tilde,lower_ratio
  critical_study_ratios.csv        h,ratio,rho_value,normalized_ratio
  weighted_study_poincare.csv      case,p,r,h,max_ratio,mean_ratio
  weighted_study_conditions.csv    case,p,r,h,integral,normalized
  degeneracy_study_errors.csv      r,h,unweighted_l2,weighted_l2,sharp_constant
  pointwise_limit_study_averages.csv  radius,average,difference,ratio

Exit status: 0 all checks pass, 1 a check fails (or a run error), 2 configuration error.";

#[derive(Parser)]
#[command(
    name = "subrec",
    version,
    about = "Recovery from subsampled local averages: experiments and one-shot recovery",
    after_help = COLUMNS
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sharp single-patch constants against the subsample ratio.
    Rates(Common),
    /// Recovery error rates as the patches shrink.
    Converge(Common),
    /// Unweighted vs weighted recovery as the subsample degenerates.
    Degeneracy(Common),
    /// Weighted Poincaré ratios and weight integrability conditions.
    Weighted(Common),
    /// Grid-free critical-case quotients.
    Critical(Common),
    /// Ball averages of radial profiles on shrinking balls.
    Pointwise(Common),
    /// Recover a grid function (binary or .csv) from its measurements.
    Recover {
        #[command(flatten)]
        common: Common,
        /// Grid function to measure and recover.
        #[arg(long)]
        input: Option<PathBuf>,
    },
}

#[derive(Args)]
struct Common {
    /// JSON file overriding the experiment defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

enum Failure {
    Config(String),
    Run(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) | Error::Parse(_) | Error::Json(_) => Failure::Config(e.to_string()),
            other => Failure::Run(other.to_string()),
        }
    }
}

fn load_config(kind: ExperimentKind, common: &Common, extra: Value) -> Result<ExperimentConfig, Failure> {
    let mut overrides = match &common.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
            serde_json::from_str(&text).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?
        }
        None => json!({}),
    };
    if let Some(seed) = common.seed {
        harness::merge(&mut overrides, json!({ "seed": seed }));
    }
    harness::merge(&mut overrides, extra);
    Ok(ExperimentConfig::resolve(kind, overrides)?)
}

fn read_function(path: &Path) -> Result<GridFunction, Failure> {
    let file = File::open(path).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
    let reader = BufReader::new(file);
    let u = if path.extension().is_some_and(|e| e == "csv") {
        GridFunction::read_csv(reader)?
    } else {
        GridFunction::read_binary(reader)?
    };
    Ok(u)
}

fn execute(cli: Cli) -> Result<bool, Failure> {
    let (kind, common, input) = match cli.command {
        Command::Rates(c) => (ExperimentKind::RateStudy, c, None),
        Command::Converge(c) => (ExperimentKind::ConvergenceStudy, c, None),
        Command::Degeneracy(c) => (ExperimentKind::DegeneracyStudy, c, None),
        Command::Weighted(c) => (ExperimentKind::WeightedStudy, c, None),
        Command::Critical(c) => (ExperimentKind::CriticalStudy, c, None),
        Command::Pointwise(c) => (ExperimentKind::PointwiseLimitStudy, c, None),
        Command::Recover { common, input } => (ExperimentKind::Recover, common, input),
    };
    if let Some(threads) = common.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| Failure::Config(e.to_string()))?;
    }
    let format = match common.format {
        Format::Csv => OutputFormat::Csv,
        Format::Json => OutputFormat::Json,
    };
    let extra = match &input {
        Some(p) => json!({ "input": p.display().to_string() }),
        None => json!({}),
    };
    let cfg = load_config(kind, &common, extra)?;
    fs::create_dir_all(&common.out).map_err(|e| Failure::Run(e.to_string()))?;

    if kind == ExperimentKind::Recover {
        let path = cfg.input.clone().ok_or_else(|| Failure::Config("recover needs --input or an input key".into()))?;
        let u = read_function(Path::new(&path))?;
        let (rec, report) = harness::recover_function(&cfg, &u)?;
        let io = |e: std::io::Error| Failure::Run(e.to_string());
        match format {
            OutputFormat::Csv => rec.write_csv(BufWriter::new(File::create(common.out.join("recovered.csv")).map_err(io)?))?,
            OutputFormat::Json => rec.write_binary(BufWriter::new(File::create(common.out.join("recovered.bin")).map_err(io)?))?,
        }
        let doc = json!({ "config": cfg, "report": report });
        fs::write(common.out.join("recover.json"), serde_json::to_string_pretty(&doc).map_err(Error::from)? + "\n").map_err(io)?;
        println!("l2_error {:.6e}  energy_error {:.6e}", report.l2_error, report.energy_error);
        return Ok(true);
    }

    let record = harness::run(&cfg)?;
    let files = harness::write_record(&record, &common.out, format)?;
    for check in &record.checks {
        println!("{} {}: {}", if check.passed { "PASS" } else { "FAIL" }, check.name, check.detail);
    }
    for f in files {
        println!("wrote {}", f.display());
    }
    Ok(record.passed)
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(Failure::Config(msg)) => {
            eprintln!("configuration error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Run(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
