use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ldpfair::harness::{self, DatasetConfig, ExperimentConfig, ReportFormat};
use ldpfair::mechanism::{self, MechanismConfig, Setting, SplitPolicy, DEFAULT_MATRIX_CAP};
use ldpfair::synth::Regime;
use ldpfair::Error;

#[derive(Parser)]
#[command(
    name = "ldpfair",
    version,
    about = "LDP obfuscation and group-fairness experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment and write summary.{csv,json} and rows.csv.
    Run(RunArgs),
    /// Check a dataset against its schema and report violations.
    Validate(DataArgs),
    /// Print the transition matrix of a mechanism as CSV.
    Matrix(MatrixArgs),
}

#[derive(Args)]
struct DataArgs {
    /// Experiment config document (TOML).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Preset name (synthetic1, synthetic2) or path to an ingest config.
    #[arg(long)]
    dataset: Option<String>,
    /// Outcome regime for synthetic data.
    #[arg(long)]
    regime: Option<Regime>,
    /// Number of synthetic records.
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Comma-separated settings, e.g. noLDP,combLDP.
    #[arg(long, value_delimiter = ',')]
    settings: Option<Vec<Setting>>,
    /// Comma-separated privacy budgets.
    #[arg(long, value_delimiter = ',')]
    epsilons: Option<Vec<f64>>,
    #[arg(long)]
    runs: Option<usize>,
    #[arg(long)]
    folds: Option<usize>,
    /// uniform or k-based.
    #[arg(long)]
    split_policy: Option<SplitPolicy>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// csv or json.
    #[arg(long)]
    format: Option<ReportFormat>,
    /// Number of trees in the forest.
    #[arg(long)]
    trees: Option<usize>,
}

#[derive(Args)]
struct MatrixArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value = "combLDP")]
    setting: Setting,
    #[arg(long)]
    epsilon: f64,
    #[arg(long)]
    split_policy: Option<SplitPolicy>,
    /// Refuse matrices with more cells per side than this.
    #[arg(long, default_value_t = DEFAULT_MATRIX_CAP)]
    cap: usize,
    /// Write to a file instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn exit_code(e: &Error) -> u8 {
    match e.category() {
        "config" => 3,
        "parameter" => 4,
        "schema" => 5,
        "data" => 6,
        "io" => 7,
        _ => 8,
    }
}

fn base_config(args: &DataArgs) -> Result<ExperimentConfig, Error> {
    let mut cfg = match &args.config {
        Some(path) => ExperimentConfig::from_toml_file(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(d) = &args.dataset {
        cfg.dataset = if matches!(d.as_str(), "synthetic1" | "synthetic2") {
            DatasetConfig {
                regime: cfg.dataset.regime.or(Some(Regime::Q2)),
                ..DatasetConfig::preset(d)
            }
        } else {
            DatasetConfig::ingest(d)
        };
    }
    if let Some(r) = args.regime {
        cfg.dataset.regime = Some(r);
    }
    if let Some(n) = args.n {
        cfg.dataset.n = n;
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn run(args: RunArgs) -> Result<(), Error> {
    let mut cfg = base_config(&args.data)?;
    if let Some(s) = args.settings {
        cfg.settings = s;
    }
    if let Some(e) = args.epsilons {
        cfg.epsilons = e;
    }
    if let Some(r) = args.runs {
        cfg.runs = r;
    }
    if let Some(f) = args.folds {
        cfg.folds = f;
    }
    if let Some(p) = args.split_policy {
        cfg.split_policy = p;
    }
    if let Some(o) = args.out {
        cfg.out = o;
    }
    if let Some(f) = args.format {
        cfg.format = f;
    }
    if let Some(t) = args.trees {
        cfg.forest.n_trees = t;
    }
    cfg.check()?;
    let rows = harness::run_experiment(&cfg)?;
    let out = harness::write_outputs(&cfg.out, &rows, cfg.format)?;
    println!("{}", out.summary.display());
    println!("{}", out.rows.display());
    Ok(())
}

fn validate(args: DataArgs) -> Result<bool, Error> {
    let cfg = base_config(&args)?;
    let data = harness::prepare_data(&cfg.dataset, cfg.seed)?;
    if let Some(report) = &data.load_report {
        print!("{}", report.to_text());
    }
    let violations = ldpfair::schema::validate(&data.dataset);
    println!(
        "{}: {} records, {} violations",
        data.name,
        data.dataset.n(),
        violations.len()
    );
    for v in &violations {
        println!("  {v}");
    }
    Ok(violations.is_empty())
}

fn matrix(args: MatrixArgs) -> Result<(), Error> {
    let mut cfg = base_config(&args.data)?;
    // The matrix depends on the schema only; keep generation cheap.
    if cfg.dataset.preset.is_some() && args.data.n.is_none() {
        cfg.dataset.n = 1000;
    }
    let data = harness::prepare_data(&cfg.dataset, cfg.seed)?;
    let mc = MechanismConfig::new(args.setting, args.epsilon)
        .with_split_policy(args.split_policy.unwrap_or(cfg.split_policy));
    let m = mechanism::transition_matrix(&mc, data.dataset.schema(), args.cap)?;
    let csv = m.to_csv();
    match args.out {
        Some(path) => write(&path, &csv),
        None => {
            print!("{csv}");
            Ok(())
        }
    }
}

fn write(path: &Path, text: &str) -> Result<(), Error> {
    std::fs::write(path, text).map_err(|source| Error::Io {
        path: path.to_owned(),
        source,
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(a) => run(a).map(|()| true),
        Command::Validate(a) => validate(a),
        Command::Matrix(a) => matrix(a).map(|()| true),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(6),
        Err(e) => {
            eprintln!("error[{}]: {e}", e.category());
            ExitCode::from(exit_code(&e))
        }
    }
}
