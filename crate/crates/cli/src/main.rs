use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use flopreg::experiment::{run_experiment, run_train, ExperimentSpec};
use flopreg::latency::{profile_table, ProfileConfig};
use flopreg::model::Model;
use flopreg::surrogates::SurrogateKind;
use flopreg::trainer::CostModel;
use flopreg::Error;

#[derive(Parser)]
#[command(name = "flopreg", version, about = "Compression-aware training with FLOPs and latency surrogates")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one compressed model and extract it.
    Train(RunArgs),
    /// Run an experiment recipe.
    Experiment(RunArgs),
    /// Measure a matrix-vector latency table on this machine.
    ProfileTable(ProfileArgs),
    /// Extract the compressed architecture from a saved model.
    Extract(ExtractArgs),
    /// Summarize the outputs in a directory.
    Report(ReportArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum SurrogateArg {
    L1,
    L1l2,
}

#[derive(Clone, Copy, ValueEnum)]
enum CostArg {
    Flops,
    Latency,
}

#[derive(Args)]
struct RunArgs {
    /// Experiment spec (JSON).
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
    /// Override λ_max (and the sweep list).
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long, value_enum)]
    surrogate: Option<SurrogateArg>,
    #[arg(long, value_enum)]
    cost: Option<CostArg>,
    /// Latency table CSV.
    #[arg(long)]
    table: Option<PathBuf>,
}

#[derive(Args)]
struct ProfileArgs {
    /// Profile config (JSON); the flags below apply when absent.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 64)]
    max_in: usize,
    #[arg(long, default_value_t = 64)]
    max_out: usize,
    #[arg(long)]
    theta: Option<usize>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    repetitions: Option<usize>,
}

#[derive(Args)]
struct ExtractArgs {
    /// Trained model JSON written by `train`.
    #[arg(long)]
    model: PathBuf,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
}

fn config_err(e: impl std::fmt::Display) -> Error {
    Error::Config(e.to_string())
}

fn load_spec(args: &RunArgs) -> Result<ExperimentSpec, Error> {
    let mut spec = ExperimentSpec::load(&args.config)?;
    if let Some(seed) = args.seed {
        spec.seed = seed;
        spec.train.seed = seed;
    }
    if let Some(l) = args.lambda {
        spec.train.lambda_max = l;
        spec.lambdas = vec![l];
    }
    if let Some(s) = args.surrogate {
        spec.train.regularizer.surrogate = match s {
            SurrogateArg::L1 => SurrogateKind::L1,
            SurrogateArg::L1l2 => SurrogateKind::L1L2,
        };
    }
    if let Some(c) = args.cost {
        spec.train.regularizer.cost = match c {
            CostArg::Flops => CostModel::Flops,
            CostArg::Latency => CostModel::Latency,
        };
    }
    if let Some(t) = &args.table {
        spec.table = Some(t.clone());
    }
    spec.validate()?;
    Ok(spec)
}

fn write(path: &Path, text: &str) -> Result<(), Error> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::Io { path: dir.display().to_string(), source: e })?;
    }
    std::fs::write(path, text).map_err(|e| Error::Io { path: path.display().to_string(), source: e })
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Train(args) => {
            let spec = load_spec(&args)?;
            let r = run_train(&spec, &args.out_dir)?;
            println!("exact_flops={} test_loss={}", r.exact_flops, r.test.loss);
            if let Some(a) = r.test.accuracy {
                println!("test_accuracy={a}");
            }
            if let Some(d) = &r.degenerate {
                println!("degenerate: {d}");
            }
        }
        Command::Experiment(args) => {
            let spec = load_spec(&args)?;
            run_experiment(&spec, &args.out_dir)?;
            println!("wrote {}", args.out_dir.join("report.json").display());
        }
        Command::ProfileTable(args) => {
            let mut cfg = match &args.config {
                Some(p) => {
                    let text = std::fs::read_to_string(p)
                        .map_err(|e| config_err(format!("cannot read config {}: {e}", p.display())))?;
                    serde_json::from_str(&text).map_err(|e| config_err(format!("invalid profile config: {e}")))?
                }
                None => ProfileConfig::new(args.max_in, args.max_out),
            };
            if let Some(t) = args.theta {
                cfg.theta = t;
            }
            if let Some(k) = args.k {
                cfg.k = k;
            }
            if let Some(r) = args.repetitions {
                cfg.repetitions = r;
            }
            cfg.validate()?;
            let table = profile_table(&cfg)?;
            let path = args.out_dir.join("latency_table.csv");
            write(&path, &table.to_csv())?;
            println!("wrote {}", path.display());
        }
        Command::Extract(args) => {
            let text = std::fs::read_to_string(&args.model)
                .map_err(|e| config_err(format!("cannot read model {}: {e}", args.model.display())))?;
            let model: Model =
                serde_json::from_str(&text).map_err(|e| config_err(format!("invalid model {}: {e}", args.model.display())))?;
            let extracted = model.extract()?;
            let path = args.out_dir.join("extracted.json");
            write(&path, &extracted.to_json()?)?;
            let widths: Vec<String> = extracted.layers.iter().map(|l| format!("{}x{}", l.d_out, l.d_in)).collect();
            println!("layers={} exact_flops={} parameter_bits={}", widths.join(","), extracted.exact_flops, extracted.parameter_bits);
        }
        Command::Report(args) => {
            let mut csvs: Vec<PathBuf> = std::fs::read_dir(&args.out_dir)
                .map_err(|e| config_err(format!("cannot read {}: {e}", args.out_dir.display())))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|x| x == "csv"))
                .collect();
            csvs.sort();
            for p in csvs {
                let text = std::fs::read_to_string(&p).map_err(|e| Error::Io { path: p.display().to_string(), source: e })?;
                let mut lines = text.lines();
                let header = lines.next().unwrap_or_default();
                let rows = lines.clone().count();
                println!("{}: {rows} rows", p.file_name().unwrap_or_default().to_string_lossy());
                if let Some(last) = lines.last() {
                    for (h, v) in header.split(',').zip(last.split(',')) {
                        println!("  {h} = {v}");
                    }
                }
            }
            let report = args.out_dir.join("report.json");
            if report.exists() {
                println!("summary: {}", report.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) | Error::Json(_) => ExitCode::from(2),
                _ => ExitCode::from(3),
            }
        }
    }
}
