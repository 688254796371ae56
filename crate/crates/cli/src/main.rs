use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use posterior_score::pipeline::{
    run_report, run_score, run_synth, FeatureSelection, FileConfig, ScoreRequest, SynthRequest,
};
use posterior_score::{EstimatorKind, Format, ReferenceModelKind, ScenarioSpec, ScoringConfig};

const THREADS_ENV: &str = "POSTERIOR_SCORE_THREADS";

#[derive(Parser)]
#[command(name = "posterior-score", version, about = "Score predicted per-cell feature posteriors")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Score one or more evaluation tables.
    Score(ScoreArgs),
    /// Generate a synthetic evaluation table.
    Synth(SynthArgs),
    /// Render score outputs into a markdown table and plot data.
    Report(ReportArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Csv,
    Jsonl,
}

impl From<FormatArg> for Format {
    fn from(f: FormatArg) -> Format {
        match f {
            FormatArg::Csv => Format::Csv,
            FormatArg::Jsonl => Format::Jsonl,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum DensityArg {
    Gmm,
    Kde,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModelArg {
    Oracle,
    Marginal,
    Shuffled,
    Overconfident,
    Shifted,
}

#[derive(Clone, Copy, ValueEnum)]
enum FamilyArg {
    Gaussian,
    Bimodal,
}

#[derive(Args)]
struct ScoreArgs {
    /// Evaluation table; repeat for several files.
    #[arg(long, required = true)]
    input: Vec<PathBuf>,
    /// Input format; inferred from the extension when omitted.
    #[arg(long, value_enum)]
    format: Option<FormatArg>,
    /// `all` or a comma-separated list such as `F1,F7`.
    #[arg(long)]
    features: Option<String>,
    #[arg(long, value_enum)]
    density: Option<DensityArg>,
    /// Largest mixture size tried for per-cell posteriors.
    #[arg(long)]
    k_max: Option<usize>,
    /// Largest mixture size tried for the marginals.
    #[arg(long)]
    marginal_k_max: Option<usize>,
    #[arg(long)]
    pool_cap: Option<usize>,
    #[arg(long)]
    kld_grid: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Write per-cell scores and fitted posteriors as JSONL.
    #[arg(long)]
    dump_cells: bool,
    /// TOML file with defaults for any of the above.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, value_enum)]
    model: ModelArg,
    #[arg(long, value_enum, default_value = "gaussian")]
    family: FamilyArg,
    #[arg(long)]
    cells: usize,
    #[arg(long)]
    samples: usize,
    /// Posterior width multiplier; only with `--model overconfident` (default 0.2).
    #[arg(long)]
    width_factor: Option<f64>,
    /// Posterior centre displacement; required with `--model shifted`.
    #[arg(long, allow_negative_numbers = true)]
    offset: Option<f64>,
    #[arg(long)]
    seed: u64,
    #[arg(long, value_enum)]
    format: Option<FormatArg>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    /// Directory written by `score`.
    #[arg(long)]
    summaries: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

enum Failure {
    Usage(String),
    Runtime(posterior_score::Error),
}

impl From<posterior_score::Error> for Failure {
    fn from(e: posterior_score::Error) -> Self {
        Failure::Runtime(e)
    }
}

fn synth_model(args: &SynthArgs) -> Result<ReferenceModelKind, Failure> {
    if args.offset.is_some() && !matches!(args.model, ModelArg::Shifted) {
        return Err(Failure::Usage("--offset is only valid with --model shifted".into()));
    }
    if args.width_factor.is_some() && !matches!(args.model, ModelArg::Overconfident) {
        return Err(Failure::Usage("--width-factor is only valid with --model overconfident".into()));
    }
    let model = match args.model {
        ModelArg::Oracle => ReferenceModelKind::Oracle,
        ModelArg::Marginal => ReferenceModelKind::MarginalOnly,
        ModelArg::Shuffled => ReferenceModelKind::Shuffled,
        ModelArg::Overconfident => ReferenceModelKind::Overconfident {
            width_factor: args.width_factor.unwrap_or(0.2),
        },
        ModelArg::Shifted => ReferenceModelKind::Shifted {
            offset: args
                .offset
                .ok_or_else(|| Failure::Usage("--model shifted requires --offset".into()))?,
        },
    };
    model.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    Ok(model)
}

fn cmd_synth(args: SynthArgs) -> Result<(), Failure> {
    let model = synth_model(&args)?;
    let spec = match args.family {
        FamilyArg::Gaussian => ScenarioSpec::gaussian(args.cells, args.samples, args.seed),
        FamilyArg::Bimodal => ScenarioSpec::bimodal(args.cells, args.samples, args.seed),
    };
    spec.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    if matches!(model, ReferenceModelKind::Shuffled) && args.cells < 2 {
        return Err(Failure::Usage("--model shuffled needs --cells ≥ 2".into()));
    }
    let format = args.format.map(Format::from).unwrap_or_else(|| Format::from_path(&args.out));
    let outcome = run_synth(&SynthRequest {
        spec,
        model,
        out: args.out.clone(),
        format,
    })?;
    eprintln!("wrote {} rows to {}", outcome.rows, args.out.display());
    if let Some(ig) = outcome.expected_info_gain {
        println!("expected info gain: {ig:.4}");
    }
    Ok(())
}

fn cmd_score(args: ScoreArgs) -> Result<(), Failure> {
    let file = match &args.config {
        Some(path) => FileConfig::load(path).map_err(|e| Failure::Usage(e.to_string()))?,
        None => FileConfig::default(),
    };
    let mut config: ScoringConfig = file.scoring.unwrap_or_default();
    if let Some(d) = args.density {
        config.density.estimator = match d {
            DensityArg::Gmm => EstimatorKind::Gmm,
            DensityArg::Kde => EstimatorKind::Kde,
        };
    }
    if let Some(k) = args.k_max {
        config.density.posterior_k_max = k;
    }
    if let Some(k) = args.marginal_k_max {
        config.density.marginal_k_max = k;
    }
    if let Some(c) = args.pool_cap {
        config.pool_cap = c;
    }
    if let Some(g) = args.kld_grid {
        config.kld_grid_points = g;
    }
    config.validate().map_err(|e| Failure::Usage(e.to_string()))?;

    let features = match &args.features {
        Some(s) => s.parse().map_err(|e: posterior_score::Error| Failure::Usage(e.to_string()))?,
        None => file.features.unwrap_or(FeatureSelection::All),
    };
    let format = args.format.map(Format::from).or(file.format);
    let inputs = args
        .input
        .iter()
        .map(|p| (p.clone(), format.unwrap_or_else(|| Format::from_path(p))))
        .collect();
    let summary = run_score(&ScoreRequest {
        inputs,
        features,
        config,
        seed: args.seed.or(file.seed).unwrap_or(0),
        out_dir: args.out.clone(),
        dump_cells: args.dump_cells || file.dump_cells.unwrap_or(false),
    })?;
    print!("{}", summary.to_markdown());
    Ok(())
}

fn cmd_report(args: ReportArgs) -> Result<(), Failure> {
    let outcome = run_report(&args.summaries, &args.out)?;
    print!("{}", outcome.summary.to_markdown());
    eprintln!("wrote {} files to {}", outcome.files.len(), args.out.display());
    Ok(())
}

fn configure_threads() -> Result<(), Failure> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .map_err(|_| Failure::Usage(format!("{THREADS_ENV} must be a non-negative integer, got {raw:?}")))?;
    if n > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::Usage(format!("{THREADS_ENV}: {e}")))?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = configure_threads().and_then(|()| match cli.command {
        Command::Score(a) => cmd_score(a),
        Command::Synth(a) => cmd_synth(a),
        Command::Report(a) => cmd_report(a),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
