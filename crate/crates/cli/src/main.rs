use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context as _;
use clap::{Args, Parser, Subcommand, ValueEnum};

use pmlfs::data::DataFormat;
use pmlfs::encoder::{EncoderConfig, EncoderVariant};
use pmlfs::eval::cv::{CvConfig, RankingSource, RESULTS_HEADER};
use pmlfs::eval::downstream::DownstreamKind;
use pmlfs::harness::{self, DataSource, ExportConfig, NoiseConfig, RunConfig};
use pmlfs::stage1::{LabelMode, Stage1Config};
use pmlfs::stage2::budget_for;
use pmlfs::verify::VerificationOptions;
use pmlfs::PmlError;

#[derive(Parser)]
#[command(name = "pmlfs", version, about = "Partial multi-label disambiguation and RL feature selection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Cross-validated two-stage run.
    Run(RunArgs),
    /// Run every theory oracle and write the verification report.
    Verify(VerifyArgs),
    /// Rank tables and Friedman tests from results of several methods.
    Stats(StatsArgs),
    /// Scan a grid of feature budgets.
    BudgetCurve(BudgetArgs),
    /// Write a copy of a dataset with injected false-positive candidates.
    NoiseInject(NoiseArgs),
    /// Export Stage-1 pseudo labels for a whole dataset.
    ExportPseudo(ExportArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    /// Full-size transformer encoder with the reference training settings.
    Paper,
    /// Small residual-MLP encoder sized for a laptop.
    Desk,
}

#[derive(Args)]
struct DataArgs {
    /// Dataset file.
    #[arg(long, conflicts_with = "synthetic")]
    data: Option<PathBuf>,
    #[arg(long, default_value = "csv")]
    format: DataFormat,
    /// Synthetic data, e.g. `n=200,d=20,L=4`.
    #[arg(long)]
    synthetic: Option<String>,
}

impl DataArgs {
    fn source(&self) -> pmlfs::Result<DataSource> {
        match (&self.data, &self.synthetic) {
            (Some(path), None) => Ok(DataSource::File {
                path: path.clone(),
                format: self.format,
            }),
            (None, Some(spec)) => Ok(DataSource::Synthetic(harness::parse_synthetic(spec)?)),
            _ => Err(PmlError::Config("exactly one of --data or --synthetic is required".into())),
        }
    }
}

#[derive(Args)]
struct EncoderArgs {
    #[arg(long, value_enum, default_value = "paper")]
    preset: Preset,
    #[arg(long)]
    encoder: Option<EncoderVariant>,
    #[arg(long)]
    width: Option<usize>,
    #[arg(long)]
    heads: Option<usize>,
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long)]
    ff_width: Option<usize>,
}

#[derive(Args)]
struct Stage1Args {
    #[arg(long)]
    mode: Option<LabelMode>,
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long)]
    stage1_epochs: Option<usize>,
    #[arg(long)]
    lr_disc: Option<f64>,
    #[arg(long)]
    lr_pol: Option<f64>,
    #[arg(long)]
    lambda_struct: Option<f64>,
    #[arg(long)]
    knn_k: Option<usize>,
}

#[derive(Args)]
struct RunArgs {
    /// Full run configuration as JSON; overrides every other flag.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    dataset_id: Option<String>,
    #[command(flatten)]
    encoder: EncoderArgs,
    #[command(flatten)]
    stage1: Stage1Args,
    /// Candidate noise rate for truth-only data.
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long)]
    folds: Option<usize>,
    /// Evaluation budgets; defaults to the standard budget for the data.
    #[arg(long, value_delimiter = ',')]
    budgets: Option<Vec<usize>>,
    /// Stage-2 training budget; defaults to the standard budget for the data.
    #[arg(long)]
    train_budget: Option<usize>,
    #[arg(long)]
    stage2_epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr_fs: Option<f64>,
    #[arg(long)]
    lambda_fs: Option<f64>,
    #[arg(long)]
    rollouts: Option<usize>,
    #[arg(long)]
    freeze_encoder: bool,
    #[arg(long)]
    downstream: Option<DownstreamKind>,
    #[arg(long)]
    ranking: Option<RankingArg>,
    /// Also score a random ranking at every budget.
    #[arg(long)]
    random_control: bool,
    #[arg(long)]
    record_trajectories: bool,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    /// Print the resolved configuration and exit.
    #[arg(long)]
    print_config: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum RankingArg {
    Learned,
    Random,
    Identity,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Corrupt the BCE derivative to exercise the gradient check.
    #[arg(long)]
    mutate_bce: bool,
    #[arg(long)]
    output_dir: Option<PathBuf>,
}

#[derive(Args)]
struct StatsArgs {
    /// Results CSVs (one method per file) or summary CSVs.
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
}

#[derive(Args)]
struct BudgetArgs {
    #[command(flatten)]
    run: RunArgs,
    #[arg(long, value_delimiter = ',', required = true)]
    grid: Vec<usize>,
}

#[derive(Args)]
struct NoiseArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "csv")]
    format: DataFormat,
    #[arg(long, default_value_t = 0.2)]
    rate: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output file; defaults to a hashed path under the output root.
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
}

#[derive(Args)]
struct ExportArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    encoder: EncoderArgs,
    #[command(flatten)]
    stage1: Stage1Args,
    #[arg(long, default_value_t = 0.2)]
    noise: f64,
    /// Export from a saved checkpoint instead of training.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    output_dir: Option<PathBuf>,
}

fn base_config(preset: Preset) -> CvConfig {
    match preset {
        Preset::Paper => CvConfig::default(),
        Preset::Desk => harness::desk_cv_config(),
    }
}

impl EncoderArgs {
    fn apply(&self, enc: &mut EncoderConfig) {
        if let Some(v) = self.encoder {
            enc.variant = v;
        }
        if let Some(v) = self.width {
            enc.model_width = v;
        }
        if let Some(v) = self.heads {
            enc.head_count = v;
        }
        if let Some(v) = self.layers {
            enc.layer_count = v;
        }
        if let Some(v) = self.ff_width {
            enc.feedforward_width = v;
        }
    }
}

impl Stage1Args {
    fn apply(&self, s1: &mut Stage1Config) {
        if let Some(v) = self.mode {
            s1.mode = v;
        }
        if let Some(v) = self.threshold {
            s1.threshold = v;
        }
        if let Some(v) = self.stage1_epochs {
            s1.epochs = v;
        }
        if let Some(v) = self.lr_disc {
            s1.lr_disc = v;
        }
        if let Some(v) = self.lr_pol {
            s1.lr_pol = v;
        }
        if let Some(v) = self.lambda_struct {
            s1.lambda_struct = v;
        }
        if let Some(v) = self.knn_k {
            s1.knn_k = v;
        }
    }
}

fn feature_count(source: &DataSource) -> pmlfs::Result<usize> {
    Ok(match source {
        DataSource::Synthetic(s) => s.d,
        DataSource::File { .. } => source.load()?.n_features(),
    })
}

fn resolve_run(args: &RunArgs) -> pmlfs::Result<RunConfig> {
    if let Some(path) = &args.config {
        return RunConfig::load(path);
    }
    let data = args.data.source()?;
    let mut cv = base_config(args.encoder.preset);
    cv.dataset_id = args.dataset_id.clone().unwrap_or_else(|| data.default_id());
    args.encoder.apply(&mut cv.encoder);
    args.stage1.apply(&mut cv.stage1);
    if let Some(v) = args.noise {
        cv.noise_rate = v;
    }
    if let Some(v) = args.folds {
        cv.folds = v;
    }
    let standard = budget_for(feature_count(&data)?);
    cv.budgets = args.budgets.clone().unwrap_or_else(|| vec![standard]);
    cv.stage2.budget = args.train_budget.unwrap_or(standard);
    if let Some(v) = args.stage2_epochs {
        cv.stage2.epochs = v;
    }
    if let Some(v) = args.batch_size {
        cv.stage1.batch_size = v;
        cv.stage2.batch_size = v;
    }
    if let Some(v) = args.lr_fs {
        cv.stage2.lr_fs = v;
    }
    if let Some(v) = args.lambda_fs {
        cv.stage2.lambda_fs = v;
    }
    if let Some(v) = args.rollouts {
        cv.stage2.rollouts_per_instance = v;
    }
    cv.stage2.freeze_encoder |= args.freeze_encoder;
    if let Some(v) = args.downstream {
        cv.downstream.kind = v;
    }
    if let Some(r) = args.ranking {
        cv.ranking = match r {
            RankingArg::Learned => RankingSource::Learned,
            RankingArg::Random => RankingSource::Random,
            RankingArg::Identity => RankingSource::Identity,
        };
    }
    cv.random_control |= args.random_control;
    cv.record_trajectories |= args.record_trajectories;
    if let Some(v) = args.seed {
        cv.master_seed = v;
    }
    let cfg = RunConfig {
        data,
        cv,
        output_dir: args.output_dir.clone(),
    };
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Run(args) => {
            let cfg = resolve_run(&args)?;
            if args.print_config {
                print!("{}", cfg.to_json()?);
                return Ok(());
            }
            let out = harness::cmd_run(&cfg).context("run failed")?;
            eprintln!("{} records written to {}", out.records.len(), out.artifacts.results().display());
            println!("{RESULTS_HEADER}");
            for r in &out.records {
                println!("{}", r.csv_row());
            }
        }
        Command::BudgetCurve(args) => {
            let cfg = resolve_run(&args.run)?;
            let (out, curve) = harness::cmd_budget_curve(&cfg, &args.grid).context("budget curve failed")?;
            eprintln!("{} records written to {}", out.records.len(), out.artifacts.dir.display());
            println!("{}", serde_json::to_string_pretty(&curve)?);
        }
        Command::Verify(args) => {
            let opts = VerificationOptions {
                seed: args.seed,
                mutate_bce: args.mutate_bce,
            };
            let root = args.output_dir.unwrap_or_else(harness::default_output_root);
            let (report, path) = harness::cmd_verify(&opts, &root)?;
            for c in &report.checks {
                println!(
                    "{} {:<28} measured {:<12.6e} tolerance {:<12.6e} {}",
                    if c.passed { "PASS" } else { "FAIL" },
                    c.name,
                    c.measured,
                    c.tolerance,
                    c.detail
                );
            }
            eprintln!("report written to {}", path.display());
            if !report.passed {
                let failed: Vec<&str> = report.checks.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect();
                return Err(PmlError::Verification(failed.join(", ")).into());
            }
        }
        Command::Stats(args) => {
            let root = args.output_dir.unwrap_or_else(harness::default_output_root);
            let (report, path) = harness::cmd_stats(&args.inputs, &root)?;
            eprintln!("report written to {}", path.display());
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Command::NoiseInject(args) => {
            let cfg = NoiseConfig {
                input: args.data,
                format: args.format,
                rate: args.rate,
                seed: args.seed,
            };
            let root = args.output_dir.unwrap_or_else(harness::default_output_root);
            let path = harness::cmd_noise_inject(&cfg, args.output.as_deref(), &root)?;
            println!("{}", path.display());
        }
        Command::ExportPseudo(args) => {
            let mut cv = base_config(args.encoder.preset);
            args.encoder.apply(&mut cv.encoder);
            args.stage1.apply(&mut cv.stage1);
            let cfg = ExportConfig {
                data: args.data.source()?,
                noise_rate: args.noise,
                encoder: cv.encoder,
                stage1: cv.stage1,
                checkpoint: args.checkpoint,
                master_seed: args.seed,
                output_dir: args.output_dir,
            };
            let (_, path) = harness::cmd_export_pseudo(&cfg)?;
            println!("{}", path.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let code = e.chain().find_map(|c| c.downcast_ref::<PmlError>()).map_or(1, PmlError::exit_code);
            ExitCode::from(code as u8)
        }
    }
}
