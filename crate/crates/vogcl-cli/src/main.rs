use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use vogcl::metrics::AucMethod;
use vogcl::trainer::TrainMode;
use vogcl::vog::{ClassChoice, VogFormula};
use vogcl_cli::commands;
use vogcl_cli::config::{ExperimentConfig, Overrides};
use vogcl_cli::CliError;

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModeArg {
    Baseline,
    Curriculum,
    AntiCurriculum,
    ExternalScores,
}

impl From<ModeArg> for TrainMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Baseline => TrainMode::Baseline,
            ModeArg::Curriculum => TrainMode::Curriculum,
            ModeArg::AntiCurriculum => TrainMode::AntiCurriculum,
            ModeArg::ExternalScores => TrainMode::ExternalScores,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum FormulaArg {
    Standard,
    Literal,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ClassChoiceArg {
    True,
    Predicted,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum AucMethodArg {
    Macro,
    Weighted,
}

/// Curriculum-learning experiments driven by variance-of-gradients
/// difficulty scores.
#[derive(Parser)]
#[command(name = "vogcl", version, about)]
struct Cli {
    /// JSON experiment config; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,

    /// Master training seed (per-run seeds derive from it).
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Training mode for train/evaluate.
    #[arg(long, global = true)]
    mode: Option<ModeArg>,

    /// Curriculum horizon L: epochs until the schedule is uniform.
    #[arg(long, global = true)]
    curriculum_horizon: Option<usize>,

    /// Per-pixel deviation statistic used by the scorer.
    #[arg(long, global = true)]
    vog_formula: Option<FormulaArg>,

    /// Which logit the input gradient is taken from.
    #[arg(long, global = true)]
    class_choice: Option<ClassChoiceArg>,

    /// Z-score scores within each class before ranking.
    #[arg(long, global = true)]
    class_normalize: bool,

    /// Multi-class AUC aggregation.
    #[arg(long, global = true)]
    auc_method: Option<AucMethodArg>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic dataset and print the class-count table.
    GenerateData,
    /// Train one mode, writing checkpoints and a loss log.
    Train,
    /// Score training samples from the baseline checkpoints.
    Vog,
    /// Evaluate a trained mode on the balanced test subsets.
    Evaluate,
    /// Run all modes x runs and write the mean/std comparison tables.
    Compare {
        /// Comma-separated subset of modes (default: all available).
        #[arg(long)]
        modes: Option<String>,
    },
    /// Export the sampling-probability trajectory.
    SchedulePreview {
        /// Explicit comma-separated ranks (e.g. "1,2,3,4") instead of the
        /// scores file.
        #[arg(long)]
        ranks: Option<String>,
        /// Epochs to export (default: horizon + 1).
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Class-level mean difficulty from one or more scores files.
    Histogram {
        /// Scores CSVs (default: the config's vog_scores.csv).
        #[arg(long)]
        scores: Vec<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut config = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    let overrides = Overrides {
        mode: cli.mode.map(Into::into),
        seed: cli.seed,
        curriculum_horizon: cli.curriculum_horizon,
        vog_formula: cli.vog_formula.map(|f| match f {
            FormulaArg::Standard => VogFormula::Standard,
            FormulaArg::Literal => VogFormula::Literal,
        }),
        class_choice: cli.class_choice.map(|c| match c {
            ClassChoiceArg::True => ClassChoice::TrueLabel,
            ClassChoiceArg::Predicted => ClassChoice::Predicted,
        }),
        class_normalize: cli.class_normalize,
        auc_method: cli.auc_method.map(|a| match a {
            AucMethodArg::Macro => AucMethod::OneVsRestMacro,
            AucMethodArg::Weighted => AucMethod::OneVsRestWeighted,
        }),
        output_dir: cli.output_dir.clone(),
    };
    overrides.apply(&mut config);
    config.validate()?;

    match cli.command {
        Command::GenerateData => commands::cmd_generate_data(&config),
        Command::Train => commands::cmd_train(&config),
        Command::Vog => commands::cmd_vog(&config),
        Command::Evaluate => commands::cmd_evaluate(&config),
        Command::Compare { modes } => {
            let modes = modes.map(|m| commands::parse_modes(&m)).transpose()?;
            commands::cmd_compare(&config, modes)
        }
        Command::SchedulePreview { ranks, epochs } => {
            commands::cmd_schedule_preview(&config, ranks, epochs)
        }
        Command::Histogram { scores } => commands::cmd_histogram(&config, &scores),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
