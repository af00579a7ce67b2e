use std::fs;
use std::io::{self, BufReader};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use vidcurate::config::{ConfigError, PipelineConfig};
use vidcurate::media::FfmpegBackend;
use vidcurate::model::{parse_manifest, write_manifest, VideoRecord};
use vidcurate::pipeline::{emit_histograms, Pipeline, PipelineError, RunOutput, Summary};
use vidcurate::scorer::ScorerGateway;

#[derive(Parser)]
#[command(name = "vidcurate", version, about = "Curate raw video manifests into training sets")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Pipeline configuration (JSON).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Input NDJSON manifest.
    #[arg(long)]
    input: PathBuf,
    /// Worker threads; overrides the config, 0 means one per core.
    #[arg(long)]
    workers: Option<usize>,
    /// Precomputed score file, may be repeated.
    #[arg(long = "score-file")]
    score_files: Vec<PathBuf>,
    /// Scorer sidecar command line, may be repeated.
    #[arg(long = "sidecar")]
    sidecars: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Run the whole pipeline and write manifests, histograms and a summary.
    Run {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Fill in media information for every record.
    Probe {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        output: PathBuf,
    },
    /// Compute each record's branch metrics without filtering.
    Metrics {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        output: PathBuf,
    },
    /// Apply branch filter rules to metrics already in the manifest.
    Filter {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        output: PathBuf,
    },
    /// Speed up qualifying slow clips.
    Accelerate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        output: PathBuf,
    },
    /// Choose records under the pixel budget.
    Select {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        output: PathBuf,
        /// Use the exact selector (at most 25 candidates).
        #[arg(long)]
        exact: bool,
    },
    /// Write histograms and a summary for a manifest.
    Report {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out_dir: PathBuf,
    },
}

fn load_config(common: &Common, required: bool) -> Result<PipelineConfig> {
    let mut config = match &common.config {
        Some(path) => PipelineConfig::load(path)?,
        None if required => return Err(ConfigError::Invalid("--config is required".into()).into()),
        None => PipelineConfig::with_budget(u64::MAX),
    };
    if let Some(w) = common.workers {
        config.workers = w;
    }
    config.providers.score_files.extend(common.score_files.iter().cloned());
    config.providers.sidecars.extend(common.sidecars.iter().cloned());
    Ok(config)
}

fn read_input(path: &Path) -> Result<Vec<VideoRecord>> {
    let file = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    Ok(parse_manifest(BufReader::new(file)).with_context(|| format!("reading {}", path.display()))?)
}

fn write_output(path: &Path, records: &[VideoRecord]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let file = fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
    write_manifest(records, io::BufWriter::new(file)).with_context(|| format!("writing {}", path.display()))
}

fn execute(command: Command) -> Result<()> {
    let (common, config_required) = match &command {
        Command::Run { common, .. }
        | Command::Metrics { common, .. }
        | Command::Filter { common, .. }
        | Command::Accelerate { common, .. }
        | Command::Select { common, .. } => (common, true),
        Command::Probe { common, .. } | Command::Report { common, .. } => (common, false),
    };
    let mut config = load_config(common, config_required)?;
    let records = read_input(&common.input)?;
    let media = FfmpegBackend::new(config.media.clone());
    let needs_scorer = matches!(command, Command::Run { .. } | Command::Metrics { .. } | Command::Select { .. });
    let scorer = if needs_scorer {
        ScorerGateway::launch(
            &config.providers.score_files,
            &config.providers.sidecars,
            Duration::from_secs_f64(config.providers.timeout_s),
        )?
    } else {
        ScorerGateway::launch(&[], &[], Duration::from_secs(1))?
    };
    if let Command::Select { exact: true, .. } = command {
        config.selection.exact = true;
    }
    let pipeline = Pipeline::new(&config, &media, &scorer, config.workers)?;

    match command {
        Command::Run { out_dir, .. } => {
            let out = pipeline.run(records)?;
            out.write(&out_dir)?;
            let c = &out.summary.records;
            log::info!("{} input, {} kept, {} dropped", c.input, c.kept, c.dropped);
        }
        Command::Probe { output, .. } => write_output(&output, &pipeline.probe_all(records))?,
        Command::Metrics { output, .. } => write_output(&output, &pipeline.run_branches(records, false))?,
        Command::Filter { output, .. } => write_output(&output, &pipeline.filter_only(records))?,
        Command::Accelerate { output, .. } => write_output(&output, &pipeline.accelerate_stage(records))?,
        Command::Select { output, .. } => {
            let (records, summary) = pipeline.select_stage(records);
            log::info!(
                "{} of {} candidates selected using {} of {} pixels",
                summary.selected,
                summary.candidates,
                summary.used,
                summary.budget
            );
            write_output(&output, &records)?
        }
        Command::Report { out_dir, .. } => {
            let histograms = emit_histograms(&records, config.histogram_bins);
            let summary = Summary::tally(&records, records.len()).with_histograms(&histograms);
            RunOutput {
                records,
                histograms,
                summary,
            }
            .write(&out_dir)?;
        }
    }
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<ConfigError>() {
            return 2;
        }
        if let Some(p) = cause.downcast_ref::<PipelineError>() {
            return match p {
                PipelineError::Config(_) => 2,
                PipelineError::SystemicProviderFailure { .. } => 3,
                PipelineError::Io(_) => 1,
            };
        }
    }
    1
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
