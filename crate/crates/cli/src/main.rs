//! `cinetrack`: command-line client for the dataset, training and review
//! service. Without `--server` each command starts an in-process server on a
//! loopback port and talks to it over HTTP.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use cinetrack_client::Client;
use cinetrack_core::metrics::KlDirection;
use cinetrack_core::model::TrainMode;
use cinetrack_core::pipeline::{EvalJob, PipelineConfig, SurveyJob, TrainData, TrainJob};
use cinetrack_service::{ReviewConfig, ServiceConfig};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

#[derive(Parser)]
#[command(name = "cinetrack", version, about = "Film soundtrack dataset tooling")]
struct Cli {
    /// Pipeline configuration, TOML or JSON by extension.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for every stochastic step.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Base URL of a running service; by default one is started in-process.
    #[arg(long, global = true)]
    server: Option<String>,
    #[command(flatten)]
    thresholds: ThresholdArgs,
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ThresholdArgs {
    #[arg(long, global = true)]
    threshold_silence_weight: Option<f64>,
    #[arg(long, global = true)]
    threshold_music_gate: Option<f64>,
    #[arg(long, global = true)]
    threshold_min_len: Option<f64>,
    #[arg(long, global = true)]
    threshold_max_gap: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Separate, segment, gate and match every film into the manifest.
    Build,
    /// Write finalized clips and prompts as a training set.
    Export {
        #[arg(long)]
        out: PathBuf,
    },
    /// Fine-tune the decoder on an export or on the synthetic fixture.
    Train {
        #[arg(long)]
        out: PathBuf,
        /// Export directory to train on.
        #[arg(
            long,
            conflicts_with = "synthetic",
            required_unless_present = "synthetic"
        )]
        data: Option<PathBuf>,
        /// Precomputed video embeddings, one tensor per clip id.
        #[arg(long, requires = "data")]
        video_dir: Option<PathBuf>,
        #[arg(long)]
        synthetic: bool,
        #[arg(long, default_value = "adapter")]
        mode: TrainMode,
        #[arg(long)]
        max_epochs: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
    },
    /// Compare generated embeddings against a reference set.
    Eval {
        #[arg(long)]
        reference: PathBuf,
        #[arg(long)]
        generated: PathBuf,
        #[arg(long, requires = "generated_probs")]
        reference_probs: Option<PathBuf>,
        #[arg(long, requires = "reference_probs")]
        generated_probs: Option<PathBuf>,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long, value_enum)]
        kl_direction: Option<KlArg>,
        /// Also write the report to this file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Pick representative clips for a listening survey.
    SelectSurvey {
        #[arg(long)]
        embeddings: PathBuf,
        #[arg(long, default_value_t = 10)]
        k: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the review service in the foreground.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        listen: SocketAddr,
        /// The two annotator ids, comma separated.
        #[arg(long, value_delimiter = ',', required = true)]
        annotators: Vec<String>,
        /// Manifest to review; defaults to the one in the config.
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        wal: Option<PathBuf>,
        /// Directory served under /media; defaults to the working directory.
        #[arg(long)]
        media_root: Option<PathBuf>,
        /// Static files for the annotation UI.
        #[arg(long)]
        ui_dir: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum KlArg {
    RefToGen,
    GenToRef,
}

impl From<KlArg> for KlDirection {
    fn from(k: KlArg) -> Self {
        match k {
            KlArg::RefToGen => KlDirection::RefToGen,
            KlArg::GenToRef => KlDirection::GenToRef,
        }
    }
}

fn absolute(p: &Path) -> Result<PathBuf> {
    std::path::absolute(p).with_context(|| format!("resolving {}", p.display()))
}

fn load_config(cli: &Cli) -> Result<PipelineConfig> {
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p).with_context(|| format!("loading {}", p.display()))?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    let t = &cli.thresholds;
    let th = &mut cfg.thresholds;
    th.silence_weight = t.threshold_silence_weight.unwrap_or(th.silence_weight);
    th.music_gate = t.threshold_music_gate.unwrap_or(th.music_gate);
    th.min_len = t.threshold_min_len.unwrap_or(th.min_len);
    th.max_gap = t.threshold_max_gap.unwrap_or(th.max_gap);
    // The server may run elsewhere, so paths travel resolved.
    cfg.input_root = absolute(&cfg.input_root)?;
    cfg.manifest = absolute(&cfg.manifest)?;
    cfg.work_dir = absolute(&cfg.work_dir)?;
    cfg.validate()?;
    Ok(cfg)
}

fn print_json<T: Serialize>(value: &T, out: Option<&Path>) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    println!("{text}");
    if let Some(path) = out {
        std::fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

async fn connect(server: Option<&str>) -> Result<Client> {
    let base = match server {
        Some(url) => url.to_string(),
        None => {
            let (addr, _) =
                cinetrack_service::spawn(ServiceConfig::default(), "127.0.0.1:0".parse()?).await?;
            format!("http://{addr}")
        }
    };
    Ok(Client::new(base)?)
}

async fn run(cli: Cli) -> Result<ExitCode> {
    let cfg = load_config(&cli)?;
    if let Command::Serve {
        listen,
        annotators,
        manifest,
        wal,
        media_root,
        ui_dir,
    } = &cli.command
    {
        let [a, b]: [String; 2] = annotators
            .clone()
            .try_into()
            .map_err(|_| anyhow::anyhow!("--annotators takes exactly two ids"))?;
        let manifest = manifest.clone().unwrap_or(cfg.manifest.clone());
        let config = ServiceConfig {
            review: Some(ReviewConfig {
                wal: wal
                    .clone()
                    .unwrap_or_else(|| ReviewConfig::default_wal(&manifest)),
                manifest,
                annotators: [a, b],
            }),
            media_root: media_root.clone().or_else(|| std::env::current_dir().ok()),
            ui_dir: ui_dir.clone(),
        };
        let app = cinetrack_service::router(config)?;
        let listener = tokio::net::TcpListener::bind(listen)
            .await
            .with_context(|| format!("binding {listen}"))?;
        eprintln!("serving on http://{}", listener.local_addr()?);
        cinetrack_service::serve(listener, app).await?;
        return Ok(ExitCode::SUCCESS);
    }

    let client = connect(cli.server.as_deref()).await?;
    match cli.command {
        Command::Build => {
            let report = client.build(&cfg).await?;
            print_json(&report, None)?;
            if !report.failures.is_empty() {
                eprintln!("{} film(s) failed", report.failures.len());
                return Ok(ExitCode::FAILURE);
            }
        }
        Command::Export { out } => {
            let report = client.export(&cfg, absolute(&out)?).await?;
            print_json(&report, None)?;
        }
        Command::Train {
            out,
            data,
            video_dir,
            synthetic,
            mode,
            max_epochs,
            lr,
        } => {
            let data = match (synthetic, data) {
                (true, _) => TrainData::Synthetic { seed: cfg.seed },
                (false, Some(dir)) => TrainData::Export {
                    dir: absolute(&dir)?,
                    video_dir: video_dir.as_deref().map(absolute).transpose()?,
                },
                (false, None) => bail!("either --data or --synthetic is required"),
            };
            let mut train = cfg.train.clone();
            if max_epochs.is_some() || lr.is_some() || cli.seed.is_some() {
                let t = train.get_or_insert_with(|| match data {
                    TrainData::Synthetic { .. } => {
                        cinetrack_core::model::train::conditioning_fixture().2
                    }
                    TrainData::Export { .. } => Default::default(),
                });
                t.max_epochs = max_epochs.unwrap_or(t.max_epochs);
                t.lr = lr.unwrap_or(t.lr);
                t.seed = cli.seed.unwrap_or(t.seed);
            }
            let job = TrainJob {
                data,
                out_dir: absolute(&out)?,
                mode,
                decoder: cfg.decoder.clone(),
                train,
            };
            print_json(&client.train(&job).await?, None)?;
        }
        Command::Eval {
            reference,
            generated,
            reference_probs,
            generated_probs,
            k,
            kl_direction,
            out,
        } => {
            let mut options = cfg.eval;
            options.seed = cfg.seed;
            options.k = k.unwrap_or(options.k);
            if let Some(d) = kl_direction {
                options.kl_direction = d.into();
            }
            let job = EvalJob {
                reference_dir: absolute(&reference)?,
                generated_dir: absolute(&generated)?,
                reference_probs_dir: reference_probs.as_deref().map(absolute).transpose()?,
                generated_probs_dir: generated_probs.as_deref().map(absolute).transpose()?,
                options,
            };
            print_json(&client.eval(&job).await?, out.as_deref())?;
        }
        Command::SelectSurvey { embeddings, k, out } => {
            let job = SurveyJob {
                embeddings_dir: absolute(&embeddings)?,
                k,
                seed: cfg.seed,
            };
            print_json(&client.select_survey(&job).await?, out.as_deref())?;
        }
        Command::Serve { .. } => unreachable!("handled above"),
    }
    Ok(ExitCode::SUCCESS)
}

#[tokio::main]
async fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env()
                .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new(level)),
        )
        .with_writer(std::io::stderr)
        .init();
    match run(cli).await {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
