//! `twostream`: data generation, two-stage training, fusion, evaluation,
//! ablation and attention export from the command line.
//!
//! Exit codes: 0 success, 2 usage, 3 missing file, 4 any other failure.
//! Failures print one line to stderr that starts with the error category.

use std::fs;
use std::io::ErrorKind;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use twostream_core::data::{generate_synthetic, load_dataset, write_dataset, Dataset, SyntheticConfig};
use twostream_core::fusion::{learn_weights, FusionWeights};
use twostream_core::gradsuite::{gradient_suite, GRAD_TOLERANCE};
use twostream_core::pipeline::{
    evaluate, run_ablation, train_collaborative, train_stream, AttentionConfig, Checkpoint, StreamModel, TrainConfig,
    TrainedModels, TwoStream,
};
use twostream_core::spatial::StreamTag;
use twostream_core::Error;

const STATIC_CKPT: &str = "static.ckpt";
const MOTION_CKPT: &str = "motion.ckpt";
const COLLAB_CKPT: &str = "collab.ckpt";

/// Effective configuration: flags override the config file, which
/// overrides the defaults. Echoed into every report.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
struct RunConfig {
    data: SyntheticConfig,
    train: TrainConfig,
}

#[derive(Parser)]
#[command(
    name = "twostream",
    version,
    about = "Two-stream spatial-temporal attention with collaborative learning"
)]
struct Cli {
    /// JSON file with optional `data` and `train` sections.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides both the data and the training seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    iterations: Option<usize>,
    #[arg(long, global = true)]
    learning_rate: Option<f64>,
    /// Omit the timestamp field so identical runs write identical bytes.
    #[arg(long, global = true)]
    no_timestamp: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum StreamChoice {
    Static,
    Motion,
    Both,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset as FVS files plus manifest.json.
    GenData {
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Stage one: train stream networks and write their checkpoints.
    Train {
        /// Manifest path.
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value = "both")]
        stream: StreamChoice,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        no_spatial: bool,
        #[arg(long)]
        no_temporal: bool,
    },
    /// Stage two: train the collaborative network on top of both streams.
    Collab {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoints: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Update stream parameters jointly instead of freezing them.
        #[arg(long)]
        finetune: bool,
    },
    /// Learn per-category fusion weights on the training split.
    Fuse {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoints: PathBuf,
        #[arg(long)]
        lambda: Option<f64>,
        #[arg(long)]
        epsilon: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score the test split; without --weights the streams are averaged.
    Eval {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoints: PathBuf,
        #[arg(long)]
        weights: Option<PathBuf>,
        #[arg(long)]
        report: PathBuf,
    },
    /// Train every attention and fusion variant and tabulate test accuracy.
    Ablate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write one video's spatial maps (JSON and PGM) and temporal weights.
    ExportAttention {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoints: PathBuf,
        #[arg(long)]
        video_id: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the finite-difference gradient suite.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::ManifestNotFound(_) => 3,
        Error::Io(e) if e.kind() == ErrorKind::NotFound => 3,
        _ => 4,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => e.exit(),
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("{}", e.to_string().replace('\n', " "));
            ExitCode::from(exit_code(&e))
        }
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig, Error> {
    let mut cfg = match &cli.config {
        Some(path) => serde_json::from_str(&fs::read_to_string(path)?)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.data.seed = seed;
        cfg.train.seed = seed;
    }
    if let Some(n) = cli.iterations {
        cfg.train.max_iterations = n;
    }
    if let Some(lr) = cli.learning_rate {
        cfg.train.learning_rate = lr;
    }
    Ok(cfg)
}

struct Reporter {
    command: &'static str,
    config: RunConfig,
    timestamp: bool,
}

impl Reporter {
    fn write(&self, path: &Path, result: Value) -> Result<(), Error> {
        let mut report = json!({
            "command": self.command,
            "config": self.config,
            "result": result,
        });
        if self.timestamp {
            let secs = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
            report["timestamp"] = json!(secs);
        }
        write_json(path, &report)
    }
}

fn write_json(path: &Path, value: &Value) -> Result<(), Error> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

fn ensure_dir(dir: &Path) -> Result<(), Error> {
    fs::create_dir_all(dir)?;
    Ok(())
}

fn load_stream(dir: &Path, stream: StreamTag) -> Result<StreamModel, Error> {
    let name = match stream {
        StreamTag::Static => STATIC_CKPT,
        StreamTag::Motion => MOTION_CKPT,
    };
    let model = Checkpoint::read(&dir.join(name))?.to_stream()?;
    if model.stream != stream {
        return Err(Error::CorruptFile(format!(
            "{name} holds the {} stream",
            model.stream.as_str()
        )));
    }
    Ok(model)
}

fn load_streams(dir: &Path) -> Result<TwoStream, Error> {
    Ok(TwoStream {
        static_model: load_stream(dir, StreamTag::Static)?,
        motion_model: load_stream(dir, StreamTag::Motion)?,
    })
}

/// Both streams plus the collaborative model when one was trained.
fn load_models(dir: &Path) -> Result<TrainedModels, Error> {
    let streams = load_streams(dir)?;
    let collab_path = dir.join(COLLAB_CKPT);
    let collab = if collab_path.exists() {
        Some(Checkpoint::read(&collab_path)?.to_collab()?)
    } else {
        None
    };
    Ok(TrainedModels { streams, collab })
}

fn run(cli: Cli) -> Result<ExitCode, Error> {
    let cfg = load_config(&cli)?;
    let reporter = |command| Reporter {
        command,
        config: cfg.clone(),
        timestamp: !cli.no_timestamp,
    };
    match &cli.command {
        Command::GenData { out_dir } => {
            ensure_dir(out_dir)?;
            let manifest = write_dataset(out_dir, &generate_synthetic(&cfg.data)?)?;
            println!("{}", manifest.display());
        }
        Command::Train {
            data,
            stream,
            out,
            no_spatial,
            no_temporal,
        } => {
            let dataset = load_dataset(data)?;
            let attention = AttentionConfig {
                spatial: !no_spatial,
                temporal: !no_temporal,
            };
            let streams: &[StreamTag] = match stream {
                StreamChoice::Static => &[StreamTag::Static],
                StreamChoice::Motion => &[StreamTag::Motion],
                StreamChoice::Both => &[StreamTag::Static, StreamTag::Motion],
            };
            ensure_dir(out)?;
            let mut logs = serde_json::Map::new();
            for &tag in streams {
                let (model, log) = train_stream(&dataset, tag, attention, &cfg.train)?;
                let name = if tag == StreamTag::Static {
                    STATIC_CKPT
                } else {
                    MOTION_CKPT
                };
                Checkpoint::from_stream(&model).write(&out.join(name))?;
                logs.insert(tag.as_str().into(), json!(log));
            }
            reporter("train").write(
                &out.join("train_report.json"),
                json!({ "attention": attention.label(), "logs": logs }),
            )?;
        }
        Command::Collab {
            data,
            checkpoints,
            out,
            finetune,
        } => {
            let dataset = load_dataset(data)?;
            let streams = load_streams(checkpoints)?;
            let mut rc = reporter("collab");
            rc.config.train.finetune_streams |= finetune;
            let (model, streams, log) = train_collaborative(&dataset, &streams, &rc.config.train)?;
            ensure_dir(out)?;
            // fine-tuning changes the streams, so they travel with the model
            Checkpoint::from_stream(&streams.static_model).write(&out.join(STATIC_CKPT))?;
            Checkpoint::from_stream(&streams.motion_model).write(&out.join(MOTION_CKPT))?;
            Checkpoint::from_collab(&model).write(&out.join(COLLAB_CKPT))?;
            rc.write(&out.join("collab_report.json"), json!({ "log": log }))?;
        }
        Command::Fuse {
            data,
            checkpoints,
            lambda,
            epsilon,
            out,
        } => {
            let dataset = load_dataset(data)?;
            let models = load_models(checkpoints)?;
            let train = &cfg.train;
            let weights = learn_weights(
                &models.scores(&dataset.train)?,
                lambda.unwrap_or(train.lambda),
                epsilon.unwrap_or(train.epsilon),
            )?;
            write_json(out, &weights.to_json())?;
        }
        Command::Eval {
            data,
            checkpoints,
            weights,
            report,
        } => {
            let dataset = load_dataset(data)?;
            let models = load_models(checkpoints)?;
            let weights = match weights {
                Some(path) => FusionWeights::from_json(&serde_json::from_str(&fs::read_to_string(path)?)?)?,
                None => FusionWeights::uniform(models.streams.static_model.classes()),
            };
            let result = evaluate(&dataset.test, &models, &weights)?;
            reporter("eval").write(
                report,
                json!({
                    "collaborative": models.collab.is_some(),
                    "weights": weights.to_json(),
                    "report": result,
                }),
            )?;
            println!("accuracy {:.4}  map {:.4}", result.accuracy, result.map_score);
        }
        Command::Ablate { data, out } => {
            let dataset = load_dataset(data)?;
            let outcome = run_ablation(&dataset, &cfg.train)?;
            ensure_dir(out)?;
            reporter("ablate").write(
                &out.join("ablation.json"),
                json!({ "table": outcome.table, "fusion_weights": outcome.weights.to_json() }),
            )?;
            let text = outcome.table.to_text();
            fs::write(out.join("ablation.txt"), &text)?;
            print!("{text}");
        }
        Command::ExportAttention {
            data,
            checkpoints,
            video_id,
            out,
        } => {
            let dataset = load_dataset(data)?;
            let streams = load_streams(checkpoints)?;
            export_attention(&dataset, &streams, video_id, out, &reporter("export-attention"))?;
        }
        Command::Gradcheck { seed } => {
            let cases = gradient_suite(*seed)?;
            let worst = cases.iter().max_by(|a, b| a.max_error.total_cmp(&b.max_error));
            let failed: Vec<_> = cases.iter().filter(|c| !c.passed()).collect();
            if let Some(w) = worst {
                println!(
                    "{} cases, worst {} at {:.3e} (tolerance {GRAD_TOLERANCE:e})",
                    cases.len(),
                    w.name,
                    w.max_error
                );
            }
            if let Some(first) = failed.first() {
                eprintln!(
                    "gradient-mismatch: {} of {} cases failed, first {} at {:.3e}",
                    failed.len(),
                    cases.len(),
                    first.name,
                    first.max_error
                );
                return Ok(ExitCode::from(4));
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

/// Plain PGM with each frame scaled to its own `0..=255` range; a constant
/// frame is written as all 255.
fn pgm(values: &[f64], height: usize, width: usize) -> String {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out = format!("P2\n{width} {height}\n255\n");
    for row in values.chunks(width) {
        let cells: Vec<String> = row
            .iter()
            .map(|&v| {
                let level = if hi > lo {
                    ((v - lo) / (hi - lo) * 255.0).round()
                } else {
                    255.0
                };
                (level as u8).to_string()
            })
            .collect();
        out += &cells.join(" ");
        out.push('\n');
    }
    out
}

fn export_attention(
    data: &Dataset,
    streams: &TwoStream,
    video_id: &str,
    out: &Path,
    reporter: &Reporter,
) -> Result<(), Error> {
    let video = data
        .train
        .iter()
        .chain(&data.val)
        .chain(&data.test)
        .find(|v| v.id == video_id)
        .ok_or_else(|| Error::BadConfig(format!("no video with id {video_id:?}")))?;
    let (h, w, _) = video.grid_dims();
    ensure_dir(out)?;
    let mut per_stream = serde_json::Map::new();
    for tag in [StreamTag::Static, StreamTag::Motion] {
        let model = streams.get(tag);
        let output = model.forward(std::slice::from_ref(video))?.remove(0);
        let mut grids = Vec::new();
        for (t, map) in output.spatial_attention.iter().enumerate() {
            fs::write(out.join(format!("{}_frame{t:02}.pgm", tag.as_str())), pgm(map, h, w))?;
            grids.push(map.chunks(w).map(<[f64]>::to_vec).collect::<Vec<_>>());
        }
        per_stream.insert(
            tag.as_str().into(),
            json!({
                "attention": model.attention.label(),
                "spatial": grids,
                "gamma": output.gamma,
                "temporal_weights": output.temporal_weights,
                "probabilities": output.probabilities,
            }),
        );
    }
    reporter.write(
        &out.join("attention.json"),
        json!({
            "video_id": video.id,
            "label": video.label,
            "grid": [h, w],
            "planted_frames": video.planted_frames,
            "planted_cells": video.planted_cells,
            "streams": per_stream,
        }),
    )
}
