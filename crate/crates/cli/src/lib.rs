//! Command-line front end: `synth`, `train`, `eval`, `predict`, `count`, `viz`.
//!
//! Exit codes: 0 success, 1 invalid usage or configuration, 2 runtime failure.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use seqlane::checkpoint::{load_checkpoint, save_checkpoint};
use seqlane::complexity::complexity_report;
use seqlane::data::{
    load_dataset, write_synth_dataset, ChallengeMix, DatasetIndex, ImageSequence, LoadConfig, SynthConfig,
};
use seqlane::metrics::{PrCurveConfig, ThresholdMode};
use seqlane::model::{predict_mask, StreamingPredictor};
use seqlane::nn::ParamStore;
use seqlane::trainer::{evaluate, train, TrainConfig};
use seqlane::viz::{attention_heatmaps, red_overlay, save_gray, save_rgb, stage_heatmaps};
use seqlane::{AttentionVariant, Error, ExtractorKind, ModelConfig, SequenceModel};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "seqlane", version, about = "Sequence-to-one lane segmentation")]
struct Cli {
    #[command(flatten)]
    shared: Shared,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum VariantArg {
    Tem,
    St,
    Stfc,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ExtractorArg {
    Lstm,
    Gru,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ChallengeArg {
    Default,
    None,
    Occlusion,
}

#[derive(Debug, Args)]
struct Shared {
    /// Attention variant.
    #[arg(long, global = true, value_enum, default_value = "st")]
    variant: VariantArg,
    /// Recurrent cell inside the attention module.
    #[arg(long, global = true, value_enum, default_value = "lstm")]
    extractor: ExtractorArg,
    /// Frames per input sequence.
    #[arg(long, global = true, default_value_t = 5)]
    frames: usize,
    #[arg(long, global = true, default_value_t = 128)]
    height: usize,
    #[arg(long, global = true, default_value_t = 256)]
    width: usize,
    /// Divides the 64/128/256/512 channel schedule.
    #[arg(long, global = true, default_value_t = 1)]
    channel_div: usize,
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Flat key=value file; its entries override flags.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Render a synthetic dataset and its index file.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 10)]
        num: usize,
        /// Comma-separated frame strides, one index entry each.
        #[arg(long, default_value = "1", value_delimiter = ',')]
        strides: Vec<usize>,
        #[arg(long, value_enum, default_value = "default")]
        challenges: ChallengeArg,
    },
    /// Train from an index file; writes the best checkpoint and the epoch log.
    Train {
        #[arg(long)]
        index: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Held-out index for per-epoch F1; the training set when absent.
        #[arg(long)]
        eval_index: Option<PathBuf>,
        #[arg(long, default_value_t = 10)]
        epochs: usize,
        #[arg(long, default_value_t = 0.01)]
        lr: f64,
        #[arg(long, default_value_t = 0.95)]
        decay: f64,
        #[arg(long, default_value_t = 0.9)]
        momentum: f64,
        /// 4 is a practical choice on a CPU.
        #[arg(long, default_value_t = 64)]
        batch: usize,
        #[arg(long)]
        augment: bool,
        /// Stop once the evaluation F1 reaches this value.
        #[arg(long)]
        target_f1: Option<f64>,
    },
    /// Pixel metrics and mAP of a checkpoint on an index.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        index: PathBuf,
        /// Thresholds per frame for mAP.
        #[arg(long, default_value_t = 100)]
        thresholds: usize,
        /// Evenly spaced thresholds instead of per-frame order statistics.
        #[arg(long)]
        grid: bool,
    },
    /// Write predicted masks and red overlays for every entry.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        index: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Carry the recurrent state from one entry to the next.
        #[arg(long)]
        stream: bool,
    },
    /// Print parameter and MAC counts.
    Count,
    /// Write activation heatmaps of one stage and the attention maps.
    Viz {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        index: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        entry: usize,
        #[arg(long, default_value = "Up_ConvBlock_4")]
        stage: String,
    },
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) | Error::InvalidArgument(_) | Error::UnknownStage(_) => Failure::Usage(e.to_string()),
            other => Failure::Runtime(other.to_string()),
        }
    }
}

type Outcome<T = ()> = Result<T, Failure>;

fn runtime(e: impl std::fmt::Display) -> Failure {
    Failure::Runtime(e.to_string())
}

const MODEL_KEYS: [&str; 7] = ["variant", "extractor", "frames", "height", "width", "channel_div", "stream_hidden"];

struct Settings {
    model: ModelConfig,
    train: TrainConfig,
}

fn model_from_flags(s: &Shared) -> ModelConfig {
    ModelConfig {
        variant: match s.variant {
            VariantArg::Tem => AttentionVariant::TemAtt,
            VariantArg::St => AttentionVariant::StAtt,
            VariantArg::Stfc => AttentionVariant::StfcAtt,
        },
        extractor: match s.extractor {
            ExtractorArg::Lstm => ExtractorKind::Lstm,
            ExtractorArg::Gru => ExtractorKind::Gru,
        },
        frames: s.frames,
        height: s.height,
        width: s.width,
        channel_div: s.channel_div,
        stream_hidden: false,
    }
}

/// Applies a key=value file on top of the flag values.
fn apply_config_file(path: &Path, settings: &mut Settings) -> Outcome {
    let text = fs::read_to_string(path).map_err(|e| Failure::Usage(format!("config {}: {e}", path.display())))?;
    for (no, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Failure::Usage(format!("config line {}: expected key=value", no + 1)))?;
        let (k, v) = (k.trim(), v.trim());
        let result = if MODEL_KEYS.contains(&k) {
            settings.model.set(k, v)
        } else {
            settings.train.set(k, v)
        };
        result.map_err(|e| Failure::Usage(format!("config line {}: {e}", no + 1)))?;
    }
    Ok(())
}

fn settings(shared: &Shared) -> Outcome<Settings> {
    let mut s = Settings {
        model: model_from_flags(shared),
        train: TrainConfig {
            seed: shared.seed,
            ..TrainConfig::default()
        },
    };
    if let Some(path) = &shared.config {
        apply_config_file(path, &mut s)?;
    }
    s.model.validate()?;
    Ok(s)
}

fn load_index(path: &Path, cfg: &ModelConfig, err: &mut dyn Write) -> Outcome<Vec<ImageSequence>> {
    let index = DatasetIndex::read(path)?;
    let report = load_dataset(
        &index,
        &LoadConfig {
            frames: cfg.frames,
            height: cfg.height,
            width: cfg.width,
        },
    );
    for f in &report.failures {
        let _ = writeln!(err, "skipped {f}");
    }
    if report.failure_count() > 0 {
        let _ = writeln!(err, "{} of {} entries skipped", report.failure_count(), index.entries.len());
    }
    if report.sequences.is_empty() {
        return Err(Failure::Runtime(format!("{}: no loadable entries", path.display())));
    }
    Ok(report.sequences)
}

fn create_dir(dir: &Path) -> Outcome {
    fs::create_dir_all(dir).map_err(|e| Failure::Runtime(format!("{}: {e}", dir.display())))
}

fn load_model(path: &Path) -> Outcome<(SequenceModel, ParamStore<f32>)> {
    let (params, cfg) = load_checkpoint(path)?;
    Ok((SequenceModel::new(&cfg)?, params))
}

fn execute(cli: Cli, out: &mut dyn Write, err: &mut dyn Write) -> Outcome {
    let mut s = settings(&cli.shared)?;
    match cli.command {
        Command::Synth {
            out: dir,
            num,
            strides,
            challenges,
        } => {
            let cfg = SynthConfig {
                sequences: num,
                frames: s.model.frames,
                height: s.model.height,
                width: s.model.width,
                strides,
                seed: s.train.seed,
                challenges: match challenges {
                    ChallengeArg::Default => ChallengeMix::default(),
                    ChallengeArg::None => ChallengeMix::none(),
                    ChallengeArg::Occlusion => ChallengeMix::occlusion_only(),
                },
            };
            let index = write_synth_dataset(&dir, &cfg)?;
            writeln!(out, "sequences={num}\nentries={}\nclip_frames={}", index.entries.len(), cfg.clip_len())
                .map_err(runtime)?;
        }
        Command::Train {
            index,
            out: dir,
            eval_index,
            epochs,
            lr,
            decay,
            momentum,
            batch,
            augment,
            target_f1,
        } => {
            let file_train = s.train.clone();
            s.train = TrainConfig {
                lr0: lr,
                decay,
                momentum,
                batch_size: batch,
                epochs,
                augment,
                target_f1,
                ..file_train
            };
            if let Some(path) = &cli.shared.config {
                apply_config_file(path, &mut s)?;
            }
            s.train.validate()?;
            let train_set = load_index(&index, &s.model, err)?;
            let eval_set = match &eval_index {
                Some(p) => load_index(p, &s.model, err)?,
                None => Vec::new(),
            };
            create_dir(&dir)?;
            let ckpt = dir.join("checkpoint.bin");
            let log_path = dir.join("train.log");
            let mut log = fs::File::create(&log_path).map_err(|e| runtime(format!("{}: {e}", log_path.display())))?;
            let result = train(&s.model, &train_set, &eval_set, &s.train, Some(&ckpt), &mut log)?;
            save_checkpoint(&result.last, &s.model, &dir.join("last.bin"))?;
            writeln!(
                out,
                "epochs_run={}\nbest_epoch={}\nbest_f1={:.6}\ncheckpoint={}",
                result.history.len(),
                result.best_epoch.map_or("none".to_string(), |e| e.to_string()),
                result.best_f1,
                ckpt.display()
            )
            .map_err(runtime)?;
            if let Some(reason) = result.halted {
                return Err(Failure::Runtime(format!("training halted: {reason}")));
            }
        }
        Command::Eval {
            checkpoint,
            index,
            thresholds,
            grid,
        } => {
            if thresholds == 0 {
                return Err(Failure::Usage("--thresholds must be at least 1".into()));
            }
            let (model, params) = load_model(&checkpoint)?;
            let data = load_index(&index, model.config(), err)?;
            let pr = PrCurveConfig {
                thresholds,
                mode: if grid { ThresholdMode::Grid } else { ThresholdMode::Quantile },
            };
            let report = evaluate(&model, &params, &data, Some(&pr))?;
            write!(out, "sequences={}\n{}", data.len(), report.key_values()).map_err(runtime)?;
        }
        Command::Predict {
            checkpoint,
            index,
            out: dir,
            stream,
        } => {
            let (params, mut cfg) = load_checkpoint(&checkpoint)?;
            cfg.stream_hidden = stream;
            let model = SequenceModel::new(&cfg)?;
            let data = load_index(&index, &cfg, err)?;
            create_dir(&dir)?;
            let mut predictor = StreamingPredictor::new(&model, &params);
            for (i, seq) in data.iter().enumerate() {
                let pass = predictor.step(&seq.frames)?;
                let mask = predict_mask(&pass.logits)?;
                seqlane::data::write_mask_png(&dir.join(format!("mask_{i:04}.png")), &mask)?;
                let overlay = red_overlay(seq.frames.last().expect("validated sequence"), &mask)?;
                save_rgb(&dir.join(format!("overlay_{i:04}.png")), &overlay)?;
            }
            writeln!(out, "predicted={}", data.len()).map_err(runtime)?;
        }
        Command::Count => {
            let report = complexity_report(&s.model)?;
            write!(out, "{report}\n{}", report.key_values()).map_err(runtime)?;
        }
        Command::Viz {
            checkpoint,
            index,
            out: dir,
            entry,
            stage,
        } => {
            let (model, params) = load_model(&checkpoint)?;
            let data = load_index(&index, model.config(), err)?;
            let seq = data
                .get(entry)
                .ok_or_else(|| Failure::Usage(format!("entry {entry} out of range ({} loaded)", data.len())))?;
            let pass = model.forward(&params, &seq.frames)?;
            let cfg = model.config();
            let maps = stage_heatmaps(&pass, &stage, cfg.height, cfg.width)?;
            create_dir(&dir)?;
            let mut written = 0;
            for (k, img) in maps.iter().enumerate() {
                let name = if maps.len() == 1 {
                    format!("{stage}.png")
                } else {
                    format!("{stage}_frame{k}.png")
                };
                save_gray(&dir.join(name), img)?;
                written += 1;
            }
            for (k, img) in attention_heatmaps(&pass.trace, 16).iter().enumerate() {
                save_gray(&dir.join(format!("attention_frame{k}.png")), img)?;
                written += 1;
            }
            writeln!(out, "images={written}").map_err(runtime)?;
        }
    }
    Ok(())
}

/// Runs the command line with explicit output streams.
pub fn run_with<I, S>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let text = e.render().to_string();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{text}");
                    EXIT_OK
                }
                _ => {
                    let _ = write!(err, "{text}");
                    EXIT_USAGE
                }
            };
        }
    };
    match execute(cli, out, err) {
        Ok(()) => EXIT_OK,
        Err(Failure::Usage(m)) => {
            let _ = writeln!(err, "error: {m}");
            EXIT_USAGE
        }
        Err(Failure::Runtime(m)) => {
            let _ = writeln!(err, "error: {m}");
            EXIT_RUNTIME
        }
    }
}

pub fn run<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    run_with(argv, &mut std::io::stdout(), &mut std::io::stderr())
}
