use std::fs;
use std::io::BufWriter;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use wcr::data::{evaluate, generate_dataset, load_dataset, write_pfm, write_png, EvalConfig, EvalSplit, Frame, SynthConfig};
use wcr::training::{load_model, save_model, train, TrainConfig};

#[derive(Parser)]
#[command(name = "wcr", version, about = "Novel-view synthesis with warp-conditioned ray embeddings")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic multi-view dataset.
    Synth {
        #[arg(long)]
        scenes: usize,
        #[arg(long)]
        frames: usize,
        /// Image size as HEIGHTxWIDTH.
        #[arg(long, value_parser = parse_size)]
        size: (usize, usize),
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model and write a checkpoint.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render one target frame of a scene from chosen source frames.
    Render {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        scene: String,
        #[arg(long, value_delimiter = ',', required = true)]
        sources: Vec<usize>,
        #[arg(long)]
        target: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a checkpoint on a split and write a CSV report.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_parser = parse_split)]
        split: EvalSplit,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 5)]
        repetitions: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

/// Training config file: every training setting plus an optional log path.
#[derive(Serialize, Deserialize)]
struct TrainFile {
    #[serde(flatten)]
    train: TrainConfig,
    /// Per-iteration CSV log; defaults to `<out>.log.csv`.
    #[serde(default)]
    log: Option<PathBuf>,
}

fn parse_size(s: &str) -> Result<(usize, usize), String> {
    let (h, w) = s.split_once(['x', 'X']).ok_or("expected HEIGHTxWIDTH")?;
    let h = h.trim().parse().map_err(|_| format!("bad height `{h}`"))?;
    let w = w.trim().parse().map_err(|_| format!("bad width `{w}`"))?;
    Ok((h, w))
}

fn parse_split(s: &str) -> Result<EvalSplit, String> {
    s.parse().map_err(|e: wcr::Error| e.to_string())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::Synth {
            scenes,
            frames,
            size: (height, width),
            seed,
            out,
        } => {
            let cfg = SynthConfig {
                n_scenes: scenes,
                n_frames: frames,
                width,
                height,
                seed,
            };
            let ds = generate_dataset(&cfg, &out)?;
            log::info!("wrote {} scenes to {}", ds.scenes.len(), out.display());
        }
        Command::Train { config, data, out } => {
            let text = fs::read_to_string(&config).with_context(|| format!("reading {}", config.display()))?;
            let file: TrainFile = serde_json::from_str(&text).with_context(|| format!("parsing {}", config.display()))?;
            let ds = load_dataset(&data)?;
            let log_path = file.log.unwrap_or_else(|| PathBuf::from(format!("{}.log.csv", out.display())));
            let mut log = BufWriter::new(fs::File::create(&log_path).with_context(|| format!("creating {}", log_path.display()))?);
            log::info!("training {} iterations on {} scenes", file.train.iterations, ds.train_scenes().count());
            let model = train(&ds, &file.train, Some(&mut log))?;
            save_model(&out, &model, &file.train)?;
            log::info!("saved {}", out.display());
        }
        Command::Render {
            ckpt,
            data,
            scene,
            sources,
            target,
            out,
        } => {
            let (model, cfg) = load_model(&ckpt)?;
            let ds = load_dataset(&data)?;
            let scene = ds.scene(&scene)?;
            let n = scene.frames.len();
            if let Some(bad) = sources.iter().chain([&target]).find(|&&i| i >= n) {
                bail!("frame {bad} out of range; scene has {n} frames");
            }
            if sources.contains(&target) {
                bail!("target frame {target} is also a source");
            }
            let src: Vec<&Frame> = sources.iter().map(|&i| &scene.frames[i]).collect();
            let cam = &scene.frames[target].camera;
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            let img = model.render(&src, cam, scene.near, scene.far, &cfg.eval_render_config(), &mut rng)?;
            fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
            write_png(&out.join("rgb.png"), &img.rgb)?;
            write_png(&out.join("mask.png"), &img.mask)?;
            write_pfm(&out.join("depth.pfm"), &img.depth)?;
            log::info!("rendered frame {target} of {} into {}", scene.id, out.display());
        }
        Command::Eval {
            ckpt,
            data,
            split,
            out,
            repetitions,
            seed,
        } => {
            let (model, cfg) = load_model(&ckpt)?;
            let ds = load_dataset(&data)?;
            let eval_cfg = EvalConfig {
                repetitions,
                seed,
                render: cfg.eval_render_config(),
                ..EvalConfig::default()
            };
            let report = evaluate(&model, &ds, split, &eval_cfg)?;
            report.write_csv(&out)?;
            for a in report.aggregates() {
                log::info!("{} sources: l1_rgb {:.4} iou {:.4} l1_depth {:.4}", a.n_src, a.l1_rgb, a.iou, a.l1_depth);
            }
        }
    }
    Ok(())
}
