//! `plantforge` command-line pipeline.
//!
//! Each subcommand runs one stage and writes its artifacts to disk, so the
//! stages can be chained by hand or from scripts:
//!
//! ```text
//! plantforge lsystem --builtin bean --out bean.obj --points bean.ply --count 200000
//! plantforge preprocess --in bean.ply --out clean.ply
//! plantforge init --in clean.ply --out scene.ply
//! plantforge dream --scene scene.ply --config run.toml --guidance oracle:target.png --out final.ply
//! plantforge eval --scene final.ply --views views.json --gt gt/ --out report.json
//! ```
//!
//! Exit status is 0 on success, 1 when a stage fails and 2 when a
//! configuration file cannot be parsed (or on command-line usage errors).

mod stages;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use env_logger::Env;
use plantforge::pointcloud::RecolorMode;

#[derive(Parser)]
#[command(name = "plantforge", version, about = "Plant generation as Gaussian-splat scenes")]
struct Args {
    /// Seed for every random choice in the stage.
    #[arg(long, global = true)]
    seed: Option<u64>,

    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Expand an L-System grammar into a plant mesh, optionally sampling a
    /// point cloud from its surface.
    Lsystem(stages::LsystemArgs),
    /// Remove outliers, downsample, center, scale and optionally recolor a
    /// point cloud.
    Preprocess(stages::PreprocessArgs),
    /// Create one Gaussian per point of a cloud.
    Init {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Multiplier on the mean 3-nearest-neighbor distance used as scale.
        #[arg(long, default_value_t = 1.0)]
        scale_multiplier: f64,
        #[arg(long, default_value_t = 0.1)]
        opacity: f64,
    },
    /// Refine a scene with score distillation.
    Dream(stages::DreamArgs),
    /// Render a scene from one orbit camera.
    Render(stages::RenderArgs),
    /// Remove Gaussians whose scale norm exceeds mean + C·std.
    Cull {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long, default_value_t = plantforge::gaussians::DEFAULT_CULL_THRESHOLD)]
        threshold: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Masked PSNR of a scene against ground-truth views.
    Eval(stages::EvalArgs),
}

/// Raised when a configuration or camera file cannot be read as such.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct ConfigError(pub String);

fn main() -> ExitCode {
    env_logger::Builder::from_env(Env::default().default_filter_or("info")).init();
    let args = Args::parse();
    let seed = args.seed;
    let (name, result) = match args.cmd {
        Command::Lsystem(a) => ("lsystem", stages::lsystem(a, seed.unwrap_or(0))),
        Command::Preprocess(a) => ("preprocess", stages::preprocess(a, seed.unwrap_or(0))),
        Command::Init {
            input,
            out,
            scale_multiplier,
            opacity,
        } => ("init", stages::init(&input, &out, scale_multiplier, opacity)),
        Command::Dream(a) => ("dream", stages::dream(a, seed)),
        Command::Render(a) => ("render", stages::render(a)),
        Command::Cull {
            scene,
            threshold,
            out,
        } => ("cull", stages::cull(&scene, threshold, &out)),
        Command::Eval(a) => ("eval", stages::eval(a)),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let config = e.chain().any(|c| c.is::<ConfigError>());
            eprintln!("error[{name}]: {e}");
            for cause in e.chain().skip(1) {
                eprintln!("  caused by: {cause}");
            }
            ExitCode::from(if config { 2 } else { 1 })
        }
    }
}

pub(crate) fn parse_recolor(s: &str) -> Result<RecolorMode, String> {
    s.parse()
}
