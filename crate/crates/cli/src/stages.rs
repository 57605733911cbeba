//! One adapter per subcommand: read inputs, call the library, write outputs,
//! print a one-line summary.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::builder::PossibleValuesParser;
use log::{info, warn};
use nalgebra::Vector3;
use serde::Deserialize;

use plantforge::gaussians::{self, CullStats, InitParams};
use plantforge::guidance::{GuidanceSource, OracleGuidance, RemoteConfig, RemoteGuidance};
use plantforge::lsystem::{self, colors, corpus, TurtleParams, DEFAULT_LEAF};
use plantforge::metrics::{self, EvalView};
use plantforge::optimizer::{self, DreamOptions, EpochStatus, OptimConfig, OptimError};
use plantforge::pointcloud::{self, Encoding, RecolorMode};
use plantforge::renderer::{self, ColorImage, Mask, OrbitView};
use plantforge::{Label, PlantMesh};

use crate::ConfigError;

pub const GUIDANCE_URL_ENV: &str = "PLANTFORGE_GUIDANCE_URL";

#[derive(clap::Args)]
pub struct LsystemArgs {
    /// Grammar file in `.lsys` format.
    #[arg(long, required_unless_present = "builtin", conflicts_with = "builtin")]
    grammar: Option<PathBuf>,
    /// Bundled grammar instead of a file.
    #[arg(long, value_parser = PossibleValuesParser::new(corpus::NAMES))]
    builtin: Option<String>,
    /// Rewriting steps; bundled plant grammars have a default.
    #[arg(long)]
    iterations: Option<usize>,
    /// Mesh output (OBJ with per-vertex colors).
    #[arg(long)]
    out: PathBuf,
    /// Also sample a point cloud from the mesh surface and write it here.
    #[arg(long)]
    points: Option<PathBuf>,
    /// Number of sampled points.
    #[arg(long, default_value_t = pointcloud::DEFAULT_TARGET_POINTS, requires = "points")]
    count: usize,
    /// Leaf template OBJ replacing the bundled ovate leaf.
    #[arg(long)]
    leaf: Option<PathBuf>,
    /// Default segment length for `F` without a parameter.
    #[arg(long)]
    step: Option<f64>,
    /// Default turn angle in degrees.
    #[arg(long)]
    angle: Option<f64>,
    /// Leave out the pot and soil.
    #[arg(long)]
    no_pot: bool,
    /// Write the point cloud as ASCII PLY.
    #[arg(long)]
    ascii: bool,
}

pub fn lsystem(a: LsystemArgs, seed: u64) -> Result<()> {
    let (text, default_iters) = match (&a.grammar, &a.builtin) {
        (Some(path), _) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading grammar {}", path.display()))?;
            (text, None)
        }
        (None, Some(name)) => (
            corpus::source(name).expect("validated by clap").to_string(),
            corpus::default_iterations(name),
        ),
        (None, None) => bail!("either --grammar or --builtin is required"),
    };
    let grammar = lsystem::parse_grammar(&text).context("parsing grammar")?;
    let iterations = a
        .iterations
        .or(default_iters.map(|n| n as usize))
        .ok_or_else(|| anyhow!("--iterations is required for this grammar"))?;

    let mut library = corpus::leaf_library();
    if let Some(path) = &a.leaf {
        let f = File::open(path).with_context(|| format!("opening leaf template {}", path.display()))?;
        let leaf = PlantMesh::read_obj(BufReader::new(f), Label::Leaf, colors::v(colors::LEAF))
            .with_context(|| format!("reading leaf template {}", path.display()))?;
        library.insert(DEFAULT_LEAF.to_string(), leaf);
    }
    let mut params = TurtleParams {
        pot: !a.no_pot,
        color_seed: seed,
        ..TurtleParams::default()
    };
    if let Some(s) = a.step {
        params.step = s;
    }
    if let Some(deg) = a.angle {
        params.angle_deg = deg;
    }
    params.validate().map_err(|m| anyhow!("turtle parameters: {m}"))?;

    let symbols = lsystem::expand(&grammar, iterations, seed)?;
    let mesh = lsystem::interpret(&symbols, &params, &library)?;
    let mut w = BufWriter::new(create(&a.out)?);
    mesh.write_obj(&mut w)?;
    w.flush()?;
    let mut summary = format!(
        "lsystem: {} symbols after {iterations} iterations; mesh {} vertices, {} faces",
        symbols.len(),
        mesh.vertices.len(),
        mesh.faces.len()
    );
    if let Some(path) = &a.points {
        let cloud = lsystem::sample_pointcloud(&mesh, a.count, seed)?;
        pointcloud::save_ply(&cloud, path, encoding(a.ascii))
            .with_context(|| format!("writing {}", path.display()))?;
        summary.push_str(&format!("; sampled {} points", cloud.len()));
    }
    println!("{summary}");
    Ok(())
}

#[derive(clap::Args)]
pub struct PreprocessArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Approximate point count after voxel downsampling.
    #[arg(long, default_value_t = pointcloud::DEFAULT_TARGET_POINTS)]
    target: usize,
    /// Color ablation: original, black, white or noise.
    #[arg(long, default_value = "original", value_parser = crate::parse_recolor)]
    recolor: RecolorMode,
    /// Neighbors used by the outlier statistic.
    #[arg(long, default_value_t = pointcloud::DEFAULT_K_NEIGHBORS)]
    k_neighbors: usize,
    #[arg(long, default_value_t = pointcloud::DEFAULT_STD_RATIO)]
    std_ratio: f64,
    /// Largest bounding-box edge after normalization.
    #[arg(long, default_value_t = 1.0)]
    extent: f64,
    /// Where to write the applied similarity transform as JSON.
    #[arg(long)]
    transform: Option<PathBuf>,
    #[arg(long)]
    ascii: bool,
}

pub fn preprocess(a: PreprocessArgs, seed: u64) -> Result<()> {
    let cloud = pointcloud::load_ply(&a.input).with_context(|| format!("reading {}", a.input.display()))?;
    let loaded = cloud.len();
    let (cloud, removed) = pointcloud::remove_outliers(&cloud, a.k_neighbors, a.std_ratio)?;
    let (cloud, edge) = pointcloud::voxel_downsample_with_size(&cloud, a.target);
    let (cloud, transform) = pointcloud::normalize_pose(&cloud, a.extent)?;
    let cloud = pointcloud::recolor(&cloud, a.recolor, seed);
    pointcloud::save_ply(&cloud, &a.out, encoding(a.ascii)).with_context(|| format!("writing {}", a.out.display()))?;
    if let Some(path) = &a.transform {
        std::fs::write(path, serde_json::to_string_pretty(&transform)?)
            .with_context(|| format!("writing {}", path.display()))?;
    }
    println!(
        "preprocess: {loaded} points, {removed} outliers removed, {} after downsampling (voxel {edge:.5}), scale {:.6}, recolor {}",
        cloud.len(),
        transform.scale,
        a.recolor
    );
    Ok(())
}

pub fn init(input: &Path, out: &Path, scale_multiplier: f64, opacity: f64) -> Result<()> {
    let cloud = pointcloud::load_ply(input).with_context(|| format!("reading {}", input.display()))?;
    let params = InitParams {
        scale_multiplier,
        initial_opacity: opacity,
    };
    let scene = gaussians::init_from_pointcloud(&cloud, &params)?;
    gaussians::save_scene(&scene, out).with_context(|| format!("writing {}", out.display()))?;
    println!("init: {} gaussians", scene.len());
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub enum GuidanceChoice {
    Oracle(PathBuf),
    Remote(String),
}

fn parse_guidance(s: &str) -> Result<GuidanceChoice, String> {
    if let Some(p) = s.strip_prefix("oracle:") {
        Ok(GuidanceChoice::Oracle(PathBuf::from(p)))
    } else if let Some(u) = s.strip_prefix("remote:") {
        Ok(GuidanceChoice::Remote(u.to_string()))
    } else {
        Err(format!("expected oracle:PATH or remote:URL, got '{s}'"))
    }
}

#[derive(clap::Args)]
pub struct DreamArgs {
    #[arg(long)]
    scene: PathBuf,
    /// Run configuration (TOML); defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// `oracle:target.png` or `remote:URL`. Falls back to a remote service
    /// at $PLANTFORGE_GUIDANCE_URL.
    #[arg(long, value_parser = parse_guidance)]
    guidance: Option<GuidanceChoice>,
    #[arg(long)]
    out: PathBuf,
    /// Per-epoch JSONL log; defaults to the output path with a `.jsonl`
    /// extension.
    #[arg(long)]
    run_log: Option<PathBuf>,
    #[arg(long)]
    checkpoint_dir: Option<PathBuf>,
}

fn load_config(path: &Path) -> Result<OptimConfig> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    OptimConfig::from_toml_str(&text).map_err(|e| match e {
        OptimError::ConfigParse(_) | OptimError::InvalidConfig(_) => {
            ConfigError(format!("{}: {e}", path.display())).into()
        }
        other => anyhow::Error::new(other),
    })
}

pub fn dream(a: DreamArgs, seed: Option<u64>) -> Result<()> {
    let mut config = match &a.config {
        Some(p) => load_config(p)?,
        None => OptimConfig::default(),
    };
    if let Some(s) = seed {
        config.seed = s;
    }
    let choice = match a.guidance {
        Some(g) => g,
        None => match std::env::var(GUIDANCE_URL_ENV) {
            Ok(url) if !url.is_empty() => GuidanceChoice::Remote(url),
            _ => bail!("no --guidance given and {GUIDANCE_URL_ENV} is not set"),
        },
    };
    let guidance: Box<dyn GuidanceSource> = match &choice {
        GuidanceChoice::Oracle(path) => {
            let target = ColorImage::load_png(path).with_context(|| format!("reading oracle target {}", path.display()))?;
            let (w, h) = (config.camera.width, config.camera.height);
            if (target.width, target.height) != (w, h) {
                bail!(
                    "oracle target {} is {}x{} but the camera renders {w}x{h}",
                    path.display(),
                    target.width,
                    target.height
                );
            }
            Box::new(OracleGuidance::new(target))
        }
        GuidanceChoice::Remote(url) => {
            let remote = RemoteGuidance::new(RemoteConfig::new(url.as_str()));
            if let Err(e) = remote.health() {
                warn!("guidance service at {url} is not ready: {e}");
            }
            Box::new(remote)
        }
    };

    let initial = gaussians::load_scene(&a.scene).with_context(|| format!("reading {}", a.scene.display()))?;
    let every = (config.epochs / 10).max(1);
    let epochs = config.epochs;
    let options = DreamOptions {
        run_log: Some(a.run_log.clone().unwrap_or_else(|| a.out.with_extension("jsonl"))),
        checkpoint_dir: a.checkpoint_dir.clone(),
        observer: Some(Box::new(move |v: &optimizer::EpochView| {
            if (v.epoch + 1) % every == 0 {
                info!(
                    "epoch {}/{epochs}: t={:.3} gaussians={} status={:?}",
                    v.epoch + 1,
                    v.record.timestep,
                    v.record.gaussians,
                    v.record.status
                );
            }
        })),
    };
    let run = optimizer::dream(&initial, &config, guidance.as_ref(), options)?;
    gaussians::save_scene(&run.scene, &a.out).with_context(|| format!("writing {}", a.out.display()))?;
    let applied = run.log.iter().filter(|r| r.status == EpochStatus::Applied).count();
    let culled: usize = run.log.iter().map(|r| r.culled).sum();
    println!(
        "dream: {} epochs ({applied} applied, {} skipped), {culled} culled, gaussians {} -> {}",
        run.log.len(),
        run.log.len() - applied,
        initial.len(),
        run.scene.len()
    );
    Ok(())
}

fn parse_rgb(s: &str) -> Result<[f64; 3], String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|e| format!("'{p}': {e}")))
        .collect::<Result<_, _>>()?;
    match v.as_slice() {
        [r, g, b] if v.iter().all(|c| (0.0..=1.0).contains(c)) => Ok([*r, *g, *b]),
        _ => Err(format!("expected R,G,B with components in [0,1], got '{s}'")),
    }
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| ConfigError(format!("{}: {e}", path.display())).into())
}

#[derive(clap::Args)]
pub struct RenderArgs {
    #[arg(long)]
    scene: PathBuf,
    /// JSON orbit camera: azimuth_deg, elevation_deg, radius, fov_deg,
    /// width, height.
    #[arg(long)]
    camera: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// 16-bit depth PNG scaled so the farthest pixel is white.
    #[arg(long)]
    depth: Option<PathBuf>,
    /// Coverage mask PNG (alpha above --alpha-threshold).
    #[arg(long)]
    mask: Option<PathBuf>,
    #[arg(long, default_value = "1,1,1", value_parser = parse_rgb)]
    background: [f64; 3],
    #[arg(long, default_value_t = metrics::DEFAULT_MASK_THRESHOLD)]
    alpha_threshold: f64,
}

pub fn render(a: RenderArgs) -> Result<()> {
    let scene = gaussians::load_scene(&a.scene).with_context(|| format!("reading {}", a.scene.display()))?;
    let view: OrbitView = read_json(&a.camera)?;
    let cam = view.camera()?;
    let img = renderer::render(&scene, &cam, Vector3::from(a.background))?;
    img.rgb.save_png(&a.out).with_context(|| format!("writing {}", a.out.display()))?;
    if let Some(path) = &a.depth {
        let d = renderer::render_depth(&scene, &cam)?;
        let far = d.depth.data.iter().copied().fold(0.0, f64::max);
        d.depth.save_png16(path, far).with_context(|| format!("writing {}", path.display()))?;
        info!("depth png spans 0..{far:.4} scene units");
    }
    let mask = metrics::extract_mask(&img.alpha, a.alpha_threshold);
    if let Some(path) = &a.mask {
        mask.save_png(path).with_context(|| format!("writing {}", path.display()))?;
    }
    println!(
        "render: {}x{}, {} of {} pixels covered",
        cam.width,
        cam.height,
        mask.count(),
        cam.pixel_count()
    );
    Ok(())
}

pub fn cull(scene_path: &Path, threshold: f64, out: &Path) -> Result<()> {
    let scene = gaussians::load_scene(scene_path).with_context(|| format!("reading {}", scene_path.display()))?;
    let cutoff = CullStats::compute(&scene, threshold).cutoff();
    let (kept, culled) = gaussians::cull_large(&scene, threshold)?;
    gaussians::save_scene(&kept, out).with_context(|| format!("writing {}", out.display()))?;
    println!("cull: culled {culled} of {} (cutoff {cutoff:.6})", scene.len());
    Ok(())
}

#[derive(Deserialize)]
struct NamedView {
    #[serde(default)]
    name: Option<String>,
    #[serde(flatten)]
    view: OrbitView,
}

#[derive(clap::Args)]
pub struct EvalArgs {
    #[arg(long)]
    scene: PathBuf,
    /// JSON list of orbit cameras, each with an optional `name`.
    #[arg(long)]
    views: PathBuf,
    /// Directory of ground-truth PNGs named `<name>.png`, or `view_000.png`,
    /// `view_001.png`, ... for unnamed views.
    #[arg(long)]
    gt: PathBuf,
    /// Directory of mask PNGs with the same names; render alpha is used
    /// otherwise.
    #[arg(long)]
    masks: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    csv: Option<PathBuf>,
    #[arg(long, default_value_t = metrics::DEFAULT_MASK_THRESHOLD)]
    threshold: f64,
    #[arg(long, default_value = "1,1,1", value_parser = parse_rgb)]
    background: [f64; 3],
}

pub fn eval(a: EvalArgs) -> Result<()> {
    let scene = gaussians::load_scene(&a.scene).with_context(|| format!("reading {}", a.scene.display()))?;
    let named: Vec<NamedView> = read_json(&a.views)?;
    let mut views = Vec::with_capacity(named.len());
    for (i, v) in named.into_iter().enumerate() {
        let name = v.name.unwrap_or_else(|| format!("view_{i:03}"));
        let gt_path = a.gt.join(format!("{name}.png"));
        let ground_truth = ColorImage::load_png(&gt_path).with_context(|| format!("reading {}", gt_path.display()))?;
        let mask = match &a.masks {
            Some(dir) => {
                let p = dir.join(format!("{name}.png"));
                Some(Mask::load_png(&p).with_context(|| format!("reading {}", p.display()))?)
            }
            None => None,
        };
        views.push(EvalView {
            name,
            camera: v.view.camera()?,
            ground_truth,
            mask,
        });
    }
    let report = metrics::evaluate(&scene, &views, a.threshold, Vector3::from(a.background))?;
    report.save_json(&a.out).with_context(|| format!("writing {}", a.out.display()))?;
    if let Some(path) = &a.csv {
        report.save_csv(path).with_context(|| format!("writing {}", path.display()))?;
    }
    match report.mean_psnr {
        Some(p) => println!("eval: {} views, mean masked PSNR {p:.3} dB", report.views.len()),
        None => println!("eval: {} views, every mask empty", report.views.len()),
    }
    Ok(())
}

fn create(path: &Path) -> Result<File> {
    File::create(path).with_context(|| format!("creating {}", path.display()))
}

fn encoding(ascii: bool) -> Encoding {
    if ascii {
        Encoding::Ascii
    } else {
        Encoding::BinaryLittleEndian
    }
}
