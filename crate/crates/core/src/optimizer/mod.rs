//! Score-distillation refinement of a Gaussian scene.
//!
//! [`dream`] keeps a frozen copy of the initial scene as the depth
//! reference, then for every epoch samples a camera and a timestep, asks the
//! guidance source for a pixel-space gradient, pulls it back through the
//! renderer and applies a per-group gradient step. Oversized Gaussians are
//! culled on a fixed cadence. Every epoch appends one JSON record to the run
//! log.

mod schedule;
mod step;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::Vector3;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gaussians::{cull_large, save_scene, CullStats, GaussianError, GaussianScene};
use crate::guidance::{GuidanceError, GuidanceSource};
use crate::renderer::{RenderError, DEFAULT_ALPHA_THRESHOLD, DEFAULT_DILATE_ITERS, DEFAULT_ERODE_ITERS};
use crate::rng::stream_rng;

pub use schedule::{sample_camera, sample_timestep, Bracket, CameraPolicy, NoiseSchedule};
pub use step::{sds_gradients, sds_step, GradNorms, StepInput, StepOutcome, UpdateRule, Updater};

#[derive(Debug, Error)]
pub enum OptimError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("config parse: {0}")]
    ConfigParse(#[from] toml::de::Error),
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error(transparent)]
    Guidance(GuidanceError),
    #[error("aborted after {failures} consecutive guidance failures; last: {last}")]
    AbortedByGuidance { failures: usize, last: GuidanceError },
    #[error(transparent)]
    Gaussian(#[from] GaussianError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearningRates {
    pub position: f64,
    pub sh_dc: f64,
    pub opacity: f64,
    pub log_scale: f64,
    pub rotation: f64,
}

impl Default for LearningRates {
    fn default() -> Self {
        Self {
            position: 5e-5,
            sh_dc: 1.25e-2,
            opacity: 5e-2,
            log_scale: 5e-3,
            rotation: 1e-3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MaskConfig {
    pub alpha_threshold: f64,
    pub erode_iters: usize,
    pub dilate_iters: usize,
}

impl Default for MaskConfig {
    fn default() -> Self {
        Self {
            alpha_threshold: DEFAULT_ALPHA_THRESHOLD,
            erode_iters: DEFAULT_ERODE_ITERS,
            dilate_iters: DEFAULT_DILATE_ITERS,
        }
    }
}

/// Training configuration; the TOML form uses the same field names.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimConfig {
    pub epochs: usize,
    pub seed: u64,
    pub species: String,
    /// `{species}` is replaced by [`species`](Self::species).
    pub prompt_template: String,
    pub learning_rates: LearningRates,
    pub update: UpdateRule,
    pub cull_threshold: f64,
    /// Cull after every `cull_every`-th epoch; 0 disables culling.
    pub cull_every: usize,
    /// Checkpoint after every `checkpoint_every`-th epoch; 0 disables.
    pub checkpoint_every: usize,
    pub background: [f64; 3],
    pub guidance_strength: f64,
    pub max_consecutive_failures: usize,
    pub camera: CameraPolicy,
    pub mask: MaskConfig,
    pub schedule: NoiseSchedule,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            epochs: 3600,
            seed: 0,
            species: "bean".into(),
            prompt_template: "a {species} plant in a pot".into(),
            learning_rates: LearningRates::default(),
            update: UpdateRule::Sgd,
            cull_threshold: 3.0,
            cull_every: 100,
            checkpoint_every: 500,
            background: [1.0, 1.0, 1.0],
            guidance_strength: 100.0,
            max_consecutive_failures: 10,
            camera: CameraPolicy::default(),
            mask: MaskConfig::default(),
            schedule: NoiseSchedule::default(),
        }
    }
}

impl OptimConfig {
    pub fn from_toml_str(s: &str) -> Result<Self, OptimError> {
        let c: Self = toml::from_str(s)?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, OptimError> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), OptimError> {
        let bad = |m: String| Err(OptimError::InvalidConfig(m));
        let r = &self.learning_rates;
        for (name, v) in [
            ("position", r.position),
            ("sh_dc", r.sh_dc),
            ("opacity", r.opacity),
            ("log_scale", r.log_scale),
            ("rotation", r.rotation),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("learning rate for {name} must be > 0, got {v}"));
            }
        }
        if !(self.cull_threshold >= 0.0) {
            return bad(format!("cull threshold {} must be >= 0", self.cull_threshold));
        }
        if !self.background.iter().all(|c| (0.0..=1.0).contains(c)) {
            return bad("background components must lie in [0, 1]".into());
        }
        if !(self.mask.alpha_threshold > 0.0 && self.mask.alpha_threshold <= 1.0) {
            return bad(format!("mask alpha threshold {} outside (0, 1]", self.mask.alpha_threshold));
        }
        if !self.guidance_strength.is_finite() {
            return bad("guidance strength must be finite".into());
        }
        if self.max_consecutive_failures == 0 {
            return bad("max_consecutive_failures must be >= 1".into());
        }
        self.camera.validate()?;
        self.schedule.validate()
    }

    pub fn prompt(&self) -> String {
        self.prompt_template.replace("{species}", &self.species)
    }

    pub fn background_vec(&self) -> Vector3<f64> {
        Vector3::from(self.background)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EpochStatus {
    Applied,
    SkippedEmptyMask,
    SkippedGuidance,
}

/// One line of the run log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub azimuth_deg: f64,
    pub elevation_deg: f64,
    pub timestep: f64,
    pub noise_seed: u64,
    pub status: EpochStatus,
    pub grad_norms: Option<GradNorms>,
    pub mask_pixels: usize,
    /// Gaussian count after this epoch, including any culling.
    pub gaussians: usize,
    pub culled: usize,
    pub step_ms: f64,
    pub error: Option<String>,
}

/// State handed to the per-epoch observer after the epoch completes.
pub struct EpochView<'a> {
    pub epoch: usize,
    pub scene: &'a GaussianScene,
    pub reference: &'a GaussianScene,
    pub record: &'a EpochRecord,
}

/// Optional side outputs of [`dream`].
#[derive(Default)]
pub struct DreamOptions<'a> {
    /// JSON-lines run log, one record per epoch, flushed as written.
    pub run_log: Option<PathBuf>,
    /// Directory for `checkpoint_{epoch:05}.ply` files.
    pub checkpoint_dir: Option<PathBuf>,
    pub observer: Option<Box<dyn FnMut(&EpochView) + 'a>>,
}

#[derive(Debug, Clone)]
pub struct DreamOutput {
    pub scene: GaussianScene,
    pub log: Vec<EpochRecord>,
}

/// Per-epoch random draws, derived from the config seed and epoch only so
/// they do not depend on earlier outcomes.
fn epoch_draws(config: &OptimConfig, epoch: usize) -> Result<(crate::renderer::Camera, f64, f64, f64, u64), OptimError> {
    let mut rng = stream_rng(config.seed, epoch as u64);
    let (cam, az, el) = config.camera.sample(&mut rng)?;
    let t = config.schedule.sample(epoch, &mut rng);
    Ok((cam, az, el, t, rng.gen()))
}

pub fn dream(
    initial: &GaussianScene,
    config: &OptimConfig,
    guidance: &dyn GuidanceSource,
    mut options: DreamOptions,
) -> Result<DreamOutput, OptimError> {
    config.validate()?;
    let reference = initial.clone();
    let mut scene = initial.clone();
    let mut updater = Updater::new(config.update, config.learning_rates, scene.len());
    let mut log = Vec::with_capacity(config.epochs);
    let mut writer = match &options.run_log {
        Some(p) => Some(BufWriter::new(File::create(p)?)),
        None => None,
    };
    if let Some(dir) = &options.checkpoint_dir {
        std::fs::create_dir_all(dir)?;
    }
    let mut failures = 0usize;

    for epoch in 0..config.epochs {
        let started = Instant::now();
        let (camera, az, el, t, noise_seed) = epoch_draws(config, epoch)?;
        let input = StepInput {
            camera: &camera,
            timestep: t,
            seed: noise_seed,
        };
        let mut record = EpochRecord {
            epoch,
            azimuth_deg: az,
            elevation_deg: el,
            timestep: t,
            noise_seed,
            status: EpochStatus::Applied,
            grad_norms: None,
            mask_pixels: 0,
            gaussians: scene.len(),
            culled: 0,
            step_ms: 0.0,
            error: None,
        };
        match sds_step(&mut scene, &reference, guidance, &input, config, &mut updater) {
            Ok(StepOutcome::Applied { norms, mask_pixels }) => {
                failures = 0;
                record.grad_norms = Some(norms);
                record.mask_pixels = mask_pixels;
            }
            Ok(StepOutcome::SkippedEmptyMask) => {
                log::debug!("epoch {epoch}: empty reference mask, step skipped");
                record.status = EpochStatus::SkippedEmptyMask;
            }
            Err(OptimError::Guidance(e)) if e.is_transient() => {
                failures += 1;
                log::warn!("epoch {epoch}: guidance failed ({e}), step skipped");
                record.status = EpochStatus::SkippedGuidance;
                record.error = Some(e.to_string());
                if failures >= config.max_consecutive_failures {
                    return Err(OptimError::AbortedByGuidance { failures, last: e });
                }
            }
            Err(e) => return Err(e),
        }

        if config.cull_every > 0 && (epoch + 1) % config.cull_every == 0 {
            let stats = CullStats::compute(&scene, config.cull_threshold);
            let keep: Vec<bool> = (0..scene.len()).map(|i| !stats.is_culled(i)).collect();
            let (kept, culled) = cull_large(&scene, config.cull_threshold)?;
            if culled > 0 {
                updater.retain(&keep);
                log::info!("epoch {epoch}: culled {culled} oversized Gaussians");
            }
            scene = kept;
            record.culled = culled;
        }
        record.gaussians = scene.len();
        record.step_ms = started.elapsed().as_secs_f64() * 1e3;

        if let Some(w) = writer.as_mut() {
            serde_json::to_writer(&mut *w, &record)?;
            w.write_all(b"\n")?;
            w.flush()?;
        }
        if let Some(dir) = &options.checkpoint_dir {
            if config.checkpoint_every > 0 && (epoch + 1) % config.checkpoint_every == 0 {
                save_scene(&scene, dir.join(format!("checkpoint_{:05}.ply", epoch + 1)))?;
            }
        }
        if let Some(obs) = options.observer.as_mut() {
            obs(&EpochView {
                epoch,
                scene: &scene,
                reference: &reference,
                record: &record,
            });
        }
        log.push(record);
    }
    Ok(DreamOutput { scene, log })
}
