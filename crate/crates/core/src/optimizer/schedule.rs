use rand::Rng;
use serde::{Deserialize, Serialize};

use super::OptimError;
use crate::renderer::Camera;

/// Timestep range used for epochs below `epoch_end`; the last bracket may
/// leave it open.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bracket {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epoch_end: Option<usize>,
    pub t_min: f64,
    pub t_max: f64,
}

/// Contiguous timestep brackets starting at epoch 0. Epochs past the last
/// bracket's end use the last bracket.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NoiseSchedule {
    pub brackets: Vec<Bracket>,
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        let b = |epoch_end, t_min, t_max| Bracket {
            epoch_end,
            t_min,
            t_max,
        };
        Self {
            brackets: vec![
                b(Some(600), 0.2, 0.98),
                b(Some(1000), 0.12, 0.35),
                b(Some(2000), 0.12, 0.25),
                b(None, 0.075, 0.15),
            ],
        }
    }
}

impl NoiseSchedule {
    pub fn validate(&self) -> Result<(), OptimError> {
        let bad = |m: String| Err(OptimError::InvalidConfig(m));
        if self.brackets.is_empty() {
            return bad("noise schedule has no brackets".into());
        }
        let mut start = 0;
        let last = self.brackets.len() - 1;
        for (k, b) in self.brackets.iter().enumerate() {
            let end = match b.epoch_end {
                Some(e) => e,
                None if k == last => usize::MAX,
                None => return bad("only the last bracket may omit epoch_end".into()),
            };
            if end <= start {
                return bad(format!("bracket ending at {end} is empty or out of order"));
            }
            if !(b.t_min > 0.0 && b.t_min < b.t_max && b.t_max <= 1.0) {
                return bad(format!("bracket range [{}, {}] must satisfy 0 < min < max <= 1", b.t_min, b.t_max));
            }
            start = end;
        }
        Ok(())
    }

    pub fn bracket(&self, epoch: usize) -> &Bracket {
        self.brackets
            .iter()
            .find(|b| b.epoch_end.map_or(true, |e| epoch < e))
            .unwrap_or_else(|| self.brackets.last().expect("nonempty schedule"))
    }

    /// Uniform sample from the bracket containing `epoch`.
    pub fn sample<R: Rng + ?Sized>(&self, epoch: usize, rng: &mut R) -> f64 {
        let b = self.bracket(epoch);
        rng.gen_range(b.t_min..=b.t_max)
    }
}

/// Distribution of training viewpoints around the origin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CameraPolicy {
    /// Half-open azimuth range in degrees; equal ends pin the azimuth.
    pub azimuth_deg: [f64; 2],
    /// Closed elevation range in degrees.
    pub elevation_deg: [f64; 2],
    /// Distance from the origin in units of the normalized scene extent.
    pub radius: f64,
    pub fov_deg: f64,
    pub width: usize,
    pub height: usize,
}

impl Default for CameraPolicy {
    fn default() -> Self {
        Self {
            azimuth_deg: [0.0, 360.0],
            elevation_deg: [-10.0, 60.0],
            radius: 2.2,
            fov_deg: 49.0,
            width: 512,
            height: 512,
        }
    }
}

impl CameraPolicy {
    pub fn validate(&self) -> Result<(), OptimError> {
        let bad = |m: String| Err(OptimError::InvalidConfig(m));
        let [a0, a1] = self.azimuth_deg;
        let [e0, e1] = self.elevation_deg;
        if !(a0 <= a1) || !(e0 <= e1) {
            return bad("camera ranges must be ordered".into());
        }
        if !(e0 >= -90.0 && e1 <= 90.0) {
            return bad("elevation must stay within [-90, 90]".into());
        }
        // the normalized scene fits in a unit cube centered at the origin
        if !(self.radius > 0.5) {
            return bad(format!("radius {} places the camera inside the scene", self.radius));
        }
        Camera::orbit(0.0, 0.0, self.radius, self.fov_deg, self.width, self.height)
            .map(|_| ())
            .map_err(|e| OptimError::InvalidConfig(e.to_string()))
    }

    /// Returns the camera and its `(azimuth, elevation)` in degrees.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<(Camera, f64, f64), OptimError> {
        let [a0, a1] = self.azimuth_deg;
        let [e0, e1] = self.elevation_deg;
        let az = if a1 > a0 { rng.gen_range(a0..a1) } else { a0 };
        let el = if e1 > e0 { rng.gen_range(e0..=e1) } else { e0 };
        let cam = Camera::orbit(az, el, self.radius, self.fov_deg, self.width, self.height)?;
        Ok((cam, az, el))
    }
}

pub fn sample_camera<R: Rng + ?Sized>(policy: &CameraPolicy, rng: &mut R) -> Result<Camera, OptimError> {
    policy.sample(rng).map(|(c, _, _)| c)
}

pub fn sample_timestep<R: Rng + ?Sized>(epoch: usize, schedule: &NoiseSchedule, rng: &mut R) -> f64 {
    schedule.sample(epoch, rng)
}
