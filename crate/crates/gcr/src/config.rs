//! JSON configuration for each command. Omitted fields take their
//! defaults; unknown fields are rejected.

use std::fs;
use std::path::Path;

use gcr_core::losses::LossWeights;
use gcr_core::synth::SceneConfig;
use gcr_core::toytrain::TrainConfig;
use gcr_core::wransac::RansacConfig;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};
use crate::formats::NoiseFile;

/// Reads a config file. Syntax errors, unknown fields and type errors are
/// usage errors naming the offending field.
pub fn load<T: for<'de> Deserialize<'de>>(path: &Path) -> CliResult<T> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
    let de = &mut serde_json::Deserializer::from_str(&text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let field = e.path().to_string();
        CliError::usage(format!(
            "{}: invalid config field `{}`: {}",
            path.display(),
            field,
            e.inner()
        ))
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub min_image_size: u32,
    pub max_image_size: u32,
    pub focal_per_width: (f64, f64),
    pub min_focal: f64,
    pub max_focal: f64,
    pub min_rotation_deg: f64,
    pub max_rotation_deg: f64,
    pub min_baseline: f64,
    pub max_baseline: f64,
    pub plane_depth: (f64, f64),
    pub max_plane_tilt_deg: f64,
    pub descriptor_dim: usize,
    pub descriptor_frequency: f64,
    pub min_overlap: f64,
    pub noise: NoiseFile,
}

impl Default for SynthConfig {
    fn default() -> Self {
        (&SceneConfig::default()).into()
    }
}

impl From<&SceneConfig> for SynthConfig {
    fn from(c: &SceneConfig) -> Self {
        Self {
            min_image_size: c.min_image_size,
            max_image_size: c.max_image_size,
            focal_per_width: c.focal_per_width,
            min_focal: c.min_focal,
            max_focal: c.max_focal,
            min_rotation_deg: c.min_rotation_deg,
            max_rotation_deg: c.max_rotation_deg,
            min_baseline: c.min_baseline,
            max_baseline: c.max_baseline,
            plane_depth: c.plane_depth,
            max_plane_tilt_deg: c.max_plane_tilt_deg,
            descriptor_dim: c.descriptor_dim,
            descriptor_frequency: c.descriptor_frequency,
            min_overlap: c.min_overlap,
            noise: (&c.noise).into(),
        }
    }
}

impl SynthConfig {
    pub fn to_core(&self) -> CliResult<SceneConfig> {
        let c = SceneConfig {
            min_image_size: self.min_image_size,
            max_image_size: self.max_image_size,
            focal_per_width: self.focal_per_width,
            min_focal: self.min_focal,
            max_focal: self.max_focal,
            min_rotation_deg: self.min_rotation_deg,
            max_rotation_deg: self.max_rotation_deg,
            min_baseline: self.min_baseline,
            max_baseline: self.max_baseline,
            plane_depth: self.plane_depth,
            max_plane_tilt_deg: self.max_plane_tilt_deg,
            descriptor_dim: self.descriptor_dim,
            descriptor_frequency: self.descriptor_frequency,
            min_overlap: self.min_overlap,
            noise: self.noise.into(),
        };
        c.validate()?;
        Ok(c)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RansacSettings {
    pub iterations: usize,
    pub sample_size: usize,
    pub inlier_threshold: f64,
    pub beta: f64,
    pub tau: f64,
    pub stride: u32,
    pub enforce_gate: bool,
}

impl Default for RansacSettings {
    fn default() -> Self {
        let r = RansacConfig::default();
        Self {
            iterations: r.iterations,
            sample_size: r.sample_size,
            inlier_threshold: r.inlier_threshold,
            beta: r.beta,
            tau: r.tau,
            stride: 8,
            enforce_gate: r.enforce_gate,
        }
    }
}

impl RansacSettings {
    pub fn to_core(&self, seed: u64) -> CliResult<RansacConfig> {
        if self.stride < 1 {
            return Err(gcr_core::Error::InvalidConfig {
                field: "stride",
                reason: "must be at least 1",
            }
            .into());
        }
        let c = RansacConfig {
            iterations: self.iterations,
            sample_size: self.sample_size,
            inlier_threshold: self.inlier_threshold,
            beta: self.beta,
            tau: self.tau,
            seed,
            enforce_gate: self.enforce_gate,
        };
        c.validate()?;
        Ok(c)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSettings {
    pub steps: usize,
    pub learning_rate: f64,
    pub fd_step: f64,
    pub stride: u32,
    pub s_max: f64,
    pub lambda_pose: f64,
    pub lambda_consistency: f64,
    pub lambda_desc: f64,
    pub ransac: RansacSettings,
    /// Fraction of scenes held out when no separate held-out directory is
    /// given.
    pub heldout_fraction: f64,
}

impl Default for TrainSettings {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            steps: t.steps,
            learning_rate: t.learning_rate,
            fd_step: t.fd_step,
            stride: t.stride,
            s_max: t.s_max,
            lambda_pose: t.loss_weights.lambda_pose,
            lambda_consistency: t.loss_weights.lambda_consistency,
            lambda_desc: t.loss_weights.lambda_desc,
            ransac: RansacSettings::default(),
            heldout_fraction: 0.25,
        }
    }
}

impl TrainSettings {
    pub fn to_core(
        &self,
        seed: u64,
        mode: gcr_core::toytrain::AblationMode,
    ) -> CliResult<TrainConfig> {
        if !(self.heldout_fraction > 0.0 && self.heldout_fraction < 1.0) {
            return Err(gcr_core::Error::InvalidConfig {
                field: "heldout_fraction",
                reason: "must lie in (0, 1)",
            }
            .into());
        }
        let c = TrainConfig {
            steps: self.steps,
            learning_rate: self.learning_rate,
            fd_step: self.fd_step,
            seed,
            loss_weights: LossWeights {
                lambda_pose: self.lambda_pose,
                lambda_consistency: self.lambda_consistency,
                lambda_desc: self.lambda_desc,
            },
            mode,
            stride: self.stride,
            s_max: self.s_max,
            ransac: self.ransac.to_core(0)?,
        };
        c.validate()?;
        Ok(c)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalyzeSettings {
    /// Histogram bins over [0, 1].
    pub bins: usize,
}

impl Default for AnalyzeSettings {
    fn default() -> Self {
        Self { bins: 50 }
    }
}

impl AnalyzeSettings {
    pub fn validate(&self) -> CliResult<()> {
        if self.bins == 0 {
            return Err(gcr_core::Error::InvalidConfig {
                field: "bins",
                reason: "must be positive",
            }
            .into());
        }
        Ok(())
    }
}
