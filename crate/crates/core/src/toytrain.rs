//! A 63-parameter pose regressor trained with finite-difference gradients.
//!
//! Each scene pair is summarized by a quadratic least-squares fit to the
//! normalized flow of nearest-neighbour descriptor matches. A plane seen
//! under a small motion induces exactly this flow to first order, so a linear
//! map from the ten coefficients to a rotation vector `ω` and a translation
//! vector `v` is a reasonable model:
//!
//! ```text
//! R = orthogonalize(I + [ω]×),  ω = W_ω φ
//! t = s_max·tanh(‖v‖/s_max) · v/‖v‖,  v = b_v + W_v φ
//! ```

use alloc::vec::Vec;
#[allow(unused_imports)] // std builds resolve these to inherent methods
use num_traits::Float;

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use rand::Rng as _;

use crate::correspondence::{
    build_embeddings, form_correspondences, gate_sufficient, grid_cells, CorrespondenceSet,
    DepthMap, DescriptorField,
};
use crate::fusion::{fusion_forward, FusionParams};
use crate::geometry::{svd_orthogonalize, CameraIntrinsics, Pixel, Pose};
use crate::losses::{
    consistency_loss, descriptor_loss, pose_loss, total_loss, LossReport, LossWeights,
};
use crate::metrics::PoseErrorSample;
use crate::rng::{derive_seed, substream, Domain};
use crate::synth::{corrupt_correspondences, render_depth, render_descriptors, Scene, View};
use crate::wransac::{run_weighted_ransac, RansacConfig};
use crate::{Error, Result};

pub const FEATURE_DIM: usize = 10;
pub const PARAM_COUNT: usize = 2 * 3 * FEATURE_DIM + 3;
/// Minimum cosine similarity for a descriptor match to enter the flow fit.
pub const MATCH_MIN_SIMILARITY: f64 = 0.95;
const MIN_FLOW_MATCHES: usize = 12;
/// Flow coefficients are reported in units of 0.1 normalized image
/// coordinates so they are of order one.
pub const FEATURE_SCALE: f64 = 10.0;
/// A training run aborts once the mean total loss exceeds this.
pub const DIVERGENCE_LIMIT: f64 = 1e6;

pub type Features = [f64; FEATURE_DIM];

#[derive(Debug, Clone, PartialEq)]
pub struct ToyRegressor {
    /// `W_ω` (3×10, row-major), then `W_v` (3×10), then `b_v`.
    pub params: Vec<f64>,
    pub s_max: f64,
}

impl ToyRegressor {
    /// All parameters zero: predicts the identity pose.
    pub fn zeros(s_max: f64) -> Self {
        Self {
            params: alloc::vec![0.0; PARAM_COUNT],
            s_max,
        }
    }

    /// Zero weights and a small forward translation bias, so the first
    /// prediction is close to identity but has a usable direction.
    pub fn initial(s_max: f64) -> Self {
        let mut r = Self::zeros(s_max);
        r.params[PARAM_COUNT - 1] = 0.05;
        r
    }

    pub fn latent(&self, phi: &Features) -> [f64; 6] {
        latent_from(&self.params, phi)
    }
}

fn latent_from(params: &[f64], phi: &Features) -> [f64; 6] {
    let mut z = [0.0; 6];
    for (i, zi) in z.iter_mut().enumerate() {
        let row = &params[i * FEATURE_DIM..(i + 1) * FEATURE_DIM];
        *zi = row.iter().zip(phi).map(|(w, f)| w * f).sum();
    }
    for i in 0..3 {
        z[3 + i] += params[6 * FEATURE_DIM + i];
    }
    z
}

/// Pose from the latent `(ω, v)`.
pub fn pose_from_latent(z: &[f64; 6], s_max: f64) -> Result<Pose> {
    let w = Vector3::new(z[0], z[1], z[2]);
    let m = Matrix3::identity() + w.cross_matrix();
    let rotation = svd_orthogonalize(&m)?;
    let v = Vector3::new(z[3], z[4], z[5]);
    let n = v.norm();
    if !n.is_finite() {
        return Err(Error::RotationUnderdetermined);
    }
    let translation = if n > 0.0 {
        v * (s_max * (n / s_max).tanh() / n)
    } else {
        Vector3::zeros()
    };
    Ok(Pose::new(rotation, translation))
}

pub fn toy_forward(reg: &ToyRegressor, features: &Features) -> Result<Pose> {
    if features.iter().any(|f| !f.is_finite()) {
        return Err(Error::DimensionMismatch("non-finite features".into()));
    }
    pose_from_latent(&reg.latent(features), reg.s_max)
}

/// Central differences `(f(θ + h·eᵢ) − f(θ − h·eᵢ)) / 2h`.
pub fn fd_gradient<F>(mut objective: F, params: &[f64], h: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    if !(h > 0.0) {
        return Err(Error::config("fd_step", "must be positive"));
    }
    let mut theta = params.to_vec();
    let mut grad = Vec::with_capacity(params.len());
    for i in 0..params.len() {
        let orig = theta[i];
        theta[i] = orig + h;
        let plus = objective(&theta)?;
        theta[i] = orig - h;
        let minus = objective(&theta)?;
        theta[i] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::NonFiniteObjective(i));
        }
        grad.push((plus - minus) / (2.0 * h));
    }
    Ok(grad)
}

/// Least-squares fit of the normalized flow `m₂ − m₁` of descriptor
/// matches: `dx = a₀ + a₁x + a₂y + a₃x² + a₄xy`,
/// `dy = b₀ + b₁x + b₂y + b₃xy + b₄y²`. Returns `[a…, b…]`, or zeros when
/// too few matches survive.
pub fn flow_features(
    f1: &DescriptorField,
    f2: &DescriptorField,
    k1: &CameraIntrinsics,
    k2: &CameraIntrinsics,
    stride: u32,
) -> Features {
    let mut samples = Vec::new();
    let n2 = (f2.width() * f2.height()) as usize;
    let dim = f2.dim();
    let all2 = f2.descriptors();
    for (x, y) in grid_cells(f1.width(), f1.height(), stride) {
        let d1 = f1.descriptor(x, y);
        let mut best = (f64::NEG_INFINITY, 0usize);
        for j in 0..n2 {
            let s: f64 = d1
                .iter()
                .zip(&all2[j * dim..(j + 1) * dim])
                .map(|(a, b)| a * b)
                .sum();
            if s > best.0 {
                best = (s, j);
            }
        }
        if best.0 < MATCH_MIN_SIMILARITY {
            continue;
        }
        let (x2, y2) = (
            (best.1 % f2.width() as usize) as f64,
            (best.1 / f2.width() as usize) as f64,
        );
        let m1 = ((x as f64 - k1.cx) / k1.fx, (y as f64 - k1.cy) / k1.fy);
        let m2 = ((x2 - k2.cx) / k2.fx, (y2 - k2.cy) / k2.fy);
        samples.push((m1, (m2.0 - m1.0, m2.1 - m1.1)));
    }
    // (normalized pixel in view 1, flow to view 2)
    type FlowSample = ((f64, f64), (f64, f64));
    let fit = |samples: &[FlowSample]| -> Option<Features> {
        if samples.len() < MIN_FLOW_MATCHES {
            return None;
        }
        let n = samples.len();
        let ax = DMatrix::from_fn(n, 5, |r, c| {
            let (x, y) = samples[r].0;
            [1.0, x, y, x * x, x * y][c]
        });
        let ay = DMatrix::from_fn(n, 5, |r, c| {
            let (x, y) = samples[r].0;
            [1.0, x, y, x * y, y * y][c]
        });
        let bx = DVector::from_fn(n, |r, _| samples[r].1 .0);
        let by = DVector::from_fn(n, |r, _| samples[r].1 .1);
        let a = ax.svd(true, true).solve(&bx, 1e-12).ok()?;
        let b = ay.svd(true, true).solve(&by, 1e-12).ok()?;
        let mut out = [0.0; FEATURE_DIM];
        out[..5].copy_from_slice(a.as_slice());
        out[5..].copy_from_slice(b.as_slice());
        out.iter().all(|v| v.is_finite()).then_some(out)
    };
    let Some(first) = fit(&samples) else {
        return [0.0; FEATURE_DIM];
    };
    // One trimming pass against mismatches.
    let residual = |((x, y), (dx, dy)): &((f64, f64), (f64, f64))| {
        let px = first[0] + first[1] * x + first[2] * y + first[3] * x * x + first[4] * x * y;
        let py = first[5] + first[6] * x + first[7] * y + first[8] * x * y + first[9] * y * y;
        ((px - dx).powi(2) + (py - dy).powi(2)).sqrt()
    };
    let mut res: Vec<f64> = samples.iter().map(residual).collect();
    res.sort_by(f64::total_cmp);
    let cutoff = (3.0 * res[res.len() / 2]).max(1.0 / k2.fx);
    let kept: Vec<_> = samples
        .iter()
        .copied()
        .filter(|s| residual(s) <= cutoff)
        .collect();
    fit(&kept).unwrap_or(first).map(|v| v * FEATURE_SCALE)
}

/// Everything about a scene that does not change during training.
#[derive(Debug, Clone)]
pub struct TrainingScene {
    pub scene: Scene,
    pub features: Features,
    pub depth1: DepthMap,
    pub f1: DescriptorField,
    pub f2: DescriptorField,
    /// Observed view-2 pixel per grid index; `None` where the surface point
    /// leaves view 2. Contains the scene's outliers and pixel noise.
    pub observations: Vec<Option<Pixel>>,
    /// Fusion weight per grid index.
    pub weights: Vec<f64>,
}

pub fn prepare_scene(scene: &Scene, fusion: &FusionParams, stride: u32) -> Result<TrainingScene> {
    let depth1 = render_depth(scene, View::First);
    let f1 = render_descriptors(scene, View::First);
    let f2 = render_descriptors(scene, View::Second);
    prepare_rendered(scene, depth1, f1, f2, fusion, stride)
}

/// Like [`prepare_scene`] with the view-1 depth and both descriptor fields
/// supplied, e.g. read back from disk.
pub fn prepare_rendered(
    scene: &Scene,
    depth1: DepthMap,
    f1: DescriptorField,
    f2: DescriptorField,
    fusion: &FusionParams,
    stride: u32,
) -> Result<TrainingScene> {
    let k1 = &scene.k1;
    if (depth1.width(), depth1.height()) != (k1.width, k1.height)
        || (f1.width(), f1.height()) != (k1.width, k1.height)
        || (f2.width(), f2.height()) != (scene.k2.width, scene.k2.height)
    {
        return Err(Error::DimensionMismatch(
            "rendered maps do not match scene intrinsics".into(),
        ));
    }
    let features = flow_features(&f1, &f2, &scene.k1, &scene.k2, stride);

    let cells = grid_cells(scene.k1.width, scene.k1.height, stride).count();
    let gt = form_correspondences(&depth1, &scene.k1, &scene.k2, &scene.gt_pose, stride)?;
    let projections = gt.valid_projections();
    let mut rng = substream(scene.seed, Domain::Corruption, 20);
    let corrupted = corrupt_correspondences(
        &gt,
        &projections,
        &scene.k2,
        scene.noise.outlier_fraction,
        scene.noise.pixel_sigma,
        &mut rng,
    )?;
    let mut observations = alloc::vec![None; cells];
    for (c, px) in gt.valid_entries().zip(corrupted.observed) {
        observations[c.grid_index] = Some(px);
    }

    let weights = if cells > 0 {
        fusion_forward(fusion, &build_embeddings(&f1, &f2, stride)?)?
    } else {
        Vec::new()
    };
    Ok(TrainingScene {
        scene: scene.clone(),
        features,
        depth1,
        f1,
        f2,
        observations,
        weights,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AblationMode {
    PoseOnly,
    PoseDesc,
    Full,
}

impl AblationMode {
    pub const ALL: [AblationMode; 3] = [
        AblationMode::PoseOnly,
        AblationMode::PoseDesc,
        AblationMode::Full,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AblationMode::PoseOnly => "pose_only",
            AblationMode::PoseDesc => "pose+desc",
            AblationMode::Full => "full",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.as_str() == s)
    }

    fn uses_descriptor(self) -> bool {
        self != AblationMode::PoseOnly
    }

    fn uses_consistency(self) -> bool {
        self == AblationMode::Full
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub steps: usize,
    pub learning_rate: f64,
    pub fd_step: f64,
    pub seed: u64,
    pub loss_weights: LossWeights,
    pub mode: AblationMode,
    pub stride: u32,
    pub s_max: f64,
    pub ransac: RansacConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 300,
            learning_rate: 5e-4,
            fd_step: 1e-5,
            seed: 0,
            loss_weights: LossWeights::default(),
            mode: AblationMode::Full,
            stride: 8,
            s_max: 1.0,
            ransac: RansacConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps < 1 {
            return Err(Error::config("steps", "must be at least 1"));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config(
                "learning_rate",
                "must be finite and non-negative",
            ));
        }
        if !(self.fd_step > 0.0) {
            return Err(Error::config("fd_step", "must be positive"));
        }
        if self.stride < 1 {
            return Err(Error::config("stride", "must be at least 1"));
        }
        if !(self.s_max > 0.0) {
            return Err(Error::config("s_max", "must be positive"));
        }
        self.loss_weights.validate()?;
        self.ransac.validate()
    }
}

/// Mean loss parts over the training scenes at one step, measured before
/// that step's update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub mode: AblationMode,
    pub pose_loss: f64,
    pub consistency_loss: f64,
    pub descriptor_loss: f64,
    pub total: f64,
    pub gated_fraction: f64,
}

impl StepRecord {
    pub const CSV_HEADER: &'static str =
        "step,mode,pose_loss,consistency_loss,descriptor_loss,total,gated_fraction";

    pub fn csv_row(&self) -> alloc::string::String {
        alloc::format!(
            "{},{},{:?},{:?},{:?},{:?},{:?}",
            self.step,
            self.mode.as_str(),
            self.pose_loss,
            self.consistency_loss,
            self.descriptor_loss,
            self.total,
            self.gated_fraction
        )
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub regressor: ToyRegressor,
    pub history: Vec<StepRecord>,
}

/// The per-scene pieces of one training step that stay fixed while the
/// objective is differentiated: the correspondence set formed with the
/// current prediction and, when the gate passes, the RANSAC pose.
struct StepContext {
    cs: CorrespondenceSet,
    solver: Option<Pose>,
}

fn step_context(
    ts: &TrainingScene,
    p_reg: &Pose,
    cfg: &TrainConfig,
    step: usize,
    index: usize,
) -> Result<StepContext> {
    let s = &ts.scene;
    let mut cs = form_correspondences(&ts.depth1, &s.k1, &s.k2, p_reg, cfg.stride)?;
    if !cfg.mode.uses_consistency() {
        return Ok(StepContext { cs, solver: None });
    }
    // RANSAC sees entries that are valid under the prediction and have an
    // observation in view 2.
    let mut ransac_cs = cs.clone();
    let mut observed = Vec::new();
    let mut weights = Vec::new();
    for c in ransac_cs.entries.iter_mut().filter(|c| c.valid) {
        match ts.observations[c.grid_index] {
            Some(px) => {
                observed.push(px);
                weights.push(ts.weights[c.grid_index]);
            }
            None => c.valid = false,
        }
    }
    let solver = if gate_sufficient(&ransac_cs) {
        let rc = RansacConfig {
            seed: derive_seed(
                cfg.seed,
                Domain::TrainStep,
                (step as u64) << 32 | index as u64,
            ),
            ..cfg.ransac.clone()
        };
        match run_weighted_ransac(&ransac_cs, &observed, &weights, p_reg, &s.k2, &rc) {
            Ok(r) => Some(r.pose),
            Err(e) if e.is_numerical() || matches!(e, Error::InsufficientSupport(_)) => None,
            Err(e) => return Err(e),
        }
    } else {
        None
    };
    cs.entries.retain(|c| c.valid);
    Ok(StepContext { cs, solver })
}

fn scene_loss(
    ts: &TrainingScene,
    ctx: &StepContext,
    z: &[f64; 6],
    cfg: &TrainConfig,
) -> Result<LossReport> {
    let p = pose_from_latent(z, cfg.s_max)?;
    let pose = pose_loss(&p, &ts.scene.gt_pose);
    let consistency = ctx.solver.as_ref().map_or(0.0, |s| consistency_loss(&p, s));
    let descriptor = if cfg.mode.uses_descriptor() {
        match descriptor_loss(&ts.f1, &ts.f2, &ctx.cs, &p, &ts.scene.k2) {
            Ok(v) => v,
            Err(Error::NoDescriptorSupport) => 0.0,
            Err(e) => return Err(e),
        }
    } else {
        0.0
    };
    Ok(total_loss(
        pose,
        consistency,
        descriptor,
        &cfg.loss_weights,
        ctx.solver.is_some(),
    ))
}

/// Gradient of the mean total loss over `scenes` at `reg`, plus the mean
/// loss report. Each scene's latent gradient comes from central
/// differences and is chained through the linear layer.
pub fn training_gradient(
    reg: &ToyRegressor,
    scenes: &[TrainingScene],
    cfg: &TrainConfig,
    step: usize,
) -> Result<(Vec<f64>, StepRecord)> {
    let n = scenes.len() as f64;
    let mut grad = alloc::vec![0.0; PARAM_COUNT];
    let mut rec = StepRecord {
        step,
        mode: cfg.mode,
        pose_loss: 0.0,
        consistency_loss: 0.0,
        descriptor_loss: 0.0,
        total: 0.0,
        gated_fraction: 0.0,
    };
    let mut gated = 0usize;
    for (i, ts) in scenes.iter().enumerate() {
        let z0 = reg.latent(&ts.features);
        let p_reg = pose_from_latent(&z0, reg.s_max)?;
        let ctx = step_context(ts, &p_reg, cfg, step, i)?;
        let report = scene_loss(ts, &ctx, &z0, cfg)?;
        rec.pose_loss += report.pose_loss / n;
        rec.consistency_loss += report.consistency_loss / n;
        rec.descriptor_loss += report.descriptor_loss / n;
        rec.total += report.total / n;
        gated += usize::from(report.consistency_applied);

        let gz = fd_gradient(
            |z| {
                let z: [f64; 6] = z.try_into().expect("latent has six entries");
                Ok(scene_loss(ts, &ctx, &z, cfg)?.total)
            },
            &z0,
            cfg.fd_step,
        )?;
        for (r, g) in gz.iter().enumerate() {
            for (j, f) in ts.features.iter().enumerate() {
                grad[r * FEATURE_DIM + j] += g * f / n;
            }
        }
        for r in 0..3 {
            grad[6 * FEATURE_DIM + r] += gz[3 + r] / n;
        }
    }
    rec.gated_fraction = gated as f64 / n;
    Ok((grad, rec))
}

/// Mean total loss over `scenes` with the per-step context (correspondences
/// and RANSAC poses) taken from `context_reg`. With `context_reg` equal to
/// the evaluated regressor this is the objective [`training_gradient`]
/// differentiates.
pub fn training_objective(
    reg: &ToyRegressor,
    context_reg: &ToyRegressor,
    scenes: &[TrainingScene],
    cfg: &TrainConfig,
    step: usize,
) -> Result<f64> {
    let mut total = 0.0;
    for (i, ts) in scenes.iter().enumerate() {
        let p_ctx = toy_forward(context_reg, &ts.features)?;
        let ctx = step_context(ts, &p_ctx, cfg, step, i)?;
        total += scene_loss(ts, &ctx, &reg.latent(&ts.features), cfg)?.total;
    }
    Ok(total / scenes.len() as f64)
}

pub fn train(scenes: &[TrainingScene], cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if scenes.is_empty() {
        return Err(Error::InsufficientSupport("no training scenes".into()));
    }
    let mut reg = ToyRegressor::initial(cfg.s_max);
    let mut history = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let (grad, rec) = training_gradient(&reg, scenes, cfg, step)?;
        if !(rec.total <= DIVERGENCE_LIMIT) {
            return Err(Error::Divergence {
                step,
                total: rec.total,
            });
        }
        history.push(rec);
        for (p, g) in reg.params.iter_mut().zip(&grad) {
            *p -= cfg.learning_rate * g;
        }
    }
    Ok(TrainOutcome {
        regressor: reg,
        history,
    })
}

pub fn evaluate(reg: &ToyRegressor, scenes: &[TrainingScene]) -> Result<Vec<PoseErrorSample>> {
    scenes
        .iter()
        .map(|ts| {
            Ok(PoseErrorSample::between(
                &toy_forward(reg, &ts.features)?,
                &ts.scene.gt_pose,
            ))
        })
        .collect()
}

/// A random parameter vector with entries uniform in `[-scale, scale]`.
pub fn random_params(seed: u64, scale: f64) -> Vec<f64> {
    let mut rng = substream(seed, Domain::Perturbation, 0);
    (0..PARAM_COUNT)
        .map(|_| (rng.random::<f64>() * 2.0 - 1.0) * scale)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::RotationMatrix;

    #[test]
    fn zero_params_give_identity() {
        let reg = ToyRegressor::zeros(1.0);
        let p = toy_forward(&reg, &[0.3; FEATURE_DIM]).unwrap();
        assert_eq!(p.rotation, RotationMatrix::identity());
        assert_eq!(p.translation, Vector3::zeros());
        assert_eq!(p, toy_forward(&reg, &[0.3; FEATURE_DIM]).unwrap());
    }

    #[test]
    fn scale_is_bounded() {
        let reg = ToyRegressor {
            params: random_params(1, 50.0),
            s_max: 0.7,
        };
        let p = toy_forward(&reg, &[1.0; FEATURE_DIM]).unwrap();
        assert!(p.translation.norm() <= 0.7 + 1e-12);
    }

    #[test]
    fn fd_examples() {
        let g = fd_gradient(|t| Ok(t[0] * t[0] + t[1] * t[1]), &[1.0, 2.0], 1e-4).unwrap();
        assert!((g[0] - 2.0).abs() < 1e-8 && (g[1] - 4.0).abs() < 1e-8);
        let g = fd_gradient(|_| Ok(3.0), &[1.0, 2.0, 3.0], 1e-3).unwrap();
        assert_eq!(g, alloc::vec![0.0; 3]);
        assert_eq!(
            fd_gradient(|_| Ok(f64::NAN), &[1.0], 1e-3),
            Err(Error::NonFiniteObjective(0))
        );
        assert!(fd_gradient(|_| Ok(0.0), &[1.0], 0.0).is_err());
    }

    #[test]
    fn mode_names_round_trip() {
        for m in AblationMode::ALL {
            assert_eq!(AblationMode::parse(m.as_str()), Some(m));
        }
        assert_eq!(AblationMode::parse("nope"), None);
    }
}
