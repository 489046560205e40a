//! Planar ground-truth scenes.
//!
//! A scene is two pinhole cameras looking at one plane `nᵀX + d = 0`
//! (camera-1 frame). Depth has a closed form from either camera, and
//! descriptors are a random Fourier feature map of the 3D surface point, so
//! the same point carries the same descriptor in both views.

use alloc::vec::Vec;
#[allow(unused_imports)] // std builds resolve these to inherent methods
use num_traits::Float;

use nalgebra::Vector3;
use rand::seq::index;
use rand::Rng as _;
use rand::RngCore;
use rand_distr::{Distribution, StandardNormal};

use crate::correspondence::{CorrespondenceSet, DepthMap, DescriptorField};
use crate::geometry::{CameraIntrinsics, Pixel, Point3, Pose, RotationMatrix};
use crate::rng::{derive_seed, substream, Domain};
use crate::{Error, Result};

/// Rejection-sampling budget of [`make_scene`].
pub const MAX_SCENE_ATTEMPTS: usize = 1000;
const MAX_VISIBLE_DEPTH: f64 = 100.0;
const CORRUPTION_CONFIDENCE_SCALE: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct NoiseSpec {
    /// Gaussian pixel noise on inlier observations.
    pub pixel_sigma: f64,
    /// Multiplicative depth noise, `d · (1 + σ·n)`.
    pub depth_sigma: f64,
    /// Fraction of observations replaced by uniform pixels.
    pub outlier_fraction: f64,
    /// Gaussian noise added to descriptors inside the corrupted region.
    pub descriptor_sigma: f64,
}

/// Ranges from which [`make_scene`] draws.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneConfig {
    pub min_image_size: u32,
    pub max_image_size: u32,
    /// Focal length as a multiple of image width, before clamping to
    /// `[min_focal, max_focal]`.
    pub focal_per_width: (f64, f64),
    pub min_focal: f64,
    pub max_focal: f64,
    pub min_rotation_deg: f64,
    pub max_rotation_deg: f64,
    pub min_baseline: f64,
    pub max_baseline: f64,
    /// Distance of the plane along the camera-1 optical axis.
    pub plane_depth: (f64, f64),
    pub max_plane_tilt_deg: f64,
    pub descriptor_dim: usize,
    /// Standard deviation of each Fourier frequency component, rad/m.
    pub descriptor_frequency: f64,
    /// Fraction of camera-1 probe pixels that must land inside camera 2.
    pub min_overlap: f64,
    pub noise: NoiseSpec,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            min_image_size: 64,
            max_image_size: 256,
            focal_per_width: (1.0, 1.4),
            min_focal: 80.0,
            max_focal: 300.0,
            min_rotation_deg: 0.0,
            max_rotation_deg: 45.0,
            min_baseline: 0.0,
            max_baseline: 2.0,
            plane_depth: (2.0, 6.0),
            max_plane_tilt_deg: 30.0,
            descriptor_dim: 24,
            descriptor_frequency: 3.0,
            min_overlap: 0.5,
            noise: NoiseSpec::default(),
        }
    }
}

impl SceneConfig {
    /// Small, wide-angle pairs with modest motion, as used by the toy
    /// trainer.
    pub fn training() -> Self {
        Self {
            min_image_size: 96,
            max_image_size: 128,
            focal_per_width: (0.45, 0.55),
            min_focal: 40.0,
            max_focal: 300.0,
            max_rotation_deg: 5.0,
            min_baseline: 0.3,
            max_baseline: 0.6,
            plane_depth: (1.5, 2.5),
            max_plane_tilt_deg: 20.0,
            min_overlap: 0.6,
            noise: NoiseSpec {
                pixel_sigma: 0.5,
                depth_sigma: 0.0,
                outlier_fraction: 0.2,
                descriptor_sigma: 0.2,
            },
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.min_image_size < 8 || self.min_image_size > self.max_image_size {
            return Err(Error::config(
                "min_image_size",
                "must be at least 8 and not exceed max_image_size",
            ));
        }
        let (f0, f1) = self.focal_per_width;
        if !(f0 > 0.0 && f0 <= f1) {
            return Err(Error::config(
                "focal_per_width",
                "must be a positive, ordered range",
            ));
        }
        if !(self.min_focal > 0.0 && self.min_focal <= self.max_focal) {
            return Err(Error::config(
                "min_focal",
                "must be positive and not exceed max_focal",
            ));
        }
        if !(self.min_rotation_deg >= 0.0 && self.min_rotation_deg <= self.max_rotation_deg) {
            return Err(Error::config(
                "min_rotation_deg",
                "must be non-negative and not exceed max_rotation_deg",
            ));
        }
        if !(self.max_rotation_deg <= 180.0) {
            return Err(Error::config("max_rotation_deg", "must not exceed 180"));
        }
        if !(self.min_baseline >= 0.0 && self.min_baseline <= self.max_baseline) {
            return Err(Error::config(
                "min_baseline",
                "must be non-negative and not exceed max_baseline",
            ));
        }
        let (d0, d1) = self.plane_depth;
        if !(d0 > 0.0 && d0 <= d1) {
            return Err(Error::config(
                "plane_depth",
                "must be a positive, ordered range",
            ));
        }
        if !(self.max_plane_tilt_deg >= 0.0 && self.max_plane_tilt_deg < 80.0) {
            return Err(Error::config("max_plane_tilt_deg", "must lie in [0, 80)"));
        }
        if self.descriptor_dim == 0 {
            return Err(Error::config("descriptor_dim", "must be positive"));
        }
        if !(self.descriptor_frequency > 0.0) {
            return Err(Error::config("descriptor_frequency", "must be positive"));
        }
        if !(0.0..=1.0).contains(&self.min_overlap) {
            return Err(Error::config("min_overlap", "must lie in [0, 1]"));
        }
        let n = &self.noise;
        if !(n.pixel_sigma >= 0.0) {
            return Err(Error::config("noise.pixel_sigma", "must be non-negative"));
        }
        if !(n.depth_sigma >= 0.0 && n.depth_sigma < 0.5) {
            return Err(Error::config("noise.depth_sigma", "must lie in [0, 0.5)"));
        }
        if !(0.0..1.0).contains(&n.outlier_fraction) {
            return Err(Error::config(
                "noise.outlier_fraction",
                "must lie in [0, 1)",
            ));
        }
        if !(n.descriptor_sigma >= 0.0) {
            return Err(Error::config(
                "noise.descriptor_sigma",
                "must be non-negative",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum View {
    First,
    Second,
}

impl View {
    fn index(self) -> u64 {
        match self {
            View::First => 0,
            View::Second => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    /// Seed the scene was drawn from; depth noise derives from it.
    pub seed: u64,
    pub k1: CameraIntrinsics,
    pub k2: CameraIntrinsics,
    /// Camera 1 → camera 2.
    pub gt_pose: Pose,
    /// Unit normal of the plane, camera-1 frame.
    pub plane_normal: Vector3<f64>,
    /// Plane offset `d` in `nᵀX + d = 0`, meters.
    pub plane_offset: f64,
    pub descriptor_seed: u64,
    pub descriptor_dim: usize,
    pub descriptor_frequency: f64,
    pub noise: NoiseSpec,
}

impl Scene {
    pub fn intrinsics(&self, view: View) -> &CameraIntrinsics {
        match view {
            View::First => &self.k1,
            View::Second => &self.k2,
        }
    }

    /// The plane `(n, d)` expressed in the frame of `view`.
    pub fn plane_in(&self, view: View) -> (Vector3<f64>, f64) {
        match view {
            View::First => (self.plane_normal, self.plane_offset),
            View::Second => {
                let n2 = self.gt_pose.rotation.matrix() * self.plane_normal;
                (n2, self.plane_offset - n2.dot(&self.gt_pose.translation))
            }
        }
    }

    /// Noise-free depth along the ray through `px`, or `None` when the plane
    /// is not in front of the camera there.
    pub fn ray_depth(&self, view: View, px: &Pixel) -> Option<f64> {
        let k = self.intrinsics(view);
        let (n, d) = self.plane_in(view);
        let ray = Vector3::new((px.x - k.cx) / k.fx, (px.y - k.cy) / k.fy, 1.0);
        let denom = n.dot(&ray);
        if denom == 0.0 {
            return None;
        }
        let depth = -d / denom;
        (depth > 0.0 && depth.is_finite()).then_some(depth)
    }

    /// The surface point seen through `px`, in the camera-1 frame.
    pub fn surface_point(&self, view: View, px: &Pixel) -> Option<Point3> {
        let k = self.intrinsics(view);
        let depth = self.ray_depth(view, px)?;
        let x = Point3::new(
            (px.x - k.cx) / k.fx * depth,
            (px.y - k.cy) / k.fy * depth,
            depth,
        );
        Some(match view {
            View::First => x,
            View::Second => self.gt_pose.inverse().transform(&x),
        })
    }

    pub fn descriptor_function(&self) -> DescriptorFunction {
        DescriptorFunction::new(
            self.descriptor_seed,
            self.descriptor_dim,
            self.descriptor_frequency,
        )
    }

    fn check_visibility(&self, min_overlap: f64) -> bool {
        for view in [View::First, View::Second] {
            let k = self.intrinsics(view);
            let (w, h) = ((k.width - 1) as f64, (k.height - 1) as f64);
            for c in [
                Pixel::new(0.0, 0.0),
                Pixel::new(w, 0.0),
                Pixel::new(0.0, h),
                Pixel::new(w, h),
            ] {
                match self.ray_depth(view, &c) {
                    Some(d) if d <= MAX_VISIBLE_DEPTH => {}
                    _ => return false,
                }
            }
        }
        if min_overlap <= 0.0 {
            return true;
        }
        let probes = 8u32;
        let mut inside = 0usize;
        for j in 0..probes {
            for i in 0..probes {
                let px = Pixel::new(
                    (i as f64 + 0.5) / probes as f64 * self.k1.width as f64,
                    (j as f64 + 0.5) / probes as f64 * self.k1.height as f64,
                );
                let Some(x1) = self.surface_point(View::First, &px) else {
                    return false;
                };
                let x2 = self.gt_pose.transform(&x1);
                if x2.z > 0.0 && self.k2.contains(&self.k2.project_unchecked(&x2)) {
                    inside += 1;
                }
            }
        }
        inside as f64 >= min_overlap * (probes * probes) as f64
    }
}

/// `normalize(cos(F·X + φ))` with one random frequency row and phase per
/// descriptor channel.
#[derive(Debug, Clone, PartialEq)]
pub struct DescriptorFunction {
    pub frequencies: Vec<Vector3<f64>>,
    pub phases: Vec<f64>,
}

impl DescriptorFunction {
    pub fn new(seed: u64, dim: usize, frequency_sigma: f64) -> Self {
        let mut rng = substream(seed, Domain::Descriptor, u64::MAX);
        let mut frequencies = Vec::with_capacity(dim);
        let mut phases = Vec::with_capacity(dim);
        for _ in 0..dim {
            let f: [f64; 3] = core::array::from_fn(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                z * frequency_sigma
            });
            frequencies.push(Vector3::from(f));
            phases.push(rng.random::<f64>() * core::f64::consts::TAU);
        }
        Self {
            frequencies,
            phases,
        }
    }

    pub fn dim(&self) -> usize {
        self.phases.len()
    }

    /// Writes the raw (unnormalized) features of `x` into `out`.
    pub fn raw_into(&self, x: &Point3, out: &mut [f64]) {
        for ((o, f), p) in out.iter_mut().zip(&self.frequencies).zip(&self.phases) {
            *o = (f.dot(x) + p).cos();
        }
    }

    pub fn eval(&self, x: &Point3) -> Vec<f64> {
        let mut out = alloc::vec![0.0; self.dim()];
        self.raw_into(x, &mut out);
        normalize_in_place(&mut out);
        out
    }
}

fn normalize_in_place(v: &mut [f64]) {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    } else {
        v.iter_mut().for_each(|x| *x = 0.0);
        v[0] = 1.0;
    }
}

fn uniform(rng: &mut impl RngCore, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}

fn random_unit(rng: &mut impl RngCore) -> Vector3<f64> {
    loop {
        let v = Vector3::new(
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
        );
        let n: f64 = v.norm();
        if n > 1e-9 {
            return v / n;
        }
    }
}

fn random_intrinsics(
    rng: &mut impl RngCore,
    cfg: &SceneConfig,
    width: u32,
    height: u32,
) -> Result<CameraIntrinsics> {
    let f = (width as f64 * uniform(rng, cfg.focal_per_width.0, cfg.focal_per_width.1))
        .clamp(cfg.min_focal, cfg.max_focal);
    let cx = width as f64 / 2.0 + uniform(rng, -1.0, 1.0);
    let cy = height as f64 / 2.0 + uniform(rng, -1.0, 1.0);
    CameraIntrinsics::new(f, f, cx, cy, width, height)
}

/// Draws a scene satisfying the visibility invariant: the plane has positive
/// depth at all four image corners of both cameras, and at least
/// `cfg.min_overlap` of camera 1's view reprojects into camera 2.
pub fn make_scene(seed: u64, cfg: &SceneConfig) -> Result<Scene> {
    cfg.validate()?;
    for attempt in 0..MAX_SCENE_ATTEMPTS {
        let mut rng = substream(seed, Domain::Scene, attempt as u64);
        // Both views share one resolution, as network inputs do; focal
        // length and principal point differ per camera.
        let span = cfg.max_image_size - cfg.min_image_size + 1;
        let width = cfg.min_image_size + (rng.random::<u32>() % span);
        let height = cfg.min_image_size + (rng.random::<u32>() % span);
        let k1 = random_intrinsics(&mut rng, cfg, width, height)?;
        let k2 = random_intrinsics(&mut rng, cfg, width, height)?;

        let angle = uniform(&mut rng, cfg.min_rotation_deg, cfg.max_rotation_deg).to_radians();
        let rotation = RotationMatrix::from_axis_angle(&random_unit(&mut rng), angle);
        let baseline = uniform(&mut rng, cfg.min_baseline, cfg.max_baseline);
        let center2 = random_unit(&mut rng) * baseline;
        let translation = -(rotation.matrix() * center2);
        let gt_pose = Pose::new(rotation, translation);

        let depth = uniform(&mut rng, cfg.plane_depth.0, cfg.plane_depth.1);
        let tilt = uniform(&mut rng, 0.0, cfg.max_plane_tilt_deg).to_radians();
        let tilt_axis = random_unit(&mut rng);
        let tilt_axis = Vector3::new(tilt_axis.x, tilt_axis.y, 0.0);
        let normal = RotationMatrix::from_axis_angle(&tilt_axis, tilt) * Vector3::z();
        // The plane crosses the optical axis at `depth`.
        let plane_offset = -normal.z * depth;

        let scene = Scene {
            seed,
            k1,
            k2,
            gt_pose,
            plane_normal: normal,
            plane_offset,
            descriptor_seed: derive_seed(seed, Domain::Descriptor, 0),
            descriptor_dim: cfg.descriptor_dim,
            descriptor_frequency: cfg.descriptor_frequency,
            noise: cfg.noise,
        };
        if scene.check_visibility(cfg.min_overlap) {
            return Ok(scene);
        }
    }
    Err(Error::VisibilityRejected(MAX_SCENE_ATTEMPTS))
}

/// Closed-form ray-plane depth for every pixel of `view`, with the scene's
/// multiplicative depth noise applied.
pub fn render_depth(s: &Scene, view: View) -> DepthMap {
    let k = s.intrinsics(view);
    let sigma = s.noise.depth_sigma;
    let mut rng = substream(s.seed, Domain::Corruption, 10 + view.index());
    let mut values = Vec::with_capacity(k.width as usize * k.height as usize);
    for y in 0..k.height {
        for x in 0..k.width {
            let d = s
                .ray_depth(view, &Pixel::new(x as f64, y as f64))
                .unwrap_or(f64::NAN);
            let d = if sigma > 0.0 {
                let z: f64 = StandardNormal.sample(&mut rng);
                d * (1.0 + sigma * z)
            } else {
                d
            };
            values.push(d);
        }
    }
    DepthMap::new(k.width, k.height, values).expect("size matches intrinsics")
}

/// The axis-aligned pixel rectangle `[x0, x1) × [y0, y1)` whose descriptors
/// are corrupted, covering a quarter of the image.
pub fn corruption_region(s: &Scene, view: View) -> (u32, u32, u32, u32) {
    let k = s.intrinsics(view);
    let mut rng = substream(s.descriptor_seed, Domain::Corruption, view.index());
    let (w, h) = (k.width / 2, k.height / 2);
    let x0 = rng.random::<u32>() % (k.width - w + 1);
    let y0 = rng.random::<u32>() % (k.height - h + 1);
    (x0, y0, x0 + w, y0 + h)
}

/// Descriptors of the surface point behind every pixel. Inside the
/// corruption region (only when `noise.descriptor_sigma > 0`) Gaussian noise
/// is added before normalization and the confidence drops to
/// `1 / (1 + 10σ)`; elsewhere confidence is 1.
pub fn render_descriptors(s: &Scene, view: View) -> DescriptorField {
    let k = s.intrinsics(view);
    let func = s.descriptor_function();
    let dim = func.dim();
    let sigma = s.noise.descriptor_sigma;
    let region = (sigma > 0.0).then(|| corruption_region(s, view));
    let mut rng = substream(s.descriptor_seed, Domain::Corruption, 2 + view.index());
    let n = k.width as usize * k.height as usize;
    let mut data = Vec::with_capacity(n * dim);
    let mut confidence = Vec::with_capacity(n);
    let mut buf = alloc::vec![0.0; dim];
    for y in 0..k.height {
        for x in 0..k.width {
            let px = Pixel::new(x as f64, y as f64);
            match s.surface_point(view, &px) {
                Some(p) => func.raw_into(&p, &mut buf),
                None => buf.iter_mut().for_each(|v| *v = 0.0),
            }
            let corrupted =
                region.is_some_and(|(x0, y0, x1, y1)| x >= x0 && x < x1 && y >= y0 && y < y1);
            if corrupted {
                for v in buf.iter_mut() {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    *v += sigma * z;
                }
                confidence.push(1.0 / (1.0 + CORRUPTION_CONFIDENCE_SCALE * sigma));
            } else {
                confidence.push(1.0);
            }
            normalize_in_place(&mut buf);
            data.extend_from_slice(&buf);
        }
    }
    DescriptorField::new(k.width, k.height, dim, data, confidence)
        .expect("rendered field is well formed")
}

/// Observed pixels after contamination, plus which of them are inliers.
#[derive(Debug, Clone, PartialEq)]
pub struct Corruption {
    pub observed: Vec<Pixel>,
    pub inlier_mask: Vec<bool>,
}

impl Corruption {
    pub fn outlier_count(&self) -> usize {
        self.inlier_mask.iter().filter(|m| !**m).count()
    }
}

/// Replaces `round(fraction · N)` uniformly chosen observations by uniform
/// pixels inside `k2` and adds Gaussian noise of `pixel_sigma` to the rest.
/// `observed` is aligned with the valid entries of `cs`.
pub fn corrupt_correspondences<R: RngCore + ?Sized>(
    cs: &CorrespondenceSet,
    observed: &[Pixel],
    k2: &CameraIntrinsics,
    outlier_fraction: f64,
    pixel_sigma: f64,
    rng: &mut R,
) -> Result<Corruption> {
    if !(0.0..1.0).contains(&outlier_fraction) {
        return Err(Error::config("outlier_fraction", "must lie in [0, 1)"));
    }
    if !(pixel_sigma >= 0.0) {
        return Err(Error::config("pixel_sigma", "must be non-negative"));
    }
    let n = cs.valid_count();
    if n != observed.len() {
        return Err(Error::DimensionMismatch(alloc::format!(
            "{} valid correspondences vs {} observed pixels",
            n,
            observed.len()
        )));
    }
    let outliers = (outlier_fraction * n as f64).round() as usize;
    let mut inlier_mask = alloc::vec![true; n];
    for i in index::sample(rng, n, outliers).into_iter() {
        inlier_mask[i] = false;
    }
    let observed = observed
        .iter()
        .zip(&inlier_mask)
        .map(|(px, inlier)| {
            if *inlier {
                if pixel_sigma > 0.0 {
                    let dx: f64 = StandardNormal.sample(rng);
                    let dy: f64 = StandardNormal.sample(rng);
                    px + Pixel::new(dx, dy) * pixel_sigma
                } else {
                    *px
                }
            } else {
                Pixel::new(
                    rng.random::<f64>() * k2.width as f64,
                    rng.random::<f64>() * k2.height as f64,
                )
            }
        })
        .collect();
    Ok(Corruption {
        observed,
        inlier_mask,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::correspondence::form_correspondences;
    use crate::rng::Rng;
    use rand::SeedableRng;

    fn fronto_parallel(depth: f64) -> Scene {
        let k = CameraIntrinsics::new(100.0, 100.0, 32.0, 24.0, 64, 48).unwrap();
        Scene {
            seed: 1,
            k1: k,
            k2: k,
            gt_pose: Pose::new(RotationMatrix::identity(), Vector3::new(0.1, 0.0, 0.0)),
            plane_normal: Vector3::z(),
            plane_offset: -depth,
            descriptor_seed: 9,
            descriptor_dim: 24,
            descriptor_frequency: 3.0,
            noise: NoiseSpec::default(),
        }
    }

    #[test]
    fn fronto_parallel_depth_is_uniform() {
        let d = render_depth(&fronto_parallel(2.0), View::First);
        assert_eq!(d.valid_count(), 64 * 48);
        assert!(d.values().iter().all(|v| (*v - 2.0).abs() < 1e-12));
    }

    #[test]
    fn fixed_seed_is_reproducible() {
        let cfg = SceneConfig::default();
        assert_eq!(make_scene(42, &cfg).unwrap(), make_scene(42, &cfg).unwrap());
        assert_ne!(make_scene(42, &cfg).unwrap(), make_scene(43, &cfg).unwrap());
    }

    #[test]
    fn zero_motion_config_gives_identity() {
        let cfg = SceneConfig {
            max_rotation_deg: 0.0,
            max_baseline: 0.0,
            ..Default::default()
        };
        let s = make_scene(5, &cfg).unwrap();
        assert_eq!(s.gt_pose.rotation, RotationMatrix::identity());
        assert_eq!(s.gt_pose.translation, Vector3::zeros());
    }

    #[test]
    fn invalid_config_names_field() {
        let cfg = SceneConfig {
            max_baseline: -1.0,
            ..Default::default()
        };
        assert!(matches!(
            make_scene(0, &cfg),
            Err(Error::InvalidConfig {
                field: "min_baseline",
                ..
            })
        ));
    }

    #[test]
    fn corruption_counts() {
        let s = make_scene(3, &SceneConfig::default()).unwrap();
        let d = render_depth(&s, View::First);
        let cs = form_correspondences(&d, &s.k1, &s.k2, &s.gt_pose, 8).unwrap();
        let obs = cs.valid_projections();
        let mut rng = Rng::seed_from_u64(1);
        let clean = corrupt_correspondences(&cs, &obs, &s.k2, 0.0, 0.0, &mut rng).unwrap();
        assert_eq!(clean.observed, obs);
        assert_eq!(clean.outlier_count(), 0);
        let dirty = corrupt_correspondences(&cs, &obs, &s.k2, 0.3, 0.5, &mut rng).unwrap();
        assert_eq!(
            dirty.outlier_count(),
            (0.3 * obs.len() as f64).round() as usize
        );
        assert!(corrupt_correspondences(&cs, &obs, &s.k2, 1.0, 0.0, &mut rng).is_err());
    }

    #[test]
    fn descriptors_are_deterministic_and_corruption_lowers_confidence() {
        let mut s = fronto_parallel(3.0);
        assert_eq!(
            render_descriptors(&s, View::First),
            render_descriptors(&s, View::First)
        );
        s.noise.descriptor_sigma = 0.3;
        let f = render_descriptors(&s, View::Second);
        let low = f.confidences().iter().filter(|c| **c < 1.0).count();
        assert_eq!(low, (32 * 24) as usize);
    }
}
