//! Perspective-n-point from a small 3D-2D sample.
//!
//! The closed-form stage follows EPnP: points are written as barycentric
//! combinations of control points placed on the principal axes of the sample,
//! the camera-frame control points are found in the null space of the
//! projection system, and the metric scale comes from the preserved distances
//! between control points. Near-planar samples use three control points.
//! The best closed-form candidate is polished by Gauss-Newton on the
//! reprojection error.

use alloc::format;
use alloc::vec::Vec;
#[allow(unused_imports)] // std builds resolve these to inherent methods
use num_traits::Float;

use nalgebra::{DMatrix, DVector, Matrix3, Matrix6, SymmetricEigen, Vector2, Vector3, Vector6};

use crate::correspondence::CorrespondenceSet;
use crate::geometry::{
    svd_orthogonalize, CameraIntrinsics, Pixel, Point3, Pose, RotationMatrix, MIN_DEPTH,
};
use crate::{Error, Result};

/// Sample size used by the weighted RANSAC minimal sets.
pub const MINIMAL_SAMPLE: usize = 6;
/// Second principal variance below this fraction of the first: collinear.
pub const COLLINEAR_RATIO: f64 = 1e-10;
/// Third principal variance below this fraction of the first: planar.
pub const PLANAR_RATIO: f64 = 1e-8;

const REFINE_MAX_ITERATIONS: usize = 10;
const REFINE_STEP_TOLERANCE: f64 = 1e-10;
const BETA_ITERATIONS: usize = 8;

/// A 3D-2D sample: camera-1 points and their observed camera-2 pixels.
#[derive(Debug, Clone, Copy)]
pub struct PnpSample<'a> {
    pub points3d: &'a [Point3],
    pub pixels2d: &'a [Pixel],
    pub intrinsics2: &'a CameraIntrinsics,
}

/// Solves for the pose mapping camera-1 points onto the observed pixels.
pub fn solve_pnp(s: &PnpSample<'_>) -> Result<Pose> {
    let n = s.points3d.len();
    if n != s.pixels2d.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} points vs {} pixels",
            n,
            s.pixels2d.len()
        )));
    }
    if n < MINIMAL_SAMPLE {
        return Err(Error::InsufficientSupport(format!(
            "{} correspondences, need {}",
            n, MINIMAL_SAMPLE
        )));
    }
    let k = s.intrinsics2;
    let normalized: Vec<Vector2<f64>> = s
        .pixels2d
        .iter()
        .map(|p| Vector2::new((p.x - k.cx) / k.fx, (p.y - k.cy) / k.fy))
        .collect();

    let frame = ControlFrame::new(s.points3d)?;
    let alphas: Vec<[f64; 4]> = s.points3d.iter().map(|p| frame.barycentric(p)).collect();
    let m = frame.count;

    // Two rows per point: Σ_j α_j (x_j − u z_j) = 0 and Σ_j α_j (y_j − v z_j) = 0.
    let mut mm = DMatrix::<f64>::zeros(2 * n, 3 * m);
    for (i, (a, uv)) in alphas.iter().zip(&normalized).enumerate() {
        for j in 0..m {
            mm[(2 * i, 3 * j)] = a[j];
            mm[(2 * i, 3 * j + 2)] = -a[j] * uv.x;
            mm[(2 * i + 1, 3 * j + 1)] = a[j];
            mm[(2 * i + 1, 3 * j + 2)] = -a[j] * uv.y;
        }
    }
    let mtm = mm.transpose() * &mm;
    let eig = SymmetricEigen::new(mtm);
    let mut order: Vec<usize> = (0..3 * m).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let kernel: Vec<DVector<f64>> = order
        .iter()
        .take(3)
        .map(|&i| eig.eigenvectors.column(i).into_owned())
        .collect();

    let max_dim = if m == 4 { 3 } else { 2 };
    let mut best: Option<(f64, Pose)> = None;
    for dim in 1..=max_dim {
        let Some(betas) = frame.solve_betas(&kernel[..dim]) else {
            continue;
        };
        let Some(pose) = frame.pose_from_betas(&kernel[..dim], &betas, &alphas, s.points3d) else {
            continue;
        };
        let cost = reprojection_cost(&pose, s.points3d, s.pixels2d, k);
        if cost.is_finite() && best.as_ref().is_none_or(|(c, _)| cost < *c) {
            best = Some((cost, pose));
        }
    }
    let (_, pose) = best.ok_or(Error::DegenerateSample)?;
    let pose = refine_pose(pose, s.points3d, s.pixels2d, k);
    if !pose.is_finite() {
        return Err(Error::DegenerateSample);
    }
    let rotation =
        svd_orthogonalize(pose.rotation.matrix()).map_err(|_| Error::DegenerateSample)?;
    let pose = Pose::new(rotation, pose.translation);
    if !s.points3d.iter().any(|p| pose.transform(p).z > MIN_DEPTH) {
        return Err(Error::CheiralityFailure);
    }
    Ok(pose)
}

/// Control points on the principal axes of the sample.
struct ControlFrame {
    count: usize,
    centroid: Vector3<f64>,
    /// Unit principal axes, one per non-centroid control point.
    axes: [Vector3<f64>; 3],
    /// Distance from the centroid to each non-centroid control point.
    scales: [f64; 3],
    world: [Vector3<f64>; 4],
}

impl ControlFrame {
    fn new(points: &[Point3]) -> Result<Self> {
        let n = points.len() as f64;
        let centroid = points.iter().fold(Vector3::zeros(), |acc, p| acc + p) / n;
        let cov = points.iter().fold(Matrix3::zeros(), |acc, p| {
            let d = p - centroid;
            acc + d * d.transpose()
        });
        if !cov.iter().all(|v| v.is_finite()) {
            return Err(Error::DegenerateSample);
        }
        let eig = SymmetricEigen::new(cov);
        let mut order = [0usize, 1, 2];
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let lambda = [
            eig.eigenvalues[order[0]],
            eig.eigenvalues[order[1]],
            eig.eigenvalues[order[2]],
        ];
        if !(lambda[0] > 0.0) || lambda[1] < COLLINEAR_RATIO * lambda[0] {
            return Err(Error::DegenerateSample);
        }
        let planar = lambda[2] < PLANAR_RATIO * lambda[0];
        let count = if planar { 3 } else { 4 };
        let mut axes = [Vector3::zeros(); 3];
        let mut scales = [0.0; 3];
        let mut world = [centroid; 4];
        for j in 0..count - 1 {
            axes[j] = eig.eigenvectors.column(order[j]).into_owned();
            scales[j] = (lambda[j] / n).sqrt();
            world[j + 1] = centroid + axes[j] * scales[j];
        }
        Ok(Self {
            count,
            centroid,
            axes,
            scales,
            world,
        })
    }

    fn barycentric(&self, p: &Point3) -> [f64; 4] {
        let d = p - self.centroid;
        let mut a = [0.0; 4];
        let mut rest = 1.0;
        for j in 0..self.count - 1 {
            a[j + 1] = self.axes[j].dot(&d) / self.scales[j];
            rest -= a[j + 1];
        }
        a[0] = rest;
        a
    }

    fn pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.count).flat_map(move |j| (j + 1..self.count).map(move |k| (j, k)))
    }

    fn control_diff(v: &DVector<f64>, j: usize, k: usize) -> Vector3<f64> {
        Vector3::new(
            v[3 * j] - v[3 * k],
            v[3 * j + 1] - v[3 * k + 1],
            v[3 * j + 2] - v[3 * k + 2],
        )
    }

    /// Scales of the kernel vectors that preserve control-point distances:
    /// linearized least squares followed by Gauss-Newton.
    fn solve_betas(&self, kernel: &[DVector<f64>]) -> Option<Vec<f64>> {
        let dim = kernel.len();
        let pairs: Vec<(usize, usize)> = self.pairs().collect();
        let rho: Vec<f64> = pairs
            .iter()
            .map(|&(j, k)| (self.world[j] - self.world[k]).norm_squared())
            .collect();
        let diffs: Vec<Vec<Vector3<f64>>> = pairs
            .iter()
            .map(|&(j, k)| kernel.iter().map(|v| Self::control_diff(v, j, k)).collect())
            .collect();

        let mut betas = if dim == 1 {
            let (num, den) =
                pairs
                    .iter()
                    .zip(&diffs)
                    .fold((0.0, 0.0), |(num, den), (&(j, k), d)| {
                        let dc = d[0].norm();
                        (
                            num + dc * (self.world[j] - self.world[k]).norm(),
                            den + dc * dc,
                        )
                    });
            if !(den > 0.0) {
                return None;
            }
            alloc::vec![num / den]
        } else {
            let unknowns = dim * (dim + 1) / 2;
            if pairs.len() < unknowns {
                return None;
            }
            let mut l = DMatrix::<f64>::zeros(pairs.len(), unknowns);
            for (r, d) in diffs.iter().enumerate() {
                let mut c = 0;
                for a in 0..dim {
                    for b in a..dim {
                        l[(r, c)] = if a == b {
                            d[a].norm_squared()
                        } else {
                            2.0 * d[a].dot(&d[b])
                        };
                        c += 1;
                    }
                }
            }
            let rhs = DVector::from_vec(rho.clone());
            let b = l.svd(true, true).solve(&rhs, 1e-12).ok()?;
            // b is ordered (11, 12, .., 1d, 22, ..): the first `dim` entries carry β1·βa.
            let b11 = b[0];
            if b11.abs() < 1e-300 {
                return None;
            }
            let beta1 = b11.abs().sqrt();
            let mut betas = alloc::vec![beta1];
            for a in 1..dim {
                betas.push(b[a] / beta1);
            }
            betas
        };

        for _ in 0..BETA_ITERATIONS {
            let mut jt_j = DMatrix::<f64>::zeros(dim, dim);
            let mut jt_r = DVector::<f64>::zeros(dim);
            let mut cost = 0.0;
            for (d, r0) in diffs.iter().zip(&rho) {
                let cur: Vector3<f64> = d
                    .iter()
                    .zip(&betas)
                    .fold(Vector3::zeros(), |acc, (v, b)| acc + v * *b);
                let r = cur.norm_squared() - r0;
                cost += r * r;
                let row: Vec<f64> = d.iter().map(|v| 2.0 * cur.dot(v)).collect();
                for a in 0..dim {
                    jt_r[a] += row[a] * r;
                    for b in 0..dim {
                        jt_j[(a, b)] += row[a] * row[b];
                    }
                }
            }
            let Some(step) = jt_j.clone().lu().solve(&(-jt_r)) else {
                break;
            };
            let trial: Vec<f64> = betas.iter().zip(step.iter()).map(|(b, s)| b + s).collect();
            let trial_cost: f64 = diffs
                .iter()
                .zip(&rho)
                .map(|(d, r0)| {
                    let cur: Vector3<f64> = d
                        .iter()
                        .zip(&trial)
                        .fold(Vector3::zeros(), |acc, (v, b)| acc + v * *b);
                    let r = cur.norm_squared() - r0;
                    r * r
                })
                .sum();
            if !(trial_cost < cost) {
                break;
            }
            betas = trial;
            if step.norm() < 1e-14 {
                break;
            }
        }
        betas.iter().all(|b| b.is_finite()).then_some(betas)
    }

    fn pose_from_betas(
        &self,
        kernel: &[DVector<f64>],
        betas: &[f64],
        alphas: &[[f64; 4]],
        points: &[Point3],
    ) -> Option<Pose> {
        let x = kernel
            .iter()
            .zip(betas)
            .fold(DVector::zeros(3 * self.count), |acc, (v, b)| acc + v * *b);
        let controls: Vec<Vector3<f64>> = (0..self.count)
            .map(|j| Vector3::new(x[3 * j], x[3 * j + 1], x[3 * j + 2]))
            .collect();
        let mut camera: Vec<Vector3<f64>> = alphas
            .iter()
            .map(|a| (0..self.count).fold(Vector3::zeros(), |acc, j| acc + controls[j] * a[j]))
            .collect();
        let mean_z = camera.iter().map(|p| p.z).sum::<f64>();
        if mean_z < 0.0 {
            camera.iter_mut().for_each(|p| *p = -*p);
        }
        kabsch(points, &camera)
    }
}

/// Rigid transform `y ≈ R x + t` in the least-squares sense.
fn kabsch(x: &[Point3], y: &[Point3]) -> Option<Pose> {
    let n = x.len() as f64;
    let cx = x.iter().fold(Vector3::zeros(), |acc, p| acc + p) / n;
    let cy = y.iter().fold(Vector3::zeros(), |acc, p| acc + p) / n;
    let h = x.iter().zip(y).fold(Matrix3::zeros(), |acc, (a, b)| {
        acc + (a - cx) * (b - cy).transpose()
    });
    if !h.iter().all(|v| v.is_finite()) {
        return None;
    }
    let svd = h.svd(true, true);
    let (u, v_t) = (svd.u?, svd.v_t?);
    let v = v_t.transpose();
    let d = (v * u.transpose()).determinant().signum();
    let r = v * Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, d)) * u.transpose();
    let t = cy - r * cx;
    Some(Pose::new(RotationMatrix::from_matrix_unchecked(r), t))
}

fn reprojection_cost(
    pose: &Pose,
    points: &[Point3],
    pixels: &[Pixel],
    k: &CameraIntrinsics,
) -> f64 {
    points
        .iter()
        .zip(pixels)
        .map(|(p, px)| {
            let q = pose.transform(p);
            if q.z <= MIN_DEPTH {
                f64::INFINITY
            } else {
                (k.project_unchecked(&q) - px).norm_squared()
            }
        })
        .sum()
}

/// Gauss-Newton on the pixel reprojection error with a left-multiplied
/// rotation increment. Steps that do not lower the cost are rejected.
fn refine_pose(mut pose: Pose, points: &[Point3], pixels: &[Pixel], k: &CameraIntrinsics) -> Pose {
    let mut cost = reprojection_cost(&pose, points, pixels, k);
    for _ in 0..REFINE_MAX_ITERATIONS {
        if !cost.is_finite() || cost == 0.0 {
            break;
        }
        let mut h = Matrix6::<f64>::zeros();
        let mut g = Vector6::<f64>::zeros();
        for (p, px) in points.iter().zip(pixels) {
            let q = pose.transform(p);
            if q.z <= MIN_DEPTH {
                continue;
            }
            let iz = 1.0 / q.z;
            let proj = k.project_unchecked(&q);
            let r = proj - px;
            // d(proj)/dq
            let jp = nalgebra::Matrix2x3::new(
                k.fx * iz,
                0.0,
                -k.fx * q.x * iz * iz,
                0.0,
                k.fy * iz,
                -k.fy * q.y * iz * iz,
            );
            // dq/d(omega, dt) = [ -[q]x | I ]
            let skew = Matrix3::new(0.0, -q.z, q.y, q.z, 0.0, -q.x, -q.y, q.x, 0.0);
            let mut j = nalgebra::Matrix2x6::<f64>::zeros();
            j.fixed_view_mut::<2, 3>(0, 0).copy_from(&(jp * -skew));
            j.fixed_view_mut::<2, 3>(0, 3).copy_from(&jp);
            h += j.transpose() * j;
            g += j.transpose() * r;
        }
        let Some(delta) = h.lu().solve(&(-g)) else {
            break;
        };
        if !delta.iter().all(|v| v.is_finite()) {
            break;
        }
        let omega = Vector3::new(delta[0], delta[1], delta[2]);
        let dt = Vector3::new(delta[3], delta[4], delta[5]);
        let dr = RotationMatrix::from_rotation_vector(&omega);
        let trial = Pose::new(dr * pose.rotation, dr.matrix() * pose.translation + dt);
        let trial_cost = reprojection_cost(&trial, points, pixels, k);
        if !(trial_cost <= cost) {
            break;
        }
        pose = trial;
        cost = trial_cost;
        if delta.norm() < REFINE_STEP_TOLERANCE {
            break;
        }
    }
    pose
}

/// Pixel distances between the projections of `points` under `pose` and the
/// observed pixels; points at or behind camera 2 get `+∞`.
pub fn reprojection_errors_for_points(
    pose: &Pose,
    points: &[Point3],
    observed: &[Pixel],
    k2: &CameraIntrinsics,
) -> Vec<f64> {
    points
        .iter()
        .zip(observed)
        .map(|(p, px)| {
            let q = pose.transform(p);
            if q.z <= MIN_DEPTH {
                f64::INFINITY
            } else {
                (k2.project_unchecked(&q) - px).norm()
            }
        })
        .collect()
}

/// [`reprojection_errors_for_points`] over the valid entries of `cs`;
/// `observed` is aligned with those entries.
pub fn reprojection_errors(
    pose: &Pose,
    cs: &CorrespondenceSet,
    observed: &[Pixel],
    k2: &CameraIntrinsics,
) -> Result<Vec<f64>> {
    let points = cs.valid_points();
    if points.len() != observed.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} valid correspondences vs {} observed pixels",
            points.len(),
            observed.len()
        )));
    }
    Ok(reprojection_errors_for_points(pose, &points, observed, k2))
}

/// Number of errors strictly below `threshold`.
pub fn count_inliers(errors: &[f64], threshold: f64) -> usize {
    errors.iter().filter(|e| **e < threshold).count()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{project, rotation_error_deg};
    use alloc::vec;

    fn k() -> CameraIntrinsics {
        CameraIntrinsics::new(120.0, 110.0, 64.0, 48.0, 128, 96).unwrap()
    }

    fn synth(pose: &Pose, points: &[Point3]) -> Vec<Pixel> {
        points
            .iter()
            .map(|p| project(&k(), &pose.transform(p)).unwrap())
            .collect()
    }

    #[test]
    fn identity_on_z1_plane() {
        let pts = vec![
            Point3::new(-0.3, -0.2, 1.0),
            Point3::new(0.2, -0.25, 1.0),
            Point3::new(0.1, 0.3, 1.0),
            Point3::new(-0.2, 0.1, 1.0),
            Point3::new(0.35, 0.05, 1.0),
            Point3::new(-0.05, -0.05, 1.0),
        ];
        let px = synth(&Pose::identity(), &pts);
        let pose = solve_pnp(&PnpSample {
            points3d: &pts,
            pixels2d: &px,
            intrinsics2: &k(),
        })
        .unwrap();
        assert!(rotation_error_deg(&pose.rotation, &RotationMatrix::identity()) < 1e-6);
        assert!(pose.translation.norm() < 1e-9);
    }

    #[test]
    fn general_position_exact_recovery() {
        let gt = Pose::new(
            RotationMatrix::from_axis_angle(&Vector3::new(0.2, 1.0, -0.3), 0.35),
            Vector3::new(0.4, -0.1, 0.2),
        );
        let pts = vec![
            Point3::new(-0.5, -0.3, 2.0),
            Point3::new(0.4, -0.35, 2.6),
            Point3::new(0.2, 0.45, 3.1),
            Point3::new(-0.4, 0.2, 2.2),
            Point3::new(0.6, 0.1, 3.5),
            Point3::new(0.0, -0.1, 2.9),
        ];
        let px = synth(&gt, &pts);
        let pose = solve_pnp(&PnpSample {
            points3d: &pts,
            pixels2d: &px,
            intrinsics2: &k(),
        })
        .unwrap();
        assert!(rotation_error_deg(&pose.rotation, &gt.rotation) < 1e-4);
        assert!((pose.translation - gt.translation).norm() < 1e-6);
    }

    #[test]
    fn collinear_sample_is_degenerate() {
        let pts: Vec<Point3> = (0..6)
            .map(|i| Point3::new(0.1 * i as f64, 0.05 * i as f64, 2.0 + 0.1 * i as f64))
            .collect();
        let px = synth(&Pose::identity(), &pts);
        let res = solve_pnp(&PnpSample {
            points3d: &pts,
            pixels2d: &px,
            intrinsics2: &k(),
        });
        assert_eq!(res, Err(Error::DegenerateSample));
    }

    #[test]
    fn too_few_points() {
        let pts = vec![Point3::new(0.0, 0.0, 1.0); 5];
        let px = vec![Pixel::zeros(); 5];
        assert!(matches!(
            solve_pnp(&PnpSample {
                points3d: &pts,
                pixels2d: &px,
                intrinsics2: &k()
            }),
            Err(Error::InsufficientSupport(_))
        ));
    }

    #[test]
    fn inlier_counting_is_strict() {
        assert_eq!(count_inliers(&[1.9, 2.0, 2.1], 2.0), 1);
        assert_eq!(count_inliers(&[], 2.0), 0);
        assert_eq!(count_inliers(&[0.0; 7], 2.0), 7);
        assert_eq!(count_inliers(&[f64::INFINITY], 2.0), 0);
    }

    #[test]
    fn behind_camera_error_is_infinite() {
        let pts = vec![Point3::new(0.0, 0.0, -1.0), Point3::new(0.0, 0.0, 1.0)];
        let obs = vec![Pixel::new(64.0, 48.0); 2];
        let e = reprojection_errors_for_points(&Pose::identity(), &pts, &obs, &k());
        assert!(e[0].is_infinite());
        assert_eq!(e[1], 0.0);
    }
}
