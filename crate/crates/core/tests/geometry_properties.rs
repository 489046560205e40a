use approx::assert_relative_eq;
use gcr_core::geometry::{
    pose_frobenius_distance, project, rotation_error_deg, svd_orthogonalize,
    translation_direction_error_deg, unproject,
};
use gcr_core::pnp::{solve_pnp, PnpSample};
use gcr_core::{CameraIntrinsics, Pixel, Point3, Pose, RotationMatrix};
use nalgebra::{Matrix3, Vector3};
use proptest::prelude::*;

fn axis() -> impl Strategy<Value = Vector3<f64>> {
    (-1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64)
        .prop_filter("non-degenerate axis", |(x, y, z)| {
            x * x + y * y + z * z > 1e-2
        })
        .prop_map(|(x, y, z)| Vector3::new(x, y, z).normalize())
}

fn rotation() -> impl Strategy<Value = RotationMatrix> {
    (axis(), 0.0..3.1f64).prop_map(|(a, t)| RotationMatrix::from_axis_angle(&a, t))
}

fn pose() -> impl Strategy<Value = Pose> {
    (rotation(), -1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64)
        .prop_map(|(r, x, y, z)| Pose::new(r, Vector3::new(x, y, z)))
}

fn intrinsics() -> impl Strategy<Value = CameraIntrinsics> {
    (80.0..300.0f64, 64u32..256, 64u32..256).prop_map(|(f, w, h)| {
        CameraIntrinsics::new(f, f * 1.01, w as f64 / 2.0, h as f64 / 2.0, w, h).unwrap()
    })
}

/// Angle between rotations straight from the trace, an independent route.
fn acos_angle(a: &RotationMatrix, b: &RotationMatrix) -> f64 {
    let m = a.matrix().transpose() * b.matrix();
    ((m.trace() - 1.0) / 2.0)
        .clamp(-1.0, 1.0)
        .acos()
        .to_degrees()
}

proptest! {
    #[test]
    fn unproject_then_project_is_identity(k in intrinsics(), u in 0.0..1.0f64, v in 0.0..1.0f64, d in 0.1..50.0f64) {
        let px = Pixel::new(u * (k.width - 1) as f64, v * (k.height - 1) as f64);
        let x = unproject(&k, &px, d).unwrap();
        prop_assert!((x.z - d).abs() < 1e-12 * d.max(1.0));
        let back = project(&k, &x).unwrap();
        prop_assert!((back - px).norm() < 1e-9);
    }

    #[test]
    fn rotation_angle_matches_trace_formula(a in rotation(), b in rotation()) {
        let e = rotation_error_deg(&a, &b);
        let reference = acos_angle(&a, &b);
        // acos loses precision near 0 and 180 degrees.
        prop_assert!((e - reference).abs() < 1e-5, "{e} vs {reference}");
        prop_assert!((e - rotation_error_deg(&b, &a)).abs() < 1e-9);
        prop_assert!((0.0..=180.0).contains(&e));
    }

    #[test]
    fn rotation_angle_triangle_inequality(a in rotation(), b in rotation(), c in rotation()) {
        let ab = rotation_error_deg(&a, &b);
        let bc = rotation_error_deg(&b, &c);
        let ac = rotation_error_deg(&a, &c);
        prop_assert!(ac <= ab + bc + 1e-9);
    }

    #[test]
    fn direction_angle_ignores_scale(a in axis(), b in axis(), s in 0.01..100.0f64) {
        let e = translation_direction_error_deg(&a, &b);
        prop_assert!((e - translation_direction_error_deg(&(a * s), &b)).abs() < 1e-9);
        let reference = a.dot(&b).clamp(-1.0, 1.0).acos().to_degrees();
        prop_assert!((e - reference).abs() < 1e-5);
    }

    #[test]
    fn orthogonalize_gives_nearest_rotation(r in rotation(), n in proptest::array::uniform9(-0.05..0.05f64)) {
        let noisy = r.matrix() + Matrix3::from_row_slice(&n);
        let q = svd_orthogonalize(&noisy).unwrap();
        let m = q.matrix();
        prop_assert!((m.transpose() * m - Matrix3::identity()).norm() < 1e-12);
        prop_assert!((m.determinant() - 1.0).abs() < 1e-12);
        // A rotation input comes back unchanged.
        let exact = svd_orthogonalize(r.matrix()).unwrap();
        prop_assert!((exact.matrix() - r.matrix()).norm() < 1e-12);
        // Closer to the noisy matrix than the clean rotation it came from.
        prop_assert!((m - noisy).norm() <= (r.matrix() - noisy).norm() + 1e-12);
    }

    #[test]
    fn pose_inverse_and_compose(p in pose(), x in (-5.0..5.0f64, -5.0..5.0f64, -5.0..5.0f64)) {
        let x = Point3::new(x.0, x.1, x.2);
        let round = p.inverse().transform(&p.transform(&x));
        prop_assert!((round - x).norm() < 1e-12);
        let id = p.compose(&p.inverse());
        prop_assert!(pose_frobenius_distance(&id, &Pose::identity()) < 1e-12);
    }

    #[test]
    fn pnp_recovers_pose_from_exact_points(p in pose(), seed in any::<u64>(), planar in any::<bool>()) {
        let k = CameraIntrinsics::new(200.0, 200.0, 64.0, 48.0, 128, 96).unwrap();
        let mut state = seed | 1;
        let mut next = || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state >> 11) as f64 / (1u64 << 53) as f64
        };
        let mut pts = Vec::new();
        let mut pxs = Vec::new();
        for _ in 0..500 {
            if pts.len() == 8 {
                break;
            }
            let z = if planar { 4.0 } else { 3.0 + 2.0 * next() };
            let x = Point3::new((next() - 0.5) * 2.0, (next() - 0.5) * 2.0, z);
            let x2 = p.transform(&x);
            if x2.z > 0.5 {
                if let Ok(px) = project(&k, &x2) {
                    pts.push(x);
                    pxs.push(px);
                }
            }
        }
        prop_assume!(pts.len() == 8);
        let est = solve_pnp(&PnpSample { points3d: &pts, pixels2d: &pxs, intrinsics2: &k });
        // Exact data either solves to the true pose or is rejected as
        // degenerate; it never yields a different pose.
        if let Ok(est) = est {
            prop_assert!(rotation_error_deg(&est.rotation, &p.rotation) < 1e-5);
            prop_assert!((est.translation - p.translation).norm() < 1e-6);
        }
    }
}

#[test]
fn pnp_exact_on_a_fixed_nonplanar_cloud() {
    let k = CameraIntrinsics::new(150.0, 150.0, 64.0, 64.0, 128, 128).unwrap();
    let truth = Pose::new(
        RotationMatrix::from_axis_angle(&Vector3::new(0.3, -0.8, 0.2).normalize(), 0.4),
        Vector3::new(0.2, -0.1, 0.3),
    );
    let pts: Vec<Point3> = (0..10)
        .map(|i| {
            let a = i as f64 * 0.7;
            Point3::new(a.cos() * 0.8, a.sin() * 0.6, 3.0 + (i % 3) as f64 * 0.5)
        })
        .collect();
    let pxs: Vec<Pixel> = pts
        .iter()
        .map(|x| project(&k, &truth.transform(x)).unwrap())
        .collect();
    let est = solve_pnp(&PnpSample {
        points3d: &pts,
        pixels2d: &pxs,
        intrinsics2: &k,
    })
    .unwrap();
    assert!(rotation_error_deg(&est.rotation, &truth.rotation) < 1e-6);
    assert_relative_eq!(est.translation, truth.translation, epsilon = 1e-8);
}
