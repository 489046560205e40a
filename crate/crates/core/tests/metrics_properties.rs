use gcr_core::geometry::RotationMatrix;
use gcr_core::metrics::{auc_at, descriptor_error_map, histogram};
use gcr_core::synth::{make_scene, render_depth, render_descriptors, SceneConfig, View};
use gcr_core::Pose;
use nalgebra::Vector3;
use proptest::prelude::*;

/// Area under the empirical recall curve by the trapezoid rule over the
/// sorted errors, normalized to a percentage.
fn trapezoid_auc(errors: &[f64], threshold: f64) -> f64 {
    let mut e: Vec<f64> = errors.to_vec();
    e.sort_by(f64::total_cmp);
    let n = e.len() as f64;
    // Recall curve: 0 up to e[0], then steps of 1/n at each error.
    let mut xs = vec![0.0];
    let mut ys = vec![0.0];
    for (i, v) in e.iter().enumerate() {
        if *v >= threshold {
            break;
        }
        xs.push(*v);
        ys.push(i as f64 / n);
        xs.push(*v);
        ys.push((i + 1) as f64 / n);
    }
    xs.push(threshold);
    ys.push(*ys.last().unwrap());
    let mut area = 0.0;
    for i in 1..xs.len() {
        area += (xs[i] - xs[i - 1]) * (ys[i] + ys[i - 1]) / 2.0;
    }
    100.0 * area / threshold
}

proptest! {
    #[test]
    fn auc_matches_trapezoid_reference(errors in proptest::collection::vec(0.0..40.0f64, 1..60), t in 0.5..30.0f64) {
        let a = auc_at(&errors, t).unwrap();
        prop_assert!((a - trapezoid_auc(&errors, t)).abs() < 1e-9);
        prop_assert!((0.0..=100.0).contains(&a));
    }

    #[test]
    fn auc_is_monotone_and_scale_equivariant(
        errors in proptest::collection::vec(0.0..40.0f64, 1..60),
        idx in any::<prop::sample::Index>(),
        bump in 0.0..10.0f64,
        t in 0.5..30.0f64,
    ) {
        let a = auc_at(&errors, t).unwrap();
        let mut worse = errors.clone();
        worse[idx.index(errors.len())] += bump;
        prop_assert!(auc_at(&worse, t).unwrap() <= a + 1e-12);
        let doubled: Vec<f64> = errors.iter().map(|e| 2.0 * e).collect();
        prop_assert!((auc_at(&doubled, 2.0 * t).unwrap() - a).abs() < 1e-9);
    }

    #[test]
    fn histogram_conserves_counts(values in proptest::collection::vec(0.0..=1.0f64, 0..200), bins in 1usize..64) {
        let h = histogram(values.iter().copied(), bins);
        prop_assert_eq!(h.len(), bins);
        prop_assert_eq!(h.iter().sum::<u64>() as usize, values.len());
    }
}

#[test]
fn auc_boundaries_are_exact() {
    assert_eq!(auc_at(&[0.0; 10], 5.0).unwrap(), 100.0);
    assert_eq!(auc_at(&[5.0, 9.0, 100.0], 5.0).unwrap(), 0.0);
    assert_eq!(auc_at(&[0.0, 5.0], 5.0).unwrap(), 50.0);
}

fn perturbed(p: &Pose, deg: f64) -> Pose {
    let r = RotationMatrix::from_axis_angle(
        &Vector3::new(0.3, 1.0, -0.2).normalize(),
        deg.to_radians(),
    );
    Pose::new(r * p.rotation, p.translation)
}

#[test]
fn error_map_grows_with_pose_error() {
    let cfg = SceneConfig {
        max_image_size: 96,
        ..SceneConfig::default()
    };
    let mut means = [Vec::new(), Vec::new(), Vec::new(), Vec::new()];
    for seed in 0..12 {
        let s = make_scene(seed, &cfg).unwrap();
        let depth = render_depth(&s, View::First);
        let f1 = render_descriptors(&s, View::First);
        let f2 = render_descriptors(&s, View::Second);
        for (slot, deg) in [0.0, 2.0, 5.0, 10.0].iter().enumerate() {
            let m =
                descriptor_error_map(&f1, &f2, &depth, &s.k1, &s.k2, &perturbed(&s.gt_pose, *deg))
                    .unwrap();
            let direct: f64 = m.valid_errors().sum::<f64>() / m.valid_count as f64;
            assert!((m.mean - direct).abs() < 1e-12);
            assert!(m.valid_errors().all(|e| (0.0..=1.0).contains(&e)));
            means[slot].push(m.mean);
        }
        assert!(means[0].last().unwrap() < &5e-3);
        assert!(means[2].last().unwrap() > means[0].last().unwrap());
    }
    let med = |v: &mut Vec<f64>| {
        v.sort_by(f64::total_cmp);
        (v[v.len() / 2 - 1] + v[v.len() / 2]) / 2.0
    };
    let m: Vec<f64> = means.iter_mut().map(med).collect();
    assert!(m.windows(2).all(|w| w[0] <= w[1]), "{m:?}");
}
