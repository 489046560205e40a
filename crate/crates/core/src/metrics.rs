//! Pose AUC and descriptor cosine-similarity error maps.

use alloc::vec::Vec;
#[allow(unused_imports)] // std builds resolve these to inherent methods
use num_traits::Float;

use crate::correspondence::{DepthMap, DescriptorField};
use crate::geometry::{
    project, rotation_error_deg, translation_direction_error_deg, unproject, CameraIntrinsics,
    Pixel, Pose,
};
use crate::losses::{bilinear_sample, pairwise_sum};
use crate::{Error, Result};

pub const AUC_THRESHOLDS: [f64; 3] = [5.0, 10.0, 20.0];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseErrorSample {
    pub rotation_deg: f64,
    pub translation_deg: f64,
}

impl PoseErrorSample {
    pub fn between(estimate: &Pose, truth: &Pose) -> Self {
        Self {
            rotation_deg: rotation_error_deg(&estimate.rotation, &truth.rotation),
            translation_deg: translation_direction_error_deg(
                &estimate.translation,
                &truth.translation,
            ),
        }
    }

    pub fn combined(&self) -> f64 {
        self.rotation_deg.max(self.translation_deg)
    }
}

/// Area under the accuracy curve up to `threshold` degrees, as a
/// percentage. Each error contributes `(θ − min(e, θ)) / θ`.
pub fn auc_at(errors: &[f64], threshold: f64) -> Result<f64> {
    if errors.is_empty() {
        return Err(Error::EmptyErrors);
    }
    if !(threshold > 0.0 && threshold.is_finite()) {
        return Err(Error::config("threshold", "must be positive and finite"));
    }
    if errors.iter().any(|e| !(*e >= 0.0)) {
        return Err(Error::config("errors", "must be non-negative"));
    }
    let terms: Vec<f64> = errors
        .iter()
        .map(|e| (threshold - e.min(threshold)) / threshold)
        .collect();
    Ok(100.0 * pairwise_sum(&terms) / errors.len() as f64)
}

/// `(threshold, auc)` for 5°, 10° and 20°.
pub fn auc_report(errors: &[f64]) -> Result<Vec<(f64, f64)>> {
    AUC_THRESHOLDS
        .iter()
        .map(|t| Ok((*t, auc_at(errors, *t)?)))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ErrorMap {
    pub width: u32,
    pub height: u32,
    /// Row-major; `NaN` where invalid.
    pub errors: Vec<f64>,
    pub valid: Vec<bool>,
    pub mean: f64,
    pub valid_count: usize,
}

impl ErrorMap {
    pub fn get(&self, x: u32, y: u32) -> Option<f64> {
        let i = (y * self.width + x) as usize;
        self.valid[i].then(|| self.errors[i])
    }

    pub fn valid_errors(&self) -> impl Iterator<Item = f64> + '_ {
        self.errors
            .iter()
            .zip(&self.valid)
            .filter(|(_, v)| **v)
            .map(|(e, _)| *e)
    }
}

/// Per valid view-1 pixel: `(1 − cos(d1, d2_proj)) / 2`, where `d2_proj` is
/// view 2 sampled where the pixel's back-projected point lands under `p`.
pub fn descriptor_error_map(
    f1: &DescriptorField,
    f2: &DescriptorField,
    depth1: &DepthMap,
    k1: &CameraIntrinsics,
    k2: &CameraIntrinsics,
    p: &Pose,
) -> Result<ErrorMap> {
    if f1.dim() != f2.dim() {
        return Err(Error::DimensionMismatch(alloc::format!(
            "descriptor dims {} vs {}",
            f1.dim(),
            f2.dim()
        )));
    }
    if (f1.width(), f1.height()) != (depth1.width(), depth1.height())
        || (k1.width, k1.height) != (depth1.width(), depth1.height())
        || (k2.width, k2.height) != (f2.width(), f2.height())
    {
        return Err(Error::DimensionMismatch(
            "field, depth and intrinsics sizes differ".into(),
        ));
    }
    let (w, h) = (f1.width(), f1.height());
    let mut errors = alloc::vec![f64::NAN; (w * h) as usize];
    let mut valid = alloc::vec![false; (w * h) as usize];
    for y in 0..h {
        for x in 0..w {
            let Some(d) = depth1.get(x, y) else { continue };
            let Ok(x1) = unproject(k1, &Pixel::new(x as f64, y as f64), d) else {
                continue;
            };
            let Ok(px2) = project(k2, &p.transform(&x1)) else {
                continue;
            };
            let Ok((d2, _)) = bilinear_sample(f2, &px2) else {
                continue;
            };
            let cos: f64 = f1
                .descriptor(x, y)
                .iter()
                .zip(&d2)
                .map(|(a, b)| a * b)
                .sum();
            let i = (y * w + x) as usize;
            errors[i] = ((1.0 - cos) / 2.0).clamp(0.0, 1.0);
            valid[i] = true;
        }
    }
    let vals: Vec<f64> = errors
        .iter()
        .zip(&valid)
        .filter(|(_, v)| **v)
        .map(|(e, _)| *e)
        .collect();
    if vals.is_empty() {
        return Err(Error::NoValidPixels);
    }
    let mean = pairwise_sum(&vals) / vals.len() as f64;
    Ok(ErrorMap {
        width: w,
        height: h,
        errors,
        valid,
        mean,
        valid_count: vals.len(),
    })
}

/// Counts of `values` in `bins` equal-width bins over `[0, 1]`; values at 1
/// fall in the last bin.
pub fn histogram(values: impl IntoIterator<Item = f64>, bins: usize) -> Vec<u64> {
    let mut out = alloc::vec![0u64; bins];
    if bins == 0 {
        return out;
    }
    for v in values {
        if (0.0..=1.0).contains(&v) {
            out[((v * bins as f64) as usize).min(bins - 1)] += 1;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn auc_examples() {
        assert_eq!(auc_at(&[0.0, 0.0], 5.0).unwrap(), 100.0);
        assert_eq!(auc_at(&[5.0, 7.0, 1e9], 5.0).unwrap(), 0.0);
        assert_eq!(auc_at(&[0.0, 5.0], 5.0).unwrap(), 50.0);
        assert_eq!(auc_at(&[], 5.0), Err(Error::EmptyErrors));
        assert!(auc_at(&[1.0], 0.0).is_err());
        assert!(auc_at(&[-1.0], 5.0).is_err());
        let r = auc_report(&[1.0]).unwrap();
        assert_eq!(
            r.iter().map(|(t, _)| *t).collect::<Vec<_>>(),
            AUC_THRESHOLDS
        );
    }

    #[test]
    fn combined_is_max() {
        let s = PoseErrorSample {
            rotation_deg: 2.0,
            translation_deg: 3.5,
        };
        assert_eq!(s.combined(), 3.5);
    }

    #[test]
    fn identity_fields_have_zero_error() {
        let k = CameraIntrinsics::new(50.0, 50.0, 4.0, 4.0, 8, 8).unwrap();
        let mut d = Vec::new();
        for i in 0..64 {
            let a = i as f64 * 0.1;
            d.extend_from_slice(&[a.cos(), a.sin()]);
        }
        let f = DescriptorField::new(8, 8, 2, d, alloc::vec![1.0; 64]).unwrap();
        let depth = DepthMap::new(8, 8, alloc::vec![2.0; 64]).unwrap();
        let m = descriptor_error_map(&f, &f, &depth, &k, &k, &Pose::identity()).unwrap();
        assert_eq!(m.valid_count, 64);
        assert!(m.valid_errors().all(|e| e < 1e-12));
        let empty = DepthMap::new(8, 8, alloc::vec![f64::NAN; 64]).unwrap();
        assert_eq!(
            descriptor_error_map(&f, &f, &empty, &k, &k, &Pose::identity()),
            Err(Error::NoValidPixels)
        );
    }

    #[test]
    fn histogram_bins() {
        assert_eq!(histogram([0.0, 0.49, 0.5, 1.0], 2), alloc::vec![2, 2]);
    }
}
