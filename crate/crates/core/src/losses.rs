//! Pose, consistency and descriptor losses and their weighted total.

use alloc::vec::Vec;
#[allow(unused_imports)] // std builds resolve these to inherent methods
use num_traits::Float;

use crate::correspondence::{CorrespondenceSet, DescriptorField};
use crate::geometry::{
    project, rotation_error_deg, translation_direction_error_deg, CameraIntrinsics, Pixel, Pose,
};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub lambda_pose: f64,
    pub lambda_consistency: f64,
    pub lambda_desc: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_pose: 0.8,
            lambda_consistency: 0.1,
            lambda_desc: 0.1,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda_pose", self.lambda_pose),
            ("lambda_consistency", self.lambda_consistency),
            ("lambda_desc", self.lambda_desc),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::config(name, "must be finite and non-negative"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossReport {
    pub pose_loss: f64,
    pub consistency_loss: f64,
    pub descriptor_loss: f64,
    pub total: f64,
    pub consistency_applied: bool,
}

impl LossReport {
    pub const CSV_HEADER: &'static str = "pose,consistency,descriptor,total,gated";

    /// One CSV row matching [`Self::CSV_HEADER`]. `gated` is 1 when the
    /// consistency term was applied.
    pub fn csv_row(&self) -> alloc::string::String {
        alloc::format!(
            "{:?},{:?},{:?},{:?},{}",
            self.pose_loss,
            self.consistency_loss,
            self.descriptor_loss,
            self.total,
            u8::from(self.consistency_applied)
        )
    }
}

/// Rotation angle plus translation-direction angle between the regressed and
/// solver poses, in degrees. `p_solver` is a fixed target.
pub fn consistency_loss(p_reg: &Pose, p_solver: &Pose) -> f64 {
    rotation_error_deg(&p_reg.rotation, &p_solver.rotation)
        + translation_direction_error_deg(&p_reg.translation, &p_solver.translation)
}

/// Consistency angles plus the absolute difference of translation norms.
pub fn pose_loss(p_reg: &Pose, p_gt: &Pose) -> f64 {
    consistency_loss(p_reg, p_gt) + (p_reg.translation.norm() - p_gt.translation.norm()).abs()
}

pub fn total_loss(
    pose: f64,
    consistency: f64,
    descriptor: f64,
    lw: &LossWeights,
    gated: bool,
) -> LossReport {
    let consistency_term = if gated {
        lw.lambda_consistency * consistency
    } else {
        0.0
    };
    LossReport {
        pose_loss: pose,
        consistency_loss: if gated { consistency } else { 0.0 },
        descriptor_loss: descriptor,
        total: lw.lambda_pose * pose + consistency_term + lw.lambda_desc * descriptor,
        consistency_applied: gated,
    }
}

/// Bilinearly interpolated descriptor (renormalized) and confidence at a
/// continuous pixel inside `[0, W−1] × [0, H−1]`.
pub fn bilinear_sample(f: &DescriptorField, px: &Pixel) -> Result<(Vec<f64>, f64)> {
    let (w, h) = ((f.width() - 1) as f64, (f.height() - 1) as f64);
    if !(px.x >= 0.0 && px.x <= w && px.y >= 0.0 && px.y <= h) {
        return Err(Error::OutsideField);
    }
    let x0 = (px.x.floor() as u32).min(f.width().saturating_sub(2));
    let y0 = (px.y.floor() as u32).min(f.height().saturating_sub(2));
    let x1 = (x0 + 1).min(f.width() - 1);
    let y1 = (y0 + 1).min(f.height() - 1);
    let ax = px.x - x0 as f64;
    let ay = px.y - y0 as f64;
    let corners = [
        (x0, y0, (1.0 - ax) * (1.0 - ay)),
        (x1, y0, ax * (1.0 - ay)),
        (x0, y1, (1.0 - ax) * ay),
        (x1, y1, ax * ay),
    ];
    let mut out = alloc::vec![0.0; f.dim()];
    let mut conf = 0.0;
    for (x, y, wt) in corners {
        if wt == 0.0 {
            continue;
        }
        for (o, d) in out.iter_mut().zip(f.descriptor(x, y)) {
            *o += wt * d;
        }
        conf += wt * f.confidence(x, y);
    }
    let n = out.iter().map(|v| v * v).sum::<f64>().sqrt();
    if n > 0.0 {
        out.iter_mut().for_each(|v| *v /= n);
    }
    Ok((out, conf))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Sums with a fixed binary tree so the result does not depend on how the
/// terms were produced.
pub fn pairwise_sum(v: &[f64]) -> f64 {
    match v.len() {
        0 => 0.0,
        1 => v[0],
        n => pairwise_sum(&v[..n / 2]) + pairwise_sum(&v[n / 2..]),
    }
}

/// Confidence-weighted negative cosine similarity between view-1
/// descriptors at the grid pixels and view-2 descriptors sampled where
/// `p_reg` projects the 3D points. Projections outside view 2 are dropped.
pub fn descriptor_loss(
    f1: &DescriptorField,
    f2: &DescriptorField,
    cs: &CorrespondenceSet,
    p_reg: &Pose,
    k2: &CameraIntrinsics,
) -> Result<f64> {
    if f1.dim() != f2.dim() {
        return Err(Error::DimensionMismatch(alloc::format!(
            "descriptor dims {} vs {}",
            f1.dim(),
            f2.dim()
        )));
    }
    let mut weights = Vec::new();
    let mut sims = Vec::new();
    for c in cs.valid_entries() {
        let (x, y) = (c.pixel_cam1.x as u32, c.pixel_cam1.y as u32);
        if x >= f1.width() || y >= f1.height() {
            return Err(Error::DimensionMismatch(
                "correspondence outside view-1 field".into(),
            ));
        }
        let Ok(px) = project(k2, &p_reg.transform(&c.p3d_cam1)) else {
            continue;
        };
        let Ok((d_proj, c2)) = bilinear_sample(f2, &px) else {
            continue;
        };
        weights.push(f1.confidence(x, y) * c2);
        sims.push(dot(f1.descriptor(x, y), &d_proj));
    }
    let total_w = pairwise_sum(&weights);
    if sims.is_empty() {
        return Err(Error::NoDescriptorSupport);
    }
    let terms: Vec<f64> = if total_w > 0.0 {
        weights
            .iter()
            .zip(&sims)
            .map(|(w, s)| w / total_w * s)
            .collect()
    } else {
        // Every contributing confidence is zero: fall back to uniform weights.
        let n = sims.len() as f64;
        sims.iter().map(|s| s / n).collect()
    };
    Ok(-pairwise_sum(&terms))
}
