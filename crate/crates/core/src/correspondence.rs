//! 3D-2D correspondences formed from ground-truth depth and a pose, and the
//! descriptor-pair embeddings that accompany them.
//!
//! Both products are indexed by the same stride grid. Correspondences drop
//! grid cells with invalid depth, so each entry remembers its `grid_index`
//! and embeddings are aligned to entries through it.

use alloc::format;
use alloc::vec::Vec;
#[allow(unused_imports)] // std builds resolve these to inherent methods
use num_traits::Float;

use nalgebra::DMatrix;

use crate::geometry::{unproject, CameraIntrinsics, Pixel, Point3, Pose, MIN_DEPTH};
use crate::{Error, Result};

/// The consistency term needs strictly more valid correspondences than this.
pub const MIN_VALID_CORRESPONDENCES: usize = 50;

/// Per-pixel depth in meters with a validity mask.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    width: u32,
    height: u32,
    values: Vec<f64>,
    valid: Vec<bool>,
}

impl DepthMap {
    /// Entries that are non-finite or non-positive are marked invalid.
    pub fn new(width: u32, height: u32, values: Vec<f64>) -> Result<Self> {
        let n = width as usize * height as usize;
        if values.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "depth map {}x{} needs {} values, got {}",
                width,
                height,
                n,
                values.len()
            )));
        }
        let valid = values.iter().map(|d| d.is_finite() && *d > 0.0).collect();
        Ok(Self {
            width,
            height,
            values,
            valid,
        })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn is_valid(&self, x: u32, y: u32) -> bool {
        self.valid[self.index(x, y)]
    }

    pub fn get(&self, x: u32, y: u32) -> Option<f64> {
        let i = self.index(x, y);
        self.valid[i].then(|| self.values[i])
    }

    /// Marks a pixel invalid; its stored value becomes NaN.
    pub fn invalidate(&mut self, x: u32, y: u32) {
        let i = self.index(x, y);
        self.valid[i] = false;
        self.values[i] = f64::NAN;
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }

    fn index(&self, x: u32, y: u32) -> usize {
        y as usize * self.width as usize + x as usize
    }
}

/// Per-pixel unit descriptors with a confidence map in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DescriptorField {
    width: u32,
    height: u32,
    dim: usize,
    descriptors: Vec<f64>,
    confidence: Vec<f64>,
}

/// Unit-norm tolerance for stored descriptors.
pub const DESCRIPTOR_NORM_TOLERANCE: f64 = 1e-6;

impl DescriptorField {
    /// `descriptors` is pixel-major: the `dim` values of pixel `(x, y)` start at
    /// `(y·W + x)·dim`.
    pub fn new(
        width: u32,
        height: u32,
        dim: usize,
        descriptors: Vec<f64>,
        confidence: Vec<f64>,
    ) -> Result<Self> {
        let n = width as usize * height as usize;
        if dim == 0 || descriptors.len() != n * dim || confidence.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "descriptor field {}x{}x{} got {} descriptor values and {} confidences",
                width,
                height,
                dim,
                descriptors.len(),
                confidence.len()
            )));
        }
        for (i, d) in descriptors.chunks_exact(dim).enumerate() {
            let norm = d.iter().map(|v| v * v).sum::<f64>().sqrt();
            if !((norm - 1.0).abs() <= DESCRIPTOR_NORM_TOLERANCE) {
                return Err(Error::DimensionMismatch(format!(
                    "descriptor {} has norm {}",
                    i, norm
                )));
            }
        }
        if let Some(i) = confidence.iter().position(|c| !(0.0..=1.0).contains(c)) {
            return Err(Error::DimensionMismatch(format!(
                "confidence {} outside [0, 1]",
                i
            )));
        }
        Ok(Self {
            width,
            height,
            dim,
            descriptors,
            confidence,
        })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn descriptors(&self) -> &[f64] {
        &self.descriptors
    }

    pub fn confidences(&self) -> &[f64] {
        &self.confidence
    }

    #[inline]
    pub fn descriptor(&self, x: u32, y: u32) -> &[f64] {
        let i = (y as usize * self.width as usize + x as usize) * self.dim;
        &self.descriptors[i..i + self.dim]
    }

    #[inline]
    pub fn confidence(&self, x: u32, y: u32) -> f64 {
        self.confidence[y as usize * self.width as usize + x as usize]
    }
}

/// One grid cell's 3D-2D pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correspondence {
    /// Position of the cell in [`sample_grid`] order.
    pub grid_index: usize,
    pub pixel_cam1: Pixel,
    pub p3d_cam1: Point3,
    pub pixel_cam2_projected: Pixel,
    pub valid: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrespondenceSet {
    pub entries: Vec<Correspondence>,
    pub stride: u32,
}

impl CorrespondenceSet {
    pub fn valid_count(&self) -> usize {
        self.entries.iter().filter(|e| e.valid).count()
    }

    pub fn valid_entries(&self) -> impl Iterator<Item = &Correspondence> + '_ {
        self.entries.iter().filter(|e| e.valid)
    }

    pub fn valid_points(&self) -> Vec<Point3> {
        self.valid_entries().map(|e| e.p3d_cam1).collect()
    }

    pub fn valid_projections(&self) -> Vec<Pixel> {
        self.valid_entries()
            .map(|e| e.pixel_cam2_projected)
            .collect()
    }

    pub fn valid_grid_indices(&self) -> Vec<usize> {
        self.valid_entries().map(|e| e.grid_index).collect()
    }
}

/// Rows are concatenated descriptor pairs `[d1; d2]`, one per grid cell.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    pub rows: DMatrix<f64>,
}

impl EmbeddingSet {
    pub fn len(&self) -> usize {
        self.rows.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.nrows() == 0
    }

    pub fn width(&self) -> usize {
        self.rows.ncols()
    }

    /// Rows at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> EmbeddingSet {
        EmbeddingSet {
            rows: self.rows.select_rows(indices.iter()),
        }
    }
}

/// Integer cell centers `(i·s + s/2, j·s + s/2)` of every stride cell fully
/// inside the image, row-major.
pub fn grid_cells(width: u32, height: u32, stride: u32) -> impl Iterator<Item = (u32, u32)> {
    let s = stride.max(1);
    let (nx, ny) = (width / s, height / s);
    (0..ny).flat_map(move |j| (0..nx).map(move |i| (i * s + s / 2, j * s + s / 2)))
}

pub fn sample_grid(width: u32, height: u32, stride: u32) -> Vec<Pixel> {
    grid_cells(width, height, stride)
        .map(|(x, y)| Pixel::new(x as f64, y as f64))
        .collect()
}

/// Unprojects every valid-depth grid pixel with `k1`, moves it by `pose` and
/// projects it with `k2`. An entry is valid iff the moved point is in front of
/// camera 2 and lands inside `[0, W) × [0, H)`.
pub fn form_correspondences(
    depth1: &DepthMap,
    k1: &CameraIntrinsics,
    k2: &CameraIntrinsics,
    pose: &Pose,
    stride: u32,
) -> Result<CorrespondenceSet> {
    if depth1.width() != k1.width || depth1.height() != k1.height {
        return Err(Error::DimensionMismatch(format!(
            "depth map {}x{} vs intrinsics {}x{}",
            depth1.width(),
            depth1.height(),
            k1.width,
            k1.height
        )));
    }
    let entries = grid_cells(depth1.width(), depth1.height(), stride)
        .enumerate()
        .filter_map(|(grid_index, (x, y))| {
            let d = depth1.get(x, y)?;
            let pixel_cam1 = Pixel::new(x as f64, y as f64);
            let p3d_cam1 = unproject(k1, &pixel_cam1, d).ok()?;
            let p2 = pose.transform(&p3d_cam1);
            let (pixel_cam2_projected, valid) = if p2.z > MIN_DEPTH {
                let px = k2.project_unchecked(&p2);
                (px, k2.contains(&px))
            } else {
                (Pixel::new(f64::NAN, f64::NAN), false)
            };
            Some(Correspondence {
                grid_index,
                pixel_cam1,
                p3d_cam1,
                pixel_cam2_projected,
                valid,
            })
        })
        .collect();
    Ok(CorrespondenceSet { entries, stride })
}

/// One row per grid cell: descriptor of `f1` then descriptor of `f2` at the
/// same pixel.
pub fn build_embeddings(
    f1: &DescriptorField,
    f2: &DescriptorField,
    stride: u32,
) -> Result<EmbeddingSet> {
    if f1.width() != f2.width() || f1.height() != f2.height() || f1.dim() != f2.dim() {
        return Err(Error::DimensionMismatch(format!(
            "fields {}x{}x{} and {}x{}x{}",
            f1.width(),
            f1.height(),
            f1.dim(),
            f2.width(),
            f2.height(),
            f2.dim()
        )));
    }
    let dim = f1.dim();
    let cells: Vec<(u32, u32)> = grid_cells(f1.width(), f1.height(), stride).collect();
    let rows = DMatrix::from_fn(cells.len(), 2 * dim, |r, c| {
        let (x, y) = cells[r];
        if c < dim {
            f1.descriptor(x, y)[c]
        } else {
            f2.descriptor(x, y)[c - dim]
        }
    });
    Ok(EmbeddingSet { rows })
}

/// Strictly more than [`MIN_VALID_CORRESPONDENCES`] valid entries.
pub fn gate_sufficient(cs: &CorrespondenceSet) -> bool {
    cs.valid_count() > MIN_VALID_CORRESPONDENCES
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::RotationMatrix;
    use alloc::vec;
    use nalgebra::Vector3;

    fn k(w: u32, h: u32) -> CameraIntrinsics {
        CameraIntrinsics::new(60.0, 60.0, w as f64 / 2.0, h as f64 / 2.0, w, h).unwrap()
    }

    #[test]
    fn grid_16x16_stride_8() {
        let g = sample_grid(16, 16, 8);
        assert_eq!(
            g,
            vec![
                Pixel::new(4.0, 4.0),
                Pixel::new(12.0, 4.0),
                Pixel::new(4.0, 12.0),
                Pixel::new(12.0, 12.0)
            ]
        );
    }

    #[test]
    fn grid_stride_one_and_oversized() {
        assert_eq!(sample_grid(7, 5, 1).len(), 35);
        assert_eq!(sample_grid(7, 5, 1)[8], Pixel::new(1.0, 1.0));
        assert!(sample_grid(7, 5, 8).is_empty());
        // only one dimension too small still leaves no full cell
        assert!(sample_grid(32, 5, 8).is_empty());
    }

    #[test]
    fn identity_pose_maps_pixels_to_themselves() {
        let kk = k(32, 24);
        let depth = DepthMap::new(
            32,
            24,
            (0..32 * 24).map(|i| 1.0 + (i % 7) as f64 * 0.3).collect(),
        )
        .unwrap();
        let cs = form_correspondences(&depth, &kk, &kk, &Pose::identity(), 4).unwrap();
        assert_eq!(cs.entries.len(), 48);
        for e in &cs.entries {
            assert!(e.valid);
            assert!((e.pixel_cam2_projected - e.pixel_cam1).norm() < 1e-6);
        }
    }

    #[test]
    fn camera_looking_away_invalidates_everything() {
        let kk = k(32, 32);
        let depth = DepthMap::new(32, 32, vec![2.0; 32 * 32]).unwrap();
        let flip = Pose::new(
            RotationMatrix::from_axis_angle(&Vector3::x(), core::f64::consts::PI),
            Vector3::zeros(),
        );
        let cs = form_correspondences(&depth, &kk, &kk, &flip, 8).unwrap();
        assert_eq!(cs.entries.len(), 16);
        assert_eq!(cs.valid_count(), 0);
    }

    #[test]
    fn invalid_depth_is_excluded() {
        let kk = k(16, 16);
        let mut depth = DepthMap::new(16, 16, vec![1.0; 256]).unwrap();
        depth.invalidate(4, 4);
        let cs = form_correspondences(&depth, &kk, &kk, &Pose::identity(), 8).unwrap();
        assert_eq!(cs.entries.len(), 3);
        assert_eq!(cs.valid_grid_indices(), vec![1, 2, 3]);
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let depth = DepthMap::new(16, 16, vec![1.0; 256]).unwrap();
        assert!(form_correspondences(&depth, &k(16, 8), &k(16, 8), &Pose::identity(), 8).is_err());
        assert!(DepthMap::new(4, 4, vec![1.0; 15]).is_err());
    }

    fn constant_field(w: u32, h: u32, dim: usize, seed: f64) -> DescriptorField {
        let mut data = Vec::new();
        for p in 0..(w * h) as usize {
            let raw: Vec<f64> = (0..dim)
                .map(|c| ((p * dim + c) as f64 * 0.37 + seed).sin() + 1.5)
                .collect();
            let n = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
            data.extend(raw.iter().map(|v| v / n));
        }
        DescriptorField::new(w, h, dim, data, vec![1.0; (w * h) as usize]).unwrap()
    }

    #[test]
    fn embeddings_shape_and_halves() {
        let f1 = constant_field(32, 16, 24, 0.0);
        let f2 = constant_field(32, 16, 24, 1.0);
        let e = build_embeddings(&f1, &f2, 8).unwrap();
        assert_eq!(e.width(), 48);
        assert_eq!(e.len(), sample_grid(32, 16, 8).len());
        let same = build_embeddings(&f1, &f1, 8).unwrap();
        for r in 0..same.len() {
            for c in 0..24 {
                assert_eq!(same.rows[(r, c)], same.rows[(r, c + 24)]);
            }
        }
        let other = constant_field(32, 16, 12, 0.0);
        assert!(build_embeddings(&f1, &other, 8).is_err());
    }

    #[test]
    fn field_validation() {
        assert!(DescriptorField::new(1, 1, 2, vec![1.0, 1.0], vec![1.0]).is_err());
        assert!(DescriptorField::new(1, 1, 2, vec![1.0, 0.0], vec![1.5]).is_err());
        assert!(DescriptorField::new(1, 1, 2, vec![0.0, 1.0], vec![0.5]).is_ok());
    }

    fn set_with_valid(n_valid: usize) -> CorrespondenceSet {
        let entries = (0..60)
            .map(|i| Correspondence {
                grid_index: i,
                pixel_cam1: Pixel::zeros(),
                p3d_cam1: Point3::z(),
                pixel_cam2_projected: Pixel::zeros(),
                valid: i < n_valid,
            })
            .collect();
        CorrespondenceSet { entries, stride: 8 }
    }

    #[test]
    fn gate_is_strict() {
        assert!(gate_sufficient(&set_with_valid(51)));
        assert!(!gate_sufficient(&set_with_valid(50)));
        assert!(!gate_sufficient(&set_with_valid(0)));
    }
}
