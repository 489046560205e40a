//! On-disk formats.
//!
//! Binary maps (`.dmap`, `.dfield`) are one JSON header line followed by
//! little-endian `f64` values. Poses and scenes are JSON; floats are written
//! in shortest round-trip form, so reading them back is bit-exact.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use gcr_core::correspondence::{DepthMap, DescriptorField};
use gcr_core::fusion::{FusionConfig, FusionParams, NamedTensor};
use gcr_core::metrics::ErrorMap;
use gcr_core::synth::{NoiseSpec, Scene};
use gcr_core::wransac::IterationTrace;
use gcr_core::{CameraIntrinsics, Pose, RotationMatrix};
use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult, Context};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoseFile {
    #[serde(rename = "R")]
    pub r: [[f64; 3]; 3],
    pub t: [f64; 3],
}

impl From<&Pose> for PoseFile {
    fn from(p: &Pose) -> Self {
        let m = p.rotation.matrix();
        Self {
            r: [0, 1, 2].map(|i| [m[(i, 0)], m[(i, 1)], m[(i, 2)]]),
            t: [p.translation.x, p.translation.y, p.translation.z],
        }
    }
}

impl TryFrom<PoseFile> for Pose {
    type Error = gcr_core::Error;

    fn try_from(p: PoseFile) -> gcr_core::Result<Pose> {
        let m = Matrix3::from_fn(|i, j| p.r[i][j]);
        Ok(Pose::new(RotationMatrix::try_new(m)?, Vector3::from(p.t)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntrinsicsFile {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl From<&CameraIntrinsics> for IntrinsicsFile {
    fn from(k: &CameraIntrinsics) -> Self {
        Self {
            fx: k.fx,
            fy: k.fy,
            cx: k.cx,
            cy: k.cy,
            width: k.width,
            height: k.height,
        }
    }
}

impl TryFrom<IntrinsicsFile> for CameraIntrinsics {
    type Error = gcr_core::Error;

    fn try_from(k: IntrinsicsFile) -> gcr_core::Result<Self> {
        CameraIntrinsics::new(k.fx, k.fy, k.cx, k.cy, k.width, k.height)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseFile {
    pub pixel_sigma: f64,
    pub depth_sigma: f64,
    pub outlier_fraction: f64,
    pub descriptor_sigma: f64,
}

impl Default for NoiseFile {
    fn default() -> Self {
        (&NoiseSpec::default()).into()
    }
}

impl From<&NoiseSpec> for NoiseFile {
    fn from(n: &NoiseSpec) -> Self {
        Self {
            pixel_sigma: n.pixel_sigma,
            depth_sigma: n.depth_sigma,
            outlier_fraction: n.outlier_fraction,
            descriptor_sigma: n.descriptor_sigma,
        }
    }
}

impl From<NoiseFile> for NoiseSpec {
    fn from(n: NoiseFile) -> Self {
        Self {
            pixel_sigma: n.pixel_sigma,
            depth_sigma: n.depth_sigma,
            outlier_fraction: n.outlier_fraction,
            descriptor_sigma: n.descriptor_sigma,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneFile {
    pub seed: u64,
    pub k1: IntrinsicsFile,
    pub k2: IntrinsicsFile,
    pub gt_pose: PoseFile,
    pub plane_normal: [f64; 3],
    pub plane_offset: f64,
    pub descriptor_seed: u64,
    pub descriptor_dim: usize,
    pub descriptor_frequency: f64,
    pub noise: NoiseFile,
}

impl From<&Scene> for SceneFile {
    fn from(s: &Scene) -> Self {
        Self {
            seed: s.seed,
            k1: (&s.k1).into(),
            k2: (&s.k2).into(),
            gt_pose: (&s.gt_pose).into(),
            plane_normal: [s.plane_normal.x, s.plane_normal.y, s.plane_normal.z],
            plane_offset: s.plane_offset,
            descriptor_seed: s.descriptor_seed,
            descriptor_dim: s.descriptor_dim,
            descriptor_frequency: s.descriptor_frequency,
            noise: (&s.noise).into(),
        }
    }
}

impl TryFrom<SceneFile> for Scene {
    type Error = gcr_core::Error;

    fn try_from(s: SceneFile) -> gcr_core::Result<Scene> {
        let n = Vector3::from(s.plane_normal);
        if (n.norm() - 1.0).abs() >= 1e-9 || !n.norm().is_finite() {
            return Err(gcr_core::Error::DimensionMismatch(
                "plane normal is not unit length".into(),
            ));
        }
        Ok(Scene {
            seed: s.seed,
            k1: s.k1.try_into()?,
            k2: s.k2.try_into()?,
            gt_pose: s.gt_pose.try_into()?,
            plane_normal: n,
            plane_offset: s.plane_offset,
            descriptor_seed: s.descriptor_seed,
            descriptor_dim: s.descriptor_dim,
            descriptor_frequency: s.descriptor_frequency,
            noise: s.noise.into(),
        })
    }
}

/// Writes pretty JSON followed by a newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut text =
        serde_json::to_string_pretty(value).map_err(|e| CliError::data(e.to_string()))?;
    text.push('\n');
    fs::write(path, text).at(path)
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> CliResult<T> {
    let text = fs::read_to_string(path).at(path)?;
    let de = &mut serde_json::Deserializer::from_str(&text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let field = e.path().to_string();
        CliError::data(format!(
            "{}: field `{}`: {}",
            path.display(),
            field,
            e.inner()
        ))
    })
}

pub fn write_pose(path: &Path, p: &Pose) -> CliResult<()> {
    write_json(path, &PoseFile::from(p))
}

/// A file that parses but describes an impossible value is bad data, not a
/// numerical failure.
fn malformed(path: &Path, e: gcr_core::Error) -> CliError {
    CliError::data(e.to_string()).at(path)
}

pub fn read_pose(path: &Path) -> CliResult<Pose> {
    read_json::<PoseFile>(path)?
        .try_into()
        .map_err(|e| malformed(path, e))
}

pub fn write_scene(path: &Path, s: &Scene) -> CliResult<()> {
    write_json(path, &SceneFile::from(s))
}

pub fn read_scene(path: &Path) -> CliResult<Scene> {
    read_json::<SceneFile>(path)?
        .try_into()
        .map_err(|e| malformed(path, e))
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MapHeader {
    width: u32,
    height: u32,
    dim: usize,
}

fn write_binary(path: &Path, header: &MapHeader, blocks: &[&[f64]]) -> CliResult<()> {
    let mut buf = serde_json::to_vec(header).map_err(|e| CliError::data(e.to_string()))?;
    buf.push(b'\n');
    for block in blocks {
        for v in *block {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(path, buf).at(path)
}

fn read_binary(path: &Path) -> CliResult<(MapHeader, Vec<f64>)> {
    let bytes = fs::read(path).at(path)?;
    let nl = bytes
        .iter()
        .position(|b| *b == b'\n')
        .ok_or_else(|| CliError::data("missing header line").at(path))?;
    let header: MapHeader = serde_json::from_slice(&bytes[..nl])
        .map_err(|e| CliError::data(format!("bad header: {e}")).at(path))?;
    let body = &bytes[nl + 1..];
    if body.len() % 8 != 0 {
        return Err(CliError::data("payload is not a whole number of f64 values").at(path));
    }
    let values = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    Ok((header, values))
}

/// Depth map; invalid pixels are stored as NaN.
pub fn write_dmap(path: &Path, d: &DepthMap) -> CliResult<()> {
    let values: Vec<f64> = (0..d.height())
        .flat_map(|y| (0..d.width()).map(move |x| (x, y)))
        .map(|(x, y)| d.get(x, y).unwrap_or(f64::NAN))
        .collect();
    write_binary(
        path,
        &MapHeader {
            width: d.width(),
            height: d.height(),
            dim: 1,
        },
        &[&values],
    )
}

pub fn read_dmap(path: &Path) -> CliResult<DepthMap> {
    let (h, values) = read_binary(path)?;
    if h.dim != 1 {
        return Err(CliError::data("depth map must have dim 1").at(path));
    }
    DepthMap::new(h.width, h.height, values).at(path)
}

/// Descriptor block (pixel-major) followed by the confidence block.
pub fn write_dfield(path: &Path, f: &DescriptorField) -> CliResult<()> {
    write_binary(
        path,
        &MapHeader {
            width: f.width(),
            height: f.height(),
            dim: f.dim(),
        },
        &[f.descriptors(), f.confidences()],
    )
}

pub fn read_dfield(path: &Path) -> CliResult<DescriptorField> {
    let (h, mut values) = read_binary(path)?;
    let n = h.width as usize * h.height as usize;
    if values.len() != n * (h.dim + 1) {
        return Err(CliError::data(format!(
            "expected {} values, found {}",
            n * (h.dim + 1),
            values.len()
        ))
        .at(path));
    }
    let conf = values.split_off(n * h.dim);
    DescriptorField::new(h.width, h.height, h.dim, values, conf).at(path)
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorEntry {
    name: String,
    rows: usize,
    cols: usize,
    file: String,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ParamsManifest {
    blocks: usize,
    model_dim: usize,
    heads: usize,
    input_dim: usize,
    tensors: Vec<TensorEntry>,
}

/// A directory with `params.json` and one `<name>.bin` per tensor
/// (row-major little-endian `f64`).
pub fn write_fusion_params(dir: &Path, p: &FusionParams) -> CliResult<()> {
    fs::create_dir_all(dir).at(dir)?;
    let mut tensors = Vec::new();
    for t in p.named_tensors() {
        let file = format!("{}.bin", t.name);
        let bytes: Vec<u8> = t.data.iter().flat_map(|v| v.to_le_bytes()).collect();
        let path = dir.join(&file);
        fs::write(&path, bytes).at(&path)?;
        tensors.push(TensorEntry {
            name: t.name,
            rows: t.rows,
            cols: t.cols,
            file,
        });
    }
    let c = p.config;
    let manifest = ParamsManifest {
        blocks: c.blocks,
        model_dim: c.model_dim,
        heads: c.heads,
        input_dim: c.input_dim,
        tensors,
    };
    write_json(&dir.join("params.json"), &manifest)
}

pub fn read_fusion_params(dir: &Path) -> CliResult<FusionParams> {
    let m: ParamsManifest = read_json(&dir.join("params.json"))?;
    let cfg = FusionConfig {
        blocks: m.blocks,
        model_dim: m.model_dim,
        heads: m.heads,
        input_dim: m.input_dim,
    };
    let mut tensors = Vec::new();
    for e in m.tensors {
        let path = dir.join(&e.file);
        let bytes = fs::read(&path).at(&path)?;
        if bytes.len() != e.rows * e.cols * 8 {
            return Err(CliError::data(format!("expected {}×{} values", e.rows, e.cols)).at(&path));
        }
        let data = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        tensors.push(NamedTensor {
            name: e.name,
            rows: e.rows,
            cols: e.cols,
            data,
        });
    }
    FusionParams::from_named_tensors(&cfg, &tensors).at(dir)
}

/// 16-bit binary PGM; errors in [0, 1] map to [0, 65535], invalid pixels
/// to 0.
pub fn write_pgm16(path: &Path, m: &ErrorMap) -> CliResult<()> {
    let mut buf = format!("P5\n{} {}\n65535\n", m.width, m.height).into_bytes();
    for (e, v) in m.errors.iter().zip(&m.valid) {
        let level = if *v {
            (e.clamp(0.0, 1.0) * 65535.0).round() as u16
        } else {
            0
        };
        buf.extend_from_slice(&level.to_be_bytes());
    }
    fs::write(path, buf).at(path)
}

pub fn write_trace(path: &Path, trace: &[IterationTrace]) -> CliResult<()> {
    let mut f = fs::File::create(path).at(path)?;
    for t in trace {
        writeln!(f, "{t}").at(path)?;
    }
    Ok(())
}

/// `scene_*.json` files in `dir`, sorted by name.
pub fn list_scenes(dir: &Path) -> CliResult<Vec<PathBuf>> {
    let entries = fs::read_dir(dir).at(dir)?;
    let mut out = Vec::new();
    for e in entries {
        let path = e.at(dir)?.path();
        let name = path
            .file_name()
            .and_then(|n| n.to_str())
            .unwrap_or_default();
        if name.starts_with("scene_") && name.ends_with(".json") && name.matches('.').count() == 1 {
            out.push(path);
        }
    }
    out.sort();
    if out.is_empty() {
        return Err(CliError::data(format!(
            "{}: no scene_*.json files",
            dir.display()
        )));
    }
    Ok(out)
}

/// Companion file of a scene JSON, e.g. `scene_0003.cam1.dmap`.
pub fn companion(scene_json: &Path, suffix: &str) -> PathBuf {
    let stem = scene_json
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or_default();
    scene_json.with_file_name(format!("{stem}.{suffix}"))
}
