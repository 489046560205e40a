//! Command implementations. Each command writes into one output directory
//! and finishes by writing `manifest.json`, from which [`replay`] can
//! re-run it.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use gcr_core::correspondence::{build_embeddings, form_correspondences};
use gcr_core::fusion::{fusion_forward, init_params, FusionConfig};
use gcr_core::geometry::RotationMatrix;
use gcr_core::metrics::{auc_report, descriptor_error_map, histogram, PoseErrorSample};
use gcr_core::rng::{derive_seed, substream, Domain};
use gcr_core::synth::{
    corrupt_correspondences, make_scene, render_depth, render_descriptors, Scene, View,
};
use gcr_core::toytrain::{
    evaluate, prepare_rendered, train, AblationMode, StepRecord, TrainingScene,
};
use gcr_core::wransac::run_weighted_ransac;
use gcr_core::Pose;
use nalgebra::Vector3;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{AnalyzeSettings, RansacSettings, SynthConfig, TrainSettings};
use crate::error::{CliError, CliResult, Context};
use crate::formats::{
    companion, list_scenes, read_dfield, read_dmap, read_fusion_params, read_json, read_pose,
    read_scene, write_dfield, write_dmap, write_json, write_pgm16, write_pose, write_scene,
    write_trace,
};

pub const MANIFEST: &str = "manifest.json";

/// A fully resolved command: everything needed to reproduce its outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "lowercase")]
pub enum Invocation {
    Synth {
        count: usize,
        seed: u64,
        config: SynthConfig,
    },
    Ransac {
        scenes: PathBuf,
        weights: String,
        prior: String,
        seed: u64,
        config: RansacSettings,
    },
    Train {
        scenes: PathBuf,
        heldout: Option<PathBuf>,
        mode: String,
        seed: u64,
        config: TrainSettings,
    },
    Analyze {
        scenes: PathBuf,
        pose: String,
        seed: u64,
        config: AnalyzeSettings,
    },
}

impl Invocation {
    pub fn name(&self) -> &'static str {
        match self {
            Invocation::Synth { .. } => "synth",
            Invocation::Ransac { .. } => "ransac",
            Invocation::Train { .. } => "train",
            Invocation::Analyze { .. } => "analyze",
        }
    }

    pub fn seed(&self) -> u64 {
        match self {
            Invocation::Synth { seed, .. }
            | Invocation::Ransac { seed, .. }
            | Invocation::Train { seed, .. }
            | Invocation::Analyze { seed, .. } => *seed,
        }
    }

    fn inputs(&self) -> Vec<PathBuf> {
        match self {
            Invocation::Synth { .. } => vec![],
            Invocation::Ransac {
                scenes, weights, ..
            } => {
                let mut v = vec![scenes.clone()];
                if let Some(p) = weights.strip_prefix("fusion:") {
                    v.push(PathBuf::from(p));
                }
                v
            }
            Invocation::Train {
                scenes, heldout, ..
            } => std::iter::once(scenes.clone())
                .chain(heldout.clone())
                .collect(),
            Invocation::Analyze { scenes, pose, .. } => {
                let mut v = vec![scenes.clone()];
                if let Some(p) = pose.strip_prefix("file:") {
                    v.push(PathBuf::from(p));
                }
                v
            }
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    #[serde(flatten)]
    pub invocation: Invocation,
    pub inputs: Vec<PathBuf>,
    pub out: PathBuf,
    /// Files written, relative to `out`, in creation order.
    pub outputs: Vec<String>,
    pub version: String,
    pub duration_secs: f64,
}

/// Runs `inv` into `out` with `jobs` worker threads and writes the
/// manifest. Outputs do not depend on `jobs`.
pub fn execute(inv: &Invocation, out: &Path, jobs: usize) -> CliResult<RunManifest> {
    let start = Instant::now();
    fs::create_dir_all(out).at(out)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| CliError::usage(format!("cannot start {jobs} worker threads: {e}")))?;
    let outputs = pool.install(|| match inv {
        Invocation::Synth {
            count,
            seed,
            config,
        } => synth(*count, *seed, config, out),
        Invocation::Ransac {
            scenes,
            weights,
            prior,
            seed,
            config,
        } => ransac(scenes, weights, prior, *seed, config, out),
        Invocation::Train {
            scenes,
            heldout,
            mode,
            seed,
            config,
        } => train_cmd(scenes, heldout.as_deref(), mode, *seed, config, out),
        Invocation::Analyze {
            scenes,
            pose,
            seed,
            config,
        } => analyze(scenes, pose, *seed, config, out),
    })?;
    let manifest = RunManifest {
        invocation: inv.clone(),
        inputs: inv.inputs(),
        out: out.to_path_buf(),
        outputs,
        version: env!("CARGO_PKG_VERSION").to_string(),
        duration_secs: start.elapsed().as_secs_f64(),
    };
    write_json(&out.join(MANIFEST), &manifest)?;
    Ok(manifest)
}

/// Re-runs the command recorded in `manifest`, into `out` or the original
/// output directory.
pub fn replay(manifest: &Path, out: Option<&Path>, jobs: usize) -> CliResult<RunManifest> {
    let m: RunManifest = read_json(manifest)?;
    let out = out.map(Path::to_path_buf).unwrap_or(m.out);
    execute(&m.invocation, &out, jobs)
}

fn scene_name(i: usize) -> String {
    format!("scene_{i:04}")
}

fn synth(count: usize, seed: u64, config: &SynthConfig, out: &Path) -> CliResult<Vec<String>> {
    if count == 0 {
        return Err(CliError::usage("count must be at least 1"));
    }
    let cfg = config.to_core()?;
    let files: Vec<Vec<String>> = (0..count)
        .into_par_iter()
        .map(|i| {
            let scene = make_scene(derive_seed(seed, Domain::Scene, i as u64), &cfg)?;
            let name = scene_name(i);
            let json = format!("{name}.json");
            write_scene(&out.join(&json), &scene)?;
            let mut written = vec![json];
            for (view, tag) in [(View::First, "cam1"), (View::Second, "cam2")] {
                let dmap = format!("{name}.{tag}.dmap");
                write_dmap(&out.join(&dmap), &render_depth(&scene, view))?;
                let dfield = format!("{name}.{tag}.dfield");
                write_dfield(&out.join(&dfield), &render_descriptors(&scene, view))?;
                written.extend([dmap, dfield]);
            }
            Ok(written)
        })
        .collect::<CliResult<_>>()?;
    Ok(files.into_iter().flatten().collect())
}

enum WeightMode {
    Uniform,
    Oracle,
    Fusion(PathBuf),
}

fn parse_weights(s: &str) -> CliResult<WeightMode> {
    match s {
        "uniform" => Ok(WeightMode::Uniform),
        "oracle" => Ok(WeightMode::Oracle),
        _ => match s.strip_prefix("fusion:") {
            Some(p) if !p.is_empty() => Ok(WeightMode::Fusion(PathBuf::from(p))),
            _ => Err(CliError::usage(format!(
                "weights must be uniform, oracle or fusion:<path>, got `{s}`"
            ))),
        },
    }
}

/// `gt`, `perturbed:<deg>` or, when `allow_file`, `file:<dir>`.
enum PoseSource {
    Gt,
    Perturbed(f64),
    File(PathBuf),
}

fn parse_pose_source(s: &str, what: &str, allow_file: bool) -> CliResult<PoseSource> {
    if s == "gt" {
        return Ok(PoseSource::Gt);
    }
    if let Some(d) = s.strip_prefix("perturbed:") {
        return match d.parse::<f64>() {
            Ok(deg) if deg >= 0.0 && deg.is_finite() => Ok(PoseSource::Perturbed(deg)),
            _ => Err(CliError::usage(format!(
                "{what}: `{d}` is not a non-negative angle in degrees"
            ))),
        };
    }
    if allow_file {
        if let Some(p) = s.strip_prefix("file:").filter(|p| !p.is_empty()) {
            return Ok(PoseSource::File(PathBuf::from(p)));
        }
        return Err(CliError::usage(format!(
            "{what} must be gt, file:<dir> or perturbed:<deg>, got `{s}`"
        )));
    }
    Err(CliError::usage(format!(
        "{what} must be gt or perturbed:<deg>, got `{s}`"
    )))
}

/// Rotates `p` by `deg` degrees about an axis drawn from the scene's
/// perturbation substream.
fn perturb(p: &Pose, deg: f64, seed: u64, index: usize) -> Pose {
    let mut rng = substream(seed, Domain::Perturbation, index as u64);
    let axis = loop {
        let v = Vector3::new(
            rng.random::<f64>() - 0.5,
            rng.random::<f64>() - 0.5,
            rng.random::<f64>() - 0.5,
        );
        if v.norm() > 1e-3 {
            break v.normalize();
        }
    };
    let r = RotationMatrix::from_axis_angle(&axis, deg.to_radians());
    Pose::new(r * p.rotation, p.translation)
}

fn resolve_pose(
    src: &PoseSource,
    scene: &Scene,
    scene_path: &Path,
    seed: u64,
    index: usize,
) -> CliResult<Pose> {
    match src {
        PoseSource::Gt => Ok(scene.gt_pose),
        PoseSource::Perturbed(deg) => Ok(perturb(&scene.gt_pose, *deg, seed, index)),
        PoseSource::File(dir) => {
            let stem = scene_path
                .file_stem()
                .and_then(|s| s.to_str())
                .unwrap_or_default();
            read_pose(&dir.join(format!("{stem}.pose.json")))
        }
    }
}

fn median(v: &[f64]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        (s[n / 2 - 1] + s[n / 2]) / 2.0
    }
}

struct RansacRow {
    name: String,
    status: String,
    rotation_deg: f64,
    translation_deg: f64,
    score: f64,
    inliers: usize,
    outliers: usize,
}

fn ransac(
    scenes: &Path,
    weights: &str,
    prior: &str,
    seed: u64,
    config: &RansacSettings,
    out: &Path,
) -> CliResult<Vec<String>> {
    let mode = parse_weights(weights)?;
    let prior = parse_pose_source(prior, "prior", false)?;
    config.to_core(0)?;
    let fusion = match &mode {
        WeightMode::Fusion(p) => Some(read_fusion_params(p)?),
        _ => None,
    };
    let paths = list_scenes(scenes)?;
    fs::create_dir_all(out.join("traces")).at(out)?;
    let rows: Vec<(RansacRow, String)> = paths
        .par_iter()
        .enumerate()
        .map(|(i, path)| {
            let scene = read_scene(path)?;
            let depth1 = read_dmap(&companion(path, "cam1.dmap"))?;
            let cs =
                form_correspondences(&depth1, &scene.k1, &scene.k2, &scene.gt_pose, config.stride)
                    .at(path)?;
            let mut rng = substream(seed, Domain::Corruption, i as u64);
            let noise = scene.noise;
            let corrupted = corrupt_correspondences(
                &cs,
                &cs.valid_projections(),
                &scene.k2,
                noise.outlier_fraction,
                noise.pixel_sigma,
                &mut rng,
            )
            .at(path)?;
            let w: Vec<f64> = match &mode {
                WeightMode::Uniform => vec![1.0; corrupted.observed.len()],
                WeightMode::Oracle => corrupted
                    .inlier_mask
                    .iter()
                    .map(|m| f64::from(u8::from(*m)))
                    .collect(),
                WeightMode::Fusion(_) => {
                    let f1 = read_dfield(&companion(path, "cam1.dfield"))?;
                    let f2 = read_dfield(&companion(path, "cam2.dfield"))?;
                    let all = fusion_forward(
                        fusion.as_ref().expect("loaded"),
                        &build_embeddings(&f1, &f2, config.stride).at(path)?,
                    )
                    .at(path)?;
                    cs.valid_grid_indices().iter().map(|g| all[*g]).collect()
                }
            };
            let prior_pose = resolve_pose(&prior, &scene, path, seed, i)?;
            let rc = config.to_core(derive_seed(seed, Domain::RansacIteration, i as u64))?;
            let name = path
                .file_stem()
                .and_then(|s| s.to_str())
                .unwrap_or_default()
                .to_string();
            let trace_file = format!("traces/{name}.jsonl");
            let outliers = corrupted.outlier_count();
            let row = match run_weighted_ransac(
                &cs,
                &corrupted.observed,
                &w,
                &prior_pose,
                &scene.k2,
                &rc,
            ) {
                Ok(r) => {
                    write_trace(&out.join(&trace_file), &r.trace)?;
                    let e = PoseErrorSample::between(&r.pose, &scene.gt_pose);
                    RansacRow {
                        name,
                        status: "ok".into(),
                        rotation_deg: e.rotation_deg,
                        translation_deg: e.translation_deg,
                        score: r.score,
                        inliers: r.inlier_count,
                        outliers,
                    }
                }
                Err(
                    e @ (gcr_core::Error::InsufficientSupport(_) | gcr_core::Error::NoHypothesis),
                ) => {
                    write_trace(&out.join(&trace_file), &[])?;
                    RansacRow {
                        name,
                        status: format!("failed: {e}"),
                        rotation_deg: f64::NAN,
                        translation_deg: f64::NAN,
                        score: f64::NAN,
                        inliers: 0,
                        outliers,
                    }
                }
                Err(e) => return Err(CliError::from(e).at(path)),
            };
            Ok((row, trace_file))
        })
        .collect::<CliResult<_>>()?;

    let mut csv =
        String::from("scene,status,rotation_deg,translation_deg,score,inliers,outliers\n");
    for (r, _) in &rows {
        csv += &format!(
            "{},{},{:?},{:?},{:?},{},{}\n",
            r.name, r.status, r.rotation_deg, r.translation_deg, r.score, r.inliers, r.outliers
        );
    }
    let ok: Vec<&RansacRow> = rows
        .iter()
        .map(|(r, _)| r)
        .filter(|r| r.status == "ok")
        .collect();
    let col = |f: fn(&RansacRow) -> f64| median(&ok.iter().map(|r| f(r)).collect::<Vec<_>>());
    csv += &format!(
        "median,{}/{} ok,{:?},{:?},{:?},{:?},{:?}\n",
        ok.len(),
        rows.len(),
        col(|r| r.rotation_deg),
        col(|r| r.translation_deg),
        col(|r| r.score),
        col(|r| r.inliers as f64),
        col(|r| r.outliers as f64)
    );
    fs::write(out.join("results.csv"), csv).at(out)?;
    let mut files: Vec<String> = rows.into_iter().map(|(_, t)| t).collect();
    files.push("results.csv".into());
    Ok(files)
}

struct LoadedScene {
    path: PathBuf,
}

fn load_training_scenes(
    dir: &Path,
    seed: u64,
    stride: u32,
) -> CliResult<Vec<(LoadedScene, TrainingScene)>> {
    let fusion = init_params(
        &FusionConfig::default(),
        derive_seed(seed, Domain::FusionInit, 0),
    )?;
    list_scenes(dir)?
        .par_iter()
        .map(|path| {
            let scene = read_scene(path)?;
            let depth1 = read_dmap(&companion(path, "cam1.dmap"))?;
            let f1 = read_dfield(&companion(path, "cam1.dfield"))?;
            let f2 = read_dfield(&companion(path, "cam2.dfield"))?;
            let ts = prepare_rendered(&scene, depth1, f1, f2, &fusion, stride).at(path)?;
            Ok((LoadedScene { path: path.clone() }, ts))
        })
        .collect()
}

#[derive(Serialize)]
struct RegressorFile<'a> {
    s_max: f64,
    params: &'a [f64],
}

fn train_cmd(
    scenes: &Path,
    heldout: Option<&Path>,
    mode: &str,
    seed: u64,
    config: &TrainSettings,
    out: &Path,
) -> CliResult<Vec<String>> {
    let mode = AblationMode::parse(mode).ok_or_else(|| {
        CliError::usage(format!(
            "mode must be pose_only, pose+desc or full, got `{mode}`"
        ))
    })?;
    let cfg = config.to_core(seed, mode)?;
    let mut train_set = load_training_scenes(scenes, seed, cfg.stride)?;
    let held = match heldout {
        Some(dir) => load_training_scenes(dir, seed, cfg.stride)?,
        None => {
            let n = train_set.len();
            let k = ((n as f64 * config.heldout_fraction).ceil() as usize).max(1);
            if k >= n {
                return Err(CliError::data(format!(
                    "{}: {n} scene(s) cannot be split into training and held-out sets",
                    scenes.display()
                )));
            }
            train_set.split_off(n - k)
        }
    };
    let train_scenes: Vec<TrainingScene> = train_set.into_iter().map(|(_, t)| t).collect();
    let outcome = train(&train_scenes, &cfg)?;

    let mut history = format!("{}\n", StepRecord::CSV_HEADER);
    for r in &outcome.history {
        history += &r.csv_row();
        history.push('\n');
    }
    fs::write(out.join("history.csv"), history).at(out)?;
    write_json(
        &out.join("regressor.json"),
        &RegressorFile {
            s_max: outcome.regressor.s_max,
            params: &outcome.regressor.params,
        },
    )?;

    let held_scenes: Vec<TrainingScene> = held.iter().map(|(_, t)| t.clone()).collect();
    let errors = evaluate(&outcome.regressor, &held_scenes)?;
    let mut per_scene = String::from("scene,rotation_deg,translation_deg,combined_deg\n");
    for ((l, _), e) in held.iter().zip(&errors) {
        let name = l
            .path
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or_default();
        per_scene += &format!(
            "{name},{:?},{:?},{:?}\n",
            e.rotation_deg,
            e.translation_deg,
            e.combined()
        );
    }
    fs::write(out.join("heldout_errors.csv"), per_scene).at(out)?;
    let combined: Vec<f64> = errors.iter().map(|e| e.combined()).collect();
    let mut auc = String::from("threshold,auc\n");
    for (t, a) in auc_report(&combined)? {
        auc += &format!("{t},{a:?}\n");
    }
    fs::write(out.join("auc.csv"), auc).at(out)?;
    Ok(vec![
        "history.csv".into(),
        "regressor.json".into(),
        "heldout_errors.csv".into(),
        "auc.csv".into(),
    ])
}

#[derive(Serialize)]
struct MapSidecar {
    mean: f64,
    valid_count: usize,
}

fn analyze(
    scenes: &Path,
    pose: &str,
    seed: u64,
    config: &AnalyzeSettings,
    out: &Path,
) -> CliResult<Vec<String>> {
    config.validate()?;
    let src = parse_pose_source(pose, "pose", true)?;
    let paths = list_scenes(scenes)?;
    let results: Vec<(String, f64, usize, Vec<u64>)> = paths
        .par_iter()
        .enumerate()
        .map(|(i, path)| {
            let scene = read_scene(path)?;
            let depth1 = read_dmap(&companion(path, "cam1.dmap"))?;
            let f1 = read_dfield(&companion(path, "cam1.dfield"))?;
            let f2 = read_dfield(&companion(path, "cam2.dfield"))?;
            let p = resolve_pose(&src, &scene, path, seed, i)?;
            let map = descriptor_error_map(&f1, &f2, &depth1, &scene.k1, &scene.k2, &p).at(path)?;
            let name = path
                .file_stem()
                .and_then(|s| s.to_str())
                .unwrap_or_default()
                .to_string();
            write_pgm16(&out.join(format!("{name}.pgm")), &map)?;
            write_json(
                &out.join(format!("{name}.json")),
                &MapSidecar {
                    mean: map.mean,
                    valid_count: map.valid_count,
                },
            )?;
            Ok((
                name,
                map.mean,
                map.valid_count,
                histogram(map.valid_errors(), config.bins),
            ))
        })
        .collect::<CliResult<_>>()?;

    let mut files = Vec::new();
    let mut summary = String::from("scene,mean,valid_count\n");
    let mut total = vec![0u64; config.bins];
    for (name, mean, count, hist) in &results {
        summary += &format!("{name},{mean:?},{count}\n");
        files.extend([format!("{name}.pgm"), format!("{name}.json")]);
        for (t, h) in total.iter_mut().zip(hist) {
            *t += h;
        }
    }
    let mut hist = String::from("bin_lo,bin_hi,count\n");
    for (b, c) in total.iter().enumerate() {
        let w = 1.0 / config.bins as f64;
        hist += &format!("{:?},{:?},{c}\n", b as f64 * w, (b + 1) as f64 * w);
    }
    fs::write(out.join("summary.csv"), summary).at(out)?;
    fs::write(out.join("histogram.csv"), hist).at(out)?;
    files.extend(["summary.csv".into(), "histogram.csv".into()]);
    Ok(files)
}

/// Writes one pose per scene into `dir` as
/// `<scene>.pose.json`, the layout `analyze --pose file:<dir>` reads.
pub fn write_pose_dir(dir: &Path, poses: &[(String, Pose)]) -> CliResult<()> {
    fs::create_dir_all(dir).at(dir)?;
    for (name, p) in poses {
        write_pose(&dir.join(format!("{name}.pose.json")), p)?;
    }
    Ok(())
}
