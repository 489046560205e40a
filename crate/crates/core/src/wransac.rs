//! Weighted RANSAC with prior-guided hypothesis scoring.
//!
//! Minimal sets are drawn with probability proportional to per-correspondence
//! weights, each set is solved with [`solve_pnp`], and hypotheses are scored
//! by
//!
//! ```text
//! score = inliers + β · exp(−‖[R|t]_cand − [R|t]_prior‖_F / τ)
//! ```
//!
//! so that among hypotheses with equal support the one nearest the prior
//! pose wins. The loop runs a fixed number of iterations with no early exit.
//!
//! `observed` pixels and `weights` are aligned with the *valid* entries of the
//! [`CorrespondenceSet`], in order.

use alloc::format;
use alloc::vec::Vec;
#[allow(unused_imports)] // std builds resolve these to inherent methods
use num_traits::Float;

use rand::Rng as _;
use rand::RngCore;

use crate::correspondence::{gate_sufficient, CorrespondenceSet, MIN_VALID_CORRESPONDENCES};
use crate::geometry::{pose_frobenius_distance, CameraIntrinsics, Pixel, Point3, Pose};
use crate::pnp::{
    count_inliers, reprojection_errors_for_points, solve_pnp, PnpSample, MINIMAL_SAMPLE,
};
use crate::rng::{substream, Domain};
use crate::{Error, Result};

/// Largest correspondence count accepted by [`exhaustive_ransac_oracle`].
pub const ORACLE_MAX_CORRESPONDENCES: usize = 12;

#[derive(Debug, Clone, PartialEq)]
pub struct RansacConfig {
    pub iterations: usize,
    pub sample_size: usize,
    /// Pixels; inliers have reprojection error strictly below this.
    pub inlier_threshold: f64,
    pub beta: f64,
    pub tau: f64,
    pub seed: u64,
    /// Refuse to run unless the correspondence gate passes.
    pub enforce_gate: bool,
}

impl Default for RansacConfig {
    fn default() -> Self {
        Self {
            iterations: 50,
            sample_size: MINIMAL_SAMPLE,
            inlier_threshold: 2.0,
            beta: 0.5,
            tau: 10.0,
            seed: 0,
            enforce_gate: true,
        }
    }
}

impl RansacConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations < 1 {
            return Err(Error::config("iterations", "must be at least 1"));
        }
        if self.sample_size < MINIMAL_SAMPLE {
            return Err(Error::config("sample_size", "must be at least 6"));
        }
        if !(self.inlier_threshold > 0.0) {
            return Err(Error::config("inlier_threshold", "must be positive"));
        }
        if !(self.beta >= 0.0) {
            return Err(Error::config("beta", "must be non-negative"));
        }
        if !(self.tau > 0.0) {
            return Err(Error::config("tau", "must be positive"));
        }
        Ok(())
    }
}

/// One hypothesis attempt. `score` and `inliers` are `None` when the sample
/// was degenerate.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationTrace {
    pub iteration: usize,
    /// Sampled indices into the valid correspondences, ascending.
    pub indices: Vec<usize>,
    pub score: Option<f64>,
    pub inliers: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RansacResult {
    pub pose: Pose,
    pub score: f64,
    pub inlier_count: usize,
    pub iterations_run: usize,
    /// Iteration that produced `pose` (`None` for the oracle).
    pub best_iteration: Option<usize>,
    pub prior: Pose,
    pub beta: f64,
    pub tau: f64,
    pub trace: Vec<IterationTrace>,
}

impl RansacResult {
    /// The score implied by this result's own pose, inlier count and prior.
    pub fn recomputed_score(&self) -> f64 {
        score_hypothesis(
            &self.pose,
            self.inlier_count,
            &self.prior,
            self.beta,
            self.tau,
        )
    }
}

/// Draws `k` distinct indices, each draw proportional to the remaining
/// weights (successive renormalization).
pub fn weighted_sample<R: RngCore + ?Sized>(
    weights: &[f64],
    k: usize,
    rng: &mut R,
) -> Result<Vec<usize>> {
    let positive = weights
        .iter()
        .filter(|w| **w > 0.0 && w.is_finite())
        .count();
    if positive < k {
        return Err(Error::InsufficientSupport(format!(
            "{} positive weights for a sample of {}",
            positive, k
        )));
    }
    let mut remaining: Vec<f64> = weights
        .iter()
        .map(|w| if *w > 0.0 && w.is_finite() { *w } else { 0.0 })
        .collect();
    let mut picked = Vec::with_capacity(k);
    for _ in 0..k {
        let total: f64 = remaining.iter().sum();
        let target = rng.random::<f64>() * total;
        let mut acc = 0.0;
        let mut chosen = None;
        for (i, w) in remaining.iter().enumerate() {
            if *w <= 0.0 {
                continue;
            }
            acc += w;
            chosen = Some(i);
            if target < acc {
                break;
            }
        }
        // Falls back to the last positive entry when rounding leaves target ≥ acc.
        let i = chosen.expect("positive weight remains");
        picked.push(i);
        remaining[i] = 0.0;
    }
    Ok(picked)
}

pub fn score_hypothesis(
    candidate: &Pose,
    inlier_count: usize,
    prior: &Pose,
    beta: f64,
    tau: f64,
) -> f64 {
    inlier_count as f64 + beta * (-pose_frobenius_distance(candidate, prior) / tau).exp()
}

struct Problem<'a> {
    points: Vec<Point3>,
    observed: &'a [Pixel],
    prior: &'a Pose,
    k2: &'a CameraIntrinsics,
    cfg: &'a RansacConfig,
}

impl Problem<'_> {
    fn new<'a>(
        cs: &CorrespondenceSet,
        observed: &'a [Pixel],
        prior: &'a Pose,
        k2: &'a CameraIntrinsics,
        cfg: &'a RansacConfig,
    ) -> Result<Problem<'a>> {
        cfg.validate()?;
        let points = cs.valid_points();
        if points.len() != observed.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} valid correspondences vs {} observed pixels",
                points.len(),
                observed.len()
            )));
        }
        if cfg.enforce_gate && !gate_sufficient(cs) {
            return Err(Error::InsufficientSupport(format!(
                "{} valid correspondences, need more than {}",
                points.len(),
                MIN_VALID_CORRESPONDENCES
            )));
        }
        if points.len() < cfg.sample_size {
            return Err(Error::InsufficientSupport(format!(
                "{} valid correspondences for a sample of {}",
                points.len(),
                cfg.sample_size
            )));
        }
        Ok(Problem {
            points,
            observed,
            prior,
            k2,
            cfg,
        })
    }

    /// Solves and scores one sorted index set.
    fn evaluate(
        &self,
        indices: &[usize],
        scratch: &mut (Vec<Point3>, Vec<Pixel>),
    ) -> Option<(Pose, usize, f64)> {
        scratch.0.clear();
        scratch.1.clear();
        scratch.0.extend(indices.iter().map(|&i| self.points[i]));
        scratch.1.extend(indices.iter().map(|&i| self.observed[i]));
        let sample = PnpSample {
            points3d: &scratch.0,
            pixels2d: &scratch.1,
            intrinsics2: self.k2,
        };
        let pose = solve_pnp(&sample).ok()?;
        let errors = reprojection_errors_for_points(&pose, &self.points, self.observed, self.k2);
        let inliers = count_inliers(&errors, self.cfg.inlier_threshold);
        let score = score_hypothesis(&pose, inliers, self.prior, self.cfg.beta, self.cfg.tau);
        Some((pose, inliers, score))
    }
}

/// Runs `cfg.iterations` weighted hypothesis attempts and returns the best.
///
/// Iteration `i` draws from its own substream derived from `(cfg.seed, i)`.
/// Degenerate samples are skipped but still count as iterations. Ties keep
/// the earliest iteration. The winning pose is returned as solved, without a
/// final refit on its inliers.
pub fn run_weighted_ransac(
    cs: &CorrespondenceSet,
    observed_pixels2: &[Pixel],
    weights: &[f64],
    prior: &Pose,
    k2: &CameraIntrinsics,
    cfg: &RansacConfig,
) -> Result<RansacResult> {
    let problem = Problem::new(cs, observed_pixels2, prior, k2, cfg)?;
    if weights.len() != problem.points.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} weights for {} valid correspondences",
            weights.len(),
            problem.points.len()
        )));
    }
    let mut scratch = (
        Vec::with_capacity(cfg.sample_size),
        Vec::with_capacity(cfg.sample_size),
    );
    let mut trace = Vec::with_capacity(cfg.iterations);
    let mut best: Option<(usize, Pose, usize, f64)> = None;
    for iteration in 0..cfg.iterations {
        let mut rng = substream(cfg.seed, Domain::RansacIteration, iteration as u64);
        let mut indices = weighted_sample(weights, cfg.sample_size, &mut rng)?;
        indices.sort_unstable();
        let outcome = problem.evaluate(&indices, &mut scratch);
        if let Some((pose, inliers, score)) = outcome {
            if best.as_ref().is_none_or(|b| score > b.3) {
                best = Some((iteration, pose, inliers, score));
            }
        }
        trace.push(IterationTrace {
            iteration,
            indices,
            score: outcome.map(|o| o.2),
            inliers: outcome.map(|o| o.1),
        });
    }
    let (best_iteration, pose, inlier_count, score) = best.ok_or(Error::NoHypothesis)?;
    Ok(RansacResult {
        pose,
        score,
        inlier_count,
        iterations_run: cfg.iterations,
        best_iteration: Some(best_iteration),
        prior: *prior,
        beta: cfg.beta,
        tau: cfg.tau,
        trace,
    })
}

/// Scores every `cfg.sample_size` subset in lexicographic order with the same
/// path as [`run_weighted_ransac`]. The trace lists every subset.
pub fn exhaustive_ransac_oracle(
    cs: &CorrespondenceSet,
    observed_pixels2: &[Pixel],
    prior: &Pose,
    k2: &CameraIntrinsics,
    cfg: &RansacConfig,
) -> Result<RansacResult> {
    let n = cs.valid_count();
    if n > ORACLE_MAX_CORRESPONDENCES {
        return Err(Error::OracleBoundExceeded(n, ORACLE_MAX_CORRESPONDENCES));
    }
    let oracle_cfg = RansacConfig {
        enforce_gate: false,
        ..cfg.clone()
    };
    let problem = Problem::new(cs, observed_pixels2, prior, k2, &oracle_cfg)?;
    let k = oracle_cfg.sample_size;
    let mut scratch = (Vec::with_capacity(k), Vec::with_capacity(k));
    let mut indices: Vec<usize> = (0..k).collect();
    let mut trace = Vec::new();
    let mut best: Option<(Pose, usize, f64)> = None;
    loop {
        let outcome = problem.evaluate(&indices, &mut scratch);
        if let Some((pose, inliers, score)) = outcome {
            if best.as_ref().is_none_or(|b| score > b.2) {
                best = Some((pose, inliers, score));
            }
        }
        trace.push(IterationTrace {
            iteration: trace.len(),
            indices: indices.clone(),
            score: outcome.map(|o| o.2),
            inliers: outcome.map(|o| o.1),
        });
        if !next_combination(&mut indices, n) {
            break;
        }
    }
    let (pose, inlier_count, score) = best.ok_or(Error::NoHypothesis)?;
    Ok(RansacResult {
        pose,
        score,
        inlier_count,
        iterations_run: trace.len(),
        best_iteration: None,
        prior: *prior,
        beta: oracle_cfg.beta,
        tau: oracle_cfg.tau,
        trace,
    })
}

/// Advances `c` to the next k-combination of `0..n` in lexicographic order.
fn next_combination(c: &mut [usize], n: usize) -> bool {
    let k = c.len();
    let mut i = k;
    while i > 0 {
        i -= 1;
        if c[i] < n - k + i {
            c[i] += 1;
            for j in i + 1..k {
                c[j] = c[j - 1] + 1;
            }
            return true;
        }
    }
    false
}

impl core::fmt::Display for IterationTrace {
    /// JSON object `{iter, indices, score, inliers}`; degenerate iterations
    /// carry `null` score and inliers.
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        write!(f, "{{\"iter\":{},\"indices\":[", self.iteration)?;
        for (i, idx) in self.indices.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{}", idx)?;
        }
        f.write_str("],\"score\":")?;
        match self.score {
            Some(s) => write!(f, "{:?}", s)?,
            None => f.write_str("null")?,
        }
        f.write_str(",\"inliers\":")?;
        match self.inliers {
            Some(n) => write!(f, "{}}}", n),
            None => f.write_str("null}"),
        }
    }
}
