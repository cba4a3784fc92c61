//! Monte Carlo harnesses: random binary graphs across edge sparsity, and
//! point-cloud registration with injected outlier associations.
//!
//! Every trial draws from its own ChaCha stream keyed by
//! `(seed, level, trial)`, so results do not depend on how trials are
//! scheduled across threads and rows are always aggregated in trial order.

use std::collections::HashSet;
use std::f64::consts::PI;
use std::io::Write;

use nalgebra::{Quaternion, UnitQuaternion, Vector3};
use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::affinity::AffinityMatrix;
use crate::error::{Error, Result};
use crate::invariants::{affinity_points, AssociationSet, PointSet};
use crate::oracle::exact_max_clique;
use crate::scoring::{ScoreKind, ScoringConfig};
use crate::solver::{solve, Solution, SolverParams};

/// Deterministic per-trial generator.
pub fn trial_rng(seed: u64, level: usize, trial: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((level as u64) << 32) | trial as u64);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SparsitySpec {
    pub n: usize,
    /// Fraction of the complete graph's edges removed.
    pub sparsity: f64,
    pub trials: usize,
    pub seed: u64,
}

impl SparsitySpec {
    pub fn check(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::Parameter("n must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.sparsity) {
            return Err(Error::Parameter(format!(
                "sparsity must lie in [0, 1], got {}",
                self.sparsity
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BunnySpec {
    pub n_model_points: usize,
    /// Half-width of the elementwise uniform noise, in meters.
    pub noise_halfwidth: f64,
    pub n_clutter: usize,
    pub clutter_radius: f64,
    pub outlier_ratio: f64,
    pub n_assoc: usize,
    pub epsilon: f64,
    pub sigma: f64,
    pub kind: ScoreKind,
    pub trials: usize,
    pub seed: u64,
}

impl Default for BunnySpec {
    fn default() -> Self {
        BunnySpec {
            n_model_points: 1000,
            noise_halfwidth: 0.01,
            n_clutter: 200,
            clutter_radius: 1.0,
            outlier_ratio: 0.9,
            n_assoc: 1000,
            epsilon: 0.08,
            sigma: 0.03,
            kind: ScoreKind::Weighted,
            trials: 50,
            seed: 0,
        }
    }
}

impl BunnySpec {
    pub fn scoring(&self) -> Result<ScoringConfig> {
        match self.kind {
            ScoreKind::Weighted => ScoringConfig::weighted(self.epsilon, self.sigma),
            ScoreKind::Binary => ScoringConfig::binary(self.epsilon),
        }
    }

    pub fn inlier_count(&self) -> usize {
        ((1.0 - self.outlier_ratio) * self.n_assoc as f64).round() as usize
    }

    pub fn check(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.outlier_ratio) {
            return Err(Error::Parameter(format!(
                "outlier ratio must lie in [0, 1), got {}",
                self.outlier_ratio
            )));
        }
        if self.n_assoc == 0 || self.n_model_points == 0 {
            return Err(Error::Parameter(
                "association and model point counts must be positive".into(),
            ));
        }
        if !(self.noise_halfwidth >= 0.0) || !(self.clutter_radius >= 0.0) {
            return Err(Error::Parameter(
                "noise and clutter radius must be nonnegative".into(),
            ));
        }
        self.scoring()?;
        let inliers = self.inlier_count();
        if inliers > self.n_model_points {
            return Err(Error::InsufficientInliers {
                requested: inliers,
                available: self.n_model_points,
            });
        }
        let outliers = self.n_assoc - inliers;
        let n_target = self.n_model_points + self.n_clutter;
        let pool = self.n_model_points * n_target - self.n_model_points;
        if outliers > pool {
            return Err(Error::Parameter(format!(
                "{outliers} outlier associations requested but only {pool} exist"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    /// `None` when nothing was selected.
    pub precision: Option<f64>,
    pub recall: f64,
    pub runtime_ms: f64,
    /// `|selected| - max clique size`; sparsity harness only.
    pub clique_size_error: Option<i64>,
}

/// Complete graph on `n` vertices with exactly
/// `round(sparsity * n(n-1)/2)` uniformly chosen edges removed.
pub fn gen_sparsity_graph<R: Rng + ?Sized>(
    n: usize,
    sparsity: f64,
    rng: &mut R,
) -> Result<AffinityMatrix> {
    SparsitySpec {
        n,
        sparsity,
        trials: 1,
        seed: 0,
    }
    .check()?;
    let total = n * (n - 1) / 2;
    let remove = ((sparsity * total as f64).round() as usize).min(total);
    let mut dropped = vec![false; total];
    for k in sample(rng, total, remove) {
        dropped[k] = true;
    }
    let mut entries = Vec::with_capacity(total - remove);
    let mut k = 0;
    for i in 0..n {
        for j in i + 1..n {
            if !dropped[k] {
                entries.push((i, j, 1.0));
            }
            k += 1;
        }
    }
    Ok(AffinityMatrix::from_sorted_upper(n, entries))
}

/// A generated registration problem. `source[i]` and `target[i]` are true
/// correspondences for `i < n_model_points`; the remaining target points
/// are clutter.
#[derive(Debug, Clone, PartialEq)]
pub struct BunnyInstance {
    pub source: PointSet,
    pub target: PointSet,
    pub assoc: AssociationSet,
    pub rotation: UnitQuaternion<f64>,
    pub translation: Vector3<f64>,
}

impl BunnyInstance {
    pub fn affinity(&self, cfg: &ScoringConfig) -> Result<AffinityMatrix> {
        affinity_points(&self.source, &self.target, &self.assoc, cfg)
    }
}

fn unit_normal<R: Rng + ?Sized>(rng: &mut R) -> Vector3<f64> {
    loop {
        let v = Vector3::new(
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
        );
        let n: f64 = v.norm();
        if n > 1e-12 {
            return v / n;
        }
    }
}

/// Uniform rotation via Shoemake's quaternion construction.
pub fn random_rotation<R: Rng + ?Sized>(rng: &mut R) -> UnitQuaternion<f64> {
    let (u1, u2, u3): (f64, f64, f64) = (rng.random(), rng.random(), rng.random());
    let (a, b) = ((1.0 - u1).sqrt(), u1.sqrt());
    let q = Quaternion::new(
        b * (2.0 * PI * u3).cos(),
        a * (2.0 * PI * u2).sin(),
        a * (2.0 * PI * u2).cos(),
        b * (2.0 * PI * u3).sin(),
    );
    UnitQuaternion::from_quaternion(q)
}

/// Rescales a cloud so that its bounding box fits the unit cube with the
/// minimum corner at the origin.
pub fn fit_unit_cube(model: &PointSet) -> PointSet {
    let mut lo = Vector3::repeat(f64::INFINITY);
    let mut hi = Vector3::repeat(f64::NEG_INFINITY);
    for p in &model.points {
        lo = lo.inf(p);
        hi = hi.sup(p);
    }
    let extent = (hi - lo).max();
    let scale = if extent > 0.0 { 1.0 / extent } else { 1.0 };
    PointSet::new(model.points.iter().map(|p| (p - lo) * scale).collect())
}

/// Deterministic closed surface used when no scanned model is supplied: an
/// anisotropic sphere carrying a few Gaussian lobes at fixed, asymmetric
/// directions, sampled at `n_points` directions from a fixed stream. The
/// lobes break every reflection and rotation symmetry, so distance
/// preservation pins down the correspondence the way a scanned object does.
pub fn synthetic_model(n_points: usize) -> PointSet {
    const LOBES: [([f64; 3], f64, f64); 5] = [
        ([0.62, 0.55, 0.56], 0.55, 0.10),
        ([-0.35, 0.80, -0.49], 0.35, 0.05),
        ([-0.17, 0.93, 0.33], 0.45, 0.03),
        ([-0.80, -0.30, 0.52], 0.25, 0.20),
        ([0.10, -0.60, -0.79], 0.30, 0.15),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_b10b);
    let points = (0..n_points)
        .map(|_| {
            let d = unit_normal(&mut rng);
            let r = 1.0
                + LOBES
                    .iter()
                    .map(|(c, amp, width)| {
                        let c = Vector3::from(*c).normalize();
                        amp * (-(d - c).norm_squared() / width).exp()
                    })
                    .sum::<f64>();
            Vector3::new(1.0 * r * d.x, 0.8 * r * d.y, 0.7 * r * d.z)
        })
        .collect();
    PointSet::new(points)
}

/// Builds one registration problem: unit-cube scaling, subsampling, a
/// random rigid transform with bounded uniform noise, clutter in a ball
/// around the transformed centroid, and a shuffled association set whose
/// inlier fraction is `1 - outlier_ratio`.
pub fn gen_bunny_instance<R: Rng + ?Sized>(
    spec: &BunnySpec,
    model: &PointSet,
    rng: &mut R,
) -> Result<BunnyInstance> {
    spec.check()?;
    if model.is_empty() {
        return Err(Error::Parameter("model point set is empty".into()));
    }
    if model.len() < spec.n_model_points {
        return Err(Error::Parameter(format!(
            "model has {} points but {} were requested",
            model.len(),
            spec.n_model_points
        )));
    }
    let scaled = fit_unit_cube(model);
    let n = spec.n_model_points;
    let source: Vec<Vector3<f64>> = sample(rng, scaled.len(), n)
        .into_iter()
        .map(|k| scaled.points[k])
        .collect();

    let rotation = random_rotation(rng);
    let translation = Vector3::from_fn(|_, _| rng.random_range(-1.0..=1.0));
    let h = spec.noise_halfwidth;
    let mut target: Vec<Vector3<f64>> = source
        .iter()
        .map(|p| {
            let noise = if h > 0.0 {
                Vector3::from_fn(|_, _| rng.random_range(-h..=h))
            } else {
                Vector3::zeros()
            };
            rotation * p + translation + noise
        })
        .collect();
    let centroid = target.iter().sum::<Vector3<f64>>() / n as f64;
    for _ in 0..spec.n_clutter {
        let dir = unit_normal(rng);
        let r = spec.clutter_radius * rng.random::<f64>().cbrt();
        target.push(centroid + dir * r);
    }

    let n_in = spec.inlier_count();
    let n_out = spec.n_assoc - n_in;
    let mut labelled: Vec<((usize, usize), bool)> = sample(rng, n, n_in)
        .into_iter()
        .map(|i| ((i, i), true))
        .collect();
    let mut seen: HashSet<(usize, usize)> = labelled.iter().map(|&(p, _)| p).collect();
    let n_target = target.len();
    while labelled.len() < spec.n_assoc {
        let pair = (rng.random_range(0..n), rng.random_range(0..n_target));
        if pair.0 != pair.1 && seen.insert(pair) {
            labelled.push((pair, false));
        }
    }
    debug_assert_eq!(labelled.iter().filter(|(_, t)| !t).count(), n_out);
    labelled.shuffle(rng);
    let (pairs, truth) = labelled.into_iter().unzip();
    Ok(BunnyInstance {
        source: PointSet::new(source),
        target: PointSet::new(target),
        assoc: AssociationSet::with_truth(pairs, truth)?,
        rotation,
        translation,
    })
}

/// Precision and recall of `selected` against the ground-truth index set.
pub fn precision_recall(selected: &[usize], truth: &[usize]) -> Metrics {
    let truth: HashSet<usize> = truth.iter().copied().collect();
    let picked: HashSet<usize> = selected.iter().copied().collect();
    let hits = picked.intersection(&truth).count() as f64;
    Metrics {
        precision: (!picked.is_empty()).then(|| hits / picked.len() as f64),
        recall: if truth.is_empty() {
            0.0
        } else {
            hits / truth.len() as f64
        },
        runtime_ms: 0.0,
        clique_size_error: None,
    }
}

fn millis(sol: &Solution) -> f64 {
    sol.stats.elapsed.as_secs_f64() * 1e3
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        f64::NAN
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

/// Sample standard deviation; zero for fewer than two values.
fn std_dev(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SparsitySweep {
    pub n: usize,
    pub grid: Vec<f64>,
    pub trials: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SparsityRow {
    pub sparsity: f64,
    /// Mean signed error `|selected| - max clique size`.
    pub mean_err: f64,
    pub std_err: f64,
    pub mean_abs_err: f64,
    pub mean_ms: f64,
    pub trials: usize,
    pub failures: usize,
}

/// One sparsity trial: graph, solve, and exact clique size.
pub fn sparsity_trial(
    n: usize,
    sparsity: f64,
    params: &SolverParams,
    rng: &mut ChaCha8Rng,
) -> Result<(AffinityMatrix, Solution, Metrics)> {
    let m = gen_sparsity_graph(n, sparsity, rng)?;
    let p = SolverParams {
        seed: rng.random(),
        ..params.clone()
    };
    let sol = solve(&m, &p)?;
    let best = exact_max_clique(&m)?.best_set.len() as i64;
    let metrics = Metrics {
        precision: None,
        recall: f64::NAN,
        runtime_ms: millis(&sol),
        clique_size_error: Some(sol.selected.len() as i64 - best),
    };
    Ok((m, sol, metrics))
}

/// Solver failures are counted per row and excluded from the means.
pub fn run_sparsity_sweep(
    sweep: &SparsitySweep,
    params: &SolverParams,
) -> Result<Vec<SparsityRow>> {
    params.check()?;
    for &s in &sweep.grid {
        SparsitySpec {
            n: sweep.n,
            sparsity: s,
            trials: sweep.trials,
            seed: sweep.seed,
        }
        .check()?;
    }
    sweep
        .grid
        .iter()
        .enumerate()
        .map(|(level, &s)| {
            let outcomes: Vec<Result<Metrics>> = (0..sweep.trials)
                .into_par_iter()
                .map(|t| {
                    let mut rng = trial_rng(sweep.seed, level, t);
                    sparsity_trial(sweep.n, s, params, &mut rng).map(|(_, _, m)| m)
                })
                .collect();
            let mut errs = Vec::new();
            let mut ms = Vec::new();
            let mut failures = 0;
            for o in outcomes {
                match o {
                    Ok(m) => {
                        errs.push(m.clique_size_error.unwrap_or(0) as f64);
                        ms.push(m.runtime_ms);
                    }
                    Err(Error::SolverFailure(_)) => failures += 1,
                    Err(e) => return Err(e),
                }
            }
            let abs: Vec<f64> = errs.iter().map(|e| e.abs()).collect();
            Ok(SparsityRow {
                sparsity: s,
                mean_err: mean(&errs),
                std_err: std_dev(&errs),
                mean_abs_err: mean(&abs),
                mean_ms: mean(&ms),
                trials: sweep.trials,
                failures,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct BunnySweep {
    /// Template; its `outlier_ratio` is replaced by each grid value.
    pub spec: BunnySpec,
    pub grid: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BunnyRow {
    pub outlier_ratio: f64,
    /// Mean over trials with a defined precision; `None` if there were none.
    pub mean_p: Option<f64>,
    pub mean_r: f64,
    pub std_p: f64,
    pub std_r: f64,
    pub mean_ms: f64,
    pub trials: usize,
    pub failures: usize,
}

#[derive(Debug, Clone)]
pub struct BunnyTrial {
    pub instance: BunnyInstance,
    pub matrix: AffinityMatrix,
    pub solution: Solution,
    pub metrics: Metrics,
}

/// One registration trial: instance, affinity, solve, score.
pub fn bunny_trial(
    spec: &BunnySpec,
    model: &PointSet,
    params: &SolverParams,
    rng: &mut ChaCha8Rng,
) -> Result<BunnyTrial> {
    let instance = gen_bunny_instance(spec, model, rng)?;
    let matrix = instance.affinity(&spec.scoring()?)?;
    let p = SolverParams {
        seed: rng.random(),
        ..params.clone()
    };
    let solution = solve(&matrix, &p)?;
    let mut metrics = precision_recall(&solution.selected, &instance.assoc.inlier_indices());
    metrics.runtime_ms = millis(&solution);
    Ok(BunnyTrial {
        instance,
        matrix,
        solution,
        metrics,
    })
}

pub fn run_bunny_sweep(
    sweep: &BunnySweep,
    model: &PointSet,
    params: &SolverParams,
) -> Result<Vec<BunnyRow>> {
    params.check()?;
    let specs: Vec<BunnySpec> = sweep
        .grid
        .iter()
        .map(|&or| BunnySpec {
            outlier_ratio: or,
            ..sweep.spec
        })
        .collect();
    for s in &specs {
        s.check()?;
    }
    specs
        .iter()
        .enumerate()
        .map(|(level, spec)| {
            let outcomes: Vec<Result<Metrics>> = (0..spec.trials)
                .into_par_iter()
                .map(|t| {
                    let mut rng = trial_rng(spec.seed, level, t);
                    bunny_trial(spec, model, params, &mut rng).map(|b| b.metrics)
                })
                .collect();
            let (mut ps, mut rs, mut ms) = (Vec::new(), Vec::new(), Vec::new());
            let mut failures = 0;
            for o in outcomes {
                match o {
                    Ok(m) => {
                        ps.extend(m.precision);
                        rs.push(m.recall);
                        ms.push(m.runtime_ms);
                    }
                    Err(Error::SolverFailure(_)) => failures += 1,
                    Err(e) => return Err(e),
                }
            }
            Ok(BunnyRow {
                outlier_ratio: spec.outlier_ratio,
                mean_p: (!ps.is_empty()).then(|| mean(&ps)),
                mean_r: mean(&rs),
                std_p: std_dev(&ps),
                std_r: std_dev(&rs),
                mean_ms: mean(&ms),
                trials: spec.trials,
                failures,
            })
        })
        .collect()
}

fn fmt_f(x: f64) -> String {
    if x.is_nan() {
        "null".into()
    } else {
        format!("{x:.6}")
    }
}

/// `sparsity,mean_err,std_err,mean_ms`. With `timing` off the runtime
/// column is written as `null` so reruns are byte-identical.
pub fn write_sparsity_csv<W: Write>(rows: &[SparsityRow], timing: bool, mut w: W) -> Result<()> {
    writeln!(w, "sparsity,mean_err,std_err,mean_ms")?;
    for r in rows {
        let ms = if timing {
            fmt_f(r.mean_ms)
        } else {
            "null".into()
        };
        writeln!(
            w,
            "{},{},{},{}",
            fmt_f(r.sparsity),
            fmt_f(r.mean_err),
            fmt_f(r.std_err),
            ms
        )?;
    }
    Ok(())
}

/// `outlier_ratio,mean_p,mean_r,mean_ms,failures`; undefined precision is
/// written as `null`.
pub fn write_bunny_csv<W: Write>(rows: &[BunnyRow], timing: bool, mut w: W) -> Result<()> {
    writeln!(w, "outlier_ratio,mean_p,mean_r,mean_ms,failures")?;
    for r in rows {
        let ms = if timing {
            fmt_f(r.mean_ms)
        } else {
            "null".into()
        };
        writeln!(
            w,
            "{},{},{},{},{}",
            fmt_f(r.outlier_ratio),
            r.mean_p.map_or_else(|| "null".into(), fmt_f),
            fmt_f(r.mean_r),
            ms,
            r.failures
        )?;
    }
    Ok(())
}
