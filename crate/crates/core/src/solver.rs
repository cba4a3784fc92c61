//! Projected gradient ascent on the penalized densest-subgraph relaxation.
//!
//! The relaxation maximizes `F(u) = u' M_d u` over nonnegative `u` with
//! `||u|| <= 1`, where `M_d` replaces every zero of `M` by `-d`. The outer
//! loop raises `d` until `d >= n`; the inner loop takes tangent-space
//! gradient steps whose length is first chosen greedily (one coordinate
//! reaches the orthant boundary) and then backtracked until the objective
//! does not decrease. Once converged, the top `round(F)` entries of `u`
//! form the selected vertex set.

use std::fmt::{self, Write as _};
use std::str::FromStr;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::affinity::AffinityMatrix;
use crate::error::{Error, Result};

/// Tolerance on `||u|| <= 1` after a retraction.
pub const NORM_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct SolverParams {
    /// Initial penalty.
    pub d0: f64,
    /// How the penalty grows between levels.
    pub schedule: PenaltySchedule,
    /// Inner convergence on `||u_{k+1} - u_k||_inf`.
    pub tol_u: f64,
    /// Inner convergence on `|F_{k+1} - F_k| / max(1, |F_k|)`.
    pub tol_f: f64,
    pub max_inner_iters: usize,
    pub max_outer_iters: usize,
    /// Backtracking shrink factor.
    pub beta: f64,
    pub min_alpha: f64,
    pub seed: u64,
    /// Record every accepted iterate in [`Solution::trace`].
    pub trace: bool,
    pub rounding: Rounding,
}

impl Default for SolverParams {
    fn default() -> Self {
        SolverParams {
            d0: 0.01,
            schedule: PenaltySchedule::Adaptive,
            tol_u: 1e-9,
            tol_f: 1e-12,
            max_inner_iters: 1000,
            max_outer_iters: 1000,
            beta: 0.5,
            min_alpha: 1e-12,
            seed: 0,
            trace: false,
            rounding: Rounding::Spectral,
        }
    }
}

impl SolverParams {
    pub fn with_seed(seed: u64) -> Self {
        SolverParams {
            seed,
            ..Default::default()
        }
    }

    pub fn check(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::Parameter(format!(
                    "{name} must be positive, got {v}"
                )))
            }
        };
        positive("d0", self.d0)?;
        if let PenaltySchedule::Fixed(dd) = self.schedule {
            positive("delta_d", dd)?;
        }
        positive("tol_u", self.tol_u)?;
        positive("tol_f", self.tol_f)?;
        positive("min_alpha", self.min_alpha)?;
        if !(self.beta > 0.0 && self.beta < 1.0) {
            return Err(Error::Parameter(format!(
                "beta must lie in (0, 1), got {}",
                self.beta
            )));
        }
        if self.max_inner_iters == 0 || self.max_outer_iters == 0 {
            return Err(Error::Parameter("iteration caps must be positive".into()));
        }
        Ok(())
    }
}

/// How the relaxed vector is turned into a vertex set. Both walk the
/// vertices by decreasing `u` and skip any vertex unconnected to one
/// already kept.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Rounding {
    /// Keep the `round(u' M_d u)` largest entries. The objective equals the
    /// cluster size only when the cluster's weights are all one.
    Spectral,
    /// Walk the whole support and keep the prefix of highest density.
    DensestPrefix,
}

impl fmt::Display for Rounding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Rounding::Spectral => "spectral",
            Rounding::DensestPrefix => "densest-prefix",
        })
    }
}

impl FromStr for Rounding {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "spectral" => Ok(Rounding::Spectral),
            "densest-prefix" => Ok(Rounding::DensestPrefix),
            _ => Err(Error::Parameter(format!(
                "rounding must be 'spectral' or 'densest-prefix', got '{s}'"
            ))),
        }
    }
}

/// Penalty growth between levels of the outer loop.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PenaltySchedule {
    /// Data-driven increment: the mean ratio `|(M u)_i| / (C u)_i` over
    /// support coordinates with a constraint violation, where `(C u)_i` is
    /// the mass `u` places on vertices not adjacent to `i`. This is the
    /// penalty at which the violating coordinates stop gaining from their
    /// neighbours. The loop also ends once no support coordinate violates a
    /// constraint, since larger penalties then leave the iterate unchanged.
    Adaptive,
    /// `max(1, ceil(n / 10))`.
    Tenth,
    /// Constant increment.
    Fixed(f64),
}

impl PenaltySchedule {
    /// Fixed increment for an `n`-vertex problem; `None` when adaptive.
    pub fn fixed_step(&self, n: usize) -> Option<f64> {
        match *self {
            PenaltySchedule::Adaptive => None,
            PenaltySchedule::Tenth => Some(n.div_ceil(10).max(1) as f64),
            PenaltySchedule::Fixed(dd) => Some(dd),
        }
    }
}

impl fmt::Display for PenaltySchedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PenaltySchedule::Adaptive => f.write_str("adaptive"),
            PenaltySchedule::Tenth => f.write_str("tenth"),
            PenaltySchedule::Fixed(dd) => write!(f, "{dd:?}"),
        }
    }
}

impl FromStr for PenaltySchedule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "adaptive" => Ok(PenaltySchedule::Adaptive),
            "tenth" => Ok(PenaltySchedule::Tenth),
            _ => s
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite() && *v > 0.0)
                .map(PenaltySchedule::Fixed)
                .ok_or_else(|| {
                    Error::Parameter(format!(
                        "penalty schedule must be 'adaptive', 'tenth' or a positive number, got '{s}'"
                    ))
                }),
        }
    }
}

/// One accepted iterate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRecord {
    /// Index of the penalty level (0-based).
    pub level: usize,
    pub d: f64,
    pub objective: f64,
    pub norm: f64,
    pub min_entry: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SolveStats {
    pub outer_iters: usize,
    pub inner_iters: usize,
    /// Penalized matrix-vector products performed.
    pub matvecs: usize,
    pub final_d: f64,
    /// `round(u' M_d u)` before clamping and feasibility repair.
    pub omega_rounded: i64,
    /// Members dropped by the post-hoc feasibility repair.
    pub repaired: usize,
    pub reseeds: usize,
    /// Whether the last penalty level converged before its iteration cap.
    pub converged: bool,
    pub elapsed: Duration,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    /// Converged relaxation variable: nonnegative, unit norm.
    pub u: Vec<f64>,
    /// Size of the selected set.
    pub omega_hat: usize,
    /// Selected vertices, ascending.
    pub selected: Vec<usize>,
    /// `u' M u / u' u` at the indicator of `selected`.
    pub density: f64,
    /// Whether `selected` is pairwise connected in `M`.
    pub feasible: bool,
    /// `u' M_d u` at the converged `u` with the final penalty.
    pub objective: f64,
    pub stats: SolveStats,
    pub trace: Vec<TraceRecord>,
}

impl Solution {
    /// Plain-text serialization. Wall time is only written when
    /// `with_timing` is set so reruns can be compared byte for byte.
    pub fn to_text(&self, with_timing: bool) -> String {
        let mut s = String::new();
        writeln!(s, "omega {}", self.omega_hat).unwrap();
        writeln!(s, "density {:?}", self.density).unwrap();
        writeln!(s, "feasible {}", u8::from(self.feasible)).unwrap();
        let sel: Vec<String> = self.selected.iter().map(|i| i.to_string()).collect();
        writeln!(s, "selected {}", sel.join(" ")).unwrap();
        for (i, &v) in self.u.iter().enumerate() {
            if v != 0.0 {
                writeln!(s, "u {i} {v:?}").unwrap();
            }
        }
        let st = &self.stats;
        writeln!(s, "# outer_iters={}", st.outer_iters).unwrap();
        writeln!(s, "# inner_iters={}", st.inner_iters).unwrap();
        writeln!(s, "# matvecs={}", st.matvecs).unwrap();
        writeln!(s, "# final_d={:?}", st.final_d).unwrap();
        writeln!(s, "# objective={:?}", self.objective).unwrap();
        writeln!(s, "# omega_rounded={}", st.omega_rounded).unwrap();
        writeln!(s, "# repaired={}", st.repaired).unwrap();
        writeln!(s, "# reseeds={}", st.reseeds).unwrap();
        writeln!(s, "# converged={}", u8::from(st.converged)).unwrap();
        if with_timing {
            writeln!(s, "# ms={:.3}", st.elapsed.as_secs_f64() * 1e3).unwrap();
        }
        s
    }
}

/// The matrix `M_d`: `M` with every off-diagonal zero replaced by `-d`.
///
/// Products never materialize the dense complement. With `N` the binary
/// adjacency of the stored pairs and `S = 1'u`,
/// `(M_d u)_i = (M u)_i - d (S - u_i - (N u)_i)`.
#[derive(Debug, Clone, Copy)]
pub struct PenalizedMatrix<'a> {
    m: &'a AffinityMatrix,
    d: f64,
}

pub fn penalize(m: &AffinityMatrix, d: f64) -> Result<PenalizedMatrix<'_>> {
    if !(d.is_finite() && d > 0.0) {
        return Err(Error::Parameter(format!(
            "penalty d must be positive, got {d}"
        )));
    }
    Ok(PenalizedMatrix { m, d })
}

impl<'a> PenalizedMatrix<'a> {
    pub fn d(&self) -> f64 {
        self.d
    }

    pub fn matrix(&self) -> &'a AffinityMatrix {
        self.m
    }

    pub fn n(&self) -> usize {
        self.m.n()
    }

    /// `M_d(i, j)`.
    pub fn entry(&self, i: usize, j: usize) -> f64 {
        if i == j || self.m.is_connected(i, j) {
            self.m.get(i, j)
        } else {
            -self.d
        }
    }

    fn check_dim(&self, u: &[f64]) -> Result<()> {
        if u.len() != self.m.n() {
            return Err(Error::DimensionMismatch {
                expected: self.m.n(),
                got: u.len(),
            });
        }
        Ok(())
    }

    /// `out = M_d u`, using `scratch` for the neighbour sums.
    pub fn mul_vec_into(&self, u: &[f64], out: &mut [f64], scratch: &mut [f64]) {
        self.m.mul_vec_with_adjacency(u, out, scratch);
        let total: f64 = u.iter().sum();
        for i in 0..u.len() {
            out[i] -= self.d * (total - u[i] - scratch[i]);
        }
    }

    pub fn mul_vec(&self, u: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(u)?;
        let mut out = vec![0.0; u.len()];
        let mut scratch = vec![0.0; u.len()];
        self.mul_vec_into(u, &mut out, &mut scratch);
        Ok(out)
    }

    /// `F(u) = u' M_d u`.
    pub fn objective(&self, u: &[f64]) -> Result<f64> {
        let mdu = self.mul_vec(u)?;
        Ok(dot(u, &mdu))
    }

    /// `grad F(u) = 2 M_d u`.
    pub fn gradient(&self, u: &[f64]) -> Result<Vec<f64>> {
        let mut g = self.mul_vec(u)?;
        g.iter_mut().for_each(|x| *x *= 2.0);
        Ok(g)
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Removes the radial component: `g - u <u, g>`.
pub fn project_tangent(u: &[f64], g: &[f64]) -> Result<Vec<f64>> {
    if u.len() != g.len() {
        return Err(Error::DimensionMismatch {
            expected: u.len(),
            got: g.len(),
        });
    }
    let radial = dot(u, g);
    Ok(g.iter().zip(u).map(|(gi, ui)| gi - ui * radial).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub enum StepKind {
    /// The step drives the listed coordinates exactly onto the orthant
    /// boundary.
    Greedy { hits: Vec<usize> },
    /// No coordinate is being pushed out of the orthant; the step turns the
    /// update into a power iteration.
    Power,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepChoice {
    pub alpha: f64,
    pub kind: StepKind,
}

/// Initial step length.
///
/// `radial` is `<u, grad F(u)>`. If some positive coordinate has a negative
/// tangent gradient, returns `min |u_i / g_i|` over those coordinates.
/// Otherwise returns `1 / radial`, which makes `u + alpha g_perp`
/// proportional to `M_d u`, or `min_alpha` when `radial <= 0`.
pub fn greedy_step(u: &[f64], g_perp: &[f64], radial: f64, min_alpha: f64) -> StepChoice {
    let mut best = f64::INFINITY;
    let mut hits = Vec::new();
    for (i, (&ui, &gi)) in u.iter().zip(g_perp).enumerate() {
        if gi < 0.0 && ui > 0.0 {
            let a = (ui / gi).abs();
            if a < best {
                best = a;
                hits.clear();
                hits.push(i);
            } else if a == best {
                hits.push(i);
            }
        }
    }
    if best.is_finite() {
        return StepChoice {
            alpha: best,
            kind: StepKind::Greedy { hits },
        };
    }
    let alpha = if radial > 0.0 {
        1.0 / radial
    } else {
        min_alpha
    };
    StepChoice {
        alpha,
        kind: StepKind::Power,
    }
}

/// `max(v / ||v||, 0)`.
pub fn retract(v: &[f64]) -> Result<Vec<f64>> {
    let nv = norm(v);
    if nv == 0.0 || !nv.is_finite() {
        return Err(Error::DegenerateIterate);
    }
    let out: Vec<f64> = v.iter().map(|&x| (x / nv).max(0.0)).collect();
    if out.iter().all(|&x| x == 0.0) {
        return Err(Error::DegenerateIterate);
    }
    Ok(out)
}

/// Retraction followed by rescaling to unit norm, so iterates stay on the
/// sphere even when clipping removed mass.
fn retract_to_sphere(v: &[f64]) -> Result<Vec<f64>> {
    let mut out = retract(v)?;
    let nu = norm(&out);
    if nu != 1.0 {
        out.iter_mut().for_each(|x| *x /= nu);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LineSearch {
    pub alpha: f64,
    pub u: Vec<f64>,
    pub objective: f64,
    /// `M_d u` at the accepted point.
    pub mdu: Vec<f64>,
    pub shrinks: usize,
    /// No admissible step avoided a decrease of `F`; `u` is unchanged.
    pub stalled: bool,
}

/// Backtracking line search along `g_perp` starting at `alpha0`.
///
/// Accepts the first `alpha0 * beta^k >= min_alpha` whose retracted point
/// does not decrease `F`.
pub fn backtrack(
    md: &PenalizedMatrix<'_>,
    u: &[f64],
    g_perp: &[f64],
    alpha0: f64,
    params: &SolverParams,
) -> Result<LineSearch> {
    md.check_dim(u)?;
    md.check_dim(g_perp)?;
    if !(alpha0 > 0.0) {
        return Err(Error::Parameter(format!(
            "alpha0 must be positive, got {alpha0}"
        )));
    }
    let f0 = md.objective(u)?;
    let mut ws = Workspace::new(u.len());
    Ok(line_search(md, u, f0, g_perp, alpha0, &[], params, &mut ws))
}

struct Workspace {
    scratch: Vec<f64>,
    matvecs: usize,
}

impl Workspace {
    fn new(n: usize) -> Self {
        Workspace {
            scratch: vec![0.0; n],
            matvecs: 0,
        }
    }

    fn apply(&mut self, md: &PenalizedMatrix<'_>, u: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; u.len()];
        md.mul_vec_into(u, &mut out, &mut self.scratch);
        self.matvecs += 1;
        out
    }
}

#[allow(clippy::too_many_arguments)]
fn line_search(
    md: &PenalizedMatrix<'_>,
    u: &[f64],
    f0: f64,
    g_perp: &[f64],
    alpha0: f64,
    snap: &[usize],
    params: &SolverParams,
    ws: &mut Workspace,
) -> LineSearch {
    let mut alpha = alpha0;
    let mut shrinks = 0;
    let mut v = vec![0.0; u.len()];
    // The first trial always runs: a greedy step below `min_alpha` is how
    // a vanishing coordinate gets snapped to zero.
    while shrinks == 0 || alpha >= params.min_alpha {
        for ((vi, &ui), &gi) in v.iter_mut().zip(u).zip(g_perp) {
            *vi = ui + alpha * gi;
        }
        if shrinks == 0 {
            // The greedy step lands these coordinates on zero; rounding
            // should not leave a sliver behind.
            for &i in snap {
                v[i] = 0.0;
            }
        }
        if let Ok(cand) = retract_to_sphere(&v) {
            let mdu = ws.apply(md, &cand);
            let f = dot(&cand, &mdu);
            if f >= f0 {
                return LineSearch {
                    alpha,
                    u: cand,
                    objective: f,
                    mdu,
                    shrinks,
                    stalled: false,
                };
            }
        }
        alpha *= params.beta;
        shrinks += 1;
    }
    LineSearch {
        alpha: params.min_alpha,
        u: u.to_vec(),
        objective: f0,
        mdu: Vec::new(),
        shrinks,
        stalled: true,
    }
}

/// `u' M u / u' u` at the indicator of `selected`.
pub fn density_of(m: &AffinityMatrix, selected: &[usize]) -> Result<f64> {
    if selected.is_empty() {
        return Err(Error::EmptySelection);
    }
    let mut mask = vec![false; m.n()];
    for &i in selected {
        if i >= m.n() {
            return Err(Error::IndexOutOfRange {
                index: i,
                len: m.n(),
            });
        }
        mask[i] = true;
    }
    let mut total = 0.0;
    for &i in selected {
        total += m.diag()[i];
        let (cols, vals) = m.row(i);
        for (&j, &w) in cols.iter().zip(vals) {
            if mask[j] {
                total += w;
            }
        }
    }
    Ok(total / selected.len() as f64)
}

/// True when every pair in `set` is connected in `m`.
pub fn is_clique(m: &AffinityMatrix, set: &[usize]) -> bool {
    set.iter()
        .enumerate()
        .all(|(a, &i)| set[a + 1..].iter().all(|&j| m.is_connected(i, j)))
}

/// Largest `u_i u_j` over unconnected pairs in the support of `u`.
pub fn constraint_violation(m: &AffinityMatrix, u: &[f64]) -> f64 {
    let support: Vec<usize> = (0..u.len()).filter(|&i| u[i] > 0.0).collect();
    let mut worst = 0.0f64;
    for (a, &i) in support.iter().enumerate() {
        for &j in &support[a + 1..] {
            if !m.is_connected(i, j) {
                worst = worst.max(u[i] * u[j]);
            }
        }
    }
    worst
}

/// Indices sorted by decreasing `u`, ties by increasing index.
fn ranked(u: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..u.len()).collect();
    idx.sort_by(|&a, &b| u[b].total_cmp(&u[a]).then(a.cmp(&b)));
    idx
}

struct Relaxed {
    u: Vec<f64>,
    objective: f64,
    d: f64,
    outer: usize,
    inner: usize,
    matvecs: usize,
    converged: bool,
}

fn initial_point(n: usize, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
    let v: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
    retract_to_sphere(&v)
}

fn run_relaxation(
    m: &AffinityMatrix,
    params: &SolverParams,
    mut u: Vec<f64>,
    rng: &mut ChaCha8Rng,
    trace: &mut Vec<TraceRecord>,
) -> Result<Relaxed> {
    let n = m.n();
    let fixed_step = params.schedule.fixed_step(n);
    let mut ws = Workspace::new(n);
    let mut d = params.d0;
    let mut inner_total = 0;
    let mut level = 0;
    let mut converged;
    let mut objective;

    loop {
        let md = penalize(m, d)?;
        let mut mdu = ws.apply(&md, &u);
        let mut f = dot(&u, &mdu);
        if params.trace {
            trace.push(record(level, d, f, &u));
        }
        converged = false;
        for _ in 0..params.max_inner_iters {
            inner_total += 1;
            let grad: Vec<f64> = mdu.iter().map(|x| 2.0 * x).collect();
            let radial = dot(&u, &grad);
            let g_perp: Vec<f64> = grad.iter().zip(&u).map(|(g, ui)| g - ui * radial).collect();
            if g_perp.iter().all(|&g| g == 0.0) {
                converged = true;
                break;
            }
            let choice = greedy_step(&u, &g_perp, radial, params.min_alpha);
            let snap = match &choice.kind {
                StepKind::Greedy { hits } => hits.as_slice(),
                StepKind::Power => &[],
            };
            let ls = line_search(&md, &u, f, &g_perp, choice.alpha, snap, params, &mut ws);
            if ls.stalled {
                converged = true;
                break;
            }
            let du = u
                .iter()
                .zip(&ls.u)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            let df = (ls.objective - f).abs();
            let scale = f.abs().max(1.0);
            u = ls.u;
            mdu = ls.mdu;
            f = ls.objective;
            if params.trace {
                trace.push(record(level, d, f, &u));
            }
            // A greedy step that lands on the boundary can be arbitrarily
            // short when the vanishing coordinate was already tiny; such a
            // step changes the active set and says nothing about
            // stationarity.
            let hit_boundary = !snap.is_empty() && ls.shrinks == 0;
            if !hit_boundary && (du <= params.tol_u || df <= params.tol_f * scale) {
                converged = true;
                break;
            }
        }
        objective = f;
        level += 1;
        if level >= params.max_outer_iters {
            break;
        }
        // `None` when no support coordinate violates a constraint.
        let increment = adaptive_increment(m, &u, &mut ws);
        if converged && increment.is_none() && (fixed_step.is_none() || d >= n as f64) {
            break;
        }
        if converged && increment.is_some() && d >= n as f64 {
            // Past d = n every constrained maximizer is feasible, so a
            // converged infeasible iterate is a saddle, typically two
            // conflicting vertices holding identical mass. Break the tie.
            u = perturb(&u, rng)?;
        }
        d += fixed_step.or(increment).unwrap_or(0.0);
    }

    Ok(Relaxed {
        u,
        objective,
        d,
        outer: level,
        inner: inner_total,
        matvecs: ws.matvecs,
        converged,
    })
}

/// Relative size of the saddle-escaping perturbation.
const PERTURBATION: f64 = 1e-4;

fn perturb(u: &[f64], rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
    let v: Vec<f64> = u
        .iter()
        .map(|&x| x * (1.0 + PERTURBATION * (2.0 * rng.random::<f64>() - 1.0)))
        .collect();
    retract_to_sphere(&v)
}

/// Coordinates below this are treated as off the support when looking for
/// constraint violations.
const SUPPORT_TOL: f64 = 1e-9;

fn adaptive_increment(m: &AffinityMatrix, u: &[f64], ws: &mut Workspace) -> Option<f64> {
    let n = u.len();
    let mut mu = vec![0.0; n];
    m.mul_vec_with_adjacency(u, &mut mu, &mut ws.scratch);
    ws.matvecs += 1;
    let total: f64 = u.iter().sum();
    let mut acc = 0.0;
    let mut count = 0usize;
    for i in 0..n {
        let conflict = total - u[i] - ws.scratch[i];
        if u[i] > SUPPORT_TOL && conflict > SUPPORT_TOL {
            acc += (mu[i] / conflict).abs();
            count += 1;
        }
    }
    (count > 0).then(|| acc / count as f64)
}

/// Walks `order` keeping each vertex connected to all already kept; a
/// dropped vertex is the smaller-`u` end of a violating pair.
fn pairwise_connected_prefix(m: &AffinityMatrix, order: &[usize]) -> Vec<usize> {
    let mut kept: Vec<usize> = Vec::with_capacity(order.len());
    for &v in order {
        if kept.iter().all(|&k| m.is_connected(k, v)) {
            kept.push(v);
        }
    }
    kept
}

/// Like [`pairwise_connected_prefix`] over the whole support, truncated to
/// the densest prefix (the shortest one on ties). Returns the kept set and
/// the number of support vertices skipped for conflicts.
fn densest_prefix(m: &AffinityMatrix, order: &[usize]) -> (Vec<usize>, usize) {
    let mut kept: Vec<usize> = Vec::with_capacity(order.len());
    let mut total = 0.0;
    let (mut best_len, mut best) = (0, f64::NEG_INFINITY);
    let mut skipped = 0;
    for &v in order {
        if !kept.iter().all(|&k| m.is_connected(k, v)) {
            skipped += 1;
            continue;
        }
        total += m.diag()[v] + 2.0 * kept.iter().map(|&k| m.get(k, v)).sum::<f64>();
        kept.push(v);
        let density = total / kept.len() as f64;
        if density > best {
            best = density;
            best_len = kept.len();
        }
    }
    kept.truncate(best_len);
    (kept, skipped)
}

fn record(level: usize, d: f64, objective: f64, u: &[f64]) -> TraceRecord {
    TraceRecord {
        level,
        d,
        objective,
        norm: norm(u),
        min_entry: u.iter().copied().fold(f64::INFINITY, f64::min),
    }
}

/// Runs the full penalized ascent and rounds the result to a pairwise
/// connected vertex set.
pub fn solve(m: &AffinityMatrix, params: &SolverParams) -> Result<Solution> {
    params.check()?;
    m.validate()?;
    let n = m.n();
    if n == 0 {
        return Err(Error::Parameter("matrix has no vertices".into()));
    }
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut trace = Vec::new();
    let mut reseeds = 0;
    let relaxed = loop {
        let attempt = initial_point(n, &mut rng)
            .and_then(|u0| run_relaxation(m, params, u0, &mut rng, &mut trace));
        match attempt {
            Ok(r) => break r,
            Err(Error::DegenerateIterate) if reseeds == 0 => {
                reseeds += 1;
                trace.clear();
            }
            Err(Error::DegenerateIterate) => {
                return Err(Error::SolverFailure(
                    "iterate degenerated to zero twice".into(),
                ))
            }
            Err(e) => return Err(e),
        }
    };

    let u = relaxed.u;
    let support = u.iter().filter(|&&x| x > 0.0).count().max(1);
    let omega_rounded = relaxed.objective.round() as i64;
    let omega = (omega_rounded.max(1) as usize).min(support);
    let order = ranked(&u);

    let (mut kept, repaired) = match params.rounding {
        Rounding::Spectral => {
            let kept = pairwise_connected_prefix(m, &order[..omega]);
            let dropped = omega - kept.len();
            (kept, dropped)
        }
        Rounding::DensestPrefix => densest_prefix(m, &order[..support]),
    };
    kept.sort_unstable();
    let density = density_of(m, &kept)?;
    let feasible = is_clique(m, &kept);

    Ok(Solution {
        omega_hat: kept.len(),
        density,
        feasible,
        objective: relaxed.objective,
        selected: kept,
        u,
        stats: SolveStats {
            outer_iters: relaxed.outer,
            inner_iters: relaxed.inner,
            matvecs: relaxed.matvecs,
            final_d: relaxed.d,
            omega_rounded,
            repaired,
            reseeds,
            converged: relaxed.converged,
            elapsed: start.elapsed(),
        },
        trace,
    })
}
