//! `clipper`: solve, verify, and benchmark robust data association problems.
//!
//! Exit codes:
//! - 0: success
//! - 2: unreadable input (missing file, malformed file, bad command line)
//! - 3: validation failure (invalid matrix or parameters, size limits)
//! - 4: solver failure

mod header;
mod plot;

use std::fs::File;
use std::io::{self, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{ArgGroup, Args, Parser, Subcommand, ValueEnum};
use clipper_core::affinity::read_matrix;
use clipper_core::benchmark::{
    run_bunny_sweep, run_sparsity_sweep, synthetic_model, write_bunny_csv, write_sparsity_csv,
    BunnySpec, BunnySweep, SparsitySweep,
};
use clipper_core::ingest::{load_points, read_associations_csv, read_lines_csv, read_planes_csv};
use clipper_core::invariants::{
    affinity_lines_with, affinity_planes_with, affinity_points_with, all_to_all, BuildOptions,
};
use clipper_core::solver::{PenaltySchedule, Rounding};
use clipper_core::{
    exact_densest, exact_max_clique, solve, AffinityMatrix, AssociationSet, Error, ScoreKind,
    ScoringConfig, SolverParams,
};

use header::Header;

#[derive(Parser, Debug)]
#[command(
    name = "clipper",
    version,
    about = "Robust data association via densest consistent subgraphs"
)]
struct Cli {
    /// Worker threads for affinity construction and benchmark trials
    /// (default: all cores). Output never depends on this value.
    #[arg(long, global = true)]
    jobs: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Select the densest consistent set of associations.
    Solve(SolveArgs),
    /// Solve a small instance exactly.
    Oracle(OracleArgs),
    /// Run a synthetic benchmark sweep and write a CSV table.
    #[command(subcommand)]
    Bench(BenchCommand),
}

#[derive(Subcommand, Debug)]
enum BenchCommand {
    /// Clique-size error on random binary graphs across edge sparsity.
    Sparsity(SparsityArgs),
    /// Precision and recall of point-cloud registration across outlier ratios.
    Bunny(BunnyArgs),
}

/// Relaxation and rounding parameters shared by every solving command.
#[derive(Args, Debug, Clone)]
struct SolverArgs {
    /// Random seed.
    #[arg(long, env = "CLIPPER_SEED", default_value_t = 0)]
    seed: u64,
    /// Initial penalty.
    #[arg(long, default_value_t = SolverParams::default().d0)]
    d0: f64,
    /// Penalty growth between levels: `adaptive`, `tenth` (ceil(n/10)) or a fixed step.
    #[arg(long, default_value_t = SolverParams::default().schedule)]
    delta_d: PenaltySchedule,
    /// Inner convergence tolerance on the iterate.
    #[arg(long, default_value_t = SolverParams::default().tol_u)]
    tol_u: f64,
    /// Inner convergence tolerance on the relative objective change.
    #[arg(long, default_value_t = SolverParams::default().tol_f)]
    tol_f: f64,
    /// Iteration cap per penalty level.
    #[arg(long, default_value_t = SolverParams::default().max_inner_iters)]
    max_inner: usize,
    /// Cap on penalty levels.
    #[arg(long, default_value_t = SolverParams::default().max_outer_iters)]
    max_outer: usize,
    /// Backtracking shrink factor in (0, 1).
    #[arg(long, default_value_t = SolverParams::default().beta)]
    beta: f64,
    /// Smallest step length tried by the line search.
    #[arg(long, default_value_t = SolverParams::default().min_alpha)]
    min_alpha: f64,
    /// Rounding of the relaxed solution: `spectral` or `densest-prefix`.
    #[arg(long, default_value_t = SolverParams::default().rounding)]
    rounding: Rounding,
}

impl SolverArgs {
    fn params(&self) -> SolverParams {
        SolverParams {
            d0: self.d0,
            schedule: self.delta_d,
            tol_u: self.tol_u,
            tol_f: self.tol_f,
            max_inner_iters: self.max_inner,
            max_outer_iters: self.max_outer,
            beta: self.beta,
            min_alpha: self.min_alpha,
            seed: self.seed,
            trace: false,
            rounding: self.rounding,
        }
    }

    fn describe(&self, h: &mut Header) {
        h.opt("seed", self.seed);
        h.num("d0", self.d0);
        h.opt("delta-d", self.delta_d);
        h.num("tol-u", self.tol_u);
        h.num("tol-f", self.tol_f);
        h.opt("max-inner", self.max_inner);
        h.opt("max-outer", self.max_outer);
        h.num("beta", self.beta);
        h.num("min-alpha", self.min_alpha);
        h.opt("rounding", self.rounding);
    }
}

/// Output destination and reproducibility switches.
#[derive(Args, Debug, Clone)]
struct OutputArgs {
    /// Output file (default: stdout).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Omit wall-clock times from the output so reruns are byte-identical.
    #[arg(long)]
    no_timing: bool,
}

impl OutputArgs {
    fn describe(&self, h: &mut Header) {
        if let Some(out) = &self.out {
            h.opt("out", out.display());
        }
        h.flag("no-timing", self.no_timing);
    }
}

#[derive(Args, Debug)]
#[command(group(
    ArgGroup::new("input")
        .required(true)
        .args(["matrix", "points_a", "lines_a", "planes_a"])
))]
struct SolveArgs {
    /// Affinity matrix in the `n <count>` / `i j w` text format.
    #[arg(long)]
    matrix: Option<PathBuf>,
    /// First point cloud (`.ply` or `x,y,z` CSV).
    #[arg(long, requires = "points_b")]
    points_a: Option<PathBuf>,
    #[arg(long, requires = "points_a")]
    points_b: Option<PathBuf>,
    /// First line set (`px,py,pz,vx,vy,vz` CSV).
    #[arg(long, requires = "lines_b")]
    lines_a: Option<PathBuf>,
    #[arg(long, requires = "lines_a")]
    lines_b: Option<PathBuf>,
    /// First plane set (`nx,ny,nz,d` CSV).
    #[arg(long, requires = "planes_b")]
    planes_a: Option<PathBuf>,
    #[arg(long, requires = "planes_a")]
    planes_b: Option<PathBuf>,
    /// Putative associations: an `i,j[,inlier]` CSV, or `all` for every pair.
    #[arg(long, default_value = "all")]
    assoc: String,
    /// Consistency bound on the invariant residual.
    #[arg(long, default_value_t = 0.08)]
    epsilon: f64,
    /// Width of the weighted score.
    #[arg(long, default_value_t = 0.03)]
    sigma: f64,
    /// Scoring function: `weighted` or `binary`.
    #[arg(long, default_value_t = ScoreKind::Weighted)]
    kind: ScoreKind,
    /// Lift the guard on the number of associations scored pairwise.
    #[arg(long)]
    allow_large: bool,
    #[command(flatten)]
    solver: SolverArgs,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum OracleMode {
    /// Exhaustive densest pairwise-connected subset (n <= 20).
    Densest,
    /// Branch-and-bound maximum clique.
    Clique,
}

#[derive(Args, Debug)]
struct OracleArgs {
    /// Affinity matrix in the `n <count>` / `i j w` text format.
    #[arg(long)]
    matrix: PathBuf,
    #[arg(long, value_enum)]
    mode: OracleMode,
    /// Output file (default: stdout).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SparsityArgs {
    /// Vertices per graph.
    #[arg(long, default_value_t = 40)]
    n: usize,
    /// Comma-separated fractions of removed edges.
    #[arg(
        long,
        value_delimiter = ',',
        default_value = "0,0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9"
    )]
    grid: Vec<f64>,
    /// Trials per grid value.
    #[arg(long, default_value_t = 50)]
    trials: usize,
    /// SVG plot of the mean error per sparsity level.
    #[arg(long)]
    plot: Option<PathBuf>,
    #[command(flatten)]
    solver: SolverArgs,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Args, Debug)]
struct BunnyArgs {
    /// Comma-separated outlier ratios.
    #[arg(
        long,
        value_delimiter = ',',
        default_value = "0,0.7,0.8,0.9,0.95,0.97,0.99"
    )]
    or_grid: Vec<f64>,
    /// Trials per outlier ratio.
    #[arg(long, default_value_t = 50)]
    trials: usize,
    /// Model point cloud (`.ply` or CSV); a built-in synthetic surface otherwise.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Samples drawn from the synthetic surface when no model is given.
    #[arg(long, default_value_t = 5000)]
    model_points: usize,
    /// Points sampled from the model per trial.
    #[arg(long, default_value_t = BunnySpec::default().n_model_points)]
    n_points: usize,
    /// Half-width of the uniform per-coordinate noise.
    #[arg(long, default_value_t = BunnySpec::default().noise_halfwidth)]
    noise: f64,
    /// Clutter points added to the second view.
    #[arg(long, default_value_t = BunnySpec::default().n_clutter)]
    clutter: usize,
    /// Radius of the clutter ball.
    #[arg(long, default_value_t = BunnySpec::default().clutter_radius)]
    clutter_radius: f64,
    /// Putative associations per trial.
    #[arg(long, default_value_t = BunnySpec::default().n_assoc)]
    n_assoc: usize,
    #[arg(long, default_value_t = BunnySpec::default().epsilon)]
    epsilon: f64,
    #[arg(long, default_value_t = BunnySpec::default().sigma)]
    sigma: f64,
    #[arg(long, default_value_t = BunnySpec::default().kind)]
    kind: ScoreKind,
    /// SVG plot of precision and recall per outlier ratio.
    #[arg(long)]
    plot: Option<PathBuf>,
    #[command(flatten)]
    solver: SolverArgs,
    #[command(flatten)]
    output: OutputArgs,
}

/// A failed run: message for stderr and the process exit code.
#[derive(Debug)]
struct Failure {
    code: u8,
    msg: String,
}

impl Failure {
    fn new(code: u8, msg: impl Into<String>) -> Self {
        Failure {
            code,
            msg: msg.into(),
        }
    }

    /// Classifies a library error, naming `path` when the error came from
    /// reading it.
    fn from_core(e: Error, path: Option<&Path>) -> Self {
        let code = match &e {
            Error::Io(_) | Error::Parse { .. } => 2,
            Error::DegenerateIterate | Error::SolverFailure(_) => 4,
            _ => 3,
        };
        match path {
            Some(p) => Failure::new(code, format!("{}: {e}", p.display())),
            None => Failure::new(code, e.to_string()),
        }
    }
}

type CliResult<T> = Result<T, Failure>;

fn core<T>(r: clipper_core::Result<T>) -> CliResult<T> {
    r.map_err(|e| Failure::from_core(e, None))
}

fn reading<T>(path: &Path, r: clipper_core::Result<T>) -> CliResult<T> {
    r.map_err(|e| Failure::from_core(e, Some(path)))
}

fn open(path: &Path) -> CliResult<File> {
    File::open(path).map_err(|e| Failure::new(2, format!("{}: {e}", path.display())))
}

fn load_matrix(path: &Path) -> CliResult<AffinityMatrix> {
    let coo = reading(path, read_matrix(BufReader::new(open(path)?)))?;
    reading(path, coo.into_matrix())
}

/// Writes `text` to `out`, or to stdout when no path is given.
fn emit(out: Option<&Path>, text: &str) -> CliResult<()> {
    let result = match out {
        Some(p) => std::fs::write(p, text),
        None => io::stdout().lock().write_all(text.as_bytes()),
    };
    result.map_err(|e| {
        let target = out.map_or_else(|| "stdout".to_string(), |p| p.display().to_string());
        Failure::new(2, format!("{target}: {e}"))
    })
}

fn scoring(kind: ScoreKind, epsilon: f64, sigma: f64) -> CliResult<ScoringConfig> {
    core(match kind {
        ScoreKind::Weighted => ScoringConfig::weighted(epsilon, sigma),
        ScoreKind::Binary => ScoringConfig::binary(epsilon),
    })
}

fn load_assoc(spec: &str, n_a: usize, n_b: usize) -> CliResult<AssociationSet> {
    if spec == "all" {
        return core(all_to_all(n_a, n_b));
    }
    let path = Path::new(spec);
    reading(path, read_associations_csv(open(path)?))
}

/// The affinity matrix of a `solve` run, read directly or built from two
/// observation sets and their associations.
fn build_affinity(args: &SolveArgs, h: &mut Header) -> CliResult<AffinityMatrix> {
    if let Some(path) = &args.matrix {
        h.opt("matrix", path.display());
        return load_matrix(path);
    }
    let cfg = scoring(args.kind, args.epsilon, args.sigma)?;
    let opts = BuildOptions {
        allow_large: args.allow_large,
    };
    let describe_scoring = |h: &mut Header| {
        h.opt("assoc", &args.assoc);
        h.num("epsilon", args.epsilon);
        h.num("sigma", args.sigma);
        h.opt("kind", args.kind);
        h.flag("allow-large", args.allow_large);
    };
    if let (Some(a), Some(b)) = (&args.points_a, &args.points_b) {
        h.opt("points-a", a.display());
        h.opt("points-b", b.display());
        describe_scoring(h);
        open(a)?;
        open(b)?;
        let pa = reading(a, load_points(a))?;
        let pb = reading(b, load_points(b))?;
        let assoc = load_assoc(&args.assoc, pa.len(), pb.len())?;
        return core(affinity_points_with(&pa, &pb, &assoc, &cfg, &opts));
    }
    if let (Some(a), Some(b)) = (&args.lines_a, &args.lines_b) {
        h.opt("lines-a", a.display());
        h.opt("lines-b", b.display());
        describe_scoring(h);
        let la = reading(a, read_lines_csv(open(a)?))?;
        let lb = reading(b, read_lines_csv(open(b)?))?;
        let assoc = load_assoc(&args.assoc, la.len(), lb.len())?;
        return core(affinity_lines_with(&la, &lb, &assoc, &cfg, &opts));
    }
    if let (Some(a), Some(b)) = (&args.planes_a, &args.planes_b) {
        h.opt("planes-a", a.display());
        h.opt("planes-b", b.display());
        describe_scoring(h);
        let pa = reading(a, read_planes_csv(open(a)?))?;
        let pb = reading(b, read_planes_csv(open(b)?))?;
        let assoc = load_assoc(&args.assoc, pa.len(), pb.len())?;
        return core(affinity_planes_with(&pa, &pb, &assoc, &cfg, &opts));
    }
    Err(Failure::new(2, "no input given"))
}

fn cmd_solve(args: &SolveArgs) -> CliResult<()> {
    let mut h = Header::new(&["solve"]);
    let m = build_affinity(args, &mut h)?;
    args.solver.describe(&mut h);
    args.output.describe(&mut h);
    let params = args.solver.params();
    core(params.check())?;
    let sol = core(solve(&m, &params))?;
    let mut text = h.render();
    text.push_str(&sol.to_text(!args.output.no_timing));
    emit(args.output.out.as_deref(), &text)?;
    eprintln!(
        "omega={} density={} feasible={} ms={:.3}",
        sol.omega_hat,
        sol.density,
        sol.feasible,
        sol.stats.elapsed.as_secs_f64() * 1e3
    );
    Ok(())
}

fn cmd_oracle(args: &OracleArgs) -> CliResult<()> {
    let mut h = Header::new(&["oracle"]);
    h.opt("matrix", args.matrix.display());
    let mode = match args.mode {
        OracleMode::Densest => "densest",
        OracleMode::Clique => "clique",
    };
    h.opt("mode", mode);
    if let Some(out) = &args.out {
        h.opt("out", out.display());
    }
    let m = load_matrix(&args.matrix)?;
    let result = core(match args.mode {
        OracleMode::Densest => exact_densest(&m),
        OracleMode::Clique => exact_max_clique(&m),
    })?;
    let set: Vec<String> = result.best_set.iter().map(|i| i.to_string()).collect();
    let mut text = h.render();
    text.push_str(&format!(
        "mode {mode}\nbest_set {}\nsize {}\nbest_value {:?}\nnodes_explored {}\n",
        set.join(" "),
        result.best_set.len(),
        result.best_value,
        result.nodes_explored
    ));
    emit(args.out.as_deref(), &text)
}

fn grid_text(grid: &[f64]) -> String {
    grid.iter()
        .map(|g| format!("{g:?}"))
        .collect::<Vec<_>>()
        .join(",")
}

fn write_plot(path: &Path, svg: &str) -> CliResult<()> {
    std::fs::write(path, svg).map_err(|e| Failure::new(2, format!("{}: {e}", path.display())))
}

fn cmd_bench_sparsity(args: &SparsityArgs) -> CliResult<()> {
    let mut h = Header::new(&["bench", "sparsity"]);
    h.opt("n", args.n);
    h.opt("grid", grid_text(&args.grid));
    h.opt("trials", args.trials);
    if let Some(p) = &args.plot {
        h.opt("plot", p.display());
    }
    args.solver.describe(&mut h);
    args.output.describe(&mut h);
    let sweep = SparsitySweep {
        n: args.n,
        grid: args.grid.clone(),
        trials: args.trials,
        seed: args.solver.seed,
    };
    let rows = core(run_sparsity_sweep(&sweep, &args.solver.params()))?;
    let mut buf = h.render().into_bytes();
    core(write_sparsity_csv(&rows, !args.output.no_timing, &mut buf))?;
    emit(args.output.out.as_deref(), &String::from_utf8_lossy(&buf))?;
    if let Some(p) = &args.plot {
        let points = rows.iter().map(|r| (r.sparsity, r.mean_err)).collect();
        let svg = plot::line_chart(
            &format!("Clique size error, n = {}", args.n),
            "sparsity",
            "mean clique size error",
            &[plot::Series::new("mean error", points)],
        );
        write_plot(p, &svg)?;
    }
    let failures: usize = rows.iter().map(|r| r.failures).sum();
    eprintln!(
        "rows={} trials={} failures={failures}",
        rows.len(),
        args.trials
    );
    Ok(())
}

fn cmd_bench_bunny(args: &BunnyArgs) -> CliResult<()> {
    let mut h = Header::new(&["bench", "bunny"]);
    h.opt("or-grid", grid_text(&args.or_grid));
    h.opt("trials", args.trials);
    match &args.model {
        Some(p) => h.opt("model", p.display()),
        None => h.opt("model-points", args.model_points),
    }
    h.opt("n-points", args.n_points);
    h.num("noise", args.noise);
    h.opt("clutter", args.clutter);
    h.num("clutter-radius", args.clutter_radius);
    h.opt("n-assoc", args.n_assoc);
    h.num("epsilon", args.epsilon);
    h.num("sigma", args.sigma);
    h.opt("kind", args.kind);
    if let Some(p) = &args.plot {
        h.opt("plot", p.display());
    }
    args.solver.describe(&mut h);
    args.output.describe(&mut h);
    let model = match &args.model {
        Some(p) => {
            open(p)?;
            reading(p, load_points(p))?
        }
        None => synthetic_model(args.model_points),
    };
    if model.is_empty() {
        return Err(Failure::new(3, "model point cloud is empty"));
    }
    let sweep = BunnySweep {
        spec: BunnySpec {
            n_model_points: args.n_points,
            noise_halfwidth: args.noise,
            n_clutter: args.clutter,
            clutter_radius: args.clutter_radius,
            outlier_ratio: 0.0,
            n_assoc: args.n_assoc,
            epsilon: args.epsilon,
            sigma: args.sigma,
            kind: args.kind,
            trials: args.trials,
            seed: args.solver.seed,
        },
        grid: args.or_grid.clone(),
    };
    let rows = core(run_bunny_sweep(&sweep, &model, &args.solver.params()))?;
    let mut buf = h.render().into_bytes();
    core(write_bunny_csv(&rows, !args.output.no_timing, &mut buf))?;
    emit(args.output.out.as_deref(), &String::from_utf8_lossy(&buf))?;
    if let Some(p) = &args.plot {
        let precision = rows
            .iter()
            .filter_map(|r| r.mean_p.map(|mp| (r.outlier_ratio, mp)))
            .collect();
        let recall = rows.iter().map(|r| (r.outlier_ratio, r.mean_r)).collect();
        let svg = plot::line_chart(
            "Registration association quality",
            "outlier ratio",
            "mean precision / recall",
            &[
                plot::Series::new("precision", precision),
                plot::Series::new("recall", recall),
            ],
        );
        write_plot(p, &svg)?;
    }
    let failures: usize = rows.iter().map(|r| r.failures).sum();
    eprintln!(
        "rows={} trials={} failures={failures}",
        rows.len(),
        args.trials
    );
    Ok(())
}

fn run(cli: &Cli) -> CliResult<()> {
    match &cli.command {
        Command::Solve(a) => cmd_solve(a),
        Command::Oracle(a) => cmd_oracle(a),
        Command::Bench(BenchCommand::Sparsity(a)) => cmd_bench_sparsity(a),
        Command::Bench(BenchCommand::Bunny(a)) => cmd_bench_bunny(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            eprintln!("error: --jobs must be positive");
            return ExitCode::from(3);
        }
        pool = pool.num_threads(jobs);
    }
    let pool = match pool.build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: cannot start worker threads: {e}");
            return ExitCode::from(4);
        }
    };
    match pool.install(|| run(&cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.msg);
            ExitCode::from(f.code)
        }
    }
}
