//! Command-line front end. Exit codes: 0 success, 2 usage, 3 I/O, 4 solver
//! abort.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use disentangler::generate::{gen_planted, gen_random_with, random_orthogonal, Distribution, PlantedSpec, Rng};
use disentangler::io::{
    rank_history_csv, read_matrix, read_tensor, spectrum_csv, trace_json_lines, write_matrix,
    write_tensor,
};
use disentangler::linalg::{expm_skew, SkewParam};
use disentangler::objective::{objective_from_spectrum, spectrum};
use disentangler::rank::{binary_search_rank, DEFAULT_MAX_PROBES};
use disentangler::solvers::{
    alternating, hybrid, rcg, rtrn, Method, SolveResult, SolverOptions, Stage,
};
use disentangler::{Dims, Disentangler, Error, Flattened, ObjectivePhi, Tensor4};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Io(String),
    #[error("{0}")]
    Solver(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Io(_) => 3,
            CliError::Solver(_) => 4,
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let msg = e.to_string();
        match e {
            Error::Io(_) | Error::Format(_) => CliError::Io(msg),
            Error::SolverAbort(_) | Error::Decomposition(_) | Error::NonFinite(_) => {
                CliError::Solver(msg)
            }
            Error::Shape { .. }
            | Error::InvalidArgument(_)
            | Error::Domain(_)
            | Error::UnsupportedOrientation(_) => CliError::Usage(msg),
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "disentangle", version, about = "Optimize orthogonal disentanglers for 4-way tensors")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a random unit-norm tensor.
    GenRandom(GenRandomArgs),
    /// Write a tensor with a known rank-k disentangler.
    GenPlanted(GenPlantedArgs),
    /// Optimize a disentangler for a tensor.
    Disentangle(DisentangleArgs),
    /// Find the smallest rank meeting a truncation tolerance.
    RankSearch(RankSearchArgs),
    /// Print the singular values of the disentangled unfolding.
    Spectrum(SpectrumArgs),
    /// Evaluate the objective on a 2-D slice of skew-symmetric coordinates.
    Landscape(LandscapeArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    Alt,
    Rcg,
    Rtrn,
    Hybrid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ObjectiveArg {
    Trunc,
    Vn,
    Renyi,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DistArg {
    Gauss,
    Uniform,
}

impl From<DistArg> for Distribution {
    fn from(d: DistArg) -> Self {
        match d {
            DistArg::Gauss => Distribution::Gaussian,
            DistArg::Uniform => Distribution::Uniform,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum InitArg {
    Identity,
    Random,
}

#[derive(Debug, Args)]
pub struct GenRandomArgs {
    /// Leg dimensions `l,r,b,c`.
    #[arg(long, value_parser = parse_dims)]
    pub dims: Dims,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = DistArg::Gauss)]
    pub dist: DistArg,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct GenPlantedArgs {
    #[arg(long, value_parser = parse_dims)]
    pub dims: Dims,
    #[arg(long)]
    pub k: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the planted disentangler as a matrix file.
    #[arg(long)]
    pub q_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ObjectiveArgs {
    #[arg(long, value_enum, default_value_t = ObjectiveArg::Trunc)]
    pub objective: ObjectiveArg,
    /// Truncation rank for `trunc` and for alternating stages.
    #[arg(long)]
    pub k: Option<usize>,
    /// Renyi order in (0, 1).
    #[arg(long, default_value_t = 0.5)]
    pub alpha: f64,
}

#[derive(Debug, Args)]
pub struct SolverArgs {
    #[arg(long)]
    pub max_iter: Option<usize>,
    #[arg(long)]
    pub grad_tol: Option<f64>,
    #[arg(long)]
    pub eta_reg: Option<f64>,
    #[arg(long)]
    pub inner_cg_max: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Starting disentangler: the identity or a seeded random rotation.
    #[arg(long, value_enum, default_value_t = InitArg::Identity)]
    pub init: InitArg,
}

#[derive(Debug, Args)]
pub struct DisentangleArgs {
    /// Tensor file (TDT1).
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, value_enum, default_value_t = MethodArg::Rcg)]
    pub method: MethodArg,
    #[command(flatten)]
    pub objective: ObjectiveArgs,
    #[command(flatten)]
    pub solver: SolverArgs,
    /// Stages for `--method hybrid`, e.g. `alt:20,rcg:3980`.
    #[arg(long, default_value = "alt:20,rcg:3980")]
    pub schedule: String,
    /// Output disentangler (TDM1).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Iteration trace (JSON lines).
    #[arg(long)]
    pub trace: Option<PathBuf>,
    /// Final spectrum (CSV).
    #[arg(long)]
    pub spectrum: Option<PathBuf>,
    /// Write wall-clock times into the trace; without it they are null.
    #[arg(long)]
    pub timing: bool,
}

#[derive(Debug, Args)]
pub struct RankSearchArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Truncation tolerance relative to the unit-norm tensor.
    #[arg(long)]
    pub eps: f64,
    /// Solver used for each rank probe.
    #[arg(long, value_enum, default_value_t = MethodArg::Rcg)]
    pub method: MethodArg,
    #[command(flatten)]
    pub solver: SolverArgs,
    #[arg(long, default_value_t = DEFAULT_MAX_PROBES)]
    pub max_probes: usize,
    /// Search history (CSV).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Disentangler for the selected rank (TDM1).
    #[arg(long)]
    pub q_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SpectrumArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Disentangler (TDM1); the identity when omitted.
    #[arg(long)]
    pub q: Option<PathBuf>,
    /// Output CSV; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct LandscapeArgs {
    /// Tensor file; when omitted a tensor is generated from `--dims`.
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long, value_parser = parse_dims, default_value = "4,4,4,4")]
    pub dims: Dims,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = DistArg::Uniform)]
    pub dist: DistArg,
    #[command(flatten)]
    pub objective: ObjectiveArgs,
    /// Positions in the strictly-lower-triangular coordinate vector.
    #[arg(long, default_value_t = 0)]
    pub i1: usize,
    #[arg(long, default_value_t = 1)]
    pub i2: usize,
    #[arg(long, default_value_t = 101)]
    pub steps: usize,
    /// Half-width of the square grid; defaults to 2 pi.
    #[arg(long, default_value_t = std::f64::consts::TAU)]
    pub bound: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn parse_dims(s: &str) -> Result<Dims, String> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    if parts.len() != 4 {
        return Err(format!("expected four comma-separated sizes, got `{s}`"));
    }
    let mut v = [0usize; 4];
    for (slot, p) in v.iter_mut().zip(&parts) {
        *slot = p.parse().map_err(|_| format!("`{p}` is not a positive integer"))?;
    }
    Dims::new(v[0], v[1], v[2], v[3]).map_err(|e| e.to_string())
}

/// Parses `method:iters` pairs separated by commas.
pub fn parse_schedule(s: &str) -> Result<Vec<Stage>, String> {
    let stages: Result<Vec<Stage>, String> = s
        .split(',')
        .map(|part| {
            let (m, n) = part
                .trim()
                .split_once(':')
                .ok_or_else(|| format!("stage `{part}` is not `method:iters`"))?;
            let method: Method = m.parse().map_err(|e: Error| e.to_string())?;
            let iters = n
                .parse()
                .map_err(|_| format!("`{n}` is not an iteration count"))?;
            Ok(Stage::new(method, iters))
        })
        .collect();
    let stages = stages?;
    if stages.is_empty() {
        return Err("empty schedule".into());
    }
    Ok(stages)
}

fn build_phi(args: &ObjectiveArgs, m: usize) -> CliResult<ObjectivePhi> {
    let phi = match args.objective {
        ObjectiveArg::Trunc => {
            let k = args
                .k
                .ok_or_else(|| CliError::Usage("--objective trunc needs --k".into()))?;
            ObjectivePhi::TruncationRank(k)
        }
        ObjectiveArg::Vn => ObjectivePhi::VonNeumann,
        ObjectiveArg::Renyi => ObjectivePhi::Renyi(args.alpha),
    };
    phi.validate(m)?;
    Ok(phi)
}

fn solver_options(method: Method, args: &SolverArgs) -> CliResult<SolverOptions> {
    let mut o = SolverOptions::for_method(method);
    if let Some(v) = args.max_iter {
        o.max_iter = v;
    }
    if let Some(v) = args.grad_tol {
        o.grad_tol = v;
    }
    if let Some(v) = args.eta_reg {
        o.eta_reg = v;
    }
    if let Some(v) = args.inner_cg_max {
        o.inner_cg_max = v;
    }
    o.seed = args.seed;
    o.validate()?;
    Ok(o)
}

fn initial_q(n: usize, args: &SolverArgs) -> CliResult<Disentangler> {
    Ok(match args.init {
        InitArg::Identity => Disentangler::identity(n),
        InitArg::Random => Disentangler::new(random_orthogonal(n, &mut Rng::new(args.seed)))?,
    })
}

fn io_context(path: &Path, e: Error) -> CliError {
    match e {
        Error::Io(_) | Error::Format(_) => CliError::Io(format!("{}: {e}", path.display())),
        other => other.into(),
    }
}

fn load_tensor(path: &Path) -> CliResult<Tensor4> {
    read_tensor(path).map_err(|e| io_context(path, e))
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    fs::write(path, text).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn save_matrix(path: &Path, m: &disentangler::Matrix) -> CliResult<()> {
    write_matrix(path, m).map_err(|e| io_context(path, e))
}

pub fn run(cli: Cli) -> CliResult<String> {
    match cli.command {
        Command::GenRandom(a) => run_gen_random(&a),
        Command::GenPlanted(a) => run_gen_planted(&a),
        Command::Disentangle(a) => run_disentangle(&a),
        Command::RankSearch(a) => run_rank_search(&a),
        Command::Spectrum(a) => run_spectrum(&a),
        Command::Landscape(a) => run_landscape(&a),
    }
}

pub fn run_gen_random(a: &GenRandomArgs) -> CliResult<String> {
    let t = gen_random_with(a.dims, a.seed, a.dist.into());
    write_tensor(&a.out, &t).map_err(|e| io_context(&a.out, e))?;
    Ok(format!("wrote {} tensor to {}\n", a.dims, a.out.display()))
}

pub fn run_gen_planted(a: &GenPlantedArgs) -> CliResult<String> {
    let (t, q) = gen_planted(&PlantedSpec {
        dims: a.dims,
        k: a.k,
        seed: a.seed,
    })?;
    write_tensor(&a.out, &t).map_err(|e| io_context(&a.out, e))?;
    if let Some(p) = &a.q_out {
        save_matrix(p, q.matrix())?;
    }
    Ok(format!(
        "wrote {} tensor with planted rank {} to {}\n",
        a.dims,
        a.k,
        a.out.display()
    ))
}

fn run_solver(
    method: MethodArg,
    x: &Flattened,
    q0: &Disentangler,
    phi: &ObjectivePhi,
    schedule: &str,
    solver: &SolverArgs,
) -> CliResult<SolveResult> {
    let result = match method {
        MethodArg::Alt => {
            let k = phi.rank().ok_or_else(|| {
                CliError::Usage("--method alt needs --objective trunc with --k".into())
            })?;
            alternating(x, q0, k, &solver_options(Method::Alternating, solver)?)?
        }
        MethodArg::Rcg => rcg(x, q0, phi, &solver_options(Method::Rcg, solver)?)?,
        MethodArg::Rtrn => rtrn(x, q0, phi, &solver_options(Method::Rtrn, solver)?)?,
        MethodArg::Hybrid => {
            let stages = parse_schedule(schedule).map_err(CliError::Usage)?;
            let mut opts = solver_options(Method::Rcg, solver)?;
            // Stage lengths come from the schedule.
            opts.max_iter = 0;
            hybrid(x, q0, phi, &stages, &opts)?
        }
    };
    Ok(result)
}

pub fn run_disentangle(a: &DisentangleArgs) -> CliResult<String> {
    let t = load_tensor(&a.input)?;
    let x = Flattened::from_tensor(&t);
    let phi = build_phi(&a.objective, t.dims().m())?;
    let q0 = initial_q(t.dims().n(), &a.solver)?;
    let result = run_solver(a.method, &x, &q0, &phi, &a.schedule, &a.solver)?;

    if let Some(p) = &a.out {
        save_matrix(p, result.q_star.matrix())?;
    }
    if let Some(p) = &a.trace {
        write_text(p, &trace_json_lines(&result.trace, a.timing))?;
    }
    let sp = spectrum(result.q_star.matrix(), &x.normalized())?;
    if let Some(p) = &a.spectrum {
        write_text(p, &spectrum_csv(&sp.values))?;
    }
    Ok(format!(
        "objective {:e} after {} iterations ({})\n",
        result.final_objective,
        result.trace.iterations(),
        result.trace.termination
    ))
}

pub fn run_rank_search(a: &RankSearchArgs) -> CliResult<String> {
    let t = load_tensor(&a.input)?;
    let x = Flattened::from_tensor(&t);
    let method = match a.method {
        MethodArg::Alt => Method::Alternating,
        MethodArg::Rcg => Method::Rcg,
        MethodArg::Rtrn => Method::Rtrn,
        MethodArg::Hybrid => {
            return Err(CliError::Usage(
                "rank probes take a single method: alt, rcg or rtrn".into(),
            ))
        }
    };
    let opts = solver_options(method, &a.solver)?;
    let q0 = initial_q(t.dims().n(), &a.solver)?;
    let out = binary_search_rank(&x, &q0, a.eps, method, &opts, a.max_probes)?;
    if let Some(p) = &a.out {
        write_text(p, &rank_history_csv(&out.state.history))?;
    }
    if let Some(p) = &a.q_out {
        save_matrix(p, out.q.matrix())?;
    }
    let ck = spectrum(out.q.matrix(), &x.normalized())?.tail(out.k_opt);
    let mut msg = format!("k_opt {} with c_k {:e}\n", out.k_opt, ck);
    if out.state.initial_failed {
        msg.push_str("warning: no rank met the tolerance in the initial bracket\n");
    }
    Ok(msg)
}

pub fn run_spectrum(a: &SpectrumArgs) -> CliResult<String> {
    let t = load_tensor(&a.input)?;
    let x = Flattened::from_tensor(&t).normalized();
    let q = match &a.q {
        Some(p) => {
            let m = read_matrix(p).map_err(|e| io_context(p, e))?;
            Disentangler::new(m)?
        }
        None => Disentangler::identity(t.dims().n()),
    };
    let csv = spectrum_csv(&spectrum(q.matrix(), &x)?.values);
    match &a.out {
        Some(p) => {
            write_text(p, &csv)?;
            Ok(String::new())
        }
        None => Ok(csv),
    }
}

/// Objective on the grid `s1, s2 in [-bound, bound]` with every other skew
/// coordinate zero and `Q = exp(B(s))`. Rows run over `s1`, then `s2`.
pub fn landscape_grid(
    x: &Flattened,
    phi: &ObjectivePhi,
    i1: usize,
    i2: usize,
    steps: usize,
    bound: f64,
) -> CliResult<Vec<(f64, f64, f64)>> {
    let n = x.dims().n();
    let len = n * (n - 1) / 2;
    if i1 == i2 || i1 >= len || i2 >= len {
        return Err(CliError::Usage(format!(
            "need two distinct coordinates below {len}, got {i1} and {i2}"
        )));
    }
    if steps < 2 || !(bound > 0.0 && bound.is_finite()) {
        return Err(CliError::Usage("need at least 2 steps and a positive bound".into()));
    }
    phi.validate(x.dims().m())?;
    let x = x.normalized();
    let coord = |i: usize| -bound + 2.0 * bound * i as f64 / (steps - 1) as f64;
    let mut out = Vec::with_capacity(steps * steps);
    let mut p = SkewParam::zeros(n);
    for a in 0..steps {
        for b in 0..steps {
            let (s1, s2) = (coord(a), coord(b));
            p.values_mut()[i1] = s1;
            p.values_mut()[i2] = s2;
            let q = expm_skew(&p);
            let f = objective_from_spectrum(&spectrum(&q, &x)?.values, phi);
            out.push((s1, s2, f));
        }
    }
    Ok(out)
}

pub fn run_landscape(a: &LandscapeArgs) -> CliResult<String> {
    let t = match &a.input {
        Some(p) => load_tensor(p)?,
        None => gen_random_with(a.dims, a.seed, a.dist.into()),
    };
    let x = Flattened::from_tensor(&t);
    let phi = build_phi(&a.objective, t.dims().m())?;
    let grid = landscape_grid(&x, &phi, a.i1, a.i2, a.steps, a.bound)?;
    let mut csv = String::from("s1,s2,f\n");
    for (s1, s2, f) in grid {
        writeln!(csv, "{s1:e},{s2:e},{f:e}").expect("writing to a String");
    }
    match &a.out {
        Some(p) => {
            write_text(p, &csv)?;
            Ok(String::new())
        }
        None => Ok(csv),
    }
}
