use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use iqvi_core::analysis::{certify_with, EstimateSettings, Report};
use iqvi_core::config::{self, LoadedProblem};
use iqvi_core::integrate::fmt_real;
use iqvi_core::*;

#[derive(Parser)]
#[command(name = "iqvi", version, about = "Finite-time and fixed-time projection solvers for inverse quasi-variational inequalities")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Stability certificate and settling-time bounds for a problem.
    Check(CheckArgs),
    /// Forward-Euler (or reference Runge-Kutta) trajectory of a flow.
    Solve(SolveArgs),
    /// Fixed-time flow against the nominal projection method on the 2-D benchmark.
    BenchExample1(BenchArgs),
    /// Road-pricing iteration on a traffic network.
    Traffic(TrafficArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum System {
    Nominal,
    Finite,
    Fixed,
}

#[derive(Args, Clone)]
struct FlowArgs {
    /// Flow variant.
    #[arg(long, value_enum, default_value = "fixed")]
    system: System,
    /// Gain of the nominal and finite-time flows.
    #[arg(long, default_value_t = 1.0)]
    sigma: f64,
    /// Exponent of the finite-time flow (> 2).
    #[arg(long, default_value_t = 3.0)]
    gamma: f64,
    /// Fixed-time gain on the sublinear term (command default when omitted).
    #[arg(long)]
    a1: Option<f64>,
    /// Fixed-time gain on the superlinear term.
    #[arg(long)]
    a2: Option<f64>,
    /// Sublinear exponent, in (0, 1).
    #[arg(long)]
    r1: Option<f64>,
    /// Superlinear exponent, > 1.
    #[arg(long)]
    r2: Option<f64>,
}

impl FlowArgs {
    fn params(&self, fixed_defaults: [f64; 4]) -> Result<FlowParams> {
        let fp = match self.system {
            System::Nominal => FlowParams::nominal(self.sigma)?,
            System::Finite => FlowParams::finite_time(self.sigma, self.gamma)?,
            System::Fixed => FlowParams::fixed_time(
                self.a1.unwrap_or(fixed_defaults[0]),
                self.a2.unwrap_or(fixed_defaults[1]),
                self.r1.unwrap_or(fixed_defaults[2]),
                self.r2.unwrap_or(fixed_defaults[3]),
            )?,
        };
        Ok(fp)
    }
}

const EXAMPLE1_GAINS: [f64; 4] = [20.0, 20.0, 0.95, 1.5];
const EXAMPLE1_STEP: f64 = 0.00146;
const PRICING_GAINS: [f64; 4] = [0.75, 0.75, 0.65, 1.5];

#[derive(Args)]
struct CheckArgs {
    /// Problem file (TOML); the 2-D benchmark when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    flow: FlowArgs,
    /// Use sampled constants instead of the declared ones.
    #[arg(long)]
    estimated: bool,
    /// Initial distance for the finite-time bound.
    #[arg(long, default_value_t = 1.0)]
    d0: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory for certificate.json.
    #[arg(long, default_value = "iqvi-out")]
    out: PathBuf,
}

#[derive(Args)]
#[group(id = "steps", multiple = false)]
struct StepArgs {
    /// Fixed step length.
    #[arg(long, group = "steps")]
    lambda: Option<f64>,
    /// Harmonic steps c/n.
    #[arg(long, group = "steps")]
    harmonic: Option<f64>,
}

impl StepArgs {
    fn schedule(&self, default_lambda: f64) -> Result<StepSchedule> {
        Ok(match (self.lambda, self.harmonic) {
            (_, Some(c)) => StepSchedule::harmonic(c)?,
            (Some(l), None) => StepSchedule::fixed(l)?,
            (None, None) => StepSchedule::fixed(default_lambda)?,
        })
    }
}

#[derive(Args)]
struct SolveArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    flow: FlowArgs,
    #[command(flatten)]
    steps: StepArgs,
    #[arg(long, default_value_t = 100)]
    iters: usize,
    /// Stop once the residual norm is at or below this value.
    #[arg(long)]
    tol: Option<f64>,
    /// Starting point, comma separated; defaults to the file's u0.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    u0: Option<Vec<f64>>,
    /// Integrate the continuous flow with the reference Runge-Kutta scheme.
    #[arg(long)]
    continuous: bool,
    #[arg(long, default_value_t = 1e-3)]
    dt: f64,
    #[arg(long, default_value_t = 5.0)]
    tend: f64,
    #[arg(long, default_value = "iqvi-out")]
    out: PathBuf,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = EXAMPLE1_STEP)]
    lambda: f64,
    #[arg(long, default_value_t = 100)]
    iters: usize,
    #[arg(long, default_value = "iqvi-out")]
    out: PathBuf,
}

#[derive(Args)]
struct TrafficArgs {
    /// Links file; the shipped synthetic network when omitted.
    #[arg(long, requires = "od")]
    links: Option<PathBuf>,
    /// OD demand file.
    #[arg(long, requires = "links")]
    od: Option<PathBuf>,
    #[command(flatten)]
    flow: FlowArgs,
    #[command(flatten)]
    steps: StepArgs,
    #[arg(long, default_value_t = 0.5)]
    alpha: f64,
    #[arg(long, default_value_t = 200)]
    iters: usize,
    /// Stop once R_n is at or below this value.
    #[arg(long)]
    tol: Option<f64>,
    /// Relative-gap tolerance of the inner equilibrium.
    #[arg(long, default_value_t = 1e-8)]
    gap_tol: f64,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    u0: Option<Vec<f64>>,
    #[arg(long, default_value = "iqvi-out")]
    out: PathBuf,
}

fn load(config: &Option<PathBuf>) -> Result<LoadedProblem> {
    match config {
        Some(path) => Ok(config::load_problem(path)?),
        None => Ok(config::example1()),
    }
}

fn create_out(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("cannot create output directory {}", dir.display()))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).with_context(|| format!("cannot write {}", path.display()))
}

fn cmd_check(args: CheckArgs) -> Result<()> {
    let loaded = load(&args.config)?;
    let fp = args.flow.params(EXAMPLE1_GAINS)?;
    let settings = EstimateSettings { seed: args.seed, ..EstimateSettings::default() };
    let cert = certify_with(&loaded.problem, !args.estimated, &settings)?;
    let (fixed_time, finite_time) = if cert.condition_beta {
        match fp {
            FlowParams::FixedTime { .. } => (Some(fixed_time_bound(&cert, &fp)?), None),
            FlowParams::FiniteTime { .. } => (None, Some(finite_time_bound(&cert, &fp, args.d0)?)),
            FlowParams::Nominal { .. } => (None, None),
        }
    } else {
        (None, None)
    };
    let report = Report { certificate: cert, fixed_time, finite_time };
    print!("{}", report.to_key_value());
    create_out(&args.out)?;
    let path = args.out.join("certificate.json");
    write_file(&path, serde_json::to_string_pretty(&report)?.as_bytes())?;
    println!("written: {}", path.display());
    Ok(())
}

fn starting_point(given: &Option<Vec<f64>>, loaded: &LoadedProblem) -> Result<Vector> {
    match (given, &loaded.u0) {
        (Some(v), _) => Ok(Vector::from_column_slice(v)),
        (None, Some(u0)) => Ok(u0.clone()),
        (None, None) => bail!("no starting point: pass --u0 or set u0 in the problem file"),
    }
}

fn cmd_solve(args: SolveArgs) -> Result<()> {
    let loaded = load(&args.config)?;
    let fp = args.flow.params(EXAMPLE1_GAINS)?;
    let u0 = starting_point(&args.u0, &loaded)?;
    let traj = if args.continuous {
        integrate_reference(&loaded.problem, &fp, &u0, args.dt, args.tend)?
    } else {
        let mut stop = StopCriteria::iterations(args.iters);
        if let Some(tol) = args.tol {
            stop = stop.with_residual_tol(tol);
        }
        euler(&loaded.problem, &fp, &u0, &args.steps.schedule(EXAMPLE1_STEP)?, &stop)?
    };
    create_out(&args.out)?;
    let path = args.out.join("trajectory.csv");
    let mut buf = Vec::new();
    traj.write_csv(&mut buf)?;
    write_file(&path, &buf)?;
    let last = traj.last();
    println!("system: {}", fp.label());
    println!("iterations: {}", last.iter);
    println!("time: {}", last.time);
    println!("final_state: {}", join(last.state.iter()));
    println!("final_residual: {:e}", last.residual_norm);
    if let Some(e) = last.error_norm {
        println!("final_error: {e:e}");
    }
    println!("written: {}", path.display());
    Ok(())
}

fn join<'a>(xs: impl Iterator<Item = &'a f64>) -> String {
    xs.map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

fn cmd_bench_example1(args: BenchArgs) -> Result<()> {
    let loaded = load(&args.config)?;
    if loaded.problem.known_solution().is_none() {
        bail!("bench-example1 needs a problem with known_solution");
    }
    let u0 = starting_point(&None, &loaded)?;
    let sched = StepSchedule::fixed(args.lambda)?;
    let stop = StopCriteria::iterations(args.iters);
    let fixed = euler(&loaded.problem, &FlowParams::fixed_time(20.0, 20.0, 0.95, 1.5)?, &u0, &sched, &stop)?;
    let nominal = euler(&loaded.problem, &FlowParams::nominal(1.0)?, &u0, &sched, &stop)?;
    let mut csv = String::from("iter,fixed_time_error,nominal_error\n");
    for (a, b) in fixed.records.iter().zip(&nominal.records) {
        let (ea, eb) = (a.error_norm.unwrap_or(f64::NAN), b.error_norm.unwrap_or(f64::NAN));
        csv.push_str(&format!("{},{},{}\n", a.iter, fmt_real(ea), fmt_real(eb)));
    }
    create_out(&args.out)?;
    let path = args.out.join("example1_comparison.csv");
    write_file(&path, csv.as_bytes())?;
    let fe = fixed.last().error_norm.unwrap_or(f64::NAN);
    let ne = nominal.last().error_norm.unwrap_or(f64::NAN);
    println!("iterations: {}", fixed.last().iter);
    println!("fixed_time_error: {fe:e}");
    println!("nominal_error: {ne:e}");
    println!("ratio: {:e}", ne / fe);
    println!("written: {}", path.display());
    Ok(())
}

fn cmd_traffic(args: TrafficArgs) -> Result<()> {
    let (net, od) = match (&args.links, &args.od) {
        (Some(l), Some(o)) => {
            let net = TrafficNetwork::from_csv_path(l)?;
            let od = ODMatrix::from_csv_path(&net, o)?;
            (net, od)
        }
        _ => {
            let net = TrafficNetwork::synthetic();
            let od = ODMatrix::synthetic(&net);
            (net, od)
        }
    };
    let settings = UeSettings { gap_tol: args.gap_tol, ..UeSettings::default() };
    let op = RoadPricingOperator::new(net, od, settings)?;
    let fp = args.flow.params(PRICING_GAINS)?;
    let u0 = match &args.u0 {
        Some(v) => Vector::from_column_slice(v),
        None => Vector::zeros(op.dim()),
    };
    let mut stop = StopCriteria::iterations(args.iters);
    if let Some(tol) = args.tol {
        stop = stop.with_residual_tol(tol);
    }
    let sched = match (args.steps.lambda, args.steps.harmonic) {
        (None, None) => StepSchedule::harmonic(4.0)?,
        _ => args.steps.schedule(0.0)?,
    };
    let run = solve_road_pricing(&op, &fp, &sched, args.alpha, &u0, &stop)?;

    create_out(&args.out)?;
    let csv_path = args.out.join("traffic_trajectory.csv");
    let mut buf = Vec::new();
    run.write_csv(&mut buf)?;
    write_file(&csv_path, &buf)?;

    let last = run.trajectory.last();
    let flows = run.flows.last().expect("at least one record");
    let r_n = *run.step_residuals.last().expect("at least one record");
    let (lo, hi) = op.bounds(&last.state);
    let summary = serde_json::json!({
        "iterations": last.iter,
        "tolls": last.state.as_slice(),
        "tolled_flows": flows.as_slice(),
        "lower_bounds": lo.as_slice(),
        "upper_bounds": hi.as_slice(),
        "R_n": r_n,
        "residual_norm": last.residual_norm,
        "converged": run.converged,
        "equilibrium": run.final_equilibrium,
    });
    let json_path = args.out.join("final_equilibrium.json");
    write_file(&json_path, serde_json::to_string_pretty(&summary)?.as_bytes())?;

    println!("iterations: {}", last.iter);
    println!("tolls: {}", join(last.state.iter()));
    println!("flows: {}", join(flows.iter()));
    println!("R_n: {r_n:e}");
    println!("converged: {}", run.converged);
    println!("written: {}", csv_path.display());
    println!("written: {}", json_path.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Check(a) => cmd_check(a),
        Command::Solve(a) => cmd_solve(a),
        Command::BenchExample1(a) => cmd_bench_example1(a),
        Command::Traffic(a) => cmd_traffic(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
