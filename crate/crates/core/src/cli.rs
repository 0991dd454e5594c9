//! The `nablavar` command-line tool.
//!
//! Exit codes: 0 success, 1 domain or input error, 2 usage error,
//! 3 property-suite failure.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::PathBuf;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::error::{Error, Result};
use crate::io::{
    grid_csv_string, load_scale, read_grid_csv, solution_csv_string, to_json_pretty, ElReportJson,
    LatticeInfo, ProblemSpec, SolveSummary,
};
use crate::nabla::{antiderivative, mixed_operator};
use crate::oracle::run_suite;
use crate::solver::{
    brute_force_min, lattice_gap_bound, solve_direct, solve_el_newton, DirectOptions, NewtonOptions, ValueGrid,
};
use crate::timescale::{Family, TimeScale};

pub const EXIT_OK: i32 = 0;
pub const EXIT_DOMAIN: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_SUITE: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "nablavar", version, about = "Calculus of variations on finite time scales with nabla derivatives")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Time scale utilities
    Scale {
        #[command(subcommand)]
        action: ScaleAction,
    },
    /// Mixed operator y^{rho^k nabla^i} of a grid function
    Diff(DiffArgs),
    /// Cumulative nabla integral of a grid function
    Integrate(IntegrateArgs),
    /// Solve a variational problem
    Solve(SolveArgs),
    /// Euler-Lagrange residual of a given function
    Check(CheckArgs),
    /// Randomised identity and lemma checks
    Suite(SuiteArgs),
}

#[derive(Debug, Subcommand)]
enum ScaleAction {
    /// Print index, t, rho, sigma, nu as CSV
    Inspect {
        /// Scale JSON file or inline JSON
        scale: String,
    },
}

#[derive(Debug, Args)]
struct DiffArgs {
    /// Scale JSON file or inline JSON
    #[arg(long)]
    scale: String,
    /// Number of nabla derivatives
    #[arg(long, default_value_t = 1)]
    order: usize,
    /// Number of rho compositions, applied first
    #[arg(long, default_value_t = 0)]
    rho: usize,
    /// CSV with columns t,value
    input: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct IntegrateArgs {
    #[arg(long)]
    scale: String,
    #[arg(long)]
    from: f64,
    #[arg(long)]
    to: f64,
    input: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum MethodArg {
    Direct,
    Newton,
    Brute,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Sense {
    Min,
    Max,
}

#[derive(Debug, Args)]
struct SolveArgs {
    /// Problem JSON
    problem: PathBuf,
    #[arg(long, value_enum, default_value_t = MethodArg::Direct)]
    method: MethodArg,
    /// Seeds a perturbation of the direct solver's starting point
    #[arg(long, env = "NABLAVAR_SEED")]
    seed: Option<u64>,
    /// Solution CSV path
    #[arg(long, default_value = "solution.csv")]
    out: PathBuf,
    #[arg(long)]
    tol_grad: Option<f64>,
    #[arg(long)]
    tol_res: Option<f64>,
    #[arg(long)]
    max_iter: Option<usize>,
    #[arg(long, value_enum, default_value_t = Sense::Min)]
    sense: Sense,
    /// Lowest lattice value (brute force)
    #[arg(long, required_if_eq("method", "brute"), allow_hyphen_values = true)]
    lo: Option<f64>,
    /// Highest lattice value (brute force)
    #[arg(long, required_if_eq("method", "brute"), allow_hyphen_values = true)]
    hi: Option<f64>,
    /// Lattice intervals between lo and hi (brute force)
    #[arg(long, required_if_eq("method", "brute"))]
    steps: Option<usize>,
}

#[derive(Debug, Args)]
struct CheckArgs {
    /// CSV with columns t,value covering the whole scale
    #[arg(long)]
    y: PathBuf,
    problem: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SuiteArgs {
    /// Scale JSON file or inline JSON; defaults to Z[0,20], 0.5Z[0,10] and 2^N[1,1024]
    #[arg(long)]
    scale: Option<String>,
    #[arg(long, default_value_t = 100)]
    trials: usize,
    #[arg(long, env = "NABLAVAR_SEED", default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Evaluate one identity wrongly to exercise the failure path
    #[arg(long, hide = true)]
    inject_fault: bool,
}

/// Parses `argv` (program name first) and runs the command, printing to
/// the process's stdout and stderr.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let stdout = std::io::stdout();
    let stderr = std::io::stderr();
    run_with(argv, &mut stdout.lock(), &mut stderr.lock())
}

pub fn run_with<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let text = e.render().to_string();
            return if e.use_stderr() {
                let _ = write!(err, "{text}");
                EXIT_USAGE
            } else {
                let _ = write!(out, "{text}");
                EXIT_OK
            };
        }
    };
    match execute(cli.command, out, err) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            EXIT_DOMAIN
        }
    }
}

fn io_err(e: std::io::Error) -> Error {
    Error::Input(e.to_string())
}

fn emit(text: &str, path: Option<&PathBuf>, out: &mut dyn Write) -> Result<()> {
    match path {
        Some(p) => fs::write(p, text).map_err(|e| Error::Input(format!("{}: {e}", p.display()))),
        None => out.write_all(text.as_bytes()).map_err(io_err),
    }
}

fn execute(command: Command, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32> {
    match command {
        Command::Scale { action: ScaleAction::Inspect { scale } } => {
            let ts = load_scale(&scale)?;
            emit(&inspect_csv(&ts), None, out)?;
            Ok(EXIT_OK)
        }
        Command::Diff(a) => {
            let ts = Arc::new(load_scale(&a.scale)?);
            let f = read_grid_csv(&a.input, &ts)?;
            let d = mixed_operator(&f, a.rho, a.order)?;
            emit(&grid_csv_string(&d), a.out.as_ref(), out)?;
            Ok(EXIT_OK)
        }
        Command::Integrate(a) => {
            let ts = Arc::new(load_scale(&a.scale)?);
            let f = read_grid_csv(&a.input, &ts)?;
            emit(&integrate_csv(&f, a.from, a.to)?, a.out.as_ref(), out)?;
            Ok(EXIT_OK)
        }
        Command::Solve(a) => solve(a, out, err),
        Command::Check(a) => {
            let spec = ProblemSpec::load(&a.problem)?;
            let problem = spec.build(false)?;
            let y = read_grid_csv(&a.y, problem.scale())?;
            let report = problem.el_residual(&y)?;
            let json = to_json_pretty(&ElReportJson::new(&problem, &y, &report));
            emit(&(json + "\n"), a.out.as_ref(), out)?;
            Ok(EXIT_OK)
        }
        Command::Suite(a) => {
            let scales = match &a.scale {
                Some(s) => vec![load_scale(s)?],
                None => default_suite_scales()?,
            };
            let mut reports = Vec::new();
            for ts in scales {
                reports.push(run_suite(&Arc::new(ts), a.trials, a.seed, a.inject_fault)?);
            }
            let passed = reports.iter().all(|r| r.passed);
            emit(&(to_json_pretty(&reports) + "\n"), a.out.as_ref(), out)?;
            if passed {
                Ok(EXIT_OK)
            } else {
                let _ = writeln!(err, "property suite failed");
                Ok(EXIT_SUITE)
            }
        }
    }
}

fn default_suite_scales() -> Result<Vec<TimeScale>> {
    Ok(vec![
        TimeScale::make_lattice(Family::IntegerLattice, 0.0, 20.0)?,
        TimeScale::make_lattice(Family::HLattice { h: 0.5 }, 0.0, 10.0)?,
        TimeScale::make_lattice(Family::QLattice { q: 2.0 }, 1.0, 1024.0)?,
    ])
}

fn inspect_csv(ts: &TimeScale) -> String {
    let mut s = String::from("index,t,rho,sigma,nu\n");
    for i in 0..ts.len() {
        s.push_str(&format!(
            "{i},{},{},{},{}\n",
            ts.point(i),
            ts.point(ts.rho_index(i)),
            ts.point(ts.sigma_index(i)),
            ts.nu_at(i)
        ));
    }
    s
}

/// Rows `t, integral_from^t f` for every point between `from` and `to`.
fn integrate_csv(f: &crate::nabla::GridFunction, from: f64, to: f64) -> Result<String> {
    let ts = f.scale();
    let ia = ts.index_of(from)?;
    let ib = ts.index_of(to)?;
    let (lo, hi) = (ia.min(ib), ia.max(ib));
    let cumulative = antiderivative(f, lo)?;
    let base = cumulative.at(ia).ok_or(Error::NotInDomain(from))?;
    if cumulative.at(hi).is_none() {
        return Err(Error::NotInDomain(ts.point(hi)));
    }
    let mut s = String::from("t,value\n");
    for i in lo..=hi {
        let v = cumulative.at(i).unwrap() - base;
        s.push_str(&format!("{},{}\n", ts.point(i), v));
    }
    Ok(s)
}

fn solve(a: SolveArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32> {
    let spec = ProblemSpec::load(&a.problem)?;
    let original = spec.build(a.method == MethodArg::Brute)?;
    let maximize = a.sense == Sense::Max;
    let problem = if maximize { original.negated() } else { original };

    let direct_opts = || {
        let mut o = DirectOptions { tol_grad: a.tol_grad, seed: a.seed, ..Default::default() };
        if let Some(m) = a.max_iter {
            o.max_iter = m;
        }
        o
    };
    let (sol, lattice) = match a.method {
        MethodArg::Direct => (solve_direct(&problem, &direct_opts())?, None),
        MethodArg::Newton => {
            let mut o = NewtonOptions { tol_res: a.tol_res, ..Default::default() };
            if let Some(m) = a.max_iter {
                o.max_iter = m;
            }
            (solve_el_newton(&problem, &o)?, None)
        }
        MethodArg::Brute => {
            let grid = ValueGrid {
                lo: a.lo.expect("required by clap"),
                hi: a.hi.expect("required by clap"),
                steps: a.steps.expect("required by clap"),
            };
            let sol = brute_force_min(&problem, &grid)?;
            let sign = if maximize { -1.0 } else { 1.0 };
            let (direct_objective, gap_bound) = if problem.is_degenerate() {
                (None, None)
            } else {
                match solve_direct(&problem, &direct_opts()) {
                    Ok(d) if d.converged => {
                        let bound = lattice_gap_bound(&problem, &d.y, &grid).ok();
                        (Some(sign * d.objective), bound)
                    }
                    _ => (None, None),
                }
            };
            let info = LatticeInfo { lo: grid.lo, hi: grid.hi, steps: grid.steps, direct_objective, gap_bound };
            (sol, Some(info))
        }
    };

    let csv = solution_csv_string(&sol.y, problem.order())?;
    fs::write(&a.out, csv).map_err(|e| Error::Input(format!("{}: {e}", a.out.display())))?;
    let mut summary = SolveSummary::new(&problem, &sol, maximize);
    summary.lattice = lattice;
    emit(&(to_json_pretty(&summary) + "\n"), None, out)?;
    if sol.converged {
        Ok(EXIT_OK)
    } else {
        let _ = writeln!(err, "error: {}", sol.into_converged().unwrap_err());
        Ok(EXIT_DOMAIN)
    }
}
