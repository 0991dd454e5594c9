//! Extremal finders for [`VariationalProblem`].
//!
//! All solvers work on the free values `y(p_r) .. y(p_{N-r})`; the pinned
//! boundary blocks are substituted, never optimised, so every iterate is
//! admissible.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::nabla::GridFunction;
use crate::variational::VariationalProblem;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Direct,
    Newton,
    Brute,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Direct => "direct",
            Method::Newton => "newton",
            Method::Brute => "brute",
        }
    }
}

#[derive(Debug, Clone)]
pub struct Solution {
    /// Admissible function on the whole scale.
    pub y: GridFunction,
    pub objective: f64,
    pub el_sup_norm: f64,
    pub method: Method,
    pub iterations: usize,
    pub converged: bool,
    /// Objective after each accepted iteration (first entry: the start).
    pub history: Vec<f64>,
}

impl Solution {
    fn finish(
        problem: &VariationalProblem,
        y: GridFunction,
        method: Method,
        iterations: usize,
        converged: bool,
        history: Vec<f64>,
    ) -> Result<Self> {
        let objective = problem.evaluate_functional(&y)?;
        let el_sup_norm = problem.el_residual(&y)?.sup_norm;
        Ok(Self {
            y,
            objective,
            el_sup_norm,
            method,
            iterations,
            converged,
            history,
        })
    }

    /// Turns a non-converged result into [`Error::NotConverged`].
    pub fn into_converged(self) -> Result<Self> {
        if self.converged {
            Ok(self)
        } else {
            Err(Error::NotConverged(format!(
                "{} stopped after {} iterations (objective {}, EL residual {:e})",
                self.method.name(),
                self.iterations,
                self.objective,
                self.el_sup_norm
            )))
        }
    }
}

fn reject_degenerate(problem: &VariationalProblem) -> Result<()> {
    if problem.is_degenerate() {
        return Err(Error::DegenerateProblem(format!(
            "scale has exactly {} points; every value is pinned and there is nothing to optimise",
            problem.scale().len()
        )));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// direct minimisation

#[derive(Debug, Clone)]
pub struct DirectOptions {
    /// Gradient sup-norm target; defaults to `1e-9 * (1 + |objective|)`.
    pub tol_grad: Option<f64>,
    pub max_iter: usize,
    /// Perturbs the interpolated start with seeded noise when set.
    pub seed: Option<u64>,
}

impl Default for DirectOptions {
    fn default() -> Self {
        Self {
            tol_grad: None,
            max_iter: 500,
            seed: None,
        }
    }
}

fn sup(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn initial_guess(problem: &VariationalProblem, seed: Option<u64>) -> Vec<f64> {
    let mut x = problem.default_guess();
    if let Some(seed) = seed {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let amp = 0.1 * (1.0 + problem.data_scale());
        for v in &mut x {
            *v += amp * rng.gen_range(-1.0..1.0);
        }
    }
    x
}

struct Objective<'a> {
    problem: &'a VariationalProblem,
}

impl Objective<'_> {
    fn value(&self, x: &[f64]) -> Result<f64> {
        self.problem.functional_unchecked(&self.problem.assemble(x)?)
    }

    fn gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.problem.gradient(&self.problem.assemble(x)?)
    }

    /// Inverse of a forward-difference Hessian of the exact gradient, if it
    /// is positive definite.
    fn inverse_hessian(&self, x: &[f64], g: &[f64]) -> Result<Option<DMatrix<f64>>> {
        let n = x.len();
        let mut hess = DMatrix::zeros(n, n);
        let mut probe = x.to_vec();
        for j in 0..n {
            let h = 1e-6 * (1.0 + x[j].abs());
            probe[j] = x[j] + h;
            let gp = self.gradient(&probe)?;
            probe[j] = x[j];
            for i in 0..n {
                hess[(i, j)] = (gp[i] - g[i]) / h;
            }
        }
        let hess = (&hess + hess.transpose()) * 0.5;
        Ok(hess.cholesky().map(|c| c.inverse()))
    }
}

fn scaled_identity(n: usize, g: &[f64]) -> DMatrix<f64> {
    DMatrix::identity(n, n) / sup(g).max(1.0)
}

/// Quasi-Newton (BFGS) minimisation of the functional over the free values.
///
/// The gradient is the exact first variation along coordinate bumps. The
/// inverse-Hessian model starts from a finite-difference Hessian when that
/// is positive definite and from a scaled identity otherwise.
pub fn solve_direct(problem: &VariationalProblem, opts: &DirectOptions) -> Result<Solution> {
    reject_degenerate(problem)?;
    let obj = Objective { problem };
    let n = problem.free_count();
    let mut x = initial_guess(problem, opts.seed);
    let mut f = obj.value(&x)?;
    let mut g = obj.gradient(&x)?;
    let mut history = vec![f];
    let tol = |f: f64| opts.tol_grad.unwrap_or(1e-9 * (1.0 + f.abs()));

    let mut hinv = obj
        .inverse_hessian(&x, &g)?
        .unwrap_or_else(|| scaled_identity(n, &g));
    let mut iterations = 0;
    let mut converged = sup(&g) <= tol(f);
    let mut fresh_identity = false;

    while !converged && iterations < opts.max_iter {
        let gv = DVector::from_column_slice(&g);
        let mut d: Vec<f64> = (-(&hinv * &gv)).iter().copied().collect();
        let mut slope = dot(&g, &d);
        if !(slope < 0.0) {
            hinv = scaled_identity(n, &g);
            fresh_identity = true;
            d = g.iter().map(|v| -v / sup(&g).max(1.0)).collect();
            slope = dot(&g, &d);
        }

        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let trial: Vec<f64> = x.iter().zip(&d).map(|(a, b)| a + step * b).collect();
            if let Ok(ft) = obj.value(&trial) {
                if ft <= f + 1e-4 * step * slope {
                    accepted = Some((trial, ft, None));
                    break;
                }
                // At rounding level the Armijo test is noise; accept a
                // non-increasing step that reduces the gradient.
                if ft <= f {
                    let gt = obj.gradient(&trial)?;
                    if sup(&gt) < sup(&g) {
                        accepted = Some((trial, ft, Some(gt)));
                        break;
                    }
                }
            }
            step *= 0.5;
        }

        let Some((xn, fn_, gn)) = accepted else {
            if fresh_identity {
                break;
            }
            hinv = scaled_identity(n, &g);
            fresh_identity = true;
            continue;
        };
        let gn = match gn {
            Some(gn) => gn,
            None => obj.gradient(&xn)?,
        };
        let s: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
        let yv: Vec<f64> = gn.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &yv);
        if sy > 1e-12 * dot(&s, &s).sqrt() * dot(&yv, &yv).sqrt() {
            let s = DVector::from_vec(s);
            let yv = DVector::from_vec(yv);
            let rho = 1.0 / sy;
            let eye = DMatrix::<f64>::identity(n, n);
            let left = &eye - (&s * yv.transpose()) * rho;
            let right = &eye - (&yv * s.transpose()) * rho;
            hinv = &left * &hinv * &right + (&s * s.transpose()) * rho;
        }
        fresh_identity = false;
        x = xn;
        f = fn_;
        g = gn;
        iterations += 1;
        history.push(f);
        converged = sup(&g) <= tol(f);
    }

    let y = problem.assemble(&x)?;
    Solution::finish(problem, y, Method::Direct, iterations, converged, history)
}

// ---------------------------------------------------------------------------
// Newton on the Euler-Lagrange system

#[derive(Debug, Clone)]
pub struct NewtonOptions {
    /// Residual sup-norm target; defaults to `1e-10 * (1 + data scale)`.
    pub tol_res: Option<f64>,
    pub max_iter: usize,
    /// Starting free values; defaults to linear interpolation.
    pub init: Option<Vec<f64>>,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        Self {
            tol_res: None,
            max_iter: 50,
            init: None,
        }
    }
}

fn residual_of(problem: &VariationalProblem, x: &[f64]) -> Result<Vec<f64>> {
    Ok(problem
        .el_residual(&problem.assemble(x)?)?
        .residual
        .into_values())
}

fn norm2(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

/// Damped Newton iteration on the square map from free values to
/// Euler-Lagrange residuals, with a forward-difference Jacobian.
pub fn solve_el_newton(problem: &VariationalProblem, opts: &NewtonOptions) -> Result<Solution> {
    reject_degenerate(problem)?;
    let n = problem.free_count();
    let mut x = match &opts.init {
        Some(init) if init.len() != n => {
            return Err(Error::BadParam(format!(
                "initial guess has {} values, problem has {n} free values",
                init.len()
            )))
        }
        Some(init) => init.clone(),
        None => problem.default_guess(),
    };
    let tol = opts.tol_res.unwrap_or(1e-10 * (1.0 + problem.data_scale()));
    let mut res = residual_of(problem, &x)?;
    let mut history = vec![problem.functional_unchecked(&problem.assemble(&x)?)?];
    let mut iterations = 0;
    let mut converged = sup(&res) <= tol;

    while !converged && iterations < opts.max_iter {
        let mut jac = DMatrix::zeros(n, n);
        let mut probe = x.clone();
        for j in 0..n {
            let h = 1e-7 * (1.0 + x[j].abs());
            probe[j] = x[j] + h;
            let rp = residual_of(problem, &probe)?;
            probe[j] = x[j];
            for i in 0..n {
                jac[(i, j)] = (rp[i] - res[i]) / h;
            }
        }
        let rhs = -DVector::from_column_slice(&res);
        let dx = jac
            .lu()
            .solve(&rhs)
            .filter(|dx| dx.iter().all(|v| v.is_finite()))
            .ok_or(Error::SingularJacobian(iterations))?;

        let current = norm2(&res);
        let mut lambda = 1.0;
        let mut next = None;
        for _ in 0..40 {
            let trial: Vec<f64> = x.iter().zip(dx.iter()).map(|(a, b)| a + lambda * b).collect();
            if let Ok(r) = residual_of(problem, &trial) {
                if norm2(&r) < current {
                    next = Some((trial, r));
                    break;
                }
            }
            lambda *= 0.5;
        }
        let Some((xn, rn)) = next else { break };
        x = xn;
        res = rn;
        iterations += 1;
        history.push(problem.functional_unchecked(&problem.assemble(&x)?)?);
        converged = sup(&res) <= tol;
    }

    let y = problem.assemble(&x)?;
    Solution::finish(problem, y, Method::Newton, iterations, converged, history)
}

// ---------------------------------------------------------------------------
// exhaustive lattice search

/// Candidate free values `lo + k (hi - lo) / steps`, `k = 0..=steps`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValueGrid {
    pub lo: f64,
    pub hi: f64,
    pub steps: usize,
}

impl ValueGrid {
    pub fn spacing(&self) -> f64 {
        (self.hi - self.lo) / self.steps as f64
    }

    pub fn value(&self, k: usize) -> f64 {
        if k == self.steps {
            self.hi
        } else {
            self.lo + k as f64 * self.spacing()
        }
    }

    fn nearest(&self, v: f64) -> usize {
        let k = ((v - self.lo) / self.spacing()).round();
        k.clamp(0.0, self.steps as f64) as usize
    }
}

/// Largest number of candidates `brute_force_min` will enumerate.
pub const BRUTE_FORCE_LIMIT: f64 = 1e7;

/// Exhaustive search of the free values over a value lattice. Ties go to
/// the lexicographically smallest tuple of lattice indices.
pub fn brute_force_min(problem: &VariationalProblem, grid: &ValueGrid) -> Result<Solution> {
    if !(grid.lo.is_finite() && grid.hi.is_finite() && grid.lo < grid.hi) || grid.steps == 0 {
        return Err(Error::BadParam(format!("invalid value grid {grid:?}")));
    }
    let n = problem.free_count();
    let candidates = ((grid.steps + 1) as f64).powi(n as i32);
    if candidates > BRUTE_FORCE_LIMIT {
        return Err(Error::TooLarge(candidates));
    }
    let mut idx = vec![0usize; n];
    let mut x: Vec<f64> = vec![grid.value(0); n];
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut visited = 0usize;
    loop {
        visited += 1;
        if let Ok(f) = problem.functional_unchecked(&problem.assemble(&x)?) {
            if best.as_ref().is_none_or(|(bf, _)| f < *bf) {
                best = Some((f, x.clone()));
            }
        }
        // odometer: last coordinate fastest, so visits are lexicographic
        let mut pos = n;
        loop {
            if pos == 0 {
                let (_, bx) = best.ok_or_else(|| {
                    Error::Eval("the Lagrangian failed on every lattice candidate".into())
                })?;
                let y = problem.assemble(&bx)?;
                let f = problem.evaluate_functional(&y)?;
                let el = if problem.is_degenerate() {
                    0.0
                } else {
                    problem.el_residual(&y)?.sup_norm
                };
                return Ok(Solution {
                    y,
                    objective: f,
                    el_sup_norm: el,
                    method: Method::Brute,
                    iterations: visited,
                    converged: true,
                    history: vec![f],
                });
            }
            pos -= 1;
            if idx[pos] < grid.steps {
                idx[pos] += 1;
                x[pos] = grid.value(idx[pos]);
                break;
            }
            idx[pos] = 0;
            x[pos] = grid.value(0);
        }
    }
}

/// Upper bound on how far the best lattice point can sit above the
/// minimum at `y_star`, for a convex functional:
/// `J(y_l) - J(y*) <= |grad J(y_l)|_1 * |y_l - y*|_inf` with `y_l` the
/// lattice rounding of `y*`.
pub fn lattice_gap_bound(problem: &VariationalProblem, y_star: &GridFunction, grid: &ValueGrid) -> Result<f64> {
    let free = problem.free_values(y_star)?;
    let rounded: Vec<f64> = free.iter().map(|&v| grid.value(grid.nearest(v))).collect();
    let dist = free
        .iter()
        .zip(&rounded)
        .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    let g = problem.gradient(&problem.assemble(&rounded)?)?;
    Ok(g.iter().map(|v| v.abs()).sum::<f64>() * dist)
}
