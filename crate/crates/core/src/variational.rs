//! Higher-order variational problems on a finite time scale.
//!
//! A problem of order `r` on points `p_0 < ... < p_N` minimises
//!
//! ```text
//! sum_{k=r}^{N} nu(p_k) L(p_k, y^{rho^r}(p_k), y^{rho^{r-1} nabla}(p_k), ..., y^{nabla^r}(p_k))
//! ```
//!
//! subject to `y^{nabla^i}(p_{r-1}) = alpha_i` and `y^{nabla^i}(p_N) = beta_i`
//! for `i < r`. Those rows pin `y` on `p_0..p_{r-1}` and `p_{N-r+1}..p_N`;
//! the remaining `N + 1 - 2r` values are free, matching the number of
//! points of `[a, b]_{kappa^{2r}} = p_{2r}..p_N` where the Euler-Lagrange
//! residual lives.

use std::sync::Arc;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::expr::Lagrangian;
use crate::nabla::{integral_by_index, GridFunction};
use crate::timescale::{HCoefficients, TimeScale};

/// Absolute tolerance on boundary rows for admissible functions and variations.
pub const ADMISSIBILITY_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundaryConditions {
    /// `y^{nabla^i}(sigma^{r-1}(a)) = alphas[i]`
    pub alphas: Vec<f64>,
    /// `y^{nabla^i}(b) = betas[i]`
    pub betas: Vec<f64>,
}

impl BoundaryConditions {
    pub fn new(alphas: Vec<f64>, betas: Vec<f64>) -> Self {
        Self { alphas, betas }
    }

    /// Zero data on both ends.
    pub fn zero(r: usize) -> Self {
        Self::new(vec![0.0; r], vec![0.0; r])
    }

    /// Rows taken from a reference function evaluated on `scale`.
    pub fn from_function(scale: &Arc<TimeScale>, r: usize, y: impl Fn(f64) -> f64) -> Result<Self> {
        let g = GridFunction::from_fn(scale.clone(), y)?;
        let n = scale.last_index();
        let mut alphas = Vec::with_capacity(r);
        let mut betas = Vec::with_capacity(r);
        for i in 0..r {
            let d = g.nabla_n(i)?;
            alphas.push(d.at(r - 1).ok_or_else(|| {
                Error::DomainTooSmall(format!("nabla^{i} undefined at index {}", r - 1))
            })?);
            betas.push(d.at(n).unwrap());
        }
        Ok(Self::new(alphas, betas))
    }

    fn data_scale(&self) -> f64 {
        self.alphas
            .iter()
            .chain(&self.betas)
            .fold(0.0f64, |m, v| m.max(v.abs()))
    }
}

/// `y^{nabla^i}` at the last point of a window of consecutive values
/// starting at scale index `start`.
fn nabla_power_at(ts: &TimeScale, start: usize, window: &[f64], i: usize) -> f64 {
    let mut level = window.to_vec();
    let mut first = start;
    for _ in 0..i {
        level = level
            .windows(2)
            .enumerate()
            .map(|(k, w)| (w[1] - w[0]) / ts.nu_at(first + k + 1))
            .collect();
        first += 1;
    }
    *level.last().unwrap()
}

/// Values at `anchor - rows.len() + 1 ..= anchor` such that
/// `y^{nabla^i}(anchor) = rows[i]`, found by back-substitution through the
/// backward-difference formula.
pub fn pin_rows(ts: &TimeScale, anchor: usize, rows: &[f64]) -> Result<Vec<f64>> {
    let m = rows.len();
    if m == 0 {
        return Ok(Vec::new());
    }
    if anchor + 1 < m || anchor > ts.last_index() {
        return Err(Error::Degenerate(format!(
            "cannot pin {m} rows at index {anchor}"
        )));
    }
    let first = anchor + 1 - m;
    let mut vals = vec![0.0; m];
    vals[m - 1] = rows[0];
    for i in 1..m {
        let j = anchor - i;
        let mut denom = 1.0;
        for k in j + 1..=anchor {
            let nu = ts.nu_at(k);
            if nu == 0.0 {
                return Err(Error::Degenerate(format!("zero graininess at index {k}")));
            }
            denom *= nu;
        }
        let coeff = if i % 2 == 0 { 1.0 } else { -1.0 } / denom;
        let window = &mut vals[j - first..];
        window[0] = 0.0;
        let without = nabla_power_at(ts, j, window, i);
        window[0] = (rows[i] - without) / coeff;
    }
    Ok(vals)
}

/// Pinned boundary blocks of an admissible function.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Pinned {
    /// Values on `p_0..p_{r-1}`.
    pub left: Vec<f64>,
    /// First index of the right block, `N - r + 1`.
    pub right_start: usize,
    /// Values on `p_{N-r+1}..p_N`.
    pub right: Vec<f64>,
}

impl Pinned {
    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.left
            .iter()
            .copied()
            .enumerate()
            .chain(self.right.iter().copied().enumerate().map(|(k, v)| (self.right_start + k, v)))
    }
}

/// `(-1)^i (1 / a1)^{i(i-1)/2}`.
pub fn el_coefficient(i: usize, a1: f64) -> f64 {
    let sign = if i % 2 == 0 { 1.0 } else { -1.0 };
    let e = i * i.saturating_sub(1) / 2;
    sign * (1.0 / a1).powi(e as i32)
}

/// One addend `(-1)^i (1/a1)^{i(i-1)/2} f_i^{nabla^i}` of the alternating sum.
#[derive(Debug, Clone, PartialEq)]
pub struct ElTerm {
    pub index: usize,
    pub coefficient: f64,
    pub values: GridFunction,
}

/// `sum_i (-1)^i (1/a1)^{i(i-1)/2} f_i^{nabla^i}` on `p_{2r}..p_N`, where each
/// `f_i` is given on `p_r..p_N`. Returns the sum and its addends.
pub fn alternating_sum(fs: &[GridFunction], a1: f64) -> Result<(GridFunction, Vec<ElTerm>)> {
    let r = fs.len().checked_sub(1).ok_or_else(|| {
        Error::DomainTooSmall("alternating sum needs at least one function".into())
    })?;
    let target = 2 * r;
    let mut terms = Vec::with_capacity(r + 1);
    for (i, f) in fs.iter().enumerate() {
        let coefficient = el_coefficient(i, a1);
        let d = f.nabla_n(i)?;
        let d = if d.start() < target { d.restrict_from(target)? } else { d };
        if d.start() != target {
            return Err(Error::DomainTooSmall(format!(
                "term {i} starts at index {} instead of {target}",
                d.start()
            )));
        }
        terms.push(ElTerm {
            index: i,
            coefficient,
            values: d.map(|v| coefficient * v),
        });
    }
    let mut sum = terms[0].values.clone();
    for term in &terms[1..] {
        sum = sum.zip_with(&term.values, |a, b| a + b)?;
    }
    Ok((sum, terms))
}

/// `integral_{p_{r-1}}^{p_N} sum_i f_i eta^{rho^{r-i} nabla^i}`, each `f_i` on `p_r..p_N`.
pub fn pairing(fs: &[GridFunction], eta: &GridFunction) -> Result<f64> {
    let r = fs.len() - 1;
    let mut integrand: Option<GridFunction> = None;
    for (i, f) in fs.iter().enumerate() {
        let e = eta.mixed(r - i, i)?;
        let prod = f.zip_with(&e, |a, b| a * b)?;
        integrand = Some(match integrand {
            None => prod,
            Some(acc) => acc.zip_with(&prod, |a, b| a + b)?,
        });
    }
    let integrand = integrand.unwrap();
    integral_by_index(&integrand, r - 1, eta.scale().last_index())
}

#[derive(Debug, Clone)]
pub struct ElReport {
    /// Residual on `p_{2r}..p_N`.
    pub residual: GridFunction,
    pub sup_norm: f64,
    pub terms: Vec<ElTerm>,
    pub a1: f64,
    /// `max |L_{u_i}|` over the stack, used to scale tolerances.
    pub partials_scale: f64,
}

impl ElReport {
    /// Factor between `f^{rho nabla}` and `f^{nabla rho}` on this scale.
    pub fn rho_nabla_factor(&self) -> f64 {
        self.a1
    }
}

#[derive(Debug, Clone)]
pub struct VariationalProblem {
    scale: Arc<TimeScale>,
    order: usize,
    lagrangian: Lagrangian,
    bc: BoundaryConditions,
    h: HCoefficients,
    pinned: Pinned,
    degenerate: bool,
}

impl VariationalProblem {
    /// A solvable problem: the scale must have at least `2r + 1` points.
    pub fn new(scale: Arc<TimeScale>, lagrangian: Lagrangian, bc: BoundaryConditions) -> Result<Self> {
        let r = lagrangian.order();
        if scale.len() < TimeScale::min_points_for_order(r) {
            return Err(Error::DegenerateProblem(format!(
                "order {r} needs at least {} points, scale has {}",
                2 * r + 1,
                scale.len()
            )));
        }
        Self::build(scale, lagrangian, bc)
    }

    /// Also admits scales of exactly `2r` points, where every value is
    /// pinned and the functional is constant. Such problems can be
    /// evaluated but not solved.
    pub fn new_degenerate_evaluate(
        scale: Arc<TimeScale>,
        lagrangian: Lagrangian,
        bc: BoundaryConditions,
    ) -> Result<Self> {
        let r = lagrangian.order();
        if scale.len() < 2 * r {
            return Err(Error::DegenerateProblem(format!(
                "order {r} needs at least {} points even to evaluate, scale has {}",
                2 * r,
                scale.len()
            )));
        }
        Self::build(scale, lagrangian, bc)
    }

    fn build(scale: Arc<TimeScale>, lagrangian: Lagrangian, bc: BoundaryConditions) -> Result<Self> {
        let r = lagrangian.order();
        if bc.alphas.len() != r || bc.betas.len() != r {
            return Err(Error::BadParam(format!(
                "order {r} needs {r} alphas and {r} betas, got {} and {}",
                bc.alphas.len(),
                bc.betas.len()
            )));
        }
        if bc.alphas.iter().chain(&bc.betas).any(|v| !v.is_finite()) {
            return Err(Error::BadParam("boundary data must be finite".into()));
        }
        let h = scale.h_coefficients(r)?;
        let n = scale.last_index();
        let pinned = Pinned {
            left: pin_rows(&scale, r - 1, &bc.alphas)?,
            right_start: n + 1 - r,
            right: pin_rows(&scale, n, &bc.betas)?,
        };
        let degenerate = scale.len() == 2 * r;
        let problem = Self {
            scale,
            order: r,
            lagrangian,
            bc,
            h,
            pinned,
            degenerate,
        };
        if !degenerate {
            let (residual_points, free) = problem.counting();
            assert_eq!(residual_points, free, "counting identity");
        }
        Ok(problem)
    }

    pub fn scale(&self) -> &Arc<TimeScale> {
        &self.scale
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn lagrangian(&self) -> &Lagrangian {
        &self.lagrangian
    }

    pub fn boundary(&self) -> &BoundaryConditions {
        &self.bc
    }

    pub fn h(&self) -> &HCoefficients {
        &self.h
    }

    pub fn is_degenerate(&self) -> bool {
        self.degenerate
    }

    /// Same problem with `-L`, for maximisation.
    pub fn negated(&self) -> Self {
        Self {
            lagrangian: self.lagrangian.negated(),
            ..self.clone()
        }
    }

    /// Values fixed by the boundary rows.
    pub fn pin_boundary(&self) -> &Pinned {
        &self.pinned
    }

    /// Scale indices of the free values, `r ..= N - r`.
    pub fn free_indices(&self) -> std::ops::Range<usize> {
        let n = self.scale.last_index();
        self.order..(n + 1).saturating_sub(self.order).max(self.order)
    }

    pub fn free_count(&self) -> usize {
        self.free_indices().len()
    }

    /// First index of `[a, b]_{kappa^{2r}}`.
    pub fn residual_start(&self) -> usize {
        2 * self.order
    }

    /// `(|[a, b]_{kappa^{2r}}|, number of free values)`.
    pub fn counting(&self) -> (usize, usize) {
        (self.scale.len().saturating_sub(2 * self.order), self.free_count())
    }

    /// Largest magnitude of boundary data, used to scale tolerances.
    pub fn data_scale(&self) -> f64 {
        self.bc.data_scale()
    }

    /// Full admissible function from its free values.
    pub fn assemble(&self, free: &[f64]) -> Result<GridFunction> {
        if free.len() != self.free_count() {
            return Err(Error::BadParam(format!(
                "expected {} free values, got {}",
                self.free_count(),
                free.len()
            )));
        }
        let mut values = vec![0.0; self.scale.len()];
        for (i, v) in self.pinned.iter() {
            values[i] = v;
        }
        let r = self.order;
        values[r..r + free.len()].copy_from_slice(free);
        GridFunction::new(self.scale.clone(), 0, values)
    }

    pub fn free_values(&self, y: &GridFunction) -> Result<Vec<f64>> {
        self.require_full(y, "y")?;
        Ok(y.values()[self.free_indices()].to_vec())
    }

    /// Linear interpolation of the free values between the pinned blocks.
    pub fn default_guess(&self) -> Vec<f64> {
        let r = self.order;
        let ts = &self.scale;
        let (ta, ya) = (ts.point(r - 1), *self.pinned.left.last().unwrap());
        let n = ts.last_index();
        let (tb, yb) = (ts.point(n + 1 - r), self.pinned.right[0]);
        self.free_indices()
            .map(|i| ya + (yb - ya) * (ts.point(i) - ta) / (tb - ta))
            .collect()
    }

    fn require_full(&self, y: &GridFunction, what: &str) -> Result<()> {
        if y.start() != 0 || y.len() != self.scale.len() || y.scale().points() != self.scale.points() {
            return Err(Error::DomainTooSmall(format!(
                "{what} must be defined on all {} points of the problem scale",
                self.scale.len()
            )));
        }
        Ok(())
    }

    /// Worst violation of the boundary rows by `y` against the given data.
    fn row_violation(&self, y: &GridFunction, bc: &BoundaryConditions) -> (usize, f64) {
        let r = self.order;
        let n = self.scale.last_index();
        let vals = y.values();
        let mut worst = (0, 0.0);
        for i in 0..r {
            let left = nabla_power_at(&self.scale, r - 1 - i, &vals[r - 1 - i..r], i);
            let right = nabla_power_at(&self.scale, n - i, &vals[n - i..], i);
            for v in [(left - bc.alphas[i]).abs(), (right - bc.betas[i]).abs()] {
                if v > worst.1 {
                    worst = (i, v);
                }
            }
        }
        worst
    }

    pub fn check_admissible(&self, y: &GridFunction) -> Result<()> {
        self.require_full(y, "y")?;
        let (row, v) = self.row_violation(y, &self.bc);
        if v > ADMISSIBILITY_TOL {
            return Err(Error::NotAdmissible(format!(
                "boundary row nabla^{row} violated by {v:e}"
            )));
        }
        Ok(())
    }

    pub fn check_variation(&self, eta: &GridFunction) -> Result<()> {
        self.require_full(eta, "eta")
            .map_err(|e| Error::NotAdmissibleVariation(e.to_string()))?;
        let (row, v) = self.row_violation(eta, &BoundaryConditions::zero(self.order));
        if v > ADMISSIBILITY_TOL {
            return Err(Error::NotAdmissibleVariation(format!(
                "eta^(nabla^{row}) does not vanish at the boundary ({v:e})"
            )));
        }
        Ok(())
    }

    /// `y^{rho^{r-i} nabla^i}` for `i = 0..=r`, each on `p_r..p_N`.
    pub fn argument_stack(&self, y: &GridFunction) -> Result<Vec<GridFunction>> {
        let r = self.order;
        (0..=r).map(|i| y.mixed(r - i, i)).collect()
    }

    fn stack_at(stack: &[GridFunction], k: usize) -> Vec<f64> {
        stack.iter().map(|g| g.values()[k]).collect()
    }

    /// `L_{u_i}(t, stack(t))` as grid functions on `p_r..p_N`.
    pub fn partials_stack(&self, y: &GridFunction) -> Result<Vec<GridFunction>> {
        self.require_full(y, "y")?;
        let stack = self.argument_stack(y)?;
        let r = self.order;
        let pts = &self.scale.points()[r..];
        let mut cols = vec![Vec::with_capacity(pts.len()); r + 1];
        for (k, &t) in pts.iter().enumerate() {
            let partials = self.lagrangian.partials(t, &Self::stack_at(&stack, k))?;
            for (col, p) in cols.iter_mut().zip(partials) {
                col.push(p);
            }
        }
        cols.into_iter()
            .map(|c| GridFunction::new(self.scale.clone(), r, c))
            .collect()
    }

    /// Value of the functional at `y` without the admissibility check.
    pub fn functional_unchecked(&self, y: &GridFunction) -> Result<f64> {
        self.require_full(y, "y")?;
        let stack = self.argument_stack(y)?;
        let r = self.order;
        let mut total = 0.0;
        for (k, &t) in self.scale.points()[r..].iter().enumerate() {
            let l = self.lagrangian.value(t, &Self::stack_at(&stack, k))?;
            total += self.scale.nu_at(r + k) * l;
        }
        Ok(total)
    }

    /// `integral_{sigma^{r-1}(a)}^{b} L(t, y^{rho^r}, ..., y^{nabla^r}) nabla t`.
    pub fn evaluate_functional(&self, y: &GridFunction) -> Result<f64> {
        self.check_admissible(y)?;
        self.functional_unchecked(y)
    }

    /// Higher-order Euler-Lagrange residual at `y` on `p_{2r}..p_N`.
    pub fn el_residual(&self, y: &GridFunction) -> Result<ElReport> {
        if self.degenerate {
            return Err(Error::DomainTooSmall(
                "a 2r-point scale has no Euler-Lagrange points".into(),
            ));
        }
        let partials = self.partials_stack(y)?;
        let partials_scale = partials.iter().fold(0.0f64, |m, g| m.max(g.sup_norm()));
        let (residual, terms) = alternating_sum(&partials, self.h.a1)?;
        debug_assert_eq!(residual.start(), self.residual_start());
        Ok(ElReport {
            sup_norm: residual.sup_norm(),
            residual,
            terms,
            a1: self.h.a1,
            partials_scale,
        })
    }

    /// `phi'(0)` for `phi(eps) = J[y + eps eta]`, computed directly.
    pub fn first_variation(&self, y: &GridFunction, eta: &GridFunction) -> Result<f64> {
        self.check_variation(eta)?;
        let partials = self.partials_stack(y)?;
        pairing(&partials, eta)
    }

    /// Gradient of the functional with respect to the free values: the
    /// first variation along each coordinate bump.
    pub fn gradient(&self, y: &GridFunction) -> Result<Vec<f64>> {
        let partials = self.partials_stack(y)?;
        let mut grad = Vec::with_capacity(self.free_count());
        for j in self.free_indices() {
            let mut bump = GridFunction::zeros(self.scale.clone(), 0).into_values();
            bump[j] = 1.0;
            let eta = GridFunction::new(self.scale.clone(), 0, bump)?;
            grad.push(pairing(&partials, &eta)?);
        }
        Ok(grad)
    }
}
