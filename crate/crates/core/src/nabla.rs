//! Grid functions on a finite time scale and the backward (nabla) operators
//! acting on them.
//!
//! Every operator shrinks the domain from the left only, so a domain is
//! fully described by its first index and length. The resulting index
//! range of each operator is exact, which lets callers check the
//! `[a, b]_{kappa^k}` bookkeeping by counting.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::timescale::TimeScale;

/// Real values attached to a contiguous run of points of a time scale.
#[derive(Debug, Clone, PartialEq)]
pub struct GridFunction {
    scale: Arc<TimeScale>,
    start: usize,
    values: Vec<f64>,
}

impl GridFunction {
    /// Values on points `start .. start + values.len()`.
    pub fn new(scale: Arc<TimeScale>, start: usize, values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::DomainTooSmall("grid function needs at least one value".into()));
        }
        if start + values.len() > scale.len() {
            return Err(Error::DomainTooSmall(format!(
                "{} values from index {start} overrun a scale of {} points",
                values.len(),
                scale.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::Input(format!("grid function value {v} is not finite")));
        }
        Ok(Self {
            scale,
            start,
            values,
        })
    }

    /// Samples `f` on every point of the scale.
    pub fn from_fn(scale: Arc<TimeScale>, f: impl Fn(f64) -> f64) -> Result<Self> {
        let values = scale.points().iter().map(|&t| f(t)).collect();
        Self::new(scale, 0, values)
    }

    pub fn zeros(scale: Arc<TimeScale>, start: usize) -> Self {
        let len = scale.len() - start;
        Self {
            scale,
            start,
            values: vec![0.0; len],
        }
    }

    pub fn scale(&self) -> &Arc<TimeScale> {
        &self.scale
    }

    /// First index of the domain.
    pub fn start(&self) -> usize {
        self.start
    }

    /// One past the last index of the domain.
    pub fn end(&self) -> usize {
        self.start + self.values.len()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn domain_points(&self) -> &[f64] {
        &self.scale.points()[self.start..self.end()]
    }

    pub fn contains_index(&self, i: usize) -> bool {
        i >= self.start && i < self.end()
    }

    /// Value at a scale index, if it lies in the domain.
    pub fn at(&self, i: usize) -> Option<f64> {
        self.contains_index(i).then(|| self.values[i - self.start])
    }

    pub fn value(&self, t: f64) -> Result<f64> {
        let i = self.scale.index_of(t)?;
        self.at(i).ok_or(Error::NotInDomain(t))
    }

    pub fn iter(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.domain_points().iter().copied().zip(self.values.iter().copied())
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Drops points before `start`.
    pub fn restrict_from(&self, start: usize) -> Result<Self> {
        if start < self.start || start >= self.end() {
            return Err(Error::DomainTooSmall(format!(
                "cannot restrict domain {}..{} to start at {start}",
                self.start,
                self.end()
            )));
        }
        Ok(Self {
            scale: self.scale.clone(),
            start,
            values: self.values[start - self.start..].to_vec(),
        })
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            scale: self.scale.clone(),
            start: self.start,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Pointwise combination on the intersection of both domains.
    pub fn zip_with(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        let start = self.start.max(other.start);
        let end = self.end().min(other.end());
        if start >= end {
            return Err(Error::DomainTooSmall("domains do not overlap".into()));
        }
        let values = (start..end)
            .map(|i| f(self.values[i - self.start], other.values[i - other.start]))
            .collect();
        Ok(Self {
            scale: self.scale.clone(),
            start,
            values,
        })
    }

    pub fn nabla(&self) -> Result<Self> {
        nabla_derivative(self)
    }

    pub fn nabla_n(&self, i: usize) -> Result<Self> {
        nabla_derivative_n(self, i)
    }

    pub fn compose_rho(&self, k: usize) -> Result<Self> {
        compose_rho(self, k)
    }

    /// `f^{rho^k nabla^i}`.
    pub fn mixed(&self, k: usize, i: usize) -> Result<Self> {
        mixed_operator(self, k, i)
    }
}

/// `f^nabla(t) = (f(t) - f(rho(t))) / nu(t)` on the domain minus its first point.
pub fn nabla_derivative(f: &GridFunction) -> Result<GridFunction> {
    if f.len() < 2 {
        return Err(Error::DomainTooSmall(format!(
            "nabla derivative needs 2 points, domain has {}",
            f.len()
        )));
    }
    let ts = &f.scale;
    let values = f
        .values
        .windows(2)
        .enumerate()
        .map(|(k, w)| (w[1] - w[0]) / ts.nu_at(f.start + k + 1))
        .collect();
    Ok(GridFunction {
        scale: f.scale.clone(),
        start: f.start + 1,
        values,
    })
}

pub fn nabla_derivative_n(f: &GridFunction, i: usize) -> Result<GridFunction> {
    if f.len() < i + 1 {
        return Err(Error::DomainTooSmall(format!(
            "nabla^{i} needs {} points, domain has {}",
            i + 1,
            f.len()
        )));
    }
    let mut g = f.clone();
    for _ in 0..i {
        g = nabla_derivative(&g)?;
    }
    Ok(g)
}

/// `g(t) = f(rho^k(t))`, defined where `rho^k(t)` stays inside `f`'s domain
/// without saturating.
pub fn compose_rho(f: &GridFunction, k: usize) -> Result<GridFunction> {
    if f.len() <= k {
        return Err(Error::DomainTooSmall(format!(
            "rho^{k} composition needs {} points, domain has {}",
            k + 1,
            f.len()
        )));
    }
    Ok(GridFunction {
        scale: f.scale.clone(),
        start: f.start + k,
        values: f.values[..f.len() - k].to_vec(),
    })
}

/// `f^{rho^k nabla^i}`: composition first, then `i` nabla derivatives.
pub fn mixed_operator(f: &GridFunction, k: usize, i: usize) -> Result<GridFunction> {
    if f.len() < k + i + 1 {
        return Err(Error::DomainTooSmall(format!(
            "rho^{k} nabla^{i} needs {} points, domain has {}",
            k + i + 1,
            f.len()
        )));
    }
    nabla_derivative_n(&compose_rho(f, k)?, i)
}

/// `sum nu(t) f(t)` over indices `lo < t <= hi`; sign-reversed if `lo > hi`.
///
/// Only the points in the half-open range are read, so `lo` may sit one
/// point to the left of the domain.
pub fn integral_by_index(f: &GridFunction, lo: usize, hi: usize) -> Result<f64> {
    let (from, to, sign) = if lo <= hi { (lo, hi, 1.0) } else { (hi, lo, -1.0) };
    if from == to {
        return Ok(0.0);
    }
    if from + 1 < f.start || to >= f.end() {
        return Err(Error::NotInDomain(f.scale.point(if to >= f.end() { to } else { from })));
    }
    let ts = &f.scale;
    let sum: f64 = (from + 1..=to)
        .map(|i| ts.nu_at(i) * f.values[i - f.start])
        .sum();
    Ok(sign * sum)
}

/// Nabla integral of `f` from `a` to `b`.
pub fn nabla_integral(f: &GridFunction, a: f64, b: f64) -> Result<f64> {
    let ts = &f.scale;
    let ia = ts.index_of(a).map_err(|_| Error::NotInDomain(a))?;
    let ib = ts.index_of(b).map_err(|_| Error::NotInDomain(b))?;
    integral_by_index(f, ia, ib)
}

/// `t -> integral_a^t f` for `t` from `a` to the end of `f`'s domain.
pub fn antiderivative(f: &GridFunction, a: usize) -> Result<GridFunction> {
    if a + 1 < f.start || a >= f.end() {
        return Err(Error::NotInDomain(f.scale.point(a.min(f.scale.last_index()))));
    }
    let mut acc = 0.0;
    let mut values = vec![0.0];
    for i in a + 1..f.end() {
        acc += f.scale.nu_at(i) * f.values[i - f.start];
        values.push(acc);
    }
    GridFunction::new(f.scale.clone(), a, values)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PartsVariant {
    /// `int f^rho g^nabla = [fg] - int f^nabla g`
    RhoFirst,
    /// `int f g^nabla = [fg] - int f^nabla g^rho`
    RhoSecond,
}

/// Left side minus right side of an integration-by-parts formula on `[a, b]`.
pub fn integration_by_parts_defect(
    f: &GridFunction,
    g: &GridFunction,
    a: f64,
    b: f64,
    variant: PartsVariant,
) -> Result<f64> {
    let ts = f.scale.clone();
    let ia = ts.index_of(a).map_err(|_| Error::NotInDomain(a))?;
    let ib = ts.index_of(b).map_err(|_| Error::NotInDomain(b))?;
    for (h, i, t) in [(f, ia, a), (g, ia, a), (f, ib, b), (g, ib, b)] {
        if !h.contains_index(i) {
            return Err(Error::NotInDomain(t));
        }
    }
    if ia == ib {
        return Ok(0.0);
    }
    let df = f.nabla()?;
    let dg = g.nabla()?;
    let (lhs_integrand, rhs_integrand) = match variant {
        PartsVariant::RhoFirst => (
            f.compose_rho(1)?.zip_with(&dg, |x, y| x * y)?,
            df.zip_with(g, |x, y| x * y)?,
        ),
        PartsVariant::RhoSecond => (
            f.zip_with(&dg, |x, y| x * y)?,
            df.zip_with(&g.compose_rho(1)?, |x, y| x * y)?,
        ),
    };
    let boundary = f.at(ib).unwrap() * g.at(ib).unwrap() - f.at(ia).unwrap() * g.at(ia).unwrap();
    let lhs = integral_by_index(&lhs_integrand, ia, ib)?;
    let rhs = boundary - integral_by_index(&rhs_integrand, ia, ib)?;
    Ok(lhs - rhs)
}

/// Rounding allowance for identity checks: `1e-12 * max(1, |f| |g| span)`.
pub fn identity_tolerance(f_norm: f64, g_norm: f64, span: f64) -> f64 {
    1e-12 * (f_norm * g_norm * span).max(1.0)
}
