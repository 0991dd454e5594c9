//! Finite time scales: ordered point sets with backward/forward jumps,
//! graininess, iterated kappa-sets and detection of the affine jump law
//! `rho(t) = a1 * t + a0` required by higher-order problems.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative slack used when deciding whether a lattice point lies in `[a, b]`.
const BOUND_SLACK: f64 = 1e-9;

/// Relative tolerance (against the span) for looking up a point by value.
const LOOKUP_TOL: f64 = 1e-12;

/// Which lattice a scale was cut from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum Family {
    IntegerLattice,
    HLattice { h: f64 },
    QLattice { q: f64 },
    /// `a, a + h, a + 2h, ...` up to `b`.
    SampledInterval { h: f64 },
    Custom,
}

impl Family {
    pub fn name(&self) -> &'static str {
        match self {
            Family::IntegerLattice => "integer_lattice",
            Family::HLattice { .. } => "h_lattice",
            Family::QLattice { .. } => "q_lattice",
            Family::SampledInterval { .. } => "sampled_interval",
            Family::Custom => "custom",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Jump {
    Rho,
    Sigma,
}

/// Coefficients of the affine backward jump law.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HCoefficients {
    pub a1: f64,
    pub a0: f64,
    /// Derived from the family tag rather than fitted.
    pub exact: bool,
    /// First-order problems impose no condition; `a1 = 1, a0 = 0` is a placeholder.
    pub vacuous: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimeScale {
    points: Vec<f64>,
    family: Family,
}

impl TimeScale {
    /// Builds a custom scale from strictly increasing finite points.
    pub fn from_points(points: Vec<f64>) -> Result<Self> {
        Self::with_family(points, Family::Custom)
    }

    fn with_family(points: Vec<f64>, family: Family) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::EmptyScale(points.len()));
        }
        if let Some(bad) = points.iter().find(|p| !p.is_finite()) {
            return Err(Error::BadParam(format!("non-finite point {bad}")));
        }
        if let Some(w) = points.windows(2).find(|w| w[1] <= w[0]) {
            return Err(Error::BadParam(format!(
                "points must be strictly increasing ({} then {})",
                w[0], w[1]
            )));
        }
        Ok(Self { points, family })
    }

    /// Intersection of the named lattice with `[a, b]`.
    pub fn make_lattice(family: Family, a: f64, b: f64) -> Result<Self> {
        if !(a.is_finite() && b.is_finite()) || a >= b {
            return Err(Error::BadParam(format!("need finite a < b, got a={a}, b={b}")));
        }
        let points = match family {
            Family::IntegerLattice => step_lattice(1.0, a, b),
            Family::HLattice { h } => {
                if !(h > 0.0 && h.is_finite()) {
                    return Err(Error::BadParam(format!("h must be positive, got {h}")));
                }
                step_lattice(h, a, b)
            }
            Family::QLattice { q } => {
                if !(q > 1.0 && q.is_finite()) {
                    return Err(Error::BadParam(format!("q must exceed 1, got {q}")));
                }
                geometric_lattice(q, a, b)
            }
            Family::SampledInterval { h } => {
                if !(h > 0.0 && h.is_finite()) {
                    return Err(Error::BadParam(format!("h must be positive, got {h}")));
                }
                let steps = ((b - a) / h + BOUND_SLACK).floor() as usize;
                let mut pts: Vec<f64> = (0..=steps).map(|k| a + k as f64 * h).collect();
                // snap the last sample onto b when the interval is an exact multiple of h
                if let Some(last) = pts.last_mut() {
                    if (b - *last).abs() <= BOUND_SLACK * h {
                        *last = b;
                    }
                }
                pts
            }
            Family::Custom => {
                return Err(Error::BadParam(
                    "custom scales are built from explicit points".into(),
                ))
            }
        };
        if points.len() < 2 {
            return Err(Error::EmptyScale(points.len()));
        }
        Self::with_family(points, family)
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn family(&self) -> Family {
        self.family
    }

    /// Number of points, `N + 1`.
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Index of the last point, `N`.
    pub fn last_index(&self) -> usize {
        self.points.len() - 1
    }

    pub fn min(&self) -> f64 {
        self.points[0]
    }

    pub fn max(&self) -> f64 {
        self.points[self.last_index()]
    }

    pub fn span(&self) -> f64 {
        self.max() - self.min()
    }

    pub fn point(&self, index: usize) -> f64 {
        self.points[index]
    }

    /// Looks a point up by value, accepting values within `1e-12 * span`.
    pub fn index_of(&self, t: f64) -> Result<usize> {
        let tol = LOOKUP_TOL * self.span().max(f64::MIN_POSITIVE);
        let i = self.points.partition_point(|&p| p < t - tol);
        match self.points.get(i) {
            Some(&p) if (p - t).abs() <= tol => Ok(i),
            _ => Err(Error::NotInScale(t)),
        }
    }

    pub fn rho_index(&self, i: usize) -> usize {
        i.saturating_sub(1)
    }

    pub fn sigma_index(&self, i: usize) -> usize {
        (i + 1).min(self.last_index())
    }

    /// Backward graininess at index `i`; zero at the minimum.
    pub fn nu_at(&self, i: usize) -> f64 {
        if i == 0 {
            0.0
        } else {
            self.points[i] - self.points[i - 1]
        }
    }

    pub fn rho(&self, t: f64) -> Result<f64> {
        Ok(self.points[self.rho_index(self.index_of(t)?)])
    }

    pub fn sigma(&self, t: f64) -> Result<f64> {
        Ok(self.points[self.sigma_index(self.index_of(t)?)])
    }

    pub fn nu(&self, t: f64) -> Result<f64> {
        Ok(self.nu_at(self.index_of(t)?))
    }

    /// `n`-fold composition of a jump operator, saturating at the endpoints.
    pub fn iterate_jump(&self, t: f64, n: usize, direction: Jump) -> Result<f64> {
        let i = self.index_of(t)?;
        let j = match direction {
            Jump::Rho => i.saturating_sub(n),
            Jump::Sigma => i.saturating_add(n).min(self.last_index()),
        };
        Ok(self.points[j])
    }

    /// `T_{kappa^j}`: the scale with its first `j` points removed.
    pub fn kappa_set(&self, j: usize) -> Result<&[f64]> {
        if j > self.last_index() {
            return Err(Error::Degenerate(format!(
                "kappa^{j} of a scale with {} points is empty",
                self.len()
            )));
        }
        Ok(&self.points[j..])
    }

    /// Default tolerance for the affine jump-law check: `1e-9 * max(1, |b|)`.
    pub fn default_h_tol(&self) -> f64 {
        1e-9 * self.max().abs().max(1.0)
    }

    pub fn h_coefficients(&self, r: usize) -> Result<HCoefficients> {
        self.h_coefficients_with_tol(r, self.default_h_tol())
    }

    /// Detects `rho(t) = a1 t + a0` on `T_kappa`. Vacuous for `r = 1`.
    pub fn h_coefficients_with_tol(&self, r: usize, tol: f64) -> Result<HCoefficients> {
        if r == 0 {
            return Err(Error::BadParam("order r must be at least 1".into()));
        }
        if r == 1 {
            return Ok(HCoefficients {
                a1: 1.0,
                a0: 0.0,
                exact: false,
                vacuous: true,
            });
        }
        let p = &self.points;
        let (a1, a0, exact) = match self.family {
            Family::IntegerLattice => (1.0, -1.0, true),
            Family::HLattice { h } | Family::SampledInterval { h } => (1.0, -h, true),
            Family::QLattice { q } => (1.0 / q, 0.0, true),
            Family::Custom if p.len() == 2 => (1.0, p[0] - p[1], false),
            Family::Custom => {
                let a1 = (p[1] - p[0]) / (p[2] - p[1]);
                (a1, p[0] - a1 * p[1], false)
            }
        };
        let coeffs = HCoefficients {
            a1,
            a0,
            exact,
            vacuous: false,
        };
        let (worst, residual) = self.h_residual(&coeffs);
        if residual > tol {
            return Err(Error::HViolated {
                point: p[worst],
                residual,
                tolerance: tol,
            });
        }
        Ok(coeffs)
    }

    /// Worst index and value of `|rho(t) - a1 t - a0|` over `T_kappa`.
    pub fn h_residual(&self, h: &HCoefficients) -> (usize, f64) {
        (1..self.len())
            .map(|i| (i, (self.points[i - 1] - h.a1 * self.points[i] - h.a0).abs()))
            .fold((1, 0.0), |best, cur| if cur.1 > best.1 { cur } else { best })
    }

    /// Number of points needed for a non-trivial problem of order `r`.
    pub fn min_points_for_order(r: usize) -> usize {
        2 * r + 1
    }
}

fn step_lattice(h: f64, a: f64, b: f64) -> Vec<f64> {
    let lo = (a / h - BOUND_SLACK).ceil() as i64;
    let hi = (b / h + BOUND_SLACK).floor() as i64;
    (lo..=hi).map(|k| k as f64 * h).collect()
}

fn geometric_lattice(q: f64, a: f64, b: f64) -> Vec<f64> {
    let mut k: i32 = if a > 1.0 {
        (a.ln() / q.ln() - BOUND_SLACK).ceil().max(0.0) as i32
    } else {
        0
    };
    let mut pts = Vec::new();
    loop {
        let p = q.powi(k);
        if p > b * (1.0 + BOUND_SLACK) {
            break;
        }
        if p >= a * (1.0 - BOUND_SLACK) {
            pts.push(p);
        }
        k += 1;
    }
    pts
}
