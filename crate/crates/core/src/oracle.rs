//! Randomised and exhaustive checks of the calculus identities and lemmas
//! that the variational machinery rests on.
//!
//! Every trial draws its data from a `ChaCha8Rng` seeded with
//! `seed + trial`, so any failing trial can be replayed from the seed list
//! in its [`TrialReport`].

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::nabla::{
    antiderivative, identity_tolerance, integral_by_index, integration_by_parts_defect, GridFunction,
    PartsVariant,
};
use crate::timescale::TimeScale;
use crate::variational::{alternating_sum, el_coefficient, pairing, pin_rows};

/// Outcome of one named check. `worst_defect` and `tolerance` come from the
/// trial with the largest defect-to-tolerance ratio, so a check passes
/// exactly when `worst_defect <= tolerance`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialReport {
    pub name: String,
    pub trials: usize,
    pub failures: usize,
    pub worst_defect: f64,
    pub tolerance: f64,
    pub failing_seeds: Vec<u64>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub components: Vec<TrialReport>,
}

impl TrialReport {
    pub fn passed(&self) -> bool {
        self.failures == 0 && self.components.iter().all(TrialReport::passed)
    }
}

struct Tally {
    name: String,
    trials: usize,
    failures: usize,
    worst: Option<(f64, f64, f64)>,
    failing_seeds: Vec<u64>,
}

impl Tally {
    fn new(name: &str) -> Self {
        Self {
            name: name.to_string(),
            trials: 0,
            failures: 0,
            worst: None,
            failing_seeds: Vec::new(),
        }
    }

    /// Records one trial; returns whether it passed.
    fn record(&mut self, seed: u64, defect: f64, tolerance: f64) -> bool {
        self.trials += 1;
        let ratio = if defect == 0.0 {
            0.0
        } else if tolerance > 0.0 {
            defect / tolerance
        } else {
            f64::INFINITY
        };
        if self.worst.is_none_or(|(r, _, _)| ratio > r) {
            self.worst = Some((ratio, defect, tolerance));
        }
        // NaN defects fail too
        let ok = defect <= tolerance;
        if !ok {
            self.failures += 1;
            self.failing_seeds.push(seed);
        }
        ok
    }

    fn finish(self, components: Vec<TrialReport>) -> TrialReport {
        let (_, worst_defect, tolerance) = self.worst.unwrap_or((0.0, 0.0, 0.0));
        TrialReport {
            name: self.name,
            trials: self.trials,
            failures: self.failures,
            worst_defect,
            tolerance,
            failing_seeds: self.failing_seeds,
            components,
        }
    }
}

fn trial_rng(seed: u64, trial: usize) -> (u64, ChaCha8Rng) {
    let s = seed.wrapping_add(trial as u64);
    (s, ChaCha8Rng::seed_from_u64(s))
}

fn random_values(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..=1.0)).collect()
}

fn random_grid(ts: &Arc<TimeScale>, start: usize, rng: &mut ChaCha8Rng) -> GridFunction {
    let values = random_values(rng, ts.len() - start);
    GridFunction::new(ts.clone(), start, values).expect("finite values on a non-empty domain")
}

fn min_nu(ts: &TimeScale) -> f64 {
    (1..ts.len()).map(|i| ts.nu_at(i)).fold(f64::INFINITY, f64::min)
}

// ---------------------------------------------------------------------------
// positivity

/// Nonnegative `f` with zero integral over `[a, b]` must vanish on `(a, b]`,
/// the left-scattered minimum being excluded. Enumerates every indicator
/// function on the scale when it has at most 12 points and a seeded sample
/// of 4096 otherwise.
pub fn check_positivity(ts: &Arc<TimeScale>, a: f64, b: f64, seed: u64) -> Result<TrialReport> {
    let ia = ts.index_of(a)?;
    let ib = ts.index_of(b)?;
    if ia > ib {
        return Err(Error::BadParam(format!("need a <= b, got a = {a}, b = {b}")));
    }
    let n = ts.len();
    let mut tally = Tally::new("positivity");
    let mut check = |mask: &dyn Fn(usize) -> bool, trial_seed: u64| -> Result<()> {
        let values: Vec<f64> = (0..n).map(|i| if mask(i) { 1.0 } else { 0.0 }).collect();
        let f = GridFunction::new(ts.clone(), 0, values)?;
        let integral = integral_by_index(&f, ia, ib)?;
        // hypothesis not met: nothing to assert
        let defect = if integral != 0.0 {
            0.0
        } else {
            (ia + 1..=ib).map(|i| f.values()[i]).fold(0.0, f64::max)
        };
        tally.record(trial_seed, defect, 0.0);
        Ok(())
    };
    if n <= 12 {
        for bits in 0u64..1 << n {
            check(&|i| bits >> i & 1 == 1, bits)?;
        }
    } else {
        for trial in 0..1 << 12 {
            let (s, mut rng) = trial_rng(seed, trial);
            let bits: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.5)).collect();
            check(&|i| bits[i], s)?;
        }
    }

    // Mass at the left end is invisible to the integral, so f may be
    // nonzero on [a, b] itself.
    let mut edge = Tally::new("positivity_left_endpoint");
    let mut values = vec![0.0; n];
    values[ia] = 1.0;
    let f = GridFunction::new(ts.clone(), 0, values)?;
    let integral = integral_by_index(&f, ia, ib)?;
    edge.record(0, integral.abs(), 0.0);
    Ok(tally.finish(vec![edge.finish(Vec::new())]))
}

// ---------------------------------------------------------------------------
// vanishing lemmas

fn require_h(ts: &TimeScale, r: usize) -> Result<f64> {
    Ok(ts.h_coefficients(r)?.a1)
}

/// `eta^{nabla^i}` evaluated at scale index `at`.
fn nabla_power(eta: &GridFunction, i: usize, at: usize) -> Result<f64> {
    let d = eta.nabla_n(i)?;
    d.at(at)
        .ok_or_else(|| Error::NotInDomain(eta.scale().point(at)))
}

/// Random `eta` with `eta^{nabla^i}` vanishing for `i = 0..=r` at both
/// `sigma^r(a)` and `b`; checks `eta^{rho nabla^{i-1}}(b) = 0` for
/// `i = 1..=r` and `eta^{nabla^i}(sigma^i(a)) = 0` for `i = 0..r`.
pub fn check_vanishing_lemmas(ts: &Arc<TimeScale>, r: usize, trials: usize, seed: u64) -> Result<TrialReport> {
    if r == 0 {
        return Err(Error::BadParam("order must be at least 1".into()));
    }
    require_h(ts, r)?;
    let n = ts.last_index();
    if ts.len() < 2 * (r + 1) {
        return Err(Error::DegenerateProblem(format!(
            "pinning {} rows at each end needs at least {} points",
            r + 1,
            2 * (r + 1)
        )));
    }
    let zeros = vec![0.0; r + 1];
    let left = pin_rows(ts, r, &zeros)?;
    let right = pin_rows(ts, n, &zeros)?;
    let mut right_end = Tally::new("vanishing_right_end");
    let mut left_end = Tally::new("vanishing_left_end");
    for trial in 0..trials {
        let (s, mut rng) = trial_rng(seed, trial);
        let mut values = random_values(&mut rng, ts.len());
        values[..=r].copy_from_slice(&left);
        values[n - r..].copy_from_slice(&right);
        let eta = GridFunction::new(ts.clone(), 0, values)?;
        let tol = 1e-12 * (1.0 + eta.sup_norm() / min_nu(ts).powi(r as i32).min(1.0));
        let mut worst_b = 0.0f64;
        for i in 1..=r {
            let v = eta.compose_rho(1)?.nabla_n(i - 1)?;
            worst_b = worst_b.max(v.at(n).unwrap().abs());
        }
        right_end.record(s, worst_b, tol);
        let mut worst_a = 0.0f64;
        for i in 0..r {
            worst_a = worst_a.max(nabla_power(&eta, i, i)?.abs());
        }
        left_end.record(s, worst_a, tol);
    }
    let mut all = Tally::new(&format!("vanishing_lemmas_r{r}"));
    all.trials = trials;
    let reports = vec![right_end.finish(Vec::new()), left_end.finish(Vec::new())];
    let mut failing: Vec<u64> = reports.iter().flat_map(|c| c.failing_seeds.clone()).collect();
    failing.sort_unstable();
    failing.dedup();
    all.failures = failing.len();
    all.failing_seeds = failing;
    all.worst = worst_of(&reports);
    Ok(all.finish(reports))
}

fn worst_of(reports: &[TrialReport]) -> Option<(f64, f64, f64)> {
    reports
        .iter()
        .map(|c| {
            let ratio = if c.worst_defect == 0.0 {
                0.0
            } else if c.tolerance > 0.0 {
                c.worst_defect / c.tolerance
            } else {
                f64::INFINITY
            };
            (ratio, c.worst_defect, c.tolerance)
        })
        .fold(None, |acc: Option<(f64, f64, f64)>, x| match acc {
            Some(a) if a.0 >= x.0 => Some(a),
            _ => Some(x),
        })
}

fn merge(name: &str, trials: usize, components: Vec<TrialReport>) -> TrialReport {
    let mut failing: Vec<u64> = components.iter().flat_map(|c| c.failing_seeds.clone()).collect();
    failing.sort_unstable();
    failing.dedup();
    let mut tally = Tally::new(name);
    tally.trials = trials;
    tally.failures = failing.len();
    tally.failing_seeds = failing;
    tally.worst = worst_of(&components);
    tally.finish(components)
}

// ---------------------------------------------------------------------------
// fundamental lemma

/// Random admissible variation: zero on the `r` outermost points at each end.
fn random_variation(ts: &Arc<TimeScale>, r: usize, rng: &mut ChaCha8Rng) -> GridFunction {
    let mut values = random_values(rng, ts.len());
    let n = ts.last_index();
    values[..r].iter_mut().for_each(|v| *v = 0.0);
    values[n + 1 - r..].iter_mut().for_each(|v| *v = 0.0);
    GridFunction::new(ts.clone(), 0, values).expect("finite values")
}

/// `integral sum_i |f_i| |eta^{rho^{r-i} nabla^i}|`: the magnitude against
/// which rounding in [`pairing`] is judged.
fn pairing_magnitude(fs: &[GridFunction], eta: &GridFunction) -> Result<f64> {
    let abs_fs: Vec<GridFunction> = fs.iter().map(|f| f.map(f64::abs)).collect();
    let r = fs.len() - 1;
    let mut total = 0.0;
    for (i, f) in abs_fs.iter().enumerate() {
        let e = eta.mixed(r - i, i)?.map(f64::abs);
        let prod = f.zip_with(&e, |a, b| a * b)?;
        total += integral_by_index(&prod, r - 1, eta.scale().last_index())?;
    }
    Ok(total)
}

/// Higher-order fundamental lemma, both directions.
///
/// Forward: `f_1..f_r` random and `f_0` solved from the vanishing
/// alternating sum, so the pairing with every admissible `eta` must vanish.
/// Contrapositive: for random `f_i` whose alternating sum is not small, some
/// coordinate bump `eta` must give a nonzero pairing.
pub fn check_fundamental_lemma(ts: &Arc<TimeScale>, r: usize, trials: usize, seed: u64) -> Result<TrialReport> {
    if r == 0 {
        return Err(Error::BadParam("order must be at least 1".into()));
    }
    let a1 = require_h(ts, r)?;
    if ts.len() < 2 * r + 1 {
        return Err(Error::DegenerateProblem(format!(
            "order {r} needs at least {} points",
            2 * r + 1
        )));
    }
    let n = ts.last_index();
    let mut forward = Tally::new("fundamental_forward");
    let mut contra = Tally::new("fundamental_contrapositive");
    for trial in 0..trials {
        let (s, mut rng) = trial_rng(seed, trial);

        let mut fs: Vec<GridFunction> = (0..=r).map(|_| random_grid(ts, r, &mut rng)).collect();
        let mut head = fs[0].values()[..r].to_vec();
        let mut rest = vec![0.0; n + 1 - 2 * r];
        for i in 1..=r {
            let c = el_coefficient(i, a1);
            let d = fs[i].nabla_n(i)?.restrict_from(2 * r)?;
            for (acc, v) in rest.iter_mut().zip(d.values()) {
                *acc -= c * v;
            }
        }
        head.append(&mut rest);
        fs[0] = GridFunction::new(ts.clone(), r, head)?;
        let eta = random_variation(ts, r, &mut rng);
        let defect = pairing(&fs, &eta)?.abs();
        let tol = 1e-12 * pairing_magnitude(&fs, &eta)?.max(1.0);
        forward.record(s, defect, tol);

        let fs: Vec<GridFunction> = (0..=r).map(|_| random_grid(ts, r, &mut rng)).collect();
        let (sum, _) = alternating_sum(&fs, a1)?;
        let defect = if sum.sup_norm() < 1e-6 {
            0.0
        } else {
            let mut found = false;
            for j in r..=n - r {
                let mut bump = vec![0.0; ts.len()];
                bump[j] = 1.0;
                let eta = GridFunction::new(ts.clone(), 0, bump)?;
                let p = pairing(&fs, &eta)?;
                if p.abs() > 1e-12 * pairing_magnitude(&fs, &eta)?.max(1.0) {
                    found = true;
                    break;
                }
            }
            if found { 0.0 } else { sum.sup_norm() }
        };
        contra.record(s, defect, 0.0);
    }
    Ok(merge(
        &format!("fundamental_lemma_r{r}"),
        trials,
        vec![forward.finish(Vec::new()), contra.finish(Vec::new())],
    ))
}

// ---------------------------------------------------------------------------
// identity suite

const IDENTITY_NAMES: [&str; 9] = [
    "reconstruction",
    "parts_rho_first",
    "parts_rho_second",
    "rho_nabla_commutation",
    "single_step_integral",
    "product_rule",
    "fundamental_theorem",
    "additivity",
    "linearity",
];

/// Per-identity `(defect, tolerance)` for one trial. `None` marks an
/// identity that does not apply on this scale.
fn identity_trial(ts: &Arc<TimeScale>, rng: &mut ChaCha8Rng, inject_fault: bool) -> Result<Vec<Option<(f64, f64)>>> {
    let n = ts.last_index();
    let span = ts.span();
    let f = random_grid(ts, 0, rng);
    let g = random_grid(ts, 0, rng);
    let (fnorm, gnorm) = (f.sup_norm(), g.sup_norm());
    let df = f.nabla()?;
    let dg = g.nabla()?;
    let fr = f.compose_rho(1)?;
    let gr = g.compose_rho(1)?;
    let dfnorm = df.sup_norm();
    let mut out = Vec::with_capacity(IDENTITY_NAMES.len());

    // f^rho = f - nu f^nabla
    let sign = if inject_fault { 1.0 } else { -1.0 };
    let mut worst = 0.0f64;
    for i in 1..=n {
        let rebuilt = f.values()[i] + sign * ts.nu_at(i) * df.at(i).unwrap();
        worst = worst.max((fr.at(i).unwrap() - rebuilt).abs());
    }
    out.push(Some((worst, 1e-12 * fnorm.max(1.0))));

    let ia = rng.gen_range(0..n);
    let ib = rng.gen_range(ia + 1..=n);
    let (a, b) = (ts.point(ia), ts.point(ib));
    let tol = identity_tolerance(fnorm, gnorm, span);
    for variant in [PartsVariant::RhoFirst, PartsVariant::RhoSecond] {
        let d = integration_by_parts_defect(&f, &g, a, b, variant)?;
        out.push(Some((d.abs(), tol)));
    }

    out.push(match (n >= 2).then(|| ts.h_coefficients(2)).and_then(|h| h.ok()) {
        Some(h) => {
            let lhs = f.mixed(1, 1)?;
            let rhs = df.compose_rho(1)?;
            let (_, h_res) = ts.h_residual(&h);
            let mut worst = 0.0f64;
            for i in 2..=n {
                worst = worst.max((lhs.at(i).unwrap() - h.a1 * rhs.at(i).unwrap()).abs());
            }
            let tol = 1e-12 * dfnorm.max(1.0) + 4.0 * h_res / min_nu(ts) * dfnorm;
            Some((worst, tol))
        }
        None => None,
    });

    let mut worst = 0.0f64;
    for i in 1..=n {
        let step = integral_by_index(&f, i - 1, i)?;
        worst = worst.max((step - ts.nu_at(i) * f.values()[i]).abs());
    }
    out.push(Some((worst, 1e-12 * (fnorm * span).max(1.0))));

    let fg = f.zip_with(&g, |x, y| x * y)?;
    let dfg = fg.nabla()?;
    let mut worst = 0.0f64;
    for i in 1..=n {
        let (dfi, dgi) = (df.at(i).unwrap(), dg.at(i).unwrap());
        let one = dfi * g.values()[i] + fr.at(i).unwrap() * dgi;
        let two = dfi * gr.at(i).unwrap() + f.values()[i] * dgi;
        let d = dfg.at(i).unwrap();
        worst = worst.max((d - one).abs()).max((d - two).abs());
    }
    out.push(Some((worst, 1e-12 * (dfnorm * gnorm + fnorm * dg.sup_norm()).max(1.0))));

    let big_f = antiderivative(&f, 0)?;
    let dbig = big_f.nabla()?;
    let mut worst = 0.0f64;
    for i in 1..=n {
        worst = worst.max((dbig.at(i).unwrap() - f.values()[i]).abs());
    }
    out.push(Some((worst, 1e-12 * (big_f.sup_norm() / min_nu(ts)).max(1.0))));

    let ic = rng.gen_range(ia..=ib);
    let whole = integral_by_index(&f, ia, ib)?;
    let parts = integral_by_index(&f, ia, ic)? + integral_by_index(&f, ic, ib)?;
    out.push(Some(((whole - parts).abs(), 1e-12 * (fnorm * span).max(1.0))));

    let alpha: f64 = rng.gen_range(-2.0..=2.0);
    let comb = f.zip_with(&g, |x, y| alpha * x + y)?.nabla()?;
    let mut worst = 0.0f64;
    for i in 1..=n {
        worst = worst.max((comb.at(i).unwrap() - (alpha * df.at(i).unwrap() + dg.at(i).unwrap())).abs());
    }
    out.push(Some((worst, 1e-12 * (2.0 * dfnorm + dg.sup_norm()).max(1.0))));
    Ok(out)
}

/// Runs the derivative and integral identities on random functions. The
/// `rho nabla` commutation law is only checked where the scale's backward
/// jump is affine. With `inject_fault` the reconstruction identity is
/// evaluated with the wrong sign, which must make the suite fail.
pub fn check_identity_suite(ts: &Arc<TimeScale>, trials: usize, seed: u64, inject_fault: bool) -> Result<TrialReport> {
    if ts.len() < 3 {
        return Err(Error::DomainTooSmall("the identity suite needs at least 3 points".into()));
    }
    let mut tallies: Vec<Tally> = IDENTITY_NAMES.iter().map(|n| Tally::new(n)).collect();
    for trial in 0..trials {
        let (s, mut rng) = trial_rng(seed, trial);
        for (tally, res) in tallies.iter_mut().zip(identity_trial(ts, &mut rng, inject_fault)?) {
            if let Some((defect, tol)) = res {
                tally.record(s, defect, tol);
            }
        }
    }
    let components = tallies
        .into_iter()
        .filter(|t| t.trials > 0)
        .map(|t| t.finish(Vec::new()))
        .collect();
    Ok(merge("identity_suite", trials, components))
}

/// On a finite scale the only point with `sigma(t) = t` is the maximum, so
/// no point of `T_kappa` other than the maximum is right-dense and
/// left-scattered. Audits every point.
pub fn audit_right_dense_left_scattered(ts: &TimeScale) -> TrialReport {
    let mut tally = Tally::new("no_right_dense_left_scattered");
    let n = ts.last_index();
    for i in 0..=n {
        let t = ts.point(i);
        let rho = ts.point(ts.rho_index(i));
        let sigma = ts.point(ts.sigma_index(i));
        let bad = i != n && rho < t && sigma == t;
        tally.record(i as u64, if bad { 1.0 } else { 0.0 }, 0.0);
    }
    tally.finish(Vec::new())
}

#[derive(Debug, Clone, Serialize)]
pub struct SuiteReport {
    pub family: String,
    pub points: usize,
    pub seed: u64,
    pub trials: usize,
    pub passed: bool,
    pub reports: Vec<TrialReport>,
}

/// Everything that applies to `ts`: identities, positivity, the structural
/// audit, and the vanishing and fundamental lemmas for orders 1 and 2
/// where the scale is large enough and the backward jump is affine.
pub fn run_suite(ts: &Arc<TimeScale>, trials: usize, seed: u64, inject_fault: bool) -> Result<SuiteReport> {
    let mut reports = vec![
        check_identity_suite(ts, trials, seed, inject_fault)?,
        check_positivity(ts, ts.min(), ts.max(), seed)?,
        audit_right_dense_left_scattered(ts),
    ];
    for r in 1..=2 {
        if ts.h_coefficients(r).is_err() {
            continue;
        }
        if ts.len() >= 2 * (r + 1) {
            reports.push(check_vanishing_lemmas(ts, r, trials, seed)?);
        }
        if ts.len() > 2 * r {
            reports.push(check_fundamental_lemma(ts, r, trials, seed)?);
        }
    }
    Ok(SuiteReport {
        family: ts.family().name().to_string(),
        points: ts.len(),
        seed,
        trials,
        passed: reports.iter().all(TrialReport::passed),
        reports,
    })
}
