use std::sync::Arc;

use nablavar::expr::{central_difference, parse, BinOp, Expr, Func};
use nablavar::nabla::{antiderivative, integral_by_index, integration_by_parts_defect, PartsVariant};
use nablavar::solver::{solve_direct, DirectOptions};
use nablavar::variational::pin_rows;
use nablavar::{BoundaryConditions, Error, Family, GridFunction, Jump, Lagrangian, TimeScale, VariationalProblem};
use proptest::prelude::*;

/// Strictly increasing points with gaps in `[0.05, 2]`.
fn points(min: usize, max: usize) -> impl Strategy<Value = Vec<f64>> {
    (-5.0..5.0f64, prop::collection::vec(0.05..2.0f64, min - 1..max)).prop_map(|(start, gaps)| {
        let mut p = vec![start];
        for g in gaps {
            p.push(p.last().unwrap() + g);
        }
        p
    })
}

fn scale_and_values(min: usize, max: usize, k: usize) -> impl Strategy<Value = (Arc<TimeScale>, Vec<Vec<f64>>)> {
    points(min, max).prop_flat_map(move |p| {
        let n = p.len();
        let ts = Arc::new(TimeScale::from_points(p).unwrap());
        (Just(ts), prop::collection::vec(prop::collection::vec(-3.0..3.0f64, n), k))
    })
}

/// Scales on which the backward jump is affine.
fn h_scale() -> impl Strategy<Value = Arc<TimeScale>> {
    prop_oneof![
        (7usize..14).prop_map(|n| TimeScale::make_lattice(Family::IntegerLattice, 0.0, (n - 1) as f64).unwrap()),
        (7usize..14, 0.1..1.0f64).prop_map(|(n, h)| {
            TimeScale::make_lattice(Family::HLattice { h }, 0.0, h * (n - 1) as f64).unwrap()
        }),
        (7usize..12, 1.1..2.5f64).prop_map(|(n, q)| {
            TimeScale::make_lattice(Family::QLattice { q }, 1.0, q.powi(n as i32 - 1) * (1.0 + 1e-12)).unwrap()
        }),
    ]
    .prop_map(Arc::new)
}

fn grid(ts: &Arc<TimeScale>, v: &[f64]) -> GridFunction {
    GridFunction::new(ts.clone(), 0, v.to_vec()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn nabla_is_linear((ts, v) in scale_and_values(3, 20, 2), alpha in -3.0..3.0f64) {
        let (f, g) = (grid(&ts, &v[0]), grid(&ts, &v[1]));
        let lhs = f.zip_with(&g, |x, y| alpha * x + y).unwrap().nabla().unwrap();
        let (df, dg) = (f.nabla().unwrap(), g.nabla().unwrap());
        for i in 1..ts.len() {
            let rhs = alpha * df.at(i).unwrap() + dg.at(i).unwrap();
            prop_assert!((lhs.at(i).unwrap() - rhs).abs() <= 1e-11 * (1.0 + rhs.abs() + df.sup_norm()));
        }
    }

    #[test]
    fn product_rule((ts, v) in scale_and_values(3, 20, 2)) {
        let (f, g) = (grid(&ts, &v[0]), grid(&ts, &v[1]));
        let dfg = f.zip_with(&g, |x, y| x * y).unwrap().nabla().unwrap();
        let (df, dg, fr) = (f.nabla().unwrap(), g.nabla().unwrap(), f.compose_rho(1).unwrap());
        for i in 1..ts.len() {
            let rhs = df.at(i).unwrap() * v[1][i] + fr.at(i).unwrap() * dg.at(i).unwrap();
            let scale = 1.0 + df.sup_norm() * 3.0 + dg.sup_norm() * 3.0;
            prop_assert!((dfg.at(i).unwrap() - rhs).abs() <= 1e-12 * scale);
        }
    }

    #[test]
    fn rho_reconstruction((ts, v) in scale_and_values(2, 20, 1)) {
        let f = grid(&ts, &v[0]);
        let (df, fr) = (f.nabla().unwrap(), f.compose_rho(1).unwrap());
        for i in 1..ts.len() {
            let rebuilt = v[0][i] - ts.nu_at(i) * df.at(i).unwrap();
            prop_assert!((fr.at(i).unwrap() - rebuilt).abs() <= 1e-13 * 8.0);
            prop_assert_eq!(fr.at(i).unwrap(), v[0][i - 1]);
        }
    }

    #[test]
    fn integration_by_parts((ts, v) in scale_and_values(2, 20, 2)) {
        let (f, g) = (grid(&ts, &v[0]), grid(&ts, &v[1]));
        let span = ts.span();
        for variant in [PartsVariant::RhoFirst, PartsVariant::RhoSecond] {
            let d = integration_by_parts_defect(&f, &g, ts.min(), ts.max(), variant).unwrap();
            prop_assert!(d.abs() <= 1e-12 * (9.0 * span * ts.len() as f64).max(1.0));
        }
    }

    #[test]
    fn integral_additivity_and_sign((ts, v) in scale_and_values(2, 20, 1), picks in prop::array::uniform3(0.0..1.0f64)) {
        let f = grid(&ts, &v[0]);
        let n = ts.last_index();
        let mut idx: Vec<usize> = picks.iter().map(|p| (p * n as f64).round() as usize).collect();
        idx.sort_unstable();
        let (a, c, b) = (idx[0], idx[1], idx[2]);
        let whole = integral_by_index(&f, a, b).unwrap();
        let split = integral_by_index(&f, a, c).unwrap() + integral_by_index(&f, c, b).unwrap();
        prop_assert!((whole - split).abs() <= 1e-12 * (3.0 * ts.span()).max(1.0));
        prop_assert_eq!(integral_by_index(&f, b, a).unwrap(), -whole);
        prop_assert_eq!(integral_by_index(&f, a, a).unwrap(), 0.0);
        // plain sum over (a, b]
        let naive: f64 = (a + 1..=b).map(|i| (ts.point(i) - ts.point(i - 1)) * v[0][i]).sum();
        prop_assert!((whole - naive).abs() <= 1e-12 * (3.0 * ts.span()).max(1.0));
    }

    #[test]
    fn antiderivative_inverts_nabla((ts, v) in scale_and_values(2, 20, 1)) {
        let f = grid(&ts, &v[0]);
        let big = antiderivative(&f, 0).unwrap();
        let d = big.nabla().unwrap();
        let min_nu = (1..ts.len()).map(|i| ts.nu_at(i)).fold(f64::INFINITY, f64::min);
        for i in 1..ts.len() {
            prop_assert!((d.at(i).unwrap() - v[0][i]).abs() <= 1e-12 * (big.sup_norm() / min_nu).max(1.0) * 4.0);
        }
    }

    #[test]
    fn positivity((ts, v) in scale_and_values(2, 16, 1), zeros in prop::collection::vec(any::<bool>(), 16)) {
        let vals: Vec<f64> = v[0].iter().zip(&zeros).map(|(x, z)| if *z { 0.0 } else { x.abs() }).collect();
        let f = grid(&ts, &vals);
        let integral = integral_by_index(&f, 0, ts.last_index()).unwrap();
        prop_assert!(integral >= 0.0);
        let vanishes = vals[1..].iter().all(|&x| x == 0.0);
        prop_assert_eq!(integral == 0.0, vanishes);
    }

    #[test]
    fn kappa_sets_compose(p in points(2, 20), i in 0usize..10, j in 0usize..10) {
        let ts = TimeScale::from_points(p).unwrap();
        let n = ts.last_index();
        if i + j <= n {
            let inner = &ts.kappa_set(i).unwrap()[j..];
            prop_assert_eq!(ts.kappa_set(i + j).unwrap(), inner);
            prop_assert_eq!(ts.kappa_set(i + j).unwrap().len(), n + 1 - i - j);
        } else {
            prop_assert!(ts.kappa_set(i + j).is_err());
        }
    }

    #[test]
    fn nabla_domains_shrink((ts, v) in scale_and_values(2, 12, 1), k in 0usize..4, i in 0usize..4) {
        let f = grid(&ts, &v[0]);
        match f.mixed(k, i) {
            Ok(g) => {
                prop_assert_eq!(g.start(), k + i);
                prop_assert_eq!(g.domain_points(), ts.kappa_set(k + i).unwrap());
            }
            Err(_) => prop_assert!(k + i >= ts.len()),
        }
    }

    #[test]
    fn jumps_are_inverse(p in points(2, 20)) {
        let ts = TimeScale::from_points(p).unwrap();
        let n = ts.last_index();
        for i in 0..=n {
            let t = ts.point(i);
            if i < n {
                prop_assert_eq!(ts.rho(ts.sigma(t).unwrap()).unwrap(), t);
            }
            if i > 0 {
                prop_assert_eq!(ts.sigma(ts.rho(t).unwrap()).unwrap(), t);
                prop_assert_eq!(ts.nu(t).unwrap(), t - ts.point(i - 1));
            }
            prop_assert_eq!(ts.iterate_jump(t, i, Jump::Rho).unwrap(), ts.point(0));
            prop_assert_eq!(ts.iterate_jump(t, n - i, Jump::Sigma).unwrap(), ts.point(n));
        }
    }

    #[test]
    fn pinned_rows_are_met(p in points(8, 16), rows in prop::collection::vec(-2.0..2.0f64, 1..4)) {
        let ts = TimeScale::from_points(p).unwrap();
        let anchor = ts.last_index() - 2;
        let vals = pin_rows(&ts, anchor, &rows).unwrap();
        let m = rows.len();
        let mut full = vec![0.0; ts.len()];
        full[anchor + 1 - m..=anchor].copy_from_slice(&vals);
        let f = GridFunction::new(Arc::new(ts), 0, full).unwrap();
        for (i, row) in rows.iter().enumerate() {
            let got = f.nabla_n(i).unwrap().at(anchor).unwrap();
            prop_assert!((got - row).abs() <= 1e-9 * (1.0 + row.abs()), "row {} {} vs {}", i, got, row);
        }
    }
}

// ---------------------------------------------------------------------------
// expressions

fn expr_tree() -> impl Strategy<Value = Expr> {
    let leaf = prop_oneof![
        (0u32..50).prop_map(|k| Expr::Num(k as f64 / 4.0)),
        Just(Expr::Time),
        (0usize..3).prop_map(Expr::Var),
    ];
    leaf.prop_recursive(5, 32, 2, |inner| {
        prop_oneof![
            inner.clone().prop_map(|e| Expr::Neg(Box::new(e))),
            (
                prop_oneof![Just(BinOp::Add), Just(BinOp::Sub), Just(BinOp::Mul), Just(BinOp::Div), Just(BinOp::Pow)],
                inner.clone(),
                inner.clone()
            )
                .prop_map(|(op, a, b)| Expr::Bin(op, Box::new(a), Box::new(b))),
            (
                prop_oneof![
                    Just(Func::Sin),
                    Just(Func::Cos),
                    Just(Func::Exp),
                    Just(Func::Log),
                    Just(Func::Sqrt),
                    Just(Func::Abs)
                ],
                inner
            )
                .prop_map(|(f, a)| Expr::Call(f, Box::new(a))),
        ]
    })
}

/// Smooth expressions on which central differences are trustworthy.
fn smooth_tree() -> impl Strategy<Value = Expr> {
    let leaf = prop_oneof![
        (1u32..8).prop_map(|k| Expr::Num(k as f64 / 4.0)),
        Just(Expr::Time),
        (0usize..3).prop_map(Expr::Var),
    ];
    leaf.prop_recursive(4, 24, 2, |inner| {
        prop_oneof![
            inner.clone().prop_map(|e| Expr::Neg(Box::new(e))),
            (prop_oneof![Just(BinOp::Add), Just(BinOp::Sub), Just(BinOp::Mul)], inner.clone(), inner.clone())
                .prop_map(|(op, a, b)| Expr::Bin(op, Box::new(a), Box::new(b))),
            (inner.clone(), 2u32..4).prop_map(|(a, k)| Expr::Bin(BinOp::Pow, Box::new(a), Box::new(Expr::Num(k as f64)))),
            (prop_oneof![Just(Func::Sin), Just(Func::Cos)], inner.clone()).prop_map(|(f, a)| Expr::Call(f, Box::new(a))),
            inner.prop_map(|a| Expr::Call(
                Func::Exp,
                Box::new(Expr::Call(Func::Sin, Box::new(a)))
            )),
        ]
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn print_parse_round_trip(e in expr_tree()) {
        let printed = e.to_string();
        let back = parse(&printed, 2).unwrap();
        prop_assert_eq!(&back, &e, "printed as {}", printed);
        prop_assert_eq!(back.to_string(), printed);
    }

    #[test]
    fn symbolic_partials_match_central_differences(
        e in smooth_tree(),
        t in -1.5..1.5f64,
        u in prop::array::uniform3(-1.5..1.5f64),
    ) {
        for i in 0..3 {
            let exact = e.partial(i).eval(t, &u).unwrap();
            let fd = central_difference(|x| e.eval(t, x).unwrap(), &u, i).unwrap();
            let mag = [-1.0, 0.0, 1.0]
                .iter()
                .map(|s| {
                    let mut x = u;
                    x[i] += s * 1e-3;
                    e.eval(t, &x).unwrap().abs()
                })
                .fold(1.0f64, f64::max);
            prop_assert!((exact - fd).abs() <= 1e-5 * mag.max(exact.abs()), "d/du{} of {}: {} vs {}", i, e, exact, fd);
        }
    }
}

// ---------------------------------------------------------------------------
// variational properties

fn quadratic_source(r: usize, coeffs: &[f64]) -> String {
    let mut terms: Vec<String> = (0..=r).map(|i| format!("{}*u{i}^2", coeffs[i])).collect();
    terms.push(format!("{}*t*u0", coeffs[r + 1]));
    terms.join(" + ")
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn gradient_is_graininess_times_residual(
        ts in h_scale(),
        r in 1usize..=2,
        coeffs in prop::collection::vec(0.1..2.0f64, 4),
        free_noise in prop::collection::vec(-1.0..1.0f64, 16),
    ) {
        let lag = Lagrangian::parse(&quadratic_source(r, &coeffs), r).unwrap();
        let p = VariationalProblem::new(ts.clone(), lag, BoundaryConditions::new(vec![0.5; r], vec![-0.5; r])).unwrap();
        let free: Vec<f64> = free_noise[..p.free_count()].to_vec();
        let y = p.assemble(&free).unwrap();
        let grad = p.gradient(&y).unwrap();
        let report = p.el_residual(&y).unwrap();
        for (k, j) in p.free_indices().enumerate() {
            let expected = ts.nu_at(j + r) * report.residual.at(j + r).unwrap();
            let scale = 1.0 + report.partials_scale * ts.span() / ts.nu_at(1).min(1.0).powi(r as i32);
            prop_assert!((grad[k] - expected).abs() <= 1e-10 * scale, "{} vs {}", grad[k], expected);
        }
    }

    #[test]
    fn first_variation_matches_central_difference(
        ts in h_scale(),
        r in 1usize..=2,
        coeffs in prop::collection::vec(0.1..2.0f64, 4),
        noise in prop::collection::vec(-1.0..1.0f64, 32),
    ) {
        let src = format!("{} + sin(u0)", quadratic_source(r, &coeffs));
        let p = VariationalProblem::new(ts.clone(), Lagrangian::parse(&src, r).unwrap(), BoundaryConditions::zero(r)).unwrap();
        let m = p.free_count();
        let y = p.assemble(&noise[..m]).unwrap();
        let mut eta = vec![0.0; ts.len()];
        for (k, j) in p.free_indices().enumerate() {
            eta[j] = noise[16 + k % 16];
        }
        let eta = GridFunction::new(ts.clone(), 0, eta).unwrap();
        let fv = p.first_variation(&y, &eta).unwrap();
        let eps = 1e-6;
        let at = |s: f64| p.evaluate_functional(&y.zip_with(&eta, |a, b| a + s * b).unwrap()).unwrap();
        let fd = (at(eps) - at(-eps)) / (2.0 * eps);
        let mag = at(0.0).abs().max(1.0);
        prop_assert!((fd - fv).abs() <= 1e-6 * fv.abs().max(mag), "{} vs {}", fv, fd);
    }

    #[test]
    fn degenerate_scales_have_constant_functional(
        r in 1usize..=3,
        gaps in prop::collection::vec(0.2..2.0f64, 6),
        data in prop::collection::vec(-2.0..2.0f64, 6),
    ) {
        let mut pts = vec![0.0];
        for g in &gaps[..2 * r - 1] {
            pts.push(pts.last().unwrap() + g);
        }
        let ts = Arc::new(TimeScale::from_points(pts).unwrap());
        let bc = BoundaryConditions::new(data[..r].to_vec(), data[3..3 + r].to_vec());
        let lag = Lagrangian::parse(&format!("u{r}^2 + t*u0"), r).unwrap();
        if r > 1 && ts.h_coefficients(r).is_err() {
            let violated = matches!(
                VariationalProblem::new_degenerate_evaluate(ts, lag, bc),
                Err(Error::HViolated { .. })
            );
            prop_assert!(violated);
            return Ok(());
        }
        let rejected = matches!(
            VariationalProblem::new(ts.clone(), lag.clone(), bc.clone()),
            Err(Error::DegenerateProblem(_))
        );
        prop_assert!(rejected);
        let p = VariationalProblem::new_degenerate_evaluate(ts, lag, bc).unwrap();
        prop_assert_eq!(p.free_count(), 0);
        let y = p.assemble(&[]).unwrap();
        prop_assert!(p.evaluate_functional(&y).unwrap().is_finite());
        let refused = matches!(solve_direct(&p, &DirectOptions::default()), Err(Error::DegenerateProblem(_)));
        prop_assert!(refused);
    }

    #[test]
    fn solutions_keep_boundary_values(
        ts in h_scale(),
        r in 1usize..=2,
        coeffs in prop::collection::vec(0.2..2.0f64, 4),
        data in prop::collection::vec(-1.0..1.0f64, 4),
    ) {
        let lag = Lagrangian::parse(&quadratic_source(r, &coeffs), r).unwrap();
        let bc = BoundaryConditions::new(data[..r].to_vec(), data[2..2 + r].to_vec());
        let p = VariationalProblem::new(ts, lag, bc).unwrap();
        let sol = solve_direct(&p, &DirectOptions::default()).unwrap();
        for (i, v) in p.pin_boundary().iter() {
            prop_assert_eq!(sol.y.values()[i], v);
        }
        prop_assert!(p.check_admissible(&sol.y).is_ok());
        prop_assert!(sol.history.windows(2).all(|w| w[1] <= w[0]));
    }
}
