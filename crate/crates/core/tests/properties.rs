use hilfer_core::checker::{certify, check_existence, Constants, SamplingConfig, Verdict};
use hilfer_core::expr::{self, lipschitz_estimate, BinOp, Expr, Func, StateFn, VarRange};
use hilfer_core::fracops::{pc_norm, rl_integral, uniform_grid, PiecewiseTrajectory, SampledFn, Segment, SegmentKind};
use hilfer_core::operators::GeneratorMatrix;
use hilfer_core::problem::{Declared, Impulse, ProblemSpec};
use hilfer_core::solver::{mild_solve, SolverConfig};
use hilfer_core::specfun::{gamma, mittag_leffler};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn scalar(alpha: f64, beta: f64, lambda: f64, f: &str) -> ProblemSpec {
    ProblemSpec {
        alpha,
        beta,
        a: GeneratorMatrix::scalar(lambda).unwrap(),
        u0: DVector::from_element(1, 1.0),
        f: StateFn::parse(f, 1).unwrap(),
        impulses: vec![],
        horizon: 1.0,
        t_min: None,
        phi: None,
        psi: None,
        declared: Declared::default(),
    }
}

fn arb_expr() -> impl Strategy<Value = Expr> {
    let leaf = prop_oneof![
        (0.0..100.0f64).prop_map(Expr::Num),
        prop::sample::select(vec!["t", "u1", "u2"]).prop_map(|v| Expr::Var(v.to_string())),
    ];
    leaf.prop_recursive(4, 32, 3, |inner| {
        prop_oneof![
            inner.clone().prop_map(|e| Expr::Neg(Box::new(e))),
            (
                prop::sample::select(vec![BinOp::Add, BinOp::Sub, BinOp::Mul, BinOp::Div, BinOp::Pow]),
                inner.clone(),
                inner.clone()
            )
                .prop_map(|(op, l, r)| Expr::Bin(op, Box::new(l), Box::new(r))),
            (prop::sample::select(Func::ALL.to_vec()), inner.clone(), inner)
                .prop_map(|(f, a, b)| Expr::Call(f, if f.arity() == 2 { vec![a, b] } else { vec![a] })),
        ]
    })
}

fn matrix4() -> impl Strategy<Value = DMatrix<f64>> {
    (prop::collection::vec(-1.0..1.0f64, 16), 0.1..2.0f64).prop_map(|(v, scale)| {
        let m = DMatrix::from_vec(4, 4, v);
        let n = m.norm().max(1e-3);
        m * (scale / n)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn gamma_recurrence(x in 0.1..50.0f64) {
        let (a, b) = (gamma(x + 1.0).unwrap(), x * gamma(x).unwrap());
        prop_assert!((a - b).abs() <= 1e-10 * a.abs());
    }

    #[test]
    fn mittag_leffler_one_one_is_exp(z in -20.0..20.0f64) {
        let e = mittag_leffler(1.0, 1.0, z).unwrap();
        prop_assert!((e - z.exp()).abs() <= 1e-10 * z.exp().max(1.0), "z = {}: {} vs {}", z, e, z.exp());
    }

    #[test]
    fn rl_integral_is_linear(q in 0.1..1.5f64, a in -3.0..3.0f64, b in -3.0..3.0f64, c in prop::collection::vec(-2.0..2.0f64, 4)) {
        let grid = uniform_grid(0.0, 1.0, 64);
        let f = SampledFn::scalar(grid.clone(), |t| c[0] + c[1] * t * t).unwrap();
        let g = SampledFn::scalar(grid.clone(), |t| (c[2] * t).sin() + c[3]).unwrap();
        let mix = SampledFn::scalar(grid.clone(), |t| a * (c[0] + c[1] * t * t) + b * ((c[2] * t).sin() + c[3])).unwrap();
        let (fi, gi, mi) = (rl_integral(q, &f, 0.0).unwrap(), rl_integral(q, &g, 0.0).unwrap(), rl_integral(q, &mix, 0.0).unwrap());
        for i in 0..grid.len() {
            let lin = a * fi.values[i][0] + b * gi.values[i][0];
            prop_assert!((lin - mi.values[i][0]).abs() <= 1e-12 * (1.0 + lin.abs()));
        }
    }

    #[test]
    fn pc_norm_scales_with_the_values(s in 0.0..10.0f64, gam in 0.2..=1.0f64, v in prop::collection::vec(-5.0..5.0f64, 20)) {
        let seg = |kind, left: f64, vals: &[f64]| Segment {
            kind,
            left,
            right: left + 0.5,
            samples: SampledFn::scalar((1..=10).map(|j| left + 0.05 * j as f64).collect(), |t| vals[((t - left) / 0.05).round() as usize - 1]).unwrap(),
        };
        let traj = PiecewiseTrajectory::new(vec![seg(SegmentKind::Initial, 0.0, &v[..10]), seg(SegmentKind::Impulse(0), 0.5, &v[10..])], gam).unwrap();
        let mut scaled = traj.clone();
        for sg in scaled.segments.iter_mut() {
            for x in sg.samples.values.iter_mut() {
                *x *= s;
            }
        }
        let (n, ns) = (pc_norm(&traj).unwrap(), pc_norm(&scaled).unwrap());
        prop_assert!((ns - s * n).abs() <= 4.0 * f64::EPSILON * s * n);
    }

    #[test]
    fn printing_and_reparsing_is_idempotent(e in arb_expr()) {
        let once = expr::parse(&e.to_string()).unwrap();
        let twice = expr::parse(&once.to_string()).unwrap();
        prop_assert_eq!(&once, &twice);
        prop_assert_eq!(once, e);
    }

    #[test]
    fn evaluation_is_deterministic(e in arb_expr(), t in -2.0..2.0f64, u1 in -2.0..2.0f64, u2 in -2.0..2.0f64) {
        let env: std::collections::HashMap<String, f64> = [("t", t), ("u1", u1), ("u2", u2)].iter().map(|(k, v)| (k.to_string(), *v)).collect();
        match (e.eval(&env), e.eval(&env)) {
            (Ok(a), Ok(b)) => prop_assert_eq!(a.to_bits(), b.to_bits()),
            (a, b) => prop_assert_eq!(a.is_err(), b.is_err()),
        }
    }

    #[test]
    fn semigroup_commutes_with_its_generator(m in matrix4(), t in 0.0..2.0f64) {
        let a = GeneratorMatrix::new(m.clone()).unwrap();
        let e = a.exp_neg(t);
        prop_assert!((&m * &e - &e * &m).norm() <= 1e-10);
    }

    #[test]
    fn semigroup_is_strongly_continuous(m in matrix4(), v in prop::collection::vec(-1.0..1.0f64, 4)) {
        let a = GeneratorMatrix::new(m).unwrap();
        let v = DVector::from_vec(v);
        let mut last = f64::INFINITY;
        for j in 1..30 {
            let d = (a.exp_neg(0.5f64.powi(j)) * &v - &v).norm();
            prop_assert!(d <= last * (1.0 + 1e-12) + 1e-15);
            last = d;
        }
        prop_assert!(last < 1e-7);
    }

    #[test]
    fn checker_is_monotone(c in prop::array::uniform5(0.0..2.0f64), k in 0usize..5, bump in 0.0..1.0f64) {
        let before = check_existence(&Constants::declared(c[0], c[1], c[2], c[3], c[4]));
        let mut d = c;
        d[k] += bump;
        let after = check_existence(&Constants::declared(d[0], d[1], d[2], d[3], d[4]));
        prop_assert!(after.lhs_paper >= before.lhs_paper && after.lhs_derivation >= before.lhs_derivation);
        prop_assert!(!(before.verdict == Verdict::Fail && after.verdict == Verdict::Pass));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn impulse_windows_hold_the_fixed_point(
        alpha in 0.4..=1.0f64,
        beta in 0.0..=1.0f64,
        a in prop::array::uniform2(-0.6..0.6f64),
        b in prop::array::uniform2(-0.5..0.5f64),
    ) {
        let mut p = scalar(alpha, beta, 1.0, "-0.5*u1 + cos(t)");
        p.impulses = (0..2)
            .map(|k| Impulse {
                t: 0.3 + 0.3 * k as f64,
                s: 0.4 + 0.3 * k as f64,
                zeta: StateFn::parse(&format!("{}*u1 + {}", a[k], b[k]), 1).unwrap(),
                k_zeta: None,
            })
            .collect();
        let cfg = SolverConfig { points_per_interval: 64, ..SolverConfig::default() };
        let rep = mild_solve(&p, &cfg).unwrap();
        for seg in &rep.trajectory.segments {
            if let SegmentKind::Impulse(k) = seg.kind {
                for (t, v) in seg.samples.grid.iter().zip(&seg.samples.values) {
                    let z = p.impulses[k].zeta.eval(*t, v).unwrap();
                    prop_assert!((v - z).norm() <= 10.0 * cfg.tolerance);
                }
            }
        }
    }

    #[test]
    fn certificates_are_deterministic(seed in any::<u64>(), c in -0.5..0.5f64) {
        let mut p = scalar(0.7, 0.5, 1.0, &format!("{c}*sin(u1) + cos(t)"));
        p.phi = Some(expr::parse("2").unwrap());
        p.psi = Some(expr::parse("1 + r").unwrap());
        let cfg = SamplingConfig { samples: 200, seed, ..SamplingConfig::default() };
        let a = serde_json::to_string(&certify(&p, &cfg).unwrap()).unwrap();
        let b = serde_json::to_string(&certify(&p, &cfg).unwrap()).unwrap();
        prop_assert_eq!(a, b);
    }
}

#[test]
fn lipschitz_estimate_never_exceeds_the_slope() {
    for c in [0.1, 1.0, 10.0] {
        let e = expr::parse(&format!("{c}*u1")).unwrap();
        let bx = [VarRange::new("t", 0.0, 1.0), VarRange::new("u1", -3.0, 3.0)];
        let l = lipschitz_estimate(&e, "u1", &bx, 1000, 3).unwrap();
        assert!(l <= c * (1.0 + 1e-12) && l >= c * (1.0 - 1e-12), "{c}: {l}");
    }
}

/// Sup difference on `t ≥ 0.05` between a grid and the one with twice the
/// nodes.
fn refinement_orders(alpha: f64, beta: f64) -> f64 {
    let mut sols = Vec::new();
    for n in [100, 200, 400] {
        let mut p = scalar(alpha, beta, 1.0, "-u1 + sin(t)");
        p.t_min = Some(0.01);
        let cfg = SolverConfig {
            points_per_interval: n,
            ..SolverConfig::default()
        };
        sols.push(mild_solve(&p, &cfg).unwrap().trajectory.segments[0].samples.clone());
    }
    let diff = |c: &SampledFn, f: &SampledFn| {
        c.grid
            .iter()
            .enumerate()
            .filter(|(_, t)| **t >= 0.05)
            .map(|(i, _)| (c.values[i][0] - f.values[2 * i + 1][0]).abs())
            .fold(0.0, f64::max)
    };
    (diff(&sols[0], &sols[1]) / diff(&sols[1], &sols[2])).log2()
}

#[test]
fn grid_refinement_is_second_order_on_the_smooth_family() {
    let order = refinement_orders(1.0, 0.0);
    assert!(order >= 1.7, "alpha = 1: observed order {order:.2}");
    let order = refinement_orders(0.5, 1.0);
    assert!(order >= 1.7, "alpha = 0.5, beta = 1: observed order {order:.2}");
}
