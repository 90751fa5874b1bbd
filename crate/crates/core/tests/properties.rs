use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

use lmflow::multiplier::{eval_f_general_d, eval_f_special, perturb_splitting, Splitting};
use lmflow::objective::{make_nonconvex_pl, make_quadratic, FnObjective, QuadraticInstance};
use lmflow::optimizer::{backtracking_step, exact_lm_step};
use lmflow::rates::{RateConstants, RateEnvelope, RateKind};
use lmflow::{optimize, Method, Objective, Point, RunConfig};

fn spd(n: usize, entries: &[f64], shift: f64) -> DMatrix<f64> {
    let g = DMatrix::from_iterator(n, n, entries.iter().copied().take(n * n));
    &g * g.transpose() + DMatrix::identity(n, n) * shift
}

fn quartic() -> Arc<dyn Objective> {
    Arc::new(FnObjective::new(
        3,
        |x| x.iter().map(|v| v.powi(4)).sum::<f64>() / 4.0,
        |x| x.map(|v| v.powi(3)),
    ))
}

prop_compose! {
    fn small_quadratic()(n in 1usize..6)
        (entries in prop::collection::vec(-1.0..1.0f64, n * n),
         shift in 0.01..2.0f64,
         b in prop::collection::vec(-3.0..3.0f64, n),
         x in prop::collection::vec(-3.0..3.0f64, n),
         n in Just(n)) -> (QuadraticInstance, Point) {
        let a = spd(n, &entries, shift);
        let q = QuadraticInstance::from_parts(a, DVector::from_vec(b), None).unwrap();
        (q, DVector::from_vec(x))
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn perturbation_leaves_the_energy_unchanged(
        entries in prop::collection::vec(-1.0..1.0f64, 9),
        x in prop::collection::vec(-2.0..2.0f64, 3),
        eps in prop_oneof![-0.5..-1e-6f64, 1e-6..0.5f64],
    ) {
        let s = Splitting::new(spd(3, &entries, 0.1), quartic()).unwrap();
        let p = perturb_splitting(&s, eps).unwrap();
        let x = DVector::from_vec(x);
        let (v, vp) = (s.value(&x), p.value(&x));
        prop_assert!((v - vp).abs() <= 1e-12 * (1.0 + v.abs()));
        prop_assert!((s.gradient(&x) - p.gradient(&x)).norm() <= 1e-12 * (1.0 + s.gradient(&x).norm()));
    }

    #[test]
    fn zero_is_always_a_root((q, x) in small_quadratic(), h in 1e-3..1e2f64) {
        prop_assert_eq!(eval_f_special(&q, &x, h, 0.0), 0.0);
        let d = DMatrix::identity(x.len(), x.len()) * 0.7;
        prop_assert_eq!(eval_f_general_d(&q, &d, &x, h, 0.0), 0.0);
    }

    #[test]
    fn quadratic_root_is_bracketed((q, x) in small_quadratic(), h in 1e-3..1e2f64) {
        let g = q.gradient(&x);
        prop_assume!(g.norm() > 1e-8);
        let l = q.lipschitz().unwrap();
        let lb = 1.0 / (1.0 + l * h / 2.0);
        let gg = g.norm_squared();
        let root = gg / (gg + 0.5 * h * g.dot(&(&q.a * &g)));
        prop_assert!(root >= lb * (1.0 - 1e-12) && root <= 1.0);
        prop_assert!(eval_f_special(&q, &x, h, lb) <= 1e-9 * h * lb * lb * gg);
        let eta = exact_lm_step(&q, &x, h, 1e-13).unwrap().eta;
        prop_assert!((eta - root).abs() <= 1e-9 * root);
    }

    #[test]
    fn backtracking_never_exceeds_the_logarithmic_bound(
        (q, x) in small_quadratic(),
        h in 1e-2..1e2f64,
        alpha in 0.1..0.95f64,
    ) {
        prop_assume!(q.gradient(&x).norm() > 1e-8);
        let l = q.lipschitz().unwrap();
        let lb = 1.0 / (1.0 + l * h / 2.0);
        let bound = (lb.ln() / alpha.ln()).ceil().max(0.0) as u32;
        let step = backtracking_step(&q, &x, h, alpha).unwrap();
        prop_assert!(step.backtracks <= bound, "{} > {}", step.backtracks, bound);
        prop_assert!(step.eta >= alpha * lb * (1.0 - 1e-12));
    }

    #[test]
    fn exact_steps_satisfy_the_energy_identity(seed in 0u64..1000, h in 0.01..5.0f64) {
        // f(x − ηh∇f) − f(x) = −hη²‖∇f‖² at the computed root.
        let f = make_nonconvex_pl(20, seed);
        let x = Point::from_fn(20, |i, _| ((i as f64) + seed as f64).sin());
        let g = f.gradient(&x);
        let step = exact_lm_step(&f, &x, h, 1e-13).unwrap();
        let lhs = f.value(&step.x_next) - f.value(&x);
        let rhs = -h * step.eta * step.eta * g.norm_squared();
        let scale = h * step.eta * g.norm_squared();
        prop_assert!((lhs - rhs).abs() <= 1e-8 * scale + 1e-12 * f.value(&x).abs(),
            "lhs {lhs} rhs {rhs}");
    }

    #[test]
    fn envelopes_do_not_increase(
        l in 0.1..10.0f64,
        ratio in 1e-3..1.0f64,
        h_scale in 0.05..2.0f64,
        gap in 1e-3..1e3f64,
        dist in 1e-3..1e3f64,
    ) {
        let constants = RateConstants {
            lipschitz: Some(l),
            mu: Some(ratio * l),
            h: Some(h_scale / l),
            alpha: Some(0.8),
            eta_star: Some(0.5),
            f_star: Some(0.0),
            initial_gap: Some(gap),
            initial_dist_sq: Some(dist),
        };
        for kind in RateKind::ALL {
            let env = RateEnvelope::new(kind, constants);
            let values: Vec<f64> = (1..50).map(|k| env.value(k).unwrap()).collect();
            prop_assert!(values.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12)), "{kind:?}");
        }
    }
}

#[test]
fn same_seed_gives_identical_instances_and_runs() {
    assert_eq!(make_quadratic(40, 9).a, make_quadratic(40, 9).a);
    assert_ne!(make_quadratic(40, 9).b, make_quadratic(40, 10).b);
    let f = make_quadratic(40, 9);
    let x0 = Point::zeros(40);
    for method in [Method::ExactLm, Method::Backtracking, Method::Adaptive, Method::Armijo] {
        let config = RunConfig {
            h0: 2.0,
            max_iter: 200,
            ..RunConfig::new(method)
        };
        let a = optimize(&f, &x0, &config).unwrap();
        let b = optimize(&f, &x0, &config).unwrap();
        assert_eq!(a.records, b.records, "{method}");
        assert_eq!(a.final_x, b.final_x);
    }
}
