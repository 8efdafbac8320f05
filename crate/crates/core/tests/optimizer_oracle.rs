//! Gauss-Newton results checked against dense solves of the same
//! least-squares systems.

use std::sync::Arc;

use hmap_core::optimizer::{solve, Feature, FeatureKind, FnFeature, Matrix, Problem, SolverSettings};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct LinearTerm {
    order: usize,
    time: usize,
    a: Vec<Vec<f64>>,
    b: Vec<f64>,
}

#[derive(Clone)]
struct LinearFeature {
    name: String,
    term: Arc<LinearTerm>,
    analytic: bool,
}

impl Feature<f64> for LinearFeature {
    fn name(&self) -> &str {
        &self.name
    }
    fn kind(&self) -> FeatureKind {
        FeatureKind::Cost
    }
    fn order(&self) -> usize {
        self.term.order
    }
    fn time_index(&self) -> usize {
        self.term.time
    }
    fn dim(&self) -> usize {
        self.term.b.len()
    }
    fn eval(&self, states: &[&[f64]], out: &mut [f64]) {
        let x: Vec<f64> = states.iter().flat_map(|v| v.iter().copied()).collect();
        for (r, row) in self.term.a.iter().enumerate() {
            out[r] = row.iter().zip(&x).map(|(p, q)| p * q).sum::<f64>() - self.term.b[r];
        }
    }
    fn eval_jacobian(&self, states: &[&[f64]], out: &mut [f64], jac: &mut Matrix<f64>) -> bool {
        if !self.analytic {
            return false;
        }
        self.eval(states, out);
        for (r, row) in self.term.a.iter().enumerate() {
            for (c, v) in row.iter().enumerate() {
                jac.set(r, c, *v);
            }
        }
        true
    }
}

fn random_linear_problem(seed: u64, analytic: bool) -> (Problem<f64>, Vec<Arc<LinearTerm>>, usize, usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(1..4);
    let horizon = rng.gen_range(0..6);
    let mut terms = Vec::new();
    for t in 0..=horizon {
        // A full-rank anchor on every state keeps the system well posed.
        let mut a = vec![vec![0.0; n]; n];
        for (i, row) in a.iter_mut().enumerate() {
            for v in row.iter_mut() {
                *v = rng.gen_range(-0.3..0.3);
            }
            row[i] += 2.0;
        }
        terms.push(Arc::new(LinearTerm {
            order: 0,
            time: t,
            a,
            b: (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect(),
        }));
        for k in 1..=t.min(2) {
            let m = rng.gen_range(1..4);
            terms.push(Arc::new(LinearTerm {
                order: k,
                time: t,
                a: (0..m).map(|_| (0..(k + 1) * n).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect(),
                b: (0..m).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            }));
        }
    }
    let init = (0..=horizon)
        .map(|_| (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect();
    let mut p = Problem::new(n, init);
    for (i, term) in terms.iter().enumerate() {
        p.add(LinearFeature {
            name: format!("lin{i}"),
            term: term.clone(),
            analytic,
        });
    }
    (p, terms, n, horizon)
}

fn dense_solution(terms: &[Arc<LinearTerm>], n: usize, horizon: usize) -> DVector<f64> {
    let rows: usize = terms.iter().map(|t| t.b.len()).sum();
    let cols = (horizon + 1) * n;
    let mut j = DMatrix::zeros(rows, cols);
    let mut rhs = DVector::zeros(rows);
    let mut r0 = 0;
    for t in terms {
        let c0 = (t.time - t.order) * n;
        for (r, row) in t.a.iter().enumerate() {
            for (c, v) in row.iter().enumerate() {
                j[(r0 + r, c0 + c)] = *v;
            }
            rhs[r0 + r] = t.b[r];
        }
        r0 += t.b.len();
    }
    let jt = j.transpose();
    (&jt * &j).lu().solve(&(&jt * rhs)).expect("full rank")
}

fn check_linear(analytic: bool, tol: f64) {
    for seed in 0..20 {
        let (p, terms, n, horizon) = random_linear_problem(seed, analytic);
        let sol = solve(&p, &SolverSettings::default()).unwrap();
        let oracle = dense_solution(&terms, n, horizon);
        let x: Vec<f64> = sol.states.iter().flatten().copied().collect();
        let err = x.iter().zip(oracle.iter()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err < tol, "seed {seed}: error {err}");
        assert_eq!(sol.gn_steps, 1, "seed {seed}");
    }
}

#[test]
fn linear_problems_match_normal_equations_in_one_step() {
    let start = std::time::Instant::now();
    check_linear(false, 1e-8);
    assert!(start.elapsed().as_secs_f64() < 1.0);
}

#[test]
fn exact_jacobians_reach_normal_equation_precision() {
    check_linear(true, 1e-10);
}

#[test]
fn pinned_smoothing_is_a_straight_line() {
    let horizon = 10;
    let mut p = Problem::constant_init(vec![0.0], horizon);
    for t in 2..=horizon {
        p.add(FnFeature::new("acc", FeatureKind::Cost, 2, t, 1, |s: &[&[f64]], o: &mut [f64]| {
            o[0] = s[2][0] - 2.0 * s[1][0] + s[0][0]
        }));
    }
    p.add(FnFeature::new("start", FeatureKind::Eq, 0, 0, 1, |s: &[&[f64]], o: &mut [f64]| o[0] = s[0][0]));
    p.add(FnFeature::new("end", FeatureKind::Eq, 0, horizon, 1, |s: &[&[f64]], o: &mut [f64]| {
        o[0] = s[0][0] - 1.0
    }));
    let sol = solve(&p, &SolverSettings::default()).unwrap();
    assert!(sol.feasible);

    // Direct solve: eliminate the pinned ends and minimize the remaining
    // second differences.
    let m = horizon - 1;
    let mut d = DMatrix::zeros(horizon - 1, m);
    let mut rhs = DVector::zeros(horizon - 1);
    for (row, t) in (2..=horizon).enumerate() {
        for (off, c) in [(0usize, 1.0), (1, -2.0), (2, 1.0)] {
            let s = t - 2 + off;
            match s {
                0 => {}
                s if s == horizon => rhs[row] -= c,
                s => d[(row, s - 1)] = c,
            }
        }
    }
    let dt = d.transpose();
    let interior = (&dt * &d).lu().solve(&(&dt * rhs)).unwrap();
    for t in 1..horizon {
        let line = t as f64 / horizon as f64;
        assert!((interior[t - 1] - line).abs() < 1e-9);
        assert!((sol.states[t][0] - line).abs() < 1e-4, "t={t}: {}", sol.states[t][0]);
    }
}

#[test]
fn rosenbrock_converges() {
    let mut p = Problem::constant_init(vec![3.0, -2.0], 0);
    p.add(FnFeature::new("rosen", FeatureKind::Cost, 0, 0, 2, |s: &[&[f64]], o: &mut [f64]| {
        o[0] = 10.0 * (s[0][1] - s[0][0] * s[0][0]);
        o[1] = 1.0 - s[0][0];
    }));
    let settings = SolverSettings {
        step_tol: 1e-10,
        ..Default::default()
    };
    let sol = solve(&p, &settings).unwrap();
    assert!((sol.states[0][0] - 1.0).abs() < 1e-6 && (sol.states[0][1] - 1.0).abs() < 1e-6);
    assert!(sol.cost < 1e-12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn merit_never_increases_within_an_outer_iteration(
        x0 in prop::collection::vec(-2.0..2.0f64, 2),
        c in 0.2..1.5f64,
        w in 0.1..5.0f64,
    ) {
        // Nonlinear cost with an equality and an inequality.
        let mut p = Problem::constant_init(x0, 0);
        p.add(FnFeature::new("cost", FeatureKind::Cost, 0, 0, 2, move |s: &[&[f64]], o: &mut [f64]| {
            o[0] = w * (s[0][1] - s[0][0] * s[0][0]);
            o[1] = (s[0][0] - 2.0).sin();
        }));
        p.add(FnFeature::new("ring", FeatureKind::Eq, 0, 0, 1, move |s: &[&[f64]], o: &mut [f64]| {
            o[0] = s[0][0].hypot(s[0][1]) - c
        }));
        p.add(FnFeature::new("half", FeatureKind::Ineq, 0, 0, 1, |s: &[&[f64]], o: &mut [f64]| {
            o[0] = s[0][0] - 0.1
        }));
        let sol = solve(&p, &SolverSettings::default()).unwrap();
        for pair in sol.merit_trace.windows(2) {
            if pair[0].0 == pair[1].0 {
                prop_assert!(pair[1].1 <= pair[0].1, "{:?}", pair);
            }
        }
    }
}

#[test]
fn verdict_is_reproducible() {
    let build = || {
        let mut p = Problem::constant_init(vec![0.2, 0.1], 4);
        for t in 2..=4 {
            p.add(FnFeature::new("acc", FeatureKind::Cost, 2, t, 2, |s: &[&[f64]], o: &mut [f64]| {
                for d in 0..2 {
                    o[d] = s[2][d] - 2.0 * s[1][d] + s[0][d];
                }
            }));
        }
        p.add(FnFeature::new("circle", FeatureKind::Eq, 0, 4, 1, |s: &[&[f64]], o: &mut [f64]| {
            o[0] = s[0][0].hypot(s[0][1]) - 1.0
        }));
        p.add(FnFeature::new("half", FeatureKind::Ineq, 0, 4, 1, |s: &[&[f64]], o: &mut [f64]| {
            o[0] = 0.5 - s[0][1]
        }));
        p
    };
    let a = solve(&build(), &SolverSettings::default()).unwrap();
    let b = solve(&build(), &SolverSettings::default()).unwrap();
    assert!(a.feasible);
    assert_eq!(a.feasible, b.feasible);
    assert_eq!(a.cost.to_bits(), b.cost.to_bits());
    assert_eq!(a.states, b.states);
}
