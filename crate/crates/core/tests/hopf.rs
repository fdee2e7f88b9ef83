use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tensor_hj::hopf::{hopf_diagonal, hopf_value, layered_reduced, SolverConfig};
use tensor_hj::initial_condition::{
    conjugate_1d, EvalMode, InitialCondition, ScalarConvexFunction,
};
use tensor_hj::model::{DiscretePrior, InteractionSpec};
use tensor_hj::SymMatrix;

fn rad() -> InitialCondition {
    InitialCondition::gauss_hermite(DiscretePrior::rademacher()).unwrap()
}

fn k1(p: usize) -> InteractionSpec {
    InteractionSpec::diagonal_indicator(1, p).unwrap()
}

fn f1(ic: &InitialCondition, spec: &InteractionSpec, t: f64, h: f64) -> f64 {
    hopf_value(
        ic,
        spec,
        t,
        &SymMatrix::from_diag(&[h]),
        &SolverConfig::default(),
    )
    .unwrap()
    .value
}

/// `sup_y y h + t H(y) - psi^*(y)` on a dense dual grid, refined by golden
/// section around the best grid point.
fn scalar_oracle(psi: &ScalarConvexFunction, p: i32, t: f64, h: f64) -> f64 {
    let g = |y: f64| {
        y * h + t * y.powi(p)
            - conjugate_1d(psi, y, Some(60.0))
                .map(|c| c.value)
                .unwrap_or(f64::NAN)
    };
    let n = 400;
    let cap = psi.lipschitz() * (1.0 - 1e-9);
    let (mut best, mut arg) = (f64::NEG_INFINITY, 0.0);
    for i in 0..=n {
        let y = cap * i as f64 / n as f64;
        let v = g(y);
        if v > best {
            best = v;
            arg = y;
        }
    }
    let step = cap / n as f64;
    let (mut a, mut b) = ((arg - step).max(0.0), (arg + step).min(cap));
    let r = 0.5 * (5f64.sqrt() - 1.0);
    while b - a > 1e-10 {
        let (c, d) = (b - r * (b - a), a + r * (b - a));
        if g(c) >= g(d) {
            b = d;
        } else {
            a = c;
        }
    }
    best.max(g(0.5 * (a + b)))
}

#[test]
fn scalar_case_matches_dual_grid_oracle() {
    let ic = rad();
    let psi = ic.scalar().unwrap();
    for (p, t, h) in [
        (2, 0.25, 0.0),
        (2, 0.5, 0.1),
        (2, 1.0, 0.5),
        (3, 0.5, 0.1),
        (3, 1.5, 0.2),
    ] {
        let got = f1(&ic, &k1(p), t, h);
        let oracle = scalar_oracle(&psi, p as i32, t, h);
        assert!(
            (got - oracle).abs() < 1e-7,
            "p={p} t={t} h={h}: {got} vs {oracle}"
        );
    }
}

#[test]
fn initial_time_identity_k2() {
    let prior = DiscretePrior::new(
        vec![
            vec![1.0, 1.0],
            vec![-1.0, 1.0],
            vec![1.0, -1.0],
            vec![-1.0, -1.0],
        ],
        vec![0.4, 0.1, 0.1, 0.4],
    )
    .unwrap();
    let ic = InitialCondition::new(prior, EvalMode::GaussHermite { nodes: 24 }).unwrap();
    let spec = InteractionSpec::diagonal_indicator(2, 2).unwrap();
    for h in [
        SymMatrix::from_diag(&[0.3, 0.1]),
        SymMatrix::from_rows(&[vec![0.6, -0.2], vec![-0.2, 0.4]]).unwrap(),
    ] {
        let r = hopf_value(&ic, &spec, 0.0, &h, &SolverConfig::default()).unwrap();
        assert!((r.value - ic.psi(&h).unwrap()).abs() < 1e-5);
    }
}

#[test]
fn nondecreasing_and_convex_in_time_and_field() {
    let ic = rad();
    let spec = k1(2);
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..25 {
        let (t1, h1) = (rng.random_range(0.0..1.0), rng.random_range(0.0..1.0));
        let (t2, h2) = (
            t1 + rng.random_range(0.0..0.5),
            h1 + rng.random_range(0.0..0.5),
        );
        assert!(f1(&ic, &spec, t1, h1) <= f1(&ic, &spec, t2, h2) + 1e-6);
    }
    for _ in 0..25 {
        let a = (rng.random_range(0.0..1.2), rng.random_range(0.0..1.2));
        let b = (rng.random_range(0.0..1.2), rng.random_range(0.0..1.2));
        let mid = f1(&ic, &spec, 0.5 * (a.0 + b.0), 0.5 * (a.1 + b.1));
        let chord = 0.5 * (f1(&ic, &spec, a.0, a.1) + f1(&ic, &spec, b.0, b.1));
        assert!(mid <= chord + 1e-6, "{mid} > {chord}");
    }
}

#[test]
fn lipschitz_in_time_and_field() {
    let ic = rad();
    let spec = k1(2);
    let radius = SolverConfig::default().radius_for(1);
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    for _ in 0..10 {
        let a: (f64, f64) = (rng.random_range(0.0..1.0), rng.random_range(0.0..1.0));
        let b: (f64, f64) = (rng.random_range(0.0..1.0), rng.random_range(0.0..1.0));
        let dist = ((a.0 - b.0) * (a.0 - b.0) + (a.1 - b.1) * (a.1 - b.1)).sqrt();
        let diff = (f1(&ic, &spec, a.0, a.1) - f1(&ic, &spec, b.0, b.1)).abs();
        assert!(diff <= radius * dist + 1e-6);
    }
}

#[test]
fn comparison_principle() {
    // psi_rademacher <= psi_single_atom(c) = c pointwise
    let a = rad();
    let b =
        InitialCondition::gauss_hermite(DiscretePrior::single_atom(vec![1.0]).unwrap()).unwrap();
    let spec = k1(2);
    let hs = [0.0, 0.3, 0.7, 1.2];
    let initial_gap = hs
        .iter()
        .map(|&h| {
            let m = SymMatrix::from_diag(&[h]);
            a.psi(&m).unwrap() - b.psi(&m).unwrap()
        })
        .fold(f64::NEG_INFINITY, f64::max);
    for t in [0.2, 0.6, 1.0] {
        for &h in &hs {
            let d = f1(&a, &spec, t, h) - f1(&b, &spec, t, h);
            assert!(d <= initial_gap + 1e-5, "t={t} h={h}: {d}");
        }
    }
}

#[test]
fn single_atom_is_deterministic_signal() {
    // psi(c) = c: the formula gives h + t H(1) for any t, h
    let ic =
        InitialCondition::gauss_hermite(DiscretePrior::single_atom(vec![1.0]).unwrap()).unwrap();
    for (t, h) in [(0.3, 0.2), (1.0, 0.0)] {
        let v = f1(&ic, &k1(3), t, h);
        assert!((v - (h + t)).abs() < 1e-6, "{v}");
    }
}

fn two_layer() -> (InitialCondition, InteractionSpec) {
    let prior = DiscretePrior::product(&[DiscretePrior::rademacher(), DiscretePrior::rademacher()])
        .unwrap();
    (
        InitialCondition::new(prior, EvalMode::GaussHermite { nodes: 32 }).unwrap(),
        InteractionSpec::nearest_neighbor_chain(2).unwrap(),
    )
}

#[test]
fn diagonal_form_matches_full_cone() {
    let (ic, spec) = two_layer();
    let cfg = SolverConfig::default();
    for (t, x) in [(0.5, [0.0, 0.0]), (1.0, [0.2, 0.1]), (1.6, [0.05, 0.4])] {
        let full = hopf_value(&ic, &spec, t, &SymMatrix::from_diag(&x), &cfg).unwrap();
        let diag = hopf_diagonal(&ic, &spec, t, &x, &cfg).unwrap();
        assert!(
            (full.value - diag.value).abs() <= 2e-5,
            "{} vs {}",
            full.value,
            diag.value
        );
    }
}

#[test]
fn two_layer_reduction_matches_diagonal_form() {
    let (ic, spec) = two_layer();
    let layer = InitialCondition::new(
        DiscretePrior::rademacher(),
        EvalMode::GaussHermite { nodes: 32 },
    )
    .unwrap()
    .scalar()
    .unwrap();
    let cfg = SolverConfig::default();
    for t in [0.5, 1.2, 2.0] {
        let diag = hopf_diagonal(&ic, &spec, t, &[0.0, 0.0], &cfg).unwrap();
        let reduced = layered_reduced(t, &[layer.clone(), layer.clone()], &cfg).unwrap();
        assert!(
            (diag.value - reduced.value).abs() <= 1e-4,
            "t={t}: {} vs {}",
            diag.value,
            reduced.value
        );
    }
}
