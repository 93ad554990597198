use approx::assert_relative_eq;
use proptest::prelude::*;
use vortexlab::develop::{read_obj, write_obj};
use vortexlab::grid::laplacian;
use vortexlab::holo::from_roots;
use vortexlab::linalg::{apply_shifted, dot, solve_shifted};
use vortexlab::solver::{initial_guess, make_boundary_complete, solve_newton};
use vortexlab::verify::completeness_probe;
use vortexlab::{Complex64, EntireFunction, GridDomain, RunConfig, ScalarField, Tolerances, VortexProblem};

fn grid() -> impl Strategy<Value = GridDomain> {
    (0.5f64..5.0, 3usize..9).prop_map(|(r, m)| GridDomain::new(r, 2 * m + 1).unwrap())
}

fn field_on(d: GridDomain) -> impl Strategy<Value = ScalarField> {
    prop::collection::vec(-3.0f64..3.0, d.len()).prop_map(move |v| ScalarField::new(d, v).unwrap())
}

fn complex() -> impl Strategy<Value = Complex64> {
    (-2.0f64..2.0, -2.0f64..2.0).prop_map(|(a, b)| Complex64::new(a, b))
}

fn zero_boundary(u: &ScalarField) -> Vec<f64> {
    let d = u.domain();
    let mut v = u.values().to_vec();
    for (i, j) in d.boundary_nodes() {
        v[d.idx(i, j)] = 0.0;
    }
    v
}

proptest! {
    #[test]
    fn laplacian_is_linear((u, v) in grid().prop_flat_map(|d| (field_on(d), field_on(d))), a in -2.0f64..2.0) {
        let combo = u.zip_map(&v, |x, y| a * x + y).unwrap();
        let lhs = laplacian(&combo);
        let (lu, lv) = (laplacian(&u), laplacian(&v));
        let scale = 1.0 / (u.domain().h() * u.domain().h());
        for k in 0..lhs.values().len() {
            let rhs = a * lu.values()[k] + lv.values()[k];
            prop_assert!((lhs.values()[k] - rhs).abs() <= 1e-12 * scale * 20.0);
        }
    }

    #[test]
    fn laplacian_is_negative_semidefinite(u in grid().prop_flat_map(field_on)) {
        let x = zero_boundary(&u);
        let ux = ScalarField::new(*u.domain(), x.clone()).unwrap();
        prop_assert!(dot(&x, laplacian(&ux).values()) <= 1e-9);
    }

    #[test]
    fn shifted_operator_is_symmetric_and_inverted_by_cg(
        (u, v) in grid().prop_flat_map(|d| (field_on(d), field_on(d))),
        shift in 0.0f64..5.0,
    ) {
        let d = *u.domain();
        let (x, y) = (zero_boundary(&u), zero_boundary(&v));
        let diag = vec![shift; d.len()];
        let (mut ax, mut ay) = (vec![0.0; d.len()], vec![0.0; d.len()]);
        apply_shifted(&d, &diag, &x, &mut ax);
        apply_shifted(&d, &diag, &y, &mut ay);
        let (xay, yax) = (dot(&x, &ay), dot(&y, &ax));
        prop_assert!((xay - yax).abs() <= 1e-9 * (1.0 + xay.abs()));

        let (sol, _) = solve_shifted(&d, &diag, &ax, 1e-12, 10_000).unwrap();
        for k in 0..d.len() {
            prop_assert!((sol[k] - x[k]).abs() <= 1e-7);
        }
    }

    #[test]
    fn log_abs_matches_evaluation(
        p in prop::collection::vec(complex(), 1..5),
        q in prop::collection::vec(complex(), 0..3),
        z in complex(),
    ) {
        prop_assume!(p.last().unwrap().norm() > 0.1);
        let f = EntireFunction::new(p, q).unwrap();
        let value = f.eval(z).unwrap();
        prop_assume!(value.norm() > 1e-6);
        prop_assert!((f.log_abs(z) - value.norm().ln()).abs() <= 1e-9);
    }

    #[test]
    fn roots_are_recovered(roots in prop::collection::vec(complex(), 1..6), lead in complex()) {
        prop_assume!(lead.norm() > 0.2);
        for (a, i) in roots.iter().zip(0..) {
            for b in &roots[i + 1..] {
                prop_assume!((a - b).norm() > 0.05);
            }
        }
        let f = EntireFunction::new(from_roots(&roots, lead), vec![]).unwrap();
        let found = f.zeros().unwrap();
        prop_assert_eq!(found.len(), roots.len());
        for r in &roots {
            let nearest = found.iter().map(|z| (z - r).norm()).fold(f64::INFINITY, f64::min);
            prop_assert!(nearest <= 1e-6, "root {} missed by {}", r, nearest);
        }
    }

    #[test]
    fn obj_round_trip(m in 2usize..6, seed in prop::collection::vec(-1e3f64..1e3, 108)) {
        let n = m;
        let positions: Vec<[f64; 3]> = (0..n * n).map(|k| [seed[3 * k], seed[3 * k + 1], seed[3 * k + 2]]).collect();
        let mut buf = Vec::new();
        write_obj(n, &positions, &mut buf).unwrap();
        let (vertices, faces) = read_obj(buf.as_slice()).unwrap();
        prop_assert_eq!(faces, 2 * (n - 1) * (n - 1));
        for (a, b) in positions.iter().zip(&vertices) {
            for c in 0..3 {
                prop_assert!((a[c] - b[c]).abs() <= 1e-8 * a[c].abs().max(1.0));
            }
        }
    }

    #[test]
    fn csv_round_trip(u in grid().prop_flat_map(field_on)) {
        let mut buf = Vec::new();
        u.write_csv(&mut buf).unwrap();
        let back = ScalarField::read_csv(buf.as_slice()).unwrap();
        prop_assert_eq!(back.domain().n(), u.domain().n());
        for (a, b) in u.values().iter().zip(back.values()) {
            prop_assert_eq!(a, b);
        }
    }

    #[test]
    fn config_round_trip(k in 2u32..5, r in 0.5f64..20.0, m in 1usize..200, re in -3.0f64..3.0) {
        let text = format!(
            r#"{{"phi": {{"p": [[{re}, 0], [1, 0]]}}, "k": {k}, "R": {r}, "n": {}, "pipeline": ["solve-complete", "verify"], "output_dir": "out"}}"#,
            2 * m + 1
        );
        let cfg = RunConfig::from_json(&text).unwrap();
        let again = RunConfig::from_json(&serde_json::to_string(&cfg).unwrap()).unwrap();
        prop_assert_eq!(cfg, again);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    /// Larger boundary data give a pointwise larger solution.
    #[test]
    fn comparison_principle(low in 0.0f64..3.0, gap in 0.1f64..3.0, k in 2u32..4) {
        let phi = EntireFunction::real_polynomial(&[0.5, 1.0]).unwrap();
        let d = GridDomain::new(2.0, 21).unwrap();
        let tol = Tolerances::default();
        let solve = |m: f64| {
            let prob = VortexProblem::new(phi.clone(), k, d, make_boundary_complete(&phi, k, &d, m)).unwrap();
            solve_newton(&prob, &initial_guess(&prob, &tol), &tol).unwrap().0
        };
        let (w1, w2) = (solve(low), solve(low + gap));
        for (a, b) in w1.values().iter().zip(w2.values()) {
            prop_assert!(a <= &(b + 1e-9));
        }
    }

    #[test]
    fn ray_length_grows_along_the_ray(u in grid().prop_flat_map(field_on), theta in 0.0f64..6.3) {
        let ray = &completeness_probe(&u, &[theta])[0];
        prop_assert!(ray.length.windows(2).all(|p| p[1] >= p[0]));
        prop_assert!(ray.r.windows(2).all(|p| p[1] > p[0]));
    }
}

#[test]
fn constant_solution_sits_on_the_bound() {
    let c = Complex64::new(3.0, 4.0);
    let phi = EntireFunction::new(vec![c], vec![]).unwrap();
    let d = GridDomain::new(2.0, 11).unwrap();
    let w = ScalarField::constant(d, (2.0f64 / 3.0) * c.norm().ln());
    let prob = VortexProblem::new(phi, 3, d, vortexlab::BoundaryData::from_field(&w)).unwrap();
    let h = vortexlab::verify::subunity_field(&w, &prob).unwrap();
    for v in h.values() {
        assert_relative_eq!(*v, 1.0, epsilon = 1e-14);
    }
}
