mod common;

use nalgebra::DMatrix;
use proptest::prelude::*;
use rand_chacha::ChaCha8Rng;
use stochline::geometry::{bracket_of_word, build_frame, exterior_derivative_pair, growth_vector, GeometryError};
use stochline::{Expression, FrameOptions, OneForm, VectorField, Word};

const TOL: f64 = 1e-9;

fn heisenberg() -> Vec<VectorField> {
    vec![VectorField::parse(&["1", "0", "-y"]).unwrap(), VectorField::parse(&["0", "1", "x"]).unwrap()]
}

/// Heisenberg fields plus small quadratic perturbations: step two near the origin.
fn perturbed_heisenberg(rng: &mut ChaCha8Rng, scale: f64) -> Vec<VectorField> {
    heisenberg()
        .into_iter()
        .map(|v| VectorField::new(v.components().iter().map(|c| c.clone() + common::random_quadratic(rng, 3, scale)).collect()))
        .collect()
}

fn eval_vec(v: &VectorField, p: &[f64]) -> Vec<f64> {
    v.eval(p).unwrap().iter().copied().collect()
}

fn max_gap(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// `φ(X)` at `p` by a direct dot product of evaluated components.
fn pair_at(phi: &OneForm, x: &VectorField, p: &[f64]) -> f64 {
    phi.eval(p).unwrap().dot(&x.eval(p).unwrap())
}

/// The coordinate row `(ω(∂_1), …, ω(∂_n))` of a one-form built from the two-form rule, at `p`.
fn interior_d_by_pairing(phi: &OneForm, x: &VectorField, p: &[f64]) -> Vec<f64> {
    let n = p.len();
    (0..n).map(|j| exterior_derivative_pair(phi, x, &VectorField::coordinate(n, j), p).unwrap()).collect()
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 100, ..ProptestConfig::default() })]

    #[test]
    fn bracket_is_antisymmetric_and_satisfies_jacobi(seed in any::<u64>()) {
        let mut rng = common::rng(seed);
        let f = common::random_fields(&mut rng, 3, 3, 0.5);
        let (a, b, c) = (&f[0], &f[1], &f[2]);
        let p = common::random_point(&mut rng, 3, 1.0);
        let ab = eval_vec(&a.bracket(b), &p);
        let ba = eval_vec(&b.bracket(a), &p);
        prop_assert!(ab.iter().zip(&ba).all(|(x, y)| (x + y).abs() <= TOL));
        let jacobi = a.bracket(&b.bracket(c)).add(&b.bracket(&c.bracket(a))).add(&c.bracket(&a.bracket(b)));
        prop_assert!(eval_vec(&jacobi, &p).iter().all(|v| v.abs() <= TOL));
    }

    #[test]
    fn cartan_identity(seed in any::<u64>()) {
        // (d∘i(X) + i(X)∘d)φ against L_Xφ(Y) = X(φ(Y)) − φ([X, Y]) for three fields Y
        let mut rng = common::rng(seed);
        let phi = common::random_form(&mut rng, 3);
        let fields = common::random_fields(&mut rng, 3, 4, 0.5);
        let x = &fields[0];
        let p = common::random_point(&mut rng, 3, 1.0);
        let d_of_i = OneForm::exact(&phi.pair(x), 3);
        let i_of_d = phi.exterior_derivative().interior(x);
        let lhs = d_of_i.add(&i_of_d);
        let lie = phi.lie_derivative(x);
        for y in &fields[1..] {
            let oracle = x.apply(&phi.pair(y)).eval(&p).unwrap() - phi.pair(&x.bracket(y)).eval(&p).unwrap();
            prop_assert!((pair_at(&lhs, y, &p) - oracle).abs() <= TOL);
            prop_assert!((pair_at(&lie, y, &p) - oracle).abs() <= TOL);
        }
    }

    #[test]
    fn interior_of_d_identity(seed in any::<u64>()) {
        // −d(φ·V) + Vφ + φ·DV as a row, against i(V)dφ built from the two-form rule
        let mut rng = common::rng(seed);
        let phi = common::random_form(&mut rng, 3);
        let v = &common::random_fields(&mut rng, 3, 1, 0.5)[0];
        let p = common::random_point(&mut rng, 3, 1.0);
        let grad = OneForm::exact(&phi.pair(v), 3).eval(&p).unwrap();
        let row: Vec<f64> = (0..3)
            .map(|j| {
                let v_phi = v.apply(phi.component(j)).eval(&p).unwrap();
                let transport: f64 = (0..3).map(|i| phi.component(i).eval(&p).unwrap() * v.component(i).diff(j).eval(&p).unwrap()).sum();
                -grad[j] + v_phi + transport
            })
            .collect();
        prop_assert!(max_gap(&row, &interior_d_by_pairing(&phi, v, &p)) <= TOL);
        let library: Vec<f64> = phi.interior_d(v).eval(&p).unwrap().iter().copied().collect();
        prop_assert!(max_gap(&row, &library) <= TOL);
    }

    #[test]
    fn lie_derivative_identity(seed in any::<u64>()) {
        // Vω + ω·DV = L_Vω, the right side read off from its defining pairing with ∂_j
        let mut rng = common::rng(seed);
        let phi = common::random_form(&mut rng, 3);
        let v = &common::random_fields(&mut rng, 3, 1, 0.5)[0];
        let p = common::random_point(&mut rng, 3, 1.0);
        let lie: Vec<f64> = phi.lie_derivative(v).eval(&p).unwrap().iter().copied().collect();
        for (j, lie_j) in lie.iter().enumerate() {
            let dj = VectorField::coordinate(3, j);
            let oracle = v.apply(&phi.pair(&dj)).eval(&p).unwrap() - phi.pair(&v.bracket(&dj)).eval(&p).unwrap();
            prop_assert!((lie_j - oracle).abs() <= TOL);
        }
    }

    #[test]
    fn two_form_rule_is_antisymmetric(seed in any::<u64>()) {
        let mut rng = common::rng(seed);
        let phi = common::random_form(&mut rng, 3);
        let f = common::random_fields(&mut rng, 3, 2, 0.5);
        let p = common::random_point(&mut rng, 3, 1.0);
        let xy = exterior_derivative_pair(&phi, &f[0], &f[1], &p).unwrap();
        let yx = exterior_derivative_pair(&phi, &f[1], &f[0], &p).unwrap();
        prop_assert!((xy + yx).abs() <= TOL);
        // the coordinate two-form agrees with the invariant formula
        let coord = phi.exterior_derivative().pair(&f[0], &f[1]).eval(&p).unwrap();
        prop_assert!((coord - xy).abs() <= TOL);
    }

    #[test]
    fn exact_forms_are_closed(seed in any::<u64>()) {
        let mut rng = common::rng(seed);
        let f = common::random_expression(&mut rng, 3, 3);
        let df = OneForm::exact(&f, 3);
        let fields = common::random_fields(&mut rng, 3, 2, 0.5);
        let p = common::random_point(&mut rng, 3, 1.0);
        let v = exterior_derivative_pair(&df, &fields[0], &fields[1], &p).unwrap();
        prop_assert!(v.abs() <= TOL * f.eval(&p).unwrap().abs().max(1.0) * 10.0, "{v}");
    }
}

#[test]
fn area_form_has_unit_differential() {
    let area = OneForm::parse(&["-y/2", "x/2"]).unwrap();
    let (dx, dy) = (VectorField::coordinate(2, 0), VectorField::coordinate(2, 1));
    let mut rng = common::rng(4);
    for _ in 0..50 {
        let p = common::random_point(&mut rng, 2, 5.0);
        assert_eq!(exterior_derivative_pair(&area, &dx, &dy, &p).unwrap(), 1.0);
    }
}

#[test]
fn coordinate_examples() {
    let (dx, dy) = (VectorField::coordinate(2, 0), VectorField::coordinate(2, 1));
    assert!(dx.bracket(&dy).is_zero());
    let x_dy = OneForm::parse(&["0", "x"]).unwrap();
    let lie = x_dy.lie_derivative(&dx);
    assert_eq!(lie.component(0).as_constant(), Some(0.0));
    assert_eq!(lie.component(1).as_constant(), Some(1.0));
    assert!(OneForm::zero(2).lie_derivative(&dy).is_zero());
}

#[test]
fn heisenberg_ground_truth() {
    let v = heisenberg();
    let b = v[0].bracket(&v[1]);
    let consts: Vec<Option<f64>> = b.components().iter().map(Expression::as_constant).collect();
    assert_eq!(consts, vec![Some(0.0), Some(0.0), Some(2.0)]);
    assert_eq!(bracket_of_word(&v, &Word::letter(0)).to_string(), v[0].to_string());
    let w = bracket_of_word(&v, &Word::new(vec![1, 0, 1]));
    let mut rng = common::rng(5);
    for _ in 0..20 {
        let p = common::random_point(&mut rng, 3, 4.0);
        assert_eq!(eval_vec(&w, &p), vec![0.0; 3]);
        assert_eq!(growth_vector(&v, &p, 4, 1e-8).unwrap(), vec![2, 3]);
    }

    let frame = build_frame(&v, &[0.0; 3], &FrameOptions::default()).unwrap();
    for _ in 0..100 {
        let p = common::random_point(&mut rng, 3, 4.0);
        let (x, y) = (p[0], p[1]);
        let expect = DMatrix::from_row_slice(3, 3, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, y / 2.0, -x / 2.0, 0.5]);
        assert!((frame.coframe_at(&p).unwrap() - expect).abs().max() <= 1e-12);
    }
}

#[test]
fn collinear_fields_fail_hormander() {
    let fields = vec![VectorField::coordinate(2, 0), VectorField::coordinate(2, 0)];
    assert_eq!(growth_vector(&fields, &[0.3, 0.1], 4, 1e-8).unwrap(), vec![1, 1, 1, 1]);
    let err = build_frame(&fields, &[0.0, 0.0], &FrameOptions::default()).unwrap_err();
    assert!(matches!(err, GeometryError::HormanderFailure { .. }));
}

#[test]
fn elliptic_growth_is_full() {
    let mut rng = common::rng(6);
    let fields = common::random_fields(&mut rng, 3, 3, 0.1);
    assert_eq!(growth_vector(&fields, &[0.0; 3], 3, 1e-8).unwrap(), vec![3]);
}

#[test]
fn frame_structure_and_coframe_duality() {
    let mut rng = common::rng(8);
    let mut systems = vec![heisenberg()];
    for _ in 0..4 {
        systems.push(perturbed_heisenberg(&mut rng, 0.1));
    }
    systems.push(common::random_fields(&mut rng, 3, 3, 0.2));
    for fields in &systems {
        let frame = build_frame(fields, &[0.0; 3], &FrameOptions::default()).unwrap();
        // |I_1| + … + |I_r| = n and I_k ⊆ I_1 × I_{k−1}
        assert_eq!(frame.layers().iter().map(Vec::len).sum::<usize>(), 3);
        for k in 1..frame.layers().len() {
            for w in &frame.layers()[k] {
                assert!(frame.layers()[0].contains(&Word::letter(w.head())));
                assert!(frame.layers()[k - 1].contains(&w.tail().unwrap()));
            }
        }
        let r = frame.radius();
        for _ in 0..100 {
            let p = common::random_point(&mut rng, 3, r / 3f64.sqrt());
            let w = frame.w_at(&p).unwrap();
            let c = frame.coframe_at(&p).unwrap();
            assert!((&w * &c - DMatrix::identity(3, 3)).abs().max() <= 1e-10);
            for (i, omega) in frame.coframe().iter().enumerate() {
                for (j, col) in frame.columns().iter().enumerate() {
                    let expect = if i == j { 1.0 } else { 0.0 };
                    let got = omega.pair(col).eval(&p).unwrap();
                    assert!((got - expect).abs() <= 1e-10, "ω{i}(V{j}) = {got}");
                }
            }
        }
    }
}
