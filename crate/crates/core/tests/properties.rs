//! Property-based invariants spanning the module boundaries.

use mcflab_core::graphgeom::{self, Boundary, GraphPatch};
use mcflab_core::grassmann::{self, Plane, RegionSpec};
use mcflab_core::quadform::{self, FormKind, LambdaProfile};
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Random special-orthogonal matrix of the given size.
fn rotation(dim: usize, seed: u64) -> DMatrix<f64> {
    use rand::Rng;
    use rand_distr::StandardNormal;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gauss = DMatrix::from_fn(dim, dim, |_, _| rng.sample::<f64, _>(StandardNormal));
    let qr = gauss.qr();
    let mut q = qr.q();
    let r = qr.r();
    // fix column signs so Q is unique-ish and det can be repaired
    for c in 0..dim {
        if r[(c, c)] < 0.0 {
            for row in 0..dim {
                q[(row, c)] = -q[(row, c)];
            }
        }
    }
    if q.determinant() < 0.0 {
        for row in 0..dim {
            q[(row, 0)] = -q[(row, 0)];
        }
    }
    q
}

fn angles_strategy(n: usize) -> impl Strategy<Value = Vec<f64>> {
    proptest::collection::vec(0.0f64..1.4, n)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn round_trip_angles(mut thetas in angles_strategy(3), seed in 0u64..1000) {
        let p0 = Plane::reference(3, 3);
        let p = grassmann::plane_with_angles(&p0, &thetas, seed).unwrap();
        let spectrum = grassmann::jordan_spectrum(&p, &p0).unwrap();
        thetas.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for (got, want) in spectrum.thetas.iter().zip(&thetas) {
            prop_assert!((got - want).abs() < 1e-10, "theta {got} vs {want}");
        }
    }

    #[test]
    fn reciprocal_identity(thetas in angles_strategy(2), seed in 0u64..1000) {
        let p0 = Plane::reference(2, 2);
        let p = grassmann::plane_with_angles(&p0, &thetas, seed).unwrap();
        let w = grassmann::w_pairing(&p, &p0).unwrap();
        prop_assume!(w > 1e-6);
        let v = grassmann::slope_v(&p, &p0).unwrap();
        prop_assert!((v * w - 1.0).abs() < 1e-10, "v w = {}", v * w);
    }

    #[test]
    fn region_implication_chain(thetas in angles_strategy(2), seed in 0u64..1000) {
        let p0 = Plane::reference(2, 3);
        let p = grassmann::plane_with_angles(&p0, &thetas, seed).unwrap();
        let in_u2 = grassmann::region_test(&p, &p0, &RegionSpec::u2()).unwrap();
        let in_bjx = grassmann::region_test(&p, &p0, &RegionSpec::bjx()).unwrap();
        let in_t2 = grassmann::region_test(&p, &p0, &RegionSpec::t2_lambda(1.0).unwrap()).unwrap();
        if in_u2 {
            prop_assert!(in_bjx, "U2 sample escaped B_JX");
        }
        if in_t2 {
            prop_assert!(in_bjx, "T^{{2,1}} sample escaped B_JX");
        }
    }

    #[test]
    fn distance_symmetry_and_identity(thetas in angles_strategy(2), s1 in 0u64..500, s2 in 0u64..500) {
        let p0 = Plane::reference(2, 2);
        let p = grassmann::plane_with_angles(&p0, &thetas, s1).unwrap();
        let q = grassmann::plane_with_angles(&p0, &thetas, s2).unwrap();
        let d_pq = grassmann::distance(&p, &q).unwrap();
        let d_qp = grassmann::distance(&q, &p).unwrap();
        prop_assert!((d_pq - d_qp).abs() < 1e-10);
        prop_assert!(grassmann::distance(&p, &p).unwrap() < 1e-10);
    }

    #[test]
    fn orthogonal_invariance(thetas in angles_strategy(2), seed in 0u64..500, rot_seed in 0u64..500) {
        let p0 = Plane::reference(2, 2);
        let p = grassmann::plane_with_angles(&p0, &thetas, seed).unwrap();
        let g = rotation(4, rot_seed);
        let rp = Plane::from_orthonormal(&g * p.basis()).unwrap();
        let rp0 = Plane::from_orthonormal(&g * p0.basis()).unwrap();
        let w1 = grassmann::w_pairing(&p, &p0).unwrap();
        let w2 = grassmann::w_pairing(&rp, &rp0).unwrap();
        prop_assert!((w1 - w2).abs() < 1e-10, "w {w1} vs {w2}");
        let s1 = grassmann::jordan_spectrum(&p, &p0).unwrap();
        let s2 = grassmann::jordan_spectrum(&rp, &rp0).unwrap();
        for (a, b) in s1.thetas.iter().zip(&s2.thetas) {
            prop_assert!((a - b).abs() < 1e-10);
        }
        let d1 = grassmann::distance(&p, &p0).unwrap();
        let d2 = grassmann::distance(&rp, &rp0).unwrap();
        prop_assert!((d1 - d2).abs() < 1e-10);
    }

    #[test]
    fn metric_determinant_is_slope_squared(
        a in -0.8f64..0.8,
        b in -0.8f64..0.8,
        c in -0.8f64..0.8,
    ) {
        let patch = GraphPatch::from_fn(
            2,
            2,
            &[-1.0, -1.0],
            &[1.0, 1.0],
            &[9, 9],
            Boundary::FixedAffine,
            |x, out| {
                out[0] = a * x[0] + b * x[1];
                out[1] = c * x[0] * x[1];
            },
        ).unwrap();
        for node in patch.interior_nodes(1) {
            let du = graphgeom::jacobian(&patch, &node).unwrap();
            let g = graphgeom::induced_metric(&du);
            let det = g.determinant();
            let p = Plane::from_graph_jacobian(&du).unwrap();
            let v = grassmann::slope_v(&p, &Plane::reference(2, 2)).unwrap();
            prop_assert!((det - v * v).abs() <= 1e-10 * det.abs().max(1.0));
        }
    }

    #[test]
    fn curvature_invariants_under_axis_relabel(
        a in -0.5f64..0.5,
        b in -0.5f64..0.5,
    ) {
        // swap the two domain axes: |B|^2 and |H| are geometric invariants
        let make = |swapped: bool| {
            GraphPatch::from_fn(
                2,
                1,
                &[-1.0, -1.0],
                &[1.0, 1.0],
                &[11, 11],
                Boundary::FixedAffine,
                move |x, out| {
                    let (x0, x1) = if swapped { (x[1], x[0]) } else { (x[0], x[1]) };
                    out[0] = a * x0 * x0 + b * x0 * x1 + 0.3 * x1;
                },
            ).unwrap()
        };
        let p = make(false);
        let q = make(true);
        for node in p.interior_nodes(2) {
            let swapped: Vec<usize> = vec![node[1], node[0]];
            let b1 = graphgeom::norm_b_sq_coordinate(&p, &node).unwrap();
            let b2 = graphgeom::norm_b_sq_coordinate(&q, &swapped).unwrap();
            prop_assert!((b1 - b2).abs() <= 1e-9 * b1.abs().max(1.0));
            let h1 = graphgeom::mean_curvature(&p, &node).unwrap().norm();
            let h2 = graphgeom::mean_curvature(&q, &swapped).unwrap().norm();
            prop_assert!((h1 - h2).abs() <= 1e-9 * h1.max(1.0));
        }
    }

    #[test]
    fn quadform_paths_agree(seed in 0u64..10_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = quadform::random_profile(3, 3, 3.0, &mut rng);
        let h = quadform::random_shape_tensor(3, 3, &mut rng);
        let a = quadform::q_logv(&p, &h).unwrap();
        let b = quadform::q_logv_via_coframe(&p, &h).unwrap();
        let scale = a.abs().max(b.abs()).max(1e-30);
        prop_assert!((a - b).abs() <= 1e-12 * scale);
    }

    #[test]
    fn q_v_dominates(seed in 0u64..10_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = quadform::random_profile(2, 3, 2.5, &mut rng);
        let h = quadform::random_shape_tensor(2, 3, &mut rng);
        let qv = quadform::q_v(&p, &h).unwrap();
        let floor = p.slope() * quadform::q_logv(&p, &h).unwrap();
        prop_assert!(qv >= floor - 1e-10 * qv.abs().max(1.0));
    }

    #[test]
    fn oracle_is_one_sided(seed in 0u64..2_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = quadform::random_profile(2, 2, 2.0, &mut rng);
        let oracle = quadform::rayleigh_min(&p, FormKind::LogV).unwrap();
        let h = quadform::random_shape_tensor(2, 2, &mut rng);
        let norm = h.norm_sq();
        prop_assume!(norm > 1e-9);
        let q = quadform::q_logv(&p, &h).unwrap() / norm;
        prop_assert!(q >= oracle - 1e-10, "q = {q} below oracle {oracle}");
    }

    #[test]
    fn positivity_floor_on_sampled_profiles(
        l0 in 0.05f64..0.95,
        seed in 0u64..2_000,
    ) {
        // any profile with sup pairwise product <= lambda0 obeys (3.14)
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let raw = quadform::random_profile(3, 3, 1.0, &mut rng);
        let sup = raw.sup_pairwise();
        prop_assume!(sup > 1e-9);
        let scale = (l0 / sup).sqrt();
        let lambdas: Vec<f64> = raw.lambdas.iter().map(|x| x * scale).collect();
        let p = LambdaProfile::new(lambdas, 3).unwrap();
        let min = quadform::rayleigh_min(&p, FormKind::LogV).unwrap();
        prop_assert!(min >= 1.0 - l0 - 1e-9, "min {min} under 1 - {l0}");
    }
}
