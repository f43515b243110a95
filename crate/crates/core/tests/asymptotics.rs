use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use steklov::asymptotics::{
    ansatz_residual, bubble_boundary_identity, build_ansatz, correction_field, curve_integral, kernel_residual, shifted_bubbles,
    AnsatzConfig, Bubble, KernelPair, WeightedNorms,
};
use steklov::fem::FemProblem;
use steklov::geometry::{build_mesh, BoundaryCurve, MeshOptions, WeightField};
use steklov::greens::{mu_parameters, GreenTable, Normalization};
use steklov::Error;

fn graded(curve: &BoundaryCurve, a: WeightField, xi: [[f64; 2]; 2], local: f64) -> FemProblem {
    let o = MeshOptions::uniform(0.08).with_grading(xi[0], local).with_grading(xi[1], local).with_pinned(xi[0]).with_pinned(xi[1]);
    FemProblem::new(build_mesh(curve, &o).unwrap(), a).unwrap()
}

fn annulus(local: f64) -> FemProblem {
    graded(&BoundaryCurve::circle([2.0, 0.0], 1.0), WeightField::x1().with_bounds(1.0, 3.0), [[3.0, 0.0], [1.0, 0.0]], local)
}

#[test]
fn bubble_identity_on_random_samples() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst = 0.0f64;
    for _ in 0..10_000 {
        let b = Bubble::new(rng.random_range(-5.0..5.0), rng.random_range(0.05..5.0)).unwrap();
        worst = worst.max(bubble_boundary_identity(&b, &[rng.random_range(-20.0..20.0)]));
    }
    assert!(worst <= 1e-12, "{worst}");
}

#[test]
fn kernel_boundary_identity_and_fd_laplacian() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let k = KernelPair { mu: 1.3 };
    let xs: Vec<f64> = (0..10_000).map(|_| rng.random_range(-20.0..20.0)).collect();
    let grid: Vec<[f64; 2]> = (0..20).flat_map(|i| (1..11).map(move |j| [-2.0 + 0.2 * i as f64, 0.3 * j as f64])).collect();
    let r1 = kernel_residual(&k, &grid, 0.02, &xs).unwrap();
    let r2 = kernel_residual(&k, &grid, 0.01, &xs).unwrap();
    assert!(r1.boundary.iter().all(|&v| v <= 1e-12), "{r1:?}");
    for i in 0..2 {
        let ratio = r1.laplacian[i] / r2.laplacian[i];
        assert!((3.5..4.5).contains(&ratio), "z{i}: ratio {ratio}");
    }
    assert!(kernel_residual(&k, &[[0.0, 0.001]], 0.01, &[]).is_err());
}

proptest! {
    #[test]
    fn bubble_maximum_at_its_foot(t in -3.0..3.0f64, mu in 0.1..4.0f64, x1 in -10.0..10.0f64, x2 in 0.0..10.0f64) {
        let b = Bubble::new(t, mu).unwrap();
        prop_assert!(b.value([x1, x2]) <= b.peak() + 1e-12);
        prop_assert!((b.value([t, 0.0]) - b.peak()).abs() < 1e-12);
    }

    #[test]
    fn kernel_parity_and_bounds(mu in 0.1..4.0f64, x1 in -50.0..50.0f64, x2 in 0.0..50.0f64) {
        let k = KernelPair { mu };
        prop_assert_eq!(k.z1([-x1, x2]), -k.z1([x1, x2]));
        prop_assert_eq!(k.z0([-x1, x2]), k.z0([x1, x2]));
        prop_assert!(k.z0([x1, x2]).abs() <= 1.0 + 1e-12);
        prop_assert!(k.z1([x1, x2]).abs() <= 1.0 / mu + 1e-12);
    }

    #[test]
    fn weighted_norm_axioms(
        vals in prop::collection::vec((-5.0..5.0f64, -5.0..5.0f64, -50.0..50.0f64, -50.0..50.0f64), 1..40),
        c in -4.0..4.0f64,
        sigma in 0.01..1.0f64,
    ) {
        let n = WeightedNorms::new(sigma, [[10.0, 0.0], [-10.0, 0.0]]).unwrap();
        let f: Vec<f64> = vals.iter().map(|v| v.0).collect();
        let g: Vec<f64> = vals.iter().map(|v| v.1).collect();
        let pts: Vec<[f64; 2]> = vals.iter().map(|v| [v.2, v.3]).collect();
        let cf: Vec<f64> = f.iter().map(|v| c * v).collect();
        let sum: Vec<f64> = f.iter().zip(&g).map(|(a, b)| a + b).collect();
        for norm in [WeightedNorms::star, WeightedNorms::star_star] {
            let nf = norm(&n, &f, &pts);
            prop_assert!((norm(&n, &cf, &pts) - c.abs() * nf).abs() <= 1e-12 * (1.0 + nf));
            let ng = norm(&n, &g, &pts);
            prop_assert!(norm(&n, &sum, &pts) <= (nf + ng) * (1.0 + 1e-12));
            let dominated: Vec<f64> = f.iter().zip(&g).map(|(a, b)| if a.abs() <= b.abs() { *a } else { *b }).collect();
            prop_assert!(norm(&n, &dominated, &pts) <= nf + 1e-15);
        }
    }
}

#[test]
fn disk_correction_tends_to_constant() {
    let xi = [[1.0, 0.0], [-1.0, 0.0]];
    let p = graded(&BoundaryCurve::unit_disk(), WeightField::constant(1.0), xi, 0.0025);
    let cfg = AnsatzConfig::new(xi, [2.0, 2.0], 0.01);
    let b = shifted_bubbles(&p, &cfg).unwrap();
    let h = correction_field(&p, &b[0], Normalization::Unweighted, 8.0).unwrap();
    let target = -(4.0f64).ln();
    let dev = h.values.iter().fold(0.0f64, |m, v| m.max((v - target).abs()));
    assert!(dev < 0.1, "{dev}");
    // Normalization: ∫ H = −∫ u along the boundary, the right side on the exact curve.
    let lhs = p.mass.integral(h.trace(&p.mesh));
    let rhs = -curve_integral(&p.mesh.curve, |x, _| b[0].value(x), 0.0, 0.02);
    assert!((lhs - rhs).abs() < 1e-10 * rhs.abs().max(1.0), "{lhs} vs {rhs}");
}

#[test]
fn under_resolved_bubble_is_rejected() {
    let xi = [[1.0, 0.0], [-1.0, 0.0]];
    let p = graded(&BoundaryCurve::unit_disk(), WeightField::constant(1.0), xi, 0.05);
    let cfg = AnsatzConfig::new(xi, [2.0, 2.0], 0.001);
    assert!(matches!(build_ansatz(&p, &cfg), Err(Error::UnderResolved { .. })));
}

#[test]
fn ansatz_antisymmetric_under_swap() {
    let p = annulus(0.003);
    let cfg = AnsatzConfig::new([[3.0, 0.0], [1.0, 0.0]], [1.3, 0.7], 0.05);
    let u = build_ansatz(&p, &cfg).unwrap().u;
    let v = build_ansatz(&p, &cfg.swapped()).unwrap().u;
    for (a, b) in u.values.iter().zip(&v.values) {
        assert_eq!(*a, -*b);
    }
}

#[test]
fn ansatz_growth_and_far_field() {
    let xi = [[3.0, 0.0], [1.0, 0.0]];
    let p = annulus(0.0001);
    let far: Vec<usize> = (0..p.mesh.n_nodes())
        .filter(|&i| xi.iter().all(|&x| (p.mesh.nodes[i][0] - x[0]).hypot(p.mesh.nodes[i][1] - x[1]) >= 0.5))
        .collect();
    let node1 = p.mesh.nearest_boundary_node(xi[0]);
    // θ_λ → 0 needs the matched scales.
    let table = GreenTable::build(&p, &xi, Normalization::Unweighted).unwrap();
    let (m1, m2) = mu_parameters(&p, &table, xi[0], xi[1]).unwrap();
    let mut offsets = vec![];
    let mut far_max = vec![];
    let mut theta_local = vec![];
    for l in [0.1, 0.01, 0.001] {
        let cfg = AnsatzConfig::new(xi, [m1, m2], l);
        let ans = build_ansatz(&p, &cfg).unwrap();
        offsets.push(ans.u.values[node1] - 2.0 * (1.0 / l).ln());
        far_max.push(far.iter().map(|&i| ans.u.values[i].abs()).fold(0.0, f64::max));
        let r = ansatz_residual(&p, &ans, &WeightedNorms::for_config(0.1, &cfg).unwrap()).unwrap();
        theta_local.push(r.theta_sup_local);
        // Leading term of W at ξ'_1 is 2/μ₁.
        let lead = r.w[node1] / (1.0 + r.theta[node1]);
        assert!((lead - 2.0 / m1).abs() < 1e-2, "{lead}");
    }
    let spread = offsets.iter().fold(f64::MIN, |m: f64, v| m.max(*v)) - offsets.iter().fold(f64::MAX, |m: f64, v| m.min(*v));
    assert!(spread < 0.5, "{offsets:?}");
    assert!(far_max.iter().all(|&v| v < 3.0), "{far_max:?}");
    assert!(theta_local.windows(2).all(|w| w[1] < w[0]), "{theta_local:?}");
}
