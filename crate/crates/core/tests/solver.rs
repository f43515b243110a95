use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use steklov::fem::{FemProblem, Field};
use steklov::geometry::{build_mesh, BoundaryCurve, MeshOptions, WeightField};
use steklov::greens::Normalization;
use steklov::solver::{
    boundary_residual, continuation, energy_distance, jacobian, lambda_schedule, newton_solve, residual_norm, seed_field, Branch,
    ContinuationOptions, NewtonOptions, Seed,
};
use steklov::Error;

// Grading at one point splits the degenerate eigenpairs; on a nearly rotation-invariant mesh the
// rotated copies of a solution make the Jacobian almost singular.
fn disk_split() -> FemProblem {
    let o = MeshOptions::uniform(0.1).with_grading([1.0, 0.0], 0.02);
    FemProblem::new(build_mesh(&BoundaryCurve::unit_disk(), &o).unwrap(), WeightField::constant(1.0)).unwrap()
}

fn disk_graded(local: f64) -> FemProblem {
    let xi = [[1.0, 0.0], [-1.0, 0.0]];
    let o = MeshOptions::uniform(0.08).with_grading(xi[0], local).with_grading(xi[1], local).with_pinned(xi[0]).with_pinned(xi[1]);
    FemProblem::new(build_mesh(&BoundaryCurve::unit_disk(), &o).unwrap(), WeightField::constant(1.0)).unwrap()
}

fn annulus(h: f64) -> FemProblem {
    let c = BoundaryCurve::circle([2.0, 0.0], 1.0);
    FemProblem::new(build_mesh(&c, &MeshOptions::uniform(h)).unwrap(), WeightField::x1().with_bounds(1.0, 3.0)).unwrap()
}

fn antipodal() -> Seed {
    Seed::Ansatz { xi: [[1.0, 0.0], [-1.0, 0.0]], mu: [2.0, 2.0], normalization: Normalization::Unweighted }
}

#[test]
fn jacobian_matches_finite_differences() {
    let p = annulus(0.1);
    let nb = p.nb();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let lambda = 0.7;
    let u: Vec<f64> = (0..nb).map(|_| rng.random_range(-2.0..2.0)).collect();
    let j = jacobian(&p, lambda, &u);
    let (r0, _) = boundary_residual(&p, lambda, &u);
    for _ in 0..5 {
        let d: Vec<f64> = (0..nb).map(|_| rng.random_range(-1.0..1.0)).collect();
        let jd = &j * nalgebra::DVector::from_column_slice(&d);
        let err = |eps: f64| {
            let up: Vec<f64> = u.iter().zip(&d).map(|(a, b)| a + eps * b).collect();
            let (rp, _) = boundary_residual(&p, lambda, &up);
            rp.iter().zip(&r0).zip(jd.iter()).map(|((a, b), c)| ((a - b) / eps - c).powi(2)).sum::<f64>().sqrt()
        };
        let ratio = err(1e-3) / err(5e-4);
        assert!((1.8..2.2).contains(&ratio), "{ratio}");
    }
}

#[test]
fn zero_guess_is_immediate() {
    let p = annulus(0.1);
    for l in [0.01, 1.0, 50.0] {
        let (u, rep) = newton_solve(&p, l, &Field::zeros(p.mesh.n_nodes()), &NewtonOptions::default()).unwrap();
        assert_eq!(rep.iterations, 0);
        assert!(u.values.iter().all(|&v| v == 0.0));
    }
}

#[test]
fn iterates_are_odd() {
    let p = disk_graded(0.0125);
    let u0 = seed_field(&p, &antipodal(), 0.1).unwrap();
    let (u, a) = newton_solve(&p, 0.1, &u0, &NewtonOptions::default()).unwrap();
    let (v, b) = newton_solve(&p, 0.1, &u0.scaled(-1.0), &NewtonOptions::default()).unwrap();
    assert_eq!(a.history, b.history);
    for (x, y) in u.values.iter().zip(&v.values) {
        assert_eq!(*x, -*y);
    }
}

#[test]
fn disk_antipodal_ansatz_converges_quadratically() {
    let p = disk_graded(0.00625);
    let u0 = seed_field(&p, &antipodal(), 0.05).unwrap();
    let (u, rep) = newton_solve(&p, 0.05, &u0, &NewtonOptions::default()).unwrap();
    assert!(rep.iterations <= 8 && rep.quadratic, "{rep:?}");
    assert!(residual_norm(&p, 0.05, &u) <= 1e-9);
    // Compatibility: ∫ a sinh u = 0 (weak form with φ = 1).
    let nb = p.nb();
    let s: Vec<f64> = u.values[..nb].iter().map(|v| v.sinh()).collect();
    let abs: Vec<f64> = s.iter().map(|v| v.abs()).collect();
    assert!(p.mass.weighted_integral(&s).abs() <= 1e-9 * p.mass.weighted_integral(&abs));
}

#[test]
fn bad_inputs_are_rejected() {
    let p = annulus(0.2);
    let z = Field::zeros(p.mesh.n_nodes());
    assert!(newton_solve(&p, 0.0, &z, &NewtonOptions::default()).is_err());
    let mut nan = z.clone();
    nan.values[0] = f64::NAN;
    assert!(newton_solve(&p, 1.0, &nan, &NewtonOptions::default()).is_err());
    let big = Field { values: vec![800.0; p.mesh.n_nodes()] };
    assert!(matches!(newton_solve(&p, 1.0, &big, &NewtonOptions::default()), Err(Error::OverflowGuard { .. })));
    // λ = 0 solution set is the constants; at a Steklov eigenvalue the Jacobian at 0 is singular.
    let o = NewtonOptions { max_iter: 2, ..Default::default() };
    let bump = Field { values: (0..p.mesh.n_nodes()).map(|i| 5.0 * (p.mesh.nodes[i][1]).sin()).collect() };
    assert!(newton_solve(&p, 1e-3, &bump, &o).is_err());
    assert!(continuation(&p, &Seed::Trivial, &[0.1, 0.2], &ContinuationOptions::default(), &[]).is_err());
}

#[test]
fn trivial_branch_stays_zero() {
    let p = annulus(0.2);
    let sched = lambda_schedule(2.0, 0.01, 0.3).unwrap();
    let b = continuation(&p, &Seed::Trivial, &sched, &ContinuationOptions::default(), &[]).unwrap();
    assert_eq!(b.points.len(), sched.len());
    assert!(b.terminated.is_none());
    assert!(b.points.iter().all(|q| q.u.max_abs() == 0.0));
}

#[test]
fn eigen_branch_bifurcates_from_first_eigenvalue() {
    let p = disk_split();
    let lam1 = steklov::spectrum::steklov_spectrum(&p, 1).unwrap().eigenvalues[1];
    assert!((lam1 - 1.0).abs() < 0.02);
    let sched: Vec<f64> = [0.995, 0.98, 0.95, 0.9, 0.8].iter().map(|f| f * lam1).collect();
    let seed = Seed::Eigen { index: 1, amplitude: 0.2 };
    let b = continuation(&p, &seed, &sched, &ContinuationOptions::default(), &[]).unwrap();
    assert!(b.terminated.is_none(), "{:?}", b.terminated);
    let amp: Vec<f64> = b.points.iter().map(|q| q.u.max_abs()).collect();
    assert!(amp[0] > 1e-3 && amp.windows(2).all(|w| w[1] > w[0]), "{amp:?}");
    // Pitchfork scaling: amplitude² grows linearly in λ₁ − λ near the bifurcation.
    let k: Vec<f64> = b.points.iter().zip(&amp).map(|(q, a)| a * a / (lam1 - q.lambda)).collect();
    assert!((k[0] / k[1] - 1.0).abs() < 0.1, "{k:?}");

    // Determinism.
    let c = continuation(&p, &seed, &sched, &ContinuationOptions::default(), &[]).unwrap();
    for (x, y) in b.points.iter().zip(&c.points) {
        let d = x.u.values.iter().zip(&y.u.values).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        assert!(d <= 1e-12);
    }
}

#[test]
fn deflation_finds_the_negated_branch() {
    let p = disk_split();
    let lam1 = steklov::spectrum::steklov_spectrum(&p, 1).unwrap().eigenvalues[1];
    let sched = vec![0.9 * lam1, 0.85 * lam1];
    let seed = Seed::Eigen { index: 1, amplitude: 0.5 };
    let opts = ContinuationOptions::default();
    let b = continuation(&p, &seed, &sched, &opts, &[]).unwrap();
    // Same seed, with the first branch deflated: Newton must land elsewhere.
    let c = continuation(&p, &seed, &sched, &opts, std::slice::from_ref(&b)).unwrap();
    assert!(c.terminated.is_none(), "{:?}", c.terminated);
    let nb = p.nb();
    assert!(c.points[0].deflated);
    for (x, y) in b.points.iter().zip(&c.points) {
        assert!(residual_norm(&p, y.lambda, &y.u) <= 1e-9);
        let d = energy_distance(&p, &x.u.values[..nb], &y.u.values[..nb]);
        assert!(d > 1e-2 * x.u.max_abs(), "{d}");
        assert!(y.u.max_abs() > 1e-3);
    }
}

#[test]
fn ansatz_branch_grows_like_twice_log() {
    let p = disk_graded(0.0002);
    let sched = lambda_schedule(0.05, 0.002, 0.5).unwrap();
    let b = continuation(&p, &antipodal(), &sched, &ContinuationOptions::default(), &[]).unwrap();
    assert!(b.terminated.is_none(), "{:?}", b.terminated);
    for q in &b.points {
        assert!(residual_norm(&p, q.lambda, &q.u) <= 1e-9);
        if q.lambda <= 1e-2 {
            let r = q.u.max_abs() / (2.0 * (1.0 / q.lambda).ln());
            assert!((0.5..=1.5).contains(&r), "λ {} ratio {r}", q.lambda);
        }
    }
    let dir = tempfile::tempdir().unwrap();
    b.save(dir.path()).unwrap();
    let back = Branch::load(dir.path()).unwrap();
    assert_eq!(back, b);
}
