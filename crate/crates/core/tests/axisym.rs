use std::collections::HashMap;

use steklov::axisym::{fd_residual, lift_to_3d, torus_problem, Grid3, Reconstruction, TorusDomain};
use steklov::fem::{FemProblem, Field};
use steklov::geometry::{boundary_critical_points, build_mesh, BoundaryCurve, MeshOptions};
use steklov::solver::{continuation, ContinuationOptions, Seed};

fn reference() -> TorusDomain {
    TorusDomain::new(BoundaryCurve::circle([2.0, 0.0], 1.0)).unwrap()
}

#[test]
fn reference_weight_and_critical_points() {
    let d = reference();
    let a = torus_problem(&d).unwrap();
    assert!((a.a0 - 1.0).abs() < 1e-12 && (a.a1 - 3.0).abs() < 1e-12);
    a.check_bounds(&d.cross).unwrap();
    let mut xs: Vec<f64> = boundary_critical_points(&a, &d.cross, 1e-10).points.iter().map(|c| c.xi[0]).collect();
    xs.sort_by(f64::total_cmp);
    assert!((xs[0] - 1.0).abs() < 1e-9 && (xs[1] - 3.0).abs() < 1e-9, "{xs:?}");
    assert!(TorusDomain::new(BoundaryCurve::circle([1.0, 0.0], 1.0)).is_err());
}

#[test]
fn analytic_lifts() {
    let d = reference();
    let mesh = build_mesh(&d.cross, &MeshOptions::uniform(0.05)).unwrap();
    let grid = Grid3::cube([2.0, 0.0, 0.0], 0.5, 21).unwrap();
    // u = x2 lifts to y3.
    let u = Field::from_fn(&mesh, |x| x[1]);
    let rec = Reconstruction::new(&mesh, &u, 0.125).unwrap();
    let lift = lift_to_3d(&rec, &grid, &[]).unwrap();
    assert!(fd_residual(&lift, 0.0).max_residual < 1e-9);
    for k in 0..21 {
        let y = grid.point(3, 5, k);
        assert!((lift.values[grid.index(3, 5, k)] - y[2]).abs() < 1e-12);
    }
    // u = log x1 solves div(x1 ∇u) = 0; its lift is harmonic off the axis.
    let mut last = f64::INFINITY;
    for n in [11, 21] {
        let g = Grid3::cube([2.0, 0.0, 0.0], 0.5, n).unwrap();
        let u = Field::from_fn(&mesh, |x| x[0].ln());
        let r = fd_residual(&lift_to_3d(&Reconstruction::new(&mesh, &u, 0.125).unwrap(), &g, &[]).unwrap(), 0.0);
        assert!(r.max_residual < 5.0 * (0.05 + g.step * g.step), "{r:?}");
        last = last.min(r.max_residual);
    }
    assert!(last < 0.02);
}

#[test]
fn lift_is_rotation_invariant_bitwise() {
    let d = reference();
    let mesh = build_mesh(&d.cross, &MeshOptions::uniform(0.1)).unwrap();
    let u = Field::from_fn(&mesh, |x| (3.0 * x[0]).sin() * x[1]);
    let rec = Reconstruction::new(&mesh, &u, 0.25).unwrap();
    let grid = Grid3::cube([2.0, 0.0, 0.0], 0.5, 9).unwrap();
    let lift = lift_to_3d(&rec, &grid, &[]).unwrap();
    let mut seen: HashMap<(u64, u64), f64> = HashMap::new();
    let mut repeats = 0;
    for k in 0..9 {
        for j in 0..9 {
            for i in 0..9 {
                let y = grid.point(i, j, k);
                let key = (y[0].hypot(y[1]).to_bits(), y[2].to_bits());
                let v = lift.values[grid.index(i, j, k)];
                if let Some(&w) = seen.get(&key) {
                    assert_eq!(v.to_bits(), w.to_bits());
                    repeats += 1;
                }
                seen.insert(key, v);
            }
        }
    }
    assert!(repeats > 0);
}

#[test]
fn lifted_solution_is_harmonic_and_geodesics_follow_points() {
    let d = reference();
    let a = torus_problem(&d).unwrap();
    let h = 0.05;
    let p = FemProblem::new(build_mesh(&d.cross, &MeshOptions::uniform(h)).unwrap(), a).unwrap();
    let lam1 = steklov::spectrum::steklov_spectrum(&p, 1).unwrap().eigenvalues[1];
    let b = continuation(&p, &Seed::Eigen { index: 1, amplitude: 1.0 }, &[0.9 * lam1, 0.6 * lam1], &ContinuationOptions::default(), &[])
        .unwrap();
    assert!(b.terminated.is_none());
    let u = &b.points[1].u;
    let grid = Grid3::cube([2.0, 0.0, 0.0], 0.5, 21).unwrap();
    let rec = Reconstruction::new(&p.mesh, u, 2.5 * h).unwrap();
    let lift = lift_to_3d(&rec, &grid, &[([3.0, 0.0], 1), ([1.0, 0.0], -1)]).unwrap();
    let r = fd_residual(&lift, 0.2);
    assert!(r.checked > 0 && r.max_residual <= 5.0 * (h + grid.step * grid.step), "{r:?}");
    let radii: Vec<f64> = lift.geodesics.iter().map(|g| g.radius).collect();
    assert_eq!(radii, vec![3.0, 1.0]);
    let q = lift.geodesics[0].point(1.0);
    assert!((q[0].hypot(q[1]) - 3.0).abs() < 1e-14 && q[2] == 0.0);

    let dir = tempfile::tempdir().unwrap();
    lift.save(dir.path()).unwrap();
    let csv = std::fs::read_to_string(dir.path().join("lift.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "y1,y2,y3,value");
    assert_eq!(csv.lines().count(), grid.len() + 1);
    let geo: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("geodesics.json")).unwrap()).unwrap();
    assert_eq!(geo[0]["radius"], 3.0);
    assert_eq!(geo[1]["sign"], -1);
}

#[test]
fn grid_outside_the_body_is_rejected() {
    let d = reference();
    let mesh = build_mesh(&d.cross, &MeshOptions::uniform(0.2)).unwrap();
    let u = Field::zeros(mesh.n_nodes());
    let rec = Reconstruction::new(&mesh, &u, 0.5).unwrap();
    let grid = Grid3::cube([0.0, 0.0, 0.0], 0.5, 5).unwrap();
    assert!(lift_to_3d(&rec, &grid, &[]).is_err());
}
