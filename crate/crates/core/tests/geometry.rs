use proptest::prelude::*;

use steklov::geometry::{boundary_critical_points, build_mesh, BoundaryCurve, MeshOptions, WeightField};

fn min_boundary_edge(m: &steklov::geometry::Mesh) -> f64 {
    (0..m.n_boundary).map(|k| m.boundary_edge(k)).fold(f64::INFINITY, f64::min)
}

#[test]
fn pins_next_to_existing_breaks_merge() {
    // The scan finds (3, 0) only to ~1e-10, right next to γ(0).
    let c = BoundaryCurve::circle([2.0, 0.0], 1.0);
    let a = WeightField::x1().with_bounds(1.0, 3.0);
    let xi: Vec<[f64; 2]> = boundary_critical_points(&a, &c, 1e-10).points.iter().map(|p| p.xi).collect();
    assert_eq!(xi.len(), 2);
    let mut o = MeshOptions::uniform(0.1);
    for p in &xi {
        o = o.with_pinned(*p);
    }
    let m = build_mesh(&c, &o).unwrap();
    assert!(min_boundary_edge(&m) > 0.02, "{}", min_boundary_edge(&m));
    for p in &xi {
        let k = m.nearest_boundary_node(*p);
        assert!((m.nodes[k][0] - p[0]).hypot(m.nodes[k][1] - p[1]) < 1e-9);
    }
}

#[test]
fn graded_mesh_reaches_local_size() {
    let p = [1.0, 0.0];
    let m = build_mesh(&BoundaryCurve::unit_disk(), &MeshOptions::uniform(0.08).with_grading(p, 1e-3).with_pinned(p)).unwrap();
    let k = m.nearest_boundary_node(p);
    assert_eq!(m.nodes[k], p);
    let local = m.boundary_edge(k).max(m.boundary_edge((k + m.n_boundary - 1) % m.n_boundary));
    assert!(local <= 1.5e-3, "{local}");
    assert!(m.max_edge() <= 0.08 * 1.5);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]
    #[test]
    fn star_meshes_are_valid(amplitude in 0.0..0.3f64, lobes in 2u32..6, h in 0.08..0.25f64, t in 0.0..1.0f64) {
        let c = BoundaryCurve::Star { center: [0.3, -0.2], radius: 1.0, amplitude, lobes };
        let pin = c.point(t);
        let m = build_mesh(&c, &MeshOptions::uniform(h).with_pinned(pin)).unwrap();
        m.validate().unwrap();
        prop_assert!(m.boundary_params.windows(2).all(|w| w[1] > w[0]));
        let area: f64 = (0..m.triangles.len()).map(|t| m.triangle_area(t)).sum();
        // Shoelace area of the boundary polygon.
        let b = m.boundary_points();
        let poly: f64 = (0..b.len()).map(|i| { let (p, q) = (b[i], b[(i + 1) % b.len()]); p[0] * q[1] - q[0] * p[1] }).sum::<f64>() / 2.0;
        prop_assert!((area - poly).abs() < 1e-10 * poly);
        let k = m.nearest_boundary_node(pin);
        prop_assert!((m.nodes[k][0] - pin[0]).hypot(m.nodes[k][1] - pin[1]) < 1e-6);
    }
}
