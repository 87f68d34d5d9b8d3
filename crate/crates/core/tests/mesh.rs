use unfitted::mesh::{build_structured_mesh, BoxDomain, SimplexMesh};

fn square(n: usize) -> SimplexMesh {
    build_structured_mesh(&BoxDomain::square(-1.0, 1.0).unwrap(), n).unwrap()
}

/// Closure intersection test by shared vertices, O(T²).
fn brute_patch(mesh: &SimplexMesh, k: usize) -> Vec<usize> {
    let a = mesh.element(k);
    (0..mesh.n_elements())
        .filter(|&j| mesh.element(j).iter().any(|v| a.contains(v)))
        .collect()
}

#[test]
fn structured_grid_counts() {
    let m = square(10);
    assert_eq!(m.n_elements(), 200);
    assert_eq!(m.n_vertices(), 121);
    assert!((m.cell_width() - 0.2).abs() < 1e-15);
    let cube = build_structured_mesh(&BoxDomain::cube(0.0, 1.0).unwrap(), 2).unwrap();
    assert_eq!(cube.n_elements(), 48);
}

#[test]
fn patches_match_brute_force() {
    let m = square(10);
    for k in 0..m.n_elements() {
        let p = m.element_patch(k).unwrap();
        assert_eq!(p, brute_patch(&m, k), "element {k}");
        assert!(p.contains(&k));
        assert!(p.iter().all(|&j| j < m.n_elements()));
        for &j in &p {
            assert!(
                m.element_patch(j).unwrap().contains(&k),
                "patch symmetry {k} {j}"
            );
        }
    }
    assert!(m.element_patch(m.n_elements()).is_err());
}

#[test]
fn quasi_uniformity_is_resolution_independent() {
    for (dim, n) in [(2usize, 4usize), (2, 7), (3, 2), (3, 3)] {
        let bbox = if dim == 2 {
            BoxDomain::square(0.0, 1.0).unwrap()
        } else {
            BoxDomain::cube(0.0, 1.0).unwrap()
        };
        let ratio = |n: usize| {
            let m = build_structured_mesh(&bbox, n).unwrap();
            let hmax = (0..m.n_elements()).map(|k| m.h_elem(k)).fold(0.0, f64::max);
            let rmin = (0..m.n_elements())
                .map(|k| m.inradius(k))
                .fold(f64::INFINITY, f64::min);
            hmax / rmin
        };
        let (a, b) = (ratio(n), ratio(2 * n));
        assert!((a - b).abs() <= 1e-12 * a, "dim {dim}: {a} vs {b}");
    }
}

#[test]
fn element_volumes_fill_the_box() {
    for n in [1, 3, 10] {
        let m = square(n);
        let total: f64 = (0..m.n_elements()).map(|k| m.volume(k)).sum();
        assert!((total - 4.0).abs() <= 1e-12 * 4.0);
    }
    let cube = build_structured_mesh(&BoxDomain::cube(0.0, 1.0).unwrap(), 3).unwrap();
    let total: f64 = (0..cube.n_elements()).map(|k| cube.volume(k)).sum();
    assert!((total - 1.0).abs() <= 1e-12);
}

#[test]
fn faces_are_shared_by_at_most_two_elements() {
    let m = build_structured_mesh(&BoxDomain::cube(0.0, 1.0).unwrap(), 2).unwrap();
    let boundary = m.faces().iter().filter(|f| f.is_boundary()).count();
    // each cube face carries 2·n² boundary triangles
    assert_eq!(boundary, 6 * 2 * 4);
    assert_eq!(4 * m.n_elements(), boundary + 2 * (m.n_faces() - boundary));
}

#[test]
fn text_format_round_trip_of_a_structured_mesh() {
    let m = square(3);
    let back = SimplexMesh::from_text(&m.to_text()).unwrap();
    assert_eq!(back.n_elements(), m.n_elements());
    assert_eq!(back.n_faces(), m.n_faces());
    assert_eq!(back.vertices(), m.vertices());
}
