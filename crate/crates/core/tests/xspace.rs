use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use unfitted::cutquad::{cut_volume_rule, Side};
use unfitted::geometry::{assign_hosts, classify, CellTag, LevelSet, Mode};
use unfitted::mesh::{build_structured_mesh, BoxDomain, SimplexMesh};
use unfitted::study::{builtin_problem, discretize, trace_ratios, DiscretizationOptions};
use unfitted::xspace::{build_space, Continuity, ExtendedSpace};
use unfitted::Point;

fn circle_space(
    n: usize,
    m: usize,
    continuity: Continuity,
) -> (
    SimplexMesh,
    unfitted::geometry::DomainClassification,
    ExtendedSpace,
) {
    let mesh = build_structured_mesh(&BoxDomain::square(-1.0, 1.0).unwrap(), n).unwrap();
    let ls = LevelSet::new(2, "circle", |x| x[0] * x[0] + x[1] * x[1] - 0.49);
    let cls = assign_hosts(&mesh, &classify(&mesh, &ls, Mode::Boundary).unwrap()).unwrap();
    let space = build_space(&mesh, &cls, m, continuity).unwrap();
    (mesh, cls, space)
}

/// Uniform random point of the simplex `pts`.
fn random_point(rng: &mut ChaCha8Rng, pts: &[Point]) -> Point {
    let (mut a, mut b): (f64, f64) = (rng.random(), rng.random());
    if a + b > 1.0 {
        (a, b) = (1.0 - a, 1.0 - b);
    }
    let mut x = [0.0; 3];
    for d in 0..3 {
        x[d] = pts[0][d] + a * (pts[1][d] - pts[0][d]) + b * (pts[2][d] - pts[0][d]);
    }
    x
}

#[test]
fn dof_counts() {
    let (mesh, cls, space) = circle_space(10, 1, Continuity::C0);
    let mut verts: Vec<usize> = (0..mesh.n_elements())
        .filter(|&k| cls.element_tag[k] == CellTag::Side0)
        .flat_map(|k| mesh.element(k).to_vec())
        .collect();
    verts.sort_unstable();
    verts.dedup();
    assert_eq!(space.dof_count(), verts.len());

    let (_, cls, dg) = circle_space(10, 2, Continuity::Dg);
    assert_eq!(dg.dof_count(), 6 * cls.count(CellTag::Side0));

    let mesh = build_structured_mesh(&BoxDomain::square(-1.0, 1.0).unwrap(), 4).unwrap();
    let all = LevelSet::new(2, "-1", |_| -1.0);
    let cls = assign_hosts(&mesh, &classify(&mesh, &all, Mode::Boundary).unwrap()).unwrap();
    assert_eq!(
        build_space(&mesh, &cls, 1, Continuity::C0)
            .unwrap()
            .dof_count(),
        mesh.n_vertices()
    );
}

#[test]
fn polynomials_are_reproduced_through_extension() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for m in 1..=3 {
        let (mesh, cls, space) = circle_space(10, m, Continuity::C0);
        // a full polynomial of degree m
        let u = move |x: &Point| {
            let (a, b) = (x[0], x[1]);
            let mut v = 0.3 + a - 2.0 * b;
            if m >= 2 {
                v += 0.7 * a * a - a * b + 1.5 * b * b;
            }
            if m >= 3 {
                v += a * a * a - 0.4 * a * b * b + 0.2 * b * b * b;
            }
            v
        };
        let c = space.interpolate(|_, x| u(x));
        for k in 0..mesh.n_elements() {
            if cls.element_tag[k] == CellTag::Side1 {
                continue;
            }
            let pts = mesh.element_points(k);
            for _ in 0..100 {
                let x = random_point(&mut rng, &pts);
                let (v, _) = space.evaluate(&c, k, 0, &x).unwrap();
                assert!(
                    (v - u(&x)).abs() <= 1e-12 * u(&x).abs().max(1.0),
                    "m={m} element {k}"
                );
            }
        }
    }
}

#[test]
fn zero_function_interpolates_to_zero() {
    let (_, _, space) = circle_space(10, 2, Continuity::C0);
    assert!(space.interpolate(|_, _| 0.0).iter().all(|&c| c == 0.0));
}

#[test]
fn extension_interpolation_converges_on_cut_elements() {
    let u = |x: &Point| {
        (2.0 * std::f64::consts::PI * x[0]).sin() * (4.0 * std::f64::consts::PI * x[1]).sin()
    };
    let ls = LevelSet::new(2, "circle", |x| x[0] * x[0] + x[1] * x[1] - 0.49);
    for m in 1..=3 {
        let mut errs = Vec::new();
        for n in [10, 20, 40] {
            let (mesh, cls, space) = circle_space(n, m, Continuity::C0);
            let c = space.interpolate(|_, x| u(x));
            let worst = cls
                .cut_elements()
                .into_iter()
                .map(|k| {
                    let rule =
                        cut_volume_rule(&mesh.element_points(k), &ls, Side::Neg, 2 * m + 2, 5)
                            .unwrap();
                    rule.integrate(|x| (u(x) - space.evaluate(&c, k, 0, x).unwrap().0).powi(2))
                        .sqrt()
                })
                .fold(0.0, f64::max);
            errs.push(worst);
        }
        let rate = (errs[1] / errs[2]).ln() / 2f64.ln();
        assert!(rate >= m as f64 + 0.7, "m={m}: {errs:?} rate {rate}");
    }
}

#[test]
fn discrete_trace_and_inverse_ratios_stay_bounded() {
    let problem = builtin_problem(1).unwrap();
    for m in 1..=2 {
        let ratio = |n: usize| {
            trace_ratios(&discretize(&problem, m, n, &DiscretizationOptions::default()).unwrap())
                .unwrap()
        };
        let (a, b) = (ratio(10), ratio(40));
        assert!(b.trace <= 1.5 * a.trace, "m={m} trace {a:?} {b:?}");
        assert!(b.volume <= 1.5 * a.volume, "m={m} volume {a:?} {b:?}");
    }
}
