use std::f64::consts::PI;
use std::sync::Arc;
use unfitted::assembly::{CutGeometry, ExactSolution, QuadOptions};
use unfitted::geometry::{assign_hosts, classify, LevelSet, Mode};
use unfitted::mesh::{build_structured_mesh, BoxDomain};
use unfitted::study::{
    builtin_problem, convergence_rates, discretize, energy_error, example4, fitted_order, l2_error,
    read_csv, render_table, run_convergence, verify_quadrature, write_csv, DiscretizationOptions,
    ExperimentConfig,
};
use unfitted::xspace::{build_space, Continuity};
use unfitted::Point;

fn constant_exact(u: fn(&Point) -> f64, g: fn(&Point) -> Point) -> ExactSolution {
    ExactSolution {
        u: [Arc::new(u), Arc::new(u)],
        grad: [Arc::new(g), Arc::new(g)],
    }
}

#[test]
fn l2_error_of_zero_against_one_is_the_disk_measure() {
    let mesh = build_structured_mesh(&BoxDomain::square(-1.0, 1.0).unwrap(), 40).unwrap();
    let ls = LevelSet::new(2, "circle", |x| x[0] * x[0] + x[1] * x[1] - 0.49)
        .with_gradient(|x| [2.0 * x[0], 2.0 * x[1], 0.0]);
    let cls = assign_hosts(&mesh, &classify(&mesh, &ls, Mode::Boundary).unwrap()).unwrap();
    let space = build_space(&mesh, &cls, 1, Continuity::C0).unwrap();
    let geo = CutGeometry::build(&mesh, &ls, &cls, QuadOptions::for_degree(1, 7)).unwrap();
    let zero = vec![0.0; space.dof_count()];
    let e = l2_error(&space, &geo, &zero, &constant_exact(|_| 1.0, |_| [0.0; 3]));
    assert!((e - (PI * 0.49).sqrt()).abs() <= 1e-6 * e, "{e}");
}

#[test]
fn interpolants_of_polynomials_have_no_error() {
    let exact = constant_exact(|x| x[0] + x[1], |_| [1.0, 1.0, 0.0]);
    let p = builtin_problem(1).unwrap();
    for m in 1..=3 {
        let d = discretize(&p, m, 10, &DiscretizationOptions::default()).unwrap();
        let c = d.space.interpolate(|_, x| x[0] + x[1]);
        let geo = d.error_geometry(4).unwrap();
        assert!(l2_error(&d.space, &geo, &c, &exact) <= 1e-12);
        assert!(energy_error(&d.mesh, &d.space, &geo, &c, &exact).total() <= 1e-10);
    }
}

#[test]
fn energy_volume_term_on_one_triangle() {
    let mesh = build_structured_mesh(&BoxDomain::square(0.0, 1.0).unwrap(), 1).unwrap();
    let ls = LevelSet::new(2, "-1", |_| -1.0);
    let cls = assign_hosts(&mesh, &classify(&mesh, &ls, Mode::Boundary).unwrap()).unwrap();
    let space = build_space(&mesh, &cls, 1, Continuity::C0).unwrap();
    let geo = CutGeometry::build_range(&mesh, &ls, &cls, QuadOptions::for_degree(1, 2), 0..1, 0..0)
        .unwrap();
    let zero = vec![0.0; space.dof_count()];
    let e = energy_error(
        &mesh,
        &space,
        &geo,
        &zero,
        &constant_exact(|x| x[0], |_| [1.0, 0.0, 0.0]),
    );
    assert!((e.volume.sqrt() - 0.5f64.sqrt()).abs() < 1e-14);
    assert_eq!(
        e.face_jump + e.face_average + e.gamma_average + e.gamma_jump,
        0.0
    );
}

#[test]
fn example1_rates() {
    let report = run_convergence(&ExperimentConfig {
        degrees: vec![1, 2],
        grid_sizes: vec![10, 20, 40],
        ..Default::default()
    })
    .unwrap();
    let last = |m: usize| report.rows.iter().rev().find(|r| r.m == m).unwrap();
    let l2 = last(2).rate_l2.unwrap();
    assert!((2.7..=3.7).contains(&l2), "m=2 L2 rate {l2}");
    let en = last(1).rate_energy.unwrap();
    assert!((0.8..=1.5).contains(&en), "m=1 energy rate {en}");
    assert!(report.rows.iter().all(|r| r.failure.is_none()));
}

#[test]
fn single_grid_has_errors_but_no_rates() {
    let report = run_convergence(&ExperimentConfig {
        grid_sizes: vec![10],
        ..Default::default()
    })
    .unwrap();
    let row = &report.rows[0];
    assert!(row.e_l2.is_some() && row.e_energy.is_some());
    assert!(row.rate_l2.is_none() && row.rate_energy.is_none());
    assert_eq!(report.fit(1).unwrap().l2, None);
}

#[test]
fn failing_rows_are_recorded_and_the_rest_proceed() {
    // with a one-ring host search Example 5 has hostless cut elements at n = 10
    let report = run_convergence(&ExperimentConfig {
        example: 5,
        host_rings: 1,
        grid_sizes: vec![10, 40],
        ..Default::default()
    })
    .unwrap();
    assert!(report.rows[0].failure.is_some());
    assert!(report.rows[1].e_l2.is_some());
}

#[test]
fn config_validation_and_json() {
    let cfg: ExperimentConfig = serde_json::from_str(
        r#"{"example": 4, "contrast": 1000.0, "degrees": [1, 2], "grid_sizes": [10, 20]}"#,
    )
    .unwrap();
    assert_eq!(cfg.degrees, vec![1, 2]);
    assert_eq!(cfg.problem().unwrap().alpha, [1.0, 1000.0]);
    for bad in [
        ExperimentConfig {
            grid_sizes: vec![20, 10],
            ..Default::default()
        },
        ExperimentConfig {
            degrees: vec![4],
            ..Default::default()
        },
        ExperimentConfig {
            contrast: Some(5.0),
            ..Default::default()
        },
    ] {
        assert!(bad.validate().is_err());
    }
    assert!(serde_json::from_str::<ExperimentConfig>(r#"{"unknown": 1}"#).is_err());
    assert!(builtin_problem(7).is_err());
    assert!(example4(-1.0).is_err());
}

#[test]
fn csv_round_trip_and_table() {
    let report = run_convergence(&ExperimentConfig {
        grid_sizes: vec![10, 20],
        ..Default::default()
    })
    .unwrap();
    let mut buf = Vec::new();
    write_csv(&report.rows, &mut buf).unwrap();
    let back = read_csv(buf.as_slice()).unwrap();
    assert_eq!(back.len(), 2);
    for (a, b) in back.iter().zip(&report.rows) {
        assert_eq!((a.m, a.n, a.dofs), (b.m, b.n, b.dofs));
        assert!((a.e_l2.unwrap() - b.e_l2.unwrap()).abs() <= 1e-6 * b.e_l2.unwrap());
    }
    assert!(render_table(&back).lines().count() >= 4);
    assert!(read_csv("a,b\n1,2\n".as_bytes()).is_err());
}

#[test]
fn rates_and_fits() {
    let h = [0.4, 0.2, 0.1];
    let e = [Some(1.6), Some(0.4), Some(0.1)];
    let r = convergence_rates(&h, &e);
    assert_eq!(r[0], None);
    assert!((r[1].unwrap() - 2.0).abs() < 1e-12 && (r[2].unwrap() - 2.0).abs() < 1e-12);
    assert!((fitted_order(&h, &e).unwrap() - 2.0).abs() < 1e-12);
    assert_eq!(
        convergence_rates(&h, &[Some(1.0), None, Some(0.1)])[1],
        None
    );
    assert_eq!(fitted_order(&h[..1], &e[..1]), None);
}

#[test]
fn quadrature_check_on_example_1() {
    let checks = verify_quadrature(&builtin_problem(1).unwrap(), 40, &[3, 7]).unwrap();
    assert!(checks[1].measure_error.unwrap() < 1e-6);
    assert!(checks[1].surface_error.unwrap() < 1e-6);
    assert!(checks[1].measure_error.unwrap() < checks[0].measure_error.unwrap());
}
