//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits with
//! a nonzero status if any criterion fails.
//!
//! The 3D smoke runs only with `--extended` or `UNFITTED_EXTENDED=1`:
//! `cargo test --release -p unfitted --test acceptance -- --extended`.

use std::f64::consts::PI;
use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use unfitted::assembly::ExactSolution;
use unfitted::cutquad::{cut_surface_rule, cut_volume_rule, Side};
use unfitted::geometry::{classify, CellTag, Mode, ScalarFn, VectorFn};
use unfitted::mesh::build_structured_mesh;
use unfitted::study::{
    builtin_problem, condition_numbers, condition_slope, discretize, example4, instance_errors,
    min_eigenvalue, run_convergence_with, solve_instance, trace_ratios, Builtin, ConvergenceReport,
    DiscretizationOptions, ExperimentConfig, SolverKind, SolverOptions,
};
use unfitted::Point;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn fail<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let p = builtin_problem(1).map_err(fail)?;
    let mesh = build_structured_mesh(&p.bbox, 40).map_err(fail)?;
    let cls = classify(&mesh, &p.ls, Mode::Boundary).map_err(fail)?;
    let (mut area, mut perimeter, mut flux) = (0.0, 0.0, 0.0);
    for k in 0..mesh.n_elements() {
        match cls.element_tag[k] {
            CellTag::Side0 => area += mesh.volume(k),
            CellTag::Cut => {
                let pts = mesh.element_points(k);
                area += cut_volume_rule(&pts, &p.ls, Side::Neg, 2, 7)
                    .map_err(fail)?
                    .total_weight();
                let s = cut_surface_rule(&pts, &p.ls, 2, 7).map_err(fail)?;
                perimeter += s.total_weight();
                let normals = s.normals.as_ref().ok_or("surface rule without normals")?;
                for ((x, w), n) in s.nodes.iter().zip(&s.weights).zip(normals) {
                    // F = (x, y)/2 has unit divergence
                    flux += w * 0.5 * (x[0] * n[0] + x[1] * n[1]);
                }
            }
            CellTag::Side1 => {}
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let (ea, ep, ed) = (
        rel(area, PI * 0.49),
        rel(perimeter, 1.4 * PI),
        rel(flux, area),
    );
    check(
        ea <= 1e-6 && ep <= 1e-6 && ed <= 1e-6 && secs < 10.0,
        format!("area {ea:.1e}, perimeter {ep:.1e}, divergence {ed:.1e} (relative), {secs:.1} s"),
    )
}

/// `c + s·P(x)` with `P` a fixed polynomial of degree `m`; returns value,
/// gradient and Laplacian.
fn polynomial(m: usize, c: f64, s: f64) -> (ScalarFn, VectorFn, ScalarFn) {
    let q = if m >= 2 { 1.0 } else { 0.0 };
    (
        Arc::new(move |x: &Point| {
            c + s * (2.0 * x[0] - 3.0 * x[1] + q * (x[0] * x[0] - x[0] * x[1] + 2.0 * x[1] * x[1]))
        }),
        Arc::new(move |x: &Point| {
            [
                s * (2.0 + q * (2.0 * x[0] - x[1])),
                s * (-3.0 + q * (-x[0] + 4.0 * x[1])),
                0.0,
            ]
        }),
        Arc::new(move |_: &Point| 6.0 * q * s),
    )
}

fn criterion_2() -> Outcome {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for id in [1, 4] {
        for m in [1, 2] {
            let mut p = builtin_problem(id).map_err(fail)?;
            // u₁ = (α₀/α₁)u₀ + c keeps the flux jump zero for any normal
            let (u0, g0, l0) = polynomial(m, 1.0, 1.0);
            let (u1, g1, l1) = polynomial(m, -0.5, p.alpha[0] / p.alpha[1]);
            p.exact = ExactSolution {
                u: [u0, u1],
                grad: [g0, g1],
            };
            p.laplacian = [l0, l1];
            let opts = DiscretizationOptions {
                project_surface: false,
                ..Default::default()
            };
            let solver = SolverOptions {
                kind: SolverKind::Dense,
                ..Default::default()
            };
            let inst = solve_instance(&p, m, 10, &opts, &solver).map_err(fail)?;
            let space = &inst.disc.space;
            let nodal = space
                .dof_positions()
                .iter()
                .enumerate()
                .map(|(i, x)| (inst.coeffs[i] - (p.exact.u[space.dof_side(i)])(x)).abs())
                .fold(0.0, f64::max);
            let (l2, _) = instance_errors(&inst, &p.exact, inst.disc.quad.depth).map_err(fail)?;
            worst = worst.max(nodal).max(l2);
        }
    }
    let secs = start.elapsed().as_secs_f64();
    check(
        worst <= 1e-9 && secs < 30.0,
        format!("worst nodal/L2 error {worst:.1e} over Examples 1, 4 and m = 1, 2, {secs:.1} s"),
    )
}

/// Runs the rate study and checks the fitted orders against the windows.
fn rate_windows(problem: &Builtin, grids: &[(usize, Vec<usize>)]) -> Outcome {
    let mut ok = true;
    let mut parts = Vec::new();
    for (m, g) in grids {
        let report: ConvergenceReport = run_convergence_with(
            problem,
            &ExperimentConfig {
                example: problem.id,
                degrees: vec![*m],
                grid_sizes: g.clone(),
                ..Default::default()
            },
        )
        .map_err(fail)?;
        let fit = report.fit(*m).ok_or("no fit")?;
        let mf = *m as f64;
        let l2_ok = fit.l2.is_some_and(|r| (mf + 0.7..=mf + 1.6).contains(&r));
        let en_ok = fit
            .energy
            .is_some_and(|r| (mf - 0.3..=mf + 0.6).contains(&r));
        ok &= l2_ok && en_ok;
        parts.push(format!(
            "m={m} n={g:?}: L2 {:.2}, energy {:.2}",
            fit.l2.unwrap_or(f64::NAN),
            fit.energy.unwrap_or(f64::NAN)
        ));
    }
    check(ok, parts.join("; "))
}

fn criterion_3() -> Outcome {
    let p = builtin_problem(1).map_err(fail)?;
    rate_windows(
        &p,
        &[
            (1, vec![10, 20, 40, 80]),
            (2, vec![10, 20, 40]),
            (3, vec![10, 20, 40]),
        ],
    )
}

fn criterion_4() -> Outcome {
    let flower = rate_windows(
        &builtin_problem(2).map_err(fail)?,
        &(1..=3).map(|m| (m, vec![24, 32, 48])).collect::<Vec<_>>(),
    );
    let star = rate_windows(
        &builtin_problem(5).map_err(fail)?,
        &(1..=3).map(|m| (m, vec![40, 48, 64])).collect::<Vec<_>>(),
    );
    let line = |o: &Outcome| match o {
        Ok(s) | Err(s) => s.clone(),
    };
    check(
        flower.is_ok() && star.is_ok(),
        format!("Example 2 [{}]; Example 5 [{}]", line(&flower), line(&star)),
    )
}

fn criterion_5() -> Outcome {
    let opts = DiscretizationOptions::default();
    let solver = SolverOptions::default();
    let mut worst: f64 = 1.0;
    for m in 1..=3 {
        for n in [10, 20, 40] {
            let mut errs = Vec::new();
            for b in [10.0, 1000.0] {
                let p = example4(b).map_err(fail)?;
                let inst = solve_instance(&p, m, n, &opts, &solver).map_err(fail)?;
                let (l2, en) = instance_errors(&inst, &p.exact, 7).map_err(fail)?;
                errs.push((l2, en.total()));
            }
            let (a, b) = (errs[0], errs[1]);
            worst = worst
                .max((a.0 / b.0).max(b.0 / a.0))
                .max((a.1 / b.1).max(b.1 / a.1));
        }
    }
    check(
        worst < 3.0,
        format!("largest b=1000 / b=10 error ratio {worst:.3} over m = 1..3, n = 10, 20, 40"),
    )
}

fn criterion_6() -> Outcome {
    let mut ok = true;
    let mut parts = Vec::new();
    for id in [1, 4] {
        let rows = condition_numbers(
            &builtin_problem(id).map_err(fail)?,
            1,
            &[10, 20, 40],
            &DiscretizationOptions::default(),
            1e-8,
        )
        .map_err(fail)?;
        let slope = condition_slope(&rows).ok_or("no slope")?;
        ok &= (-2.6..=-1.4).contains(&slope);
        parts.push(format!("Example {id} slope {slope:.2}"));
    }
    check(ok, parts.join(", "))
}

fn criterion_7() -> Outcome {
    let opts = DiscretizationOptions::default();
    let mut min_lambda = f64::INFINITY;
    for id in [1, 2, 4, 5] {
        let p = builtin_problem(id).map_err(fail)?;
        for m in 1..=3 {
            for n in [10, 20] {
                let l = min_eigenvalue(&p, m, n, &opts)
                    .map_err(|e| format!("Example {id} m={m} n={n}: {e}"))?;
                min_lambda = min_lambda.min(l);
            }
        }
    }
    let n = 20;
    let mut worst: f64 = 1.0;
    for id in [1, 4] {
        let p = builtin_problem(id).map_err(fail)?;
        let h = p.bbox.scale() / n as f64;
        for m in [1, 2] {
            let mut errs = Vec::new();
            for s in [0.0, 1e-6, 0.5 * h] {
                let q = p.shifted([s, s, 0.0]);
                let inst =
                    solve_instance(&q, m, n, &opts, &SolverOptions::default()).map_err(fail)?;
                errs.push(instance_errors(&inst, &q.exact, 7).map_err(fail)?.0);
            }
            let (lo, hi) = errs
                .iter()
                .fold((f64::INFINITY, 0.0f64), |(a, b), &e| (a.min(e), b.max(e)));
            worst = worst.max(hi / lo);
        }
    }
    check(
        min_lambda > 0.0 && worst < 2.0,
        format!("SPD on Examples 1, 2, 4, 5 (smallest eigenvalue {min_lambda:.2e}); worst shift error ratio {worst:.2}"),
    )
}

fn criterion_8() -> Outcome {
    let p = builtin_problem(1).map_err(fail)?;
    let residual = |depth: usize| -> Result<f64, String> {
        let opts = DiscretizationOptions {
            quad_depth: Some(depth),
            quad_degree: Some(10),
            ..Default::default()
        };
        let d = discretize(&p, 2, 10, &opts).map_err(fail)?;
        let r = d
            .assembler()
            .map_err(fail)?
            .galerkin_residual(&p.exact)
            .map_err(fail)?;
        Ok(r.iter().fold(0.0f64, |m, v| m.max(v.abs())))
    };
    let (coarse, fine) = (residual(2)?, residual(7)?);
    check(
        fine * 100.0 <= coarse,
        format!(
            "max residual {coarse:.2e} at depth 2, {fine:.2e} at depth 7 (factor {:.0})",
            coarse / fine
        ),
    )
}

fn criterion_9() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut worst: f64 = 0.0;
    for id in [1, 4] {
        let p = builtin_problem(id).map_err(fail)?;
        for m in 1..=3 {
            let d = discretize(&p, m, 10, &DiscretizationOptions::default()).map_err(fail)?;
            let u = move |side: usize, x: &Point| {
                let s = if side == 0 { 1.0 } else { -2.0 };
                s * (0.3 + x[0] - 2.0 * x[1]) + x[0].powi(m as i32) - 0.5 * x[1].powi(m as i32)
            };
            let c = d.space.interpolate(u);
            for k in 0..d.mesh.n_elements() {
                let pts = d.mesh.element_points(k);
                for &s in d.cls.sides() {
                    if d.space.delegate(k, s).is_none() {
                        continue;
                    }
                    for _ in 0..20 {
                        let (mut a, mut b): (f64, f64) = (rng.random(), rng.random());
                        if a + b > 1.0 {
                            (a, b) = (1.0 - a, 1.0 - b);
                        }
                        let x: Point = std::array::from_fn(|i| {
                            pts[0][i] + a * (pts[1][i] - pts[0][i]) + b * (pts[2][i] - pts[0][i])
                        });
                        let (v, _) = d.space.evaluate(&c, k, s, &x).ok_or("inactive element")?;
                        worst = worst.max((v - u(s, &x)).abs() / u(s, &x).abs().max(1.0));
                    }
                }
            }
        }
    }
    let p = builtin_problem(1).map_err(fail)?;
    let mut growth: f64 = 0.0;
    for m in [1, 2] {
        let ratio = |n: usize| -> Result<_, String> {
            trace_ratios(&discretize(&p, m, n, &DiscretizationOptions::default()).map_err(fail)?)
                .map_err(fail)
        };
        let (a, b) = (ratio(10)?, ratio(40)?);
        growth = growth.max(b.trace / a.trace).max(b.volume / a.volume);
    }
    check(
        worst <= 1e-12 && growth <= 1.5,
        format!(
            "reproduction error {worst:.1e}; trace/inverse ratio growth n=10 -> 40 {growth:.3}"
        ),
    )
}

fn criterion_10() -> Outcome {
    let mut ok = true;
    let mut parts = Vec::new();
    for id in [3, 6] {
        let p = builtin_problem(id).map_err(fail)?;
        let report = run_convergence_with(
            &p,
            &ExperimentConfig {
                example: id,
                degrees: vec![1],
                grid_sizes: vec![4, 8, 12, 16],
                ..Default::default()
            },
        )
        .map_err(fail)?;
        let resolved: Vec<usize> = report
            .rows
            .iter()
            .filter(|r| r.e_l2.is_some())
            .map(|r| r.n)
            .collect();
        let unresolved: Vec<usize> = report
            .rows
            .iter()
            .filter(|r| r.failure.is_some())
            .map(|r| r.n)
            .collect();
        let l2 = report.fit(1).and_then(|f| f.l2);
        ok &= resolved.len() >= 3 && l2.is_some_and(|r| r >= 1.6);
        parts.push(format!(
            "Example {id}: L2 order {:.2} over n={resolved:?} (unresolved n={unresolved:?})",
            l2.unwrap_or(f64::NAN)
        ));
    }
    check(ok, parts.join("; "))
}

fn main() {
    let extended = std::env::args().any(|a| a == "--extended")
        || std::env::var("UNFITTED_EXTENDED").is_ok_and(|v| v == "1");
    let criteria: [(u32, &str, fn() -> Outcome); 10] = [
        (1, "quadrature oracle", criterion_1),
        (2, "patch test", criterion_2),
        (3, "Example 1 convergence", criterion_3),
        (4, "Examples 2 and 5 convergence", criterion_4),
        (5, "Example 4 contrast robustness", criterion_5),
        (6, "condition number slope", criterion_6),
        (7, "stability", criterion_7),
        (8, "Galerkin residual", criterion_8),
        (9, "extension space", criterion_9),
        (10, "3D smoke", criterion_10),
    ];
    let mut failed = 0;
    for (id, name, run) in criteria {
        if id == 10 && !extended {
            println!("criterion {id:>2} SKIP {name}: run with --extended or UNFITTED_EXTENDED=1");
            continue;
        }
        let start = Instant::now();
        let outcome = run();
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(d) => println!("criterion {id:>2} PASS {name}: {d} [{secs:.0} s]"),
            Err(d) => {
                failed += 1;
                println!("criterion {id:>2} FAIL {name}: {d} [{secs:.0} s]");
            }
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
