//! Built-in problems, error norms, convergence studies and reporting.

use std::f64::consts::PI;
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::assembly::{
    default_penalty, Assembler, CutGeometry, ExactSolution, InterfaceAverage, ModelProblem,
    PenaltyScaling, QuadOptions, SparseSystem, Symmetry,
};
use crate::cutquad::{cut_surface_rule, cut_volume_rule, mapped_rule, QuadRule, Side};
use crate::geometry::{
    assign_hosts_with, classify, CellTag, DomainClassification, HostRule, LevelSet, Mode, ScalarFn,
    VectorFn,
};
use crate::linalg::{
    check_spd, estimate_cond, solve_bicgstab, solve_cg, solve_direct_dense, Preconditioner,
};
use crate::mesh::{build_structured_mesh, BoxDomain, SimplexMesh};
use crate::xspace::{build_space, Continuity, ExtendedSpace};
use crate::{dot, Error, Point, Result};
use nalgebra::DMatrix;

/// A manufactured test problem: geometry, coefficients and exact solution
/// with its Laplacian on each side.
#[derive(Clone)]
pub struct Builtin {
    pub id: u32,
    pub name: String,
    pub bbox: BoxDomain,
    pub mode: Mode,
    pub alpha: [f64; 2],
    pub ls: LevelSet,
    pub exact: ExactSolution,
    pub laplacian: [ScalarFn; 2],
    /// |Ω₀| when known in closed form.
    pub exact_measure: Option<f64>,
    /// |Γ| when known in closed form.
    pub exact_surface: Option<f64>,
}

impl Builtin {
    pub fn dim(&self) -> usize {
        self.bbox.dim
    }

    /// Problem data derived from the exact solution: `f = −αΔu` per side,
    /// `g = u` on the Dirichlet boundary, `a = u₀ − u₁`,
    /// `b = (α₀∇u₀ − α₁∇u₁)·n`.
    pub fn model_problem(&self, penalty: f64, symmetry: Symmetry) -> ModelProblem {
        let f = |s: usize| -> ScalarFn {
            let lap = self.laplacian[s].clone();
            let alpha = self.alpha[s];
            Arc::new(move |x: &Point| -alpha * lap(x))
        };
        match self.mode {
            Mode::Boundary => {
                ModelProblem::boundary(f(0), self.exact.u[0].clone(), penalty, symmetry)
            }
            Mode::Interface => {
                let (u0, u1) = (self.exact.u[0].clone(), self.exact.u[1].clone());
                let (g0, g1) = (self.exact.grad[0].clone(), self.exact.grad[1].clone());
                let ls = self.ls.clone();
                let g: ScalarFn = {
                    let (u0, u1, ls) = (u0.clone(), u1.clone(), ls.clone());
                    Arc::new(move |x: &Point| if ls.value(x) > 0.0 { u1(x) } else { u0(x) })
                };
                let a: ScalarFn = {
                    let (u0, u1) = (u0.clone(), u1.clone());
                    Arc::new(move |x: &Point| u0(x) - u1(x))
                };
                let [al0, al1] = self.alpha;
                let b: ScalarFn = Arc::new(move |x: &Point| {
                    let n = ls.normal(x);
                    al0 * dot(&g0(x), &n) - al1 * dot(&g1(x), &n)
                });
                ModelProblem::interface(self.alpha, [f(0), f(1)], g, a, b, penalty, symmetry)
            }
        }
    }

    /// Same problem with the level set translated by `shift`.
    pub fn shifted(&self, shift: Point) -> Builtin {
        let inner = self.ls.clone();
        let phi = {
            let inner = inner.clone();
            move |x: &Point| inner.value(&[x[0] - shift[0], x[1] - shift[1], x[2] - shift[2]])
        };
        let ls = LevelSet::new(
            self.dim(),
            format!("{} shifted by {shift:?}", inner.descriptor()),
            phi,
        )
        .with_gradient(move |x: &Point| {
            inner.gradient(&[x[0] - shift[0], x[1] - shift[1], x[2] - shift[2]])
        })
        .with_scale(self.bbox.scale());
        Builtin { ls, ..self.clone() }
    }
}

fn sfn(f: impl Fn(&Point) -> f64 + Send + Sync + 'static) -> ScalarFn {
    Arc::new(f)
}

fn vfn(f: impl Fn(&Point) -> Point + Send + Sync + 'static) -> VectorFn {
    Arc::new(f)
}

fn zero_scalar() -> ScalarFn {
    sfn(|_| 0.0)
}

fn zero_vector() -> VectorFn {
    vfn(|_| [0.0; 3])
}

/// Example 4 with a configurable outer coefficient `b` (10 and 1000 in the tables).
pub fn example4(b: f64) -> Result<Builtin> {
    if !(b > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "contrast b must be positive, got {b}"
        )));
    }
    let r = 0.5;
    let ls = LevelSet::new(2, "circle r=0.5", move |x: &Point| {
        x[0] * x[0] + x[1] * x[1] - r * r
    })
    .with_gradient(|x: &Point| [2.0 * x[0], 2.0 * x[1], 0.0])
    .with_scale(2.0);
    let u0 = sfn(|x| (2.0 * PI * x[0]).sin() * (PI * x[1]).sin());
    let g0 = vfn(|x| {
        [
            2.0 * PI * (2.0 * PI * x[0]).cos() * (PI * x[1]).sin(),
            PI * (2.0 * PI * x[0]).sin() * (PI * x[1]).cos(),
            0.0,
        ]
    });
    let l0 = sfn(|x| -5.0 * PI * PI * (2.0 * PI * x[0]).sin() * (PI * x[1]).sin());
    let u1 = sfn(move |x| {
        let rho = x[0] * x[0] + x[1] * x[1];
        -(rho * rho / 2.0 + rho) / b
    });
    let g1 = vfn(move |x| {
        let rho = x[0] * x[0] + x[1] * x[1];
        let c = -2.0 * (rho + 1.0) / b;
        [c * x[0], c * x[1], 0.0]
    });
    let l1 = sfn(move |x| -(8.0 * (x[0] * x[0] + x[1] * x[1]) + 4.0) / b);
    Ok(Builtin {
        id: 4,
        name: format!("Example 4: circular interface, b = {b}"),
        bbox: BoxDomain::square(-1.0, 1.0)?,
        mode: Mode::Interface,
        alpha: [1.0, b],
        ls,
        exact: ExactSolution {
            u: [u0, u1],
            grad: [g0, g1],
        },
        laplacian: [l0, l1],
        exact_measure: Some(PI * r * r),
        exact_surface: Some(2.0 * PI * r),
    })
}

fn circle_level_set(r: f64) -> LevelSet {
    LevelSet::new(2, format!("circle r={r}"), move |x: &Point| {
        x[0] * x[0] + x[1] * x[1] - r * r
    })
    .with_gradient(|x: &Point| [2.0 * x[0], 2.0 * x[1], 0.0])
    .with_scale(2.0)
}

/// Polar level set `r − c₀ − c₁·trig(5θ)` with its analytic gradient.
fn polar_level_set(
    name: &str,
    rho: impl Fn(f64) -> (f64, f64) + Send + Sync + Clone + 'static,
) -> LevelSet {
    let rho2 = rho.clone();
    LevelSet::new(2, name, move |x: &Point| {
        let r = x[0].hypot(x[1]);
        r - rho(x[1].atan2(x[0])).0
    })
    .with_gradient(move |x: &Point| {
        let r2 = x[0] * x[0] + x[1] * x[1];
        if r2 == 0.0 {
            return [1.0, 0.0, 0.0];
        }
        let r = r2.sqrt();
        // φ = r − ρ(θ): ∇φ = x/r − ρ'(θ) ∇θ with ∇θ = (−y, x)/r²
        let d = rho2(x[1].atan2(x[0])).1;
        [x[0] / r + d * x[1] / r2, x[1] / r - d * x[0] / r2, 0.0]
    })
    .with_scale(2.0)
}

/// The six problems of the numerical section; Example 4 uses b = 10.
pub fn builtin_problem(id: u32) -> Result<Builtin> {
    match id {
        1 => {
            let u = sfn(|x| (2.0 * PI * x[0]).sin() * (4.0 * PI * x[1]).sin());
            let g = vfn(|x| {
                [
                    2.0 * PI * (2.0 * PI * x[0]).cos() * (4.0 * PI * x[1]).sin(),
                    4.0 * PI * (2.0 * PI * x[0]).sin() * (4.0 * PI * x[1]).cos(),
                    0.0,
                ]
            });
            let l = sfn(|x| -20.0 * PI * PI * (2.0 * PI * x[0]).sin() * (4.0 * PI * x[1]).sin());
            Ok(Builtin {
                id,
                name: "Example 1: disk r = 0.7".into(),
                bbox: BoxDomain::square(-1.0, 1.0)?,
                mode: Mode::Boundary,
                alpha: [1.0, 1.0],
                ls: circle_level_set(0.7),
                exact: ExactSolution {
                    u: [u, zero_scalar()],
                    grad: [g, zero_vector()],
                },
                laplacian: [l, zero_scalar()],
                exact_measure: Some(PI * 0.49),
                exact_surface: Some(2.0 * PI * 0.7),
            })
        }
        2 => {
            let ls = polar_level_set("flower r = 0.6 + 0.2cos(5θ)", |t| {
                (0.6 + 0.2 * (5.0 * t).cos(), -(5.0 * t).sin())
            });
            let u = sfn(|x| (2.0 * PI * (x[0] - x[1])).cos());
            let g = vfn(|x| {
                let s = -2.0 * PI * (2.0 * PI * (x[0] - x[1])).sin();
                [s, -s, 0.0]
            });
            let l = sfn(|x| -8.0 * PI * PI * (2.0 * PI * (x[0] - x[1])).cos());
            Ok(Builtin {
                id,
                name: "Example 2: flower".into(),
                bbox: BoxDomain::square(-1.0, 1.0)?,
                mode: Mode::Boundary,
                alpha: [1.0, 1.0],
                ls,
                exact: ExactSolution {
                    u: [u, zero_scalar()],
                    grad: [g, zero_vector()],
                },
                laplacian: [l, zero_scalar()],
                // ½∫(0.6 + 0.2cos5θ)² dθ
                exact_measure: Some(PI * (0.36 + 0.02)),
                exact_surface: None,
            })
        }
        3 => {
            let r = 0.35;
            let ls = LevelSet::new(3, "sphere r=0.35", move |x: &Point| {
                (x[0] - 0.5).powi(2) + (x[1] - 0.5).powi(2) + (x[2] - 0.5).powi(2) - r * r
            })
            .with_gradient(|x: &Point| [2.0 * (x[0] - 0.5), 2.0 * (x[1] - 0.5), 2.0 * (x[2] - 0.5)])
            .with_scale(1.0);
            let u = sfn(|x| (PI * x[0]).cos() * (PI * x[1]).cos() * (PI * x[2]).cos());
            let g = vfn(|x| {
                let (c0, c1, c2) = ((PI * x[0]).cos(), (PI * x[1]).cos(), (PI * x[2]).cos());
                let (s0, s1, s2) = ((PI * x[0]).sin(), (PI * x[1]).sin(), (PI * x[2]).sin());
                [-PI * s0 * c1 * c2, -PI * c0 * s1 * c2, -PI * c0 * c1 * s2]
            });
            let l =
                sfn(|x| -3.0 * PI * PI * (PI * x[0]).cos() * (PI * x[1]).cos() * (PI * x[2]).cos());
            Ok(Builtin {
                id,
                name: "Example 3: sphere r = 0.35".into(),
                bbox: BoxDomain::cube(0.0, 1.0)?,
                mode: Mode::Boundary,
                alpha: [1.0, 1.0],
                ls,
                exact: ExactSolution {
                    u: [u, zero_scalar()],
                    grad: [g, zero_vector()],
                },
                laplacian: [l, zero_scalar()],
                exact_measure: Some(4.0 / 3.0 * PI * r * r * r),
                exact_surface: Some(4.0 * PI * r * r),
            })
        }
        4 => example4(10.0),
        5 => {
            let ls = polar_level_set("star r = 1/2 + sin(5θ)/7", |t| {
                (0.5 + (5.0 * t).sin() / 7.0, 5.0 / 7.0 * (5.0 * t).cos())
            });
            let u0 = sfn(|x| (x[0] * x[0] + x[1] * x[1]).exp());
            let g0 = vfn(|x| {
                let e = (x[0] * x[0] + x[1] * x[1]).exp();
                [2.0 * x[0] * e, 2.0 * x[1] * e, 0.0]
            });
            let l0 = sfn(|x| {
                let r2 = x[0] * x[0] + x[1] * x[1];
                4.0 * (1.0 + r2) * r2.exp()
            });
            let guard = |x: &Point| {
                let r = x[0].hypot(x[1]);
                assert!(r >= 0.1, "outer branch of Example 5 evaluated at r = {r}");
                r
            };
            let u1 = sfn(move |x| {
                let r = guard(x);
                0.1 * r * r - 0.01 * (2.0 * r).ln()
            });
            let g1 = vfn(move |x| {
                let r = guard(x);
                let c = 0.2 - 0.01 / (r * r);
                [c * x[0], c * x[1], 0.0]
            });
            let l1 = sfn(|_| 0.4);
            Ok(Builtin {
                id,
                name: "Example 5: star interface".into(),
                bbox: BoxDomain::square(-1.0, 1.0)?,
                mode: Mode::Interface,
                alpha: [1.0, 10.0],
                ls,
                exact: ExactSolution {
                    u: [u0, u1],
                    grad: [g0, g1],
                },
                laplacian: [l0, l1],
                // ½∫(1/2 + sin5θ/7)² dθ
                exact_measure: Some(PI * (0.25 + 1.0 / 98.0)),
                exact_surface: None,
            })
        }
        6 => {
            let ls = LevelSet::new(3, "two-atom molecular surface", |x: &Point| {
                let (a, b, c) = (2.5 * (x[0] - 0.5), 4.0 * (x[1] - 0.5), 2.5 * (x[2] - 0.5));
                let s = a * a + b * b + c * c + 0.6;
                s * s - 3.5 * b * b - 0.6
            })
            .with_gradient(|x: &Point| {
                let (a, b, c) = (2.5 * (x[0] - 0.5), 4.0 * (x[1] - 0.5), 2.5 * (x[2] - 0.5));
                let s = a * a + b * b + c * c + 0.6;
                [10.0 * s * a, 16.0 * s * b - 28.0 * b, 10.0 * s * c]
            })
            .with_scale(1.0);
            let u0 = sfn(|x| {
                (2.0 * PI * x[0]).sin() * (2.0 * PI * x[1]).sin() * (2.0 * PI * x[2]).sin()
            });
            let g0 = vfn(|x| {
                let (s0, s1, s2) = (
                    (2.0 * PI * x[0]).sin(),
                    (2.0 * PI * x[1]).sin(),
                    (2.0 * PI * x[2]).sin(),
                );
                let (c0, c1, c2) = (
                    (2.0 * PI * x[0]).cos(),
                    (2.0 * PI * x[1]).cos(),
                    (2.0 * PI * x[2]).cos(),
                );
                let k = 2.0 * PI;
                [k * c0 * s1 * s2, k * s0 * c1 * s2, k * s0 * s1 * c2]
            });
            let l0 = sfn(|x| {
                -12.0
                    * PI
                    * PI
                    * (2.0 * PI * x[0]).sin()
                    * (2.0 * PI * x[1]).sin()
                    * (2.0 * PI * x[2]).sin()
            });
            let u1 = sfn(|x| (2.0 * (x[0] + x[1] + x[2])).exp());
            let g1 = vfn(|x| {
                let e = 2.0 * (2.0 * (x[0] + x[1] + x[2])).exp();
                [e, e, e]
            });
            let l1 = sfn(|x| 12.0 * (2.0 * (x[0] + x[1] + x[2])).exp());
            Ok(Builtin {
                id,
                name: "Example 6: molecular surface".into(),
                bbox: BoxDomain::cube(0.0, 1.0)?,
                mode: Mode::Interface,
                alpha: [1.0, 1.0],
                ls,
                exact: ExactSolution {
                    u: [u0, u1],
                    grad: [g0, g1],
                },
                laplacian: [l0, l1],
                exact_measure: None,
                exact_surface: None,
            })
        }
        _ => Err(Error::UnknownExample(id.to_string())),
    }
}

/// Subdivision depth used for assembly when none is configured: deep enough
/// that the geometric quadrature error stays below the discretisation error
/// of degree `m` as the grid is refined.
pub fn auto_depth(dim: usize, m: usize, n: usize) -> usize {
    if dim == 3 {
        return 3;
    }
    let refinements = (n as f64 / 10.0).log2().max(0.0);
    let extra = (0.5 * m as f64 * refinements).ceil() as usize;
    (5 + extra).min(11)
}

/// Default depth of the rules used for error evaluation. In 3D the number of
/// mixed leaves grows like 4^depth per cut element, so depth 7 is out of reach
/// and the assembly depth is reused.
pub fn verification_depth(dim: usize) -> usize {
    if dim == 3 {
        3
    } else {
        7
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolverKind {
    /// CG for symmetric systems, BiCGSTAB otherwise.
    Auto,
    Cg,
    Bicgstab,
    Dense,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverOptions {
    pub kind: SolverKind,
    pub tol: f64,
    pub maxit: usize,
    pub precond: Preconditioner,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            kind: SolverKind::Auto,
            tol: 1e-12,
            maxit: 200_000,
            precond: Preconditioner::Jacobi,
        }
    }
}

/// Everything needed to assemble one `(m, n)` instance.
pub struct Discretization {
    pub mesh: SimplexMesh,
    pub cls: DomainClassification,
    pub space: ExtendedSpace,
    pub problem: ModelProblem,
    pub quad: QuadOptions,
    pub ls: LevelSet,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiscretizationOptions {
    pub continuity: Continuity,
    pub penalty: Option<f64>,
    pub penalty_scaling: PenaltyScaling,
    pub average: InterfaceAverage,
    pub symmetry: Symmetry,
    pub quad_degree: Option<usize>,
    pub quad_depth: Option<usize>,
    pub host_rule: HostRule,
    /// Patch rings searched for a host (1 = the element patch).
    pub host_rings: usize,
    pub multi_crossing: bool,
    pub project_surface: bool,
}

impl Default for DiscretizationOptions {
    fn default() -> Self {
        DiscretizationOptions {
            continuity: Continuity::C0,
            penalty: None,
            penalty_scaling: PenaltyScaling::Alpha,
            average: InterfaceAverage::Weighted,
            symmetry: Symmetry::Sym,
            quad_degree: None,
            quad_depth: None,
            host_rule: HostRule::NearestCut,
            host_rings: 3,
            multi_crossing: true,
            project_surface: true,
        }
    }
}

pub fn discretize(
    problem: &Builtin,
    m: usize,
    n: usize,
    opts: &DiscretizationOptions,
) -> Result<Discretization> {
    let mesh = build_structured_mesh(&problem.bbox, n)?;
    let cls = assign_hosts_with(
        &mesh,
        &classify(&mesh, &problem.ls, problem.mode)?,
        opts.host_rule,
        opts.host_rings,
    )?;
    let space = build_space(&mesh, &cls, m, opts.continuity)?;
    let penalty = opts.penalty.unwrap_or_else(|| default_penalty(m));
    let mut quad = QuadOptions::for_degree(
        m,
        opts.quad_depth
            .unwrap_or_else(|| auto_depth(problem.dim(), m, n)),
    );
    if let Some(d) = opts.quad_degree {
        quad.degree = d;
    }
    quad.multi_crossing = opts.multi_crossing;
    quad.project_surface = opts.project_surface;
    Ok(Discretization {
        mesh,
        cls,
        space,
        problem: ModelProblem {
            penalty_scaling: opts.penalty_scaling,
            average: opts.average,
            ..problem.model_problem(penalty, opts.symmetry)
        },
        quad,
        ls: problem.ls.clone(),
    })
}

impl Discretization {
    pub fn assembler(&self) -> Result<Assembler<'_>> {
        Assembler::new(
            &self.mesh,
            &self.ls,
            &self.cls,
            &self.space,
            &self.problem,
            self.quad,
        )
    }

    pub fn assembler_with(&self, geo: CutGeometry) -> Result<Assembler<'_>> {
        Assembler::with_geometry(
            &self.mesh,
            &self.ls,
            &self.cls,
            &self.space,
            &self.problem,
            geo,
        )
    }

    /// Rules at `depth` for error evaluation (degree 2m + 2).
    pub fn error_geometry(&self, depth: usize) -> Result<CutGeometry> {
        CutGeometry::build(&self.mesh, &self.ls, &self.cls, self.error_quad(depth))
    }

    fn error_quad(&self, depth: usize) -> QuadOptions {
        QuadOptions {
            multi_crossing: self.quad.multi_crossing,
            project_surface: self.quad.project_surface,
            ..QuadOptions::for_degree(self.space.degree(), depth)
        }
    }
}

/// Solves `sys`; returns the solution and the iteration count (0 for dense).
pub fn solve_system(
    sys: &SparseSystem,
    symmetry: Symmetry,
    opts: &SolverOptions,
) -> Result<(Vec<f64>, usize)> {
    let kind = match opts.kind {
        SolverKind::Auto if symmetry == Symmetry::Sym => SolverKind::Cg,
        SolverKind::Auto => SolverKind::Bicgstab,
        k => k,
    };
    match kind {
        SolverKind::Cg => solve_cg(&sys.matrix, &sys.rhs, opts.tol, opts.maxit, opts.precond)
            .map(|(x, s)| (x, s.iterations)),
        SolverKind::Bicgstab => {
            match solve_bicgstab(&sys.matrix, &sys.rhs, opts.tol, opts.maxit, opts.precond) {
                Ok((x, s)) => Ok((x, s.iterations)),
                // breakdown on small systems: fall back to elimination
                Err(e) if sys.rhs.len() <= 6000 => solve_direct_dense(&sys.matrix, &sys.rhs)
                    .map(|x| (x, 0))
                    .map_err(|_| e),
                Err(e) => Err(e),
            }
        }
        _ => solve_direct_dense(&sys.matrix, &sys.rhs).map(|x| (x, 0)),
    }
}

/// `√(Σ_K Σ_s ∫_{K∩Ω_s} (u_s − u_h)²)`.
pub fn l2_error(
    space: &ExtendedSpace,
    geo: &CutGeometry,
    coeffs: &[f64],
    exact: &ExactSolution,
) -> f64 {
    let mut sum = 0.0;
    for (k, rules) in geo.volume.iter().enumerate() {
        for (s, rule) in rules.iter().enumerate() {
            let Some(rule) = rule else { continue };
            for (x, &w) in rule.nodes.iter().zip(&rule.weights) {
                let (uh, _) = space.evaluate(coeffs, k, s, x).expect("active element");
                let e = (exact.u[s])(x) - uh;
                sum += w * e * e;
            }
        }
    }
    sum.sqrt()
}

/// Squared contributions of the five energy-norm sums.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct EnergyBreakdown {
    pub volume: f64,
    pub face_average: f64,
    pub face_jump: f64,
    pub gamma_average: f64,
    pub gamma_jump: f64,
}

impl EnergyBreakdown {
    pub fn total(&self) -> f64 {
        (self.volume + self.face_average + self.face_jump + self.gamma_average + self.gamma_jump)
            .sqrt()
    }
}

fn norm2(v: &Point) -> f64 {
    dot(v, v)
}

/// `|||u − u_h|||` with exact traces evaluated at the quadrature nodes.
pub fn energy_error(
    mesh: &SimplexMesh,
    space: &ExtendedSpace,
    geo: &CutGeometry,
    coeffs: &[f64],
    exact: &ExactSolution,
) -> EnergyBreakdown {
    let mut out = EnergyBreakdown::default();
    let err = |k: usize, s: usize, x: &Point| -> (f64, Point) {
        let (uh, gh) = space.evaluate(coeffs, k, s, x).expect("active element");
        let gu = (exact.grad[s])(x);
        (
            (exact.u[s])(x) - uh,
            [gu[0] - gh[0], gu[1] - gh[1], gu[2] - gh[2]],
        )
    };
    for (k, rules) in geo.volume.iter().enumerate() {
        for (s, rule) in rules.iter().enumerate() {
            let Some(rule) = rule else { continue };
            for (x, &w) in rule.nodes.iter().zip(&rule.weights) {
                out.volume += w * norm2(&err(k, s, x).1);
            }
        }
    }
    for (f, rules) in geo.faces.iter().enumerate() {
        let face = mesh.face(f);
        let he = mesh.h_face(f);
        for (s, rule) in rules.iter().enumerate() {
            let Some(rule) = rule else { continue };
            for (x, &w) in rule.nodes.iter().zip(&rule.weights) {
                let (e1, g1) = err(face.elements.0, s, x);
                let (jump, avg) = match face.elements.1 {
                    Some(k2) => {
                        let (e2, g2) = err(k2, s, x);
                        (
                            e1 - e2,
                            [
                                0.5 * (g1[0] + g2[0]),
                                0.5 * (g1[1] + g2[1]),
                                0.5 * (g1[2] + g2[2]),
                            ],
                        )
                    }
                    None => (e1, g1),
                };
                out.face_average += w * he * norm2(&avg);
                out.face_jump += w * jump * jump / he;
            }
        }
    }
    let interface = space.mode() == Mode::Interface;
    for (k, rule) in geo.surface.iter().enumerate() {
        let Some(rule) = rule else { continue };
        let hk = mesh.h_elem(k);
        for (x, &w) in rule.nodes.iter().zip(&rule.weights) {
            let (e0, g0) = err(k, 0, x);
            let (jump, avg) = if interface {
                let (e1, g1) = err(k, 1, x);
                (
                    e0 - e1,
                    [
                        0.5 * (g0[0] + g1[0]),
                        0.5 * (g0[1] + g1[1]),
                        0.5 * (g0[2] + g1[2]),
                    ],
                )
            } else {
                (e0, g0)
            };
            out.gamma_average += w * hk * norm2(&avg);
            out.gamma_jump += w * jump * jump / hk;
        }
    }
    out
}

/// Per-step rates `log(e_{i−1}/e_i) / log(h_{i−1}/h_i)`; `None` for the
/// first entry and wherever an error is missing or nonpositive.
pub fn convergence_rates(h: &[f64], e: &[Option<f64>]) -> Vec<Option<f64>> {
    (0..h.len())
        .map(|i| {
            if i == 0 {
                return None;
            }
            match (e[i - 1], e[i]) {
                (Some(a), Some(b)) if a > 0.0 && b > 0.0 => {
                    Some((a / b).ln() / (h[i - 1] / h[i]).ln())
                }
                _ => None,
            }
        })
        .collect()
}

/// Least-squares slope of `log e` against `log h` over the valid entries.
pub fn fitted_order(h: &[f64], e: &[Option<f64>]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = h
        .iter()
        .zip(e)
        .filter_map(|(&h, e)| e.filter(|&v| v > 0.0).map(|v| (h.ln(), v.ln())))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub example: u32,
    /// Outer coefficient of Example 4.
    pub contrast: Option<f64>,
    pub degrees: Vec<usize>,
    pub grid_sizes: Vec<usize>,
    pub penalty: Option<f64>,
    pub penalty_scaling: PenaltyScaling,
    pub average: InterfaceAverage,
    pub symmetry: Symmetry,
    pub continuity: Continuity,
    pub quad_degree: Option<usize>,
    pub quad_depth: Option<usize>,
    pub host_rule: HostRule,
    pub host_rings: usize,
    pub multi_crossing: bool,
    /// Newton-project interface nodes; off integrates over the polygonal Γ_h.
    pub project_surface: bool,
    /// Depth of the rules used for error evaluation (at least the assembly depth).
    pub verify_depth: Option<usize>,
    pub solver: SolverOptions,
    pub report_condition: bool,
    pub output: Option<String>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            example: 1,
            contrast: None,
            degrees: vec![1],
            grid_sizes: vec![10, 20, 40],
            penalty: None,
            penalty_scaling: PenaltyScaling::Alpha,
            average: InterfaceAverage::Weighted,
            symmetry: Symmetry::Sym,
            continuity: Continuity::C0,
            quad_degree: None,
            quad_depth: None,
            host_rule: HostRule::NearestCut,
            host_rings: 3,
            multi_crossing: true,
            project_surface: true,
            verify_depth: None,
            solver: SolverOptions::default(),
            report_condition: false,
            output: None,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.grid_sizes.is_empty() || self.grid_sizes.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidArgument(format!(
                "grid sizes must be nonempty and strictly increasing, got {:?}",
                self.grid_sizes
            )));
        }
        if self.degrees.is_empty() || self.degrees.iter().any(|&m| !(1..=3).contains(&m)) {
            return Err(Error::InvalidArgument(format!(
                "degrees must lie in 1..=3, got {:?}",
                self.degrees
            )));
        }
        if self.contrast.is_some() && self.example != 4 {
            return Err(Error::InvalidArgument(
                "contrast applies to Example 4 only".into(),
            ));
        }
        Ok(())
    }

    pub fn problem(&self) -> Result<Builtin> {
        match (self.example, self.contrast) {
            (4, Some(b)) => example4(b),
            (id, _) => builtin_problem(id),
        }
    }

    fn discretization_options(&self) -> DiscretizationOptions {
        DiscretizationOptions {
            continuity: self.continuity,
            penalty: self.penalty,
            penalty_scaling: self.penalty_scaling,
            average: self.average,
            symmetry: self.symmetry,
            quad_degree: self.quad_degree,
            quad_depth: self.quad_depth,
            host_rule: self.host_rule,
            host_rings: self.host_rings,
            multi_crossing: self.multi_crossing,
            project_surface: self.project_surface,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRow {
    pub m: usize,
    pub n: usize,
    pub h: f64,
    pub dofs: Option<usize>,
    pub e_l2: Option<f64>,
    pub e_energy: Option<f64>,
    pub rate_l2: Option<f64>,
    pub rate_energy: Option<f64>,
    pub kappa: Option<f64>,
    pub cg_iters: Option<usize>,
    pub wall_ms: f64,
    #[serde(skip)]
    pub energy_terms: Option<EnergyBreakdown>,
    #[serde(skip)]
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FittedOrder {
    pub m: usize,
    pub l2: Option<f64>,
    pub energy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceReport {
    pub rows: Vec<ConvergenceRow>,
    pub fits: Vec<FittedOrder>,
}

impl ConvergenceReport {
    pub fn fit(&self, m: usize) -> Option<&FittedOrder> {
        self.fits.iter().find(|f| f.m == m)
    }
}

/// Result of solving one `(m, n)` instance.
pub struct SolvedInstance {
    pub disc: Discretization,
    pub coeffs: Vec<f64>,
    pub iterations: usize,
    pub system: SparseSystem,
}

pub fn solve_instance(
    problem: &Builtin,
    m: usize,
    n: usize,
    opts: &DiscretizationOptions,
    solver: &SolverOptions,
) -> Result<SolvedInstance> {
    let disc = discretize(problem, m, n, opts)?;
    let system = disc.assembler()?.assemble()?;
    let (coeffs, iterations) = solve_system(&system, opts.symmetry, solver)?;
    Ok(SolvedInstance {
        disc,
        coeffs,
        iterations,
        system,
    })
}

/// L2 and energy errors of a solved instance with rules at `depth`. Rules
/// are built and discarded in chunks of elements and faces.
pub fn instance_errors(
    inst: &SolvedInstance,
    exact: &ExactSolution,
    depth: usize,
) -> Result<(f64, EnergyBreakdown)> {
    const CHUNK: usize = 4096;
    let disc = &inst.disc;
    let quad = disc.error_quad(depth);
    let (ne, nf) = (disc.mesh.n_elements(), disc.mesh.n_faces());
    let mut l2_sq = 0.0;
    let mut energy = EnergyBreakdown::default();
    for start in (0..ne.max(nf)).step_by(CHUNK) {
        let geo = CutGeometry::build_range(
            &disc.mesh,
            &disc.ls,
            &disc.cls,
            quad,
            start.min(ne)..(start + CHUNK).min(ne),
            start.min(nf)..(start + CHUNK).min(nf),
        )?;
        l2_sq += l2_error(&disc.space, &geo, &inst.coeffs, exact).powi(2);
        let e = energy_error(&disc.mesh, &disc.space, &geo, &inst.coeffs, exact);
        energy.volume += e.volume;
        energy.face_average += e.face_average;
        energy.face_jump += e.face_jump;
        energy.gamma_average += e.gamma_average;
        energy.gamma_jump += e.gamma_jump;
    }
    Ok((l2_sq.sqrt(), energy))
}

fn run_row(
    problem: &Builtin,
    config: &ExperimentConfig,
    m: usize,
    n: usize,
) -> Result<ConvergenceRow> {
    let start = Instant::now();
    let opts = config.discretization_options();
    let inst = solve_instance(problem, m, n, &opts, &config.solver)?;
    let depth = config
        .verify_depth
        .unwrap_or_else(|| verification_depth(problem.dim()))
        .max(inst.disc.quad.depth);
    let (l2, energy) = instance_errors(&inst, &problem.exact, depth)?;
    let kappa = if config.report_condition {
        Some(estimate_cond(&inst.system.matrix, 1e-8)?.kappa)
    } else {
        None
    };
    Ok(ConvergenceRow {
        m,
        n,
        h: inst.disc.mesh.cell_width(),
        dofs: Some(inst.disc.space.dof_count()),
        e_l2: Some(l2),
        e_energy: Some(energy.total()),
        rate_l2: None,
        rate_energy: None,
        kappa,
        cg_iters: Some(inst.iterations),
        wall_ms: start.elapsed().as_secs_f64() * 1e3,
        energy_terms: Some(energy),
        failure: None,
    })
}

/// Runs every `(m, n)` of the configuration; a failing row records its
/// reason and the remaining rows proceed.
pub fn run_convergence(config: &ExperimentConfig) -> Result<ConvergenceReport> {
    run_convergence_with(&config.problem()?, config)
}

/// As [`run_convergence`] for an explicitly supplied problem.
pub fn run_convergence_with(
    problem: &Builtin,
    config: &ExperimentConfig,
) -> Result<ConvergenceReport> {
    config.validate()?;
    let mut rows = Vec::new();
    let mut fits = Vec::new();
    for &m in &config.degrees {
        let first = rows.len();
        for &n in &config.grid_sizes {
            let start = Instant::now();
            let row = run_row(problem, config, m, n).unwrap_or_else(|e| ConvergenceRow {
                m,
                n,
                h: problem.bbox.scale() / n as f64,
                dofs: None,
                e_l2: None,
                e_energy: None,
                rate_l2: None,
                rate_energy: None,
                kappa: None,
                cg_iters: None,
                wall_ms: start.elapsed().as_secs_f64() * 1e3,
                energy_terms: None,
                failure: Some(e.to_string()),
            });
            rows.push(row);
        }
        let block = &mut rows[first..];
        let h: Vec<f64> = block.iter().map(|r| r.h).collect();
        let el2: Vec<Option<f64>> = block.iter().map(|r| r.e_l2).collect();
        let een: Vec<Option<f64>> = block.iter().map(|r| r.e_energy).collect();
        for ((row, a), b) in block
            .iter_mut()
            .zip(convergence_rates(&h, &el2))
            .zip(convergence_rates(&h, &een))
        {
            row.rate_l2 = a;
            row.rate_energy = b;
        }
        fits.push(FittedOrder {
            m,
            l2: fitted_order(&h, &el2),
            energy: fitted_order(&h, &een),
        });
    }
    Ok(ConvergenceReport { rows, fits })
}

pub const CSV_HEADER: [&str; 11] = [
    "m",
    "n",
    "h",
    "dofs",
    "e_l2",
    "e_energy",
    "rate_l2",
    "rate_energy",
    "kappa",
    "cg_iters",
    "wall_ms",
];

pub fn write_csv<W: std::io::Write>(rows: &[ConvergenceRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| Error::Io(e.to_string());
    w.write_record(CSV_HEADER).map_err(io)?;
    let opt = |v: Option<f64>| v.map(|x| format!("{x:.6e}")).unwrap_or_default();
    for r in rows {
        w.write_record([
            r.m.to_string(),
            r.n.to_string(),
            format!("{:.6e}", r.h),
            r.dofs.map(|d| d.to_string()).unwrap_or_default(),
            opt(r.e_l2),
            opt(r.e_energy),
            r.rate_l2.map(|x| format!("{x:.4}")).unwrap_or_default(),
            r.rate_energy.map(|x| format!("{x:.4}")).unwrap_or_default(),
            opt(r.kappa),
            r.cg_iters.map(|d| d.to_string()).unwrap_or_default(),
            format!("{:.1}", r.wall_ms),
        ])
        .map_err(io)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_csv_file(rows: &[ConvergenceRow], path: &Path) -> Result<()> {
    write_csv(rows, std::fs::File::create(path)?)
}

pub fn read_csv<R: std::io::Read>(input: R) -> Result<Vec<ConvergenceRow>> {
    let mut r = csv::Reader::from_reader(input);
    let io = |e: csv::Error| Error::Io(e.to_string());
    let headers = r.headers().map_err(io)?.clone();
    if headers.iter().collect::<Vec<_>>() != CSV_HEADER {
        return Err(Error::Io(format!("unexpected CSV header: {headers:?}")));
    }
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(io)?;
        let field = |i: usize| rec.get(i).unwrap_or("").trim();
        let float = |i: usize| -> Result<Option<f64>> {
            let s = field(i);
            if s.is_empty() {
                return Ok(None);
            }
            s.parse()
                .map(Some)
                .map_err(|e| Error::Io(format!("column {}: {s:?}: {e}", CSV_HEADER[i])))
        };
        let int = |i: usize| -> Result<Option<usize>> {
            let s = field(i);
            if s.is_empty() {
                return Ok(None);
            }
            s.parse()
                .map(Some)
                .map_err(|e| Error::Io(format!("column {}: {s:?}: {e}", CSV_HEADER[i])))
        };
        rows.push(ConvergenceRow {
            m: int(0)?.ok_or_else(|| Error::Io("missing m".into()))?,
            n: int(1)?.ok_or_else(|| Error::Io("missing n".into()))?,
            h: float(2)?.ok_or_else(|| Error::Io("missing h".into()))?,
            dofs: int(3)?,
            e_l2: float(4)?,
            e_energy: float(5)?,
            rate_l2: float(6)?,
            rate_energy: float(7)?,
            kappa: float(8)?,
            cg_iters: int(9)?,
            wall_ms: float(10)?.unwrap_or(0.0),
            energy_terms: None,
            failure: None,
        });
    }
    Ok(rows)
}

/// Aligned plain-text table of convergence rows.
pub fn render_table(rows: &[ConvergenceRow]) -> String {
    let sci = |v: Option<f64>| v.map(|x| format!("{x:.3e}")).unwrap_or_else(|| "-".into());
    let fix = |v: Option<f64>| v.map(|x| format!("{x:.2}")).unwrap_or_else(|| "-".into());
    let mut cells: Vec<Vec<String>> = vec![CSV_HEADER.iter().map(|s| s.to_string()).collect()];
    for r in rows {
        cells.push(vec![
            r.m.to_string(),
            r.n.to_string(),
            format!("{:.4e}", r.h),
            r.dofs.map(|d| d.to_string()).unwrap_or_else(|| "-".into()),
            sci(r.e_l2),
            sci(r.e_energy),
            fix(r.rate_l2),
            fix(r.rate_energy),
            sci(r.kappa),
            r.cg_iters
                .map(|d| d.to_string())
                .unwrap_or_else(|| "-".into()),
            format!("{:.0}", r.wall_ms),
        ]);
    }
    let widths: Vec<usize> = (0..CSV_HEADER.len())
        .map(|c| {
            cells
                .iter()
                .map(|row| row[c].chars().count())
                .max()
                .unwrap_or(0)
        })
        .collect();
    let mut out = String::new();
    for (i, row) in cells.iter().enumerate() {
        let line: Vec<String> = row
            .iter()
            .zip(&widths)
            .map(|(s, w)| format!("{s:>w$}"))
            .collect();
        out.push_str(line.join("  ").trim_end());
        out.push('\n');
        if i == 0 {
            out.push_str(&"-".repeat(widths.iter().sum::<usize>() + 2 * (widths.len() - 1)));
            out.push('\n');
        }
    }
    for r in rows {
        if let Some(f) = &r.failure {
            out.push_str(&format!("m={} n={} failed: {f}\n", r.m, r.n));
        }
    }
    out
}

/// One line of a quadrature convergence check.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureCheck {
    pub depth: usize,
    pub measure: f64,
    pub surface: f64,
    /// Relative errors against closed forms when available.
    pub measure_error: Option<f64>,
    pub surface_error: Option<f64>,
}

/// Sums `|Ω₀ ∩ K|` and `|Γ ∩ K|` over the mesh for each depth.
pub fn verify_quadrature(
    problem: &Builtin,
    n: usize,
    depths: &[usize],
) -> Result<Vec<QuadratureCheck>> {
    let mesh = build_structured_mesh(&problem.bbox, n)?;
    let cls = classify(&mesh, &problem.ls, problem.mode)?;
    let mut out = Vec::new();
    for &depth in depths {
        let (mut measure, mut surface) = (0.0, 0.0);
        for k in 0..mesh.n_elements() {
            match cls.element_tag[k] {
                CellTag::Side0 => measure += mesh.volume(k),
                CellTag::Cut => {
                    let pts = mesh.element_points(k);
                    measure += cut_volume_rule(&pts, &problem.ls, Side::Neg, 1, depth)
                        .map_err(|e| e.on("element", k))?
                        .total_weight();
                    surface += cut_surface_rule(&pts, &problem.ls, 1, depth)
                        .map_err(|e| e.on("element", k))?
                        .total_weight();
                }
                CellTag::Side1 => {}
            }
        }
        out.push(QuadratureCheck {
            depth,
            measure,
            surface,
            measure_error: problem.exact_measure.map(|v| (measure - v).abs() / v),
            surface_error: problem.exact_surface.map(|v| (surface - v).abs() / v),
        });
    }
    Ok(out)
}

/// Condition number of the stiffness matrix at one grid size.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConditionRow {
    pub n: usize,
    pub h: f64,
    pub dofs: usize,
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub kappa: f64,
}

/// κ(A) for each grid size; `tol` is the relative eigenvalue tolerance.
pub fn condition_numbers(
    problem: &Builtin,
    m: usize,
    grids: &[usize],
    opts: &DiscretizationOptions,
    tol: f64,
) -> Result<Vec<ConditionRow>> {
    grids
        .iter()
        .map(|&n| {
            let disc = discretize(problem, m, n, opts)?;
            let sys = disc.assembler()?.assemble()?;
            let c = estimate_cond(&sys.matrix, tol)?;
            Ok(ConditionRow {
                n,
                h: disc.mesh.cell_width(),
                dofs: disc.space.dof_count(),
                lambda_min: c.lambda_min,
                lambda_max: c.lambda_max,
                kappa: c.kappa,
            })
        })
        .collect()
}

/// Least-squares slope of log κ against log h.
pub fn condition_slope(rows: &[ConditionRow]) -> Option<f64> {
    let h: Vec<f64> = rows.iter().map(|r| r.h).collect();
    let k: Vec<Option<f64>> = rows.iter().map(|r| Some(r.kappa)).collect();
    fitted_order(&h, &k)
}

/// Smallest eigenvalue of the assembled matrix; an error if it is not SPD.
pub fn min_eigenvalue(
    problem: &Builtin,
    m: usize,
    n: usize,
    opts: &DiscretizationOptions,
) -> Result<f64> {
    let disc = discretize(problem, m, n, opts)?;
    let sys = disc.assembler()?.assemble()?;
    check_spd(&sys.matrix)
}

/// Largest discrete trace and cut-volume ratios over all cut elements.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TraceRatios {
    /// `‖v‖_{L²(∂K ∩ Ω_s)} / (h_K^{-1/2} ‖v‖_{L²(K°)})`
    pub trace: f64,
    /// `‖v‖_{L²(K ∩ Ω_s)} / ‖v‖_{L²(K°)}`
    pub volume: f64,
}

/// Monitors the discrete trace and inverse estimates. For each cut element
/// the supremum over all local polynomials is the largest generalized
/// eigenvalue of the extended trace (or cut-volume) Gram matrix against the
/// host mass matrix.
pub fn trace_ratios(disc: &Discretization) -> Result<TraceRatios> {
    let geo = CutGeometry::build(&disc.mesh, &disc.ls, &disc.cls, disc.quad)?;
    let space = &disc.space;
    let nl = space.local_len();
    let gram = |rules: &mut dyn Iterator<Item = &QuadRule>, host: usize| -> DMatrix<f64> {
        let mut g = DMatrix::zeros(nl, nl);
        let mut values = vec![0.0; nl];
        let mut grads = vec![[0.0; 3]; nl];
        for rule in rules {
            for (x, w) in rule.nodes.iter().zip(&rule.weights) {
                space.eval_host(host, x, &mut values, &mut grads);
                for i in 0..nl {
                    for j in 0..nl {
                        g[(i, j)] += w * values[i] * values[j];
                    }
                }
            }
        }
        g
    };
    let mut out = TraceRatios {
        trace: 0.0,
        volume: 0.0,
    };
    for k in disc.cls.cut_elements() {
        for &s in disc.cls.sides() {
            let Some(host) = space.delegate(k, s) else {
                continue;
            };
            let host_rule = mapped_rule(&disc.mesh.element_points(host), disc.quad.degree)?;
            let mass = gram(&mut std::iter::once(&host_rule), host);
            let l = mass
                .cholesky()
                .ok_or_else(|| {
                    Error::NotPositiveDefinite(format!("host mass matrix of element {host}"))
                })?
                .l();
            let l_inv = l
                .try_inverse()
                .ok_or_else(|| Error::Breakdown(format!("host mass matrix of element {host}")))?;
            let top = |g: DMatrix<f64>| -> f64 {
                let c = &l_inv * g * l_inv.transpose();
                let c = 0.5 * (&c + c.transpose());
                c.symmetric_eigenvalues().max().max(0.0)
            };
            let trace = gram(
                &mut disc
                    .mesh
                    .element_faces(k)
                    .iter()
                    .filter_map(|&f| geo.faces[f][s].as_ref()),
                host,
            );
            let volume = gram(&mut geo.volume[k][s].iter(), host);
            out.trace = out.trace.max((disc.mesh.h_elem(k) * top(trace)).sqrt());
            out.volume = out.volume.max(top(volume).sqrt());
        }
    }
    Ok(out)
}
