//! Nitsche / interior-penalty assembly for the extended spaces.
//!
//! All three groups of terms (volume, mesh faces, Γ) share one trace kernel
//!
//! ```text
//! −∫ ({F∇u}·[v] + θ {F∇v}·[u]) + p ∫ [u]·[v]
//! ```
//!
//! where each local function contributes a scalar jump coefficient and a
//! scalar normal flux, `p` is the penalty over the local size and θ = 1
//! (symmetric) or −1 (non-symmetric).

use std::sync::Arc;

use crate::cutquad::{
    cut_face_rule, cut_face_rule_multi, cut_face_rule_polygonal, cut_surface_rule,
    cut_surface_rule_polygonal, cut_volume_rule, mapped_rule, QuadRule, Side,
};
use crate::geometry::{CellTag, DomainClassification, LevelSet, Mode, ScalarFn, VectorFn};
use crate::linalg::{vector_to_matrix_market, CsrMatrix};
use crate::mesh::SimplexMesh;
use crate::xspace::{Continuity, ExtendedSpace};
use crate::{dot, Error, Point, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Symmetry {
    Sym,
    NonSym,
}

impl Symmetry {
    pub fn theta(self) -> f64 {
        match self {
            Symmetry::Sym => 1.0,
            Symmetry::NonSym => -1.0,
        }
    }
}

/// Penalty μ = η = 3m² + 10.
pub fn default_penalty(degree: usize) -> f64 {
    3.0 * (degree * degree) as f64 + 10.0
}

/// Data of the boundary (`−Δu = f` in Ω₀, `u = g` on Γ) or interface
/// (`−∇·(α∇u) = f` per side, `[u] = a`, `[α∂ₙu] = b` on Γ, `u = g` on ∂Ω)
/// problem.
#[derive(Clone)]
pub struct ModelProblem {
    pub variant: Mode,
    pub alpha: [f64; 2],
    pub f: [ScalarFn; 2],
    pub g: ScalarFn,
    pub a: ScalarFn,
    pub b: ScalarFn,
    pub penalty: f64,
    pub penalty_scaling: PenaltyScaling,
    pub average: InterfaceAverage,
    pub symmetry: Symmetry,
}

/// Weights of the side traces in the interface average `{α∇u}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InterfaceAverage {
    /// `½(q⁰ + q¹)`.
    #[default]
    Arithmetic,
    /// `w₀q⁰ + w₁q¹` with `w₀ = α₁/(α₀+α₁)`, `w₁ = α₀/(α₀+α₁)`; the `b`
    /// term then tests `w₁v⁰ + w₀v¹`.
    Weighted,
}

/// How the penalty parameter is weighted by the diffusion coefficient.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PenaltyScaling {
    /// `μ/h` everywhere.
    Unit,
    /// `μα_s/h` on faces of side `s` and `μ·max(α₀, α₁)/h` on Γ.
    #[default]
    Alpha,
}

fn zero_fn() -> ScalarFn {
    Arc::new(|_: &Point| 0.0)
}

impl ModelProblem {
    pub fn boundary(f: ScalarFn, g: ScalarFn, penalty: f64, symmetry: Symmetry) -> Self {
        ModelProblem {
            variant: Mode::Boundary,
            alpha: [1.0, 1.0],
            f: [f, zero_fn()],
            g,
            a: zero_fn(),
            b: zero_fn(),
            penalty,
            penalty_scaling: PenaltyScaling::default(),
            average: InterfaceAverage::default(),
            symmetry,
        }
    }

    #[allow(clippy::too_many_arguments)]
    pub fn interface(
        alpha: [f64; 2],
        f: [ScalarFn; 2],
        g: ScalarFn,
        a: ScalarFn,
        b: ScalarFn,
        penalty: f64,
        symmetry: Symmetry,
    ) -> Self {
        ModelProblem {
            variant: Mode::Interface,
            alpha,
            f,
            g,
            a,
            b,
            penalty,
            penalty_scaling: PenaltyScaling::default(),
            average: InterfaceAverage::default(),
            symmetry,
        }
    }

    /// Penalty coefficient before division by the local size: on faces of
    /// side `s`, or on Γ for `None`.
    pub fn penalty_on(&self, side: Option<usize>) -> f64 {
        let [a0, a1] = self.alpha;
        match (self.penalty_scaling, side) {
            (PenaltyScaling::Unit, _) => self.penalty,
            (PenaltyScaling::Alpha, Some(s)) => self.penalty * self.alpha[s],
            (PenaltyScaling::Alpha, None) => match self.average {
                InterfaceAverage::Arithmetic => self.penalty * a0.max(a1),
                InterfaceAverage::Weighted => self.penalty * 2.0 * a0 * a1 / (a0 + a1),
            },
        }
    }

    /// Weights of the two side fluxes in `{α∇u}` on Γ.
    pub fn flux_weights(&self) -> [f64; 2] {
        let [a0, a1] = self.alpha;
        match (self.variant, self.average) {
            (Mode::Boundary, _) => [1.0, 0.0],
            (Mode::Interface, InterfaceAverage::Arithmetic) => [0.5, 0.5],
            (Mode::Interface, InterfaceAverage::Weighted) => [a1 / (a0 + a1), a0 / (a0 + a1)],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.penalty > 0.0) || !self.penalty.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "penalty must be positive, got {}",
                self.penalty
            )));
        }
        if self.alpha.iter().any(|a| !(*a > 0.0) || !a.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "diffusion coefficients must be positive, got {:?}",
                self.alpha
            )));
        }
        Ok(())
    }
}

impl std::fmt::Debug for ModelProblem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ModelProblem")
            .field("variant", &self.variant)
            .field("alpha", &self.alpha)
            .field("penalty", &self.penalty)
            .field("penalty_scaling", &self.penalty_scaling)
            .field("symmetry", &self.symmetry)
            .finish_non_exhaustive()
    }
}

/// Exact solution per side with its gradient.
#[derive(Clone)]
pub struct ExactSolution {
    pub u: [ScalarFn; 2],
    pub grad: [VectorFn; 2],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct QuadOptions {
    pub degree: usize,
    pub depth: usize,
    /// Split 2D faces crossed more than once instead of rejecting them.
    pub multi_crossing: bool,
    /// Newton-project interface nodes onto {φ = 0}. When off, Γ and the cut
    /// faces are those of the piecewise linear interpolant used for volumes.
    #[serde(default = "default_true")]
    pub project_surface: bool,
}

fn default_true() -> bool {
    true
}

impl QuadOptions {
    /// Degree 2m + 2 at the given subdivision depth.
    pub fn for_degree(m: usize, depth: usize) -> Self {
        QuadOptions {
            degree: (2 * m + 2).min(crate::cutquad::MAX_RULE_DEGREE),
            depth,
            multi_crossing: false,
            project_surface: true,
        }
    }
}

/// Quadrature rules for every integration domain of the discrete problem.
#[derive(Debug, Clone)]
pub struct CutGeometry {
    pub quad: QuadOptions,
    /// `K ∩ Ω_s` for elements touching side `s`.
    pub volume: Vec<[Option<QuadRule>; 2]>,
    /// `Γ_K` for cut elements.
    pub surface: Vec<Option<QuadRule>>,
    /// `e ∩ Ω_s` for faces touching side `s` (box faces only in interface mode).
    pub faces: Vec<[Option<QuadRule>; 2]>,
}

fn parallel_map<T: Send>(n: usize, f: impl Fn(usize) -> Result<T> + Sync) -> Result<Vec<T>> {
    let threads = std::thread::available_parallelism()
        .map(|t| t.get())
        .unwrap_or(1)
        .min(16);
    if threads <= 1 || n < 64 {
        return (0..n).map(f).collect();
    }
    let chunk = n.div_ceil(threads);
    let f = &f;
    let parts: Vec<Result<Vec<T>>> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..threads)
            .map(|t| {
                s.spawn(move || {
                    (t * chunk..((t + 1) * chunk).min(n))
                        .map(f)
                        .collect::<Result<Vec<T>>>()
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("worker panicked"))
            .collect()
    });
    let mut out = Vec::with_capacity(n);
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}

impl CutGeometry {
    pub fn build(
        mesh: &SimplexMesh,
        ls: &LevelSet,
        cls: &DomainClassification,
        quad: QuadOptions,
    ) -> Result<Self> {
        Self::build_range(mesh, ls, cls, quad, 0..mesh.n_elements(), 0..mesh.n_faces())
    }

    /// Rules for the given element and face index ranges only; all other
    /// entries are `None`. Keeps memory bounded when deep rules are needed.
    pub fn build_range(
        mesh: &SimplexMesh,
        ls: &LevelSet,
        cls: &DomainClassification,
        quad: QuadOptions,
        elements: std::ops::Range<usize>,
        face_range: std::ops::Range<usize>,
    ) -> Result<Self> {
        let sides = cls.sides();
        let cells = parallel_map(mesh.n_elements(), |k| {
            if !elements.contains(&k) {
                return Ok(([None, None], None));
            }
            let pts = mesh.element_points(k);
            let tag = cls.element_tag[k];
            let mut vol: [Option<QuadRule>; 2] = [None, None];
            for &s in sides {
                if !tag.touches(s) {
                    continue;
                }
                vol[s] = Some(if tag == CellTag::Cut {
                    cut_volume_rule(&pts, ls, Side::from_index(s), quad.degree, quad.depth)
                        .map_err(|e| e.on("element", k))?
                } else {
                    mapped_rule(&pts, quad.degree)?
                });
            }
            let surf = if tag == CellTag::Cut {
                let rule = if quad.project_surface {
                    cut_surface_rule(&pts, ls, quad.degree, quad.depth)
                } else {
                    cut_surface_rule_polygonal(&pts, ls, quad.degree, quad.depth)
                };
                Some(rule.map_err(|e| e.on("element", k))?)
            } else {
                None
            };
            Ok((vol, surf))
        })?;
        let faces = parallel_map(mesh.n_faces(), |f| {
            let mut out: [Option<QuadRule>; 2] = [None, None];
            if !face_range.contains(&f)
                || (cls.mode == Mode::Boundary && mesh.face(f).is_boundary())
            {
                return Ok(out);
            }
            let pts = mesh.face_points(f);
            let tag = cls.face_tag[f];
            for &s in sides {
                if !tag.touches(s) {
                    continue;
                }
                out[s] = Some(if tag == CellTag::Cut {
                    if !quad.project_surface {
                        cut_face_rule_polygonal(
                            &pts,
                            ls,
                            Side::from_index(s),
                            quad.degree,
                            quad.depth,
                        )
                    } else if quad.multi_crossing {
                        cut_face_rule_multi(&pts, ls, Side::from_index(s), quad.degree, quad.depth)
                    } else {
                        cut_face_rule(&pts, ls, Side::from_index(s), quad.degree, quad.depth)
                    }
                    .map_err(|e| e.on("face", f))?
                } else {
                    mapped_rule(&pts, quad.degree)?
                });
            }
            Ok(out)
        })?;
        let (volume, surface) = cells.into_iter().unzip();
        Ok(CutGeometry {
            quad,
            volume,
            surface,
            faces,
        })
    }
}

/// Dense local contribution: row-major `dofs.len()²` matrix and load vector.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LocalMatrix {
    pub dofs: Vec<usize>,
    pub matrix: Vec<f64>,
    pub rhs: Vec<f64>,
}

impl LocalMatrix {
    fn new(dofs: Vec<usize>) -> Self {
        let n = dofs.len();
        LocalMatrix {
            dofs,
            matrix: vec![0.0; n * n],
            rhs: vec![0.0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.dofs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dofs.is_empty()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.matrix[i * self.dofs.len() + j]
    }

    /// Merges repeated dofs; in the symmetric case only `I ≤ J` sums are
    /// formed and mirrored so the result stays bitwise symmetric.
    fn compressed(&self, sym: bool) -> LocalMatrix {
        let m = self.len();
        let mut unique: Vec<usize> = Vec::with_capacity(m);
        let mut slot = Vec::with_capacity(m);
        for &d in &self.dofs {
            let u = match unique.iter().position(|&x| x == d) {
                Some(u) => u,
                None => {
                    unique.push(d);
                    unique.len() - 1
                }
            };
            slot.push(u);
        }
        if unique.len() == m {
            return self.clone();
        }
        let mut out = LocalMatrix::new(unique);
        let n = out.len();
        for a in 0..m {
            out.rhs[slot[a]] += self.rhs[a];
            for b in 0..m {
                let (i, j) = (slot[a], slot[b]);
                if !sym || i <= j {
                    out.matrix[i * n + j] += self.matrix[a * m + b];
                }
            }
        }
        if sym {
            out.mirror_upper();
        }
        out
    }

    fn mirror_upper(&mut self) {
        let n = self.dofs.len();
        for i in 0..n {
            for j in 0..i {
                self.matrix[i * n + j] = self.matrix[j * n + i];
            }
        }
    }
}

/// Assembled system `A x = rhs`.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseSystem {
    pub matrix: CsrMatrix,
    pub rhs: Vec<f64>,
}

impl SparseSystem {
    /// Matrix Market text of `A` and of `rhs` (as an `n × 1` matrix).
    pub fn to_matrix_market(&self) -> (String, String) {
        (
            self.matrix.to_matrix_market(),
            vector_to_matrix_market(&self.rhs),
        )
    }
}

/// Per-point values of the local functions on one trace.
struct TraceData {
    jump: Vec<f64>,
    flux: Vec<f64>,
    avg: Vec<f64>,
}

impl TraceData {
    fn with_len(n: usize) -> Self {
        TraceData {
            jump: vec![0.0; n],
            flux: vec![0.0; n],
            avg: vec![0.0; n],
        }
    }
}

/// What a local routine should produce.
#[derive(Clone, Copy)]
enum Want<'a> {
    /// Matrix and load vector.
    System,
    /// `a_h(u, φ_i)` for the exact solution, in the `rhs` slot.
    Exact(&'a ExactSolution),
}

pub struct Assembler<'a> {
    mesh: &'a SimplexMesh,
    cls: &'a DomainClassification,
    space: &'a ExtendedSpace,
    problem: &'a ModelProblem,
    ls: &'a LevelSet,
    geo: CutGeometry,
}

impl<'a> Assembler<'a> {
    pub fn new(
        mesh: &'a SimplexMesh,
        ls: &'a LevelSet,
        cls: &'a DomainClassification,
        space: &'a ExtendedSpace,
        problem: &'a ModelProblem,
        quad: QuadOptions,
    ) -> Result<Self> {
        let geo = CutGeometry::build(mesh, ls, cls, quad)?;
        Self::with_geometry(mesh, ls, cls, space, problem, geo)
    }

    pub fn with_geometry(
        mesh: &'a SimplexMesh,
        ls: &'a LevelSet,
        cls: &'a DomainClassification,
        space: &'a ExtendedSpace,
        problem: &'a ModelProblem,
        geo: CutGeometry,
    ) -> Result<Self> {
        problem.validate()?;
        if space.mode() != problem.variant || cls.mode != problem.variant {
            return Err(Error::InvalidArgument(format!(
                "problem variant {:?} does not match space mode {:?} / classification mode {:?}",
                problem.variant,
                space.mode(),
                cls.mode
            )));
        }
        if cls.mode == Mode::Boundary {
            if let Some(f) = (0..mesh.n_faces())
                .find(|&f| mesh.face(f).is_boundary() && cls.face_tag[f] != CellTag::Side1)
            {
                return Err(Error::InvalidArgument(format!(
                    "boundary face {f} meets Ω₀; the domain must lie inside the mesh box"
                )));
            }
        }
        Ok(Assembler {
            mesh,
            cls,
            space,
            problem,
            ls,
            geo,
        })
    }

    pub fn geometry(&self) -> &CutGeometry {
        &self.geo
    }

    pub fn level_set(&self) -> &LevelSet {
        self.ls
    }

    fn theta(&self) -> f64 {
        self.problem.symmetry.theta()
    }

    fn check_index(&self, what: &'static str, index: usize, len: usize) -> Result<()> {
        if index >= len {
            return Err(Error::IndexOutOfRange { what, index, len });
        }
        Ok(())
    }

    fn host(&self, k: usize, side: usize) -> Result<usize> {
        self.space
            .delegate(k, side)
            .ok_or(Error::MissingHost { element: k, side })
    }

    /// Volume terms of element `k`.
    pub fn local_cell_matrix(&self, k: usize) -> Result<LocalMatrix> {
        self.check_index("element", k, self.mesh.n_elements())?;
        self.cell_block(k, Want::System)
    }

    /// Face terms of face `f` (empty when the face carries no jump).
    pub fn local_face_matrix(&self, f: usize) -> Result<LocalMatrix> {
        self.check_index("face", f, self.mesh.n_faces())?;
        self.face_block(f, Want::System)
    }

    /// Γ terms of element `k` (empty for uncut elements).
    pub fn local_interface_matrix(&self, k: usize) -> Result<LocalMatrix> {
        self.check_index("element", k, self.mesh.n_elements())?;
        self.interface_block(k, Want::System)
    }

    fn cell_block(&self, k: usize, want: Want<'_>) -> Result<LocalMatrix> {
        let nb = self.space.local_len();
        let sides: Vec<usize> = self
            .cls
            .sides()
            .iter()
            .copied()
            .filter(|&s| self.geo.volume[k][s].is_some())
            .collect();
        let mut hosts = Vec::with_capacity(sides.len());
        let mut dofs = Vec::with_capacity(nb * sides.len());
        for &s in &sides {
            let h = self.host(k, s)?;
            hosts.push(h);
            dofs.extend_from_slice(self.space.element_dofs(h));
        }
        let mut out = LocalMatrix::new(dofs);
        let n = out.len();
        let sym = self.problem.symmetry == Symmetry::Sym;
        let mut values = vec![0.0; nb];
        let mut grads = vec![[0.0; 3]; nb];
        for (block, (&s, &h)) in sides.iter().zip(&hosts).enumerate() {
            let rule = self.geo.volume[k][s].as_ref().expect("checked");
            let alpha = self.problem.alpha[s];
            let off = block * nb;
            for (x, &w) in rule.nodes.iter().zip(&rule.weights) {
                self.space.eval_host(h, x, &mut values, &mut grads);
                match want {
                    Want::System => {
                        let fw = w * (self.problem.f[s])(x);
                        for i in 0..nb {
                            out.rhs[off + i] += fw * values[i];
                            let j0 = if sym { i } else { 0 };
                            for j in j0..nb {
                                out.matrix[(off + i) * n + off + j] +=
                                    w * alpha * dot(&grads[i], &grads[j]);
                            }
                        }
                    }
                    Want::Exact(ex) => {
                        let gu = (ex.grad[s])(x);
                        for i in 0..nb {
                            out.rhs[off + i] += w * alpha * dot(&gu, &grads[i]);
                        }
                    }
                }
            }
        }
        if sym {
            out.mirror_upper();
        }
        Ok(out)
    }

    /// Whether the jump across interior face `f` on side `s` vanishes identically.
    fn face_skipped(&self, k1: usize, k2: usize, h1: usize, h2: usize) -> bool {
        h1 == h2 || (self.space.continuity() == Continuity::C0 && h1 == k1 && h2 == k2)
    }

    fn face_block(&self, f: usize, want: Want<'_>) -> Result<LocalMatrix> {
        let face = self.mesh.face(f);
        let (k1, k2) = face.elements;
        let nb = self.space.local_len();
        let normal = self.mesh.face_normal(f);
        // (side, hosts) per active side
        let mut parts: Vec<(usize, usize, Option<usize>)> = Vec::new();
        for &s in self.cls.sides() {
            if self.geo.faces[f][s].is_none() {
                continue;
            }
            let h1 = self.host(k1, s)?;
            match k2 {
                Some(k2) => {
                    let h2 = self.host(k2, s)?;
                    if !self.face_skipped(k1, k2, h1, h2) {
                        parts.push((s, h1, Some(h2)));
                    }
                }
                None => parts.push((s, h1, None)),
            }
        }
        let mut dofs = Vec::new();
        for &(_, h1, h2) in &parts {
            dofs.extend_from_slice(self.space.element_dofs(h1));
            if let Some(h2) = h2 {
                dofs.extend_from_slice(self.space.element_dofs(h2));
            }
        }
        let mut out = LocalMatrix::new(dofs);
        let mut values = vec![0.0; nb];
        let mut grads = vec![[0.0; 3]; nb];
        let mut off = 0;
        for &(s, h1, h2) in &parts {
            let rule = self.geo.faces[f][s].as_ref().expect("checked");
            let alpha = self.problem.alpha[s];
            let penalty = self.problem.penalty_on(Some(s)) / self.mesh.h_face(f);
            let m = if h2.is_some() { 2 * nb } else { nb };
            let mut td = TraceData::with_len(m);
            let avg_factor = if h2.is_some() { 0.5 } else { 1.0 };
            for (x, &w) in rule.nodes.iter().zip(&rule.weights) {
                self.space.eval_host(h1, x, &mut values, &mut grads);
                for i in 0..nb {
                    td.jump[i] = values[i];
                    td.flux[i] = avg_factor * alpha * dot(&grads[i], &normal);
                }
                if let Some(h2) = h2 {
                    self.space.eval_host(h2, x, &mut values, &mut grads);
                    for i in 0..nb {
                        td.jump[nb + i] = -values[i];
                        td.flux[nb + i] = avg_factor * alpha * dot(&grads[i], &normal);
                    }
                }
                match want {
                    Want::System => {
                        self.trace_matrix(&mut out, off, &td, w, penalty);
                        if h2.is_none() {
                            // box boundary: Nitsche lifting of g
                            self.trace_vector(
                                &mut out,
                                off,
                                &td,
                                w,
                                penalty,
                                (self.problem.g)(x),
                                0.0,
                            );
                        }
                    }
                    Want::Exact(ex) => {
                        let gu = (ex.grad[s])(x);
                        let (ju, fu) = match h2 {
                            Some(_) => (0.0, alpha * dot(&gu, &normal)),
                            None => ((ex.u[s])(x), alpha * dot(&gu, &normal)),
                        };
                        self.trace_vector(&mut out, off, &td, w, penalty, ju, fu);
                    }
                }
            }
            off += m;
        }
        if self.problem.symmetry == Symmetry::Sym {
            out.mirror_upper();
        }
        Ok(out)
    }

    fn interface_block(&self, k: usize, want: Want<'_>) -> Result<LocalMatrix> {
        let Some(rule) = self.geo.surface[k].as_ref() else {
            return Ok(LocalMatrix::default());
        };
        let nb = self.space.local_len();
        let sides = self.cls.sides();
        let hosts: Vec<usize> = sides
            .iter()
            .map(|&s| self.host(k, s))
            .collect::<Result<_>>()?;
        let dofs: Vec<usize> = hosts
            .iter()
            .flat_map(|&h| self.space.element_dofs(h).iter().copied())
            .collect();
        let mut out = LocalMatrix::new(dofs);
        let normals = rule
            .normals
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument("surface rule without normals".into()))?;
        let penalty = self.problem.penalty_on(None) / self.mesh.h_elem(k);
        let interface = self.problem.variant == Mode::Interface;
        let wf = self.problem.flux_weights();
        let mut td = TraceData::with_len(out.len());
        let mut values = vec![0.0; nb];
        let mut grads = vec![[0.0; 3]; nb];
        for ((x, &w), n) in rule.nodes.iter().zip(&rule.weights).zip(normals) {
            for (block, (&s, &h)) in sides.iter().zip(&hosts).enumerate() {
                self.space.eval_host(h, x, &mut values, &mut grads);
                let sign = if s == 0 { 1.0 } else { -1.0 };
                let alpha = self.problem.alpha[s];
                for i in 0..nb {
                    td.jump[block * nb + i] = sign * values[i];
                    td.flux[block * nb + i] = wf[s] * alpha * dot(&grads[i], n);
                    td.avg[block * nb + i] = wf[1 - s] * values[i];
                }
            }
            match want {
                Want::System => {
                    self.trace_matrix(&mut out, 0, &td, w, penalty);
                    if interface {
                        let (a, b) = ((self.problem.a)(x), (self.problem.b)(x));
                        self.trace_vector(&mut out, 0, &td, w, penalty, a, 0.0);
                        for i in 0..td.avg.len() {
                            out.rhs[i] += w * b * td.avg[i];
                        }
                    } else {
                        self.trace_vector(&mut out, 0, &td, w, penalty, (self.problem.g)(x), 0.0);
                    }
                }
                Want::Exact(ex) => {
                    let (ju, fu) = if interface {
                        let g0 = (ex.grad[0])(x);
                        let g1 = (ex.grad[1])(x);
                        let (a0, a1) = (self.problem.alpha[0], self.problem.alpha[1]);
                        (
                            (ex.u[0])(x) - (ex.u[1])(x),
                            wf[0] * a0 * dot(&g0, n) + wf[1] * a1 * dot(&g1, n),
                        )
                    } else {
                        ((ex.u[0])(x), dot(&(ex.grad[0])(x), n))
                    };
                    self.trace_vector(&mut out, 0, &td, w, penalty, ju, fu);
                }
            }
        }
        if self.problem.symmetry == Symmetry::Sym {
            out.mirror_upper();
        }
        Ok(out)
    }

    /// Adds the trace kernel for the local functions in `td` to the diagonal
    /// block starting at `off` (upper triangle only in the symmetric case).
    fn trace_matrix(
        &self,
        out: &mut LocalMatrix,
        off: usize,
        td: &TraceData,
        w: f64,
        penalty: f64,
    ) {
        let n = out.len();
        let theta = self.theta();
        let sym = self.problem.symmetry == Symmetry::Sym;
        let m = td.jump.len();
        for i in 0..m {
            let (ji, fi) = (td.jump[i], td.flux[i]);
            let j0 = if sym { i } else { 0 };
            for j in j0..m {
                let (jj, fj) = (td.jump[j], td.flux[j]);
                out.matrix[(off + i) * n + off + j] +=
                    w * (-fj * ji - theta * fi * jj + penalty * ji * jj);
            }
        }
    }

    /// Trace kernel with a fixed trial datum `(jump, flux)`.
    #[allow(clippy::too_many_arguments)]
    fn trace_vector(
        &self,
        out: &mut LocalMatrix,
        off: usize,
        td: &TraceData,
        w: f64,
        penalty: f64,
        ju: f64,
        fu: f64,
    ) {
        let theta = self.theta();
        for i in 0..td.jump.len() {
            out.rhs[off + i] +=
                w * (-fu * td.jump[i] - theta * td.flux[i] * ju + penalty * td.jump[i] * ju);
        }
    }

    /// Every local contribution in fixed traversal order: cells, faces, Γ.
    fn blocks(&self, want: Want<'_>) -> Result<Vec<LocalMatrix>> {
        let ne = self.mesh.n_elements();
        let nf = self.mesh.n_faces();
        let mut all = parallel_map(ne, |k| self.cell_block(k, want))?;
        all.extend(parallel_map(nf, |f| self.face_block(f, want))?);
        all.extend(parallel_map(ne, |k| self.interface_block(k, want))?);
        Ok(all)
    }

    /// Global system; triplets are merged serially in traversal order, so the
    /// result is bitwise reproducible and bitwise symmetric for `Sym`.
    pub fn assemble(&self) -> Result<SparseSystem> {
        let n = self.space.dof_count();
        let blocks = self.blocks(Want::System)?;
        let nnz: usize = blocks.iter().map(|b| b.len() * b.len()).sum();
        let mut triplets = Vec::with_capacity(nnz);
        let mut rhs = vec![0.0; n];
        let sym = self.problem.symmetry == Symmetry::Sym;
        for b in &blocks {
            let b = b.compressed(sym);
            let m = b.len();
            for i in 0..m {
                rhs[b.dofs[i]] += b.rhs[i];
                for j in 0..m {
                    triplets.push((b.dofs[i], b.dofs[j], b.matrix[i * m + j]));
                }
            }
        }
        Ok(SparseSystem {
            matrix: CsrMatrix::from_triplets(n, n, triplets)?,
            rhs,
        })
    }

    /// `r_j = a_h(u, φ_j) − l_h(φ_j)` with the exact solution inserted at
    /// quadrature nodes.
    pub fn galerkin_residual(&self, exact: &ExactSolution) -> Result<Vec<f64>> {
        let n = self.space.dof_count();
        let mut r = vec![0.0; n];
        for b in self.blocks(Want::Exact(exact))? {
            for (i, &d) in b.dofs.iter().enumerate() {
                r[d] += b.rhs[i];
            }
        }
        for b in self.blocks(Want::System)? {
            for (i, &d) in b.dofs.iter().enumerate() {
                r[d] -= b.rhs[i];
            }
        }
        Ok(r)
    }
}

/// Assembles the curved-boundary Nitsche system.
pub fn assemble_boundary(
    mesh: &SimplexMesh,
    ls: &LevelSet,
    cls: &DomainClassification,
    space: &ExtendedSpace,
    problem: &ModelProblem,
    quad: QuadOptions,
) -> Result<SparseSystem> {
    if problem.variant != Mode::Boundary {
        return Err(Error::InvalidArgument(
            "assemble_boundary needs a boundary problem".into(),
        ));
    }
    Assembler::new(mesh, ls, cls, space, problem, quad)?.assemble()
}

/// Assembles the interface system.
pub fn assemble_interface(
    mesh: &SimplexMesh,
    ls: &LevelSet,
    cls: &DomainClassification,
    space: &ExtendedSpace,
    problem: &ModelProblem,
    quad: QuadOptions,
) -> Result<SparseSystem> {
    if problem.variant != Mode::Interface {
        return Err(Error::InvalidArgument(
            "assemble_interface needs an interface problem".into(),
        ));
    }
    Assembler::new(mesh, ls, cls, space, problem, quad)?.assemble()
}
