//! Level-set geometry: element/face classification against Γ = {φ = 0},
//! host-element assignment for cut elements, and mesh-resolution checks.

use std::fmt;
use std::sync::Arc;

use crate::mesh::SimplexMesh;
use crate::{norm, sub, Error, Point, Result};

pub type ScalarFn = Arc<dyn Fn(&Point) -> f64 + Send + Sync>;
pub type VectorFn = Arc<dyn Fn(&Point) -> Point + Send + Sync>;

/// Default subdivision depth for sign sampling.
pub const DEFAULT_SAMPLE_DEPTH: usize = 3;

/// A scalar field φ with `Ω₀ = {φ < 0}`, `Ω₁ = {φ > 0}` and `Γ = {φ = 0}`.
#[derive(Clone)]
pub struct LevelSet {
    dim: usize,
    phi: ScalarFn,
    grad: Option<VectorFn>,
    descriptor: String,
    fd_step: f64,
}

impl fmt::Debug for LevelSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LevelSet")
            .field("dim", &self.dim)
            .field("descriptor", &self.descriptor)
            .field("analytic_gradient", &self.grad.is_some())
            .finish()
    }
}

impl LevelSet {
    pub fn new(
        dim: usize,
        descriptor: impl Into<String>,
        phi: impl Fn(&Point) -> f64 + Send + Sync + 'static,
    ) -> Self {
        LevelSet {
            dim,
            phi: Arc::new(phi),
            grad: None,
            descriptor: descriptor.into(),
            fd_step: 1e-6,
        }
    }

    pub fn with_gradient(mut self, grad: impl Fn(&Point) -> Point + Send + Sync + 'static) -> Self {
        self.grad = Some(Arc::new(grad));
        self
    }

    /// Sets the domain length scale used for the finite-difference step.
    pub fn with_scale(mut self, scale: f64) -> Self {
        self.fd_step = 1e-6 * scale;
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn descriptor(&self) -> &str {
        &self.descriptor
    }

    pub fn has_gradient(&self) -> bool {
        self.grad.is_some()
    }

    #[inline]
    pub fn value(&self, x: &Point) -> f64 {
        (self.phi)(x)
    }

    /// ∇φ, analytic when supplied, otherwise central differences.
    pub fn gradient(&self, x: &Point) -> Point {
        match &self.grad {
            Some(g) => g(x),
            None => self.fd_gradient(x),
        }
    }

    pub fn fd_gradient(&self, x: &Point) -> Point {
        let mut g = [0.0; 3];
        let h = self.fd_step;
        for d in 0..self.dim {
            let mut xp = *x;
            let mut xm = *x;
            xp[d] += h;
            xm[d] -= h;
            g[d] = (self.value(&xp) - self.value(&xm)) / (2.0 * h);
        }
        g
    }

    /// Unit normal ∇φ/|∇φ| (points into Ω₁).
    pub fn normal(&self, x: &Point) -> Point {
        let g = self.gradient(x);
        let n = crate::norm(&g);
        [g[0] / n, g[1] / n, g[2] / n]
    }

    /// The level set −φ (swaps the two sides).
    pub fn negated(&self) -> LevelSet {
        let phi = self.phi.clone();
        let grad = self.grad.clone();
        LevelSet {
            dim: self.dim,
            phi: Arc::new(move |x| -phi(x)),
            grad: grad.map(|g| -> VectorFn {
                Arc::new(move |x| {
                    let v = g(x);
                    [-v[0], -v[1], -v[2]]
                })
            }),
            descriptor: format!("-({})", self.descriptor),
            fd_step: self.fd_step,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Mode {
    /// Curved-boundary problem on Ω₀.
    Boundary,
    /// Interface problem on Ω₀ ∪ Ω₁.
    Interface,
}

/// Element/face tag. In boundary mode `Side0` is "interior" and `Side1`
/// is "exterior".
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CellTag {
    Side0,
    Cut,
    Side1,
}

impl CellTag {
    pub fn side(side: usize) -> CellTag {
        if side == 0 {
            CellTag::Side0
        } else {
            CellTag::Side1
        }
    }

    /// Whether an entity with this tag meets side `side`.
    pub fn touches(self, side: usize) -> bool {
        self == CellTag::Cut || self == CellTag::side(side)
    }
}

#[derive(Debug, Clone)]
pub struct DomainClassification {
    pub mode: Mode,
    pub element_tag: Vec<CellTag>,
    pub face_tag: Vec<CellTag>,
    /// Side-0 host per element; `Some` only for cut elements after
    /// [`assign_hosts`].
    pub host0: Vec<Option<usize>>,
    /// Side-1 host per element (interface mode only).
    pub host1: Vec<Option<usize>>,
    /// φ at mesh vertices.
    pub vertex_phi: Vec<f64>,
    pub eps_geom: f64,
    pub depth: usize,
}

impl DomainClassification {
    pub fn is_cut(&self, k: usize) -> bool {
        self.element_tag[k] == CellTag::Cut
    }

    pub fn cut_elements(&self) -> Vec<usize> {
        (0..self.element_tag.len())
            .filter(|&k| self.is_cut(k))
            .collect()
    }

    pub fn count(&self, tag: CellTag) -> usize {
        self.element_tag.iter().filter(|&&t| t == tag).count()
    }

    pub fn host(&self, k: usize, side: usize) -> Option<usize> {
        if side == 0 {
            self.host0[k]
        } else {
            self.host1[k]
        }
    }

    /// Sides whose subdomain is represented in the discrete problem.
    pub fn sides(&self) -> &'static [usize] {
        match self.mode {
            Mode::Boundary => &[0],
            Mode::Interface => &[0, 1],
        }
    }
}

/// Barycentric lattice of order `order` on a `k`-simplex: every
/// multi-index of `k + 1` non-negative integers summing to `order`.
pub fn barycentric_lattice(k: usize, order: usize) -> Vec<[usize; 4]> {
    let mut out = Vec::new();
    let mut cur = [0usize; 4];
    fn rec(pos: usize, k: usize, left: usize, cur: &mut [usize; 4], out: &mut Vec<[usize; 4]>) {
        if pos == k {
            cur[pos] = left;
            out.push(*cur);
            cur[pos] = 0;
            return;
        }
        for a in (0..=left).rev() {
            cur[pos] = a;
            rec(pos + 1, k, left - a, cur, out);
        }
        cur[pos] = 0;
    }
    rec(0, k, order, &mut cur, &mut out);
    out
}

/// Physical point of the lattice multi-index `alpha` on the simplex `pts`.
pub fn lattice_point(pts: &[Point], alpha: &[usize; 4], order: usize) -> Point {
    let mut x = [0.0; 3];
    for (i, p) in pts.iter().enumerate() {
        let w = alpha[i] as f64 / order as f64;
        for d in 0..3 {
            x[d] += w * p[d];
        }
    }
    x
}

fn tag_from_values(values: impl Iterator<Item = f64>, eps: f64) -> CellTag {
    let (mut neg, mut pos) = (false, false);
    for v in values {
        neg |= v < -eps;
        pos |= v > eps;
        if neg && pos {
            return CellTag::Cut;
        }
    }
    if !pos {
        CellTag::Side0
    } else {
        CellTag::Side1
    }
}

/// `1e-12 × max(max |φ(vertex)|, 1)`.
pub fn geometric_tolerance(vertex_phi: &[f64]) -> f64 {
    1e-12 * vertex_phi.iter().fold(1.0f64, |m, v| m.max(v.abs()))
}

pub fn classify(mesh: &SimplexMesh, ls: &LevelSet, mode: Mode) -> Result<DomainClassification> {
    classify_with_depth(mesh, ls, mode, DEFAULT_SAMPLE_DEPTH)
}

/// Tags elements and faces by the signs of φ on the barycentric lattice of
/// order `2^depth` (vertices, edge midpoints, and the vertices of all
/// sub-simplices of a `depth`-level uniform refinement).
pub fn classify_with_depth(
    mesh: &SimplexMesh,
    ls: &LevelSet,
    mode: Mode,
    depth: usize,
) -> Result<DomainClassification> {
    let dim = mesh.dim();
    let vertex_phi: Vec<f64> = mesh.vertices().iter().map(|x| ls.value(x)).collect();
    let eps = geometric_tolerance(&vertex_phi);
    let order = 1usize << depth;
    let vol_lattice = barycentric_lattice(dim, order);
    let face_lattice = barycentric_lattice(dim - 1, order);

    let sample = |pts: &[Point], ids: &[usize], lattice: &[[usize; 4]]| {
        tag_from_values(
            lattice.iter().map(|a| {
                // reuse exact vertex values at lattice corners
                if let Some(i) = (0..pts.len()).find(|&i| a[i] == order) {
                    vertex_phi[ids[i]]
                } else {
                    ls.value(&lattice_point(pts, a, order))
                }
            }),
            eps,
        )
    };

    let element_tag: Vec<CellTag> = (0..mesh.n_elements())
        .map(|k| sample(&mesh.element_points(k), mesh.element(k), &vol_lattice))
        .collect();
    let face_tag: Vec<CellTag> = (0..mesh.n_faces())
        .map(|f| sample(&mesh.face_points(f), mesh.face_vertices(f), &face_lattice))
        .collect();

    if mode == Mode::Boundary && !element_tag.iter().any(|t| t.touches(0)) {
        return Err(Error::EmptyDomain);
    }
    let n = mesh.n_elements();
    Ok(DomainClassification {
        mode,
        element_tag,
        face_tag,
        host0: vec![None; n],
        host1: vec![None; n],
        vertex_phi,
        eps_geom: eps,
        depth,
    })
}

/// How a cut element chooses its host among the interior elements of its patch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HostRule {
    /// Maximise the minimum `|φ|` over the candidate's vertices.
    #[default]
    MostInterior,
    /// Minimise the centroid distance to the cut element; ties go to the
    /// larger minimum `|φ|`.
    Nearest,
    /// As `Nearest`, measured from the centre of the part of the cut element
    /// on the host's side (vertex average of the linear clip).
    NearestCut,
}

/// Host assignment with [`HostRule::MostInterior`] over the element patch.
pub fn assign_hosts(
    mesh: &SimplexMesh,
    cls: &DomainClassification,
) -> Result<DomainClassification> {
    assign_hosts_with(mesh, cls, HostRule::MostInterior, 1)
}

fn centroid(pts: &[Point]) -> Point {
    let mut c = [0.0; 3];
    for p in pts {
        for d in 0..3 {
            c[d] += p[d] / pts.len() as f64;
        }
    }
    c
}

/// Vertex average of the side-`side` part of a simplex, clipped by the
/// linear interpolant of the vertex values `phi`.
fn side_centre(pts: &[Point], phi: &[f64], side: usize) -> Point {
    let inside = |v: f64| if side == 0 { v <= 0.0 } else { v > 0.0 };
    let mut sum = [0.0; 3];
    let mut count = 0.0;
    for i in 0..pts.len() {
        if inside(phi[i]) {
            for d in 0..3 {
                sum[d] += pts[i][d];
            }
            count += 1.0;
        }
        for j in i + 1..pts.len() {
            if inside(phi[i]) != inside(phi[j]) {
                let t = phi[i] / (phi[i] - phi[j]);
                for d in 0..3 {
                    sum[d] += pts[i][d] + t * (pts[j][d] - pts[i][d]);
                }
                count += 1.0;
            }
        }
    }
    if count == 0.0 {
        return centroid(pts);
    }
    sum.map(|x| x / count)
}

/// Fills the host maps of every cut element on each required side; remaining
/// ties go to the smallest element index. Candidates come from the patch; when
/// it holds none on a side, the search widens ring by ring up to `max_rings`
/// (ring 2 is the patch of the patch).
pub fn assign_hosts_with(
    mesh: &SimplexMesh,
    cls: &DomainClassification,
    rule: HostRule,
    max_rings: usize,
) -> Result<DomainClassification> {
    let mut out = cls.clone();
    for k in 0..mesh.n_elements() {
        out.host0[k] = None;
        out.host1[k] = None;
        if !cls.is_cut(k) {
            continue;
        }
        let pts = mesh.element_points(k);
        let phi: Vec<f64> = mesh.element(k).iter().map(|&v| cls.vertex_phi[v]).collect();
        for &side in cls.sides() {
            let ck = match rule {
                HostRule::NearestCut => side_centre(&pts, &phi, side),
                _ => centroid(&pts),
            };
            let want = CellTag::side(side);
            // lexicographic score, larger is better
            let mut best: Option<(usize, (f64, f64))> = None;
            let mut ring = vec![k];
            for _ in 0..max_rings.max(1) {
                let mut next = Vec::new();
                for &e in &ring {
                    next.extend(mesh.element_patch(e)?);
                }
                next.sort_unstable();
                next.dedup();
                ring = next;
                if ring.iter().any(|&c| cls.element_tag[c] == want) {
                    break;
                }
            }
            for &cand in &ring {
                if cls.element_tag[cand] != want {
                    continue;
                }
                let interior = mesh
                    .element(cand)
                    .iter()
                    .map(|&v| cls.vertex_phi[v].abs())
                    .fold(f64::INFINITY, f64::min);
                let score = match rule {
                    HostRule::MostInterior => (interior, 0.0),
                    HostRule::Nearest | HostRule::NearestCut => {
                        // rounded so that congruent neighbours tie exactly
                        let d =
                            norm(&sub(&centroid(&mesh.element_points(cand)), &ck)) / mesh.h_elem(k);
                        (-(d * 1e9).round(), interior)
                    }
                };
                if best.is_none_or(|(_, s)| score > s) {
                    best = Some((cand, score));
                }
            }
            let host = best
                .map(|(c, _)| c)
                .ok_or(Error::MissingHost { element: k, side })?;
            if side == 0 {
                out.host0[k] = Some(host);
            } else {
                out.host1[k] = Some(host);
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct AssumptionReport {
    /// `(face, zero-set components)` for every cut face.
    pub face_crossings: Vec<(usize, usize)>,
    /// Cut faces crossed more than once.
    pub multi_crossing_faces: Vec<usize>,
    /// `(element, side)` pairs of cut elements without an interior host.
    pub hostless: Vec<(usize, usize)>,
    pub passed: bool,
}

const FACE_SAMPLES_1D: usize = 256;
const FACE_LATTICE_ORDER_2D: usize = 32;

/// Number of connected components of Γ on the face `pts`, estimated from a
/// fine sampling: for a simply connected face the sign regions form a tree,
/// so components = (number of sign regions) − 1.
pub fn face_crossings(pts: &[Point], ls: &LevelSet, eps: f64) -> usize {
    if pts.len() == 2 {
        let mut runs: usize = 0;
        let mut last = 0i8;
        for i in 0..=FACE_SAMPLES_1D {
            let t = i as f64 / FACE_SAMPLES_1D as f64;
            let x = [
                pts[0][0] + t * (pts[1][0] - pts[0][0]),
                pts[0][1] + t * (pts[1][1] - pts[0][1]),
                pts[0][2] + t * (pts[1][2] - pts[0][2]),
            ];
            let v = ls.value(&x);
            let s = if v > eps {
                1
            } else if v < -eps {
                -1
            } else {
                0
            };
            if s != 0 && s != last {
                runs += 1;
                last = s;
            }
        }
        return runs.saturating_sub(1);
    }
    let order = FACE_LATTICE_ORDER_2D;
    let side = order + 1;
    let idx = |a: usize, b: usize| a * side + b;
    let mut sign = vec![0i8; side * side];
    for alpha in barycentric_lattice(2, order) {
        let v = ls.value(&lattice_point(pts, &alpha, order));
        sign[idx(alpha[0], alpha[1])] = if v > eps {
            1
        } else if v < -eps {
            -1
        } else {
            0
        };
    }
    let mut parent: Vec<usize> = (0..side * side).collect();
    fn find(p: &mut [usize], mut x: usize) -> usize {
        while p[x] != x {
            p[x] = p[p[x]];
            x = p[x];
        }
        x
    }
    for a in 0..=order {
        for b in 0..=order - a {
            let s = sign[idx(a, b)];
            if s == 0 {
                continue;
            }
            // lattice neighbours (a+1,b), (a,b+1), (a+1,b-1)
            let mut nb = Vec::with_capacity(3);
            if a + b < order {
                nb.push((a + 1, b));
                nb.push((a, b + 1));
            }
            if b > 0 {
                nb.push((a + 1, b - 1));
            }
            for (na, nbb) in nb {
                if na + nbb <= order && sign[idx(na, nbb)] == s {
                    let (r1, r2) = (
                        find(&mut parent, idx(a, b)),
                        find(&mut parent, idx(na, nbb)),
                    );
                    if r1 != r2 {
                        parent[r1] = r2;
                    }
                }
            }
        }
    }
    let mut regions: usize = 0;
    for a in 0..=order {
        for b in 0..=order - a {
            let i = idx(a, b);
            if sign[i] != 0 && find(&mut parent, i) == i {
                regions += 1;
            }
        }
    }
    regions.saturating_sub(1)
}

/// Checks single crossings of cut faces and host availability.
pub fn verify_assumptions(
    mesh: &SimplexMesh,
    ls: &LevelSet,
    cls: &DomainClassification,
) -> AssumptionReport {
    let mut report = AssumptionReport::default();
    for f in 0..mesh.n_faces() {
        if cls.face_tag[f] != CellTag::Cut {
            continue;
        }
        let c = face_crossings(&mesh.face_points(f), ls, cls.eps_geom);
        report.face_crossings.push((f, c));
        if c > 1 {
            report.multi_crossing_faces.push(f);
        }
    }
    for k in cls.cut_elements() {
        let patch = mesh.element_patch(k).unwrap_or_default();
        for &side in cls.sides() {
            let want = CellTag::side(side);
            if !patch.iter().any(|&c| cls.element_tag[c] == want) {
                report.hostless.push((k, side));
            }
        }
    }
    report.passed = report.multi_crossing_faces.is_empty() && report.hostless.is_empty();
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_structured_mesh, BoxDomain};

    fn circle(r: f64) -> LevelSet {
        LevelSet::new(2, "circle", move |x| x[0] * x[0] + x[1] * x[1] - r * r)
    }

    #[test]
    fn lattice_sizes() {
        assert_eq!(barycentric_lattice(2, 8).len(), 45);
        assert_eq!(barycentric_lattice(3, 8).len(), 165);
        assert_eq!(barycentric_lattice(1, 4).len(), 5);
    }

    #[test]
    fn constant_level_set_is_all_interior() {
        let m = build_structured_mesh(&BoxDomain::square(0.0, 1.0).unwrap(), 3).unwrap();
        let cls = classify(&m, &LevelSet::new(2, "-1", |_| -1.0), Mode::Boundary).unwrap();
        assert_eq!(cls.count(CellTag::Side0), m.n_elements());
        assert!(cls.cut_elements().is_empty());
        let rep = verify_assumptions(&m, &LevelSet::new(2, "-1", |_| -1.0), &cls);
        assert!(rep.passed);
    }

    #[test]
    fn empty_domain_is_an_error() {
        let m = build_structured_mesh(&BoxDomain::square(0.0, 1.0).unwrap(), 2).unwrap();
        let r = classify(&m, &LevelSet::new(2, "+1", |_| 1.0), Mode::Boundary);
        assert!(matches!(r, Err(Error::EmptyDomain)));
    }

    #[test]
    fn gamma_through_vertices_uses_strict_signs() {
        // x = 0.5 runs along mesh edges of the n=2 grid: no element is cut.
        let m = build_structured_mesh(&BoxDomain::square(0.0, 1.0).unwrap(), 2).unwrap();
        let ls = LevelSet::new(2, "x-0.5", |x| x[0] - 0.5);
        let cls = classify(&m, &ls, Mode::Boundary).unwrap();
        for k in 0..m.n_elements() {
            let cx: f64 = m.element_points(k).iter().map(|p| p[0]).sum::<f64>() / 3.0;
            let expect = if cx < 0.5 {
                CellTag::Side0
            } else {
                CellTag::Side1
            };
            assert_eq!(cls.element_tag[k], expect, "element {k}");
        }
    }

    #[test]
    fn hosts_and_forced_failure() {
        let m = build_structured_mesh(&BoxDomain::square(-1.0, 1.0).unwrap(), 10).unwrap();
        let cls = assign_hosts(&m, &classify(&m, &circle(0.7), Mode::Boundary).unwrap()).unwrap();
        for k in cls.cut_elements() {
            let h = cls.host0[k].unwrap();
            assert_eq!(cls.element_tag[h], CellTag::Side0);
            assert!(m.element_patch(k).unwrap().contains(&h));
        }
        // a tiny circle on a single-cell mesh: cut elements with no interior neighbour
        let coarse = build_structured_mesh(&BoxDomain::square(-1.0, 1.0).unwrap(), 1).unwrap();
        let cls = classify(&coarse, &circle(0.3), Mode::Boundary).unwrap();
        assert!(matches!(
            assign_hosts(&coarse, &cls),
            Err(Error::MissingHost { .. })
        ));
    }

    #[test]
    fn multi_crossing_faces_are_reported() {
        let m = build_structured_mesh(&BoxDomain::square(0.0, 1.0).unwrap(), 2).unwrap();
        let ls = LevelSet::new(2, "sin", |x| (20.0 * std::f64::consts::PI * x[0]).sin());
        let cls = classify(&m, &ls, Mode::Interface).unwrap();
        let rep = verify_assumptions(&m, &ls, &cls);
        assert!(!rep.passed);
        assert!(!rep.multi_crossing_faces.is_empty());
    }

    #[test]
    fn crossings_on_a_triangle_face() {
        let pts = [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]];
        let single = LevelSet::new(3, "plane", |x| x[0] - 0.3);
        assert_eq!(face_crossings(&pts, &single, 1e-12), 1);
        let band = LevelSet::new(3, "band", |x| (x[0] - 0.2) * (x[0] - 0.6));
        assert_eq!(face_crossings(&pts, &band, 1e-12), 2);
        let none = LevelSet::new(3, "none", |_| 1.0);
        assert_eq!(face_crossings(&pts, &none, 1e-12), 0);
    }

    #[test]
    fn fd_gradient_matches_analytic() {
        let ls = circle(0.7).with_gradient(|x| [2.0 * x[0], 2.0 * x[1], 0.0]);
        let x = [0.3, -0.45, 0.0];
        let (a, b) = (ls.gradient(&x), ls.fd_gradient(&x));
        for d in 0..2 {
            assert!((a[d] - b[d]).abs() < 1e-4 * a[d].abs());
        }
    }
}
