//! Simplicial background meshes of axis-aligned boxes.
//!
//! Structured meshes split each square cell into two triangles along the
//! same diagonal (2D) or each cube into six Kuhn tetrahedra (3D). Arbitrary
//! conforming simplicial meshes can be imported from a plain-text format.

use std::collections::HashMap;
use std::fmt::Write as _;

use crate::{norm, sub, Error, Point, Result};

/// Axis-aligned box `[lo, hi]` in two or three dimensions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoxDomain {
    pub dim: usize,
    pub lo: Point,
    pub hi: Point,
}

impl BoxDomain {
    pub fn new(dim: usize, lo: Point, hi: Point) -> Result<Self> {
        if !(2..=3).contains(&dim) {
            return Err(Error::InvalidArgument(format!(
                "box dimension {dim} not in {{2,3}}"
            )));
        }
        for d in 0..dim {
            if !(hi[d] > lo[d]) || !lo[d].is_finite() || !hi[d].is_finite() {
                return Err(Error::InvalidArgument(format!(
                    "degenerate box along axis {d}: [{}, {}]",
                    lo[d], hi[d]
                )));
            }
        }
        let (mut lo, mut hi) = (lo, hi);
        for d in dim..3 {
            lo[d] = 0.0;
            hi[d] = 0.0;
        }
        Ok(BoxDomain { dim, lo, hi })
    }

    /// `(a, b)^2`
    pub fn square(a: f64, b: f64) -> Result<Self> {
        Self::new(2, [a, a, 0.0], [b, b, 0.0])
    }

    /// `(a, b)^3`
    pub fn cube(a: f64, b: f64) -> Result<Self> {
        Self::new(3, [a, a, a], [b, b, b])
    }

    pub fn volume(&self) -> f64 {
        (0..self.dim).map(|d| self.hi[d] - self.lo[d]).product()
    }

    /// Largest side length.
    pub fn scale(&self) -> f64 {
        (0..self.dim)
            .map(|d| self.hi[d] - self.lo[d])
            .fold(0.0, f64::max)
    }
}

/// Affine map `x = origin + J ξ` from the unit reference simplex.
///
/// In 2D the unused third row/column of `J` is the identity so that the
/// same 3×3 formulas apply.
#[derive(Debug, Clone, Copy)]
pub struct AffineMap {
    pub dim: usize,
    pub origin: Point,
    /// `jac[r][c]` = component `r` of edge vector `x_{c+1} - x_0`.
    pub jac: [[f64; 3]; 3],
    pub inv: [[f64; 3]; 3],
    /// Signed determinant of the `dim × dim` Jacobian.
    pub det: f64,
}

impl AffineMap {
    pub fn from_vertices(dim: usize, verts: &[Point]) -> Self {
        let origin = verts[0];
        let mut jac = [[0.0; 3]; 3];
        for c in 0..3 {
            if c < dim {
                let e = sub(&verts[c + 1], &origin);
                for r in 0..3 {
                    jac[r][c] = e[r];
                }
            } else {
                jac[c][c] = 1.0;
            }
        }
        let det = det3(&jac);
        let inv = inv3(&jac, det);
        AffineMap {
            dim,
            origin,
            jac,
            inv,
            det,
        }
    }

    #[inline]
    pub fn to_physical(&self, xi: &Point) -> Point {
        let mut x = self.origin;
        for r in 0..self.dim {
            for c in 0..self.dim {
                x[r] += self.jac[r][c] * xi[c];
            }
        }
        x
    }

    /// Reference coordinates of `x`; they may lie outside the unit simplex.
    #[inline]
    pub fn to_reference(&self, x: &Point) -> Point {
        let d = sub(x, &self.origin);
        let mut xi = [0.0; 3];
        for r in 0..self.dim {
            for c in 0..self.dim {
                xi[r] += self.inv[r][c] * d[c];
            }
        }
        xi
    }

    /// Physical gradient from a reference gradient: `J^{-T} g`.
    #[inline]
    pub fn grad_to_physical(&self, g: &Point) -> Point {
        let mut out = [0.0; 3];
        for r in 0..self.dim {
            for c in 0..self.dim {
                out[r] += self.inv[c][r] * g[c];
            }
        }
        out
    }
}

fn det3(m: &[[f64; 3]; 3]) -> f64 {
    m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
        - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
}

fn inv3(m: &[[f64; 3]; 3], det: f64) -> [[f64; 3]; 3] {
    let d = 1.0 / det;
    [
        [
            (m[1][1] * m[2][2] - m[1][2] * m[2][1]) * d,
            (m[0][2] * m[2][1] - m[0][1] * m[2][2]) * d,
            (m[0][1] * m[1][2] - m[0][2] * m[1][1]) * d,
        ],
        [
            (m[1][2] * m[2][0] - m[1][0] * m[2][2]) * d,
            (m[0][0] * m[2][2] - m[0][2] * m[2][0]) * d,
            (m[0][2] * m[1][0] - m[0][0] * m[1][2]) * d,
        ],
        [
            (m[1][0] * m[2][1] - m[1][1] * m[2][0]) * d,
            (m[0][1] * m[2][0] - m[0][0] * m[2][1]) * d,
            (m[0][0] * m[1][1] - m[0][1] * m[1][0]) * d,
        ],
    ]
}

/// A `(dim-1)`-face with its one or two incident elements.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Face {
    /// Sorted vertex indices; only the first `dim` entries are used.
    pub vertices: [usize; 3],
    /// First incident element and, for interior faces, the second.
    pub elements: (usize, Option<usize>),
    /// Local index (opposite vertex) of the face in each incident element.
    pub local: (usize, usize),
}

impl Face {
    pub fn is_boundary(&self) -> bool {
        self.elements.1.is_none()
    }
}

#[derive(Debug, Clone)]
pub struct SimplexMesh {
    dim: usize,
    vertices: Vec<Point>,
    elements: Vec<[usize; 4]>,
    faces: Vec<Face>,
    element_faces: Vec<[usize; 4]>,
    vertex_elements: Vec<Vec<usize>>,
    maps: Vec<AffineMap>,
    h_elem: Vec<f64>,
    h_face: Vec<f64>,
    h: f64,
    cell_width: f64,
}

/// Structured triangulation of `bbox` with `n` cells per axis.
pub fn build_structured_mesh(bbox: &BoxDomain, n: usize) -> Result<SimplexMesh> {
    if n == 0 {
        return Err(Error::InvalidArgument(
            "cells per axis must be at least 1".into(),
        ));
    }
    let bbox = BoxDomain::new(bbox.dim, bbox.lo, bbox.hi)?;
    let dim = bbox.dim;
    let np = n + 1;
    let step: Vec<f64> = (0..dim)
        .map(|d| (bbox.hi[d] - bbox.lo[d]) / n as f64)
        .collect();
    let coord = |d: usize, i: usize| {
        if i == n {
            bbox.hi[d]
        } else {
            bbox.lo[d] + step[d] * i as f64
        }
    };
    let mut vertices = Vec::new();
    let mut elements = Vec::new();
    if dim == 2 {
        for j in 0..np {
            for i in 0..np {
                vertices.push([coord(0, i), coord(1, j), 0.0]);
            }
        }
        let vid = |i: usize, j: usize| i + np * j;
        for j in 0..n {
            for i in 0..n {
                let (v00, v10, v01, v11) =
                    (vid(i, j), vid(i + 1, j), vid(i, j + 1), vid(i + 1, j + 1));
                elements.push(vec![v00, v10, v11]);
                elements.push(vec![v00, v11, v01]);
            }
        }
    } else {
        for k in 0..np {
            for j in 0..np {
                for i in 0..np {
                    vertices.push([coord(0, i), coord(1, j), coord(2, k)]);
                }
            }
        }
        let vid = |c: [usize; 3]| c[0] + np * (c[1] + np * c[2]);
        const PERMS: [[usize; 3]; 6] = [
            [0, 1, 2],
            [0, 2, 1],
            [1, 0, 2],
            [1, 2, 0],
            [2, 0, 1],
            [2, 1, 0],
        ];
        for k in 0..n {
            for j in 0..n {
                for i in 0..n {
                    for p in PERMS {
                        let mut c = [i, j, k];
                        let mut tet = vec![vid(c)];
                        for axis in p {
                            c[axis] += 1;
                            tet.push(vid(c));
                        }
                        elements.push(tet);
                    }
                }
            }
        }
    }
    let width = step.iter().cloned().fold(0.0, f64::max);
    SimplexMesh::from_parts(dim, vertices, elements, Some(width))
}

impl SimplexMesh {
    /// Builds a mesh from raw vertices and elements, reorienting elements to
    /// positive signed volume and deriving faces and adjacency.
    ///
    /// `cell_width` defaults to the mesh size `h` when not given.
    pub fn from_parts(
        dim: usize,
        vertices: Vec<Point>,
        elements: Vec<Vec<usize>>,
        cell_width: Option<f64>,
    ) -> Result<Self> {
        if !(2..=3).contains(&dim) {
            return Err(Error::InvalidArgument(format!(
                "dimension {dim} not in {{2,3}}"
            )));
        }
        if elements.is_empty() {
            return Err(Error::MeshFormat("mesh has no elements".into()));
        }
        let nv = vertices.len();
        let mut elems = Vec::with_capacity(elements.len());
        let mut maps = Vec::with_capacity(elements.len());
        for (k, e) in elements.iter().enumerate() {
            if e.len() != dim + 1 {
                return Err(Error::MeshFormat(format!(
                    "element {k} has {} vertices, expected {}",
                    e.len(),
                    dim + 1
                )));
            }
            let mut ids = [usize::MAX; 4];
            for (slot, &v) in e.iter().enumerate() {
                if v >= nv {
                    return Err(Error::MeshFormat(format!(
                        "element {k} references vertex {v} >= {nv}"
                    )));
                }
                ids[slot] = v;
            }
            let pts: Vec<Point> = e.iter().map(|&v| vertices[v]).collect();
            let mut map = AffineMap::from_vertices(dim, &pts);
            if map.det < 0.0 {
                ids.swap(dim - 1, dim);
                let pts: Vec<Point> = ids[..=dim].iter().map(|&v| vertices[v]).collect();
                map = AffineMap::from_vertices(dim, &pts);
            }
            if !(map.det > 0.0) {
                return Err(Error::MeshFormat(format!("element {k} is degenerate")));
            }
            elems.push(ids);
            maps.push(map);
        }

        let mut faces: Vec<Face> = Vec::new();
        let mut element_faces = vec![[usize::MAX; 4]; elems.len()];
        let mut lookup: HashMap<[usize; 3], usize> = HashMap::new();
        for (k, ids) in elems.iter().enumerate() {
            for local in 0..=dim {
                let mut key = [usize::MAX; 3];
                let mut s = 0;
                for (slot, &v) in ids[..=dim].iter().enumerate() {
                    if slot != local {
                        key[s] = v;
                        s += 1;
                    }
                }
                key[..dim].sort_unstable();
                match lookup.get(&key) {
                    Some(&f) => {
                        let face = &mut faces[f];
                        if face.elements.1.is_some() {
                            return Err(Error::MeshFormat(format!(
                                "face {key:?} shared by more than two elements"
                            )));
                        }
                        face.elements.1 = Some(k);
                        face.local.1 = local;
                        element_faces[k][local] = f;
                    }
                    None => {
                        let f = faces.len();
                        faces.push(Face {
                            vertices: key,
                            elements: (k, None),
                            local: (local, usize::MAX),
                        });
                        lookup.insert(key, f);
                        element_faces[k][local] = f;
                    }
                }
            }
        }

        let mut vertex_elements = vec![Vec::new(); nv];
        for (k, ids) in elems.iter().enumerate() {
            for &v in &ids[..=dim] {
                vertex_elements[v].push(k);
            }
        }

        let longest = |ids: &[usize]| {
            let mut h: f64 = 0.0;
            for a in 0..ids.len() {
                for b in a + 1..ids.len() {
                    h = h.max(norm(&sub(&vertices[ids[a]], &vertices[ids[b]])));
                }
            }
            h
        };
        let h_elem: Vec<f64> = elems.iter().map(|ids| longest(&ids[..=dim])).collect();
        let h_face: Vec<f64> = faces.iter().map(|f| longest(&f.vertices[..dim])).collect();
        let h = h_elem.iter().cloned().fold(0.0, f64::max);

        Ok(SimplexMesh {
            dim,
            vertices,
            elements: elems,
            faces,
            element_faces,
            vertex_elements,
            maps,
            h_elem,
            h_face,
            h,
            cell_width: cell_width.unwrap_or(h),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn n_elements(&self) -> usize {
        self.elements.len()
    }

    pub fn n_faces(&self) -> usize {
        self.faces.len()
    }

    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }

    pub fn vertex(&self, v: usize) -> Point {
        self.vertices[v]
    }

    /// Vertex indices of element `k` (positively oriented).
    pub fn element(&self, k: usize) -> &[usize] {
        &self.elements[k][..=self.dim]
    }

    pub fn element_points(&self, k: usize) -> Vec<Point> {
        self.element(k).iter().map(|&v| self.vertices[v]).collect()
    }

    pub fn faces(&self) -> &[Face] {
        &self.faces
    }

    pub fn face(&self, f: usize) -> &Face {
        &self.faces[f]
    }

    pub fn face_vertices(&self, f: usize) -> &[usize] {
        &self.faces[f].vertices[..self.dim]
    }

    pub fn face_points(&self, f: usize) -> Vec<Point> {
        self.face_vertices(f)
            .iter()
            .map(|&v| self.vertices[v])
            .collect()
    }

    /// Face indices of element `k`, indexed by opposite local vertex.
    pub fn element_faces(&self, k: usize) -> &[usize] {
        &self.element_faces[k][..=self.dim]
    }

    pub fn map(&self, k: usize) -> &AffineMap {
        &self.maps[k]
    }

    /// Diameter (longest edge) of element `k`.
    pub fn h_elem(&self, k: usize) -> f64 {
        self.h_elem[k]
    }

    /// Diameter of face `f`.
    pub fn h_face(&self, f: usize) -> f64 {
        self.h_face[f]
    }

    /// Maximum element diameter.
    pub fn h(&self) -> f64 {
        self.h
    }

    /// Edge length of the structured grid cells (equals `h` for imported meshes).
    pub fn cell_width(&self) -> f64 {
        self.cell_width
    }

    pub fn volume(&self, k: usize) -> f64 {
        let fact = if self.dim == 2 { 2.0 } else { 6.0 };
        self.maps[k].det / fact
    }

    /// Inscribed-sphere radius `d |K| / |∂K|`.
    pub fn inradius(&self, k: usize) -> f64 {
        let surface: f64 = self
            .element_faces(k)
            .iter()
            .map(|&f| self.face_measure(f))
            .sum();
        self.dim as f64 * self.volume(k) / surface
    }

    pub fn face_measure(&self, f: usize) -> f64 {
        let p = self.face_points(f);
        if self.dim == 2 {
            norm(&sub(&p[1], &p[0]))
        } else {
            0.5 * norm(&cross(&sub(&p[1], &p[0]), &sub(&p[2], &p[0])))
        }
    }

    /// Unit normal of face `f` pointing out of its first incident element.
    pub fn face_normal(&self, f: usize) -> Point {
        let face = &self.faces[f];
        let p = self.face_points(f);
        let mut n = if self.dim == 2 {
            let t = sub(&p[1], &p[0]);
            [t[1], -t[0], 0.0]
        } else {
            cross(&sub(&p[1], &p[0]), &sub(&p[2], &p[0]))
        };
        let len = norm(&n);
        for c in n.iter_mut() {
            *c /= len;
        }
        let k = face.elements.0;
        let opposite = self.vertices[self.elements[k][face.local.0]];
        if crate::dot(&n, &sub(&opposite, &p[0])) > 0.0 {
            for c in n.iter_mut() {
                *c = -*c;
            }
        }
        n
    }

    pub fn vertex_elements(&self, v: usize) -> &[usize] {
        &self.vertex_elements[v]
    }

    /// All elements whose closure meets the closure of `k`, including `k`,
    /// in ascending order.
    pub fn element_patch(&self, k: usize) -> Result<Vec<usize>> {
        if k >= self.elements.len() {
            return Err(Error::IndexOutOfRange {
                what: "element",
                index: k,
                len: self.elements.len(),
            });
        }
        let mut patch: Vec<usize> = self
            .element(k)
            .iter()
            .flat_map(|&v| self.vertex_elements[v].iter().copied())
            .collect();
        patch.sort_unstable();
        patch.dedup();
        Ok(patch)
    }

    /// Number of distinct edges.
    pub fn n_edges(&self) -> usize {
        let mut edges = std::collections::HashSet::new();
        for ids in &self.elements {
            let ids = &ids[..=self.dim];
            for a in 0..ids.len() {
                for b in a + 1..ids.len() {
                    edges.insert((ids[a].min(ids[b]), ids[a].max(ids[b])));
                }
            }
        }
        edges.len()
    }

    /// Parses the plain-text format: a `dim n_vertices n_elements` header,
    /// then one vertex per line, then one element per line (zero-based).
    pub fn from_text(text: &str) -> Result<Self> {
        let mut tokens = text.split_whitespace();
        let mut next = |what: &str| {
            tokens
                .next()
                .ok_or_else(|| Error::MeshFormat(format!("unexpected end of input reading {what}")))
        };
        let parse_usize = |s: &str| {
            s.parse::<usize>()
                .map_err(|e| Error::MeshFormat(format!("{s:?}: {e}")))
        };
        let dim = parse_usize(next("dim")?)?;
        let nv = parse_usize(next("vertex count")?)?;
        let ne = parse_usize(next("element count")?)?;
        if !(2..=3).contains(&dim) {
            return Err(Error::MeshFormat(format!("dimension {dim} not in {{2,3}}")));
        }
        let mut vertices = Vec::with_capacity(nv);
        for _ in 0..nv {
            let mut p = [0.0; 3];
            for c in p.iter_mut().take(dim) {
                let s = next("vertex coordinate")?;
                *c = s
                    .parse::<f64>()
                    .map_err(|e| Error::MeshFormat(format!("{s:?}: {e}")))?;
            }
            vertices.push(p);
        }
        let mut elements = Vec::with_capacity(ne);
        for _ in 0..ne {
            let mut e = Vec::with_capacity(dim + 1);
            for _ in 0..=dim {
                e.push(parse_usize(next("element index")?)?);
            }
            elements.push(e);
        }
        if tokens.next().is_some() {
            return Err(Error::MeshFormat("trailing data after last element".into()));
        }
        Self::from_parts(dim, vertices, elements, None)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{} {} {}",
            self.dim,
            self.vertices.len(),
            self.elements.len()
        );
        for p in &self.vertices {
            let line: Vec<String> = p[..self.dim].iter().map(|c| format!("{c:?}")).collect();
            let _ = writeln!(out, "{}", line.join(" "));
        }
        for k in 0..self.elements.len() {
            let line: Vec<String> = self.element(k).iter().map(|v| v.to_string()).collect();
            let _ = writeln!(out, "{}", line.join(" "));
        }
        out
    }
}

pub(crate) fn cross(a: &Point, b: &Point) -> Point {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}
