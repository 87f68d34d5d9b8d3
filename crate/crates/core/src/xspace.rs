//! Extension finite element spaces.
//!
//! Degrees of freedom sit on the uncut elements only. A cut element has no
//! unknowns of its own: on each side it evaluates the polynomial of its host
//! element, i.e. `x` is pulled back through the host's affine map (reference
//! coordinates outside the unit simplex are expected) and the host's shape
//! functions are evaluated there.

use std::collections::HashMap;

use crate::geometry::{barycentric_lattice, CellTag, DomainClassification, Mode};
use crate::mesh::{AffineMap, SimplexMesh};
use crate::{Error, Point, Result};

pub const MAX_DEGREE: usize = 4;
/// Shape functions of degree MAX_DEGREE on a tetrahedron.
const MAX_LOCAL: usize = 35;

/// Equispaced Lagrange shape functions of total degree `m` on the unit simplex.
#[derive(Debug, Clone)]
pub struct LagrangeBasis {
    dim: usize,
    degree: usize,
    alphas: Vec<[usize; 4]>,
    nodes: Vec<Point>,
}

impl LagrangeBasis {
    pub fn new(dim: usize, degree: usize) -> Result<Self> {
        if !(1..=MAX_DEGREE).contains(&degree) {
            return Err(Error::InvalidArgument(format!(
                "polynomial degree {degree} not in 1..={MAX_DEGREE}"
            )));
        }
        if !(1..=3).contains(&dim) {
            return Err(Error::InvalidArgument(format!(
                "dimension {dim} not in 1..=3"
            )));
        }
        let alphas = barycentric_lattice(dim, degree);
        let nodes = alphas
            .iter()
            .map(|a| {
                let mut xi = [0.0; 3];
                for c in 0..dim {
                    xi[c] = a[c + 1] as f64 / degree as f64;
                }
                xi
            })
            .collect();
        Ok(LagrangeBasis {
            dim,
            degree,
            alphas,
            nodes,
        })
    }

    pub fn len(&self) -> usize {
        self.alphas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alphas.is_empty()
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    /// Barycentric multi-indices of the nodes (`alpha[i]` pairs with vertex `i`).
    pub fn alphas(&self) -> &[[usize; 4]] {
        &self.alphas
    }

    /// Reference coordinates of the nodes.
    pub fn nodes(&self) -> &[Point] {
        &self.nodes
    }

    /// Values and reference gradients at `xi` (any point, not only inside
    /// the simplex).
    pub fn eval(&self, xi: &Point, values: &mut [f64], grads: &mut [Point]) {
        let m = self.degree;
        let mf = m as f64;
        let dim = self.dim;
        let mut lambda = [0.0; 4];
        lambda[0] = 1.0 - xi[..dim].iter().sum::<f64>();
        lambda[1..=dim].copy_from_slice(&xi[..dim]);
        let mut p = [[0.0; MAX_DEGREE + 1]; 4];
        let mut dp = [[0.0; MAX_DEGREE + 1]; 4];
        for i in 0..=dim {
            p[i][0] = 1.0;
            for k in 1..=m {
                let f = (mf * lambda[i] - (k - 1) as f64) / k as f64;
                p[i][k] = p[i][k - 1] * f;
                dp[i][k] = dp[i][k - 1] * f + p[i][k - 1] * mf / k as f64;
            }
        }
        for (n, a) in self.alphas.iter().enumerate() {
            let mut v = 1.0;
            for i in 0..=dim {
                v *= p[i][a[i]];
            }
            values[n] = v;
            let mut dl = [0.0; 4];
            for i in 0..=dim {
                let mut d = dp[i][a[i]];
                for l in 0..=dim {
                    if l != i {
                        d *= p[l][a[l]];
                    }
                }
                dl[i] = d;
            }
            let mut g = [0.0; 3];
            for c in 0..dim {
                g[c] = dl[c + 1] - dl[0];
            }
            grads[n] = g;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Continuity {
    C0,
    Dg,
}

#[derive(Debug, Clone)]
pub struct ExtendedSpace {
    dim: usize,
    continuity: Continuity,
    mode: Mode,
    basis: LagrangeBasis,
    maps: Vec<AffineMap>,
    element_dofs: Vec<Vec<usize>>,
    delegate: Vec<[Option<usize>; 2]>,
    dof_positions: Vec<Point>,
    dof_side: Vec<usize>,
}

/// Builds `V_h` on the uncut elements and the delegation map for cut ones.
pub fn build_space(
    mesh: &SimplexMesh,
    cls: &DomainClassification,
    degree: usize,
    continuity: Continuity,
) -> Result<ExtendedSpace> {
    let dim = mesh.dim();
    let basis = LagrangeBasis::new(dim, degree)?;
    let ne = mesh.n_elements();
    let mut delegate = vec![[None, None]; ne];
    for k in 0..ne {
        for &side in cls.sides() {
            delegate[k][side] = match cls.element_tag[k] {
                CellTag::Cut => Some(
                    cls.host(k, side)
                        .ok_or(Error::MissingHost { element: k, side })?,
                ),
                t if t == CellTag::side(side) => Some(k),
                _ => None,
            };
        }
    }

    let mut element_dofs = vec![Vec::new(); ne];
    let mut dof_positions = Vec::new();
    let mut dof_side = Vec::new();
    let mut keys: HashMap<(usize, Vec<(usize, usize)>), usize> = HashMap::new();
    for &side in cls.sides() {
        for k in 0..ne {
            if cls.element_tag[k] != CellTag::side(side) {
                continue;
            }
            let verts = mesh.element(k);
            let pts = mesh.element_points(k);
            let mut dofs = Vec::with_capacity(basis.len());
            for (local, a) in basis.alphas().iter().enumerate() {
                let key = match continuity {
                    Continuity::C0 => {
                        let mut key: Vec<(usize, usize)> = (0..=dim)
                            .filter(|&i| a[i] > 0)
                            .map(|i| (verts[i], a[i]))
                            .collect();
                        key.sort_unstable();
                        (side, key)
                    }
                    Continuity::Dg => (side, vec![(k, local)]),
                };
                let next = dof_positions.len();
                let id = *keys.entry(key).or_insert(next);
                if id == next {
                    dof_positions.push(crate::geometry::lattice_point(&pts, a, degree));
                    dof_side.push(side);
                }
                dofs.push(id);
            }
            element_dofs[k] = dofs;
        }
    }
    if dof_positions.is_empty() {
        return Err(Error::EmptyInterior);
    }
    Ok(ExtendedSpace {
        dim,
        continuity,
        mode: cls.mode,
        basis,
        maps: (0..ne).map(|k| *mesh.map(k)).collect(),
        element_dofs,
        delegate,
        dof_positions,
        dof_side,
    })
}

impl ExtendedSpace {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn degree(&self) -> usize {
        self.basis.degree()
    }

    pub fn continuity(&self) -> Continuity {
        self.continuity
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn basis(&self) -> &LagrangeBasis {
        &self.basis
    }

    pub fn dof_count(&self) -> usize {
        self.dof_positions.len()
    }

    pub fn dof_positions(&self) -> &[Point] {
        &self.dof_positions
    }

    pub fn dof_side(&self, dof: usize) -> usize {
        self.dof_side[dof]
    }

    /// Local shape-function count per element.
    pub fn local_len(&self) -> usize {
        self.basis.len()
    }

    /// Element whose polynomial represents the side-`side` function on `k`:
    /// `k` itself for uncut elements on that side, the host for cut ones.
    pub fn delegate(&self, k: usize, side: usize) -> Option<usize> {
        self.delegate[k][side]
    }

    /// Global dofs of an element carrying its own unknowns (empty otherwise).
    pub fn element_dofs(&self, k: usize) -> &[usize] {
        &self.element_dofs[k]
    }

    /// Shape functions of element `host` evaluated at `x` through its affine map.
    pub fn eval_host(&self, host: usize, x: &Point, values: &mut [f64], grads: &mut [Point]) {
        let map = &self.maps[host];
        let xi = map.to_reference(x);
        self.basis.eval(&xi, values, grads);
        for g in grads.iter_mut() {
            *g = map.grad_to_physical(g);
        }
    }

    /// Basis functions active on element `k` (side `side`) at `x`: the
    /// delegate's dofs with values and physical gradients.
    pub fn eval_basis(
        &self,
        k: usize,
        side: usize,
        x: &Point,
    ) -> Result<(Vec<usize>, Vec<f64>, Vec<Point>)> {
        if k >= self.delegate.len() {
            return Err(Error::IndexOutOfRange {
                what: "element",
                index: k,
                len: self.delegate.len(),
            });
        }
        let host = self
            .delegate
            .get(k)
            .and_then(|d| d.get(side).copied().flatten())
            .ok_or(Error::InvalidArgument(format!(
                "element {k} is not active on side {side}"
            )))?;
        let n = self.local_len();
        let mut values = vec![0.0; n];
        let mut grads = vec![[0.0; 3]; n];
        self.eval_host(host, x, &mut values, &mut grads);
        Ok((self.element_dofs[host].clone(), values, grads))
    }

    /// Value and gradient of the discrete function `coeffs` on element `k`.
    pub fn evaluate(
        &self,
        coeffs: &[f64],
        k: usize,
        side: usize,
        x: &Point,
    ) -> Option<(f64, Point)> {
        let host = self.delegate(k, side)?;
        let n = self.local_len();
        let mut values = [0.0; MAX_LOCAL];
        let mut grads = [[0.0; 3]; MAX_LOCAL];
        let (values, grads) = (&mut values[..n], &mut grads[..n]);
        self.eval_host(host, x, values, grads);
        let mut v = 0.0;
        let mut g = [0.0; 3];
        for (i, &dof) in self.element_dofs[host].iter().enumerate() {
            v += coeffs[dof] * values[i];
            for d in 0..3 {
                g[d] += coeffs[dof] * grads[i][d];
            }
        }
        Some((v, g))
    }

    /// Nodal interpolant: `c[dof] = u(side(dof), node(dof))`.
    pub fn interpolate(&self, u: impl Fn(usize, &Point) -> f64) -> Vec<f64> {
        self.dof_positions
            .iter()
            .zip(&self.dof_side)
            .map(|(x, &s)| u(s, x))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{assign_hosts, classify, LevelSet};
    use crate::mesh::{build_structured_mesh, BoxDomain};

    fn disk_setup(n: usize) -> (SimplexMesh, DomainClassification) {
        let m = build_structured_mesh(&BoxDomain::square(-1.0, 1.0).unwrap(), n).unwrap();
        let ls = LevelSet::new(2, "circle", |x| x[0] * x[0] + x[1] * x[1] - 0.49);
        let cls = assign_hosts(&m, &classify(&m, &ls, Mode::Boundary).unwrap()).unwrap();
        (m, cls)
    }

    #[test]
    fn kronecker_property() {
        for dim in 1..=3 {
            for m in 1..=MAX_DEGREE {
                let b = LagrangeBasis::new(dim, m).unwrap();
                let mut v = vec![0.0; b.len()];
                let mut g = vec![[0.0; 3]; b.len()];
                for (i, node) in b.nodes().iter().enumerate() {
                    b.eval(node, &mut v, &mut g);
                    for (j, vj) in v.iter().enumerate() {
                        let want = if i == j { 1.0 } else { 0.0 };
                        assert!((vj - want).abs() < 1e-12, "dim {dim} m {m}");
                    }
                }
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let b = LagrangeBasis::new(2, 2).unwrap();
        let xi = [0.31, 0.17, 0.0];
        let n = b.len();
        let (mut v, mut g) = (vec![0.0; n], vec![[0.0; 3]; n]);
        let (mut vp, mut vm, mut gg) = (vec![0.0; n], vec![0.0; n], vec![[0.0; 3]; n]);
        b.eval(&xi, &mut v, &mut g);
        for d in 0..2 {
            let mut p = xi;
            let mut q = xi;
            p[d] += 1e-6;
            q[d] -= 1e-6;
            b.eval(&p, &mut vp, &mut gg);
            b.eval(&q, &mut vm, &mut gg);
            for i in 0..n {
                let fd = (vp[i] - vm[i]) / 2e-6;
                assert!((fd - g[i][d]).abs() <= 1e-6 * g[i][d].abs().max(1.0));
            }
        }
    }

    #[test]
    fn dof_counts() {
        let m = build_structured_mesh(&BoxDomain::square(0.0, 1.0).unwrap(), 4).unwrap();
        let ls = LevelSet::new(2, "-1", |_| -1.0);
        let cls = classify(&m, &ls, Mode::Boundary).unwrap();
        let s = build_space(&m, &cls, 1, Continuity::C0).unwrap();
        assert_eq!(s.dof_count(), m.n_vertices());
        let s = build_space(&m, &cls, 2, Continuity::Dg).unwrap();
        assert_eq!(s.dof_count(), 6 * m.n_elements());

        let (m, cls) = disk_setup(10);
        let s = build_space(&m, &cls, 1, Continuity::C0).unwrap();
        let mut verts = std::collections::BTreeSet::new();
        for k in 0..m.n_elements() {
            if cls.element_tag[k] == CellTag::Side0 {
                verts.extend(m.element(k).iter().copied());
            }
        }
        assert_eq!(s.dof_count(), verts.len());
    }

    #[test]
    fn extension_preserves_linear_functions() {
        let (m, cls) = disk_setup(10);
        let s = build_space(&m, &cls, 2, Continuity::C0).unwrap();
        let c = s.interpolate(|_, x| x[0] + x[1]);
        for k in cls.cut_elements() {
            for x in m.element_points(k) {
                let (v, g) = s.evaluate(&c, k, 0, &x).unwrap();
                assert!((v - (x[0] + x[1])).abs() < 1e-12);
                assert!((g[0] - 1.0).abs() < 1e-11 && (g[1] - 1.0).abs() < 1e-11);
            }
        }
        assert!(s.interpolate(|_, _| 0.0).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn unassigned_hosts_are_rejected() {
        let m = build_structured_mesh(&BoxDomain::square(-1.0, 1.0).unwrap(), 10).unwrap();
        let ls = LevelSet::new(2, "circle", |x| x[0] * x[0] + x[1] * x[1] - 0.49);
        let cls = classify(&m, &ls, Mode::Boundary).unwrap();
        assert!(matches!(
            build_space(&m, &cls, 1, Continuity::C0),
            Err(Error::MissingHost { .. })
        ));
    }
}
