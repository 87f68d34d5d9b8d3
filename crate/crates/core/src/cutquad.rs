//! Quadrature on cut simplices.
//!
//! Cut volumes and faces are integrated by recursive uniform subdivision:
//! one-signed leaves receive the standard mapped rule, mixed leaves at the
//! maximum depth are clipped against the linear interpolant of φ and the
//! clipped polytope is triangulated exactly. Interface rules place the
//! reference rule on the linearised zero set of each mixed leaf and project
//! the nodes onto {φ = 0} with Newton's method.

use std::sync::OnceLock;

use crate::geometry::{barycentric_lattice, lattice_point, LevelSet};
use crate::{dot, sub, Error, Point, Result};

pub const MAX_RULE_DEGREE: usize = 10;
const NEWTON_MAX_STEPS: usize = 20;
const NEWTON_TOL: f64 = 1e-13;
const TOP_LEVEL_SAMPLE_ORDER: usize = 8;

/// Which side of Γ to integrate over: `Neg` is Ω₀ = {φ < 0}.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Neg,
    Pos,
}

impl Side {
    pub fn from_index(i: usize) -> Side {
        if i == 0 {
            Side::Neg
        } else {
            Side::Pos
        }
    }

    fn sign(self) -> f64 {
        match self {
            Side::Neg => 1.0,
            Side::Pos => -1.0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct QuadRule {
    pub nodes: Vec<Point>,
    pub weights: Vec<f64>,
    /// Unit normals ∇φ/|∇φ| (surface rules only).
    pub normals: Option<Vec<Point>>,
    pub degree: usize,
}

impl QuadRule {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn total_weight(&self) -> f64 {
        self.weights.iter().sum()
    }

    pub fn integrate(&self, f: impl Fn(&Point) -> f64) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(x, w)| w * f(x))
            .sum()
    }

    fn push(&mut self, x: Point, w: f64) -> Result<()> {
        if !(w > 0.0) {
            return Err(Error::NonpositiveWeight { weight: w });
        }
        self.nodes.push(x);
        self.weights.push(w);
        Ok(())
    }
}

/// Gauss–Legendre nodes and weights on `[0, 1]`.
pub fn gauss_legendre(q: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; q];
    let mut w = vec![0.0; q];
    for i in 0..q {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (q as f64 + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=q {
                let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let p = if q == 0 {
                1.0
            } else if q == 1 {
                z
            } else {
                p1
            };
            let pm1 = if q == 1 { 1.0 } else { p0 };
            dp = q as f64 * (z * p - pm1) / (z * z - 1.0);
            let dz = p / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        x[q - 1 - i] = 0.5 * (z + 1.0);
        w[q - 1 - i] = 1.0 / ((1.0 - z * z) * dp * dp);
    }
    (x, w)
}

fn build_reference_rule(k: usize, degree: usize) -> QuadRule {
    let fact = [1.0, 1.0, 2.0, 6.0][k];
    if degree <= 1 {
        let mut c = [0.0; 3];
        for v in c.iter_mut().take(k) {
            *v = 1.0 / (k as f64 + 1.0);
        }
        return QuadRule {
            nodes: vec![c],
            weights: vec![1.0 / fact],
            normals: None,
            degree: 1,
        };
    }
    let points = |extra: usize| (degree + extra).div_ceil(2).max(1);
    let mut rule = QuadRule {
        degree,
        ..Default::default()
    };
    match k {
        1 => {
            let (x, w) = gauss_legendre(points(1));
            for (xi, wi) in x.iter().zip(&w) {
                rule.nodes.push([*xi, 0.0, 0.0]);
                rule.weights.push(*wi);
            }
        }
        2 => {
            let (xu, wu) = gauss_legendre(points(2));
            let (xv, wv) = gauss_legendre(points(1));
            for (u, a) in xu.iter().zip(&wu) {
                for (v, b) in xv.iter().zip(&wv) {
                    rule.nodes.push([*u, v * (1.0 - u), 0.0]);
                    rule.weights.push(a * b * (1.0 - u));
                }
            }
        }
        _ => {
            let (xu, wu) = gauss_legendre(points(3));
            let (xv, wv) = gauss_legendre(points(2));
            let (xw, ww) = gauss_legendre(points(1));
            for (u, a) in xu.iter().zip(&wu) {
                for (v, b) in xv.iter().zip(&wv) {
                    for (t, c) in xw.iter().zip(&ww) {
                        rule.nodes
                            .push([*u, v * (1.0 - u), t * (1.0 - u) * (1.0 - v)]);
                        rule.weights
                            .push(a * b * c * (1.0 - u) * (1.0 - u) * (1.0 - v));
                    }
                }
            }
        }
    }
    rule
}

fn reference_rule(k: usize, degree: usize) -> Result<&'static QuadRule> {
    static RULES: OnceLock<Vec<Vec<QuadRule>>> = OnceLock::new();
    if degree > MAX_RULE_DEGREE {
        return Err(Error::UnsupportedDegree(degree));
    }
    if !(1..=3).contains(&k) {
        return Err(Error::InvalidArgument(format!(
            "simplex dimension {k} not in 1..=3"
        )));
    }
    let table = RULES.get_or_init(|| {
        (0..=3)
            .map(|k| {
                (0..=MAX_RULE_DEGREE)
                    .map(|d| {
                        if k == 0 {
                            QuadRule::default()
                        } else {
                            build_reference_rule(k, d)
                        }
                    })
                    .collect()
            })
            .collect()
    });
    Ok(&table[k][degree.max(1)])
}

/// Positive-weight rule on the unit `dim`-simplex exact for polynomials of
/// total degree `degree` (collapsed Gauss–Legendre; the centroid rule for
/// degree 1).
pub fn reference_simplex_rule(dim: usize, degree: usize) -> Result<QuadRule> {
    if degree == 0 {
        return Err(Error::InvalidArgument(
            "quadrature degree must be at least 1".into(),
        ));
    }
    reference_rule(dim, degree).cloned()
}

/// `sqrt(det(JᵀJ))` for the simplex spanned by `pts` (`k! × measure`).
fn simplex_scale(pts: &[Point]) -> f64 {
    let k = pts.len() - 1;
    let e: Vec<Point> = (1..=k).map(|i| sub(&pts[i], &pts[0])).collect();
    let g = |i: usize, j: usize| dot(&e[i], &e[j]);
    let det = match k {
        1 => g(0, 0),
        2 => g(0, 0) * g(1, 1) - g(0, 1) * g(0, 1),
        _ => {
            // 3-simplex: |det[e0 e1 e2]|² is better conditioned than the Gram form
            let d = e[0][0] * (e[1][1] * e[2][2] - e[1][2] * e[2][1])
                - e[0][1] * (e[1][0] * e[2][2] - e[1][2] * e[2][0])
                + e[0][2] * (e[1][0] * e[2][1] - e[1][1] * e[2][0]);
            d * d
        }
    };
    det.max(0.0).sqrt()
}

/// Measure of the simplex spanned by `pts`.
pub fn simplex_measure(pts: &[Point]) -> f64 {
    let fact = [1.0, 1.0, 2.0, 6.0][pts.len() - 1];
    simplex_scale(pts) / fact
}

fn add_mapped(out: &mut QuadRule, pts: &[Point], reference: &QuadRule) -> Result<()> {
    let scale = simplex_scale(pts);
    if scale == 0.0 {
        return Ok(());
    }
    if !scale.is_finite() {
        return Err(Error::NonpositiveWeight { weight: scale });
    }
    let k = pts.len() - 1;
    for (xi, w) in reference.nodes.iter().zip(&reference.weights) {
        let mut x = pts[0];
        for c in 0..k {
            let e = sub(&pts[c + 1], &pts[0]);
            for d in 0..3 {
                x[d] += xi[c] * e[d];
            }
        }
        out.push(x, w * scale)?;
    }
    Ok(())
}

/// Standard rule of the given degree mapped onto the simplex `pts`.
pub fn mapped_rule(pts: &[Point], degree: usize) -> Result<QuadRule> {
    let reference = reference_rule(pts.len() - 1, degree)?;
    let mut out = QuadRule {
        degree: reference.degree,
        ..Default::default()
    };
    add_mapped(&mut out, pts, reference)?;
    Ok(out)
}

fn local_eps(values: &[f64]) -> f64 {
    1e-12 * values.iter().fold(1.0f64, |m, v| m.max(v.abs()))
}

#[inline]
fn lerp(a: &Point, b: &Point, t: f64) -> Point {
    [
        a[0] + t * (b[0] - a[0]),
        a[1] + t * (b[1] - a[1]),
        a[2] + t * (b[2] - a[2]),
    ]
}

#[inline]
fn midpoint(a: &Point, b: &Point) -> Point {
    lerp(a, b, 0.5)
}

/// Crossing of the linear interpolant on the edge from `a` (σ ≤ 0) to `b` (σ > 0).
#[inline]
fn crossing(a: &Point, sa: f64, b: &Point, sb: f64) -> Point {
    lerp(a, b, sa / (sa - sb))
}

const EDGES: [[(usize, usize); 6]; 4] = [
    [(0, 0); 6],
    [(0, 1), (0, 0), (0, 0), (0, 0), (0, 0), (0, 0)],
    [(0, 1), (0, 2), (1, 2), (0, 0), (0, 0), (0, 0)],
    [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)],
];

/// Children of the uniform refinement, as indices into
/// `[vertices..., edge midpoints in EDGES order]`.
fn children(k: usize) -> &'static [&'static [usize]] {
    match k {
        1 => &[&[0, 2], &[2, 1]],
        2 => &[&[0, 3, 4], &[3, 1, 5], &[4, 5, 2], &[3, 5, 4]],
        _ => &[
            &[0, 4, 5, 6],
            &[4, 1, 7, 8],
            &[5, 7, 2, 9],
            &[6, 8, 9, 3],
            &[4, 5, 6, 8],
            &[4, 5, 7, 8],
            &[5, 6, 8, 9],
            &[5, 7, 8, 9],
        ],
    }
}

/// Sub-simplices of `{σ ≤ 0}` for the linear interpolant of `sigma` on `pts`.
fn clip_simplex(pts: &[Point], sigma: &[f64]) -> Vec<Vec<Point>> {
    let k = pts.len() - 1;
    let inside: Vec<usize> = (0..=k).filter(|&i| sigma[i] <= 0.0).collect();
    let outside: Vec<usize> = (0..=k).filter(|&i| sigma[i] > 0.0).collect();
    if outside.is_empty() {
        return vec![pts.to_vec()];
    }
    if inside.is_empty() {
        return Vec::new();
    }
    let cut = |i: usize, o: usize| crossing(&pts[i], sigma[i], &pts[o], sigma[o]);
    match k {
        1 => vec![vec![pts[inside[0]], cut(inside[0], outside[0])]],
        2 => {
            let mut poly = Vec::with_capacity(4);
            for i in 0..3 {
                let j = (i + 1) % 3;
                let (si, sj) = (sigma[i] <= 0.0, sigma[j] <= 0.0);
                if si {
                    poly.push(pts[i]);
                }
                if si != sj {
                    poly.push(if si { cut(i, j) } else { cut(j, i) });
                }
            }
            (1..poly.len() - 1)
                .map(|t| vec![poly[0], poly[t], poly[t + 1]])
                .collect()
        }
        _ => match inside.len() {
            1 => {
                let a = inside[0];
                vec![vec![
                    pts[a],
                    cut(a, outside[0]),
                    cut(a, outside[1]),
                    cut(a, outside[2]),
                ]]
            }
            2 => {
                let (a, b) = (inside[0], inside[1]);
                let (c, d) = (outside[0], outside[1]);
                prism(pts[a], cut(a, c), cut(a, d), pts[b], cut(b, c), cut(b, d))
            }
            _ => {
                let d = outside[0];
                let (a, b, c) = (inside[0], inside[1], inside[2]);
                prism(pts[a], pts[b], pts[c], cut(a, d), cut(b, d), cut(c, d))
            }
        },
    }
}

/// Three tetrahedra filling the prism with bottom `(a, b, c)` and top `(a2, b2, c2)`.
fn prism(a: Point, b: Point, c: Point, a2: Point, b2: Point, c2: Point) -> Vec<Vec<Point>> {
    vec![vec![a, b, c, a2], vec![b, c, a2, b2], vec![c, a2, b2, c2]]
}

/// Pieces (as simplices one dimension down) of the zero set of the linear
/// interpolant of `sigma` on `pts`.
fn zero_set(pts: &[Point], sigma: &[f64]) -> Vec<Vec<Point>> {
    let k = pts.len() - 1;
    let inside: Vec<usize> = (0..=k).filter(|&i| sigma[i] <= 0.0).collect();
    let outside: Vec<usize> = (0..=k).filter(|&i| sigma[i] > 0.0).collect();
    if inside.is_empty() || outside.is_empty() {
        return Vec::new();
    }
    let cut = |i: usize, o: usize| crossing(&pts[i], sigma[i], &pts[o], sigma[o]);
    match k {
        1 => vec![vec![cut(inside[0], outside[0])]],
        2 => {
            let mut seg = Vec::with_capacity(2);
            for &i in &inside {
                for &o in &outside {
                    seg.push(cut(i, o));
                }
            }
            vec![seg]
        }
        _ => match inside.len() {
            1 => vec![outside.iter().map(|&o| cut(inside[0], o)).collect()],
            3 => vec![inside.iter().map(|&i| cut(i, outside[0])).collect()],
            _ => {
                let (a, b) = (inside[0], inside[1]);
                let (c, d) = (outside[0], outside[1]);
                let (p_ac, p_ad, p_bd, p_bc) = (cut(a, c), cut(a, d), cut(b, d), cut(b, c));
                vec![vec![p_ac, p_ad, p_bd], vec![p_ac, p_bd, p_bc]]
            }
        },
    }
}

/// What a recursion leaf contributes.
#[derive(Clone, Copy)]
enum Target {
    Volume,
    Surface,
}

struct Recursion<'a> {
    ls: &'a LevelSet,
    sign: f64,
    eps: f64,
    depth: usize,
    target: Target,
    reference: &'static QuadRule,
    surface_reference: Option<&'static QuadRule>,
    project: bool,
    out: QuadRule,
    normals: Vec<Point>,
}

impl Recursion<'_> {
    fn run(&mut self, pts: &[Point], sigma: &[f64], level: usize) -> Result<()> {
        let k = pts.len() - 1;
        let edges = &EDGES[k][..k * (k + 1) / 2];
        let mut all_pts: Vec<Point> = pts.to_vec();
        let mut all_sigma: Vec<f64> = sigma.to_vec();
        for &(i, j) in edges {
            let m = midpoint(&pts[i], &pts[j]);
            all_sigma.push(self.sign * self.ls.value(&m));
            all_pts.push(m);
        }
        let any_out = all_sigma.iter().any(|&s| s > self.eps);
        let any_in = all_sigma.iter().any(|&s| s < -self.eps);
        if !(any_out && any_in) {
            match self.target {
                Target::Volume => {
                    if !any_out {
                        add_mapped(&mut self.out, pts, self.reference)?;
                    }
                }
                Target::Surface => {
                    // Γ along a whole facet is owned by the leaf on the positive side
                    let zeros = sigma.iter().filter(|s| s.abs() <= self.eps).count();
                    if zeros == k && any_out {
                        return self.leaf(pts, sigma);
                    }
                }
            }
            return Ok(());
        }
        if level >= self.depth {
            return self.leaf(pts, sigma);
        }
        for child in children(k) {
            let cp: Vec<Point> = child.iter().map(|&i| all_pts[i]).collect();
            let cs: Vec<f64> = child.iter().map(|&i| all_sigma[i]).collect();
            self.run(&cp, &cs, level + 1)?;
        }
        Ok(())
    }

    fn leaf(&mut self, pts: &[Point], sigma: &[f64]) -> Result<()> {
        match self.target {
            Target::Volume => {
                for piece in clip_simplex(pts, sigma) {
                    add_mapped(&mut self.out, &piece, self.reference)?;
                }
            }
            Target::Surface => {
                let reference = self.surface_reference.expect("surface rule");
                let snapped: Vec<f64> = sigma
                    .iter()
                    .map(|&s| if s.abs() <= self.eps { 0.0 } else { s })
                    .collect();
                let chord = if self.project {
                    None
                } else {
                    Some(linear_normal(pts, sigma, self.sign))
                };
                for piece in zero_set(pts, &snapped) {
                    let start = self.out.len();
                    if piece.len() == 1 {
                        // zero set of a segment is a point: unit weight
                        self.out.push(piece[0], 1.0)?;
                    } else {
                        add_mapped(&mut self.out, &piece, reference)?;
                    }
                    if let Some(n) = chord {
                        self.normals
                            .extend(std::iter::repeat(n).take(self.out.len() - start));
                        continue;
                    }
                    for q in start..self.out.len() {
                        let x = project_to_zero(self.ls, &self.out.nodes[q])?;
                        self.out.nodes[q] = x;
                        self.normals.push(self.ls.normal(&x));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Unit gradient of the linear interpolant of `sign * sigma` on a 2- or
/// 3-simplex of full dimension.
fn linear_normal(pts: &[Point], sigma: &[f64], sign: f64) -> Point {
    let k = pts.len() - 1;
    let mut jac = nalgebra::DMatrix::<f64>::zeros(k, k);
    let mut rhs = nalgebra::DVector::<f64>::zeros(k);
    for i in 0..k {
        for d in 0..k {
            jac[(i, d)] = pts[i + 1][d] - pts[0][d];
        }
        rhs[i] = sign * (sigma[i + 1] - sigma[0]);
    }
    let g = jac
        .lu()
        .solve(&rhs)
        .unwrap_or_else(|| nalgebra::DVector::zeros(k));
    let mut n = [0.0; 3];
    for d in 0..k {
        n[d] = g[d];
    }
    let len = crate::norm(&n);
    if len > 0.0 {
        n.iter_mut().for_each(|c| *c /= len);
    }
    n
}

/// Newton projection of `x` onto {φ = 0} along ∇φ.
pub fn project_to_zero(ls: &LevelSet, x: &Point) -> Result<Point> {
    let mut y = *x;
    let mut last = f64::INFINITY;
    for _ in 0..NEWTON_MAX_STEPS {
        let v = ls.value(&y);
        if v == 0.0 {
            return Ok(y);
        }
        let g = ls.gradient(&y);
        let gg = dot(&g, &g);
        if !(gg > 0.0) {
            break;
        }
        let t = v / gg;
        let step = [t * g[0], t * g[1], t * g[2]];
        for d in 0..3 {
            y[d] -= step[d];
        }
        last = dot(&step, &step).sqrt();
        if last <= NEWTON_TOL * (1.0 + crate::norm(&y)) {
            return Ok(y);
        }
    }
    Err(Error::ProjectionFailure {
        point: *x,
        residual: last,
    })
}

fn top_level_mixed(pts: &[Point], ls: &LevelSet, sign: f64, eps: f64) -> (bool, bool) {
    let k = pts.len() - 1;
    let (mut any_in, mut any_out) = (false, false);
    for a in barycentric_lattice(k, TOP_LEVEL_SAMPLE_ORDER) {
        let s = sign * ls.value(&lattice_point(pts, &a, TOP_LEVEL_SAMPLE_ORDER));
        any_in |= s < -eps;
        any_out |= s > eps;
    }
    (any_in, any_out)
}

fn subdivision_rule(
    pts: &[Point],
    ls: &LevelSet,
    side: Side,
    degree: usize,
    depth: usize,
    target: Target,
    project: bool,
) -> Result<QuadRule> {
    let k = pts.len() - 1;
    let phi: Vec<f64> = pts.iter().map(|x| ls.value(x)).collect();
    let eps = local_eps(&phi);
    let sign = side.sign();
    let sigma: Vec<f64> = phi.iter().map(|v| sign * v).collect();
    let reference = reference_rule(k, degree)?;
    let surface_reference = if k >= 2 {
        Some(reference_rule(k - 1, degree)?)
    } else {
        None
    };
    let (any_in, any_out) = top_level_mixed(pts, ls, sign, eps);
    let mut rec = Recursion {
        ls,
        sign,
        eps,
        depth,
        target,
        reference,
        surface_reference,
        project,
        out: QuadRule {
            degree: reference.degree,
            ..Default::default()
        },
        normals: Vec::new(),
    };
    if !(any_in && any_out) {
        if let Target::Volume = target {
            if !any_out {
                add_mapped(&mut rec.out, pts, reference)?;
            }
        }
        return Ok(finish(rec, target));
    }
    if depth == 0 {
        rec.leaf(pts, &sigma)?;
    } else {
        // the top level is known to be mixed: always refine once
        let edges = &EDGES[k][..k * (k + 1) / 2];
        let mut all_pts: Vec<Point> = pts.to_vec();
        let mut all_sigma = sigma.clone();
        for &(i, j) in edges {
            let m = midpoint(&pts[i], &pts[j]);
            all_sigma.push(sign * ls.value(&m));
            all_pts.push(m);
        }
        for child in children(k) {
            let cp: Vec<Point> = child.iter().map(|&i| all_pts[i]).collect();
            let cs: Vec<f64> = child.iter().map(|&i| all_sigma[i]).collect();
            rec.run(&cp, &cs, 1)?;
        }
    }
    Ok(finish(rec, target))
}

fn finish(rec: Recursion<'_>, target: Target) -> QuadRule {
    let mut out = rec.out;
    if let Target::Surface = target {
        out.normals = Some(rec.normals);
    }
    out
}

/// Rule over `K ∩ Ω_side` for the simplex `pts` (`dim + 1` vertices).
pub fn cut_volume_rule(
    pts: &[Point],
    ls: &LevelSet,
    side: Side,
    degree: usize,
    depth: usize,
) -> Result<QuadRule> {
    subdivision_rule(pts, ls, side, degree, depth, Target::Volume, true)
}

/// Rule over `Γ ∩ K` with unit normals ∇φ/|∇φ| (pointing into Ω₁).
pub fn cut_surface_rule(
    pts: &[Point],
    ls: &LevelSet,
    degree: usize,
    depth: usize,
) -> Result<QuadRule> {
    if pts.len() < 3 {
        return Err(Error::InvalidArgument(
            "surface rules need a 2- or 3-simplex".into(),
        ));
    }
    subdivision_rule(pts, ls, Side::Neg, degree, depth, Target::Surface, true)
}

/// As [`cut_surface_rule`], but the nodes stay on the linearised zero set and
/// carry its normals, so the rule integrates exactly over the polygonal
/// interface seen by [`cut_volume_rule`].
pub fn cut_surface_rule_polygonal(
    pts: &[Point],
    ls: &LevelSet,
    degree: usize,
    depth: usize,
) -> Result<QuadRule> {
    if pts.len() < 3 {
        return Err(Error::InvalidArgument(
            "surface rules need a 2- or 3-simplex".into(),
        ));
    }
    subdivision_rule(pts, ls, Side::Neg, degree, depth, Target::Surface, false)
}

/// Face rule matching the clipping of [`cut_volume_rule`]: crossings are the
/// roots of the linear interpolant on the finest mixed sub-segments.
pub fn cut_face_rule_polygonal(
    pts: &[Point],
    ls: &LevelSet,
    side: Side,
    degree: usize,
    depth: usize,
) -> Result<QuadRule> {
    subdivision_rule(pts, ls, side, degree, depth, Target::Volume, true)
}

/// Rule over `e ∩ Ω_side` for the face `pts` (`dim` vertices).
///
/// Edges (2D) are bracketed on a uniform sampling and the single root is
/// bisected; a sampled sign change count above one is an error. Triangular
/// faces (3D) reuse the subdivision machinery.
pub fn cut_face_rule(
    pts: &[Point],
    ls: &LevelSet,
    side: Side,
    degree: usize,
    depth: usize,
) -> Result<QuadRule> {
    face_rule(pts, ls, side, degree, depth, false)
}

/// As [`cut_face_rule`], but an edge crossed several times is split at every
/// bracketed root instead of being rejected.
pub fn cut_face_rule_multi(
    pts: &[Point],
    ls: &LevelSet,
    side: Side,
    degree: usize,
    depth: usize,
) -> Result<QuadRule> {
    face_rule(pts, ls, side, degree, depth, true)
}

fn face_rule(
    pts: &[Point],
    ls: &LevelSet,
    side: Side,
    degree: usize,
    depth: usize,
    multi: bool,
) -> Result<QuadRule> {
    if pts.len() != 2 {
        return subdivision_rule(pts, ls, side, degree, depth, Target::Volume, true);
    }
    let (a, b) = (pts[0], pts[1]);
    let intervals = (1usize << depth.min(12)).max(16);
    let values: Vec<f64> = (0..=intervals)
        .map(|i| ls.value(&lerp(&a, &b, i as f64 / intervals as f64)))
        .collect();
    let eps = local_eps(&[values[0], values[intervals]]);
    let sgn = |v: f64| {
        if v > eps {
            1i8
        } else if v < -eps {
            -1
        } else {
            0
        }
    };
    let mut changes = Vec::new();
    let mut last: Option<(usize, i8)> = None;
    for (i, &v) in values.iter().enumerate() {
        let s = sgn(v);
        if s == 0 {
            continue;
        }
        if let Some((j, t)) = last {
            if t != s {
                changes.push((j, i));
            }
        }
        last = Some((i, s));
    }
    if changes.len() > 1 && !multi {
        return Err(Error::MultipleCrossings {
            crossings: changes.len(),
        });
    }
    let keep_sign: i8 = if side == Side::Neg { -1 } else { 1 };
    let Some(&(first, _)) = changes.first() else {
        let s = last.map(|(_, s)| s).unwrap_or(-1);
        return if s == keep_sign {
            mapped_rule(pts, degree)
        } else {
            Ok(QuadRule {
                degree,
                ..Default::default()
            })
        };
    };
    let len = crate::norm(&sub(&b, &a));
    let bisect = |i0: usize, i1: usize| -> f64 {
        let (mut lo, mut hi) = (i0 as f64 / intervals as f64, i1 as f64 / intervals as f64);
        let s_lo = sgn(values[i0]);
        while (hi - lo) * len > 1e-13 * len {
            let mid = 0.5 * (lo + hi);
            let v = ls.value(&lerp(&a, &b, mid));
            if v == 0.0 {
                return mid;
            }
            if sgn(v) == s_lo || (v < 0.0) == (s_lo < 0) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    };
    // parameters of the sub-segment ends, alternating in sign
    let mut cuts = vec![0.0];
    cuts.extend(changes.iter().map(|&(i0, i1)| bisect(i0, i1)));
    cuts.push(1.0);
    let mut sign = sgn(values[first]);
    let mut rule = QuadRule {
        degree,
        ..Default::default()
    };
    for w in cuts.windows(2) {
        if sign == keep_sign && w[1] > w[0] {
            let piece = mapped_rule(&[lerp(&a, &b, w[0]), lerp(&a, &b, w[1])], degree)?;
            rule.nodes.extend(piece.nodes);
            rule.weights.extend(piece.weights);
        }
        sign = -sign;
    }
    Ok(rule)
}
