//! Unfitted finite elements by direct extension.
//!
//! Degrees of freedom live only on elements that are not cut by the
//! boundary (or interface). A cut element evaluates the polynomial of a
//! nearby interior "host" element, so the discrete space carries no
//! small-cut instability. Dirichlet and jump conditions are imposed weakly
//! with Nitsche / interior-penalty terms.
//!
//! Pipeline: [`mesh`] → [`geometry`] (classify, hosts) → [`xspace`] →
//! [`assembly`] (quadrature from [`cutquad`]) → [`linalg`] → [`study`].

pub mod assembly;
pub mod cutquad;
pub mod error;
pub mod geometry;
pub mod linalg;
pub mod mesh;
pub mod study;
pub mod xspace;

pub use error::{Error, Result};

/// Points and vectors are stored with three components; the trailing
/// component is zero in two dimensions.
pub type Point = [f64; 3];

#[inline]
pub(crate) fn dot(a: &Point, b: &Point) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
pub(crate) fn sub(a: &Point, b: &Point) -> Point {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
pub(crate) fn norm(a: &Point) -> f64 {
    dot(a, a).sqrt()
}
