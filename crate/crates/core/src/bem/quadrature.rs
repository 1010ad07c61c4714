//! Element integration for collocation BEM.
//!
//! Regular integrals use a 6-point degree-4 Gauss rule. When the
//! collocation point comes within `near_threshold` element diameters, the
//! triangle is split recursively toward the point (children far from the
//! point fall back to the Gauss rule immediately). The singular self term
//! of the single layer is integrated exactly by splitting the element at
//! the collocation point and integrating 1/r in polar form per vertex
//! triangle; the double-layer self term of a flat element is zero.

use crate::error::{Error, Result};
use crate::kernel::{double_layer_value, single_layer_value, Layer, INV_4PI};
use nalgebra::{Point3, Vector3};

/// Gauss rule on the reference triangle plus near-singularity controls.
#[derive(Debug, Clone)]
pub struct ElementQuadrature {
    /// Reference coordinates (a, b) with the triangle (0,0), (1,0), (0,1).
    pub points: Vec<(f64, f64)>,
    /// Weights summing to the reference-triangle area 1/2.
    pub weights: Vec<f64>,
    /// Subdivide while dist(x, triangle) < near_threshold * diameter.
    pub near_threshold: f64,
    pub max_subdiv_depth: usize,
}

impl Default for ElementQuadrature {
    fn default() -> Self {
        // Dunavant degree-4 rule, 6 points, weights normalized to 1/2.
        let a1 = 0.445948490915965;
        let w1 = 0.223381589678011 / 2.0;
        let a2 = 0.091576213509771;
        let w2 = 0.109951743655322 / 2.0;
        let points = vec![
            (a1, a1),
            (1.0 - 2.0 * a1, a1),
            (a1, 1.0 - 2.0 * a1),
            (a2, a2),
            (1.0 - 2.0 * a2, a2),
            (a2, 1.0 - 2.0 * a2),
        ];
        let weights = vec![w1, w1, w1, w2, w2, w2];
        Self {
            points,
            weights,
            near_threshold: 2.0,
            max_subdiv_depth: 10,
        }
    }
}

impl ElementQuadrature {
    pub fn validate(&self) -> Result<()> {
        if self.points.len() != self.weights.len() {
            return Err(Error::Config("quadrature points/weights mismatch".into()));
        }
        if self.weights.iter().any(|&w| w <= 0.0) {
            return Err(Error::Config("quadrature weights must be positive".into()));
        }
        let total: f64 = self.weights.iter().sum();
        if (total - 0.5).abs() > 1e-12 {
            return Err(Error::Config(format!(
                "quadrature weights sum to {total}, expected reference area 0.5"
            )));
        }
        Ok(())
    }
}

/// One flat triangle with the data element integration needs.
#[derive(Debug, Clone, Copy)]
pub struct Element {
    pub v0: Point3<f64>,
    pub v1: Point3<f64>,
    pub v2: Point3<f64>,
    pub normal: Vector3<f64>,
    pub centroid: Point3<f64>,
}

impl Element {
    pub fn new(v0: Point3<f64>, v1: Point3<f64>, v2: Point3<f64>) -> Self {
        let cross = (v1 - v0).cross(&(v2 - v0));
        Self {
            v0,
            v1,
            v2,
            normal: cross.normalize(),
            centroid: Point3::from((v0.coords + v1.coords + v2.coords) / 3.0),
        }
    }

    pub fn from_mesh(mesh: &super::TriMesh, element: usize) -> Self {
        let tri = mesh.triangles[element];
        Self {
            v0: mesh.vertices[tri[0]],
            v1: mesh.vertices[tri[1]],
            v2: mesh.vertices[tri[2]],
            normal: mesh.normals[element],
            centroid: mesh.centroids[element],
        }
    }

    pub fn area(&self) -> f64 {
        0.5 * (self.v1 - self.v0).cross(&(self.v2 - self.v0)).norm()
    }

    pub fn diameter(&self) -> f64 {
        (self.v0 - self.v1)
            .norm()
            .max((self.v1 - self.v2).norm())
            .max((self.v2 - self.v0).norm())
    }
}

/// Integral of the kernel over the element with constant unit density.
///
/// Collocation at the element's own centroid takes the exact singular
/// path; otherwise the integral is evaluated adaptively.
pub fn element_integral(
    element: &Element,
    x: &Point3<f64>,
    layer: Layer,
    quad: &ElementQuadrature,
) -> f64 {
    let diam = element.diameter();
    if (x - element.centroid).norm() <= 1e-12 * diam {
        return match layer {
            // Exact flat-triangle potential of a constant density.
            Layer::Single => singular_self_integral(element, x),
            // (x - y) . n vanishes identically on the element's own plane.
            Layer::Double => 0.0,
        };
    }
    adaptive(
        element.v0,
        element.v1,
        element.v2,
        &element.normal,
        x,
        layer,
        quad,
        0,
    )
}

#[allow(clippy::too_many_arguments)]
fn adaptive(
    v0: Point3<f64>,
    v1: Point3<f64>,
    v2: Point3<f64>,
    normal: &Vector3<f64>,
    x: &Point3<f64>,
    layer: Layer,
    quad: &ElementQuadrature,
    depth: usize,
) -> f64 {
    let diam = (v0 - v1)
        .norm()
        .max((v1 - v2).norm())
        .max((v2 - v0).norm());
    let dist = point_triangle_distance(x, &v0, &v1, &v2);
    if dist > quad.near_threshold * diam {
        return gauss_rule(&v0, &v1, &v2, normal, x, layer, quad);
    }
    if depth >= quad.max_subdiv_depth {
        log::warn!(
            "near-singular subdivision depth cap {} reached (dist/diam = {:.3e}); \
             returning best estimate",
            quad.max_subdiv_depth,
            dist / diam
        );
        return gauss_rule(&v0, &v1, &v2, normal, x, layer, quad);
    }
    let m01 = Point3::from((v0.coords + v1.coords) * 0.5);
    let m12 = Point3::from((v1.coords + v2.coords) * 0.5);
    let m20 = Point3::from((v2.coords + v0.coords) * 0.5);
    adaptive(v0, m01, m20, normal, x, layer, quad, depth + 1)
        + adaptive(v1, m12, m01, normal, x, layer, quad, depth + 1)
        + adaptive(v2, m20, m12, normal, x, layer, quad, depth + 1)
        + adaptive(m01, m12, m20, normal, x, layer, quad, depth + 1)
}

fn gauss_rule(
    v0: &Point3<f64>,
    v1: &Point3<f64>,
    v2: &Point3<f64>,
    normal: &Vector3<f64>,
    x: &Point3<f64>,
    layer: Layer,
    quad: &ElementQuadrature,
) -> f64 {
    let e1 = v1 - v0;
    let e2 = v2 - v0;
    let jacobian = e1.cross(&e2).norm(); // = 2 * area
    let mut sum = 0.0;
    for (&(a, b), &w) in quad.points.iter().zip(&quad.weights) {
        let y = Point3::from(v0.coords + e1 * a + e2 * b);
        let f = match layer {
            Layer::Single => single_layer_value(x, &y),
            Layer::Double => double_layer_value(x, &y, normal),
        };
        sum += w * f;
    }
    sum * jacobian
}

/// Exact integral of 1/(4 pi r) over the element for x strictly inside it:
/// split at x and integrate each vertex triangle in polar coordinates.
fn singular_self_integral(element: &Element, x: &Point3<f64>) -> f64 {
    let pieces = [
        (element.v0, element.v1),
        (element.v1, element.v2),
        (element.v2, element.v0),
    ];
    let mut total = 0.0;
    for (a, b) in pieces {
        total += vertex_polar_integral(x, &a, &b);
    }
    total * INV_4PI
}

/// Integral of 1/|y - o| over the triangle (o, a, b).
///
/// In polar coordinates around `o` the radial integral is exact and the
/// angular one reduces to d * (asinh(s_b/d) - asinh(s_a/d)) with d the
/// distance from `o` to the line ab and s the signed foot offsets.
fn vertex_polar_integral(o: &Point3<f64>, a: &Point3<f64>, b: &Point3<f64>) -> f64 {
    let edge = b - a;
    let len = edge.norm();
    if len == 0.0 {
        return 0.0;
    }
    let dir = edge / len;
    let ao = o - a;
    let foot = a + dir * ao.dot(&dir);
    let d = (o - foot).norm();
    if d == 0.0 {
        // o on the line ab: degenerate sliver contributes nothing.
        return 0.0;
    }
    let s_a = (a - foot).dot(&dir);
    let s_b = (b - foot).dot(&dir);
    d * ((s_b / d).asinh() - (s_a / d).asinh())
}

/// Distance from a point to a (filled) triangle.
pub fn point_triangle_distance(
    p: &Point3<f64>,
    a: &Point3<f64>,
    b: &Point3<f64>,
    c: &Point3<f64>,
) -> f64 {
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return ap.norm();
    }
    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return bp.norm();
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let v = d1 / (d1 - d3);
        return (ap - ab * v).norm();
    }
    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return cp.norm();
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let w = d2 / (d2 - d6);
        return (ap - ac * w).norm();
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return (bp - (c - b) * w).norm();
    }
    let denom = 1.0 / (va + vb + vc);
    let v = vb * denom;
    let w = vc * denom;
    let closest = a + ab * v + ac * w;
    (p - closest).norm()
}
