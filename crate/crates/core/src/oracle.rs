//! Reference implementations used by tests and the `--check-dense` paths:
//! direct O(N^2) summation, dense BEM assembly and solves, and a
//! deep-subdivision quadrature oracle.
//!
//! The dense BEM matrices share the production quadrature code on purpose:
//! the comparison isolates the FMM approximation, not quadrature
//! differences. The subdivision quadrature oracle is an independent route
//! (adaptive refinement with a Duffy-transformed core) used to validate
//! that shared quadrature.

use crate::bem::quadrature::{point_triangle_distance, Element, ElementQuadrature};
use crate::bem::{BcKind, BoundaryCondition, TriMesh};
use crate::error::{Error, Result};
use crate::kernel::{double_layer_value, single_layer_value, KernelSpec, Layer, COINCIDENCE_REL};
use nalgebra::{DMatrix, DVector, Point3};
use rayon::prelude::*;

/// Size guard for the dense O(N^2)/O(N^3) paths.
pub const DENSE_GUARD: usize = 5000;

/// Exact double loop p_i = sum_{j != i} G(x_i, y_j) q_j.
pub fn direct_sum(points: &[Point3<f64>], q: &[f64], spec: &KernelSpec) -> Result<Vec<f64>> {
    if points.len() != q.len() {
        return Err(Error::LengthMismatch {
            expected: points.len(),
            got: q.len(),
        });
    }
    if spec.needs_normal() {
        return Err(Error::Config(
            "direct_sum evaluates point sources; the double layer needs elements".into(),
        ));
    }
    let diameter = crate::kernel::bounding_diameter(points.iter()).max(f64::MIN_POSITIVE);
    let threshold = COINCIDENCE_REL * diameter;
    points
        .par_iter()
        .enumerate()
        .map(|(i, x)| {
            let mut sum = 0.0;
            for (j, y) in points.iter().enumerate() {
                if i == j {
                    continue;
                }
                if (x - y).norm() < threshold {
                    return Err(Error::CoincidentPoints {
                        target: [x.x, x.y, x.z],
                        source_point: [y.x, y.y, y.z],
                        pair: Some((i, j)),
                    });
                }
                sum += single_layer_value(x, y) * q[j];
            }
            Ok(sum)
        })
        .collect()
}

/// Deep-subdivision quadrature oracle for one element integral.
///
/// Triangles far from `x` relative to their size integrate with a fixed
/// Gauss rule; near ones split in four toward `x` up to `depth`; at the
/// cap, a triangle containing the projection of `x` integrates with a
/// Duffy-transformed tensor rule, which removes the 1/r singularity.
pub fn adaptive_element_integral(
    element: &Element,
    x: &Point3<f64>,
    layer: Layer,
    depth: usize,
) -> f64 {
    let quad = ElementQuadrature::default();
    subdivide(
        element.v0, element.v1, element.v2, element, x, layer, &quad, depth,
    )
}

#[allow(clippy::too_many_arguments)]
fn subdivide(
    v0: Point3<f64>,
    v1: Point3<f64>,
    v2: Point3<f64>,
    element: &Element,
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
    if dist > 4.0 * diam {
        return plain_gauss(&v0, &v1, &v2, element, x, layer, quad);
    }
    if depth == 0 {
        return duffy_integral(&v0, &v1, &v2, element, x, layer);
    }
    let m01 = Point3::from((v0.coords + v1.coords) * 0.5);
    let m12 = Point3::from((v1.coords + v2.coords) * 0.5);
    let m20 = Point3::from((v2.coords + v0.coords) * 0.5);
    subdivide(v0, m01, m20, element, x, layer, quad, depth - 1)
        + subdivide(v1, m12, m01, element, x, layer, quad, depth - 1)
        + subdivide(v2, m20, m12, element, x, layer, quad, depth - 1)
        + subdivide(m01, m12, m20, element, x, layer, quad, depth - 1)
}

fn kernel_value(element: &Element, x: &Point3<f64>, y: &Point3<f64>, layer: Layer) -> f64 {
    match layer {
        Layer::Single => single_layer_value(x, y),
        Layer::Double => double_layer_value(x, y, &element.normal),
    }
}

fn plain_gauss(
    v0: &Point3<f64>,
    v1: &Point3<f64>,
    v2: &Point3<f64>,
    element: &Element,
    x: &Point3<f64>,
    layer: Layer,
    quad: &ElementQuadrature,
) -> f64 {
    let e1 = v1 - v0;
    let e2 = v2 - v0;
    let jacobian = e1.cross(&e2).norm();
    let mut sum = 0.0;
    for (&(a, b), &w) in quad.points.iter().zip(&quad.weights) {
        let y = Point3::from(v0.coords + e1 * a + e2 * b);
        sum += w * kernel_value(element, x, &y, layer);
    }
    sum * jacobian
}

/// Tensor Gauss-Legendre rule through the Duffy map: split the triangle at
/// the projection of `x` and integrate each vertex triangle with the
/// square-to-triangle collapse that cancels the 1/r singularity.
fn duffy_integral(
    v0: &Point3<f64>,
    v1: &Point3<f64>,
    v2: &Point3<f64>,
    element: &Element,
    x: &Point3<f64>,
    layer: Layer,
) -> f64 {
    // Barycentric coordinates of the projection of x onto the plane.
    let e1 = v1 - v0;
    let e2 = v2 - v0;
    let normal = e1.cross(&e2);
    let area2 = normal.norm();
    if area2 == 0.0 {
        return 0.0;
    }
    let n = normal / area2;
    let xp = x - n * (x - v0).dot(&n);

    let d00 = e1.dot(&e1);
    let d01 = e1.dot(&e2);
    let d11 = e2.dot(&e2);
    let dp = xp - *v0;
    let d20 = dp.dot(&e1);
    let d21 = dp.dot(&e2);
    let denom = d00 * d11 - d01 * d01;
    let v = (d11 * d20 - d01 * d21) / denom;
    let w = (d00 * d21 - d01 * d20) / denom;
    let u = 1.0 - v - w;
    let inside = (-1e-9..=1.0 + 1e-9).contains(&u)
        && (-1e-9..=1.0 + 1e-9).contains(&v)
        && (-1e-9..=1.0 + 1e-9).contains(&w);

    let apex = if inside {
        Point3::from(v0.coords + e1 * v + e2 * w)
    } else {
        // Projection outside: the kernel is regular on this triangle; the
        // centroid split still converges (it only steepens the map).
        Point3::from((v0.coords + v1.coords + v2.coords) / 3.0)
    };

    duffy_vertex(&apex, v0, v1, element, x, layer)
        + duffy_vertex(&apex, v1, v2, element, x, layer)
        + duffy_vertex(&apex, v2, v0, element, x, layer)
}

/// Integral over the triangle (apex, a, b) with the singularity at `apex`,
/// via the Duffy collapse y(s, t) = apex + s ((1-t) (a-apex) + t (b-apex)).
fn duffy_vertex(
    apex: &Point3<f64>,
    a: &Point3<f64>,
    b: &Point3<f64>,
    element: &Element,
    x: &Point3<f64>,
    layer: Layer,
) -> f64 {
    let ea = a - apex;
    let eb = b - apex;
    let area2 = ea.cross(&eb).norm(); // jacobian of (s,t) -> y is s * area2
    if area2 == 0.0 {
        return 0.0;
    }
    let (nodes, weights) = gauss_legendre_16();
    let mut sum = 0.0;
    for (&s, &ws) in nodes.iter().zip(weights) {
        for (&t, &wt) in nodes.iter().zip(weights) {
            let dir = ea * (1.0 - t) + eb * t;
            let y = apex + dir * s;
            sum += ws * wt * s * kernel_value(element, x, &y, layer);
        }
    }
    sum * area2
}

/// 16-point Gauss-Legendre nodes/weights on [0, 1].
fn gauss_legendre_16() -> (&'static [f64; 16], &'static [f64; 16]) {
    // Abscissae/weights on [-1, 1], mapped once to [0, 1].
    static TABLE: std::sync::OnceLock<([f64; 16], [f64; 16])> = std::sync::OnceLock::new();
    let (nodes, weights) = TABLE.get_or_init(|| {
        let x = [
            -0.989_400_934_991_649_9,
            -0.944_575_023_073_232_6,
            -0.865_631_202_387_831_7,
            -0.755_404_408_355_003_0,
            -0.617_876_244_402_643_7,
            -0.458_016_777_657_227_4,
            -0.281_603_550_779_258_9,
            -0.095_012_509_837_637_44,
            0.095_012_509_837_637_44,
            0.281_603_550_779_258_9,
            0.458_016_777_657_227_4,
            0.617_876_244_402_643_7,
            0.755_404_408_355_003_0,
            0.865_631_202_387_831_7,
            0.944_575_023_073_232_6,
            0.989_400_934_991_649_9,
        ];
        let w = [
            0.027_152_459_411_754_1,
            0.062_253_523_938_647_89,
            0.095_158_511_682_492_78,
            0.124_628_971_255_533_9,
            0.149_595_988_816_576_7,
            0.169_156_519_395_002_5,
            0.182_603_415_044_923_6,
            0.189_450_610_455_068_5,
            0.189_450_610_455_068_5,
            0.182_603_415_044_923_6,
            0.169_156_519_395_002_5,
            0.149_595_988_816_576_7,
            0.124_628_971_255_533_9,
            0.095_158_511_682_492_78,
            0.062_253_523_938_647_89,
            0.027_152_459_411_754_1,
        ];
        let mut nodes01 = [0.0; 16];
        let mut weights01 = [0.0; 16];
        for i in 0..16 {
            nodes01[i] = 0.5 * (x[i] + 1.0);
            weights01[i] = 0.5 * w[i];
        }
        (nodes01, weights01)
    });
    (nodes, weights)
}

/// Dense collocation matrix of one layer potential:
/// `A[i][j] = integral over element j of the kernel at centroid i`,
/// through the same quadrature code as the FMM near path.
pub fn dense_layer_matrix(mesh: &TriMesh, layer: Layer, quad: &ElementQuadrature) -> DMatrix<f64> {
    let n = mesh.n_elements();
    let entries: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let x = mesh.centroids[i];
            (0..n)
                .map(|j| {
                    let elem = Element::from_mesh(mesh, j);
                    crate::bem::quadrature::element_integral(&elem, &x, layer, quad)
                })
                .collect()
        })
        .collect();
    DMatrix::from_fn(n, n, |i, j| entries[i][j])
}

/// Dense direct factorization solve of the collocation BEM system.
///
/// All-Dirichlet input solves the first-kind single-layer equation
/// `V q = f`; mixed input solves the direct BIE `(K + I/2) u = V q` with
/// the unknowns swapped per element. Guarded to `N <= 5000`.
pub fn dense_bem_solve(mesh: &TriMesh, bc: &BoundaryCondition, tol: f64) -> Result<Vec<f64>> {
    let n = mesh.n_elements();
    if n > DENSE_GUARD {
        return Err(Error::OracleGuard(format!(
            "dense BEM solve of {n} elements exceeds the {DENSE_GUARD} guard; use the FMM path"
        )));
    }
    if bc.len() != n {
        return Err(Error::BoundaryCondition(format!(
            "{} conditions for {n} elements",
            bc.len()
        )));
    }
    let quad = ElementQuadrature::default();
    let (a, b) = if bc.is_all_dirichlet() {
        let v = dense_layer_matrix(mesh, Layer::Single, &quad);
        (v, DVector::from_column_slice(&bc.values))
    } else {
        if !mesh.is_closed() {
            return Err(Error::Mesh(
                "the direct BIE for mixed conditions needs a closed mesh".into(),
            ));
        }
        dense_mixed_system(mesh, bc, &quad)
    };
    let b_norm = b.norm();
    let lu = a.clone().lu();
    let x = lu
        .solve(&b)
        .ok_or_else(|| Error::Factorization("dense BEM matrix is singular".into()))?;
    let residual = (&a * &x - &b).norm();
    if b_norm > 0.0 && residual / b_norm > tol.max(1e-10) {
        return Err(Error::Factorization(format!(
            "dense solve residual {residual:.3e} exceeds tolerance"
        )));
    }
    Ok(x.as_slice().to_vec())
}

/// Dense mixed system: columns of `-V` on Dirichlet elements (unknown q)
/// and `K + I/2` on Neumann elements (unknown u); right-hand side moves
/// the knowns across.
pub fn dense_mixed_system(
    mesh: &TriMesh,
    bc: &BoundaryCondition,
    quad: &ElementQuadrature,
) -> (DMatrix<f64>, DVector<f64>) {
    let n = mesh.n_elements();
    let v = dense_layer_matrix(mesh, Layer::Single, quad);
    let mut h = dense_layer_matrix(mesh, Layer::Double, quad);
    for i in 0..n {
        h[(i, i)] += 0.5;
    }
    let mut a = DMatrix::zeros(n, n);
    let mut b = DVector::zeros(n);
    for j in 0..n {
        match bc.kinds[j] {
            BcKind::Dirichlet => {
                // u_j known, q_j unknown.
                a.column_mut(j).copy_from(&(-v.column(j)));
                b.axpy(-bc.values[j], &h.column(j).into_owned(), 1.0);
            }
            BcKind::Neumann => {
                // q_j known, u_j unknown.
                a.column_mut(j).copy_from(&h.column(j));
                b.axpy(bc.values[j], &v.column(j).into_owned(), 1.0);
            }
        }
    }
    (a, b)
}
