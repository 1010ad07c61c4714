//! Laplace single- and double-layer kernels.
//!
//! Every kernel is reachable through the [`Kernel`] trait (value given
//! target, source, optional source normal), so adding a kernel requires no
//! change to the octree, compression or engine code. Only the Laplace
//! layers are implemented.

use crate::error::{Error, Result};
use nalgebra::{DMatrix, Point3, Vector3};
use std::f64::consts::PI;

pub const INV_4PI: f64 = 1.0 / (4.0 * PI);

/// Relative threshold under which two evaluation points count as coincident.
pub const COINCIDENCE_REL: f64 = 1e-14;

/// Which layer potential a kernel represents.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Layer {
    Single,
    Double,
}

/// Uniform kernel interface: value given target, source and (for kernels
/// that need one) the unit normal at the source.
pub trait Kernel: Sync + Send {
    fn value(&self, x: &Point3<f64>, y: &Point3<f64>, normal_y: Option<&Vector3<f64>>) -> f64;
    /// Degree m with G(ax, ay) = a^m G(x, y).
    fn homogeneity_degree(&self) -> i32;
    fn is_symmetric(&self) -> bool;
    fn needs_normal(&self) -> bool {
        false
    }
}

/// Laplace kernel selector carrying the homogeneity degree used for
/// per-level operator scaling.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KernelSpec {
    layer: Layer,
}

impl KernelSpec {
    pub fn new(layer: Layer) -> Self {
        Self { layer }
    }

    pub fn single() -> Self {
        Self::new(Layer::Single)
    }

    pub fn double() -> Self {
        Self::new(Layer::Double)
    }

    pub fn layer(&self) -> Layer {
        self.layer
    }

    pub fn homogeneity_degree(&self) -> i32 {
        match self.layer {
            Layer::Single => -1,
            Layer::Double => -2,
        }
    }

    pub fn is_symmetric(&self) -> bool {
        matches!(self.layer, Layer::Single)
    }

    pub fn needs_normal(&self) -> bool {
        matches!(self.layer, Layer::Double)
    }

    /// Unchecked evaluation; callers guarantee the pair is not coincident
    /// and that a normal is supplied when the layer needs one.
    #[inline]
    pub fn value(&self, x: &Point3<f64>, y: &Point3<f64>, normal_y: Option<&Vector3<f64>>) -> f64 {
        match self.layer {
            Layer::Single => single_layer_value(x, y),
            Layer::Double => double_layer_value(x, y, normal_y.expect("double layer needs normal")),
        }
    }
}

impl Kernel for KernelSpec {
    fn value(&self, x: &Point3<f64>, y: &Point3<f64>, normal_y: Option<&Vector3<f64>>) -> f64 {
        KernelSpec::value(self, x, y, normal_y)
    }

    fn homogeneity_degree(&self) -> i32 {
        KernelSpec::homogeneity_degree(self)
    }

    fn is_symmetric(&self) -> bool {
        KernelSpec::is_symmetric(self)
    }

    fn needs_normal(&self) -> bool {
        KernelSpec::needs_normal(self)
    }
}

/// G(x, y) = 1 / (4 pi |x - y|), no coincidence check.
#[inline(always)]
pub fn single_layer_value(x: &Point3<f64>, y: &Point3<f64>) -> f64 {
    let dx = x.x - y.x;
    let dy = x.y - y.y;
    let dz = x.z - y.z;
    INV_4PI / (dx * dx + dy * dy + dz * dz).sqrt()
}

/// dG/dn(y) = ((x - y) . n_y) / (4 pi |x - y|^3), no coincidence check.
#[inline(always)]
pub fn double_layer_value(x: &Point3<f64>, y: &Point3<f64>, n_y: &Vector3<f64>) -> f64 {
    let d = x - y;
    let r2 = d.norm_squared();
    let r = r2.sqrt();
    INV_4PI * d.dot(n_y) / (r2 * r)
}

fn local_scale(x: &Point3<f64>, y: &Point3<f64>) -> f64 {
    let m = x
        .coords
        .amax()
        .max(y.coords.amax());
    m.max(1.0)
}

/// Single-layer evaluation with the coincidence guard.
///
/// Without scene context the guard uses the local coordinate magnitude as
/// the scale; [`kernel_matrix`] uses the bounding-box diameter instead.
pub fn eval_single(x: &Point3<f64>, y: &Point3<f64>) -> Result<f64> {
    let threshold = COINCIDENCE_REL * local_scale(x, y);
    if (x - y).norm() < threshold {
        return Err(coincident(x, y, None));
    }
    Ok(single_layer_value(x, y))
}

/// Double-layer evaluation with the coincidence guard and a unit-normal check.
pub fn eval_double(x: &Point3<f64>, y: &Point3<f64>, n_y: &Vector3<f64>) -> Result<f64> {
    if (n_y.norm() - 1.0).abs() > 1e-12 {
        return Err(Error::Config(format!(
            "double layer normal must be unit length, got |n| = {}",
            n_y.norm()
        )));
    }
    let threshold = COINCIDENCE_REL * local_scale(x, y);
    if (x - y).norm() < threshold {
        return Err(coincident(x, y, None));
    }
    Ok(double_layer_value(x, y, n_y))
}

fn coincident(x: &Point3<f64>, y: &Point3<f64>, pair: Option<(usize, usize)>) -> Error {
    Error::CoincidentPoints {
        target: [x.x, x.y, x.z],
        source_point: [y.x, y.y, y.z],
        pair,
    }
}

/// Dense kernel matrix: entry (i, j) is the kernel at (targets[i], sources[j]).
///
/// Coincident pairs are detected against `COINCIDENCE_REL` times the
/// bounding-box diameter of all points and reported with their indices.
pub fn kernel_matrix(
    targets: &[Point3<f64>],
    sources: &[Point3<f64>],
    spec: &KernelSpec,
    normals: Option<&[Vector3<f64>]>,
) -> Result<DMatrix<f64>> {
    if spec.needs_normal() {
        let normals = normals.ok_or_else(|| {
            Error::Config("double-layer kernel matrix requires source normals".into())
        })?;
        if normals.len() != sources.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} normals for {} sources",
                normals.len(),
                sources.len()
            )));
        }
    }
    let diameter = bounding_diameter(targets.iter().chain(sources.iter()));
    let threshold = COINCIDENCE_REL * diameter.max(f64::MIN_POSITIVE);
    let mut out = DMatrix::zeros(targets.len(), sources.len());
    for (j, y) in sources.iter().enumerate() {
        let n = normals.map(|ns| &ns[j]);
        for (i, x) in targets.iter().enumerate() {
            if (x - y).norm() < threshold {
                return Err(coincident(x, y, Some((i, j))));
            }
            out[(i, j)] = spec.value(x, y, n);
        }
    }
    Ok(out)
}

/// Diameter of the axis-aligned bounding box of a point set.
pub fn bounding_diameter<'a>(points: impl Iterator<Item = &'a Point3<f64>>) -> f64 {
    let mut lo = Point3::new(f64::INFINITY, f64::INFINITY, f64::INFINITY);
    let mut hi = Point3::new(f64::NEG_INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
    for p in points {
        for k in 0..3 {
            lo[k] = lo[k].min(p[k]);
            hi[k] = hi[k].max(p[k]);
        }
    }
    if lo.x > hi.x {
        return 0.0;
    }
    (hi - lo).norm()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn unit_distance_single_layer() {
        let x = Point3::origin();
        let y = Point3::new(1.0, 0.0, 0.0);
        assert_relative_eq!(eval_single(&x, &y).unwrap(), INV_4PI, max_relative = 1e-15);
        let y2 = Point3::new(2.0, 0.0, 0.0);
        assert_relative_eq!(
            eval_single(&x, &y2).unwrap(),
            1.0 / (8.0 * PI),
            max_relative = 1e-15
        );
    }

    #[test]
    fn single_layer_homogeneity_degree_minus_one() {
        let x = Point3::origin();
        let y = Point3::new(1.0, 0.0, 0.0);
        let base = eval_single(&x, &y).unwrap();
        let scaled = eval_single(&(x * 2.0), &(y * 2.0)).unwrap();
        assert_relative_eq!(scaled, 0.5 * base, max_relative = 1e-15);
    }

    #[test]
    fn double_layer_values() {
        let n = Vector3::new(1.0, 0.0, 0.0);
        let x = Point3::new(2.0, 0.0, 0.0);
        let y = Point3::origin();
        assert_relative_eq!(
            eval_double(&x, &y, &n).unwrap(),
            2.0 / (32.0 * PI),
            max_relative = 1e-15
        );
        let x_orth = Point3::new(0.0, 1.0, 0.0);
        assert_eq!(eval_double(&x_orth, &y, &n).unwrap(), 0.0);
    }

    #[test]
    fn double_layer_homogeneity_degree_minus_two() {
        let n = Vector3::new(1.0, 0.0, 0.0);
        let x = Point3::new(2.0, 0.0, 0.0);
        let y = Point3::origin();
        let base = eval_double(&x, &y, &n).unwrap();
        let scaled = eval_double(&(x * 2.0), &(y * 2.0), &n).unwrap();
        assert_relative_eq!(scaled, 0.25 * base, max_relative = 1e-15);
    }

    #[test]
    fn double_layer_rejects_non_unit_normal() {
        let n = Vector3::new(2.0, 0.0, 0.0);
        let err = eval_double(&Point3::new(2.0, 0.0, 0.0), &Point3::origin(), &n);
        assert!(matches!(err, Err(Error::Config(_))));
    }

    #[test]
    fn coincident_points_are_domain_errors() {
        let x = Point3::new(0.5, 0.5, 0.5);
        assert!(matches!(
            eval_single(&x, &x),
            Err(Error::CoincidentPoints { .. })
        ));
        let near = Point3::new(0.5 + 1e-16, 0.5, 0.5);
        assert!(eval_single(&x, &near).is_err());
    }

    #[test]
    fn kernel_matrix_single_entry() {
        let t = [Point3::origin()];
        let s = [Point3::new(1.0, 0.0, 0.0)];
        let m = kernel_matrix(&t, &s, &KernelSpec::single(), None).unwrap();
        assert_eq!(m.shape(), (1, 1));
        assert_relative_eq!(m[(0, 0)], INV_4PI, max_relative = 1e-15);
    }

    #[test]
    fn kernel_matrix_reports_coincident_pair() {
        let t = [Point3::origin(), Point3::new(1.0, 0.0, 0.0)];
        let s = [Point3::new(1.0, 0.0, 0.0)];
        match kernel_matrix(&t, &s, &KernelSpec::single(), None) {
            Err(Error::CoincidentPoints { pair, .. }) => assert_eq!(pair, Some((1, 0))),
            other => panic!("expected coincidence error, got {other:?}"),
        }
    }

    #[test]
    fn spec_invariants() {
        let single = KernelSpec::single();
        assert_eq!(single.homogeneity_degree(), -1);
        assert!(single.is_symmetric());
        let double = KernelSpec::double();
        assert_eq!(double.homogeneity_degree(), -2);
        assert!(!double.is_symmetric());
        assert!(double.needs_normal());
    }

    fn arb_point() -> impl Strategy<Value = Point3<f64>> {
        (-10.0f64..10.0, -10.0f64..10.0, -10.0f64..10.0).prop_map(|(x, y, z)| Point3::new(x, y, z))
    }

    proptest! {
        #[test]
        fn single_layer_symmetry(x in arb_point(), y in arb_point()) {
            prop_assume!((x - y).norm() > 1e-6);
            let a = eval_single(&x, &y).unwrap();
            let b = eval_single(&y, &x).unwrap();
            prop_assert_eq!(a, b);
            prop_assert!(a > 0.0);
        }

        #[test]
        fn single_layer_homogeneity(x in arb_point(), y in arb_point(), alpha in 0.1f64..10.0) {
            prop_assume!((x - y).norm() > 1e-6);
            let base = eval_single(&x, &y).unwrap();
            let scaled = eval_single(&(x * alpha), &(y * alpha)).unwrap();
            prop_assert!((scaled - base / alpha).abs() <= 1e-12 * base.abs() / alpha);
        }

        #[test]
        fn matrix_matches_scalar(x in arb_point(), y in arb_point()) {
            prop_assume!((x - y).norm() > 1e-6);
            let m = kernel_matrix(&[x], &[y], &KernelSpec::single(), None).unwrap();
            prop_assert_eq!(m[(0, 0)], eval_single(&x, &y).unwrap());
        }
    }

    #[test]
    fn matrix_symmetric_when_targets_equal_sources() {
        let pts = [
            Point3::new(0.0, 0.0, 0.0),
            Point3::new(1.0, 0.5, 0.25),
            Point3::new(-0.5, 2.0, 1.0),
        ];
        // Coincident diagonal excluded: compare off-diagonal pairs through
        // scalar evaluation instead of the (erroring) full matrix.
        for i in 0..3 {
            for j in 0..3 {
                if i == j {
                    continue;
                }
                let a = eval_single(&pts[i], &pts[j]).unwrap();
                let b = eval_single(&pts[j], &pts[i]).unwrap();
                assert_eq!(a, b);
            }
        }
    }

    #[test]
    fn matrix_homogeneity() {
        let t = [Point3::new(0.0, 0.1, 0.2), Point3::new(1.0, 0.0, 0.0)];
        let s = [Point3::new(2.0, 1.0, 0.0), Point3::new(0.0, 3.0, 1.0)];
        let spec = KernelSpec::single();
        let base = kernel_matrix(&t, &s, &spec, None).unwrap();
        let alpha = 2.0;
        let ts: Vec<_> = t.iter().map(|p| p * alpha).collect();
        let ss: Vec<_> = s.iter().map(|p| p * alpha).collect();
        let scaled = kernel_matrix(&ts, &ss, &spec, None).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                assert_relative_eq!(
                    scaled[(i, j)],
                    base[(i, j)] * alpha.powi(spec.homogeneity_degree()),
                    max_relative = 1e-14
                );
            }
        }
    }
}
