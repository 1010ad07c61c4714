//! Equivalent and check surfaces.
//!
//! Each cube of halfwidth `r` carries four concentric cubic surfaces: the
//! upward-equivalent and downward-check surfaces at halfwidth `(1+d)r`, the
//! upward-check and downward-equivalent surfaces at `(3-2d)r`. All are
//! sampled with the p-per-edge Cartesian grid restricted to the cube
//! boundary, giving `6(p-1)^2 + 2` points.

use crate::error::{Error, Result};
use nalgebra::Point3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SurfaceRole {
    UpwardEquivalent,
    UpwardCheck,
    DownwardEquivalent,
    DownwardCheck,
}

impl SurfaceRole {
    /// Halfwidth of the role's surface relative to the owner cube halfwidth.
    pub fn halfwidth_factor(self, d: f64) -> f64 {
        match self {
            SurfaceRole::UpwardEquivalent | SurfaceRole::DownwardCheck => 1.0 + d,
            SurfaceRole::UpwardCheck | SurfaceRole::DownwardEquivalent => 3.0 - 2.0 * d,
        }
    }
}

/// Sampling parameters shared by all four surfaces of a run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurfaceSpec {
    p: usize,
    d: f64,
}

impl SurfaceSpec {
    pub fn new(p: usize, d: f64) -> Result<Self> {
        if p < 2 {
            return Err(Error::Config(format!(
                "surface grid needs p >= 2 points per edge, got {p}"
            )));
        }
        if !(0.0..2.0 / 3.0).contains(&d) {
            return Err(Error::Config(format!(
                "surface offset d must lie in [0, 2/3), got {d}; \
                 equivalent and check surfaces would touch or cross"
            )));
        }
        Ok(Self { p, d })
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn d(&self) -> f64 {
        self.d
    }

    /// Number of grid points on the cube boundary: 6(p-1)^2 + 2.
    pub fn n_points(&self) -> usize {
        6 * (self.p - 1) * (self.p - 1) + 2
    }

    /// Cloud of `role` for the cube at `center` with halfwidth `halfwidth`.
    pub fn cloud(
        &self,
        role: SurfaceRole,
        center: &Point3<f64>,
        halfwidth: f64,
    ) -> SurfaceCloud {
        let hw = role.halfwidth_factor(self.d) * halfwidth;
        SurfaceCloud {
            points: surface_grid(center, hw, self.p),
            role,
            owner_center: *center,
            owner_halfwidth: halfwidth,
        }
    }
}

/// A sampled surface, with deterministic point ordering given (p, role).
#[derive(Debug, Clone)]
pub struct SurfaceCloud {
    pub points: Vec<Point3<f64>>,
    pub role: SurfaceRole,
    pub owner_center: Point3<f64>,
    pub owner_halfwidth: f64,
}

/// p-per-edge Cartesian grid restricted to the boundary of the cube.
pub fn sample_cube_surface(
    center: &Point3<f64>,
    halfwidth: f64,
    p: usize,
) -> Result<Vec<Point3<f64>>> {
    if p < 2 {
        return Err(Error::Config(format!(
            "surface grid needs p >= 2 points per edge, got {p}"
        )));
    }
    if halfwidth <= 0.0 {
        return Err(Error::Config("surface halfwidth must be positive".into()));
    }
    Ok(surface_grid(center, halfwidth, p))
}

fn surface_grid(center: &Point3<f64>, halfwidth: f64, p: usize) -> Vec<Point3<f64>> {
    let n = 6 * (p - 1) * (p - 1) + 2;
    let mut points = Vec::with_capacity(n);
    let step = |i: usize| -> f64 { -1.0 + 2.0 * i as f64 / (p - 1) as f64 };
    for i in 0..p {
        for j in 0..p {
            for k in 0..p {
                let boundary =
                    i == 0 || i == p - 1 || j == 0 || j == p - 1 || k == 0 || k == p - 1;
                if !boundary {
                    continue;
                }
                points.push(Point3::new(
                    center.x + halfwidth * step(i),
                    center.y + halfwidth * step(j),
                    center.z + halfwidth * step(k),
                ));
            }
        }
    }
    debug_assert_eq!(points.len(), n);
    points
}

/// Equivalent and check halfwidths for a cube of halfwidth `r`:
/// `(1+d)r` and `(3-2d)r`.
pub fn surface_halfwidths(r: f64, d: f64) -> Result<(f64, f64)> {
    if !(0.0..2.0 / 3.0).contains(&d) {
        return Err(Error::Config(format!(
            "surface offset d must lie in [0, 2/3), got {d}"
        )));
    }
    Ok(((1.0 + d) * r, (3.0 - 2.0 * d) * r))
}

/// BEM surface offset d = C_d / sqrt(s_max).
pub fn bem_offset(s_max: usize, c_d: f64) -> Result<f64> {
    if s_max == 0 {
        return Err(Error::Config("s_max must be at least 1".into()));
    }
    if c_d <= 0.0 {
        return Err(Error::Config("C_d must be positive".into()));
    }
    let d = c_d / (s_max as f64).sqrt();
    if d >= 2.0 / 3.0 {
        return Err(Error::Config(format!(
            "BEM offset d = C_d/sqrt(s_max) = {d} >= 2/3; increase s_max or decrease C_d"
        )));
    }
    Ok(d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn point_counts() {
        let c = Point3::origin();
        assert_eq!(sample_cube_surface(&c, 1.0, 2).unwrap().len(), 8);
        assert_eq!(sample_cube_surface(&c, 1.0, 4).unwrap().len(), 56);
        assert_eq!(sample_cube_surface(&c, 1.0, 6).unwrap().len(), 152);
        assert_eq!(sample_cube_surface(&c, 1.0, 8).unwrap().len(), 296);
        assert!(sample_cube_surface(&c, 1.0, 1).is_err());
        for p in 2..=10 {
            let spec = SurfaceSpec::new(p, 0.1).unwrap();
            assert_eq!(spec.n_points(), p.pow(3) - (p - 2).pow(3));
        }
    }

    #[test]
    fn p2_gives_cube_corners() {
        let pts = sample_cube_surface(&Point3::new(1.0, 2.0, 3.0), 0.5, 2).unwrap();
        assert_eq!(pts.len(), 8);
        for p in &pts {
            assert_eq!((p.x - 1.0).abs(), 0.5);
            assert_eq!((p.y - 2.0).abs(), 0.5);
            assert_eq!((p.z - 3.0).abs(), 0.5);
        }
    }

    #[test]
    fn all_points_on_boundary() {
        let c = Point3::new(-0.3, 0.7, 2.0);
        let hw = 1.7;
        for p in [2, 3, 5, 8] {
            for pt in sample_cube_surface(&c, hw, p).unwrap() {
                // On the boundary means some coordinate sits bitwise at the
                // face value c[k] +/- hw as the sampler computes it.
                let on_face = (0..3).any(|k| pt[k] == c[k] + hw || pt[k] == c[k] - hw);
                assert!(on_face, "{pt:?} not on a face of the cube");
                let d = (pt - c).amax();
                assert!((d - hw).abs() <= 4.0 * f64::EPSILON * hw);
            }
        }
    }

    #[test]
    fn halfwidth_pairs() {
        assert_eq!(surface_halfwidths(1.0, 0.0).unwrap(), (1.0, 3.0));
        assert_eq!(surface_halfwidths(1.0, 0.5).unwrap(), (1.5, 2.0));
        // Separation (2 - 3d) r.
        let (e, c) = surface_halfwidths(1.0, 0.5).unwrap();
        assert_relative_eq!(c - e, 2.0 - 3.0 * 0.5, max_relative = 1e-15);
        assert!(surface_halfwidths(1.0, 2.0 / 3.0).is_err());
    }

    #[test]
    fn bem_offset_rule() {
        assert_relative_eq!(bem_offset(64, 0.5).unwrap(), 0.0625);
        assert_relative_eq!(bem_offset(100, 0.5).unwrap(), 0.05);
        assert!(bem_offset(1, 1.0).is_err()); // d = 1 >= 2/3
    }

    #[test]
    fn surface_nesting_conditions() {
        let spec = SurfaceSpec::new(6, 0.1).unwrap();
        let center = Point3::new(0.25, -0.5, 1.0);
        let r = 0.5;
        let ue = spec.cloud(SurfaceRole::UpwardEquivalent, &center, r);
        let uc = spec.cloud(SurfaceRole::UpwardCheck, &center, r);
        let de = spec.cloud(SurfaceRole::DownwardEquivalent, &center, r);
        let dc = spec.cloud(SurfaceRole::DownwardCheck, &center, r);
        let max_coord = |cloud: &SurfaceCloud| {
            cloud
                .points
                .iter()
                .map(|p| (p - center).amax())
                .fold(0.0f64, f64::max)
        };
        // Upward check strictly encloses upward equivalent; downward
        // equivalent strictly encloses downward check.
        assert!(max_coord(&uc) > max_coord(&ue));
        assert!(max_coord(&de) > max_coord(&dc));

        // Child upward-equivalent surface nests strictly inside the parent's.
        let child_center = Point3::new(0.25 + r / 2.0, -0.5 - r / 2.0, 1.0 + r / 2.0);
        let child_ue = spec.cloud(SurfaceRole::UpwardEquivalent, &child_center, r / 2.0);
        let parent_hw = (1.0 + spec.d()) * r;
        for p in &child_ue.points {
            assert!((p - center).amax() < parent_hw);
        }
    }

    #[test]
    fn interaction_disjointness() {
        // For cubes separated by an interaction offset, the source
        // upward-equivalent and target downward-check clouds stay at least
        // (2 - 3d) r apart.
        let spec = SurfaceSpec::new(4, 0.1).unwrap();
        let r = 1.0;
        let target = Point3::origin();
        for &offset in [(2i32, 0i32, 0i32), (-3, 3, 1), (2, 2, 2)].iter() {
            let source = Point3::new(
                2.0 * r * offset.0 as f64,
                2.0 * r * offset.1 as f64,
                2.0 * r * offset.2 as f64,
            );
            let ue = spec.cloud(SurfaceRole::UpwardEquivalent, &source, r);
            let dc = spec.cloud(SurfaceRole::DownwardCheck, &target, r);
            let min_dist = ue
                .points
                .iter()
                .flat_map(|a| dc.points.iter().map(move |b| (a - b).norm()))
                .fold(f64::INFINITY, f64::min);
            assert!(min_dist >= (2.0 - 3.0 * spec.d()) * r - 1e-12);
        }
    }

    #[test]
    fn determinism() {
        let a = sample_cube_surface(&Point3::new(0.1, 0.2, 0.3), 0.7, 6).unwrap();
        let b = sample_cube_surface(&Point3::new(0.1, 0.2, 0.3), 0.7, 6).unwrap();
        assert_eq!(a.len(), b.len());
        for (pa, pb) in a.iter().zip(b.iter()) {
            assert_eq!(pa, pb, "clouds must be bitwise identical");
        }
    }
}
