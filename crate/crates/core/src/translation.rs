//! Uncompressed per-level translation operators.
//!
//! All surface-to-surface operators are built from single-layer kernel
//! matrices and regularized equivalent-density solves. The operators are
//! translation invariant: they depend on the level halfwidth, the octant or
//! interaction offset, p and d, never on absolute cube positions. For a
//! kernel homogeneous of degree m, the kernel matrix between two clouds
//! scaled by `a` picks up the factor `a^m`, so M2M and L2L (a kernel matrix
//! composed with an inverse one) are scale invariant, and M2L scales by
//! `(r0 / 2^l)^m` from its unit-halfwidth build.

use crate::error::{Error, Result};
use crate::kernel::{kernel_matrix, KernelSpec};
use crate::surfaces::{SurfaceRole, SurfaceSpec};
use nalgebra::{DMatrix, Point3, Vector3};

/// Which density solve a pseudo-inverse belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveRole {
    Upward,
    Downward,
}

/// Truncated-SVD pseudo-inverse of the equivalent-to-check kernel matrix.
#[derive(Debug, Clone)]
pub struct EquivSolver {
    /// Maps check potentials to equivalent densities.
    pub check_to_equiv: DMatrix<f64>,
    pub cutoff: f64,
    pub role: SolveRole,
    pub rank: usize,
}

impl EquivSolver {
    pub fn apply(&self, check_potentials: &nalgebra::DVector<f64>) -> nalgebra::DVector<f64> {
        &self.check_to_equiv * check_potentials
    }
}

/// Truncated-SVD pseudo-inverse, discarding singular values below
/// `cutoff * sigma_max`.
pub fn truncated_pinv(m: &DMatrix<f64>, cutoff: f64) -> Result<(DMatrix<f64>, usize)> {
    let svd = m.clone().svd(true, true);
    let u = svd.u.as_ref().expect("svd requested u");
    let vt = svd.v_t.as_ref().expect("svd requested v_t");
    let sigma_max = svd.singular_values.max();
    if !(sigma_max > 0.0) {
        return Err(Error::DegenerateOperator(
            "matrix is numerically rank-0".into(),
        ));
    }
    let threshold = cutoff * sigma_max;
    let rank = svd
        .singular_values
        .iter()
        .filter(|&&s| s >= threshold)
        .count();
    if rank == 0 {
        return Err(Error::DegenerateOperator(format!(
            "all singular values below cutoff {cutoff} * sigma_max"
        )));
    }
    // pinv = V * diag(1/sigma) * U^T over the retained block.
    let mut vs = DMatrix::zeros(vt.ncols(), rank);
    for c in 0..rank {
        let inv = 1.0 / svd.singular_values[c];
        for r in 0..vt.ncols() {
            vs[(r, c)] = vt[(c, r)] * inv;
        }
    }
    let ut = u.columns(0, rank).transpose();
    Ok((vs * ut, rank))
}

/// Builds the equivalent-density solver for one (equivalent, check) pair.
///
/// `E[i][j]` is the kernel between check point `i` and equivalent point `j`.
pub fn build_equiv_solver(
    equiv_points: &[Point3<f64>],
    check_points: &[Point3<f64>],
    kernel: &KernelSpec,
    cutoff: f64,
    role: SolveRole,
) -> Result<EquivSolver> {
    if !(cutoff > 0.0 && cutoff <= 1.0) {
        return Err(Error::Config(format!(
            "pseudo-inverse cutoff must lie in (0, 1], got {cutoff}"
        )));
    }
    let e = kernel_matrix(check_points, equiv_points, kernel, None)?;
    let (pinv, rank) = truncated_pinv(&e, cutoff)?;
    Ok(EquivSolver {
        check_to_equiv: pinv,
        cutoff,
        role,
        rank,
    })
}

/// Geometry of one cube, enough to place its surfaces.
#[derive(Debug, Clone, Copy)]
pub struct CubeGeometry {
    pub center: Point3<f64>,
    pub halfwidth: f64,
}

impl CubeGeometry {
    pub fn unit() -> Self {
        Self {
            center: Point3::origin(),
            halfwidth: 1.0,
        }
    }

    /// Geometry of the child in `octant` (bits x, y, z; set bit = + side).
    pub fn child(&self, octant: u8) -> Self {
        let h = self.halfwidth / 2.0;
        let sign = |bit: u8| if octant >> bit & 1 == 1 { 1.0 } else { -1.0 };
        Self {
            center: self.center + Vector3::new(sign(2) * h, sign(1) * h, sign(0) * h),
            halfwidth: h,
        }
    }
}

/// M2M for one child octant: parent upward solver composed with the kernel
/// matrix from the child upward-equivalent cloud to the parent upward-check
/// cloud.
pub fn build_m2m(
    parent: &CubeGeometry,
    parent_upward_solver: &EquivSolver,
    child_octant: u8,
    spec: &SurfaceSpec,
    kernel: &KernelSpec,
) -> Result<DMatrix<f64>> {
    if child_octant > 7 {
        return Err(Error::Config(format!("octant {child_octant} out of range")));
    }
    let child = parent.child(child_octant);
    let child_ue = spec.cloud(SurfaceRole::UpwardEquivalent, &child.center, child.halfwidth);
    let parent_uc = spec.cloud(SurfaceRole::UpwardCheck, &parent.center, parent.halfwidth);
    let g = kernel_matrix(&parent_uc.points, &child_ue.points, kernel, None)?;
    Ok(&parent_upward_solver.check_to_equiv * g)
}

/// M2L for one interaction offset at the given cube halfwidth: kernel matrix
/// from the source upward-equivalent cloud (cube at `offset * 2r`) to the
/// target downward-check cloud (cube at the origin).
pub fn build_m2l(
    offset: (i32, i32, i32),
    halfwidth: f64,
    spec: &SurfaceSpec,
    kernel: &KernelSpec,
) -> Result<DMatrix<f64>> {
    if crate::octree::offset_id(offset).is_none() {
        return Err(Error::Config(format!(
            "offset {offset:?} is not in the 316-entry interaction table"
        )));
    }
    let target = CubeGeometry {
        center: Point3::origin(),
        halfwidth,
    };
    let source_center = Point3::new(
        2.0 * halfwidth * offset.0 as f64,
        2.0 * halfwidth * offset.1 as f64,
        2.0 * halfwidth * offset.2 as f64,
    );
    let dc = spec.cloud(SurfaceRole::DownwardCheck, &target.center, halfwidth);
    let ue = spec.cloud(SurfaceRole::UpwardEquivalent, &source_center, halfwidth);
    kernel_matrix(&dc.points, &ue.points, kernel, None)
}

/// M2L at a tree level: cubes have halfwidth `r0 / 2^level`.
pub fn build_m2l_at_level(
    offset: (i32, i32, i32),
    level: u32,
    spec: &SurfaceSpec,
    kernel: &KernelSpec,
    r0: f64,
) -> Result<DMatrix<f64>> {
    build_m2l(offset, r0 / f64::from(1u32 << level), spec, kernel)
}

/// L2L for one child octant: kernel matrix from the parent
/// downward-equivalent cloud to the child downward-check cloud, composed
/// with the parent downward solver.
pub fn build_l2l(
    parent: &CubeGeometry,
    parent_downward_solver: &EquivSolver,
    child_octant: u8,
    spec: &SurfaceSpec,
    kernel: &KernelSpec,
) -> Result<DMatrix<f64>> {
    if child_octant > 7 {
        return Err(Error::Config(format!("octant {child_octant} out of range")));
    }
    let child = parent.child(child_octant);
    let child_dc = spec.cloud(SurfaceRole::DownwardCheck, &child.center, child.halfwidth);
    let parent_de = spec.cloud(
        SurfaceRole::DownwardEquivalent,
        &parent.center,
        parent.halfwidth,
    );
    let g = kernel_matrix(&child_dc.points, &parent_de.points, kernel, None)?;
    Ok(g * &parent_downward_solver.check_to_equiv)
}

/// L2T: kernel matrix from the leaf downward-equivalent cloud to the
/// targets, composed with the leaf downward solver.
pub fn build_l2t(
    targets: &[Point3<f64>],
    leaf: &CubeGeometry,
    leaf_downward_solver: &EquivSolver,
    spec: &SurfaceSpec,
    kernel: &KernelSpec,
) -> Result<DMatrix<f64>> {
    let de = spec.cloud(SurfaceRole::DownwardEquivalent, &leaf.center, leaf.halfwidth);
    let de_halfwidth = SurfaceRole::DownwardEquivalent.halfwidth_factor(spec.d()) * leaf.halfwidth;
    for (i, t) in targets.iter().enumerate() {
        if (t - leaf.center).amax() >= de_halfwidth {
            return Err(Error::Config(format!(
                "L2T target {i} lies outside the downward-equivalent surface"
            )));
        }
    }
    let g = kernel_matrix(targets, &de.points, kernel, None)?;
    Ok(g * &leaf_downward_solver.check_to_equiv)
}
