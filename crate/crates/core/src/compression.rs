//! Two-stage SVD compression of the M2L operators and projector-based
//! shrinking of the pass operators.
//!
//! Stage one collects the 316 unit-level M2L matrices into fat (row-wise)
//! and thin (column-wise) concatenations, keeps the left singular vectors
//! of the fat matrix and the right singular vectors of the thin matrix
//! above `eps1 * sigma_max`, and conjugates every operator into those
//! coordinates. Stage two factors each compressed block independently,
//! truncating singular values below `eps2 * sigma_max(K_fat)` and keeping
//! the factored pair only where it is cheaper to apply than the dense
//! block.
//!
//! The fat/thin SVDs are computed through the eigendecomposition of the
//! n x n Gram matrices, which keeps memory bounded; the squared condition
//! number is harmless because only directions above `eps1 * sigma_max`
//! are retained.

use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;

/// Shared row/column projectors of the first compression stage.
#[derive(Debug, Clone)]
pub struct Projectors {
    /// Left projector (orthonormal columns), n x p_row.
    pub u_tilde: DMatrix<f64>,
    /// Right projector (orthonormal columns), n x p_col.
    pub r_tilde: DMatrix<f64>,
    pub epsilon1: f64,
    /// Largest singular value of the fat matrix; the reference for stage two.
    pub sigma_max_fat: f64,
}

impl Projectors {
    pub fn retained_row_dim(&self) -> usize {
        self.u_tilde.ncols()
    }

    pub fn retained_col_dim(&self) -> usize {
        self.r_tilde.ncols()
    }

    /// Identity projectors: the uncompressed baseline where every operator
    /// keeps its original dimension.
    pub fn identity(n: usize) -> Self {
        Self {
            u_tilde: DMatrix::identity(n, n),
            r_tilde: DMatrix::identity(n, n),
            epsilon1: 0.0,
            sigma_max_fat: 0.0,
        }
    }
}

/// Row-wise and column-wise concatenations of a set of equally shaped
/// operators, ordered like `octree::offset_table`.
pub fn assemble_fat_thin(blocks: &[DMatrix<f64>]) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let (n, m) = check_block_shapes(blocks)?;
    let count = blocks.len();
    let mut fat = DMatrix::zeros(n, m * count);
    let mut thin = DMatrix::zeros(n * count, m);
    for (o, b) in blocks.iter().enumerate() {
        fat.view_mut((0, o * m), (n, m)).copy_from(b);
        thin.view_mut((o * n, 0), (n, m)).copy_from(b);
    }
    Ok((fat, thin))
}

fn check_block_shapes(blocks: &[DMatrix<f64>]) -> Result<(usize, usize)> {
    let first = blocks
        .first()
        .ok_or_else(|| Error::ShapeMismatch("empty operator set".into()))?;
    let shape = first.shape();
    for (i, b) in blocks.iter().enumerate() {
        if b.shape() != shape {
            return Err(Error::ShapeMismatch(format!(
                "operator {i} has shape {:?}, expected {shape:?}",
                b.shape()
            )));
        }
    }
    Ok(shape)
}

/// Eigenvectors of a symmetric PSD Gram matrix whose singular values
/// (sqrt of eigenvalues) are at least `eps1 * sigma_max`, in descending
/// order. Returns the retained columns and `sigma_max`.
fn retained_subspace(gram: DMatrix<f64>, eps1: f64) -> Result<(DMatrix<f64>, f64)> {
    let n = gram.nrows();
    let eig = SymmetricEigen::new(gram);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .expect("eigenvalues are finite")
    });
    let lambda_max = eig.eigenvalues[order[0]].max(0.0);
    if lambda_max <= 0.0 {
        return Err(Error::DegenerateOperator(
            "operator set is numerically zero".into(),
        ));
    }
    let threshold = eps1 * eps1 * lambda_max;
    let kept: Vec<usize> = order
        .into_iter()
        .filter(|&i| eig.eigenvalues[i] >= threshold && eig.eigenvalues[i] > 0.0)
        .collect();
    if kept.is_empty() {
        return Err(Error::DegenerateOperator(format!(
            "threshold eps1 = {eps1} retains no singular vectors"
        )));
    }
    let mut cols = DMatrix::zeros(n, kept.len());
    for (c, &i) in kept.iter().enumerate() {
        cols.column_mut(c).copy_from(&eig.eigenvectors.column(i));
    }
    Ok((cols, lambda_max.sqrt()))
}

/// Projectors from the assembled fat and thin matrices.
///
/// When the kernel is symmetric the thin matrix carries the same Gram
/// spectrum as the fat one (its blocks are the transposed fat blocks in
/// negated-offset order), so one decomposition serves both sides.
pub fn compute_projectors(
    k_fat: &DMatrix<f64>,
    k_thin: &DMatrix<f64>,
    eps1: f64,
    symmetric: bool,
) -> Result<Projectors> {
    let n = k_fat.nrows();
    if n == 0 || k_fat.ncols() % n != 0 {
        return Err(Error::ShapeMismatch(format!(
            "fat matrix {:?} is not a row of square blocks",
            k_fat.shape()
        )));
    }
    let count = k_fat.ncols() / n;
    if k_thin.shape() != (n * count, n) {
        return Err(Error::ShapeMismatch(format!(
            "thin matrix {:?} does not match fat matrix {:?}",
            k_thin.shape(),
            k_fat.shape()
        )));
    }
    let fat_blocks: Vec<DMatrix<f64>> = (0..count)
        .map(|o| k_fat.view((0, o * n), (n, n)).into_owned())
        .collect();
    if symmetric {
        return projectors_from_blocks(&fat_blocks, eps1, true);
    }
    let thin_blocks: Vec<DMatrix<f64>> = (0..count)
        .map(|o| k_thin.view((o * n, 0), (n, n)).into_owned())
        .collect();
    projectors_from_two_block_sets(&fat_blocks, &thin_blocks, eps1)
}

/// Projectors straight from the operator set, without materializing the
/// fat/thin concatenations.
pub fn projectors_from_blocks(
    blocks: &[DMatrix<f64>],
    eps1: f64,
    symmetric: bool,
) -> Result<Projectors> {
    if symmetric {
        let (n, m) = check_block_shapes(blocks)?;
        if n != m {
            return Err(Error::ShapeMismatch("blocks must be square".into()));
        }
        validate_eps1(eps1)?;
        let mut gram = DMatrix::zeros(n, n);
        for b in blocks {
            gram.gemm(1.0, b, &b.transpose(), 1.0);
        }
        let (u, sigma_max) = retained_subspace(gram, eps1)?;
        Ok(Projectors {
            r_tilde: u.clone(),
            u_tilde: u,
            epsilon1: eps1,
            sigma_max_fat: sigma_max,
        })
    } else {
        projectors_from_two_block_sets(blocks, blocks, eps1)
    }
}

fn validate_eps1(eps1: f64) -> Result<()> {
    if !(eps1 > 0.0 && eps1 < 1.0) {
        return Err(Error::Config(format!(
            "eps1 must lie in (0, 1), got {eps1}"
        )));
    }
    Ok(())
}

fn projectors_from_two_block_sets(
    fat_blocks: &[DMatrix<f64>],
    thin_blocks: &[DMatrix<f64>],
    eps1: f64,
) -> Result<Projectors> {
    let (n, m) = check_block_shapes(fat_blocks)?;
    if n != m {
        return Err(Error::ShapeMismatch("blocks must be square".into()));
    }
    validate_eps1(eps1)?;
    let mut gram_fat = DMatrix::zeros(n, n);
    for b in fat_blocks {
        gram_fat.gemm(1.0, b, &b.transpose(), 1.0);
    }
    let mut gram_thin = DMatrix::zeros(n, n);
    for b in thin_blocks {
        gram_thin.gemm(1.0, &b.transpose(), b, 1.0);
    }
    let (u, sigma_max_fat) = retained_subspace(gram_fat, eps1)?;
    let (r, _) = retained_subspace(gram_thin, eps1)?;
    Ok(Projectors {
        u_tilde: u,
        r_tilde: r,
        epsilon1: eps1,
        sigma_max_fat,
    })
}

/// First-stage compression of one operator: K_tilde = U^T K R.
pub fn compress_m2l(k: &DMatrix<f64>, proj: &Projectors) -> DMatrix<f64> {
    proj.u_tilde.transpose() * k * &proj.r_tilde
}

/// Second-stage low-rank factorization of a compressed operator.
///
/// Singular values below `eps2 * sigma_max_fat` are truncated; returns
/// `U_hat` (left vectors), `V_hat = Sigma V^T` and the retained rank.
/// Rank zero is valid and yields empty factors.
pub fn low_rank_factor(
    k_tilde: &DMatrix<f64>,
    eps2: f64,
    sigma_max_fat: f64,
) -> (DMatrix<f64>, DMatrix<f64>, usize) {
    let (rows, cols) = k_tilde.shape();
    let svd = k_tilde.clone().svd(true, true);
    let u = svd.u.as_ref().expect("svd requested u");
    let vt = svd.v_t.as_ref().expect("svd requested v_t");
    let threshold = eps2 * sigma_max_fat;
    let rank = svd
        .singular_values
        .iter()
        .filter(|&&s| s >= threshold)
        .count();
    let u_hat = u.columns(0, rank).into_owned();
    let mut v_hat = vt.rows(0, rank).into_owned();
    for r in 0..rank {
        let s = svd.singular_values[r];
        v_hat.row_mut(r).scale_mut(s);
    }
    debug_assert_eq!(u_hat.shape(), (rows, rank));
    debug_assert_eq!(v_hat.shape(), (rank, cols));
    (u_hat, v_hat, rank)
}

/// eps1 = C1 * 2^-L / L.
pub fn epsilon1(c1: f64, depth: u32) -> f64 {
    c1 * 0.5f64.powi(depth as i32) / depth as f64
}

/// eps2 = C2 * eps1 / p_tilde.
pub fn epsilon2(c2: f64, eps1: f64, p_tilde: usize) -> f64 {
    debug_assert!(p_tilde >= 1);
    c2 * eps1 / p_tilde as f64
}

/// Apply-time scale for homogeneous kernels: (r0 / 2^level)^m.
pub fn level_scale(level: u32, r0: f64, m: i32) -> f64 {
    (r0 / f64::from(1u32 << level)).powi(m)
}

/// Storage of one compressed M2L operator.
#[derive(Debug, Clone)]
pub enum M2lOp {
    Dense(DMatrix<f64>),
    LowRank { u: DMatrix<f64>, v: DMatrix<f64> },
    Zero { rows: usize, cols: usize },
}

impl M2lOp {
    pub fn rows(&self) -> usize {
        match self {
            M2lOp::Dense(m) => m.nrows(),
            M2lOp::LowRank { u, .. } => u.nrows(),
            M2lOp::Zero { rows, .. } => *rows,
        }
    }

    pub fn cols(&self) -> usize {
        match self {
            M2lOp::Dense(m) => m.ncols(),
            M2lOp::LowRank { v, .. } => v.ncols(),
            M2lOp::Zero { cols, .. } => *cols,
        }
    }

    pub fn stored_floats(&self) -> usize {
        match self {
            M2lOp::Dense(m) => m.len(),
            M2lOp::LowRank { u, v } => u.len() + v.len(),
            M2lOp::Zero { .. } => 0,
        }
    }

    /// acc += scale * op * q. `scratch` must hold at least the factor rank.
    pub fn apply_scaled_into(
        &self,
        q: &DVector<f64>,
        scale: f64,
        scratch: &mut DVector<f64>,
        acc: &mut DVector<f64>,
    ) {
        match self {
            M2lOp::Dense(m) => acc.gemv(scale, m, q, 1.0),
            M2lOp::LowRank { u, v } => {
                let rank = v.nrows();
                if rank == 0 {
                    return;
                }
                {
                    let mut mid = scratch.rows_mut(0, rank);
                    mid.gemv(1.0, v, q, 0.0);
                }
                acc.gemv(scale, u, &scratch.rows(0, rank), 1.0);
            }
            M2lOp::Zero { .. } => {}
        }
    }
}

/// The full compressed M2L set at unit halfwidth, plus per-offset
/// factorization ranks for reporting.
#[derive(Debug, Clone)]
pub struct CompressedM2l {
    pub ops: Vec<M2lOp>,
    pub ranks: Vec<usize>,
    pub epsilon2: f64,
}

impl CompressedM2l {
    pub fn stored_floats(&self) -> usize {
        self.ops.iter().map(M2lOp::stored_floats).sum()
    }

    pub fn max_rank(&self) -> usize {
        self.ops
            .iter()
            .map(|op| match op {
                M2lOp::LowRank { v, .. } => v.nrows(),
                _ => 0,
            })
            .max()
            .unwrap_or(0)
    }
}

/// Compress every operator, factor it, and keep whichever representation
/// is cheaper to apply: the pair costs `rank * (rows + cols)` multiplies,
/// the dense block `rows * cols`.
pub fn compress_m2l_set(
    blocks: &[DMatrix<f64>],
    proj: &Projectors,
    eps2: f64,
) -> Result<CompressedM2l> {
    check_block_shapes(blocks)?;
    let compressed: Vec<(M2lOp, usize)> = blocks
        .par_iter()
        .map(|k| {
            let k_tilde = compress_m2l(k, proj);
            let (rows, cols) = k_tilde.shape();
            if eps2 <= 0.0 {
                return (M2lOp::Dense(k_tilde), rows.min(cols));
            }
            let (u, v, rank) = low_rank_factor(&k_tilde, eps2, proj.sigma_max_fat);
            let op = if rank == 0 {
                M2lOp::Zero { rows, cols }
            } else if rank * (rows + cols) < rows * cols {
                M2lOp::LowRank { u, v }
            } else {
                M2lOp::Dense(k_tilde)
            };
            (op, rank)
        })
        .collect();
    let (ops, ranks) = compressed.into_iter().unzip();
    Ok(CompressedM2l {
        ops,
        ranks,
        epsilon2: eps2,
    })
}

/// Pass operators conjugated into the compressed coordinates:
/// S_tilde = R^T S, M_tilde = R^T M R, L_tilde = U^T L U, T_tilde = T U.
#[derive(Debug, Clone)]
pub struct CompressedPassOps {
    /// Composed with the upward density solve: p_col x n.
    pub s_tilde: DMatrix<f64>,
    /// Per child octant, p_col x p_col.
    pub m_tilde: Vec<DMatrix<f64>>,
    /// Per child octant, p_row x p_row.
    pub l_tilde: Vec<DMatrix<f64>>,
    /// Composed with the downward density solve: n x p_row.
    pub t_tilde: DMatrix<f64>,
}

impl CompressedPassOps {
    pub fn stored_floats(&self) -> usize {
        self.s_tilde.len()
            + self.t_tilde.len()
            + self.m_tilde.iter().map(|m| m.len()).sum::<usize>()
            + self.l_tilde.iter().map(|m| m.len()).sum::<usize>()
    }
}

/// Conjugates the pass operators by the projectors.
///
/// `s2m_solve` maps upward check potentials to equivalent densities and
/// `l2t_solve` maps downward check potentials to equivalent densities;
/// both are composed here so the passes work directly on compressed
/// coordinates.
pub fn transform_pass_ops(
    s2m_solve: &DMatrix<f64>,
    m2m: &[DMatrix<f64>],
    l2l: &[DMatrix<f64>],
    l2t_solve: &DMatrix<f64>,
    proj: &Projectors,
) -> Result<CompressedPassOps> {
    let n = proj.u_tilde.nrows();
    for (name, m) in [("s2m_solve", s2m_solve), ("l2t_solve", l2t_solve)] {
        if m.nrows() != n {
            return Err(Error::ShapeMismatch(format!(
                "{name} has {} rows, projectors expect {n}",
                m.nrows()
            )));
        }
    }
    for m in m2m.iter().chain(l2l.iter()) {
        if m.shape() != (n, n) {
            return Err(Error::ShapeMismatch(format!(
                "pass operator has shape {:?}, projectors expect ({n}, {n})",
                m.shape()
            )));
        }
    }
    let rt = proj.r_tilde.transpose();
    let ut = proj.u_tilde.transpose();
    Ok(CompressedPassOps {
        s_tilde: &rt * s2m_solve,
        m_tilde: m2m.iter().map(|m| &rt * m * &proj.r_tilde).collect(),
        l_tilde: l2l.iter().map(|l| &ut * l * &proj.u_tilde).collect(),
        t_tilde: l2t_solve * &proj.u_tilde,
    })
}

/// Spectral norm via SVD; reference-quality, for tests and reports.
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.clone().svd(false, false).singular_values.max()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::KernelSpec;
    use crate::octree::offset_table;
    use crate::surfaces::SurfaceSpec;
    use crate::translation::build_m2l;
    use approx::assert_relative_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn unit_m2l_blocks(p: usize) -> Vec<DMatrix<f64>> {
        let spec = SurfaceSpec::new(p, 0.1).unwrap();
        let kernel = KernelSpec::single();
        offset_table()
            .iter()
            .map(|&o| build_m2l(o, 1.0, &spec, &kernel).unwrap())
            .collect()
    }

    fn random_blocks(n: usize, count: usize, seed: u64) -> Vec<DMatrix<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..count)
            .map(|_| DMatrix::from_fn(n, n, |_, _| rng.random::<f64>() - 0.5))
            .collect()
    }

    #[test]
    fn fat_thin_shapes_and_blocks() {
        let blocks: Vec<DMatrix<f64>> = (0..316)
            .map(|o| DMatrix::from_element(2, 2, o as f64))
            .collect();
        let (fat, thin) = assemble_fat_thin(&blocks).unwrap();
        assert_eq!(fat.shape(), (2, 632));
        assert_eq!(thin.shape(), (632, 2));
        for (o, b) in blocks.iter().enumerate() {
            assert_eq!(fat.view((0, o * 2), (2, 2)).into_owned(), *b);
            assert_eq!(thin.view((o * 2, 0), (2, 2)).into_owned(), *b);
        }
    }

    #[test]
    fn fat_thin_rejects_mixed_shapes() {
        let blocks = vec![DMatrix::zeros(2, 2), DMatrix::zeros(3, 3)];
        assert!(assemble_fat_thin(&blocks).is_err());
    }

    #[test]
    fn thin_blocks_are_transposed_fat_blocks_under_negation() {
        // Symmetric translation-invariant kernel: the thin block at offset o
        // equals the transposed fat block at -o.
        let blocks = unit_m2l_blocks(3);
        let table = offset_table();
        let (fat, thin) = assemble_fat_thin(&blocks).unwrap();
        let n = blocks[0].nrows();
        for (o, &off) in table.iter().enumerate() {
            let neg = (-off.0, -off.1, -off.2);
            let neg_id = crate::octree::offset_id(neg).unwrap() as usize;
            let thin_block = thin.view((o * n, 0), (n, n)).into_owned();
            let fat_block_t = fat.view((0, neg_id * n), (n, n)).transpose();
            let diff = (&thin_block - &fat_block_t).norm() / thin_block.norm();
            assert!(diff <= 1e-14, "offset {off:?}: {diff}");
        }
    }

    #[test]
    fn tiny_eps1_retains_full_dimension() {
        // Well-conditioned toy blocks: nothing is truncated at eps1 -> 0.
        let blocks = random_blocks(6, 8, 1);
        let proj = projectors_from_blocks(&blocks, 1e-16, true).unwrap();
        assert_eq!(proj.retained_row_dim(), 6);
        assert_eq!(proj.retained_col_dim(), 6);
    }

    #[test]
    fn retained_dim_non_increasing_in_eps1() {
        let blocks = unit_m2l_blocks(4);
        let mut dims = Vec::new();
        for eps1 in [1e-6, 1e-4, 1e-2] {
            let proj = projectors_from_blocks(&blocks, eps1, true).unwrap();
            dims.push(proj.retained_row_dim());
        }
        assert!(dims[0] >= dims[1] && dims[1] >= dims[2], "dims {dims:?}");
    }

    #[test]
    fn projector_columns_orthonormal() {
        let blocks = unit_m2l_blocks(4);
        let proj = projectors_from_blocks(&blocks, 1e-4, true).unwrap();
        let eye = DMatrix::identity(proj.retained_row_dim(), proj.retained_row_dim());
        let utu = proj.u_tilde.transpose() * &proj.u_tilde;
        let rtr = proj.r_tilde.transpose() * &proj.r_tilde;
        assert!((utu - &eye).norm() <= 1e-12);
        assert!((rtr - &eye).norm() <= 1e-12);
    }

    #[test]
    fn gram_route_matches_direct_svd() {
        // Small case where the direct SVD of the (n x 316 n) fat matrix is
        // affordable: the retained dimensions and singular values agree.
        let blocks = unit_m2l_blocks(3);
        let eps1 = 1e-3;
        let proj = projectors_from_blocks(&blocks, eps1, true).unwrap();

        let (fat, _) = assemble_fat_thin(&blocks).unwrap();
        let svd = fat.clone().svd(false, false);
        let sigma_max = svd.singular_values.max();
        let direct_dim = svd
            .singular_values
            .iter()
            .filter(|&&s| s >= eps1 * sigma_max)
            .count();
        assert_eq!(proj.retained_row_dim(), direct_dim);
        assert_relative_eq!(proj.sigma_max_fat, sigma_max, max_relative = 1e-10);
    }

    #[test]
    fn symmetric_path_matches_general_path() {
        let blocks = unit_m2l_blocks(3);
        let sym = projectors_from_blocks(&blocks, 1e-3, true).unwrap();
        let (fat, thin) = assemble_fat_thin(&blocks).unwrap();
        let gen = compute_projectors(&fat, &thin, 1e-3, false).unwrap();
        assert_eq!(sym.retained_row_dim(), gen.retained_row_dim());
        assert_eq!(sym.retained_col_dim(), gen.retained_col_dim());
        // Subspaces agree: || U_sym U_sym^T - U_gen U_gen^T || small.
        let ps = &sym.u_tilde * sym.u_tilde.transpose();
        let pg = &gen.u_tilde * gen.u_tilde.transpose();
        assert!((ps - pg).norm() <= 1e-8);
    }

    #[test]
    fn first_stage_reconstruction_bound() {
        let blocks = unit_m2l_blocks(4);
        let eps1 = 1e-3;
        let proj = projectors_from_blocks(&blocks, eps1, true).unwrap();
        let bound = 2.0 * eps1 * proj.sigma_max_fat;
        for k in &blocks {
            let k_tilde = compress_m2l(k, &proj);
            let rec = &proj.u_tilde * &k_tilde * proj.r_tilde.transpose();
            let err = spectral_norm(&(rec - k));
            assert!(err <= bound, "{err} > {bound}");
        }
    }

    #[test]
    fn identity_projectors_reconstruct_exactly() {
        let blocks = random_blocks(5, 3, 9);
        let proj = Projectors::identity(5);
        for k in &blocks {
            let k_tilde = compress_m2l(k, &proj);
            let rec = &proj.u_tilde * &k_tilde * proj.r_tilde.transpose();
            assert!((rec - k).norm() <= 1e-12 * k.norm());
        }
        let zero = DMatrix::<f64>::zeros(5, 5);
        assert_eq!(compress_m2l(&zero, &proj), zero);
    }

    #[test]
    fn square_orthonormal_projectors_reconstruct() {
        // eps1 -> 0 on well-conditioned blocks gives square orthonormal
        // projectors: reconstruction is exact to machine precision.
        let blocks = random_blocks(6, 8, 2);
        let proj = projectors_from_blocks(&blocks, 1e-15, true).unwrap();
        assert_eq!(proj.retained_row_dim(), 6);
        for k in &blocks {
            let k_tilde = compress_m2l(k, &proj);
            let rec = &proj.u_tilde * &k_tilde * proj.r_tilde.transpose();
            assert!((rec - k).norm() <= 1e-12 * k.norm());
        }
    }

    #[test]
    fn low_rank_factor_eps2_zero_is_exact() {
        let blocks = random_blocks(7, 1, 5);
        let (u, v, rank) = low_rank_factor(&blocks[0], 0.0, 1.0);
        assert_eq!(rank, 7);
        assert!((&u * &v - &blocks[0]).norm() <= 1e-12 * blocks[0].norm());
    }

    #[test]
    fn low_rank_factor_respects_bound() {
        let blocks = unit_m2l_blocks(4);
        let eps1 = 1e-3;
        let proj = projectors_from_blocks(&blocks, eps1, true).unwrap();
        let eps2 = epsilon2(10.0, eps1, proj.retained_row_dim());
        for k in &blocks {
            let k_tilde = compress_m2l(k, &proj);
            let (u, v, _) = low_rank_factor(&k_tilde, eps2, proj.sigma_max_fat);
            let err = spectral_norm(&(&u * &v - &k_tilde));
            assert!(err <= eps2 * proj.sigma_max_fat);
        }
    }

    #[test]
    fn rank_zero_becomes_zero_operator() {
        let blocks = random_blocks(4, 2, 3);
        // Absurd threshold truncates everything.
        let (u, v, rank) = low_rank_factor(&blocks[0], 1.0, 1e9);
        assert_eq!(rank, 0);
        assert_eq!(u.shape(), (4, 0));
        assert_eq!(v.shape(), (0, 4));
    }

    #[test]
    fn rank_non_increasing_in_eps2() {
        let blocks = unit_m2l_blocks(4);
        let proj = projectors_from_blocks(&blocks, 1e-4, true).unwrap();
        let k_tilde = compress_m2l(&blocks[0], &proj);
        let mut ranks = Vec::new();
        for eps2 in [1e-10, 1e-7, 1e-4] {
            let (_, _, rank) = low_rank_factor(&k_tilde, eps2, proj.sigma_max_fat);
            ranks.push(rank);
        }
        assert!(ranks[0] >= ranks[1] && ranks[1] >= ranks[2]);
    }

    #[test]
    fn epsilon_formulas() {
        assert_relative_eq!(epsilon1(0.1, 1), 0.05);
        assert_relative_eq!(epsilon1(0.1, 5), 6.25e-4);
        assert_relative_eq!(epsilon1(0.5, 4), 7.8125e-3);
        assert_relative_eq!(epsilon2(10.0, 1e-3, 100), 1e-4);
        assert_eq!(epsilon2(0.0, 1e-3, 84), 0.0);
        assert_relative_eq!(
            epsilon2(100.0, 6.25e-4, 84),
            100.0 * 6.25e-4 / 84.0,
            max_relative = 1e-12
        );
    }

    #[test]
    fn level_scale_values() {
        assert_eq!(level_scale(1, 1.0, -1), 2.0);
        assert_eq!(level_scale(0, 2.0, -1), 0.5);
        assert_eq!(level_scale(2, 1.0, -2), 16.0);
    }

    #[test]
    fn storage_rule_never_increases_apply_cost() {
        let blocks = unit_m2l_blocks(4);
        let eps1 = 1e-3;
        let proj = projectors_from_blocks(&blocks, eps1, true).unwrap();
        let eps2 = epsilon2(10.0, eps1, proj.retained_row_dim());
        let set = compress_m2l_set(&blocks, &proj, eps2).unwrap();
        let dense_cost = proj.retained_row_dim() * proj.retained_col_dim();
        for op in &set.ops {
            let cost = match op {
                M2lOp::Dense(m) => m.len(),
                M2lOp::LowRank { u, v } => u.len() + v.len(),
                M2lOp::Zero { .. } => 0,
            };
            assert!(cost <= dense_cost);
        }
        // eps2 = 0 keeps every block dense.
        let set0 = compress_m2l_set(&blocks, &proj, 0.0).unwrap();
        assert!(set0.ops.iter().all(|op| matches!(op, M2lOp::Dense(_))));
        assert!(set0
            .ranks
            .iter()
            .all(|&r| r == proj.retained_row_dim().min(proj.retained_col_dim())));
    }

    #[test]
    fn m2l_op_apply_matches_dense() {
        let blocks = unit_m2l_blocks(4);
        let proj = projectors_from_blocks(&blocks, 1e-4, true).unwrap();
        let eps2 = epsilon2(10.0, proj.epsilon1, proj.retained_row_dim());
        let set = compress_m2l_set(&blocks, &proj, eps2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let q = DVector::from_fn(proj.retained_col_dim(), |_, _| rng.random::<f64>() - 0.5);
        let mut scratch = DVector::zeros(proj.retained_col_dim().max(proj.retained_row_dim()));
        for (op, k) in set.ops.iter().zip(&blocks) {
            let k_tilde = compress_m2l(k, &proj);
            let mut acc = DVector::zeros(proj.retained_row_dim());
            op.apply_scaled_into(&q, 2.0, &mut scratch, &mut acc);
            let reference = 2.0 * (&k_tilde * &q);
            let tol = 2.0 * eps2 * proj.sigma_max_fat * q.norm() + 1e-13;
            assert!((acc - reference).norm() <= tol);
        }
    }

    #[test]
    fn transform_pass_ops_with_identity_projectors() {
        let n = 6;
        let blocks = random_blocks(n, 1, 12);
        let proj = Projectors::identity(n);
        let s = random_blocks(n, 1, 13).pop().unwrap();
        let t = random_blocks(n, 1, 14).pop().unwrap();
        let m2m: Vec<DMatrix<f64>> = (0..8).map(|i| random_blocks(n, 1, 20 + i).pop().unwrap()).collect();
        let l2l: Vec<DMatrix<f64>> = (0..8).map(|i| random_blocks(n, 1, 30 + i).pop().unwrap()).collect();
        let ops = transform_pass_ops(&s, &m2m, &l2l, &t, &proj).unwrap();
        for (mt, m) in ops.m_tilde.iter().zip(&m2m) {
            assert!((mt - m).norm() <= 1e-12 * m.norm());
        }
        for (lt, l) in ops.l_tilde.iter().zip(&l2l) {
            assert!((lt - l).norm() <= 1e-12 * l.norm());
        }
        assert!((&ops.s_tilde - &s).norm() <= 1e-12 * s.norm());
        assert!((&ops.t_tilde - &t).norm() <= 1e-12 * t.norm());
        drop(blocks);
    }

    #[test]
    fn t_tilde_is_t_composed_with_u() {
        let blocks = unit_m2l_blocks(3);
        let proj = projectors_from_blocks(&blocks, 1e-3, true).unwrap();
        let n = blocks[0].nrows();
        let t = random_blocks(n, 1, 40).pop().unwrap();
        let s = DMatrix::identity(n, n);
        let m2m = vec![DMatrix::identity(n, n); 8];
        let l2l = vec![DMatrix::identity(n, n); 8];
        let ops = transform_pass_ops(&s, &m2m, &l2l, &t, &proj).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(50);
        let p_compressed = DVector::from_fn(proj.retained_row_dim(), |_, _| rng.random::<f64>());
        let via_t_tilde = &ops.t_tilde * &p_compressed;
        let via_expansion = &t * (&proj.u_tilde * &p_compressed);
        assert!((via_t_tilde - via_expansion).norm() <= 1e-12);
    }
}
