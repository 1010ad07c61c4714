//! The FMM matrix-vector product: setup, upward pass, downward pass and
//! near-field pass, in particle and BEM source modes.
//!
//! A plan owns the octree and every operator. All surface-to-surface
//! operators are built once at unit halfwidth: M2M and L2L are scale
//! invariant (a kernel matrix composed with an inverse one), M2L picks up
//! the homogeneous factor `(r0/2^l)^m` at apply time, and the leaf-level
//! density solves absorb `r_leaf^-m`. The upward and downward states are
//! kept in the compressed coordinates throughout; per-leaf S2M and L2T
//! matrices are cached at plan time so one apply is a sweep of small
//! dense products.
//!
//! Determinism: all lists are sorted at build time, every output entry is
//! owned by exactly one parallel task, and accumulation within a task runs
//! in fixed order, so repeated applies are bitwise identical.

use crate::bem::quadrature::{element_integral, Element, ElementQuadrature};
use crate::bem::TriMesh;
use crate::compression::{
    self, compress_m2l_set, epsilon1, epsilon2, level_scale, transform_pass_ops, CompressedM2l,
    Projectors,
};
use crate::error::{Error, Result};
use crate::kernel::{single_layer_value, KernelSpec, Layer, COINCIDENCE_REL};
use crate::octree::{offset_table, Octree};
use crate::surfaces::{bem_offset, SurfaceRole, SurfaceSpec};
use crate::translation::{build_equiv_solver, build_l2l, build_m2l, build_m2m, CubeGeometry, SolveRole};
use nalgebra::{DMatrix, DVector, Point3};
use rayon::prelude::*;
use std::sync::Arc;
use std::time::Instant;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FmmMode {
    Particle,
    Bem,
}

/// Tunables of the compression scheme and the tree.
#[derive(Debug, Clone, PartialEq)]
pub struct FmmConfig {
    /// Surface points per cube edge.
    pub p: usize,
    /// Leaf occupancy bound.
    pub s_max: usize,
    /// First-stage threshold coefficient: eps1 = C1 * 2^-L / L.
    pub c1: f64,
    /// Second-stage coefficient: eps2 = C2 * eps1 / p_tilde. Zero disables
    /// the low-rank stage.
    pub c2: f64,
    /// BEM surface offset coefficient: d = C_d / sqrt(s_max).
    pub c_d: f64,
    /// Surface offset in particle mode.
    pub d_particle: f64,
    /// Relative singular-value cutoff of the equivalent-density solves.
    pub pinv_cutoff: f64,
    /// Cache near-field blocks; defaults to false for particles and true
    /// for BEM (where each block entry is an element integral).
    pub near_cache: Option<bool>,
    /// Dense uncompressed M2L baseline (identity projectors, no stage two).
    pub uncompressed_m2l: bool,
    /// Relative root padding.
    pub pad: f64,
}

impl Default for FmmConfig {
    fn default() -> Self {
        Self {
            p: 6,
            s_max: 100,
            c1: 0.1,
            c2: 10.0,
            c_d: 0.5,
            d_particle: 0.1,
            pinv_cutoff: 1e-12,
            near_cache: None,
            uncompressed_m2l: false,
            pad: crate::octree::DEFAULT_PAD,
        }
    }
}

impl FmmConfig {
    fn validate(&self) -> Result<()> {
        if self.p < 2 {
            return Err(Error::Config(format!("p must be at least 2, got {}", self.p)));
        }
        if self.s_max == 0 {
            return Err(Error::Config("s_max must be at least 1".into()));
        }
        if self.c1 <= 0.0 {
            return Err(Error::Config(format!("C1 must be positive, got {}", self.c1)));
        }
        if self.c2 < 0.0 {
            return Err(Error::Config(format!(
                "C2 must be nonnegative, got {}",
                self.c2
            )));
        }
        if !(self.pinv_cutoff > 0.0 && self.pinv_cutoff <= 1.0) {
            return Err(Error::Config(format!(
                "pinv cutoff must lie in (0, 1], got {}",
                self.pinv_cutoff
            )));
        }
        Ok(())
    }
}

/// Wall-clock breakdown of one apply (plus the plan setup time).
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PhaseTimings {
    pub setup: f64,
    pub upward: f64,
    pub m2l: f64,
    pub downward: f64,
    pub near: f64,
    pub total: f64,
}

/// Per-level, per-cube state vectors.
pub type LevelVectors = Vec<Vec<DVector<f64>>>;

/// Everything independent of the source kernel: tree, surfaces, projectors,
/// translation operators and the per-leaf L2T cache.
#[derive(Debug)]
pub struct PlanCore {
    pub tree: Octree,
    pub config: FmmConfig,
    pub surf: SurfaceSpec,
    pub mode: FmmMode,
    pub mesh: Option<TriMesh>,
    /// Particle points, or element centroids in BEM mode.
    pub targets: Vec<Point3<f64>>,
    pub proj: Projectors,
    /// Unit-halfwidth compressed M2L set.
    pub m2l: CompressedM2l,
    /// Compressed M2M per child octant.
    pub m_tilde: Vec<DMatrix<f64>>,
    /// Compressed L2L per child octant.
    pub l_tilde: Vec<DMatrix<f64>>,
    /// Leaf-level compressed upward density solve (p_col x n_surface).
    pub up_solve_leaf: DMatrix<f64>,
    /// Leaf-level downward expansion (n_surface x p_row).
    pub down_solve_leaf: DMatrix<f64>,
    /// Per-leaf compressed L2T matrix (leaf targets x p_row).
    pub t_tilde_leaf: Vec<DMatrix<f64>>,
    pub quad: ElementQuadrature,
    pub scene_diameter: f64,
    pub epsilon1: f64,
    pub epsilon2: f64,
    setup_seconds: f64,
}

/// Source-kernel-dependent data: per-leaf S2M matrices and the near field.
#[derive(Debug)]
struct SourceOps {
    layer: Layer,
    /// Per-leaf compressed S2M matrix (p_col x leaf members).
    s_tilde_leaf: Vec<DMatrix<f64>>,
    near: NearStrategy,
    near_stored_floats: usize,
}

#[derive(Debug)]
enum NearStrategy {
    /// Evaluate near interactions on the fly each apply.
    OnTheFly,
    /// Per target leaf, dense blocks parallel to its near list.
    Cached(Vec<Vec<DMatrix<f64>>>),
}

/// An immutable FMM plan; `apply` never mutates it and may be called
/// concurrently.
#[derive(Debug)]
pub struct FmmPlan {
    core: Arc<PlanCore>,
    source: SourceOps,
}

impl FmmPlan {
    /// Plans the particle summation p_i = sum_j G(x_i, y_j) q_j (i != j).
    pub fn new_particles(points: Vec<Point3<f64>>, config: FmmConfig) -> Result<Self> {
        let core = Arc::new(PlanCore::build(FmmMode::Particle, points, None, config)?);
        let source = SourceOps::build(&core, Layer::Single)?;
        Ok(Self { core, source })
    }

    /// Plans the BEM layer-potential operator with collocation at element
    /// centroids.
    pub fn new_bem(mesh: TriMesh, layer: Layer, config: FmmConfig) -> Result<Self> {
        let centroids = mesh.centroids.clone();
        let core = Arc::new(PlanCore::build(FmmMode::Bem, centroids, Some(mesh), config)?);
        let source = SourceOps::build(&core, layer)?;
        Ok(Self { core, source })
    }

    /// A plan for the other layer kernel sharing this plan's tree,
    /// projectors and translation operators (BEM mode only). Only the
    /// source-side integration (S2M right-hand sides and near blocks)
    /// is rebuilt.
    pub fn with_layer(&self, layer: Layer) -> Result<Self> {
        if self.core.mode != FmmMode::Bem {
            return Err(Error::Config(
                "with_layer applies to BEM plans; particles have no normals".into(),
            ));
        }
        Ok(Self {
            core: Arc::clone(&self.core),
            source: SourceOps::build(&self.core, layer)?,
        })
    }

    pub fn core(&self) -> &PlanCore {
        &self.core
    }

    pub fn layer(&self) -> Layer {
        self.source.layer
    }

    pub fn len(&self) -> usize {
        self.core.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.core.targets.is_empty()
    }

    pub fn depth(&self) -> u32 {
        self.core.tree.depth
    }

    pub fn retained_dims(&self) -> (usize, usize) {
        (
            self.core.proj.retained_row_dim(),
            self.core.proj.retained_col_dim(),
        )
    }

    pub fn setup_seconds(&self) -> f64 {
        self.core.setup_seconds
    }

    /// Bytes of stored operators and near blocks.
    pub fn memory_bytes(&self) -> usize {
        let core = &self.core;
        let core_floats = core.m2l.stored_floats()
            + core.m_tilde.iter().map(|m| m.len()).sum::<usize>()
            + core.l_tilde.iter().map(|m| m.len()).sum::<usize>()
            + core.up_solve_leaf.len()
            + core.down_solve_leaf.len()
            + core.proj.u_tilde.len()
            + core.proj.r_tilde.len()
            + core.t_tilde_leaf.iter().map(|m| m.len()).sum::<usize>();
        let source_floats = self
            .source
            .s_tilde_leaf
            .iter()
            .map(|m| m.len())
            .sum::<usize>()
            + self.source.near_stored_floats;
        (core_floats + source_floats) * std::mem::size_of::<f64>()
    }

    /// Full matrix-vector product: near + far.
    pub fn apply(&self, q: &[f64]) -> Result<Vec<f64>> {
        self.apply_with_timings(q).map(|(p, _)| p)
    }

    pub fn apply_with_timings(&self, q: &[f64]) -> Result<(Vec<f64>, PhaseTimings)> {
        if q.len() != self.len() {
            return Err(Error::LengthMismatch {
                expected: self.len(),
                got: q.len(),
            });
        }
        let start = Instant::now();
        let mut timings = PhaseTimings {
            setup: self.core.setup_seconds,
            ..Default::default()
        };

        let tick = Instant::now();
        let upward = self.upward_pass(q);
        timings.upward = tick.elapsed().as_secs_f64();

        let far = self.downward_pass_timed(&upward, &mut timings);

        let tick = Instant::now();
        let near = self.near_pass(q)?;
        timings.near = tick.elapsed().as_secs_f64();

        let out: Vec<f64> = far.iter().zip(&near).map(|(f, n)| f + n).collect();
        timings.total = start.elapsed().as_secs_f64();
        Ok((out, timings))
    }

    /// Upward equivalent densities (compressed coordinates) for all levels.
    pub fn upward_pass(&self, q: &[f64]) -> LevelVectors {
        let core = &self.core;
        let tree = &core.tree;
        let depth = tree.depth as usize;
        let p_col = core.proj.retained_col_dim();
        let mut state: LevelVectors = tree
            .levels
            .iter()
            .map(|level| vec![DVector::zeros(p_col); level.len()])
            .collect();

        // S2M at the leaves.
        let leaf_states: Vec<DVector<f64>> = tree
            .leaves()
            .cubes
            .par_iter()
            .enumerate()
            .map(|(id, cube)| {
                let local = DVector::from_fn(cube.members.len(), |i, _| q[cube.members[i]]);
                &self.source.s_tilde_leaf[id] * local
            })
            .collect();
        state[depth] = leaf_states;

        // M2M towards the root.
        for l in (0..depth).rev() {
            let (coarse, fine) = {
                let (a, b) = state.split_at_mut(l + 1);
                (&mut a[l], &b[0])
            };
            let level = &tree.levels[l];
            coarse
                .par_iter_mut()
                .enumerate()
                .for_each(|(id, out)| {
                    for &(octant, child) in &level.cubes[id].children {
                        out.gemv(1.0, &core.m_tilde[octant as usize], &fine[child], 1.0);
                    }
                });
        }
        state
    }

    /// Far-field potentials at all targets from the upward state.
    pub fn downward_pass(&self, upward: &LevelVectors) -> Vec<f64> {
        let mut timings = PhaseTimings::default();
        self.downward_pass_timed(upward, &mut timings)
    }

    fn downward_pass_timed(&self, upward: &LevelVectors, timings: &mut PhaseTimings) -> Vec<f64> {
        let core = &self.core;
        let tree = &core.tree;
        let depth = tree.depth as usize;
        let p_row = core.proj.retained_row_dim();
        let m = KernelSpec::single().homogeneity_degree();
        let scratch_len = core
            .m2l
            .max_rank()
            .max(core.proj.retained_col_dim())
            .max(1);

        let mut down: LevelVectors = tree
            .levels
            .iter()
            .map(|level| vec![DVector::zeros(p_row); level.len()])
            .collect();

        for l in 2..=depth {
            let level = &tree.levels[l];
            let scale = level_scale(l as u32, tree.root_halfwidth, m);

            // M2L accumulation over the interaction lists.
            let tick = Instant::now();
            let m2l_part: Vec<DVector<f64>> = level
                .cubes
                .par_iter()
                .map(|cube| {
                    let mut acc = DVector::zeros(p_row);
                    let mut scratch = DVector::zeros(scratch_len);
                    for &(src, oid) in &cube.interaction {
                        core.m2l.ops[oid as usize].apply_scaled_into(
                            &upward[l][src],
                            scale,
                            &mut scratch,
                            &mut acc,
                        );
                    }
                    acc
                })
                .collect();
            timings.m2l += tick.elapsed().as_secs_f64();

            // L2L from the parent level, then store.
            let tick = Instant::now();
            let parent_level: &[DVector<f64>] = &down[l - 1];
            let stored: Vec<DVector<f64>> = level
                .cubes
                .par_iter()
                .zip(m2l_part)
                .map(|(cube, mut acc)| {
                    if l > 2 {
                        let parent = cube.parent.expect("level >= 2 cube has a parent");
                        acc.gemv(
                            1.0,
                            &core.l_tilde[cube.octant() as usize],
                            &parent_level[parent],
                            1.0,
                        );
                    }
                    acc
                })
                .collect();
            down[l] = stored;
            timings.downward += tick.elapsed().as_secs_f64();
        }

        // L2T at the leaves.
        let tick = Instant::now();
        let mut out = vec![0.0f64; core.targets.len()];
        let leaf_potentials: Vec<(usize, DVector<f64>)> = tree
            .leaves()
            .cubes
            .par_iter()
            .enumerate()
            .map(|(id, _)| (id, &core.t_tilde_leaf[id] * &down[depth][id]))
            .collect();
        for (id, local) in leaf_potentials {
            let cube = &tree.leaves().cubes[id];
            for (i, &member) in cube.members.iter().enumerate() {
                out[member] = local[i];
            }
        }
        timings.downward += tick.elapsed().as_secs_f64();
        out
    }

    /// Near-field potentials at all targets.
    pub fn near_pass(&self, q: &[f64]) -> Result<Vec<f64>> {
        if q.len() != self.len() {
            return Err(Error::LengthMismatch {
                expected: self.len(),
                got: q.len(),
            });
        }
        let core = &self.core;
        let leaves = core.tree.leaves();
        let mut out = vec![0.0f64; core.targets.len()];

        let per_leaf: Vec<Result<Vec<f64>>> = match &self.source.near {
            NearStrategy::Cached(blocks) => leaves
                .cubes
                .par_iter()
                .enumerate()
                .map(|(id, cube)| {
                    let mut local = DVector::zeros(cube.members.len());
                    for (block, &nid) in blocks[id].iter().zip(&cube.near) {
                        let src = &leaves.cubes[nid];
                        let qs = DVector::from_fn(src.members.len(), |j, _| q[src.members[j]]);
                        local.gemv(1.0, block, &qs, 1.0);
                    }
                    Ok(local.as_slice().to_vec())
                })
                .collect(),
            NearStrategy::OnTheFly => leaves
                .cubes
                .par_iter()
                .map(|cube| self.near_leaf_on_the_fly(cube, q))
                .collect(),
        };
        for (cube, local) in leaves.cubes.iter().zip(per_leaf) {
            let local = local?;
            for (i, &member) in cube.members.iter().enumerate() {
                out[member] = local[i];
            }
        }
        Ok(out)
    }

    fn near_leaf_on_the_fly(&self, cube: &crate::octree::Cube, q: &[f64]) -> Result<Vec<f64>> {
        let core = &self.core;
        let leaves = core.tree.leaves();
        let threshold = COINCIDENCE_REL * core.scene_diameter;
        let mut local = vec![0.0f64; cube.members.len()];
        match core.mode {
            FmmMode::Particle => {
                for (i, &ti) in cube.members.iter().enumerate() {
                    let x = &core.targets[ti];
                    let mut sum = 0.0;
                    for &nid in &cube.near {
                        for &sj in &leaves.cubes[nid].members {
                            if sj == ti {
                                continue;
                            }
                            let y = &core.targets[sj];
                            if (x - y).norm() < threshold {
                                return Err(Error::CoincidentPoints {
                                    target: [x.x, x.y, x.z],
                                    source_point: [y.x, y.y, y.z],
                                    pair: Some((ti, sj)),
                                });
                            }
                            sum += single_layer_value(x, y) * q[sj];
                        }
                    }
                    local[i] = sum;
                }
            }
            FmmMode::Bem => {
                let mesh = core.mesh.as_ref().expect("BEM mode has a mesh");
                for (i, &ti) in cube.members.iter().enumerate() {
                    let x = &core.targets[ti];
                    let mut sum = 0.0;
                    for &nid in &cube.near {
                        for &sj in &leaves.cubes[nid].members {
                            let elem = Element::from_mesh(mesh, sj);
                            sum += element_integral(&elem, x, self.source.layer, &core.quad)
                                * q[sj];
                        }
                    }
                    local[i] = sum;
                }
            }
        }
        Ok(local)
    }

    /// Checks the BEM surface-enclosure restriction: every vertex of every
    /// leaf element lies strictly inside the leaf's upward-equivalent
    /// surface.
    pub fn validate_bem_enclosure(&self) -> Result<()> {
        let core = &self.core;
        let mesh = core
            .mesh
            .as_ref()
            .ok_or_else(|| Error::Config("enclosure check applies to BEM plans".into()))?;
        let tree = &core.tree;
        let r = tree.halfwidth(tree.depth);
        let bound = SurfaceRole::UpwardEquivalent.halfwidth_factor(core.surf.d()) * r;
        for cube in &tree.leaves().cubes {
            for &e in &cube.members {
                for corner in 0..3 {
                    let v = mesh.vertex_of(e, corner);
                    let excess = (v - cube.center).amax();
                    if excess >= bound {
                        return Err(Error::Mesh(format!(
                            "element {e} vertex {corner} extrudes from the upward-equivalent \
                             surface of leaf {:?} ({excess:.4} >= {bound:.4}); \
                             increase C_d or s_max",
                            cube.index
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

impl PlanCore {
    fn build(
        mode: FmmMode,
        points: Vec<Point3<f64>>,
        mesh: Option<TriMesh>,
        config: FmmConfig,
    ) -> Result<Self> {
        let start = Instant::now();
        config.validate()?;
        let d = match mode {
            FmmMode::Particle => config.d_particle,
            FmmMode::Bem => bem_offset(config.s_max, config.c_d)?,
        };
        let surf = SurfaceSpec::new(config.p, d)?;
        let tree = Octree::build(&points, config.s_max, config.pad)?;
        let scene_diameter = crate::kernel::bounding_diameter(points.iter()).max(f64::MIN_POSITIVE);
        let single = KernelSpec::single();
        let n = surf.n_points();

        // Unit-halfwidth solvers and pass operators.
        let unit = CubeGeometry::unit();
        let ue = surf.cloud(SurfaceRole::UpwardEquivalent, &unit.center, unit.halfwidth);
        let uc = surf.cloud(SurfaceRole::UpwardCheck, &unit.center, unit.halfwidth);
        let de = surf.cloud(SurfaceRole::DownwardEquivalent, &unit.center, unit.halfwidth);
        let dc = surf.cloud(SurfaceRole::DownwardCheck, &unit.center, unit.halfwidth);
        let solver_u = build_equiv_solver(
            &ue.points,
            &uc.points,
            &single,
            config.pinv_cutoff,
            SolveRole::Upward,
        )?;
        let solver_d = build_equiv_solver(
            &de.points,
            &dc.points,
            &single,
            config.pinv_cutoff,
            SolveRole::Downward,
        )?;
        let m2m: Vec<DMatrix<f64>> = (0..8)
            .map(|oct| build_m2m(&unit, &solver_u, oct, &surf, &single))
            .collect::<Result<_>>()?;
        let l2l: Vec<DMatrix<f64>> = (0..8)
            .map(|oct| build_l2l(&unit, &solver_d, oct, &surf, &single))
            .collect::<Result<_>>()?;

        // Unit-halfwidth M2L set, projectors, compression.
        let blocks: Vec<DMatrix<f64>> = offset_table()
            .par_iter()
            .map(|&o| build_m2l(o, 1.0, &surf, &single))
            .collect::<Result<_>>()?;
        let depth = tree.depth;
        let (proj, eps1) = if config.uncompressed_m2l {
            (Projectors::identity(n), 0.0)
        } else {
            let eps1 = epsilon1(config.c1, depth);
            (
                compression::projectors_from_blocks(&blocks, eps1, single.is_symmetric())?,
                eps1,
            )
        };
        let eps2 = if config.uncompressed_m2l || config.c2 <= 0.0 {
            0.0
        } else {
            let p_tilde = proj.retained_row_dim().max(proj.retained_col_dim());
            epsilon2(config.c2, eps1, p_tilde)
        };
        let m2l = compress_m2l_set(&blocks, &proj, eps2)?;
        drop(blocks);
        let pass = transform_pass_ops(
            &solver_u.check_to_equiv,
            &m2m,
            &l2l,
            &solver_d.check_to_equiv,
            &proj,
        )?;

        // Leaf-level scaling: E_leaf = r^m E_unit, so the solves scale by
        // r^-m.
        let r_leaf = tree.halfwidth(depth);
        let inv_scale = r_leaf.powi(-single.homogeneity_degree());
        let up_solve_leaf = &pass.s_tilde * inv_scale;
        let down_solve_leaf = &pass.t_tilde * inv_scale;

        // Per-leaf L2T cache: kernel matrix from the leaf downward
        // equivalent cloud to the leaf targets, composed with the solve.
        let t_tilde_leaf: Vec<DMatrix<f64>> = tree
            .leaves()
            .cubes
            .par_iter()
            .map(|cube| {
                let de_cloud = surf.cloud(SurfaceRole::DownwardEquivalent, &cube.center, r_leaf);
                let g = DMatrix::from_fn(cube.members.len(), n, |i, j| {
                    single_layer_value(&points[cube.members[i]], &de_cloud.points[j])
                });
                g * &down_solve_leaf
            })
            .collect();

        Ok(Self {
            tree,
            config,
            surf,
            mode,
            mesh,
            targets: points,
            proj,
            m2l,
            m_tilde: pass.m_tilde,
            l_tilde: pass.l_tilde,
            up_solve_leaf,
            down_solve_leaf,
            t_tilde_leaf,
            quad: ElementQuadrature::default(),
            scene_diameter,
            epsilon1: eps1,
            epsilon2: eps2,
            setup_seconds: start.elapsed().as_secs_f64(),
        })
    }
}

impl SourceOps {
    fn build(core: &PlanCore, layer: Layer) -> Result<Self> {
        if core.mode == FmmMode::Particle && layer != Layer::Single {
            return Err(Error::Config(
                "particle mode supports the single-layer kernel only".into(),
            ));
        }
        let tree = &core.tree;
        let r_leaf = tree.halfwidth(tree.depth);
        let n = core.surf.n_points();

        // Per-leaf S2M: upward check potentials from unit member densities,
        // then the compressed density solve.
        let s_tilde_leaf: Vec<DMatrix<f64>> = tree
            .leaves()
            .cubes
            .par_iter()
            .map(|cube| {
                let uc = core
                    .surf
                    .cloud(SurfaceRole::UpwardCheck, &cube.center, r_leaf);
                let g = match core.mode {
                    FmmMode::Particle => DMatrix::from_fn(n, cube.members.len(), |i, j| {
                        single_layer_value(&uc.points[i], &core.targets[cube.members[j]])
                    }),
                    FmmMode::Bem => {
                        let mesh = core.mesh.as_ref().expect("BEM mode has a mesh");
                        DMatrix::from_fn(n, cube.members.len(), |i, j| {
                            let elem = Element::from_mesh(mesh, cube.members[j]);
                            element_integral(&elem, &uc.points[i], layer, &core.quad)
                        })
                    }
                };
                &core.up_solve_leaf * g
            })
            .collect();

        let cache = core.config.near_cache.unwrap_or(core.mode == FmmMode::Bem);
        let (near, near_stored_floats) = if cache {
            let leaves = tree.leaves();
            let threshold = COINCIDENCE_REL * core.scene_diameter;
            let blocks: Vec<Result<Vec<DMatrix<f64>>>> = leaves
                .cubes
                .par_iter()
                .map(|cube| {
                    cube.near
                        .iter()
                        .map(|&nid| {
                            let src = &leaves.cubes[nid];
                            near_block(core, layer, cube, src, threshold)
                        })
                        .collect()
                })
                .collect();
            let blocks = blocks.into_iter().collect::<Result<Vec<_>>>()?;
            let floats = blocks
                .iter()
                .flat_map(|bs| bs.iter().map(|b| b.len()))
                .sum();
            (NearStrategy::Cached(blocks), floats)
        } else {
            (NearStrategy::OnTheFly, 0)
        };

        Ok(Self {
            layer,
            s_tilde_leaf,
            near,
            near_stored_floats,
        })
    }
}

fn near_block(
    core: &PlanCore,
    layer: Layer,
    target: &crate::octree::Cube,
    source: &crate::octree::Cube,
    threshold: f64,
) -> Result<DMatrix<f64>> {
    let mut block = DMatrix::zeros(target.members.len(), source.members.len());
    match core.mode {
        FmmMode::Particle => {
            for (i, &ti) in target.members.iter().enumerate() {
                let x = &core.targets[ti];
                for (j, &sj) in source.members.iter().enumerate() {
                    if ti == sj {
                        continue; // the singular self term is excluded
                    }
                    let y = &core.targets[sj];
                    if (x - y).norm() < threshold {
                        return Err(Error::CoincidentPoints {
                            target: [x.x, x.y, x.z],
                            source_point: [y.x, y.y, y.z],
                            pair: Some((ti, sj)),
                        });
                    }
                    block[(i, j)] = single_layer_value(x, y);
                }
            }
        }
        FmmMode::Bem => {
            let mesh = core.mesh.as_ref().expect("BEM mode has a mesh");
            for (j, &sj) in source.members.iter().enumerate() {
                let elem = Element::from_mesh(mesh, sj);
                for (i, &ti) in target.members.iter().enumerate() {
                    block[(i, j)] =
                        element_integral(&elem, &core.targets[ti], layer, &core.quad);
                }
            }
        }
    }
    Ok(block)
}
