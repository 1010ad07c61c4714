//! Uniform-depth octree over source points (or element centroids) with
//! per-cube near fields and interaction lists.
//!
//! Only nonempty cubes are stored; empty cubes never appear in any list,
//! which is safe because they contribute nothing to either pass. Leaves all
//! live at the deepest level. Points on cube faces are assigned half-open
//! (the cube with the larger coordinate wins), except at the global upper
//! boundary.

use crate::error::{Error, Result};
use nalgebra::Point3;
use std::collections::BTreeMap;
use std::sync::OnceLock;

/// Hard cap guarding against pathological clustering.
pub const DEPTH_CAP: u32 = 16;

/// Default relative padding of the root cube.
pub const DEFAULT_PAD: f64 = 1e-6;

pub type CubeIndex = (u32, u32, u32);

#[derive(Debug, Clone)]
pub struct Cube {
    pub level: u32,
    pub index: CubeIndex,
    pub center: Point3<f64>,
    /// Id of the parent within the level above (None at the root).
    pub parent: Option<usize>,
    /// (octant, id) of each nonempty child within the level below.
    pub children: Vec<(u8, usize)>,
    /// Point/element ids owned by this cube (leaves only).
    pub members: Vec<usize>,
    /// Same-level nonempty cubes sharing a vertex, self included.
    pub near: Vec<usize>,
    /// Same-level source cubes this cube receives M2L contributions from,
    /// tagged with the canonical id of (source index - own index), sorted
    /// by offset id.
    pub interaction: Vec<(usize, u16)>,
}

impl Cube {
    /// Octant of this cube within its parent, bits (x, y, z).
    pub fn octant(&self) -> u8 {
        let (i, j, k) = self.index;
        (((i & 1) << 2) | ((j & 1) << 1) | (k & 1)) as u8
    }
}

#[derive(Debug, Clone, Default)]
pub struct Level {
    pub cubes: Vec<Cube>,
    index_of: BTreeMap<CubeIndex, usize>,
}

impl Level {
    pub fn get(&self, index: CubeIndex) -> Option<usize> {
        self.index_of.get(&index).copied()
    }

    pub fn len(&self) -> usize {
        self.cubes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cubes.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct Octree {
    pub root_center: Point3<f64>,
    pub root_halfwidth: f64,
    pub depth: u32,
    /// Nonempty cubes per level, `levels[0]` being the root.
    pub levels: Vec<Level>,
    n_points: usize,
}

/// The canonical 316 interaction offsets: all integer triples in
/// `[-3,3]^3` whose max-norm is at least 2, sorted lexicographically.
pub fn offset_table() -> &'static [(i32, i32, i32)] {
    static TABLE: OnceLock<Vec<(i32, i32, i32)>> = OnceLock::new();
    TABLE.get_or_init(|| {
        let mut table = Vec::with_capacity(316);
        for di in -3..=3 {
            for dj in -3..=3 {
                for dk in -3..=3 {
                    if di.max(dj).max(dk) > 1 || di.min(dj).min(dk) < -1 {
                        table.push((di, dj, dk));
                    }
                }
            }
        }
        table
    })
}

/// Canonical id of an interaction offset, if it is one.
pub fn offset_id(offset: (i32, i32, i32)) -> Option<u16> {
    static IDS: OnceLock<BTreeMap<(i32, i32, i32), u16>> = OnceLock::new();
    let ids = IDS.get_or_init(|| {
        offset_table()
            .iter()
            .enumerate()
            .map(|(i, &o)| (o, i as u16))
            .collect()
    });
    ids.get(&offset).copied()
}

impl Octree {
    /// Builds the tree, computes near fields and interaction lists.
    pub fn build(points: &[Point3<f64>], s_max: usize, pad: f64) -> Result<Self> {
        let mut tree = Self::build_tree(points, s_max, pad)?;
        tree.compute_near_field();
        tree.compute_interaction_lists();
        Ok(tree)
    }

    /// Tree construction only (no lists).
    pub fn build_tree(points: &[Point3<f64>], s_max: usize, pad: f64) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Config("octree needs at least one point".into()));
        }
        if s_max == 0 {
            return Err(Error::Config("s_max must be at least 1".into()));
        }
        if pad < 0.0 {
            return Err(Error::Config("pad must be nonnegative".into()));
        }

        let mut lo = points[0];
        let mut hi = points[0];
        for p in points {
            for k in 0..3 {
                lo[k] = lo[k].min(p[k]);
                hi[k] = hi[k].max(p[k]);
            }
        }
        let root_center = Point3::from((lo.coords + hi.coords) * 0.5);
        let raw_halfwidth = (hi - lo).amax() * 0.5;
        let root_halfwidth = if raw_halfwidth > 0.0 {
            raw_halfwidth * (1.0 + pad)
        } else {
            // All points coincide; any positive width contains them.
            1.0
        };

        // Smallest depth with 8^L * s_max >= N, floored at 2.
        let mut depth: u32 = 2;
        let mut capacity = 64usize.saturating_mul(s_max);
        while capacity < points.len() && depth < DEPTH_CAP {
            depth += 1;
            capacity = capacity.saturating_mul(8);
        }

        loop {
            let leaves = assign_points(points, &root_center, root_halfwidth, depth);
            let worst = leaves.iter().max_by_key(|(_, m)| m.len());
            match worst {
                Some((&index, members)) if members.len() > s_max => {
                    if depth >= DEPTH_CAP {
                        return Err(Error::OverfullLeaf {
                            cap: DEPTH_CAP,
                            index,
                            count: members.len(),
                            s_max,
                        });
                    }
                    depth += 1;
                }
                _ => {
                    return Ok(Self::from_leaves(
                        root_center,
                        root_halfwidth,
                        depth,
                        leaves,
                        points.len(),
                    ));
                }
            }
        }
    }

    fn from_leaves(
        root_center: Point3<f64>,
        root_halfwidth: f64,
        depth: u32,
        leaves: BTreeMap<CubeIndex, Vec<usize>>,
        n_points: usize,
    ) -> Self {
        let mut tree = Octree {
            root_center,
            root_halfwidth,
            depth,
            levels: vec![Level::default(); depth as usize + 1],
            n_points,
        };

        // Leaf level first (BTreeMap iteration gives deterministic order),
        // then each coarser level from the distinct parent indices.
        let mut level = Level::default();
        for (index, members) in leaves {
            let id = level.cubes.len();
            level.index_of.insert(index, id);
            level.cubes.push(Cube {
                level: depth,
                index,
                center: tree.cube_center(depth, index),
                parent: None,
                children: Vec::new(),
                members,
                near: Vec::new(),
                interaction: Vec::new(),
            });
        }
        tree.levels[depth as usize] = level;

        for l in (0..depth).rev() {
            let mut level = Level::default();
            let child_indices: Vec<CubeIndex> = tree.levels[l as usize + 1]
                .cubes
                .iter()
                .map(|c| c.index)
                .collect();
            for (child_id, &(ci, cj, ck)) in child_indices.iter().enumerate() {
                let pindex = (ci / 2, cj / 2, ck / 2);
                let pid = *level.index_of.entry(pindex).or_insert_with(|| {
                    let id = level.cubes.len();
                    level.cubes.push(Cube {
                        level: l,
                        index: pindex,
                        center: tree.cube_center(l, pindex),
                        parent: None,
                        children: Vec::new(),
                        members: Vec::new(),
                        near: Vec::new(),
                        interaction: Vec::new(),
                    });
                    id
                });
                let octant = tree.levels[l as usize + 1].cubes[child_id].octant();
                level.cubes[pid].children.push((octant, child_id));
                tree.levels[l as usize + 1].cubes[child_id].parent = Some(pid);
            }
            tree.levels[l as usize] = level;
        }
        tree
    }

    /// Populates `near` on every cube: same-level stored cubes whose index
    /// triples differ by at most one in each coordinate, self included.
    pub fn compute_near_field(&mut self) {
        for level in &mut self.levels {
            let indices: Vec<CubeIndex> = level.cubes.iter().map(|c| c.index).collect();
            for (id, &(i, j, k)) in indices.iter().enumerate() {
                let mut near = Vec::new();
                for di in -1i64..=1 {
                    for dj in -1i64..=1 {
                        for dk in -1i64..=1 {
                            let ni = i as i64 + di;
                            let nj = j as i64 + dj;
                            let nk = k as i64 + dk;
                            if ni < 0 || nj < 0 || nk < 0 {
                                continue;
                            }
                            if let Some(nid) =
                                level.get((ni as u32, nj as u32, nk as u32))
                            {
                                near.push(nid);
                            }
                        }
                    }
                }
                level.cubes[id].near = near;
            }
        }
    }

    /// Populates `interaction` on every cube at level >= 2: nonempty children
    /// of the parent's near field that are not in the cube's own near field.
    pub fn compute_interaction_lists(&mut self) {
        for l in 2..=self.depth as usize {
            let (coarser, level) = {
                let (a, b) = self.levels.split_at_mut(l);
                (&a[l - 1], &mut b[0])
            };
            for id in 0..level.cubes.len() {
                let (i, j, k) = level.cubes[id].index;
                let parent = level.cubes[id]
                    .parent
                    .expect("cube above root has a parent");
                let mut list: Vec<(usize, u16)> = Vec::new();
                for &pn in &coarser.cubes[parent].near {
                    for &(_, child) in &coarser.cubes[pn].children {
                        let (ci, cj, ck) = level.cubes[child].index;
                        let di = ci as i64 - i as i64;
                        let dj = cj as i64 - j as i64;
                        let dk = ck as i64 - k as i64;
                        if di.abs() <= 1 && dj.abs() <= 1 && dk.abs() <= 1 {
                            continue; // near field
                        }
                        let oid = offset_id((di as i32, dj as i32, dk as i32))
                            .expect("interaction offset within [-3,3]^3");
                        list.push((child, oid));
                    }
                }
                // Fixed accumulation order for deterministic M2L reductions.
                list.sort_unstable_by_key(|&(_, oid)| oid);
                level.cubes[id].interaction = list;
            }
        }
    }

    pub fn halfwidth(&self, level: u32) -> f64 {
        self.root_halfwidth / f64::from(1u32 << level)
    }

    pub fn cube_center(&self, level: u32, index: CubeIndex) -> Point3<f64> {
        let cell = 2.0 * self.halfwidth(level);
        let lo = self.root_center - nalgebra::Vector3::repeat(self.root_halfwidth);
        Point3::new(
            lo.x + (index.0 as f64 + 0.5) * cell,
            lo.y + (index.1 as f64 + 0.5) * cell,
            lo.z + (index.2 as f64 + 0.5) * cell,
        )
    }

    pub fn leaves(&self) -> &Level {
        &self.levels[self.depth as usize]
    }

    pub fn n_points(&self) -> usize {
        self.n_points
    }

    /// Leaf cell index of a point, clamped at the global upper boundary.
    pub fn leaf_index_of(&self, p: &Point3<f64>) -> CubeIndex {
        cell_of(p, &self.root_center, self.root_halfwidth, self.depth)
    }
}

fn cell_of(p: &Point3<f64>, center: &Point3<f64>, halfwidth: f64, depth: u32) -> CubeIndex {
    let n = 1u32 << depth;
    let cell = 2.0 * halfwidth / n as f64;
    let lo = center - nalgebra::Vector3::repeat(halfwidth);
    let clamp = |v: f64| -> u32 {
        let idx = ((v) / cell).floor();
        (idx.max(0.0) as u32).min(n - 1)
    };
    (clamp(p.x - lo.x), clamp(p.y - lo.y), clamp(p.z - lo.z))
}

fn assign_points(
    points: &[Point3<f64>],
    center: &Point3<f64>,
    halfwidth: f64,
    depth: u32,
) -> BTreeMap<CubeIndex, Vec<usize>> {
    let mut leaves: BTreeMap<CubeIndex, Vec<usize>> = BTreeMap::new();
    for (i, p) in points.iter().enumerate() {
        leaves
            .entry(cell_of(p, center, halfwidth, depth))
            .or_default()
            .push(i);
    }
    leaves
}
