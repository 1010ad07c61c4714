//! Built-in geometries for tests, benchmarks and the CLI generators.

use super::mesh::TriMesh;
use nalgebra::{Point3, Vector3};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;

/// Unit octahedron: 6 vertices, 8 equilateral faces, outward orientation.
pub fn octahedron() -> TriMesh {
    let vertices = vec![
        Point3::new(1.0, 0.0, 0.0),
        Point3::new(-1.0, 0.0, 0.0),
        Point3::new(0.0, 1.0, 0.0),
        Point3::new(0.0, -1.0, 0.0),
        Point3::new(0.0, 0.0, 1.0),
        Point3::new(0.0, 0.0, -1.0),
    ];
    let triangles = vec![
        [0, 2, 4],
        [2, 1, 4],
        [1, 3, 4],
        [3, 0, 4],
        [2, 0, 5],
        [1, 2, 5],
        [3, 1, 5],
        [0, 3, 5],
    ];
    TriMesh::new(vertices, triangles).expect("octahedron is valid")
}

/// Unit icosphere: icosahedron subdivided `subdivisions` times with vertices
/// projected to the sphere; 20 * 4^subdivisions triangles.
pub fn icosphere(subdivisions: u32) -> TriMesh {
    let t = (1.0 + 5.0f64.sqrt()) / 2.0;
    let mut vertices: Vec<Point3<f64>> = [
        (-1.0, t, 0.0),
        (1.0, t, 0.0),
        (-1.0, -t, 0.0),
        (1.0, -t, 0.0),
        (0.0, -1.0, t),
        (0.0, 1.0, t),
        (0.0, -1.0, -t),
        (0.0, 1.0, -t),
        (t, 0.0, -1.0),
        (t, 0.0, 1.0),
        (-t, 0.0, -1.0),
        (-t, 0.0, 1.0),
    ]
    .iter()
    .map(|&(x, y, z)| Point3::from(Vector3::new(x, y, z).normalize()))
    .collect();
    let mut triangles: Vec<[usize; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];

    for _ in 0..subdivisions {
        let mut midpoints: BTreeMap<(usize, usize), usize> = BTreeMap::new();
        let mut next = Vec::with_capacity(triangles.len() * 4);
        for tri in &triangles {
            let [a, b, c] = *tri;
            let mut mid = |i: usize, j: usize, vertices: &mut Vec<Point3<f64>>| -> usize {
                let key = (i.min(j), i.max(j));
                *midpoints.entry(key).or_insert_with(|| {
                    let p = (vertices[i].coords + vertices[j].coords) * 0.5;
                    vertices.push(Point3::from(p.normalize()));
                    vertices.len() - 1
                })
            };
            let ab = mid(a, b, &mut vertices);
            let bc = mid(b, c, &mut vertices);
            let ca = mid(c, a, &mut vertices);
            next.push([a, ab, ca]);
            next.push([b, bc, ab]);
            next.push([c, ca, bc]);
            next.push([ab, bc, ca]);
        }
        triangles = next;
    }
    TriMesh::new(vertices, triangles).expect("icosphere is valid")
}

/// Icosphere scaled to the ellipsoid with semi-axes (a, b, c).
pub fn ellipsoid(subdivisions: u32, a: f64, b: f64, c: f64) -> TriMesh {
    let sphere = icosphere(subdivisions);
    let vertices = sphere
        .vertices
        .iter()
        .map(|p| Point3::new(p.x * a, p.y * b, p.z * c))
        .collect();
    TriMesh::new(vertices, sphere.triangles).expect("ellipsoid is valid")
}

/// Unit cube `[-0.5, 0.5]^3` meshed with `n x n` cells per face,
/// 12 n^2 triangles, watertight and outward-oriented.
pub fn cube_mesh(n: usize) -> TriMesh {
    assert!(n >= 1);
    let mut vertex_ids: BTreeMap<(usize, usize, usize), usize> = BTreeMap::new();
    let mut vertices: Vec<Point3<f64>> = Vec::new();
    let mut vertex =
        |lattice: (usize, usize, usize), vertices: &mut Vec<Point3<f64>>| -> usize {
            *vertex_ids.entry(lattice).or_insert_with(|| {
                let p = Point3::new(
                    -0.5 + lattice.0 as f64 / n as f64,
                    -0.5 + lattice.1 as f64 / n as f64,
                    -0.5 + lattice.2 as f64 / n as f64,
                );
                vertices.push(p);
                vertices.len() - 1
            })
        };

    // (fixed axis, fixed lattice value, u axis, v axis) with u x v outward.
    let faces: [(usize, usize, usize, usize); 6] = [
        (0, n, 1, 2), // +x: u = y, v = z
        (0, 0, 2, 1), // -x: u = z, v = y
        (1, n, 2, 0), // +y: u = z, v = x
        (1, 0, 0, 2), // -y: u = x, v = z
        (2, n, 0, 1), // +z: u = x, v = y
        (2, 0, 1, 0), // -z: u = y, v = x
    ];

    let mut triangles = Vec::with_capacity(12 * n * n);
    for &(axis, fixed, u_axis, v_axis) in &faces {
        let lattice = |u: usize, v: usize| -> (usize, usize, usize) {
            let mut l = [0usize; 3];
            l[axis] = fixed;
            l[u_axis] = u;
            l[v_axis] = v;
            (l[0], l[1], l[2])
        };
        for u in 0..n {
            for v in 0..n {
                let p00 = vertex(lattice(u, v), &mut vertices);
                let p10 = vertex(lattice(u + 1, v), &mut vertices);
                let p01 = vertex(lattice(u, v + 1), &mut vertices);
                let p11 = vertex(lattice(u + 1, v + 1), &mut vertices);
                triangles.push([p00, p10, p11]);
                triangles.push([p00, p11, p01]);
            }
        }
    }
    TriMesh::new(vertices, triangles).expect("cube mesh is valid")
}

/// `n` points uniformly distributed on the unit sphere surface.
pub fn sphere_points(n: usize, seed: u64) -> Vec<Point3<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| loop {
            let v = Vector3::new(
                rng.random::<f64>() * 2.0 - 1.0,
                rng.random::<f64>() * 2.0 - 1.0,
                rng.random::<f64>() * 2.0 - 1.0,
            );
            let norm = v.norm();
            if norm > 1e-6 && norm <= 1.0 {
                break Point3::from(v / norm);
            }
        })
        .collect()
}

/// `n` points uniformly distributed in the unit cube `[0, 1]^3`.
pub fn cube_points(n: usize, seed: u64) -> Vec<Point3<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| Point3::new(rng.random(), rng.random(), rng.random()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn icosphere_counts() {
        for (k, expected) in [(0u32, 20usize), (1, 80), (2, 320), (3, 1280)] {
            let mesh = icosphere(k);
            assert_eq!(mesh.n_elements(), expected);
            assert!(mesh.is_closed());
            assert!(mesh.signed_volume() > 0.0);
            for v in &mesh.vertices {
                assert!((v.coords.norm() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn cube_mesh_watertight() {
        for n in [1usize, 2, 4, 7] {
            let mesh = cube_mesh(n);
            assert_eq!(mesh.n_elements(), 12 * n * n);
            assert!(mesh.is_closed(), "n = {n}");
            assert!((mesh.signed_volume() - 1.0).abs() < 1e-12);
            assert!((mesh.total_area() - 6.0).abs() < 1e-12);
        }
    }

    #[test]
    fn ellipsoid_scales_axes() {
        let mesh = ellipsoid(2, 2.0, 1.0, 3.0);
        assert!(mesh.is_closed());
        let max_x = mesh.vertices.iter().map(|v| v.x.abs()).fold(0.0, f64::max);
        let max_z = mesh.vertices.iter().map(|v| v.z.abs()).fold(0.0, f64::max);
        assert!((max_x - 2.0).abs() < 1e-9);
        assert!((max_z - 3.0).abs() < 1e-9);
    }

    #[test]
    fn generators_are_seeded() {
        assert_eq!(sphere_points(10, 42), sphere_points(10, 42));
        assert_ne!(sphere_points(10, 42), sphere_points(10, 43));
        assert_eq!(cube_points(10, 7), cube_points(10, 7));
        for p in sphere_points(100, 1) {
            assert!((p.coords.norm() - 1.0).abs() < 1e-12);
        }
        for p in cube_points(100, 1) {
            assert!(p.coords.iter().all(|&c| (0.0..=1.0).contains(&c)));
        }
    }
}
