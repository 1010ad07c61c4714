//! Triangle surface meshes with per-element centroids, areas and normals.

use crate::error::{Error, Result};
use nalgebra::{Point3, Vector3};
use std::collections::BTreeMap;
use std::path::Path;

/// Relative area floor below which a triangle counts as degenerate.
pub const DEGENERATE_AREA_REL: f64 = 1e-14;

#[derive(Debug, Clone)]
pub struct TriMesh {
    pub vertices: Vec<Point3<f64>>,
    pub triangles: Vec<[usize; 3]>,
    pub centroids: Vec<Point3<f64>>,
    pub areas: Vec<f64>,
    /// Unit normals following the winding order of each triangle.
    pub normals: Vec<Vector3<f64>>,
}

impl TriMesh {
    /// Validates and derives centroids, areas and normals.
    ///
    /// Degenerate triangles (area below `1e-14 * scale^2`) and, for closed
    /// meshes, inward orientation (signed volume <= 0) are rejected.
    pub fn new(vertices: Vec<Point3<f64>>, triangles: Vec<[usize; 3]>) -> Result<Self> {
        if triangles.is_empty() {
            return Err(Error::Mesh("mesh has no triangles".into()));
        }
        for (t, tri) in triangles.iter().enumerate() {
            for &v in tri {
                if v >= vertices.len() {
                    return Err(Error::Mesh(format!(
                        "triangle {t} references vertex {v}, mesh has {}",
                        vertices.len()
                    )));
                }
            }
        }
        let scale = crate::kernel::bounding_diameter(vertices.iter());
        if scale <= 0.0 {
            return Err(Error::Mesh("mesh vertices are all coincident".into()));
        }
        let mut centroids = Vec::with_capacity(triangles.len());
        let mut areas = Vec::with_capacity(triangles.len());
        let mut normals = Vec::with_capacity(triangles.len());
        for (t, tri) in triangles.iter().enumerate() {
            let [a, b, c] = [vertices[tri[0]], vertices[tri[1]], vertices[tri[2]]];
            let cross = (b - a).cross(&(c - a));
            let area = 0.5 * cross.norm();
            if area <= DEGENERATE_AREA_REL * scale * scale {
                return Err(Error::Mesh(format!(
                    "triangle {t} is degenerate (area {area:.3e})"
                )));
            }
            centroids.push(Point3::from((a.coords + b.coords + c.coords) / 3.0));
            areas.push(area);
            normals.push(cross.normalize());
        }
        let mesh = Self {
            vertices,
            triangles,
            centroids,
            areas,
            normals,
        };
        if mesh.is_closed() && mesh.signed_volume() <= 0.0 {
            return Err(Error::Mesh(
                "closed mesh is inward-oriented (signed volume <= 0); \
                 triangles must wind counterclockwise seen from outside"
                    .into(),
            ));
        }
        Ok(mesh)
    }

    pub fn n_elements(&self) -> usize {
        self.triangles.len()
    }

    pub fn vertex_of(&self, element: usize, corner: usize) -> Point3<f64> {
        self.vertices[self.triangles[element][corner]]
    }

    pub fn total_area(&self) -> f64 {
        self.areas.iter().sum()
    }

    /// Volume enclosed by the surface; positive for outward orientation.
    pub fn signed_volume(&self) -> f64 {
        self.triangles
            .iter()
            .map(|tri| {
                let a = self.vertices[tri[0]].coords;
                let b = self.vertices[tri[1]].coords;
                let c = self.vertices[tri[2]].coords;
                a.dot(&b.cross(&c)) / 6.0
            })
            .sum()
    }

    /// True when every edge is shared by exactly two triangles with
    /// opposite direction (watertight, consistently oriented).
    pub fn is_closed(&self) -> bool {
        // Per undirected edge: (signed direction count, total incidences).
        let mut edges: BTreeMap<(usize, usize), (isize, usize)> = BTreeMap::new();
        for tri in &self.triangles {
            for e in 0..3 {
                let a = tri[e];
                let b = tri[(e + 1) % 3];
                let entry = edges.entry((a.min(b), a.max(b))).or_insert((0, 0));
                entry.0 += if a < b { 1 } else { -1 };
                entry.1 += 1;
            }
        }
        edges.values().all(|&(signed, count)| signed == 0 && count == 2)
    }

    /// Longest edge of one element.
    pub fn element_diameter(&self, element: usize) -> f64 {
        let tri = self.triangles[element];
        let [a, b, c] = [
            self.vertices[tri[0]],
            self.vertices[tri[1]],
            self.vertices[tri[2]],
        ];
        (a - b).norm().max((b - c).norm()).max((c - a).norm())
    }

    /// Uniform 4-way refinement by edge midpoints.
    pub fn refined(&self) -> TriMesh {
        let mut vertices = self.vertices.clone();
        let mut midpoint: BTreeMap<(usize, usize), usize> = BTreeMap::new();
        let mut mid = |a: usize, b: usize, vertices: &mut Vec<Point3<f64>>| -> usize {
            let key = (a.min(b), a.max(b));
            *midpoint.entry(key).or_insert_with(|| {
                let p = Point3::from((vertices[a].coords + vertices[b].coords) * 0.5);
                vertices.push(p);
                vertices.len() - 1
            })
        };
        let mut triangles = Vec::with_capacity(self.triangles.len() * 4);
        for tri in &self.triangles {
            let [a, b, c] = *tri;
            let ab = mid(a, b, &mut vertices);
            let bc = mid(b, c, &mut vertices);
            let ca = mid(c, a, &mut vertices);
            triangles.push([a, ab, ca]);
            triangles.push([b, bc, ab]);
            triangles.push([c, ca, bc]);
            triangles.push([ab, bc, ca]);
        }
        TriMesh::new(vertices, triangles).expect("refinement preserves validity")
    }

    /// Loads a mesh, detecting OFF (by header) or the plain `NV NT` format.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref())?;
        let first = text
            .lines()
            .map(str::trim)
            .find(|l| !l.is_empty() && !l.starts_with('#'))
            .ok_or_else(|| Error::Mesh("empty mesh file".into()))?;
        if first.eq_ignore_ascii_case("off") {
            Self::parse_off(&text)
        } else {
            Self::parse_plain(&text)
        }
    }

    /// OFF: `OFF`, then `NV NF NE`, then vertices, then `3 i j k` faces.
    pub fn parse_off(text: &str) -> Result<Self> {
        let mut tokens = meaningful_tokens(text);
        let header = tokens
            .next()
            .ok_or_else(|| Error::Mesh("empty OFF file".into()))?;
        if !header.eq_ignore_ascii_case("off") {
            return Err(Error::Mesh("missing OFF header".into()));
        }
        let nv: usize = parse_token(tokens.next(), "vertex count")?;
        let nf: usize = parse_token(tokens.next(), "face count")?;
        let _ne: usize = parse_token(tokens.next(), "edge count")?;
        let mut vertices = Vec::with_capacity(nv);
        for i in 0..nv {
            let x: f64 = parse_token(tokens.next(), &format!("vertex {i} x"))?;
            let y: f64 = parse_token(tokens.next(), &format!("vertex {i} y"))?;
            let z: f64 = parse_token(tokens.next(), &format!("vertex {i} z"))?;
            vertices.push(Point3::new(x, y, z));
        }
        let mut triangles = Vec::with_capacity(nf);
        for f in 0..nf {
            let arity: usize = parse_token(tokens.next(), &format!("face {f} arity"))?;
            if arity != 3 {
                return Err(Error::Mesh(format!(
                    "face {f} has {arity} vertices; only triangles are supported"
                )));
            }
            let i: usize = parse_token(tokens.next(), &format!("face {f} index 0"))?;
            let j: usize = parse_token(tokens.next(), &format!("face {f} index 1"))?;
            let k: usize = parse_token(tokens.next(), &format!("face {f} index 2"))?;
            triangles.push([i, j, k]);
        }
        Self::new(vertices, triangles)
    }

    /// Plain text: first line `NV NT`, then NV lines `x y z`, then NT lines
    /// `i j k` (0-based).
    pub fn parse_plain(text: &str) -> Result<Self> {
        let mut tokens = meaningful_tokens(text);
        let nv: usize = parse_token(tokens.next(), "vertex count")?;
        let nt: usize = parse_token(tokens.next(), "triangle count")?;
        let mut vertices = Vec::with_capacity(nv);
        for i in 0..nv {
            let x: f64 = parse_token(tokens.next(), &format!("vertex {i} x"))?;
            let y: f64 = parse_token(tokens.next(), &format!("vertex {i} y"))?;
            let z: f64 = parse_token(tokens.next(), &format!("vertex {i} z"))?;
            vertices.push(Point3::new(x, y, z));
        }
        let mut triangles = Vec::with_capacity(nt);
        for t in 0..nt {
            let i: usize = parse_token(tokens.next(), &format!("triangle {t} index 0"))?;
            let j: usize = parse_token(tokens.next(), &format!("triangle {t} index 1"))?;
            let k: usize = parse_token(tokens.next(), &format!("triangle {t} index 2"))?;
            triangles.push([i, j, k]);
        }
        Self::new(vertices, triangles)
    }

    /// Writes the plain `NV NT` format.
    pub fn write_plain(&self, path: impl AsRef<Path>) -> Result<()> {
        use std::io::Write;
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(f, "{} {}", self.vertices.len(), self.triangles.len())?;
        for v in &self.vertices {
            writeln!(f, "{} {} {}", v.x, v.y, v.z)?;
        }
        for t in &self.triangles {
            writeln!(f, "{} {} {}", t[0], t[1], t[2])?;
        }
        Ok(())
    }
}

fn meaningful_tokens(text: &str) -> impl Iterator<Item = &str> {
    text.lines()
        .map(|l| l.split('#').next().unwrap_or(""))
        .flat_map(|l| l.split_whitespace())
}

fn parse_token<T: std::str::FromStr>(token: Option<&str>, what: &str) -> Result<T> {
    let token = token.ok_or_else(|| Error::Mesh(format!("unexpected end of file at {what}")))?;
    token
        .parse()
        .map_err(|_| Error::Mesh(format!("cannot parse {what} from {token:?}")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bem::shapes;
    use approx::assert_relative_eq;

    #[test]
    fn octahedron_geometry() {
        let mesh = shapes::octahedron();
        assert_eq!(mesh.vertices.len(), 6);
        assert_eq!(mesh.n_elements(), 8);
        assert_relative_eq!(mesh.total_area(), 4.0 * 3.0f64.sqrt(), max_relative = 1e-12);
        assert!(mesh.is_closed());
        assert!(mesh.signed_volume() > 0.0);
    }

    #[test]
    fn degenerate_triangle_rejected() {
        let vertices = vec![
            Point3::new(0.0, 0.0, 0.0),
            Point3::new(1.0, 0.0, 0.0),
            Point3::new(2.0, 0.0, 0.0), // collinear
            Point3::new(0.0, 1.0, 0.0),
        ];
        let err = TriMesh::new(vertices, vec![[0, 1, 3], [0, 1, 2]]);
        match err {
            Err(Error::Mesh(msg)) => assert!(msg.contains("triangle 1"), "{msg}"),
            other => panic!("expected degenerate error, got {other:?}"),
        }
    }

    #[test]
    fn icosphere_level3_area_near_sphere() {
        let mesh = shapes::icosphere(3);
        assert_eq!(mesh.n_elements(), 1280);
        assert!(mesh.is_closed());
        let sphere = 4.0 * std::f64::consts::PI;
        assert!((mesh.total_area() - sphere).abs() / sphere < 0.01);
    }

    #[test]
    fn inward_orientation_rejected() {
        let good = shapes::octahedron();
        let flipped: Vec<[usize; 3]> = good
            .triangles
            .iter()
            .map(|t| [t[0], t[2], t[1]])
            .collect();
        assert!(matches!(
            TriMesh::new(good.vertices.clone(), flipped),
            Err(Error::Mesh(_))
        ));
    }

    #[test]
    fn plain_roundtrip_and_off_parse() {
        let mesh = shapes::octahedron();
        let dir = std::env::temp_dir().join("fmm_core_mesh_tests");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("octa.txt");
        mesh.write_plain(&path).unwrap();
        let back = TriMesh::load(&path).unwrap();
        assert_eq!(back.n_elements(), mesh.n_elements());
        assert_eq!(back.vertices.len(), mesh.vertices.len());

        let off = "OFF\n4 2 0\n0 0 0\n1 0 0\n0 1 0\n0 0 1\n3 0 1 2\n3 0 2 3\n";
        let m = TriMesh::parse_off(off).unwrap();
        assert_eq!(m.n_elements(), 2);
        assert!(!m.is_closed());
    }

    #[test]
    fn refinement_quadruples_elements() {
        let mesh = shapes::octahedron();
        let fine = mesh.refined();
        assert_eq!(fine.n_elements(), 32);
        assert!(fine.is_closed());
        assert_relative_eq!(fine.total_area(), mesh.total_area(), max_relative = 1e-12);
    }
}
