//! Triangle meshes with optional per-vertex RGBA colors.

use std::collections::BTreeSet;

use nalgebra::Vector3;

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;
pub type Rgba = [f64; 4];

/// Faces with area below this are rejected.
pub const MIN_FACE_AREA: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    pub vertices: Vec<Vec3>,
    pub faces: Vec<[usize; 3]>,
    pub colors: Option<Vec<Rgba>>,
}

impl Mesh {
    /// Builds a mesh and checks face indices and face areas.
    pub fn new(vertices: Vec<Vec3>, faces: Vec<[usize; 3]>) -> Result<Self> {
        let mesh = Mesh { vertices, faces, colors: None };
        mesh.validate()?;
        Ok(mesh)
    }

    pub fn empty() -> Self {
        Mesh { vertices: Vec::new(), faces: Vec::new(), colors: None }
    }

    pub fn with_colors(mut self, colors: Vec<Rgba>) -> Result<Self> {
        if colors.len() != self.vertices.len() {
            return Err(Error::Dimension(format!(
                "{} colors for {} vertices",
                colors.len(),
                self.vertices.len()
            )));
        }
        self.colors = Some(colors);
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.vertices.len();
        for (f, face) in self.faces.iter().enumerate() {
            for &v in face {
                if v >= n {
                    return Err(Error::FaceIndexOutOfRange { face: f, vertex: v, count: n });
                }
            }
            let area = self.face_area(f);
            if !(area >= MIN_FACE_AREA) {
                return Err(Error::DegenerateFace { face: f, area });
            }
        }
        if let Some(c) = &self.colors {
            if c.len() != n {
                return Err(Error::Dimension(format!("{} colors for {n} vertices", c.len())));
            }
        }
        Ok(())
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn num_faces(&self) -> usize {
        self.faces.len()
    }

    pub fn face_positions(&self, f: usize) -> [Vec3; 3] {
        let [a, b, c] = self.faces[f];
        [self.vertices[a], self.vertices[b], self.vertices[c]]
    }

    /// Unnormalized face normal; its length is twice the face area.
    pub fn face_cross(&self, f: usize) -> Vec3 {
        let [p0, p1, p2] = self.face_positions(f);
        (p1 - p0).cross(&(p2 - p0))
    }

    pub fn face_area(&self, f: usize) -> f64 {
        0.5 * self.face_cross(f).norm()
    }

    pub fn face_areas(&self) -> Vec<f64> {
        (0..self.faces.len()).map(|f| self.face_area(f)).collect()
    }

    pub fn total_area(&self) -> f64 {
        self.face_areas().iter().sum()
    }

    pub fn centroid(&self) -> Vec3 {
        centroid(&self.vertices)
    }

    /// Axis-aligned bounding box `(min, max)`. Zero box for an empty mesh.
    pub fn bbox(&self) -> (Vec3, Vec3) {
        bbox(&self.vertices)
    }

    pub fn bbox_diagonal(&self) -> f64 {
        let (lo, hi) = self.bbox();
        (hi - lo).norm()
    }

    /// Same topology and colors, new positions.
    pub fn with_vertices(&self, vertices: Vec<Vec3>) -> Mesh {
        assert_eq!(vertices.len(), self.vertices.len());
        Mesh { vertices, faces: self.faces.clone(), colors: self.colors.clone() }
    }

    /// Uniformly rescales and recenters so the bounding box fits in `[-1, 1]^3`
    /// with its longest side spanning the full range.
    pub fn normalized(&self) -> Mesh {
        let (lo, hi) = self.bbox();
        let center = (lo + hi) * 0.5;
        let extent = (hi - lo).max();
        let scale = if extent > 0.0 { 2.0 / extent } else { 1.0 };
        let vertices = self.vertices.iter().map(|v| (v - center) * scale).collect();
        self.with_vertices(vertices)
    }

    /// Unique undirected edges as sorted index pairs.
    pub fn edges(&self) -> Vec<[usize; 2]> {
        let mut set = BTreeSet::new();
        for face in &self.faces {
            for k in 0..3 {
                let (a, b) = (face[k], face[(k + 1) % 3]);
                set.insert([a.min(b), a.max(b)]);
            }
        }
        set.into_iter().collect()
    }

    /// Sorted one-ring neighbor lists.
    pub fn vertex_neighbors(&self) -> Vec<Vec<usize>> {
        let mut nbrs = vec![Vec::new(); self.vertices.len()];
        for [a, b] in self.edges() {
            nbrs[a].push(b);
            nbrs[b].push(a);
        }
        for n in &mut nbrs {
            n.sort_unstable();
        }
        nbrs
    }

    /// Connected components of the vertex graph, each sorted ascending.
    pub fn connected_components(&self) -> Vec<Vec<usize>> {
        let n = self.vertices.len();
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(parent: &mut [usize], mut x: usize) -> usize {
            while parent[x] != x {
                parent[x] = parent[parent[x]];
                x = parent[x];
            }
            x
        }
        for face in &self.faces {
            for k in 0..3 {
                let a = find(&mut parent, face[k]);
                let b = find(&mut parent, face[(k + 1) % 3]);
                if a != b {
                    parent[a.max(b)] = a.min(b);
                }
            }
        }
        let mut groups: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
        for v in 0..n {
            let r = find(&mut parent, v);
            groups.entry(r).or_default().push(v);
        }
        groups.into_values().collect()
    }

    /// Area-weighted vertex normals. Isolated vertices get the zero vector.
    pub fn vertex_normals(&self) -> Vec<Vec3> {
        vertex_normals_of(&self.vertices, &self.faces)
    }

    /// Indices of vertices not referenced by any face.
    pub fn isolated_vertices(&self) -> Vec<usize> {
        let mut used = vec![false; self.vertices.len()];
        for face in &self.faces {
            for &v in face {
                used[v] = true;
            }
        }
        used.iter().enumerate().filter(|(_, u)| !**u).map(|(i, _)| i).collect()
    }

    /// Reverses the winding of every face.
    pub fn flipped(&self) -> Mesh {
        let faces = self.faces.iter().map(|&[a, b, c]| [a, c, b]).collect();
        Mesh { vertices: self.vertices.clone(), faces, colors: self.colors.clone() }
    }

    pub fn colors_or_err(&self) -> Result<&[Rgba]> {
        self.colors.as_deref().ok_or(Error::MissingColors)
    }
}

pub fn centroid(points: &[Vec3]) -> Vec3 {
    if points.is_empty() {
        return Vec3::zeros();
    }
    points.iter().fold(Vec3::zeros(), |acc, p| acc + p) / points.len() as f64
}

pub fn bbox(points: &[Vec3]) -> (Vec3, Vec3) {
    if points.is_empty() {
        return (Vec3::zeros(), Vec3::zeros());
    }
    let mut lo = Vec3::repeat(f64::INFINITY);
    let mut hi = Vec3::repeat(f64::NEG_INFINITY);
    for p in points {
        lo = lo.inf(p);
        hi = hi.sup(p);
    }
    (lo, hi)
}

/// Sum of incident face cross products (area weighting), normalized.
pub fn vertex_normals_of(vertices: &[Vec3], faces: &[[usize; 3]]) -> Vec<Vec3> {
    let mut acc = vec![Vec3::zeros(); vertices.len()];
    for &[a, b, c] in faces {
        let n = (vertices[b] - vertices[a]).cross(&(vertices[c] - vertices[a]));
        acc[a] += n;
        acc[b] += n;
        acc[c] += n;
    }
    acc.into_iter()
        .map(|n| {
            let len = n.norm();
            if len > 0.0 {
                n / len
            } else {
                Vec3::zeros()
            }
        })
        .collect()
}

/// Reverse pass of [`vertex_normals_of`]: maps gradients on the unit normals to
/// gradients on the vertex positions.
pub fn vertex_normals_backward(vertices: &[Vec3], faces: &[[usize; 3]], grad_normals: &[Vec3]) -> Vec<Vec3> {
    let mut acc = vec![Vec3::zeros(); vertices.len()];
    for &[a, b, c] in faces {
        let n = (vertices[b] - vertices[a]).cross(&(vertices[c] - vertices[a]));
        acc[a] += n;
        acc[b] += n;
        acc[c] += n;
    }
    // d(n/|n|) = (I - u u^T) / |n|
    let grad_acc: Vec<Vec3> = acc
        .iter()
        .zip(grad_normals)
        .map(|(n, g)| {
            let len = n.norm();
            if len > 0.0 {
                let u = n / len;
                (g - u * u.dot(g)) / len
            } else {
                Vec3::zeros()
            }
        })
        .collect();
    let mut grad = vec![Vec3::zeros(); vertices.len()];
    for &[a, b, c] in faces {
        let g = grad_acc[a] + grad_acc[b] + grad_acc[c];
        let (pa, pb, pc) = (vertices[a], vertices[b], vertices[c]);
        // n = (pb - pa) x (pc - pa);  d/dpb: g . (dpb x e2) = dpb . (e2 x g)
        let e1 = pb - pa;
        let e2 = pc - pa;
        let gb = e2.cross(&g);
        let gc = g.cross(&e1);
        grad[b] += gb;
        grad[c] += gc;
        grad[a] -= gb + gc;
    }
    grad
}
