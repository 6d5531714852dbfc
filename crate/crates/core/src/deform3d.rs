//! Mesh deformation through per-face Jacobians.
//!
//! A deformation is described by one 3x3 matrix per face. Vertex positions are
//! recovered by the least-squares Poisson solve `L V = G^T A J`, where `G` is
//! the stacked face gradient, `A` the face areas and `L = G^T A G` the
//! cotangent Laplacian. Vertex 0 is pinned during the solve and the result is
//! translated back onto the original centroid.
//!
//! Two baseline parameterizations share the optimization loop: free vertex
//! positions, and a trilinear grid of offsets over the bounding box.

use nalgebra::Matrix3;

use crate::error::{Error, Result};
use crate::mesh::{centroid, Mesh, Vec3};
use crate::operators::{build_gradient_operator, build_laplacian, LaplacianKind};
use crate::optim::{Adam, LossLog, OptimConfig};
use crate::sparse::{CholeskyFactor, SparseOperator};

/// One 3x3 matrix per face; entry `(c, d)` is the derivative of output
/// coordinate `c` along world direction `d`.
#[derive(Debug, Clone, PartialEq)]
pub struct JacobianField {
    pub mats: Vec<Matrix3<f64>>,
}

impl JacobianField {
    pub fn len(&self) -> usize {
        self.mats.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mats.is_empty()
    }

    pub fn check_finite(&self) -> Result<()> {
        for (t, m) in self.mats.iter().enumerate() {
            if m.iter().any(|x| !x.is_finite()) {
                return Err(Error::Dimension(format!("non-finite Jacobian on face {t}")));
            }
        }
        Ok(())
    }

    /// Row `3t + d` of the stacked `3T x 3` matrix holds column `d` of face `t`.
    pub fn to_stacked(&self) -> Vec<[f64; 3]> {
        let mut out = Vec::with_capacity(3 * self.mats.len());
        for m in &self.mats {
            for d in 0..3 {
                out.push([m[(0, d)], m[(1, d)], m[(2, d)]]);
            }
        }
        out
    }

    pub fn from_stacked(rows: &[[f64; 3]]) -> Self {
        assert_eq!(rows.len() % 3, 0);
        let mats = rows
            .chunks(3)
            .map(|r| Matrix3::from_fn(|c, d| r[d][c]))
            .collect();
        JacobianField { mats }
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.mats.iter().flat_map(|m| m.iter().copied().collect::<Vec<_>>()).collect()
    }

    pub fn from_flat(values: &[f64]) -> Self {
        assert_eq!(values.len() % 9, 0);
        JacobianField { mats: values.chunks(9).map(Matrix3::from_column_slice).collect() }
    }

    pub fn scaled(&self, s: f64) -> Self {
        JacobianField { mats: self.mats.iter().map(|m| m * s).collect() }
    }
}

/// Per-face gradients of the coordinate functions: `J_t = grad_t V`.
pub fn init_jacobians(mesh: &Mesh) -> Result<JacobianField> {
    let g = build_gradient_operator(mesh)?;
    let v: Vec<[f64; 3]> = mesh.vertices.iter().map(|p| [p.x, p.y, p.z]).collect();
    Ok(JacobianField::from_stacked(&g.mul_cols(&v)))
}

/// Factorized Poisson system for one mesh topology and rest shape.
#[derive(Debug, Clone)]
pub struct PoissonSystem {
    gradient: SparseOperator,
    areas: Vec<f64>,
    laplacian: SparseOperator,
    factor: CholeskyFactor,
    /// Original index of each row of the reduced (anchored) system.
    kept: Vec<usize>,
    anchor: usize,
    centroid: Vec3,
    num_vertices: usize,
}

impl PoissonSystem {
    pub fn new(mesh: &Mesh) -> Result<Self> {
        mesh.validate()?;
        let components = mesh.connected_components();
        if components.len() > 1 {
            return Err(Error::Disconnected { components });
        }
        if mesh.num_vertices() < 2 {
            return Err(Error::Dimension("Poisson system needs at least two vertices".into()));
        }
        let gradient = build_gradient_operator(mesh)?;
        let areas = mesh.face_areas();
        let laplacian = build_laplacian(mesh, LaplacianKind::Cotangent)?;
        let anchor = 0;
        let (reduced, kept) = laplacian.without(&[anchor]);
        let factor = CholeskyFactor::new(&reduced)?;
        Ok(PoissonSystem {
            gradient,
            areas,
            laplacian,
            factor,
            kept,
            anchor,
            centroid: mesh.centroid(),
            num_vertices: mesh.num_vertices(),
        })
    }

    pub fn num_vertices(&self) -> usize {
        self.num_vertices
    }

    pub fn num_faces(&self) -> usize {
        self.areas.len()
    }

    pub fn anchor(&self) -> usize {
        self.anchor
    }

    pub fn laplacian(&self) -> &SparseOperator {
        &self.laplacian
    }

    pub fn gradient(&self) -> &SparseOperator {
        &self.gradient
    }

    fn solve_anchored(&self, rhs: &[[f64; 3]]) -> Vec<[f64; 3]> {
        let mut out = vec![[0.0; 3]; self.num_vertices];
        for c in 0..3 {
            let b: Vec<f64> = self.kept.iter().map(|&v| rhs[v][c]).collect();
            let x = self.factor.solve(&b);
            for (r, &v) in self.kept.iter().enumerate() {
                out[v][c] = x[r];
            }
        }
        out
    }

    fn weight_by_area(&self, rows: &mut [[f64; 3]]) {
        for (r, row) in rows.iter_mut().enumerate() {
            let a = self.areas[r / 3];
            for x in row.iter_mut() {
                *x *= a;
            }
        }
    }
}

fn centered(rows: &mut [[f64; 3]]) -> [f64; 3] {
    let n = rows.len() as f64;
    let mut mean = [0.0; 3];
    for r in rows.iter() {
        for c in 0..3 {
            mean[c] += r[c] / n;
        }
    }
    for r in rows.iter_mut() {
        for c in 0..3 {
            r[c] -= mean[c];
        }
    }
    mean
}

/// Vertex positions whose per-face gradients best match `jacobians` in the
/// area-weighted least-squares sense.
pub fn poisson_solve(system: &PoissonSystem, jacobians: &JacobianField) -> Result<Vec<Vec3>> {
    if jacobians.len() != system.num_faces() {
        return Err(Error::Dimension(format!("{} Jacobians for {} faces", jacobians.len(), system.num_faces())));
    }
    jacobians.check_finite()?;
    let mut m = jacobians.to_stacked();
    system.weight_by_area(&mut m);
    let rhs = system.gradient.tr_mul_cols(&m);
    let mut x = system.solve_anchored(&rhs);
    centered(&mut x);
    let c = system.centroid;
    Ok(x.iter().map(|p| Vec3::new(p[0] + c.x, p[1] + c.y, p[2] + c.z)).collect())
}

/// Gradient with respect to the Jacobians of `sum(upstream . poisson_solve(J))`.
pub fn poisson_adjoint(system: &PoissonSystem, upstream: &[Vec3]) -> JacobianField {
    assert_eq!(upstream.len(), system.num_vertices);
    let mut g: Vec<[f64; 3]> = upstream.iter().map(|p| [p.x, p.y, p.z]).collect();
    centered(&mut g);
    let mut gb = system.solve_anchored(&g);
    gb[system.anchor] = [0.0; 3];
    let mut gm = system.gradient.mul_cols(&gb);
    system.weight_by_area(&mut gm);
    JacobianField::from_stacked(&gm)
}

/// `||L V||_F^2` with the uniform graph Laplacian `L`.
pub fn laplacian_smooth_loss(laplacian: &SparseOperator, vertices: &[Vec3]) -> f64 {
    let v: Vec<[f64; 3]> = vertices.iter().map(|p| [p.x, p.y, p.z]).collect();
    laplacian.mul_cols(&v).iter().map(|r| r[0] * r[0] + r[1] * r[1] + r[2] * r[2]).sum()
}

/// Uniform-Laplacian roughness `||L V||_F^2` of a mesh.
pub fn roughness(mesh: &Mesh) -> Result<f64> {
    Ok(laplacian_smooth_loss(&build_laplacian(mesh, LaplacianKind::Uniform)?, &mesh.vertices))
}

/// Laplacian smoothness penalty used inside the optimization loops: the mean
/// squared degree-normalized uniform Laplacian of `V - rest`.
///
/// With `rest` set to the starting shape ([`relative`](Self::relative)) only
/// rough displacements are penalized, so curved rest shapes are not flattened.
/// With `rest = 0` ([`absolute`](Self::absolute)) the surface itself is
/// smoothed. Normalizing by degree and entry count keeps the weight
/// independent of vertex count.
#[derive(Debug, Clone)]
pub struct LaplacianRegularizer {
    op: SparseOperator,
    rest: Vec<Vec3>,
}

impl LaplacianRegularizer {
    pub fn relative(mesh: &Mesh) -> Result<Self> {
        Self::with_rest(mesh, mesh.vertices.clone())
    }

    pub fn absolute(mesh: &Mesh) -> Result<Self> {
        Self::with_rest(mesh, vec![Vec3::zeros(); mesh.num_vertices()])
    }

    fn with_rest(mesh: &Mesh, rest: Vec<Vec3>) -> Result<Self> {
        let l = build_laplacian(mesh, LaplacianKind::Uniform)?;
        let trip = l
            .triplets()
            .map(|(r, c, v)| {
                let deg = l.get(r, r);
                (r, c, if deg > 0.0 { v / deg } else { 0.0 })
            })
            .collect();
        let op = SparseOperator::from_triplets(l.rows(), l.cols(), trip);
        Ok(LaplacianRegularizer { op, rest })
    }

    /// Loss and gradient with respect to `vertices`.
    pub fn evaluate(&self, vertices: &[Vec3]) -> (f64, Vec<Vec3>) {
        let n = (3 * vertices.len()).max(1) as f64;
        let d: Vec<[f64; 3]> = vertices.iter().zip(&self.rest).map(|(p, r)| [p.x - r.x, p.y - r.y, p.z - r.z]).collect();
        let ld = self.op.mul_cols(&d);
        let loss = ld.iter().map(|r| r[0] * r[0] + r[1] * r[1] + r[2] * r[2]).sum::<f64>() / n;
        let scaled: Vec<[f64; 3]> = ld.iter().map(|r| r.map(|x| 2.0 * x / n)).collect();
        let g = self.op.tr_mul_cols(&scaled);
        (loss, g.iter().map(|r| Vec3::new(r[0], r[1], r[2])).collect())
    }
}

/// Loss on vertex positions.
pub struct Evaluation {
    pub total: f64,
    pub terms: Vec<f64>,
    pub grad: Vec<Vec3>,
}

pub trait Objective {
    fn term_names(&self) -> Vec<&'static str>;
    fn evaluate(&mut self, vertices: &[Vec3]) -> Result<Evaluation>;
}

/// A parameterization of vertex positions.
pub trait Deformer {
    fn params(&self) -> &[f64];
    fn params_mut(&mut self) -> &mut [f64];
    fn vertices(&self) -> Result<Vec<Vec3>>;
    /// Pulls vertex gradients back onto the parameters.
    fn backward(&self, grad: &[Vec3]) -> Vec<f64>;
}

pub struct JacobianDeformer {
    system: PoissonSystem,
    params: Vec<f64>,
}

impl JacobianDeformer {
    pub fn new(mesh: &Mesh) -> Result<Self> {
        let system = PoissonSystem::new(mesh)?;
        let params = init_jacobians(mesh)?.to_flat();
        Ok(JacobianDeformer { system, params })
    }

    pub fn jacobians(&self) -> JacobianField {
        JacobianField::from_flat(&self.params)
    }
}

impl Deformer for JacobianDeformer {
    fn params(&self) -> &[f64] {
        &self.params
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn vertices(&self) -> Result<Vec<Vec3>> {
        poisson_solve(&self.system, &self.jacobians())
    }

    fn backward(&self, grad: &[Vec3]) -> Vec<f64> {
        poisson_adjoint(&self.system, grad).to_flat()
    }
}

pub struct VertexDeformer {
    params: Vec<f64>,
}

impl VertexDeformer {
    pub fn new(mesh: &Mesh) -> Self {
        VertexDeformer { params: mesh.vertices.iter().flat_map(|p| [p.x, p.y, p.z]).collect() }
    }
}

impl Deformer for VertexDeformer {
    fn params(&self) -> &[f64] {
        &self.params
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn vertices(&self) -> Result<Vec<Vec3>> {
        Ok(self.params.chunks(3).map(|c| Vec3::new(c[0], c[1], c[2])).collect())
    }

    fn backward(&self, grad: &[Vec3]) -> Vec<f64> {
        grad.iter().flat_map(|g| [g.x, g.y, g.z]).collect()
    }
}

pub const DEFAULT_GRID3D_SIZE: usize = 8;

/// Offsets on an `n^3` lattice spanning the mesh bounding box, interpolated
/// trilinearly at each rest vertex.
pub struct GridDeformer {
    rest: Vec<Vec3>,
    size: usize,
    taps: Vec<[(usize, f64); 8]>,
    params: Vec<f64>,
}

impl GridDeformer {
    pub fn new(mesh: &Mesh, size: usize) -> Self {
        assert!(size >= 2);
        let (lo, hi) = mesh.bbox();
        let extent = (hi - lo).map(|e| e.max(1e-9));
        let n = size;
        let taps = mesh
            .vertices
            .iter()
            .map(|p| {
                let mut cell = [0usize; 3];
                let mut frac = [0.0; 3];
                for a in 0..3 {
                    let u = ((p[a] - lo[a]) / extent[a]).clamp(0.0, 1.0) * (n - 1) as f64;
                    let i = (u.floor() as usize).min(n - 2);
                    cell[a] = i;
                    frac[a] = u - i as f64;
                }
                let mut t = [(0usize, 0.0); 8];
                for (k, slot) in t.iter_mut().enumerate() {
                    let (dx, dy, dz) = (k & 1, (k >> 1) & 1, (k >> 2) & 1);
                    let w = (if dx == 1 { frac[0] } else { 1.0 - frac[0] })
                        * (if dy == 1 { frac[1] } else { 1.0 - frac[1] })
                        * (if dz == 1 { frac[2] } else { 1.0 - frac[2] });
                    let idx = ((cell[2] + dz) * n + cell[1] + dy) * n + cell[0] + dx;
                    *slot = (idx, w);
                }
                t
            })
            .collect();
        GridDeformer { rest: mesh.vertices.clone(), size, taps, params: vec![0.0; 3 * n * n * n] }
    }

    pub fn size(&self) -> usize {
        self.size
    }

    /// Mutable offset of lattice node `(i, j, k)`.
    pub fn node_mut(&mut self, i: usize, j: usize, k: usize) -> &mut [f64] {
        let idx = (k * self.size + j) * self.size + i;
        &mut self.params[3 * idx..3 * idx + 3]
    }
}

impl Deformer for GridDeformer {
    fn params(&self) -> &[f64] {
        &self.params
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn vertices(&self) -> Result<Vec<Vec3>> {
        Ok(self
            .rest
            .iter()
            .zip(&self.taps)
            .map(|(p, taps)| {
                let mut q = *p;
                for &(idx, w) in taps {
                    for a in 0..3 {
                        q[a] += w * self.params[3 * idx + a];
                    }
                }
                q
            })
            .collect())
    }

    fn backward(&self, grad: &[Vec3]) -> Vec<f64> {
        let mut out = vec![0.0; self.params.len()];
        for (g, taps) in grad.iter().zip(&self.taps) {
            for &(idx, w) in taps {
                for a in 0..3 {
                    out[3 * idx + a] += w * g[a];
                }
            }
        }
        out
    }
}

/// Runs Adam on the deformer parameters and returns the vertex positions of
/// the lowest-loss iterate. With zero iterations the input positions are
/// returned unchanged.
pub fn optimize_deformation(
    initial: &[Vec3],
    deformer: &mut dyn Deformer,
    objective: &mut dyn Objective,
    config: &OptimConfig,
) -> Result<(Vec<Vec3>, LossLog)> {
    config.validate()?;
    let mut log = LossLog::new(&objective.term_names());
    if config.iterations == 0 {
        return Ok((initial.to_vec(), log));
    }
    let mut adam = Adam::new(*config, deformer.params().len());
    let mut best: Option<(f64, Vec<Vec3>)> = None;
    for it in 0..=config.iterations {
        let vertices = deformer.vertices()?;
        let eval = objective.evaluate(&vertices)?;
        if !eval.total.is_finite() || eval.grad.iter().any(|g| !g.iter().all(|x| x.is_finite())) {
            return Err(Error::Diverged { iteration: it });
        }
        log.push(it, eval.total, eval.terms.clone());
        if best.as_ref().is_none_or(|(l, _)| eval.total < *l) {
            best = Some((eval.total, vertices));
        }
        if it == config.iterations {
            break;
        }
        let g = deformer.backward(&eval.grad);
        adam.step(deformer.params_mut(), &g);
    }
    Ok((best.expect("at least one evaluation").1, log))
}

/// Dense reference for tests: the same anchored least-squares problem solved
/// through an explicit pseudoinverse.
#[doc(hidden)]
pub fn dense_poisson_oracle(mesh: &Mesh, jacobians: &JacobianField) -> Result<Vec<Vec3>> {
    let g = build_gradient_operator(mesh)?.to_dense();
    let areas = mesh.face_areas();
    let mut weighted = g.clone();
    for r in 0..weighted.nrows() {
        let s = areas[r / 3].sqrt();
        weighted.row_mut(r).scale_mut(s);
    }
    let pinv = weighted.clone().pseudo_inverse(1e-12).map_err(|e| Error::Dimension(e.to_string()))?;
    let m = jacobians.to_stacked();
    let mut cols = Vec::new();
    for c in 0..3 {
        let rhs = nalgebra::DVector::from_iterator(m.len(), m.iter().enumerate().map(|(r, row)| row[c] * areas[r / 3].sqrt()));
        cols.push(&pinv * rhs);
    }
    let x: Vec<Vec3> = (0..mesh.num_vertices()).map(|v| Vec3::new(cols[0][v], cols[1][v], cols[2][v])).collect();
    let shift = mesh.centroid() - centroid(&x);
    Ok(x.iter().map(|p| p + shift).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::shapes::icosphere;

    #[test]
    fn identity_round_trip() {
        let mesh = icosphere(2);
        let sys = PoissonSystem::new(&mesh).unwrap();
        let v = poisson_solve(&sys, &init_jacobians(&mesh).unwrap()).unwrap();
        for (a, b) in v.iter().zip(&mesh.vertices) {
            assert!((a - b).norm() < 1e-6);
        }
    }

    #[test]
    fn doubled_jacobians_scale_about_centroid() {
        let mut mesh = icosphere(1);
        for p in &mut mesh.vertices {
            *p += Vec3::new(0.3, -0.1, 0.2);
        }
        let sys = PoissonSystem::new(&mesh).unwrap();
        let v = poisson_solve(&sys, &init_jacobians(&mesh).unwrap().scaled(2.0)).unwrap();
        let c = mesh.centroid();
        for (a, b) in v.iter().zip(&mesh.vertices) {
            assert!((a - (c + (b - c) * 2.0)).norm() < 1e-6);
        }
    }

    #[test]
    fn planar_mesh_has_flat_jacobians() {
        let mesh = Mesh::new(
            vec![Vec3::new(0.0, 0.0, 0.0), Vec3::new(1.0, 0.2, 0.0), Vec3::new(0.3, 1.0, 0.0)],
            vec![[0, 1, 2]],
        )
        .unwrap();
        let j = &init_jacobians(&mesh).unwrap().mats[0];
        for k in 0..3 {
            assert!(j[(2, k)].abs() < 1e-12 && j[(k, 2)].abs() < 1e-12);
        }
        // in-plane part is the projector onto the plane
        assert!((j[(0, 0)] - 1.0).abs() < 1e-12 && (j[(1, 1)] - 1.0).abs() < 1e-12 && j[(0, 1)].abs() < 1e-12);
    }

    #[test]
    fn disconnected_mesh_lists_components() {
        let mesh = Mesh::new(
            vec![
                Vec3::new(0.0, 0.0, 0.0),
                Vec3::new(1.0, 0.0, 0.0),
                Vec3::new(0.0, 1.0, 0.0),
                Vec3::new(5.0, 0.0, 0.0),
                Vec3::new(6.0, 0.0, 0.0),
                Vec3::new(5.0, 1.0, 0.0),
            ],
            vec![[0, 1, 2], [3, 4, 5]],
        )
        .unwrap();
        match PoissonSystem::new(&mesh) {
            Err(Error::Disconnected { components }) => assert_eq!(components, vec![vec![0, 1, 2], vec![3, 4, 5]]),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn spiked_fan_loss_by_hand() {
        // hexagonal fan, center lifted by h
        let h = 0.5;
        let mut v = vec![Vec3::new(0.0, 0.0, h)];
        for k in 0..6 {
            let a = k as f64 * std::f64::consts::PI / 3.0;
            v.push(Vec3::new(a.cos(), a.sin(), 0.0));
        }
        let faces: Vec<[usize; 3]> = (0..6).map(|k| [0, 1 + k, 1 + (k + 1) % 6]).collect();
        let mesh = Mesh::new(v, faces).unwrap();
        let l = build_laplacian(&mesh, LaplacianKind::Uniform).unwrap();
        // center row: 6 * (0,0,h) - sum of ring = (0,0,6h).
        // ring vertex k (degree 3): 3 p_k - center - p_{k-1} - p_{k+1}
        //   = 3 p_k - 2 cos(60) p_k - (0,0,h) = 2 p_k - (0,0,h), squared norm 4 + h^2.
        let expected = 36.0 * h * h + 6.0 * (4.0 + h * h);
        assert!((laplacian_smooth_loss(&l, &mesh.vertices) - expected).abs() < 1e-12);
        let shifted: Vec<Vec3> = mesh.vertices.iter().map(|p| p + Vec3::new(1.0, 2.0, 3.0)).collect();
        assert!((laplacian_smooth_loss(&l, &shifted) - expected).abs() < 1e-9);
    }

    #[test]
    fn regularizer_gradient_matches_differences() {
        let mesh = icosphere(1);
        let reg = LaplacianRegularizer::relative(&mesh).unwrap();
        let moved: Vec<Vec3> = mesh.vertices.iter().enumerate().map(|(i, p)| p * (1.0 + 0.01 * (i % 5) as f64)).collect();
        let (_, g) = reg.evaluate(&moved);
        let h = 1e-6;
        for v in [0, 7, 11] {
            for a in 0..3 {
                let mut p = moved.clone();
                p[v][a] += h;
                let mut m = moved.clone();
                m[v][a] -= h;
                let fd = (reg.evaluate(&p).0 - reg.evaluate(&m).0) / (2.0 * h);
                assert!((fd - g[v][a]).abs() < 1e-6 * fd.abs().max(1e-3));
            }
        }
        assert_eq!(reg.evaluate(&mesh.vertices).0, 0.0);
    }

    #[test]
    fn grid_constant_offset_translates() {
        let mesh = icosphere(1);
        let mut grid = GridDeformer::new(&mesh, 4);
        assert_eq!(grid.vertices().unwrap(), mesh.vertices);
        for p in grid.params_mut().chunks_mut(3) {
            p.copy_from_slice(&[0.1, -0.2, 0.3]);
        }
        for (a, b) in grid.vertices().unwrap().iter().zip(&mesh.vertices) {
            assert!((a - b - Vec3::new(0.1, -0.2, 0.3)).norm() < 1e-12);
        }
    }
}
