//! Discrete differential operators on triangle meshes.
//!
//! All operators are assembled in `f64` and use the same row/column
//! conventions so that the cotangent Laplacian equals `G^T A G`, where `G` is
//! the stacked per-face gradient and `A` the per-face area mass matrix.

use crate::error::{Error, Result};
use crate::mesh::{Mesh, Vec3, MIN_FACE_AREA};
use crate::sparse::SparseOperator;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LaplacianKind {
    Cotangent,
    Uniform,
}

/// Gradients of the three hat functions of a face (one per corner).
pub fn hat_gradients(p: [Vec3; 3], face: usize) -> Result<[Vec3; 3]> {
    let cross = (p[1] - p[0]).cross(&(p[2] - p[0]));
    let twice_area = cross.norm();
    if !(0.5 * twice_area >= MIN_FACE_AREA) {
        return Err(Error::DegenerateFace { face, area: 0.5 * twice_area });
    }
    let n = cross / twice_area;
    let mut g = [Vec3::zeros(); 3];
    for i in 0..3 {
        // edge opposite corner i, counter-clockwise
        let e = p[(i + 2) % 3] - p[(i + 1) % 3];
        g[i] = n.cross(&e) / twice_area;
    }
    Ok(g)
}

/// Stacked per-face gradient operator, `3T x V`. Row `3t + d` gives the `d`-th
/// component of the gradient on face `t`.
pub fn build_gradient_operator(mesh: &Mesh) -> Result<SparseOperator> {
    let mut trip = Vec::with_capacity(9 * mesh.num_faces());
    for (t, face) in mesh.faces.iter().enumerate() {
        let g = hat_gradients(mesh.face_positions(t), t)?;
        for (i, &v) in face.iter().enumerate() {
            for d in 0..3 {
                trip.push((3 * t + d, v, g[i][d]));
            }
        }
    }
    Ok(SparseOperator::from_triplets(3 * mesh.num_faces(), mesh.num_vertices(), trip))
}

/// Diagonal `3T x 3T` mass matrix; entries `3t..3t+3` hold the area of face `t`.
pub fn build_mass_matrix(mesh: &Mesh) -> Result<SparseOperator> {
    mesh.validate()?;
    let diag: Vec<f64> = mesh.face_areas().into_iter().flat_map(|a| [a, a, a]).collect();
    Ok(SparseOperator::diagonal(&diag))
}

/// Positive semi-definite Laplacian (`L_ii >= 0`, rows sum to zero).
pub fn build_laplacian(mesh: &Mesh, kind: LaplacianKind) -> Result<SparseOperator> {
    let n = mesh.num_vertices();
    let mut trip = Vec::new();
    match kind {
        LaplacianKind::Cotangent => {
            for (t, face) in mesh.faces.iter().enumerate() {
                let p = mesh.face_positions(t);
                let twice_area = (p[1] - p[0]).cross(&(p[2] - p[0])).norm();
                if !(0.5 * twice_area >= MIN_FACE_AREA) {
                    return Err(Error::DegenerateFace { face: t, area: 0.5 * twice_area });
                }
                for k in 0..3 {
                    // angle at corner k is opposite edge (k+1, k+2)
                    let (i, j) = ((k + 1) % 3, (k + 2) % 3);
                    let u = p[i] - p[k];
                    let v = p[j] - p[k];
                    let cot = u.dot(&v) / twice_area;
                    let w = 0.5 * cot;
                    let (vi, vj) = (face[i], face[j]);
                    trip.extend([(vi, vj, -w), (vj, vi, -w), (vi, vi, w), (vj, vj, w)]);
                }
            }
        }
        LaplacianKind::Uniform => {
            mesh.validate()?;
            for [a, b] in mesh.edges() {
                trip.extend([(a, b, -1.0), (b, a, -1.0), (a, a, 1.0), (b, b, 1.0)]);
            }
        }
    }
    Ok(SparseOperator::from_triplets(n, n, trip))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_right_triangle() -> Mesh {
        Mesh::new(vec![Vec3::zeros(), Vec3::x(), Vec3::y()], vec![[0, 1, 2]]).unwrap()
    }

    fn fan(spike: f64) -> Mesh {
        let mut v = vec![Vec3::new(0.0, 0.0, spike)];
        for k in 0..6 {
            let a = k as f64 * std::f64::consts::PI / 3.0;
            v.push(Vec3::new(a.cos(), a.sin(), 0.0));
        }
        let faces = (0..6).map(|k| [0, 1 + k, 1 + (k + 1) % 6]).collect();
        Mesh::new(v, faces).unwrap()
    }

    #[test]
    fn right_triangle_gradient() {
        // f = (0, 1, 0) at the corners is the x-coordinate function.
        let g = build_gradient_operator(&unit_right_triangle()).unwrap();
        let grad = g.mul_vec(&[0.0, 1.0, 0.0]);
        assert!((grad[0] - 1.0).abs() < 1e-15 && grad[1].abs() < 1e-15 && grad[2].abs() < 1e-15);
        let grad = g.mul_vec(&[3.0, 3.0, 3.0]);
        assert!(grad.iter().all(|x| x.abs() < 1e-15));
    }

    #[test]
    fn right_triangle_mass() {
        let a = build_mass_matrix(&unit_right_triangle()).unwrap();
        assert_eq!((a.rows(), a.cols()), (3, 3));
        for i in 0..3 {
            assert!((a.get(i, i) - 0.5).abs() < 1e-15);
        }
        let big = Mesh::new(vec![Vec3::zeros(), Vec3::x() * 2.0, Vec3::y() * 2.0], vec![[0, 1, 2]]).unwrap();
        let b = build_mass_matrix(&big).unwrap();
        for i in 0..3 {
            assert!((b.get(i, i) - 4.0 * a.get(i, i)).abs() < 1e-15);
        }
    }

    #[test]
    fn uniform_fan_diagonal_is_degree() {
        let l = build_laplacian(&fan(0.0), LaplacianKind::Uniform).unwrap();
        assert_eq!(l.get(0, 0), 6.0);
        for v in 1..7 {
            assert_eq!(l.get(v, v), 3.0);
        }
        assert!(l.row_sums().iter().all(|s| s.abs() < 1e-12));
    }

    #[test]
    fn cotangent_rows_sum_to_zero_and_symmetric() {
        let l = build_laplacian(&fan(0.4), LaplacianKind::Cotangent).unwrap();
        assert!(l.row_sums().iter().all(|s| s.abs() < 1e-12));
        assert!(l.asymmetry() < 1e-14);
    }

    #[test]
    fn degenerate_face_is_named() {
        let m = Mesh {
            vertices: vec![Vec3::zeros(), Vec3::x(), Vec3::x() * 2.0, Vec3::y()],
            faces: vec![[0, 1, 3], [0, 1, 2]],
            colors: None,
        };
        assert!(matches!(build_gradient_operator(&m), Err(Error::DegenerateFace { face: 1, .. })));
        assert!(matches!(build_laplacian(&m, LaplacianKind::Cotangent), Err(Error::DegenerateFace { face: 1, .. })));
    }
}
