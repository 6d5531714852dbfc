//! Perspective orbit camera looking at the origin.
//!
//! World up is `+z`. Azimuth rotates about `+z` starting from `+x`; elevation
//! tilts the camera toward `+z`. Screen coordinates are continuous with the
//! image center at `(width / 2, height / 2)`, `x` to the right and `y` down, so
//! pixel `(i, j)` has its center at `(i + 0.5, j + 0.5)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::Vec3;

pub const DEFAULT_FOV_DEG: f64 = 30.0;
pub const DEFAULT_DISTANCE: f64 = 4.0;
pub const DEFAULT_VIEW_ELEVATIONS: [f64; 6] = [20.0, -10.0, 20.0, -10.0, 20.0, -10.0];
pub const DEFAULT_VIEW_AZIMUTHS: [f64; 6] = [30.0, 90.0, 150.0, 210.0, 270.0, 330.0];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub fov_deg: f64,
    pub distance: f64,
    pub elevation_deg: f64,
    pub azimuth_deg: f64,
    pub width: usize,
    pub height: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    pub x: f64,
    pub y: f64,
    /// Distance along the viewing axis; not positive for points behind the camera.
    pub depth: f64,
}

impl Projection {
    pub fn in_front(&self) -> bool {
        self.depth > 0.0
    }
}

/// Orthonormal camera frame.
#[derive(Debug, Clone, Copy)]
pub struct CameraFrame {
    pub eye: Vec3,
    pub right: Vec3,
    pub up: Vec3,
    pub forward: Vec3,
    pub focal: f64,
    pub cx: f64,
    pub cy: f64,
}

impl Camera {
    pub fn new(elevation_deg: f64, azimuth_deg: f64, resolution: usize) -> Self {
        Camera {
            fov_deg: DEFAULT_FOV_DEG,
            distance: DEFAULT_DISTANCE,
            elevation_deg,
            azimuth_deg,
            width: resolution,
            height: resolution,
        }
    }

    /// The six standard multiview poses.
    pub fn default_views(resolution: usize) -> Vec<Camera> {
        DEFAULT_VIEW_ELEVATIONS
            .iter()
            .zip(DEFAULT_VIEW_AZIMUTHS)
            .map(|(&e, a)| Camera::new(e, a, resolution))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fov_deg > 0.0 && self.fov_deg < 180.0) {
            return Err(Error::InvalidCamera(format!("fov {} outside (0, 180)", self.fov_deg)));
        }
        if !(self.distance > 0.0 && self.distance.is_finite()) {
            return Err(Error::InvalidCamera(format!("distance {} must be positive", self.distance)));
        }
        if self.width < 8 || self.height < 8 {
            return Err(Error::InvalidCamera(format!("resolution {}x{} below 8x8", self.width, self.height)));
        }
        if !(self.elevation_deg.is_finite() && self.azimuth_deg.is_finite()) {
            return Err(Error::InvalidCamera("non-finite angles".into()));
        }
        Ok(())
    }

    pub fn frame(&self) -> CameraFrame {
        let (se, ce) = self.elevation_deg.to_radians().sin_cos();
        let (sa, ca) = self.azimuth_deg.to_radians().sin_cos();
        let dir = Vec3::new(ce * ca, ce * sa, se);
        let eye = dir * self.distance;
        let forward = -dir;
        // d(dir)/d(elevation): orthogonal to dir and continuous through the poles.
        let up = Vec3::new(-se * ca, -se * sa, ce);
        let right = forward.cross(&up);
        let focal = 0.5 * self.width as f64 / (0.5 * self.fov_deg.to_radians()).tan();
        CameraFrame {
            eye,
            right,
            up,
            forward,
            focal,
            cx: 0.5 * self.width as f64,
            cy: 0.5 * self.height as f64,
        }
    }

    pub fn project(&self, p: &Vec3) -> Projection {
        self.frame().project(p)
    }

    /// Axis about which increasing elevation rotates the eye around the origin.
    pub fn elevation_axis(&self) -> Vec3 {
        let (sa, ca) = self.azimuth_deg.to_radians().sin_cos();
        Vec3::new(sa, -ca, 0.0)
    }
}

impl CameraFrame {
    /// Camera-space coordinates `(right, up, depth)`.
    pub fn to_camera(&self, p: &Vec3) -> Vec3 {
        let d = p - self.eye;
        Vec3::new(self.right.dot(&d), self.up.dot(&d), self.forward.dot(&d))
    }

    pub fn project(&self, p: &Vec3) -> Projection {
        let c = self.to_camera(p);
        Projection { x: self.cx + self.focal * c.x / c.z, y: self.cy - self.focal * c.y / c.z, depth: c.z }
    }

    /// Gradients of the screen coordinates with respect to the world position.
    pub fn project_jacobian(&self, p: &Vec3) -> (Vec3, Vec3) {
        let c = self.to_camera(p);
        let inv = 1.0 / c.z;
        let dx = (self.right - self.forward * (c.x * inv)) * (self.focal * inv);
        let dy = -(self.up - self.forward * (c.y * inv)) * (self.focal * inv);
        (dx, dy)
    }

    /// World-space direction of the ray through continuous screen point `(x, y)`.
    pub fn ray_direction(&self, x: f64, y: f64) -> Vec3 {
        let u = (x - self.cx) / self.focal;
        let v = -(y - self.cy) / self.focal;
        self.forward + self.right * u + self.up * v
    }

    /// World-to-camera rotation applied to a direction (camera `+z` faces the viewer).
    pub fn direction_to_view(&self, n: &Vec3) -> Vec3 {
        Vec3::new(self.right.dot(n), self.up.dot(n), -self.forward.dot(n))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn origin_projects_to_center() {
        for (e, a) in [(0.0, 0.0), (20.0, 30.0), (-45.0, 200.0)] {
            let cam = Camera::new(e, a, 256);
            let p = cam.project(&Vec3::zeros());
            assert!((p.x - 128.0).abs() < 1e-9 && (p.y - 128.0).abs() < 1e-9);
            assert!((p.depth - 4.0).abs() < 1e-12);
        }
    }

    #[test]
    fn pinhole_offset() {
        let cam = Camera::new(10.0, 40.0, 200);
        let f = cam.frame();
        let d = 0.3;
        let p = cam.project(&(f.right * d));
        let expected = 100.0 + d / (4.0 * 15f64.to_radians().tan()) * 100.0;
        assert!((p.x - expected).abs() < 1e-9, "{} vs {expected}", p.x);
        assert!((p.y - 100.0).abs() < 1e-9);
    }

    #[test]
    fn top_camera_looks_down() {
        let cam = Camera::new(90.0, 0.0, 64);
        let f = cam.frame();
        assert!((f.eye - Vec3::new(0.0, 0.0, 4.0)).norm() < 1e-12);
        assert!((f.forward + Vec3::z()).norm() < 1e-12);
        assert!(f.right.cross(&f.up).dot(&-f.forward) > 0.999);
    }

    #[test]
    fn frame_is_right_handed_and_orthonormal() {
        let f = Camera::new(33.0, 123.0, 64).frame();
        assert!((f.right.norm() - 1.0).abs() < 1e-12);
        assert!(f.right.dot(&f.up).abs() < 1e-12);
        assert!((f.right.cross(&f.up) + f.forward).norm() < 1e-12);
    }

    #[test]
    fn behind_camera_has_negative_depth() {
        let cam = Camera::new(0.0, 0.0, 64);
        assert!(!cam.project(&Vec3::new(10.0, 0.0, 0.0)).in_front());
    }

    #[test]
    fn projection_jacobian_matches_differences() {
        let f = Camera::new(15.0, 70.0, 128).frame();
        let p = Vec3::new(0.3, -0.2, 0.5);
        let (jx, jy) = f.project_jacobian(&p);
        let h = 1e-6;
        for d in 0..3 {
            let mut a = p;
            a[d] += h;
            let mut b = p;
            b[d] -= h;
            let (pa, pb) = (f.project(&a), f.project(&b));
            assert!(((pa.x - pb.x) / (2.0 * h) - jx[d]).abs() < 1e-5);
            assert!(((pa.y - pb.y) / (2.0 * h) - jy[d]).abs() < 1e-5);
        }
    }

    #[test]
    fn elevation_axis_rotates_eye() {
        let cam = Camera::new(10.0, 50.0, 64);
        let mut up = cam;
        up.elevation_deg += 1e-4;
        let d_eye = (up.frame().eye - cam.frame().eye) / 1e-4f64.to_radians();
        let predicted = cam.elevation_axis().cross(&cam.frame().eye);
        assert!((d_eye - predicted).norm() < 1e-4);
    }

    #[test]
    fn validation() {
        let mut c = Camera::new(0.0, 0.0, 64);
        c.fov_deg = 180.0;
        assert!(c.validate().is_err());
        let mut c = Camera::new(0.0, 0.0, 4);
        assert!(c.validate().is_err());
        c.width = 8;
        c.height = 8;
        c.distance = 0.0;
        assert!(c.validate().is_err());
    }
}
