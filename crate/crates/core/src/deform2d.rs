//! Grid-based image deformation.
//!
//! A `G x G` grid of pixel offsets spans the whole image: grid vertex `(i, j)`
//! sits at `(i (W-1)/(G-1), j (H-1)/(G-1))` in pixel index coordinates. The
//! per-pixel offset is the bilinear interpolation of the four surrounding grid
//! vertices and the output is a backward warp,
//! `out(p) = bilinear(in, p - offset(p))`, with transparent black outside the
//! input.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::ImageRGBA;

pub const DEFAULT_GRID_SIZE: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeformationField2D {
    grid_size: usize,
    /// Row-major `(x, y)` offsets in pixels; entry `j * G + i` is grid vertex `(i, j)`.
    offsets: Vec<[f64; 2]>,
}

impl DeformationField2D {
    pub fn zeros(grid_size: usize) -> Self {
        assert!(grid_size >= 2, "grid needs at least 2 vertices per side");
        DeformationField2D { grid_size, offsets: vec![[0.0; 2]; grid_size * grid_size] }
    }

    pub fn constant(grid_size: usize, offset: [f64; 2]) -> Self {
        let mut f = Self::zeros(grid_size);
        f.offsets.fill(offset);
        f
    }

    pub fn from_offsets(grid_size: usize, offsets: Vec<[f64; 2]>) -> Result<Self> {
        if grid_size < 2 || offsets.len() != grid_size * grid_size {
            return Err(Error::Dimension(format!("{} offsets for a {grid_size}x{grid_size} grid", offsets.len())));
        }
        Ok(DeformationField2D { grid_size, offsets })
    }

    pub fn grid_size(&self) -> usize {
        self.grid_size
    }

    pub fn offsets(&self) -> &[[f64; 2]] {
        &self.offsets
    }

    pub fn offsets_mut(&mut self) -> &mut [[f64; 2]] {
        &mut self.offsets
    }

    pub fn get(&self, i: usize, j: usize) -> [f64; 2] {
        self.offsets[j * self.grid_size + i]
    }

    pub fn set(&mut self, i: usize, j: usize, v: [f64; 2]) {
        self.offsets[j * self.grid_size + i] = v;
    }

    pub fn check_finite(&self) -> Result<()> {
        for (k, o) in self.offsets.iter().enumerate() {
            if !(o[0].is_finite() && o[1].is_finite()) {
                return Err(Error::NonFiniteField { i: k % self.grid_size, j: k / self.grid_size });
            }
        }
        Ok(())
    }

    pub fn max_magnitude(&self) -> f64 {
        self.offsets.iter().map(|o| o[0].hypot(o[1])).fold(0.0, f64::max)
    }

    pub fn mean_magnitude(&self) -> f64 {
        self.offsets.iter().map(|o| o[0].hypot(o[1])).sum::<f64>() / self.offsets.len() as f64
    }

    /// Scales any offset longer than `bound` back onto the bound.
    pub fn clamp_magnitude(&mut self, bound: f64) {
        for o in &mut self.offsets {
            let m = o[0].hypot(o[1]);
            if m > bound {
                o[0] *= bound / m;
                o[1] *= bound / m;
            }
        }
    }

    /// Offset bound used when none is configured: 10% of the shorter side.
    pub fn default_bound(width: usize, height: usize) -> f64 {
        0.1 * width.min(height) as f64
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("field serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let f: DeformationField2D = serde_json::from_str(s)?;
        Self::from_offsets(f.grid_size, f.offsets)
    }

    /// Interpolation cell and weights for the pixel at index `(x, y)`.
    fn cell(&self, x: usize, y: usize, width: usize, height: usize) -> [(usize, f64); 4] {
        let g = self.grid_size;
        let locate = |p: usize, extent: usize| -> (usize, f64) {
            if extent <= 1 {
                return (0, 0.0);
            }
            let t = p as f64 * (g - 1) as f64 / (extent - 1) as f64;
            let k = (t.floor() as usize).min(g - 2);
            (k, t - k as f64)
        };
        let (i, fx) = locate(x, width);
        let (j, fy) = locate(y, height);
        [
            (j * g + i, (1.0 - fx) * (1.0 - fy)),
            (j * g + i + 1, fx * (1.0 - fy)),
            ((j + 1) * g + i, (1.0 - fx) * fy),
            ((j + 1) * g + i + 1, fx * fy),
        ]
    }

    /// Interpolated offset at pixel index `(x, y)`.
    pub fn pixel_offset(&self, x: usize, y: usize, width: usize, height: usize) -> [f64; 2] {
        let mut o = [0.0; 2];
        for (k, w) in self.cell(x, y, width, height) {
            o[0] += w * self.offsets[k][0];
            o[1] += w * self.offsets[k][1];
        }
        o
    }
}

pub fn deform_image(image: &ImageRGBA, field: &DeformationField2D) -> Result<ImageRGBA> {
    field.check_finite()?;
    let (w, h) = image.dims();
    let mut out = ImageRGBA::new(w, h);
    for y in 0..h {
        for x in 0..w {
            let o = field.pixel_offset(x, y, w, h);
            if o == [0.0, 0.0] {
                out.set(x, y, image.get(x, y));
            } else {
                out.set(x, y, image.sample(x as f64 - o[0], y as f64 - o[1]));
            }
        }
    }
    Ok(out)
}

/// Gradient of `sum(upstream * deform_image(image, field))` with respect to the
/// field offsets.
pub fn deform_backward(image: &ImageRGBA, field: &DeformationField2D, upstream: &[[f64; 4]]) -> Result<DeformationField2D> {
    field.check_finite()?;
    let (w, h) = image.dims();
    if upstream.len() != w * h {
        return Err(Error::Dimension(format!("{} upstream pixels for {w}x{h}", upstream.len())));
    }
    let mut grad = DeformationField2D::zeros(field.grid_size);
    for y in 0..h {
        for x in 0..w {
            let g = upstream[y * w + x];
            if g == [0.0; 4] {
                continue;
            }
            let o = field.pixel_offset(x, y, w, h);
            let (sx, sy) = (x as f64 - o[0], y as f64 - o[1]);
            let (ds_dx, ds_dy) = sample_spatial_gradient(image, sx, sy);
            // out = I(p - o)  =>  d out / d o = -grad I
            let mut g_o = [0.0; 2];
            for c in 0..4 {
                g_o[0] -= g[c] * ds_dx[c];
                g_o[1] -= g[c] * ds_dy[c];
            }
            for (k, wt) in field.cell(x, y, w, h) {
                grad.offsets[k][0] += wt * g_o[0];
                grad.offsets[k][1] += wt * g_o[1];
            }
        }
    }
    Ok(grad)
}

/// Adjoint of the warp with respect to the input image: maps output-pixel
/// gradients back onto input pixels.
pub fn deform_image_adjoint(image_dims: (usize, usize), field: &DeformationField2D, upstream: &[[f64; 4]]) -> Vec<[f64; 4]> {
    let (w, h) = image_dims;
    let probe = ImageRGBA::new(w, h);
    let mut out = vec![[0.0; 4]; w * h];
    for y in 0..h {
        for x in 0..w {
            let g = upstream[y * w + x];
            if g == [0.0; 4] {
                continue;
            }
            let o = field.pixel_offset(x, y, w, h);
            for &(xi, yi, wt) in probe.bilinear_taps(x as f64 - o[0], y as f64 - o[1]).iter() {
                let t = &mut out[yi * w + xi];
                for c in 0..4 {
                    t[c] += wt * g[c];
                }
            }
        }
    }
    out
}

/// Partial derivatives of the bilinear sample at `(x, y)` (zero padding).
fn sample_spatial_gradient(image: &ImageRGBA, x: f64, y: f64) -> ([f64; 4], [f64; 4]) {
    let x0 = x.floor();
    let y0 = y.floor();
    let (fx, fy) = (x - x0, y - y0);
    let (x0, y0) = (x0 as i64, y0 as i64);
    let (w, h) = (image.width() as i64, image.height() as i64);
    let px = |xi: i64, yi: i64| -> [f64; 4] {
        if xi >= 0 && yi >= 0 && xi < w && yi < h {
            image.get(xi as usize, yi as usize)
        } else {
            [0.0; 4]
        }
    };
    let (p00, p10, p01, p11) = (px(x0, y0), px(x0 + 1, y0), px(x0, y0 + 1), px(x0 + 1, y0 + 1));
    let mut dx = [0.0; 4];
    let mut dy = [0.0; 4];
    for c in 0..4 {
        dx[c] = (1.0 - fy) * (p10[c] - p00[c]) + fy * (p11[c] - p01[c]);
        dy[c] = (1.0 - fx) * (p01[c] - p00[c]) + fx * (p11[c] - p10[c]);
    }
    (dx, dy)
}

/// Mean squared offset difference over 4-connected grid edges.
pub fn smoothness_loss(field: &DeformationField2D) -> f64 {
    smoothness_with_grad(field, false).0
}

pub fn smoothness_grad(field: &DeformationField2D) -> DeformationField2D {
    smoothness_with_grad(field, true).1
}

fn smoothness_with_grad(field: &DeformationField2D, want_grad: bool) -> (f64, DeformationField2D) {
    let g = field.grid_size;
    let edges = 2 * g * (g - 1);
    let mut loss = 0.0;
    let mut grad = DeformationField2D::zeros(g);
    for j in 0..g {
        for i in 0..g {
            let a = j * g + i;
            for b in [(i + 1 < g).then(|| a + 1), (j + 1 < g).then(|| a + g)].into_iter().flatten() {
                for c in 0..2 {
                    let d = field.offsets[a][c] - field.offsets[b][c];
                    loss += d * d;
                    if want_grad {
                        grad.offsets[a][c] += 2.0 * d / edges as f64;
                        grad.offsets[b][c] -= 2.0 * d / edges as f64;
                    }
                }
            }
        }
    }
    (loss / edges as f64, grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn checkerboard(w: usize, h: usize) -> ImageRGBA {
        let mut img = ImageRGBA::new(w, h);
        for y in 0..h {
            for x in 0..w {
                let v = if (x / 2 + y / 2) % 2 == 0 { 1.0 } else { 0.2 };
                img.set(x, y, [v, 1.0 - v, 0.5, 1.0]);
            }
        }
        img
    }

    fn random_image(w: usize, h: usize, seed: u64) -> ImageRGBA {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut img = ImageRGBA::new(w, h);
        for p in img.pixels_mut() {
            *p = [0; 4].map(|_| rng.gen_range(0.0..1.0));
        }
        img
    }

    #[test]
    fn zero_field_is_identity() {
        let img = random_image(17, 13, 1);
        let out = deform_image(&img, &DeformationField2D::zeros(5)).unwrap();
        assert_eq!(out, img);
    }

    #[test]
    fn constant_shift_moves_checkerboard() {
        let img = checkerboard(24, 16);
        let out = deform_image(&img, &DeformationField2D::constant(4, [3.0, 0.0])).unwrap();
        for y in 0..16 {
            for x in 0..24 {
                let expected = if x >= 3 { img.get(x - 3, y) } else { [0.0; 4] };
                let got = out.get(x, y);
                for c in 0..4 {
                    assert!((got[c] - expected[c]).abs() < 1e-12, "({x},{y})");
                }
            }
        }
    }

    #[test]
    fn cell_center_gets_quarter_offset() {
        // G = 3 on a 21x21 image: vertices at 0, 10, 20; cell center at 5.
        let mut f = DeformationField2D::zeros(3);
        f.set(1, 1, [4.0, -8.0]);
        let o = f.pixel_offset(5, 5, 21, 21);
        assert!((o[0] - 1.0).abs() < 1e-12 && (o[1] + 2.0).abs() < 1e-12);
        assert_eq!(f.pixel_offset(10, 10, 21, 21), [4.0, -8.0]);
    }

    #[test]
    fn smoothness_values() {
        assert_eq!(smoothness_loss(&DeformationField2D::zeros(4)), 0.0);
        assert_eq!(smoothness_loss(&DeformationField2D::constant(4, [2.0, -1.0])), 0.0);
        let mut f = DeformationField2D::zeros(2);
        f.set(0, 0, [1.0, 0.0]);
        assert!((smoothness_loss(&f) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn smoothness_grad_matches_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut f = DeformationField2D::zeros(4);
        for o in f.offsets_mut() {
            *o = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
        }
        let g = smoothness_grad(&f);
        let h = 1e-6;
        for k in 0..16 {
            for c in 0..2 {
                let mut p = f.clone();
                p.offsets_mut()[k][c] += h;
                let mut m = f.clone();
                m.offsets_mut()[k][c] -= h;
                let fd = (smoothness_loss(&p) - smoothness_loss(&m)) / (2.0 * h);
                assert!((fd - g.offsets()[k][c]).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn non_finite_field_rejected() {
        let mut f = DeformationField2D::zeros(3);
        f.set(2, 1, [f64::NAN, 0.0]);
        assert!(matches!(deform_image(&checkerboard(8, 8), &f), Err(Error::NonFiniteField { i: 2, j: 1 })));
    }

    #[test]
    fn zero_upstream_zero_gradient() {
        let img = random_image(16, 16, 2);
        let g = deform_backward(&img, &DeformationField2D::constant(3, [0.3, 0.2]), &vec![[0.0; 4]; 256]).unwrap();
        assert!(g.offsets().iter().all(|o| *o == [0.0, 0.0]));
    }

    #[test]
    fn json_round_trip() {
        let mut f = DeformationField2D::zeros(3);
        f.set(1, 2, [0.25, -1.5]);
        assert_eq!(DeformationField2D::from_json(&f.to_json()).unwrap(), f);
        assert!(DeformationField2D::from_json(r#"{"grid_size":3,"offsets":[[0,0]]}"#).is_err());
    }

    #[test]
    fn image_adjoint_is_transpose() {
        let img = random_image(12, 10, 5);
        let mut f = DeformationField2D::zeros(3);
        f.set(1, 1, [1.3, -0.7]);
        f.set(0, 2, [0.4, 0.9]);
        let up: Vec<[f64; 4]> = random_image(12, 10, 6).pixels().to_vec();
        let lhs: f64 = deform_image(&img, &f)
            .unwrap()
            .pixels()
            .iter()
            .zip(&up)
            .map(|(a, b)| (0..4).map(|c| a[c] * b[c]).sum::<f64>())
            .sum();
        let adj = deform_image_adjoint((12, 10), &f, &up);
        let rhs: f64 = img.pixels().iter().zip(&adj).map(|(a, b)| (0..4).map(|c| a[c] * b[c]).sum::<f64>()).sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }
}
