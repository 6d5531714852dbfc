//! RGBA float images.
//!
//! Pixel `(x, y)` has its center at index coordinates `(x, y)`; bilinear
//! sampling takes index coordinates and treats everything outside the image as
//! transparent black.
//!
//! Colors are premultiplied by alpha. Hard renders only hold alpha 0 or 1, so
//! the distinction matters for partially covered pixels produced by warping and
//! downsampling, whose surface color is `rgb / alpha`.

use std::io::{BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub type Pixel = [f64; 4];

#[derive(Debug, Clone, PartialEq)]
pub struct ImageRGBA {
    width: usize,
    height: usize,
    data: Vec<Pixel>,
}

/// Up to four bilinear taps `(x, y, weight)`; taps outside the image are omitted.
#[derive(Debug, Clone, Copy, Default)]
pub struct Taps {
    len: usize,
    items: [(usize, usize, f64); 4],
}

impl Taps {
    pub fn iter(&self) -> impl Iterator<Item = &(usize, usize, f64)> {
        self.items[..self.len].iter()
    }
}

impl ImageRGBA {
    /// Transparent black image.
    pub fn new(width: usize, height: usize) -> Self {
        ImageRGBA { width, height, data: vec![[0.0; 4]; width * height] }
    }

    pub fn filled(width: usize, height: usize, value: Pixel) -> Self {
        ImageRGBA { width, height, data: vec![value; width * height] }
    }

    pub fn from_pixels(width: usize, height: usize, data: Vec<Pixel>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::Dimension(format!("{} pixels for {width}x{height}", data.len())));
        }
        Ok(ImageRGBA { width, height, data })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn pixels(&self) -> &[Pixel] {
        &self.data
    }

    pub fn pixels_mut(&mut self) -> &mut [Pixel] {
        &mut self.data
    }

    pub fn get(&self, x: usize, y: usize) -> Pixel {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, p: Pixel) {
        self.data[y * self.width + x] = p;
    }

    pub fn alpha(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x][3]
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn clamped(&self) -> ImageRGBA {
        let data = self.data.iter().map(|p| p.map(|c| c.clamp(0.0, 1.0))).collect();
        ImageRGBA { width: self.width, height: self.height, data }
    }

    /// Bilinear taps at index coordinates `(x, y)`.
    pub fn bilinear_taps(&self, x: f64, y: f64) -> Taps {
        let mut taps = Taps::default();
        if !(x.is_finite() && y.is_finite()) {
            return taps;
        }
        let x0 = x.floor();
        let y0 = y.floor();
        let fx = x - x0;
        let fy = y - y0;
        let (x0, y0) = (x0 as i64, y0 as i64);
        for (dx, dy, w) in [(0, 0, (1.0 - fx) * (1.0 - fy)), (1, 0, fx * (1.0 - fy)), (0, 1, (1.0 - fx) * fy), (1, 1, fx * fy)] {
            let (xi, yi) = (x0 + dx, y0 + dy);
            if w != 0.0 && xi >= 0 && yi >= 0 && (xi as usize) < self.width && (yi as usize) < self.height {
                taps.items[taps.len] = (xi as usize, yi as usize, w);
                taps.len += 1;
            }
        }
        taps
    }

    pub fn sample(&self, x: f64, y: f64) -> Pixel {
        let mut out = [0.0; 4];
        for &(xi, yi, w) in self.bilinear_taps(x, y).iter() {
            let p = self.get(xi, yi);
            for c in 0..4 {
                out[c] += w * p[c];
            }
        }
        out
    }

    /// RGB composited over a white background.
    pub fn composite_white(&self) -> Vec<[f64; 3]> {
        self.data
            .iter()
            .map(|p| {
                let a = p[3].clamp(0.0, 1.0);
                [p[0] + (1.0 - a), p[1] + (1.0 - a), p[2] + (1.0 - a)]
            })
            .collect()
    }

    /// 2x box downsample (odd trailing row/column dropped).
    pub fn downsample(&self) -> ImageRGBA {
        let (w, h) = (self.width / 2, self.height / 2);
        let mut out = ImageRGBA::new(w.max(1), h.max(1));
        if w == 0 || h == 0 {
            return out;
        }
        for y in 0..h {
            for x in 0..w {
                let mut acc = [0.0; 4];
                for (dx, dy) in [(0, 0), (1, 0), (0, 1), (1, 1)] {
                    let p = self.get(2 * x + dx, 2 * y + dy);
                    for c in 0..4 {
                        acc[c] += 0.25 * p[c];
                    }
                }
                out.set(x, y, acc);
            }
        }
        out
    }

    pub fn read_png(path: impl AsRef<Path>) -> Result<ImageRGBA> {
        let file = std::fs::File::open(path.as_ref())?;
        Self::decode_png(std::io::BufReader::new(file))
    }

    pub fn decode_png<R: Read + std::io::BufRead + std::io::Seek>(reader: R) -> Result<ImageRGBA> {
        let mut decoder = png::Decoder::new(reader);
        decoder.set_transformations(png::Transformations::EXPAND | png::Transformations::STRIP_16);
        let mut reader = decoder.read_info().map_err(|e| Error::Png(e.to_string()))?;
        let size = reader.output_buffer_size().ok_or_else(|| Error::Png("image too large".into()))?;
        let mut buf = vec![0u8; size];
        let info = reader.next_frame(&mut buf).map_err(|e| Error::Png(e.to_string()))?;
        let (w, h) = (info.width as usize, info.height as usize);
        let channels = match info.color_type {
            png::ColorType::Grayscale => 1,
            png::ColorType::GrayscaleAlpha => 2,
            png::ColorType::Rgb => 3,
            png::ColorType::Rgba => 4,
            png::ColorType::Indexed => return Err(Error::Png("unexpanded palette".into())),
        };
        let bytes = &buf[..info.buffer_size()];
        let mut data = Vec::with_capacity(w * h);
        for px in bytes.chunks_exact(channels) {
            let f = |b: u8| b as f64 / 255.0;
            data.push(match channels {
                1 => [f(px[0]), f(px[0]), f(px[0]), 1.0],
                2 => [f(px[0]), f(px[0]), f(px[0]), f(px[1])],
                3 => [f(px[0]), f(px[1]), f(px[2]), 1.0],
                _ => [f(px[0]), f(px[1]), f(px[2]), f(px[3])],
            });
        }
        ImageRGBA::from_pixels(w, h, data)
    }

    /// 8-bit RGBA bytes, values clamped to `[0, 1]` and rounded.
    pub fn to_rgba8(&self) -> Vec<u8> {
        self.data.iter().flat_map(|p| p.map(quantize)).collect()
    }

    pub fn write_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = std::fs::File::create(path.as_ref())?;
        self.encode_png(BufWriter::new(file))
    }

    pub fn encode_png<W: Write>(&self, writer: W) -> Result<()> {
        let mut encoder = png::Encoder::new(writer, self.width as u32, self.height as u32);
        encoder.set_color(png::ColorType::Rgba);
        encoder.set_depth(png::BitDepth::Eight);
        let mut w = encoder.write_header().map_err(|e| Error::Png(e.to_string()))?;
        w.write_image_data(&self.to_rgba8()).map_err(|e| Error::Png(e.to_string()))?;
        w.finish().map_err(|e| Error::Png(e.to_string()))?;
        Ok(())
    }
}

pub fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Depth buffer dump: ASCII header line `DEPTH <width> <height>\n` followed by
/// `width * height` little-endian `f32` values in row-major order. Pixels with
/// no coverage hold `+inf`.
pub fn write_depth(path: impl AsRef<Path>, width: usize, height: usize, depth: &[f64]) -> Result<()> {
    assert_eq!(depth.len(), width * height);
    let mut w = BufWriter::new(std::fs::File::create(path.as_ref())?);
    write!(w, "DEPTH {width} {height}\n")?;
    for &d in depth {
        w.write_all(&(d as f32).to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_depth(path: impl AsRef<Path>) -> Result<(usize, usize, Vec<f64>)> {
    let bytes = std::fs::read(path.as_ref())?;
    let nl = bytes.iter().position(|&b| b == b'\n').ok_or_else(|| Error::parse("depth", "missing header"))?;
    let header = std::str::from_utf8(&bytes[..nl]).map_err(|e| Error::parse("depth", e.to_string()))?;
    let parts: Vec<&str> = header.split_whitespace().collect();
    if parts.len() != 3 || parts[0] != "DEPTH" {
        return Err(Error::parse("depth", format!("bad header {header:?}")));
    }
    let parse = |s: &str| s.parse::<usize>().map_err(|e| Error::parse("depth", e.to_string()));
    let (w, h) = (parse(parts[1])?, parse(parts[2])?);
    let body = &bytes[nl + 1..];
    if body.len() != 4 * w * h {
        return Err(Error::parse("depth", format!("expected {} bytes, got {}", 4 * w * h, body.len())));
    }
    let depth = body.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64).collect();
    Ok((w, h, depth))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sample_at_pixel_center_is_exact() {
        let mut img = ImageRGBA::new(3, 2);
        img.set(1, 1, [0.1, 0.2, 0.3, 0.4]);
        assert_eq!(img.sample(1.0, 1.0), [0.1, 0.2, 0.3, 0.4]);
        let half = img.sample(1.5, 1.0);
        assert!((half[3] - 0.2).abs() < 1e-15);
        assert_eq!(img.sample(-2.0, 0.0), [0.0; 4]);
    }

    #[test]
    fn png_round_trip_is_8bit_exact() {
        let mut img = ImageRGBA::new(4, 3);
        for y in 0..3 {
            for x in 0..4 {
                img.set(x, y, [x as f64 / 3.0, y as f64 / 2.0, 0.5, if x == 0 { 0.0 } else { 1.0 }]);
            }
        }
        let mut buf = Vec::new();
        img.encode_png(&mut buf).unwrap();
        let back = ImageRGBA::decode_png(std::io::Cursor::new(buf)).unwrap();
        assert_eq!(back.to_rgba8(), img.to_rgba8());
    }

    #[test]
    fn depth_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.depth");
        write_depth(&path, 2, 2, &[1.0, 2.5, f64::INFINITY, 4.0]).unwrap();
        let (w, h, d) = read_depth(&path).unwrap();
        assert_eq!((w, h), (2, 2));
        assert_eq!(d[1], 2.5);
        assert!(d[2].is_infinite());
    }
}
