//! PLY and OBJ mesh files.
//!
//! PLY is written as ASCII with shortest round-trip floats, so positions
//! survive a write/read cycle exactly; vertex colors are stored as 8-bit
//! `red green blue alpha`. The reader also accepts binary PLY of either byte
//! order and fan-triangulates polygons.

use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use crate::error::{Error, Result};
use crate::image::quantize;
use crate::mesh::{Mesh, Rgba, Vec3};

pub fn read_mesh(path: impl AsRef<Path>) -> Result<Mesh> {
    let path = path.as_ref();
    let bytes = std::fs::read(path)?;
    match path.extension().and_then(|e| e.to_str()).map(|e| e.to_ascii_lowercase()).as_deref() {
        Some("obj") => parse_obj(std::str::from_utf8(&bytes).map_err(|e| Error::parse("obj", e.to_string()))?),
        _ => parse_ply(&bytes),
    }
}

pub fn write_mesh(path: impl AsRef<Path>, mesh: &Mesh) -> Result<()> {
    let path = path.as_ref();
    let text = match path.extension().and_then(|e| e.to_str()).map(|e| e.to_ascii_lowercase()).as_deref() {
        Some("obj") => obj_string(mesh),
        _ => ply_string(mesh),
    };
    std::fs::write(path, text)?;
    Ok(())
}

pub fn ply_string(mesh: &Mesh) -> String {
    let mut s = String::new();
    s.push_str("ply\nformat ascii 1.0\n");
    let _ = writeln!(s, "element vertex {}", mesh.num_vertices());
    s.push_str("property double x\nproperty double y\nproperty double z\n");
    if mesh.colors.is_some() {
        s.push_str("property uchar red\nproperty uchar green\nproperty uchar blue\nproperty uchar alpha\n");
    }
    let _ = writeln!(s, "element face {}", mesh.num_faces());
    s.push_str("property list uchar int vertex_indices\nend_header\n");
    for (i, p) in mesh.vertices.iter().enumerate() {
        let _ = write!(s, "{} {} {}", p.x, p.y, p.z);
        if let Some(c) = &mesh.colors {
            let q = c[i].map(quantize);
            let _ = write!(s, " {} {} {} {}", q[0], q[1], q[2], q[3]);
        }
        s.push('\n');
    }
    for f in &mesh.faces {
        let _ = writeln!(s, "3 {} {} {}", f[0], f[1], f[2]);
    }
    s
}

pub fn obj_string(mesh: &Mesh) -> String {
    let mut s = String::new();
    for (i, p) in mesh.vertices.iter().enumerate() {
        let _ = write!(s, "v {} {} {}", p.x, p.y, p.z);
        if let Some(c) = &mesh.colors {
            let _ = write!(s, " {} {} {}", c[i][0], c[i][1], c[i][2]);
        }
        s.push('\n');
    }
    for f in &mesh.faces {
        let _ = writeln!(s, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1);
    }
    s
}

pub fn parse_obj(text: &str) -> Result<Mesh> {
    let err = |line: usize, msg: &str| Error::parse("obj", format!("line {}: {msg}", line + 1));
    let mut vertices = Vec::new();
    let mut colors: Vec<Rgba> = Vec::new();
    let mut faces = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let mut it = line.split_whitespace();
        match it.next() {
            Some("v") => {
                let vals: Vec<f64> = it.map(|t| t.parse::<f64>().map_err(|_| err(ln, "bad number"))).collect::<Result<_>>()?;
                if vals.len() < 3 {
                    return Err(err(ln, "vertex needs three coordinates"));
                }
                vertices.push(Vec3::new(vals[0], vals[1], vals[2]));
                if vals.len() >= 6 {
                    colors.push([vals[3], vals[4], vals[5], 1.0]);
                }
            }
            Some("f") => {
                let idx: Vec<usize> = it
                    .map(|t| {
                        let first = t.split('/').next().unwrap_or("");
                        let i: i64 = first.parse().map_err(|_| err(ln, "bad face index"))?;
                        let n = vertices.len() as i64;
                        let i = if i < 0 { n + i } else { i - 1 };
                        if i < 0 {
                            return Err(err(ln, "face index out of range"));
                        }
                        Ok(i as usize)
                    })
                    .collect::<Result<_>>()?;
                if idx.len() < 3 {
                    return Err(err(ln, "face needs three vertices"));
                }
                for k in 1..idx.len() - 1 {
                    faces.push([idx[0], idx[k], idx[k + 1]]);
                }
            }
            _ => {}
        }
    }
    let mesh = Mesh::new(vertices, faces)?;
    if !colors.is_empty() {
        if colors.len() != mesh.num_vertices() {
            return Err(Error::parse("obj", "colors given for only some vertices"));
        }
        return mesh.with_colors(colors);
    }
    Ok(mesh)
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Format {
    Ascii,
    Little,
    Big,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Scalar {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl Scalar {
    fn parse(s: &str) -> Result<Scalar> {
        Ok(match s {
            "char" | "int8" => Scalar::I8,
            "uchar" | "uint8" => Scalar::U8,
            "short" | "int16" => Scalar::I16,
            "ushort" | "uint16" => Scalar::U16,
            "int" | "int32" => Scalar::I32,
            "uint" | "uint32" => Scalar::U32,
            "float" | "float32" => Scalar::F32,
            "double" | "float64" => Scalar::F64,
            other => return Err(Error::parse("ply", format!("unknown property type {other}"))),
        })
    }

    fn size(self) -> usize {
        match self {
            Scalar::I8 | Scalar::U8 => 1,
            Scalar::I16 | Scalar::U16 => 2,
            Scalar::I32 | Scalar::U32 | Scalar::F32 => 4,
            Scalar::F64 => 8,
        }
    }
}

#[derive(Debug, Clone)]
enum Property {
    Scalar(String, Scalar),
    List(String, Scalar, Scalar),
}

#[derive(Debug, Clone)]
struct Element {
    name: String,
    count: usize,
    props: Vec<Property>,
}

/// Reads scalar values from the body in any of the three encodings.
struct Body<'a> {
    format: Format,
    bytes: &'a [u8],
    pos: usize,
    tokens: Option<std::str::SplitAsciiWhitespace<'a>>,
}

impl<'a> Body<'a> {
    fn read(&mut self, t: Scalar) -> Result<f64> {
        if self.format == Format::Ascii {
            let tok = self.tokens.as_mut().and_then(|it| it.next()).ok_or_else(|| Error::parse("ply", "unexpected end of data"))?;
            return tok.parse::<f64>().map_err(|_| Error::parse("ply", format!("bad value {tok}")));
        }
        let n = t.size();
        let raw = self.bytes.get(self.pos..self.pos + n).ok_or_else(|| Error::parse("ply", "unexpected end of data"))?;
        self.pos += n;
        let mut b = [0u8; 8];
        b[..n].copy_from_slice(raw);
        if self.format == Format::Big {
            b[..n].reverse();
        }
        Ok(match t {
            Scalar::I8 => b[0] as i8 as f64,
            Scalar::U8 => b[0] as f64,
            Scalar::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::I32 => i32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Scalar::U32 => u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Scalar::F32 => f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Scalar::F64 => f64::from_le_bytes(b),
        })
    }
}

pub fn parse_ply(bytes: &[u8]) -> Result<Mesh> {
    let mut reader = BufReader::new(bytes);
    let mut line = String::new();
    let mut header_len = 0;
    let mut next_line = |line: &mut String| -> Result<()> {
        line.clear();
        let n = reader.read_line(line)?;
        if n == 0 {
            return Err(Error::parse("ply", "header ended early"));
        }
        header_len += n;
        Ok(())
    };
    next_line(&mut line)?;
    if line.trim() != "ply" {
        return Err(Error::parse("ply", "missing magic"));
    }
    let mut format = None;
    let mut elements: Vec<Element> = Vec::new();
    loop {
        next_line(&mut line)?;
        let toks: Vec<&str> = line.split_whitespace().collect();
        match toks.as_slice() {
            ["format", f, _] => {
                format = Some(match *f {
                    "ascii" => Format::Ascii,
                    "binary_little_endian" => Format::Little,
                    "binary_big_endian" => Format::Big,
                    other => return Err(Error::parse("ply", format!("unknown format {other}"))),
                })
            }
            ["element", name, count] => elements.push(Element {
                name: name.to_string(),
                count: count.parse().map_err(|_| Error::parse("ply", "bad element count"))?,
                props: Vec::new(),
            }),
            ["property", "list", ct, it, name] => elements
                .last_mut()
                .ok_or_else(|| Error::parse("ply", "property before element"))?
                .props
                .push(Property::List(name.to_string(), Scalar::parse(ct)?, Scalar::parse(it)?)),
            ["property", t, name] => elements
                .last_mut()
                .ok_or_else(|| Error::parse("ply", "property before element"))?
                .props
                .push(Property::Scalar(name.to_string(), Scalar::parse(t)?)),
            ["end_header"] => break,
            _ => {}
        }
    }
    let format = format.ok_or_else(|| Error::parse("ply", "missing format line"))?;
    let rest = &bytes[header_len..];
    let text;
    let mut body = Body { format, bytes: rest, pos: 0, tokens: None };
    if format == Format::Ascii {
        text = std::str::from_utf8(rest).map_err(|e| Error::parse("ply", e.to_string()))?;
        body.tokens = Some(text.split_ascii_whitespace());
    }

    let mut vertices = Vec::new();
    let mut colors = Vec::new();
    let mut faces = Vec::new();
    for el in &elements {
        for _ in 0..el.count {
            let mut pos = [0.0; 3];
            let mut col = [0.0, 0.0, 0.0, 255.0];
            let mut has_color = false;
            let mut color_scale = 255.0;
            for p in &el.props {
                match p {
                    Property::Scalar(name, t) => {
                        let v = body.read(*t)?;
                        match name.as_str() {
                            "x" => pos[0] = v,
                            "y" => pos[1] = v,
                            "z" => pos[2] = v,
                            "red" | "r" | "green" | "g" | "blue" | "b" | "alpha" | "a" => {
                                has_color = true;
                                if matches!(t, Scalar::F32 | Scalar::F64) {
                                    color_scale = 1.0;
                                }
                                let k = match &name[..1] {
                                    "r" => 0,
                                    "g" => 1,
                                    "b" => 2,
                                    _ => 3,
                                };
                                col[k] = v;
                            }
                            _ => {}
                        }
                    }
                    Property::List(name, ct, it) => {
                        let n = body.read(*ct)? as usize;
                        let mut idx = Vec::with_capacity(n);
                        for _ in 0..n {
                            idx.push(body.read(*it)?);
                        }
                        if el.name == "face" && (name == "vertex_indices" || name == "vertex_index") {
                            if n < 3 {
                                return Err(Error::parse("ply", "face with fewer than three vertices"));
                            }
                            if idx.iter().any(|&i| i < 0.0) {
                                return Err(Error::parse("ply", "negative face index"));
                            }
                            for k in 1..n - 1 {
                                faces.push([idx[0] as usize, idx[k] as usize, idx[k + 1] as usize]);
                            }
                        }
                    }
                }
            }
            if el.name == "vertex" {
                vertices.push(Vec3::new(pos[0], pos[1], pos[2]));
                if has_color {
                    if color_scale == 1.0 && col[3] == 255.0 {
                        col[3] = 1.0;
                    }
                    colors.push(col.map(|c| c / color_scale));
                }
            }
        }
    }
    let mesh = Mesh::new(vertices, faces)?;
    if !colors.is_empty() {
        return mesh.with_colors(colors);
    }
    Ok(mesh)
}

/// Reads the whole stream into memory and parses it as PLY.
pub fn read_ply<R: Read>(mut reader: R) -> Result<Mesh> {
    let mut buf = Vec::new();
    reader.read_to_end(&mut buf)?;
    parse_ply(&buf)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::shapes::{make_gt_mesh, ColorPattern, Shape};

    #[test]
    fn ply_round_trip_is_exact_for_positions() {
        let m = make_gt_mesh(Shape::Blob, 2, ColorPattern::Spots, 3);
        let back = parse_ply(ply_string(&m).as_bytes()).unwrap();
        assert_eq!(back.vertices, m.vertices);
        assert_eq!(back.faces, m.faces);
        for (a, b) in back.colors.unwrap().iter().zip(m.colors.unwrap()) {
            for c in 0..4 {
                assert!((a[c] - b[c]).abs() <= 0.5 / 255.0 + 1e-12);
            }
        }
    }

    #[test]
    fn binary_little_endian_with_quads() {
        let mut bytes = b"ply\nformat binary_little_endian 1.0\nelement vertex 4\nproperty float x\nproperty float y\nproperty float z\nproperty uchar red\nproperty uchar green\nproperty uchar blue\nelement face 1\nproperty list uchar int vertex_indices\nend_header\n".to_vec();
        for (p, c) in [([0f32, 0., 0.], [255u8, 0, 0]), ([1., 0., 0.], [0, 255, 0]), ([1., 1., 0.], [0, 0, 255]), ([0., 1., 0.], [0, 0, 0])] {
            for x in p {
                bytes.extend_from_slice(&x.to_le_bytes());
            }
            bytes.extend_from_slice(&c);
        }
        bytes.push(4);
        for i in [0i32, 1, 2, 3] {
            bytes.extend_from_slice(&i.to_le_bytes());
        }
        let m = parse_ply(&bytes).unwrap();
        assert_eq!(m.faces, vec![[0, 1, 2], [0, 2, 3]]);
        assert_eq!(m.colors.unwrap()[1], [0.0, 1.0, 0.0, 1.0]);
    }

    #[test]
    fn obj_round_trip() {
        let m = make_gt_mesh(Shape::Cube, 1, ColorPattern::Gradient, 0);
        let back = parse_obj(&obj_string(&m)).unwrap();
        assert_eq!(back.vertices, m.vertices);
        assert_eq!(back.faces, m.faces);
        assert_eq!(back.colors, m.colors);
    }

    #[test]
    fn bad_index_is_error() {
        let text = "ply\nformat ascii 1.0\nelement vertex 3\nproperty float x\nproperty float y\nproperty float z\nelement face 1\nproperty list uchar int vertex_indices\nend_header\n0 0 0\n1 0 0\n0 1 0\n3 0 1 7\n";
        assert!(matches!(parse_ply(text.as_bytes()), Err(Error::FaceIndexOutOfRange { .. })));
        assert!(parse_ply(b"plx\n").is_err());
    }
}
