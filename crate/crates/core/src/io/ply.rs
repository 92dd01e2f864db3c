//! Binary little-endian PLY in the community splatting layout.
//!
//! Per vertex: `x y z nx ny nz f_dc_0..2 f_rest_* opacity scale_0..2
//! rot_0..3`, all `float`. `f_rest` holds the higher-order coefficients
//! channel-major (all red coefficients, then green, then blue). Opacity is
//! stored as a logit, scales as logs, rotations as `(w, x, y, z)`.
//! Values are stored at 32-bit precision.

use std::fs;
use std::io::Write;
use std::path::Path;

use nalgebra::{Vector3, Vector4};

use crate::error::{Error, Result};
use crate::gaussian::GaussianScene;
use crate::sh::{coeff_count, MAX_SH_DEGREE};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
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
    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "char" | "int8" => Scalar::I8,
            "uchar" | "uint8" => Scalar::U8,
            "short" | "int16" => Scalar::I16,
            "ushort" | "uint16" => Scalar::U16,
            "int" | "int32" => Scalar::I32,
            "uint" | "uint32" => Scalar::U32,
            "float" | "float32" => Scalar::F32,
            "double" | "float64" => Scalar::F64,
            _ => return None,
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

    fn read_le(self, b: &[u8]) -> f64 {
        match self {
            Scalar::I8 => f64::from(b[0] as i8),
            Scalar::U8 => f64::from(b[0]),
            Scalar::I16 => f64::from(i16::from_le_bytes([b[0], b[1]])),
            Scalar::U16 => f64::from(u16::from_le_bytes([b[0], b[1]])),
            Scalar::I32 => f64::from(i32::from_le_bytes([b[0], b[1], b[2], b[3]])),
            Scalar::U32 => f64::from(u32::from_le_bytes([b[0], b[1], b[2], b[3]])),
            Scalar::F32 => f64::from(f32::from_le_bytes([b[0], b[1], b[2], b[3]])),
            Scalar::F64 => f64::from_le_bytes([b[0], b[1], b[2], b[3], b[4], b[5], b[6], b[7]]),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Encoding {
    Ascii,
    BinaryLe,
}

#[derive(Debug)]
struct Element {
    name: String,
    count: usize,
    props: Vec<(String, Scalar)>,
}

/// The vertex element of a PLY file as a dense table.
#[derive(Debug)]
struct VertexTable {
    names: Vec<String>,
    types: Vec<Scalar>,
    rows: Vec<Vec<f64>>,
}

impl VertexTable {
    fn column(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    fn require(&self, name: &str) -> Result<usize> {
        self.column(name).ok_or_else(|| Error::Format(format!("missing vertex property '{name}'")))
    }
}

fn parse_header(bytes: &[u8]) -> Result<(Encoding, Vec<Element>, usize)> {
    const END: &[u8] = b"end_header";
    let end = bytes
        .windows(END.len())
        .position(|w| w == END)
        .ok_or_else(|| Error::Format("missing end_header".into()))?;
    let mut body_start = end + END.len();
    if bytes.get(body_start) == Some(&b'\r') {
        body_start += 1;
    }
    if bytes.get(body_start) == Some(&b'\n') {
        body_start += 1;
    }
    let text = std::str::from_utf8(&bytes[..end]).map_err(|_| Error::Format("header is not text".into()))?;
    let mut lines = text.lines().map(str::trim);
    if lines.next() != Some("ply") {
        return Err(Error::Format("missing 'ply' magic".into()));
    }
    let mut encoding = None;
    let mut elements: Vec<Element> = Vec::new();
    for line in lines {
        let tok: Vec<&str> = line.split_whitespace().collect();
        match tok.as_slice() {
            [] | ["comment", ..] | ["obj_info", ..] => {}
            ["format", "binary_little_endian", _] => encoding = Some(Encoding::BinaryLe),
            ["format", "ascii", _] => encoding = Some(Encoding::Ascii),
            ["format", other, ..] => return Err(Error::Format(format!("unsupported PLY format '{other}'"))),
            ["element", name, count] => elements.push(Element {
                name: (*name).to_string(),
                count: count.parse().map_err(|_| Error::Format(format!("bad element count '{count}'")))?,
                props: Vec::new(),
            }),
            ["property", "list", ..] => return Err(Error::Format("list properties are not supported".into())),
            ["property", ty, name] => {
                let ty = Scalar::parse(ty).ok_or_else(|| Error::Format(format!("unknown property type '{ty}'")))?;
                elements
                    .last_mut()
                    .ok_or_else(|| Error::Format("property before any element".into()))?
                    .props
                    .push(((*name).to_string(), ty));
            }
            _ => return Err(Error::Format(format!("unrecognized header line '{line}'"))),
        }
    }
    let encoding = encoding.ok_or_else(|| Error::Format("missing format line".into()))?;
    Ok((encoding, elements, body_start))
}

fn read_vertices(path: &Path) -> Result<VertexTable> {
    let bytes = fs::read(path)?;
    let (encoding, elements, body) = parse_header(&bytes)?;
    let vi = elements
        .iter()
        .position(|e| e.name == "vertex")
        .ok_or_else(|| Error::Format("no vertex element".into()))?;
    let vertex = &elements[vi];
    let names: Vec<String> = vertex.props.iter().map(|(n, _)| n.clone()).collect();
    let types: Vec<Scalar> = vertex.props.iter().map(|(_, t)| *t).collect();
    let mut rows = Vec::with_capacity(vertex.count);
    match encoding {
        Encoding::BinaryLe => {
            let skip: usize = elements[..vi]
                .iter()
                .map(|e| e.count * e.props.iter().map(|(_, t)| t.size()).sum::<usize>())
                .sum();
            let stride: usize = types.iter().map(|t| t.size()).sum();
            let start = body + skip;
            let expected = start + stride * vertex.count;
            if bytes.len() < expected {
                return Err(Error::Length { expected: expected - body, found: bytes.len().saturating_sub(body) });
            }
            for v in 0..vertex.count {
                let mut off = start + v * stride;
                let mut row = Vec::with_capacity(types.len());
                for t in &types {
                    row.push(t.read_le(&bytes[off..off + t.size()]));
                    off += t.size();
                }
                rows.push(row);
            }
        }
        Encoding::Ascii => {
            let text = std::str::from_utf8(&bytes[body..]).map_err(|_| Error::Format("ascii body is not text".into()))?;
            let mut lines = text.lines().filter(|l| !l.trim().is_empty());
            for e in &elements[..vi] {
                for _ in 0..e.count {
                    lines.next();
                }
            }
            for v in 0..vertex.count {
                let line = lines.next().ok_or(Error::Length { expected: vertex.count, found: v })?;
                let row: Vec<f64> = line
                    .split_whitespace()
                    .map(|t| t.parse::<f64>().map_err(|_| Error::Format(format!("bad number '{t}'"))))
                    .collect::<Result<_>>()?;
                if row.len() != types.len() {
                    return Err(Error::Format(format!("vertex {v} has {} values, expected {}", row.len(), types.len())));
                }
                rows.push(row);
            }
        }
    }
    Ok(VertexTable { names, types, rows })
}

/// Property names of the scene layout for a given SH degree.
pub fn scene_properties(sh_degree: usize) -> Vec<String> {
    let mut p: Vec<String> = ["x", "y", "z", "nx", "ny", "nz", "f_dc_0", "f_dc_1", "f_dc_2"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    for k in 0..3 * (coeff_count(sh_degree) - 1) {
        p.push(format!("f_rest_{k}"));
    }
    p.push("opacity".into());
    p.extend((0..3).map(|k| format!("scale_{k}")));
    p.extend((0..4).map(|k| format!("rot_{k}")));
    p
}

pub fn save_scene(scene: &GaussianScene, path: &Path) -> Result<()> {
    fs::write(path, encode_scene(scene))?;
    Ok(())
}

pub fn encode_scene(scene: &GaussianScene) -> Vec<u8> {
    let props = scene_properties(scene.sh_degree);
    let mut out = Vec::new();
    out.extend_from_slice(b"ply\nformat binary_little_endian 1.0\n");
    out.extend_from_slice(format!("element vertex {}\n", scene.len()).as_bytes());
    for p in &props {
        out.extend_from_slice(format!("property float {p}\n").as_bytes());
    }
    out.extend_from_slice(b"end_header\n");
    let k = scene.coeffs_per_gaussian();
    for i in 0..scene.len() {
        let mut row: Vec<f64> = Vec::with_capacity(props.len());
        row.extend(scene.positions[i].iter());
        row.extend([0.0; 3]);
        let sh = scene.sh(i);
        row.extend(sh[0].iter());
        for c in 0..3 {
            row.extend(sh[1..k].iter().map(|v| v[c]));
        }
        row.push(scene.opacity_logits[i]);
        row.extend(scene.log_scales[i].iter());
        row.extend(scene.rotations[i].iter());
        for v in row {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

pub fn load_scene(path: &Path) -> Result<GaussianScene> {
    let table = read_vertices(path)?;
    let rest = table.names.iter().filter(|n| n.starts_with("f_rest_")).count();
    let sh_degree = (0..=MAX_SH_DEGREE)
        .find(|&d| 3 * (coeff_count(d) - 1) == rest)
        .ok_or_else(|| Error::Format(format!("{rest} f_rest properties do not match any sh degree")))?;
    let expected = scene_properties(sh_degree);
    let cols: Vec<usize> = expected.iter().map(|n| table.require(n)).collect::<Result<_>>()?;
    if table.names.len() != expected.len() {
        return Err(Error::Format(format!(
            "vertex has {} properties, layout expects {}",
            table.names.len(),
            expected.len()
        )));
    }
    let k = coeff_count(sh_degree);
    let mut scene = GaussianScene::empty(sh_degree);
    for row in &table.rows {
        let v = |name_idx: usize| row[cols[name_idx]];
        scene.positions.push(Vector3::new(v(0), v(1), v(2)));
        scene.sh_coeffs.push(Vector3::new(v(6), v(7), v(8)));
        let rest_base = 9;
        for j in 0..k - 1 {
            scene.sh_coeffs.push(Vector3::new(
                v(rest_base + j),
                v(rest_base + (k - 1) + j),
                v(rest_base + 2 * (k - 1) + j),
            ));
        }
        let o = rest_base + 3 * (k - 1);
        scene.opacity_logits.push(v(o));
        scene.log_scales.push(Vector3::new(v(o + 1), v(o + 2), v(o + 3)));
        scene.rotations.push(Vector4::new(v(o + 4), v(o + 5), v(o + 6), v(o + 7)));
    }
    Ok(scene)
}

/// Reads `x y z` and, when present, `red green blue` (bytes or floats in
/// `[0, 1]`) from any PLY vertex element.
pub fn read_point_cloud(path: &Path) -> Result<(Vec<Vector3<f64>>, Option<Vec<Vector3<f64>>>)> {
    let t = read_vertices(path)?;
    let (x, y, z) = (t.require("x")?, t.require("y")?, t.require("z")?);
    let points = t.rows.iter().map(|r| Vector3::new(r[x], r[y], r[z])).collect();
    let colors = match (t.column("red"), t.column("green"), t.column("blue")) {
        (Some(r), Some(g), Some(b)) => {
            let norm = |col: usize| if t.types[col] == Scalar::U8 { 255.0 } else { 1.0 };
            Some(
                t.rows
                    .iter()
                    .map(|row| Vector3::new(row[r] / norm(r), row[g] / norm(g), row[b] / norm(b)))
                    .collect(),
            )
        }
        _ => None,
    };
    Ok((points, colors))
}

/// Writes a binary point cloud with float positions and byte colors.
pub fn write_point_cloud(path: &Path, points: &[Vector3<f64>], colors: Option<&[Vector3<f64>]>) -> Result<()> {
    let mut out = Vec::new();
    write!(out, "ply\nformat binary_little_endian 1.0\nelement vertex {}\n", points.len())?;
    out.extend_from_slice(b"property float x\nproperty float y\nproperty float z\n");
    if colors.is_some() {
        out.extend_from_slice(b"property uchar red\nproperty uchar green\nproperty uchar blue\n");
    }
    out.extend_from_slice(b"end_header\n");
    for (i, p) in points.iter().enumerate() {
        for v in p.iter() {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        if let Some(c) = colors {
            out.extend(c[i].iter().map(|&v| super::png::quantize(v)));
        }
    }
    fs::write(path, out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn degree_zero_layout_has_17_properties() {
        assert_eq!(scene_properties(0).len(), 17);
        assert_eq!(scene_properties(3).len(), 17 + 45);
    }

    #[test]
    fn header_errors() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.ply");
        let mut scene = GaussianScene::empty(0);
        scene.positions.push(Vector3::zeros());
        scene.rotations.push(Vector4::new(1.0, 0.0, 0.0, 0.0));
        scene.log_scales.push(Vector3::zeros());
        scene.opacity_logits.push(0.0);
        scene.sh_coeffs.push(Vector3::zeros());
        let bytes = encode_scene(&scene);

        let text = String::from_utf8_lossy(&bytes).replace("property float opacity\n", "property float opacityx\n");
        fs::write(&p, text.as_bytes()).unwrap();
        match load_scene(&p) {
            Err(Error::Format(m)) => assert!(m.contains("opacity"), "{m}"),
            other => panic!("expected format error, got {other:?}"),
        }

        fs::write(&p, &bytes[..bytes.len() - 5]).unwrap();
        assert!(matches!(load_scene(&p), Err(Error::Length { .. })));

        fs::write(&p, b"not a ply").unwrap();
        assert!(matches!(load_scene(&p), Err(Error::Format(_))));
    }

    #[test]
    fn ascii_point_cloud() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("pc.ply");
        fs::write(
            &p,
            "ply\nformat ascii 1.0\nelement vertex 2\nproperty float x\nproperty float y\nproperty float z\n\
             property uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n0 0 0 255 0 0\n1 2 3 0 255 51\n",
        )
        .unwrap();
        let (pts, cols) = read_point_cloud(&p).unwrap();
        assert_eq!(pts[1], Vector3::new(1.0, 2.0, 3.0));
        let cols = cols.unwrap();
        assert_eq!(cols[0], Vector3::new(1.0, 0.0, 0.0));
        assert!((cols[1].z - 0.2).abs() < 1e-12);
    }
}
