//! Interchange files: PLY (Gaussians, meshes, point clouds) and OBJ.
//!
//! Gaussian PLY follows the common splatting layout: per vertex
//! `x y z scale_0..2 rot_0..3 opacity f_dc_0..2` as little-endian f32, where
//! scales are natural logs, `rot` is `(w, x, y, z)`, opacity is the
//! pre-sigmoid logit, and `f_dc` is the degree-0 SH coefficient
//! (`color = 0.5 + SH_C0 * f_dc`). Anchors follow as `anchor_x..z` u16.

use std::io::{BufRead, BufReader, Read, Write};

use crate::decoders::{Gaussian, GaussianSet, TriMesh};
use crate::error::{Result, SlatError};
use crate::metrics::PointCloud;
use crate::numeric::{logit, sigmoid};
use crate::sparse::VoxelCoord;

pub const SH_C0: f64 = 0.282_094_791_773_878_14;

#[derive(Debug, Clone, Copy, PartialEq)]
enum Scalar {
    U8,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl Scalar {
    fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "uchar" | "uint8" => Self::U8,
            "ushort" | "uint16" => Self::U16,
            "int" | "int32" => Self::I32,
            "uint" | "uint32" => Self::U32,
            "float" | "float32" => Self::F32,
            "double" | "float64" => Self::F64,
            _ => return Err(SlatError::Format(format!("unsupported PLY type '{s}'"))),
        })
    }

    fn read(self, r: &mut impl Read) -> Result<f64> {
        let mut b = [0u8; 8];
        Ok(match self {
            Self::U8 => {
                r.read_exact(&mut b[..1])?;
                b[0] as f64
            }
            Self::U16 => {
                r.read_exact(&mut b[..2])?;
                u16::from_le_bytes([b[0], b[1]]) as f64
            }
            Self::I32 => {
                r.read_exact(&mut b[..4])?;
                i32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64
            }
            Self::U32 => {
                r.read_exact(&mut b[..4])?;
                u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64
            }
            Self::F32 => {
                r.read_exact(&mut b[..4])?;
                f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64
            }
            Self::F64 => {
                r.read_exact(&mut b)?;
                f64::from_le_bytes(b)
            }
        })
    }
}

#[derive(Debug, Clone)]
enum Property {
    Scalar(String, Scalar),
    List(Scalar, Scalar),
}

#[derive(Debug, Clone)]
struct Element {
    name: String,
    count: usize,
    props: Vec<Property>,
}

/// Decoded binary PLY: per element, per row, scalar properties by name and
/// the (single) list property if any.
type PlyElement = (Element, Vec<Vec<f64>>, Vec<Vec<f64>>);

struct PlyData {
    elements: Vec<PlyElement>,
}

impl PlyData {
    fn element(&self, name: &str) -> Option<&PlyElement> {
        self.elements.iter().find(|e| e.0.name == name)
    }

    fn column(&self, element: &str, prop: &str) -> Result<Vec<f64>> {
        let (el, rows, _) =
            self.element(element).ok_or_else(|| SlatError::Format(format!("PLY lacks element '{element}'")))?;
        let scalars: Vec<&String> = el
            .props
            .iter()
            .filter_map(|p| match p {
                Property::Scalar(n, _) => Some(n),
                Property::List(..) => None,
            })
            .collect();
        let k = scalars
            .iter()
            .position(|n| *n == prop)
            .ok_or_else(|| SlatError::Format(format!("PLY element '{element}' lacks '{prop}'")))?;
        Ok(rows.iter().map(|r| r[k]).collect())
    }

    fn has(&self, element: &str, prop: &str) -> bool {
        self.element(element)
            .is_some_and(|e| e.0.props.iter().any(|p| matches!(p, Property::Scalar(n, _) if n == prop)))
    }
}

fn read_ply(r: impl Read) -> Result<PlyData> {
    let mut r = BufReader::new(r);
    let mut line = String::new();
    let mut next = |r: &mut BufReader<_>| -> Result<String> {
        line.clear();
        if r.read_line(&mut line)? == 0 {
            return Err(SlatError::Format("truncated PLY header".into()));
        }
        Ok(line.trim().to_string())
    };
    if next(&mut r)? != "ply" {
        return Err(SlatError::Format("missing 'ply' magic".into()));
    }
    let mut elements: Vec<Element> = Vec::new();
    loop {
        let l = next(&mut r)?;
        let t: Vec<&str> = l.split_whitespace().collect();
        match t.as_slice() {
            ["format", "binary_little_endian", "1.0"] => {}
            ["format", f, ..] => return Err(SlatError::Format(format!("unsupported PLY format '{f}'"))),
            ["comment", ..] | [] => {}
            ["element", name, count] => elements.push(Element {
                name: name.to_string(),
                count: count.parse().map_err(|_| SlatError::Format(format!("bad count '{count}'")))?,
                props: Vec::new(),
            }),
            ["property", "list", c, v, _] => elements
                .last_mut()
                .ok_or_else(|| SlatError::Format("property before element".into()))?
                .props
                .push(Property::List(Scalar::parse(c)?, Scalar::parse(v)?)),
            ["property", ty, name] => elements
                .last_mut()
                .ok_or_else(|| SlatError::Format("property before element".into()))?
                .props
                .push(Property::Scalar(name.to_string(), Scalar::parse(ty)?)),
            ["end_header"] => break,
            _ => return Err(SlatError::Format(format!("unexpected PLY header line '{l}'"))),
        }
    }
    let mut out = Vec::new();
    for el in elements {
        let mut rows = Vec::with_capacity(el.count);
        let mut lists = Vec::new();
        for _ in 0..el.count {
            let mut row = Vec::new();
            for p in &el.props {
                match p {
                    Property::Scalar(_, ty) => row.push(ty.read(&mut r)?),
                    Property::List(cty, vty) => {
                        let n = cty.read(&mut r)? as usize;
                        lists.push((0..n).map(|_| vty.read(&mut r)).collect::<Result<Vec<_>>>()?);
                    }
                }
            }
            rows.push(row);
        }
        out.push((el, rows, lists));
    }
    Ok(PlyData { elements: out })
}

fn f32s(buf: &mut Vec<u8>, vals: &[f64]) {
    for v in vals {
        buf.extend_from_slice(&(*v as f32).to_le_bytes());
    }
}

pub fn write_gaussians_ply(set: &GaussianSet, mut w: impl Write) -> Result<()> {
    let mut h = format!(
        "ply\nformat binary_little_endian 1.0\ncomment resolution {}\nelement vertex {}\n",
        set.resolution,
        set.len()
    );
    for p in ["x", "y", "z", "scale_0", "scale_1", "scale_2", "rot_0", "rot_1", "rot_2", "rot_3", "opacity"] {
        h += &format!("property float {p}\n");
    }
    for p in ["f_dc_0", "f_dc_1", "f_dc_2"] {
        h += &format!("property float {p}\n");
    }
    for p in ["anchor_x", "anchor_y", "anchor_z"] {
        h += &format!("property ushort {p}\n");
    }
    h += "end_header\n";
    w.write_all(h.as_bytes())?;
    let mut buf = Vec::with_capacity(set.len() * 62);
    for g in &set.gaussians {
        f32s(&mut buf, &g.center);
        f32s(&mut buf, &g.scale.map(f64::ln));
        f32s(&mut buf, &g.rotation);
        f32s(&mut buf, &[logit(g.opacity)]);
        f32s(&mut buf, &g.color.map(|c| (c - 0.5) / SH_C0));
        for a in g.anchor.as_array() {
            buf.extend_from_slice(&(a as u16).to_le_bytes());
        }
    }
    w.write_all(&buf)?;
    Ok(())
}

fn header_comment(r: &[u8], key: &str) -> Option<u32> {
    let text = String::from_utf8_lossy(&r[..r.len().min(4096)]);
    text.lines().find_map(|l| l.strip_prefix(&format!("comment {key} "))?.trim().parse().ok())
}

pub fn read_gaussians_ply(mut r: impl Read) -> Result<GaussianSet> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    let resolution = header_comment(&bytes, "resolution").unwrap_or(64);
    let ply = read_ply(&bytes[..])?;
    let col = |p: &str| ply.column("vertex", p);
    let cols: Vec<Vec<f64>> = [
        "x", "y", "z", "scale_0", "scale_1", "scale_2", "rot_0", "rot_1", "rot_2", "rot_3", "opacity", "f_dc_0",
        "f_dc_1", "f_dc_2",
    ]
    .iter()
    .map(|p| col(p))
    .collect::<Result<_>>()?;
    let anchors = if ply.has("vertex", "anchor_x") {
        Some([col("anchor_x")?, col("anchor_y")?, col("anchor_z")?])
    } else {
        None
    };
    let n = cols[0].len();
    let gaussians = (0..n)
        .map(|i| {
            let v = |k: usize| cols[k][i];
            let center = [v(0), v(1), v(2)];
            let anchor = match &anchors {
                Some(a) => VoxelCoord::new(a[0][i] as u32, a[1][i] as u32, a[2][i] as u32),
                None => {
                    let g = center.map(|c| (((c + 0.5) * resolution as f64).floor().max(0.0) as u32).min(resolution - 1));
                    VoxelCoord::new(g[0], g[1], g[2])
                }
            };
            Gaussian {
                center,
                scale: [v(3).exp(), v(4).exp(), v(5).exp()],
                rotation: [v(6), v(7), v(8), v(9)],
                opacity: sigmoid(v(10)),
                color: [0.5 + SH_C0 * v(11), 0.5 + SH_C0 * v(12), 0.5 + SH_C0 * v(13)],
                anchor,
            }
        })
        .collect();
    Ok(GaussianSet { resolution, gaussians })
}

fn to_u8(c: f64) -> u8 {
    (c.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Binary PLY with positions, normals, 8-bit colours, and triangle faces.
pub fn write_mesh_ply(mesh: &TriMesh, mut w: impl Write) -> Result<()> {
    mesh.validate()?;
    let h = format!(
        "ply\nformat binary_little_endian 1.0\nelement vertex {}\nproperty float x\nproperty float y\nproperty float z\n\
         property float nx\nproperty float ny\nproperty float nz\nproperty uchar red\nproperty uchar green\n\
         property uchar blue\nelement face {}\nproperty list uchar int vertex_indices\nend_header\n",
        mesh.positions.len(),
        mesh.triangles.len()
    );
    w.write_all(h.as_bytes())?;
    let mut buf = Vec::new();
    for i in 0..mesh.positions.len() {
        f32s(&mut buf, &mesh.positions[i]);
        f32s(&mut buf, &mesh.normals[i]);
        buf.extend(mesh.colors[i].map(to_u8));
    }
    for t in &mesh.triangles {
        buf.push(3);
        for &i in t {
            buf.extend_from_slice(&(i as i32).to_le_bytes());
        }
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_mesh_ply(r: impl Read) -> Result<TriMesh> {
    let ply = read_ply(r)?;
    let c3 = |a: &str, b: &str, c: &str| -> Result<Vec<[f64; 3]>> {
        let (x, y, z) = (ply.column("vertex", a)?, ply.column("vertex", b)?, ply.column("vertex", c)?);
        Ok((0..x.len()).map(|i| [x[i], y[i], z[i]]).collect())
    };
    let positions = c3("x", "y", "z")?;
    let (_, _, faces) = ply.element("face").ok_or_else(|| SlatError::Format("PLY lacks faces".into()))?;
    let triangles = triangulate(faces.iter().map(|f| f.iter().map(|&v| v as i64).collect()))?;
    let mut mesh = TriMesh::new(positions, triangles)?;
    if ply.has("vertex", "red") {
        mesh.colors = c3("red", "green", "blue")?.into_iter().map(|c| c.map(|v| v / 255.0)).collect();
    }
    if ply.has("vertex", "nx") {
        mesh.normals = c3("nx", "ny", "nz")?;
    }
    Ok(mesh)
}

fn triangulate(faces: impl Iterator<Item = Vec<i64>>) -> Result<Vec<[u32; 3]>> {
    let mut tris = Vec::new();
    for f in faces {
        if f.len() < 3 || f.iter().any(|&i| i < 0 || i > u32::MAX as i64) {
            return Err(SlatError::Format(format!("bad face {f:?}")));
        }
        for k in 1..f.len() - 1 {
            tris.push([f[0] as u32, f[k] as u32, f[k + 1] as u32]);
        }
    }
    Ok(tris)
}

/// ASCII OBJ with `v`, `vn`, and `f a//a b//b c//c` records.
pub fn write_obj(mesh: &TriMesh, mut w: impl Write) -> Result<()> {
    mesh.validate()?;
    let mut s = String::new();
    for p in &mesh.positions {
        s += &format!("v {} {} {}\n", p[0], p[1], p[2]);
    }
    for n in &mesh.normals {
        s += &format!("vn {} {} {}\n", n[0], n[1], n[2]);
    }
    for t in &mesh.triangles {
        let [a, b, c] = t.map(|i| i + 1);
        s += &format!("f {a}//{a} {b}//{b} {c}//{c}\n");
    }
    w.write_all(s.as_bytes())?;
    Ok(())
}

/// Reads positions, normals (when one per vertex), and polygon faces.
pub fn read_obj(r: impl Read) -> Result<TriMesh> {
    let mut positions = Vec::new();
    let mut normals = Vec::new();
    let mut faces = Vec::new();
    for line in BufReader::new(r).lines() {
        let line = line?;
        let mut t = line.split_whitespace();
        let nums = |t: std::str::SplitWhitespace| -> Result<Vec<f64>> {
            t.map(|v| v.parse::<f64>().map_err(|_| SlatError::Format(format!("bad number '{v}'")))).collect()
        };
        match t.next() {
            Some("v") => {
                let v = nums(t)?;
                if v.len() < 3 {
                    return Err(SlatError::Format(format!("short vertex '{line}'")));
                }
                positions.push([v[0], v[1], v[2]]);
            }
            Some("vn") => {
                let v = nums(t)?;
                if v.len() < 3 {
                    return Err(SlatError::Format(format!("short normal '{line}'")));
                }
                normals.push([v[0], v[1], v[2]]);
            }
            Some("f") => {
                let n = positions.len() as i64;
                let idx = t
                    .map(|v| {
                        let i: i64 = v
                            .split('/')
                            .next()
                            .unwrap_or("")
                            .parse()
                            .map_err(|_| SlatError::Format(format!("bad face index '{v}'")))?;
                        Ok(if i < 0 { n + i } else { i - 1 })
                    })
                    .collect::<Result<Vec<_>>>()?;
                faces.push(idx);
            }
            _ => {}
        }
    }
    let mut mesh = TriMesh::new(positions, triangulate(faces.into_iter())?)?;
    if normals.len() == mesh.positions.len() {
        mesh.normals = normals;
    }
    Ok(mesh)
}

pub fn write_points_ply(cloud: &PointCloud, mut w: impl Write) -> Result<()> {
    let mut h = format!(
        "ply\nformat binary_little_endian 1.0\nelement vertex {}\nproperty float x\nproperty float y\nproperty float z\n",
        cloud.len()
    );
    if cloud.normals.is_some() {
        h += "property float nx\nproperty float ny\nproperty float nz\n";
    }
    h += "end_header\n";
    w.write_all(h.as_bytes())?;
    let mut buf = Vec::new();
    for (i, p) in cloud.points.iter().enumerate() {
        f32s(&mut buf, p);
        if let Some(n) = &cloud.normals {
            f32s(&mut buf, &n[i]);
        }
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_points_ply(r: impl Read) -> Result<PointCloud> {
    let ply = read_ply(r)?;
    let (x, y, z) = (ply.column("vertex", "x")?, ply.column("vertex", "y")?, ply.column("vertex", "z")?);
    let points = (0..x.len()).map(|i| [x[i], y[i], z[i]]).collect();
    let normals = if ply.has("vertex", "nx") {
        let (a, b, c) = (ply.column("vertex", "nx")?, ply.column("vertex", "ny")?, ply.column("vertex", "nz")?);
        Some((0..a.len()).map(|i| [a[i], b[i], c[i]]).collect())
    } else {
        None
    };
    Ok(PointCloud { points, normals })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decoders::activate_gaussian;

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() <= 1e-6 * b.abs().max(1.0)
    }

    #[test]
    fn gaussian_round_trip() {
        let raw = [0.3, -0.2, 0.1, -1.0, 0.5, 2.0, 0.7, 0.9, 0.1, -0.3, 0.2, -1.5, 0.0, 1.5];
        let g = activate_gaussian(&raw, VoxelCoord::new(3, 4, 5), 16);
        let set = GaussianSet { resolution: 16, gaussians: vec![g, g] };
        let mut buf = Vec::new();
        write_gaussians_ply(&set, &mut buf).unwrap();
        let back = read_gaussians_ply(&buf[..]).unwrap();
        assert_eq!(back.resolution, 16);
        assert_eq!(back.len(), 2);
        let h = &back.gaussians[1];
        assert_eq!(h.anchor, g.anchor);
        for k in 0..3 {
            assert!(close(h.center[k], g.center[k]) && close(h.scale[k], g.scale[k]) && close(h.color[k], g.color[k]));
        }
        assert!(close(h.opacity, g.opacity));
    }

    #[test]
    fn mesh_round_trips() {
        let mut m = TriMesh::cube([0.1, 0.0, -0.2], 0.5);
        m.colors[3] = [1.0, 0.0, 0.2];
        let mut ply = Vec::new();
        write_mesh_ply(&m, &mut ply).unwrap();
        let back = read_mesh_ply(&ply[..]).unwrap();
        assert_eq!(back.triangles, m.triangles);
        assert_eq!(back.colors[3], [1.0, 0.0, 51.0 / 255.0]);
        let mut obj = Vec::new();
        write_obj(&m, &mut obj).unwrap();
        let back = read_obj(&obj[..]).unwrap();
        assert_eq!(back.triangles, m.triangles);
        assert_eq!(back.positions, m.positions);
    }

    #[test]
    fn obj_polygons_are_fanned() {
        let text = "v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1/1 2/2 3/3 4/4\n";
        let m = read_obj(text.as_bytes()).unwrap();
        assert_eq!(m.triangles, vec![[0, 1, 2], [0, 2, 3]]);
        assert!(read_obj("v 0 0 0\nf 1 2 3\n".as_bytes()).is_err());
    }

    #[test]
    fn points_round_trip() {
        let c = PointCloud { points: vec![[0.5, -0.25, 0.125]], normals: Some(vec![[0.0, 0.0, 1.0]]) };
        let mut buf = Vec::new();
        write_points_ply(&c, &mut buf).unwrap();
        assert_eq!(read_points_ply(&buf[..]).unwrap(), c);
    }
}
