//! OBJ and STL (ASCII and binary) reading and writing.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{MeshError, Point, TriangleMesh, Vector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MeshFormat {
    Obj,
    Stl,
    BinaryStl,
}

impl fmt::Display for MeshFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MeshFormat::Obj => "OBJ",
            MeshFormat::Stl => "STL",
            MeshFormat::BinaryStl => "binary STL",
        })
    }
}

impl MeshFormat {
    /// Picks a format from the extension, sniffing STL content to tell ASCII from binary.
    pub fn detect(path: &Path, bytes: &[u8]) -> Option<Self> {
        let ext = path.extension()?.to_str()?.to_ascii_lowercase();
        match ext.as_str() {
            "obj" => Some(MeshFormat::Obj),
            "stl" => Some(Self::sniff_stl(bytes)),
            _ => None,
        }
    }

    fn sniff_stl(bytes: &[u8]) -> Self {
        // Binary files may also start with "solid"; trust the size field when it matches.
        if bytes.len() >= 84 {
            let count = u32::from_le_bytes(bytes[80..84].try_into().unwrap()) as usize;
            if 84 + 50 * count == bytes.len() {
                return MeshFormat::BinaryStl;
            }
        }
        let head = &bytes[..bytes.len().min(512)];
        let text = String::from_utf8_lossy(head);
        if text.trim_start().starts_with("solid") {
            MeshFormat::Stl
        } else {
            MeshFormat::BinaryStl
        }
    }
}

/// Reads and validates a mesh. `format = None` detects it from the path and contents.
pub fn load_mesh(path: &Path, format: Option<MeshFormat>) -> Result<TriangleMesh, MeshError> {
    let bytes = fs::read(path)?;
    let format = match format {
        Some(f) => f,
        None => MeshFormat::detect(path, &bytes).ok_or_else(|| MeshError::Format {
            format: MeshFormat::Obj,
            offset: 0,
            message: format!("cannot infer mesh format of {}", path.display()),
        })?,
    };
    parse_mesh(&bytes, format)
}

pub fn parse_mesh(bytes: &[u8], format: MeshFormat) -> Result<TriangleMesh, MeshError> {
    match format {
        MeshFormat::Obj => parse_obj(bytes),
        MeshFormat::Stl => parse_stl_ascii(bytes),
        MeshFormat::BinaryStl => parse_stl_binary(bytes),
    }
}

/// Writes the mesh in the format implied by the extension (`.obj`, otherwise binary STL).
pub fn save_mesh(mesh: &TriangleMesh, path: &Path) -> Result<(), MeshError> {
    let is_obj = path
        .extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("obj"));
    let bytes = if is_obj {
        encode_obj(mesh).into_bytes()
    } else {
        encode_stl_binary(mesh)
    };
    fs::write(path, bytes)?;
    Ok(())
}

fn format_err(format: MeshFormat, offset: usize, message: impl Into<String>) -> MeshError {
    MeshError::Format {
        format,
        offset,
        message: message.into(),
    }
}

fn parse_obj(bytes: &[u8]) -> Result<TriangleMesh, MeshError> {
    let text = std::str::from_utf8(bytes).map_err(|e| {
        format_err(MeshFormat::Obj, e.valid_up_to(), "invalid UTF-8")
    })?;

    let mut vertices = Vec::new();
    // (face record offset, raw 1-based or negative indices resolved to 0-based)
    let mut faces: Vec<[usize; 3]> = Vec::new();
    let mut offset = 0;
    for line in text.split_inclusive('\n') {
        let line_offset = offset;
        offset += line.len();
        let content = line.split('#').next().unwrap_or("").trim();
        let mut tokens = content.split_whitespace();
        match tokens.next() {
            Some("v") => {
                let mut coords = [0.0; 3];
                for c in coords.iter_mut() {
                    let tok = tokens
                        .next()
                        .ok_or_else(|| format_err(MeshFormat::Obj, line_offset, "vertex needs 3 coordinates"))?;
                    *c = tok.parse().map_err(|_| {
                        format_err(MeshFormat::Obj, line_offset, format!("bad coordinate {tok:?}"))
                    })?;
                }
                vertices.push(Point::new(coords[0], coords[1], coords[2]));
            }
            Some("f") => {
                let mut polygon = Vec::new();
                for tok in tokens {
                    let idx = tok.split('/').next().unwrap_or("");
                    let raw: i64 = idx.parse().map_err(|_| {
                        format_err(MeshFormat::Obj, line_offset, format!("bad face index {tok:?}"))
                    })?;
                    let resolved = match raw {
                        0 => {
                            return Err(format_err(MeshFormat::Obj, line_offset, "face index 0 is invalid"))
                        }
                        r if r > 0 => (r - 1) as usize,
                        r => {
                            let back = (-r) as usize;
                            if back > vertices.len() {
                                return Err(format_err(
                                    MeshFormat::Obj,
                                    line_offset,
                                    format!("relative index {r} before first vertex"),
                                ));
                            }
                            vertices.len() - back
                        }
                    };
                    polygon.push(resolved);
                }
                if polygon.len() < 3 {
                    return Err(format_err(MeshFormat::Obj, line_offset, "face needs at least 3 vertices"));
                }
                for k in 1..polygon.len() - 1 {
                    faces.push([polygon[0], polygon[k], polygon[k + 1]]);
                }
            }
            _ => {}
        }
    }
    if faces.is_empty() {
        return Err(MeshError::Empty);
    }
    TriangleMesh::new(vertices, faces)
}

/// Merges bit-identical vertices so that shared corners become shared indices.
#[derive(Default)]
struct VertexPool {
    lookup: HashMap<[u64; 3], usize>,
    vertices: Vec<Point>,
}

impl VertexPool {
    fn index(&mut self, p: Point) -> usize {
        // -0.0 and 0.0 are the same corner
        let key = [p.x + 0.0, p.y + 0.0, p.z + 0.0].map(f64::to_bits);
        *self.lookup.entry(key).or_insert_with(|| {
            self.vertices.push(p);
            self.vertices.len() - 1
        })
    }
}

fn finish_stl(
    pool: VertexPool,
    faces: Vec<[usize; 3]>,
    normals: Vec<Vector>,
) -> Result<TriangleMesh, MeshError> {
    if faces.is_empty() {
        return Err(MeshError::Empty);
    }
    let usable = normals.iter().all(|n| n.norm() > 1e-6 && n.iter().all(|c| c.is_finite()));
    TriangleMesh::from_parts(pool.vertices, faces, usable.then_some(normals))
}

struct Tokens<'a> {
    text: &'a str,
    pos: usize,
}

impl<'a> Tokens<'a> {
    fn next(&mut self) -> Option<(usize, &'a str)> {
        let rest = &self.text[self.pos..];
        let start = self.pos + (rest.len() - rest.trim_start().len());
        let rest = &self.text[start..];
        if rest.is_empty() {
            self.pos = start;
            return None;
        }
        let len = rest.find(char::is_whitespace).unwrap_or(rest.len());
        self.pos = start + len;
        Some((start, &rest[..len]))
    }

    fn skip_line(&mut self) {
        let rest = &self.text[self.pos..];
        self.pos += rest.find('\n').map_or(rest.len(), |i| i + 1);
    }

    fn expect(&mut self, word: &str) -> Result<usize, MeshError> {
        match self.next() {
            Some((at, tok)) if tok == word => Ok(at),
            Some((at, tok)) => Err(format_err(MeshFormat::Stl, at, format!("expected {word:?}, found {tok:?}"))),
            None => Err(format_err(MeshFormat::Stl, self.text.len(), format!("expected {word:?}, found end of file"))),
        }
    }

    fn number(&mut self) -> Result<f64, MeshError> {
        match self.next() {
            Some((at, tok)) => tok
                .parse()
                .map_err(|_| format_err(MeshFormat::Stl, at, format!("bad number {tok:?}"))),
            None => Err(format_err(MeshFormat::Stl, self.text.len(), "unexpected end of file")),
        }
    }

    fn vector(&mut self) -> Result<[f64; 3], MeshError> {
        Ok([self.number()?, self.number()?, self.number()?])
    }
}

fn parse_stl_ascii(bytes: &[u8]) -> Result<TriangleMesh, MeshError> {
    let text = std::str::from_utf8(bytes)
        .map_err(|e| format_err(MeshFormat::Stl, e.valid_up_to(), "invalid UTF-8"))?;
    let mut tokens = Tokens { text, pos: 0 };
    tokens.expect("solid")?;
    tokens.skip_line();

    let mut pool = VertexPool::default();
    let mut faces = Vec::new();
    let mut normals = Vec::new();
    loop {
        match tokens.next() {
            Some((_, "facet")) => {
                tokens.expect("normal")?;
                let n = tokens.vector()?;
                tokens.expect("outer")?;
                tokens.expect("loop")?;
                let mut tri = [0; 3];
                for slot in tri.iter_mut() {
                    tokens.expect("vertex")?;
                    let [x, y, z] = tokens.vector()?;
                    *slot = pool.index(Point::new(x, y, z));
                }
                tokens.expect("endloop")?;
                tokens.expect("endfacet")?;
                faces.push(tri);
                normals.push(Vector::new(n[0], n[1], n[2]));
            }
            Some((_, "endsolid")) => break,
            Some((at, tok)) => {
                return Err(format_err(MeshFormat::Stl, at, format!("expected \"facet\", found {tok:?}")))
            }
            None => return Err(format_err(MeshFormat::Stl, text.len(), "missing \"endsolid\"")),
        }
    }
    finish_stl(pool, faces, normals)
}

fn parse_stl_binary(bytes: &[u8]) -> Result<TriangleMesh, MeshError> {
    if bytes.len() < 84 {
        return Err(format_err(MeshFormat::BinaryStl, bytes.len(), "file shorter than the 84-byte header"));
    }
    let count = u32::from_le_bytes(bytes[80..84].try_into().unwrap()) as usize;
    let needed = 84 + 50 * count;
    if bytes.len() < needed {
        return Err(format_err(
            MeshFormat::BinaryStl,
            bytes.len(),
            format!("header declares {count} triangles ({needed} bytes) but file has {} bytes", bytes.len()),
        ));
    }
    let read_vec = |at: usize| {
        let f = |k: usize| f32::from_le_bytes(bytes[at + 4 * k..at + 4 * k + 4].try_into().unwrap()) as f64;
        [f(0), f(1), f(2)]
    };

    let mut pool = VertexPool::default();
    let mut faces = Vec::with_capacity(count);
    let mut normals = Vec::with_capacity(count);
    for t in 0..count {
        let base = 84 + 50 * t;
        let n = read_vec(base);
        let mut tri = [0; 3];
        for (k, slot) in tri.iter_mut().enumerate() {
            let [x, y, z] = read_vec(base + 12 + 12 * k);
            if !(x.is_finite() && y.is_finite() && z.is_finite()) {
                return Err(format_err(MeshFormat::BinaryStl, base + 12 + 12 * k, "non-finite vertex"));
            }
            *slot = pool.index(Point::new(x, y, z));
        }
        faces.push(tri);
        normals.push(Vector::new(n[0], n[1], n[2]));
    }
    finish_stl(pool, faces, normals)
}

pub fn encode_stl_binary(mesh: &TriangleMesh) -> Vec<u8> {
    let mut out = Vec::with_capacity(84 + 50 * mesh.face_count());
    let mut header = [0u8; 80];
    let tag = b"physgen binary stl";
    header[..tag.len()].copy_from_slice(tag);
    out.extend_from_slice(&header);
    out.extend_from_slice(&(mesh.face_count() as u32).to_le_bytes());
    for f in 0..mesh.face_count() {
        let n = mesh.face_normal(f);
        for c in n.iter() {
            out.extend_from_slice(&(*c as f32).to_le_bytes());
        }
        for p in mesh.triangle(f) {
            for c in p.coords.iter() {
                out.extend_from_slice(&(*c as f32).to_le_bytes());
            }
        }
        out.extend_from_slice(&0u16.to_le_bytes());
    }
    out
}

pub fn encode_obj(mesh: &TriangleMesh) -> String {
    let mut out = String::new();
    for p in mesh.vertices() {
        out.push_str(&format!("v {} {} {}\n", p.x, p.y, p.z));
    }
    for [a, b, c] in mesh.faces() {
        out.push_str(&format!("f {} {} {}\n", a + 1, b + 1, c + 1));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{edge_report, primitives};

    fn cube_ascii_stl(mesh: &TriangleMesh) -> String {
        let mut s = String::from("solid cube\n");
        for f in 0..mesh.face_count() {
            let n = mesh.face_normal(f);
            s.push_str(&format!("  facet normal {} {} {}\n    outer loop\n", n.x, n.y, n.z));
            for p in mesh.triangle(f) {
                s.push_str(&format!("      vertex {} {} {}\n", p.x, p.y, p.z));
            }
            s.push_str("    endloop\n  endfacet\n");
        }
        s.push_str("endsolid cube\n");
        s
    }

    #[test]
    fn obj_single_triangle() {
        let mesh = parse_mesh(b"# tri\nv 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 3\n", MeshFormat::Obj).unwrap();
        assert_eq!((mesh.vertex_count(), mesh.face_count()), (3, 1));
    }

    #[test]
    fn obj_index_out_of_range() {
        let err = parse_mesh(b"v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 99\n", MeshFormat::Obj).unwrap_err();
        assert!(matches!(err, MeshError::IndexOutOfRange { index: 98, count: 3, .. }), "{err}");
    }

    #[test]
    fn obj_polygons_slashes_and_negative_indices() {
        let src = b"v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1/1/1 2/2/2 3/3/3 4/4/4\nf -4 -2 -1\n";
        let mesh = parse_mesh(src, MeshFormat::Obj).unwrap();
        assert_eq!(mesh.face_count(), 3);
        assert_eq!(mesh.faces()[2], [0, 2, 3]);
    }

    #[test]
    fn obj_error_reports_byte_offset() {
        let err = parse_mesh(b"v 0 0 0\nv 1 zz 0\n", MeshFormat::Obj).unwrap_err();
        match err {
            MeshError::Format { offset, .. } => assert_eq!(offset, 8),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn obj_without_faces_is_empty() {
        assert!(matches!(parse_mesh(b"v 0 0 0\n", MeshFormat::Obj), Err(MeshError::Empty)));
    }

    #[test]
    fn ascii_stl_cube_is_watertight() {
        let cube = primitives::unit_cube();
        let text = cube_ascii_stl(&cube);
        let mesh = parse_mesh(text.as_bytes(), MeshFormat::Stl).unwrap();
        assert_eq!(mesh.face_count(), 12);
        assert_eq!(mesh.vertex_count(), 8);
        assert!(edge_report(&mesh).is_watertight());
        assert!(mesh.stored_normals().is_some());
    }

    #[test]
    fn ascii_stl_error_offset() {
        let err = parse_mesh(b"solid x\nfacet normal 0 0 q\n", MeshFormat::Stl).unwrap_err();
        match err {
            MeshError::Format { offset, .. } => assert_eq!(offset, 25),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn binary_stl_roundtrip_cube() {
        let cube = primitives::unit_cube();
        let bytes = encode_stl_binary(&cube);
        assert_eq!(bytes.len(), 84 + 50 * 12);
        let back = parse_mesh(&bytes, MeshFormat::BinaryStl).unwrap();
        assert_eq!(back.face_count(), 12);
        assert!(edge_report(&back).is_watertight());
        assert_eq!(MeshFormat::detect(Path::new("a.stl"), &bytes), Some(MeshFormat::BinaryStl));
    }

    #[test]
    fn binary_stl_truncated() {
        let mut bytes = encode_stl_binary(&primitives::unit_cube());
        bytes.truncate(300);
        assert!(matches!(
            parse_mesh(&bytes, MeshFormat::BinaryStl),
            Err(MeshError::Format { offset: 300, .. })
        ));
    }
}
