//! PLY reading and writing for point clouds and triangle meshes.
//!
//! The reader accepts `format ascii 1.0` and `format binary_little_endian
//! 1.0`. Recognized vertex properties: `x y z` (any numeric type), `nx ny
//! nz`, colors as `red green blue` or `r g b` (integer-typed channels are
//! scaled by 1/255, float-typed taken as-is), and `confidence`. Unknown
//! properties and elements are skipped. Writers always emit ascii.

use crate::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::math::Vec3;
use crate::mesh::TriangleMesh;
use std::collections::VecDeque;
use std::io::{BufWriter, Write};
use std::path::Path;

/// Upper bound on list lengths; anything larger is treated as corruption.
const MAX_LIST_LEN: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Format {
    Ascii,
    BinaryLe,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ScalarType {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl ScalarType {
    fn parse(token: &str) -> Option<ScalarType> {
        Some(match token {
            "char" | "int8" => ScalarType::I8,
            "uchar" | "uint8" => ScalarType::U8,
            "short" | "int16" => ScalarType::I16,
            "ushort" | "uint16" => ScalarType::U16,
            "int" | "int32" => ScalarType::I32,
            "uint" | "uint32" => ScalarType::U32,
            "float" | "float32" => ScalarType::F32,
            "double" | "float64" => ScalarType::F64,
            _ => return None,
        })
    }

    fn size(self) -> usize {
        match self {
            ScalarType::I8 | ScalarType::U8 => 1,
            ScalarType::I16 | ScalarType::U16 => 2,
            ScalarType::I32 | ScalarType::U32 | ScalarType::F32 => 4,
            ScalarType::F64 => 8,
        }
    }

    fn is_integer(self) -> bool {
        !matches!(self, ScalarType::F32 | ScalarType::F64)
    }
}

#[derive(Debug, Clone)]
struct Property {
    name: String,
    ty: ScalarType,
    /// Count type for list properties.
    list: Option<ScalarType>,
}

#[derive(Debug, Clone)]
struct Element {
    name: String,
    count: usize,
    props: Vec<Property>,
}

impl Element {
    fn scalar_index(&self, name: &str) -> Option<usize> {
        self.props
            .iter()
            .position(|p| p.list.is_none() && p.name == name)
    }
}

#[derive(Debug)]
struct Header {
    format: Format,
    elements: Vec<Element>,
}

/// Splits the header off a raw PLY buffer. Returns the header, the byte
/// offset of the body, and the number of header lines (so ascii errors can
/// report absolute line numbers).
fn parse_header(bytes: &[u8], path: &Path) -> Result<(Header, usize, usize)> {
    let mut pos = 0usize;
    let mut line_num = 0usize;
    let mut format = None;
    let mut elements: Vec<Element> = Vec::new();
    let mut saw_magic = false;
    let mut saw_end = false;

    while pos < bytes.len() {
        let nl = bytes[pos..]
            .iter()
            .position(|&b| b == b'\n')
            .map(|i| pos + i)
            .unwrap_or(bytes.len());
        let raw = &bytes[pos..nl];
        pos = nl.saturating_add(1).min(bytes.len().saturating_add(1));
        line_num += 1;
        let line = std::str::from_utf8(raw)
            .map_err(|_| Error::parse(path, line_num, "header is not valid utf-8"))?
            .trim_end_matches('\r');
        let mut tok = line.split_whitespace();
        let keyword = match tok.next() {
            Some(k) => k,
            None => continue,
        };
        if !saw_magic {
            if keyword != "ply" {
                return Err(Error::parse(path, line_num, "missing 'ply' magic line"));
            }
            saw_magic = true;
            continue;
        }
        match keyword {
            "format" => {
                format = Some(match tok.next() {
                    Some("ascii") => Format::Ascii,
                    Some("binary_little_endian") => Format::BinaryLe,
                    Some(other) => {
                        return Err(Error::parse(
                            path,
                            line_num,
                            format!("unsupported format '{other}'"),
                        ))
                    }
                    None => return Err(Error::parse(path, line_num, "truncated format line")),
                });
            }
            "comment" | "obj_info" => {}
            "element" => {
                let name = tok
                    .next()
                    .ok_or_else(|| Error::parse(path, line_num, "element without a name"))?;
                let count: usize = tok
                    .next()
                    .and_then(|t| t.parse().ok())
                    .ok_or_else(|| Error::parse(path, line_num, "element without a count"))?;
                elements.push(Element {
                    name: name.to_string(),
                    count,
                    props: Vec::new(),
                });
            }
            "property" => {
                let elem = elements.last_mut().ok_or_else(|| {
                    Error::parse(path, line_num, "property before any element")
                })?;
                let first = tok
                    .next()
                    .ok_or_else(|| Error::parse(path, line_num, "truncated property line"))?;
                let prop = if first == "list" {
                    let count_ty = tok.next().and_then(ScalarType::parse).ok_or_else(|| {
                        Error::parse(path, line_num, "bad list count type")
                    })?;
                    let ty = tok.next().and_then(ScalarType::parse).ok_or_else(|| {
                        Error::parse(path, line_num, "bad list item type")
                    })?;
                    let name = tok
                        .next()
                        .ok_or_else(|| Error::parse(path, line_num, "list without a name"))?;
                    Property {
                        name: name.to_string(),
                        ty,
                        list: Some(count_ty),
                    }
                } else {
                    let ty = ScalarType::parse(first).ok_or_else(|| {
                        Error::parse(path, line_num, format!("unknown property type '{first}'"))
                    })?;
                    let name = tok
                        .next()
                        .ok_or_else(|| Error::parse(path, line_num, "property without a name"))?;
                    Property {
                        name: name.to_string(),
                        ty,
                        list: None,
                    }
                };
                elem.props.push(prop);
            }
            "end_header" => {
                saw_end = true;
                break;
            }
            other => {
                return Err(Error::parse(
                    path,
                    line_num,
                    format!("unexpected header keyword '{other}'"),
                ));
            }
        }
    }

    if !saw_end {
        return Err(Error::parse(path, line_num, "missing end_header"));
    }
    let format =
        format.ok_or_else(|| Error::parse(path, line_num, "header has no format line"))?;
    Ok((Header { format, elements }, pos.min(bytes.len()), line_num))
}

enum ReadErr {
    Eof,
    BadToken { line: usize, token: String },
    ListTooLong { len: usize },
}

impl ReadErr {
    fn into_error(self, path: &Path, elem: &str, row: usize, fallback_line: usize) -> Error {
        match self {
            ReadErr::Eof => Error::parse(
                path,
                fallback_line,
                format!("unexpected end of data in element '{elem}' row {row}"),
            ),
            ReadErr::BadToken { line, token } => Error::parse(
                path,
                line,
                format!("expected a number in element '{elem}' row {row}, got '{token}'"),
            ),
            ReadErr::ListTooLong { len } => Error::parse(
                path,
                fallback_line,
                format!("list of length {len} in element '{elem}' row {row} looks corrupt"),
            ),
        }
    }
}

struct AsciiTokens<'a> {
    lines: std::str::Lines<'a>,
    queue: VecDeque<&'a str>,
    line_num: usize,
}

impl<'a> AsciiTokens<'a> {
    fn next_token(&mut self) -> std::result::Result<&'a str, ReadErr> {
        loop {
            if let Some(t) = self.queue.pop_front() {
                return Ok(t);
            }
            match self.lines.next() {
                Some(line) => {
                    self.line_num += 1;
                    self.queue.extend(line.split_whitespace());
                }
                None => return Err(ReadErr::Eof),
            }
        }
    }
}

struct BinCursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

enum Body<'a> {
    Ascii(AsciiTokens<'a>),
    Binary(BinCursor<'a>),
}

impl<'a> Body<'a> {
    fn new(
        format: Format,
        bytes: &'a [u8],
        body_start: usize,
        header_lines: usize,
        path: &Path,
    ) -> Result<Body<'a>> {
        match format {
            Format::Ascii => {
                let text = std::str::from_utf8(&bytes[body_start..]).map_err(|_| {
                    Error::parse(path, header_lines + 1, "ascii body is not valid utf-8")
                })?;
                Ok(Body::Ascii(AsciiTokens {
                    lines: text.lines(),
                    queue: VecDeque::new(),
                    line_num: header_lines,
                }))
            }
            Format::BinaryLe => Ok(Body::Binary(BinCursor {
                bytes: &bytes[body_start..],
                pos: 0,
            })),
        }
    }

    fn scalar(&mut self, ty: ScalarType) -> std::result::Result<f64, ReadErr> {
        match self {
            Body::Ascii(tokens) => {
                let t = tokens.next_token()?;
                t.parse::<f64>().map_err(|_| ReadErr::BadToken {
                    line: tokens.line_num,
                    token: t.to_string(),
                })
            }
            Body::Binary(cur) => {
                let n = ty.size();
                if cur.pos + n > cur.bytes.len() {
                    return Err(ReadErr::Eof);
                }
                let b = &cur.bytes[cur.pos..cur.pos + n];
                cur.pos += n;
                Ok(match ty {
                    ScalarType::I8 => b[0] as i8 as f64,
                    ScalarType::U8 => b[0] as f64,
                    ScalarType::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
                    ScalarType::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
                    ScalarType::I32 => i32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
                    ScalarType::U32 => u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
                    ScalarType::F32 => f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
                    ScalarType::F64 => f64::from_le_bytes([
                        b[0], b[1], b[2], b[3], b[4], b[5], b[6], b[7],
                    ]),
                })
            }
        }
    }

    fn list_len(&mut self, count_ty: ScalarType) -> std::result::Result<usize, ReadErr> {
        let n = self.scalar(count_ty)?;
        if !(0.0..=MAX_LIST_LEN as f64).contains(&n) || n.fract() != 0.0 {
            return Err(ReadErr::ListTooLong { len: n.max(0.0) as usize });
        }
        Ok(n as usize)
    }

    fn current_line(&self) -> usize {
        match self {
            Body::Ascii(t) => t.line_num,
            Body::Binary(_) => 0,
        }
    }
}

/// Reads one row of `elem`: scalar properties land in `row` (indexed like
/// `elem.props`), list properties are handed to `on_list` with their values.
fn read_row(
    body: &mut Body,
    elem: &Element,
    row: &mut [f64],
    list_buf: &mut Vec<f64>,
    mut on_list: impl FnMut(usize, &[f64]),
) -> std::result::Result<(), ReadErr> {
    for (i, prop) in elem.props.iter().enumerate() {
        match prop.list {
            None => row[i] = body.scalar(prop.ty)?,
            Some(count_ty) => {
                let n = body.list_len(count_ty)?;
                list_buf.clear();
                for _ in 0..n {
                    list_buf.push(body.scalar(prop.ty)?);
                }
                on_list(i, list_buf);
            }
        }
    }
    Ok(())
}

fn skip_element(body: &mut Body, elem: &Element, path: &Path) -> Result<()> {
    let mut row = vec![0.0; elem.props.len()];
    let mut list_buf = Vec::new();
    for r in 0..elem.count {
        read_row(body, elem, &mut row, &mut list_buf, |_, _| {})
            .map_err(|e| e.into_error(path, &elem.name, r, body.current_line()))?;
    }
    Ok(())
}

struct ColorColumns {
    slots: [usize; 3],
    scale: [f64; 3],
}

fn find_color_columns(elem: &Element) -> Option<ColorColumns> {
    for names in [["red", "green", "blue"], ["r", "g", "b"]] {
        let slots = [
            elem.scalar_index(names[0]),
            elem.scalar_index(names[1]),
            elem.scalar_index(names[2]),
        ];
        if let [Some(a), Some(b), Some(c)] = slots {
            let scale = [a, b, c].map(|i| {
                if elem.props[i].ty.is_integer() {
                    1.0 / 255.0
                } else {
                    1.0
                }
            });
            return Some(ColorColumns {
                slots: [a, b, c],
                scale,
            });
        }
    }
    None
}

fn find_triple(elem: &Element, names: [&str; 3]) -> Option<[usize; 3]> {
    match (
        elem.scalar_index(names[0]),
        elem.scalar_index(names[1]),
        elem.scalar_index(names[2]),
    ) {
        (Some(a), Some(b), Some(c)) => Some([a, b, c]),
        _ => None,
    }
}

/// Reads an oriented, colored point cloud. Normals are required; colors
/// default to mid-gray and confidence to 1.0 when the file lacks them.
pub fn read_ply_cloud(path: &Path) -> Result<PointCloud> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let (header, body_start, header_lines) = parse_header(&bytes, path)?;
    let mut body = Body::new(header.format, &bytes, body_start, header_lines, path)?;

    let mut cloud = None;
    for elem in &header.elements {
        if elem.name != "vertex" || cloud.is_some() {
            skip_element(&mut body, elem, path)?;
            continue;
        }
        let pos = find_triple(elem, ["x", "y", "z"]).ok_or_else(|| {
            Error::parse(path, header_lines, "vertex element lacks x/y/z properties")
        })?;
        let normal = find_triple(elem, ["nx", "ny", "nz"]).ok_or_else(|| {
            Error::parse(
                path,
                header_lines,
                "point cloud has no normals (nx/ny/nz are required)",
            )
        })?;
        let color = find_color_columns(elem);
        let conf = elem.scalar_index("confidence");

        let mut out = PointCloud::with_capacity(elem.count);
        let mut row = vec![0.0; elem.props.len()];
        let mut list_buf = Vec::new();
        for r in 0..elem.count {
            read_row(&mut body, elem, &mut row, &mut list_buf, |_, _| {})
                .map_err(|e| e.into_error(path, &elem.name, r, body.current_line()))?;
            let p = Vec3::new(row[pos[0]], row[pos[1]], row[pos[2]]);
            let n = Vec3::new(row[normal[0]], row[normal[1]], row[normal[2]]);
            let c = match &color {
                Some(cc) => [
                    row[cc.slots[0]] * cc.scale[0],
                    row[cc.slots[1]] * cc.scale[1],
                    row[cc.slots[2]] * cc.scale[2],
                ],
                None => [0.5; 3],
            };
            let w = conf.map_or(1.0, |i| row[i]);
            if !(p.is_finite() && n.is_finite() && c.iter().all(|v| v.is_finite())) {
                return Err(Error::parse(
                    path,
                    body.current_line(),
                    format!("non-finite value in vertex {r}"),
                ));
            }
            out.push(p, n, c, w);
        }
        cloud = Some(out);
    }
    cloud.ok_or_else(|| Error::parse(path, header_lines, "file has no vertex element"))
}

/// Writes a point cloud as ascii PLY with positions, normals, 8-bit colors
/// and confidence. Values print in round-trip form so rereading is exact.
pub fn write_ply_cloud(path: &Path, cloud: &PointCloud) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut emit = || -> std::io::Result<()> {
        writeln!(w, "ply")?;
        writeln!(w, "format ascii 1.0")?;
        writeln!(w, "element vertex {}", cloud.len())?;
        for name in ["x", "y", "z", "nx", "ny", "nz"] {
            writeln!(w, "property double {name}")?;
        }
        for name in ["red", "green", "blue"] {
            writeln!(w, "property uchar {name}")?;
        }
        writeln!(w, "property double confidence")?;
        writeln!(w, "end_header")?;
        for i in 0..cloud.len() {
            let p = cloud.positions[i];
            let n = cloud.normals[i];
            let [r, g, b] = cloud.colors[i].map(quantize_channel);
            writeln!(
                w,
                "{} {} {} {} {} {} {} {} {} {}",
                p.x, p.y, p.z, n.x, n.y, n.z, r, g, b, cloud.confidence[i]
            )?;
        }
        w.flush()
    };
    emit().map_err(|e| Error::io(path, e))
}

fn quantize_channel(c: f64) -> u8 {
    (c.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Writes a triangle mesh as ascii PLY. Normals and colors are emitted only
/// when present.
pub fn write_ply_mesh(path: &Path, mesh: &TriangleMesh) -> Result<()> {
    if let Some(colors) = &mesh.colors {
        if colors.len() != mesh.vertices.len() {
            return Err(Error::Invalid(format!(
                "mesh has {} vertices but {} colors",
                mesh.vertices.len(),
                colors.len()
            )));
        }
    }
    if let Some(normals) = &mesh.normals {
        if normals.len() != mesh.vertices.len() {
            return Err(Error::Invalid(format!(
                "mesh has {} vertices but {} normals",
                mesh.vertices.len(),
                normals.len()
            )));
        }
    }
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut emit = || -> std::io::Result<()> {
        writeln!(w, "ply")?;
        writeln!(w, "format ascii 1.0")?;
        writeln!(w, "element vertex {}", mesh.vertices.len())?;
        for name in ["x", "y", "z"] {
            writeln!(w, "property double {name}")?;
        }
        if mesh.normals.is_some() {
            for name in ["nx", "ny", "nz"] {
                writeln!(w, "property double {name}")?;
            }
        }
        if mesh.colors.is_some() {
            for name in ["red", "green", "blue"] {
                writeln!(w, "property uchar {name}")?;
            }
        }
        writeln!(w, "element face {}", mesh.triangles.len())?;
        writeln!(w, "property list uchar uint vertex_indices")?;
        writeln!(w, "end_header")?;
        for (i, v) in mesh.vertices.iter().enumerate() {
            write!(w, "{} {} {}", v.x, v.y, v.z)?;
            if let Some(normals) = &mesh.normals {
                let n = normals[i];
                write!(w, " {} {} {}", n.x, n.y, n.z)?;
            }
            if let Some(colors) = &mesh.colors {
                let [r, g, b] = colors[i].map(quantize_channel);
                write!(w, " {r} {g} {b}")?;
            }
            writeln!(w)?;
        }
        for t in &mesh.triangles {
            writeln!(w, "3 {} {} {}", t[0], t[1], t[2])?;
        }
        w.flush()
    };
    emit().map_err(|e| Error::io(path, e))
}

/// Reads a triangle mesh (vertex + face elements, ascii or binary LE).
/// Polygon faces are fan-triangulated.
pub fn read_ply_mesh(path: &Path) -> Result<TriangleMesh> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let (header, body_start, header_lines) = parse_header(&bytes, path)?;
    let mut body = Body::new(header.format, &bytes, body_start, header_lines, path)?;

    let vertex_count = header
        .elements
        .iter()
        .find(|e| e.name == "vertex")
        .map(|e| e.count)
        .ok_or_else(|| Error::parse(path, header_lines, "file has no vertex element"))?;

    let mut mesh = TriangleMesh::default();
    for elem in &header.elements {
        match elem.name.as_str() {
            "vertex" if mesh.vertices.is_empty() => {
                let pos = find_triple(elem, ["x", "y", "z"]).ok_or_else(|| {
                    Error::parse(path, header_lines, "vertex element lacks x/y/z properties")
                })?;
                let normal = find_triple(elem, ["nx", "ny", "nz"]);
                let color = find_color_columns(elem);
                let mut row = vec![0.0; elem.props.len()];
                let mut list_buf = Vec::new();
                let mut normals = normal.map(|_| Vec::with_capacity(elem.count));
                let mut colors = color.as_ref().map(|_| Vec::with_capacity(elem.count));
                for r in 0..elem.count {
                    read_row(&mut body, elem, &mut row, &mut list_buf, |_, _| {})
                        .map_err(|e| e.into_error(path, &elem.name, r, body.current_line()))?;
                    mesh.vertices
                        .push(Vec3::new(row[pos[0]], row[pos[1]], row[pos[2]]));
                    if let (Some(ns), Some(n)) = (&mut normals, normal) {
                        ns.push(Vec3::new(row[n[0]], row[n[1]], row[n[2]]));
                    }
                    if let (Some(cs), Some(cc)) = (&mut colors, &color) {
                        cs.push([
                            row[cc.slots[0]] * cc.scale[0],
                            row[cc.slots[1]] * cc.scale[1],
                            row[cc.slots[2]] * cc.scale[2],
                        ]);
                    }
                }
                mesh.normals = normals;
                mesh.colors = colors;
            }
            "face" => {
                let list_slot = elem
                    .props
                    .iter()
                    .position(|p| {
                        p.list.is_some()
                            && (p.name == "vertex_indices" || p.name == "vertex_index")
                    })
                    .ok_or_else(|| {
                        Error::parse(path, header_lines, "face element lacks vertex_indices")
                    })?;
                let mut row = vec![0.0; elem.props.len()];
                let mut list_buf = Vec::new();
                for r in 0..elem.count {
                    let mut face: Vec<u32> = Vec::new();
                    read_row(&mut body, elem, &mut row, &mut list_buf, |slot, values| {
                        if slot == list_slot {
                            face = values.iter().map(|&v| v as u32).collect();
                        }
                    })
                    .map_err(|e| e.into_error(path, &elem.name, r, body.current_line()))?;
                    if face.len() < 3 {
                        return Err(Error::parse(
                            path,
                            body.current_line(),
                            format!("face {r} has {} vertices", face.len()),
                        ));
                    }
                    if face.iter().any(|&i| i as usize >= vertex_count) {
                        return Err(Error::parse(
                            path,
                            body.current_line(),
                            format!("face {r} references a vertex out of range"),
                        ));
                    }
                    for k in 1..face.len() - 1 {
                        mesh.triangles.push([face[0], face[k], face[k + 1]]);
                    }
                }
            }
            _ => skip_element(&mut body, elem, path)?,
        }
    }
    Ok(mesh)
}
