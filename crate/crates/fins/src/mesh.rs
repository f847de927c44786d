//! Triangle meshes: the output of reconstruction and the input to the
//! evaluation metrics.

use crate::cloud::SceneTransform;
use crate::error::{Error, Result};
use crate::math::Vec3;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

#[derive(Debug, Clone, Default)]
pub struct TriangleMesh {
    pub vertices: Vec<Vec3>,
    pub triangles: Vec<[u32; 3]>,
    pub colors: Option<Vec<[f64; 3]>>,
    pub normals: Option<Vec<Vec3>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MeshFormat {
    Ply,
    Obj,
}

impl MeshFormat {
    pub fn from_path(path: &Path) -> MeshFormat {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("obj") => MeshFormat::Obj,
            _ => MeshFormat::Ply,
        }
    }
}

impl TriangleMesh {
    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    /// Maps every vertex through `f` (normals are left untouched:
    /// similarity transforms preserve directions up to scale).
    pub fn map_vertices(&mut self, f: impl Fn(Vec3) -> Vec3) {
        for v in &mut self.vertices {
            *v = f(*v);
        }
    }

    /// Normalized-domain mesh -> scene units.
    pub fn denormalize(&mut self, transform: &SceneTransform) {
        let t = *transform;
        self.map_vertices(|v| t.invert(v));
    }

    pub fn triangle_area(&self, t: [u32; 3]) -> f64 {
        let a = self.vertices[t[0] as usize];
        let b = self.vertices[t[1] as usize];
        let c = self.vertices[t[2] as usize];
        0.5 * (b - a).cross(c - a).norm()
    }

    pub fn total_area(&self) -> f64 {
        self.triangles.iter().map(|&t| self.triangle_area(t)).sum()
    }

    pub fn triangle_normal(&self, t: [u32; 3]) -> Option<Vec3> {
        let a = self.vertices[t[0] as usize];
        let b = self.vertices[t[1] as usize];
        let c = self.vertices[t[2] as usize];
        (b - a).cross(c - a).try_normalized(1e-18)
    }

    /// Drops triangles that reference the same vertex twice.
    pub fn remove_degenerate_triangles(&mut self) {
        self.triangles
            .retain(|t| t[0] != t[1] && t[1] != t[2] && t[0] != t[2]);
    }

    /// Every edge must be shared by exactly two triangles.
    pub fn is_closed_manifold(&self) -> bool {
        use std::collections::HashMap;
        let mut edge_count: HashMap<(u32, u32), u32> = HashMap::new();
        for t in &self.triangles {
            for (a, b) in [(t[0], t[1]), (t[1], t[2]), (t[2], t[0])] {
                let key = (a.min(b), a.max(b));
                *edge_count.entry(key).or_insert(0) += 1;
            }
        }
        !edge_count.is_empty() && edge_count.values().all(|&c| c == 2)
    }

    pub fn write(&self, path: &Path, format: MeshFormat) -> Result<()> {
        match format {
            MeshFormat::Ply => crate::ply::write_ply_mesh(path, self),
            MeshFormat::Obj => write_obj(path, self),
        }
    }

    pub fn read(path: &Path) -> Result<TriangleMesh> {
        match MeshFormat::from_path(path) {
            MeshFormat::Ply => crate::ply::read_ply_mesh(path),
            MeshFormat::Obj => read_obj(path),
        }
    }
}

/// OBJ export: geometry only, 1-based face indices.
pub fn write_obj(path: &Path, mesh: &TriangleMesh) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut emit = || -> std::io::Result<()> {
        for v in &mesh.vertices {
            writeln!(w, "v {:.9} {:.9} {:.9}", v.x, v.y, v.z)?;
        }
        for t in &mesh.triangles {
            writeln!(w, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1)?;
        }
        w.flush()
    };
    emit().map_err(|e| Error::io(path, e))
}

/// Minimal OBJ reader: `v` and `f` records, fan-triangulating polygons.
pub fn read_obj(path: &Path) -> Result<TriangleMesh> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);
    let mut mesh = TriangleMesh::default();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let line_num = lineno + 1;
        let mut tokens = line.split_whitespace();
        match tokens.next() {
            Some("v") => {
                let mut coord = [0.0f64; 3];
                for c in &mut coord {
                    *c = tokens
                        .next()
                        .and_then(|t| t.parse().ok())
                        .ok_or_else(|| Error::parse(path, line_num, "bad vertex record"))?;
                }
                mesh.vertices.push(Vec3::from_array(coord));
            }
            Some("f") => {
                let idx: Vec<u32> = tokens
                    .map(|t| {
                        let vi = t.split('/').next().unwrap_or(t);
                        vi.parse::<i64>()
                            .ok()
                            .filter(|&v| v >= 1 && (v as usize) <= mesh.vertices.len())
                            .map(|v| (v - 1) as u32)
                            .ok_or_else(|| {
                                Error::parse(path, line_num, format!("bad face index '{t}'"))
                            })
                    })
                    .collect::<Result<_>>()?;
                if idx.len() < 3 {
                    return Err(Error::parse(path, line_num, "face needs >= 3 vertices"));
                }
                for k in 1..idx.len() - 1 {
                    mesh.triangles.push([idx[0], idx[k], idx[k + 1]]);
                }
            }
            _ => {}
        }
    }
    Ok(mesh)
}
