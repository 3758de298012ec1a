//! Cell complexes on which the loop models live.
//!
//! A complex is a set of vertices (physical sites), a set of faces (GHZ
//! loops) and the vertex–face incidence between them. Edges are never
//! stored: a vertex carries one parton per incident face and a face couples
//! one parton from each of its bounding vertices.
//!
//! Built-in lattices are generated from a unit cell. On a torus they carry
//! per-incidence displacement vectors, which is what the winding-based
//! spanning test in [`crate::analysis`] needs. Open patches carry boundary
//! face marks instead.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LatticeKind {
    Honeycomb,
    Square,
    #[serde(rename = "custom")]
    CustomPlanar,
}

impl LatticeKind {
    pub fn name(self) -> &'static str {
        match self {
            LatticeKind::Honeycomb => "honeycomb",
            LatticeKind::Square => "square",
            LatticeKind::CustomPlanar => "custom",
        }
    }
}

impl std::str::FromStr for LatticeKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "honeycomb" | "hex" => Ok(LatticeKind::Honeycomb),
            "square" => Ok(LatticeKind::Square),
            "custom" | "customplanar" | "custom_planar" => Ok(LatticeKind::CustomPlanar),
            other => Err(format!("unknown lattice kind `{other}`")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Boundary {
    Torus,
    Open,
}

impl std::str::FromStr for Boundary {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "torus" | "periodic" => Ok(Boundary::Torus),
            "open" => Ok(Boundary::Open),
            other => Err(format!("unknown boundary `{other}`")),
        }
    }
}

/// What to build. For generated custom graphs `size` is the linear size and
/// the generator targets `size²` faces.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatticeSpec {
    pub kind: LatticeKind,
    pub size: usize,
    pub boundary: Boundary,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator_seed: Option<u64>,
}

impl LatticeSpec {
    pub fn honeycomb(size: usize, boundary: Boundary) -> Self {
        Self {
            kind: LatticeKind::Honeycomb,
            size,
            boundary,
            source_path: None,
            generator_seed: None,
        }
    }

    pub fn square(size: usize, boundary: Boundary) -> Self {
        Self {
            kind: LatticeKind::Square,
            size,
            boundary,
            source_path: None,
            generator_seed: None,
        }
    }

    pub fn custom_file(path: impl Into<PathBuf>) -> Self {
        Self {
            kind: LatticeKind::CustomPlanar,
            size: 0,
            boundary: Boundary::Open,
            source_path: Some(path.into()),
            generator_seed: None,
        }
    }

    pub fn generated(seed: u64, size: usize) -> Self {
        Self {
            kind: LatticeKind::CustomPlanar,
            size,
            boundary: Boundary::Torus,
            source_path: None,
            generator_seed: Some(seed),
        }
    }

    pub fn validate(&self) -> Result<(), LatticeError> {
        match self.kind {
            LatticeKind::Honeycomb | LatticeKind::Square => {
                if self.size < 2 {
                    return Err(LatticeError::InvalidSpec(format!(
                        "linear size must be at least 2, got {}",
                        self.size
                    )));
                }
                if self.source_path.is_some() || self.generator_seed.is_some() {
                    return Err(LatticeError::InvalidSpec(
                        "source_path/generator_seed only apply to custom lattices".into(),
                    ));
                }
            }
            LatticeKind::CustomPlanar => {
                match (&self.source_path, self.generator_seed) {
                    (Some(_), None) => {}
                    (None, Some(_)) => {
                        if self.size * self.size < 4 {
                            return Err(LatticeError::InvalidSpec(
                                "generated graphs need at least 4 target faces".into(),
                            ));
                        }
                    }
                    _ => {
                        return Err(LatticeError::InvalidSpec(
                            "custom lattices need exactly one of source_path or generator_seed"
                                .into(),
                        ))
                    }
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum LatticeError {
    #[error("invalid lattice spec: {0}")]
    InvalidSpec(String),
    #[error("malformed graph: {0}")]
    MalformedGraph(String),
    #[error("parse error on line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("vertex {vertex} has degree {degree}, expected {expected}")]
    Degree {
        vertex: usize,
        degree: usize,
        expected: &'static str,
    },
    #[error("could not generate graph: {0}")]
    GenerationFailure(String),
    #[error("i/o error reading {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

/// Outermost complete faces on each side of an open patch.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoundaryMarks {
    pub left: Vec<usize>,
    pub right: Vec<usize>,
    pub top: Vec<usize>,
    pub bottom: Vec<usize>,
}

impl BoundaryMarks {
    pub fn is_empty(&self) -> bool {
        self.left.is_empty() && self.right.is_empty() && self.top.is_empty() && self.bottom.is_empty()
    }
}

/// Planar coordinates used by the SVG renderers.
#[derive(Clone, Debug, PartialEq)]
pub struct Geometry {
    pub vertex_pos: Vec<[f64; 2]>,
    pub face_center: Vec<[f64; 2]>,
    /// Polygon corners of each face in its own (unwrapped) frame, aligned
    /// with [`CellComplex::face_vertices`].
    pub face_polygon: Vec<Vec<[f64; 2]>>,
    pub width: f64,
    pub height: f64,
}

#[derive(Clone, Debug, PartialEq, Eq)]
struct CellLayout {
    size: usize,
    vertices_per_cell: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CellComplex {
    kind: LatticeKind,
    boundary: Boundary,
    vf_start: Vec<usize>,
    vf: Vec<usize>,
    fv_start: Vec<usize>,
    fv: Vec<usize>,
    adjacency: Vec<Vec<usize>>,
    marks: BoundaryMarks,
    /// Displacement (in cells) of each vertex relative to the frame of each
    /// incident face, aligned with `vf`. Present only on tori.
    winding: Option<Vec<[i32; 2]>>,
    truncated: Vec<bool>,
    geometry: Option<Geometry>,
    layout: Option<CellLayout>,
}

impl CellComplex {
    /// Assembles and validates a complex from explicit incidence lists.
    pub fn from_incidence(
        kind: LatticeKind,
        boundary: Boundary,
        vertex_faces: Vec<Vec<usize>>,
        face_vertices: Vec<Vec<usize>>,
        marks: BoundaryMarks,
    ) -> Result<Self, LatticeError> {
        let n_faces = face_vertices.len();
        Self::assemble(
            kind,
            boundary,
            vertex_faces,
            face_vertices,
            marks,
            None,
            vec![false; n_faces],
            None,
            None,
        )
    }

    #[allow(clippy::too_many_arguments)]
    fn assemble(
        kind: LatticeKind,
        boundary: Boundary,
        vertex_faces: Vec<Vec<usize>>,
        face_vertices: Vec<Vec<usize>>,
        marks: BoundaryMarks,
        winding: Option<Vec<[i32; 2]>>,
        truncated: Vec<bool>,
        geometry: Option<Geometry>,
        layout: Option<CellLayout>,
    ) -> Result<Self, LatticeError> {
        let n_v = vertex_faces.len();
        let n_f = face_vertices.len();
        let mut vf_start = Vec::with_capacity(n_v + 1);
        let mut vf = Vec::new();
        vf_start.push(0);
        for faces in &vertex_faces {
            vf.extend_from_slice(faces);
            vf_start.push(vf.len());
        }
        let mut fv_start = Vec::with_capacity(n_f + 1);
        let mut fv = Vec::new();
        fv_start.push(0);
        for verts in &face_vertices {
            fv.extend_from_slice(verts);
            fv_start.push(fv.len());
        }
        let mut adjacency = vec![BTreeSet::new(); n_f];
        for faces in &vertex_faces {
            for &a in faces {
                for &b in faces {
                    if a != b {
                        adjacency[a].insert(b);
                    }
                }
            }
        }
        let complex = Self {
            kind,
            boundary,
            vf_start,
            vf,
            fv_start,
            fv,
            adjacency: adjacency.into_iter().map(|s| s.into_iter().collect()).collect(),
            marks,
            winding,
            truncated,
            geometry,
            layout,
        };
        complex.validate()?;
        Ok(complex)
    }

    fn validate(&self) -> Result<(), LatticeError> {
        let n_f = self.n_faces();
        for v in 0..self.n_vertices() {
            let faces = self.vertex_faces(v);
            let degree = faces.len();
            let ok = match self.kind {
                LatticeKind::Honeycomb => degree == 3,
                LatticeKind::Square => degree == 4,
                LatticeKind::CustomPlanar => degree == 3 || degree == 4,
            };
            if !ok {
                return Err(LatticeError::Degree {
                    vertex: v,
                    degree,
                    expected: match self.kind {
                        LatticeKind::Honeycomb => "3",
                        LatticeKind::Square => "4",
                        LatticeKind::CustomPlanar => "3 or 4",
                    },
                });
            }
            for &f in faces {
                if f >= n_f {
                    return Err(LatticeError::MalformedGraph(format!(
                        "vertex {v} references missing face {f}"
                    )));
                }
                if !self.face_vertices(f).contains(&v) {
                    return Err(LatticeError::MalformedGraph(format!(
                        "vertex {v} lists face {f} but face {f} does not list vertex {v}"
                    )));
                }
            }
            let distinct: BTreeSet<_> = faces.iter().collect();
            if distinct.len() != degree {
                return Err(LatticeError::MalformedGraph(format!(
                    "vertex {v} is incident to the same face twice"
                )));
            }
        }
        for f in 0..n_f {
            let verts = self.face_vertices(f);
            if verts.len() < 3 && !self.truncated[f] {
                return Err(LatticeError::MalformedGraph(format!(
                    "face {f} has only {} vertices",
                    verts.len()
                )));
            }
            for &v in verts {
                if v >= self.n_vertices() || !self.vertex_faces(v).contains(&f) {
                    return Err(LatticeError::MalformedGraph(format!(
                        "face {f} lists vertex {v} without the reverse incidence"
                    )));
                }
            }
        }
        for list in [&self.marks.left, &self.marks.right, &self.marks.top, &self.marks.bottom] {
            if let Some(&f) = list.iter().find(|&&f| f >= n_f) {
                return Err(LatticeError::MalformedGraph(format!(
                    "boundary mark references missing face {f}"
                )));
            }
        }
        Ok(())
    }

    pub fn kind(&self) -> LatticeKind {
        self.kind
    }

    pub fn boundary(&self) -> Boundary {
        self.boundary
    }

    pub fn n_vertices(&self) -> usize {
        self.vf_start.len() - 1
    }

    pub fn n_faces(&self) -> usize {
        self.fv_start.len() - 1
    }

    /// Incident faces of `v` in cyclic order around the vertex.
    #[inline]
    pub fn vertex_faces(&self, v: usize) -> &[usize] {
        &self.vf[self.vf_start[v]..self.vf_start[v + 1]]
    }

    /// Bounding vertices of `f` in cyclic order.
    #[inline]
    pub fn face_vertices(&self, f: usize) -> &[usize] {
        &self.fv[self.fv_start[f]..self.fv_start[f + 1]]
    }

    #[inline]
    pub fn degree(&self, v: usize) -> usize {
        self.vf_start[v + 1] - self.vf_start[v]
    }

    /// Faces sharing at least one vertex with `f`, sorted, excluding `f`.
    pub fn face_adjacency(&self, f: usize) -> &[usize] {
        &self.adjacency[f]
    }

    pub fn boundary_marks(&self) -> &BoundaryMarks {
        &self.marks
    }

    pub fn has_winding_data(&self) -> bool {
        self.winding.is_some()
    }

    /// Displacement of vertex `v` relative to the frame of its `slot`-th
    /// incident face.
    #[inline]
    pub fn incidence_offset(&self, v: usize, slot: usize) -> Option<[i32; 2]> {
        self.winding
            .as_ref()
            .map(|w| w[self.vf_start[v] + slot])
    }

    pub fn is_truncated(&self, f: usize) -> bool {
        self.truncated[f]
    }

    pub fn geometry(&self) -> Option<&Geometry> {
        self.geometry.as_ref()
    }

    pub fn max_degree(&self) -> usize {
        (0..self.n_vertices()).map(|v| self.degree(v)).max().unwrap_or(0)
    }

    /// Number of vertex–face incidences (partons).
    pub fn n_partons(&self) -> usize {
        self.vf.len()
    }

    /// Vertex and face maps of the lattice translation by `(dx, dy)` cells.
    /// Only defined for built-in tori.
    pub fn translation(&self, dx: usize, dy: usize) -> Option<(Vec<usize>, Vec<usize>)> {
        let layout = self.layout.as_ref()?;
        if self.boundary != Boundary::Torus {
            return None;
        }
        let l = layout.size;
        let per = layout.vertices_per_cell;
        let shift = |cell: usize| {
            let (i, j) = (cell % l, cell / l);
            (i + dx) % l + l * ((j + dy) % l)
        };
        let vmap = (0..self.n_vertices())
            .map(|v| shift(v / per) * per + v % per)
            .collect();
        let fmap = (0..self.n_faces()).map(shift).collect();
        Some((vmap, fmap))
    }
}

pub fn build_lattice(spec: &LatticeSpec) -> Result<CellComplex, LatticeError> {
    spec.validate()?;
    match spec.kind {
        LatticeKind::Honeycomb => Ok(build_periodic(&HONEYCOMB, spec.size, spec.boundary)),
        LatticeKind::Square => Ok(build_periodic(&SQUARE, spec.size, spec.boundary)),
        LatticeKind::CustomPlanar => match (&spec.source_path, spec.generator_seed) {
            (Some(path), None) => load_custom(path),
            (None, Some(seed)) => generate_mixed_planar(seed, spec.size * spec.size),
            _ => unreachable!("validated above"),
        },
    }
}

struct VertexTemplate {
    /// Position inside the unit cell in lattice coordinates.
    pos: [f64; 2],
    /// Incident faces as cell offsets, in cyclic order.
    faces: &'static [[i64; 2]],
}

struct UnitCell {
    kind: LatticeKind,
    a1: [f64; 2],
    a2: [f64; 2],
    /// Face center inside its cell, lattice coordinates.
    face_center: [f64; 2],
    vertices: &'static [VertexTemplate],
}

const SQRT3_2: f64 = 0.866_025_403_784_438_6;

// Faces of the honeycomb form a triangular lattice; every vertex is one of
// its up or down triangles.
static HONEYCOMB: UnitCell = UnitCell {
    kind: LatticeKind::Honeycomb,
    a1: [1.0, 0.0],
    a2: [0.5, SQRT3_2],
    face_center: [0.0, 0.0],
    vertices: &[
        VertexTemplate {
            pos: [1.0 / 3.0, 1.0 / 3.0],
            faces: &[[0, 0], [1, 0], [0, 1]],
        },
        VertexTemplate {
            pos: [2.0 / 3.0, 2.0 / 3.0],
            faces: &[[1, 0], [1, 1], [0, 1]],
        },
    ],
};

// Counter-clockwise from the lower-left face.
static SQUARE: UnitCell = UnitCell {
    kind: LatticeKind::Square,
    a1: [1.0, 0.0],
    a2: [0.0, 1.0],
    face_center: [0.5, 0.5],
    vertices: &[VertexTemplate {
        pos: [0.0, 0.0],
        faces: &[[-1, -1], [0, -1], [0, 0], [-1, 0]],
    }],
};

impl UnitCell {
    fn cart(&self, p: [f64; 2]) -> [f64; 2] {
        [
            p[0] * self.a1[0] + p[1] * self.a2[0],
            p[0] * self.a1[1] + p[1] * self.a2[1],
        ]
    }
}

fn build_periodic(cell: &UnitCell, l: usize, boundary: Boundary) -> CellComplex {
    let li = l as i64;
    let per = cell.vertices.len();

    // (vertex cell, template) pairs in the complex, and the face key of
    // each incidence in unwrapped cell coordinates.
    let mut vertices: Vec<([i64; 2], usize)> = Vec::new();
    match boundary {
        Boundary::Torus => {
            for j in 0..li {
                for i in 0..li {
                    for t in 0..per {
                        vertices.push(([i, j], t));
                    }
                }
            }
        }
        Boundary::Open => {
            let inside = |c: [i64; 2]| (0..li).contains(&c[0]) && (0..li).contains(&c[1]);
            // Scan one ring beyond the patch so every vertex of a complete
            // face is found.
            for j in -1..=li {
                for i in -1..=li {
                    for (t, tmpl) in cell.vertices.iter().enumerate() {
                        if tmpl
                            .faces
                            .iter()
                            .any(|d| inside([i + d[0], j + d[1]]))
                        {
                            vertices.push(([i, j], t));
                        }
                    }
                }
            }
        }
    }

    let mut face_ids: BTreeMap<[i64; 2], usize> = BTreeMap::new();
    let mut face_cells: Vec<[i64; 2]> = Vec::new();
    let face_key = |c: [i64; 2]| match boundary {
        Boundary::Torus => [c[0].rem_euclid(li), c[1].rem_euclid(li)],
        Boundary::Open => c,
    };
    // Complete faces get the first ids in row-major order.
    for j in 0..li {
        for i in 0..li {
            face_ids.insert([i, j], face_cells.len());
            face_cells.push([i, j]);
        }
    }

    let mut vertex_faces = Vec::with_capacity(vertices.len());
    let mut winding = Vec::new();
    let mut incidences: Vec<Vec<(usize, [f64; 2])>> = vec![Vec::new(); face_cells.len()];
    let face_center_cart = cell.cart(cell.face_center);
    for (v, &(c, t)) in vertices.iter().enumerate() {
        let tmpl = &cell.vertices[t];
        let mut faces = Vec::with_capacity(tmpl.faces.len());
        for d in tmpl.faces {
            let unwrapped = [c[0] + d[0], c[1] + d[1]];
            let key = face_key(unwrapped);
            let id = *face_ids.entry(key).or_insert_with(|| {
                face_cells.push(key);
                incidences.push(Vec::new());
                face_cells.len() - 1
            });
            faces.push(id);
            winding.push([-d[0] as i32, -d[1] as i32]);
            // Vertex position relative to the face center, in the face's
            // frame.
            let rel = cell.cart([tmpl.pos[0] - d[0] as f64, tmpl.pos[1] - d[1] as f64]);
            incidences[id].push((
                v,
                [rel[0] - face_center_cart[0], rel[1] - face_center_cart[1]],
            ));
        }
        vertex_faces.push(faces);
    }

    let n_complete = l * l;
    let truncated: Vec<bool> = (0..face_cells.len()).map(|f| f >= n_complete).collect();
    let mut face_vertices = Vec::with_capacity(face_cells.len());
    let mut face_polygon = Vec::with_capacity(face_cells.len());
    let mut face_center = Vec::with_capacity(face_cells.len());
    for (f, inc) in incidences.iter_mut().enumerate() {
        inc.sort_by(|a, b| {
            let ta = a.1[1].atan2(a.1[0]);
            let tb = b.1[1].atan2(b.1[0]);
            ta.total_cmp(&tb)
        });
        let fc = face_cells[f];
        let center = cell.cart([
            fc[0] as f64 + cell.face_center[0],
            fc[1] as f64 + cell.face_center[1],
        ]);
        face_vertices.push(inc.iter().map(|(v, _)| *v).collect::<Vec<_>>());
        face_polygon.push(
            inc.iter()
                .map(|(_, r)| [center[0] + r[0], center[1] + r[1]])
                .collect::<Vec<_>>(),
        );
        face_center.push(center);
    }
    let vertex_pos: Vec<[f64; 2]> = vertices
        .iter()
        .map(|&(c, t)| {
            let p = cell.vertices[t].pos;
            cell.cart([c[0] as f64 + p[0], c[1] as f64 + p[1]])
        })
        .collect();
    let corner = cell.cart([l as f64, l as f64]);
    let geometry = Geometry {
        vertex_pos,
        face_center,
        face_polygon,
        width: corner[0],
        height: corner[1],
    };

    let (marks, winding, layout) = match boundary {
        Boundary::Torus => (
            BoundaryMarks::default(),
            Some(winding),
            Some(CellLayout {
                size: l,
                vertices_per_cell: per,
            }),
        ),
        Boundary::Open => {
            let row = |j: usize| (0..l).map(|i| i + l * j).collect::<Vec<_>>();
            let col = |i: usize| (0..l).map(|j| i + l * j).collect::<Vec<_>>();
            (
                BoundaryMarks {
                    left: col(0),
                    right: col(l - 1),
                    bottom: row(0),
                    top: row(l - 1),
                },
                None,
                None,
            )
        }
    };

    CellComplex::assemble(
        cell.kind,
        boundary,
        vertex_faces,
        face_vertices,
        marks,
        winding,
        truncated,
        Some(geometry),
        layout,
    )
    .expect("built-in lattices satisfy the complex invariants")
}

/// Orders the faces around every vertex using the rotation system implied
/// by the face cycles. Returns `None` when the cycles do not close up around
/// some vertex (the caller then keeps file order).
fn cyclic_vertex_faces(face_vertices: &[Vec<usize>], n_v: usize) -> Option<Vec<Vec<usize>>> {
    // For each (vertex, face): the cycle neighbours of the vertex in the face.
    let mut around: Vec<Vec<(usize, usize, usize)>> = vec![Vec::new(); n_v];
    for (f, cyc) in face_vertices.iter().enumerate() {
        let k = cyc.len();
        for (idx, &v) in cyc.iter().enumerate() {
            let prev = cyc[(idx + k - 1) % k];
            let next = cyc[(idx + 1) % k];
            around[v].push((f, prev, next));
        }
    }
    let mut out = Vec::with_capacity(n_v);
    for list in &around {
        let mut order = vec![list[0].0];
        let mut cur = list[0];
        for _ in 1..list.len() {
            let succ = list.iter().find(|cand| cand.1 == cur.2 && cand.0 != cur.0)?;
            order.push(succ.0);
            cur = *succ;
        }
        let distinct: BTreeSet<_> = order.iter().collect();
        if distinct.len() != list.len() {
            return None;
        }
        out.push(order);
    }
    Some(out)
}

/// Parses the plain-text graph format:
///
/// ```text
/// # comment
/// vertices 8
/// face 0: 0 1 2 3 4 5
/// left: 0 2
/// ```
pub fn parse_custom(text: &str) -> Result<CellComplex, LatticeError> {
    let mut n_vertices: Option<usize> = None;
    let mut faces: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    let mut marks = BoundaryMarks::default();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let perr = |message: String| LatticeError::Parse {
            line: line_no,
            message,
        };
        let parse_ids = |s: &str| -> Result<Vec<usize>, LatticeError> {
            s.split_whitespace()
                .map(|tok| {
                    tok.parse::<usize>()
                        .map_err(|_| perr(format!("`{tok}` is not a non-negative integer")))
                })
                .collect()
        };
        if let Some(rest) = line.strip_prefix("vertices") {
            if n_vertices.is_some() {
                return Err(perr("duplicate `vertices` header".into()));
            }
            n_vertices = Some(
                rest.trim()
                    .parse()
                    .map_err(|_| perr(format!("bad vertex count `{}`", rest.trim())))?,
            );
        } else if let Some(rest) = line.strip_prefix("face") {
            let n = n_vertices.ok_or_else(|| perr("`face` before `vertices` header".into()))?;
            let (id, verts) = rest
                .split_once(':')
                .ok_or_else(|| perr("expected `face <id>: <vertices>`".into()))?;
            let id: usize = id
                .trim()
                .parse()
                .map_err(|_| perr(format!("bad face id `{}`", id.trim())))?;
            let verts = parse_ids(verts)?;
            if let Some(&v) = verts.iter().find(|&&v| v >= n) {
                return Err(perr(format!("face {id} references undeclared vertex {v}")));
            }
            if verts.len() < 3 {
                return Err(perr(format!("face {id} has fewer than 3 vertices")));
            }
            if faces.insert(id, verts).is_some() {
                return Err(perr(format!("duplicate face id {id}")));
            }
        } else if let Some((side, ids)) = line.split_once(':') {
            let ids = parse_ids(ids)?;
            match side.trim() {
                "left" => marks.left = ids,
                "right" => marks.right = ids,
                "top" => marks.top = ids,
                "bottom" => marks.bottom = ids,
                other => return Err(perr(format!("unknown section `{other}`"))),
            }
        } else {
            return Err(perr(format!("unrecognised line `{line}`")));
        }
    }
    let n_v = n_vertices.ok_or_else(|| LatticeError::Parse {
        line: 0,
        message: "missing `vertices` header".into(),
    })?;
    let n_f = faces.len();
    if faces.keys().copied().ne(0..n_f) {
        return Err(LatticeError::MalformedGraph(
            "face ids must be exactly 0..n_faces".into(),
        ));
    }
    let face_vertices: Vec<Vec<usize>> = faces.into_values().collect();

    let mut file_order: Vec<Vec<usize>> = vec![Vec::new(); n_v];
    for (f, verts) in face_vertices.iter().enumerate() {
        for &v in verts {
            file_order[v].push(f);
        }
    }
    for (v, faces) in file_order.iter().enumerate() {
        if faces.len() != 3 && faces.len() != 4 {
            return Err(LatticeError::Degree {
                vertex: v,
                degree: faces.len(),
                expected: "3 or 4",
            });
        }
    }
    check_surface(&face_vertices, n_v)?;
    let vertex_faces = cyclic_vertex_faces(&face_vertices, n_v).unwrap_or(file_order);
    CellComplex::from_incidence(
        LatticeKind::CustomPlanar,
        if marks.is_empty() {
            Boundary::Torus
        } else {
            Boundary::Open
        },
        vertex_faces,
        face_vertices,
        marks,
    )
}

/// Every edge borders at most two faces; closed surfaces must be a sphere
/// or a torus.
fn check_surface(face_vertices: &[Vec<usize>], n_v: usize) -> Result<(), LatticeError> {
    let mut edges: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    for cyc in face_vertices {
        for k in 0..cyc.len() {
            let (a, b) = (cyc[k], cyc[(k + 1) % cyc.len()]);
            *edges.entry((a.min(b), a.max(b))).or_insert(0) += 1;
        }
    }
    if let Some(((a, b), n)) = edges.iter().find(|(_, &n)| n > 2) {
        return Err(LatticeError::MalformedGraph(format!(
            "edge {a}-{b} borders {n} faces"
        )));
    }
    if edges.values().all(|&n| n == 2) {
        let euler = n_v as i64 - edges.len() as i64 + face_vertices.len() as i64;
        if euler != 0 && euler != 2 {
            return Err(LatticeError::MalformedGraph(format!(
                "closed surface has Euler characteristic {euler}, expected 2 (sphere) or 0 (torus)"
            )));
        }
    }
    Ok(())
}

pub fn load_custom(path: &Path) -> Result<CellComplex, LatticeError> {
    let text = std::fs::read_to_string(path).map_err(|source| LatticeError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_custom(&text)
}

/// Serializes a complex in the format read by [`parse_custom`].
pub fn to_graph_file(complex: &CellComplex) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "# {} lattice, {} vertices, {} faces",
        complex.kind().name(),
        complex.n_vertices(),
        complex.n_faces()
    );
    let _ = writeln!(out, "vertices {}", complex.n_vertices());
    for f in 0..complex.n_faces() {
        let verts: Vec<String> = complex.face_vertices(f).iter().map(|v| v.to_string()).collect();
        let _ = writeln!(out, "face {f}: {}", verts.join(" "));
    }
    let marks = complex.boundary_marks();
    for (name, list) in [
        ("left", &marks.left),
        ("right", &marks.right),
        ("top", &marks.top),
        ("bottom", &marks.bottom),
    ] {
        if !list.is_empty() {
            let ids: Vec<String> = list.iter().map(|f| f.to_string()).collect();
            let _ = writeln!(out, "{name}: {}", ids.join(" "));
        }
    }
    out
}

const MAX_GENERATED_FACES: usize = 1 << 20;

/// Random mixed-degree planar graph on a torus.
///
/// Starts from a square torus of side `L0 = max(3, ⌊√(2·target/3)⌋)` and
/// repeatedly splits a random face along a chord joining two new vertices
/// inserted on two of its edges. Old vertices keep degree 4, every inserted
/// vertex has degree 3, and each split adds exactly one face, so the result
/// has `max(target, L0² + 1)` faces.
pub fn generate_mixed_planar(seed: u64, target_faces: usize) -> Result<CellComplex, LatticeError> {
    if target_faces < 4 {
        return Err(LatticeError::InvalidSpec(format!(
            "target_faces must be at least 4, got {target_faces}"
        )));
    }
    if target_faces > MAX_GENERATED_FACES {
        return Err(LatticeError::GenerationFailure(format!(
            "target of {target_faces} faces exceeds the generator limit {MAX_GENERATED_FACES}"
        )));
    }
    let base = (((2 * target_faces) as f64 / 3.0).sqrt().floor() as usize).max(3);
    let splits = target_faces.saturating_sub(base * base).max(1);
    let square = build_periodic(&SQUARE, base, Boundary::Torus);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // Face cycles with per-incidence cell offsets (vertex relative to the
    // face frame).
    let mut cycles: Vec<Vec<(usize, [i32; 2])>> = (0..square.n_faces())
        .map(|f| {
            square
                .face_vertices(f)
                .iter()
                .map(|&v| {
                    let slot = square.vertex_faces(v).iter().position(|&g| g == f).unwrap();
                    (v, square.incidence_offset(v, slot).unwrap())
                })
                .collect()
        })
        .collect();
    let mut n_v = square.n_vertices();

    // Inserts a new vertex on the edge following position `pos` of face `f`
    // and returns its id. The twin face carries the edge reversed.
    let insert_on_edge = |cycles: &mut Vec<Vec<(usize, [i32; 2])>>,
                          n_v: &mut usize,
                          f: usize,
                          pos: usize|
     -> Result<usize, LatticeError> {
        let k = cycles[f].len();
        let (a, off_a) = cycles[f][pos];
        let (b, _) = cycles[f][(pos + 1) % k];
        let twin = (0..cycles.len())
            .filter(|&g| g != f)
            .find_map(|g| {
                let c = &cycles[g];
                (0..c.len())
                    .find(|&p| c[p].0 == b && c[(p + 1) % c.len()].0 == a)
                    .map(|p| (g, p))
            })
            .ok_or_else(|| {
                LatticeError::GenerationFailure(format!("edge {a}-{b} has no twin face"))
            })?;
        let m = *n_v;
        *n_v += 1;
        cycles[f].insert(pos + 1, (m, off_a));
        let (g, p) = twin;
        let off_a_in_g = cycles[g][(p + 1) % cycles[g].len()].1;
        cycles[g].insert(p + 1, (m, off_a_in_g));
        Ok(m)
    };

    for _ in 0..splits {
        let f = rng.random_range(0..cycles.len());
        let k = cycles[f].len();
        let e1 = rng.random_range(0..k);
        let others: Vec<usize> = (0..k).filter(|&e| e != e1).collect();
        let e2 = *others
            .choose(&mut rng)
            .ok_or_else(|| LatticeError::GenerationFailure("degenerate face".into()))?;
        let (first, second) = (e1.min(e2), e1.max(e2));
        // Insert on the later edge first so the earlier position is stable.
        let m2 = insert_on_edge(&mut cycles, &mut n_v, f, second)?;
        let m1 = insert_on_edge(&mut cycles, &mut n_v, f, first)?;
        let cyc = std::mem::take(&mut cycles[f]);
        let i1 = cyc.iter().position(|x| x.0 == m1).unwrap();
        let i2 = cyc.iter().position(|x| x.0 == m2).unwrap();
        let part_a: Vec<_> = cyc[i1..=i2].to_vec();
        let mut part_b: Vec<_> = cyc[i2..].to_vec();
        part_b.extend_from_slice(&cyc[..=i1]);
        cycles[f] = part_a;
        cycles.push(part_b);
    }

    let face_vertices: Vec<Vec<usize>> = cycles
        .iter()
        .map(|c| c.iter().map(|x| x.0).collect())
        .collect();
    let vertex_faces = cyclic_vertex_faces(&face_vertices, n_v).ok_or_else(|| {
        LatticeError::GenerationFailure("face cycles do not close around a vertex".into())
    })?;
    let mut winding = Vec::new();
    for (v, faces) in vertex_faces.iter().enumerate() {
        for &f in faces {
            let off = cycles[f].iter().find(|x| x.0 == v).unwrap().1;
            winding.push(off);
        }
    }
    let n_f = face_vertices.len();
    let complex = CellComplex::assemble(
        LatticeKind::CustomPlanar,
        Boundary::Torus,
        vertex_faces,
        face_vertices,
        BoundaryMarks::default(),
        Some(winding),
        vec![false; n_f],
        None,
        None,
    )?;
    Ok(complex)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parton_sums(c: &CellComplex) -> (usize, usize) {
        let by_vertex = (0..c.n_vertices()).map(|v| c.degree(v)).sum();
        let by_face = (0..c.n_faces()).map(|f| c.face_vertices(f).len()).sum();
        (by_vertex, by_face)
    }

    #[test]
    fn honeycomb_torus_counts() {
        let c = build_lattice(&LatticeSpec::honeycomb(2, Boundary::Torus)).unwrap();
        assert_eq!(c.n_vertices(), 8);
        assert_eq!(c.n_faces(), 4);
        assert!((0..8).all(|v| c.degree(v) == 3));
        assert!((0..4).all(|f| c.face_vertices(f).len() == 6));
        for l in 2..7 {
            let c = build_lattice(&LatticeSpec::honeycomb(l, Boundary::Torus)).unwrap();
            assert_eq!(c.n_vertices(), 2 * l * l);
            assert_eq!(c.n_faces(), l * l);
        }
    }

    #[test]
    fn square_torus_counts() {
        let c = build_lattice(&LatticeSpec::square(3, Boundary::Torus)).unwrap();
        assert_eq!(c.n_vertices(), 9);
        assert_eq!(c.n_faces(), 9);
        assert!((0..9).all(|v| c.degree(v) == 4));
    }

    #[test]
    fn size_one_is_rejected() {
        let err = build_lattice(&LatticeSpec::square(1, Boundary::Torus)).unwrap_err();
        assert!(matches!(err, LatticeError::InvalidSpec(_)));
        let mut spec = LatticeSpec::custom_file("x.graph");
        spec.generator_seed = Some(3);
        assert!(matches!(
            build_lattice(&spec).unwrap_err(),
            LatticeError::InvalidSpec(_)
        ));
    }

    #[test]
    fn parton_count_identity_and_symmetric_adjacency() {
        for spec in [
            LatticeSpec::honeycomb(4, Boundary::Torus),
            LatticeSpec::honeycomb(5, Boundary::Open),
            LatticeSpec::square(4, Boundary::Torus),
            LatticeSpec::square(3, Boundary::Open),
            LatticeSpec::generated(7, 6),
        ] {
            let c = build_lattice(&spec).unwrap();
            let (a, b) = parton_sums(&c);
            assert_eq!(a, b, "{spec:?}");
            for f in 0..c.n_faces() {
                assert!(!c.face_adjacency(f).contains(&f));
                for &g in c.face_adjacency(f) {
                    assert!(c.face_adjacency(g).contains(&f));
                }
            }
        }
    }

    #[test]
    fn torus_translations_preserve_incidence() {
        for spec in [
            LatticeSpec::honeycomb(4, Boundary::Torus),
            LatticeSpec::square(5, Boundary::Torus),
        ] {
            let c = build_lattice(&spec).unwrap();
            for (dx, dy) in [(1, 0), (0, 1), (2, 3)] {
                let (vmap, fmap) = c.translation(dx, dy).unwrap();
                for (v, &mv) in vmap.iter().enumerate() {
                    let image: Vec<usize> = c.vertex_faces(v).iter().map(|&f| fmap[f]).collect();
                    assert_eq!(image, c.vertex_faces(mv));
                    for (slot, _) in c.vertex_faces(v).iter().enumerate() {
                        assert_eq!(c.incidence_offset(v, slot), c.incidence_offset(mv, slot));
                    }
                }
            }
        }
    }

    #[test]
    fn open_patch_marks_outer_complete_faces() {
        let c = build_lattice(&LatticeSpec::honeycomb(3, Boundary::Open)).unwrap();
        let m = c.boundary_marks();
        assert_eq!(m.left, vec![0, 3, 6]);
        assert_eq!(m.right, vec![2, 5, 8]);
        assert_eq!(m.bottom, vec![0, 1, 2]);
        assert_eq!(m.top, vec![6, 7, 8]);
        assert!(!c.has_winding_data());
        assert!((0..9).all(|f| !c.is_truncated(f) && c.face_vertices(f).len() == 6));
        assert!(c.n_faces() > 9);
        assert!((9..c.n_faces()).all(|f| c.is_truncated(f)));
        assert!((0..c.n_vertices()).all(|v| c.degree(v) == 3));
    }

    #[test]
    fn hexagon_of_degree_one_vertices_is_rejected() {
        let err = parse_custom("vertices 6\nface 0: 0 1 2 3 4 5\n").unwrap_err();
        match err {
            LatticeError::Degree { degree, .. } => assert_eq!(degree, 1),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn undeclared_vertex_is_a_parse_error() {
        let err = parse_custom("# tiny\nvertices 3\nface 0: 0 1 7\n").unwrap_err();
        match err {
            LatticeError::Parse { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn garbage_line_reports_line_number() {
        let err = parse_custom("vertices 3\n\nwat\n").unwrap_err();
        assert!(matches!(err, LatticeError::Parse { line: 3, .. }));
    }

    #[test]
    fn honeycomb_round_trips_through_graph_file() {
        let c = build_lattice(&LatticeSpec::honeycomb(2, Boundary::Torus)).unwrap();
        let text = to_graph_file(&c);
        let back = parse_custom(&text).unwrap();
        assert_eq!(back.n_vertices(), c.n_vertices());
        assert_eq!(back.n_faces(), c.n_faces());
        for f in 0..c.n_faces() {
            assert_eq!(back.face_vertices(f), c.face_vertices(f));
        }
        for v in 0..c.n_vertices() {
            let mut a = back.vertex_faces(v).to_vec();
            let mut b = c.vertex_faces(v).to_vec();
            a.sort();
            b.sort();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn generated_graphs_are_mixed_and_deterministic() {
        let a = generate_mixed_planar(1, 4).unwrap();
        let b = generate_mixed_planar(1, 4).unwrap();
        assert_eq!(a, b);
        let degrees: BTreeSet<usize> = (0..a.n_vertices()).map(|v| a.degree(v)).collect();
        assert_eq!(degrees, BTreeSet::from([3, 4]));

        let big = generate_mixed_planar(2, 100).unwrap();
        assert!((90..=110).contains(&big.n_faces()), "{}", big.n_faces());
        assert_eq!(big.n_faces(), 100);
        assert!(big.has_winding_data());
        let (x, y) = parton_sums(&big);
        assert_eq!(x, y);
        assert_ne!(generate_mixed_planar(3, 100).unwrap(), big);
    }

    #[test]
    fn generated_graph_round_trips_and_passes_surface_check() {
        let g = generate_mixed_planar(5, 40).unwrap();
        let back = parse_custom(&to_graph_file(&g)).unwrap();
        assert_eq!(back.n_faces(), g.n_faces());
        assert_eq!(back.n_vertices(), g.n_vertices());
    }

    #[test]
    fn mixed_graph_file_loads() {
        // Two squares and two triangles glued into a strip is not closed;
        // use a generated torus instead and read it back from disk.
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("mixed34.graph");
        std::fs::write(&path, to_graph_file(&generate_mixed_planar(11, 30).unwrap())).unwrap();
        let c = build_lattice(&LatticeSpec::custom_file(&path)).unwrap();
        assert!((0..c.n_vertices()).all(|v| matches!(c.degree(v), 3 | 4)));
    }
}
