//! Curvilinear hexahedral meshes built as a 2D cross-section times z-layers.
//!
//! The fiber cross-section uses a central square, four core blocks blending the
//! square sides to the core circle and four cladding sectors. Geometry is
//! interpolated on Gauss-Lobatto nodes of the exact macro maps.

use std::collections::HashMap;
use std::f64::consts::FRAC_PI_2;
use std::fmt::Write as _;

use crate::basis::{self, edge_vertices, face_vertices, gauss_lobatto_points, FaceOrientation};
use crate::error::{Error, Result};

pub type Mat3 = [[f64; 3]; 3];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum Region {
    Core,
    Cladding,
    Box,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum PmlZone {
    /// Absorbing layers adjacent to z = 0.
    Start,
    /// Absorbing layers adjacent to z = L.
    End,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ElementTag {
    pub region: Region,
    pub pml: Option<PmlZone>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum BoundaryTag {
    ZMin,
    ZMax,
    Lateral,
}

#[derive(Clone, Copy, Debug)]
enum SectionMap {
    Square { a: f64 },
    CoreSide { k: usize, a: f64, r: f64 },
    Sector { k: usize, r0: f64, r1: f64 },
    Rect { x: [f64; 2], y: [f64; 2] },
}

fn rotate(k: usize, p: [f64; 2]) -> [f64; 2] {
    // exact quarter turns avoid roundoff in vertex matching
    let (c, s) = match k % 4 {
        0 => (1.0, 0.0),
        1 => (0.0, 1.0),
        2 => (-1.0, 0.0),
        _ => (0.0, -1.0),
    };
    [c * p[0] - s * p[1], s * p[0] + c * p[1]]
}

impl SectionMap {
    fn eval(&self, xi: f64, eta: f64) -> [f64; 2] {
        match *self {
            SectionMap::Square { a } => [a * (2.0 * xi - 1.0), a * (2.0 * eta - 1.0)],
            SectionMap::CoreSide { k, a, r } => {
                let inner = [a, a * (2.0 * eta - 1.0)];
                let th = (eta - 0.5) * FRAC_PI_2;
                let outer = [r * th.cos(), r * th.sin()];
                rotate(k, [(1.0 - xi) * inner[0] + xi * outer[0], (1.0 - xi) * inner[1] + xi * outer[1]])
            }
            SectionMap::Sector { k, r0, r1 } => {
                let th = (eta - 0.5) * FRAC_PI_2;
                let r = r0 + (r1 - r0) * xi;
                rotate(k, [r * th.cos(), r * th.sin()])
            }
            SectionMap::Rect { x, y } => [x[0] + (x[1] - x[0]) * xi, y[0] + (y[1] - y[0]) * eta],
        }
    }

    fn affine(&self) -> bool {
        matches!(self, SectionMap::Square { .. } | SectionMap::Rect { .. })
    }
}

/// A cross-section cell: a parameter sub-box of a macro block.
#[derive(Clone, Debug)]
pub struct Cell {
    map: SectionMap,
    xi: [f64; 2],
    eta: [f64; 2],
    pub region: Region,
    /// Geometry order of the 2D interpolant.
    pub order: usize,
    /// (order+1)^2 nodes, index i * (order+1) + j for (xi_i, eta_j).
    pub nodes: Vec<[f64; 2]>,
    pub affine: bool,
    gll: Vec<f64>,
}

impl Cell {
    fn new(map: SectionMap, xi: [f64; 2], eta: [f64; 2], region: Region, order: usize) -> Cell {
        let affine = map.affine();
        let order = if affine { 1 } else { order };
        let t = gauss_lobatto_points(order + 1);
        let mut nodes = Vec::with_capacity((order + 1) * (order + 1));
        for &s in &t {
            for &r in &t {
                nodes.push(map.eval(xi[0] + (xi[1] - xi[0]) * s, eta[0] + (eta[1] - eta[0]) * r));
            }
        }
        Cell { map, xi, eta, region, order, nodes, affine, gll: t }
    }

    fn split(&self, nx: usize, ny: usize) -> Vec<Cell> {
        let mut out = Vec::new();
        for i in 0..nx {
            for j in 0..ny {
                let xi = [
                    self.xi[0] + (self.xi[1] - self.xi[0]) * i as f64 / nx as f64,
                    self.xi[0] + (self.xi[1] - self.xi[0]) * (i + 1) as f64 / nx as f64,
                ];
                let eta = [
                    self.eta[0] + (self.eta[1] - self.eta[0]) * j as f64 / ny as f64,
                    self.eta[0] + (self.eta[1] - self.eta[0]) * (j + 1) as f64 / ny as f64,
                ];
                out.push(Cell::new(self.map, xi, eta, self.region, self.order));
            }
        }
        out
    }

    /// Exact macro-map point (used for vertices).
    fn exact(&self, s: f64, t: f64) -> [f64; 2] {
        self.map.eval(self.xi[0] + (self.xi[1] - self.xi[0]) * s, self.eta[0] + (self.eta[1] - self.eta[0]) * t)
    }

    /// Interpolated position and 2x2 Jacobian at reference (s, t).
    pub fn eval(&self, s: f64, t: f64) -> ([f64; 2], [[f64; 2]; 2]) {
        let n = self.order + 1;
        let mut ls = [0.0; 16];
        let mut ds = [0.0; 16];
        let mut lt = [0.0; 16];
        let mut dt = [0.0; 16];
        lagrange(&self.gll, s, &mut ls, &mut ds);
        lagrange(&self.gll, t, &mut lt, &mut dt);
        let mut x = [0.0; 2];
        let mut j = [[0.0; 2]; 2];
        for a in 0..n {
            for b in 0..n {
                let p = self.nodes[a * n + b];
                let (w, wx, wy) = (ls[a] * lt[b], ds[a] * lt[b], ls[a] * dt[b]);
                for c in 0..2 {
                    x[c] += w * p[c];
                    j[c][0] += wx * p[c];
                    j[c][1] += wy * p[c];
                }
            }
        }
        (x, j)
    }
}

/// Lagrange basis values and derivatives on the given nodes at s.
pub fn lagrange(nodes: &[f64], s: f64, val: &mut [f64], der: &mut [f64]) {
    let n = nodes.len();
    for i in 0..n {
        let mut v = 1.0;
        let mut d = 0.0;
        for m in 0..n {
            if m == i {
                continue;
            }
            let den = nodes[i] - nodes[m];
            d = d * (s - nodes[m]) / den + v / den;
            v *= (s - nodes[m]) / den;
        }
        val[i] = v;
        der[i] = d;
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Layer {
    pub z: [f64; 2],
    pub pml: Option<PmlZone>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum MeshKind {
    Fiber { r_core: f64, r_cladding: f64 },
    Box { extents: [f64; 3] },
}

#[derive(Clone, Debug)]
pub struct Element {
    pub corners: [usize; 8],
    pub cell: usize,
    pub layer: usize,
    pub tag: ElementTag,
    pub faces: [usize; 6],
    pub face_orient: [FaceOrientation; 6],
    pub edges: [usize; 12],
    pub edge_reversed: [bool; 12],
}

#[derive(Clone, Debug)]
pub struct Face {
    /// (element, local face id) for each incident element.
    pub sides: Vec<(usize, usize)>,
    pub boundary: Option<BoundaryTag>,
}

impl Face {
    pub fn is_interior(&self) -> bool {
        self.sides.len() == 2
    }
}

/// Pointwise geometry of an element.
#[derive(Clone, Copy, Debug)]
pub struct GeoPoint {
    pub x: [f64; 3],
    pub jac: Mat3,
    pub det: f64,
    pub inv: Mat3,
}

#[derive(Clone, Debug)]
pub struct HexMesh {
    pub kind: MeshKind,
    pub vertices: Vec<[f64; 3]>,
    pub cells: Vec<Cell>,
    pub layers: Vec<Layer>,
    pub elements: Vec<Element>,
    pub faces: Vec<Face>,
    pub edges: Vec<[usize; 2]>,
    pub geometry_order: usize,
    pub length: f64,
}

#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
pub struct FiberMeshParams {
    pub r_core: f64,
    pub r_cladding: f64,
    pub length: f64,
    pub n_layers: usize,
    pub pml_fraction: f64,
    /// Layers reserved for an absorbing zone at z = 0 (counter-propagating field).
    #[serde(default)]
    pub pml_start_fraction: f64,
    pub geometry_order: usize,
    /// Radial subdivisions of the cladding ring.
    #[serde(default = "one")]
    pub cladding_rings: usize,
    /// Geometric growth factor of successive cladding ring widths.
    #[serde(default = "unit")]
    pub cladding_grading: f64,
    /// Uniform in-plane subdivisions of every macro block (2^level per direction).
    #[serde(default)]
    pub section_level: usize,
}

fn one() -> usize {
    1
}
fn unit() -> f64 {
    1.0
}

pub fn build_fiber_mesh(
    r_core: f64,
    r_cladding: f64,
    fiber_length: f64,
    n_layers: usize,
    pml_fraction: f64,
    geometry_order: usize,
) -> Result<HexMesh> {
    if n_layers < 2 {
        return Err(Error::Config("n_layers must be at least 2".into()));
    }
    build_fiber_mesh_with(&FiberMeshParams {
        r_core,
        r_cladding,
        length: fiber_length,
        n_layers,
        pml_fraction,
        pml_start_fraction: 0.0,
        geometry_order,
        cladding_rings: 1,
        cladding_grading: 1.0,
        section_level: 0,
    })
}

fn pml_layer_count(frac: f64, n: usize) -> usize {
    // guard against 0.2 * 10 = 2.0000000000000004 style roundoff
    let x = frac * n as f64;
    let r = x.round();
    if (x - r).abs() < 1e-9 {
        r as usize
    } else {
        x.ceil() as usize
    }
}

pub fn build_fiber_mesh_with(p: &FiberMeshParams) -> Result<HexMesh> {
    if !(p.r_core > 0.0 && p.r_core < p.r_cladding) {
        return Err(Error::Config(format!(
            "fiber radii must satisfy 0 < r_core < r_cladding (got {} and {})",
            p.r_core, p.r_cladding
        )));
    }
    if p.n_layers == 0 {
        return Err(Error::Config("n_layers must be at least 1".into()));
    }
    if !(0.0..1.0).contains(&p.pml_fraction) || !(0.0..1.0).contains(&p.pml_start_fraction) {
        return Err(Error::Config("pml_fraction must lie in [0, 1)".into()));
    }
    if !(p.length > 0.0) {
        return Err(Error::Config("fiber length must be positive".into()));
    }
    if p.geometry_order == 0 || p.geometry_order > 8 {
        return Err(Error::Config("geometry_order must lie in 1..=8".into()));
    }
    if p.cladding_rings == 0 || !(p.cladding_grading > 0.0) {
        return Err(Error::Config("cladding_rings must be >= 1 and cladding_grading > 0".into()));
    }
    let n_end = pml_layer_count(p.pml_fraction, p.n_layers);
    let n_start = pml_layer_count(p.pml_start_fraction, p.n_layers);
    if n_end + n_start + 1 > p.n_layers {
        return Err(Error::Config(format!(
            "absorbing layers ({} + {}) leave less than one physical layer of {}",
            n_start, n_end, p.n_layers
        )));
    }
    let g = p.geometry_order;
    let a = 0.5 * p.r_core;
    let mut blocks = vec![Cell::new(SectionMap::Square { a }, [0.0, 1.0], [0.0, 1.0], Region::Core, g)];
    for k in 0..4 {
        blocks.push(Cell::new(SectionMap::CoreSide { k, a, r: p.r_core }, [0.0, 1.0], [0.0, 1.0], Region::Core, g));
    }
    // cladding ring boundaries in the radial parameter
    let nr = p.cladding_rings;
    let mut w: Vec<f64> = (0..nr).map(|i| p.cladding_grading.powi(i as i32)).collect();
    let tot: f64 = w.iter().sum();
    w.iter_mut().for_each(|x| *x /= tot);
    let mut bounds = vec![0.0];
    for x in &w {
        let last = *bounds.last().unwrap();
        bounds.push(last + x);
    }
    *bounds.last_mut().unwrap() = 1.0;
    for k in 0..4 {
        for i in 0..nr {
            blocks.push(Cell::new(
                SectionMap::Sector { k, r0: p.r_core, r1: p.r_cladding },
                [bounds[i], bounds[i + 1]],
                [0.0, 1.0],
                Region::Cladding,
                g,
            ));
        }
    }
    let m = 1usize << p.section_level;
    let cells: Vec<Cell> = blocks.iter().flat_map(|c| c.split(m, m)).collect();
    let n = p.n_layers;
    let layers = (0..n)
        .map(|l| Layer {
            z: [p.length * l as f64 / n as f64, p.length * (l + 1) as f64 / n as f64],
            pml: if l >= n - n_end {
                Some(PmlZone::End)
            } else if l < n_start {
                Some(PmlZone::Start)
            } else {
                None
            },
        })
        .collect();
    assemble(MeshKind::Fiber { r_core: p.r_core, r_cladding: p.r_cladding }, cells, layers, g, p.length)
}

pub fn build_box_mesh(extents: [f64; 3], subdivisions: [usize; 3]) -> Result<HexMesh> {
    if extents.iter().any(|&e| !(e > 0.0)) || subdivisions.contains(&0) {
        return Err(Error::Config("box extents and subdivisions must be positive".into()));
    }
    let [nx, ny, nz] = subdivisions;
    let whole = Cell::new(SectionMap::Rect { x: [0.0, extents[0]], y: [0.0, extents[1]] }, [0.0, 1.0], [0.0, 1.0], Region::Box, 1);
    let cells = whole.split(nx, ny);
    let layers = (0..nz)
        .map(|l| Layer { z: [extents[2] * l as f64 / nz as f64, extents[2] * (l + 1) as f64 / nz as f64], pml: None })
        .collect();
    assemble(MeshKind::Box { extents }, cells, layers, 1, extents[2])
}

/// Split every layer into `factor` layers; tags are inherited.
pub fn refine_z(mesh: &HexMesh, factor: usize) -> Result<HexMesh> {
    if factor < 2 {
        return Err(Error::Config("refinement factor must be at least 2".into()));
    }
    let layers = split_layers(&mesh.layers, factor);
    assemble(mesh.kind, mesh.cells.clone(), layers, mesh.geometry_order, mesh.length)
}

/// Split every element into 8 (cross-section cells 2x2, layers 2).
pub fn refine_uniform(mesh: &HexMesh) -> Result<HexMesh> {
    let cells = mesh.cells.iter().flat_map(|c| c.split(2, 2)).collect();
    let layers = split_layers(&mesh.layers, 2);
    assemble(mesh.kind, cells, layers, mesh.geometry_order, mesh.length)
}

fn split_layers(layers: &[Layer], factor: usize) -> Vec<Layer> {
    let mut out = Vec::with_capacity(layers.len() * factor);
    for l in layers {
        for i in 0..factor {
            let z0 = l.z[0] + (l.z[1] - l.z[0]) * i as f64 / factor as f64;
            let z1 = if i + 1 == factor { l.z[1] } else { l.z[0] + (l.z[1] - l.z[0]) * (i + 1) as f64 / factor as f64 };
            out.push(Layer { z: [z0, z1], pml: l.pml });
        }
    }
    out
}

struct VertexPool {
    scale: f64,
    map: HashMap<[i64; 3], usize>,
    verts: Vec<[f64; 3]>,
}

impl VertexPool {
    fn key(&self, x: [f64; 3]) -> [i64; 3] {
        x.map(|c| (c / self.scale).round() as i64)
    }

    fn insert(&mut self, x: [f64; 3]) -> usize {
        let k = self.key(x);
        for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    if let Some(&id) = self.map.get(&[k[0] + dx, k[1] + dy, k[2] + dz]) {
                        let v = self.verts[id];
                        let d = ((v[0] - x[0]).powi(2) + (v[1] - x[1]).powi(2) + (v[2] - x[2]).powi(2)).sqrt();
                        if d < self.scale {
                            return id;
                        }
                    }
                }
            }
        }
        let id = self.verts.len();
        self.verts.push(x);
        self.map.insert(k, id);
        id
    }
}

fn assemble(kind: MeshKind, cells: Vec<Cell>, layers: Vec<Layer>, geometry_order: usize, length: f64) -> Result<HexMesh> {
    let extent = match kind {
        MeshKind::Fiber { r_cladding, .. } => r_cladding.max(length),
        MeshKind::Box { extents } => extents[0].max(extents[1]).max(extents[2]),
    };
    let mut pool = VertexPool { scale: 1e-9 * extent, map: HashMap::new(), verts: Vec::new() };
    let mut elements = Vec::with_capacity(cells.len() * layers.len());
    for (li, layer) in layers.iter().enumerate() {
        for (ci, cell) in cells.iter().enumerate() {
            let mut corners = [0; 8];
            for (v, c) in corners.iter_mut().enumerate() {
                let [i, j, k] = basis::vertex_coords(v);
                let p = cell.exact(i as f64, j as f64);
                *c = pool.insert([p[0], p[1], layer.z[k]]);
            }
            elements.push(Element {
                corners,
                cell: ci,
                layer: li,
                tag: ElementTag { region: cell.region, pml: layer.pml },
                faces: [0; 6],
                face_orient: [FaceOrientation::default(); 6],
                edges: [0; 12],
                edge_reversed: [false; 12],
            });
        }
    }
    let vertices = pool.verts;
    // skeleton
    let mut face_map: HashMap<[usize; 4], usize> = HashMap::new();
    let mut faces: Vec<Face> = Vec::new();
    let mut edge_map: HashMap<[usize; 2], usize> = HashMap::new();
    let mut edges: Vec<[usize; 2]> = Vec::new();
    for (e, el) in elements.iter_mut().enumerate() {
        for f in 0..6 {
            let fv = face_vertices(f);
            let g = fv.map(|v| el.corners[v]);
            let mut key = g;
            key.sort_unstable();
            let id = *face_map.entry(key).or_insert_with(|| {
                faces.push(Face { sides: Vec::new(), boundary: None });
                faces.len() - 1
            });
            faces[id].sides.push((e, f));
            el.faces[f] = id;
            el.face_orient[f] = FaceOrientation::from_corner_ids(g);
        }
        for ed in 0..12 {
            let (_, a, b) = edge_vertices(ed);
            let (ga, gb) = (el.corners[a], el.corners[b]);
            let key = [ga.min(gb), ga.max(gb)];
            let id = *edge_map.entry(key).or_insert_with(|| {
                edges.push(key);
                edges.len() - 1
            });
            el.edges[ed] = id;
            el.edge_reversed[ed] = ga > gb;
        }
    }
    let z_tol = 1e-9 * extent;
    for f in faces.iter_mut() {
        match f.sides.len() {
            1 => {
                let (e, lf) = f.sides[0];
                let el = &elements[e];
                let zs: Vec<f64> = face_vertices(lf).iter().map(|&v| vertices[el.corners[v]][2]).collect();
                f.boundary = Some(if zs.iter().all(|z| z.abs() < z_tol) {
                    BoundaryTag::ZMin
                } else if zs.iter().all(|z| (z - length).abs() < z_tol) {
                    BoundaryTag::ZMax
                } else {
                    BoundaryTag::Lateral
                });
            }
            2 => {}
            k => return Err(Error::Topology(format!("face shared by {k} elements"))),
        }
    }
    let mesh = HexMesh { kind, vertices, cells, layers, elements, faces, edges, geometry_order, length };
    mesh.check_jacobians(8)?;
    Ok(mesh)
}

impl HexMesh {
    pub fn num_elements(&self) -> usize {
        self.elements.len()
    }

    pub fn is_affine(&self) -> bool {
        self.cells.iter().all(|c| c.affine)
    }

    pub fn count_region(&self, r: Region) -> usize {
        self.elements.iter().filter(|e| e.tag.region == r).count()
    }

    pub fn count_pml(&self) -> usize {
        self.elements.iter().filter(|e| e.tag.pml.is_some()).count()
    }

    /// z coordinates of all layer interfaces, including both ends.
    pub fn layer_interfaces(&self) -> Vec<f64> {
        let mut z: Vec<f64> = self.layers.iter().map(|l| l.z[0]).collect();
        z.push(self.layers.last().map_or(0.0, |l| l.z[1]));
        z
    }

    /// z-range [start, end] of a PML zone, if present.
    pub fn pml_range(&self, zone: PmlZone) -> Option<[f64; 2]> {
        let ls: Vec<&Layer> = self.layers.iter().filter(|l| l.pml == Some(zone)).collect();
        if ls.is_empty() {
            return None;
        }
        Some([ls.iter().map(|l| l.z[0]).fold(f64::INFINITY, f64::min), ls.iter().map(|l| l.z[1]).fold(0.0, f64::max)])
    }

    fn cell_eval(&self, e: usize, x: [f64; 3]) -> GeoPoint {
        let el = &self.elements[e];
        let cell = &self.cells[el.cell];
        let layer = &self.layers[el.layer];
        let (p, j2) = cell.eval(x[0], x[1]);
        let hz = layer.z[1] - layer.z[0];
        let jac = [[j2[0][0], j2[0][1], 0.0], [j2[1][0], j2[1][1], 0.0], [0.0, 0.0, hz]];
        let det2 = j2[0][0] * j2[1][1] - j2[0][1] * j2[1][0];
        let det = det2 * hz;
        let inv = [
            [j2[1][1] / det2, -j2[0][1] / det2, 0.0],
            [-j2[1][0] / det2, j2[0][0] / det2, 0.0],
            [0.0, 0.0, 1.0 / hz],
        ];
        GeoPoint { x: [p[0], p[1], layer.z[0] + hz * x[2]], jac, det, inv }
    }

    pub fn geometry(&self, e: usize, x: [f64; 3]) -> GeoPoint {
        self.cell_eval(e, x)
    }

    pub fn geometry_at(&self, e: usize, pts: &[[f64; 3]]) -> Vec<GeoPoint> {
        pts.iter().map(|&x| self.cell_eval(e, x)).collect()
    }

    /// Geometry on a tensor grid, point order q = (qx * ny + qy) * nz + qz.
    pub fn geometry_tensor(&self, e: usize, pts: [&[f64]; 3]) -> Vec<GeoPoint> {
        let el = &self.elements[e];
        let cell = &self.cells[el.cell];
        let layer = &self.layers[el.layer];
        let hz = layer.z[1] - layer.z[0];
        let mut out = Vec::with_capacity(pts[0].len() * pts[1].len() * pts[2].len());
        for &s in pts[0] {
            for &t in pts[1] {
                let (p, j2) = cell.eval(s, t);
                let det2 = j2[0][0] * j2[1][1] - j2[0][1] * j2[1][0];
                let jac = [[j2[0][0], j2[0][1], 0.0], [j2[1][0], j2[1][1], 0.0], [0.0, 0.0, hz]];
                let inv = [
                    [j2[1][1] / det2, -j2[0][1] / det2, 0.0],
                    [-j2[1][0] / det2, j2[0][0] / det2, 0.0],
                    [0.0, 0.0, 1.0 / hz],
                ];
                for &r in pts[2] {
                    out.push(GeoPoint { x: [p[0], p[1], layer.z[0] + hz * r], jac, det: det2 * hz, inv });
                }
            }
        }
        out
    }

    /// Verify det J > 0 on an n-point tensor Gauss grid of every element.
    pub fn check_jacobians(&self, n: usize) -> Result<()> {
        let r = basis::gauss_rule(n);
        for (ci, cell) in self.cells.iter().enumerate() {
            for &s in &r.points {
                for &t in &r.points {
                    let (_, j) = cell.eval(s, t);
                    let d = j[0][0] * j[1][1] - j[0][1] * j[1][0];
                    if !(d > 0.0) {
                        return Err(Error::Geometry(format!("non-positive Jacobian {d} in cross-section cell {ci}")));
                    }
                }
            }
        }
        for l in &self.layers {
            if !(l.z[1] > l.z[0]) {
                return Err(Error::Geometry("degenerate layer".into()));
            }
        }
        Ok(())
    }

    /// Quadrature sum of det J over all elements.
    pub fn volume(&self, n: usize) -> f64 {
        let r = basis::gauss_rule(n);
        let w = basis::tensor_weights([&r.weights, &r.weights, &r.weights]);
        (0..self.num_elements())
            .map(|e| {
                self.geometry_tensor(e, [&r.points, &r.points, &r.points])
                    .iter()
                    .zip(&w)
                    .map(|(g, w)| g.det.abs() * w)
                    .sum::<f64>()
            })
            .sum()
    }

    /// Map local face coordinates (u, v) of face `f` of element `e` to a reference point.
    pub fn face_point(face: usize, uv: [f64; 2]) -> [f64; 3] {
        let (d, s, t) = basis::face_axes(face);
        let mut x = [0.0; 3];
        x[d] = s as f64;
        x[t[0]] = uv[0];
        x[t[1]] = uv[1];
        x
    }

    /// Locate the element containing a physical point and its reference coordinates.
    pub fn locate(&self, x: [f64; 3]) -> Option<(usize, [f64; 3])> {
        let tol = 1e-10;
        let li = self.layers.iter().position(|l| x[2] >= l.z[0] - tol && x[2] <= l.z[1] + tol)?;
        let layer = &self.layers[li];
        let rz = ((x[2] - layer.z[0]) / (layer.z[1] - layer.z[0])).clamp(0.0, 1.0);
        let ncell = self.cells.len();
        for (ci, cell) in self.cells.iter().enumerate() {
            if let Some(st) = invert_cell(cell, [x[0], x[1]]) {
                return Some((li * ncell + ci, [st[0], st[1], rz]));
            }
        }
        None
    }

    /// Plain-text dump: vertices, then elements with corner ids and zone tags.
    pub fn dump(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "vertices {}", self.vertices.len());
        for v in &self.vertices {
            let _ = writeln!(s, "{:.17e} {:.17e} {:.17e}", v[0], v[1], v[2]);
        }
        let _ = writeln!(s, "elements {}", self.elements.len());
        for el in &self.elements {
            let ids: Vec<String> = el.corners.iter().map(|c| c.to_string()).collect();
            let zone = match (el.tag.pml, el.tag.region) {
                (Some(_), _) => "pml",
                (None, Region::Core) => "core",
                (None, Region::Cladding) => "cladding",
                (None, Region::Box) => "box",
            };
            let _ = writeln!(s, "{} {}", ids.join(" "), zone);
        }
        s
    }

    /// Ids of faces lying in the plane z = z0 (each with one side chosen below the plane if possible).
    pub fn faces_at_z(&self, z0: f64) -> Vec<usize> {
        let tol = 1e-9 * self.length.max(1.0);
        let mut out = Vec::new();
        for (fi, f) in self.faces.iter().enumerate() {
            let (e, lf) = f.sides[0];
            if lf / 2 != 2 {
                continue;
            }
            let el = &self.elements[e];
            let z = self.vertices[el.corners[face_vertices(lf)[0]]][2];
            if (z - z0).abs() < tol {
                out.push(fi);
            }
        }
        out
    }
}

fn invert_cell(cell: &Cell, x: [f64; 2]) -> Option<[f64; 2]> {
    let mut st = [0.5, 0.5];
    for _ in 0..50 {
        let (p, j) = cell.eval(st[0], st[1]);
        let r = [x[0] - p[0], x[1] - p[1]];
        let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
        let ds = [(j[1][1] * r[0] - j[0][1] * r[1]) / det, (-j[1][0] * r[0] + j[0][0] * r[1]) / det];
        // damp large steps that would leave the neighbourhood of the cell
        let mag = ds[0].abs().max(ds[1].abs());
        let damp = if mag > 0.5 { 0.5 / mag } else { 1.0 };
        st[0] = (st[0] + damp * ds[0]).clamp(-0.5, 1.5);
        st[1] = (st[1] + damp * ds[1]).clamp(-0.5, 1.5);
        if mag < 1e-12 {
            break;
        }
    }
    let (p, _) = cell.eval(st[0], st[1]);
    let err = ((p[0] - x[0]).powi(2) + (p[1] - x[1]).powi(2)).sqrt();
    let tol = 1e-9;
    if err < 1e-10 && (-tol..=1.0 + tol).contains(&st[0]) && (-tol..=1.0 + tol).contains(&st[1]) {
        Some([st[0].clamp(0.0, 1.0), st[1].clamp(0.0, 1.0)])
    } else {
        None
    }
}

pub fn mat_vec(m: &Mat3, v: [f64; 3]) -> [f64; 3] {
    [
        m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
        m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
        m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2],
    ]
}

pub fn mat_t_vec(m: &Mat3, v: [f64; 3]) -> [f64; 3] {
    [
        m[0][0] * v[0] + m[1][0] * v[1] + m[2][0] * v[2],
        m[0][1] * v[0] + m[1][1] * v[1] + m[2][1] * v[2],
        m[0][2] * v[0] + m[1][2] * v[1] + m[2][2] * v[2],
    ]
}

pub fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

pub fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub fn norm(a: [f64; 3]) -> f64 {
    dot(a, a).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn default_fiber(n_layers: usize, g: usize) -> HexMesh {
        let s2 = 2f64.sqrt();
        build_fiber_mesh(0.25 * s2, 2.5 * s2, 0.37, n_layers, 0.2, g).unwrap()
    }

    #[test]
    fn fiber_counts() {
        let m = default_fiber(32, 2);
        assert_eq!(m.num_elements(), 288);
        assert_eq!(m.count_region(Region::Core), 160);
        assert_eq!(m.count_region(Region::Cladding), 128);
        assert_eq!(m.count_pml(), 9 * 7);
        let m = build_fiber_mesh(1.0, 2.0, 1.0, 2, 0.0, 2).unwrap();
        assert_eq!(m.num_elements(), 18);
        assert_eq!(m.count_pml(), 0);
    }

    #[test]
    fn fiber_errors() {
        assert!(matches!(build_fiber_mesh(2.0, 1.0, 1.0, 4, 0.0, 2), Err(Error::Config(_))));
        assert!(matches!(build_fiber_mesh(1.0, 1.0, 1.0, 4, 0.0, 2), Err(Error::Config(_))));
        assert!(matches!(build_fiber_mesh(0.5, 1.0, 1.0, 2, 0.9, 2), Err(Error::Config(_))));
    }

    #[test]
    fn skeleton_counts() {
        let m = default_fiber(4, 2);
        for f in &m.faces {
            assert!(f.sides.len() == 1 || f.sides.len() == 2);
            assert_eq!(f.sides.len() == 1, f.boundary.is_some());
        }
        let lateral = m.faces.iter().filter(|f| f.boundary == Some(BoundaryTag::Lateral)).count();
        assert_eq!(lateral, 4 * 4);
        let zmin = m.faces.iter().filter(|f| f.boundary == Some(BoundaryTag::ZMin)).count();
        assert_eq!(zmin, 9);
    }

    #[test]
    fn box_counts() {
        assert_eq!(build_box_mesh([1.0, 1.0, 16.0], [1, 1, 64]).unwrap().num_elements(), 64);
        let m = build_box_mesh([1.0, 1.0, 16.0], [2, 2, 64]).unwrap();
        assert_eq!(m.num_elements(), 256);
        let g = m.geometry(17, [0.3, 0.6, 0.1]);
        assert!((g.jac[0][0] - 0.5).abs() < 1e-15 && (g.jac[1][1] - 0.5).abs() < 1e-15);
        assert!((g.jac[2][2] - 0.25).abs() < 1e-15 && g.jac[0][1] == 0.0);
        let m = build_box_mesh([1.0; 3], [1; 3]).unwrap();
        let g = m.geometry(0, [0.2, 0.2, 0.9]);
        assert!((g.det - 1.0).abs() < 1e-15);
    }

    #[test]
    fn refine_z_counts_and_nesting() {
        let m = default_fiber(32, 2);
        let r = refine_z(&m, 2).unwrap();
        assert_eq!(r.num_elements(), 576);
        assert_eq!(r.layers.len(), 64);
        let r4 = refine_z(&m, 4).unwrap();
        let r22 = refine_z(&r, 2).unwrap();
        let key = |v: &[f64; 3]| v.map(|c| (c * 1e9).round() as i64);
        let mut a: Vec<_> = r4.vertices.iter().map(key).collect();
        let mut b: Vec<_> = r22.vertices.iter().map(key).collect();
        a.sort();
        b.sort();
        assert_eq!(a, b);
        let fine: std::collections::HashSet<_> = r.vertices.iter().map(key).collect();
        assert!(m.vertices.iter().all(|v| fine.contains(&key(v))));
        let b = build_box_mesh([1.0, 1.0, 4.0], [1, 1, 4]).unwrap();
        let bz = refine_z(&b, 2).unwrap();
        let d0 = b.geometry(0, [0.5; 3]).det;
        let d1 = bz.geometry(0, [0.5; 3]).det;
        assert!((d1 - d0 / 2.0).abs() < 1e-15);
    }

    #[test]
    fn face_parameterizations_agree() {
        let m = refine_uniform(&default_fiber(3, 3)).unwrap();
        let samples = [[0.13, 0.71], [0.5, 0.5], [0.9, 0.02]];
        for f in m.faces.iter().filter(|f| f.is_interior()) {
            let (e0, f0) = f.sides[0];
            let (e1, f1) = f.sides[1];
            let o0 = m.elements[e0].face_orient[f0];
            let o1 = m.elements[e1].face_orient[f1];
            for s in samples {
                let x0 = m.geometry(e0, HexMesh::face_point(f0, o0.canonical_to_local(s))).x;
                let x1 = m.geometry(e1, HexMesh::face_point(f1, o1.canonical_to_local(s))).x;
                assert!(norm([x0[0] - x1[0], x0[1] - x1[1], x0[2] - x1[2]]) < 1e-12);
            }
        }
    }

    #[test]
    fn locate_roundtrip() {
        let m = default_fiber(4, 2);
        for &(e, x) in &[(3usize, [0.2, 0.7, 0.4]), (30, [0.9, 0.1, 0.5]), (8, [0.5, 0.5, 0.5])] {
            let p = m.geometry(e, x).x;
            let (e2, x2) = m.locate(p).unwrap();
            let p2 = m.geometry(e2, x2).x;
            assert!(norm([p[0] - p2[0], p[1] - p2[1], p[2] - p2[2]]) < 1e-10);
        }
        assert!(m.locate([10.0, 0.0, 0.1]).is_none());
    }

    #[test]
    fn dump_format() {
        let m = build_box_mesh([1.0; 3], [1; 3]).unwrap();
        let d = m.dump();
        assert!(d.starts_with("vertices 8\n"));
        assert!(d.trim_end().ends_with("box"));
    }
}
