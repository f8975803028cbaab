//! Hierarchical tensor-product shape functions on the reference cube [0,1]^3.
//!
//! The 1D H1 hierarchy is {1-t, t, L_2, ..., L_p} with L_k the integrated shifted
//! Legendre polynomials, and the 1D L2 hierarchy is {P_0, ..., P_{p-1}}. Since
//! L_k' = P_{k-1}, the four tensor families W, Q, V, Y form an exact sequence.

use std::sync::Arc;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub struct OrderTriple {
    pub p: usize,
    pub q: usize,
    pub r: usize,
}

impl OrderTriple {
    pub fn new(p: usize, q: usize, r: usize) -> Self {
        Self { p, q, r }
    }

    pub fn iso(p: usize) -> Self {
        Self { p, q: p, r: p }
    }

    pub fn as_array(self) -> [usize; 3] {
        [self.p, self.q, self.r]
    }

    pub fn enriched(self, dp: usize) -> Self {
        Self::new(self.p + dp, self.q + dp, self.r + dp)
    }

    pub fn is_isotropic(self) -> bool {
        self.p == self.q && self.q == self.r
    }

    pub fn max(self) -> usize {
        self.p.max(self.q).max(self.r)
    }
}

/// The discrete spaces. `VecY` is Y^3, used for vector L2 unknowns.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Space {
    W,
    Q,
    V,
    Y,
    VecY,
}

impl Space {
    pub fn from_tag(tag: &str) -> Result<Space> {
        match tag {
            "W" | "w" => Ok(Space::W),
            "Q" | "q" => Ok(Space::Q),
            "V" | "v" => Ok(Space::V),
            "Y" | "y" => Ok(Space::Y),
            "Y3" | "y3" => Ok(Space::VecY),
            other => Err(Error::Usage(format!("unknown space tag `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Kind1d {
    /// H1 hierarchy of the given order: order + 1 functions.
    H1(usize),
    /// L2 hierarchy for the given order: `order` functions of degree 0..order-1.
    L2(usize),
}

impl Kind1d {
    pub fn len(self) -> usize {
        match self {
            Kind1d::H1(p) => p + 1,
            Kind1d::L2(p) => p,
        }
    }

    pub fn is_empty(self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Op {
    Value,
    /// Gradient on W, curl on Q, divergence on V.
    Derivative,
}

#[derive(Clone, Debug)]
pub struct Block {
    pub comp: usize,
    pub kinds: [Kind1d; 3],
    pub dims: [usize; 3],
    pub offset: usize,
}

impl Block {
    pub fn len(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn index(&self, i: [usize; 3]) -> usize {
        (i[0] * self.dims[1] + i[1]) * self.dims[2] + i[2]
    }

    pub fn split(&self, l: usize) -> [usize; 3] {
        let iz = l % self.dims[2];
        let t = l / self.dims[2];
        [t / self.dims[1], t % self.dims[1], iz]
    }
}

/// One tensor-product contribution to a shape quantity: component `comp` of the
/// block's shapes equals `sign` times a product of 1D values or derivatives.
#[derive(Clone, Copy, Debug)]
pub struct Term {
    pub block: usize,
    pub comp: usize,
    pub der: [bool; 3],
    pub sign: f64,
}

#[derive(Clone, Debug)]
pub struct Family {
    pub space: Space,
    pub orders: OrderTriple,
    pub blocks: Vec<Block>,
    pub dim: usize,
}

impl Family {
    pub fn new(space: Space, orders: OrderTriple) -> Family {
        use Kind1d::{H1, L2};
        let [p, q, r] = orders.as_array();
        let specs: Vec<(usize, [Kind1d; 3])> = match space {
            Space::W => vec![(0, [H1(p), H1(q), H1(r)])],
            Space::Q => vec![
                (0, [L2(p), H1(q), H1(r)]),
                (1, [H1(p), L2(q), H1(r)]),
                (2, [H1(p), H1(q), L2(r)]),
            ],
            Space::V => vec![
                (0, [H1(p), L2(q), L2(r)]),
                (1, [L2(p), H1(q), L2(r)]),
                (2, [L2(p), L2(q), H1(r)]),
            ],
            Space::Y => vec![(0, [L2(p), L2(q), L2(r)])],
            Space::VecY => (0..3).map(|c| (c, [L2(p), L2(q), L2(r)])).collect(),
        };
        let mut offset = 0;
        let blocks = specs
            .into_iter()
            .map(|(comp, kinds)| {
                let dims = [kinds[0].len(), kinds[1].len(), kinds[2].len()];
                let b = Block { comp, kinds, dims, offset };
                offset += b.len();
                b
            })
            .collect();
        Family { space, orders, blocks, dim: offset }
    }

    pub fn ncomp(&self, op: Op) -> usize {
        match (self.space, op) {
            (Space::W, Op::Value) | (Space::Y, Op::Value) => 1,
            (Space::V, Op::Derivative) => 1,
            _ => 3,
        }
    }

    /// Locate a shape index: (block index, per-direction indices).
    pub fn locate(&self, shape: usize) -> (usize, [usize; 3]) {
        for (bi, b) in self.blocks.iter().enumerate() {
            if shape < b.offset + b.len() {
                return (bi, b.split(shape - b.offset));
            }
        }
        panic!("shape index {shape} out of range for family of dim {}", self.dim)
    }

    pub fn terms(&self, op: Op) -> Result<Vec<Term>> {
        let mut out = Vec::new();
        for (bi, b) in self.blocks.iter().enumerate() {
            match (self.space, op) {
                (_, Op::Value) => out.push(Term { block: bi, comp: b.comp, der: [false; 3], sign: 1.0 }),
                (Space::W, Op::Derivative) => {
                    for d in 0..3 {
                        let mut der = [false; 3];
                        der[d] = true;
                        out.push(Term { block: bi, comp: d, der, sign: 1.0 });
                    }
                }
                (Space::Q, Op::Derivative) => {
                    // curl(f e_c) = grad f x e_c
                    let c = b.comp;
                    for m in 0..3 {
                        for j in 0..3 {
                            let s = levi_civita(m, j, c);
                            if s != 0.0 {
                                let mut der = [false; 3];
                                der[j] = true;
                                out.push(Term { block: bi, comp: m, der, sign: s });
                            }
                        }
                    }
                }
                (Space::V, Op::Derivative) => {
                    let mut der = [false; 3];
                    der[b.comp] = true;
                    out.push(Term { block: bi, comp: 0, der, sign: 1.0 });
                }
                (s, Op::Derivative) => {
                    return Err(Error::Usage(format!("no derivative operator for space {s:?}")))
                }
            }
        }
        Ok(out)
    }
}

pub fn levi_civita(i: usize, j: usize, k: usize) -> f64 {
    match (i, j, k) {
        (0, 1, 2) | (1, 2, 0) | (2, 0, 1) => 1.0,
        (0, 2, 1) | (2, 1, 0) | (1, 0, 2) => -1.0,
        _ => 0.0,
    }
}

// ---------------------------------------------------------------------------
// 1D polynomials

/// Shifted Legendre P_n(2t-1) for n = 0..=nmax and their t-derivatives.
pub fn shifted_legendre(nmax: usize, t: f64, vals: &mut [f64], ders: &mut [f64]) {
    let x = 2.0 * t - 1.0;
    vals[0] = 1.0;
    ders[0] = 0.0;
    if nmax == 0 {
        return;
    }
    vals[1] = x;
    ders[1] = 1.0;
    for n in 1..nmax {
        let nf = n as f64;
        vals[n + 1] = ((2.0 * nf + 1.0) * x * vals[n] - nf * vals[n - 1]) / (nf + 1.0);
        // P'_{n+1} = P'_{n-1} + (2n+1) P_n in x
        ders[n + 1] = ders[n - 1] + (2.0 * nf + 1.0) * vals[n];
    }
    for d in ders.iter_mut().take(nmax + 1) {
        *d *= 2.0;
    }
}

/// Values and derivatives of a 1D hierarchy at one point.
pub fn eval_1d(kind: Kind1d, t: f64, vals: &mut [f64], ders: &mut [f64]) {
    let mut pv = [0.0; 32];
    let mut pd = [0.0; 32];
    match kind {
        Kind1d::L2(p) => {
            if p == 0 {
                return;
            }
            shifted_legendre(p - 1, t, &mut pv, &mut pd);
            vals[..p].copy_from_slice(&pv[..p]);
            ders[..p].copy_from_slice(&pd[..p]);
        }
        Kind1d::H1(p) => {
            vals[0] = 1.0 - t;
            ders[0] = -1.0;
            vals[1] = t;
            ders[1] = 1.0;
            if p >= 2 {
                shifted_legendre(p, t, &mut pv, &mut pd);
                for k in 2..=p {
                    let s = 2.0 * (2.0 * k as f64 - 1.0);
                    vals[k] = (pv[k] - pv[k - 2]) / s;
                    ders[k] = pv[k - 1];
                }
            }
        }
    }
}

/// Row-major table of 1D values (or derivatives) of a hierarchy at a point set.
#[derive(Clone, Debug)]
pub struct Table1d {
    pub n: usize,
    pub npts: usize,
    pub data: Vec<f64>,
}

impl Table1d {
    pub fn at(&self, i: usize, q: usize) -> f64 {
        self.data[i * self.npts + q]
    }
}

pub fn tabulate_1d(kind: Kind1d, pts: &[f64]) -> (Table1d, Table1d) {
    let n = kind.len();
    let np = pts.len();
    let mut v = vec![0.0; n * np];
    let mut d = vec![0.0; n * np];
    let mut bv = [0.0; 32];
    let mut bd = [0.0; 32];
    for (q, &t) in pts.iter().enumerate() {
        eval_1d(kind, t, &mut bv, &mut bd);
        for i in 0..n {
            v[i * np + q] = bv[i];
            d[i * np + q] = bd[i];
        }
    }
    (Table1d { n, npts: np, data: v }, Table1d { n, npts: np, data: d })
}

// ---------------------------------------------------------------------------
// Quadrature

#[derive(Clone, Debug)]
pub struct QuadratureRule {
    pub points: Vec<f64>,
    pub weights: Vec<f64>,
}

impl QuadratureRule {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

fn legendre_pd(n: usize, x: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, x);
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 1..n {
        let kf = k as f64;
        let p2 = ((2.0 * kf + 1.0) * x * p1 - kf * p0) / (kf + 1.0);
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// n-point Gauss-Legendre rule on [0,1].
pub fn gauss_rule(n: usize) -> QuadratureRule {
    assert!(n >= 1, "gauss rule needs at least one point");
    let mut points = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (p, d) = legendre_pd(n, x);
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_pd(n, x);
        let w = 2.0 / ((1.0 - x * x) * d * d);
        points[i] = 0.5 * (1.0 - x);
        points[n - 1 - i] = 0.5 * (1.0 + x);
        weights[i] = 0.5 * w;
        weights[n - 1 - i] = 0.5 * w;
    }
    if n % 2 == 1 {
        points[n / 2] = 0.5;
    }
    QuadratureRule { points, weights }
}

/// Gauss-Lobatto-Legendre nodes on [0,1] (n >= 2 points, endpoints included).
pub fn gauss_lobatto_points(n: usize) -> Vec<f64> {
    assert!(n >= 2);
    let m = n - 1;
    let mut pts = vec![0.0; n];
    pts[n - 1] = 1.0;
    for i in 1..m {
        // interior nodes are the roots of P'_m
        let mut x = -(std::f64::consts::PI * i as f64 / m as f64).cos();
        for _ in 0..100 {
            let (p, d) = legendre_pd(m, x);
            // (1-x^2) P'' = 2x P' - m(m+1) P
            let dd = (2.0 * x * d - (m * (m + 1)) as f64 * p) / (1.0 - x * x);
            let dx = d / dd;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        pts[i] = 0.5 * (1.0 + x);
    }
    pts
}

/// Tensor point index convention: q = (qx * ny + qy) * nz + qz.
pub fn tensor_points(pts: [&[f64]; 3]) -> Vec<[f64; 3]> {
    let mut out = Vec::with_capacity(pts[0].len() * pts[1].len() * pts[2].len());
    for &x in pts[0] {
        for &y in pts[1] {
            for &z in pts[2] {
                out.push([x, y, z]);
            }
        }
    }
    out
}

pub fn tensor_weights(w: [&[f64]; 3]) -> Vec<f64> {
    let mut out = Vec::with_capacity(w[0].len() * w[1].len() * w[2].len());
    for &x in w[0] {
        for &y in w[1] {
            for &z in w[2] {
                out.push(x * y * z);
            }
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Tabulations

/// A quantity tabulation kept in factored 1D form, as required by sum factorization.
#[derive(Clone, Debug)]
pub struct FactorTerm {
    pub offset: usize,
    pub dims: [usize; 3],
    pub comp: usize,
    pub sign: f64,
    pub tables: [Arc<Table1d>; 3],
}

#[derive(Clone, Debug)]
pub struct TensorTabulation {
    pub dim: usize,
    pub ncomp: usize,
    pub npts: [usize; 3],
    pub terms: Vec<FactorTerm>,
}

/// A fully evaluated tabulation: `values[(s * npts + q) * ncomp + c]`.
#[derive(Clone, Debug)]
pub struct FlatTabulation {
    pub dim: usize,
    pub ncomp: usize,
    pub npts: usize,
    pub values: Vec<f64>,
}

impl FlatTabulation {
    pub fn get(&self, s: usize, q: usize, c: usize) -> f64 {
        self.values[(s * self.npts + q) * self.ncomp + c]
    }
}

#[derive(Clone, Debug)]
pub enum Tabulation {
    Tensor(TensorTabulation),
    Flat(FlatTabulation),
}

impl Tabulation {
    pub fn dim(&self) -> usize {
        match self {
            Tabulation::Tensor(t) => t.dim,
            Tabulation::Flat(f) => f.dim,
        }
    }

    pub fn ncomp(&self) -> usize {
        match self {
            Tabulation::Tensor(t) => t.ncomp,
            Tabulation::Flat(f) => f.ncomp,
        }
    }

    pub fn to_flat(&self) -> FlatTabulation {
        match self {
            Tabulation::Tensor(t) => t.flatten(),
            Tabulation::Flat(f) => f.clone(),
        }
    }
}

/// Cache of 1D tables keyed by hierarchy kind, for one set of 1D points per direction.
pub struct TableCache {
    pts: [Vec<f64>; 3],
    entries: Vec<(usize, Kind1d, Arc<Table1d>, Arc<Table1d>)>,
}

impl TableCache {
    pub fn new(pts: [&[f64]; 3]) -> Self {
        Self { pts: [pts[0].to_vec(), pts[1].to_vec(), pts[2].to_vec()], entries: Vec::new() }
    }

    pub fn get(&mut self, dir: usize, kind: Kind1d, der: bool) -> Arc<Table1d> {
        for (d, k, v, dv) in &self.entries {
            if *d == dir && *k == kind {
                return if der { dv.clone() } else { v.clone() };
            }
        }
        let (v, dv) = tabulate_1d(kind, &self.pts[dir]);
        let (v, dv) = (Arc::new(v), Arc::new(dv));
        self.entries.push((dir, kind, v.clone(), dv.clone()));
        if der {
            dv
        } else {
            v
        }
    }

    pub fn npts(&self) -> [usize; 3] {
        [self.pts[0].len(), self.pts[1].len(), self.pts[2].len()]
    }
}

pub fn tensor_tabulation(family: &Family, op: Op, cache: &mut TableCache) -> Result<TensorTabulation> {
    let terms = family
        .terms(op)?
        .into_iter()
        .map(|t| {
            let b = &family.blocks[t.block];
            let tables = [
                cache.get(0, b.kinds[0], t.der[0]),
                cache.get(1, b.kinds[1], t.der[1]),
                cache.get(2, b.kinds[2], t.der[2]),
            ];
            FactorTerm { offset: b.offset, dims: b.dims, comp: t.comp, sign: t.sign, tables }
        })
        .collect();
    Ok(TensorTabulation { dim: family.dim, ncomp: family.ncomp(op), npts: cache.npts(), terms })
}

impl TensorTabulation {
    pub fn flatten(&self) -> FlatTabulation {
        let [nx, ny, nz] = self.npts;
        let np = nx * ny * nz;
        let nc = self.ncomp;
        let mut values = vec![0.0; self.dim * np * nc];
        for t in &self.terms {
            let [dx, dy, dz] = t.dims;
            for i in 0..dx {
                for j in 0..dy {
                    for k in 0..dz {
                        let s = t.offset + (i * dy + j) * dz + k;
                        for qx in 0..nx {
                            let a = t.sign * t.tables[0].at(i, qx);
                            for qy in 0..ny {
                                let ab = a * t.tables[1].at(j, qy);
                                for qz in 0..nz {
                                    let q = (qx * ny + qy) * nz + qz;
                                    values[(s * np + q) * nc + t.comp] += ab * t.tables[2].at(k, qz);
                                }
                            }
                        }
                    }
                }
            }
        }
        FlatTabulation { dim: self.dim, ncomp: nc, npts: np, values }
    }
}

/// Values and first derivatives (grad/curl/div) of a family at arbitrary points.
#[derive(Clone, Debug)]
pub struct ShapeTable {
    pub values: FlatTabulation,
    pub derivatives: Option<FlatTabulation>,
}

pub fn shape_eval(space: Space, orders: OrderTriple, points: &[[f64; 3]]) -> ShapeTable {
    let fam = Family::new(space, orders);
    let values = eval_points(&fam, Op::Value, points).expect("value operator always exists");
    let derivatives = match space {
        Space::W | Space::Q | Space::V => Some(eval_points(&fam, Op::Derivative, points).expect("derivative exists")),
        _ => None,
    };
    ShapeTable { values, derivatives }
}

/// Evaluate a family quantity at arbitrary reference points.
pub fn eval_points(fam: &Family, op: Op, points: &[[f64; 3]]) -> Result<FlatTabulation> {
    let terms = fam.terms(op)?;
    let np = points.len();
    let nc = fam.ncomp(op);
    let mut values = vec![0.0; fam.dim * np * nc];
    let mut v = [[0.0; 32]; 3];
    let mut d = [[0.0; 32]; 3];
    for (q, x) in points.iter().enumerate() {
        for t in &terms {
            let b = &fam.blocks[t.block];
            for dir in 0..3 {
                eval_1d(b.kinds[dir], x[dir], &mut v[dir], &mut d[dir]);
            }
            let f = |dir: usize, i: usize| if t.der[dir] { d[dir][i] } else { v[dir][i] };
            for i in 0..b.dims[0] {
                let a = t.sign * f(0, i);
                for j in 0..b.dims[1] {
                    let ab = a * f(1, j);
                    for k in 0..b.dims[2] {
                        let s = b.offset + (i * b.dims[1] + j) * b.dims[2] + k;
                        values[(s * np + q) * nc + t.comp] += ab * f(2, k);
                    }
                }
            }
        }
    }
    Ok(FlatTabulation { dim: fam.dim, ncomp: nc, npts: np, values })
}

// ---------------------------------------------------------------------------
// Faces, edges and orientation

/// Local face id = 2 * normal_axis + side.
pub fn face_axes(face: usize) -> (usize, usize, [usize; 2]) {
    let d = face / 2;
    let s = face % 2;
    let t = match d {
        0 => [1, 2],
        1 => [0, 2],
        _ => [0, 1],
    };
    (d, s, t)
}

/// Outward reference normal of a local face.
pub fn face_normal(face: usize) -> [f64; 3] {
    let (d, s, _) = face_axes(face);
    let mut n = [0.0; 3];
    n[d] = if s == 1 { 1.0 } else { -1.0 };
    n
}

/// Local vertex id = i + 2j + 4k for corner (i, j, k).
pub fn vertex_coords(v: usize) -> [usize; 3] {
    [v & 1, (v >> 1) & 1, (v >> 2) & 1]
}

pub fn vertex_id(c: [usize; 3]) -> usize {
    c[0] + 2 * c[1] + 4 * c[2]
}

/// Local edge id = 4 * axis + a + 2 b, where (a, b) are the coordinates in the two
/// remaining axes in increasing order. Returns (axis, start vertex, end vertex).
pub fn edge_vertices(edge: usize) -> (usize, usize, usize) {
    let c = edge / 4;
    let a = edge & 1;
    let b = (edge >> 1) & 1;
    let others = match c {
        0 => [1, 2],
        1 => [0, 2],
        _ => [0, 1],
    };
    let mut x = [0; 3];
    x[others[0]] = a;
    x[others[1]] = b;
    let v0 = vertex_id(x);
    x[c] = 1;
    (c, v0, vertex_id(x))
}

/// Local face corners indexed by (u, v) in {0,1}^2 as u + 2v.
pub fn face_vertices(face: usize) -> [usize; 4] {
    let (d, s, t) = face_axes(face);
    let mut out = [0; 4];
    for v in 0..2 {
        for u in 0..2 {
            let mut x = [0; 3];
            x[d] = s;
            x[t[0]] = u;
            x[t[1]] = v;
            out[u + 2 * v] = vertex_id(x);
        }
    }
    out
}

/// Relative orientation of a local face parameterization with respect to the
/// canonical one. The canonical origin is the corner with the smallest global
/// vertex id and the canonical U axis points to its smaller-id neighbour.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
pub struct FaceOrientation {
    pub swap: bool,
    pub flip_u: bool,
    pub flip_v: bool,
}

impl FaceOrientation {
    pub fn from_code(code: u8) -> Self {
        Self { swap: code & 4 != 0, flip_u: code & 2 != 0, flip_v: code & 1 != 0 }
    }

    pub fn code(self) -> u8 {
        (self.swap as u8) << 2 | (self.flip_u as u8) << 1 | self.flip_v as u8
    }

    /// Compute from the global ids of the four local face corners (u + 2v order).
    pub fn from_corner_ids(g: [usize; 4]) -> Self {
        let mut m = 0;
        for i in 1..4 {
            if g[i] < g[m] {
                m = i;
            }
        }
        let (u0, v0) = (m & 1, m >> 1);
        let nu = g[(1 - u0) + 2 * v0];
        let nv = g[u0 + 2 * (1 - v0)];
        Self { swap: nv < nu, flip_u: u0 == 1, flip_v: v0 == 1 }
    }

    /// Map canonical face coordinates (U, V) to local face coordinates (u, v).
    pub fn canonical_to_local(self, uv: [f64; 2]) -> [f64; 2] {
        let (a, b) = if self.swap { (uv[1], uv[0]) } else { (uv[0], uv[1]) };
        [if self.flip_u { 1.0 - a } else { a }, if self.flip_v { 1.0 - b } else { b }]
    }

    /// Map local face coordinates to canonical ones.
    pub fn local_to_canonical(self, uv: [f64; 2]) -> [f64; 2] {
        let a = if self.flip_u { 1.0 - uv[0] } else { uv[0] };
        let b = if self.flip_v { 1.0 - uv[1] } else { uv[1] };
        if self.swap {
            [b, a]
        } else {
            [a, b]
        }
    }
}

/// Shared entity of a Q shape function (isotropic order p).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum QEntity {
    /// Tangential edge function: local edge id, L2 index along the edge.
    Edge { edge: usize, index: usize },
    /// Face function with local tangential component `comp` (0 = u, 1 = v),
    /// L2 index `l2` along that component and bubble index `bubble` (>= 2) across it.
    Face { face: usize, comp: usize, l2: usize, bubble: usize },
    Interior,
}

pub fn classify_q(fam: &Family, shape: usize) -> QEntity {
    debug_assert_eq!(fam.space, Space::Q);
    let (bi, idx) = fam.locate(shape);
    let c = fam.blocks[bi].comp;
    let others = match c {
        0 => [1, 2],
        1 => [0, 2],
        _ => [0, 1],
    };
    let (ha, hb) = (idx[others[0]], idx[others[1]]);
    match (ha < 2, hb < 2) {
        (true, true) => QEntity::Edge { edge: 4 * c + ha + 2 * hb, index: idx[c] },
        (true, false) => {
            let face = 2 * others[0] + ha;
            // tangential axes of this face are {c, others[1]} in increasing order
            let comp = if c < others[1] { 0 } else { 1 };
            QEntity::Face { face, comp, l2: idx[c], bubble: hb }
        }
        (false, true) => {
            let face = 2 * others[1] + hb;
            let comp = if c < others[0] { 0 } else { 1 };
            QEntity::Face { face, comp, l2: idx[c], bubble: ha }
        }
        (false, false) => QEntity::Interior,
    }
}

/// Number of face dofs of an isotropic Q_p trace: 2 p (p - 1).
pub fn q_face_dofs(p: usize) -> usize {
    2 * p * (p - 1)
}

/// Canonical face-dof index and sign of a local face function under an orientation.
/// Canonical U functions psi_i(U) L_k(V) are numbered i (p-1) + (k-2); canonical V
/// functions L_k(U) psi_j(V) follow at offset p (p-1) as (k-2) p + j.
pub fn q_face_canonical(p: usize, o: FaceOrientation, comp: usize, l2: usize, bubble: usize) -> (usize, f64) {
    let su: f64 = if o.flip_u { -1.0 } else { 1.0 };
    let sv: f64 = if o.flip_v { -1.0 } else { 1.0 };
    let pw = |s: f64, n: usize| if n % 2 == 0 { 1.0 } else { s };
    let nu = p * (p - 1);
    let uidx = |i: usize, k: usize| i * (p - 1) + (k - 2);
    let vidx = |k: usize, j: usize| nu + (k - 2) * p + j;
    match (o.swap, comp) {
        (false, 0) => (uidx(l2, bubble), pw(su, l2 + 1) * pw(sv, bubble)),
        (false, _) => (vidx(bubble, l2), pw(su, bubble) * pw(sv, l2 + 1)),
        (true, 0) => (vidx(bubble, l2), pw(sv, bubble) * pw(su, l2 + 1)),
        (true, _) => (uidx(l2, bubble), pw(sv, l2 + 1) * pw(su, bubble)),
    }
}

/// Sign of a local edge function when the edge runs against its global direction.
pub fn q_edge_sign(index: usize, reversed: bool) -> f64 {
    if reversed && index % 2 == 0 {
        -1.0
    } else {
        1.0
    }
}

/// Trace tabulation on a face in the canonical frame.
#[derive(Clone, Debug)]
pub struct FaceTraceTab {
    /// (canonical dof key, local volume shape, sign) with canonical keys ordered.
    pub dofs: Vec<(TraceKey, usize, f64)>,
    /// For a tangential trace: per dof and point, the (U, V) components; for a
    /// normal trace: the outward normal component in slot 0.
    pub values: Vec<[f64; 2]>,
    pub npts: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum TraceKey {
    /// Canonical face edge (0..4 as in the canonical frame: U-edges V=0, V=1 then V-edges U=0, U=1) and index
    Edge { edge: usize, index: usize },
    Face { index: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TraceSpace {
    Tangential,
    Normal,
}

/// Tabulate the trace of Q (tangential) or V (normal) on local face `face`,
/// at canonical face points, reindexed and signed under `orient`.
pub fn face_trace(
    space: TraceSpace,
    orders: OrderTriple,
    face: usize,
    orient: FaceOrientation,
    points: &[[f64; 2]],
) -> Result<FaceTraceTab> {
    if face >= 6 {
        return Err(Error::Usage(format!("face id {face} out of range")));
    }
    let (d, s, t) = face_axes(face);
    let vol_pts: Vec<[f64; 3]> = points
        .iter()
        .map(|uv| {
            let l = orient.canonical_to_local(*uv);
            let mut x = [0.0; 3];
            x[d] = s as f64;
            x[t[0]] = l[0];
            x[t[1]] = l[1];
            x
        })
        .collect();
    let np = points.len();
    // canonical frame directions expressed in local (u, v)
    let su = if orient.flip_u { -1.0 } else { 1.0 };
    let sv = if orient.flip_v { -1.0 } else { 1.0 };
    let (eu, ev): ([f64; 2], [f64; 2]) =
        if orient.swap { ([0.0, sv], [su, 0.0]) } else { ([su, 0.0], [0.0, sv]) };
    match space {
        TraceSpace::Tangential => {
            if !orders.is_isotropic() {
                return Err(Error::Usage("trace reindexing requires isotropic orders".into()));
            }
            let p = orders.p;
            let fam = Family::new(Space::Q, orders);
            let tab = eval_points(&fam, Op::Value, &vol_pts)?;
            let fv = face_vertices(face);
            let mut dofs = Vec::new();
            for sh in 0..fam.dim {
                match classify_q(&fam, sh) {
                    QEntity::Face { face: f, comp, l2, bubble } if f == face => {
                        let (idx, sign) = q_face_canonical(p, orient, comp, l2, bubble);
                        dofs.push((TraceKey::Face { index: idx }, sh, sign));
                    }
                    QEntity::Edge { edge, index } => {
                        let (_, a, b) = edge_vertices(edge);
                        let (Some(ia), Some(ib)) = (fv.iter().position(|&x| x == a), fv.iter().position(|&x| x == b))
                        else {
                            continue;
                        };
                        // canonical corner coordinates of the edge ends
                        let ca = corner_canonical(orient, ia);
                        let cb = corner_canonical(orient, ib);
                        let (cedge, reversed) = canonical_face_edge(ca, cb);
                        dofs.push((TraceKey::Edge { edge: cedge, index }, sh, q_edge_sign(index, reversed)));
                    }
                    _ => {}
                }
            }
            dofs.sort_by_key(|x| x.0);
            let mut values = Vec::with_capacity(dofs.len() * np);
            for (_, sh, sign) in &dofs {
                for q in 0..np {
                    let tu = tab.get(*sh, q, t[0]);
                    let tv = tab.get(*sh, q, t[1]);
                    values.push([
                        sign * (tu * eu[0] + tv * eu[1]),
                        sign * (tu * ev[0] + tv * ev[1]),
                    ]);
                }
            }
            Ok(FaceTraceTab { dofs, values, npts: np })
        }
        TraceSpace::Normal => {
            let fam = Family::new(Space::V, orders);
            let tab = eval_points(&fam, Op::Value, &vol_pts)?;
            let nsign = if s == 1 { 1.0 } else { -1.0 };
            let mut dofs = Vec::new();
            for sh in 0..fam.dim {
                let (bi, idx) = fam.locate(sh);
                let b = &fam.blocks[bi];
                if b.comp == d && idx[d] == s {
                    // psi_i(u) psi_j(v): canonical reindexing under flips and swap
                    let (i, j) = (idx[t[0]], idx[t[1]]);
                    let mut sign = 1.0;
                    if orient.flip_u && i % 2 == 1 {
                        sign = -sign;
                    }
                    if orient.flip_v && j % 2 == 1 {
                        sign = -sign;
                    }
                    let (ci, cj) = if orient.swap { (j, i) } else { (i, j) };
                    let nt = b.dims[t[0]].max(b.dims[t[1]]);
                    dofs.push((TraceKey::Face { index: ci * nt + cj }, sh, sign));
                }
            }
            dofs.sort_by_key(|x| x.0);
            let mut values = Vec::with_capacity(dofs.len() * np);
            for (_, sh, sign) in &dofs {
                for q in 0..np {
                    values.push([sign * nsign * tab.get(*sh, q, d), 0.0]);
                }
            }
            Ok(FaceTraceTab { dofs, values, npts: np })
        }
    }
}

fn corner_canonical(o: FaceOrientation, local_corner: usize) -> [usize; 2] {
    let uv = [(local_corner & 1) as f64, (local_corner >> 1) as f64];
    let c = o.local_to_canonical(uv);
    [c[0] as usize, c[1] as usize]
}

/// Canonical face edge numbering: 0: V=0, 1: V=1 (along U); 2: U=0, 3: U=1 (along V).
fn canonical_face_edge(a: [usize; 2], b: [usize; 2]) -> (usize, bool) {
    if a[1] == b[1] {
        (a[1], a[0] > b[0])
    } else {
        (2 + a[0], a[1] > b[1])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_basic() {
        let r = gauss_rule(1);
        assert!((r.points[0] - 0.5).abs() < 1e-15 && (r.weights[0] - 1.0).abs() < 1e-15);
        for n in 1..20 {
            let r = gauss_rule(n);
            let s: f64 = r.weights.iter().sum();
            assert!((s - 1.0).abs() < 1e-14, "n={n}");
            for deg in 0..2 * n {
                let v: f64 = r.points.iter().zip(&r.weights).map(|(x, w)| w * x.powi(deg as i32)).sum();
                assert!((v - 1.0 / (deg as f64 + 1.0)).abs() < 1e-14, "n={n} deg={deg}");
            }
        }
        let r = gauss_rule(3);
        let v: f64 = r.points.iter().zip(&r.weights).map(|(x, w)| w * x.powi(5)).sum();
        assert!((v - 1.0 / 6.0).abs() <= 1e-15);
    }

    #[test]
    fn lobatto_nodes() {
        let p = gauss_lobatto_points(3);
        assert!((p[1] - 0.5).abs() < 1e-15);
        let p = gauss_lobatto_points(4);
        assert!((p[1] - 0.5 * (1.0 - 1.0 / 5f64.sqrt())).abs() < 1e-14);
    }

    #[test]
    fn integrated_legendre_derivatives() {
        let h = 1e-6;
        for &t in &[0.1, 0.37, 0.8] {
            let (mut v, mut d) = ([0.0; 32], [0.0; 32]);
            let (mut vp, mut dp) = ([0.0; 32], [0.0; 32]);
            let (mut vm, mut dm) = ([0.0; 32], [0.0; 32]);
            eval_1d(Kind1d::H1(7), t, &mut v, &mut d);
            eval_1d(Kind1d::H1(7), t + h, &mut vp, &mut dp);
            eval_1d(Kind1d::H1(7), t - h, &mut vm, &mut dm);
            for k in 0..8 {
                assert!(((vp[k] - vm[k]) / (2.0 * h) - d[k]).abs() < 1e-7);
            }
            // bubbles vanish at both ends
            let (mut v0, mut d0) = ([0.0; 32], [0.0; 32]);
            eval_1d(Kind1d::H1(7), 1.0, &mut v0, &mut d0);
            for k in 2..8 {
                assert!(v0[k].abs() < 1e-15);
            }
        }
    }

    #[test]
    fn dimensions() {
        for p in 1..=6 {
            for q in 1..=6 {
                for r in 1..=6 {
                    let o = OrderTriple::new(p, q, r);
                    assert_eq!(Family::new(Space::W, o).dim, (p + 1) * (q + 1) * (r + 1));
                    assert_eq!(
                        Family::new(Space::Q, o).dim,
                        p * (q + 1) * (r + 1) + (p + 1) * q * (r + 1) + (p + 1) * (q + 1) * r
                    );
                    assert_eq!(Family::new(Space::V, o).dim, (p + 1) * q * r + p * (q + 1) * r + p * q * (r + 1));
                    assert_eq!(Family::new(Space::Y, o).dim, p * q * r);
                }
            }
        }
        assert_eq!(Family::new(Space::Q, OrderTriple::iso(2)).dim, 54);
    }

    #[test]
    fn trilinear_vertex_pattern() {
        let pts: Vec<[f64; 3]> = (0..8).map(|v| vertex_coords(v).map(|c| c as f64)).collect();
        let t = shape_eval(Space::W, OrderTriple::iso(1), &pts);
        let fam = Family::new(Space::W, OrderTriple::iso(1));
        for s in 0..8 {
            let (_, idx) = fam.locate(s);
            let own = vertex_id(idx);
            for q in 0..8 {
                let expect = if q == own { 1.0 } else { 0.0 };
                assert!((t.values.get(s, q, 0) - expect).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn unknown_space_tag() {
        assert!(matches!(Space::from_tag("Z"), Err(Error::Usage(_))));
    }

    #[test]
    fn orientation_roundtrip() {
        for code in 0..8 {
            let o = FaceOrientation::from_code(code);
            assert_eq!(o.code(), code);
            let uv = [0.3, 0.8];
            let back = o.local_to_canonical(o.canonical_to_local(uv));
            assert!((back[0] - uv[0]).abs() < 1e-15 && (back[1] - uv[1]).abs() < 1e-15);
        }
    }

    #[test]
    fn opposite_face_shapes_have_zero_trace() {
        let o = OrderTriple::iso(3);
        let fam = Family::new(Space::Q, o);
        let pts: Vec<[f64; 2]> = vec![[0.2, 0.7], [0.5, 0.5], [0.9, 0.1]];
        let tr = face_trace(TraceSpace::Tangential, o, 1, FaceOrientation::default(), &pts).unwrap();
        let listed: Vec<usize> = tr.dofs.iter().map(|d| d.1).collect();
        let vol_pts: Vec<[f64; 3]> = pts.iter().map(|uv| [1.0, uv[0], uv[1]]).collect();
        let tab = eval_points(&fam, Op::Value, &vol_pts).unwrap();
        for sh in 0..fam.dim {
            if listed.contains(&sh) {
                continue;
            }
            for q in 0..pts.len() {
                assert!(tab.get(sh, q, 1).abs() < 1e-14 && tab.get(sh, q, 2).abs() < 1e-14);
            }
        }
        // every shape supported only on face 0 vanishes tangentially on face 1
        for sh in 0..fam.dim {
            if let QEntity::Face { face: 0, .. } = classify_q(&fam, sh) {
                assert!(!listed.contains(&sh));
            }
        }
    }
}
