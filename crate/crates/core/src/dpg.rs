//! Practical DPG machinery: broken enriched test spaces, element Gram and
//! stiffness integration, local normal equations, static condensation onto the
//! shared unknowns, global sparse Hermitian solve and the residual indicator.

use std::collections::HashMap;
use std::sync::{Arc, OnceLock};

use faer::linalg::solvers::Solve;
use faer::linalg::triangular_solve::{solve_lower_triangular_in_place, solve_upper_triangular_in_place};
use faer::dyn_stack::{MemBuffer, MemStack};
use faer::perm::PermRef;
use faer::sparse::linalg::cholesky::{factorize_symbolic_cholesky, SymbolicCholesky, SymmetricOrdering};
use faer::sparse::{SparseColMatRef, SymbolicSparseColMatRef};
use faer::{c64, Mat, Par, Side};
use rayon::prelude::*;

use crate::basis::{
    self, classify_q, eval_points, face_axes, face_normal, gauss_rule, q_edge_sign, tensor_tabulation, tensor_weights,
    Family, Kind1d, Op, OrderTriple, QEntity, Space, TableCache, Tabulation,
};
use crate::dofmap::{face_edges, EntityNumbering};
use crate::error::{Error, Result};
use crate::mesh::{mat_t_vec, mat_vec, norm, BoundaryTag, GeoPoint, HexMesh};
use crate::sumfact::{add_sumfact, hermitian_defect, CoefficientTensor};

const ZERO: c64 = c64 { re: 0.0, im: 0.0 };

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum VarKind {
    /// Broken L2 unknown, eliminated element by element.
    Field,
    /// Skeleton unknown living on faces (traces of Q_p).
    Trace,
    /// H(curl)-conforming Q_p unknown; interior shapes are eliminated.
    Conforming,
}

#[derive(Clone, Debug)]
pub struct TrialVar {
    pub name: String,
    pub space: Space,
    pub order: OrderTriple,
    pub kind: VarKind,
}

#[derive(Clone, Debug)]
pub struct TestVar {
    pub name: String,
    pub space: Space,
    pub order: OrderTriple,
}

#[derive(Clone, Debug)]
pub struct Layout {
    pub test: Vec<TestVar>,
    pub trial: Vec<TrialVar>,
}

/// Geometry and quadrature of one element, on a tensor grid.
pub struct ElementContext<'a> {
    pub mesh: &'a HexMesh,
    pub element: usize,
    pub npts: [usize; 3],
    pub points: &'a [f64],
    pub weights: &'a [f64],
    pub geo: &'a [GeoPoint],
}

/// Geometry of one element face at tensor face points.
pub struct FaceContext {
    pub face: usize,
    pub boundary: Option<BoundaryTag>,
    pub ref_points: Vec<[f64; 3]>,
    pub weights: Vec<f64>,
    pub geo: Vec<GeoPoint>,
    /// Outward physical unit normal.
    pub normal: Vec<[f64; 3]>,
    /// Physical area element per unit reference area.
    pub area: Vec<f64>,
    pub ref_normal: [f64; 3],
}

/// Volume integrand conj(test_op(v))^T C trial_op(u).
pub struct VolumeTerm {
    pub test: usize,
    pub test_op: Op,
    pub trial: usize,
    pub trial_op: Op,
    pub coeff: CoefficientTensor,
}

/// Face integrand conj(v)^T C u on reference-frame values; `trial` is a trial variable.
pub struct FaceTerm {
    pub test: usize,
    pub trial: usize,
    pub coeff: Vec<[[c64; 3]; 3]>,
}

/// Load integrand conj(test_op(v)) . f at volume points.
pub struct LoadTerm {
    pub test: usize,
    pub op: Op,
    pub values: Vec<[c64; 3]>,
}

pub trait BrokenFormulation: Sync {
    fn layout(&self) -> &Layout;
    /// Test-norm integrand; both indices refer to test variables.
    fn gram_terms(&self, ctx: &ElementContext) -> Result<Vec<VolumeTerm>>;
    fn volume_terms(&self, ctx: &ElementContext) -> Result<Vec<VolumeTerm>>;
    fn face_terms(&self, ctx: &ElementContext, face: &FaceContext) -> Result<Vec<FaceTerm>>;
    fn load_terms(&self, _ctx: &ElementContext) -> Result<Vec<LoadTerm>> {
        Ok(Vec::new())
    }
    fn has_load(&self) -> bool {
        false
    }
    /// Whether a trace variable has unknowns on faces with this boundary tag.
    fn trace_active(&self, _var: usize, _boundary: Option<BoundaryTag>) -> bool {
        true
    }
    /// Physics part of the key under which element operators may be shared
    /// between elements with identical geometry; `None` disables sharing.
    fn operator_key(&self, _mesh: &HexMesh, _e: usize) -> Option<u64> {
        None
    }
    /// 1D quadrature points per direction.
    fn quadrature_points(&self) -> usize;
}

pub type TraceData = Arc<dyn Fn([f64; 3]) -> [c64; 3] + Send + Sync>;

#[derive(Clone)]
pub enum Constraint {
    Zero,
    /// Tangential trace of the given field.
    Data(TraceData),
}

#[derive(Clone, Default)]
pub struct BoundaryConditions {
    pub rules: Vec<(usize, BoundaryTag, Constraint)>,
}

impl BoundaryConditions {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, var: usize, tag: BoundaryTag, c: Constraint) -> Self {
        self.rules.push((var, tag, c));
        self
    }
}

/// Column layout of one element's trial vector: local columns first, then shared.
#[derive(Clone, Debug)]
pub struct ElementLayout {
    pub local: Vec<(usize, usize)>,
    pub shared: Vec<(usize, usize, usize, f64)>,
    pub col_of: Vec<Vec<Option<usize>>>,
}

impl ElementLayout {
    pub fn ncols(&self) -> usize {
        self.local.len() + self.shared.len()
    }
}

#[derive(Clone, Debug)]
pub struct FieldSolution {
    /// Local (eliminated) coefficients per element, in element layout order.
    pub local: Vec<Vec<c64>>,
    /// All shared coefficients including constrained ones.
    pub shared: Vec<c64>,
    pub num_elements: usize,
}

#[derive(Clone, Debug, Default)]
pub struct SolveStats {
    pub num_free: usize,
    pub num_shared: usize,
    pub num_local: usize,
    /// Largest relative Hermitian defect of the condensed element matrices.
    pub hermitian_defect: f64,
    /// Relative residual of the sparse solve.
    pub sparse_residual: f64,
    pub operators_computed: usize,
}

struct ElementOperator {
    x: Mat<c64>,
}

struct ElementResult {
    op: Arc<ElementOperator>,
    s: Option<Arc<Mat<c64>>>,
    y: Vec<c64>,
    g: Vec<c64>,
}

pub struct Discretization {
    pub mesh: Arc<HexMesh>,
    pub layout: Layout,
    pub numbering: Vec<Option<EntityNumbering>>,
    pub num_shared: usize,
    pub constrained: Vec<Option<c64>>,
    pub free_index: Vec<Option<usize>>,
    pub num_free: usize,
    layouts: Vec<ElementLayout>,
    pattern: OnceLock<(Vec<usize>, Vec<usize>)>,
    symbolic: OnceLock<std::result::Result<SymbolicCholesky<usize>, String>>,
    pub quad_points: usize,
}

/// Raw element matrices before any reduction.
pub struct ElementMatrices {
    pub gram: Mat<c64>,
    pub b: Mat<c64>,
    pub load: Mat<c64>,
}

fn families(layout: &Layout) -> (Vec<Family>, Vec<Family>) {
    (
        layout.test.iter().map(|t| Family::new(t.space, t.order)).collect(),
        layout.trial.iter().map(|t| Family::new(t.space, t.order)).collect(),
    )
}

pub fn face_context(mesh: &HexMesh, e: usize, face: usize, pts: &basis::QuadratureRule) -> FaceContext {
    let el = &mesh.elements[e];
    let boundary = mesh.faces[el.faces[face]].boundary;
    let n = pts.len();
    let mut ref_points = Vec::with_capacity(n * n);
    let mut weights = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            ref_points.push(HexMesh::face_point(face, [pts.points[i], pts.points[j]]));
            weights.push(pts.weights[i] * pts.weights[j]);
        }
    }
    let geo = mesh.geometry_at(e, &ref_points);
    let nr = face_normal(face);
    let mut normal = Vec::with_capacity(geo.len());
    let mut area = Vec::with_capacity(geo.len());
    for g in &geo {
        let m = mat_t_vec(&g.inv, nr);
        let l = norm(m);
        normal.push([m[0] / l, m[1] / l, m[2] / l]);
        area.push(g.det.abs() * l);
    }
    FaceContext { face, boundary, ref_points, weights, geo, normal, area, ref_normal: nr }
}

impl Discretization {
    pub fn new(mesh: Arc<HexMesh>, form: &dyn BrokenFormulation, bcs: &BoundaryConditions) -> Result<Self> {
        let layout = form.layout().clone();
        let mut numbering = Vec::new();
        let mut offset = 0;
        for (v, tv) in layout.trial.iter().enumerate() {
            match tv.kind {
                VarKind::Field => numbering.push(None),
                VarKind::Trace | VarKind::Conforming => {
                    if tv.space != Space::Q || !tv.order.is_isotropic() {
                        return Err(Error::Usage(format!("shared variable `{}` must be isotropic Q_p", tv.name)));
                    }
                    let conforming = tv.kind == VarKind::Conforming;
                    let num = EntityNumbering::new(&mesh, tv.order.p, offset, |b| {
                        conforming || b.is_none() || form.trace_active(v, b)
                    });
                    offset += num.ndofs;
                    numbering.push(Some(num));
                }
            }
        }
        let (_, trial_fams) = families(&layout);
        let layouts = (0..mesh.num_elements())
            .map(|e| element_layout(&mesh, &layout, &trial_fams, &numbering, e))
            .collect::<Vec<_>>();
        // every shared dof must be touched by an element
        let mut touched = vec![false; offset];
        for l in &layouts {
            for &(_, _, g, _) in &l.shared {
                touched[g] = true;
            }
        }
        if let Some(g) = touched.iter().position(|t| !t) {
            return Err(Error::Topology(format!("shared dof {g} is not touched by any element")));
        }
        let quad_points = form.quadrature_points();
        let mut disc = Discretization {
            mesh,
            layout,
            numbering,
            num_shared: offset,
            constrained: vec![None; offset],
            free_index: vec![None; offset],
            num_free: 0,
            layouts,
            pattern: OnceLock::new(),
            symbolic: OnceLock::new(),
            quad_points,
        };
        disc.apply_constraints(bcs)?;
        Ok(disc)
    }

    pub fn element_layout(&self, e: usize) -> &ElementLayout {
        &self.layouts[e]
    }

    fn apply_constraints(&mut self, bcs: &BoundaryConditions) -> Result<()> {
        let mesh = self.mesh.clone();
        let (_, fams) = families(&self.layout);
        // zero constraints take precedence on shared edges
        let mut order: Vec<&(usize, BoundaryTag, Constraint)> = bcs.rules.iter().collect();
        order.sort_by_key(|r| !matches!(r.2, Constraint::Zero));
        for (var, tag, c) in order {
            let Some(num) = self.numbering.get(*var).and_then(|n| n.as_ref()) else {
                return Err(Error::Config(format!("boundary condition on non-shared variable {var}")));
            };
            for f in mesh.faces.iter().filter(|f| f.boundary == Some(*tag)) {
                let (e, lf) = f.sides[0];
                project_face(&mesh, &fams[*var], num, e, lf, c, &mut self.constrained);
            }
        }
        let mut k = 0;
        for (g, c) in self.constrained.iter().enumerate() {
            if c.is_none() {
                self.free_index[g] = Some(k);
                k += 1;
            }
        }
        self.num_free = k;
        Ok(())
    }

    /// Coefficients of trial variable `var` on element `e`, indexed by family shape.
    pub fn var_coeffs(&self, sol: &FieldSolution, e: usize, var: usize) -> Vec<c64> {
        let l = &self.layouts[e];
        let nl = l.local.len();
        l.col_of[var]
            .iter()
            .map(|c| match c {
                None => ZERO,
                Some(c) if *c < nl => sol.local[e][*c],
                Some(c) => {
                    let (_, _, g, s) = l.shared[*c - nl];
                    sol.shared[g] * s
                }
            })
            .collect()
    }

    /// Full element trial vector in layout column order.
    pub fn element_vector(&self, sol: &FieldSolution, e: usize) -> Vec<c64> {
        let l = &self.layouts[e];
        let mut u = sol.local[e].clone();
        u.extend(l.shared.iter().map(|&(_, _, g, s)| sol.shared[g] * s));
        u
    }

    pub fn rule(&self) -> basis::QuadratureRule {
        gauss_rule(self.quad_points)
    }

    /// Raw B, G and l for one element.
    pub fn element_matrices(&self, form: &dyn BrokenFormulation, e: usize, with_load: bool) -> Result<ElementMatrices> {
        let mesh = &*self.mesh;
        let rule = self.rule();
        let n = rule.len();
        let w = tensor_weights([&rule.weights, &rule.weights, &rule.weights]);
        let geo = mesh.geometry_tensor(e, [&rule.points, &rule.points, &rule.points]);
        let ctx = ElementContext { mesh, element: e, npts: [n; 3], points: &rule.points, weights: &w, geo: &geo };
        let (test_fams, trial_fams) = families(&self.layout);
        let mut test_off = vec![0];
        for f in &test_fams {
            test_off.push(test_off.last().unwrap() + f.dim);
        }
        let nt = *test_off.last().unwrap();
        let lay = &self.layouts[e];
        let ncol = lay.ncols();
        let mut cache = TableCache::new([&rule.points, &rule.points, &rule.points]);
        let mut tabs: HashMap<(bool, usize, Op), Tabulation> = HashMap::new();
        let mut tab = |is_test: bool, v: usize, op: Op, cache: &mut TableCache| -> Result<Tabulation> {
            if let Some(t) = tabs.get(&(is_test, v, op)) {
                return Ok(t.clone());
            }
            let fam = if is_test { &test_fams[v] } else { &trial_fams[v] };
            let t = Tabulation::Tensor(tensor_tabulation(fam, op, cache)?);
            tabs.insert((is_test, v, op), t.clone());
            Ok(t)
        };
        // Gram
        let mut gram = Mat::<c64>::zeros(nt, nt);
        for t in form.gram_terms(&ctx)? {
            let a = tab(true, t.test, t.test_op, &mut cache)?;
            let b = tab(true, t.trial, t.trial_op, &mut cache)?;
            let (ra, rb) = (test_off[t.test], test_off[t.trial]);
            let sub = gram.as_mut().submatrix_mut(ra, rb, a.dim(), b.dim());
            add_sumfact(&a, &b, &t.coeff, &w, 1.0, sub)?;
        }
        // volume part of B, integrated against the full trial family then scattered
        let mut bmat = Mat::<c64>::zeros(nt, ncol);
        for t in form.volume_terms(&ctx)? {
            let a = tab(true, t.test, t.test_op, &mut cache)?;
            let b = tab(false, t.trial, t.trial_op, &mut cache)?;
            let mut m = Mat::<c64>::zeros(a.dim(), b.dim());
            add_sumfact(&a, &b, &t.coeff, &w, 1.0, m.as_mut())?;
            for (s, col) in lay.col_of[t.trial].iter().enumerate() {
                if let Some(c) = col {
                    for i in 0..a.dim() {
                        bmat[(test_off[t.test] + i, *c)] += m[(i, s)];
                    }
                }
            }
        }
        // faces
        for f in 0..6 {
            let fctx = face_context(mesh, e, f, &rule);
            let terms = form.face_terms(&ctx, &fctx)?;
            if terms.is_empty() {
                continue;
            }
            let (d, s, _) = face_axes(f);
            let mut vals: HashMap<(bool, usize), (Vec<usize>, basis::FlatTabulation)> = HashMap::new();
            for t in &terms {
                for (is_test, v) in [(true, t.test), (false, t.trial)] {
                    if vals.contains_key(&(is_test, v)) {
                        continue;
                    }
                    let fam = if is_test { &test_fams[v] } else { &trial_fams[v] };
                    let shapes = face_shapes(fam, d, s);
                    let tabv = eval_points(fam, Op::Value, &fctx.ref_points)?;
                    vals.insert((is_test, v), (shapes, tabv));
                }
            }
            let np = fctx.ref_points.len();
            for t in &terms {
                let (ts, ttab) = &vals[&(true, t.test)];
                let (us, utab) = &vals[&(false, t.trial)];
                for &j in us {
                    let Some(c) = lay.col_of[t.trial][j] else { continue };
                    // C u_j weighted, per point
                    let cu: Vec<[c64; 3]> = (0..np)
                        .map(|q| {
                            let u = [utab.get(j, q, 0), utab.get(j, q, 1), utab.get(j, q, 2)];
                            let m = &t.coeff[q];
                            let wq = fctx.weights[q];
                            [0, 1, 2].map(|r| (m[r][0] * u[0] + m[r][1] * u[1] + m[r][2] * u[2]) * wq)
                        })
                        .collect();
                    for &i in ts {
                        let mut acc = ZERO;
                        for (q, v) in cu.iter().enumerate() {
                            acc += v[0] * ttab.get(i, q, 0) + v[1] * ttab.get(i, q, 1) + v[2] * ttab.get(i, q, 2);
                        }
                        bmat[(test_off[t.test] + i, c)] += acc;
                    }
                }
            }
        }
        let mut load = Mat::<c64>::zeros(nt, 1);
        if with_load && form.has_load() {
            for t in form.load_terms(&ctx)? {
                let a = tab(true, t.test, t.op, &mut cache)?;
                let flat = a.to_flat();
                for i in 0..flat.dim {
                    let mut acc = ZERO;
                    for q in 0..flat.npts {
                        let f = &t.values[q];
                        let mut v = ZERO;
                        for c in 0..flat.ncomp {
                            v += f[c] * flat.get(i, q, c);
                        }
                        acc += v * w[q];
                    }
                    load[(test_off[t.test] + i, 0)] += acc;
                }
            }
        }
        hermitize(&mut gram);
        Ok(ElementMatrices { gram, b: bmat, load })
    }

    fn operator_group_key(&self, form: &dyn BrokenFormulation, e: usize) -> Option<(u64, usize, u64, [u8; 6])> {
        let k = form.operator_key(&self.mesh, e)?;
        let el = &self.mesh.elements[e];
        let layer = &self.mesh.layers[el.layer];
        let hz = layer.z[1] - layer.z[0];
        let hz_key = (hz / self.mesh.length * 1e12).round() as u64;
        let sig = el.faces.map(|f| match self.mesh.faces[f].boundary {
            None => 0u8,
            Some(BoundaryTag::ZMin) => 1,
            Some(BoundaryTag::ZMax) => 2,
            Some(BoundaryTag::Lateral) => 3,
        });
        Some((k, el.cell, hz_key, sig))
    }

    /// Elements sharing identical B and G, first member first.
    fn operator_groups(&self, form: &dyn BrokenFormulation) -> Vec<Vec<usize>> {
        let mut groups: Vec<Vec<usize>> = Vec::new();
        let mut key_map = HashMap::new();
        for e in 0..self.mesh.num_elements() {
            match self.operator_group_key(form, e) {
                Some(k) => {
                    let id = *key_map.entry(k).or_insert_with(|| {
                        groups.push(Vec::new());
                        groups.len() - 1
                    });
                    groups[id].push(e);
                }
                None => groups.push(vec![e]),
            }
        }
        groups
    }

    fn sparse_pattern(&self) -> &(Vec<usize>, Vec<usize>) {
        self.pattern.get_or_init(|| {
            let mut cols: Vec<Vec<usize>> = vec![Vec::new(); self.num_free];
            for l in &self.layouts {
                let fr: Vec<usize> = l.shared.iter().filter_map(|&(_, _, g, _)| self.free_index[g]).collect();
                for &i in &fr {
                    for &j in &fr {
                        if i >= j {
                            cols[j].push(i);
                        }
                    }
                }
            }
            let mut col_ptr = vec![0usize; self.num_free + 1];
            let mut rows = Vec::new();
            for (j, c) in cols.iter_mut().enumerate() {
                c.sort_unstable();
                c.dedup();
                rows.extend_from_slice(c);
                col_ptr[j + 1] = rows.len();
                *c = Vec::new();
            }
            (col_ptr, rows)
        })
    }

    /// Fill-reducing order of the free dofs: nested dissection over element
    /// centroids, separators (dofs touching both halves) numbered last.
    pub fn dissection_order(&self) -> Vec<usize> {
        let ne = self.mesh.num_elements();
        let cent: Vec<[f64; 3]> = (0..ne).map(|e| self.mesh.geometry(e, [0.5; 3]).x).collect();
        let mut dof_elems: Vec<Vec<u32>> = vec![Vec::new(); self.num_free];
        for (e, l) in self.layouts.iter().enumerate() {
            for &(_, _, g, _) in &l.shared {
                if let Some(i) = self.free_index[g] {
                    dof_elems[i].push(e as u32);
                }
            }
        }
        let mut side = vec![0u8; ne];
        let mut order = Vec::with_capacity(self.num_free);
        let mut elems: Vec<usize> = (0..ne).collect();
        dissect(&mut elems, (0..self.num_free).collect(), &cent, &dof_elems, &mut side, &mut order);
        order
    }

    fn symbolic_factor(&self) -> Result<&SymbolicCholesky<usize>> {
        let r = self.symbolic.get_or_init(|| {
            let (col_ptr, rows) = self.sparse_pattern();
            let sym = SymbolicSparseColMatRef::new_checked(self.num_free, self.num_free, col_ptr, None, rows);
            let fwd = self.dissection_order();
            let mut inv = vec![0usize; fwd.len()];
            for (i, &p) in fwd.iter().enumerate() {
                inv[p] = i;
            }
            let perm = PermRef::new_checked(&fwd, &inv, fwd.len());
            factorize_symbolic_cholesky(sym, Side::Lower, SymmetricOrdering::Custom(perm), Default::default())
                .map_err(|e| format!("{e:?}"))
        });
        r.as_ref().map_err(|e| Error::Solver(format!("symbolic factorization failed: {e}")))
    }

    /// Number of stored entries of the sparse Cholesky factor.
    pub fn factor_entries(&self) -> Result<usize> {
        Ok(self.symbolic_factor()?.len_val())
    }

    /// Assemble, condense, solve and recover all unknowns.
    pub fn solve(&self, form: &dyn BrokenFormulation) -> Result<(FieldSolution, SolveStats)> {
        let ne = self.mesh.num_elements();
        let groups = self.operator_groups(form);
        let results: Vec<Result<(Vec<(usize, ElementResult)>, f64)>> =
            groups.par_iter().map(|g| self.process_group(form, g)).collect();
        let mut per_element: Vec<Option<ElementResult>> = (0..ne).map(|_| None).collect();
        let mut herm: f64 = 0.0;
        for r in results {
            let (items, h) = r?;
            herm = herm.max(h);
            for (e, item) in items {
                per_element[e] = Some(item);
            }
        }
        let per_element: Vec<ElementResult> = per_element.into_iter().map(|x| x.expect("every element processed")).collect();
        // global assembly
        let (col_ptr, rows) = self.sparse_pattern();
        let mut vals = vec![ZERO; rows.len()];
        let mut rhs = vec![ZERO; self.num_free];
        for (e, r) in per_element.iter().enumerate() {
            let l = &self.layouts[e];
            let s = r.s.as_ref().expect("condensed matrix present");
            let ids: Vec<(Option<usize>, usize, f64)> =
                l.shared.iter().map(|&(_, _, g, sg)| (self.free_index[g], g, sg)).collect();
            for (a, &(fa, _, sa)) in ids.iter().enumerate() {
                let Some(i) = fa else { continue };
                rhs[i] += r.g[a] * sa;
                for (b, &(fb, gb, sb)) in ids.iter().enumerate() {
                    let v = s[(a, b)] * (sa * sb);
                    match fb {
                        Some(j) if i >= j => {
                            let range = &rows[col_ptr[j]..col_ptr[j + 1]];
                            let k = range.binary_search(&i).expect("pattern entry");
                            vals[col_ptr[j] + k] += v;
                        }
                        Some(_) => {}
                        None => {
                            let xc = self.constrained[gb].expect("constrained value");
                            rhs[i] -= v * xc;
                        }
                    }
                }
            }
        }
        let mut per_element = per_element;
        for r in per_element.iter_mut() {
            r.s = None;
        }
        let x = if self.num_free > 0 {
            let sym = SymbolicSparseColMatRef::new_checked(self.num_free, self.num_free, col_ptr, None, rows);
            let a = SparseColMatRef::new(sym, &vals);
            let symbolic = self.symbolic_factor()?;
            let mut lval = Vec::new();
            lval.try_reserve_exact(symbolic.len_val()).map_err(|_| {
                Error::Solver(format!("out of memory for a factor with {} entries", symbolic.len_val()))
            })?;
            lval.resize(symbolic.len_val(), ZERO);
            let par = Par::Seq;
            let mut mem = MemBuffer::new(symbolic.factorize_numeric_llt_scratch::<c64>(par, Default::default()));
            let llt = symbolic
                .factorize_numeric_llt(
                    &mut lval,
                    a,
                    Side::Lower,
                    Default::default(),
                    par,
                    MemStack::new(&mut mem),
                    Default::default(),
                )
                .map_err(|err| {
                    Error::Solver(format!("sparse Cholesky failed on {} unknowns: {err:?}", self.num_free))
                })?;
            let mut b = Mat::<c64>::from_fn(self.num_free, 1, |i, _| rhs[i]);
            let mut mem = MemBuffer::new(symbolic.solve_in_place_scratch::<c64>(1, par));
            llt.solve_in_place_with_conj(faer::Conj::No, b.as_mut(), par, MemStack::new(&mut mem));
            let xv: Vec<c64> = (0..self.num_free).map(|i| b[(i, 0)]).collect();
            let res = hermitian_lower_residual(col_ptr, rows, &vals, &xv, &rhs);
            (xv, res)
        } else {
            (Vec::new(), 0.0)
        };
        let (xv, sparse_residual) = x;
        let shared: Vec<c64> = (0..self.num_shared)
            .map(|g| match self.free_index[g] {
                Some(i) => xv[i],
                None => self.constrained[g].unwrap_or(ZERO),
            })
            .collect();
        let mut computed = std::collections::HashSet::new();
        let local: Vec<Vec<c64>> = per_element
            .iter()
            .enumerate()
            .map(|(e, r)| {
                computed.insert(Arc::as_ptr(&r.op) as usize);
                let l = &self.layouts[e];
                let ub: Vec<c64> = l.shared.iter().map(|&(_, _, g, s)| shared[g] * s).collect();
                let mut ua = r.y.clone();
                let xm = &r.op.x;
                for (a, u) in ua.iter_mut().enumerate() {
                    let mut acc = ZERO;
                    for (b, v) in ub.iter().enumerate() {
                        acc += xm[(a, b)] * v;
                    }
                    *u -= acc;
                }
                ua
            })
            .collect();
        let stats = SolveStats {
            num_free: self.num_free,
            num_shared: self.num_shared,
            num_local: local.iter().map(|v| v.len()).sum(),
            hermitian_defect: herm,
            sparse_residual,
            operators_computed: computed.len(),
        };
        Ok((FieldSolution { local, shared, num_elements: ne }, stats))
    }

    fn process_group(&self, form: &dyn BrokenFormulation, group: &[usize]) -> Result<(Vec<(usize, ElementResult)>, f64)> {
        let e0 = group[0];
        let lay = &self.layouts[e0];
        let na = lay.local.len();
        let mats = self.element_matrices(form, e0, true)?;
        let nt = mats.gram.nrows();
        let llt = mats.gram.llt(Side::Lower).map_err(|err| Error::Stability {
            element: e0,
            detail: format!("Gram Cholesky failed ({err:?}); test norm or geometry is broken"),
        })?;
        let lmat = llt.L().to_owned();
        let mut wm = mats.b.clone();
        solve_lower_triangular_in_place(lmat.as_ref(), wm.as_mut(), Par::Seq);
        let nb = wm.ncols() - na;
        let wa = wm.as_ref().submatrix(0, 0, nt, na);
        let wb = wm.as_ref().submatrix(0, na, nt, nb);
        // QR of the local block keeps the condensation at the conditioning of W, not W^H W
        let (q, r) = if na > 0 {
            let qr = wa.qr();
            (qr.compute_thin_Q(), qr.thin_R().to_owned())
        } else {
            (Mat::<c64>::zeros(nt, 0), Mat::<c64>::zeros(0, 0))
        };
        let rmax = (0..na).map(|i| r[(i, i)].norm()).fold(0.0, f64::max);
        if let Some(i) = (0..na).find(|&i| !(r[(i, i)].norm() > 1e-14 * rmax)) {
            return Err(Error::Stability {
                element: e0,
                detail: format!("local field block is rank deficient at column {i}"),
            });
        }
        let qw = q.adjoint() * wb;
        let pb = wb - &q * &qw;
        let mut x = qw;
        solve_upper_triangular_in_place(r.as_ref(), x.as_mut(), Par::Seq);
        let mut s = pb.adjoint() * &pb;
        let scale = s.norm_max().max(f64::MIN_POSITIVE);
        let herm = hermitian_defect(s.as_ref()) / scale;
        hermitize(&mut s);
        let op = Arc::new(ElementOperator { x });
        let s = Arc::new(s);
        // per-element loads: y = R^-1 Q^H L^-1 l and g = Pb^H L^-1 l
        let has_load = form.has_load();
        let mut qp = Mat::<c64>::zeros(nt, na + nb);
        qp.as_mut().submatrix_mut(0, 0, nt, na).copy_from(&q);
        qp.as_mut().submatrix_mut(0, na, nt, nb).copy_from(&pb);
        let z = if has_load && group.len() > 1 {
            let mut z = qp.clone();
            solve_upper_triangular_in_place(lmat.as_ref().adjoint(), z.as_mut(), Par::Seq);
            Some(z)
        } else {
            None
        };
        let mut out = Vec::with_capacity(group.len());
        for &e in group {
            let (y, g) = if has_load {
                let f: Mat<c64> = if e == e0 {
                    let mut wl = mats.load.clone();
                    solve_lower_triangular_in_place(lmat.as_ref(), wl.as_mut(), Par::Seq);
                    qp.adjoint() * &wl
                } else {
                    let l = self.element_load(form, e, nt)?;
                    z.as_ref().expect("load operator").adjoint() * &l
                };
                let mut y = f.as_ref().submatrix(0, 0, na, 1).to_owned();
                solve_upper_triangular_in_place(r.as_ref(), y.as_mut(), Par::Seq);
                ((0..na).map(|i| y[(i, 0)]).collect(), (0..nb).map(|i| f[(na + i, 0)]).collect())
            } else {
                (vec![ZERO; na], vec![ZERO; nb])
            };
            out.push((e, ElementResult { op: op.clone(), s: Some(s.clone()), y, g }));
        }
        Ok((out, herm))
    }

    fn element_load(&self, form: &dyn BrokenFormulation, e: usize, nt: usize) -> Result<Mat<c64>> {
        let mesh = &*self.mesh;
        let rule = self.rule();
        let n = rule.len();
        let w = tensor_weights([&rule.weights, &rule.weights, &rule.weights]);
        let geo = mesh.geometry_tensor(e, [&rule.points, &rule.points, &rule.points]);
        let ctx = ElementContext { mesh, element: e, npts: [n; 3], points: &rule.points, weights: &w, geo: &geo };
        let (test_fams, _) = families(&self.layout);
        let mut off = vec![0];
        for f in &test_fams {
            off.push(off.last().unwrap() + f.dim);
        }
        let mut cache = TableCache::new([&rule.points, &rule.points, &rule.points]);
        let mut load = Mat::<c64>::zeros(nt, 1);
        for t in form.load_terms(&ctx)? {
            let flat = tensor_tabulation(&test_fams[t.test], t.op, &mut cache)?.flatten();
            for i in 0..flat.dim {
                let mut acc = ZERO;
                for q in 0..flat.npts {
                    let mut v = ZERO;
                    for c in 0..flat.ncomp {
                        v += t.values[q][c] * flat.get(i, q, c);
                    }
                    acc += v * w[q];
                }
                load[(off[t.test] + i, 0)] += acc;
            }
        }
        Ok(load)
    }

    /// Per-element residual ||l - B u|| in the inverse Gram norm, the global value,
    /// and the least-squares optimality defect B^H G^-1 (l - B u) on free dofs as a normwise
    /// backward error: with W = L^-1 B and w = L^-1 l per element, the defect is divided by
    /// the root sum of squares of |W| (|W| |u| + |w|), |.| the Frobenius norm.
    pub fn residual(&self, form: &dyn BrokenFormulation, sol: &FieldSolution) -> Result<ResidualReport> {
        let ne = self.mesh.num_elements();
        type Part = (usize, f64, f64, Vec<c64>, f64);
        let groups = self.operator_groups(form);
        let chunks: Vec<Result<Vec<Part>>> = groups
            .par_iter()
            .map(|group| {
                let e0 = group[0];
                let m = self.element_matrices(form, e0, true)?;
                let nt = m.gram.nrows();
                let llt = m.gram.llt(Side::Lower).map_err(|err| Error::Stability {
                    element: e0,
                    detail: format!("Gram Cholesky failed ({err:?})"),
                })?;
                let l = llt.L();
                let mut wm = m.b.clone();
                solve_lower_triangular_in_place(l, wm.as_mut(), Par::Seq);
                let w_norm = wm.norm_l2();
                let mut out = Vec::with_capacity(group.len());
                for &e in group {
                    let mut wl = if e == e0 {
                        m.load.clone()
                    } else if form.has_load() {
                        self.element_load(form, e, nt)?
                    } else {
                        Mat::<c64>::zeros(nt, 1)
                    };
                    solve_lower_triangular_in_place(l, wl.as_mut(), Par::Seq);
                    let u = self.element_vector(sol, e);
                    let um = Mat::<c64>::from_fn(u.len(), 1, |i, _| u[i]);
                    let wu = &wm * &um;
                    let r = &wl - &wu;
                    let c = wm.adjoint() * &r;
                    let cv: Vec<c64> = (0..c.nrows()).map(|i| c[(i, 0)]).collect();
                    let scale = w_norm * (w_norm * um.norm_l2() + wl.norm_l2());
                    out.push((e, r.norm_l2(), wl.norm_l2(), cv, scale));
                }
                Ok(out)
            })
            .collect();
        let mut parts: Vec<Option<Part>> = (0..ne).map(|_| None).collect();
        for c in chunks {
            for p in c? {
                let e = p.0;
                parts[e] = Some(p);
            }
        }
        let mut per_element = Vec::with_capacity(ne);
        let mut opt = vec![ZERO; self.num_free];
        let mut local_sq = 0.0;
        let mut load_sq = 0.0;
        let mut scale_sq = 0.0;
        for (e, p) in parts.into_iter().enumerate() {
            let (_, res, ln, cv, sc) = p.expect("every element evaluated");
            per_element.push(res);
            load_sq += ln * ln;
            let l = &self.layouts[e];
            let na = l.local.len();
            local_sq += cv[..na].iter().map(|v| v.norm_sqr()).sum::<f64>();
            scale_sq += sc * sc;
            for (k, &(_, _, g, s)) in l.shared.iter().enumerate() {
                if let Some(i) = self.free_index[g] {
                    opt[i] += cv[na + k] * s;
                }
            }
        }
        let num = (opt.iter().map(|v| v.norm_sqr()).sum::<f64>() + local_sq).sqrt();
        let den = scale_sq.sqrt();
        let global = per_element.iter().map(|r| r * r).sum::<f64>().sqrt();
        Ok(ResidualReport {
            per_element,
            global,
            optimality: if den > 0.0 { num / den } else { num },
            load_norm: load_sq.sqrt(),
        })
    }
}

#[derive(Clone, Debug)]
pub struct ResidualReport {
    pub per_element: Vec<f64>,
    pub global: f64,
    pub optimality: f64,
    pub load_norm: f64,
}

fn dissect(
    elems: &mut [usize],
    dofs: Vec<usize>,
    cent: &[[f64; 3]],
    dof_elems: &[Vec<u32>],
    side: &mut [u8],
    order: &mut Vec<usize>,
) {
    if elems.len() <= 2 || dofs.len() <= 96 {
        order.extend(dofs);
        return;
    }
    // bisect along the axis that yields the smallest separator
    let mid = elems.len() / 2;
    let mut best: Option<(usize, Vec<usize>, Vec<usize>, Vec<usize>, Vec<usize>)> = None;
    for axis in 0..3 {
        let mut sorted = elems.to_vec();
        sorted.sort_by(|&a, &b| cent[a][axis].total_cmp(&cent[b][axis]).then(a.cmp(&b)));
        for (k, &e) in sorted.iter().enumerate() {
            side[e] = if k < mid { 1 } else { 2 };
        }
        let (mut dl, mut dr, mut sep) = (Vec::new(), Vec::new(), Vec::new());
        for &d in &dofs {
            let (mut l, mut r) = (false, false);
            for &e in &dof_elems[d] {
                match side[e as usize] {
                    1 => l = true,
                    _ => r = true,
                }
            }
            match (l, r) {
                (true, true) => sep.push(d),
                (true, false) => dl.push(d),
                _ => dr.push(d),
            }
        }
        if best.as_ref().is_none_or(|b| sep.len() < b.3.len()) {
            best = Some((axis, dl, dr, sep, sorted));
        }
    }
    let (_, dl, dr, sep, sorted) = best.expect("three candidate axes");
    elems.copy_from_slice(&sorted);
    for (k, &e) in elems.iter().enumerate() {
        side[e] = if k < mid { 1 } else { 2 };
    }
    let (left, right) = elems.split_at_mut(mid);
    dissect(left, dl, cent, dof_elems, side, order);
    dissect(right, dr, cent, dof_elems, side, order);
    order.extend(sep);
}

fn hermitize(m: &mut Mat<c64>) {
    let n = m.nrows();
    for j in 0..n {
        m[(j, j)] = c64::new(m[(j, j)].re, 0.0);
        for i in j + 1..n {
            let v = (m[(i, j)] + m[(j, i)].conj()) * 0.5;
            m[(i, j)] = v;
            m[(j, i)] = v.conj();
        }
    }
}

fn hermitian_lower_residual(col_ptr: &[usize], rows: &[usize], vals: &[c64], x: &[c64], b: &[c64]) -> f64 {
    let n = x.len();
    let mut ax = vec![ZERO; n];
    for j in 0..n {
        for k in col_ptr[j]..col_ptr[j + 1] {
            let i = rows[k];
            ax[i] += vals[k] * x[j];
            if i != j {
                ax[j] += vals[k].conj() * x[i];
            }
        }
    }
    let num: f64 = ax.iter().zip(b).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>().sqrt();
    let den: f64 = b.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
    if den > 0.0 {
        num / den
    } else {
        num
    }
}

/// Shapes of a family whose tangential trace on face (d, s) can be nonzero.
pub fn face_shapes(fam: &Family, d: usize, s: usize) -> Vec<usize> {
    let mut out = Vec::new();
    for b in &fam.blocks {
        let tangential = match fam.space {
            Space::Q => b.comp != d,
            _ => true,
        };
        if !tangential {
            continue;
        }
        let vertex_ok = matches!(b.kinds[d], Kind1d::H1(_));
        for l in 0..b.len() {
            let idx = b.split(l);
            if !vertex_ok || idx[d] == s {
                out.push(b.offset + l);
            }
        }
    }
    out
}

fn element_layout(
    mesh: &HexMesh,
    layout: &Layout,
    fams: &[Family],
    numbering: &[Option<EntityNumbering>],
    e: usize,
) -> ElementLayout {
    let mut local = Vec::new();
    let mut shared = Vec::new();
    for (v, tv) in layout.trial.iter().enumerate() {
        let fam = &fams[v];
        for s in 0..fam.dim {
            match tv.kind {
                VarKind::Field => local.push((v, s)),
                VarKind::Conforming | VarKind::Trace => {
                    let num = numbering[v].as_ref().expect("shared numbering");
                    match num.lookup(mesh, fam, e, s) {
                        Some((g, sign)) => shared.push((v, s, g, sign)),
                        None => {
                            if tv.kind == VarKind::Conforming && classify_q(fam, s) == QEntity::Interior {
                                local.push((v, s));
                            }
                        }
                    }
                }
            }
        }
    }
    let mut col_of: Vec<Vec<Option<usize>>> = fams.iter().map(|f| vec![None; f.dim]).collect();
    for (c, &(v, s)) in local.iter().enumerate() {
        col_of[v][s] = Some(c);
    }
    let nl = local.len();
    for (c, &(v, s, _, _)) in shared.iter().enumerate() {
        col_of[v][s] = Some(nl + c);
    }
    ElementLayout { local, shared, col_of }
}

fn solve_real_spd(m: &[f64], n: usize, rhs: &[c64]) -> Vec<c64> {
    let a = Mat::<c64>::from_fn(n, n, |i, j| c64::new(m[i * n + j], 0.0));
    let b = Mat::<c64>::from_fn(n, 1, |i, _| rhs[i]);
    let x = a.llt(Side::Lower).expect("trace mass matrix is SPD").solve(&b);
    (0..n).map(|i| x[(i, 0)]).collect()
}

/// Constrain the shared dofs of variable `fam` on local face `lf` of element `e`:
/// edge dofs by 1D L2 projection of the tangential component, then face dofs by
/// projection of the remaining tangential trace, both in reference coordinates.
fn project_face(
    mesh: &HexMesh,
    fam: &Family,
    num: &EntityNumbering,
    e: usize,
    lf: usize,
    c: &Constraint,
    values: &mut [Option<c64>],
) {
    let p = num.order;
    let el = &mesh.elements[e];
    let rule = gauss_rule(p + 3);
    let (d, s, t) = face_axes(lf);
    for le in face_edges(lf) {
        let Some(start) = num.edge_start[el.edges[le]] else { continue };
        if (0..p).all(|i| values[start + i].is_some()) {
            continue;
        }
        let reversed = el.edge_reversed[le];
        let coeffs: Vec<c64> = match c {
            Constraint::Zero => vec![ZERO; p],
            Constraint::Data(f) => {
                let (axis, v0, _) = basis::edge_vertices(le);
                let x0 = basis::vertex_coords(v0).map(|k| k as f64);
                let mut mass = vec![0.0; p * p];
                let mut rhs = vec![ZERO; p];
                let (mut pv, mut pd) = ([0.0; 32], [0.0; 32]);
                for (&sq, &wq) in rule.points.iter().zip(&rule.weights) {
                    let mut xr = x0;
                    xr[axis] = sq;
                    let g = mesh.geometry(e, xr);
                    let mut dir = [0.0; 3];
                    dir[axis] = 1.0;
                    let tan = mat_vec(&g.jac, dir);
                    let ev = f(g.x);
                    let target = ev[0] * tan[0] + ev[1] * tan[1] + ev[2] * tan[2];
                    basis::eval_1d(Kind1d::L2(p), sq, &mut pv, &mut pd);
                    for i in 0..p {
                        rhs[i] += target * (pv[i] * wq);
                        for j in 0..p {
                            mass[i * p + j] += pv[i] * pv[j] * wq;
                        }
                    }
                }
                solve_real_spd(&mass, p, &rhs)
            }
        };
        for (i, cl) in coeffs.iter().enumerate() {
            let slot = &mut values[start + i];
            if slot.is_none() {
                *slot = Some(*cl * q_edge_sign(i, reversed));
            }
        }
    }
    let Some(fstart) = num.face_start[el.faces[lf]] else { return };
    let nfd = basis::q_face_dofs(p);
    if (0..nfd).all(|i| values[fstart + i].is_some()) {
        return;
    }
    let Constraint::Data(f) = c else {
        for i in 0..nfd {
            values[fstart + i].get_or_insert(ZERO);
        }
        return;
    };
    let mut pts = Vec::new();
    let mut wts = Vec::new();
    for (i, &a) in rule.points.iter().enumerate() {
        for (j, &b) in rule.points.iter().enumerate() {
            pts.push(HexMesh::face_point(lf, [a, b]));
            wts.push(rule.weights[i] * rule.weights[j]);
        }
    }
    let tab = eval_points(fam, Op::Value, &pts).expect("value tabulation");
    let shapes = face_shapes(fam, d, s);
    let mut face_list = Vec::new();
    let mut edge_list = Vec::new();
    for &sh in &shapes {
        match classify_q(fam, sh) {
            QEntity::Face { face, .. } if face == lf => face_list.push(sh),
            QEntity::Edge { .. } => {
                if let Some((g, sg)) = num.lookup(mesh, fam, e, sh) {
                    edge_list.push((sh, values[g].unwrap_or(ZERO) * sg));
                }
            }
            _ => {}
        }
    }
    let nf = face_list.len();
    let mut mass = vec![0.0; nf * nf];
    let mut rhs = vec![ZERO; nf];
    for (q, x) in pts.iter().enumerate() {
        let g = mesh.geometry(e, *x);
        let ev = f(g.x);
        let mut target = [ZERO; 2];
        for (k, &ax) in t.iter().enumerate() {
            let mut dir = [0.0; 3];
            dir[ax] = 1.0;
            let tan = mat_vec(&g.jac, dir);
            target[k] = ev[0] * tan[0] + ev[1] * tan[1] + ev[2] * tan[2];
        }
        for &(sh, cf) in &edge_list {
            for (k, &ax) in t.iter().enumerate() {
                target[k] -= cf * tab.get(sh, q, ax);
            }
        }
        for (i, &si) in face_list.iter().enumerate() {
            let vi = [tab.get(si, q, t[0]), tab.get(si, q, t[1])];
            rhs[i] += (target[0] * vi[0] + target[1] * vi[1]) * wts[q];
            for (j, &sj) in face_list.iter().enumerate() {
                mass[i * nf + j] += (vi[0] * tab.get(sj, q, t[0]) + vi[1] * tab.get(sj, q, t[1])) * wts[q];
            }
        }
    }
    let sol = solve_real_spd(&mass, nf, &rhs);
    for (i, &sh) in face_list.iter().enumerate() {
        let (g, sg) = num.lookup(mesh, fam, e, sh).expect("face dof numbered");
        values[g].get_or_insert(sol[i] * sg);
    }
}
