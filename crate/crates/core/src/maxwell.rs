//! Time-harmonic Maxwell formulations: ultraweak (primary) and primal (box
//! comparison study), materials, exact fields, projections and error norms.
//!
//! Conventions: e^{i omega t} time dependence, mu = 1, eps = n^2, so
//! curl E + i omega H = 0 and curl H - (i omega eps + sigma) E = J.
//! All L2 and H(curl) unknowns use the covariant map E = J^-T E_ref.

use std::sync::Arc;

use faer::{c64, Mat, Side};
use faer::linalg::solvers::Solve;
use serde::{Deserialize, Serialize};

use crate::basis::{eval_points, gauss_rule, tensor_points, tensor_weights, Family, Op, OrderTriple, Space};
use crate::dpg::{
    BoundaryConditions, BrokenFormulation, Constraint, Discretization, ElementContext, FaceContext, FaceTerm,
    FieldSolution, Layout, LoadTerm, TestVar, TraceData, TrialVar, VarKind, VolumeTerm,
};
use crate::error::{Error, Result};
use crate::mesh::{BoundaryTag, GeoPoint, HexMesh, Mat3, Region};
use crate::pml::PmlStretch;
use crate::sumfact::CoefficientTensor;

pub type C3 = [c64; 3];
pub type CMat3 = [[c64; 3]; 3];

const ZERO: c64 = c64 { re: 0.0, im: 0.0 };
const ONE: c64 = c64 { re: 1.0, im: 0.0 };
const I: c64 = c64 { re: 0.0, im: 1.0 };

/// Trial variable indices of the ultraweak layout.
pub const E: usize = 0;
pub const H: usize = 1;
pub const E_HAT: usize = 2;
pub const H_HAT: usize = 3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Material {
    pub n_core: f64,
    pub n_cladding: f64,
    #[serde(default = "unit")]
    pub n_box: f64,
}

fn unit() -> f64 {
    1.0
}

impl Material {
    pub fn uniform(n: f64) -> Self {
        Material { n_core: n, n_cladding: n, n_box: n }
    }

    /// Step-index fiber from cladding index and numerical aperture.
    pub fn from_aperture(n_cladding: f64, na: f64) -> Self {
        Material { n_core: (n_cladding * n_cladding + na * na).sqrt(), n_cladding, n_box: 1.0 }
    }

    pub fn index(&self, r: Region) -> f64 {
        match r {
            Region::Core => self.n_core,
            Region::Cladding => self.n_cladding,
            Region::Box => self.n_box,
        }
    }

    pub fn numerical_aperture(&self) -> f64 {
        (self.n_core * self.n_core - self.n_cladding * self.n_cladding).max(0.0).sqrt()
    }

    pub fn v_number(&self, omega: f64, r_core: f64) -> f64 {
        omega * r_core * self.numerical_aperture()
    }

    pub fn validate_fiber(&self) -> Result<()> {
        if !(self.n_core > self.n_cladding && self.n_cladding > 0.0) {
            return Err(Error::Config(format!(
                "n_core must exceed n_cladding > 0 (got {} and {})",
                self.n_core, self.n_cladding
            )));
        }
        Ok(())
    }
}

/// Photon-flux factors (signal, pump): 1 and -omega_p / omega_s.
pub fn upsilon(omega_s: f64, omega_p: f64) -> [f64; 2] {
    [1.0, -omega_p / omega_s]
}

/// Non-dimensional angular frequency offset of a shift in Hz for reference omega0 (rad/s).
pub fn frequency_offset(shift_hz: f64, omega0: f64) -> f64 {
    2.0 * std::f64::consts::PI * shift_hz / omega0
}

pub fn cross_c(a: C3, b: C3) -> C3 {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

pub fn conj3(a: C3) -> C3 {
    a.map(|v| v.conj())
}

pub fn norm_sqr3(a: C3) -> f64 {
    a.iter().map(|v| v.norm_sqr()).sum()
}

fn sub3(a: C3, b: C3) -> C3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

/// J^-T v for complex v.
pub fn covariant(g: &GeoPoint, v: C3) -> C3 {
    let m = &g.inv;
    [0, 1, 2].map(|i| v[0] * m[0][i] + v[1] * m[1][i] + v[2] * m[2][i])
}

/// J^-1 v, the pull-back of a physical vector for a covariant test function.
pub fn pull_covariant(g: &GeoPoint, v: C3) -> C3 {
    let m = &g.inv;
    [0, 1, 2].map(|i| v[0] * m[i][0] + v[1] * m[i][1] + v[2] * m[i][2])
}

/// J v / det J for a reference curl.
pub fn contravariant(g: &GeoPoint, v: C3) -> C3 {
    let m = &g.jac;
    let d = g.det;
    [0, 1, 2].map(|i| (v[0] * m[i][0] + v[1] * m[i][1] + v[2] * m[i][2]) / d)
}

/// det J^-1 diag(d) J^-T.
fn mass_tensor(g: &GeoPoint, d: C3) -> CMat3 {
    let m = &g.inv;
    let mut out = [[ZERO; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            let mut acc = ZERO;
            for k in 0..3 {
                acc += d[k] * (m[i][k] * m[j][k]);
            }
            out[i][j] = acc * g.det;
        }
    }
    out
}

/// J^T J / det J.
fn curl_tensor(g: &GeoPoint) -> CMat3 {
    let j = &g.jac;
    let mut out = [[ZERO; 3]; 3];
    for a in 0..3 {
        for b in 0..3 {
            let s: f64 = (0..3).map(|k| j[k][a] * j[k][b]).sum();
            out[a][b] = c64::new(s / g.det, 0.0);
        }
    }
    out
}

fn real3(m: &Mat3, s: f64) -> CMat3 {
    m.map(|r| r.map(|v| c64::new(v * s, 0.0)))
}

fn transpose_real(m: &Mat3) -> Mat3 {
    [[m[0][0], m[1][0], m[2][0]], [m[0][1], m[1][1], m[2][1]], [m[0][2], m[1][2], m[2][2]]]
}

fn cross_matrix(n: [f64; 3]) -> CMat3 {
    let c = |v: f64| c64::new(v, 0.0);
    [[ZERO, c(-n[2]), c(n[1])], [c(n[2]), ZERO, c(-n[0])], [c(-n[1]), c(n[0]), ZERO]]
}

/// J^-1 (I - n n^T) J^-T scaled by the area element: maps reference tangential
/// components to the physical tangential inner product on a face.
fn tangential_tensor(g: &GeoPoint, n: [f64; 3], area: f64, s: c64) -> CMat3 {
    let m = &g.inv;
    let mut p = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            p[i][j] = f64::from(u8::from(i == j)) - n[i] * n[j];
        }
    }
    let mut out = [[ZERO; 3]; 3];
    for a in 0..3 {
        for b in 0..3 {
            let mut acc = 0.0;
            for i in 0..3 {
                for j in 0..3 {
                    acc += m[a][i] * p[i][j] * m[b][j];
                }
            }
            out[a][b] = s * (acc * area);
        }
    }
    out
}

fn tensor_of(npts: [usize; 3], f: impl Fn(usize) -> CMat3) -> CoefficientTensor {
    let vals: Vec<CMat3> = (0..npts[0] * npts[1] * npts[2]).map(f).collect();
    CoefficientTensor::from_fn(npts, 3, 3, |q, a, b| vals[q][a][b])
}

fn identity_tensor(npts: [usize; 3]) -> CoefficientTensor {
    CoefficientTensor::from_fn(npts, 3, 3, |_, a, b| if a == b { ONE } else { ZERO })
}

/// One component of an adjoint operator: sum over (test var, op, P) of P op(v).
type AdjointPart = (usize, Op, Vec<CMat3>);

/// Gram terms of sum_c |sum_k P_k op_k(v)|^2 det J.
fn gram_from_parts(npts: [usize; 3], geo: &[GeoPoint], comps: &[Vec<AdjointPart>]) -> Vec<VolumeTerm> {
    let mut out: Vec<VolumeTerm> = Vec::new();
    for comp in comps {
        for (vk, ok, pk) in comp {
            for (vl, ol, pl) in comp {
                let coeff = tensor_of(npts, |q| {
                    let mut m = [[ZERO; 3]; 3];
                    for a in 0..3 {
                        for b in 0..3 {
                            let mut acc = ZERO;
                            for r in 0..3 {
                                acc += pk[q][r][a].conj() * pl[q][r][b];
                            }
                            m[a][b] = acc * geo[q].det;
                        }
                    }
                    m
                });
                if let Some(t) = out
                    .iter_mut()
                    .find(|t| t.test == *vk && t.test_op == *ok && t.trial == *vl && t.trial_op == *ol)
                {
                    for (d, s) in t.coeff.data.iter_mut().zip(&coeff.data) {
                        *d += s;
                    }
                    for (d, s) in t.coeff.mask.iter_mut().zip(&coeff.mask) {
                        *d |= *s;
                    }
                } else {
                    out.push(VolumeTerm { test: *vk, test_op: *ok, trial: *vl, trial_op: *ol, coeff });
                }
            }
        }
    }
    out
}

/// Closed-form field with its curls, used for manufactured loads, boundary data and errors.
pub trait ExactField: Send + Sync {
    fn e(&self, x: [f64; 3]) -> C3;
    fn h(&self, x: [f64; 3]) -> C3;
    fn curl_e(&self, x: [f64; 3]) -> C3;
    fn curl_h(&self, x: [f64; 3]) -> C3;
}

/// E = sin(wx) sin(wy) sin(wz) e_x and H = (i/omega) curl E.
#[derive(Clone, Debug)]
pub struct SineField {
    pub omega: f64,
}

impl ExactField for SineField {
    fn e(&self, x: [f64; 3]) -> C3 {
        let w = self.omega;
        let v = (w * x[0]).sin() * (w * x[1]).sin() * (w * x[2]).sin();
        [c64::new(v, 0.0), ZERO, ZERO]
    }
    fn curl_e(&self, x: [f64; 3]) -> C3 {
        let w = self.omega;
        let (sx, sy, sz) = ((w * x[0]).sin(), (w * x[1]).sin(), (w * x[2]).sin());
        let (cy, cz) = ((w * x[1]).cos(), (w * x[2]).cos());
        [ZERO, c64::new(w * sx * sy * cz, 0.0), c64::new(-w * sx * cy * sz, 0.0)]
    }
    fn h(&self, x: [f64; 3]) -> C3 {
        self.curl_e(x).map(|v| v * I / self.omega)
    }
    fn curl_h(&self, x: [f64; 3]) -> C3 {
        let w = self.omega;
        let (sx, sy, sz) = ((w * x[0]).sin(), (w * x[1]).sin(), (w * x[2]).sin());
        let (cx, cy, cz) = ((w * x[0]).cos(), (w * x[1]).cos(), (w * x[2]).cos());
        [2.0 * sx * sy * sz, cx * cy * sz, cx * sy * cz].map(|v| I * v)
    }
}

/// Constant E, zero H.
#[derive(Clone, Debug)]
pub struct ConstantField {
    pub value: C3,
}

impl ExactField for ConstantField {
    fn e(&self, _: [f64; 3]) -> C3 {
        self.value
    }
    fn h(&self, _: [f64; 3]) -> C3 {
        [ZERO; 3]
    }
    fn curl_e(&self, _: [f64; 3]) -> C3 {
        [ZERO; 3]
    }
    fn curl_h(&self, _: [f64; 3]) -> C3 {
        [ZERO; 3]
    }
}

/// TE10 mode of the unit-width PEC guide, E = A sin(pi x) e^{-i beta z} e_y,
/// in a medium with eps = 1 and uniform conductivity sigma.
#[derive(Clone, Debug)]
pub struct Te10 {
    pub omega: f64,
    pub amplitude: f64,
    pub sigma: f64,
}

impl Te10 {
    pub fn new(omega: f64) -> Self {
        Te10 { omega, amplitude: 1.0, sigma: 0.0 }
    }

    /// Complex propagation constant with Re > 0.
    pub fn beta(&self) -> c64 {
        let pi = std::f64::consts::PI;
        let b2 = c64::new(self.omega * self.omega - pi * pi, self.omega * -self.sigma);
        let b = b2.sqrt();
        if b.re < 0.0 {
            -b
        } else {
            b
        }
    }

    /// Impedance constant gamma with E + gamma n x H = 0 on an outflow face.
    pub fn gamma(&self) -> c64 {
        c64::new(self.omega, 0.0) / self.beta()
    }

    /// Growth rate of |E| along z.
    pub fn growth(&self) -> f64 {
        self.beta().im
    }

    /// Time-averaged power through a cross-section at z.
    pub fn power(&self, z: f64) -> f64 {
        let b = self.beta();
        let amp = (2.0 * b.im * z).exp();
        0.5 * self.amplitude * self.amplitude * b.re / self.omega * amp
    }

    fn phase(&self, z: f64) -> c64 {
        (-I * self.beta() * z).exp() * self.amplitude
    }
}

impl ExactField for Te10 {
    fn e(&self, x: [f64; 3]) -> C3 {
        let s = (std::f64::consts::PI * x[0]).sin();
        [ZERO, self.phase(x[2]) * s, ZERO]
    }
    fn curl_e(&self, x: [f64; 3]) -> C3 {
        let pi = std::f64::consts::PI;
        let (s, c) = ((pi * x[0]).sin(), (pi * x[0]).cos());
        let p = self.phase(x[2]);
        [I * self.beta() * p * s, ZERO, p * (pi * c)]
    }
    fn h(&self, x: [f64; 3]) -> C3 {
        self.curl_e(x).map(|v| v * I / self.omega)
    }
    fn curl_h(&self, x: [f64; 3]) -> C3 {
        // curl H = (i omega + sigma) E for the mode
        let a = c64::new(self.sigma, self.omega);
        self.e(x).map(|v| v * a)
    }
}

/// Gaussian launch profile, linearly polarized.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Excitation {
    pub face: BoundaryTag,
    /// 1/e field radius.
    pub width: f64,
    pub amplitude: f64,
    /// Cartesian component carrying the field (0 = x).
    pub polarization: usize,
}

impl Excitation {
    pub fn validate(&self) -> Result<()> {
        if !(self.amplitude > 0.0 && self.width > 0.0) || self.polarization > 1 {
            return Err(Error::Config(format!(
                "excitation needs amplitude > 0, width > 0 and a transverse polarization (got {self:?})"
            )));
        }
        if self.face == BoundaryTag::Lateral {
            return Err(Error::Config("excitation face must be z_min or z_max".into()));
        }
        Ok(())
    }

    pub fn data(&self) -> TraceData {
        let ex = self.clone();
        Arc::new(move |x: [f64; 3]| {
            let r2 = x[0] * x[0] + x[1] * x[1];
            let v = ex.amplitude * (-r2 / (ex.width * ex.width)).exp();
            let mut out = [ZERO; 3];
            out[ex.polarization] = c64::new(v, 0.0);
            out
        })
    }
}

/// Marcuse's fit of the LP01 1/e field radius: w/a = 0.65 + 1.619 V^-1.5 + 2.879 V^-6.
pub fn marcuse_width(v: f64, r_core: f64) -> f64 {
    r_core * (0.65 + 1.619 * v.powf(-1.5) + 2.879 * v.powi(-6))
}

/// Real gain conductivity per element at the tensor points of the operator rule.
#[derive(Clone, Debug)]
pub struct GainField {
    pub points_1d: usize,
    pub values: Vec<Vec<f64>>,
}

impl GainField {
    pub fn zeros(mesh: &HexMesh, points_1d: usize) -> Self {
        GainField { points_1d, values: vec![vec![0.0; points_1d.pow(3)]; mesh.num_elements()] }
    }

    pub fn is_zero_on(&self, e: usize) -> bool {
        self.values[e].iter().all(|v| *v == 0.0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Orders {
    pub p: usize,
    pub delta_p: usize,
    /// Extra 1D quadrature points beyond the test order.
    pub quad_extra: usize,
}

impl Orders {
    pub fn new(p: usize, delta_p: usize) -> Self {
        Orders { p, delta_p, quad_extra: 2 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=8).contains(&self.p) || !(1..=3).contains(&self.delta_p) {
            return Err(Error::Config(format!("need 1 <= p <= 8 and 1 <= delta_p <= 3 (got {self:?})")));
        }
        Ok(())
    }

    pub fn quad_points(&self) -> usize {
        self.p + self.delta_p + self.quad_extra
    }
}

/// Ultraweak formulation with graph test norm alpha |v|^2 + |A* v|^2.
#[derive(Clone)]
pub struct Ultraweak {
    layout: Layout,
    pub omega: f64,
    pub material: Material,
    pub alpha: f64,
    pub stretches: Vec<PmlStretch>,
    pub conductivity: f64,
    pub gain: Option<Arc<GainField>>,
    pub source: Option<Arc<dyn ExactField>>,
    pub impedance: Option<(BoundaryTag, c64)>,
    quad: usize,
}

impl Ultraweak {
    pub fn new(omega: f64, material: Material, orders: &Orders) -> Self {
        let p = OrderTriple::iso(orders.p);
        let t = p.enriched(orders.delta_p);
        let tv = |name: &str| TestVar { name: name.into(), space: Space::Q, order: t };
        let tr = |name: &str, space, kind| TrialVar { name: name.into(), space, order: p, kind };
        Ultraweak {
            layout: Layout {
                test: vec![tv("R"), tv("S")],
                trial: vec![
                    tr("E", Space::VecY, VarKind::Field),
                    tr("H", Space::VecY, VarKind::Field),
                    tr("E_hat", Space::Q, VarKind::Trace),
                    tr("H_hat", Space::Q, VarKind::Trace),
                ],
            },
            omega,
            material,
            alpha: 1.0,
            stretches: Vec::new(),
            conductivity: 0.0,
            gain: None,
            source: None,
            impedance: None,
            quad: orders.quad_points(),
        }
    }

    pub fn with_stretch(mut self, s: PmlStretch) -> Self {
        self.stretches.push(s);
        self
    }

    pub fn with_gain(mut self, g: Arc<GainField>) -> Result<Self> {
        if g.points_1d != self.quad {
            return Err(Error::Usage(format!(
                "gain field has {} points per direction, operator rule has {}",
                g.points_1d, self.quad
            )));
        }
        if self.impedance.is_some() {
            return Err(Error::Config("impedance closure cannot be combined with a gain field".into()));
        }
        self.gain = Some(g);
        Ok(self)
    }

    pub fn with_source(mut self, f: Arc<dyn ExactField>) -> Self {
        self.source = Some(f);
        self
    }

    pub fn with_impedance(mut self, tag: BoundaryTag, gamma: c64) -> Result<Self> {
        if self.gain.is_some() {
            return Err(Error::Config("impedance closure cannot be combined with a gain field".into()));
        }
        self.impedance = Some((tag, gamma));
        Ok(self)
    }

    fn stretch_for(&self, mesh: &HexMesh, e: usize) -> Option<&PmlStretch> {
        let zone = mesh.elements[e].tag.pml?;
        self.stretches.iter().find(|s| s.zone == zone)
    }

    /// Diagonal coefficients (i omega eps + sigma) Lambda and i omega Lambda per point.
    pub fn coefficients(&self, ctx: &ElementContext) -> Result<Vec<(C3, C3)>> {
        let el = &ctx.mesh.elements[ctx.element];
        let n = self.material.index(el.tag.region);
        let stretch = self.stretch_for(ctx.mesh, ctx.element);
        let gain = self.gain.as_ref().map(|g| &g.values[ctx.element]);
        ctx.geo
            .iter()
            .enumerate()
            .map(|(q, g)| {
                let lam = match stretch {
                    Some(s) => s.tensor(g.x[2])?.0,
                    None => [ONE; 3],
                };
                let sigma = self.conductivity + gain.map_or(0.0, |v| v[q]);
                let a = c64::new(sigma, self.omega * n * n);
                let b = c64::new(0.0, self.omega);
                Ok((lam.map(|l| l * a), lam.map(|l| l * b)))
            })
            .collect()
    }
}

impl BrokenFormulation for Ultraweak {
    fn layout(&self) -> &Layout {
        &self.layout
    }

    fn quadrature_points(&self) -> usize {
        self.quad
    }

    fn gram_terms(&self, ctx: &ElementContext) -> Result<Vec<VolumeTerm>> {
        let co = self.coefficients(ctx)?;
        let sa = self.alpha.sqrt();
        let curl: Vec<CMat3> = ctx.geo.iter().map(|g| real3(&g.jac, 1.0 / g.det)).collect();
        let inv_t: Vec<Mat3> = ctx.geo.iter().map(|g| transpose_real(&g.inv)).collect();
        let scaled = |d: &dyn Fn(usize) -> C3| -> Vec<CMat3> {
            (0..ctx.geo.len())
                .map(|q| {
                    let dv = d(q);
                    let m = &inv_t[q];
                    [0, 1, 2].map(|i| [0, 1, 2].map(|j| dv[i] * m[i][j]))
                })
                .collect()
        };
        let r = R_TEST;
        let s = S_TEST;
        let e_part = vec![(s, Op::Derivative, curl.clone()), (r, Op::Value, scaled(&|q| co[q].0.map(|v| -v.conj())))];
        let h_part = vec![(r, Op::Derivative, curl), (s, Op::Value, scaled(&|q| co[q].1.map(|v| v.conj())))];
        let ones = |_: usize| [c64::new(sa, 0.0); 3];
        let mut comps = vec![e_part, h_part];
        if self.alpha > 0.0 {
            comps.push(vec![(r, Op::Value, scaled(&ones))]);
            comps.push(vec![(s, Op::Value, scaled(&ones))]);
        }
        Ok(gram_from_parts(ctx.npts, ctx.geo, &comps))
    }

    fn volume_terms(&self, ctx: &ElementContext) -> Result<Vec<VolumeTerm>> {
        let co = self.coefficients(ctx)?;
        let geo = ctx.geo;
        Ok(vec![
            VolumeTerm {
                test: R_TEST,
                test_op: Op::Value,
                trial: E,
                trial_op: Op::Value,
                coeff: tensor_of(ctx.npts, |q| mass_tensor(&geo[q], co[q].0.map(|v| -v))),
            },
            VolumeTerm { test: R_TEST, test_op: Op::Derivative, trial: H, trial_op: Op::Value, coeff: identity_tensor(ctx.npts) },
            VolumeTerm { test: S_TEST, test_op: Op::Derivative, trial: E, trial_op: Op::Value, coeff: identity_tensor(ctx.npts) },
            VolumeTerm {
                test: S_TEST,
                test_op: Op::Value,
                trial: H,
                trial_op: Op::Value,
                coeff: tensor_of(ctx.npts, |q| mass_tensor(&geo[q], co[q].1)),
            },
        ])
    }

    fn face_terms(&self, _ctx: &ElementContext, f: &FaceContext) -> Result<Vec<FaceTerm>> {
        let np = f.ref_points.len();
        let nx = vec![cross_matrix(f.ref_normal); np];
        let e_term = FaceTerm { test: S_TEST, trial: E_HAT, coeff: nx.clone() };
        match self.impedance {
            Some((tag, gamma)) if f.boundary == Some(tag) => {
                // n x H = -E_t / gamma
                let s = -gamma.inv();
                let coeff = (0..np).map(|q| tangential_tensor(&f.geo[q], f.normal[q], f.area[q], s)).collect();
                Ok(vec![FaceTerm { test: R_TEST, trial: E_HAT, coeff }, e_term])
            }
            _ => Ok(vec![FaceTerm { test: R_TEST, trial: H_HAT, coeff: nx }, e_term]),
        }
    }

    fn has_load(&self) -> bool {
        self.source.is_some()
    }

    fn load_terms(&self, ctx: &ElementContext) -> Result<Vec<LoadTerm>> {
        let Some(src) = &self.source else { return Ok(Vec::new()) };
        let co = self.coefficients(ctx)?;
        let values = ctx
            .geo
            .iter()
            .enumerate()
            .map(|(q, g)| {
                let e = src.e(g.x);
                let ch = src.curl_h(g.x);
                // isotropic outside any stretch, so the first diagonal entry is the coefficient
                let j = [0, 1, 2].map(|i| ch[i] - co[q].0[i] * e[i]);
                pull_covariant(g, j).map(|v| v * g.det)
            })
            .collect();
        Ok(vec![LoadTerm { test: R_TEST, op: Op::Value, values }])
    }

    fn trace_active(&self, var: usize, boundary: Option<BoundaryTag>) -> bool {
        !(var == H_HAT && self.impedance.is_some_and(|(t, _)| Some(t) == boundary))
    }

    fn operator_key(&self, mesh: &HexMesh, e: usize) -> Option<u64> {
        if let Some(g) = &self.gain {
            if !g.is_zero_on(e) {
                return None;
            }
        }
        let el = &mesh.elements[e];
        let region = el.tag.region as u64;
        let layer = if self.stretch_for(mesh, e).is_some() { el.layer as u64 + 1 } else { 0 };
        Some(region + 4 * layer)
    }
}

pub const R_TEST: usize = 0;
pub const S_TEST: usize = 1;

/// Primal DPG with H(curl)-conforming E, broken test F and the trace W of curl E.
#[derive(Clone)]
pub struct Primal {
    layout: Layout,
    pub omega: f64,
    pub material: Material,
    pub conductivity: f64,
    pub impedance: Option<(BoundaryTag, c64)>,
    quad: usize,
}

pub const PRIMAL_E: usize = 0;
pub const PRIMAL_W: usize = 1;

impl Primal {
    pub fn new(mesh: &HexMesh, omega: f64, material: Material, orders: &Orders) -> Result<Self> {
        if !mesh.is_affine() {
            return Err(Error::Unsupported("the primal formulation is restricted to affine box meshes".into()));
        }
        let p = OrderTriple::iso(orders.p);
        Ok(Primal {
            layout: Layout {
                test: vec![TestVar { name: "F".into(), space: Space::Q, order: p.enriched(orders.delta_p) }],
                trial: vec![
                    TrialVar { name: "E".into(), space: Space::Q, order: p, kind: VarKind::Conforming },
                    TrialVar { name: "W".into(), space: Space::Q, order: p, kind: VarKind::Trace },
                ],
            },
            omega,
            material,
            conductivity: 0.0,
            impedance: None,
            quad: orders.quad_points(),
        })
    }

    pub fn with_impedance(mut self, tag: BoundaryTag, gamma: c64) -> Self {
        self.impedance = Some((tag, gamma));
        self
    }
}

impl BrokenFormulation for Primal {
    fn layout(&self) -> &Layout {
        &self.layout
    }

    fn quadrature_points(&self) -> usize {
        self.quad
    }

    fn gram_terms(&self, ctx: &ElementContext) -> Result<Vec<VolumeTerm>> {
        let geo = ctx.geo;
        Ok(vec![
            VolumeTerm {
                test: 0,
                test_op: Op::Value,
                trial: 0,
                trial_op: Op::Value,
                coeff: tensor_of(ctx.npts, |q| mass_tensor(&geo[q], [ONE; 3])),
            },
            VolumeTerm {
                test: 0,
                test_op: Op::Derivative,
                trial: 0,
                trial_op: Op::Derivative,
                coeff: tensor_of(ctx.npts, |q| curl_tensor(&geo[q])),
            },
        ])
    }

    fn volume_terms(&self, ctx: &ElementContext) -> Result<Vec<VolumeTerm>> {
        let n = self.material.index(ctx.mesh.elements[ctx.element].tag.region);
        let w = self.omega;
        let k = c64::new(-w * w * n * n, w * self.conductivity);
        let geo = ctx.geo;
        Ok(vec![
            VolumeTerm {
                test: 0,
                test_op: Op::Derivative,
                trial: PRIMAL_E,
                trial_op: Op::Derivative,
                coeff: tensor_of(ctx.npts, |q| curl_tensor(&geo[q])),
            },
            VolumeTerm {
                test: 0,
                test_op: Op::Value,
                trial: PRIMAL_E,
                trial_op: Op::Value,
                coeff: tensor_of(ctx.npts, |q| mass_tensor(&geo[q], [k; 3])),
            },
        ])
    }

    fn face_terms(&self, _ctx: &ElementContext, f: &FaceContext) -> Result<Vec<FaceTerm>> {
        let np = f.ref_points.len();
        match self.impedance {
            Some((tag, gamma)) if f.boundary == Some(tag) => {
                // n x curl E = (i omega / gamma) E_t
                let s = I * self.omega / gamma;
                let coeff = (0..np).map(|q| tangential_tensor(&f.geo[q], f.normal[q], f.area[q], s)).collect();
                Ok(vec![FaceTerm { test: 0, trial: PRIMAL_E, coeff }])
            }
            _ => Ok(vec![FaceTerm { test: 0, trial: PRIMAL_W, coeff: vec![cross_matrix(f.ref_normal); np] }]),
        }
    }

    fn trace_active(&self, var: usize, boundary: Option<BoundaryTag>) -> bool {
        !(var == PRIMAL_W && self.impedance.is_some_and(|(t, _)| Some(t) == boundary))
    }

    fn operator_key(&self, mesh: &HexMesh, e: usize) -> Option<u64> {
        Some(mesh.elements[e].tag.region as u64)
    }
}

/// Conforming H(curl) projection (u, v) + (curl u, curl v), posed with the test
/// space equal to the trial space so the DPG reduction is exactly Galerkin.
pub struct HcurlProjection {
    layout: Layout,
    pub field: Arc<dyn ExactField>,
    quad: usize,
}

impl HcurlProjection {
    pub fn new(p: usize, field: Arc<dyn ExactField>, quad: usize) -> Self {
        let o = OrderTriple::iso(p);
        HcurlProjection {
            layout: Layout {
                test: vec![TestVar { name: "F".into(), space: Space::Q, order: o }],
                trial: vec![TrialVar { name: "E".into(), space: Space::Q, order: o, kind: VarKind::Conforming }],
            },
            field,
            quad,
        }
    }
}

impl BrokenFormulation for HcurlProjection {
    fn layout(&self) -> &Layout {
        &self.layout
    }
    fn quadrature_points(&self) -> usize {
        self.quad
    }
    fn gram_terms(&self, ctx: &ElementContext) -> Result<Vec<VolumeTerm>> {
        let geo = ctx.geo;
        Ok(vec![
            VolumeTerm {
                test: 0,
                test_op: Op::Value,
                trial: 0,
                trial_op: Op::Value,
                coeff: tensor_of(ctx.npts, |q| mass_tensor(&geo[q], [ONE; 3])),
            },
            VolumeTerm {
                test: 0,
                test_op: Op::Derivative,
                trial: 0,
                trial_op: Op::Derivative,
                coeff: tensor_of(ctx.npts, |q| curl_tensor(&geo[q])),
            },
        ])
    }
    fn volume_terms(&self, ctx: &ElementContext) -> Result<Vec<VolumeTerm>> {
        self.gram_terms(ctx)
    }
    fn face_terms(&self, _: &ElementContext, _: &FaceContext) -> Result<Vec<FaceTerm>> {
        Ok(Vec::new())
    }
    fn has_load(&self) -> bool {
        true
    }
    fn load_terms(&self, ctx: &ElementContext) -> Result<Vec<LoadTerm>> {
        let v: Vec<C3> = ctx.geo.iter().map(|g| pull_covariant(g, self.field.e(g.x)).map(|v| v * g.det)).collect();
        let c: Vec<C3> = ctx
            .geo
            .iter()
            .map(|g| {
                let ce = self.field.curl_e(g.x);
                let j = &g.jac;
                [0, 1, 2].map(|a| ce[0] * j[0][a] + ce[1] * j[1][a] + ce[2] * j[2][a])
            })
            .collect();
        Ok(vec![LoadTerm { test: 0, op: Op::Value, values: v }, LoadTerm { test: 0, op: Op::Derivative, values: c }])
    }
    fn operator_key(&self, mesh: &HexMesh, e: usize) -> Option<u64> {
        Some(mesh.elements[e].tag.region as u64)
    }
}

/// Tangential data of an exact field on the given boundary tags.
pub fn exact_dirichlet(var: usize, tags: &[BoundaryTag], field: Arc<dyn ExactField>) -> BoundaryConditions {
    let mut bc = BoundaryConditions::new();
    for &t in tags {
        let f = field.clone();
        bc = bc.with(var, t, Constraint::Data(Arc::new(move |x| f.e(x))));
    }
    bc
}

/// Physical values (Value: covariant; Derivative: curl, contravariant) of one trial
/// variable of element `e` at reference points.
pub fn eval_var(
    disc: &Discretization,
    sol: &FieldSolution,
    e: usize,
    var: usize,
    op: Op,
    pts: &[[f64; 3]],
    geo: &[GeoPoint],
) -> Result<Vec<C3>> {
    let tv = &disc.layout.trial[var];
    let fam = Family::new(tv.space, tv.order);
    let tab = eval_points(&fam, op, pts)?;
    let c = disc.var_coeffs(sol, e, var);
    Ok((0..pts.len())
        .map(|q| {
            let mut v = [ZERO; 3];
            for (s, cs) in c.iter().enumerate() {
                if *cs == ZERO {
                    continue;
                }
                for (k, vk) in v.iter_mut().enumerate() {
                    *vk += *cs * tab.get(s, q, k);
                }
            }
            match op {
                Op::Value => covariant(&geo[q], v),
                Op::Derivative => contravariant(&geo[q], v),
            }
        })
        .collect())
}

/// Element tensor rule: points, weights, geometry.
pub fn element_rule(mesh: &HexMesh, e: usize, n: usize) -> (Vec<[f64; 3]>, Vec<f64>, Vec<GeoPoint>) {
    let r = gauss_rule(n);
    let pts = tensor_points([&r.points, &r.points, &r.points]);
    let w = tensor_weights([&r.weights, &r.weights, &r.weights]);
    let geo = mesh.geometry_tensor(e, [&r.points, &r.points, &r.points]);
    (pts, w, geo)
}

/// Squared L2 norms: (error, exact) of the (E, H) field pair of an ultraweak solution.
pub fn uw_l2_error(disc: &Discretization, sol: &FieldSolution, exact: &dyn ExactField, n: usize) -> Result<(f64, f64)> {
    let mut err = 0.0;
    let mut nrm = 0.0;
    for e in 0..disc.mesh.num_elements() {
        let (pts, w, geo) = element_rule(&disc.mesh, e, n);
        let eh = eval_var(disc, sol, e, E, Op::Value, &pts, &geo)?;
        let hh = eval_var(disc, sol, e, H, Op::Value, &pts, &geo)?;
        for q in 0..pts.len() {
            let dv = w[q] * geo[q].det;
            let (ee, he) = (exact.e(geo[q].x), exact.h(geo[q].x));
            err += dv * (norm_sqr3(sub3(eh[q], ee)) + norm_sqr3(sub3(hh[q], he)));
            nrm += dv * (norm_sqr3(ee) + norm_sqr3(he));
        }
    }
    Ok((err, nrm))
}

/// Squared H(curl) norms (error, exact) of a conforming E variable.
pub fn hcurl_error(
    disc: &Discretization,
    sol: &FieldSolution,
    var: usize,
    exact: &dyn ExactField,
    n: usize,
) -> Result<(f64, f64)> {
    let mut err = 0.0;
    let mut nrm = 0.0;
    for e in 0..disc.mesh.num_elements() {
        let (pts, w, geo) = element_rule(&disc.mesh, e, n);
        let v = eval_var(disc, sol, e, var, Op::Value, &pts, &geo)?;
        let c = eval_var(disc, sol, e, var, Op::Derivative, &pts, &geo)?;
        for q in 0..pts.len() {
            let dv = w[q] * geo[q].det;
            let (ee, ce) = (exact.e(geo[q].x), exact.curl_e(geo[q].x));
            err += dv * (norm_sqr3(sub3(v[q], ee)) + norm_sqr3(sub3(c[q], ce)));
            nrm += dv * (norm_sqr3(ee) + norm_sqr3(ce));
        }
    }
    Ok((err, nrm))
}

/// Squared L2 error of the element-wise L2 projection of (E, H) onto VecY_p.
pub fn l2_projection_error(mesh: &HexMesh, p: usize, exact: &dyn ExactField, n: usize) -> Result<(f64, f64)> {
    let fam = Family::new(Space::VecY, OrderTriple::iso(p));
    let r = gauss_rule(n);
    let pts = tensor_points([&r.points, &r.points, &r.points]);
    let w = tensor_weights([&r.weights, &r.weights, &r.weights]);
    let tab = eval_points(&fam, Op::Value, &pts)?;
    let dim = fam.dim;
    let mut err = 0.0;
    let mut nrm = 0.0;
    for e in 0..mesh.num_elements() {
        let geo = mesh.geometry_tensor(e, [&r.points, &r.points, &r.points]);
        // physical shape values J^-T phi
        let phys: Vec<Vec<[f64; 3]>> = (0..dim)
            .map(|s| {
                (0..pts.len())
                    .map(|q| {
                        let m = &geo[q].inv;
                        let v = [tab.get(s, q, 0), tab.get(s, q, 1), tab.get(s, q, 2)];
                        [0, 1, 2].map(|i| v[0] * m[0][i] + v[1] * m[1][i] + v[2] * m[2][i])
                    })
                    .collect()
            })
            .collect();
        let mut mass = Mat::<c64>::zeros(dim, dim);
        for i in 0..dim {
            for j in 0..=i {
                let mut acc = 0.0;
                for q in 0..pts.len() {
                    let (a, b) = (phys[i][q], phys[j][q]);
                    acc += w[q] * geo[q].det * (a[0] * b[0] + a[1] * b[1] + a[2] * b[2]);
                }
                mass[(i, j)] = c64::new(acc, 0.0);
                mass[(j, i)] = c64::new(acc, 0.0);
            }
        }
        let llt = mass
            .llt(Side::Lower)
            .map_err(|_| Error::Stability { element: e, detail: "L2 mass matrix is singular".into() })?;
        let mut rhs = Mat::<c64>::zeros(dim, 2);
        let ex: Vec<(C3, C3)> = geo.iter().map(|g| (exact.e(g.x), exact.h(g.x))).collect();
        for i in 0..dim {
            for q in 0..pts.len() {
                let a = phys[i][q];
                let dv = w[q] * geo[q].det;
                rhs[(i, 0)] += (ex[q].0[0] * a[0] + ex[q].0[1] * a[1] + ex[q].0[2] * a[2]) * dv;
                rhs[(i, 1)] += (ex[q].1[0] * a[0] + ex[q].1[1] * a[1] + ex[q].1[2] * a[2]) * dv;
            }
        }
        let c = llt.solve(&rhs);
        for q in 0..pts.len() {
            let mut v = [[ZERO; 3]; 2];
            for s in 0..dim {
                for k in 0..3 {
                    v[0][k] += c[(s, 0)] * phys[s][q][k];
                    v[1][k] += c[(s, 1)] * phys[s][q][k];
                }
            }
            let dv = w[q] * geo[q].det;
            err += dv * (norm_sqr3(sub3(v[0], ex[q].0)) + norm_sqr3(sub3(v[1], ex[q].1)));
            nrm += dv * (norm_sqr3(ex[q].0) + norm_sqr3(ex[q].1));
        }
    }
    Ok((err, nrm))
}

/// Squared L2 norm of the (E, H) difference between two solutions on the same discretization.
pub fn uw_difference_norm(disc: &Discretization, a: &FieldSolution, b: &FieldSolution, n: usize) -> Result<(f64, f64)> {
    let mut diff = 0.0;
    let mut nb = 0.0;
    for e in 0..disc.mesh.num_elements() {
        let (pts, w, geo) = element_rule(&disc.mesh, e, n);
        for var in [E, H] {
            let va = eval_var(disc, a, e, var, Op::Value, &pts, &geo)?;
            let vb = eval_var(disc, b, e, var, Op::Value, &pts, &geo)?;
            for q in 0..pts.len() {
                let dv = w[q] * geo[q].det;
                diff += dv * norm_sqr3(sub3(va[q], vb[q]));
                nb += dv * norm_sqr3(vb[q]);
            }
        }
    }
    Ok((diff, nb))
}
