//! Reduced Raman models: coupled power ODEs, pointwise irradiance ODEs, their
//! closed-form logistic solution and a fit against solver power traces.

use serde::Serialize;

use crate::basis::gauss_rule;
use crate::error::{Error, Result};
use crate::mesh::HexMesh;
use crate::postprocess::PowerTrace;

/// A_eff = int phi_p^2 int phi_s^2 / int phi_p^2 phi_s^2 from squared profiles at quadrature points.
pub fn effective_area_weighted(weights: &[f64], phi_p_sq: &[f64], phi_s_sq: &[f64]) -> Result<f64> {
    let (mut a, mut b, mut c) = (0.0, 0.0, 0.0);
    for i in 0..weights.len() {
        a += weights[i] * phi_p_sq[i];
        b += weights[i] * phi_s_sq[i];
        c += weights[i] * phi_p_sq[i] * phi_s_sq[i];
    }
    if !(c > 0.0) {
        return Err(Error::DivisionByZero("mode profiles have no overlap".into()));
    }
    Ok(a * b / c)
}

/// Cross-section quadrature of a fiber mesh: points and weights (n x n Gauss per cell).
pub fn section_rule(mesh: &HexMesh, n: usize) -> (Vec<[f64; 2]>, Vec<f64>) {
    let r = gauss_rule(n);
    let mut pts = Vec::new();
    let mut w = Vec::new();
    for cell in &mesh.cells {
        for (i, s) in r.points.iter().enumerate() {
            for (j, t) in r.points.iter().enumerate() {
                let (x, jac) = cell.eval(*s, *t);
                let det = (jac[0][0] * jac[1][1] - jac[0][1] * jac[1][0]).abs();
                pts.push(x);
                w.push(r.weights[i] * r.weights[j] * det);
            }
        }
    }
    (pts, w)
}

/// Effective area of two transverse field profiles over the mesh cross-section.
pub fn effective_area(
    mesh: &HexMesh,
    phi_p: impl Fn([f64; 2]) -> f64,
    phi_s: impl Fn([f64; 2]) -> f64,
    n: usize,
) -> Result<f64> {
    let (pts, w) = section_rule(mesh, n);
    let pp: Vec<f64> = pts.iter().map(|&x| phi_p(x).powi(2)).collect();
    let ps: Vec<f64> = pts.iter().map(|&x| phi_s(x).powi(2)).collect();
    effective_area_weighted(&w, &pp, &ps)
}

/// Photon-flux factors and frequencies of the coupled pair.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct PairParams {
    pub omega_s: f64,
    pub omega_p: f64,
    /// g_R / A_eff in solver units; may absorb kappa.
    pub coupling: f64,
}

impl PairParams {
    pub fn upsilon(&self) -> [f64; 2] {
        [1.0, -self.omega_p / self.omega_s]
    }

    /// (dP_s/dz, dP_p/dz)
    pub fn rhs(&self, ps: f64, pp: f64) -> [f64; 2] {
        let [us, up] = self.upsilon();
        let g = self.coupling * ps * pp;
        [us * g, up * g]
    }

    pub fn photon_flux(&self, ps: f64, pp: f64) -> f64 {
        pp / self.omega_p + ps / self.omega_s
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct OdeRun {
    pub z: Vec<f64>,
    pub signal: Vec<f64>,
    pub pump: Vec<f64>,
    pub params: PairParams,
    /// Largest number of step halvings used on any step.
    pub halvings: usize,
}

impl OdeRun {
    pub fn photon_flux_drift(&self) -> f64 {
        let q0 = self.params.photon_flux(self.signal[0], self.pump[0]);
        (0..self.z.len())
            .map(|i| (self.params.photon_flux(self.signal[i], self.pump[i]) - q0).abs() / q0)
            .fold(0.0, f64::max)
    }
}

fn rk4_step(p: &PairParams, y: [f64; 2], h: f64) -> [f64; 2] {
    let f = |y: [f64; 2]| p.rhs(y[0], y[1]);
    let k1 = f(y);
    let k2 = f([y[0] + 0.5 * h * k1[0], y[1] + 0.5 * h * k1[1]]);
    let k3 = f([y[0] + 0.5 * h * k2[0], y[1] + 0.5 * h * k2[1]]);
    let k4 = f([y[0] + h * k3[0], y[1] + h * k3[1]]);
    [0, 1].map(|i| y[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
}

const MAX_HALVINGS: usize = 20;

/// One grid interval, subdivided by halving until the powers stay nonnegative.
fn advance(p: &PairParams, y: [f64; 2], h: f64) -> Result<([f64; 2], usize)> {
    for k in 0..=MAX_HALVINGS {
        let m = 1usize << k;
        let hs = h / m as f64;
        let mut v = y;
        let mut ok = true;
        for _ in 0..m {
            v = rk4_step(p, v, hs);
            if !(v[0] >= 0.0 && v[1] >= 0.0) {
                ok = false;
                break;
            }
        }
        if ok {
            return Ok((v, k));
        }
    }
    Err(Error::StepSize(format!(
        "power became negative even after {MAX_HALVINGS} step halvings (h = {h})"
    )))
}

/// Classical RK4 on a uniform grid of `steps` intervals over [0, length].
pub fn integrate_power_odes(p: PairParams, ps0: f64, pp0: f64, length: f64, steps: usize) -> Result<OdeRun> {
    if !(ps0 > 0.0 && pp0 > 0.0) {
        return Err(Error::Usage(format!("initial powers must be positive (got {ps0}, {pp0})")));
    }
    if steps == 0 || !(length > 0.0) {
        return Err(Error::Usage("need steps >= 1 and length > 0".into()));
    }
    let h = length / steps as f64;
    let mut run = OdeRun { z: vec![0.0], signal: vec![ps0], pump: vec![pp0], params: p, halvings: 0 };
    let mut y = [ps0, pp0];
    for i in 0..steps {
        let (v, k) = advance(&p, y, h)?;
        y = v;
        run.halvings = run.halvings.max(k);
        run.z.push((i + 1) as f64 * h);
        run.signal.push(y[0]);
        run.pump.push(y[1]);
    }
    Ok(run)
}

/// Logistic solution P_s = K / (1 + (K / P_s0 - 1) e^{-r z}), K = omega_s Q, r = g omega_p Q.
pub fn closed_form(p: &PairParams, ps0: f64, pp0: f64, z: f64) -> (f64, f64) {
    let q = p.photon_flux(ps0, pp0);
    let k = p.omega_s * q;
    let r = p.coupling * p.omega_p * q;
    let ps = k / (1.0 + (k / ps0 - 1.0) * (-r * z).exp());
    let pp = p.omega_p * (q - ps / p.omega_s);
    (ps, pp)
}

/// Largest relative deviation of an RK4 run from the closed form.
pub fn closed_form_error(run: &OdeRun) -> f64 {
    let (s0, p0) = (run.signal[0], run.pump[0]);
    (0..run.z.len())
        .map(|i| {
            let (s, p) = closed_form(&run.params, s0, p0, run.z[i]);
            ((run.signal[i] - s).abs() / s).max((run.pump[i] - p).abs() / p)
        })
        .fold(0.0, f64::max)
}

/// Pointwise irradiance ODEs (no transverse coupling); returns the profiles at z = length.
pub fn integrate_irradiance(
    p: PairParams,
    is0: &[f64],
    ip0: &[f64],
    length: f64,
    steps: usize,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if is0.len() != ip0.len() {
        return Err(Error::Usage("irradiance profiles differ in length".into()));
    }
    if is0.iter().chain(ip0).any(|v| !(*v >= 0.0)) {
        return Err(Error::Usage("irradiance profiles must be nonnegative".into()));
    }
    let h = length / steps.max(1) as f64;
    let mut s = is0.to_vec();
    let mut q = ip0.to_vec();
    for k in 0..s.len() {
        if s[k] == 0.0 || q[k] == 0.0 {
            continue;
        }
        let mut y = [s[k], q[k]];
        for _ in 0..steps.max(1) {
            y = advance(&p, y, h)?.0;
        }
        s[k] = y[0];
        q[k] = y[1];
    }
    Ok((s, q))
}

#[derive(Clone, Debug, Serialize)]
pub struct ComparisonReport {
    /// Least-squares coupling of the power ODEs fitted to the trace.
    pub coupling: f64,
    /// Root mean square of the relative misfit over stations and both fields.
    pub residual: f64,
    pub max_rel_deviation: f64,
    /// Every consecutive station pair changes in the direction the fitted ODE predicts.
    pub monotonicity_agreement: bool,
    pub predicted_signal: Vec<f64>,
    pub predicted_pump: Vec<f64>,
}

fn misfit(trace: &PowerTrace, omega_s: f64, omega_p: f64, c: f64) -> (f64, f64, Vec<f64>, Vec<f64>) {
    let p = PairParams { omega_s, omega_p, coupling: c };
    let (s0, p0, z0) = (trace.signal[0], trace.pump[0], trace.z[0]);
    let mut sq = 0.0;
    let mut mx: f64 = 0.0;
    let (mut ps, mut pp) = (Vec::new(), Vec::new());
    for i in 0..trace.len() {
        let (s, q) = closed_form(&p, s0, p0, trace.z[i] - z0);
        let es = (s - trace.signal[i]) / trace.signal[i];
        let ep = (q - trace.pump[i]) / trace.pump[i];
        sq += es * es + ep * ep;
        mx = mx.max(es.abs()).max(ep.abs());
        ps.push(s);
        pp.push(q);
    }
    ((sq / (2 * trace.len()) as f64).sqrt(), mx, ps, pp)
}

/// Fit the single coupling g_R / A_eff of a co-propagating pair to a solver power trace.
pub fn compare_with_maxwell(trace: &PowerTrace, omega_s: f64, omega_p: f64) -> Result<ComparisonReport> {
    if trace.len() < 2 || trace.signal[0] <= 0.0 || trace.pump[0] <= 0.0 {
        return Err(Error::Usage("need at least two stations with positive powers".into()));
    }
    let n = trace.len() - 1;
    let span = trace.z[n] - trace.z[0];
    // first-order estimate from the end-to-end signal change
    let c0 = (trace.signal[n] / trace.signal[0]).ln() / (span * trace.pump[0]);
    let width = 4.0 * c0.abs() + 1e-12;
    let (mut a, mut b) = (c0 - width, c0 + width);
    let f = |c: f64| misfit(trace, omega_s, omega_p, c).0;
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let (mut x1, mut x2) = (b - g * (b - a), a + g * (b - a));
    let (mut f1, mut f2) = (f(x1), f(x2));
    for _ in 0..200 {
        if (b - a).abs() <= 1e-14 * (1.0 + c0.abs()) {
            break;
        }
        if f1 < f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - g * (b - a);
            f1 = f(x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + g * (b - a);
            f2 = f(x2);
        }
    }
    let c = 0.5 * (a + b);
    let (residual, max_rel_deviation, ps, pp) = misfit(trace, omega_s, omega_p, c);
    let sign = |v: f64| if v > 0.0 { 1 } else if v < 0.0 { -1 } else { 0 };
    let monotonicity_agreement = (0..n).all(|i| {
        sign(trace.signal[i + 1] - trace.signal[i]) == sign(ps[i + 1] - ps[i])
            && sign(trace.pump[i + 1] - trace.pump[i]) == sign(pp[i + 1] - pp[i])
    });
    Ok(ComparisonReport {
        coupling: c,
        residual,
        max_rel_deviation,
        monotonicity_agreement,
        predicted_signal: ps,
        predicted_pump: pp,
    })
}
