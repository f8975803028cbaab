//! Power through z cross-sections, power traces and field sampling.

use std::fmt::Write as _;

use crate::basis::{gauss_rule, Op};
use crate::dpg::{face_context, Discretization, FieldSolution};
use crate::error::{Error, Result};
use crate::maxwell::{cross_c, eval_var, C3, E, E_HAT, H, H_HAT};

/// Signed flux of Re(E x H*) through the plane z = z0, oriented along +z.
fn signed_flux(disc: &Discretization, sol: &FieldSolution, z0: f64, vars: [usize; 2]) -> Result<f64> {
    let mesh = &*disc.mesh;
    let faces = mesh.faces_at_z(z0);
    if faces.is_empty() {
        return Err(Error::Station(format!("z = {z0} is not a layer interface of the mesh")));
    }
    let rule = gauss_rule(disc.quad_points);
    let mut total = 0.0;
    for f in faces {
        let (e, lf) = mesh.faces[f].sides[0];
        let fc = face_context(mesh, e, lf, &rule);
        let ev = eval_var(disc, sol, e, vars[0], Op::Value, &fc.ref_points, &fc.geo)?;
        let hv = eval_var(disc, sol, e, vars[1], Op::Value, &fc.ref_points, &fc.geo)?;
        for q in 0..fc.ref_points.len() {
            let s = cross_c(ev[q], hv[q].map(|v| v.conj()));
            let sz = fc.normal[q][2].signum();
            let flux = fc.normal[q][0] * s[0].re + fc.normal[q][1] * s[1].re + fc.normal[q][2] * s[2].re;
            total += sz * flux * fc.weights[q] * fc.area[q];
        }
    }
    Ok(total)
}

/// |integral of n . Re(E_hat x H_hat*)| over the faces at z0, from trace unknowns.
pub fn cross_section_power(disc: &Discretization, sol: &FieldSolution, z0: f64) -> Result<f64> {
    Ok(signed_flux(disc, sol, z0, [E_HAT, H_HAT])?.abs())
}

/// Same flux evaluated from the L2 field variables of the element below the plane.
pub fn cross_section_power_volume(disc: &Discretization, sol: &FieldSolution, z0: f64) -> Result<f64> {
    Ok(signed_flux(disc, sol, z0, [E, H])?.abs())
}

/// Flux with +z orientation, not made absolute.
pub fn signed_power(disc: &Discretization, sol: &FieldSolution, z0: f64) -> Result<f64> {
    signed_flux(disc, sol, z0, [E_HAT, H_HAT])
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PowerTrace {
    pub z: Vec<f64>,
    pub signal: Vec<f64>,
    pub pump: Vec<f64>,
}

impl PowerTrace {
    pub fn len(&self) -> usize {
        self.z.len()
    }

    pub fn is_empty(&self) -> bool {
        self.z.is_empty()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("z,P_signal,P_pump\n");
        for i in 0..self.z.len() {
            let _ = writeln!(s, "{:e},{:e},{:e}", self.z[i], self.signal[i], self.pump[i]);
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next().map(str::trim) != Some("z,P_signal,P_pump") {
            return Err(Error::Usage("power trace CSV must start with `z,P_signal,P_pump`".into()));
        }
        let mut t = PowerTrace::default();
        for (i, l) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let v: Vec<f64> = l
                .split(',')
                .map(|x| x.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Usage(format!("power trace row {}: {e}", i + 2)))?;
            if v.len() != 3 {
                return Err(Error::Usage(format!("power trace row {} has {} columns", i + 2, v.len())));
            }
            t.z.push(v[0]);
            t.signal.push(v[1]);
            t.pump.push(v[2]);
        }
        Ok(t)
    }
}

/// Station powers for a signal solution and an optional pump solution.
pub fn power_trace(
    signal: (&Discretization, &FieldSolution),
    pump: Option<(&Discretization, &FieldSolution)>,
    stations: &[f64],
) -> Result<PowerTrace> {
    let mut t = PowerTrace::default();
    for &z in stations {
        t.z.push(z);
        t.signal.push(cross_section_power(signal.0, signal.1, z)?);
        t.pump.push(match pump {
            Some((d, s)) => cross_section_power(d, s, z)?,
            None => 0.0,
        });
    }
    Ok(t)
}

/// Layer interfaces in [z_lo, z_hi] at least `spacing` apart, starting at z_lo.
pub fn stations(disc: &Discretization, z_lo: f64, z_hi: f64, spacing: f64) -> Vec<f64> {
    let tol = 1e-9 * disc.mesh.length;
    let mut out: Vec<f64> = Vec::new();
    for z in disc.mesh.layer_interfaces() {
        if z < z_lo - tol || z > z_hi + tol {
            continue;
        }
        if out.last().is_none_or(|&last| z - last >= spacing - tol) {
            out.push(z);
        }
    }
    out
}

/// Complex E and H at one physical point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FieldSample {
    pub x: [f64; 3],
    pub value: Option<(C3, C3)>,
}

/// Sample the L2 fields at physical points; points outside the mesh stay empty.
pub fn sample_fields(disc: &Discretization, sol: &FieldSolution, points: &[[f64; 3]]) -> Result<Vec<FieldSample>> {
    let mesh = &*disc.mesh;
    points
        .iter()
        .map(|&x| {
            let Some((e, r)) = mesh.locate(x) else { return Ok(FieldSample { x, value: None }) };
            let geo = mesh.geometry_at(e, &[r]);
            let ev = eval_var(disc, sol, e, E, Op::Value, &[r], &geo)?;
            let hv = eval_var(disc, sol, e, H, Op::Value, &[r], &geo)?;
            Ok(FieldSample { x, value: Some((ev[0], hv[0])) })
        })
        .collect()
}

/// Uniform grid on the plane z = z0 over [-h, h]^2.
pub fn plane_points(z0: f64, half_width: f64, n: usize) -> Vec<[f64; 3]> {
    let mut out = Vec::with_capacity(n * n);
    for j in 0..n {
        for i in 0..n {
            let t = |k: usize| if n == 1 { 0.0 } else { -half_width + 2.0 * half_width * k as f64 / (n - 1) as f64 };
            out.push([t(i), t(j), z0]);
        }
    }
    out
}

/// Points on the segment a -> b.
pub fn line_points(a: [f64; 3], b: [f64; 3], n: usize) -> Vec<[f64; 3]> {
    (0..n)
        .map(|k| {
            let t = if n == 1 { 0.0 } else { k as f64 / (n - 1) as f64 };
            [0, 1, 2].map(|i| a[i] + t * (b[i] - a[i]))
        })
        .collect()
}

pub fn samples_to_csv(samples: &[FieldSample]) -> String {
    let mut s = String::from("x,y,z,ReEx,ImEx,ReEy,ImEy,ReEz,ImEz,ReHx,ImHx,ReHy,ImHy,ReHz,ImHz\n");
    for p in samples {
        let _ = write!(s, "{:e},{:e},{:e}", p.x[0], p.x[1], p.x[2]);
        match p.value {
            Some((e, h)) => {
                for v in e.iter().chain(h.iter()) {
                    let _ = write!(s, ",{:e},{:e}", v.re, v.im);
                }
            }
            None => s.push_str(&",NaN".repeat(12)),
        }
        s.push('\n');
    }
    s
}

/// Largest magnitude of each of the six components over a sample set.
pub fn component_maxima(samples: &[FieldSample]) -> [f64; 6] {
    let mut m = [0.0f64; 6];
    for (e, h) in samples.iter().filter_map(|s| s.value) {
        for k in 0..3 {
            m[k] = m[k].max(e[k].norm());
            m[3 + k] = m[3 + k].max(h[k].norm());
        }
    }
    m
}

/// Ratio of the smaller of |E_x|, |H_y| maxima to the largest of the other four.
pub fn dominance_ratio(samples: &[FieldSample]) -> f64 {
    let m = component_maxima(samples);
    let main = m[0].min(m[4]);
    let other = m[1].max(m[2]).max(m[3]).max(m[5]);
    if other > 0.0 {
        main / other
    } else {
        f64::INFINITY
    }
}
