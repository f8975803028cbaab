//! Complex coordinate stretching along z.
//!
//! The stretched coordinate is phi(z) = z -/+ (i/omega) S(d), d the depth into the
//! layer, so a wave e^{-i beta z} picks up the factor e^{-(beta/omega) S(d)}.
//! The sign flips for a start-side layer so that waves travelling towards z = 0 decay.

use faer::c64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::{HexMesh, PmlZone};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StretchKind {
    /// S(d) = C (d/l)^3
    Cubic,
    /// S(d) = C (d/l)^n e^{d/l - 1}, for fields that grow along z.
    Exponential,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PmlStretch {
    pub kind: StretchKind,
    pub strength: f64,
    pub exponent: i32,
    pub zone: PmlZone,
    /// Interface between the physical region and the layer.
    pub z0: f64,
    pub thickness: f64,
    pub omega: f64,
}

impl PmlStretch {
    /// Identity stretch (strength 0) occupying a mesh PML zone.
    pub fn for_mesh(mesh: &HexMesh, zone: PmlZone, kind: StretchKind, omega: f64) -> Result<Self> {
        let [a, b] = mesh
            .pml_range(zone)
            .ok_or_else(|| Error::Config(format!("mesh has no {zone:?} PML zone")))?;
        let (z0, thickness) = match zone {
            PmlZone::End => (a, b - a),
            PmlZone::Start => (b, b - a),
        };
        Ok(PmlStretch { kind, strength: 0.0, exponent: 3, zone, z0, thickness, omega })
    }

    pub fn depth(&self, z: f64) -> f64 {
        let d = match self.zone {
            PmlZone::End => z - self.z0,
            PmlZone::Start => self.z0 - z,
        };
        d.clamp(0.0, self.thickness)
    }

    /// Profile S and dS/dd at depth d.
    pub fn profile(&self, d: f64) -> (f64, f64) {
        let l = self.thickness;
        if l <= 0.0 || d <= 0.0 {
            return (0.0, 0.0);
        }
        let t = d / l;
        let c = self.strength;
        match self.kind {
            StretchKind::Cubic => (c * t.powi(3), 3.0 * c * t * t / l),
            StretchKind::Exponential => {
                let n = self.exponent;
                let e = (t - 1.0).exp();
                let s = c * t.powi(n) * e;
                let ds = c * e * (n as f64 * t.powi(n - 1) + t.powi(n)) / l;
                (s, ds)
            }
        }
    }

    pub fn phi(&self, z: f64) -> c64 {
        let (s, _) = self.profile(self.depth(z));
        let sign = match self.zone {
            PmlZone::End => -1.0,
            PmlZone::Start => 1.0,
        };
        c64::new(z, sign * s / self.omega)
    }

    /// d phi / dz = 1 - (i/omega) S'(d) for both orientations.
    pub fn dphi(&self, z: f64) -> c64 {
        let (_, ds) = self.profile(self.depth(z));
        c64::new(1.0, -ds / self.omega)
    }

    /// Diagonal of J J^-1 J^-T and the determinant for J = diag(1, 1, phi').
    pub fn tensor(&self, z: f64) -> Result<([c64; 3], c64)> {
        let d = self.dphi(z);
        if d.norm() < 1e-300 {
            return Err(Error::SingularStretch(format!("phi' vanishes at z = {z}")));
        }
        Ok(([d, d, d.inv()], d))
    }

    /// log of the amplitude reduction of e^{(a - i beta) z} across the layer.
    pub fn log_attenuation(&self, beta_over_omega: f64, growth: f64) -> f64 {
        let (s, _) = self.profile(self.thickness);
        beta_over_omega * s - growth * self.thickness
    }

    /// Same quantity by quadrature of Im(phi') over the layer.
    pub fn log_attenuation_quadrature(&self, beta_over_omega: f64, growth: f64, n: usize) -> f64 {
        let rule = crate::basis::gauss_rule(n);
        let mut acc = 0.0;
        for (t, w) in rule.points.iter().zip(&rule.weights) {
            let d = t * self.thickness;
            let (_, ds) = self.profile(d);
            acc += w * self.thickness * ds;
        }
        beta_over_omega * acc - growth * self.thickness
    }
}

/// Pick the strength so that a wave e^{(a - i omega) z} decays by `target` across the layer.
pub fn calibrate(mut base: PmlStretch, target: f64, growth: f64) -> Result<PmlStretch> {
    if !(target >= 1.0) || !target.is_finite() {
        return Err(Error::Calibration(format!("target attenuation must be >= 1 (got {target})")));
    }
    if base.thickness <= 0.0 {
        return Err(Error::Calibration("PML thickness is zero".into()));
    }
    if growth < 0.0 || !growth.is_finite() {
        return Err(Error::Calibration(format!("growth rate must be finite and >= 0 (got {growth})")));
    }
    let need = target.ln() + growth * base.thickness;
    base.strength = 1.0;
    let unit = base.log_attenuation(1.0, 0.0);
    if need > 0.0 && unit <= 0.0 {
        return Err(Error::Calibration("stretch profile provides no attenuation".into()));
    }
    base.strength = if need > 0.0 { need / unit } else { 0.0 };
    Ok(base)
}

/// Per-point tensor diagonal and determinant.
pub fn pml_coefficients(stretch: &PmlStretch, z: &[f64]) -> Result<Vec<([c64; 3], c64)>> {
    z.iter().map(|&z| stretch.tensor(z)).collect()
}
