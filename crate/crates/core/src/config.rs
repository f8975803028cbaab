//! Run configuration: TOML with one table per concern. Every key has a default;
//! unknown keys are rejected. Optional keys left out are filled per study by
//! [`RunConfig::resolve`], and the resolved form is what the manifest records.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::maxwell::{frequency_offset, Material, Orders};
use crate::pml::StretchKind;
use crate::raman::{NonlinearConfig, OptimalityCheck, PumpDirection};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum StudyKind {
    Mms,
    #[default]
    LinearFiber,
    CompareFormulations,
    RamanCo,
    RamanCounter,
    OracleOnly,
}

impl StudyKind {
    pub fn name(self) -> &'static str {
        match self {
            StudyKind::Mms => "mms",
            StudyKind::LinearFiber => "linear_fiber",
            StudyKind::CompareFormulations => "compare_formulations",
            StudyKind::RamanCo => "raman_co",
            StudyKind::RamanCounter => "raman_counter",
            StudyKind::OracleOnly => "oracle_only",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeshShape {
    Fiber,
    Box,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MeshConfig {
    pub shape: Option<MeshShape>,
    /// Total length in signal wavelengths (cladding index).
    pub wavelengths: Option<f64>,
    pub n_layers: Option<usize>,
    pub r_core: f64,
    pub r_cladding: f64,
    pub pml_fraction: f64,
    /// Start-side absorbing layer; counter-pumped runs default it to `pml_fraction`.
    pub pml_start_fraction: Option<f64>,
    pub geometry_order: usize,
    pub cladding_rings: usize,
    pub cladding_grading: f64,
    pub section_level: usize,
}

impl Default for MeshConfig {
    fn default() -> Self {
        MeshConfig {
            shape: None,
            wavelengths: None,
            n_layers: None,
            r_core: 0.25 * 2f64.sqrt(),
            r_cladding: 2.5 * 2f64.sqrt(),
            pml_fraction: 0.2,
            pml_start_fraction: None,
            geometry_order: 3,
            cladding_rings: 3,
            cladding_grading: 2.0,
            section_level: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OrdersConfig {
    pub p: usize,
    pub delta_p: usize,
    pub quad_extra: usize,
}

impl Default for OrdersConfig {
    fn default() -> Self {
        OrdersConfig { p: 3, delta_p: 1, quad_extra: 2 }
    }
}

impl OrdersConfig {
    pub fn orders(&self) -> Orders {
        Orders { p: self.p, delta_p: self.delta_p, quad_extra: self.quad_extra }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MaterialConfig {
    pub n_cladding: f64,
    pub numerical_aperture: f64,
    /// Overrides the core index derived from the aperture.
    pub n_core: Option<f64>,
    pub omega_signal: f64,
    /// Raman shift in Hz, converted with `omega_reference`.
    pub raman_shift_hz: f64,
    pub omega_reference: f64,
}

impl Default for MaterialConfig {
    fn default() -> Self {
        MaterialConfig {
            n_cladding: 1.45,
            numerical_aperture: 0.0659,
            n_core: None,
            omega_signal: 30.0 * PI,
            raman_shift_hz: 13.2e12,
            omega_reference: 1e15,
        }
    }
}

impl MaterialConfig {
    pub fn material(&self) -> Material {
        match self.n_core {
            Some(n) => Material { n_core: n, n_cladding: self.n_cladding, n_box: 1.0 },
            None => Material::from_aperture(self.n_cladding, self.numerical_aperture),
        }
    }

    pub fn omega_pump(&self) -> f64 {
        self.omega_signal + frequency_offset(self.raman_shift_hz, self.omega_reference)
    }

    /// Signal wavelength in the cladding medium.
    pub fn wavelength(&self) -> f64 {
        2.0 * PI / (self.omega_signal * self.n_cladding)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PmlConfig {
    pub kind: StretchKind,
    /// Amplitude reduction across the layer for a wave with beta = omega.
    pub target: f64,
    pub exponent: i32,
}

impl Default for PmlConfig {
    fn default() -> Self {
        PmlConfig { kind: StretchKind::Cubic, target: 1e4, exponent: 3 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExcitationConfig {
    pub signal_amplitude: f64,
    pub pump_amplitude: f64,
    /// 1/e field radius; defaults to the Marcuse fit for the fiber's V number.
    pub width: Option<f64>,
    pub polarization: usize,
}

impl Default for ExcitationConfig {
    fn default() -> Self {
        ExcitationConfig { signal_amplitude: 30.0, pump_amplitude: 60.0, width: None, polarization: 0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NonlinearSection {
    /// Defaults: 1e-4 co-pumped, 2e-4 counter-pumped.
    pub kappa: Option<f64>,
    pub tol: f64,
    pub max_iters: usize,
    pub pump_direction: Option<PumpDirection>,
    pub damping: f64,
    pub gain_in_pml: bool,
    pub check_optimality: OptimalityCheck,
    /// Also solve the gain-free problems to correct the transfer balance for drift.
    pub baseline: bool,
}

impl Default for NonlinearSection {
    fn default() -> Self {
        let d = NonlinearConfig::default();
        NonlinearSection {
            kappa: None,
            tol: d.tol,
            max_iters: d.max_iters,
            pump_direction: None,
            damping: d.damping,
            gain_in_pml: d.gain_in_pml,
            check_optimality: OptimalityCheck::Final,
            baseline: true,
        }
    }
}

impl NonlinearSection {
    pub fn config(&self) -> NonlinearConfig {
        NonlinearConfig {
            kappa: self.kappa.unwrap_or(1e-4),
            tol: self.tol,
            max_iters: self.max_iters,
            pump_direction: self.pump_direction.unwrap_or(PumpDirection::Co),
            damping: self.damping,
            gain_in_pml: self.gain_in_pml,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MmsConfig {
    pub omega: f64,
    pub orders: Vec<usize>,
    /// Number of meshes, each a uniform refinement of the previous one.
    pub levels: usize,
    pub r_core: f64,
    pub r_cladding: f64,
    pub length: f64,
    pub n_layers: usize,
}

impl Default for MmsConfig {
    fn default() -> Self {
        MmsConfig { omega: 1.001, orders: vec![1, 2, 3], levels: 3, r_core: 0.5, r_cladding: 1.0, length: 1.0, n_layers: 1 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompareConfig {
    pub omega: f64,
    pub width: f64,
    pub length: f64,
    pub p: usize,
    pub delta_p: usize,
    pub elements_per_wavelength: Vec<usize>,
}

impl Default for CompareConfig {
    fn default() -> Self {
        CompareConfig {
            omega: 5f64.sqrt() * PI,
            width: 1.0,
            length: 16.0,
            p: 5,
            delta_p: 1,
            elements_per_wavelength: vec![1, 2, 3, 4],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleConfig {
    pub signal_power: f64,
    pub pump_power: f64,
    pub coupling: f64,
    pub length: f64,
    pub steps: usize,
    /// Number of step halvings in the convergence table.
    pub halvings: usize,
    /// Power trace (CSV) to fit the coupling against.
    pub trace: Option<PathBuf>,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig {
            signal_power: 1.0,
            pump_power: 4.0,
            coupling: 0.05,
            length: 10.0,
            steps: 20,
            halvings: 4,
            trace: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    /// Station spacing in signal wavelengths.
    pub station_spacing: f64,
    /// Points per side of the cross-section field samples.
    pub plane_points: usize,
    pub axis_points: usize,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig { station_spacing: 1.0, plane_points: 21, axis_points: 201 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub study: StudyKind,
    pub output_dir: PathBuf,
    /// Recorded in the manifest; no study draws random numbers.
    pub seed: u64,
    /// Worker threads; 0 uses every available core.
    pub threads: usize,
    pub mesh: MeshConfig,
    pub orders: OrdersConfig,
    pub material: MaterialConfig,
    pub pml: PmlConfig,
    pub excitation: ExcitationConfig,
    pub nonlinear: NonlinearSection,
    pub mms: MmsConfig,
    pub compare: CompareConfig,
    pub oracle: OracleConfig,
    pub output: OutputConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            study: StudyKind::default(),
            output_dir: PathBuf::from("out"),
            seed: 0,
            threads: 0,
            mesh: MeshConfig::default(),
            orders: OrdersConfig::default(),
            material: MaterialConfig::default(),
            pml: PmlConfig::default(),
            excitation: ExcitationConfig::default(),
            nonlinear: NonlinearSection::default(),
            mms: MmsConfig::default(),
            compare: CompareConfig::default(),
            oracle: OracleConfig::default(),
            output: OutputConfig::default(),
        }
    }
}

fn check(ok: bool, key: &str, msg: impl std::fmt::Display) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::Config(format!("`{key}`: {msg}")))
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io { path: path.display().to_string(), source })?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    /// Fill study-dependent defaults and validate every value.
    pub fn resolve(mut self) -> Result<Self> {
        let counter = self.study == StudyKind::RamanCounter;
        let needs_fiber = matches!(self.study, StudyKind::Mms | StudyKind::LinearFiber | StudyKind::RamanCo | StudyKind::RamanCounter);
        let shape = match (self.study, self.mesh.shape) {
            (StudyKind::CompareFormulations, None | Some(MeshShape::Box)) => Some(MeshShape::Box),
            (StudyKind::CompareFormulations, Some(MeshShape::Fiber)) => {
                return Err(Error::Config("`mesh.shape`: compare_formulations runs on the box waveguide, not a fiber".into()))
            }
            (_, Some(MeshShape::Box)) if needs_fiber => {
                return Err(Error::Config(format!("`mesh.shape`: study {} needs a fiber mesh", self.study.name())))
            }
            (StudyKind::OracleOnly, s) => s,
            (_, _) => Some(MeshShape::Fiber),
        };
        self.mesh.shape = shape;
        self.mesh.wavelengths.get_or_insert(if counter { 12.0 } else { 10.0 });
        self.mesh.n_layers.get_or_insert(if counter { 48 } else { 40 });
        let start = self.mesh.pml_start_fraction.unwrap_or(if counter { self.mesh.pml_fraction } else { 0.0 });
        self.mesh.pml_start_fraction = Some(start);
        let dir = if counter { PumpDirection::Counter } else { PumpDirection::Co };
        if matches!(self.study, StudyKind::RamanCo | StudyKind::RamanCounter) {
            if let Some(d) = self.nonlinear.pump_direction {
                check(d == dir, "nonlinear.pump_direction", format!("study {} implies {dir:?}", self.study.name()))?;
            }
            self.nonlinear.pump_direction = Some(dir);
        }
        self.nonlinear.kappa.get_or_insert(if counter { 2e-4 } else { 1e-4 });
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let m = &self.mesh;
        check(m.r_core > 0.0 && m.r_cladding > m.r_core, "mesh.r_cladding", "need 0 < r_core < r_cladding")?;
        check(m.wavelengths.is_none_or(|w| w > 0.0), "mesh.wavelengths", "must be positive")?;
        check(m.n_layers.is_none_or(|n| n >= 2), "mesh.n_layers", "must be at least 2")?;
        check((0.0..1.0).contains(&m.pml_fraction), "mesh.pml_fraction", "must lie in [0, 1)")?;
        let start = m.pml_start_fraction.unwrap_or(0.0);
        check(start >= 0.0 && start + m.pml_fraction < 1.0, "mesh.pml_start_fraction", "layers must leave a physical region")?;
        check((1..=3).contains(&m.geometry_order), "mesh.geometry_order", "must be 1, 2 or 3")?;
        check(m.cladding_rings >= 1, "mesh.cladding_rings", "must be at least 1")?;
        check(m.cladding_grading > 0.0, "mesh.cladding_grading", "must be positive")?;
        check((1..=8).contains(&self.orders.p), "orders.p", "must lie in 1..=8")?;
        check((1..=3).contains(&self.orders.delta_p), "orders.delta_p", "must lie in 1..=3")?;
        let mat = &self.material;
        check(mat.n_cladding >= 1.0, "material.n_cladding", "must be at least 1")?;
        check(mat.numerical_aperture > 0.0, "material.numerical_aperture", "must be positive")?;
        check(mat.n_core.is_none_or(|n| n > mat.n_cladding), "material.n_core", "must exceed n_cladding")?;
        check(mat.omega_signal > 0.0, "material.omega_signal", "must be positive")?;
        check(mat.raman_shift_hz > 0.0 && mat.omega_reference > 0.0, "material.raman_shift_hz", "shift and reference must be positive")?;
        check(self.pml.target >= 1.0 && self.pml.target.is_finite(), "pml.target", "must be a finite value >= 1")?;
        check(self.pml.exponent >= 1, "pml.exponent", "must be at least 1")?;
        let ex = &self.excitation;
        check(ex.signal_amplitude > 0.0, "excitation.signal_amplitude", "must be positive")?;
        check(ex.pump_amplitude > 0.0, "excitation.pump_amplitude", "must be positive")?;
        check(ex.width.is_none_or(|w| w > 0.0), "excitation.width", "must be positive")?;
        check(ex.polarization <= 1, "excitation.polarization", "must be 0 (x) or 1 (y)")?;
        let nl = &self.nonlinear;
        check(nl.kappa.is_none_or(|k| k >= 0.0 && k.is_finite()), "nonlinear.kappa", "must be finite and >= 0")?;
        check(nl.tol > 0.0, "nonlinear.tol", "must be positive")?;
        check(nl.max_iters >= 1, "nonlinear.max_iters", "must be at least 1")?;
        check(nl.damping > 0.0 && nl.damping <= 1.0, "nonlinear.damping", "must lie in (0, 1]")?;
        let mms = &self.mms;
        check(!mms.orders.is_empty() && mms.orders.iter().all(|p| (1..=8).contains(p)), "mms.orders", "need orders in 1..=8")?;
        check(mms.levels >= 1, "mms.levels", "must be at least 1")?;
        check(mms.r_core > 0.0 && mms.r_cladding > mms.r_core && mms.length > 0.0, "mms.r_cladding", "need 0 < r_core < r_cladding and length > 0")?;
        check(mms.n_layers >= 1, "mms.n_layers", "must be at least 1")?;
        let c = &self.compare;
        check(c.omega > PI / c.width, "compare.omega", "must exceed the TE10 cut-off pi / width")?;
        check(c.length > 0.0 && c.width > 0.0, "compare.length", "box extents must be positive")?;
        check((1..=8).contains(&c.p), "compare.p", "must lie in 1..=8")?;
        check((1..=3).contains(&c.delta_p), "compare.delta_p", "must lie in 1..=3")?;
        check(!c.elements_per_wavelength.is_empty() && !c.elements_per_wavelength.contains(&0), "compare.elements_per_wavelength", "need positive entries")?;
        let o = &self.oracle;
        check(o.signal_power > 0.0 && o.pump_power > 0.0, "oracle.signal_power", "initial powers must be positive")?;
        check(o.coupling.is_finite(), "oracle.coupling", "must be finite")?;
        check(o.length > 0.0, "oracle.length", "must be positive")?;
        check(o.steps >= 1, "oracle.steps", "must be at least 1")?;
        check(self.output.station_spacing > 0.0, "output.station_spacing", "must be positive")?;
        check(self.output.plane_points >= 1 && self.output.axis_points >= 1, "output.plane_points", "must be at least 1")?;
        Ok(())
    }

    pub fn length(&self) -> f64 {
        self.mesh.wavelengths.unwrap_or(10.0) * self.material.wavelength()
    }
}
