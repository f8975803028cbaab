//! Simple fixed-point iterations between the signal and pump Maxwell systems,
//! coupled through an irradiance-dependent real conductivity.

use std::fmt::Write as _;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::basis::{gauss_rule, Op};
use crate::dpg::{BoundaryConditions, Constraint, Discretization, FieldSolution, SolveStats};
use crate::error::{Error, Result};
use crate::maxwell::{
    cross_c, eval_var, upsilon, uw_difference_norm, Excitation, GainField, Material, Orders, Ultraweak, E, E_HAT, H,
};
use crate::mesh::{BoundaryTag, HexMesh, PmlZone};
use crate::pml::PmlStretch;
use crate::postprocess::{power_trace, PowerTrace};

/// |Re(E x H*)| per element at the tensor points of a Gauss rule.
#[derive(Clone, Debug, PartialEq)]
pub struct IrradianceField {
    pub points_1d: usize,
    pub values: Vec<Vec<f64>>,
}

impl IrradianceField {
    pub fn max(&self) -> f64 {
        self.values.iter().flatten().fold(0.0, |a, &b| a.max(b))
    }
}

pub fn compute_irradiance(disc: &Discretization, sol: &FieldSolution) -> Result<IrradianceField> {
    use rayon::prelude::*;
    let n = disc.quad_points;
    let r = gauss_rule(n);
    let pts = crate::basis::tensor_points([&r.points, &r.points, &r.points]);
    let values = (0..disc.mesh.num_elements())
        .into_par_iter()
        .map(|e| {
            let geo = disc.mesh.geometry_tensor(e, [&r.points, &r.points, &r.points]);
            let ev = eval_var(disc, sol, e, E, Op::Value, &pts, &geo)?;
            let hv = eval_var(disc, sol, e, H, Op::Value, &pts, &geo)?;
            Ok(ev
                .iter()
                .zip(&hv)
                .map(|(a, b)| {
                    let s = cross_c(*a, b.map(|v| v.conj()));
                    (s[0].re * s[0].re + s[1].re * s[1].re + s[2].re * s[2].re).sqrt()
                })
                .collect())
        })
        .collect::<Result<Vec<Vec<f64>>>>()?;
    Ok(IrradianceField { points_1d: n, values })
}

/// Face quadrature weights (times area) and irradiance on the plane z = z0.
pub fn section_irradiance(disc: &Discretization, sol: &FieldSolution, z0: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    let mesh = &*disc.mesh;
    let faces = mesh.faces_at_z(z0);
    if faces.is_empty() {
        return Err(Error::Station(format!("z = {z0} is not a layer interface of the mesh")));
    }
    let rule = gauss_rule(disc.quad_points);
    let (mut w, mut v) = (Vec::new(), Vec::new());
    for f in faces {
        let (e, lf) = mesh.faces[f].sides[0];
        let fc = crate::dpg::face_context(mesh, e, lf, &rule);
        let ev = eval_var(disc, sol, e, E, Op::Value, &fc.ref_points, &fc.geo)?;
        let hv = eval_var(disc, sol, e, H, Op::Value, &fc.ref_points, &fc.geo)?;
        for q in 0..fc.ref_points.len() {
            let s = cross_c(ev[q], hv[q].map(|c| c.conj()));
            w.push(fc.weights[q] * fc.area[q]);
            v.push((s[0].re * s[0].re + s[1].re * s[1].re + s[2].re * s[2].re).sqrt());
        }
    }
    Ok((w, v))
}

/// Conductivity -n kappa Upsilon I of field l driven by the irradiance of the other field.
/// Elements in an absorbing layer get zero unless `in_pml` is set.
pub fn gain_field(
    other: &IrradianceField,
    mesh: &HexMesh,
    material: &Material,
    kappa: f64,
    upsilon_l: f64,
    in_pml: bool,
) -> GainField {
    let values = other
        .values
        .iter()
        .enumerate()
        .map(|(e, iv)| {
            let el = &mesh.elements[e];
            if el.tag.pml.is_some() && !in_pml {
                return vec![0.0; iv.len()];
            }
            let n = material.index(el.tag.region);
            iv.iter().map(|i| -n * kappa * upsilon_l * i).collect()
        })
        .collect();
    GainField { points_1d: other.points_1d, values }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PumpDirection {
    /// Pump launched at z = 0 with the signal.
    Co,
    /// Pump launched at z = L, travelling towards z = 0.
    Counter,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NonlinearConfig {
    pub kappa: f64,
    pub tol: f64,
    pub max_iters: usize,
    pub pump_direction: PumpDirection,
    /// Weight of the new gain field; 1 is the plain fixed point.
    pub damping: f64,
    pub gain_in_pml: bool,
}

impl Default for NonlinearConfig {
    fn default() -> Self {
        NonlinearConfig {
            kappa: 1e-4,
            tol: 1e-3,
            max_iters: 25,
            pump_direction: PumpDirection::Co,
            damping: 1.0,
            gain_in_pml: false,
        }
    }
}

impl NonlinearConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.kappa >= 0.0 && self.kappa.is_finite()) {
            return Err(Error::Config(format!("kappa must be finite and >= 0 (got {})", self.kappa)));
        }
        if !(self.tol > 0.0) || self.max_iters == 0 {
            return Err(Error::Config("tol must be > 0 and max_iters >= 1".into()));
        }
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(Error::Config(format!("damping must lie in (0, 1] (got {})", self.damping)));
        }
        Ok(())
    }
}

/// One of the two coupled fields.
#[derive(Clone, Debug)]
pub struct FieldSetup {
    pub omega: f64,
    pub excitation: Excitation,
    pub stretch: PmlStretch,
}

impl FieldSetup {
    fn boundary_conditions(&self) -> BoundaryConditions {
        let far = match self.excitation.face {
            BoundaryTag::ZMin => BoundaryTag::ZMax,
            _ => BoundaryTag::ZMin,
        };
        BoundaryConditions::new()
            .with(E_HAT, BoundaryTag::Lateral, Constraint::Zero)
            .with(E_HAT, far, Constraint::Zero)
            .with(E_HAT, self.excitation.face, Constraint::Data(self.excitation.data()))
    }
}

#[derive(Clone)]
pub struct RamanProblem {
    pub mesh: Arc<HexMesh>,
    pub material: Material,
    pub orders: Orders,
    pub signal: FieldSetup,
    pub pump: FieldSetup,
    pub config: NonlinearConfig,
}

fn zone_face(zone: PmlZone) -> BoundaryTag {
    match zone {
        PmlZone::Start => BoundaryTag::ZMin,
        PmlZone::End => BoundaryTag::ZMax,
    }
}

impl RamanProblem {
    /// Check that each field's absorbing layer sits at the end opposite to its launch face.
    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        self.orders.validate()?;
        self.material.validate_fiber()?;
        for (name, f) in [("signal", &self.signal), ("pump", &self.pump)] {
            f.excitation.validate()?;
            if zone_face(f.stretch.zone) == f.excitation.face {
                return Err(Error::Config(format!(
                    "{name} PML zone {:?} covers its own excitation face {:?}",
                    f.stretch.zone, f.excitation.face
                )));
            }
            if self.mesh.pml_range(f.stretch.zone).is_none() {
                return Err(Error::Config(format!("mesh has no {:?} PML zone for the {name}", f.stretch.zone)));
            }
        }
        let expected = match self.config.pump_direction {
            PumpDirection::Co => BoundaryTag::ZMin,
            PumpDirection::Counter => BoundaryTag::ZMax,
        };
        if self.pump.excitation.face != expected || self.signal.excitation.face != BoundaryTag::ZMin {
            return Err(Error::Config(format!(
                "pump direction {:?} needs the signal on z_min and the pump on {expected:?}",
                self.config.pump_direction
            )));
        }
        Ok(())
    }

    /// Swap the pump to the z = L face with its absorbing layer next to z = 0.
    pub fn configure_counter_pumped(mut self) -> Result<Self> {
        let start = PmlStretch::for_mesh(&self.mesh, PmlZone::Start, self.pump.stretch.kind, self.pump.omega)
            .map_err(|_| Error::Config("counter-pumped runs need a PML zone at z = 0 (pml_start_fraction)".into()))?;
        let mut start = start;
        start.exponent = self.pump.stretch.exponent;
        // keep the attenuation of the layer being replaced
        let target = self.pump.stretch.log_attenuation(1.0, 0.0).exp();
        self.pump.stretch = crate::pml::calibrate(start, target, 0.0)?;
        self.pump.excitation.face = BoundaryTag::ZMax;
        self.config.pump_direction = PumpDirection::Counter;
        self.validate()?;
        Ok(self)
    }

    pub fn upsilons(&self) -> [f64; 2] {
        upsilon(self.signal.omega, self.pump.omega)
    }

    fn operator(&self, f: &FieldSetup, gain: &Arc<GainField>) -> Result<Ultraweak> {
        Ultraweak::new(f.omega, self.material.clone(), &self.orders).with_stretch(f.stretch.clone()).with_gain(gain.clone())
    }
}

#[derive(Clone, Debug)]
pub struct IterationRecord {
    pub iteration: usize,
    pub delta: f64,
    pub signal_out: f64,
    pub pump_out: f64,
    pub optimality: [f64; 2],
}

pub struct NonlinearState {
    pub iteration: usize,
    pub signal: FieldSolution,
    pub pump: FieldSolution,
    pub signal_disc: Discretization,
    pub pump_disc: Discretization,
    pub gain_signal: Arc<GainField>,
    pub gain_pump: Arc<GainField>,
    pub delta: Vec<f64>,
    pub history: Vec<IterationRecord>,
    pub converged: bool,
    pub stats: Vec<SolveStats>,
}

impl NonlinearState {
    pub fn iterations_csv(&self) -> String {
        let mut s = String::from("iteration,delta,P_signal_out,P_pump_out\n");
        for r in &self.history {
            let _ = writeln!(s, "{},{:e},{:e},{:e}", r.iteration, r.delta, r.signal_out, r.pump_out);
        }
        s
    }
}

/// Output power of a field: flux through the last physical interface before its absorbing layer.
fn output_power(disc: &Discretization, sol: &FieldSolution, f: &FieldSetup) -> Result<f64> {
    let z = f.stretch.z0;
    crate::postprocess::cross_section_power(disc, sol, z)
}

/// When to recompute the full residual and its optimality defect.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimalityCheck {
    #[default]
    Never,
    /// Only for the two solves of the last iteration.
    Final,
    Every,
}

/// Options for what to measure during iterations.
#[derive(Clone, Copy, Debug, Default)]
pub struct IterateOptions {
    pub optimality: OptimalityCheck,
}

pub fn simple_iterate(problem: &RamanProblem, opts: IterateOptions) -> Result<NonlinearState> {
    problem.validate()?;
    let mesh = &problem.mesh;
    let cfg = &problem.config;
    let q = problem.orders.quad_points();
    let [ups_s, ups_p] = problem.upsilons();
    let mut gain_s = Arc::new(GainField::zeros(mesh, q));
    let mut gain_p = Arc::new(GainField::zeros(mesh, q));
    let probe_s = problem.operator(&problem.signal, &gain_s)?;
    let probe_p = problem.operator(&problem.pump, &gain_p)?;
    let disc_s = Discretization::new(mesh.clone(), &probe_s, &problem.signal.boundary_conditions())?;
    let disc_p = Discretization::new(mesh.clone(), &probe_p, &problem.pump.boundary_conditions())?;
    let mut prev: Option<FieldSolution> = None;
    let mut out_p: Option<FieldSolution> = None;
    let mut delta = Vec::new();
    let mut history = Vec::new();
    let mut stats = Vec::new();
    let mut converged = false;
    let mut n = 0;
    while n < cfg.max_iters {
        n += 1;
        let every = opts.optimality == OptimalityCheck::Every;
        let form_s = problem.operator(&problem.signal, &gain_s)?;
        let (us, st_s) = disc_s.solve(&form_s)?;
        let opt_s = if every { disc_s.residual(&form_s, &us)?.optimality } else { f64::NAN };
        let is = compute_irradiance(&disc_s, &us)?;
        gain_p = Arc::new(relax(&gain_p, gain_field(&is, mesh, &problem.material, cfg.kappa, ups_p, cfg.gain_in_pml), cfg.damping));
        let form_p = problem.operator(&problem.pump, &gain_p)?;
        let (up, st_p) = disc_p.solve(&form_p)?;
        let opt_p = if every { disc_p.residual(&form_p, &up)?.optimality } else { f64::NAN };
        let ip = compute_irradiance(&disc_p, &up)?;
        gain_s = Arc::new(relax(&gain_s, gain_field(&ip, mesh, &problem.material, cfg.kappa, ups_s, cfg.gain_in_pml), cfg.damping));
        let d = match &prev {
            None => f64::INFINITY,
            Some(old) => {
                let (diff, base) = uw_difference_norm(&disc_s, &us, old, q)?;
                if base > 0.0 {
                    (diff / base).sqrt()
                } else if diff == 0.0 {
                    0.0
                } else {
                    f64::INFINITY
                }
            }
        };
        delta.push(d);
        history.push(IterationRecord {
            iteration: n,
            delta: d,
            signal_out: output_power(&disc_s, &us, &problem.signal)?,
            pump_out: output_power(&disc_p, &up, &problem.pump)?,
            optimality: [opt_s, opt_p],
        });
        stats.push(st_s);
        stats.push(st_p);
        let done = d <= cfg.tol;
        if opts.optimality == OptimalityCheck::Final && (done || n == cfg.max_iters) {
            let rec = history.last_mut().expect("record just pushed");
            rec.optimality = [disc_s.residual(&form_s, &us)?.optimality, disc_p.residual(&form_p, &up)?.optimality];
        }
        prev = Some(us);
        out_p = Some(up);
        if done {
            converged = true;
            break;
        }
    }
    Ok(NonlinearState {
        iteration: n,
        signal: prev.expect("at least one iteration"),
        pump: out_p.expect("at least one iteration"),
        signal_disc: disc_s,
        pump_disc: disc_p,
        gain_signal: gain_s,
        gain_pump: gain_p,
        delta,
        history,
        converged,
        stats,
    })
}

fn relax(old: &GainField, new: GainField, theta: f64) -> GainField {
    if theta >= 1.0 {
        return new;
    }
    let values = new
        .values
        .iter()
        .zip(&old.values)
        .map(|(a, b)| a.iter().zip(b).map(|(x, y)| theta * x + (1.0 - theta) * y).collect())
        .collect();
    GainField { points_1d: new.points_1d, values }
}

/// Gain-free traces of both fields on the problem's discretizations.
pub fn linear_baseline(problem: &RamanProblem, stations: &[f64]) -> Result<PowerTrace> {
    problem.validate()?;
    let zero = Arc::new(GainField::zeros(&problem.mesh, problem.orders.quad_points()));
    let solve = |f: &FieldSetup| -> Result<(Discretization, FieldSolution)> {
        let form = problem.operator(f, &zero)?;
        let disc = Discretization::new(problem.mesh.clone(), &form, &f.boundary_conditions())?;
        let (sol, _) = disc.solve(&form)?;
        Ok((disc, sol))
    };
    let (ds, us) = solve(&problem.signal)?;
    let (dp, up) = solve(&problem.pump)?;
    power_trace((&ds, &us), Some((&dp, &up)), stations)
}

/// Power exchanged between the launch and exit stations of each field.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TransferBalance {
    pub signal_gain: f64,
    pub pump_loss: f64,
    /// Same quantities with the gain-free drift of each field divided out.
    pub signal_gain_corrected: f64,
    pub pump_loss_corrected: f64,
}

impl TransferBalance {
    pub fn ratio(&self) -> f64 {
        self.pump_loss_corrected / self.signal_gain_corrected
    }
}

/// Compare pump loss with signal gain. The baseline trace removes the slow power
/// drift that the discretization shows even without coupling.
pub fn transfer_balance(trace: &PowerTrace, baseline: &PowerTrace, direction: PumpDirection) -> Result<TransferBalance> {
    let n = trace.len();
    if n < 2 || baseline.len() != n || baseline.z.iter().zip(&trace.z).any(|(a, b)| (a - b).abs() > 1e-12) {
        return Err(Error::Usage("trace and baseline need the same two or more stations".into()));
    }
    let (pin, pout) = match direction {
        PumpDirection::Co => (0, n - 1),
        PumpDirection::Counter => (n - 1, 0),
    };
    let corr = |v: &[f64], b: &[f64], i: usize, r: usize| v[i] * b[r] / b[i];
    Ok(TransferBalance {
        signal_gain: trace.signal[n - 1] - trace.signal[0],
        pump_loss: trace.pump[pin] - trace.pump[pout],
        signal_gain_corrected: corr(&trace.signal, &baseline.signal, n - 1, 0) - trace.signal[0],
        pump_loss_corrected: trace.pump[pin] - corr(&trace.pump, &baseline.pump, pout, pin),
    })
}

/// Power trace of a converged state at the given stations.
pub fn state_trace(state: &NonlinearState, stations: &[f64]) -> Result<PowerTrace> {
    power_trace((&state.signal_disc, &state.signal), Some((&state.pump_disc, &state.pump)), stations)
}

/// Interfaces between the absorbing layers spaced by at least `spacing`.
pub fn physical_stations(problem: &RamanProblem, spacing: f64) -> Vec<f64> {
    let mesh = &problem.mesh;
    let lo = mesh.pml_range(PmlZone::Start).map_or(0.0, |r| r[1]);
    let hi = mesh.pml_range(PmlZone::End).map_or(mesh.length, |r| r[0]);
    let tol = 1e-9 * mesh.length;
    let mut out: Vec<f64> = Vec::new();
    for z in mesh.layer_interfaces() {
        if z >= lo - tol && z <= hi + tol && out.last().is_none_or(|&l| z - l >= spacing - tol) {
            out.push(z);
        }
    }
    out
}
