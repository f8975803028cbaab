//! Study drivers behind the command line. Each returns a serializable report plus
//! the CSV tables it produced; nothing touches the file system until
//! [`write_outputs`].

use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use serde::Serialize;

use crate::config::{MeshShape, RunConfig, StudyKind};
use crate::dpg::{BoundaryConditions, Constraint, Discretization, FieldSolution, SolveStats};
use crate::error::{Error, Result};
use crate::maxwell::{
    exact_dirichlet, hcurl_error, l2_projection_error, marcuse_width, uw_l2_error, Excitation, ExactField, Material,
    Orders, Primal, SineField, Te10, Ultraweak, E_HAT, PRIMAL_E,
};
use crate::mesh::{build_box_mesh, build_fiber_mesh_with, refine_uniform, BoundaryTag, FiberMeshParams, HexMesh, PmlZone};
use crate::oracle::{self, ComparisonReport, PairParams};
use crate::pml::{calibrate, PmlStretch};
use crate::postprocess::{
    dominance_ratio, line_points, plane_points, power_trace, sample_fields, samples_to_csv,
    FieldSample, PowerTrace,
};
use crate::raman::{
    linear_baseline, physical_stations, section_irradiance, simple_iterate, state_trace, transfer_balance, FieldSetup, IterateOptions,
    IterationRecord, PumpDirection, RamanProblem, TransferBalance,
};

/// Condensation and least-squares diagnostics of one linear solve.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct SolveCheck {
    pub hermitian_defect: f64,
    pub optimality: f64,
    pub free_dofs: usize,
}

impl SolveCheck {
    fn new(stats: &SolveStats, optimality: f64) -> Self {
        SolveCheck { hermitian_defect: stats.hermitian_defect, optimality, free_dofs: stats.num_free }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct MmsRow {
    pub p: usize,
    pub level: usize,
    pub elements: usize,
    pub dofs: usize,
    pub rel_error: f64,
    pub check: SolveCheck,
}

#[derive(Clone, Debug, Serialize)]
pub struct MmsReport {
    pub rows: Vec<MmsRow>,
    /// (p, slope of log error against log dofs over the two finest meshes)
    pub slopes: Vec<(usize, f64)>,
}

#[derive(Clone, Debug, Serialize)]
pub struct LinearReport {
    pub trace: Vec<(f64, f64)>,
    /// Largest relative deviation of a station power from the station mean.
    pub max_deviation: f64,
    pub dominance_ratio: f64,
    /// Largest field magnitude on the terminal face over the largest at the launch face.
    pub terminal_ratio: f64,
    /// Closed-form amplitude reduction across the layer at beta = n_cladding omega.
    pub pml_attenuation: f64,
    pub check: SolveCheck,
}

#[derive(Clone, Debug, Serialize)]
pub struct CompareRow {
    pub elements_per_wavelength: usize,
    pub nz: usize,
    pub uw_error: f64,
    pub l2_proj_error: f64,
    pub primal_error: f64,
    pub hcurl_proj_error: f64,
    pub check: SolveCheck,
    pub primal_check: SolveCheck,
}

impl CompareRow {
    pub fn uw_ratio(&self) -> f64 {
        self.uw_error / self.l2_proj_error
    }
    pub fn primal_ratio(&self) -> f64 {
        self.primal_error / self.hcurl_proj_error
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct CompareReport {
    pub rows: Vec<CompareRow>,
}

#[derive(Clone, Debug, Serialize)]
pub struct IterationSummary {
    pub iteration: usize,
    pub delta: f64,
    pub signal_out: f64,
    pub pump_out: f64,
    pub optimality: [f64; 2],
}

impl From<&IterationRecord> for IterationSummary {
    fn from(r: &IterationRecord) -> Self {
        IterationSummary {
            iteration: r.iteration,
            delta: r.delta,
            signal_out: r.signal_out,
            pump_out: r.pump_out,
            optimality: r.optimality,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct RamanReport {
    pub direction: PumpDirection,
    pub kappa: f64,
    pub converged: bool,
    pub iterations: usize,
    pub history: Vec<IterationSummary>,
    pub stations: Vec<f64>,
    pub signal: Vec<f64>,
    pub pump: Vec<f64>,
    /// Signal non-decreasing along +z at every station.
    pub signal_monotone: bool,
    /// Pump non-increasing along its own direction of travel.
    pub pump_monotone: bool,
    pub balance: Option<TransferBalance>,
    pub hermitian_defect: f64,
    pub comparison: Option<ComparisonReport>,
    /// Coupling the power model predicts from kappa and the launch effective area.
    pub predicted_coupling: Option<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct OracleRow {
    pub steps: usize,
    pub error: f64,
    pub ratio: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct OracleReport {
    pub rows: Vec<OracleRow>,
    pub flux_drift: f64,
    pub closed_form_error: f64,
    pub comparison: Option<ComparisonReport>,
}

#[derive(Clone, Debug, Serialize)]
#[serde(tag = "study", rename_all = "snake_case")]
pub enum StudyReport {
    Mms(MmsReport),
    LinearFiber(LinearReport),
    CompareFormulations(CompareReport),
    Raman(RamanReport),
    OracleOnly(OracleReport),
}

pub struct StudyOutput {
    pub report: StudyReport,
    /// (file name, contents), written into the output directory.
    pub files: Vec<(String, String)>,
}

pub fn fiber_mesh(cfg: &RunConfig) -> Result<Arc<HexMesh>> {
    let m = &cfg.mesh;
    let mesh = build_fiber_mesh_with(&FiberMeshParams {
        r_core: m.r_core,
        r_cladding: m.r_cladding,
        length: cfg.length(),
        n_layers: m.n_layers.unwrap_or(40),
        pml_fraction: m.pml_fraction,
        pml_start_fraction: m.pml_start_fraction.unwrap_or(0.0),
        geometry_order: m.geometry_order,
        cladding_rings: m.cladding_rings,
        cladding_grading: m.cladding_grading,
        section_level: m.section_level,
    })?;
    Ok(Arc::new(mesh))
}

fn launch(cfg: &RunConfig, material: &Material, amplitude: f64) -> Excitation {
    let v = material.v_number(cfg.material.omega_signal, cfg.mesh.r_core);
    Excitation {
        face: BoundaryTag::ZMin,
        width: cfg.excitation.width.unwrap_or_else(|| marcuse_width(v, cfg.mesh.r_core)),
        amplitude,
        polarization: cfg.excitation.polarization,
    }
}

fn stretch(cfg: &RunConfig, mesh: &HexMesh, zone: PmlZone, omega: f64) -> Result<PmlStretch> {
    let mut s = PmlStretch::for_mesh(mesh, zone, cfg.pml.kind, omega)?;
    s.exponent = cfg.pml.exponent;
    calibrate(s, cfg.pml.target, 0.0)
}

fn magnitude(s: &FieldSample) -> f64 {
    s.value.map_or(0.0, |(e, h)| e.iter().chain(h.iter()).map(|v| v.norm_sqr()).sum::<f64>().sqrt())
}

fn max_magnitude(samples: &[FieldSample]) -> f64 {
    samples.iter().map(magnitude).fold(0.0, f64::max)
}

fn solve_checked(
    disc: &Discretization,
    form: &dyn crate::dpg::BrokenFormulation,
    optimality: bool,
) -> Result<(FieldSolution, SolveStats, SolveCheck)> {
    let (sol, stats) = disc.solve(form)?;
    let opt = if optimality { disc.residual(form, &sol)?.optimality } else { f64::NAN };
    let check = SolveCheck::new(&stats, opt);
    Ok((sol, stats, check))
}

pub fn run_mms(cfg: &RunConfig) -> Result<StudyOutput> {
    let c = &cfg.mms;
    let field: Arc<dyn ExactField> = Arc::new(SineField { omega: c.omega });
    let all = [BoundaryTag::ZMin, BoundaryTag::ZMax, BoundaryTag::Lateral];
    let base = build_fiber_mesh_with(&FiberMeshParams {
        r_core: c.r_core,
        r_cladding: c.r_cladding,
        length: c.length,
        n_layers: c.n_layers,
        pml_fraction: 0.0,
        pml_start_fraction: 0.0,
        geometry_order: cfg.mesh.geometry_order,
        cladding_rings: 1,
        cladding_grading: 1.0,
        section_level: 0,
    })?;
    let mut meshes = vec![Arc::new(base)];
    for _ in 1..c.levels {
        let next = refine_uniform(meshes.last().expect("nonempty"))?;
        meshes.push(Arc::new(next));
    }
    let mut rows = Vec::new();
    let mut slopes = Vec::new();
    for &p in &c.orders {
        let orders = Orders { p, delta_p: cfg.orders.delta_p, quad_extra: cfg.orders.quad_extra };
        let form = Ultraweak::new(c.omega, Material::uniform(1.0), &orders).with_source(field.clone());
        for (level, mesh) in meshes.iter().enumerate() {
            let disc = Discretization::new(mesh.clone(), &form, &exact_dirichlet(E_HAT, &all, field.clone()))?;
            let (sol, stats, check) = solve_checked(&disc, &form, true)?;
            let (err, nrm) = uw_l2_error(&disc, &sol, field.as_ref(), p + 4)?;
            rows.push(MmsRow {
                p,
                level,
                elements: mesh.num_elements(),
                dofs: stats.num_shared + stats.num_local,
                rel_error: (err / nrm).sqrt(),
                check,
            });
        }
        let r: Vec<&MmsRow> = rows.iter().filter(|r| r.p == p).collect();
        if r.len() >= 2 {
            let (a, b) = (r[r.len() - 2], r[r.len() - 1]);
            slopes.push((p, (b.rel_error / a.rel_error).ln() / (b.dofs as f64 / a.dofs as f64).ln()));
        }
    }
    let mut csv = String::from("p,level,elements,dofs,rel_error\n");
    for r in &rows {
        let _ = writeln!(csv, "{},{},{},{},{:e}", r.p, r.level, r.elements, r.dofs, r.rel_error);
    }
    Ok(StudyOutput { report: StudyReport::Mms(MmsReport { rows, slopes }), files: vec![("convergence.csv".into(), csv)] })
}

pub fn run_linear_fiber(cfg: &RunConfig) -> Result<StudyOutput> {
    let mesh = fiber_mesh(cfg)?;
    let material = cfg.material.material();
    material.validate_fiber()?;
    let omega = cfg.material.omega_signal;
    let orders = cfg.orders.orders();
    let st = stretch(cfg, &mesh, PmlZone::End, omega)?;
    let ex = launch(cfg, &material, cfg.excitation.signal_amplitude);
    ex.validate()?;
    let form = Ultraweak::new(omega, material.clone(), &orders).with_stretch(st.clone());
    let bc = BoundaryConditions::new()
        .with(E_HAT, BoundaryTag::Lateral, Constraint::Zero)
        .with(E_HAT, BoundaryTag::ZMax, Constraint::Zero)
        .with(E_HAT, BoundaryTag::ZMin, Constraint::Data(ex.data()));
    let disc = Discretization::new(mesh.clone(), &form, &bc)?;
    let (sol, _, check) = solve_checked(&disc, &form, true)?;
    let lam = cfg.material.wavelength();
    let zp = st.z0;
    let stations = crate::postprocess::stations(&disc, 0.0, zp, cfg.output.station_spacing * lam);
    let trace = power_trace((&disc, &sol), None, &stations)?;
    let mean = trace.signal.iter().sum::<f64>() / trace.len() as f64;
    let max_deviation = trace.signal.iter().map(|p| (p - mean).abs() / mean).fold(0.0, f64::max);
    let half = 1.5 * cfg.mesh.r_core;
    let n = cfg.output.plane_points;
    let at_pml = sample_fields(&disc, &sol, &plane_points(zp, half, n))?;
    let entry = sample_fields(&disc, &sol, &plane_points(0.0, half, n))?;
    let terminal = sample_fields(&disc, &sol, &plane_points(mesh.length * (1.0 - 1e-9), half, n))?;
    let axis = sample_fields(&disc, &sol, &line_points([0.0; 3], [0.0, 0.0, mesh.length], cfg.output.axis_points))?;
    let report = LinearReport {
        trace: trace.z.iter().copied().zip(trace.signal.iter().copied()).collect(),
        max_deviation,
        dominance_ratio: dominance_ratio(&at_pml),
        terminal_ratio: max_magnitude(&terminal) / max_magnitude(&entry),
        pml_attenuation: st.log_attenuation(material.n_cladding, 0.0).exp(),
        check,
    };
    Ok(StudyOutput {
        report: StudyReport::LinearFiber(report),
        files: vec![
            ("power.csv".into(), trace.to_csv()),
            ("fields_section.csv".into(), samples_to_csv(&at_pml)),
            ("fields_axis.csv".into(), samples_to_csv(&axis)),
        ],
    })
}

pub fn run_compare(cfg: &RunConfig) -> Result<StudyOutput> {
    let c = &cfg.compare;
    let te = Te10 { omega: c.omega, amplitude: 1.0, sigma: 0.0 };
    if c.width != 1.0 {
        return Err(Error::Config("`compare.width`: the TE10 reference field needs a unit-width guide".into()));
    }
    let wavelength = 2.0 * std::f64::consts::PI / te.beta().re;
    let gamma = te.gamma();
    let field: Arc<dyn ExactField> = Arc::new(te);
    let orders = Orders { p: c.p, delta_p: c.delta_p, quad_extra: cfg.orders.quad_extra };
    let q = c.p + 4;
    let walls = [BoundaryTag::ZMin, BoundaryTag::Lateral];
    let mut rows = Vec::new();
    for &k in &c.elements_per_wavelength {
        let nz = ((c.length / wavelength) * k as f64).round().max(1.0) as usize;
        let mesh = Arc::new(build_box_mesh([c.width, c.width, c.length], [1, 1, nz])?);
        let uw = Ultraweak::new(c.omega, Material::uniform(1.0), &orders).with_impedance(BoundaryTag::ZMax, gamma)?;
        let d = Discretization::new(mesh.clone(), &uw, &exact_dirichlet(E_HAT, &walls, field.clone()))?;
        let (s, _, check) = solve_checked(&d, &uw, true)?;
        let (e, n) = uw_l2_error(&d, &s, field.as_ref(), q)?;
        let uw_error = (e / n).sqrt();
        let (e, n) = l2_projection_error(&mesh, c.p, field.as_ref(), q)?;
        let l2_proj_error = (e / n).sqrt();
        let pr = Primal::new(&mesh, c.omega, Material::uniform(1.0), &orders)?.with_impedance(BoundaryTag::ZMax, gamma);
        let d = Discretization::new(mesh.clone(), &pr, &exact_dirichlet(PRIMAL_E, &walls, field.clone()))?;
        let (s, _, primal_check) = solve_checked(&d, &pr, true)?;
        let (e, n) = hcurl_error(&d, &s, PRIMAL_E, field.as_ref(), q)?;
        let primal_error = (e / n).sqrt();
        let hp = crate::maxwell::HcurlProjection::new(c.p, field.clone(), q);
        let d = Discretization::new(mesh.clone(), &hp, &BoundaryConditions::new())?;
        let (s, _) = d.solve(&hp)?;
        let (e, n) = hcurl_error(&d, &s, 0, field.as_ref(), q)?;
        rows.push(CompareRow {
            elements_per_wavelength: k,
            nz,
            uw_error,
            l2_proj_error,
            primal_error,
            hcurl_proj_error: (e / n).sqrt(),
            check,
            primal_check,
        });
    }
    let mut csv = String::from("elements_per_wavelength,nz,uw_error,l2_proj_error,primal_error,hcurl_proj_error\n");
    for r in &rows {
        let _ = writeln!(
            csv,
            "{},{},{:e},{:e},{:e},{:e}",
            r.elements_per_wavelength, r.nz, r.uw_error, r.l2_proj_error, r.primal_error, r.hcurl_proj_error
        );
    }
    Ok(StudyOutput {
        report: StudyReport::CompareFormulations(CompareReport { rows }),
        files: vec![("convergence.csv".into(), csv)],
    })
}

/// Raman problem for a resolved co- or counter-pumped configuration.
pub fn raman_problem(cfg: &RunConfig) -> Result<RamanProblem> {
    let mesh = fiber_mesh(cfg)?;
    let material = cfg.material.material();
    let (ws, wp) = (cfg.material.omega_signal, cfg.material.omega_pump());
    let setup = |omega: f64, amp: f64| -> Result<FieldSetup> {
        Ok(FieldSetup { omega, excitation: launch(cfg, &material, amp), stretch: stretch(cfg, &mesh, PmlZone::End, omega)? })
    };
    let problem = RamanProblem {
        mesh: mesh.clone(),
        material: material.clone(),
        orders: cfg.orders.orders(),
        signal: setup(ws, cfg.excitation.signal_amplitude)?,
        pump: setup(wp, cfg.excitation.pump_amplitude)?,
        config: cfg.nonlinear.config(),
    };
    match cfg.nonlinear.pump_direction {
        Some(PumpDirection::Counter) => problem.configure_counter_pumped(),
        _ => {
            let mut p = problem;
            p.config.pump_direction = PumpDirection::Co;
            p.validate()?;
            Ok(p)
        }
    }
}

fn monotone(v: &[f64], increasing: bool) -> bool {
    v.windows(2).all(|w| if increasing { w[1] >= w[0] } else { w[1] <= w[0] })
}

/// Effective area of the two irradiance profiles on the plane z.
fn section_effective_area(state: &crate::raman::NonlinearState, z: f64) -> Result<f64> {
    let (w, is) = section_irradiance(&state.signal_disc, &state.signal, z)?;
    let (_, ip) = section_irradiance(&state.pump_disc, &state.pump, z)?;
    oracle::effective_area_weighted(&w, &ip, &is)
}

pub fn run_raman(cfg: &RunConfig) -> Result<StudyOutput> {
    let problem = raman_problem(cfg)?;
    let opts = IterateOptions { optimality: cfg.nonlinear.check_optimality };
    let state = simple_iterate(&problem, opts)?;
    let lam = cfg.material.wavelength();
    let stations = physical_stations(&problem, cfg.output.station_spacing * lam);
    let trace = state_trace(&state, &stations)?;
    let direction = problem.config.pump_direction;
    let mut files = vec![("power.csv".to_string(), trace.to_csv()), ("iterations.csv".to_string(), state.iterations_csv())];
    let balance = if cfg.nonlinear.baseline {
        let base = linear_baseline(&problem, &stations)?;
        files.push(("baseline.csv".into(), base.to_csv()));
        Some(transfer_balance(&trace, &base, direction)?)
    } else {
        None
    };
    let (comparison, predicted_coupling) = match direction {
        PumpDirection::Co => {
            let cmp = oracle::compare_with_maxwell(&trace, problem.signal.omega, problem.pump.omega)?;
            let z0 = stations[0];
            let area = section_effective_area(&state, z0)?;
            let mut csv = String::from("z,P_signal,P_pump,P_signal_model,P_pump_model\n");
            for i in 0..trace.len() {
                let _ = writeln!(
                    csv,
                    "{:e},{:e},{:e},{:e},{:e}",
                    trace.z[i], trace.signal[i], trace.pump[i], cmp.predicted_signal[i], cmp.predicted_pump[i]
                );
            }
            files.push(("comparison.csv".into(), csv));
            (Some(cmp), Some(problem.config.kappa / area))
        }
        PumpDirection::Counter => (None, None),
    };
    let out_z = *stations.last().expect("stations");
    let half = 1.5 * cfg.mesh.r_core;
    let samples = sample_fields(&state.signal_disc, &state.signal, &plane_points(out_z, half, cfg.output.plane_points))?;
    files.push(("fields_signal_output.csv".into(), samples_to_csv(&samples)));
    let report = RamanReport {
        direction,
        kappa: problem.config.kappa,
        converged: state.converged,
        iterations: state.iteration,
        history: state.history.iter().map(IterationSummary::from).collect(),
        signal_monotone: monotone(&trace.signal, true),
        pump_monotone: monotone(&trace.pump, direction == PumpDirection::Counter),
        stations: trace.z.clone(),
        signal: trace.signal.clone(),
        pump: trace.pump.clone(),
        balance,
        hermitian_defect: state.stats.iter().map(|s| s.hermitian_defect).fold(0.0, f64::max),
        comparison,
        predicted_coupling,
    };
    Ok(StudyOutput { report: StudyReport::Raman(report), files })
}

pub fn run_oracle(cfg: &RunConfig) -> Result<StudyOutput> {
    let o = &cfg.oracle;
    let params = PairParams { omega_s: cfg.material.omega_signal, omega_p: cfg.material.omega_pump(), coupling: o.coupling };
    let mut rows: Vec<OracleRow> = Vec::new();
    let mut finest = None;
    for k in 0..=o.halvings {
        let steps = o.steps << k;
        let run = oracle::integrate_power_odes(params, o.signal_power, o.pump_power, o.length, steps)?;
        let error = oracle::closed_form_error(&run);
        let ratio = rows.last().map_or(f64::NAN, |r| r.error / error);
        rows.push(OracleRow { steps, error, ratio });
        finest = Some(run);
    }
    let run = finest.expect("at least one run");
    let trace = PowerTrace { z: run.z.clone(), signal: run.signal.clone(), pump: run.pump.clone() };
    let comparison = match &o.trace {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|source| Error::Io { path: path.display().to_string(), source })?;
            let t = PowerTrace::from_csv(&text)?;
            Some(oracle::compare_with_maxwell(&t, params.omega_s, params.omega_p)?)
        }
        None => None,
    };
    let mut csv = String::from("steps,error,ratio\n");
    for r in &rows {
        let _ = writeln!(csv, "{},{:e},{:e}", r.steps, r.error, r.ratio);
    }
    let report = OracleReport { flux_drift: run.photon_flux_drift(), closed_form_error: oracle::closed_form_error(&run), rows, comparison };
    Ok(StudyOutput {
        report: StudyReport::OracleOnly(report),
        files: vec![("power.csv".into(), trace.to_csv()), ("convergence.csv".into(), csv)],
    })
}

/// Run the configured study; the configuration must already be resolved.
pub fn run_study(cfg: &RunConfig) -> Result<StudyOutput> {
    if cfg.threads > 0 {
        // a global pool can only be built once per process; later calls keep the first
        let _ = rayon::ThreadPoolBuilder::new().num_threads(cfg.threads).build_global();
    }
    match (cfg.study, cfg.mesh.shape) {
        (StudyKind::CompareFormulations, Some(MeshShape::Fiber)) | (StudyKind::Mms | StudyKind::LinearFiber | StudyKind::RamanCo | StudyKind::RamanCounter, Some(MeshShape::Box)) => {
            return Err(Error::Config(format!("`mesh.shape` does not fit study {}", cfg.study.name())));
        }
        _ => {}
    }
    match cfg.study {
        StudyKind::Mms => run_mms(cfg),
        StudyKind::LinearFiber => run_linear_fiber(cfg),
        StudyKind::CompareFormulations => run_compare(cfg),
        StudyKind::RamanCo | StudyKind::RamanCounter => run_raman(cfg),
        StudyKind::OracleOnly => run_oracle(cfg),
    }
}

#[derive(Serialize)]
struct Manifest<'a> {
    name: &'static str,
    version: &'static str,
    study: &'static str,
    elapsed_seconds: f64,
    config: &'a RunConfig,
    files: Vec<&'a str>,
    report: &'a StudyReport,
}

/// Write the CSV tables and `run.json` into the configured output directory.
pub fn write_outputs(cfg: &RunConfig, out: &StudyOutput, elapsed: f64) -> Result<()> {
    let dir = &cfg.output_dir;
    let io = |path: &Path, source| Error::Io { path: path.display().to_string(), source };
    std::fs::create_dir_all(dir).map_err(|e| io(dir, e))?;
    for (name, text) in &out.files {
        let path = dir.join(name);
        std::fs::write(&path, text).map_err(|e| io(&path, e))?;
    }
    let manifest = Manifest {
        name: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        study: cfg.study.name(),
        elapsed_seconds: elapsed,
        config: cfg,
        files: out.files.iter().map(|(n, _)| n.as_str()).collect(),
        report: &out.report,
    };
    let path = dir.join("run.json");
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Config(e.to_string()))?;
    std::fs::write(&path, text + "\n").map_err(|e| io(&path, e))
}

/// Load, resolve, run and write one study.
pub fn run_file(path: &Path) -> Result<StudyReport> {
    let cfg = RunConfig::load(path)?.resolve()?;
    let t = Instant::now();
    let out = run_study(&cfg)?;
    write_outputs(&cfg, &out, t.elapsed().as_secs_f64())?;
    Ok(out.report)
}
