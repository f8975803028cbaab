use fiber_dpg::config::RunConfig;
use fiber_dpg::postprocess::{signed_power, PowerTrace};
use fiber_dpg::raman::{
    compute_irradiance, physical_stations, simple_iterate, state_trace, transfer_balance, IterateOptions, NonlinearState,
    OptimalityCheck, PumpDirection,
};
use fiber_dpg::studies::raman_problem;

/// A short, low-order fiber that keeps one coupled iteration to a few seconds.
fn cheap(study: &str, kappa: f64) -> RunConfig {
    let text = format!(
        "study = \"{study}\"\n[mesh]\nwavelengths = 4.0\nn_layers = 16\npml_start_fraction = 0.25\n\
         [orders]\np = 2\n[nonlinear]\nkappa = {kappa}\n"
    );
    RunConfig::from_toml(&text).unwrap().resolve().unwrap()
}

fn run(cfg: &RunConfig, optimality: OptimalityCheck) -> NonlinearState {
    simple_iterate(&raman_problem(cfg).unwrap(), IterateOptions { optimality }).unwrap()
}

#[test]
fn zero_coupling_stops_after_the_confirming_iteration() {
    let s = run(&cheap("raman_co", 0.0), OptimalityCheck::Final);
    assert!(s.converged);
    assert_eq!(s.iteration, 2);
    assert_eq!(s.history[1].delta, 0.0);
    let [os, op] = s.history[1].optimality;
    assert!(os <= 1e-12 && op <= 1e-12, "{os:e} {op:e}");
    assert!(s.history[0].optimality[0].is_nan());
}

#[test]
fn pump_direction_does_not_touch_an_uncoupled_signal() {
    let co = run(&cheap("raman_co", 0.0), OptimalityCheck::Never);
    let counter = run(&cheap("raman_counter", 0.0), OptimalityCheck::Never);
    assert_eq!(co.signal.shared.len(), counter.signal.shared.len());
    let diff = co.signal.shared.iter().zip(&counter.signal.shared).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
    assert!(diff <= 1e-12, "{diff:e}");
    // the counter pump carries its power towards z = 0
    let problem = raman_problem(&cheap("raman_counter", 0.0)).unwrap();
    let st = physical_stations(&problem, 0.0);
    let t = state_trace(&counter, &st).unwrap();
    for (i, &z) in st.iter().enumerate() {
        let p = signed_power(&counter.pump_disc, &counter.pump, z).unwrap();
        let s = signed_power(&counter.signal_disc, &counter.signal, z).unwrap();
        assert!(p < 0.0 && (p.abs() - t.pump[i]).abs() <= 1e-9 * t.pump[i], "{z}: {p} vs {}", t.pump[i]);
        assert!(s > 0.0, "{z}: {s}");
    }
}

#[test]
fn stronger_coupling_needs_no_fewer_iterations() {
    let mut iters = Vec::new();
    let mut out = Vec::new();
    for kappa in [0.0, 1e-4, 2e-4] {
        let s = run(&cheap("raman_co", kappa), OptimalityCheck::Never);
        assert!(s.converged, "kappa {kappa}");
        iters.push(s.iteration);
        out.push(s.history.last().unwrap().signal_out);
    }
    println!("iterations {iters:?}, signal out {out:?}");
    assert!(iters[2] >= iters[1] && iters[1] >= iters[0]);
    assert!(out[2] > out[1] && out[1] > out[0]);
}

#[test]
fn irradiance_is_nonnegative_and_core_peaked() {
    let s = run(&cheap("raman_co", 0.0), OptimalityCheck::Never);
    let irr = compute_irradiance(&s.signal_disc, &s.signal).unwrap();
    assert!(irr.max() > 0.0);
    let mesh = &s.signal_disc.mesh;
    let mut core = 0.0f64;
    let mut outer = 0.0f64;
    for (e, v) in irr.values.iter().enumerate() {
        assert!(v.iter().all(|&x| x >= 0.0));
        let m = v.iter().copied().fold(0.0, f64::max);
        if mesh.elements[e].tag.region == fiber_dpg::mesh::Region::Core {
            core = core.max(m);
        } else {
            outer = outer.max(m);
        }
    }
    assert!(core > outer, "core {core:e} cladding {outer:e}");
}

fn trace(signal: &[f64], pump: &[f64]) -> PowerTrace {
    PowerTrace { z: (0..signal.len()).map(|i| i as f64).collect(), signal: signal.to_vec(), pump: pump.to_vec() }
}

#[test]
fn balance_divides_out_the_linear_drift() {
    // both fields drift by 10 % without coupling; the pump hands 3 units to the signal
    let base = trace(&[1.0, 1.05, 1.1], &[4.0, 4.2, 4.4]);
    let t = trace(&[1.0, 2.6, 4.4], &[4.0, 2.7, 1.1]);
    let b = transfer_balance(&t, &base, PumpDirection::Co).unwrap();
    assert!((b.signal_gain - 3.4).abs() < 1e-12);
    assert!((b.signal_gain_corrected - 3.0).abs() < 1e-12);
    assert!((b.pump_loss_corrected - 3.0).abs() < 1e-12);
    assert!((b.ratio() - 1.0).abs() < 1e-12);
    let rev = trace(&[1.0, 2.6, 4.4], &[1.1, 2.7, 4.0]);
    let rev_base = trace(&[1.0, 1.05, 1.1], &[4.4, 4.2, 4.0]);
    let c = transfer_balance(&rev, &rev_base, PumpDirection::Counter).unwrap();
    assert!((c.pump_loss_corrected - 3.0).abs() < 1e-12);
    assert!(transfer_balance(&t, &trace(&[1.0], &[1.0]), PumpDirection::Co).is_err());
}
