use std::f64::consts::PI;

use fiber_dpg::mesh::{build_fiber_mesh_with, FiberMeshParams};
use fiber_dpg::oracle::*;
use fiber_dpg::postprocess::PowerTrace;
use fiber_dpg::Error;

const PAIR: PairParams = PairParams { omega_s: 30.0 * PI, omega_p: 32.5 * PI, coupling: 0.05 };

#[test]
fn rk4_error_drops_sixteenfold_per_halving() {
    let mut prev = f64::NAN;
    for k in 0..5 {
        let run = integrate_power_odes(PAIR, 1.0, 4.0, 10.0, 20 << k).unwrap();
        let err = closed_form_error(&run);
        if k > 0 {
            let ratio = prev / err;
            println!("steps {}: error {err:.3e} ratio {ratio:.2}", 20 << k);
            assert!((14.0..18.0).contains(&ratio), "{ratio}");
        }
        prev = err;
    }
    assert!(prev < 1e-10, "{prev:e}");
}

#[test]
fn photon_flux_is_conserved() {
    let run = integrate_power_odes(PAIR, 1.0, 4.0, 10.0, 200).unwrap();
    assert!(run.photon_flux_drift() < 1e-13, "{:e}", run.photon_flux_drift());
    // the signal saturates at the total photon flux
    let q = PAIR.photon_flux(1.0, 4.0);
    let (s, p) = closed_form(&PAIR, 1.0, 4.0, 1e3);
    assert!((s - PAIR.omega_s * q).abs() < 1e-9 && p.abs() < 1e-9);
}

#[test]
fn pump_depletes_at_the_frequency_ratio() {
    let [us, up] = PAIR.upsilon();
    assert_eq!(us, 1.0);
    let [ds, dp] = PAIR.rhs(2.0, 3.0);
    assert!((dp / ds - up).abs() < 1e-15 && (up + PAIR.omega_p / PAIR.omega_s).abs() < 1e-15);
}

#[test]
fn invalid_inputs_are_rejected() {
    assert!(matches!(integrate_power_odes(PAIR, -1.0, 4.0, 1.0, 10), Err(Error::Usage(_))));
    assert!(matches!(integrate_power_odes(PAIR, 1.0, 4.0, 1.0, 0), Err(Error::Usage(_))));
    assert!(matches!(effective_area_weighted(&[1.0], &[0.0], &[1.0]), Err(Error::DivisionByZero(_))));
    assert!(integrate_irradiance(PAIR, &[1.0], &[1.0, 2.0], 1.0, 4).is_err());
}

#[test]
fn stiff_coupling_halves_steps_instead_of_going_negative() {
    let p = PairParams { coupling: 5.0, ..PAIR };
    let run = integrate_power_odes(p, 1.0, 4.0, 10.0, 5).unwrap();
    assert!(run.halvings > 0);
    assert!(run.signal.iter().chain(&run.pump).all(|&v| v >= 0.0));
}

#[test]
fn uniform_irradiance_reduces_to_the_power_model() {
    let area = 2.5;
    let g = PairParams { coupling: 0.12, ..PAIR };
    let (s, p) = integrate_irradiance(g, &[1.0 / area; 3], &[4.0 / area; 3], 6.0, 400).unwrap();
    let per_area = PairParams { coupling: g.coupling / area, ..PAIR };
    let run = integrate_power_odes(per_area, 1.0, 4.0, 6.0, 400).unwrap();
    for k in 0..3 {
        assert!((s[k] * area - run.signal.last().unwrap()).abs() < 1e-10);
        assert!((p[k] * area - run.pump.last().unwrap()).abs() < 1e-10);
    }
}

#[test]
fn gaussian_overlap_area() {
    let mesh = build_fiber_mesh_with(&FiberMeshParams {
        r_core: 0.5,
        r_cladding: 4.0,
        length: 1.0,
        n_layers: 1,
        pml_fraction: 0.0,
        pml_start_fraction: 0.0,
        geometry_order: 3,
        cladding_rings: 3,
        cladding_grading: 1.5,
        section_level: 1,
    })
    .unwrap();
    let (a, b) = (0.3f64, 0.45f64);
    // amplitude profiles whose squares are exp(-r^2 / w^2)
    let prof = |w: f64| move |x: [f64; 2]| (-(x[0] * x[0] + x[1] * x[1]) / (2.0 * w * w)).exp();
    let area = effective_area(&mesh, prof(a), prof(b), 8).unwrap();
    let exact = PI * (a * a + b * b);
    assert!((area - exact).abs() / exact < 1e-3, "{area} vs {exact}");
}

#[test]
fn fit_recovers_the_coupling_of_a_logistic_trace() {
    let z: Vec<f64> = (0..11).map(|i| 2.0 + 0.5 * i as f64).collect();
    let (s, p): (Vec<f64>, Vec<f64>) = z.iter().map(|&z| closed_form(&PAIR, 1.0, 4.0, z - 2.0)).unzip();
    let r = compare_with_maxwell(&PowerTrace { z, signal: s, pump: p }, PAIR.omega_s, PAIR.omega_p).unwrap();
    assert!((r.coupling - PAIR.coupling).abs() / PAIR.coupling < 1e-6, "{}", r.coupling);
    assert!(r.residual < 1e-8 && r.monotonicity_agreement);
}
