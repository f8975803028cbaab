use std::f64::consts::PI;
use std::sync::Arc;

use faer::c64;
use fiber_dpg::dpg::Discretization;
use fiber_dpg::maxwell::{exact_dirichlet, uw_l2_error, ExactField, Material, Orders, Te10, Ultraweak, E_HAT};
use fiber_dpg::mesh::{build_box_mesh, build_fiber_mesh_with, BoundaryTag, FiberMeshParams, PmlZone};
use fiber_dpg::pml::{calibrate, PmlStretch, StretchKind};
use fiber_dpg::postprocess::{cross_section_power, cross_section_power_volume, signed_power};

fn te10_solve(nz: usize, p: usize) -> (Discretization, fiber_dpg::dpg::FieldSolution, Ultraweak, Te10) {
    let te = Te10::new(5f64.sqrt() * PI);
    let mesh = Arc::new(build_box_mesh([1.0, 1.0, 4.0], [1, 1, nz]).unwrap());
    let field: Arc<dyn ExactField> = Arc::new(te.clone());
    let form = Ultraweak::new(te.omega, Material::uniform(1.0), &Orders::new(p, 1)).with_impedance(BoundaryTag::ZMax, te.gamma()).unwrap();
    let disc = Discretization::new(mesh, &form, &exact_dirichlet(E_HAT, &[BoundaryTag::ZMin, BoundaryTag::Lateral], field)).unwrap();
    let (sol, stats) = disc.solve(&form).unwrap();
    assert!(stats.hermitian_defect <= 1e-12, "{stats:?}");
    (disc, sol, form, te)
}

#[test]
fn te10_power_is_carried_through_the_guide() {
    let (disc, sol, _, te) = te10_solve(16, 5);
    let exact = te.power(0.0);
    for i in 0..=16 {
        let z = 4.0 * i as f64 / 16.0;
        let p = cross_section_power(&disc, &sol, z).unwrap();
        assert!((p - exact).abs() / exact < 1e-3, "z {z}: {p} vs {exact}");
        assert!(signed_power(&disc, &sol, z).unwrap() > 0.0);
        if i > 0 {
            let v = cross_section_power_volume(&disc, &sol, z).unwrap();
            assert!((v - exact).abs() / exact < 1e-2, "z {z}: volume {v} vs {exact}");
        }
    }
}

#[test]
fn discrete_solution_is_the_residual_minimizer() {
    let (disc, sol, form, te) = te10_solve(8, 4);
    let rep = disc.residual(&form, &sol).unwrap();
    assert!(rep.optimality <= 1e-10, "{rep:?}");
    // perturbing any trace coefficient can only increase the residual
    let mut other = sol.clone();
    let k = (0..disc.num_shared).find(|&g| disc.free_index[g].is_some()).unwrap();
    other.shared[k] += c64::new(1e-3, 0.0);
    assert!(disc.residual(&form, &other).unwrap().global > rep.global);
    let (e, n) = uw_l2_error(&disc, &sol, &te, 6).unwrap();
    assert!((e / n).sqrt() < 0.1);
}

#[test]
fn refinement_reduces_the_field_error() {
    let mut prev = f64::INFINITY;
    for nz in [4, 8, 16] {
        let (disc, sol, _, te) = te10_solve(nz, 2);
        let (e, n) = uw_l2_error(&disc, &sol, &te, 6).unwrap();
        let rel = (e / n).sqrt();
        assert!(rel < prev, "nz {nz}: {rel}");
        prev = rel;
    }
}

#[test]
fn calibrated_layer_on_a_fiber_mesh() {
    let mesh = build_fiber_mesh_with(&FiberMeshParams {
        r_core: 0.3,
        r_cladding: 1.0,
        length: 2.0,
        n_layers: 10,
        pml_fraction: 0.2,
        pml_start_fraction: 0.1,
        geometry_order: 2,
        cladding_rings: 1,
        cladding_grading: 1.0,
        section_level: 0,
    })
    .unwrap();
    assert_eq!(mesh.pml_range(PmlZone::End), Some([1.6, 2.0]));
    assert_eq!(mesh.pml_range(PmlZone::Start), Some([0.0, 0.2]));
    assert_eq!(mesh.count_pml(), 3 * mesh.cells.len());
    for zone in [PmlZone::End, PmlZone::Start] {
        let base = PmlStretch::for_mesh(&mesh, zone, StretchKind::Cubic, 7.0).unwrap();
        let s = calibrate(base, 1e4, 0.0).unwrap();
        let q = s.log_attenuation_quadrature(1.0, 0.0, 24);
        assert!((q - 1e4f64.ln()).abs() < 1e-10, "{zone:?}: {q}");
        // the stretch is the identity up to the interface and continuous across it
        let eps = 1e-9;
        assert!((s.phi(s.z0 - eps) - s.phi(s.z0 + eps)).norm() < 1e-8);
        assert!((s.dphi(s.z0) - c64::new(1.0, 0.0)).norm() < 1e-14);
        let (_, det) = s.tensor(if zone == PmlZone::End { 1.9 } else { 0.05 }).unwrap();
        assert!(det.im.abs() > 0.0);
    }
}
