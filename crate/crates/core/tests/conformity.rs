use std::sync::Arc;

use faer::c64;
use fiber_dpg::basis::{gauss_rule, Op};
use fiber_dpg::dpg::{face_context, BoundaryConditions, Discretization, FieldSolution};
use fiber_dpg::maxwell::{eval_var, ConstantField, HcurlProjection, Material, Orders, Ultraweak, E_HAT, H_HAT};
use fiber_dpg::mesh::{build_fiber_mesh_with, Cell, FiberMeshParams, HexMesh};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn mesh(order: usize, level: usize) -> Arc<HexMesh> {
    Arc::new(
        build_fiber_mesh_with(&FiberMeshParams {
            r_core: 0.4,
            r_cladding: 1.5,
            length: 1.0,
            n_layers: 2,
            pml_fraction: 0.0,
            pml_start_fraction: 0.0,
            geometry_order: order,
            cladding_rings: 2,
            cladding_grading: 1.5,
            section_level: level,
        })
        .unwrap(),
    )
}

/// Newton inversion of a cross-section cell map.
fn invert(cell: &Cell, xy: [f64; 2]) -> [f64; 2] {
    let mut st = [0.5, 0.5];
    for _ in 0..50 {
        let (x, j) = cell.eval(st[0], st[1]);
        let r = [x[0] - xy[0], x[1] - xy[1]];
        let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
        let d = [(j[1][1] * r[0] - j[0][1] * r[1]) / det, (-j[1][0] * r[0] + j[0][0] * r[1]) / det];
        st = [st[0] - d[0], st[1] - d[1]];
        if d[0].abs() + d[1].abs() < 1e-15 {
            break;
        }
    }
    st
}

fn reference_point(mesh: &HexMesh, e: usize, x: [f64; 3]) -> [f64; 3] {
    let el = &mesh.elements[e];
    let st = invert(&mesh.cells[el.cell], [x[0], x[1]]);
    let z = mesh.layers[el.layer].z;
    [st[0], st[1], (x[2] - z[0]) / (z[1] - z[0])]
}

fn random_solution(disc: &Discretization, rng: &mut ChaCha8Rng) -> FieldSolution {
    let mut c = || c64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
    let n = disc.mesh.num_elements();
    FieldSolution {
        local: (0..n).map(|e| (0..disc.element_layout(e).local.len()).map(|_| c()).collect()).collect(),
        shared: (0..disc.num_shared).map(|_| c()).collect(),
        num_elements: n,
    }
}

/// Largest tangential jump of `var` over all interior faces, relative to the largest value.
fn tangential_jump(disc: &Discretization, sol: &FieldSolution, var: usize) -> f64 {
    let mesh = &*disc.mesh;
    let rule = gauss_rule(4);
    let (mut jump, mut scale) = (0.0f64, 0.0f64);
    for face in mesh.faces.iter().filter(|f| f.is_interior()) {
        let (e0, f0) = face.sides[0];
        let (e1, _) = face.sides[1];
        let fc = face_context(mesh, e0, f0, &rule);
        let v0 = eval_var(disc, sol, e0, var, Op::Value, &fc.ref_points, &fc.geo).unwrap();
        let ref1: Vec<[f64; 3]> = fc.geo.iter().map(|g| reference_point(mesh, e1, g.x)).collect();
        let geo1 = mesh.geometry_at(e1, &ref1);
        for (g0, g1) in fc.geo.iter().zip(&geo1) {
            let gap = (0..3).map(|k| (g0.x[k] - g1.x[k]).powi(2)).sum::<f64>().sqrt();
            assert!(gap < 1e-11, "faces do not match geometrically: {gap:e}");
        }
        let v1 = eval_var(disc, sol, e1, var, Op::Value, &ref1, &geo1).unwrap();
        for q in 0..v0.len() {
            let n = fc.normal[q];
            let d: [c64; 3] = std::array::from_fn(|k| v0[q][k] - v1[q][k]);
            let dn = d[0] * n[0] + d[1] * n[1] + d[2] * n[2];
            let t = (0..3).map(|k| (d[k] - dn * n[k]).norm_sqr()).sum::<f64>().sqrt();
            jump = jump.max(t);
            scale = scale.max(v0[q].iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt());
        }
    }
    jump / scale
}

#[test]
fn conforming_field_has_continuous_tangential_trace() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for (order, level, p) in [(1, 0, 2), (3, 0, 3), (2, 1, 2)] {
        let m = mesh(order, level);
        let form = HcurlProjection::new(p, Arc::new(ConstantField { value: [c64::new(1.0, 0.0); 3] }), p + 2);
        let disc = Discretization::new(m, &form, &BoundaryConditions::new()).unwrap();
        let sol = random_solution(&disc, &mut rng);
        let j = tangential_jump(&disc, &sol, 0);
        println!("geometry order {order}, level {level}, p={p}: jump {j:.2e}");
        assert!(j <= 1e-10, "{j:e}");
    }
}

#[test]
fn ultraweak_traces_are_single_valued() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let m = mesh(3, 0);
    let form = Ultraweak::new(2.0, Material::from_aperture(1.45, 0.1), &Orders::new(2, 1));
    let disc = Discretization::new(m, &form, &BoundaryConditions::new()).unwrap();
    let sol = random_solution(&disc, &mut rng);
    for var in [E_HAT, H_HAT] {
        let j = tangential_jump(&disc, &sol, var);
        assert!(j <= 1e-10, "var {var}: {j:e}");
    }
}

#[test]
fn section_area_converges_with_geometry_order() {
    let exact = std::f64::consts::PI * 1.5f64.powi(2);
    let mut prev = f64::INFINITY;
    for order in 1..=4 {
        let err = (mesh(order, 0).volume(8) - exact).abs() / exact;
        println!("geometry order {order}: volume error {err:.2e}");
        assert!(err < prev);
        prev = err;
    }
    assert!(prev < 1e-5, "{prev:e}");
}
