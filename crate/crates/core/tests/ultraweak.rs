use std::sync::Arc;

use faer::c64;
use fiber_dpg::dpg::Discretization;
use fiber_dpg::maxwell::*;
use fiber_dpg::mesh::{build_box_mesh, BoundaryTag};

const ALL: [BoundaryTag; 3] = [BoundaryTag::ZMin, BoundaryTag::ZMax, BoundaryTag::Lateral];

#[test]
fn constant_field_is_reproduced() {
    let mesh = Arc::new(build_box_mesh([1.0, 0.7, 1.3], [2, 1, 2]).unwrap());
    let field: Arc<dyn ExactField> = Arc::new(ConstantField { value: [c64::new(1.0, 0.5), c64::new(-0.3, 0.0), c64::new(0.2, 0.1)] });
    let orders = Orders::new(1, 1);
    let form = Ultraweak::new(1.3, Material::uniform(1.0), &orders).with_source(field.clone());
    let bc = exact_dirichlet(E_HAT, &ALL, field.clone());
    let disc = Discretization::new(mesh, &form, &bc).unwrap();
    let (sol, stats) = disc.solve(&form).unwrap();
    let (err, nrm) = uw_l2_error(&disc, &sol, field.as_ref(), 5).unwrap();
    let rel = (err / nrm).sqrt();
    println!("{stats:?} rel {rel:e}");
    assert!(rel < 1e-9, "{rel}");
    let rep = disc.residual(&form, &sol).unwrap();
    assert!(rep.global <= 1e-10 * rep.load_norm.max(1.0), "{rep:?}");
}

#[test]
fn sine_field_converges_on_box() {
    let field: Arc<dyn ExactField> = Arc::new(SineField { omega: 1.001 });
    for p in 1..=2 {
        let mut prev = f64::INFINITY;
        for n in [1usize, 2, 4] {
            let mesh = Arc::new(build_box_mesh([1.0, 1.0, 1.0], [n, n, n]).unwrap());
            let orders = Orders::new(p, 1);
            let form = Ultraweak::new(1.001, Material::uniform(1.0), &orders).with_source(field.clone());
            let bc = exact_dirichlet(E_HAT, &ALL, field.clone());
            let disc = Discretization::new(mesh, &form, &bc).unwrap();
            let (sol, _) = disc.solve(&form).unwrap();
            let (err, nrm) = uw_l2_error(&disc, &sol, field.as_ref(), p + 4).unwrap();
            let rel = (err / nrm).sqrt();
            println!("p {p} n {n} rel {rel:e} ratio {}", prev / rel);
            assert!(rel < prev);
            prev = rel;
        }
    }
}
