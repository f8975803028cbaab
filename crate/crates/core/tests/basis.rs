mod common;

use common::{rank, sample, sample_points, sequence_check, span_residual};
use faer::linalg::solvers::SolveLstsq;
use fiber_dpg::basis::{Family, Op, OrderTriple, Space};

#[test]
fn derivatives_land_in_the_next_space() {
    for p in 1..=6 {
        let c = sequence_check(p);
        println!("{}", c.details.join("\n"));
        assert!(c.worst_residual <= 1e-12, "p={p}: {:e}", c.worst_residual);
        assert!(c.exact, "p={p}: {:?}", c.details);
    }
}

#[test]
fn anisotropic_sequence_is_exact() {
    for p in 1..=4 {
        let o = OrderTriple::new(p, p.max(2) - 1, p + 1);
        let pts = sample_points(p + 1);
        let (w, q, v, y) = (Family::new(Space::W, o), Family::new(Space::Q, o), Family::new(Space::V, o), Family::new(Space::Y, o));
        let rg = rank(&sample(&w, Op::Derivative, &pts));
        let rc = rank(&sample(&q, Op::Derivative, &pts));
        let rd = rank(&sample(&v, Op::Derivative, &pts));
        // only constants are killed by the gradient, curl kills exactly the gradients
        assert_eq!(rg, w.dim - 1, "{o:?}");
        assert_eq!(rc, q.dim - rg, "{o:?}");
        assert_eq!(rd, v.dim - rc, "{o:?}");
        assert_eq!(rd, y.dim, "{o:?}");
        assert_eq!(w.dim as i64 - q.dim as i64 + v.dim as i64 - y.dim as i64, 1);
    }
}

#[test]
fn curl_of_gradient_vanishes() {
    let o = OrderTriple::new(2, 4, 3);
    let pts = sample_points(5);
    let w = Family::new(Space::W, o);
    let q = Family::new(Space::Q, o);
    let v = Family::new(Space::V, o);
    assert!(span_residual(&sample(&q, Op::Value, &pts), &sample(&w, Op::Derivative, &pts)) <= 1e-12);
    assert!(span_residual(&sample(&v, Op::Value, &pts), &sample(&q, Op::Derivative, &pts)) <= 1e-12);
    let g = sample(&w, Op::Derivative, &pts);
    let coeffs = sample(&q, Op::Value, &pts).qr().solve_lstsq(&g);
    let cc = sample(&q, Op::Derivative, &pts) * coeffs;
    assert!(cc.norm_max() <= 1e-10, "{}", cc.norm_max());
}
