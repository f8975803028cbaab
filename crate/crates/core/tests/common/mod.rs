//! Helpers shared by the integration tests and the acceptance target.
#![allow(dead_code)]

use std::time::Instant;

use faer::{c64, Mat};
use fiber_dpg::basis::{eval_points, gauss_rule, tensor_points, tensor_tabulation, tensor_weights, Family, Op, OrderTriple, Space, Tabulation, TableCache};
use fiber_dpg::dpg::{BrokenFormulation, ElementContext};
use fiber_dpg::maxwell::{Material, Orders, Ultraweak};
use fiber_dpg::mesh::{build_fiber_mesh_with, FiberMeshParams, HexMesh, PmlZone};
use fiber_dpg::pml::{PmlStretch, StretchKind};
use fiber_dpg::sumfact::{integrate_bilinear_naive, integrate_bilinear_sumfact, rel_frobenius};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn sample(fam: &Family, op: Op, pts: &[[f64; 3]]) -> Mat<f64> {
    let t = eval_points(fam, op, pts).unwrap();
    Mat::from_fn(pts.len() * t.ncomp, fam.dim, |r, s| t.get(s, r / t.ncomp, r % t.ncomp))
}

/// Relative Frobenius distance of the columns of `b` from the column span of `a`.
pub fn span_residual(a: &Mat<f64>, b: &Mat<f64>) -> f64 {
    let q = a.qr().compute_thin_Q();
    let proj = &q * (q.transpose() * b);
    (b - proj).norm_l2() / b.norm_l2()
}

pub fn rank(a: &Mat<f64>) -> usize {
    let s = a.singular_values().unwrap();
    let tol = 1e-10 * s[0];
    s.iter().filter(|&&v| v > tol).count()
}

pub fn sample_points(p: usize) -> Vec<[f64; 3]> {
    let r = gauss_rule(p + 2);
    tensor_points([&r.points, &r.points, &r.points])
}

pub struct SequenceCheck {
    /// Largest distance of grad W, curl Q and div V from Q, V and Y.
    pub worst_residual: f64,
    /// Every derivative kills exactly the image of the previous one.
    pub exact: bool,
    pub details: Vec<String>,
}

/// Inclusion and exactness of the discrete sequence at isotropic order p.
pub fn sequence_check(p: usize) -> SequenceCheck {
    let o = OrderTriple::iso(p);
    let pts = sample_points(p);
    let (w, q, v, y) = (Family::new(Space::W, o), Family::new(Space::Q, o), Family::new(Space::V, o), Family::new(Space::Y, o));
    let (gw, cq, dv) = (sample(&w, Op::Derivative, &pts), sample(&q, Op::Derivative, &pts), sample(&v, Op::Derivative, &pts));
    let mut worst = 0.0f64;
    let mut details = Vec::new();
    for (name, d, target) in [("grad W in Q", &gw, &q), ("curl Q in V", &cq, &v), ("div V in Y", &dv, &y)] {
        let r = span_residual(&sample(target, Op::Value, &pts), d);
        details.push(format!("p={p} {name}: {r:.2e}"));
        worst = worst.max(r);
    }
    let (rg, rc, rd) = (rank(&gw), rank(&cq), rank(&dv));
    let exact = rg == w.dim - 1 && rc == q.dim - rg && rd == v.dim - rc && rd == y.dim;
    details.push(format!("p={p} ranks grad {rg}/{} curl {rc}/{} div {rd}/{}", w.dim, q.dim, v.dim));
    SequenceCheck { worst_residual: worst, exact, details }
}

/// Test-norm Gram of element `e`, assembled term by term with either kernel.
pub fn gram(form: &Ultraweak, mesh: &HexMesh, e: usize, naive: bool) -> Mat<c64> {
    let rule = gauss_rule(form.quadrature_points());
    let n = rule.len();
    let pts = [&rule.points[..], &rule.points[..], &rule.points[..]];
    let w = tensor_weights([&rule.weights, &rule.weights, &rule.weights]);
    let geo = mesh.geometry_tensor(e, pts);
    let ctx = ElementContext { mesh, element: e, npts: [n; 3], points: &rule.points, weights: &w, geo: &geo };
    let fams: Vec<Family> = form.layout().test.iter().map(|t| Family::new(t.space, t.order)).collect();
    let mut off = vec![0];
    for f in &fams {
        off.push(off.last().unwrap() + f.dim);
    }
    let nt = *off.last().unwrap();
    let mut cache = TableCache::new(pts);
    let mut g = Mat::<c64>::zeros(nt, nt);
    for t in form.gram_terms(&ctx).unwrap() {
        let mut tab = |v: usize, op| {
            let t = Tabulation::Tensor(tensor_tabulation(&fams[v], op, &mut cache).unwrap());
            if naive {
                Tabulation::Flat(t.to_flat())
            } else {
                t
            }
        };
        let a = tab(t.test, t.test_op);
        let b = tab(t.trial, t.trial_op);
        let m = if naive {
            integrate_bilinear_naive(&a, &b, &t.coeff, &w).unwrap()
        } else {
            integrate_bilinear_sumfact(&a, &b, &t.coeff, &w).unwrap()
        };
        let mut sub = g.as_mut().submatrix_mut(off[t.test], off[t.trial], m.nrows(), m.ncols());
        sub += &m;
    }
    g
}

pub struct Sample {
    pub mesh: HexMesh,
    pub form: Ultraweak,
    pub element: usize,
}

/// A curved element of a fiber mesh with random radii, geometry order, material and stretch.
pub fn random_element(rng: &mut ChaCha8Rng, p: usize) -> Sample {
    let r_core = rng.random_range(0.2..0.6);
    let mesh = build_fiber_mesh_with(&FiberMeshParams {
        r_core,
        r_cladding: r_core * rng.random_range(2.0..5.0),
        length: rng.random_range(1.0..4.0),
        n_layers: 4,
        pml_fraction: 0.5,
        pml_start_fraction: 0.0,
        geometry_order: rng.random_range(2..=4),
        cladding_rings: rng.random_range(1..=2),
        cladding_grading: rng.random_range(1.0..2.0),
        section_level: 0,
    })
    .unwrap();
    let omega = rng.random_range(2.0..8.0);
    let mut st = PmlStretch::for_mesh(&mesh, PmlZone::End, StretchKind::Cubic, omega).unwrap();
    st.strength = rng.random_range(1.0..10.0);
    let material = Material::from_aperture(1.45, rng.random_range(0.05..0.2));
    let form = Ultraweak::new(omega, material, &Orders::new(p, 1)).with_stretch(st);
    // about half the curved picks land in the stretched layers
    let curved: Vec<usize> = (0..mesh.num_elements()).filter(|&e| !mesh.cells[mesh.elements[e].cell].affine).collect();
    let element = curved[rng.random_range(0..curved.len())];
    Sample { mesh, form, element }
}

/// Worst relative Frobenius gap between the two kernels over `count` random elements, p cycling 2..=5.
pub fn sumfact_worst_gap(count: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for i in 0..count {
        let s = random_element(&mut rng, 2 + i % 4);
        let a = gram(&s.form, &s.mesh, s.element, false);
        let b = gram(&s.form, &s.mesh, s.element, true);
        worst = worst.max(rel_frobenius(a.as_ref(), b.as_ref()));
    }
    worst
}

/// Best-of-two wall times (sumfact, naive) of one p = 5 Gram.
pub fn sumfact_timing(seed: u64) -> (f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = random_element(&mut rng, 5);
    let time = |naive: bool| {
        let mut best = f64::INFINITY;
        for _ in 0..2 {
            let t = Instant::now();
            std::hint::black_box(gram(&s.form, &s.mesh, s.element, naive));
            best = best.min(t.elapsed().as_secs_f64());
        }
        best
    };
    (time(false), time(true))
}
