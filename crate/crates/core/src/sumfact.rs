//! Sum-factorized element integration on tensor quadrature grids, with a naive
//! full-point reference path.

use faer::{c64, Mat, MatMut, MatRef, Par};

use crate::basis::{FactorTerm, Tabulation, TensorTabulation};
use crate::error::{Error, Result};

/// Complex coefficient per tensor quadrature point, scalar or matrix valued.
/// `data[(q * rows + a) * cols + b]` couples test component `a` with trial component `b`.
#[derive(Clone, Debug)]
pub struct CoefficientTensor {
    pub npts: [usize; 3],
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<c64>,
    /// Structurally nonzero component pairs; skipped pairs are never visited.
    pub mask: Vec<bool>,
}

impl CoefficientTensor {
    pub fn zeros(npts: [usize; 3], rows: usize, cols: usize) -> Self {
        let n = npts[0] * npts[1] * npts[2];
        Self { npts, rows, cols, data: vec![c64::new(0.0, 0.0); n * rows * cols], mask: vec![false; rows * cols] }
    }

    pub fn num_points(&self) -> usize {
        self.npts[0] * self.npts[1] * self.npts[2]
    }

    pub fn set(&mut self, q: usize, a: usize, b: usize, v: c64) {
        self.data[(q * self.rows + a) * self.cols + b] = v;
        self.mask[a * self.cols + b] = true;
    }

    pub fn get(&self, q: usize, a: usize, b: usize) -> c64 {
        self.data[(q * self.rows + a) * self.cols + b]
    }

    pub fn from_fn(npts: [usize; 3], rows: usize, cols: usize, mut f: impl FnMut(usize, usize, usize) -> c64) -> Self {
        let mut c = Self::zeros(npts, rows, cols);
        for q in 0..c.num_points() {
            for a in 0..rows {
                for b in 0..cols {
                    let v = f(q, a, b);
                    c.data[(q * rows + a) * cols + b] = v;
                    if v != c64::new(0.0, 0.0) {
                        c.mask[a * cols + b] = true;
                    }
                }
            }
        }
        c
    }

    pub fn scaled(&self, s: f64) -> Self {
        let mut c = self.clone();
        c.data.iter_mut().for_each(|v| *v *= s);
        c
    }
}

fn check_dims(test: &Tabulation, trial: &Tabulation, coeff: &CoefficientTensor, weights: &[f64]) -> Result<()> {
    if test.ncomp() != coeff.rows || trial.ncomp() != coeff.cols {
        return Err(Error::Usage(format!(
            "coefficient is {}x{} but tabulations have {} and {} components",
            coeff.rows,
            coeff.cols,
            test.ncomp(),
            trial.ncomp()
        )));
    }
    if weights.len() != coeff.num_points() {
        return Err(Error::Usage("coefficient grid does not match the quadrature rule".into()));
    }
    Ok(())
}

/// Sum-factorized integral M[i, j] = sum_q w_q test_i(q)^T C(q) trial_j(q).
/// Both tabulations must be in factored tensor form.
pub fn integrate_bilinear_sumfact(
    test: &Tabulation,
    trial: &Tabulation,
    coeff: &CoefficientTensor,
    weights: &[f64],
) -> Result<Mat<c64>> {
    let mut m = Mat::<c64>::zeros(test.dim(), trial.dim());
    add_sumfact(test, trial, coeff, weights, 1.0, m.as_mut())?;
    Ok(m)
}

/// Accumulate `scale` times the sum-factorized integral into `out`.
pub fn add_sumfact(
    test: &Tabulation,
    trial: &Tabulation,
    coeff: &CoefficientTensor,
    weights: &[f64],
    scale: f64,
    mut out: MatMut<'_, c64>,
) -> Result<()> {
    check_dims(test, trial, coeff, weights)?;
    let (Tabulation::Tensor(a), Tabulation::Tensor(b)) = (test, trial) else {
        return Err(Error::Usage("sum factorization needs factored tabulations; use the naive path".into()));
    };
    if a.npts != coeff.npts || b.npts != coeff.npts {
        return Err(Error::Usage("tabulation points do not match the coefficient grid".into()));
    }
    let mut ws = Workspace::default();
    for ta in &a.terms {
        for tb in &b.terms {
            if !coeff.mask[ta.comp * coeff.cols + tb.comp] {
                continue;
            }
            let s = scale * ta.sign * tb.sign;
            term_pair(ta, tb, a, coeff, weights, s, &mut ws, out.as_mut());
        }
    }
    Ok(())
}

#[derive(Default)]
struct Workspace {
    d: Vec<f64>,
    pz: Vec<f64>,
    py: Vec<f64>,
    px: Vec<f64>,
    t1: Vec<f64>,
    t1r: Vec<f64>,
    t2: Vec<f64>,
    t2r: Vec<f64>,
    m: Vec<f64>,
}

fn products(ta: &FactorTerm, tb: &FactorTerm, dir: usize, buf: &mut Vec<f64>) {
    let (na, nb) = (ta.dims[dir], tb.dims[dir]);
    let np = ta.tables[dir].npts;
    buf.clear();
    buf.resize(na * nb * np, 0.0);
    for i in 0..na {
        for j in 0..nb {
            let row = &mut buf[(i * nb + j) * np..(i * nb + j + 1) * np];
            for (q, r) in row.iter_mut().enumerate() {
                *r = ta.tables[dir].at(i, q) * tb.tables[dir].at(j, q);
            }
        }
    }
}

fn gemm(dst: &mut [f64], m: usize, n: usize, lhs: &[f64], k: usize, rhs: MatRef<'_, f64>) {
    let l = MatRef::from_row_major_slice(lhs, m, k);
    let d = MatMut::from_row_major_slice_mut(dst, m, n);
    faer::linalg::matmul::matmul(d, faer::Accum::Replace, l, rhs, 1.0, Par::Seq);
}

#[allow(clippy::too_many_arguments)]
fn term_pair(
    ta: &FactorTerm,
    tb: &FactorTerm,
    grid: &TensorTabulation,
    coeff: &CoefficientTensor,
    weights: &[f64],
    s: f64,
    ws: &mut Workspace,
    mut out: MatMut<'_, c64>,
) {
    let [nx, ny, nz] = grid.npts;
    let nxy = nx * ny;
    let (ca, cb) = (ta.comp, tb.comp);
    // D split into real and imaginary parts: rows (part, qx, qy), columns qz
    ws.d.clear();
    ws.d.resize(2 * nxy * nz, 0.0);
    for q in 0..nxy * nz {
        let v = coeff.get(q, ca, cb) * (s * weights[q]);
        ws.d[q] = v.re;
        ws.d[nxy * nz + q] = v.im;
    }
    products(ta, tb, 2, &mut ws.pz);
    products(ta, tb, 1, &mut ws.py);
    products(ta, tb, 0, &mut ws.px);
    let k12 = ta.dims[2] * tb.dims[2];
    let j12 = ta.dims[1] * tb.dims[1];
    let i12 = ta.dims[0] * tb.dims[0];
    // step 1: contract qz
    ws.t1.resize(2 * nxy * k12, 0.0);
    let pz_t = MatRef::from_row_major_slice(&ws.pz, k12, nz).transpose();
    gemm(&mut ws.t1, 2 * nxy, k12, &ws.d, nz, pz_t);
    // relayout to rows qy, columns (part, qx, k12)
    ws.t1r.resize(2 * nxy * k12, 0.0);
    for part in 0..2 {
        for qx in 0..nx {
            for qy in 0..ny {
                let src = ((part * nx + qx) * ny + qy) * k12;
                let dst = ((qy * 2 + part) * nx + qx) * k12;
                ws.t1r[dst..dst + k12].copy_from_slice(&ws.t1[src..src + k12]);
            }
        }
    }
    // step 2: contract qy
    ws.t2.resize(j12 * 2 * nx * k12, 0.0);
    let t1r = MatRef::from_row_major_slice(&ws.t1r, ny, 2 * nx * k12);
    gemm(&mut ws.t2, j12, 2 * nx * k12, &ws.py, ny, t1r);
    // relayout to rows (part, qx), columns (j12, k12)
    ws.t2r.resize(2 * nx * j12 * k12, 0.0);
    for j in 0..j12 {
        for part in 0..2 {
            for qx in 0..nx {
                let src = ((j * 2 + part) * nx + qx) * k12;
                let dst = ((part * nx + qx) * j12 + j) * k12;
                ws.t2r[dst..dst + k12].copy_from_slice(&ws.t2[src..src + k12]);
            }
        }
    }
    // step 3: contract qx, separately for both parts
    let jk = j12 * k12;
    ws.m.resize(2 * i12 * jk, 0.0);
    for part in 0..2 {
        let rhs = MatRef::from_row_major_slice(&ws.t2r[part * nx * jk..(part + 1) * nx * jk], nx, jk);
        gemm(&mut ws.m[part * i12 * jk..(part + 1) * i12 * jk], i12, jk, &ws.px, nx, rhs);
    }
    let (re, im) = ws.m.split_at(i12 * jk);
    let [ax, ay, az] = ta.dims;
    let [bx, by, bz] = tb.dims;
    for i1 in 0..ax {
        for j1 in 0..ay {
            for k1 in 0..az {
                let row = ta.offset + (i1 * ay + j1) * az + k1;
                for i2 in 0..bx {
                    for j2 in 0..by {
                        let base = ((i1 * bx + i2) * j12 + j1 * by + j2) * k12 + k1 * bz;
                        let col0 = tb.offset + (i2 * by + j2) * bz;
                        for k2 in 0..bz {
                            let idx = base + k2;
                            out[(row, col0 + k2)] += c64::new(re[idx], im[idx]);
                        }
                    }
                }
            }
        }
    }
}

/// Reference integration evaluating every shape at every tensor point.
pub fn integrate_bilinear_naive(
    test: &Tabulation,
    trial: &Tabulation,
    coeff: &CoefficientTensor,
    weights: &[f64],
) -> Result<Mat<c64>> {
    check_dims(test, trial, coeff, weights)?;
    let a = test.to_flat();
    let b = trial.to_flat();
    let np = weights.len();
    if a.npts != np || b.npts != np {
        return Err(Error::Usage("tabulation points do not match the quadrature rule".into()));
    }
    let mut m = Mat::<c64>::zeros(a.dim, b.dim);
    for ca in 0..coeff.rows {
        for cb in 0..coeff.cols {
            if !coeff.mask[ca * coeff.cols + cb] {
                continue;
            }
            let x = Mat::<c64>::from_fn(a.dim, np, |i, q| c64::new(a.get(i, q, ca), 0.0));
            let y = Mat::<c64>::from_fn(np, b.dim, |q, j| b.get(j, q, cb) * coeff.get(q, ca, cb) * weights[q]);
            faer::linalg::matmul::matmul(m.as_mut(), faer::Accum::Add, x.as_ref(), y.as_ref(), c64::new(1.0, 0.0), Par::Seq);
        }
    }
    Ok(m)
}

/// Relative Frobenius distance between two matrices.
pub fn rel_frobenius(a: MatRef<'_, c64>, b: MatRef<'_, c64>) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for j in 0..a.ncols() {
        for i in 0..a.nrows() {
            num += (a[(i, j)] - b[(i, j)]).norm_sqr();
            den += b[(i, j)].norm_sqr();
        }
    }
    if den == 0.0 {
        num.sqrt()
    } else {
        (num / den).sqrt()
    }
}

/// Largest entry of |M - M^H|.
pub fn hermitian_defect(m: MatRef<'_, c64>) -> f64 {
    let mut d: f64 = 0.0;
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            d = d.max((m[(i, j)] - m[(j, i)].conj()).norm());
        }
    }
    d
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::{gauss_rule, tensor_tabulation, tensor_weights, Family, OrderTriple, Op, Space, TableCache};

    fn setup(space: Space, p: usize, op: Op, n: usize) -> (Tabulation, Vec<f64>) {
        let r = gauss_rule(n);
        let mut cache = TableCache::new([&r.points, &r.points, &r.points]);
        let fam = Family::new(space, OrderTriple::iso(p));
        let t = tensor_tabulation(&fam, op, &mut cache).unwrap();
        (Tabulation::Tensor(t), tensor_weights([&r.weights, &r.weights, &r.weights]))
    }

    #[test]
    fn y1_mass_is_volume() {
        let (t, w) = setup(Space::Y, 1, Op::Value, 2);
        let c = CoefficientTensor::from_fn([2; 3], 1, 1, |_, _, _| c64::new(1.0, 0.0));
        let m = integrate_bilinear_sumfact(&t, &t, &c, &w).unwrap();
        assert_eq!(m.nrows(), 1);
        assert!((m[(0, 0)] - c64::new(1.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn flat_input_rejected() {
        let (t, w) = setup(Space::Y, 2, Op::Value, 3);
        let flat = Tabulation::Flat(t.to_flat());
        let c = CoefficientTensor::from_fn([3; 3], 1, 1, |_, _, _| c64::new(1.0, 0.0));
        assert!(matches!(integrate_bilinear_sumfact(&flat, &t, &c, &w), Err(Error::Usage(_))));
        assert!(integrate_bilinear_naive(&flat, &t, &c, &w).is_ok());
    }

    #[test]
    fn naive_properties() {
        let (t, w) = setup(Space::Q, 2, Op::Derivative, 4);
        let c = CoefficientTensor::from_fn([4; 3], 3, 3, |q, a, b| {
            let s = (q as f64 * 0.37).sin();
            if a == b {
                c64::new(2.0 + s, 0.0)
            } else if a < b {
                c64::new(0.1 * s, 0.2)
            } else {
                c64::new(0.1 * s, -0.2)
            }
        });
        let m = integrate_bilinear_naive(&t, &t, &c, &w).unwrap();
        assert!(hermitian_defect(m.as_ref()) <= 1e-13);
        let m2 = integrate_bilinear_naive(&t, &t, &c.scaled(2.0), &w).unwrap();
        let twice = Mat::<c64>::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)] * 2.0);
        assert!(rel_frobenius(m2.as_ref(), twice.as_ref()) <= 1e-14);
        let z = integrate_bilinear_naive(&t, &t, &c.scaled(0.0), &w).unwrap();
        assert!(z.norm_max() == 0.0);
    }

    #[test]
    fn sumfact_matches_naive_mixed_families() {
        let r = gauss_rule(5);
        let mut cache = TableCache::new([&r.points, &r.points, &r.points]);
        let w = tensor_weights([&r.weights, &r.weights, &r.weights]);
        let q = Family::new(Space::Q, OrderTriple::new(3, 2, 3));
        let y = Family::new(Space::VecY, OrderTriple::new(2, 2, 1));
        let a = Tabulation::Tensor(tensor_tabulation(&q, Op::Derivative, &mut cache).unwrap());
        let b = Tabulation::Tensor(tensor_tabulation(&y, Op::Value, &mut cache).unwrap());
        let c = CoefficientTensor::from_fn([5; 3], 3, 3, |q, i, j| c64::new((q * 7 + i * 3 + j) as f64 * 0.01, (i as f64 - j as f64) * (q as f64).cos()));
        let m1 = integrate_bilinear_sumfact(&a, &b, &c, &w).unwrap();
        let m2 = integrate_bilinear_naive(&a, &b, &c, &w).unwrap();
        assert!(rel_frobenius(m1.as_ref(), m2.as_ref()) < 1e-13);
    }
}
