//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};

/// Exact transition of `dx = A x dt + B dW` over `dt`: `(Φ, Q)` with
/// `Φ = e^{A dt}` and `Q = ∫₀^dt e^{As} B Bᵀ e^{Aᵀs} ds`, via Van Loan's
/// block exponential.
pub fn discretise(a: &DMatrix<f64>, b: &DMatrix<f64>, dt: f64) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = a.nrows();
    let mut m = DMatrix::zeros(2 * n, 2 * n);
    m.view_mut((0, 0), (n, n)).copy_from(&(-a));
    m.view_mut((0, n), (n, n)).copy_from(&(b * b.transpose()));
    m.view_mut((n, n), (n, n)).copy_from(&a.transpose());
    let e = (m * dt).exp();
    let phi_t = e.view((n, n), (n, n)).into_owned();
    let phi = phi_t.transpose();
    let q = &phi * e.view((0, n), (n, n));
    (phi.clone(), (&q + q.transpose()) * 0.5)
}

pub struct KalmanStep {
    pub pred_mean: DVector<f64>,
    pub pred_cov: DMatrix<f64>,
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

/// Textbook Kalman filter for a linear SDE observed as `y = H x + v`.
pub fn kalman_filter(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    h: &DMatrix<f64>,
    r: &DMatrix<f64>,
    m0: &DVector<f64>,
    p0: &DMatrix<f64>,
    times: &[f64],
    ys: &[DVector<f64>],
) -> Vec<KalmanStep> {
    let (mut m, mut p, mut t) = (m0.clone(), p0.clone(), 0.0);
    let mut out = Vec::new();
    for (tk, y) in times.iter().zip(ys) {
        let (phi, q) = discretise(a, b, tk - t);
        let mp = &phi * &m;
        let pp = &phi * &p * phi.transpose() + q;
        let s = h * &pp * h.transpose() + r;
        let k = &pp * h.transpose() * s.clone().try_inverse().expect("invertible innovation");
        m = &mp + &k * (y - h * &mp);
        p = &pp - &k * s * k.transpose();
        t = *tk;
        out.push(KalmanStep { pred_mean: mp, pred_cov: pp, mean: m.clone(), cov: p.clone() });
    }
    out
}

/// `E[∏ x_{idx}]` for `x ~ N(m, P)` and up to three (possibly repeated)
/// indices, by Isserlis' theorem.
pub fn gaussian_monomial_moment(m: &DVector<f64>, p: &DMatrix<f64>, idx: &[usize]) -> f64 {
    match *idx {
        [] => 1.0,
        [a] => m[a],
        [a, b] => m[a] * m[b] + p[(a, b)],
        [a, b, c] => m[a] * m[b] * m[c] + m[a] * p[(b, c)] + m[b] * p[(a, c)] + m[c] * p[(a, b)],
        _ => panic!("only degrees up to three are supported"),
    }
}

/// All multisets of `0..n` with at most `max_degree` elements.
pub fn monomials(n: usize, max_degree: usize) -> Vec<Vec<usize>> {
    let mut out = vec![vec![]];
    let mut frontier = vec![vec![]];
    for _ in 0..max_degree {
        let mut next = Vec::new();
        for mono in &frontier {
            let start = mono.last().copied().unwrap_or(0);
            for i in start..n {
                let mut m = mono.clone();
                m.push(i);
                next.push(m);
            }
        }
        out.extend(next.iter().cloned());
        frontier = next;
    }
    out
}

pub fn max_abs(a: &DMatrix<f64>) -> f64 {
    a.amax()
}
