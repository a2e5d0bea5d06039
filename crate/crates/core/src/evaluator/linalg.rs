//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

use super::matrix::{DenseMatrix, FeatureMatrix};

pub fn to_na(m: &DenseMatrix) -> DMatrix<f64> {
    DMatrix::from_row_slice(m.rows, m.cols, &m.data)
}

pub fn from_na(m: &DMatrix<f64>) -> DenseMatrix {
    let mut out = DenseMatrix::zeros(m.nrows(), m.ncols());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            out.data[i * m.ncols() + j] = m[(i, j)];
        }
    }
    out
}

/// Eigenpairs of a symmetric matrix, eigenvalues descending; vectors are columns.
pub fn sym_eigen_desc(m: DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let n = m.nrows();
    let eig = m.symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vectors = DMatrix::zeros(n, n);
    for (k, &i) in order.iter().enumerate() {
        let mut col = eig.eigenvectors.column(i).into_owned();
        // sign convention: largest-magnitude entry positive
        let pivot = col.iter().copied().fold(0.0f64, |a, x| if x.abs() > a.abs() { x } else { a });
        if pivot < 0.0 {
            col.neg_mut();
        }
        vectors.set_column(k, &col);
    }
    (values, vectors)
}

/// A · M for an n×d feature matrix and a d×l dense matrix.
pub fn mul(a: &FeatureMatrix, m: &DMatrix<f64>) -> DMatrix<f64> {
    let (n, l) = (a.rows(), m.ncols());
    let mt = m.transpose();
    let mut out = DMatrix::zeros(l, n);
    for i in 0..n {
        let mut col = out.column_mut(i);
        a.for_each_in_row(i, |j, v| {
            if v != 0.0 {
                col.axpy(v, &mt.column(j), 1.0);
            }
        });
    }
    out.transpose()
}

/// Aᵀ · Y for an n×d feature matrix and an n×l dense matrix.
pub fn mul_t(a: &FeatureMatrix, y: &DMatrix<f64>) -> DMatrix<f64> {
    let (d, l) = (a.cols(), y.ncols());
    let yt = y.transpose();
    let mut out = DMatrix::zeros(l, d);
    for i in 0..a.rows() {
        let yi = yt.column(i);
        a.for_each_in_row(i, |j, v| {
            if v != 0.0 {
                out.column_mut(j).axpy(v, &yi, 1.0);
            }
        });
    }
    out.transpose()
}

fn orthonormal(m: DMatrix<f64>) -> DMatrix<f64> {
    m.qr().q()
}

/// Top-`k` right singular vectors of A (rows of the returned k×d matrix) by
/// randomized subspace iteration.
pub fn randomized_right_singular(a: &FeatureMatrix, k: usize, rng: &mut impl Rng) -> DenseMatrix {
    let (n, d) = (a.rows(), a.cols());
    let l = (k + 10).min(n).min(d).max(1);
    let omega = DMatrix::from_fn(d, l, |_, _| rng.sample::<f64, _>(StandardNormal));
    let mut q = orthonormal(mul(a, &omega));
    for _ in 0..4 {
        let z = orthonormal(mul_t(a, &q));
        q = orthonormal(mul(a, &z));
    }
    let bt = mul_t(a, &q); // d×l = (QᵀA)ᵀ
    let gram = bt.transpose() * &bt; // l×l = B Bᵀ
    let (vals, vecs) = sym_eigen_desc(gram);
    let k = k.min(l);
    let mut out = DenseMatrix::zeros(k, d);
    for c in 0..k {
        let sigma = vals[c].max(0.0).sqrt();
        if sigma <= 1e-12 {
            continue;
        }
        let v = &bt * vecs.column(c) / sigma;
        let pivot = v.iter().copied().fold(0.0f64, |a, x| if x.abs() > a.abs() { x } else { a });
        let sign = if pivot < 0.0 { -1.0 } else { 1.0 };
        for j in 0..d {
            out.data[c * d + j] = sign * v[j];
        }
    }
    out
}

/// exp(−γ‖x−y‖²)
#[inline]
pub fn rbf(x: &[f64], y: &[f64], gamma: f64) -> f64 {
    let d2: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
    (-gamma * d2).exp()
}
