//! Small dense helpers on top of nalgebra for Hermitian matrices.

use nalgebra::DMatrix;
use num_complex::Complex64;

pub type C64 = Complex64;
pub type CMatrix = DMatrix<C64>;

pub const ZERO: C64 = C64::new(0.0, 0.0);
pub const ONE: C64 = C64::new(1.0, 0.0);
pub const I: C64 = C64::new(0.0, 1.0);

/// Eigen-decomposition of a Hermitian matrix, eigenvalues ascending.
pub fn hermitian_eigen(m: &CMatrix) -> (Vec<f64>, CMatrix) {
    let eig = m.clone().symmetric_eigen();
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = CMatrix::from_fn(m.nrows(), m.ncols(), |r, c| eig.eigenvectors[(r, order[c])]);
    (values, vectors)
}

pub fn hermitian_eigenvalues(m: &CMatrix) -> Vec<f64> {
    let mut v: Vec<f64> = m.clone().symmetric_eigen().eigenvalues.iter().copied().collect();
    v.sort_by(f64::total_cmp);
    v
}

/// Largest elementwise deviation from Hermiticity.
pub fn hermiticity_defect(m: &CMatrix) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0f64;
    for r in 0..n {
        for c in r..n {
            worst = worst.max((m[(r, c)] - m[(c, r)].conj()).norm());
        }
    }
    worst
}

pub fn hermitize(m: &CMatrix) -> CMatrix {
    (m + m.adjoint()) * C64::new(0.5, 0.0)
}

pub fn trace(m: &CMatrix) -> C64 {
    m.diagonal().iter().sum()
}

/// Rebuild `V diag(f(λ)) V†`.
pub fn spectral_map(values: &[f64], vectors: &CMatrix, f: impl Fn(f64) -> f64) -> CMatrix {
    let n = vectors.nrows();
    let mut out = CMatrix::zeros(n, n);
    for (k, &lambda) in values.iter().enumerate() {
        let w = f(lambda);
        if w == 0.0 {
            continue;
        }
        let col = vectors.column(k);
        for c in 0..n {
            let vc = col[c].conj() * w;
            for r in 0..n {
                out[(r, c)] += col[r] * vc;
            }
        }
    }
    out
}

/// Square root of a positive semidefinite matrix; negative eigenvalues are clipped.
pub fn psd_sqrt(m: &CMatrix) -> CMatrix {
    let (values, vectors) = hermitian_eigen(&hermitize(m));
    spectral_map(&values, &vectors, |x| x.max(0.0).sqrt())
}

/// Applies a 2x2 matrix `u` to qubit `bit` (bit position within the index) from the left: `m -> U m`.
pub fn apply_left_on_bit(m: &mut CMatrix, bit: usize, u: &[[C64; 2]; 2]) {
    let mask = 1usize << bit;
    let n = m.nrows();
    for c in 0..m.ncols() {
        for r0 in 0..n {
            if r0 & mask != 0 {
                continue;
            }
            let r1 = r0 | mask;
            let a = m[(r0, c)];
            let b = m[(r1, c)];
            m[(r0, c)] = u[0][0] * a + u[0][1] * b;
            m[(r1, c)] = u[1][0] * a + u[1][1] * b;
        }
    }
}

/// `m -> m U†` on qubit `bit`.
pub fn apply_right_adjoint_on_bit(m: &mut CMatrix, bit: usize, u: &[[C64; 2]; 2]) {
    let mask = 1usize << bit;
    let n = m.ncols();
    for c0 in 0..n {
        if c0 & mask != 0 {
            continue;
        }
        let c1 = c0 | mask;
        for r in 0..m.nrows() {
            let a = m[(r, c0)];
            let b = m[(r, c1)];
            m[(r, c0)] = a * u[0][0].conj() + b * u[0][1].conj();
            m[(r, c1)] = a * u[1][0].conj() + b * u[1][1].conj();
        }
    }
}

/// Matrix exponential (nalgebra's Padé scaling and squaring); only the
/// dense reference checks use it.
pub fn expm(m: &CMatrix) -> CMatrix {
    m.clone().exp()
}
