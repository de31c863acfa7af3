//! Dense linear algebra on top of faer: assembled operators, symmetric
//! eigensolves, symmetric indefinite solves and Householder complements.

use faer::linalg::solvers::SolveCore;
use faer::{c64, Conj, Mat, Side};

use crate::error::{Error, Result};
use crate::grid::{ifft_complex, laplacian_symbol, GridSpec};

/// Run dense kernels on the calling thread only, so results do not depend
/// on the machine's core count.
pub fn use_sequential() {
    faer::set_global_parallelism(faer::Par::Seq);
}

pub type Matrix = Mat<f64>;

/// Dense spectral -d^2/dx^2: the circulant whose first column is ifft(k^2).
pub fn neg_laplacian_matrix(grid: &GridSpec) -> Matrix {
    let m = grid.points();
    let mut col: Vec<c64> = laplacian_symbol(grid)
        .into_iter()
        .map(|s| c64::new(s, 0.0))
        .collect();
    ifft_complex(&mut col);
    let c: Vec<f64> = col.iter().map(|z| z.re).collect();
    Mat::from_fn(m, m, |i, j| c[(i + m - j) % m])
}

/// -d^2/dx^2 + diag(d).
pub fn schrodinger_matrix(grid: &GridSpec, diag: &[f64]) -> Matrix {
    let mut a = neg_laplacian_matrix(grid);
    for (i, d) in diag.iter().enumerate() {
        a[(i, i)] += d;
    }
    a
}

/// Eigenvalues of a symmetric matrix in nondecreasing order.
pub fn sym_eigenvalues(a: &Matrix) -> Result<Vec<f64>> {
    a.self_adjoint_eigenvalues(Side::Lower)
        .map_err(|e| Error::Linalg(format!("symmetric eigensolve failed: {e:?}")))
}

/// Eigenvalues (nondecreasing) and orthonormal eigenvectors as columns.
pub fn sym_eigen(a: &Matrix) -> Result<(Vec<f64>, Matrix)> {
    let evd = a
        .self_adjoint_eigen(Side::Lower)
        .map_err(|e| Error::Linalg(format!("symmetric eigensolve failed: {e:?}")))?;
    let vals = evd.S().column_vector().iter().copied().collect();
    Ok((vals, evd.U().to_owned()))
}

/// Eigenvalues of a Hermitian complex matrix in nondecreasing order.
pub fn hermitian_eigenvalues(a: &Mat<c64>) -> Result<Vec<f64>> {
    a.self_adjoint_eigenvalues(Side::Lower)
        .map_err(|e| Error::Linalg(format!("hermitian eigensolve failed: {e:?}")))
}

pub fn column(a: &Matrix, j: usize) -> Vec<f64> {
    (0..a.nrows()).map(|i| a[(i, j)]).collect()
}

pub fn mat_vec(a: &Matrix, x: &[f64]) -> Vec<f64> {
    let n = a.nrows();
    let mut y = vec![0.0; n];
    for j in 0..a.ncols() {
        let xj = x[j];
        if xj == 0.0 {
            continue;
        }
        let col = a.col(j);
        for (i, yi) in y.iter_mut().enumerate() {
            *yi += col[i] * xj;
        }
    }
    y
}

fn solve_with(f: &impl SolveCore<f64>, b: &[f64]) -> Vec<f64> {
    let mut rhs = Mat::from_fn(b.len(), 1, |i, _| b[i]);
    f.solve_in_place_with_conj(Conj::No, rhs.as_mut());
    (0..b.len()).map(|i| rhs[(i, 0)]).collect()
}

/// Bunch-Kaufman factorization of a symmetric, possibly indefinite matrix.
pub struct SymmetricSolver {
    factor: faer::linalg::solvers::Lblt<f64>,
}

impl SymmetricSolver {
    pub fn new(a: &Matrix) -> Self {
        Self {
            factor: a.lblt(Side::Lower),
        }
    }

    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        let x = solve_with(&self.factor, b);
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Linalg("symmetric solve produced non-finite values".into()));
        }
        Ok(x)
    }
}

/// Cholesky factor of a symmetric positive definite matrix.
pub struct Cholesky {
    factor: faer::linalg::solvers::Llt<f64>,
}

impl Cholesky {
    pub fn new(a: &Matrix) -> Option<Self> {
        a.llt(Side::Lower).ok().map(|factor| Self { factor })
    }

    /// Lower triangular L with A = L L^T.
    pub fn lower(&self) -> Matrix {
        self.factor.L().to_owned()
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        solve_with(&self.factor, b)
    }
}

/// Orthonormal basis Q of the complement of a vector q, as a Householder
/// reflector H with H q parallel to e_0; Q is H with its first column dropped.
pub struct Complement {
    w: Vec<f64>,
    beta: f64,
}

impl Complement {
    pub fn new(q: &[f64]) -> Result<Self> {
        let norm = q.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 || !norm.is_finite() {
            return Err(Error::InvalidParameter("cannot complement a zero vector".into()));
        }
        let mut w: Vec<f64> = q.iter().map(|v| v / norm).collect();
        let s = if w[0] >= 0.0 { 1.0 } else { -1.0 };
        w[0] += s;
        let ww: f64 = w.iter().map(|v| v * v).sum();
        Ok(Self { w, beta: 2.0 / ww })
    }

    pub fn dim(&self) -> usize {
        self.w.len()
    }

    fn reflect(&self, x: &[f64]) -> Vec<f64> {
        let t = self.beta * self.w.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
        x.iter().zip(&self.w).map(|(xi, wi)| xi - t * wi).collect()
    }

    /// Q y for y of length n - 1.
    pub fn embed(&self, y: &[f64]) -> Vec<f64> {
        let mut x = Vec::with_capacity(self.dim());
        x.push(0.0);
        x.extend_from_slice(y);
        self.reflect(&x)
    }

    /// Q^T x.
    pub fn restrict(&self, x: &[f64]) -> Vec<f64> {
        self.reflect(x)[1..].to_vec()
    }

    /// Q^T A Q for symmetric A, via H A H with the first row and column dropped.
    pub fn project(&self, a: &Matrix) -> Matrix {
        let n = self.dim();
        let aw = mat_vec(a, &self.w);
        let gamma: f64 = self.w.iter().zip(&aw).map(|(x, y)| x * y).sum();
        let b = self.beta;
        let w = &self.w;
        Mat::from_fn(n - 1, n - 1, |i, j| {
            let (i, j) = (i + 1, j + 1);
            a[(i, j)] - b * w[i] * aw[j] - b * aw[i] * w[j] + b * b * gamma * w[i] * w[j]
        })
    }

    /// Q M as an n x (n-1) matrix for a given (n-1) x k matrix M.
    pub fn embed_columns(&self, m: &Matrix) -> Matrix {
        let n = self.dim();
        let mut out = Mat::zeros(n, m.ncols());
        for j in 0..m.ncols() {
            let e = self.embed(&column(m, j));
            for i in 0..n {
                out[(i, j)] = e[i];
            }
        }
        out
    }
}
