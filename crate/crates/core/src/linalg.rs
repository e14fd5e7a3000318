//! Small direct solvers: tridiagonal, dense with zero skipping, and the
//! Brennan–Schwartz projection for obstacle problems.

use crate::error::{Error, Result};
use crate::grid::TridiagonalOperator;

/// Thomas algorithm. No pivoting; intended for diagonally dominant systems.
pub fn solve_tridiagonal(lower: &[f64], diag: &[f64], upper: &[f64], rhs: &[f64]) -> Result<Vec<f64>> {
    let n = diag.len();
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    let mut beta = diag[0];
    if beta == 0.0 {
        return Err(Error::Singular("zero pivot in tridiagonal solve".into()));
    }
    c[0] = if n > 1 { upper[0] / beta } else { 0.0 };
    d[0] = rhs[0] / beta;
    for k in 1..n {
        beta = diag[k] - lower[k - 1] * c[k - 1];
        if beta == 0.0 || !beta.is_finite() {
            return Err(Error::Singular(format!("zero pivot in tridiagonal solve at row {k}")));
        }
        c[k] = if k + 1 < n { upper[k] / beta } else { 0.0 };
        d[k] = (rhs[k] - lower[k - 1] * d[k - 1]) / beta;
    }
    for k in (0..n - 1).rev() {
        d[k] -= c[k] * d[k + 1];
    }
    Ok(d)
}

/// Row-major square matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    pub n: usize,
    pub data: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(n: usize) -> Self {
        Self { n, data: vec![0.0; n * n] }
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    #[inline]
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.n + j] += v;
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.n + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    pub fn set_row_identity(&mut self, i: usize) {
        let n = self.n;
        self.data[i * n..(i + 1) * n].fill(0.0);
        self.data[i * n + i] = 1.0;
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|i| self.row(i).iter().zip(x).map(|(a, b)| a * b).sum())
            .collect()
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.n);
        for i in 0..self.n {
            for j in 0..self.n {
                t.set(j, i, self.get(i, j));
            }
        }
        t
    }

    /// Permutes rows and columns into reverse order.
    pub fn reversed(&self) -> Self {
        let n = self.n;
        let mut t = Self::zeros(n);
        for i in 0..n {
            for j in 0..n {
                t.set(n - 1 - i, n - 1 - j, self.get(i, j));
            }
        }
        t
    }

    /// Gaussian elimination with partial pivoting. Rows whose entry in the
    /// pivot column is already zero are skipped, so Hessenberg matrices cost
    /// O(n^2).
    pub fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        let n = self.n;
        let mut a = self.data.clone();
        let mut b = rhs.to_vec();
        let scale = a.iter().fold(0.0f64, |m, x| m.max(x.abs())).max(f64::MIN_POSITIVE);
        for c in 0..n {
            let mut p = c;
            let mut best = a[c * n + c].abs();
            for r in c + 1..n {
                let v = a[r * n + c].abs();
                if v > best {
                    best = v;
                    p = r;
                }
            }
            if best <= 1e-300 * scale || best <= f64::EPSILON * 1e-6 * scale {
                return Err(Error::Singular(format!("pivot vanishes in column {c}")));
            }
            if p != c {
                for j in 0..n {
                    a.swap(c * n + j, p * n + j);
                }
                b.swap(c, p);
            }
            let piv = a[c * n + c];
            for r in c + 1..n {
                let f = a[r * n + c];
                if f == 0.0 {
                    continue;
                }
                let f = f / piv;
                a[r * n + c] = 0.0;
                for j in c + 1..n {
                    let v = a[c * n + j];
                    if v != 0.0 {
                        a[r * n + j] -= f * v;
                    }
                }
                b[r] -= f * b[c];
            }
        }
        let mut x = vec![0.0; n];
        for i in (0..n).rev() {
            let mut s = b[i];
            for j in i + 1..n {
                s -= a[i * n + j] * x[j];
            }
            x[i] = s / a[i * n + i];
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Singular("non-finite solution".into()));
        }
        Ok(x)
    }
}

/// Solves the linear complementarity problem
/// min(A y − rhs, y − obstacle) = 0 for an M-matrix A whose contact set is
/// a lower interval of indices (Brennan–Schwartz).
pub fn brennan_schwartz(a: &TridiagonalOperator, rhs: &[f64], obstacle: &[f64]) -> Result<Vec<f64>> {
    let n = a.diag.len();
    let mut d = a.diag.clone();
    let mut b = rhs.to_vec();
    // eliminate the superdiagonal from the top down
    for k in (0..n - 1).rev() {
        if d[k + 1] == 0.0 {
            return Err(Error::Singular("zero pivot in projected solve".into()));
        }
        let f = a.upper[k] / d[k + 1];
        d[k] -= f * a.lower[k];
        b[k] -= f * b[k + 1];
    }
    let mut y = vec![0.0; n];
    y[0] = (b[0] / d[0]).max(obstacle[0]);
    for k in 1..n {
        y[k] = ((b[k] - a.lower[k - 1] * y[k - 1]) / d[k]).max(obstacle[k]);
    }
    Ok(y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn tridiagonal_small() {
        let x = solve_tridiagonal(&[1.0, 1.0], &[4.0, 4.0, 4.0], &[1.0, 1.0], &[5.0, 6.0, 5.0]).unwrap();
        for v in x {
            assert!((v - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn dense_needs_pivoting() {
        let mut m = DenseMatrix::zeros(2);
        m.set(0, 1, 1.0);
        m.set(1, 0, 1.0);
        let x = m.solve(&[2.0, 3.0]).unwrap();
        assert_eq!(x, vec![3.0, 2.0]);
    }

    #[test]
    fn dense_singular() {
        let mut m = DenseMatrix::zeros(2);
        m.set(0, 0, 1.0);
        m.set(1, 0, 1.0);
        assert!(matches!(m.solve(&[1.0, 1.0]), Err(Error::Singular(_))));
    }

    #[test]
    fn projected_solve_matches_brute_force() {
        // 1-D American-put style: obstacle binds on a lower interval
        let n = 30;
        let h = 1.0 / (n - 1) as f64;
        let mut op = TridiagonalOperator {
            lower: vec![-1.0 / (h * h); n - 1],
            diag: vec![0.5 + 2.0 / (h * h); n],
            upper: vec![-1.0 / (h * h); n - 1],
        };
        op.diag[0] = 0.5 + 1.0 / (h * h);
        op.diag[n - 1] = 0.5 + 1.0 / (h * h);
        let rhs: Vec<f64> = (0..n).map(|k| k as f64 * h).collect();
        let obs: Vec<f64> = (0..n).map(|k| 1.2 - k as f64 * h).collect();
        let y = brennan_schwartz(&op, &rhs, &obs).unwrap();
        // projected Gauss–Seidel reference
        let mut x = obs.clone();
        for _ in 0..200_000 {
            for k in 0..n {
                let mut s = rhs[k];
                if k > 0 {
                    s -= op.lower[k - 1] * x[k - 1];
                }
                if k + 1 < n {
                    s -= op.upper[k] * x[k + 1];
                }
                x[k] = (s / op.diag[k]).max(obs[k]);
            }
        }
        for k in 0..n {
            assert!((x[k] - y[k]).abs() < 1e-9, "node {k}: {} vs {}", x[k], y[k]);
        }
        assert!(y.iter().zip(&obs).any(|(a, b)| a == b), "{y:?}");
        assert!(y.iter().zip(&obs).any(|(a, b)| a > b));
    }

    proptest! {
        #[test]
        fn dense_matches_tridiagonal(v in proptest::collection::vec((0.1f64..1.0, 0.1f64..1.0, -5.0f64..5.0), 3..30)) {
            let n = v.len();
            let lower: Vec<f64> = v[1..].iter().map(|t| -t.0).collect();
            let upper: Vec<f64> = v[..n - 1].iter().map(|t| -t.1).collect();
            let diag: Vec<f64> = v.iter().map(|t| t.0 + t.1 + 0.5).collect();
            let rhs: Vec<f64> = v.iter().map(|t| t.2).collect();
            let x = solve_tridiagonal(&lower, &diag, &upper, &rhs).unwrap();
            let mut m = DenseMatrix::zeros(n);
            for k in 0..n {
                m.set(k, k, diag[k]);
                if k > 0 { m.set(k, k - 1, lower[k - 1]); }
                if k + 1 < n { m.set(k, k + 1, upper[k]); }
            }
            let y = m.solve(&rhs).unwrap();
            for k in 0..n {
                prop_assert!((x[k] - y[k]).abs() < 1e-10);
            }
        }
    }
}
