//! Dense square matrices with a cyclic Jacobi eigensolver for symmetric
//! input. No external linear-algebra dependency: every matrix in this
//! crate is at most a few hundred rows (B x B estimator matrices,
//! PQ x PQ covariance blocks), well inside Jacobi territory.

use crate::numeric::KahanSum;

/// Row-major dense square matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SquareMatrix {
    n: usize,
    data: Vec<f64>,
}

impl SquareMatrix {
    /// Zero matrix of order `n`.
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            data: vec![0.0; n * n],
        }
    }

    /// Identity matrix of order `n`.
    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            m.set(i, i, 1.0);
        }
        m
    }

    /// Builds from a row-major element function.
    pub fn from_fn(n: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            for j in 0..n {
                m.set(i, j, f(i, j));
            }
        }
        m
    }

    pub fn order(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.n + j] = v;
    }

    pub fn trace(&self) -> f64 {
        let mut acc = KahanSum::new();
        for i in 0..self.n {
            acc.add(self.get(i, i));
        }
        acc.total()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// Largest absolute asymmetry |a_ij - a_ji|.
    pub fn asymmetry(&self) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..self.n {
            for j in (i + 1)..self.n {
                worst = worst.max((self.get(i, j) - self.get(j, i)).abs());
            }
        }
        worst
    }

    /// Row sums, each accumulated left to right with compensation.
    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.n)
            .map(|i| {
                let mut acc = KahanSum::new();
                for j in 0..self.n {
                    acc.add(self.get(i, j));
                }
                acc.total()
            })
            .collect()
    }

    /// Matrix-vector product, one compensated dot product per row.
    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.n, "vector length must match matrix order");
        (0..self.n)
            .map(|i| {
                let mut acc = KahanSum::new();
                for (j, xj) in x.iter().enumerate() {
                    acc.add(self.get(i, j) * xj);
                }
                acc.total()
            })
            .collect()
    }

    /// Frobenius norm of the elementwise difference.
    pub fn frobenius_distance(&self, other: &SquareMatrix) -> f64 {
        assert_eq!(self.n, other.n, "matrix orders must match");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }

    /// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations,
    /// returned in ascending order. Sweeps continue until the
    /// off-diagonal Frobenius norm falls below 1e-12 relative to the
    /// input norm (convergence is quadratic, so the final values are
    /// accurate to near machine precision).
    ///
    /// Panics if the matrix is not numerically symmetric.
    pub fn symmetric_eigenvalues(&self) -> Vec<f64> {
        let n = self.n;
        let scale = self.frobenius_norm();
        assert!(
            self.asymmetry() <= 1e-9 * scale.max(1.0),
            "symmetric_eigenvalues requires a symmetric matrix"
        );
        if n == 0 {
            return Vec::new();
        }
        let mut a = self.clone();
        // Symmetrize exactly so rotations preserve symmetry bit-for-bit.
        for i in 0..n {
            for j in (i + 1)..n {
                let v = 0.5 * (a.get(i, j) + a.get(j, i));
                a.set(i, j, v);
                a.set(j, i, v);
            }
        }
        let tol = 1e-12 * scale;
        const MAX_SWEEPS: usize = 64;
        for _ in 0..MAX_SWEEPS {
            if off_diagonal_norm(&a) <= tol {
                break;
            }
            for p in 0..n {
                for q in (p + 1)..n {
                    jacobi_rotate(&mut a, p, q);
                }
            }
        }
        let mut eig: Vec<f64> = (0..n).map(|i| a.get(i, i)).collect();
        eig.sort_by(|x, y| x.partial_cmp(y).expect("eigenvalues are finite"));
        eig
    }
}

fn off_diagonal_norm(a: &SquareMatrix) -> f64 {
    let n = a.order();
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                let v = a.get(i, j);
                s += v * v;
            }
        }
    }
    s.sqrt()
}

/// One Jacobi rotation annihilating a[p][q], applied symmetrically.
fn jacobi_rotate(a: &mut SquareMatrix, p: usize, q: usize) {
    let apq = a.get(p, q);
    if apq == 0.0 {
        return;
    }
    let app = a.get(p, p);
    let aqq = a.get(q, q);
    let theta = (aqq - app) / (2.0 * apq);
    // Smaller-magnitude root of t^2 + 2t*theta - 1 = 0 for stability.
    let t = if theta.abs() > 1e14 {
        0.5 / theta
    } else {
        let sign = if theta >= 0.0 { 1.0 } else { -1.0 };
        sign / (theta.abs() + (theta * theta + 1.0).sqrt())
    };
    let c = 1.0 / (t * t + 1.0).sqrt();
    let s = t * c;
    let tau = s / (1.0 + c);

    a.set(p, p, app - t * apq);
    a.set(q, q, aqq + t * apq);
    a.set(p, q, 0.0);
    a.set(q, p, 0.0);
    let n = a.order();
    for i in 0..n {
        if i == p || i == q {
            continue;
        }
        let aip = a.get(i, p);
        let aiq = a.get(i, q);
        let new_ip = aip - s * (aiq + tau * aip);
        let new_iq = aiq + s * (aip - tau * aiq);
        a.set(i, p, new_ip);
        a.set(p, i, new_ip);
        a.set(i, q, new_iq);
        a.set(q, i, new_iq);
    }
}
