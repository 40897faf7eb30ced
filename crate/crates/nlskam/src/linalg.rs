//! Small dense complex matrices (dimension at most 4) for the Melnikov
//! blocks: determinants and partial-pivoting solves.

use num_complex::Complex64;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// Dense complex matrix with dimension 1..=4, fixed storage.
#[derive(Clone, Debug, PartialEq)]
pub struct SmallMat {
    n: usize,
    a: [Complex64; 16],
}

impl SmallMat {
    pub fn zeros(n: usize) -> Self {
        assert!((1..=4).contains(&n));
        SmallMat { n, a: [ZERO; 16] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            m[(i, i)] = Complex64::new(1.0, 0.0);
        }
        m
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn shifted(&self, delta: Complex64) -> SmallMat {
        let mut out = self.clone();
        for i in 0..self.n {
            out[(i, i)] += delta;
        }
        out
    }

    pub fn transpose(&self) -> SmallMat {
        let mut out = Self::zeros(self.n);
        for i in 0..self.n {
            for j in 0..self.n {
                out[(i, j)] = self[(j, i)];
            }
        }
        out
    }

    /// Kronecker product, row-major with `self` as the slow index.
    pub fn kron(&self, other: &SmallMat) -> SmallMat {
        let n = self.n * other.n;
        let mut out = Self::zeros(n);
        for i in 0..self.n {
            for j in 0..self.n {
                for k in 0..other.n {
                    for l in 0..other.n {
                        out[(i * other.n + k, j * other.n + l)] = self[(i, j)] * other[(k, l)];
                    }
                }
            }
        }
        out
    }

    pub fn add(&self, other: &SmallMat) -> SmallMat {
        assert_eq!(self.n, other.n);
        let mut out = self.clone();
        for i in 0..16 {
            out.a[i] += other.a[i];
        }
        out
    }

    pub fn sub(&self, other: &SmallMat) -> SmallMat {
        assert_eq!(self.n, other.n);
        let mut out = self.clone();
        for i in 0..16 {
            out.a[i] -= other.a[i];
        }
        out
    }

    fn is_diagonal(&self) -> bool {
        for i in 0..self.n {
            for j in 0..self.n {
                if i != j && self[(i, j)] != ZERO {
                    return false;
                }
            }
        }
        true
    }

    /// Determinant. Diagonal matrices take the exact product path (left to
    /// right), everything else partial-pivoting elimination. The branch is
    /// input-determined, so identical inputs give bit-identical results at
    /// every call site.
    pub fn det(&self) -> Complex64 {
        if self.is_diagonal() {
            let mut d = Complex64::new(1.0, 0.0);
            for i in 0..self.n {
                d *= self[(i, i)];
            }
            return d;
        }
        let mut m = self.clone();
        let mut det = Complex64::new(1.0, 0.0);
        for col in 0..self.n {
            let mut piv = col;
            let mut best = m[(col, col)].norm_sqr();
            for row in (col + 1)..self.n {
                let v = m[(row, col)].norm_sqr();
                if v > best {
                    best = v;
                    piv = row;
                }
            }
            if best == 0.0 {
                return ZERO;
            }
            if piv != col {
                for j in 0..self.n {
                    let tmp = m[(col, j)];
                    m[(col, j)] = m[(piv, j)];
                    m[(piv, j)] = tmp;
                }
                det = -det;
            }
            let d = m[(col, col)];
            det *= d;
            for row in (col + 1)..self.n {
                let f = m[(row, col)] / d;
                if f != ZERO {
                    for j in col..self.n {
                        let sub = f * m[(col, j)];
                        m[(row, j)] -= sub;
                    }
                }
            }
        }
        det
    }

    /// Solve self * x = rhs by partial-pivoting Gaussian elimination.
    /// Returns the solution together with a crude condition estimate
    /// max|entry| / min|pivot|.
    pub fn solve(&self, rhs: &[Complex64]) -> Option<(Vec<Complex64>, f64)> {
        assert_eq!(rhs.len(), self.n);
        let n = self.n;
        let mut m = self.clone();
        let mut x: Vec<Complex64> = rhs.to_vec();
        let mut max_entry = 0.0f64;
        for i in 0..n {
            for j in 0..n {
                max_entry = max_entry.max(m[(i, j)].norm());
            }
        }
        let mut min_pivot = f64::INFINITY;
        for col in 0..n {
            let mut piv = col;
            let mut best = m[(col, col)].norm_sqr();
            for row in (col + 1)..n {
                let v = m[(row, col)].norm_sqr();
                if v > best {
                    best = v;
                    piv = row;
                }
            }
            if best == 0.0 {
                return None;
            }
            if piv != col {
                for j in 0..n {
                    let tmp = m[(col, j)];
                    m[(col, j)] = m[(piv, j)];
                    m[(piv, j)] = tmp;
                }
                x.swap(col, piv);
            }
            let d = m[(col, col)];
            min_pivot = min_pivot.min(d.norm());
            for row in (col + 1)..n {
                let f = m[(row, col)] / d;
                if f != ZERO {
                    for j in col..n {
                        let sub = f * m[(col, j)];
                        m[(row, j)] -= sub;
                    }
                    let sub = f * x[col];
                    x[row] -= sub;
                }
            }
        }
        for col in (0..n).rev() {
            let mut acc = x[col];
            for j in (col + 1)..n {
                acc -= m[(col, j)] * x[j];
            }
            x[col] = acc / m[(col, col)];
        }
        let cond = if min_pivot > 0.0 {
            max_entry / min_pivot
        } else {
            f64::INFINITY
        };
        Some((x, cond))
    }

    /// Max-norm of self * x - rhs.
    pub fn residual(&self, x: &[Complex64], rhs: &[Complex64]) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..self.n {
            let mut acc = -rhs[i];
            for j in 0..self.n {
                acc += self[(i, j)] * x[j];
            }
            worst = worst.max(acc.norm());
        }
        worst
    }
}

impl std::ops::Index<(usize, usize)> for SmallMat {
    type Output = Complex64;
    fn index(&self, (i, j): (usize, usize)) -> &Complex64 {
        &self.a[i * 4 + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for SmallMat {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut Complex64 {
        &mut self.a[i * 4 + j]
    }
}
