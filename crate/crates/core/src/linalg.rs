//! Small symmetric tensors and dense solves.

use crate::error::{Error, Result};

/// Symmetric matrix of size 2 or 3, stored densely.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tensor {
    pub n: usize,
    pub m: [[f64; 3]; 3],
}

impl Tensor {
    pub fn zeros(n: usize) -> Self {
        Self { n, m: [[0.0; 3]; 3] }
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(n);
        for i in 0..n {
            t.m[i][i] = 1.0;
        }
        t
    }

    pub fn outer(v: &[f64]) -> Self {
        let mut t = Self::zeros(v.len());
        for i in 0..v.len() {
            for j in 0..v.len() {
                t.m[i][j] = v[i] * v[j];
            }
        }
        t
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.m[i][j]
    }

    pub fn scale(mut self, s: f64) -> Self {
        for row in self.m.iter_mut() {
            for v in row.iter_mut() {
                *v *= s;
            }
        }
        self
    }

    pub fn add_scaled(&mut self, other: &Tensor, s: f64) {
        for i in 0..self.n {
            for j in 0..self.n {
                self.m[i][j] += s * other.m[i][j];
            }
        }
    }

    pub fn trace(&self) -> f64 {
        (0..self.n).map(|i| self.m[i][i]).sum()
    }

    /// tr(self * other) for symmetric arguments.
    pub fn contract(&self, other: &Tensor) -> f64 {
        let mut s = 0.0;
        for i in 0..self.n {
            for j in 0..self.n {
                s += self.m[i][j] * other.m[i][j];
            }
        }
        s
    }

    pub fn quad(&self, v: &[f64]) -> f64 {
        let mut s = 0.0;
        for i in 0..self.n {
            for j in 0..self.n {
                s += v[i] * self.m[i][j] * v[j];
            }
        }
        s
    }

    /// Change of basis: `F diag-block F^T`, with the columns of `F` given as `frame`.
    pub fn from_frame(local: &Tensor, frame: &[Vec<f64>]) -> Tensor {
        let n = local.n;
        let mut out = Tensor::zeros(n);
        for i in 0..n {
            for j in 0..n {
                let mut s = 0.0;
                for a in 0..n {
                    for b in 0..n {
                        s += frame[a][i] * local.m[a][b] * frame[b][j];
                    }
                }
                out.m[i][j] = s;
            }
        }
        out
    }

    /// Eigenvalues in ascending order (Jacobi iteration for n = 3).
    pub fn eigenvalues(&self) -> Vec<f64> {
        if self.n == 2 {
            let (a, b, d) = (self.m[0][0], self.m[0][1], self.m[1][1]);
            let mean = 0.5 * (a + d);
            let r = (0.25 * (a - d) * (a - d) + b * b).sqrt();
            return vec![mean - r, mean + r];
        }
        let mut a = self.m;
        let n = self.n;
        for _ in 0..50 {
            let mut off = 0.0;
            for i in 0..n {
                for j in 0..n {
                    if i != j {
                        off += a[i][j] * a[i][j];
                    }
                }
            }
            if off < 1e-30 {
                break;
            }
            for p in 0..n {
                for q in p + 1..n {
                    if a[p][q].abs() < 1e-300 {
                        continue;
                    }
                    let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                    let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                    let t = if theta == 0.0 { 1.0 } else { t };
                    let c = 1.0 / (t * t + 1.0).sqrt();
                    let s = t * c;
                    for k in 0..n {
                        let akp = a[k][p];
                        let akq = a[k][q];
                        a[k][p] = c * akp - s * akq;
                        a[k][q] = s * akp + c * akq;
                    }
                    for k in 0..n {
                        let apk = a[p][k];
                        let aqk = a[q][k];
                        a[p][k] = c * apk - s * aqk;
                        a[q][k] = s * apk + c * aqk;
                    }
                }
            }
        }
        let mut ev: Vec<f64> = (0..n).map(|i| a[i][i]).collect();
        ev.sort_by(|x, y| x.total_cmp(y));
        ev
    }
}

/// Orthonormal frame whose first vector is `e` (normalised).
pub fn frame_from(e: &[f64]) -> Result<Vec<Vec<f64>>> {
    let norm = e.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !(norm > 0.0) {
        return Err(Error::Invalid("direction must be nonzero".into()));
    }
    let e: Vec<f64> = e.iter().map(|v| v / norm).collect();
    match e.len() {
        2 => Ok(vec![e.clone(), vec![-e[1], e[0]]]),
        3 => {
            let pick = if e[0].abs() < 0.9 { [1.0, 0.0, 0.0] } else { [0.0, 1.0, 0.0] };
            let d: f64 = pick.iter().zip(&e).map(|(a, b)| a * b).sum();
            let mut f1: Vec<f64> = (0..3).map(|i| pick[i] - d * e[i]).collect();
            let n1 = f1.iter().map(|v| v * v).sum::<f64>().sqrt();
            f1.iter_mut().for_each(|v| *v /= n1);
            let f2 = vec![
                e[1] * f1[2] - e[2] * f1[1],
                e[2] * f1[0] - e[0] * f1[2],
                e[0] * f1[1] - e[1] * f1[0],
            ];
            Ok(vec![e, f1, f2])
        }
        n => Err(Error::Invalid(format!("unsupported dimension {n}"))),
    }
}

/// Dense LU factorisation with partial pivoting (faer backend).
pub struct DenseLu {
    lu: faer::linalg::solvers::PartialPivLu<f64>,
    n: usize,
}

impl DenseLu {
    pub fn new(a: &faer::Mat<f64>) -> Self {
        Self { lu: a.partial_piv_lu(), n: a.nrows() }
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        use faer::prelude::Solve;
        let rhs = faer::Mat::<f64>::from_fn(self.n, 1, |i, _| b[i]);
        let x = self.lu.solve(&rhs);
        (0..self.n).map(|i| x[(i, 0)]).collect()
    }
}
