//! Stencil matrices and the small set of solvers the finite-difference code
//! needs: Jacobi-preconditioned conjugate gradients, a banded Cholesky
//! factorization, and the cyclic Jacobi eigenvalue method.

use crate::error::{Error, Result};

/// Symmetric matrix with nearest-neighbour couplings on a Cartesian grid.
///
/// Row `i` reads `diag[i]·x[i] - Σ_a (w_a[i]·x[i+s_a] + w_a[i-s_a]·x[i-s_a])`
/// where `w_a[i]` couples node `i` with its `+a` neighbour.
#[derive(Debug, Clone, PartialEq)]
pub struct StencilMatrix {
    n: usize,
    dim: usize,
    strides: [usize; 3],
    diag: Vec<f64>,
    off: [Vec<f64>; 3],
}

impl StencilMatrix {
    pub fn new(n: usize, dim: usize, strides: [usize; 3]) -> Self {
        Self {
            n,
            dim,
            strides,
            diag: vec![0.0; n],
            off: [vec![0.0; n], vec![0.0; n], vec![0.0; n]],
        }
    }

    pub fn size(&self) -> usize {
        self.n
    }

    pub fn diag(&self) -> &[f64] {
        &self.diag
    }

    pub fn diag_mut(&mut self) -> &mut [f64] {
        &mut self.diag
    }

    /// Coupling weight between `i` and `i + stride[axis]`.
    pub fn coupling(&self, axis: usize, i: usize) -> f64 {
        self.off[axis][i]
    }

    pub fn set_coupling(&mut self, axis: usize, i: usize, w: f64) {
        self.off[axis][i] = w;
    }

    pub fn stride(&self, axis: usize) -> usize {
        self.strides[axis]
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// `y = A x`
    pub fn apply(&self, x: &[f64], y: &mut [f64]) {
        for i in 0..self.n {
            y[i] = self.diag[i] * x[i];
        }
        for a in 0..self.dim {
            let s = self.strides[a];
            let w = &self.off[a];
            for i in 0..self.n.saturating_sub(s) {
                let c = w[i];
                if c != 0.0 {
                    y[i] -= c * x[i + s];
                    y[i + s] -= c * x[i];
                }
            }
        }
    }

    /// Largest stride with a nonzero coupling, i.e. the half bandwidth.
    pub fn bandwidth(&self) -> usize {
        (0..self.dim)
            .filter(|&a| self.off[a].iter().any(|&w| w != 0.0))
            .map(|a| self.strides[a])
            .max()
            .unwrap_or(0)
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut m = vec![vec![0.0; self.n]; self.n];
        for i in 0..self.n {
            m[i][i] = self.diag[i];
        }
        for a in 0..self.dim {
            let s = self.strides[a];
            for i in 0..self.n.saturating_sub(s) {
                m[i][i + s] -= self.off[a][i];
                m[i + s][i] -= self.off[a][i];
            }
        }
        m
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveReport {
    pub iterations: usize,
    pub residual: f64,
}

/// Jacobi-preconditioned conjugate gradients, starting from the contents of
/// `x`. Converges when `‖b - Ax‖ ≤ tol·‖b‖`.
pub fn pcg(
    a: &StencilMatrix,
    b: &[f64],
    x: &mut [f64],
    tol: f64,
    max_iter: usize,
) -> Result<SolveReport> {
    let n = a.size();
    let bnorm = norm(b);
    if bnorm == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return Ok(SolveReport {
            iterations: 0,
            residual: 0.0,
        });
    }
    let inv: Vec<f64> = a
        .diag()
        .iter()
        .map(|&d| if d > 0.0 { 1.0 / d } else { 1.0 })
        .collect();
    let mut r = vec![0.0; n];
    a.apply(x, &mut r);
    for i in 0..n {
        r[i] = b[i] - r[i];
    }
    let mut z: Vec<f64> = r.iter().zip(&inv).map(|(r, d)| r * d).collect();
    let mut p = z.clone();
    let mut ap = vec![0.0; n];
    let mut rz = dot(&r, &z);
    let mut rel = norm(&r) / bnorm;
    let mut it = 0;
    while rel > tol {
        if it >= max_iter {
            return Err(Error::Convergence {
                iterations: it,
                residual: rel,
            });
        }
        a.apply(&p, &mut ap);
        let pap = dot(&p, &ap);
        if pap <= 0.0 {
            return Err(Error::Degenerate(format!(
                "conjugate gradients hit a non-positive curvature {pap:.3e}"
            )));
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        for i in 0..n {
            z[i] = r[i] * inv[i];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
        rel = norm(&r) / bnorm;
        it += 1;
    }
    Ok(SolveReport {
        iterations: it,
        residual: rel,
    })
}

/// Cholesky factor `A = L Lᵀ` of a symmetric positive definite band matrix.
#[derive(Debug, Clone)]
pub struct BandedCholesky {
    n: usize,
    bw: usize,
    // Row i holds L[i][i-bw..=i], left-padded.
    l: Vec<f64>,
}

impl BandedCholesky {
    pub fn factor(a: &StencilMatrix) -> Result<Self> {
        let n = a.size();
        let bw = a.bandwidth();
        let w = bw + 1;
        let mut l = vec![0.0; n * w];
        // Band entry (i, j) with j <= i lives at l[i*w + bw - (i - j)].
        for i in 0..n {
            l[i * w + bw] = a.diag()[i];
            for ax in 0..a.dim() {
                let s = a.stride(ax);
                if i >= s && s <= bw {
                    l[i * w + bw - s] -= a.coupling(ax, i - s);
                }
            }
        }
        for i in 0..n {
            let j0 = i.saturating_sub(bw);
            for j in j0..=i {
                let k0 = j0.max(j.saturating_sub(bw));
                let mut sum = l[i * w + bw - (i - j)];
                for k in k0..j {
                    sum -= l[i * w + bw - (i - k)] * l[j * w + bw - (j - k)];
                }
                if i == j {
                    if sum <= 0.0 {
                        return Err(Error::Degenerate(format!(
                            "matrix is not positive definite (pivot {sum:.3e} at row {i})"
                        )));
                    }
                    l[i * w + bw] = sum.sqrt();
                } else {
                    l[i * w + bw - (i - j)] = sum / l[j * w + bw];
                }
            }
        }
        Ok(Self { n, bw, l })
    }

    pub fn size(&self) -> usize {
        self.n
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let (n, bw, w) = (self.n, self.bw, self.bw + 1);
        let mut y = b.to_vec();
        for i in 0..n {
            let mut sum = y[i];
            for k in i.saturating_sub(bw)..i {
                sum -= self.l[i * w + bw - (i - k)] * y[k];
            }
            y[i] = sum / self.l[i * w + bw];
        }
        for i in (0..n).rev() {
            let mut sum = y[i];
            for k in i + 1..(i + bw + 1).min(n) {
                sum -= self.l[k * w + bw - (k - i)] * y[k];
            }
            y[i] = sum / self.l[i * w + bw];
        }
        y
    }
}

/// Eigen-decomposition of a dense symmetric matrix by cyclic Jacobi
/// rotations. Returns eigenvalues and the eigenvectors as columns of the
/// second matrix (`vectors[row][col]`), in no particular order.
pub fn jacobi_eigen(a: &[Vec<f64>]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = a.len();
    let mut m: Vec<Vec<f64>> = a.to_vec();
    let mut v = vec![vec![0.0; n]; n];
    for (i, row) in v.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    let scale: f64 = m.iter().flatten().map(|x| x * x).sum::<f64>().sqrt();
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| m[i][j] * m[i][j])
            .sum::<f64>()
            .sqrt();
        if off <= 1e-15 * scale || scale == 0.0 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[p][q];
                if apq.abs() <= f64::MIN_POSITIVE {
                    continue;
                }
                let theta = (m[q][q] - m[p][p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[k][p];
                    let mkq = m[k][q];
                    m[k][p] = c * mkp - s * mkq;
                    m[k][q] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[p][k];
                    let mqk = m[q][k];
                    m[p][k] = c * mpk - s * mqk;
                    m[q][k] = s * mpk + c * mqk;
                }
                for row in v.iter_mut() {
                    let vkp = row[p];
                    let vkq = row[q];
                    row[p] = c * vkp - s * vkq;
                    row[q] = s * vkp + c * vkq;
                }
            }
        }
    }
    ((0..n).map(|i| m[i][i]).collect(), v)
}
