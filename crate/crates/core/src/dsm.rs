//! Classical direct sampling: probing functions, the index function and the
//! spectral (Picard) diagnostic of the Neumann-to-Dirichlet difference.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::data::{boundary_operator, difference_from_background, fourier_basis, CauchyPair};
use crate::error::{Error, Result};
use crate::geometry::{BoundaryParam, Grid, InclusionSet, ScalarField};
use crate::linalg::jacobi_eigen;
use crate::pde::{
    boundary_inner, flux_inner, kernel_stencils, solve_point_source, BackgroundSolver,
    BoundaryTrace, CoefficientField, NeumannSolver,
};

/// Surface flux `η_x` of the background point-source solution, with its
/// boundary norms.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbingTrace {
    pub source: usize,
    pub eta: BoundaryTrace,
    pub l2: f64,
    /// `H¹` seminorm.
    pub h1: f64,
}

impl ProbingTrace {
    fn new(grid: &Grid, source: usize, eta: BoundaryTrace) -> Self {
        let (l2, h1) = boundary_norms(grid, eta.values());
        Self {
            source,
            eta,
            l2,
            h1,
        }
    }

    /// `|η|_{H¹}^p · |η|_{L²}^q`
    pub fn norm_y(&self, exps: NormExponents) -> f64 {
        self.h1.powf(exps.h1) * self.l2.powf(exps.l2)
    }
}

/// Exponents of the probing norm `|·|_Y = |·|_{H¹}^{h1} |·|_{L²}^{l2}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormExponents {
    pub h1: f64,
    pub l2: f64,
}

impl Default for NormExponents {
    fn default() -> Self {
        Self { h1: 0.5, l2: 0.75 }
    }
}

/// Trapezoid `L²` norm and `H¹` seminorm of a boundary trace. The seminorm
/// sums squared first differences over surface edges of the grid.
pub(crate) fn boundary_norms(grid: &Grid, v: &[f64]) -> (f64, f64) {
    let l2 = grid
        .boundary()
        .iter()
        .zip(v)
        .map(|(b, x)| b.weight * x * x)
        .sum::<f64>()
        .sqrt();
    let h1 = if grid.dim() == 2 {
        let m = v.len();
        let p = grid.perimeter();
        (0..m)
            .map(|k| {
                let next = (k + 1) % m;
                let (BoundaryParam::Curve { arclength: a, .. }, BoundaryParam::Curve { arclength: b, .. }) =
                    (grid.boundary()[k].param, grid.boundary()[next].param)
                else {
                    unreachable!("2D grid")
                };
                let h = (b - a).rem_euclid(p);
                (v[next] - v[k]).powi(2) / h
            })
            .sum::<f64>()
            .sqrt()
    } else {
        surface_seminorm(grid, v)
    };
    (l2, h1)
}

fn surface_seminorm(grid: &Grid, v: &[f64]) -> f64 {
    let n = grid.counts3();
    let h = grid.spacing();
    let strides = grid.strides();
    let on = |m: &[usize; 3], t: usize| m[t] == 0 || m[t] == n[t] - 1;
    let mut total = 0.0;
    for (k, b) in grid.boundary().iter().enumerate() {
        let m = grid.multi_index(b.node);
        for a in 0..3 {
            if m[a] + 1 >= n[a] {
                continue;
            }
            let nb = b.node + strides[a];
            let Some(q) = grid.boundary_position(nb) else {
                continue;
            };
            let mq = grid.multi_index(nb);
            // The edge lies on every face shared by both ends.
            for f in (0..3).filter(|&f| f != a && on(&m, f) && on(&mq, f) && m[f] == mq[f]) {
                let t = 3 - a - f;
                let w = if on(&m, t) { 0.5 * h[t] } else { h[t] };
                total += (v[q] - v[k]).powi(2) * w / h[a];
            }
        }
    }
    total.sqrt()
}

/// `η_x` from a direct point-source solve.
pub fn probing_numeric(grid: &Grid, mu0: f64, x: usize) -> Result<ProbingTrace> {
    let w = solve_point_source(grid, mu0, x)?;
    let v = w.values();
    let eta = kernel_stencils(grid)
        .iter()
        .map(|st| -st.iter().map(|&(nb, c)| c * v[nb]).sum::<f64>())
        .collect();
    Ok(ProbingTrace::new(grid, x, BoundaryTrace::from_raw(eta)))
}

/// `η_x` for every interior node, from one adjoint solve per boundary node:
/// the flux stencil at boundary node `b` applied to the
/// point-source solution equals `(A⁻¹ c_b)(x)` by symmetry of the operator.
#[derive(Debug, Clone)]
pub struct ProbingTable {
    grid: Grid,
    mu0: f64,
    /// `eta[x * m + b]` for `m` boundary nodes.
    eta: Vec<f64>,
    l2: Vec<f64>,
    h1: Vec<f64>,
}

impl ProbingTable {
    pub fn build(bg: &BackgroundSolver) -> Result<Self> {
        let grid = bg.grid().clone();
        let m = grid.boundary_len();
        let nn = grid.node_count();
        let mut eta = vec![0.0; nn * m];
        let mut load = vec![0.0; nn];
        for (b, stencil) in kernel_stencils(&grid).iter().enumerate() {
            load.iter_mut().for_each(|v| *v = 0.0);
            for &(node, c) in stencil {
                load[node] -= c;
            }
            let z = bg.dirichlet_load(&load)?;
            for (x, zx) in z.iter().enumerate() {
                eta[x * m + b] = *zx;
            }
        }
        let mut l2 = vec![0.0; nn];
        let mut h1 = vec![0.0; nn];
        for x in grid.interior_nodes() {
            let (a, b) = boundary_norms(&grid, &eta[x * m..(x + 1) * m]);
            l2[x] = a;
            h1[x] = b;
        }
        Ok(Self {
            grid,
            mu0: bg.mu0(),
            eta,
            l2,
            h1,
        })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn mu0(&self) -> f64 {
        self.mu0
    }

    /// The probing trace of an interior node.
    pub fn trace(&self, x: usize) -> Result<ProbingTrace> {
        if x >= self.grid.node_count() || self.grid.is_boundary(x) {
            return Err(Error::param(format!("node {x} is not an interior node")));
        }
        let m = self.grid.boundary_len();
        Ok(ProbingTrace {
            source: x,
            eta: BoundaryTrace::from_raw(self.eta[x * m..(x + 1) * m].to_vec()),
            l2: self.l2[x],
            h1: self.h1[x],
        })
    }

    /// `|η_x|_Y` for an interior node.
    pub fn norm_y(&self, x: usize, exps: NormExponents) -> f64 {
        self.h1[x].powf(exps.h1) * self.l2[x].powf(exps.l2)
    }
}

/// Ratio `I_n(zr) / I_n(z)` of modified Bessel functions, via the normalized
/// series `Σ_k (z²/4)^k n! / (k! (n+k)!)`.
fn bessel_ratio(n: usize, z: f64, r: f64) -> f64 {
    let series = |arg: f64| {
        let q = 0.25 * arg * arg;
        let (mut term, mut sum) = (1.0, 1.0);
        for k in 1..500 {
            term *= q / (k as f64 * (n + k) as f64);
            sum += term;
            if term < 1e-17 * sum {
                break;
            }
        }
        sum
    };
    r.powi(n as i32) * series(z * r) / series(z)
}

/// Probing function of the unit disk at `x = r e^{iθ_x}`, evaluated at the
/// boundary angle `ξ`: `(1/2π) Σ_{|n|≤T} I_n(√μ0 r)/I_n(√μ0) cos(n(θ_x - ξ))`.
pub fn probing_series_disk(r: f64, theta_x: f64, xi: f64, mu0: f64, n_terms: usize) -> Result<f64> {
    if !(0.0..1.0).contains(&r) {
        return Err(Error::param("source must lie inside the unit disk"));
    }
    if !(mu0.is_finite() && mu0 >= 0.0) || n_terms == 0 {
        return Err(Error::param("need μ0 ≥ 0 and at least one term"));
    }
    let z = mu0.sqrt();
    let sum: f64 = (1..=n_terms)
        .map(|n| 2.0 * bessel_ratio(n, z, r) * (n as f64 * (theta_x - xi)).cos())
        .sum();
    Ok((bessel_ratio(0, z, r) + sum) / (2.0 * PI))
}

/// `∮ (-Δ_Γ)^s(data) · η ds` by the trapezoid rule.
pub fn duality_product(grid: &Grid, eta: &BoundaryTrace, data: &BoundaryTrace, s: u8) -> Result<f64> {
    eta.check(grid)?;
    let d = boundary_operator(grid, data, s)?;
    Ok(boundary_inner(grid, eta, &d))
}

/// Classical index `I(x) = φ(x) / |η_x|_Y` for one Cauchy pair, reusing the
/// probing table across calls.
#[derive(Debug, Clone)]
pub struct DsmSolver {
    background: BackgroundSolver,
    table: ProbingTable,
}

impl DsmSolver {
    pub fn new(grid: &Grid, mu0: f64) -> Result<Self> {
        let background = BackgroundSolver::new(grid, mu0)?;
        let table = ProbingTable::build(&background)?;
        Ok(Self { background, table })
    }

    pub fn table(&self) -> &ProbingTable {
        &self.table
    }

    pub fn background(&self) -> &BackgroundSolver {
        &self.background
    }

    pub fn index(&self, pair: &CauchyPair, s: u8, exps: NormExponents) -> Result<ScalarField> {
        let lambda = self.background.ntd(&pair.g)?;
        let phi = difference_from_background(&self.background, &pair.f, &lambda, s)?;
        self.index_from_difference(&phi, exps)
    }

    pub fn index_from_difference(&self, phi: &ScalarField, exps: NormExponents) -> Result<ScalarField> {
        let grid = self.background.grid();
        phi.check(grid)?;
        let mut out = ScalarField::zeros(grid);
        for x in grid.interior_nodes() {
            let norm = self.table.norm_y(x, exps);
            if !(norm > 0.0) {
                return Err(Error::Degenerate(format!("probing norm vanishes at node {x}")));
            }
            out.values_mut()[x] = phi.values()[x] / norm;
        }
        Ok(out)
    }
}

pub fn dsm_index(
    grid: &Grid,
    mu0: f64,
    pair: &CauchyPair,
    s: u8,
    exps: NormExponents,
) -> Result<ScalarField> {
    DsmSolver::new(grid, mu0)?.index(pair, s, exps)
}

/// Eigen-decomposition of the Neumann-to-Dirichlet difference restricted to
/// an orthonormalized flux basis.
#[derive(Debug, Clone)]
pub struct SpectralDecomposition {
    /// Orthonormalized basis fluxes.
    pub basis: Vec<BoundaryTrace>,
    /// Symmetrized `A_ij = ⟨g_i, (Λ_{μ0} - Λ_μ) g_j⟩` in the flux inner
    /// product, which differs from the trapezoid rule only at corners.
    pub matrix: Vec<Vec<f64>>,
    /// Sorted by descending magnitude.
    pub eigenvalues: Vec<f64>,
    /// `eigenvectors[ω][j]` is the coefficient of basis flux `j` in `ν_ω`.
    pub eigenvectors: Vec<Vec<f64>>,
    pub fluxes: Vec<BoundaryTrace>,
    /// Difference functions of the eigen-fluxes (`s = 0`).
    pub phi: Vec<ScalarField>,
    /// Largest asymmetry `max|A - Aᵀ|` before symmetrization.
    pub asymmetry: f64,
}

impl SpectralDecomposition {
    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }
}

/// Modified Gram-Schmidt under the flux inner product.
pub fn orthonormalize(grid: &Grid, basis: &[BoundaryTrace]) -> Result<Vec<BoundaryTrace>> {
    let mut out: Vec<BoundaryTrace> = Vec::with_capacity(basis.len());
    for g in basis {
        let mut v = g.clone();
        for q in &out {
            v = v.axpy(-flux_inner(grid, q, &v), q);
        }
        let norm = flux_inner(grid, &v, &v).sqrt();
        if !(norm > 1e-12 * flux_inner(grid, g, g).sqrt()) {
            return Err(Error::Degenerate("basis fluxes are linearly dependent".into()));
        }
        out.push(v.scaled(1.0 / norm));
    }
    Ok(out)
}

/// Builds the difference matrix for the inclusions and decomposes it. The
/// orientation `Λ_{μ0} - Λ_μ` is positive semidefinite when `μ ≥ μ0`.
pub fn ntd_difference_matrix(
    grid: &Grid,
    incl: &InclusionSet,
    basis: &[BoundaryTrace],
) -> Result<SpectralDecomposition> {
    if basis.is_empty() {
        return Err(Error::param("the basis is empty"));
    }
    let basis = orthonormalize(grid, basis)?;
    let bg = BackgroundSolver::new(grid, incl.mu0())?;
    let forward = NeumannSolver::new(grid, &CoefficientField::from_inclusions(grid, incl)?)?;
    let measured: Vec<BoundaryTrace> = basis.iter().map(|g| forward.ntd(g)).collect::<Result<_>>()?;
    let background: Vec<BoundaryTrace> = basis.iter().map(|g| bg.ntd(g)).collect::<Result<_>>()?;
    let n = basis.len();
    let diff: Vec<BoundaryTrace> = (0..n).map(|j| background[j].axpy(-1.0, &measured[j])).collect();
    let raw: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| flux_inner(grid, &basis[i], &diff[j])).collect())
        .collect();
    let mut asymmetry = 0.0f64;
    let mut matrix = raw.clone();
    for i in 0..n {
        for j in 0..n {
            asymmetry = asymmetry.max((raw[i][j] - raw[j][i]).abs());
            matrix[i][j] = 0.5 * (raw[i][j] + raw[j][i]);
        }
    }
    let (vals, vecs) = jacobi_eigen(&matrix);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| vals[b].abs().total_cmp(&vals[a].abs()));
    let eigenvalues: Vec<f64> = order.iter().map(|&k| vals[k]).collect();
    let eigenvectors: Vec<Vec<f64>> = order
        .iter()
        .map(|&k| (0..n).map(|j| vecs[j][k]).collect())
        .collect();
    let combine = |traces: &[BoundaryTrace], c: &[f64]| {
        c.iter()
            .zip(traces)
            .fold(BoundaryTrace::zeros(grid), |acc, (cj, t)| acc.axpy(*cj, t))
    };
    let mut fluxes = Vec::with_capacity(n);
    let mut phi = Vec::with_capacity(n);
    for c in &eigenvectors {
        fluxes.push(combine(&basis, c));
        let f = combine(&measured, c);
        let lambda = combine(&background, c);
        phi.push(difference_from_background(&bg, &f, &lambda, 0)?);
    }
    Ok(SpectralDecomposition {
        basis,
        matrix,
        eigenvalues,
        eigenvectors,
        fluxes,
        phi,
        asymmetry,
    })
}

impl SpectralDecomposition {
    /// Keeps the `n` leading eigenpairs.
    pub fn truncate(mut self, n: usize) -> Self {
        let n = n.min(self.len());
        self.eigenvalues.truncate(n);
        self.eigenvectors.truncate(n);
        self.fluxes.truncate(n);
        self.phi.truncate(n);
        self
    }
}

/// Leading `n` eigenpairs of the difference operator, computed in an enriched
/// 2D Fourier basis: the constant (when `μ0 > 0`) plus `oversample · n`
/// cosine/sine modes. Eigen-fluxes of a basis that is only as large as the
/// number of retained pairs leak noticeably outside its span.
pub fn spectral_decomposition(
    grid: &Grid,
    incl: &InclusionSet,
    n: usize,
    oversample: usize,
) -> Result<SpectralDecomposition> {
    if n == 0 || oversample == 0 {
        return Err(Error::param("need at least one mode and oversample ≥ 1"));
    }
    let size = 2 * (n * oversample).div_ceil(2);
    let mut basis = fourier_basis(size, grid)?;
    if incl.mu0() > 0.0 {
        basis.insert(0, BoundaryTrace::from_fn(grid, |_| 1.0));
    }
    Ok(ntd_difference_matrix(grid, incl, &basis)?.truncate(n))
}

/// Relative eigenvalue floor of the Picard series.
pub const EIGENVALUE_FLOOR: f64 = 1e-10;

/// `S_K(x) = Σ_{ω ≤ K, |λ_ω| > ε} φ^ω(x)² / |λ_ω|³`; small values indicate
/// points inside the inclusions.
pub fn picard_index(spec: &SpectralDecomposition, k: usize) -> Result<ScalarField> {
    if k == 0 || k > spec.len() {
        return Err(Error::param(format!("truncation {k} is outside 1..={}", spec.len())));
    }
    let floor = EIGENVALUE_FLOOR * spec.eigenvalues[0].abs();
    let kept: Vec<usize> = (0..k).filter(|&w| spec.eigenvalues[w].abs() > floor).collect();
    if kept.is_empty() {
        return Err(Error::Degenerate("all eigenvalues fall below the floor".into()));
    }
    let mut out = spec.phi[0].clone();
    out.values_mut().iter_mut().for_each(|v| *v = 0.0);
    for w in kept {
        let l3 = spec.eigenvalues[w].abs().powi(3);
        for (o, p) in out.values_mut().iter_mut().zip(spec.phi[w].values()) {
            *o += p * p / l3;
        }
    }
    Ok(out)
}
