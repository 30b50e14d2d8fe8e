//! Second-order finite differences for `-Δu + μu = 0` on Cartesian grids.
//!
//! Every problem is assembled into the same symmetric form: each row of the
//! five/seven-point stencil is multiplied by the trapezoid volume of its node.
//! On boundary rows the ghost-node Neumann closure then becomes symmetric and
//! the flux enters the right-hand side through the trapezoid boundary weight,
//! so the discrete compatibility condition of the pure Neumann problem is
//! exactly the trapezoid rule `∮ g ds = 0`.

use crate::error::{Error, Result};
use crate::geometry::{rasterize_mask, Grid, InclusionSet, ScalarField};
use crate::linalg::{norm, pcg, BandedCholesky, StencilMatrix};

/// One value per ordered boundary node of a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryTrace {
    values: Vec<f64>,
}

impl BoundaryTrace {
    pub fn zeros(grid: &Grid) -> Self {
        Self {
            values: vec![0.0; grid.boundary_len()],
        }
    }

    pub fn from_values(grid: &Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.boundary_len() {
            return Err(Error::shape(format!(
                "trace has {} values, grid has {} boundary nodes",
                values.len(),
                grid.boundary_len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::param("trace values must be finite"));
        }
        Ok(Self { values })
    }

    /// Evaluates `f` at the coordinates of each boundary node.
    pub fn from_fn(grid: &Grid, f: impl Fn([f64; 3]) -> f64) -> Self {
        Self {
            values: grid.boundary().iter().map(|b| f(grid.coords(b.node))).collect(),
        }
    }

    pub(crate) fn from_raw(values: Vec<f64>) -> Self {
        Self { values }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn check(&self, grid: &Grid) -> Result<()> {
        if self.values.len() != grid.boundary_len() {
            return Err(Error::shape(format!(
                "trace of length {} does not match {} boundary nodes",
                self.values.len(),
                grid.boundary_len()
            )));
        }
        Ok(())
    }

    pub fn scaled(&self, alpha: f64) -> Self {
        Self {
            values: self.values.iter().map(|v| alpha * v).collect(),
        }
    }

    /// `self + alpha · other`
    pub fn axpy(&self, alpha: f64, other: &BoundaryTrace) -> Self {
        Self {
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a + alpha * b)
                .collect(),
        }
    }
}

/// Trapezoid rule `∮ t ds`.
pub fn boundary_integral(grid: &Grid, t: &BoundaryTrace) -> f64 {
    grid.boundary()
        .iter()
        .zip(t.values())
        .map(|(b, v)| b.weight * v)
        .sum()
}

/// Trapezoid rule `∮ a b ds`.
pub fn boundary_inner(grid: &Grid, a: &BoundaryTrace, b: &BoundaryTrace) -> f64 {
    grid.boundary()
        .iter()
        .zip(a.values().iter().zip(b.values()))
        .map(|(n, (x, y))| n.weight * x * y)
        .sum()
}

pub fn boundary_l2_norm(grid: &Grid, t: &BoundaryTrace) -> f64 {
    boundary_inner(grid, t, t).sqrt()
}

/// Absorption coefficient `μ(x) ≥ 0` at every node.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientField {
    values: Vec<f64>,
}

impl CoefficientField {
    pub fn new(grid: &Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.node_count() {
            return Err(Error::shape("coefficient length does not match the grid"));
        }
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::param("absorption must be finite and nonnegative"));
        }
        Ok(Self { values })
    }

    pub fn constant(grid: &Grid, mu: f64) -> Result<Self> {
        Self::new(grid, vec![mu; grid.node_count()])
    }

    /// `μ0 + (μ1 - μ0)·mask`
    pub fn from_mask(grid: &Grid, mask: &ScalarField, mu0: f64, mu1: f64) -> Result<Self> {
        mask.check(grid)?;
        Self::new(
            grid,
            mask.values().iter().map(|m| mu0 + (mu1 - mu0) * m).collect(),
        )
    }

    pub fn from_inclusions(grid: &Grid, incl: &InclusionSet) -> Result<Self> {
        Self::from_mask(grid, &rasterize_mask(incl, grid), incl.mu0(), incl.mu1())
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0)
    }
}

/// Assembled symmetric system. `null_space` is set for the pure Neumann
/// problem with `μ ≡ 0`, whose kernel is the constants.
#[derive(Debug, Clone)]
pub struct LinearSystem {
    pub matrix: StencilMatrix,
    pub rhs: Vec<f64>,
    pub null_space: bool,
    /// Trapezoid `∮ g ds` and `∮ |g| ds` of the Neumann data, used for the
    /// compatibility check when `null_space` is set.
    pub flux_integral: (f64, f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    /// Relative residual tolerance.
    pub tol: f64,
    /// Iteration cap; `None` means `20·√(node count)`.
    pub max_iter: Option<usize>,
    /// 2D grids with at most this many nodes per axis use banded Cholesky.
    pub direct_max_axis: usize,
    /// Relative tolerance of the Neumann compatibility check.
    pub compat_tol: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: None,
            direct_max_axis: 40,
            compat_tol: 1e-8,
        }
    }
}

impl SolverOptions {
    fn iteration_cap(&self, n: usize) -> usize {
        self.max_iter
            .unwrap_or_else(|| (20.0 * (n as f64).sqrt()).ceil() as usize)
    }
}

/// Volume-scaled operator `-Δ + μ` with the ghost-node Neumann closure on
/// every boundary row.
fn assemble_operator(grid: &Grid, mu: &[f64]) -> StencilMatrix {
    let dim = grid.dim();
    let n = grid.counts3();
    let h = grid.spacing();
    let strides = grid.strides();
    let mut a = StencilMatrix::new(grid.node_count(), dim, strides);
    for node in 0..grid.node_count() {
        let m = grid.multi_index(node);
        for ax in 0..dim {
            if m[ax] + 1 >= n[ax] {
                continue;
            }
            let mut w = 1.0 / h[ax];
            for t in (0..dim).filter(|&t| t != ax) {
                let end = m[t] == 0 || m[t] == n[t] - 1;
                w *= if end { 0.5 * h[t] } else { h[t] };
            }
            a.set_coupling(ax, node, w);
            a.diag_mut()[node] += w;
            a.diag_mut()[node + strides[ax]] += w;
        }
        a.diag_mut()[node] += mu[node] * grid.volume_weight(node);
    }
    a
}

/// System for `-Δu + μu = 0`, `∂u/∂n = g`.
pub fn assemble_neumann(
    grid: &Grid,
    mu: &CoefficientField,
    g: &BoundaryTrace,
) -> Result<LinearSystem> {
    g.check(grid)?;
    if mu.values().len() != grid.node_count() {
        return Err(Error::shape("coefficient does not match the grid"));
    }
    Ok(LinearSystem {
        matrix: assemble_operator(grid, mu.values()),
        rhs: flux_load(grid, g),
        null_space: mu.is_zero(),
        flux_integral: flux_moments(grid, g),
    })
}

/// Right-hand side of the Neumann closure. Each face through a node
/// contributes its trapezoid weight times the face derivative; at edges and
/// corners the face derivatives are taken as `|n_a| g`, which is exact when
/// they are equal.
fn flux_load(grid: &Grid, g: &BoundaryTrace) -> Vec<f64> {
    let mut rhs = vec![0.0; grid.node_count()];
    for ((b, w), v) in grid.boundary().iter().zip(flux_weights(grid)).zip(g.values()) {
        rhs[b.node] = w * v;
    }
    rhs
}

/// Per-node weights with which a flux enters the discrete problem: the
/// trapezoid weight divided by `√(number of faces)` at edges and corners.
pub fn flux_weights(grid: &Grid) -> impl Iterator<Item = f64> + '_ {
    grid.boundary().iter().map(|b| {
        let faces = b.normal.iter().filter(|c| **c != 0.0).count() as f64;
        b.weight / faces.sqrt()
    })
}

/// `Σ w_k a_k b_k` with the [`flux_weights`]. Discrete Neumann-to-Dirichlet
/// maps are exactly self-adjoint in this inner product.
pub fn flux_inner(grid: &Grid, a: &BoundaryTrace, b: &BoundaryTrace) -> f64 {
    flux_weights(grid)
        .zip(a.values().iter().zip(b.values()))
        .map(|(w, (x, y))| w * x * y)
        .sum()
}

fn flux_moments(grid: &Grid, g: &BoundaryTrace) -> (f64, f64) {
    grid.boundary()
        .iter()
        .zip(g.values())
        .fold((0.0, 0.0), |(s, a), (b, v)| (s + b.weight * v, a + b.weight * v.abs()))
}

/// System for `-Δu + μ0 u = source`, `u = bdry` on the boundary. Boundary rows
/// are identity rows decoupled from the interior. `source` is a list of
/// `(node, volume-integrated load)` entries.
pub fn assemble_dirichlet(
    grid: &Grid,
    mu0: f64,
    bdry: &BoundaryTrace,
    source: &[(usize, f64)],
) -> Result<LinearSystem> {
    bdry.check(grid)?;
    if !(mu0.is_finite() && mu0 >= 0.0) {
        return Err(Error::param("background absorption must be finite and nonnegative"));
    }
    let mut matrix = dirichlet_operator(grid, mu0);
    let mut rhs = vec![0.0; grid.node_count()];
    for &(node, load) in source {
        rhs[node] += load;
    }
    let full = assemble_operator(grid, &vec![mu0; grid.node_count()]);
    let strides = grid.strides();
    for (b, v) in grid.boundary().iter().zip(bdry.values()) {
        rhs[b.node] = *v;
        for ax in 0..grid.dim() {
            let s = strides[ax];
            if b.node + s < grid.node_count() {
                let w = full.coupling(ax, b.node);
                let nb = b.node + s;
                if w != 0.0 && !grid.is_boundary(nb) {
                    rhs[nb] += w * v;
                }
            }
            if b.node >= s {
                let nb = b.node - s;
                let w = full.coupling(ax, nb);
                if w != 0.0 && !grid.is_boundary(nb) {
                    rhs[nb] += w * v;
                }
            }
        }
    }
    matrix.diag_mut().iter_mut().enumerate().for_each(|(k, d)| {
        if grid.is_boundary(k) {
            *d = 1.0;
        }
    });
    Ok(LinearSystem {
        matrix,
        rhs,
        null_space: false,
        flux_integral: (0.0, 0.0),
    })
}

fn dirichlet_operator(grid: &Grid, mu0: f64) -> StencilMatrix {
    let mut a = assemble_operator(grid, &vec![mu0; grid.node_count()]);
    let strides = grid.strides();
    for node in 0..grid.node_count() {
        for ax in 0..grid.dim() {
            let nb = node + strides[ax];
            if nb < grid.node_count() && (grid.is_boundary(node) || grid.is_boundary(nb)) {
                a.set_coupling(ax, node, 0.0);
            }
        }
        if grid.is_boundary(node) {
            a.diag_mut()[node] = 1.0;
        }
    }
    a
}

fn use_direct(grid: &Grid, opts: &SolverOptions) -> bool {
    grid.dim() == 2 && grid.counts().iter().all(|&n| n <= opts.direct_max_axis)
}

/// Solves an assembled system; the pure Neumann case is checked for
/// compatibility and returned with zero (volume-weighted) mean.
pub fn solve_system(grid: &Grid, sys: &LinearSystem, opts: &SolverOptions) -> Result<Vec<f64>> {
    let n = sys.matrix.size();
    if sys.null_space {
        let (integral, scale) = sys.flux_integral;
        let tolerance = opts.compat_tol * scale;
        if integral.abs() > tolerance {
            return Err(Error::IncompatibleFlux { integral, tolerance });
        }
        let shift = sys.rhs.iter().sum::<f64>() / n as f64;
        let rhs: Vec<f64> = sys.rhs.iter().map(|v| v - shift).collect();
        let mut x = vec![0.0; n];
        pcg(&sys.matrix, &rhs, &mut x, opts.tol, opts.iteration_cap(n))?;
        remove_mean(grid, &mut x);
        return Ok(x);
    }
    if use_direct(grid, opts) {
        let chol = BandedCholesky::factor(&sys.matrix)?;
        return Ok(chol.solve(&sys.rhs));
    }
    let mut x = vec![0.0; n];
    pcg(&sys.matrix, &sys.rhs, &mut x, opts.tol, opts.iteration_cap(n))?;
    Ok(x)
}

fn remove_mean(grid: &Grid, x: &mut [f64]) {
    let (mut num, mut den) = (0.0, 0.0);
    for (k, v) in x.iter().enumerate() {
        let w = grid.volume_weight(k);
        num += w * v;
        den += w;
    }
    let mean = num / den;
    x.iter_mut().for_each(|v| *v -= mean);
}

/// Forward problem `-Δu + μu = 0` in Ω, `∂u/∂n = g` on ∂Ω.
pub fn solve_neumann(grid: &Grid, mu: &CoefficientField, g: &BoundaryTrace) -> Result<ScalarField> {
    solve_neumann_with(grid, mu, g, &SolverOptions::default())
}

pub fn solve_neumann_with(
    grid: &Grid,
    mu: &CoefficientField,
    g: &BoundaryTrace,
    opts: &SolverOptions,
) -> Result<ScalarField> {
    let sys = assemble_neumann(grid, mu, g)?;
    Ok(ScalarField::from_raw(grid, solve_system(grid, &sys, opts)?))
}

/// Boundary values of a field in boundary order.
pub fn trace(u: &ScalarField, grid: &Grid) -> Result<BoundaryTrace> {
    u.check(grid)?;
    Ok(BoundaryTrace::from_raw(
        grid.boundary().iter().map(|b| u.values()[b.node]).collect(),
    ))
}

/// Background Neumann-to-Dirichlet map `Λ_{μ0} g`.
pub fn ntd_background(grid: &Grid, mu0: f64, g: &BoundaryTrace) -> Result<BoundaryTrace> {
    let mu = CoefficientField::constant(grid, mu0)?;
    trace(&solve_neumann(grid, &mu, g)?, grid)
}

/// `-Δφ + μ0 φ = 0` in Ω, `φ = bdry` on ∂Ω.
pub fn solve_dirichlet(grid: &Grid, mu0: f64, bdry: &BoundaryTrace) -> Result<ScalarField> {
    solve_dirichlet_with(grid, mu0, bdry, &SolverOptions::default())
}

pub fn solve_dirichlet_with(
    grid: &Grid,
    mu0: f64,
    bdry: &BoundaryTrace,
    opts: &SolverOptions,
) -> Result<ScalarField> {
    let sys = assemble_dirichlet(grid, mu0, bdry, &[])?;
    let mut x = solve_system(grid, &sys, opts)?;
    for (b, v) in grid.boundary().iter().zip(bdry.values()) {
        x[b.node] = *v;
    }
    Ok(ScalarField::from_raw(grid, x))
}

/// `-Δw + μ0 w = δ_x`, `w = 0` on ∂Ω, with the discrete delta `1/∏h` at the
/// interior node `x`.
pub fn solve_point_source(grid: &Grid, mu0: f64, x: usize) -> Result<ScalarField> {
    check_interior(grid, x)?;
    let sys = assemble_dirichlet(grid, mu0, &BoundaryTrace::zeros(grid), &[(x, 1.0)])?;
    let mut w = solve_system(grid, &sys, &SolverOptions::default())?;
    for b in grid.boundary() {
        w[b.node] = 0.0;
    }
    Ok(ScalarField::from_raw(grid, w))
}

fn check_interior(grid: &Grid, x: usize) -> Result<()> {
    if x >= grid.node_count() {
        return Err(Error::param(format!("node {x} is outside the grid")));
    }
    if grid.is_boundary(x) {
        return Err(Error::param(format!("node {x} lies on the boundary")));
    }
    Ok(())
}

/// Coefficients of the one-sided second-order outward normal derivative at
/// a boundary node: `∂u/∂n ≈ Σ c_k u[node_k]`.
pub(crate) fn normal_stencil(grid: &Grid, position: usize) -> Vec<(usize, f64)> {
    let b = &grid.boundary()[position];
    let m = grid.multi_index(b.node);
    let n = grid.counts3();
    let strides = grid.strides();
    let h = grid.spacing();
    let mut out = Vec::with_capacity(3 * grid.dim());
    for ax in 0..grid.dim() {
        let comp = b.normal[ax];
        if comp == 0.0 {
            continue;
        }
        let s = strides[ax];
        let c = comp.abs() / (2.0 * h[ax]);
        // Step inward from the face the normal points out of.
        let inward: Box<dyn Fn(usize) -> usize> = if m[ax] == n[ax] - 1 {
            Box::new(move |k| b.node - k * s)
        } else {
            Box::new(move |k| b.node + k * s)
        };
        out.push((inward(0), 3.0 * c));
        out.push((inward(1), -4.0 * c));
        out.push((inward(2), c));
    }
    out
}

/// Per boundary node, the interior neighbours and weights `c` for which
/// `-Σ c·u(nb)` is the outward flux of a field vanishing on the boundary,
/// using the operator's own couplings per unit boundary weight. Applied to
/// the point-source solution it gives the discrete Poisson kernel exactly.
pub(crate) fn kernel_stencils(grid: &Grid) -> Vec<Vec<(usize, f64)>> {
    let a = assemble_operator(grid, &vec![0.0; grid.node_count()]);
    let strides = grid.strides();
    grid.boundary()
        .iter()
        .map(|b| {
            let mut out = Vec::new();
            for ax in 0..grid.dim() {
                let s = strides[ax];
                let up = b.node + s;
                if up < grid.node_count() && !grid.is_boundary(up) {
                    out.push((up, a.coupling(ax, b.node) / b.weight));
                }
                if b.node >= s && !grid.is_boundary(b.node - s) {
                    out.push((b.node - s, a.coupling(ax, b.node - s) / b.weight));
                }
            }
            out
        })
        .collect()
}

/// Outward normal derivative on every boundary node.
pub fn normal_flux(u: &ScalarField, grid: &Grid) -> Result<BoundaryTrace> {
    u.check(grid)?;
    let v = u.values();
    Ok(BoundaryTrace::from_raw(
        (0..grid.boundary_len())
            .map(|k| normal_stencil(grid, k).iter().map(|&(i, c)| c * v[i]).sum())
            .collect(),
    ))
}

/// 2D grids up to this many nodes per axis are factorized once by the
/// reusable solvers below, which serve many right-hand sides per operator.
const FACTOR_MAX_AXIS: usize = 160;

fn factorizable(grid: &Grid) -> bool {
    grid.dim() == 2 && grid.counts().iter().all(|&n| n <= FACTOR_MAX_AXIS)
}

/// Neumann problem for a fixed coefficient and many fluxes.
#[derive(Debug, Clone)]
pub struct NeumannSolver {
    grid: Grid,
    matrix: StencilMatrix,
    factor: Option<BandedCholesky>,
    null_space: bool,
    opts: SolverOptions,
}

impl NeumannSolver {
    pub fn new(grid: &Grid, mu: &CoefficientField) -> Result<Self> {
        Self::with_options(grid, mu, SolverOptions::default())
    }

    pub fn with_options(grid: &Grid, mu: &CoefficientField, opts: SolverOptions) -> Result<Self> {
        if mu.values().len() != grid.node_count() {
            return Err(Error::shape("coefficient does not match the grid"));
        }
        let matrix = assemble_operator(grid, mu.values());
        let null_space = mu.is_zero();
        let factor = if factorizable(grid) && !null_space {
            Some(BandedCholesky::factor(&matrix)?)
        } else {
            None
        };
        Ok(Self {
            grid: grid.clone(),
            matrix,
            factor,
            null_space,
            opts,
        })
    }

    pub fn solve(&self, g: &BoundaryTrace) -> Result<ScalarField> {
        g.check(&self.grid)?;
        let rhs = flux_load(&self.grid, g);
        let u = match &self.factor {
            Some(f) => f.solve(&rhs),
            None => {
                let sys = LinearSystem {
                    matrix: self.matrix.clone(),
                    rhs,
                    null_space: self.null_space,
                    flux_integral: flux_moments(&self.grid, g),
                };
                solve_system(&self.grid, &sys, &self.opts)?
            }
        };
        Ok(ScalarField::from_raw(&self.grid, u))
    }

    /// Boundary trace of the solution.
    pub fn ntd(&self, g: &BoundaryTrace) -> Result<BoundaryTrace> {
        trace(&self.solve(g)?, &self.grid)
    }
}

/// Solver for repeated problems with the constant background coefficient:
/// the Neumann-to-Dirichlet map, Dirichlet extensions and point sources.
#[derive(Debug, Clone)]
pub struct BackgroundSolver {
    grid: Grid,
    mu0: f64,
    opts: SolverOptions,
    neumann: NeumannSolver,
    dirichlet: StencilMatrix,
    dirichlet_factor: Option<BandedCholesky>,
}

impl BackgroundSolver {
    pub fn new(grid: &Grid, mu0: f64) -> Result<Self> {
        Self::with_options(grid, mu0, SolverOptions::default())
    }

    pub fn with_options(grid: &Grid, mu0: f64, opts: SolverOptions) -> Result<Self> {
        let mu = CoefficientField::constant(grid, mu0)?;
        let neumann = NeumannSolver::with_options(grid, &mu, opts)?;
        let dirichlet = dirichlet_operator(grid, mu0);
        let dirichlet_factor = if factorizable(grid) {
            Some(BandedCholesky::factor(&dirichlet)?)
        } else {
            None
        };
        Ok(Self {
            grid: grid.clone(),
            mu0,
            opts,
            neumann,
            dirichlet,
            dirichlet_factor,
        })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn mu0(&self) -> f64 {
        self.mu0
    }

    /// `Λ_{μ0} g`
    pub fn ntd(&self, g: &BoundaryTrace) -> Result<BoundaryTrace> {
        self.neumann.ntd(g)
    }

    fn solve_dirichlet_rhs(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        match &self.dirichlet_factor {
            Some(f) => Ok(f.solve(rhs)),
            None => {
                let n = rhs.len();
                let mut x = vec![0.0; n];
                pcg(
                    &self.dirichlet,
                    rhs,
                    &mut x,
                    self.opts.tol,
                    self.opts.iteration_cap(n),
                )?;
                Ok(x)
            }
        }
    }

    pub fn dirichlet(&self, bdry: &BoundaryTrace) -> Result<ScalarField> {
        let sys = assemble_dirichlet(&self.grid, self.mu0, bdry, &[])?;
        let mut x = self.solve_dirichlet_rhs(&sys.rhs)?;
        for (b, v) in self.grid.boundary().iter().zip(bdry.values()) {
            x[b.node] = *v;
        }
        Ok(ScalarField::from_raw(&self.grid, x))
    }

    /// Solves the homogeneous Dirichlet problem for an arbitrary
    /// volume-integrated interior load.
    pub(crate) fn dirichlet_load(&self, load: &[f64]) -> Result<Vec<f64>> {
        let mut rhs = load.to_vec();
        for b in self.grid.boundary() {
            rhs[b.node] = 0.0;
        }
        let mut x = self.solve_dirichlet_rhs(&rhs)?;
        for b in self.grid.boundary() {
            x[b.node] = 0.0;
        }
        Ok(x)
    }

    pub fn point_source(&self, x: usize) -> Result<ScalarField> {
        check_interior(&self.grid, x)?;
        let mut load = vec![0.0; self.grid.node_count()];
        load[x] = 1.0;
        Ok(ScalarField::from_raw(&self.grid, self.dirichlet_load(&load)?))
    }
}

/// `‖A u - b‖ / ‖b‖` for an assembled system.
pub fn relative_residual(sys: &LinearSystem, u: &[f64]) -> f64 {
    let mut r = vec![0.0; u.len()];
    sys.matrix.apply(u, &mut r);
    for (ri, bi) in r.iter_mut().zip(&sys.rhs) {
        *ri -= bi;
    }
    let b = norm(&sys.rhs);
    if b == 0.0 {
        norm(&r)
    } else {
        norm(&r) / b
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::BoundaryParam;

    fn exp_flux(grid: &Grid) -> BoundaryTrace {
        // ∂(e^{x1})/∂n = n1 e^{x1}
        BoundaryTrace::from_raw(
            grid.boundary()
                .iter()
                .map(|b| b.normal[0] * grid.coords(b.node)[0].exp())
                .collect(),
        )
    }

    fn max_err_exp(n: usize) -> f64 {
        let g = Grid::square(n).unwrap();
        let mu = CoefficientField::constant(&g, 1.0).unwrap();
        let u = solve_neumann(&g, &mu, &exp_flux(&g)).unwrap();
        (0..g.node_count())
            .map(|k| (u.values()[k] - g.coords(k)[0].exp()).abs())
            .fold(0.0, f64::max)
    }

    #[test]
    fn manufactured_exponential_is_second_order() {
        let e1 = max_err_exp(26);
        let e2 = max_err_exp(51);
        let order = (e1 / e2).ln() / 2.0f64.ln();
        assert!(e2 < 1e-3, "{e2}");
        assert!((order - 2.0).abs() < 0.2, "order {order}");
    }

    #[test]
    fn zero_flux_gives_zero() {
        let g = Grid::square(21).unwrap();
        let mu = CoefficientField::constant(&g, 1.0).unwrap();
        let u = solve_neumann(&g, &mu, &BoundaryTrace::zeros(&g)).unwrap();
        assert!(u.max_abs() == 0.0);
    }

    #[test]
    fn incompatible_flux_is_rejected() {
        let g = Grid::square(21).unwrap();
        let mu = CoefficientField::constant(&g, 0.0).unwrap();
        let ones = BoundaryTrace::from_raw(vec![1.0; g.boundary_len()]);
        assert!(matches!(
            solve_neumann(&g, &mu, &ones),
            Err(Error::IncompatibleFlux { .. })
        ));
    }

    #[test]
    fn pure_neumann_gauge_is_zero_mean() {
        let g = Grid::square(33).unwrap();
        let cos = BoundaryTrace::from_raw(
            g.boundary()
                .iter()
                .map(|b| match b.param {
                    BoundaryParam::Curve { angle, .. } => angle.cos(),
                    _ => unreachable!(),
                })
                .collect(),
        );
        let mu = CoefficientField::constant(&g, 0.0).unwrap();
        let u = solve_neumann(&g, &mu, &cos).unwrap();
        let mean: f64 = (0..g.node_count())
            .map(|k| g.volume_weight(k) * u.values()[k])
            .sum();
        assert!(mean.abs() < 1e-12);
    }

    #[test]
    fn symmetric_operator() {
        let g = Grid::new(&[5, 7], [-1.0, 1.0]).unwrap();
        let mu: Vec<f64> = (0..35).map(|k| (k % 3) as f64).collect();
        let a = assemble_operator(&g, &mu).to_dense();
        for i in 0..35 {
            for j in 0..35 {
                assert_eq!(a[i][j], a[j][i]);
            }
        }
    }

    #[test]
    fn trace_examples() {
        let g = Grid::square(101).unwrap();
        let c = ScalarField::from_fn(&g, |_| 2.5);
        assert!(trace(&c, &g).unwrap().values().iter().all(|&v| v == 2.5));
        let q = ScalarField::from_fn(&g, |x| x[0] * x[0] - x[1] * x[1]);
        let t = trace(&q, &g).unwrap();
        assert_eq!(t.len(), 400);
        let k = g.boundary_position(g.index(&[100, 50])).unwrap();
        assert!((t.values()[k] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn dirichlet_reproduces_discrete_harmonic_quadratic() {
        let g = Grid::square(31).unwrap();
        let f = |x: [f64; 3]| x[0] * x[0] - x[1] * x[1];
        let bd = BoundaryTrace::from_fn(&g, f);
        let u = solve_dirichlet(&g, 0.0, &bd).unwrap();
        for k in 0..g.node_count() {
            assert!((u.values()[k] - f(g.coords(k))).abs() < 1e-10);
        }
        let ones = BoundaryTrace::from_raw(vec![1.0; g.boundary_len()]);
        let u = solve_dirichlet(&g, 0.0, &ones).unwrap();
        assert!(u.values().iter().all(|v| (v - 1.0).abs() < 1e-10));
        let z = solve_dirichlet(&g, 0.0, &BoundaryTrace::zeros(&g)).unwrap();
        assert_eq!(z.max_abs(), 0.0);
    }

    #[test]
    fn dirichlet_iterative_path() {
        let g = Grid::square(45).unwrap();
        let f = |x: [f64; 3]| x[0] * x[1] + 0.5 * x[0];
        let u = solve_dirichlet(&g, 0.0, &BoundaryTrace::from_fn(&g, f)).unwrap();
        for k in 0..g.node_count() {
            assert!((u.values()[k] - f(g.coords(k))).abs() < 1e-8);
        }
    }

    #[test]
    fn point_source_properties() {
        let g = Grid::square(41).unwrap();
        let center = g.index(&[20, 20]);
        for mu0 in [0.0, 5.0] {
            let w = solve_point_source(&g, mu0, center).unwrap();
            assert!(w.values().iter().all(|&v| v >= 0.0));
        }
        let w = solve_point_source(&g, 0.0, center).unwrap();
        let at = |i: usize, j: usize| w.values()[g.index(&[i, j])];
        for i in 0..41 {
            for j in 0..41 {
                let v = at(i, j);
                for u in [at(j, i), at(40 - i, j), at(i, 40 - j), at(40 - j, 40 - i)] {
                    assert!((u - v).abs() <= 1e-9 * w.max_abs());
                }
            }
        }
        let eta = normal_flux(&w, &g).unwrap();
        let flux = boundary_integral(&g, &eta);
        assert!((flux + 1.0).abs() < 0.05, "{flux}");
        assert!(solve_point_source(&g, 0.0, g.index(&[0, 3])).is_err());
    }

    #[test]
    fn normal_flux_examples() {
        let g = Grid::square(41).unwrap();
        let e = ScalarField::from_fn(&g, |x| x[0].exp());
        let t = normal_flux(&e, &g).unwrap();
        let k = g.boundary_position(g.index(&[40, 20])).unwrap();
        let h = g.spacing()[0];
        assert!((t.values()[k] - 1f64.exp()).abs() < 2.0 * h * h);

        let c = ScalarField::from_fn(&g, |_| 3.0);
        assert!(normal_flux(&c, &g).unwrap().values().iter().all(|v| v.abs() < 1e-12));

        let lin = ScalarField::from_fn(&g, |x| x[0]);
        let top = g.boundary_position(g.index(&[20, 40])).unwrap();
        assert!(normal_flux(&lin, &g).unwrap().values()[top].abs() < 1e-12);
    }

    #[test]
    fn background_solver_matches_free_functions() {
        let g = Grid::square(29).unwrap();
        let bg = BackgroundSolver::new(&g, 1.0).unwrap();
        let gflux = exp_flux(&g);
        let a = bg.ntd(&gflux).unwrap();
        let b = ntd_background(&g, 1.0, &gflux).unwrap();
        for (x, y) in a.values().iter().zip(b.values()) {
            assert!((x - y).abs() < 1e-10);
        }
        let x = g.index(&[10, 17]);
        let p = bg.point_source(x).unwrap();
        let q = solve_point_source(&g, 1.0, x).unwrap();
        for (u, v) in p.values().iter().zip(q.values()) {
            assert!((u - v).abs() < 1e-10);
        }
    }

    #[test]
    fn three_dimensional_solves() {
        let g = Grid::cube(9).unwrap();
        let f = |x: [f64; 3]| x[0] * x[0] - x[2] * x[2] + x[1];
        let u = solve_dirichlet(&g, 0.0, &BoundaryTrace::from_fn(&g, f)).unwrap();
        for k in 0..g.node_count() {
            assert!((u.values()[k] - f(g.coords(k))).abs() < 1e-8);
        }
        let mu = CoefficientField::constant(&g, 1.0).unwrap();
        let u = solve_neumann(&g, &mu, &exp_flux(&g)).unwrap();
        let err = (0..g.node_count())
            .map(|k| (u.values()[k] - g.coords(k)[0].exp()).abs())
            .fold(0.0, f64::max);
        assert!(err < 0.05, "{err}");
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(16))]

            #[test]
            fn neumann_is_linear(a in -3.0f64..3.0, b in -3.0f64..3.0, k in 1usize..4) {
                let g = Grid::square(17).unwrap();
                let mu = CoefficientField::constant(&g, 2.0).unwrap();
                let g1 = exp_flux(&g);
                let g2 = BoundaryTrace::from_fn(&g, |x| (k as f64 * x[1]).sin());
                let combo = g1.scaled(a).axpy(b, &g2);
                let lhs = solve_neumann(&g, &mu, &combo).unwrap();
                let u1 = solve_neumann(&g, &mu, &g1).unwrap();
                let u2 = solve_neumann(&g, &mu, &g2).unwrap();
                let scale = lhs.max_abs().max(1.0);
                for i in 0..g.node_count() {
                    let rhs = a * u1.values()[i] + b * u2.values()[i];
                    prop_assert!((lhs.values()[i] - rhs).abs() < 1e-9 * scale);
                }
            }

            #[test]
            fn dirichlet_maximum_principle(seed in 0u64..500) {
                let g = Grid::square(19).unwrap();
                let vals: Vec<f64> = (0..g.boundary_len())
                    .map(|k| ((k as u64 * 2654435761 + seed) % 1000) as f64 / 500.0 - 1.0)
                    .collect();
                let (lo, hi) = vals.iter().fold((f64::MAX, f64::MIN), |(l, h), &v| (l.min(v), h.max(v)));
                let u = solve_dirichlet(&g, 0.0, &BoundaryTrace::from_values(&g, vals).unwrap()).unwrap();
                prop_assert!(u.values().iter().all(|&v| v >= lo - 1e-9 && v <= hi + 1e-9));
            }
        }
    }
}
