//! Boundary fluxes, synthetic Cauchy data and the difference functions that
//! form the network input.

use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{
    rasterize_mask, sample_inclusions_with, BoundaryParam, Grid, InclusionSet, SamplingOptions,
    ScalarField, Scenario,
};
use crate::pde::{
    boundary_integral, BackgroundSolver, BoundaryTrace, CoefficientField, NeumannSolver,
};

/// Applied flux `g` and measured potential `f` of one experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct CauchyPair {
    /// 1-based mode index.
    pub omega: usize,
    pub g: BoundaryTrace,
    pub f: BoundaryTrace,
}

/// One synthetic experiment: inclusions, truth mask, the Cauchy pairs and
/// their difference functions.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    /// Unknown for samples loaded from a dataset file.
    pub inclusions: Option<InclusionSet>,
    pub mask: ScalarField,
    pub pairs: Vec<CauchyPair>,
    pub phi: Vec<ScalarField>,
    pub scenario: Scenario,
    pub seed: u64,
}

impl Sample {
    pub fn n_pairs(&self) -> usize {
        self.pairs.len()
    }
}

fn curve_angle(grid: &Grid) -> Result<Vec<f64>> {
    grid.boundary()
        .iter()
        .map(|b| match b.param {
            BoundaryParam::Curve { angle, .. } => Ok(angle),
            BoundaryParam::Face { .. } => Err(Error::param("Fourier fluxes need a 2D grid")),
        })
        .collect()
}

/// `cos(ωθ)` for `ω ≤ N/2` and `sin((ω - N/2)θ)` above; `N = 1` gives
/// `cos θ`. `θ` is the boundary angle, uniform in arclength.
pub fn fourier_flux(omega: usize, n: usize, grid: &Grid) -> Result<BoundaryTrace> {
    if n == 0 || omega == 0 || omega > n {
        return Err(Error::param(format!("mode {omega} is outside 1..={n}")));
    }
    if n > 1 && n % 2 != 0 {
        return Err(Error::param("the Fourier basis needs an even number of modes"));
    }
    let theta = curve_angle(grid)?;
    let half = n.div_ceil(2);
    let values = theta
        .iter()
        .map(|&t| {
            if omega <= half {
                (omega as f64 * t).cos()
            } else {
                ((omega - half) as f64 * t).sin()
            }
        })
        .collect();
    BoundaryTrace::from_values(grid, values)
}

pub fn fourier_basis(n: usize, grid: &Grid) -> Result<Vec<BoundaryTrace>> {
    (1..=n).map(|w| fourier_flux(w, n, grid)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum HarmonicPart {
    /// Multiplies by `sin(mφ)`.
    Re,
    /// Multiplies by `cos(mφ)`.
    Im,
}

/// The nine nonzero harmonics `(l, m, part)` with `l ≤ 2`, in basis order.
pub const HARMONICS: [(usize, usize, HarmonicPart); 9] = [
    (0, 0, HarmonicPart::Im),
    (1, 0, HarmonicPart::Im),
    (1, 1, HarmonicPart::Re),
    (1, 1, HarmonicPart::Im),
    (2, 0, HarmonicPart::Im),
    (2, 1, HarmonicPart::Re),
    (2, 1, HarmonicPart::Im),
    (2, 2, HarmonicPart::Re),
    (2, 2, HarmonicPart::Im),
];

fn legendre(l: usize, m: usize, z: f64) -> f64 {
    let s = (1.0 - z * z).max(0.0).sqrt();
    match (l, m) {
        (0, 0) => 1.0,
        (1, 0) => z,
        (1, 1) => s,
        (2, 0) => 0.5 * (3.0 * z * z - 1.0),
        (2, 1) => 3.0 * z * s,
        (2, 2) => 3.0 * s * s,
        _ => unreachable!("checked by the caller"),
    }
}

fn factorial(k: usize) -> f64 {
    (1..=k).map(|i| i as f64).product()
}

/// Spherical harmonic of degree `l ≤ 2` evaluated on the cube surface through
/// the radial projection of each boundary node onto the unit sphere.
pub fn spherical_harmonic_flux(
    l: usize,
    m: usize,
    part: HarmonicPart,
    grid: &Grid,
) -> Result<BoundaryTrace> {
    if grid.dim() != 3 {
        return Err(Error::param("spherical harmonics need a 3D grid"));
    }
    if l > 2 || m > l {
        return Err(Error::param(format!("harmonic ({l}, {m}) is out of range")));
    }
    let c = ((2 * l + 1) as f64 / (4.0 * PI) * factorial(l - m) / factorial(l + m)).sqrt();
    let values = grid
        .boundary()
        .iter()
        .map(|b| {
            let x = grid.coords(b.node);
            let r = (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]).sqrt();
            let z = x[2] / r;
            let azimuth = x[1].atan2(x[0]);
            let trig = match part {
                HarmonicPart::Re => (m as f64 * azimuth).sin(),
                HarmonicPart::Im => (m as f64 * azimuth).cos(),
            };
            c * legendre(l, m, z) * trig
        })
        .collect();
    BoundaryTrace::from_values(grid, values)
}

/// The first `n` boundary fluxes for a grid: Fourier modes in 2D, harmonics in
/// 3D. With `μ0 = 0` the constant harmonic is skipped because the background
/// Neumann problem has no solution for a flux with nonzero mean.
pub fn flux_basis(grid: &Grid, n: usize, mu0: f64) -> Result<Vec<BoundaryTrace>> {
    if grid.dim() == 2 {
        return fourier_basis(n, grid);
    }
    let available: Vec<_> = HARMONICS
        .iter()
        .filter(|(l, _, _)| mu0 > 0.0 || *l > 0)
        .collect();
    if n == 0 || n > available.len() {
        return Err(Error::param(format!(
            "3D basis holds {} fluxes, {n} requested",
            available.len()
        )));
    }
    available[..n]
        .iter()
        .map(|&&(l, m, part)| spherical_harmonic_flux(l, m, part, grid))
        .collect()
}

/// `f^δ = (1 + δG) f` with independent standard-normal `G` per node.
pub fn add_noise(f: &BoundaryTrace, delta: f64, seed: u64) -> Result<BoundaryTrace> {
    add_noise_stream(f, delta, seed, 0)
}

/// As [`add_noise`], drawing from the given stream of the seeded generator so
/// that the pairs of one sample get independent noise.
pub fn add_noise_stream(
    f: &BoundaryTrace,
    delta: f64,
    seed: u64,
    stream: u64,
) -> Result<BoundaryTrace> {
    if !(delta.is_finite() && delta >= 0.0) {
        return Err(Error::param("noise level must be finite and nonnegative"));
    }
    if delta == 0.0 {
        return Ok(f.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let values = f
        .values()
        .iter()
        .map(|v| {
            let g: f64 = StandardNormal.sample(&mut rng);
            (1.0 + delta * g) * v
        })
        .collect();
    Ok(BoundaryTrace::from_raw(values))
}

/// Keeps the values at a few boundary points and linearly interpolates the
/// rest: `4L` points (`L` per side, starting at each corner) along the 2D
/// perimeter, or the 26 points of a 3×3 lattice per face in 3D with bilinear
/// interpolation. `points_per_side` is ignored in 3D.
pub fn subsample_interpolate(
    grid: &Grid,
    g: &BoundaryTrace,
    points_per_side: usize,
) -> Result<BoundaryTrace> {
    g.check(grid)?;
    if grid.dim() == 3 {
        return Ok(subsample_faces(grid, g));
    }
    let l = points_per_side;
    let min_side = grid.counts().iter().min().copied().unwrap_or(0);
    if l < 2 || l > min_side - 1 {
        return Err(Error::param(format!(
            "{l} points per side is outside 2..={}",
            min_side - 1
        )));
    }
    let arc: Vec<f64> = grid
        .boundary()
        .iter()
        .map(|b| match b.param {
            BoundaryParam::Curve { arclength, .. } => arclength,
            BoundaryParam::Face { .. } => unreachable!("2D grid"),
        })
        .collect();
    let p = grid.perimeter();
    let mut corners: Vec<usize> = grid
        .boundary()
        .iter()
        .enumerate()
        .filter(|(_, b)| b.normal[0] != 0.0 && b.normal[1] != 0.0)
        .map(|(k, _)| k)
        .collect();
    corners.sort_by(|a, b| arc[*a].total_cmp(&arc[*b]));
    let m = arc.len();
    let mut kept = Vec::with_capacity(4 * l);
    for (c, &start) in corners.iter().enumerate() {
        let end = corners[(c + 1) % 4];
        let len = (arc[end] - arc[start]).rem_euclid(p);
        let nodes = (end + m - start) % m;
        for j in 0..l {
            let target = j as f64 * len / l as f64;
            let step = (target / len * nodes as f64).round() as usize;
            kept.push((start + step) % m);
        }
    }
    kept.sort_by(|a, b| arc[*a].total_cmp(&arc[*b]));
    kept.dedup();
    let vals = g.values();
    let mut out = vec![0.0; m];
    for (i, &a) in kept.iter().enumerate() {
        let b = kept[(i + 1) % kept.len()];
        let span = (arc[b] - arc[a]).rem_euclid(p);
        let mut k = a;
        loop {
            let t = (arc[k] - arc[a]).rem_euclid(p) / span;
            out[k] = (1.0 - t) * vals[a] + t * vals[b];
            k = (k + 1) % m;
            if k == b {
                break;
            }
        }
    }
    Ok(BoundaryTrace::from_raw(out))
}

fn subsample_faces(grid: &Grid, g: &BoundaryTrace) -> BoundaryTrace {
    let lo = grid.lower();
    let hi = grid.upper();
    let lattice = |t: usize, k: usize| lo[t] + 0.5 * k as f64 * (hi[t] - lo[t]);
    let vals = g.values();
    let out = grid
        .boundary()
        .iter()
        .map(|b| {
            let BoundaryParam::Face { face, coords } = b.param else {
                unreachable!("3D grid")
            };
            let a = usize::from(face / 2);
            let others: Vec<usize> = (0..3).filter(|&t| t != a).collect();
            let fixed = if face % 2 == 1 { hi[a] } else { lo[a] };
            let corner = |i: usize, j: usize| {
                let mut pt = [0.0; 3];
                pt[a] = fixed;
                pt[others[0]] = lattice(others[0], i);
                pt[others[1]] = lattice(others[1], j);
                let node = grid.nearest_node(&pt);
                vals[grid.boundary_position(node).expect("lattice point on the surface")]
            };
            let cell = |t: usize, x: f64| {
                let mid = lattice(t, 1);
                if x <= mid {
                    (0, (x - lo[t]) / (mid - lo[t]))
                } else {
                    (1, (x - mid) / (hi[t] - mid))
                }
            };
            let (i, u) = cell(others[0], coords[0]);
            let (j, v) = cell(others[1], coords[1]);
            (1.0 - u) * (1.0 - v) * corner(i, j)
                + u * (1.0 - v) * corner(i + 1, j)
                + (1.0 - u) * v * corner(i, j + 1)
                + u * v * corner(i + 1, j + 1)
        })
        .collect();
    BoundaryTrace::from_raw(out)
}

/// `(-Δ_Γ)^s` on the closed 2D perimeter for `s ∈ {0, 1}`.
pub fn boundary_operator(grid: &Grid, t: &BoundaryTrace, s: u8) -> Result<BoundaryTrace> {
    t.check(grid)?;
    match s {
        0 => Ok(t.clone()),
        1 => {
            if grid.dim() != 2 {
                return Err(Error::param("the boundary Laplacian is only defined in 2D"));
            }
            let arc: Vec<f64> = grid
                .boundary()
                .iter()
                .map(|b| match b.param {
                    BoundaryParam::Curve { arclength, .. } => arclength,
                    BoundaryParam::Face { .. } => unreachable!("2D grid"),
                })
                .collect();
            let p = grid.perimeter();
            let m = arc.len();
            let v = t.values();
            let out = (0..m)
                .map(|k| {
                    let prev = (k + m - 1) % m;
                    let next = (k + 1) % m;
                    let hm = (arc[k] - arc[prev]).rem_euclid(p);
                    let hp = (arc[next] - arc[k]).rem_euclid(p);
                    let d = (v[next] - v[k]) / hp - (v[k] - v[prev]) / hm;
                    -d / (0.5 * (hm + hp))
                })
                .collect();
            Ok(BoundaryTrace::from_raw(out))
        }
        _ => Err(Error::param(format!("boundary operator order {s} is not supported"))),
    }
}

/// `φ` with `-Δφ + μ0 φ = 0` and `φ = -(-Δ_Γ)^s (f - Λ_{μ0} g)` on ∂Ω, with
/// the residual of [`cauchy_residual`].
pub fn cauchy_difference(grid: &Grid, mu0: f64, pair: &CauchyPair, s: u8) -> Result<ScalarField> {
    let bg = BackgroundSolver::new(grid, mu0)?;
    let lambda = bg.ntd(&pair.g)?;
    difference_from_background(&bg, &pair.f, &lambda, s)
}

/// The data residual `f - Λ_{μ0} g`, made mean-free on the boundary when
/// `μ0 = 0` because `Λ_0` is only defined up to constants.
pub fn cauchy_residual(
    bg: &BackgroundSolver,
    f: &BoundaryTrace,
    lambda_g: &BoundaryTrace,
) -> Result<BoundaryTrace> {
    let grid = bg.grid();
    f.check(grid)?;
    lambda_g.check(grid)?;
    let mut residual = f.axpy(-1.0, lambda_g);
    if bg.mu0() == 0.0 {
        let area: f64 = grid.boundary().iter().map(|b| b.weight).sum();
        let mean = boundary_integral(grid, &residual) / area;
        residual.values_mut().iter_mut().for_each(|v| *v -= mean);
    }
    Ok(residual)
}

/// As [`cauchy_difference`] with a precomputed `Λ_{μ0} g`.
pub fn difference_from_background(
    bg: &BackgroundSolver,
    f: &BoundaryTrace,
    lambda_g: &BoundaryTrace,
    s: u8,
) -> Result<ScalarField> {
    let residual = cauchy_residual(bg, f, lambda_g)?;
    let value = boundary_operator(bg.grid(), &residual, s)?.scaled(-1.0);
    bg.dirichlet(&value)
}

/// Everything needed to synthesize samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleConfig {
    pub scenario: Scenario,
    /// Nodes per axis.
    pub grid: usize,
    pub n_pairs: usize,
    pub mu0: f64,
    pub mu1: f64,
    /// Order of the boundary operator applied to the data, 0 or 1.
    pub s: u8,
    /// Multiplicative noise level on the measured potentials.
    pub noise: f64,
    /// Keep the fluxes at this many points per side only.
    pub limited: Option<usize>,
    pub sampling: SamplingOptions,
}

impl Default for SampleConfig {
    fn default() -> Self {
        Self {
            scenario: Scenario::Circles2d,
            grid: 64,
            n_pairs: 10,
            mu0: 0.0,
            mu1: 50.0,
            s: 0,
            noise: 0.0,
            limited: None,
            sampling: SamplingOptions::default(),
        }
    }
}

impl SampleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_pairs == 0 {
            return Err(Error::param("at least one Cauchy pair is required"));
        }
        if self.s > 1 {
            return Err(Error::param("s must be 0 or 1"));
        }
        if !(self.noise.is_finite() && self.noise >= 0.0) {
            return Err(Error::param("noise level must be finite and nonnegative"));
        }
        InclusionSet::empty(self.mu0, self.mu1)?;
        Ok(())
    }

    pub fn make_grid(&self) -> Result<Grid> {
        match self.scenario.dim() {
            2 => Grid::square(self.grid),
            _ => Grid::cube(self.grid),
        }
    }
}

/// Shared state for generating many samples with one configuration: the
/// background solver, the fluxes and their background potentials.
#[derive(Debug, Clone)]
pub struct SampleGenerator {
    config: SampleConfig,
    grid: Grid,
    background: BackgroundSolver,
    fluxes: Vec<BoundaryTrace>,
    background_traces: Vec<BoundaryTrace>,
}

impl SampleGenerator {
    pub fn new(config: SampleConfig) -> Result<Self> {
        config.validate()?;
        let grid = config.make_grid()?;
        let mut fluxes = flux_basis(&grid, config.n_pairs, config.mu0)?;
        if let Some(l) = config.limited {
            for g in fluxes.iter_mut() {
                let mut gi = subsample_interpolate(&grid, g, l)?;
                if config.mu0 == 0.0 {
                    // Interpolation breaks the zero mean that the background
                    // Neumann problem needs.
                    let area: f64 = grid.boundary().iter().map(|b| b.weight).sum();
                    let mean = boundary_integral(&grid, &gi) / area;
                    gi.values_mut().iter_mut().for_each(|v| *v -= mean);
                }
                *g = gi;
            }
        }
        let background = BackgroundSolver::new(&grid, config.mu0)?;
        let background_traces = fluxes
            .iter()
            .map(|g| background.ntd(g))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            config,
            grid,
            background,
            fluxes,
            background_traces,
        })
    }

    pub fn config(&self) -> &SampleConfig {
        &self.config
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn background(&self) -> &BackgroundSolver {
        &self.background
    }

    pub fn fluxes(&self) -> &[BoundaryTrace] {
        &self.fluxes
    }

    /// `Λ_{μ0} g_ω` for every flux.
    pub fn background_traces(&self) -> &[BoundaryTrace] {
        &self.background_traces
    }

    /// Draws inclusions from the seed and synthesizes the sample.
    pub fn generate(&self, seed: u64) -> Result<Sample> {
        let incl = sample_inclusions_with(
            self.config.scenario,
            seed,
            self.config.sampling,
            self.config.mu0,
            self.config.mu1,
        )?;
        self.from_inclusions(incl, seed)
    }

    pub fn from_inclusions(&self, incl: InclusionSet, seed: u64) -> Result<Sample> {
        let mask = rasterize_mask(&incl, &self.grid);
        let mut sample = self.from_mask(mask, seed)?;
        sample.inclusions = Some(incl);
        Ok(sample)
    }

    /// Synthesizes the data for a given truth mask; noise for pair `ω` is
    /// drawn from stream `ω` of the generator seeded with `seed`.
    pub fn from_mask(&self, mask: ScalarField, seed: u64) -> Result<Sample> {
        mask.check(&self.grid)?;
        let mu = CoefficientField::from_mask(&self.grid, &mask, self.config.mu0, self.config.mu1)?;
        let forward = NeumannSolver::new(&self.grid, &mu)?;
        let mut pairs = Vec::with_capacity(self.fluxes.len());
        for (k, g) in self.fluxes.iter().enumerate() {
            let f = forward.ntd(g)?;
            pairs.push(CauchyPair {
                omega: k + 1,
                g: g.clone(),
                f,
            });
        }
        let sample = Sample {
            inclusions: None,
            mask,
            pairs,
            phi: Vec::new(),
            scenario: self.config.scenario,
            seed,
        };
        self.with_noise(&sample, self.config.noise, seed)
    }

    /// Replaces the measured potentials by noisy copies of `sample`'s and
    /// recomputes the difference functions.
    pub fn with_noise(&self, sample: &Sample, delta: f64, seed: u64) -> Result<Sample> {
        self.check_sample(sample)?;
        let mut out = sample.clone();
        for pair in out.pairs.iter_mut() {
            pair.f = add_noise_stream(&pair.f, delta, seed, pair.omega as u64)?;
        }
        out.phi = self.differences(&out.pairs)?;
        Ok(out)
    }

    /// Difference functions of pairs whose fluxes are this generator's.
    pub fn differences(&self, pairs: &[CauchyPair]) -> Result<Vec<ScalarField>> {
        pairs
            .iter()
            .map(|p| {
                let lambda = &self.background_traces[p.omega - 1];
                difference_from_background(&self.background, &p.f, lambda, self.config.s)
            })
            .collect()
    }

    fn check_sample(&self, sample: &Sample) -> Result<()> {
        if sample.pairs.len() != self.fluxes.len() {
            return Err(Error::Dataset(format!(
                "sample has {} pairs, configuration has {}",
                sample.pairs.len(),
                self.fluxes.len()
            )));
        }
        for (k, p) in sample.pairs.iter().enumerate() {
            if p.omega != k + 1 {
                return Err(Error::Dataset("pairs are not in mode order".into()));
            }
            p.f.check(&self.grid)?;
        }
        Ok(())
    }
}

/// Synthesizes one sample; see [`SampleGenerator`] for batches.
pub fn build_sample(config: &SampleConfig, seed: u64) -> Result<Sample> {
    SampleGenerator::new(config.clone())?.generate(seed)
}

/// RMS of `noisy - clean` relative to the RMS of `clean`, both taken over
/// nodes at least `d` from the boundary and pooled over all fields.
pub fn band_rms_ratio(
    grid: &Grid,
    clean: &[ScalarField],
    noisy: &[ScalarField],
    d: f64,
) -> Result<f64> {
    if clean.len() != noisy.len() {
        return Err(Error::shape("field lists differ in length"));
    }
    let (mut num, mut den) = (0.0, 0.0);
    for (c, n) in clean.iter().zip(noisy) {
        c.check(grid)?;
        n.check(grid)?;
        for k in (0..grid.node_count()).filter(|&k| grid.distance_to_boundary(k) >= d - 1e-12) {
            let (a, b) = (c.values()[k], n.values()[k]);
            num += (b - a) * (b - a);
            den += a * a;
        }
    }
    if den == 0.0 {
        return Err(Error::Degenerate("reference fields vanish in the band".into()));
    }
    Ok((num / den).sqrt())
}
