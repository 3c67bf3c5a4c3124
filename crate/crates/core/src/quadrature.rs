//! Oscillatory radial quadrature and the six-dimensional Monte Carlo oracle.
//!
//! The pair amplitude reduces to a double integral over the total momentum
//! magnitude P and the relative momentum magnitude k. Both integrands are even
//! in their variable and decay like Gaussians at the far end of the window, so
//! the composite trapezoid rule on a uniform grid converges spectrally once
//! the oscillations are resolved. The grid density is set from the fastest
//! phase in the window; the error estimate compares against the same rule on
//! every other node.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::model::{add, dot, scale, sub, PairKinematics, SourceSpectrum, Vec3};
use crate::rng::StreamFactory;

/// Arguments below this use the Taylor series of sin(x)/x.
const SINC_SERIES_CUTOFF: f64 = 1e-4;

/// sin(x)/x with the removable singularity at zero filled in; this is the
/// solid-angle average of a plane wave, the spherical Bessel function j₀.
pub fn spherical_sinc(x: f64) -> f64 {
    let ax = x.abs();
    if ax < SINC_SERIES_CUTOFF {
        let x2 = x * x;
        1.0 - x2 / 6.0 * (1.0 - x2 / 20.0)
    } else {
        x.sin() / x
    }
}

/// Fills `out[j] = j₀(node_j·r)` along a uniform axis.
///
/// The phase e^{i·node·r} is advanced by a fixed rotation and re-seeded every
/// 64 nodes, which keeps the drift at the 1e-14 level.
pub fn sinc_on_axis(axis: &UniformAxis, r: f64, out: &mut [f64]) {
    debug_assert_eq!(out.len(), axis.len);
    let step = Complex64::cis(axis.step * r);
    let mut z = Complex64::ONE;
    for (j, o) in out.iter_mut().enumerate() {
        let x = axis.node(j) * r;
        if j % 64 == 0 {
            z = Complex64::cis(x);
        }
        *o = if x.abs() < SINC_SERIES_CUTOFF {
            spherical_sinc(x)
        } else {
            z.im / x
        };
        z *= step;
    }
}

/// Grid and accuracy controls for the radial quadrature.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields, default)]
pub struct QuadratureSpec {
    /// Upper bound on the phase advance per cell is 2π / this value.
    pub points_per_oscillation: u32,
    /// Gaussian widths kept on each side of the spectrum peak.
    pub truncation_sigmas: f64,
    /// Largest acceptable number of nodes in one grid.
    pub max_grid_points: u64,
    /// Target relative accuracy; larger error estimates raise a warning flag.
    pub rel_tolerance: f64,
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        QuadratureSpec {
            points_per_oscillation: 8,
            truncation_sigmas: 6.0,
            max_grid_points: 400_000_000,
            rel_tolerance: 1e-4,
        }
    }
}

impl QuadratureSpec {
    pub fn validate(&self) -> Result<()> {
        if self.points_per_oscillation < 4 {
            return Err(Error::domain(
                "pointsPerOscillation",
                format!("must be >= 4, got {}", self.points_per_oscillation),
            ));
        }
        if !(self.truncation_sigmas.is_finite() && self.truncation_sigmas >= 3.0) {
            return Err(Error::domain(
                "truncationSigmas",
                format!("must be >= 3, got {}", self.truncation_sigmas),
            ));
        }
        if self.max_grid_points == 0 {
            return Err(Error::domain("maxGridPoints", "must be positive"));
        }
        if !(self.rel_tolerance.is_finite() && self.rel_tolerance > 0.0) {
            return Err(Error::domain(
                "relTolerance",
                format!("must be > 0, got {}", self.rel_tolerance),
            ));
        }
        Ok(())
    }

    /// Largest phase advance allowed across one cell.
    pub fn max_phase_step(&self) -> f64 {
        2.0 * PI / self.points_per_oscillation as f64
    }
}

/// Controls for the Monte Carlo oracle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields, default)]
pub struct McOracleSpec {
    pub sample_count: u64,
    pub seed: u64,
    pub batches: u32,
}

impl Default for McOracleSpec {
    fn default() -> Self {
        McOracleSpec {
            sample_count: 1_000_000,
            seed: 0x5eed,
            batches: 50,
        }
    }
}

pub const MIN_ORACLE_SAMPLES: u64 = 1_000;

impl McOracleSpec {
    pub fn validate(&self) -> Result<()> {
        if self.sample_count < MIN_ORACLE_SAMPLES {
            return Err(Error::domain(
                "sampleCount",
                format!("must be >= {MIN_ORACLE_SAMPLES}, got {}", self.sample_count),
            ));
        }
        if self.batches < 10 {
            return Err(Error::domain(
                "batches",
                format!("must be >= 10, got {}", self.batches),
            ));
        }
        if self.sample_count / 2 < self.batches as u64 {
            return Err(Error::domain("batches", "more batches than antithetic pairs"));
        }
        Ok(())
    }
}

/// Evenly spaced nodes `start + j·step`, `j < len`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UniformAxis {
    pub start: f64,
    pub step: f64,
    pub len: usize,
}

impl UniformAxis {
    /// Odd number of nodes spanning `[lo, hi]` with spacing at most `max_step`
    /// and at least `min_nodes` nodes.
    pub fn covering(lo: f64, hi: f64, max_step: f64, min_nodes: usize) -> Self {
        let span = (hi - lo).max(0.0);
        let cells = if span == 0.0 {
            2
        } else {
            let c = (span / max_step).ceil().max(min_nodes.saturating_sub(1) as f64);
            let c = c as usize;
            c + (c % 2)
        };
        UniformAxis {
            start: lo,
            step: span / cells as f64,
            len: cells + 1,
        }
    }

    pub fn node(&self, j: usize) -> f64 {
        self.start + self.step * j as f64
    }

    pub fn end(&self) -> f64 {
        self.node(self.len - 1)
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.len).map(|j| self.node(j)).collect()
    }

    /// Trapezoid weight of node `j`.
    pub fn weight(&self, j: usize) -> f64 {
        if j == 0 || j + 1 == self.len {
            0.5 * self.step
        } else {
            self.step
        }
    }

    /// Weight of node `j` in the rule on even nodes only (zero on odd nodes).
    pub fn coarse_weight(&self, j: usize) -> f64 {
        if j % 2 == 1 {
            0.0
        } else if j == 0 || j + 1 == self.len {
            self.step
        } else {
            2.0 * self.step
        }
    }
}

/// Integration window in the (P, k) plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RadialWindow {
    pub p_max: f64,
    pub k_min: f64,
    pub k_max: f64,
}

/// Phase scales that fix the grid density.
///
/// The phase contains P·R_w, k·ρ and E·t; its rate of change along P is at
/// most `rw + p_speed·t` and along k at most `rho + k_speed·t`, where the
/// speeds are the largest dE/dP and dE/dk in the window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PhaseScales {
    pub rw: f64,
    pub rho: f64,
    pub t: f64,
    pub p_speed: f64,
    pub k_speed: f64,
}

/// Nodes of a planned (P, k) grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid2d {
    pub p: UniformAxis,
    pub k: UniformAxis,
}

impl Grid2d {
    pub fn node_count(&self) -> u64 {
        self.p.len as u64 * self.k.len as u64
    }
}

const MIN_AXIS_NODES: usize = 129;

/// Chooses the grid so that no phase term (P·R_w, k·ρ or E·t) advances by
/// more than 2π/pointsPerOscillation across one cell.
pub fn plan_grid(window: &RadialWindow, scales: &PhaseScales, spec: &QuadratureSpec) -> Result<Grid2d> {
    spec.validate()?;
    let dphi = spec.max_phase_step();
    let p_rate = scales.rw.abs().max(scales.p_speed * scales.t.abs());
    let k_rate = scales.rho.abs().max(scales.k_speed * scales.t.abs());
    let p_step = if p_rate > 0.0 { dphi / p_rate } else { f64::INFINITY };
    let k_step = if k_rate > 0.0 { dphi / k_rate } else { f64::INFINITY };
    let p = UniformAxis::covering(0.0, window.p_max, p_step, MIN_AXIS_NODES);
    let k = UniformAxis::covering(window.k_min, window.k_max, k_step, MIN_AXIS_NODES);
    let grid = Grid2d { p, k };
    if grid.node_count() > spec.max_grid_points {
        return Err(Error::Resource {
            what: "radial quadrature",
            required: grid.node_count(),
            limit: spec.max_grid_points,
        });
    }
    Ok(grid)
}

/// Value of a quadrature with its error estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadratureResult {
    pub value: Complex64,
    /// |I(h) − I(2h)| plus a floating-point summation floor.
    pub error: f64,
    /// Set when `error` exceeds `relTolerance·|value|`.
    pub accuracy_warning: bool,
    pub nodes: (usize, usize),
}

#[derive(Debug, Clone, Copy, Default)]
struct RowSums {
    fine: Complex64,
    coarse: Complex64,
    abs: f64,
}

fn combine(grid: &Grid2d, rows: &[RowSums], spec: &QuadratureSpec) -> QuadratureResult {
    let mut fine = Complex64::ZERO;
    let mut coarse = Complex64::ZERO;
    let mut abs = 0.0;
    // fixed order: identical result for any thread count
    for (i, r) in rows.iter().enumerate() {
        fine += r.fine * grid.p.weight(i);
        coarse += r.coarse * grid.p.coarse_weight(i);
        abs += r.abs * grid.p.weight(i);
    }
    let floor = 16.0 * f64::EPSILON * (grid.node_count() as f64).sqrt() * abs;
    let error = (fine - coarse).norm() + floor;
    QuadratureResult {
        value: fine,
        error,
        accuracy_warning: error > spec.rel_tolerance * fine.norm(),
        nodes: (grid.p.len, grid.k.len),
    }
}

/// Integrates an arbitrary integrand f(P, k) over the window.
pub fn integrate_reduced_2d<F>(
    integrand: F,
    window: &RadialWindow,
    scales: &PhaseScales,
    spec: &QuadratureSpec,
) -> Result<QuadratureResult>
where
    F: Fn(f64, f64) -> Complex64 + Sync,
{
    let grid = plan_grid(window, scales, spec)?;
    let rows: Vec<RowSums> = (0..grid.p.len)
        .into_par_iter()
        .map(|i| {
            let p = grid.p.node(i);
            let mut s = RowSums::default();
            for j in 0..grid.k.len {
                let v = integrand(p, grid.k.node(j));
                s.fine += v * grid.k.weight(j);
                s.coarse += v * grid.k.coarse_weight(j);
                s.abs += v.norm() * grid.k.weight(j);
            }
            s
        })
        .collect();
    Ok(combine(&grid, &rows, spec))
}

/// Integrates `row[i]·col[j]·coupling(i, j)` over a planned grid.
///
/// This is the same rule as [`integrate_reduced_2d`] for integrands that
/// factor apart from a real coupling term, which lets the caller precompute
/// every transcendental function along the two axes.
pub fn integrate_factored<C>(
    grid: &Grid2d,
    row: &[Complex64],
    col: &[Complex64],
    coupling: C,
    spec: &QuadratureSpec,
) -> QuadratureResult
where
    C: Fn(usize, usize) -> f64 + Sync,
{
    assert_eq!(row.len(), grid.p.len);
    assert_eq!(col.len(), grid.k.len);
    let wk: Vec<f64> = (0..grid.k.len).map(|j| grid.k.weight(j)).collect();
    let wk2: Vec<f64> = (0..grid.k.len).map(|j| grid.k.coarse_weight(j)).collect();
    let rows: Vec<RowSums> = (0..grid.p.len)
        .into_par_iter()
        .map(|i| {
            let mut s = RowSums::default();
            if row[i] == Complex64::ZERO {
                return s;
            }
            for j in 0..grid.k.len {
                let c = col[j] * coupling(i, j);
                s.fine += c * wk[j];
                s.coarse += c * wk2[j];
                s.abs += c.norm() * wk[j];
            }
            RowSums {
                fine: s.fine * row[i],
                coarse: s.coarse * row[i],
                abs: s.abs * row[i].norm(),
            }
        })
        .collect();
    combine(grid, &rows, spec)
}

/// Monte Carlo estimate with its batch standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    pub value: Complex64,
    /// Standard error of the complex mean, √(var Re + var Im) over batches.
    pub std_error: f64,
    pub samples: u64,
}

/// Unbiased Monte Carlo estimate of ∫∫ f(p1, p2) d³p1 d³p2.
///
/// Samples are drawn from the spectrum's own Gaussian factors: the total
/// momentum P = p1 + p2 from exp(−P²/(2Δp₀²)), the total energy E from the
/// normal law with mean E0 and width ΔE (restricted to E ≥ P²/2M), and the
/// relative momentum k = (m2·p1 − m1·p2)/M with |k| fixed by E and uniform
/// direction. Each sample is paired with its mirror (−p1, −p2). The map
/// (P, k) → (p1, p2) has unit Jacobian.
pub fn mc_oracle_6d<F>(
    integrand: F,
    spectrum: &SourceSpectrum,
    kin: &PairKinematics,
    spec: &McOracleSpec,
) -> Result<McEstimate>
where
    F: Fn(Vec3, Vec3) -> Complex64 + Sync,
{
    spec.validate()?;
    let pairs = spec.sample_count / 2;
    let batches = spec.batches as u64;
    let factory = StreamFactory::new(spec.seed);
    let dp = spectrum.delta_p0();
    let (e0, de) = (spectrum.e0(), spectrum.delta_e());
    let (m1, m2, m, mu) = (kin.m1(), kin.m2(), kin.total_mass(), kin.reduced_mass());
    let gauss3_norm = (2.0 * PI * dp * dp).powf(-1.5);
    let normal_norm = 1.0 / ((2.0 * PI).sqrt() * de);

    let draw = |index: u64| -> Complex64 {
        let mut rng = factory.stream(index);
        let pcm: Vec3 = [
            dp * rng.sample::<f64, _>(StandardNormal),
            dp * rng.sample::<f64, _>(StandardNormal),
            dp * rng.sample::<f64, _>(StandardNormal),
        ];
        let eps_p = dot(pcm, pcm) / (2.0 * m);
        let tail = 0.5 * erfc((eps_p - e0) / (std::f64::consts::SQRT_2 * de));
        let mut energy = None;
        for _ in 0..1000 {
            let e = e0 + de * rng.sample::<f64, _>(StandardNormal);
            if e >= eps_p {
                energy = Some(e);
                break;
            }
        }
        let Some(e) = energy else {
            return Complex64::ZERO;
        };
        let kmag = (2.0 * mu * (e - eps_p)).sqrt();
        let cos_t = 1.0 - 2.0 * rng.random::<f64>();
        let phi = 2.0 * PI * rng.random::<f64>();
        let sin_t = (1.0 - cos_t * cos_t).max(0.0).sqrt();
        if kmag == 0.0 || tail <= 0.0 {
            return Complex64::ZERO;
        }
        let krel = scale([sin_t * phi.cos(), sin_t * phi.sin(), cos_t], kmag);
        let z = (e - e0) / de;
        let density = gauss3_norm
            * (-0.5 * dot(pcm, pcm) / (dp * dp)).exp()
            * normal_norm
            * (-0.5 * z * z).exp()
            / tail
            * (kmag / mu)
            / (4.0 * PI * kmag * kmag);
        let p1 = add(scale(pcm, m1 / m), krel);
        let p2 = sub(scale(pcm, m2 / m), krel);
        (integrand(p1, p2) + integrand(scale(p1, -1.0), scale(p2, -1.0))) / (2.0 * density)
    };

    let batch_sums: Vec<Complex64> = (0..batches)
        .into_par_iter()
        .map(|b| {
            let lo = b * pairs / batches;
            let hi = (b + 1) * pairs / batches;
            let mut s = Complex64::ZERO;
            for i in lo..hi {
                s += draw(i);
            }
            s
        })
        .collect();

    let total: Complex64 = batch_sums.iter().sum();
    let value = total / pairs as f64;
    let means: Vec<Complex64> = batch_sums
        .iter()
        .enumerate()
        .map(|(b, s)| {
            let b = b as u64;
            let n = (b + 1) * pairs / batches - b * pairs / batches;
            s / n as f64
        })
        .collect();
    let bm: Complex64 = means.iter().sum::<Complex64>() / batches as f64;
    let var = means.iter().map(|x| (x - bm).norm_sqr()).sum::<f64>() / (batches - 1) as f64;
    Ok(McEstimate {
        value,
        std_error: (var / batches as f64).sqrt(),
        samples: 2 * pairs,
    })
}

/// Convenience: |a − b| measured in combined standard errors.
pub fn separation_in_sigmas(a: Complex64, err_a: f64, b: Complex64, err_b: f64) -> f64 {
    let combined = err_a.hypot(err_b);
    if combined == 0.0 {
        if a == b {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        (a - b).norm() / combined
    }
}
