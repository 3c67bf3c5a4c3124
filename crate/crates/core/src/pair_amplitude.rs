//! The correlated two-fragment amplitude and the densities derived from it.
//!
//! With P = p1 + p2, k = (m2·p1 − m1·p2)/M, R_w = |m1·r1 + m2·r2|/M and
//! ρ = |r1 − r2| the amplitude
//!
//!   ψ(r1, r2, t) = ∫∫ F(|p1 + p2|, E1 + E2) e^{i(p1·r1 + p2·r2 − (E1+E2)t)} d³p1 d³p2
//!
//! reduces to the radial double integral
//!
//!   (4π)² ∫∫ F(P, E) j₀(P·R_w) j₀(k·ρ) e^{−iEt} P² k² dP dk,  E = P²/2M + k²/2μ.

use std::f64::consts::PI;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;

use crate::correlation_stats::DetectionEvent;
use crate::error::{require_positive, Error, Result};
use crate::model::{dot, reduced_coordinates, PairKinematics, ReducedCoordinates, SourceSpectrum, Vec3};
use crate::quadrature::{
    integrate_factored, integrate_reduced_2d, mc_oracle_6d, plan_grid, sinc_on_axis,
    Grid2d, McEstimate, McOracleSpec, PhaseScales, QuadratureResult, QuadratureSpec, RadialWindow,
    UniformAxis,
};

const FOUR_PI_SQ: f64 = 16.0 * PI * PI;

/// Minimum number of events for a position-spread estimate.
pub const MIN_UNCERTAINTY_EVENTS: usize = 10_000;

/// Source spectrum, kinematics and quadrature controls for one pair system.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairAmplitudeField {
    spectrum: SourceSpectrum,
    kin: PairKinematics,
    spec: QuadratureSpec,
}

/// Widths of the centre-of-mass and relative packets at time t.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PacketWidths {
    /// Per-component standard deviation of the mass-weighted centre.
    pub centre: f64,
    /// Radial standard deviation of the separation shell.
    pub separation: f64,
}

impl PairAmplitudeField {
    /// Field with the spectrum's normalisation constant taken as given.
    pub fn new(spectrum: SourceSpectrum, kin: PairKinematics, spec: QuadratureSpec) -> Result<Self> {
        spec.validate()?;
        if (spectrum.e0() - kin.e0()).abs() > 1e-12 * kin.e0() {
            return Err(Error::domain(
                "E0",
                format!("spectrum centre {} differs from kinematic E0 {}", spectrum.e0(), kin.e0()),
            ));
        }
        Ok(PairAmplitudeField { spectrum, kin, spec })
    }

    /// Field whose normalisation constant makes the total pair probability 1.
    ///
    /// By Parseval, ∫|ψ|² d³r1 d³r2 = (2π)⁶ ∫|F|² d³p1 d³p2 at every t, so
    /// the constant follows from a smooth momentum-space quadrature. The zero
    /// spectrum stays zero.
    pub fn normalized(spectrum: SourceSpectrum, kin: PairKinematics, spec: QuadratureSpec) -> Result<Self> {
        let field = Self::new(spectrum, kin, spec)?;
        if spectrum.is_zero() {
            return Ok(field);
        }
        let unit = Self::new(spectrum.with_scale(1.0)?, kin, spec)?;
        let total = unit.total_probability()?;
        Self::new(spectrum.with_scale(1.0 / total.sqrt())?, kin, spec)
    }

    pub fn spectrum(&self) -> &SourceSpectrum {
        &self.spectrum
    }
    pub fn kin(&self) -> &PairKinematics {
        &self.kin
    }
    pub fn spec(&self) -> &QuadratureSpec {
        &self.spec
    }

    /// Total momentum kept to `truncationSigmas` widths; relative momentum
    /// restricted to energies within `truncationSigmas` widths of E0.
    pub fn window(&self) -> RadialWindow {
        let ts = self.spec.truncation_sigmas;
        let p_max = ts * self.spectrum.delta_p0();
        let mu = self.kin.reduced_mass();
        let (e0, de) = (self.spectrum.e0(), self.spectrum.delta_e());
        let eps_p_max = p_max * p_max / (2.0 * self.kin.total_mass());
        RadialWindow {
            p_max,
            k_min: (2.0 * mu * (e0 - ts * de - eps_p_max).max(0.0)).sqrt(),
            k_max: (2.0 * mu * (e0 + ts * de)).sqrt(),
        }
    }

    fn phase_scales(&self, rw: f64, rho: f64, t: f64) -> PhaseScales {
        let w = self.window();
        PhaseScales {
            rw,
            rho,
            t,
            p_speed: w.p_max / self.kin.total_mass(),
            k_speed: w.k_max / self.kin.reduced_mass(),
        }
    }

    /// Gaussian estimates of the centre and separation widths; they size the
    /// tables and sampling boxes.
    pub fn packet_widths(&self, t: f64) -> PacketWidths {
        let dp = self.spectrum.delta_p0();
        let (m, mu) = (self.kin.total_mass(), self.kin.reduced_mass());
        let dk = mu * self.spectrum.delta_e() / self.kin.p0();
        PacketWidths {
            centre: (0.5 / (dp * dp) + dp * dp * t * t / (2.0 * m * m)).sqrt(),
            separation: (0.5 / (dk * dk) + dk * dk * t * t / (2.0 * mu * mu)).sqrt(),
        }
    }

    /// (2π)⁶ ∫|F|² d³p1 d³p2, the total probability carried by ψ.
    pub fn total_probability(&self) -> Result<f64> {
        let (m, mu) = (self.kin.total_mass(), self.kin.reduced_mass());
        let s = self.spectrum;
        let r = integrate_reduced_2d(
            |p, k| {
                let f = s.amplitude(p, p * p / (2.0 * m) + k * k / (2.0 * mu));
                Complex64::new(f * f * p * p * k * k, 0.0)
            },
            &self.window(),
            &self.phase_scales(0.0, 0.0, 0.0),
            &self.spec,
        )?;
        Ok((2.0 * PI).powi(6) * FOUR_PI_SQ * r.value.re)
    }

    /// Standard deviation of one Cartesian component of p1 + p2 under |F|².
    pub fn momentum_sum_spread(&self) -> Result<f64> {
        let (m, mu) = (self.kin.total_mass(), self.kin.reduced_mass());
        let s = self.spectrum.with_scale(1.0)?;
        let moment = |power: i32| {
            integrate_reduced_2d(
                |p, k| {
                    let f = s.amplitude(p, p * p / (2.0 * m) + k * k / (2.0 * mu));
                    Complex64::new(f * f * p.powi(power) * k * k, 0.0)
                },
                &self.window(),
                &self.phase_scales(0.0, 0.0, 0.0),
                &self.spec,
            )
            .map(|r| r.value.re)
        };
        Ok((moment(4)? / (3.0 * moment(2)?)).sqrt())
    }

    /// Amplitude as a function of the reduced lengths, with error estimate.
    pub fn evaluate_reduced(&self, rw: f64, rho: f64, t: f64) -> Result<QuadratureResult> {
        require_positive("t", t)?;
        let scales = self.phase_scales(rw, rho, t);
        let grid = plan_grid(&self.window(), &scales, &self.spec)?;
        if self.spectrum.is_zero() {
            return Ok(QuadratureResult {
                value: Complex64::ZERO,
                error: 0.0,
                accuracy_warning: false,
                nodes: (grid.p.len, grid.k.len),
            });
        }
        let (m, mu) = (self.kin.total_mass(), self.kin.reduced_mass());
        let eps_p: Vec<f64> = grid.p.nodes().iter().map(|p| p * p / (2.0 * m)).collect();
        let eps_k: Vec<f64> = grid.k.nodes().iter().map(|k| k * k / (2.0 * mu)).collect();
        let mut jp = vec![0.0; grid.p.len];
        let mut jk = vec![0.0; grid.k.len];
        sinc_on_axis(&grid.p, rw, &mut jp);
        sinc_on_axis(&grid.k, rho, &mut jk);
        let row: Vec<Complex64> = (0..grid.p.len)
            .map(|i| {
                let p = grid.p.node(i);
                Complex64::from_polar(p * p * self.spectrum.momentum_factor(p) * jp[i], -eps_p[i] * t)
            })
            .collect();
        let col: Vec<Complex64> = (0..grid.k.len)
            .map(|j| {
                let k = grid.k.node(j);
                Complex64::from_polar(k * k * jk[j], -eps_k[j] * t)
            })
            .collect();
        let s = self.spectrum;
        let mut r = integrate_factored(&grid, &row, &col, |i, j| s.energy_factor(eps_p[i] + eps_k[j]), &self.spec);
        let c = FOUR_PI_SQ * s.scale();
        r.value *= c;
        r.error *= c;
        Ok(r)
    }

    /// Integrand of the six-dimensional amplitude integral at fixed positions.
    pub fn integrand(&self, r1: Vec3, r2: Vec3, t: f64) -> impl Fn(Vec3, Vec3) -> Complex64 + Sync + '_ {
        move |p1: Vec3, p2: Vec3| {
            let e = self.kin.energy1(dot(p1, p1).sqrt()) + self.kin.energy2(dot(p2, p2).sqrt());
            let pt = [p1[0] + p2[0], p1[1] + p2[1], p1[2] + p2[2]];
            let f = self.spectrum.amplitude(dot(pt, pt).sqrt(), e);
            if f == 0.0 {
                return Complex64::ZERO;
            }
            Complex64::from_polar(f, dot(p1, r1) + dot(p2, r2) - e * t)
        }
    }

    /// Monte Carlo estimate of ψ(r1, r2, t) straight from the 6-D integral.
    pub fn mc_oracle(&self, r1: Vec3, r2: Vec3, t: f64, spec: &McOracleSpec) -> Result<McEstimate> {
        require_positive("t", t)?;
        mc_oracle_6d(self.integrand(r1, r2, t), &self.spectrum, &self.kin, spec)
    }
}

/// ψ(r1, r2, t) through the reduced radial quadrature.
pub fn evaluate_amplitude(field: &PairAmplitudeField, r1: Vec3, r2: Vec3, t: f64) -> Result<Complex64> {
    let rc = reduced_coordinates(r1, r2, field.kin());
    Ok(field.evaluate_reduced(rc.rw, rc.rho, t)?.value)
}

/// Opening-angle density at fixed radii.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct GammaDensityTable {
    pub r1: f64,
    pub r2: f64,
    pub t: f64,
    pub gamma_grid: Vec<f64>,
    /// sin γ·|ψ|², normalised to unit trapezoid integral over the grid.
    pub density: Vec<f64>,
    /// |ψ|² at each node, without the solid-angle factor.
    pub amplitude_sq: Vec<f64>,
    /// Trapezoid integral of sin γ·|ψ|² before normalisation.
    pub normalization: f64,
    /// Node at which |ψ|² is largest.
    pub mode: f64,
}

impl GammaDensityTable {
    /// Second moment of π − γ under the normalised density.
    pub fn width_about_pi(&self) -> f64 {
        let g = &self.gamma_grid;
        let mut s = 0.0;
        for i in 1..g.len() {
            let h = 0.5 * (g[i] - g[i - 1]);
            for j in [i - 1, i] {
                let e = PI - g[j];
                s += h * self.density[j] * e * e;
            }
        }
        s.sqrt()
    }

    /// |ψ|² at the node nearest to `gamma`.
    pub fn amplitude_sq_near(&self, gamma: f64) -> f64 {
        let i = self
            .gamma_grid
            .iter()
            .enumerate()
            .min_by(|a, b| (a.1 - gamma).abs().total_cmp(&(b.1 - gamma).abs()))
            .map(|(i, _)| i)
            .unwrap_or(0);
        self.amplitude_sq[i]
    }
}

/// `cells + 1` equally spaced angles from 0 to π.
pub fn uniform_gamma_grid(cells: usize) -> Vec<f64> {
    let n = cells.max(1);
    (0..=n).map(|i| if i == n { PI } else { PI * i as f64 / n as f64 }).collect()
}

pub fn gamma_density(
    field: &PairAmplitudeField,
    r1: f64,
    r2: f64,
    t: f64,
    gamma_grid: &[f64],
) -> Result<GammaDensityTable> {
    require_positive("t", t)?;
    require_positive("r1", r1)?;
    require_positive("r2", r2)?;
    if gamma_grid.len() < 2
        || gamma_grid.windows(2).any(|w| !(w[1] > w[0]))
        || gamma_grid[0] < 0.0
        || gamma_grid[gamma_grid.len() - 1] > PI
    {
        return Err(Error::domain("gammaGrid", "must be strictly increasing within [0, π]"));
    }
    let amplitude_sq: Vec<f64> = gamma_grid
        .par_iter()
        .map(|&g| {
            let rc = ReducedCoordinates::from_radii(r1, r2, g, field.kin());
            field.evaluate_reduced(rc.rw, rc.rho, t).map(|r| r.value.norm_sqr())
        })
        .collect::<Result<_>>()?;
    let raw: Vec<f64> = gamma_grid.iter().zip(&amplitude_sq).map(|(g, a)| a * g.sin()).collect();
    let normalization = trapezoid(gamma_grid, &raw);
    if !(normalization > 0.0) {
        return Err(Error::domain("spectrum", "angular density vanishes identically"));
    }
    let mode_index = argmax(&amplitude_sq);
    Ok(GammaDensityTable {
        r1,
        r2,
        t,
        gamma_grid: gamma_grid.to_vec(),
        density: raw.iter().map(|d| d / normalization).collect(),
        amplitude_sq,
        normalization,
        mode: gamma_grid[mode_index],
    })
}

fn trapezoid(x: &[f64], y: &[f64]) -> f64 {
    (1..x.len()).map(|i| 0.5 * (x[i] - x[i - 1]) * (y[i] + y[i - 1])).sum()
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

/// Vertex of the parabola through three points, or the middle abscissa when
/// they are collinear.
pub(crate) fn parabolic_peak(x: [f64; 3], y: [f64; 3]) -> f64 {
    let d1 = (y[1] - y[0]) / (x[1] - x[0]);
    let d2 = (y[2] - y[1]) / (x[2] - x[1]);
    let curv = (d2 - d1) / (x[2] - x[0]);
    if curv >= 0.0 {
        return x[1];
    }
    // Newton form y0 + d1·(x−x0) + curv·(x−x0)(x−x1)
    let v = 0.5 * (x[0] + x[1]) - d1 / (2.0 * curv);
    v.clamp(x[0], x[2])
}

/// Density |ψ|²·r⁴ along r1 = r2 = r with the fragments back to back.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct RadialProfile {
    pub t: f64,
    pub r: Vec<f64>,
    pub density: Vec<f64>,
    /// Parabola-refined location of the largest value.
    pub peak: f64,
}

pub fn radial_profile(field: &PairAmplitudeField, t: f64, r_grid: &[f64]) -> Result<RadialProfile> {
    require_positive("t", t)?;
    if r_grid.is_empty() || r_grid.windows(2).any(|w| !(w[1] > w[0])) || r_grid[0] < 0.0 {
        return Err(Error::domain("rGrid", "must be nonempty, nonnegative and strictly increasing"));
    }
    let density: Vec<f64> = r_grid
        .par_iter()
        .map(|&r| {
            let rc = ReducedCoordinates::from_radii(r, r, PI, field.kin());
            field
                .evaluate_reduced(rc.rw, rc.rho, t)
                .map(|q| q.value.norm_sqr() * r.powi(4))
        })
        .collect::<Result<_>>()?;
    let i = argmax(&density);
    let peak = if i == 0 || i + 1 == r_grid.len() {
        r_grid[i]
    } else {
        parabolic_peak(
            [r_grid[i - 1], r_grid[i], r_grid[i + 1]],
            [density[i - 1], density[i], density[i + 1]],
        )
    };
    Ok(RadialProfile {
        t,
        r: r_grid.to_vec(),
        density,
        peak,
    })
}

/// Largest interpolation error accepted for the energy coupling.
const KERNEL_TOLERANCE: f64 = 1e-12;
const KERNEL_RANKS: [usize; 11] = [16, 24, 32, 48, 64, 96, 128, 192, 256, 384, 512];

/// Chebyshev points of the second kind on [a, b] with barycentric weights.
struct ChebyshevBasis {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl ChebyshevBasis {
    fn new(a: f64, b: f64, n: usize) -> Self {
        let (c, h) = (0.5 * (a + b), 0.5 * (b - a));
        let nodes = (0..n)
            .map(|l| c + h * (PI * l as f64 / (n - 1) as f64).cos())
            .collect();
        let weights = (0..n)
            .map(|l| {
                let s = if l % 2 == 0 { 1.0 } else { -1.0 };
                if l == 0 || l + 1 == n {
                    0.5 * s
                } else {
                    s
                }
            })
            .collect();
        ChebyshevBasis { nodes, weights }
    }

    /// Lagrange basis values at y.
    fn basis(&self, y: f64, out: &mut [f64]) {
        if let Some(hit) = self.nodes.iter().position(|&n| n == y) {
            out.fill(0.0);
            out[hit] = 1.0;
            return;
        }
        let mut total = 0.0;
        for ((o, &n), &w) in out.iter_mut().zip(&self.nodes).zip(&self.weights) {
            *o = w / (y - n);
            total += *o;
        }
        for o in out.iter_mut() {
            *o /= total;
        }
    }
}

/// Separable approximation h(x + y) ≈ Σ_l h(x + y_l)·L_l(y) of the energy
/// factor, built to KERNEL_TOLERANCE over the given sample abscissae.
fn energy_kernel(spectrum: &SourceSpectrum, xs: &[f64], y_lo: f64, y_hi: f64) -> (ChebyshevBasis, f64) {
    let stride = (xs.len() / 64).max(1);
    let probe_x: Vec<f64> = xs.iter().step_by(stride).copied().collect();
    let mut last = None;
    for &n in &KERNEL_RANKS {
        let basis = ChebyshevBasis::new(y_lo, y_hi, n);
        let probes = 4 * n + 1;
        let mut lag = vec![0.0; n];
        let mut worst: f64 = 0.0;
        for q in 0..probes {
            let y = y_lo + (y_hi - y_lo) * (q as f64 + 0.5) / probes as f64;
            basis.basis(y, &mut lag);
            for &x in &probe_x {
                let approx: f64 = basis
                    .nodes
                    .iter()
                    .zip(&lag)
                    .map(|(&yl, &l)| spectrum.energy_factor(x + yl) * l)
                    .sum();
                worst = worst.max((approx - spectrum.energy_factor(x + y)).abs());
            }
        }
        if worst <= KERNEL_TOLERANCE {
            return (basis, worst);
        }
        last = Some((basis, worst));
    }
    last.expect("rank list is nonempty")
}

/// |ψ|² tabulated on a uniform (R_w, ρ) grid at one time.
#[derive(Debug, Clone, PartialEq)]
pub struct ReducedDensityTable {
    pub t: f64,
    pub rw: UniformAxis,
    pub rho: UniformAxis,
    /// Row-major, `rw.len` rows of `rho.len` values.
    pub values: Vec<f64>,
    pub kernel_rank: usize,
    /// Largest observed error of the separable energy coupling.
    pub kernel_error: f64,
    pub quadrature: Grid2d,
}

impl ReducedDensityTable {
    /// Tabulates |ψ|² with the energy coupling split into a low-rank sum,
    /// which turns the table into one matrix product.
    pub fn build(field: &PairAmplitudeField, t: f64) -> Result<Self> {
        require_positive("t", t)?;
        let w = field.window();
        let kin = field.kin();
        let (m, mu) = (kin.total_mass(), kin.reduced_mass());
        let widths = field.packet_widths(t);
        let s_r0 = field.packet_widths(0.0);

        let rw_hi = w.p_max * t / m + 8.0 * s_r0.centre;
        let rho_centre = kin.p0() * t / mu;
        let rho_lo = (w.k_min * t / mu - 8.0 * s_r0.separation).max(0.0);
        let rho_hi = w.k_max * t / mu + 8.0 * s_r0.separation;
        let rw_step = widths.centre / 12.0;
        let mut rho_step = widths.separation / 12.0;
        if rho_centre < 8.0 * widths.separation {
            // the shell still overlaps the origin: resolve the standing-wave fringes
            rho_step = rho_step.min(2.0 * PI / w.k_max / 32.0);
        }
        let rw_axis = UniformAxis::covering(0.0, rw_hi, rw_step, 65);
        let rho_axis = UniformAxis::covering(rho_lo, rho_hi, rho_step, 65);
        let cells = rw_axis.len as u64 * rho_axis.len as u64;
        if cells > field.spec().max_grid_points {
            return Err(Error::Resource {
                what: "reduced density table",
                required: cells,
                limit: field.spec().max_grid_points,
            });
        }
        let grid = plan_grid(&w, &field.phase_scales(rw_hi, rho_hi, t), field.spec())?;

        let spectrum = *field.spectrum();
        let eps_p: Vec<f64> = grid.p.nodes().iter().map(|p| p * p / (2.0 * m)).collect();
        let eps_k: Vec<f64> = grid.k.nodes().iter().map(|k| k * k / (2.0 * mu)).collect();
        let (basis, kernel_error) =
            energy_kernel(&spectrum, &eps_p, eps_k[0], eps_k[eps_k.len() - 1]);
        let rank = basis.nodes.len();

        // u[i][l] = h(ε_P,i + y_l)·(weighted P-side factors)
        let a_side: Vec<Complex64> = (0..grid.p.len)
            .map(|i| {
                let p = grid.p.node(i);
                Complex64::from_polar(grid.p.weight(i) * p * p * spectrum.momentum_factor(p), -eps_p[i] * t)
            })
            .collect();
        let u: Vec<f64> = (0..grid.p.len)
            .flat_map(|i| basis.nodes.iter().map(move |&y| (i, y)))
            .map(|(i, y)| spectrum.energy_factor(eps_p[i] + y))
            .collect();
        let b_side: Vec<Complex64> = (0..grid.k.len)
            .map(|j| {
                let k = grid.k.node(j);
                Complex64::from_polar(grid.k.weight(j) * k * k, -eps_k[j] * t)
            })
            .collect();
        let mut v = vec![0.0; grid.k.len * rank];
        for (j, row) in v.chunks_mut(rank).enumerate() {
            basis.basis(eps_k[j], row);
        }

        let project = |axis: &UniformAxis, side: &[Complex64], mat: &[f64], r: f64| {
            let mut j0 = vec![0.0; axis.len];
            sinc_on_axis(axis, r, &mut j0);
            let mut acc = vec![Complex64::ZERO; rank];
            for ((c, &s), row) in side.iter().zip(&j0).zip(mat.chunks(rank)) {
                let c = c * s;
                if c == Complex64::ZERO {
                    continue;
                }
                for (a, &x) in acc.iter_mut().zip(row) {
                    *a += c * x;
                }
            }
            acc
        };
        let alpha: Vec<Vec<Complex64>> = (0..rw_axis.len)
            .into_par_iter()
            .map(|a| project(&grid.p, &a_side, &u, rw_axis.node(a)))
            .collect();
        let beta: Vec<Vec<Complex64>> = (0..rho_axis.len)
            .into_par_iter()
            .map(|b| project(&grid.k, &b_side, &v, rho_axis.node(b)))
            .collect();
        let c = FOUR_PI_SQ * spectrum.scale();
        let values: Vec<f64> = alpha
            .par_iter()
            .flat_map_iter(|al| {
                beta.iter().map(move |be| {
                    let s: Complex64 = al.iter().zip(be).map(|(x, y)| x * y).sum();
                    (s * c).norm_sqr()
                })
            })
            .collect();
        Ok(ReducedDensityTable {
            t,
            rw: rw_axis,
            rho: rho_axis,
            values,
            kernel_rank: rank,
            kernel_error,
            quadrature: grid,
        })
    }

    pub fn value(&self, a: usize, b: usize) -> f64 {
        self.values[a * self.rho.len + b]
    }

    /// Bilinear interpolation; zero outside the table.
    pub fn lookup(&self, rw: f64, rho: f64) -> f64 {
        let x = (rw - self.rw.start) / self.rw.step;
        let y = (rho - self.rho.start) / self.rho.step;
        let (nx, ny) = ((self.rw.len - 1) as f64, (self.rho.len - 1) as f64);
        if !(x >= 0.0 && x <= nx && y >= 0.0 && y <= ny) {
            return 0.0;
        }
        let (i, j) = ((x.floor() as usize).min(self.rw.len - 2), (y.floor() as usize).min(self.rho.len - 2));
        let (fx, fy) = (x - i as f64, y - j as f64);
        let v00 = self.value(i, j);
        let v01 = self.value(i, j + 1);
        let v10 = self.value(i + 1, j);
        let v11 = self.value(i + 1, j + 1);
        (1.0 - fx) * ((1.0 - fy) * v00 + fy * v01) + fx * ((1.0 - fy) * v10 + fy * v11)
    }

    pub fn max_value(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }

    /// Smallest box [0, R_w] × [ρ_lo, ρ_hi] outside which the table falls
    /// below `rel` of its maximum.
    pub fn support(&self, rel: f64) -> (f64, f64, f64) {
        let thr = rel * self.max_value();
        let (mut a_hi, mut b_lo, mut b_hi) = (0usize, self.rho.len - 1, 0usize);
        for a in 0..self.rw.len {
            for b in 0..self.rho.len {
                if self.value(a, b) > thr {
                    a_hi = a_hi.max(a);
                    b_lo = b_lo.min(b);
                    b_hi = b_hi.max(b);
                }
            }
        }
        let a_hi = (a_hi + 1).min(self.rw.len - 1);
        let b_lo = b_lo.saturating_sub(1);
        let b_hi = (b_hi + 1).min(self.rho.len - 1);
        if b_lo > b_hi {
            return (0.0, self.rho.start, self.rho.start);
        }
        (self.rw.node(a_hi), self.rho.node(b_lo), self.rho.node(b_hi))
    }
}

/// Resolution and extent of the (r1, r2, ε = π − γ) cell grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct ShellGridSpec {
    pub radial_cells: usize,
    pub angular_cells: usize,
    /// Explicit radial ranges; chosen from the density when absent.
    pub r1_range: Option<(f64, f64)>,
    pub r2_range: Option<(f64, f64)>,
}

impl Default for ShellGridSpec {
    fn default() -> Self {
        ShellGridSpec {
            radial_cells: 160,
            angular_cells: 256,
            r1_range: None,
            r2_range: None,
        }
    }
}

/// Probability mass of each (r1, r2, ε) cell, from the reduced table.
///
/// Cell mass = 8π²·|ψ|²·r1²·r2²·sin γ·Δr1·Δr2·Δε at the cell centre; the
/// 8π² accounts for the orientation of r̂1 and the azimuth of r̂2 about it.
#[derive(Debug, Clone, PartialEq)]
pub struct ShellGrid {
    pub t: f64,
    pub r1: (f64, f64),
    pub r2: (f64, f64),
    pub eps_max: f64,
    pub cells: (usize, usize, usize),
    /// Flattened as ((i1·n2) + i2)·nε + iε.
    pub mass: Vec<f64>,
    pub total: f64,
}

impl ShellGrid {
    pub fn build(field: &PairAmplitudeField, t: f64, spec: &ShellGridSpec) -> Result<Self> {
        let table = ReducedDensityTable::build(field, t)?;
        Self::from_table(field, &table, spec)
    }

    pub fn from_table(field: &PairAmplitudeField, table: &ReducedDensityTable, spec: &ShellGridSpec) -> Result<Self> {
        if spec.radial_cells < 4 || spec.angular_cells < 4 {
            return Err(Error::domain("shellGrid", "need at least 4 cells per axis"));
        }
        let kin = field.kin();
        let (m1, m2, m) = (kin.m1(), kin.m2(), kin.total_mass());
        let t = table.t;
        let (rw_eff, rho_lo, rho_hi) = table.support(1e-13);
        let widths = field.packet_widths(t);
        let ts = field.spec().truncation_sigmas;
        // ranges every box must contain: truncationSigmas shell widths about v_j·t
        let required = |v: f64, share: f64| {
            let w = widths.centre.hypot(share * widths.separation);
            ((v * t - ts * w).max(0.0), v * t + ts * w)
        };
        let need1 = required(kin.v1(), m2 / m);
        let need2 = required(kin.v2(), m1 / m);
        let auto = |share: f64, need: (f64, f64)| {
            (
                (share * rho_lo - rw_eff).max(0.0).min(need.0),
                (share * rho_hi + rw_eff).max(need.1),
            )
        };
        let pick = |given: Option<(f64, f64)>, need: (f64, f64), share: f64, name: &'static str| -> Result<(f64, f64)> {
            match given {
                None => Ok(auto(share, need)),
                Some((lo, hi)) => {
                    if !(lo >= 0.0 && hi > lo) {
                        return Err(Error::domain(name, "range must satisfy 0 <= lo < hi"));
                    }
                    if lo > need.0 || hi < need.1 {
                        return Err(Error::domain(
                            name,
                            format!(
                                "box [{lo}, {hi}] does not cover {ts} shell widths, need [{}, {}]",
                                need.0, need.1
                            ),
                        ));
                    }
                    Ok((lo, hi))
                }
            }
        };
        let r1 = pick(spec.r1_range, need1, m2 / m, "r1Range")?;
        let r2 = pick(spec.r2_range, need2, m1 / m, "r2Range")?;
        // R_w ≥ 2√(m1·m2·r1·r2)·sin(ε/2)/M bounds the reachable ε
        let reach = if r1.0 > 0.0 && r2.0 > 0.0 {
            m * rw_eff / (2.0 * (m1 * m2 * r1.0 * r2.0).sqrt())
        } else {
            f64::INFINITY
        };
        let eps_max = if reach >= 1.0 { PI } else { 2.0 * reach.asin() };

        let (n1, n2, ne) = (spec.radial_cells, spec.radial_cells, spec.angular_cells);
        let d1 = (r1.1 - r1.0) / n1 as f64;
        let d2 = (r2.1 - r2.0) / n2 as f64;
        let de = eps_max / ne as f64;
        let vol = 8.0 * PI * PI * d1 * d2 * de;
        let sines: Vec<f64> = (0..ne).map(|k| ((k as f64 + 0.5) * de).sin()).collect();
        let mass: Vec<f64> = (0..n1)
            .into_par_iter()
            .flat_map_iter(|i| {
                let a = r1.0 + (i as f64 + 0.5) * d1;
                let sines = &sines;
                (0..n2).flat_map(move |j| {
                    let b = r2.0 + (j as f64 + 0.5) * d2;
                    (0..ne).map(move |k| {
                        let eps = (k as f64 + 0.5) * de;
                        let rc = ReducedCoordinates::from_radii(a, b, PI - eps, kin);
                        table.lookup(rc.rw, rc.rho) * a * a * b * b * sines[k] * vol
                    })
                })
            })
            .collect();
        let total = mass.iter().sum();
        Ok(ShellGrid {
            t,
            r1,
            r2,
            eps_max,
            cells: (n1, n2, ne),
            mass,
            total,
        })
    }

    pub fn cell_size(&self) -> (f64, f64, f64) {
        (
            (self.r1.1 - self.r1.0) / self.cells.0 as f64,
            (self.r2.1 - self.r2.0) / self.cells.1 as f64,
            self.eps_max / self.cells.2 as f64,
        )
    }

    /// Cell indices of flattened index `c`.
    pub fn unflatten(&self, c: usize) -> (usize, usize, usize) {
        let ne = self.cells.2;
        let n2 = self.cells.1;
        (c / (n2 * ne), (c / ne) % n2, c % ne)
    }
}

/// 8π² ∭ |ψ|² r1² r2² sin γ dr1 dr2 dγ at time t.
pub fn norm_on_shells(field: &PairAmplitudeField, t: f64, spec: &ShellGridSpec) -> Result<f64> {
    require_positive("t", t)?;
    if field.spectrum().is_zero() {
        return Ok(0.0);
    }
    Ok(ShellGrid::build(field, t, spec)?.total)
}

/// Δ(p1 + p2)ₓ·Δ(q1 + q2)ₓ in units of ħ.
///
/// The momentum spread is the standard deviation of one component of
/// p1 + p2 under |F|²; the position spread is the sample standard deviation
/// of the x component of r1 + r2.
pub fn uncertainty_product(field: &PairAmplitudeField, events: &[DetectionEvent]) -> Result<f64> {
    if events.len() < MIN_UNCERTAINTY_EVENTS {
        return Err(Error::domain(
            "events",
            format!("need at least {MIN_UNCERTAINTY_EVENTS}, got {}", events.len()),
        ));
    }
    let xs: Vec<f64> = events
        .iter()
        .map(|e| e.dir1.unit_vector()[0] * e.r1 + e.dir2.unit_vector()[0] * e.r2)
        .collect();
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    Ok(field.momentum_sum_spread()? * var.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::correlation_stats::sample_events;
    use crate::model::make_kinematics;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn field(m1: f64, m2: f64, dp: f64, de: f64) -> PairAmplitudeField {
        let kin = make_kinematics(m1, m2, 1.0).unwrap();
        let s = SourceSpectrum::new(dp, 1.0, de).unwrap();
        PairAmplitudeField::normalized(s, kin, QuadratureSpec::default()).unwrap()
    }

    fn default_field() -> PairAmplitudeField {
        field(1.0, 1.0, 0.05, 0.05)
    }

    fn rotate(v: Vec3, axis: Vec3, angle: f64) -> Vec3 {
        // Rodrigues' formula
        let n = crate::model::norm(axis);
        let k = [axis[0] / n, axis[1] / n, axis[2] / n];
        let (s, c) = angle.sin_cos();
        let kxv = crate::model::cross(k, v);
        let kv = dot(k, v);
        [0, 1, 2].map(|i| v[i] * c + kxv[i] * s + k[i] * kv * (1.0 - c))
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(12))]

        #[test]
        fn amplitude_is_rotation_invariant(
            a in prop::array::uniform3(-8.0f64..8.0),
            b in prop::array::uniform3(-8.0f64..8.0),
            axis in prop::array::uniform3(-1.0f64..1.0),
            angle in 0.0f64..std::f64::consts::TAU,
        ) {
            prop_assume!(crate::model::norm(axis) > 1e-3);
            let f = field(1.0, 2.0, 0.3, 0.2);
            let x = evaluate_amplitude(&f, a, b, 4.0).unwrap();
            let y = evaluate_amplitude(&f, rotate(a, axis, angle), rotate(b, axis, angle), 4.0).unwrap();
            prop_assert!((x - y).norm() <= 1e-10 * x.norm().max(1e-300));
        }

        #[test]
        fn equal_masses_are_exchange_symmetric(
            a in prop::array::uniform3(-8.0f64..8.0),
            b in prop::array::uniform3(-8.0f64..8.0),
        ) {
            let f = field(1.5, 1.5, 0.3, 0.2);
            let x = evaluate_amplitude(&f, a, b, 3.0).unwrap();
            let y = evaluate_amplitude(&f, b, a, 3.0).unwrap();
            prop_assert!((x - y).norm() <= 1e-10 * x.norm().max(1e-300));
        }
    }

    #[test]
    fn nonpositive_time_is_rejected() {
        let f = default_field();
        assert!(evaluate_amplitude(&f, [1.0, 0.0, 0.0], [-1.0, 0.0, 0.0], 0.0).is_err());
        assert!(f.evaluate_reduced(1.0, 1.0, -2.0).is_err());
    }

    #[test]
    fn reduction_matches_six_dimensional_oracle() {
        let f = field(1.0, 2.0, 0.3, 0.25);
        let t = 4.0;
        let spec = McOracleSpec {
            sample_count: 400_000,
            seed: 17,
            batches: 40,
        };
        let r1 = scale_vec([0.6, -0.3, 0.7], f.kin().v1() * t);
        let r2 = scale_vec([-0.5, 0.4, -0.6], f.kin().v2() * t);
        let q = f.evaluate_reduced(
            reduced_coordinates(r1, r2, f.kin()).rw,
            reduced_coordinates(r1, r2, f.kin()).rho,
            t,
        )
        .unwrap();
        let mc = f.mc_oracle(r1, r2, t, &spec).unwrap();
        let sep = crate::quadrature::separation_in_sigmas(q.value, q.error, mc.value, mc.std_error);
        assert!(sep < 3.0, "quad {:?} mc {:?}", q, mc);
        assert!(q.value.norm() > 5.0 * mc.std_error, "amplitude not resolved: {q:?} {mc:?}");
    }

    fn scale_vec(v: Vec3, len: f64) -> Vec3 {
        let n = crate::model::norm(v);
        [v[0] * len / n, v[1] * len / n, v[2] * len / n]
    }

    #[test]
    fn back_to_back_dominates_orthogonal() {
        let f = default_field();
        let at = |g: f64| {
            let rc = ReducedCoordinates::from_radii(1000.0, 1000.0, g, f.kin());
            f.evaluate_reduced(rc.rw, rc.rho, 1000.0).unwrap().value.norm()
        };
        assert!(at(PI) >= 10.0 * at(PI / 2.0));
    }

    #[test]
    fn table_matches_direct_evaluation() {
        let f = field(1.0, 3.0, 0.15, 0.1);
        let t = 60.0;
        let tab = ReducedDensityTable::build(&f, t).unwrap();
        assert!(tab.kernel_error <= 1e-11);
        let mx = tab.max_value();
        for a in (0..tab.rw.len).step_by(tab.rw.len / 9) {
            for b in (0..tab.rho.len).step_by(tab.rho.len / 9) {
                let d = f.evaluate_reduced(tab.rw.node(a), tab.rho.node(b), t).unwrap().value.norm_sqr();
                assert!((d - tab.value(a, b)).abs() <= 1e-8 * mx);
            }
        }
        // between nodes the bilinear interpolant stays within a few per mille
        for a in (0..tab.rw.len - 1).step_by(tab.rw.len / 7) {
            for b in (0..tab.rho.len - 1).step_by(tab.rho.len / 7) {
                let (x, y) = (tab.rw.node(a) + 0.5 * tab.rw.step, tab.rho.node(b) + 0.5 * tab.rho.step);
                let d = f.evaluate_reduced(x, y, t).unwrap().value.norm_sqr();
                assert!((d - tab.lookup(x, y)).abs() <= 5e-3 * mx);
            }
        }
        assert_eq!(tab.lookup(-1.0, tab.rho.start), 0.0);
        assert_eq!(tab.lookup(0.0, tab.rho.end() + 1.0), 0.0);
    }

    #[test]
    fn gamma_density_peaks_back_to_back() {
        let f = default_field();
        let grid = uniform_gamma_grid(128);
        let g = gamma_density(&f, 1000.0, 1000.0, 1000.0, &grid).unwrap();
        assert!((g.mode - PI).abs() <= PI / 128.0);
        assert!(g.amplitude_sq[0] <= 1e-3 * g.amplitude_sq_near(PI));
        assert!(g.density.iter().all(|&d| d >= 0.0));
        assert_relative_eq!(trapezoid(&g.gamma_grid, &g.density), 1.0, max_relative = 1e-12);
        assert!(g.normalization > 0.0);
    }

    #[test]
    fn gamma_width_grows_with_momentum_spread() {
        let grid = uniform_gamma_grid(96);
        let widths: Vec<f64> = [0.05, 0.1, 0.2]
            .iter()
            .map(|&dp| {
                let f = field(1.0, 1.0, dp, 0.05);
                let g = gamma_density(&f, 2000.0, 2000.0, 2000.0, &grid).unwrap();
                assert_eq!(g.mode, PI);
                g.width_about_pi()
            })
            .collect();
        assert!(widths[0] <= widths[1] && widths[1] <= widths[2], "{widths:?}");

        let narrow = gamma_density(&field(1.0, 1.0, 0.02, 0.05), 1000.0, 1000.0, 1000.0, &grid).unwrap();
        let wide = gamma_density(&field(1.0, 1.0, 0.2, 0.05), 1000.0, 1000.0, 1000.0, &grid).unwrap();
        assert!(wide.width_about_pi() > narrow.width_about_pi());
    }

    #[test]
    fn gamma_grid_must_be_increasing() {
        let f = default_field();
        assert!(gamma_density(&f, 1.0, 1.0, 1.0, &[0.0, 1.0, 1.0]).is_err());
        assert!(gamma_density(&f, 1.0, 1.0, 1.0, &[0.0, 4.0]).is_err());
        assert!(gamma_density(&f, 0.0, 1.0, 1.0, &[0.0, 1.0]).is_err());
    }

    #[test]
    fn radial_profile_follows_the_classical_shell() {
        let f = default_field();
        let grid = |c: f64| (0..161).map(|i| c * (0.8 + 0.4 * i as f64 / 160.0)).collect::<Vec<_>>();
        let p1 = radial_profile(&f, 1000.0, &grid(1000.0)).unwrap();
        assert!((p1.peak / 1000.0 - 1.0).abs() < 0.02);
        let p2 = radial_profile(&f, 2000.0, &grid(2000.0)).unwrap();
        assert!((p2.peak / p1.peak / 2.0 - 1.0).abs() < 0.02);
        let early = radial_profile(&f, 1e-3, &grid(1000.0)).unwrap();
        let top = p1.density.iter().copied().fold(0.0, f64::max);
        assert!(early.density.iter().all(|&d| d < 1e-6 * top));
    }

    #[test]
    fn parabola_vertex() {
        let v = parabolic_peak([0.0, 1.0, 3.0], [-(0.0f64 - 1.3).powi(2), -(1.0f64 - 1.3).powi(2), -(3.0f64 - 1.3).powi(2)]);
        assert_relative_eq!(v, 1.3, max_relative = 1e-12);
    }

    #[test]
    fn parseval_fixes_unit_probability() {
        let f = default_field();
        assert_relative_eq!(f.total_probability().unwrap(), 1.0, max_relative = 1e-10);
        let n500 = norm_on_shells(&f, 500.0, &ShellGridSpec::default()).unwrap();
        let n1000 = norm_on_shells(&f, 1000.0, &ShellGridSpec::default()).unwrap();
        assert!((n500 - 1.0).abs() < 0.01 && (n1000 - 1.0).abs() < 0.01);
        assert!((n500 / n1000 - 1.0).abs() < 0.01);
    }

    #[test]
    fn zero_spectrum_has_zero_norm() {
        let kin = make_kinematics(1.0, 1.0, 1.0).unwrap();
        let s = SourceSpectrum::with_default_energy_width(0.05, 1.0).unwrap().with_scale(0.0).unwrap();
        let f = PairAmplitudeField::normalized(s, kin, QuadratureSpec::default()).unwrap();
        assert_eq!(norm_on_shells(&f, 1000.0, &ShellGridSpec::default()).unwrap(), 0.0);
        assert_eq!(evaluate_amplitude(&f, [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], 1.0).unwrap(), Complex64::ZERO);
    }

    #[test]
    fn undersized_box_is_a_domain_error() {
        let f = default_field();
        let spec = ShellGridSpec {
            r1_range: Some((950.0, 1050.0)),
            ..ShellGridSpec::default()
        };
        match norm_on_shells(&f, 1000.0, &spec) {
            Err(Error::Domain { field, .. }) => assert_eq!(field, "r1Range"),
            other => panic!("expected a domain error, got {other:?}"),
        }
    }

    #[test]
    fn momentum_spread_of_a_narrow_spectrum() {
        // with ΔE wide the energy factor barely weights P, so |F|² gives Δp₀/√2
        let f = field(1.0, 1.0, 0.01, 0.2);
        assert_relative_eq!(f.momentum_sum_spread().unwrap(), 0.01 / 2f64.sqrt(), max_relative = 1e-3);
    }

    #[test]
    fn uncertainty_product_saturates_for_a_fresh_gaussian() {
        let f = field(1.0, 1.0, 0.01, 0.2);
        let ev = sample_events(&f, 200.0, 40_000, 5).unwrap();
        let u = uncertainty_product(&f, &ev.events).unwrap();
        assert!(u >= 0.95 && (u - 1.0).abs() < 0.03, "{u}");
        assert!(uncertainty_product(&f, &ev.events[..9_999]).is_err());
    }

    #[test]
    fn uncertainty_product_respects_the_bound() {
        for dp in [0.05, 0.025] {
            let f = field(1.0, 1.0, dp, 0.05);
            let ev = sample_events(&f, 1000.0, 20_000, 9).unwrap();
            assert!(uncertainty_product(&f, &ev.events).unwrap() >= 0.95);
        }
    }
}
