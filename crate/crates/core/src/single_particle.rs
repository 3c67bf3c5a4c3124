//! Free propagation of a one-dimensional Gaussian packet.
//!
//! The momentum amplitude is φ(p) = (2σ0²/π)^{1/4} exp(−σ0²(p−k)² − i p r0),
//! normalised so that ∫|φ|² dp = 1, and the packet at time t is
//! ψ(x,t) = (2π)^{−1/2} ∫ φ(p) e^{i(p x − p² t/2m)} dp.

use std::f64::consts::PI;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{require_positive, Error, Result};
use crate::quadrature::{QuadratureSpec, UniformAxis};

/// Minimum density mass a grid must hold before its moments are trusted.
pub const MIN_GRID_MASS: f64 = 0.999;

/// Grid half-width in current packet widths.
pub const GRID_HALF_WIDTH_SIGMAS: f64 = 8.0;
pub const MIN_GRID_POINTS: usize = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct GaussianPacket1D {
    /// Initial position width (standard deviation of |ψ|²).
    pub sigma0: f64,
    /// Mean momentum.
    pub k: f64,
    pub m: f64,
    #[serde(default)]
    pub r0: f64,
}

impl GaussianPacket1D {
    pub fn new(sigma0: f64, k: f64, m: f64, r0: f64) -> Result<Self> {
        let p = GaussianPacket1D { sigma0, k, m, r0 };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        require_positive("sigma0", self.sigma0)?;
        require_positive("m", self.m)?;
        if !self.k.is_finite() {
            return Err(Error::domain("k", "must be finite"));
        }
        if !self.r0.is_finite() {
            return Err(Error::domain("r0", "must be finite"));
        }
        Ok(())
    }

    pub fn velocity(&self) -> f64 {
        self.k / self.m
    }

    /// Centre of |ψ|² at time t.
    pub fn centroid(&self, t: f64) -> f64 {
        self.r0 + self.velocity() * t
    }

    /// Standard deviation of |ψ|² at time t.
    pub fn width(&self, t: f64) -> f64 {
        let s = t / (2.0 * self.m * self.sigma0 * self.sigma0);
        self.sigma0 * (1.0 + s * s).sqrt()
    }

    /// Momentum amplitude φ(p).
    pub fn momentum_amplitude(&self, p: f64) -> Complex64 {
        let d = p - self.k;
        Complex64::from_polar(
            (2.0 * self.sigma0 * self.sigma0 / PI).powf(0.25) * (-self.sigma0 * self.sigma0 * d * d).exp(),
            -p * self.r0,
        )
    }

    /// Uniform grid of `points` nodes over the centroid ± 8 widths at time t.
    pub fn auto_grid(&self, t: f64, points: usize) -> Vec<f64> {
        let c = self.centroid(t);
        let h = GRID_HALF_WIDTH_SIGMAS * self.width(t);
        let n = points.max(MIN_GRID_POINTS);
        (0..n)
            .map(|j| c - h + 2.0 * h * j as f64 / (n - 1) as f64)
            .collect()
    }
}

fn require_time(t: f64) -> Result<()> {
    if t.is_finite() && t >= 0.0 {
        Ok(())
    } else {
        Err(Error::domain("t", format!("must be finite and >= 0, got {t}")))
    }
}

/// Exact amplitude of the free Gaussian packet.
pub fn gaussian_closed_form(packet: &GaussianPacket1D, x: f64, t: f64) -> Complex64 {
    let s2 = packet.sigma0 * packet.sigma0;
    let a = Complex64::new(s2, t / (2.0 * packet.m));
    let b = Complex64::new(2.0 * s2 * packet.k, x - packet.r0);
    let pref = (2.0 * s2 / PI).powf(0.25) / (2.0 * PI).sqrt();
    pref * (PI / a).sqrt() * (b * b / (4.0 * a) - s2 * packet.k * packet.k).exp()
}

/// Evaluates the propagation integral by quadrature at each grid point.
///
/// The momentum window spans (truncationSigmas + 2) amplitude widths around
/// k; the node spacing keeps the phase p·x − p²t/2m from advancing more than
/// 2π/pointsPerOscillation per cell anywhere on the grid.
pub fn propagate_numeric(
    packet: &GaussianPacket1D,
    x_grid: &[f64],
    t: f64,
    spec: &QuadratureSpec,
) -> Result<Vec<Complex64>> {
    packet.validate()?;
    spec.validate()?;
    require_time(t)?;
    if x_grid.is_empty() {
        return Ok(Vec::new());
    }
    // φ falls as exp(−σ0²(p−k)²), i.e. with standard deviation 1/(σ0√2)
    let amp_sd = 1.0 / (packet.sigma0 * std::f64::consts::SQRT_2);
    let half = (spec.truncation_sigmas + 2.0) * amp_sd;
    let (lo, hi) = (packet.k - half, packet.k + half);
    let x_reach = x_grid
        .iter()
        .map(|x| (x - packet.r0).abs())
        .fold(0.0, f64::max);
    let rate = x_reach + lo.abs().max(hi.abs()) * t / packet.m;
    let step = (spec.max_phase_step() / rate).min(amp_sd / 4.0);
    let axis = UniformAxis::covering(lo, hi, step, 257);
    let required = axis.len as u64 * x_grid.len() as u64;
    if required > spec.max_grid_points {
        return Err(Error::Resource {
            what: "single-particle propagation",
            required,
            limit: spec.max_grid_points,
        });
    }
    let weighted: Vec<(f64, Complex64)> = (0..axis.len)
        .map(|j| {
            let p = axis.node(j);
            let w = axis.weight(j) / (2.0 * PI).sqrt();
            (p, packet.momentum_amplitude(p) * w)
        })
        .collect();
    Ok(x_grid
        .par_iter()
        .map(|&x| {
            weighted
                .iter()
                .map(|&(p, f)| f * Complex64::cis(p * x - p * p * t / (2.0 * packet.m)))
                .sum()
        })
        .collect())
}

/// Trapezoid integral of |ψ|² over a sorted grid.
pub fn grid_norm(x_grid: &[f64], amplitudes: &[Complex64]) -> f64 {
    moments(x_grid, amplitudes).0
}

fn moments(x: &[f64], a: &[Complex64]) -> (f64, f64, f64) {
    let mut m = [0.0; 3];
    for i in 1..x.len() {
        let h = 0.5 * (x[i] - x[i - 1]);
        for (xi, ai) in [(x[i - 1], a[i - 1]), (x[i], a[i])] {
            let d = ai.norm_sqr() * h;
            m[0] += d;
            m[1] += d * xi;
            m[2] += d * xi * xi;
        }
    }
    (m[0], m[1], m[2])
}

/// Mean position and RMS width of |ψ|² on the grid.
///
/// The amplitudes must be normalised to unit total probability; at least
/// 99.9% of it has to lie on the grid.
pub fn track_centroid_width(x_grid: &[f64], amplitudes: &[Complex64]) -> Result<(f64, f64)> {
    if x_grid.len() != amplitudes.len() || x_grid.len() < 2 {
        return Err(Error::domain(
            "amplitudes",
            "need at least two grid points and one amplitude per point",
        ));
    }
    if x_grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::domain("xGrid", "must be strictly increasing"));
    }
    let (m0, m1, m2) = moments(x_grid, amplitudes);
    if !(m0 >= MIN_GRID_MASS) {
        return Err(Error::domain(
            "amplitudes",
            format!("grid holds {m0:.6} of the density, need >= {MIN_GRID_MASS}"),
        ));
    }
    let mean = m1 / m0;
    let var = (m2 / m0 - mean * mean).max(0.0);
    Ok((mean, var.sqrt()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn packet(sigma0: f64, k: f64, m: f64) -> GaussianPacket1D {
        GaussianPacket1D::new(sigma0, k, m, 0.0).unwrap()
    }

    #[test]
    fn closed_form_examples() {
        let p = packet(0.7, 0.0, 1.0);
        let peak = gaussian_closed_form(&p, 0.0, 0.0).norm_sqr();
        assert_relative_eq!(peak, 1.0 / (0.7 * (2.0 * PI).sqrt()), max_relative = 1e-14);
        assert_relative_eq!(packet(1.0, 1.0, 1.0).centroid(5.0), 5.0);
        assert_relative_eq!(packet(1.0, 0.0, 1.0).width(2.0), 2f64.sqrt(), max_relative = 1e-15);
    }

    #[test]
    fn closed_form_density_is_the_stated_gaussian() {
        let p = GaussianPacket1D::new(0.8, 1.3, 2.0, -1.0).unwrap();
        let t = 3.7;
        let (c, s) = (p.centroid(t), p.width(t));
        for x in [-3.0, 0.0, 1.5, 2.2, 6.0] {
            let expect = (-(x - c) * (x - c) / (2.0 * s * s)).exp() / (s * (2.0 * PI).sqrt());
            assert_relative_eq!(gaussian_closed_form(&p, x, t).norm_sqr(), expect, max_relative = 1e-12);
        }
    }

    #[test]
    fn numeric_matches_closed_form() {
        let p = GaussianPacket1D::new(1.0, 1.0, 1.0, 0.5).unwrap();
        for t in [0.0, 1.0, 10.0, 100.0] {
            let xs = p.auto_grid(t, 1024);
            let num = propagate_numeric(&p, &xs, t, &QuadratureSpec::default()).unwrap();
            let worst = xs
                .iter()
                .zip(&num)
                .map(|(&x, a)| (a - gaussian_closed_form(&p, x, t)).norm())
                .fold(0.0, f64::max);
            assert!(worst < 1e-9, "t={t}: {worst}");
        }
    }

    #[test]
    fn moments_examples() {
        let p = packet(1.0, 1.0, 1.0);
        let xs = p.auto_grid(7.0, 2048);
        let a: Vec<_> = xs.iter().map(|&x| gaussian_closed_form(&p, x, 7.0)).collect();
        let (mean, _) = track_centroid_width(&xs, &a).unwrap();
        assert!((mean - 7.0).abs() < xs[1] - xs[0]);

        let p = packet(1.0, 0.0, 1.0);
        let xs = p.auto_grid(10.0, 2048);
        let a: Vec<_> = xs.iter().map(|&x| gaussian_closed_form(&p, x, 10.0)).collect();
        let (_, w) = track_centroid_width(&xs, &a).unwrap();
        assert_relative_eq!(w, 26f64.sqrt(), max_relative = 1e-6);
    }

    #[test]
    fn width_reaches_its_linear_asymptote() {
        let (s0, m) = (0.5, 2.0);
        let p = packet(s0, 0.0, m);
        let t = 100.0 * 2.0 * m * s0 * s0;
        let xs = p.auto_grid(t, 2048);
        let a = propagate_numeric(&p, &xs, t, &QuadratureSpec::default()).unwrap();
        let (_, w) = track_centroid_width(&xs, &a).unwrap();
        let asymptote = t / (2.0 * m * s0);
        assert!((w / asymptote - 1.0).abs() < 0.01);
    }

    #[test]
    fn centroid_slope_is_the_group_velocity() {
        let p = GaussianPacket1D::new(1.0, 0.8, 1.5, 2.0).unwrap();
        let tmax = 10.0 * p.m * p.sigma0 * p.sigma0;
        let ts: Vec<f64> = (0..6).map(|i| tmax * i as f64 / 5.0).collect();
        let cs: Vec<f64> = ts
            .iter()
            .map(|&t| {
                let xs = p.auto_grid(t, 1024);
                let a = propagate_numeric(&p, &xs, t, &QuadratureSpec::default()).unwrap();
                track_centroid_width(&xs, &a).unwrap().0
            })
            .collect();
        let n = ts.len() as f64;
        let (mt, mc) = (ts.iter().sum::<f64>() / n, cs.iter().sum::<f64>() / n);
        let sxy: f64 = ts.iter().zip(&cs).map(|(t, c)| (t - mt) * (c - mc)).sum();
        let sxx: f64 = ts.iter().map(|t| (t - mt) * (t - mt)).sum();
        assert!((sxy / sxx / p.velocity() - 1.0).abs() < 1e-3);
    }

    #[test]
    fn uncovered_density_is_rejected() {
        let p = packet(1.0, 0.0, 1.0);
        let xs: Vec<f64> = (0..100).map(|i| 5.0 + i as f64 * 0.1).collect();
        let a: Vec<_> = xs.iter().map(|&x| gaussian_closed_form(&p, x, 0.0)).collect();
        assert!(matches!(track_centroid_width(&xs, &a), Err(Error::Domain { .. })));
    }

    #[test]
    fn invalid_inputs() {
        assert!(GaussianPacket1D::new(0.0, 0.0, 1.0, 0.0).is_err());
        assert!(GaussianPacket1D::new(1.0, 0.0, -1.0, 0.0).is_err());
        let p = packet(1.0, 0.0, 1.0);
        assert!(propagate_numeric(&p, &[0.0], -1.0, &QuadratureSpec::default()).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn initial_packet_is_reproduced(s0 in 0.3f64..3.0, k in -2.0f64..2.0, r0 in -5.0f64..5.0) {
            let p = GaussianPacket1D::new(s0, k, 1.0, r0).unwrap();
            let xs = p.auto_grid(0.0, 1024);
            let a = propagate_numeric(&p, &xs, 0.0, &QuadratureSpec::default()).unwrap();
            for (x, v) in xs.iter().zip(&a) {
                prop_assert!((v - gaussian_closed_form(&p, *x, 0.0)).norm() < 1e-9);
            }
        }

        #[test]
        fn symmetric_packet_stays_even(s0 in 0.3f64..3.0, m in 0.5f64..3.0, t in 0.0f64..50.0) {
            let p = packet(s0, 0.0, m);
            let xs = p.auto_grid(t, 1025);
            let a = propagate_numeric(&p, &xs, t, &QuadratureSpec::default()).unwrap();
            let n = a.len();
            for i in 0..n / 2 {
                prop_assert!((a[i] - a[n - 1 - i]).norm() < 1e-12);
            }
        }

        #[test]
        fn norm_is_conserved(s0 in 0.5f64..2.0, k in -1.0f64..1.0, t in 0.0f64..40.0) {
            let p = packet(s0, k, 1.0);
            let xs = p.auto_grid(t, 1024);
            let a = propagate_numeric(&p, &xs, t, &QuadratureSpec::default()).unwrap();
            prop_assert!((grid_norm(&xs, &a) - 1.0).abs() < 1e-4);
        }
    }
}
