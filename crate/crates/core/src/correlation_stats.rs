//! Coincidence events drawn from the pair density, alignment statistics and
//! scaling fits.

use std::f64::consts::PI;

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{require_positive, Error, Result};
use crate::model::{
    add, opening_angle, scale, PairKinematics, SourceSpectrum, SphericalDirection, Vec3,
};
use crate::pair_amplitude::{parabolic_peak, PairAmplitudeField, ShellGrid, ShellGridSpec};
use crate::rng::StreamFactory;
use crate::stationary_phase::{deviation_budget, DeviationBudget, DominantSpread};

pub const MIN_EVENTS: usize = 1_000;
pub const BOOTSTRAP_RESAMPLES: usize = 200;
const BOOTSTRAP_SEED: u64 = 0xb007;

/// One coincidence: both fragments' positions at the snapshot time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct DetectionEvent {
    pub r1: f64,
    pub dir1: SphericalDirection,
    pub r2: f64,
    pub dir2: SphericalDirection,
    /// Opening angle between the two directions.
    pub gamma: f64,
    /// π − γ, the deviation from back-to-back.
    pub epsilon: f64,
}

impl DetectionEvent {
    pub fn position1(&self) -> Vec3 {
        scale(self.dir1.unit_vector(), self.r1)
    }
    pub fn position2(&self) -> Vec3 {
        scale(self.dir2.unit_vector(), self.r2)
    }
}

/// Inputs that produced an event set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct SampleConfig {
    pub m1: f64,
    pub m2: f64,
    #[serde(rename = "E0")]
    pub e0: f64,
    #[serde(rename = "deltaP0")]
    pub delta_p0: f64,
    #[serde(rename = "deltaE")]
    pub delta_e: f64,
    pub t: f64,
    pub count: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EventSet {
    pub config: SampleConfig,
    pub events: Vec<DetectionEvent>,
}

/// Draws `count` events from 8π²·|ψ|²·r1²·r2²·sin γ.
///
/// (r1, r2, ε) come from the tabulated cell masses by inverse CDF with
/// uniform jitter inside the chosen cell; r̂1 is uniform on the sphere and r̂2
/// is placed at opening angle γ with uniform azimuth about r̂1. Event `i`
/// uses random stream `i`, so the output does not depend on scheduling.
pub fn sample_events(field: &PairAmplitudeField, t: f64, count: usize, seed: u64) -> Result<EventSet> {
    sample_events_with(field, t, count, seed, &ShellGridSpec::default())
}

pub fn sample_events_with(
    field: &PairAmplitudeField,
    t: f64,
    count: usize,
    seed: u64,
    grid_spec: &ShellGridSpec,
) -> Result<EventSet> {
    require_positive("t", t)?;
    if count < MIN_EVENTS {
        return Err(Error::domain("count", format!("need at least {MIN_EVENTS}, got {count}")));
    }
    if field.spectrum().is_zero() {
        return Err(Error::domain("spectrum", "cannot sample from the zero spectrum"));
    }
    let grid = ShellGrid::build(field, t, grid_spec)?;
    let events = sample_from_grid(&grid, count, seed)?;
    let kin = field.kin();
    let s = field.spectrum();
    Ok(EventSet {
        config: SampleConfig {
            m1: kin.m1(),
            m2: kin.m2(),
            e0: kin.e0(),
            delta_p0: s.delta_p0(),
            delta_e: s.delta_e(),
            t,
            count,
            seed,
        },
        events,
    })
}

pub fn sample_from_grid(grid: &ShellGrid, count: usize, seed: u64) -> Result<Vec<DetectionEvent>> {
    if !(grid.total > 0.0 && grid.total.is_finite()) {
        return Err(Error::domain("spectrum", "density vanishes on the sampling grid"));
    }
    let mut cdf = Vec::with_capacity(grid.mass.len());
    let mut acc = 0.0;
    for m in &grid.mass {
        acc += m;
        cdf.push(acc);
    }
    let factory = StreamFactory::new(seed);
    let (d1, d2, de) = grid.cell_size();
    Ok((0..count as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = factory.stream(i);
            let u = rng.random::<f64>() * acc;
            let c = cdf.partition_point(|&x| x <= u).min(cdf.len() - 1);
            let (i1, i2, ie) = grid.unflatten(c);
            let r1 = grid.r1.0 + (i1 as f64 + rng.random::<f64>()) * d1;
            let r2 = grid.r2.0 + (i2 as f64 + rng.random::<f64>()) * d2;
            let eps = (ie as f64 + rng.random::<f64>()) * de;
            let gamma = PI - eps;

            let cos_t = 1.0 - 2.0 * rng.random::<f64>();
            let phi = 2.0 * PI * rng.random::<f64>();
            let azimuth = 2.0 * PI * rng.random::<f64>();
            let theta = cos_t.clamp(-1.0, 1.0).acos();
            let dir1 = SphericalDirection::from_vector(direction(theta, phi));
            let (st, ct) = theta.sin_cos();
            let (sp, cp) = phi.sin_cos();
            let e_theta = [ct * cp, ct * sp, -st];
            let e_phi = [-sp, cp, 0.0];
            let (sa, ca) = azimuth.sin_cos();
            let (sg, cg) = gamma.sin_cos();
            let v2 = add(
                scale(direction(theta, phi), cg),
                scale(add(scale(e_theta, ca), scale(e_phi, sa)), sg),
            );
            let dir2 = SphericalDirection::from_vector(v2);
            let g = opening_angle(dir1, dir2);
            DetectionEvent {
                r1,
                dir1,
                r2,
                dir2,
                gamma: g,
                epsilon: PI - g,
            }
        })
        .collect())
}

fn direction(theta: f64, phi: f64) -> Vec3 {
    let (st, ct) = theta.sin_cos();
    let (sp, cp) = phi.sin_cos();
    [st * cp, st * sp, ct]
}

/// Width of the anti-alignment and location of the radial shells.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct AlignmentReport {
    /// Root mean square of ε = π − γ.
    pub sigma_epsilon: f64,
    /// Bootstrap standard error of `sigma_epsilon`.
    pub sigma_err: f64,
    pub radial_peak1: f64,
    pub radial_peak2: f64,
    pub event_count: usize,
    pub config: SampleConfig,
}

pub fn alignment_report(set: &EventSet) -> Result<AlignmentReport> {
    let ev = &set.events;
    if ev.len() < MIN_EVENTS {
        return Err(Error::domain(
            "events",
            format!("need at least {MIN_EVENTS}, got {}", ev.len()),
        ));
    }
    let eps2: Vec<f64> = ev.iter().map(|e| e.epsilon * e.epsilon).collect();
    let n = eps2.len();
    let sigma_epsilon = (eps2.iter().sum::<f64>() / n as f64).sqrt();
    let factory = StreamFactory::new(BOOTSTRAP_SEED);
    let boot: Vec<f64> = (0..BOOTSTRAP_RESAMPLES as u64)
        .into_par_iter()
        .map(|b| {
            let mut rng = factory.stream(b);
            let s: f64 = (0..n).map(|_| eps2[rng.random_range(0..n)]).sum();
            (s / n as f64).sqrt()
        })
        .collect();
    let bm = boot.iter().sum::<f64>() / boot.len() as f64;
    let bv = boot.iter().map(|x| (x - bm) * (x - bm)).sum::<f64>() / (boot.len() - 1) as f64;
    let r1: Vec<f64> = ev.iter().map(|e| e.r1).collect();
    let r2: Vec<f64> = ev.iter().map(|e| e.r2).collect();
    Ok(AlignmentReport {
        sigma_epsilon,
        sigma_err: bv.sqrt(),
        radial_peak1: histogram_mode(&r1),
        radial_peak2: histogram_mode(&r2),
        event_count: n,
        config: set.config,
    })
}

/// Mode of a sample from a Gaussian-smoothed histogram with Silverman's
/// bandwidth, refined by a parabola through the top three bins.
pub fn histogram_mode(x: &[f64]) -> f64 {
    let n = x.len();
    if n == 0 {
        return f64::NAN;
    }
    let mut sorted = x.to_vec();
    sorted.sort_by(f64::total_cmp);
    let (lo, hi) = (sorted[0], sorted[n - 1]);
    if hi <= lo {
        return lo;
    }
    let mean = x.iter().sum::<f64>() / n as f64;
    let sd = (x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64).sqrt();
    let iqr = sorted[(3 * n) / 4] - sorted[n / 4];
    let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
    let h = 0.9 * spread * (n as f64).powf(-0.2);
    if !(h > 0.0) {
        return mean;
    }
    let bin = h / 4.0;
    let nb = (((hi - lo) / bin).ceil() as usize).clamp(1, 100_000);
    let bin = (hi - lo) / nb as f64;
    let mut counts = vec![0.0; nb];
    for v in x {
        counts[(((v - lo) / bin) as usize).min(nb - 1)] += 1.0;
    }
    let reach = (4.0 * h / bin).ceil() as isize;
    let kernel: Vec<f64> = (-reach..=reach)
        .map(|d| {
            let z = d as f64 * bin / h;
            (-0.5 * z * z).exp()
        })
        .collect();
    let smooth: Vec<f64> = (0..nb as isize)
        .map(|i| {
            kernel
                .iter()
                .enumerate()
                .map(|(k, w)| {
                    let j = i + k as isize - reach;
                    if j >= 0 && (j as usize) < nb {
                        w * counts[j as usize]
                    } else {
                        0.0
                    }
                })
                .sum()
        })
        .collect();
    let mut best = 0;
    for (i, s) in smooth.iter().enumerate() {
        if *s > smooth[best] {
            best = i;
        }
    }
    let centre = |i: usize| lo + (i as f64 + 0.5) * bin;
    if best == 0 || best + 1 == nb {
        return centre(best);
    }
    parabolic_peak(
        [centre(best - 1), centre(best), centre(best + 1)],
        [smooth[best - 1], smooth[best], smooth[best + 1]],
    )
}

/// One measured point of a scan.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct ScanPoint {
    pub abscissa: f64,
    pub sigma_epsilon: f64,
    pub sigma_err: f64,
}

/// Quantity varied in a scan, with the value the other one is held at.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "camelCase", tag = "variable")]
pub enum ScanVariable {
    Radius {
        #[serde(rename = "deltaP0")]
        delta_p0: f64,
    },
    #[serde(rename = "deltaP0")]
    DeltaP0 { radius: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct ScalingFit {
    pub exponent: f64,
    pub exponent_err: f64,
    /// exp(intercept) of the log-log fit.
    pub prefactor: f64,
    pub points: Vec<ScanPoint>,
}

pub const MIN_SCAN_POINTS: usize = 4;
/// Smallest accepted ratio between the largest and smallest abscissa.
pub const MIN_SCAN_SPAN: f64 = 8.0;
/// The competing spread may be at most this fraction of the scanned one.
pub const PURITY_RATIO: f64 = 1.0 / 3.0;

/// Least-squares power law σ_ε ∝ x^exponent through the scan points.
///
/// The competing deviation source, evaluated at the geometric centre of the
/// scan, must stay within a third of the scanned one.
pub fn fit_scaling(points: &[ScanPoint], variable: ScanVariable, kin: &PairKinematics) -> Result<ScalingFit> {
    if points.len() < MIN_SCAN_POINTS {
        return Err(Error::domain(
            "points",
            format!("need at least {MIN_SCAN_POINTS} scan points, got {}", points.len()),
        ));
    }
    if points.iter().any(|p| !(p.abscissa > 0.0 && p.sigma_epsilon > 0.0)) {
        return Err(Error::domain("points", "abscissae and widths must be positive"));
    }
    let xs: Vec<f64> = points.iter().map(|p| p.abscissa.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.sigma_epsilon.ln()).collect();
    let (xmin, xmax) = xs.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
    if (xmax - xmin).exp() < MIN_SCAN_SPAN * (1.0 - 1e-12) {
        return Err(Error::domain(
            "points",
            format!("scan spans a factor {:.3}, need {MIN_SCAN_SPAN}", (xmax - xmin).exp()),
        ));
    }
    let centre = (0.5 * (xmin + xmax)).exp();
    let budget = |dp: f64, r: f64| -> Result<DeviationBudget> {
        deviation_budget(kin, &SourceSpectrum::with_default_energy_width(dp, kin.e0())?, r)
    };
    match variable {
        ScanVariable::Radius { delta_p0 } => {
            let b = budget(delta_p0, centre)?;
            if b.momentum_angle > PURITY_RATIO * b.diffraction_angle {
                return Err(Error::domain(
                    "momentumAngle",
                    format!(
                        "momentum spread {:.4} exceeds a third of the diffraction spread {:.4} at r = {centre:.4}",
                        b.momentum_angle, b.diffraction_angle
                    ),
                ));
            }
        }
        ScanVariable::DeltaP0 { radius } => {
            let b = budget(centre, radius)?;
            if b.diffraction_angle > PURITY_RATIO * b.momentum_angle {
                return Err(Error::domain(
                    "diffractionAngle",
                    format!(
                        "diffraction spread {:.4} exceeds a third of the momentum spread {:.4} at deltaP0 = {centre:.4}",
                        b.diffraction_angle, b.momentum_angle
                    ),
                ));
            }
        }
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rss: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| {
            let r = y - intercept - slope * x;
            r * r
        })
        .sum();
    let ols_var = rss / (n - 2.0) / sxx;
    // measurement errors carried through the same linear estimator
    let prop_var: f64 = xs
        .iter()
        .zip(points)
        .map(|(x, p)| {
            let c = (x - mx) / sxx;
            let rel = p.sigma_err / p.sigma_epsilon;
            c * c * rel * rel
        })
        .sum();
    Ok(ScalingFit {
        exponent: slope,
        exponent_err: (ols_var + prop_var).sqrt(),
        prefactor: intercept.exp(),
        points: points.to_vec(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct CrossoverRow {
    pub r: f64,
    pub sigma_epsilon: f64,
    pub sigma_err: f64,
    /// d ln σ / d ln r from neighbouring points.
    pub local_slope: f64,
    pub dominant_prediction: DominantSpread,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct CrossoverTable {
    pub rows: Vec<CrossoverRow>,
    pub predicted_radius: f64,
    /// Radius where the local slope first rises through −1/4.
    pub empirical_radius: Option<f64>,
}

pub const CROSSOVER_SLOPE: f64 = -0.25;

impl CrossoverTable {
    /// Local slope at the row nearest to `r` in log distance.
    pub fn slope_near(&self, r: f64) -> f64 {
        self.rows
            .iter()
            .min_by(|a, b| (a.r / r).ln().abs().total_cmp(&(b.r / r).ln().abs()))
            .map(|row| row.local_slope)
            .unwrap_or(f64::NAN)
    }
}

/// Locates the change from diffraction-limited to momentum-limited spread.
///
/// `points` are (r, σ_ε) measurements; they must reach from a tenth of the
/// predicted crossover radius up to ten times it.
pub fn crossover_scan(points: &[ScanPoint], budget: &DeviationBudget) -> Result<CrossoverTable> {
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| a.abscissa.total_cmp(&b.abscissa));
    if pts.len() < 3 {
        return Err(Error::domain("points", "need at least three radii"));
    }
    let rstar = budget.crossover_radius;
    let (lo, hi) = (pts[0].abscissa, pts[pts.len() - 1].abscissa);
    let slack = 1.0 + 1e-9;
    if lo > rstar / 10.0 * slack || hi < 10.0 * rstar / slack {
        return Err(Error::domain(
            "points",
            format!(
                "scan [{lo}, {hi}] must span [{}, {}]",
                rstar / 10.0,
                10.0 * rstar
            ),
        ));
    }
    if pts.iter().any(|p| !(p.abscissa > 0.0 && p.sigma_epsilon > 0.0)) {
        return Err(Error::domain("points", "radii and widths must be positive"));
    }
    let lx: Vec<f64> = pts.iter().map(|p| p.abscissa.ln()).collect();
    let ly: Vec<f64> = pts.iter().map(|p| p.sigma_epsilon.ln()).collect();
    let n = pts.len();
    let slope = |i: usize| {
        let (a, b) = if i == 0 {
            (0, 1)
        } else if i + 1 == n {
            (n - 2, n - 1)
        } else {
            (i - 1, i + 1)
        };
        (ly[b] - ly[a]) / (lx[b] - lx[a])
    };
    let slopes: Vec<f64> = (0..n).map(slope).collect();
    let mut empirical_radius = None;
    for i in 1..n {
        if slopes[i - 1] < CROSSOVER_SLOPE && slopes[i] >= CROSSOVER_SLOPE {
            let f = (CROSSOVER_SLOPE - slopes[i - 1]) / (slopes[i] - slopes[i - 1]);
            empirical_radius = Some((lx[i - 1] + f * (lx[i] - lx[i - 1])).exp());
            break;
        }
    }
    let rows = pts
        .iter()
        .zip(&slopes)
        .map(|(p, &s)| {
            // the two angles agree at r*, and diffraction falls as r^(-1/2)
            let diffraction = budget.momentum_angle * (rstar / p.abscissa).sqrt();
            CrossoverRow {
                r: p.abscissa,
                sigma_epsilon: p.sigma_epsilon,
                sigma_err: p.sigma_err,
                local_slope: s,
                dominant_prediction: if diffraction >= budget.momentum_angle {
                    DominantSpread::Diffraction
                } else {
                    DominantSpread::Momentum
                },
            }
        })
        .collect();
    Ok(CrossoverTable {
        rows,
        predicted_radius: rstar,
        empirical_radius,
    })
}

/// Samples the pair density when fragment 1 has travelled a distance r
/// (t = r/v1) and reduces the events to one scan point.
pub fn measure_at_radius(
    field: &PairAmplitudeField,
    r: f64,
    count: usize,
    seed: u64,
    grid_spec: &ShellGridSpec,
) -> Result<(ScanPoint, AlignmentReport)> {
    require_positive("r", r)?;
    let t = r / field.kin().v1();
    let set = sample_events_with(field, t, count, seed, grid_spec)?;
    let rep = alignment_report(&set)?;
    Ok((
        ScanPoint {
            abscissa: r,
            sigma_epsilon: rep.sigma_epsilon,
            sigma_err: rep.sigma_err,
        },
        rep,
    ))
}

/// Kuiper statistic V and its asymptotic p-value for samples that should be
/// uniform on [0, 1).
pub fn kuiper_test(samples: &[f64]) -> (f64, f64) {
    let mut u = samples.to_vec();
    u.sort_by(f64::total_cmp);
    let n = u.len() as f64;
    let (mut dp, mut dm): (f64, f64) = (0.0, 0.0);
    for (i, x) in u.iter().enumerate() {
        dp = dp.max((i as f64 + 1.0) / n - x);
        dm = dm.max(x - i as f64 / n);
    }
    let v = dp + dm;
    let lambda = (n.sqrt() + 0.155 + 0.24 / n.sqrt()) * v;
    let p = if lambda < 0.4 {
        1.0
    } else {
        let mut s = 0.0;
        for j in 1..=100 {
            let j2l2 = (j * j) as f64 * lambda * lambda;
            let term = 2.0 * (4.0 * j2l2 - 1.0) * (-2.0 * j2l2).exp();
            s += term;
            if term.abs() < 1e-14 {
                break;
            }
        }
        s.clamp(0.0, 1.0)
    };
    (v, p)
}

/// Pearson chi-square statistic and p-value; bins with expected count
/// below 5 are merged into their neighbour.
pub fn chi_square_test(observed: &[f64], expected: &[f64]) -> Result<(f64, f64)> {
    if observed.len() != expected.len() || observed.is_empty() {
        return Err(Error::domain("observed", "must match expected bin count"));
    }
    let mut bins = Vec::new();
    let (mut o, mut e) = (0.0, 0.0);
    for (a, b) in observed.iter().zip(expected) {
        o += a;
        e += b;
        if e >= 5.0 {
            bins.push((o, e));
            o = 0.0;
            e = 0.0;
        }
    }
    if e > 0.0 || o > 0.0 {
        match bins.last_mut() {
            Some(last) => {
                last.0 += o;
                last.1 += e;
            }
            None => bins.push((o, e)),
        }
    }
    if bins.len() < 2 {
        return Err(Error::domain("expected", "too few populated bins"));
    }
    let stat: f64 = bins.iter().map(|(o, e)| (o - e) * (o - e) / e).sum();
    let dist = ChiSquared::new((bins.len() - 1) as f64)
        .map_err(|e| Error::domain("expected", e.to_string()))?;
    Ok((stat, 1.0 - dist.cdf(stat)))
}
