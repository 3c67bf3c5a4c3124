use std::f64::consts::PI;

use anyhow::{bail, Result};
use momenta_core::correlation_stats::{
    alignment_report, crossover_scan, fit_scaling, measure_at_radius, sample_events_with, ScanPoint, ScanVariable,
};
use momenta_core::model::{make_kinematics, PairKinematics, SourceSpectrum, Vec3};
use momenta_core::pair_amplitude::{
    gamma_density, norm_on_shells, radial_profile, uncertainty_product, uniform_gamma_grid, PairAmplitudeField,
    ShellGridSpec, MIN_UNCERTAINTY_EVENTS,
};
use momenta_core::quadrature::separation_in_sigmas;
use momenta_core::single_particle::{
    gaussian_closed_form, propagate_numeric, track_centroid_width, GaussianPacket1D,
};
use momenta_core::stationary_phase::{deviation_budget, predict, sql_width};
use serde_json::json;

use crate::config::{ConfigError, RunConfig, ScanKind};
use crate::output::OutputDir;

/// Largest separation between quadrature and Monte Carlo accepted by `validate`.
pub const ORACLE_SIGMAS: f64 = 3.0;
/// Largest accepted |norm − 1| in `validate`.
pub const NORM_TOLERANCE: f64 = 0.01;
const DEFAULT_ORACLE_T: f64 = 4.0;

/// A validation check in `validate` did not pass. Maps to exit status 4.
#[derive(Debug)]
pub struct CheckFailed(pub String);

impl std::fmt::Display for CheckFailed {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "validation failed: {}", self.0)
    }
}

impl std::error::Error for CheckFailed {}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Command {
    Predict,
    Single,
    PairDensity,
    Sample,
    Scan,
    Validate,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Predict => "predict",
            Command::Single => "single",
            Command::PairDensity => "pair-density",
            Command::Sample => "sample",
            Command::Scan => "scan",
            Command::Validate => "validate",
        }
    }

    fn needs_seed(self) -> bool {
        matches!(self, Command::Sample | Command::Scan)
    }

    pub fn gnuplot_hints(self) -> &'static str {
        match self {
            Command::Predict => "# predict writes only summary.json",
            Command::Single => {
                "set datafile separator ','\nplot 'single.csv' using 2:3 every ::1 with lines title 'numeric', \\\n     '' using 2:4 every ::1 with points title 'closed form'"
            }
            Command::PairDensity => {
                "set datafile separator ','\nplot 'gamma-density.csv' using 1:2 every ::1 with lines title 'density(gamma)'\nplot 'radial.csv' using 1:2 every ::1 with lines title 'radial'"
            }
            Command::Sample => {
                "set datafile separator ','\nbinwidth = 0.01\nplot 'events.csv' using (binwidth*floor((pi-$7)/binwidth)):(1.0) every ::1 smooth frequency with boxes title 'epsilon'"
            }
            Command::Scan => {
                "set datafile separator ','\nset logscale xy\nplot 'scan.csv' using 1:2:3 every ::1 with yerrorbars title 'sigma_epsilon'"
            }
            Command::Validate => "# validate writes only summary.json",
        }
    }
}

/// Validated inputs shared by every command.
pub struct Setup {
    pub config: RunConfig,
    pub kin: PairKinematics,
    pub field: PairAmplitudeField,
}

/// Invalid inputs become config errors; resource failures pass through.
fn classify(e: momenta_core::Error) -> anyhow::Error {
    match e {
        momenta_core::Error::Domain { .. } => ConfigError { line: None, message: e.to_string() }.into(),
        other => other.into(),
    }
}

pub fn setup(config: &RunConfig, command: Command) -> Result<Setup> {
    if command.needs_seed() && config.seed.is_none() {
        return Err(ConfigError {
            line: None,
            message: format!("`seed` is required for `{}`", command.name()),
        }
        .into());
    }
    if command == Command::Scan && config.scan.is_none() {
        return Err(ConfigError { line: None, message: "`scan` is required for `scan`".to_string() }.into());
    }
    let config = config.resolved();
    let kin = make_kinematics(config.m1, config.m2, config.e0).map_err(classify)?;
    let field = build_field(&config, &kin, config.delta_p0).map_err(classify)?;
    Ok(Setup { config, kin, field })
}

fn build_field(config: &RunConfig, kin: &PairKinematics, delta_p0: f64) -> momenta_core::Result<PairAmplitudeField> {
    let spectrum = SourceSpectrum::new(delta_p0, config.e0, config.delta_e())?;
    match config.normalization {
        Some(n) => PairAmplitudeField::new(spectrum.with_scale(n)?, *kin, config.quadrature),
        None => PairAmplitudeField::normalized(spectrum, *kin, config.quadrature),
    }
}

fn shell_spec(config: &RunConfig) -> ShellGridSpec {
    ShellGridSpec {
        radial_cells: config.shell_grid.radial_cells,
        angular_cells: config.shell_grid.angular_cells,
        ..ShellGridSpec::default()
    }
}

fn seed(config: &RunConfig) -> u64 {
    config.seed.unwrap_or_default()
}

pub fn run(command: Command, s: &Setup, out: &OutputDir) -> Result<()> {
    match command {
        Command::Predict => run_predict(s, out),
        Command::Single => run_single(s, out),
        Command::PairDensity => run_pair_density(s, out),
        Command::Sample => run_sample(s, out),
        Command::Scan => run_scan(s, out),
        Command::Validate => run_validate(s, out),
    }
}

fn run_predict(s: &Setup, out: &OutputDir) -> Result<()> {
    let c = &s.config;
    let prediction = predict(&s.kin, c.t)?;
    let r = c.r1.unwrap_or(prediction.r1_peak);
    let budget = deviation_budget(&s.kin, s.field.spectrum(), r)?;
    out.write_json(
        "summary.json",
        &json!({
            "command": "predict",
            "config": c,
            "prediction": prediction,
            "budgetRadius": r,
            "budget": budget,
            "sqlWidth1": sql_width(c.m1, c.t)?,
            "sqlWidth2": sql_width(c.m2, c.t)?,
        }),
    )
}

/// Least-squares slope of y against x.
fn ols_slope(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    if x.len() < 2 {
        return None;
    }
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

fn run_single(s: &Setup, out: &OutputDir) -> Result<()> {
    let sc = &s.config.single;
    let packet = GaussianPacket1D::new(sc.sigma0, sc.k, sc.m, sc.r0)?;
    let mut rows = Vec::new();
    let mut times = Vec::new();
    let mut centroids = Vec::new();
    for &t in &sc.times {
        let x = packet.auto_grid(t, sc.points);
        let amps = propagate_numeric(&packet, &x, t, &s.config.quadrature)?;
        let mut max_err: f64 = 0.0;
        for (xi, a) in x.iter().zip(&amps) {
            let exact = gaussian_closed_form(&packet, *xi, t);
            max_err = max_err.max((a - exact).norm());
            rows.push(vec![t, *xi, a.norm_sqr(), exact.norm_sqr()]);
        }
        let (centroid, width) = track_centroid_width(&x, &amps)?;
        centroids.push(centroid);
        times.push(json!({
            "t": t,
            "points": x.len(),
            "maxAbsError": max_err,
            "centroid": centroid,
            "width": width,
            "predictedCentroid": packet.centroid(t),
            "predictedWidth": packet.width(t),
        }));
    }
    out.write_csv("single.csv", &["t", "x", "density", "exact_density"], rows)?;
    out.write_json(
        "summary.json",
        &json!({
            "command": "single",
            "config": s.config,
            "velocity": packet.velocity(),
            "centroidSlope": ols_slope(&sc.times, &centroids),
            "times": times,
        }),
    )
}

fn detection_radii(s: &Setup) -> Result<(f64, f64)> {
    let p = predict(&s.kin, s.config.t)?;
    Ok((s.config.r1.unwrap_or(p.r1_peak), s.config.r2.unwrap_or(p.r2_peak)))
}

fn run_pair_density(s: &Setup, out: &OutputDir) -> Result<()> {
    let c = &s.config;
    let (r1, r2) = detection_radii(s)?;
    let table = gamma_density(&s.field, r1, r2, c.t, &uniform_gamma_grid(c.gamma_cells))?;
    let centre = s.kin.v1() * c.t;
    let lo = c.radial_grid.min.unwrap_or(0.8 * centre);
    let hi = c.radial_grid.max.unwrap_or(1.2 * centre);
    if !(hi > lo) {
        return Err(ConfigError {
            line: None,
            message: format!("`radialGrid` range [{lo}, {hi}] is empty"),
        }
        .into());
    }
    let n = c.radial_grid.points;
    let r_grid: Vec<f64> = (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect();
    let radial = radial_profile(&s.field, c.t, &r_grid)?;
    let peak_sq = table.amplitude_sq.iter().cloned().fold(0.0, f64::max);
    out.write_csv(
        "gamma-density.csv",
        &["gamma", "density"],
        table.gamma_grid.iter().zip(&table.density).map(|(g, d)| vec![*g, *d]),
    )?;
    out.write_csv(
        "radial.csv",
        &["r", "density"],
        radial.r.iter().zip(&radial.density).map(|(r, d)| vec![*r, *d]),
    )?;
    out.write_json(
        "summary.json",
        &json!({
            "command": "pair-density",
            "config": c,
            "r1": r1,
            "r2": r2,
            "gammaMode": table.mode,
            "widthAboutPi": table.width_about_pi(),
            "normalization": table.normalization,
            "halfPiToPeakRatio": if peak_sq > 0.0 { table.amplitude_sq_near(PI / 2.0) / peak_sq } else { 0.0 },
            "radialPeak": radial.peak,
            "prediction": predict(&s.kin, c.t)?,
        }),
    )
}

fn run_sample(s: &Setup, out: &OutputDir) -> Result<()> {
    let c = &s.config;
    let set = sample_events_with(&s.field, c.t, c.sample_count, seed(c), &shell_spec(c))?;
    let report = alignment_report(&set)?;
    let uncertainty = if set.events.len() >= MIN_UNCERTAINTY_EVENTS {
        Some(uncertainty_product(&s.field, &set.events)?)
    } else {
        None
    };
    out.write_csv(
        "events.csv",
        &["r1", "theta1", "phi1", "r2", "theta2", "phi2", "gamma"],
        set.events
            .iter()
            .map(|e| vec![e.r1, e.dir1.theta, e.dir1.phi, e.r2, e.dir2.theta, e.dir2.phi, e.gamma]),
    )?;
    out.write_json(
        "summary.json",
        &json!({
            "command": "sample",
            "config": c,
            "report": report,
            "uncertaintyProduct": uncertainty,
        }),
    )
}

/// Log-spaced radii from r*/10 to 10·r*.
pub fn crossover_radii(rstar: f64, points: usize) -> Vec<f64> {
    (0..points)
        .map(|i| rstar * 10f64.powf(-1.0 + 2.0 * i as f64 / (points - 1) as f64))
        .collect()
}

fn run_scan(s: &Setup, out: &OutputDir) -> Result<()> {
    let c = &s.config;
    let Some(scan) = &c.scan else { bail!("no scan configured") };
    let grid = shell_spec(c);
    let point_seed = |i: usize| seed(c).wrapping_add(i as u64);
    let measure_radii = |radii: &[f64]| -> Result<Vec<ScanPoint>> {
        radii
            .iter()
            .enumerate()
            .map(|(i, &r)| Ok(measure_at_radius(&s.field, r, c.sample_count, point_seed(i), &grid)?.0))
            .collect()
    };
    let (points, analysis) = match scan.variable {
        ScanKind::Radius => {
            let points = measure_radii(&scan.values)?;
            let fit = fit_scaling(&points, ScanVariable::Radius { delta_p0: c.delta_p0 }, &s.kin)?;
            (points, json!({ "fit": fit }))
        }
        ScanKind::DeltaP0 => {
            let radius = scan.radius.unwrap_or_default();
            let points = scan
                .values
                .iter()
                .enumerate()
                .map(|(i, &dp)| {
                    let field = build_field(c, &s.kin, dp)?;
                    let p = measure_at_radius(&field, radius, c.sample_count, point_seed(i), &grid)?.0;
                    Ok(ScanPoint { abscissa: dp, ..p })
                })
                .collect::<Result<Vec<_>>>()?;
            let fit = fit_scaling(&points, ScanVariable::DeltaP0 { radius }, &s.kin)?;
            (points, json!({ "fit": fit }))
        }
        ScanKind::Crossover => {
            let budget = deviation_budget(&s.kin, s.field.spectrum(), s.kin.v1() * c.t)?;
            let points = measure_radii(&crossover_radii(budget.crossover_radius, scan.points))?;
            let table = crossover_scan(&points, &budget)?;
            (points, json!({ "crossover": table }))
        }
    };
    out.write_csv(
        "scan.csv",
        &["abscissa", "sigma_epsilon", "sigma_err"],
        points.iter().map(|p| vec![p.abscissa, p.sigma_epsilon, p.sigma_err]),
    )?;
    out.write_json(
        "summary.json",
        &json!({
            "command": "scan",
            "config": c,
            "analysis": analysis,
        }),
    )
}

fn along(dir: Vec3, len: f64) -> Vec3 {
    let n = momenta_core::model::norm(dir);
    [dir[0] * len / n, dir[1] * len / n, dir[2] * len / n]
}

fn run_validate(s: &Setup, out: &OutputDir) -> Result<()> {
    let c = &s.config;
    let v = &c.validate;
    let t = v.oracle_t.unwrap_or(DEFAULT_ORACLE_T);
    let r1 = v.oracle_r1.unwrap_or(along([0.6, -0.3, 0.7], s.kin.v1() * t));
    let r2 = v.oracle_r2.unwrap_or(along([-0.5, 0.4, -0.6], s.kin.v2() * t));
    let rc = momenta_core::model::reduced_coordinates(r1, r2, &s.kin);
    let quad = s.field.evaluate_reduced(rc.rw, rc.rho, t)?;
    let mc = s.field.mc_oracle(r1, r2, t, &c.oracle)?;
    let sigmas = separation_in_sigmas(quad.value, quad.error, mc.value, mc.std_error);
    let oracle_pass = sigmas <= ORACLE_SIGMAS;
    let grid = shell_spec(c);
    let norms = v
        .norm_times
        .iter()
        .map(|&t| Ok((t, norm_on_shells(&s.field, t, &grid)?)))
        .collect::<Result<Vec<_>>>()?;
    let norm_pass = norms.iter().all(|(_, n)| (n - 1.0).abs() <= NORM_TOLERANCE);
    out.write_json(
        "summary.json",
        &json!({
            "command": "validate",
            "config": c,
            "oracle": {
                "t": t,
                "r1": r1,
                "r2": r2,
                "quadrature": [quad.value.re, quad.value.im],
                "quadratureError": quad.error,
                "accuracyWarning": quad.accuracy_warning,
                "monteCarlo": [mc.value.re, mc.value.im],
                "monteCarloError": mc.std_error,
                "samples": mc.samples,
                "separationSigmas": sigmas,
                "pass": oracle_pass,
            },
            "norms": norms.iter().map(|(t, n)| json!({ "t": t, "norm": n })).collect::<Vec<_>>(),
            "normPass": norm_pass,
            "pass": oracle_pass && norm_pass,
        }),
    )?;
    let mut failures = Vec::new();
    if !oracle_pass {
        failures.push(format!("quadrature and Monte Carlo differ by {sigmas:.2} sigma"));
    }
    for (t, n) in &norms {
        if (n - 1.0).abs() > NORM_TOLERANCE {
            failures.push(format!("norm {n} at t = {t}"));
        }
    }
    if failures.is_empty() {
        Ok(())
    } else {
        Err(CheckFailed(failures.join("; ")).into())
    }
}
