//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any fails. Pass criterion numbers as arguments to run a subset:
//! `cargo test -p momenta-align --test acceptance -- 3 4`.

use std::f64::consts::PI;
use std::process::{Command, ExitCode};
use std::time::Instant;

use momenta_core::correlation_stats::{
    crossover_scan, fit_scaling, measure_at_radius, sample_events, ScanPoint, ScanVariable,
};
use momenta_core::model::{make_kinematics, norm, reduced_coordinates, PairKinematics, SourceSpectrum, Vec3};
use momenta_core::pair_amplitude::{
    evaluate_amplitude, gamma_density, norm_on_shells, radial_profile, uncertainty_product, uniform_gamma_grid,
    PairAmplitudeField, ShellGridSpec,
};
use momenta_core::quadrature::{separation_in_sigmas, McOracleSpec, QuadratureSpec};
use momenta_core::single_particle::{gaussian_closed_form, propagate_numeric, track_centroid_width, GaussianPacket1D};
use momenta_core::stationary_phase::deviation_budget;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = anyhow::Result<(bool, String)>;

const EVENTS: usize = 100_000;

fn kinematics() -> PairKinematics {
    make_kinematics(1.0, 1.0, 1.0).unwrap()
}

/// Default configuration with the given momentum width.
fn field(delta_p0: f64) -> PairAmplitudeField {
    let spectrum = SourceSpectrum::new(delta_p0, 1.0, 0.05).unwrap();
    PairAmplitudeField::normalized(spectrum, kinematics(), QuadratureSpec::default()).unwrap()
}

fn random_unit(rng: &mut ChaCha8Rng) -> Vec3 {
    let z: f64 = rng.random_range(-1.0..1.0);
    let phi: f64 = rng.random_range(0.0..2.0 * PI);
    let s = (1.0 - z * z).sqrt();
    [s * phi.cos(), s * phi.sin(), z]
}

fn criterion_1() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0xacc1);
    let mut ok = true;
    let mut worst: f64 = 0.0;
    let mut min_resolution = f64::INFINITY;
    for i in 0..5 {
        let m1 = rng.random_range(0.5..3.0);
        let m2 = rng.random_range(0.5..3.0);
        let e0 = rng.random_range(0.5..2.0);
        let kin = make_kinematics(m1, m2, e0)?;
        let dp = rng.random_range(0.2..0.4);
        let de = e0 * rng.random_range(0.15..0.3);
        let t = rng.random_range(2.0..6.0);
        let spectrum = SourceSpectrum::new(dp, e0, de)?;
        let f = PairAmplitudeField::normalized(spectrum, kin, QuadratureSpec::default())?;
        let u1 = random_unit(&mut rng);
        let tilt = random_unit(&mut rng);
        let u2: Vec3 = std::array::from_fn(|j| -u1[j] + 0.4 * tilt[j]);
        let r1: Vec3 = u1.map(|c| c * kin.v1() * t * rng.random_range(0.5..1.2));
        let scale2 = kin.v2() * t * rng.random_range(0.5..1.2) / norm(u2);
        let r2: Vec3 = u2.map(|c| c * scale2);
        let rc = reduced_coordinates(r1, r2, &kin);
        let q = f.evaluate_reduced(rc.rw, rc.rho, t)?;
        let direct = evaluate_amplitude(&f, r1, r2, t)?;
        let spec = McOracleSpec {
            sample_count: 1_000_000,
            seed: 1000 + i,
            batches: 50,
        };
        let mc = f.mc_oracle(r1, r2, t, &spec)?;
        let sep = separation_in_sigmas(direct, q.error, mc.value, mc.std_error);
        worst = worst.max(sep);
        min_resolution = min_resolution.min(direct.norm() / mc.std_error);
        ok &= sep <= 3.0;
    }
    Ok((
        ok,
        format!("worst separation {worst:.2} sigma (limit 3); smallest |psi|/sigma_MC {min_resolution:.1}"),
    ))
}

fn criterion_2() -> Outcome {
    let packet = GaussianPacket1D::new(1.0, 1.0, 1.0, 0.0)?;
    let times = [0.0, 1.0, 10.0, 100.0];
    let mut max_err: f64 = 0.0;
    let mut centroids = Vec::new();
    for &t in &times {
        let x = packet.auto_grid(t, 4096);
        anyhow::ensure!(x.len() == 4096, "grid has {} points", x.len());
        let amps = propagate_numeric(&packet, &x, t, &QuadratureSpec::default())?;
        for (xi, a) in x.iter().zip(&amps) {
            max_err = max_err.max((a - gaussian_closed_form(&packet, *xi, t)).norm());
        }
        centroids.push(track_centroid_width(&x, &amps)?.0);
    }
    let n = times.len() as f64;
    let (mt, mc) = (times.iter().sum::<f64>() / n, centroids.iter().sum::<f64>() / n);
    let sxy: f64 = times.iter().zip(&centroids).map(|(t, c)| (t - mt) * (c - mc)).sum();
    let sxx: f64 = times.iter().map(|t| (t - mt) * (t - mt)).sum();
    let slope = sxy / sxx;
    let ok = max_err < 1e-6 && (slope - 1.0).abs() <= 1e-3;
    Ok((ok, format!("max abs error {max_err:.2e} (limit 1e-6); centroid slope {slope:.8} (1 within 0.1%)")))
}

fn criterion_3() -> Outcome {
    let f = field(0.05);
    let table = gamma_density(&f, 1000.0, 1000.0, 1000.0, &uniform_gamma_grid(512))?;
    let peak = table.amplitude_sq.iter().cloned().fold(0.0, f64::max);
    let offset = (table.mode - PI).abs();
    let ratio = table.amplitude_sq_near(PI / 2.0) / peak;
    let ok = offset <= 0.007 && ratio <= 1e-3;
    Ok((ok, format!("mode offset {offset:.2e} rad (limit 0.007); density(pi/2)/peak {ratio:.2e} (limit 1e-3)")))
}

fn criterion_4() -> Outcome {
    let f = field(0.05);
    let v = f.kin().v1();
    let mut ok = true;
    let mut parts = Vec::new();
    for t in [500.0, 1000.0] {
        let grid: Vec<f64> = (0..201).map(|i| v * t * (0.8 + 0.4 * i as f64 / 200.0)).collect();
        let prof = radial_profile(&f, t, &grid)?;
        let rel = (prof.peak / (v * t) - 1.0).abs();
        ok &= rel <= 0.02;
        parts.push(format!("t={t}: peak {:.2} vs {:.0} ({:.2}%)", prof.peak, v * t, 100.0 * rel));
    }
    Ok((ok, format!("{} (limit 2%)", parts.join(", "))))
}

fn radius_scan(f: &PairAmplitudeField, radii: &[f64], seed: u64) -> anyhow::Result<Vec<ScanPoint>> {
    radii
        .iter()
        .enumerate()
        .map(|(i, &r)| Ok(measure_at_radius(f, r, EVENTS, seed + i as u64, &ShellGridSpec::default())?.0))
        .collect()
}

fn sigmas(points: &[ScanPoint]) -> String {
    points
        .iter()
        .map(|p| format!("{:.4}", p.sigma_epsilon))
        .collect::<Vec<_>>()
        .join(", ")
}

fn criterion_5() -> Outcome {
    let f = field(0.02);
    let points = radius_scan(&f, &[50.0, 100.0, 200.0, 400.0], 500)?;
    let fit = fit_scaling(&points, ScanVariable::Radius { delta_p0: 0.02 }, f.kin())?;
    let ok = (fit.exponent + 0.5).abs() <= 0.1;
    Ok((
        ok,
        format!(
            "exponent {:.3} +- {:.3} (required -0.5 +- 0.1); sigma_eps [{}]",
            fit.exponent,
            fit.exponent_err,
            sigmas(&points)
        ),
    ))
}

fn criterion_6() -> Outcome {
    let kin = kinematics();
    let values = [0.05, 0.1, 0.2, 0.4];
    let points = values
        .iter()
        .enumerate()
        .map(|(i, &dp)| {
            let p = measure_at_radius(&field(dp), 4000.0, EVENTS, 600 + i as u64, &ShellGridSpec::default())?.0;
            Ok(ScanPoint { abscissa: dp, ..p })
        })
        .collect::<anyhow::Result<Vec<_>>>()?;
    let fit = fit_scaling(&points, ScanVariable::DeltaP0 { radius: 4000.0 }, &kin)?;
    let at = points[2].sigma_epsilon;
    let ok = (fit.exponent - 1.0).abs() <= 0.2 && (0.1..=0.4).contains(&at);
    Ok((
        ok,
        format!(
            "exponent {:.3} +- {:.3} (required 1 +- 0.2); sigma_eps(0.2) {at:.4} (within 2x of 0.2)",
            fit.exponent, fit.exponent_err
        ),
    ))
}

fn criterion_7() -> Outcome {
    let f = field(0.2);
    let budget = deviation_budget(f.kin(), f.spectrum(), 1.0)?;
    let rstar = budget.crossover_radius;
    let radii: Vec<f64> = (0..9).map(|k| rstar * 10f64.powf((k as f64 - 4.0) / 4.0)).collect();
    let points = radius_scan(&f, &radii, 700)?;
    let table = crossover_scan(&points, &budget)?;
    let (near, far) = (table.slope_near(rstar / 10.0), table.slope_near(10.0 * rstar));
    let factor = table.empirical_radius.map(|r| (r / rstar).max(rstar / r));
    let ok = factor.is_some_and(|x| x <= 3.0) && near <= -0.35 && far >= -0.15;
    Ok((
        ok,
        format!(
            "empirical r* {} vs predicted {rstar:.1} (within 3x); slope {near:.3} at r*/10 (<= -0.35), {far:.3} at 10r* (>= -0.15)",
            table.empirical_radius.map_or("none".to_string(), |r| format!("{r:.1}"))
        ),
    ))
}

fn criterion_8() -> Outcome {
    let f = field(0.05);
    let norms = [500.0, 1000.0, 2000.0]
        .iter()
        .map(|&t| norm_on_shells(&f, t, &ShellGridSpec::default()))
        .collect::<Result<Vec<_>, _>>()?;
    let (lo, hi) = norms.iter().fold((f64::INFINITY, 0.0f64), |(a, b), &n| (a.min(n), b.max(n)));
    let set = sample_events(&f, 1000.0, EVENTS, 800)?;
    let product = uncertainty_product(&f, &set.events)?;
    let ok = hi / lo - 1.0 <= 0.01 && product >= 0.95;
    Ok((
        ok,
        format!(
            "norms [{}] vary by {:.3}% (limit 1%); uncertainty product {product:.3} (>= 0.95)",
            norms.iter().map(|n| format!("{n:.5}")).collect::<Vec<_>>().join(", "),
            100.0 * (hi / lo - 1.0)
        ),
    ))
}

fn criterion_9() -> Outcome {
    let dir = tempfile::tempdir()?;
    let cfg = dir.path().join("config.json");
    std::fs::write(&cfg, r#"{"t": 1000, "sampleCount": 50000, "seed": 9}"#)?;
    let mut files = Vec::new();
    for threads in ["1", "2", "4"] {
        let out = dir.path().join(format!("out{threads}"));
        let status = Command::new(env!("CARGO_BIN_EXE_momenta-align"))
            .args(["sample", "--config"])
            .arg(&cfg)
            .arg("--out")
            .arg(&out)
            .args(["--threads", threads])
            .status()?;
        anyhow::ensure!(status.success(), "sample with {threads} threads exited with {status}");
        files.push((std::fs::read(out.join("events.csv"))?, std::fs::read(out.join("summary.json"))?));
    }
    let ok = files.windows(2).all(|w| w[0] == w[1]);
    Ok((ok, "events.csv and summary.json compared across --threads 1, 2, 4".to_string()))
}

fn main() -> ExitCode {
    let criteria: [fn() -> Outcome; 9] = [
        criterion_1,
        criterion_2,
        criterion_3,
        criterion_4,
        criterion_5,
        criterion_6,
        criterion_7,
        criterion_8,
        criterion_9,
    ];
    let selected: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (i, run) in criteria.iter().enumerate() {
        let n = i + 1;
        if !selected.is_empty() && !selected.contains(&n) {
            continue;
        }
        let start = Instant::now();
        let (ok, detail) = match run() {
            Ok(r) => r,
            Err(e) => (false, format!("error: {e:#}")),
        };
        if !ok {
            failed += 1;
        }
        println!(
            "criterion {n}: {} ({:.1} s) {detail}",
            if ok { "PASS" } else { "FAIL" },
            start.elapsed().as_secs_f64()
        );
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
