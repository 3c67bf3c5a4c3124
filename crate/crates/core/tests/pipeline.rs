use std::f64::consts::PI;

use momenta_core::correlation_stats::{alignment_report, sample_events};
use momenta_core::model::{make_kinematics, SourceSpectrum};
use momenta_core::pair_amplitude::{norm_on_shells, PairAmplitudeField, ShellGridSpec};
use momenta_core::quadrature::QuadratureSpec;
use momenta_core::stationary_phase::predict;
use num_complex::Complex64;

fn field(m1: f64, m2: f64, dp: f64, de: f64) -> PairAmplitudeField {
    let kin = make_kinematics(m1, m2, 1.0).unwrap();
    let spectrum = SourceSpectrum::new(dp, 1.0, de).unwrap();
    PairAmplitudeField::normalized(spectrum, kin, QuadratureSpec::default()).unwrap()
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-4 {
        1.0 - x * x / 6.0
    } else {
        x.sin() / x
    }
}

/// Composite Simpson weights on n (odd) nodes over [a, b].
fn simpson(a: f64, b: f64, n: usize) -> Vec<(f64, f64)> {
    let h = (b - a) / (n - 1) as f64;
    (0..n)
        .map(|i| {
            let w = if i == 0 || i == n - 1 {
                1.0
            } else if i % 2 == 1 {
                4.0
            } else {
                2.0
            };
            (a + h * i as f64, w * h / 3.0)
        })
        .collect()
}

/// Brute-force reduced amplitude on a fixed dense grid, independent of the
/// library's window and spacing logic.
fn brute_force(f: &PairAmplitudeField, rw: f64, rho: f64, t: f64) -> Complex64 {
    let kin = f.kin();
    let s = f.spectrum();
    let (m, mu) = (kin.total_mass(), kin.reduced_mass());
    let p_nodes = simpson(0.0, 10.0 * s.delta_p0(), 801);
    let k_nodes = simpson(0.0, (2.0 * mu * (s.e0() + 10.0 * s.delta_e())).sqrt(), 2001);
    let mut sum = Complex64::new(0.0, 0.0);
    for &(p, wp) in &p_nodes {
        for &(k, wk) in &k_nodes {
            let e = p * p / (2.0 * m) + k * k / (2.0 * mu);
            let a = s.amplitude(p, e) * sinc(p * rw) * sinc(k * rho) * p * p * k * k * wp * wk;
            sum += Complex64::from_polar(a, -e * t);
        }
    }
    sum * (4.0 * PI).powi(2)
}

#[test]
fn reduced_amplitude_matches_brute_force_grid() {
    let f = field(1.0, 2.0, 0.3, 0.2);
    for (rw, rho, t) in [(0.0, 0.0, 0.5), (1.5, 2.0, 2.0), (0.7, 4.5, 5.0)] {
        let q = f.evaluate_reduced(rw, rho, t).unwrap();
        let b = brute_force(&f, rw, rho, t);
        assert!(
            (q.value - b).norm() <= 1e-6 * b.norm().max(1e-12),
            "rw={rw} rho={rho} t={t}: {:?} vs {b:?}",
            q.value
        );
    }
}

#[test]
fn unequal_masses_land_on_their_own_shells() {
    let f = field(1.0, 3.0, 0.1, 0.05);
    let t = 400.0;
    let set = sample_events(&f, t, 20_000, 21).unwrap();
    let rep = alignment_report(&set).unwrap();
    let p = predict(f.kin(), t).unwrap();
    assert!((rep.radial_peak1 / p.r1_peak - 1.0).abs() < 0.02, "{rep:?} {p:?}");
    assert!((rep.radial_peak2 / p.r2_peak - 1.0).abs() < 0.02, "{rep:?} {p:?}");
    assert!(set.events.iter().all(|e| (e.gamma + e.epsilon - PI).abs() < 1e-12));
}

#[test]
fn probability_is_conserved_for_unequal_masses() {
    let f = field(2.0, 0.5, 0.1, 0.05);
    assert!((f.total_probability().unwrap() - 1.0).abs() < 1e-9);
    for t in [150.0, 600.0] {
        let n = norm_on_shells(&f, t, &ShellGridSpec::default()).unwrap();
        assert!((n - 1.0).abs() < 0.01, "t={t}: {n}");
    }
}
