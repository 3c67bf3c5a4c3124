//! Leading-order predictions for where the pair density peaks and how far it
//! spreads around that point.

use std::f64::consts::PI;

use serde::Serialize;

use crate::error::{require_positive, Result};
use crate::model::{PairKinematics, SourceSpectrum, PLANCK_H};

/// Peak location of the pair density at a fixed time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct StationaryPrediction {
    /// Angle between each momentum and the matching position; both vanish.
    pub xi1: f64,
    pub xi2: f64,
    pub r1_peak: f64,
    pub r2_peak: f64,
    /// Opening angle between the two position vectors.
    pub gamma_peak: f64,
    pub p1_mag: f64,
    pub p2_mag: f64,
}

/// Fragments recede back to back, each at its own classical speed.
pub fn predict(kin: &PairKinematics, t: f64) -> Result<StationaryPrediction> {
    require_positive("t", t)?;
    Ok(StationaryPrediction {
        xi1: 0.0,
        xi2: 0.0,
        r1_peak: kin.v1() * t,
        r2_peak: kin.v2() * t,
        gamma_peak: PI,
        p1_mag: kin.p0(),
        p2_mag: kin.p0(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum DominantSpread {
    Diffraction,
    Momentum,
}

/// Order-of-magnitude angular spreads at a given distance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct DeviationBudget {
    /// √(λ/r) with λ = h/p0.
    pub diffraction_angle: f64,
    /// Δp₀/p0.
    pub momentum_angle: f64,
    /// h·p0/Δp₀², where the two angles are equal.
    pub crossover_radius: f64,
    pub dominant: DominantSpread,
}

pub fn deviation_budget(kin: &PairKinematics, spectrum: &SourceSpectrum, r: f64) -> Result<DeviationBudget> {
    require_positive("r", r)?;
    let p0 = kin.p0();
    let dp = spectrum.delta_p0();
    let diffraction_angle = (PLANCK_H / (p0 * r)).sqrt();
    let momentum_angle = dp / p0;
    Ok(DeviationBudget {
        diffraction_angle,
        momentum_angle,
        crossover_radius: PLANCK_H * p0 / (dp * dp),
        dominant: if diffraction_angle >= momentum_angle {
            DominantSpread::Diffraction
        } else {
            DominantSpread::Momentum
        },
    })
}

/// √(h·t/m), the standard-quantum-limit length scale. Only its order of
/// magnitude is meaningful.
pub fn sql_width(m: f64, t: f64) -> Result<f64> {
    require_positive("m", m)?;
    require_positive("t", t)?;
    Ok((PLANCK_H * t / m).sqrt())
}
