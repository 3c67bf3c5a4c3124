//! Physical quantities, coordinates and the source-spectrum model.
//!
//! Everything is expressed in natural units with ħ = 1, so Planck's constant
//! is h = 2π. Masses, energies, momenta, lengths and times are plain `f64`
//! values in those units.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{require_positive, Error, Result};

/// Reduced Planck constant.
pub const HBAR: f64 = 1.0;
/// Planck constant, h = 2πħ.
pub const PLANCK_H: f64 = 2.0 * PI * HBAR;

/// Relative energy width used when none is given.
pub const DEFAULT_RELATIVE_ENERGY_WIDTH: f64 = 0.05;

/// The unit system. Only the natural convention exists; the type makes the
/// choice explicit wherever a summary reports it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct UnitsConvention {
    pub hbar: f64,
    pub h: f64,
}

impl Default for UnitsConvention {
    fn default() -> Self {
        UnitsConvention {
            hbar: HBAR,
            h: PLANCK_H,
        }
    }
}

pub type Vec3 = [f64; 3];

pub fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub fn cross(a: Vec3, b: Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

pub fn norm(a: Vec3) -> f64 {
    dot(a, a).sqrt()
}

pub fn scale(a: Vec3, s: f64) -> Vec3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

pub fn add(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

pub fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

/// Angle between two vectors in [0, π]; zero if either vector vanishes.
///
/// Uses `atan2(|a×b|, a·b)`, which keeps full precision near 0 and π where
/// `acos` of the cosine loses half the digits.
pub fn angle_between(a: Vec3, b: Vec3) -> f64 {
    if norm(a) == 0.0 || norm(b) == 0.0 {
        return 0.0;
    }
    norm(cross(a, b)).atan2(dot(a, b))
}

/// Masses, energy release and the derived two-body quantities of the decay.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PairKinematics {
    m1: f64,
    m2: f64,
    total_mass: f64,
    reduced_mass: f64,
    e0: f64,
    p0: f64,
    v1: f64,
    v2: f64,
}

/// Builds the nonrelativistic two-body kinematics for masses `m1`, `m2` and
/// released energy `e0`: μ = m1·m2/(m1+m2), p0 = √(2μE0), v_j = p0/m_j.
pub fn make_kinematics(m1: f64, m2: f64, e0: f64) -> Result<PairKinematics> {
    require_positive("m1", m1)?;
    require_positive("m2", m2)?;
    require_positive("E0", e0)?;
    let total_mass = m1 + m2;
    let reduced_mass = m1 * m2 / total_mass;
    let p0 = (2.0 * reduced_mass * e0).sqrt();
    Ok(PairKinematics {
        m1,
        m2,
        total_mass,
        reduced_mass,
        e0,
        p0,
        v1: p0 / m1,
        v2: p0 / m2,
    })
}

impl PairKinematics {
    pub fn m1(&self) -> f64 {
        self.m1
    }
    pub fn m2(&self) -> f64 {
        self.m2
    }
    pub fn total_mass(&self) -> f64 {
        self.total_mass
    }
    pub fn reduced_mass(&self) -> f64 {
        self.reduced_mass
    }
    pub fn e0(&self) -> f64 {
        self.e0
    }
    /// Peak fragment momentum magnitude, √(2μE0).
    pub fn p0(&self) -> f64 {
        self.p0
    }
    pub fn v1(&self) -> f64 {
        self.v1
    }
    pub fn v2(&self) -> f64 {
        self.v2
    }

    /// Kinetic energy p²/(2m1) of the first fragment.
    pub fn energy1(&self, p: f64) -> f64 {
        p * p / (2.0 * self.m1)
    }

    /// Kinetic energy p²/(2m2) of the second fragment.
    pub fn energy2(&self, p: f64) -> f64 {
        p * p / (2.0 * self.m2)
    }
}

/// Momentum/energy amplitude F(P, E) of the decaying system.
///
/// F(P, E) = N·exp(−|P|²/(2Δp₀²))·exp(−(E−E0)²/(2ΔE²)) for E ≥ 0 and zero
/// below. F is real and nonnegative, so its phase is identically zero and
/// the source sits at the coordinate origin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SourceSpectrum {
    delta_p0: f64,
    e0: f64,
    delta_e: f64,
    scale: f64,
}

impl SourceSpectrum {
    pub fn new(delta_p0: f64, e0: f64, delta_e: f64) -> Result<Self> {
        require_positive("deltaP0", delta_p0)?;
        require_positive("E0", e0)?;
        require_positive("deltaE", delta_e)?;
        Ok(SourceSpectrum {
            delta_p0,
            e0,
            delta_e,
            scale: 1.0,
        })
    }

    /// Spectrum with ΔE = 0.05·E0.
    pub fn with_default_energy_width(delta_p0: f64, e0: f64) -> Result<Self> {
        Self::new(delta_p0, e0, DEFAULT_RELATIVE_ENERGY_WIDTH * e0)
    }

    /// Same shape, normalization constant replaced by `scale`.
    ///
    /// A zero scale gives the zero spectrum.
    pub fn with_scale(self, scale: f64) -> Result<Self> {
        if !(scale.is_finite() && scale >= 0.0) {
            return Err(Error::domain("scale", format!("must be finite and >= 0, got {scale}")));
        }
        Ok(SourceSpectrum { scale, ..self })
    }

    pub fn delta_p0(&self) -> f64 {
        self.delta_p0
    }
    pub fn e0(&self) -> f64 {
        self.e0
    }
    pub fn delta_e(&self) -> f64 {
        self.delta_e
    }
    pub fn scale(&self) -> f64 {
        self.scale
    }
    pub fn is_zero(&self) -> bool {
        self.scale == 0.0
    }

    /// exp(−P²/(2Δp₀²)), depending on the total momentum only through |P|.
    pub fn momentum_factor(&self, p: f64) -> f64 {
        let x = p / self.delta_p0;
        (-0.5 * x * x).exp()
    }

    /// exp(−(E−E0)²/(2ΔE²)) for E ≥ 0, zero otherwise.
    pub fn energy_factor(&self, e: f64) -> f64 {
        if e < 0.0 {
            return 0.0;
        }
        let x = (e - self.e0) / self.delta_e;
        (-0.5 * x * x).exp()
    }

    pub fn amplitude(&self, p: f64, e: f64) -> f64 {
        self.scale * self.momentum_factor(p) * self.energy_factor(e)
    }
}

/// Direction on the unit sphere, θ ∈ [0, π], φ ∈ [0, 2π).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SphericalDirection {
    pub theta: f64,
    pub phi: f64,
}

impl SphericalDirection {
    pub fn new(theta: f64, phi: f64) -> Result<Self> {
        if !(0.0..=PI).contains(&theta) {
            return Err(Error::domain("theta", format!("must lie in [0, π], got {theta}")));
        }
        if !(0.0..2.0 * PI).contains(&phi) {
            return Err(Error::domain("phi", format!("must lie in [0, 2π), got {phi}")));
        }
        Ok(SphericalDirection { theta, phi })
    }

    /// Direction of a nonzero vector; the zero vector maps to the north pole.
    pub fn from_vector(v: Vec3) -> Self {
        let r = norm(v);
        if r == 0.0 {
            return SphericalDirection { theta: 0.0, phi: 0.0 };
        }
        let rho = v[0].hypot(v[1]);
        let theta = rho.atan2(v[2]);
        let mut phi = v[1].atan2(v[0]);
        if phi < 0.0 {
            phi += 2.0 * PI;
        }
        if phi >= 2.0 * PI {
            phi = 0.0;
        }
        SphericalDirection { theta, phi }
    }

    pub fn unit_vector(&self) -> Vec3 {
        let (st, ct) = self.theta.sin_cos();
        let (sp, cp) = self.phi.sin_cos();
        [st * cp, st * sp, ct]
    }
}

/// cos ξ between two directions from their polar and azimuthal angles:
/// cosθ·cosθ′ + sinθ·sinθ′·cos(φ−φ′).
pub fn direction_cosine(a: SphericalDirection, b: SphericalDirection) -> f64 {
    a.theta.cos() * b.theta.cos() + a.theta.sin() * b.theta.sin() * (a.phi - b.phi).cos()
}

/// Opening angle γ ∈ [0, π] between two directions.
pub fn opening_angle(d1: SphericalDirection, d2: SphericalDirection) -> f64 {
    angle_between(d1.unit_vector(), d2.unit_vector())
}

/// Mass-weighted centre |m1·r1 + m2·r2|/M, separation |r1 − r2| and opening
/// angle of a pair of positions. The two-particle plane-wave phase splits
/// exactly into P·R_w + k·ρ with P = p1 + p2 and k = (m2·p1 − m1·p2)/M.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ReducedCoordinates {
    pub rw: f64,
    pub rho: f64,
    pub gamma: f64,
}

pub fn reduced_coordinates(r1: Vec3, r2: Vec3, kin: &PairKinematics) -> ReducedCoordinates {
    let m = kin.total_mass();
    let centre = scale(add(scale(r1, kin.m1()), scale(r2, kin.m2())), 1.0 / m);
    ReducedCoordinates {
        rw: norm(centre),
        rho: norm(sub(r1, r2)),
        gamma: angle_between(r1, r2),
    }
}

impl ReducedCoordinates {
    /// Reduced coordinates from the two radii and the opening angle.
    ///
    /// Written with half-angle forms so that R_w stays accurate near γ = π
    /// and ρ near γ = 0.
    pub fn from_radii(r1: f64, r2: f64, gamma: f64, kin: &PairKinematics) -> Self {
        let (m1, m2, m) = (kin.m1(), kin.m2(), kin.total_mass());
        let (s, c) = (0.5 * gamma).sin_cos();
        let d = m1 * r1 - m2 * r2;
        let rw = (d * d + 4.0 * m1 * m2 * r1 * r2 * c * c).max(0.0).sqrt() / m;
        let e = r1 - r2;
        let rho = (e * e + 4.0 * r1 * r2 * s * s).max(0.0).sqrt();
        let gamma = if r1 == 0.0 || r2 == 0.0 { 0.0 } else { gamma };
        ReducedCoordinates { rw, rho, gamma }
    }
}

/// Angles ξ_j between each fragment's momentum and its position vector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AlignmentAngles {
    pub xi1: f64,
    pub xi2: f64,
}

impl AlignmentAngles {
    pub fn new(
        p1: SphericalDirection,
        r1: SphericalDirection,
        p2: SphericalDirection,
        r2: SphericalDirection,
    ) -> Self {
        AlignmentAngles {
            xi1: opening_angle(p1, r1),
            xi2: opening_angle(p2, r2),
        }
    }
}
