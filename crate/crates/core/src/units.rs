//! Physical constants and the handful of unit conversions used at the
//! configuration boundary. Everything inside the crate is SI.

use std::f64::consts::PI;

/// Speed of light in vacuum (m/s).
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;
/// Reduced Planck constant (J s).
pub const HBAR: f64 = 1.054_571_817e-34;
/// Vacuum permittivity (F/m).
pub const EPSILON_0: f64 = 8.854_187_812_8e-12;

pub fn nm_to_m(nm: f64) -> f64 {
    nm * 1e-9
}

pub fn m_to_nm(m: f64) -> f64 {
    m * 1e9
}

pub fn thz_to_hz(thz: f64) -> f64 {
    thz * 1e12
}

/// Signed frequency in MHz to angular frequency in rad/s.
pub fn mhz_to_rad_per_s(mhz: f64) -> f64 {
    2.0 * PI * mhz * 1e6
}

/// Molecular density given per cm³ to per m³.
pub fn per_cm3_to_per_m3(n: f64) -> f64 {
    n * 1e6
}

/// Peak intensity in GW/cm² to W/m².
pub fn gw_cm2_to_w_m2(i: f64) -> f64 {
    i * 1e13
}

/// Field amplitude (V/m) from intensity (W/m²), with I = ½ε₀c|E|².
pub fn amplitude_from_intensity(intensity: f64) -> f64 {
    (2.0 * intensity / (EPSILON_0 * SPEED_OF_LIGHT)).sqrt()
}

/// Intensity (W/m²) from field amplitude (V/m).
pub fn intensity_from_amplitude(amplitude: f64) -> f64 {
    0.5 * EPSILON_0 * SPEED_OF_LIGHT * amplitude * amplitude
}

/// Wraps an angle into (−π, π].
pub fn wrap_phase(phase: f64) -> f64 {
    let mut p = phase.rem_euclid(2.0 * PI);
    if p > PI {
        p -= 2.0 * PI;
    }
    p
}
