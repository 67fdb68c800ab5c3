//! Unit conversions at the type boundary. Everything past this module is SI.

use std::f64::consts::PI;

/// Speed of light in vacuum (m/s).
pub const C: f64 = 299_792_458.0;

pub fn nm_to_m(nm: f64) -> f64 {
    nm * 1e-9
}

/// Vacuum wavelength (nm) to angular frequency (rad/s).
pub fn wavelength_nm_to_omega(nm: f64) -> f64 {
    2.0 * PI * C / nm_to_m(nm)
}

/// Angular frequency (rad/s) to vacuum wavelength (nm).
pub fn omega_to_wavelength_nm(omega: f64) -> f64 {
    2.0 * PI * C / omega * 1e9
}

/// Converts a small wavelength interval around `center_nm` into an angular-frequency interval.
pub fn bandwidth_nm_to_omega(center_nm: f64, width_nm: f64) -> f64 {
    let lam = nm_to_m(center_nm);
    2.0 * PI * C * nm_to_m(width_nm) / (lam * lam)
}

/// ps/(km·nm²) to s/m³.
pub fn dispersion_slope_to_si(ps_per_km_nm2: f64) -> f64 {
    ps_per_km_nm2 * 1e-12 / (1e3 * 1e-18)
}

/// ps/(nm·km) to s/m².
pub fn dispersion_to_si(ps_per_nm_km: f64) -> f64 {
    ps_per_nm_km * 1e-12 / (1e-9 * 1e3)
}

/// 1/(W·km) to 1/(W·m).
pub fn gamma_to_si(per_w_km: f64) -> f64 {
    per_w_km * 1e-3
}
