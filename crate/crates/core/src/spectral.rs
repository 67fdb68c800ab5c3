//! Joint spectral function of an N-stage fiber nonlinear interferometer.
//!
//! The interferometer is a chain of identical dispersion-shifted fibers (the
//! four-wave-mixing media) separated by identical lengths of standard
//! single-mode fiber (the linear dispersive spacers). The joint spectral
//! amplitude is the product of the pump envelope, the single-fiber phase
//! matching function and the multi-stage interference factor
//! `H(θ) = e^{j(N-1)θ} sin(Nθ)/sin(θ)`.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{config_err, NliError, Result};
use crate::units::{self, C};

/// How a quoted pump FWHM maps onto the `σ_p` of the pump envelope.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BandwidthConvention {
    /// Pump amplitude spectrum `exp(-δ²/2σ²)`; the quoted FWHM is that of its
    /// power spectrum, so `σ = Δω / (2√ln2)`. The pair envelope
    /// `exp(-ν₊²/4σ²)` is then the autoconvolution of the pump amplitude.
    #[default]
    Amplitude,
    /// `σ` is the standard deviation of a Gaussian power spectrum with the
    /// quoted FWHM: `σ = Δω / (2√(2 ln2))`.
    Intensity,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PumpSpec {
    pub center_wavelength_nm: f64,
    pub fwhm_bandwidth_nm: f64,
    pub peak_power_w: f64,
    pub average_power_w: f64,
    pub repetition_rate_mhz: f64,
    #[serde(default)]
    pub bandwidth_convention: BandwidthConvention,
}

impl Default for PumpSpec {
    fn default() -> Self {
        Self {
            center_wavelength_nm: 1548.8,
            fwhm_bandwidth_nm: 1.0,
            peak_power_w: 0.35,
            average_power_w: 50e-6,
            repetition_rate_mhz: 36.8,
            bandwidth_convention: BandwidthConvention::Amplitude,
        }
    }
}

impl PumpSpec {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("center_wavelength_nm", self.center_wavelength_nm),
            ("fwhm_bandwidth_nm", self.fwhm_bandwidth_nm),
            ("peak_power_w", self.peak_power_w),
            ("average_power_w", self.average_power_w),
            ("repetition_rate_mhz", self.repetition_rate_mhz),
        ];
        for (name, v) in fields {
            if !(v.is_finite() && v > 0.0) {
                return Err(config_err(format!("pump.{name} must be finite and > 0, got {v}")));
            }
        }
        if self.fwhm_bandwidth_nm / self.center_wavelength_nm > 0.05 {
            return Err(config_err(
                "pump bandwidth exceeds 5% of the center wavelength",
            ));
        }
        Ok(())
    }

    pub fn center_omega(&self) -> f64 {
        units::wavelength_nm_to_omega(self.center_wavelength_nm)
    }

    pub fn center_wavelength_m(&self) -> f64 {
        units::nm_to_m(self.center_wavelength_nm)
    }

    /// `σ_p` (rad/s) of the pair envelope `exp[-(ω_s+ω_i-2ω_p0)²/4σ_p²]`.
    pub fn sigma_omega(&self) -> f64 {
        let dw = units::bandwidth_nm_to_omega(self.center_wavelength_nm, self.fwhm_bandwidth_nm);
        let ln2 = std::f64::consts::LN_2;
        match self.bandwidth_convention {
            BandwidthConvention::Amplitude => dw / (2.0 * ln2.sqrt()),
            BandwidthConvention::Intensity => dw / (2.0 * (2.0 * ln2).sqrt()),
        }
    }
}

/// Dispersion-shifted fiber: the nonlinear medium of each stage.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DsfSpec {
    pub length_m: f64,
    pub zero_dispersion_wavelength_nm: f64,
    /// ps/(km·nm²)
    pub dispersion_slope: f64,
    /// 1/(W·km)
    pub nonlinear_coefficient: f64,
}

impl Default for DsfSpec {
    fn default() -> Self {
        Self {
            length_m: 150.0,
            zero_dispersion_wavelength_nm: 1548.5,
            dispersion_slope: 0.075,
            nonlinear_coefficient: 2.0,
        }
    }
}

impl DsfSpec {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("length_m", self.length_m),
            ("zero_dispersion_wavelength_nm", self.zero_dispersion_wavelength_nm),
            ("dispersion_slope", self.dispersion_slope),
            ("nonlinear_coefficient", self.nonlinear_coefficient),
        ];
        for (name, v) in fields {
            if !(v.is_finite() && v > 0.0) {
                return Err(config_err(format!("dsf.{name} must be finite and > 0, got {v}")));
            }
        }
        Ok(())
    }

    /// Second-order dispersion `k⁽²⁾ = λ_p0²/(2πc)·D_slope·(λ_p0 − λ₀)` in s²/m.
    pub fn k2(&self, pump: &PumpSpec) -> f64 {
        let lp = pump.center_wavelength_m();
        let l0 = units::nm_to_m(self.zero_dispersion_wavelength_nm);
        lp * lp / (2.0 * PI * C) * units::dispersion_slope_to_si(self.dispersion_slope) * (lp - l0)
    }
}

/// Standard single-mode fiber spacer between stages.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SmfSpec {
    pub length_m: f64,
    /// ps/(nm·km)
    pub dispersion: f64,
}

impl Default for SmfSpec {
    fn default() -> Self {
        Self {
            length_m: 20.0,
            dispersion: 17.0,
        }
    }
}

impl SmfSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.length_m.is_finite() && self.length_m >= 0.0) {
            return Err(config_err(format!("smf.length_m must be >= 0, got {}", self.length_m)));
        }
        if !self.dispersion.is_finite() || self.dispersion == 0.0 {
            return Err(config_err("smf.dispersion must be finite and nonzero"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ThetaMode {
    /// Phase set by the linear spacer alone.
    #[default]
    Approximate,
    /// Spacer phase plus the phase mismatch accumulated in one nonlinear fiber.
    Exact,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NliConfig {
    pub stages: u32,
    pub dsf: DsfSpec,
    pub smf: SmfSpec,
    pub pump: PumpSpec,
    pub theta_mode: ThetaMode,
}

impl Default for NliConfig {
    fn default() -> Self {
        Self {
            stages: 3,
            dsf: DsfSpec::default(),
            smf: SmfSpec::default(),
            pump: PumpSpec::default(),
            theta_mode: ThetaMode::Approximate,
        }
    }
}

impl NliConfig {
    pub fn validate(&self) -> Result<()> {
        if self.stages < 1 {
            return Err(config_err("nli.stages must be >= 1"));
        }
        self.dsf.validate()?;
        self.smf.validate()?;
        self.pump.validate()
    }
}

/// Signal × idler angular-frequency grid. Axes are uniform and strictly increasing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequencyGrid {
    signal_omega: Vec<f64>,
    idler_omega: Vec<f64>,
}

impl FrequencyGrid {
    pub fn new(signal_omega: Vec<f64>, idler_omega: Vec<f64>) -> Result<Self> {
        check_axis("signal", &signal_omega)?;
        check_axis("idler", &idler_omega)?;
        Ok(Self {
            signal_omega,
            idler_omega,
        })
    }

    /// Square grid uniform in ω whose end points sit at the given wavelengths.
    pub fn from_wavelength_span(lambda_min_nm: f64, lambda_max_nm: f64, points: usize) -> Result<Self> {
        if !(lambda_min_nm > 0.0 && lambda_max_nm > lambda_min_nm) {
            return Err(NliError::Grid(format!(
                "wavelength span [{lambda_min_nm}, {lambda_max_nm}] nm is empty"
            )));
        }
        let lo = units::wavelength_nm_to_omega(lambda_max_nm);
        let hi = units::wavelength_nm_to_omega(lambda_min_nm);
        let axis = linspace(lo, hi, points)?;
        Self::new(axis.clone(), axis)
    }

    /// Default 512 × 512 grid over 1535–1562 nm.
    pub fn paper_default() -> Self {
        Self::from_wavelength_span(1535.0, 1562.0, 512).expect("static grid is valid")
    }

    pub fn signal_omega(&self) -> &[f64] {
        &self.signal_omega
    }

    pub fn idler_omega(&self) -> &[f64] {
        &self.idler_omega
    }

    pub fn n_signal(&self) -> usize {
        self.signal_omega.len()
    }

    pub fn n_idler(&self) -> usize {
        self.idler_omega.len()
    }

    pub fn d_omega_signal(&self) -> f64 {
        axis_step(&self.signal_omega)
    }

    pub fn d_omega_idler(&self) -> f64 {
        axis_step(&self.idler_omega)
    }

    pub fn cell_area(&self) -> f64 {
        self.d_omega_signal() * self.d_omega_idler()
    }

    pub fn signal_wavelengths_nm(&self) -> Vec<f64> {
        self.signal_omega.iter().map(|&w| units::omega_to_wavelength_nm(w)).collect()
    }

    pub fn idler_wavelengths_nm(&self) -> Vec<f64> {
        self.idler_omega.iter().map(|&w| units::omega_to_wavelength_nm(w)).collect()
    }

    /// Same span, `factor` times as many intervals on each axis.
    pub fn refined(&self, factor: usize) -> Result<Self> {
        let refine = |axis: &[f64]| {
            let n = (axis.len() - 1) * factor + 1;
            linspace(axis[0], axis[axis.len() - 1], n)
        };
        Self::new(refine(&self.signal_omega)?, refine(&self.idler_omega)?)
    }

    pub fn same_as(&self, other: &FrequencyGrid) -> bool {
        let close = |a: &[f64], b: &[f64]| {
            a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= 1e-12 * x.abs())
        };
        close(&self.signal_omega, &other.signal_omega) && close(&self.idler_omega, &other.idler_omega)
    }
}

fn linspace(lo: f64, hi: f64, n: usize) -> Result<Vec<f64>> {
    if n < 2 {
        return Err(NliError::Grid(format!("need at least 2 points per axis, got {n}")));
    }
    let step = (hi - lo) / (n - 1) as f64;
    Ok((0..n).map(|k| lo + step * k as f64).collect())
}

fn axis_step(axis: &[f64]) -> f64 {
    (axis[axis.len() - 1] - axis[0]) / (axis.len() - 1) as f64
}

fn check_axis(name: &str, axis: &[f64]) -> Result<()> {
    if axis.len() < 2 {
        return Err(NliError::Grid(format!("{name} axis needs >= 2 points")));
    }
    if axis.iter().any(|w| !w.is_finite()) {
        return Err(NliError::Grid(format!("{name} axis has non-finite entries")));
    }
    let step = axis_step(axis);
    if step <= 0.0 {
        return Err(NliError::Grid(format!("{name} axis is not strictly increasing")));
    }
    for pair in axis.windows(2) {
        let d = pair[1] - pair[0];
        if d <= 0.0 {
            return Err(NliError::Grid(format!("{name} axis is not strictly increasing")));
        }
        if (d - step).abs() > 1e-6 * step {
            return Err(NliError::Grid(format!("{name} axis is not uniformly spaced")));
        }
    }
    Ok(())
}

/// Discretized joint spectral amplitude; rows index the signal axis, columns the idler axis.
#[derive(Debug, Clone)]
pub struct Jsf {
    pub grid: FrequencyGrid,
    pub amplitude: DMatrix<Complex64>,
    /// Scale factor that was applied to reach unit norm at construction.
    pub normalization: f64,
    pub metadata: JsfMetadata,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct JsfMetadata {
    pub sigma_p_rad_per_s: Option<f64>,
    pub bandwidth_convention: Option<BandwidthConvention>,
    /// Estimated fraction of the full |F|² that falls inside the grid.
    pub captured_mass_fraction: Option<f64>,
    pub warnings: Vec<String>,
}

impl Jsf {
    /// Wraps an amplitude matrix and rescales it to unit norm.
    pub fn from_amplitude(grid: FrequencyGrid, amplitude: DMatrix<Complex64>) -> Result<Self> {
        if amplitude.nrows() != grid.n_signal() || amplitude.ncols() != grid.n_idler() {
            return Err(NliError::GridMismatch(format!(
                "amplitude is {}x{}, grid is {}x{}",
                amplitude.nrows(),
                amplitude.ncols(),
                grid.n_signal(),
                grid.n_idler()
            )));
        }
        let mut jsf = Self {
            grid,
            amplitude,
            normalization: 1.0,
            metadata: JsfMetadata::default(),
        };
        let norm = jsf.norm_sq();
        if !(norm > 0.0 && norm.is_finite()) {
            return Err(NliError::ZeroNorm);
        }
        let scale = 1.0 / norm.sqrt();
        jsf.amplitude.iter_mut().for_each(|a| *a *= scale);
        jsf.normalization = scale;
        Ok(jsf)
    }

    /// `Σ|F|²·Δω_s·Δω_i`.
    pub fn norm_sq(&self) -> f64 {
        self.amplitude.iter().map(|a| a.norm_sqr()).sum::<f64>() * self.grid.cell_area()
    }

    /// Joint spectral intensity |F|².
    pub fn jsi(&self) -> DMatrix<f64> {
        self.amplitude.map(|a| a.norm_sqr())
    }
}

/// Pair envelope `exp[-(ω_s+ω_i-2ω_p0)²/4σ_p²]`.
pub fn pump_envelope(omega_s: f64, omega_i: f64, pump: &PumpSpec) -> Result<f64> {
    pump.validate()?;
    Ok(envelope_unchecked(omega_s + omega_i - 2.0 * pump.center_omega(), pump.sigma_omega()))
}

fn envelope_unchecked(nu_plus: f64, sigma: f64) -> f64 {
    (-nu_plus * nu_plus / (4.0 * sigma * sigma)).exp()
}

/// Phase mismatch in one nonlinear fiber, `Δk = k⁽²⁾/4·(ω_s−ω_i)² − 2γP_p` (rad/m).
pub fn delta_k(omega_s: f64, omega_i: f64, dsf: &DsfSpec, pump: &PumpSpec) -> Result<f64> {
    dsf.validate()?;
    pump.validate()?;
    Ok(delta_k_unchecked(omega_s - omega_i, dsf, pump))
}

fn delta_k_unchecked(detuning: f64, dsf: &DsfSpec, pump: &PumpSpec) -> f64 {
    dsf.k2(pump) / 4.0 * detuning * detuning
        - 2.0 * units::gamma_to_si(dsf.nonlinear_coefficient) * pump.peak_power_w
}

/// Half the spacer phase, `λ_p0²·D·L_DM·(ω_s−ω_i)²/(16πc)`.
fn spacer_half_phase(detuning: f64, smf: &SmfSpec, pump: &PumpSpec) -> f64 {
    let lp = pump.center_wavelength_m();
    lp * lp * units::dispersion_to_si(smf.dispersion) * smf.length_m * detuning * detuning / (16.0 * PI * C)
}

/// Inter-stage phase θ.
pub fn theta(omega_s: f64, omega_i: f64, config: &NliConfig) -> Result<f64> {
    config.validate()?;
    Ok(theta_unchecked(omega_s - omega_i, config))
}

fn theta_unchecked(detuning: f64, config: &NliConfig) -> f64 {
    let spacer = spacer_half_phase(detuning, &config.smf, &config.pump);
    match config.theta_mode {
        ThetaMode::Approximate => spacer,
        ThetaMode::Exact => spacer + delta_k_unchecked(detuning, &config.dsf, &config.pump) * config.dsf.length_m / 2.0,
    }
}

/// Signal-idler detuning at which the spacer half-phase equals `theta`.
pub fn detuning_for_theta(theta: f64, config: &NliConfig) -> f64 {
    let per_detuning_sq = spacer_half_phase(1.0, &config.smf, &config.pump);
    (theta / per_detuning_sq).sqrt()
}

/// `H(θ) = e^{j(N−1)θ}·sin(Nθ)/sin(θ)`, the N-stage interference factor.
pub fn interference_factor(theta: f64, stages: u32) -> Result<Complex64> {
    if stages < 1 {
        return Err(config_err("interference factor needs N >= 1"));
    }
    Ok(interference_unchecked(theta, stages))
}

fn interference_unchecked(theta: f64, stages: u32) -> Complex64 {
    let s = theta.sin();
    if s.abs() < 1e-8 {
        return (0..stages).map(|n| Complex64::from_polar(1.0, 2.0 * n as f64 * theta)).sum();
    }
    let n = stages as f64;
    Complex64::from_polar(1.0, (n - 1.0) * theta) * ((n * theta).sin() / s)
}

/// `sin(x)/x` with the removable singularity filled in.
pub fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-8 {
        1.0 - x * x / 6.0
    } else {
        x.sin() / x
    }
}

/// Unnormalized joint spectral amplitude at one point.
pub fn jsf_point(omega_s: f64, omega_i: f64, config: &NliConfig) -> Complex64 {
    let pump = &config.pump;
    let detuning = omega_s - omega_i;
    let env = envelope_unchecked(omega_s + omega_i - 2.0 * pump.center_omega(), pump.sigma_omega());
    let pm = sinc(delta_k_unchecked(detuning, &config.dsf, pump) * config.dsf.length_m / 2.0);
    interference_unchecked(theta_unchecked(detuning, config), config.stages) * (env * pm)
}

fn raw_amplitude(grid: &FrequencyGrid, config: &NliConfig) -> DMatrix<Complex64> {
    let ws = grid.signal_omega();
    let wi = grid.idler_omega();
    let rows: Vec<Vec<Complex64>> = ws
        .par_iter()
        .map(|&s| wi.iter().map(|&i| jsf_point(s, i, config)).collect())
        .collect();
    DMatrix::from_fn(ws.len(), wi.len(), |r, c| rows[r][c])
}

/// Normalized joint spectral function of the interferometer on `grid`.
pub fn compute_jsf(grid: &FrequencyGrid, config: &NliConfig) -> Result<Jsf> {
    config.validate()?;
    let amplitude = raw_amplitude(grid, config);
    let mut jsf = Jsf::from_amplitude(grid.clone(), amplitude)?;
    let captured = captured_mass_fraction(grid, config);
    jsf.metadata = JsfMetadata {
        sigma_p_rad_per_s: Some(config.pump.sigma_omega()),
        bandwidth_convention: Some(config.pump.bandwidth_convention),
        captured_mass_fraction: Some(captured),
        warnings: Vec::new(),
    };
    if captured < 0.99 {
        jsf.metadata.warnings.push(format!(
            "grid captures an estimated {:.1}% of the |F|^2 mass (< 99%)",
            100.0 * captured
        ));
    }
    Ok(jsf)
}

/// Estimates the share of |F|² inside `grid` by integrating on a coarser
/// grid with four times the span around the pump-degenerate point.
fn captured_mass_fraction(grid: &FrequencyGrid, config: &NliConfig) -> f64 {
    const PROBE_POINTS: usize = 400;
    let w0 = config.pump.center_omega();
    let widen = |axis: &[f64]| {
        let lo = axis[0];
        let hi = axis[axis.len() - 1];
        let half = 2.0 * (hi - lo).max(2.0 * (hi - w0).abs()).max(2.0 * (w0 - lo).abs());
        let step = 2.0 * half / (PROBE_POINTS - 1) as f64;
        (0..PROBE_POINTS).map(|k| w0 - half + step * k as f64).collect::<Vec<_>>()
    };
    let ps = widen(grid.signal_omega());
    let pi = widen(grid.idler_omega());
    let (s_lo, s_hi) = (grid.signal_omega()[0], grid.signal_omega()[grid.n_signal() - 1]);
    let (i_lo, i_hi) = (grid.idler_omega()[0], grid.idler_omega()[grid.n_idler() - 1]);
    let (inside, total) = ps
        .par_iter()
        .map(|&s| {
            let mut inside = 0.0;
            let mut total = 0.0;
            for &i in &pi {
                let p = jsf_point(s, i, config).norm_sqr();
                total += p;
                if (s_lo..=s_hi).contains(&s) && (i_lo..=i_hi).contains(&i) {
                    inside += p;
                }
            }
            (inside, total)
        })
        .collect::<Vec<_>>()
        .into_iter()
        .fold((0.0, 0.0), |a, b| (a.0 + b.0, a.1 + b.1));
    if total > 0.0 {
        inside / total
    } else {
        0.0
    }
}

/// Rectangular dual-band filter specified in wavelength.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterSpec {
    pub signal_center_nm: f64,
    pub signal_bandwidth_nm: f64,
    pub idler_center_nm: f64,
    pub idler_bandwidth_nm: f64,
    pub in_band_transmission: f64,
    pub out_of_band_extinction_db: f64,
}

impl Default for FilterSpec {
    fn default() -> Self {
        Self {
            signal_center_nm: 1553.7,
            signal_bandwidth_nm: 1.5,
            idler_center_nm: 1543.8,
            idler_bandwidth_nm: 1.5,
            in_band_transmission: 1.0,
            out_of_band_extinction_db: 110.0,
        }
    }
}

impl FilterSpec {
    pub fn centered(signal_nm: f64, idler_nm: f64, bandwidth_nm: f64) -> Self {
        Self {
            signal_center_nm: signal_nm,
            signal_bandwidth_nm: bandwidth_nm,
            idler_center_nm: idler_nm,
            idler_bandwidth_nm: bandwidth_nm,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("signal_center_nm", self.signal_center_nm),
            ("signal_bandwidth_nm", self.signal_bandwidth_nm),
            ("idler_center_nm", self.idler_center_nm),
            ("idler_bandwidth_nm", self.idler_bandwidth_nm),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(config_err(format!("filter.{name} must be > 0, got {v}")));
            }
        }
        if !(self.in_band_transmission > 0.0 && self.in_band_transmission <= 1.0) {
            return Err(config_err("filter.in_band_transmission must lie in (0, 1]"));
        }
        if !(self.out_of_band_extinction_db >= 60.0) {
            return Err(config_err("filter.out_of_band_extinction_db must be >= 60 dB"));
        }
        Ok(())
    }

    /// Pass band on the signal axis as an angular-frequency interval.
    pub fn signal_band_omega(&self) -> (f64, f64) {
        band_omega(self.signal_center_nm, self.signal_bandwidth_nm)
    }

    pub fn idler_band_omega(&self) -> (f64, f64) {
        band_omega(self.idler_center_nm, self.idler_bandwidth_nm)
    }

    fn extinction_power(&self) -> f64 {
        10f64.powf(-self.out_of_band_extinction_db / 10.0)
    }
}

fn band_omega(center_nm: f64, width_nm: f64) -> (f64, f64) {
    let lo = units::wavelength_nm_to_omega(center_nm + width_nm / 2.0);
    let hi = units::wavelength_nm_to_omega(center_nm - width_nm / 2.0);
    (lo, hi)
}

/// Fraction of each grid cell (width Δω centred on the sample) lying inside `band`.
pub fn band_coverage(axis: &[f64], band: (f64, f64)) -> Vec<f64> {
    let step = axis_step(axis);
    axis.iter()
        .map(|&w| {
            let (cell_lo, cell_hi) = (w - step / 2.0, w + step / 2.0);
            if cell_lo >= band.0 && cell_hi <= band.1 {
                return 1.0;
            }
            let lo = cell_lo.max(band.0);
            let hi = cell_hi.min(band.1);
            ((hi - lo) / step).clamp(0.0, 1.0)
        })
        .collect()
}

/// Multiplies the amplitude by the filter's field transmission. Not renormalized.
pub fn apply_filter(jsf: &Jsf, filter: &FilterSpec) -> Result<Jsf> {
    filter.validate()?;
    let cov_s = band_coverage(jsf.grid.signal_omega(), filter.signal_band_omega());
    let cov_i = band_coverage(jsf.grid.idler_omega(), filter.idler_band_omega());
    if cov_s.iter().all(|&f| f == 0.0) {
        return Err(NliError::NoOverlap("signal"));
    }
    if cov_i.iter().all(|&f| f == 0.0) {
        return Err(NliError::NoOverlap("idler"));
    }
    let t = filter.in_band_transmission;
    let e = filter.extinction_power();
    let field = |f: f64| (t * f + e * (1.0 - f)).sqrt();
    let fs: Vec<f64> = cov_s.iter().map(|&f| field(f)).collect();
    let fi: Vec<f64> = cov_i.iter().map(|&f| field(f)).collect();
    let mut out = jsf.clone();
    for c in 0..out.amplitude.ncols() {
        for r in 0..out.amplitude.nrows() {
            out.amplitude[(r, c)] *= fs[r] * fi[c];
        }
    }
    Ok(out)
}
