//! Modal structure of a (filtered) joint spectrum: Schmidt decomposition,
//! spectral heralding efficiencies and the interference/correlation
//! quantities that follow from them.

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{NliError, Result};
use crate::spectral::{band_coverage, FilterSpec, Jsf};

/// Modes are kept until their cumulative weight reaches `1 - MODE_TAIL`.
pub const MODE_TAIL: f64 = 1e-6;
const MAX_MODES: usize = 256;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SchmidtResult {
    /// All Schmidt weights, descending, summing to one.
    pub weights: Vec<f64>,
    pub purity: f64,
    pub mode_number: f64,
    /// Signal/idler axes (rad/s) the mode functions are sampled on.
    pub signal_axis: Vec<f64>,
    pub idler_axis: Vec<f64>,
    /// Leading mode functions, normalized so that `Σ|φ|²·Δω = 1`.
    pub signal_modes: Vec<Vec<Complex64>>,
    pub idler_modes: Vec<Vec<Complex64>>,
}

impl SchmidtResult {
    pub fn kept_modes(&self) -> usize {
        self.signal_modes.len()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SchmidtOptions {
    /// Rows/columns at either edge whose power share is below this are dropped before the SVD.
    pub crop_below: f64,
    pub with_modes: bool,
}

impl Default for SchmidtOptions {
    fn default() -> Self {
        Self {
            crop_below: 1e-14,
            with_modes: true,
        }
    }
}

pub fn schmidt_decompose(jsf: &Jsf) -> Result<SchmidtResult> {
    schmidt_decompose_with(jsf, SchmidtOptions::default())
}

/// Singular value decomposition of the sampled amplitude, `λ_k = s_k²/Σs²`.
pub fn schmidt_decompose_with(jsf: &Jsf, opts: SchmidtOptions) -> Result<SchmidtResult> {
    let amp = &jsf.amplitude;
    let total: f64 = amp.iter().map(|a| a.norm_sqr()).sum();
    if !(total > 0.0 && total.is_finite()) {
        return Err(NliError::ZeroNorm);
    }
    let row_power: Vec<f64> = (0..amp.nrows()).map(|r| amp.row(r).iter().map(|a| a.norm_sqr()).sum()).collect();
    let col_power: Vec<f64> = (0..amp.ncols()).map(|c| amp.column(c).iter().map(|a| a.norm_sqr()).sum()).collect();
    let (r0, r1) = support(&row_power, total * opts.crop_below);
    let (c0, c1) = support(&col_power, total * opts.crop_below);

    let ds = jsf.grid.d_omega_signal();
    let di = jsf.grid.d_omega_idler();
    let scale = (ds * di).sqrt();
    let block: DMatrix<Complex64> = amp.view((r0, c0), (r1 - r0 + 1, c1 - c0 + 1)).map(|a| a * scale);

    let svd = block.svd(opts.with_modes, opts.with_modes);
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let s2: Vec<f64> = order.iter().map(|&k| svd.singular_values[k].powi(2)).collect();
    let sum: f64 = s2.iter().sum();
    let weights: Vec<f64> = s2.iter().map(|v| v / sum).collect();
    let purity: f64 = weights.iter().map(|w| w * w).sum();

    let mut signal_modes = Vec::new();
    let mut idler_modes = Vec::new();
    if let (Some(u), Some(v_t)) = (&svd.u, &svd.v_t) {
        let mut cumulative = 0.0;
        for (rank, &k) in order.iter().enumerate().take(MAX_MODES) {
            signal_modes.push(u.column(k).iter().map(|x| x / ds.sqrt()).collect());
            // F = Σ s_k u_k (Vᴴ)_k, so rows of Vᴴ are the idler modes as they appear in F.
            idler_modes.push(v_t.row(k).iter().map(|x| x / di.sqrt()).collect());
            cumulative += weights[rank];
            if cumulative >= 1.0 - MODE_TAIL {
                break;
            }
        }
    }
    Ok(SchmidtResult {
        weights,
        purity,
        mode_number: 1.0 / purity,
        signal_axis: jsf.grid.signal_omega()[r0..=r1].to_vec(),
        idler_axis: jsf.grid.idler_omega()[c0..=c1].to_vec(),
        signal_modes,
        idler_modes,
    })
}

fn support(power: &[f64], floor: f64) -> (usize, usize) {
    let first = power.iter().position(|&p| p > floor).unwrap_or(0);
    let last = power.iter().rposition(|&p| p > floor).unwrap_or(power.len() - 1);
    (first, last.max(first))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeraldingReport {
    /// P(signal in band | idler in band).
    pub h_s_spectral: f64,
    /// P(idler in band | signal in band).
    pub h_i_spectral: f64,
    /// P(both photons in their bands).
    pub pair_pass_probability: f64,
    pub signal_pass_probability: f64,
    pub idler_pass_probability: f64,
}

/// Spectral heralding efficiencies of a dual-band filter. Component losses are
/// not included: band membership is the only criterion.
pub fn heralding_efficiencies(jsf_unfiltered: &Jsf, filter: &FilterSpec) -> Result<HeraldingReport> {
    filter.validate()?;
    let cs = band_coverage(jsf_unfiltered.grid.signal_omega(), filter.signal_band_omega());
    let ci = band_coverage(jsf_unfiltered.grid.idler_omega(), filter.idler_band_omega());
    let amp = &jsf_unfiltered.amplitude;
    let (mut both, mut sig, mut idl, mut total) = (0.0, 0.0, 0.0, 0.0);
    for c in 0..amp.ncols() {
        for r in 0..amp.nrows() {
            let p = amp[(r, c)].norm_sqr();
            total += p;
            sig += cs[r] * p;
            idl += ci[c] * p;
            both += cs[r] * ci[c] * p;
        }
    }
    if total <= 0.0 {
        return Err(NliError::ZeroNorm);
    }
    if idl <= 0.0 {
        return Err(NliError::EmptyBand("idler"));
    }
    if sig <= 0.0 {
        return Err(NliError::EmptyBand("signal"));
    }
    Ok(HeraldingReport {
        h_s_spectral: both / idl,
        h_i_spectral: both / sig,
        pair_pass_probability: both / total,
        signal_pass_probability: sig / total,
        idler_pass_probability: idl / total,
    })
}

/// Two-photon interference visibility between the heralded signal photons of
/// two sources, the second one delayed by `delay` seconds.
///
/// Each heralded photon is the Schmidt-weight mixture of its signal modes, so
/// `V(τ) = Σ_jk λ_j μ_k |⟨φ_j|e^{iωτ}|ψ_k⟩|²`; identical sources give `V(0) = Σλ² = 1/M`.
/// The sampled spectrum makes `V` periodic in `τ` with period `2π/Δω`.
pub fn predicted_hom_visibility(a: &SchmidtResult, b: &SchmidtResult, delay: f64) -> Result<f64> {
    let same_axis = a.signal_axis.len() == b.signal_axis.len()
        && a
            .signal_axis
            .iter()
            .zip(&b.signal_axis)
            .all(|(x, y)| (x - y).abs() <= 1e-12 * x.abs());
    if !same_axis {
        return Err(NliError::GridMismatch("sources are sampled on different signal axes".into()));
    }
    if a.signal_modes.is_empty() || b.signal_modes.is_empty() {
        return Err(NliError::Degenerate("Schmidt result carries no mode functions".into()));
    }
    let axis = &a.signal_axis;
    let dw = (axis[axis.len() - 1] - axis[0]) / (axis.len() - 1) as f64;
    let mid = 0.5 * (axis[0] + axis[axis.len() - 1]);
    let phase: Vec<Complex64> = axis.iter().map(|w| Complex64::from_polar(1.0, (w - mid) * delay)).collect();
    let delayed: Vec<Vec<Complex64>> = b
        .signal_modes
        .iter()
        .map(|m| m.iter().zip(&phase).map(|(x, p)| x * p).collect())
        .collect();
    let mut v = 0.0;
    for (j, phi) in a.signal_modes.iter().enumerate() {
        for (k, psi) in delayed.iter().enumerate() {
            let overlap: Complex64 = phi.iter().zip(psi).map(|(x, y)| x.conj() * y).sum::<Complex64>() * dw;
            v += a.weights[j] * b.weights[k] * overlap.norm_sqr();
        }
    }
    Ok(v.clamp(0.0, 1.0))
}

/// `g⁽²⁾ = 2R_c/(h_s h_i)·(1 + 1/M)` for a heralded source.
pub fn g2_heralded_prediction(rate: f64, h_s: f64, h_i: f64, mode_number: f64) -> Result<f64> {
    if !(h_s * h_i > 0.0) {
        return Err(NliError::Degenerate("heralding efficiency product is zero".into()));
    }
    if !(mode_number >= 1.0) {
        return Err(NliError::Degenerate(format!("mode number {mode_number} < 1")));
    }
    Ok(2.0 * rate / (h_s * h_i) * (1.0 + 1.0 / mode_number))
}

/// Unheralded signal-field `g⁽²⁾ = 1 + 1/M`.
pub fn g2_unheralded_prediction(mode_number: f64) -> Result<f64> {
    if !(mode_number >= 1.0) {
        return Err(NliError::Degenerate(format!("mode number {mode_number} < 1")));
    }
    Ok(1.0 + 1.0 / mode_number)
}

/// Mode number implied by a thermal-field `g⁽²⁾`, `M = 1/(g⁽²⁾ − 1)`.
pub fn mode_number_from_g2(g2: f64) -> Result<f64> {
    if !(g2 > 1.0) {
        return Err(NliError::Degenerate(format!("g2 = {g2} is not super-Poissonian")));
    }
    Ok(1.0 / (g2 - 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::FrequencyGrid;

    fn gaussian_grid(n: usize) -> FrequencyGrid {
        let axis: Vec<f64> = (0..n).map(|k| -8.0 + 16.0 * k as f64 / (n - 1) as f64).collect();
        FrequencyGrid::new(axis.clone(), axis).unwrap()
    }

    fn from_fn(grid: &FrequencyGrid, f: impl Fn(f64, f64) -> Complex64) -> Jsf {
        let amp = DMatrix::from_fn(grid.n_signal(), grid.n_idler(), |r, c| {
            f(grid.signal_omega()[r], grid.idler_omega()[c])
        });
        Jsf::from_amplitude(grid.clone(), amp).unwrap()
    }

    #[test]
    fn separable_state_is_single_mode() {
        let grid = gaussian_grid(96);
        let jsf = from_fn(&grid, |x, y| Complex64::new((-(x - 1.0).powi(2) - 0.5 * y * y).exp(), 0.0));
        let res = schmidt_decompose(&jsf).unwrap();
        assert!(res.mode_number - 1.0 < 1e-6);
        assert!((res.weights[0] - 1.0).abs() < 1e-9);
        assert!((res.weights.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert!((res.purity * res.mode_number - 1.0).abs() < 1e-15);
    }

    #[test]
    fn zero_jsf_is_rejected() {
        let grid = gaussian_grid(8);
        let jsf = Jsf {
            grid: grid.clone(),
            amplitude: DMatrix::zeros(8, 8),
            normalization: 1.0,
            metadata: Default::default(),
        };
        assert!(matches!(schmidt_decompose(&jsf), Err(NliError::ZeroNorm)));
    }

    #[test]
    fn modes_are_orthonormal_and_sorted() {
        let grid = gaussian_grid(80);
        let jsf = from_fn(&grid, |x, y| Complex64::new((-(x + y).powi(2) - 0.2 * (x - y).powi(2)).exp(), 0.1 * x));
        let res = schmidt_decompose(&jsf).unwrap();
        assert!(res.weights.windows(2).all(|w| w[0] >= w[1]));
        let dw = grid.d_omega_signal();
        for a in &res.signal_modes {
            let n: f64 = a.iter().map(|x| x.norm_sqr()).sum::<f64>() * dw;
            assert!((n - 1.0).abs() < 1e-9);
        }
        let o: Complex64 = res.signal_modes[0].iter().zip(&res.signal_modes[1]).map(|(a, b)| a.conj() * b).sum();
        assert!(o.norm() * dw < 1e-9);
    }

    #[test]
    fn schmidt_reconstructs_amplitude() {
        let grid = gaussian_grid(48);
        let jsf = from_fn(&grid, |x, y| {
            Complex64::from_polar((-(x + y).powi(2) - 0.3 * (x - y).powi(2)).exp(), 0.2 * x * y)
        });
        let opts = SchmidtOptions {
            crop_below: 0.0,
            with_modes: true,
        };
        let res = schmidt_decompose_with(&jsf, opts).unwrap();
        let mut max_err: f64 = 0.0;
        for r in 0..48 {
            for c in 0..48 {
                let mut sum = Complex64::new(0.0, 0.0);
                for k in 0..res.kept_modes() {
                    sum += res.weights[k].sqrt() * res.signal_modes[k][r] * res.idler_modes[k][c];
                }
                max_err = max_err.max((sum - jsf.amplitude[(r, c)]).norm());
            }
        }
        let peak = jsf.amplitude.iter().map(|a| a.norm()).fold(0.0, f64::max);
        assert!(max_err < 1e-3 * peak, "reconstruction error {max_err}");
    }

    #[test]
    fn heralding_full_and_half_bands() {
        // Grid in wavelength-friendly units so FilterSpec bands can be used.
        let grid = FrequencyGrid::from_wavelength_span(1540.0, 1558.0, 120).unwrap();
        let ws = grid.signal_omega().to_vec();
        let center = 0.5 * (ws[0] + ws[ws.len() - 1]);
        let width = (ws[ws.len() - 1] - ws[0]) / 12.0;
        let jsf = from_fn(&grid, |s, i| {
            Complex64::new((-((s - center) / width).powi(2) - ((i - center) / width).powi(2)).exp(), 0.0)
        });
        let full = FilterSpec::centered(1549.0, 1549.0, 30.0);
        let rep = heralding_efficiencies(&jsf, &full).unwrap();
        assert!((rep.h_s_spectral - 1.0).abs() < 1e-12 && (rep.h_i_spectral - 1.0).abs() < 1e-12);

        // Signal band covering exactly the half of the axis above the center.
        let lam_center = crate::units::omega_to_wavelength_nm(center);
        let lam_lo = crate::units::omega_to_wavelength_nm(ws[ws.len() - 1] + 1e12);
        let half = FilterSpec {
            signal_center_nm: 0.5 * (lam_lo + lam_center),
            signal_bandwidth_nm: lam_center - lam_lo,
            idler_center_nm: 1549.0,
            idler_bandwidth_nm: 30.0,
            ..FilterSpec::default()
        };
        let rep = heralding_efficiencies(&jsf, &half).unwrap();
        // Half of the signal photons miss their band whatever the idler does.
        assert!((rep.h_s_spectral - 0.5).abs() < 1e-6, "{}", rep.h_s_spectral);
        assert!((rep.h_i_spectral - 1.0).abs() < 1e-12);
        assert!(rep.pair_pass_probability <= rep.signal_pass_probability.min(rep.idler_pass_probability));
    }

    #[test]
    fn heralding_rejects_empty_band() {
        let grid = FrequencyGrid::from_wavelength_span(1540.0, 1558.0, 64).unwrap();
        let jsf = from_fn(&grid, |_, _| Complex64::new(1.0, 0.0));
        let filter = FilterSpec::centered(1549.0, 1600.0, 1.0);
        assert!(matches!(heralding_efficiencies(&jsf, &filter), Err(NliError::EmptyBand("idler"))));
    }

    #[test]
    fn hom_visibility_limits() {
        let grid = gaussian_grid(128);
        let pure = from_fn(&grid, |x, y| Complex64::new((-x * x - y * y).exp(), 0.0));
        let res = schmidt_decompose(&pure).unwrap();
        assert!((predicted_hom_visibility(&res, &res, 0.0).unwrap() - 1.0).abs() < 1e-9);
        // Coherence time ~1 in these units; the grid revival sits at 2π/Δω ≈ 50.
        assert!(predicted_hom_visibility(&res, &res, 10.0).unwrap() < 0.01);

        let mixed = from_fn(&grid, |x, y| Complex64::new((-(x + y).powi(2) - 0.3 * (x - y).powi(2)).exp(), 0.0));
        let res = schmidt_decompose(&mixed).unwrap();
        let v0 = predicted_hom_visibility(&res, &res, 0.0).unwrap();
        assert!((v0 - res.purity).abs() < 1e-9);
        assert!(predicted_hom_visibility(&res, &res, 0.5).unwrap() < v0);
    }

    #[test]
    fn hom_visibility_grid_mismatch() {
        let a = schmidt_decompose(&from_fn(&gaussian_grid(32), |x, y| Complex64::new((-x * x - y * y).exp(), 0.0))).unwrap();
        let b = schmidt_decompose(&from_fn(&gaussian_grid(40), |x, y| Complex64::new((-x * x - y * y).exp(), 0.0))).unwrap();
        assert!(matches!(predicted_hom_visibility(&a, &b, 0.0), Err(NliError::GridMismatch(_))));
    }

    #[test]
    fn g2_formulas() {
        assert_eq!(g2_heralded_prediction(0.0, 0.9, 0.9, 1.0).unwrap(), 0.0);
        let g = g2_heralded_prediction(0.043, 0.912, 0.905, 1.04).unwrap();
        assert!((g - 0.2043).abs() < 5e-4, "{g}");
        let g2 = g2_heralded_prediction(0.086, 0.912, 0.905, 1.04).unwrap();
        assert!((g2 - 2.0 * g).abs() < 1e-15);
        assert!(g2_heralded_prediction(0.043, 0.0, 0.9, 1.0).is_err());

        assert_eq!(g2_unheralded_prediction(1.0).unwrap(), 2.0);
        assert!((g2_unheralded_prediction(1.04).unwrap() - 1.9615).abs() < 1e-4);
        assert!((g2_unheralded_prediction(1e12).unwrap() - 1.0).abs() < 1e-11);
        assert!(g2_unheralded_prediction(0.9).is_err());
        assert!((mode_number_from_g2(1.96).unwrap() - 1.0417).abs() < 1e-4);
    }
}
