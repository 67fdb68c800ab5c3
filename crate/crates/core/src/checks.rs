//! End-to-end acceptance checks. Each check is self-contained and seeded, so
//! the same seed always reproduces the same verdicts and metrics.

use std::collections::BTreeMap;
use std::time::Instant;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::analysis::{
    analyze_power_sweep, correct_visibility, fit_hom_dip, g2_from_hbt, g2_unheralded, raman_correct_g2s,
    BackgroundFloor, DipPoint, MultipairCorrection, VisibilityReport,
};
use crate::config::JobConfig;
use crate::design::{islands_for, IslandReport};
use crate::error::Result;
use crate::modal::{
    g2_heralded_prediction, g2_unheralded_prediction, heralding_efficiencies, schmidt_decompose,
    schmidt_decompose_with, SchmidtOptions,
};
use crate::sim::{
    derive_seed, hom_fourfold_exact, overlap_scan, simulate_hbt, simulate_hom,
    simulate_power_sweep, DetectorSpec, HomDetectors, HomOptions, PairTruncation, PowerScaling, SourceModel,
};
use crate::spectral::{apply_filter, compute_jsf, interference_factor, FilterSpec, FrequencyGrid, Jsf};
use crate::units::wavelength_nm_to_omega;

pub const CHECK_COUNT: u8 = 9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckOutcome {
    pub id: u8,
    pub name: String,
    pub passed: bool,
    pub detail: String,
    pub metrics: BTreeMap<String, f64>,
    pub elapsed_s: f64,
}

impl CheckOutcome {
    pub fn line(&self) -> String {
        format!(
            "{} {}: {} ({})",
            if self.passed { "PASS" } else { "FAIL" },
            self.id,
            self.name,
            self.detail
        )
    }
}

struct Draft {
    passed: bool,
    detail: String,
    metrics: BTreeMap<String, f64>,
}

impl Draft {
    fn new() -> Self {
        Self {
            passed: true,
            detail: String::new(),
            metrics: BTreeMap::new(),
        }
    }

    fn metric(&mut self, key: &str, v: f64) {
        self.metrics.insert(key.to_string(), v);
    }

    /// Records a sub-condition; the first failing one is named in the detail.
    fn require(&mut self, ok: bool, what: impl Into<String>) {
        if !ok && self.passed {
            self.passed = false;
            self.detail = format!("failed: {}", what.into());
        }
    }

    fn done(mut self, summary: String) -> Self {
        if self.passed {
            self.detail = summary;
        }
        self
    }
}

pub fn check_name(id: u8) -> &'static str {
    match id {
        1 => "interference-factor identities",
        2 => "island reproduction",
        3 => "round-island purity and heralding",
        4 => "Schmidt oracle",
        5 => "heralded g2 consistency",
        6 => "unheralded statistics and Raman correction",
        7 => "HOM closure",
        8 => "analysis closure",
        9 => "NLI vs single-stage heralding",
        _ => "unknown",
    }
}

/// Runs one check; internal errors count as failures.
pub fn run_check(id: u8, cfg: &JobConfig, seed: u64) -> CheckOutcome {
    let start = Instant::now();
    let s = derive_seed(seed, id as u64);
    let res = match id {
        1 => check_1(),
        2 => check_2(cfg).map(|(d, _)| d),
        3 => check_3(cfg),
        4 => check_4(),
        5 => check_5(s),
        6 => check_6(cfg, s),
        7 => check_7(cfg, s),
        8 => check_8(cfg, s),
        9 => check_9(cfg),
        _ => Err(crate::error::config_err(format!("no check {id}"))),
    };
    let elapsed_s = start.elapsed().as_secs_f64();
    let d = res.unwrap_or_else(|e| Draft {
        passed: false,
        detail: format!("error: {e}"),
        metrics: BTreeMap::new(),
    });
    CheckOutcome {
        id,
        name: check_name(id).to_string(),
        passed: d.passed,
        detail: d.detail,
        metrics: d.metrics,
        elapsed_s,
    }
}

pub fn run_all(cfg: &JobConfig, seed: u64) -> Vec<CheckOutcome> {
    (1..=CHECK_COUNT).map(|id| run_check(id, cfg, seed)).collect()
}

fn check_1() -> Result<Draft> {
    let mut d = Draft::new();
    let mut worst_sum = 0.0f64;
    let mut worst_zero = 0.0f64;
    let mut worst_peak = 0.0f64;
    for n in 1..=6u32 {
        for k in 0..10_000 {
            // Deterministic scatter over a few periods, including the removable points.
            let theta = -20.0 + 40.0 * ((k as f64 * 0.618_033_988_749_894_9) % 1.0);
            let direct: Complex64 = (0..n).map(|m| Complex64::from_polar(1.0, 2.0 * m as f64 * theta)).sum();
            worst_sum = worst_sum.max((interference_factor(theta, n)? - direct).norm());
        }
        for k in 1..(3 * n) {
            if k % n != 0 {
                let t = k as f64 * std::f64::consts::PI / n as f64;
                worst_zero = worst_zero.max(interference_factor(t, n)?.norm());
            }
        }
        for t in [1e-9, -1e-9, std::f64::consts::PI + 1e-9] {
            worst_peak = worst_peak.max((interference_factor(t, n)?.norm() - n as f64).abs());
        }
    }
    d.metric("max_sum_error", worst_sum);
    d.metric("max_zero_modulus", worst_zero);
    d.metric("max_peak_error", worst_peak);
    d.require(worst_sum < 1e-9, format!("|H - sum| = {worst_sum:.2e}"));
    d.require(worst_zero < 1e-9, format!("|H(k pi/N)| = {worst_zero:.2e}"));
    d.require(worst_peak < 1e-6, format!("||H(0)| - N| = {worst_peak:.2e}"));
    Ok(d.done(format!("max |H - sum| = {worst_sum:.1e}, zeros {worst_zero:.1e}")))
}

const TARGET_ISLAND_NM: (f64, f64) = (1553.7, 1543.8);

fn target_island(islands: &[IslandReport]) -> Option<&IslandReport> {
    let dist = |i: &IslandReport| (i.centroid_nm.0 - TARGET_ISLAND_NM.0).hypot(i.centroid_nm.1 - TARGET_ISLAND_NM.1);
    islands.iter().min_by(|a, b| dist(a).total_cmp(&dist(b)))
}

fn check_2(cfg: &JobConfig) -> Result<(Draft, Option<(Jsf, IslandReport)>)> {
    let start = Instant::now();
    let mut d = Draft::new();
    let grid = cfg.grid.build()?;
    let (jsf, islands) = islands_for(&cfg.nli, &grid, cfg.islands.threshold)?;
    let elapsed = start.elapsed().as_secs_f64();
    d.metric("islands", islands.len() as f64);
    d.metric("runtime_s", elapsed);
    d.require(islands.len() >= 3, format!("{} islands", islands.len()));
    let found = target_island(&islands).cloned();
    if let Some(isl) = &found {
        let (ds, di) = (isl.centroid_nm.0 - TARGET_ISLAND_NM.0, isl.centroid_nm.1 - TARGET_ISLAND_NM.1);
        d.metric("centroid_signal_nm", isl.centroid_nm.0);
        d.metric("centroid_idler_nm", isl.centroid_nm.1);
        d.require(
            ds.abs() <= 0.5 && di.abs() <= 0.5,
            format!("nearest centroid ({:.2}, {:.2}) nm", isl.centroid_nm.0, isl.centroid_nm.1),
        );
    } else {
        d.require(false, "no island");
    }
    d.require(elapsed < 30.0, format!("runtime {elapsed:.1} s"));
    let summary = found
        .as_ref()
        .map(|i| format!("{} islands, centroid ({:.2}, {:.2}) nm", islands.len(), i.centroid_nm.0, i.centroid_nm.1))
        .unwrap_or_default();
    Ok((d.done(summary), found.map(|i| (jsf, i))))
}

/// 1.5 nm filters on the island nearest the target position.
fn round_island_filter(cfg: &JobConfig) -> Result<(Jsf, FilterSpec)> {
    let (_, found) = check_2(cfg)?;
    let (jsf, isl) = found.ok_or(crate::error::NliError::Degenerate("no island found".into()))?;
    Ok((jsf, FilterSpec::centered(isl.centroid_nm.0, isl.centroid_nm.1, 1.5)))
}

fn check_3(cfg: &JobConfig) -> Result<Draft> {
    let mut d = Draft::new();
    let (jsf, filter) = round_island_filter(cfg)?;
    let h = heralding_efficiencies(&jsf, &filter)?;
    let schmidt = schmidt_decompose_with(
        &apply_filter(&jsf, &filter)?,
        SchmidtOptions {
            crop_below: 1e-9,
            with_modes: false,
        },
    )?;
    let m = schmidt.mode_number;
    d.metric("mode_number", m);
    d.metric("h_s", h.h_s_spectral);
    d.metric("h_i", h.h_i_spectral);
    d.require((1.0..=1.1).contains(&m), format!("M = {m:.4}"));
    d.require(h.h_s_spectral >= 0.85, format!("h_s = {:.3}", h.h_s_spectral));
    d.require(h.h_i_spectral >= 0.85, format!("h_i = {:.3}", h.h_i_spectral));
    Ok(d.done(format!("M = {m:.4}, h_s = {:.3}, h_i = {:.3}", h.h_s_spectral, h.h_i_spectral)))
}

/// Gaussian JSA `exp(−u²/2A² − v²/2B²)` in rotated coordinates `u, v = (x ± y)/√2`,
/// with `x, y` the offsets from `center` in units of `scale`. Its Schmidt number is `(A² + B²)/(2AB)`.
pub fn double_gaussian_jsf(points: usize, half_width: f64, a: f64, b: f64, center: f64, scale: f64) -> Result<Jsf> {
    let x: Vec<f64> = (0..points)
        .map(|k| -half_width + 2.0 * half_width * k as f64 / (points - 1) as f64)
        .collect();
    let axis: Vec<f64> = x.iter().map(|x| center + x * scale).collect();
    let grid = FrequencyGrid::new(axis.clone(), axis)?;
    let amp = DMatrix::from_fn(points, points, |r, c| {
        let u = (x[r] + x[c]) / std::f64::consts::SQRT_2;
        let v = (x[r] - x[c]) / std::f64::consts::SQRT_2;
        Complex64::new((-u * u / (2.0 * a * a) - v * v / (2.0 * b * b)).exp(), 0.0)
    });
    Jsf::from_amplitude(grid, amp)
}

pub fn gaussian_schmidt_number(a: f64, b: f64) -> f64 {
    (a * a + b * b) / (2.0 * a * b)
}

fn check_4() -> Result<Draft> {
    let mut d = Draft::new();
    let (a, b) = (1.8, 0.6);
    let k = schmidt_decompose(&double_gaussian_jsf(160, 10.0, a, b, 0.0, 1.0)?)?.mode_number;
    let exact = gaussian_schmidt_number(a, b);
    let rel = (k - exact).abs() / exact;
    let sep = schmidt_decompose(&double_gaussian_jsf(160, 10.0, 1.0, 1.0, 0.0, 1.0)?)?.mode_number;
    d.metric("correlated_mode_number", k);
    d.metric("analytic_mode_number", exact);
    d.metric("relative_error", rel);
    d.metric("separable_excess", sep - 1.0);
    d.require(rel < 0.01, format!("K = {k:.5} vs {exact:.5}"));
    d.require(sep - 1.0 < 1e-6, format!("separable M - 1 = {:.2e}", sep - 1.0));
    Ok(d.done(format!("K = {k:.4} vs {exact:.4}, separable M - 1 = {:.1e}", sep - 1.0)))
}

/// Two Schmidt modes with the given mode number.
pub fn two_mode_weights(mode_number: f64) -> Vec<f64> {
    let l1 = 0.5 * (1.0 + (2.0 / mode_number - 1.0).sqrt());
    vec![l1, 1.0 - l1]
}

fn lossless_source(weights: Vec<f64>, h: (f64, f64)) -> SourceModel {
    SourceModel {
        schmidt_weights: weights,
        spectral_heralding: h,
        ..SourceModel::ideal(0.0)
    }
}

const PAPER_G2: (f64, f64) = (0.219, 0.008);

/// Heralded `g⁽²⁾` of the simulator's photon model by enumeration (no Raman,
/// no dark counts, no dead time): thermal pair numbers per Schmidt mode, pair
/// classes per pair, threshold clicks, 50/50 routing to the split detectors.
pub fn heralded_g2_exact(src: &SourceModel, herald: f64, eta_a: f64, eta_b: f64) -> f64 {
    const N_MAX: usize = 12;
    let mut pn = vec![0.0; N_MAX + 1];
    pn[0] = 1.0;
    for w in &src.schmidt_weights {
        let m = src.mean_pairs_per_pulse * w;
        let geo: Vec<f64> = (0..=N_MAX).map(|n| m.powi(n as i32) / (1.0 + m).powi(n as i32 + 1)).collect();
        let mut next = vec![0.0; N_MAX + 1];
        for (i, a) in pn.iter().enumerate() {
            for (j, b) in geo.iter().enumerate().take(N_MAX + 1 - i) {
                next[i + j] += a * b;
            }
        }
        pn = next;
    }
    let q = src.pair_classes();
    let (ts, ti) = (src.channel_transmission_signal, src.channel_transmission_idler);
    let ln_fact = |n: usize| (1..=n).map(|k| (k as f64).ln()).sum::<f64>();
    let (mut h, mut ha, mut hb, mut hab) = (0.0, 0.0, 0.0, 0.0);
    for (n, p) in pn.iter().enumerate() {
        for nb in 0..=n {
            for ns in 0..=(n - nb) {
                let ni = n - nb - ns;
                let w = p
                    * (ln_fact(n) - ln_fact(nb) - ln_fact(ns) - ln_fact(ni)).exp()
                    * q.both.powi(nb as i32)
                    * q.signal_only.powi(ns as i32)
                    * q.idler_only.powi(ni as i32);
                let (sig, idl) = ((nb + ns) as i32, (nb + ni) as i32);
                let p_h = 1.0 - (1.0 - ti * herald).powi(idl);
                let no_a = (1.0 - ts * eta_a / 2.0).powi(sig);
                let no_b = (1.0 - ts * eta_b / 2.0).powi(sig);
                let none = (1.0 - ts * (eta_a + eta_b) / 2.0).powi(sig);
                h += w * p_h;
                ha += w * p_h * (1.0 - no_a);
                hb += w * p_h * (1.0 - no_b);
                hab += w * p_h * (1.0 - no_a - no_b + none);
            }
        }
    }
    hab * h / (ha * hb)
}

fn check_5(seed: u64) -> Result<Draft> {
    let start = Instant::now();
    let mut d = Draft::new();
    let (rc, h, m) = (0.043, (0.91, 0.905), 1.04);
    let mut src = lossless_source(two_mode_weights(m), h);
    src.mean_pairs_per_pulse = rc / src.pair_classes().both;
    let herald = DetectorSpec::ideal(0.043);
    let split = DetectorSpec::ideal(1.0);
    let rec = simulate_hbt(&src, &herald, &split, &split, 10_000_000, seed)?;
    let hbt = rec.hbt.expect("HBT run carries HBT counts");
    let g = g2_from_hbt(hbt.herald, hbt.herald_a, hbt.herald_b, hbt.herald_ab)?;
    let formula = g2_heralded_prediction(rc, h.0, h.1, src.mode_number())?;
    let exact = heralded_g2_exact(&src, herald.efficiency, split.efficiency, split.efficiency);
    let elapsed = start.elapsed().as_secs_f64();
    // The formula is the leading order in the pair rate; `exact` keeps every order.
    d.metric("g2_model_exact", exact);
    d.metric("g2_mc", g.value);
    d.metric("g2_mc_stderr", g.stderr);
    d.metric("g2_formula", formula);
    d.metric("runtime_s", elapsed);
    d.require(
        (g.value - formula).abs() <= 3.0 * g.stderr,
        format!("MC {:.4} ± {:.4} vs formula {formula:.4}", g.value, g.stderr),
    );
    let combined = g.stderr.hypot(PAPER_G2.1);
    d.require(
        (formula - PAPER_G2.0).abs() <= 2.0 * combined,
        format!("formula {formula:.4} vs measured {}", PAPER_G2.0),
    );
    d.require(elapsed < 120.0, format!("runtime {elapsed:.1} s"));
    if !d.passed {
        d.detail = format!("{}; all-order model value {exact:.4}", d.detail);
    }
    Ok(d.done(format!("MC {:.4} ± {:.4}, formula {formula:.4}", g.value, g.stderr)))
}

/// Power-sweep detectors: no dead time, no dark counts.
const SWEEP_EFFICIENCY: f64 = 0.5;

/// Raman share of the signal singles at `power`, from the linear term of a power sweep.
fn fitted_raman_fraction(
    template: &SourceModel,
    scaling: &PowerScaling,
    powers: &[f64],
    power: f64,
    (efficiency, pulses): (f64, u64),
    seed: u64,
) -> Result<f64> {
    let det = DetectorSpec::ideal(efficiency);
    let pts = simulate_power_sweep(template, scaling, powers, &det, &det, pulses, seed)?;
    let a = analyze_power_sweep(&pts, &det, &det)?;
    Ok(a.fit_signal.linear_fraction(power))
}

fn scaling_at(model: &SourceModel, power: f64) -> PowerScaling {
    PowerScaling {
        pairs_per_w2: model.mean_pairs_per_pulse / (power * power),
        raman_signal_per_w: model.raman_signal_mean / power,
        raman_idler_per_w: model.raman_idler_mean / power,
    }
}

fn check_6(cfg: &JobConfig, seed: u64) -> Result<Draft> {
    let mut d = Draft::new();
    let clean = lossless_source(two_mode_weights(1.04), (0.91, 0.905)).with_signal_brightness(0.02);
    let oracle = g2_unheralded_prediction(clean.mode_number())?;
    let det = DetectorSpec::ideal(SWEEP_EFFICIENCY);
    let blind = DetectorSpec::ideal(0.0);
    let n = 60_000_000;
    let run = |src: &SourceModel| -> Result<(f64, f64)> {
        let h = simulate_hbt(src, &blind, &det, &det, n, seed)?.hbt.expect("HBT counts");
        let g = g2_unheralded(n, h.a, h.b, h.ab)?;
        Ok((g.value, g.stderr))
    };
    let (g_free, sigma) = run(&clean)?;
    d.metric("g2s_mc", g_free);
    d.metric("g2s_mc_stderr", sigma);
    d.metric("g2s_oracle", oracle);
    d.require(
        (g_free - oracle).abs() <= 3.0 * sigma,
        format!("g2s {g_free:.4} ± {sigma:.4} vs {oracle:.4}"),
    );

    // Same pair draws with Raman added, then corrected with the fitted fraction.
    let power = cfg.source.operating_power_w;
    let dirty = clean.clone().with_raman_fraction(cfg.source.raman_fraction);
    let r_fit = fitted_raman_fraction(
        &dirty,
        &scaling_at(&dirty, power),
        &cfg.sweep.powers_w,
        power,
        (SWEEP_EFFICIENCY, 20_000_000),
        derive_seed(seed, 1),
    )?;
    let (g_raw, _) = run(&dirty)?;
    let g_corr = raman_correct_g2s(g_raw, r_fit, cfg.source.raman_statistics)?;
    let rel = (g_corr - g_free).abs() / g_free;
    d.metric("raman_fraction_fit", r_fit);
    d.metric("g2s_raw", g_raw);
    d.metric("g2s_corrected", g_corr);
    d.metric("relative_error", rel);
    d.require(rel <= 0.02, format!("corrected {g_corr:.4} vs Raman-free {g_free:.4}"));
    Ok(d.done(format!(
        "g2s {g_free:.4} ± {sigma:.4} (oracle {oracle:.4}); raw {g_raw:.3} -> {g_corr:.4} with r = {r_fit:.3}"
    )))
}

fn dip_points_from_counts(scan: &crate::sim::HomScan) -> Vec<DipPoint> {
    scan.points
        .iter()
        .map(|p| DipPoint {
            delay_s: p.delay_s,
            value: p.fourfold as f64,
            sigma: (p.fourfold.max(1) as f64).sqrt(),
        })
        .collect()
}

fn dip_points_from_rates(scan: &crate::sim::HomScan) -> Vec<DipPoint> {
    scan.points
        .iter()
        .map(|p| DipPoint {
            delay_s: p.delay_s,
            value: p.rate,
            sigma: p.rate_stderr,
        })
        .collect()
}

fn exact_visibility(s: &SourceModel, dets: &HomDetectors, xi: f64, truncation: PairTruncation) -> Result<f64> {
    let far = hom_fourfold_exact(s, s, dets, 0.0, truncation)?;
    let near = hom_fourfold_exact(s, s, dets, xi, truncation)?;
    Ok(1.0 - near / far)
}

fn check_7(cfg: &JobConfig, seed: u64) -> Result<Draft> {
    let start = Instant::now();
    let mut d = Draft::new();

    // Ideal part: M = 1.04 Gaussian modes, negligible gain, no background.
    let r = 1.04 + (1.04f64 * 1.04 - 1.0).sqrt();
    let center = wavelength_nm_to_omega(1550.0);
    let ideal_jsf = double_gaussian_jsf(128, 10.0, 0.8 * r, 0.8, center, 1e12)?;
    let ideal_modes = schmidt_decompose(&ideal_jsf)?;
    let ideal_src = SourceModel {
        schmidt_weights: ideal_modes.weights[..ideal_modes.kept_modes()].to_vec(),
        ..SourceModel::ideal(1e-4)
    };
    let ideal_dets = HomDetectors::uniform(DetectorSpec::ideal(cfg.hom.detector.efficiency));
    let delays: Vec<f64> = (-20..=20).map(|k| k as f64 * 0.25e-12).collect();
    let scan = overlap_scan(&ideal_modes, &ideal_modes, &delays)?;
    let far = hom_fourfold_exact(&ideal_src, &ideal_src, &ideal_dets, 0.0, PairTruncation::AtTwo)?;
    let opts = HomOptions {
        samples: 1_000_000,
        // About 10⁵ fourfolds per delay far from the dip.
        acquisition_pulses: (1e5 / far).round() as u64,
        truncation: PairTruncation::AtTwo,
    };
    let ideal = simulate_hom(&ideal_src, &ideal_src, &ideal_dets, &scan, &opts, seed)?;
    let ideal_fit = fit_hom_dip(&dip_points_from_counts(&ideal))?;
    let v_ideal = ideal_fit.visibility;
    let v_expected = 1.0 / ideal_modes.mode_number;
    d.metric("ideal_visibility", v_ideal);
    d.metric("ideal_visibility_err", ideal_fit.visibility_err);
    d.metric("ideal_expected", v_expected);
    d.require(
        (v_ideal - v_expected).abs() <= 3.0 * ideal_fit.visibility_err,
        format!("ideal V {v_ideal:.4} ± {:.4} vs 1/M {v_expected:.4}", ideal_fit.visibility_err),
    );

    // Paper-like part: island source, brightness and Raman fraction from the config.
    let bundle = cfg.source_bundle()?;
    let power = cfg.source.operating_power_w;
    let r_fit = fitted_raman_fraction(
        &bundle.model,
        &cfg.power_scaling(&bundle.model),
        &cfg.sweep.powers_w,
        power,
        // Low efficiency keeps click saturation out of the linear term.
        (cfg.hom.detector.efficiency, 60_000_000),
        derive_seed(seed, 1),
    )?;
    let clean = bundle.model.clone().with_raman_fraction(0.0);
    let src = clean.clone().with_raman_fraction(r_fit);
    let dets = cfg.hom.detectors();
    let scan = overlap_scan(&bundle.schmidt, &bundle.schmidt, &cfg.hom.delays_s())?;
    let hom = simulate_hom(&src, &src, &dets, &scan, &cfg.hom.options(), derive_seed(seed, 2))?;
    let fit = fit_hom_dip(&dip_points_from_rates(&hom))?;
    let raw = VisibilityReport::from_fit(&fit);
    let counts_fit = fit_hom_dip(&dip_points_from_counts(&hom)).ok();

    let background = BackgroundFloor {
        fractions: [r_fit; 4],
        singles: hom.baseline.singles,
        threefolds: hom.baseline.threefolds,
        fourfold: hom.baseline.fourfold,
    };
    let xi0 = overlap_scan(&bundle.schmidt, &bundle.schmidt, &[0.0])?[0].1;
    let v_single = exact_visibility(&clean, &dets, xi0, PairTruncation::SinglePairOnly)?;
    let v_multi = exact_visibility(&clean, &dets, xi0, PairTruncation::AtTwo)?;
    let multipair = MultipairCorrection {
        delta_v: v_single - v_multi,
        delta_v_err: 0.0,
    };
    let report = correct_visibility(&raw, &background, &multipair)?;
    let elapsed = start.elapsed().as_secs_f64();

    d.metric("raman_fraction_fit", r_fit);
    d.metric("v_raw", report.v_raw);
    d.metric("v_raw_err", report.v_raw_err);
    d.metric("v_raman_corrected", report.v_raman_corrected);
    d.metric("v_multipair_corrected", report.v_multipair_corrected);
    d.metric("delta_v_multipair", multipair.delta_v);
    d.metric("mode_overlap_zero_delay", xi0);
    if let Some(c) = counts_fit {
        d.metric("v_raw_counts", c.visibility);
        d.metric("v_raw_counts_err", c.visibility_err);
    }
    d.metric("runtime_s", elapsed);
    d.require(
        (0.75..=0.87).contains(&report.v_raw),
        format!("raw V {:.4} ± {:.4}", report.v_raw, report.v_raw_err),
    );
    d.require(
        report.v_multipair_corrected >= 0.93,
        format!("corrected V {:.4}", report.v_multipair_corrected),
    );
    d.require(elapsed < 300.0, format!("runtime {elapsed:.1} s"));
    Ok(d.done(format!(
        "ideal V {v_ideal:.4} vs {v_expected:.4}; raw {:.3} -> Raman {:.3} -> multi-pair {:.3}",
        report.v_raw, report.v_raman_corrected, report.v_multipair_corrected
    )))
}

fn check_8(cfg: &JobConfig, seed: u64) -> Result<Draft> {
    let mut d = Draft::new();
    let bundle = cfg.source_bundle()?;
    let power = cfg.source.operating_power_w;
    let t = 0.98;
    let mut template = bundle.model.clone();
    template.channel_transmission_signal = t;
    template.channel_transmission_idler = t;
    let template = template.with_signal_brightness(0.01).with_raman_fraction(0.2);
    let scaling = scaling_at(&template, power);
    let dark = 1e-6;
    let det = DetectorSpec {
        dark_count_probability_per_gate: dark,
        ..DetectorSpec::ideal(SWEEP_EFFICIENCY)
    };
    let pts = simulate_power_sweep(&template, &scaling, &cfg.sweep.powers_w, &det, &det, 20_000_000, seed)?;
    let a = analyze_power_sweep(&pts, &det, &det)?;
    let q = template.pair_classes();
    let gain = SWEEP_EFFICIENCY * t;
    let c1 = a.fit_signal.s1 / gain;
    let c2 = a.fit_signal.s2 / (gain * (q.both + q.signal_only));
    let e1 = (c1 - scaling.raman_signal_per_w).abs() / scaling.raman_signal_per_w;
    let e2 = (c2 - scaling.pairs_per_w2).abs() / scaling.pairs_per_w2;
    let h_true = (t * template.spectral_heralding.0, t * template.spectral_heralding.1);
    let (hs, hi) = (a.heralding_signal.value, a.heralding_idler.value);
    d.metric("c1_relative_error", e1);
    d.metric("c2_relative_error", e2);
    d.metric("h_s", hs);
    d.metric("h_i", hi);
    d.metric("h_s_configured", h_true.0);
    d.metric("h_i_configured", h_true.1);
    d.require(e1 <= 0.05, format!("c1 off by {:.1}%", 100.0 * e1));
    d.require(e2 <= 0.05, format!("c2 off by {:.1}%", 100.0 * e2));
    d.require((hs - h_true.0).abs() <= 0.02, format!("h_s {hs:.3} vs {:.3}", h_true.0));
    d.require((hi - h_true.1).abs() <= 0.02, format!("h_i {hi:.3} vs {:.3}", h_true.1));
    Ok(d.done(format!(
        "c1 {:.1}%, c2 {:.1}%, h_s {hs:.3}/{:.3}, h_i {hi:.3}/{:.3}",
        100.0 * e1,
        100.0 * e2,
        h_true.0,
        h_true.1
    )))
}

fn check_9(cfg: &JobConfig) -> Result<Draft> {
    let mut d = Draft::new();
    let (jsf, filter) = round_island_filter(cfg)?;
    let nli = heralding_efficiencies(&jsf, &filter)?;
    let mut single = cfg.nli;
    single.stages = 1;
    single.dsf.length_m = 450.0;
    let plain = heralding_efficiencies(&compute_jsf(&jsf.grid, &single)?, &filter)?;
    d.metric("h_s_nli", nli.h_s_spectral);
    d.metric("h_i_nli", nli.h_i_spectral);
    d.metric("h_s_single_stage", plain.h_s_spectral);
    d.metric("h_i_single_stage", plain.h_i_spectral);
    d.require(
        plain.h_s_spectral < nli.h_s_spectral && plain.h_i_spectral < nli.h_i_spectral,
        format!(
            "single-stage ({:.3}, {:.3}) vs NLI ({:.3}, {:.3})",
            plain.h_s_spectral, plain.h_i_spectral, nli.h_s_spectral, nli.h_i_spectral
        ),
    );
    Ok(d.done(format!(
        "single-stage ({:.3}, {:.3}) < NLI ({:.3}, {:.3})",
        plain.h_s_spectral, plain.h_i_spectral, nli.h_s_spectral, nli.h_i_spectral
    )))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_mode_weights_hit_mode_number() {
        let w = two_mode_weights(1.04);
        let m = 1.0 / w.iter().map(|x| x * x).sum::<f64>();
        assert!((m - 1.04).abs() < 1e-12);
    }

    #[test]
    fn fast_checks_pass() {
        for id in [1, 4] {
            let o = run_check(id, &JobConfig::default(), 1);
            assert!(o.passed, "{}", o.line());
        }
    }
}
