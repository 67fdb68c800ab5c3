//! JSI islands and design-space sweeps.

use std::collections::VecDeque;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{config_err, NliError, Result};
use crate::modal::{heralding_efficiencies, schmidt_decompose_with, SchmidtOptions};
use crate::spectral::{apply_filter, compute_jsf, theta, FilterSpec, FrequencyGrid, Jsf, NliConfig};
use crate::units;

pub const DEFAULT_THRESHOLD: f64 = 0.1;

/// Islands lighter than this share of the JSI are not design candidates.
pub const MIN_CANDIDATE_MASS: f64 = 0.005;

/// Filter evaluation for one bandwidth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IslandScore {
    pub bandwidth_nm: f64,
    pub mode_number: f64,
    pub h_s: f64,
    pub h_i: f64,
    /// Share of all pairs with both photons in band.
    pub pair_mass: f64,
    /// h_s·h_i·pair_mass/M.
    pub composite: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IslandReport {
    /// 1-based rank by |ω_s − ω_i| of the centroid.
    pub index: usize,
    /// (λ_s, λ_i) of the intensity centroid.
    pub centroid_nm: (f64, f64),
    pub centroid_omega: (f64, f64),
    /// ω_s − ω_i at the centroid.
    pub detuning: f64,
    /// θ/π at the centroid, set by [`annotate_orders`].
    pub order: Option<f64>,
    /// Bounding box of the half-maximum region, (Δλ_s, Δλ_i).
    pub extent_nm: (f64, f64),
    /// Half-maximum extents along the principal axes, larger first (rad/s).
    pub principal_extents: (f64, f64),
    pub roundness: f64,
    pub island_mass: f64,
    pub peak: f64,
    pub pixels: usize,
    pub touches_edge: bool,
    pub scores: Vec<IslandScore>,
    /// Score maximizing h_s·h_i/M.
    pub best: Option<IslandScore>,
}

impl IslandReport {
    /// Nearest integer interference order m (θ ≈ mπ).
    pub fn interference_order(&self) -> Option<i64> {
        self.order.map(|o| o.round() as i64)
    }
}

/// 8-connected components of `jsi > threshold·max`. Labels start at 1, 0 is background.
pub fn label_islands(jsi: &DMatrix<f64>, threshold_fraction: f64) -> (DMatrix<u32>, u32) {
    let (nr, nc) = jsi.shape();
    let mut labels = DMatrix::<u32>::zeros(nr, nc);
    let max = jsi.iter().cloned().fold(0.0, f64::max);
    if !(max > 0.0) {
        return (labels, 0);
    }
    let cut = threshold_fraction * max;
    let mut next = 0;
    let mut queue = VecDeque::new();
    for r0 in 0..nr {
        for c0 in 0..nc {
            if labels[(r0, c0)] != 0 || !(jsi[(r0, c0)] > cut) {
                continue;
            }
            next += 1;
            labels[(r0, c0)] = next;
            queue.push_back((r0, c0));
            while let Some((r, c)) = queue.pop_front() {
                for dr in -1i64..=1 {
                    for dc in -1i64..=1 {
                        let (rr, cc) = (r as i64 + dr, c as i64 + dc);
                        if rr < 0 || cc < 0 || rr >= nr as i64 || cc >= nc as i64 {
                            continue;
                        }
                        let (rr, cc) = (rr as usize, cc as usize);
                        if labels[(rr, cc)] == 0 && jsi[(rr, cc)] > cut {
                            labels[(rr, cc)] = next;
                            queue.push_back((rr, cc));
                        }
                    }
                }
            }
        }
    }
    (labels, next)
}

fn nm_per_rad(omega: f64) -> f64 {
    2.0 * std::f64::consts::PI * units::C / (omega * omega) * 1e9
}

/// Connected regions above `threshold_fraction` of the global maximum,
/// ordered by |detuning| and then detuning.
pub fn detect_islands(jsi: &DMatrix<f64>, grid: &FrequencyGrid, threshold_fraction: f64) -> Result<Vec<IslandReport>> {
    if !(threshold_fraction > 0.0 && threshold_fraction < 1.0) {
        return Err(config_err("island threshold must lie in (0, 1)"));
    }
    if jsi.nrows() != grid.n_signal() || jsi.ncols() != grid.n_idler() {
        return Err(NliError::GridMismatch("JSI and grid shapes differ".into()));
    }
    let (labels, count) = label_islands(jsi, threshold_fraction);
    let total: f64 = jsi.iter().sum();
    let (ws, wi) = (grid.signal_omega(), grid.idler_omega());
    let (dws, dwi) = (grid.d_omega_signal(), grid.d_omega_idler());
    let (nr, nc) = jsi.shape();

    let mut pixels: Vec<Vec<(usize, usize)>> = vec![Vec::new(); count as usize];
    for c in 0..nc {
        for r in 0..nr {
            let l = labels[(r, c)];
            if l > 0 {
                pixels[l as usize - 1].push((r, c));
            }
        }
    }

    let mut out: Vec<IslandReport> = pixels
        .iter()
        .map(|px| {
            let mass: f64 = px.iter().map(|&p| jsi[p]).sum();
            let peak = px.iter().map(|&p| jsi[p]).fold(0.0, f64::max);
            let cs = px.iter().map(|&(r, c)| jsi[(r, c)] * ws[r]).sum::<f64>() / mass;
            let ci = px.iter().map(|&(r, c)| jsi[(r, c)] * wi[c]).sum::<f64>() / mass;
            let touches_edge = px.iter().any(|&(r, c)| r == 0 || c == 0 || r == nr - 1 || c == nc - 1);

            let half: Vec<(f64, f64)> = px
                .iter()
                .filter(|&&p| jsi[p] >= 0.5 * peak)
                .map(|&(r, c)| (ws[r], wi[c]))
                .collect();
            let n = half.len() as f64;
            let (mx, my) = (
                half.iter().map(|p| p.0).sum::<f64>() / n,
                half.iter().map(|p| p.1).sum::<f64>() / n,
            );
            let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
            for &(x, y) in &half {
                sxx += (x - mx) * (x - mx);
                syy += (y - my) * (y - my);
                sxy += (x - mx) * (y - my);
            }
            // Principal direction of the 2x2 scatter matrix.
            let angle = 0.5 * (2.0 * sxy).atan2(sxx - syy);
            let (ca, sa) = (angle.cos(), angle.sin());
            let span = |f: &dyn Fn(f64, f64) -> f64| {
                let (lo, hi) = half
                    .iter()
                    .map(|&(x, y)| f(x - mx, y - my))
                    .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
                hi - lo
            };
            let cell = 0.5 * (dws + dwi);
            let e1 = span(&|x, y| x * ca + y * sa) + cell;
            let e2 = span(&|x, y| -x * sa + y * ca) + cell;
            let (major, minor) = if e1 >= e2 { (e1, e2) } else { (e2, e1) };
            let bs = span(&|x, _| x) + dws;
            let bi = span(&|_, y| y) + dwi;

            IslandReport {
                index: 0,
                centroid_nm: (units::omega_to_wavelength_nm(cs), units::omega_to_wavelength_nm(ci)),
                centroid_omega: (cs, ci),
                detuning: cs - ci,
                order: None,
                extent_nm: (bs * nm_per_rad(cs), bi * nm_per_rad(ci)),
                principal_extents: (major, minor),
                roundness: minor / major,
                island_mass: if total > 0.0 { mass / total } else { 0.0 },
                peak,
                pixels: px.len(),
                touches_edge,
                scores: Vec::new(),
                best: None,
            }
        })
        .collect();
    out.sort_by(|a, b| {
        a.detuning
            .abs()
            .total_cmp(&b.detuning.abs())
            .then(a.detuning.total_cmp(&b.detuning))
    });
    for (k, isl) in out.iter_mut().enumerate() {
        isl.index = k + 1;
    }
    Ok(out)
}

/// Fills `order = θ/π` from the SMF phase at each centroid.
pub fn annotate_orders(islands: &mut [IslandReport], config: &NliConfig) -> Result<()> {
    for isl in islands {
        let th = theta(isl.centroid_omega.0, isl.centroid_omega.1, config)?;
        isl.order = Some(th / std::f64::consts::PI);
    }
    Ok(())
}

/// Evaluates centred square filters of each bandwidth on an island.
pub fn score_island(jsf: &Jsf, island: &IslandReport, bandwidths_nm: &[f64]) -> Result<IslandReport> {
    if bandwidths_nm.is_empty() {
        return Err(config_err("no filter bandwidths to score"));
    }
    let (ls, li) = island.centroid_nm;
    let mut out = island.clone();
    out.scores = bandwidths_nm
        .iter()
        .map(|&bw| {
            let filter = FilterSpec::centered(ls, li, bw);
            let h = heralding_efficiencies(jsf, &filter)?;
            let filtered = apply_filter(jsf, &filter)?;
            let schmidt = schmidt_decompose_with(
                &filtered,
                SchmidtOptions {
                    crop_below: 1e-9,
                    with_modes: false,
                },
            )?;
            let m = schmidt.mode_number;
            Ok(IslandScore {
                bandwidth_nm: bw,
                mode_number: m,
                h_s: h.h_s_spectral,
                h_i: h.h_i_spectral,
                pair_mass: h.pair_pass_probability,
                composite: h.h_s_spectral * h.h_i_spectral * h.pair_pass_probability / m,
            })
        })
        .collect::<Result<_>>()?;
    out.best = out
        .scores
        .iter()
        .copied()
        .max_by(|a, b| (a.h_s * a.h_i / a.mode_number).total_cmp(&(b.h_s * b.h_i / b.mode_number)));
    Ok(out)
}

/// The roundest island away from the diagonal and the grid edge.
pub fn roundest_island(islands: &[IslandReport]) -> Option<&IslandReport> {
    islands
        .iter()
        .filter(|i| i.island_mass >= MIN_CANDIDATE_MASS && !i.touches_edge && i.order.is_none_or(|o| o >= 0.5))
        .max_by(|a, b| a.roundness.total_cmp(&b.roundness).then(b.index.cmp(&a.index)))
}

/// Mean JSI along the segment joining the order-1 and order-2 island
/// centroids on the same side of the diagonal, over the larger of the two
/// peaks. Lower means better separated islands.
pub fn separation_contrast(jsf: &Jsf, islands: &[IslandReport]) -> Option<f64> {
    let jsi = jsf.jsi();
    let side = |i: &&IslandReport| i.detuning < 0.0;
    let find = |m: i64| {
        islands
            .iter()
            .filter(side)
            .filter(|i| i.interference_order() == Some(m))
            .max_by(|a, b| a.island_mass.total_cmp(&b.island_mass))
    };
    let (a, b) = (find(1)?, find(2)?);
    let (ws, wi) = (jsf.grid.signal_omega(), jsf.grid.idler_omega());
    let idx = |axis: &[f64], w: f64| {
        let step = axis[1] - axis[0];
        (((w - axis[0]) / step).round().max(0.0) as usize).min(axis.len() - 1)
    };
    let samples = 400;
    let mut sum = 0.0;
    for k in 0..=samples {
        let t = k as f64 / samples as f64;
        let s = a.centroid_omega.0 + t * (b.centroid_omega.0 - a.centroid_omega.0);
        let i = a.centroid_omega.1 + t * (b.centroid_omega.1 - a.centroid_omega.1);
        sum += jsi[(idx(ws, s), idx(wi, i))];
    }
    Some(sum / (samples + 1) as f64 / a.peak.max(b.peak))
}

/// Value ranges explored by [`sweep_design`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignRanges {
    pub pump_fwhm_nm: Vec<f64>,
    pub smf_length_m: Vec<f64>,
    pub stages: Vec<u32>,
    pub filter_bandwidths_nm: Vec<f64>,
}

impl Default for DesignRanges {
    fn default() -> Self {
        Self {
            pump_fwhm_nm: vec![0.7, 1.0],
            smf_length_m: vec![11.0, 20.0],
            stages: vec![2, 3, 4],
            filter_bandwidths_nm: vec![1.0, 1.5],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DesignScores {
    pub mode_number: f64,
    pub h_s: f64,
    pub h_i: f64,
    /// Share of pairs passing both bands.
    pub brightness: f64,
    pub composite: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignPoint {
    pub pump_fwhm_nm: f64,
    pub smf_length_m: f64,
    pub stages: u32,
    pub island_index: Option<usize>,
    pub island_order: Option<f64>,
    pub roundness: Option<f64>,
    pub filter: Option<FilterSpec>,
    pub scores: Option<DesignScores>,
}

/// Islands of one configuration, with orders filled in.
pub fn islands_for(config: &NliConfig, grid: &FrequencyGrid, threshold: f64) -> Result<(Jsf, Vec<IslandReport>)> {
    let jsf = compute_jsf(grid, config)?;
    let mut islands = detect_islands(&jsf.jsi(), grid, threshold)?;
    annotate_orders(&mut islands, config)?;
    Ok((jsf, islands))
}

/// Evaluates one configuration: roundest island, best filter bandwidth.
pub fn evaluate_design(
    config: &NliConfig,
    grid: &FrequencyGrid,
    bandwidths_nm: &[f64],
    threshold: f64,
) -> Result<DesignPoint> {
    let (jsf, islands) = islands_for(config, grid, threshold)?;
    let mut point = DesignPoint {
        pump_fwhm_nm: config.pump.fwhm_bandwidth_nm,
        smf_length_m: config.smf.length_m,
        stages: config.stages,
        island_index: None,
        island_order: None,
        roundness: None,
        filter: None,
        scores: None,
    };
    if let Some(isl) = roundest_island(&islands) {
        let scored = score_island(&jsf, isl, bandwidths_nm)?;
        let best = scored.best.expect("at least one bandwidth");
        point.island_index = Some(scored.index);
        point.island_order = scored.order;
        point.roundness = Some(scored.roundness);
        point.filter = Some(FilterSpec::centered(scored.centroid_nm.0, scored.centroid_nm.1, best.bandwidth_nm));
        point.scores = Some(DesignScores {
            mode_number: best.mode_number,
            h_s: best.h_s,
            h_i: best.h_i,
            brightness: best.pair_mass,
            composite: best.composite,
        });
    }
    Ok(point)
}

/// Exhaustive sweep, sorted by descending composite score (unscored rows last),
/// ties broken by (pump bandwidth, SMF length, stages).
pub fn sweep_design(
    base: &NliConfig,
    ranges: &DesignRanges,
    grid: &FrequencyGrid,
    threshold: f64,
) -> Result<Vec<DesignPoint>> {
    if ranges.pump_fwhm_nm.is_empty()
        || ranges.smf_length_m.is_empty()
        || ranges.stages.is_empty()
        || ranges.filter_bandwidths_nm.is_empty()
    {
        return Err(config_err("every design range needs at least one value"));
    }
    let mut configs = Vec::new();
    for &p in &ranges.pump_fwhm_nm {
        for &l in &ranges.smf_length_m {
            for &n in &ranges.stages {
                let mut c = *base;
                c.pump.fwhm_bandwidth_nm = p;
                c.smf.length_m = l;
                c.stages = n;
                c.validate()?;
                configs.push(c);
            }
        }
    }
    let mut rows: Vec<DesignPoint> = configs
        .par_iter()
        .map(|c| evaluate_design(c, grid, &ranges.filter_bandwidths_nm, threshold))
        .collect::<Result<_>>()?;
    rows.sort_by(|a, b| {
        let sa = a.scores.map(|s| s.composite).unwrap_or(f64::NEG_INFINITY);
        let sb = b.scores.map(|s| s.composite).unwrap_or(f64::NEG_INFINITY);
        sb.total_cmp(&sa)
            .then(a.pump_fwhm_nm.total_cmp(&b.pump_fwhm_nm))
            .then(a.smf_length_m.total_cmp(&b.smf_length_m))
            .then(a.stages.cmp(&b.stages))
    });
    Ok(rows)
}
