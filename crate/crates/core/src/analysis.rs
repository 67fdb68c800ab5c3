//! Reduction of counting data: power fits, accidental subtraction, heralding,
//! g⁽²⁾, Raman correction and the HOM visibility chain.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{config_err, NliError, Result};
use crate::sim::{CountsRecord, DetectorSpec, PowerPoint, RamanStatistics};

/// `N = s₁P + s₂P²`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadraticFit {
    pub s1: f64,
    pub s2: f64,
    /// Row-major `[[var s1, cov], [cov, var s2]]`.
    pub covariance: [[f64; 2]; 2],
    pub residual_norm: f64,
}

impl QuadraticFit {
    pub fn linear_term(&self, power: f64) -> f64 {
        self.s1 * power
    }

    /// N′ = s₂P².
    pub fn quadratic_term(&self, power: f64) -> f64 {
        self.s2 * power * power
    }

    /// Share of the fitted counts carried by the linear term at `power`.
    pub fn linear_fraction(&self, power: f64) -> f64 {
        let l = self.linear_term(power);
        let total = l + self.quadratic_term(power);
        if total > 0.0 {
            l / total
        } else {
            0.0
        }
    }

    pub fn s1_stderr(&self) -> f64 {
        self.covariance[0][0].max(0.0).sqrt()
    }

    pub fn s2_stderr(&self) -> f64 {
        self.covariance[1][1].max(0.0).sqrt()
    }
}

/// Least-squares fit of `N = s₁P + s₂P²` through the origin.
pub fn fit_singles_power(data: &[(f64, f64)]) -> Result<QuadraticFit> {
    let mut powers: Vec<f64> = data.iter().map(|d| d.0).filter(|p| *p != 0.0).collect();
    powers.sort_by(f64::total_cmp);
    powers.dedup();
    if powers.len() < 2 || data.len() < 3 {
        return Err(NliError::Fit(
            "need at least 3 points with 2 distinct non-zero powers".into(),
        ));
    }
    let (mut a11, mut a12, mut a22, mut b1, mut b2) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for &(p, n) in data {
        let p2 = p * p;
        a11 += p2;
        a12 += p2 * p;
        a22 += p2 * p2;
        b1 += p * n;
        b2 += p2 * n;
    }
    let det = a11 * a22 - a12 * a12;
    if !(det.abs() > 1e-12 * a11 * a22) {
        return Err(NliError::Fit("rank-deficient power design".into()));
    }
    let s1 = (a22 * b1 - a12 * b2) / det;
    let s2 = (a11 * b2 - a12 * b1) / det;
    let rss: f64 = data.iter().map(|&(p, n)| (n - s1 * p - s2 * p * p).powi(2)).sum();
    let dof = (data.len() as f64 - 2.0).max(1.0);
    let scale = rss / dof / det;
    Ok(QuadraticFit {
        s1,
        s2,
        covariance: [[a22 * scale, -a12 * scale], [-a12 * scale, a11 * scale]],
        residual_norm: rss.sqrt(),
    })
}

/// C^T = C^c − C^acc. Negative values are returned as-is.
pub fn true_coincidence(c_same: u64, c_adjacent: u64) -> i64 {
    c_same as i64 - c_adjacent as i64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub stderr: f64,
    /// Set when the value falls outside its physical range.
    pub unphysical: bool,
}

/// h = C^T/(η N′).
pub fn heralding_from_counts(c_true: f64, eta: f64, n_fwm: f64) -> Result<Estimate> {
    if !(eta > 0.0 && eta <= 1.0) {
        return Err(config_err("eta must lie in (0, 1]"));
    }
    if !(n_fwm > 0.0) {
        return Err(NliError::Degenerate("quadratic singles term is not positive".into()));
    }
    let value = c_true / (eta * n_fwm);
    let stderr = c_true.abs().max(1.0).sqrt() / (eta * n_fwm);
    Ok(Estimate {
        value,
        stderr,
        unphysical: !(0.0..=1.0).contains(&value),
    })
}

fn ratio_estimate(value: f64, counts: &[u64]) -> Estimate {
    let rel: f64 = counts.iter().map(|&c| 1.0 / (c.max(1) as f64)).sum::<f64>().sqrt();
    let stderr = if value > 0.0 { value * rel } else { rel };
    Estimate {
        value,
        stderr,
        unphysical: value < 0.0,
    }
}

/// Heralded g⁽²⁾ = N₁₂₃N_i/(N₁₂N₁₃).
pub fn g2_from_hbt(n_herald: u64, n_12: u64, n_13: u64, n_123: u64) -> Result<Estimate> {
    if n_12 == 0 || n_13 == 0 {
        return Err(NliError::Degenerate("zero two-fold counts".into()));
    }
    let g = n_123 as f64 * n_herald as f64 / (n_12 as f64 * n_13 as f64);
    Ok(ratio_estimate(g, &[n_herald, n_12, n_13, n_123]))
}

/// Unheralded g⁽²⁾ = N_ab·n/(N_a N_b).
pub fn g2_unheralded(n_pulses: u64, n_a: u64, n_b: u64, n_ab: u64) -> Result<Estimate> {
    if n_a == 0 || n_b == 0 {
        return Err(NliError::Degenerate("zero singles".into()));
    }
    let g = n_ab as f64 * n_pulses as f64 / (n_a as f64 * n_b as f64);
    Ok(ratio_estimate(g, &[n_a, n_b, n_ab]))
}

/// Inverts `g_meas = [g_F(1−r)² + g_R r² + 2r(1−r)]` for the FWM part.
pub fn raman_correct_g2s(g2_measured: f64, raman_fraction: f64, mode: RamanStatistics) -> Result<f64> {
    if !(0.0..1.0).contains(&raman_fraction) {
        return Err(config_err("raman fraction must lie in [0, 1)"));
    }
    let r = raman_fraction;
    let g_r = match mode {
        RamanStatistics::Poissonian => 1.0,
        RamanStatistics::Thermal => 2.0,
    };
    Ok((g2_measured - g_r * r * r - 2.0 * r * (1.0 - r)) / (1.0 - r).powi(2))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DipPoint {
    pub delay_s: f64,
    pub value: f64,
    /// One-sigma error; non-positive means unweighted.
    pub sigma: f64,
}

/// `C(τ) = C∞(1 − V exp(−τ²/2w²))` with standard errors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DipFit {
    pub baseline: f64,
    pub visibility: f64,
    pub width_s: f64,
    pub baseline_err: f64,
    pub visibility_err: f64,
    pub width_err: f64,
    pub reduced_chi2: f64,
    pub iterations: usize,
}

fn dip_model(p: &Vector3<f64>, t: f64) -> (f64, Vector3<f64>) {
    let (c, v, w) = (p[0], p[1], p[2]);
    let e = (-t * t / (2.0 * w * w)).exp();
    let f = c * (1.0 - v * e);
    let grad = Vector3::new(1.0 - v * e, -c * e, -c * v * e * t * t / (w * w * w));
    (f, grad)
}

/// Levenberg–Marquardt fit of a Gaussian dip centred at zero delay.
pub fn fit_hom_dip(scan: &[DipPoint]) -> Result<DipFit> {
    if scan.len() < 5 {
        return Err(NliError::Fit("need at least 5 delay points".into()));
    }
    if scan.iter().any(|p| !p.delay_s.is_finite() || !p.value.is_finite()) {
        return Err(NliError::Fit("non-finite scan data".into()));
    }
    let weighted = scan.iter().all(|p| p.sigma > 0.0);
    let weight = |p: &DipPoint| if weighted { 1.0 / (p.sigma * p.sigma) } else { 1.0 };

    // Start from the outermost points for C∞ and the half-depth crossing for w.
    let mut by_delay: Vec<&DipPoint> = scan.iter().collect();
    by_delay.sort_by(|a, b| a.delay_s.abs().total_cmp(&b.delay_s.abs()));
    let outer = &by_delay[by_delay.len() * 2 / 3..];
    let c0 = outer.iter().map(|p| p.value).sum::<f64>() / outer.len() as f64;
    let floor = by_delay[0].value;
    if !(c0 > 0.0) {
        return Err(NliError::Fit("scan baseline is not positive".into()));
    }
    let v0 = (1.0 - floor / c0).clamp(0.05, 1.0);
    let half = c0 * (1.0 - v0 / 2.0);
    let span = by_delay.last().unwrap().delay_s.abs();
    let w0 = by_delay
        .iter()
        .find(|p| p.value >= half)
        .map(|p| p.delay_s.abs() / (2.0 * std::f64::consts::LN_2).sqrt())
        .filter(|w| *w > 0.0)
        .unwrap_or(span / 4.0);

    let chi2_of = |p: &Vector3<f64>| -> f64 {
        scan.iter()
            .map(|d| weight(d) * (d.value - dip_model(p, d.delay_s).0).powi(2))
            .sum()
    };
    let normal = |p: &Vector3<f64>| -> (Matrix3<f64>, Vector3<f64>) {
        let mut jtj = Matrix3::zeros();
        let mut jtr = Vector3::zeros();
        for d in scan {
            let (f, g) = dip_model(p, d.delay_s);
            let wt = weight(d);
            jtj += wt * g * g.transpose();
            jtr += wt * (d.value - f) * g;
        }
        (jtj, jtr)
    };

    let mut p = Vector3::new(c0, v0, w0);
    let mut chi2 = chi2_of(&p);
    let mut lambda = 1e-3;
    let mut iterations = 0;
    let mut converged = false;
    for it in 0..500 {
        iterations = it + 1;
        let (jtj, jtr) = normal(&p);
        let mut a = jtj;
        for k in 0..3 {
            a[(k, k)] *= 1.0 + lambda;
        }
        let Some(step) = a.lu().solve(&jtr) else {
            lambda *= 10.0;
            continue;
        };
        let mut trial = p + step;
        trial[2] = trial[2].abs();
        let c = chi2_of(&trial);
        if c.is_finite() && c <= chi2 {
            let rel = (chi2 - c) / chi2.max(f64::MIN_POSITIVE);
            let small_step = step.iter().zip(p.iter()).all(|(s, x)| s.abs() <= 1e-10 * x.abs().max(1e-300));
            p = trial;
            chi2 = c;
            lambda = (lambda / 10.0).max(1e-12);
            if rel < 1e-12 || small_step || chi2 == 0.0 {
                converged = true;
                break;
            }
        } else {
            lambda *= 10.0;
            if lambda > 1e12 {
                converged = true;
                break;
            }
        }
    }
    if !converged || !p.iter().all(|x| x.is_finite()) {
        return Err(NliError::Fit(format!(
            "dip fit did not converge after {iterations} iterations (C∞={:.3e}, V={:.3}, w={:.3e}, χ²={chi2:.3e})",
            p[0], p[1], p[2]
        )));
    }
    let dof = (scan.len() as f64 - 3.0).max(1.0);
    let red = chi2 / dof;
    let (jtj, _) = normal(&p);
    let cov = jtj
        .try_inverse()
        .ok_or_else(|| NliError::Fit("singular dip-fit covariance".into()))?;
    let scale = if weighted { red.max(1.0) } else { red };
    let err = |k: usize| (cov[(k, k)] * scale).max(0.0).sqrt();
    Ok(DipFit {
        baseline: p[0],
        visibility: p[1],
        width_s: p[2],
        baseline_err: err(0),
        visibility_err: err(1),
        width_err: err(2),
        reduced_chi2: red,
        iterations,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VisibilityReport {
    pub v_raw: f64,
    pub v_raman_corrected: f64,
    pub v_multipair_corrected: f64,
    pub dip_width_s: f64,
    pub v_raw_err: f64,
    pub v_raman_corrected_err: f64,
    pub v_multipair_corrected_err: f64,
    pub dip_width_err: f64,
}

impl VisibilityReport {
    /// Raw stage only; later stages copy the raw values.
    pub fn from_fit(fit: &DipFit) -> Self {
        let v = fit.visibility.clamp(0.0, 1.0);
        Self {
            v_raw: v,
            v_raman_corrected: v,
            v_multipair_corrected: v,
            dip_width_s: fit.width_s,
            v_raw_err: fit.visibility_err,
            v_raman_corrected_err: fit.visibility_err,
            v_multipair_corrected_err: fit.visibility_err,
            dip_width_err: fit.width_err,
        }
    }
}

/// Uncorrelated-background floor under the fourfold scan, in detector order
/// `[herald1, herald2, out_a, out_b]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BackgroundFloor {
    /// Fraction of each detector's singles caused by background.
    pub fractions: [f64; 4],
    pub singles: [f64; 4],
    /// Threefold probability of the other three detectors.
    pub threefolds: [f64; 4],
    /// Fourfold probability away from the dip.
    pub fourfold: f64,
}

impl BackgroundFloor {
    pub fn none() -> Self {
        Self {
            fractions: [0.0; 4],
            singles: [0.0; 4],
            threefolds: [0.0; 4],
            fourfold: 1.0,
        }
    }

    /// Accidental fourfolds with one background click, relative to the baseline.
    pub fn relative_floor(&self) -> f64 {
        let b: f64 = (0..4)
            .map(|k| self.fractions[k] * self.singles[k] * self.threefolds[k])
            .sum();
        b / self.fourfold
    }
}

/// ΔV between single-pair-only and multi-pair simulations at equal brightness.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct MultipairCorrection {
    pub delta_v: f64,
    pub delta_v_err: f64,
}

/// Applies the background-floor and multi-pair stages to a raw report.
pub fn correct_visibility(
    raw: &VisibilityReport,
    background: &BackgroundFloor,
    multipair: &MultipairCorrection,
) -> Result<VisibilityReport> {
    if background.fractions.iter().any(|f| !(0.0..1.0).contains(f)) {
        return Err(config_err("background fractions must lie in [0, 1)"));
    }
    if !(background.fourfold > 0.0) {
        return Err(config_err("baseline fourfold must be positive"));
    }
    let floor = background.relative_floor();
    if !(floor < 1.0) {
        return Err(NliError::Degenerate(format!("background floor {floor:.3} swamps the dip")));
    }
    let gain = 1.0 / (1.0 - floor);
    let mut out = *raw;
    out.v_raman_corrected = (raw.v_raw * gain).clamp(0.0, 1.0);
    out.v_raman_corrected_err = raw.v_raw_err * gain;
    out.v_multipair_corrected = (out.v_raman_corrected + multipair.delta_v).clamp(0.0, 1.0);
    out.v_multipair_corrected_err = out.v_raman_corrected_err.hypot(multipair.delta_v_err);
    Ok(out)
}

/// Fits and heralding deduced from a power sweep, in counts per pulse.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerSweepAnalysis {
    pub fit_signal: QuadraticFit,
    pub fit_idler: QuadraticFit,
    /// C^T per power.
    pub true_coincidences: Vec<i64>,
    /// h_s = ΣC^T/(η_s ΣN′_i).
    pub heralding_signal: Estimate,
    /// h_i = ΣC^T/(η_i ΣN′_s).
    pub heralding_idler: Estimate,
}

/// Gates at which a gated detector with `dead_gates` of dead time after each
/// of its `clicks` could still fire.
pub fn live_gates(n_pulses: u64, clicks: u64, dead_gates: u64) -> f64 {
    (n_pulses as f64 - clicks as f64 * dead_gates as f64).max(1.0)
}

/// Long-run gate fractions of two gated detectors whose clicks block them for
/// `dead_gates` gates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeadTimeOccupancy {
    pub both_live: f64,
    pub a_live: f64,
    pub b_live: f64,
    /// a live while b sits in its last dead gate.
    pub b_reviving: f64,
}

/// Stationary solution for detectors that, when live, fire with `p_a`, `p_b`,
/// and jointly with `p_ab` in the same gate.
pub fn dead_time_occupancy(p_a: f64, p_b: f64, p_ab: f64, dead_gates: (u64, u64)) -> Result<DeadTimeOccupancy> {
    let ok = |p: f64| (0.0..=1.0).contains(&p);
    if !(ok(p_a) && ok(p_b) && ok(p_ab) && p_ab <= p_a.min(p_b) && p_a + p_b - p_ab <= 1.0) {
        return Err(NliError::Degenerate("inconsistent click probabilities".into()));
    }
    let (da, db) = (dead_gates.0 as usize, dead_gates.1 as usize);
    // 0: both live; 1..=da: a dead with r gates left; da+1..=da+db: b dead.
    let a_state = |r: usize| r;
    let b_state = |r: usize| da + r;
    // Where a pair of remaining dead windows ends up, and the gates spent with both dead.
    let enter = |ra: usize, rb: usize| -> (usize, f64) {
        match ra.cmp(&rb) {
            std::cmp::Ordering::Equal => (0, ra as f64),
            std::cmp::Ordering::Greater => (a_state(ra - rb), rb as f64),
            std::cmp::Ordering::Less => (b_state(rb - ra), ra as f64),
        }
    };
    let n = 1 + da + db;
    let mut moves: Vec<Vec<(usize, f64, f64)>> = vec![Vec::new(); n];
    let idle = 1.0 - p_a - p_b + p_ab;
    for (target, p) in [(enter(da, 0), p_a - p_ab), (enter(0, db), p_b - p_ab), (enter(da, db), p_ab), ((0, 0.0), idle)] {
        moves[0].push((target.0, p, target.1));
    }
    for r in 1..=da {
        let (t, w) = enter(r - 1, db);
        moves[a_state(r)].push((t, p_b, w));
        let (t, w) = enter(r - 1, 0);
        moves[a_state(r)].push((t, 1.0 - p_b, w));
    }
    for r in 1..=db {
        let (t, w) = enter(da, r - 1);
        moves[b_state(r)].push((t, p_a, w));
        let (t, w) = enter(0, r - 1);
        moves[b_state(r)].push((t, 1.0 - p_a, w));
    }
    // Lazy power iteration on the chain of live states; both-dead stretches only add time.
    let mut m = vec![1.0 / n as f64; n];
    let mut next = vec![0.0; n];
    for _ in 0..200_000 {
        next.iter_mut().for_each(|x| *x = 0.0);
        for (s, out) in moves.iter().enumerate() {
            for &(t, p, _) in out {
                next[t] += m[s] * p;
            }
        }
        let mut change = 0.0f64;
        for (x, y) in m.iter_mut().zip(&next) {
            let v = 0.5 * (*x + y);
            change = change.max((v - *x).abs());
            *x = v;
        }
        if change < 1e-15 {
            break;
        }
    }
    let time: f64 = moves
        .iter()
        .zip(&m)
        .map(|(out, w)| w * (1.0 + out.iter().map(|&(_, p, d)| p * d).sum::<f64>()))
        .sum();
    let a_dead: f64 = (1..=da).map(|r| m[a_state(r)]).sum();
    let b_dead: f64 = (1..=db).map(|r| m[b_state(r)]).sum();
    Ok(DeadTimeOccupancy {
        both_live: m[0] / time,
        a_live: (m[0] + b_dead) / time,
        b_live: (m[0] + a_dead) / time,
        b_reviving: if db > 0 { m[b_state(1)] / time } else { 0.0 },
    })
}

/// Dead-time-free true-coincidence probability per gate and its Poisson
/// variance. Click probabilities per live gate come from the singles; the
/// joint one is solved together with the both-live fraction.
fn true_rate_per_gate(k: &CountsRecord, ds: u64, di: u64) -> Result<(f64, f64)> {
    let n = k.n_pulses as f64;
    let p_a = (k.singles_signal as f64 / live_gates(k.n_pulses, k.singles_signal, ds)).min(1.0);
    let p_b = (k.singles_idler as f64 / live_gates(k.n_pulses, k.singles_idler, di)).min(1.0);
    let (lo, cap) = ((p_a + p_b - 1.0).max(0.0), p_a.min(p_b));
    let same = k.coincidences_same_pulse as f64 / n;
    let mut p_ab = same.clamp(lo, cap);
    let mut occ = dead_time_occupancy(p_a, p_b, p_ab, (ds, di))?;
    for _ in 0..50 {
        let updated = (same / occ.both_live.max(1e-12)).clamp(lo, cap);
        let converged = (updated - p_ab).abs() <= 1e-12 * p_ab.max(1e-300);
        p_ab = updated;
        occ = dead_time_occupancy(p_a, p_b, p_ab, (ds, di))?;
        if converged {
            break;
        }
    }
    // An adjacent-pulse pair needs the idler live one gate after the signal fired.
    let carried = if di == 0 { p_ab } else { 0.0 };
    let exposure = occ.both_live * (p_a - p_ab + carried) + occ.b_reviving * p_a;
    let acc_scale = if exposure > 0.0 { p_a / (n * exposure) } else { 0.0 };
    let accidental = k.coincidences_adjacent_pulse as f64 * acc_scale;
    let same_scale = 1.0 / (n * occ.both_live.max(1e-12));
    let var = k.coincidences_same_pulse as f64 * same_scale.powi(2)
        + k.coincidences_adjacent_pulse as f64 * acc_scale.powi(2);
    Ok((p_ab - accidental, var))
}

/// Weights `w` with `s₂ = Σ w_k N_k` for the through-origin quadratic fit.
fn quadratic_weights(powers: &[f64]) -> Vec<f64> {
    let (mut a11, mut a12, mut a22) = (0.0, 0.0, 0.0);
    for &p in powers {
        a11 += p * p;
        a12 += p * p * p;
        a22 += p * p * p * p;
    }
    let det = a11 * a22 - a12 * a12;
    powers.iter().map(|&p| (a11 * p * p - a12 * p) / det).collect()
}

/// Dark-subtracted, dead-time-corrected singles fits and heralding over every
/// non-zero power. Rates are per live gate; coincidences are rescaled from the
/// gates where both detectors were live.
pub fn analyze_power_sweep(
    points: &[PowerPoint],
    det_signal: &DetectorSpec,
    det_idler: &DetectorSpec,
) -> Result<PowerSweepAnalysis> {
    let (ds, di) = (det_signal.dead_gates(), det_idler.dead_gates());
    let rate = |c: u64, n: u64, d: u64, dark: f64| c as f64 / live_gates(n, c, d) - dark;
    // Dead time thins the count variance by the live share squared, which
    // cancels the gain of the correction: var = c/L².
    let rate_var = |c: u64, n: u64, d: u64| c as f64 / live_gates(n, c, d).powi(2);
    let powers: Vec<f64> = points.iter().map(|p| p.average_power_w).collect();
    let sig: Vec<(f64, f64)> = points
        .iter()
        .map(|p| {
            let c = &p.counts;
            (p.average_power_w, rate(c.singles_signal, c.n_pulses, ds, det_signal.dark_count_probability_per_gate))
        })
        .collect();
    let idl: Vec<(f64, f64)> = points
        .iter()
        .map(|p| {
            let c = &p.counts;
            (p.average_power_w, rate(c.singles_idler, c.n_pulses, di, det_idler.dark_count_probability_per_gate))
        })
        .collect();
    let fit_signal = fit_singles_power(&sig)?;
    let fit_idler = fit_singles_power(&idl)?;
    let w = quadratic_weights(&powers);
    let s2_var = |singles: fn(&CountsRecord) -> u64, d: u64| -> f64 {
        points
            .iter()
            .zip(&w)
            .map(|(p, wk)| wk * wk * rate_var(singles(&p.counts), p.counts.n_pulses, d))
            .sum()
    };
    let s2_var_s = s2_var(|c| c.singles_signal, ds);
    let s2_var_i = s2_var(|c| c.singles_idler, di);
    let ct: Vec<i64> = points
        .iter()
        .map(|p| true_coincidence(p.counts.coincidences_same_pulse, p.counts.coincidences_adjacent_pulse))
        .collect();
    let (mut sum_ct, mut var_ct) = (0.0, 0.0);
    let mut p2n = 0.0;
    for p in points {
        if p.average_power_w > 0.0 {
            let k = &p.counts;
            let n = k.n_pulses as f64;
            let (r, v) = true_rate_per_gate(k, ds, di)?;
            sum_ct += r * n;
            var_ct += v * n * n;
            p2n += p.average_power_w.powi(2) * n;
        }
    }
    let herald = |eta: f64, fit: &QuadraticFit, s2_var: f64| -> Result<Estimate> {
        let mut e = heralding_from_counts(sum_ct, eta, fit.s2 * p2n)?;
        let rel_ct = var_ct.sqrt() / sum_ct.abs().max(1.0);
        let rel_n = s2_var.sqrt() / fit.s2.abs();
        e.stderr = e.value.abs().max(e.stderr) * rel_ct.hypot(rel_n);
        Ok(e)
    };
    Ok(PowerSweepAnalysis {
        heralding_signal: herald(det_signal.efficiency, &fit_idler, s2_var_i)?,
        heralding_idler: herald(det_idler.efficiency, &fit_signal, s2_var_s)?,
        fit_signal,
        fit_idler,
        true_coincidences: ct,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn noiseless_quadratic() {
        let data: Vec<_> = [1.0, 2.0, 3.0, 4.0].iter().map(|&p| (p, 2.0 * p + 5.0 * p * p)).collect();
        let f = fit_singles_power(&data).unwrap();
        assert!((f.s1 - 2.0).abs() < 1e-12 && (f.s2 - 5.0).abs() < 1e-12);
        assert!(f.residual_norm < 1e-9);
    }

    #[test]
    fn zero_counts_fit_to_zero() {
        let f = fit_singles_power(&[(1.0, 0.0), (2.0, 0.0), (3.0, 0.0)]).unwrap();
        assert_eq!((f.s1, f.s2), (0.0, 0.0));
    }

    #[test]
    fn rank_deficient_power_design() {
        assert!(fit_singles_power(&[(1.0, 3.0), (1.0, 3.1), (1.0, 2.9)]).is_err());
        assert!(fit_singles_power(&[(0.0, 0.0), (0.0, 0.0), (2.0, 1.0)]).is_err());
    }

    #[test]
    fn coincidence_arithmetic() {
        assert_eq!(true_coincidence(500, 100), 400);
        assert_eq!(true_coincidence(100, 100), 0);
        assert_eq!(true_coincidence(90, 100), -10);
    }

    #[test]
    fn heralding_arithmetic() {
        let h = heralding_from_counts(0.15 * 1000.0, 0.15, 1000.0).unwrap();
        assert!((h.value - 1.0).abs() < 1e-12 && !h.unphysical);
        assert!(heralding_from_counts(200.0, 0.15, 1000.0).unwrap().unphysical);
        assert!(heralding_from_counts(1.0, 0.15, 0.0).is_err());
        assert!(heralding_from_counts(1.0, 0.0, 1.0).is_err());
    }

    #[test]
    fn g2_arithmetic() {
        let g = g2_from_hbt(1_000_000, 10_000, 10_000, 100).unwrap();
        assert!((g.value - 1.0).abs() < 1e-12);
        assert!(g2_from_hbt(10, 0, 5, 0).is_err());
    }

    #[test]
    fn raman_identity_and_paper_chain() {
        assert_eq!(raman_correct_g2s(1.8, 0.0, RamanStatistics::Poissonian).unwrap(), 1.8);
        let g = raman_correct_g2s(1.8, 0.087, RamanStatistics::Poissonian).unwrap();
        assert!((g - 1.96).abs() < 0.01, "{g}");
        assert!(raman_correct_g2s(1.8, 1.0, RamanStatistics::Poissonian).is_err());
        // Mixing then unmixing returns the FWM value.
        let (gf, r) = (1.95, 0.2);
        let mixed = gf * (1.0 - r) * (1.0 - r) + 2.0 * r * r + 2.0 * r * (1.0 - r);
        let back = raman_correct_g2s(mixed, r, RamanStatistics::Thermal).unwrap();
        assert!((back - gf).abs() < 1e-12);
    }

    fn synthetic_dip(v: f64, w: f64, c: f64) -> Vec<DipPoint> {
        (-15..=15)
            .map(|k| {
                let t = k as f64 * 0.25e-12;
                DipPoint {
                    delay_s: t,
                    value: c * (1.0 - v * (-t * t / (2.0 * w * w)).exp()),
                    sigma: 0.0,
                }
            })
            .collect()
    }

    #[test]
    fn noiseless_dip_recovered() {
        let f = fit_hom_dip(&synthetic_dip(0.95, 1e-12, 200.0)).unwrap();
        assert!((f.visibility - 0.95).abs() < 1e-8, "{f:?}");
        assert!((f.width_s - 1e-12).abs() < 1e-20);
        assert!((f.baseline - 200.0).abs() < 1e-6);
    }

    #[test]
    fn dip_fit_needs_points() {
        assert!(fit_hom_dip(&synthetic_dip(0.9, 1e-12, 1.0)[..4]).is_err());
        let flat: Vec<_> = synthetic_dip(0.9, 1e-12, 0.0);
        assert!(fit_hom_dip(&flat).is_err());
    }

    #[test]
    fn zero_background_is_identity() {
        let f = fit_hom_dip(&synthetic_dip(0.8, 1e-12, 100.0)).unwrap();
        let raw = VisibilityReport::from_fit(&f);
        let out = correct_visibility(&raw, &BackgroundFloor::none(), &MultipairCorrection::default()).unwrap();
        assert_eq!(out, raw);
        let again = correct_visibility(&out, &BackgroundFloor::none(), &MultipairCorrection::default()).unwrap();
        assert_eq!(again, out);
    }

    #[test]
    fn background_fraction_range() {
        let raw = VisibilityReport::from_fit(&fit_hom_dip(&synthetic_dip(0.8, 1e-12, 100.0)).unwrap());
        let mut bg = BackgroundFloor::none();
        bg.fractions[0] = 1.0;
        assert!(correct_visibility(&raw, &bg, &MultipairCorrection::default()).is_err());
    }

    proptest! {
        #[test]
        fn g2_scale_invariant(n in 1u64..1_000_000, a in 1u64..10_000, b in 1u64..10_000, c in 0u64..1_000, k in 1u64..1000) {
            let g1 = g2_from_hbt(n, a, b, c).unwrap().value;
            let g2 = g2_from_hbt(n * k, a * k, b * k, c * k).unwrap().value;
            prop_assert!((g1 - g2).abs() <= 1e-12 * g1.abs().max(1.0));
        }

        #[test]
        fn power_fit_equivariant(s1 in 0.1f64..10.0, s2 in 0.1f64..10.0, alpha in 0.01f64..100.0) {
            let ps = [1.0, 2.0, 3.0, 5.0];
            let noisy = |p: f64, k: usize| s1 * p + s2 * p * p + [0.3, -0.2, 0.1, -0.4][k];
            let base: Vec<_> = ps.iter().enumerate().map(|(k, &p)| (p, noisy(p, k))).collect();
            let scaled: Vec<_> = ps.iter().enumerate().map(|(k, &p)| (alpha * p, noisy(p, k))).collect();
            let f = fit_singles_power(&base).unwrap();
            let g = fit_singles_power(&scaled).unwrap();
            prop_assert!((g.s1 * alpha - f.s1).abs() < 1e-7 * f.s1.abs().max(1.0));
            prop_assert!((g.s2 * alpha * alpha - f.s2).abs() < 1e-7 * f.s2.abs().max(1.0));
        }
    }

    #[test]
    fn live_gates_without_dead_time() {
        assert_eq!(live_gates(1000, 10, 0), 1000.0);
        assert_eq!(live_gates(1000, 10, 9), 910.0);
    }

    #[test]
    fn occupancy_limits() {
        let free = dead_time_occupancy(0.1, 0.2, 0.05, (0, 0)).unwrap();
        assert_eq!((free.both_live, free.a_live, free.b_live), (1.0, 1.0, 1.0));
        // Renewal: a live share of 1/(1 + p·D).
        let one = dead_time_occupancy(0.01, 0.0, 0.0, (50, 7)).unwrap();
        assert!((one.a_live - 1.0 / 1.5).abs() < 1e-9, "{}", one.a_live);
        assert!((one.both_live - one.a_live).abs() < 1e-9);
    }

    #[test]
    fn independent_detectors_factorize() {
        let (pa, pb) = (0.004, 0.007);
        let o = dead_time_occupancy(pa, pb, pa * pb, (60, 90)).unwrap();
        assert!((o.a_live - 1.0 / (1.0 + pa * 60.0)).abs() < 1e-9);
        assert!((o.b_live - 1.0 / (1.0 + pb * 90.0)).abs() < 1e-9);
        assert!((o.both_live - o.a_live * o.b_live).abs() < 1e-9);
    }

    #[test]
    fn locked_detectors_share_dead_time() {
        let o = dead_time_occupancy(0.02, 0.02, 0.02, (40, 40)).unwrap();
        assert!((o.both_live - o.a_live).abs() < 1e-9 && (o.a_live - 1.0 / 1.8).abs() < 1e-9);
        assert!(dead_time_occupancy(0.02, 0.01, 0.03, (4, 4)).is_err());
    }

}
