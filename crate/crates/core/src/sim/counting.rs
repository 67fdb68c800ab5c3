use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{derive_seed, run_batched, BatchStreams, DetectorSpec, Gate, SourceModel, SourceSampler};
use crate::error::{config_err, NliError, Result};

/// Heralded HBT counts. The herald watches the idler; `a` and `b` are the
/// two outputs of the 50/50 splitter in the signal arm.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct HbtCounts {
    /// N_i
    pub herald: u64,
    /// N_12
    pub herald_a: u64,
    /// N_13
    pub herald_b: u64,
    /// N_123
    pub herald_ab: u64,
    pub a: u64,
    pub b: u64,
    pub ab: u64,
}

impl HbtCounts {
    fn merge(self, o: Self) -> Self {
        Self {
            herald: self.herald + o.herald,
            herald_a: self.herald_a + o.herald_a,
            herald_b: self.herald_b + o.herald_b,
            herald_ab: self.herald_ab + o.herald_ab,
            a: self.a + o.a,
            b: self.b + o.b,
            ab: self.ab + o.ab,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountsRecord {
    pub n_pulses: u64,
    pub singles_signal: u64,
    pub singles_idler: u64,
    /// C^c
    pub coincidences_same_pulse: u64,
    /// C^acc: signal at pulse t with idler at pulse t+1.
    pub coincidences_adjacent_pulse: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hbt: Option<HbtCounts>,
}

impl CountsRecord {
    fn merge(self, o: Self) -> Self {
        let hbt = match (self.hbt, o.hbt) {
            (Some(a), Some(b)) => Some(a.merge(b)),
            (a, b) => a.or(b),
        };
        Self {
            n_pulses: self.n_pulses + o.n_pulses,
            singles_signal: self.singles_signal + o.singles_signal,
            singles_idler: self.singles_idler + o.singles_idler,
            coincidences_same_pulse: self.coincidences_same_pulse + o.coincidences_same_pulse,
            coincidences_adjacent_pulse: self.coincidences_adjacent_pulse + o.coincidences_adjacent_pulse,
            hbt,
        }
    }

    /// Checks that no coincidence exceeds its singles.
    pub fn validate(&self) -> Result<()> {
        let min_single = self.singles_signal.min(self.singles_idler);
        if self.coincidences_same_pulse > min_single || self.coincidences_adjacent_pulse > min_single {
            return Err(NliError::Parse("coincidences exceed singles".into()));
        }
        if self.singles_signal > self.n_pulses || self.singles_idler > self.n_pulses {
            return Err(NliError::Parse("singles exceed pulse count".into()));
        }
        if let Some(h) = &self.hbt {
            let ok = h.herald_a <= h.herald.min(h.a)
                && h.herald_b <= h.herald.min(h.b)
                && h.herald_ab <= h.herald_a.min(h.herald_b)
                && h.ab <= h.a.min(h.b);
            if !ok {
                return Err(NliError::Parse("HBT coincidences exceed singles".into()));
            }
        }
        Ok(())
    }
}

fn check_run(source: &SourceModel, dets: &[&DetectorSpec], n_pulses: u64) -> Result<SourceSampler> {
    if n_pulses == 0 {
        return Err(config_err("n_pulses must be >= 1"));
    }
    for d in dets {
        d.validate()?;
    }
    SourceSampler::new(source)
}

/// Signal/idler singles and same/adjacent-pulse coincidences.
pub fn simulate_coincidence_run(
    source: &SourceModel,
    det_s: &DetectorSpec,
    det_i: &DetectorSpec,
    n_pulses: u64,
    seed: u64,
) -> Result<CountsRecord> {
    let sampler = check_run(source, &[det_s, det_i], n_pulses)?;
    let (ts, ti) = (source.channel_transmission_signal, source.channel_transmission_idler);
    let rec = run_batched(
        n_pulses,
        |batch, len| {
            let mut st = BatchStreams::new(seed, batch);
            let mut gs = Gate::new(det_s);
            let mut gi = Gate::new(det_i);
            let mut rec = CountsRecord {
                n_pulses: len,
                ..Default::default()
            };
            let mut prev_signal = false;
            for t in 0..len {
                let n = sampler.draw_total_pairs(&mut st.pairs);
                let ph = sampler.classify(&mut st.pairs, n);
                let (rs, ri) = sampler.draw_raman(&mut st.raman);
                let s = gs.fire(t, ph.signal + rs, ts, &mut st.detect, &mut st.dark);
                let i = gi.fire(t, ph.idler + ri, ti, &mut st.detect, &mut st.dark);
                rec.singles_signal += s as u64;
                rec.singles_idler += i as u64;
                rec.coincidences_same_pulse += (s && i) as u64;
                rec.coincidences_adjacent_pulse += (prev_signal && i) as u64;
                prev_signal = s;
            }
            rec
        },
        CountsRecord::merge,
    );
    Ok(rec)
}

/// Idler-heralded HBT on the signal arm. Signal photons are routed to either
/// output independently with probability ½.
pub fn simulate_hbt(
    source: &SourceModel,
    det_herald: &DetectorSpec,
    det_a: &DetectorSpec,
    det_b: &DetectorSpec,
    n_pulses: u64,
    seed: u64,
) -> Result<CountsRecord> {
    let sampler = check_run(source, &[det_herald, det_a, det_b], n_pulses)?;
    let (ts, ti) = (source.channel_transmission_signal, source.channel_transmission_idler);
    let (pa, pb) = (ts * det_a.efficiency, ts * det_b.efficiency);
    let rec = run_batched(
        n_pulses,
        |batch, len| {
            let mut st = BatchStreams::new(seed, batch);
            let mut gh = Gate::new(det_herald);
            let mut ga = Gate::new(det_a);
            let mut gb = Gate::new(det_b);
            let mut h = HbtCounts::default();
            for t in 0..len {
                let n = sampler.draw_total_pairs(&mut st.pairs);
                let ph = sampler.classify(&mut st.pairs, n);
                let (rs, ri) = sampler.draw_raman(&mut st.raman);
                let herald = gh.fire(t, ph.idler + ri, ti, &mut st.detect, &mut st.dark);
                let (mut hit_a, mut hit_b) = (false, false);
                let mut route = |rng: &mut rand_chacha::ChaCha8Rng| {
                    let to_a = rng.random::<f64>() < 0.5;
                    let u = rng.random::<f64>();
                    if to_a {
                        hit_a |= u < pa;
                    } else {
                        hit_b |= u < pb;
                    }
                };
                for _ in 0..ph.signal {
                    route(&mut st.detect);
                }
                // Raman photons route on their own stream so the pair draws do not shift.
                for _ in 0..rs {
                    route(&mut st.raman);
                }
                let a = ga.fire_hit(t, hit_a, &mut st.dark);
                let b = gb.fire_hit(t, hit_b, &mut st.dark);
                h.herald += herald as u64;
                h.herald_a += (herald && a) as u64;
                h.herald_b += (herald && b) as u64;
                h.herald_ab += (herald && a && b) as u64;
                h.a += a as u64;
                h.b += b as u64;
                h.ab += (a && b) as u64;
            }
            CountsRecord {
                n_pulses: len,
                singles_idler: h.herald,
                hbt: Some(h),
                ..Default::default()
            }
        },
        CountsRecord::merge,
    );
    Ok(rec)
}

/// Power dependence of the source: `μ = c₂P²`, Raman means `c₁P` per band.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerScaling {
    pub pairs_per_w2: f64,
    pub raman_signal_per_w: f64,
    pub raman_idler_per_w: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerPoint {
    pub average_power_w: f64,
    pub counts: CountsRecord,
}

/// One coincidence run per average pump power.
pub fn simulate_power_sweep(
    template: &SourceModel,
    scaling: &PowerScaling,
    powers_w: &[f64],
    det_s: &DetectorSpec,
    det_i: &DetectorSpec,
    n_pulses: u64,
    seed: u64,
) -> Result<Vec<PowerPoint>> {
    if powers_w.iter().any(|p| !(*p >= 0.0 && p.is_finite())) {
        return Err(config_err("powers must be finite and >= 0"));
    }
    powers_w
        .iter()
        .enumerate()
        .map(|(k, &p)| {
            let mut src = template.clone();
            src.mean_pairs_per_pulse = scaling.pairs_per_w2 * p * p;
            src.raman_signal_mean = scaling.raman_signal_per_w * p;
            src.raman_idler_mean = scaling.raman_idler_per_w * p;
            let counts = simulate_coincidence_run(&src, det_s, det_i, n_pulses, derive_seed(seed, k as u64))?;
            Ok(PowerPoint {
                average_power_w: p,
                counts,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn perfect() -> DetectorSpec {
        DetectorSpec::ideal(1.0)
    }

    fn within(x: f64, expect: f64, sigma: f64) -> bool {
        (x - expect).abs() <= 3.0 * sigma
    }

    #[test]
    fn blind_detectors_count_nothing() {
        let r = simulate_coincidence_run(&SourceModel::ideal(0.1), &DetectorSpec::ideal(0.0), &DetectorSpec::ideal(0.0), 100_000, 1)
            .unwrap();
        assert_eq!(r.singles_signal + r.singles_idler + r.coincidences_same_pulse, 0);
    }

    #[test]
    fn zero_pulses_rejected() {
        assert!(simulate_coincidence_run(&SourceModel::ideal(0.1), &perfect(), &perfect(), 0, 1).is_err());
    }

    #[test]
    fn perfect_thermal_source_click_probabilities() {
        let mu = 0.01;
        let n = 2_000_000u64;
        let r = simulate_coincidence_run(&SourceModel::ideal(mu), &perfect(), &perfect(), n, 3).unwrap();
        // Threshold detectors with unit efficiency click iff n ≥ 1.
        let p1 = mu / (1.0 + mu);
        let nf = n as f64;
        assert!(within(r.coincidences_same_pulse as f64, p1 * nf, (nf * p1).sqrt()));
        assert!(within(r.coincidences_adjacent_pulse as f64, p1 * p1 * nf, (nf * p1 * p1).sqrt()));
        assert_eq!(r.singles_signal, r.coincidences_same_pulse);
        r.validate().unwrap();
    }

    #[test]
    fn raman_only_is_uncorrelated() {
        let mut src = SourceModel::ideal(0.0);
        src.raman_signal_mean = 0.05;
        src.raman_idler_mean = 0.05;
        let r = simulate_coincidence_run(&src, &DetectorSpec::ideal(0.5), &DetectorSpec::ideal(0.5), 2_000_000, 5).unwrap();
        let (c, a) = (r.coincidences_same_pulse as f64, r.coincidences_adjacent_pulse as f64);
        assert!((c - a).abs() < 3.0 * (c + a).sqrt(), "{c} vs {a}");
    }

    #[test]
    fn reproducible_and_thread_independent() {
        let mut src = SourceModel::ideal(0.05);
        src.raman_signal_mean = 0.01;
        let det = DetectorSpec::default();
        let n = 3 * super::super::BATCH_PULSES / 2;
        let a = simulate_coincidence_run(&src, &det, &det, n, 9).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let b = pool.install(|| simulate_coincidence_run(&src, &det, &det, n, 9).unwrap());
        assert_eq!(a, b);
        assert_eq!(a.n_pulses, n);
        let c = simulate_coincidence_run(&src, &det, &det, n, 10).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn dead_time_never_increases_singles() {
        let src = SourceModel::ideal(0.1);
        let mut det = DetectorSpec::ideal(0.5);
        det.dark_count_probability_per_gate = 1e-3;
        let mut last = u64::MAX;
        for dead in [0.0, 0.1, 1.0, 10.0] {
            det.dead_time_us = dead;
            let r = simulate_coincidence_run(&src, &det, &det, 500_000, 2).unwrap();
            assert!(r.singles_signal <= last);
            last = r.singles_signal;
        }
    }

    #[test]
    fn correlated_pairs_exceed_accidentals() {
        let mut src = SourceModel::ideal(0.04);
        src.schmidt_weights = vec![0.6, 0.4];
        let det = DetectorSpec::ideal(0.15);
        let r = simulate_coincidence_run(&src, &det, &det, 1_000_000, 4).unwrap();
        assert!(r.coincidences_same_pulse > r.coincidences_adjacent_pulse);
    }

    #[test]
    fn single_photons_never_give_threefolds() {
        // At μ = 1e-4 multi-pair pulses are ~1e-8; none are expected in 10⁶ pulses.
        let src = SourceModel::ideal(1e-4);
        let r = simulate_hbt(&src, &perfect(), &perfect(), &perfect(), 1_000_000, 1).unwrap();
        let h = r.hbt.unwrap();
        assert!(h.herald > 0);
        assert_eq!(h.herald_ab, 0);
        r.validate().unwrap();
    }

    #[test]
    fn coherent_light_has_unit_heralded_g2() {
        let mut src = SourceModel::ideal(0.0);
        src.raman_signal_mean = 0.3;
        src.raman_idler_mean = 0.3;
        let d = DetectorSpec::ideal(0.5);
        let h = simulate_hbt(&src, &d, &d, &d, 2_000_000, 8).unwrap().hbt.unwrap();
        let g2 = h.herald_ab as f64 * h.herald as f64 / (h.herald_a as f64 * h.herald_b as f64);
        let rel = (1.0 / h.herald_ab as f64 + 1.0 / h.herald_a as f64 + 1.0 / h.herald_b as f64).sqrt();
        assert!((g2 - 1.0).abs() < 3.0 * rel, "g2 = {g2} ± {rel}");
    }

    #[test]
    fn sweep_is_monotone_and_dark_only_at_zero_power() {
        let scaling = PowerScaling {
            pairs_per_w2: 0.04 / (50e-6f64).powi(2),
            raman_signal_per_w: 0.004 / 50e-6,
            raman_idler_per_w: 0.004 / 50e-6,
        };
        let mut det = DetectorSpec::ideal(0.15);
        det.dark_count_probability_per_gate = 1e-4;
        let pts = simulate_power_sweep(
            &SourceModel::ideal(0.0),
            &scaling,
            &[0.0, 10e-6, 20e-6, 35e-6, 50e-6],
            &det,
            &det,
            400_000,
            1,
        )
        .unwrap();
        let dark = pts[0].counts.singles_signal as f64;
        assert!(within(dark, 40.0, 40f64.sqrt()));
        assert!(pts.windows(2).all(|w| w[0].counts.singles_signal < w[1].counts.singles_signal));
    }
}
