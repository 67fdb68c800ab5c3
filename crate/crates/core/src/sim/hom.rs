//! Two-source heralded HOM with fourfold detection.
//!
//! Each source is reduced to a table of pulse states: at most two pairs,
//! each pair classed as both/signal-only/idler-only in band, and at most two
//! Raman photons per band (heavier tails are lumped into the top entry).
//! Given a pair of states the fourfold click probability is exact: photons
//! are routed independently, except that one pair-signal photon from each
//! source bunches with probability ξ(τ). The fourfold rate is then
//! estimated by sampling state pairs conditioned on both sources emitting,
//! which is where nearly all of the fourfold probability sits; the strata
//! with an empty source are summed exactly. Dead time is not modelled here.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use super::{derive_seed, run_batched, BatchStreams, DetectorSpec, RamanStatistics, SourceModel};
use crate::error::{config_err, Result};
use crate::modal::{predicted_hom_visibility, SchmidtResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PairTruncation {
    /// Thermal pair statistics truncated at two pairs per pulse.
    #[default]
    AtTwo,
    /// At most one pair, emitted with probability μ.
    SinglePairOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HomDetectors {
    pub herald1: DetectorSpec,
    pub herald2: DetectorSpec,
    pub out_a: DetectorSpec,
    pub out_b: DetectorSpec,
}

impl HomDetectors {
    pub fn uniform(spec: DetectorSpec) -> Self {
        Self {
            herald1: spec,
            herald2: spec,
            out_a: spec,
            out_b: spec,
        }
    }

    fn validate(&self) -> Result<()> {
        for d in [&self.herald1, &self.herald2, &self.out_a, &self.out_b] {
            d.validate()?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HomOptions {
    /// Monte Carlo state pairs, shared by every delay.
    pub samples: u64,
    /// Pulses per delay used to realize integer fourfold counts.
    pub acquisition_pulses: u64,
    pub truncation: PairTruncation,
}

impl Default for HomOptions {
    fn default() -> Self {
        Self {
            samples: 10_000_000,
            acquisition_pulses: 36_800_000 * 600,
            truncation: PairTruncation::AtTwo,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HomPoint {
    pub delay_s: f64,
    pub overlap: f64,
    /// Fourfold probability per pulse.
    pub rate: f64,
    pub rate_stderr: f64,
    pub fourfold: u64,
    pub n_pulses: u64,
}

/// Per-pulse click probabilities far from the dip (ξ = 0), in detector
/// order `[herald1, herald2, out_a, out_b]`. `threefolds[k]` omits detector `k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HomBaseline {
    pub fourfold: f64,
    pub singles: [f64; 4],
    pub threefolds: [f64; 4],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HomScan {
    pub points: Vec<HomPoint>,
    pub baseline: HomBaseline,
    pub samples: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct PulseState {
    both: u32,
    signal_only: u32,
    idler_only: u32,
    raman_signal: u32,
    raman_idler: u32,
}

impl PulseState {
    fn is_empty(&self) -> bool {
        self.both + self.signal_only + self.idler_only + self.raman_signal + self.raman_idler == 0
    }

    fn pair_signals(&self) -> u32 {
        self.both + self.signal_only
    }

    fn idlers(&self) -> u32 {
        self.both + self.idler_only + self.raman_idler
    }
}

fn raman_probs(mean: f64, stats: RamanStatistics) -> [f64; 3] {
    if mean <= 0.0 {
        return [1.0, 0.0, 0.0];
    }
    let (p0, p1) = match stats {
        RamanStatistics::Poissonian => ((-mean).exp(), mean * (-mean).exp()),
        RamanStatistics::Thermal => (1.0 / (1.0 + mean), mean / (1.0 + mean).powi(2)),
    };
    [p0, p1, (1.0 - p0 - p1).max(0.0)]
}

fn state_table(src: &SourceModel, truncation: PairTruncation) -> Vec<(PulseState, f64)> {
    let mu = src.mean_pairs_per_pulse;
    let pairs = match truncation {
        PairTruncation::SinglePairOnly => [1.0 - mu, mu, 0.0],
        PairTruncation::AtTwo => {
            let y: Vec<f64> = src
                .schmidt_weights
                .iter()
                .map(|w| mu * w / (1.0 + mu * w))
                .collect();
            let p0: f64 = y.iter().map(|y| 1.0 - y).product();
            let p1 = p0 * y.iter().sum::<f64>();
            [p0, p1, (1.0 - p0 - p1).max(0.0)]
        }
    };
    let q = src.pair_classes();
    let classes = [(1, 0, 0, q.both), (0, 1, 0, q.signal_only), (0, 0, 1, q.idler_only)];
    let mut pair_states: Vec<((u32, u32, u32), f64)> = vec![((0, 0, 0), pairs[0])];
    for c in classes {
        pair_states.push(((c.0, c.1, c.2), pairs[1] * c.3));
    }
    for (i, a) in classes.iter().enumerate() {
        for b in &classes[i..] {
            let mult = if std::ptr::eq(a, b) { 1.0 } else { 2.0 };
            pair_states.push(((a.0 + b.0, a.1 + b.1, a.2 + b.2), pairs[2] * mult * a.3 * b.3));
        }
    }
    let rs = raman_probs(src.raman_signal_mean, src.raman_statistics);
    let ri = raman_probs(src.raman_idler_mean, src.raman_statistics);
    let mut table = Vec::new();
    for &((b, s, i), p) in &pair_states {
        for (ns, &ps) in rs.iter().enumerate() {
            for (ni, &pi) in ri.iter().enumerate() {
                let w = p * ps * pi;
                if w > 0.0 {
                    table.push((
                        PulseState {
                            both: b,
                            signal_only: s,
                            idler_only: i,
                            raman_signal: ns as u32,
                            raman_idler: ni as u32,
                        },
                        w,
                    ));
                }
            }
        }
    }
    table
}

/// Detector parameters folded with channel transmissions.
struct Setup {
    t_s: [f64; 2],
    t_i: [f64; 2],
    eta_h: [f64; 2],
    dark_h: [f64; 2],
    eta_a: f64,
    eta_b: f64,
    dark_a: f64,
    dark_b: f64,
}

impl Setup {
    fn new(s1: &SourceModel, s2: &SourceModel, d: &HomDetectors) -> Self {
        Self {
            t_s: [s1.channel_transmission_signal, s2.channel_transmission_signal],
            t_i: [s1.channel_transmission_idler, s2.channel_transmission_idler],
            eta_h: [d.herald1.efficiency, d.herald2.efficiency],
            dark_h: [d.herald1.dark_count_probability_per_gate, d.herald2.dark_count_probability_per_gate],
            eta_a: d.out_a.efficiency,
            eta_b: d.out_b.efficiency,
            dark_a: d.out_a.dark_count_probability_per_gate,
            dark_b: d.out_b.dark_count_probability_per_gate,
        }
    }

    fn herald_silent(&self, k: usize, st: &PulseState) -> f64 {
        (1.0 - self.dark_h[k]) * (1.0 - self.t_i[k] * self.eta_h[k]).powi(st.idlers() as i32)
    }

    /// `[P(¬A), P(¬B), P(¬A∧¬B)]` at the splitter outputs.
    fn outputs_silent(&self, s1: &PulseState, s2: &PulseState, bunched: bool) -> [f64; 3] {
        let (ea, eb) = (self.eta_a, self.eta_b);
        let lost = |t: f64| [1.0 - t * ea / 2.0, 1.0 - t * eb / 2.0, 1.0 - t * (ea + eb) / 2.0];
        let pow3 = |f: [f64; 3], n: u32| f.map(|x| x.powi(n as i32));
        let mul = |a: [f64; 3], b: [f64; 3]| [a[0] * b[0], a[1] * b[1], a[2] * b[2]];

        let raman = mul(
            pow3(lost(self.t_s[0]), s1.raman_signal),
            pow3(lost(self.t_s[1]), s2.raman_signal),
        );
        let (k1, k2) = (s1.pair_signals(), s2.pair_signals());
        let pairs = if !bunched || k1 == 0 || k2 == 0 {
            mul(pow3(lost(self.t_s[0]), k1), pow3(lost(self.t_s[1]), k2))
        } else {
            // Enumerate survivors so the bunched pair only forms when a photon
            // from each source reaches the splitter.
            let single = lost(1.0);
            let pair = [
                0.5 * (1.0 - ea).powi(2) + 0.5,
                0.5 * (1.0 - eb).powi(2) + 0.5,
                0.5 * (1.0 - ea).powi(2) + 0.5 * (1.0 - eb).powi(2),
            ];
            let mut acc = [0.0; 3];
            for m1 in 0..=k1 {
                for m2 in 0..=k2 {
                    let w = binom(k1, m1, self.t_s[0]) * binom(k2, m2, self.t_s[1]);
                    let f = if m1 >= 1 && m2 >= 1 {
                        mul(pair, pow3(single, m1 + m2 - 2))
                    } else {
                        pow3(single, m1 + m2)
                    };
                    for j in 0..3 {
                        acc[j] += w * f[j];
                    }
                }
            }
            acc
        };
        let dark = [
            1.0 - self.dark_a,
            1.0 - self.dark_b,
            (1.0 - self.dark_a) * (1.0 - self.dark_b),
        ];
        mul(mul(raman, pairs), dark)
    }

    fn fourfold(&self, s1: &PulseState, s2: &PulseState, bunched: bool) -> f64 {
        let h = (1.0 - self.herald_silent(0, s1)) * (1.0 - self.herald_silent(1, s2));
        let [na, nb, nab] = self.outputs_silent(s1, s2, bunched);
        h * (1.0 - na - nb + nab)
    }

    /// Singles, threefolds and fourfold for distinguishable photons.
    fn detail(&self, s1: &PulseState, s2: &PulseState) -> ([f64; 4], [f64; 4], f64) {
        let h1 = 1.0 - self.herald_silent(0, s1);
        let h2 = 1.0 - self.herald_silent(1, s2);
        let [na, nb, nab] = self.outputs_silent(s1, s2, false);
        let (a, b, ab) = (1.0 - na, 1.0 - nb, 1.0 - na - nb + nab);
        let singles = [h1, h2, a, b];
        let threefolds = [h2 * ab, h1 * ab, h1 * h2 * b, h1 * h2 * a];
        (singles, threefolds, h1 * h2 * ab)
    }
}

fn binom(n: u32, k: u32, p: f64) -> f64 {
    let c = match (n, k) {
        (_, 0) => 1.0,
        (n, k) if k == n => 1.0,
        (2, 1) => 2.0,
        _ => {
            let mut c = 1.0;
            for j in 0..k {
                c *= (n - j) as f64 / (j + 1) as f64;
            }
            c
        }
    };
    c * p.powi(k as i32) * (1.0 - p).powi((n - k) as i32)
}

fn check_inputs(s1: &SourceModel, s2: &SourceModel, dets: &HomDetectors, overlap: f64) -> Result<()> {
    s1.validate()?;
    s2.validate()?;
    dets.validate()?;
    if !(0.0..=1.0).contains(&overlap) {
        return Err(config_err(format!("mode overlap {overlap} outside [0, 1]")));
    }
    Ok(())
}

/// Fourfold probability per pulse by full enumeration of both state tables.
pub fn hom_fourfold_exact(
    s1: &SourceModel,
    s2: &SourceModel,
    dets: &HomDetectors,
    overlap: f64,
    truncation: PairTruncation,
) -> Result<f64> {
    check_inputs(s1, s2, dets, overlap)?;
    let setup = Setup::new(s1, s2, dets);
    let (t1, t2) = (state_table(s1, truncation), state_table(s2, truncation));
    let mut p = 0.0;
    for (a, pa) in &t1 {
        for (b, pb) in &t2 {
            let d = setup.fourfold(a, b, false);
            let x = setup.fourfold(a, b, true);
            p += pa * pb * (overlap * x + (1.0 - overlap) * d);
        }
    }
    Ok(p)
}

/// Mode overlap ξ(τ) between two sources for each delay.
pub fn overlap_scan(a: &SchmidtResult, b: &SchmidtResult, delays_s: &[f64]) -> Result<Vec<(f64, f64)>> {
    delays_s
        .iter()
        .map(|&t| Ok((t, predicted_hom_visibility(a, b, t)?)))
        .collect()
}

#[derive(Default)]
struct Moments {
    n: u64,
    d: f64,
    x: f64,
    dd: f64,
    xx: f64,
    dx: f64,
}

impl Moments {
    fn merge(self, o: Self) -> Self {
        Self {
            n: self.n + o.n,
            d: self.d + o.d,
            x: self.x + o.x,
            dd: self.dd + o.dd,
            xx: self.xx + o.xx,
            dx: self.dx + o.dx,
        }
    }
}

/// Fourfold scan over `(delay, ξ)` points.
pub fn simulate_hom(
    s1: &SourceModel,
    s2: &SourceModel,
    dets: &HomDetectors,
    scan: &[(f64, f64)],
    opts: &HomOptions,
    seed: u64,
) -> Result<HomScan> {
    for &(_, xi) in scan {
        check_inputs(s1, s2, dets, xi)?;
    }
    check_inputs(s1, s2, dets, 0.0)?;
    if opts.samples == 0 {
        return Err(config_err("HOM samples must be >= 1"));
    }
    let setup = Setup::new(s1, s2, dets);
    let (t1, t2) = (state_table(s1, opts.truncation), state_table(s2, opts.truncation));

    // Exact pieces: baseline detail everywhere, fourfold for the strata with an empty source.
    let mut singles = [0.0; 4];
    let mut threefolds = [0.0; 4];
    let mut baseline = 0.0;
    let (mut edge_d, mut edge_x) = (0.0, 0.0);
    for (a, pa) in &t1 {
        for (b, pb) in &t2 {
            let w = pa * pb;
            let (s, t, f) = setup.detail(a, b);
            for k in 0..4 {
                singles[k] += w * s[k];
                threefolds[k] += w * t[k];
            }
            baseline += w * f;
            if a.is_empty() || b.is_empty() {
                edge_d += w * f;
                edge_x += w * setup.fourfold(a, b, true);
            }
        }
    }

    let nonempty = |t: &[(PulseState, f64)]| -> (Vec<PulseState>, Vec<f64>, f64) {
        let kept: Vec<_> = t.iter().filter(|(s, _)| !s.is_empty()).collect();
        let total: f64 = kept.iter().map(|(_, p)| p).sum();
        let mut acc = 0.0;
        let cdf = kept
            .iter()
            .map(|(_, p)| {
                acc += p / total;
                acc
            })
            .collect();
        (kept.iter().map(|(s, _)| *s).collect(), cdf, total)
    };
    let (st1, cdf1, p1) = nonempty(&t1);
    let (st2, cdf2, p2) = nonempty(&t2);
    let weight = p1 * p2;

    let pick = |cdf: &[f64], u: f64| cdf.partition_point(|&c| c < u).min(cdf.len() - 1);
    let m = if weight > 0.0 {
        run_batched(
            opts.samples,
            |batch, len| {
                let mut rng = BatchStreams::new(seed, batch).pairs;
                let mut m = Moments {
                    n: len,
                    ..Default::default()
                };
                for _ in 0..len {
                    let a = &st1[pick(&cdf1, rng.random::<f64>())];
                    let b = &st2[pick(&cdf2, rng.random::<f64>())];
                    let d = setup.fourfold(a, b, false);
                    let x = setup.fourfold(a, b, true);
                    m.d += d;
                    m.x += x;
                    m.dd += d * d;
                    m.xx += x * x;
                    m.dx += d * x;
                }
                m
            },
            Moments::merge,
        )
    } else {
        Moments {
            n: opts.samples,
            ..Default::default()
        }
    };

    let n = m.n as f64;
    let points = scan
        .iter()
        .enumerate()
        .map(|(k, &(delay_s, xi))| {
            let mean = (xi * m.x + (1.0 - xi) * m.d) / n;
            let second = (xi * xi * m.xx + (1.0 - xi).powi(2) * m.dd + 2.0 * xi * (1.0 - xi) * m.dx) / n;
            let var = (second - mean * mean).max(0.0) / (n - 1.0).max(1.0);
            let rate = xi * edge_x + (1.0 - xi) * edge_d + weight * mean;
            let lambda = rate * opts.acquisition_pulses as f64;
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, k as u64));
            let fourfold = if lambda > 0.0 {
                Poisson::new(lambda).map(|p| p.sample(&mut rng) as u64).unwrap_or(0)
            } else {
                0
            };
            HomPoint {
                delay_s,
                overlap: xi,
                rate,
                rate_stderr: weight * var.sqrt(),
                fourfold,
                n_pulses: opts.acquisition_pulses,
            }
        })
        .collect();

    Ok(HomScan {
        points,
        baseline: HomBaseline {
            fourfold: baseline,
            singles,
            threefolds,
        },
        samples: opts.samples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ideal_setup(mu: f64) -> (SourceModel, HomDetectors) {
        (SourceModel::ideal(mu), HomDetectors::uniform(DetectorSpec::ideal(1.0)))
    }

    #[test]
    fn state_tables_are_normalized() {
        let mut s = SourceModel::ideal(0.04);
        s.schmidt_weights = vec![0.7, 0.3];
        s.spectral_heralding = (0.9, 0.8);
        s.raman_signal_mean = 0.01;
        s.raman_idler_mean = 0.02;
        for tr in [PairTruncation::AtTwo, PairTruncation::SinglePairOnly] {
            let total: f64 = state_table(&s, tr).iter().map(|(_, p)| p).sum();
            assert!((total - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn perfect_single_photons_never_coincide_at_zero_delay() {
        let (s, d) = ideal_setup(0.01);
        let p = hom_fourfold_exact(&s, &s, &d, 1.0, PairTruncation::SinglePairOnly).unwrap();
        assert_eq!(p, 0.0);
        let far = hom_fourfold_exact(&s, &s, &d, 0.0, PairTruncation::SinglePairOnly).unwrap();
        // Two distinguishable photons split with probability ½.
        assert!((far - 0.5 * 0.01 * 0.01).abs() < 1e-15);
    }

    #[test]
    fn monte_carlo_matches_enumeration() {
        let mut s = SourceModel::ideal(0.04);
        s.schmidt_weights = vec![0.8, 0.2];
        s.spectral_heralding = (0.92, 0.9);
        s.raman_signal_mean = 0.004;
        s.raman_idler_mean = 0.004;
        let mut det = DetectorSpec::ideal(0.05);
        det.dark_count_probability_per_gate = 1e-5;
        let d = HomDetectors::uniform(det);
        let scan = [(0.0, 0.9), (1e-12, 0.4), (5e-12, 0.0)];
        let opts = HomOptions {
            samples: 200_000,
            acquisition_pulses: 1_000_000,
            truncation: PairTruncation::AtTwo,
        };
        let r = simulate_hom(&s, &s, &d, &scan, &opts, 3).unwrap();
        for p in &r.points {
            let exact = hom_fourfold_exact(&s, &s, &d, p.overlap, PairTruncation::AtTwo).unwrap();
            assert!((p.rate - exact).abs() < 4.0 * p.rate_stderr, "{} vs {exact} ± {}", p.rate, p.rate_stderr);
        }
        assert!((r.baseline.fourfold - r.points[2].rate).abs() < 4.0 * r.points[2].rate_stderr);
        assert!(r.points[0].rate < r.points[2].rate);
    }

    #[test]
    fn reproducible() {
        let (s, d) = ideal_setup(0.05);
        let opts = HomOptions {
            samples: 50_000,
            ..Default::default()
        };
        let a = simulate_hom(&s, &s, &d, &[(0.0, 0.5)], &opts, 1).unwrap();
        let b = simulate_hom(&s, &s, &d, &[(0.0, 0.5)], &opts, 1).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_bad_overlap() {
        let (s, d) = ideal_setup(0.05);
        assert!(simulate_hom(&s, &s, &d, &[(0.0, 1.5)], &HomOptions::default(), 1).is_err());
    }
}
