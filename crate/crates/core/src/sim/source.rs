use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{config_err, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum RamanStatistics {
    #[default]
    Poissonian,
    /// Single-mode thermal (geometric) photon numbers.
    Thermal,
}

/// Stochastic model of one heralded source.
///
/// `mean_pairs_per_pulse` counts pairs with at least one photon inside its
/// pass band. Each such pair lands in one of three classes (both photons in
/// band, signal only, idler only) with probabilities fixed by the spectral
/// heralding efficiencies; see [`PairClasses`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceModel {
    pub mean_pairs_per_pulse: f64,
    pub schmidt_weights: Vec<f64>,
    pub raman_signal_mean: f64,
    pub raman_idler_mean: f64,
    pub channel_transmission_signal: f64,
    pub channel_transmission_idler: f64,
    /// (h_s, h_i): P(signal in band | idler in band), P(idler in band | signal in band).
    pub spectral_heralding: (f64, f64),
    #[serde(default)]
    pub raman_statistics: RamanStatistics,
}

impl SourceModel {
    /// Single-mode, perfectly heralded source with no background.
    pub fn ideal(mean_pairs_per_pulse: f64) -> Self {
        Self {
            mean_pairs_per_pulse,
            schmidt_weights: vec![1.0],
            raman_signal_mean: 0.0,
            raman_idler_mean: 0.0,
            channel_transmission_signal: 1.0,
            channel_transmission_idler: 1.0,
            spectral_heralding: (1.0, 1.0),
            raman_statistics: RamanStatistics::Poissonian,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mu = self.mean_pairs_per_pulse;
        if !(0.0..=0.5).contains(&mu) {
            return Err(config_err(format!(
                "mean pairs per pulse {mu} outside the perturbative range [0, 0.5]"
            )));
        }
        if self.schmidt_weights.is_empty() || self.schmidt_weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(config_err("Schmidt weights must be non-empty and non-negative"));
        }
        let sum: f64 = self.schmidt_weights.iter().sum();
        if (sum - 1.0).abs() > 1e-6 {
            return Err(config_err(format!("Schmidt weights sum to {sum}, expected 1")));
        }
        for (name, v) in [("raman_signal_mean", self.raman_signal_mean), ("raman_idler_mean", self.raman_idler_mean)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(config_err(format!("source.{name} must be >= 0")));
            }
        }
        for (name, v) in [
            ("channel_transmission_signal", self.channel_transmission_signal),
            ("channel_transmission_idler", self.channel_transmission_idler),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(config_err(format!("source.{name} must lie in [0, 1]")));
            }
        }
        let (hs, hi) = self.spectral_heralding;
        if !(hs > 0.0 && hs <= 1.0 && hi > 0.0 && hi <= 1.0) {
            return Err(config_err("spectral heralding efficiencies must lie in (0, 1]"));
        }
        Ok(())
    }

    pub fn pair_classes(&self) -> PairClasses {
        PairClasses::from_heralding(self.spectral_heralding.0, self.spectral_heralding.1)
    }

    /// FWM photons per pulse inside the signal band.
    pub fn signal_brightness(&self) -> f64 {
        let q = self.pair_classes();
        self.mean_pairs_per_pulse * (q.both + q.signal_only)
    }

    pub fn idler_brightness(&self) -> f64 {
        let q = self.pair_classes();
        self.mean_pairs_per_pulse * (q.both + q.idler_only)
    }

    /// Pairs per pulse with both photons in band.
    pub fn pair_in_band_rate(&self) -> f64 {
        self.mean_pairs_per_pulse * self.pair_classes().both
    }

    /// Sets the pair rate so that the signal band receives `photons_per_pulse` FWM photons.
    pub fn with_signal_brightness(mut self, photons_per_pulse: f64) -> Self {
        let q = self.pair_classes();
        self.mean_pairs_per_pulse = photons_per_pulse / (q.both + q.signal_only);
        self
    }

    /// Sets Raman means so Raman makes up `fraction` of the photons in each band.
    pub fn with_raman_fraction(mut self, fraction: f64) -> Self {
        let f = fraction / (1.0 - fraction);
        self.raman_signal_mean = f * self.signal_brightness();
        self.raman_idler_mean = f * self.idler_brightness();
        self
    }

    pub fn mode_number(&self) -> f64 {
        1.0 / self.schmidt_weights.iter().map(|w| w * w).sum::<f64>()
    }
}

/// Class probabilities of an in-band pair. With `P_b` the both-in-band
/// probability, `h_s = P_b/P_i` and `h_i = P_b/P_s`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairClasses {
    pub both: f64,
    pub signal_only: f64,
    pub idler_only: f64,
}

impl PairClasses {
    pub fn from_heralding(h_s: f64, h_i: f64) -> Self {
        let both = 1.0 / (1.0 / h_s + 1.0 / h_i - 1.0);
        Self {
            both,
            signal_only: both * (1.0 / h_i - 1.0),
            idler_only: both * (1.0 / h_s - 1.0),
        }
    }
}

/// Photon content of one pump pulse before any loss.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct PulseOccupancy {
    pub pairs_per_mode: Vec<u32>,
    pub raman_signal: u32,
    pub raman_idler: u32,
}

impl PulseOccupancy {
    pub fn total_pairs(&self) -> u32 {
        self.pairs_per_mode.iter().sum()
    }

    pub fn is_empty(&self) -> bool {
        self.total_pairs() == 0 && self.raman_signal == 0 && self.raman_idler == 0
    }
}

/// Photons entering the signal and idler channels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct PulsePhotons {
    pub signal: u32,
    pub idler: u32,
}

/// Precomputed sampling tables for one source.
#[derive(Debug, Clone)]
pub struct SourceSampler {
    /// Per-mode probability of at least one pair, `μλ/(1+μλ)`.
    p_mode: Vec<f64>,
    ln_p_mode: Vec<f64>,
    /// `Π(1 − p_k)` for all modes.
    p_empty: f64,
    /// Normalized CDF of "first mode with a pair" given at least one pair.
    first_cdf: Vec<f64>,
    classes: PairClasses,
    raman_signal: RamanSampler,
    raman_idler: RamanSampler,
}

#[derive(Debug, Clone)]
enum RamanSampler {
    Off,
    Poisson(Poisson<f64>),
    Thermal { p: f64, ln_p: f64 },
}

impl RamanSampler {
    fn new(mean: f64, stats: RamanStatistics) -> Self {
        if mean <= 0.0 {
            return RamanSampler::Off;
        }
        match stats {
            RamanStatistics::Poissonian => RamanSampler::Poisson(Poisson::new(mean).expect("positive mean")),
            RamanStatistics::Thermal => {
                let p = mean / (1.0 + mean);
                RamanSampler::Thermal { p, ln_p: p.ln() }
            }
        }
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u32 {
        match self {
            RamanSampler::Off => 0,
            RamanSampler::Poisson(d) => d.sample(rng) as u32,
            RamanSampler::Thermal { p, ln_p } => geometric(rng, *p, *ln_p),
        }
    }
}

/// Number of pairs in a thermal mode: `P(n) = (1−p)pⁿ`.
fn geometric<R: Rng + ?Sized>(rng: &mut R, p: f64, ln_p: f64) -> u32 {
    let v = 1.0 - rng.random::<f64>();
    if v > p {
        0
    } else {
        (v.ln() / ln_p).floor() as u32
    }
}

impl SourceSampler {
    pub fn new(source: &SourceModel) -> Result<Self> {
        source.validate()?;
        let mu = source.mean_pairs_per_pulse;
        let p_mode: Vec<f64> = source
            .schmidt_weights
            .iter()
            .map(|w| {
                let x = mu * w;
                x / (1.0 + x)
            })
            .collect();
        let ln_p_mode = p_mode.iter().map(|p| p.ln()).collect();
        let p_empty: f64 = p_mode.iter().map(|p| 1.0 - p).product();
        let mut first_cdf = Vec::with_capacity(p_mode.len());
        let mut none_before = 1.0;
        let mut acc = 0.0;
        for &p in &p_mode {
            acc += none_before * p;
            none_before *= 1.0 - p;
            first_cdf.push(acc);
        }
        if acc > 0.0 {
            first_cdf.iter_mut().for_each(|c| *c /= acc);
        }
        Ok(Self {
            p_mode,
            ln_p_mode,
            p_empty,
            first_cdf,
            classes: source.pair_classes(),
            raman_signal: RamanSampler::new(source.raman_signal_mean, source.raman_statistics),
            raman_idler: RamanSampler::new(source.raman_idler_mean, source.raman_statistics),
        })
    }

    pub fn modes(&self) -> usize {
        self.p_mode.len()
    }

    /// Pairs per Schmidt mode, written into `out`.
    pub fn draw_pairs<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [u32]) {
        out.iter_mut().for_each(|n| *n = 0);
        if rng.random::<f64>() < self.p_empty {
            return;
        }
        // Conditioned on at least one pair: pick the first occupied mode, give
        // it 1 + Geom pairs, and draw the later modes unconditionally.
        let u = rng.random::<f64>();
        let first = self.first_cdf.partition_point(|&c| c < u).min(self.p_mode.len() - 1);
        let p = self.p_mode[first];
        out[first] = 1 + geometric(rng, p, self.ln_p_mode[first]);
        for k in first + 1..self.p_mode.len() {
            let p = self.p_mode[k];
            if p > 0.0 {
                out[k] = geometric(rng, p, self.ln_p_mode[k]);
            }
        }
    }

    /// Total pairs over all modes, without materializing the per-mode vector.
    pub fn draw_total_pairs<R: Rng + ?Sized>(&self, rng: &mut R) -> u32 {
        if rng.random::<f64>() < self.p_empty {
            return 0;
        }
        let u = rng.random::<f64>();
        let first = self.first_cdf.partition_point(|&c| c < u).min(self.p_mode.len() - 1);
        let mut n = 1 + geometric(rng, self.p_mode[first], self.ln_p_mode[first]);
        for k in first + 1..self.p_mode.len() {
            let p = self.p_mode[k];
            if p > 0.0 {
                n += geometric(rng, p, self.ln_p_mode[k]);
            }
        }
        n
    }

    pub fn draw_raman<R: Rng + ?Sized>(&self, rng: &mut R) -> (u32, u32) {
        (self.raman_signal.sample(rng), self.raman_idler.sample(rng))
    }

    /// Splits `pairs` into in-band signal and idler photons.
    pub fn classify<R: Rng + ?Sized>(&self, rng: &mut R, pairs: u32) -> PulsePhotons {
        let mut ph = PulsePhotons::default();
        for _ in 0..pairs {
            let u = rng.random::<f64>();
            if u < self.classes.both {
                ph.signal += 1;
                ph.idler += 1;
            } else if u < self.classes.both + self.classes.signal_only {
                ph.signal += 1;
            } else {
                ph.idler += 1;
            }
        }
        ph
    }
}

/// One stochastic pulse: thermal pairs per Schmidt mode, Raman photons per band.
pub fn draw_pulse<R: Rng + ?Sized>(sampler: &SourceSampler, rng: &mut R) -> PulseOccupancy {
    let mut pairs = vec![0; sampler.modes()];
    sampler.draw_pairs(rng, &mut pairs);
    let (raman_signal, raman_idler) = sampler.draw_raman(rng);
    PulseOccupancy {
        pairs_per_mode: pairs,
        raman_signal,
        raman_idler,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn empty_source_never_emits() {
        let s = SourceSampler::new(&SourceModel::ideal(0.0)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..10_000 {
            assert!(draw_pulse(&s, &mut rng).is_empty());
        }
    }

    #[test]
    fn single_mode_thermal_distribution() {
        let mu: f64 = 0.1;
        let s = SourceSampler::new(&SourceModel::ideal(mu)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 1_000_000;
        let mut hist = [0u64; 4];
        let mut total = 0u64;
        let mut buf = [0u32; 1];
        for _ in 0..n {
            s.draw_pairs(&mut rng, &mut buf);
            hist[(buf[0] as usize).min(3)] += 1;
            total += buf[0] as u64;
        }
        for k in 0..3 {
            let p = mu.powi(k as i32) / (1.0 + mu).powi(k as i32 + 1);
            let expect = p * n as f64;
            let sigma = (n as f64 * p * (1.0 - p)).sqrt();
            assert!((hist[k] as f64 - expect).abs() < 3.0 * sigma, "n={k}: {} vs {expect}", hist[k]);
        }
        let mean = total as f64 / n as f64;
        let sigma = (mu * (1.0 + mu) / n as f64).sqrt();
        assert!((mean - mu).abs() < 3.0 * sigma);
    }

    #[test]
    fn multimode_mean_and_second_moment() {
        let mut src = SourceModel::ideal(0.2);
        src.schmidt_weights = vec![0.5, 0.3, 0.2];
        let s = SourceSampler::new(&src).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 1_000_000;
        let (mut m1, mut m2) = (0.0, 0.0);
        let mut buf = [0u32; 3];
        for _ in 0..n {
            s.draw_pairs(&mut rng, &mut buf);
            let t: u32 = buf.iter().sum();
            m1 += t as f64;
            m2 += (t * t.saturating_sub(1)) as f64;
        }
        m1 /= n as f64;
        m2 /= n as f64;
        assert!((m1 - 0.2).abs() < 3.0 * (0.25f64 / n as f64).sqrt());
        // E[n(n-1)] = μ²(1 + Σλ²) for independent thermal modes.
        let expect = 0.04 * (1.0 + 0.25 + 0.09 + 0.04);
        assert!((m2 - expect).abs() < 0.03 * expect, "{m2} vs {expect}");
    }

    #[test]
    fn classes_reproduce_heralding() {
        let q = PairClasses::from_heralding(0.9, 0.8);
        assert!((q.both + q.signal_only + q.idler_only - 1.0).abs() < 1e-12);
        assert!((q.both / (q.both + q.idler_only) - 0.9).abs() < 1e-12);
        assert!((q.both / (q.both + q.signal_only) - 0.8).abs() < 1e-12);
    }

    #[test]
    fn brightness_helpers() {
        let mut src = SourceModel::ideal(0.0);
        src.spectral_heralding = (0.92, 0.93);
        let src = src.with_signal_brightness(0.039).with_raman_fraction(0.1);
        assert!((src.signal_brightness() - 0.039).abs() < 1e-15);
        let frac = src.raman_signal_mean / (src.raman_signal_mean + src.signal_brightness());
        assert!((frac - 0.1).abs() < 1e-12);
    }

    #[test]
    fn validation() {
        assert!(SourceModel::ideal(0.6).validate().is_err());
        let mut s = SourceModel::ideal(0.1);
        s.schmidt_weights = vec![0.5, 0.4];
        assert!(s.validate().is_err());
        let mut s = SourceModel::ideal(0.1);
        s.channel_transmission_idler = 1.5;
        assert!(s.validate().is_err());
    }
}
