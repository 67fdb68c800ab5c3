//! Monte Carlo photon counting.
//!
//! Runs are split into fixed-size batches. Batch `b` draws from ChaCha8
//! streams `4b + {0: pairs, 1: Raman, 2: routing/detection, 3: dark counts}`
//! seeded by the run seed, so a run is bit-identical for any worker count and
//! toggling Raman leaves the pair and detection draws untouched. Detector
//! dead time and the adjacent-pulse pairing restart at each batch boundary.

pub mod counting;
pub mod hom;
pub mod source;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{config_err, Result};

pub use counting::{
    simulate_coincidence_run, simulate_hbt, simulate_power_sweep, CountsRecord, HbtCounts, PowerPoint,
    PowerScaling,
};
pub use hom::{
    hom_fourfold_exact, overlap_scan, simulate_hom, HomBaseline, HomDetectors, HomOptions, HomPoint, HomScan,
    PairTruncation,
};
pub use source::{
    draw_pulse, PairClasses, PulseOccupancy, PulsePhotons, RamanStatistics, SourceModel, SourceSampler,
};

/// Pulses per batch.
pub const BATCH_PULSES: u64 = 1 << 20;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorSpec {
    pub efficiency: f64,
    pub dark_count_probability_per_gate: f64,
    pub dead_time_us: f64,
    pub gate_rate_mhz: f64,
}

impl Default for DetectorSpec {
    fn default() -> Self {
        Self {
            efficiency: 0.15,
            dark_count_probability_per_gate: 1e-6,
            dead_time_us: 10.0,
            gate_rate_mhz: 36.8,
        }
    }
}

impl DetectorSpec {
    /// Dead-time-free detector with the given efficiency and no dark counts.
    pub fn ideal(efficiency: f64) -> Self {
        Self {
            efficiency,
            dark_count_probability_per_gate: 0.0,
            dead_time_us: 0.0,
            gate_rate_mhz: 36.8,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.efficiency) {
            return Err(config_err("detector efficiency must lie in [0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.dark_count_probability_per_gate) {
            return Err(config_err("dark count probability must lie in [0, 1]"));
        }
        if !(self.dead_time_us >= 0.0 && self.dead_time_us.is_finite()) {
            return Err(config_err("dead time must be >= 0"));
        }
        if !(self.gate_rate_mhz > 0.0 && self.gate_rate_mhz.is_finite()) {
            return Err(config_err("gate rate must be > 0"));
        }
        Ok(())
    }

    /// Gates blocked after a click.
    pub fn dead_gates(&self) -> u64 {
        (self.dead_time_us * self.gate_rate_mhz).round() as u64
    }
}

/// Gated threshold detector with dead time.
#[derive(Debug, Clone)]
pub(crate) struct Gate {
    efficiency: f64,
    dark: f64,
    dead: u64,
    live_from: u64,
}

impl Gate {
    pub(crate) fn new(spec: &DetectorSpec) -> Self {
        Self {
            efficiency: spec.efficiency,
            dark: spec.dark_count_probability_per_gate,
            dead: spec.dead_gates(),
            live_from: 0,
        }
    }

    /// Click at gate `t` given `photons` arriving, each detected with
    /// `transmission × efficiency`. Draws one uniform from each stream.
    pub(crate) fn fire(
        &mut self,
        t: u64,
        photons: u32,
        transmission: f64,
        det: &mut ChaCha8Rng,
        dark: &mut ChaCha8Rng,
    ) -> bool {
        let u = det.random::<f64>();
        let hit = photons > 0 && u < 1.0 - (1.0 - transmission * self.efficiency).powi(photons as i32);
        self.fire_hit(t, hit, dark)
    }

    /// Click at gate `t` when photon detection was already decided.
    pub(crate) fn fire_hit(&mut self, t: u64, hit: bool, dark: &mut ChaCha8Rng) -> bool {
        let d = dark.random::<f64>() < self.dark;
        if t < self.live_from {
            return false;
        }
        let click = hit || d;
        if click {
            self.live_from = t + 1 + self.dead;
        }
        click
    }
}

pub(crate) struct BatchStreams {
    pub pairs: ChaCha8Rng,
    pub raman: ChaCha8Rng,
    pub detect: ChaCha8Rng,
    pub dark: ChaCha8Rng,
}

impl BatchStreams {
    pub(crate) fn new(seed: u64, batch: u64) -> Self {
        let stream = |k: u64| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(batch * 4 + k);
            rng
        };
        Self {
            pairs: stream(0),
            raman: stream(1),
            detect: stream(2),
            dark: stream(3),
        }
    }
}

/// Independent seed for sub-run `index` (splitmix64 finalizer).
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Runs `f(batch, pulses)` over all batches in parallel and folds the results in batch order.
pub(crate) fn run_batched<T, F, M>(n_pulses: u64, f: F, merge: M) -> T
where
    T: Send + Default,
    F: Fn(u64, u64) -> T + Sync,
    M: Fn(T, T) -> T,
{
    let batches = n_pulses.div_ceil(BATCH_PULSES);
    let parts: Vec<T> = (0..batches)
        .into_par_iter()
        .map(|b| {
            let len = BATCH_PULSES.min(n_pulses - b * BATCH_PULSES);
            f(b, len)
        })
        .collect();
    parts.into_iter().fold(T::default(), merge)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dead_time_quantization() {
        assert_eq!(DetectorSpec::default().dead_gates(), 368);
        assert_eq!(DetectorSpec::ideal(0.5).dead_gates(), 0);
    }

    #[test]
    fn detector_validation() {
        assert!(DetectorSpec::ideal(1.2).validate().is_err());
        let mut d = DetectorSpec::ideal(0.1);
        d.gate_rate_mhz = 0.0;
        assert!(d.validate().is_err());
    }

    #[test]
    fn gate_blocks_for_dead_time() {
        let spec = DetectorSpec {
            efficiency: 1.0,
            dark_count_probability_per_gate: 0.0,
            dead_time_us: 3.0,
            gate_rate_mhz: 1.0,
        };
        let mut g = Gate::new(&spec);
        let mut s = BatchStreams::new(0, 0);
        let clicks: Vec<bool> = (0..6).map(|t| g.fire(t, 1, 1.0, &mut s.detect, &mut s.dark)).collect();
        assert_eq!(clicks, [true, false, false, false, true, false]);
    }

    #[test]
    fn derived_seeds_differ() {
        assert_ne!(derive_seed(1, 0), derive_seed(1, 1));
        assert_ne!(derive_seed(1, 0), derive_seed(2, 0));
    }
}
