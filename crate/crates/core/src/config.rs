//! TOML job configuration. Every section is optional and defaults to the
//! paper's operating point; unknown keys are rejected.

use serde::{Deserialize, Serialize};

use crate::design::{DesignRanges, DEFAULT_THRESHOLD};
use crate::error::{config_err, NliError, Result};
use crate::modal::{heralding_efficiencies, schmidt_decompose_with, HeraldingReport, SchmidtOptions, SchmidtResult};
use crate::sim::{DetectorSpec, HomDetectors, HomOptions, PairTruncation, PowerScaling, RamanStatistics, SourceModel};
use crate::spectral::{apply_filter, compute_jsf, FilterSpec, FrequencyGrid, Jsf, NliConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub lambda_min_nm: f64,
    pub lambda_max_nm: f64,
    pub points: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            lambda_min_nm: 1535.0,
            lambda_max_nm: 1562.0,
            points: 512,
        }
    }
}

impl GridConfig {
    pub fn build(&self) -> Result<FrequencyGrid> {
        FrequencyGrid::from_wavelength_span(self.lambda_min_nm, self.lambda_max_nm, self.points)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IslandConfig {
    pub threshold: f64,
    pub bandwidths_nm: Vec<f64>,
}

impl Default for IslandConfig {
    fn default() -> Self {
        Self {
            threshold: DEFAULT_THRESHOLD,
            bandwidths_nm: vec![1.0, 1.5, 2.0],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SourceConfig {
    /// FWM photons per pulse in the signal band at the operating power.
    pub brightness: f64,
    /// Raman share of the band photons at the operating power.
    pub raman_fraction: f64,
    pub raman_statistics: RamanStatistics,
    pub channel_transmission_signal: f64,
    pub channel_transmission_idler: f64,
    /// Average pump power of the operating point, W.
    pub operating_power_w: f64,
}

impl Default for SourceConfig {
    fn default() -> Self {
        Self {
            brightness: 0.039,
            raman_fraction: 0.087,
            raman_statistics: RamanStatistics::Poissonian,
            channel_transmission_signal: 1.0,
            channel_transmission_idler: 1.0,
            operating_power_w: 50e-6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorsConfig {
    pub signal: DetectorSpec,
    pub idler: DetectorSpec,
    pub split_a: DetectorSpec,
    pub split_b: DetectorSpec,
}

impl Default for DetectorsConfig {
    fn default() -> Self {
        let with = |efficiency| DetectorSpec {
            efficiency,
            ..DetectorSpec::default()
        };
        Self {
            signal: with(0.041),
            idler: with(0.043),
            split_a: with(0.15),
            split_b: with(0.15),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub design: DesignRanges,
    pub powers_w: Vec<f64>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            design: DesignRanges::default(),
            powers_w: vec![10e-6, 20e-6, 30e-6, 40e-6, 50e-6],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HomConfig {
    pub delays_ps: Vec<f64>,
    pub samples: u64,
    pub acquisition_pulses: u64,
    pub truncation: PairTruncation,
    /// Used for all four detectors.
    pub detector: DetectorSpec,
}

impl Default for HomConfig {
    fn default() -> Self {
        let o = HomOptions::default();
        Self {
            delays_ps: (-24..=24).map(|k| k as f64 * 0.5).collect(),
            samples: o.samples,
            acquisition_pulses: o.acquisition_pulses,
            truncation: o.truncation,
            detector: DetectorSpec {
                efficiency: 0.05,
                dark_count_probability_per_gate: 0.0,
                dead_time_us: 0.0,
                gate_rate_mhz: 36.8,
            },
        }
    }
}

impl HomConfig {
    pub fn options(&self) -> HomOptions {
        HomOptions {
            samples: self.samples,
            acquisition_pulses: self.acquisition_pulses,
            truncation: self.truncation,
        }
    }

    pub fn detectors(&self) -> HomDetectors {
        HomDetectors::uniform(self.detector)
    }

    pub fn delays_s(&self) -> Vec<f64> {
        self.delays_ps.iter().map(|d| d * 1e-12).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub n_pulses: u64,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            n_pulses: 10_000_000,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct JobConfig {
    pub nli: NliConfig,
    pub grid: GridConfig,
    pub filter: FilterSpec,
    pub islands: IslandConfig,
    pub source: SourceConfig,
    pub detectors: DetectorsConfig,
    pub sweep: SweepConfig,
    pub hom: HomConfig,
    pub run: RunConfig,
}

impl JobConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: JobConfig = toml::from_str(text).map_err(|e| NliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| NliError::Parse(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.nli.validate()?;
        self.filter.validate()?;
        self.grid.build()?;
        if !(self.islands.threshold > 0.0 && self.islands.threshold < 1.0) {
            return Err(config_err("islands.threshold must lie in (0, 1)"));
        }
        if self.islands.bandwidths_nm.iter().any(|b| !(*b > 0.0)) {
            return Err(config_err("islands.bandwidths_nm must be positive"));
        }
        let s = &self.source;
        if !(s.brightness >= 0.0 && s.brightness <= 0.5) {
            return Err(config_err("source.brightness must lie in [0, 0.5]"));
        }
        if !(0.0..1.0).contains(&s.raman_fraction) {
            return Err(config_err("source.raman_fraction must lie in [0, 1)"));
        }
        if !(s.operating_power_w > 0.0) {
            return Err(config_err("source.operating_power_w must be > 0"));
        }
        for d in [&self.detectors.signal, &self.detectors.idler, &self.detectors.split_a, &self.detectors.split_b] {
            d.validate()?;
        }
        self.hom.detector.validate()?;
        if self.hom.samples == 0 {
            return Err(config_err("hom.samples must be >= 1"));
        }
        if self.run.n_pulses == 0 {
            return Err(config_err("run.n_pulses must be >= 1"));
        }
        Ok(())
    }

    /// Builds the JSF, filters it, and derives the stochastic source model.
    pub fn source_bundle(&self) -> Result<SourceBundle> {
        let grid = self.grid.build()?;
        let jsf = compute_jsf(&grid, &self.nli)?;
        let heralding = heralding_efficiencies(&jsf, &self.filter)?;
        let filtered = apply_filter(&jsf, &self.filter)?;
        // Out-of-band rows carry ~1e-11 of the power; cropping them keeps the SVD small.
        let schmidt = schmidt_decompose_with(
            &filtered,
            SchmidtOptions {
                crop_below: 1e-9,
                with_modes: true,
            },
        )?;
        let model = source_model(&schmidt, &heralding, &self.source)?;
        Ok(SourceBundle {
            jsf,
            heralding,
            schmidt,
            model,
        })
    }

    /// μ = c₂P², Raman = c₁P, anchored at the operating point of `model`.
    pub fn power_scaling(&self, model: &SourceModel) -> PowerScaling {
        let p = self.source.operating_power_w;
        PowerScaling {
            pairs_per_w2: model.mean_pairs_per_pulse / (p * p),
            raman_signal_per_w: model.raman_signal_mean / p,
            raman_idler_per_w: model.raman_idler_mean / p,
        }
    }
}

/// Source model from a filtered Schmidt decomposition and its heralding report.
pub fn source_model(schmidt: &SchmidtResult, heralding: &HeraldingReport, cfg: &SourceConfig) -> Result<SourceModel> {
    let kept = schmidt.kept_modes().max(1);
    let w = &schmidt.weights[..kept];
    let sum: f64 = w.iter().sum();
    let mut m = SourceModel {
        mean_pairs_per_pulse: 0.0,
        schmidt_weights: w.iter().map(|x| x / sum).collect(),
        raman_signal_mean: 0.0,
        raman_idler_mean: 0.0,
        channel_transmission_signal: cfg.channel_transmission_signal,
        channel_transmission_idler: cfg.channel_transmission_idler,
        spectral_heralding: (heralding.h_s_spectral, heralding.h_i_spectral),
        raman_statistics: cfg.raman_statistics,
    }
    .with_signal_brightness(cfg.brightness)
    .with_raman_fraction(cfg.raman_fraction);
    if m.mean_pairs_per_pulse == 0.0 {
        m.raman_signal_mean = 0.0;
        m.raman_idler_mean = 0.0;
    }
    m.validate()?;
    Ok(m)
}

#[derive(Debug, Clone)]
pub struct SourceBundle {
    pub jsf: Jsf,
    pub heralding: HeraldingReport,
    /// Decomposition of the filtered JSF.
    pub schmidt: SchmidtResult,
    pub model: SourceModel,
}
