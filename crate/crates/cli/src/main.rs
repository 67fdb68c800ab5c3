//! `nli`: command-line jobs for the nonlinear-interferometer photon source.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use nli_core::analysis::{
    analyze_power_sweep, correct_visibility, fit_hom_dip, g2_from_hbt, g2_unheralded, raman_correct_g2s,
    BackgroundFloor, DipFit, DipPoint, Estimate, MultipairCorrection, PowerSweepAnalysis, VisibilityReport,
};
use nli_core::checks::{run_all, CheckOutcome};
use nli_core::config::JobConfig;
use nli_core::design::{islands_for, label_islands, score_island, sweep_design, IslandReport};
use nli_core::io::{
    read_hom_csv, write_hom_csv, write_json, write_matrix_csv, write_sweep_csv, LabelledMatrix, Manifest,
};
use nli_core::modal::{mode_number_from_g2, HeraldingReport};
use nli_core::sim::{
    hom_fourfold_exact, overlap_scan, simulate_hbt, simulate_hom, simulate_power_sweep, CountsRecord, HomPoint,
    HomScan, PairTruncation, PowerPoint,
};
use nli_core::spectral::{FilterSpec, JsfMetadata};
use nli_core::NliError;

#[derive(Parser, Debug)]
#[command(name = "nli", version, about = "Nonlinear-interferometer photon-source design, simulation and analysis")]
struct Cli {
    /// TOML job configuration; missing keys take the default operating point.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Output root; each job writes into `<out>/<command>/`.
    #[arg(long, global = true, env = "NLI_OUT_DIR", value_name = "DIR", default_value = "nli-out")]
    out: PathBuf,
    /// Overrides `run.seed`.
    #[arg(long, global = true, value_name = "U64")]
    seed: Option<u64>,
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Joint spectral intensity map.
    Jsi,
    /// Schmidt decomposition and heralding of the filtered spectrum.
    Schmidt,
    /// Island segmentation with per-island filter scores.
    Islands,
    /// Design sweep over pump bandwidth, SMF length, stage number and filter bandwidth.
    Design,
    /// Singles/coincidence runs over the configured pump powers.
    Simulate,
    /// Heralded HBT run at the operating point.
    Hbt,
    /// Two-source HOM fourfold scan.
    Hom,
    /// Data reduction of simulated or measured records.
    Analyze(AnalyzeArgs),
    /// Runs every acceptance check and prints the verdict table.
    Reproduce,
}

#[derive(Args, Debug)]
struct AnalyzeArgs {
    /// Power-sweep JSON written by `simulate`.
    #[arg(long, value_name = "PATH")]
    power_sweep: Option<PathBuf>,
    /// Counts-record JSON written by `hbt`.
    #[arg(long, value_name = "PATH")]
    hbt: Option<PathBuf>,
    /// HOM scan, JSON from `hom` or CSV with delay_s,fourfold,n_pulses,... columns.
    #[arg(long, value_name = "PATH")]
    hom: Option<PathBuf>,
    /// Fit HOM rates with their sampling errors instead of the integer counts.
    #[arg(long)]
    fit_rates: bool,
}

/// Every JSON output: the payload plus the resolved configuration.
#[derive(Debug, Serialize, Deserialize)]
struct Envelope<T> {
    command: String,
    seed: u64,
    config: JobConfig,
    result: T,
}

/// Reads either an [`Envelope`] or the bare payload.
fn read_payload<T: DeserializeOwned>(path: &Path) -> Result<T, NliError> {
    let value: serde_json::Value = nli_core::io::read_json(path)?;
    let inner = match value {
        serde_json::Value::Object(ref m) if m.contains_key("result") && m.contains_key("config") => m["result"].clone(),
        v => v,
    };
    Ok(serde_json::from_value(inner)?)
}

struct Job {
    name: &'static str,
    dir: PathBuf,
    cfg: JobConfig,
    files: Vec<String>,
}

impl Job {
    fn path(&mut self, file: &str) -> PathBuf {
        self.files.push(file.to_string());
        self.dir.join(file)
    }

    fn json<T: Serialize>(&mut self, file: &str, result: T) -> Result<(), NliError> {
        let env = Envelope {
            command: self.name.to_string(),
            seed: self.cfg.run.seed,
            config: self.cfg.clone(),
            result,
        };
        let p = self.path(file);
        write_json(&p, &env)
    }

    fn finish(mut self) -> Result<(), NliError> {
        let toml = self.cfg.to_toml_string()?;
        let p = self.path("config.toml");
        std::fs::write(p, toml)?;
        let manifest = Manifest::new(self.name, self.cfg.run.seed, &self.cfg, self.files.clone())?;
        write_json(&self.dir.join("manifest.json"), &manifest)?;
        for f in &self.files {
            println!("{}", self.dir.join(f).display());
        }
        Ok(())
    }
}

enum Failure {
    Checks,
    Error(NliError),
}

impl From<NliError> for Failure {
    fn from(e: NliError) -> Self {
        Failure::Error(e)
    }
}

fn exit_code(e: &NliError) -> u8 {
    match e {
        NliError::Config(_) | NliError::Grid(_) => 2,
        NliError::Io(_) | NliError::Parse(_) => 3,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Checks) => ExitCode::from(1),
        Err(Failure::Error(e)) => {
            eprintln!("nli: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn load_config(path: Option<&Path>) -> Result<JobConfig, NliError> {
    match path {
        Some(p) => {
            let text = std::fs::read_to_string(p)?;
            JobConfig::from_toml_str(&text)
        }
        None => Ok(JobConfig::default()),
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    let mut cfg = load_config(cli.config.as_deref())?;
    if let Some(s) = cli.seed {
        cfg.run.seed = s;
    }
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(NliError::Config("--threads must be >= 1".into()).into());
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| NliError::Config(e.to_string()))?;
    }
    let name = match &cli.command {
        Command::Jsi => "jsi",
        Command::Schmidt => "schmidt",
        Command::Islands => "islands",
        Command::Design => "design",
        Command::Simulate => "simulate",
        Command::Hbt => "hbt",
        Command::Hom => "hom",
        Command::Analyze(_) => "analyze",
        Command::Reproduce => "reproduce",
    };
    let dir = cli.out.join(name);
    std::fs::create_dir_all(&dir).map_err(NliError::from)?;
    let mut job = Job {
        name,
        dir,
        cfg,
        files: Vec::new(),
    };
    let mut checks_failed = false;
    match cli.command {
        Command::Jsi => cmd_jsi(&mut job)?,
        Command::Schmidt => cmd_schmidt(&mut job)?,
        Command::Islands => cmd_islands(&mut job)?,
        Command::Design => cmd_design(&mut job)?,
        Command::Simulate => cmd_simulate(&mut job)?,
        Command::Hbt => cmd_hbt(&mut job)?,
        Command::Hom => cmd_hom(&mut job)?,
        Command::Analyze(args) => cmd_analyze(&mut job, &args)?,
        Command::Reproduce => checks_failed = !cmd_reproduce(&mut job)?,
    }
    job.finish()?;
    if checks_failed {
        return Err(Failure::Checks);
    }
    Ok(())
}

fn labelled(job: &Job, values: nli_core::nalgebra::DMatrix<f64>) -> Result<LabelledMatrix, NliError> {
    let grid = job.cfg.grid.build()?;
    Ok(LabelledMatrix {
        signal_nm: grid.signal_wavelengths_nm(),
        idler_nm: grid.idler_wavelengths_nm(),
        values,
    })
}

fn cmd_jsi(job: &mut Job) -> Result<(), NliError> {
    let grid = job.cfg.grid.build()?;
    let jsf = nli_core::spectral::compute_jsf(&grid, &job.cfg.nli)?;
    let m = labelled(job, jsf.jsi())?;
    let p = job.path("jsi.csv");
    write_matrix_csv(&p, &m)?;
    job.json::<&JsfMetadata>("jsi_meta.json", &jsf.metadata)
}

#[derive(Serialize)]
struct SchmidtReport<'a> {
    filter: FilterSpec,
    mode_number: f64,
    purity: f64,
    kept_modes: usize,
    /// Leading weights (at most 32).
    weights: &'a [f64],
    heralding: HeraldingReport,
}

fn cmd_schmidt(job: &mut Job) -> Result<(), NliError> {
    let b = job.cfg.source_bundle()?;
    let n = b.schmidt.weights.len().min(32);
    let report = SchmidtReport {
        filter: job.cfg.filter,
        mode_number: b.schmidt.mode_number,
        purity: b.schmidt.purity,
        kept_modes: b.schmidt.kept_modes(),
        weights: &b.schmidt.weights[..n],
        heralding: b.heralding,
    };
    job.json("schmidt.json", report)
}

fn cmd_islands(job: &mut Job) -> Result<(), NliError> {
    let grid = job.cfg.grid.build()?;
    let (jsf, islands) = islands_for(&job.cfg.nli, &grid, job.cfg.islands.threshold)?;
    let scored = islands
        .iter()
        .map(|i| score_island(&jsf, i, &job.cfg.islands.bandwidths_nm))
        .collect::<Result<Vec<IslandReport>, _>>()?;
    let (labels, _) = label_islands(&jsf.jsi(), job.cfg.islands.threshold);
    let mask = labelled(job, labels.map(|l| l as f64))?;
    let p = job.path("island_labels.csv");
    write_matrix_csv(&p, &mask)?;
    job.json("islands.json", scored)
}

fn cmd_design(job: &mut Job) -> Result<(), NliError> {
    let grid = job.cfg.grid.build()?;
    let rows = sweep_design(&job.cfg.nli, &job.cfg.sweep.design, &grid, job.cfg.islands.threshold)?;
    let p = job.path("sweep.csv");
    write_sweep_csv(&p, &rows)?;
    job.json("sweep.json", rows)
}

fn cmd_simulate(job: &mut Job) -> Result<(), NliError> {
    let b = job.cfg.source_bundle()?;
    let scaling = job.cfg.power_scaling(&b.model);
    let d = &job.cfg.detectors;
    let pts = simulate_power_sweep(
        &b.model,
        &scaling,
        &job.cfg.sweep.powers_w,
        &d.signal,
        &d.idler,
        job.cfg.run.n_pulses,
        job.cfg.run.seed,
    )?;
    job.json("power_sweep.json", pts)
}

fn cmd_hbt(job: &mut Job) -> Result<(), NliError> {
    let b = job.cfg.source_bundle()?;
    let d = &job.cfg.detectors;
    let rec = simulate_hbt(&b.model, &d.idler, &d.split_a, &d.split_b, job.cfg.run.n_pulses, job.cfg.run.seed)?;
    job.json("hbt.json", rec)
}

fn cmd_hom(job: &mut Job) -> Result<(), NliError> {
    let b = job.cfg.source_bundle()?;
    let scan = overlap_scan(&b.schmidt, &b.schmidt, &job.cfg.hom.delays_s())?;
    let res = simulate_hom(
        &b.model,
        &b.model,
        &job.cfg.hom.detectors(),
        &scan,
        &job.cfg.hom.options(),
        job.cfg.run.seed,
    )?;
    let p = job.path("hom.csv");
    write_hom_csv(&p, &res.points)?;
    job.json("hom.json", res)
}

#[derive(Debug, Default, Serialize)]
struct AnalysisReport {
    power_sweep: Option<PowerSweepAnalysis>,
    /// Raman share of the signal singles at the operating power.
    raman_fraction: f64,
    raman_fraction_source: &'static str,
    g2_heralded: Option<Estimate>,
    g2_unheralded: Option<Estimate>,
    g2_unheralded_raman_corrected: Option<f64>,
    mode_number_from_g2: Option<f64>,
    dip_fit: Option<DipFit>,
    visibility: Option<VisibilityReport>,
}

fn cmd_analyze(job: &mut Job, args: &AnalyzeArgs) -> Result<(), NliError> {
    if args.power_sweep.is_none() && args.hbt.is_none() && args.hom.is_none() {
        return Err(NliError::Config("analyze needs --power-sweep, --hbt or --hom".into()));
    }
    let cfg = job.cfg.clone();
    let mut rep = AnalysisReport {
        raman_fraction: cfg.source.raman_fraction,
        raman_fraction_source: "config",
        ..Default::default()
    };
    if let Some(p) = &args.power_sweep {
        let pts: Vec<PowerPoint> = read_payload(p)?;
        let a = analyze_power_sweep(&pts, &cfg.detectors.signal, &cfg.detectors.idler)?;
        rep.raman_fraction = a.fit_signal.linear_fraction(cfg.source.operating_power_w).clamp(0.0, 0.999);
        rep.raman_fraction_source = "power fit";
        rep.power_sweep = Some(a);
    }
    if let Some(p) = &args.hbt {
        let rec: CountsRecord = read_payload(p)?;
        let h = rec
            .hbt
            .ok_or_else(|| NliError::Parse("counts record has no HBT section".into()))?;
        rep.g2_heralded = g2_from_hbt(h.herald, h.herald_a, h.herald_b, h.herald_ab).ok();
        if let Ok(g) = g2_unheralded(rec.n_pulses, h.a, h.b, h.ab) {
            let corrected = raman_correct_g2s(g.value, rep.raman_fraction, cfg.source.raman_statistics)?;
            rep.g2_unheralded_raman_corrected = Some(corrected);
            rep.mode_number_from_g2 = mode_number_from_g2(corrected).ok();
            rep.g2_unheralded = Some(g);
        }
    }
    if let Some(p) = &args.hom {
        let is_csv = p.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"));
        let (points, baseline) = if is_csv {
            (read_hom_csv(p)?, None)
        } else {
            let scan: HomScan = read_payload(p)?;
            (scan.points, Some(scan.baseline))
        };
        let dips = dip_points(&points, args.fit_rates);
        let fit = fit_hom_dip(&dips)?;
        let raw = VisibilityReport::from_fit(&fit);
        let background = match baseline {
            Some(b) => BackgroundFloor {
                fractions: [rep.raman_fraction; 4],
                singles: b.singles,
                threefolds: b.threefolds,
                fourfold: b.fourfold,
            },
            None => BackgroundFloor::none(),
        };
        let multipair = multipair_delta(&cfg)?;
        rep.visibility = Some(correct_visibility(&raw, &background, &multipair)?);
        rep.dip_fit = Some(fit);
    }
    job.json("analysis.json", rep)
}

fn dip_points(points: &[HomPoint], rates: bool) -> Vec<DipPoint> {
    points
        .iter()
        .map(|p| {
            if rates {
                DipPoint {
                    delay_s: p.delay_s,
                    value: p.rate,
                    sigma: p.rate_stderr,
                }
            } else {
                DipPoint {
                    delay_s: p.delay_s,
                    value: p.fourfold as f64,
                    sigma: (p.fourfold.max(1) as f64).sqrt(),
                }
            }
        })
        .collect()
}

/// Single-pair minus two-pair visibility of the configured source, Raman off.
fn multipair_delta(cfg: &JobConfig) -> Result<MultipairCorrection, NliError> {
    let b = cfg.source_bundle()?;
    let src = b.model.with_raman_fraction(0.0);
    let dets = cfg.hom.detectors();
    let xi = overlap_scan(&b.schmidt, &b.schmidt, &[0.0])?[0].1;
    let v = |t: PairTruncation| -> Result<f64, NliError> {
        let far = hom_fourfold_exact(&src, &src, &dets, 0.0, t)?;
        Ok(1.0 - hom_fourfold_exact(&src, &src, &dets, xi, t)? / far)
    };
    Ok(MultipairCorrection {
        delta_v: v(PairTruncation::SinglePairOnly)? - v(PairTruncation::AtTwo)?,
        delta_v_err: 0.0,
    })
}

/// Returns whether every check passed.
fn cmd_reproduce(job: &mut Job) -> Result<bool, NliError> {
    let outcomes: Vec<CheckOutcome> = run_all(&job.cfg, job.cfg.run.seed);
    for o in &outcomes {
        println!("{}", o.line());
    }
    let ok = outcomes.iter().all(|o| o.passed);
    job.json("checks.json", &outcomes)?;
    Ok(ok)
}
