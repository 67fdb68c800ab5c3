use nli_core::analysis::{analyze_power_sweep, live_gates};
use nli_core::config::JobConfig;
use nli_core::sim::{simulate_power_sweep, DetectorSpec};

/// Low-brightness sweep through detectors that are dead about half the time:
/// the dead-time correction must reproduce the dead-time-free estimates.
#[test]
fn power_sweep_closes_with_dead_time() {
    let mut cfg = JobConfig::default();
    cfg.source.brightness = 0.01;
    let b = cfg.source_bundle().unwrap();
    let scaling = cfg.power_scaling(&b.model);
    let gated = DetectorSpec {
        efficiency: 0.3,
        ..DetectorSpec::default()
    };
    let free = DetectorSpec {
        dead_time_us: 0.0,
        ..gated
    };
    let run = |det: &DetectorSpec| {
        let pts = simulate_power_sweep(&b.model, &scaling, &cfg.sweep.powers_w, det, det, cfg.run.n_pulses, 11).unwrap();
        let top = &pts.last().unwrap().counts;
        let dead = 1.0 - live_gates(top.n_pulses, top.singles_signal, det.dead_gates()) / top.n_pulses as f64;
        (analyze_power_sweep(&pts, det, det).unwrap(), dead)
    };
    let (with_dead, dead_share) = run(&gated);
    let (without, _) = run(&free);
    assert!(dead_share > 0.4, "dead share {dead_share}");

    let truth = (b.heralding.h_s_spectral, b.heralding.h_i_spectral);
    for (a, b_, t) in [
        (with_dead.heralding_signal, without.heralding_signal, truth.0),
        (with_dead.heralding_idler, without.heralding_idler, truth.1),
    ] {
        let sigma = a.stderr.hypot(b_.stderr);
        assert!((a.value - b_.value).abs() < 3.0 * sigma, "{} vs {} ± {sigma}", a.value, b_.value);
        // Residual multi-pair excess is about one brightness.
        assert!((a.value - t).abs() < 3.0 * a.stderr + 0.015, "{} ± {} vs {t}", a.value, a.stderr);
    }
    let p = cfg.source.operating_power_w;
    let r = with_dead.fit_signal.linear_fraction(p);
    assert!((r - cfg.source.raman_fraction).abs() < 0.02, "Raman fraction {r}");
}

/// At higher brightness the estimate sits above the spectral truth by about
/// (g2 - 1)·μ because a heralding click favours multi-pair pulses.
#[test]
fn heralding_excess_grows_with_brightness() {
    let mut cfg = JobConfig::default();
    let det = DetectorSpec::ideal(0.3);
    let mut excess = Vec::new();
    for brightness in [0.005, 0.08] {
        cfg.source.brightness = brightness;
        let b = cfg.source_bundle().unwrap();
        let scaling = cfg.power_scaling(&b.model);
        let pts = simulate_power_sweep(&b.model, &scaling, &cfg.sweep.powers_w, &det, &det, 4_000_000, 5).unwrap();
        let a = analyze_power_sweep(&pts, &det, &det).unwrap();
        excess.push(a.heralding_signal.value / b.heralding.h_s_spectral - 1.0);
    }
    assert!(excess[0].abs() < 0.02, "{excess:?}");
    assert!(excess[1] > 0.03 && excess[1] < 0.15, "{excess:?}");
}

#[test]
fn raman_free_sweep_has_no_linear_term() {
    let mut cfg = JobConfig::default();
    cfg.source.raman_fraction = 0.0;
    let b = cfg.source_bundle().unwrap();
    let scaling = cfg.power_scaling(&b.model);
    let det = DetectorSpec::ideal(0.3);
    let pts = simulate_power_sweep(&b.model, &scaling, &cfg.sweep.powers_w, &det, &det, 2_000_000, 3).unwrap();
    let a = analyze_power_sweep(&pts, &det, &det).unwrap();
    let f = a.fit_signal;
    let sigma = f.covariance[0][0].sqrt();
    assert!(f.s1.abs() < 4.0 * sigma, "s1 {} ± {sigma}", f.s1);
    assert!(f.s2 > 0.0);
}
