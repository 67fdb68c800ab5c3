use nli_core::design::{islands_for, roundest_island, separation_contrast, IslandReport, DEFAULT_THRESHOLD};
use nli_core::spectral::{FrequencyGrid, NliConfig};

fn config(pump_nm: f64, smf_m: f64, stages: u32) -> NliConfig {
    let mut c = NliConfig::default();
    c.pump.fwhm_bandwidth_nm = pump_nm;
    c.smf.length_m = smf_m;
    c.stages = stages;
    c
}

fn islands(c: &NliConfig) -> (nli_core::spectral::Jsf, Vec<IslandReport>) {
    islands_for(c, &FrequencyGrid::paper_default(), DEFAULT_THRESHOLD).unwrap()
}

/// Detuning of the heaviest island of order `m` below the diagonal.
fn detuning_of_order(isl: &[IslandReport], m: i64) -> f64 {
    isl.iter()
        .filter(|i| i.detuning < 0.0 && i.interference_order() == Some(m))
        .max_by(|a, b| a.island_mass.total_cmp(&b.island_mass))
        .map(|i| i.detuning)
        .unwrap_or_else(|| panic!("no island of order {m}"))
}

#[test]
fn roundest_island_follows_pump_and_spacer() {
    let order = |p, l| {
        let (_, isl) = islands(&config(p, l, 3));
        roundest_island(&isl).and_then(|i| i.interference_order())
    };
    assert_eq!(order(1.0, 20.0), Some(1));
    assert_eq!(order(0.7, 20.0), Some(2));
    assert_eq!(order(1.0, 11.0), Some(2));
}

#[test]
fn island_spacing_scales_with_inverse_root_length() {
    let (_, long) = islands(&config(1.0, 20.0, 3));
    let (_, short) = islands(&config(1.0, 11.0, 3));
    let expected = (20.0f64 / 11.0).sqrt();
    for m in 1..=3 {
        let ratio = detuning_of_order(&short, m) / detuning_of_order(&long, m);
        assert!((ratio - expected).abs() < 0.01 * expected, "order {m}: ratio {ratio}, expected {expected}");
    }
}

#[test]
fn island_centers_do_not_move_with_pump_bandwidth() {
    let grid = FrequencyGrid::paper_default();
    let half_cell = 0.5 * grid.d_omega_signal();
    let (_, wide) = islands(&config(1.0, 20.0, 3));
    let (_, narrow) = islands(&config(0.7, 20.0, 3));
    for m in 1..=4 {
        let d = (detuning_of_order(&wide, m) - detuning_of_order(&narrow, m)).abs();
        assert!(d < half_cell, "order {m} moved by {d:e} rad/s");
    }
}

#[test]
fn more_stages_separate_islands_better() {
    let contrast: Vec<f64> = [2, 3, 4]
        .iter()
        .map(|&n| {
            let (jsf, isl) = islands(&config(1.0, 20.0, n));
            separation_contrast(&jsf, &isl).unwrap()
        })
        .collect();
    assert!(contrast.windows(2).all(|w| w[1] <= w[0]), "{contrast:?}");
}

#[test]
fn single_stage_is_one_band() {
    let (_, three) = islands(&config(1.0, 20.0, 3));
    let (_, one) = islands(&config(1.0, 20.0, 1));
    assert!(three.len() >= 3);
    assert!(one.len() < three.len());
    // Without interference every labelled region sits on the θ = 0 band.
    let heavy = one.iter().max_by(|a, b| a.island_mass.total_cmp(&b.island_mass)).unwrap();
    assert!(heavy.island_mass > 0.9, "{}", heavy.island_mass);
}

#[test]
fn islands_are_disjoint_and_bounded() {
    let (_, isl) = islands(&config(1.0, 20.0, 3));
    let mass: f64 = isl.iter().map(|i| i.island_mass).sum();
    assert!(mass <= 1.0 + 1e-9);
    assert!(isl.iter().all(|i| i.roundness > 0.0 && i.roundness <= 1.0));
    let mut idx: Vec<usize> = isl.iter().map(|i| i.index).collect();
    idx.dedup();
    assert_eq!(idx, (1..=isl.len()).collect::<Vec<_>>());
}
