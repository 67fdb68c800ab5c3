//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any fails.

use nli_core::checks::{run_check, CHECK_COUNT};
use nli_core::config::JobConfig;

fn main() {
    let cfg = JobConfig::default();
    let mut failed = Vec::new();
    for id in 1..=CHECK_COUNT {
        let o = run_check(id, &cfg, cfg.run.seed);
        println!("{} [{:.1} s]", o.line(), o.elapsed_s);
        if !o.passed {
            failed.push(id);
        }
    }
    if failed.is_empty() {
        println!("acceptance: all {CHECK_COUNT} criteria pass");
    } else {
        println!("acceptance: failing criteria {failed:?}");
        std::process::exit(1);
    }
}
