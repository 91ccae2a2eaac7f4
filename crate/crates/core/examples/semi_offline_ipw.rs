//! Evaluate both agents on one experiment with every estimator.
//!
//! `cargo run --release --example semi_offline_ipw -- [experiment] [n] [seed]`

use std::time::Instant;

use afape::pipeline::{run_experiment, RunConfig};

fn main() -> afape::Result<()> {
    let mut args = std::env::args().skip(1);
    let cfg = RunConfig {
        experiment: args.next().unwrap_or_else(|| "1".into()),
        n: args.next().map_or(100_000, |s| s.parse().expect("n")),
        seed: args.next().map_or(0, |s| s.parse().expect("seed")),
        ..RunConfig::default()
    };
    let start = Instant::now();
    let out = run_experiment(&cfg)?;
    println!(
        "{:<10} {:<10} {:>9} {:>19} {:>9} {:>8}",
        "estimator", "agent", "estimate", "95% interval", "truth", "rel.err"
    );
    for r in &out.rows {
        println!(
            "{:<10} {:<10} {:>9.4} [{:>8.4}, {:>8.4}] {:>9.4} {:>7.2}%",
            r.estimator,
            r.agent,
            r.estimate,
            r.ci_lo.unwrap_or(f64::NAN),
            r.ci_hi.unwrap_or(f64::NAN),
            r.truth,
            100.0 * r.relative_error()
        );
    }
    for s in &out.skipped {
        println!("skipped {} for {}: {}", s.estimator, s.agent, s.reason);
    }
    println!("elapsed {:.1}s", start.elapsed().as_secs_f64());
    Ok(())
}
