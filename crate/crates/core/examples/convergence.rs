//! Median absolute error of the three weighting estimators on subsamples of
//! the test split.
//!
//! `cargo run --release --example convergence -- [replicates]`

use afape::pipeline::{run_convergence, RunConfig, CONVERGENCE_ESTIMATORS};

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 0 {
        0.5 * (v[m - 1] + v[m])
    } else {
        v[m]
    }
}

fn main() -> afape::Result<()> {
    let seeds = std::env::args().nth(1).map_or(20, |s| s.parse().expect("replicates"));
    let cfg = RunConfig {
        seeds,
        ..RunConfig::default()
    };
    let rows = run_convergence(&cfg)?;
    for agent in &cfg.agents {
        println!("{agent}");
        for &n in &cfg.ns {
            let line: Vec<String> = CONVERGENCE_ESTIMATORS
                .iter()
                .map(|e| {
                    let errs: Vec<f64> = rows
                        .iter()
                        .filter(|r| &r.agent == agent && r.n == n && r.estimator == e.to_string())
                        .map(|r| r.abs_error)
                        .collect();
                    format!("{e} {:.3}", median(errs))
                })
                .collect();
            println!("  n={n:<6} {}", line.join("  "));
        }
    }
    Ok(())
}
