//! The doubly robust estimator stays accurate when either nuisance model is
//! wrong: a value model fixed at zero, or a propensity model that omits the
//! covariate driving the missingness.
//!
//! `cargo run --release --example double_robustness -- [n]`

use afape::pipeline::{run_experiment, PropensityChoice, QChoice, RunConfig};

fn main() -> afape::Result<()> {
    let n = std::env::args().nth(1).map_or(100_000, |s| s.parse().expect("n"));
    let base = RunConfig {
        n,
        estimators: vec!["ipw-semi".into(), "dm-semi".into(), "drl-semi".into()],
        bootstrap: 0,
        ..RunConfig::default()
    };
    let settings = [
        ("both models fitted", base.clone()),
        (
            "value model = 0",
            RunConfig {
                q_model: QChoice::Zero,
                ..base.clone()
            },
        ),
        (
            "propensity without x0",
            RunConfig {
                propensity: PropensityChoice::DropX0,
                ..base.clone()
            },
        ),
    ];
    for (label, cfg) in settings {
        println!("{label}");
        for r in run_experiment(&cfg)?.rows {
            println!(
                "  {:<9} {:<9} {:>8.4} (truth {:.4}, {:.2}%)",
                r.estimator,
                r.agent,
                r.estimate,
                r.truth,
                100.0 * r.relative_error()
            );
        }
    }
    Ok(())
}
