//! Fit the propensity model and the value model, and compare the fitted
//! propensity coefficients with the data-generating ones.
//!
//! `cargo run --release --example fit_nuisance -- [n]`

use afape::dgp::{BitMechanism, Experiment};
use afape::nuisance::BitModel;
use afape::pipeline::{prepare, RunConfig};

fn main() -> afape::Result<()> {
    let n = std::env::args().nth(1).map_or(100_000, |s| s.parse().expect("n"));
    let cfg = RunConfig {
        experiment: "1".into(),
        n,
        ..RunConfig::default()
    };
    let prep = prepare(&cfg)?;
    println!("propensity covariates {:?}", prep.propensity.covariates);
    for (t, bits) in prep.propensity.steps.iter().enumerate() {
        for (k, b) in bits.iter().enumerate() {
            match b {
                BitModel::Forced(p) => println!("  step {} superfeature {k}: fixed at {p}", t + 1),
                BitModel::Logistic(c) => println!("  step {} superfeature {k}: {c:.3?}", t + 1),
            }
        }
    }
    if let BitMechanism::Logistic(s) = &prep.dgp.missingness.bits[1] {
        println!("generating score: intercept {} terms {:?}", s.intercept, s.terms);
    }
    assert_eq!(prep.dgp.experiment, Experiment::E1);

    let policy = prep.policy("random50")?;
    let sim = prep.sim_policy(&cfg)?;
    let q = prep.fit_q(&cfg, &policy, &sim)?;
    for (t, loss) in q.train_loss.iter().enumerate() {
        let first = loss.first().copied().unwrap_or(f64::NAN);
        let last = loss.last().copied().unwrap_or(f64::NAN);
        println!("value model step {}: loss {first:.4} -> {last:.4}", t + 1);
    }
    let rec = &prep.splits.test.records[0];
    let v0 = q.v_value(0, &[], rec, &policy, &prep.dgp.map);
    println!("estimated expected cost of test record {}: {v0:.3}", rec.id);
    Ok(())
}
