//! Positivity diagnostics for each view on the first three experiments.
//!
//! A step violates when the retrospective mass supporting the agent's wanted
//! action is below the threshold. Experiment 2 starves the missing-data
//! view, experiment 3 the offline view.

use afape::dgp::{generate, DgpConfig, Experiment};
use afape::nuisance::{PropensityModel, PropensitySpec};
use afape::policy::Policy;
use afape::positivity::{diagnose, View};

fn main() -> afape::Result<()> {
    println!(
        "{:<4} {:<9} {:<13} {:>10} {:>10} {:>10}",
        "exp", "agent", "view", "steps", "records", "min mass"
    );
    for e in [Experiment::E1, Experiment::E2, Experiment::E3] {
        let cfg = DgpConfig::new(e).with_n(20_000).with_seed(1);
        let data = generate(&cfg)?;
        let prop = PropensityModel::fit(&data, &PropensitySpec::for_experiment(e))?;
        for agent in ["random50", "fixed100"] {
            let policy = Policy::parse(agent, &cfg.map, &cfg.w)?;
            for view in View::ALL {
                let r = diagnose(view, &data, &prop, &policy, 0.01, 0, 1);
                println!(
                    "{:<4} {:<9} {:<13} {:>9.2}% {:>9.2}% {:>10.2e}",
                    e.to_string(),
                    agent,
                    format!("{view:?}"),
                    100.0 * r.violation_fraction,
                    100.0 * r.record_violation_fraction,
                    r.min_mass
                );
            }
        }
    }
    Ok(())
}
