//! The blocking transform and the semi-offline simulated dataset.
//!
//! A simulated agent may only acquire what the retrospective record holds.
//! This prints the blocked distributions of a random agent for one record
//! and the exact simulated trajectories with their probabilities.

use afape::classify::{fit_classifier, ClassifierConfig};
use afape::cost::CostSpec;
use afape::dgp::{generate, DgpConfig, Experiment};
use afape::policy::{block, Policy, SimPolicy};
use afape::simulate::{sample_dprime, Context, Inner};

fn main() -> afape::Result<()> {
    let cfg = DgpConfig::new(Experiment::E1).with_n(2000).with_seed(7);
    let data = generate(&cfg)?;
    let classifier = fit_classifier(&data, &ClassifierConfig::default(), 7)?;
    let policy = Policy::parse("random50", &cfg.map, &cfg.w)?;
    let costs = CostSpec::default();

    let rec = data.records.iter().find(|r| !r.is_complete_case()).expect("some incomplete record");
    println!("record {} retrospective masks:", rec.id);
    for t in 1..=rec.horizon() {
        let avail = rec.masks.at(t);
        let dist = policy.dist(t, &rec.observed, &[]);
        let blocked = block(&dist, avail);
        let show = |d: &afape::mask::MaskDist| {
            d.support().iter().map(|(m, p)| format!("{m}:{p:.3}")).collect::<Vec<_>>().join(" ")
        };
        println!("  t={t} available {avail}");
        println!("    agent   {}", show(&dist));
        println!("    blocked {}", show(&blocked));
    }

    let ctx = Context {
        map: &cfg.map,
        policy: &policy,
        classifier: &classifier,
        costs: &costs,
    };
    let one = data.subset(&[data.records.iter().position(|r| r.id == rec.id).unwrap()]);
    let sim = sample_dprime(&one, ctx, &SimPolicy::Target, Inner::Exact, 0)?;
    println!("\nexact simulated trajectories:");
    for s in &sim.records {
        let masks: Vec<String> = s.masks.iter().map(|m| m.to_string()).collect();
        println!(
            "  {}  mass {:.4}  cost {:.2}  target/sim {:?}",
            masks.join(" "),
            s.mass,
            s.total_cost(),
            s.p_alpha.iter().zip(&s.p_sim).map(|(a, b)| a / b).collect::<Vec<_>>()
        );
    }
    let total: f64 = sim.records.iter().map(|s| s.mass).sum();
    println!("total mass {total:.6}");
    Ok(())
}
