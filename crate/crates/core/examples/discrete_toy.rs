//! A binary toy process where everything can be enumerated: the exact
//! expected cost, the exact value function, and the positivity sets.

use afape::estimators::Estimator;
use afape::mask::StepMask;
use afape::nuisance::TrainConfig;
use afape::toy::{DiscreteToy, Seen};
use rand::SeedableRng;

fn main() -> afape::Result<()> {
    let toy = DiscreteToy::single_step();
    let ests = [
        Estimator::IpwOff,
        Estimator::IpwMiss,
        Estimator::IpwSemi,
        Estimator::DmSemi,
        Estimator::DrlSemi,
    ];
    let run = toy.evaluate(50_000, 0, &ests, true, &TrainConfig::default())?;
    println!("exact expected cost {:.4}", run.exact);
    for (e, r) in &run.estimates {
        let v = r.as_ref().map_err(|e| e.to_string()).expect("estimate");
        println!("  {e:<9} {v:.4} ({:+.2}%)", 100.0 * (v - run.exact) / run.exact);
    }
    for x0 in [-1.0, 1.0] {
        let rec = run.nuisance.records.iter().find(|r| r.observed.get(0, 0) == Some(x0)).expect("both values occur");
        for a in [false, true] {
            let m = StepMask::from_bits(u32::from(a), 1);
            println!(
                "  x0={x0:+} acquire={a:<5} fitted {:.3} exact {:.3}",
                run.q.q_value(1, &[m], rec),
                toy.exact_first_q(a, x0)
            );
        }
    }

    // admissible sets of a two-step toy
    let mut two = DiscreteToy::single_step();
    two.horizon = 2;
    two.retro = vec![[0.5; 3], [0.0, 0.5, 0.5]];
    two.agent = vec![[0.0; 3], [0.5; 3]];
    println!(
        "\nlocal {:?} regional {:?} global {} maximal {}",
        two.local_admissible(1, Seen::Neg, false),
        two.regional_admissible(1, 0, Seen::Neg, false),
        two.global_positivity(),
        two.maximal_global_positivity()
    );

    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
    let (mut offline, mut missing, mut global) = (0, 0, 0);
    for _ in 0..1000 {
        let t = DiscreteToy::random(3, 0.3, &mut rng);
        offline += usize::from(t.offline_positivity());
        missing += usize::from(t.missing_positivity());
        global += usize::from(t.global_positivity());
    }
    println!("1000 random toys: offline {offline}, missing {missing}, semi-offline global {global}");
    Ok(())
}
