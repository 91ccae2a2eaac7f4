//! Property tests over generated data: serialization round trips, the
//! simulated dataset, and relations between estimators that hold exactly.

use proptest::prelude::*;

use afape::data::Dataset;
use afape::dgp::{generate, DgpConfig, Experiment};
use afape::estimators::{ipw_off_table, semi_table, Inputs};
use afape::nuisance::PropensityModel;
use afape::pipeline::{prepare, RunConfig};
use afape::policy::IdVariant;
use afape::simulate::{sample_dprime, Inner};

fn experiment(i: usize) -> Experiment {
    Experiment::ALL[i % Experiment::ALL.len()]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn csv_and_jsonl_round_trip(e in 0usize..5, n in 1usize..40, seed in any::<u64>()) {
        let cfg = DgpConfig::new(experiment(e)).with_n(n).with_seed(seed);
        let data = generate(&cfg).unwrap();

        let mut buf = Vec::new();
        data.write_csv(&mut buf).unwrap();
        let back = Dataset::read_csv(buf.as_slice(), cfg.map.clone(), cfg.horizon).unwrap();
        prop_assert_eq!(&back, &data);

        let mut buf = Vec::new();
        data.write_jsonl(&mut buf).unwrap();
        let back = Dataset::read_jsonl(buf.as_slice(), cfg.map.clone(), cfg.horizon).unwrap();
        prop_assert_eq!(&back, &data);
    }

    #[test]
    fn generation_is_a_pure_function_of_seed_and_id(e in 0usize..5, seed in any::<u64>()) {
        let small = generate(&DgpConfig::new(experiment(e)).with_n(5).with_seed(seed)).unwrap();
        let large = generate(&DgpConfig::new(experiment(e)).with_n(20).with_seed(seed)).unwrap();
        prop_assert_eq!(&small.records[..], &large.records[..5]);
    }
}

fn small_run(experiment: &str, seed: u64) -> RunConfig {
    RunConfig {
        experiment: experiment.into(),
        n: 1500,
        seed,
        bootstrap: 0,
        classifier_epochs: 50,
        ..RunConfig::default()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn exact_simulation_masses_sum_to_one_under_retrospective_masks(seed in 0u64..1000, agent in 0usize..3) {
        let cfg = small_run("1", seed);
        let prep = prepare(&cfg).unwrap();
        let policy = prep.policy(["random50", "fixed100", "threshold"][agent]).unwrap();
        let test = &prep.splits.test;
        let sim = sample_dprime(test, prep.context(&policy), &prep.sim_policy(&cfg).unwrap(), Inner::Exact, seed).unwrap();
        prop_assert_eq!(sim.n_parents(), test.len());
        for (i, parent) in test.records.iter().enumerate() {
            let leaves = sim.of_parent(i);
            let total: f64 = leaves.iter().map(|r| r.mass).sum();
            prop_assert!((total - 1.0).abs() < 1e-12);
            for r in leaves {
                for (sim_mask, retro) in r.masks.iter().zip(parent.masks.steps()) {
                    prop_assert!(sim_mask.leq(*retro));
                }
            }
        }
    }

    #[test]
    fn offline_identifying_variant_equals_offline_weighting(seed in 0u64..1000, experiment in prop::sample::select(vec!["1", "3", "5"])) {
        let cfg = small_run(experiment, seed);
        let prep = prepare(&cfg).unwrap();
        let ar = prep.run_agent(&cfg, "random50", &[afape::estimators::Estimator::IpwSemi]).unwrap();
        let inp = prep.inputs(&cfg, &ar, &prep.splits.test, ar.sim_test.as_ref()).unwrap();
        let off = ipw_off_table(&inp).unwrap();
        let semi = semi_table(&Inputs { variant: IdVariant::OfflineDelta, ..inp }, true, None).unwrap();
        for normalize in [false, true] {
            let a = off.estimate(normalize, false).unwrap();
            let b = semi.estimate(normalize, false).unwrap();
            prop_assert!((a - b).abs() < 1e-9, "{} vs {}", a, b);
        }
    }

    #[test]
    fn bootstrap_interval_brackets_the_estimate(seed in 0u64..1000) {
        let cfg = RunConfig { bootstrap: 40, ..small_run("1", seed) };
        let prep = prepare(&cfg).unwrap();
        let out = afape::pipeline::run_prepared(&RunConfig { estimators: vec!["ipw-semi".into(), "cc".into()], ..cfg.clone() }, &prep).unwrap();
        for r in &out.rows {
            let (lo, hi) = (r.ci_lo.unwrap(), r.ci_hi.unwrap());
            prop_assert!(lo <= r.estimate && r.estimate <= hi, "{:?}", r);
        }
    }
}

#[test]
fn fitted_models_survive_json() {
    let cfg = small_run("1", 3);
    let prep = prepare(&cfg).unwrap();
    let back = PropensityModel::from_json(&prep.propensity.to_json().unwrap()).unwrap();
    assert_eq!(back, prep.propensity);
    let policy = prep.policy("random50").unwrap();
    let q = prep.fit_q(&cfg, &policy, &prep.sim_policy(&cfg).unwrap()).unwrap();
    let q_back = afape::nuisance::QSemiModel::from_json(&q.to_json().unwrap()).unwrap();
    let rec = &prep.splits.test.records[0];
    assert_eq!(
        q.v_value(0, &[], rec, &policy, &prep.dgp.map),
        q_back.v_value(0, &[], rec, &policy, &prep.dgp.map)
    );
}
