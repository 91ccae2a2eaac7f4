//! Generate each experiment's dataset and compare its complete-case ratio
//! with the published one.
//!
//! `cargo run --release --example generate_dataset -- [n] [seed]`

use std::time::Instant;

use afape::dgp::{generate, DgpConfig, Experiment};

fn main() -> afape::Result<()> {
    let mut args = std::env::args().skip(1);
    let n: usize = args.next().map_or(100_000, |s| s.parse().expect("n"));
    let seed: u64 = args.next().map_or(0, |s| s.parse().expect("seed"));
    println!("{:<4} {:>10} {:>10} {:>8}", "exp", "observed", "published", "seconds");
    for e in Experiment::ALL {
        let start = Instant::now();
        let data = generate(&DgpConfig::new(e).with_n(n).with_seed(seed))?;
        println!(
            "{:<4} {:>9.4}% {:>9.4}% {:>8.2}",
            e.to_string(),
            100.0 * data.complete_case_ratio(),
            100.0 * e.reported_complete_case_ratio(),
            start.elapsed().as_secs_f64()
        );
    }

    // first record of experiment 1, truth included
    let small = generate(&DgpConfig::new(Experiment::E1).with_n(1).with_seed(seed))?;
    let mut out = Vec::new();
    small.write_csv(&mut out)?;
    print!("\n{}", String::from_utf8_lossy(&out));
    Ok(())
}
