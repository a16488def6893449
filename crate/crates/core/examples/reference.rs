//! Runs the reference comparison and prints held-out mAP per variant.
//!
//! `cargo run --release -p simdistill --example reference -- [config.json] [seed]`

use simdistill::config::ExperimentConfig;
use simdistill::experiment::run_reference;

fn main() -> simdistill::Result<()> {
    let mut args = std::env::args().skip(1);
    let mut cfg = match args.next() {
        Some(p) if p != "-" => ExperimentConfig::load(p)?,
        _ => ExperimentConfig::default(),
    };
    if let Some(seed) = args.next() {
        let seed: u64 = seed.parse().expect("seed must be an integer");
        cfg.synth.seed = seed;
        cfg.train.seed = seed;
    }
    let start = std::time::Instant::now();
    let report = run_reference(&cfg)?;
    print!("{}", report.summary_tsv());
    eprintln!("elapsed {:.1}s", start.elapsed().as_secs_f64());
    Ok(())
}
