//! Runs the bias study on the default world and prints the comparison.
//!
//! `cargo run --release -p keyrel-core --example bias_study -- [seed] [arm,...]`
//!
//! Arms are model family names; a `:clicks` suffix trains on click data.

use keyrel::eval::format_table;
use keyrel::experiment::{run_study, Arm, ExperimentConfig, LabelSource, ModelFamily};

fn main() -> keyrel::Result<()> {
    let seed = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    let mut cfg = ExperimentConfig::default();
    cfg.sim.seed = seed;
    cfg.arms = match std::env::args().nth(2) {
        Some(list) => list
            .split(',')
            .map(|a| {
                let (name, labels) = match a.strip_suffix(":clicks") {
                    Some(n) => (n, LabelSource::Clicks),
                    None => (a, LabelSource::Judgments),
                };
                Ok(Arm::new(name.parse::<ModelFamily>()?, labels))
            })
            .collect::<keyrel::Result<_>>()?,
        None => vec![
            Arm::new(ModelFamily::Jaccard, LabelSource::Judgments),
            Arm::new(ModelFamily::BiContrastive, LabelSource::Judgments),
            Arm::new(ModelFamily::CrossTiny, LabelSource::Judgments),
            Arm::new(ModelFamily::CrossTiny, LabelSource::Clicks),
            Arm::new(ModelFamily::CrossMini, LabelSource::Judgments),
        ],
    };
    let report = run_study(&cfg)?;
    println!(
        "seed {seed}: train {} eval {} click positives {}",
        report.train_judgments, report.eval_judgments, report.click_positives
    );
    println!("{}", format_table(&report.rows()));
    for a in &report.arms {
        println!("{:<22} train_ms {:>7} fn_by_len {:?} loss {:?}", a.name, a.train_ms, a.fn_by_length, a.loss_trace);
    }
    Ok(())
}
