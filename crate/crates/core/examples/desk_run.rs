//! Trains the desk preset end to end and prints the evaluation rows.

use secure_jscc::config::ExperimentConfig;
use secure_jscc::trainer::{train, TrainData};

fn main() -> secure_jscc::error::Result<()> {
    let mut config = ExperimentConfig::desk();
    if let Some(seed) = std::env::args().nth(1) {
        config.seed = seed.parse().expect("seed");
    }
    let data = TrainData::load(&config)?;
    let dir = std::env::temp_dir().join(format!("desk-run-{}", config.seed));
    let report = train::<f32>(config, &data, &dir)?;
    for r in &report.metrics {
        println!(
            "episode {:>3} {:>5}: ssim {:.4} psnr {:.2} acc {:?}",
            r.episode,
            r.split.to_string(),
            r.ssim_bob,
            r.psnr_bob_db,
            r.acc_per_eve
        );
    }
    Ok(())
}
