//! Runs the attention/fusion ablation on the synthetic benchmark for one
//! seed and prints the table plus attention localization.
//!
//! `cargo run --release -p twostream-core --example benchmark -- <seed> [iterations]`

use std::time::Instant;

use twostream_core::data::{generate_synthetic, SyntheticConfig};
use twostream_core::pipeline::{attention_localization, run_ablation, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let seed: u64 = args.next().map_or(Ok(1), |s| s.parse())?;
    let mut cfg = TrainConfig {
        seed,
        ..TrainConfig::default()
    };
    if let Some(it) = args.next() {
        cfg.max_iterations = it.parse()?;
    }
    if let Some(lr) = args.next() {
        cfg.learning_rate = lr.parse()?;
    }
    let data = generate_synthetic(&SyntheticConfig {
        seed,
        ..SyntheticConfig::default()
    })?;
    let start = Instant::now();
    let out = run_ablation(&data, &cfg)?;
    print!("{}", out.table.to_text());
    for m in [&out.full.streams.static_model, &out.full.streams.motion_model] {
        let loc = attention_localization(m, &data.test)?;
        println!("{}: {loc:?}", m.stream.as_str());
    }
    println!("elapsed {:.1}s", start.elapsed().as_secs_f64());
    Ok(())
}
