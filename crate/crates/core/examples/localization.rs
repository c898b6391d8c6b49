//! Trains both full-attention streams on the synthetic benchmark and reports
//! how much attention lands on the planted frames and cells.
//!
//! `cargo run --release -p twostream-core --example localization -- <seed> [iterations] [learning_rate]`

use std::time::Instant;

use twostream_core::data::{generate_synthetic, SyntheticConfig};
use twostream_core::pipeline::{attention_localization, train_stream, AttentionConfig, TrainConfig};
use twostream_core::spatial::StreamTag;

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
    for stream in [StreamTag::Static, StreamTag::Motion] {
        let start = Instant::now();
        let (model, log) = train_stream(&data, stream, AttentionConfig::FULL, &cfg)?;
        let loc = attention_localization(&model, &data.test)?;
        let tail = &log.losses[log.losses.len().saturating_sub(50)..];
        println!(
            "{}: temporal {:.3} spatial {:.3} loss {:.4} drops {:?} ({:.1}s)",
            stream.as_str(),
            loc.temporal_ratio,
            loc.spatial_ratio,
            tail.iter().sum::<f64>() / tail.len() as f64,
            log.lr_drops,
            start.elapsed().as_secs_f64()
        );
        // mean temporal weight by offset from the planted window start
        let outputs = model.forward(&data.test)?;
        let mut by_offset = vec![(0.0, 0usize); 2 * cfg_frames(&data) - 1];
        for (v, o) in data.test.iter().zip(&outputs) {
            let start = v.planted_frames[0] as isize;
            for (t, w) in o.temporal_weights.iter().enumerate() {
                let k = (t as isize - start + cfg_frames(&data) as isize - 1) as usize;
                by_offset[k].0 += w;
                by_offset[k].1 += 1;
            }
        }
        let line: Vec<String> = by_offset
            .iter()
            .enumerate()
            .filter(|(_, (_, n))| *n > 0)
            .map(|(k, (s, n))| format!("{:+}:{:.3}", k as isize - cfg_frames(&data) as isize + 1, s / *n as f64))
            .collect();
        println!("  {}", line.join(" "));
    }
    Ok(())
}

fn cfg_frames(data: &twostream_core::data::Dataset) -> usize {
    data.test[0].len()
}
