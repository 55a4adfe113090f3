//! Simulates a small dataset, trains on it and reports per-epoch validation
//! metrics.
//!
//! ```text
//! cargo run --release -p cdgan-core --example desk_run -- [epochs] [gen_channels] [disc_channels] [train_pairs]
//! ```

use std::time::Instant;

use cdgan_core::data::{simulate_dataset, SimConfig};
use cdgan_core::training::{train_loop, HistoryRow, TrainConfig, TrainObserver, TrainState};

struct Print(Instant);

impl TrainObserver for Print {
    fn epoch_end(&mut self, _: &TrainState, r: &HistoryRow, _: bool) -> cdgan_core::Result<()> {
        println!(
            "{:6.1}s epoch {:2} d {:.4} adv {:.4} l1 {:.4} | iou {:.3} p {:.3} r {:.3}",
            self.0.elapsed().as_secs_f64(),
            r.epoch,
            r.d_loss,
            r.g_adv,
            r.g_l1,
            r.val_iou,
            r.val_precision,
            r.val_recall
        );
        Ok(())
    }
}

fn arg(i: usize, default: usize) -> usize {
    std::env::args().nth(i).and_then(|s| s.parse().ok()).unwrap_or(default)
}

fn main() -> cdgan_core::Result<()> {
    let sim = SimConfig { seed: 1, ..SimConfig::default() };
    let train = simulate_dataset(&sim, arg(4, 200))?;
    let val = simulate_dataset(&SimConfig { seed: 2, ..sim.clone() }, 32)?;
    let cfg = TrainConfig {
        epochs: arg(1, 25),
        gen_channels: arg(2, 16),
        disc_channels: arg(3, 32),
        seed: 7,
        deterministic: true,
        ..TrainConfig::default()
    };
    let mut state = TrainState::new(&cfg)?;
    println!(
        "generator {} params, discriminator {} params",
        state.gen.params().numel(),
        state.disc.params().numel()
    );
    train_loop(&cfg, &mut state, &train, &val, &mut Print(Instant::now()))
}
