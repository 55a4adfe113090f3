//! Adversarial objective, Adam, and the alternating training loop.

mod adam;
mod losses;
mod step;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use losses::{d_loss, g_loss, GeneratorLoss};
pub use step::{
    apply_gradients, discriminator_step, train_step, Batch, GeneratorPass, OptimizerStates, StepReport,
};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{augment, random_crop, SampleRecord};
use crate::error::{Error, Result};
use crate::infer::{predict_mask, TileConfig};
use crate::metrics::EvalReport;
use crate::nets::{Discriminator, DiscriminatorConfig, Generator, GeneratorConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Total epochs; a resumed run continues up to this count.
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f32,
    pub adam_beta1: f32,
    pub adam_beta2: f32,
    pub adam_eps: f32,
    pub lambda_l1: f32,
    pub seed: u64,
    /// Accepted for interface compatibility; every computation here is
    /// single-threaded with a fixed reduction order, so runs are always
    /// bitwise reproducible.
    pub deterministic: bool,
    pub gen_channels: usize,
    pub disc_channels: usize,
    pub dropout: f32,
    /// Records larger than this are randomly cropped to `crop_size` squares.
    pub crop_size: usize,
    pub augment_flips: bool,
    pub augment_rot90: bool,
    pub iou_threshold: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 25,
            batch_size: 1,
            learning_rate: 2e-4,
            adam_beta1: 0.5,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            lambda_l1: 100.0,
            seed: 0,
            deterministic: false,
            gen_channels: 64,
            disc_channels: 64,
            dropout: 0.5,
            crop_size: 256,
            augment_flips: true,
            augment_rot90: true,
            iou_threshold: 0.5,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return fail("learning_rate must be finite and non-negative");
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return fail("adam betas must lie in [0, 1)");
        }
        if !(self.adam_eps > 0.0) {
            return fail("adam_eps must be positive");
        }
        if !(self.lambda_l1 >= 0.0) {
            return fail("lambda_l1 must be non-negative");
        }
        if self.batch_size == 0 || self.gen_channels == 0 || self.disc_channels == 0 {
            return fail("batch_size and network widths must be positive");
        }
        if self.crop_size == 0 || self.crop_size % 4 != 0 {
            return fail("crop_size must be a positive multiple of 4");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail("dropout must lie in [0, 1)");
        }
        if !(self.iou_threshold > 0.0 && self.iou_threshold <= 1.0) {
            return fail("iou_threshold must lie in (0, 1]");
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            eps: self.adam_eps,
        }
    }

    pub fn generator(&self) -> GeneratorConfig {
        GeneratorConfig {
            base_channels: self.gen_channels,
            dropout: self.dropout,
        }
    }

    pub fn discriminator(&self) -> DiscriminatorConfig {
        DiscriminatorConfig {
            base_channels: self.disc_channels,
        }
    }
}

/// Per-epoch means of the step losses plus validation metrics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HistoryRow {
    pub epoch: usize,
    pub d_loss: f64,
    pub g_adv: f64,
    pub g_l1: f64,
    pub val_iou: f64,
    pub val_precision: f64,
    pub val_recall: f64,
}

impl HistoryRow {
    /// Tab-separated: epoch, d_loss, g_adv, g_l1, val_iou, val_precision,
    /// val_recall. Floats use Rust's shortest round-trip formatting.
    pub fn to_tsv(&self) -> String {
        format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}",
            self.epoch, self.d_loss, self.g_adv, self.g_l1, self.val_iou, self.val_precision, self.val_recall
        )
    }

    pub fn parse(line: &str) -> Result<Self> {
        let bad = || Error::Data(format!("malformed history row `{line}`"));
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 7 {
            return Err(bad());
        }
        let num = |i: usize| f[i].parse::<f64>().map_err(|_| bad());
        Ok(Self {
            epoch: f[0].parse().map_err(|_| bad())?,
            d_loss: num(1)?,
            g_adv: num(2)?,
            g_l1: num(3)?,
            val_iou: num(4)?,
            val_precision: num(5)?,
            val_recall: num(6)?,
        })
    }
}

/// Everything needed to continue training exactly where it stopped.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub gen: Generator,
    pub disc: Discriminator,
    pub opt: OptimizerStates,
    /// Completed epochs.
    pub epoch: usize,
    pub history: Vec<HistoryRow>,
    pub best_val_iou: Option<f64>,
}

impl TrainState {
    /// Fresh networks drawn from `config.seed`.
    pub fn new(config: &TrainConfig) -> Result<Self> {
        let gen = Generator::new(config.generator(), config.seed)?;
        let disc = Discriminator::new(config.discriminator(), config.seed.wrapping_add(1))?;
        Ok(Self::from_networks(gen, disc))
    }

    /// Starts a new run from existing weights, with fresh optimizer state.
    pub fn from_networks(gen: Generator, disc: Discriminator) -> Self {
        let opt = OptimizerStates::new(&gen, &disc);
        Self {
            gen,
            disc,
            opt,
            epoch: 0,
            history: Vec::new(),
            best_val_iou: None,
        }
    }
}

/// Receives training progress.
pub trait TrainObserver {
    fn step(&mut self, _epoch: usize, _index: usize, _report: &StepReport) {}

    /// Called after each epoch with the updated state; `improved` is true
    /// when the validation IoU beat every earlier epoch.
    fn epoch_end(&mut self, _state: &TrainState, _row: &HistoryRow, _improved: bool) -> Result<()> {
        Ok(())
    }
}

/// Ignores all progress.
pub struct NoObserver;

impl TrainObserver for NoObserver {}

/// The RNG for epoch `epoch` (0-based) depends only on the seed and the epoch,
/// so a resumed run replays the same shuffles, crops and dropout masks.
pub fn epoch_rng(seed: u64, epoch: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64 + 1);
    rng
}

/// Evaluates the generator on validation records.
pub fn validate(gen: &Generator, val: &[SampleRecord], tile: &TileConfig, iou_threshold: f64) -> Result<EvalReport> {
    let mut report = EvalReport::new(iou_threshold);
    for r in val {
        let pred = predict_mask(gen, &r.image_a, &r.image_b, tile)?;
        report.add(r.id.clone(), &pred, &r.mask)?;
    }
    Ok(report)
}

/// Trains from `state.epoch` up to `config.epochs`, validating after every
/// epoch.
pub fn train_loop(
    config: &TrainConfig,
    state: &mut TrainState,
    train: &[SampleRecord],
    val: &[SampleRecord],
    observer: &mut dyn TrainObserver,
) -> Result<()> {
    config.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::Data("training and validation sets must be non-empty".into()));
    }
    let adam = config.adam();
    let tile = TileConfig::default();
    for epoch in state.epoch..config.epochs {
        let mut rng = epoch_rng(config.seed, epoch);
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut rng);
        let mut sums = [0.0f64; 3];
        let mut steps = 0usize;
        for (index, chunk) in order.chunks(config.batch_size).enumerate() {
            let mut records = Vec::with_capacity(chunk.len());
            for &i in chunk {
                let r = &train[i];
                let r = if r.height() > config.crop_size || r.width() > config.crop_size {
                    random_crop(r, config.crop_size.min(r.height()).min(r.width()), &mut rng)?
                } else {
                    r.clone()
                };
                records.push(augment(&r, config.augment_flips, config.augment_rot90, &mut rng));
            }
            let batch = Batch::from_records(&records)?;
            let report = train_step(
                &mut state.gen,
                &mut state.disc,
                &batch,
                &mut state.opt,
                &adam,
                config.lambda_l1,
                &mut rng,
            )?;
            observer.step(epoch + 1, index, &report);
            sums[0] += report.d_loss;
            sums[1] += report.g_adv;
            sums[2] += report.g_l1;
            steps += 1;
        }
        let eval = validate(&state.gen, val, &tile, config.iou_threshold)?;
        let n = steps as f64;
        let row = HistoryRow {
            epoch: epoch + 1,
            d_loss: sums[0] / n,
            g_adv: sums[1] / n,
            g_l1: sums[2] / n,
            val_iou: eval.mean_iou,
            val_precision: eval.pixel_precision,
            val_recall: eval.pixel_recall,
        };
        let improved = state.best_val_iou.map_or(true, |b| row.val_iou > b);
        if improved {
            state.best_val_iou = Some(row.val_iou);
        }
        state.history.push(row);
        state.epoch = epoch + 1;
        observer.epoch_end(state, &row, improved)?;
    }
    Ok(())
}
