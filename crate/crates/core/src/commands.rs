//! File-level workflows behind the command-line tool.

use std::fs;
use std::path::{Path, PathBuf};

use image::RgbImage;

use crate::checkpoint::Checkpoint;
use crate::config::RunConfig;
use crate::data::{load_dataset, simulate_dataset, write_dataset, DatasetLayout, SampleRecord, Split};
use crate::error::{Error, Result};
use crate::infer::{evaluate_dataset, predict_map, Predictor, TileConfig};
use crate::metrics::EvalReport;
use crate::nets::Discriminator;
use crate::raster::Mask;
use crate::training::{train_loop, HistoryRow, StepReport, TrainObserver, TrainState};

pub const LAST_CHECKPOINT: &str = "last.ckpt";
pub const BEST_CHECKPOINT: &str = "best.ckpt";
pub const HISTORY_FILE: &str = "history.tsv";

/// Writes `count` simulated pairs to `out` in the triplet-dirs layout.
pub fn simulate(config: &RunConfig, out: &Path, count: usize) -> Result<()> {
    config.sim.validate()?;
    let records = simulate_dataset(&config.sim, count)?;
    write_dataset(&records, out)
}

/// How `train` initializes its state.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TrainStart {
    Fresh,
    /// Continue a run from a full training checkpoint.
    Resume(PathBuf),
    /// Copy network weights (the generator, plus the discriminator when
    /// present) and start a new run with fresh optimizer state.
    WarmStart(PathBuf),
}

pub fn load_split(data: &Path, split: Split, layout: DatasetLayout) -> Result<Vec<SampleRecord>> {
    let dir = data.join(match split {
        Split::Train => "train",
        Split::Val => "val",
        Split::Test => "test",
    });
    load_dataset(&dir, layout, split)?.load_all()
}

fn write_history(path: &Path, rows: &[HistoryRow]) -> Result<()> {
    let text: String = rows.iter().map(|r| r.to_tsv() + "\n").collect();
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

struct CheckpointSink {
    out: PathBuf,
}

impl TrainObserver for CheckpointSink {
    fn step(&mut self, epoch: usize, index: usize, r: &StepReport) {
        log::debug!(
            "epoch {epoch} step {index}: d {:.4} adv {:.4} l1 {:.4} acc {:.2}/{:.2}",
            r.d_loss,
            r.g_adv,
            r.g_l1,
            r.d_real_accuracy,
            r.d_fake_accuracy
        );
    }

    fn epoch_end(&mut self, state: &TrainState, row: &HistoryRow, improved: bool) -> Result<()> {
        log::info!(
            "epoch {}: d_loss {:.4} g_adv {:.4} g_l1 {:.4} val iou {:.4} precision {:.4} recall {:.4}",
            row.epoch,
            row.d_loss,
            row.g_adv,
            row.g_l1,
            row.val_iou,
            row.val_precision,
            row.val_recall
        );
        let ck = Checkpoint::from_train_state(state);
        ck.save(&self.out.join(LAST_CHECKPOINT))?;
        if improved {
            ck.save(&self.out.join(BEST_CHECKPOINT))?;
        }
        write_history(&self.out.join(HISTORY_FILE), &state.history)
    }
}

/// Trains on `<data>/train`, validating on `<data>/val`, and writes
/// `last.ckpt`, `best.ckpt` and `history.tsv` into `out`.
pub fn train(config: &RunConfig, data: &Path, layout: DatasetLayout, out: &Path, start: &TrainStart) -> Result<TrainState> {
    let cfg = &config.train;
    cfg.validate()?;
    config.tile.validate()?;
    let mut state = match start {
        TrainStart::Fresh => TrainState::new(cfg)?,
        TrainStart::Resume(path) => Checkpoint::load(path)?.train_state()?,
        TrainStart::WarmStart(path) => {
            let ck = Checkpoint::load(path)?;
            let gen = ck.generator()?;
            let disc = if ck.meta.contains_key("disc.channels") {
                ck.discriminator()?
            } else {
                Discriminator::new(cfg.discriminator(), cfg.seed.wrapping_add(1))?
            };
            TrainState::from_networks(gen, disc)
        }
    };
    let train_set = load_split(data, Split::Train, layout)?;
    let val_set = load_split(data, Split::Val, layout)?;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    if state.epoch >= cfg.epochs {
        Checkpoint::from_train_state(&state).save(&out.join(LAST_CHECKPOINT))?;
        write_history(&out.join(HISTORY_FILE), &state.history)?;
        return Ok(state);
    }
    let mut sink = CheckpointSink { out: out.to_path_buf() };
    train_loop(cfg, &mut state, &train_set, &val_set, &mut sink)?;
    Ok(state)
}

fn open_rgb(path: &Path) -> Result<RgbImage> {
    Ok(image::open(path).map_err(|e| Error::image(path, e))?.to_rgb8())
}

/// Predicts a change mask for one pair and writes it as a PNG, plus the raw
/// map as 8-bit gray when `raw_out` is given.
pub fn infer(
    checkpoint: &Path,
    image_a: &Path,
    image_b: &Path,
    out_mask: &Path,
    raw_out: Option<&Path>,
    tile: &TileConfig,
) -> Result<Mask> {
    tile.validate()?;
    let gen = Checkpoint::load(checkpoint)?.generator()?;
    let (a, b) = (open_rgb(image_a)?, open_rgb(image_b)?);
    let map = predict_map(&gen, &a, &b, tile)?;
    let mask = map.binarize(0.0);
    mask.save(out_mask)?;
    if let Some(raw) = raw_out {
        map.to_image().save(raw).map_err(|e| Error::image(raw, e))?;
    }
    Ok(mask)
}

/// Evaluates a checkpoint (or the ground-truth oracle when `checkpoint` is
/// `None`) on a dataset and writes the TSV report.
pub fn eval(
    checkpoint: Option<&Path>,
    data: &Path,
    layout: DatasetLayout,
    report_path: &Path,
    tile: &TileConfig,
    iou_threshold: f64,
) -> Result<EvalReport> {
    tile.validate()?;
    let manifest = load_dataset(data, layout, Split::Test)?;
    let gen = checkpoint.map(|p| Checkpoint::load(p)?.generator().map_err(Error::from)).transpose()?;
    let predictor = gen.as_ref().map_or(Predictor::Oracle, Predictor::Model);
    let report = evaluate_dataset(predictor, &manifest, tile, iou_threshold)?;
    fs::write(report_path, report.to_tsv()).map_err(|e| Error::io(report_path, e))?;
    Ok(report)
}
