//! `key = value` configuration files.

use std::path::Path;
use std::str::FromStr;

use crate::data::SimConfig;
use crate::error::{Error, Result};
use crate::infer::TileConfig;
use crate::training::TrainConfig;

/// Everything a command may be configured with.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub sim: SimConfig,
    pub tile: TileConfig,
}

fn parse<T: FromStr>(line: usize, key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("line {line}: invalid value `{value}` for `{key}`")))
}

impl RunConfig {
    /// Sets one field by name. `seed` sets both the training and the
    /// simulator seed.
    pub fn set(&mut self, key: &str, value: &str, line: usize) -> Result<()> {
        let (t, s, tile) = (&mut self.train, &mut self.sim, &mut self.tile);
        macro_rules! p {
            () => {
                parse(line, key, value)?
            };
        }
        match key {
            "seed" => {
                t.seed = p!();
                s.seed = t.seed;
            }
            "epochs" => t.epochs = p!(),
            "batch_size" => t.batch_size = p!(),
            "learning_rate" => t.learning_rate = p!(),
            "adam_beta1" => t.adam_beta1 = p!(),
            "adam_beta2" => t.adam_beta2 = p!(),
            "adam_eps" => t.adam_eps = p!(),
            "lambda_l1" => t.lambda_l1 = p!(),
            "deterministic" => t.deterministic = p!(),
            "gen_channels" => t.gen_channels = p!(),
            "disc_channels" => t.disc_channels = p!(),
            "dropout" => t.dropout = p!(),
            "crop_size" => t.crop_size = p!(),
            "augment_flips" => t.augment_flips = p!(),
            "augment_rot90" => t.augment_rot90 = p!(),
            "iou_threshold" => t.iou_threshold = p!(),
            "height" => s.height = p!(),
            "width" => s.width = p!(),
            "polygons_min" => s.polygons_min = p!(),
            "polygons_max" => s.polygons_max = p!(),
            "vertices_min" => s.vertices_min = p!(),
            "vertices_max" => s.vertices_max = p!(),
            "radius_min" => s.radius_min = p!(),
            "radius_max" => s.radius_max = p!(),
            "shift_min" => s.shift_min = p!(),
            "shift_max" => s.shift_max = p!(),
            "p_add" => s.p_add = p!(),
            "p_remove" => s.p_remove = p!(),
            "p_shift" => s.p_shift = p!(),
            "brightness" => s.brightness = p!(),
            "noise_sigma" => s.noise_sigma = p!(),
            "hue_jitter" => s.hue_jitter = p!(),
            "tile_size" => tile.tile_size = p!(),
            "overlap" => tile.overlap = p!(),
            _ => return Err(Error::Config(format!("line {line}: unknown key `{key}`"))),
        }
        Ok(())
    }

    /// Starts from the defaults and applies every line of `text`.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", i + 1)))?;
            cfg.set(key.trim(), value.trim(), i + 1)?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_overrides() {
        let cfg = RunConfig::parse("# run\nepochs = 3  # short\n\nseed=9\nbrightness = 0.1\ntile_size = 128\n").unwrap();
        assert_eq!(cfg.train.epochs, 3);
        assert_eq!((cfg.train.seed, cfg.sim.seed), (9, 9));
        assert_eq!(cfg.sim.brightness, 0.1);
        assert_eq!(cfg.tile.tile_size, 128);
        assert_eq!(cfg.train.batch_size, TrainConfig::default().batch_size);
    }

    #[test]
    fn unknown_keys_and_bad_values_fail() {
        let err = RunConfig::parse("epoch = 3").unwrap_err().to_string();
        assert!(err.contains("unknown key `epoch`"), "{err}");
        assert!(RunConfig::parse("epochs = three").is_err());
        assert!(RunConfig::parse("epochs").is_err());
    }
}
