//! The conditional generator and the patch discriminator.

mod discriminator;
mod generator;

pub use discriminator::{Discriminator, DiscriminatorConfig, DISCRIMINATOR_LAYERS};
pub use generator::{Generator, GeneratorConfig, INPUT_CHANNELS, RESIDUAL_BLOCKS};

use cdgan_tensor::{Tape, Tensor, Var};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::Result;
use crate::params::{Bound, ParamSet};

pub(crate) const INIT_STD: f32 = 0.02;
pub(crate) const NORM_EPS: f32 = 1e-5;

/// Declares parameters in order, drawing conv weights from N(0, 0.02).
pub(crate) struct ParamBuilder<'r, R: Rng> {
    set: ParamSet,
    rng: &'r mut R,
}

impl<'r, R: Rng> ParamBuilder<'r, R> {
    pub fn new(rng: &'r mut R) -> Self {
        Self {
            set: ParamSet::new(),
            rng,
        }
    }

    pub fn conv(&mut self, prefix: &str, shape: [usize; 4], out_channels: usize) {
        let normal = Normal::new(0.0f32, INIT_STD).expect("positive std");
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| normal.sample(self.rng)).collect();
        self.set
            .push(format!("{prefix}.weight"), Tensor::new(shape.to_vec(), data).expect("sized"));
        self.set.push(format!("{prefix}.bias"), Tensor::zeros(vec![out_channels]));
    }

    pub fn norm(&mut self, prefix: &str, channels: usize) {
        self.set.push(format!("{prefix}.gamma"), Tensor::full(vec![channels], 1.0));
        self.set.push(format!("{prefix}.beta"), Tensor::zeros(vec![channels]));
    }

    pub fn finish(self) -> ParamSet {
        self.set
    }
}

pub(crate) fn norm(tape: &Tape, p: &Bound, prefix: &str, x: &Var) -> Result<Var> {
    Ok(tape.instance_norm(
        x,
        p.var(&format!("{prefix}.gamma")),
        p.var(&format!("{prefix}.beta")),
        NORM_EPS,
    )?)
}

pub(crate) fn weight_bias<'a>(p: &'a Bound, prefix: &str) -> (&'a Var, &'a Var) {
    (p.var(&format!("{prefix}.weight")), p.var(&format!("{prefix}.bias")))
}
