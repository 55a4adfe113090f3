use cdgan_tensor::{conv_out_size, Activation, Conv2dSpec, Tape, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{norm, weight_bias, ParamBuilder};
use crate::error::{Error, Result};
use crate::params::{Bound, ParamSet};

/// `(kernel, stride, padding)` of each convolution, input to output.
pub const DISCRIMINATOR_LAYERS: [(usize, usize, usize); 5] =
    [(4, 2, 1), (4, 2, 1), (4, 2, 1), (4, 1, 1), (4, 1, 1)];

const LEAK: f32 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiscriminatorConfig {
    pub base_channels: usize,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        Self { base_channels: 64 }
    }
}

/// Scores overlapping patches of an `(A, B, map)` triple: one logit per
/// patch, positive meaning "looks like a real change map".
#[derive(Debug, Clone, PartialEq)]
pub struct Discriminator {
    config: DiscriminatorConfig,
    params: ParamSet,
}

impl Discriminator {
    pub fn new(config: DiscriminatorConfig, seed: u64) -> Result<Self> {
        let c = config.base_channels;
        if c == 0 {
            return Err(Error::Contract("discriminator width must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut pb = ParamBuilder::new(&mut rng);
        let widths = [7, c, 2 * c, 4 * c, 8 * c, 1];
        for (i, pair) in widths.windows(2).enumerate() {
            pb.conv(&format!("l{i}.conv"), [pair[1], pair[0], 4, 4], pair[1]);
            if (1..=3).contains(&i) {
                pb.norm(&format!("l{i}.norm"), pair[1]);
            }
        }
        Ok(Self {
            config,
            params: pb.finish(),
        })
    }

    pub fn config(&self) -> DiscriminatorConfig {
        self.config
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    /// Side length of the input region seen by one output logit.
    pub fn receptive_field() -> usize {
        DISCRIMINATOR_LAYERS
            .iter()
            .rev()
            .fold(1, |rf, &(k, s, _)| (rf - 1) * s + k)
    }

    /// Logit grid side for an input side, if the input is large enough.
    pub fn output_size(input: usize) -> Option<usize> {
        DISCRIMINATOR_LAYERS
            .iter()
            .try_fold(input, |n, &(k, s, p)| conv_out_size(n, k, s, p))
    }

    pub fn forward(&self, tape: &Tape, p: &Bound, a: &Var, b: &Var, map: &Var) -> Result<Var> {
        let (sa, sm) = (a.shape(), map.shape());
        if sa.len() != 4 || sa != b.shape() || sa[1] != 3 || sm.len() != 4 || sm[1] != 1 || sm[0] != sa[0] || sm[2..] != sa[2..]
        {
            return Err(Error::Contract(format!(
                "discriminator expects Nx3xHxW images and an Nx1xHxW map, got {sa:?}, {:?}, {sm:?}",
                b.shape()
            )));
        }
        if Self::output_size(sa[2]).is_none() || Self::output_size(sa[3]).is_none() {
            return Err(Error::Contract(format!("input {sa:?} too small for the discriminator")));
        }
        let mut x = tape.concat_channels(&[a, b, map])?;
        for (i, &(_, stride, pad)) in DISCRIMINATOR_LAYERS.iter().enumerate() {
            let (w, bias) = weight_bias(p, &format!("l{i}.conv"));
            x = tape.conv2d(&x, w, bias, Conv2dSpec::new(stride, pad))?;
            if i == DISCRIMINATOR_LAYERS.len() - 1 {
                break;
            }
            if i >= 1 {
                x = norm(tape, p, &format!("l{i}.norm"), &x)?;
            }
            x = tape.activation(&x, Activation::LeakyRelu(LEAK))?;
        }
        Ok(x)
    }
}
