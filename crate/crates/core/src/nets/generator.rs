use cdgan_tensor::{Activation, Conv2dSpec, ConvTransposeSpec, Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{norm, weight_bias, ParamBuilder};
use crate::error::{Error, Result};
use crate::params::{Bound, ParamSet};

/// Two stacked RGB images.
pub const INPUT_CHANNELS: usize = 6;
pub const RESIDUAL_BLOCKS: usize = 9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeneratorConfig {
    /// Width of the first stage; the bottleneck runs at four times this.
    pub base_channels: usize,
    /// Drop probability inside the residual blocks, the network's only
    /// source of stochasticity.
    pub dropout: f32,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            base_channels: 64,
            dropout: 0.5,
        }
    }
}

/// Encoder, nine residual blocks, decoder; maps an image pair to a change map
/// in `[-1, 1]` of the same spatial size.
#[derive(Debug, Clone, PartialEq)]
pub struct Generator {
    config: GeneratorConfig,
    params: ParamSet,
}

impl Generator {
    pub fn new(config: GeneratorConfig, seed: u64) -> Result<Self> {
        if config.base_channels == 0 {
            return Err(Error::Contract("generator width must be positive".into()));
        }
        if !(0.0..1.0).contains(&config.dropout) {
            return Err(Error::Contract(format!("dropout {} outside [0, 1)", config.dropout)));
        }
        let c = config.base_channels;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut pb = ParamBuilder::new(&mut rng);
        pb.conv("stem.conv", [c, INPUT_CHANNELS, 7, 7], c);
        pb.norm("stem.norm", c);
        pb.conv("down1.conv", [2 * c, c, 3, 3], 2 * c);
        pb.norm("down1.norm", 2 * c);
        pb.conv("down2.conv", [4 * c, 2 * c, 3, 3], 4 * c);
        pb.norm("down2.norm", 4 * c);
        for i in 0..RESIDUAL_BLOCKS {
            for j in 1..=2 {
                pb.conv(&format!("res{i}.conv{j}"), [4 * c, 4 * c, 3, 3], 4 * c);
                pb.norm(&format!("res{i}.norm{j}"), 4 * c);
            }
        }
        // Transposed weights are laid out input-channels first.
        pb.conv("up1.conv", [4 * c, 2 * c, 3, 3], 2 * c);
        pb.norm("up1.norm", 2 * c);
        pb.conv("up2.conv", [2 * c, c, 3, 3], c);
        pb.norm("up2.norm", c);
        pb.conv("head.conv", [1, c, 7, 7], 1);
        Ok(Self {
            config,
            params: pb.finish(),
        })
    }

    pub fn config(&self) -> GeneratorConfig {
        self.config
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    /// Checks that `a` and `b` are matching `N×3×H×W` batches with `H` and
    /// `W` divisible by four.
    pub fn check_inputs(a: &[usize], b: &[usize]) -> Result<()> {
        let ok = a.len() == 4 && a == b && a[1] == 3 && a[2] % 4 == 0 && a[3] % 4 == 0;
        if ok {
            Ok(())
        } else {
            Err(Error::Contract(format!(
                "generator expects two equal Nx3xHxW inputs with H and W divisible by 4, got {a:?} and {b:?}"
            )))
        }
    }

    pub fn forward<R: Rng + ?Sized>(
        &self,
        tape: &Tape,
        p: &Bound,
        a: &Var,
        b: &Var,
        training: bool,
        rng: &mut R,
    ) -> Result<Var> {
        Self::check_inputs(a.shape(), b.shape())?;
        let x = tape.concat_channels(&[a, b])?;
        let mut x = self.stage(tape, p, "stem", &x, Stage::Reflect7)?;
        x = self.stage(tape, p, "down1", &x, Stage::Down)?;
        x = self.stage(tape, p, "down2", &x, Stage::Down)?;
        for i in 0..RESIDUAL_BLOCKS {
            x = self.residual_block(tape, p, i, &x, training, rng)?;
        }
        x = self.stage(tape, p, "up1", &x, Stage::Up)?;
        x = self.stage(tape, p, "up2", &x, Stage::Up)?;
        let (w, bias) = weight_bias(p, "head.conv");
        let x = tape.conv2d(&x, w, bias, Conv2dSpec::reflect(1, 3))?;
        Ok(tape.activation(&x, Activation::Tanh)?)
    }

    /// `x + norm(conv(dropout(relu(norm(conv(x))))))`.
    pub fn residual_block<R: Rng + ?Sized>(
        &self,
        tape: &Tape,
        p: &Bound,
        index: usize,
        x: &Var,
        training: bool,
        rng: &mut R,
    ) -> Result<Var> {
        let prefix = format!("res{index}");
        let (w, b) = weight_bias(p, &format!("{prefix}.conv1"));
        let y = tape.conv2d(x, w, b, Conv2dSpec::new(1, 1))?;
        let y = norm(tape, p, &format!("{prefix}.norm1"), &y)?;
        let y = tape.activation(&y, Activation::Relu)?;
        let y = tape.dropout(&y, self.config.dropout, training, rng)?;
        let (w, b) = weight_bias(p, &format!("{prefix}.conv2"));
        let y = tape.conv2d(&y, w, b, Conv2dSpec::new(1, 1))?;
        let y = norm(tape, p, &format!("{prefix}.norm2"), &y)?;
        Ok(tape.add(x, &y)?)
    }

    fn stage(&self, tape: &Tape, p: &Bound, prefix: &str, x: &Var, kind: Stage) -> Result<Var> {
        let (w, b) = weight_bias(p, &format!("{prefix}.conv"));
        let y = match kind {
            Stage::Reflect7 => tape.conv2d(x, w, b, Conv2dSpec::reflect(1, 3))?,
            Stage::Down => tape.conv2d(x, w, b, Conv2dSpec::new(2, 1))?,
            Stage::Up => tape.conv2d_transpose(x, w, b, ConvTransposeSpec::new(2, 1, 1))?,
        };
        let y = norm(tape, p, &format!("{prefix}.norm"), &y)?;
        Ok(tape.activation(&y, Activation::Relu)?)
    }

    /// Evaluation-mode forward pass (dropout off) that records nothing.
    pub fn predict(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        let tape = Tape::new();
        let p = self.params.bind(&tape, false);
        let mut unused = ChaCha8Rng::seed_from_u64(0);
        let out = self.forward(
            &tape,
            &p,
            &Var::constant(a.clone()),
            &Var::constant(b.clone()),
            false,
            &mut unused,
        )?;
        Ok(out.into_value())
    }
}

#[derive(Clone, Copy)]
enum Stage {
    Reflect7,
    Down,
    Up,
}
