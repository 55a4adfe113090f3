use cdgan_tensor::{Tape, Tensor, Var};
use rand::Rng;

use super::adam::{adam_step, AdamConfig, AdamState};
use super::losses::{d_loss, g_loss};
use crate::data::{image_tensor, SampleRecord};
use crate::error::{Error, Result};
use crate::nets::{Discriminator, Generator};
use crate::params::{Bound, ParamSet};

/// Stacked network inputs for a batch of equally sized records.
#[derive(Debug, Clone)]
pub struct Batch {
    pub a: Tensor,
    pub b: Tensor,
    /// Ground truth in `{-1, +1}`, `N×1×H×W`.
    pub gt: Tensor,
}

impl Batch {
    pub fn from_records(records: &[SampleRecord]) -> Result<Self> {
        let Some(first) = records.first() else {
            return Err(Error::Contract("empty batch".into()));
        };
        if let Some(r) = records.iter().find(|r| r.mask.dims() != first.mask.dims()) {
            return Err(Error::Contract(format!(
                "batch mixes sizes: {} is {:?}, {} is {:?}",
                first.id,
                first.mask.dims(),
                r.id,
                r.mask.dims()
            )));
        }
        let stack = |f: &dyn Fn(&SampleRecord) -> Tensor| Tensor::cat_batch(&records.iter().map(f).collect::<Vec<_>>());
        Ok(Self {
            a: stack(&|r| image_tensor(&r.image_a))?,
            b: stack(&|r| image_tensor(&r.image_b))?,
            gt: stack(&|r| r.mask.to_signed_tensor())?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StepReport {
    pub d_loss: f64,
    pub g_adv: f64,
    pub g_l1: f64,
    /// Fraction of real-pair patch logits above 0 (sigmoid above 0.5).
    pub d_real_accuracy: f64,
    /// Fraction of generated-pair patch logits below 0.
    pub d_fake_accuracy: f64,
}

/// Optimizer state of both networks.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerStates {
    pub gen: AdamState,
    pub disc: AdamState,
}

impl OptimizerStates {
    pub fn new(gen: &Generator, disc: &Discriminator) -> Self {
        Self {
            gen: AdamState::new(gen.params()),
            disc: AdamState::new(disc.params()),
        }
    }
}

/// A training-mode generator forward pass kept open for the generator's
/// backward pass after the discriminator has been updated.
pub struct GeneratorPass<'g> {
    gen: &'g Generator,
    tape: Tape,
    params: Bound<'g>,
    a: Var,
    b: Var,
    gt: Var,
    fake: Var,
}

impl<'g> GeneratorPass<'g> {
    pub fn new<R: Rng + ?Sized>(gen: &'g Generator, batch: &Batch, rng: &mut R) -> Result<Self> {
        let tape = Tape::new();
        let params = gen.params().bind(&tape, true);
        let a = Var::constant(batch.a.clone());
        let b = Var::constant(batch.b.clone());
        let gt = Var::constant(batch.gt.clone());
        let fake = gen.forward(&tape, &params, &a, &b, true, rng)?;
        Ok(Self {
            gen,
            tape,
            params,
            a,
            b,
            gt,
            fake,
        })
    }

    pub fn generator(&self) -> &Generator {
        self.gen
    }

    /// The generated change maps.
    pub fn fake(&self) -> &Tensor {
        self.fake.value()
    }

    /// Scores the generated maps with a frozen discriminator and returns the
    /// generator's gradients together with `(adversarial, l1)` loss values.
    pub fn backward(self, disc: &Discriminator, lambda_l1: f32) -> Result<(Vec<Option<Tensor>>, f64, f64)> {
        let frozen = disc.params().bind(&self.tape, false);
        let logits = disc.forward(&self.tape, &frozen, &self.a, &self.b, &self.fake)?;
        let loss = g_loss(&self.tape, &logits, &self.fake, &self.gt, lambda_l1)?;
        let (adv, l1) = (loss.adversarial.value().item()? as f64, loss.l1.value().item()? as f64);
        let mut grads = self.tape.backward(&loss.total)?;
        Ok((self.params.gradients(&mut grads), adv, l1))
    }
}

fn fraction(t: &Tensor, pred: impl Fn(f32) -> bool) -> f64 {
    t.data().iter().filter(|&&v| pred(v)).count() as f64 / t.numel() as f64
}

/// Loads `grads` into `params`, takes one Adam step and clears the gradients.
pub fn apply_gradients(
    params: &mut ParamSet,
    grads: Vec<Option<Tensor>>,
    state: &mut AdamState,
    cfg: &AdamConfig,
) -> Result<()> {
    params.zero_grad();
    params.accumulate(grads);
    let outcome = adam_step(params, state, cfg);
    params.zero_grad();
    outcome
}

/// One discriminator update on the real triple and the generated triple, the
/// generated map entering as a constant. Returns `(d_loss, real_acc, fake_acc)`.
pub fn discriminator_step(
    disc: &mut Discriminator,
    state: &mut AdamState,
    batch: &Batch,
    fake: &Tensor,
    cfg: &AdamConfig,
) -> Result<(f64, f64, f64)> {
    let tape = Tape::new();
    let params = disc.params().bind(&tape, true);
    let a = Var::constant(batch.a.clone());
    let b = Var::constant(batch.b.clone());
    let real_logits = disc.forward(&tape, &params, &a, &b, &Var::constant(batch.gt.clone()))?;
    let fake_logits = disc.forward(&tape, &params, &a, &b, &Var::constant(fake.clone()))?;
    let loss = d_loss(&tape, &real_logits, &fake_logits)?;
    let value = loss.value().item()? as f64;
    let real_acc = fraction(real_logits.value(), |v| v > 0.0);
    let fake_acc = fraction(fake_logits.value(), |v| v < 0.0);
    let mut grads = tape.backward(&loss)?;
    let grads = params.gradients(&mut grads);
    drop(params);
    apply_gradients(disc.params_mut(), grads, state, cfg)?;
    Ok((value, real_acc, fake_acc))
}

/// One alternating update: the discriminator first, then the generator
/// through the updated, frozen discriminator.
pub fn train_step<R: Rng + ?Sized>(
    gen: &mut Generator,
    disc: &mut Discriminator,
    batch: &Batch,
    states: &mut OptimizerStates,
    cfg: &AdamConfig,
    lambda_l1: f32,
    rng: &mut R,
) -> Result<StepReport> {
    let pass = GeneratorPass::new(gen, batch, rng)?;
    let fake = pass.fake().clone();
    let (d_loss, d_real_accuracy, d_fake_accuracy) = discriminator_step(disc, &mut states.disc, batch, &fake, cfg)?;
    let (grads, g_adv, g_l1) = pass.backward(disc, lambda_l1)?;
    apply_gradients(gen.params_mut(), grads, &mut states.gen, cfg)?;
    Ok(StepReport {
        d_loss,
        g_adv,
        g_l1,
        d_real_accuracy,
        d_fake_accuracy,
    })
}
