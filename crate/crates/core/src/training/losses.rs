use cdgan_tensor::{Tape, Tensor, Var};

use crate::error::Result;

fn filled_like(x: &Var, value: f32) -> Var {
    Var::constant(Tensor::full(x.shape().to_vec(), value))
}

/// `0.5 * (bce(real, 1) + bce(fake, 0))`.
pub fn d_loss(tape: &Tape, logits_real: &Var, logits_fake: &Var) -> Result<Var> {
    let real = tape.bce_with_logits(logits_real, &filled_like(logits_real, 1.0))?;
    let fake = tape.bce_with_logits(logits_fake, &filled_like(logits_fake, 0.0))?;
    Ok(tape.scale(&tape.add(&real, &fake)?, 0.5)?)
}

pub struct GeneratorLoss {
    pub total: Var,
    pub adversarial: Var,
    pub l1: Var,
}

/// Non-saturating adversarial term plus `lambda_l1` times the L1 distance to
/// the ground truth in `{-1, +1}`.
pub fn g_loss(tape: &Tape, logits_fake: &Var, gen_map: &Var, gt_map: &Var, lambda_l1: f32) -> Result<GeneratorLoss> {
    let adversarial = tape.bce_with_logits(logits_fake, &filled_like(logits_fake, 1.0))?;
    let l1 = tape.l1_loss(gen_map, gt_map)?;
    let total = if lambda_l1 == 0.0 {
        adversarial.clone()
    } else {
        tape.add(&adversarial, &tape.scale(&l1, lambda_l1)?)?
    };
    Ok(GeneratorLoss {
        total,
        adversarial,
        l1,
    })
}
