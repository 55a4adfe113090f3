//! Central-difference gradient checking.

use rand::rngs::StdRng;
use rand::seq::index;
use rand::SeedableRng;

use crate::error::{dim_err, Result};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy)]
pub struct GradCheckOptions {
    /// Central-difference step.
    pub step: f32,
    /// Inputs larger than this are checked on a random subsample of this size.
    pub max_elements: usize,
    /// Denominator floor as a fraction of the largest analytic gradient
    /// magnitude, so near-zero entries are judged on the problem's scale.
    pub scale_floor: f64,
    /// Skip elements whose half-step chord slopes disagree beyond rounding,
    /// which happens when the stencil straddles a kink (relu, l1 at zero).
    pub skip_kinks: bool,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            step: 1e-3,
            max_elements: 512,
            scale_floor: 0.05,
            skip_kinks: false,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub checked: usize,
    pub kinks_skipped: usize,
    /// `(input index, element index)` of the largest relative error.
    pub worst: Option<(usize, usize)>,
}

impl GradCheckReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.checked > 0 && self.max_rel_error < tolerance
    }
}

/// Compares the tape's gradient of `f` against central differences.
///
/// `f` receives one leaf per input and must return a scalar.
pub fn grad_check<F>(f: F, inputs: &[Tensor], opts: &GradCheckOptions) -> Result<GradCheckReport>
where
    F: Fn(&Tape, &[Var]) -> Result<Var>,
{
    let tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let loss = f(&tape, &vars)?;
    let grads = tape.backward(&loss)?;
    let analytic: Vec<Tensor> = vars
        .iter()
        .zip(inputs)
        .map(|(v, t)| grads.get(v).cloned().unwrap_or_else(|| Tensor::zeros(t.shape().to_vec())))
        .collect();
    compare_gradients(f, inputs, &analytic, opts)
}

/// Checks externally supplied gradients against central differences of `f`.
pub fn compare_gradients<F>(
    f: F,
    inputs: &[Tensor],
    analytic: &[Tensor],
    opts: &GradCheckOptions,
) -> Result<GradCheckReport>
where
    F: Fn(&Tape, &[Var]) -> Result<Var>,
{
    if analytic.len() != inputs.len()
        || analytic.iter().zip(inputs).any(|(a, x)| a.shape() != x.shape())
    {
        return Err(dim_err("grad_check", "analytic gradients do not match the inputs"));
    }
    let eval = |xs: &[Tensor]| -> Result<f64> {
        let tape = Tape::new();
        let vars: Vec<Var> = xs.iter().cloned().map(Var::constant).collect();
        Ok(f(&tape, &vars)?.value().item()? as f64)
    };
    let gmax = analytic
        .iter()
        .flat_map(|t| t.data().iter())
        .fold(0.0f64, |m, &v| m.max(v.abs() as f64));
    let floor = (opts.scale_floor * gmax).max(1e-6);
    let h = opts.step as f64;
    let base = if opts.skip_kinks { eval(inputs)? } else { 0.0 };

    let mut rng = StdRng::seed_from_u64(opts.seed);
    let mut work = inputs.to_vec();
    let mut report = GradCheckReport::default();
    for (i, grad) in analytic.iter().enumerate() {
        let n = inputs[i].numel();
        let picks: Vec<usize> = if n > opts.max_elements {
            let mut p = index::sample(&mut rng, n, opts.max_elements).into_vec();
            p.sort_unstable();
            p
        } else {
            (0..n).collect()
        };
        for e in picks {
            let orig = inputs[i].data()[e];
            let (hi, lo) = (orig + opts.step, orig - opts.step);
            work[i].data_mut()[e] = hi;
            let plus = eval(&work)?;
            work[i].data_mut()[e] = lo;
            let minus = eval(&work)?;
            work[i].data_mut()[e] = orig;

            if opts.skip_kinks {
                // Chord slopes over the four half-step intervals of a smooth
                // function differ by O(h·f''); a kink anywhere inside the
                // stencil makes at least one of them differ by O(1).
                let (hh, lh) = (orig + 0.5 * opts.step, orig - 0.5 * opts.step);
                work[i].data_mut()[e] = hh;
                let plus_half = eval(&work)?;
                work[i].data_mut()[e] = lh;
                let minus_half = eval(&work)?;
                work[i].data_mut()[e] = orig;
                let points = [(lo, minus), (lh, minus_half), (orig, base), (hh, plus_half), (hi, plus)];
                let slopes: Vec<f64> = points
                    .windows(2)
                    .map(|w| (w[1].1 - w[0].1) / (w[1].0 as f64 - w[0].0 as f64))
                    .collect();
                let spread = slopes.iter().fold(f64::MIN, |m, &s| m.max(s)) - slopes.iter().fold(f64::MAX, |m, &s| m.min(s));
                let scale = ((plus - minus) / (2.0 * h)).abs().max(floor);
                let magnitude = points.iter().fold(0.0f64, |m, p| m.max(p.1.abs()));
                let rounding = 4.0 * f32::EPSILON as f64 * magnitude / h;
                if spread > 1e-2 * scale + rounding {
                    report.kinks_skipped += 1;
                    continue;
                }
            }
            // Divide by the perturbation actually representable in f32.
            let numeric = (plus - minus) / (hi as f64 - lo as f64);
            let a = grad.data()[e] as f64;
            let abs = (a - numeric).abs();
            let rel = abs / a.abs().max(numeric.abs()).max(floor);
            report.checked += 1;
            report.max_abs_error = report.max_abs_error.max(abs);
            if rel > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(rel);
                report.worst = Some((i, e));
            }
        }
    }
    Ok(report)
}
