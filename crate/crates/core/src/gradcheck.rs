//! Central finite-difference gradient checking.
//!
//! Perturbs one input coordinate at a time, re-evaluates the scalar
//! function on a fresh tape, and compares against the reverse-mode
//! gradient. Independent of the backward code paths it checks.

use rand::seq::index::sample;
use rand::Rng;

use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub sampled: usize,
    pub passed: usize,
    pub worst_relative_error: f64,
}

impl GradCheckReport {
    pub fn pass_fraction(&self) -> f64 {
        if self.sampled == 0 {
            1.0
        } else {
            self.passed as f64 / self.sampled as f64
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct GradCheckOptions {
    pub samples: usize,
    pub step: f64,
    pub relative_tolerance: f64,
    /// Magnitude below which both gradients count as zero.
    pub floor: f64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            samples: 200,
            step: 1e-5,
            relative_tolerance: 1e-3,
            floor: 1e-7,
        }
    }
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

fn evaluate<F>(inputs: &[Tensor], f: &F) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    Ok(tape.value(out).item())
}

/// Compares analytic and numeric gradients of `f` on `samples` coordinates
/// drawn uniformly from all inputs (every coordinate when there are fewer).
pub fn check_gradients<F, R>(inputs: &[Tensor], f: F, options: GradCheckOptions, rng: &mut R) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
    R: Rng + ?Sized,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone(), true)).collect();
    let out = f(&mut tape, &vars)?;
    if tape.value(out).numel() != 1 {
        return Err(Error::Shape("gradient check needs a scalar function".into()));
    }
    let grads = tape.backward(out)?;
    let analytic: Vec<Tensor> = vars
        .iter()
        .zip(inputs)
        .map(|(v, t)| grads.get_or_zeros(*v, t.shape()))
        .collect();

    let total: usize = inputs.iter().map(Tensor::numel).sum();
    let picks: Vec<usize> = if total <= options.samples {
        (0..total).collect()
    } else {
        sample(rng, total, options.samples).into_vec()
    };

    let mut report = GradCheckReport {
        sampled: picks.len(),
        passed: 0,
        worst_relative_error: 0.0,
    };
    let mut perturbed = inputs.to_vec();
    for flat in picks {
        let (which, offset) = locate(inputs, flat);
        let original = perturbed[which].data()[offset];
        perturbed[which].data_mut()[offset] = original + options.step;
        let plus = evaluate(&perturbed, &f)?;
        perturbed[which].data_mut()[offset] = original - options.step;
        let minus = evaluate(&perturbed, &f)?;
        perturbed[which].data_mut()[offset] = original;
        let numeric = (plus - minus) / (2.0 * options.step);
        let err = relative_error(analytic[which].data()[offset], numeric, options.floor);
        report.worst_relative_error = report.worst_relative_error.max(err);
        if err <= options.relative_tolerance {
            report.passed += 1;
        }
    }
    Ok(report)
}

fn locate(inputs: &[Tensor], mut flat: usize) -> (usize, usize) {
    for (i, t) in inputs.iter().enumerate() {
        if flat < t.numel() {
            return (i, flat);
        }
        flat -= t.numel();
    }
    unreachable!("coordinate beyond input extent")
}
