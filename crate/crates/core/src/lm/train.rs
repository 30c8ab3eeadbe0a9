//! Mini-batch Adam training and a finite-difference gradient check.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::kernels::Real;
use super::model::Transformer;
use super::{LmConfig, LmError, LmModel};
use crate::corpus::TokenSequence;

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

struct Adam {
    lr: f64,
    m: Vec<f32>,
    v: Vec<f32>,
    step: i32,
}

impl Adam {
    fn new(n: usize, lr: f64) -> Self {
        Self {
            lr,
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
        }
    }

    fn update(&mut self, params: &mut [f32], grads: &[f32]) {
        self.step += 1;
        let (b1, b2) = (BETA1 as f32, BETA2 as f32);
        let c1 = 1.0 - BETA1.powi(self.step);
        let c2 = 1.0 - BETA2.powi(self.step);
        let step_size = (self.lr * c2.sqrt() / c1) as f32;
        let eps = (ADAM_EPS * c2.sqrt()) as f32;
        for (((p, &g), m), v) in params
            .iter_mut()
            .zip(grads)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            *p -= step_size * *m / (v.sqrt() + eps);
        }
    }
}

/// Trains a fresh model on `train_set` for `config.train_steps` steps.
pub fn train(
    config: &LmConfig,
    train_set: &[TokenSequence],
    seed: u64,
) -> Result<LmModel, LmError> {
    train_with_progress(config, train_set, seed, |_, _| {})
}

/// As [`train`], calling `progress(step, mean_batch_loss)` after every step.
///
/// Initialization and batch order derive from `seed`. Batches walk through a
/// fresh seeded permutation of the training set each epoch. Per-sequence
/// gradients may be computed in parallel but are summed in batch order, so
/// the result does not depend on the thread count.
pub fn train_with_progress(
    config: &LmConfig,
    train_set: &[TokenSequence],
    seed: u64,
    mut progress: impl FnMut(usize, f64),
) -> Result<LmModel, LmError> {
    config.validate()?;
    if train_set.is_empty() {
        return Err(LmError::EmptyTrainSet);
    }
    let mut model = LmModel::new(config.clone(), seed)?;
    for x in train_set {
        if x.len() < 2 {
            return Err(LmError::TooShort(x.len()));
        }
        model.check_tokens(x.tokens())?;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6261_7463_685f_6f72);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut cursor = order.len();
    let mut adam = Adam::new(model.num_params(), config.learning_rate);

    for step in 0..config.train_steps {
        let mut batch = Vec::with_capacity(config.batch_size);
        while batch.len() < config.batch_size {
            if cursor == order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            batch.push(order[cursor]);
            cursor += 1;
        }

        let per_sample: Vec<(f64, Vec<f32>)> = batch
            .par_iter()
            .map(|&i| model.loss_and_grad(train_set[i].tokens()))
            .collect();
        let mut grads = vec![0.0f32; model.num_params()];
        let mut loss = 0.0;
        for (l, g) in &per_sample {
            loss += l;
            for (acc, &v) in grads.iter_mut().zip(g) {
                *acc += v;
            }
        }
        let inv = 1.0 / batch.len() as f32;
        grads.iter_mut().for_each(|g| *g *= inv);
        loss /= batch.len() as f64;

        if !loss.is_finite() || grads.iter().any(|g| !g.is_finite()) {
            return Err(LmError::Diverged { step, loss });
        }
        adam.update(&mut model.params, &grads);
        if !model.all_finite() {
            return Err(LmError::Diverged { step, loss });
        }
        progress(step, loss);
    }
    Ok(model)
}

/// Outcome of comparing analytic and central-difference gradients.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub indices: Vec<usize>,
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
    pub loss: f64,
    /// L2 norm of the full analytic gradient.
    pub grad_norm: f64,
}

/// Relative error of `a` against `b` with a floor on the denominator, so
/// that two gradients that are both numerically zero agree.
fn rel_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-7)
}

/// Checks a randomly initialized `f64` copy of the model defined by `config`
/// on sequence `x`. Returns the worst relative error over 128 parameters.
pub fn grad_check(config: &LmConfig, x: &TokenSequence) -> Result<f64, LmError> {
    let model = Transformer::<f64>::init(config.clone(), config.seed, 0.2);
    grad_check_with(&model, x, 1e-4, 128, config.seed).map(|r| r.max_rel_error)
}

/// Central differences with step `h` on `count` parameters drawn by `seed`.
pub fn grad_check_with<F: Real>(
    model: &Transformer<F>,
    x: &TokenSequence,
    h: f64,
    count: usize,
    seed: u64,
) -> Result<GradCheckReport, LmError> {
    model.config.validate()?;
    model.check_tokens(x.tokens())?;
    if x.len() < 2 {
        return Err(LmError::TooShort(x.len()));
    }
    let (loss, grads) = model.loss_and_grad(x.tokens());
    let grad_norm = grads
        .iter()
        .map(|g| g.to_f64().unwrap().powi(2))
        .sum::<f64>()
        .sqrt();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let indices: Vec<usize> = (0..count)
        .map(|_| rng.random_range(0..model.num_params()))
        .collect();
    let mut probe = model.clone();
    let step = F::of(h);
    let mut analytic = Vec::with_capacity(count);
    let mut numeric = Vec::with_capacity(count);
    for &i in &indices {
        let orig = probe.params[i];
        probe.params[i] = orig + step;
        let up = probe.loss(x.tokens());
        probe.params[i] = orig - step;
        let down = probe.loss(x.tokens());
        probe.params[i] = orig;
        let width = (orig + step).to_f64().unwrap() - (orig - step).to_f64().unwrap();
        numeric.push((up - down) / width);
        analytic.push(grads[i].to_f64().unwrap());
    }
    let max_rel_error = analytic
        .iter()
        .zip(&numeric)
        .map(|(&a, &n)| rel_error(a, n))
        .fold(0.0, f64::max);
    Ok(GradCheckReport {
        max_rel_error,
        indices,
        analytic,
        numeric,
        loss,
        grad_norm,
    })
}
