use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::checkpoint::save_checkpoint;
use super::model::DenoiserModel;
use super::DenoiserError;
use crate::diffusion::{training_pair, LatentImage, NoiseSchedule};
use crate::imagecore::GrayImage;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub steps: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// Write a checkpoint every this many steps; 0 disables.
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 16,
            steps: 1000,
            learning_rate: 1e-4,
            seed: 0,
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), DenoiserError> {
        if self.batch_size == 0 || self.steps == 0 || !(self.learning_rate > 0.0) {
            return Err(DenoiserError::InvalidConfig(format!(
                "batch_size {} and steps {} must be >= 1, learning_rate {} > 0",
                self.batch_size, self.steps, self.learning_rate
            )));
        }
        Ok(())
    }
}

/// Gradients aligned with [`DenoiserModel::params`].
pub type Gradients = Vec<Vec<f64>>;

/// Loss and parameter gradients for explicit noised inputs and targets.
/// Loss is the mean squared error over every element of the batch.
pub fn loss_and_grad_for(
    model: &DenoiserModel,
    x_t: &[LatentImage],
    t: &[usize],
    eps: &[Vec<f64>],
) -> Result<(f64, Gradients), DenoiserError> {
    if x_t.is_empty() || x_t.len() != t.len() || x_t.len() != eps.len() {
        return Err(DenoiserError::DimensionMismatch {
            expected: x_t.len(),
            got: t.len().min(eps.len()),
        });
    }
    let side = model.side();
    let mut inputs = Vec::with_capacity(x_t.len() * side * side);
    let mut target = Vec::with_capacity(inputs.capacity());
    for (x, e) in x_t.iter().zip(eps) {
        if x.side() != side || e.len() != side * side {
            return Err(DenoiserError::DimensionMismatch {
                expected: side * side,
                got: e.len(),
            });
        }
        inputs.extend_from_slice(x.data());
        target.extend_from_slice(e);
    }
    let (mut graph, vars, out) = model.build(&inputs, t)?;
    let loss_var = graph.mse(out, target);
    let loss = graph.value(loss_var).values()[0];
    if !loss.is_finite() {
        return Err(DenoiserError::NonFiniteLoss { step: None });
    }
    graph.backward(loss_var);
    Ok((loss, vars.iter().map(|v| graph.grad(*v)).collect()))
}

/// Draws a training pair per clean image and returns the denoising loss
/// with its gradients.
pub fn loss_and_grad<R: Rng + ?Sized>(
    model: &DenoiserModel,
    x0: &[LatentImage],
    s: &NoiseSchedule,
    rng: &mut R,
) -> Result<(f64, Gradients), DenoiserError> {
    if x0.is_empty() {
        return Err(DenoiserError::EmptyBatch);
    }
    let mut xs = Vec::with_capacity(x0.len());
    let mut ts = Vec::with_capacity(x0.len());
    let mut eps = Vec::with_capacity(x0.len());
    for x in x0 {
        let pair = training_pair(x, s, rng);
        xs.push(pair.x_t);
        ts.push(pair.t);
        eps.push(pair.eps);
    }
    loss_and_grad_for(model, &xs, &ts, &eps)
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(model: &DenoiserModel, lr: f64) -> Self {
        let zeros: Vec<Vec<f64>> = model
            .params()
            .iter()
            .map(|(_, t)| vec![0.0; t.len()])
            .collect();
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn update(&mut self, model: &mut DenoiserModel, grads: &Gradients) {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for (k, (_, param)) in model.params_mut().iter_mut().enumerate() {
            let (m, v, g) = (&mut self.m[k], &mut self.v[k], &grads[k]);
            for (j, p) in param.values_mut().iter_mut().enumerate() {
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g[j];
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g[j] * g[j];
                let mhat = m[j] / bc1;
                let vhat = v[j] / bc2;
                *p -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// Loss of every step, in order.
    pub losses: Vec<f64>,
}

impl TrainReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("step,loss\n");
        for (i, l) in self.losses.iter().enumerate() {
            s.push_str(&format!("{},{l:.17e}\n", i + 1));
        }
        s
    }
}

/// Trains `model` in place with Adam on shuffled mini-batches.
///
/// On a non-finite loss the update is skipped, `model` keeps the last good
/// parameters and `NonFiniteLoss` is returned. When `checkpoint_dir` is set
/// and `cfg.checkpoint_every > 0`, `step_{n}.dfck` files are written there.
pub fn train(
    model: &mut DenoiserModel,
    corpus: &[GrayImage],
    s: &NoiseSchedule,
    cfg: &TrainConfig,
    checkpoint_dir: Option<&Path>,
    mut on_step: impl FnMut(usize, f64),
) -> Result<TrainReport, DenoiserError> {
    cfg.validate()?;
    if corpus.is_empty() {
        return Err(DenoiserError::EmptyBatch);
    }
    let side = model.side();
    let latents = corpus
        .iter()
        .map(|img| {
            if img.width() != side || img.height() != side {
                return Err(DenoiserError::DimensionMismatch {
                    expected: side,
                    got: img.width(),
                });
            }
            Ok(LatentImage::from_gray(img).expect("square checked"))
        })
        .collect::<Result<Vec<_>, _>>()?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..latents.len()).collect();
    order.shuffle(&mut rng);
    let mut cursor = 0usize;
    let mut opt = Adam::new(model, cfg.learning_rate);
    let mut losses = Vec::with_capacity(cfg.steps);

    for step in 1..=cfg.steps {
        let mut batch = Vec::with_capacity(cfg.batch_size);
        while batch.len() < cfg.batch_size {
            if cursor == order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            batch.push(latents[order[cursor]].clone());
            cursor += 1;
        }
        let (loss, grads) = match loss_and_grad(model, &batch, s, &mut rng) {
            Err(DenoiserError::NonFiniteLoss { .. }) => {
                return Err(DenoiserError::NonFiniteLoss { step: Some(step) })
            }
            other => other?,
        };
        let backup = model.clone();
        opt.update(model, &grads);
        if !model.is_finite() {
            *model = backup;
            return Err(DenoiserError::NonFiniteLoss { step: Some(step) });
        }
        losses.push(loss);
        on_step(step, loss);
        if let Some(dir) = checkpoint_dir {
            if cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0 {
                save_checkpoint(model, dir.join(format!("step_{step:06}.dfck")))?;
            }
        }
    }
    Ok(TrainReport { losses })
}
