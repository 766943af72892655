//! DDPM core: linear noise schedule, closed-form forward process, training
//! targets, the ancestral reverse sampler and identity-branching impression
//! sampling.
//!
//! Steps are 1-based throughout (`t = 1..=T`); internal arrays are indexed
//! by `t - 1`.

use rand::Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::imagecore::GrayImage;

#[derive(Debug, Error, PartialEq)]
pub enum DiffusionError {
    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("step {t} outside 1..={steps}")]
    StepOutOfRange { t: usize, steps: usize },
    #[error("invalid branch spec: {0}")]
    InvalidBranch(String),
    #[error("noise predictor failed: {0}")]
    Predictor(String),
}

/// Per-step variances and their derived quantities.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    beta: Vec<f64>,
    alpha: Vec<f64>,
    alpha_bar: Vec<f64>,
    sigma: Vec<f64>,
}

impl NoiseSchedule {
    /// Builds a schedule from explicit per-step variances.
    pub fn from_betas(beta: Vec<f64>) -> Result<Self, DiffusionError> {
        if beta.len() < 2 {
            return Err(DiffusionError::InvalidSchedule(format!(
                "need at least 2 steps, got {}",
                beta.len()
            )));
        }
        if beta.iter().any(|b| !(*b > 0.0 && *b < 1.0)) {
            return Err(DiffusionError::InvalidSchedule(
                "every beta must lie in (0, 1)".into(),
            ));
        }
        if beta.windows(2).any(|w| w[1] < w[0]) {
            return Err(DiffusionError::InvalidSchedule(
                "betas must be non-decreasing".into(),
            ));
        }
        let alpha: Vec<f64> = beta.iter().map(|b| 1.0 - b).collect();
        let mut alpha_bar = Vec::with_capacity(alpha.len());
        let mut prod = 1.0;
        for a in &alpha {
            prod *= a;
            alpha_bar.push(prod);
        }
        let sigma = beta.iter().map(|b| b.sqrt()).collect();
        Ok(Self {
            beta,
            alpha,
            alpha_bar,
            sigma,
        })
    }

    pub fn steps(&self) -> usize {
        self.beta.len()
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.beta[t - 1]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alpha[t - 1]
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bar[t - 1]
    }

    pub fn sigma(&self, t: usize) -> f64 {
        self.sigma[t - 1]
    }

    pub fn betas(&self) -> &[f64] {
        &self.beta
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bar
    }

    fn check_step(&self, t: usize) -> Result<(), DiffusionError> {
        if t == 0 || t > self.steps() {
            return Err(DiffusionError::StepOutOfRange {
                t,
                steps: self.steps(),
            });
        }
        Ok(())
    }
}

/// Linear interpolation of beta between `beta_start` (t=1) and `beta_end`
/// (t=T), both inclusive.
pub fn linear_schedule(
    steps: usize,
    beta_start: f64,
    beta_end: f64,
) -> Result<NoiseSchedule, DiffusionError> {
    if steps < 2 {
        return Err(DiffusionError::InvalidSchedule(format!(
            "T must be >= 2, got {steps}"
        )));
    }
    if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
        return Err(DiffusionError::InvalidSchedule(format!(
            "require 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}"
        )));
    }
    let span = (steps - 1) as f64;
    let beta = (0..steps)
        .map(|i| {
            if i == steps - 1 {
                beta_end
            } else {
                beta_start + (beta_end - beta_start) * (i as f64 / span)
            }
        })
        .collect();
    NoiseSchedule::from_betas(beta)
}

/// Square image in model space, `x = 2·intensity − 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentImage {
    side: usize,
    data: Vec<f64>,
}

impl LatentImage {
    pub fn new(side: usize, data: Vec<f64>) -> Result<Self, DiffusionError> {
        if data.len() != side * side {
            return Err(DiffusionError::DimensionMismatch {
                expected: side * side,
                got: data.len(),
            });
        }
        Ok(Self { side, data })
    }

    pub fn zeros(side: usize) -> Self {
        Self {
            side,
            data: vec![0.0; side * side],
        }
    }

    pub fn gaussian<R: Rng + ?Sized>(side: usize, rng: &mut R) -> Self {
        Self {
            side,
            data: standard_normal_vec(side * side, rng),
        }
    }

    /// Maps a square grayscale image into model space.
    pub fn from_gray(img: &GrayImage) -> Result<Self, DiffusionError> {
        if !img.is_square() {
            return Err(DiffusionError::DimensionMismatch {
                expected: img.width() * img.width(),
                got: img.width() * img.height(),
            });
        }
        let data = img.data().iter().map(|v| 2.0 * v - 1.0).collect();
        Ok(Self {
            side: img.width(),
            data,
        })
    }

    /// Maps back to intensities with `clamp((x + 1) / 2)`.
    pub fn to_gray(&self) -> GrayImage {
        let data = self.data.iter().map(|x| (x + 1.0) / 2.0).collect();
        GrayImage::from_clamped(self.side, self.side, data)
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }
}

pub(crate) fn standard_normal_vec<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<f64> {
    (0..n)
        .map(|_| rng.sample::<f64, _>(StandardNormal))
        .collect()
}

/// Anything that predicts the noise component of `x_t` at step `t`.
pub trait NoisePredictor {
    /// Predicts noise for a batch of latents; `t[i]` is the step of `x[i]`.
    fn predict_noise(
        &self,
        x: &[LatentImage],
        t: &[usize],
    ) -> Result<Vec<Vec<f64>>, DiffusionError>;

    fn predict_one(&self, x: &LatentImage, t: usize) -> Result<Vec<f64>, DiffusionError> {
        let mut out = self.predict_noise(std::slice::from_ref(x), &[t])?;
        Ok(out.pop().expect("one prediction per input"))
    }
}

/// Closed-form forward marginal: `sqrt(ᾱ_t)·x0 + sqrt(1 − ᾱ_t)·eps`.
pub fn q_sample(
    x0: &LatentImage,
    t: usize,
    eps: &[f64],
    s: &NoiseSchedule,
) -> Result<LatentImage, DiffusionError> {
    s.check_step(t)?;
    if eps.len() != x0.data.len() {
        return Err(DiffusionError::DimensionMismatch {
            expected: x0.data.len(),
            got: eps.len(),
        });
    }
    let a = s.alpha_bar(t).sqrt();
    let b = (1.0 - s.alpha_bar(t)).sqrt();
    let data = x0
        .data
        .iter()
        .zip(eps)
        .map(|(x, e)| a * x + b * e)
        .collect();
    Ok(LatentImage {
        side: x0.side,
        data,
    })
}

/// One single-step forward transition `x_t = sqrt(α_t)·x_{t−1} + sqrt(β_t)·eps`.
pub fn q_step(
    x_prev: &LatentImage,
    t: usize,
    eps: &[f64],
    s: &NoiseSchedule,
) -> Result<LatentImage, DiffusionError> {
    s.check_step(t)?;
    if eps.len() != x_prev.data.len() {
        return Err(DiffusionError::DimensionMismatch {
            expected: x_prev.data.len(),
            got: eps.len(),
        });
    }
    let a = s.alpha(t).sqrt();
    let b = s.beta(t).sqrt();
    let data = x_prev
        .data
        .iter()
        .zip(eps)
        .map(|(x, e)| a * x + b * e)
        .collect();
    Ok(LatentImage {
        side: x_prev.side,
        data,
    })
}

/// A noised example together with the noise the denoiser must recover.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingPair {
    pub x_t: LatentImage,
    pub t: usize,
    pub eps: Vec<f64>,
}

/// Draws `t ~ U{1..T}` and `eps ~ N(0, I)`, returning `x_t = q_sample(x0, t, eps)`.
pub fn training_pair<R: Rng + ?Sized>(
    x0: &LatentImage,
    s: &NoiseSchedule,
    rng: &mut R,
) -> TrainingPair {
    let t = rng.random_range(1..=s.steps());
    let eps = standard_normal_vec(x0.data.len(), rng);
    let x_t = q_sample(x0, t, &eps, s).expect("t and eps drawn in range");
    TrainingPair { x_t, t, eps }
}

/// Deterministic part of the reverse update plus an explicit noise field.
///
/// `x_{t−1} = (x_t − β_t / sqrt(1 − ᾱ_t) · ε_θ) / sqrt(α_t) + σ_t · z`, where
/// `z` is taken from `noise` (treated as zero when `None`, and always zero
/// at `t = 1`).
pub fn reverse_step<M: NoisePredictor + ?Sized>(
    model: &M,
    x_t: &LatentImage,
    t: usize,
    s: &NoiseSchedule,
    noise: Option<&[f64]>,
) -> Result<LatentImage, DiffusionError> {
    s.check_step(t)?;
    let eps = model.predict_one(x_t, t)?;
    if eps.len() != x_t.data.len() {
        return Err(DiffusionError::DimensionMismatch {
            expected: x_t.data.len(),
            got: eps.len(),
        });
    }
    if let Some(z) = noise {
        if z.len() != x_t.data.len() {
            return Err(DiffusionError::DimensionMismatch {
                expected: x_t.data.len(),
                got: z.len(),
            });
        }
    }
    let inv_sqrt_alpha = 1.0 / s.alpha(t).sqrt();
    let coef = s.beta(t) / (1.0 - s.alpha_bar(t)).sqrt();
    let sigma = if t > 1 { s.sigma(t) } else { 0.0 };
    let data = x_t
        .data
        .iter()
        .zip(&eps)
        .enumerate()
        .map(|(i, (x, e))| {
            let mean = inv_sqrt_alpha * (x - coef * e);
            match noise {
                Some(z) if sigma > 0.0 => mean + sigma * z[i],
                _ => mean,
            }
        })
        .collect();
    Ok(LatentImage {
        side: x_t.side,
        data,
    })
}

/// Ancestral DDPM step from `x_t` to `x_{t−1}` with fresh Gaussian noise.
pub fn ddpm_step<M: NoisePredictor + ?Sized, R: Rng + ?Sized>(
    model: &M,
    x_t: &LatentImage,
    t: usize,
    s: &NoiseSchedule,
    rng: &mut R,
) -> Result<LatentImage, DiffusionError> {
    ddpm_step_scaled(model, x_t, t, s, rng, 1.0)
}

fn ddpm_step_scaled<M: NoisePredictor + ?Sized, R: Rng + ?Sized>(
    model: &M,
    x_t: &LatentImage,
    t: usize,
    s: &NoiseSchedule,
    rng: &mut R,
    noise_scale: f64,
) -> Result<LatentImage, DiffusionError> {
    if t > 1 && noise_scale != 0.0 {
        let mut z = standard_normal_vec(x_t.data.len(), rng);
        if noise_scale != 1.0 {
            z.iter_mut().for_each(|v| *v *= noise_scale);
        }
        reverse_step(model, x_t, t, s, Some(&z))
    } else {
        reverse_step(model, x_t, t, s, None)
    }
}

/// Runs the reverse chain from `from_t` down to `to_t + 1`, returning `x_{to_t}`.
pub fn denoise_range<M: NoisePredictor + ?Sized, R: Rng + ?Sized>(
    model: &M,
    mut x: LatentImage,
    from_t: usize,
    to_t: usize,
    s: &NoiseSchedule,
    rng: &mut R,
    noise_scale: f64,
) -> Result<LatentImage, DiffusionError> {
    for t in (to_t + 1..=from_t).rev() {
        x = ddpm_step_scaled(model, &x, t, s, rng, noise_scale)?;
    }
    Ok(x)
}

/// Draws `x_T ~ N(0, I)` and denoises it all the way to an image.
pub fn sample<M: NoisePredictor + ?Sized, R: Rng + ?Sized>(
    model: &M,
    s: &NoiseSchedule,
    side: usize,
    rng: &mut R,
) -> Result<GrayImage, DiffusionError> {
    let x_t = LatentImage::gaussian(side, rng);
    Ok(denoise_range(model, x_t, s.steps(), 0, s, rng, 1.0)?.to_gray())
}

/// Branch step `d` and number of impressions per identity.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BranchSpec {
    d: usize,
    k: usize,
}

impl BranchSpec {
    pub fn new(d: usize, k: usize, steps: usize) -> Result<Self, DiffusionError> {
        if d < 1 || d >= steps {
            return Err(DiffusionError::InvalidBranch(format!(
                "d={d} must lie in [1, {}]",
                steps - 1
            )));
        }
        if k < 2 {
            return Err(DiffusionError::InvalidBranch(format!(
                "K={k} must be at least 2"
            )));
        }
        Ok(Self { d, k })
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn k(&self) -> usize {
        self.k
    }
}

/// Result of one identity-branching run.
#[derive(Debug, Clone)]
pub struct BranchOutput {
    /// Shared partially denoised state `x_d`.
    pub anchor: LatentImage,
    pub impressions: Vec<GrayImage>,
}

/// Samples one identity: a shared trajectory from `T` to `x_d`, then `K`
/// independent continuations from `x_d` to `x_0`.
pub fn branch_impressions<M: NoisePredictor + ?Sized, R: Rng + ?Sized>(
    model: &M,
    s: &NoiseSchedule,
    spec: BranchSpec,
    side: usize,
    rng: &mut R,
) -> Result<Vec<GrayImage>, DiffusionError> {
    Ok(branch_impressions_with(model, s, spec, side, rng, 1.0)?.impressions)
}

/// As [`branch_impressions`], scaling the continuation noise by
/// `continuation_noise`; `0.0` makes the continuations deterministic.
pub fn branch_impressions_with<M: NoisePredictor + ?Sized, R: Rng + ?Sized>(
    model: &M,
    s: &NoiseSchedule,
    spec: BranchSpec,
    side: usize,
    rng: &mut R,
    continuation_noise: f64,
) -> Result<BranchOutput, DiffusionError> {
    if spec.d >= s.steps() {
        return Err(DiffusionError::InvalidBranch(format!(
            "d={} not below T={}",
            spec.d,
            s.steps()
        )));
    }
    let x_t = LatentImage::gaussian(side, rng);
    let anchor = denoise_range(model, x_t, s.steps(), spec.d, s, rng, 1.0)?;
    let mut impressions = Vec::with_capacity(spec.k);
    for _ in 0..spec.k {
        let x0 = denoise_range(model, anchor.clone(), spec.d, 0, s, rng, continuation_noise)?;
        impressions.push(x0.to_gray());
    }
    Ok(BranchOutput {
        anchor,
        impressions,
    })
}

/// Largest batch handed to the predictor at once; bounds peak memory.
const PREDICT_CHUNK: usize = 64;

/// Advances every member of `xs` from `from_t` down to `to_t`, one batched
/// prediction per step. Noise is drawn member by member in order, so a
/// batch of one consumes `rng` exactly like [`denoise_range`].
pub fn denoise_range_batch<M: NoisePredictor + ?Sized, R: Rng + ?Sized>(
    model: &M,
    mut xs: Vec<LatentImage>,
    from_t: usize,
    to_t: usize,
    s: &NoiseSchedule,
    rng: &mut R,
    noise_scale: f64,
) -> Result<Vec<LatentImage>, DiffusionError> {
    for t in (to_t + 1..=from_t).rev() {
        s.check_step(t)?;
        let mut eps = Vec::with_capacity(xs.len());
        for chunk in xs.chunks(PREDICT_CHUNK) {
            eps.extend(model.predict_noise(chunk, &vec![t; chunk.len()])?);
        }
        let inv_sqrt_alpha = 1.0 / s.alpha(t).sqrt();
        let coef = s.beta(t) / (1.0 - s.alpha_bar(t)).sqrt();
        let sigma = if t > 1 { s.sigma(t) * noise_scale } else { 0.0 };
        for (x, e) in xs.iter_mut().zip(&eps) {
            if e.len() != x.data.len() {
                return Err(DiffusionError::DimensionMismatch {
                    expected: x.data.len(),
                    got: e.len(),
                });
            }
            let z = if sigma != 0.0 {
                Some(standard_normal_vec(x.data.len(), rng))
            } else {
                None
            };
            for (i, (v, ev)) in x.data.iter_mut().zip(e).enumerate() {
                *v = inv_sqrt_alpha * (*v - coef * ev) + z.as_ref().map_or(0.0, |z| sigma * z[i]);
            }
        }
    }
    Ok(xs)
}

/// `n` independent samples denoised together.
pub fn sample_batch<M: NoisePredictor + ?Sized, R: Rng + ?Sized>(
    model: &M,
    s: &NoiseSchedule,
    side: usize,
    n: usize,
    rng: &mut R,
) -> Result<Vec<GrayImage>, DiffusionError> {
    let xs = (0..n).map(|_| LatentImage::gaussian(side, rng)).collect();
    Ok(denoise_range_batch(model, xs, s.steps(), 0, s, rng, 1.0)?
        .iter()
        .map(LatentImage::to_gray)
        .collect())
}

/// Identity branching for `identities` identities at once: all anchors are
/// denoised together, then all `identities × K` continuations, identity-major.
pub fn branch_identities<M: NoisePredictor + ?Sized, R: Rng + ?Sized>(
    model: &M,
    s: &NoiseSchedule,
    spec: BranchSpec,
    side: usize,
    identities: usize,
    rng: &mut R,
) -> Result<Vec<BranchOutput>, DiffusionError> {
    if spec.d >= s.steps() {
        return Err(DiffusionError::InvalidBranch(format!(
            "d={} not below T={}",
            spec.d,
            s.steps()
        )));
    }
    let starts = (0..identities)
        .map(|_| LatentImage::gaussian(side, rng))
        .collect();
    let anchors = denoise_range_batch(model, starts, s.steps(), spec.d, s, rng, 1.0)?;
    let branches = anchors
        .iter()
        .flat_map(|a| std::iter::repeat_n(a.clone(), spec.k))
        .collect();
    let finals = denoise_range_batch(model, branches, spec.d, 0, s, rng, 1.0)?;
    Ok(anchors
        .into_iter()
        .zip(finals.chunks(spec.k))
        .map(|(anchor, fin)| BranchOutput {
            anchor,
            impressions: fin.iter().map(LatentImage::to_gray).collect(),
        })
        .collect())
}
