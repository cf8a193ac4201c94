//! Rectified flow: straight-path interpolation, the velocity-matching loss, a uniform
//! timestep schedule, Euler sampling from noise and Euler inversion back to noise.
//!
//! Time runs from `t = 1` (noise) to `t = 0` (data).

use alloc::vec::Vec;

use crate::mmdit::{patchify, Model};
use crate::numcore::{Graph, Real, Rng, Tensor, Var};
use crate::textenc::PromptEmbedding;
use crate::{Error, Result};

/// Descending knots `1 = t_0 > t_1 > ... > t_K = 0`.
#[derive(Clone, Debug, PartialEq)]
pub struct Schedule {
    knots: Vec<f64>,
}

impl Schedule {
    pub const DEFAULT_STEPS: usize = 30;

    /// Uniform spacing in `t`.
    pub fn uniform(steps: usize) -> Result<Self> {
        if steps == 0 {
            return Err(Error::InvalidConfig("schedule needs at least one step".into()));
        }
        let mut knots: Vec<f64> = (0..=steps).map(|j| 1.0 - j as f64 / steps as f64).collect();
        knots[0] = 1.0;
        knots[steps] = 0.0;
        Ok(Self { knots })
    }

    pub fn steps(&self) -> usize {
        self.knots.len() - 1
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }
}

impl Default for Schedule {
    fn default() -> Self {
        Self::uniform(Self::DEFAULT_STEPS).expect("default schedule")
    }
}

/// `x_t = (1 - t) x0 + t eps`.
pub fn forward_sample<T: Real>(x0: &Tensor<T>, eps: &Tensor<T>, t: T) -> Tensor<T> {
    let a = T::one() - t;
    x0.zip_map(eps, |x, e| a * x + t * e)
}

/// Velocity of the straight path, `eps - x0`.
pub fn velocity_target<T: Real>(x0: &Tensor<T>, eps: &Tensor<T>) -> Tensor<T> {
    eps.sub(x0)
}

/// One training draw for the velocity-matching objective.
#[derive(Clone, Debug)]
pub struct CfmDraw<T: Real> {
    pub t: T,
    pub eps: Tensor<T>,
    pub x_t: Tensor<T>,
    pub target: Tensor<T>,
}

/// Draws `t ~ U(0, 1)` (one word), then `eps ~ N(0, I)` in row-major order (two words each).
pub fn cfm_draw<T: Real>(x0: &Tensor<T>, rng: &mut Rng) -> CfmDraw<T> {
    let t = T::lit(rng.uniform());
    let eps = rng.normal_tensor(x0.shape());
    cfm_draw_at(x0, eps, t)
}

pub fn cfm_draw_at<T: Real>(x0: &Tensor<T>, eps: Tensor<T>, t: T) -> CfmDraw<T> {
    let x_t = forward_sample(x0, &eps, t);
    let target = velocity_target(x0, &eps);
    CfmDraw { t, eps, x_t, target }
}

/// Per-element mean squared error with uniform time weighting.
pub fn velocity_mse<T: Real>(pred: &Tensor<T>, target: &Tensor<T>) -> T {
    let s = pred.zip_map(target, |p, q| (p - q) * (p - q)).sum();
    s / T::lit(pred.len() as f64)
}

/// Loss weighting across `t`. Only uniform weighting ships.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum LossWeighting {
    #[default]
    Uniform,
}

/// A training example: model-space image and token ids of its prompt.
#[derive(Clone, Debug)]
pub struct Example<T: Real> {
    pub x0: Tensor<T>,
    pub token_ids: Vec<usize>,
}

/// Velocity-matching loss over a batch, recorded on `g`.
///
/// Draws for each example in order, as in [`cfm_draw`]. The prompt is encoded on the graph so
/// that gradients reach the text encoder.
pub fn cfm_loss_graph<T: Real>(
    g: &mut Graph<T>,
    model: &Model<T>,
    bound: &crate::mmdit::Bound,
    batch: &[Example<T>],
    weighting: LossWeighting,
    rng: &mut Rng,
) -> Result<Var> {
    if batch.is_empty() {
        return Err(Error::InvalidConfig("empty batch".into()));
    }
    let LossWeighting::Uniform = weighting;
    let patch = model.config().patch_size;
    let enc = model.encoder_vars(bound);
    let mut losses = Vec::with_capacity(batch.len());
    for ex in batch {
        let draw = cfm_draw(&ex.x0, rng);
        let (pool, ctxt) = crate::textenc::encode_ids(g, enc, &ex.token_ids);
        let cond = crate::mmdit::CondVars { pool, ctxt };
        let xp = g.constant(patchify(&draw.x_t, patch));
        let v = model.velocity_patches(g, bound, xp, cond, draw.t, T::one(), None)?;
        let target = g.constant(patchify(&draw.target, patch));
        losses.push(g.mse(v, target));
    }
    let stacked = g.concat_rows(&losses);
    Ok(g.mean(stacked))
}

/// Scalar velocity-matching loss without gradient tracking.
pub fn cfm_loss<T: Real>(model: &Model<T>, batch: &[Example<T>], rng: &mut Rng) -> Result<T> {
    let mut g = Graph::new();
    let bound = model.bind(&mut g, false);
    let l = cfm_loss_graph(&mut g, model, &bound, batch, LossWeighting::Uniform, rng)?;
    Ok(g.value(l).data()[0])
}

/// A velocity field evaluated by the samplers. `step` is the 0-based solver step.
pub trait VelocityField<T: Real> {
    fn velocity(&mut self, x: &Tensor<T>, t: T, step: usize) -> Result<Tensor<T>>;
}

impl<T: Real, F> VelocityField<T> for F
where
    F: FnMut(&Tensor<T>, T, usize) -> Result<Tensor<T>>,
{
    fn velocity(&mut self, x: &Tensor<T>, t: T, step: usize) -> Result<Tensor<T>> {
        self(x, t, step)
    }
}

/// The model conditioned on one prompt.
pub struct Conditioned<'a, T: Real> {
    pub model: &'a Model<T>,
    pub prompt: &'a PromptEmbedding<T>,
    pub guidance: T,
}

impl<T: Real> VelocityField<T> for Conditioned<'_, T> {
    fn velocity(&mut self, x: &Tensor<T>, t: T, _step: usize) -> Result<Tensor<T>> {
        self.model.predict_velocity(x, self.prompt, t, self.guidance, None)
    }
}

/// Standard normal starting noise for `seed`, row-major over the image shape.
pub fn initial_noise<T: Real>(model: &Model<T>, seed: u64) -> Tensor<T> {
    Rng::new(seed).normal_tensor(&model.image_shape())
}

/// Unedited sampling under `prompt` from the noise of `seed`. Returns a model-space image.
pub fn generate<T: Real>(model: &Model<T>, prompt: &str, schedule: &Schedule, seed: u64) -> Result<Tensor<T>> {
    let noise = initial_noise(model, seed);
    generate_from(model, prompt, schedule, &noise)
}

pub fn generate_from<T: Real>(model: &Model<T>, prompt: &str, schedule: &Schedule, noise: &Tensor<T>) -> Result<Tensor<T>> {
    let emb = model.encode(prompt);
    let mut field = Conditioned { model, prompt: &emb, guidance: T::one() };
    euler_sample(&mut field, noise, schedule)
}

/// Euler integration from `t = 1` down to `t = 0`: `x += (t_{k+1} - t_k) v(x, t_k)`.
pub fn euler_sample<T: Real>(field: &mut dyn VelocityField<T>, x1: &Tensor<T>, schedule: &Schedule) -> Result<Tensor<T>> {
    let k = schedule.knots();
    let mut x = x1.clone();
    for step in 0..schedule.steps() {
        let v = field.velocity(&x, T::lit(k[step]), step)?;
        let dt = T::lit(k[step + 1] - k[step]);
        for (xi, &vi) in x.data_mut().iter_mut().zip(v.data()) {
            *xi += dt * vi;
        }
    }
    Ok(x)
}

/// Euler integration of the same field from `t = 0` up to `t = 1`.
pub fn invert<T: Real>(field: &mut dyn VelocityField<T>, x0: &Tensor<T>, schedule: &Schedule) -> Result<Tensor<T>> {
    let k: Vec<f64> = schedule.knots().iter().rev().copied().collect();
    let mut x = x0.clone();
    for step in 0..schedule.steps() {
        let v = field.velocity(&x, T::lit(k[step]), step)?;
        let dt = T::lit(k[step + 1] - k[step]);
        for (xi, &vi) in x.data_mut().iter_mut().zip(v.data()) {
            *xi += dt * vi;
        }
    }
    Ok(x)
}
