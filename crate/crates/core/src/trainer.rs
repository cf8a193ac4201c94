//! Velocity-matching training loop with Adam and global-norm clipping.
//!
//! `Rng::new(seed)` is forked twice: the first child initializes weights ([`init_model`]), the
//! second drives the whole run. Each step draws, per batch slot in order: the corpus index, one uniform for caption dropout (plus one word choice when a single keyword
//! is kept), and then the time and noise draws of the loss for every slot in order.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt::Write;

use crate::flow::{cfm_loss_graph, Example, LossWeighting};
use crate::mmdit::Model;
use crate::numcore::{Graph, Real, Rng, Tensor};
use crate::synth::{self, Jitter};
use crate::{Error, Result};

/// Corpus shape for training runs.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CorpusConfig {
    pub size: usize,
    pub seed: u64,
    pub jitter: Jitter,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self { size: 512, seed: 0, jitter: Jitter::default() }
    }
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub batch_size: usize,
    pub steps: usize,
    pub seed: u64,
    pub weighting: LossWeighting,
    pub corpus: CorpusConfig,
    /// Steps between checkpoints; 0 disables intermediate checkpoints.
    pub checkpoint_interval: usize,
    /// Steps between loss log lines.
    pub log_interval: usize,
    /// Global gradient norm bound.
    pub grad_clip: f64,
    /// Chance of training on the empty prompt.
    pub null_caption_prob: f64,
    /// Chance of training on one word of the caption.
    pub keyword_caption_prob: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 2e-3,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            batch_size: 16,
            steps: 2000,
            seed: 0,
            weighting: LossWeighting::Uniform,
            corpus: CorpusConfig::default(),
            checkpoint_interval: 500,
            log_interval: 10,
            grad_clip: 1.0,
            null_caption_prob: 0.1,
            keyword_caption_prob: 0.3,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return bad(format!("{name} must lie in [0, 1), got {b}"));
            }
        }
        if !(self.adam_eps.is_finite() && self.adam_eps > 0.0) {
            return bad(format!("adam_eps must be positive, got {}", self.adam_eps));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if self.corpus.size == 0 {
            return bad("corpus.size must be positive".into());
        }
        if self.log_interval == 0 {
            return bad("log_interval must be positive".into());
        }
        if !(self.grad_clip.is_finite() && self.grad_clip > 0.0) {
            return bad(format!("grad_clip must be positive, got {}", self.grad_clip));
        }
        let (p0, p1) = (self.null_caption_prob, self.keyword_caption_prob);
        if !((0.0..=1.0).contains(&p0) && (0.0..=1.0).contains(&p1) && p0 + p1 <= 1.0) {
            return bad(format!("caption probabilities must lie in [0, 1] and sum to at most 1, got {p0} and {p1}"));
        }
        let j = &self.corpus.jitter;
        if !(j.center_min <= j.center_max && 0.0 < j.size_min && j.size_min <= j.size_max) {
            return bad("corpus.jitter ranges are empty or negative".into());
        }
        Ok(())
    }
}

/// Adam moments, one pair per parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T: Real = f32> {
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
    pub step: u64,
}

impl<T: Real> AdamState<T> {
    pub fn new(params: &[Tensor<T>]) -> Self {
        let zeros = || params.iter().map(|p| Tensor::zeros(p.shape())).collect();
        Self { m: zeros(), v: zeros(), step: 0 }
    }
}

/// One bias-corrected Adam update, element by element.
pub fn adam_step<T: Real>(
    params: &mut [Tensor<T>],
    grads: &[Tensor<T>],
    state: &mut AdamState<T>,
    config: &TrainConfig,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::Shape { op: "adam_step", expected: alloc::vec![params.len()], found: alloc::vec![grads.len()] });
    }
    for (p, g) in params.iter().zip(grads) {
        if p.shape() != g.shape() {
            return Err(Error::Shape { op: "adam_step", expected: p.shape().to_vec(), found: g.shape().to_vec() });
        }
    }
    if grads.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite { what: "gradient", step: state.step as usize });
    }
    state.step += 1;
    let t = state.step as i32;
    let b1 = T::lit(config.beta1);
    let b2 = T::lit(config.beta2);
    let c1 = T::lit(1.0 - num_traits::Float::powi(config.beta1, t));
    let c2 = T::lit(1.0 - num_traits::Float::powi(config.beta2, t));
    let lr = T::lit(config.learning_rate);
    let eps = T::lit(config.adam_eps);
    let one = T::one();
    for (i, p) in params.iter_mut().enumerate() {
        let g = grads[i].data();
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        for (j, w) in p.data_mut().iter_mut().enumerate() {
            m[j] = b1 * m[j] + (one - b1) * g[j];
            v[j] = b2 * v[j] + (one - b2) * g[j] * g[j];
            let m_hat = m[j] / c1;
            let v_hat = v[j] / c2;
            *w -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

/// Scales `grads` so their joint L2 norm is at most `max_norm`; returns the norm before scaling.
pub fn clip_global_norm<T: Real>(grads: &mut [Tensor<T>], max_norm: f64) -> f64 {
    let total: f64 = grads.iter().flat_map(|g| g.data()).map(|v| v.as_f64() * v.as_f64()).sum();
    let norm = num_traits::Float::sqrt(total);
    if norm > max_norm {
        let s = T::lit(max_norm / norm);
        for g in grads.iter_mut() {
            g.data_mut().iter_mut().for_each(|v| *v *= s);
        }
    }
    norm
}

fn streams(seed: u64) -> (Rng, Rng) {
    let mut root = Rng::new(seed);
    let init = root.fork();
    (init, root.fork())
}

/// Fresh weights for a training run with `seed`.
pub fn init_model<T: Real>(config: crate::mmdit::ModelConfig, seed: u64) -> Result<Model<T>> {
    Model::init(config, &mut streams(seed).0)
}

/// A captioned image in pixel space.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainItem {
    pub image: Tensor<f32>,
    pub caption: String,
}

/// Renders the corpus described by `config`.
pub fn build_corpus(config: &CorpusConfig, image_size: usize) -> Vec<TrainItem> {
    synth::corpus_plan(config.size, config.seed)
        .into_iter()
        .map(|e| {
            let s = synth::generate_sample(e.seed, e.attributes, &config.jitter, image_size);
            TrainItem { image: s.image, caption: s.caption }
        })
        .collect()
}

/// Callbacks during training.
pub trait TrainObserver<T: Real> {
    fn on_step(&mut self, _step: usize, _loss: f64) {}

    /// Called with the updated model every `checkpoint_interval` steps.
    fn on_checkpoint(&mut self, _step: usize, _model: &Model<T>) -> Result<()> {
        Ok(())
    }
}

impl<T: Real> TrainObserver<T> for () {}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainReport {
    /// Loss of every step, 1-based step `i + 1` at index `i`.
    pub losses: Vec<f64>,
}

impl TrainReport {
    /// Plain-text `<step> <loss>` lines for every `interval`-th step.
    pub fn log(&self, interval: usize) -> String {
        loss_log(&self.losses, interval)
    }
}

pub fn loss_log(losses: &[f64], interval: usize) -> String {
    let mut out = String::new();
    for (i, l) in losses.iter().enumerate() {
        let step = i + 1;
        if step % interval.max(1) == 0 {
            let _ = writeln!(out, "{step} {l}");
        }
    }
    out
}

fn pick_caption(caption: &str, config: &TrainConfig, rng: &mut Rng) -> String {
    let u = rng.uniform();
    if u < config.null_caption_prob {
        String::new()
    } else if u < config.null_caption_prob + config.keyword_caption_prob {
        let words: Vec<&str> = caption.split_whitespace().collect();
        if words.is_empty() {
            String::new()
        } else {
            String::from(words[rng.below(words.len() as u64) as usize])
        }
    } else {
        String::from(caption)
    }
}

/// Trains `model` in place.
///
/// On a non-finite loss or gradient the run stops before applying that step, so `model` holds
/// the last good weights and the error names the step.
pub fn train<T: Real>(
    model: &mut Model<T>,
    corpus: &[TrainItem],
    config: &TrainConfig,
    observer: &mut dyn TrainObserver<T>,
) -> Result<TrainReport> {
    config.validate()?;
    if corpus.is_empty() {
        return Err(Error::InvalidConfig("corpus is empty".into()));
    }
    let shape = model.image_shape();
    if let Some(bad) = corpus.iter().find(|c| c.image.shape() != shape) {
        return Err(Error::Shape { op: "train", expected: shape.to_vec(), found: bad.image.shape().to_vec() });
    }
    let x0: Vec<Tensor<T>> = corpus.iter().map(|c| synth::to_model_space(&c.image)).collect();
    let vocab = model.config().vocabulary.clone();
    let mut rng = streams(config.seed).1;
    let mut adam = AdamState::new(model.params().tensors());
    let mut losses = Vec::with_capacity(config.steps);

    for step in 1..=config.steps {
        let mut batch = Vec::with_capacity(config.batch_size);
        for _ in 0..config.batch_size {
            let i = rng.below(corpus.len() as u64) as usize;
            let caption = pick_caption(&corpus[i].caption, config, &mut rng);
            batch.push(Example { x0: x0[i].clone(), token_ids: vocab.tokenize(&caption) });
        }

        let mut g = Graph::new();
        let bound = model.bind(&mut g, true);
        let loss = cfm_loss_graph(&mut g, model, &bound, &batch, config.weighting, &mut rng)?;
        let value = g.value(loss).data()[0];
        if !value.is_finite() {
            return Err(Error::NonFinite { what: "loss", step });
        }
        let mut all = g.backward(loss)?;
        let mut grads: Vec<Tensor<T>> = model
            .params()
            .tensors()
            .iter()
            .enumerate()
            .map(|(id, p)| all.take(bound.get(id)).unwrap_or_else(|| Tensor::zeros(p.shape())))
            .collect();
        drop(g);
        if grads.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite { what: "gradient", step });
        }
        clip_global_norm(&mut grads, config.grad_clip);

        let mut params: Vec<Tensor<T>> = model.params().tensors().to_vec();
        adam_step(&mut params, &grads, &mut adam, config)?;
        for (id, p) in params.into_iter().enumerate() {
            *model.params_mut().tensor_mut(id) = p;
        }

        let value = value.as_f64();
        losses.push(value);
        observer.on_step(step, value);
        if config.checkpoint_interval > 0 && step % config.checkpoint_interval == 0 {
            observer.on_checkpoint(step, model)?;
        }
    }
    Ok(TrainReport { losses })
}
