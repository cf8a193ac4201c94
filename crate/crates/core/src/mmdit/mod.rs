//! Toy multi-modal diffusion transformer.
//!
//! Image patches and prompt tokens travel in separate streams. Each joint block modulates both
//! streams from `m = c_pool + t_emb + g_emb`, runs one softmax attention over the concatenated
//! `[text; image]` sequence with per-stream projections, and finishes each stream with a gated
//! residual and an MLP. A velocity head maps image tokens back to patches.

mod block;
mod config;
mod params;

pub use block::{
    joint_attention, modulate, modulation_embedding, patchify, sinusoidal_embedding, unpatchify,
    BlockHooks, JointAttention, PassContext, Qkv, StreamModulation,
};
pub use config::ModelConfig;
pub use params::{Linear, ParamStore, StreamParams};

use alloc::string::String;
use alloc::vec::Vec;

use crate::numcore::{Graph, Real, Rng, Tensor, Var};
use crate::textenc::{self, EncoderVars, PromptEmbedding};
use crate::{Error, Result};

use params::Layout;

/// Model weights plus the layout that maps each role to a tensor.
#[derive(Clone, Debug)]
pub struct Model<T: Real = f32> {
    config: ModelConfig,
    layout: Layout,
    params: ParamStore<T>,
}

/// Parameters placed on a graph; index with a parameter id from the layout.
#[derive(Clone, Debug)]
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    #[inline]
    pub fn get(&self, id: usize) -> Var {
        self.vars[id]
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

/// Conditioning already placed on a graph.
#[derive(Clone, Copy, Debug)]
pub struct CondVars {
    pub pool: Var,
    pub ctxt: Var,
}

impl<T: Real> Model<T> {
    /// Fresh weights: `N(0, 1/fan_in)` for projections, zeros for biases and for every
    /// modulation map (so modulation starts as the identity and every gate starts closed).
    pub fn init(config: ModelConfig, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let (layout, params) = params::build(&config, |shape, kind| params::init_tensor(shape, kind, rng));
        Ok(Self { config, layout, params })
    }

    /// Assembles a model from named tensors, checking every name and shape.
    pub fn from_named(config: ModelConfig, named: Vec<(String, Tensor<T>)>) -> Result<Self> {
        config.validate()?;
        let (layout, mut params) = params::build(&config, |shape, _| Tensor::<T>::zeros(shape));
        if named.len() != params.len() {
            return Err(Error::InvalidConfig(alloc::format!(
                "expected {} parameter tensors, found {}",
                params.len(),
                named.len()
            )));
        }
        for (name, tensor) in named {
            let id = params.id(&name).ok_or_else(|| Error::MissingParameter(name.clone()))?;
            let slot = params.tensor_mut(id);
            if slot.shape() != tensor.shape() {
                return Err(Error::Shape {
                    op: "load parameter",
                    expected: slot.shape().to_vec(),
                    found: tensor.shape().to_vec(),
                });
            }
            *slot = tensor;
        }
        Ok(Self { config, layout, params })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    pub fn cast<U: Real>(&self) -> Model<U> {
        Model { config: self.config.clone(), layout: self.layout.clone(), params: self.params.cast() }
    }

    /// Places every parameter on `g`, tracked for gradients when `trainable`.
    pub fn bind(&self, g: &mut Graph<T>, trainable: bool) -> Bound {
        let vars = self
            .params
            .tensors()
            .iter()
            .map(|t| if trainable { g.param(t.clone()) } else { g.constant(t.clone()) })
            .collect();
        Bound { vars }
    }

    pub fn encoder_vars(&self, bound: &Bound) -> EncoderVars {
        EncoderVars { table: bound.get(self.layout.token_table), pool: bound.get(self.layout.pool_map) }
    }

    pub fn encode(&self, prompt: &str) -> PromptEmbedding<T> {
        textenc::encode(
            prompt,
            &self.config.vocabulary,
            self.params.tensor(self.layout.token_table),
            self.params.tensor(self.layout.pool_map),
        )
    }

    pub fn null_condition(&self) -> PromptEmbedding<T> {
        self.encode("")
    }

    pub fn cond_constants(&self, g: &mut Graph<T>, prompt: &PromptEmbedding<T>) -> CondVars {
        CondVars { pool: g.constant(prompt.pool.clone()), ctxt: g.constant(prompt.ctxt.clone()) }
    }

    pub fn block_count(&self) -> usize {
        self.layout.blocks.len()
    }

    pub fn block_params(&self, index: usize) -> &(StreamParams, StreamParams) {
        &self.layout.blocks[index]
    }

    /// Image shape `[H, W, C]`.
    pub fn image_shape(&self) -> [usize; 3] {
        self.config.image_shape()
    }

    /// Velocity in patch form `[n_img, patch*patch*C]` for image patches already on the graph.
    pub fn velocity_patches(
        &self,
        g: &mut Graph<T>,
        bound: &Bound,
        patches: Var,
        cond: CondVars,
        t: T,
        guidance: T,
        hooks: Option<&mut dyn BlockHooks<T>>,
    ) -> Result<Var> {
        block::forward(self, g, bound, patches, cond, t, guidance, hooks)
    }

    /// Full forward pass on an image-shaped `x_t`.
    pub fn predict_velocity(
        &self,
        x_t: &Tensor<T>,
        prompt: &PromptEmbedding<T>,
        t: T,
        guidance: T,
        hooks: Option<&mut dyn BlockHooks<T>>,
    ) -> Result<Tensor<T>> {
        let shape = self.image_shape();
        if x_t.shape() != shape {
            return Err(Error::Shape { op: "predict_velocity", expected: shape.to_vec(), found: x_t.shape().to_vec() });
        }
        let mut g = Graph::new();
        let bound = self.bind(&mut g, false);
        let cond = self.cond_constants(&mut g, prompt);
        let patches = g.constant(patchify(x_t, self.config.patch_size));
        let v = self.velocity_patches(&mut g, &bound, patches, cond, t, guidance, hooks)?;
        Ok(unpatchify(g.value(v), self.config.image_size, self.config.patch_size, self.config.channels))
    }
}

#[cfg(test)]
mod tests;
