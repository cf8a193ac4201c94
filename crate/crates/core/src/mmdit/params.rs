use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use super::ModelConfig;
use crate::numcore::{Real, Rng, Tensor};

/// Named tensors in a fixed order. The order is the checkpoint directory order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore<T: Real = f32> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
}

impl<T: Real> ParamStore<T> {
    fn push(&mut self, name: String, t: Tensor<T>) -> usize {
        self.names.push(name);
        self.tensors.push(t);
        self.tensors.len() - 1
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn tensor(&self, id: usize) -> &Tensor<T> {
        &self.tensors[id]
    }

    pub fn tensor_mut(&mut self, id: usize) -> &mut Tensor<T> {
        &mut self.tensors[id]
    }

    pub fn id(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.id(name).map(|i| &self.tensors[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    /// Total scalar count.
    pub fn numel(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore { names: self.names.clone(), tensors: self.tensors.iter().map(Tensor::cast).collect() }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Linear {
    pub w: usize,
    pub b: usize,
}

/// One stream (image or text) of one joint block.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StreamParams {
    /// `[d_pool, 6 * hidden]`: shift, scale, gate for attention then for the MLP.
    pub modulation: Linear,
    pub qkv: Linear,
    pub proj: Linear,
    pub fc1: Linear,
    pub fc2: Linear,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EmbedMlp {
    pub fc1: Linear,
    pub fc2: Linear,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Layout {
    pub token_table: usize,
    pub pool_map: usize,
    pub time: EmbedMlp,
    pub guidance: EmbedMlp,
    pub img_in: Linear,
    pub img_pos: usize,
    pub txt_in: Linear,
    /// `(image stream, text stream)` per block.
    pub blocks: Vec<(StreamParams, StreamParams)>,
    pub final_modulation: Linear,
    pub final_proj: Linear,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InitKind {
    /// `N(0, 1/fan_in)`, fan-in is the first axis.
    Projection,
    Embedding,
    Zero,
}

pub(crate) fn init_tensor<T: Real>(shape: &[usize], kind: InitKind, rng: &mut Rng) -> Tensor<T> {
    match kind {
        InitKind::Zero => Tensor::zeros(shape),
        InitKind::Projection => {
            let s = 1.0 / libm_sqrt(shape[0] as f64);
            Tensor::from_fn(shape, |_| T::lit(rng.normal() * s))
        }
        InitKind::Embedding => Tensor::from_fn(shape, |_| T::lit(rng.normal() * 0.5)),
    }
}

fn libm_sqrt(x: f64) -> f64 {
    num_traits::Float::sqrt(x)
}

/// Creates every parameter in a fixed order via `make`, returning the layout.
pub(crate) fn build<T: Real>(
    cfg: &ModelConfig,
    mut make: impl FnMut(&[usize], InitKind) -> Tensor<T>,
) -> (Layout, ParamStore<T>) {
    let mut store = ParamStore { names: Vec::new(), tensors: Vec::new() };
    let mut add = |name: String, shape: &[usize], kind: InitKind| store.push(name, make(shape, kind));
    let linear = |add: &mut dyn FnMut(String, &[usize], InitKind) -> usize,
                      prefix: &str,
                      fan_in: usize,
                      fan_out: usize,
                      zero: bool| {
        let kind = if zero { InitKind::Zero } else { InitKind::Projection };
        Linear {
            w: add(format!("{prefix}.weight"), &[fan_in, fan_out], kind),
            b: add(format!("{prefix}.bias"), &[1, fan_out], InitKind::Zero),
        }
    };
    let h = cfg.hidden;
    let token_table = add("text.token_table".into(), &[cfg.vocabulary.len(), cfg.d_ctxt], InitKind::Embedding);
    let pool_map = add("text.pool_map".into(), &[cfg.d_ctxt, cfg.d_pool], InitKind::Projection);
    let time = EmbedMlp {
        fc1: linear(&mut add, "time_in.fc1", cfg.d_pool, cfg.d_pool, false),
        fc2: linear(&mut add, "time_in.fc2", cfg.d_pool, cfg.d_pool, false),
    };
    let guidance = EmbedMlp {
        fc1: linear(&mut add, "guidance_in.fc1", cfg.d_pool, cfg.d_pool, false),
        fc2: linear(&mut add, "guidance_in.fc2", cfg.d_pool, cfg.d_pool, false),
    };
    let img_in = linear(&mut add, "img_in", cfg.patch_dim(), h, false);
    let img_pos = add("img_pos".into(), &[cfg.image_tokens(), h], InitKind::Embedding);
    let txt_in = linear(&mut add, "txt_in", cfg.d_ctxt, h, false);
    let mut blocks = Vec::with_capacity(cfg.blocks);
    for i in 0..cfg.blocks {
        let stream = |add: &mut dyn FnMut(String, &[usize], InitKind) -> usize, s: &str| {
            let p = format!("blocks.{i}.{s}");
            StreamParams {
                modulation: linear(add, &format!("{p}.modulation"), cfg.d_pool, 6 * h, true),
                qkv: linear(add, &format!("{p}.qkv"), h, 3 * h, false),
                proj: linear(add, &format!("{p}.proj"), h, h, false),
                fc1: linear(add, &format!("{p}.mlp.fc1"), h, cfg.mlp_ratio * h, false),
                fc2: linear(add, &format!("{p}.mlp.fc2"), cfg.mlp_ratio * h, h, false),
            }
        };
        let img = stream(&mut add, "img");
        let txt = stream(&mut add, "txt");
        blocks.push((img, txt));
    }
    let final_modulation = linear(&mut add, "final.modulation", cfg.d_pool, 2 * h, true);
    let final_proj = linear(&mut add, "final.proj", h, cfg.patch_dim(), false);
    let layout = Layout {
        token_table,
        pool_map,
        time,
        guidance,
        img_in,
        img_pos,
        txt_in,
        blocks,
        final_modulation,
        final_proj,
    };
    (layout, store)
}
