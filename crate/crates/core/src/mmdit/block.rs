use alloc::vec::Vec;

use super::params::{EmbedMlp, Linear, StreamParams};
use super::{Bound, CondVars, Model};
use crate::numcore::{Graph, Real, Tensor, Var};
use crate::Result;

/// Per-stream modulation: shift/scale/gate before attention and before the MLP.
#[derive(Clone, Copy, Debug)]
pub struct StreamModulation {
    pub shift_attn: Var,
    pub scale_attn: Var,
    pub gate_attn: Var,
    pub shift_mlp: Var,
    pub scale_mlp: Var,
    pub gate_mlp: Var,
}

/// Query, key and value for one stream, `[tokens, hidden]` each.
#[derive(Clone, Copy, Debug)]
pub struct Qkv {
    pub q: Var,
    pub k: Var,
    pub v: Var,
}

/// Result of one joint attention evaluation, after each stream's output projection and
/// before the residual addition.
#[derive(Clone, Copy, Debug)]
pub struct JointAttention {
    pub img_out: Var,
    pub txt_out: Var,
}

/// Values shared by every block of one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct PassContext {
    /// `t_emb + g_emb`, the modulation input without the pooled condition.
    pub step_embedding: Var,
    /// Modulation embedding of the base condition.
    pub modulation: Var,
    pub cond: CondVars,
}

/// Replaces the per-block computation of a forward pass.
///
/// `begin` runs once after the embeddings; `block` must return the image and base-text
/// streams after block `index`.
pub trait BlockHooks<T: Real> {
    fn begin(&mut self, g: &mut Graph<T>, model: &Model<T>, bound: &Bound, ctx: &PassContext) -> Result<()>;

    fn block(
        &mut self,
        g: &mut Graph<T>,
        model: &Model<T>,
        bound: &Bound,
        index: usize,
        img: Var,
        txt: Var,
        ctx: &PassContext,
    ) -> Result<(Var, Var)>;
}

/// `m = c_pool + t_emb + g_emb`.
pub fn modulation_embedding<T: Real>(g: &mut Graph<T>, pool: Var, t_emb: Var, g_emb: Var) -> Var {
    let s = g.add(pool, t_emb);
    g.add(s, g_emb)
}

/// `(1 + scale) * layer_norm(x) + shift`, broadcast over tokens.
pub fn modulate<T: Real>(g: &mut Graph<T>, x: Var, shift: Var, scale: Var) -> Var {
    let n = g.layer_norm(x);
    let s = g.add_const(scale, T::one());
    let y = g.mul_row(n, s);
    g.add_row(y, shift)
}

/// Sinusoidal features of `value * 1000`: `dim/2` cosines followed by `dim/2` sines.
pub fn sinusoidal_embedding<T: Real>(value: T, dim: usize) -> Tensor<T> {
    let half = dim / 2;
    let x = value.as_f64() * 1000.0;
    let mut out = Vec::with_capacity(dim);
    let ln_max = num_traits::Float::ln(10000.0f64);
    let freqs: Vec<f64> = (0..half).map(|i| num_traits::Float::exp(-ln_max * i as f64 / half as f64)).collect();
    out.extend(freqs.iter().map(|f| T::lit(num_traits::Float::cos(x * f))));
    out.extend(freqs.iter().map(|f| T::lit(num_traits::Float::sin(x * f))));
    Tensor::row(out)
}

/// `[H, W, C]` image to `[n_patches, p*p*C]`, patches row-major, features `(py, px, c)`.
pub fn patchify<T: Real>(image: &Tensor<T>, patch: usize) -> Tensor<T> {
    let (h, w, c) = (image.shape()[0], image.shape()[1], image.shape()[2]);
    let (gh, gw) = (h / patch, w / patch);
    let src = image.data();
    let mut out = Vec::with_capacity(src.len());
    for gy in 0..gh {
        for gx in 0..gw {
            for py in 0..patch {
                let row = (gy * patch + py) * w;
                let start = (row + gx * patch) * c;
                out.extend_from_slice(&src[start..start + patch * c]);
            }
        }
    }
    Tensor::new(&[gh * gw, patch * patch * c], out).expect("patchify shape")
}

/// Inverse of [`patchify`].
pub fn unpatchify<T: Real>(patches: &Tensor<T>, size: usize, patch: usize, channels: usize) -> Tensor<T> {
    let g = size / patch;
    let mut out = Tensor::zeros(&[size, size, channels]);
    let dst = out.data_mut();
    for gy in 0..g {
        for gx in 0..g {
            let p = patches.row_slice(gy * g + gx);
            for py in 0..patch {
                let row = (gy * patch + py) * size;
                let start = (row + gx * patch) * channels;
                dst[start..start + patch * channels]
                    .copy_from_slice(&p[py * patch * channels..(py + 1) * patch * channels]);
            }
        }
    }
    out
}

/// Single softmax attention over `[text; image]` with `heads` heads; returns the per-stream
/// mixed values before the output projections.
pub fn joint_attention<T: Real>(g: &mut Graph<T>, heads: usize, txt: &Qkv, img: &Qkv) -> (Var, Var) {
    let n_txt = g.value(txt.q).rows();
    let n_img = g.value(img.q).rows();
    let hidden = g.value(txt.q).cols();
    let dh = hidden / heads;
    let scale = T::one() / T::lit(dh as f64).sqrt();
    let q = g.concat_rows(&[txt.q, img.q]);
    let k = g.concat_rows(&[txt.k, img.k]);
    let v = g.concat_rows(&[txt.v, img.v]);
    let mut outs = Vec::with_capacity(heads);
    for h in 0..heads {
        let qh = g.slice_cols(q, h * dh, dh);
        let kh = g.slice_cols(k, h * dh, dh);
        let vh = g.slice_cols(v, h * dh, dh);
        let scores = g.matmul_bt(qh, kh);
        let scores = g.scale(scores, scale);
        let weights = g.softmax_rows(scores);
        outs.push(g.matmul(weights, vh));
    }
    let o = if heads == 1 { outs[0] } else { g.concat_cols(&outs) };
    let o_txt = g.slice_rows(o, 0, n_txt);
    let o_img = g.slice_rows(o, n_txt, n_img);
    (o_txt, o_img)
}

impl<T: Real> Model<T> {
    pub fn linear(&self, g: &mut Graph<T>, bound: &Bound, l: Linear, x: Var) -> Var {
        let y = g.matmul(x, bound.get(l.w));
        g.add_row(y, bound.get(l.b))
    }

    fn embed_mlp(&self, g: &mut Graph<T>, bound: &Bound, mlp: EmbedMlp, x: Var) -> Var {
        let h = self.linear(g, bound, mlp.fc1, x);
        let h = g.silu(h);
        self.linear(g, bound, mlp.fc2, h)
    }

    /// `t_emb + g_emb`.
    pub fn step_embedding(&self, g: &mut Graph<T>, bound: &Bound, t: T, guidance: T) -> (Var, Var) {
        let d = self.config.d_pool;
        let ts = g.constant(sinusoidal_embedding(t, d));
        let t_emb = self.embed_mlp(g, bound, self.layout.time, ts);
        let gs = g.constant(sinusoidal_embedding(guidance, d));
        let g_emb = self.embed_mlp(g, bound, self.layout.guidance, gs);
        (t_emb, g_emb)
    }

    pub fn stream_modulation(&self, g: &mut Graph<T>, bound: &Bound, sp: &StreamParams, m: Var) -> StreamModulation {
        let h = self.config.hidden;
        let a = g.silu(m);
        let all = self.linear(g, bound, sp.modulation, a);
        let mut chunk = |i: usize| g.slice_cols(all, i * h, h);
        StreamModulation {
            shift_attn: chunk(0),
            scale_attn: chunk(1),
            gate_attn: chunk(2),
            shift_mlp: chunk(3),
            scale_mlp: chunk(4),
            gate_mlp: chunk(5),
        }
    }

    pub fn stream_qkv(&self, g: &mut Graph<T>, bound: &Bound, sp: &StreamParams, x: Var, md: &StreamModulation) -> Qkv {
        let h = self.config.hidden;
        let xm = modulate(g, x, md.shift_attn, md.scale_attn);
        let all = self.linear(g, bound, sp.qkv, xm);
        Qkv { q: g.slice_cols(all, 0, h), k: g.slice_cols(all, h, h), v: g.slice_cols(all, 2 * h, h) }
    }

    /// Joint attention followed by each stream's output projection.
    pub fn attend(
        &self,
        g: &mut Graph<T>,
        bound: &Bound,
        index: usize,
        txt: &Qkv,
        img: &Qkv,
    ) -> JointAttention {
        let (img_p, txt_p) = &self.layout.blocks[index];
        let (o_txt, o_img) = joint_attention(g, self.config.heads, txt, img);
        JointAttention {
            img_out: self.linear(g, bound, img_p.proj, o_img),
            txt_out: self.linear(g, bound, txt_p.proj, o_txt),
        }
    }

    /// Gated attention residual, then the modulated MLP with its gated residual.
    pub fn finish_stream(
        &self,
        g: &mut Graph<T>,
        bound: &Bound,
        sp: &StreamParams,
        x: Var,
        attn_out: Var,
        md: &StreamModulation,
    ) -> Var {
        let gated = g.mul_row(attn_out, md.gate_attn);
        let x = g.add(x, gated);
        let xm = modulate(g, x, md.shift_mlp, md.scale_mlp);
        let hdn = self.linear(g, bound, sp.fc1, xm);
        let hdn = g.silu(hdn);
        let y = self.linear(g, bound, sp.fc2, hdn);
        let gated = g.mul_row(y, md.gate_mlp);
        g.add(x, gated)
    }

    /// Unmodified joint block with separate image and text modulation embeddings.
    pub fn block_forward(
        &self,
        g: &mut Graph<T>,
        bound: &Bound,
        index: usize,
        img: Var,
        txt: Var,
        m_img: Var,
        m_txt: Var,
    ) -> (Var, Var) {
        let (img_p, txt_p) = self.layout.blocks[index];
        let md_img = self.stream_modulation(g, bound, &img_p, m_img);
        let md_txt = self.stream_modulation(g, bound, &txt_p, m_txt);
        let qkv_img = self.stream_qkv(g, bound, &img_p, img, &md_img);
        let qkv_txt = self.stream_qkv(g, bound, &txt_p, txt, &md_txt);
        let att = self.attend(g, bound, index, &qkv_txt, &qkv_img);
        let img = self.finish_stream(g, bound, &img_p, img, att.img_out, &md_img);
        let txt = self.finish_stream(g, bound, &txt_p, txt, att.txt_out, &md_txt);
        (img, txt)
    }

    pub fn embed_image(&self, g: &mut Graph<T>, bound: &Bound, patches: Var) -> Var {
        let x = self.linear(g, bound, self.layout.img_in, patches);
        g.add(x, bound.get(self.layout.img_pos))
    }

    pub fn embed_text(&self, g: &mut Graph<T>, bound: &Bound, ctxt: Var) -> Var {
        self.linear(g, bound, self.layout.txt_in, ctxt)
    }

    /// Final modulated projection of image tokens to patch velocities.
    pub fn velocity_head(&self, g: &mut Graph<T>, bound: &Bound, img: Var, m: Var) -> Var {
        let h = self.config.hidden;
        let a = g.silu(m);
        let md = self.linear(g, bound, self.layout.final_modulation, a);
        let shift = g.slice_cols(md, 0, h);
        let scale = g.slice_cols(md, h, h);
        let x = modulate(g, img, shift, scale);
        self.linear(g, bound, self.layout.final_proj, x)
    }
}

#[allow(clippy::too_many_arguments)]
pub(super) fn forward<T: Real>(
    model: &Model<T>,
    g: &mut Graph<T>,
    bound: &Bound,
    patches: Var,
    cond: CondVars,
    t: T,
    guidance: T,
    mut hooks: Option<&mut dyn BlockHooks<T>>,
) -> Result<Var> {
    let (t_emb, g_emb) = model.step_embedding(g, bound, t, guidance);
    let step_embedding = g.add(t_emb, g_emb);
    let m = g.add(cond.pool, step_embedding);
    let ctx = PassContext { step_embedding, modulation: m, cond };
    let mut img = model.embed_image(g, bound, patches);
    let mut txt = model.embed_text(g, bound, cond.ctxt);
    if let Some(h) = hooks.as_deref_mut() {
        h.begin(g, model, bound, &ctx)?;
    }
    for i in 0..model.block_count() {
        (img, txt) = match hooks.as_deref_mut() {
            Some(h) => h.block(g, model, bound, i, img, txt, &ctx)?,
            None => model.block_forward(g, bound, i, img, txt, m, m),
        };
    }
    Ok(model.velocity_head(g, bound, img, m))
}
