use alloc::vec::Vec;

use super::ops::{attention_mask, coarse_edit, fine_edit, split_heads, AttentionTriple};
use super::EditConfig;
use crate::flow::{euler_sample, initial_noise, Schedule, VelocityField};
use crate::mmdit::{BlockHooks, Bound, CondVars, Model, PassContext};
use crate::numcore::{Graph, Real, Tensor, Var};
use crate::textenc::PromptEmbedding;
use crate::Result;

/// What one edited block did at one step.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockRecord<T: Real = f32> {
    pub step: usize,
    pub block: usize,
    /// Binary mask over image tokens, when masking is on.
    pub mask: Option<Vec<u8>>,
    /// Full tensors, kept only for instrumented sessions.
    pub detail: Option<BlockDetail<T>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BlockDetail<T: Real> {
    pub triple: AttentionTriple<T>,
    /// Image attention output actually carried forward.
    pub edited: Tensor<T>,
    /// Modulation embedding fed to the image stream.
    pub m_img: Tensor<T>,
    /// Modulation embedding fed to the text streams.
    pub m_txt: Tensor<T>,
}

#[derive(Clone, Copy, Debug)]
struct PassState {
    m_img: Var,
    m_txt: Var,
    edit_txt: Var,
    null_txt: Var,
}

/// Editing state for one generation call.
///
/// Three text streams (base, edit, null) run through every block next to one shared image
/// stream. Each text stream is updated by its own attention output; the image stream carries
/// the edited attention output of targeted blocks.
#[derive(Debug)]
pub struct EditSession<T: Real = f32> {
    config: EditConfig,
    base: PromptEmbedding<T>,
    edit: PromptEmbedding<T>,
    null: PromptEmbedding<T>,
    coarse_pool: Tensor<T>,
    instrument: bool,
    step: usize,
    pass: Option<PassState>,
    text_updates: usize,
    records: Vec<BlockRecord<T>>,
}

impl<T: Real> EditSession<T> {
    pub fn new(model: &Model<T>, base_prompt: &str, config: EditConfig) -> Result<Self> {
        config.validate(model.block_count())?;
        let base = model.encode(base_prompt);
        let edit = model.encode(&config.edit_prompt);
        let null = model.null_condition();
        let coarse = coarse_edit(base.pool.data(), edit.pool.data(), T::lit(config.lambda_coarse));
        Ok(Self {
            coarse_pool: Tensor::row(coarse),
            base,
            edit,
            null,
            config,
            instrument: false,
            step: 0,
            pass: None,
            text_updates: 0,
            records: Vec::new(),
        })
    }

    /// Keep full per-block tensors in the records.
    pub fn instrumented(mut self) -> Self {
        self.instrument = true;
        self
    }

    pub fn config(&self) -> &EditConfig {
        &self.config
    }

    pub fn base(&self) -> &PromptEmbedding<T> {
        &self.base
    }

    /// Pooled condition fed to the text streams.
    pub fn coarse_pool(&self) -> &Tensor<T> {
        &self.coarse_pool
    }

    pub fn records(&self) -> &[BlockRecord<T>] {
        &self.records
    }

    pub fn into_records(self) -> Vec<BlockRecord<T>> {
        self.records
    }

    /// Text-stream block updates so far, summed over the three streams.
    pub fn text_updates(&self) -> usize {
        self.text_updates
    }

    pub fn set_step(&mut self, step: usize) {
        self.step = step;
    }

    pub fn active_at(&self, step: usize) -> bool {
        step >= self.config.start_step
    }
}

impl<T: Real> BlockHooks<T> for EditSession<T> {
    fn begin(&mut self, g: &mut Graph<T>, model: &Model<T>, bound: &Bound, ctx: &PassContext) -> Result<()> {
        let m_txt = if self.config.lambda_coarse == 0.0 {
            ctx.modulation
        } else {
            let c = g.constant(self.coarse_pool.clone());
            g.add(c, ctx.step_embedding)
        };
        let edit: CondVars = model.cond_constants(g, &self.edit);
        let null: CondVars = model.cond_constants(g, &self.null);
        self.pass = Some(PassState {
            m_img: ctx.modulation,
            m_txt,
            edit_txt: model.embed_text(g, bound, edit.ctxt),
            null_txt: model.embed_text(g, bound, null.ctxt),
        });
        Ok(())
    }

    fn block(
        &mut self,
        g: &mut Graph<T>,
        model: &Model<T>,
        bound: &Bound,
        index: usize,
        img: Var,
        txt: Var,
        _ctx: &PassContext,
    ) -> Result<(Var, Var)> {
        let pass = self.pass.as_mut().expect("begin runs before block");
        let (img_p, txt_p) = *model.block_params(index);
        let md_img = model.stream_modulation(g, bound, &img_p, pass.m_img);
        let md_txt = model.stream_modulation(g, bound, &txt_p, pass.m_txt);
        let qkv_img = model.stream_qkv(g, bound, &img_p, img, &md_img);

        let streams = [txt, pass.edit_txt, pass.null_txt];
        let mut qkv_txt = Vec::with_capacity(3);
        let mut att = Vec::with_capacity(3);
        for &s in &streams {
            let q = model.stream_qkv(g, bound, &txt_p, s, &md_txt);
            att.push(model.attend(g, bound, index, &q, &qkv_img));
            qkv_txt.push(q);
        }

        let img_attn = if self.config.targets(index) {
            let triple = AttentionTriple {
                base: g.value(att[0].img_out).clone(),
                edit: g.value(att[1].img_out).clone(),
                prior: g.value(att[2].img_out).clone(),
            };
            let mask = self.config.masking.then(|| {
                let heads = model.config().heads;
                let keys = g.concat_rows(&[qkv_txt[1].k, qkv_img.k]);
                let q = split_heads(g.value(qkv_img.q), heads);
                let k = split_heads(g.value(keys), heads);
                attention_mask(&q, &k, T::lit(self.config.boundary), T::lit(self.config.tau_m)).binary
            });
            let edited = fine_edit(&triple, T::lit(self.config.lambda_fine), mask.as_deref());
            let detail = self.instrument.then(|| BlockDetail {
                triple,
                edited: edited.clone(),
                m_img: g.value(pass.m_img).clone(),
                m_txt: g.value(pass.m_txt).clone(),
            });
            self.records.push(BlockRecord { step: self.step, block: index, mask, detail });
            g.constant(edited)
        } else {
            att[0].img_out
        };

        let img = model.finish_stream(g, bound, &img_p, img, img_attn, &md_img);
        let txt = model.finish_stream(g, bound, &txt_p, txt, att[0].txt_out, &md_txt);
        pass.edit_txt = model.finish_stream(g, bound, &txt_p, pass.edit_txt, att[1].txt_out, &md_txt);
        pass.null_txt = model.finish_stream(g, bound, &txt_p, pass.null_txt, att[2].txt_out, &md_txt);
        self.text_updates += 3;
        Ok((img, txt))
    }
}

/// The model under the base prompt, with the session's hooks from `start_step` on.
pub struct EditedField<'a, T: Real> {
    pub model: &'a Model<T>,
    pub session: &'a mut EditSession<T>,
    pub guidance: T,
}

impl<T: Real> VelocityField<T> for EditedField<'_, T> {
    fn velocity(&mut self, x: &Tensor<T>, t: T, step: usize) -> Result<Tensor<T>> {
        let base = self.session.base.clone();
        if self.session.active_at(step) {
            self.session.set_step(step);
            self.model.predict_velocity(x, &base, t, self.guidance, Some(&mut *self.session))
        } else {
            self.model.predict_velocity(x, &base, t, self.guidance, None)
        }
    }
}

/// Result of an edited generation.
#[derive(Clone, Debug)]
pub struct EditOutput<T: Real = f32> {
    /// Model-space image `[H, W, C]`.
    pub image: Tensor<T>,
    pub records: Vec<BlockRecord<T>>,
}

/// Samples from seeded noise under `base_prompt` with the edit applied.
pub fn edited_generate<T: Real>(
    model: &Model<T>,
    base_prompt: &str,
    config: EditConfig,
    schedule: &Schedule,
    seed: u64,
    instrument: bool,
) -> Result<EditOutput<T>> {
    let noise = initial_noise(model, seed);
    edited_generate_from(model, base_prompt, config, schedule, &noise, instrument)
}

/// As [`edited_generate`], starting from a given noise tensor.
pub fn edited_generate_from<T: Real>(
    model: &Model<T>,
    base_prompt: &str,
    config: EditConfig,
    schedule: &Schedule,
    noise: &Tensor<T>,
    instrument: bool,
) -> Result<EditOutput<T>> {
    let mut session = EditSession::new(model, base_prompt, config)?;
    if instrument {
        session = session.instrumented();
    }
    let mut field = EditedField { model, session: &mut session, guidance: T::one() };
    let image = euler_sample(&mut field, noise, schedule)?;
    Ok(EditOutput { image, records: session.into_records() })
}
