//! Inference-time semantic editing through the joint-attention outputs.
//!
//! Fine edits add the component of the edit-conditioned attention output that is orthogonal to
//! the null-conditioned output, gated per image token by a mask derived from the attention of
//! image queries on the first edit token. Coarse edits move the pooled condition that modulates
//! the text streams along the edit concept's component orthogonal to the base condition.

mod config;
mod ops;
mod session;

pub use config::{EditConfig, Preset};
pub use ops::{attention_mask, coarse_edit, fine_edit, split_heads, AttentionTriple, MaskStages};
pub use session::{
    edited_generate, edited_generate_from, BlockDetail, BlockRecord, EditOutput, EditSession, EditedField,
};
