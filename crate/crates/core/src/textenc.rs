//! Toy keyword text encoder: a vocabulary, a learned token table and a learned pooling map.
//!
//! `c_ctxt` is the stack of token embeddings; `c_pool` is the pooling map applied to their mean.
//! The empty prompt is the single reserved `NULL` token.

use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::numcore::{Graph, Real, Tensor, Var};

pub const NULL_ID: usize = 0;
pub const UNK_ID: usize = 1;
const RESERVED: usize = 2;

/// Word list with two reserved ids in front (`NULL`, `UNK`).
#[derive(Clone, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Vocabulary {
    words: Vec<String>,
}

impl Vocabulary {
    pub fn new<S: AsRef<str>>(words: &[S]) -> Self {
        let mut out: Vec<String> = Vec::new();
        for w in words {
            let w = w.as_ref().to_lowercase();
            if !w.is_empty() && !out.contains(&w) {
                out.push(w);
            }
        }
        Self { words: out }
    }

    /// Colors and shapes of the synthetic corpus.
    pub fn shapes() -> Self {
        Self::new(&["red", "green", "blue", "circle", "square"])
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    /// Total ids including the reserved ones.
    pub fn len(&self) -> usize {
        self.words.len() + RESERVED
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn id(&self, word: &str) -> usize {
        self.words.iter().position(|w| w == word).map_or(UNK_ID, |i| i + RESERVED)
    }

    /// Lowercases and splits on whitespace. Never returns an empty list.
    pub fn tokenize(&self, prompt: &str) -> Vec<usize> {
        let lower = prompt.to_lowercase();
        let ids: Vec<usize> = lower.split_whitespace().map(|w| self.id(w)).collect();
        if ids.is_empty() {
            alloc::vec![NULL_ID]
        } else {
            ids
        }
    }

    pub fn word(&self, id: usize) -> String {
        match id {
            NULL_ID => "<null>".to_string(),
            UNK_ID => "<unk>".to_string(),
            _ => self.words[id - RESERVED].clone(),
        }
    }
}

/// Pooled and token-wise conditioning for one prompt.
#[derive(Clone, Debug, PartialEq)]
pub struct PromptEmbedding<T: Real = f32> {
    /// `[1, d_pool]`
    pub pool: Tensor<T>,
    /// `[n_tokens, d_ctxt]`
    pub ctxt: Tensor<T>,
    pub token_ids: Vec<usize>,
}

/// Parameters of the encoder: token table `[vocab, d_ctxt]` and pooling map `[d_ctxt, d_pool]`.
#[derive(Clone, Copy, Debug)]
pub struct EncoderVars {
    pub table: Var,
    pub pool: Var,
}

/// Encodes token ids on a graph so that gradients reach the encoder tables.
pub fn encode_ids<T: Real>(g: &mut Graph<T>, vars: EncoderVars, ids: &[usize]) -> (Var, Var) {
    let ctxt = g.gather(vars.table, ids);
    let mean = g.mean_rows(ctxt);
    let pool = g.matmul(mean, vars.pool);
    (pool, ctxt)
}

/// Plain evaluation of [`encode_ids`] on tensors.
pub fn encode<T: Real>(
    prompt: &str,
    vocab: &Vocabulary,
    table: &Tensor<T>,
    pooling: &Tensor<T>,
) -> PromptEmbedding<T> {
    let ids = vocab.tokenize(prompt);
    let mut g = Graph::new();
    let vars = EncoderVars { table: g.constant(table.clone()), pool: g.constant(pooling.clone()) };
    let (pool, ctxt) = encode_ids(&mut g, vars, &ids);
    PromptEmbedding { pool: g.value(pool).clone(), ctxt: g.value(ctxt).clone(), token_ids: ids }
}

pub fn null_condition<T: Real>(
    vocab: &Vocabulary,
    table: &Tensor<T>,
    pooling: &Tensor<T>,
) -> PromptEmbedding<T> {
    encode("", vocab, table, pooling)
}
