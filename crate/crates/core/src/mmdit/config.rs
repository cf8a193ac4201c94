use alloc::format;

use crate::textenc::Vocabulary;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ModelConfig {
    /// Square image side in pixels.
    pub image_size: usize,
    pub channels: usize,
    pub patch_size: usize,
    pub hidden: usize,
    pub heads: usize,
    pub blocks: usize,
    /// MLP width as a multiple of `hidden`.
    pub mlp_ratio: usize,
    pub d_pool: usize,
    pub d_ctxt: usize,
    pub vocabulary: Vocabulary,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            image_size: 16,
            channels: 3,
            patch_size: 2,
            hidden: 64,
            heads: 4,
            blocks: 2,
            mlp_ratio: 2,
            d_pool: 32,
            d_ctxt: 32,
            vocabulary: Vocabulary::shapes(),
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("image_size", self.image_size),
            ("channels", self.channels),
            ("patch_size", self.patch_size),
            ("hidden", self.hidden),
            ("heads", self.heads),
            ("blocks", self.blocks),
            ("mlp_ratio", self.mlp_ratio),
            ("d_pool", self.d_pool),
            ("d_ctxt", self.d_ctxt),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::InvalidConfig(format!("{name} must be positive")));
            }
        }
        if self.image_size % self.patch_size != 0 {
            return Err(Error::InvalidConfig(format!(
                "image_size {} is not divisible by patch_size {}",
                self.image_size, self.patch_size
            )));
        }
        if self.hidden % self.heads != 0 {
            return Err(Error::InvalidConfig(format!(
                "hidden {} is not divisible by heads {}",
                self.hidden, self.heads
            )));
        }
        if self.d_pool % 2 != 0 {
            return Err(Error::InvalidConfig(format!("d_pool {} must be even", self.d_pool)));
        }
        Ok(())
    }

    pub fn grid(&self) -> usize {
        self.image_size / self.patch_size
    }

    pub fn image_tokens(&self) -> usize {
        self.grid() * self.grid()
    }

    pub fn patch_dim(&self) -> usize {
        self.patch_size * self.patch_size * self.channels
    }

    pub fn head_dim(&self) -> usize {
        self.hidden / self.heads
    }

    pub fn image_shape(&self) -> [usize; 3] {
        [self.image_size, self.image_size, self.channels]
    }
}
