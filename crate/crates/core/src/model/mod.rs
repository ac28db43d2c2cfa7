//! Configurable 3D residual network with two input channels and a stride-1,
//! kernel-3 stem.

pub mod checkpoint;
pub mod layers;
mod network;
pub mod tensor;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use layers::{Mode, NormKind};
pub use network::{parameter_shapes, ForwardCache, Gradients, Model, NamedTensor};
pub use tensor::{Matrix, Real, TensorBatch};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BlockKind {
    /// Two 3×3×3 convolutions.
    Basic,
    /// 1×1×1 reduce, 3×3×3, 1×1×1 expand (×4).
    Bottleneck,
}

impl BlockKind {
    pub fn expansion(self) -> usize {
        match self {
            BlockKind::Basic => 1,
            BlockKind::Bottleneck => 4,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub block_kind: BlockKind,
    pub blocks_per_stage: [usize; 4],
    pub base_width: usize,
    /// 1 (binary logit), 4 (four suspicion classes) or 5 (with Indeterminate).
    pub num_outputs: usize,
    #[serde(default = "default_input_channels")]
    pub input_channels: usize,
    #[serde(default = "default_norm")]
    pub norm: NormKind,
    /// Keep the classic 3×3×3 stride-2 max-pool after the stem.
    #[serde(default)]
    pub stem_pool: bool,
}

fn default_input_channels() -> usize {
    2
}

fn default_norm() -> NormKind {
    NormKind::Batch
}

impl ModelConfig {
    /// Bottleneck blocks `[3, 4, 6, 3]`, width 64.
    pub fn resnet50(num_outputs: usize) -> Self {
        Self {
            block_kind: BlockKind::Bottleneck,
            blocks_per_stage: [3, 4, 6, 3],
            base_width: 64,
            num_outputs,
            input_channels: 2,
            norm: NormKind::Batch,
            stem_pool: false,
        }
    }

    /// Smallest legal layout: one basic block per stage, width 8.
    pub fn tiny(num_outputs: usize) -> Self {
        Self {
            block_kind: BlockKind::Basic,
            blocks_per_stage: [1, 1, 1, 1],
            base_width: 8,
            num_outputs,
            input_channels: 2,
            norm: NormKind::Batch,
            stem_pool: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.blocks_per_stage.contains(&0) {
            return Err(Error::InvalidConfig("every stage needs at least one block".into()));
        }
        if self.base_width == 0 || self.input_channels == 0 {
            return Err(Error::InvalidConfig("widths must be positive".into()));
        }
        if ![1, 4, 5].contains(&self.num_outputs) {
            return Err(Error::InvalidConfig(format!("num_outputs must be 1, 4 or 5, got {}", self.num_outputs)));
        }
        Ok(())
    }

    /// Channels entering the classifier head.
    pub fn feature_dim(&self) -> usize {
        self.base_width * 8 * self.block_kind.expansion()
    }

    /// Spatial size after the backbone for a given input size.
    pub fn output_dims(&self, dims: [usize; 3]) -> [usize; 3] {
        let down = |n: usize| (n - 1) / 2 + 1;
        let mut d = dims;
        if self.stem_pool {
            d = d.map(down);
        }
        for _ in 0..3 {
            d = d.map(down);
        }
        d
    }
}
