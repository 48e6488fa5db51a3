//! The DCRN encoder/decoder and the HG-t variant.
//!
//! Both blocks share one layout. Covariate streams are LSTMs whose outputs
//! feed three factor networks (I, C, O). DCRN has a single stream (the joint
//! representation Φ) feeding all three; HG-t has one stream per factor.
//! Two history LSTMs summarise treatments and outcomes, and three heads read
//! the factors: `Â^{IC}` from I⊕C, `Â^C` from C, and the outcome head from
//! C⊕O⊕H_Y⊕H_A⊕A (plus the previous outcome in the decoder).

mod batch;
mod network;

pub use batch::{Batch, CutBatch};
pub use network::{
    decoder_forward, encode, encoder_forward, impulse_response_rollout, DecoderInit, DecoderMode, EncoderRun, FactorBundle,
    Network, RecState, StepOut,
};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{glorot, AutodiffError, Lstm, ParamStore, Tensor};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("invalid input: {0}")]
    Input(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Architecture {
    Dcrn,
    #[serde(rename = "hg-t")]
    HgT,
}

impl Architecture {
    pub fn as_str(self) -> &'static str {
        match self {
            Architecture::Dcrn => "dcrn",
            Architecture::HgT => "hg-t",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub repr_dim: usize,
    pub rnn_hidden: usize,
    pub fc_hidden: usize,
    pub factor_dim: usize,
    pub dropout: f64,
    pub architecture: Architecture,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            repr_dim: 16,
            rnn_hidden: 16,
            fc_hidden: 16,
            factor_dim: 8,
            dropout: 0.1,
            architecture: Architecture::Dcrn,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        for (name, v) in [
            ("repr_dim", self.repr_dim),
            ("rnn_hidden", self.rnn_hidden),
            ("fc_hidden", self.fc_hidden),
            ("factor_dim", self.factor_dim),
        ] {
            if v == 0 {
                return Err(ModelError::Config(format!("{name} must be at least 1")));
            }
        }
        if !(0.0..=0.4).contains(&self.dropout) {
            return Err(ModelError::Config(format!("dropout {} outside [0, 0.4]", self.dropout)));
        }
        Ok(())
    }

    pub fn stream_count(&self) -> usize {
        match self.architecture {
            Architecture::Dcrn => 1,
            Architecture::HgT => 3,
        }
    }

    /// Stream feeding factor `k` (0 = I, 1 = C, 2 = O).
    pub fn stream_for_factor(&self, k: usize) -> usize {
        match self.architecture {
            Architecture::Dcrn => 0,
            Architecture::HgT => k,
        }
    }
}

/// Which block a parameter store belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Block {
    Encoder,
    Decoder,
}

impl Block {
    pub fn tag(self) -> &'static str {
        match self {
            Block::Encoder => "enc",
            Block::Decoder => "dec",
        }
    }
}

pub const FACTORS: [&str; 3] = ["i", "c", "o"];

/// Parameter names and input sizes for one block.
#[derive(Clone, Debug)]
pub struct Layout {
    pub block: Block,
    pub streams: Vec<Lstm>,
    pub rnn_a: Lstm,
    pub rnn_y: Lstm,
    pub head_y_in: usize,
}

impl Layout {
    pub fn new(cfg: &ModelConfig, block: Block, covariate_dim: usize) -> Self {
        let stream_in = match block {
            Block::Encoder => covariate_dim,
            Block::Decoder => cfg.repr_dim,
        };
        let streams = match cfg.architecture {
            Architecture::Dcrn => vec![Lstm::new("rnn_phi", stream_in, cfg.repr_dim)],
            Architecture::HgT => FACTORS
                .iter()
                .map(|f| Lstm::new(format!("rnn_{f}"), stream_in, cfg.repr_dim))
                .collect(),
        };
        let extra = usize::from(block == Block::Decoder);
        Self {
            block,
            streams,
            rnn_a: Lstm::new("rnn_a", 1, cfg.rnn_hidden),
            rnn_y: Lstm::new("rnn_y", 1, cfg.rnn_hidden),
            head_y_in: 2 * cfg.factor_dim + 2 * cfg.rnn_hidden + 1 + extra,
        }
    }
}

/// Freshly initialised parameters for one block.
pub fn init_params(cfg: &ModelConfig, block: Block, covariate_dim: usize, seed: u64) -> Result<ParamStore, ModelError> {
    cfg.validate()?;
    if covariate_dim == 0 {
        return Err(ModelError::Config("covariate dimension must be at least 1".into()));
    }
    let layout = Layout::new(cfg, block, covariate_dim);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new(block.tag());
    for s in &layout.streams {
        s.init(&mut store, &mut rng);
    }
    layout.rnn_a.init(&mut store, &mut rng);
    layout.rnn_y.init(&mut store, &mut rng);
    let mut dense = |store: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize| {
        store.insert(format!("{name}.w"), glorot(fan_in, fan_out, &mut rng));
        store.insert(format!("{name}.b"), Tensor::zeros(&[1, fan_out]));
    };
    for f in FACTORS {
        dense(&mut store, &format!("net_{f}.l1"), cfg.repr_dim, cfg.fc_hidden);
        dense(&mut store, &format!("net_{f}.l2"), cfg.fc_hidden, cfg.factor_dim);
    }
    dense(&mut store, "head_ic", 2 * cfg.factor_dim, 1);
    dense(&mut store, "head_c", cfg.factor_dim, 1);
    dense(&mut store, "head_y.l1", layout.head_y_in, cfg.fc_hidden);
    dense(&mut store, "head_y.l2", cfg.fc_hidden, 1);
    Ok(store)
}
