//! Two-block training: the encoder first, then the decoder on top of the
//! frozen encoder, each with Adam, gradient clipping and early stopping on
//! unweighted validation MSE.

mod blocks;
mod search;

pub use blocks::{encoder_validation_mse, train_decoder, train_encoder, DecoderData};
pub use search::{random_search, SearchRanges, SearchResult, Trial};

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{AutodiffError, Checkpoint, ParamStore};
use crate::losses::{Bandwidth, LossError, LossValues, LossWeights, ObjectiveConfig};
use crate::model::{ModelConfig, ModelError};
use crate::sim::{Dataset, Normalization};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error("{block} training diverged at epoch {epoch}, batch {batch}: {detail}")]
    Diverged {
        block: &'static str,
        epoch: usize,
        batch: usize,
        detail: String,
    },
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("dataset has no {0} trajectories")]
    MissingSplit(&'static str),
    #[error("encoder received a gradient of norm {0} during decoder training")]
    EncoderGradient(f64),
    #[error("all {0} search trials failed; first error: {1}")]
    SearchFailed(usize, String),
    #[error("io: {0}")]
    Io(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    /// Patients per encoder minibatch.
    pub batch_size: usize,
    pub decoder_learning_rate: f64,
    /// Cut points per decoder minibatch.
    pub decoder_batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    /// Decoder horizon.
    pub tau: usize,
    pub weights: LossWeights,
    /// `false` trains the ω = 1 ablation.
    pub use_omega: bool,
    /// Fixed MMD bandwidth; the median heuristic when absent.
    pub mmd_bandwidth: Option<f64>,
    pub clip_norm: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 128,
            decoder_learning_rate: 1e-3,
            decoder_batch_size: 256,
            max_epochs: 100,
            patience: 5,
            tau: 5,
            weights: LossWeights::default(),
            use_omega: true,
            mmd_bandwidth: None,
            clip_norm: 10.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::Config(m));
        for (name, lr) in [("learning_rate", self.learning_rate), ("decoder_learning_rate", self.decoder_learning_rate)] {
            if !(1e-4..=1e-2).contains(&lr) {
                return bad(format!("{name} {lr} outside [1e-4, 1e-2]"));
            }
        }
        for (name, b) in [("batch_size", self.batch_size), ("decoder_batch_size", self.decoder_batch_size)] {
            if !(16..=512).contains(&b) {
                return bad(format!("{name} {b} outside [16, 512]"));
            }
        }
        if self.max_epochs == 0 {
            return bad("max_epochs must be at least 1".into());
        }
        if self.tau == 0 {
            return bad("tau must be at least 1".into());
        }
        if !(self.clip_norm > 0.0) {
            return bad(format!("clip_norm must be positive, got {}", self.clip_norm));
        }
        if let Some(s) = self.mmd_bandwidth {
            if !(s > 0.0 && s.is_finite()) {
                return bad(format!("mmd_bandwidth must be positive, got {s}"));
            }
        }
        self.weights.validate()?;
        Ok(())
    }

    pub fn objective(&self, p_hat: f64) -> ObjectiveConfig {
        ObjectiveConfig {
            weights: self.weights,
            use_omega: self.use_omega,
            p_hat,
            bandwidth: self.mmd_bandwidth.map_or(Bandwidth::Median, Bandwidth::Fixed),
        }
    }
}

/// Mean training losses of one epoch and the validation criterion.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train: LossValues,
    pub val_mse: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub block: String,
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_mse: f64,
    pub wall_clock_secs: f64,
    /// Decoder block only: norm of the objective's gradient with respect to
    /// the frozen encoder, one entry per minibatch step.
    #[serde(default)]
    pub frozen_grad_norms: Vec<f64>,
}

impl TrainReport {
    pub const CSV_HEADER: [&'static str; 8] = ["epoch", "l_y", "l_d", "l_c", "l_o", "l2", "total", "val_mse"];

    pub fn write_csv(&self, out: impl Write) -> Result<(), TrainError> {
        let mut w = csv::Writer::from_writer(out);
        let io = |e: csv::Error| TrainError::Io(e.to_string());
        w.write_record(Self::CSV_HEADER).map_err(io)?;
        for e in &self.epochs {
            let t = e.train;
            let mut row = vec![e.epoch.to_string()];
            row.extend([t.l_y, t.l_d, t.l_c, t.l_o, t.l2, t.total, e.val_mse].map(|v| v.to_string()));
            w.write_record(&row).map_err(io)?;
        }
        w.flush().map_err(|e| TrainError::Io(e.to_string()))?;
        Ok(())
    }

    /// Parses the epoch rows back (the wall clock is not part of the CSV).
    pub fn read_csv(input: impl std::io::Read) -> Result<Vec<EpochRecord>, TrainError> {
        let mut r = csv::Reader::from_reader(input);
        let mut out = Vec::new();
        for row in r.records() {
            let row = row.map_err(|e| TrainError::Io(e.to_string()))?;
            let f = |i: usize| -> Result<f64, TrainError> {
                row[i].parse().map_err(|_| TrainError::Io(format!("bad number {:?}", &row[i])))
            };
            out.push(EpochRecord {
                epoch: row[0].parse().map_err(|_| TrainError::Io(format!("bad epoch {:?}", &row[0])))?,
                train: LossValues {
                    l_y: f(1)?,
                    l_d: f(2)?,
                    l_c: f(3)?,
                    l_o: f(4)?,
                    l2: f(5)?,
                    total: f(6)?,
                },
                val_mse: f(7)?,
            });
        }
        Ok(out)
    }
}

/// Everything needed to forecast: both blocks plus data statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainedModel {
    pub config: ModelConfig,
    pub encoder: ParamStore,
    pub decoder: ParamStore,
    pub normalization: Normalization,
    pub p_hat: f64,
    pub tau: usize,
}

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    model: ModelConfig,
    normalization: Normalization,
    p_hat: f64,
    tau: usize,
}

impl TrainedModel {
    pub fn to_checkpoint(&self) -> Checkpoint {
        let header = CheckpointHeader {
            model: self.config.clone(),
            normalization: self.normalization.clone(),
            p_hat: self.p_hat,
            tau: self.tau,
        };
        let header = serde_json::to_value(header).expect("header serializes");
        Checkpoint::from_stores(header, &[&self.encoder, &self.decoder])
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self, TrainError> {
        let h: CheckpointHeader = serde_json::from_value(ck.header.clone())
            .map_err(|e| TrainError::Io(format!("checkpoint header: {e}")))?;
        let dim = h.normalization.covariate_mean.len();
        let mut encoder = crate::model::init_params(&h.model, crate::model::Block::Encoder, dim, 0)?;
        let mut decoder = crate::model::init_params(&h.model, crate::model::Block::Decoder, dim, 0)?;
        ck.load_into(&mut encoder)?;
        ck.load_into(&mut decoder)?;
        Ok(Self {
            config: h.model,
            encoder,
            decoder,
            normalization: h.normalization,
            p_hat: h.p_hat,
            tau: h.tau,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), TrainError> {
        Ok(self.to_checkpoint().save(path)?)
    }

    pub fn load(path: &Path) -> Result<Self, TrainError> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}

/// Both blocks in sequence.
pub fn train_model(
    dataset: &Dataset,
    model: &ModelConfig,
    config: &TrainConfig,
) -> Result<(TrainedModel, TrainReport, TrainReport), TrainError> {
    let (encoder, enc_report) = train_encoder(dataset, model, config)?;
    let (decoder, dec_report) = train_decoder(dataset, model, &encoder, config)?;
    Ok((
        TrainedModel {
            config: model.clone(),
            encoder,
            decoder,
            normalization: dataset.meta.normalization.clone(),
            p_hat: dataset.meta.treated_fraction,
            tau: config.tau,
        },
        enc_report,
        dec_report,
    ))
}
