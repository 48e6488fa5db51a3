use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{AdamConfig, AdamState, AutodiffError, Graph, ParamStore, Tensor};
use crate::losses::{decoder_objective, encoder_objective, LossValues, ObjectiveConfig};
use crate::model::{
    decoder_forward, encoder_forward, init_params, Batch, Block, CutBatch, DecoderInit, DecoderMode, ModelConfig,
    Network,
};
use crate::sim::{stream_rng, Dataset, Normalization, Split, Trajectory};

use super::{EpochRecord, TrainConfig, TrainError, TrainReport};

const STREAM_INIT: u64 = 10;
const STREAM_SHUFFLE: u64 = 11;
const STREAM_DROPOUT: u64 = 12;

/// Patients encoded per graph when only values are needed.
const EVAL_CHUNK: usize = 256;

fn split_refs(dataset: &Dataset, split: Split) -> Result<Vec<&Trajectory>, TrainError> {
    let v: Vec<&Trajectory> = dataset.split(split).collect();
    if v.is_empty() {
        return Err(TrainError::MissingSplit(split.as_str()));
    }
    Ok(v)
}

fn block_index(block: Block) -> u64 {
    match block {
        Block::Encoder => 0,
        Block::Decoder => 1,
    }
}

/// Block-specific initial parameters, derived from the run seed.
fn fresh_params(model: &ModelConfig, block: Block, dim: usize, seed: u64) -> Result<ParamStore, TrainError> {
    let init_seed = stream_rng(seed, STREAM_INIT, block_index(block)).random::<u64>();
    Ok(init_params(model, block, dim, init_seed)?)
}

/// Epoch loop shared by both blocks. `step` runs one minibatch and returns
/// its loss values; `validate` scores the current parameters.
fn fit(
    block: Block,
    store: &mut ParamStore,
    config: &TrainConfig,
    learning_rate: f64,
    n_items: usize,
    batch_size: usize,
    mut step: impl FnMut(&mut Graph, &ParamStore, &[usize]) -> Result<(LossValues, crate::autodiff::GradStore), TrainError>,
    mut validate: impl FnMut(&ParamStore) -> Result<f64, TrainError>,
) -> Result<TrainReport, TrainError> {
    let name = match block {
        Block::Encoder => "encoder",
        Block::Decoder => "decoder",
    };
    let started = Instant::now();
    let mut adam = AdamState::new(
        store,
        AdamConfig {
            learning_rate,
            ..AdamConfig::default()
        },
    );
    let mut shuffle_rng = stream_rng(config.seed, STREAM_SHUFFLE, block_index(block));
    let mut dropout_rng: ChaCha8Rng = stream_rng(config.seed, STREAM_DROPOUT, block_index(block));
    let mut order: Vec<usize> = (0..n_items).collect();
    let mut epochs = Vec::new();
    let mut best: Option<(usize, f64, ParamStore)> = None;
    let mut since_best = 0;
    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut shuffle_rng);
        let mut sum = LossValues::default();
        let mut batches = 0usize;
        for (b, idx) in order.chunks(batch_size).enumerate() {
            let mut g = Graph::training(dropout_rng);
            let diverged = |detail: String| TrainError::Diverged {
                block: name,
                epoch,
                batch: b,
                detail,
            };
            let (values, mut grads) = step(&mut g, store, idx).map_err(|e| match e {
                TrainError::Loss(l) => diverged(l.to_string()),
                other => other,
            })?;
            dropout_rng = g.into_rng().expect("training graph");
            if !values.total.is_finite() {
                return Err(diverged(format!("loss {}", values.total)));
            }
            grads.clip_global_norm(config.clip_norm);
            adam.step(store, &grads).map_err(|e| match e {
                AutodiffError::NonFiniteGradient(p) => diverged(format!("non-finite gradient for {p}")),
                other => TrainError::Autodiff(other),
            })?;
            for (acc, v) in [
                (&mut sum.l_y, values.l_y),
                (&mut sum.l_d, values.l_d),
                (&mut sum.l_c, values.l_c),
                (&mut sum.l_o, values.l_o),
                (&mut sum.l2, values.l2),
                (&mut sum.total, values.total),
            ] {
                *acc += v;
            }
            batches += 1;
        }
        let k = batches.max(1) as f64;
        let train = LossValues {
            l_y: sum.l_y / k,
            l_d: sum.l_d / k,
            l_c: sum.l_c / k,
            l_o: sum.l_o / k,
            l2: sum.l2 / k,
            total: sum.total / k,
        };
        let val_mse = validate(store)?;
        if !val_mse.is_finite() {
            return Err(TrainError::Diverged {
                block: name,
                epoch,
                batch: batches,
                detail: format!("validation mse {val_mse}"),
            });
        }
        epochs.push(EpochRecord { epoch, train, val_mse });
        if best.as_ref().is_none_or(|(_, v, _)| val_mse < *v) {
            best = Some((epoch, val_mse, store.clone()));
            since_best = 0;
        } else {
            since_best += 1;
            if since_best > config.patience {
                break;
            }
        }
    }
    let (best_epoch, best_val_mse, params) = best.expect("at least one epoch");
    *store = params;
    Ok(TrainReport {
        block: name.into(),
        epochs,
        best_epoch,
        best_val_mse,
        wall_clock_secs: started.elapsed().as_secs_f64(),
        frozen_grad_norms: Vec::new(),
    })
}

/// Block 1: the encoder on one-step-ahead factual targets.
pub fn train_encoder(
    dataset: &Dataset,
    model: &ModelConfig,
    config: &TrainConfig,
) -> Result<(ParamStore, TrainReport), TrainError> {
    config.validate()?;
    model.validate()?;
    let train = split_refs(dataset, Split::Train)?;
    let val = split_refs(dataset, Split::Val)?;
    let norm = &dataset.meta.normalization;
    let objective = config.objective(dataset.meta.treated_fraction);
    let mut store = fresh_params(model, Block::Encoder, dataset.covariate_dim(), config.seed)?;
    let report = fit(
        Block::Encoder,
        &mut store,
        config,
        config.learning_rate,
        train.len(),
        config.batch_size,
        |g, store, idx| encoder_step(g, store, model, &objective, &train, idx, norm),
        |store| encoder_validation_mse(store, model, &val, norm),
    )?;
    Ok((store, report))
}

fn encoder_step(
    g: &mut Graph,
    store: &ParamStore,
    model: &ModelConfig,
    objective: &ObjectiveConfig,
    train: &[&Trajectory],
    idx: &[usize],
    norm: &Normalization,
) -> Result<(LossValues, crate::autodiff::GradStore), TrainError> {
    let picked: Vec<&Trajectory> = idx.iter().map(|&i| train[i]).collect();
    let batch = Batch::new(&picked, norm)?;
    let net = Network::bind(g, model, store)?;
    let run = encoder_forward(g, &net, &batch)?;
    let obj = encoder_objective(g, &net, store, &run, &batch, objective, None)?;
    let grads = g.backward(obj.total)?.for_store(store);
    Ok((obj.values, grads))
}

/// Unweighted one-step-ahead MSE (normalised units) over every target.
pub fn encoder_validation_mse(
    store: &ParamStore,
    model: &ModelConfig,
    trajectories: &[&Trajectory],
    norm: &Normalization,
) -> Result<f64, TrainError> {
    let (mut se, mut n) = (0.0, 0usize);
    for chunk in trajectories.chunks(EVAL_CHUNK) {
        let batch = Batch::new(chunk, norm)?;
        let mut g = Graph::new();
        let net = Network::bind(&mut g, model, store)?;
        let run = encoder_forward(&mut g, &net, &batch)?;
        for t in 0..batch.steps() - 1 {
            let pred = g.value(run.steps[t].y_hat);
            for r in 0..batch.rows() {
                if batch.lengths[r] > t + 1 {
                    se += (pred.get(r, 0) - batch.outcomes[t + 1].get(r, 0)).powi(2);
                    n += 1;
                }
            }
        }
    }
    if n == 0 {
        return Err(TrainError::Config("validation split has no next-step targets".into()));
    }
    Ok(se / n as f64)
}

/// Decoder inputs for every cut of a set of trajectories, computed once
/// from the frozen encoder.
#[derive(Clone, Debug)]
pub struct DecoderData {
    pub init: DecoderInit,
    pub treatments: Vec<Tensor>,
    pub targets: Vec<Tensor>,
}

impl DecoderData {
    pub fn build(
        encoder: &ParamStore,
        model: &ModelConfig,
        trajectories: &[&Trajectory],
        norm: &Normalization,
        tau: usize,
    ) -> Result<Self, TrainError> {
        let mut inits = Vec::new();
        let mut cut_batches = Vec::new();
        for chunk in trajectories.chunks(EVAL_CHUNK) {
            let batch = Batch::new(chunk, norm)?;
            let cuts = CutBatch::training(&batch, tau);
            if cuts.is_empty() {
                continue;
            }
            let mut g = Graph::new();
            let net = Network::bind(&mut g, model, encoder)?;
            let run = encoder_forward(&mut g, &net, &batch)?;
            inits.push(DecoderInit::from_run(&g, &run, &cuts.cuts, cuts.last_outcome.clone()));
            cut_batches.push(cuts);
        }
        if inits.is_empty() {
            return Err(TrainError::Config(format!(
                "no trajectory is long enough for a {tau}-step decoder cut (needs length >= {})",
                tau + 2
            )));
        }
        let stack = |f: &dyn Fn(usize) -> Tensor| -> Result<Tensor, TrainError> {
            let parts: Vec<Tensor> = (0..inits.len()).map(f).collect();
            Ok(Tensor::concat_rows(&parts)?)
        };
        let streams = inits[0].phi.len();
        let init = DecoderInit {
            phi: (0..streams)
                .map(|k| stack(&|i| inits[i].phi[k].clone()))
                .collect::<Result<_, _>>()?,
            a: (stack(&|i| inits[i].a.0.clone())?, stack(&|i| inits[i].a.1.clone())?),
            y: (stack(&|i| inits[i].y.0.clone())?, stack(&|i| inits[i].y.1.clone())?),
            last_outcome: stack(&|i| inits[i].last_outcome.clone())?,
        };
        let treatments = (0..tau)
            .map(|u| stack(&|i| cut_batches[i].treatments[u].clone()))
            .collect::<Result<_, _>>()?;
        let targets = (0..tau)
            .map(|u| stack(&|i| cut_batches[i].targets[u].clone()))
            .collect::<Result<_, _>>()?;
        Ok(Self {
            init,
            treatments,
            targets,
        })
    }

    pub fn len(&self) -> usize {
        self.init.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn select(&self, rows: &[usize]) -> (DecoderInit, CutBatch) {
        let sel = |t: &Tensor| t.select_rows(rows);
        let init = DecoderInit {
            phi: self.init.phi.iter().map(sel).collect(),
            a: (sel(&self.init.a.0), sel(&self.init.a.1)),
            y: (sel(&self.init.y.0), sel(&self.init.y.1)),
            last_outcome: sel(&self.init.last_outcome),
        };
        let cuts = CutBatch {
            cuts: rows.iter().map(|&r| (r, 0)).collect(),
            treatments: self.treatments.iter().map(sel).collect(),
            targets: self.targets.iter().map(sel).collect(),
            last_outcome: init.last_outcome.clone(),
        };
        (init, cuts)
    }

    /// Autoregressive MSE over all `tau` steps (normalised units).
    pub fn autoregressive_mse(&self, decoder: &ParamStore, model: &ModelConfig) -> Result<f64, TrainError> {
        let (mut se, mut n) = (0.0, 0usize);
        let all: Vec<usize> = (0..self.len()).collect();
        for chunk in all.chunks(4 * EVAL_CHUNK) {
            let (init, cuts) = self.select(chunk);
            let mut g = Graph::new();
            let net = Network::bind(&mut g, model, decoder)?;
            let steps = decoder_forward(&mut g, &net, &init, &cuts.treatments, DecoderMode::Autoregressive)?;
            for (u, s) in steps.iter().enumerate() {
                for (p, y) in g.value(s.y_hat).values().iter().zip(cuts.targets[u].values()) {
                    se += (p - y).powi(2);
                    n += 1;
                }
            }
        }
        Ok(se / n.max(1) as f64)
    }
}

/// Block 2: the decoder on teacher-forced `tau`-step rollouts from every
/// cut, with the encoder frozen.
pub fn train_decoder(
    dataset: &Dataset,
    model: &ModelConfig,
    encoder: &ParamStore,
    config: &TrainConfig,
) -> Result<(ParamStore, TrainReport), TrainError> {
    config.validate()?;
    model.validate()?;
    let norm = &dataset.meta.normalization;
    let train = DecoderData::build(encoder, model, &split_refs(dataset, Split::Train)?, norm, config.tau)?;
    let val = DecoderData::build(encoder, model, &split_refs(dataset, Split::Val)?, norm, config.tau)?;
    let objective = config.objective(dataset.meta.treated_fraction);
    let mut store = fresh_params(model, Block::Decoder, dataset.covariate_dim(), config.seed)?;
    let mut leaks = Vec::new();
    let mut report = fit(
        Block::Decoder,
        &mut store,
        config,
        config.decoder_learning_rate,
        train.len(),
        config.decoder_batch_size,
        |g, store, idx| {
            let (init, cuts) = train.select(idx);
            // The encoder is registered so that a stray dependency would
            // show up as a non-zero gradient.
            Network::bind(g, model, encoder)?;
            let net = Network::bind(g, model, store)?;
            let steps = decoder_forward(g, &net, &init, &cuts.treatments, DecoderMode::TeacherForced(&cuts.targets))?;
            let obj = decoder_objective(g, &net, store, &steps, &cuts, &objective, None)?;
            let all = g.backward(obj.total)?;
            let leaked = all.for_store(encoder).global_norm();
            leaks.push(leaked);
            if leaked != 0.0 {
                return Err(TrainError::EncoderGradient(leaked));
            }
            Ok((obj.values, all.for_store(store)))
        },
        |store| val.autoregressive_mse(store, model),
    )?;
    report.frozen_grad_norms = leaks;
    Ok((store, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{generate_dataset, SimConfig};

    fn tiny() -> (Dataset, ModelConfig, TrainConfig) {
        let sim = SimConfig {
            n_patients: 40,
            max_len: 8,
            horizon: 2,
            seed: 11,
            ..SimConfig::default()
        };
        let model = ModelConfig {
            repr_dim: 6,
            rnn_hidden: 5,
            fc_hidden: 6,
            factor_dim: 3,
            dropout: 0.1,
            ..ModelConfig::default()
        };
        let train = TrainConfig {
            batch_size: 16,
            decoder_batch_size: 64,
            max_epochs: 3,
            tau: 2,
            seed: 5,
            ..TrainConfig::default()
        };
        (generate_dataset(&sim).unwrap(), model, train)
    }

    #[test]
    fn single_epoch_returns_epoch_one_weights() {
        let (ds, model, mut cfg) = tiny();
        cfg.max_epochs = 1;
        cfg.patience = 0;
        let (store, report) = train_encoder(&ds, &model, &cfg).unwrap();
        assert_eq!(report.epochs.len(), 1);
        assert_eq!(report.best_epoch, 1);
        let val: Vec<_> = ds.split(Split::Val).collect();
        let mse = encoder_validation_mse(&store, &model, &val, &ds.meta.normalization).unwrap();
        assert_eq!(mse, report.best_val_mse);
    }

    #[test]
    fn training_is_deterministic_and_freezes_encoder() {
        let (ds, model, cfg) = tiny();
        let (enc_a, rep_a) = train_encoder(&ds, &model, &cfg).unwrap();
        let (enc_b, rep_b) = train_encoder(&ds, &model, &cfg).unwrap();
        assert_eq!(enc_a, enc_b);
        assert_eq!(rep_a.epochs, rep_b.epochs);
        let before = enc_a.flatten();
        let (dec_a, _) = train_decoder(&ds, &model, &enc_a, &cfg).unwrap();
        let (dec_b, _) = train_decoder(&ds, &model, &enc_a, &cfg).unwrap();
        assert_eq!(enc_a.flatten(), before);
        assert_eq!(dec_a, dec_b);
    }

    #[test]
    fn best_checkpoint_is_not_necessarily_last() {
        let (ds, model, mut cfg) = tiny();
        cfg.max_epochs = 6;
        cfg.learning_rate = 1e-2;
        let (_, report) = train_encoder(&ds, &model, &cfg).unwrap();
        let best = report.epochs.iter().map(|e| e.val_mse).fold(f64::INFINITY, f64::min);
        assert_eq!(report.best_val_mse, best);
        assert!(report.epochs.iter().all(|e| e.train.total.is_finite()));
    }

    #[test]
    fn short_trajectories_cannot_feed_the_decoder() {
        let (ds, model, mut cfg) = tiny();
        let (enc, _) = train_encoder(&ds, &model, &TrainConfig { max_epochs: 1, ..cfg.clone() }).unwrap();
        cfg.tau = 7;
        let err = train_decoder(&ds, &model, &enc, &cfg).unwrap_err();
        assert!(err.to_string().contains("long enough"));
    }
}
