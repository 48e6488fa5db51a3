use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::model::ModelConfig;
use crate::sim::{stream_rng, Dataset};

use super::{train_model, TrainConfig, TrainError};

const STREAM_SEARCH: u64 = 20;

/// Closed ranges sampled by the random search. The learning rate is drawn
/// log-uniformly; integer sizes and coefficients uniformly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SearchRanges {
    pub learning_rate: (f64, f64),
    pub batch_size: (usize, usize),
    pub decoder_batch_size: (usize, usize),
    pub rnn_hidden: (usize, usize),
    pub repr_dim: (usize, usize),
    pub fc_hidden: (usize, usize),
    pub dropout: (f64, f64),
    pub alpha: (f64, f64),
    pub beta: (f64, f64),
    pub gamma: (f64, f64),
}

impl Default for SearchRanges {
    fn default() -> Self {
        Self {
            learning_rate: (1e-4, 1e-2),
            batch_size: (16, 256),
            decoder_batch_size: (64, 512),
            rnn_hidden: (8, 128),
            repr_dim: (8, 256),
            fc_hidden: (4, 32),
            dropout: (0.0, 0.4),
            alpha: (0.0, 1.0),
            beta: (0.0, 1.0),
            gamma: (0.0, 1.0),
        }
    }
}

impl SearchRanges {
    /// Whether a (model, train) pair lies inside the ranges.
    pub fn contains(&self, model: &ModelConfig, train: &TrainConfig) -> bool {
        let f = |r: (f64, f64), v: f64| r.0 <= v && v <= r.1;
        let u = |r: (usize, usize), v: usize| r.0 <= v && v <= r.1;
        f(self.learning_rate, train.learning_rate)
            && f(self.learning_rate, train.decoder_learning_rate)
            && u(self.batch_size, train.batch_size)
            && u(self.decoder_batch_size, train.decoder_batch_size)
            && u(self.rnn_hidden, model.rnn_hidden)
            && u(self.repr_dim, model.repr_dim)
            && u(self.fc_hidden, model.fc_hidden)
            && f(self.dropout, model.dropout)
            && f(self.alpha, train.weights.alpha)
            && f(self.beta, train.weights.beta)
            && f(self.gamma, train.weights.gamma)
    }

    fn sample(&self, rng: &mut impl Rng, model: &ModelConfig, train: &TrainConfig) -> (ModelConfig, TrainConfig) {
        let log_uniform = |rng: &mut dyn rand::RngCore, (lo, hi): (f64, f64)| {
            (lo.ln() + rng.random::<f64>() * (hi.ln() - lo.ln())).exp().clamp(lo, hi)
        };
        let uniform = |rng: &mut dyn rand::RngCore, (lo, hi): (f64, f64)| lo + rng.random::<f64>() * (hi - lo);
        let int = |rng: &mut dyn rand::RngCore, (lo, hi): (usize, usize)| rng.random_range(lo..=hi);
        let mut m = model.clone();
        let mut t = train.clone();
        t.learning_rate = log_uniform(rng, self.learning_rate);
        t.decoder_learning_rate = log_uniform(rng, self.learning_rate);
        t.batch_size = int(rng, self.batch_size);
        t.decoder_batch_size = int(rng, self.decoder_batch_size);
        m.rnn_hidden = int(rng, self.rnn_hidden);
        m.repr_dim = int(rng, self.repr_dim);
        m.fc_hidden = int(rng, self.fc_hidden);
        m.dropout = uniform(rng, self.dropout);
        t.weights.alpha = uniform(rng, self.alpha);
        t.weights.beta = uniform(rng, self.beta);
        t.weights.gamma = uniform(rng, self.gamma);
        (m, t)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub index: usize,
    pub model: ModelConfig,
    pub train: TrainConfig,
    /// Decoder validation MSE (autoregressive, factual); `None` on failure.
    pub val_mse: Option<f64>,
    pub encoder_val_mse: Option<f64>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub best: Trial,
    /// Sorted by validation MSE, failed trials last.
    pub leaderboard: Vec<Trial>,
}

/// Seeded random search. Trials are independent and run on up to `jobs`
/// threads; the leaderboard does not depend on `jobs`.
pub fn random_search(
    dataset: &Dataset,
    base_model: &ModelConfig,
    base_train: &TrainConfig,
    ranges: &SearchRanges,
    n_trials: usize,
    seed: u64,
    jobs: usize,
) -> Result<SearchResult, TrainError> {
    if n_trials == 0 {
        return Err(TrainError::Config("n_trials must be at least 1".into()));
    }
    let mut rng = stream_rng(seed, STREAM_SEARCH, 0);
    let candidates: Vec<(ModelConfig, TrainConfig)> = (0..n_trials)
        .map(|i| {
            let (m, mut t) = ranges.sample(&mut rng, base_model, base_train);
            t.seed = seed.wrapping_add(i as u64);
            (m, t)
        })
        .collect();
    let run = |i: usize| -> Trial {
        let (model, train) = candidates[i].clone();
        match train_model(dataset, &model, &train) {
            Ok((_, enc, dec)) => Trial {
                index: i,
                model,
                train,
                val_mse: Some(dec.best_val_mse),
                encoder_val_mse: Some(enc.best_val_mse),
                error: None,
            },
            Err(e) => Trial {
                index: i,
                model,
                train,
                val_mse: None,
                encoder_val_mse: None,
                error: Some(e.to_string()),
            },
        }
    };
    let jobs = jobs.clamp(1, n_trials);
    let mut trials: Vec<Trial> = if jobs == 1 {
        (0..n_trials).map(run).collect()
    } else {
        let next = std::sync::atomic::AtomicUsize::new(0);
        let results = std::sync::Mutex::new(Vec::with_capacity(n_trials));
        std::thread::scope(|s| {
            for _ in 0..jobs {
                s.spawn(|| loop {
                    let i = next.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                    if i >= n_trials {
                        break;
                    }
                    let t = run(i);
                    results.lock().expect("no poisoned trial").push(t);
                });
            }
        });
        results.into_inner().expect("no poisoned trial")
    };
    trials.sort_by(|a, b| match (a.val_mse, b.val_mse) {
        (Some(x), Some(y)) => x.total_cmp(&y).then(a.index.cmp(&b.index)),
        (Some(_), None) => std::cmp::Ordering::Less,
        (None, Some(_)) => std::cmp::Ordering::Greater,
        (None, None) => a.index.cmp(&b.index),
    });
    if trials[0].val_mse.is_none() {
        let first = trials.iter().min_by_key(|t| t.index).and_then(|t| t.error.clone());
        return Err(TrainError::SearchFailed(n_trials, first.unwrap_or_default()));
    }
    Ok(SearchResult {
        best: trials[0].clone(),
        leaderboard: trials,
    })
}
