//! Counterfactual forecasting metrics, plan selection, factor influence and
//! the ablation grid, plus the longitudinal CSV ingester.
//!
//! Every forecaster answers the same question: given observed histories and
//! a list of treatment plans, what outcomes (in original units) follow each
//! history under each plan.

mod ablation;
mod factors;
mod ingest;

pub use ablation::{ablation_suite, AblationConfig, AblationReport, CellResult, NrmseRow, PlanRow, TrainedCell, Variant};
pub use factors::{factor_analysis, FactorRow, FactorTable};
pub use ingest::{export_longitudinal_csv, ingest_longitudinal_csv, CsvSchema};

use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{Graph, Tensor};
use crate::model::{decoder_forward, encode, Batch, DecoderInit, DecoderMode, ModelError, Network};
use crate::sim::{
    all_plans, enumerate_optimal_plan, one_hot_plans, simulate_plan, stream_rng, CounterfactualHistory,
    CounterfactualSet, SimError, Trajectory,
};
use crate::training::{TrainError, TrainedModel};

const STREAM_RANDOM_CHOOSER: u64 = 30;
const FORECAST_CHUNK: usize = 512;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("{0}")]
    Input(String),
    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },
    #[error("io: {0}")]
    Io(String),
}

impl From<std::io::Error> for EvalError {
    fn from(e: std::io::Error) -> Self {
        EvalError::Io(e.to_string())
    }
}

impl From<csv::Error> for EvalError {
    fn from(e: csv::Error) -> Self {
        let line = e.position().map_or(0, |p| p.line());
        if line > 0 {
            EvalError::Parse {
                line,
                message: e.to_string(),
            }
        } else {
            EvalError::Io(e.to_string())
        }
    }
}

/// `sqrt(mean((p - t)^2)) / normalizer`.
pub fn nrmse(predictions: &[f64], truths: &[f64], normalizer: f64) -> Result<f64, EvalError> {
    if predictions.len() != truths.len() {
        return Err(EvalError::Input(format!(
            "{} predictions for {} truths",
            predictions.len(),
            truths.len()
        )));
    }
    if predictions.is_empty() {
        return Err(EvalError::Input("n-RMSE of an empty set".into()));
    }
    if !(normalizer > 0.0 && normalizer.is_finite()) {
        return Err(EvalError::Input(format!("normalizer must be positive, got {normalizer}")));
    }
    let mse = predictions
        .iter()
        .zip(truths)
        .map(|(p, t)| (p - t).powi(2))
        .sum::<f64>()
        / predictions.len() as f64;
    Ok(mse.sqrt() / normalizer)
}

/// Outcomes `[history][plan][step]`, original units.
pub type Forecasts = Vec<Vec<Vec<f64>>>;

pub trait Forecaster {
    fn name(&self) -> &str;

    /// Forecasts every plan (all of equal length) after every history.
    fn forecast(&self, histories: &[&CounterfactualHistory], plans: &[Vec<u8>]) -> Result<Forecasts, EvalError>;
}

fn plan_len(plans: &[Vec<u8>]) -> Result<usize, EvalError> {
    let tau = plans.first().map_or(0, Vec::len);
    if tau == 0 || plans.iter().any(|p| p.len() != tau) {
        return Err(EvalError::Input("plans must be non-empty and of equal length".into()));
    }
    Ok(tau)
}

/// Encoder on the history, then the decoder rolled out autoregressively
/// under each plan.
pub struct DcrnForecaster<'a> {
    pub model: &'a TrainedModel,
    pub label: String,
}

impl<'a> DcrnForecaster<'a> {
    pub fn new(model: &'a TrainedModel, label: impl Into<String>) -> Self {
        Self {
            model,
            label: label.into(),
        }
    }
}

impl Forecaster for DcrnForecaster<'_> {
    fn name(&self) -> &str {
        &self.label
    }

    fn forecast(&self, histories: &[&CounterfactualHistory], plans: &[Vec<u8>]) -> Result<Forecasts, EvalError> {
        let tau = plan_len(plans)?;
        let k = plans.len();
        let m = self.model;
        let norm = &m.normalization;
        let mut out = Vec::with_capacity(histories.len());
        for chunk in histories.chunks(FORECAST_CHUNK.div_ceil(k).max(1)) {
            if chunk.iter().any(|h| h.history.is_empty()) {
                return Err(EvalError::Input("cannot forecast from an empty history".into()));
            }
            let trajs: Vec<&Trajectory> = chunk.iter().map(|h| &h.history).collect();
            let batch = Batch::new(&trajs, norm)?;
            let cuts: Vec<(usize, usize)> = batch.lengths.iter().enumerate().map(|(r, &l)| (r, l - 1)).collect();
            let last = Tensor::column(cuts.iter().map(|&(r, t)| batch.outcomes[t].get(r, 0)).collect());
            let init = {
                let mut g = Graph::new();
                let enc = Network::bind(&mut g, &m.config, &m.encoder)?;
                let run = encode(&mut g, &enc, &batch)?;
                DecoderInit::from_run(&g, &run, &cuts, last).repeat_rows(k)
            };
            let plan_tensors: Vec<Tensor> = (0..tau)
                .map(|u| {
                    Tensor::column(
                        (0..chunk.len())
                            .flat_map(|_| plans.iter().map(move |p| f64::from(p[u])))
                            .collect(),
                    )
                })
                .collect();
            let mut g = Graph::new();
            let dec = Network::bind(&mut g, &m.config, &m.decoder)?;
            let steps = decoder_forward(&mut g, &dec, &init, &plan_tensors, DecoderMode::Autoregressive)?;
            let values: Vec<&Tensor> = steps.iter().map(|s| g.value(s.y_hat)).collect();
            for h in 0..chunk.len() {
                out.push(
                    (0..k)
                        .map(|j| {
                            values
                                .iter()
                                .map(|v| norm.denormalize_outcome(v.get(h * k + j, 0)))
                                .collect()
                        })
                        .collect(),
                );
            }
        }
        Ok(out)
    }
}

/// The simulator itself, replaying each history's stored future noise.
pub struct OracleForecaster;

impl Forecaster for OracleForecaster {
    fn name(&self) -> &str {
        "oracle"
    }

    fn forecast(&self, histories: &[&CounterfactualHistory], plans: &[Vec<u8>]) -> Result<Forecasts, EvalError> {
        let tau = plan_len(plans)?;
        histories
            .iter()
            .map(|h| {
                if h.horizon() < tau {
                    return Err(EvalError::Input(format!(
                        "history stores {} noise steps, plan needs {tau}",
                        h.horizon()
                    )));
                }
                plans
                    .iter()
                    .map(|p| Ok(simulate_plan(&h.statics, &h.start, p, &h.noise)?))
                    .collect()
            })
            .collect()
    }
}

/// A constant forecast, typically the training-split outcome mean.
pub struct MeanForecaster {
    pub mean: f64,
}

impl MeanForecaster {
    pub fn from_trajectories<'a>(trajs: impl IntoIterator<Item = &'a Trajectory>) -> Result<Self, EvalError> {
        let (mut s, mut n) = (0.0, 0usize);
        for t in trajs {
            s += t.outcomes.iter().sum::<f64>();
            n += t.outcomes.len();
        }
        if n == 0 {
            return Err(EvalError::Input("mean predictor needs at least one outcome".into()));
        }
        Ok(Self { mean: s / n as f64 })
    }
}

impl Forecaster for MeanForecaster {
    fn name(&self) -> &str {
        "mean"
    }

    fn forecast(&self, histories: &[&CounterfactualHistory], plans: &[Vec<u8>]) -> Result<Forecasts, EvalError> {
        let tau = plan_len(plans)?;
        Ok(histories
            .iter()
            .map(|_| vec![vec![self.mean; tau]; plans.len()])
            .collect())
    }
}

/// Carries the last observed outcome forward.
pub struct LastValueForecaster;

impl Forecaster for LastValueForecaster {
    fn name(&self) -> &str {
        "last-value"
    }

    fn forecast(&self, histories: &[&CounterfactualHistory], plans: &[Vec<u8>]) -> Result<Forecasts, EvalError> {
        let tau = plan_len(plans)?;
        histories
            .iter()
            .map(|h| {
                let y = *h
                    .history
                    .outcomes
                    .last()
                    .ok_or_else(|| EvalError::Input("empty history".into()))?;
                Ok(vec![vec![y; tau]; plans.len()])
            })
            .collect()
    }
}

/// Independent uniform forecasts; the argmin is then a uniformly random plan.
pub struct RandomForecaster {
    pub seed: u64,
}

impl Forecaster for RandomForecaster {
    fn name(&self) -> &str {
        "random"
    }

    fn forecast(&self, histories: &[&CounterfactualHistory], plans: &[Vec<u8>]) -> Result<Forecasts, EvalError> {
        let tau = plan_len(plans)?;
        Ok(histories
            .iter()
            .enumerate()
            .map(|(i, _)| {
                let mut rng = stream_rng(self.seed, STREAM_RANDOM_CHOOSER, i as u64);
                (0..plans.len())
                    .map(|_| (0..tau).map(|_| rng.random::<f64>()).collect())
                    .collect()
            })
            .collect())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CounterfactualReport {
    pub model: String,
    /// Max |Y| over the evaluation set.
    pub normalizer: f64,
    /// n-RMSE of the forecast `k` steps ahead, `k = 1..=tau`.
    pub per_step: Vec<f64>,
    pub items: usize,
}

impl CounterfactualReport {
    /// n-RMSE at horizon `tau` (1-based).
    pub fn at(&self, tau: usize) -> Option<f64> {
        tau.checked_sub(1).and_then(|i| self.per_step.get(i)).copied()
    }
}

/// n-RMSE per horizon over every (history, plan) item of a test set.
pub fn counterfactual_eval(
    model: &dyn Forecaster,
    set: &CounterfactualSet,
    tau: usize,
) -> Result<CounterfactualReport, EvalError> {
    if tau == 0 || tau > set.tau {
        return Err(EvalError::Input(format!(
            "horizon {tau} outside the test set's 1..={}",
            set.tau
        )));
    }
    if set.is_empty() {
        return Err(EvalError::Input("empty counterfactual test set".into()));
    }
    // Items are grouped per history with a shared plan list.
    let mut plans: Vec<Vec<u8>> = Vec::new();
    for item in set.items.iter().take_while(|i| i.history == set.items[0].history) {
        plans.push(item.plan[..tau].to_vec());
    }
    let k = plans.len();
    if set.items.len() != set.histories.len() * k
        || set
            .items
            .iter()
            .enumerate()
            .any(|(n, i)| i.history != n / k || i.plan[..tau] != plans[n % k][..])
    {
        return Err(EvalError::Input("test set items are not grouped by history with a shared plan list".into()));
    }
    let histories: Vec<&CounterfactualHistory> = set.histories.iter().collect();
    let forecasts = model.forecast(&histories, &plans)?;
    let normalizer = set.max_abs_outcome();
    let per_step = (0..tau)
        .map(|s| {
            let (mut p, mut t) = (Vec::with_capacity(set.len()), Vec::with_capacity(set.len()));
            for (n, item) in set.items.iter().enumerate() {
                p.push(forecasts[item.history][n % k][s]);
                t.push(item.outcomes[s]);
            }
            nrmse(&p, &t, normalizer)
        })
        .collect::<Result<_, _>>()?;
    Ok(CounterfactualReport {
        model: model.name().to_string(),
        normalizer,
        per_step,
        items: set.len(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanReport {
    pub model: String,
    pub tau: usize,
    pub patients: usize,
    pub plans_per_patient: usize,
    /// Fraction of patients whose chosen plan reaches the true optimum.
    pub accuracy: f64,
    /// Mean true final outcome of the chosen plan minus the optimum.
    pub mean_regret: f64,
}

/// Chooses the plan with the smallest forecast final outcome (first in
/// lexicographic order on ties) and scores it against the simulator.
pub fn plan_selection_accuracy(
    model: &dyn Forecaster,
    histories: &[CounterfactualHistory],
    tau: usize,
    one_hot_only: bool,
) -> Result<PlanReport, EvalError> {
    if histories.is_empty() {
        return Err(EvalError::Input("no patients for plan selection".into()));
    }
    let plans = if one_hot_only { one_hot_plans(tau) } else { all_plans(tau) };
    let refs: Vec<&CounterfactualHistory> = histories.iter().collect();
    let forecasts = model.forecast(&refs, &plans)?;
    let (mut hits, mut regret) = (0usize, 0.0);
    for (h, per_plan) in histories.iter().zip(&forecasts) {
        let truth = enumerate_optimal_plan(h, tau)?;
        let finals: Vec<f64> = per_plan.iter().map(|f| f[tau - 1]).collect();
        let chosen = crate::sim::argmin_first(&finals);
        let index = truth
            .plans
            .iter()
            .position(|p| *p == plans[chosen])
            .expect("plan families are subsets of all plans");
        hits += usize::from(truth.is_optimal(index));
        regret += truth.final_outcomes[index] - truth.optimum();
    }
    let n = histories.len() as f64;
    Ok(PlanReport {
        model: model.name().to_string(),
        tau,
        patients: histories.len(),
        plans_per_patient: plans.len(),
        accuracy: hits as f64 / n,
        mean_regret: regret / n,
    })
}

/// `# seed=<seed> config_hash=<hash> <extra>` followed by a newline.
pub fn write_header_comment(out: &mut impl Write, seed: u64, config_hash: &str, extra: &str) -> std::io::Result<()> {
    if extra.is_empty() {
        writeln!(out, "# seed={seed} config_hash={config_hash}")
    } else {
        writeln!(out, "# seed={seed} config_hash={config_hash} {extra}")
    }
}

/// A CSV reader that skips `#` comment lines.
pub fn csv_reader<R: std::io::Read>(input: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(input)
}
