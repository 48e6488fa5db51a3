//! Counterfactual test sets: a biased observational history followed by
//! alternative treatment plans, all simulated with the same future noise.

use serde::{Deserialize, Serialize};

use super::dataset::{simulate_trajectory, Split, Trajectory};
use super::patient::{advance, sample_patient, PatientState, PatientStatics, StepNoise};
use super::{stream_rng, SimConfig, SimError, STREAM_FUTURE_NOISE, STREAM_TEST_PATIENTS};

/// A history cut together with everything needed to simulate its futures.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CounterfactualHistory {
    pub patient: u64,
    /// Observed steps `0..len`. The final treatment is the observed one and
    /// is superseded by whichever plan is applied.
    pub history: Trajectory,
    pub statics: PatientStatics,
    /// Simulator state at the last observed step.
    pub start: PatientState,
    /// Future noise shared by every plan of this history.
    pub noise: Vec<StepNoise>,
}

impl CounterfactualHistory {
    pub fn horizon(&self) -> usize {
        self.noise.len()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CounterfactualItem {
    pub history: usize,
    pub plan: Vec<u8>,
    /// Ground-truth outcomes for the `tau` steps after the cut.
    pub outcomes: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CounterfactualSet {
    pub tau: usize,
    pub histories: Vec<CounterfactualHistory>,
    pub items: Vec<CounterfactualItem>,
}

impl CounterfactualSet {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Every outcome in histories and ground truths, for normalizers.
    pub fn max_abs_outcome(&self) -> f64 {
        let hist = self
            .histories
            .iter()
            .flat_map(|h| h.history.outcomes.iter().copied());
        let truth = self.items.iter().flat_map(|i| i.outcomes.iter().copied());
        hist.chain(truth).fold(0.0_f64, |m, y| m.max(y.abs()))
    }
}

/// Plans that treat at exactly one future step, `j = 1..=tau`.
pub fn one_hot_plans(tau: usize) -> Vec<Vec<u8>> {
    (0..tau)
        .map(|j| (0..tau).map(|k| (k == j) as u8).collect())
        .collect()
}

/// All `2^tau` plans in lexicographic order (`00..0` first).
pub fn all_plans(tau: usize) -> Vec<Vec<u8>> {
    (0..1usize << tau)
        .map(|code| (0..tau).map(|j| ((code >> (tau - 1 - j)) & 1) as u8).collect())
        .collect()
}

/// Outcomes `rho` for the `plan.len()` steps after `start`.
pub fn simulate_plan(
    statics: &PatientStatics,
    start: &PatientState,
    plan: &[u8],
    noise: &[StepNoise],
) -> Result<Vec<f64>, SimError> {
    let mut state = start.clone();
    let mut out = Vec::with_capacity(plan.len());
    for (a, n) in plan.iter().zip(noise) {
        state = advance(statics, &state, *a == 1, *n)?;
        out.push(state.rho);
    }
    Ok(out)
}

/// For each test patient and each history length `1..=max_len`, the
/// one-hot plans over the next `tau` steps with their ground truth.
pub fn generate_counterfactual_test(config: &SimConfig, tau: usize) -> Result<CounterfactualSet, SimError> {
    config.validate()?;
    if tau == 0 {
        return Err(SimError::Config("tau must be positive".into()));
    }
    let plans = one_hot_plans(tau);
    let histories = test_histories(config, tau, 1..=config.max_len)?;
    let mut items = Vec::with_capacity(histories.len() * tau);
    for (h, ctx) in histories.iter().enumerate() {
        for plan in &plans {
            items.push(CounterfactualItem {
                history: h,
                plan: plan.clone(),
                outcomes: simulate_plan(&ctx.statics, &ctx.start, plan, &ctx.noise)?,
            });
        }
    }
    Ok(CounterfactualSet { tau, histories, items })
}

/// Test histories with future noise for horizon `tau`, for every patient and
/// every requested history length.
pub fn test_histories(
    config: &SimConfig,
    tau: usize,
    lengths: impl Iterator<Item = usize> + Clone,
) -> Result<Vec<CounterfactualHistory>, SimError> {
    let max_needed = lengths.clone().max().unwrap_or(1);
    let mut out = Vec::new();
    for p in 0..config.test_patients as u64 {
        let mut rng = stream_rng(config.seed, STREAM_TEST_PATIENTS, p);
        let (statics, state) = sample_patient(config, p, &mut rng);
        let path = simulate_trajectory(config, &statics, state, max_needed, &mut rng)?;
        let full = Trajectory {
            id: p,
            split: Split::Test,
            statics: Some(statics.clone()),
            covariates: path.covariates.iter().map(|x| x.to_vec()).collect(),
            treatments: path.treatments.clone(),
            outcomes: path.outcomes.clone(),
        };
        for len in lengths.clone() {
            let mut noise_rng = stream_rng(config.seed, STREAM_FUTURE_NOISE, p * 10_000 + len as u64);
            let noise = (0..tau).map(|_| StepNoise::draw(config, &mut noise_rng)).collect();
            out.push(CounterfactualHistory {
                patient: p,
                history: full.prefix(len),
                statics: statics.clone(),
                start: path.states[len - 1].clone(),
                noise,
            });
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct PlanEnumeration {
    pub plans: Vec<Vec<u8>>,
    /// Final-step outcome under each plan.
    pub final_outcomes: Vec<f64>,
    /// Index of the first plan (lexicographic) attaining the minimum.
    pub best: usize,
}

impl PlanEnumeration {
    pub fn best_plan(&self) -> &[u8] {
        &self.plans[self.best]
    }

    pub fn optimum(&self) -> f64 {
        self.final_outcomes[self.best]
    }

    /// Plans whose final outcome equals the optimum exactly.
    pub fn is_optimal(&self, index: usize) -> bool {
        self.final_outcomes[index] == self.optimum()
    }
}

/// Brute force over all `2^tau` plans with common random numbers.
pub fn enumerate_optimal_plan(ctx: &CounterfactualHistory, tau: usize) -> Result<PlanEnumeration, SimError> {
    if tau == 0 || tau > 5 || tau > ctx.noise.len() {
        return Err(SimError::Config(format!(
            "plan enumeration needs 1 <= tau <= min(5, {}), got {tau}",
            ctx.noise.len()
        )));
    }
    let plans = all_plans(tau);
    let mut final_outcomes = Vec::with_capacity(plans.len());
    for plan in &plans {
        let path = simulate_plan(&ctx.statics, &ctx.start, plan, &ctx.noise[..tau])?;
        final_outcomes.push(*path.last().expect("tau >= 1"));
    }
    let best = argmin_first(&final_outcomes);
    Ok(PlanEnumeration {
        plans,
        final_outcomes,
        best,
    })
}

/// Index of the smallest value; ties go to the earliest index.
pub fn argmin_first(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v < values[best] {
            best = i;
        }
    }
    best
}
