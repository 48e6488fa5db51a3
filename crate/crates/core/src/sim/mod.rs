//! Synthetic observational data from the tumour-growth model, plus
//! counterfactual test sets with ground truth.

mod counterfactual;
mod dataset;
mod patient;

pub use counterfactual::{
    all_plans, argmin_first, enumerate_optimal_plan, generate_counterfactual_test, one_hot_plans, simulate_plan,
    test_histories, CounterfactualHistory, CounterfactualItem, CounterfactualSet, PlanEnumeration,
};
pub use dataset::{generate_dataset, simulate_trajectory, Dataset, DatasetMeta, ObservedPath, Normalization, Split, Trajectory};
pub use patient::{
    advance, sample_patient, step_dynamics, treatment_prob, treatment_prob_from, PatientState, PatientStatics,
    StepNoise, AR_ORDER, COVARIATE_DIM, COVARIATE_NAMES, MU_WINDOW,
};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("non-finite state for patient {patient} at step {step}")]
    NonFinite { patient: u64, step: usize },
    #[error("overlap violated: treated fraction {0} on the training split")]
    OverlapViolation(f64),
    #[error("invalid simulation config: {0}")]
    Config(String),
    #[error("dataset io: {0}")]
    Io(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    /// Weight of the kill-rate signal against `kappa` in the policy.
    pub zeta: f64,
    pub n_patients: usize,
    /// Steps per observational trajectory.
    pub max_len: usize,
    /// Counterfactual horizon.
    pub horizon: usize,
    pub rho_noise_variance: f64,
    pub kappa_noise_variance: f64,
    pub kappa_init_variance: f64,
    pub ar_coeff_variance: f64,
    pub seed: u64,
    /// Train / validation / test fractions by patient.
    pub split: [f64; 3],
    /// Patients in the counterfactual test set.
    pub test_patients: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            zeta: 0.5,
            n_patients: 1000,
            max_len: 20,
            horizon: 5,
            rho_noise_variance: 0.01,
            kappa_noise_variance: 0.01,
            kappa_init_variance: 0.01,
            ar_coeff_variance: 0.01,
            seed: 0,
            split: [0.7, 0.15, 0.15],
            test_patients: 50,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::Config(m));
        if !(0.0..=1.0).contains(&self.zeta) {
            return bad(format!("zeta {} outside [0, 1]", self.zeta));
        }
        if self.n_patients == 0 || self.max_len == 0 || self.horizon == 0 {
            return bad("n_patients, max_len and horizon must be positive".into());
        }
        if self.horizon >= self.max_len {
            return bad(format!("horizon {} must be below max_len {}", self.horizon, self.max_len));
        }
        let variances = [
            self.rho_noise_variance,
            self.kappa_noise_variance,
            self.kappa_init_variance,
            self.ar_coeff_variance,
        ];
        if variances.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return bad("noise variances must be finite and non-negative".into());
        }
        if self.split.iter().any(|f| *f < 0.0) || (self.split.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return bad(format!("split fractions {:?} must be non-negative and sum to 1", self.split));
        }
        Ok(())
    }
}

/// Independent RNG stream for `(seed, purpose, index)`.
pub fn stream_rng(seed: u64, purpose: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(seed ^ splitmix64(purpose)));
    rng.set_stream(index);
    rng
}

fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub(crate) const STREAM_OBSERVATIONAL: u64 = 1;
pub(crate) const STREAM_TEST_PATIENTS: u64 = 2;
pub(crate) const STREAM_FUTURE_NOISE: u64 = 3;
