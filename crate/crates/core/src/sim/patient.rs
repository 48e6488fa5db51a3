//! Per-patient tumour-growth dynamics under immune therapy.
//!
//! The cancer cell mass follows the discrete logistic-type update
//! `rho' = rho + (alpha0 - mu + mu*Lambda) * rho - mu*Lambda * rho^2 + eps`,
//! with kill rate `mu = lambda_p * psi0 * sigma` and immune state
//! `Lambda = (rho0 / psi0) / f`. Treatment multiplies the immune cell count
//! `psi0` by 1.01, no treatment by 0.99. Treatment is drawn from
//! `sigmoid(zeta * mean(mu over 10 steps) + (1 - zeta) * kappa)` where
//! `kappa` is an AR(10) process unrelated to the tumour.

use std::collections::VecDeque;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{SimConfig, SimError};
use crate::autodiff::sigmoid;

pub const AR_ORDER: usize = 10;
pub const MU_WINDOW: usize = 10;
pub const COVARIATE_DIM: usize = 8;
pub const COVARIATE_NAMES: [&str; COVARIATE_DIM] =
    ["alpha0", "lambda_p", "sigma", "psi0", "rho0", "f", "kappa", "rho"];

/// Time-invariant patient parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatientStatics {
    pub alpha0: f64,
    pub lambda_p: f64,
    pub sigma: f64,
    pub rho0: f64,
    pub fitness: f64,
    pub ar_coeffs: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatientState {
    pub patient: u64,
    pub t: usize,
    pub rho: f64,
    pub psi0: f64,
    pub kappa: f64,
    /// `kappa(t), kappa(t-1), ..., kappa(t-9)`; pre-history is zero.
    pub kappa_history: VecDeque<f64>,
    /// Last ten kill rates, oldest first; padded with `mu(0)` early on.
    pub mu_window: VecDeque<f64>,
}

impl PatientState {
    pub fn mu(&self) -> f64 {
        *self.mu_window.back().expect("window is never empty")
    }

    pub fn mu_bar(&self) -> f64 {
        self.mu_window.iter().sum::<f64>() / self.mu_window.len() as f64
    }

    /// `(alpha0, lambda_p, sigma, psi0, rho0, f, kappa, rho)`.
    pub fn covariates(&self, s: &PatientStatics) -> [f64; COVARIATE_DIM] {
        [
            s.alpha0, s.lambda_p, s.sigma, self.psi0, s.rho0, s.fitness, self.kappa, self.rho,
        ]
    }
}

/// Pre-drawn additive noise for one transition.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StepNoise {
    pub rho: f64,
    pub kappa: f64,
}

impl StepNoise {
    pub fn draw(config: &SimConfig, rng: &mut ChaCha8Rng) -> Self {
        Self {
            rho: gaussian(rng, config.rho_noise_variance),
            kappa: gaussian(rng, config.kappa_noise_variance),
        }
    }
}

fn gaussian(rng: &mut ChaCha8Rng, variance: f64) -> f64 {
    if variance <= 0.0 {
        return 0.0;
    }
    Normal::new(0.0, variance.sqrt()).expect("finite variance").sample(rng)
}

pub fn sample_patient(config: &SimConfig, patient: u64, rng: &mut ChaCha8Rng) -> (PatientStatics, PatientState) {
    let alpha0 = rng.random_range(0.0..0.1);
    let lambda_p = rng.random_range(0.1..0.2);
    let sigma = rng.random_range(0.0..0.1);
    let rho0 = rng.random_range(0.0..0.1);
    let fitness = rng.random_range(1.0..5.0);
    let ar_coeffs = (0..AR_ORDER).map(|_| gaussian(rng, config.ar_coeff_variance)).collect();
    let kappa = gaussian(rng, config.kappa_init_variance);
    let psi0 = rng.random_range(0.1..0.3);
    let rho = rng.random_range(0.03..=1.0);

    let mu0 = lambda_p * psi0 * sigma;
    let mut kappa_history = VecDeque::from(vec![0.0; AR_ORDER]);
    kappa_history[0] = kappa;
    let statics = PatientStatics {
        alpha0,
        lambda_p,
        sigma,
        rho0,
        fitness,
        ar_coeffs,
    };
    let state = PatientState {
        patient,
        t: 0,
        rho,
        psi0,
        kappa,
        kappa_history,
        mu_window: VecDeque::from(vec![mu0; MU_WINDOW]),
    };
    (statics, state)
}

/// Probability of treatment at the current step.
pub fn treatment_prob(state: &PatientState, zeta: f64) -> f64 {
    treatment_prob_from(state.mu_bar(), state.kappa, zeta)
}

pub fn treatment_prob_from(mu_bar: f64, kappa: f64, zeta: f64) -> f64 {
    sigmoid(zeta * mu_bar + (1.0 - zeta) * kappa)
}

/// Deterministic transition given the treatment and the noise draw.
pub fn advance(
    statics: &PatientStatics,
    state: &PatientState,
    treated: bool,
    noise: StepNoise,
) -> Result<PatientState, SimError> {
    let psi0 = state.psi0 * if treated { 1.01 } else { 0.99 };
    let mu = statics.lambda_p * psi0 * statics.sigma;
    let immune = (statics.rho0 / psi0) / statics.fitness;
    let rho = state.rho;
    let raw_rho = rho + (statics.alpha0 - mu + mu * immune) * rho - mu * immune * rho * rho + noise.rho;

    let ar: f64 = statics
        .ar_coeffs
        .iter()
        .zip(&state.kappa_history)
        .map(|(theta, k)| theta * k)
        .sum();
    let kappa = ar + noise.kappa;

    if !(raw_rho.is_finite() && psi0.is_finite() && kappa.is_finite()) {
        return Err(SimError::NonFinite {
            patient: state.patient,
            step: state.t + 1,
        });
    }
    let next_rho = raw_rho.max(0.0);

    let mut kappa_history = state.kappa_history.clone();
    kappa_history.push_front(kappa);
    kappa_history.truncate(AR_ORDER);
    let mut mu_window = state.mu_window.clone();
    mu_window.push_back(mu);
    while mu_window.len() > MU_WINDOW {
        mu_window.pop_front();
    }
    Ok(PatientState {
        patient: state.patient,
        t: state.t + 1,
        rho: next_rho,
        psi0,
        kappa,
        kappa_history,
        mu_window,
    })
}

/// One stochastic transition, drawing the noise from `rng`.
pub fn step_dynamics(
    config: &SimConfig,
    statics: &PatientStatics,
    state: &PatientState,
    treated: bool,
    rng: &mut ChaCha8Rng,
) -> Result<PatientState, SimError> {
    let noise = StepNoise::draw(config, rng);
    advance(statics, state, treated, noise)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn quiet() -> SimConfig {
        SimConfig {
            rho_noise_variance: 0.0,
            kappa_noise_variance: 0.0,
            ..SimConfig::default()
        }
    }

    fn fixed_patient() -> (PatientStatics, PatientState) {
        let cfg = quiet();
        let (mut s, mut st) = sample_patient(&cfg, 0, &mut ChaCha8Rng::seed_from_u64(1));
        s.lambda_p = 0.15;
        s.sigma = 0.05;
        st.psi0 = 0.2;
        (s, st)
    }

    #[test]
    fn kill_rate_arithmetic() {
        let (s, st) = fixed_patient();
        let mu = s.lambda_p * st.psi0 * s.sigma;
        assert!((mu - 0.0015).abs() < 1e-15);
    }

    #[test]
    fn zero_mass_is_a_fixed_point_without_noise() {
        let (s, mut st) = fixed_patient();
        st.rho = 0.0;
        for a in [true, false, true] {
            st = advance(&s, &st, a, StepNoise::default()).unwrap();
            assert_eq!(st.rho, 0.0);
        }
    }

    #[test]
    fn sustained_treatment_compounds_immune_count() {
        let (s, st0) = fixed_patient();
        let mut st = st0.clone();
        for _ in 0..10 {
            st = advance(&s, &st, true, StepNoise::default()).unwrap();
        }
        let ratio = st.psi0 / st0.psi0;
        assert!((ratio - 1.01f64.powi(10)).abs() < 1e-12);
        assert!((ratio - 1.10462).abs() < 1e-5);
    }

    #[test]
    fn policy_cases() {
        assert_eq!(treatment_prob_from(0.7, 0.0, 0.0), 0.5);
        assert_eq!(treatment_prob_from(0.3, 0.9, 1.0), treatment_prob_from(0.3, -4.0, 1.0));
        assert_eq!(treatment_prob_from(0.02, -0.02, 0.5), 0.5);
    }

    #[test]
    fn sampling_is_seeded_and_in_range() {
        let cfg = SimConfig::default();
        let a = sample_patient(&cfg, 3, &mut ChaCha8Rng::seed_from_u64(11));
        let b = sample_patient(&cfg, 3, &mut ChaCha8Rng::seed_from_u64(11));
        assert_eq!(a, b);
        let (s, st) = a;
        assert!((0.1..0.2).contains(&s.lambda_p));
        assert!((0.03..=1.0).contains(&st.rho));
        assert!((0.1..0.3).contains(&st.psi0));
        assert_eq!(st.mu_window.len(), MU_WINDOW);
        assert!(st.mu_window.iter().all(|&m| m == s.lambda_p * st.psi0 * s.sigma));
    }

    #[test]
    fn non_finite_state_reports_patient_and_step() {
        let (s, mut st) = fixed_patient();
        st.patient = 42;
        st.t = 6;
        st.rho = f64::INFINITY;
        match advance(&s, &st, false, StepNoise::default()) {
            Err(SimError::NonFinite { patient, step }) => assert_eq!((patient, step), (42, 7)),
            other => panic!("unexpected {other:?}"),
        }
    }
}
