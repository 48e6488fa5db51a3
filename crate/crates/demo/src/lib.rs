//! Browser bindings for exploring the simulator and the balancing losses.
//! Every export returns a JSON string; failures come back as
//! `{"error": "..."}` so the page never has to catch exceptions.

use dcrn_core::losses::{mmd_value, propensity_weight, Bandwidth};
use dcrn_core::sim::{
    enumerate_optimal_plan, sample_patient, simulate_trajectory, stream_rng, test_histories, treatment_prob, SimConfig,
};
use serde::Serialize;
use wasm_bindgen::prelude::*;

const STREAM_DEMO: u64 = 90;

fn respond<T: Serialize>(result: Result<T, String>) -> String {
    match result {
        Ok(v) => serde_json::to_string(&v).unwrap_or_else(|e| error_json(&e.to_string())),
        Err(e) => error_json(&e),
    }
}

fn error_json(message: &str) -> String {
    serde_json::json!({ "error": message }).to_string()
}

fn sim_config(zeta: f64, seed: u32) -> Result<SimConfig, String> {
    let cfg = SimConfig {
        zeta,
        seed: u64::from(seed),
        ..SimConfig::default()
    };
    cfg.validate().map_err(|e| e.to_string())?;
    Ok(cfg)
}

#[derive(Serialize)]
struct PatientView {
    rho: Vec<f64>,
    kappa: Vec<f64>,
    mu_bar: Vec<f64>,
    treatment_prob: Vec<f64>,
    treatments: Vec<u8>,
}

/// One observational patient under policy mixing weight `zeta`.
#[wasm_bindgen]
pub fn simulate_patient(zeta: f64, seed: u32, steps: u32) -> String {
    respond((|| {
        if !(1..=200).contains(&steps) {
            return Err(format!("steps must be in 1..=200, got {steps}"));
        }
        let cfg = sim_config(zeta, seed)?;
        let mut rng = stream_rng(cfg.seed, STREAM_DEMO, 0);
        let (statics, state) = sample_patient(&cfg, 0, &mut rng);
        let path = simulate_trajectory(&cfg, &statics, state, steps as usize, &mut rng).map_err(|e| e.to_string())?;
        Ok(PatientView {
            rho: path.states.iter().map(|s| s.rho).collect(),
            kappa: path.states.iter().map(|s| s.kappa).collect(),
            mu_bar: path.states.iter().map(|s| s.mu_bar()).collect(),
            treatment_prob: path.states.iter().map(|s| treatment_prob(s, zeta)).collect(),
            treatments: path.treatments,
        })
    })())
}

#[derive(Serialize)]
struct PlanView {
    plan: String,
    outcomes: Vec<f64>,
    optimal: bool,
}

#[derive(Serialize)]
struct PlansView {
    history: Vec<f64>,
    treatments: Vec<u8>,
    plans: Vec<PlanView>,
    best: String,
}

/// Every `2^tau` plan after a history of `history_len` steps, simulated
/// with shared future noise.
#[wasm_bindgen]
pub fn plan_outcomes(zeta: f64, seed: u32, history_len: u32, tau: u32) -> String {
    respond((|| {
        let mut cfg = sim_config(zeta, seed)?;
        cfg.test_patients = 1;
        let (h, tau) = (history_len as usize, tau as usize);
        if !(1..=cfg.max_len).contains(&h) || !(1..=5).contains(&tau) {
            return Err(format!("need 1 <= history_len <= {} and 1 <= tau <= 5", cfg.max_len));
        }
        let ctx = test_histories(&cfg, tau, std::iter::once(h)).map_err(|e| e.to_string())?.remove(0);
        let e = enumerate_optimal_plan(&ctx, tau).map_err(|e| e.to_string())?;
        let bits = |p: &[u8]| p.iter().map(|b| char::from(b'0' + b)).collect::<String>();
        let plans = e
            .plans
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let outcomes =
                    dcrn_core::sim::simulate_plan(&ctx.statics, &ctx.start, p, &ctx.noise).map_err(|e| e.to_string())?;
                Ok(PlanView {
                    plan: bits(p),
                    outcomes,
                    optimal: e.is_optimal(i),
                })
            })
            .collect::<Result<Vec<_>, String>>()?;
        Ok(PlansView {
            history: ctx.history.outcomes.clone(),
            treatments: ctx.history.treatments.clone(),
            best: bits(e.best_plan()),
            plans,
        })
    })())
}

#[derive(Serialize)]
struct BalanceView {
    mmd: f64,
    a_c: Vec<f64>,
    omega_treated: Vec<f64>,
    omega_control: Vec<f64>,
}

/// Squared MMD between two 2-D Gaussian clouds `shift` apart, and the
/// inverse-propensity weights over a grid of confounder-head outputs.
#[wasm_bindgen]
pub fn balance_explorer(shift: f64, n: u32, seed: u32, p_hat: f64) -> String {
    respond((|| {
        if !(2..=400).contains(&n) || !shift.is_finite() {
            return Err("need 2 <= n <= 400 and a finite shift".into());
        }
        use rand_distr::{Distribution, StandardNormal};
        let mut rng = stream_rng(u64::from(seed), STREAM_DEMO, 1);
        let mut cloud = |offset: f64| -> Vec<Vec<f64>> {
            (0..n)
                .map(|_| {
                    let x: f64 = StandardNormal.sample(&mut rng);
                    let y: f64 = StandardNormal.sample(&mut rng);
                    vec![x + offset, y]
                })
                .collect()
        };
        let a = cloud(0.0);
        let b = cloud(shift);
        let mmd = mmd_value(&a, &b, Bandwidth::Median).map_err(|e| e.to_string())?;
        let a_c: Vec<f64> = (1..20).map(|i| i as f64 / 20.0).collect();
        let omega = |treated: bool| {
            a_c.iter()
                .map(|&q| propensity_weight(treated, q, p_hat).map_err(|e| e.to_string()))
                .collect::<Result<Vec<_>, _>>()
        };
        Ok(BalanceView {
            mmd,
            omega_treated: omega(true)?,
            omega_control: omega(false)?,
            a_c,
        })
    })())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(s: &str) -> serde_json::Value {
        serde_json::from_str(s).unwrap()
    }

    #[test]
    fn patient_has_requested_length() {
        let v = parse(&simulate_patient(0.5, 3, 12));
        assert_eq!(v["rho"].as_array().unwrap().len(), 12);
        assert_eq!(v["treatments"].as_array().unwrap().len(), 12);
        assert_eq!(simulate_patient(0.5, 3, 12), simulate_patient(0.5, 3, 12));
    }

    #[test]
    fn plans_enumerate_and_mark_the_optimum() {
        let v = parse(&plan_outcomes(0.5, 1, 10, 3));
        let plans = v["plans"].as_array().unwrap();
        assert_eq!(plans.len(), 8);
        assert_eq!(plans[0]["plan"], "000");
        let best = v["best"].as_str().unwrap();
        assert!(plans.iter().any(|p| p["plan"] == best && p["optimal"] == true));
    }

    #[test]
    fn balance_grows_with_shift_and_centres_weights() {
        let near = parse(&balance_explorer(0.0, 100, 2, 0.5))["mmd"].as_f64().unwrap();
        let far = parse(&balance_explorer(3.0, 100, 2, 0.5))["mmd"].as_f64().unwrap();
        assert!(far > near);
        let v = parse(&balance_explorer(0.0, 10, 2, 0.5));
        // a_c = p_hat gives ω = 2 for both arms.
        assert!((v["omega_treated"][9].as_f64().unwrap() - 2.0).abs() < 1e-12);
        assert!((v["omega_control"][9].as_f64().unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn bad_inputs_return_errors() {
        assert!(parse(&simulate_patient(2.0, 0, 5))["error"].is_string());
        assert!(parse(&plan_outcomes(0.5, 0, 3, 9))["error"].is_string());
        assert!(parse(&balance_explorer(1.0, 1, 0, 0.5))["error"].is_string());
        assert!(parse(&balance_explorer(1.0, 10, 0, 1.0))["error"].is_string());
    }
}
