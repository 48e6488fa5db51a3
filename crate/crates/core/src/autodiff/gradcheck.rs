//! Central finite-difference checks of analytic gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{AutodiffError, GradStore, ParamStore};

#[derive(Clone, Copy, Debug)]
pub struct GradCheckOptions {
    pub epsilon: f64,
    /// Coordinates checked; `None` checks all of them.
    pub max_coords: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            epsilon: 1e-5,
            max_coords: None,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_param: String,
    pub coords_checked: usize,
}

/// Compares `grad_fn` against central differences of `loss_fn`.
///
/// The relative error of one coordinate is
/// `|analytic - numeric| / max(|analytic|, |numeric|, 1e-12)`.
pub fn gradient_check(
    store: &ParamStore,
    loss_fn: impl Fn(&ParamStore) -> Result<f64, AutodiffError>,
    grad_fn: impl Fn(&ParamStore) -> Result<GradStore, AutodiffError>,
    options: GradCheckOptions,
) -> Result<GradCheckReport, AutodiffError> {
    if !(1e-7..=1e-3).contains(&options.epsilon) {
        return Err(AutodiffError::Config(format!(
            "finite-difference step {} outside [1e-7, 1e-3]",
            options.epsilon
        )));
    }
    let analytic = grad_fn(store)?;
    let mut coords = Vec::new();
    for (id, _, t) in store.iter() {
        for k in 0..t.len() {
            coords.push((id, k));
        }
    }
    if let Some(limit) = options.max_coords {
        if limit < coords.len() {
            let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
            let mut picked: Vec<usize> = sample(&mut rng, coords.len(), limit).into_vec();
            picked.sort_unstable();
            coords = picked.into_iter().map(|i| coords[i]).collect();
        }
    }

    let mut probe = store.clone();
    let mut worst = 0.0_f64;
    let mut worst_param = String::new();
    for &(id, k) in &coords {
        let original = store.get(id).values()[k];
        probe.get_mut(id).values_mut()[k] = original + options.epsilon;
        let plus = loss_fn(&probe)?;
        probe.get_mut(id).values_mut()[k] = original - options.epsilon;
        let minus = loss_fn(&probe)?;
        probe.get_mut(id).values_mut()[k] = original;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(AutodiffError::NonFinite(format!(
                "loss at {}[{k}]",
                store.name(id)
            )));
        }
        let numeric = (plus - minus) / (2.0 * options.epsilon);
        let a = analytic.get(id).values()[k];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-12);
        if rel > worst {
            worst = rel;
            worst_param = format!("{}[{k}]", store.name(id));
        }
    }
    Ok(GradCheckReport {
        max_rel_error: worst,
        worst_param,
        coords_checked: coords.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{Graph, Tensor};

    #[test]
    fn square_at_three() {
        let mut store = ParamStore::new("p");
        let w = store.insert("w", Tensor::scalar(3.0));
        let build = |s: &ParamStore| {
            let mut g = Graph::new();
            let x = g.param(s, w);
            let y = g.square(x);
            (g, y)
        };
        let report = gradient_check(
            &store,
            |s| {
                let (g, y) = build(s);
                Ok(g.value(y).item())
            },
            |s| {
                let (g, y) = build(s);
                let grads = g.backward(y)?.for_store(s);
                assert_eq!(grads.get(w).item(), 6.0);
                Ok(grads)
            },
            GradCheckOptions::default(),
        )
        .unwrap();
        assert!(report.max_rel_error < 1e-8, "{report:?}");
    }

    #[test]
    fn rejects_out_of_range_epsilon() {
        let store = ParamStore::new("p");
        let opts = GradCheckOptions {
            epsilon: 0.1,
            ..Default::default()
        };
        assert!(gradient_check(&store, |_| Ok(0.0), |s| Ok(GradStore::zeros_like(s)), opts).is_err());
    }
}
