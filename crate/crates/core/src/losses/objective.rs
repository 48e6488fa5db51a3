//! Block objectives: the combined loss over every step of an encoder pass or
//! a decoder rollout.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, NodeId, ParamStore, Tensor};
use crate::model::{Batch, CutBatch, EncoderRun, Network, StepOut};

use super::{
    influence_vector, l2_penalty, loss_orthogonal, mmd, propensity_weight, total_loss, weighted_bce,
    weighted_squared_error, Bandwidth, LossError, LossNodes, LossWeights,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveConfig {
    pub weights: LossWeights,
    /// `false` gives the ω = 1 ablation.
    pub use_omega: bool,
    /// Marginal treated rate on the training split.
    pub p_hat: f64,
    pub bandwidth: Bandwidth,
}

impl ObjectiveConfig {
    pub fn new(weights: LossWeights, p_hat: f64) -> Self {
        Self {
            weights,
            use_omega: true,
            p_hat,
            bandwidth: Bandwidth::Median,
        }
    }
}

/// Data-dependent constants of one evaluation. Passing them back in
/// freezes the objective as a function of the parameters only.
#[derive(Clone, Debug, PartialEq)]
pub struct ObjectiveStats {
    /// Per step, per row.
    pub omega: Vec<Vec<f64>>,
    /// Per step; `None` where a treatment group was empty.
    pub sigma: Vec<Option<f64>>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossValues {
    pub l_y: f64,
    pub l_d: f64,
    pub l_c: f64,
    pub l_o: f64,
    pub l2: f64,
    pub total: f64,
}

pub struct Objective {
    pub total: NodeId,
    pub nodes: LossNodes,
    pub values: LossValues,
    pub stats: ObjectiveStats,
}

struct StepTerms<'a> {
    out: &'a StepOut,
    target: &'a Tensor,
    labels: &'a Tensor,
    mask: Vec<f64>,
}

/// Objective of an encoder pass: every step with a next-step target.
pub fn encoder_objective(
    g: &mut Graph,
    net: &Network,
    store: &ParamStore,
    run: &EncoderRun,
    batch: &Batch,
    cfg: &ObjectiveConfig,
    frozen: Option<&ObjectiveStats>,
) -> Result<Objective, LossError> {
    let steps = batch.steps() - 1;
    let terms: Vec<StepTerms> = (0..steps)
        .map(|t| StepTerms {
            out: &run.steps[t],
            target: &batch.outcomes[t + 1],
            labels: &batch.treatments[t],
            mask: batch.target_mask(t),
        })
        .collect();
    assemble(g, net, store, &terms, batch.target_count(), cfg, frozen)
}

/// Objective of a teacher-forced decoder rollout over the cuts in `cuts`.
pub fn decoder_objective(
    g: &mut Graph,
    net: &Network,
    store: &ParamStore,
    steps: &[StepOut],
    cuts: &CutBatch,
    cfg: &ObjectiveConfig,
    frozen: Option<&ObjectiveStats>,
) -> Result<Objective, LossError> {
    let n = cuts.len();
    let terms: Vec<StepTerms> = steps
        .iter()
        .enumerate()
        .map(|(u, out)| StepTerms {
            out,
            target: &cuts.targets[u],
            labels: &cuts.treatments[u],
            mask: vec![1.0; n],
        })
        .collect();
    assemble(g, net, store, &terms, n * steps.len(), cfg, frozen)
}

fn assemble(
    g: &mut Graph,
    net: &Network,
    store: &ParamStore,
    terms: &[StepTerms],
    count: usize,
    cfg: &ObjectiveConfig,
    frozen: Option<&ObjectiveStats>,
) -> Result<Objective, LossError> {
    if count == 0 || terms.is_empty() {
        return Err(LossError::Empty("objective"));
    }
    cfg.weights.validate()?;
    let inv = 1.0 / count as f64;
    let zero = g.constant(Tensor::scalar(0.0));
    let (mut l_y, mut l_c, mut l_d) = (zero, zero, zero);
    let mut stats = ObjectiveStats {
        omega: Vec::with_capacity(terms.len()),
        sigma: Vec::with_capacity(terms.len()),
    };
    for (t, term) in terms.iter().enumerate() {
        let labels = term.labels.values();
        let omega = match frozen {
            Some(f) => f.omega[t].clone(),
            None if cfg.use_omega => {
                let a_c = g.value(term.out.a_c).values();
                labels
                    .iter()
                    .zip(a_c)
                    .map(|(&a, &p)| propensity_weight(a == 1.0, p, cfg.p_hat))
                    .collect::<Result<Vec<_>, _>>()?
            }
            None => vec![1.0; labels.len()],
        };
        let coeff = Tensor::column(omega.iter().zip(&term.mask).map(|(w, m)| w * m * inv).collect());
        let sq = weighted_squared_error(g, term.out.y_hat, term.target, coeff)?;
        l_y = g.add(l_y, sq)?;

        let ce_coeff: Vec<f64> = term.mask.iter().map(|m| m * inv).collect();
        let ic = weighted_bce(g, term.out.a_ic, term.labels, &ce_coeff)?;
        let c = weighted_bce(g, term.out.a_c, term.labels, &ce_coeff)?;
        l_c = g.add(l_c, ic)?;
        l_c = g.add(l_c, c)?;

        let groups: Vec<Option<bool>> = labels
            .iter()
            .zip(&term.mask)
            .map(|(&a, &m)| (m > 0.0).then_some(a == 1.0))
            .collect();
        let bw = match frozen.and_then(|f| f.sigma[t]) {
            Some(s) => Bandwidth::Fixed(s),
            None => cfg.bandwidth,
        };
        let sigma = if cfg.weights.alpha > 0.0 || frozen.is_some() {
            match mmd(g, term.out.factors[2], &groups, bw)? {
                Some((node, s)) => {
                    l_d = g.add(l_d, node)?;
                    Some(s)
                }
                None => None,
            }
        } else {
            None
        };
        stats.omega.push(omega);
        stats.sigma.push(sigma);
    }
    let l_d = g.scale(l_d, 1.0 / terms.len() as f64);

    let mut w = [zero; 3];
    for (k, slot) in w.iter_mut().enumerate() {
        let (gates, layers) = net.chain(k);
        *slot = influence_vector(g, &gates, &layers)?;
    }
    let l_o = loss_orthogonal(g, w[0], w[1], w[2])?;

    let params: Vec<NodeId> = store.iter().map(|(id, _, _)| g.param(store, id)).collect();
    let l2 = l2_penalty(g, &params)?;

    let nodes = LossNodes {
        factual: l_y,
        discrepancy: l_d,
        treatment: l_c,
        orthogonal: l_o,
        l2,
    };
    let total = total_loss(g, &nodes, &cfg.weights)?;
    let values = LossValues {
        l_y: g.value(l_y).item(),
        l_d: g.value(l_d).item(),
        l_c: g.value(l_c).item(),
        l_o: g.value(l_o).item(),
        l2: g.value(l2).item(),
        total: g.value(total).item(),
    };
    Ok(Objective {
        total,
        nodes,
        values,
        stats,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{encoder_forward, init_params, Block, ModelConfig};
    use crate::sim::{generate_dataset, SimConfig, Split};

    #[test]
    fn stripped_objective_is_mse_plus_l2() {
        let sim = SimConfig {
            n_patients: 10,
            max_len: 5,
            horizon: 2,
            seed: 9,
            ..SimConfig::default()
        };
        let ds = generate_dataset(&sim).unwrap();
        let refs: Vec<_> = ds.split(Split::Train).collect();
        let batch = Batch::new(&refs, &ds.meta.normalization).unwrap();
        let mcfg = ModelConfig {
            dropout: 0.0,
            ..ModelConfig::default()
        };
        let store = init_params(&mcfg, Block::Encoder, 8, 1).unwrap();
        let mut g = Graph::new();
        let net = Network::bind(&mut g, &mcfg, &store).unwrap();
        let run = encoder_forward(&mut g, &net, &batch).unwrap();
        let cfg = ObjectiveConfig {
            weights: LossWeights {
                alpha: 0.0,
                beta: 0.0,
                gamma: 0.0,
                lambda_r: 1e-3,
            },
            use_omega: false,
            p_hat: ds.meta.treated_fraction,
            bandwidth: Bandwidth::Median,
        };
        let obj = encoder_objective(&mut g, &net, &store, &run, &batch, &cfg, None).unwrap();

        let mut se = 0.0;
        let mut n = 0;
        for t in 0..batch.steps() - 1 {
            let pred = g.value(run.steps[t].y_hat);
            for r in 0..batch.rows() {
                if batch.lengths[r] > t + 1 {
                    se += (pred.get(r, 0) - batch.outcomes[t + 1].get(r, 0)).powi(2);
                    n += 1;
                }
            }
        }
        let l2: f64 = store.iter().map(|(_, _, t)| t.squared_norm()).sum();
        let expected = se / n as f64 + 1e-3 * l2;
        assert!((obj.values.total - expected).abs() < 1e-12);
    }
}
