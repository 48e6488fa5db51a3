//! Loss components: weighted factual MSE, MMD balancing of the outcome
//! factor, treatment-head cross-entropy, and the orthogonality penalty on
//! absolute weight-chain influence vectors.

mod objective;

pub use objective::{decoder_objective, encoder_objective, LossValues, Objective, ObjectiveConfig, ObjectiveStats};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{AutodiffError, Graph, NodeId, Tensor};

#[derive(Debug, Error)]
pub enum LossError {
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error("marginal treated rate {0} outside (0, 1)")]
    MarginalRate(f64),
    #[error("empty batch for {0}")]
    Empty(&'static str),
    #[error("length mismatch in {op}: {left} vs {right}")]
    Length { op: &'static str, left: usize, right: usize },
    #[error("non-finite loss component {0}")]
    NonFinite(&'static str),
    #[error("invalid loss weight {name} = {value}")]
    Weight { name: &'static str, value: f64 },
}

pub const PROPENSITY_CLAMP: (f64, f64) = (0.05, 0.95);
pub const PROB_CLAMP: (f64, f64) = (1e-7, 1.0 - 1e-7);

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub lambda_r: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            alpha: 0.4,
            beta: 1.0,
            gamma: 0.3,
            lambda_r: 1e-4,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<(), LossError> {
        for (name, value) in [
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("gamma", self.gamma),
            ("lambda_r", self.lambda_r),
        ] {
            if !(value >= 0.0 && value.is_finite()) {
                return Err(LossError::Weight { name, value });
            }
        }
        Ok(())
    }
}

/// Inverse-propensity weight from the confounder head. `a_c` is clamped
/// to [`PROPENSITY_CLAMP`], so `ω ∈ [1, 1 + 19·odds]`.
pub fn propensity_weight(treated: bool, a_c: f64, p_hat: f64) -> Result<f64, LossError> {
    if !(p_hat > 0.0 && p_hat < 1.0) {
        return Err(LossError::MarginalRate(p_hat));
    }
    let q = a_c.clamp(PROPENSITY_CLAMP.0, PROPENSITY_CLAMP.1);
    Ok(if treated {
        1.0 + p_hat / (1.0 - p_hat) * (1.0 - q) / q
    } else {
        1.0 + (1.0 - p_hat) / p_hat * q / (1.0 - q)
    })
}

/// `Σ_r coeff_r · (ŷ_r − y_r)²`.
pub fn weighted_squared_error(g: &mut Graph, y_hat: NodeId, y: &Tensor, coeff: Tensor) -> Result<NodeId, LossError> {
    let target = g.constant(y.clone());
    let diff = g.sub(y_hat, target)?;
    let sq = g.square(diff);
    let weighted = g.mul_const(sq, coeff)?;
    Ok(g.sum(weighted))
}

/// Mean of `ω·(y − ŷ)²`; `ω` enters as a constant.
pub fn loss_factual(g: &mut Graph, y_hat: NodeId, y: &Tensor, omega: &[f64]) -> Result<NodeId, LossError> {
    let n = g.value(y_hat).len();
    if n == 0 {
        return Err(LossError::Empty("factual loss"));
    }
    for (op, len) in [("factual loss targets", y.len()), ("factual loss weights", omega.len())] {
        if len != n {
            return Err(LossError::Length { op, left: n, right: len });
        }
    }
    let coeff = Tensor::column(omega.iter().map(|w| w / n as f64).collect());
    weighted_squared_error(g, y_hat, y, coeff)
}

/// `−Σ_r coeff_r · [a log p + (1 − a) log(1 − p)]` with `p` clamped.
pub fn weighted_bce(g: &mut Graph, p: NodeId, labels: &Tensor, coeff: &[f64]) -> Result<NodeId, LossError> {
    let p = g.clamp(p, PROB_CLAMP.0, PROB_CLAMP.1);
    let log_p = g.log(p)?;
    let neg = g.scale(p, -1.0);
    let q = g.add_scalar(neg, 1.0);
    let log_q = g.log(q)?;
    let pos_w = Tensor::column(labels.values().iter().zip(coeff).map(|(a, c)| -a * c).collect());
    let neg_w = Tensor::column(labels.values().iter().zip(coeff).map(|(a, c)| -(1.0 - a) * c).collect());
    let pos = g.mul_const(log_p, pos_w)?;
    let neg = g.mul_const(log_q, neg_w)?;
    let both = g.add(pos, neg)?;
    Ok(g.sum(both))
}

/// Mean binary cross-entropy of both treatment heads, summed.
pub fn loss_ce(g: &mut Graph, a_ic: NodeId, a_c: NodeId, labels: &Tensor) -> Result<NodeId, LossError> {
    let n = labels.len();
    if n == 0 {
        return Err(LossError::Empty("cross-entropy"));
    }
    let coeff = vec![1.0 / n as f64; n];
    let a = weighted_bce(g, a_ic, labels, &coeff)?;
    let b = weighted_bce(g, a_c, labels, &coeff)?;
    Ok(g.add(a, b)?)
}

/// Kernel bandwidth for the MMD.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Bandwidth {
    /// Median pairwise distance of the pooled sample, held constant.
    Median,
    Fixed(f64),
}

/// Median Euclidean distance over distinct pairs; 1 when degenerate.
pub fn median_distance(rows: &[&[f64]]) -> f64 {
    let mut d: Vec<f64> = Vec::with_capacity(rows.len() * rows.len().saturating_sub(1) / 2);
    for i in 0..rows.len() {
        for j in i + 1..rows.len() {
            let s: f64 = rows[i].iter().zip(rows[j]).map(|(a, b)| (a - b) * (a - b)).sum();
            d.push(s.sqrt());
        }
    }
    if d.is_empty() {
        return 1.0;
    }
    let mid = d.len() / 2;
    let (_, m, _) = d.select_nth_unstable_by(mid, f64::total_cmp);
    if *m > 0.0 && m.is_finite() {
        *m
    } else {
        1.0
    }
}

/// Squared MMD (biased V-statistic, RBF kernel) between the rows of `x`
/// labelled `Some(true)` and `Some(false)`; rows labelled `None` are
/// ignored. Returns the node and the bandwidth used, or `None` when either
/// group is empty.
pub fn mmd(
    g: &mut Graph,
    x: NodeId,
    groups: &[Option<bool>],
    bandwidth: Bandwidth,
) -> Result<Option<(NodeId, f64)>, LossError> {
    let n = g.value(x).rows();
    if groups.len() != n {
        return Err(LossError::Length {
            op: "mmd groups",
            left: n,
            right: groups.len(),
        });
    }
    let m = groups.iter().filter(|s| **s == Some(true)).count();
    let k = groups.iter().filter(|s| **s == Some(false)).count();
    if m == 0 || k == 0 {
        return Ok(None);
    }
    let sigma = match bandwidth {
        Bandwidth::Fixed(s) => s,
        Bandwidth::Median => {
            let xv = g.value(x);
            let rows: Vec<&[f64]> = (0..n).filter(|&r| groups[r].is_some()).map(|r| xv.row_slice(r)).collect();
            median_distance(&rows)
        }
    };
    let coef = |s: Option<bool>| match s {
        Some(true) => (1.0 / m as f64, 0.0),
        Some(false) => (0.0, 1.0 / k as f64),
        None => (0.0, 0.0),
    };
    let mut w = Tensor::zeros(&[n, n]);
    for i in 0..n {
        let (ai, bi) = coef(groups[i]);
        if ai == 0.0 && bi == 0.0 {
            continue;
        }
        for j in 0..n {
            let (aj, bj) = coef(groups[j]);
            w.set(i, j, ai * aj + bi * bj - ai * bj - bi * aj);
        }
    }
    let node = g.weighted_rbf_sum(x, w, sigma)?;
    Ok(Some((node, sigma)))
}

/// Squared MMD between two plain samples; 0 if either is empty.
pub fn mmd_value(a: &[Vec<f64>], b: &[Vec<f64>], bandwidth: Bandwidth) -> Result<f64, LossError> {
    if a.is_empty() || b.is_empty() {
        return Ok(0.0);
    }
    let d = a[0].len();
    let rows: Vec<f64> = a.iter().chain(b).flat_map(|r| r.iter().copied()).collect();
    let mut g = Graph::new();
    let x = g.constant(Tensor::matrix(a.len() + b.len(), d, rows)?);
    let groups: Vec<Option<bool>> = (0..a.len() + b.len()).map(|i| Some(i < a.len())).collect();
    Ok(mmd(&mut g, x, &groups, bandwidth)?.map_or(0.0, |(node, _)| g.value(node).item()))
}

/// `rowmean(Σ_gates |W_gate| · |L_1| · ... · |L_m|)` as a `[d, 1]` node.
pub fn influence_vector(g: &mut Graph, gates: &[NodeId], layers: &[NodeId]) -> Result<NodeId, LossError> {
    let mut acc = g.abs(gates[0]);
    for &w in &gates[1..] {
        let a = g.abs(w);
        acc = g.add(acc, a)?;
    }
    for &w in layers {
        let a = g.abs(w);
        acc = g.matmul(acc, a)?;
    }
    Ok(g.row_mean(acc))
}

/// Plain-value influence vector (same chain as [`influence_vector`]).
pub fn influence_values(gates: &[Tensor], layers: &[Tensor]) -> Result<Vec<f64>, LossError> {
    let mut g = Graph::new();
    let gates: Vec<NodeId> = gates.iter().map(|t| g.constant(t.clone())).collect();
    let layers: Vec<NodeId> = layers.iter().map(|t| g.constant(t.clone())).collect();
    let v = influence_vector(&mut g, &gates, &layers)?;
    Ok(g.value(v).values().to_vec())
}

/// `⟨I, C⟩ + ⟨I, O⟩ + ⟨O, C⟩`.
pub fn loss_orthogonal(g: &mut Graph, wi: NodeId, wc: NodeId, wo: NodeId) -> Result<NodeId, LossError> {
    let (li, lc, lo) = (g.value(wi).len(), g.value(wc).len(), g.value(wo).len());
    if li != lc || li != lo {
        return Err(LossError::Length {
            op: "orthogonality",
            left: li,
            right: if li != lc { lc } else { lo },
        });
    }
    let ic = g.mul(wi, wc)?;
    let io = g.mul(wi, wo)?;
    let oc = g.mul(wo, wc)?;
    let s = g.add(ic, io)?;
    let s = g.add(s, oc)?;
    Ok(g.sum(s))
}

/// `L_Y + α·L_D + β·L_C + γ·L_O + λ_R·R`, rejecting non-finite parts.
pub fn total_loss(g: &mut Graph, parts: &LossNodes, w: &LossWeights) -> Result<NodeId, LossError> {
    for (name, node) in [
        ("L_Y", parts.factual),
        ("L_D", parts.discrepancy),
        ("L_C", parts.treatment),
        ("L_O", parts.orthogonal),
        ("R", parts.l2),
    ] {
        if !g.value(node).is_finite() {
            return Err(LossError::NonFinite(name));
        }
    }
    let mut total = parts.factual;
    for (node, k) in [
        (parts.discrepancy, w.alpha),
        (parts.treatment, w.beta),
        (parts.orthogonal, w.gamma),
        (parts.l2, w.lambda_r),
    ] {
        if k != 0.0 {
            let term = g.scale(node, k);
            total = g.add(total, term)?;
        }
    }
    Ok(total)
}

/// Scalar nodes of the five components.
#[derive(Clone, Copy, Debug)]
pub struct LossNodes {
    pub factual: NodeId,
    pub discrepancy: NodeId,
    pub treatment: NodeId,
    pub orthogonal: NodeId,
    pub l2: NodeId,
}

/// `Σ ‖θ‖²` over the given parameter nodes.
pub fn l2_penalty(g: &mut Graph, params: &[NodeId]) -> Result<NodeId, LossError> {
    let mut total = g.constant(Tensor::scalar(0.0));
    for &p in params {
        let sq = g.square(p);
        let s = g.sum(sq);
        total = g.add(total, s)?;
    }
    Ok(total)
}
