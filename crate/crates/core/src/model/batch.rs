use crate::autodiff::Tensor;
use crate::sim::{Normalization, Trajectory};

use super::ModelError;

/// Normalised trajectories laid out step-major. Shorter trajectories are
/// zero-padded; `lengths` records the real extent of each row.
#[derive(Clone, Debug)]
pub struct Batch {
    pub lengths: Vec<usize>,
    /// Per step, `[rows, d]`.
    pub covariates: Vec<Tensor>,
    /// Per step, `[rows, 1]`.
    pub treatments: Vec<Tensor>,
    /// Per step, `[rows, 1]`.
    pub outcomes: Vec<Tensor>,
}

impl Batch {
    pub fn new(trajectories: &[&Trajectory], norm: &Normalization) -> Result<Self, ModelError> {
        if trajectories.is_empty() {
            return Err(ModelError::Input("empty batch".into()));
        }
        let d = norm.covariate_mean.len();
        let steps = trajectories.iter().map(|t| t.len()).max().unwrap_or(0);
        let rows = trajectories.len();
        let mut covariates = vec![Tensor::zeros(&[rows, d]); steps];
        let mut treatments = vec![Tensor::zeros(&[rows, 1]); steps];
        let mut outcomes = vec![Tensor::zeros(&[rows, 1]); steps];
        for (r, traj) in trajectories.iter().enumerate() {
            for t in 0..traj.len() {
                let x = &traj.covariates[t];
                if x.len() != d {
                    return Err(ModelError::Input(format!(
                        "trajectory {} step {t}: {} covariates, expected {d}",
                        traj.id,
                        x.len()
                    )));
                }
                for (j, v) in norm.covariates(x).into_iter().enumerate() {
                    covariates[t].set(r, j, v);
                }
                treatments[t].set(r, 0, f64::from(traj.treatments[t]));
                outcomes[t].set(r, 0, norm.outcome(traj.outcomes[t]));
            }
        }
        Ok(Self {
            lengths: trajectories.iter().map(|t| t.len()).collect(),
            covariates,
            treatments,
            outcomes,
        })
    }

    pub fn rows(&self) -> usize {
        self.lengths.len()
    }

    pub fn steps(&self) -> usize {
        self.covariates.len()
    }

    /// 1 where step `t` has a next-step target.
    pub fn target_mask(&self, t: usize) -> Vec<f64> {
        self.lengths.iter().map(|&n| f64::from(u8::from(n > t + 1))).collect()
    }

    pub fn target_count(&self) -> usize {
        self.lengths.iter().map(|n| n.saturating_sub(1)).sum()
    }
}

/// Decoder rows: one per (patient row, cut), with the `tau` observed
/// treatments and outcomes that follow the cut.
#[derive(Clone, Debug)]
pub struct CutBatch {
    /// `(row, t)`: the history ends at step `t` of batch row `row`.
    pub cuts: Vec<(usize, usize)>,
    /// Per decoder step, `[n, 1]`: the treatment applied at `t + u`.
    pub treatments: Vec<Tensor>,
    /// Per decoder step, `[n, 1]`: the outcome at `t + u + 1`.
    pub targets: Vec<Tensor>,
    /// `[n, 1]`: the last observed outcome, at `t`.
    pub last_outcome: Tensor,
}

impl CutBatch {
    /// Every cut `t` in `1..=len - 1 - tau` of every row.
    pub fn training(batch: &Batch, tau: usize) -> Self {
        let cuts: Vec<(usize, usize)> = batch
            .lengths
            .iter()
            .enumerate()
            .flat_map(|(r, &n)| (1..n.saturating_sub(tau)).map(move |t| (r, t)))
            .collect();
        Self::from_cuts(batch, cuts, tau)
    }

    pub fn from_cuts(batch: &Batch, cuts: Vec<(usize, usize)>, tau: usize) -> Self {
        let pick = |series: &[Tensor], offset: usize| {
            Tensor::column(cuts.iter().map(|&(r, t)| series[t + offset].get(r, 0)).collect())
        };
        Self {
            treatments: (0..tau).map(|u| pick(&batch.treatments, u)).collect(),
            targets: (0..tau).map(|u| pick(&batch.outcomes, u + 1)).collect(),
            last_outcome: pick(&batch.outcomes, 0),
            cuts,
        }
    }

    pub fn len(&self) -> usize {
        self.cuts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cuts.is_empty()
    }

    pub fn tau(&self) -> usize {
        self.targets.len()
    }
}
