use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::patient::{sample_patient, step_dynamics, treatment_prob, PatientState, PatientStatics, COVARIATE_NAMES};
use super::{stream_rng, SimConfig, SimError, STREAM_OBSERVATIONAL};
use rand::Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "train" => Some(Split::Train),
            "val" => Some(Split::Val),
            "test" => Some(Split::Test),
            _ => None,
        }
    }
}

/// One patient's observed sequence. `covariates[t]`, `treatments[t]` and
/// `outcomes[t]` all refer to step `t`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub id: u64,
    pub split: Split,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub statics: Option<PatientStatics>,
    pub covariates: Vec<Vec<f64>>,
    pub treatments: Vec<u8>,
    pub outcomes: Vec<f64>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.outcomes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outcomes.is_empty()
    }

    /// First `len` steps.
    pub fn prefix(&self, len: usize) -> Trajectory {
        Trajectory {
            id: self.id,
            split: self.split,
            statics: self.statics.clone(),
            covariates: self.covariates[..len].to_vec(),
            treatments: self.treatments[..len].to_vec(),
            outcomes: self.outcomes[..len].to_vec(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    /// `max |Y|` on the training split.
    pub outcome_scale: f64,
    pub covariate_mean: Vec<f64>,
    pub covariate_std: Vec<f64>,
}

impl Normalization {
    pub fn identity(dim: usize) -> Self {
        Self {
            outcome_scale: 1.0,
            covariate_mean: vec![0.0; dim],
            covariate_std: vec![1.0; dim],
        }
    }

    pub fn covariates(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(&self.covariate_mean)
            .zip(&self.covariate_std)
            .map(|((v, m), s)| (v - m) / s)
            .collect()
    }

    pub fn outcome(&self, y: f64) -> f64 {
        y / self.outcome_scale
    }

    pub fn denormalize_outcome(&self, y: f64) -> f64 {
        y * self.outcome_scale
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub zeta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Fraction of treated steps on the training split.
    pub treated_fraction: f64,
    pub normalization: Normalization,
    pub covariate_names: Vec<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub meta: DatasetMeta,
    pub trajectories: Vec<Trajectory>,
}

impl Dataset {
    /// Builds a dataset, computing statistics on the training split.
    pub fn from_trajectories(
        trajectories: Vec<Trajectory>,
        covariate_names: Vec<String>,
        zeta: Option<f64>,
        seed: Option<u64>,
    ) -> Result<Self, SimError> {
        let dim = covariate_names.len();
        let train: Vec<&Trajectory> = trajectories.iter().filter(|t| t.split == Split::Train).collect();
        if train.is_empty() {
            return Err(SimError::Config("no training trajectories".into()));
        }
        let (mut treated, mut steps) = (0usize, 0usize);
        let mut outcome_scale = 0.0_f64;
        let mut sum = vec![0.0; dim];
        let mut sum_sq = vec![0.0; dim];
        for t in &train {
            treated += t.treatments.iter().filter(|&&a| a == 1).count();
            steps += t.treatments.len();
            for y in &t.outcomes {
                outcome_scale = outcome_scale.max(y.abs());
            }
            for x in &t.covariates {
                for k in 0..dim {
                    sum[k] += x[k];
                    sum_sq[k] += x[k] * x[k];
                }
            }
        }
        let n = steps as f64;
        let treated_fraction = treated as f64 / n;
        if treated == 0 || treated == steps {
            return Err(SimError::OverlapViolation(treated_fraction));
        }
        let covariate_mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
        let covariate_std = (0..dim)
            .map(|k| {
                let var = (sum_sq[k] / n - covariate_mean[k] * covariate_mean[k]).max(0.0);
                if var > 1e-24 {
                    var.sqrt()
                } else {
                    1.0
                }
            })
            .collect();
        if outcome_scale == 0.0 {
            outcome_scale = 1.0;
        }
        Ok(Self {
            meta: DatasetMeta {
                zeta,
                seed,
                treated_fraction,
                normalization: Normalization {
                    outcome_scale,
                    covariate_mean,
                    covariate_std,
                },
                covariate_names,
            },
            trajectories,
        })
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &Trajectory> {
        self.trajectories.iter().filter(move |t| t.split == split)
    }

    pub fn covariate_dim(&self) -> usize {
        self.meta.covariate_names.len()
    }

    pub fn total_steps(&self) -> usize {
        self.trajectories.iter().map(Trajectory::len).sum()
    }

    /// Sidecar metadata path for a dataset file `x.jsonl` is `x.meta.json`.
    pub fn meta_path(path: &Path) -> PathBuf {
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("dataset");
        path.with_file_name(format!("{stem}.meta.json"))
    }

    /// One JSON record per line plus a metadata sidecar.
    pub fn write(&self, path: &Path) -> Result<(), SimError> {
        let io = |e: std::io::Error| SimError::Io(format!("{}: {e}", path.display()));
        let mut out = std::io::BufWriter::new(std::fs::File::create(path).map_err(io)?);
        for t in &self.trajectories {
            let line = serde_json::to_string(t).map_err(|e| SimError::Io(e.to_string()))?;
            writeln!(out, "{line}").map_err(io)?;
        }
        out.flush().map_err(io)?;
        let meta = serde_json::to_string_pretty(&self.meta).map_err(|e| SimError::Io(e.to_string()))?;
        std::fs::write(Self::meta_path(path), meta + "\n").map_err(io)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self, SimError> {
        let io = |e: std::io::Error| SimError::Io(format!("{}: {e}", path.display()));
        let file = std::fs::File::open(path).map_err(io)?;
        let mut trajectories = Vec::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(io)?;
            if line.trim().is_empty() {
                continue;
            }
            let t: Trajectory = serde_json::from_str(&line)
                .map_err(|e| SimError::Io(format!("{} line {}: {e}", path.display(), i + 1)))?;
            trajectories.push(t);
        }
        let meta_path = Self::meta_path(path);
        let meta_text = std::fs::read_to_string(&meta_path)
            .map_err(|e| SimError::Io(format!("{}: {e}", meta_path.display())))?;
        let meta: DatasetMeta =
            serde_json::from_str(&meta_text).map_err(|e| SimError::Io(format!("{}: {e}", meta_path.display())))?;
        Ok(Self { meta, trajectories })
    }
}

/// Assigns `n` patients to splits in order: train first, then val, then test.
pub(crate) fn split_for(index: usize, n: usize, fractions: [f64; 3]) -> Split {
    let n_train = (fractions[0] * n as f64).round() as usize;
    let n_val = (fractions[1] * n as f64).round() as usize;
    if index < n_train {
        Split::Train
    } else if index < n_train + n_val {
        Split::Val
    } else {
        Split::Test
    }
}

/// An observational run together with the simulator state at every step.
#[derive(Clone, Debug)]
pub struct ObservedPath {
    pub covariates: Vec<[f64; 8]>,
    pub treatments: Vec<u8>,
    pub outcomes: Vec<f64>,
    pub states: Vec<PatientState>,
}

/// Observational run of `len` steps under the biased policy.
pub fn simulate_trajectory(
    config: &SimConfig,
    statics: &PatientStatics,
    start: PatientState,
    len: usize,
    rng: &mut rand_chacha::ChaCha8Rng,
) -> Result<ObservedPath, SimError> {
    let mut covariates = Vec::with_capacity(len);
    let mut treatments = Vec::with_capacity(len);
    let mut outcomes = Vec::with_capacity(len);
    let mut states = Vec::with_capacity(len);
    let mut state = start;
    for t in 0..len {
        covariates.push(state.covariates(statics));
        outcomes.push(state.rho);
        let p = treatment_prob(&state, config.zeta);
        let a = rng.random::<f64>() < p;
        treatments.push(a as u8);
        let next = if t + 1 < len {
            Some(step_dynamics(config, statics, &state, a, rng)?)
        } else {
            None
        };
        states.push(state);
        match next {
            Some(n) => state = n,
            None => break,
        }
    }
    Ok(ObservedPath {
        covariates,
        treatments,
        outcomes,
        states,
    })
}

pub fn generate_dataset(config: &SimConfig) -> Result<Dataset, SimError> {
    config.validate()?;
    let mut trajectories = Vec::with_capacity(config.n_patients);
    for i in 0..config.n_patients {
        let mut rng = stream_rng(config.seed, STREAM_OBSERVATIONAL, i as u64);
        let (statics, state) = sample_patient(config, i as u64, &mut rng);
        let path = simulate_trajectory(config, &statics, state, config.max_len, &mut rng)?;
        trajectories.push(Trajectory {
            id: i as u64,
            split: split_for(i, config.n_patients, config.split),
            statics: Some(statics),
            covariates: path.covariates.into_iter().map(|x| x.to_vec()).collect(),
            treatments: path.treatments,
            outcomes: path.outcomes,
        });
    }
    Dataset::from_trajectories(
        trajectories,
        COVARIATE_NAMES.iter().map(|s| s.to_string()).collect(),
        Some(config.zeta),
        Some(config.seed),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SimConfig {
        SimConfig {
            n_patients: 40,
            max_len: 12,
            horizon: 3,
            seed: 5,
            ..SimConfig::default()
        }
    }

    #[test]
    fn shapes_and_static_columns() {
        let ds = generate_dataset(&small()).unwrap();
        assert_eq!(ds.trajectories.len(), 40);
        assert_eq!(ds.total_steps(), 40 * 12);
        for t in &ds.trajectories {
            assert_eq!(t.covariates.len(), 12);
            assert_eq!(t.treatments.len(), 12);
            for x in &t.covariates {
                for k in [0, 1, 2, 4, 5] {
                    assert_eq!(x[k], t.covariates[0][k]);
                }
            }
            for (x, y) in t.covariates.iter().zip(&t.outcomes) {
                assert_eq!(x[7], *y);
            }
        }
        let p = ds.meta.treated_fraction;
        assert!(p > 0.0 && p < 1.0);
    }

    #[test]
    fn splits_are_disjoint_and_cover() {
        let ds = generate_dataset(&small()).unwrap();
        let counts = [Split::Train, Split::Val, Split::Test].map(|s| ds.split(s).count());
        assert_eq!(counts, [28, 6, 6]);
    }

    #[test]
    fn same_seed_same_dataset() {
        assert_eq!(generate_dataset(&small()).unwrap(), generate_dataset(&small()).unwrap());
        let other = SimConfig { seed: 6, ..small() };
        assert_ne!(generate_dataset(&small()).unwrap(), generate_dataset(&other).unwrap());
    }

    #[test]
    fn file_round_trip_is_exact() {
        let ds = generate_dataset(&small()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        ds.write(&path).unwrap();
        assert!(Dataset::meta_path(&path).exists());
        assert_eq!(Dataset::read(&path).unwrap(), ds);
    }

    #[test]
    fn all_untreated_violates_overlap() {
        let t = Trajectory {
            id: 0,
            split: Split::Train,
            statics: None,
            covariates: vec![vec![1.0]; 3],
            treatments: vec![0, 0, 0],
            outcomes: vec![1.0, 2.0, 3.0],
        };
        let err = Dataset::from_trajectories(vec![t], vec!["x".into()], None, None).unwrap_err();
        assert!(matches!(err, SimError::OverlapViolation(_)));
    }
}
