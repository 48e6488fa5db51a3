use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::model::{Architecture, ModelConfig};
use crate::sim::{generate_counterfactual_test, generate_dataset, test_histories, SimConfig, Split};
use crate::training::{train_model, TrainConfig, TrainedModel};

use super::{
    counterfactual_eval, factor_analysis, plan_selection_accuracy, write_header_comment, DcrnForecaster, EvalError,
    FactorTable, Forecaster, LastValueForecaster, MeanForecaster, PlanReport,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    Dcrn,
    /// γ = α = 0.
    DcrnNoBalance,
    /// ω = 1.
    DcrnUnweighted,
    #[serde(rename = "hg-t")]
    HgT,
    Mean,
    LastValue,
}

impl Variant {
    pub const ALL: [Variant; 6] = [
        Variant::Dcrn,
        Variant::DcrnNoBalance,
        Variant::DcrnUnweighted,
        Variant::HgT,
        Variant::Mean,
        Variant::LastValue,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Dcrn => "dcrn",
            Variant::DcrnNoBalance => "dcrn-no-balance",
            Variant::DcrnUnweighted => "dcrn-unweighted",
            Variant::HgT => "hg-t",
            Variant::Mean => "mean",
            Variant::LastValue => "last-value",
        }
    }

    pub fn is_trained(self) -> bool {
        !matches!(self, Variant::Mean | Variant::LastValue)
    }

    /// The base configuration with this variant's changes applied.
    pub fn configure(self, model: &ModelConfig, train: &TrainConfig) -> (ModelConfig, TrainConfig) {
        let (mut m, mut t) = (model.clone(), train.clone());
        match self {
            Variant::Dcrn => m.architecture = Architecture::Dcrn,
            Variant::DcrnNoBalance => {
                m.architecture = Architecture::Dcrn;
                t.weights.alpha = 0.0;
                t.weights.gamma = 0.0;
            }
            Variant::DcrnUnweighted => {
                m.architecture = Architecture::Dcrn;
                t.use_omega = false;
            }
            Variant::HgT => m.architecture = Architecture::HgT,
            Variant::Mean | Variant::LastValue => {}
        }
        (m, t)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblationConfig {
    pub zetas: Vec<f64>,
    pub seeds: Vec<u64>,
    /// Forecast horizons reported in the n-RMSE table.
    pub taus: Vec<usize>,
    pub variants: Vec<Variant>,
    /// Horizons for plan selection; empty skips it.
    pub plan_taus: Vec<usize>,
    /// Patients scored for plan selection.
    pub plan_patients: usize,
    /// Score only the one-hot plans instead of all `2^tau`.
    pub plan_one_hot: bool,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self {
            zetas: (0..=10).map(|i| i as f64 / 10.0).collect(),
            seeds: vec![0, 1, 2, 3, 4],
            taus: vec![1, 5],
            variants: Variant::ALL.to_vec(),
            plan_taus: vec![3, 5],
            plan_patients: 200,
            plan_one_hot: false,
        }
    }
}

impl AblationConfig {
    pub fn validate(&self, sim: &SimConfig) -> Result<(), EvalError> {
        let bad = |m: String| Err(EvalError::Input(m));
        if self.zetas.is_empty() || self.seeds.is_empty() || self.taus.is_empty() || self.variants.is_empty() {
            return bad("ablation needs at least one zeta, seed, horizon and variant".into());
        }
        if let Some(z) = self.zetas.iter().find(|z| !(0.0..=1.0).contains(*z)) {
            return bad(format!("zeta {z} outside [0, 1]"));
        }
        if let Some(t) = self.taus.iter().find(|&&t| t == 0 || t > sim.horizon) {
            return bad(format!("horizon {t} outside 1..={}", sim.horizon));
        }
        if let Some(t) = self.plan_taus.iter().find(|&&t| t == 0 || t > 5 || t >= sim.max_len) {
            return bad(format!("plan horizon {t} outside 1..=5"));
        }
        if !self.plan_taus.is_empty() && self.plan_patients == 0 {
            return bad("plan_patients must be positive".into());
        }
        Ok(())
    }
}

/// Everything measured for one variant on one (ζ, seed) dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub variant: Variant,
    pub zeta: f64,
    pub seed: u64,
    pub normalizer: f64,
    /// n-RMSE at horizons `1..=sim.horizon`.
    pub per_step: Vec<f64>,
    pub plans: Vec<PlanReport>,
    pub factors: Option<FactorTable>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NrmseRow {
    pub model: String,
    pub zeta: f64,
    pub tau: usize,
    pub mean: f64,
    pub sd: f64,
    pub seeds: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanRow {
    pub model: String,
    pub zeta: f64,
    pub tau: usize,
    pub accuracy_mean: f64,
    pub accuracy_sd: f64,
    pub regret_mean: f64,
    pub seeds: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub cells: Vec<CellResult>,
    pub nrmse: Vec<NrmseRow>,
    pub plans: Vec<PlanRow>,
    /// Variants that failed to train, with the reason.
    pub warnings: Vec<String>,
}

fn mean_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let sd = if xs.len() > 1 {
        (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (mean, sd)
}

impl AblationReport {
    fn assemble(cfg: &AblationConfig, cells: Vec<CellResult>, warnings: Vec<String>) -> Self {
        let mut nrmse = Vec::new();
        let mut plans = Vec::new();
        for &v in &cfg.variants {
            for &z in &cfg.zetas {
                let here: Vec<&CellResult> = cells.iter().filter(|c| c.variant == v && c.zeta == z).collect();
                if here.is_empty() {
                    continue;
                }
                for &tau in &cfg.taus {
                    let xs: Vec<f64> = here.iter().map(|c| c.per_step[tau - 1]).collect();
                    let (mean, sd) = mean_sd(&xs);
                    nrmse.push(NrmseRow {
                        model: v.name().into(),
                        zeta: z,
                        tau,
                        mean,
                        sd,
                        seeds: xs.len(),
                    });
                }
                for &tau in &cfg.plan_taus {
                    let reports: Vec<&PlanReport> =
                        here.iter().flat_map(|c| c.plans.iter().filter(|p| p.tau == tau)).collect();
                    if reports.is_empty() {
                        continue;
                    }
                    let acc: Vec<f64> = reports.iter().map(|p| p.accuracy).collect();
                    let reg: Vec<f64> = reports.iter().map(|p| p.mean_regret).collect();
                    let (accuracy_mean, accuracy_sd) = mean_sd(&acc);
                    plans.push(PlanRow {
                        model: v.name().into(),
                        zeta: z,
                        tau,
                        accuracy_mean,
                        accuracy_sd,
                        regret_mean: mean_sd(&reg).0,
                        seeds: acc.len(),
                    });
                }
            }
        }
        Self {
            cells,
            nrmse,
            plans,
            warnings,
        }
    }

    pub fn nrmse_row(&self, model: Variant, zeta: f64, tau: usize) -> Option<&NrmseRow> {
        self.nrmse
            .iter()
            .find(|r| r.model == model.name() && r.zeta == zeta && r.tau == tau)
    }

    pub fn write_nrmse_csv(&self, mut out: impl Write, seed: u64, hash: &str) -> Result<(), EvalError> {
        write_header_comment(&mut out, seed, hash, "normalizer=max_abs_outcome_of_test_set")?;
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["model", "zeta", "tau", "mean", "sd", "seeds"])?;
        for r in &self.nrmse {
            w.serialize((&r.model, r.zeta, r.tau, r.mean, r.sd, r.seeds))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_plan_csv(&self, mut out: impl Write, seed: u64, hash: &str) -> Result<(), EvalError> {
        write_header_comment(&mut out, seed, hash, "")?;
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["model", "zeta", "tau", "accuracy_mean", "accuracy_sd", "regret_mean", "seeds"])?;
        for r in &self.plans {
            w.serialize((&r.model, r.zeta, r.tau, r.accuracy_mean, r.accuracy_sd, r.regret_mean, r.seeds))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_factor_csv(&self, mut out: impl Write, seed: u64, hash: &str) -> Result<(), EvalError> {
        write_header_comment(&mut out, seed, hash, "")?;
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "model", "zeta", "seed", "covariate", "I", "C", "O", "share_I", "share_C", "share_O",
        ])?;
        for c in &self.cells {
            let Some(t) = &c.factors else { continue };
            for r in &t.rows {
                w.serialize((
                    c.variant.name(),
                    c.zeta,
                    c.seed,
                    &r.covariate,
                    r.raw[0],
                    r.raw[1],
                    r.raw[2],
                    r.share[0],
                    r.share[1],
                    r.share[2],
                ))?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// `nrmse_by_zeta.csv`, `plan_accuracy.csv` and `factor_influence.csv`.
    pub fn write_csvs(&self, dir: &Path, seed: u64, hash: &str) -> Result<Vec<std::path::PathBuf>, EvalError> {
        std::fs::create_dir_all(dir)?;
        let paths = [
            dir.join("nrmse_by_zeta.csv"),
            dir.join("plan_accuracy.csv"),
            dir.join("factor_influence.csv"),
        ];
        self.write_nrmse_csv(std::fs::File::create(&paths[0])?, seed, hash)?;
        self.write_plan_csv(std::fs::File::create(&paths[1])?, seed, hash)?;
        self.write_factor_csv(std::fs::File::create(&paths[2])?, seed, hash)?;
        Ok(paths.to_vec())
    }
}

/// Models trained for one (ζ, seed) cell, for callers that evaluate further.
pub struct TrainedCell {
    pub zeta: f64,
    pub seed: u64,
    pub models: Vec<(Variant, TrainedModel)>,
}

fn run_cell(
    cfg: &AblationConfig,
    sim: &SimConfig,
    model: &ModelConfig,
    train: &TrainConfig,
    zeta: f64,
    seed: u64,
) -> Result<(Vec<CellResult>, Vec<String>, TrainedCell), EvalError> {
    let sim = SimConfig {
        zeta,
        seed,
        ..sim.clone()
    };
    let dataset = generate_dataset(&sim)?;
    let test = generate_counterfactual_test(&sim, sim.horizon)?;
    let plan_sets = cfg
        .plan_taus
        .iter()
        .map(|&tau| {
            let s = SimConfig {
                test_patients: cfg.plan_patients,
                ..sim.clone()
            };
            Ok((tau, test_histories(&s, tau, std::iter::once(sim.max_len - tau))?))
        })
        .collect::<Result<Vec<_>, EvalError>>()?;
    let mut results = Vec::new();
    let mut warnings = Vec::new();
    let mut trained = Vec::new();
    for &variant in &cfg.variants {
        let mut keep = None;
        let forecaster: Box<dyn Forecaster + '_> = match variant {
            Variant::Mean => Box::new(MeanForecaster::from_trajectories(dataset.split(Split::Train))?),
            Variant::LastValue => Box::new(LastValueForecaster),
            _ => {
                let (m, mut t) = variant.configure(model, train);
                t.seed = seed;
                match train_model(&dataset, &m, &t) {
                    Ok((tm, _, _)) => {
                        keep = Some(tm);
                        Box::new(DcrnForecaster::new(keep.as_ref().expect("just set"), variant.name()))
                    }
                    Err(e) => {
                        warnings.push(format!("{} skipped at zeta={zeta} seed={seed}: {e}", variant.name()));
                        continue;
                    }
                }
            }
        };
        let report = counterfactual_eval(forecaster.as_ref(), &test, sim.horizon)?;
        let plans = plan_sets
            .iter()
            .map(|(tau, h)| plan_selection_accuracy(forecaster.as_ref(), h, *tau, cfg.plan_one_hot))
            .collect::<Result<Vec<_>, _>>()?;
        let factors = match &keep {
            Some(tm) => Some(factor_analysis(&tm.encoder, &tm.config, &dataset.meta.covariate_names)?),
            None => None,
        };
        drop(forecaster);
        results.push(CellResult {
            variant,
            zeta,
            seed,
            normalizer: report.normalizer,
            per_step: report.per_step,
            plans,
            factors,
        });
        if let Some(tm) = keep {
            trained.push((variant, tm));
        }
    }
    Ok((
        results,
        warnings,
        TrainedCell {
            zeta,
            seed,
            models: trained,
        },
    ))
}

/// Trains and evaluates every variant on every (ζ, seed) dataset, running
/// cells on up to `jobs` threads. Results do not depend on `jobs`.
pub fn ablation_suite(
    cfg: &AblationConfig,
    sim: &SimConfig,
    model: &ModelConfig,
    train: &TrainConfig,
    jobs: usize,
) -> Result<(AblationReport, Vec<TrainedCell>), EvalError> {
    cfg.validate(sim)?;
    let cells: Vec<(f64, u64)> = cfg
        .zetas
        .iter()
        .flat_map(|&z| cfg.seeds.iter().map(move |&s| (z, s)))
        .collect();
    type CellOut = Result<(Vec<CellResult>, Vec<String>, TrainedCell), EvalError>;
    let run = |i: usize| -> CellOut { run_cell(cfg, sim, model, train, cells[i].0, cells[i].1) };
    let jobs = jobs.clamp(1, cells.len());
    let mut outs: Vec<(usize, CellOut)> = if jobs == 1 {
        (0..cells.len()).map(|i| (i, run(i))).collect()
    } else {
        let next = std::sync::atomic::AtomicUsize::new(0);
        let done = std::sync::Mutex::new(Vec::with_capacity(cells.len()));
        std::thread::scope(|s| {
            for _ in 0..jobs {
                s.spawn(|| loop {
                    let i = next.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                    if i >= cells.len() {
                        break;
                    }
                    let out = run(i);
                    done.lock().expect("no poisoned cell").push((i, out));
                });
            }
        });
        done.into_inner().expect("no poisoned cell")
    };
    outs.sort_by_key(|(i, _)| *i);
    let mut results = Vec::new();
    let mut warnings = Vec::new();
    let mut trained = Vec::new();
    for (_, out) in outs {
        let (r, w, t) = out?;
        results.extend(r);
        warnings.extend(w);
        trained.push(t);
    }
    Ok((AblationReport::assemble(cfg, results, warnings), trained))
}
