use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use dcrn_core::config::{load_config, ConfigError, RunConfig};
use dcrn_core::eval::{
    ablation_suite, counterfactual_eval, export_longitudinal_csv, factor_analysis, ingest_longitudinal_csv,
    plan_selection_accuracy, DcrnForecaster, EvalError, Variant,
};
use dcrn_core::manifest::{unix_now, RunManifest};
use dcrn_core::model::Architecture;
use dcrn_core::sim::{generate_counterfactual_test, generate_dataset, test_histories, CounterfactualSet, Dataset, COVARIATE_NAMES};
use dcrn_core::training::{random_search, train_model, TrainedModel};

/// Disentangled counterfactual recurrent networks: simulate, train, evaluate.
///
/// Formats: datasets are JSON Lines (`dataset.jsonl`) with a
/// `dataset.meta.json` sidecar; models are JSON checkpoints; tables are CSV
/// with a leading `# seed=.. config_hash=..` comment. Every command writes
/// `run_manifest.json` into its output directory.
#[derive(Parser, Debug)]
#[command(name = "dcrn", version)]
struct Cli {
    /// TOML config with [sim], [model], [train] and [eval] sections.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides sim.seed and train.seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (created if missing).
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Worker threads for search and ablation.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Observational dataset plus the counterfactual test set.
    Simulate {
        #[arg(long)]
        zeta: Option<f64>,
        #[arg(long)]
        n_patients: Option<usize>,
    },
    /// Encoder then decoder on a dataset; writes model.json and loss curves.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        max_epochs: Option<usize>,
        #[arg(long, value_parser = parse_architecture)]
        architecture: Option<Architecture>,
    },
    /// Counterfactual n-RMSE and plan-selection accuracy of a model.
    Evaluate {
        #[arg(long)]
        model: PathBuf,
        /// Counterfactual test set from `simulate`; regenerated from the config otherwise.
        #[arg(long)]
        test: Option<PathBuf>,
        /// Plan-selection horizons, comma separated.
        #[arg(long, value_delimiter = ',')]
        plan_taus: Option<Vec<usize>>,
        /// Score only one-hot plans instead of all 2^tau.
        #[arg(long)]
        one_hot: bool,
    },
    /// Covariate influence on the I, C and O factors.
    AnalyzeFactors {
        #[arg(long)]
        model: PathBuf,
        /// Dataset whose covariate names label the rows.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Variants and baselines across a zeta grid; writes the three CSVs.
    Ablate {
        #[arg(long, value_delimiter = ',')]
        zetas: Option<Vec<f64>>,
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        #[arg(long)]
        max_epochs: Option<usize>,
    },
    /// Random hyperparameter search ranked by decoder validation MSE.
    Hpsearch {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long)]
        max_epochs: Option<usize>,
    },
    /// Long-format CSV (one row per patient step) to a dataset.
    Ingest {
        #[arg(long)]
        input: PathBuf,
        /// The file has no split column; split patients 70/15/15 by order.
        #[arg(long)]
        no_split_column: bool,
    },
    /// Dataset to long-format CSV.
    Export {
        #[arg(long)]
        data: PathBuf,
    },
}

fn parse_architecture(s: &str) -> Result<Architecture, String> {
    match s {
        "dcrn" => Ok(Architecture::Dcrn),
        "hg-t" => Ok(Architecture::HgT),
        _ => Err(format!("unknown architecture {s:?} (expected dcrn or hg-t)")),
    }
}

/// `category` is printed as `error[category]`; usage errors exit with 2.
struct Failure {
    category: &'static str,
    message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Self {
            category: "usage",
            message: message.into(),
        }
    }

    fn runtime(category: &'static str, e: impl std::fmt::Display) -> Self {
        Self {
            category,
            message: e.to_string(),
        }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        match e {
            ConfigError::Io { .. } => Failure::usage(e.to_string()),
            _ => Failure::runtime("config", e),
        }
    }
}

impl From<EvalError> for Failure {
    fn from(e: EvalError) -> Self {
        let category = match e {
            EvalError::Parse { .. } => "parse",
            EvalError::Io(_) => "io",
            EvalError::Train(_) | EvalError::Model(_) => "train",
            EvalError::Sim(_) => "sim",
            EvalError::Input(_) => "eval",
        };
        Failure::runtime(category, e)
    }
}

fn io(e: impl std::fmt::Display) -> Failure {
    Failure::runtime("io", e)
}

fn existing(path: &Path) -> Result<&Path, Failure> {
    if path.exists() {
        Ok(path)
    } else {
        Err(Failure::usage(format!("no such file: {}", path.display())))
    }
}

fn read_dataset(path: &Path) -> Result<Dataset, Failure> {
    Dataset::read(existing(path)?).map_err(|e| Failure::runtime("io", e))
}

fn read_model(path: &Path) -> Result<TrainedModel, Failure> {
    TrainedModel::load(existing(path)?).map_err(|e| Failure::runtime("io", e))
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<PathBuf, Failure> {
    let text = serde_json::to_string_pretty(value).map_err(io)?;
    std::fs::write(path, text + "\n").map_err(|e| io(format!("{}: {e}", path.display())))?;
    Ok(path.to_path_buf())
}

fn run(cli: Cli, argv: Vec<String>) -> Result<(), Failure> {
    let started = unix_now();
    let mut cfg = match &cli.config {
        Some(p) => load_config(existing(p)?)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.sim.seed = s;
        cfg.train.seed = s;
    }
    let out = cli.out.clone();
    std::fs::create_dir_all(&out).map_err(|e| io(format!("{}: {e}", out.display())))?;
    let mut inputs: Vec<PathBuf> = cli.config.iter().cloned().collect();
    let command: &'static str;
    let mut outputs = Vec::new();

    match cli.command {
        Command::Simulate { zeta, n_patients } => {
            command = "simulate";
            if let Some(z) = zeta {
                cfg.sim.zeta = z;
            }
            if let Some(n) = n_patients {
                cfg.sim.n_patients = n;
            }
            cfg.validate()?;
            let data = generate_dataset(&cfg.sim).map_err(|e| Failure::runtime("sim", e))?;
            let path = out.join("dataset.jsonl");
            data.write(&path).map_err(io)?;
            outputs.push(path.clone());
            outputs.push(Dataset::meta_path(&path));
            let test = generate_counterfactual_test(&cfg.sim, cfg.sim.horizon).map_err(|e| Failure::runtime("sim", e))?;
            outputs.push(write_json(&out.join("counterfactual_test.json"), &test)?);
        }
        Command::Train {
            data,
            max_epochs,
            architecture,
        } => {
            command = "train";
            if let Some(n) = max_epochs {
                cfg.train.max_epochs = n;
            }
            if let Some(a) = architecture {
                cfg.model.architecture = a;
            }
            cfg.validate()?;
            let dataset = read_dataset(&data)?;
            inputs.push(data);
            let (model, enc, dec) =
                train_model(&dataset, &cfg.model, &cfg.train).map_err(|e| Failure::runtime("train", e))?;
            let path = out.join("model.json");
            model.save(&path).map_err(io)?;
            outputs.push(path);
            for (name, report) in [("encoder_report.csv", &enc), ("decoder_report.csv", &dec)] {
                let path = out.join(name);
                let file = std::fs::File::create(&path).map_err(io)?;
                report.write_csv(file).map_err(|e| Failure::runtime("io", e))?;
                outputs.push(path);
            }
        }
        Command::Evaluate {
            model,
            test,
            plan_taus,
            one_hot,
        } => {
            command = "evaluate";
            cfg.validate()?;
            let trained = read_model(&model)?;
            inputs.push(model);
            let set: CounterfactualSet = match test {
                Some(p) => {
                    let text = std::fs::read_to_string(existing(&p)?).map_err(io)?;
                    inputs.push(p);
                    serde_json::from_str(&text).map_err(|e| Failure::runtime("parse", e))?
                }
                None => generate_counterfactual_test(&cfg.sim, cfg.sim.horizon).map_err(|e| Failure::runtime("sim", e))?,
            };
            let forecaster = DcrnForecaster::new(&trained, trained.config.architecture.as_str());
            let counterfactual = counterfactual_eval(&forecaster, &set, set.tau)?;
            let mut plans = Vec::new();
            for tau in plan_taus.unwrap_or_else(|| cfg.eval.ablation.plan_taus.clone()) {
                if tau == 0 || tau > 5 || tau >= cfg.sim.max_len {
                    return Err(Failure::usage(format!("plan horizon {tau} outside 1..=5")));
                }
                let sim = dcrn_core::sim::SimConfig {
                    test_patients: cfg.eval.ablation.plan_patients,
                    ..cfg.sim.clone()
                };
                let histories = test_histories(&sim, tau, std::iter::once(sim.max_len - tau))
                    .map_err(|e| Failure::runtime("sim", e))?;
                plans.push(plan_selection_accuracy(&forecaster, &histories, tau, one_hot)?);
            }
            let report = serde_json::json!({ "counterfactual": counterfactual, "plan_selection": plans });
            outputs.push(write_json(&out.join("eval_report.json"), &report)?);
        }
        Command::AnalyzeFactors { model, data } => {
            command = "analyze-factors";
            cfg.validate()?;
            let trained = read_model(&model)?;
            inputs.push(model);
            let names: Vec<String> = match data {
                Some(d) => {
                    let names = read_dataset(&d)?.meta.covariate_names;
                    inputs.push(d);
                    names
                }
                None => COVARIATE_NAMES.iter().map(|s| s.to_string()).collect(),
            };
            let table = factor_analysis(&trained.encoder, &trained.config, &names)?;
            let path = out.join("factor_influence.csv");
            let file = std::fs::File::create(&path).map_err(io)?;
            table.write_csv(file, cfg.train.seed, &cfg.hash())?;
            outputs.push(path);
        }
        Command::Ablate {
            zetas,
            seeds,
            max_epochs,
        } => {
            command = "ablate";
            if let Some(z) = zetas {
                cfg.eval.ablation.zetas = z;
            }
            if let Some(s) = seeds {
                cfg.eval.ablation.seeds = s;
            }
            if let Some(n) = max_epochs {
                cfg.train.max_epochs = n;
            }
            cfg.validate()?;
            let (report, _) = ablation_suite(&cfg.eval.ablation, &cfg.sim, &cfg.model, &cfg.train, cli.jobs)?;
            for w in &report.warnings {
                eprintln!("warning: {w}");
            }
            outputs.extend(report.write_csvs(&out, cfg.sim.seed, &cfg.hash())?);
            outputs.push(write_json(&out.join("ablation_report.json"), &report)?);
            let skipped: Vec<&str> = Variant::ALL
                .iter()
                .filter(|v| !cfg.eval.ablation.variants.contains(v))
                .map(|v| v.name())
                .collect();
            if !skipped.is_empty() {
                eprintln!("note: variants not requested: {}", skipped.join(", "));
            }
        }
        Command::Hpsearch {
            data,
            trials,
            max_epochs,
        } => {
            command = "hpsearch";
            if let Some(n) = trials {
                cfg.eval.search_trials = n;
            }
            if let Some(n) = max_epochs {
                cfg.train.max_epochs = n;
            }
            cfg.validate()?;
            let dataset = read_dataset(&data)?;
            inputs.push(data);
            let result = random_search(
                &dataset,
                &cfg.model,
                &cfg.train,
                &cfg.eval.search,
                cfg.eval.search_trials,
                cfg.train.seed,
                cli.jobs,
            )
            .map_err(|e| Failure::runtime("train", e))?;
            outputs.push(write_json(&out.join("leaderboard.json"), &result.leaderboard)?);
            let mut best = cfg.clone();
            best.model = result.best.model.clone();
            best.train = result.best.train.clone();
            let path = out.join("best_config.toml");
            std::fs::write(&path, best.to_toml()?).map_err(io)?;
            outputs.push(path);
        }
        Command::Ingest {
            input,
            no_split_column,
        } => {
            command = "ingest";
            cfg.validate()?;
            let mut schema = cfg.eval.ingest.clone();
            if no_split_column {
                schema.split = None;
            }
            let dataset = ingest_longitudinal_csv(existing(&input)?, &schema)?;
            inputs.push(input);
            let path = out.join("dataset.jsonl");
            dataset.write(&path).map_err(io)?;
            outputs.push(path.clone());
            outputs.push(Dataset::meta_path(&path));
        }
        Command::Export { data } => {
            command = "export";
            cfg.validate()?;
            let dataset = read_dataset(&data)?;
            inputs.push(data);
            let path = out.join("dataset.csv");
            let file = std::fs::File::create(&path).map_err(io)?;
            export_longitudinal_csv(&dataset, std::io::BufWriter::new(file))?;
            outputs.push(path);
        }
    }

    let seed = cfg.sim.seed;
    let mut manifest = RunManifest::new(command, argv, &cfg, seed, started);
    manifest.inputs = inputs;
    manifest.finish(&out, &outputs).map_err(io)?;
    Ok(())
}

fn main() -> ExitCode {
    let argv: Vec<String> = std::env::args().collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    match run(cli, argv) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error[{}]: {}", f.category, f.message.lines().next().unwrap_or_default());
            ExitCode::from(if f.category == "usage" { 2 } else { 1 })
        }
    }
}
