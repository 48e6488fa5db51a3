//! Fixtures shared by the integration tests and the acceptance suite.
#![allow(dead_code)]

use dcrn_core::autodiff::{gradient_check, GradCheckOptions, GradCheckReport, Graph, Lstm, NodeId, ParamStore, Tensor};
use dcrn_core::losses::{
    encoder_objective, influence_vector, loss_ce, loss_factual, loss_orthogonal, mmd, Bandwidth, LossWeights,
    ObjectiveConfig,
};
use dcrn_core::model::{encoder_forward, init_params, Batch, Block, ModelConfig, Network};
use dcrn_core::sim::{Normalization, Split, Trajectory};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub const GRAD_TOLERANCE: f64 = 1e-4;

pub fn random(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Tensor {
    Tensor::matrix(rows, cols, (0..rows * cols).map(|_| rng.random_range(-scale..scale)).collect()).unwrap()
}

/// Finite-difference check of the scalar `build` returns, over every
/// parameter coordinate.
pub fn check(store: &ParamStore, build: impl Fn(&mut Graph, &ParamStore) -> NodeId) -> GradCheckReport {
    gradient_check(
        store,
        |s| {
            let mut g = Graph::new();
            let out = build(&mut g, s);
            Ok(g.value(out).item())
        },
        |s| {
            let mut g = Graph::new();
            let out = build(&mut g, s);
            Ok(g.backward(out)?.for_store(s))
        },
        GradCheckOptions::default(),
    )
    .unwrap()
}

/// Two patients over four steps with both treatment arms present.
pub fn tiny_trajectories() -> Vec<Trajectory> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    (0..2)
        .map(|p| Trajectory {
            id: p,
            split: Split::Train,
            statics: None,
            covariates: (0..4).map(|_| (0..8).map(|_| rng.random_range(-1.0..1.0)).collect()).collect(),
            treatments: if p == 0 { vec![1, 0, 1, 0] } else { vec![0, 1, 0, 1] },
            outcomes: (0..4).map(|_| rng.random_range(0.2..1.0)).collect(),
        })
        .collect()
}

/// The gradient checks of the combined objective and each of its
/// components, named.
pub fn loss_gradient_reports() -> Vec<(&'static str, GradCheckReport)> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut out = Vec::new();

    // Factual loss with per-row weights.
    let mut s = ParamStore::new("p");
    let x = s.insert("x", random(&mut rng, 6, 3, 1.0));
    let w = s.insert("w", random(&mut rng, 3, 1, 1.0));
    let y = random(&mut rng, 6, 1, 1.0);
    let omega = [1.2, 3.5, 1.0, 2.0, 1.7, 4.1];
    out.push((
        "factual loss with weights",
        check(&s, |g, s| {
            let (x, w) = (g.param(s, x), g.param(s, w));
            let yh = g.matmul(x, w).unwrap();
            loss_factual(g, yh, &y, &omega).unwrap()
        }),
    ));

    // MMD between the two arms, fixed bandwidth.
    let mut s = ParamStore::new("p");
    let x = s.insert("x", random(&mut rng, 7, 3, 1.0));
    let groups = [Some(true), Some(false), Some(true), None, Some(false), Some(false), Some(true)];
    out.push((
        "MMD discrepancy",
        check(&s, |g, s| {
            let x = g.param(s, x);
            mmd(g, x, &groups, Bandwidth::Fixed(0.9)).unwrap().unwrap().0
        }),
    ));

    // Cross-entropy of both treatment heads.
    let mut s = ParamStore::new("p");
    let a = s.insert("a", random(&mut rng, 5, 1, 2.0));
    let b = s.insert("b", random(&mut rng, 5, 1, 2.0));
    let labels = Tensor::column(vec![1.0, 0.0, 0.0, 1.0, 1.0]);
    out.push((
        "treatment cross-entropy",
        check(&s, |g, s| {
            let a = g.param(s, a);
            let b = g.param(s, b);
            let (pa, pb) = (g.sigmoid(a), g.sigmoid(b));
            loss_ce(g, pa, pb, &labels).unwrap()
        }),
    ));

    // Orthogonality through absolute weight chains.
    let mut s = ParamStore::new("p");
    let gates: Vec<_> = (0..4).map(|k| s.insert(format!("g{k}"), random(&mut rng, 4, 3, 1.0))).collect();
    let chains: Vec<[_; 2]> = (0..3)
        .map(|f| {
            [
                s.insert(format!("l1_{f}"), random(&mut rng, 3, 5, 1.0)),
                s.insert(format!("l2_{f}"), random(&mut rng, 5, 2, 1.0)),
            ]
        })
        .collect();
    out.push((
        "orthogonality of influence chains",
        check(&s, |g, s| {
            let gate_nodes: Vec<NodeId> = gates.iter().map(|&id| g.param(s, id)).collect();
            let w: Vec<NodeId> = chains
                .iter()
                .map(|c| {
                    let layers = [g.param(s, c[0]), g.param(s, c[1])];
                    influence_vector(g, &gate_nodes, &layers).unwrap()
                })
                .collect();
            loss_orthogonal(g, w[0], w[1], w[2]).unwrap()
        }),
    ));

    // The full encoder objective on a 2 x 4 batch, with the data-dependent
    // constants frozen from a first pass.
    let cfg = ModelConfig {
        repr_dim: 3,
        rnn_hidden: 3,
        fc_hidden: 3,
        factor_dim: 2,
        dropout: 0.0,
        ..ModelConfig::default()
    };
    // Glorot weights put the orthogonality term in the hundreds at these
    // sizes; halving them keeps the loss O(1) so central differences
    // resolve the smallest gradient coordinates above roundoff.
    let mut store = init_params(&cfg, Block::Encoder, 8, 3).unwrap();
    let ids: Vec<_> = store.iter().map(|(id, _, _)| id).collect();
    for id in ids {
        let halved = store.get(id).map(|v| 0.5 * v);
        *store.get_mut(id) = halved;
    }
    let trajs = tiny_trajectories();
    let refs: Vec<&Trajectory> = trajs.iter().collect();
    let batch = Batch::new(&refs, &Normalization::identity(8)).unwrap();
    let obj_cfg = ObjectiveConfig {
        bandwidth: Bandwidth::Fixed(1.3),
        ..ObjectiveConfig::new(LossWeights::default(), 0.5)
    };
    let objective = |g: &mut Graph, s: &ParamStore, frozen| {
        let net = Network::bind(g, &cfg, s).unwrap();
        let run = encoder_forward(g, &net, &batch).unwrap();
        encoder_objective(g, &net, s, &run, &batch, &obj_cfg, frozen).unwrap()
    };
    let stats = objective(&mut Graph::new(), &store, None).stats;
    out.push((
        "full encoder objective",
        check(&store, |g, s| objective(g, s, Some(&stats)).total),
    ));
    out
}

/// An LSTM cell wrapped in a scalar loss, for the op-level checks.
pub fn lstm_report() -> GradCheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut s = ParamStore::new("p");
    let lstm = Lstm::new("cell", 3, 4);
    lstm.init(&mut s, &mut rng);
    let x = random(&mut rng, 2, 3, 1.0);
    check(&s, |g, s| {
        let nodes = lstm.nodes(g, s);
        let x = g.constant(x.clone());
        let h0 = g.constant(Tensor::zeros(&[2, 4]));
        let c0 = g.constant(Tensor::zeros(&[2, 4]));
        let (h1, c1) = dcrn_core::autodiff::lstm_cell(g, x, h0, c0, &nodes).unwrap();
        let (h2, _) = dcrn_core::autodiff::lstm_cell(g, x, h1, c1, &nodes).unwrap();
        let sq = g.square(h2);
        g.sum(sq)
    })
}

/// `|total - (MSE + λ_R·‖θ‖²)|` for the objective with every auxiliary
/// weight at zero and ω fixed to one, on a simulated batch.
pub fn stripped_objective_gap() -> f64 {
    use dcrn_core::sim::{generate_dataset, SimConfig};
    let sim = SimConfig {
        n_patients: 30,
        max_len: 6,
        horizon: 2,
        seed: 21,
        ..SimConfig::default()
    };
    let ds = generate_dataset(&sim).unwrap();
    let refs: Vec<_> = ds.split(Split::Train).collect();
    let batch = Batch::new(&refs, &ds.meta.normalization).unwrap();
    let cfg = ModelConfig {
        dropout: 0.0,
        ..ModelConfig::default()
    };
    let store = init_params(&cfg, Block::Encoder, 8, 4).unwrap();
    let mut g = Graph::new();
    let net = Network::bind(&mut g, &cfg, &store).unwrap();
    let run = encoder_forward(&mut g, &net, &batch).unwrap();
    let lambda_r = 1e-4;
    let obj_cfg = ObjectiveConfig {
        use_omega: false,
        ..ObjectiveConfig::new(
            LossWeights {
                alpha: 0.0,
                beta: 0.0,
                gamma: 0.0,
                lambda_r,
            },
            ds.meta.treated_fraction,
        )
    };
    let obj = encoder_objective(&mut g, &net, &store, &run, &batch, &obj_cfg, None).unwrap();
    let (mut se, mut n) = (0.0, 0usize);
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
    (obj.values.total - (se / n as f64 + lambda_r * l2)).abs()
}

/// Hex SHA-256 over a parameter store's values in insertion order.
pub fn checksum(store: &ParamStore) -> String {
    use sha2::{Digest, Sha256};
    let mut h = Sha256::new();
    for v in store.flatten() {
        h.update(v.to_le_bytes());
    }
    hex::encode(h.finalize())
}

/// Trains both blocks on a small simulated dataset and returns the encoder
/// checksum before and after decoder training, with the decoder report.
pub fn two_block_smoke_run() -> (String, String, dcrn_core::training::TrainReport) {
    use dcrn_core::sim::{generate_dataset, SimConfig};
    use dcrn_core::training::{train_decoder, train_encoder, TrainConfig};
    let ds = generate_dataset(&SimConfig {
        n_patients: 60,
        max_len: 10,
        horizon: 3,
        seed: 2,
        ..SimConfig::default()
    })
    .unwrap();
    let model = ModelConfig {
        repr_dim: 6,
        rnn_hidden: 6,
        fc_hidden: 6,
        factor_dim: 3,
        ..ModelConfig::default()
    };
    let train = TrainConfig {
        batch_size: 16,
        decoder_batch_size: 64,
        max_epochs: 3,
        tau: 3,
        seed: 8,
        ..TrainConfig::default()
    };
    let (encoder, _) = train_encoder(&ds, &model, &train).unwrap();
    let before = checksum(&encoder);
    let (_, report) = train_decoder(&ds, &model, &encoder, &train).unwrap();
    (before, checksum(&encoder), report)
}

pub const TINY_CONFIG: &str = r#"
[sim]
n_patients = 40
max_len = 8
horizon = 3
test_patients = 6

[model]
repr_dim = 4
rnn_hidden = 4
fc_hidden = 4
factor_dim = 2

[train]
batch_size = 16
decoder_batch_size = 64
max_epochs = 2
tau = 3

[eval.ablation]
zetas = [0.0, 0.5, 1.0]
seeds = [0]
taus = [1, 3]
plan_taus = [3]
plan_patients = 10
variants = ["dcrn", "mean", "last-value"]
"#;

/// Runs the CLI in `dir` with the tiny config, panicking on failure.
pub fn dcrn(dir: &Path, args: &[&str]) -> Output {
    let out = Command::new(env!("CARGO_BIN_EXE_dcrn"))
        .current_dir(dir)
        .args(["--config", "tiny.toml", "--seed", "3", "--out", "out"])
        .args(args)
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

pub fn workspace() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("tiny.toml"), TINY_CONFIG).unwrap();
    dir
}

fn artifacts(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut files: Vec<_> = std::fs::read_dir(dir.join("out"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.file_name().unwrap() != "run_manifest.json")
        .collect();
    files.sort();
    files
        .into_iter()
        .map(|p| (p.strip_prefix(dir).unwrap().to_path_buf(), std::fs::read(&p).unwrap()))
        .collect()
}

/// Runs simulate, train, evaluate, analyze-factors and export, returning
/// every artifact except the manifest.
pub fn pipeline_artifacts(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    dcrn(dir, &["simulate"]);
    dcrn(dir, &["train", "--data", "out/dataset.jsonl"]);
    dcrn(dir, &["evaluate", "--model", "out/model.json", "--test", "out/counterfactual_test.json"]);
    dcrn(dir, &["analyze-factors", "--model", "out/model.json"]);
    dcrn(dir, &["export", "--data", "out/dataset.jsonl"]);
    artifacts(dir)
}
