use crate::autodiff::{lstm_cell, Graph, LstmNodes, NodeId, ParamStore, Tensor};

use super::{Batch, Block, Layout, ModelConfig, ModelError, FACTORS};

/// Weight and bias nodes of one affine layer.
#[derive(Clone, Copy, Debug)]
pub struct Dense {
    pub w: NodeId,
    pub b: NodeId,
}

impl Dense {
    fn bind(g: &mut Graph, store: &ParamStore, name: &str) -> Self {
        Self {
            w: g.param_named(store, &format!("{name}.w")),
            b: g.param_named(store, &format!("{name}.b")),
        }
    }

    fn apply(&self, g: &mut Graph, x: NodeId) -> Result<NodeId, ModelError> {
        let y = g.matmul(x, self.w)?;
        Ok(g.add_row(y, self.b)?)
    }
}

/// One block's parameters registered on a graph.
#[derive(Clone, Debug)]
pub struct Network {
    pub cfg: ModelConfig,
    pub block: Block,
    pub streams: Vec<LstmNodes>,
    pub rnn_a: LstmNodes,
    pub rnn_y: LstmNodes,
    /// `[factor][layer]`.
    pub nets: [[Dense; 2]; 3],
    pub head_ic: Dense,
    pub head_c: Dense,
    pub head_y: [Dense; 2],
}

/// Recurrent `(h, c)` pairs of every LSTM in a block.
#[derive(Clone, Debug)]
pub struct RecState {
    pub streams: Vec<(NodeId, NodeId)>,
    pub a: (NodeId, NodeId),
    pub y: (NodeId, NodeId),
}

/// Nodes produced by one step of either block.
#[derive(Clone, Debug)]
pub struct StepOut {
    /// Stream outputs before dropout (Φ for DCRN).
    pub phi: Vec<NodeId>,
    /// I, C, O.
    pub factors: [NodeId; 3],
    pub a_ic: NodeId,
    pub a_c: NodeId,
    pub y_hat: NodeId,
}

/// Values of one encoder step, for inspection.
#[derive(Clone, Debug, PartialEq)]
pub struct FactorBundle {
    pub phi: Vec<Tensor>,
    pub i: Tensor,
    pub c: Tensor,
    pub o: Tensor,
    pub a_ic: Tensor,
    pub a_c: Tensor,
    pub y_hat: Tensor,
}

impl Network {
    pub fn bind(g: &mut Graph, cfg: &ModelConfig, store: &ParamStore) -> Result<Self, ModelError> {
        let block = match store.tag() {
            "enc" => Block::Encoder,
            "dec" => Block::Decoder,
            other => return Err(ModelError::Config(format!("unknown parameter block {other}"))),
        };
        let first = super::Layout::new(cfg, block, 1).streams[0].input_name(0);
        let covariate_dim = store
            .by_name(&first)
            .ok_or_else(|| ModelError::Config(format!("{first} missing; architecture mismatch?")))?
            .rows();
        let layout = Layout::new(cfg, block, covariate_dim);
        let streams = layout.streams.iter().map(|s| s.nodes(g, store)).collect();
        let net = |g: &mut Graph, f: &str| {
            [
                Dense::bind(g, store, &format!("net_{f}.l1")),
                Dense::bind(g, store, &format!("net_{f}.l2")),
            ]
        };
        Ok(Self {
            cfg: cfg.clone(),
            block,
            streams,
            rnn_a: layout.rnn_a.nodes(g, store),
            rnn_y: layout.rnn_y.nodes(g, store),
            nets: [net(g, FACTORS[0]), net(g, FACTORS[1]), net(g, FACTORS[2])],
            head_ic: Dense::bind(g, store, "head_ic"),
            head_c: Dense::bind(g, store, "head_c"),
            head_y: [Dense::bind(g, store, "head_y.l1"), Dense::bind(g, store, "head_y.l2")],
        })
    }

    pub fn zero_state(&self, g: &mut Graph, rows: usize) -> RecState {
        let mut pair = |n: usize| {
            (
                g.constant(Tensor::zeros(&[rows, n])),
                g.constant(Tensor::zeros(&[rows, n])),
            )
        };
        RecState {
            streams: (0..self.streams.len()).map(|_| pair(self.cfg.repr_dim)).collect(),
            a: pair(self.cfg.rnn_hidden),
            y: pair(self.cfg.rnn_hidden),
        }
    }

    /// Advances the covariate streams and computes the three factors.
    pub fn factors(
        &self,
        g: &mut Graph,
        inputs: &[NodeId],
        state: &mut RecState,
    ) -> Result<(Vec<NodeId>, [NodeId; 3]), ModelError> {
        let mut phi = Vec::with_capacity(self.streams.len());
        let mut dropped = Vec::with_capacity(self.streams.len());
        for (k, w) in self.streams.iter().enumerate() {
            let (h, c) = state.streams[k];
            let (h, c) = lstm_cell(g, inputs[k], h, c, w)?;
            state.streams[k] = (h, c);
            phi.push(h);
            dropped.push(g.dropout(h, self.cfg.dropout));
        }
        let mut factors = [phi[0]; 3];
        for (k, layers) in self.nets.iter().enumerate() {
            let src = dropped[self.cfg.stream_for_factor(k)];
            let hidden = layers[0].apply(g, src)?;
            let hidden = g.relu(hidden);
            factors[k] = layers[1].apply(g, hidden)?;
        }
        Ok((phi, factors))
    }

    /// `(Â^{IC}, Â^C)`.
    pub fn treatment_heads(&self, g: &mut Graph, factors: &[NodeId; 3]) -> Result<(NodeId, NodeId), ModelError> {
        let ic = g.concat(&[factors[0], factors[1]])?;
        let ic = self.head_ic.apply(g, ic)?;
        let c = self.head_c.apply(g, factors[1])?;
        Ok((g.sigmoid(ic), g.sigmoid(c)))
    }

    /// Advances the history LSTMs on `(a_in, y_in)` and forecasts the next
    /// outcome from C, O, both histories, the current treatment and, in the
    /// decoder, the previous outcome.
    #[allow(clippy::too_many_arguments)]
    pub fn outcome(
        &self,
        g: &mut Graph,
        factors: &[NodeId; 3],
        state: &mut RecState,
        a_in: NodeId,
        y_in: NodeId,
        a_now: NodeId,
        y_prev: Option<NodeId>,
    ) -> Result<NodeId, ModelError> {
        let (ha, ca) = lstm_cell(g, a_in, state.a.0, state.a.1, &self.rnn_a)?;
        let (hy, cy) = lstm_cell(g, y_in, state.y.0, state.y.1, &self.rnn_y)?;
        state.a = (ha, ca);
        state.y = (hy, cy);
        let ha = g.dropout(ha, self.cfg.dropout);
        let hy = g.dropout(hy, self.cfg.dropout);
        let mut parts = vec![factors[1], factors[2], hy, ha, a_now];
        parts.extend(y_prev);
        let x = g.concat(&parts)?;
        let hidden = self.head_y[0].apply(g, x)?;
        let hidden = g.relu(hidden);
        self.head_y[1].apply(g, hidden)
    }

    /// Input-to-hidden gate matrices of the stream feeding factor `k`, and
    /// the factor network's two weight matrices.
    pub fn chain(&self, k: usize) -> ([NodeId; 4], [NodeId; 2]) {
        let s = &self.streams[self.cfg.stream_for_factor(k)];
        (s.input, [self.nets[k][0].w, self.nets[k][1].w])
    }
}

/// Encoder pass over every step of a batch.
#[derive(Clone, Debug)]
pub struct EncoderRun {
    /// One entry per step `0..steps`; step `t` forecasts the outcome at `t + 1`.
    pub steps: Vec<StepOut>,
    /// State after each step.
    pub states: Vec<RecState>,
}

impl EncoderRun {
    /// Bundles for the steps that have a next-step target (`steps - 1`).
    pub fn bundles(&self, g: &Graph) -> Vec<FactorBundle> {
        let n = self.steps.len().saturating_sub(1);
        self.steps[..n]
            .iter()
            .map(|s| FactorBundle {
                phi: s.phi.iter().map(|&p| g.value(p).clone()).collect(),
                i: g.value(s.factors[0]).clone(),
                c: g.value(s.factors[1]).clone(),
                o: g.value(s.factors[2]).clone(),
                a_ic: g.value(s.a_ic).clone(),
                a_c: g.value(s.a_c).clone(),
                y_hat: g.value(s.y_hat).clone(),
            })
            .collect()
    }
}

/// Runs the encoder. Step `t` reads `X_t`, the previous treatment `A_{t-1}`
/// (zero at `t = 0`), the outcome `Y_t`, and the current treatment `A_t`.
pub fn encoder_forward(g: &mut Graph, net: &Network, batch: &Batch) -> Result<EncoderRun, ModelError> {
    if net.block != Block::Encoder {
        return Err(ModelError::Config("encoder_forward needs encoder parameters".into()));
    }
    if batch.steps() < 2 {
        return Err(ModelError::Input(format!(
            "trajectories need at least 2 steps, got {}",
            batch.steps()
        )));
    }
    encode(g, net, batch)
}

/// Encoder states for histories of any length, including single steps.
pub fn encode(g: &mut Graph, net: &Network, batch: &Batch) -> Result<EncoderRun, ModelError> {
    if net.block != Block::Encoder {
        return Err(ModelError::Config("encoding needs encoder parameters".into()));
    }
    let rows = batch.rows();
    let mut state = net.zero_state(g, rows);
    let mut steps = Vec::with_capacity(batch.steps());
    let mut states = Vec::with_capacity(batch.steps());
    let mut a_prev = g.constant(Tensor::zeros(&[rows, 1]));
    for t in 0..batch.steps() {
        let x = g.constant(batch.covariates[t].clone());
        let inputs = vec![x; net.streams.len()];
        let (phi, factors) = net.factors(g, &inputs, &mut state)?;
        let (a_ic, a_c) = net.treatment_heads(g, &factors)?;
        let y_in = g.constant(batch.outcomes[t].clone());
        let a_now = g.constant(batch.treatments[t].clone());
        let y_hat = net.outcome(g, &factors, &mut state, a_prev, y_in, a_now, None)?;
        steps.push(StepOut {
            phi,
            factors,
            a_ic,
            a_c,
            y_hat,
        });
        states.push(state.clone());
        a_prev = a_now;
    }
    Ok(EncoderRun { steps, states })
}

/// Decoder starting point, copied out of an encoder run as constants.
#[derive(Clone, Debug, PartialEq)]
pub struct DecoderInit {
    /// Last encoder stream outputs (Φ at the cut), one per stream.
    pub phi: Vec<Tensor>,
    pub a: (Tensor, Tensor),
    pub y: (Tensor, Tensor),
    /// Outcome at the cut (normalised).
    pub last_outcome: Tensor,
}

impl DecoderInit {
    /// Rows `cuts[i] = (row, t)` of the encoder state after step `t`.
    pub fn from_run(g: &Graph, run: &EncoderRun, cuts: &[(usize, usize)], last_outcome: Tensor) -> Self {
        let pick = |node_at: &dyn Fn(usize) -> NodeId| -> Tensor {
            let cols = g.value(node_at(0)).cols();
            let mut values = Vec::with_capacity(cuts.len() * cols);
            for &(r, t) in cuts {
                values.extend_from_slice(g.value(node_at(t)).row_slice(r));
            }
            Tensor::matrix(cuts.len(), cols, values).expect("row selection")
        };
        let streams = run.states[0].streams.len();
        Self {
            phi: (0..streams).map(|k| pick(&|t| run.states[t].streams[k].0)).collect(),
            a: (pick(&|t| run.states[t].a.0), pick(&|t| run.states[t].a.1)),
            y: (pick(&|t| run.states[t].y.0), pick(&|t| run.states[t].y.1)),
            last_outcome,
        }
    }

    pub fn rows(&self) -> usize {
        self.last_outcome.rows()
    }

    /// Repeats every row `k` times (row-major: row 0 k times, then row 1...).
    pub fn repeat_rows(&self, k: usize) -> Self {
        let idx: Vec<usize> = (0..self.rows()).flat_map(|r| std::iter::repeat_n(r, k)).collect();
        let sel = |t: &Tensor| t.select_rows(&idx);
        Self {
            phi: self.phi.iter().map(sel).collect(),
            a: (sel(&self.a.0), sel(&self.a.1)),
            y: (sel(&self.y.0), sel(&self.y.1)),
            last_outcome: sel(&self.last_outcome),
        }
    }
}

/// How the decoder's outcome history is fed after the first step.
#[derive(Clone, Copy, Debug)]
pub enum DecoderMode<'a> {
    /// Observed outcomes, one `[n, 1]` tensor per step.
    TeacherForced(&'a [Tensor]),
    /// The decoder's own forecasts.
    Autoregressive,
}

/// Decoder rollout under `plan` (one `[n, 1]` tensor per step). Step `u`
/// consumes the previous stream output, the planned treatment and the
/// previous outcome, and forecasts the outcome one step later.
pub fn decoder_forward(
    g: &mut Graph,
    net: &Network,
    init: &DecoderInit,
    plan: &[Tensor],
    mode: DecoderMode<'_>,
) -> Result<Vec<StepOut>, ModelError> {
    if let DecoderMode::TeacherForced(obs) = mode {
        if obs.len() + 1 < plan.len() {
            return Err(ModelError::Input(format!(
                "teacher forcing needs {} observed outcomes, got {}",
                plan.len() - 1,
                obs.len()
            )));
        }
    }
    let mut plan_iter = plan.iter().cloned();
    rollout(g, net, init, plan.len(), mode, |_, _| plan_iter.next().expect("plan length checked"))
}

/// Forecast after a single exogenous treatment `first` (`[n, 1]`); later
/// treatments come from the model's own `Â^{IC}` head, binarised at
/// `threshold`. Returns the steps and the plan that was followed.
pub fn impulse_response_rollout(
    g: &mut Graph,
    net: &Network,
    init: &DecoderInit,
    first: Tensor,
    tau: usize,
    threshold: f64,
) -> Result<(Vec<StepOut>, Vec<Tensor>), ModelError> {
    let mut plan = Vec::with_capacity(tau);
    let steps = rollout(g, net, init, tau, DecoderMode::Autoregressive, |u, propensity| {
        let a = if u == 0 {
            first.clone()
        } else {
            propensity.map(|p| binarise(p, threshold))
        };
        plan.push(a.clone());
        a
    })?;
    Ok((steps, plan))
}

fn binarise(p: f64, threshold: f64) -> f64 {
    if threshold <= 0.0 {
        1.0
    } else if threshold >= 1.0 {
        0.0
    } else {
        f64::from(u8::from(p >= threshold))
    }
}

fn rollout(
    g: &mut Graph,
    net: &Network,
    init: &DecoderInit,
    tau: usize,
    mode: DecoderMode<'_>,
    mut treatment: impl FnMut(usize, &Tensor) -> Tensor,
) -> Result<Vec<StepOut>, ModelError> {
    if net.block != Block::Decoder {
        return Err(ModelError::Config("decoder rollout needs decoder parameters".into()));
    }
    if tau == 0 {
        return Err(ModelError::Input("decoder horizon must be positive".into()));
    }
    let rows = init.rows();
    let mut state = net.zero_state(g, rows);
    state.a = (g.constant(init.a.0.clone()), g.constant(init.a.1.clone()));
    state.y = (g.constant(init.y.0.clone()), g.constant(init.y.1.clone()));
    let mut inputs: Vec<NodeId> = init.phi.iter().map(|p| g.constant(p.clone())).collect();
    let mut y_prev = g.constant(init.last_outcome.clone());
    let mut out = Vec::with_capacity(tau);
    for u in 0..tau {
        let (phi, factors) = net.factors(g, &inputs, &mut state)?;
        let (a_ic, a_c) = net.treatment_heads(g, &factors)?;
        let a = treatment(u, g.value(a_ic));
        if a.shape() != [rows, 1] {
            return Err(ModelError::Input(format!(
                "plan step {u} has shape {:?}, expected [{rows}, 1]",
                a.shape()
            )));
        }
        let a_now = g.constant(a);
        let y_hat = net.outcome(g, &factors, &mut state, a_now, y_prev, a_now, Some(y_prev))?;
        y_prev = match mode {
            DecoderMode::TeacherForced(obs) if u + 1 < tau => g.constant(obs[u].clone()),
            _ => y_hat,
        };
        inputs = phi.clone();
        out.push(StepOut {
            phi,
            factors,
            a_ic,
            a_c,
            y_hat,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::super::{init_params, Architecture};
    use super::*;
    use crate::sim::{generate_dataset, SimConfig, Split, Trajectory};

    fn small_data() -> (Vec<Trajectory>, crate::sim::Normalization) {
        let cfg = SimConfig {
            n_patients: 12,
            max_len: 6,
            horizon: 2,
            seed: 3,
            ..SimConfig::default()
        };
        let ds = generate_dataset(&cfg).unwrap();
        let train: Vec<_> = ds.split(Split::Train).cloned().collect();
        (train, ds.meta.normalization)
    }

    fn zero(store: &mut ParamStore) {
        let ids: Vec<_> = store.iter().map(|(id, _, _)| id).collect();
        for id in ids {
            store.get_mut(id).values_mut().fill(0.0);
        }
    }

    fn small_cfg(arch: Architecture) -> ModelConfig {
        ModelConfig {
            repr_dim: 5,
            rnn_hidden: 4,
            fc_hidden: 6,
            factor_dim: 3,
            dropout: 0.0,
            architecture: arch,
        }
    }

    #[test]
    fn zero_params_give_half_probabilities_and_t_minus_one_bundles() {
        let (trajs, norm) = small_data();
        let refs: Vec<_> = trajs.iter().collect();
        let batch = Batch::new(&refs, &norm).unwrap();
        for arch in [Architecture::Dcrn, Architecture::HgT] {
            let cfg = small_cfg(arch);
            let mut store = init_params(&cfg, Block::Encoder, 8, 0).unwrap();
            zero(&mut store);
            let mut g = Graph::new();
            let net = Network::bind(&mut g, &cfg, &store).unwrap();
            let run = encoder_forward(&mut g, &net, &batch).unwrap();
            let bundles = run.bundles(&g);
            assert_eq!(bundles.len(), 5);
            for b in &bundles {
                assert!(b.a_ic.values().iter().all(|&p| p == 0.5));
                assert!(b.a_c.values().iter().all(|&p| p == 0.5));
            }
        }
    }

    #[test]
    fn patient_order_does_not_couple_rows() {
        let (trajs, norm) = small_data();
        let cfg = small_cfg(Architecture::Dcrn);
        let store = init_params(&cfg, Block::Encoder, 8, 4).unwrap();
        let forward = |order: &[usize]| {
            let refs: Vec<_> = order.iter().map(|&i| &trajs[i]).collect();
            let batch = Batch::new(&refs, &norm).unwrap();
            let mut g = Graph::new();
            let net = Network::bind(&mut g, &cfg, &store).unwrap();
            let run = encoder_forward(&mut g, &net, &batch).unwrap();
            run.bundles(&g)
        };
        let n = trajs.len();
        let order: Vec<usize> = (0..n).collect();
        let shuffled: Vec<usize> = (0..n).rev().collect();
        let (a, b) = (forward(&order), forward(&shuffled));
        for (x, y) in a.iter().zip(&b) {
            for r in 0..n {
                assert_eq!(x.y_hat.get(r, 0), y.y_hat.get(n - 1 - r, 0));
                assert_eq!(x.o.row_slice(r), y.o.row_slice(n - 1 - r));
            }
        }
    }

    #[test]
    fn too_short_trajectory_is_rejected() {
        let (trajs, norm) = small_data();
        let short = trajs[0].prefix(1);
        let batch = Batch::new(&[&short], &norm).unwrap();
        let cfg = small_cfg(Architecture::Dcrn);
        let store = init_params(&cfg, Block::Encoder, 8, 0).unwrap();
        let mut g = Graph::new();
        let net = Network::bind(&mut g, &cfg, &store).unwrap();
        assert!(encoder_forward(&mut g, &net, &batch).is_err());
    }

    #[test]
    fn hgt_factor_i_ignores_factor_c_stream() {
        let (trajs, norm) = small_data();
        let refs: Vec<_> = trajs.iter().collect();
        let batch = Batch::new(&refs, &norm).unwrap();
        let cfg = small_cfg(Architecture::HgT);
        let store = init_params(&cfg, Block::Encoder, 8, 2).unwrap();
        let mut perturbed = store.clone();
        let id = perturbed.id("rnn_c.w_g").unwrap();
        perturbed.get_mut(id).values_mut().iter_mut().for_each(|v| *v += 0.3);
        let id = perturbed.id("net_c.l1.w").unwrap();
        perturbed.get_mut(id).values_mut().iter_mut().for_each(|v| *v -= 0.2);
        let run = |s: &ParamStore| {
            let mut g = Graph::new();
            let net = Network::bind(&mut g, &cfg, s).unwrap();
            encoder_forward(&mut g, &net, &batch).unwrap().bundles(&g)
        };
        let (a, b) = (run(&store), run(&perturbed));
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.i, y.i);
            assert_eq!(x.o, y.o);
            assert_ne!(x.c, y.c);
        }
    }

    fn decoder_setup(arch: Architecture) -> (ModelConfig, ParamStore, DecoderInit) {
        let (trajs, norm) = small_data();
        let refs: Vec<_> = trajs.iter().collect();
        let batch = Batch::new(&refs, &norm).unwrap();
        let cfg = small_cfg(arch);
        let enc = init_params(&cfg, Block::Encoder, 8, 5).unwrap();
        let dec = init_params(&cfg, Block::Decoder, 8, 6).unwrap();
        let mut g = Graph::new();
        let net = Network::bind(&mut g, &cfg, &enc).unwrap();
        let run = encoder_forward(&mut g, &net, &batch).unwrap();
        let cuts = crate::model::CutBatch::training(&batch, 2);
        let init = DecoderInit::from_run(&g, &run, &cuts.cuts, cuts.last_outcome.clone());
        (cfg, dec, init)
    }

    fn decode(cfg: &ModelConfig, dec: &ParamStore, init: &DecoderInit, plan: &[Tensor], mode: DecoderMode<'_>) -> Vec<f64> {
        let mut g = Graph::new();
        let net = Network::bind(&mut g, cfg, dec).unwrap();
        let steps = decoder_forward(&mut g, &net, init, plan, mode).unwrap();
        steps.iter().flat_map(|s| g.value(s.y_hat).values().to_vec()).collect()
    }

    #[test]
    fn first_step_is_mode_independent() {
        let (cfg, dec, init) = decoder_setup(Architecture::Dcrn);
        let n = init.rows();
        let plan = vec![Tensor::filled(&[n, 1], 1.0)];
        let obs = vec![Tensor::filled(&[n, 1], 0.7)];
        let tf = decode(&cfg, &dec, &init, &plan, DecoderMode::TeacherForced(&obs));
        let ar = decode(&cfg, &dec, &init, &plan, DecoderMode::Autoregressive);
        assert_eq!(tf, ar);
    }

    #[test]
    fn rollout_is_causal_in_the_plan() {
        for arch in [Architecture::Dcrn, Architecture::HgT] {
            let (cfg, dec, init) = decoder_setup(arch);
            let n = init.rows();
            let base: Vec<Tensor> = (0..3).map(|_| Tensor::zeros(&[n, 1])).collect();
            let mut alt = base.clone();
            alt[2] = Tensor::filled(&[n, 1], 1.0);
            let a = decode(&cfg, &dec, &init, &base, DecoderMode::Autoregressive);
            let b = decode(&cfg, &dec, &init, &alt, DecoderMode::Autoregressive);
            assert_eq!(a[..2 * n], b[..2 * n]);
            assert_ne!(a[2 * n..], b[2 * n..]);
        }
    }

    #[test]
    fn impulse_response_thresholds() {
        let (cfg, dec, init) = decoder_setup(Architecture::Dcrn);
        let n = init.rows();
        for (threshold, expected) in [(0.0, 1.0), (1.0, 0.0)] {
            let mut g = Graph::new();
            let net = Network::bind(&mut g, &cfg, &dec).unwrap();
            let first = Tensor::filled(&[n, 1], 1.0 - expected);
            let (_, plan) = impulse_response_rollout(&mut g, &net, &init, first, 4, threshold).unwrap();
            assert!(plan[1..].iter().all(|a| a.values().iter().all(|&v| v == expected)));
        }
    }

    #[test]
    fn impulse_response_matches_decoder_under_its_own_plan() {
        let (cfg, dec, init) = decoder_setup(Architecture::Dcrn);
        let n = init.rows();
        let mut g = Graph::new();
        let net = Network::bind(&mut g, &cfg, &dec).unwrap();
        let (steps, plan) =
            impulse_response_rollout(&mut g, &net, &init, Tensor::filled(&[n, 1], 1.0), 4, 0.5).unwrap();
        let rolled: Vec<f64> = steps.iter().flat_map(|s| g.value(s.y_hat).values().to_vec()).collect();
        let replay = decode(&cfg, &dec, &init, &plan, DecoderMode::Autoregressive);
        assert_eq!(rolled, replay);
    }

    #[test]
    fn saturated_propensity_continues_treating() {
        let (cfg, mut dec, init) = decoder_setup(Architecture::Dcrn);
        let w = dec.id("head_ic.w").unwrap();
        dec.get_mut(w).values_mut().fill(0.0);
        let b = dec.id("head_ic.b").unwrap();
        dec.get_mut(b).values_mut()[0] = (0.9_f64 / 0.1).ln();
        let n = init.rows();
        let mut g = Graph::new();
        let net = Network::bind(&mut g, &cfg, &dec).unwrap();
        let (_, plan) = impulse_response_rollout(&mut g, &net, &init, Tensor::zeros(&[n, 1]), 5, 0.5).unwrap();
        assert!(plan[1..].iter().all(|a| a.values().iter().all(|&v| v == 1.0)));
    }
}
