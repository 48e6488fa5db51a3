//! Single-layer LSTM cell built from graph primitives.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{AutodiffError, Graph, NodeId, ParamStore, Tensor};

/// Gate order used for every per-gate array: input, forget, cell, output.
pub const GATES: [&str; 4] = ["i", "f", "g", "o"];

/// Node handles for one LSTM's weights inside a graph.
#[derive(Clone, Copy, Debug)]
pub struct LstmNodes {
    pub input: [NodeId; 4],
    pub recurrent: [NodeId; 4],
    pub bias: [NodeId; 4],
}

/// Parameter layout of one LSTM: `{prefix}.w_{gate}` is `in_dim x hidden`,
/// `{prefix}.u_{gate}` is `hidden x hidden`, `{prefix}.b_{gate}` is `1 x hidden`.
#[derive(Clone, Debug, PartialEq)]
pub struct Lstm {
    pub prefix: String,
    pub in_dim: usize,
    pub hidden: usize,
}

impl Lstm {
    pub fn new(prefix: impl Into<String>, in_dim: usize, hidden: usize) -> Self {
        Self {
            prefix: prefix.into(),
            in_dim,
            hidden,
        }
    }

    pub fn input_name(&self, gate: usize) -> String {
        format!("{}.w_{}", self.prefix, GATES[gate])
    }

    pub fn recurrent_name(&self, gate: usize) -> String {
        format!("{}.u_{}", self.prefix, GATES[gate])
    }

    pub fn bias_name(&self, gate: usize) -> String {
        format!("{}.b_{}", self.prefix, GATES[gate])
    }

    /// Uniform Glorot init for matrices; zero biases except forget = 1.
    pub fn init(&self, store: &mut ParamStore, rng: &mut ChaCha8Rng) {
        for gate in 0..4 {
            store.insert(self.input_name(gate), glorot(self.in_dim, self.hidden, rng));
            store.insert(self.recurrent_name(gate), glorot(self.hidden, self.hidden, rng));
            let b = if GATES[gate] == "f" { 1.0 } else { 0.0 };
            store.insert(self.bias_name(gate), Tensor::filled(&[1, self.hidden], b));
        }
    }

    pub fn nodes(&self, g: &mut Graph, store: &ParamStore) -> LstmNodes {
        let pick = |g: &mut Graph, f: &dyn Fn(usize) -> String| -> [NodeId; 4] {
            [0, 1, 2, 3].map(|i| g.param_named(store, &f(i)))
        };
        LstmNodes {
            input: pick(g, &|i| self.input_name(i)),
            recurrent: pick(g, &|i| self.recurrent_name(i)),
            bias: pick(g, &|i| self.bias_name(i)),
        }
    }

    /// Zero `(h, c)` for a batch of `rows`.
    pub fn zero_state(&self, g: &mut Graph, rows: usize) -> (NodeId, NodeId) {
        let h = g.constant(Tensor::zeros(&[rows, self.hidden]));
        let c = g.constant(Tensor::zeros(&[rows, self.hidden]));
        (h, c)
    }
}

/// One LSTM step: `i, f, o = sigmoid(..)`, `g = tanh(..)`,
/// `c' = f * c + i * g`, `h' = o * tanh(c')`.
pub fn lstm_cell(
    g: &mut Graph,
    x: NodeId,
    h: NodeId,
    c: NodeId,
    w: &LstmNodes,
) -> Result<(NodeId, NodeId), AutodiffError> {
    let mut gates = [x; 4];
    for k in 0..4 {
        let xi = g.matmul(x, w.input[k])?;
        let hu = g.matmul(h, w.recurrent[k])?;
        let pre = g.add(xi, hu)?;
        let pre = g.add_row(pre, w.bias[k])?;
        gates[k] = if k == 2 { g.tanh(pre) } else { g.sigmoid(pre) };
    }
    let [i, f, cand, o] = gates;
    let keep = g.mul(f, c)?;
    let write = g.mul(i, cand)?;
    let c_next = g.add(keep, write)?;
    let squashed = g.tanh(c_next);
    let h_next = g.mul(o, squashed)?;
    Ok((h_next, c_next))
}

pub fn glorot(fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let values = (0..fan_in * fan_out)
        .map(|_| rng.random_range(-limit..limit))
        .collect();
    Tensor::matrix(fan_in, fan_out, values).expect("glorot shape")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn zero_store(lstm: &Lstm) -> ParamStore {
        let mut store = ParamStore::new("t");
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        lstm.init(&mut store, &mut rng);
        let ids: Vec<_> = store.iter().map(|(id, _, _)| id).collect();
        for id in ids {
            for v in store.get_mut(id).values_mut() {
                *v = 0.0;
            }
        }
        store
    }

    #[test]
    fn zero_weights_give_zero_state() {
        let lstm = Lstm::new("l", 3, 4);
        let store = zero_store(&lstm);
        let mut g = Graph::new();
        let w = lstm.nodes(&mut g, &store);
        let x = g.constant(Tensor::matrix(2, 3, vec![0.3, -1.0, 2.0, 5.0, 0.1, -0.2]).unwrap());
        let (h, c) = lstm.zero_state(&mut g, 2);
        let (h2, c2) = lstm_cell(&mut g, x, h, c, &w).unwrap();
        assert!(g.value(h2).values().iter().all(|&v| v == 0.0));
        assert!(g.value(c2).values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn repeated_calls_are_bitwise_identical() {
        let lstm = Lstm::new("l", 2, 3);
        let mut store = ParamStore::new("t");
        lstm.init(&mut store, &mut ChaCha8Rng::seed_from_u64(9));
        let run = || {
            let mut g = Graph::new();
            let w = lstm.nodes(&mut g, &store);
            let x = g.constant(Tensor::row(vec![0.5, -0.25]));
            let (h, c) = lstm.zero_state(&mut g, 1);
            let (h, c) = lstm_cell(&mut g, x, h, c, &w).unwrap();
            let (h, _) = lstm_cell(&mut g, x, h, c, &w).unwrap();
            g.value(h).clone()
        };
        assert_eq!(run().values(), run().values());
    }
}
